import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture(scope="session")
def synthetic_dirs(tmp_path_factory):
    """One small synthetic dataset shared by the data, experiment and CLI tests."""
    from aedcost.data import make_synthetic_dataset

    root = tmp_path_factory.mktemp("synth")
    return make_synthetic_dataset(3, root, n_target=(6, 3), n_world=(6, 3), duration_s=2.0)
