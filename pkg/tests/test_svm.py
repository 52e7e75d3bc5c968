import json
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from sklearn.exceptions import ConvergenceWarning

from aedcost import svm as S


def kkt_violation(X, y, alpha, model, C):
    """Largest KKT violation of a dual solution."""
    f = model.kernel.gram(X, X) @ (alpha * y) + model.bias
    m = y * f
    worst = 0.0
    for a, mi in zip(alpha, m):
        if a <= S.SV_THRESHOLD:
            worst = max(worst, 1 - mi)
        elif a >= C - S.SV_THRESHOLD:
            worst = max(worst, mi - 1)
        else:
            worst = max(worst, abs(mi - 1))
    return worst


def _blobs(rng, n, gap=2.0, D=2):
    X = np.vstack([rng.normal(gap, 1.0, (n, D)), rng.normal(-gap, 1.0, (n, D))])
    return X, np.r_[np.ones(n), -np.ones(n)]


# ------------------------------------------------------------ kernels
def test_kernel_examples():
    assert S.kernel_eval(S.KernelSpec("rbf", gamma=0.3), [1.0, 2.0], [1.0, 2.0]) == 1.0
    assert S.kernel_eval(S.KernelSpec("linear"), [1.0, 0.0], [0.0, 5.0]) == 0.0
    assert S.kernel_eval(S.KernelSpec("polynomial", degree=3), [1.0, 1.0], [1.0, 1.0]) == 8.0


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000))
def test_kernel_ranges_and_gram(seed):
    rng = np.random.default_rng(seed)
    A, B = rng.normal(size=(4, 3)), rng.normal(size=(5, 3))
    rbf = S.KernelSpec("rbf", gamma=0.5).gram(A, B)
    sig = S.KernelSpec("sigmoid").gram(A, B)
    assert np.all((rbf > 0) & (rbf <= 1))
    assert np.all(np.abs(sig) < 1)
    for kind in S.KERNELS:
        spec = S.KernelSpec(kind)
        K = spec.gram(A, B)
        np.testing.assert_allclose(K[1, 2], S.kernel_eval(spec, A[1], B[2]), rtol=1e-12)


def test_kernel_spec_validation():
    with pytest.raises(S.SvmModelError):
        S.KernelSpec("cubic")
    with pytest.raises(S.SvmModelError):
        S.KernelSpec("polynomial", degree=0)
    with pytest.raises(S.SvmModelError):
        S.KernelSpec("rbf", gamma=0.0)


# ------------------------------------------------------------ scoring
def test_score_examples(rng):
    m = S.SvmModel([[1.0, 0.0, 0.0]], [1.0], 0.0)
    x = rng.normal(size=3)
    assert S.svm_score(x, m) == pytest.approx(x[0])
    zero = S.SvmModel(rng.normal(size=(3, 3)), [0.0, 0.0, 0.0], 0.3)
    np.testing.assert_allclose(S.svm_score(rng.normal(size=(4, 3)), zero), 0.3)


@pytest.mark.parametrize("kind", S.KERNELS)
def test_score_matches_term_by_term(rng, kind):
    spec = S.KernelSpec(kind, degree=2, gamma=0.2)
    sv, c = rng.normal(size=(5, 4)) * 0.5, rng.normal(size=5)
    m = S.SvmModel(sv, c, -0.4, spec)
    x = rng.normal(size=4) * 0.5
    oracle = sum(ci * S.kernel_eval(spec, x, s) for ci, s in zip(c, sv)) - 0.4
    assert S.svm_score(x, m) == pytest.approx(oracle, rel=1e-12, abs=1e-12)


def test_classify_signs(rng):
    m = S.SvmModel([[1.0, 0.0]], [1.0], 0.0)
    assert S.svm_classify([2.0, 9.0], m) == 1
    assert S.svm_classify([-2.0, 9.0], m) == -1
    assert S.svm_classify([0.0, 9.0], m) == 1  # tie goes to +1
    assert S.svm_classify([0.0, 0.0], S.SvmModel([[1.0, 0.0]], [0.0], 0.3)) == 1


def test_scaling_is_linear(rng):
    m = S.SvmModel(rng.normal(size=(6, 3)), rng.normal(size=6), 0.2, S.KernelSpec("rbf", gamma=0.1))
    X = rng.normal(size=(10, 3))
    np.testing.assert_allclose(S.svm_score(X, m.scaled(2.0)), 2 * S.svm_score(X, m), rtol=1e-12)
    np.testing.assert_array_equal(S.svm_classify(X, m.scaled(2.0)), S.svm_classify(X, m))


# --------------------------------------------------------- downsampling
def test_downsample(rng):
    t, w = rng.normal(size=(30, 2)), rng.normal(size=(40, 2))
    X, y = S.downsample_training(t, w, 30, 0)
    assert X.shape == (60, 2) and (y == 1).sum() == 30
    assert {tuple(r) for r in X[:30]} == {tuple(r) for r in t}
    X1, _ = S.downsample_training(rng.normal(size=(3000, 2)), rng.normal(size=(3000, 2)), 500, 4)
    assert X1.shape == (1000, 2)
    a, _ = S.downsample_training(t, w, 10, 9)
    b, _ = S.downsample_training(t, w, 10, 9)
    np.testing.assert_array_equal(a, b)
    assert len({tuple(r) for r in a[:10]}) == 10
    with pytest.raises(S.SvmModelError):
        S.downsample_training(t, w, 31, 0)


# ------------------------------------------------------------ training
def test_two_point_analytic():
    m, alpha = S.smo_train([[-1.0], [1.0]], [-1, 1], S.TrainConfig(C=100.0), return_alpha=True)
    w = float(m.coeffs @ m.support_vectors[:, 0])
    assert w == pytest.approx(1.0, abs=1e-3)
    assert m.bias == pytest.approx(0.0, abs=1e-3)
    np.testing.assert_allclose(alpha, 0.5, atol=1e-3)
    np.testing.assert_allclose(S.svm_score([[0.3], [-2.0]], m), [0.3, -2.0], atol=1e-3)
    flipped = S.smo_train([[-1.0], [1.0]], [1, -1], S.TrainConfig(C=100.0))
    np.testing.assert_allclose(S.svm_score([[0.3], [-2.0]], flipped), [-0.3, 2.0], atol=1e-3)


@pytest.mark.parametrize("seed", range(50))
def test_kkt_on_random_instances(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(4, 30))
    X, y = _blobs(rng, n, gap=rng.uniform(0, 2), D=int(rng.integers(1, 4)))
    kind = S.KERNELS[seed % 4]
    spec = S.KernelSpec(kind, degree=2, gamma=0.5)
    C = float(rng.choice([0.1, 1.0, 10.0]))
    with warnings.catch_warnings():
        warnings.simplefilter("error", ConvergenceWarning)
        m, alpha = S.smo_train(X, y, S.TrainConfig(C=C), spec, return_alpha=True)
    assert np.all((alpha >= 0) & (alpha <= C))
    assert kkt_violation(X, y, alpha, m, C) <= 1e-3
    assert abs(alpha @ y) < 1e-6
    assert m.n_support == np.count_nonzero(alpha > S.SV_THRESHOLD) <= 2 * n
    assert np.all(np.abs(m.coeffs) <= C + 1e-12)


def test_separable_max_margin(rng):
    X, y = _blobs(rng, 10, gap=3.0)
    m = S.smo_train(X, y, S.TrainConfig(C=1e4))
    assert np.all(np.sign(S.svm_score(X, m)) == y)
    w = m.coeffs @ m.support_vectors
    svm_margin = np.min(y * S.svm_score(X, m)) / np.linalg.norm(w)
    best = 0.0
    for th in np.linspace(0, np.pi, 3600, endpoint=False):
        d = np.array([np.cos(th), np.sin(th)])
        p = X @ d
        for s in (1, -1):
            best = max(best, (np.min(s * p[y > 0]) - np.max(s * p[y < 0])) / 2)
    assert svm_margin >= best - 1e-3


def test_duplicated_points_same_decision(rng):
    X, y = _blobs(rng, 8, gap=3.0)
    a = S.smo_train(X, y, S.TrainConfig(C=1e4))
    b = S.smo_train(np.vstack([X, X]), np.r_[y, y], S.TrainConfig(C=1e4))
    grid = rng.normal(size=(50, 2)) * 3
    np.testing.assert_allclose(S.svm_score(grid, a), S.svm_score(grid, b), atol=1e-2)


def test_single_class_rejected():
    with pytest.raises(S.SvmModelError):
        S.smo_train([[0.0], [1.0]], [1, 1])


def test_non_convergence_warns(rng):
    X, y = _blobs(rng, 40, gap=0.2)
    with pytest.warns(ConvergenceWarning):
        m = S.smo_train(X, y, S.TrainConfig(C=10.0), S.KernelSpec("rbf", gamma=5.0), max_passes=0)
    assert not m.converged


# ---------------------------------------------------------- selection
def test_select_svm_grid(rng):
    Xt, Xw = rng.normal(1.5, 1, (80, 2)), rng.normal(-1.5, 1, (80, 2))
    val = np.vstack([rng.normal(1.5, 1, (30, 2)), rng.normal(-1.5, 1, (30, 2))])
    lab = np.r_[np.ones(30), np.zeros(30)].astype(bool)
    grid = [S.KernelSpec("linear"), S.KernelSpec("rbf", gamma=0.05)]
    counts = {}
    best, cell, table = S.select_svm(Xt, Xw, val, lab, grid, (0.1, 1.0), (20, 500), 0,
                                     support_counts=counts)
    assert len(table) == 4  # T=500 exceeds the pools
    assert table[cell] == min(table.values())
    assert counts[cell] == best.n_support
    one, cell1, t1 = S.select_svm(Xt, Xw, val, lab, [S.KernelSpec("linear")], (1.0,), (20,), 0)
    assert cell1 == (S.KernelSpec("linear"), 1.0, 20) and len(t1) == 1


# ------------------------------------------------------ serialisation
def test_json_round_trip(tmp_path, rng):
    m = S.SvmModel(rng.normal(size=(4, 3)), rng.normal(size=4), 0.7, S.KernelSpec("polynomial", 2))
    m.save(tmp_path / "s.json")
    doc = json.loads((tmp_path / "s.json").read_text())
    assert doc["n_support"] == 4 and doc["D"] == 3 and doc["kernel"]["kind"] == "polynomial"
    back = S.SvmModel.load(tmp_path / "s.json")
    X = rng.normal(size=(3, 3))
    np.testing.assert_array_equal(S.svm_score(X, back), S.svm_score(X, m))
    doc["n_support"] = 5
    with pytest.raises(S.SvmModelError):
        S.SvmModel.from_dict(doc)


def test_classifier_estimator(rng):
    X, y = _blobs(rng, 50)
    clf = S.SMOClassifier(kernel="linear", C=1.0, samples_per_class=30).fit(X, y > 0)
    assert (clf.predict(X) == (y > 0)).mean() > 0.95
