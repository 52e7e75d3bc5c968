import json

import numpy as np
import pytest

from aedcost import experiment as E

FAST = dict(families=("gmm", "svm", "dnn"), gmm_m_grid=(1, 2), svm_kernels=("linear",),
            svm_c_grid=(1.0,), svm_t_grid=(100,), dnn_l_grid=(1,), dnn_h_grid=(5,), dnn_activations=("relu",),
            dnn_max_epochs=5, seed=4)


def _cfg(dirs, out, **kw):
    return E.ExperimentConfig(train_dir=dirs["train"], test_dir=dirs["test"], output_dir=out,
                              **{**FAST, **kw})


@pytest.fixture(scope="module")
def trained(synthetic_dirs, tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    return out, E.run_experiment(_cfg(synthetic_dirs, out))


def test_artifacts_written(trained):
    out, summary = trained
    for fam in ("gmm", "svm", "dnn"):
        assert (out / "models" / f"{fam}.json").exists()
        assert (out / "scores" / f"{fam}_test.csv").exists()
        assert (out / "det" / f"{fam}.csv").exists()
        assert (out / "det" / f"{fam}.svg").read_text().startswith("<svg")
        entry = summary["families"][fam]
        assert 0 <= entry["test_eer"] <= 100
        assert entry["ops"]["formula"]["total"] > 0
    assert (out / "cost_report.txt").exists() and (out / "cost_report.csv").exists()
    on_disk = json.loads((out / "summary.json").read_text())
    assert on_disk["families"].keys() == summary["families"].keys()
    assert {p["split"] for p in on_disk["eer_vs_ops"]} == {"validation", "test"}
    assert "fixed_point" in summary["families"]["gmm"]


def test_score_rows_trace_to_frames(trained):
    out, summary = trained
    scores, labels = E.read_scores(out / "scores" / "gmm_test.csv")
    assert scores.shape == labels.shape == (summary["n_test_frames"],)
    header = (out / "scores" / "gmm_test.csv").read_text().splitlines()[0]
    assert header.split(",") == list(E.SCORE_COLUMNS)


def test_same_seed_gives_identical_scores(trained, synthetic_dirs, tmp_path):
    out, _ = trained
    E.run_experiment(_cfg(synthetic_dirs, tmp_path))
    for fam in ("gmm", "svm", "dnn"):
        a = (out / "scores" / f"{fam}_test.csv").read_bytes()
        assert (tmp_path / "scores" / f"{fam}_test.csv").read_bytes() == a
    assert (tmp_path / "summary.json").read_text().replace(str(tmp_path), "") == \
        (out / "summary.json").read_text().replace(str(out), "")


def test_score_mode_trains_nothing(trained, synthetic_dirs, tmp_path, monkeypatch):
    out, summary = trained

    def boom(*a, **k):
        raise AssertionError("training ran in score mode")

    monkeypatch.setattr(E, "train_family", boom)
    monkeypatch.setattr(E, "prepare_training", boom)
    cfg = E.ExperimentConfig(test_dir=synthetic_dirs["test"], output_dir=tmp_path, mode="score",
                             model_dir=out / "models", families=("gmm", "dnn"))
    again = E.run_experiment(cfg)
    for fam in ("gmm", "dnn"):
        assert again["families"][fam]["test_eer"] == summary["families"][fam]["test_eer"]
        assert (tmp_path / "scores" / f"{fam}_test.csv").read_bytes() == \
            (out / "scores" / f"{fam}_test.csv").read_bytes()


def test_failure_leaves_error_json(synthetic_dirs, tmp_path):
    cfg = E.ExperimentConfig(test_dir=synthetic_dirs["test"], output_dir=tmp_path, mode="score",
                             model_dir=tmp_path / "missing", families=("svm",))
    with pytest.raises(E.ExperimentError) as exc:
        E.run_experiment(cfg)
    err = json.loads((tmp_path / "error.json").read_text())
    assert err["stage"] == "svm" == exc.value.stage
    assert err["type"] == "FileNotFoundError"


def test_model_file_round_trip(trained):
    out, _ = trained
    fam, model, stats, deltas = E.load_model_file(out / "models" / "dnn.json")
    assert fam == "dnn" and deltas and stats.mean.shape == (3 * E.BASE_DIM,)


def test_model_file_rejects_junk(tmp_path):
    (tmp_path / "m.json").write_text('{"family": "knn"}')
    with pytest.raises(E.ModelFileError):
        E.load_model_file(tmp_path / "m.json")


def test_config_from_ini(tmp_path):
    ini = tmp_path / "c.ini"
    ini.write_text("[data]\ntrain_dir = tr\n[experiment]\nseed = 9\nfamilies = gmm, rnn\n"
                   "[gmm]\nm_grid = 1, 4\n[svm]\nc_grid = 0.5, 2\n")
    cfg = E.ExperimentConfig.from_ini(ini, {"output_dir": "runs/x", "seed": "3"})
    assert cfg.train_dir == (tmp_path / "tr").resolve()
    assert cfg.output_dir == E.Path("runs/x")  # command-line paths stay cwd-relative
    assert (cfg.seed, cfg.families, cfg.gmm_m_grid, cfg.svm_c_grid) == (3, ("gmm", "rnn"), (1, 4), (0.5, 2.0))


@pytest.mark.parametrize("kw", [dict(mode="eval"), dict(families=("knn",)), dict(mode="score")])
def test_config_validation(kw):
    with pytest.raises(ValueError):
        E.ExperimentConfig(**kw)


def test_bundled_config_parses():
    from pathlib import Path
    cfg = E.ExperimentConfig.from_ini(Path(__file__).parents[1] / "configs" / "synthetic.ini")
    assert cfg.families == ("gmm", "svm", "dnn") and cfg.fixed_qformat == (4, 11)
