"""End-to-end experiment: ingest, train with grid search, score, evaluate, cost.

Configuration is an INI file (see ``configs/synthetic.ini``).  Every artifact
is written under ``output_dir``; a failing stage leaves whatever was already
written plus ``error.json``.
"""
from __future__ import annotations

import configparser
import csv
import json
import logging
import traceback
import warnings
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np
from sklearn.exceptions import ConvergenceWarning

from . import gmm as _gmm
from . import neural as _nn
from . import svm as _svm
from .costmodel import ModelDescriptor, descriptor_of, formula_ops, instrumented_score, verify_costs
from .data import LabeledFrameSet, build_frame_set, ingest, split_by_clip
from .evaluation import equal_error_rate, export_det, sweep_det
from .features import N_MFCC, NormalizationStats, apply_normalization, fit_normalization
from .fixedpoint import FIXED_FAMILIES, QFormat, compare_float_fixed

log = logging.getLogger(__name__)
FAMILY_NAMES = ("gmm", "svm", "dnn", "rnn")
MODEL_FORMAT_VERSION = 1
BASE_DIM = N_MFCC + 5
SCORE_COLUMNS = ("clip", "frame", "label", "score")


class ExperimentError(RuntimeError):
    """A stage of :func:`run_experiment` failed; ``stage`` names it."""

    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"{stage} failed: {type(cause).__name__}: {cause}")
        self.stage = stage
        self.cause = cause


class ModelFileError(ValueError):
    """A model file is unreadable, of an unknown version or of the wrong family."""


def _ints(s):
    return tuple(int(v) for v in str(s).replace(" ", "").split(",") if v)


def _floats(s):
    return tuple(float(v) for v in str(s).replace(" ", "").split(",") if v)


def _strs(s):
    return tuple(v for v in str(s).replace(" ", "").split(",") if v)


@dataclass
class ExperimentConfig:
    train_dir: Path | None = None
    test_dir: Path | None = None
    output_dir: Path | None = None
    annotations: str = "annotations.csv"
    target_label: str = "alarm"
    seed: int = 0
    families: tuple = ("gmm", "svm", "dnn")
    mode: str = "train"
    model_dir: Path | None = None
    validation_fraction: float = 0.2
    fixed_qformat: tuple = (4, 11)
    gmm_m_grid: tuple = (1, 2, 4, 8, 16)
    svm_kernels: tuple = ("linear", "rbf")
    svm_c_grid: tuple = (0.1, 1.0, 10.0)
    svm_t_grid: tuple = (500,)
    svm_gamma_grid: tuple = (0.01,)
    svm_degree_grid: tuple = (3,)
    dnn_l_grid: tuple = (1, 2)
    dnn_h_grid: tuple = (10, 25, 50)
    dnn_activations: tuple = ("sigmoid", "relu")
    dnn_max_epochs: int = 100
    dnn_patience: int = 20
    dnn_dropout: float = 0.2
    rnn_l_grid: tuple = (1,)
    rnn_h_grid: tuple = (10, 25)
    rnn_lr: float = 0.001
    rnn_decay_iters: int = 1000
    rnn_max_epochs: int = 50

    # INI section/key for every field; lists are comma separated
    _SECTIONS = {
        "data": ("train_dir", "test_dir", "annotations", "target_label"),
        "experiment": ("output_dir", "seed", "families", "mode", "model_dir",
                       "validation_fraction", "fixed_qformat"),
        "gmm": ("gmm_m_grid",),
        "svm": ("svm_kernels", "svm_c_grid", "svm_t_grid", "svm_gamma_grid", "svm_degree_grid"),
        "dnn": ("dnn_l_grid", "dnn_h_grid", "dnn_activations", "dnn_max_epochs", "dnn_patience",
                "dnn_dropout"),
        "rnn": ("rnn_l_grid", "rnn_h_grid", "rnn_lr", "rnn_decay_iters", "rnn_max_epochs"),
    }

    def __post_init__(self):
        for name in ("train_dir", "test_dir", "output_dir", "model_dir"):
            v = getattr(self, name)
            if v is not None and not isinstance(v, Path):
                setattr(self, name, Path(v))
        if self.mode not in ("train", "score"):
            raise ValueError("mode must be 'train' or 'score'")
        unknown = set(self.families) - set(FAMILY_NAMES)
        if unknown:
            raise ValueError(f"unknown families {sorted(unknown)}; choose from {FAMILY_NAMES}")
        if self.mode == "score" and self.model_dir is None:
            raise ValueError("score mode needs model_dir")

    @staticmethod
    def parse_value(name, raw):
        default = {f.name: f.default for f in fields(ExperimentConfig)}[name]
        if name in ("train_dir", "test_dir", "output_dir", "model_dir"):
            return Path(raw) if raw else None
        if isinstance(default, tuple):
            if name in ("families", "svm_kernels", "dnn_activations"):
                return _strs(raw)
            if name in ("svm_c_grid", "svm_gamma_grid"):
                return _floats(raw)
            return _ints(raw)
        if isinstance(default, bool):
            return str(raw).lower() in ("1", "true", "yes")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        return str(raw)

    @classmethod
    def from_ini(cls, path, overrides: dict | None = None) -> "ExperimentConfig":
        """Read an INI file; relative paths in it resolve against the file's folder."""
        path = Path(path)
        cp = configparser.ConfigParser()
        if not cp.read(path):
            raise FileNotFoundError(f"config file {path} not found")
        values = {}
        for section, keys in cls._SECTIONS.items():
            if not cp.has_section(section):
                continue
            for key in keys:
                short = key.split("_", 1)[1] if key.startswith(section + "_") else key
                if cp.has_option(section, short):
                    values[key] = cls.parse_value(key, cp.get(section, short))
        for k in ("train_dir", "test_dir", "output_dir", "model_dir"):
            if values.get(k) is not None and not values[k].is_absolute():
                values[k] = (path.parent / values[k]).resolve()
        # overrides come from the command line, so their paths stay relative to the cwd
        for k, v in (overrides or {}).items():
            if v is not None:
                values[k] = cls.parse_value(k, v) if isinstance(v, str) else v
        return cls(**values)

    def require(self, *names):
        missing = [n for n in names if getattr(self, n) is None]
        if missing:
            raise ValueError(f"config is missing {', '.join(missing)}")

    def to_dict(self) -> dict:
        d = asdict(self)
        return {k: (str(v) if isinstance(v, Path) else list(v) if isinstance(v, tuple) else v)
                for k, v in d.items()}


# --------------------------------------------------------------- model files
def save_model_file(path, family: str, model, stats: NormalizationStats, deltas: bool):
    doc = {
        "format_version": MODEL_FORMAT_VERSION,
        "family": family,
        "deltas": deltas,
        "normalization": stats.to_dict(),
        "model": model.to_dict(),
    }
    Path(path).write_text(json.dumps(doc))


def load_model_file(path):
    """Returns ``(family, model, normalization, deltas)``."""
    doc = json.loads(Path(path).read_text())
    if doc.get("format_version") != MODEL_FORMAT_VERSION:
        raise ModelFileError(f"{path}: unsupported model file version {doc.get('format_version')}")
    kind = doc["model"].get("kind")
    loader = {"gmm-pair": _gmm.GmmScorerPair, "svm": _svm.SvmModel, "network": _nn.NetworkParams}
    if kind not in loader:
        raise ModelFileError(f"{path}: unknown model kind {kind!r}")
    model = loader[kind].from_dict(doc["model"])
    return doc["family"], model, NormalizationStats.from_dict(doc["normalization"]), doc["deltas"]


# --------------------------------------------------------------- training
def _sequences(frames: LabeledFrameSet):
    seqs = frames.sequences()
    return [s[:, :BASE_DIM] for s, _ in seqs], [y.astype(np.float64) for _, y in seqs]


def score_frames(family, model, frames: LabeledFrameSet) -> np.ndarray:
    if family == "gmm":
        return _gmm.llr_score(frames.features, model)
    if family == "svm":
        return _svm.svm_score(frames.features, model)
    if family == "dnn":
        return _nn.dnn_forward(frames.features, model)
    out = np.empty(len(frames))
    for c in frames.clips():
        m = frames.clip_ids == c
        out[m] = _nn.rnn_forward(frames.features[m][:, :BASE_DIM], model)
    return out


def _svm_kernels(cfg):
    kernels = []
    for k in cfg.svm_kernels:
        if k == "rbf":
            kernels += [_svm.KernelSpec("rbf", gamma=g) for g in cfg.svm_gamma_grid]
        elif k == "polynomial":
            kernels += [_svm.KernelSpec("polynomial", degree=d) for d in cfg.svm_degree_grid]
        else:
            kernels.append(_svm.KernelSpec(k))
    return kernels


def train_family(family, cfg: ExperimentConfig, fit: LabeledFrameSet, val: LabeledFrameSet):
    """Grid search one family; returns ``(model, selected, grid_rows)``.

    Each grid row carries the validation EER and the closed-form per-frame
    operation count of that cell's model.
    """
    X, y = fit.features, fit.labels
    Xv, yv = val.features, val.labels
    D = X.shape[1]
    seed = cfg.seed
    rows = []
    if family == "gmm":
        best, table = _gmm.select_gmm(X[y], X[~y], Xv, yv, cfg.gmm_m_grid, seed)
        for M, eer in table.items():
            rows.append({"config": {"M": M}, "validation_eer": eer,
                         "ops": formula_ops(ModelDescriptor("gmm", D, M=M)).total})
        return best, {"M": best.target.M}, rows
    if family == "svm":
        lambdas = {}
        best, (spec, C, T), table = _svm.select_svm(X[y], X[~y], Xv, yv, _svm_kernels(cfg),
                                                    cfg.svm_c_grid, cfg.svm_t_grid, seed,
                                                    support_counts=lambdas)
        for cell, eer in table.items():
            k, c, t = cell
            rows.append({"config": {**k.to_dict(), "C": c, "T": t, "lambda": lambdas[cell]},
                         "validation_eer": eer,
                         "ops": formula_ops(_svm_descriptor(k, D, lambdas[cell])).total})
        return best, {**spec.to_dict(), "C": C, "T": T, "lambda": best.n_support}, rows
    if family == "dnn":
        spec = _nn.TrainSpecDnn(dropout=cfg.dnn_dropout, patience=cfg.dnn_patience,
                                max_epochs=cfg.dnn_max_epochs)
        grid = {"L": cfg.dnn_l_grid, "H": cfg.dnn_h_grid, "activation": cfg.dnn_activations}
        best, table = _nn.select_network(X, y.astype(np.float64), Xv, yv.astype(np.float64),
                                         grid, spec, seed)
        for (L, H, act), eer in table.items():
            desc = ModelDescriptor(f"dnn-{act}", D, L=L, H=H)
            rows.append({"config": {"L": L, "H": H, "activation": act}, "validation_eer": eer,
                         "ops": formula_ops(desc).total})
        return best, {"L": best.L, "H": best.H, "activation": best.activation}, rows
    seqs, labs = _sequences(fit)
    vseqs, vlabs = _sequences(val)
    spec = _nn.TrainSpecRnn(lr=cfg.rnn_lr, decay_iters=cfg.rnn_decay_iters,
                            max_epochs=cfg.rnn_max_epochs)
    best, table = _nn.select_rnn(seqs, labs, vseqs, vlabs,
                                 {"L": cfg.rnn_l_grid, "H": cfg.rnn_h_grid}, spec, seed)
    for (L, H), eer in table.items():
        rows.append({"config": {"L": L, "H": H}, "validation_eer": eer,
                     "ops": formula_ops(ModelDescriptor("rnn-tanh", BASE_DIM, L=L, H=H)).total})
    return best, {"L": best.L, "H": best.H}, rows


def _svm_descriptor(spec, D, lam):
    fam = {"linear": "svm-linear", "polynomial": "svm-poly", "rbf": "svm-rbf",
           "sigmoid": "svm-sigmoid"}[spec.kind]
    return ModelDescriptor(fam, D, lam=lam, d=spec.degree if spec.kind == "polynomial" else None)


def write_scores(path, frames: LabeledFrameSet, scores):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SCORE_COLUMNS)
        for c, i, lab, s in zip(frames.clip_ids, frames.frame_index, frames.labels, scores):
            w.writerow([c, int(i), int(lab), repr(float(s))])


def read_scores(path) -> tuple[np.ndarray, np.ndarray]:
    """``(scores, labels)`` from a score file written by :func:`write_scores`."""
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows or "score" not in rows[0] or "label" not in rows[0]:
        raise ValueError(f"{path}: expected a CSV with 'label' and 'score' columns")
    scores = np.array([float(r["score"]) for r in rows])
    labels = np.array([int(r["label"]) for r in rows], dtype=bool)
    return scores, labels


def prepare_training(cfg: ExperimentConfig):
    """Ingest ``train_dir``, split by clip and normalise: ``(fit, val, stats, n_clips)``."""
    cfg.require("train_dir")
    train = build_frame_set(ingest(cfg.train_dir, cfg.annotations), cfg.target_label)
    fit_raw, val_raw = split_by_clip(train, cfg.validation_fraction, cfg.seed)
    stats = fit_normalization(fit_raw.features)
    fit = fit_raw.with_features(apply_normalization(fit_raw.features, stats))
    val = val_raw.with_features(apply_normalization(val_raw.features, stats))
    return fit, val, stats, len(train.clips())


def _probe(family, frames):
    if family == "rnn":
        return frames.features[: min(len(frames), 4), :BASE_DIM]
    return frames.features[:1]


def _cost_entry(family, model, frames):
    desc = descriptor_of(model)
    _, counted = instrumented_score(_probe(family, frames), model)
    return {
        "descriptor": desc.label(),
        "formula": formula_ops(desc).as_dict(),
        "formula_executed": formula_ops(desc, "executed").as_dict(),
        "instrumented": counted.as_dict(),
        "match": formula_ops(desc) == counted,
    }


class _Stage:
    def __init__(self, name, state):
        self.name = name
        self.state = state

    def __enter__(self):
        self.state["stage"] = self.name
        log.info("stage: %s", self.name)

    def __exit__(self, *exc):
        return False


def run_experiment(cfg: ExperimentConfig) -> dict:
    """Run every configured family and return the summary written to ``summary.json``."""
    cfg.require("test_dir", "output_dir")
    out = cfg.output_dir
    for sub in ("models", "scores", "det"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    err_path = out / "error.json"
    if err_path.exists():
        err_path.unlink()
    state = {"stage": "setup"}
    try:
        return _run(cfg, state)
    except Exception as exc:
        err = {"stage": state["stage"], "type": type(exc).__name__, "message": str(exc),
               "traceback": traceback.format_exc()}
        err_path.write_text(json.dumps(err, indent=2))
        raise ExperimentError(state["stage"], exc) from exc


def _run(cfg: ExperimentConfig, state) -> dict:
    out = cfg.output_dir
    with _Stage("ingest", state):
        test = build_frame_set(ingest(cfg.test_dir, cfg.annotations), cfg.target_label)
        if cfg.mode == "train":
            fit, val, stats, n_clips = prepare_training(cfg)
    summary = {"mode": cfg.mode, "seed": cfg.seed, "target_label": cfg.target_label,
               "n_test_frames": len(test), "families": {}, "eer_vs_ops": []}
    if cfg.mode == "train":
        summary["n_fit_frames"] = len(fit)
        summary["n_validation_frames"] = len(val)
        summary["n_train_clips"] = n_clips
    models = {}
    for family in cfg.families:
        with _Stage(family, state):
            entry = {}
            if cfg.mode == "train":
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore", ConvergenceWarning)
                    model, selected, rows = train_family(family, cfg, fit, val)
                fam_stats = stats
                entry["selected"] = selected
                entry["grid"] = rows
                entry["validation_eer"] = min(r["validation_eer"] for r in rows)
                save_model_file(out / "models" / f"{family}.json", family, model, stats, True)
            else:
                fam, model, fam_stats, _ = load_model_file(cfg.model_dir / f"{family}.json")
                if fam != family:
                    raise ModelFileError(f"{family}.json holds a {fam} model")
            te = test.with_features(apply_normalization(test.features, fam_stats))
            scores = score_frames(family, model, te)
            write_scores(out / "scores" / f"{family}_test.csv", te, scores)
            curve = sweep_det(scores, te.labels)
            export_det(curve, out / "det" / f"{family}.csv")
            export_det(curve, out / "det" / f"{family}.svg")
            entry["test_eer"] = equal_error_rate(curve).eer_percent
            entry["ops"] = _cost_entry(family, model, te)
            desc = descriptor_of(model)
            if desc.family in FIXED_FAMILIES:
                cmp = compare_float_fixed(te.features, te.labels, model, QFormat(*cfg.fixed_qformat))
                entry["fixed_point"] = cmp.as_dict()
            summary["families"][family] = entry
            models[family] = model
            for r in entry.get("grid", []):
                summary["eer_vs_ops"].append({"family": family, "config": r["config"], "ops": r["ops"],
                                        "eer": r["validation_eer"], "split": "validation"})
            summary["eer_vs_ops"].append({"family": family, "config": entry.get("selected"),
                                    "ops": entry["ops"]["formula"]["total"],
                                    "eer": entry["test_eer"], "split": "test"})
    with _Stage("cost-report", state):
        report = verify_costs([descriptor_of(m) for m in models.values()])
        (out / "cost_report.txt").write_text(report.to_text() + "\n")
        (out / "cost_report.csv").write_text(report.to_csv())
    summary["config"] = cfg.to_dict()
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True, default=_jsonable))
    return summary


def _jsonable(v):
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (np.floating,)):
        return float(v)
    if isinstance(v, np.bool_):
        return bool(v)
    raise TypeError(f"cannot serialise {type(v).__name__}")

