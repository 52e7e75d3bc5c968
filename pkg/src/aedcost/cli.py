"""Command-line entry point: ``aedcost <subcommand> ...``.

Training and ``run`` take an optional ``--config`` INI file; any flag given
on the command line overrides the matching config key.  Failures exit with a
category code (see ``EXIT_CODES``) and a one-line ``error[<category>]`` message
on stderr.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
import warnings
from dataclasses import fields
from pathlib import Path

import numpy as np
from sklearn.exceptions import ConvergenceWarning

from . import __version__
from .costmodel import (FAMILIES, ModelDescriptor, PlatformBudget, default_sweep, descriptor_of,
                        formula_ops, knn_capacity, max_model_size, ops_budget_per_frame,
                        parameter_count, verify_costs)
from .data import AnnotationError, LabeledFrameSet, TARGET_LABEL, build_frame_set, ingest
from .evaluation import SingleClassError, equal_error_rate, export_det, sweep_det
from .experiment import (ExperimentConfig, ExperimentError, ModelFileError, load_model_file, prepare_training,
                         read_scores, run_experiment, save_model_file, score_frames,
                         train_family, write_scores)
from .features import (InsufficientAudioError, WavFormatError, append_deltas, apply_normalization,
                       extract_features, read_wav, write_feature_csv)
from .gmm import GmmParameterError
from .neural import NetworkError, TrainingDivergedError
from .svm import SvmModelError

log = logging.getLogger("aedcost")

EXIT_CODES = {"usage": 2, "input": 3, "model": 4, "training": 5, "internal": 70}
_INPUT_ERRORS = (OSError, AnnotationError, WavFormatError, InsufficientAudioError,
                 SingleClassError)
_MODEL_ERRORS = (ModelFileError, GmmParameterError, SvmModelError, NetworkError)
_CONFIG_FIELDS = [f.name for f in fields(ExperimentConfig)]


def _category(exc: BaseException) -> str:
    """Exit category: bad input, bad model file, failed training or a bug."""
    if isinstance(exc, ExperimentError):
        return _category(exc.cause)
    if isinstance(exc, _MODEL_ERRORS):
        return "model"
    if isinstance(exc, (TrainingDivergedError, ArithmeticError)):
        return "training"
    if isinstance(exc, _INPUT_ERRORS + (ValueError, KeyError)):
        return "input"
    return "internal"


# ------------------------------------------------------------ config flags
def _flag(name: str) -> str:
    return "--" + name.replace("_", "-")


def _add_config_flags(p, skip=()):
    """One flag per experiment config key, all defaulting to 'not given'."""
    p.add_argument("--config", type=Path, help="INI file; flags override its values")
    for name in _CONFIG_FIELDS:
        if name not in skip:
            p.add_argument(_flag(name), dest=name, default=None, metavar="VALUE")


def _config_from_args(args) -> ExperimentConfig:
    overrides = {k: getattr(args, k, None) for k in _CONFIG_FIELDS}
    if args.config is not None:
        return ExperimentConfig.from_ini(args.config, overrides)
    return ExperimentConfig(**{k: ExperimentConfig.parse_value(k, v)
                               for k, v in overrides.items() if v is not None})


# ---------------------------------------------------------------- commands
def cmd_extract(args):
    inputs = [Path(p) for p in args.inputs]
    out = Path(args.out)
    if len(inputs) > 1:
        out.mkdir(parents=True, exist_ok=True)
    for path in inputs:
        feats = extract_features(read_wav(path))
        if not args.no_deltas:
            feats = append_deltas(feats)
        dest = out / f"{path.stem}.csv" if len(inputs) > 1 else out
        write_feature_csv(dest, feats)
        print(f"{path}: {feats.shape[0]} frames x {feats.shape[1]} features -> {dest}")


def _train(family):
    def run(args):
        cfg = _config_from_args(args)
        fit, val, stats, _ = prepare_training(cfg)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", ConvergenceWarning)
            model, selected, rows = train_family(family, cfg, fit, val)
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        save_model_file(out, family, model, stats, True)
        for r in rows:
            print(json.dumps({"config": r["config"], "validation_eer": r["validation_eer"],
                              "ops": r["ops"]}, sort_keys=True))
        print(json.dumps({"selected": selected, "descriptor": descriptor_of(model).label(),
                          "model": str(out)}, sort_keys=True))
    return run


def _frames_for_scoring(path: Path, deltas: bool, annotations: str, target_label: str):
    if path.is_dir():
        return build_frame_set(ingest(path, annotations), target_label, deltas)
    feats = extract_features(read_wav(path))
    if deltas:
        feats = append_deltas(feats)
    n = feats.shape[0]
    return LabeledFrameSet(feats, np.zeros(n, dtype=bool), np.full(n, path.stem, dtype=object),
                           np.arange(n))


def cmd_score(args):
    family, model, stats, deltas = load_model_file(args.model)
    frames = _frames_for_scoring(Path(args.input), deltas, args.annotations, args.target_label)
    frames = frames.with_features(apply_normalization(frames.features, stats))
    scores = score_frames(family, model, frames)
    write_scores(args.out, frames, scores)
    print(f"{len(frames)} frames scored with {descriptor_of(model).label()} -> {args.out}")


def cmd_det(args):
    scores, labels = read_scores(args.scores)
    curve = sweep_det(scores, labels)
    export_det(curve, args.out, args.format)
    print(f"{len(curve.thresholds)} operating points -> {args.out}")


def cmd_eer(args):
    scores, labels = read_scores(args.scores)
    res = equal_error_rate(sweep_det(scores, labels))
    if args.json:
        print(json.dumps({"eer_percent": res.eer_percent, "threshold": res.threshold}))
    else:
        print(f"EER {res.eer_percent:.4f}% at threshold {res.threshold:.6g}")


def _descriptor_from_args(args) -> ModelDescriptor | None:
    if getattr(args, "model", None):
        return descriptor_of(load_model_file(args.model)[1])
    if args.family is None:
        return None
    return ModelDescriptor(args.family, args.D, M=args.M, lam=args.lam, L=args.L, H=args.H,
                           d=args.d)


def _add_descriptor_flags(p, sized=True):
    p.add_argument("--family", choices=FAMILIES + (("knn",) if not sized else ()))
    p.add_argument("--D", type=int, default=54, help="feature dimension (default 54)")
    p.add_argument("--L", type=int)
    p.add_argument("--d", type=int, help="polynomial degree")
    if sized:
        p.add_argument("--M", type=int)
        p.add_argument("--lam", type=int, help="number of support vectors")
        p.add_argument("--H", type=int)
        p.add_argument("--model", type=Path, help="read the descriptor from a model file")


def cmd_cost(args):
    desc = _descriptor_from_args(args)
    if args.verify or desc is None:
        report = verify_costs(default_sweep() if desc is None else [desc], view=args.view)
        print(report.to_csv() if args.format == "csv" else report.to_text(), end="")
        if args.format == "text":
            print()
        return
    c = formula_ops(desc, args.view)
    row = {"model": desc.label(), **c.as_dict(), "total": c.total, "params": parameter_count(desc)}
    if args.format == "csv":
        w = csv.writer(sys.stdout, lineterminator="\n")
        w.writerow(row)
        w.writerow(row.values())
    else:
        width = max(len(k) for k in row)
        for k, v in row.items():
            print(f"{k:<{width}}  {v}")


def _budget_from_args(args) -> PlatformBudget:
    return PlatformBudget(args.clock_hz, args.load, args.frame_rate, args.memory_bytes,
                          args.memory_fraction, args.bytes_per_param)


def cmd_budget(args):
    budget = _budget_from_args(args)
    out = {"ops_per_frame": ops_budget_per_frame(budget)}
    cap = budget.param_capacity
    out["param_capacity"] = None if math.isinf(cap) else cap
    if args.family is not None:
        size, binding = max_model_size(budget, args.family, args.D, L=args.L, d=args.d)
        out.update({"family": args.family, "D": args.D, "max_size": size, "binding": binding})
        if args.family == "knn":
            ops_n, mem_n = knn_capacity(budget, args.D)
            out["knn_compute_bound"] = ops_n
            out["knn_memory_bound"] = None if math.isinf(mem_n) else mem_n
    if args.json:
        print(json.dumps(out, sort_keys=True))
    else:
        for k, v in out.items():
            print(f"{k:<18} {'unbounded' if v is None else v}")


def cmd_synth(args):
    from .data import make_synthetic_dataset

    dirs = make_synthetic_dataset(args.seed, args.out, (args.train_target, args.test_target),
                                  (args.train_world, args.test_world), args.duration)
    for split, d in dirs.items():
        print(f"{split}: {d}")


def cmd_run(args):
    cfg = _config_from_args(args)
    summary = run_experiment(cfg)
    for fam, entry in summary["families"].items():
        print(f"{fam:<4} test EER {entry['test_eer']:7.3f}%  ops {entry['ops']['formula']['total']:>9}"
              f"  {entry['ops']['descriptor']}")
    print(f"summary -> {cfg.output_dir / 'summary.json'}")


# ----------------------------------------------------------------- parser
def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="aedcost", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"aedcost {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("extract", help="WAV -> per-frame feature CSV")
    p.add_argument("inputs", nargs="+")
    p.add_argument("--out", required=True, help="CSV file, or a folder when several inputs")
    p.add_argument("--no-deltas", action="store_true", help="keep only the 18 base features")
    p.set_defaults(func=cmd_extract)

    for family in ("gmm", "svm", "dnn", "rnn"):
        p = sub.add_parser(f"train-{family}", help=f"grid-search and train a {family} model")
        _add_config_flags(p, skip={"seed", "test_dir", "output_dir", "families", "mode",
                                   "model_dir"})
        p.add_argument("--seed", required=True, type=int)
        p.add_argument("--out", required=True, help="model file to write")
        p.set_defaults(func=_train(family))

    p = sub.add_parser("score", help="score a WAV file or annotated dataset folder")
    p.add_argument("model", type=Path)
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--annotations", default="annotations.csv")
    p.add_argument("--target-label", default=TARGET_LABEL)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("det", help="DET curve from a score file")
    p.add_argument("scores", type=Path)
    p.add_argument("--out", required=True)
    p.add_argument("--format", choices=("csv", "svg"), help="default: from the file suffix")
    p.set_defaults(func=cmd_det)

    p = sub.add_parser("eer", help="equal error rate of a score file")
    p.add_argument("scores", type=Path)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_eer)

    p = sub.add_parser("cost", help="per-frame operation counts")
    _add_descriptor_flags(p)
    p.add_argument("--view", choices=("table", "executed"), default="table")
    p.add_argument("--format", choices=("text", "csv"), default="text")
    p.add_argument("--verify", action="store_true",
                   help="compare against instrumented kernels (default with no model)")
    p.set_defaults(func=cmd_cost)

    p = sub.add_parser("budget", help="platform budget and largest model that fits")
    p.add_argument("--clock-hz", type=float, required=True)
    p.add_argument("--load", type=float, default=1.0, help="share of the CPU available")
    p.add_argument("--frame-rate", type=float, default=62.5)
    p.add_argument("--memory-bytes", type=float, default=math.inf)
    p.add_argument("--memory-fraction", type=float, default=1.0)
    p.add_argument("--bytes-per-param", type=float, default=2.0)
    _add_descriptor_flags(p, sized=False)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_budget)

    p = sub.add_parser("synth", help="write the synthetic alarm/world dataset")
    p.add_argument("--seed", required=True, type=int)
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--train-target", type=int, default=24)
    p.add_argument("--train-world", type=int, default=24)
    p.add_argument("--test-target", type=int, default=12)
    p.add_argument("--test-world", type=int, default=12)
    p.add_argument("--duration", type=float, default=4.0, help="clip length in seconds")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("run", help="full experiment from a config file")
    _add_config_flags(p)
    p.set_defaults(func=cmd_run)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except Exception as exc:  # noqa: BLE001 - mapped to an exit category
        cat = _category(exc)
        print(f"error[{cat}]: {exc}", file=sys.stderr)
        log.debug("traceback", exc_info=True)
        return EXIT_CODES[cat]
    return 0


if __name__ == "__main__":
    sys.exit(main())
