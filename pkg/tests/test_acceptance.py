"""Acceptance suite: one PASS/FAIL line per primary criterion.

Run with ``pytest tests/test_acceptance.py -v -s`` (or as a script).  The
end-to-end criterion builds the full default synthetic dataset and runs the
bundled configuration twice, so this module takes about a minute.
"""
import contextlib
import json
import sys
import time
import warnings
from pathlib import Path

import numpy as np
import pytest
from sklearn.exceptions import ConvergenceWarning

from aedcost import costmodel as C
from aedcost import gmm as G
from aedcost import neural as N
from aedcost import svm as S
from aedcost.data import build_frame_set, ingest, make_synthetic_dataset
from aedcost.evaluation import eer_from_scores, equal_error_rate, sweep_det
from aedcost.experiment import ExperimentConfig, load_model_file, run_experiment
from aedcost.features import apply_normalization
from aedcost.fixedpoint import FIXED_FAMILIES, QFormat, compare_float_fixed

CONFIG = Path(__file__).parents[1] / "configs" / "synthetic.ini"


@pytest.fixture
def verdict(capsys):
    """Print ``PASS name`` or ``FAIL name: reason`` around the criterion body."""

    @contextlib.contextmanager
    def check(name):
        try:
            yield
        except AssertionError as exc:
            with capsys.disabled():
                first = str(exc).strip().splitlines()[0] if str(exc).strip() else "assertion failed"
                print(f"\nFAIL {name}: {first}")
            raise
        with capsys.disabled():
            print(f"\nPASS {name}")

    return check


# ----------------------------------------------------------------- oracles
def brute_force_ll(x, p):
    total = 0.0
    for w, mu, var in zip(p.weights, p.means, p.variances):
        total += w * np.prod(np.exp(-((x - mu) ** 2) / (2 * var)) / np.sqrt(2 * np.pi * var))
    return float(np.log(total))


def kkt_violation(X, y, alpha, model, C_):
    f = model.kernel.gram(X, X) @ (alpha * y) + model.bias
    m = y * f
    free = (alpha > S.SV_THRESHOLD) & (alpha < C_ - S.SV_THRESHOLD)
    low = alpha <= S.SV_THRESHOLD
    high = alpha >= C_ - S.SV_THRESHOLD
    v = np.concatenate([1 - m[low], m[high] - 1, np.abs(m[free] - 1), [0.0]])
    return float(v.max())


def brute_force_eer(s, y):
    u = np.unique(s)
    thr = np.concatenate([[-np.inf], (u[:-1] + u[1:]) / 2, [np.inf]])
    fa = np.array([100.0 * np.sum((s >= t) & ~y) / np.sum(~y) for t in thr])
    md = np.array([100.0 * np.sum((s < t) & y) / np.sum(y) for t in thr])
    for j in range(1, thr.size):
        a, b = fa[j - 1] - md[j - 1], fa[j] - md[j]
        if b == 0:
            return fa[j]
        if a > 0 > b:
            return fa[j - 1] + a / (a - b) * (fa[j] - fa[j - 1])
    raise AssertionError("no crossing")


def fd_max_rel_error(loss_fn, params, eps=1e-4):
    _, grads = loss_fn(params)
    flat = [a.copy() for a in params.flat()]
    worst = 0.0
    for k, arr in enumerate(flat):
        for idx in np.ndindex(arr.shape):
            hi = [a.copy() for a in flat]
            lo = [a.copy() for a in flat]
            hi[k][idx] += eps
            lo[k][idx] -= eps
            num = (loss_fn(params.with_flat(hi))[0] - loss_fn(params.with_flat(lo))[0]) / (2 * eps)
            worst = max(worst, abs(num - grads[k][idx]) / max(abs(num), abs(grads[k][idx]), 1e-7))
    return worst


# --------------------------------------------------------------- fixtures
@pytest.fixture(scope="module")
def e2e(tmp_path_factory):
    """Two full runs of the bundled config on the default synthetic dataset."""
    root = tmp_path_factory.mktemp("acceptance")
    t0 = time.perf_counter()
    dirs = make_synthetic_dataset(0, root / "data")
    runs = []
    for name in ("a", "b"):
        cfg = ExperimentConfig.from_ini(CONFIG, {"train_dir": dirs["train"], "test_dir": dirs["test"],
                                                 "output_dir": root / name})
        runs.append(run_experiment(cfg))
        if name == "a":
            elapsed = time.perf_counter() - t0
    return {"root": root, "dirs": dirs, "summaries": runs, "elapsed": elapsed}


# --------------------------------------------------------------- criteria
def test_cost_formulas_exact(verdict):
    with verdict("cost formulas exact"):
        t0 = time.perf_counter()
        ref = C.formula_ops(C.ModelDescriptor("dnn-sigmoid", 54, L=2, H=50)).total
        report = C.verify_costs(C.default_sweep())
        elapsed = time.perf_counter() - t0
        assert ref == 10702, f"dnn-sigmoid L=2 H=50 D=54 total {ref} != 10702"
        assert elapsed < 60, f"sweep took {elapsed:.1f} s"
        assert not report.mismatches, (
            f"{len(report.mismatches)} of {len(report)} descriptors mismatch "
            f"(families {sorted(report.mismatched_families())})")


def test_budget_case_study(verdict):
    with verdict("budget case study"):
        t0 = time.perf_counter()
        b = C.PlatformBudget(80e6, 0.8, 62.5, memory_bytes=256_000, memory_fraction=0.8,
                             bytes_per_param=2)
        ops = C.ops_budget_per_frame(b)
        knn_ops, knn_mem = C.knn_capacity(b, 40)
        assert ops == 1_024_000, ops
        assert knn_ops == 6400, knn_ops
        assert knn_mem == 2560, knn_mem
        assert time.perf_counter() - t0 < 1


def test_gmm_correctness(verdict):
    with verdict("GMM correctness"):
        rng = np.random.default_rng(1000)
        worst = 0.0
        for _ in range(1000):
            M, D = int(rng.integers(1, 9)), int(rng.integers(1, 5))
            w = rng.uniform(0.2, 1.0, M)
            p = G.GmmParams(w / w.sum(), rng.normal(size=(M, D)), rng.uniform(0.3, 2.0, (M, D)))
            x = rng.normal(size=D)
            worst = max(worst, abs(G.gmm_log_likelihood(x, p) - brute_force_ll(x, p)))
        assert worst < 1e-9, f"max log-likelihood error {worst:.3g}"
        for seed in range(20):
            r = np.random.default_rng(seed)
            X = np.vstack([r.normal(c, 1.0, size=(60, 2)) for c in (-3, 0, 4)])
            trace = np.array(G.em_fit(X, 4, seed, return_trace=True).trace)
            drops = np.diff(trace) < -1e-8 * np.abs(trace[1:])
            assert not drops.any(), f"EM log-likelihood decreased for seed {seed}"


def test_svm_correctness(verdict):
    with verdict("SVM correctness"):
        worst = 0.0
        for seed in range(50):
            rng = np.random.default_rng(seed)
            n, D = int(rng.integers(4, 30)), int(rng.integers(1, 4))
            gap = rng.uniform(0, 2)
            X = np.vstack([rng.normal(gap, 1.0, (n, D)), rng.normal(-gap, 1.0, (n, D))])
            y = np.r_[np.ones(n), -np.ones(n)]
            spec = S.KernelSpec(S.KERNELS[seed % 4], degree=2, gamma=0.5)
            C_ = float(rng.choice([0.1, 1.0, 10.0]))
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", ConvergenceWarning)
                m, alpha = S.smo_train(X, y, S.TrainConfig(C=C_), spec, return_alpha=True)
            worst = max(worst, kkt_violation(X, y, alpha, m, C_))
        assert worst <= 1e-3, f"max KKT violation {worst:.3g}"
        m = S.smo_train([[-1.0], [1.0]], [-1, 1], S.TrainConfig(C=100.0))
        w = float(m.coeffs @ m.support_vectors[:, 0])
        assert abs(w - 1) <= 1e-3 and abs(m.bias) <= 1e-3, f"w={w}, b={m.bias}"


def _tiny(rng, D, L, H, kind, recurrent=False):
    W = tuple(0.7 * rng.normal(size=(H, D if i == 0 else H)) for i in range(L))
    b = tuple(0.3 * rng.normal(size=H) for _ in range(L))
    R = tuple(0.6 * rng.normal(size=(H, H)) for _ in range(L)) if recurrent else None
    return N.NetworkParams(kind, W, b, rng.normal(size=H), 0.1, R)


def test_neural_correctness(verdict):
    with verdict("neural correctness"):
        rng = np.random.default_rng(5)
        worst = {}
        for kind in ("sigmoid", "relu"):
            for L in (1, 2):
                p = _tiny(rng, 3, L, 4, kind)
                X = rng.normal(size=(10, 3))
                y = (rng.random(10) < 0.5).astype(float)
                worst[f"dnn-{kind} L={L}"] = fd_max_rel_error(
                    lambda q: N.dnn_loss_and_grads(q, X, y), p)
        for L in (1, 2):
            p = _tiny(rng, 2, L, 3, "tanh", recurrent=True)
            seq = rng.normal(size=(6, 2))
            y = (rng.random(6) < 0.5).astype(float)
            worst[f"rnn L={L}"] = fd_max_rel_error(lambda q: N.rnn_loss_and_grads(q, seq, y), p)
        bad = {k: v for k, v in worst.items() if not v < 1e-4}
        assert not bad, f"relative gradient error too large: {bad}"


def test_evaluation_correctness(verdict):
    with verdict("evaluation correctness"):
        rng = np.random.default_rng(9)
        for _ in range(300):
            n = int(rng.integers(2, 1001))
            y = rng.random(n) < rng.uniform(0.1, 0.9)
            y[0], y[-1] = True, False
            s = rng.integers(0, int(rng.choice([3, 20, 1000])), n) + 0.7 * y
            got, want = eer_from_scores(s, y), brute_force_eer(s, y)
            assert abs(got - want) <= 1e-9, f"sweep EER {got} vs brute force {want} (n={n})"
        hand = equal_error_rate(sweep_det([0.8, 0.6, 0.4, 0.7, 0.5, 0.3], [1, 1, 1, 0, 0, 0]))
        assert abs(hand.eer_percent - 100 / 3) <= 0.01, hand.eer_percent
        s = rng.normal(size=500)
        y = rng.random(500) < 0.3
        for f in (lambda v: 3 * v - 2, np.tanh, np.exp):
            assert sweep_det(f(s), y).points() == sweep_det(s, y).points()


def test_fixed_point_fidelity(verdict, e2e):
    with verdict("fixed-point fidelity"):
        test = build_frame_set(ingest(e2e["dirs"]["test"]), "alarm")
        checked, problems = [], []
        for family in e2e["summaries"][0]["families"]:
            _, model, stats, _ = load_model_file(e2e["root"] / "a" / "models" / f"{family}.json")
            if C.descriptor_of(model).family not in FIXED_FAMILIES:
                continue
            X = apply_normalization(test.features, stats)
            reps = [compare_float_fixed(X, test.labels, model, QFormat(7, n), tolerance_pp=0.1)
                    for n in (7, 11, 15, 24)]
            gaps = [r.max_abs_delta for r in reps]
            checked.append(family)
            if not reps[-1].within_tolerance:
                problems.append(f"{family} Q7.24 dEER {reps[-1].delta_eer_pp:.3f} pp")
            if any(b > a for a, b in zip(gaps, gaps[1:])):
                problems.append(f"{family} max|dscore| not non-increasing: "
                                + ", ".join(f"{g:.6g}" for g in gaps))
        assert checked, "no trained family has a fixed-point path"
        assert not problems, "; ".join(problems)


def test_end_to_end(verdict, e2e):
    with verdict("end-to-end synthetic experiment"):
        a, b = e2e["summaries"]
        assert e2e["elapsed"] < 300, f"run took {e2e['elapsed']:.0f} s"
        assert set(a["families"]) == {"gmm", "svm", "dnn"}
        eers = {f: e["test_eer"] for f, e in a["families"].items()}
        assert all(v <= 10 for v in eers.values()), f"test EERs {eers}"
        root = e2e["root"]
        for f in a["families"]:
            assert (root / "a" / "scores" / f"{f}_test.csv").read_bytes() == \
                (root / "b" / "scores" / f"{f}_test.csv").read_bytes(), f"{f} scores differ"
        strip = lambda s: {k: v for k, v in s.items() if k != "config"}  # noqa: E731
        assert json.dumps(strip(a), sort_keys=True) == json.dumps(strip(b), sort_keys=True)
        pairs = json.loads((root / "a" / "summary.json").read_text())["eer_vs_ops"]
        assert {p["family"] for p in pairs if p["split"] == "test"} == {"gmm", "svm", "dnn"}
        assert all({"family", "config", "ops", "eer", "split"} <= p.keys() for p in pairs)
        assert all(isinstance(p["ops"], int) and p["ops"] > 0 for p in pairs)


def test_dnn_not_worse_than_gmm(e2e):
    fams = e2e["summaries"][0]["families"]
    assert fams["dnn"]["test_eer"] <= fams["gmm"]["test_eer"]


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q", "-s"]))
