import math

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from aedcost import costmodel as C
from aedcost import fixedpoint as F
from aedcost.gmm import GmmParams, GmmScorerPair, llr_score
from aedcost.neural import NetworkParams, dnn_forward, init_network
from aedcost.ops import NONLINEARITIES
from aedcost.svm import KernelSpec, SvmModel

Q411 = F.QFormat(4, 11)


# ------------------------------------------------------------- Q-format
def test_qformat_widths():
    assert (Q411.width, Q411.acc_width) == (16, 32)
    assert F.QFormat(15, 16).acc_width == 63
    for m, n in [(-1, 3), (3, -1), (16, 16)]:
        with pytest.raises(ValueError):
            F.QFormat(m, n)


def test_quantize_examples():
    assert F.dequantize(F.quantize(0.0, Q411), Q411) == 0.0
    assert F.dequantize(F.quantize(1 / 2048, Q411), Q411) == 1 / 2048
    assert abs(F.dequantize(F.quantize(math.pi, Q411), Q411) - math.pi) <= 2**-12


@settings(max_examples=300, deadline=None)
@given(st.floats(-16, 16), st.integers(0, 20))
def test_rounding_bound(v, n):
    q = F.QFormat(4, n)
    assume(v <= 16 - 1.5 * q.lsb)  # stay clear of the saturating top code
    assert abs(F.dequantize(F.quantize(v, q), q) - v) <= 2 ** (-n - 1)


@settings(max_examples=300, deadline=None)
@given(st.floats(-100, 100), st.floats(-100, 100))
def test_quantize_monotone(a, b):
    lo, hi = min(a, b), max(a, b)
    assert F.quantize(lo, Q411) <= F.quantize(hi, Q411)


def test_saturation_counted_not_raised():
    v, sat = F.quantize(np.array([100.0, -100.0, 1.0]), Q411, return_saturations=True)
    assert sat == 2 and list(v) == [32767, -32768, 2048]


# ------------------------------------------------------------------ LUTs
def test_sigmoid_lut_at_zero():
    lut = F.lut_build("sigmoid")
    slope_max = 0.25
    assert abs(F.lut_eval(lut, 0.0) - 0.5) <= slope_max * lut.step


def test_log1p_exp_clamps_far_left():
    lut = F.lut_build("log1p_exp")
    assert F.lut_eval(lut, -1e6) == pytest.approx(0.0, abs=1e-6)


def test_tanh_lut_dense_error():
    lut = F.lut_build("tanh", (-8.0, 8.0), 1024)
    v = np.linspace(-8, 8, 200_001)
    assert np.max(np.abs(F.lut_eval(lut, v) - np.tanh(v))) <= 0.0078125


@pytest.mark.parametrize("func", ["sigmoid", "tanh", "exp_neg", "log1p_exp"])
def test_lut_error_bound_with_clamp(func):
    lut = F.lut_build(func, size=256)
    first, last = lut.lo, lut.lo + (lut.size - 1) * lut.step
    v = np.linspace(first - 5, last + 5, 50_001)
    f = NONLINEARITIES[func]
    half = lut.step / 2
    grid = np.linspace(first - half, last + half, 100_001)
    slope = np.max(np.abs(np.diff(f(grid)) / np.diff(grid))) * 1.001
    # past the outermost half-cells the error is the gap to the end entry
    clamp = np.where(v < first - half, np.abs(f(v) - f(first)),
                     np.where(v > last + half, np.abs(f(v) - f(last)), 0.0))
    err = np.abs(F.lut_eval(lut, v) - f(v))
    assert np.all(err <= slope * half + clamp + 1e-12)


def test_zero_is_an_exact_entry():
    for func in ("sigmoid", "tanh", "exp_neg", "log1p_exp"):
        for size in (1024, 2**14):
            lut = F.lut_build(func, size=size)
            assert F.lut_eval(lut, 0.0) == NONLINEARITIES[func](np.float64(0.0))


def test_lut_validation():
    with pytest.raises(ValueError):
        F.lut_build("sigmoid", size=1)
    with pytest.raises(ValueError):
        F.lut_build("sigmoid", (1.0, 1.0))
    with pytest.raises(ValueError):
        F.lut_build("cosh")


def test_auto_lut_size():
    assert F.auto_lut_size(Q411) == 1024
    assert F.auto_lut_size(F.QFormat(7, 15)) == 2**14
    assert F.auto_lut_size(F.QFormat(7, 24)) == 2**20


# ----------------------------------------------------------------- models
def _dnn(rng, kind="sigmoid", D=6, L=2, H=8):
    return init_network(D, L, H, kind, rng)


def test_relu_zero_weights_gives_half():
    p = NetworkParams("relu", (np.zeros((3, 4)),), (np.zeros(3),), np.zeros(3), 0.0)
    res = F.fixed_score(np.ones(4), p)
    assert res.scores == 0.5 == dnn_forward(np.ones(4), p)


def test_relu_net_uses_only_output_lookup(rng):
    p = _dnn(rng, "relu")
    res = F.fixed_score(rng.normal(size=6), p, view="executed")
    assert res.ops.lut_lookups == 1


@pytest.mark.parametrize("make", [
    lambda r: _dnn(r, "sigmoid"), lambda r: _dnn(r, "relu"),
    lambda r: C.synthetic_model(C.ModelDescriptor("gmm", 6, M=4)),
    lambda r: C.synthetic_model(C.ModelDescriptor("svm-linear", 6, lam=5)),
])
def test_fixed_counts_equal_float(rng, make):
    model = make(rng)
    x = rng.normal(size=(3, 6))
    for view in ("table", "executed"):
        _, flt = C.instrumented_score(x, model, view=view)
        assert F.fixed_score(x, model, view=view).ops == flt


def test_unsupported_families(rng):
    with pytest.raises(ValueError):
        F.quantize_model(init_network(3, 1, 2, "tanh", rng, recurrent=True))
    with pytest.raises(ValueError):
        F.quantize_model(SvmModel(np.ones((2, 3)), np.ones(2), 0.0, KernelSpec("rbf")))


def _scalar_gmm_bound(x, P, q, lut):
    """Worst-case float/fixed gap for one D=1, M=1 log-likelihood (first-order intervals)."""
    h = q.lsb / 2
    d = x - P["mu"][0, 0]
    s = P["scale"][0, 0]
    e_d = 2 * h
    t = d * s
    e_t = abs(d) * h + abs(s) * e_d + e_d * h + h
    e_q = 2 * abs(t) * e_t + e_t**2 + h
    e_ll = h + e_q
    e_lut = float(lut.entries[0]) + h  # the first logsum step reads the clamped end cell
    return e_ll + e_lut


@pytest.mark.parametrize("x", [-1.3, 0.0, 0.42, 2.5])
def test_gmm_scalar_interval_bound(x):
    t = GmmParams([1.0], [[0.3]], [[0.8]])
    u = GmmParams([1.0], [[-0.2]], [[1.5]])
    pair = GmmScorerPair(t, u)
    q = F.QFormat(7, 20)
    qm = F.quantize_model(pair, q)
    lut = qm.tables["log1p_exp"][0]
    gap = abs(F.fixed_score(np.array([x]), qm).scores - llr_score(np.array([x]), pair))
    bound = sum(_scalar_gmm_bound(x, m.export(), q, lut) for m in (t, u))
    assert gap <= bound


def test_aggressive_quantisation_still_reports(rng):
    p = _dnn(rng)
    X = rng.normal(size=(60, 6))
    y = rng.random(60) < 0.5
    rep = F.compare_float_fixed(X, y, p, F.QFormat(2, 3))
    assert rep.n_frames == 60 and math.isfinite(rep.max_abs_delta)


def test_comparison_deterministic(rng):
    p = _dnn(rng)
    X = rng.normal(size=(50, 6))
    y = rng.random(50) < 0.5
    a = F.compare_float_fixed(X, y, p, Q411, tolerance_pp=1.0)
    b = F.compare_float_fixed(X, y, p, Q411, tolerance_pp=1.0)
    assert a.as_dict() == b.as_dict()


def test_score_gap_shrinks_with_precision(rng):
    p = _dnn(rng, "relu")
    X = rng.normal(size=(300, 6))
    y = X[:, 0] > 0
    gaps = [F.compare_float_fixed(X, y, p, F.QFormat(7, n)).max_abs_delta for n in (7, 11, 15, 24)]
    assert all(b <= a for a, b in zip(gaps, gaps[1:]))


def test_parameter_saturation_flagged(rng):
    model = SvmModel(np.full((2, 3), 50.0), np.ones(2), 0.0, KernelSpec("linear"))
    qm = F.quantize_model(model, Q411)
    assert qm.param_saturations == 6


# -------------------------------------------------------------- file I/O
@pytest.mark.parametrize("make", [
    lambda r: _dnn(r, "sigmoid"), lambda r: _dnn(r, "relu"),
    lambda r: C.synthetic_model(C.ModelDescriptor("gmm", 6, M=3)),
    lambda r: C.synthetic_model(C.ModelDescriptor("svm-linear", 6, lam=4)),
])
@pytest.mark.parametrize("q", [Q411, F.QFormat(7, 24)])
def test_binary_round_trip(tmp_path, rng, make, q):
    qm = F.quantize_model(make(rng), q)
    F.write_quantized(tmp_path / "m.aedq", qm)
    back = F.read_quantized(tmp_path / "m.aedq")
    assert (back.family, back.D, back.q, back.L) == (qm.family, qm.D, qm.q, qm.L)
    x = rng.normal(size=(5, 6))
    np.testing.assert_array_equal(F.fixed_score(x, back).scores, F.fixed_score(x, qm).scores)


def test_bad_file_rejected(tmp_path):
    (tmp_path / "junk").write_bytes(b"nope" * 10)
    with pytest.raises(ValueError):
        F.read_quantized(tmp_path / "junk")
