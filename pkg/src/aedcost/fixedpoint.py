"""Q-format inference with direct-lookup nonlinearities.

Values are held as ``int64`` integers scaled by ``2**n``.  Parameters and
multiplicands live in the storage width ``m + n + 1``; sums live in a
saturating accumulator of twice that width (capped at 63 bits).  Each product
is rounded back to ``n`` fractional bits before accumulation, and operands
are saturated to the storage range on entry to a multiply.  Saturation is
counted, never raised.

The scoring kernels are the float ones from :mod:`aedcost.gmm`,
:mod:`aedcost.svm` and :mod:`aedcost.neural`, run under :class:`FixedArith`,
so operation counts match the float path by construction.  The binary model
file layout is described in ``docs/quantized-model-format.md``.
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np

from . import gmm as _gmm
from . import neural as _nn
from . import svm as _svm
from .costmodel import descriptor_of
from .ops import NONLINEARITIES, NullCounter, OpCount, OpCounter

FIXED_FAMILIES = ("gmm", "dnn-sigmoid", "dnn-relu", "svm-linear")
DEFAULT_LUT_SIZE = 1024
MAX_LUT_SIZE = 2**20
LUT_DOMAINS = {
    "sigmoid": (-16.0, 16.0),
    "tanh": (-8.0, 8.0),
    "exp_neg": (0.0, 16.0),
    "log1p_exp": (-15.0, 1.0),  # gaps are <= 0; the shift puts 0 on the grid
}
_FAMILY_LUTS = {
    "gmm": ("log1p_exp",),
    "dnn-sigmoid": ("sigmoid",),
    "dnn-relu": ("sigmoid",),
    "svm-linear": (),
}
_MATVEC_CHUNK = 1 << 22


@dataclass(frozen=True)
class QFormat:
    """Signed ``Qm.n``: ``m`` integer bits, ``n`` fractional bits, one sign bit."""

    m: int = 4
    n: int = 11

    def __post_init__(self):
        if self.m < 0 or self.n < 0 or self.width > 32:
            raise ValueError("need m >= 0, n >= 0 and m + n + 1 <= 32")

    @property
    def width(self) -> int:
        return self.m + self.n + 1

    @property
    def acc_width(self) -> int:
        return min(2 * self.width, 63)

    @property
    def lsb(self) -> float:
        return 2.0**-self.n

    @property
    def storage_range(self) -> tuple[int, int]:
        return -(1 << (self.width - 1)), (1 << (self.width - 1)) - 1

    @property
    def acc_range(self) -> tuple[int, int]:
        return -(1 << (self.acc_width - 1)), (1 << (self.acc_width - 1)) - 1

    def __str__(self):
        return f"Q{self.m}.{self.n}"


def quantize(v, q: QFormat, wide: bool = False, return_saturations: bool = False):
    """Round to the nearest multiple of ``2**-n`` (halves up), saturating."""
    lo, hi = q.acc_range if wide else q.storage_range
    scaled = np.floor(np.asarray(v, dtype=np.float64) * (1 << q.n) + 0.5)
    sat = int(np.count_nonzero((scaled < lo) | (scaled > hi)))
    out = np.clip(scaled, lo, hi).astype(np.int64)
    if np.ndim(out) == 0:
        out = int(out)
    return (out, sat) if return_saturations else out


def dequantize(v, q: QFormat):
    out = np.asarray(v, dtype=np.float64) / (1 << q.n)
    return float(out) if np.ndim(out) == 0 else out


# --------------------------------------------------------------------- LUTs
@dataclass(frozen=True)
class Lut:
    """Direct-lookup table of ``func`` sampled at ``lo + i * step`` for ``i < size``.

    The grid is anchored at ``lo`` so that zero is an exact entry for every
    default domain at power-of-two sizes.
    """

    func: str
    lo: float
    hi: float
    entries: np.ndarray

    def __post_init__(self):
        e = np.asarray(self.entries, dtype=np.float64).copy()
        if e.size < 2 or not self.lo < self.hi:
            raise ValueError("a LUT needs at least 2 entries and lo < hi")
        e.setflags(write=False)
        object.__setattr__(self, "entries", e)

    @property
    def size(self) -> int:
        return self.entries.size

    @property
    def step(self) -> float:
        return (self.hi - self.lo) / self.size

    def index(self, v) -> np.ndarray:
        idx = np.floor((np.asarray(v, dtype=np.float64) - self.lo) / self.step + 0.5)
        return np.clip(idx, 0, self.size - 1).astype(np.int64)


def lut_build(func: str, domain: tuple[float, float] | None = None, size: int = DEFAULT_LUT_SIZE) -> Lut:
    if func not in NONLINEARITIES:
        raise ValueError(f"no LUT for {func!r}")
    lo, hi = domain if domain is not None else LUT_DOMAINS[func]
    if size < 2 or not lo < hi:
        raise ValueError("a LUT needs at least 2 entries and lo < hi")
    step = (hi - lo) / size
    points = lo + np.arange(size) * step
    return Lut(func, float(lo), float(hi), NONLINEARITIES[func](points))


def lut_eval(lut: Lut, v):
    """Nearest-entry lookup; inputs past either end clamp to the end entries."""
    out = lut.entries[lut.index(v)]
    return float(out) if np.ndim(out) == 0 else out


def auto_lut_size(q: QFormat) -> int:
    """Table size that keeps lookup error in step with the format's resolution."""
    return int(min(max(DEFAULT_LUT_SIZE, 2 ** max(q.n - 1, 0)), MAX_LUT_SIZE))


# ------------------------------------------------------------- arithmetic
class FixedArith:
    """Saturating integer arithmetic with the same interface and counts as FloatArith."""

    def __init__(self, q: QFormat, tables: dict, counter: OpCounter | None = None):
        self.q = q
        self.counter = counter if counter is not None else NullCounter()
        self.tables = tables  # kind -> (Lut, quantized entries)
        self.saturations = 0
        self._n = 1
        self._half = (1 << (q.n - 1)) if q.n else 0
        self._slo, self._shi = q.storage_range
        self._alo, self._ahi = q.acc_range

    def begin(self, n_frames: int):
        self._n = max(int(n_frames), 1)

    def _per_frame(self, arr) -> int:
        size = np.size(arr)
        if size % self._n:
            raise ValueError("array is not batched over the current frame count")
        return size // self._n

    def _clip(self, v, lo, hi):
        v = np.asarray(v, dtype=np.int64)
        bad = (v < lo) | (v > hi)
        if bad.any():
            self.saturations += int(np.count_nonzero(bad))
            v = np.clip(v, lo, hi)
        return v

    def _acc(self, v):
        return self._clip(v, self._alo, self._ahi)

    def _store(self, v):
        return self._clip(v, self._slo, self._shi)

    def _rescale(self, prod):
        return (prod + self._half) >> self.q.n if self.q.n else prod

    def input(self, x):
        v, sat = quantize(x, self.q, return_saturations=True)
        self.saturations += sat
        return np.asarray(v, dtype=np.int64)

    def output(self, v):
        return dequantize(v, self.q)

    def neg_inf(self, shape):
        return np.full(shape, self._alo, dtype=np.int64)

    def add(self, a, b):
        out = self._acc(np.asarray(a, dtype=np.int64) + np.asarray(b, dtype=np.int64))
        self.counter.additions += self._per_frame(out)
        return out

    def sub(self, a, b):
        out = self._acc(np.asarray(a, dtype=np.int64) - np.asarray(b, dtype=np.int64))
        self.counter.additions += self._per_frame(out)
        return out

    def mul(self, a, b):
        out = self._acc(self._rescale(self._store(a) * self._store(b)))
        self.counter.multiplications += self._per_frame(out)
        return out

    def rowdot(self, a, b):
        prod = self._rescale(self._store(a) * self._store(b))
        k = self._per_frame(prod)
        self.counter.multiplications += k
        self.counter.additions += k
        return self._acc(prod.sum(axis=-1))

    def sum(self, a):
        self.counter.additions += self._per_frame(a)
        return self._acc(np.asarray(a, dtype=np.int64).sum(axis=-1))

    def matvec(self, w, h):
        w = self._store(w)
        h = self._store(h)
        rows = max(1, _MATVEC_CHUNK // max(w.size, 1))
        parts = []
        for s in range(0, h.shape[0], rows):
            prod = self._rescale(h[s:s + rows, None, :] * w[None, :, :])
            parts.append(prod.sum(axis=-1))
        self.counter.multiplications += w.size
        self.counter.additions += w.size
        return self._acc(np.concatenate(parts, axis=0))

    def _lookup(self, kind, v):
        lut, table = self.tables[kind]
        return table[lut.index(np.asarray(v, dtype=np.float64) / (1 << self.q.n))]

    def nonlin(self, kind, v):
        self.counter.lut_lookups += self._per_frame(v)
        return self._lookup(kind, v)

    def relu(self, v):
        self.counter.relu += self._per_frame(v)
        return np.maximum(v, 0)

    def logsum(self, acc, v):
        k = self._per_frame(v)
        self.counter.additions += k
        self.counter.lut_lookups += k
        self.counter.logsum_steps += k
        hi = np.maximum(acc, v)
        lo = np.minimum(acc, v)
        # the gap only indexes a table that clamps, so clip it silently
        gap = np.maximum(lo - hi, self._alo)
        return self._acc(hi + self._lookup("log1p_exp", gap))


# --------------------------------------------------------------- models
@dataclass
class QuantizedModel:
    """Pre-quantized parameters, tables and the metadata needed to score."""

    family: str
    D: int
    q: QFormat
    params: dict
    wide: frozenset
    tables: dict
    L: int | None = None
    param_saturations: int = 0


def _family_module(family):
    if family == "gmm":
        return _gmm
    if family == "svm-linear":
        return _svm
    return _nn


def _tables_for(family, q, lut_size):
    out = {}
    for kind in _FAMILY_LUTS[family]:
        lut = lut_build(kind, size=lut_size)
        out[kind] = (lut, np.asarray(quantize(lut.entries, q), dtype=np.int64))
    return out


def quantize_model(model, q: QFormat = QFormat(), lut_size: int | None = DEFAULT_LUT_SIZE) -> QuantizedModel:
    """Quantize a float GMM pair, linear SVM or feed-forward net.

    ``lut_size=None`` sizes tables with :func:`auto_lut_size`.
    """
    desc = descriptor_of(model)
    if desc.family not in FIXED_FAMILIES:
        raise ValueError(f"{desc.family} has no fixed-point path; supported: {FIXED_FAMILIES}")
    wide = _family_module(desc.family).WIDE_PARAMS
    params, sat = {}, 0
    for name, arr in model.export().items():
        v, s = quantize(arr, q, wide=name in wide, return_saturations=True)
        params[name] = np.asarray(v, dtype=np.int64)
        sat += s
    size = auto_lut_size(q) if lut_size is None else lut_size
    return QuantizedModel(desc.family, desc.D, q, params, frozenset(wide) & frozenset(params),
                          _tables_for(desc.family, q, size), desc.L, sat)


def _fixed_kernel(qm: QuantizedModel, ar, x):
    if qm.family == "gmm":
        return _gmm.pair_kernel(ar, x, qm.params)
    if qm.family == "svm-linear":
        return _svm.score_kernel(ar, x, qm.params, _svm.KernelSpec("linear"))
    kind = "relu" if qm.family == "dnn-relu" else "sigmoid"
    return _nn.dnn_kernel(ar, x, qm.params, qm.L, kind)


@dataclass(frozen=True)
class FixedResult:
    scores: np.ndarray | float
    ops: OpCount
    saturations: int

    @property
    def saturated(self) -> bool:
        return self.saturations > 0


def fixed_score(x, model, qformat: QFormat | None = None, lut_size: int | None = DEFAULT_LUT_SIZE,
                counter: OpCounter | None = None, view: str = "table") -> FixedResult:
    """Score frames entirely in fixed point.

    ``model`` is a :class:`QuantizedModel` or a float model quantized here
    to ``qformat`` (default Q4.11).
    """
    qm = model if isinstance(model, QuantizedModel) else quantize_model(
        model, qformat or QFormat(), lut_size)
    counter = counter if counter is not None else OpCounter()
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    xb = np.atleast_2d(x)
    if xb.shape[1] != qm.D:
        raise ValueError(f"input has {xb.shape[1]} dims, model expects {qm.D}")
    ar = FixedArith(qm.q, qm.tables, counter)
    raw = _fixed_kernel(qm, ar, ar.input(xb))
    scores = ar.output(raw)
    if single:
        scores = float(np.asarray(scores)[0])
    ops = counter.table() if view == "table" else counter.executed()
    return FixedResult(scores, ops, ar.saturations)


@dataclass(frozen=True)
class FixedComparison:
    qformat: str
    lut_size: int
    n_frames: int
    max_abs_delta: float
    eer_float: float
    eer_fixed: float
    saturations: int
    tolerance_pp: float | None = None

    @property
    def delta_eer_pp(self) -> float:
        return abs(self.eer_fixed - self.eer_float)

    @property
    def within_tolerance(self) -> bool | None:
        if self.tolerance_pp is None:
            return None
        return self.delta_eer_pp <= self.tolerance_pp

    def as_dict(self) -> dict:
        return {
            "qformat": self.qformat,
            "lut_size": self.lut_size,
            "n_frames": self.n_frames,
            "max_abs_delta": self.max_abs_delta,
            "eer_float": self.eer_float,
            "eer_fixed": self.eer_fixed,
            "delta_eer_pp": self.delta_eer_pp,
            "saturations": self.saturations,
            "tolerance_pp": self.tolerance_pp,
            "within_tolerance": self.within_tolerance,
        }


def compare_float_fixed(X, labels, model, qformat: QFormat = QFormat(), lut_size: int | None = None,
                        tolerance_pp: float | None = None) -> FixedComparison:
    """Per-frame score gap and EERs of the float and fixed paths on one set."""
    from .costmodel import run_kernel
    from .evaluation import eer_from_scores
    from .ops import FloatArith

    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    flt = run_kernel(model, X, FloatArith())
    qm = quantize_model(model, qformat, lut_size)
    res = fixed_score(X, qm)
    size = next(iter(qm.tables.values()))[0].size if qm.tables else 0
    return FixedComparison(
        qformat=str(qformat),
        lut_size=size,
        n_frames=X.shape[0],
        max_abs_delta=float(np.max(np.abs(res.scores - flt))),
        eer_float=eer_from_scores(flt, labels),
        eer_fixed=eer_from_scores(res.scores, labels),
        saturations=res.saturations + qm.param_saturations,
        tolerance_pp=tolerance_pp,
    )


# -------------------------------------------------------------- binary file
MAGIC = b"AEDQ"
FILE_VERSION = 1
FAMILY_CODES = {"gmm": 1, "svm-linear": 2, "dnn-sigmoid": 3, "dnn-relu": 4}
LUT_CODES = {"sigmoid": 1, "tanh": 2, "exp_neg": 3, "log1p_exp": 4}
_HEADER = struct.Struct("<4sHBBIBBBBHH")
_LUT = struct.Struct("<BxxxIdd")
_DTYPES = {2: "<i2", 4: "<i4", 8: "<i8"}


def _elem_bytes(bits: int) -> int:
    return 2 if bits <= 16 else 4 if bits <= 32 else 8


def write_quantized(path, qm: QuantizedModel):
    q = qm.q
    sbytes = _elem_bytes(q.width)
    chunks = [_HEADER.pack(MAGIC, FILE_VERSION, FAMILY_CODES[qm.family], qm.L or 0, qm.D, q.m, q.n,
                           q.width, q.acc_width, len(qm.tables), len(qm.params))]
    for kind, (lut, table) in qm.tables.items():
        chunks.append(_LUT.pack(LUT_CODES[kind], lut.size, lut.lo, lut.hi))
        chunks.append(table.astype(_DTYPES[sbytes]).tobytes())
    for name, arr in qm.params.items():
        wide = name in qm.wide
        eb = _elem_bytes(q.acc_width if wide else q.width)
        raw = name.encode("ascii")
        chunks.append(struct.pack("<B", len(raw)) + raw)
        chunks.append(struct.pack("<BBB", int(wide), eb, arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(np.ascontiguousarray(arr).astype(_DTYPES[eb]).tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(chunks))


def read_quantized(path) -> QuantizedModel:
    with open(path, "rb") as fh:
        buf = fh.read()
    if len(buf) < _HEADER.size or buf[:4] != MAGIC:
        raise ValueError(f"{path}: not a quantized model file")
    (_, version, fam, L, D, m, n, width, acc_width, n_luts, n_arrays) = _HEADER.unpack_from(buf, 0)
    if version != FILE_VERSION:
        raise ValueError(f"{path}: unsupported file version {version}")
    q = QFormat(m, n)
    if (q.width, q.acc_width) != (width, acc_width):
        raise ValueError(f"{path}: inconsistent Q-format widths")
    family = {v: k for k, v in FAMILY_CODES.items()}[fam]
    kinds = {v: k for k, v in LUT_CODES.items()}
    off = _HEADER.size
    sbytes = _elem_bytes(width)
    tables = {}
    for _ in range(n_luts):
        code, size, lo, hi = _LUT.unpack_from(buf, off)
        off += _LUT.size
        table = np.frombuffer(buf, _DTYPES[sbytes], size, off).astype(np.int64)
        off += size * sbytes
        kind = kinds[code]
        tables[kind] = (lut_build(kind, (lo, hi), size), table)
    params, wide = {}, set()
    for _ in range(n_arrays):
        (ln,) = struct.unpack_from("<B", buf, off)
        name = buf[off + 1:off + 1 + ln].decode("ascii")
        off += 1 + ln
        is_wide, eb, ndim = struct.unpack_from("<BBB", buf, off)
        off += 3
        shape = struct.unpack_from(f"<{ndim}I", buf, off)
        off += 4 * ndim
        count = math.prod(shape)
        params[name] = np.frombuffer(buf, _DTYPES[eb], count, off).astype(np.int64).reshape(shape)
        off += count * eb
        if is_wide:
            wide.add(name)
    if off != len(buf):
        raise ValueError(f"{path}: {len(buf) - off} trailing bytes")
    return QuantizedModel(family, D, q, params, frozenset(wide), tables, L or None)

