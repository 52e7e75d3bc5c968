"""Operation tallies and the counting arithmetic used by every scoring kernel.

Scoring kernels in :mod:`aedcost.gmm`, :mod:`aedcost.svm` and
:mod:`aedcost.neural` are written once against the small arithmetic
interface defined here.  :class:`FloatArith` runs them in float64 while
tallying each primitive operation; :class:`aedcost.fixedpoint.FixedArith`
runs the same code in saturating integer arithmetic.  Because both backends
execute the same dataflow, their operation counts agree by construction.

Kernels are batched over frames (leading axis).  Counts are recorded per
frame: an elementwise op over an ``(n_frames, k)`` array costs ``k``.

Two views of the tally are kept:

``table``
    Prices operations the way the reference closed-form rows do.  Any
    nonlinearity, including a ReLU, occupies the LUT column, and one step of
    the recursive logsum costs one addition plus one lookup.
``executed``
    What a fixed-point core literally runs.  A ReLU is a compare-and-select,
    and each logsum step also spends a max-selection and the subtraction that
    forms the lookup argument.
"""
from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np
from scipy.special import expit


@dataclass(frozen=True)
class OpCount:
    """Per-frame tally of the four priced operation kinds."""

    additions: int = 0
    multiplications: int = 0
    lut_lookups: int = 0
    comparisons: int = 0

    @property
    def total(self) -> int:
        return self.additions + self.multiplications + self.lut_lookups + self.comparisons

    def __add__(self, other: "OpCount") -> "OpCount":
        return OpCount(*(getattr(self, f.name) + getattr(other, f.name) for f in fields(self)))

    def __sub__(self, other: "OpCount") -> "OpCount":
        return OpCount(*(getattr(self, f.name) - getattr(other, f.name) for f in fields(self)))

    def as_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d["total"] = self.total
        return d


class OpCounter:
    """Accumulates operations executed by one kernel invocation.

    Owned by the caller; never shared between concurrent calls.
    """

    def __init__(self):
        self.additions = 0
        self.multiplications = 0
        self.lut_lookups = 0
        self.comparisons = 0
        self.relu = 0
        self.logsum_steps = 0

    def table(self) -> OpCount:
        return OpCount(
            additions=self.additions,
            multiplications=self.multiplications,
            lut_lookups=self.lut_lookups + self.relu,
            comparisons=self.comparisons,
        )

    def executed(self) -> OpCount:
        return OpCount(
            additions=self.additions + self.logsum_steps,
            multiplications=self.multiplications,
            lut_lookups=self.lut_lookups,
            comparisons=self.comparisons + self.relu + self.logsum_steps,
        )

    def reset(self):
        self.__init__()


class NullCounter(OpCounter):
    """Counter that discards everything; used by the plain scoring path."""

    def __setattr__(self, name, value):
        object.__setattr__(self, name, 0)


# Nonlinearities a kernel may request by name.
def _log1p_exp(v):
    return np.logaddexp(0.0, v)


def _exp_neg(v):
    return np.exp(-v)


NONLINEARITIES = {
    "sigmoid": expit,
    "tanh": np.tanh,
    "exp_neg": _exp_neg,
    "log1p_exp": _log1p_exp,
}


class FloatArith:
    """float64 arithmetic that tallies every operation into ``counter``."""

    def __init__(self, counter: OpCounter | None = None):
        self.counter = counter if counter is not None else NullCounter()
        self._n = 1

    # ----------------------------------------------------------- plumbing
    def begin(self, n_frames: int):
        self._n = max(int(n_frames), 1)

    def _per_frame(self, arr) -> int:
        size = np.size(arr)
        if size % self._n:
            raise ValueError("array is not batched over the current frame count")
        return size // self._n

    def param(self, v):
        """Bring a (pre-computed) model parameter into this arithmetic."""
        return np.asarray(v, dtype=np.float64)

    def input(self, x):
        return np.asarray(x, dtype=np.float64)

    def output(self, v):
        return np.asarray(v, dtype=np.float64)

    def neg_inf(self, shape):
        return np.full(shape, -np.inf)

    # ---------------------------------------------------------- arithmetic
    def add(self, a, b):
        out = a + b
        self.counter.additions += self._per_frame(out)
        return out

    def sub(self, a, b):
        out = a - b
        self.counter.additions += self._per_frame(out)
        return out

    def mul(self, a, b):
        out = a * b
        self.counter.multiplications += self._per_frame(out)
        return out

    def rowdot(self, a, b):
        """Dot product along the last axis; accumulator starts at zero."""
        prod = a * b
        k = self._per_frame(prod)
        self.counter.multiplications += k
        self.counter.additions += k
        return np.add.reduce(prod, axis=-1)

    def sum(self, a):
        """Sum along the last axis; accumulator starts at zero."""
        self.counter.additions += self._per_frame(a)
        return np.add.reduce(a, axis=-1)

    def matvec(self, w, h):
        """``h @ w.T`` for a batch of row vectors ``h``."""
        out = h @ w.T
        self.counter.multiplications += w.size
        self.counter.additions += w.size
        return out

    def nonlin(self, kind: str, v):
        self.counter.lut_lookups += self._per_frame(v)
        return NONLINEARITIES[kind](v)

    def relu(self, v):
        self.counter.relu += self._per_frame(v)
        return np.maximum(v, 0.0)

    def logsum(self, acc, v):
        """One step of the recursive log(e^acc + e^v)."""
        k = self._per_frame(v)
        self.counter.additions += k
        self.counter.lut_lookups += k
        self.counter.logsum_steps += k
        hi = np.maximum(acc, v)
        lo = np.minimum(acc, v)
        with np.errstate(invalid="ignore"):
            arg = np.where(np.isneginf(lo), -np.inf, lo - hi)
        return hi + NONLINEARITIES["log1p_exp"](arg)
