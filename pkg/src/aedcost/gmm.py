"""Diagonal-covariance Gaussian mixtures: EM training and UBM likelihood-ratio scoring.

Absolute log-likelihoods keep the full normalising constant.  Scoring runs
through :func:`pair_kernel`, which is written against the counting arithmetic
of :mod:`aedcost.ops` so the same code yields scores, operation counts and
the fixed-point path.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .ops import FloatArith

FORMAT_VERSION = 1
VAR_FLOOR = 1e-6
MAX_ITERS = 200
TOL = 1e-6
LOG_2PI = math.log(2.0 * math.pi)
DEFAULT_M_GRID = tuple(2**k for k in range(11))
# a component whose soft count drops below this is considered empty
EMPTY_COMPONENT = 1e-10


class GmmParameterError(ValueError):
    """Raised for inconsistent or non-positive mixture parameters."""


@dataclass(frozen=True)
class GmmParams:
    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64).ravel().copy()
        mu = np.atleast_2d(np.asarray(self.means, dtype=np.float64)).copy()
        var = np.atleast_2d(np.asarray(self.variances, dtype=np.float64)).copy()
        if mu.shape != var.shape or mu.shape[0] != w.size:
            raise GmmParameterError(
                f"shape mismatch: weights {w.shape}, means {mu.shape}, variances {var.shape}"
            )
        if np.any(w <= 0) or abs(w.sum() - 1.0) >= 1e-9:
            raise GmmParameterError("weights must be positive and sum to 1")
        if np.any(var <= 0) or not np.all(np.isfinite(var)):
            raise GmmParameterError("variances must be positive and finite")
        if not np.all(np.isfinite(mu)):
            raise GmmParameterError("means must be finite")
        for a in (w, mu, var):
            a.setflags(write=False)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", mu)
        object.__setattr__(self, "variances", var)

    @property
    def M(self) -> int:
        return self.weights.size

    @property
    def D(self) -> int:
        return self.means.shape[1]

    def export(self) -> dict[str, np.ndarray]:
        """Scoring form: means, pre-inverted scales and per-component constants.

        ``ll_i(x) = const_i - sum_d ((x_d - mu_id) * scale_id)^2``.
        """
        scale = np.sqrt(0.5 / self.variances)
        const = (
            np.log(self.weights)
            - 0.5 * np.log(self.variances).sum(axis=1)
            - 0.5 * self.D * LOG_2PI
        )
        return {"mu": self.means, "scale": scale, "const": const}

    def permuted(self, order) -> "GmmParams":
        order = np.asarray(order)
        return GmmParams(self.weights[order], self.means[order], self.variances[order])

    def to_dict(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "kind": "gmm",
            "M": self.M,
            "D": self.D,
            "weights": self.weights.tolist(),
            "means": self.means.tolist(),
            "variances": self.variances.tolist(),
        }

    @classmethod
    def from_dict(cls, d) -> "GmmParams":
        if d.get("kind") != "gmm":
            raise GmmParameterError(f"not a GMM document (kind={d.get('kind')!r})")
        if d.get("format_version") != FORMAT_VERSION:
            raise GmmParameterError(f"unsupported GMM format version {d.get('format_version')}")
        p = cls(np.array(d["weights"]), np.array(d["means"]), np.array(d["variances"]))
        if p.M != d["M"] or p.D != d["D"]:
            raise GmmParameterError("declared M/D disagree with the arrays")
        return p


@dataclass(frozen=True)
class GmmScorerPair:
    target: GmmParams
    ubm: GmmParams

    def __post_init__(self):
        if self.target.D != self.ubm.D:
            raise GmmParameterError("target and UBM dimensions differ")

    @property
    def D(self) -> int:
        return self.target.D

    def swapped(self) -> "GmmScorerPair":
        return GmmScorerPair(self.ubm, self.target)

    def export(self) -> dict[str, np.ndarray]:
        t, u = self.target.export(), self.ubm.export()
        return {**{f"t_{k}": v for k, v in t.items()}, **{f"u_{k}": v for k, v in u.items()}}

    def to_dict(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "kind": "gmm-pair",
            "target": self.target.to_dict(),
            "ubm": self.ubm.to_dict(),
        }

    @classmethod
    def from_dict(cls, d) -> "GmmScorerPair":
        if d.get("kind") != "gmm-pair":
            raise GmmParameterError(f"not a GMM pair document (kind={d.get('kind')!r})")
        return cls(GmmParams.from_dict(d["target"]), GmmParams.from_dict(d["ubm"]))

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def load(cls, path) -> "GmmScorerPair":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


# Parameters that are additive constants; kept at accumulator width in fixed point.
WIDE_PARAMS = frozenset({"const", "t_const", "u_const"})


# ------------------------------------------------------------------ kernels
def model_kernel(ar, x, mu, scale, const):
    """Mixture log-likelihood of each row of ``x`` for one exported model."""
    n = x.shape[0]
    diff = ar.sub(x[:, None, :], mu[None, :, :])
    t = ar.mul(diff, scale[None, :, :])
    q = ar.rowdot(t, t)
    ll = ar.sub(const[None, :], q)
    acc = ar.neg_inf((n,))
    for i in range(ll.shape[1]):
        acc = ar.logsum(acc, ll[:, i])
    return acc


def pair_kernel(ar, x, P):
    """Target minus UBM log-likelihood for each row of ``x``."""
    ar.begin(x.shape[0])
    lt = model_kernel(ar, x, P["t_mu"], P["t_scale"], P["t_const"])
    lu = model_kernel(ar, x, P["u_mu"], P["u_scale"], P["u_const"])
    return ar.sub(lt, lu)


def _as_batch(x, D):
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    x = np.atleast_2d(x)
    if x.shape[1] != D:
        raise ValueError(f"input has {x.shape[1]} dims, model expects {D}")
    return x, single


# ---------------------------------------------------------------- scoring
def log_gaussian(x, mu, var) -> float | np.ndarray:
    """Log density of a diagonal Gaussian."""
    x, mu, var = (np.asarray(a, dtype=np.float64) for a in (x, mu, var))
    if x.shape[-1] != mu.shape[-1] or mu.shape != var.shape:
        raise ValueError("dimension mismatch between x, mean and variance")
    if np.any(var <= 0):
        raise GmmParameterError("variance must be positive")
    D = mu.shape[-1]
    out = -0.5 * D * LOG_2PI - 0.5 * np.log(var).sum() - 0.5 * (((x - mu) ** 2) / var).sum(axis=-1)
    return float(out) if np.ndim(out) == 0 else out


def logsum(log_a, log_b):
    """``log(exp(a) + exp(b))`` evaluated as max plus log1p of the gap."""
    hi = np.maximum(log_a, log_b)
    lo = np.minimum(log_a, log_b)
    if np.ndim(hi) == 0:
        if lo == -np.inf:
            return float(hi)
        return float(hi + math.log1p(math.exp(lo - hi)))
    with np.errstate(invalid="ignore"):
        gap = np.where(np.isneginf(lo), -np.inf, lo - hi)
    return hi + np.log1p(np.exp(gap))


def logsum_reduce(values) -> float:
    acc = -np.inf
    for v in np.asarray(values, dtype=np.float64).ravel():
        acc = logsum(acc, v)
    return float(acc)


def gmm_log_likelihood(x, params: GmmParams):
    """Mixture log-likelihood of one frame (returns float) or a batch."""
    xb, single = _as_batch(x, params.D)
    P = params.export()
    ar = FloatArith()
    ar.begin(xb.shape[0])
    out = model_kernel(ar, xb, P["mu"], P["scale"], P["const"])
    return float(out[0]) if single else out


def llr_score(x, pair: GmmScorerPair, arith=None):
    """Target-versus-UBM log-likelihood ratio."""
    xb, single = _as_batch(x, pair.D)
    out = pair_kernel(arith or FloatArith(), xb, pair.export())
    return float(out[0]) if single else out


# --------------------------------------------------------------- training
def kmeanspp_init(data, M: int, rng_seed) -> np.ndarray:
    """k-means++ seeding: each new centre drawn proportional to squared distance."""
    X = np.atleast_2d(np.asarray(data, dtype=np.float64))
    if M < 1:
        raise ValueError("M must be at least 1")
    n_distinct = np.unique(X, axis=0).shape[0]
    if n_distinct < M:
        raise ValueError(f"k-means++ needs {M} distinct points, data has {n_distinct}")
    rng = np.random.default_rng(rng_seed)
    centers = [X[rng.integers(X.shape[0])]]
    d2 = ((X - centers[0]) ** 2).sum(axis=1)
    for _ in range(1, M):
        idx = rng.choice(X.shape[0], p=d2 / d2.sum())
        centers.append(X[idx])
        d2 = np.minimum(d2, ((X - X[idx]) ** 2).sum(axis=1))
    return np.array(centers)


def _log_joint(X, w, mu, var):
    """``(n, M)`` matrix of log w_i + log N(x | mu_i, var_i)."""
    prec = 1.0 / var
    quad = (X**2) @ prec.T - 2.0 * X @ (mu * prec).T + ((mu**2) * prec).sum(axis=1)
    return np.log(w) - 0.5 * (X.shape[1] * LOG_2PI + np.log(var).sum(axis=1) + quad)


@dataclass
class EmResult:
    params: GmmParams
    trace: list[float] = field(default_factory=list)
    n_iter: int = 0
    converged: bool = False
    reseeded: list[int] = field(default_factory=list)


def em_fit(data, M: int, rng_seed, max_iters: int = MAX_ITERS, tol: float = TOL,
           var_floor: float = VAR_FLOOR, return_trace: bool = False):
    """Fit a diagonal GMM by EM from a k-means++ start.

    ``trace[k]`` is the total data log-likelihood under the parameters after
    ``k`` M-steps.  Iterations in which an empty component was reseeded are
    listed in ``reseeded``; the likelihood need not rise across those.
    """
    X = np.atleast_2d(np.asarray(data, dtype=np.float64))
    if X.size == 0:
        raise ValueError("cannot fit a GMM to empty data")
    if not np.all(np.isfinite(X)):
        raise ValueError("training data must be finite")
    n, D = X.shape
    rng = np.random.default_rng(rng_seed)
    mu = kmeanspp_init(X, M, rng)
    var = np.tile(np.maximum(X.var(axis=0), var_floor), (M, 1))
    w = np.full(M, 1.0 / M)
    res = EmResult(params=None)

    def total_ll(w, mu, var):
        return float(logsumexp(_log_joint(X, w, mu, var), axis=1).sum())

    prev = total_ll(w, mu, var)
    res.trace.append(prev)
    for it in range(1, max_iters + 1):
        lj = _log_joint(X, w, mu, var)
        resp = np.exp(lj - logsumexp(lj, axis=1, keepdims=True))
        nk = resp.sum(axis=0)
        empty = np.flatnonzero(nk <= EMPTY_COMPONENT)
        live = nk > EMPTY_COMPONENT
        mu_new = mu.copy()
        var_new = var.copy()
        mu_new[live] = (resp[:, live].T @ X) / nk[live, None]
        ex2 = (resp[:, live].T @ (X**2)) / nk[live, None]
        var_new[live] = np.maximum(ex2 - mu_new[live] ** 2, var_floor)
        w_new = nk / n
        if empty.size:
            # draw replacements by D^2 sampling, weighting points the current
            # mixture explains poorly
            d2 = ((X[:, None, :] - mu_new[None, live, :]) ** 2).sum(axis=2).min(axis=1)
            weight = d2 * (1.0 - resp.max(axis=1)) + 1e-300
            for k in empty:
                idx = rng.choice(n, p=weight / weight.sum())
                mu_new[k] = X[idx]
                var_new[k] = np.maximum(X.var(axis=0), var_floor)
                w_new[k] = 1.0 / n
                weight[idx] = 1e-300
            w_new = w_new / w_new.sum()
            res.reseeded.append(it)
        w, mu, var = w_new, mu_new, var_new
        cur = total_ll(w, mu, var)
        res.trace.append(cur)
        res.n_iter = it
        if not empty.size and abs(cur - prev) <= tol * max(abs(prev), 1e-300):
            res.converged = True
            break
        prev = cur
    w = w / w.sum()
    res.params = GmmParams(w, mu, var)
    return res if return_trace else res.params


def select_gmm(target_frames, world_frames, val_frames, val_labels, m_grid=DEFAULT_M_GRID,
               rng_seed=0, max_iters: int = MAX_ITERS, tol: float = TOL, ubm: GmmParams | None = None):
    """Grid search over M; the pair with the lowest validation frame EER wins.

    Grid values larger than the number of distinct training points are
    skipped.  Ties go to the earlier grid entry.  Returns
    ``(best_pair, {M: eer})``.
    """
    from .evaluation import eer_from_scores

    tgt = np.atleast_2d(np.asarray(target_frames, dtype=np.float64))
    wld = np.atleast_2d(np.asarray(world_frames, dtype=np.float64))
    n_t = np.unique(tgt, axis=0).shape[0]
    n_w = np.unique(wld, axis=0).shape[0]
    best, best_eer, table = None, np.inf, {}
    for M in m_grid:
        if M > n_t or (ubm is None and M > n_w):
            continue
        t = em_fit(tgt, M, rng_seed, max_iters, tol)
        u = ubm if ubm is not None else em_fit(wld, M, rng_seed + 1, max_iters, tol)
        pair = GmmScorerPair(t, u)
        eer = eer_from_scores(llr_score(val_frames, pair), val_labels)
        table[M] = eer
        if eer < best_eer:
            best, best_eer = pair, eer
    if best is None:
        raise ValueError("no grid value of M is feasible for this data")
    return best, table


# -------------------------------------------------------------- estimator
class GmmUbmClassifier(BaseEstimator, ClassifierMixin):
    """Target GMM scored against a background GMM; label 1 is the target class.

    ``ubm_components=None`` gives the background model the same size as the
    target model.
    """

    def __init__(self, n_components=16, ubm_components=None, seed=0, max_iter=MAX_ITERS,
                 tol=TOL, var_floor=VAR_FLOOR):
        self.n_components = n_components
        self.ubm_components = ubm_components
        self.seed = seed
        self.max_iter = max_iter
        self.tol = tol
        self.var_floor = var_floor

    def fit(self, X, y):
        X, y = check_X_y(X, y)
        y = np.asarray(y).astype(bool)
        if y.all() or not y.any():
            raise ValueError("need both target (1) and background (0) frames")
        m_ubm = self.ubm_components or self.n_components
        target = em_fit(X[y], self.n_components, self.seed, self.max_iter, self.tol, self.var_floor)
        ubm = em_fit(X[~y], m_ubm, self.seed + 1, self.max_iter, self.tol, self.var_floor)
        self.pair_ = GmmScorerPair(target, ubm)
        self.classes_ = np.array([0, 1])
        self.n_features_in_ = X.shape[1]
        return self

    def decision_function(self, X):
        check_is_fitted(self, "pair_")
        return llr_score(check_array(X), self.pair_)

    def predict(self, X):
        return (self.decision_function(X) >= 0).astype(int)

