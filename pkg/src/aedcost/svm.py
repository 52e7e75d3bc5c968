"""Soft-margin binary SVMs: four kernels, SMO training and per-frame scoring.

The score of a frame is the signed distance ``sum_i c_i K(x, sv_i) + b`` with
``c_i = y_i * alpha_i``; a score of exactly zero classifies as +1.
"""
from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.exceptions import ConvergenceWarning
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .ops import FloatArith

FORMAT_VERSION = 1
KERNELS = ("linear", "polynomial", "rbf", "sigmoid")
SV_THRESHOLD = 1e-8
SMO_TOL = 1e-3
MAX_PASSES = 10_000
C_GRID = (0.1, 1.0, 10.0)
T_GRID = (500, 2000)
GAMMA_GRID = (0.005, 0.01, 0.05)
DEGREE_GRID = (2, 3)
_TAU = 1e-12


class SvmModelError(ValueError):
    """Raised for malformed SVM models or training input."""


@dataclass(frozen=True)
class KernelSpec:
    kind: str = "linear"
    degree: int = 3
    gamma: float = 0.01

    def __post_init__(self):
        if self.kind not in KERNELS:
            raise SvmModelError(f"unknown kernel {self.kind!r}; expected one of {KERNELS}")
        if int(self.degree) != self.degree or self.degree < 1:
            raise SvmModelError("polynomial degree must be an integer >= 1")
        if not self.gamma > 0:
            raise SvmModelError("gamma must be positive")
        object.__setattr__(self, "degree", int(self.degree))
        object.__setattr__(self, "gamma", float(self.gamma))

    def gram(self, A, B) -> np.ndarray:
        """Kernel matrix ``K[a, b] = K(A[a], B[b])``."""
        A = np.atleast_2d(np.asarray(A, dtype=np.float64))
        B = np.atleast_2d(np.asarray(B, dtype=np.float64))
        if self.kind == "rbf":
            sq = (A**2).sum(1)[:, None] + (B**2).sum(1)[None, :] - 2.0 * A @ B.T
            return np.exp(-self.gamma * np.maximum(sq, 0.0))
        dot = A @ B.T
        if self.kind == "linear":
            return dot
        if self.kind == "polynomial":
            return dot**self.degree
        return np.tanh(dot)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "degree": self.degree, "gamma": self.gamma}


def kernel_eval(spec: KernelSpec, x, x_i) -> float:
    x = np.asarray(x, dtype=np.float64)
    x_i = np.asarray(x_i, dtype=np.float64)
    if spec.kind == "rbf":
        return float(np.exp(-spec.gamma * np.sum((x - x_i) ** 2)))
    dot = float(x @ x_i)
    if spec.kind == "linear":
        return dot
    if spec.kind == "polynomial":
        return dot**spec.degree
    return float(np.tanh(dot))


@dataclass(frozen=True)
class SvmModel:
    support_vectors: np.ndarray
    coeffs: np.ndarray
    bias: float
    kernel: KernelSpec = field(default_factory=KernelSpec)
    converged: bool = True

    def __post_init__(self):
        sv = np.atleast_2d(np.asarray(self.support_vectors, dtype=np.float64)).copy()
        c = np.asarray(self.coeffs, dtype=np.float64).ravel().copy()
        if sv.shape[0] != c.size:
            raise SvmModelError(f"{sv.shape[0]} support vectors but {c.size} coefficients")
        if c.size < 1:
            raise SvmModelError("an SVM needs at least one support vector")
        sv.setflags(write=False)
        c.setflags(write=False)
        object.__setattr__(self, "support_vectors", sv)
        object.__setattr__(self, "coeffs", c)
        object.__setattr__(self, "bias", float(self.bias))

    @property
    def n_support(self) -> int:
        return self.coeffs.size

    @property
    def D(self) -> int:
        return self.support_vectors.shape[1]

    def scaled(self, k: float) -> "SvmModel":
        return SvmModel(self.support_vectors, k * self.coeffs, k * self.bias, self.kernel, self.converged)

    def export(self) -> dict[str, np.ndarray]:
        """Scoring form; linear models fold the coefficients into the vectors."""
        b = np.array(self.bias)
        if self.kernel.kind == "linear":
            return {"w_sv": self.coeffs[:, None] * self.support_vectors, "bias": b}
        P = {"sv": self.support_vectors, "coeffs": self.coeffs, "bias": b}
        if self.kernel.kind == "rbf":
            P["gamma"] = np.array(self.kernel.gamma)
        return P

    def to_dict(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "kind": "svm",
            "kernel": self.kernel.to_dict(),
            "n_support": self.n_support,
            "D": self.D,
            "support_vectors": self.support_vectors.tolist(),
            "coeffs": self.coeffs.tolist(),
            "bias": self.bias,
            "converged": self.converged,
        }

    @classmethod
    def from_dict(cls, d) -> "SvmModel":
        if d.get("kind") != "svm":
            raise SvmModelError(f"not an SVM document (kind={d.get('kind')!r})")
        if d.get("format_version") != FORMAT_VERSION:
            raise SvmModelError(f"unsupported SVM format version {d.get('format_version')}")
        m = cls(
            np.array(d["support_vectors"]),
            np.array(d["coeffs"]),
            d["bias"],
            KernelSpec(**d["kernel"]),
            d.get("converged", True),
        )
        if m.n_support != d["n_support"] or m.D != d["D"]:
            raise SvmModelError("declared lambda/D disagree with the arrays")
        return m

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def load(cls, path) -> "SvmModel":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


WIDE_PARAMS = frozenset({"bias"})


# ------------------------------------------------------------------ kernel
def score_kernel(ar, x, P, spec: KernelSpec):
    """Decision values for each row of ``x`` against exported parameters ``P``."""
    ar.begin(x.shape[0])
    if spec.kind == "linear":
        terms = ar.matvec(P["w_sv"], x)
    elif spec.kind == "rbf":
        diff = ar.sub(x[:, None, :], P["sv"][None, :, :])
        sq = ar.rowdot(diff, diff)
        k = ar.nonlin("exp_neg", ar.mul(sq, P["gamma"]))
        terms = ar.mul(k, P["coeffs"][None, :])
    else:
        dot = ar.matvec(P["sv"], x)
        if spec.kind == "polynomial":
            k = dot
            for _ in range(spec.degree - 1):
                k = ar.mul(k, dot)
        else:
            k = ar.nonlin("tanh", dot)
        terms = ar.mul(k, P["coeffs"][None, :])
    return ar.add(ar.sum(terms), P["bias"])


def svm_score(x, model: SvmModel, arith=None):
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    xb = np.atleast_2d(x)
    if xb.shape[1] != model.D:
        raise ValueError(f"input has {xb.shape[1]} dims, model expects {model.D}")
    out = score_kernel(arith or FloatArith(), xb, model.export(), model.kernel)
    return float(out[0]) if single else out


def svm_classify(x, model: SvmModel):
    s = svm_score(x, model)
    return np.where(np.asarray(s) >= 0, 1, -1) if np.ndim(s) else (1 if s >= 0 else -1)


# ---------------------------------------------------------------- training
@dataclass(frozen=True)
class TrainConfig:
    C: float = 1.0
    T: int = 500
    rng_seed: int = 0

    def __post_init__(self):
        if not self.C > 0:
            raise SvmModelError("C must be positive")
        if self.T < 2:
            raise SvmModelError("T must be at least 2")


def downsample_training(target_frames, world_frames, T: int, rng_seed):
    """``T`` frames from each pool without replacement; labels are +1 / -1."""
    tgt = np.atleast_2d(np.asarray(target_frames, dtype=np.float64))
    wld = np.atleast_2d(np.asarray(world_frames, dtype=np.float64))
    if tgt.shape[0] < T or wld.shape[0] < T:
        raise SvmModelError(
            f"need {T} frames per class, have {tgt.shape[0]} target and {wld.shape[0]} world"
        )
    rng = np.random.default_rng(rng_seed)
    ti = rng.choice(tgt.shape[0], T, replace=False)
    wi = rng.choice(wld.shape[0], T, replace=False)
    X = np.vstack([tgt[ti], wld[wi]])
    y = np.concatenate([np.ones(T), -np.ones(T)])
    return X, y


@dataclass
class SmoState:
    alpha: np.ndarray
    grad: np.ndarray
    n_iter: int
    converged: bool
    gap: float


def _smo_solve(K, y, C, tol, max_iter):
    """Dual solver with second-order working-set selection on a precomputed Gram matrix."""
    n = y.size
    Q = (y[:, None] * y[None, :]) * K
    diag = np.diag(Q).copy()
    alpha = np.zeros(n)
    G = -np.ones(n)
    gap = np.inf
    it = 0
    for it in range(1, max_iter + 1):
        up = ((y > 0) & (alpha < C)) | ((y < 0) & (alpha > 0))
        low = ((y > 0) & (alpha > 0)) | ((y < 0) & (alpha < C))
        yg = -y * G
        cand = np.where(up, yg, -np.inf)
        i = int(np.argmax(cand))
        m_up = cand[i]
        m_low = np.min(np.where(low, yg, np.inf))
        gap = m_up - m_low
        if gap <= tol:
            return SmoState(alpha, G, it - 1, True, gap)
        b = m_up - yg
        a = diag[i] + diag - 2.0 * y[i] * y * Q[i]
        a = np.where(a > 0, a, _TAU)
        obj = np.where(low & (yg < m_up), -(b * b) / a, np.inf)
        j = int(np.argmin(obj))

        ai, aj = alpha[i], alpha[j]
        if y[i] != y[j]:
            quad = max(diag[i] + diag[j] + 2.0 * Q[i, j], _TAU)
            delta = (-G[i] - G[j]) / quad
            diff = ai - aj
            ni, nj = ai + delta, aj + delta
            if diff > 0:
                if nj < 0:
                    nj, ni = 0.0, diff
            elif ni < 0:
                ni, nj = 0.0, -diff
            if diff > 0:
                if ni > C:
                    ni, nj = C, C - diff
            elif nj > C:
                nj, ni = C, C + diff
        else:
            quad = max(diag[i] + diag[j] - 2.0 * Q[i, j], _TAU)
            delta = (G[i] - G[j]) / quad
            total = ai + aj
            ni, nj = ai - delta, aj + delta
            if total > C:
                if ni > C:
                    ni, nj = C, total - C
            elif nj < 0:
                nj, ni = 0.0, total
            if total > C:
                if nj > C:
                    nj, ni = C, total - C
            elif ni < 0:
                ni, nj = 0.0, total
        G += Q[:, i] * (ni - ai) + Q[:, j] * (nj - aj)
        alpha[i], alpha[j] = ni, nj
    return SmoState(alpha, G, it, False, gap)


def _bias(alpha, G, y, C):
    yg = y * G
    free = (alpha > 0) & (alpha < C)
    if free.any():
        rho = yg[free].mean()
    else:
        at_ub = alpha >= C
        at_lb = alpha <= 0
        ub_mask = (at_ub & (y < 0)) | (at_lb & (y > 0))
        lb_mask = (at_ub & (y > 0)) | (at_lb & (y < 0))
        ub = yg[ub_mask].min() if ub_mask.any() else np.inf
        lb = yg[lb_mask].max() if lb_mask.any() else -np.inf
        rho = 0.5 * (ub + lb)
    return -rho


def smo_train(examples, labels, config: TrainConfig = TrainConfig(), kernel: KernelSpec = KernelSpec(),
              tol: float = SMO_TOL, max_passes: int = MAX_PASSES, return_alpha: bool = False):
    """Train a soft-margin SVM; labels must be +1 / -1.

    A pass is ``n`` pair updates.  If the duality gap does not fall below
    ``tol`` within ``max_passes`` passes, the current solution is returned
    with ``converged=False`` and a :class:`ConvergenceWarning`.
    """
    X = np.atleast_2d(np.asarray(examples, dtype=np.float64))
    y = np.asarray(labels, dtype=np.float64).ravel()
    if X.shape[0] != y.size:
        raise SvmModelError("examples and labels differ in length")
    if not np.all(np.isin(y, (-1.0, 1.0))):
        raise SvmModelError("labels must be +1 or -1")
    if (y > 0).all() or (y < 0).all():
        raise SvmModelError("SVM training needs both classes")
    K = kernel.gram(X, X)
    st = _smo_solve(K, y, float(config.C), tol, max_passes * y.size)
    if not st.converged:
        warnings.warn(
            f"SMO stopped after {st.n_iter} updates with gap {st.gap:.3g} > {tol}",
            ConvergenceWarning,
        )
    b = _bias(st.alpha, st.grad, y, config.C)
    sv = st.alpha > SV_THRESHOLD
    if not sv.any():
        sv = np.zeros_like(sv)
        sv[0] = True
    model = SvmModel(X[sv], (st.alpha * y)[sv], b, kernel, st.converged)
    return (model, st.alpha) if return_alpha else model


def select_svm(target_frames, world_frames, val_frames, val_labels, kernel_grid=None,
               C_grid=C_GRID, T_grid=T_GRID, rng_seed=0, support_counts: dict | None = None):
    """Exhaustive grid over kernels x C x T by validation frame EER.

    ``T`` values larger than either pool are skipped.  Returns
    ``(best_model, best_cell, {cell: eer})`` where a cell is
    ``(KernelSpec, C, T)``.  If ``support_counts`` is given it receives each
    cell's support-vector count.
    """
    from .evaluation import eer_from_scores

    if kernel_grid is None:
        kernel_grid = default_kernel_grid()
    n_pool = min(len(target_frames), len(world_frames))
    best, best_cell, best_eer, table = None, None, np.inf, {}
    for T in T_grid:
        if T > n_pool:
            continue
        X, y = downsample_training(target_frames, world_frames, T, rng_seed)
        for spec in kernel_grid:
            for C in C_grid:
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore", ConvergenceWarning)
                    model = smo_train(X, y, TrainConfig(C, T, rng_seed), spec)
                eer = eer_from_scores(svm_score(val_frames, model), val_labels)
                cell = (spec, C, T)
                table[cell] = eer
                if support_counts is not None:
                    support_counts[cell] = model.n_support
                if eer < best_eer:
                    best, best_cell, best_eer = model, cell, eer
    if best is None:
        raise SvmModelError("no grid cell is feasible for the available frames")
    return best, best_cell, table


def default_kernel_grid() -> list[KernelSpec]:
    grid = [KernelSpec("linear")]
    grid += [KernelSpec("polynomial", degree=d) for d in DEGREE_GRID]
    grid += [KernelSpec("rbf", gamma=g) for g in GAMMA_GRID]
    grid.append(KernelSpec("sigmoid"))
    return grid


# -------------------------------------------------------------- estimator
class SMOClassifier(BaseEstimator, ClassifierMixin):
    """scikit-learn wrapper around :func:`smo_train`; class 1 is the target."""

    def __init__(self, kernel="linear", C=1.0, degree=3, gamma=0.01, tol=SMO_TOL,
                 max_passes=MAX_PASSES, samples_per_class=None, seed=0):
        self.kernel = kernel
        self.C = C
        self.degree = degree
        self.gamma = gamma
        self.tol = tol
        self.max_passes = max_passes
        self.samples_per_class = samples_per_class
        self.seed = seed

    def fit(self, X, y):
        X, y = check_X_y(X, y)
        pos = np.asarray(y).astype(bool)
        if pos.all() or not pos.any():
            raise SvmModelError("SVM training needs both classes")
        T = self.samples_per_class
        if T is not None:
            X, yy = downsample_training(X[pos], X[~pos], T, self.seed)
        else:
            yy = np.where(pos, 1.0, -1.0)
            T = int(min(pos.sum(), (~pos).sum()))
        spec = KernelSpec(self.kernel, self.degree, self.gamma)
        self.model_ = smo_train(X, yy, TrainConfig(self.C, max(T, 2), self.seed), spec,
                                self.tol, self.max_passes)
        self.classes_ = np.array([0, 1])
        self.n_features_in_ = X.shape[1]
        return self

    def decision_function(self, X):
        check_is_fitted(self, "model_")
        return svm_score(check_array(X), self.model_)

    def predict(self, X):
        return (self.decision_function(X) >= 0).astype(int)
