"""Feed-forward and recurrent frame classifiers with a single sigmoid output.

Inference goes through :func:`dnn_kernel` / :func:`rnn_kernel`, written
against the counting arithmetic of :mod:`aedcost.ops`.  Training uses plain
numpy backpropagation (:func:`dnn_loss_and_grads`, :func:`rnn_loss_and_grads`)
on the binary cross-entropy of the output logit.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .ops import FloatArith

FORMAT_VERSION = 1
ACTIVATIONS = ("sigmoid", "relu", "tanh")
DNN_GRID = {"L": (1, 2, 3, 4), "H": (10, 25, 50, 100, 150), "activation": ("sigmoid", "relu")}
RNN_GRID = {"L": (1, 2, 3), "H": (10, 25, 50, 100, 150)}


class NetworkError(ValueError):
    """Raised for inconsistent network parameters."""


class TrainingDivergedError(RuntimeError):
    """Raised when the training loss becomes non-finite."""


def activation(kind: str, v):
    v = np.asarray(v, dtype=np.float64)
    if kind == "sigmoid":
        return expit(v)
    if kind == "relu":
        return np.maximum(v, 0.0)
    if kind == "tanh":
        return np.tanh(v)
    raise NetworkError(f"unknown activation {kind!r}")


def _act_grad(kind, pre, post):
    if kind == "sigmoid":
        return post * (1.0 - post)
    if kind == "relu":
        return (pre > 0).astype(np.float64)
    return 1.0 - post**2


@dataclass(frozen=True)
class NetworkParams:
    """Weights of an ``L``-layer, ``H``-unit network over ``D`` inputs.

    ``weights[i]`` has shape ``(H, fan_in)``.  For recurrent nets
    ``recurrent[i]`` is the ``(H, H)`` matrix applied to the layer's previous
    state.  The output unit is ``sigmoid(w_out . h + b_out)``.
    """

    activation: str
    weights: tuple
    biases: tuple
    w_out: np.ndarray
    b_out: float
    recurrent: tuple | None = None

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise NetworkError(f"unknown activation {self.activation!r}")
        W = tuple(np.atleast_2d(np.asarray(w, dtype=np.float64)).copy() for w in self.weights)
        b = tuple(np.asarray(v, dtype=np.float64).ravel().copy() for v in self.biases)
        wo = np.asarray(self.w_out, dtype=np.float64).ravel().copy()
        if not W or len(W) != len(b):
            raise NetworkError("need one bias vector per weight matrix")
        H = W[0].shape[0]
        for i, (w, bb) in enumerate(zip(W, b)):
            fan_in = W[0].shape[1] if i == 0 else H
            if w.shape != (H, fan_in) or bb.shape != (H,):
                raise NetworkError(f"layer {i + 1} has inconsistent shapes {w.shape}, {bb.shape}")
        if wo.shape != (H,):
            raise NetworkError("output weights must have one entry per hidden unit")
        arrays = list(W) + list(b) + [wo]
        R = None
        if self.recurrent is not None:
            R = tuple(np.atleast_2d(np.asarray(r, dtype=np.float64)).copy() for r in self.recurrent)
            if len(R) != len(W) or any(r.shape != (H, H) for r in R):
                raise NetworkError("recurrent matrices must be (H, H), one per layer")
            arrays += list(R)
        if not all(np.all(np.isfinite(a)) for a in arrays) or not math.isfinite(self.b_out):
            raise NetworkError("network parameters must be finite")
        for a in arrays:
            a.setflags(write=False)
        object.__setattr__(self, "weights", W)
        object.__setattr__(self, "biases", b)
        object.__setattr__(self, "w_out", wo)
        object.__setattr__(self, "b_out", float(self.b_out))
        object.__setattr__(self, "recurrent", R)

    @property
    def is_recurrent(self) -> bool:
        return self.recurrent is not None

    @property
    def L(self) -> int:
        return len(self.weights)

    @property
    def H(self) -> int:
        return self.weights[0].shape[0]

    @property
    def D(self) -> int:
        return self.weights[0].shape[1]

    @property
    def family(self) -> str:
        return "rnn-tanh" if self.is_recurrent else f"dnn-{self.activation}"

    def flat(self) -> list[np.ndarray]:
        out = list(self.weights) + list(self.biases)
        if self.is_recurrent:
            out += list(self.recurrent)
        return out + [self.w_out, np.array([self.b_out])]

    def with_flat(self, arrays) -> "NetworkParams":
        L = self.L
        W, b = arrays[:L], arrays[L:2 * L]
        rest = arrays[2 * L:]
        R = None
        if self.is_recurrent:
            R, rest = rest[:L], rest[L:]
        return NetworkParams(self.activation, tuple(W), tuple(b), rest[0], float(rest[1][0]),
                             None if R is None else tuple(R))

    def export(self) -> dict[str, np.ndarray]:
        P = {"w_out": self.w_out, "b_out": np.array(self.b_out)}
        for i in range(self.L):
            P[f"W{i}"] = self.weights[i]
            P[f"b{i}"] = self.biases[i]
            if self.is_recurrent:
                P[f"R{i}"] = self.recurrent[i]
        if self.is_recurrent:
            P["WR0"] = np.hstack([self.weights[0], self.recurrent[0]])
        return P

    def to_dict(self) -> dict:
        d = {
            "format_version": FORMAT_VERSION,
            "kind": "network",
            "architecture": {
                "recurrent": self.is_recurrent,
                "activation": self.activation,
                "L": self.L,
                "H": self.H,
                "D": self.D,
            },
            "weights": [w.tolist() for w in self.weights],
            "biases": [v.tolist() for v in self.biases],
            "w_out": self.w_out.tolist(),
            "b_out": self.b_out,
        }
        if self.is_recurrent:
            d["recurrent"] = [r.tolist() for r in self.recurrent]
        return d

    @classmethod
    def from_dict(cls, d) -> "NetworkParams":
        if d.get("kind") != "network":
            raise NetworkError(f"not a network document (kind={d.get('kind')!r})")
        if d.get("format_version") != FORMAT_VERSION:
            raise NetworkError(f"unsupported network format version {d.get('format_version')}")
        arch = d["architecture"]
        p = cls(
            arch["activation"],
            tuple(np.array(w) for w in d["weights"]),
            tuple(np.array(v) for v in d["biases"]),
            np.array(d["w_out"]),
            d["b_out"],
            tuple(np.array(r) for r in d["recurrent"]) if arch["recurrent"] else None,
        )
        if (p.L, p.H, p.D) != (arch["L"], arch["H"], arch["D"]):
            raise NetworkError("declared architecture disagrees with the arrays")
        return p

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def load(cls, path) -> "NetworkParams":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


WIDE_PARAMS = frozenset({"b_out"} | {f"b{i}" for i in range(64)})


def init_network(D: int, L: int, H: int, activation_kind: str, rng_seed, recurrent=False) -> NetworkParams:
    """Glorot-uniform weights, zero biases."""
    rng = np.random.default_rng(rng_seed)

    def glorot(fan_out, fan_in):
        lim = math.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-lim, lim, size=(fan_out, fan_in))

    W = tuple(glorot(H, D if i == 0 else H) for i in range(L))
    b = tuple(np.zeros(H) for _ in range(L))
    R = tuple(glorot(H, H) for _ in range(L)) if recurrent else None
    w_out = glorot(1, H).ravel()
    return NetworkParams(activation_kind, W, b, w_out, 0.0, R)


# ------------------------------------------------------------------ kernels
def _hidden(ar, kind, z):
    if kind == "relu":
        return ar.relu(z)
    return ar.nonlin(kind, z)


def dnn_kernel(ar, x, P, L: int, kind: str):
    """Output probability for each row of ``x``."""
    ar.begin(x.shape[0])
    h = x
    for i in range(L):
        h = _hidden(ar, kind, ar.add(ar.matvec(P[f"W{i}"], h), P[f"b{i}"][None, :]))
    z = ar.add(ar.rowdot(h, P["w_out"][None, :]), P["b_out"])
    return ar.nonlin("sigmoid", z)


def rnn_kernel(ar, seqs, P, L: int):
    """Per-frame output probabilities for a batch ``(B, T, D)`` of sequences.

    The first layer applies its stacked ``[W_f W_r]`` to ``[x_t; h_{t-1}]``
    in one product; deeper layers form the two products separately.  Initial
    states are zero.
    """
    B, T, _ = seqs.shape
    ar.begin(B)
    H = P["W0"].shape[0]
    state = [ar.input(np.zeros((B, H))) for _ in range(L)]
    outs = []
    for t in range(T):
        inp = seqs[:, t, :]
        for i in range(L):
            if i == 0:
                z = ar.matvec(P["WR0"], np.concatenate([inp, state[0]], axis=1))
            else:
                z = ar.add(ar.matvec(P[f"W{i}"], inp), ar.matvec(P[f"R{i}"], state[i]))
            h = ar.nonlin("tanh", ar.add(z, P[f"b{i}"][None, :]))
            state[i] = h
            inp = h
        z = ar.add(ar.rowdot(inp, P["w_out"][None, :]), P["b_out"])
        outs.append(ar.nonlin("sigmoid", z))
    return np.stack(outs, axis=1)


def dnn_forward(x, params: NetworkParams, arith=None):
    if params.is_recurrent:
        raise NetworkError("use rnn_forward for recurrent networks")
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    xb = np.atleast_2d(x)
    if xb.shape[1] != params.D:
        raise ValueError(f"input has {xb.shape[1]} dims, network expects {params.D}")
    out = dnn_kernel(arith or FloatArith(), xb, params.export(), params.L, params.activation)
    return float(out[0]) if single else out


def rnn_forward(seq, params: NetworkParams, arith=None):
    """Per-frame probabilities for one ``(T, D)`` sequence or a ``(B, T, D)`` batch."""
    if not params.is_recurrent:
        raise NetworkError("network has no recurrent matrices")
    s = np.asarray(seq, dtype=np.float64)
    single = s.ndim == 2
    sb = s[None] if single else s
    if sb.shape[2] != params.D:
        raise ValueError(f"input has {sb.shape[2]} dims, network expects {params.D}")
    out = rnn_kernel(arith or FloatArith(), sb, params.export(), params.L)
    return out[0] if single else out


# ----------------------------------------------------------- backprop: DNN
def _bce_logits(z, y):
    return float(np.mean(np.logaddexp(0.0, z) - y * z))


def dnn_loss_and_grads(params: NetworkParams, X, y, masks=None):
    """Mean cross-entropy and its gradient, ordered as ``params.flat()``.

    ``masks[i]`` multiplies the output of hidden layer ``i`` (inverted
    dropout already folded in); ``None`` disables dropout.
    """
    X = np.atleast_2d(X)
    y = np.asarray(y, dtype=np.float64).ravel()
    n = X.shape[0]
    L, kind = params.L, params.activation
    pres, acts, outs = [], [], [X]
    h = X
    for i in range(L):
        a = h @ params.weights[i].T + params.biases[i]
        g = activation(kind, a)
        pres.append(a)
        acts.append(g)
        h = g * masks[i] if masks is not None else g
        outs.append(h)
    z = h @ params.w_out + params.b_out
    loss = _bce_logits(z, y)
    dz = (expit(z) - y) / n
    dW, db = [None] * L, [None] * L
    dw_out = h.T @ dz
    db_out = dz.sum()
    dh = np.outer(dz, params.w_out)
    for i in reversed(range(L)):
        if masks is not None:
            dh = dh * masks[i]
        da = dh * _act_grad(kind, pres[i], acts[i])
        dW[i] = da.T @ outs[i]
        db[i] = da.sum(axis=0)
        if i:
            dh = da @ params.weights[i]
    return loss, dW + db + [dw_out, np.array([db_out])]


# ----------------------------------------------------------- backprop: RNN
def rnn_loss_and_grads(params: NetworkParams, seq, y):
    """Mean cross-entropy over one sequence and full BPTT gradients."""
    x = np.atleast_2d(seq)
    y = np.asarray(y, dtype=np.float64).ravel()
    T = x.shape[0]
    L, H = params.L, params.H
    W, R, b = params.weights, params.recurrent, params.biases
    hs = [np.zeros((T + 1, H)) for _ in range(L)]  # hs[l][t + 1] is the state at t
    for t in range(T):
        inp = x[t]
        for i in range(L):
            hs[i][t + 1] = np.tanh(W[i] @ inp + R[i] @ hs[i][t] + b[i])
            inp = hs[i][t + 1]
    top = hs[L - 1][1:]
    z = top @ params.w_out + params.b_out
    loss = _bce_logits(z, y)
    dz = (expit(z) - y) / T
    dW = [np.zeros_like(w) for w in W]
    dR = [np.zeros_like(r) for r in R]
    db = [np.zeros(H) for _ in range(L)]
    dw_out = top.T @ dz
    db_out = dz.sum()
    carry = [np.zeros(H) for _ in range(L)]
    for t in reversed(range(T)):
        dh = dz[t] * params.w_out
        for i in reversed(range(L)):
            h_t = hs[i][t + 1]
            da = (dh + carry[i]) * (1.0 - h_t**2)
            below = x[t] if i == 0 else hs[i - 1][t + 1]
            dW[i] += np.outer(da, below)
            dR[i] += np.outer(da, hs[i][t])
            db[i] += da
            carry[i] = R[i].T @ da
            dh = W[i].T @ da
    return loss, dW + db + dR + [dw_out, np.array([db_out])]


def global_norm(grads) -> float:
    return math.sqrt(sum(float(np.sum(g * g)) for g in grads))


def clip_by_norm(grads, max_norm: float):
    """Rescale ``grads`` to ``max_norm`` when their joint norm exceeds it."""
    norm = global_norm(grads)
    if norm > max_norm:
        return [g * (max_norm / norm) for g in grads], True
    return list(grads), False


# ---------------------------------------------------------------- training
@dataclass(frozen=True)
class TrainSpecDnn:
    minibatch: int = 100
    dropout: float = 0.2
    patience: int = 20
    rho: float = 0.95
    eps: float = 1e-6
    max_epochs: int = 200

    def __post_init__(self):
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")
        if self.minibatch < 1 or self.patience < 1 or self.max_epochs < 0:
            raise ValueError("minibatch and patience must be positive, max_epochs non-negative")


@dataclass(frozen=True)
class TrainSpecRnn:
    lr: float = 0.001
    decay_iters: int = 1000
    momentum: float = 0.9
    subsequence: int = 100
    clip_norm: float = 10.0
    patience: int = 20
    max_epochs: int = 200

    def __post_init__(self):
        if min(self.lr, self.decay_iters, self.momentum, self.subsequence, self.clip_norm,
               self.patience) <= 0:
            raise ValueError("all RNN training settings must be positive")

    def lr_at(self, iteration: int) -> float:
        """Learning rate after ``iteration`` updates; zero once decay completes."""
        return self.lr * max(0.0, 1.0 - iteration / self.decay_iters)


@dataclass
class TrainHistory:
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    best_epoch: int = 0
    clipped: int = 0


def _check_finite(loss, epoch, where):
    if not math.isfinite(loss):
        raise TrainingDivergedError(f"non-finite {where} loss {loss} at epoch {epoch}")


def dnn_validation_loss(params, X, y) -> float:
    P = params.export()
    h = np.atleast_2d(X)
    for i in range(params.L):
        h = activation(params.activation, h @ P[f"W{i}"].T + P[f"b{i}"])
    return _bce_logits(h @ params.w_out + params.b_out, np.asarray(y, dtype=np.float64))


def train_dnn(X, y, X_val, y_val, spec: TrainSpecDnn = TrainSpecDnn(), L: int = 2, H: int = 50,
              activation_kind: str = "sigmoid", rng_seed=0, return_history=False):
    """Minibatch ADADELTA with inverted dropout and patience-based early stopping.

    Returns the parameters from the epoch with the lowest validation loss.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    y = np.asarray(y, dtype=np.float64).ravel()
    rng = np.random.default_rng(rng_seed)
    params = init_network(X.shape[1], L, H, activation_kind, rng)
    hist = TrainHistory()
    best = params
    best_val = dnn_validation_loss(params, X_val, y_val)
    _check_finite(best_val, 0, "validation")
    hist.val_loss.append(best_val)
    flat = [a.copy() for a in params.flat()]
    eg2 = [np.zeros_like(a) for a in flat]
    edx2 = [np.zeros_like(a) for a in flat]
    keep = 1.0 - spec.dropout
    stale = 0
    n = X.shape[0]
    for epoch in range(1, spec.max_epochs + 1):
        order = rng.permutation(n)
        losses = []
        for start in range(0, n, spec.minibatch):
            idx = order[start:start + spec.minibatch]
            masks = None
            if spec.dropout > 0:
                masks = [(rng.random((idx.size, H)) < keep) / keep for _ in range(L)]
            loss, grads = dnn_loss_and_grads(params, X[idx], y[idx], masks)
            _check_finite(loss, epoch, "training")
            losses.append(loss)
            for k, g in enumerate(grads):
                eg2[k] = spec.rho * eg2[k] + (1 - spec.rho) * g * g
                dx = -np.sqrt(edx2[k] + spec.eps) / np.sqrt(eg2[k] + spec.eps) * g
                edx2[k] = spec.rho * edx2[k] + (1 - spec.rho) * dx * dx
                flat[k] = flat[k] + dx
            params = params.with_flat(flat)
        val = dnn_validation_loss(params, X_val, y_val)
        _check_finite(val, epoch, "validation")
        hist.train_loss.append(float(np.mean(losses)))
        hist.val_loss.append(val)
        if val < best_val:
            best, best_val, stale = params, val, 0
            hist.best_epoch = epoch
        else:
            stale += 1
            if stale >= spec.patience:
                break
    return (best, hist) if return_history else best


def split_subsequences(seq, labels, length: int):
    """Cut a sequence into consecutive pieces of at most ``length`` frames."""
    seq = np.atleast_2d(seq)
    labels = np.asarray(labels).ravel()
    return [(seq[s:s + length], labels[s:s + length]) for s in range(0, seq.shape[0], length)]


def rnn_validation_loss(params, sequences, labels) -> float:
    total, count = 0.0, 0
    for s, y in zip(sequences, labels):
        p = rnn_forward(s, params)
        y = np.asarray(y, dtype=np.float64)
        with np.errstate(divide="ignore"):
            nll = -(y * np.log(np.maximum(p, 1e-300)) + (1 - y) * np.log(np.maximum(1 - p, 1e-300)))
        total += float(nll.sum())
        count += y.size
    return total / max(count, 1)


def train_rnn(sequences, labels, val_sequences, val_labels, spec: TrainSpecRnn = TrainSpecRnn(),
              L: int = 1, H: int = 25, rng_seed=0, return_history=False):
    """Truncated BPTT, one subsequence per update, SGD with momentum and clipping.

    Each epoch visits every training subsequence once in random order.
    Training stops at ``max_epochs``, after ``patience`` epochs without
    validation improvement, or once the learning rate has decayed to zero.
    """
    rng = np.random.default_rng(rng_seed)
    D = np.atleast_2d(sequences[0]).shape[1]
    params = init_network(D, L, H, "tanh", rng, recurrent=True)
    pieces = []
    for s, y in zip(sequences, labels):
        pieces += split_subsequences(s, y, spec.subsequence)
    hist = TrainHistory()
    best = params
    best_val = rnn_validation_loss(params, val_sequences, val_labels)
    hist.val_loss.append(best_val)
    flat = [a.copy() for a in params.flat()]
    vel = [np.zeros_like(a) for a in flat]
    it = 0
    stale = 0
    for epoch in range(1, spec.max_epochs + 1):
        losses = []
        for k in rng.permutation(len(pieces)):
            lr = spec.lr_at(it)
            if lr <= 0:
                break
            s, y = pieces[k]
            loss, grads = rnn_loss_and_grads(params, s, y)
            _check_finite(loss, epoch, "training")
            losses.append(loss)
            grads, clipped = clip_by_norm(grads, spec.clip_norm)
            hist.clipped += clipped
            for j, g in enumerate(grads):
                vel[j] = spec.momentum * vel[j] - lr * g
                flat[j] = flat[j] + vel[j]
            params = params.with_flat(flat)
            it += 1
        if not losses:
            break
        val = rnn_validation_loss(params, val_sequences, val_labels)
        _check_finite(val, epoch, "validation")
        hist.train_loss.append(float(np.mean(losses)))
        hist.val_loss.append(val)
        if val < best_val:
            best, best_val, stale = params, val, 0
            hist.best_epoch = epoch
        else:
            stale += 1
            if stale >= spec.patience:
                break
    return (best, hist) if return_history else best


def select_network(X, y, X_val, y_val, grid=None, spec: TrainSpecDnn = TrainSpecDnn(), rng_seed=0):
    """Exhaustive feed-forward grid by validation frame EER.

    Returns ``(best_params, {(L, H, activation): eer})``.
    """
    from .evaluation import eer_from_scores

    grid = grid or DNN_GRID
    best, best_eer, table = None, np.inf, {}
    for act in grid["activation"]:
        for L in grid["L"]:
            for H in grid["H"]:
                p = train_dnn(X, y, X_val, y_val, spec, L, H, act, rng_seed)
                eer = eer_from_scores(dnn_forward(X_val, p), y_val)
                table[(L, H, act)] = eer
                if eer < best_eer:
                    best, best_eer = p, eer
    return best, table


def select_rnn(sequences, labels, val_sequences, val_labels, grid=None,
               spec: TrainSpecRnn = TrainSpecRnn(), rng_seed=0):
    """Recurrent counterpart of :func:`select_network`; keys are ``(L, H)``."""
    from .evaluation import eer_from_scores

    grid = grid or RNN_GRID
    y_all = np.concatenate([np.asarray(v).ravel() for v in val_labels])
    best, best_eer, table = None, np.inf, {}
    for L in grid["L"]:
        for H in grid["H"]:
            p = train_rnn(sequences, labels, val_sequences, val_labels, spec, L, H, rng_seed)
            scores = np.concatenate([rnn_forward(s, p) for s in val_sequences])
            eer = eer_from_scores(scores, y_all)
            table[(L, H)] = eer
            if eer < best_eer:
                best, best_eer = p, eer
    return best, table


# ------------------------------------------------------------- estimators
def _holdout(n, fraction, rng):
    idx = rng.permutation(n)
    n_val = max(1, int(round(fraction * n)))
    return idx[n_val:], idx[:n_val]


class DNNClassifier(BaseEstimator, ClassifierMixin):
    """Feed-forward frame classifier; ``decision_function`` is the output probability."""

    def __init__(self, hidden_layers=2, hidden_units=50, activation="sigmoid", dropout=0.2,
                 batch_size=100, patience=20, max_epochs=200, validation_fraction=0.2, seed=0):
        self.hidden_layers = hidden_layers
        self.hidden_units = hidden_units
        self.activation = activation
        self.dropout = dropout
        self.batch_size = batch_size
        self.patience = patience
        self.max_epochs = max_epochs
        self.validation_fraction = validation_fraction
        self.seed = seed

    def fit(self, X, y, X_val=None, y_val=None):
        X, y = check_X_y(X, y)
        y = np.asarray(y, dtype=np.float64)
        if X_val is None:
            tr, va = _holdout(X.shape[0], self.validation_fraction, np.random.default_rng(self.seed))
            X, X_val, y, y_val = X[tr], X[va], y[tr], y[va]
        spec = TrainSpecDnn(self.batch_size, self.dropout, self.patience, max_epochs=self.max_epochs)
        self.params_ = train_dnn(X, y, X_val, y_val, spec, self.hidden_layers, self.hidden_units,
                                 self.activation, self.seed)
        self.classes_ = np.array([0, 1])
        self.n_features_in_ = X.shape[1]
        return self

    def decision_function(self, X):
        check_is_fitted(self, "params_")
        return dnn_forward(check_array(X), self.params_)

    def predict_proba(self, X):
        p = self.decision_function(X)
        return np.column_stack([1.0 - p, p])

    def predict(self, X):
        return (self.decision_function(X) >= 0.5).astype(int)


def _group_runs(groups, n):
    if groups is None:
        return [np.arange(n)]
    groups = np.asarray(groups)
    _, first = np.unique(groups, return_index=True)
    return [np.flatnonzero(groups == groups[i]) for i in sorted(first)]


class RNNClassifier(BaseEstimator, ClassifierMixin):
    """Recurrent frame classifier; ``groups`` marks which frames form one sequence."""

    def __init__(self, hidden_layers=1, hidden_units=25, lr=0.001, decay_iters=1000, momentum=0.9,
                 subsequence=100, clip_norm=10.0, patience=20, max_epochs=200, seed=0):
        self.hidden_layers = hidden_layers
        self.hidden_units = hidden_units
        self.lr = lr
        self.decay_iters = decay_iters
        self.momentum = momentum
        self.subsequence = subsequence
        self.clip_norm = clip_norm
        self.patience = patience
        self.max_epochs = max_epochs
        self.seed = seed

    def _spec(self):
        return TrainSpecRnn(self.lr, self.decay_iters, self.momentum, self.subsequence,
                            self.clip_norm, self.patience, self.max_epochs)

    def fit(self, X, y, groups=None, val_sequences=None, val_labels=None):
        X, y = check_X_y(X, y)
        runs = _group_runs(groups, X.shape[0])
        seqs = [X[r] for r in runs]
        labs = [np.asarray(y, dtype=np.float64)[r] for r in runs]
        if val_sequences is None:
            val_sequences, val_labels = seqs, labs
        self.params_ = train_rnn(seqs, labs, val_sequences, val_labels, self._spec(),
                                 self.hidden_layers, self.hidden_units, self.seed)
        self.classes_ = np.array([0, 1])
        self.n_features_in_ = X.shape[1]
        return self

    def decision_function(self, X, groups=None):
        check_is_fitted(self, "params_")
        X = check_array(X)
        out = np.empty(X.shape[0])
        for r in _group_runs(groups, X.shape[0]):
            out[r] = rnn_forward(X[r], self.params_)
        return out

    def predict(self, X, groups=None):
        return (self.decision_function(X, groups) >= 0.5).astype(int)

