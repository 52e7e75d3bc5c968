"""Threshold-sweep detection metrics: FA/MD rates, DET curves and the EER.

A frame is detected as target when ``score >= threshold``.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import ndtri

PROBIT_CLAMP = 1e-6


class SingleClassError(ValueError):
    """Raised when DET/EER is requested without both target and non-target frames."""


def _check_scored(scores, labels):
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(labels).ravel().astype(bool)
    if s.shape != y.shape:
        raise ValueError("scores and labels must have equal length")
    if not np.all(np.isfinite(s)):
        raise ValueError("scores must be finite")
    return s, y


@dataclass(frozen=True)
class Rates:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def fa_pct(self) -> float:
        neg = self.fp + self.tn
        return 100.0 * self.fp / neg if neg else 0.0

    @property
    def md_pct(self) -> float:
        pos = self.fn + self.tp
        return 100.0 * self.fn / pos if pos else 0.0


def rates_at_threshold(scores, labels, threshold: float) -> Rates:
    s, y = _check_scored(scores, labels)
    detected = s >= threshold
    return Rates(
        tp=int(np.count_nonzero(detected & y)),
        fp=int(np.count_nonzero(detected & ~y)),
        tn=int(np.count_nonzero(~detected & ~y)),
        fn=int(np.count_nonzero(~detected & y)),
    )


@dataclass(frozen=True)
class DetCurve:
    """Operating points sorted by increasing threshold.

    ``thresholds[0]`` is ``-inf`` (everything detected) and ``thresholds[-1]``
    is ``+inf`` (nothing detected).
    """

    thresholds: np.ndarray
    fa_pct: np.ndarray
    md_pct: np.ndarray

    def __post_init__(self):
        for name in ("thresholds", "fa_pct", "md_pct"):
            a = np.asarray(getattr(self, name), dtype=np.float64).copy()
            a.setflags(write=False)
            object.__setattr__(self, name, a)
        if not (self.thresholds.shape == self.fa_pct.shape == self.md_pct.shape):
            raise ValueError("DET arrays must have equal length")

    def __len__(self):
        return self.thresholds.size

    @property
    def nd_fa(self) -> np.ndarray:
        return normal_deviate(self.fa_pct / 100.0)

    @property
    def nd_md(self) -> np.ndarray:
        return normal_deviate(self.md_pct / 100.0)

    def points(self) -> set[tuple[float, float]]:
        return set(zip(self.fa_pct.tolist(), self.md_pct.tolist()))


def sweep_det(scores, labels) -> DetCurve:
    """Operating points at every distinct score plus the two infinite sentinels."""
    s, y = _check_scored(scores, labels)
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise SingleClassError("DET curve needs both target and non-target frames")
    order = np.argsort(s, kind="mergesort")
    s_sorted = s[order]
    y_sorted = y[order]
    distinct, first = np.unique(s_sorted, return_index=True)
    # frames strictly below each distinct score are rejected at that threshold
    pos_below = np.concatenate([[0], np.cumsum(y_sorted)])[first]
    neg_below = first - pos_below
    md = np.concatenate([[0.0], 100.0 * pos_below / n_pos, [100.0]])
    fa = np.concatenate([[100.0], 100.0 * (n_neg - neg_below) / n_neg, [0.0]])
    thr = np.concatenate([[-np.inf], distinct, [np.inf]])
    return DetCurve(thr, fa, md)


# ---------------------------------------------------------------- probit
def normal_deviate(p):
    """Inverse standard normal CDF, with ``p`` clamped to [1e-6, 1 - 1e-6].

    ``scipy.special.ndtri`` evaluates Cephes' piecewise rational
    approximations (relative error near 1e-15 over the clamped range).
    """
    arr = np.clip(np.asarray(p, dtype=np.float64), PROBIT_CLAMP, 1.0 - PROBIT_CLAMP)
    out = ndtri(arr)
    return out if out.ndim else float(out)


# ------------------------------------------------------------------- EER
@dataclass(frozen=True)
class EerResult:
    eer_percent: float
    threshold: float


def equal_error_rate(curve: DetCurve) -> EerResult:
    """Crossing of FA% = MD%, linearly interpolated between operating points."""
    if len(curve) < 2:
        raise SingleClassError("EER needs a curve built from both classes")
    diff = curve.fa_pct - curve.md_pct
    k = int(np.argmax(diff <= 0))
    if diff[k] > 0:
        raise ValueError("malformed DET curve: FA% never falls to MD%")
    if diff[k] == 0:
        return EerResult(float(curve.fa_pct[k]), float(curve.thresholds[k]))
    j = k - 1
    t = diff[j] / (diff[j] - diff[k])
    eer = curve.fa_pct[j] + t * (curve.fa_pct[k] - curve.fa_pct[j])
    lo, hi = curve.thresholds[j], curve.thresholds[k]
    if np.isinf(lo):
        thr = hi
    elif np.isinf(hi):
        thr = lo
    else:
        thr = lo + t * (hi - lo)
    return EerResult(float(eer), float(thr))


def eer_from_scores(scores, labels) -> float:
    return equal_error_rate(sweep_det(scores, labels)).eer_percent


# ---------------------------------------------------------------- export
CSV_COLUMNS = ["threshold", "fa_pct", "md_pct", "nd_fa", "nd_md"]


def export_det(curve: DetCurve, path, fmt: str | None = None):
    """Write a DET curve as CSV or self-contained SVG."""
    if len(curve) == 0:
        raise ValueError("cannot export an empty DET curve")
    path = Path(path)
    fmt = (fmt or path.suffix.lstrip(".") or "csv").lower()
    if fmt == "csv":
        nd_fa, nd_md = curve.nd_fa, curve.nd_md
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(CSV_COLUMNS)
            for row in zip(curve.thresholds, curve.fa_pct, curve.md_pct, nd_fa, nd_md):
                w.writerow([repr(float(v)) for v in row])
    elif fmt == "svg":
        path.write_text(det_svg(curve))
    else:
        raise ValueError(f"unknown DET export format {fmt!r}")


def read_det_csv(path) -> DetCurve:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return DetCurve(
        np.array([float(r["threshold"]) for r in rows]),
        np.array([float(r["fa_pct"]) for r in rows]),
        np.array([float(r["md_pct"]) for r in rows]),
    )


_TICKS_PCT = [0.1, 0.5, 1, 2, 5, 10, 20, 40, 60, 80, 90, 95, 98, 99, 99.5, 99.9]


def det_svg(curve: DetCurve, size: int = 400, title: str = "DET curve") -> str:
    """DET plot in normal-deviate coordinates with the %FA = %MD diagonal."""
    lim = float(normal_deviate(PROBIT_CLAMP))  # most negative deviate
    lo, hi = lim, -lim
    margin = 50
    span = size - 2 * margin

    def px(v):
        return margin + (v - lo) / (hi - lo) * span

    def py(v):
        return size - margin - (v - lo) / (hi - lo) * span

    pts = " ".join(f"{px(a):.2f},{py(b):.2f}" for a, b in zip(curve.nd_fa, curve.nd_md))
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" '
        f'viewBox="0 0 {size} {size}">',
        f"<title>{title}</title>",
        f'<rect x="{margin}" y="{margin}" width="{span}" height="{span}" fill="none" stroke="black"/>',
        f'<line class="diagonal" x1="{px(lo):.2f}" y1="{py(lo):.2f}" x2="{px(hi):.2f}" '
        f'y2="{py(hi):.2f}" stroke="gray" stroke-dasharray="4,4"/>',
    ]
    for t in _TICKS_PCT:
        v = float(normal_deviate(t / 100.0))
        parts.append(f'<text x="{px(v):.2f}" y="{size - margin + 14}" font-size="8" '
                     f'text-anchor="middle">{t:g}</text>')
        parts.append(f'<text x="{margin - 4}" y="{py(v):.2f}" font-size="8" '
                     f'text-anchor="end">{t:g}</text>')
    parts.append(f'<text x="{size / 2}" y="{size - 12}" font-size="10" '
                 f'text-anchor="middle">False alarm (%)</text>')
    parts.append(f'<text x="12" y="{size / 2}" font-size="10" text-anchor="middle" '
                 f'transform="rotate(-90 12 {size / 2})">Missed detection (%)</text>')
    parts.append(f'<polyline class="det" points="{pts}" fill="none" stroke="blue" stroke-width="1.5"/>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
