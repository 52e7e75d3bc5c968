"""Dataset ingestion, frame labeling and the bundled synthetic alarm corpus.

A dataset directory holds 16 kHz mono WAV clips plus an annotation CSV with
header ``file,onset_s,offset_s,label``.  ``file`` is the WAV name relative
to the directory.  Frames are labeled by where their window centre falls.
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.signal import butter, lfilter, sosfilt

from .features import (
    SAMPLE_RATE,
    AudioClip,
    FrameSpec,
    append_deltas,
    extract_features,
    read_wav,
    write_wav,
)

log = logging.getLogger(__name__)
ANNOTATION_HEADER = ["file", "onset_s", "offset_s", "label"]


class AnnotationError(ValueError):
    """Raised for malformed annotation files; the message lists offending lines."""


@dataclass(frozen=True, order=True)
class Annotation:
    file: str
    onset_s: float
    offset_s: float
    label: str


@dataclass
class Dataset:
    root: Path
    clips: dict[str, AudioClip]
    annotations: list[Annotation]

    def for_clip(self, clip_id: str) -> list[Annotation]:
        return [a for a in self.annotations if a.file == clip_id]


def read_annotations(path) -> list[Annotation]:
    """Parse an annotation CSV, reporting every malformed row by line number."""
    path = Path(path)
    rows, problems = [], []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            return []
        if [h.strip() for h in header] != ANNOTATION_HEADER:
            raise AnnotationError(f"{path}:1: expected header {','.join(ANNOTATION_HEADER)}")
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 4:
                problems.append(f"{path}:{lineno}: expected 4 fields, got {len(row)}")
                continue
            name, on, off, label = (c.strip() for c in row)
            try:
                on_f, off_f = float(on), float(off)
            except ValueError:
                problems.append(f"{path}:{lineno}: onset/offset must be numbers")
                continue
            if not (math.isfinite(on_f) and math.isfinite(off_f)) or not 0 <= on_f < off_f:
                problems.append(f"{path}:{lineno}: need 0 <= onset < offset, got {on_f}, {off_f}")
                continue
            if not name or not label:
                problems.append(f"{path}:{lineno}: file and label must be non-empty")
                continue
            rows.append((lineno, Annotation(name, on_f, off_f, label)))
    if problems:
        raise AnnotationError("malformed annotation rows:\n" + "\n".join(problems))
    return [a for _, a in rows]


def merge_overlaps(annotations) -> list[Annotation]:
    """Merge overlapping rows that share a file and label (with a warning)."""
    out = []
    groups: dict[tuple[str, str], list[Annotation]] = {}
    for a in annotations:
        groups.setdefault((a.file, a.label), []).append(a)
    for (name, label), items in sorted(groups.items()):
        items.sort()
        cur = items[0]
        for a in items[1:]:
            if a.onset_s < cur.offset_s:
                log.warning("merging overlapping %s annotations in %s: %.3f-%.3f and %.3f-%.3f",
                            label, name, cur.onset_s, cur.offset_s, a.onset_s, a.offset_s)
                cur = Annotation(name, cur.onset_s, max(cur.offset_s, a.offset_s), label)
            else:
                out.append(cur)
                cur = a
        out.append(cur)
    return sorted(out)


def write_annotations(path, annotations):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(ANNOTATION_HEADER)
        for a in annotations:
            w.writerow([a.file, repr(a.onset_s), repr(a.offset_s), a.label])


def ingest(dataset_dir, annotations_file="annotations.csv") -> Dataset:
    """Load every WAV under ``dataset_dir`` and its annotations.

    Raises if an annotation names a missing clip or runs past the clip end.
    """
    root = Path(dataset_dir)
    if not root.is_dir():
        raise FileNotFoundError(f"dataset directory {root} does not exist")
    ann_path = Path(annotations_file)
    if not ann_path.is_absolute():
        ann_path = root / ann_path
    if not ann_path.exists():
        raise FileNotFoundError(f"annotation file {ann_path} does not exist")
    clips = {p.relative_to(root).as_posix(): read_wav(p) for p in sorted(root.rglob("*.wav"))}
    anns = merge_overlaps(read_annotations(ann_path))
    bad = []
    for a in anns:
        if a.file not in clips:
            bad.append(f"annotation references missing clip {a.file!r}")
        elif a.offset_s > clips[a.file].duration + 1e-9:
            bad.append(f"{a.file}: offset {a.offset_s} s exceeds clip duration "
                       f"{clips[a.file].duration} s")
    if bad:
        raise AnnotationError("\n".join(bad))
    return Dataset(root, clips, anns)


def label_frames(n_frames: int, annotations, target_label: str, spec: FrameSpec = FrameSpec()):
    """Boolean target mask: the window centre lies in ``[onset, offset)`` of a target row."""
    centres = spec.center_times(n_frames)
    mask = np.zeros(n_frames, dtype=bool)
    for a in annotations:
        if a.label == target_label:
            mask |= (centres >= a.onset_s) & (centres < a.offset_s)
    return mask


@dataclass
class LabeledFrameSet:
    features: np.ndarray
    labels: np.ndarray
    clip_ids: np.ndarray
    frame_index: np.ndarray

    def __post_init__(self):
        n = self.features.shape[0]
        if not (self.labels.shape[0] == self.clip_ids.shape[0] == self.frame_index.shape[0] == n):
            raise ValueError("every frame needs exactly one label and provenance entry")

    def __len__(self):
        return self.features.shape[0]

    def subset(self, mask) -> "LabeledFrameSet":
        return LabeledFrameSet(self.features[mask], self.labels[mask], self.clip_ids[mask],
                               self.frame_index[mask])

    def clips(self) -> list[str]:
        return list(dict.fromkeys(self.clip_ids.tolist()))

    def sequences(self):
        """Per-clip ``(features, labels)`` in clip order."""
        out = []
        for c in self.clips():
            m = self.clip_ids == c
            out.append((self.features[m], self.labels[m]))
        return out

    def with_features(self, features) -> "LabeledFrameSet":
        return LabeledFrameSet(np.asarray(features), self.labels, self.clip_ids, self.frame_index)


def build_frame_set(dataset: Dataset, target_label: str, deltas: bool = True,
                    spec: FrameSpec = FrameSpec()) -> LabeledFrameSet:
    feats, labels, ids, idx = [], [], [], []
    for cid, clip in dataset.clips.items():
        f = extract_features(clip, spec)
        if deltas:
            f = append_deltas(f)
        feats.append(f)
        labels.append(label_frames(f.shape[0], dataset.for_clip(cid), target_label, spec))
        ids.append(np.full(f.shape[0], cid, dtype=object))
        idx.append(np.arange(f.shape[0]))
    if not feats:
        raise ValueError(f"no clips found under {dataset.root}")
    return LabeledFrameSet(np.vstack(feats), np.concatenate(labels), np.concatenate(ids),
                           np.concatenate(idx))


def split_by_clip(frames: LabeledFrameSet, fraction: float, rng_seed):
    """Hold out ``fraction`` of the clips (not frames); returns ``(fit, held_out)``."""
    clips = frames.clips()
    rng = np.random.default_rng(rng_seed)
    order = rng.permutation(len(clips))
    n_out = max(1, int(round(fraction * len(clips))))
    held = {clips[i] for i in order[:n_out]}
    mask = np.array([c in held for c in frames.clip_ids])
    return frames.subset(~mask), frames.subset(mask)


# ---------------------------------------------------------------- synthetic
TARGET_LABEL = "alarm"


def _room(rng, x):
    """Short exponentially decaying random impulse response."""
    n = int(rng.integers(80, 800))
    ir = rng.normal(size=n) * np.exp(-np.arange(n) / (n / rng.uniform(3.0, 6.0)))
    ir[0] = 1.0
    ir /= np.sqrt(np.sum(ir**2))
    return lfilter(ir, [1.0], x)


def _noise_floor(rng, n, level):
    sos = butter(2, [rng.uniform(100, 400), rng.uniform(3000, 7000)], "bandpass",
                 fs=SAMPLE_RATE, output="sos")
    return level * sosfilt(sos, rng.normal(size=n))


def _target_clip(rng, n):
    """Beeping alarm over a quiet floor; returns samples and the beep intervals."""
    t = np.arange(n) / SAMPLE_RATE
    x = _noise_floor(rng, n, 0.01)
    f0 = rng.uniform(2600, 3400)
    two_tone = rng.random() < 0.5
    f1 = f0 * rng.uniform(1.15, 1.3)
    on, off = rng.uniform(0.15, 0.35), rng.uniform(0.1, 0.3)
    start = rng.uniform(0.2, 1.0)
    stop = min(n / SAMPLE_RATE - 0.2, start + rng.uniform(1.8, 2.8))
    gain = rng.uniform(0.2, 0.6)
    tone = np.zeros(n)
    intervals = []
    s, k = start, 0
    while s + on <= stop:
        m = (t >= s) & (t < s + on)
        f = f1 if two_tone and k % 2 else f0
        ramp = np.minimum(1.0, np.minimum(t[m] - s, s + on - t[m]) / 0.005)
        tone[m] += ramp * (np.sin(2 * np.pi * f * t[m]) + 0.3 * np.sin(2 * np.pi * 2 * f * t[m]))
        intervals.append((round(s, 6), round(s + on, 6)))
        s += on + off
        k += 1
    x += gain * _room(rng, tone)
    return x, intervals


def _world_clip(rng, n):
    t = np.arange(n) / SAMPLE_RATE
    kind = int(rng.integers(3))
    if kind == 0:
        lo = rng.uniform(100, 2000)
        sos = butter(4, [lo, lo * rng.uniform(1.5, 4.0)], "bandpass", fs=SAMPLE_RATE, output="sos")
        x = sosfilt(sos, rng.normal(size=n)) * rng.uniform(0.2, 1.0)
    elif kind == 1:
        f_a, f_b = rng.uniform(200, 1500), rng.uniform(4000, 7000)
        if rng.random() < 0.5:
            f_a, f_b = f_b, f_a
        period = rng.uniform(0.5, 2.0)
        phase = 2 * np.pi * np.cumsum(f_a + (f_b - f_a) * ((t / period) % 1.0)) / SAMPLE_RATE
        x = 0.4 * np.sin(phase)
    else:
        x = np.zeros(n)
        for _ in range(int(rng.integers(3, 7))):
            f = rng.uniform(150, 1600)
            x += rng.uniform(0.05, 0.2) * np.sin(2 * np.pi * f * t + rng.uniform(0, 2 * np.pi))
        x *= 0.5 + 0.5 * np.sin(2 * np.pi * rng.uniform(0.2, 2.0) * t)
    x = _room(rng, x) + _noise_floor(rng, n, 0.01)
    return x


def make_synthetic_dataset(seed, out_dir, n_target=(24, 12), n_world=(24, 12),
                           duration_s: float = 4.0) -> dict[str, Path]:
    """Write ``train/`` and ``test/`` folders of alarm and world clips.

    Returns the two directory paths.  Output is a pure function of ``seed``.
    """
    out = Path(out_dir)
    rng = np.random.default_rng(seed)
    n = int(round(duration_s * SAMPLE_RATE))
    dirs = {}
    for split, n_t, n_w in (("train", n_target[0], n_world[0]), ("test", n_target[1], n_world[1])):
        d = out / split
        d.mkdir(parents=True, exist_ok=True)
        anns = []
        for i in range(n_t):
            x, intervals = _target_clip(rng, n)
            name = f"alarm_{i:03d}.wav"
            write_wav(d / name, np.clip(x, -1, 1))
            anns += [Annotation(name, a, b, TARGET_LABEL) for a, b in intervals]
        for i in range(n_w):
            x = _world_clip(rng, n)
            write_wav(d / f"world_{i:03d}.wav", np.clip(x / max(1.0, np.max(np.abs(x))), -1, 1))
        write_annotations(d / "annotations.csv", anns)
        dirs[split] = d
    return dirs
