"""Synthetic drifting feature streams and their CSV interchange format.

Each object class is a Gaussian cluster in feature space. A demonstration
for class ``c`` at task ``t`` mixes positive frames drawn from that cluster
(translated by ``t * drift`` and with spread inflated by ``1 + t * inflation``)
with negative frames drawn from the other active classes at the same task and
from one shared background cluster.

A frame's ``class_id`` is the class of the demonstration it belongs to;
``binary_label`` says whether the frame actually shows that class.
"""

import csv
import math
from dataclasses import dataclass, field

import numpy as np


class StreamFormatError(ValueError):
    """A stream file violates the documented CSV layout."""

    def __init__(self, message, line=None):
        self.line = line
        super().__init__(message if line is None else f"line {line}: {message}")


@dataclass(frozen=True)
class LabeledExample:
    x: np.ndarray
    class_id: int
    binary_label: int

    def __post_init__(self):
        x = np.asarray(self.x, dtype=np.float64)
        if x.ndim != 1:
            raise ValueError("a feature vector is one-dimensional")
        if not np.all(np.isfinite(x)):
            raise ValueError("feature vector has non-finite entries")
        if self.binary_label not in (0, 1):
            raise ValueError("binary_label must be 0 or 1")
        if self.class_id < 0:
            raise ValueError("class_id must be nonnegative")
        object.__setattr__(self, "x", x)

    def __eq__(self, other):
        return (isinstance(other, LabeledExample) and self.class_id == other.class_id
                and self.binary_label == other.binary_label and np.array_equal(self.x, other.x))


@dataclass
class Demonstration:
    task_id: int
    class_id: int
    frames: list

    def __post_init__(self):
        if self.frames:
            d = len(self.frames[0].x)
            if any(len(f.x) != d for f in self.frames):
                raise ValueError("all frames of a demonstration share one dimension")

    @property
    def d(self):
        return len(self.frames[0].x) if self.frames else 0

    def arrays(self, label=None):
        """Feature matrix and label vector, optionally restricted to one label."""
        frames = self.frames if label is None else [f for f in self.frames if f.binary_label == label]
        return as_arrays(frames, self.d)


def as_arrays(examples, d=None):
    if not examples:
        return np.zeros((0, d or 0)), np.zeros(0)
    X = np.stack([e.x for e in examples])
    y = np.array([e.binary_label for e in examples], dtype=np.float64)
    return X, y


@dataclass
class ClassSpec:
    mean: np.ndarray
    scale: float = 1.0
    drift: np.ndarray | None = None
    inflation: float = 0.0
    first_task: int = 0

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64)
        if self.scale <= 0:
            raise ValueError("covariance scale must be positive")
        if self.drift is not None:
            self.drift = np.asarray(self.drift, dtype=np.float64)
            if self.drift.shape != self.mean.shape:
                raise ValueError("drift must have the mean's shape")
        if self.inflation < 0:
            raise ValueError("covariance inflation must be nonnegative")

    def mean_at(self, task):
        return self.mean if self.drift is None else self.mean + task * self.drift

    def scale_at(self, task):
        return self.scale * (1.0 + self.inflation * task)


@dataclass
class ScenarioConfig:
    d: int
    classes: list
    frames_per_demo: int = 250
    demos_per_class: int = 9
    noise: float = 0.0
    seed: int = 0
    positive_fraction: float = 0.5
    background: ClassSpec | None = None
    frames_task0: int | None = None

    def __post_init__(self):
        if self.d <= 0:
            raise ValueError("dimension must be positive")
        if not self.classes:
            raise ValueError("scenario needs at least one class")
        if self.frames_per_demo < 1 or self.demos_per_class < 1:
            raise ValueError("frames_per_demo and demos_per_class must be >= 1")
        if self.noise < 0 or not 0 < self.positive_fraction <= 1:
            raise ValueError("noise must be >= 0 and positive_fraction in (0, 1]")
        for spec in self.classes:
            if spec.mean.shape != (self.d,):
                raise ValueError(f"class mean has shape {spec.mean.shape}, expected ({self.d},)")
        if self.background is None:
            self.background = ClassSpec(np.zeros(self.d), 1.0)
        if self.frames_task0 is not None and self.frames_task0 < 1:
            raise ValueError("frames_task0 must be >= 1")

    @property
    def n_tasks(self):
        return self.demos_per_class

    def active_classes(self, task):
        return [c for c, spec in enumerate(self.classes) if spec.first_task <= task]


def _draw(rng, spec, task, n, noise):
    d = spec.mean.shape[0]
    sd = math.sqrt(spec.scale_at(task) ** 2 + noise ** 2)
    return spec.mean_at(task) + sd * rng.standard_normal((n, d))


def generate_scenario(cfg):
    """Demonstrations ordered by (task, class); deterministic in ``cfg.seed``."""
    rng = np.random.default_rng(cfg.seed)
    demos = []
    for task in range(cfg.demos_per_class):
        frames_here = cfg.frames_task0 if task == 0 and cfg.frames_task0 else cfg.frames_per_demo
        n_pos = max(1, int(round(cfg.positive_fraction * frames_here)))
        n_neg = frames_here - n_pos
        active = cfg.active_classes(task)
        for c in active:
            pos = _draw(rng, cfg.classes[c], task, n_pos, cfg.noise)
            sources = [cfg.classes[o] for o in active if o != c] + [cfg.background]
            pick = rng.integers(0, len(sources), size=n_neg)
            neg = np.empty((n_neg, cfg.d))
            for s, spec in enumerate(sources):
                rows = np.flatnonzero(pick == s)
                if len(rows):
                    neg[rows] = _draw(rng, spec, task, len(rows), cfg.noise)
            labels = np.r_[np.ones(n_pos, dtype=int), np.zeros(n_neg, dtype=int)]
            feats = np.vstack([pos, neg])
            order = rng.permutation(len(labels))
            frames = [LabeledExample(feats[i], c, int(labels[i])) for i in order]
            demos.append(Demonstration(task, c, frames))
    return demos


def drifting_scenario(d=32, n_classes=3, n_tasks=5, separation=3.0, drift=0.6, scale=1.0,
                      inflation=0.0, frames_per_demo=250, positive_fraction=0.5, noise=0.0,
                      seed=0, new_class_task=None, frames_task0=None):
    """Scenario with random well-separated class means and a per-task drift of fixed length.

    ``separation`` and ``drift`` are Euclidean lengths. With ``new_class_task``
    set, one extra class appears first at that task.
    """
    rng = np.random.default_rng(seed)
    total = n_classes + (1 if new_class_task is not None else 0)
    classes = []
    for c in range(total):
        direction = rng.standard_normal(d)
        direction /= np.linalg.norm(direction)
        step = rng.standard_normal(d)
        step /= np.linalg.norm(step)
        first = new_class_task if c >= n_classes else 0
        classes.append(ClassSpec(separation * direction, scale, drift * step, inflation, first))
    return ScenarioConfig(d, classes, frames_per_demo, n_tasks, noise, seed, positive_fraction,
                          frames_task0=frames_task0)


# -- CSV ---------------------------------------------------------------------

HEAD = ["task_id", "class_id", "frame_idx", "binary_label"]


def save_stream(demos, path):
    """Write one row per frame, sorted by (task_id, class_id, frame_idx)."""
    if not demos:
        raise ValueError("refusing to write an empty stream")
    d = demos[0].d
    for demo in demos:
        if demo.d != d:
            raise ValueError("demonstrations disagree on feature dimension")
        for f in demo.frames:
            if not np.all(np.isfinite(f.x)):
                raise ValueError(f"non-finite feature in task {demo.task_id}, class {demo.class_id}")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(HEAD + [f"f{j}" for j in range(d)])
        for demo in sorted(demos, key=lambda dm: (dm.task_id, dm.class_id)):
            for k, f in enumerate(demo.frames, start=1):
                writer.writerow([demo.task_id, demo.class_id, k, f.binary_label]
                                + [repr(float(v)) for v in f.x])


def load_stream(path):
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise StreamFormatError("empty stream file")
    header = rows[0]
    if header[:4] != HEAD or len(header) < 5:
        raise StreamFormatError(f"malformed header {header[:5]}", line=1)
    d = len(header) - 4
    if header[4:] != [f"f{j}" for j in range(d)]:
        raise StreamFormatError("feature columns must be f0..f{d-1} in order", line=1)
    if len(rows) == 1:
        raise StreamFormatError("stream has a header but no frames")
    demos, current, last = [], None, None
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != d + 4:
            raise StreamFormatError(f"expected {d} feature values, found {len(row) - 4}", line=lineno)
        try:
            task, cls, k, label = (int(v) for v in row[:4])
            x = np.array([float(v) for v in row[4:]])
        except ValueError as exc:
            raise StreamFormatError(f"non-numeric cell ({exc})", line=lineno) from None
        if not np.all(np.isfinite(x)):
            raise StreamFormatError("non-finite feature value", line=lineno)
        if label not in (0, 1):
            raise StreamFormatError(f"binary_label must be 0 or 1, got {label}", line=lineno)
        key = (task, cls)
        if current is None or key != (current.task_id, current.class_id):
            if last is not None and key <= last:
                raise StreamFormatError("rows not sorted by (task_id, class_id)", line=lineno)
            current = Demonstration(task, cls, [])
            demos.append(current)
            last = key
        if k != len(current.frames) + 1:
            raise StreamFormatError(f"frame_idx {k} out of sequence", line=lineno)
        current.frames.append(LabeledExample(x, cls, label))
    return demos


__all__ = ["LabeledExample", "Demonstration", "ClassSpec", "ScenarioConfig", "StreamFormatError",
           "generate_scenario", "drifting_scenario", "save_stream", "load_stream", "as_arrays"]
