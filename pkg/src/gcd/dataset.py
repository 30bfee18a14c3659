"""Partially labelled feature datasets, split construction and synthetic blobs."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from sklearn.utils import check_array

from .exceptions import (
    EvaluationUnavailableError,
    GenerationError,
    InvalidInputError,
    InvalidSpecError,
)

UNLABELLED = -1


def check_features(X, name="features") -> np.ndarray:
    """Validate an N x D matrix of finite reals and return it as float64."""
    if isinstance(X, FeatureMatrix):
        return X.values
    try:
        return check_array(X, dtype=np.float64, ensure_2d=True, ensure_all_finite=True,
                           input_name=name)
    except ValueError as exc:
        raise InvalidInputError(str(exc)) from exc


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class FeatureMatrix:
    """Immutable N x D embedding matrix."""

    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "values", _readonly(check_features(self.values)))

    @property
    def n_points(self) -> int:
        return self.values.shape[0]

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    def __array__(self, dtype=None, copy=None):
        return self.values if dtype is None else self.values.astype(dtype)


def encode_labels(labels) -> tuple[np.ndarray, np.ndarray]:
    """Map arbitrary hashable labels onto contiguous ids ``0..C-1``.

    Returns ``(ids, classes)`` where ``classes[id]`` is the original label.
    Integer inputs that are already contiguous from zero map to themselves.
    """
    arr = np.asarray(labels)
    if arr.ndim != 1 or arr.size == 0:
        raise InvalidInputError("labels must be a non-empty 1-D sequence")
    classes, ids = np.unique(arr, return_inverse=True)
    return ids.astype(np.int64), classes


def _round_half_up(x: float) -> int:
    # rounding to 9 places first absorbs binary noise such as 0.3 * 10
    return int(math.floor(round(x, 9) + 0.5))


def _ceil(x: float) -> int:
    return int(math.ceil(round(x, 9)))


@dataclass(frozen=True)
class SplitSpec:
    labelled_class_fraction: float = 0.5
    labelled_image_fraction: float = 0.5
    class_selection: str = "first_indices"
    seed: int = 0

    def __post_init__(self):
        for name in ("labelled_class_fraction", "labelled_image_fraction"):
            v = getattr(self, name)
            if not (0.0 < v <= 1.0):
                raise InvalidSpecError(f"{name} must lie in (0, 1], got {v}")
        if self.class_selection not in ("first_indices", "random"):
            raise InvalidSpecError(
                f"class_selection must be 'first_indices' or 'random', got {self.class_selection!r}")


@dataclass(frozen=True)
class Split:
    """Result of :func:`generate_split`: which points and classes are labelled."""

    labelled_mask: np.ndarray
    y_l: tuple[int, ...]

    @property
    def n_labelled(self) -> int:
        return int(self.labelled_mask.sum())

    @property
    def n_unlabelled(self) -> int:
        return int(self.labelled_mask.size - self.labelled_mask.sum())


def generate_split(labels, spec: SplitSpec) -> Split:
    """Choose the labelled classes and, within each, the labelled points.

    ``ceil(labelled_class_fraction * C)`` classes are labelled, either the
    lowest class ids or a seeded random subset.  In each labelled class,
    ``round_half_up(labelled_image_fraction * size)`` points are drawn at
    random (at least one, and at least one left unlabelled when the image
    fraction is below one and the class has two or more points).
    """
    y = np.asarray(labels)
    if y.ndim != 1 or y.size == 0:
        raise InvalidInputError("labels must be a non-empty 1-D sequence")
    y = y.astype(np.int64)
    classes = np.unique(y)
    if classes.size < 2:
        raise InvalidInputError("at least two classes are required to build a split")

    # SplitSpec rejects zero fractions, so both counts below are >= 1
    n_cls = min(_ceil(spec.labelled_class_fraction * classes.size), classes.size)

    rng = np.random.default_rng(spec.seed)
    if spec.class_selection == "first_indices":
        chosen = classes[:n_cls]
    else:
        chosen = np.sort(rng.choice(classes, size=n_cls, replace=False))

    mask = np.zeros(y.size, dtype=bool)
    for c in chosen:
        idx = np.flatnonzero(y == c)
        n_img = _round_half_up(spec.labelled_image_fraction * idx.size)
        n_img = max(n_img, 1)
        if spec.labelled_image_fraction < 1.0 and idx.size >= 2:
            n_img = min(n_img, idx.size - 1)
        pick = rng.choice(idx, size=n_img, replace=False)
        mask[pick] = True
    return Split(labelled_mask=_readonly(mask), y_l=tuple(int(c) for c in chosen))


@dataclass(frozen=True)
class GcdDataset:
    """Features with partial labels.

    ``labels`` carries class ids for labelled points and ``-1`` elsewhere;
    ground truth for unlabelled points is kept private and reachable only
    through :meth:`evaluation_view`.
    """

    features: np.ndarray
    labels: np.ndarray
    labelled_mask: np.ndarray
    y_l: tuple[int, ...]
    _y_true: Optional[np.ndarray] = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        X = check_features(self.features)
        labels = np.asarray(self.labels, dtype=np.int64)
        mask = np.asarray(self.labelled_mask, dtype=bool)
        if labels.shape != (X.shape[0],) or mask.shape != (X.shape[0],):
            raise InvalidInputError("labels and labelled_mask must have one entry per point")
        if np.any(labels[mask] < 0):
            raise InvalidInputError("every labelled point needs a class id")
        labels = np.where(mask, labels, UNLABELLED)
        present = tuple(int(c) for c in np.unique(labels[mask]))
        y_l = tuple(sorted(int(c) for c in self.y_l))
        if present != y_l:
            raise InvalidInputError(
                f"y_l {y_l} does not match the labels of labelled points {present}")
        object.__setattr__(self, "features", _readonly(X))
        object.__setattr__(self, "labels", _readonly(labels))
        object.__setattr__(self, "labelled_mask", _readonly(mask))
        object.__setattr__(self, "y_l", y_l)
        if self._y_true is not None:
            y_true = np.asarray(self._y_true, dtype=np.int64)
            if y_true.shape != labels.shape:
                raise InvalidInputError("ground truth must have one entry per point")
            if np.any(y_true[mask] != labels[mask]):
                raise InvalidInputError("ground truth disagrees with labelled points")
            object.__setattr__(self, "_y_true", _readonly(y_true))

    @classmethod
    def from_split(cls, features, y_true, split: Split, keep_truth=True) -> "GcdDataset":
        y_true = np.asarray(y_true, dtype=np.int64)
        return cls(features=features, labels=y_true, labelled_mask=split.labelled_mask,
                   y_l=split.y_l, _y_true=y_true if keep_truth else None)

    @classmethod
    def from_partial_labels(cls, features, y, y_true=None) -> "GcdDataset":
        """Build from the scikit-learn semi-supervised convention (``-1`` = unlabelled)."""
        y = np.asarray(y, dtype=np.int64)
        mask = y >= 0
        return cls(features=features, labels=y, labelled_mask=mask,
                   y_l=tuple(np.unique(y[mask]).tolist()), _y_true=y_true)

    @property
    def n_points(self) -> int:
        return self.features.shape[0]

    @property
    def labelled_indices(self) -> np.ndarray:
        return np.flatnonzero(self.labelled_mask)

    @property
    def unlabelled_indices(self) -> np.ndarray:
        return np.flatnonzero(~self.labelled_mask)

    @property
    def has_ground_truth(self) -> bool:
        return self._y_true is not None

    def evaluation_view(self) -> np.ndarray:
        """Full ground-truth labels, for scoring only."""
        if self._y_true is None:
            raise EvaluationUnavailableError("dataset carries no ground truth for unlabelled points")
        return self._y_true

    @property
    def y_u_true(self) -> tuple[int, ...]:
        return tuple(int(c) for c in np.unique(self.evaluation_view()))

    def with_features(self, features) -> "GcdDataset":
        return GcdDataset(features=features, labels=self.labels, labelled_mask=self.labelled_mask,
                          y_l=self.y_l, _y_true=self._y_true)


def _sample_sphere(rng, dim, radius):
    v = rng.standard_normal(dim)
    norm = np.linalg.norm(v)
    while norm == 0.0:
        v = rng.standard_normal(dim)
        norm = np.linalg.norm(v)
    return radius * v / norm


def make_blobs(n_classes: int, points_per_class: int, dim: int, separation: float = 8.0,
               spread: float = 1.0, seed: int = 0, max_rounds: int = 40,
               tries_per_center: int = 200):
    """Isotropic Gaussian blobs whose centres are pairwise ``>= separation`` apart.

    Centres are drawn on a hypersphere and rejection-checked; the sphere grows
    by 25% after each failed round.  Returns ``(X, y)`` with ``y`` in class
    order.
    """
    if min(n_classes, points_per_class, dim) < 1:
        raise InvalidInputError("n_classes, points_per_class and dim must all be >= 1")
    if separation < 0 or not spread > 0:
        raise InvalidInputError("separation must be >= 0 and spread > 0")
    rng = np.random.default_rng(seed)
    radius = max(separation, 1.0)
    centers = None
    for _ in range(max_rounds):
        placed = []
        for _ in range(n_classes):
            for _ in range(tries_per_center):
                c = _sample_sphere(rng, dim, radius)
                if all(np.linalg.norm(c - p) >= separation for p in placed):
                    placed.append(c)
                    break
            else:
                break
        if len(placed) == n_classes:
            centers = np.array(placed)
            break
        radius *= 1.25
    if centers is None:
        raise GenerationError(
            f"could not place {n_classes} centres {separation} apart in {dim} dimensions")
    X = np.repeat(centers, points_per_class, axis=0)
    X = X + spread * rng.standard_normal(X.shape)
    y = np.repeat(np.arange(n_classes, dtype=np.int64), points_per_class)
    return X, y


def make_gcd_benchmark(n_classes=20, points_per_class=100, dim=16, separation=8.0, spread=1.0,
                       labelled_class_fraction=0.5, labelled_image_fraction=0.5, seed=0,
                       class_selection="first_indices") -> GcdDataset:
    """Synthetic blobs plus a GCD split, derived from one seed."""
    X, y = make_blobs(n_classes, points_per_class, dim, separation=separation, spread=spread,
                      seed=seed)
    split = generate_split(y, SplitSpec(labelled_class_fraction, labelled_image_fraction,
                                        class_selection, seed + 1))
    return GcdDataset.from_split(X, y, split)


def class_sizes(labels: Sequence[int]) -> dict[int, int]:
    vals, counts = np.unique(np.asarray(labels), return_counts=True)
    return {int(v): int(c) for v, c in zip(vals, counts)}
