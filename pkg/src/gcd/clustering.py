"""Lloyd k-means with k-means++ seeding, and its semi-supervised constrained variant.

In the constrained variant labelled points are pinned to the cluster of
their class for every assignment step; the first ``|Y_L|`` clusters are the
labelled classes (in class-id order) and are initialised at the labelled
class means, while the remaining clusters are seeded from the unlabelled
points by k-means++ measured against the class means.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from sklearn.base import BaseEstimator, ClusterMixin
from sklearn.utils.validation import check_is_fitted

from .dataset import GcdDataset, check_features
from .exceptions import InvalidConfigError, InvalidInputError

_CHUNK_BYTES = 1 << 25


def as_rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def restart_rngs(seed, n) -> list[np.random.Generator]:
    """Independent generators for ``n`` restarts, reproducible from one seed."""
    if isinstance(seed, np.random.Generator):
        return [np.random.default_rng(s) for s in seed.bit_generator.seed_seq.spawn(n)]
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(n)]


@dataclass(frozen=True)
class KMeansConfig:
    k: int
    max_iters: int = 300
    tol: float = 1e-6
    n_restarts: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.k < 1:
            raise InvalidConfigError(f"k must be >= 1, got {self.k}")
        if self.max_iters < 1:
            raise InvalidConfigError(f"max_iters must be >= 1, got {self.max_iters}")
        if self.n_restarts < 1:
            raise InvalidConfigError(f"n_restarts must be >= 1, got {self.n_restarts}")
        if self.tol < 0:
            raise InvalidConfigError(f"tol must be >= 0, got {self.tol}")


@dataclass(frozen=True)
class Constraints:
    """Pinned assignments for labelled points.

    ``forced[i]`` is the cluster index of labelled point ``i`` and ``-1`` for
    free points.  ``class_clusters`` lists the class id owning each of the
    first ``len(class_clusters)`` clusters.
    """

    forced: np.ndarray
    fixed_centroid_init: dict
    class_clusters: tuple[int, ...] = ()


@dataclass(frozen=True)
class ClusterModel:
    centroids: np.ndarray
    assignments: np.ndarray
    inertia: float
    n_iters: int
    converged: bool
    inertia_history: tuple[float, ...] = ()
    restart_inertias: tuple[float, ...] = ()
    n_reseeded: int = 0
    seeding_fallback: bool = False

    @property
    def k(self) -> int:
        return self.centroids.shape[0]


@dataclass(frozen=True)
class SeedResult:
    centroids: np.ndarray
    indices: np.ndarray
    fallback: bool


def squared_distances(X: np.ndarray, C: np.ndarray) -> np.ndarray:
    """Exact ``|x - c|^2`` table, evaluated in row chunks."""
    n, d = X.shape
    out = np.empty((n, C.shape[0]))
    step = max(1, _CHUNK_BYTES // (8 * max(1, C.shape[0] * d)))
    for s in range(0, n, step):
        diff = X[s:s + step, None, :] - C[None, :, :]
        out[s:s + step] = np.einsum("ijk,ijk->ij", diff, diff)
    return out


def d2_weights(candidates: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    """Squared distance from each candidate to its nearest centroid."""
    if centroids.shape[0] == 0:
        return np.ones(candidates.shape[0])
    return squared_distances(candidates, centroids).min(axis=1)


def d2_probabilities(candidates, centroids) -> tuple[np.ndarray, bool]:
    """k-means++ selection probabilities; uniform (flagged) if every weight is zero."""
    candidates = np.asarray(candidates, dtype=np.float64)
    centroids = np.asarray(centroids, dtype=np.float64).reshape(-1, candidates.shape[1])
    w = d2_weights(candidates, centroids)
    total = w.sum()
    if total <= 0.0:
        return np.full(w.size, 1.0 / w.size), True
    return w / total, False


def kmeans_pp_seed(features, n_new: int, existing=None, seed=None) -> SeedResult:
    """Draw ``n_new`` centroids by D^2 sampling against ``existing`` plus earlier picks.

    With no existing centroids the first pick is uniform.
    """
    X = check_features(features)
    if n_new < 1:
        raise InvalidConfigError("n_new must be >= 1")
    rng = as_rng(seed)
    existing = (np.empty((0, X.shape[1])) if existing is None
                else np.asarray(existing, dtype=np.float64).reshape(-1, X.shape[1]))
    chosen = []
    fallback = False
    if existing.shape[0] == 0:
        first = int(rng.integers(X.shape[0]))
        chosen.append(first)
        w = squared_distances(X, X[first:first + 1])[:, 0]
    else:
        w = d2_weights(X, existing)
    while len(chosen) < n_new:
        total = w.sum()
        if total <= 0.0:
            fallback = True
            idx = int(rng.integers(X.shape[0]))
        else:
            idx = int(rng.choice(X.shape[0], p=w / total))
        chosen.append(idx)
        w = np.minimum(w, squared_distances(X, X[idx:idx + 1])[:, 0])
    idx = np.array(chosen, dtype=np.int64)
    return SeedResult(centroids=X[idx].copy(), indices=idx, fallback=fallback)


def _nearest(X, C, x_sq=None):
    """Index of the nearest centroid per row; ties go to the lowest index.

    Uses the ``|x|^2 + |c|^2 - 2 x.c`` expansion for speed; objective values
    are always recomputed exactly from the chosen pairs.
    """
    if x_sq is None:
        x_sq = np.einsum("ij,ij->i", X, X)
    D = x_sq[:, None] - 2.0 * (X @ C.T) + np.einsum("ij,ij->i", C, C)[None, :]
    return D.argmin(axis=1)


def _assign(X, C, forced, free, x_sq=None):
    labels = _nearest(X, C, x_sq)
    if forced is not None:
        labels = np.where(free, labels, forced)
    diff = X - C[labels]
    d2 = np.einsum("ij,ij->i", diff, diff)
    return labels, d2


def _repair_empty(X, C, labels, d2, free, k):
    """Move each empty cluster's centroid onto the farthest free point."""
    counts = np.bincount(labels, minlength=k)
    repaired = 0
    for e in np.flatnonzero(counts == 0):
        movable = free & (counts[labels] > 1)
        if not movable.any():
            break
        p = int(np.argmax(np.where(movable, d2, -1.0)))
        counts[labels[p]] -= 1
        counts[e] = 1
        C[e] = X[p]
        labels[p] = e
        d2[p] = 0.0
        repaired += 1
    return repaired


def _means(X, labels, C_prev, k):
    sums = np.stack([np.bincount(labels, weights=X[:, j], minlength=k)
                     for j in range(X.shape[1])], axis=1)
    counts = np.bincount(labels, minlength=k)
    C = C_prev.copy()
    nz = counts > 0
    C[nz] = sums[nz] / counts[nz, None]
    return C


def lloyd(X, init, forced=None, max_iters=300, tol=1e-6) -> ClusterModel:
    """Alternate assignment and mean updates until the largest centroid move is ``<= tol``.

    ``forced`` pins points to clusters (``-1`` = free).  ``inertia_history``
    records the objective after every assignment step, final one included.
    """
    C = np.array(init, dtype=np.float64)
    k = C.shape[0]
    free = np.ones(X.shape[0], dtype=bool) if forced is None else forced < 0
    x_sq = np.einsum("ij,ij->i", X, X)
    history = []
    reseeded = 0
    converged = False
    n_iters = 0
    for n_iters in range(1, max_iters + 1):
        labels, d2 = _assign(X, C, forced, free, x_sq)
        reseeded += _repair_empty(X, C, labels, d2, free, k)
        history.append(float(d2.sum()))
        C_new = _means(X, labels, C, k)
        shift = float(np.sqrt(((C_new - C) ** 2).sum(axis=1)).max())
        C = C_new
        if shift <= tol:
            converged = True
            break
    labels, d2 = _assign(X, C, forced, free, x_sq)
    reseeded += _repair_empty(X, C, labels, d2, free, k)
    inertia = float(d2.sum())
    history.append(inertia)
    return ClusterModel(centroids=C, assignments=labels.astype(np.int64), inertia=inertia,
                        n_iters=n_iters, converged=converged, inertia_history=tuple(history),
                        n_reseeded=reseeded)


def _best(models: list[ClusterModel]) -> ClusterModel:
    best = min(range(len(models)), key=lambda r: (models[r].inertia, r))
    m = models[best]
    return ClusterModel(**{**m.__dict__, "restart_inertias": tuple(x.inertia for x in models)})


def kmeans_fit(features, config: KMeansConfig) -> ClusterModel:
    """Plain k-means, best of ``config.n_restarts`` k-means++ restarts by inertia."""
    X = check_features(features)
    if config.k > X.shape[0]:
        raise InvalidConfigError(f"k={config.k} exceeds the number of points {X.shape[0]}")
    models = []
    for rng in restart_rngs(config.seed, config.n_restarts):
        seed = kmeans_pp_seed(X, config.k, None, rng)
        m = lloyd(X, seed.centroids, None, config.max_iters, config.tol)
        models.append(ClusterModel(**{**m.__dict__, "seeding_fallback": seed.fallback}))
    return _best(models)


def _class_layout(dataset: GcdDataset, k: int):
    n_old = len(dataset.y_l)
    if k < n_old:
        raise InvalidConfigError(f"k={k} is smaller than the number of labelled classes {n_old}")
    if k > dataset.n_points:
        raise InvalidConfigError(f"k={k} exceeds the number of points {dataset.n_points}")
    cluster_of_class = {c: i for i, c in enumerate(dataset.y_l)}
    forced = np.full(dataset.n_points, -1, dtype=np.int64)
    lab = dataset.labelled_indices
    forced[lab] = [cluster_of_class[int(c)] for c in dataset.labels[lab]]
    return forced


def ss_kmeans_init(dataset: GcdDataset, k: int, seed=None):
    """Initial centroids and pinning constraints for constrained k-means.

    Returns ``(centroids, constraints, seeding_fallback)``.
    """
    forced = _class_layout(dataset, k)
    X = dataset.features
    means = {}
    for i, c in enumerate(dataset.y_l):
        means[c] = X[forced == i].mean(axis=0)
    fixed = np.array([means[c] for c in dataset.y_l]).reshape(len(dataset.y_l), X.shape[1])
    n_new = k - len(dataset.y_l)
    fallback = False
    if n_new > 0:
        pool = X[~dataset.labelled_mask]
        if pool.shape[0] == 0:
            raise InvalidInputError("no unlabelled points to seed the extra clusters from")
        res = kmeans_pp_seed(pool, n_new, fixed, seed)
        centroids = np.vstack([fixed, res.centroids])
        fallback = res.fallback
    else:
        centroids = fixed
    constraints = Constraints(forced=forced, fixed_centroid_init=means,
                              class_clusters=tuple(dataset.y_l))
    return centroids, constraints, fallback


def ss_kmeans_fit(dataset: GcdDataset, config: KMeansConfig) -> ClusterModel:
    """Constrained k-means: labelled points never leave their class's cluster."""
    models = []
    for rng in restart_rngs(config.seed, config.n_restarts):
        init, cons, fallback = ss_kmeans_init(dataset, config.k, rng)
        m = lloyd(dataset.features, init, cons.forced, config.max_iters, config.tol)
        models.append(ClusterModel(**{**m.__dict__, "seeding_fallback": fallback}))
    return _best(models)


class _KMeansBase(ClusterMixin, BaseEstimator):
    def predict(self, X):
        """Nearest fitted centroid for each row (no pinning)."""
        check_is_fitted(self, "cluster_centers_")
        X = check_features(X)
        if X.shape[1] != self.cluster_centers_.shape[1]:
            raise InvalidInputError(
                f"X has {X.shape[1]} features, model was fitted with "
                f"{self.cluster_centers_.shape[1]}")
        return _nearest(X, self.cluster_centers_)

    def _store(self, model: ClusterModel):
        self.model_ = model
        self.cluster_centers_ = model.centroids
        self.labels_ = model.assignments
        self.inertia_ = model.inertia
        self.n_iter_ = model.n_iters
        self.n_features_in_ = model.centroids.shape[1]
        return self


class KMeans(_KMeansBase):
    """Lloyd k-means with k-means++ seeding and best-of-``n_init`` restarts."""

    def __init__(self, n_clusters=8, n_init=10, max_iter=300, tol=1e-6, random_state=0):
        self.n_clusters = n_clusters
        self.n_init = n_init
        self.max_iter = max_iter
        self.tol = tol
        self.random_state = random_state

    def fit(self, X, y=None):
        cfg = KMeansConfig(k=self.n_clusters, max_iters=self.max_iter, tol=self.tol,
                           n_restarts=self.n_init, seed=self.random_state)
        return self._store(kmeans_fit(X, cfg))


class SemiSupervisedKMeans(_KMeansBase):
    """Constrained k-means for partially labelled data.

    ``y`` follows the scikit-learn semi-supervised convention: a class id
    for labelled rows and ``-1`` for unlabelled rows.  After fitting,
    ``class_clusters_[i]`` is the class owning cluster ``i`` for the first
    ``len(class_clusters_)`` clusters.
    """

    def __init__(self, n_clusters=8, n_init=1, max_iter=300, tol=1e-6, random_state=0):
        self.n_clusters = n_clusters
        self.n_init = n_init
        self.max_iter = max_iter
        self.tol = tol
        self.random_state = random_state

    def fit(self, X, y=None):
        X = check_features(X)
        if y is None:
            y = np.full(X.shape[0], -1)
        ds = GcdDataset.from_partial_labels(X, y)
        cfg = KMeansConfig(k=self.n_clusters, max_iters=self.max_iter, tol=self.tol,
                           n_restarts=self.n_init, seed=self.random_state)
        self.class_clusters_ = ds.y_l
        return self._store(ss_kmeans_fit(ds, cfg))
