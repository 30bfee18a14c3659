"""Estimating the number of classes from labelled-subset clustering accuracy.

k-means runs over every point (labelled and unlabelled), but accuracy is
scored on the labelled points only; the score peaks near the true class
count, and a bounded Brent search over k finds the peak.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from sklearn.base import BaseEstimator

from .assignment import clustering_accuracy
from .clustering import KMeansConfig, kmeans_fit
from .dataset import GcdDataset
from .exceptions import InvalidConfigError, InvalidInputError

GOLDEN = 0.5 * (3.0 - math.sqrt(5.0))
# scores closer than this count as ties inside the search; ties lean to smaller k
TIE_TILT = 1e-9


@dataclass(frozen=True)
class KSearchConfig:
    k_min: int
    k_max: int
    max_evals: int = 25
    restarts_per_eval: int = 3
    seed: int = 0

    def __post_init__(self):
        if self.k_min < 1:
            raise InvalidConfigError("k_min must be >= 1")
        if self.k_max < self.k_min:
            raise InvalidConfigError(f"k_max={self.k_max} is below k_min={self.k_min}")
        if self.max_evals < 1 or self.restarts_per_eval < 1:
            raise InvalidConfigError("max_evals and restarts_per_eval must be >= 1")


@dataclass(frozen=True)
class KScoreTrace:
    evaluations: tuple[tuple[int, float], ...]
    best_k: int
    best_score: float

    @property
    def n_evals(self) -> int:
        return len(self.evaluations)

    def curve(self) -> list[tuple[int, float]]:
        return sorted(self.evaluations)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["k", "score"])
            for k, s in self.curve():
                w.writerow([k, repr(s)])

    def summary(self) -> dict:
        return {"best_k": self.best_k, "best_score": self.best_score, "evals": self.n_evals}

    def to_json(self, **extra) -> str:
        return json.dumps({**self.summary(), **extra}, indent=2, sort_keys=True)


def k_seed(seed: int, k: int, restart: int) -> list[int]:
    """Per-(k, restart) entropy, so scores do not depend on evaluation order."""
    return [int(seed), int(k), int(restart)]


def score_k(dataset: GcdDataset, k: int, restarts: int = 3, seed: int = 0,
            n_init: int = 1, max_iters: int = 300, tol: float = 1e-6) -> float:
    """Mean labelled-subset accuracy of unconstrained k-means over all points.

    Each of the ``restarts`` seeds runs a best-of-``n_init`` k-means fit.
    """
    lab = dataset.labelled_indices
    if lab.size == 0:
        raise InvalidInputError("class-count scoring needs labelled points")
    y = dataset.labels[lab]
    total = 0.0
    for r in range(restarts):
        cfg = KMeansConfig(k=k, max_iters=max_iters, tol=tol, n_restarts=n_init,
                           seed=k_seed(seed, k, r))
        model = kmeans_fit(dataset.features, cfg)
        total += clustering_accuracy(y, model.assignments[lab])[0]
    return total / restarts


def brent_maximize(f: Callable[[int], float], k_min: int, k_max: int,
                   max_evals: int = 25) -> KScoreTrace:
    """Maximise an integer black box with bounded Brent search on ``[k_min, k_max]``.

    The continuous search (golden-section steps with parabolic interpolation,
    minimising ``-f``) probes ``round(x)`` with memoisation and stops once the
    bracket is narrower than one.  Both ends are scored first, and the result
    is finished by an integer ascent from the incumbent that also walks across
    runs of equal scores (ties go to the smaller k).  No more than
    ``max_evals`` distinct integers are evaluated.

    Inside the continuous search each score carries a tilt of at most
    ``TIE_TILT`` favouring smaller k, so flat stretches slope toward ``k_min``
    instead of stalling the bracket.
    """
    if k_max < k_min:
        raise InvalidConfigError("k_max must be >= k_min")
    memo: dict[int, float] = {}

    class _Budget(Exception):
        pass

    def g(x: float) -> float:
        k = min(max(int(math.floor(x + 0.5)), k_min), k_max)
        if k not in memo:
            if len(memo) >= max_evals:
                raise _Budget
            memo[k] = float(f(k))
        return -memo[k] + TIE_TILT * (k - k_min) / (k_max - k_min + 1)

    def best():
        return min(memo, key=lambda k: (-memo[k], k))

    try:
        g(k_min)
        if k_max > k_min:
            g(k_max)
            _brent_min(g, float(k_min), float(k_max))
            _polish(g, memo, best, k_min, k_max)
    except _Budget:
        pass
    b = best()
    evals = tuple((k, memo[k]) for k in memo)
    return KScoreTrace(evaluations=evals, best_k=b, best_score=memo[b])


def _polish(g, memo, best, k_min, k_max):
    """Integer ascent from the incumbent, walking across equal-score plateaus."""
    moved = True
    while moved:
        moved = False
        b = best()
        for step in (-1, 1):
            k = b + step
            while k_min <= k <= k_max:
                g(k)
                if memo[k] != memo[b]:
                    break
                k += step
            if best() != b:
                moved = True
                break


def _brent_min(g, a: float, b: float, width: float = 1.0, max_iter: int = 500) -> float:
    """Bounded Brent minimisation; stops when the bracket is narrower than ``width``."""
    x = w = v = a + GOLDEN * (b - a)
    fx = fw = fv = g(x)
    d = e = 0.0
    for _ in range(max_iter):
        if b - a < width:
            break
        m = 0.5 * (a + b)
        tol1 = 1e-10 * abs(x) + 1e-12
        golden = True
        if abs(e) > tol1:
            # parabola through (v, fv), (w, fw), (x, fx)
            r = (x - w) * (fx - fv)
            q = (x - v) * (fx - fw)
            p = (x - v) * q - (x - w) * r
            q = 2.0 * (q - r)
            if q > 0.0:
                p = -p
            q = abs(q)
            if abs(p) < abs(0.5 * q * e) and q * (a - x) < p < q * (b - x):
                e, d = d, p / q
                golden = False
        if golden:
            e = (b - x) if x < m else (a - x)
            d = GOLDEN * e
        u = x + (d if abs(d) >= tol1 else math.copysign(tol1, d))
        fu = g(u)
        if fu <= fx:
            if u < x:
                b = x
            else:
                a = x
            v, fv, w, fw, x, fx = w, fw, x, fx, u, fu
        else:
            if u < x:
                a = u
            else:
                b = u
            if fu <= fw or w == x:
                v, fv, w, fw = w, fw, u, fu
            elif fu <= fv or v == x or v == w:
                v, fv = u, fu
    return x


def estimate_k(dataset: GcdDataset, config: KSearchConfig) -> KScoreTrace:
    """Brent search of :func:`score_k` over ``[k_min, k_max]``."""
    if dataset.labelled_indices.size == 0:
        raise InvalidInputError("class-count estimation needs labelled points")
    if config.k_max > dataset.n_points:
        raise InvalidConfigError(f"k_max={config.k_max} exceeds the number of points")

    def f(k):
        return score_k(dataset, k, config.restarts_per_eval, config.seed)

    return brent_maximize(f, config.k_min, config.k_max, config.max_evals)


def scan_k(dataset: GcdDataset, k_min: int, k_max: int, restarts: int = 3,
           seed: int = 0) -> KScoreTrace:
    """Score every integer in ``[k_min, k_max]``."""
    evals = tuple((k, score_k(dataset, k, restarts, seed)) for k in range(k_min, k_max + 1))
    best = min(evals, key=lambda e: (-e[1], e[0]))
    return KScoreTrace(evaluations=evals, best_k=best[0], best_score=best[1])


class ClassCountEstimator(BaseEstimator):
    """Estimate the total number of classes in partially labelled data.

    ``fit(X, y)`` takes ``y`` with ``-1`` for unlabelled rows.  ``k_min``
    defaults to ``max(2, number of labelled classes)``.
    """

    def __init__(self, k_min=None, k_max=1000, max_evals=25, restarts_per_eval=3,
                 random_state=0):
        self.k_min = k_min
        self.k_max = k_max
        self.max_evals = max_evals
        self.restarts_per_eval = restarts_per_eval
        self.random_state = random_state

    def fit(self, X, y):
        ds = GcdDataset.from_partial_labels(X, y)
        k_min = self.k_min if self.k_min is not None else max(2, len(ds.y_l))
        k_max = min(self.k_max, ds.n_points)
        cfg = KSearchConfig(k_min=k_min, k_max=max(k_min, k_max), max_evals=self.max_evals,
                            restarts_per_eval=self.restarts_per_eval, seed=self.random_state)
        self.trace_ = estimate_k(ds, cfg)
        self.n_classes_ = self.trace_.best_k
        self.n_features_in_ = ds.features.shape[1]
        return self
