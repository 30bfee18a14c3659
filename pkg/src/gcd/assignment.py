"""Optimal assignment and Hungarian-matched clustering accuracy."""
from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .exceptions import InvalidCostError, InvalidInputError


def _solve_square(cost: np.ndarray):
    """Shortest-augmenting-path Hungarian method on a square matrix.

    Returns ``(col_of_row, u, v)`` with dual potentials such that
    ``cost[i, j] - u[i] - v[j] >= 0`` everywhere and ``== 0`` on the matching.
    """
    n = cost.shape[0]
    INF = np.inf
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    row_of_col = np.zeros(n + 1, dtype=np.int64)   # 1-based, 0 = free
    way = np.zeros(n + 1, dtype=np.int64)
    for i in range(1, n + 1):
        row_of_col[0] = i
        j0 = 0
        minv = np.full(n + 1, INF)
        used = np.zeros(n + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = row_of_col[j0]
            free = ~used[1:]
            cur = cost[i0 - 1] - u[i0] - v[1:]
            better = free & (cur < minv[1:])
            minv[1:][better] = cur[better]
            way[1:][better] = j0
            cand = np.where(free, minv[1:], INF)
            j1 = int(np.argmin(cand)) + 1
            delta = cand[j1 - 1]
            u[row_of_col[used]] += delta
            v[used] -= delta
            minv[1:][free] -= delta
            j0 = j1
            if row_of_col[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            row_of_col[j0] = row_of_col[j1]
            j0 = j1
    col_of_row = np.empty(n, dtype=np.int64)
    col_of_row[row_of_col[1:] - 1] = np.arange(n)
    return col_of_row, u[1:], v[1:]


def _lexicographic_min(tight: np.ndarray, col_of_row: np.ndarray) -> np.ndarray:
    """Lexicographically smallest perfect matching inside the ``tight`` graph.

    ``col_of_row`` must already be a perfect matching using tight edges only.
    Rows are fixed in order; each tries its smallest tight column first and
    keeps it if the displaced row can be rerouted to the freed column along
    an alternating path through unfixed rows.
    """
    n = tight.shape[0]
    match = col_of_row.copy()
    row_of = np.empty(n, dtype=np.int64)
    row_of[match] = np.arange(n)
    for i in range(n):
        for j in np.flatnonzero(tight[i]):
            if j >= match[i]:
                break
            r = row_of[j]
            if r < i:
                continue
            target = match[i]
            # BFS from row r over rows > i, never touching column j
            prev = {r: None}
            queue = deque([r])
            found = None
            while queue and found is None:
                row = queue.popleft()
                for c in np.flatnonzero(tight[row]):
                    if c == j or c == match[row]:
                        continue
                    if c == target:
                        found = (row, c)
                        break
                    nxt = row_of[c]
                    if nxt > i and nxt not in prev:
                        prev[nxt] = (row, c)
                        queue.append(nxt)
            if found is None:
                continue
            row, c = found
            while True:
                old = match[row]
                match[row] = c
                row_of[c] = row
                step = prev[row]
                if step is None:
                    break
                row, c = step[0], old
            match[i] = j
            row_of[j] = i
            break
    return match


def hungarian(cost) -> dict[int, int]:
    """Minimum-cost injective row-to-column assignment.

    Rectangular inputs are padded with zero-cost dummy rows or columns; only
    ``min(rows, cols)`` real pairs are returned.  Among equally cheap
    assignments the lexicographically smallest (by row order) is chosen.
    """
    C = np.asarray(cost, dtype=np.float64)
    if C.ndim != 2 or C.shape[0] < 1 or C.shape[1] < 1:
        raise InvalidCostError("cost must be a non-empty 2-D matrix")
    if not np.all(np.isfinite(C)):
        raise InvalidCostError("cost matrix contains non-finite entries")
    rows, cols = C.shape
    n = max(rows, cols)
    sq = np.zeros((n, n))
    sq[:rows, :cols] = C
    col_of_row, u, v = _solve_square(sq)
    reduced = sq - u[:, None] - v[None, :]
    eps = 1e-12 * max(1.0, float(np.abs(sq).max())) * n
    tight = reduced <= eps
    col_of_row = _lexicographic_min(tight, col_of_row)
    return {int(r): int(c) for r, c in enumerate(col_of_row[:rows]) if c < cols}


def assignment_cost(cost, assignment: dict[int, int]) -> float:
    C = np.asarray(cost, dtype=np.float64)
    return float(sum(C[r, c] for r, c in assignment.items()))


def contingency(y_true, y_pred):
    """Cluster-by-class count table plus the sorted cluster and class ids."""
    y_true = np.asarray(y_true)
    y_pred = np.asarray(y_pred)
    classes, t = np.unique(y_true, return_inverse=True)
    clusters, p = np.unique(y_pred, return_inverse=True)
    table = np.zeros((clusters.size, classes.size), dtype=np.int64)
    np.add.at(table, (p, t), 1)
    return table, clusters, classes


def _matched(y_true, y_pred):
    y_true = np.asarray(y_true).ravel()
    y_pred = np.asarray(y_pred).ravel()
    if y_true.size != y_pred.size:
        raise InvalidInputError(
            f"y_true and y_pred differ in length ({y_true.size} vs {y_pred.size})")
    if y_true.size == 0:
        raise InvalidInputError("cannot score an empty labelling")
    table, clusters, classes = contingency(y_true, y_pred)
    pairs = hungarian(-table)
    mapping: dict[int, Optional[int]] = {int(c): None for c in clusters}
    for r, c in pairs.items():
        mapping[int(clusters[r])] = int(classes[c])
    return mapping, y_true, y_pred


def _apply(mapping, y_pred):
    lut = {k: (-1 if v is None else v) for k, v in mapping.items()}
    return np.fromiter((lut[int(p)] for p in y_pred), dtype=np.int64, count=len(y_pred))


def clustering_accuracy(y_true, y_pred) -> tuple[float, dict[int, Optional[int]]]:
    """Best fraction of points labelled correctly under an injective cluster-to-class map.

    Clusters (or classes) left over when the counts differ are sent to the
    null set, so all their points count as wrong.

    >>> clustering_accuracy([0, 0, 1, 1, 2, 2], [1, 1, 0, 0, 0, 2])[0]
    0.8333333333333334
    """
    mapping, y_true, y_pred = _matched(y_true, y_pred)
    hits = _apply(mapping, y_pred) == y_true
    return float(hits.mean()), mapping


@dataclass(frozen=True)
class AccReport:
    acc_all: float
    acc_old: Optional[float]
    acc_new: Optional[float]
    mapping: dict = field(default_factory=dict)
    counts: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "acc_all": self.acc_all,
            "acc_old": self.acc_old,
            "acc_new": self.acc_new,
            "mapping": {str(k): v for k, v in sorted(self.mapping.items())},
            "counts": dict(self.counts),
        }

    def to_json(self, **extra) -> str:
        d = self.to_dict()
        d.update(extra)
        return json.dumps(d, indent=2, sort_keys=True)


def acc_report(dataset, y_pred) -> AccReport:
    """All/Old/New accuracy on the unlabelled points under one shared mapping.

    ``y_pred`` holds cluster ids for the unlabelled points in index order; a
    prediction for every point is also accepted and sliced.
    """
    truth = dataset.evaluation_view()
    unl = dataset.unlabelled_indices
    y_pred = np.asarray(y_pred).ravel()
    if y_pred.size == dataset.n_points and y_pred.size != unl.size:
        y_pred = y_pred[unl]
    if y_pred.size != unl.size:
        raise InvalidInputError(
            f"expected {unl.size} predictions for the unlabelled points, got {y_pred.size}")
    if unl.size == 0:
        raise InvalidInputError("dataset has no unlabelled points to evaluate")
    y_true = truth[unl]
    mapping, y_true, y_pred = _matched(y_true, y_pred)
    hits = _apply(mapping, y_pred) == y_true
    old = np.isin(y_true, dataset.y_l)
    n_old, n_new = int(old.sum()), int((~old).sum())
    c_old, c_new = int(hits[old].sum()), int(hits[~old].sum())
    return AccReport(
        acc_all=(c_old + c_new) / (n_old + n_new),
        acc_old=c_old / n_old if n_old else None,
        acc_new=c_new / n_new if n_new else None,
        mapping=mapping,
        counts={"all": n_old + n_new, "old": n_old, "new": n_new,
                "correct_old": c_old, "correct_new": c_new},
    )
