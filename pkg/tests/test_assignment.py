import json
from itertools import permutations

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gcd.assignment import (
    AccReport,
    acc_report,
    assignment_cost,
    clustering_accuracy,
    hungarian,
)
from gcd.dataset import GcdDataset
from gcd.exceptions import EvaluationUnavailableError, InvalidCostError, InvalidInputError

from oracles import brute_force_accuracy, brute_force_min_cost


def test_diagonal_optimum():
    assert hungarian([[0, 1], [1, 0]]) == {0: 0, 1: 1}


def test_three_by_three():
    cost = [[4, 1, 3], [2, 0, 5], [3, 2, 2]]
    a = hungarian(cost)
    assert a == {0: 1, 1: 0, 2: 2}
    assert assignment_cost(cost, a) == 5 == brute_force_min_cost(cost)


def test_rectangular_padding():
    assert hungarian([[0, 5]]) == {0: 0}
    assert hungarian([[5], [0]]) == {1: 0}


def test_non_finite_cost_rejected():
    with pytest.raises(InvalidCostError):
        hungarian([[0, np.inf]])
    with pytest.raises(InvalidCostError):
        hungarian([[np.nan]])


def test_lexicographic_tie_break():
    # every permutation costs the same; identity is lexicographically smallest
    assert hungarian(np.ones((4, 4))) == {0: 0, 1: 1, 2: 2, 3: 3}
    cost = np.array([[1, 0, 0], [0, 1, 0], [0, 0, 1]])
    # optima: (1,2,0) and (2,0,1)
    assert hungarian(cost) == {0: 1, 1: 2, 2: 0}


@settings(max_examples=150, deadline=None)
@given(st.integers(1, 6).flatmap(
    lambda n: st.lists(st.lists(st.integers(-5, 5), min_size=n, max_size=n),
                       min_size=n, max_size=n)))
def test_hungarian_matches_brute_force_and_is_lexicographically_first(rows):
    C = np.array(rows, dtype=float)
    n = C.shape[0]
    a = hungarian(C)
    best = brute_force_min_cost(C)
    assert assignment_cost(C, a) == best
    lex = min(p for p in permutations(range(n)) if sum(C[i, p[i]] for i in range(n)) == best)
    assert tuple(a[i] for i in range(n)) == lex


@settings(max_examples=80, deadline=None)
@given(st.integers(1, 4), st.integers(1, 4), st.data())
def test_rectangular_matches_brute_force(r, c, data):
    C = np.array(data.draw(st.lists(st.lists(st.floats(-10, 10), min_size=c, max_size=c),
                                    min_size=r, max_size=r)))
    a = hungarian(C)
    assert len(a) == min(r, c)
    assert len(set(a.values())) == len(a)
    assert assignment_cost(C, a) == pytest.approx(brute_force_min_cost(C), abs=1e-9)


def test_accuracy_identity_and_swap():
    y = [0, 0, 1, 1, 2]
    assert clustering_accuracy(y, y)[0] == 1.0
    swapped = [1, 1, 0, 0, 2]
    acc, mapping = clustering_accuracy(y, swapped)
    assert acc == 1.0
    assert mapping == {0: 1, 1: 0, 2: 2}


def test_accuracy_five_sixths():
    y_true = [0, 0, 1, 1, 2, 2]
    y_pred = [1, 1, 0, 0, 0, 2]
    assert brute_force_accuracy(y_true, y_pred) == 5 / 6
    assert clustering_accuracy(y_true, y_pred)[0] == 5 / 6


def test_accuracy_length_mismatch():
    with pytest.raises(InvalidInputError):
        clustering_accuracy([0, 1], [0])


def test_surplus_clusters_go_to_null():
    acc, mapping = clustering_accuracy([0, 0, 0, 1], [0, 0, 2, 1])
    assert acc == 0.75
    assert mapping[2] is None


def test_surplus_classes_go_to_null():
    acc, mapping = clustering_accuracy([0, 1, 2, 2], [0, 0, 1, 1])
    assert acc == 0.75
    assert sorted(v for v in mapping.values() if v is not None) == [0, 2] or \
        sorted(v for v in mapping.values() if v is not None) == [1, 2]


labelling = st.integers(1, 12).flatmap(
    lambda n: st.tuples(st.lists(st.integers(0, 4), min_size=n, max_size=n),
                        st.lists(st.integers(0, 5), min_size=n, max_size=n)))


@settings(max_examples=150, deadline=None)
@given(labelling, st.permutations(range(6)), st.permutations(range(5)))
def test_accuracy_matches_oracle_and_is_permutation_invariant(pair, perm_pred, perm_true):
    y_true, y_pred = pair
    acc, mapping = clustering_accuracy(y_true, y_pred)
    assert acc == brute_force_accuracy(y_true, y_pred)
    targets = [v for v in mapping.values() if v is not None]
    assert len(targets) == len(set(targets))
    relabelled = clustering_accuracy([perm_true[t] for t in y_true],
                                     [perm_pred[p] for p in y_pred])[0]
    assert relabelled == acc


@settings(max_examples=60, deadline=None)
@given(labelling, st.integers(0, 2**16))
def test_new_cluster_changes_accuracy_by_at_most_moved_points(pair, seed):
    # refining a clustering can raise accuracy (y_true=[1,1,1,0,0],
    # y_pred=[1,2,1,3,0] is a counterexample to "never increases"), but only
    # by the share of points moved
    y_true, y_pred = pair
    rng = np.random.default_rng(seed)
    acc = clustering_accuracy(y_true, y_pred)[0]
    moved = np.array(y_pred)
    pick = rng.random(moved.size) < 0.4
    moved[pick] = 99
    new = clustering_accuracy(y_true, moved)[0]
    assert abs(new - acc) <= pick.mean() + 1e-12


@settings(max_examples=60, deadline=None)
@given(labelling)
def test_unused_cluster_ids_change_nothing(pair):
    y_true, y_pred = pair
    sparse = [10 * p + 7 for p in y_pred]
    assert clustering_accuracy(y_true, sparse)[0] == clustering_accuracy(y_true, y_pred)[0]


def _dataset(y_true, labelled):
    y_true = np.asarray(y_true)
    mask = np.zeros(y_true.size, dtype=bool)
    mask[labelled] = True
    return GcdDataset(features=np.zeros((y_true.size, 1)), labels=y_true, labelled_mask=mask,
                      y_l=tuple(np.unique(y_true[mask]).tolist()), _y_true=y_true)


def test_report_perfect():
    ds = _dataset([0, 0, 0, 1, 1, 1, 2, 2], [0, 3])
    pred = ds.evaluation_view()[ds.unlabelled_indices]
    r = acc_report(ds, pred)
    assert r.acc_all == r.acc_old == r.acc_new == 1.0


def test_report_single_cluster_two_equal_classes():
    ds = _dataset([0, 0, 0, 1, 1, 1], [0])
    r = acc_report(ds, np.zeros(5, dtype=int))
    # D_U = {0,0,1,1,1}: majority mapping hits 3 of 5
    assert r.acc_all == 0.6
    ds = _dataset([0, 0, 0, 1, 1, 1, 1], [3])
    r = acc_report(ds, np.zeros(6, dtype=int))
    assert r.acc_all == 0.5


def test_report_uses_shared_mapping():
    # Old class 0, New class 1; cluster 7 holds both. One mapping for all of D_U.
    ds = _dataset([0, 0, 0, 1, 1], [0])
    r = acc_report(ds, [7, 7, 7, 7])
    assert r.mapping == {7: 0}
    assert (r.acc_old, r.acc_new, r.acc_all) == (1.0, 0.0, 0.5)


def test_report_requires_ground_truth():
    ds = GcdDataset.from_partial_labels(np.zeros((3, 1)), [0, -1, -1])
    with pytest.raises(EvaluationUnavailableError):
        acc_report(ds, [0, 0])


def test_report_prediction_length_checked():
    ds = _dataset([0, 0, 1, 1], [0])
    with pytest.raises(InvalidInputError):
        acc_report(ds, [0, 1])


@settings(max_examples=100, deadline=None)
@given(st.integers(4, 14).flatmap(lambda n: st.tuples(
    st.lists(st.integers(0, 5), min_size=n, max_size=n),
    st.lists(st.integers(0, 5), min_size=n, max_size=n),
    st.lists(st.booleans(), min_size=n, max_size=n))))
def test_report_matches_exhaustive_oracle(data):
    y_true, y_pred, lab = (np.array(v) for v in data)
    if lab.all():
        lab[0] = False
    ds = _dataset(y_true, np.flatnonzero(lab))
    unl = ds.unlabelled_indices
    r = acc_report(ds, y_pred[unl])
    assert r.acc_all == pytest.approx(brute_force_accuracy(y_true[unl], y_pred[unl]), abs=1e-15)
    c = r.counts
    assert r.acc_all == (c["correct_old"] + c["correct_new"]) / (c["old"] + c["new"])
    if c["old"] and c["new"]:
        weighted = (r.acc_old * c["old"] + r.acc_new * c["new"]) / c["all"]
        assert r.acc_all == pytest.approx(weighted, abs=1e-15)
        assert min(r.acc_old, r.acc_new) - 1e-15 <= r.acc_all <= max(r.acc_old, r.acc_new) + 1e-15


def test_report_json_fields():
    r = AccReport(0.5, 1.0, 0.0, {3: 0, 4: None}, {"all": 2})
    d = json.loads(r.to_json())
    assert set(d) == {"acc_all", "acc_old", "acc_new", "mapping", "counts"}
    assert d["mapping"] == {"3": 0, "4": None}
