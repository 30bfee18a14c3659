import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gcd.dataset import (
    FeatureMatrix,
    GcdDataset,
    SplitSpec,
    encode_labels,
    generate_split,
    make_blobs,
)
from gcd.exceptions import (
    EvaluationUnavailableError,
    GenerationError,
    InvalidInputError,
    InvalidSpecError,
)


def test_cifar10_shaped_split_counts():
    # 10 classes x 5000 images, half the classes, half their images
    y = np.repeat(np.arange(10), 5000)
    split = generate_split(y, SplitSpec(0.5, 0.5, "first_indices", seed=0))
    assert split.y_l == (0, 1, 2, 3, 4)
    assert split.n_labelled == 12_500
    assert split.n_unlabelled == 37_500


def test_full_supervision_edge_case():
    y = np.repeat([0, 1], 4)
    split = generate_split(y, SplitSpec(1.0, 1.0))
    assert split.labelled_mask.all()
    assert split.n_unlabelled == 0


def test_random_selection_is_seeded():
    y = np.repeat(np.arange(100), 10)
    a = generate_split(y, SplitSpec(0.5, 0.5, "random", seed=1))
    b = generate_split(y, SplitSpec(0.5, 0.5, "random", seed=1))
    c = generate_split(y, SplitSpec(0.5, 0.5, "random", seed=2))
    assert a.y_l == b.y_l
    assert np.array_equal(a.labelled_mask, b.labelled_mask)
    assert a.y_l != c.y_l


@pytest.mark.parametrize("frac", [0.0, -0.1, 1.5])
def test_bad_fractions_rejected(frac):
    with pytest.raises(InvalidSpecError):
        SplitSpec(frac, 0.5)
    with pytest.raises(InvalidSpecError):
        SplitSpec(0.5, frac)


def test_single_class_rejected():
    with pytest.raises(InvalidInputError):
        generate_split(np.zeros(5, dtype=int), SplitSpec())


def test_round_half_up_and_clamp():
    # 3 points * 0.5 = 1.5 -> 2 labelled; 1 point * 0.1 -> clamped to 1
    y = np.array([0, 0, 0, 1])
    split = generate_split(y, SplitSpec(1.0, 0.5))
    assert split.labelled_mask[:3].sum() == 2
    assert split.labelled_mask[3]
    split = generate_split(y, SplitSpec(1.0, 0.1))
    assert split.labelled_mask[:3].sum() == 1


@settings(max_examples=60, deadline=None)
@given(sizes=st.lists(st.integers(1, 12), min_size=2, max_size=8),
       cf=st.floats(0.05, 1.0), imf=st.floats(0.05, 1.0),
       mode=st.sampled_from(["first_indices", "random"]), seed=st.integers(0, 2**31))
def test_split_properties(sizes, cf, imf, mode, seed):
    y = np.repeat(np.arange(len(sizes)), sizes)
    split = generate_split(y, SplitSpec(cf, imf, mode, seed))
    labelled_classes = set(np.unique(y[split.labelled_mask]).tolist())
    assert labelled_classes == set(split.y_l)
    assert split.n_labelled + split.n_unlabelled == y.size
    for c in split.y_l:
        in_class = y == c
        assert split.labelled_mask[in_class].sum() >= 1
        if imf < 1.0 and in_class.sum() >= 2:
            assert (~split.labelled_mask[in_class]).sum() >= 1
    # points outside Y_L are never labelled
    assert not split.labelled_mask[~np.isin(y, split.y_l)].any()


def test_dataset_hides_ground_truth_without_evaluation_view():
    X = np.zeros((4, 2))
    ds = GcdDataset.from_partial_labels(X, [0, -1, 1, -1])
    assert ds.labels.tolist() == [0, -1, 1, -1]
    with pytest.raises(EvaluationUnavailableError):
        ds.evaluation_view()


def test_dataset_invariants_enforced():
    X = np.zeros((3, 1))
    with pytest.raises(InvalidInputError):
        GcdDataset(features=X, labels=[0, 1, -1], labelled_mask=[1, 1, 0], y_l=(0,))
    with pytest.raises(InvalidInputError):
        GcdDataset(features=X, labels=[-1, 1, 1], labelled_mask=[1, 1, 0], y_l=(1,))
    with pytest.raises(InvalidInputError):
        GcdDataset(features=X, labels=[0, 1, 1], labelled_mask=[1, 0, 0], y_l=(0,),
                   _y_true=[1, 1, 1])


def test_dataset_is_immutable():
    ds = GcdDataset.from_partial_labels(np.ones((2, 2)), [0, -1])
    with pytest.raises(ValueError):
        ds.features[0, 0] = 5.0


def test_feature_matrix_rejects_non_finite():
    with pytest.raises(InvalidInputError):
        FeatureMatrix(np.array([[1.0, np.nan]]))
    fm = FeatureMatrix([[1.0, 2.0], [3.0, 4.0]])
    assert (fm.n_points, fm.dim) == (2, 2)


def test_encode_labels_contiguous():
    ids, classes = encode_labels(["cat", "dog", "cat", "emu"])
    assert ids.tolist() == [0, 1, 0, 2]
    assert classes.tolist() == ["cat", "dog", "emu"]


def test_blobs_degenerate_spread():
    X, y = make_blobs(1, 5, 3, separation=0.0, spread=1e-300, seed=0)
    assert np.all(X == X[0])
    assert y.tolist() == [0] * 5


def test_blobs_deterministic_and_separated():
    a, ya = make_blobs(20, 10, 16, separation=8.0, spread=1.0, seed=4)
    b, yb = make_blobs(20, 10, 16, separation=8.0, spread=1.0, seed=4)
    assert a.tobytes() == b.tobytes() and np.array_equal(ya, yb)
    # with spread -> 0 the points collapse onto the centres
    c, _ = make_blobs(20, 1, 16, separation=8.0, spread=1e-300, seed=4)
    d = np.linalg.norm(c[:, None] - c[None], axis=-1)
    assert d[~np.eye(20, dtype=bool)].min() >= 8.0


def test_blobs_impossible_separation():
    # a 0-sphere in one dimension holds only two points
    with pytest.raises(GenerationError):
        make_blobs(3, 2, 1, separation=1.0, spread=1.0, seed=0, max_rounds=3)


def test_blobs_easy_for_kmeans():
    from gcd.assignment import clustering_accuracy
    from gcd.clustering import KMeansConfig, kmeans_fit

    X, y = make_blobs(20, 50, 16, separation=10.0, spread=1.0, seed=0)
    model = kmeans_fit(X, KMeansConfig(k=20, n_restarts=30, seed=0))
    assert clustering_accuracy(y, model.assignments)[0] >= 0.99
