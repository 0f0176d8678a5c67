import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hotspot.errors import ColumnMismatch, DegenerateSplit, InvalidConfig, NonFiniteInput, SingleClassData
from hotspot.gbdt import (
    Ensemble,
    TrainParams,
    bin_features,
    efb_bundle,
    feature_importance,
    goss_sample,
    predict,
    residuals,
    softmax_proba,
    split_gain,
    train,
)
from hotspot.gbdt.binning import fit_mapper
from hotspot.gbdt.efb import bundle_columns, unbundle
from hotspot.gbdt.goss import GossSplitContext
from hotspot.gbdt.loss import class_weights, gradients_hessians, one_hot_labels


# -- loss ------------------------------------------------------------------------

def test_softmax_examples():
    np.testing.assert_array_equal(softmax_proba([[0.0, 0.0]]), [[0.5, 0.5]])
    np.testing.assert_allclose(softmax_proba([[np.log(2), 0.0]]), [[2 / 3, 1 / 3]], rtol=1e-15)
    p = softmax_proba([[1000.0, 0.0]])
    assert np.isfinite(p).all() and p[0, 0] == 1.0 and p[0, 1] < 1e-300


def test_softmax_rows_sum_to_one():
    f = np.random.default_rng(0).normal(0, 30, size=(200, 4))
    np.testing.assert_allclose(softmax_proba(f).sum(axis=1), 1.0, rtol=1e-14)


def test_residual_examples():
    np.testing.assert_array_equal(residuals([[1, 0]], [[0.5, 0.5]]), [[0.5, -0.5]])
    np.testing.assert_array_equal(residuals([[0, 1]], [[0, 1]]), [[0, 0]])
    w = class_weights(np.array([1]), 5.0)
    np.testing.assert_allclose(residuals([[0, 1]], [[0.9, 0.1]], w), 5 * np.array([[-0.9, 0.9]]))


def test_gradient_hessian_weighting():
    q = one_hot_labels(np.array([0, 1]), 2)
    p = np.array([[0.7, 0.3], [0.4, 0.6]])
    g, h = gradients_hessians(q, p, class_weights(np.array([0, 1]), 5.0))
    np.testing.assert_allclose(g, [[-0.3, 0.3], [5 * 0.4, 5 * -0.4]])
    np.testing.assert_allclose(h, [[0.21, 0.21], [5 * 0.24, 5 * 0.24]])


# -- binning ---------------------------------------------------------------------

def test_three_distinct_values():
    m = fit_mapper([1.0, 2.0, 2.0, 5.0])
    assert m.n_bins == 3
    assert m.transform([1.0, 2.0, 5.0]).tolist() == [0, 1, 2]
    np.testing.assert_array_equal(m.thresholds, [1.5, 3.5])


def test_constant_column_never_split():
    rng = np.random.default_rng(1)
    X = np.column_stack([np.full(200, 3.0), rng.normal(size=200)])
    y = (X[:, 1] > 0).astype(int)
    ens = train(X, y, TrainParams(max_iterations=5, min_samples_per_leaf=5))
    assert ens.mappers[0].n_bins == 1
    assert all((t.feature != 0).all() for _, _, t in ens.trees)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=400), st.integers(2, 255))
def test_binning_monotone(values, bins):
    m = fit_mapper(values, bins)
    v = np.sort(np.asarray(values))
    b = m.transform(v)
    assert (np.diff(b.astype(int)) >= 0).all()
    assert m.n_bins <= bins
    if len(np.unique(v)) <= bins:
        assert m.n_bins == len(np.unique(v))


# -- GOSS ------------------------------------------------------------------------

def test_goss_a_one():
    ctx = goss_sample(np.arange(10.0), 1.0, 0.0)
    assert len(ctx.top) == 10 and len(ctx.rest) == 0
    assert (ctx.weights == 1).all()


def test_goss_counts_and_coefficient():
    ctx = goss_sample(np.random.default_rng(3).normal(size=10), 0.2, 0.1, rng=0)
    assert (len(ctx.top), len(ctx.rest)) == (2, 1)
    assert ctx.coef == pytest.approx(8.0)
    assert ctx.n_total == pytest.approx(10.0)


def test_goss_tie_break():
    ctx = goss_sample(np.ones(10), 0.5, 0.5, rng=0)
    assert ctx.top.tolist() == [0, 1, 2, 3, 4]


def test_goss_top_has_largest_gradients():
    g = np.random.default_rng(5).normal(size=(100, 2))
    ctx = goss_sample(g, 0.2, 0.1, rng=1)
    norm = np.sqrt((g * g).sum(axis=1))
    rest = np.setdiff1d(np.arange(100), ctx.top)
    assert norm[ctx.top].min() >= norm[rest].max()


def test_split_gain_hand_case():
    ctx = GossSplitContext(np.array([0, 1]), np.array([], dtype=int), 1.0, 2, np.array([1.0, -1.0]))
    assert split_gain(ctx, np.array([0, 1]), 0) == 1.0


def test_split_gain_empty_child():
    ctx = GossSplitContext(np.array([0, 1]), np.array([], dtype=int), 1.0, 2, np.array([1.0, -1.0]))
    with pytest.raises(DegenerateSplit):
        split_gain(ctx, np.array([0, 0]), 0)


def test_split_gain_agrees_with_tree_root():
    # sample-by-sample gain minus the parent term equals the recorded root improvement
    rng = np.random.default_rng(11)
    X = rng.integers(0, 6, size=(80, 3)).astype(float)
    y = (X[:, 1] + rng.integers(0, 3, 80) > 4).astype(int)
    ens = train(X, y, TrainParams(max_iterations=1, goss_enabled=False, efb_enabled=False, min_samples_per_leaf=1))
    tree = ens.trees[0][2]
    g = 0.5 - one_hot_labels(y, 2)[:, 0]
    g = g * class_weights(y, 5.0)
    binned, _ = bin_features(X)
    ctx = GossSplitContext(np.arange(80), np.array([], dtype=int), 1.0, 80, g)
    raw = split_gain(ctx, binned[tree.feature[0]], tree.threshold[0])
    assert raw - g.sum() ** 2 / 80 / 80 == tree.gain[0]


# -- EFB -------------------------------------------------------------------------

def test_exclusive_pair_one_bundle():
    binned = np.array([[1, 0, 2, 0], [0, 1, 0, 3]], dtype=np.uint8)
    assert len(efb_bundle(binned, [3, 4], 0.0)) == 1


def test_overlapping_pair_two_bundles():
    binned = np.array([[1, 1, 0], [0, 1, 1]], dtype=np.uint8)
    assert len(efb_bundle(binned, [2, 2], 0.0)) == 2


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_bundle_round_trip(seed):
    rng = np.random.default_rng(seed)
    F, n = rng.integers(1, 8), rng.integers(1, 60)
    n_bins = rng.integers(2, 6, size=F).tolist()
    binned = np.zeros((F, n), dtype=np.uint8)
    owner = rng.integers(0, F + 1, size=n)  # one active feature per row (or none)
    for i in range(n):
        if owner[i] < F:
            binned[owner[i], i] = rng.integers(1, n_bins[owner[i]])
    bundles = efb_bundle(binned, n_bins, 0.0)
    assert sorted(j for b in bundles for j in b.members) == list(range(F))
    np.testing.assert_array_equal(unbundle(bundle_columns(binned, bundles), bundles, n_bins), binned)


# -- training --------------------------------------------------------------------

def test_separable_loss_decreases():
    X = np.array([[0.0], [1.0], [2.0], [3.0]])
    y = np.array([0, 0, 1, 1])
    ens = train(X, y, TrainParams(max_iterations=20, min_samples_per_leaf=1, goss_enabled=False))
    losses = [e["train_loss"] for e in ens.log]
    assert all(b < a for a, b in zip(losses, losses[1:]))


def test_xor_learned():
    rng = np.random.default_rng(2)
    X = rng.integers(0, 2, size=(400, 2)).astype(float)
    y = (X[:, 0] != X[:, 1]).astype(int)
    ens = train(X, y, TrainParams(max_iterations=50, max_leaves=4, min_samples_per_leaf=5,
                                  positive_class_weight=1.0, goss_enabled=False))
    assert (predict(ens, X).argmax(axis=1) == y).all()


def test_goss_degenerate_equivalence():
    rng = np.random.default_rng(8)
    X = rng.normal(size=(300, 6))
    y = (X[:, 0] * X[:, 1] > 0).astype(int)
    a = train(X, y, TrainParams(max_iterations=8, goss_enabled=False, efb_enabled=False))
    b = train(X, y, TrainParams(max_iterations=8, goss_a=1.0, goss_b=0.0, efb_enabled=False))
    assert a.to_dict()["trees"] == b.to_dict()["trees"]


def test_empty_ensemble_uniform():
    X = np.random.default_rng(0).normal(size=(20, 2))
    ens = train(X, np.arange(20) % 2, TrainParams(max_iterations=0))
    np.testing.assert_array_equal(predict(ens, X), 0.5)


def test_training_rows_recovered():
    rng = np.random.default_rng(4)
    X = rng.normal(size=(300, 4))
    y = (X[:, 2] > 0.3).astype(int)
    ens = train(X, y, TrainParams(max_iterations=30, min_samples_per_leaf=5))
    assert (predict(ens, X).argmax(axis=1) == y).all()


def test_permuted_columns_same_output():
    rng = np.random.default_rng(6)
    X = rng.normal(size=(200, 4))
    y = (X[:, 0] + X[:, 3] > 0).astype(int)
    cols = ["a", "b", "c", "d"]
    ens = train(X, y, TrainParams(max_iterations=10), cols)
    perm = [2, 0, 3, 1]
    np.testing.assert_array_equal(predict(ens, X[:, perm], [cols[p] for p in perm]), predict(ens, X, cols))
    with pytest.raises(ColumnMismatch):
        predict(ens, X[:, :3], cols[:3])


def test_planted_feature_importance():
    rng = np.random.default_rng(9)
    X = rng.normal(size=(400, 5))
    y = (X[:, 3] > 0).astype(int)
    ens = train(X, y, TrainParams(max_iterations=10), ["a", "b", "c", "planted", "e"])
    ranking = feature_importance(ens)
    assert ranking[0][0] == "planted"


def test_single_feature_and_unused():
    rng = np.random.default_rng(10)
    X = np.column_stack([rng.normal(size=200), np.zeros(200)])
    y = (X[:, 0] > 0).astype(int)
    ranking = feature_importance(train(X, y, TrainParams(max_iterations=5), ["x", "unused"]))
    assert ranking[0][0] == "x"
    assert ranking[-1] == ("unused", 0.0, 0)


def test_early_stopping_truncates():
    rng = np.random.default_rng(12)
    X = rng.normal(size=(400, 3))
    y = (rng.random(400) < 0.3).astype(int)  # pure noise: validation loss turns up early
    ens = train(X[:300], y[:300], TrainParams(max_iterations=200, early_stopping_rounds=5),
                valid=(X[300:], y[300:]))
    assert ens.best_iteration is not None
    assert ens.n_iterations == ens.best_iteration
    valid = [e["valid_loss"] for e in ens.log]
    assert min(valid) == valid[ens.best_iteration - 1]


def test_save_load_round_trip(tmp_path):
    rng = np.random.default_rng(13)
    X = rng.normal(size=(150, 3))
    y = (X[:, 0] > 0).astype(int)
    ens = train(X, y, TrainParams(max_iterations=5), ["a", "b", "c"])
    ens.save(tmp_path / "m.json")
    again = Ensemble.load(tmp_path / "m.json")
    np.testing.assert_array_equal(again.predict_proba(X), ens.predict_proba(X))
    again.save(tmp_path / "m2.json")
    assert (tmp_path / "m.json").read_bytes() == (tmp_path / "m2.json").read_bytes()


def test_input_errors():
    X = np.zeros((10, 2))
    with pytest.raises(SingleClassData):
        train(X, np.zeros(10, dtype=int))
    X[0, 0] = np.nan
    with pytest.raises(NonFiniteInput):
        train(X, np.arange(10) % 2)
    with pytest.raises(InvalidConfig):
        TrainParams(goss_a=0.9, goss_b=0.5).validate()
    with pytest.raises(InvalidConfig):
        TrainParams.from_dict({"nope": 1})


def test_multiclass():
    rng = np.random.default_rng(14)
    X = rng.normal(size=(300, 2))
    y = np.digitize(X[:, 0], [-0.5, 0.5])
    ens = train(X, y, TrainParams(num_classes=3, max_iterations=30, positive_class_weight=1.0))
    assert (predict(ens, X).argmax(axis=1) == y).mean() > 0.97
    assert len(ens.trees) == 3 * ens.n_iterations
