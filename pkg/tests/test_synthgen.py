import numpy as np
import pytest
from hypothesis import given, strategies as st

from treelab.data import FeatureColumn, unique_value_count
from treelab.synthgen import (EXP3_LEVELS, Exp1Config, GenerationError, GroundTruthTree,
                              RandomTreeConfig, experiment1_tree, experiment_config,
                              gen_experiment1, gen_random_dataset, gen_random_tree,
                              inject_missing, label_with_tree, quantize, sample_features)


def leaf_boxes(tree, p):
    """Map leaf -> per-feature (lo, hi) interval on the unit cube."""
    out = {}
    stack = [(0, [(0.0, 1.0)] * p)]
    while stack:
        t, box = stack.pop()
        f = tree.feature[t]
        if f < 0:
            out[t] = box
            continue
        lo, hi = box[f]
        thr = tree.threshold[t]
        lb, rb = list(box), list(box)
        lb[f] = (lo, min(hi, thr))
        rb[f] = (max(lo, thr), hi)
        stack.append((int(tree.left[t]), lb))
        stack.append((int(tree.right[t]), rb))
    return out


def siblings_distinct(tree):
    leaf = tree.feature < 0
    for t in np.flatnonzero(~leaf):
        lt, rt = tree.left[t], tree.right[t]
        if leaf[lt] and leaf[rt] and tree.leaf_value[lt] == tree.leaf_value[rt]:
            return False
    return True


# -- experiment 1 ------------------------------------------------------------

def test_truth_importance():
    _, tree, truth = gen_experiment1(Exp1Config(100), np.random.default_rng(0))
    assert tuple(truth) == (0, 0, 0, 0.1, 0.1, 0.8)
    assert tree.relevant_features == frozenset({3, 4, 5})


def test_noiseless_missing_x4_branch_gives_one():
    data, _, _ = gen_experiment1(Exp1Config(2000), np.random.default_rng(1), noise=False)
    X = data.matrix()
    rows = (X[:, 5] == 0) & np.isnan(X[:, 3])
    assert rows.sum() > 0
    assert np.all(data.y[rows] == 1.0)


def test_exactly_a_quarter_of_x4_missing():
    data, _, _ = gen_experiment1(Exp1Config(1000), np.random.default_rng(2))
    assert int(data.columns[3].missing_mask.sum()) == 250
    for j in (0, 1, 2, 4, 5):
        assert not data.columns[j].missing_mask.any()


def test_x5_one_decimal_levels():
    data, _, _ = gen_experiment1(Exp1Config(10000), np.random.default_rng(3))
    levels = np.unique(data.columns[4].observed())
    assert levels.size <= 11
    # rounding U[0,1] to one digit reaches both ends, so all 11 levels appear
    assert np.allclose(levels, np.arange(11) / 10)


def test_x6_binary():
    data, _, _ = gen_experiment1(Exp1Config(500), np.random.default_rng(4))
    assert set(np.unique(data.columns[5].values)) == {0.0, 1.0}


def test_region_frequencies_match_analytic_probabilities():
    data, _, _ = gen_experiment1(Exp1Config(100000), np.random.default_rng(5), noise=False)
    # P(X6=0, X4<=.5 or missing) = .5 * (.25 + .75 * .5); X5 <= .5 after rounding has mass .55
    expected = {1.0: 0.3125, 2.0: 0.1875, 3.0: 0.275, 4.0: 0.225}
    for value, prob in expected.items():
        assert abs(np.mean(data.y == value) - prob) < 0.01


def test_exp1_noiseless_targets_follow_figure_tree():
    data, tree, _ = gen_experiment1(Exp1Config(3000), np.random.default_rng(6), noise=False)
    assert set(np.unique(data.y)) == {1.0, 2.0, 3.0, 4.0}
    X = data.matrix()
    x4, x5, x6 = X[:, 3], X[:, 4], X[:, 5]
    low4 = np.isnan(x4) | (x4 <= 0.5)
    want = np.where(x6 == 0, np.where(low4, 1.0, 2.0), np.where(x5 <= 0.5, 3.0, 4.0))
    assert np.array_equal(data.y, want)
    assert tree.n_splits() == 3


def test_exp1_config_validation():
    with pytest.raises(ValueError):
        Exp1Config(7)
    with pytest.raises(ValueError):
        Exp1Config(100, sigma=0.0)


# -- random trees --------------------------------------------------------------

def test_single_split_tree_is_a_stump_with_distinct_labels():
    cfg = RandomTreeConfig(p_used=1, min_splits=1, max_splits=1)
    for seed in range(20):
        t = gen_random_tree(cfg, np.random.default_rng(seed))
        assert t.n_splits() == 1
        leaves = np.flatnonzero(t.feature < 0)
        assert sorted(t.leaf_value[leaves]) == [0.0, 1.0]


def test_thousand_trees_size_and_features():
    rng = np.random.default_rng(7)
    cfg = RandomTreeConfig()
    sizes = set()
    for _ in range(1000):
        t = gen_random_tree(cfg, rng)
        assert 3 <= t.n_splits() <= 15
        assert len(t.used_features()) == 3
        assert t.used_features() == set(t.relevant_features)
        assert siblings_distinct(t)
        sizes.add(t.n_splits())
    assert sizes == set(range(3, 16))


@pytest.mark.parametrize("experiment", [2, 3])
def test_tree_predicts_its_own_leaf_centroids(experiment):
    rng = np.random.default_rng(8)
    cfg = experiment_config(experiment)
    for _ in range(50):
        t = gen_random_tree(cfg, rng)
        boxes = leaf_boxes(t, cfg.p_total)
        rows = np.array([[0.5 * (lo + hi) for lo, hi in box] for box in boxes.values()])
        assert np.array_equal(t.apply(rows), np.array(list(boxes.keys())))
        assert np.array_equal(t.predict_matrix(rows), t.leaf_value[list(boxes.keys())])


@pytest.mark.parametrize("experiment", [2, 3])
def test_leaves_nearly_always_receive_rows(experiment):
    rng = np.random.default_rng(9)
    cfg = experiment_config(experiment)
    full = 0
    for _ in range(1000):
        t = gen_random_tree(cfg, rng)
        data = gen_random_dataset(t, 1000, cfg, rng)
        reached = np.unique(t.apply(data.matrix()))
        full += reached.size == np.count_nonzero(t.feature < 0)
    assert full >= 990


def test_infeasible_config_fails_after_bounded_retries():
    # a two-level feature can only be split once, so seven splits cannot happen
    cfg = RandomTreeConfig(p_total=2, p_used=1, min_splits=7, max_splits=7,
                           quantization_levels=((0, 2), (1, 2)))
    with pytest.raises(GenerationError):
        gen_random_tree(cfg, np.random.default_rng(0), max_attempts=20)


@given(seed=st.integers(0, 2 ** 32 - 1), experiment=st.sampled_from([2, 3]))
def test_generated_trees_respect_sibling_rule(seed, experiment):
    t = gen_random_tree(experiment_config(experiment), np.random.default_rng(seed))
    assert siblings_distinct(t)


def test_tree_json_round_trip():
    t = gen_random_tree(RandomTreeConfig(seed=11))
    back = GroundTruthTree.from_json(t.to_json())
    X = np.random.default_rng(0).random((200, 7))
    assert np.array_equal(back.predict_matrix(X), t.predict_matrix(X))
    assert back.relevant_features == t.relevant_features


# -- features -------------------------------------------------------------------

def test_unquantized_features_are_distinct():
    cols = sample_features(500, RandomTreeConfig(), np.random.default_rng(0))
    assert len(cols) == 7
    assert all(unique_value_count(c) == 500 for c in cols)


def test_exp3_quantized_columns():
    cols = sample_features(5000, experiment_config(3), np.random.default_rng(1))
    assert [unique_value_count(c) for c in cols[3:]] == [2, 4, 10, 20]
    assert all(unique_value_count(c) == 5000 for c in cols[:3])
    assert dict(EXP3_LEVELS) == {3: 2, 4: 4, 5: 10, 6: 20}


def test_sample_features_deterministic():
    a = sample_features(100, RandomTreeConfig(), np.random.default_rng(5))
    b = sample_features(100, RandomTreeConfig(), np.random.default_rng(5))
    assert all(np.array_equal(x.values, y.values) for x, y in zip(a, b))


def test_quantize_examples():
    c = FeatureColumn.from_values([0.3, 0.7])
    assert list(quantize(c, 2).values) == [0.0, 1.0]
    assert quantize(FeatureColumn.from_values([0.5]), 4).values[0] == pytest.approx(2 / 3)
    with pytest.raises(ValueError):
        quantize(c, 1)


def test_quantize_twenty_levels():
    c = FeatureColumn.from_values(np.random.default_rng(2).random(10000))
    q = quantize(c, 20)
    assert unique_value_count(q) == 20
    assert q.values.min() >= 0.0 and q.values.max() <= 1.0


@given(st.lists(st.floats(0, 1), min_size=1, max_size=100), st.integers(2, 30))
def test_quantize_levels_property(values, k):
    q = quantize(FeatureColumn.from_values(values), k).values
    assert np.unique(q).size <= k
    steps = q * (k - 1)
    assert np.allclose(steps, np.round(steps))
    assert np.all(np.abs(q - np.asarray(values)) <= 0.5 / (k - 1) + 1e-12)


def test_inject_missing_examples():
    c = FeatureColumn.from_values(np.random.default_rng(0).random(100))
    same = inject_missing(c, 0.0, np.random.default_rng(1))
    assert np.array_equal(same.values, c.values) and not same.missing_mask.any()
    m = inject_missing(c, 0.25, np.random.default_rng(1))
    assert m.missing_mask.sum() == 25
    keep = ~m.missing_mask
    assert np.array_equal(m.values[keep], c.values[keep])


# -- labelling -------------------------------------------------------------------

def test_label_with_stump():
    t = GroundTruthTree(np.array([0, -1, -1]), np.array([0.5, 0, 0]), np.ones(3, bool),
                        np.array([1, -1, -1]), np.array([2, -1, -1]), np.array([0.0, 0.0, 1.0]),
                        frozenset({0}), 2)
    cols = [FeatureColumn.from_values([0.2, 0.9]), FeatureColumn.from_values([0.5, 0.5])]
    assert list(label_with_tree(t, cols).values) == [0.0, 1.0]
    with pytest.raises(ValueError):
        label_with_tree(t, cols[:1])


def test_relabelling_reproduces_stored_target():
    rng = np.random.default_rng(3)
    cfg = experiment_config(3)
    t = gen_random_tree(cfg, rng)
    data = gen_random_dataset(t, 400, cfg, rng)
    assert np.array_equal(label_with_tree(t, data.columns).values, data.y)


def test_exp1_tree_zero_noise_relabel():
    data, tree, _ = gen_experiment1(Exp1Config(1000), np.random.default_rng(4), noise=False)
    assert np.array_equal(label_with_tree(tree, data.columns).values, data.y)
    assert experiment1_tree().to_dict()["nodes"][0]["split_feature"] == 5


def _leaf_mass(box, levels):
    mass = 1.0
    for j, (lo, hi) in enumerate(box):
        k = levels.get(j)
        if k is None:
            mass *= hi - lo
        else:
            # exact level probabilities of a rounded uniform, estimated on a fine grid
            grid = np.round(np.linspace(0, 1, 200001) * (k - 1)) / (k - 1)
            mass *= np.mean((grid >= lo) & (grid <= hi))
    return mass


@given(seed=st.integers(0, 2 ** 32 - 1), experiment=st.sampled_from([2, 3]))
def test_every_leaf_keeps_minimum_mass(seed, experiment):
    cfg = experiment_config(experiment)
    t = gen_random_tree(cfg, np.random.default_rng(seed))
    levels = cfg.levels()
    for box in leaf_boxes(t, cfg.p_total).values():
        assert _leaf_mass(box, levels) >= cfg.min_leaf_mass - 1e-4


def test_random_tree_config_validation():
    with pytest.raises(ValueError):
        RandomTreeConfig(min_splits=5, max_splits=4)
    with pytest.raises(ValueError):
        RandomTreeConfig(p_used=8)
    with pytest.raises(ValueError):
        RandomTreeConfig(quantization_levels=((0, 1),))
    with pytest.raises(ValueError):
        RandomTreeConfig(min_leaf_mass=1.0)
