import numpy as np
import pytest
from hypothesis import given, strategies as st

from treelab.data import (CLASSIFICATION, MISSING, REGRESSION, DataError, FeatureColumn,
                          Target, from_matrix, make_dataset, read_csv, split_train_valid,
                          unique_value_count)
from treelab.synthgen import Exp1Config, gen_experiment1, quantize


def col(values, mask=None):
    return FeatureColumn.from_values(values, mask)


def test_make_dataset_two_columns():
    d = make_dataset([col([1.0, 2.0, 3.0]), col([0.0, 0.0, 1.0])],
                     Target(REGRESSION, [0.5, 1.5, 2.5]))
    assert d.n_rows == 3
    assert d.p == 2


def test_make_dataset_length_mismatch_names_column():
    with pytest.raises(DataError, match="column 1"):
        make_dataset([col([1.0, 2.0, 3.0]), col([1.0, 2.0, 3.0, 4.0])],
                     Target(REGRESSION, [0.0, 0.0, 0.0]))


def test_make_dataset_needs_a_column():
    with pytest.raises(DataError):
        make_dataset([], Target(REGRESSION, [1.0]))


def test_experiment1_dataset_has_six_features():
    data, _, _ = gen_experiment1(Exp1Config(5000), np.random.default_rng(0))
    assert data.p == 6
    assert data.n_rows == 5000


def test_classification_target_rejects_other_labels():
    with pytest.raises(DataError):
        Target(CLASSIFICATION, [0.0, 2.0])


def _dataset(n, seed=0):
    r = np.random.default_rng(seed)
    X = r.random((n, 2))
    X[r.random(n) < 0.2, 1] = np.nan
    return from_matrix(X, np.arange(n, dtype=float))


def test_split_sizes_100():
    tr, va = split_train_valid(_dataset(100), 0.25, np.random.default_rng(1))
    assert (tr.n_rows, va.n_rows) == (75, 25)


def test_split_sizes_4():
    tr, va = split_train_valid(_dataset(4), 0.25, np.random.default_rng(1))
    assert (tr.n_rows, va.n_rows) == (3, 1)


def test_split_is_deterministic_for_a_seed():
    d = _dataset(50)
    a = split_train_valid(d, 0.25, np.random.default_rng(9))
    b = split_train_valid(d, 0.25, np.random.default_rng(9))
    assert np.array_equal(a[0].y, b[0].y) and np.array_equal(a[1].y, b[1].y)


@pytest.mark.parametrize("n,frac", [(3, 0.25), (1, 0.5), (10, 0.99)])
def test_split_rejects_degenerate_sizes(n, frac):
    with pytest.raises(DataError):
        split_train_valid(_dataset(n), frac, np.random.default_rng(0))


@given(n=st.integers(4, 200), frac=st.floats(0.25, 0.75), seed=st.integers(0, 2 ** 32 - 1))
def test_split_partitions_rows(n, frac, seed):
    d = _dataset(n, seed % 97)
    tr, va = split_train_valid(d, frac, np.random.default_rng(seed))
    # targets are row ids, so the union must be every row exactly once
    assert sorted(np.concatenate([tr.y, va.y]).tolist()) == list(range(n))
    assert va.n_rows == int(np.floor(frac * n + 0.5))
    # masks travel with their rows
    for part in (tr, va):
        ids = part.y.astype(int)
        assert np.array_equal(part.columns[1].missing_mask, d.columns[1].missing_mask[ids])


def test_unique_value_count_examples():
    assert unique_value_count(col([0.1, 0.1, 0.2])) == 2
    assert unique_value_count(col([1.0, 2.0], [True, True])) == 0


def test_unique_value_count_after_quantize():
    c = col(np.random.default_rng(3).random(10000))
    assert unique_value_count(quantize(c, 10)) == 10


@given(st.lists(st.tuples(st.floats(-1e6, 1e6), st.booleans()), min_size=1, max_size=50))
def test_accessor_never_exposes_masked_values(entries):
    vals = [v for v, _ in entries]
    mask = [m for _, m in entries]
    c = FeatureColumn(vals, mask)
    for i, m in enumerate(mask):
        got = c.get(i)
        if m:
            assert got is MISSING
        else:
            assert got == vals[i]
    assert c.observed().size == len(mask) - sum(mask)


def test_columns_are_read_only():
    c = col([1.0, 2.0])
    with pytest.raises(ValueError):
        c.values[0] = 5.0


def test_csv_round_trip(tmp_path):
    X = np.array([[0.25, np.nan], [1.5, 2.0], [np.nan, 0.125]])
    d = from_matrix(X, [1.0, 0.0, 1.0], CLASSIFICATION)
    path = tmp_path / "d.csv"
    d.to_csv(path)
    raw = path.read_bytes()
    assert b"\r\n" not in raw
    lines = raw.decode("utf-8").splitlines()
    assert lines[0] == "x1,x2,y"
    assert lines[1] == "0.25,,1"
    back = read_csv(path, CLASSIFICATION)
    assert np.array_equal(back.matrix(), d.matrix(), equal_nan=True)
    assert np.array_equal(back.y, d.y)
