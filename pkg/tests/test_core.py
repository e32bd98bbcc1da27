import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import toy_dataset
from odforge.core import (
    LabeledDataset,
    Metadata,
    SplitDataset,
    derive_seed,
    make_split,
    n_outliers_for,
    read_dataset,
    read_matrix_csv,
    round_half_up,
    standardize,
    write_dataset,
    write_matrix_csv,
)
from odforge.exceptions import DimensionMismatch, FormatError, TooFewInliers, ValidationError

# computed with an independent uint64 implementation of the splitmix64 finalizer
SEED_TABLE = [
    ((0, 0), 0x0),
    ((0, 1), 0xE220A8397B1DCDAF),
    ((1, 0), 0x5692161D100B05E5),
    ((42, 7), 0x53AD348AF3DDAF4B),
    ((2**64 - 1, 3), 0x8F33834013B31F7C),
    ((123456789, 2**40), 0x07E96EAF3FE270EC),
]


@pytest.mark.parametrize("args,expected", SEED_TABLE)
def test_derive_seed_frozen(args, expected):
    assert derive_seed(*args) == expected


@given(st.integers(0, 2**64 - 1), st.integers(0, 2**32))
def test_derive_seed_range_and_negative_wrap(master, stream):
    s = derive_seed(master, stream)
    assert 0 <= s < 2**64
    if master:
        assert derive_seed(master - 2**64, stream) == s


def test_round_half_up():
    assert [round_half_up(x) for x in (0.5, 1.5, 2.5, 2.49, -0.5)] == [1, 2, 3, 2, 0]
    assert n_outliers_for(0.05, 1010) == 51  # 50.5 rounds up
    assert n_outliers_for(0.1, 1000) == 100


def test_metadata_validation():
    with pytest.raises(ValidationError):
        Metadata(id="")
    with pytest.raises(ValidationError):
        Metadata(id="x", source="web")
    with pytest.raises(ValidationError):
        Metadata(id="x", outlier_kind="weird")
    m = Metadata(id="x", tags=("a",))
    assert Metadata.from_dict(m.to_dict()) == m


def test_labeled_dataset_rejects_bad_input():
    with pytest.raises(ValidationError):
        LabeledDataset(np.ones((4, 2)), [1, 1, 1, 1], Metadata(id="a"))
    with pytest.raises(ValidationError):
        LabeledDataset(np.ones((4, 2)), [0, 0, 1, 1], Metadata(id="a"))
    with pytest.raises(ValidationError):
        LabeledDataset([[np.nan, 1.0]] * 3, [0, 0, 0], Metadata(id="a"))
    with pytest.raises(DimensionMismatch):
        LabeledDataset(np.ones((4, 2)), [0, 0, 0], Metadata(id="a"))


@given(n_in=st.integers(2, 80), n_out=st.integers(0, 30), seed=st.integers(0, 2**32))
def test_split_properties(n_in, n_out, seed):
    n_out = min(n_out, n_in - 1) if n_in > 1 else 0
    data = toy_dataset(n_in, n_out, d=2, seed=seed % 1000)
    s = make_split(data, seed)
    assert s.train.shape[0] == n_in // 2
    assert s.test.shape[0] == n_in - n_in // 2 + n_out
    assert s.test_labels.sum() == n_out
    # train rows are inliers, and the union is the original multiset
    inl = {tuple(r) for r in data.features[data.labels == 0]}
    assert all(tuple(r) in inl for r in s.train)
    both = np.vstack([s.train, s.test])
    assert sorted(map(tuple, both)) == sorted(map(tuple, data.features))
    out_rows = {tuple(r) for r in data.features[data.labels == 1]}
    assert {tuple(r) for r in s.test[s.test_labels == 1]} == out_rows
    assert make_split(data, seed) == s


def test_split_needs_two_inliers():
    data = LabeledDataset(np.arange(3.0)[:, None], [0, 0, 0], Metadata(id="a"))
    make_split(data, 0)
    data = LabeledDataset(np.arange(1.0)[:, None], [0], Metadata(id="a"))
    with pytest.raises(TooFewInliers):
        make_split(data, 0)


def test_standardize(rng):
    train = rng.standard_normal((50, 3)) * [1, 5, 0] + [0, 2, 7]
    test = rng.standard_normal((10, 3))
    tz, sz, (mean, scale) = standardize(train, test)
    np.testing.assert_allclose(tz.mean(axis=0), 0, atol=1e-12)
    np.testing.assert_allclose(tz.std(axis=0)[:2], 1, atol=1e-12)
    assert scale[2] == 1.0  # constant column is only centred
    np.testing.assert_allclose(sz, (test - mean) / scale)


def test_csv_roundtrip_is_exact(tmp_path, rng):
    x = rng.standard_normal((20, 4)) * 10.0 ** rng.integers(-300, 300, size=(20, 4))
    p = tmp_path / "m.csv"
    write_matrix_csv(p, x, ["a", "b", "c", "d"])
    header, y = read_matrix_csv(p)
    assert header == ["a", "b", "c", "d"]
    assert np.array_equal(x, y)
    first = p.read_bytes()
    write_matrix_csv(p, y, header)
    assert p.read_bytes() == first
    assert b"\r" not in first


def test_csv_errors_carry_position(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("f0,f1\n1,2\n3,abc\n")
    with pytest.raises(FormatError) as err:
        read_matrix_csv(p)
    assert (err.value.row, err.value.column) == (2, 1)
    p.write_text("f0,f1\n1,inf\n")
    with pytest.raises(FormatError):
        read_matrix_csv(p)


def test_dataset_roundtrip_and_private(tmp_path, toy):
    s = make_split(toy, 3)
    write_dataset(s, tmp_path / "pub")
    assert read_dataset(tmp_path / "pub") == s
    meta = json.loads((tmp_path / "pub" / "meta.json").read_text())
    assert meta["n_train"] == s.train.shape[0] and meta["d"] == 3

    priv = SplitDataset(s.train, s.test, s.test_labels, s.meta.replace(private=True))
    write_dataset(priv, tmp_path / "priv")
    assert not (tmp_path / "priv" / "test_labels.csv").exists()
    assert read_dataset(tmp_path / "priv").test_labels is None


def test_public_dataset_without_labels_is_an_error(tmp_path, toy):
    write_dataset(make_split(toy, 0), tmp_path)
    (tmp_path / "test_labels.csv").unlink()
    with pytest.raises(FormatError):
        read_dataset(tmp_path)
