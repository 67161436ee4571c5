import glob
import os

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fourier_mts.data import (
    DIFFICULTY,
    TimeSeriesDataset,
    load_manifest,
    load_ts,
    parse_ts,
    serialize_ts,
    synth_dataset,
    validate_against_manifest,
    zscore,
)
from fourier_mts.exceptions import ConfigurationError, DataError, ParseError
from fourier_mts.spectral import ComplexTensor, dft1d_naive

MALFORMED = {
    "bad_ragged_row.ts": (7, "ragged"),
    "bad_missing_value.ts": (6, "missing"),
    "bad_unknown_label.ts": (6, "unknown class label"),
    "bad_no_data_tag.ts": (5, "@data"),
    "bad_non_numeric.ts": (6, "non-numeric"),
    "bad_dims_mismatch.ts": (6, "dimensions"),
    "bad_length_mismatch.ts": (6, "length"),
    "bad_timestamps.ts": (5, "timestamp"),
    "bad_header_after_data.ts": (7, "after @data"),
    "bad_non_finite.ts": (6, "non-finite"),
    "bad_header_value.ts": (2, "integer"),
}


# fixtures -----------------------------------------------------------------------------


def test_handwritten_fixture(ts_dir):
    ds = load_ts(os.path.join(ts_dir, "valid_two_dim.ts"))
    assert ds.X.shape == (2, 2, 3)
    assert ds.y.tolist() == [0, 1]
    assert ds.class_names == ("a", "b")
    assert ds.name == "TwoDim"
    np.testing.assert_array_equal(ds.X[1], [[-1.5, 0.0, 2.25], [7, 8, 9]])


def test_all_valid_fixtures_parse(ts_dir):
    paths = sorted(glob.glob(os.path.join(ts_dir, "valid_*.ts")))
    assert len(paths) == 3
    for p in paths:
        ds = load_ts(p)
        assert len(ds) >= 2


@pytest.mark.parametrize("fname", sorted(MALFORMED))
def test_malformed_fixture_gives_located_error(ts_dir, fname):
    line, fragment = MALFORMED[fname]
    with pytest.raises(ParseError) as info:
        load_ts(os.path.join(ts_dir, fname))
    assert info.value.line == line
    assert fragment in str(info.value)
    assert str(info.value).startswith(f"line {line}:")


def test_malformed_corpus_is_complete(ts_dir):
    found = {os.path.basename(p) for p in glob.glob(os.path.join(ts_dir, "bad_*.ts"))}
    assert found == set(MALFORMED)
    assert len(found) >= 10


def test_inline_ragged_row_names_line():
    text = "@dimensions 1\n@seriesLength 3\n@classLabel true a b\n@data\n1,2,3:a\n1,2,3,4:a\n1,2,3:a\n"
    with pytest.raises(ParseError, match="line 6"):
        parse_ts(text)


def test_parse_errors_are_data_errors():
    with pytest.raises(DataError):
        parse_ts(b"\xff\xfe@data")


def test_partition_from_file_name(tmp_path):
    tr, te = synth_dataset(0, n_per_class=2, length=8)
    (tmp_path / "X_TEST.ts").write_text(serialize_ts(te))
    assert load_ts(tmp_path / "X_TEST.ts").partition == "test"


# round trip and fuzzing -------------------------------------------------------------------


@given(st.integers(0, 2**31 - 1), st.integers(1, 4), st.integers(2, 12), st.integers(2, 4))
def test_serialize_parse_round_trip(seed, dims, length, classes):
    rng = np.random.default_rng(seed)
    n = classes + 2
    X = rng.normal(scale=10 ** rng.uniform(-5, 5), size=(n, dims, length))
    y = np.concatenate([np.arange(classes), rng.integers(0, classes, 2)])
    ds = TimeSeriesDataset("rt", X, y, tuple(f"k{i}" for i in range(classes)))
    back = parse_ts(serialize_ts(ds))
    assert back.class_names == ds.class_names
    np.testing.assert_array_equal(back.y, ds.y)
    np.testing.assert_allclose(back.X, ds.X, rtol=1e-12, atol=0)


_VALID = serialize_ts(TimeSeriesDataset(
    "fz", np.arange(12, dtype=float).reshape(2, 2, 3) / 7, [0, 1], ("a", "b")))


@given(st.data())
def test_mutations_never_crash(data):
    text = _VALID
    for _ in range(data.draw(st.integers(1, 4))):
        op = data.draw(st.sampled_from(["delete", "insert", "replace", "dup_line", "drop_line"]))
        lines = text.split("\n")
        if op in ("dup_line", "drop_line"):
            i = data.draw(st.integers(0, len(lines) - 1))
            if op == "dup_line":
                lines.insert(i, lines[i])
            else:
                del lines[i]
            text = "\n".join(lines)
            continue
        pos = data.draw(st.integers(0, max(len(text) - 1, 0)))
        ch = data.draw(st.sampled_from(list(":,@?#-.e 0123456789abx\n\t")))
        if op == "delete":
            text = text[:pos] + text[pos + 1:]
        elif op == "insert":
            text = text[:pos] + ch + text[pos:]
        else:
            text = text[:pos] + ch + text[pos + 1:]
    try:
        ds = parse_ts(text)
    except ParseError as err:
        assert err.line is None or err.line >= 1
    else:
        assert isinstance(ds, TimeSeriesDataset)


# dataset invariants ----------------------------------------------------------------------


def test_dataset_invariants():
    with pytest.raises(DataError):
        TimeSeriesDataset("x", np.zeros((2, 3)), [0, 1], ("a", "b"))
    with pytest.raises(DataError):
        TimeSeriesDataset("x", np.zeros((2, 1, 3)), [0, 2], ("a", "b"))
    with pytest.raises(DataError):
        TimeSeriesDataset("x", np.zeros((2, 1, 3)), [0, 1], ("a", "a"))
    with pytest.raises(DataError):
        TimeSeriesDataset("x", np.zeros((2, 1, 3)), [0, 1], ("a", "b"), partition="dev")
    empty = TimeSeriesDataset("x", np.zeros((0, 1, 3)), [], ("a", "b"))
    assert len(empty) == 0


# manifest ----------------------------------------------------------------------------------


def test_manifest_has_eighteen_rows():
    m = load_manifest()
    assert len(m) == 18
    assert m["BM"].train_size == 40 and m["BM"].dims == 6 and m["BM"].length == 100
    assert m["BM"].classes == 4


def test_manifest_validation_examples():
    rng = np.random.default_rng(0)
    ds = TimeSeriesDataset("af-like", rng.normal(size=(15, 2, 640)),
                           np.arange(15) % 3, ("n", "s", "t"))
    assert validate_against_manifest(ds, "AF").ok
    report = validate_against_manifest(ds, "BM")
    assert not report.ok
    assert {f for f, _, _ in report.mismatches} == {"train_size", "dims", "length", "classes"}
    empty = ds.subset([])
    report = validate_against_manifest(empty, "AF")
    assert ("train_size", 15, 0) in report.mismatches
    with pytest.raises(ConfigurationError):
        validate_against_manifest(ds, "NOPE")


# synthetic data ---------------------------------------------------------------------------


def test_synth_is_deterministic_and_shaped():
    a_tr, a_te = synth_dataset(7)
    b_tr, b_te = synth_dataset(7)
    np.testing.assert_array_equal(a_tr.X, b_tr.X)
    np.testing.assert_array_equal(a_te.y, b_te.y)
    assert a_tr.X.shape == (90, 2, 32) and a_te.partition == "test"
    assert np.bincount(a_tr.y).tolist() == [30, 30, 30]
    assert not np.array_equal(synth_dataset(8)[0].X, a_tr.X)


def test_noiseless_synth_is_separable_by_nearest_centroid():
    tr, te = synth_dataset(0, difficulty=0.0)
    centroids = np.stack([tr.X[tr.y == c].reshape(-1, 64).mean(axis=0) for c in range(3)])
    d = ((te.X.reshape(len(te), 1, 64) - centroids[None]) ** 2).sum(axis=-1)
    assert np.mean(d.argmin(axis=1) == te.y) == 1.0


def test_noiseless_dominant_bin_is_class_frequency():
    tr, _ = synth_dataset(0, n_classes=4, dims=1, length=32, difficulty=0.0)
    for c in range(4):
        x = tr.X[tr.y == c][0, 0]
        spec = np.abs(dft1d_naive(ComplexTensor.from_real(x)).numpy())
        assert int(np.argmax(spec[: 32 // 2 + 1])) == c + 1


def test_synth_named_difficulty_and_bounds():
    assert DIFFICULTY["mid"] == 0.75
    a, _ = synth_dataset(0, difficulty="mid")
    b, _ = synth_dataset(0, difficulty=0.75)
    np.testing.assert_array_equal(a.X, b.X)
    with pytest.raises(ConfigurationError):
        synth_dataset(0, n_classes=1)
    with pytest.raises(ConfigurationError):
        synth_dataset(0, difficulty="extreme")


def test_zscore():
    tr, _ = synth_dataset(0, n_per_class=3)
    z = zscore(tr)
    np.testing.assert_allclose(z.X.mean(axis=2), 0, atol=1e-12)
    np.testing.assert_allclose(z.X.std(axis=2), 1, atol=1e-12)
