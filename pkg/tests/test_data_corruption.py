import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from perpgrad.corruption import CorruptionSpec, corrupt, perturbation_magnitude
from perpgrad.data import (
    DatasetSpec,
    make_dataset,
    read_csv_dataset,
    read_idx,
    read_idx_dataset,
    stratified_subsample,
    two_moons,
    write_idx,
)
from perpgrad.errors import ConfigurationError, IngestionError
from perpgrad.rng import stream


def test_label_fraction_counts_per_class():
    d = make_dataset(DatasetSpec("two_moons", n_samples=1000), seed=0, label_fraction=0.1)
    assert d.class_counts == {0: 50, 1: 50}
    assert len(d.train) == 100 and d.pool_train_size == 1000


def test_dataset_is_deterministic_and_pool_fixed_across_seeds():
    spec = DatasetSpec("gaussian_blobs", n_samples=300, n_classes=4, n_features=3)
    a, b = make_dataset(spec, 1, 0.5), make_dataset(spec, 1, 0.5)
    assert a.train.X.tobytes() == b.train.X.tobytes()
    c = make_dataset(spec, 2, 0.5)
    assert a.test.X.tobytes() == c.test.X.tobytes()
    assert a.train.X.tobytes() != c.train.X.tobytes()


def test_two_moons_balanced():
    X, y = two_moons(101, 0.1, np.random.default_rng(0))
    assert X.shape == (101, 2) and set(np.unique(y)) == {0, 1}


@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(0, 4), min_size=1, max_size=200), st.floats(0.01, 1.0))
def test_stratified_subsample_counts(labels, frac):
    y = np.array(labels)
    idx = stratified_subsample(y, frac, np.random.default_rng(0))
    assert len(np.unique(idx)) == len(idx)
    for c in np.unique(y):
        n = int((y == c).sum())
        assert int((y[idx] == c).sum()) == int(np.floor(frac * n + 0.5))


def test_bad_label_fraction():
    with pytest.raises(ConfigurationError):
        make_dataset(DatasetSpec(), 0, 0.0)


def test_csv_ingestion(tmp_path):
    p = tmp_path / "d.csv"
    rows = ["a,b,label"] + [f"{i},{-i},{i % 2}" for i in range(40)]
    p.write_text("\n".join(rows) + "\n")
    X, y = read_csv_dataset(p)
    assert X.shape == (40, 2) and y.sum() == 20
    d = make_dataset(DatasetSpec("csv", path=str(p)), 0)
    assert len(d.train) + len(d.val) + len(d.test) == 40
    assert len(d.train) == 32


@pytest.mark.parametrize("body,where", [("1,2,0\n1,2\n", ":3"), ("1,x,0\n", ":2"), ("1,2,-1\n", ":2")])
def test_csv_errors_carry_line_numbers(tmp_path, body, where):
    p = tmp_path / "bad.csv"
    p.write_text("a,b,label\n" + body)
    with pytest.raises(IngestionError, match=where):
        read_csv_dataset(p)


def test_missing_file():
    with pytest.raises(IngestionError):
        read_csv_dataset("/nonexistent/x.csv")


def test_idx_roundtrip_and_grid(tmp_path):
    imgs = (np.arange(6 * 4 * 4) % 256).astype(np.uint8).reshape(6, 4, 4)
    write_idx(tmp_path / "x.idx", imgs)
    write_idx(tmp_path / "y.idx", np.arange(6, dtype=np.uint8) % 2)
    assert np.array_equal(read_idx(tmp_path / "x.idx"), imgs)
    X, y, grid = read_idx_dataset(tmp_path / "x.idx", tmp_path / "y.idx")
    assert grid == (4, 4) and X.shape == (6, 16) and X.max() <= 1.0


def test_idx_errors_carry_offsets(tmp_path):
    p = tmp_path / "bad.idx"
    p.write_bytes(b"\x01\x00\x08\x01")
    with pytest.raises(IngestionError, match="@0"):
        read_idx(p)
    p.write_bytes(b"\x00\x00\x08\x01\x00\x00\x00\x05abc")
    with pytest.raises(IngestionError, match="@8"):
        read_idx(p)


@pytest.mark.parametrize("op", ["gaussian_noise", "impulse_noise", "contrast_reduce"])
def test_severity_zero_is_identity(op):
    x = np.random.default_rng(0).random((10, 5))
    np.testing.assert_array_equal(corrupt(x, CorruptionSpec(op, 0), np.random.default_rng(1)), x)


def test_gaussian_variance_on_zero_batch():
    x = np.zeros((100, 200))
    out = corrupt(x, CorruptionSpec("gaussian_noise", 5), np.random.default_rng(2))
    assert abs(out.var(ddof=1) / 0.04 - 1) <= 0.1


def test_impulse_replaces_exact_count():
    x = np.full((50, 37), 0.5)
    out = corrupt(x, CorruptionSpec("impulse_noise", 1), np.random.default_rng(3), value_range=(0.0, 1.0))
    changed = out != x
    assert changed.sum() == round(0.02 * x.size)
    assert set(np.unique(out[changed])) <= {0.0, 1.0}


def test_contrast_blend_toward_mean():
    x = np.array([[0.0, 1.0]])
    out = corrupt(x, CorruptionSpec("contrast_reduce", 2), np.random.default_rng(0), value_range=(0, 1))
    np.testing.assert_allclose(out, [[0.15, 0.85]])


def test_blur_needs_grid():
    x = np.random.default_rng(0).random((4, 16))
    with pytest.raises(ConfigurationError):
        corrupt(x, CorruptionSpec("box_blur", 1), np.random.default_rng(0))
    out = corrupt(x, CorruptionSpec("box_blur", 1), np.random.default_rng(0), grid=(4, 4))
    assert out.shape == x.shape


def test_outputs_clipped_to_range():
    x = np.random.default_rng(4).random((30, 10))
    out = corrupt(x, CorruptionSpec("gaussian_noise", 5), np.random.default_rng(5), value_range=(0.0, 1.0))
    assert out.min() >= 0.0 and out.max() <= 1.0


def test_invalid_spec():
    with pytest.raises(ConfigurationError):
        CorruptionSpec("fog", 1)
    with pytest.raises(ConfigurationError):
        CorruptionSpec("gaussian_noise", 6)


@pytest.mark.parametrize("op", ["gaussian_noise", "impulse_noise", "contrast_reduce"])
def test_perturbation_monotone_in_severity(op):
    x = np.random.default_rng(6).random((200, 8))
    mags = []
    for s in range(6):
        out = corrupt(x, CorruptionSpec(op, s), stream(0, f"corrupt/{op}"), value_range=(0.0, 1.0))
        mags.append(perturbation_magnitude(x, out))
    assert mags[0] == 0.0
    assert all(b > a for a, b in zip(mags, mags[1:]))
