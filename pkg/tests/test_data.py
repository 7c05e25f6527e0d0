import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from certlab.data import (IMAGES_MAGIC, LABELS_MAGIC, DataError, Dataset, IdxParseError,
                          build_toy_pca, dumps_idx, fit_pca, load_dataset, load_idx, parse_idx,
                          save_idx, synthetic, top_components)

from conftest import FIXTURES, needs_mnist

IMAGES = FIXTURES / "four-images-idx3-ubyte"
LABELS = FIXTURES / "four-labels-idx1-ubyte"


def test_fixture_loads():
    ds = load_idx(IMAGES, LABELS)
    assert ds.X.shape == (4, 784)
    assert ds.y.tolist() == [3, 1, 4, 1]
    assert ds.X.max() == 1.0 and ds.X[0, 1] == 1.0 and ds.X[0, 0] == 0.0
    assert ds.X[1, 0] == pytest.approx(10 / 255)


def test_gzip_roundtrip(tmp_path):
    arr = np.arange(24, dtype=np.uint8).reshape(2, 3, 4)
    save_idx(arr, tmp_path / "a.gz")
    save_idx(arr, tmp_path / "b.gz")
    assert (tmp_path / "a.gz").read_bytes() == (tmp_path / "b.gz").read_bytes()
    back = parse_idx(__import__("gzip").decompress((tmp_path / "a.gz").read_bytes()), 0x803)
    assert np.array_equal(back, arr)


def test_wrong_magic():
    raw = bytearray(IMAGES.read_bytes())
    raw[:4] = struct.pack(">I", 0x00000802)
    with pytest.raises(IdxParseError) as e:
        parse_idx(bytes(raw), IMAGES_MAGIC)
    assert e.value.offset == 0


def test_truncated():
    raw = IMAGES.read_bytes()
    with pytest.raises(IdxParseError) as e:
        parse_idx(raw[:-5], IMAGES_MAGIC)
    assert e.value.offset == len(raw) - 5
    with pytest.raises(IdxParseError):
        parse_idx(raw[:6], IMAGES_MAGIC)


def test_label_count_mismatch(tmp_path):
    save_idx(np.array([1, 2, 3], np.uint8), tmp_path / "l")
    with pytest.raises(DataError):
        load_idx(IMAGES, tmp_path / "l")


def test_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_idx(tmp_path / "nope", LABELS)


@settings(max_examples=30, deadline=None)
@given(arrays(np.uint8, st.tuples(st.integers(1, 5), st.integers(1, 5)), elements=st.integers(0, 255)))
def test_idx_roundtrip(arr):
    assert np.array_equal(parse_idx(dumps_idx(arr), 0x800 | arr.ndim), arr)


# -- PCA ----------------------------------------------------------------------------------

def test_top_component_of_a_line():
    rng = np.random.default_rng(0)
    d = np.array([3.0, 4.0]) / 5.0
    X = rng.normal(size=(200, 1)) * d + 1e-3 * rng.normal(size=(200, 2))
    comp = fit_pca(X, 1).components[0]
    assert abs(comp @ d) >= 1 - 1e-6


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_top_components_match_eigh(seed):
    rng = np.random.default_rng(seed)
    B = rng.normal(size=(8, 8))
    w = np.sort(rng.uniform(0.5, 5, 8))[::-1] * (1 + np.arange(8)[::-1])  # distinct spectrum
    Q, _ = np.linalg.qr(B)
    C = Q @ np.diag(w) @ Q.T
    V = top_components(C, 4, seed=seed)
    vals, vecs = np.linalg.eigh(C)
    for k in range(4):
        assert abs(V[k] @ vecs[:, -1 - k]) >= 1 - 1e-8
    assert np.allclose(V @ V.T, np.eye(4), atol=1e-9)


def test_full_rank_projection_preserves_distances():
    rng = np.random.default_rng(3)
    X = rng.normal(size=(50, 5)) * np.array([5, 4, 3, 2, 1])
    Z = fit_pca(X, 5).project(X)
    dx = np.linalg.norm(X[:, None] - X[None], axis=-1)
    dz = np.linalg.norm(Z[:, None] - Z[None], axis=-1)
    assert np.allclose(dx, dz, atol=1e-8)


def test_more_components_reconstruct_better():
    rng = np.random.default_rng(4)
    X = rng.normal(size=(300, 20)) @ rng.normal(size=(20, 20))
    errs = []
    for d in (8, 16):
        b = fit_pca(X, d)
        errs.append(np.sum((b.reconstruct(b.project(X)) - X) ** 2))
    assert errs[1] <= errs[0]


def test_rank_deficient_reports_rank():
    rng = np.random.default_rng(5)
    X = rng.normal(size=(40, 2)) @ rng.normal(size=(2, 6))
    with pytest.raises(DataError, match="rank 2"):
        fit_pca(X, 4)


def test_toy_builder_keeps_labels():
    ds = synthetic(n=300, dims=20, seed=1)
    toy = build_toy_pca(ds, n=100, dims=16, seed=2)
    assert toy.X.shape == (100, 16) and not toy.clip
    assert set(toy.y.tolist()) <= {0, 1}
    with pytest.raises(DataError):
        build_toy_pca(ds, n=1000)


def test_dataset_invariants():
    with pytest.raises(DataError):
        Dataset(np.zeros((3, 2)), np.array([0, 1]))
    with pytest.raises(DataError):
        Dataset(np.zeros((2, 2)), np.array([0, 12]))


def test_synthetic_deterministic():
    a, b = load_dataset("synth", "train", seed=3), load_dataset("synth", "train", seed=3)
    assert np.array_equal(a.X, b.X) and np.array_equal(a.y, b.y)
    assert a.X.min() >= 0 and a.X.max() <= 1 and a.n_classes == 2


@needs_mnist
def test_toy_dataset_shape(data_dir):
    tr = load_dataset("toy", "train", data_dir)
    te = load_dataset("toy", "test", data_dir)
    assert tr.X.shape == (1024, 16) and te.X.shape[1] == 16
    assert np.allclose(tr.X.mean(axis=0), 0, atol=1e-10)
    assert tr.n_classes == 10
