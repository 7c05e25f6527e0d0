"""Datasets: MNIST IDX ingestion, the 16-dim PCA toy set, and a synthetic fallback."""
from __future__ import annotations

import gzip
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801

MNIST_FILES = {
    "train": ("train-images-idx3-ubyte.gz", "train-labels-idx1-ubyte.gz"),
    "test": ("t10k-images-idx3-ubyte.gz", "t10k-labels-idx1-ubyte.gz"),
}


class DataError(ValueError):
    pass


class IdxParseError(DataError):
    def __init__(self, msg: str, offset: int, path=None):
        where = f"{path}: " if path else ""
        super().__init__(f"{where}{msg} (at byte offset {offset})")
        self.offset = offset


@dataclass
class PcaBasis:
    mean: np.ndarray        # (n_features,)
    components: np.ndarray  # (dims, n_features), orthonormal rows

    def project(self, X: np.ndarray) -> np.ndarray:
        return (np.asarray(X, float) - self.mean) @ self.components.T

    def reconstruct(self, Z: np.ndarray) -> np.ndarray:
        return Z @ self.components + self.mean


@dataclass
class Dataset:
    X: np.ndarray
    y: np.ndarray
    split: str = "train"
    n_classes: int = 10
    clip: bool = True           # inputs live in [0, 1]
    basis: PcaBasis | None = field(default=None, repr=False)

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.int64)
        if self.X.ndim != 2 or len(self.X) != len(self.y):
            raise DataError(f"inputs {self.X.shape} and labels {self.y.shape} do not match")
        if len(self.y) and (self.y.min() < 0 or self.y.max() >= self.n_classes):
            raise DataError(f"labels outside [0, {self.n_classes})")

    def __len__(self):
        return len(self.y)

    @property
    def n_features(self) -> int:
        return self.X.shape[1]

    def take(self, k: int | None = None, start: int = 0) -> "Dataset":
        stop = None if k is None else start + k
        return Dataset(self.X[start:stop], self.y[start:stop], self.split, self.n_classes,
                       self.clip, self.basis)


# -- IDX ---------------------------------------------------------------------------------

def _read_bytes(path) -> bytes:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(str(path))
    raw = path.read_bytes()
    if raw[:2] == b"\x1f\x8b":
        raw = gzip.decompress(raw)
    return raw


def parse_idx(raw: bytes, expect_magic: int, path=None) -> np.ndarray:
    if len(raw) < 4:
        raise IdxParseError("truncated magic number", len(raw), path)
    magic = struct.unpack(">I", raw[:4])[0]
    if magic != expect_magic:
        raise IdxParseError(f"bad magic 0x{magic:08x}, expected 0x{expect_magic:08x}", 0, path)
    ndim = magic & 0xFF
    head = 4 + 4 * ndim
    if len(raw) < head:
        raise IdxParseError("truncated dimension header", len(raw), path)
    dims = struct.unpack(f">{ndim}I", raw[4:head])
    need = int(np.prod(dims, dtype=np.int64))
    if len(raw) - head < need:
        raise IdxParseError(f"truncated data: need {need} bytes, have {len(raw) - head}",
                            len(raw), path)
    return np.frombuffer(raw, dtype=np.uint8, count=need, offset=head).reshape(dims)


def load_idx(images_path, labels_path, split: str = "train") -> Dataset:
    """IDX image/label pair; pixels scaled to [0, 1] by /255.  Gzipped files are accepted."""
    imgs = parse_idx(_read_bytes(images_path), IMAGES_MAGIC, images_path)
    labs = parse_idx(_read_bytes(labels_path), LABELS_MAGIC, labels_path)
    if len(imgs) != len(labs):
        raise DataError(f"{len(imgs)} images but {len(labs)} labels")
    X = imgs.reshape(len(imgs), -1).astype(np.float64) / 255.0
    return Dataset(X, labs.astype(np.int64), split, 10)


def dumps_idx(arr: np.ndarray) -> bytes:
    arr = np.asarray(arr, dtype=np.uint8)
    magic = 0x00000800 | arr.ndim
    return struct.pack(f">I{arr.ndim}I", magic, *arr.shape) + arr.tobytes()


def save_idx(arr: np.ndarray, path) -> None:
    data = dumps_idx(arr)
    if str(path).endswith(".gz"):
        # mtime=0 keeps the bytes reproducible
        data = gzip.compress(data, mtime=0)
    Path(path).write_bytes(data)


def data_dir(override=None) -> Path:
    if override:
        return Path(override)
    env = os.environ.get("CERTLAB_DATA")
    if env:
        return Path(env)
    return Path("data")


def load_mnist(split: str = "train", root=None) -> Dataset:
    if split not in MNIST_FILES:
        raise DataError(f"unknown split {split!r}")
    root = data_dir(root)
    img, lab = MNIST_FILES[split]
    return load_idx(root / img, root / lab, split)


# -- PCA toy set -------------------------------------------------------------------------

def top_components(C: np.ndarray, dims: int, seed: int = 0, tol: float = 1e-9,
                   max_iter: int = 10000) -> np.ndarray:
    """Leading eigenvectors of a symmetric PSD matrix by power iteration with deflation."""
    rng = np.random.default_rng(seed)
    n = C.shape[0]
    C = np.array(C, dtype=np.float64)
    scale = max(np.abs(C).max(), 1e-300)
    vecs = []
    for k in range(dims):
        v = rng.standard_normal(n)
        for u in vecs:
            v -= (u @ v) * u
        nv = np.linalg.norm(v)
        if nv == 0:
            raise DataError(f"covariance rank {k} < requested dims {dims}")
        v /= nv
        lam = 0.0
        for _ in range(max_iter):
            w = C @ v
            for u in vecs:
                w -= (u @ w) * u
            lam = float(np.linalg.norm(w))
            if lam <= tol * scale:
                break
            w /= lam
            if w @ v < 0:
                w = -w
            done = np.linalg.norm(w - v) < tol
            v = w
            if done:
                break
        if lam <= tol * scale:
            raise DataError(f"covariance rank {k} < requested dims {dims}")
        # fix the sign so the largest-magnitude coordinate is positive
        if v[np.argmax(np.abs(v))] < 0:
            v = -v
        vecs.append(v)
        C = C - lam * np.outer(v, v)
    return np.array(vecs)


def fit_pca(X: np.ndarray, dims: int, seed: int = 0) -> PcaBasis:
    X = np.asarray(X, float)
    mean = X.mean(axis=0)
    Xc = X - mean
    C = Xc.T @ Xc / max(len(X) - 1, 1)
    return PcaBasis(mean, top_components(C, dims, seed))


def build_toy_pca(dataset: Dataset, n: int = 1024, dims: int = 16, seed: int = 0) -> Dataset:
    """Project n seeded random examples onto their top principal directions (no rescaling)."""
    if len(dataset) < n:
        raise DataError(f"need {n} examples, source has {len(dataset)}")
    rng = np.random.default_rng(seed)
    idx = np.sort(rng.choice(len(dataset), size=n, replace=False))
    X = dataset.X[idx]
    basis = fit_pca(X, dims, seed)
    return Dataset(basis.project(X), dataset.y[idx], f"{dataset.split}-pca{dims}",
                   dataset.n_classes, clip=False, basis=basis)


def project_dataset(dataset: Dataset, basis: PcaBasis) -> Dataset:
    return Dataset(basis.project(dataset.X), dataset.y, f"{dataset.split}-pca{len(basis.components)}",
                   dataset.n_classes, clip=False, basis=basis)


# -- synthetic fallback ------------------------------------------------------------------

def synthetic(n: int = 512, dims: int = 16, seed: int = 0, separation: float = 1.0,
              split: str = "train") -> Dataset:
    """Two Gaussian classes in [0,1]^dims with means 0.5 -/+ separation/(2 sqrt(dims))."""
    rng = np.random.default_rng(seed)
    y = np.arange(n) % 2
    rng.shuffle(y)
    shift = separation / (2 * np.sqrt(dims))
    X = 0.5 + np.where(y[:, None] == 1, shift, -shift) + 0.1 * rng.standard_normal((n, dims))
    return Dataset(np.clip(X, 0.0, 1.0), y, split, 2)


def load_dataset(name: str, split: str = "train", root=None, seed: int = 0) -> Dataset:
    """``mnist``, ``toy`` (16-dim PCA of 1024 MNIST training samples) or ``synth``."""
    name = name.lower()
    if name == "mnist":
        return load_mnist(split, root)
    if name in ("toy", "toy-pca", "pca"):
        toy = build_toy_pca(load_mnist("train", root), seed=seed)
        if split == "train":
            return toy
        return project_dataset(load_mnist(split, root), toy.basis)
    if name in ("synth", "synthetic"):
        return synthetic(seed=seed if split == "train" else seed + 1, split=split)
    raise DataError(f"unknown dataset {name!r}")
