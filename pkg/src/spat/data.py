"""Datasets: synthetic Gaussian triplets, MNIST IDX files, batching helpers.

Features always live in ``[0, 1]`` so the attack box needs no per-dataset
configuration.
"""

import gzip
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


@dataclass
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    class_count: int
    name: str = ""

    def __post_init__(self):
        self.features = np.ascontiguousarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2 or self.features.shape[0] != self.labels.shape[0]:
            raise ValueError(f"features {self.features.shape} do not match labels {self.labels.shape}")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.class_count):
            raise ValueError(f"labels must lie in [0, {self.class_count})")
        if self.features.size and (self.features.min() < 0.0 or self.features.max() > 1.0):
            raise ValueError("features must lie in [0, 1]")

    def __len__(self):
        return self.labels.shape[0]

    @property
    def dim(self):
        return self.features.shape[1]

    def take(self, indices, name=None):
        idx = np.asarray(indices, dtype=np.int64)
        return Dataset(self.features[idx], self.labels[idx], self.class_count, name or self.name)

    def class_counts(self):
        return np.bincount(self.labels, minlength=self.class_count)


@dataclass(frozen=True)
class TripletGeometry:
    """Three isotropic blobs; A-B is the designed hard pair, A-C the easy one."""

    dim: int = 10
    center_A: tuple = field(default=None)
    center_B: tuple = field(default=None)
    center_C: tuple = field(default=None)
    sigma: float = 0.5
    n_per_class: int = 200

    def __post_init__(self):
        d = int(self.dim)
        defaults = {"center_A": np.zeros(d), "center_B": 2.0 * np.eye(d)[0], "center_C": 6.0 * np.eye(d)[1 % d]}
        for name, default in defaults.items():
            value = default if getattr(self, name) is None else getattr(self, name)
            value = tuple(float(v) for v in value)
            if len(value) != d:
                raise ValueError(f"{name} has {len(value)} coordinates, dim is {d}")
            object.__setattr__(self, name, value)
        if self.sigma < 0 or self.n_per_class < 1:
            raise ValueError("sigma must be >= 0 and n_per_class >= 1")
        a, b, c = self.centers()
        if np.array_equal(a, b) or np.array_equal(a, c) or np.array_equal(b, c):
            raise ValueError("degenerate geometry: two centers coincide")
        if not np.linalg.norm(a - b) < np.linalg.norm(a - c):
            raise ValueError("|A - B| must be smaller than |A - C| (A-B is the hard pair)")

    def centers(self):
        return np.array(self.center_A), np.array(self.center_B), np.array(self.center_C)

    def affine(self):
        """Global ``(shift, scale)`` mapping raw coordinates into [0, 1].

        Bounds are the extreme center coordinates padded by 6 sigma, so the
        map depends only on the geometry (not on the draw) and is isotropic.
        """
        c = np.stack(self.centers())
        lo = c.min() - 6.0 * self.sigma
        hi = c.max() + 6.0 * self.sigma
        return lo, hi - lo

    def scaled_centers(self):
        lo, span = self.affine()
        return [(c - lo) / span for c in self.centers()]


def gen_triplet(geom, seed):
    rng = np.random.default_rng(seed)
    n = geom.n_per_class
    lo, span = geom.affine()
    xs = [c + geom.sigma * rng.standard_normal((n, geom.dim)) for c in geom.centers()]
    x = np.clip((np.concatenate(xs) - lo) / span, 0.0, 1.0)
    y = np.repeat(np.arange(3), n)
    return Dataset(x, y, 3, name=f"triplet(seed={seed})")


def _open(path):
    path = Path(path)
    raw = path.read_bytes()
    if raw[:2] == b"\x1f\x8b":
        raw = gzip.decompress(raw)
    return raw


def _header(raw, path, magic, ndims):
    need = 4 * (1 + ndims)
    if len(raw) < need:
        raise ValueError(f"{path}: truncated header at byte offset {len(raw)} (need {need})")
    got = struct.unpack(">I", raw[:4])[0]
    if got != magic:
        raise ValueError(f"{path}: not an IDX file (magic 0x{got:08x}, expected 0x{magic:08x})")
    return struct.unpack(f">{ndims}I", raw[4:need]), need


def load_idx(images_path, labels_path, name="idx", class_count=None):
    """Read an IDX image/label pair (optionally gzipped); pixels scaled by 1/255."""
    img = _open(images_path)
    (count, rows, cols), off = _header(img, images_path, IDX_IMAGES_MAGIC, 3)
    size = count * rows * cols
    if len(img) < off + size:
        raise ValueError(f"{images_path}: truncated at byte offset {len(img)} (expected {off + size} bytes)")
    pixels = np.frombuffer(img, dtype=np.uint8, count=size, offset=off)

    lab = _open(labels_path)
    (n_labels,), loff = _header(lab, labels_path, IDX_LABELS_MAGIC, 1)
    if n_labels != count:
        raise ValueError(f"count mismatch: {count} images vs {n_labels} labels")
    if len(lab) < loff + n_labels:
        raise ValueError(f"{labels_path}: truncated at byte offset {len(lab)} (expected {loff + n_labels} bytes)")
    labels = np.frombuffer(lab, dtype=np.uint8, count=n_labels, offset=loff).astype(np.int64)

    features = pixels.reshape(count, rows * cols).astype(np.float64) / 255.0
    if class_count is None:
        class_count = int(labels.max()) + 1 if n_labels else 1
    return Dataset(features, labels, class_count, name=name)


def write_idx(images, labels, images_path, labels_path, compress=False):
    """Write uint8 images ``(N, rows, cols)`` and labels ``(N,)`` as IDX."""
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    n, rows, cols = images.shape
    img = struct.pack(">4I", IDX_IMAGES_MAGIC, n, rows, cols) + images.tobytes()
    lab = struct.pack(">2I", IDX_LABELS_MAGIC, labels.shape[0]) + labels.tobytes()
    for path, payload in ((images_path, img), (labels_path, lab)):
        Path(path).write_bytes(gzip.compress(payload, mtime=0) if compress else payload)


def subsample_indices(labels, class_count, per_class, seed, exclude=None):
    rng = np.random.default_rng(seed)
    pool = np.ones(labels.shape[0], dtype=bool)
    if exclude is not None:
        pool[np.asarray(exclude, dtype=np.int64)] = False
    picked = []
    for c in range(class_count):
        members = np.flatnonzero((labels == c) & pool)
        if members.size < per_class:
            raise ValueError(f"class {c} has {members.size} samples, {per_class} requested")
        picked.append(rng.choice(members, size=per_class, replace=False))
    idx = np.concatenate(picked)
    return idx[rng.permutation(idx.size)]


def subsample(data, per_class, seed):
    return data.take(subsample_indices(data.labels, data.class_count, per_class, seed),
                     name=f"{data.name}[{per_class}/class]")


def batches(data, batch_size, seed, epoch):
    """Index arrays for one epoch; the order is a function of ``(seed, epoch)``."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    n = len(data) if hasattr(data, "__len__") else int(data)
    order = np.random.default_rng([int(seed), 0x5EED, int(epoch)]).permutation(n)
    return [order[k:k + batch_size] for k in range(0, n, batch_size)]
