"""Datasets: IDX ingestion, synthetic generators and train/val/test splitting."""
import gzip
import os
import struct
from dataclasses import dataclass

import numpy as np

from .rng import SeededRng

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801
SPLITS = ("train", "val", "test")


class DataError(ValueError):
    pass


@dataclass
class Dataset:
    x: np.ndarray  # (N, D), values in [0, 1]
    y: np.ndarray  # (N,) integer labels
    split: np.ndarray  # (N,) tags from SPLITS

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.int64)
        self.split = np.asarray(self.split, dtype="<U5")
        if self.x.ndim != 2 or self.y.shape != (len(self.x),) or self.split.shape != self.y.shape:
            raise DataError(f"Dataset: inconsistent shapes x={self.x.shape} y={self.y.shape} split={self.split.shape}")
        if len(self.x) and (self.x.min() < 0 or self.x.max() > 1):
            raise DataError("Dataset: inputs must lie in [0, 1]")
        bad = set(np.unique(self.split)) - set(SPLITS)
        if bad:
            raise DataError(f"Dataset: unknown split tags {sorted(bad)}")

    def __len__(self):
        return len(self.y)

    @property
    def input_dim(self):
        return self.x.shape[1]

    @property
    def num_classes(self):
        return int(self.y.max()) + 1 if len(self.y) else 0

    def indices(self, tag):
        return np.flatnonzero(self.split == tag)

    def part(self, tag, limit=None):
        """(x, y, idx) of one split, optionally truncated to its first ``limit`` rows."""
        idx = self.indices(tag)
        if limit is not None:
            idx = idx[:limit]
        return self.x[idx], self.y[idx], idx


def split_dataset(x, y, seed, test_frac=0.2, val_frac=0.1):
    """Shuffle by ``seed``, hold out ``test_frac`` as test, then the last ``val_frac`` of the rest as val."""
    n = len(y)
    perm = SeededRng(seed).child("split").permutation(n)
    n_test = int(round(test_frac * n))
    train_idx = perm[n_test:]
    n_val = int(round(val_frac * len(train_idx)))
    split = np.empty(n, dtype="<U5")
    split[perm[:n_test]] = "test"
    split[train_idx] = "train"
    if n_val:
        split[train_idx[-n_val:]] = "val"
    return Dataset(x, y, split)


# IDX ------------------------------------------------------------------------

def _read_bytes(path):
    opener = gzip.open if str(path).endswith(".gz") else open
    with opener(path, "rb") as f:
        return f.read()


def _parse_idx(buf, expected_magic, kind):
    if len(buf) < 4:
        raise DataError(f"{kind} file truncated: missing header")
    (magic,) = struct.unpack(">I", buf[:4])
    if magic != expected_magic:
        raise DataError(f"{kind} file has wrong magic 0x{magic:08x}, expected 0x{expected_magic:08x}")
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(buf) < header:
        raise DataError(f"{kind} file truncated: incomplete dimension header")
    dims = struct.unpack(f">{ndim}I", buf[4:header])
    count = int(np.prod(dims))
    if len(buf) - header < count:
        raise DataError(f"{kind} file truncated: expected {count} data bytes, found {len(buf) - header}")
    return np.frombuffer(buf, dtype=np.uint8, count=count, offset=header).reshape(dims)


def read_idx_images(path):
    return _parse_idx(_read_bytes(path), IMAGES_MAGIC, "images")


def read_idx_labels(path):
    return _parse_idx(_read_bytes(path), LABELS_MAGIC, "labels")


def load_idx(images_path, labels_path, limit=None, split="train"):
    """Images flattened and scaled by 1/255; every row tagged with ``split``."""
    images = read_idx_images(images_path)
    labels = read_idx_labels(labels_path)
    if len(images) != len(labels):
        raise DataError(f"image/label count mismatch: {len(images)} images, {len(labels)} labels")
    if limit is not None:
        images, labels = images[:limit], labels[:limit]
    x = images.reshape(len(images), -1).astype(np.float64) / 255.0
    return Dataset(x, labels.astype(np.int64), np.full(len(labels), split))


def write_idx_images(path, images):
    images = np.asarray(images, dtype=np.uint8)
    with open(path, "wb") as f:
        f.write(struct.pack(">I", IMAGES_MAGIC))
        f.write(struct.pack(f">{images.ndim}I", *images.shape))
        f.write(images.tobytes())


def write_idx_labels(path, labels):
    labels = np.asarray(labels, dtype=np.uint8)
    with open(path, "wb") as f:
        f.write(struct.pack(">II", LABELS_MAGIC, len(labels)))
        f.write(labels.tobytes())


def export_digits_idx(out_dir):
    """Write scikit-learn's bundled 8x8 handwritten digits as an IDX image/label pair.

    Pixel intensities 0..16 are rescaled to bytes 0..255. Returns the two paths.
    """
    from sklearn.datasets import load_digits

    digits = load_digits()
    os.makedirs(out_dir, exist_ok=True)
    images = np.rint(digits.images * (255.0 / 16.0)).astype(np.uint8)
    img_path = os.path.join(out_dir, "digits-images-idx3-ubyte")
    lbl_path = os.path.join(out_dir, "digits-labels-idx1-ubyte")
    write_idx_images(img_path, images)
    write_idx_labels(lbl_path, digits.target)
    return img_path, lbl_path


# synthetic ------------------------------------------------------------------

SYNTHETIC_KINDS = ("gaussians", "rings", "tradeoff")


def _balanced_labels(n):
    return np.arange(n) % 2


def gen_synthetic(kind, n, seed, margin=0.5, dim=8, sigma=0.1, robust_dims=4, robust_p=0.8, levels=3,
                  label_noise=0.0):
    """Two-class toy data in [0, 1]^dim.

    gaussians: raw samples N(+-margin * 1, sigma^2 I), mapped into the box by
        u -> (u + 1) / 2 and clipped (the map preserves Bayes accuracy).
    rings: annuli of radius [0.3, 0.5] and [0.5 + margin, 0.7 + margin] in the
        plane, zero-padded to ``dim`` and rotated by a fixed orthogonal matrix.
    tradeoff: ``robust_dims`` coordinates at 0.5 +- 0.42 (noise 0.02) whose sign
        agrees with the label only with probability ``robust_p`` (hard to
        perturb, but noisy). The remaining coordinates are split into ``levels``
        groups at 0.5 +- margin * k / levels (k = 1..levels, noise ``sigma``):
        always informative, but flipped by perturbations larger than their margin.

    ``label_noise`` flips that fraction of labels after the inputs are drawn.
    Before flipping, labels alternate 0, 1, 0, ... so classes are balanced to one sample.
    """
    if n <= 0:
        raise ValueError(f"gen_synthetic: n must be positive, got {n}")
    if kind not in SYNTHETIC_KINDS:
        raise ValueError(f"gen_synthetic: unknown kind {kind!r}, expected one of {SYNTHETIC_KINDS}")
    if not 0.0 <= label_noise < 0.5:
        raise ValueError(f"gen_synthetic: label_noise must lie in [0, 0.5), got {label_noise}")
    rng = SeededRng(seed).child("synthetic", kind)
    y = _balanced_labels(n)
    s = 2.0 * y - 1.0
    if kind == "gaussians":
        raw = s[:, None] * margin + rng.normal((n, dim), scale=sigma)
        x = (raw + 1.0) / 2.0
    elif kind == "tradeoff":
        if not 0 < robust_dims < dim or dim - robust_dims < levels or levels < 1:
            raise ValueError("gen_synthetic: tradeoff needs 0 < robust_dims and levels <= dim - robust_dims")
        agree = rng.uniform(0.0, 1.0, n) < robust_p
        s_robust = np.where(agree, s, -s)
        x = np.empty((n, dim))
        x[:, :robust_dims] = 0.5 + 0.42 * s_robust[:, None] + rng.normal((n, robust_dims), scale=0.02)
        groups = np.array_split(np.arange(robust_dims, dim), levels)
        for k, cols in enumerate(groups, 1):
            level = margin * k / levels
            x[:, cols] = 0.5 + level * s[:, None] + rng.normal((n, len(cols)), scale=sigma)
    else:
        if dim < 2:
            raise ValueError("gen_synthetic: rings need dim >= 2")
        radius = np.where(y == 0, 0.3, 0.5 + margin) + rng.uniform(0.0, 0.2, n)
        theta = rng.uniform(0.0, 2.0 * np.pi, n)
        plane = np.zeros((n, dim))
        plane[:, 0] = radius * np.cos(theta)
        plane[:, 1] = radius * np.sin(theta)
        q, _ = np.linalg.qr(SeededRng(0).child("rings-rotation").normal((dim, dim)))
        r_max = 0.7 + margin
        x = 0.5 + (plane @ q.T) / (2.0 * r_max)
    if label_noise > 0:
        flip = SeededRng(seed).child("label-noise").uniform(0.0, 1.0, n) < label_noise
        y = np.where(flip, 1 - y, y)
    return Dataset(np.clip(x, 0.0, 1.0), y, np.full(n, "train"))
