"""Datasets and spike encodings: MNIST IDX files and the 1-D regression task."""
from __future__ import annotations

import csv
import gzip
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801

X_DOMAIN = (-1.0, 5.0)
GAP_SUPPORT = ((-1.0, 0.0), (1.5, 2.5), (4.0, 5.0))
GAP_REGION = ((0.0, 1.0), (2.5, 4.0))
REGRESSION_NOISE_VAR = 1e-4


class IDXError(ValueError):
    pass


# -- IDX --------------------------------------------------------------------


def _open(path):
    path = Path(path)
    return gzip.open(path, "rb") if path.suffix == ".gz" else open(path, "rb")


def read_idx(path, expected_magic=None) -> np.ndarray:
    with _open(path) as fh:
        raw = fh.read()
    if len(raw) < 4:
        raise IDXError(f"{path}: truncated header")
    magic = struct.unpack(">I", raw[:4])[0]
    if expected_magic is not None and magic != expected_magic:
        raise IDXError(f"{path}: bad magic number 0x{magic:08x}")
    if magic >> 8 != 0x08:
        raise IDXError(f"{path}: only unsigned-byte IDX data is supported")
    ndim = magic & 0xFF
    hdr = 4 + 4 * ndim
    if len(raw) < hdr:
        raise IDXError(f"{path}: truncated header")
    dims = struct.unpack(f">{ndim}I", raw[4:hdr])
    count = int(np.prod(dims)) if dims else 0
    if len(raw) - hdr != count:
        raise IDXError(f"{path}: expected {count} data bytes, found {len(raw) - hdr}")
    return np.frombuffer(raw, dtype=np.uint8, offset=hdr).reshape(dims)


def write_idx(path, array):
    a = np.ascontiguousarray(array, dtype=np.uint8)
    header = struct.pack(">I", 0x0800 | a.ndim) + struct.pack(f">{a.ndim}I", *a.shape)
    opener = gzip.open if Path(path).suffix == ".gz" else open
    with opener(path, "wb") as fh:
        fh.write(header + a.tobytes())


def one_hot(labels, n_classes=10) -> np.ndarray:
    labels = np.asarray(labels, dtype=int)
    out = np.zeros((len(labels), n_classes))
    out[np.arange(len(labels)), labels] = 1.0
    return out


def load_mnist_idx(images_path, labels_path):
    """Return ``(rates, onehot, labels)``; rates are intensities / 255."""
    images = read_idx(images_path, IDX_IMAGES_MAGIC)
    labels = read_idx(labels_path, IDX_LABELS_MAGIC)
    if images.ndim != 3 or labels.ndim != 1:
        raise IDXError("unexpected IDX dimensionality")
    if len(images) != len(labels):
        raise IDXError(f"{len(images)} images but {len(labels)} labels")
    rates = images.reshape(len(images), -1).astype(float) / 255.0
    return rates, one_hot(labels, 10), labels.astype(int)


def stratified_subset(labels, n, rng, n_classes=10):
    """Indices of ``n`` samples with (as near as possible) equal class counts."""
    labels = np.asarray(labels)
    per = np.full(n_classes, n // n_classes)
    per[: n % n_classes] += 1
    picks = []
    for c in range(n_classes):
        pool = np.flatnonzero(labels == c)
        if len(pool) < per[c]:
            raise ValueError(f"class {c} has only {len(pool)} samples, need {per[c]}")
        picks.append(rng.choice(pool, per[c], replace=False))
    return np.sort(np.concatenate(picks))


# -- population coding --------------------------------------------------------


@dataclass(frozen=True)
class PopulationEncoder:
    """Raised-cosine tuning curves with evenly spaced centres."""

    n_neurons: int = 100
    x_lo: float = X_DOMAIN[0]
    x_hi: float = X_DOMAIN[1]
    width_factor: float = 2.0  # filter half-width in units of centre spacing

    @property
    def centers(self) -> np.ndarray:
        return np.linspace(self.x_lo, self.x_hi, self.n_neurons)

    @property
    def width(self) -> float:
        return self.width_factor * (self.x_hi - self.x_lo) / (self.n_neurons - 1)


def encode_population(x, enc: PopulationEncoder = PopulationEncoder()) -> np.ndarray:
    """Rates for scalar or array ``x``; output shape ``x.shape + (n_neurons,)``."""
    x = np.clip(np.asarray(x, dtype=float), enc.x_lo, enc.x_hi)
    d = x[..., None] - enc.centers
    w = enc.width
    r = 0.5 * (1.0 + np.cos(np.pi * d / w))
    return np.where(np.abs(d) <= w, r, 0.0)


def sample_spikes(rates, rng) -> np.ndarray:
    rates = np.asarray(rates, dtype=float)
    return (rng.random(rates.shape) < rates).astype(float)


def target_function(x):
    x = np.asarray(x, dtype=float)
    return x - 0.1 * x ** 2 + np.cos(np.pi * x / 2)


@dataclass
class RegressionDataset:
    variant: str
    x: np.ndarray
    y: np.ndarray
    inputs: np.ndarray  # spikes (D1, D2) or rates (D3)
    input_kind: str  # "spikes" or "rates"

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["x", "y"] + [f"in{k}" for k in range(self.inputs.shape[1])])
            for xi, yi, row in zip(self.x, self.y, self.inputs):
                w.writerow([repr(float(xi)), repr(float(yi))] + [repr(float(v)) for v in row])

    @classmethod
    def read_csv(cls, path, variant="custom"):
        arr = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        inputs = arr[:, 2:]
        kind = "spikes" if np.all((inputs == 0) | (inputs == 1)) else "rates"
        return cls(variant, arr[:, 0], arr[:, 1], inputs, kind)


def _sample_x(variant, n, rng):
    if variant == "D1":
        return rng.uniform(*X_DOMAIN, size=n)
    if variant in ("D2", "D3"):
        seg = rng.integers(0, len(GAP_SUPPORT), size=n)
        lo = np.array([s[0] for s in GAP_SUPPORT])[seg]
        hi = np.array([s[1] for s in GAP_SUPPORT])[seg]
        return lo + (hi - lo) * rng.random(n)
    raise ValueError(f"unknown regression variant {variant!r}")


def gen_regression(variant, n, seed, enc: PopulationEncoder = PopulationEncoder(),
                   noise_var=REGRESSION_NOISE_VAR) -> RegressionDataset:
    """Noisy training set for one of the three regression variants."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    x = _sample_x(variant, n, rng)
    y = target_function(x) + rng.normal(0.0, np.sqrt(noise_var), size=n)
    rates = encode_population(x, enc)
    if variant == "D3":
        return RegressionDataset(variant, x, y, rates, "rates")
    return RegressionDataset(variant, x, y, sample_spikes(rates, rng), "spikes")


def regression_test_set(n, seed, enc: PopulationEncoder = PopulationEncoder(), variant=None):
    """Noise-free targets; returns ``(x, rates, y)``.

    ``x`` is uniform over the full domain, or drawn from the input
    distribution of ``variant`` when given.
    """
    rng = np.random.default_rng(seed)
    x = rng.uniform(*X_DOMAIN, size=n) if variant is None else _sample_x(variant, n, rng)
    return x, encode_population(x, enc), target_function(x)


def in_gap(x) -> np.ndarray:
    x = np.asarray(x)
    return np.any([(x >= a) & (x <= b) for a, b in GAP_REGION], axis=0)


def export_mnist_subset_idx(out_dir):
    """Write the 5000-image MNIST subset bundled with ``mlxtend`` as IDX files.

    Returns ``(images_path, labels_path)``.  Needs the optional ``mlxtend``
    package.
    """
    try:
        from mlxtend.data import mnist_data
    except ImportError as e:  # pragma: no cover - optional dependency
        raise RuntimeError("install mlxtend to export the bundled MNIST subset") from e
    X, y = mnist_data()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    img = out / "mnist-subset-images-idx3-ubyte"
    lab = out / "mnist-subset-labels-idx1-ubyte"
    write_idx(img, np.rint(X).reshape(-1, 28, 28))
    write_idx(lab, y)
    return img, lab
