"""Dataset generation and loading.

Three sources: the Add task (binary sequences with a fixed linear
convolution as the regression target), synthetic Gaussian cluster
classification, and IDX-format image/label files. Classification targets
use the mean-zero encoding one-hot minus 0.1.
"""

import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Union

import numpy as np

from .rng import make_rng

IDX_IMAGE_MAGIC = 0x00000803
IDX_LABEL_MAGIC = 0x00000801
TARGET_OFFSET = 0.1


@dataclass
class AddTaskSet:
    x_train: np.ndarray   # (n_train, K) in {0, 1}
    y_train: np.ndarray   # (n_train, K)
    x_test: np.ndarray
    y_test: np.ndarray


@dataclass
class ClassificationSet:
    x: np.ndarray         # (n, features...) scaled to [0, 1]
    y: np.ndarray         # (n, classes), one-hot minus 0.1
    labels: np.ndarray    # (n,) integer class ids


# ---------------------------------------------------------------------------
# Add task

def add_task_labels(x: np.ndarray) -> np.ndarray:
    """y(t) = 0.5 + 0.5 x(t-2) - 0.25 x(t-5), taps before t=0 contribute 0."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] < 6:
        raise ValueError("sequence length must be at least 6")
    a = np.zeros_like(x)
    b = np.zeros_like(x)
    a[..., 2:] = x[..., :-2]
    b[..., 5:] = x[..., :-5]
    return 0.5 + 0.5 * a - 0.25 * b


def gen_add_task(n_train: int = 300, n_test: int = 100, k: int = 100,
                 p: float = 0.5, seed: int = 0) -> AddTaskSet:
    """Bernoulli(p) input sequences with convolution labels; the train and
    test splits draw from separate seed streams."""
    if k < 6:
        raise ValueError("sequence length must be at least 6")
    if not 0.0 <= p <= 1.0:
        raise ValueError("bernoulli parameter must lie in [0, 1]")
    x_tr = (make_rng(seed, 0).random((n_train, k)) < p).astype(np.float64)
    x_te = (make_rng(seed, 1).random((n_test, k)) < p).astype(np.float64)
    return AddTaskSet(x_tr, add_task_labels(x_tr), x_te, add_task_labels(x_te))


# ---------------------------------------------------------------------------
# synthetic classification

def one_hot_targets(labels: np.ndarray, classes: int) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.size and (labels.min() < 0 or labels.max() >= classes):
        raise ValueError("label out of range")
    return np.eye(classes)[labels] - TARGET_OFFSET


def gen_synthetic_classification(n: int, input_dim: int, classes: int = 10,
                                 margin: float = 1.0,
                                 seed: int = 0) -> ClassificationSet:
    """Gaussian clusters: class centroids at margin * N(0,1), unit-variance
    noise around them, features rescaled to [0, 1] over the whole set."""
    if classes < 2:
        raise ValueError("need at least two classes")
    if margin <= 0:
        raise ValueError("margin must be positive")
    rng = make_rng(seed, 0)
    centroids = margin * rng.standard_normal((classes, input_dim))
    labels = rng.integers(0, classes, n)
    x = centroids[labels] + rng.standard_normal((n, input_dim))
    lo, hi = x.min(), x.max()
    x = (x - lo) / (hi - lo)
    return ClassificationSet(x, one_hot_targets(labels, classes), labels)


# ---------------------------------------------------------------------------
# IDX files

def write_idx(path: Union[str, Path], array: np.ndarray) -> None:
    """Write a uint8 array as an IDX file: 3-D arrays as image files,
    1-D arrays as label files."""
    array = np.asarray(array)
    if array.dtype != np.uint8:
        raise ValueError("IDX payload must be uint8")
    if array.ndim == 3:
        magic = IDX_IMAGE_MAGIC
    elif array.ndim == 1:
        magic = IDX_LABEL_MAGIC
    else:
        raise ValueError("IDX arrays must be 1-D (labels) or 3-D (images)")
    with open(path, "wb") as fh:
        fh.write(struct.pack(">i", magic))
        for extent in array.shape:
            fh.write(struct.pack(">i", extent))
        fh.write(array.tobytes())


def read_idx(path: Union[str, Path]) -> np.ndarray:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 4:
        raise ValueError(f"{path}: truncated IDX header")
    magic = struct.unpack(">i", raw[:4])[0]
    if magic == IDX_IMAGE_MAGIC:
        ndim = 3
    elif magic == IDX_LABEL_MAGIC:
        ndim = 1
    else:
        raise ValueError(f"{path}: bad IDX magic {magic:#010x}")
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise ValueError(f"{path}: truncated IDX header")
    shape = struct.unpack(f">{ndim}i", raw[4:header])
    expected = int(np.prod(shape))
    payload = raw[header:]
    if len(payload) != expected:
        raise ValueError(
            f"{path}: payload has {len(payload)} bytes, expected {expected}")
    return np.frombuffer(payload, dtype=np.uint8).reshape(shape)


def load_idx(image_path: Union[str, Path],
             label_path: Union[str, Path],
             classes: int = 10) -> ClassificationSet:
    images = read_idx(image_path)
    labels = read_idx(label_path)
    if images.ndim != 3:
        raise ValueError(f"{image_path}: not an image file")
    if labels.ndim != 1:
        raise ValueError(f"{label_path}: not a label file")
    if images.shape[0] != labels.shape[0]:
        raise ValueError(
            f"image count {images.shape[0]} != label count {labels.shape[0]}")
    x = images.astype(np.float64) / 255.0
    return ClassificationSet(x, one_hot_targets(labels, classes),
                             labels.astype(np.int64))


def gen_synthetic_images(n: int, side: int = 14, classes: int = 10,
                         seed: int = 0, noise: float = 0.25):
    """Synthetic image classes: one smooth random template per class plus
    per-example jitter and pixel noise, quantized to uint8.

    Returns (images uint8 (n, side, side), labels uint8 (n,))."""
    rng = make_rng(seed, 0)
    yy, xx = np.mgrid[0:side, 0:side] / max(side - 1, 1)
    templates = np.zeros((classes, side, side))
    for c in range(classes):
        coef = rng.standard_normal(6)
        templates[c] = (coef[0] * np.sin(np.pi * (coef[1] + 2 * xx))
                        + coef[2] * np.cos(np.pi * (coef[3] + 2 * yy))
                        + coef[4] * xx * yy + coef[5])
    labels = rng.integers(0, classes, n)
    img = templates[labels]
    shifts = rng.integers(-1, 2, (n, 2))
    for axis in (0, 1):
        for s in (-1, 1):
            sel = shifts[:, axis] == s
            img[sel] = np.roll(img[sel], s, axis=axis + 1)
    img = img + noise * rng.standard_normal(img.shape)
    lo, hi = img.min(), img.max()
    img = (img - lo) / (hi - lo)
    return (np.round(img * 255).astype(np.uint8), labels.astype(np.uint8))


# ---------------------------------------------------------------------------
# float64 export

def export_arrays(out_dir: Union[str, Path], name: str, **arrays) -> Path:
    """Write each array as raw little-endian float64 next to a JSON sidecar
    recording shapes; returns the sidecar path."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    sidecar = {"name": name, "dtype": "<f8", "arrays": {}}
    for key, arr in arrays.items():
        arr = np.ascontiguousarray(np.asarray(arr, dtype="<f8"))
        (out_dir / f"{name}.{key}.f64").write_bytes(arr.tobytes())
        sidecar["arrays"][key] = list(arr.shape)
    path = out_dir / f"{name}.json"
    path.write_text(json.dumps(sidecar, indent=2))
    return path


def load_arrays(sidecar_path: Union[str, Path]) -> dict:
    sidecar_path = Path(sidecar_path)
    meta = json.loads(sidecar_path.read_text())
    out = {}
    for key, shape in meta["arrays"].items():
        raw = (sidecar_path.parent / f"{meta['name']}.{key}.f64").read_bytes()
        arr = np.frombuffer(raw, dtype="<f8")
        if arr.size != int(np.prod(shape)):
            raise ValueError(f"{key}: payload does not match recorded shape")
        out[key] = arr.reshape(shape)
    return out
