"""Hyperspectral raster containers, patch extraction, and stratified splits.

Cubes live on disk as a JSON header plus two raw binary rasters; see
docs/data-format.md for the byte layout. In memory a cube is a float32 array
indexed (band, row, col) and a label map is a uint16 array indexed (row, col)
with 0 meaning unlabeled.
"""

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


@dataclass
class HSICube:
    """Raster of m columns, n rows, l bands; values stored (l, n, m)."""
    width: int
    height: int
    bands: int
    values: np.ndarray

    def __post_init__(self):
        expected = (self.bands, self.height, self.width)
        if self.values.shape != expected:
            raise ValueError(f"cube values must have shape {expected}, got {self.values.shape}")
        if not np.isfinite(self.values).all():
            raise ValueError("cube contains non-finite values")

    def pixels(self):
        """All spectra as an (n*m, l) array, row-major over the image plane."""
        return self.values.reshape(self.bands, -1).T


@dataclass
class LabelMap:
    width: int
    height: int
    labels: np.ndarray           # (n, m) uint16, 0 = unlabeled
    num_classes: int
    class_names: list = field(default_factory=list)
    legend_rgb: list = field(default_factory=list)

    def __post_init__(self):
        if self.labels.shape != (self.height, self.width):
            raise ValueError(
                f"label map must have shape {(self.height, self.width)}, got {self.labels.shape}")
        if self.labels.size and int(self.labels.max()) > self.num_classes:
            raise ValueError(
                f"label {int(self.labels.max())} exceeds declared class count {self.num_classes}")


@dataclass
class PatchSet:
    """Eagerly copied patches (P, b, s, s) with labels (P,) and centers (P, 2)."""
    patches: np.ndarray
    labels: np.ndarray
    centers: np.ndarray          # (row, col) of each patch center
    patch_size: int
    bands: int
    num_classes: int

    def __len__(self):
        return self.patches.shape[0]

    def subset(self, indices):
        indices = np.asarray(indices)
        return PatchSet(self.patches[indices], self.labels[indices], self.centers[indices],
                        self.patch_size, self.bands, self.num_classes)


@dataclass
class SplitSpec:
    strategy: str                # "fraction" or "count"
    value: float
    seed: int

    def __post_init__(self):
        if self.strategy not in ("fraction", "count"):
            raise ValueError(f"unknown split strategy {self.strategy!r}")
        if self.strategy == "fraction" and not 0.0 < self.value < 1.0:
            raise ValueError(f"fraction must lie in (0, 1), got {self.value}")
        if self.strategy == "count" and (self.value < 1 or self.value != int(self.value)):
            raise ValueError(f"count must be a positive integer, got {self.value}")


_REQUIRED_HEADER_KEYS = ("width", "height", "bands", "dtype", "byte_order",
                         "interleave", "data_file", "labels_file", "num_classes")


def load_cube(header_path):
    """Read a cube and its labels from a JSON header and raw rasters."""
    header_path = Path(header_path)
    if not header_path.exists():
        raise FileNotFoundError(f"header not found: {header_path}")
    header = json.loads(header_path.read_text())
    for key in _REQUIRED_HEADER_KEYS:
        if key not in header:
            raise ValueError(f"header missing required key {key!r}")
    if header["dtype"] != "f32":
        raise ValueError(f"unsupported dtype {header['dtype']!r} (only 'f32')")
    if header["byte_order"] != "little":
        raise ValueError(f"unsupported byte order {header['byte_order']!r} (only 'little')")
    if header["interleave"] != "bsq":
        raise ValueError(f"unsupported interleave {header['interleave']!r} (only 'bsq')")
    m, n, l = int(header["width"]), int(header["height"]), int(header["bands"])

    data_path = header_path.parent / header["data_file"]
    raw = np.fromfile(data_path, dtype="<f4")
    if raw.size != m * n * l:
        raise ValueError(
            f"data file holds {raw.size} values, header declares {m}*{n}*{l} = {m * n * l}")
    cube = HSICube(m, n, l, raw.reshape(l, n, m).astype(np.float32))

    labels_path = header_path.parent / header["labels_file"]
    raw_labels = np.fromfile(labels_path, dtype="<u2")
    if raw_labels.size != m * n:
        raise ValueError(
            f"labels file holds {raw_labels.size} values, header declares {m}*{n} = {m * n}")
    labels = LabelMap(m, n, raw_labels.reshape(n, m),
                      num_classes=int(header["num_classes"]),
                      class_names=list(header.get("class_names", [])),
                      legend_rgb=list(header.get("legend_rgb", [])))
    return cube, labels


def save_cube(header_path, cube, labels, class_names=None, legend_rgb=None):
    """Write the cube/labels pair plus its JSON header next to each other."""
    header_path = Path(header_path)
    stem = header_path.stem
    data_file = f"{stem}.f32"
    labels_file = f"{stem}.labels.u16"
    cube.values.astype("<f4").tofile(header_path.parent / data_file)
    labels.labels.astype("<u2").tofile(header_path.parent / labels_file)
    header = {
        "width": cube.width, "height": cube.height, "bands": cube.bands,
        "dtype": "f32", "byte_order": "little", "interleave": "bsq",
        "data_file": data_file, "labels_file": labels_file,
        "num_classes": labels.num_classes,
        "class_names": class_names if class_names is not None else labels.class_names,
        "legend_rgb": legend_rgb if legend_rgb is not None else labels.legend_rgb,
    }
    header_path.write_text(json.dumps(header, indent=2) + "\n")
    return header_path


def _check_patch_size(cube, s):
    if s % 2 == 0:
        raise ValueError(f"patch size must be odd, got {s}")
    if s < 3:
        raise ValueError(f"patch size must be at least 3, got {s}")
    if s > 2 * min(cube.width, cube.height):
        raise ValueError(f"patch size {s} too large for a {cube.width}x{cube.height} image")


def _cut_patches(cube, rows, cols, s):
    pad = (s - 1) // 2
    padded = np.pad(cube.values, ((0, 0), (pad, pad), (pad, pad)))
    out = np.empty((rows.shape[0], cube.bands, s, s), dtype=np.float32)
    for k in range(rows.shape[0]):
        i, j = rows[k], cols[k]
        out[k] = padded[:, i:i + s, j:j + s]
    return out


def extract_patches(cube, labels, s):
    """Cut one s*s spatial patch per pixel, keep those with a labeled center.

    The cube is zero-padded by (s-1)/2 per side so every pixel, corners
    included, yields a full-size patch. Patch label = center pixel label.
    """
    _check_patch_size(cube, s)
    if (labels.width, labels.height) != (cube.width, cube.height):
        raise ValueError("label map dimensions do not match the cube")
    rows, cols = np.nonzero(labels.labels)
    return PatchSet(patches=_cut_patches(cube, rows, cols, s),
                    labels=labels.labels[rows, cols].astype(np.int64),
                    centers=np.stack([rows, cols], axis=1),
                    patch_size=s, bands=cube.bands, num_classes=labels.num_classes)


def extract_all_patches(cube, s):
    """Cut patches for every pixel (m*n of them), unlabeled centers included.

    Returned in row-major pixel order with centers recorded; used for whole
    image prediction maps.
    """
    _check_patch_size(cube, s)
    rows, cols = np.divmod(np.arange(cube.height * cube.width), cube.width)
    return _cut_patches(cube, rows, cols, s), np.stack([rows, cols], axis=1)


def stratified_split(patchset, spec):
    """Split per class: seeded shuffle, take the head for training.

    Fraction strategy takes floor(fraction * class_count) with a minimum of 1;
    count strategy takes exactly `value` samples and requires count+1 present.
    """
    rng = np.random.default_rng(spec.seed)
    train_idx, test_idx = [], []
    for c in range(1, patchset.num_classes + 1):
        members = np.nonzero(patchset.labels == c)[0]
        k = members.shape[0]
        if k == 0:
            continue
        if spec.strategy == "fraction":
            if k < 2:
                raise ValueError(f"class {c} has {k} sample(s); fraction split needs at least 2")
            take = max(1, int(np.floor(spec.value * k)))
        else:
            take = int(spec.value)
            if k < take + 1:
                raise ValueError(
                    f"class {c} has {k} sample(s); count split of {take} needs at least {take + 1}")
        order = rng.permutation(k)
        train_idx.append(members[order[:take]])
        test_idx.append(members[order[take:]])
    train_idx = np.concatenate(train_idx) if train_idx else np.empty(0, dtype=np.int64)
    test_idx = np.concatenate(test_idx) if test_idx else np.empty(0, dtype=np.int64)
    return patchset.subset(train_idx), patchset.subset(test_idx)


def class_stats(patchset):
    """Histogram of patch labels over classes 1..C."""
    counts = np.zeros(patchset.num_classes, dtype=np.int64)
    for c in range(1, patchset.num_classes + 1):
        counts[c - 1] = int((patchset.labels == c).sum())
    return counts
