import numpy as np
import pytest

from hsgf.data import HSICube, LabelMap, PatchSet
from hsgf.model import ModelConfig

TINY = dict(num_classes=3, patch_size=7, pca_bands=4, conv3d_out=2,
            conv2d_out=4, tokens=2, heads=2, te_depth=1, mlp_hidden=8)


@pytest.fixture
def tiny_config():
    return ModelConfig(**TINY)


def make_dataset(seed=7, m=12, n=10, l=8, num_classes=3, label_fill=1.0,
                 noise=0.1, signature_scale=3.0):
    """Synthetic cube whose classes are distinct random spectral signatures.

    label_fill < 1 leaves a fraction of pixels unlabeled.
    """
    rng = np.random.default_rng(seed)
    signatures = rng.normal(size=(num_classes, l)) * signature_scale
    labels = rng.integers(1, num_classes + 1, size=(n, m)).astype(np.uint16)
    if label_fill < 1.0:
        labels[rng.random(size=(n, m)) > label_fill] = 0
    values = np.zeros((l, n, m), dtype=np.float32)
    for i in range(n):
        for j in range(m):
            if labels[i, j] > 0:
                base = signatures[labels[i, j] - 1]
            else:
                base = rng.normal(size=l)
            values[:, i, j] = base + noise * rng.normal(size=l)
    cube = HSICube(m, n, l, values)
    label_map = LabelMap(m, n, labels, num_classes=num_classes,
                         class_names=[f"Class{k}" for k in range(1, num_classes + 1)],
                         legend_rgb=["ff0000", "00ff00", "0000ff", "ffff00",
                                     "ff00ff", "00ffff"][:num_classes])
    return cube, label_map


def make_signature_patches(count=64, num_classes=2, seed=0, noise=0.05,
                           bands=TINY["pca_bands"], patch_size=TINY["patch_size"],
                           declared_classes=TINY["num_classes"], shift_signatures=False):
    """Spatially homogeneous patches, one Gaussian signature per class.

    Classes alternate sample by sample. With shift_signatures, class k's
    signature is class 1's rolled k-1 bands, so classes differ only by
    spectral displacement.
    """
    rng = np.random.default_rng(seed)
    if shift_signatures:
        base = rng.normal(size=bands) * 3.0
        signatures = np.stack([np.roll(base, k) for k in range(num_classes)])
    else:
        signatures = rng.normal(size=(num_classes, bands)) * 3.0
    labels = (np.arange(count) % num_classes + 1).astype(np.int64)
    patches = np.empty((count, bands, patch_size, patch_size), dtype=np.float32)
    for i, c in enumerate(labels):
        patches[i] = (signatures[c - 1][:, None, None]
                      + noise * rng.normal(size=(bands, patch_size, patch_size)))
    centers = np.zeros((count, 2), dtype=np.int64)
    return PatchSet(patches, labels, centers, patch_size, bands,
                    max(declared_classes, num_classes))


@pytest.fixture
def small_dataset():
    return make_dataset()
