"""Color-coded classification maps rendered as binary PPM (P6) images."""

from pathlib import Path

import numpy as np

from .data import extract_all_patches, extract_patches
from .train import predict

# fallback palette cycled when a dataset header carries no legend
_DEFAULT_PALETTE = [
    "ff0000", "00ff00", "0000ff", "ffff00", "ff00ff", "00ffff",
    "ff8000", "8000ff", "00ff80", "800000", "008080", "a020f0",
    "ffc0cb", "808000", "4682b4", "d2691e",
]


class PaletteSpec:
    """Class index -> RGB bytes; class 0 (unlabeled) is black."""

    def __init__(self, num_classes, hex_colors=None):
        if not hex_colors:
            hex_colors = [_DEFAULT_PALETTE[i % len(_DEFAULT_PALETTE)]
                          for i in range(num_classes)]
        if len(hex_colors) < num_classes:
            raise ValueError(
                f"palette has {len(hex_colors)} colors for {num_classes} classes")
        table = np.zeros((num_classes + 1, 3), dtype=np.uint8)
        for c, hexstr in enumerate(hex_colors[:num_classes], start=1):
            h = hexstr.lstrip("#")
            if len(h) != 6:
                raise ValueError(f"bad hex color {hexstr!r} for class {c}")
            table[c] = [int(h[i:i + 2], 16) for i in (0, 2, 4)]
        self.table = table
        self.num_classes = num_classes

    def color(self, label):
        return tuple(int(v) for v in self.table[label])


def write_ppm(path, rgb):
    """Write an (n, m, 3) uint8 array as binary PPM, maxval 255."""
    rgb = np.ascontiguousarray(rgb, dtype=np.uint8)
    if rgb.ndim != 3 or rgb.shape[2] != 3:
        raise ValueError(f"image must be (rows, cols, 3), got {rgb.shape}")
    n, m = rgb.shape[:2]
    with open(path, "wb") as fh:
        fh.write(f"P6\n{m} {n}\n255\n".encode("ascii"))
        fh.write(rgb.tobytes())


def read_ppm(path):
    """Read back a binary PPM written by write_ppm (strict, no comments)."""
    raw = Path(path).read_bytes()
    parts = raw.split(b"\n", 3)
    if parts[0] != b"P6" or parts[2] != b"255":
        raise ValueError("unsupported PPM variant")
    m, n = (int(v) for v in parts[1].split())
    pixels = np.frombuffer(parts[3][:n * m * 3], dtype=np.uint8)
    return pixels.reshape(n, m, 3).copy()


def render_labels(labels_grid, palette):
    """Map an (n, m) label raster to (n, m, 3) RGB via the palette."""
    return palette.table[labels_grid]


def prediction_map(params, model_config, cube, labels, full=False):
    """Predict a label raster for the cube: labeled pixels only, or all with full."""
    s = model_config.patch_size
    grid = np.zeros((cube.height, cube.width), dtype=np.int64)
    if full:
        patches, centers = extract_all_patches(cube, s)
        grid[centers[:, 0], centers[:, 1]] = predict(params, model_config, patches)
    else:
        patchset = extract_patches(cube, labels, s)
        if len(patchset):
            grid[patchset.centers[:, 0], patchset.centers[:, 1]] = predict(
                params, model_config, patchset.patches)
    return grid
