"""Spectral dimensionality reduction via principal component analysis.

Fitting runs over every pixel of the cube (labeled or not), centers each band
by its mean, and eigendecomposes the band covariance with a cyclic Jacobi
sweep. Only mean-centering is applied; bands are not rescaled.
"""

from dataclasses import dataclass

import numpy as np


@dataclass
class PCAModel:
    mean: np.ndarray          # (l,) per-band average
    components: np.ndarray    # (b, l) rows are eigenvectors, orthonormal
    eigenvalues: np.ndarray   # (b,) non-increasing


def jacobi_eigh(a, tol_scale=1e-10, max_sweeps=100):
    """Eigendecompose a symmetric matrix by cyclic Jacobi rotations.

    Returns (eigenvalues, eigenvectors) with eigenvalues sorted non-increasing
    and eigenvectors as columns. Converges when the largest off-diagonal
    magnitude drops below tol_scale times the trace scale of the input.
    """
    a = np.array(a, dtype=np.float64)
    n = a.shape[0]
    if a.shape != (n, n):
        raise ValueError(f"matrix must be square, got {a.shape}")
    if not np.allclose(a, a.T, atol=1e-8 * max(1.0, np.abs(a).max())):
        raise ValueError("matrix must be symmetric")
    v = np.eye(n)
    scale = max(np.abs(np.trace(a)) / n, np.abs(a).max(), 1e-300)
    threshold = tol_scale * scale
    for _ in range(max_sweeps):
        off = np.abs(a - np.diag(np.diag(a))).max() if n > 1 else 0.0
        if off < threshold:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if abs(apq) < threshold * 1e-2:
                    continue
                # rotation angle zeroing a[p,q]
                theta = 0.5 * (a[q, q] - a[p, p]) / apq
                t = np.sign(theta) / (abs(theta) + np.sqrt(theta * theta + 1.0))
                if theta == 0.0:
                    t = 1.0
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                rot_p = c * a[:, p] - s * a[:, q]
                rot_q = s * a[:, p] + c * a[:, q]
                a[:, p], a[:, q] = rot_p, rot_q
                rot_p = c * a[p, :] - s * a[q, :]
                rot_q = s * a[p, :] + c * a[q, :]
                a[p, :], a[q, :] = rot_p, rot_q
                rot_p = c * v[:, p] - s * v[:, q]
                rot_q = s * v[:, p] + c * v[:, q]
                v[:, p], v[:, q] = rot_p, rot_q
    eigenvalues = np.diag(a).copy()
    order = np.argsort(-eigenvalues, kind="stable")
    return eigenvalues[order], v[:, order]


def _canonicalize_signs(components):
    """Flip each row so its largest-magnitude entry is positive."""
    out = components.copy()
    for row in out:
        j = np.argmax(np.abs(row))
        if row[j] < 0:
            row *= -1.0
    return out


def pca_fit(pixels, b):
    """Fit a PCAModel to pixel spectra.

    pixels: an HSICube (every pixel is used, labeled or not) or a (P, l) array.
    """
    if hasattr(pixels, "pixels"):
        pixels = pixels.pixels()
    x = np.asarray(pixels, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError(f"pixels must be (P, l), got shape {x.shape}")
    p, l = x.shape
    if not 1 <= b <= l:
        raise ValueError(f"component count must satisfy 1 <= b <= {l}, got {b}")
    if p < b + 1:
        raise ValueError(f"need at least {b + 1} pixels to fit {b} components, got {p}")
    mean = x.mean(axis=0)
    centered = x - mean
    cov = centered.T @ centered / (p - 1)
    eigenvalues, eigenvectors = jacobi_eigh(cov)
    components = _canonicalize_signs(eigenvectors[:, :b].T)
    return PCAModel(mean=mean, components=components, eigenvalues=eigenvalues[:b].copy())


def pca_transform(pixels, model):
    """Project pixel spectra onto the fitted components: (x - mean) -> scores.

    Given an HSICube, returns a reduced HSICube with b bands; given a (P, l)
    array, returns the (P, b) score array.
    """
    if hasattr(pixels, "pixels"):
        cube = pixels
        scores = pca_transform(cube.pixels(), model)
        b = model.components.shape[0]
        from .data import HSICube
        reduced = scores.T.reshape(b, cube.height, cube.width)
        return HSICube(cube.width, cube.height, b, np.ascontiguousarray(reduced))
    x = np.asarray(pixels)
    if x.shape[-1] != model.mean.shape[0]:
        raise ValueError(
            f"band count mismatch: pixels have {x.shape[-1]}, model expects {model.mean.shape[0]}")
    scores = (x.astype(np.float64) - model.mean) @ model.components.T
    return scores.astype(np.float32)


def pca_inverse(scores, model):
    """Map component scores back to spectra (exact when b == l)."""
    s = np.asarray(scores, dtype=np.float64)
    if s.shape[-1] != model.components.shape[0]:
        raise ValueError(
            f"component count mismatch: scores have {s.shape[-1]}, "
            f"model has {model.components.shape[0]}")
    return s @ model.components + model.mean
