"""Input validation helpers used at the public estimator boundaries."""

import numpy as np

from .errors import ShapeError


def check_features(z, dim: int | None = None, name: str = "Z") -> np.ndarray:
    """Validate a feature table: 2-D float64, finite, optional width check."""
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 2:
        raise ShapeError(f"{name}: expected (n_samples, dim), got shape {z.shape}")
    if dim is not None and z.shape[1] != dim:
        raise ShapeError(f"{name}: expected width {dim}, got {z.shape[1]}")
    if z.size and not np.all(np.isfinite(z)):
        raise ShapeError(f"{name}: contains non-finite values")
    return z


def check_labels(y, n_rows: int, name: str = "y") -> np.ndarray:
    """Validate integer labels aligned with a feature table."""
    y = np.asarray(y)
    if y.ndim != 1:
        raise ShapeError(f"{name}: expected 1-D labels, got shape {y.shape}")
    if y.shape[0] != n_rows:
        raise ShapeError(f"{name}: {y.shape[0]} labels for {n_rows} rows")
    if y.size and not np.issubdtype(y.dtype, np.integer):
        if not np.all(y == np.floor(y)):
            raise ShapeError(f"{name}: labels must be integers")
    y = y.astype(np.int64, copy=False)
    if y.size and y.min() < 0:
        raise ShapeError(f"{name}: negative label")
    return y


def check_clips(x, name: str = "X") -> np.ndarray:
    """Validate a stack of spectrogram clips: (n, frames, bins) float64."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 2:
        x = x[None, :, :]
    if x.ndim != 3:
        raise ShapeError(f"{name}: expected (n, frames, bins), got shape {x.shape}")
    if x.size and not np.all(np.isfinite(x)):
        raise ShapeError(f"{name}: contains non-finite values")
    return x
