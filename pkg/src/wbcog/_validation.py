"""Input checks shared by the estimators."""

from __future__ import annotations

import numpy as np


def check_channel_matrix(H, name: str = "H", ndim: int = 2) -> np.ndarray:
    """Return ``H`` as a finite complex array with ``ndim`` dimensions."""
    H = np.asarray(H)
    if H.ndim == ndim - 1:
        H = H[None]
    if H.ndim != ndim:
        raise ValueError(f"{name} must be {ndim}-D, got shape {H.shape}")
    H = H.astype(complex, copy=False)
    if not np.all(np.isfinite(H)):
        raise ValueError(f"{name} contains non-finite entries")
    return H


def check_positive(value, name: str) -> float:
    value = float(value)
    if not np.isfinite(value) or value <= 0:
        raise ValueError(f"{name} must be a positive finite number, got {value}")
    return value


def check_hermitian_psd(X, name: str = "X", tol: float = 1e-8) -> np.ndarray:
    X = np.asarray(X, dtype=complex)
    if X.ndim != 2 or X.shape[0] != X.shape[1]:
        raise ValueError(f"{name} must be square")
    scale = max(1.0, float(np.abs(X).max(initial=0.0)))
    if np.abs(X - X.conj().T).max(initial=0.0) > tol * scale:
        raise ValueError(f"{name} must be Hermitian")
    X = 0.5 * (X + X.conj().T)
    if X.size and np.linalg.eigvalsh(X)[0] < -tol * scale:
        raise ValueError(f"{name} must be positive semidefinite")
    return X
