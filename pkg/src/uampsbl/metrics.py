"""Recovery metrics: normalized squared error and support recovery."""

from __future__ import annotations

import numpy as np

NMSE_DB_FLOOR = -300.0


def nmse(x_hat, x_true) -> float:
    """Normalized MSE of one estimate, or the average over a list of
    (estimate, truth) trial pairs."""
    if isinstance(x_hat, (list, tuple)):
        if len(x_hat) != len(x_true) or not x_hat:
            raise ValueError("trial lists must be non-empty and equal length")
        return float(np.mean([nmse(a, b) for a, b in zip(x_hat, x_true)]))
    x_hat = np.asarray(x_hat, dtype=float)
    x_true = np.asarray(x_true, dtype=float)
    if x_hat.shape != x_true.shape:
        raise ValueError("estimate and truth shapes disagree")
    denom = float(np.sum(x_true**2))
    if denom == 0.0:
        raise ValueError("truth has zero norm; NMSE undefined")
    return float(np.sum((x_hat - x_true) ** 2)) / denom


def nmse_mmv(X_hat, X_true) -> float:
    """Column-averaged normalized MSE for multi-vector estimates, or the
    average over a list of trial pairs."""
    if isinstance(X_hat, (list, tuple)):
        if len(X_hat) != len(X_true) or not X_hat:
            raise ValueError("trial lists must be non-empty and equal length")
        return float(np.mean([nmse_mmv(a, b) for a, b in zip(X_hat, X_true)]))
    X_hat = np.asarray(X_hat, dtype=float)
    X_true = np.asarray(X_true, dtype=float)
    if X_hat.shape != X_true.shape or X_hat.ndim != 2:
        raise ValueError("estimates must be matrices of identical shape")
    col_norms = np.sum(X_true**2, axis=0)
    if np.any(col_norms == 0.0):
        raise ValueError("a truth column has zero norm; NMSE undefined")
    return float(np.mean(np.sum((X_hat - X_true) ** 2, axis=0) / col_norms))


def to_db(value: float) -> float:
    """10 log10 with a -300 dB floor for exact recoveries."""
    if value < 0:
        raise ValueError("NMSE cannot be negative")
    if value == 0.0:
        return NMSE_DB_FLOOR
    return max(10.0 * np.log10(value), NMSE_DB_FLOOR)


def nmse_db(x_hat, x_true) -> float:
    return to_db(nmse(x_hat, x_true))


def top_magnitude_support(x_hat: np.ndarray, k: int) -> np.ndarray:
    """Indices of the k largest |x| entries; ties at the boundary are
    resolved toward the lowest index so the result is deterministic."""
    x_hat = np.asarray(x_hat)
    if x_hat.ndim == 2:
        mags = np.linalg.norm(x_hat, axis=1)
    else:
        mags = np.abs(x_hat)
    order = np.argsort(-mags, kind="stable")
    return np.sort(order[:k])


def support_success(x_hat: np.ndarray, true_support: np.ndarray, k: int | None = None) -> bool:
    true_support = np.sort(np.asarray(true_support, dtype=int))
    if k is None:
        k = true_support.size
    if k != true_support.size:
        raise ValueError("k must equal the true support size")
    if k == 0:
        return True
    return bool(np.array_equal(top_magnitude_support(x_hat, k), true_support))


def support_recovery_rate(trials) -> float:
    """Fraction of (x_hat, true support, k) trials whose top-k magnitude
    indices reproduce the true support exactly."""
    trials = list(trials)
    if not trials:
        raise ValueError("no trials supplied")
    hits = sum(support_success(x_hat, sup, k) for x_hat, sup, k in trials)
    return hits / len(trials)
