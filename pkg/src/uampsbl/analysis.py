"""Scalar precision-iteration theory and state-evolution prediction.

The precision update of the learning iteration reduces, for a diagonal
observation, to a scalar map whose fixed points have closed forms; this
module evaluates and classifies them. It also predicts solver MSE by
alternating the variance-mixing map of the transformed model with a
tabulated denoiser-MSE curve built by Monte Carlo.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .metrics import (  # noqa: F401  (re-exported module surface)
    nmse,
    nmse_db,
    nmse_mmv,
    support_recovery_rate,
    to_db,
    top_magnitude_support,
)
from .model import SignalSpec
from .seeds import rng_from
from .smv import EPS_INIT, GAMMA_CAP, epsilon_update

NEUTRAL_RTOL = 1e-12


def gamma_map(gamma: float, beta: float, y_sq: float, eps: float) -> float:
    """One step of the scalar precision iteration for a diagonal
    observation with squared value y_sq and noise precision beta."""
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    return (2.0 * eps + 1.0) * (beta + gamma) ** 2 / (beta**2 * y_sq + beta + gamma)


def convergence_threshold(eps: float) -> float:
    """Smallest beta*y^2 above which the iteration admits a stable
    finite fixed point."""
    return 1.0 + 4.0 * eps + 4.0 * np.sqrt(eps**2 + eps / 2.0)


@dataclass
class FixedPointReport:
    regime: str  # stable_fp | diverge | neutral
    fp_value: float | None
    threshold: float
    unstable_value: float | None = None


def classify_fixed_points(beta: float, y_sq: float, eps: float) -> FixedPointReport:
    """Closed-form classification of the scalar iteration's fixed points.

    Exactly at the threshold the single fixed point is neutral (the map
    has unit slope there) and the outcome depends on the initial value,
    so it is reported as such rather than guessed.
    """
    if beta <= 0:
        raise ValueError("beta must be positive")
    if y_sq < 0 or eps < 0:
        raise ValueError("y_sq and eps must be non-negative")
    u = beta * y_sq
    threshold = convergence_threshold(eps)

    if eps == 0.0:
        if u > 1.0:
            return FixedPointReport("stable_fp", beta / (u - 1.0), threshold)
        return FixedPointReport("diverge", None, threshold)

    if abs(u - threshold) <= NEUTRAL_RTOL * max(1.0, threshold):
        neutral = 2.0 * beta * (1.0 + 2.0 * eps) / (u - 1.0 - 4.0 * eps)
        return FixedPointReport("neutral", neutral, threshold)
    if u < threshold:
        return FixedPointReport("diverge", None, threshold)

    disc = np.sqrt(u**2 - 8.0 * eps * u - 2.0 * u + 1.0)
    stable = 2.0 * beta * (1.0 + 2.0 * eps) / (u - 4.0 * eps - 1.0 + disc)
    unstable = 2.0 * beta * (1.0 + 2.0 * eps) / (u - 4.0 * eps - 1.0 - disc)
    if not unstable > 0:
        unstable = None
    return FixedPointReport("stable_fp", stable, threshold, unstable)


def precision_ratio(beta_y_sq: float, eps: float) -> float:
    """Ratio of the stable precisions learned with and without a positive
    shape parameter, at the same beta*y^2. Defined only above the
    positive-shape threshold; approaches 1 + 2*eps for large arguments."""
    u = beta_y_sq
    threshold = convergence_threshold(eps)
    if not u > threshold:
        raise ValueError("beta*y^2 must exceed the convergence threshold")
    if eps == 0.0:
        return 1.0
    d = u - 1.0
    a = 1.0 - 4.0 * eps / d
    return 2.0 * (1.0 + 2.0 * eps) / (a + np.sqrt(a**2 - 8.0 * eps * (1.0 + 2.0 * eps) / d**2))


# ---------------------------------------------------------------------------
# state-evolution prediction


@dataclass
class MseTable:
    """Denoiser MSE as a function of the pseudo-noise variance, sampled on
    a log grid for one sparsity rate. Serialized as two numeric columns
    with the sparsity rate in the header comment."""

    tau: np.ndarray
    mse: np.ndarray
    rho: float

    def __post_init__(self):
        self.tau = np.asarray(self.tau, dtype=float)
        self.mse = np.asarray(self.mse, dtype=float)
        if self.tau.ndim != 1 or self.tau.shape != self.mse.shape:
            raise ValueError("tau and mse must be 1-D arrays of equal length")
        if np.any(np.diff(self.tau) <= 0):
            raise ValueError("tau grid must be strictly increasing")

    def covers(self, tau: float) -> bool:
        return self.tau[0] <= tau <= self.tau[-1]

    def phi(self, tau: float) -> float:
        """Log-log linear interpolation; clipped at the grid ends."""
        lt = np.log(np.clip(tau, self.tau[0], self.tau[-1]))
        lv = np.interp(lt, np.log(self.tau), np.log(np.maximum(self.mse, 1e-300)))
        return float(np.exp(lv))

    def save(self, path):
        np.savetxt(path, np.column_stack([self.tau, self.mse]), header=f"rho={self.rho!r}")

    @classmethod
    def load(cls, path) -> "MseTable":
        rho = None
        with open(path) as fh:
            for line in fh:
                if line.startswith("#") and "rho=" in line:
                    rho = float(line.split("rho=")[1].strip())
                    break
        if rho is None:
            raise ValueError(f"{path}: missing rho header line")
        data = np.loadtxt(path)
        return cls(tau=data[:, 0], mse=data[:, 1], rho=rho)


DEFAULT_TAU_GRID = np.logspace(-10.0, 4.0, 60)


def build_mse_table(
    signal: SignalSpec,
    tau_grid: np.ndarray | None = None,
    samples: int = 100_000,
    seed: int = 0,
    inner_iters: int = 50,
    eps_init: float = EPS_INIT,
) -> MseTable:
    """Simulate the adaptive denoiser on the additive pseudo-noise model.

    One batch of signals and one batch of unit noises are shared across
    the grid (common random numbers), so the tabulated curve is smooth
    and monotone up to discretization. At each grid point the
    precision/shape adaptation is iterated to its per-batch fixed point
    before the error is measured.
    """
    tau_grid = DEFAULT_TAU_GRID if tau_grid is None else np.asarray(tau_grid, dtype=float)
    if np.any(tau_grid <= 0) or np.any(np.diff(tau_grid) <= 0):
        raise ValueError("tau grid must be positive and sorted")
    rng = rng_from(seed)
    rho = signal.sparsity_rate
    x = np.where(rng.random(samples) < rho, rng.standard_normal(samples), 0.0)
    z = rng.standard_normal(samples)
    mse = np.empty_like(tau_grid)
    for i, tau in enumerate(tau_grid):
        mse[i] = _adapted_denoiser_mse(x, z, tau, inner_iters, eps_init)
    return MseTable(tau=tau_grid, mse=mse, rho=rho)


def _adapted_denoiser_mse(x, z, tau, inner_iters, eps_init):
    q = x + np.sqrt(tau) * z
    n = q.size
    gamma = np.ones(n)
    eps = eps_init
    x_hat = q
    for _ in range(inner_iters):
        denom = 1.0 + tau * gamma
        tau_x = (tau / n) * float(np.sum(1.0 / denom))
        x_hat = q / denom
        gamma = np.minimum((2.0 * eps + 1.0) / (x_hat**2 + tau_x), GAMMA_CAP)
        eps = epsilon_update(gamma)
    return float(np.mean((x_hat - x) ** 2))


def psi_map(v_x: float, lam: np.ndarray, beta: float, n: int) -> float:
    """Pseudo-noise variance produced by the transformed model when the
    per-element MSE is v_x."""
    return n / float(np.sum(lam / (v_x * lam + 1.0 / beta)))


@dataclass
class SePrediction:
    taus: np.ndarray
    v_xs: np.ndarray
    converged: bool
    extrapolated: bool

    @property
    def v_x_final(self) -> float:
        return float(self.v_xs[-1])

    @property
    def tau_final(self) -> float:
        return float(self.taus[-1])

    def nmse_db(self, rho: float) -> float:
        """Predicted normalized error given the signal sparsity rate."""
        return to_db(self.v_x_final / rho)


def se_predict(
    lam: np.ndarray,
    beta: float,
    table: MseTable,
    v_x_init: float,
    iterations: int = 200,
    tol: float = 1e-10,
    n: int | None = None,
) -> SePrediction:
    """Alternate the variance-mixing map with the tabulated denoiser MSE.

    ``n`` is the signal dimension; it defaults to len(lam), which is only
    correct for square transforms. Grid departures are flagged rather
    than silently clipped.
    """
    lam = np.asarray(lam, dtype=float)
    if v_x_init <= 0:
        raise ValueError("v_x_init must be positive")
    n = len(lam) if n is None else int(n)
    v = float(v_x_init)
    taus, v_xs = [], []
    extrapolated = False
    converged = False
    for _ in range(iterations):
        tau = psi_map(v, lam, beta, n)
        if not table.covers(tau):
            extrapolated = True
        v_new = table.phi(tau)
        taus.append(tau)
        v_xs.append(v_new)
        if abs(v_new - v) <= tol * max(v_new, 1e-300):
            v = v_new
            converged = True
            break
        v = v_new
    return SePrediction(
        taus=np.asarray(taus), v_xs=np.asarray(v_xs),
        converged=converged, extrapolated=extrapolated,
    )
