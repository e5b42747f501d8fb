"""Generic message-passing engine on the unitary-transformed model, with a
pluggable scalar denoiser.

Two variants are provided. The vector variant ("v1") keeps per-element
variances and needs the squared-magnitude matrix twice per sweep; the
averaged variant ("v2") collapses the variances to scalars and gets away
with two matrix-vector products per sweep.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .model import TransformedModel

DIVERGENCE_NORM = 1e12


class DivergenceError(RuntimeError):
    """Raised when an iteration produces non-finite values or a blown-up
    estimate. Carries the offending quantity name and iteration index."""

    def __init__(self, quantity: str, iteration: int, trace=None):
        super().__init__(f"divergence in {quantity!r} at iteration {iteration}")
        self.quantity = quantity
        self.iteration = iteration
        self.trace = trace


@dataclass
class StopRule:
    """Relative-change stopping rule shared by all iterative solvers."""

    delta_x: float = 1e-8
    t_max: int = 300

    def __post_init__(self):
        if self.delta_x < 0 or self.t_max < 0:
            raise ValueError("stop parameters must be non-negative")


class Denoiser:
    """Posterior-mean map of a scalar pseudo-observation q = x + noise.

    Subclasses implement ``posterior_mean``; the derivative defaults to
    central finite differences with step 1e-6 * max(1, |q|) and should be
    overridden analytically where available.
    """

    def posterior_mean(self, q: np.ndarray, tau_q) -> np.ndarray:
        raise NotImplementedError

    def posterior_mean_and_deriv(self, q: np.ndarray, tau_q):
        g = self.posterior_mean(q, tau_q)
        h = 1e-6 * np.maximum(1.0, np.abs(q))
        gp = (self.posterior_mean(q + h, tau_q) - self.posterior_mean(q - h, tau_q)) / (2.0 * h)
        return g, gp


class GaussianDenoiser(Denoiser):
    """Zero-mean Gaussian prior with scalar or per-element variance."""

    def __init__(self, variance):
        self.variance = np.asarray(variance, dtype=float)
        if np.any(self.variance < 0):
            raise ValueError("prior variance must be non-negative")

    def posterior_mean(self, q, tau_q):
        v = self.variance
        return q * v / (v + tau_q)

    def posterior_mean_and_deriv(self, q, tau_q):
        v = self.variance
        gain = v / (v + tau_q)
        return q * gain, np.broadcast_to(gain, np.shape(q)).copy()


class BernoulliGaussianDenoiser(Denoiser):
    """Spike-and-slab prior: zero w.p. 1 - rho, else Gaussian with the
    given variance. Posterior moments are computed in log space so small
    tau_q stays stable."""

    def __init__(self, rho: float, variance: float = 1.0):
        if not 0.0 <= rho <= 1.0:
            raise ValueError("rho must lie in [0, 1]")
        if variance <= 0:
            raise ValueError("slab variance must be positive")
        self.rho = rho
        self.variance = variance

    def _activation(self, q, tau_q):
        v = self.variance
        if self.rho == 0.0:
            return np.zeros_like(q)
        if self.rho == 1.0:
            return np.ones_like(q)
        # log N(q; 0, tau) - log N(q; 0, v + tau)
        log_lr = 0.5 * (np.log((v + tau_q) / tau_q) + q**2 * (1.0 / (v + tau_q) - 1.0 / tau_q))
        odds = np.log((1.0 - self.rho) / self.rho) + log_lr
        return 1.0 / (1.0 + np.exp(odds))

    def posterior_mean(self, q, tau_q):
        v = self.variance
        return self._activation(q, tau_q) * q * v / (v + tau_q)

    def posterior_mean_and_deriv(self, q, tau_q):
        v = self.variance
        pi = self._activation(q, tau_q)
        slab_mean = q * v / (v + tau_q)
        slab_var = v * tau_q / (v + tau_q)
        g = pi * slab_mean
        post_var = pi * (slab_var + slab_mean**2) - g**2
        return g, post_var / tau_q


@dataclass
class UampState:
    """Carried state of the engine: estimate, its variance (vector for v1,
    scalar for v2), the residual message s, and the sweep counter."""

    x: np.ndarray
    tau_x: np.ndarray | float
    s: np.ndarray
    t: int = 0


@dataclass
class UampIterates:
    """Intermediate quantities of one sweep, kept for diagnostics."""

    tau_p: np.ndarray
    p: np.ndarray
    tau_s: np.ndarray
    tau_q: np.ndarray | float
    q: np.ndarray


def initial_state(N: int, M: int, variant: str = "v2", tau_x0: float = 1.0) -> UampState:
    tau_x = np.full(N, tau_x0) if variant == "v1" else float(tau_x0)
    return UampState(x=np.zeros(N), tau_x=tau_x, s=np.zeros(M), t=0)


def _check(name: str, value, iteration: int, trace=None):
    arr = np.asarray(value)
    if not np.all(np.isfinite(arr)):
        raise DivergenceError(name, iteration, trace)


def uamp_iteration(
    state: UampState,
    model: TransformedModel,
    noise_var: float,
    denoiser: Denoiser,
    variant: str = "v2",
) -> tuple[UampState, UampIterates]:
    """One full sweep of the engine; returns the new state and iterates."""
    if noise_var <= 0:
        raise ValueError("noise_var must be positive")
    if variant not in ("v1", "v2"):
        raise ValueError("variant must be 'v1' or 'v2'")
    Phi, lam, r = model.Phi, model.lam, model.r[:, 0]
    N = Phi.shape[1]
    t = state.t

    if variant == "v1":
        tau_p = model.abs_Phi_sq @ state.tau_x
    else:
        tau_p = state.tau_x * lam
    _check("tau_p", tau_p, t)
    p = Phi @ state.x - tau_p * state.s
    _check("p", p, t)
    tau_s = 1.0 / (tau_p + noise_var)
    _check("tau_s", tau_s, t)
    s = tau_s * (r - p)
    _check("s", s, t)
    if variant == "v1":
        tau_q = 1.0 / (model.abs_Phi_sq.T @ tau_s)
    else:
        tau_q = N / float(lam @ tau_s)
    _check("tau_q", tau_q, t)
    q = state.x + tau_q * (Phi.T @ s)
    _check("q", q, t)
    g, gp = denoiser.posterior_mean_and_deriv(q, tau_q)
    if variant == "v1":
        tau_x = tau_q * gp
    else:
        tau_x = float(np.mean(tau_q * gp))
    _check("tau_x", tau_x, t)
    x = g
    _check("x", x, t)
    if np.linalg.norm(x) > DIVERGENCE_NORM:
        raise DivergenceError("x (norm blow-up)", t)

    new_state = UampState(x=x, tau_x=tau_x, s=s, t=t + 1)
    return new_state, UampIterates(tau_p=tau_p, p=p, tau_s=tau_s, tau_q=tau_q, q=q)


def relative_change(x_new: np.ndarray, x_old: np.ndarray) -> float:
    """Squared relative change; 0 when both estimates vanish."""
    denom = float(np.sum(np.abs(x_new) ** 2))
    num = float(np.sum(np.abs(x_new - x_old) ** 2))
    if denom == 0.0:
        return 0.0 if num == 0.0 else np.inf
    return num / denom


def run_uamp(
    model: TransformedModel,
    noise_var: float,
    denoiser: Denoiser,
    variant: str = "v2",
    stop: StopRule | None = None,
) -> tuple[np.ndarray, np.ndarray | float, list[tuple[float, float]]]:
    """Iterate until the estimate settles or the sweep budget runs out.

    Returns (x, tau_x, trace) where trace holds one (relative change,
    mean tau_x) pair per sweep. A divergence error is re-raised with the
    trace collected so far attached.
    """
    stop = stop or StopRule()
    state = initial_state(model.Phi.shape[1], model.Phi.shape[0], variant)
    trace: list[tuple[float, float]] = []
    while state.t < stop.t_max:
        x_old = state.x
        try:
            state, _ = uamp_iteration(state, model, noise_var, denoiser, variant)
        except DivergenceError as e:
            e.trace = trace
            raise
        change = relative_change(state.x, x_old)
        trace.append((change, float(np.mean(state.tau_x))))
        if change <= stop.delta_x:
            break
    return state.x, state.tau_x, trace
