"""Single-measurement-vector solvers.

``uamp_sbl`` is the message-passing solver on the transformed model with
per-element precisions learned through a Gamma hyperprior whose shape
parameter adapts every sweep. ``tipping_sbl`` is the classic
matrix-inversion iteration kept as a reference, and
``support_oracle_mmse`` gives the genie-aided lower bound.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .metrics import nmse_db
from .model import TransformedModel
from .uamp import DIVERGENCE_NORM, DivergenceError, StopRule, relative_change

GAMMA_CAP = 1e11
EPS_INIT = 1e-3


@dataclass
class PriorParams:
    """Gamma hyperprior on the element precisions."""

    epsilon: float = EPS_INIT
    eta: float = 0.0

    def __post_init__(self):
        if self.epsilon < 0 or self.eta < 0:
            raise ValueError("shape and rate parameters must be non-negative")


@dataclass
class SblState:
    """Full working state of one solver run."""

    x: np.ndarray
    tau_x: float | np.ndarray
    s: np.ndarray
    gamma: np.ndarray
    beta: float
    eps: float
    t: int = 0
    v_h: np.ndarray | None = None
    h_hat: np.ndarray | None = None
    gamma_cap_hits: int = 0


@dataclass
class RecoveryResult:
    x: np.ndarray
    iterations: int
    converged: bool
    nmse_db: float | None
    runtime_s: float
    epsilon_final: float
    beta_hat: float
    gamma_cap_hits: int = 0


def epsilon_update(gamma: np.ndarray) -> float:
    """Shape parameter from the spread of the learned precisions:
    half the square root of log(mean) - mean(log). The argument is
    non-negative by concavity of the log; it is clamped at zero before
    the square root to absorb rounding."""
    gamma = np.asarray(gamma, dtype=float)
    if np.any(gamma <= 0) or not np.all(np.isfinite(gamma)):
        raise ValueError("precisions must be positive and finite")
    arg = np.log(np.mean(gamma)) - float(np.mean(np.log(gamma)))
    return 0.5 * np.sqrt(max(arg, 0.0))


def noise_precision_update(r: np.ndarray, h_hat: np.ndarray, v_h: np.ndarray) -> float:
    """Posterior-mean noise precision from residuals and their variances."""
    return r.size / (float(np.sum(np.abs(r - h_hat) ** 2)) + float(np.sum(v_h)))


def initial_sbl_state(N: int, M: int, variant: str = "v2", eps_init: float = EPS_INIT) -> SblState:
    tau_x = np.ones(N) if variant == "v1" else 1.0
    return SblState(
        x=np.zeros(N), tau_x=tau_x, s=np.zeros(M), gamma=np.ones(N),
        beta=1.0, eps=eps_init, t=0,
    )


def _check(name: str, value, iteration: int):
    if not np.all(np.isfinite(np.asarray(value))):
        raise DivergenceError(name, iteration)


def sbl_sweep(
    state: SblState,
    model: TransformedModel,
    variant: str = "v2",
    adapt_noise: bool = True,
    adapt_prior: bool = True,
    gamma_cap: float = GAMMA_CAP,
) -> SblState:
    """One full sweep, in place. The adapt flags freeze the noise
    precision or the precision/shape learning, which turns the sweep into
    a plain engine iteration for cross-checks and diagnostics."""
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
    # guarded forms: finite even where tau_p has zeros
    scale = 1.0 + state.beta * tau_p
    v_h = tau_p / scale
    h_hat = (state.beta * tau_p * r + p) / scale
    _check("h_hat", h_hat, t)
    if adapt_noise:
        state.beta = noise_precision_update(r, h_hat, v_h)
        _check("beta", state.beta, t)
    tau_s = 1.0 / (tau_p + 1.0 / state.beta)
    s = tau_s * (r - p)
    _check("s", s, t)
    if variant == "v1":
        tau_q = 1.0 / (model.abs_Phi_sq.T @ tau_s)
    else:
        tau_q = N / float(lam @ tau_s)
    _check("tau_q", tau_q, t)
    q = state.x + tau_q * (Phi.T @ s)
    _check("q", q, t)
    denom = 1.0 + tau_q * state.gamma
    if variant == "v1":
        tau_x = tau_q / denom
    else:
        tau_x = (tau_q / N) * float(np.sum(1.0 / denom))
    x = q / denom
    _check("x", x, t)
    if np.linalg.norm(x) > DIVERGENCE_NORM:
        raise DivergenceError("x (norm blow-up)", t)
    if adapt_prior:
        gamma = (2.0 * state.eps + 1.0) / (np.abs(x) ** 2 + tau_x)
        hits = int(np.count_nonzero(gamma > gamma_cap))
        if hits:
            state.gamma_cap_hits += hits
            gamma = np.minimum(gamma, gamma_cap)
        _check("gamma", gamma, t)
        state.gamma = gamma
        state.eps = epsilon_update(gamma)

    state.x, state.tau_x, state.s = x, tau_x, s
    state.v_h, state.h_hat = v_h, h_hat
    state.t = t + 1
    return state


def uamp_sbl(
    model: TransformedModel,
    stop: StopRule | None = None,
    variant: str = "v2",
    eps_init: float = EPS_INIT,
    x_true: np.ndarray | None = None,
    gamma_cap: float = GAMMA_CAP,
) -> tuple[RecoveryResult, SblState]:
    """Run the adaptive solver until the estimate settles.

    Returns the result record plus the final state. Divergence raises
    ``DivergenceError`` with the iteration index; nothing is clamped
    silently (precisions hitting the cap are counted in the result).
    """
    stop = stop or StopRule()
    M, N = model.Phi.shape
    state = initial_sbl_state(N, M, variant, eps_init)
    t0 = time.perf_counter()
    converged = False
    while state.t < stop.t_max:
        x_old = state.x
        sbl_sweep(state, model, variant=variant, gamma_cap=gamma_cap)
        if relative_change(state.x, x_old) <= stop.delta_x:
            converged = True
            break
    runtime = time.perf_counter() - t0
    err = nmse_db(state.x, x_true) if x_true is not None else None
    result = RecoveryResult(
        x=state.x, iterations=state.t, converged=converged, nmse_db=err,
        runtime_s=runtime, epsilon_final=state.eps, beta_hat=state.beta,
        gamma_cap_hits=state.gamma_cap_hits,
    )
    return result, state


def tipping_sbl(
    A: np.ndarray,
    y: np.ndarray,
    beta: float,
    prior: PriorParams | None = None,
    auto_eps: bool = False,
    stop: StopRule | None = None,
    x_true: np.ndarray | None = None,
    keep_history: bool = False,
):
    """Reference dense-matrix iteration with known noise precision.

    Each pass inverts (beta A^T A + Diag(gamma)). With ``auto_eps`` the
    Gamma shape parameter is re-estimated from the precisions every pass
    (the rate parameter is held at zero in that mode).
    """
    if beta <= 0:
        raise ValueError("noise precision beta must be positive")
    prior = prior or PriorParams()
    stop = stop or StopRule()
    y = np.asarray(y, dtype=float).ravel()
    M, N = A.shape
    gamma = np.ones(N)
    eps, eta = prior.epsilon, prior.eta
    AtA = A.T @ A
    Aty = A.T @ y
    x = np.zeros(N)
    history = [] if keep_history else None
    t0 = time.perf_counter()
    converged = False
    t = 0
    while t < stop.t_max:
        x_old = x
        S = beta * AtA + np.diag(gamma)
        try:
            Z = np.linalg.inv(S)
        except np.linalg.LinAlgError as e:
            raise np.linalg.LinAlgError(f"system matrix singular at iteration {t}: {e}") from e
        x = beta * (Z @ Aty)
        gamma = (2.0 * eps + 1.0) / (2.0 * eta + np.abs(x) ** 2 + np.diag(Z))
        if auto_eps:
            eps = epsilon_update(gamma)
        if keep_history:
            history.append((x.copy(), gamma.copy(), eps))
        t += 1
        if relative_change(x, x_old) <= stop.delta_x:
            converged = True
            break
    runtime = time.perf_counter() - t0
    err = nmse_db(x, x_true) if x_true is not None else None
    result = RecoveryResult(
        x=x, iterations=t, converged=converged, nmse_db=err,
        runtime_s=runtime, epsilon_final=eps, beta_hat=beta,
    )
    return (result, history) if keep_history else result


def support_oracle_mmse(
    A: np.ndarray,
    y: np.ndarray,
    support: np.ndarray,
    beta: float,
    signal_var: float = 1.0,
) -> np.ndarray:
    """Genie-aided LMMSE estimate restricted to the true support.

    ``y`` may hold several measurement columns; the estimate is computed
    columnwise with the shared support. Returns an array shaped like the
    signal (vector for vector input).
    """
    support = np.asarray(support, dtype=int)
    single = np.asarray(y).ndim == 1
    Y = np.asarray(y, dtype=float)
    Y = Y[:, None] if single else Y
    N = A.shape[1]
    X = np.zeros((N, Y.shape[1]))
    if support.size:
        As = A[:, support]
        S = np.eye(support.size) / signal_var + beta * (As.T @ As)
        X[support, :] = np.linalg.solve(S, beta * (As.T @ Y))
    return X[:, 0] if single else X
