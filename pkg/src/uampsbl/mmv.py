"""Multiple-measurement-vector solvers.

``uamp_sbl_mmv`` recovers jointly sparse columns that share one learned
precision vector; ``uamp_tsbl`` additionally chains the columns with an
AR(1) model, passing Gaussian messages forward and backward along the
chain. Per-column sweeps are the same engine updates as the
single-vector solver; only the noise precision, the shared precisions
and the shape parameter pool information across columns.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .metrics import nmse_mmv, to_db
from .model import TransformedModel
from .smv import EPS_INIT, GAMMA_CAP, RecoveryResult, epsilon_update
from .uamp import DIVERGENCE_NORM, DivergenceError, StopRule


@dataclass
class MmvState:
    X: np.ndarray
    tau_x: np.ndarray
    S: np.ndarray
    gamma: np.ndarray
    beta: float
    eps: float
    t: int = 0
    gamma_cap_hits: int = 0


@dataclass
class TsblMessages:
    """Forward (xi, psi) and backward (theta, phi) Gaussian messages per
    column; phi may hold +inf where the backward message is absent."""

    xi: np.ndarray
    psi: np.ndarray
    theta: np.ndarray
    phi: np.ndarray
    alpha: float


def _check(name: str, value, iteration: int):
    if not np.all(np.isfinite(np.asarray(value))):
        raise DivergenceError(name, iteration)


def _mean_relative_change(X_new: np.ndarray, X_old: np.ndarray) -> float:
    num = np.sum(np.abs(X_new - X_old) ** 2, axis=0)
    den = np.sum(np.abs(X_new) ** 2, axis=0)
    out = np.zeros_like(den)
    live = den > 0
    out[live] = num[live] / den[live]
    out[~live & (num > 0)] = np.inf
    return float(np.mean(out))


def uamp_sbl_mmv(
    model: TransformedModel,
    stop: StopRule | None = None,
    eps_init: float = EPS_INIT,
    X_true: np.ndarray | None = None,
    gamma_cap: float = GAMMA_CAP,
) -> tuple[RecoveryResult, MmvState]:
    """Joint recovery of all measurement columns with a shared support.

    With a single column this reduces, operation for operation, to the
    single-vector solver.
    """
    stop = stop or StopRule()
    Phi, lam, R = model.Phi, model.lam, model.r
    M, N = Phi.shape
    L = R.shape[1]
    st = MmvState(
        X=np.zeros((N, L)), tau_x=np.ones(L), S=np.zeros((M, L)),
        gamma=np.ones(N), beta=1.0, eps=eps_init,
    )
    t0 = time.perf_counter()
    converged = False
    while st.t < stop.t_max:
        X_old = st.X
        _mmv_sweep(st, Phi, lam, R, gamma_cap)
        if _mean_relative_change(st.X, X_old) <= stop.delta_x:
            converged = True
            break
    runtime = time.perf_counter() - t0
    err = to_db(nmse_mmv(st.X, X_true)) if X_true is not None else None
    result = RecoveryResult(
        x=st.X, iterations=st.t, converged=converged, nmse_db=err,
        runtime_s=runtime, epsilon_final=st.eps, beta_hat=st.beta,
        gamma_cap_hits=st.gamma_cap_hits,
    )
    return result, st


def _mmv_sweep(st: MmvState, Phi, lam, R, gamma_cap):
    N = Phi.shape[1]
    L = R.shape[1]
    t = st.t
    tau_p = lam[:, None] * st.tau_x[None, :]
    P = Phi @ st.X - tau_p * st.S
    _check("p", P, t)
    scale = 1.0 + st.beta * tau_p
    V_h = tau_p / scale
    H_hat = (st.beta * tau_p * R + P) / scale
    st.beta = L * R.shape[0] / (float(np.sum(np.abs(R - H_hat) ** 2)) + float(np.sum(V_h)))
    _check("beta", st.beta, t)
    tau_s = 1.0 / (tau_p + 1.0 / st.beta)
    S = tau_s * (R - P)
    _check("s", S, t)
    tau_q = N / (lam @ tau_s)
    _check("tau_q", tau_q, t)
    Q = st.X + tau_q[None, :] * (Phi.T @ S)
    _check("q", Q, t)
    denom = 1.0 + tau_q[None, :] * st.gamma[:, None]
    tau_x = (tau_q / N) * np.sum(1.0 / denom, axis=0)
    X = Q / denom
    _check("x", X, t)
    if np.linalg.norm(X) > DIVERGENCE_NORM:
        raise DivergenceError("x (norm blow-up)", t)
    gamma = (2.0 * st.eps + 1.0) / np.mean(np.abs(X) ** 2 + tau_x[None, :], axis=1)
    hits = int(np.count_nonzero(gamma > gamma_cap))
    if hits:
        st.gamma_cap_hits += hits
        gamma = np.minimum(gamma, gamma_cap)
    _check("gamma", gamma, t)
    st.X, st.tau_x, st.S, st.gamma = X, tau_x, S, gamma
    st.eps = epsilon_update(gamma)
    st.t = t + 1


def tsbl_forward(Q: np.ndarray, tau_q: np.ndarray, gamma: np.ndarray, alpha: float):
    """Forward chain messages. Column 0 carries the bare prior
    (mean zero, variance 1/gamma); later columns blend the previous
    column's pseudo-observation with its incoming forward message."""
    N, L = Q.shape
    tau_q = np.broadcast_to(np.asarray(tau_q, dtype=float), (L,))
    xi = np.zeros((N, L))
    psi = np.empty((N, L))
    psi[:, 0] = 1.0 / gamma
    for l in range(1, L):
        prod_var = tau_q[l - 1] * psi[:, l - 1] / (tau_q[l - 1] + psi[:, l - 1])
        xi[:, l] = alpha * (Q[:, l - 1] / tau_q[l - 1] + xi[:, l - 1] / psi[:, l - 1]) * prod_var
        psi[:, l] = alpha**2 * prod_var + (1.0 - alpha**2) / gamma
    if np.any(psi <= 0):
        raise ValueError("non-positive forward message variance")
    return xi, psi


def tsbl_backward(Q: np.ndarray, tau_q: np.ndarray, gamma: np.ndarray, alpha: float):
    """Backward chain messages. The last column has no right neighbour,
    so its message is uninformative (infinite variance); with alpha = 0
    the chain factorizes and every backward message is uninformative."""
    N, L = Q.shape
    theta = np.zeros((N, L))
    phi = np.full((N, L), np.inf)
    if alpha == 0.0 or L < 2:
        return theta, phi
    tau_q = np.broadcast_to(np.asarray(tau_q, dtype=float), (L,))
    theta[:, L - 2] = Q[:, L - 1] / alpha
    phi[:, L - 2] = (tau_q[L - 1] + (1.0 - alpha**2) / gamma) / alpha**2
    for l in range(L - 3, -1, -1):
        prod_var = tau_q[l + 1] * phi[:, l + 1] / (tau_q[l + 1] + phi[:, l + 1])
        theta[:, l] = (Q[:, l + 1] / tau_q[l + 1] + theta[:, l + 1] / phi[:, l + 1]) * prod_var / alpha
        phi[:, l] = (prod_var + (1.0 - alpha**2) / gamma) / alpha**2
    if np.any(phi[:, : L - 1] <= 0):
        raise ValueError("non-positive backward message variance")
    return theta, phi


def combine_three_gaussians(q, tau_q, theta, phi, xi, psi):
    """Precision-weighted product of the pseudo-observation and the two
    chain messages; returns per-element posterior (mean, variance).
    Infinite variances drop out of the product."""
    prec = 1.0 / tau_q + 1.0 / phi + 1.0 / psi
    var = 1.0 / prec
    mean = var * (q / tau_q + theta / phi + xi / psi)
    return mean, var


def uamp_tsbl(
    model: TransformedModel,
    alpha: float,
    stop: StopRule | None = None,
    eps_init: float = EPS_INIT,
    X_true: np.ndarray | None = None,
    gamma_cap: float = GAMMA_CAP,
) -> tuple[RecoveryResult, MmvState]:
    """Joint recovery with an AR(1) chain across columns.

    Each sweep refreshes the forward messages, runs the per-column engine
    block with a pooled noise precision, combines the three Gaussian
    messages per element, refreshes the backward messages, and pools the
    chain quadratics into the shared precisions.
    """
    if not -1.0 < alpha < 1.0:
        raise ValueError("temporal correlation alpha must lie in (-1, 1)")
    stop = stop or StopRule()
    Phi, lam, R = model.Phi, model.lam, model.r
    M, N = Phi.shape
    L = R.shape[1]
    if L < 2:
        raise ValueError("the temporally correlated solver needs at least two columns")

    st = MmvState(
        X=np.zeros((N, L)), tau_x=np.ones(L), S=np.zeros((M, L)),
        gamma=np.ones(N), beta=1.0, eps=eps_init,
    )
    Q = np.zeros((N, L))
    tau_q = np.ones(L)
    msgs = TsblMessages(
        xi=np.zeros((N, L)), psi=np.ones((N, L)),
        theta=np.zeros((N, L)), phi=np.full((N, L), np.inf), alpha=alpha,
    )
    # columns before the last start with the unit-variance messages the
    # first combine expects; the last column never receives one
    msgs.phi[:, : L - 1] = 1.0

    t0 = time.perf_counter()
    converged = False
    while st.t < stop.t_max:
        X_old = st.X
        Q, tau_q = _tsbl_sweep(st, msgs, Phi, lam, R, Q, tau_q, alpha, gamma_cap)
        if _mean_relative_change(st.X, X_old) <= stop.delta_x:
            converged = True
            break
    runtime = time.perf_counter() - t0
    err = to_db(nmse_mmv(st.X, X_true)) if X_true is not None else None
    result = RecoveryResult(
        x=st.X, iterations=st.t, converged=converged, nmse_db=err,
        runtime_s=runtime, epsilon_final=st.eps, beta_hat=st.beta,
        gamma_cap_hits=st.gamma_cap_hits,
    )
    return result, st


def _tsbl_sweep(st: MmvState, msgs: TsblMessages, Phi, lam, R, Q, tau_q, alpha, gamma_cap):
    N = Phi.shape[1]
    L = R.shape[1]
    t = st.t

    # forward messages from the previous iteration's pseudo-observations
    msgs.xi, msgs.psi = tsbl_forward(Q, tau_q, st.gamma, alpha)

    tau_p = lam[:, None] * st.tau_x[None, :]
    P = Phi @ st.X - tau_p * st.S
    _check("p", P, t)
    scale = 1.0 + st.beta * tau_p
    V_h = tau_p / scale
    H_hat = (st.beta * tau_p * R + P) / scale
    st.beta = L * R.shape[0] / (float(np.sum(np.abs(R - H_hat) ** 2)) + float(np.sum(V_h)))
    _check("beta", st.beta, t)
    tau_s = 1.0 / (tau_p + 1.0 / st.beta)
    S = tau_s * (R - P)
    _check("s", S, t)
    tau_q = N / (lam @ tau_s)
    _check("tau_q", tau_q, t)
    Q = st.X + tau_q[None, :] * (Phi.T @ S)
    _check("q", Q, t)

    X, var = combine_three_gaussians(Q, tau_q[None, :], msgs.theta, msgs.phi, msgs.xi, msgs.psi)
    tau_x = np.mean(var, axis=0)
    _check("x", X, t)
    if np.linalg.norm(X) > DIVERGENCE_NORM:
        raise DivergenceError("x (norm blow-up)", t)

    msgs.theta, msgs.phi = tsbl_backward(Q, tau_q, st.gamma, alpha)

    # pooled chain quadratics; every term is a posterior second moment of
    # an innovation, so the denominator stays positive
    sq = np.abs(X) ** 2 + tau_x[None, :]
    den = sq[:, 0].copy()
    if L > 1:
        c = 1.0 / (1.0 - alpha**2)
        den = den + c * np.sum(sq[:, 1:], axis=1)
        den = den + c * alpha**2 * np.sum(sq[:, :-1], axis=1)
        den = den - c * 2.0 * alpha * np.sum(X[:, 1:] * X[:, :-1], axis=1)
    if np.any(den <= 0):
        raise DivergenceError("gamma denominator (non-positive)", t)
    gamma = L * (2.0 * st.eps + 1.0) / den
    hits = int(np.count_nonzero(gamma > gamma_cap))
    if hits:
        st.gamma_cap_hits += hits
        gamma = np.minimum(gamma, gamma_cap)
    _check("gamma", gamma, t)

    st.X, st.tau_x, st.S, st.gamma = X, tau_x, S, gamma
    st.eps = epsilon_update(gamma)
    st.t = t + 1
    return Q, tau_q
