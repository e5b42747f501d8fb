"""Problem generation: measurement matrices, sparse signals, noise, and
the unitary-transformed model consumed by the message-passing solvers.

Everything here is real-valued. All generators are pure functions of
(spec, seed) and are safe to call concurrently.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .seeds import derive_seed, rng_from

MATRIX_KINDS = ("iid_gaussian", "ill_conditioned", "correlated", "nonzero_mean", "low_rank")


@dataclass
class MatrixSpec:
    """Recipe for one measurement matrix.

    Only the parameters of the selected ``kind`` are read:
    ``kappa`` for ill_conditioned, ``c`` for correlated, ``mu`` for
    nonzero_mean, ``rank_ratio`` for low_rank.
    """

    kind: str
    rows: int
    cols: int
    kappa: float = 1.0
    c: float = 0.0
    mu: float = 0.0
    rank_ratio: float = 1.0

    def __post_init__(self):
        if self.kind not in MATRIX_KINDS:
            raise ValueError(f"unknown matrix kind {self.kind!r}")
        if self.rows < 1 or self.cols < 1:
            raise ValueError("matrix dimensions must be >= 1")
        if self.kind == "ill_conditioned" and self.kappa < 1.0:
            raise ValueError("condition number kappa must be >= 1")
        if self.kind == "correlated" and not 0.0 <= self.c <= 1.0:
            raise ValueError("correlation parameter c must lie in [0, 1]")
        if self.kind == "low_rank":
            if not 0.0 < self.rank_ratio <= 1.0:
                raise ValueError("rank_ratio must lie in (0, 1]")
            if self._low_rank_inner() >= self.rows:
                raise ValueError("low_rank requires inner dimension R < rows")

    def _low_rank_inner(self) -> int:
        return max(1, round(self.rank_ratio * self.cols))


@dataclass
class SignalSpec:
    """Bernoulli-Gaussian signal family, optionally several vectors with a
    shared support and AR(1) correlation along the vector index."""

    length: int
    sparsity_rate: float
    num_vectors: int = 1
    temporal_corr: float = 0.0

    def __post_init__(self):
        if self.length < 1:
            raise ValueError("signal length must be >= 1")
        if not 0.0 <= self.sparsity_rate <= 1.0:
            raise ValueError("sparsity_rate must lie in [0, 1]")
        if self.num_vectors < 1:
            raise ValueError("num_vectors must be >= 1")
        if not -1.0 < self.temporal_corr < 1.0:
            raise ValueError("temporal_corr must lie in (-1, 1)")


@dataclass
class ProblemInstance:
    """Ground truth for one recovery trial: Y = A X + W."""

    A: np.ndarray
    X: np.ndarray
    Y: np.ndarray
    beta_true: float
    support: np.ndarray

    @property
    def single_vector(self) -> bool:
        return self.X.shape[1] == 1


@dataclass
class TransformedModel:
    """Left-rotated observation model obtained from the SVD of A.

    ``r`` holds the rotated measurements, ``Phi`` the rotated matrix
    (rectangular-diagonal singular values times the right factor), and
    ``lam[m]`` equals the squared norm of row m of ``Phi``.
    """

    r: np.ndarray
    Phi: np.ndarray
    lam: np.ndarray
    U: np.ndarray
    abs_Phi_sq: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if self.r.ndim == 1:
            self.r = self.r[:, None]
        if self.abs_Phi_sq is None:
            self.abs_Phi_sq = self.Phi**2

    @property
    def num_vectors(self) -> int:
        return self.r.shape[1]


def gen_matrix(spec: MatrixSpec, seed: int) -> np.ndarray:
    """Draw one measurement matrix according to ``spec``."""
    rng = rng_from(seed)
    M, N = spec.rows, spec.cols

    if spec.kind == "iid_gaussian":
        return rng.standard_normal((M, N))

    if spec.kind == "ill_conditioned":
        return _ill_conditioned(rng, M, N, spec.kappa)

    if spec.kind == "correlated":
        G = rng.standard_normal((M, N))
        if spec.c == 0.0:
            return G
        return _corr_sqrt(spec.c, M) @ G @ _corr_sqrt(spec.c, N)

    if spec.kind == "nonzero_mean":
        return spec.mu + rng.standard_normal((M, N))

    # low_rank: product of two iid Gaussian factors with inner dim R < M
    R = spec._low_rank_inner()
    return rng.standard_normal((M, R)) @ rng.standard_normal((R, N))


def _ill_conditioned(rng: np.random.Generator, M: int, N: int, kappa: float) -> np.ndarray:
    """Orthonormal factors of a Gaussian matrix around a geometric
    singular-value profile with condition number exactly kappa."""
    K = min(M, N)
    if K == 1:
        if kappa != 1.0:
            raise ValueError("a rank-1 profile cannot realise kappa > 1")
        sv = np.ones(1)
    else:
        ratio = kappa ** (1.0 / (K - 1))
        sv = ratio ** (-np.arange(K, dtype=float))
    # fix the Frobenius norm at sqrt(M*N) so SNR levels are comparable
    # across matrix kinds
    sv *= np.sqrt(M * N / np.sum(sv**2))
    G = rng.standard_normal((M, N))
    U, _, Vt = np.linalg.svd(G, full_matrices=True)
    return (U[:, :K] * sv) @ Vt[:K, :]


def _corr_sqrt(c: float, n: int) -> np.ndarray:
    """Symmetric square root of the Toeplitz matrix [c^|i-j|]."""
    C = c ** np.abs(np.subtract.outer(np.arange(n), np.arange(n)))
    w, Q = np.linalg.eigh(C)
    w = np.clip(w, 0.0, None)  # guard tiny negative eigenvalues
    return (Q * np.sqrt(w)) @ Q.T


def gen_signal(spec: SignalSpec, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Draw an N x L signal matrix plus its support index set.

    Rows outside the support are identically zero in every column.
    On-support rows are unit-variance Gaussian; for L > 1 and a nonzero
    temporal_corr they follow a stationary AR(1) chain across columns.
    """
    rng = rng_from(seed)
    N, L, alpha = spec.length, spec.num_vectors, spec.temporal_corr
    mask = rng.random(N) < spec.sparsity_rate
    support = np.flatnonzero(mask)
    X = np.zeros((N, L))
    k = support.size
    if k:
        if L == 1 or alpha == 0.0:
            X[support, :] = rng.standard_normal((k, L))
        else:
            cols = np.empty((k, L))
            cols[:, 0] = rng.standard_normal(k)
            innov = np.sqrt(1.0 - alpha**2)
            for l in range(1, L):
                cols[:, l] = alpha * cols[:, l - 1] + innov * rng.standard_normal(k)
            X[support, :] = cols
    return X, support


def add_noise(clean: np.ndarray, snr_db: float, seed: int) -> tuple[np.ndarray, float]:
    """Add white Gaussian noise at the requested SNR (signal power over
    noise power, in expectation) and return (Y, noise precision)."""
    if np.isposinf(snr_db):
        return clean.copy(), np.inf
    snr = 10.0 ** (snr_db / 10.0)
    if not snr > 0.0:
        raise ValueError("linear SNR must be positive")
    power = float(np.sum(clean**2))
    if power == 0.0:
        raise ValueError("clean signal is identically zero; SNR undefined")
    beta_true = snr * clean.size / power
    rng = rng_from(seed)
    Y = clean + rng.standard_normal(clean.shape) / np.sqrt(beta_true)
    return Y, beta_true


def gen_instance(mspec: MatrixSpec, sspec: SignalSpec, snr_db: float, seed: int) -> ProblemInstance:
    """Full trial: matrix, signal and noisy measurements from one seed."""
    if mspec.cols != sspec.length:
        raise ValueError("matrix cols and signal length disagree")
    A = gen_matrix(mspec, seed=derive_seed(seed, 0))
    X, support = gen_signal(sspec, seed=derive_seed(seed, 1))
    Y, beta_true = add_noise(A @ X, snr_db, seed=derive_seed(seed, 2))
    return ProblemInstance(A, X, Y, beta_true, support)


def unitary_transform(A: np.ndarray, Y: np.ndarray) -> TransformedModel:
    """Rotate (A, Y) by the left singular vectors of A.

    The rotation preserves column norms of Y and leaves the noise white.
    Zero singular values are kept (rows of Phi beyond the rank are zero),
    which the solvers tolerate through their guarded update forms.
    """
    if not np.any(A):
        raise ValueError("measurement matrix is identically zero")
    Y = Y[:, None] if Y.ndim == 1 else Y
    M, N = A.shape
    try:
        U, sv, Vt = np.linalg.svd(A, full_matrices=(M > N))
    except np.linalg.LinAlgError as e:
        raise np.linalg.LinAlgError(f"SVD of the measurement matrix failed: {e}") from e
    K = min(M, N)
    Phi = np.zeros((M, N))
    Phi[:K, :] = sv[:, None] * Vt[:K, :]
    lam = np.zeros(M)
    lam[:K] = sv**2
    r = U.T @ Y
    return TransformedModel(r=r, Phi=Phi, lam=lam, U=U)
