"""Q-Wiener noise models diagonal in the sine basis.

The covariance operator acts mode by mode, Q e_k = q_k e_k, with three
weight families: a power-law decay q_k = k^(-rho), spatial white noise
q_k = 1, and a user-supplied sequence.  Increments are sampled in the
continuous eigenbasis so that one Brownian path can drive several meshes
at once; projection onto a finite element space is a mass solve against
the precomputed coupling matrix.

The stochastic convolution Z(t) = int_0^t e^{-A_h(t-s)} P_h dW(s) is an
Ornstein-Uhlenbeck process in the discrete eigenbasis.  Its one-step
covariance has the closed form

    C_ij = (sum_k q_k b_ik b_jk) * (1 - e^{-(l_i+l_j) dt}) / (l_i + l_j)

with b_ik the overlap of sine mode k with discrete eigenvector i, so a
step of any size is sampled exactly (no temporal discretization error).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "CovarianceSpec",
    "NoiseIncrementBatch",
    "DiscreteNoiseModel",
    "implied_beta",
    "sample_increments",
    "project_increment",
    "convolution_step",
]


@dataclass(frozen=True)
class CovarianceSpec:
    """Diagonal covariance of the driving Wiener process.

    ``beta`` is the spatial regularity index in (0, 1]: the largest
    exponent such that sum_k lambda_k^(b-1) q_k converges for every
    b < beta.  ``beta_attained`` records whether the series still
    converges at beta itself (true exactly when rho > 1, so white noise
    and the rho = 1 boundary sit strictly below their index).
    """

    kind: str
    k_trunc: int
    rho: float | None = None
    custom_weights: tuple[float, ...] | None = None
    beta: float = field(init=False, default=0.0)
    beta_attained: bool = field(init=False, default=False)

    def __post_init__(self) -> None:
        if self.kind not in ("power_decay", "white", "custom"):
            raise ValueError(f"unknown covariance kind {self.kind!r}")
        if self.k_trunc < 1:
            raise ValueError("k_trunc must be a positive integer")
        if self.kind == "power_decay":
            if self.rho is None or self.rho <= 0.0:
                raise ValueError("power_decay requires rho > 0")
        elif self.rho is not None:
            raise ValueError("rho is only meaningful for power_decay")
        if self.kind == "custom":
            if self.custom_weights is None:
                raise ValueError("custom kind requires a weight sequence")
            w = np.asarray(self.custom_weights, dtype=float)
            if w.shape != (self.k_trunc,):
                raise ValueError("custom weights must have length k_trunc")
            if not np.all(np.isfinite(w)) or np.any(w < 0.0):
                raise ValueError("custom weights must be finite and >= 0")
        elif self.custom_weights is not None:
            raise ValueError("weights are only meaningful for custom kind")
        if self.kind != "custom":
            beta, attained = implied_beta(self)
            object.__setattr__(self, "beta", beta)
            object.__setattr__(self, "beta_attained", attained)

    @classmethod
    def power_decay(cls, rho: float, k_trunc: int = 4096) -> "CovarianceSpec":
        return cls(kind="power_decay", k_trunc=k_trunc, rho=rho)

    @classmethod
    def white(cls, k_trunc: int = 4096) -> "CovarianceSpec":
        return cls(kind="white", k_trunc=k_trunc)

    @classmethod
    def custom(cls, weights, beta: float) -> "CovarianceSpec":
        """Explicit weights; the caller must supply the regularity index."""
        weights = tuple(float(w) for w in np.asarray(weights, dtype=float))
        spec = cls(kind="custom", k_trunc=len(weights), custom_weights=weights)
        if not 0.0 < beta <= 1.0:
            raise ValueError("beta must lie in (0, 1]")
        object.__setattr__(spec, "beta", float(beta))
        return spec

    @property
    def weights(self) -> np.ndarray:
        k = np.arange(1, self.k_trunc + 1, dtype=float)
        if self.kind == "power_decay":
            return k ** (-self.rho)
        if self.kind == "white":
            return np.ones(self.k_trunc)
        return np.asarray(self.custom_weights, dtype=float)

    @property
    def is_trace_class(self) -> bool:
        """Whether the untruncated series sum_k q_k converges.

        Decided from the exponent, not from partial sums: k^(-rho) is
        summable exactly when rho > 1, and white noise never is.  Custom
        sequences are finite by construction, so they qualify.
        """
        if self.kind == "power_decay":
            return self.rho > 1.0
        if self.kind == "white":
            return False
        return True


def implied_beta(spec: CovarianceSpec) -> tuple[float, bool]:
    """Regularity index implied by the weight decay, with attainment flag.

    With lambda_k growing like k^2, the series sum_k lambda_k^(b-1) q_k
    for q_k = k^(-rho) behaves like sum k^(2b-2-rho), which converges
    exactly when b < (rho+1)/2.  The index is capped at 1.  White noise
    is the rho = 0 member of the family: index 1/2, never attained.
    """
    if spec.kind == "custom":
        raise ValueError("custom weights carry no implied index; "
                         "pass beta explicitly")
    rho = 0.0 if spec.kind == "white" else float(spec.rho)
    return min(1.0, (rho + 1.0) / 2.0), rho > 1.0


@dataclass(frozen=True)
class NoiseIncrementBatch:
    """Mode amplitudes of Wiener increments over consecutive steps.

    ``increments[k, n]`` is the amplitude of sine mode k+1 over step n,
    distributed N(0, q_k dt), independent across modes and steps.
    """

    dt: float
    increments: np.ndarray

    @property
    def n_steps(self) -> int:
        return self.increments.shape[1]


def sample_increments(spec: CovarianceSpec, dt: float, n_steps: int,
                      generator: np.random.Generator) -> NoiseIncrementBatch:
    """Draw a (k_trunc, n_steps) matrix of independent mode increments."""
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    if n_steps < 1:
        raise ValueError("n_steps must be a positive integer")
    scale = np.sqrt(spec.weights * dt)
    z = generator.standard_normal((spec.k_trunc, n_steps))
    return NoiseIncrementBatch(dt=float(dt), increments=scale[:, None] * z)


def project_increment(space, basis, amplitudes: np.ndarray) -> np.ndarray:
    """L2-project a sine-mode amplitude vector onto the element space.

    Accepts a vector of length k <= basis.k_max, or a (k, batch) matrix;
    costs one coupling product and one mass solve.
    """
    amplitudes = np.asarray(amplitudes, dtype=float)
    k = amplitudes.shape[0]
    if k > basis.k_max:
        raise ValueError("more amplitudes than basis modes")
    load = space.coupling(basis)[:, :k] @ amplitudes
    return space.solve_mass(load)


class DiscreteNoiseModel:
    """Exact sampler of the discretized stochastic convolution.

    Precomputes, for a fixed (space, covariance, dt) triple, everything
    needed to advance Z by one step in the discrete eigenbasis: the decay
    factors e^{-l_i dt} and a Cholesky factor of the one-step covariance.
    The covariance keeps its full off-diagonal structure; the projected
    covariance does not commute with the discrete operator in general.
    """

    def __init__(self, space, basis, spec: CovarianceSpec, dt: float):
        if dt <= 0.0:
            raise ValueError("dt must be positive")
        if spec.k_trunc > basis.k_max:
            raise ValueError("basis has fewer modes than k_trunc")
        self.space = space
        self.spec = spec
        self.dt = float(dt)
        lam = space.eigenvalues
        b = space.mode_overlap(basis)[:, :spec.k_trunc]
        self.mode_covariance = (b * spec.weights) @ b.T
        pair_sum = lam[:, None] + lam[None, :]
        kernel = -np.expm1(-pair_sum * self.dt) / pair_sum
        self.step_covariance = self.mode_covariance * kernel
        self.decay = np.exp(-lam * self.dt)
        self._chol = _regularized_cholesky(self.step_covariance)

    @property
    def stationary_variance(self) -> np.ndarray:
        """Per-mode variance of Z in the long-time limit."""
        lam = self.space.eigenvalues
        return np.diag(self.mode_covariance) / (2.0 * lam)

    def gaussian_in_eigen(self, generator: np.random.Generator,
                          batch: int | None = None) -> np.ndarray:
        """One step's convolution noise, in discrete eigen coordinates."""
        if batch is None:
            return self._chol @ generator.standard_normal(self.space.n)
        return self._chol @ generator.standard_normal((self.space.n, batch))

    def step(self, state: np.ndarray,
             generator: np.random.Generator) -> np.ndarray:
        """Advance nodal state by dt under decay plus convolution noise."""
        state = np.asarray(state, dtype=float)
        coeffs = self.space.to_eigen(state)
        batch = None if coeffs.ndim == 1 else coeffs.shape[1]
        noise = self.gaussian_in_eigen(generator, batch)
        if coeffs.ndim == 1:
            coeffs = self.decay * coeffs + noise
        else:
            coeffs = self.decay[:, None] * coeffs + noise
        return self.space.from_eigen(coeffs)


def convolution_step(model: DiscreteNoiseModel, state: np.ndarray,
                     generator: np.random.Generator) -> np.ndarray:
    """Functional alias for :meth:`DiscreteNoiseModel.step`."""
    return model.step(state, generator)


def _regularized_cholesky(matrix: np.ndarray) -> np.ndarray:
    """Cholesky with a diagonal jitter ladder capped at 1e-14 * trace.

    The matrix is positive semidefinite in exact arithmetic (a Schur
    product of two PSD factors), so only roundoff-scale regularization
    is ever legitimate.  Failure beyond the cap is reported, not patched.
    """
    trace = float(np.trace(matrix))
    if not math.isfinite(trace) or trace < 0.0:
        raise np.linalg.LinAlgError("covariance trace is not finite")
    if trace == 0.0:
        return np.zeros_like(matrix)
    jitter = 0.0
    eye = np.eye(matrix.shape[0])
    while True:
        try:
            return np.linalg.cholesky(matrix + jitter * eye)
        except np.linalg.LinAlgError:
            if jitter == 0.0:
                jitter = 1e-16 * trace
            else:
                jitter *= 4.0
            if jitter > 1e-14 * trace:
                raise np.linalg.LinAlgError(
                    "step covariance not PSD within 1e-14 * trace jitter")
