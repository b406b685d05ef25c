"""Polynomial reaction terms, their exact flows, and time stepping.

The reaction f is a polynomial with finite one-sided Lipschitz constant
(sup of f' over the real line).  That restricts the degree to 0, 1, or 3
with a negative cubic coefficient; the default is the bistable cubic
f(x) = x - x^3.

For drifts of the form f(x) = a1 x + a3 x^3 the flow of dx = f(x) dt is
known in closed form,

    Phi_t(x) = x e^{a1 t} / sqrt(1 - a3 x^2 g(t)),
    g(t) = (e^{2 a1 t} - 1) / a1   (g = 2t when a1 = 0),

with derivative Phi_t'(x) = e^{a1 t} (1 - a3 x^2 g)^{-3/2}.  Since
a3 <= 0 and g >= 0 the radicand never drops below 1, so the flow is
globally defined.  Affine drifts integrate elementarily; anything else
falls back to step-doubling RK4 with local error kept under 1e-12.

Three one-step maps advance the semidiscrete SPDE; all treat the nodal
state as columns of a batch:

* splitting: nodewise exact flow over dt, then semigroup decay plus the
  exactly sampled stochastic convolution;
* exponential Euler: increment form state + dt*f(state) through the same
  linear step;
* semi-implicit: (M + dt*S) x+ = M(x + dt f(x)) + load(dW), a banded
  solve with plain Wiener increments entering as a load vector.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .noise import CovarianceSpec, DiscreteNoiseModel

__all__ = [
    "PolynomialDrift",
    "SchemeConfig",
    "Integrator",
    "IntegrationError",
    "tangent_integrate",
]

SCHEMES = ("splitting_exact_flow", "exponential_euler", "semi_implicit")

OVERFLOW_LIMIT = 1.0e6

_RK4_LOCAL_TOL = 1e-12


class IntegrationError(RuntimeError):
    """A trajectory left the admissible range (overflow or non-finite)."""

    def __init__(self, message: str, step: int):
        super().__init__(f"{message} at step {step}")
        self.step = step


class PolynomialDrift:
    """Polynomial reaction term with a global upper bound on f'.

    ``coeffs`` are ascending, (a0, a1, ..., aK).  Admissible degrees are
    0 and 1 (f' constant) and 3 with a3 < 0 (f' concave, maximum at the
    vertex).  Even degrees and positive cubics have sup f' = infinity
    and are rejected.
    """

    def __init__(self, coeffs):
        c = np.atleast_1d(np.asarray(coeffs, dtype=float))
        if c.ndim != 1 or c.size == 0 or not np.all(np.isfinite(c)):
            raise ValueError("coefficients must be a finite 1-d sequence")
        while c.size > 1 and c[-1] == 0.0:
            c = c[:-1]
        degree = c.size - 1
        if degree >= 5:
            raise ValueError("polynomial degree must stay below 5")
        if degree in (2, 4):
            raise ValueError(
                "one-sided Lipschitz violated: even-degree reaction has "
                "unbounded derivative")
        if degree == 3 and c[3] >= 0.0:
            raise ValueError(
                "one-sided Lipschitz violated: cubic coefficient must be "
                "negative")
        self.coeffs = tuple(c)
        self.degree = degree
        self._deriv_coeffs = tuple(np.polynomial.polynomial.polyder(c))
        if degree <= 1:
            self.one_sided_constant = float(c[1]) if degree == 1 else 0.0
        else:
            a1, a2, a3 = c[1], c[2], c[3]
            # vertex of the downward parabola f'(x) = 3 a3 x^2 + 2 a2 x + a1
            self.one_sided_constant = float(a1 - a2 ** 2 / (3.0 * a3))

    @classmethod
    def allen_cahn(cls) -> "PolynomialDrift":
        return cls((0.0, 1.0, 0.0, -1.0))

    @classmethod
    def zero(cls) -> "PolynomialDrift":
        return cls((0.0,))

    @classmethod
    def linear(cls, rate: float) -> "PolynomialDrift":
        return cls((0.0, float(rate)))

    def __repr__(self) -> str:
        return f"PolynomialDrift(coeffs={self.coeffs})"

    def __eq__(self, other) -> bool:
        if not isinstance(other, PolynomialDrift):
            return NotImplemented
        return self.coeffs == other.coeffs

    def __hash__(self) -> int:
        return hash(self.coeffs)

    def __call__(self, x):
        return np.polynomial.polynomial.polyval(x, self.coeffs)

    def derivative(self, x):
        return np.polynomial.polynomial.polyval(x, self._deriv_coeffs)

    @property
    def _has_closed_flow(self) -> bool:
        if self.degree <= 1:
            return True
        return self.coeffs[0] == 0.0 and self.coeffs[2] == 0.0

    def flow(self, t: float, x):
        """Value of the ODE flow Phi_t(x), elementwise in x."""
        return self.flow_with_derivative(t, x)[0]

    def flow_with_derivative(self, t: float, x):
        """(Phi_t(x), d/dx Phi_t(x)) as arrays shaped like x."""
        if t < 0.0:
            raise ValueError("flow time must be nonnegative")
        x = np.asarray(x, dtype=float)
        if t == 0.0:
            return x.copy(), np.ones_like(x)
        if not self._has_closed_flow:
            return self._rk4_flow(t, x)
        if self.degree <= 1:
            a0 = self.coeffs[0]
            a1 = self.coeffs[1] if self.degree == 1 else 0.0
            growth = math.exp(a1 * t)
            shift = a0 * (math.expm1(a1 * t) / a1 if a1 != 0.0 else t)
            return x * growth + shift, np.full_like(x, growth)
        a1, a3 = self.coeffs[1], self.coeffs[3]
        g = math.expm1(2.0 * a1 * t) / a1 if a1 != 0.0 else 2.0 * t
        growth = math.exp(a1 * t)
        radicand = 1.0 - a3 * g * x * x
        inv_root = 1.0 / np.sqrt(radicand)
        return x * growth * inv_root, growth * inv_root / radicand

    def psi(self, dt: float, x):
        """Regularized drift (Phi_dt(x) - x)/dt, equal to f at dt = 0."""
        if dt < 0.0:
            raise ValueError("regularization time must be nonnegative")
        x = np.asarray(x, dtype=float)
        if dt == 0.0:
            return self(x)
        return (self.flow(dt, x) - x) / dt

    def _rk4_flow(self, t: float, x: np.ndarray):
        """Step-doubling RK4 for the flow and its x-derivative.

        Integrates the augmented system y' = f(y), d' = f'(y) d with a
        shared adaptive step across all entries; the one-sided bound
        keeps trajectories from escaping, so the stepper always lands.
        """
        y = x.astype(float).copy()
        d = np.ones_like(y)
        remaining = float(t)
        scale = 1.0 + abs(self.one_sided_constant) \
            + float(np.abs(self.derivative(y)).max(initial=0.0))
        dt = min(remaining, 0.1 / scale)
        for _ in range(100_000):
            if remaining <= 0.0:
                return y, d
            dt = min(dt, remaining)
            y_full, d_full = self._rk4_step(y, d, dt)
            y_half, d_half = self._rk4_step(y, d, 0.5 * dt)
            y_two, d_two = self._rk4_step(y_half, d_half, 0.5 * dt)
            err_scale = np.maximum(1.0, np.abs(y_two))
            err = float(np.max(np.abs(y_two - y_full) / err_scale))
            if err < _RK4_LOCAL_TOL:
                y = y_two + (y_two - y_full) / 15.0
                d = d_two + (d_two - d_full) / 15.0
                remaining -= dt
            factor = 0.9 * (_RK4_LOCAL_TOL / max(err, 1e-300)) ** 0.2
            dt *= min(4.0, max(0.2, factor))
        raise RuntimeError("flow integration failed to converge")

    def _rk4_step(self, y, d, dt):
        k1, l1 = self(y), self.derivative(y) * d
        y2 = y + 0.5 * dt * k1
        k2 = self(y2)
        l2 = self.derivative(y2) * (d + 0.5 * dt * l1)
        y3 = y + 0.5 * dt * k2
        k3 = self(y3)
        l3 = self.derivative(y3) * (d + 0.5 * dt * l2)
        y4 = y + dt * k3
        k4 = self(y4)
        l4 = self.derivative(y4) * (d + dt * l3)
        y_new = y + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        d_new = d + (dt / 6.0) * (l1 + 2.0 * l2 + 2.0 * l3 + l4)
        return y_new, d_new


@dataclass(frozen=True)
class SchemeConfig:
    """Which one-step map to use, and its uniform time grid."""

    scheme: str
    dt: float
    n_steps: int

    def __post_init__(self) -> None:
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}; "
                             f"choose one of {SCHEMES}")
        if not self.dt > 0.0:
            raise ValueError("dt must be positive")
        if self.n_steps < 0:
            raise ValueError("n_steps must be nonnegative")

    @property
    def horizon(self) -> float:
        return self.dt * self.n_steps


def _scale_columns(factors: np.ndarray, coeffs: np.ndarray) -> np.ndarray:
    if coeffs.ndim == 1:
        return factors * coeffs
    return factors[:, None] * coeffs


class Integrator:
    """One-step maps for the semidiscrete equation, batched over columns.

    With ``covariance=None`` the dynamics are deterministic.  Otherwise a
    spectral basis must be supplied: the exponential-family schemes draw
    the exact stochastic convolution through a :class:`DiscreteNoiseModel`,
    while the semi-implicit scheme draws plain mode increments and applies
    them as a load vector.
    """

    def __init__(self, space, drift: PolynomialDrift, config: SchemeConfig,
                 covariance: CovarianceSpec | None = None, basis=None):
        self.space = space
        self.drift = drift
        self.config = config
        self.dt = config.dt
        self._decay = np.exp(-space.eigenvalues * config.dt)
        self._noise_model = None
        self._load_matrix = None
        if covariance is not None:
            if basis is None:
                raise ValueError("sampling noise requires a spectral basis")
            if config.scheme == "semi_implicit":
                coupling = space.coupling(basis)[:, :covariance.k_trunc]
                amp = np.sqrt(covariance.weights * config.dt)
                self._load_matrix = coupling * amp
            else:
                self._noise_model = DiscreteNoiseModel(
                    space, basis, covariance, config.dt)
        if config.scheme == "semi_implicit":
            # prime the banded Cholesky factor of M + dt*S
            space.solve_shifted(config.dt, np.zeros(space.n))

    def drift_substep(self, state: np.ndarray) -> np.ndarray:
        """The nonlinear half of the step, nodewise and noise-free."""
        state = np.asarray(state, dtype=float)
        if self.config.scheme == "splitting_exact_flow":
            return self.drift.flow(self.dt, state)
        return state + self.dt * self.drift(state)

    def linear_substep(self, state: np.ndarray,
                       generator: np.random.Generator | None) -> np.ndarray:
        """Semigroup decay plus the exact convolution increment."""
        if self._noise_model is not None:
            if generator is None:
                raise ValueError("stochastic step requires a generator")
            return self._noise_model.step(state, generator)
        coeffs = self.space.to_eigen(np.asarray(state, dtype=float))
        return self.space.from_eigen(_scale_columns(self._decay, coeffs))

    def step(self, state: np.ndarray,
             generator: np.random.Generator | None = None) -> np.ndarray:
        if self.config.scheme == "semi_implicit":
            return self._step_semi_implicit(state, generator)
        return self.linear_substep(self.drift_substep(state), generator)

    def step_with_eigen_noise(self, state: np.ndarray,
                              noise_eigen: np.ndarray) -> np.ndarray:
        """Deterministic step plus a caller-supplied convolution increment.

        ``noise_eigen`` must be the integrated noise for this step in
        discrete eigen coordinates; coupled multi-mesh studies build it
        from one shared amplitude path and pass it in per mesh.
        """
        if self.config.scheme == "semi_implicit":
            raise ValueError(
                "eigen-coordinate noise applies to the exponential-family "
                "schemes only")
        flowed = self.drift_substep(state)
        coeffs = self.space.to_eigen(flowed)
        coeffs = _scale_columns(self._decay, coeffs) + noise_eigen
        return self.space.from_eigen(coeffs)

    def _step_semi_implicit(self, state, generator):
        state = np.asarray(state, dtype=float)
        rhs = self.space.mass @ (state + self.dt * self.drift(state))
        if self._load_matrix is not None:
            if generator is None:
                raise ValueError("stochastic step requires a generator")
            shape = self._load_matrix.shape[1:2] + state.shape[1:]
            rhs = rhs + self._load_matrix @ generator.standard_normal(shape)
        return self.space.solve_shifted(self.dt, rhs)

    def run(self, x0: np.ndarray,
            generator: np.random.Generator | None = None, *,
            keep_checkpoints: bool = False):
        """Advance x0 over the configured grid, guarding against overflow.

        Returns the final state, or (final, checkpoints) where the
        checkpoint list holds the state after every step, starting with
        a copy of x0.
        """
        state = np.array(x0, dtype=float, copy=True)
        checkpoints = [state.copy()] if keep_checkpoints else None
        for index in range(self.config.n_steps):
            state = self.step(state, generator)
            if not np.all(np.isfinite(state)):
                raise IntegrationError("non-finite state", index)
            if np.abs(state).max(initial=0.0) > OVERFLOW_LIMIT:
                raise IntegrationError("state overflow", index)
            if keep_checkpoints:
                checkpoints.append(state.copy())
        if keep_checkpoints:
            return state, checkpoints
        return state


def tangent_integrate(integrator: Integrator, checkpoints, start_step: int,
                      direction: np.ndarray) -> np.ndarray:
    """Propagate a perturbation along a frozen trajectory.

    ``checkpoints`` must contain the base state at every step (as produced
    by :meth:`Integrator.run` with ``keep_checkpoints=True``); the tangent
    starts at ``direction`` at time ``start_step * dt`` and is pushed
    forward by the exact Jacobian of the chosen one-step map, so a
    finite-difference quotient of two coupled trajectories reproduces it
    to the quotient's own truncation error.
    """
    config = integrator.config
    if len(checkpoints) != config.n_steps + 1:
        raise ValueError("base trajectory must be checkpointed at every "
                         f"step: expected {config.n_steps + 1} states, "
                         f"got {len(checkpoints)}")
    if not 0 <= start_step <= config.n_steps:
        raise ValueError("start step outside the trajectory")
    space, drift, dt = integrator.space, integrator.drift, integrator.dt
    eta = np.array(direction, dtype=float, copy=True)
    for index in range(start_step, config.n_steps):
        base = checkpoints[index]
        if config.scheme == "splitting_exact_flow":
            jac = drift.flow_with_derivative(dt, base)[1]
        else:
            jac = 1.0 + dt * drift.derivative(base)
        scaled = jac * eta
        if config.scheme == "semi_implicit":
            eta = space.solve_shifted(dt, space.mass @ scaled)
        else:
            coeffs = space.to_eigen(scaled)
            eta = space.from_eigen(_scale_columns(integrator._decay, coeffs))
    return eta
