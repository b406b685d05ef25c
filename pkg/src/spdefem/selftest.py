"""Built-in verification battery for a fresh checkout.

Each check exercises one hand-derivable fact against an independent
computation: closed-form discrete eigenvalues, the reaction flow against
a Runge-Kutta oracle, the convolution covariance composition law, the
known deterministic approximation rates, a Gaussian closed form for the
weak estimator, the tangent process against finite differences, and the
byte-level determinism contract.  The battery is what the ``selftest``
command runs; it finishes in well under a minute on one core.

Checks return nothing on success and raise on failure; the runner
collects per-check status and timing.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from .dynamics import Integrator, PolynomialDrift, SchemeConfig, \
    tangent_integrate
from .experiments import (StudyConfig, default_initial_profile, fit_rate,
                          linear_weak_reference, run_strong_study,
                          run_weak_study)
from .fem import FemSpace, operator_error_norm, uniform_mesh
from .noise import CovarianceSpec, DiscreteNoiseModel
from .rng import substream
from .spectral import SpectralBasis

__all__ = ["SelfTestResult", "run_selftest"]


@dataclass
class SelfTestResult:
    name: str
    passed: bool
    detail: str
    seconds: float


def _rk4(f, t, x, n_steps):
    y = np.asarray(x, dtype=float).copy()
    dt = t / n_steps
    for _ in range(n_steps):
        k1 = f(y)
        k2 = f(y + 0.5 * dt * k1)
        k3 = f(y + 0.5 * dt * k2)
        k4 = f(y + dt * k3)
        y = y + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return y


def _check(condition: bool, detail: str) -> None:
    if not condition:
        raise AssertionError(detail)


def check_discrete_eigenvalues_closed_form() -> None:
    """Uniform-mesh pencil eigenvalues against the hand formula
    (6/h^2) (1 - cos(i pi h)) / (2 + cos(i pi h))."""
    for n in (8, 16, 37):
        space = FemSpace(uniform_mesh(n))
        h = 1.0 / n
        i = np.arange(1, n)
        c = np.cos(i * np.pi * h)
        expected = (6.0 / h ** 2) * (1.0 - c) / (2.0 + c)
        gap = np.abs(space.eigenvalues - expected).max()
        _check(gap < 1e-9 * expected[-1],
               f"n={n}: eigenvalue mismatch {gap:.3e}")
        continuous = (i * np.pi) ** 2
        _check(np.all(space.eigenvalues >= continuous * (1.0 - 1e-12)),
               f"n={n}: discrete eigenvalue below its continuous partner")


def check_flow_against_rk4() -> None:
    """Closed-form reaction flow versus a fine Runge-Kutta integration."""
    drift = PolynomialDrift.allen_cahn()
    x = np.linspace(-2.0, 2.0, 41)
    for t in (0.1, 0.5, 1.0):
        oracle = _rk4(drift, t, x, 20000)
        gap = np.abs(drift.flow(t, x) - oracle).max()
        _check(gap < 1e-9, f"t={t}: flow differs from RK4 by {gap:.3e}")


def check_flow_derivative_bounds() -> None:
    """Monotonicity: 0 <= d/dx Phi_t(x) <= exp(L t) for the one-sided
    Lipschitz constant L."""
    drift = PolynomialDrift.allen_cahn()
    x = np.linspace(-3.0, 3.0, 601)
    for t in (0.05, 0.25, 1.0):
        _, deriv = drift.flow_with_derivative(t, x)
        _check(deriv.min() >= 0.0, f"t={t}: negative flow derivative")
        bound = math.exp(drift.one_sided_constant * t) * (1.0 + 1e-6)
        _check(deriv.max() <= bound,
               f"t={t}: flow derivative {deriv.max():.6f} above "
               f"exp(Lt)={bound:.6f}")


def check_covariance_composition() -> None:
    """One-step convolution covariance over 2 dt equals the decayed
    composition of two dt steps."""
    space = FemSpace(uniform_mesh(24))
    basis = SpectralBasis(k_max=128)
    spec = CovarianceSpec.power_decay(2.0, k_trunc=128)
    dt = 0.05
    single = DiscreteNoiseModel(space, basis, spec, dt)
    double = DiscreteNoiseModel(space, basis, spec, 2.0 * dt)
    decay = single.decay
    composed = decay[:, None] * single.step_covariance * decay[None, :] \
        + single.step_covariance
    gap = np.abs(double.step_covariance - composed).max()
    scale = np.abs(double.step_covariance).max()
    _check(gap < 1e-12 * max(scale, 1.0),
           f"covariance composition violated by {gap:.3e}")


def check_truncation_tail() -> None:
    """Default mode counts keep the discarded covariance trace under
    0.1% of the full series."""
    for rho, k_trunc in ((2.0, 1024), (2.0, 2048), (3.0, 512)):
        spec = CovarianceSpec.power_decay(rho, k_trunc=k_trunc)
        kept = float(spec.weights.sum())
        tail_bound = k_trunc ** (1.0 - rho) / (rho - 1.0)
        fraction = tail_bound / (kept + tail_bound)
        _check(fraction < 1e-3,
               f"rho={rho}, k_trunc={k_trunc}: trace tail fraction "
               f"{fraction:.2e}")


def check_projection_rates() -> None:
    """Deterministic operator approximation orders 2 (L2), 1 (Ritz in
    the energy norm), and 1 (L2 from H1 data)."""
    widths = [2.0 ** -k for k in range(3, 7)]
    basis = SpectralBasis(k_max=512)
    cases = ((0.0, 2.0, "l2", 2.0), (1.0, 2.0, "ritz", 1.0),
             (0.0, 1.0, "l2", 1.0))
    for s, r, which, expected in cases:
        points = []
        for h in widths:
            space = FemSpace(uniform_mesh(round(1.0 / h)))
            points.append((h, operator_error_norm(space, basis, s, r,
                                                  which), 0.0))
        slope = fit_rate(points).slope
        _check(abs(slope - expected) < 0.1,
               f"({s},{r},{which}): slope {slope:.3f}, expected "
               f"{expected}")


def check_rate_fit_exact() -> None:
    """The regression recovers exact power laws to round-off."""
    for order in (1.0, 2.0):
        levels = [(h, 2.5 * h ** order, 0.0)
                  for h in (0.5, 0.25, 0.125, 0.0625)]
        slope = fit_rate(levels).slope
        _check(abs(slope - order) < 1e-10,
               f"order {order}: fitted {slope}")


def check_deterministic_semigroup_rate() -> None:
    """Noise and drift off, first-eigenmode start: the coupled strong
    study must measure the order-2 semigroup rate with zero variance."""
    cfg = StudyConfig(
        kind="strong",
        covariance=CovarianceSpec.custom(np.zeros(8), beta=1.0),
        drift=PolynomialDrift.zero(),
        levels=(2.0 ** -3, 2.0 ** -4, 2.0 ** -5),
        h_ref=2.0 ** -7, horizon=0.5, dt_ref=2.0 ** -3,
        samples=100, batch_size=100, x0="mode1", seed=0)
    report = run_strong_study(cfg)
    _check(abs(report.slope - 2.0) < 0.1,
           f"semigroup slope {report.slope:.3f}, expected 2")
    _check(max(lv.stderr for lv in report.levels) < 1e-14,
           "deterministic study produced nonzero variance")


def check_weak_gaussian_oracle(seed: int) -> None:
    """With the reaction off, the mode-pairing observable is Gaussian
    and every level mean has a closed form."""
    cov = CovarianceSpec.power_decay(2.0, k_trunc=128)
    cfg = StudyConfig(
        kind="weak", covariance=cov, drift=PolynomialDrift.zero(),
        levels=(2.0 ** -2, 2.0 ** -3, 2.0 ** -4), h_ref=2.0 ** -6,
        horizon=0.5, dt_ref=2.0 ** -4, samples=200, batch_size=100,
        functional="cos_mode_1", seed=seed)
    report = run_weak_study(cfg)
    basis = SpectralBasis(k_max=cov.k_trunc)
    for entry in report.functional_means:
        space = FemSpace(uniform_mesh(round(1.0 / entry["h"])))
        x0 = default_initial_profile(space.mesh.interior, 1.0)
        oracle = linear_weak_reference(space, basis, cov, x0, cfg.horizon)
        z = abs(entry["mean"] - oracle) / entry["stderr"]
        _check(z < 4.0,
               f"h={entry['h']}: mean is {z:.1f} standard errors from "
               "the Gaussian value")


def _random_smooth_field(space, gen, n_modes: int = 8) -> np.ndarray:
    """Random combination of the first sine modes, amplitudes ~ 1/k.

    Rough (nodal-white) directions are nearly annihilated by the
    semigroup, which turns a relative tangent comparison into 0/0;
    colored directions keep the tangent well away from zero while still
    randomizing over the low-frequency content that survives.
    """
    modes = np.arange(1, n_modes + 1)
    amplitudes = gen.standard_normal(n_modes) / modes
    return np.sin(np.outer(space.mesh.interior, modes) * np.pi) @ amplitudes


def check_tangent_against_finite_difference(seed: int) -> None:
    """Perturb-and-rerun with common noise against the tangent process."""
    space = FemSpace(uniform_mesh(16))
    basis = SpectralBasis(k_max=64)
    cov = CovarianceSpec.power_decay(2.0, k_trunc=64)
    scheme = SchemeConfig("splitting_exact_flow", dt=2.0 ** -6, n_steps=16)
    integ = Integrator(space, PolynomialDrift.allen_cahn(), scheme,
                       covariance=cov, basis=basis)
    eps = 1e-5
    for trial in range(3):
        gen = substream(seed + trial, purpose="selftest-dir")
        x0 = 0.8 * np.sin(np.pi * space.mesh.interior) \
            + 0.5 * _random_smooth_field(space, gen)
        y = _random_smooth_field(space, gen)
        y /= space.l2_norm(y)
        base, ckpts = integ.run(
            x0, substream(seed + trial, purpose="selftest-noise"),
            keep_checkpoints=True)
        eta = tangent_integrate(integ, ckpts, 0, y)
        bumped = integ.run(
            x0 + eps * y, substream(seed + trial, purpose="selftest-noise"))
        rel = space.l2_norm((bumped - base) / eps - eta) / space.l2_norm(eta)
        _check(rel < 1e-4,
               f"trial {trial}: finite-difference gap {rel:.2e}")


def check_determinism(seed: int, workers: int) -> None:
    """Same config and seed: byte-identical CSV, any worker count."""
    cfg = StudyConfig(
        kind="strong",
        covariance=CovarianceSpec.power_decay(2.0, k_trunc=64),
        drift=PolynomialDrift.allen_cahn(),
        levels=(2.0 ** -2, 2.0 ** -3, 2.0 ** -4), h_ref=2.0 ** -6,
        horizon=0.25, dt_ref=2.0 ** -4, samples=200, batch_size=100,
        seed=seed)
    first = run_strong_study(cfg).to_csv()
    again = run_strong_study(cfg).to_csv()
    _check(first == again, "rerun changed the CSV bytes")
    if workers > 1:
        forked = run_strong_study(cfg, workers=workers).to_csv()
        _check(first == forked,
               f"workers={workers} changed the CSV bytes")


def run_selftest(seed: int = 0, workers: int = 2) -> list[SelfTestResult]:
    """Run the whole battery; failures are collected, not raised."""
    battery = [
        ("discrete_eigenvalues_closed_form",
         check_discrete_eigenvalues_closed_form),
        ("flow_against_rk4", check_flow_against_rk4),
        ("flow_derivative_bounds", check_flow_derivative_bounds),
        ("covariance_composition", check_covariance_composition),
        ("truncation_tail", check_truncation_tail),
        ("projection_rates", check_projection_rates),
        ("rate_fit_exact", check_rate_fit_exact),
        ("deterministic_semigroup_rate", check_deterministic_semigroup_rate),
        ("weak_gaussian_oracle", lambda: check_weak_gaussian_oracle(seed)),
        ("tangent_against_finite_difference",
         lambda: check_tangent_against_finite_difference(seed)),
        ("determinism", lambda: check_determinism(seed, workers)),
    ]
    results = []
    for name, check in battery:
        start = time.perf_counter()
        try:
            check()
        except Exception as exc:  # report, never crash the battery
            outcome = SelfTestResult(name, False, str(exc),
                                     time.perf_counter() - start)
        else:
            outcome = SelfTestResult(name, True, "",
                                     time.perf_counter() - start)
        results.append(outcome)
    return results
