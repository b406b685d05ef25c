"""Monte-Carlo rate studies: strong, weak, temporal, moment, operator.

Coupled estimation is the load-bearing idea.  All meshes in a study are
driven by the same Wiener path, so per-sample differences measure
discretization error rather than independent noise.  The coupling is
sampled exactly: over a substep of length d the stacked convolution
increments of every mesh form one Gaussian vector whose cross-blocks are
closed-form,

    Cov(G^l_i, G^m_j)
        = (sum_k q_k b^l_ik b^m_jk)
          * (1 - e^{-(lam^l_i + lam^m_j) d}) / (lam^l_i + lam^m_j),

where b^l_ik is the overlap of noise mode k with eigenvector i of mesh l.
One Cholesky factor of that matrix yields every mesh's exact increment
per substep, and the identity G_[0,2d] = e^{-Lam d} G_[0,d] + G_[d,2d]
aggregates substeps without error, so coarse step sizes see exactly the
noise the fine grid saw.  A dt-halving probe rides on the same
randomness to bound the drift-splitting time error.

Determinism contract: samples are organized in fixed-size batches, all
randomness is keyed by (seed, batch index, substep index, purpose), and
reduction walks batches in index order.  Worker count therefore cannot
change any digit of a report.
"""

from __future__ import annotations

import hashlib
import json
import math
import multiprocessing
import re
import time
from dataclasses import dataclass

import numpy as np
from scipy.stats import t as _student_t

from .dynamics import (OVERFLOW_LIMIT, Integrator, PolynomialDrift,
                       SchemeConfig)
from .fem import FemSpace, L2Comparer, operator_error_norm, uniform_mesh
from .noise import CovarianceSpec, _regularized_cholesky
from .rng import substream
from .spectral import SpectralBasis

__all__ = [
    "StudyConfig",
    "RateReport",
    "MomentReport",
    "FitResult",
    "fit_rate",
    "run_strong_study",
    "run_weak_study",
    "run_splitting_dt_study",
    "run_moment_study",
    "run_operator_study",
    "run_study",
    "simulate_trajectory",
    "linear_weak_reference",
    "default_initial_profile",
    "evaluate_functional",
    "validate_functional_id",
    "growth_exponent",
    "envelope_exponent",
    "FUNCTIONALS",
]

STUDY_KINDS = ("strong", "weak", "moments", "operators", "splitting_dt")

NOISE_FLOOR_FACTOR = 4.0

_COS_MODE_PATTERN = re.compile(r"^cos_mode_([1-9][0-9]*)$")


# ---------------------------------------------------------------------------
# test functionals (bounded, with bounded first and second derivatives)

def _sq_l2_norm(space, nodal):
    v = space.l2_norm(nodal)
    return v * v


def _phi_exp_neg_sq(space, basis, nodal):
    """exp(-|x|^2): in C_b^2 since r e^{-r^2} and its slope are bounded."""
    return np.exp(-_sq_l2_norm(space, nodal))


def _phi_cos_mode(space, basis, nodal, mode=1):
    """cos(<x, e_mode>): bounded with all derivatives bounded."""
    pairing = space.coupling(basis)[:, mode - 1] @ nodal
    return np.cos(pairing)


def _phi_inv_one_plus_sq(space, basis, nodal):
    """1/(1 + |x|^2): bounded, derivatives decay at infinity."""
    return 1.0 / (1.0 + _sq_l2_norm(space, nodal))


FUNCTIONALS = {
    "exp_neg_sq_norm": _phi_exp_neg_sq,
    "cos_first_mode": _phi_cos_mode,
    "inv_one_plus_sq_norm": _phi_inv_one_plus_sq,
}


def validate_functional_id(name: str) -> None:
    if name in FUNCTIONALS or _COS_MODE_PATTERN.match(name):
        return
    raise ValueError(
        f"unknown functional {name!r}; bounded choices are "
        f"{sorted(FUNCTIONALS)} or cos_mode_<k>")


def evaluate_functional(name: str, space, basis, nodal):
    match = _COS_MODE_PATTERN.match(name)
    if match:
        return _phi_cos_mode(space, basis, nodal, mode=int(match.group(1)))
    return FUNCTIONALS[name](space, basis, nodal)


def default_initial_profile(points: np.ndarray, length: float) -> np.ndarray:
    """Smooth, sign-indefinite default initial condition."""
    return (np.sin(np.pi * points / length)
            + 0.5 * np.sin(2.0 * np.pi * points / length))


# ---------------------------------------------------------------------------
# configuration

@dataclass(frozen=True)
class StudyConfig:
    """Frozen description of one study; hashed into every report.

    ``dt_policy`` controls the drift step of tested levels in coupled
    studies: "fixed" steps everything at dt_ref, "h2beta" steps level h
    at max(dt_ref, h^{2 beta}) snapped to the dt_ref grid, the scaling
    the weak theory prescribes.  Weak studies default to "h2beta",
    everything else to "fixed".
    """

    kind: str
    covariance: CovarianceSpec
    drift: PolynomialDrift
    levels: tuple[float, ...] = ()
    h_ref: float | None = None
    dt_levels: tuple[float, ...] = ()
    dt_ref: float = 2.0 ** -8
    dt_policy: str | None = None
    samples: int = 400
    batch_size: int = 100
    p_order: int = 2
    functional: str = "exp_neg_sq_norm"
    scheme: str = "splitting_exact_flow"
    horizon: float = 1.0
    length: float = 1.0
    x0: str = "default"
    seed: int = 0
    operator_pairs: tuple = ((0.0, 2.0, "l2"), (1.0, 2.0, "ritz"),
                             (0.0, 1.0, "l2"))

    def __post_init__(self):
        if self.kind not in STUDY_KINDS:
            raise ValueError(f"unknown study kind {self.kind!r}")
        if self.dt_policy is None:
            object.__setattr__(self, "dt_policy",
                               "h2beta" if self.kind == "weak" else "fixed")
        if self.x0 not in ("default", "zero", "mode1"):
            raise ValueError("x0 must be 'default', 'zero' or 'mode1'")
        if self.dt_policy not in ("fixed", "h2beta"):
            raise ValueError("dt_policy must be 'fixed' or 'h2beta'")
        if self.horizon <= 0.0 or self.length <= 0.0:
            raise ValueError("horizon and length must be positive")
        if self.kind in ("strong", "weak", "moments", "splitting_dt"):
            if self.samples < 100:
                raise ValueError("Monte-Carlo studies need at least 100 "
                                 "samples")
            if not 1 <= self.batch_size <= self.samples:
                raise ValueError("batch_size must lie in [1, samples]")
            _check_grid(self.horizon, self.dt_ref, "dt_ref")
        if self.kind in ("strong", "weak", "moments", "operators"):
            if len(self.levels) < 3:
                raise ValueError("need at least 3 mesh levels to fit a rate")
            if any(h <= 0 for h in self.levels):
                raise ValueError("mesh widths must be positive")
            if list(self.levels) != sorted(set(self.levels), reverse=True):
                raise ValueError("mesh levels must be strictly decreasing")
        if self.kind in ("strong", "weak"):
            if self.h_ref is None:
                raise ValueError("coupled studies need a reference width")
            if not self.h_ref < min(self.levels) / 2.0:
                raise ValueError("reference width must be finer than half "
                                 "the smallest tested width")
            for ratio in self.step_ratios:
                if round(self.horizon / self.dt_ref) % ratio:
                    raise ValueError(
                        "h2beta step sizes must divide the horizon's "
                        "dt_ref grid evenly")
        if self.kind == "splitting_dt":
            if len(self.dt_levels) < 3:
                raise ValueError("need at least 3 step sizes to fit a rate")
            if list(self.dt_levels) != sorted(set(self.dt_levels),
                                              reverse=True):
                raise ValueError("step sizes must be strictly decreasing")
            if not self.dt_ref < min(self.dt_levels) / 2.0:
                raise ValueError("reference step must be finer than half "
                                 "the smallest tested step")
            if len(self.levels) != 1:
                raise ValueError("splitting_dt studies use exactly one mesh")
            for dt in self.dt_levels:
                _check_multiple(dt, self.dt_ref, "tested dt", "dt_ref")
        if self.kind == "weak":
            validate_functional_id(self.functional)
            if self.drift.degree == 2:
                raise ValueError("weak studies need an odd-degree reaction")
        if self.p_order < 1:
            raise ValueError("p_order must be at least 1")

    @property
    def step_ratios(self) -> tuple[int, ...]:
        """Per-level drift-step size as a multiple of dt_ref."""
        if self.dt_policy == "fixed" or self.kind not in ("strong", "weak"):
            return tuple(1 for _ in self.levels)
        beta = self.covariance.beta
        return tuple(
            max(1, round(h ** (2.0 * beta) / self.dt_ref))
            for h in self.levels)

    @property
    def config_hash(self) -> str:
        payload = {
            "kind": self.kind,
            "covariance": {
                "kind": self.covariance.kind,
                "k_trunc": self.covariance.k_trunc,
                "rho": self.covariance.rho,
                "weights": self.covariance.custom_weights,
            },
            "drift": list(self.drift.coeffs),
            "levels": list(self.levels),
            "h_ref": self.h_ref,
            "dt_levels": list(self.dt_levels),
            "dt_ref": self.dt_ref,
            "dt_policy": self.dt_policy,
            "samples": self.samples,
            "batch_size": self.batch_size,
            "p_order": self.p_order,
            "functional": self.functional,
            "scheme": self.scheme,
            "horizon": self.horizon,
            "length": self.length,
            "x0": self.x0,
            "operator_pairs": [list(p) for p in self.operator_pairs],
        }
        text = json.dumps(payload, sort_keys=True)
        return hashlib.sha256(text.encode()).hexdigest()[:16]

    @property
    def provenance(self) -> str:
        from . import __version__
        return f"spdefem-{__version__}+cfg.{self.config_hash}.s{self.seed}"


def _check_grid(horizon, dt, name):
    steps = horizon / dt
    if abs(steps - round(steps)) > 1e-9 or round(steps) < 1:
        raise ValueError(f"{name} must divide the horizon evenly")


def _check_multiple(coarse, fine, coarse_name, fine_name):
    ratio = coarse / fine
    if abs(ratio - round(ratio)) > 1e-9 or round(ratio) < 2:
        raise ValueError(f"every {coarse_name} must be an even multiple "
                         f"of {fine_name}")


# ---------------------------------------------------------------------------
# rate fitting

@dataclass(frozen=True)
class FitResult:
    slope: float
    ci_lo: float
    ci_hi: float
    used: tuple[bool, ...]


def fit_rate(levels) -> FitResult:
    """Weighted log-log regression of error against resolution.

    ``levels`` is a sequence of (h, error, stderr) triples.  A level is
    usable when its error clears the Monte-Carlo noise floor
    (error > 4 stderr, i.e. relative standard error below 25%).
    Log-scale weights come from the delta method, sigma_log =
    stderr/error; with all-zero stderr (deterministic errors) the fit
    degrades to ordinary least squares.  The confidence interval uses
    the residual-scaled covariance with a Student-t quantile on n-2
    degrees of freedom.
    """
    hs = np.array([lv[0] for lv in levels], dtype=float)
    errors = np.array([lv[1] for lv in levels], dtype=float)
    stderrs = np.array([lv[2] for lv in levels], dtype=float)
    usable = (errors > 0.0) & (errors > NOISE_FLOOR_FACTOR * stderrs)
    if usable.sum() < 3:
        raise ValueError(
            f"insufficient data: only {int(usable.sum())} of {len(levels)} "
            "levels clear the noise floor, need 3 for a rate fit")
    x = np.log(hs[usable])
    y = np.log(errors[usable])
    sigma = stderrs[usable] / errors[usable]
    if np.all(sigma == 0.0):
        weights = np.ones_like(x)
    else:
        weights = 1.0 / np.maximum(sigma, 1e-12) ** 2
    design = np.column_stack([x, np.ones_like(x)])
    wdesign = design * weights[:, None]
    normal = design.T @ wdesign
    coef = np.linalg.solve(normal, wdesign.T @ y)
    resid = y - design @ coef
    dof = x.size - 2
    scale = float(weights @ resid ** 2) / dof if dof > 0 else 0.0
    cov = scale * np.linalg.inv(normal)
    half = float(_student_t.ppf(0.975, max(dof, 1))) \
        * math.sqrt(max(cov[0, 0], 0.0))
    slope = float(coef[0])
    return FitResult(slope=slope, ci_lo=slope - half, ci_hi=slope + half,
                     used=tuple(bool(u) for u in usable))


def growth_exponent(hs, moments) -> float:
    """Slope of log(moment) against log(1/h); zero means h-independent."""
    x = np.log(1.0 / np.asarray(hs, dtype=float))
    y = np.log(np.asarray(moments, dtype=float))
    return float(np.polyfit(x, y, 1)[0])


def envelope_exponent(hs, moments) -> float:
    """Slope of log(moment) against log(1 + log(1/h)).

    A moment bounded by C (1 + log(1/h)) has exponent at most one; an
    h-independent moment has exponent near zero.
    """
    x = np.log1p(np.log(1.0 / np.asarray(hs, dtype=float)))
    y = np.log(np.asarray(moments, dtype=float))
    return float(np.polyfit(x, y, 1)[0])


# ---------------------------------------------------------------------------
# reports

@dataclass
class LevelResult:
    index: int
    resolution: float
    error: float
    stderr: float
    usable: bool


@dataclass
class RateReport:
    kind: str
    levels: list
    slope: float
    ci_lo: float
    ci_hi: float
    noise_floor: bool
    monotonic: bool
    config_hash: str
    seed: int
    provenance: str = ""
    probe_ratio: float | None = None
    aborted_total: int = 0
    runtime_seconds: float = 0.0
    workers: int = 1
    functional_means: list | None = None
    notes: tuple[str, ...] = ()

    @property
    def fit_failed(self) -> bool:
        return math.isnan(self.slope)

    def to_csv(self) -> str:
        """Full-precision CSV; identical bytes for identical (config, seed).

        Wall-clock runtime deliberately stays out of this file (the JSON
        summary carries it) so reruns with different worker counts can
        be compared byte for byte.
        """
        from . import __version__
        lines = [
            f"# config_hash={self.config_hash}",
            f"# seed={self.seed}",
            f"# version={__version__}",
            "level,h,error,stderr,usable",
        ]
        for lv in self.levels:
            lines.append(
                f"{lv.index},{lv.resolution:.17g},{lv.error:.17g},"
                f"{lv.stderr:.17g},{'true' if lv.usable else 'false'}")
        return "\n".join(lines) + "\n"

    def to_json(self) -> str:
        from . import __version__
        payload = {
            "kind": self.kind,
            "slope": self.slope,
            "ci_lo": self.ci_lo,
            "ci_hi": self.ci_hi,
            "levels": [
                {"level": lv.index, "h": lv.resolution, "error": lv.error,
                 "stderr": lv.stderr, "usable": lv.usable}
                for lv in self.levels
            ],
            "seed": self.seed,
            "config_hash": self.config_hash,
            "provenance": self.provenance,
            "noise_floor": self.noise_floor,
            "monotonic": self.monotonic,
            "probe_ratio": self.probe_ratio,
            "aborted_total": self.aborted_total,
            "runtime_seconds": self.runtime_seconds,
            "workers": self.workers,
            "functional_means": self.functional_means,
            "version": __version__,
            "notes": list(self.notes),
        }
        return json.dumps(payload, indent=2, sort_keys=True) + "\n"


@dataclass
class MomentReport:
    kind: str
    resolutions: list
    z_sup_moment: list
    z_sup_stderr: list
    z_l2_moment: list
    z_l2_stderr: list
    x_sup_moment: list
    x_sup_stderr: list
    exponents: dict
    config_hash: str
    seed: int
    provenance: str = ""
    runtime_seconds: float = 0.0
    workers: int = 1

    def to_json(self) -> str:
        from . import __version__
        payload = {
            "kind": self.kind,
            "resolutions": self.resolutions,
            "z_sup_moment": self.z_sup_moment,
            "z_sup_stderr": self.z_sup_stderr,
            "z_l2_moment": self.z_l2_moment,
            "z_l2_stderr": self.z_l2_stderr,
            "x_sup_moment": self.x_sup_moment,
            "x_sup_stderr": self.x_sup_stderr,
            "exponents": self.exponents,
            "seed": self.seed,
            "config_hash": self.config_hash,
            "provenance": self.provenance,
            "runtime_seconds": self.runtime_seconds,
            "workers": self.workers,
            "version": __version__,
        }
        return json.dumps(payload, indent=2, sort_keys=True) + "\n"


# ---------------------------------------------------------------------------
# coupled multi-mesh engine (strong and weak studies)

def _mesh_for(width: float, length: float) -> FemSpace:
    n = round(length / width)
    if n < 2 or abs(length / n - width) > 1e-12 * length:
        raise ValueError(f"width {width} does not tile the domain")
    return FemSpace(uniform_mesh(n, length=length))


def _initial_states(cfg, spaces, basis):
    if cfg.x0 == "zero":
        return [np.zeros(s.n) for s in spaces]
    if cfg.x0 == "mode1":
        unit = np.zeros(basis.k_max)
        unit[0] = 1.0
        return [s.l2_project(basis, unit) for s in spaces]
    return [default_initial_profile(s.mesh.interior, cfg.length)
            for s in spaces]


class _JointNoise:
    """Exact sampler of every mesh's convolution increment per substep."""

    def __init__(self, spaces, basis, covariance, dt_sub):
        self.dt_sub = dt_sub
        self.slices = []
        offset = 0
        for space in spaces:
            self.slices.append(slice(offset, offset + space.n))
            offset += space.n
        self.dim = offset
        weights = covariance.weights
        overlaps = [s.mode_overlap(basis)[:, :covariance.k_trunc]
                    for s in spaces]
        joint = np.empty((offset, offset))
        for a, space_a in enumerate(spaces):
            lam_a = space_a.eigenvalues
            for b in range(a, len(spaces)):
                lam_b = spaces[b].eigenvalues
                mode_cov = (overlaps[a] * weights) @ overlaps[b].T
                pair = lam_a[:, None] + lam_b[None, :]
                kernel = -np.expm1(-pair * dt_sub) / pair
                block = mode_cov * kernel
                joint[self.slices[a], self.slices[b]] = block
                if b != a:
                    joint[self.slices[b], self.slices[a]] = block.T
        self._chol = _regularized_cholesky(joint)

    def sample(self, seed, batch_index, substep_index, batch):
        gen = substream(seed, sample=batch_index, step=substep_index,
                        purpose="wiener")
        return self._chol @ gen.standard_normal((self.dim, batch))


class _CoupledEngine:
    """Shared state of a strong or weak study; batches are pure work items.

    Noise is drawn at half the reference step (the probe's grid), then
    aggregated exactly: first to dt_ref for the reference solution, then
    across dt_ref steps for levels whose drift step is a multiple of
    dt_ref (the h2beta policy).
    """

    def __init__(self, cfg: StudyConfig):
        self.cfg = cfg
        self.basis = SpectralBasis(k_max=cfg.covariance.k_trunc,
                                   length=cfg.length)
        widths = list(cfg.levels) + [cfg.h_ref]
        self.spaces = [_mesh_for(w, cfg.length) for w in widths]
        self.ref_index = len(widths) - 1
        self.n_steps = round(cfg.horizon / cfg.dt_ref)
        self.dt_sub = cfg.dt_ref / 2.0
        self.ratios = cfg.step_ratios
        self.noise = _JointNoise(self.spaces, self.basis, cfg.covariance,
                                 self.dt_sub)
        self.integrators = [
            Integrator(space, cfg.drift,
                       SchemeConfig(cfg.scheme, ratio * cfg.dt_ref,
                                    self.n_steps // ratio))
            for space, ratio in zip(self.spaces, list(self.ratios) + [1])
        ]
        self.sub_decay = [np.exp(-s.eigenvalues * self.dt_sub)
                          for s in self.spaces]
        self.ref_decay = [np.exp(-s.eigenvalues * cfg.dt_ref)
                          for s in self.spaces]
        self.x0 = _initial_states(cfg, self.spaces, self.basis)
        self.comparers = [L2Comparer(self.spaces[self.ref_index], s)
                          for s in self.spaces[:-1]]
        # the probe reruns the reference and the finest tested level at
        # half the reference step on the same noise; it runs on the first
        # batch only, which is plenty for a 10% contamination diagnostic
        self.probe_indices = (self.ref_index, len(cfg.levels) - 1)
        self.probe_integrators = {
            i: Integrator(self.spaces[i], cfg.drift,
                          SchemeConfig(cfg.scheme, self.dt_sub,
                                       2 * self.n_steps))
            for i in self.probe_indices
        }

    def batch_bounds(self, index):
        start = index * self.cfg.batch_size
        return start, min(start + self.cfg.batch_size, self.cfg.samples)

    @property
    def n_batches(self):
        return -(-self.cfg.samples // self.cfg.batch_size)

    def run_batch(self, index):
        cfg = self.cfg
        start, stop = self.batch_bounds(index)
        batch = stop - start
        states = [np.tile(x[:, None], (1, batch)) for x in self.x0]
        acc = [np.zeros((self.spaces[i].n, batch))
               for i in range(len(cfg.levels))]
        with_probe = index == 0
        probe = ({i: states[i].copy() for i in self.probe_indices}
                 if with_probe else None)
        aborted = np.zeros(batch, dtype=bool)
        for step in range(self.n_steps):
            subs = []
            for half in range(2):
                joint = self.noise.sample(cfg.seed, index, 2 * step + half,
                                          batch)
                subs.append(joint)
                if with_probe:
                    for i in self.probe_indices:
                        probe[i] = self.probe_integrators[i] \
                            .step_with_eigen_noise(
                                probe[i], joint[self.noise.slices[i]])
            # exact substep aggregation to the dt_ref grid
            aggs = [self.sub_decay[i][:, None] * subs[0][self.noise.slices[i]]
                    + subs[1][self.noise.slices[i]]
                    for i in range(len(self.spaces))]
            ref_i = self.ref_index
            states[ref_i] = self.integrators[ref_i].step_with_eigen_noise(
                states[ref_i], aggs[ref_i])
            for i, ratio in enumerate(self.ratios):
                acc[i] = self.ref_decay[i][:, None] * acc[i] + aggs[i]
                if (step + 1) % ratio:
                    continue
                states[i] = self.integrators[i].step_with_eigen_noise(
                    states[i], acc[i])
                acc[i][:] = 0.0
                bad = ~np.isfinite(states[i]).all(axis=0) \
                    | (np.abs(states[i]).max(axis=0) > OVERFLOW_LIMIT)
                if bad.any():
                    aborted |= bad
                    states[i][:, bad] = 0.0
        ref = states[self.ref_index]
        out = {"aborted": aborted}
        if cfg.kind == "strong":
            out["values"] = [cmp_.distance(ref, states[i])
                             for i, cmp_ in enumerate(self.comparers)]
            if with_probe:
                out["probe"] = self.comparers[self.probe_indices[1]] \
                    .distance(probe[self.ref_index],
                              probe[self.probe_indices[1]])
        else:
            def evaluate(i, nodal):
                return evaluate_functional(cfg.functional, self.spaces[i],
                                           self.basis, nodal)

            ref_vals = evaluate(self.ref_index, ref)
            out["values"] = [ref_vals - evaluate(i, states[i])
                             for i in range(len(cfg.levels))]
            out["phi"] = [evaluate(i, states[i])
                          for i in range(len(cfg.levels))]
            out["phi"].append(ref_vals)
            if with_probe:
                out["probe"] = (evaluate(self.ref_index,
                                         probe[self.ref_index])
                                - evaluate(self.probe_indices[1],
                                           probe[self.probe_indices[1]]))
        return out


# Worker plumbing: the engine is built in the parent before the pool
# forks, so children inherit it read-only through this module global.
_ENGINE = None


def _set_engine(engine):
    global _ENGINE
    _ENGINE = engine


def _engine_batch(index):
    return _ENGINE.run_batch(index)


def _map_batches(engine, map_fn, workers):
    _set_engine(engine)
    try:
        indices = range(engine.n_batches)
        if map_fn is not None:
            return list(map_fn(_engine_batch, indices))
        if workers <= 1 or engine.n_batches == 1:
            return [engine.run_batch(i) for i in indices]
        ctx = multiprocessing.get_context("fork")
        with ctx.Pool(min(workers, engine.n_batches)) as pool:
            return pool.map(_engine_batch, indices)
    finally:
        _set_engine(None)


def _strong_level_stats(values, p_order):
    powered = values ** p_order
    mean_p = powered.mean()
    se_p = powered.std(ddof=1) / math.sqrt(powered.size)
    error = mean_p ** (1.0 / p_order)
    stderr = se_p * error / (p_order * mean_p) if mean_p > 0 else 0.0
    return float(error), float(stderr)


def _weak_level_stats(values):
    error = abs(float(values.mean()))
    stderr = float(values.std(ddof=1) / math.sqrt(values.size))
    return error, stderr


def _reduce_rate_study(cfg, results, resolutions, stats_fn, t_start,
                       workers):
    keep = ~np.concatenate([r["aborted"] for r in results])
    aborted_total = int((~keep).sum())
    levels = []
    for i, res in enumerate(resolutions):
        values = np.concatenate([r["values"][i] for r in results])[keep]
        error, stderr = stats_fn(values)
        usable = error > 0.0 and error > NOISE_FLOOR_FACTOR * stderr
        levels.append(LevelResult(index=i, resolution=res, error=error,
                                  stderr=stderr, usable=usable))
    notes = []
    probe_ratio = None
    probes = [r["probe"] for r in results if "probe" in r]
    if probes:
        # compare against the finest level on the probe's own samples
        # (batch 0), so Monte-Carlo scatter cancels and the ratio
        # isolates the temporal part; halving dt halves an O(dt) error,
        # hence the factor 2 extrapolation
        probe_keep = ~results[0]["aborted"]
        probe_vals = probes[0][probe_keep]
        probe_error, _ = stats_fn(probe_vals)
        base_vals = results[0]["values"][len(resolutions) - 1][probe_keep]
        base_error, _ = stats_fn(base_vals)
        if probe_error > 0:
            probe_ratio = 2.0 * abs(base_error - probe_error) / probe_error
            if probe_ratio > 0.1:
                notes.append(
                    "dt-halving probe above 10%: temporal error may "
                    "contaminate the finest level")
    functional_means = None
    if results and "phi" in results[0]:
        functional_means = []
        for i, res in enumerate(list(resolutions) + [cfg.h_ref]):
            phi = np.concatenate([r["phi"][i] for r in results])[keep]
            functional_means.append({
                "h": res,
                "mean": float(phi.mean()),
                "stderr": float(phi.std(ddof=1) / math.sqrt(phi.size)),
            })
    try:
        fit = fit_rate([(lv.resolution, lv.error, lv.stderr)
                        for lv in levels])
        slope, ci_lo, ci_hi = fit.slope, fit.ci_lo, fit.ci_hi
    except ValueError as exc:
        slope = ci_lo = ci_hi = float("nan")
        notes.append(str(exc))
    errs = [lv.error for lv in levels if lv.usable]
    monotonic = all(a > b for a, b in zip(errs, errs[1:]))
    if not monotonic:
        notes.append("usable errors are not monotone in resolution")
    if aborted_total:
        notes.append(f"{aborted_total} of {cfg.samples} samples aborted "
                     "(overflow or non-finite state) and were discarded")
    return RateReport(
        kind=cfg.kind, levels=levels, slope=slope, ci_lo=ci_lo, ci_hi=ci_hi,
        noise_floor=not all(lv.usable for lv in levels), monotonic=monotonic,
        config_hash=cfg.config_hash, seed=cfg.seed,
        provenance=cfg.provenance, probe_ratio=probe_ratio,
        aborted_total=aborted_total, functional_means=functional_means,
        runtime_seconds=time.perf_counter() - t_start, workers=workers,
        notes=tuple(notes))


def run_strong_study(cfg: StudyConfig, map_fn=None, workers: int = 1
                     ) -> RateReport:
    """Coupled pathwise L^p error against the reference mesh, per level."""
    if cfg.kind != "strong":
        raise ValueError("config kind must be 'strong'")
    t0 = time.perf_counter()
    engine = _CoupledEngine(cfg)
    results = _map_batches(engine, map_fn, workers)
    return _reduce_rate_study(
        cfg, results, list(cfg.levels),
        lambda v: _strong_level_stats(v, cfg.p_order), t0, workers)


def run_weak_study(cfg: StudyConfig, map_fn=None, workers: int = 1
                   ) -> RateReport:
    """Coupled difference of a bounded functional's expectations."""
    if cfg.kind != "weak":
        raise ValueError("config kind must be 'weak'")
    t0 = time.perf_counter()
    engine = _CoupledEngine(cfg)
    results = _map_batches(engine, map_fn, workers)
    return _reduce_rate_study(
        cfg, results, list(cfg.levels), _weak_level_stats, t0, workers)


# ---------------------------------------------------------------------------
# temporal-order study on a single mesh

class _SplittingDtEngine:
    """All step sizes driven by one substep-resolution noise path."""

    def __init__(self, cfg: StudyConfig):
        self.cfg = cfg
        self.basis = SpectralBasis(k_max=cfg.covariance.k_trunc,
                                   length=cfg.length)
        self.space = _mesh_for(cfg.levels[0], cfg.length)
        self.n_subs = round(cfg.horizon / cfg.dt_ref)
        self.ratios = [round(dt / cfg.dt_ref) for dt in cfg.dt_levels]
        self.noise = _JointNoise([self.space], self.basis, cfg.covariance,
                                 cfg.dt_ref)
        self.sub_decay = np.exp(-self.space.eigenvalues * cfg.dt_ref)
        self.ref_integrator = Integrator(
            self.space, cfg.drift,
            SchemeConfig(cfg.scheme, cfg.dt_ref, self.n_subs))
        self.level_integrators = [
            Integrator(self.space, cfg.drift,
                       SchemeConfig(cfg.scheme, dt, round(cfg.horizon / dt)))
            for dt in cfg.dt_levels
        ]
        self.x0 = _initial_states(cfg, [self.space], self.basis)[0]

    def batch_bounds(self, index):
        start = index * self.cfg.batch_size
        return start, min(start + self.cfg.batch_size, self.cfg.samples)

    @property
    def n_batches(self):
        return -(-self.cfg.samples // self.cfg.batch_size)

    def run_batch(self, index):
        cfg = self.cfg
        start, stop = self.batch_bounds(index)
        batch = stop - start
        ref = np.tile(self.x0[:, None], (1, batch))
        states = [ref.copy() for _ in cfg.dt_levels]
        acc = [np.zeros((self.space.n, batch)) for _ in cfg.dt_levels]
        aborted = np.zeros(batch, dtype=bool)
        for sub in range(self.n_subs):
            noise = self.noise.sample(cfg.seed, index, sub, batch)
            ref = self.ref_integrator.step_with_eigen_noise(ref, noise)
            for lvl, ratio in enumerate(self.ratios):
                acc[lvl] = self.sub_decay[:, None] * acc[lvl] + noise
                if (sub + 1) % ratio:
                    continue
                states[lvl] = self.level_integrators[lvl] \
                    .step_with_eigen_noise(states[lvl], acc[lvl])
                acc[lvl][:] = 0.0
                bad = ~np.isfinite(states[lvl]).all(axis=0) \
                    | (np.abs(states[lvl]).max(axis=0) > OVERFLOW_LIMIT)
                if bad.any():
                    aborted |= bad
                    states[lvl][:, bad] = 0.0
        values = [self.space.l2_norm(ref - st) for st in states]
        return {"values": values, "aborted": aborted}


def run_splitting_dt_study(cfg: StudyConfig, map_fn=None, workers: int = 1
                           ) -> RateReport:
    """Strong error of coarse step sizes against a fine-step reference."""
    if cfg.kind != "splitting_dt":
        raise ValueError("config kind must be 'splitting_dt'")
    t0 = time.perf_counter()
    engine = _SplittingDtEngine(cfg)
    results = _map_batches(engine, map_fn, workers)
    return _reduce_rate_study(
        cfg, results, list(cfg.dt_levels),
        lambda v: _strong_level_stats(v, cfg.p_order), t0, workers)


# ---------------------------------------------------------------------------
# moment study

class _MomentEngine:
    """Per-level moments of the pure convolution and the full dynamics."""

    def __init__(self, cfg: StudyConfig):
        from .noise import DiscreteNoiseModel

        self.cfg = cfg
        self.basis = SpectralBasis(k_max=cfg.covariance.k_trunc,
                                   length=cfg.length)
        self.spaces = [_mesh_for(w, cfg.length) for w in cfg.levels]
        # one exact step of size T samples Z(T) without temporal error
        self.z_models = [
            DiscreteNoiseModel(s, self.basis, cfg.covariance, cfg.horizon)
            for s in self.spaces
        ]
        self.n_steps = round(cfg.horizon / cfg.dt_ref)
        self.integrators = [
            Integrator(s, cfg.drift,
                       SchemeConfig(cfg.scheme, cfg.dt_ref, self.n_steps),
                       covariance=cfg.covariance, basis=self.basis)
            for s in self.spaces
        ]
        self.x0 = _initial_states(cfg, self.spaces, self.basis)

    def batch_bounds(self, index):
        start = index * self.cfg.batch_size
        return start, min(start + self.cfg.batch_size, self.cfg.samples)

    @property
    def n_batches(self):
        return -(-self.cfg.samples // self.cfg.batch_size)

    def run_batch(self, index):
        cfg = self.cfg
        start, stop = self.batch_bounds(index)
        batch = stop - start
        out = {"z_sup": [], "z_l2": [], "x_sup": []}
        for lvl, space in enumerate(self.spaces):
            gen = substream(cfg.seed, sample=index, step=lvl,
                            purpose="moment-z")
            z = self.z_models[lvl].step(np.zeros((space.n, batch)), gen)
            out["z_sup"].append(np.abs(z).max(axis=0) ** 2)
            out["z_l2"].append(space.l2_norm(z) ** 2)
            gen = substream(cfg.seed, sample=index, step=lvl,
                            purpose="moment-x")
            state = np.tile(self.x0[lvl][:, None], (1, batch))
            running = np.abs(state).max(axis=0) ** 2
            for _ in range(self.n_steps):
                state = self.integrators[lvl].step(state, gen)
                running = np.maximum(running,
                                     np.abs(state).max(axis=0) ** 2)
            out["x_sup"].append(running)
        return out


def run_moment_study(cfg: StudyConfig, map_fn=None, workers: int = 1
                     ) -> MomentReport:
    """Second moments of sup and L2 norms across the mesh hierarchy.

    Z moments come from one exact convolution step to the horizon (no
    temporal error); the full-dynamics sup norm is tracked pathwise over
    every step of the time grid.
    """
    if cfg.kind != "moments":
        raise ValueError("config kind must be 'moments'")
    t0 = time.perf_counter()
    engine = _MomentEngine(cfg)
    results = _map_batches(engine, map_fn, workers)
    n_levels = len(cfg.levels)
    series = {"z_sup": ([], []), "z_l2": ([], []), "x_sup": ([], [])}
    for key, (mean_list, se_list) in series.items():
        for lvl in range(n_levels):
            vals = np.concatenate([r[key][lvl] for r in results])
            mean_list.append(float(vals.mean()))
            se_list.append(float(vals.std(ddof=1) / math.sqrt(vals.size)))
    exponents = {}
    for key, (mean_list, _) in series.items():
        exponents[key] = growth_exponent(cfg.levels, mean_list)
        exponents[key + "_envelope"] = envelope_exponent(cfg.levels,
                                                         mean_list)
    return MomentReport(
        kind=cfg.kind, resolutions=list(cfg.levels),
        z_sup_moment=series["z_sup"][0], z_sup_stderr=series["z_sup"][1],
        z_l2_moment=series["z_l2"][0], z_l2_stderr=series["z_l2"][1],
        x_sup_moment=series["x_sup"][0], x_sup_stderr=series["x_sup"][1],
        exponents=exponents, config_hash=cfg.config_hash, seed=cfg.seed,
        provenance=cfg.provenance,
        runtime_seconds=time.perf_counter() - t0, workers=workers)


# ---------------------------------------------------------------------------
# operator study (deterministic)

def run_operator_study(cfg: StudyConfig, map_fn=None, workers: int = 1
                       ) -> dict:
    """Measured projection/Ritz/semigroup error norms and their orders.

    Semigroup pairs are evaluated at t = cfg.horizon.
    """
    if cfg.kind != "operators":
        raise ValueError("config kind must be 'operators'")
    t0 = time.perf_counter()
    finest_n = round(cfg.length / min(cfg.levels))
    basis = SpectralBasis(k_max=max(8 * finest_n, 2048), length=cfg.length)
    spaces = [_mesh_for(w, cfg.length) for w in cfg.levels]
    reports = {}
    for s_exp, r_exp, which in cfg.operator_pairs:
        t_eval = cfg.horizon if which == "semigroup" else None
        levels = []
        for i, space in enumerate(spaces):
            norm = operator_error_norm(space, basis, s=s_exp, r=r_exp,
                                       which=which, t=t_eval)
            levels.append(LevelResult(index=i, resolution=cfg.levels[i],
                                      error=float(norm), stderr=0.0,
                                      usable=True))
        fit = fit_rate([(lv.resolution, lv.error, lv.stderr)
                        for lv in levels])
        errs = [lv.error for lv in levels]
        reports[(s_exp, r_exp, which)] = RateReport(
            kind=cfg.kind, levels=levels, slope=fit.slope, ci_lo=fit.ci_lo,
            ci_hi=fit.ci_hi, noise_floor=False,
            monotonic=all(a > b for a, b in zip(errs, errs[1:])),
            config_hash=cfg.config_hash, seed=cfg.seed,
            provenance=cfg.provenance,
            runtime_seconds=time.perf_counter() - t0, workers=workers)
    return reports


def run_study(cfg: StudyConfig, map_fn=None, workers: int = 1):
    runner = {
        "strong": run_strong_study,
        "weak": run_weak_study,
        "splitting_dt": run_splitting_dt_study,
        "moments": run_moment_study,
        "operators": run_operator_study,
    }[cfg.kind]
    return runner(cfg, map_fn=map_fn, workers=workers)


# ---------------------------------------------------------------------------
# single-path simulation (the trajectory command)

def simulate_trajectory(cfg: StudyConfig, seed: int | None = None):
    """One sample path on the finest tested mesh, checkpointed per step.

    Returns (space, times, values) with ``values`` of shape
    (n_steps + 1, n_interior).
    """
    basis = SpectralBasis(k_max=cfg.covariance.k_trunc, length=cfg.length)
    space = _mesh_for(min(cfg.levels), cfg.length)
    n_steps = round(cfg.horizon / cfg.dt_ref)
    integrator = Integrator(
        space, cfg.drift, SchemeConfig(cfg.scheme, cfg.dt_ref, n_steps),
        covariance=cfg.covariance, basis=basis)
    x0 = _initial_states(cfg, [space], basis)[0]
    gen = substream(cfg.seed if seed is None else seed, purpose="trajectory")
    _, checkpoints = integrator.run(x0, gen, keep_checkpoints=True)
    times = np.arange(n_steps + 1) * cfg.dt_ref
    return space, times, np.stack(checkpoints)


# ---------------------------------------------------------------------------
# closed-form reference for the linear weak sanity route

def linear_weak_reference(space, basis, covariance, x0_nodal, horizon,
                          mode: int = 1) -> float:
    """E cos(<X(T), e_mode>) for the zero-drift equation, in closed form.

    X(T) is Gaussian: the mean decays the initial state through the
    discrete semigroup, the covariance is the exact convolution
    covariance over [0, T].  The sine-mode pairing is then scalar
    Gaussian and E cos(N(m, s^2)) = cos(m) exp(-s^2/2).
    """
    from .noise import DiscreteNoiseModel

    model = DiscreteNoiseModel(space, basis, covariance, horizon)
    mean_eigen = model.decay * space.to_eigen(np.asarray(x0_nodal, float))
    pairing = space.mode_overlap(basis)[:, mode - 1]
    m = float(pairing @ mean_eigen)
    s_sq = float(pairing @ model.step_covariance @ pairing)
    return math.cos(m) * math.exp(-0.5 * s_sq)
