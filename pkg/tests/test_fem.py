"""Tests for P1 finite elements: assembly, eigensystem, projections, norms."""

import numpy as np
import pytest
from scipy.integrate import quad

from spdefem import (FemSpace, L2Comparer, SpectralBasis, field_values,
                     jittered_mesh, operator_error_norm, uniform_mesh)
from spdefem.rng import substream


def closed_form_discrete_eigenvalues(n_elements, length=1.0):
    """Uniform-mesh eigenvalues of M^{-1} S (independent derivation)."""
    h = length / n_elements
    i = np.arange(1, n_elements)
    c = np.cos(i * np.pi * h / length)
    return (6.0 / h ** 2) * (1.0 - c) / (2.0 + c)


class TestAssembly:
    def test_uniform_mass_and_stiffness_rows(self):
        # Hat-function product integrals on a uniform mesh: mass row
        # (h/6)[1, 4, 1], stiffness row (1/h)[-1, 2, -1].
        n_el, h = 8, 1.0 / 8.0
        space = FemSpace(uniform_mesh(n_el))
        i = 3
        assert space.mass[i, i] == pytest.approx(4 * h / 6, rel=1e-14)
        assert space.mass[i, i + 1] == pytest.approx(h / 6, rel=1e-14)
        assert space.mass[i, i - 1] == pytest.approx(h / 6, rel=1e-14)
        assert space.stiffness[i, i] == pytest.approx(2 / h, rel=1e-14)
        assert space.stiffness[i, i + 1] == pytest.approx(-1 / h, rel=1e-14)
        assert np.abs(space.mass[0, 2:]).max() == 0.0

    def test_nonuniform_rows_match_quadrature(self):
        mesh = jittered_mesh(8, jitter=0.2, seed=3)
        space = FemSpace(mesh)
        nodes = mesh.nodes

        def hat(x, j):
            a, m, b = nodes[j - 1], nodes[j], nodes[j + 1]
            return np.where(
                (x >= a) & (x <= m), (x - a) / (m - a),
                np.where((x > m) & (x <= b), (b - x) / (b - m), 0.0))

        for (i, j) in [(3, 3), (3, 4), (5, 4)]:
            val, _ = quad(lambda x: hat(x, i) * hat(x, j), 0.0, 1.0,
                          points=list(nodes), limit=400)
            assert space.mass[i - 1, j - 1] == pytest.approx(val, abs=1e-12)

    def test_single_interior_node_eigenvalue_is_twelve(self):
        # h = 1/2: M = [h/3 * 2] = 1/3, S = [2/h] = 4, so lambda = 12.
        space = FemSpace(uniform_mesh(2))
        assert space.n == 1
        assert space.eigenvalues[0] == pytest.approx(12.0, rel=1e-13)
        v = np.array([0.7])
        out = space.semigroup_apply(0.25, v)
        assert out[0] == pytest.approx(0.7 * np.exp(-3.0), rel=1e-13)


class TestEigensystem:
    @pytest.mark.parametrize("n_el", [4, 16, 64])
    def test_uniform_eigenvalues_match_closed_form(self, n_el):
        space = FemSpace(uniform_mesh(n_el))
        expected = closed_form_discrete_eigenvalues(n_el)
        assert np.abs(space.eigenvalues - expected).max() < 1e-9 * expected[-1]

    @pytest.mark.parametrize("mesh", [uniform_mesh(32),
                                      jittered_mesh(32, jitter=0.2, seed=9)])
    def test_discrete_eigenvalues_dominate_continuous(self, mesh):
        space = FemSpace(mesh)
        lam = (np.arange(1, space.n + 1) * np.pi / mesh.length) ** 2
        assert np.all(space.eigenvalues >= lam * (1.0 - 1e-12))
        # quadratic growth envelope, measured constants stored on the space
        lo, hi = space.eigenvalue_ratio_range
        assert lo >= 1.0 - 1e-12
        assert hi <= 2.0

    def test_eigenvectors_mass_orthonormal(self):
        space = FemSpace(jittered_mesh(24, jitter=0.15, seed=2))
        gram = space.eigenvectors.T @ space.mass @ space.eigenvectors
        assert np.abs(gram - np.eye(space.n)).max() < 1e-10

    def test_semigroup_max_principle(self):
        # sup-norm stability of the discrete semigroup, constant below 2
        # (measured worst ratio ~0.96 over these meshes and times).
        worst = 0.0
        for mesh in [uniform_mesh(16), uniform_mesh(64),
                     jittered_mesh(32, jitter=0.2, seed=5)]:
            space = FemSpace(mesh)
            gen = substream(42, purpose="test")
            for _ in range(20):
                v = gen.standard_normal(space.n)
                for t in [1e-4, 1e-3, 1e-2, 0.1, 1.0]:
                    out = space.semigroup_apply(t, v)
                    worst = max(worst, space.sup_norm(out) / space.sup_norm(v))
        assert worst <= 2.0

    def test_discrete_smoothing_l2_to_sup(self):
        # ||S_h(t) P_h f||_inf <= C t^{-1/4} ||f|| uniformly in h and t
        # (measured constant ~0.063; frozen bound leaves 3x headroom).
        basis = SpectralBasis(k_max=512)
        worst = 0.0
        for n_el in [8, 32, 128]:
            space = FemSpace(uniform_mesh(n_el))
            gen = substream(7, purpose="test")
            for _ in range(10):
                x = gen.standard_normal(512)
                x /= np.linalg.norm(x)
                v = space.l2_project(basis, x)
                for t in [2.0 ** -j for j in range(2, 13)]:
                    val = space.sup_norm(space.semigroup_apply(t, v)) * t ** 0.25
                    worst = max(worst, val)
        assert worst <= 0.2


class TestProjections:
    def test_l2_projection_idempotent_on_space_members(self):
        space = FemSpace(uniform_mesh(8))
        basis = SpectralBasis(k_max=8192)
        v = substream(12, purpose="test").standard_normal(space.n)
        coeffs = space.spectral_coeffs(basis, v)
        again = space.l2_project(basis, coeffs)
        assert np.abs(again - v).max() < 1e-10

    def test_l2_projection_self_adjoint(self):
        space = FemSpace(jittered_mesh(12, jitter=0.2, seed=4))
        basis = SpectralBasis(k_max=256)
        gen = substream(13, purpose="test")
        for _ in range(5):
            x = gen.standard_normal(256)
            w = gen.standard_normal(space.n)
            lhs = space.l2_project(basis, x) @ space.mass @ w
            rhs = x @ space.spectral_coeffs(basis, w)
            assert lhs == pytest.approx(rhs, abs=1e-8 * max(1.0, abs(rhs)))

    def test_ritz_galerkin_orthogonality(self):
        space = FemSpace(uniform_mesh(16))
        basis = SpectralBasis(k_max=256)
        x = substream(14, purpose="test").standard_normal(256)
        v = space.ritz_project(basis, x)
        load = space.coupling(basis) @ (basis.eigenvalues * x)
        residual = space.stiffness @ v - load
        assert np.abs(residual).max() < 1e-8 * np.abs(load).max()

    def test_ritz_reproduces_space_members_exactly(self):
        space = FemSpace(jittered_mesh(16, jitter=0.2, seed=8))
        basis = SpectralBasis(k_max=64)
        w = substream(15, purpose="test").standard_normal(space.n)
        assert np.abs(space.ritz_project(basis, nodal=w) - w).max() < 1e-10

    def test_ritz_from_truncated_coefficients_carries_series_tail(self):
        # The H^1 pairing series decays like 1/k, so a k_max=4096 truncation
        # leaves a visible (but small) residue; this documents the limit.
        space = FemSpace(uniform_mesh(8))
        basis = SpectralBasis(k_max=4096)
        w = substream(16, purpose="test").standard_normal(space.n)
        coeffs = space.spectral_coeffs(basis, w)
        back = space.ritz_project(basis, coeffs)
        err = np.abs(back - w).max()
        assert 1e-8 < err < 5e-3

    def test_projection_error_decays_for_smooth_function(self):
        basis = SpectralBasis(k_max=512)
        coeffs = basis.project_function(lambda x: x * (1.0 - x))
        errs = []
        for n_el in [4, 8, 16, 32]:
            space = FemSpace(uniform_mesh(n_el))
            v = space.l2_project(basis, coeffs)
            pts = np.linspace(0.0, 1.0, 2049)
            exact = pts * (1.0 - pts)
            errs.append(np.sqrt(np.trapezoid(
                (field_values(space, v, pts) - exact) ** 2, pts)))
        rates = np.log2(np.array(errs[:-1]) / errs[1:])
        assert np.all(rates > 1.8)


class TestNormEquivalence:
    @pytest.mark.parametrize("gamma", [-0.5, -0.25, 0.25, 0.5])
    def test_discrete_and_continuous_fractional_norms_equivalent(self, gamma):
        # Ratios measured in [0.96, 1.06] across these meshes; equality is
        # exact at gamma = 1/2 where both sides are the H^1_0 seminorm.
        big = SpectralBasis(k_max=2048)
        ratios = []
        for n_el in [8, 16, 32, 64]:
            space = FemSpace(uniform_mesh(n_el))
            gen = substream(11, purpose="test")
            level = []
            for _ in range(10):
                v = gen.standard_normal(space.n)
                if gamma == 0.5:
                    cont = np.sqrt(v @ space.stiffness @ v)
                else:
                    ck = space.spectral_coeffs(big, v)
                    cont = np.sqrt(np.sum(big.eigenvalues ** (2 * gamma) * ck ** 2))
                c = space.to_eigen(v)
                disc = np.sqrt(np.sum(space.eigenvalues ** (2 * gamma) * c ** 2))
                level.append(cont / disc)
            ratios.append(level)
        flat = np.concatenate(ratios)
        assert flat.min() > 0.5 and flat.max() < 2.0
        medians = np.median(np.asarray(ratios), axis=1)
        assert medians.max() / medians.min() < 1.5

    def test_fractional_roundtrip_nodal(self):
        space = FemSpace(uniform_mesh(16))
        v = substream(17, purpose="test").standard_normal(space.n)
        back = space.fractional_apply(-0.5, space.fractional_apply(0.5, v))
        assert np.abs(back - v).max() < 1e-10

    def test_apply_operator_matches_mass_solve(self):
        space = FemSpace(uniform_mesh(8))
        v = substream(18, purpose="test").standard_normal(space.n)
        direct = space.solve_mass(space.stiffness @ v)
        assert np.abs(space.apply_operator(v) - direct).max() < 1e-12


class TestOperatorErrorNorms:
    def test_projection_error_operator_is_contraction(self):
        basis = SpectralBasis(k_max=128)
        for mesh in [uniform_mesh(8), jittered_mesh(8, jitter=0.2, seed=1)]:
            nrm = operator_error_norm(FemSpace(mesh), basis, s=0, r=0, which="l2")
            assert nrm <= 1.0 + 1e-10

    @pytest.mark.parametrize("which,s,r", [("l2", 0.0, 2.0), ("l2", 0.0, 1.0),
                                           ("ritz", 1.0, 2.0)])
    def test_weighted_error_orders(self, which, s, r):
        basis = SpectralBasis(k_max=256)
        hs, errs = [], []
        for n_el in [8, 16, 32]:
            space = FemSpace(uniform_mesh(n_el))
            hs.append(space.mesh.h)
            errs.append(operator_error_norm(space, basis, s=s, r=r, which=which))
        slope = np.polyfit(np.log(hs), np.log(errs), 1)[0]
        assert abs(slope - (r - s)) < 0.15

    def test_semigroup_error_smoothing_bound(self):
        # ||(S_h(t) P_h - S(t))|| <= C h^2 / t; measured constant ~0.047.
        basis = SpectralBasis(k_max=256)
        for n_el in [8, 16, 32]:
            space = FemSpace(uniform_mesh(n_el))
            h = space.mesh.h
            for t in [0.001, 0.016, 0.25, 1.0]:
                nrm = operator_error_norm(space, basis, which="semigroup",
                                          r=0.0, t=t)
                assert nrm * t / h ** 2 <= 0.15

    def test_argument_validation(self):
        space = FemSpace(uniform_mesh(8))
        basis = SpectralBasis(k_max=64)
        with pytest.raises(ValueError, match="which"):
            operator_error_norm(space, basis, which="nope")
        with pytest.raises(ValueError):
            operator_error_norm(space, basis, s=0.5, r=0.2, which="l2")
        with pytest.raises(ValueError):
            operator_error_norm(space, basis, s=0.0, r=0.5, which="ritz")
        with pytest.raises(ValueError):
            operator_error_norm(space, basis, which="semigroup", r=0.0)
        with pytest.raises(ValueError, match="basis too small"):
            operator_error_norm(FemSpace(uniform_mesh(64)),
                                SpectralBasis(k_max=64), which="l2")


class TestUnionNorm:
    def test_same_space_matches_mass_norm(self):
        space = FemSpace(uniform_mesh(8))
        gen = substream(19, purpose="test")
        va, vb = gen.standard_normal(space.n), gen.standard_normal(space.n)
        cmp_ = L2Comparer(space, space)
        expected = space.l2_norm(va - vb)
        assert cmp_.distance(va, vb) == pytest.approx(expected, rel=1e-12)

    def test_cross_mesh_distance_matches_fine_quadrature(self):
        sa = FemSpace(uniform_mesh(8))
        sb = FemSpace(jittered_mesh(12, jitter=0.2, seed=6))
        gen = substream(20, purpose="test")
        va, vb = gen.standard_normal(sa.n), gen.standard_normal(sb.n)
        cmp_ = L2Comparer(sa, sb)
        pts = np.linspace(0.0, 1.0, 200001)
        diff = field_values(sa, va, pts) - field_values(sb, vb, pts)
        oracle = np.sqrt(np.trapezoid(diff ** 2, pts))
        assert cmp_.distance(va, vb) == pytest.approx(oracle, rel=1e-6)

    def test_batched_columns_match_loop(self):
        sa = FemSpace(uniform_mesh(4))
        sb = FemSpace(uniform_mesh(16))
        gen = substream(21, purpose="test")
        va = gen.standard_normal((sa.n, 5))
        vb = gen.standard_normal((sb.n, 5))
        cmp_ = L2Comparer(sa, sb)
        batch = cmp_.distance(va, vb)
        for j in range(5):
            assert batch[j] == pytest.approx(
                cmp_.distance(va[:, j], vb[:, j]), rel=1e-13)


class TestMeshes:
    def test_uniform_mesh_properties(self):
        mesh = uniform_mesh(8, length=2.0)
        assert mesh.h == pytest.approx(0.25)
        assert mesh.n_interior == 7
        assert mesh.quasi_uniformity == pytest.approx(1.0)

    def test_jittered_mesh_respects_quasi_uniformity(self):
        for seed in range(10):
            mesh = jittered_mesh(16, jitter=0.25, seed=seed)
            assert mesh.quasi_uniformity >= 0.5 - 1e-12
            assert mesh.nodes[0] == 0.0
            assert mesh.nodes[-1] == pytest.approx(1.0)

    def test_jitter_bounds_validated(self):
        with pytest.raises(ValueError):
            jittered_mesh(8, jitter=0.3)

    def test_degenerate_meshes_rejected(self):
        import spdefem
        with pytest.raises(ValueError):
            spdefem.Mesh1D(np.array([0.0, 1.0]))
        with pytest.raises(ValueError):
            spdefem.Mesh1D(np.array([0.0, 0.5, 0.4, 1.0]))
        with pytest.raises(ValueError, match="quasi-uniformity"):
            spdefem.Mesh1D(np.array([0.0, 0.5, 0.55, 1.0]))

    def test_field_values_vanish_at_boundary(self):
        space = FemSpace(uniform_mesh(4))
        v = np.ones(space.n)
        vals = field_values(space, v, np.array([0.0, 1.0, 0.25]))
        assert vals[0] == 0.0 and vals[1] == 0.0 and vals[2] == 1.0
