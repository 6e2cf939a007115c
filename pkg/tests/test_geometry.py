import math
from fractions import Fraction

import numpy as np
import pytest

from conicflow import (
    ConePointOffGrid,
    DiscreteGeometry,
    DomainError,
    ResolutionTooLow,
    SmoothingParams,
    build_football,
    build_torus_cone,
    ddbar_chi_density,
)
from conicflow.geometry import (
    cone_model_density_ratio,
    prolong_field,
    with_volume_shift,
)
from conicflow.smoothing import chi_field, ddbar_chi_terms

TAU = 2 * math.pi


@pytest.fixture(scope="module")
def football():
    return build_football(Fraction(1, 2), Fraction(1, 2), Fraction(2), 128)


@pytest.fixture(scope="module")
def torus():
    return build_torus_cone(Fraction(1, 2), Fraction(2), 64)


class TestFootballBackground:
    def test_area_is_exact(self, football):
        assert abs(football.integrate(football.a0) - 4 * math.pi) < 1e-12 * 4 * math.pi

    def test_degrees_are_exact(self, football):
        d0, d1 = football.divisors
        assert abs(football.integrate(d0.curv_density) - TAU) < 1e-10
        assert abs(football.integrate(d1.curv_density) - TAU) < 1e-10

    def test_gauss_bonnet_of_background(self, football):
        assert abs(football.integrate(football.ric_omega) - 2 * TAU) < 1e-10

    def test_twist_integral_matches_class_degree(self, football):
        want = TAU * float(football.class_path.twist.degree)
        assert abs(football.integrate(football.twist_density) - want) < 1e-10

    def test_background_fields_positive(self, football):
        assert np.all(football.a0 > 0)
        assert np.all(football.omega_dens > 0)

    def test_curvature_fields_match_closed_forms(self, football):
        # r0 = r1 = pi sin(theta), Ric = 2 pi sin(theta), as cell averages
        th = football.theta
        interior = (th > 0.2) & (th < math.pi - 0.2)
        d0, _ = football.divisors
        assert np.max(np.abs(d0.curv_density - math.pi * np.sin(th))[interior]) < 1e-4
        assert np.max(np.abs(football.ric_omega - TAU * np.sin(th))[interior]) < 2e-4

    def test_twist_has_no_pole_artifacts(self, football):
        # exact cell averages of pi sin(theta) (beta0 + beta1); the pole
        # cells are as clean as the interior
        want = math.pi * np.sin(football.theta)
        err = np.abs(football.twist_density - want)
        assert err[0] < 1e-3 and err[-1] < 1e-3

    def test_resolution_gate(self):
        with pytest.raises(ResolutionTooLow):
            build_football(0.5, 0.5, Fraction(2), 32)

    def test_bad_beta(self):
        with pytest.raises(DomainError):
            build_football(1.5, 0.5, Fraction(2), 128)

    def test_summary_round_trip(self, football):
        s = football.summary()
        assert s["kind"] == "football"
        assert s["N"] == 128
        assert s["area_over_2pi"] == "2"
        assert s["truncation_U"] > 8.0


class TestFootballOperator:
    def test_constant_in_kernel(self, football):
        out = football.ddbar(np.full(128, 3.7))
        assert np.max(np.abs(out)) == 0.0

    def test_zero_integral_exact(self, football):
        rng = np.random.default_rng(42)
        phi = rng.standard_normal(128)
        total = football.integrate(football.ddbar(phi))
        assert abs(total) < 1e-12 * np.max(np.abs(phi))

    def test_linearity(self, football):
        rng = np.random.default_rng(3)
        f, g = rng.standard_normal((2, 128))
        lhs = football.ddbar(2.5 * f - 1.25 * g)
        rhs = 2.5 * football.ddbar(f) - 1.25 * football.ddbar(g)
        assert np.max(np.abs(lhs - rhs)) < 1e-13 * np.max(np.abs(lhs))

    def test_taylor_oracle_second_order(self):
        # D[cos theta] = -pi sin(2 theta); the interior error drops 4x per
        # refinement
        errs = []
        for N in (128, 256):
            g = build_football(0.5, 0.5, Fraction(2), N)
            th = g.theta
            got = g.ddbar(np.cos(th))
            want = -math.pi * np.sin(2 * th)
            interior = (th > 0.3) & (th < math.pi - 0.3)
            errs.append(np.max(np.abs(got - want)[interior]))
        assert errs[0] / errs[1] > 3.5
        assert errs[1] < 1e-3

    def test_lelong_mass_capture(self, football):
        # ddbar log||S_0||^2 + r0 concentrates 2 pi at the pole cell
        d0, _ = football.divisors
        field = football.ddbar(np.log(d0.psi)) + d0.curv_density
        th = football.theta
        near = th < 3 * football.h
        captured = football.integrate(np.where(near, field, 0.0))
        assert captured > 0.99 * TAU
        far = th > 10 * football.h
        assert np.max(np.abs(field[far] * football.h)) < 1e-3

    def test_curvature_of_round_metric(self, football):
        K = football.curvature_of_density(football.a0)
        want = 4 * math.pi / football.area
        assert np.max(np.abs(K - want)) < 5e-3 * want

    def test_gauss_bonnet_from_curvature_everywhere(self, football):
        K = football.curvature_of_density(football.a0)
        total = football.integrate(K * football.a0)
        assert abs(total - TAU * football.euler_char) < 1e-8


class TestConeModelMatch:
    def test_ratio_near_one_at_small_distance(self):
        for beta in (0.5, 0.3):
            r = cone_model_density_ratio(beta, Fraction(2), 0.05, 1e-3)
            assert abs(r - 1.0) < 0.02

    def test_wide_angle_needs_smaller_distance(self):
        # the background enters at relative order d^(2(1-beta)/beta), so
        # beta close to 1 reaches the asymptotic regime more slowly
        assert abs(cone_model_density_ratio(0.7, Fraction(2), 0.05, 1e-5) - 1.0) < 0.02

    def test_ratio_converges_monotonically(self):
        errs = [
            abs(cone_model_density_ratio(0.5, Fraction(2), 0.05, d) - 1.0)
            for d in (3e-2, 1e-2, 3e-3, 1e-3)
        ]
        assert all(a > b for a, b in zip(errs, errs[1:]))


class TestDdbarChiOnGrid:
    def test_bump_integrates_to_zero_exactly(self, football):
        p = SmoothingParams(beta=0.5, epsilon=0.05)
        bump = ddbar_chi_density(p, football)
        scale = np.max(np.abs(bump))
        assert abs(football.integrate(bump)) < 1e-10 * max(1.0, scale)

    def test_bump_integrates_to_zero_on_torus(self, torus):
        p = SmoothingParams(beta=0.5, epsilon=0.1)
        bump = ddbar_chi_density(p, torus)
        scale = np.max(np.abs(bump))
        assert abs(torus.integrate(bump)) < 1e-10 * max(1.0, scale)

    def test_pointwise_formula_is_second_order_oracle(self):
        # the operator-built bump approaches the derivative-and-curvature
        # combination at interior points as the grid refines
        p = SmoothingParams(beta=0.5, epsilon=0.1)
        errs = []
        for N in (128, 256):
            g = build_football(0.5, 0.5, Fraction(2), N)
            d0 = g.divisors[0]
            grid = g.ddbar(chi_field(p, d0.psi))
            formula = ddbar_chi_terms(
                d0.beta, p.epsilon, d0.psi, d0.grad_density, d0.curv_density
            )
            th = g.theta
            interior = (th > 0.3) & (th < math.pi - 0.3)
            errs.append(np.max(np.abs(grid - formula)[interior]))
        assert errs[0] / errs[1] > 3.5


class TestTorusBackground:
    def test_area_and_degree(self, torus):
        assert abs(torus.integrate(torus.a0) - 4 * math.pi) < 1e-10
        div = torus.divisors[0]
        assert abs(torus.integrate(div.curv_density) - TAU) < 1e-12

    def test_twist_is_constant_negative(self, torus):
        want = -(1 - 0.5) * TAU
        assert np.allclose(torus.twist_density, want / 1.0, atol=1e-12)
        got = torus.integrate(torus.twist_density)
        assert abs(got - want) < 1e-10

    def test_poincare_lelong_mass_exact(self, torus):
        div = torus.divisors[0]
        pl = torus.ddbar(np.log(div.psi)) + div.curv_density
        # the operator has exact zero integral, so the total Lelong mass
        # is 2 pi to roundoff however the residual distributes
        assert abs(torus.integrate(pl) - TAU) < 1e-8 * TAU

    def test_poincare_lelong_residual_is_second_order(self, torus):
        def far_residual(geom):
            div = geom.divisors[0]
            pl = geom.ddbar(np.log(div.psi)) + div.curv_density
            # flat distance > 0.2 on the unit lattice
            far = div.dist > 0.2 * math.sqrt(geom.area)
            return float(np.max(np.abs(pl[far])))

        fine = build_torus_cone(Fraction(1, 2), Fraction(2), 2 * torus.N)
        coarse_res = far_residual(torus)
        fine_res = far_residual(fine)
        assert coarse_res < 0.2
        assert coarse_res / fine_res > 3.5

    def test_green_function_mean_zero_and_cross_checked(self, torus):
        from conicflow.geometry import _torus_green

        ip, jp = torus.meta["cone_index"]
        G = _torus_green(torus.N, 1.0, ip, jp)
        assert abs(G.mean()) < 1e-12
        assert torus.meta["green_cross_check"] < 5e-3
        assert torus.meta["lelong_capture"] > 0.99

    def test_lelong_capture_within_three_cells(self, torus):
        div = torus.divisors[0]
        pl = torus.ddbar(np.log(div.psi)) + div.curv_density
        mask = div.dist <= 3 * torus.h * math.sqrt(torus.area)
        captured = torus.integrate(np.where(mask, pl, 0.0))
        assert captured > 0.99 * TAU

    def test_hermitian_scale_normalization(self, torus):
        div = torus.divisors[0]
        ip, jp = torus.meta["cone_index"]
        N = torus.N
        nb = [
            div.psi[(ip + 1) % N, jp],
            div.psi[(ip - 1) % N, jp],
            div.psi[ip, (jp + 1) % N],
            div.psi[ip, (jp - 1) % N],
        ]
        geo_mean = math.exp(np.mean(np.log(nb)))
        want = torus.meta["hermitian_scale"] * torus.h**2
        assert abs(geo_mean - want) < 1e-9 * want

    def test_psi_positive_and_scale_stable_in_N(self):
        a = build_torus_cone(0.5, Fraction(2), 64, hermitian_scale=40.0)
        b = build_torus_cone(0.5, Fraction(2), 128, hermitian_scale=40.0)
        assert np.all(a.divisors[0].psi > 0)
        ratio = a.divisors[0].psi.max() / b.divisors[0].psi.max()
        assert 0.8 < ratio < 1.25

    def test_cone_point_must_sit_on_grid(self):
        with pytest.raises(ConePointOffGrid):
            build_torus_cone(0.5, Fraction(2), 64, cone_point=(0.33, 0.5))

    def test_operator_eigenfunction(self, torus):
        N = torus.N
        x = np.arange(N) / N
        X, Y = np.meshgrid(x, x, indexing="ij")
        phi = np.cos(TAU * 2 * X) * np.cos(TAU * 3 * Y)
        got = torus.ddbar(phi)
        h = torus.h
        lam = -(4.0 / h**2) * (
            math.sin(math.pi * 2 / N) ** 2 + math.sin(math.pi * 3 / N) ** 2
        )
        assert np.max(np.abs(got - 0.5 * lam * phi)) < 1e-9 * abs(lam)

    def test_zero_integral_exact(self, torus):
        rng = np.random.default_rng(8)
        phi = rng.standard_normal(torus.shape)
        assert abs(torus.integrate(torus.ddbar(phi))) < 1e-9

    def test_flat_curvature(self, torus):
        K = torus.curvature_of_density(torus.a0)
        assert np.max(np.abs(K)) < 1e-12


class TestSharedHelpers:
    def test_volume_shift_preserves_class_data(self, football):
        f = 0.1 * np.cos(football.theta)
        shifted = with_volume_shift(football, f)
        assert abs(
            shifted.integrate(shifted.twist_density)
            - football.integrate(football.twist_density)
        ) < 1e-10
        assert np.allclose(shifted.omega_dens, football.omega_dens * np.exp(f))
        # ric shifted by exactly -ddbar f
        delta = football.ric_omega - shifted.ric_omega
        assert np.max(np.abs(delta - football.ddbar(f))) < 1e-12

    def test_kd_mask_football(self, football):
        mask = football.kd_mask(0.2)
        radius = math.sqrt(football.area / (4 * math.pi))
        th = football.theta
        want = (radius * th > 0.2) & (radius * (math.pi - th) > 0.2)
        assert np.array_equal(mask, want)

    def test_kd_mask_torus(self, torus):
        mask = torus.kd_mask(0.2)
        assert mask.sum() < torus.N**2
        ip, jp = torus.meta["cone_index"]
        assert not mask[ip, jp]

    def test_prolong_torus_exact_on_low_modes(self):
        coarse = build_torus_cone(0.5, Fraction(2), 64)
        fine = build_torus_cone(0.5, Fraction(2), 128)
        x = np.arange(64) / 64.0
        X, Y = np.meshgrid(x, x, indexing="ij")
        phi = np.sin(TAU * 3 * X) * np.cos(TAU * 5 * Y) + 0.3 * np.cos(TAU * X)
        out = prolong_field(coarse, fine, phi)
        xf = np.arange(128) / 128.0
        XF, YF = np.meshgrid(xf, xf, indexing="ij")
        want = np.sin(TAU * 3 * XF) * np.cos(TAU * 5 * YF) + 0.3 * np.cos(TAU * XF)
        assert np.max(np.abs(out - want)) < 1e-11

    def test_prolong_football_smooth(self):
        coarse = build_football(0.5, 0.5, Fraction(2), 64)
        fine = build_football(0.5, 0.5, Fraction(2), 128)
        phi = np.cos(coarse.theta) + 0.2 * np.cos(3 * coarse.theta)
        out = prolong_field(coarse, fine, phi)
        want = np.cos(fine.theta) + 0.2 * np.cos(3 * fine.theta)
        assert np.max(np.abs(out - want)) < 1e-4
