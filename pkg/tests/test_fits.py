"""Least-squares analyses: synthetic recoveries, weighting, failure modes."""

import json
import math

import numpy as np
import pytest

from esqmc import pipeline
from esqmc.errors import SolverError
from esqmc.fits import (
    chi_perp_from_slope,
    extrapolate_velocity,
    fit_groundlevel_scaling,
    fit_linear_band,
    fit_quadratic,
    fit_sine_dispersion,
    fit_tos,
)

V_TARGET = 2.41


def sector_momenta(g):
    """Folded sector momenta in radians, k = 1 .. g/2."""
    return 2.0 * np.pi * np.arange(1, g // 2 + 1) / g


class TestSineDispersion:
    def test_recovers_planted_velocity(self):
        k = sector_momenta(12)
        xi = V_TARGET * np.abs(np.sin(k))
        fit = fit_sine_dispersion(k, xi, mode="two-point")
        assert fit.params["v"] == pytest.approx(V_TARGET, abs=1e-10)
        assert fit.residual_norm < 1e-10
        # two smallest |sin k| values, each hit by a mirror pair
        assert fit.n_points == 4
        assert fit.window["mode"] == "two-point"

    def test_two_point_ignores_band_top_curvature(self):
        # plant a band that bends away from the sine form toward the zone
        # boundary; the two-point window must not see the distortion
        k = sector_momenta(16)[:4]
        xi = V_TARGET * np.abs(np.sin(k)) + 0.3 * (k / np.pi) ** 6
        fit = fit_sine_dispersion(k, xi, mode="two-point")
        assert fit.params["v"] == pytest.approx(V_TARGET, rel=2e-3)
        full = fit_sine_dispersion(k, xi, mode="window")
        assert abs(full.params["v"] - V_TARGET) > abs(fit.params["v"] - V_TARGET)

    def test_degenerate_pair_counted_twice(self):
        k = np.array([0.5, -0.5, 1.0, 2.0])
        xi = V_TARGET * np.abs(np.sin(k))
        fit = fit_sine_dispersion(k, xi, mode="two-point")
        assert fit.n_points == 3  # +-0.5 pair plus 1.0
        assert fit.params["v"] == pytest.approx(V_TARGET, abs=1e-10)

    def test_zero_momentum_dropped(self):
        k = np.array([0.0, 0.4, 0.8])
        xi = V_TARGET * np.abs(np.sin(k))
        fit = fit_sine_dispersion(k, xi, mode="window")
        assert fit.n_points == 2

    def test_single_distinct_momentum_rejected(self):
        with pytest.raises(SolverError, match="two distinct"):
            fit_sine_dispersion(np.array([np.pi / 2, np.pi]),
                                np.array([2.4, 0.0]), mode="two-point")

    def test_unknown_mode_rejected(self):
        with pytest.raises(SolverError, match="mode"):
            fit_sine_dispersion(np.array([0.4, 0.8]), np.array([1.0, 2.0]),
                                mode="spline")

    def test_point_reorder_invariance(self, rng):
        k = sector_momenta(12)
        xi = V_TARGET * np.abs(np.sin(k)) + 0.01 * rng.normal(size=k.size)
        perm = rng.permutation(k.size)
        a = fit_sine_dispersion(k, xi, mode="window")
        b = fit_sine_dispersion(k[perm], xi[perm], mode="window")
        assert a.params["v"] == pytest.approx(b.params["v"], abs=1e-12)


class TestVelocityExtrapolation:
    def test_recovers_planted_limit(self):
        lengths = np.array([8.0, 12.0, 16.0])
        v = V_TARGET + 1.1 / lengths
        fit = extrapolate_velocity(lengths, v)
        assert fit.params["v_inf"] == pytest.approx(V_TARGET, abs=1e-10)
        assert fit.params["a"] == pytest.approx(1.1, abs=1e-9)

    def test_weighted_equal_errors_same_params(self):
        lengths = np.array([8.0, 12.0, 16.0, 20.0])
        v = V_TARGET + 1.1 / lengths + np.array([0.01, -0.02, 0.015, -0.005])
        plain = extrapolate_velocity(lengths, v)
        weighted = extrapolate_velocity(lengths, v, errors=np.full(4, 0.02))
        assert weighted.params["v_inf"] == pytest.approx(plain.params["v_inf"], abs=1e-12)
        assert np.isfinite(weighted.errors["v_inf"])

    def test_two_points_exactly_determined(self):
        fit = extrapolate_velocity(np.array([8.0, 12.0]), np.array([2.5, 2.47]))
        assert fit.residual_norm < 1e-12

    def test_one_point_rejected(self):
        with pytest.raises(SolverError, match="points"):
            extrapolate_velocity(np.array([8.0]), np.array([2.5]))


class TestGroundlevelScaling:
    def test_recovers_planted_coefficients(self):
        lengths = np.array([8.0, 12.0, 16.0, 20.0])
        e0, d1 = 0.4, -math.pi * V_TARGET / 6.0
        xi0 = lengths * (e0 + d1 / lengths**2)
        fit = fit_groundlevel_scaling(lengths, xi0)
        assert fit.params["e0"] == pytest.approx(e0, abs=1e-10)
        assert fit.params["d1"] == pytest.approx(d1, abs=1e-9)
        assert fit.params["v_cft"] == pytest.approx(V_TARGET, abs=1e-9)

    def test_unit_velocity_identity(self):
        # d1 = -pi/6 with c = 1 is by construction v_cft = 1
        lengths = np.array([6.0, 10.0, 14.0])
        xi0 = lengths * (0.3 - (math.pi / 6.0) / lengths**2)
        fit = fit_groundlevel_scaling(lengths, xi0, central_charge=1.0)
        assert fit.params["v_cft"] == pytest.approx(1.0, abs=1e-10)

    def test_central_charge_rescales(self):
        lengths = np.array([6.0, 10.0, 14.0])
        xi0 = lengths * (0.3 - (math.pi / 6.0) / lengths**2)
        half = fit_groundlevel_scaling(lengths, xi0, central_charge=0.5)
        assert half.params["v_cft"] == pytest.approx(2.0, abs=1e-9)

    def test_errors_propagate_through_division(self):
        lengths = np.array([8.0, 12.0, 16.0])
        xi0 = lengths * (0.4 - 1.0 / lengths**2)
        fit = fit_groundlevel_scaling(lengths, xi0, errors=np.full(3, 0.01))
        assert fit.errors["v_cft"] > 0


class TestQuadraticBand:
    def test_k2_recovery(self):
        k = np.linspace(0.1, 0.9, 5)
        fit = fit_quadratic(k, 0.73 * k**2, model="k2")
        assert fit.params["a"] == pytest.approx(0.73, abs=1e-12)
        assert fit.residual_norm < 1e-12

    def test_sin2_recovery_and_small_k_limit(self):
        k = sector_momenta(20)[:5]
        xi = 2.0 * 1.0 * np.sin(k / 2.0) ** 2
        fit = fit_quadratic(k, xi, model="sin2")
        assert fit.params["j_eff"] == pytest.approx(1.0, abs=1e-12)
        # the same data fit as a pure parabola approaches j_eff/2 from below
        quad = fit_quadratic(k[:2], xi[:2], model="k2")
        assert quad.params["a"] == pytest.approx(0.5, abs=0.02)

    def test_unknown_model_rejected(self):
        with pytest.raises(SolverError, match="model"):
            fit_quadratic(np.array([0.1]), np.array([0.01]), model="cubic")

    def test_linear_band_recovery(self):
        k = np.array([-0.6, 0.3, 0.9])
        fit = fit_linear_band(k, 1.7 * np.abs(k))
        assert fit.params["b"] == pytest.approx(1.7, abs=1e-12)

    def test_quadratic_vs_linear_discrimination(self):
        # the residual comparison used on ferromagnetic bands: a genuinely
        # quadratic band must fit k^2 much better than b|k|
        k = np.linspace(0.2, 1.2, 6)
        xi = 0.5 * k**2
        quad = fit_quadratic(k, xi, model="k2")
        lin = fit_linear_band(k, xi)
        assert lin.residual_norm > 2.0 * max(quad.residual_norm, 1e-12)


class TestTowerOfStates:
    def test_recovery_and_susceptibility_identity(self):
        s = np.array([0.0, 1.0, 2.0, 3.0])
        slope = 0.38
        xi = 1.2 + slope * s * (s + 1.0)
        fit = fit_tos(s, xi)
        assert fit.params["xi0"] == pytest.approx(1.2, abs=1e-12)
        assert fit.params["slope"] == pytest.approx(slope, abs=1e-12)
        chi = chi_perp_from_slope(fit.params["slope"], volume=16)
        assert chi == pytest.approx(1.0 / (2.0 * slope * 16.0), abs=1e-12)
        assert chi == pytest.approx(0.0822, abs=5e-4)

    def test_planted_susceptibility_roundtrip(self):
        chi, vol = 0.07, 36
        slope = 1.0 / (2.0 * chi * vol)
        s = np.array([0.0, 1.0, 2.0])
        fit = fit_tos(s, 0.9 + slope * s * (s + 1.0))
        assert chi_perp_from_slope(fit.params["slope"], vol) == pytest.approx(chi, abs=1e-10)

    def test_negative_slope_rejected(self):
        with pytest.raises(SolverError, match="positive"):
            chi_perp_from_slope(-0.1, 16)

    def test_non_heisenberg_components_rejected(self):
        with pytest.raises(SolverError, match="three-component"):
            chi_perp_from_slope(0.4, 16, n_components=2)

    def test_duplicate_s_points_allowed(self):
        s = np.array([0.0, 1.0, 1.0, 2.0])
        xi = 0.5 + 0.2 * s * (s + 1.0)
        fit = fit_tos(s, xi)
        assert fit.params["slope"] == pytest.approx(0.2, abs=1e-12)


class TestResultSerialization:
    def test_json_roundtrip(self, tmp_path):
        fit = fit_tos(np.array([0.0, 1.0, 2.0]),
                      np.array([1.0, 1.8, 3.4]),
                      errors=np.array([0.05, 0.05, 0.08]))
        path = tmp_path / "fit.json"
        fit.to_json(str(path))
        back = json.loads(path.read_text())
        assert back["model"] == fit.model
        assert back["params"]["slope"] == pytest.approx(fit.params["slope"])
        assert back["n_points"] == 3
        assert "residuals" in back["extras"]


class TestSpectrumFitBridge:
    def test_window_mode_on_exact_levels(self, ladder4_oracle_spectrum):
        fit = pipeline.fit_spectrum(ladder4_oracle_spectrum, model="sine",
                                    mode="window")
        # on the 4-rung ladder only |sin(pi/2)| survives, so the window fit
        # returns exactly xi_exc at that sector momentum
        want = ladder4_oracle_spectrum.lowest_band()[1][1] - ladder4_oracle_spectrum.xi0
        assert fit.params["v"] == pytest.approx(want, abs=1e-10)

    def test_two_point_mode_needs_more_momenta(self, ladder4_oracle_spectrum):
        with pytest.raises(SolverError, match="two distinct"):
            pipeline.fit_spectrum(ladder4_oracle_spectrum, model="sine",
                                  mode="two-point")

    def test_tos_mode_groups_by_spin(self, ladder4_oracle_spectrum):
        fit = pipeline.fit_spectrum(ladder4_oracle_spectrum, model="tos")
        assert fit.n_points >= 2
        assert fit.params["slope"] > 0
