import math

import numpy as np
import pytest

from drivenchain import (
    AssumptionError,
    InteractionPotential,
    analyze_dispersion,
    compute_dn,
    predict_energy_variance,
    predict_global_energy,
    predict_local_kinetic,
    predict_local_potential,
    verify_Dn_equals_dn,
)

FIT_GRID = np.geomspace(math.exp(3.0), math.exp(7.0), 25)


class TestGlobalEnergy:
    def test_total_energy_exact_line(self, nn11, zero_init):
        pred = predict_global_energy(nn11, zero_init, [10.0])
        assert pred.EH[0] == 5.0
        assert pred.H0 == 0.0

    def test_total_energy_with_initial_offset(self, nn11, unit_kick):
        pred = predict_global_energy(nn11, unit_kick, [10.0, 20.0])
        assert pred.H0 == pytest.approx(1.5)
        assert np.allclose(pred.EH, [6.5, 11.5])

    def test_linearity_to_roundoff(self, nn11, unit_kick):
        t = np.array([3.0, 7.0, 19.0, 43.0])
        pred = predict_global_energy(nn11, unit_kick, t)
        diffs = np.diff(pred.EH) / np.diff(t)
        assert np.max(np.abs(diffs - 0.5)) < 1e-12

    def test_frozen_noise_keeps_initial_energy(self, unit_kick):
        frozen = InteractionPotential(r=1, a=(3.0, -1.0), sigma=0.0)
        pred = predict_global_energy(frozen, unit_kick, [0.0, 5.0, 25.0])
        assert np.allclose(pred.EH, 1.5)
        assert np.allclose(pred.VarH, 0.0)

    def test_split_sums_to_total(self, nn11, zero_init):
        pred = predict_global_energy(nn11, zero_init, np.linspace(1.0, 50.0, 9))
        assert np.max(np.abs(pred.ET + pred.EU - pred.EH)) < 1e-12

    def test_kinetic_approaches_quarter_rate(self, nn11, zero_init):
        pred = predict_global_energy(nn11, zero_init, [200.0, 400.0])
        assert abs(pred.ET[0] - 50.0) / 50.0 <= 0.05
        assert 0.95 <= pred.ET[1] / 400.0 / 0.25 <= 1.05

    def test_global_equipartition_sets_in(self, nn11, zero_init):
        pred = predict_global_energy(nn11, zero_init, [400.0])
        assert abs(pred.ET[0] - pred.EU[0]) / pred.EH[0] < 0.05

    def test_kinetic_monotone(self, nn11, zero_init):
        pred = predict_global_energy(nn11, zero_init, np.linspace(2.0, 50.0, 25))
        assert np.all(np.diff(pred.ET) > 0)


class TestEnergyVariance:
    def test_zero_at_origin(self, nn11):
        assert predict_energy_variance(nn11, 0.0) == 0.0

    def test_decoupled_elementary_integral(self, decoupled):
        # h(t) = cos t, so the variance is t^2/4 + (1 - cos 2t)/8 exactly
        for t in (3.0, 10.0, 25.0):
            oracle = t * t / 4.0 + (1.0 - math.cos(2.0 * t)) / 8.0
            assert predict_energy_variance(decoupled, t) == pytest.approx(oracle, rel=1e-4)

    def test_subquadratic_decay(self, nn11):
        t = np.array([50.0, 100.0, 200.0, 400.0])
        ratio = predict_energy_variance(nn11, t) / t ** 2
        assert np.all(np.diff(ratio) < 0)

    def test_nonnegative(self, nn11):
        assert np.all(predict_energy_variance(nn11, np.linspace(0.0, 40.0, 17)) >= 0.0)


class TestLocalEnergies:
    def test_zero_at_origin(self, nn11, zero_init):
        kin = predict_local_kinetic(nn11, zero_init, 0, [0.0, 1.0], with_fit=False)
        assert kin.kinetic[0] == 0.0
        pot = predict_local_potential(nn11, zero_init, 0, [0.0, 1.0], with_fit=False)
        assert pot.potential[0] == 0.0

    def test_kinetic_log_slope(self, nn11, zero_init):
        kin = predict_local_kinetic(nn11, zero_init, 0, FIT_GRID)
        assert kin.dn == pytest.approx((1 + math.sqrt(5)) / (8 * math.pi), rel=1e-12)
        assert abs(kin.fitted_slope_kinetic / kin.dn - 1.0) <= 0.15

    def test_potential_log_slope_and_equipartition(self, nn11, zero_init):
        kin = predict_local_kinetic(nn11, zero_init, 0, FIT_GRID)
        pot = predict_local_potential(nn11, zero_init, 0, FIT_GRID)
        assert abs(pot.fitted_slope_potential / pot.dn - 1.0) <= 0.15
        mean = 0.5 * (kin.fitted_slope_kinetic + pot.fitted_slope_potential)
        assert abs(kin.fitted_slope_kinetic - pot.fitted_slope_potential) / mean <= 0.05

    def test_kinetic_monotone_nondecreasing(self, nn11, zero_init):
        kin = predict_local_kinetic(nn11, zero_init, 0, np.linspace(0.0, 30.0, 31), with_fit=False)
        assert np.all(np.diff(kin.kinetic) >= -1e-12)

    def test_decoupled_grows_linearly_not_logarithmically(self, decoupled, zero_init):
        # constant frequency breaks the critical-point picture: the site
        # energy then rides the global rate t/4 instead of a log
        kin = predict_local_kinetic(decoupled, zero_init, 0, [50.0, 100.0], with_fit=False)
        assert kin.kinetic[1] / 100.0 == pytest.approx(0.25, abs=0.02)
        assert kin.kinetic[1] > 10 * math.log(100.0) * 0.13

    def test_fit_refused_without_assumptions(self, unpinned, zero_init):
        with pytest.raises(AssumptionError):
            predict_local_kinetic(unpinned, zero_init, 0, FIT_GRID)

    def test_fit_needs_points_in_window(self, nn11, zero_init):
        with pytest.raises(ValueError):
            predict_local_kinetic(nn11, zero_init, 0, [1.0, 2.0, 3.0, 4.0],
                                  fit_window=(100.0, 200.0))

    def test_site_sum_matches_global_potential(self, nn11, zero_init):
        t = np.array([25.0])
        glob = predict_global_energy(nn11, zero_init, t)
        total = sum(
            predict_local_potential(nn11, zero_init, n, t, with_fit=False).potential[0]
            for n in range(-40, 41)
        )
        assert total == pytest.approx(glob.EU[0], rel=1e-8)

    def test_homogeneous_term_included(self, nn11, unit_kick):
        kin0 = predict_local_kinetic(nn11, unit_kick, 0, [0.0], with_fit=False)
        assert kin0.kinetic[0] == pytest.approx(0.0, abs=1e-10)
        pot0 = predict_local_potential(nn11, unit_kick, 0, [0.0], with_fit=False)
        assert pot0.potential[0] == pytest.approx(1.5, abs=1e-8)


class TestGrowthConstantIdentity:
    def test_nearest_neighbor(self, nn11):
        disp = analyze_dispersion(nn11)
        rep = verify_Dn_equals_dn(disp, 1.0, range(-8, 9))
        assert rep.max_abs_diff <= 1e-10

    def test_interior_critical_point(self, multi_critical):
        disp = analyze_dispersion(multi_critical)
        rep = verify_Dn_equals_dn(disp, 1.0, range(-8, 9))
        assert rep.max_abs_diff <= 1e-10

    def test_sigma_scaling(self, nn11):
        disp = analyze_dispersion(nn11)
        r1 = verify_Dn_equals_dn(disp, 1.0, range(-2, 3))
        r2 = verify_Dn_equals_dn(disp, 2.0, range(-2, 3))
        assert np.allclose(r2.double_sum, 4.0 * r1.double_sum, rtol=1e-14)
        assert np.allclose(r2.direct, 4.0 * r1.direct, rtol=1e-14)

    def test_refused_without_assumptions(self, unpinned):
        disp = analyze_dispersion(unpinned)
        with pytest.raises(AssumptionError):
            verify_Dn_equals_dn(disp, 1.0, range(-2, 3))


def test_growth_constant_agrees_with_slope(nn11, zero_init):
    disp = analyze_dispersion(nn11)
    d0 = compute_dn(disp, 1.0, 0)
    kin = predict_local_kinetic(nn11, zero_init, 0, FIT_GRID)
    assert kin.fitted_slope_kinetic == pytest.approx(d0, rel=0.15)
