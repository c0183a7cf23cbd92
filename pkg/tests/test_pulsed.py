import math

import numpy as np
import pytest

from zpcool import fock, pulsed
from zpcool.errors import DomainError

# Values computed once by the truncated-Fock pipeline (sector form) and frozen.
ORACLE_AS_ZERO = (1.4354832467896546, 0.8460408854880951)  # nbar=2, gtau=0.4, eta=0.6, cutoff 80
ORACLE_AS_TWO = (3.1656602159344045, 0.06794474682298876)  # nbar=2, gtau=0.5, n=2, cutoff 80
ORACLE_S_ONE = (2.80506771326562, 0.24762508772428174)  # nbar=2, gtau=0.6, n=1, cutoff 200


class TestAntiStokesZeroClick:
    def test_identity_pulse(self):
        r = pulsed.pulsed_as_zero_click(5, 0.0, 0.7)
        assert r.occupation == 5 and r.probability == 1

    def test_full_swap_empties_mechanics(self):
        assert pulsed.pulsed_as_zero_click(500, math.pi / 2, 0.3, cutoff=0).occupation == pytest.approx(0, abs=1e-25)

    def test_matches_frozen_oracle(self):
        r = pulsed.pulsed_as_zero_click(2, 0.4, 0.6, cutoff=0)
        assert r.occupation == pytest.approx(ORACLE_AS_ZERO[0], rel=1e-8)
        assert r.probability == pytest.approx(ORACLE_AS_ZERO[1], rel=1e-8)

    @pytest.mark.parametrize("bad", [(-1, 0.2, 0.5), (1, 0.2, 1.5), (1, 0.2, -0.1), (1, -0.2, 0.5)])
    def test_domain(self, bad):
        with pytest.raises(DomainError):
            pulsed.pulsed_as_zero_click(*bad)

    def test_weights_are_thermal(self):
        r = pulsed.pulsed_as_zero_click(3.0, 0.7, 0.4)
        w = r.fock_weights
        q = r.occupation / (1 + r.occupation)
        np.testing.assert_allclose(w[:20], (1 - q) * q ** np.arange(20), rtol=1e-12)
        assert 1 - w.sum() < 1e-10
        assert np.dot(np.arange(w.size), w) == pytest.approx(r.occupation, rel=1e-8)


class TestAntiStokesNClick:
    def test_identity(self):
        r = pulsed.pulsed_as_n_click(3, 0.0, 0)
        assert (r.occupation, r.probability) == (3, 1)

    def test_no_scattering_no_photon(self):
        assert pulsed.pulsed_as_n_click(3, 0.0, 1).probability == 0

    def test_matches_frozen_oracle(self):
        r = pulsed.pulsed_as_n_click(2, 0.5, 2, cutoff=0)
        assert r.occupation == pytest.approx(ORACLE_AS_TWO[0], rel=1e-8)
        assert r.probability == pytest.approx(ORACLE_AS_TWO[1], rel=1e-8)

    def test_weights_mean(self):
        r = pulsed.pulsed_as_n_click(2.0, 0.9, 3)
        w = r.fock_weights
        assert np.dot(np.arange(w.size), w) / w.sum() == pytest.approx(r.occupation, rel=1e-9)

    @pytest.mark.parametrize("n", [-1, 1.5, True])
    def test_bad_click_count(self, n):
        with pytest.raises(DomainError):
            pulsed.pulsed_as_n_click(1.0, 0.3, n)


class TestLaserCooled:
    def test_values(self):
        assert pulsed.laser_cooled_occupation(5, math.pi / 2) == pytest.approx(0, abs=1e-28)
        assert pulsed.laser_cooled_occupation(5, math.pi) == pytest.approx(5, rel=1e-15)

    def test_is_click_average(self):
        nbar, gtau = 500.0, 0.3
        total = norm = 0.0
        for n in range(4000):
            r = pulsed.pulsed_as_n_click(nbar, gtau, n, cutoff=0)
            total += r.probability * r.occupation
            norm += r.probability
        assert norm == pytest.approx(1, abs=1e-9)
        assert total == pytest.approx(pulsed.laser_cooled_occupation(nbar, gtau), rel=1e-6)

    def test_equals_zero_click_at_zero_efficiency(self):
        for g in np.linspace(0, 3, 7):
            assert pulsed.pulsed_as_zero_click(7.0, g, 0.0, cutoff=0).occupation == pytest.approx(
                pulsed.laser_cooled_occupation(7.0, g), rel=1e-15, abs=1e-300)


class TestStokesZeroClick:
    def test_identity(self):
        r = pulsed.pulsed_s_zero_click(4, 0.0, 0.9)
        assert (r.occupation, r.probability) == (4, 1)

    def test_vacuum_stays_vacuum(self):
        assert pulsed.pulsed_s_zero_click(0, 2.0, 1.0).occupation == 0

    @pytest.mark.parametrize("gtau", [20.0, 100.0, 1000.0])
    def test_long_pulse_limit(self, gtau):
        r = pulsed.pulsed_s_zero_click(500, gtau, 0.5, cutoff=0)
        assert r.occupation == pytest.approx(1.0, rel=1e-6)
        assert 0 <= r.probability < 1e-6

    def test_branches_agree_at_switch(self):
        g = math.asinh(math.sqrt(pulsed.SINH2_SWITCH))
        lo = pulsed.pulsed_s_zero_click(5.0, g * (1 - 1e-9), 0.3, cutoff=0)
        hi = pulsed.pulsed_s_zero_click(5.0, g * (1 + 1e-9), 0.3, cutoff=0)
        assert lo.occupation == pytest.approx(hi.occupation, rel=1e-6)


class TestStokesNClick:
    def test_single_pair(self):
        assert pulsed.pulsed_s_n_click(0, 0.3, 1).occupation == pytest.approx(1.0, rel=1e-15)

    def test_identity(self):
        r = pulsed.pulsed_s_n_click(2, 0.0, 0)
        assert (r.occupation, r.probability) == (2, 1)

    def test_matches_frozen_oracle(self):
        r = pulsed.pulsed_s_n_click(2, 0.6, 1, cutoff=0)
        assert r.occupation == pytest.approx(ORACLE_S_ONE[0], rel=1e-8)
        assert r.probability == pytest.approx(ORACLE_S_ONE[1], rel=1e-8)

    def test_weights_support_starts_at_n(self):
        w = pulsed.pulsed_s_n_click(1.0, 0.4, 3).fock_weights
        assert np.all(w[:3] == 0) and w[3] > 0


class TestTms:
    def test_zero(self):
        assert pulsed.tms_occupation(0, 0) == 0

    @pytest.mark.parametrize("nbar,gtau", [(0.0, 0.1), (3.0, 1.2), (500.0, 2.5)])
    def test_equals_zero_click_at_zero_efficiency(self, nbar, gtau):
        assert pulsed.tms_occupation(nbar, gtau) == pulsed.pulsed_s_zero_click(nbar, gtau, 0.0, cutoff=0).occupation

    def test_is_click_average(self):
        total = norm = 0.0
        for n in range(400):
            r = pulsed.pulsed_s_n_click(2.0, 0.6, n, cutoff=0)
            total += r.probability * r.occupation
            norm += r.probability
        assert norm == pytest.approx(1, abs=1e-9)
        assert total == pytest.approx(pulsed.tms_occupation(2.0, 0.6), rel=1e-9)

    def test_overflow_guard(self):
        assert pulsed.tms_occupation(1.0, 400.0) == math.inf
        assert math.isfinite(pulsed.tms_occupation(1.0, 300.0))


class TestThreshold:
    def test_values(self):
        assert pulsed.pulsed_threshold_efficiency(500) == 1 / 501
        assert pulsed.pulsed_threshold_efficiency(0) == 1

    def test_identity_at_threshold(self):
        eta = pulsed.pulsed_threshold_efficiency(4)
        assert eta == pytest.approx(0.2, rel=1e-15)
        assert pulsed.pulsed_s_zero_click(4, 1.0, eta, cutoff=0).occupation == pytest.approx(4, abs=1e-12)


@pytest.mark.slow
class TestAgainstOracle:
    """Recompute the frozen values from the oracle itself."""

    def test_as_zero(self):
        w, p = fock.pulsed_pipeline("as", 2.0, 0.4, 0.6, 80)
        assert (fock.mean_of(w), p) == pytest.approx(ORACLE_AS_ZERO, rel=1e-12)

    def test_as_two(self):
        w, p = fock.pulsed_pipeline("as", 2.0, 0.5, 1.0, 80, outcome=2)
        assert (fock.mean_of(w), p) == pytest.approx(ORACLE_AS_TWO, rel=1e-12)

    def test_s_one(self):
        w, p = fock.pulsed_pipeline("s", 2.0, 0.6, 1.0, 200, outcome=1)
        assert (fock.mean_of(w), p) == pytest.approx(ORACLE_S_ONE, rel=1e-12)

    def test_weights_against_oracle(self):
        w, _ = fock.pulsed_pipeline("s", 1.0, 0.5, 1.0, 120, outcome=2)
        ref = pulsed.pulsed_s_n_click(1.0, 0.5, 2, cutoff=w.size).fock_weights
        np.testing.assert_allclose(w[: ref.size], ref[: w.size], atol=1e-12)
