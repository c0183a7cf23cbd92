import math

import numpy as np
import pytest
from scipy.linalg import expm

from zpcool import moments
from zpcool.errors import DomainError, InstabilityError, InvalidRegimeError, NoRootError, SingularSystemError, ZeroRateError
from zpcool.moments import ExtendedMomentState, MomentState
from zpcool.params import SWEEP_RATES, Kind, SystemParams

SMALL = SystemParams(G=1.0, kappa_ex=3.0, gamma=1.0, Nbar=1.0, eta=1.0)

# d<moments>/dt of the truncated-Fock no-click generator at the Gaussian state
# (u, n_opt, n_mech) = (0.3, 0.2, 1.5), cutoff 16 x 40, frozen.
ORACLE_DRIFT = (-4.159999979436169, -1.739999978600526, -0.8349997728807068)
# Long-time truncated-Fock no-click state for SMALL (12 x 30), frozen.
ORACLE_NO_CLICK_SS = (-0.3269005412233263, 0.05180016633082532, 0.7564017569622297)


def stokes_closed_form(p):
    G, k, g, N = p.G, p.kappa, p.gamma, p.Nbar
    D = (g + k) * (g * k - G * G)
    return np.array([-2 * G * g * k * (N + 1) / D, G * G * g * (N + 1) / D,
                     (N * g * (k * (g + k) - G * G) + G * G * k) / D])


class TestDrift:
    def test_bath_state(self):
        p = SystemParams(G=0.7, kappa_ex=2.0, Nbar=10.0, eta=0.6)
        for eta in (0.0, 0.4, 1.0):
            np.testing.assert_allclose(moments.drift(MomentState("as", 0, 0, 10), p, eta), [-14.0, 0, 0])

    @pytest.mark.parametrize("kind", list(Kind))
    def test_steady_state_is_fixed_point(self, kind):
        p = SystemParams.from_cooperativity(0.4, Nbar=3.0, **SWEEP_RATES)
        ss = moments.unconditioned_steady_state(kind, p)
        np.testing.assert_allclose(moments.drift(ss, p, 0.0), 0, atol=1e-12)

    def test_matches_frozen_oracle(self):
        d = moments.drift(MomentState("as", 0.3, 0.2, 1.5), SMALL)
        np.testing.assert_allclose(d, ORACLE_DRIFT, rtol=1e-4)

    def test_jacobian(self):
        p = SystemParams(G=0.9, kappa_ex=2.0, kappa_in=0.3, gamma=0.8, Nbar=2.0)
        v = np.array([0.2, 0.5, 1.7])
        for kind in Kind:
            J = moments.drift_jacobian(kind, p, 0.7, v)
            h = 1e-6
            num = np.column_stack([(moments._drift_vec(kind, p, 0.7, v + h * e) - moments._drift_vec(kind, p, 0.7, v - h * e))
                                   / (2 * h) for e in np.eye(3)])
            np.testing.assert_allclose(J, num, atol=1e-8)

    def test_bad_eta(self):
        with pytest.raises(DomainError):
            moments.drift(MomentState("as", 0, 0, 1), SMALL, 1.2)


class TestIntegrate:
    def test_relaxes_to_steady_state(self):
        p = SystemParams(G=1.0, kappa_ex=3.0, gamma=1.0, Nbar=10.0)
        tr = moments.integrate(MomentState.bath_equilibrium("as", p), p, 0.0, (0, 60), tol=1e-11, atol=1e-13)
        np.testing.assert_allclose(tr.final.as_array(), moments.unconditioned_steady_state("as", p).as_array(),
                                   rtol=1e-8, atol=1e-10)

    def test_matrix_exponential(self):
        p = SystemParams(G=0.8, kappa_ex=2.0, kappa_in=0.5, gamma=0.7, Nbar=3.0)
        A, n = moments.drift_matrix("as", p)
        v0 = np.array([0.4, 1.2, 0.5])
        ts = np.linspace(0, 6, 25)
        vss = np.linalg.solve(A, -n)
        exact = np.array([vss + expm(A * t) @ (v0 - vss) for t in ts])
        tr = moments.integrate(MomentState.from_array("as", v0), p, 0.0, (0, 6), tol=1e-10, atol=1e-12, t_eval=ts)
        np.testing.assert_allclose(tr.y, exact, atol=1e-8)

    def test_stokes_above_boundary_rejected(self):
        p = SystemParams(G=math.sqrt(2 * 40.0), kappa_ex=40.0, gamma=1.0, Nbar=5.0)
        with pytest.raises(InstabilityError):
            moments.integrate(MomentState.bath_equilibrium("s", p), p, 0.0, (0, 10))

    def test_ceiling(self):
        p = SystemParams(G=math.sqrt(2 * 40.0), kappa_ex=40.0, gamma=1.0, Nbar=5.0)
        with pytest.raises(InstabilityError, match="ceiling"):
            moments.integrate(MomentState.bath_equilibrium("s", p), p, 0.0, (0, 1e3), allow_unstable=True,
                              ceiling=1e6)

    def test_log_probability(self):
        # constant n_opt = 0 makes the record certain
        p = SystemParams(G=0.0, kappa_ex=3.0, gamma=1.0, Nbar=2.0)
        tr = moments.integrate(MomentState("as", 0, 0, 2), p, 1.0, (0, 5))
        assert tr.log_p[-1] == 0.0

    def test_conditioned_drift_refused_inside_window(self):
        st = MomentState("as", 0.1, 0.2, 1.0, click_age=0.0)
        with pytest.raises(DomainError):
            moments.integrate(st, SMALL, 1.0, (0, 0.5))
        moments.integrate(st, SMALL, 0.0, (0, 0.5))
        moments.integrate(moments.with_click_age(st, 10.0), SMALL, 1.0, (0, 0.5))


class TestSteadyStates:
    def test_decoupled(self):
        p = SystemParams(G=0.0, kappa_ex=4.0, gamma=1.0, Nbar=7.0)
        np.testing.assert_allclose(moments.unconditioned_steady_state("as", p).as_array(), [0, 0, 7])

    def test_weak_coupling(self):
        p = SystemParams.from_cooperativity(0.01, Nbar=5.0, **SWEEP_RATES)
        n = moments.unconditioned_steady_state("as", p).n_mech
        assert abs(n - 5.0 / 1.01) / (5.0 / 1.01) < 1e-3

    def test_stokes_closed_form(self):
        p = SystemParams.from_cooperativity(0.5, Nbar=5.0, **SWEEP_RATES)
        np.testing.assert_allclose(moments.unconditioned_steady_state("s", p).as_array(), stokes_closed_form(p),
                                   rtol=1e-12)

    def test_stokes_boundary(self):
        with pytest.raises(SingularSystemError):
            moments.unconditioned_steady_state("s", SystemParams.from_cooperativity(1.0, **SWEEP_RATES))
        with pytest.raises(InvalidRegimeError):
            moments.unconditioned_steady_state("s", SystemParams.from_cooperativity(2.0, **SWEEP_RATES))

    def test_no_bath(self):
        with pytest.raises(DomainError):
            moments.unconditioned_steady_state("as", SystemParams(G=1.0, kappa_ex=1.0, gamma=0.0))
        with pytest.raises(DomainError):
            moments.conditioned_steady_state("as", SystemParams(G=1.0, kappa_ex=1.0, gamma=0.0), 0.5)

    @pytest.mark.parametrize("kind", list(Kind))
    def test_small_eta_continuity(self, kind):
        p = SystemParams.from_cooperativity(0.3, Nbar=5.0, **SWEEP_RATES)
        unc = moments.unconditioned_steady_state(kind, p).as_array()
        cond = moments.conditioned_steady_state(kind, p, 1e-9).state.as_array()
        np.testing.assert_allclose(cond, unc, rtol=1e-6)

    def test_decreasing_in_eta(self):
        for C in (0.05, 1.0, 10.0):
            p = SystemParams.from_cooperativity(C, Nbar=5.0, **SWEEP_RATES)
            ns = [moments.conditioned_steady_state("as", p, e).state.n_mech for e in np.linspace(0, 1, 11)]
            assert np.all(np.diff(ns) < 0)

    def test_matches_frozen_oracle(self):
        ss = moments.conditioned_steady_state("as", SMALL)
        np.testing.assert_allclose(ss.state.as_array(), ORACLE_NO_CLICK_SS, rtol=1e-3)
        assert ss.residual < 1e-10
        assert ss.state.is_physical()

    def test_stokes_conditioned_above_boundary(self):
        # monitoring stabilizes the amplifier: a physical stable fixed point exists at C > 1
        p = SystemParams.from_cooperativity(1.5, Nbar=5.0, **SWEEP_RATES)
        ss = moments.conditioned_steady_state("s", p, 1.0)
        assert ss.state.is_physical()
        assert np.linalg.eigvals(moments.drift_jacobian("s", p, 1.0, ss.state.as_array())).real.max() < 0


class TestClick:
    def test_uncorrelated(self):
        np.testing.assert_allclose(moments.apply_click(MomentState("as", 0, 0.3, 2.0)).as_array(), [0, 0.6, 2.0])

    def test_zero_rate(self):
        with pytest.raises(ZeroRateError):
            moments.apply_click(MomentState("as", 0, 0, 2.0))

    def test_click_resets_age(self):
        assert moments.apply_click(MomentState("s", 0.1, 0.3, 2.0)).click_age == 0.0

    @pytest.mark.parametrize("kind,expected", [("as", lambda n: 2 * n), ("s", lambda n: 2 * n + 1)])
    def test_adiabatic_limit(self, kind, expected):
        G, gamma = 1.0, 1.0
        p = SystemParams(G=G, kappa_ex=100 * max(G, gamma), gamma=gamma, Nbar=5.0)
        ss = moments.unconditioned_steady_state(kind, p)
        after = moments.apply_click(ss).n_mech
        assert after == pytest.approx(expected(ss.n_mech), rel=1e-2)


class TestStability:
    def test_decoupled_eigenvalues(self):
        p = SystemParams(G=0.0, kappa_ex=3.0, kappa_in=1.0, gamma=0.5)
        ev = np.sort(moments.stability_eigenvalues("as", p).real)
        np.testing.assert_allclose(ev, np.sort([-4.5, -8.0, -1.0]))

    def test_boundary_root(self):
        from scipy.optimize import brentq

        root = brentq(lambda C: moments.stability_eigenvalues("s", SystemParams.from_cooperativity(C, **SWEEP_RATES))
                      .real.max(), 0.5, 1.5, xtol=1e-14, rtol=1e-15)
        assert abs(root - 1) < 1e-9
        at = moments.stability_eigenvalues("s", SystemParams.from_cooperativity(1.0, **SWEEP_RATES)).real.max()
        assert abs(at) < 1e-9

    def test_anti_stokes_stable(self):
        for C in np.geomspace(0.01, 20, 30):
            p = SystemParams.from_cooperativity(C, Nbar=5.0, **SWEEP_RATES)
            assert moments.stability_eigenvalues("as", p).real.max() < 0


class TestThreshold:
    def test_value(self):
        p = SystemParams.from_cooperativity(0.5, Nbar=5.0, **SWEEP_RATES)
        res = moments.threshold_efficiency_continuous(p)
        assert abs(res.eta_star - 0.17) <= 0.02
        assert res.bracket[1] - res.bracket[0] < 1e-6
        lo = moments.conditioned_steady_state("s", p, res.bracket[0], tol=1e-11).state.n_mech
        hi = moments.conditioned_steady_state("s", p, res.bracket[1], tol=1e-11).state.n_mech
        assert lo > 5.0 > hi

    def test_hot_bath(self):
        p = SystemParams.from_cooperativity(0.5, Nbar=500.0, **SWEEP_RATES)
        assert moments.threshold_efficiency_continuous(p).eta_star < 0.01

    def test_no_root(self):
        p = SystemParams.from_cooperativity(0.1, kappa_ex=3.0, gamma=1.0, Nbar=0.1)
        with pytest.raises(NoRootError):
            moments.threshold_efficiency_continuous(p)

    def test_requires_stokes(self):
        with pytest.raises(DomainError):
            moments.threshold_efficiency_continuous(SMALL, kind="as")


class TestExtended:
    @pytest.mark.parametrize("kind", list(Kind))
    def test_zero_anomalous_is_closed(self, kind):
        st = ExtendedMomentState.from_moments(MomentState(kind, 0.2, 0.4, 1.3))
        d = moments.extended_drift(st, SMALL, 0.8)
        assert np.all(d[3:] == 0)

    def test_decoupled_decay(self):
        p = SystemParams(G=0.0, kappa_ex=1.5, kappa_in=0.5, gamma=1.0, Nbar=1.0)
        st = ExtendedMomentState("as", 0j, 0.5, 1.0, c_aa=0.1 + 0j)
        ts = np.linspace(0, 2, 9)
        tr = moments.integrate_extended(st, p, 0.0, (0, 2), t_eval=ts, tol=1e-11, atol=1e-14)
        np.testing.assert_allclose(tr.y[:, 3].real, 0.1 * np.exp(-2 * p.kappa * ts), rtol=1e-8)

    @pytest.mark.parametrize("kind", list(Kind))
    def test_rk4_step_self_consistency(self, kind):
        rng = np.random.default_rng(4)
        v = np.array([0.1 + 0.05j, 0.4, 1.1, 0.03 - 0.02j, 0.02 + 0.01j, -0.01 + 0.04j]) * (1 + 0.1 * rng.random(6))
        st = ExtendedMomentState.from_array(kind, v)
        p = SystemParams(G=0.6, kappa_ex=1.2, kappa_in=0.2, gamma=0.5, Nbar=1.0)
        f = lambda y: moments._extended_vec(Kind.parse(kind), p, 0.7, y)
        h = 1e-3
        y0 = st.as_array()
        k1 = f(y0)
        k2 = f(y0 + 0.5 * h * k1)
        k3 = f(y0 + 0.5 * h * k2)
        k4 = f(y0 + h * k3)
        rk4 = y0 + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        tr = moments.integrate_extended(st, p, 0.7, (0, h), tol=1e-12, atol=1e-15)
        np.testing.assert_allclose(tr.y[-1], rk4, atol=1e-12)

    @pytest.mark.parametrize("kind", list(Kind))
    @pytest.mark.parametrize("eta", [0.0, 1.0])
    def test_closure(self, kind, eta):
        p = SystemParams.from_cooperativity(0.5, kappa_ex=3.0, gamma=1.0, Nbar=4.0)
        st = ExtendedMomentState.from_moments(MomentState.bath_equilibrium(kind, p))
        tr = moments.integrate_extended(st, p, eta, (0, 10 / p.gamma), tol=1e-10)
        assert tr.max_anomalous() < 1e-10

    @pytest.mark.parametrize("kind", list(Kind))
    def test_extended_click_reduces_to_real_map(self, kind):
        ms = MomentState(kind, 0.3, 0.2, 1.5)
        ext = moments.apply_click_extended(ExtendedMomentState.from_moments(ms))
        np.testing.assert_allclose(ext.reduced().as_array(), moments.apply_click(ms).as_array(), rtol=1e-14)

    def test_a2_triples(self):
        st = ExtendedMomentState("as", 0.01j, 0.5, 1.0, c_aa=0.05 + 0.02j)
        assert moments.apply_click_extended(st).c_aa == pytest.approx(3 * (0.05 + 0.02j))


class TestPhysicality:
    def test_physical_states(self):
        assert MomentState("as", 0.3, 0.2, 1.5).is_physical()
        assert moments.unconditioned_steady_state("s", SystemParams.from_cooperativity(0.5, Nbar=1.0, **SWEEP_RATES)) \
            .is_physical()

    def test_cauchy_schwarz_violation(self):
        assert not MomentState("as", 2.0, 0.1, 0.1).is_physical()
        assert not MomentState("as", 0.0, -0.1, 1.0).is_physical()
