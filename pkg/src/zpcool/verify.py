"""End-to-end cross-checks between closed forms, moment dynamics and the Fock oracle.

Each check returns a :class:`CheckResult` with the expected and observed value
and the tolerance it was held to. A :class:`~zpcool.errors.TruncationError`
aborts the whole run: a cutoff that is too small invalidates every oracle
comparison after it.
"""

from __future__ import annotations

import contextlib
import math
import time
from dataclasses import dataclass, field
from unittest import mock

import numpy as np
from scipy.linalg import expm

from . import fock, moments, pulsed, scenario
from .errors import TruncationError
from .params import SCENARIO_PARAMS, SWEEP_RATES, Kind, SystemParams

HOOKS = ("flip-drift-sign",)


@dataclass
class Profile:
    """Cutoffs used by the oracle checks."""

    as_mech_cutoff: int = 80
    s_mech_cutoff: int = 200
    d_opt: int = 12
    d_mech: int = 30
    n_traj: int = 10_000


@dataclass
class CheckResult:
    name: str
    passed: bool
    expected: object
    actual: object
    tol: float
    seconds: float = 0.0
    note: str = ""

    def line(self) -> str:
        tag = "PASS" if self.passed else "FAIL"
        msg = f"{tag} {self.name} ({self.seconds:.2f} s)"
        if not self.passed:
            msg += f": expected {_fmt(self.expected)}, got {_fmt(self.actual)}, tol {self.tol:.1e}"
        if self.note:
            msg += f" [{self.note}]"
        return msg


def _fmt(x):
    if isinstance(x, (float, np.floating)):
        return f"{x:.12g}"
    if isinstance(x, (list, tuple, np.ndarray)):
        return "[" + ", ".join(_fmt(v) for v in np.ravel(x)) + "]"
    return repr(x)


def rel_err(actual, expected, floor=0.0):
    actual = np.asarray(actual, dtype=float)
    expected = np.asarray(expected, dtype=float)
    scale = np.maximum(np.abs(expected), floor)
    with np.errstate(divide="ignore", invalid="ignore"):
        err = np.where(scale > 0, np.abs(actual - expected) / np.where(scale > 0, scale, 1.0), np.abs(actual - expected))
    return float(np.max(err))


def _result(name, expected, actual, tol, floor=0.0, note=""):
    err = rel_err(actual, expected, floor)
    return CheckResult(name, bool(err < tol), expected, actual, tol, note=note or f"rel err {err:.2e}")


# ---------------------------------------------------------------------------
# independent references


def as_steady_state_closed_form(p: SystemParams):
    G, k, g, N = p.G, p.kappa, p.gamma, p.Nbar
    D = (g + k) * (G * G + g * k)
    return np.array([-2 * G * N * g * k / D, N * G * G * g / D, N * g * (G * G + k * (g + k)) / D])


def s_steady_state_closed_form(p: SystemParams):
    G, k, g, N = p.G, p.kappa, p.gamma, p.Nbar
    D = (g + k) * (g * k - G * G)
    return np.array(
        [-2 * G * g * k * (N + 1) / D, G * G * g * (N + 1) / D, (N * g * (k * (g + k) - G * G) + G * G * k) / D]
    )


def _exact_drift(state: fock.JointDensityMatrix, params, kind, eta):
    """d<O>/dt of the normalized no-click evolution, taken from the oracle generator."""
    gen = fock._Generator(params, kind, state.d_opt, state.d_mech, eta)
    L = gen(state.data.ravel()).reshape(state.dim, state.dim)
    h = 1e-6
    plus = fock.second_moments(state._with(state.data + h * L))
    minus = fock.second_moments(state._with(state.data - h * L))
    ext_p = moments.moments_from_fock(plus, kind).as_array()
    ext_m = moments.moments_from_fock(minus, kind).as_array()
    return (ext_p - ext_m) / (2 * h)


# ---------------------------------------------------------------------------
# checks


def check_as_zero_click(prof):
    w, p = fock.pulsed_pipeline("as", 2.0, 0.4, 0.6, prof.as_mech_cutoff)
    r = pulsed.pulsed_as_zero_click(2.0, 0.4, 0.6, cutoff=0)
    return _result("pulsed.as_zero_click_vs_oracle", [r.occupation, r.probability], [fock.mean_of(w), p], 1e-8)


def check_as_n_click(prof):
    w, p = fock.pulsed_pipeline("as", 2.0, 0.5, 1.0, prof.as_mech_cutoff, outcome=2)
    r = pulsed.pulsed_as_n_click(2.0, 0.5, 2, cutoff=0)
    return _result("pulsed.as_two_click_vs_oracle", [r.occupation, r.probability], [fock.mean_of(w), p], 1e-8)


def check_s_n_click(prof):
    w, p = fock.pulsed_pipeline("s", 2.0, 0.6, 1.0, prof.s_mech_cutoff, outcome=1)
    r = pulsed.pulsed_s_n_click(2.0, 0.6, 1, cutoff=0)
    return _result("pulsed.s_one_click_vs_oracle", [r.occupation, r.probability], [fock.mean_of(w), p], 1e-8)


def check_dense_vs_sector(prof):
    d_opt = d_mech = 20
    s = fock.thermal_product_state(0.5, d_opt, d_mech)
    s = fock.apply_pulsed_unitary(s, "as", 0.7)
    s = fock.apply_loss(s, 0.3)
    c, p = fock.project_photon_number(s, 0)
    dense = np.real(np.diag(c.mechanical_marginal()))
    w, p2 = fock.pulsed_pipeline("as", 0.5, 0.7, 0.3, d_mech)
    return _result("fock.dense_pipeline_vs_sectors", np.append(dense, p), np.append(w, p2), 1e-12, floor=1.0)


def check_lc_average(prof):
    nbar, gtau = 500.0, 0.3
    x = nbar * math.sin(gtau) ** 2
    total, n = 0.0, 0
    while True:
        r = pulsed.pulsed_as_n_click(nbar, gtau, n, cutoff=0)
        total += r.probability * r.occupation
        if n > 10 * x and r.probability * r.occupation < 1e-18:
            break
        n += 1
    return _result("pulsed.laser_cooled_is_click_average", pulsed.laser_cooled_occupation(nbar, gtau), total, 1e-6)


def check_tms_average(prof):
    nbar, gtau = 2.0, 0.6
    total, n = 0.0, 0
    while True:
        r = pulsed.pulsed_s_n_click(nbar, gtau, n, cutoff=0)
        total += r.probability * r.occupation
        if n > 50 and r.probability * r.occupation < 1e-18:
            break
        n += 1
    return _result("pulsed.tms_is_click_average", pulsed.tms_occupation(nbar, gtau), total, 1e-6)


def check_threshold_identity(prof):
    eta = pulsed.pulsed_threshold_efficiency(4.0)
    occ = pulsed.pulsed_s_zero_click(4.0, 1.0, eta, cutoff=0).occupation
    return CheckResult("pulsed.threshold_identity", abs(occ - 4.0) < 1e-12, 4.0, occ, 1e-12)


def check_tms_vacuum(prof):
    s = fock.thermal_product_state(0.0, 30, 30)
    s = fock.apply_pulsed_unitary(s, "s", 0.5)
    m = fock.second_moments(s)
    sh2 = math.sinh(0.5) ** 2
    res = _result("fock.two_mode_squeezed_vacuum", [sh2, sh2, math.sinh(0.5) * math.cosh(0.5)],
                  [m.n_opt, m.n_mech, abs(m.ab)], 1e-8)
    lossy = fock.second_moments(fock.apply_loss(s, 0.6))
    res2 = _result("fock.loss_scales_photon_number", 0.6 * sh2, lossy.n_opt, 1e-8)
    return [res, res2]


def check_stokes_closed_form(prof):
    p = SystemParams.from_cooperativity(0.5, Nbar=5.0, **SWEEP_RATES)
    v = moments.unconditioned_steady_state("s", p).as_array()
    return _result("moments.stokes_steady_state_closed_form", s_steady_state_closed_form(p), v, 1e-12)


def check_expm_solution(prof):
    p = SystemParams(G=0.8, kappa_ex=2.0, kappa_in=0.5, gamma=0.7, Nbar=3.0)
    A, n = moments.drift_matrix("as", p)
    v0 = np.array([0.4, 1.2, 0.5])
    ts = np.linspace(0, 6, 13)
    vss = np.linalg.solve(A, -n)
    exact = np.array([vss + expm(A * t) @ (v0 - vss) for t in ts])
    tr = moments.integrate(moments.MomentState.from_array("as", v0), p, 0.0, (0, 6), tol=1e-10, atol=1e-12, t_eval=ts)
    err = float(np.abs(tr.y - exact).max())
    return CheckResult("moments.unconditioned_matches_matrix_exponential", err < 1e-8, 0.0, err, 1e-8)


def check_drift_vs_oracle(prof):
    p = SystemParams(G=1.0, kappa_ex=3.0, gamma=1.0, Nbar=1.0, eta=1.0)
    state = fock.gaussian_state("as", 0.3, 0.2, 1.5, 16, 40)
    fm = fock.second_moments(state)
    ms = moments.MomentState("as", fm.u("as"), fm.n_opt, fm.n_mech)
    exact = _exact_drift(state, p, "as", 1.0)
    exact3 = np.array([(2j * exact[0]).real, exact[1].real, exact[2].real])
    return _result("moments.drift_vs_oracle_generator", exact3, moments.drift(ms, p), 1e-6, floor=1.0)


def check_extended_vs_oracle(prof):
    import scipy.sparse as sp

    p = SystemParams(G=0.7, kappa_ex=1.3, kappa_in=0.4, gamma=0.6, Nbar=0.8, eta=0.7)
    d = 30
    a, b = fock.ladder_ops(d, d)
    s = fock.thermal_product_state(0.2, d, d)
    gens = [
        0.5 * (0.15j * np.exp(0.3j) * (a @ a)),
        0.05 * (np.exp(0.7j) * (b @ b)),
        0.1 * (np.exp(1.1j) * (a @ b)),
        0.15 * (np.exp(0.4j) * (a.T @ b)),
    ]
    for g in gens:
        H = sp.csr_matrix(g + g.conj().T)
        s = fock.apply_generator(s, H, 1.0)
    out = []
    for kind in Kind:
        exact = _exact_drift(s, p, kind, p.eta)
        ext = moments.moments_from_fock(fock.second_moments(s), kind)
        ana = moments.extended_drift(ext, p)
        err = float(np.abs(exact - ana).max())
        out.append(CheckResult(f"moments.extended_drift_vs_oracle[{kind.short}]", err < 1e-6, 0.0, err, 1e-6))
        c, _ = fock.apply_click_jump_exact(s)
        exact_c = moments.moments_from_fock(fock.second_moments(c), kind).as_array()
        err_c = float(np.abs(moments.apply_click_extended(ext).as_array() - exact_c).max())
        out.append(CheckResult(f"moments.extended_click_vs_oracle[{kind.short}]", err_c < 1e-8, 0.0, err_c, 1e-8))
    return out


def check_click_map(prof):
    out = []
    for kind in Kind:
        worst = 0.0
        for u, no, nm in ((0.1, 0.05, 0.8), (-0.2, 0.3, 0.6), (0.15, 0.1, 0.4)):
            st = fock.gaussian_state(kind, u, no, nm, 20, 40)
            fm = fock.second_moments(st)
            ms = moments.MomentState(kind, fm.u(kind), fm.n_opt, fm.n_mech)
            post, _ = fock.apply_click_jump_exact(st)
            fp = fock.second_moments(post)
            worst = max(worst, rel_err(moments.apply_click(ms).as_array(), [fp.u(kind), fp.n_opt, fp.n_mech]))
        out.append(CheckResult(f"moments.click_map_vs_exact_jump[{kind.short}]", worst < 1e-8, 0.0, worst, 1e-8))
    return out


def check_jump_after_evolution(prof):
    """Evolve oracle and moments from bath equilibrium, click both, compare."""
    p = SystemParams(G=1.0, kappa_ex=3.0, gamma=1.0, Nbar=1.0, eta=1.0)
    s0 = fock.thermal_product_state(1.0, prof.d_opt, prof.d_mech)
    s1 = fock.evolve_unconditional(s0, p, 1.0, 5e-3)
    post, _ = fock.apply_click_jump_exact(s1)
    fp = fock.second_moments(post)
    m0 = moments.MomentState.bath_equilibrium("as", p)
    m1 = moments.integrate(m0, p, 0.0, (0.0, 1.0), tol=1e-11, atol=1e-13).final
    mp = moments.apply_click(m1)
    return _result("moments.jump_map_after_evolution", [fp.u("as"), fp.n_opt, fp.n_mech], mp.as_array(), 1e-6)


def check_no_click_dynamics(prof):
    p = SystemParams(G=1.0, kappa_ex=3.0, gamma=1.0, Nbar=1.0, eta=1.0)
    s0 = fock.thermal_product_state(1.0, prof.d_opt, prof.d_mech)
    samples = []
    _, log_p = fock.evolve_conditioned_no_click(s0, p, 2.0, 5e-3, observer=lambda t, s: fock.second_moments(s).n_mech,
                                                samples=samples)
    ts = np.array([t for t, _ in samples])
    nm = np.array([v for _, v in samples])
    tr = moments.integrate(moments.MomentState.bath_equilibrium("as", p), p, 1.0, (0, 2), tol=1e-11, atol=1e-13,
                           t_eval=ts)
    dev = float(np.max(np.abs(nm / tr.y[:, 2] - 1)))
    dp = abs(math.exp(log_p) - math.exp(tr.log_p[-1]))
    return [
        CheckResult("oracle.no_click_n_mech_vs_moments", dev < 1e-3, 0.0, dev, 1e-3),
        CheckResult("oracle.no_click_probability_vs_moments", dp < 1e-6, math.exp(tr.log_p[-1]), math.exp(log_p), 1e-6),
    ]


def check_conditioned_steady_state(prof):
    p = SystemParams(G=1.0, kappa_ex=3.0, gamma=1.0, Nbar=1.0, eta=1.0)
    ss = moments.conditioned_steady_state("as", p).state
    s = fock.thermal_product_state(1.0, prof.d_opt, prof.d_mech)
    s, _ = fock.evolve_conditioned_no_click(s, p, 15.0, 5e-3)
    fm = fock.second_moments(s)
    return _result("oracle.conditioned_steady_state", ss.as_array(), [fm.u("as"), fm.n_opt, fm.n_mech], 1e-3)


def check_record_probability(prof):
    p = SystemParams(G=1.0, kappa_ex=3.0, gamma=1.0, Nbar=1.0, eta=1.0)
    sc = scenario.Scenario("as", [scenario.ZeroClick(1.5)], params=p)
    res = scenario.run_scenario(sc)
    s0 = fock.thermal_product_state(1.0, prof.d_opt, prof.d_mech)
    log_trace = fock.no_click_trace_decay(s0, p, 1.5, 5e-3)
    return CheckResult("scenario.record_probability_vs_oracle_trace", abs(math.exp(res.log_record_probability)
                       - math.exp(log_trace)) < 1e-6, math.exp(log_trace), math.exp(res.log_record_probability), 1e-6)


def check_stability_boundary(prof):
    from scipy.optimize import brentq

    def f(C):
        p = SystemParams.from_cooperativity(C, **SWEEP_RATES)
        return moments.stability_eigenvalues("s", p).real.max()

    root = brentq(f, 0.5, 1.5, xtol=1e-14, rtol=1e-14)
    return CheckResult("moments.stokes_stability_boundary", abs(root - 1.0) < 1e-9, 1.0, root, 1e-9)


def check_sweep_eta0(prof):
    worst = 0.0
    for C in (0.1, 0.5, 0.9):
        for kind, ref in ((Kind.ANTI_STOKES, as_steady_state_closed_form), (Kind.STOKES, s_steady_state_closed_form)):
            p = SystemParams.from_cooperativity(C, Nbar=5.0, **SWEEP_RATES)
            v = moments.conditioned_steady_state(kind, p, 0.0).state.as_array()
            worst = max(worst, rel_err(v, ref(p)))
    return CheckResult("sweep.eta0_column_closed_forms", worst < 1e-10, 0.0, worst, 1e-10)


def check_click_after_monitoring(prof):
    p = SCENARIO_PARAMS
    sc = scenario.Scenario("as", [scenario.Unconditioned(15.0), scenario.ZeroClick(15.0), scenario.ClickAt(30.0),
                                  scenario.Unconditioned(40.0)], params=p)
    res = scenario.run_scenario(sc)
    ss = moments.unconditioned_steady_state("as", p).as_array()
    return _result("scenario.click_after_monitoring_relaxes", ss, res.samples[-1].state.as_array(), 1e-6)


def check_click_statistics(prof):
    p = SCENARIO_PARAMS
    T, dt = 0.25, 1e-3
    start = moments.unconditioned_steady_state("as", p)
    ens = scenario.sample_ensemble("as", p, 1.0, T, dt, prof.n_traj, seed=12345, record_every=250, state0=start)
    frac = float(np.mean(ens.clicks > 0))
    p0 = math.exp(moments.integrate(start, p, 1.0, (0, T), tol=1e-11).log_p[-1])
    expected = 1.0 - p0
    sigma = math.sqrt(expected * (1 - expected) / prof.n_traj)
    rate = -math.log(1 - frac) / T
    note = f"first-click rate {rate:.4g} vs 2 eta kappa_ex n_opt_ss = {2 * p.kappa_ex * start.n_opt:.4g}"
    return CheckResult("scenario.click_fraction_3sigma", abs(frac - expected) < 3 * sigma, expected, frac, 3 * sigma,
                       note=note)


def check_ensemble_average(prof):
    p = SCENARIO_PARAMS
    ens = scenario.sample_ensemble("as", p, 1.0, 10.0, 1e-3, prof.n_traj, seed=2024, record_every=500)
    tr = moments.integrate(moments.MomentState.bath_equilibrium("as", p), p, 0.0, (0, 10), tol=1e-11, t_eval=ens.t)
    se = ens.stderr()[1:, 2]
    z = float(np.max(np.abs(ens.mean[1:, 2] - tr.y[1:, 2]) / se))
    return CheckResult("scenario.ensemble_mean_3sigma", z < 3.0, 0.0, z, 3.0, note=f"max |z| = {z:.2f}")


CHECKS = [
    check_as_zero_click,
    check_as_n_click,
    check_s_n_click,
    check_dense_vs_sector,
    check_lc_average,
    check_tms_average,
    check_threshold_identity,
    check_tms_vacuum,
    check_stokes_closed_form,
    check_expm_solution,
    check_stability_boundary,
    check_sweep_eta0,
    check_drift_vs_oracle,
    check_extended_vs_oracle,
    check_click_map,
    check_jump_after_evolution,
    check_no_click_dynamics,
    check_conditioned_steady_state,
    check_record_probability,
    check_click_after_monitoring,
    check_click_statistics,
    check_ensemble_average,
]


@contextlib.contextmanager
def _hooks(hooks):
    with contextlib.ExitStack() as stack:
        if "flip-drift-sign" in hooks:
            orig = moments.drift_matrix

            def flipped(kind, params):
                A, n = orig(kind, params)
                A = A.copy()
                A[0, 1:] *= -1.0  # sign of the coupling in the correlation equation
                return A, n

            stack.enter_context(mock.patch.object(moments, "drift_matrix", flipped))
        yield


def run(profile: Profile | None = None, hooks=(), only=None, emit=print) -> list[CheckResult]:
    """Run every check; ``emit`` receives one line per result as it completes."""
    profile = profile or Profile()
    unknown = set(hooks) - set(HOOKS)
    if unknown:
        raise ValueError(f"unknown hooks {sorted(unknown)}")
    results = []
    with _hooks(hooks):
        for fn in CHECKS:
            if only and not any(key in fn.__name__ for key in only):
                continue
            t0 = time.perf_counter()
            try:
                out = fn(profile)
            except TruncationError:
                raise
            except Exception as exc:  # noqa: BLE001 - a crashing check is a failed check
                out = CheckResult(fn.__name__.removeprefix("check_"), False, "no exception", repr(exc), 0.0)
            out = out if isinstance(out, list) else [out]
            dt = time.perf_counter() - t0
            for r in out:
                r.seconds = dt / len(out)
                results.append(r)
                emit(r.line())
    return results
