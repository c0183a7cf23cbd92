"""Gaussian second-moment dynamics under continuous photon counting.

The phase-symmetric state is carried by three real numbers (u, n_opt, n_mech).
The correlation variable is

* anti-Stokes: u = i<a^dag b - a b^dag> = 2i<a^dag b>
* Stokes:      u = i<a^dag b^dag - a b> = 2i<a^dag b^dag>

so that ``<a^dag b> = -i u / 2`` (resp. ``<a^dag b^dag>``). With these signs the
unconditioned drift is linear, dV/dt = A V + n, and the zero-click terms are
quadratic (fourth moments closed with the Isserlis-Wick factorization).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.integrate import RK45, solve_ivp

from .errors import (
    DomainError,
    InstabilityError,
    InvalidRegimeError,
    NonConvergenceError,
    NoRootError,
    SingularSystemError,
    ZeroRateError,
)
from .params import Kind, SystemParams

DEFAULT_RTOL = 1e-8
DEFAULT_ATOL = 1e-10
DEFAULT_CEILING = 1e12
CLICK_RATE_FLOOR = 1e-12


@dataclass(frozen=True)
class MomentState:
    """Real second moments of a phase-symmetric two-mode Gaussian state.

    ``click_age`` is the time elapsed since the last photon click (``inf`` if
    none); conditioned drift is refused while it is inside the
    re-Gaussification window.
    """

    kind: Kind
    u: float
    n_opt: float
    n_mech: float
    click_age: float = math.inf

    def __post_init__(self):
        object.__setattr__(self, "kind", Kind.parse(self.kind))

    @classmethod
    def bath_equilibrium(cls, kind, params: SystemParams) -> "MomentState":
        return cls(kind, 0.0, 0.0, params.Nbar)

    @classmethod
    def from_array(cls, kind, v, click_age=math.inf) -> "MomentState":
        return cls(kind, float(v[0]), float(v[1]), float(v[2]), click_age)

    def as_array(self) -> np.ndarray:
        return np.array([self.u, self.n_opt, self.n_mech], dtype=float)

    def correlation(self) -> complex:
        """<a^dag b> (anti-Stokes) or <a^dag b^dag> (Stokes)."""
        return -0.5j * self.u

    def is_physical(self, tol=1e-8) -> bool:
        if self.n_opt < -1e-9 or self.n_mech < -1e-9:
            return False
        return physicality_margin(self) >= -tol


@dataclass(frozen=True)
class ExtendedMomentState:
    """MomentState plus the complex anomalous moments.

    ``corr`` is the complex correlation (<a^dag b> or <a^dag b^dag>),
    ``c_aa = <a^2>``, ``c_bb = <b^2>`` and ``c_ab`` is <ab> for anti-Stokes or
    <a b^dag> for Stokes.
    """

    kind: Kind
    corr: complex
    n_opt: float
    n_mech: float
    c_aa: complex = 0j
    c_ab: complex = 0j
    c_bb: complex = 0j

    def __post_init__(self):
        object.__setattr__(self, "kind", Kind.parse(self.kind))

    @classmethod
    def from_moments(cls, state: MomentState, c_aa=0j, c_ab=0j, c_bb=0j) -> "ExtendedMomentState":
        return cls(state.kind, state.correlation(), state.n_opt, state.n_mech, c_aa, c_ab, c_bb)

    @classmethod
    def from_array(cls, kind, v) -> "ExtendedMomentState":
        v = np.asarray(v, dtype=complex)
        return cls(kind, complex(v[0]), float(v[1].real), float(v[2].real), complex(v[3]), complex(v[4]), complex(v[5]))

    def as_array(self) -> np.ndarray:
        return np.array([self.corr, self.n_opt, self.n_mech, self.c_aa, self.c_ab, self.c_bb], dtype=complex)

    def reduced(self) -> MomentState:
        return MomentState(self.kind, float((2j * self.corr).real), self.n_opt, self.n_mech)

    def anomalous_magnitude(self) -> float:
        return max(abs(self.c_aa), abs(self.c_ab), abs(self.c_bb))


def covariance_matrix(n_opt, n_mech, adag_b=0j, ab=0j, a2=0j, b2=0j) -> np.ndarray:
    """Symmetrized quadrature covariance (x_a, p_a, x_b, p_b) with vacuum = I/2."""
    s = np.empty((4, 4))
    s[0, 0] = n_opt + 0.5 + a2.real
    s[1, 1] = n_opt + 0.5 - a2.real
    s[0, 1] = s[1, 0] = a2.imag
    s[2, 2] = n_mech + 0.5 + b2.real
    s[3, 3] = n_mech + 0.5 - b2.real
    s[2, 3] = s[3, 2] = b2.imag
    s[0, 2] = s[2, 0] = ab.real + adag_b.real
    s[0, 3] = s[3, 0] = ab.imag + adag_b.imag
    s[1, 2] = s[2, 1] = ab.imag - adag_b.imag
    s[1, 3] = s[3, 1] = adag_b.real - ab.real
    return s


_OMEGA = np.kron(np.eye(2), np.array([[0.0, 1.0], [-1.0, 0.0]]))


def physicality_margin(state: MomentState) -> float:
    """Smallest eigenvalue of sigma + i Omega / 2; negative values violate the uncertainty principle."""
    x = state.correlation()
    if state.kind is Kind.ANTI_STOKES:
        s = covariance_matrix(state.n_opt, state.n_mech, adag_b=x)
    else:
        s = covariance_matrix(state.n_opt, state.n_mech, ab=x.conjugate())
    return float(np.linalg.eigvalsh(s + 0.5j * _OMEGA).min())


# ---------------------------------------------------------------------------
# Drift


def drift_matrix(kind, params: SystemParams) -> tuple[np.ndarray, np.ndarray]:
    """Linear part (A, n) of the unconditioned drift dV/dt = A V + n."""
    kind = Kind.parse(kind)
    G, k, g = params.G, params.kappa, params.gamma
    if kind is Kind.ANTI_STOKES:
        A = np.array([[-(k + g), 2 * G, -2 * G], [-G, -2 * k, 0.0], [G, 0.0, -2 * g]])
        n = np.array([0.0, 0.0, 2 * g * params.Nbar])
    else:
        A = np.array([[-(k + g), -2 * G, -2 * G], [-G, -2 * k, 0.0], [-G, 0.0, -2 * g]])
        n = np.array([-2 * G, 0.0, 2 * g * params.Nbar])
    return A, n


def _drift_vec(kind, params, eta, v):
    A, n = drift_matrix(kind, params)
    out = A @ v + n
    k = eta * params.kappa_ex
    if k:
        u, no, _ = v
        out = out + np.array([-2 * k * u * no, -2 * k * no * no, -0.5 * k * u * u])
    return out


def drift(state: MomentState, params: SystemParams, eta=None) -> np.ndarray:
    """Time derivative (du, dn_opt, dn_mech); ``eta`` defaults to ``params.eta``."""
    eta = params.eta if eta is None else eta
    _check_eta(eta)
    return _drift_vec(state.kind, params, eta, state.as_array())


def drift_jacobian(kind, params: SystemParams, eta, v) -> np.ndarray:
    A, _ = drift_matrix(kind, params)
    J = A.copy()
    k = eta * params.kappa_ex
    if k:
        u, no, _ = v
        J[0, 0] -= 2 * k * no
        J[0, 1] -= 2 * k * u
        J[1, 1] -= 4 * k * no
        J[2, 0] -= k * u
    return J


def stability_eigenvalues(kind, params: SystemParams) -> np.ndarray:
    """Eigenvalues of the unconditioned drift matrix, sorted by real part."""
    ev = np.linalg.eigvals(drift_matrix(kind, params)[0])
    return ev[np.argsort(ev.real)]


def _check_eta(eta):
    if not (0.0 <= eta <= 1.0):
        raise DomainError(f"eta must lie in [0, 1], got {eta!r}")


def regaussification_window(params: SystemParams) -> float:
    """Default post-click interval during which only unconditioned drift is allowed."""
    rate = min(params.gamma, params.kappa)
    return 3.0 / rate if rate > 0 else math.inf


def stokes_is_stable(params: SystemParams) -> bool:
    return params.G**2 < params.gamma * params.kappa


# ---------------------------------------------------------------------------
# Integration


@dataclass
class MomentTrajectory:
    """Integrated moments; ``log_p[i]`` is the zero-click log-probability accumulated up to ``t[i]``."""

    kind: Kind
    t: np.ndarray
    y: np.ndarray
    log_p: np.ndarray
    sol: object = field(repr=False, default=None)
    click_age0: float = math.inf

    def states(self) -> list[MomentState]:
        return [MomentState.from_array(self.kind, v, self.click_age0 + t - self.t[0]) for t, v in zip(self.t, self.y)]

    @property
    def final(self) -> MomentState:
        return MomentState.from_array(self.kind, self.y[-1], self.click_age0 + self.t[-1] - self.t[0])

    def __call__(self, t):
        """Dense output: rows (u, n_opt, n_mech, log_p) at the requested times."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        if self.sol is None:
            return np.repeat(np.append(self.y[-1], self.log_p[-1])[:, None], t.size, axis=1)
        return self.sol(t)


def integrate(
    state0: MomentState,
    params: SystemParams,
    eta=None,
    t_span=(0.0, 1.0),
    tol=DEFAULT_RTOL,
    atol=None,
    t_eval=None,
    ceiling=DEFAULT_CEILING,
    window=None,
    allow_unstable=False,
) -> MomentTrajectory:
    """Adaptive RK4(5) integration of the moment equations.

    ``tol`` is the relative tolerance; ``atol`` defaults to ``tol / 100``.
    Unconditioned Stokes runs with G^2 >= gamma*kappa raise
    :class:`InvalidRegimeError` unless ``allow_unstable`` is set, in which case
    the run proceeds until a moment crosses ``ceiling``.
    """
    eta = params.eta if eta is None else eta
    _check_eta(eta)
    kind = state0.kind
    t0, t1 = map(float, t_span)
    if t1 < t0:
        raise DomainError("t_span must be increasing")
    if eta > 0 and params.kappa_ex > 0:
        win = regaussification_window(params) if window is None else window
        if state0.click_age < win:
            raise DomainError(
                f"conditioned drift requested {state0.click_age:.3g} after a click, inside the "
                f"re-Gaussification window {win:.3g}"
            )
    if kind is Kind.STOKES and eta == 0 and not stokes_is_stable(params) and not allow_unstable:
        raise InvalidRegimeError(
            f"unconditioned Stokes dynamics are unstable for G^2 >= gamma*kappa (C = {params.cooperativity:.4g})"
        )
    atol = tol * 1e-2 if atol is None else atol

    k2 = 2.0 * eta * params.kappa_ex

    def fun(_t, v):
        return np.append(_drift_vec(kind, params, eta, v[:3]), -k2 * v[1])

    def blowup(_t, v):
        return ceiling - np.max(np.abs(v[:3]))

    blowup.terminal = True
    y0 = np.append(state0.as_array(), 0.0)
    if t1 == t0:
        return MomentTrajectory(kind, np.array([t0]), y0[None, :3], np.zeros(1), None, state0.click_age)
    res = solve_ivp(
        fun, (t0, t1), y0, method="RK45", rtol=tol, atol=atol, t_eval=t_eval, events=blowup, dense_output=True
    )
    if res.status == 1 or not np.all(np.isfinite(res.y[:3])):
        t_hit = res.t_events[0][0] if res.t_events[0].size else float("nan")
        raise InstabilityError(f"moments exceeded the ceiling {ceiling:.3g} at t = {t_hit:.6g}")
    if res.status < 0:
        raise NonConvergenceError(f"moment integration failed: {res.message}")
    return MomentTrajectory(kind, res.t, res.y[:3].T.copy(), res.y[3].copy(), res.sol, state0.click_age)


# ---------------------------------------------------------------------------
# Steady states


def unconditioned_steady_state(kind, params: SystemParams) -> MomentState:
    """Exact fixed point of the linear drift, from solving -A V = n."""
    kind = Kind.parse(kind)
    if params.gamma <= 0:
        raise DomainError("gamma = 0: no bath contact, the steady state is not unique")
    if kind is Kind.STOKES:
        gap = params.gamma * params.kappa - params.G**2
        if abs(gap) <= 1e-12 * max(params.gamma * params.kappa, params.G**2):
            raise SingularSystemError("drift matrix is singular at the Stokes stability boundary G^2 = gamma*kappa")
        if gap < 0:
            raise InvalidRegimeError(f"no stable Stokes steady state for C = {params.cooperativity:.6g} >= 1")
    A, n = drift_matrix(kind, params)
    try:
        v = np.linalg.solve(A, -n)
    except np.linalg.LinAlgError as exc:
        raise SingularSystemError(str(exc)) from exc
    if not np.all(np.isfinite(v)):
        raise SingularSystemError("steady-state solve produced non-finite values")
    return MomentState.from_array(kind, v)


@dataclass(frozen=True)
class SteadyState:
    state: MomentState
    residual: float
    iterations: int
    method: str


def _is_stable(kind, params, eta, v):
    return np.linalg.eigvals(drift_jacobian(kind, params, eta, v)).real.max() < 0


def _newton(kind, params, eta, v, tol, max_iter=200):
    f = _drift_vec(kind, params, eta, v)
    res = np.linalg.norm(f)
    for it in range(1, max_iter + 1):
        if res < tol:
            return v, res, it - 1
        J = drift_jacobian(kind, params, eta, v)
        try:
            step = np.linalg.solve(J, -f)
        except np.linalg.LinAlgError:
            return None, res, it
        lam = 1.0
        while lam > 1e-12:
            trial = v + lam * step
            f_trial = _drift_vec(kind, params, eta, trial)
            r_trial = np.linalg.norm(f_trial)
            if np.isfinite(r_trial) and r_trial < res:
                break
            lam *= 0.5
        else:
            return None, res, it
        v, f, res = trial, f_trial, r_trial
    return (v if res < tol else None), res, max_iter


def _relax(kind, params, eta, v0, tol, t_max, consecutive=10):
    """Integrate until ||drift|| < tol on ``consecutive`` accepted steps."""
    solver = RK45(lambda _t, v: _drift_vec(kind, params, eta, v), 0.0, v0, t_max, rtol=1e-10, atol=1e-12)
    streak = 0
    while solver.status == "running":
        solver.step()
        if not np.all(np.isfinite(solver.y)) or np.abs(solver.y).max() > DEFAULT_CEILING:
            raise InstabilityError("moments diverged while relaxing to the conditioned steady state")
        if np.linalg.norm(_drift_vec(kind, params, eta, solver.y)) < tol:
            streak += 1
            if streak >= consecutive:
                return solver.y.copy()
        else:
            streak = 0
    return None


def conditioned_steady_state(kind, params: SystemParams, eta=None, tol=1e-10, max_iter=200) -> SteadyState:
    """Stable physical fixed point of the zero-click drift.

    Damped Newton (step halving) from the unconditioned steady state, or from
    bath equilibrium when that does not exist; falls back to time integration
    when Newton fails or lands on an unphysical/unstable root.
    """
    kind = Kind.parse(kind)
    eta = params.eta if eta is None else eta
    _check_eta(eta)
    if params.gamma <= 0:
        raise DomainError("gamma = 0: no bath contact, the steady state is not unique")
    tol_abs = tol * max(1.0, params.Nbar)
    try:
        seed = unconditioned_steady_state(kind, params).as_array()
    except (InvalidRegimeError, SingularSystemError):
        seed = np.array([0.0, 0.0, params.Nbar])

    def accept(v):
        st = MomentState.from_array(kind, v)
        return st.is_physical() and _is_stable(kind, params, eta, v)

    v, res, iters = _newton(kind, params, eta, seed, tol_abs, max_iter)
    if v is not None and accept(v):
        return SteadyState(MomentState.from_array(kind, v), res, iters, "newton")
    slowest = min(params.gamma, params.kappa) if params.kappa > 0 else params.gamma
    v_relax = _relax(kind, params, eta, np.array([0.0, 0.0, params.Nbar]), tol_abs * 1e2, 1e4 / slowest)
    if v_relax is None:
        raise NonConvergenceError(f"no conditioned steady state within the time budget (eta={eta}, C={params.cooperativity:.4g})")
    v, res, more = _newton(kind, params, eta, v_relax, tol_abs, max_iter)
    if v is None or not accept(v):
        raise NonConvergenceError(f"conditioned steady state not reached (residual {res:.3e})")
    return SteadyState(MomentState.from_array(kind, v), res, iters + more, "relaxation")


@dataclass(frozen=True)
class ThresholdResult:
    eta_star: float
    bracket: tuple[float, float]
    iterations: int


def threshold_efficiency_continuous(params: SystemParams, tol=1e-6, kind=Kind.STOKES, ss_tol=1e-11) -> ThresholdResult:
    """Efficiency above which continuous zero-click monitoring holds the mechanics below the bath occupation.

    Bisection on f(eta) = n_mech(eta) - Nbar over [0, 1].
    """
    kind = Kind.parse(kind)
    if kind is not Kind.STOKES:
        raise DomainError("the continuous threshold is defined for the Stokes interaction")
    if tol <= 0:
        raise DomainError("tol must be positive")
    Nbar = params.Nbar

    def f(eta):
        return conditioned_steady_state(kind, params, eta, tol=ss_tol).state.n_mech - Nbar

    f_hi = f(1.0)
    if f_hi >= 0:
        raise NoRootError(
            f"even eta = 1 leaves the mechanics at or above the bath occupation (n_mech - Nbar = {f_hi:.4g})"
        )
    lo, hi = 0.0, 1.0
    f_lo = f(lo) if stokes_is_stable(params) else math.inf
    if f_lo <= 0:
        raise NoRootError("conditioned occupation is below the bath already at eta = 0")
    it = 0
    while hi - lo >= tol:
        mid = 0.5 * (lo + hi)
        if f(mid) > 0:
            lo = mid
        else:
            hi = mid
        it += 1
        if it > 200:
            raise NonConvergenceError("bisection did not converge")
    return ThresholdResult(0.5 * (lo + hi), (lo, hi), it)


# ---------------------------------------------------------------------------
# Clicks


def apply_click(state: MomentState) -> MomentState:
    """Moment update for one detected photon: u -> 2u, n_opt -> 2 n_opt, n_mech -> n_mech + u^2/(4 n_opt)."""
    if state.n_opt <= CLICK_RATE_FLOOR:
        raise ZeroRateError(f"n_opt = {state.n_opt:.3e}: no photon to detect")
    return MomentState(
        state.kind,
        2.0 * state.u,
        2.0 * state.n_opt,
        state.n_mech + state.u * state.u / (4.0 * state.n_opt),
        0.0,
    )


# ---------------------------------------------------------------------------
# Extended (anomalous) moments


def extended_drift(state: ExtendedMomentState, params: SystemParams, eta=None) -> np.ndarray:
    """Complex derivative of (corr, n_opt, n_mech, c_aa, c_ab, c_bb)."""
    eta = params.eta if eta is None else eta
    _check_eta(eta)
    return _extended_vec(state.kind, params, eta, state.as_array())


def _extended_vec(kind, params, eta, v):
    G, kap, gam, N = params.G, params.kappa, params.gamma, params.Nbar
    k2 = 2.0 * eta * params.kappa_ex
    x, no, nm, p, s, r = v
    no = no.real
    nm = nm.real
    out = np.empty(6, dtype=complex)
    dno = -1j * G * (x - x.conjugate()) - 2 * kap * no - k2 * (no * no + abs(p) ** 2)
    out[1] = dno.real
    if kind is Kind.ANTI_STOKES:
        # x = <a^dag b>, s = <ab>, r = <b^2>
        out[0] = -1j * G * (no - nm) - (kap + gam) * x - k2 * (no * x + p.conjugate() * s)
        out[2] = (1j * G * (x - x.conjugate()) - 2 * gam * (nm - N) - k2 * (abs(x) ** 2 + abs(s) ** 2)).real
        out[3] = -2j * G * s - 2 * kap * p - 2 * k2 * no * p
        out[4] = -1j * G * (p + r) - (kap + gam) * s - k2 * (s * no + p * x)
        out[5] = -2j * G * s - 2 * gam * r - 2 * k2 * x * s
    else:
        # x = <a^dag b^dag>, s = <a b^dag>, r = <b^2>; <ab> = conj(x)
        out[0] = 1j * G * (no + nm + 1) - (kap + gam) * x - k2 * (no * x + p.conjugate() * s)
        out[2] = (-1j * G * (x - x.conjugate()) - 2 * gam * (nm - N) - k2 * (abs(s) ** 2 + abs(x) ** 2)).real
        out[3] = -2j * G * s - 2 * kap * p - 2 * k2 * no * p
        out[4] = 1j * G * (p - r.conjugate()) - (kap + gam) * s - k2 * (no * s + x * p)
        out[5] = -2j * G * s.conjugate() - 2 * gam * r - 2 * k2 * s.conjugate() * x.conjugate()
    return out


@dataclass
class ExtendedTrajectory:
    kind: Kind
    t: np.ndarray
    y: np.ndarray

    @property
    def final(self) -> ExtendedMomentState:
        return ExtendedMomentState.from_array(self.kind, self.y[-1])

    def max_anomalous(self) -> float:
        return float(np.abs(self.y[:, 3:]).max())


def integrate_extended(state0: ExtendedMomentState, params: SystemParams, eta=None, t_span=(0.0, 1.0),
                       tol=1e-10, atol=None, t_eval=None) -> ExtendedTrajectory:
    eta = params.eta if eta is None else eta
    _check_eta(eta)
    kind = state0.kind
    atol = tol * 1e-2 if atol is None else atol
    res = solve_ivp(
        lambda _t, v: _extended_vec(kind, params, eta, v),
        tuple(map(float, t_span)),
        state0.as_array(),
        method="RK45",
        rtol=tol,
        atol=atol,
        t_eval=t_eval,
    )
    if res.status < 0:
        raise NonConvergenceError(f"extended integration failed: {res.message}")
    return ExtendedTrajectory(kind, res.t, res.y.T.copy())


def apply_click_extended(state: ExtendedMomentState) -> ExtendedMomentState:
    """Click update with the anomalous moments tracked (Wick-factorized)."""
    n = state.n_opt
    if n <= CLICK_RATE_FLOOR:
        raise ZeroRateError(f"n_opt = {n:.3e}: no photon to detect")
    x, p, s, r = state.corr, state.c_aa, state.c_ab, state.c_bb
    if state.kind is Kind.ANTI_STOKES:
        new = (
            2 * x + p.conjugate() * s / n,
            2 * n + abs(p) ** 2 / n,
            state.n_mech + (abs(x) ** 2 + abs(s) ** 2) / n,
            3 * p,
            2 * s + x * p / n,
            r + 2 * x * s / n,
        )
    else:
        new = (
            2 * x + p.conjugate() * s / n,
            2 * n + abs(p) ** 2 / n,
            state.n_mech + (abs(s) ** 2 + abs(x) ** 2) / n,
            3 * p,
            2 * s + x * p / n,
            r + 2 * s.conjugate() * x.conjugate() / n,
        )
    return ExtendedMomentState(state.kind, complex(new[0]), float(new[1]), float(new[2]),
                               complex(new[3]), complex(new[4]), complex(new[5]))


def moments_from_fock(fm, kind) -> ExtendedMomentState:
    """Extended moment state from an oracle :class:`~zpcool.fock.FockMoments`."""
    kind = Kind.parse(kind)
    if kind is Kind.ANTI_STOKES:
        return ExtendedMomentState(kind, fm.adag_b, fm.n_opt, fm.n_mech, fm.a2, fm.ab, fm.b2)
    return ExtendedMomentState(kind, fm.adag_bdag, fm.n_opt, fm.n_mech, fm.a2, fm.a_bdag, fm.b2)


def with_click_age(state: MomentState, age: float) -> MomentState:
    return replace(state, click_age=age)
