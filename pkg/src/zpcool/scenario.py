"""Measurement-record scenarios and stochastic photon-counting trajectories.

A scenario is a sequence of timed segments:

* ``Unconditioned(duration)``: counter outcomes averaged out (eta = 0 drift);
* ``ZeroClick(duration, eta)``: the counter stays silent;
* ``ClickAt(at)``: one photon detected at the absolute time ``at``.

Clicks are placed on the absolute timeline built from the durations and may
split an unconditioned segment in two. A ``ZeroClick`` segment may neither
contain a click in its interior nor start inside the post-click
re-Gaussification window.

Scenario files are TOML::

    kind = "antiStokes"            # or "Stokes"
    initial = "bath-equilibrium"   # or {u = 0.0, n_opt = 0.0, n_mech = 10.0}
    sample_dt = 0.05               # optional output cadence
    window = 3.0                   # optional re-Gaussification window
    click_resolution = 1e-3        # optional, converts click densities to probabilities
    tol = 1e-10                    # optional integrator tolerance

    [params]
    G = 1.0
    kappa_ex = 3.0
    gamma = 1.0
    Nbar = 10.0
    eta = 1.0

    [[segment]]
    type = "unconditioned"         # "unconditioned" | "zero-click" | "click"
    duration = 15.0

    [[segment]]
    type = "click"
    at = 15.0
"""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import NamedTuple, Union

import numpy as np

from . import _backend
from .config import ConfigDoc, get_kind, get_number, get_params
from .errors import DomainError, StepSizeError, ZeroRateError
from .moments import (
    MomentState,
    apply_click,
    integrate,
    regaussification_window,
)
from .params import Kind, SystemParams

P1_WARN = 0.05
P1_ERROR = 0.2
DEFAULT_CLICK_RESOLUTION = 1e-3
BLOCK = 256


@dataclass(frozen=True)
class Unconditioned:
    duration: float


@dataclass(frozen=True)
class ZeroClick:
    duration: float
    eta: float | None = None


@dataclass(frozen=True)
class ClickAt:
    at: float
    eta: float | None = None


Segment = Union[Unconditioned, ZeroClick, ClickAt]


@dataclass(frozen=True)
class Scenario:
    kind: Kind
    segments: tuple
    initial: MomentState | str = "bath-equilibrium"
    window: float | None = None
    click_resolution: float = DEFAULT_CLICK_RESOLUTION
    sample_dt: float | None = None
    params: SystemParams | None = None
    tol: float = 1e-10
    lines: tuple = field(default=(), compare=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "kind", Kind.parse(self.kind))
        object.__setattr__(self, "segments", tuple(self.segments))

    @property
    def span(self) -> float:
        return sum(s.duration for s in self.segments if not isinstance(s, ClickAt))

    def initial_state(self, params: SystemParams) -> MomentState:
        if isinstance(self.initial, MomentState):
            return self.initial
        if self.initial == "bath-equilibrium":
            return MomentState.bath_equilibrium(self.kind, params)
        raise DomainError(f"unknown initial state tag {self.initial!r}")


class Sample(NamedTuple):
    t: float
    state: MomentState
    log_p: float
    event: str


class ClickEvent(NamedTuple):
    t: float
    pre: MomentState
    post: MomentState
    log_weight: float


@dataclass
class TrajectoryResult:
    samples: list
    events: list
    log_record_probability: float

    @property
    def times(self) -> np.ndarray:
        return np.array([s.t for s in self.samples])

    def column(self, name) -> np.ndarray:
        return np.array([getattr(s.state, name) for s in self.samples])

    @property
    def click_times(self) -> list:
        return [e.t for e in self.events]


class _Piece(NamedTuple):
    t0: float
    t1: float
    mode: str  # "unconditioned" | "zero-click"
    eta: float
    line: int | None


class ScenarioError(DomainError):
    """Scenario timeline violates its invariants."""

    def __init__(self, message, line=None):
        self.line = line
        self.raw = message
        super().__init__(f"line {line}: {message}" if line else message)


def _timeline(scenario: Scenario, params: SystemParams):
    """Split segments into pieces at click instants; returns (pieces, clicks)."""
    lines = list(scenario.lines) + [None] * len(scenario.segments)
    pieces, clicks = [], []
    t = 0.0
    for seg, line in zip(scenario.segments, lines):
        if isinstance(seg, ClickAt):
            eta = params.eta if seg.eta is None else seg.eta
            clicks.append((float(seg.at), eta, line))
            continue
        if not (seg.duration > 0 and math.isfinite(seg.duration)):
            raise ScenarioError(f"segment duration must be > 0, got {seg.duration!r}", line)
        if isinstance(seg, ZeroClick):
            eta = params.eta if seg.eta is None else seg.eta
            if not (0.0 <= eta <= 1.0):
                raise ScenarioError(f"eta must lie in [0, 1], got {eta!r}", line)
            pieces.append(_Piece(t, t + seg.duration, "zero-click", eta, line))
        else:
            pieces.append(_Piece(t, t + seg.duration, "unconditioned", 0.0, line))
        t += seg.duration
    span = t
    bounds = [p.t1 for p in pieces]
    snapped = []
    for at, eta, line in clicks:
        near = [b for b in bounds if abs(b - at) <= 1e-9 * max(span, 1.0)]
        snapped.append((near[0] if near else at, eta, line))
    clicks = sorted(snapped, key=lambda c: c[0])
    for at, eta, line in clicks:
        if not (0.0 < at < span):
            raise ScenarioError(f"click at t={at} is not strictly inside the scenario span (0, {span})", line)
        if not (0.0 < eta <= 1.0):
            raise ScenarioError(f"a click needs a detector with eta > 0, got {eta!r}", line)
        for p in pieces:
            if p.mode == "zero-click" and p.t0 < at < p.t1:
                raise ScenarioError(f"click at t={at} falls inside a zero-click segment [{p.t0}, {p.t1}]", line)
    for a, b in zip(clicks, clicks[1:]):
        if a[0] == b[0]:
            raise ScenarioError(f"two clicks at the same instant t={a[0]}", b[2])
    # split unconditioned pieces at clicks
    cut = sorted({c[0] for c in clicks})
    out = []
    for p in pieces:
        edges = [p.t0] + [c for c in cut if p.t0 < c < p.t1] + [p.t1]
        for a, b in zip(edges, edges[1:]):
            out.append(p._replace(t0=a, t1=b))
    window = regaussification_window(params) if scenario.window is None else scenario.window
    for p in out:
        if p.mode != "zero-click" or p.eta == 0 or params.kappa_ex == 0:
            continue
        last = [c for c in cut if c <= p.t0]
        if last and p.t0 - last[-1] < window:
            raise ScenarioError(
                f"zero-click segment starts {p.t0 - last[-1]:.4g} after the click at t={last[-1]}, inside the "
                f"re-Gaussification window {window:.4g}",
                p.line,
            )
    return out, clicks, window


def run_scenario(scenario: Scenario, params: SystemParams | None = None, tol=None, sample_dt=None) -> TrajectoryResult:
    """Integrate a scenario segment by segment and accumulate the record log-probability."""
    params = params if params is not None else scenario.params
    if params is None:
        raise DomainError("scenario has no parameters")
    tol = scenario.tol if tol is None else tol
    pieces, clicks, window = _timeline(scenario, params)
    span = pieces[-1].t1
    sample_dt = sample_dt or scenario.sample_dt or span / 1000.0
    click_at = {c[0]: c for c in clicks}

    state = scenario.initial_state(params)
    log_p = 0.0
    samples = [Sample(0.0, state, 0.0, "start")]
    events = []
    for piece in pieces:
        eta = piece.eta if piece.mode == "zero-click" else 0.0
        traj = integrate(state, params, eta, (piece.t0, piece.t1), tol=tol, window=window)
        grid = np.arange(math.floor(piece.t0 / sample_dt) + 1, math.ceil(piece.t1 / sample_dt)) * sample_dt
        grid = grid[(grid > piece.t0 + 1e-12 * span) & (grid < piece.t1 - 1e-12 * span)]
        if grid.size:
            dense = traj(grid)
            for t, col in zip(grid, dense.T):
                st = MomentState.from_array(scenario.kind, col[:3], state.click_age + t - piece.t0)
                samples.append(Sample(float(t), st, log_p + float(col[3]), ""))
        state = traj.final
        log_p += float(traj.log_p[-1])
        samples.append(Sample(piece.t1, state, log_p, "segment-end"))
        if piece.t1 in click_at:
            _, eta_c, line = click_at[piece.t1]
            pre = state
            try:
                state = apply_click(pre)
            except ZeroRateError as exc:
                raise ZeroRateError(f"click at t={piece.t1}: {exc}") from exc
            weight = math.log(min(1.0, 2.0 * eta_c * params.kappa_ex * pre.n_opt * scenario.click_resolution))
            log_p += weight
            events.append(ClickEvent(piece.t1, pre, state, weight))
            samples[-1] = Sample(piece.t1, state, log_p, "click")
    return TrajectoryResult(samples, events, log_p)


# ---------------------------------------------------------------------------
# Scenario files

_SEGMENT_TYPES = {"unconditioned", "zero-click", "click"}


def parse_scenario(doc: ConfigDoc) -> Scenario:
    data = doc.data
    allowed = {"kind", "initial", "sample_dt", "window", "click_resolution", "tol", "params", "segment", "command",
               "ensemble"}
    for key in data:
        if key not in allowed:
            raise doc.error(f"unknown field (expected one of {sorted(allowed)})", key=key)
    kind = get_kind(doc, data)
    params = get_params(doc, data)
    initial = data.get("initial", "bath-equilibrium")
    if isinstance(initial, dict):
        vals = [get_number(doc, initial, k, table="initial", required=True) for k in ("u", "n_opt", "n_mech")]
        initial = MomentState(kind, *vals)
    elif initial != "bath-equilibrium":
        raise doc.error("must be 'bath-equilibrium' or a table {u, n_opt, n_mech}", key="initial")
    sample_dt = get_number(doc, data, "sample_dt", default=None, minimum=0.0)
    if sample_dt == 0:
        raise doc.error("must be > 0", key="sample_dt")
    window = get_number(doc, data, "window", default=None, minimum=0.0)
    resolution = get_number(doc, data, "click_resolution", default=DEFAULT_CLICK_RESOLUTION, minimum=0.0)
    if resolution == 0:
        raise doc.error("must be > 0", key="click_resolution")
    tol = get_number(doc, data, "tol", default=1e-10, minimum=0.0)
    raw = data.get("segment")
    header_lines = doc.array_table_lines("segment")
    if not isinstance(raw, list) or not raw:
        raise doc.error("at least one [[segment]] table is required", line=None)
    segments = []
    for i, seg in enumerate(raw):
        line = header_lines[i] if i < len(header_lines) else None

        def bad(msg, _line=line, _i=i):
            return doc.error(f"segment #{_i + 1}: {msg}", line=_line)

        kind_s = seg.get("type")
        if kind_s not in _SEGMENT_TYPES:
            raise bad(f"type must be one of {sorted(_SEGMENT_TYPES)}, got {kind_s!r}")
        extra = set(seg) - {"type", "duration", "at", "eta"}
        if extra:
            raise bad(f"unknown fields {sorted(extra)}")
        eta = seg.get("eta")
        if eta is not None and (isinstance(eta, bool) or not isinstance(eta, (int, float)) or not 0 <= eta <= 1):
            raise bad(f"eta must be a number in [0, 1], got {eta!r}")
        if kind_s == "click":
            at = seg.get("at")
            if "duration" in seg:
                raise bad("a click has 'at', not 'duration'")
            if isinstance(at, bool) or not isinstance(at, (int, float)):
                raise bad(f"click needs a numeric 'at', got {at!r}")
            segments.append(ClickAt(float(at), None if eta is None else float(eta)))
        else:
            dur = seg.get("duration")
            if "at" in seg:
                raise bad(f"{kind_s} segments take 'duration', not 'at'")
            if isinstance(dur, bool) or not isinstance(dur, (int, float)) or not dur > 0 or not math.isfinite(dur):
                raise bad(f"duration must be a positive number, got {dur!r}")
            if kind_s == "zero-click":
                segments.append(ZeroClick(float(dur), None if eta is None else float(eta)))
            else:
                if eta is not None:
                    raise bad("unconditioned segments take no eta")
                segments.append(Unconditioned(float(dur)))
    scenario = Scenario(kind, segments, initial, window, resolution, sample_dt, params, tol, tuple(header_lines))
    try:
        _timeline(scenario, params)
    except ScenarioError as exc:
        raise doc.error(exc.raw, line=exc.line) from exc
    return scenario


def load_scenario(path) -> Scenario:
    return parse_scenario(ConfigDoc.load(path))


# ---------------------------------------------------------------------------
# Stochastic trajectories


def _uniforms(seed, index, n_steps):
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(index,)))
    return rng.random(n_steps)


def _check_sampling(kind, params, eta, duration, dt):
    if duration <= 0 or dt <= 0:
        raise DomainError("duration and dt must be > 0")
    if not (0.0 <= eta <= 1.0):
        raise DomainError(f"eta must lie in [0, 1], got {eta!r}")
    n_steps = int(round(duration / dt))
    if abs(n_steps * dt - duration) > 1e-9 * duration:
        raise DomainError(f"duration {duration} is not a whole number of steps dt={dt}")
    return n_steps


def _p1_guard(p_max):
    if p_max > P1_ERROR:
        raise StepSizeError(f"per-step click probability reached {p_max:.3g} > {P1_ERROR}; reduce dt")
    if p_max > P1_WARN:
        warnings.warn(f"per-step click probability reached {p_max:.3g} > {P1_WARN}; consider a smaller dt",
                      RuntimeWarning, stacklevel=3)


def _kernel_args(kind, params, eta, dt, window):
    window = regaussification_window(params) if window is None else window
    window_steps = int(math.ceil(window / dt - 1e-9)) if math.isfinite(window) else 2**62
    return (
        dt,
        Kind.parse(kind) is Kind.STOKES,
        params.G,
        params.kappa,
        params.gamma,
        params.Nbar,
        eta * params.kappa_ex,
        window_steps,
    )


def sample_trajectory(kind, params: SystemParams, eta, duration, dt, seed, index=0, state0=None, window=None,
                      record_every=1) -> TrajectoryResult:
    """One photon-counting record drawn with one uniform per step against P1 = 2 eta kappa_ex n_opt dt.

    Trajectory ``index`` of seed ``seed`` is the same record that
    :func:`sample_ensemble` produces for that index.
    """
    kind = Kind.parse(kind)
    n_steps = _check_sampling(kind, params, eta, duration, dt)
    state0 = MomentState.bath_equilibrium(kind, params) if state0 is None else state0
    U = _uniforms(seed, index, n_steps)
    args = _kernel_args(kind, params, eta, dt, window)
    y = state0.as_array()[None, :].copy()
    since = np.array([2**62], dtype=np.int64)
    logp = np.zeros(1)
    nclicks = np.zeros(1, dtype=np.int64)
    first = np.full(1, np.nan)
    samples = [Sample(0.0, state0, 0.0, "start")]
    events = []
    p_max = 0.0
    for j in range(n_steps):
        pre = MomentState.from_array(kind, y[0])
        before = nclicks[0]
        p_max = max(p_max, _backend.advance(y, since, logp, nclicks, first, U[j:j + 1, None].copy(), j, *args))
        if nclicks[0] != before:
            post = apply_click(pre)
            events.append(ClickEvent(j * dt, pre, post, math.log(2.0 * eta * params.kappa_ex * pre.n_opt * dt)))
        if (j + 1) % record_every == 0 or j == n_steps - 1:
            st = MomentState.from_array(kind, y[0], since[0] * dt)
            samples.append(Sample((j + 1) * dt, st, float(logp[0]), "click" if nclicks[0] != before else ""))
    _p1_guard(p_max)
    return TrajectoryResult(samples, events, float(logp[0]))


@dataclass
class EnsembleResult:
    """Across-trajectory statistics on the recording grid ``t``.

    ``mean`` and ``var`` have shape (len(t), 3) over (u, n_opt, n_mech).
    """

    t: np.ndarray
    mean: np.ndarray
    var: np.ndarray
    n_traj: int
    clicks: np.ndarray
    first_click: np.ndarray
    log_p: np.ndarray
    p_max: float
    backend: str

    def stderr(self) -> np.ndarray:
        return np.sqrt(self.var / self.n_traj)


def _run_block(task):
    kind, params, eta, n_steps, record_every, dt, window, seed, lo, hi, state0, backend = task
    kern = _backend.available()[backend]
    n = hi - lo
    U = np.empty((n_steps, n))
    for c, idx in enumerate(range(lo, hi)):
        U[:, c] = _uniforms(seed, idx, n_steps)
    args = _kernel_args(kind, params, eta, dt, window)
    y = np.tile(state0, (n, 1))
    since = np.full(n, 2**62, dtype=np.int64)
    logp = np.zeros(n)
    nclicks = np.zeros(n, dtype=np.int64)
    first = np.full(n, np.nan)
    n_rec = n_steps // record_every
    s1 = np.zeros((n_rec + 1, 3))
    s2 = np.zeros((n_rec + 1, 3))
    s1[0] = n * y[0]
    s2[0] = n * y[0] ** 2
    p_max = 0.0
    for r in range(n_rec):
        chunk = np.ascontiguousarray(U[r * record_every:(r + 1) * record_every])
        p_max = max(p_max, kern.advance(y, since, logp, nclicks, first, chunk, r * record_every, *args))
        s1[r + 1] = y.sum(axis=0)
        s2[r + 1] = (y * y).sum(axis=0)
    return s1, s2, nclicks, first, logp, p_max


def sample_ensemble(kind, params: SystemParams, eta, duration, dt, n_traj, seed, record_every=100, state0=None,
                    window=None, jobs=1, backend=None) -> EnsembleResult:
    """Run ``n_traj`` independent records and return their moment statistics.

    Trajectories are processed in fixed blocks whose results are combined in
    order, so the output does not depend on ``jobs``.
    """
    kind = Kind.parse(kind)
    n_steps = _check_sampling(kind, params, eta, duration, dt)
    if n_steps % record_every:
        raise DomainError("record_every must divide the number of steps")
    if n_traj < 1:
        raise DomainError("n_traj must be >= 1")
    state0 = MomentState.bath_equilibrium(kind, params) if state0 is None else state0
    backend = backend or _backend.BACKEND
    tasks = [
        (kind, params, eta, n_steps, record_every, dt, window, seed, lo, min(lo + BLOCK, n_traj),
         state0.as_array(), backend)
        for lo in range(0, n_traj, BLOCK)
    ]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_block, tasks))
    else:
        results = [_run_block(t) for t in tasks]
    s1 = sum(r[0] for r in results)
    s2 = sum(r[1] for r in results)
    mean = s1 / n_traj
    var = np.maximum(s2 / n_traj - mean**2, 0.0) * (n_traj / max(n_traj - 1, 1))
    p_max = max(r[5] for r in results)
    _p1_guard(p_max)
    t = np.arange(n_steps // record_every + 1) * record_every * dt
    return EnsembleResult(
        t,
        mean,
        var,
        n_traj,
        np.concatenate([r[2] for r in results]),
        np.concatenate([r[3] for r in results]),
        np.concatenate([r[4] for r in results]),
        p_max,
        backend,
    )
