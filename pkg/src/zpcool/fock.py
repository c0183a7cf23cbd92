"""Brute-force truncated two-mode Fock-space oracle.

The joint state lives on |n_opt> (x) |m_mech>, flattened row-major so that the
basis index is ``n_opt * d_mech + m_mech``. Every operation re-checks how much
population sits in the top 10% of each ladder and raises
:class:`TruncationError` instead of silently truncating.

Two routes are provided for pulsed protocols:

* the general density-matrix pipeline (:func:`thermal_product_state`,
  :func:`apply_pulsed_unitary`, :func:`apply_loss`,
  :func:`project_photon_number`), usable for any joint state at small cutoffs;
* :func:`pulsed_pipeline`, which exploits the conserved quantity of each
  interaction (a^dag a + b^dag b for anti-Stokes, a^dag a - b^dag b for Stokes)
  to evolve every initial phonon number in its own sector. It performs the same
  exponentiation, Kraus loss and projection, only at cutoffs of a few hundred.
"""

from __future__ import annotations

import functools
import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import expm_multiply
from scipy.special import gammaln

from .errors import DomainError, StepSizeError, TruncationError, ZeroProbabilityError, ZeroRateError
from .params import Kind, SystemParams

DEFAULT_TAIL_TOL = 1e-8


def _top_levels(d):
    return max(1, math.ceil(0.1 * d))


@dataclass
class JointDensityMatrix:
    """Density operator on the truncated optical (x) mechanical Fock space."""

    data: np.ndarray
    d_opt: int
    d_mech: int
    tail_tol: float = DEFAULT_TAIL_TOL

    def __post_init__(self):
        if self.d_opt < 1 or self.d_mech < 1:
            raise DomainError("truncation dimensions must be positive")
        D = self.d_opt * self.d_mech
        self.data = np.asarray(self.data, dtype=complex)
        if self.data.shape != (D, D):
            raise DomainError(f"data has shape {self.data.shape}, expected {(D, D)}")

    @property
    def dim(self) -> int:
        return self.d_opt * self.d_mech

    def copy(self) -> "JointDensityMatrix":
        return JointDensityMatrix(self.data.copy(), self.d_opt, self.d_mech, self.tail_tol)

    def _with(self, data) -> "JointDensityMatrix":
        return JointDensityMatrix(data, self.d_opt, self.d_mech, self.tail_tol)

    def trace(self) -> float:
        return float(np.trace(self.data).real)

    def tensor(self) -> np.ndarray:
        """View as rho[n, m, n', m']."""
        return self.data.reshape(self.d_opt, self.d_mech, self.d_opt, self.d_mech)

    def optical_marginal(self) -> np.ndarray:
        return np.einsum("imjm->ij", self.tensor())

    def mechanical_marginal(self) -> np.ndarray:
        return np.einsum("nink->ik", self.tensor())

    def tail_mass(self) -> tuple[float, float]:
        """Population in the top 10% of the optical and mechanical ladders."""
        p_opt = np.real(np.diag(self.optical_marginal()))
        p_mech = np.real(np.diag(self.mechanical_marginal()))
        return (
            float(p_opt[-_top_levels(self.d_opt):].sum()),
            float(p_mech[-_top_levels(self.d_mech):].sum()),
        )

    @property
    def trusted(self) -> bool:
        return max(self.tail_mass()) < self.tail_tol

    def check_tail(self, where="state"):
        t_opt, t_mech = self.tail_mass()
        if t_opt >= self.tail_tol or t_mech >= self.tail_tol:
            raise TruncationError(
                f"{where}: top-ladder population (optical {t_opt:.3e}, mechanical {t_mech:.3e}) "
                f">= tail_tol {self.tail_tol:.1e}; raise d_opt={self.d_opt} / d_mech={self.d_mech}"
            )
        return self

    def validate(self, herm_tol=1e-12, trace_tol=1e-10, eig_tol=1e-10):
        """Check Hermiticity, unit trace and positivity; raise DomainError on failure."""
        herm = np.abs(self.data - self.data.conj().T).max()
        if herm > herm_tol:
            raise DomainError(f"density matrix not Hermitian (max deviation {herm:.2e})")
        if abs(self.trace() - 1.0) > trace_tol:
            raise DomainError(f"trace {self.trace()!r} differs from 1")
        lo = np.linalg.eigvalsh(0.5 * (self.data + self.data.conj().T)).min()
        if lo < -eig_tol:
            raise DomainError(f"negative eigenvalue {lo:.2e}")
        return self

    def expect(self, op) -> complex:
        return complex(np.sum(op.T.multiply(self.data)) if sp.issparse(op) else np.trace(op @ self.data))

    def dump(self, path):
        """Write the flat binary fixture format: two little-endian int32 dims, then row-major complex128."""
        path = Path(path)
        with open(path, "wb") as fh:
            fh.write(struct.pack("<ii", self.d_opt, self.d_mech))
            fh.write(np.ascontiguousarray(self.data, dtype="<c16").tobytes())

    @classmethod
    def load(cls, path, tail_tol=DEFAULT_TAIL_TOL) -> "JointDensityMatrix":
        raw = Path(path).read_bytes()
        if len(raw) < 8:
            raise DomainError(f"{path}: truncated header")
        d_opt, d_mech = struct.unpack("<ii", raw[:8])
        D = d_opt * d_mech
        expected = 8 + 16 * D * D
        if d_opt < 1 or d_mech < 1 or len(raw) != expected:
            raise DomainError(f"{path}: expected {expected} bytes for dims ({d_opt}, {d_mech}), got {len(raw)}")
        data = np.frombuffer(raw[8:], dtype="<c16").reshape(D, D).astype(complex)
        return cls(data, d_opt, d_mech, tail_tol)


@functools.lru_cache(maxsize=32)
def ladder_ops(d_opt: int, d_mech: int) -> tuple[sp.csr_matrix, sp.csr_matrix]:
    """Sparse annihilation operators (a, b) on the product space."""

    def destroy(d):
        return sp.diags(np.sqrt(np.arange(1, d, dtype=float)), 1, shape=(d, d), format="csr")

    a = sp.kron(destroy(d_opt), sp.identity(d_mech), format="csr")
    b = sp.kron(sp.identity(d_opt), destroy(d_mech), format="csr")
    return a, b


def interaction_generator(kind, d_opt, d_mech) -> sp.csr_matrix:
    """Dimensionless interaction H/(hbar G): ab^dag + a^dag b or a^dag b^dag + ab."""
    kind = Kind.parse(kind)
    a, b = ladder_ops(d_opt, d_mech)
    if kind is Kind.ANTI_STOKES:
        K = a @ b.T + a.T @ b
    else:
        K = a.T @ b.T + a @ b
    return K.tocsr()


def _geometric_tail(nbar, d):
    if nbar == 0:
        return 0.0
    return (nbar / (1.0 + nbar)) ** d


def thermal_product_state(nbar, d_opt, d_mech, tail_tol=DEFAULT_TAIL_TOL) -> JointDensityMatrix:
    """Optical vacuum times a thermal mechanical state, renormalized after truncation."""
    if nbar < 0:
        raise DomainError(f"nbar must be >= 0, got {nbar!r}")
    if d_opt < 2 or d_mech < 2:
        raise DomainError("truncation dimensions must be >= 2")
    tail = _geometric_tail(nbar, d_mech)
    if tail >= tail_tol:
        raise TruncationError(
            f"thermal law with mean {nbar} has tail mass {tail:.3e} beyond level {d_mech} (tail_tol {tail_tol:.1e})"
        )
    q = nbar / (1.0 + nbar)
    p = q ** np.arange(d_mech)
    p /= p.sum()
    D = d_opt * d_mech
    data = np.zeros((D, D), dtype=complex)
    idx = np.arange(d_mech)  # optical index 0
    data[idx, idx] = p
    return JointDensityMatrix(data, d_opt, d_mech, tail_tol)


def apply_generator(state: JointDensityMatrix, generator, angle) -> JointDensityMatrix:
    """Conjugate by exp(-i * angle * generator) for a Hermitian sparse generator."""
    if angle == 0:
        return state.copy()
    A = (-1j * angle) * generator
    X = expm_multiply(A, state.data)  # U rho
    out = expm_multiply(A, X.conj().T).conj().T  # U rho U^dag
    out = 0.5 * (out + out.conj().T)
    return state._with(out)


def apply_pulsed_unitary(state: JointDensityMatrix, kind, gtau) -> JointDensityMatrix:
    """Apply exp(-i H tau / hbar) with pulse area ``gtau`` = G*tau."""
    if gtau < 0:
        raise DomainError(f"gtau must be >= 0, got {gtau!r}")
    K = interaction_generator(kind, state.d_opt, state.d_mech)
    return apply_generator(state, K, gtau).check_tail("apply_pulsed_unitary")


def loss_kraus(eta, d) -> list[np.ndarray]:
    """Kraus operators A_k (k photons lost) of the pure-loss channel with transmission eta."""
    if not (0.0 <= eta <= 1.0):
        raise DomainError(f"eta must lie in [0, 1], got {eta!r}")
    ops = []
    n = np.arange(d)
    for k in range(d):
        A = np.zeros((d, d))
        src = n[n >= k]
        if eta == 0.0:
            amp = np.where(src == k, 1.0, 0.0)
        elif eta == 1.0:
            amp = np.where(k == 0, 1.0, 0.0) * np.ones_like(src, dtype=float)
        else:
            log_binom = gammaln(src + 1) - gammaln(k + 1) - gammaln(src - k + 1)
            amp = np.exp(0.5 * (log_binom + (src - k) * math.log(eta) + k * math.log1p(-eta)))
        A[src - k, src] = amp
        ops.append(A)
    return ops


def apply_loss(state: JointDensityMatrix, eta) -> JointDensityMatrix:
    """Attenuate the optical mode with intensity transmission ``eta``."""
    R = state.tensor()
    out = np.zeros_like(R)
    for A in loss_kraus(eta, state.d_opt):
        if not A.any():
            continue
        out += np.einsum("ij,jakb,lk->ialb", A, R, A, optimize=True)
    D = state.dim
    return state._with(out.reshape(D, D))


def project_photon_number(state: JointDensityMatrix, n) -> tuple[JointDensityMatrix, float]:
    """Project the optical mode on |n>; returns the conditional state and the outcome probability."""
    if not (0 <= n < state.d_opt):
        raise DomainError(f"photon number {n} outside the optical ladder of size {state.d_opt}")
    block = state.tensor()[n, :, n, :]
    prob = float(np.trace(block).real)
    if prob < 1e-300:
        raise ZeroProbabilityError(f"outcome n={n} has probability {prob:.3e}")
    R = np.zeros_like(state.tensor())
    R[n, :, n, :] = block / prob
    D = state.dim
    return state._with(R.reshape(D, D)), min(max(prob, 0.0), 1.0)


@dataclass(frozen=True)
class FockMoments:
    n_opt: float
    n_mech: float
    adag_b: complex
    ab: complex
    a2: complex
    b2: complex
    a: complex
    b: complex

    @property
    def a_bdag(self) -> complex:
        return self.adag_b.conjugate()

    @property
    def adag_bdag(self) -> complex:
        return self.ab.conjugate()

    def u(self, kind) -> float:
        """Real correlation variable: 2i<a^dag b> (anti-Stokes) or 2i<a^dag b^dag> (Stokes)."""
        kind = Kind.parse(kind)
        x = self.adag_b if kind is Kind.ANTI_STOKES else self.adag_bdag
        return float((2j * x).real)


def second_moments(state: JointDensityMatrix) -> FockMoments:
    a, b = ladder_ops(state.d_opt, state.d_mech)
    rho = state.data
    tr = np.trace(rho)

    def ev(op):
        return complex((op.T.multiply(rho)).sum() / tr)

    return FockMoments(
        n_opt=ev(a.T @ a).real,
        n_mech=ev(b.T @ b).real,
        adag_b=ev(a.T @ b),
        ab=ev(a @ b),
        a2=ev(a @ a),
        b2=ev(b @ b),
        a=ev(a),
        b=ev(b),
    )


def apply_click_jump_exact(state: JointDensityMatrix) -> tuple[JointDensityMatrix, float]:
    """Photon-detection jump a rho a^dag / <a^dag a>; returns the state and <a^dag a>."""
    a, _ = ladder_ops(state.d_opt, state.d_mech)
    ar = a @ state.data
    new = (a.conj() @ ar.conj().T).conj().T  # a rho a^dag
    rate = float(np.trace(new).real / state.trace())
    if rate <= 1e-12:
        raise ZeroRateError(f"<a^dag a> = {rate:.3e}: no photon to detect")
    new = new / np.trace(new).real
    return state._with(0.5 * (new + new.conj().T)), rate


def gaussian_state(kind, u, n_opt, n_mech, d_opt, d_mech, tail_tol=DEFAULT_TAIL_TOL) -> JointDensityMatrix:
    """Zero-mean phase-symmetric Gaussian state with the given real moments.

    Anti-Stokes correlations (<a^dag b> = -i u/2) come from a beamsplitter acting
    on a product of thermal states; Stokes correlations (<a^dag b^dag> = -i u/2)
    from a two-mode squeezer. A final phase rotation of the mechanics fixes the
    phase of the correlation.
    """
    kind = Kind.parse(kind)
    x = abs(u) / 2.0
    a, b = ladder_ops(d_opt, d_mech)
    if kind is Kind.ANTI_STOKES:
        mean, half = 0.5 * (n_opt + n_mech), 0.5 * (n_opt - n_mech)
        root = math.hypot(half, x)
        # the hotter seed sits on the hotter mode; the mixing angle stays in [0, pi/4]
        sign = 1.0 if n_opt >= n_mech else -1.0
        lam1, lam2 = mean + sign * root, mean - sign * root
        theta = 0.5 * math.atan2(2.0 * x, abs(n_opt - n_mech))
        gen = a.T @ b + b.T @ a
    else:
        A = n_opt + n_mech + 1.0
        T = math.sqrt(max(A * A - 4.0 * x * x, 0.0))
        if T < 1.0 - 1e-12:
            raise DomainError("moments violate the uncertainty principle")
        S = 0.5 * (A / T - 1.0)
        lam1 = 0.5 * (T - 1.0 + n_opt - n_mech)
        lam2 = 0.5 * (T - 1.0 - n_opt + n_mech)
        theta = math.asinh(math.sqrt(S))
        gen = 1j * (a.T @ b.T - a @ b)
    if min(lam1, lam2) < -1e-12:
        raise DomainError("moments violate the uncertainty principle")
    lam1, lam2 = max(lam1, 0.0), max(lam2, 0.0)
    for lam, d in ((lam1, d_opt), (lam2, d_mech)):
        if _geometric_tail(lam, d) >= tail_tol:
            raise TruncationError(f"thermal seed with mean {lam:.4g} does not fit in {d} levels")

    def thermal(lam, d):
        q = lam / (1.0 + lam)
        p = q ** np.arange(d)
        return p / p.sum()

    rho = np.diag(np.kron(thermal(lam1, d_opt), thermal(lam2, d_mech))).astype(complex)
    state = JointDensityMatrix(rho, d_opt, d_mech, tail_tol)
    if theta:
        state = apply_generator(state, gen.tocsr(), theta)
    target = -0.5j * u
    got = second_moments(state)
    corr = got.adag_b if kind is Kind.ANTI_STOKES else got.adag_bdag
    if abs(corr) > 0 and abs(target) > 0:
        # rotate the mechanics: b -> b e^{-i alpha}
        alpha = np.angle(corr / target)
        if kind is Kind.STOKES:
            alpha = -alpha
        state = apply_generator(state, (b.T @ b).tocsr(), alpha)
    return state.check_tail("gaussian_state")


# ---------------------------------------------------------------------------
# Continuous evolution


class _Generator:
    """Superoperator of the (possibly no-click, unnormalized) master equation.

    Acts on the row-major flattening of rho, where vec(A rho B) = (A kron B^T) vec(rho).
    The counter-monitored part of the optical decay, 2 eta kappa_ex, appears only
    in the anticommutator (no recycling term): that is the no-click evolution.
    """

    def __init__(self, params: SystemParams, kind, d_opt, d_mech, eta):
        a, b = ladder_ops(d_opt, d_mech)
        ad, bd = a.T.tocsr(), b.T.tocsr()
        p = params
        D = d_opt * d_mech
        H = p.G * interaction_generator(kind, d_opt, d_mech)
        monitored = 2.0 * eta * p.kappa_ex
        unmonitored = 2.0 * p.kappa - monitored
        channels = []
        if unmonitored > 0:
            channels.append((unmonitored, a))
        if p.gamma > 0:
            channels.append((2.0 * p.gamma * (p.Nbar + 1.0), b))
            if p.Nbar > 0:
                channels.append((2.0 * p.gamma * p.Nbar, bd))
        decay = monitored * (ad @ a)
        for rate, L in channels:
            decay = decay + rate * (L.T.conj() @ L)
        Heff = (H - 0.5j * decay).tocsr()
        eye = sp.identity(D, format="csr")
        S = -1j * sp.kron(Heff, eye) + 1j * sp.kron(eye, Heff.conj())
        for rate, L in channels:
            S = S + rate * sp.kron(L, L.conj())
        self.S = S.tocsr()
        self.D = D
        self.diag = np.arange(D) * (D + 1)
        self.n_opt = np.repeat(np.arange(d_opt, dtype=float), d_mech)
        self.monitored = monitored

    def __call__(self, v):
        return self.S @ v

    def trace(self, v):
        return v[self.diag].real.sum()

    def photon_number(self, v):
        d = v[self.diag].real
        return float(self.n_opt @ d / d.sum())


def _evolve(state, params, kind, duration, dt, eta, observer, samples, check_every=50, max_halvings=8):
    if duration < 0:
        raise DomainError("duration must be >= 0")
    if dt <= 0:
        raise DomainError("dt must be > 0")
    state.check_tail("initial state")
    gen = _Generator(params, kind, state.d_opt, state.d_mech, eta)
    for _ in range(max_halvings + 1):
        buffer = []
        result = _rk4_run(state, gen, duration, dt, observer, buffer, check_every)
        if result is not None:
            if samples is not None:
                samples.extend(buffer)
            return result
        dt *= 0.5
    raise StepSizeError(f"RK4 could not hold the trace-drift bound even at dt={dt:.3e}")


def _rk4_run(state, gen, duration, dt, observer, buffer, check_every):
    n_steps = max(1, int(math.ceil(duration / dt - 1e-9))) if duration > 0 else 0
    h = duration / n_steps if n_steps else 0.0
    D = gen.D
    v = state.data.ravel().copy()
    log_quad = 0.0
    log_trace = 0.0
    if observer is not None:
        buffer.append((0.0, observer(0.0, state._with(v.reshape(D, D).copy()))))
    for step in range(n_steps):
        k1 = gen(v)
        v2 = v + (0.5 * h) * k1
        k2 = gen(v2)
        v3 = v + (0.5 * h) * k2
        k3 = gen(v3)
        v4 = v + h * k3
        k4 = gen(v4)
        new = v + (h / 6.0) * (k1 + 2.0 * (k2 + k3) + k4)
        tr = gen.trace(new)
        if not np.isfinite(tr) or tr <= 0:
            return None
        if gen.monitored > 0:
            f = [gen.photon_number(x) for x in (v, v2, v3, v4)]
            dlog = -gen.monitored * (h / 6.0) * (f[0] + 2.0 * (f[1] + f[2]) + f[3])
            if abs(math.log(tr) - dlog) > 1e-9 * h + 1e-13:
                return None
            log_quad += dlog
            log_trace += math.log(tr)
        elif abs(tr - 1.0) > 1e-9 * h + 1e-13:
            return None
        new /= tr
        rho = new.reshape(D, D)
        rho = 0.5 * (rho + rho.conj().T)
        if np.real(np.diagonal(rho)).min() < -1e-9:
            return None
        v = rho.ravel()
        t = (step + 1) * h
        if (step + 1) % check_every == 0 or step == n_steps - 1:
            state._with(rho).check_tail(f"evolution at t={t:.4g}")
        if observer is not None:
            buffer.append((t, observer(t, state._with(rho.copy()))))
    return state._with(v.reshape(D, D).copy()), log_quad, log_trace


def evolve_unconditional(state, params: SystemParams, duration, dt, kind=Kind.ANTI_STOKES, observer=None,
                         samples=None):
    """Lindblad evolution with the counter averaged out (eta = 0).

    Fixed-step RK4 on the vectorized density matrix. The run restarts with a
    halved step whenever the trace drifts by more than 1e-9 per unit time.
    ``observer(t, state)`` is evaluated after every accepted step and its
    values are appended to ``samples`` as ``(t, value)``; values from
    abandoned runs are dropped.
    """
    out, _, _ = _evolve(state, params, kind, duration, dt, 0.0, observer, samples)
    return out


def evolve_conditioned_no_click(state, params: SystemParams, duration, dt, kind=Kind.ANTI_STOKES, observer=None,
                                samples=None):
    """Evolution conditioned on a photon counter (efficiency ``params.eta``) staying silent.

    Returns the normalized conditional state and log P0 = -2 eta kappa_ex
    integral <a^dag a> dt, accumulated with the RK4 quadrature weights. The
    step is halved until this agrees with the trace decay of the
    unnormalized state to 1e-9 per unit time.
    """
    out, log_quad, _ = _evolve(state, params, kind, duration, dt, params.eta, observer, samples)
    return out, log_quad


def no_click_trace_decay(state, params: SystemParams, duration, dt, kind=Kind.ANTI_STOKES):
    """log of the trace of the unnormalized no-click state: the record probability by the second route."""
    _, _, log_trace = _evolve(state, params, kind, duration, dt, params.eta, None, None)
    return log_trace


# ---------------------------------------------------------------------------
# Sector-decomposed pulsed pipeline


def _sector_layout(kind, d_mech):
    """Block sizes and couplings of the interaction generator, one block per initial phonon number m.

    Anti-Stokes block m spans |k, m-k>, k = 0..m; Stokes block m spans
    |k, m+k>, k = 0..d_mech-1-m. Both start at k = 0.
    """
    kind = Kind.parse(kind)
    blocks = []
    for m in range(d_mech):
        if kind is Kind.ANTI_STOKES:
            size = m + 1
            k = np.arange(size - 1)
            off = np.sqrt((k + 1.0) * (m - k))
            mech = m - np.arange(size)
        else:
            size = d_mech - m
            k = np.arange(size - 1)
            off = np.sqrt((k + 1.0) * (m + k + 1.0))
            mech = m + np.arange(size)
        blocks.append((size, off, mech))
    return blocks


@functools.lru_cache(maxsize=64)
def sector_amplitudes(kind, gtau, d_mech):
    """Amplitudes c[m][k] of exp(-i gtau K)|0, m> in each conserved sector.

    All sectors are exponentiated in one shot: the generator is block-diagonal,
    so acting on the sum of the sector start vectors returns every column.
    """
    kind = Kind.parse(kind)
    blocks = _sector_layout(kind, d_mech)
    sizes = [s for s, _, _ in blocks]
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    total = int(offsets[-1])
    upper = np.zeros(max(total - 1, 0))
    start = np.zeros(total, dtype=complex)
    for (size, off, _), o in zip(blocks, offsets[:-1]):
        start[o] = 1.0
        if size > 1:
            upper[o:o + size - 1] = off
    K = sp.diags([upper, upper], [1, -1], shape=(total, total), format="csr")
    if gtau == 0:
        psi = start
    else:
        psi = expm_multiply((-1j * gtau) * K, start)
    amps = tuple(psi[offsets[i]:offsets[i + 1]].copy() for i in range(d_mech))
    mech = tuple(blk[2] for blk in blocks)
    return amps, mech


def pulsed_pipeline(kind, nbar, gtau, eta, d_mech, outcome=0, tail_tol=DEFAULT_TAIL_TOL):
    """Thermal mechanics and optical vacuum -> pulse -> loss(eta) -> count ``outcome`` photons.

    Returns ``(mech_weights, probability)`` where ``mech_weights`` is the
    normalized diagonal of the heralded mechanical state (the state stays
    diagonal: every lost-photon branch is orthogonal in the environment).
    """
    if nbar < 0:
        raise DomainError(f"nbar must be >= 0, got {nbar!r}")
    if not (0.0 <= eta <= 1.0):
        raise DomainError(f"eta must lie in [0, 1], got {eta!r}")
    tail = _geometric_tail(nbar, d_mech)
    if tail >= tail_tol:
        raise TruncationError(
            f"thermal law with mean {nbar} has tail mass {tail:.3e} beyond level {d_mech} (tail_tol {tail_tol:.1e})"
        )
    q = nbar / (1.0 + nbar)
    p_in = q ** np.arange(d_mech)
    p_in /= p_in.sum()
    amps, mech = sector_amplitudes(Kind.parse(kind), float(gtau), int(d_mech))
    top = d_mech - _top_levels(d_mech)
    weights = np.zeros(d_mech)
    edge = 0.0
    for m in range(d_mech):
        if p_in[m] == 0.0:
            continue
        pop = np.abs(amps[m]) ** 2
        k = np.arange(pop.size)
        idx = mech[m]
        edge += p_in[m] * pop[(idx >= top) | (k >= top)].sum()
        sel = k >= outcome
        if not sel.any():
            continue
        kk = k[sel]
        lost = kk - outcome
        if eta == 1.0:
            det = np.where(lost == 0, 1.0, 0.0)
        elif eta == 0.0:
            det = np.where(kk == lost, 1.0, 0.0)
        else:
            log_binom = gammaln(kk + 1) - gammaln(outcome + 1) - gammaln(lost + 1)
            det = np.exp(log_binom + outcome * math.log(eta) + lost * math.log1p(-eta))
        np.add.at(weights, idx[sel], p_in[m] * pop[sel] * det)
    if edge >= tail_tol:
        raise TruncationError(
            f"pulsed {Kind.parse(kind).value} evolution put {edge:.3e} population in the top of the ladder "
            f"(d_mech={d_mech}, tail_tol {tail_tol:.1e})"
        )
    prob = float(weights.sum())
    if prob < 1e-300:
        raise ZeroProbabilityError(f"outcome n={outcome} has probability {prob:.3e}")
    return weights / prob, min(prob, 1.0)


def mean_of(weights) -> float:
    return float(np.dot(np.arange(len(weights)), weights))
