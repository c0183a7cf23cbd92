"""Closed-form pulsed results: a short anti-Stokes (beamsplitter) or Stokes
(two-mode squeezing) pulse acting on optical vacuum and a thermal mechanical
state, followed by photon counting.

All functions are pure and take scalars. ``gtau`` is the pulse area G*tau.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import nbinom

from .errors import DomainError

# Past this value of sinh^2(G tau) the Stokes expressions are evaluated through
# 1/sinh^2, which stays finite for any pulse area.
SINH2_SWITCH = 1e12
DEFAULT_TAIL = 1e-10
MAX_WEIGHTS = 10_000_000


@dataclass(frozen=True)
class ConditionedThermalResult:
    """Mechanical state after a pulse and a photon-counting outcome.

    ``fock_weights[m]`` is the probability of m phonons, truncated to a finite
    prefix (its sum is <= 1).
    """

    occupation: float
    probability: float
    fock_weights: np.ndarray | None = None

    def __post_init__(self):
        if self.fock_weights is not None:
            self.fock_weights.setflags(write=False)


def _check_nbar(nbar):
    if not math.isfinite(nbar) or nbar < 0:
        raise DomainError(f"nbar must be finite and >= 0, got {nbar!r}")


def _check_gtau(gtau):
    if not math.isfinite(gtau) or gtau < 0:
        raise DomainError(f"gtau must be finite and >= 0, got {gtau!r}")


def _check_eta(eta):
    if not (0.0 <= eta <= 1.0):
        raise DomainError(f"eta must lie in [0, 1], got {eta!r}")


def _check_clicks(n):
    if isinstance(n, bool) or int(n) != n or n < 0:
        raise DomainError(f"n_clicks must be a non-negative integer, got {n!r}")
    return int(n)


def _negbin_weights(r, p_success, shift=0, cutoff=None, tail=DEFAULT_TAIL):
    """pmf of ``shift + NegBin(r, p_success)`` on 0..cutoff-1.

    NegBin counts failures before the r-th success, so the pmf at j is
    C(j + r - 1, r - 1) p^r (1 - p)^j.
    """
    if cutoff is None:
        if p_success >= 1.0:
            cutoff = shift + 1
        else:
            cutoff = shift + int(nbinom.isf(tail, r, p_success)) + 2
    if cutoff > MAX_WEIGHTS:
        raise DomainError(f"fock_weights cutoff {cutoff} exceeds {MAX_WEIGHTS}; pass a smaller cutoff")
    m = np.arange(cutoff)
    out = np.zeros(cutoff)
    mask = m >= shift
    if p_success >= 1.0:
        out[mask & (m == shift)] = 1.0
    else:
        out[mask] = nbinom.pmf(m[mask] - shift, r, p_success)
    return out


def _thermal_weights(occupation, cutoff=None, tail=DEFAULT_TAIL):
    return _negbin_weights(1, 1.0 / (1.0 + occupation), cutoff=cutoff, tail=tail)


def _inv_sinh2(gtau):
    """1/sinh^2(gtau), finite for every gtau > 0."""
    w = math.exp(-2.0 * gtau)
    return 4.0 * w / (1.0 - w) ** 2


def _sinh2(gtau):
    return math.sinh(gtau) ** 2 if gtau < 15.0 else math.inf


def laser_cooled_occupation(nbar, gtau):
    """Unconditioned mechanical occupation after the anti-Stokes pulse, nbar*cos^2(G tau)."""
    _check_nbar(nbar)
    _check_gtau(gtau)
    return nbar * math.cos(gtau) ** 2


def pulsed_as_zero_click(nbar, gtau, eta, cutoff=None):
    """Anti-Stokes pulse followed by a zero-click outcome at efficiency ``eta``.

    The heralded mechanical state is thermal with occupation
    nbar*cos^2 / (1 + eta*nbar*sin^2) and the outcome has probability
    1 / (1 + eta*nbar*sin^2). Pass ``cutoff=0`` to skip the Fock weights.
    """
    _check_nbar(nbar)
    _check_gtau(gtau)
    _check_eta(eta)
    s2 = math.sin(gtau) ** 2
    c2 = math.cos(gtau) ** 2
    denom = 1.0 + eta * nbar * s2
    occ = nbar * c2 / denom
    weights = None if cutoff == 0 else _thermal_weights(occ, cutoff)
    return ConditionedThermalResult(occ, 1.0 / denom, weights)


def pulsed_as_n_click(nbar, gtau, n_clicks, cutoff=None):
    """Anti-Stokes pulse followed by detection of exactly ``n_clicks`` photons (lossless)."""
    _check_nbar(nbar)
    _check_gtau(gtau)
    n = _check_clicks(n_clicks)
    s2 = math.sin(gtau) ** 2
    c2 = math.cos(gtau) ** 2
    x = nbar * s2
    if x == 0.0:
        prob = 1.0 if n == 0 else 0.0
    else:
        prob = math.exp(n * math.log(x) - (n + 1) * math.log1p(x))
    occ = (n + 1) * nbar * c2 / (1.0 + x)
    weights = None
    if cutoff != 0:
        # rho_n is NegBin(n+1) with ratio nbar*cos^2 / (1 + nbar)
        p_success = (1.0 + x) / (1.0 + nbar)
        weights = _negbin_weights(n + 1, p_success, cutoff=cutoff)
    return ConditionedThermalResult(occ, prob, weights)


def tms_occupation(nbar, gtau):
    """Unconditioned mechanical occupation after the Stokes pulse, nbar + (nbar+1) sinh^2(G tau)."""
    _check_nbar(nbar)
    _check_gtau(gtau)
    s2 = _sinh2(gtau)
    if s2 > SINH2_SWITCH:
        # grows like e^{2 G tau}; inf once that is unrepresentable
        log_val = math.log1p(nbar) + 2.0 * gtau - math.log(4.0)
        return math.exp(log_val) if log_val < 709.0 else math.inf
    return nbar + (nbar + 1.0) * s2


def pulsed_s_zero_click(nbar, gtau, eta, cutoff=None):
    """Stokes pulse followed by a zero-click outcome at efficiency ``eta``.

    Occupation [nbar + (1+nbar)(1-eta) S] / [1 + eta (1+nbar) S] with
    S = sinh^2(G tau); tends to (1-eta)/eta for long pulses.
    """
    _check_nbar(nbar)
    _check_gtau(gtau)
    _check_eta(eta)
    s2 = _sinh2(gtau)
    if s2 > SINH2_SWITCH:
        inv = _inv_sinh2(gtau)
        num = nbar * inv + (1.0 + nbar) * (1.0 - eta)
        den = inv + eta * (1.0 + nbar)
        occ = num / den if den > 0 else math.inf
        prob = inv / den if den > 0 else 1.0
    else:
        den = 1.0 + eta * (1.0 + nbar) * s2
        occ = (nbar + (1.0 + nbar) * (1.0 - eta) * s2) / den
        prob = 1.0 / den
    weights = None
    if cutoff != 0 and math.isfinite(occ):
        weights = _thermal_weights(occ, cutoff)
    return ConditionedThermalResult(occ, prob, weights)


def pulsed_s_n_click(nbar, gtau, n_clicks, cutoff=None):
    """Stokes pulse followed by detection of exactly ``n_clicks`` photons (lossless).

    The heralded state has support on m >= n with occupation (n+1)*n0 + n,
    n0 = nbar / (1 + (nbar+1) sinh^2).
    """
    _check_nbar(nbar)
    _check_gtau(gtau)
    n = _check_clicks(n_clicks)
    s2 = _sinh2(gtau)
    if s2 > SINH2_SWITCH:
        inv = _inv_sinh2(gtau)
        n0 = nbar * inv / (inv + nbar + 1.0)
        # log P_n = n log((1+nbar)S) - (n+1) log(1 + (1+nbar)S), written with 1/S
        log_prob = n * math.log1p(nbar) - (n + 1) * math.log(inv + 1.0 + nbar) + math.log(inv)
    else:
        y = (1.0 + nbar) * s2
        n0 = nbar / (1.0 + y)
        if y == 0.0:
            log_prob = 0.0 if n == 0 else -math.inf
        else:
            log_prob = n * math.log(y) - (n + 1) * math.log1p(y)
    prob = math.exp(log_prob)
    occ = (n + 1) * n0 + n
    weights = None
    if cutoff != 0:
        # m - n is NegBin(n+1) with ratio n0 / (1 + n0)
        weights = _negbin_weights(n + 1, 1.0 / (1.0 + n0), shift=n, cutoff=cutoff)
    return ConditionedThermalResult(occ, prob, weights)


def pulsed_threshold_efficiency(nbar):
    """Efficiency above which a Stokes zero-click herald cools: 1/(1 + nbar)."""
    _check_nbar(nbar)
    return 1.0 / (1.0 + nbar)
