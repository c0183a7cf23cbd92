"""Physical parameters and the interaction selector."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, replace

from .errors import DomainError


class Kind(str, enum.Enum):
    """Which optomechanical sideband is driven."""

    ANTI_STOKES = "antiStokes"
    STOKES = "Stokes"

    @classmethod
    def parse(cls, value: "Kind | str") -> "Kind":
        if isinstance(value, Kind):
            return value
        key = str(value).strip().lower().replace("-", "").replace("_", "")
        if key in ("as", "antistokes", "beamsplitter", "bs"):
            return cls.ANTI_STOKES
        if key in ("s", "stokes", "tms", "twomodesqueezing"):
            return cls.STOKES
        raise DomainError(f"unknown interaction kind {value!r}")

    @property
    def short(self) -> str:
        return "as" if self is Kind.ANTI_STOKES else "s"


@dataclass(frozen=True)
class SystemParams:
    """Rates share one arbitrary time unit; ``kappa`` is derived, never stored.

    Parameters
    ----------
    G : float
        Linearized optomechanical coupling rate.
    kappa_ex, kappa_in : float
        External and intrinsic cavity amplitude decay rates.
    gamma : float
        Mechanical amplitude decay rate.
    Nbar : float
        Occupation of the mechanical bath.
    eta : float
        Photon-counting efficiency in [0, 1].
    """

    G: float
    kappa_ex: float
    kappa_in: float = 0.0
    gamma: float = 1.0
    Nbar: float = 0.0
    eta: float = 0.0

    def __post_init__(self):
        for name in ("G", "kappa_ex", "kappa_in", "gamma", "Nbar"):
            value = getattr(self, name)
            if not math.isfinite(value) or value < 0:
                raise DomainError(f"{name} must be finite and >= 0, got {value!r}")
        if not (0.0 <= self.eta <= 1.0):
            raise DomainError(f"eta must lie in [0, 1], got {self.eta!r}")

    @property
    def kappa(self) -> float:
        return self.kappa_ex + self.kappa_in

    @property
    def cooperativity(self) -> float:
        if self.kappa * self.gamma == 0:
            return math.inf
        return self.G**2 / (self.kappa * self.gamma)

    @classmethod
    def from_cooperativity(cls, C, kappa_ex, kappa_in=0.0, gamma=1.0, Nbar=0.0, eta=0.0):
        """Build parameters with ``G = sqrt(C * kappa * gamma)``."""
        if C < 0:
            raise DomainError(f"cooperativity must be >= 0, got {C!r}")
        G = math.sqrt(C * (kappa_ex + kappa_in) * gamma)
        return cls(G=G, kappa_ex=kappa_ex, kappa_in=kappa_in, gamma=gamma, Nbar=Nbar, eta=eta)

    def with_eta(self, eta: float) -> "SystemParams":
        return replace(self, eta=eta)

    def as_dict(self) -> dict:
        return {
            "G": self.G,
            "kappa_ex": self.kappa_ex,
            "kappa_in": self.kappa_in,
            "gamma": self.gamma,
            "Nbar": self.Nbar,
            "eta": self.eta,
        }


# Rate set of the steady-state sweeps (units of gamma) and of the scenario fixtures (units of G).
SWEEP_RATES = dict(kappa_ex=40.0, kappa_in=0.0, gamma=1.0)
SCENARIO_PARAMS = SystemParams(G=1.0, kappa_ex=3.0, kappa_in=0.0, gamma=1.0, Nbar=10.0, eta=1.0)
