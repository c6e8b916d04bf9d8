"""Named backflow states, each also split into family form ``(a - p) f(p)``."""

import json
import math
from dataclasses import dataclass

from .errors import NotApplicableError
from .states import (
    BrackenMelloy,
    BrackenMelloyReduced,
    EvesonTruncated,
    ExpPoly,
    GaussianF,
    MomentumState,
    normalize,
)

def bracken_melloy_prefactor(K=1.0):
    """Nominal 18/sqrt(35 K) prefactor of the Bracken-Melloy example state."""
    return 18 / math.sqrt(35 * K)


@dataclass(frozen=True)
class CatalogEntry:
    name: str
    state: MomentumState
    has_backflow: bool
    family_a: complex = None
    family_profile: object = None
    notes: str = ""

    def family_state(self):
        """The same state rebuilt as ``N (a - p) f(p)``."""
        if self.family_profile is None:
            raise NotApplicableError(f"{self.name} carries no family split")
        return normalize(MomentumState(self.family_profile, self.family_a, units=self.state.units))

    def to_dict(self):
        return {
            "name": self.name,
            "has_backflow": self.has_backflow,
            "notes": self.notes,
            "state": self.state.to_dict(),
            "family": None
            if self.family_profile is None
            else {"a": [self.family_a.real, self.family_a.imag], "profile": self.family_profile.to_dict()},
        }


def gaussian_0684(gamma0=1.0, a_gamma0=0.684):
    a = a_gamma0 / gamma0
    state = normalize(MomentumState(GaussianF(gamma0), a))
    return CatalogEntry(
        "gaussian_0684", state, True, complex(a), GaussianF(gamma0),
        "N (a - p) exp(-gamma0^2 p^2) at the flux-minimizing a gamma0 = 0.684",
    )


def bracken_melloy(K=1.0):
    """``18 / sqrt(35 K) p (exp(-p/K) - exp(-p/2K) / 6)`` with its nominal prefactor.

    The prefactor normalizes the state only at ``K = 1``.  The factor in
    parentheses vanishes at ``p = 2 K ln 6``, which gives the family split.
    """
    state = MomentumState(BrackenMelloy(K), 0j, bracken_melloy_prefactor(K), family_factor=False)
    return CatalogEntry(
        "bracken_melloy", state, True, complex(2 * K * math.log(6)), BrackenMelloyReduced(K),
        "nominal prefactor 18/sqrt(35K); a = 2K ln 6",
    )


def eveson(p0=1.0):
    """``N (sqrt(3) p - p0)`` on ``0 < p < p0``, with ``N`` computed numerically.

    Family split: ``a = p0 / sqrt(3)`` and ``f = -sqrt(3)`` on ``[0, p0)``.
    """
    state = normalize(MomentumState(EvesonTruncated(p0), 0j, family_factor=False))
    f = ExpPoly(((-math.sqrt(3), 0, 0.0, 0.0),), upper=p0)
    return CatalogEntry("eveson", state, True, complex(p0 / math.sqrt(3)), f, "a = p0/sqrt(3), f = -sqrt(3) on [0, p0)")


def penz_numeric(n=256, refine=4):
    """Maximizing eigenvector of the n-node flux matrix for the window (0, 1).

    The eigenvector is resampled through its Nystrom interpolant on a
    ``refine`` times finer rule, so free evolution stays resolved past t = 1.
    """
    from .fluxspec import bracken_melloy_bound, nystrom_interpolate

    estimate, state = bracken_melloy_bound(n)
    state = nystrom_interpolate(state, -estimate, refine=refine)
    return CatalogEntry("penz_numeric", state, True, notes=f"flux-operator eigenvector, n={n}, estimate {estimate:.6f}")


BUILDERS = {
    "gaussian_0684": gaussian_0684,
    "bracken_melloy": bracken_melloy,
    "eveson": eveson,
    "penz_numeric": penz_numeric,
}


def get(name, **kwargs):
    try:
        return BUILDERS[name](**kwargs)
    except KeyError:
        raise KeyError(f"unknown catalog entry {name!r}; known: {', '.join(BUILDERS)}") from None


def catalog(penz_n=256):
    return [gaussian_0684(), bracken_melloy(), eveson(), penz_numeric(penz_n)]


def catalog_json(penz_n=256):
    return json.dumps([e.to_dict() for e in catalog(penz_n)], indent=2)
