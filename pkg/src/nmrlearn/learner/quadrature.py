"""
Quadrature rules for the time integrals over ``[0, t]``.

``uniform-left`` and ``uniform-midpoint`` use ``L`` equal weights
``z = t/L``; ``gauss-legendre`` uses ``L`` Legendre nodes; ``exact`` evaluates
the integrals in closed form in the Hamiltonian eigenbasis and has no nodes
for the Jacobian.

An adaptive ``L`` is available through ``tol``: ``L(t) = max(L_min,
ceil(t**2 * ||O|| * max_n ||[H, V_n]|| / tol))`` capped at ``L_max``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from ..errors import InvalidSpecError

SCHEMES = ("uniform-left", "uniform-midpoint", "gauss-legendre", "exact")


@lru_cache(maxsize=64)
def _legendre(n: int) -> tuple[np.ndarray, np.ndarray]:
    x, w = np.polynomial.legendre.leggauss(n)
    x.setflags(write=False)
    w.setflags(write=False)
    return x, w


@dataclass(frozen=True)
class QuadratureRule:
    """Node/weight policy for ``int_0^t f(s) ds``.

    Attributes
    ----------
    scheme : str
        One of ``uniform-left``, ``uniform-midpoint``, ``gauss-legendre``, ``exact``.
    L : int
        Number of nodes (lower bound when ``tol`` is set).
    tol : float, optional
        Error budget for the adaptive node count.
    L_max : int
        Cap for the adaptive count.
    """

    scheme: str = "exact"
    L: int = 64
    tol: float | None = None
    L_max: int = 4096

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise InvalidSpecError(f"unknown quadrature scheme {self.scheme!r}; choose from {SCHEMES}")
        if self.L < 1:
            raise InvalidSpecError("L must be >= 1")

    @property
    def is_exact(self) -> bool:
        return self.scheme == "exact"

    def n_nodes(self, t: float, bound: float = 0.0) -> int:
        """Node count for horizon ``t``; ``bound`` is ``||O|| max_n ||[H, V_n]||``."""
        if self.tol is None or bound <= 0:
            return self.L
        want = math.ceil(t * t * bound / self.tol)
        if want > self.L_max:
            warnings.warn(
                f"adaptive quadrature wants L={want} at t={t:g} ms; capped at {self.L_max}",
                RuntimeWarning,
                stacklevel=3,
            )
            want = self.L_max
        return max(self.L, want)

    def nodes(self, t: float, n: int | None = None) -> tuple[np.ndarray, np.ndarray]:
        """Nodes ``s`` and weights ``z`` on ``[0, t]`` with ``sum(z) == t``."""
        n = self.L if n is None else int(n)
        if t == 0:
            return np.zeros(0), np.zeros(0)
        if self.scheme == "uniform-left":
            s = t * np.arange(n) / n
            z = np.full(n, t / n)
        elif self.scheme == "uniform-midpoint":
            s = t * (np.arange(n) + 0.5) / n
            z = np.full(n, t / n)
        else:
            # exact falls back to Gauss-Legendre wherever nodes are needed
            x, w = _legendre(n)
            s = 0.5 * t * (x + 1.0)
            z = 0.5 * t * w
        return s, z

    def to_dict(self) -> dict:
        return {"scheme": self.scheme, "L": self.L, "tol": self.tol, "L_max": self.L_max}

    @classmethod
    def from_dict(cls, d: dict | None) -> "QuadratureRule":
        if not d:
            return cls()
        return cls(d.get("scheme", "exact"), int(d.get("L", 64)), d.get("tol"), int(d.get("L_max", 4096)))


def gauss_legendre_count(omega_range: float, t: float, floor: int = 20) -> int:
    """Legendre nodes that resolve oscillations up to ``omega_range`` over ``[0, t]``."""
    return int(math.ceil(omega_range * t)) + floor
