"""
Parameterized Hamiltonians ``H(h) = 2*pi * sum_n h_n V_n``.

Parameters ``h`` are in kHz and each term operator ``V_n`` is a fixed real
combination of Pauli products, so the materialized matrix is in rad/ms.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .. import spinsim
from ..errors import DimensionMismatchError, InvalidSpecError

TWO_PI = 2.0 * np.pi

PauliOps = tuple[tuple[int, str], ...]


@dataclass(frozen=True)
class Term:
    """One basis operator ``V_n = sum_k c_k P_k``.

    Parameters
    ----------
    label : str
        Human-readable name such as ``"zz[0,3]"``.
    products : tuple of (float, tuple of (site, axis))
        Real coefficients and Pauli products.
    """

    label: str
    products: tuple[tuple[float, PauliOps], ...]

    @classmethod
    def from_products(cls, label: str, products: Iterable[tuple[float, Sequence[tuple[int, str]]]]) -> "Term":
        norm = tuple(
            (float(c), tuple((int(s), str(a).upper()) for s, a in ops)) for c, ops in products
        )
        if not norm:
            raise InvalidSpecError(f"term {label!r} has no Pauli products")
        return cls(label, norm)

    @property
    def sites(self) -> tuple[int, ...]:
        return tuple(sorted({s for _, ops in self.products for s, _ in ops}))

    @property
    def is_real(self) -> bool:
        # i**n_y is real iff the number of Y factors is even
        return all(sum(a == "Y" for _, a in ops) % 2 == 0 for _, ops in self.products)

    def matrix(self, n_spins: int) -> np.ndarray:
        return spinsim.pauli_sum(self.products, n_spins)

    def local_matrix(self) -> np.ndarray:
        """Matrix on the term's own support, sites relabelled ``0..k-1``."""
        relabel = {s: k for k, s in enumerate(self.sites)}
        prods = [(c, [(relabel[s], a) for s, a in ops]) for c, ops in self.products]
        return spinsim.pauli_sum(prods, len(relabel))

    def norm(self) -> float:
        """Spectral norm ``||V||``, computed on the support."""
        return float(np.max(np.abs(np.linalg.eigvalsh(self.local_matrix()))))

    def to_dict(self) -> dict:
        return {
            "label": self.label,
            "products": [[c, [[s, a] for s, a in ops]] for c, ops in self.products],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Term":
        return cls.from_products(d["label"], [(c, [tuple(o) for o in ops]) for c, ops in d["products"]])


def _as_vector(values, n: int, name: str, fill: float) -> np.ndarray:
    if values is None:
        return np.full(n, fill, dtype=float)
    arr = np.array(values, dtype=float).reshape(-1)
    if arr.shape[0] != n:
        raise DimensionMismatchError(f"{name} has length {arr.shape[0]}, expected {n}")
    return arr


@dataclass(frozen=True, eq=False)
class HamiltonianModel:
    """Linear Hamiltonian model over a fixed term basis.

    Attributes
    ----------
    n_spins : int
    terms : tuple of Term
    params : ndarray
        Current parameter vector ``h`` (kHz).
    free_mask : ndarray of bool
        ``True`` for parameters the optimizer may move.
    priors : ndarray
        Prior means ``h0`` (kHz).
    prior_widths : ndarray
        Prior widths ``w`` (kHz); ``inf`` disables the prior term.
    """

    n_spins: int
    terms: tuple[Term, ...]
    params: np.ndarray
    free_mask: np.ndarray = field(default=None)
    priors: np.ndarray = field(default=None)
    prior_widths: np.ndarray = field(default=None)

    def __post_init__(self):
        spinsim.check_spin_count(self.n_spins)
        terms = tuple(self.terms)
        object.__setattr__(self, "terms", terms)
        n = len(terms)
        params = _as_vector(self.params, n, "params", 0.0)
        mask = np.ones(n, dtype=bool) if self.free_mask is None else np.array(self.free_mask, dtype=bool).reshape(-1)
        if mask.shape[0] != n:
            raise DimensionMismatchError(f"free_mask has length {mask.shape[0]}, expected {n}")
        priors = _as_vector(self.priors, n, "priors", 0.0)
        widths = _as_vector(self.prior_widths, n, "prior_widths", np.inf)
        if np.any(widths <= 0) or np.any(np.isnan(widths)):
            raise InvalidSpecError("prior widths must be positive (inf allowed)")
        if not np.all(np.isfinite(params)):
            raise InvalidSpecError("parameters must be finite")
        for term in terms:
            for s in term.sites:
                if s >= self.n_spins:
                    raise InvalidSpecError(f"term {term.label!r} touches site {s} >= {self.n_spins}")
        for arr in (params, mask, priors, widths):
            arr.setflags(write=False)
        object.__setattr__(self, "params", params)
        object.__setattr__(self, "free_mask", mask)
        object.__setattr__(self, "priors", priors)
        object.__setattr__(self, "prior_widths", widths)

    # basic views ---------------------------------------------------------
    @property
    def n_params(self) -> int:
        return len(self.terms)

    @property
    def dim(self) -> int:
        return 2**self.n_spins

    @property
    def labels(self) -> list[str]:
        return [t.label for t in self.terms]

    @property
    def free_indices(self) -> np.ndarray:
        return np.flatnonzero(self.free_mask)

    @property
    def is_real(self) -> bool:
        return all(t.is_real for t in self.terms)

    def index(self, label: str) -> int:
        return self.labels.index(label)

    # construction helpers ------------------------------------------------
    def with_params(self, params) -> "HamiltonianModel":
        return HamiltonianModel(self.n_spins, self.terms, params, self.free_mask, self.priors, self.prior_widths)

    def with_free_params(self, free_values) -> "HamiltonianModel":
        """Replace only the free entries of ``params``."""
        p = self.params.copy()
        p[self.free_mask] = free_values
        return self.with_params(p)

    def with_mask(self, free_mask) -> "HamiltonianModel":
        return HamiltonianModel(self.n_spins, self.terms, self.params, free_mask, self.priors, self.prior_widths)

    def with_priors(self, priors=None, prior_widths=None) -> "HamiltonianModel":
        return HamiltonianModel(
            self.n_spins,
            self.terms,
            self.params,
            self.free_mask,
            self.priors if priors is None else priors,
            self.prior_widths if prior_widths is None else prior_widths,
        )

    # matrices ------------------------------------------------------------
    def matrix(self, params=None) -> np.ndarray:
        """Dense ``H`` in rad/ms."""
        h = self.params if params is None else _as_vector(params, self.n_params, "params", 0.0)
        products = [
            (TWO_PI * hn * c, ops) for hn, term in zip(h, self.terms) if hn != 0.0 for c, ops in term.products
        ]
        return spinsim.pauli_sum(products, self.n_spins)

    def term_matrix(self, n: int) -> np.ndarray:
        """Dense ``V_n`` (dimensionless, no ``2*pi``)."""
        return self.terms[n].matrix(self.n_spins)

    def term_left_multiply(self, n: int, A: np.ndarray) -> np.ndarray:
        """``V_n @ A`` without forming ``V_n``."""
        return spinsim.pauli_left_multiply(self.terms[n].products, self.n_spins, A)

    # serialization -------------------------------------------------------
    def to_dict(self) -> dict:
        return {
            "n_spins": self.n_spins,
            "terms": [t.to_dict() for t in self.terms],
            "params_khz": self.params.tolist(),
            "free_mask": self.free_mask.tolist(),
            "priors_khz": self.priors.tolist(),
            "prior_widths_khz": [w if np.isfinite(w) else "inf" for w in self.prior_widths.tolist()],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "HamiltonianModel":
        widths = [float(w) for w in d.get("prior_widths_khz", [])] or None
        return cls(
            int(d["n_spins"]),
            tuple(Term.from_dict(t) for t in d["terms"]),
            d["params_khz"],
            d.get("free_mask"),
            d.get("priors_khz"),
            widths,
        )
