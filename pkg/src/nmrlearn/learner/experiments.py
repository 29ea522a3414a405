"""
Experiment descriptors and signal synthesis.

An experiment prepares ``rho_x``, evolves under ``H`` and measures a Pauli
product ``O_x`` at a list of times. Signals are

    S_x(t) = Tr[U(t) rho_x U(t)^dagger O_x],   U(t) = exp(+i H t).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .. import spinsim
from ..errors import DataError, DimensionMismatchError, InvalidSpecError
from .model import HamiltonianModel


@dataclass(frozen=True)
class StateSpec:
    """Initial-state descriptor.

    ``kind`` is one of

    ``"polarized"``
        ``(I + P_site) / 2**N`` with ``P`` the Pauli ``axis`` (Z or X) on one site.
    ``"basis"``
        ``|bits><bits|``; ``bits`` is a string of ``0``/``1`` (0 = up).
    ``"diagonal"``
        ``diag(weights)``; weights non-negative, summing to 1.
    """

    kind: str
    site: int | None = None
    axis: str = "Z"
    bits: str | None = None
    weights: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.kind not in ("polarized", "basis", "diagonal"):
            raise InvalidSpecError(f"unknown state kind {self.kind!r}")
        if self.kind == "polarized":
            if self.site is None or self.axis.upper() not in ("X", "Y", "Z"):
                raise InvalidSpecError("polarized state needs a site and an axis in X/Y/Z")
            object.__setattr__(self, "axis", self.axis.upper())
        if self.kind == "basis" and (not self.bits or set(self.bits) - {"0", "1"}):
            raise InvalidSpecError("basis state needs a 0/1 bit string")
        if self.kind == "diagonal":
            if self.weights is None:
                raise InvalidSpecError("diagonal state needs weights")
            w = np.asarray(self.weights, dtype=float)
            if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
                raise InvalidSpecError("diagonal weights must be non-negative and sum to 1")
            object.__setattr__(self, "weights", tuple(float(x) for x in w))

    @classmethod
    def polarized(cls, site: int, axis: str = "Z") -> "StateSpec":
        return cls("polarized", site=int(site), axis=axis)

    @property
    def key(self) -> tuple:
        return (self.kind, self.site, self.axis, self.bits, self.weights)

    def matrix(self, n_spins: int) -> np.ndarray:
        dim = 2**n_spins
        if self.kind == "polarized":
            if not 0 <= self.site < n_spins:
                raise InvalidSpecError(f"polarized site {self.site} outside 0..{n_spins - 1}")
            rho = spinsim.pauli_term([(self.site, self.axis)], 1.0, n_spins)
            rho[np.diag_indices(dim)] += 1.0
            return rho / dim
        if self.kind == "basis":
            if len(self.bits) != n_spins:
                raise DimensionMismatchError(f"bit string length {len(self.bits)} != {n_spins}")
            rho = np.zeros((dim, dim), dtype=complex)
            k = int(self.bits, 2)
            rho[k, k] = 1.0
            return rho
        w = np.asarray(self.weights)
        if w.shape[0] != dim:
            raise DimensionMismatchError(f"{w.shape[0]} diagonal weights for dimension {dim}")
        return np.diag(w).astype(complex)

    @property
    def is_real(self) -> bool:
        return not (self.kind == "polarized" and self.axis == "Y")

    def to_dict(self) -> dict:
        d = {"kind": self.kind}
        if self.kind == "polarized":
            d.update(site=self.site, axis=self.axis)
        elif self.kind == "basis":
            d["bits"] = self.bits
        else:
            d["weights"] = list(self.weights)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "StateSpec":
        w = d.get("weights")
        return cls(d["kind"], d.get("site"), d.get("axis", "Z"), d.get("bits"), None if w is None else tuple(w))


@dataclass(frozen=True, eq=False)
class ExperimentSpec:
    """One correlator experiment.

    Attributes
    ----------
    id : str
    state : StateSpec
    observable : tuple of (site, axis)
        Pauli product with unit coefficient, so ``||O|| = 1``.
    times : ndarray
        Strictly increasing, non-negative sample times (ms).
    sigma : ndarray
        Per-time noise scale, positive.
    """

    id: str
    state: StateSpec
    observable: tuple[tuple[int, str], ...]
    times: np.ndarray
    sigma: np.ndarray = field(default=None)

    def __post_init__(self):
        obs = tuple((int(s), str(a).upper()) for s, a in self.observable)
        if not obs:
            raise InvalidSpecError("observable must name at least one Pauli factor")
        object.__setattr__(self, "observable", obs)
        t = np.array(self.times, dtype=float).reshape(-1)
        if t.size == 0 or np.any(t < 0) or np.any(np.diff(t) <= 0) or not np.all(np.isfinite(t)):
            raise InvalidSpecError(f"experiment {self.id!r}: times must be finite, >= 0 and strictly increasing")
        if self.sigma is None:
            sig = np.ones_like(t)
        else:
            sig = np.broadcast_to(np.array(self.sigma, dtype=float), t.shape).copy()
        if np.any(sig <= 0) or not np.all(np.isfinite(sig)):
            raise InvalidSpecError(f"experiment {self.id!r}: sigma must be positive")
        t.setflags(write=False)
        sig.setflags(write=False)
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "sigma", sig)

    @property
    def o_norm(self) -> float:
        return 1.0

    @property
    def observable_key(self) -> tuple:
        return self.observable

    @property
    def is_real(self) -> bool:
        return self.state.is_real and sum(a == "Y" for _, a in self.observable) % 2 == 0

    def observable_matrix(self, n_spins: int) -> np.ndarray:
        return spinsim.pauli_term(self.observable, 1.0, n_spins)

    def with_times(self, times, sigma=None) -> "ExperimentSpec":
        return ExperimentSpec(self.id, self.state, self.observable, times, sigma)

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "state": self.state.to_dict(),
            "observable": [[s, a] for s, a in self.observable],
            "times_ms": self.times.tolist(),
            "sigma": self.sigma.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentSpec":
        return cls(
            str(d["id"]),
            StateSpec.from_dict(d["state"]),
            tuple(tuple(o) for o in d["observable"]),
            d["times_ms"],
            d.get("sigma"),
        )


def correlator_experiments(
    n_spins: int,
    times,
    axes: Sequence[str] = ("Z", "X"),
    pairs: Iterable[tuple[int, int]] | None = None,
    sigma: float = 1.0,
) -> list[ExperimentSpec]:
    """Two-point correlators ``<P_i(t) P_j(0)>`` for ``P`` in ``axes``.

    ``rho = (I + P_j)/2**N`` and ``O = P_i`` for every ordered pair ``(i, j)``
    (including ``i == j``) unless ``pairs`` restricts them.
    """
    if pairs is None:
        pairs = [(i, j) for i in range(n_spins) for j in range(n_spins)]
    out = []
    for axis in axes:
        for i, j in pairs:
            out.append(
                ExperimentSpec(
                    f"{axis}{i}{axis}{j}" if n_spins <= 10 else f"{axis}{i}_{axis}{j}",
                    StateSpec.polarized(j, axis),
                    ((i, axis),),
                    times,
                    sigma,
                )
            )
    return out


@dataclass(frozen=True)
class SignalSet:
    """Measured or synthesized signal values keyed by experiment id."""

    values: dict
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        vals = {}
        for k, v in self.values.items():
            arr = np.array(v, dtype=float).reshape(-1)
            arr.setflags(write=False)
            vals[str(k)] = arr
        object.__setattr__(self, "values", vals)

    def __getitem__(self, key: str) -> np.ndarray:
        return self.values[key]

    def check(self, experiments: Sequence[ExperimentSpec]) -> None:
        """Raise :class:`DataError` if values are missing, mis-sized or non-finite."""
        for ex in experiments:
            if ex.id not in self.values:
                raise DataError(f"no signal values for experiment {ex.id!r}")
            v = self.values[ex.id]
            if v.shape != ex.times.shape:
                raise DataError(f"experiment {ex.id!r}: {v.size} values for {ex.times.size} times")
            if not np.all(np.isfinite(v)):
                raise DataError(f"experiment {ex.id!r}: signal contains NaN or inf")


def check_experiments(model: HamiltonianModel, experiments: Sequence[ExperimentSpec]) -> None:
    ids = [e.id for e in experiments]
    if len(set(ids)) != len(ids):
        raise InvalidSpecError("experiment ids must be unique")
    for ex in experiments:
        for s, _ in ex.observable:
            if not 0 <= s < model.n_spins:
                raise DimensionMismatchError(f"experiment {ex.id!r} observable site {s} outside the model")
        st = ex.state
        if st.kind == "polarized" and not 0 <= st.site < model.n_spins:
            raise DimensionMismatchError(f"experiment {ex.id!r} state site outside the model")
        if st.kind == "basis" and len(st.bits) != model.n_spins:
            raise DimensionMismatchError(f"experiment {ex.id!r} bit string length != {model.n_spins}")
        if st.kind == "diagonal" and len(st.weights) != model.dim:
            raise DimensionMismatchError(f"experiment {ex.id!r} weights length != {model.dim}")


def synthesize_signal(
    model: HamiltonianModel,
    experiments: Sequence[ExperimentSpec] | ExperimentSpec,
    noise: tuple[float, int] | None = None,
    params=None,
) -> SignalSet:
    """Exact signals ``S_x(t_j)``, optionally with i.i.d. Gaussian noise.

    Parameters
    ----------
    noise : (sigma_inject, seed), optional
        Noise is drawn once per dataset from ``numpy.random.default_rng(seed)``
        in experiment order.
    """
    from .derivatives import SpectralEngine

    if isinstance(experiments, ExperimentSpec):
        experiments = [experiments]
    check_experiments(model, experiments)
    engine = SpectralEngine(model, experiments, params=params, indices=())
    values = {ex.id: engine.signal(k) for k, ex in enumerate(experiments)}
    prov = {"source": "synthesized", "noise_mode": "per-dataset"}
    if noise is not None:
        sigma_inject, seed = noise
        rng = np.random.default_rng(seed)
        for ex in experiments:
            values[ex.id] = values[ex.id] + sigma_inject * rng.standard_normal(ex.times.shape)
        prov.update(sigma_inject=float(sigma_inject), seed=int(seed))
    else:
        prov.update(sigma_inject=0.0, seed=None)
    return SignalSet(values, prov)
