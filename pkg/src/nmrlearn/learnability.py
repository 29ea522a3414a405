"""
Learnability diagnostics: participation entropy, multifractal dimension and
Hessian eigenstructure of spin clusters.

All logarithms are natural.
"""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from . import spinsim
from .errors import CapacityError, DegenerateInputError, InvalidInputError
from .learner.experiments import correlator_experiments
from .learner.model import HamiltonianModel
from .learner.objective import hessian_gauss_newton
from .learner.quadrature import QuadratureRule
from .nmrmodel import build_secular_hamiltonian
from .synthetic import EnsembleMember

D1_MAX = 1.15
NORM_TOL = 1e-8


def participation_entropy(psi: np.ndarray) -> float:
    """``S1 = sum_a p_a ln p_a`` with ``p_a = |psi_a|**2`` and ``0 ln 0 = 0``.

    >>> round(participation_entropy(np.array([1, 1]) / np.sqrt(2)), 6)
    -0.693147
    """
    psi = np.asarray(psi)
    p = np.abs(psi) ** 2
    if abs(p.sum() - 1.0) > NORM_TOL:
        raise InvalidInputError(f"state norm^2 is {p.sum():.6g}, expected 1")
    nz = p[p > 0]
    return float(np.sum(nz * np.log(nz)))


def _column_entropies(vectors: np.ndarray) -> np.ndarray:
    p = np.abs(vectors) ** 2
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, p * np.log(np.where(p > 0, p, 1.0)), 0.0)
    return terms.sum(axis=0)


def middle_window(dim: int) -> np.ndarray:
    """Eigenstate ranks ``k`` with ``dim/4 <= k < 3 dim/4``."""
    k = np.arange(dim)
    return k[(4 * k >= dim) & (4 * k < 3 * dim)]


def mean_middle_entropy(block: np.ndarray) -> tuple[float, int]:
    """Mean ``S1`` over the middle half of the spectrum of a Hermitian block."""
    dim = block.shape[0]
    if dim < 4:
        raise DegenerateInputError(f"sector dimension {dim} < 4")
    _, vecs = np.linalg.eigh(block)
    ranks = middle_window(dim)
    s = _column_entropies(vecs[:, ranks])
    return float(s.mean()), int(ranks.size)


def filling(n_spins: int) -> int:
    return n_spins // 2


def ergodic_entropy(n_spins: int) -> float:
    """``-ln C(N, floor(N/2))``: the fully delocalized limit."""
    return -math.log(math.comb(n_spins, filling(n_spins)))


@dataclass
class EntropyRecord:
    cluster_id: str
    n_spins: int
    filling: int
    alpha: float
    mean_S1: float
    n_states_averaged: int


def cluster_mean_entropy(model: HamiltonianModel, cluster_id: str = "", alpha: float = float("nan")) -> EntropyRecord:
    """Mean middle-spectrum ``S1`` in the ``floor(N/2)``-up sector of a secular model."""
    N = model.n_spins
    P = filling(N)
    block, _ = spinsim.sector_project(model.matrix(), P)
    s1, count = mean_middle_entropy(block)
    return EntropyRecord(cluster_id, N, P, float(alpha), s1, count)


@dataclass
class MultifractalFit:
    alpha: float
    slope: float
    intercept: float
    ergodic_slope: float
    D1: float
    n_clusters: int
    residual: float


def fit_multifractal(n_values, entropies, alpha: float = float("nan")) -> MultifractalFit:
    """Least-squares slope of ``S1`` vs ``N`` over the ergodic slope at the same ``N``.

    ``D1`` is clamped to ``[0, 1.15]``.
    """
    n = np.asarray(n_values, dtype=float)
    s = np.asarray(entropies, dtype=float)
    if n.shape != s.shape or n.size == 0:
        raise InvalidInputError("n_values and entropies must be non-empty and equally long")
    if np.unique(n).size < 4:
        raise DegenerateInputError("need at least 4 distinct cluster sizes")
    slope, intercept = np.polyfit(n, s, 1)
    erg = np.array([ergodic_entropy(int(k)) for k in n])
    erg_slope = np.polyfit(n, erg, 1)[0]
    resid = s - (slope * n + intercept)
    D1 = float(np.clip(slope / erg_slope, 0.0, D1_MAX))
    return MultifractalFit(float(alpha), float(slope), float(intercept), float(erg_slope), D1, int(n.size), float(np.sqrt(np.mean(resid**2))))


def ergodic_slope(n_values) -> float:
    n = np.asarray(n_values, dtype=float)
    return float(np.polyfit(n, [ergodic_entropy(int(k)) for k in n], 1)[0])


def multifractal_dimension(ensemble: Sequence[EnsembleMember], alpha: float) -> tuple[MultifractalFit, list[EntropyRecord]]:
    """Entropy records for every member at ``alpha`` and the resulting fit."""
    records = [
        cluster_mean_entropy(build_secular_hamiltonian(m.system.with_alpha(alpha)), m.cluster_id, alpha)
        for m in ensemble
    ]
    fit = fit_multifractal([r.n_spins for r in records], [r.mean_S1 for r in records], alpha)
    return fit, records


def hessian_participation(v: np.ndarray) -> float:
    """``exp(-sum_j v_j**2 ln v_j**2)``, between 1 and ``len(v)``."""
    v = np.asarray(v, dtype=float)
    n2 = float(v @ v)
    if n2 == 0.0:
        raise InvalidInputError("zero vector")
    if abs(n2 - 1.0) > NORM_TOL:
        raise InvalidInputError(f"vector norm^2 is {n2:.6g}, expected 1")
    p = v * v
    nz = p[p > 0]
    return float(np.exp(-np.sum(nz * np.log(nz))))


@dataclass
class HessianSpectrumRecord:
    cluster_id: str
    n_spins: int
    alpha: float
    eigenvalues: np.ndarray
    participations: np.ndarray

    @property
    def lambda_max(self) -> float:
        return float(self.eigenvalues[0])

    @property
    def top_participation(self) -> float:
        return float(self.participations[0])


@dataclass(frozen=True)
class ScanSettings:
    """Dataset for the learnability Hessian.

    Attributes
    ----------
    n_times : int
        Equally spaced times on ``[0, t_end_ms]``.
    t_end_ms : float
    axes : tuple of str
        Correlator axes; ``(i, j)`` runs over all ordered pairs.
    sigma : float
    cap : int
        Larger clusters are skipped with a warning.
    """

    n_times: int = 26
    t_end_ms: float = 5.0
    axes: tuple = ("Z", "X")
    sigma: float = 1.0
    cap: int = spinsim.DEFAULT_HESSIAN_SPINS

    @property
    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.t_end_ms, self.n_times)


def hessian_spectrum(model: HamiltonianModel, settings: ScanSettings, cluster_id: str = "", alpha: float = float("nan")) -> HessianSpectrumRecord:
    """Gauss-Newton Hessian at the true parameters, all parameters free, flat priors."""
    model = model.with_mask(np.ones(model.n_params, bool)).with_priors(np.zeros(model.n_params), np.full(model.n_params, np.inf))
    exps = correlator_experiments(model.n_spins, settings.times, settings.axes, sigma=settings.sigma)
    H = hessian_gauss_newton(model, exps, None, QuadratureRule("exact"))
    w, V = np.linalg.eigh(0.5 * (H + H.T))
    order = np.argsort(w)[::-1]
    w, V = w[order], V[:, order]
    parts = np.array([hessian_participation(V[:, k] / np.linalg.norm(V[:, k])) for k in range(V.shape[1])])
    return HessianSpectrumRecord(cluster_id, model.n_spins, float(alpha), w, parts)


def geometric_mean(values) -> float:
    """Geometric mean; NaN for an empty input.

    >>> round(geometric_mean([1, 100]), 9)
    10.0
    """
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        return float("nan")
    if np.any(v <= 0):
        return 0.0
    return float(np.exp(np.mean(np.log(v))))


@dataclass
class ScanResult:
    records: list
    skipped: list = field(default_factory=list)

    def typical(self) -> list[dict]:
        """Geometric means of ``lambda_max`` and top participation per ``(alpha, N)``."""
        keys = sorted({(r.alpha, r.n_spins) for r in self.records})
        rows = []
        for a, n in keys:
            sel = [r for r in self.records if r.alpha == a and r.n_spins == n]
            rows.append(
                {
                    "alpha": a,
                    "n_spins": n,
                    "n_clusters": len(sel),
                    "typical_lambda_max": geometric_mean([r.lambda_max for r in sel]),
                    "typical_top_participation": geometric_mean([r.top_participation for r in sel]),
                }
            )
        return rows


def learnability_scan(
    ensemble: Sequence[EnsembleMember],
    alphas: Sequence[float],
    settings: ScanSettings | None = None,
    workers: int = 1,
) -> ScanResult:
    """Hessian spectra for every ``(member, alpha)``.

    Tasks run on a thread pool of ``workers`` and are collected in
    ``(member, alpha)`` order, so results do not depend on ``workers``.
    """
    settings = settings or ScanSettings()
    tasks, skipped = [], []
    for m in ensemble:
        if m.n > settings.cap:
            msg = f"cluster {m.cluster_id} has {m.n} spins > cap {settings.cap}; skipped"
            warnings.warn(msg, RuntimeWarning, stacklevel=2)
            skipped.append({"cluster_id": m.cluster_id, "n_spins": m.n, "reason": msg})
            continue
        for a in alphas:
            tasks.append((m, float(a)))

    def run(task):
        m, a = task
        return hessian_spectrum(build_secular_hamiltonian(m.system.with_alpha(a)), settings, m.cluster_id, a)

    if workers > 1 and len(tasks) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(run, tasks))
    else:
        records = [run(t) for t in tasks]
    return ScanResult(records, skipped)


def record_to_dict(rec) -> dict:
    d = asdict(rec)
    for k, v in d.items():
        if isinstance(v, np.ndarray):
            d[k] = v.tolist()
    return d


def check_cap(n: int, cap: int) -> None:
    if n > cap:
        raise CapacityError(f"{n} spins exceeds cap {cap}")
