"""
Closed-form resource estimates for learning a spin Hamiltonian from
time-resolved data, on sampling (near-term) and coherent (fault-tolerant)
hardware.

Every formula is an asymptotic statement evaluated with constant factor 1.
Reports carry the label :data:`ORDER_NOTE` and a provenance string per value;
none of the numbers is a gate count.

Units: times in ms; couplings and Lambda sums in kHz.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .errors import DataError, DomainError, InvalidInputError

ORDER_NOTE = "order-of-magnitude; constants suppressed"
CEIL_RTOL = 1e-9
DEFAULT_TROTTER_P = 0.1
PEAK_FRACTION = 0.05
TOPOLOGIES = ("chain", "clustered", "clustered-partial")
SAMPLINGS = ("sparse-log", "dense")

FORMULAS = {
    "hoeffding_J": "M = ceil(2 |O|^2 t^2 ln(2/delta) / eps^2)",
    "hoeffding_K": "M = ceil(|O|^2 t^4 ln(2/delta) / eps^2)",
    "nisq": "C = eps^-2 sigma^-4 [sum_t (sqrt(N_x) t^1.5 + sqrt(N_x) t^1.5)]^2",
    "lambda0": "lambda0 = sum_{x,t,l} z_{l,t} / sigma^2",
    "lambda1": "lambda1 = sum_{x,t,l,k} z_{l,t} a_{x,k} / sigma^2",
    "ft": "Q = ln(1/delta) (lambda0 + lambda1) / eps",
    "ft_hamiltonian": "Q_H = T ln(1/delta) (lambda0 + lambda1) / eps",
    "trotter": "R = X1 T (X2 T / eta)^p",
    "discretization": "L = ceil(lambda Lambda_ind T / eps)",
    "truncation": "K = 2^ceil(log2(ceil(lambda (N Lambda_ind + T + W) / eps)))",
}


def _ceil(x: float) -> int:
    """Ceiling that ignores rounding noise just above an integer."""
    r = round(x)
    if abs(x - r) <= CEIL_RTOL * max(1.0, abs(x)):
        return int(r)
    return int(math.ceil(x))


def _positive(name: str, value: float) -> float:
    value = float(value)
    if not value > 0 or not math.isfinite(value):
        raise DomainError(f"{name} must be positive and finite, got {value!r}")
    return value


def _check_delta(delta: float) -> float:
    delta = float(delta)
    if not 0 < delta < 1:
        raise DomainError(f"delta_fail must lie in (0, 1), got {delta!r}")
    return delta


# sample counts --------------------------------------------------------------
def hoeffding_bound_J(epsilon: float, delta_fail: float, o_norm: float, t: float) -> float:
    """Real-valued sample count before the ceiling; see :func:`hoeffding_samples_J`."""
    epsilon = _positive("epsilon", epsilon)
    delta_fail = _check_delta(delta_fail)
    return 2.0 * o_norm**2 * t**2 * math.log(2.0 / delta_fail) / epsilon**2


def hoeffding_bound_K(epsilon: float, delta_fail: float, o_norm: float, t: float) -> float:
    epsilon = _positive("epsilon", epsilon)
    delta_fail = _check_delta(delta_fail)
    return o_norm**2 * t**4 * math.log(2.0 / delta_fail) / epsilon**2


def hoeffding_samples_J(epsilon: float, delta_fail: float, o_norm: float = 1.0, t: float = 1.0) -> int:
    """Shots for one first-derivative term at time ``t`` to accuracy ``epsilon``.

    Smallest ``M`` with ``2 exp(-M eps^2 / (2 |O|^2 t^2)) <= delta_fail``.

    >>> hoeffding_samples_J(1.0, 2 / math.e, 1.0, 1.0)
    2
    """
    return max(1, _ceil(hoeffding_bound_J(epsilon, delta_fail, o_norm, t)))


def hoeffding_samples_K(epsilon: float, delta_fail: float, o_norm: float = 1.0, t: float = 1.0) -> int:
    """Shots for one second-derivative term; the tail exponent is ``M eps^2 / (|O|^2 t^4)``."""
    return max(1, _ceil(hoeffding_bound_K(epsilon, delta_fail, o_norm, t)))


# budgets --------------------------------------------------------------------
@dataclass(frozen=True)
class ExperimentBudget:
    """Accuracy target and dataset shape.

    Parameters
    ----------
    epsilon : float
        Target error on one gradient component.
    delta_fail : float
        Failure probability, in ``(0, 1)``.
    sigma : float
        Signal noise, same for every datapoint.
    n_x : int
        Number of experiments.
    times : sequence of float, optional
        Sample times (ms). Empty means "use a default grid up to ``T``".
    o_norm : float
    T : float, optional
        Longest time; defaults to ``max(times)``.
    """

    epsilon: float
    delta_fail: float
    sigma: float = 1.0
    n_x: int = 1
    times: tuple = ()
    o_norm: float = 1.0
    T: float | None = None

    def __post_init__(self):
        _positive("epsilon", self.epsilon)
        _check_delta(self.delta_fail)
        _positive("sigma", self.sigma)
        if int(self.n_x) < 1:
            raise DomainError("n_x must be >= 1")
        t = tuple(float(x) for x in self.times)
        if any(x < 0 for x in t):
            raise DomainError("times must be non-negative")
        object.__setattr__(self, "times", t)
        T = self.T if self.T is not None else (max(t) if t else None)
        if T is None:
            raise InvalidInputError("give either times or T")
        object.__setattr__(self, "T", _positive("T", T))

    def with_T(self, T: float) -> "ExperimentBudget":
        return ExperimentBudget(self.epsilon, self.delta_fail, self.sigma, self.n_x, (), self.o_norm, T)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["times"] = list(self.times)
        return d


def default_times(T: float, sampling: str = "sparse-log", dt: float = 1.0) -> np.ndarray:
    """Time grid on ``(0, T]``.

    ``"sparse-log"`` doubles from ``dt`` up to ``T``; ``"dense"`` steps by ``dt``.
    ``T`` itself is always included.
    """
    T = _positive("T", T)
    dt = _positive("dt", dt)
    if sampling == "sparse-log":
        k = int(math.floor(math.log2(T / dt))) if T > dt else -1
        grid = dt * 2.0 ** np.arange(k + 1)
    elif sampling == "dense":
        grid = dt * np.arange(1, int(math.floor(T / dt)) + 1)
    else:
        raise InvalidInputError(f"unknown sampling {sampling!r}; expected one of {SAMPLINGS}")
    grid = grid[grid < T * (1 - 1e-12)]
    return np.append(grid, T)


def budget_times(budget: ExperimentBudget, sampling: str = "sparse-log", dt: float = 1.0) -> np.ndarray:
    if budget.times:
        return np.asarray(budget.times)
    return default_times(budget.T, sampling, dt)


def nisq_query_total(
    budget: ExperimentBudget,
    sampling: str = "sparse-log",
    dt: float = 1.0,
    a_J: float = 1.0,
    a_S: float = 1.0,
) -> float:
    """Oracle calls for one gradient component with shots allocated optimally over time.

    The per-experiment constants ``a_J`` and ``a_S`` enter summed over
    experiments, so each bracket is ``sqrt(N_x a)``. Explicit ``budget.times``
    take precedence over the ``sampling`` grid.

    >>> round(nisq_query_total(ExperimentBudget(1.0, 0.5, times=(2.0,))), 9)
    32.0
    """
    if sampling not in SAMPLINGS:
        raise InvalidInputError(f"unknown sampling {sampling!r}")
    t = budget_times(budget, sampling, dt)
    inner = (math.sqrt(budget.n_x * a_J) + math.sqrt(budget.n_x * a_S)) * np.sum(t**1.5)
    return float(inner**2 / (budget.epsilon**2 * budget.sigma**4))


@dataclass(frozen=True)
class FourierComponent:
    a: float
    omega: float
    phi: float = 0.0

    def __post_init__(self):
        if self.a < 0:
            raise DomainError("Fourier amplitude must be >= 0")


@dataclass(frozen=True)
class FTParameters:
    """Problem sizes and interaction sums for the fault-tolerant estimates.

    ``trotter_exponent`` stands in for the unspecified small exponent in the
    Trotter step count.
    """

    n: int
    n_d: int
    n_omega: int
    lambda_ind: float
    lambda_total: float
    lambda_int: float
    fourier: tuple = ()
    trotter_exponent: float = DEFAULT_TROTTER_P

    def __post_init__(self):
        if self.lambda_int > self.lambda_total * (1 + 1e-12):
            raise DomainError("need lambda_int <= lambda_total")
        if self.lambda_ind > self.lambda_total * (1 + 1e-12):
            raise DomainError("need lambda_ind <= lambda_total")
        if min(self.lambda_ind, self.lambda_total, self.lambda_int) < 0:
            raise DomainError("Lambda sums must be >= 0")
        _positive("trotter_exponent", self.trotter_exponent)

    @property
    def W(self) -> float:
        return max((abs(c.omega) for c in self.fourier), default=0.0)


def _fourier_per_experiment(fourier, n_x: int) -> list:
    if fourier is None or len(fourier) == 0:
        return [[] for _ in range(n_x)]
    first = fourier[0]
    if isinstance(first, (FourierComponent, tuple)) and not isinstance(first, list):
        comps = [c if isinstance(c, FourierComponent) else FourierComponent(*c) for c in fourier]
        return [comps] * n_x
    if len(fourier) != n_x:
        raise InvalidInputError(f"need one Fourier list per experiment ({n_x}), got {len(fourier)}")
    return [[c if isinstance(c, FourierComponent) else FourierComponent(*c) for c in f] for f in fourier]


def ft_lambdas(
    budget: ExperimentBudget,
    fourier=None,
    z=None,
    sampling: str = "sparse-log",
    dt: float = 1.0,
) -> tuple[float, float]:
    """Block-encoding normalizations ``(lambda0, lambda1)``.

    Parameters
    ----------
    budget : ExperimentBudget
    fourier : sequence, optional
        Either one list of :class:`FourierComponent` (or ``(a, omega, phi)``
        tuples) shared by all experiments, or one list per experiment.
    z : sequence of array_like, optional
        Quadrature weights per sample time. The default is a single node of
        weight ``t``; only ``sum_l z_{l,t}`` matters.

    Examples
    --------
    >>> ft_lambdas(ExperimentBudget(1.0, 0.5, times=(3.0,)))
    (3.0, 0.0)
    """
    t = budget_times(budget, sampling, dt)
    if z is None:
        zsum = t.copy()
    else:
        if len(z) != t.size:
            raise InvalidInputError("need one weight vector per sample time")
        zsum = np.array([np.sum(np.abs(np.asarray(zl, dtype=float))) for zl in z])
    per_exp = _fourier_per_experiment(fourier, budget.n_x)
    inv_var = 1.0 / budget.sigma**2
    lam0 = float(budget.n_x * np.sum(zsum) * inv_var)
    a_sum = sum(sum(c.a for c in comps) for comps in per_exp)
    lam1 = float(a_sum * np.sum(zsum) * inv_var)
    return lam0, lam1


def ft_query_total(budget: ExperimentBudget, lambdas: tuple[float, float]) -> float:
    """Queries to the prepare/select pair for one gradient component.

    >>> ft_query_total(ExperimentBudget(1.0, 1 / math.e, times=(1.0,)), (1.0, 0.0))
    1.0
    """
    lam = float(sum(lambdas))
    return math.log(1.0 / budget.delta_fail) * lam / budget.epsilon


def ft_hamiltonian_queries(budget: ExperimentBudget, lambdas: tuple[float, float]) -> float:
    """:func:`ft_query_total` times the longest evolution ``T`` each select call simulates."""
    return budget.T * ft_query_total(budget, lambdas)


def _topology_factors(topology: str, n=None, lambda_ind=None, lambda_total=None, lambda_int=None):
    if topology == "chain":
        if n is None:
            raise InvalidInputError("chain topology needs n")
        return 1.0, float(n)
    if topology == "clustered":
        if lambda_ind is None or lambda_total is None:
            raise InvalidInputError("clustered topology needs lambda_ind and lambda_total")
        return float(lambda_ind), float(lambda_total)
    if topology == "clustered-partial":
        if lambda_ind is None or lambda_int is None:
            raise InvalidInputError("clustered-partial topology needs lambda_ind and lambda_int")
        return float(lambda_ind), float(lambda_int)
    raise InvalidInputError(f"unknown topology {topology!r}; expected one of {TOPOLOGIES}")


def trotter_steps(
    T: float,
    eta: float,
    topology: str,
    *,
    n: int | None = None,
    lambda_ind: float | None = None,
    lambda_total: float | None = None,
    lambda_int: float | None = None,
    p: float = DEFAULT_TROTTER_P,
) -> float:
    """Trotter steps for evolution time ``T`` at error ``eta``.

    ``R = X1 T (X2 T / eta)^p`` with ``(X1, X2)`` equal to ``(1, N)`` for a
    chain, ``(Lambda_ind, Lambda)`` for clusters and ``(Lambda_ind,
    Lambda_int)`` when intra-cluster evolution is exact.

    >>> round(trotter_steps(2.0, 1.0, "chain", n=8, p=1e-12), 9)
    2.0
    """
    T = _positive("T", T)
    eta = _positive("eta", eta)
    if p < 0:
        raise DomainError("p must be >= 0")
    X1, X2 = _topology_factors(topology, n, lambda_ind, lambda_total, lambda_int)
    return float(X1 * T * (X2 * T / eta) ** p)


def discretization_budget(lam: float, lambda_ind: float, T: float, epsilon: float) -> int:
    """Quadrature nodes per time so the integral error stays below ``epsilon``."""
    epsilon = _positive("epsilon", epsilon)
    return max(1, _ceil(lam * lambda_ind * T / epsilon))


def truncation_budget(lam: float, n: int, lambda_ind: float, T: float, W: float, epsilon: float = 1.0) -> int:
    """Bits of precision for times and frequencies, as a power of two.

    >>> truncation_budget(1, 1, 1, 1, 1, 1)
    4
    """
    epsilon = _positive("epsilon", epsilon)
    k = max(1, _ceil(lam * (n * lambda_ind + T + W) / epsilon))
    return 1 << (k - 1).bit_length()


# Lambda sums from a model -----------------------------------------------------
@dataclass
class LambdaSums:
    lambda_ind: float
    lambda_total: float
    lambda_int: float
    pair_norms: dict = field(default_factory=dict)


def pair_norms(model) -> dict:
    """Spectral norm (kHz) of the summed two-site terms on each site pair."""
    blocks: dict = {}
    for term, h in zip(model.terms, model.params):
        sites = term.sites
        if len(sites) != 2:
            continue
        blocks[sites] = blocks.get(sites, 0) + h * term.local_matrix()
    return {k: float(np.linalg.norm(v, 2)) for k, v in sorted(blocks.items())}


def lambda_sums(model, partition: Sequence[Sequence[int]] | None = None) -> LambdaSums:
    """``Lambda_ind``, ``Lambda`` and ``Lambda_int`` for a model.

    Each unordered pair counts once. Without a ``partition`` every site is its
    own cluster, so ``Lambda_int == Lambda``.
    """
    norms = pair_norms(model)
    n = model.n_spins
    label = np.arange(n)
    if partition is not None:
        seen = [s for part in partition for s in part]
        if sorted(seen) != list(range(n)):
            raise InvalidInputError("partition must cover every site exactly once")
        for c, part in enumerate(partition):
            label[list(part)] = c
    per_site = np.zeros(n)
    total = inter = 0.0
    for (k, l), v in norms.items():
        per_site[k] += v
        per_site[l] += v
        total += v
        if label[k] != label[l]:
            inter += v
    return LambdaSums(float(per_site.max(initial=0.0)), total, inter, norms)


# Fourier content ------------------------------------------------------------
def periodogram_peaks(times, values, n_omega: int | None = None, fraction: float = PEAK_FRACTION) -> list[FourierComponent]:
    """Dominant Fourier components of a uniformly sampled signal.

    Local maxima of the one-sided periodogram with power at least ``fraction``
    of the largest are kept, strongest first. ``omega`` is in rad/ms.
    """
    t = np.asarray(times, dtype=float)
    y = np.asarray(values, dtype=float)
    if t.size != y.size or t.size < 4:
        raise DataError("need at least 4 equally long times and values")
    dt = np.diff(t)
    if not np.allclose(dt, dt[0], rtol=1e-6):
        raise DataError("periodogram needs uniform sampling")
    F = np.fft.rfft(y)
    power = np.abs(F) ** 2
    freqs = np.fft.rfftfreq(t.size, dt[0])
    padded = np.concatenate(([-np.inf], power, [-np.inf]))
    is_peak = (power >= padded[:-2]) & (power > padded[2:])
    keep = np.flatnonzero(is_peak & (power >= fraction * power.max()))
    keep = keep[np.argsort(power[keep])[::-1]]
    if n_omega is not None:
        keep = keep[:n_omega]
    out = []
    for i in keep:
        scale = 1.0 if i == 0 or (t.size % 2 == 0 and i == t.size // 2) else 2.0
        phase = float(np.angle(F[i] * np.exp(-2j * np.pi * freqs[i] * t[0])))
        out.append(FourierComponent(float(scale * abs(F[i]) / t.size), float(2 * np.pi * freqs[i]), phase))
    return out


def fourier_from_signals(experiments, signals, n_omega: int | None = None) -> list[list[FourierComponent]]:
    """:func:`periodogram_peaks` for every experiment of a dataset."""
    return [periodogram_peaks(ex.times, signals.values[ex.id], n_omega) for ex in experiments]


# report ---------------------------------------------------------------------
def _entry(value, formula: str) -> dict:
    return {"value": value, "formula": formula, "note": ORDER_NOTE}


def estimate_report(
    budget: ExperimentBudget,
    ft: FTParameters | None = None,
    eta: float | None = None,
    sampling: str = "sparse-log",
    dt: float = 1.0,
) -> dict:
    """All estimates for one budget, each with its formula string."""
    t = budget_times(budget, sampling, dt)
    T = budget.T
    lam0, lam1 = ft_lambdas(budget, ft.fourier if ft else None, sampling=sampling, dt=dt)
    out = {
        "budget": budget.to_dict(),
        "sampling": sampling,
        "times_ms": t.tolist(),
        "hoeffding_J_at_T": _entry(hoeffding_samples_J(budget.epsilon, budget.delta_fail, budget.o_norm, T), FORMULAS["hoeffding_J"]),
        "hoeffding_K_at_T": _entry(hoeffding_samples_K(budget.epsilon, budget.delta_fail, budget.o_norm, T), FORMULAS["hoeffding_K"]),
        "nisq_queries": _entry(nisq_query_total(budget, sampling, dt), FORMULAS["nisq"]),
        "lambda0": _entry(lam0, FORMULAS["lambda0"]),
        "lambda1": _entry(lam1, FORMULAS["lambda1"]),
        "ft_queries": _entry(ft_query_total(budget, (lam0, lam1)), FORMULAS["ft"]),
        "ft_hamiltonian_queries": _entry(ft_hamiltonian_queries(budget, (lam0, lam1)), FORMULAS["ft_hamiltonian"]),
    }
    if ft is not None:
        eta = budget.epsilon / (lam0 + lam1) if eta is None else eta
        p = ft.trotter_exponent
        out["trotter_steps"] = {
            topo: _entry(
                trotter_steps(T, eta, topo, n=ft.n, lambda_ind=ft.lambda_ind, lambda_total=ft.lambda_total, lambda_int=ft.lambda_int, p=p),
                FORMULAS["trotter"],
            )
            for topo in TOPOLOGIES
        }
        lam = lam0 + lam1
        out["discretization_L"] = _entry(discretization_budget(lam, ft.lambda_ind, T, budget.epsilon), FORMULAS["discretization"])
        out["truncation_K"] = _entry(truncation_budget(lam, ft.n, ft.lambda_ind, T, ft.W, budget.epsilon), FORMULAS["truncation"])
    return out
