"""
The six-spin learning demonstration: recover the weakest couplings of a
small proton cluster from correlator data, with shifts and strong couplings
known.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidSpecError
from .learner.experiments import ExperimentSpec, correlator_experiments
from .learner.model import HamiltonianModel
from .nmrmodel import SpinSite, SpinSystem, build_secular_hamiltonian, bundled_six_spin


@dataclass
class DemoProblem:
    truth: HamiltonianModel
    start: HamiltonianModel
    experiments: list
    free_pairs: list

    @property
    def free(self) -> np.ndarray:
        return self.start.free_mask

    def small_coupling_scale(self) -> float:
        """Mean ``|h|`` of the free parameters at the truth (kHz)."""
        return float(np.mean(np.abs(self.truth.params[self.free])))

    def mean_abs_error(self, params) -> float:
        return float(np.mean(np.abs(np.asarray(params) - self.truth.params)[self.free]))


def _pair_of(label: str):
    return label[label.index("[") :]


def weakest_pairs(model: HamiltonianModel, count: int) -> list[str]:
    """Site pairs (as ``"[i,j]"``) with the smallest ``|ff|`` coupling."""
    ff = {_pair_of(l): abs(h) for l, h in zip(model.labels, model.params) if l.startswith("ff[")}
    if count > len(ff):
        raise InvalidSpecError(f"asked for {count} pairs, model has {len(ff)}")
    return sorted(ff, key=lambda k: (ff[k], k))[:count]


def learning_problem(
    system: SpinSystem,
    times,
    n_free_pairs: int = 6,
    axes=("Z", "X"),
    pairs=None,
    sigma: float = 1e-3,
) -> DemoProblem:
    """Truth model, start model and correlator experiments for ``system``.

    The ``ff`` and ``zz`` parameters of the ``n_free_pairs`` weakest pairs are
    free and start at 0; everything else is frozen at the truth.
    """
    truth = build_secular_hamiltonian(system)
    chosen = weakest_pairs(truth, n_free_pairs)
    free = np.array([not l.startswith("shift") and _pair_of(l) in chosen for l in truth.labels])
    start = truth.with_params(np.where(free, 0.0, truth.params)).with_mask(free)
    exps: list[ExperimentSpec] = correlator_experiments(system.n, times, axes, pairs=pairs, sigma=sigma)
    return DemoProblem(truth, start, exps, chosen)


def demo_problem(
    sites: list[SpinSite] | None = None,
    alpha: float = 10.0,
    field_tesla: float = 23.5,
    n_free_pairs: int = 6,
    n_times: int = 21,
    t_end_ms: float = 2.0,
    sigma: float = 1e-3,
    axes=("Z", "X"),
) -> DemoProblem:
    """The six-spin demonstration: 21 times on ``[0, 2]`` ms, ``alpha = 10``, 23.5 T.

    ``sites`` defaults to the packaged six-proton geometry.
    """
    sites = bundled_six_spin() if sites is None else sites
    system = SpinSystem(tuple(sites), field_tesla, (0.0, 0.0, 1.0), alpha)
    return learning_problem(system, np.linspace(0.0, t_end_ms, n_times), n_free_pairs, axes, sigma=sigma)
