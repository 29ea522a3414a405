"""
Optimizers for the maximum-likelihood cost.

``levenberg-marquardt`` damps the Gauss-Newton normal equations
``(J^T J + P + mu I) dh = -g``; ``conjugate-gradient`` hands cost and
gradient to :func:`scipy.optimize.minimize`. :func:`staged_fit` grows the
time window geometrically so that early rounds only see times over which the
cost is convex around the starting guess.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Iterator, Sequence

import numpy as np
import scipy.linalg
from scipy.optimize import minimize

from ..errors import InvalidSpecError, NumericalError
from .experiments import ExperimentSpec, SignalSet
from .model import HamiltonianModel
from .objective import _prepare, _prior_weights, covariance_with_flag, residuals
from .quadrature import QuadratureRule

ALGORITHMS = ("levenberg-marquardt", "conjugate-gradient")


@dataclass(frozen=True)
class FitOptions:
    """Optimizer settings.

    Attributes
    ----------
    algorithm : str
    g_tol : float
        Stop when ``max|grad| < g_tol`` (cost units per kHz).
    f_tol : float
        Stop when the relative cost decrease of an accepted step is below this.
    max_iter : int
    quadrature : QuadratureRule
    query_noise : float
        Std of Gaussian noise added to every model signal and Jacobian
        evaluation (emulates noisy device queries); 0 disables.
    seed : int, optional
        Seed for ``query_noise``.
    workers : int
        Threads for Jacobian assembly.
    """

    algorithm: str = "levenberg-marquardt"
    g_tol: float = 1e-8
    f_tol: float = 1e-10
    max_iter: int = 100
    quadrature: QuadratureRule = field(default_factory=QuadratureRule)
    query_noise: float = 0.0
    seed: int | None = None
    workers: int = 1

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise InvalidSpecError(f"unknown algorithm {self.algorithm!r}; choose from {ALGORITHMS}")
        if self.max_iter < 1:
            raise InvalidSpecError("max_iter must be >= 1")


@dataclass
class FitReport:
    """Outcome of a fit.

    ``cost_trace[0]`` and ``grad_norm_trace[0]`` describe the starting point;
    entry ``k`` describes the iterate after ``k`` accepted steps.
    """

    params_hat: np.ndarray
    covariance: np.ndarray
    cost_trace: list
    grad_norm_trace: list
    iterations: int
    converged: bool
    schedule_trace: list = field(default_factory=list)
    params_trace: list = field(default_factory=list)
    near_singular: bool = False
    condition_number: float = 1.0
    message: str = ""
    algorithm: str = ""
    labels: list = field(default_factory=list)
    free_mask: np.ndarray | None = None

    def errors_trace(self, truth) -> np.ndarray:
        """Absolute error per parameter at every recorded iterate."""
        truth = np.asarray(truth, dtype=float)
        return np.abs(np.asarray(self.params_trace) - truth[None, :])

    def to_dict(self) -> dict:
        return {
            "algorithm": self.algorithm,
            "labels": list(self.labels),
            "params_hat_khz": self.params_hat.tolist(),
            "free_mask": None if self.free_mask is None else self.free_mask.tolist(),
            "covariance": self.covariance.tolist(),
            "cost_trace": [float(c) for c in self.cost_trace],
            "grad_norm_trace": [float(g) for g in self.grad_norm_trace],
            "iterations": int(self.iterations),
            "converged": bool(self.converged),
            "message": self.message,
            "near_singular": bool(self.near_singular),
            "condition_number": float(self.condition_number) if np.isfinite(self.condition_number) else "inf",
            "schedule_trace": [[float(a), float(b)] for a, b in self.schedule_trace],
        }


class _Problem:
    """Cost, gradient and Gauss-Newton pieces over the free parameters."""

    def __init__(self, model, experiments, signals, options: FitOptions):
        self.model = model
        self.experiments = experiments
        self.signals = signals
        self.opt = options
        self.idx = model.free_indices
        self.P = _prior_weights(model)[self.idx]
        self.h0 = model.priors[self.idx]
        self.rng = np.random.default_rng(options.seed) if options.query_noise > 0 else None

    def params(self, x):
        p = self.model.params.copy()
        p[self.idx] = x
        return p

    def evaluate(self, x, with_jacobian=True):
        """Return ``(cost, r, Jr)``; ``Jr`` is ``None`` when not requested."""
        dx = x - self.h0
        prior = 0.5 * float(np.sum(self.P * dx * dx))
        if not self.experiments:
            empty = np.zeros(0)
            return prior, empty, np.zeros((0, self.idx.size)) if with_jacobian else None
        res = residuals(
            self.model.with_params(self.params(x)),
            self.experiments,
            self.signals,
            self.opt.quadrature,
            with_jacobian=with_jacobian,
            workers=self.opt.workers,
        )
        r, J = res.r, res.jac
        if self.rng is not None:
            sig = np.concatenate([ex.sigma for ex in self.experiments])
            r = r + self.opt.query_noise * self.rng.standard_normal(r.shape) / sig
            if J is not None:
                J = J + self.opt.query_noise * self.rng.standard_normal(J.shape) / sig[:, None]
        c = prior + 0.5 * float(r @ r)
        if not math.isfinite(c):
            raise NumericalError(f"non-finite cost at parameters {self.params(x).tolist()}")
        return c, r, J

    def grad(self, x, r, J):
        return J.T @ r + self.P * (x - self.h0)


def _lm(problem: _Problem, x0: np.ndarray, options: FitOptions):
    x = x0.copy()
    c, r, J = problem.evaluate(x)
    g = problem.grad(x, r, J)
    costs, gnorms, xs = [c], [float(np.max(np.abs(g), initial=0.0))], [x.copy()]
    mu = 0.0
    converged, message, it = False, "max_iter reached", 0
    if gnorms[-1] < options.g_tol:
        return x, costs, gnorms, xs, 0, True, "gradient tolerance met at start", J
    while it < options.max_iter:
        A = J.T @ J + np.diag(problem.P)
        scale = max(float(np.max(np.diag(A), initial=0.0)), 1e-300)
        accepted = False
        for _ in range(60):
            try:
                step = scipy.linalg.solve(A + mu * np.eye(A.shape[0]), -g, assume_a="pos")
            except (np.linalg.LinAlgError, scipy.linalg.LinAlgError):
                mu = max(2.0 * mu, 1e-3 * scale)
                continue
            if not np.all(np.isfinite(step)):
                mu = max(2.0 * mu, 1e-3 * scale)
                continue
            x_new = x + step
            c_new, _, _ = problem.evaluate(x_new, with_jacobian=False)
            if c_new < c or (c_new == c == 0.0):
                accepted = True
                break
            mu = max(2.0 * mu, 1e-3 * scale)
            if mu > 1e16 * scale:
                break
        if not accepted:
            message = "damping diverged; no decreasing step found"
            break
        it += 1
        rel = (c - c_new) / max(c, 1e-300)
        x = x_new
        c, r, J = problem.evaluate(x)
        g = problem.grad(x, r, J)
        mu = mu / 3.0 if mu > 1e-12 * scale else 0.0
        costs.append(c)
        gnorms.append(float(np.max(np.abs(g), initial=0.0)))
        xs.append(x.copy())
        if gnorms[-1] < options.g_tol:
            converged, message = True, "gradient tolerance met"
            break
        if rel < options.f_tol:
            converged, message = True, "relative cost decrease below f_tol"
            break
    return x, costs, gnorms, xs, it, converged, message, J


def _cg(problem: _Problem, x0: np.ndarray, options: FitOptions):
    cache: dict = {}

    def pieces(x):
        key = x.tobytes()
        if key not in cache:
            cache.clear()
            c, r, J = problem.evaluate(x)
            cache[key] = (c, problem.grad(x, r, J), J)
        return cache[key]

    c0, g0, _ = pieces(x0)
    costs, gnorms, xs = [c0], [float(np.max(np.abs(g0), initial=0.0))], [x0.copy()]
    state = {"message": ""}

    def callback(xk):
        c, g, _ = pieces(xk)
        rel = (costs[-1] - c) / max(costs[-1], 1e-300)
        costs.append(c)
        gnorms.append(float(np.max(np.abs(g), initial=0.0)))
        xs.append(xk.copy())
        if 0 <= rel < options.f_tol:
            state["message"] = "relative cost decrease below f_tol"
            raise StopIteration

    res = minimize(
        lambda x: pieces(x)[0],
        x0,
        jac=lambda x: pieces(x)[1],
        method="CG",
        callback=callback,
        options={"gtol": options.g_tol, "maxiter": options.max_iter, "norm": np.inf},
    )
    x = xs[-1] if state["message"] else res.x
    converged = bool(res.success) or bool(state["message"]) or gnorms[-1] < options.g_tol
    message = state["message"] or str(res.message)
    _, _, J = pieces(x)
    return x, costs, gnorms, xs, len(xs) - 1, converged, message, J


def fit(
    model: HamiltonianModel,
    experiments: Sequence[ExperimentSpec],
    signals: SignalSet,
    options: FitOptions | None = None,
) -> FitReport:
    """Minimize the cost from ``model.params`` over the free parameters."""
    options = options or FitOptions()
    experiments = _prepare(model, experiments, signals) if experiments else []
    if model.free_indices.size == 0:
        raise InvalidSpecError("fit needs at least one free parameter")
    problem = _Problem(model, experiments, signals, options)
    x0 = model.params[problem.idx].copy()
    runner = _lm if options.algorithm == "levenberg-marquardt" else _cg
    x, costs, gnorms, xs, it, converged, message, J = runner(problem, x0, options)
    full = [problem.params(xi) for xi in xs]
    H = np.zeros((model.n_params, model.n_params))
    H[np.ix_(problem.idx, problem.idx)] = J.T @ J + np.diag(problem.P)
    cov, flag, cond = covariance_with_flag(H, model.free_mask)
    return FitReport(
        params_hat=problem.params(x),
        covariance=cov,
        cost_trace=costs,
        grad_norm_trace=gnorms,
        iterations=it,
        converged=converged,
        params_trace=full,
        near_singular=flag,
        condition_number=cond,
        message=message,
        algorithm=options.algorithm,
        labels=model.labels,
        free_mask=model.free_mask.copy(),
    )


def robust_schedule(delta_prior: float, v_norm_max: float, c: float) -> Iterator[float]:
    """Geometric schedule of time windows ``t_max`` (ms).

    Yields ``pi / (4 delta v)`` with ``delta`` in rad/ms, then after each round
    shrinks ``delta`` by ``c`` so ``t_max`` grows by ``1/c``. A caller may
    ``send`` a refined ``delta`` (rad/ms) instead of using the default update.

    >>> s = robust_schedule(1.0, 1.0, 0.5)
    >>> round(next(s), 6), round(next(s), 6)
    (0.785398, 1.570796)
    """
    if delta_prior <= 0 or v_norm_max <= 0:
        raise InvalidSpecError("delta_prior and v_norm_max must be positive")
    if not 0 < c < 1:
        raise InvalidSpecError("c must lie in (0, 1)")
    t_max = math.pi / (4.0 * delta_prior * v_norm_max)
    while True:
        sent = yield t_max
        delta = c * math.pi / (4.0 * v_norm_max * t_max) if sent is None else float(sent)
        t_max = math.pi / (4.0 * delta * v_norm_max)


def _window(experiments: Sequence[ExperimentSpec], signals: SignalSet, t_max: float):
    exps, vals = [], {}
    for ex in experiments:
        keep = ex.times <= t_max * (1 + 1e-12)
        if not np.any(keep):
            continue
        exps.append(ex.with_times(ex.times[keep], ex.sigma[keep]))
        vals[ex.id] = signals[ex.id][keep]
    return exps, SignalSet(vals, signals.provenance)


def staged_fit(
    model: HamiltonianModel,
    experiments: Sequence[ExperimentSpec],
    signals: SignalSet,
    delta_prior_khz: float,
    c: float = 0.5,
    options: FitOptions | None = None,
    max_rounds: int = 30,
) -> FitReport:
    """Fit on growing windows ``t <= t_max`` from :func:`robust_schedule`.

    ``delta_prior_khz`` bounds ``sum_n |h_n - h0_n|`` in kHz and is converted
    to rad/ms here.
    """
    options = options or FitOptions()
    experiments = _prepare(model, experiments, signals)
    t_end = max(float(ex.times[-1]) for ex in experiments)
    v_max = max(model.terms[n].norm() for n in model.free_indices)
    delta = 2.0 * math.pi * delta_prior_khz
    sched = robust_schedule(delta, v_max, c)
    current = model
    costs, gnorms, params_trace, schedule = [], [], [], []
    total_it = 0
    report = None
    for _ in range(max_rounds):
        t_max = next(sched)
        schedule.append((min(t_max, t_end), math.pi / (4.0 * v_max * t_max) / (2.0 * math.pi)))
        exps, sig = _window(experiments, signals, t_max)
        if exps:
            report = fit(current, exps, sig, options)
            current = current.with_params(report.params_hat)
            total_it += report.iterations
            costs.extend(report.cost_trace)
            gnorms.extend(report.grad_norm_trace)
            params_trace.extend(report.params_trace)
        if t_max >= t_end:
            break
    if report is None:
        raise InvalidSpecError("no sample times fell inside any window")
    final = replace(
        report,
        cost_trace=costs,
        grad_norm_trace=gnorms,
        params_trace=params_trace,
        iterations=total_it,
        schedule_trace=schedule,
    )
    return final
