"""
Maximum-likelihood cost and its derivatives.

    C(h) = sum_n (h_n - h0_n)**2 / (2 w_n**2)
         + sum_{x,t} (Sbar_x(t) - S_x(t))**2 / (2 sigma_{x,t}**2)

Prior terms are applied to free parameters only. Gradients and Hessians are
returned over the full parameter vector with zero rows and columns for
frozen entries.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.linalg import pinvh

from ..errors import DataError, DimensionMismatchError, NearSingularWarning
from .derivatives import SpectralEngine
from .experiments import ExperimentSpec, SignalSet, check_experiments
from .model import HamiltonianModel
from .quadrature import QuadratureRule

COND_LIMIT = 1e12


def _prior_weights(model: HamiltonianModel) -> np.ndarray:
    """``1/w**2`` on free parameters, 0 elsewhere."""
    inv = np.where(np.isfinite(model.prior_widths), 1.0 / model.prior_widths**2, 0.0)
    return np.where(model.free_mask, inv, 0.0)


def _prepare(model, experiments, signals):
    if isinstance(experiments, ExperimentSpec):
        experiments = [experiments]
    experiments = list(experiments)
    check_experiments(model, experiments)
    if signals is not None:
        signals.check(experiments)
    return experiments


def prior_cost(model: HamiltonianModel, params=None) -> float:
    h = model.params if params is None else params
    return 0.5 * float(np.sum(_prior_weights(model) * (h - model.priors) ** 2))


@dataclass
class Residuals:
    """Whitened data residuals ``(Sbar - S)/sigma`` and their Jacobian.

    ``jac`` columns follow ``indices`` (the free parameters).
    """

    r: np.ndarray
    jac: np.ndarray | None
    indices: np.ndarray
    model_signals: list


def residuals(
    model: HamiltonianModel,
    experiments: Sequence[ExperimentSpec],
    signals: SignalSet | None,
    quadrature: QuadratureRule | None = None,
    with_jacobian: bool = True,
    indices=None,
    workers: int = 1,
) -> Residuals:
    """Stacked whitened residuals in experiment order.

    With ``signals=None`` the residual is taken against the model itself
    (all zeros), which is what the Gauss-Newton Hessian at the truth needs.
    """
    experiments = _prepare(model, experiments, signals)
    idx = model.free_indices if indices is None else np.asarray(indices, dtype=int)
    engine = SpectralEngine(model, experiments, indices=idx if with_jacobian else ())
    if with_jacobian:
        res = engine.jacobian(quadrature or QuadratureRule(), workers=workers)
        sig = res.signals
    else:
        sig = [engine.signal(k) for k in range(len(experiments))]
    r_parts, j_parts = [], []
    for k, ex in enumerate(experiments):
        data = sig[k] if signals is None else signals[ex.id]
        r_parts.append((sig[k] - data) / ex.sigma)
        if with_jacobian:
            j_parts.append(res.jac[k] / ex.sigma[:, None])
    r = np.concatenate(r_parts)
    jac = np.vstack(j_parts) if with_jacobian else None
    return Residuals(r, jac, idx, sig)


def cost(model: HamiltonianModel, experiments, signals: SignalSet) -> float:
    """Prior plus data misfit (dimensionless)."""
    if signals is None:
        raise DataError("cost requires measured signals")
    res = residuals(model, experiments, signals, with_jacobian=False)
    return prior_cost(model) + 0.5 * float(res.r @ res.r)


def gradient(
    model: HamiltonianModel,
    experiments,
    signals: SignalSet,
    quadrature: QuadratureRule | None = None,
    workers: int = 1,
) -> np.ndarray:
    """``dC/dh`` (per kHz); zero for frozen parameters."""
    res = residuals(model, experiments, signals, quadrature, workers=workers)
    g = _prior_weights(model) * (model.params - model.priors)
    g[res.indices] += res.jac.T @ res.r
    return g


def _embed(model: HamiltonianModel, block: np.ndarray, idx: np.ndarray) -> np.ndarray:
    H = np.zeros((model.n_params, model.n_params))
    H[np.ix_(idx, idx)] = block
    H[idx, idx] += _prior_weights(model)[idx]
    return H


def hessian_gauss_newton(
    model: HamiltonianModel,
    experiments,
    signals: SignalSet | None = None,
    quadrature: QuadratureRule | None = None,
    workers: int = 1,
) -> np.ndarray:
    """``diag(1/w**2) + sum J J^T / sigma**2``; PSD by construction.

    ``signals`` is accepted for interface symmetry and only validated.
    """
    res = residuals(model, experiments, signals, quadrature, workers=workers)
    block = res.jac.T @ res.jac
    return _embed(model, 0.5 * (block + block.T), res.indices)


def hessian_full(
    model: HamiltonianModel,
    experiments,
    signals: SignalSet,
    quadrature: QuadratureRule | None = None,
) -> np.ndarray:
    """Exact ``d2C/dh dh`` including the curvature of the signal.

    ``H = diag(1/w**2) + sum [J_n J_m - (Sbar - S)(K_nm + K_mn)] / sigma**2``.
    Costs a nested time quadrature per sample; intended for small models.
    """
    quadrature = quadrature or QuadratureRule()
    experiments = _prepare(model, experiments, signals)
    idx = model.free_indices
    engine = SpectralEngine(model, experiments, indices=idx)
    jr = engine.jacobian(quadrature)
    block = np.zeros((idx.size, idx.size))
    for k, ex in enumerate(experiments):
        w = 1.0 / ex.sigma**2
        J = jr.jac[k]
        block += (J * w[:, None]).T @ J
        resid = jr.signals[k] - signals[ex.id]
        if np.any(resid != 0):
            K = engine.hessian_K(k, quadrature)
            Ks = K + np.transpose(K, (0, 2, 1))
            block -= np.tensordot(resid * w, Ks, axes=(0, 0))
    return _embed(model, 0.5 * (block + block.T), idx)


def covariance_with_flag(hessian: np.ndarray, free_mask=None) -> tuple[np.ndarray, bool, float]:
    """Inverse Hessian on the free block plus a near-singular flag and condition number."""
    H = np.asarray(hessian, dtype=float)
    if H.ndim != 2 or H.shape[0] != H.shape[1]:
        raise DimensionMismatchError("Hessian must be square")
    n = H.shape[0]
    mask = np.ones(n, dtype=bool) if free_mask is None else np.asarray(free_mask, dtype=bool)
    idx = np.flatnonzero(mask)
    block = H[np.ix_(idx, idx)]
    block = 0.5 * (block + block.T)
    cov = np.zeros_like(H)
    if idx.size == 0:
        return cov, False, 1.0
    ev = np.linalg.eigvalsh(block)
    top = float(np.max(np.abs(ev)))
    low = float(np.min(np.abs(ev)))
    cond = np.inf if low == 0 else top / low
    near_singular = not np.isfinite(cond) or cond > COND_LIMIT
    if near_singular:
        warnings.warn(
            f"Hessian condition number {cond:.3g} exceeds {COND_LIMIT:g}; using pseudo-inverse",
            NearSingularWarning,
            stacklevel=2,
        )
        inv = pinvh(block)
    else:
        inv = np.linalg.inv(block)
    cov[np.ix_(idx, idx)] = 0.5 * (inv + inv.T)
    return cov, near_singular, cond


def covariance(hessian: np.ndarray, free_mask=None) -> np.ndarray:
    """``Sigma = H^{-1}`` restricted to free parameters, symmetrized.

    Falls back to a pseudo-inverse with :class:`NearSingularWarning` when the
    condition number exceeds ``1e12``.
    """
    return covariance_with_flag(hessian, free_mask)[0]
