"""
Analytic signal derivatives from commutator integrals.

Conventions
-----------
``U(t) = exp(+i H t)`` and ``H = 2*pi * sum_n h_n V_n`` with ``h`` in kHz.
Write ``V_n(t, s) = U(t-s) V_n U(t-s)^dagger`` and ``rho(t) = U(t) rho U(t)^dagger``.
Then

    j_n(t, s)       = Tr(O [V_n(t, s), rho(t)])                (imaginary)
    dS/dh_n         = i * int_0^t j_n(t, s) ds = Jt_n(t)       (real)
    k_nm(t, s, r)   = Tr(O [V_n(t, s), [V_m(t, r), rho(t)]])   (real)
    K_nm(t)         = int_0^t ds int_0^s dr k_nm(t, s, r)
    d2S/dh_n dh_m   = -(K_nm(t) + K_mn(t))

All ``V_n`` carry the ``2*pi`` factor so derivatives are per kHz.

In the eigenbasis ``|a>`` of ``H`` with ``w_ab = E_a - E_b`` every time
integral reduces to a Hadamard weight, e.g.

    Jt_n(t) = Re( i * sum_ab V_ab W_ab C_ba ),
    W_ab    = int_0^t exp(i w_ab (t - s)) ds,   C = rho(t) O - O rho(t),

which :class:`SpectralEngine` evaluates for all parameters with one GEMM
per sample time.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .. import spinsim
from ..errors import DomainError, NumericalError
from .experiments import ExperimentSpec
from .model import TWO_PI, HamiltonianModel
from .quadrature import QuadratureRule, gauss_legendre_count

_EXACT = QuadratureRule("exact")


def _sinc(x: np.ndarray) -> np.ndarray:
    """``sin(x)/x`` with the removable singularity filled."""
    return np.sinc(x / np.pi)


def exact_weights(omega: np.ndarray, t: float) -> np.ndarray:
    """``int_0^t exp(i w (t - s)) ds`` elementwise, cancellation free."""
    return t * np.exp(0.5j * omega * t) * _sinc(0.5 * omega * t)


def partial_weights(omega: np.ndarray, t: float, s: float) -> np.ndarray:
    """``int_0^s exp(i w (t - r)) dr`` elementwise."""
    return s * np.exp(1j * omega * (t - 0.5 * s)) * _sinc(0.5 * omega * s)


@dataclass
class JacobianResult:
    """Model signals and real-folded Jacobians per experiment.

    ``jac[k]`` has shape ``(len(times_k), len(indices))``.
    """

    signals: list
    jac: list
    indices: np.ndarray


class SpectralEngine:
    """Eigenbasis cache for one parameter point and a list of experiments.

    Parameters
    ----------
    model : HamiltonianModel
    experiments : sequence of ExperimentSpec
    params : array_like, optional
        Overrides ``model.params``.
    indices : sequence of int, optional
        Parameters whose derivatives are needed (default: all).
    """

    def __init__(
        self,
        model: HamiltonianModel,
        experiments: Sequence[ExperimentSpec],
        params=None,
        indices=None,
    ):
        self.model = model
        self.experiments = list(experiments)
        H = model.matrix(params)
        self.real = bool(model.is_real and all(e.is_real for e in self.experiments))
        self.eig = spinsim.eigendecompose(H.real if self.real else H)
        Q = self.eig.eigenvectors
        self.Q = Q.real if self.real else Q
        self.E = self.eig.eigenvalues
        self.omega = self.E[:, None] - self.E[None, :]
        self.indices = np.arange(model.n_params) if indices is None else np.asarray(indices, dtype=int)
        self._V = None
        self._cache: dict = {}
        self._rho = []
        self._obs = []
        for ex in self.experiments:
            self._rho.append(self._to_eigbasis(("rho",) + ex.state.key, lambda ex=ex: ex.state.matrix(model.n_spins)))
            self._obs.append(self._to_eigbasis(("obs",) + ex.observable_key, lambda ex=ex: ex.observable_matrix(model.n_spins)))

    # basis transforms ----------------------------------------------------
    def _rotate(self, A: np.ndarray) -> np.ndarray:
        Q = self.Q
        if self.real:
            A = np.ascontiguousarray(A.real)
        return Q.conj().T @ A @ Q

    def _to_eigbasis(self, key, build):
        if key not in self._cache:
            self._cache[key] = self._rotate(build())
        return self._cache[key]

    @property
    def dim(self) -> int:
        return self.E.shape[0]

    @property
    def V(self) -> np.ndarray:
        """``2*pi * Q^dagger V_n Q`` for the selected indices, shape ``(p, d, d)``."""
        if self._V is None:
            d = self.dim
            dtype = float if self.real else complex
            out = np.empty((len(self.indices), d, d), dtype=dtype)
            Qh = self.Q.conj().T
            for k, n in enumerate(self.indices):
                VQ = self.model.term_left_multiply(int(n), self.Q.astype(complex))
                VQ = np.ascontiguousarray(VQ.real) if self.real else VQ
                out[k] = TWO_PI * (Qh @ VQ)
            self._V = out
        return self._V

    def commutator_bound(self) -> float:
        """``max_n ||[H, V_n]||_F`` (upper bound on the spectral norm), rad/ms per kHz."""
        if len(self.indices) == 0:
            return 0.0
        return float(max(np.linalg.norm(self.omega * Vn) for Vn in self.V))

    # signals --------------------------------------------------------------
    def signal(self, k: int, times=None) -> np.ndarray:
        t = self.experiments[k].times if times is None else np.asarray(times, dtype=float)
        M = self._rho[k] * self._obs[k].T
        ph = np.exp(1j * np.outer(t, self.E))
        vals = np.einsum("ta,ta->t", ph @ M, ph.conj())
        return np.ascontiguousarray(vals.real)

    def _rho_t(self, k: int, ph: np.ndarray) -> np.ndarray:
        return self._rho[k] * np.outer(ph, ph.conj())

    def _rho_t_parts(self, k: int, cos_w: np.ndarray, sin_w: np.ndarray):
        """Contiguous real and imaginary parts of ``rho(t)`` for a real model."""
        rho = self._rho[k]
        return rho * cos_w, rho * sin_w

    # first derivatives ----------------------------------------------------
    def weight_matrix(self, t: float, rule: QuadratureRule, n_nodes: int | None = None) -> np.ndarray:
        if rule.is_exact:
            return exact_weights(self.omega, t)
        s, z = rule.nodes(t, n_nodes)
        P = np.exp(1j * np.outer(self.E, t - s))
        return (P * z) @ P.conj().T

    def _jacobian_at(self, t: float, members: list, rule: QuadratureRule, bound: float):
        ph = np.exp(1j * self.E * t)
        n_nodes = None if rule.is_exact else rule.n_nodes(t, bound)
        W = self.weight_matrix(t, rule, n_nodes) if len(self.indices) else None
        d = self.dim
        S = np.empty(len(members))
        # one row per member so each row reshapes to a (d, d) view
        Gi = np.empty((len(members), d * d))
        Gr = None if self.real else np.empty((len(members), d * d))
        if self.real:
            wt = self.omega * t
            cos_w, sin_w = np.cos(wt), np.sin(wt)
            if W is not None:
                Wr, Wi = np.ascontiguousarray(W.real), np.ascontiguousarray(W.imag)
        last_state, parts = None, None
        for c, k in enumerate(members):
            O = self._obs[k]
            if self.real:
                key = self.experiments[k].state.key
                if key != last_state:
                    parts = self._rho_t_parts(k, cos_w, sin_w)
                    last_state = key
                Xr, Xi = parts[0] @ O, parts[1] @ O
                S[c] = np.trace(Xr)
                if W is not None:
                    # Im(W * (X^T - conj X)) in real arithmetic
                    g = Gi[c].reshape(d, d)
                    np.multiply(Wr, Xi.T + Xi, out=g)
                    g += Wi * (Xr.T - Xr)
            else:
                X = self._rho_t(k, ph) @ O
                S[c] = np.trace(X).real
                if W is not None:
                    G = W * (X.T - X.conj())
                    Gi[c] = G.imag.reshape(-1)
                    Gr[c] = G.real.reshape(-1)
        if W is None:
            return S, np.zeros((0, len(members)))
        Vf = self.V.reshape(len(self.indices), d * d)
        if self.real:
            J = -(Vf @ Gi.T)
        else:
            J = -(np.ascontiguousarray(Vf.real) @ Gi.T + np.ascontiguousarray(Vf.imag) @ Gr.T)
        return S, J

    def jacobian(self, rule: QuadratureRule = _EXACT, workers: int = 1) -> JacobianResult:
        """Signals and ``Jt`` for every experiment at its own sample times.

        Work is grouped by distinct sample time; ``workers > 1`` evaluates the
        groups on a thread pool and reassembles them in a fixed order.
        """
        groups: dict[float, list] = {}
        for k, ex in enumerate(self.experiments):
            for j, t in enumerate(ex.times):
                groups.setdefault(float(t), []).append((k, j))
        times = sorted(groups)
        bound = 0.0
        if rule.tol is not None and not rule.is_exact:
            bound = self.commutator_bound()

        def task(t):
            members = groups[t]
            return self._jacobian_at(t, [k for k, _ in members], rule, bound)

        if workers > 1 and len(times) > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                results = list(pool.map(task, times))
        else:
            results = [task(t) for t in times]

        p = len(self.indices)
        signals = [np.empty(ex.times.size) for ex in self.experiments]
        jac = [np.empty((ex.times.size, p)) for ex in self.experiments]
        for t, (S, J) in zip(times, results):
            for c, (k, j) in enumerate(groups[t]):
                signals[k][j] = S[c]
                jac[k][j] = J[:, c]
        for arr in jac:
            if not np.all(np.isfinite(arr)):
                raise NumericalError("non-finite Jacobian entry")
        return JacobianResult(signals, jac, self.indices)

    # second derivatives ---------------------------------------------------
    def _outer_nodes(self, t: float, rule: QuadratureRule):
        if rule.is_exact:
            spread = float(self.E[-1] - self.E[0]) if self.dim > 1 else 0.0
            n = max(rule.L, gauss_legendre_count(2.0 * spread, t))
            return QuadratureRule("gauss-legendre").nodes(t, n)
        return rule.nodes(t)

    def _inner_weights(self, t: float, s: float, rule: QuadratureRule) -> np.ndarray:
        if rule.is_exact:
            return partial_weights(self.omega, t, s)
        r, z = rule.nodes(s)
        if r.size == 0:
            return np.zeros_like(self.omega, dtype=complex)
        P = np.exp(1j * np.outer(self.E, t - r))
        return (P * z) @ P.conj().T

    def hessian_K(self, k: int, rule: QuadratureRule = _EXACT) -> np.ndarray:
        """``K_nm(t)`` for experiment ``k`` at each of its times, shape ``(T, p, p)``."""
        ex = self.experiments[k]
        p = len(self.indices)
        d = self.dim
        V = self.V
        Vf = V.reshape(p, d * d)
        O = self._obs[k]
        out = np.zeros((ex.times.size, p, p))
        for j, t in enumerate(ex.times):
            if t == 0 or p == 0:
                continue
            ph = np.exp(1j * self.E * t)
            rho_t = self._rho_t(k, ph)
            s_nodes, z_nodes = self._outer_nodes(t, rule)
            acc = np.zeros((p, p))
            for s, z in zip(s_nodes, z_nodes):
                psi = self._inner_weights(t, s, rule)
                B = V * psi
                A = B @ rho_t - rho_t @ B
                M = A @ O - O @ A
                Mt = np.transpose(M, (0, 2, 1)).reshape(p, d * d)
                F = Vf * np.exp(1j * self.omega * (t - s)).reshape(-1)
                acc += z * (F @ Mt.T).real
            out[j] = acc
        return out


# -------------------------------------------------------------------------
# Pointwise reference integrands and single-entry wrappers
# -------------------------------------------------------------------------

def _dense_parts(model: HamiltonianModel, experiment: ExperimentSpec):
    eig = spinsim.eigendecompose(model.matrix())
    rho = experiment.state.matrix(model.n_spins)
    O = experiment.observable_matrix(model.n_spins)
    return eig, rho, O


def jacobian_integrand(model: HamiltonianModel, experiment: ExperimentSpec, n: int, t: float, s: float) -> float:
    """Real-folded integrand ``i * Tr(O [V_n(t, s), rho(t)])``.

    Evaluated directly with dense propagators; this is the reference that
    the eigenbasis engine is tested against.
    """
    if not 0 <= s <= t:
        raise DomainError(f"need 0 <= s <= t, got s={s}, t={t}")
    eig, rho, O = _dense_parts(model, experiment)
    rho_t = spinsim.evolve_state(rho, eig, t)
    Vts = spinsim.heisenberg_op(TWO_PI * model.term_matrix(n), eig, t - s)
    j = np.trace(O @ (Vts @ rho_t - rho_t @ Vts))
    return float((1j * j).real)


def hessian_integrand(
    model: HamiltonianModel, experiment: ExperimentSpec, n: int, m: int, t: float, s: float, r: float
) -> float:
    """``Tr(O [V_n(t, s), [V_m(t, r), rho(t)]])`` evaluated densely."""
    if not 0 <= r <= s <= t:
        raise DomainError(f"need 0 <= r <= s <= t, got r={r}, s={s}, t={t}")
    eig, rho, O = _dense_parts(model, experiment)
    rho_t = spinsim.evolve_state(rho, eig, t)
    Vn = spinsim.heisenberg_op(TWO_PI * model.term_matrix(n), eig, t - s)
    Vm = spinsim.heisenberg_op(TWO_PI * model.term_matrix(m), eig, t - r)
    inner = Vm @ rho_t - rho_t @ Vm
    val = np.trace(O @ (Vn @ inner - inner @ Vn))
    scale = max(1.0, float(np.max(np.abs(Vn))) * float(np.max(np.abs(Vm))))
    if abs(val.imag) > 1e-8 * scale:
        raise NumericalError(f"double-commutator trace has imaginary part {val.imag:.2e}")
    return float(val.real)


def jacobian(
    model: HamiltonianModel, experiment: ExperimentSpec, n: int, t: float, quadrature: QuadratureRule = _EXACT
) -> float:
    """``Jt_n(t) = dS/dh_n`` under ``quadrature`` (per kHz)."""
    if t < 0:
        raise DomainError("t must be non-negative")
    if t == 0:
        return 0.0
    engine = SpectralEngine(model, [experiment.with_times([t])], indices=[n])
    return float(engine.jacobian(quadrature).jac[0][0, 0])


def hessian_K(
    model: HamiltonianModel,
    experiment: ExperimentSpec,
    n: int,
    m: int,
    t: float,
    quadrature: QuadratureRule = _EXACT,
) -> float:
    """``K_nm(t)`` over the triangle ``0 <= r <= s <= t``."""
    if t < 0:
        raise DomainError("t must be non-negative")
    if t == 0:
        return 0.0
    idx = [n] if n == m else [n, m]
    engine = SpectralEngine(model, [experiment.with_times([t])], indices=idx)
    K = engine.hessian_K(0, quadrature)[0]
    return float(K[0, 0] if n == m else K[0, 1])
