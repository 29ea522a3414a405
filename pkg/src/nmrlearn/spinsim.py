"""
Dense exact simulation of spin-1/2 clusters.

Operators and density matrices are plain complex ``numpy`` arrays of shape
``(2**N, 2**N)``; pure states are vectors of length ``2**N``. Site 0 is the
most significant bit of a computational-basis index (``np.kron`` ordering),
and bit value 0 is spin up (``Z = +1``).

Units: energies are angular frequencies in rad/ms and times are in ms, so the
propagator ``U(t) = exp(+i H t)`` needs no conversion. The ``+i`` sign is used
consistently for states, Heisenberg operators and every derivative built on
top of them.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import comb
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    CapacityError,
    DimensionMismatchError,
    InvalidInputError,
    InvalidSpecError,
)

#: Absolute cap on cluster size for any dense object.
MAX_SPINS = 12
#: Default cap for workflows that store per-parameter dense operators.
DEFAULT_HESSIAN_SPINS = 10

HERMITIAN_TOL = 1e-12
RECONSTRUCTION_TOL = 1e-10
TRACE_TOL = 1e-10
SYMMETRY_TOL = 1e-10

_AXES = ("X", "Y", "Z")


def check_spin_count(n_spins: int, cap: int = MAX_SPINS) -> None:
    if n_spins < 1:
        raise InvalidSpecError(f"need at least one spin, got {n_spins}")
    if n_spins > cap:
        raise CapacityError(f"{n_spins} spins exceeds the dense cap of {cap}")


def pauli_masks(ops: Iterable[tuple[int, str]], n_spins: int) -> tuple[int, int, int]:
    """Encode a Pauli product as ``(x_mask, zy_mask, n_y)``.

    ``P |b> = i**n_y * (-1)**popcount(b & zy_mask) |b ^ x_mask>``.
    """
    x_mask = zy_mask = n_y = 0
    seen = set()
    for site, axis in ops:
        site = int(site)
        axis = str(axis).upper()
        if axis not in _AXES:
            raise InvalidSpecError(f"unknown Pauli axis {axis!r}")
        if not 0 <= site < n_spins:
            raise InvalidSpecError(f"site {site} outside 0..{n_spins - 1}")
        if site in seen:
            raise InvalidSpecError(f"duplicate site {site} in Pauli product")
        seen.add(site)
        bit = 1 << (n_spins - 1 - site)
        if axis in ("X", "Y"):
            x_mask |= bit
        if axis in ("Y", "Z"):
            zy_mask |= bit
        if axis == "Y":
            n_y += 1
    return x_mask, zy_mask, n_y


def _parity(values: np.ndarray) -> np.ndarray:
    """Bit parity of each non-negative integer in ``values`` (0 or 1)."""
    v = values.astype(np.uint64)
    v ^= v >> np.uint64(32)
    v ^= v >> np.uint64(16)
    v ^= v >> np.uint64(8)
    v ^= v >> np.uint64(4)
    v ^= v >> np.uint64(2)
    v ^= v >> np.uint64(1)
    return (v & np.uint64(1)).astype(np.int64)


def pauli_action(ops, n_spins: int) -> tuple[np.ndarray, np.ndarray]:
    """Column-wise action of a Pauli product.

    Returns ``(rows, phases)`` such that the dense matrix has
    ``P[rows[b], b] = phases[b]`` and zeros elsewhere.
    """
    x_mask, zy_mask, n_y = pauli_masks(ops, n_spins)
    basis = np.arange(2**n_spins)
    signs = 1 - 2 * _parity(basis & zy_mask)
    phases = (1j**n_y) * signs
    return basis ^ x_mask, phases.astype(complex)


def pauli_term(spec: Sequence[tuple[int, str]], coefficient: float, n_spins: int) -> np.ndarray:
    """Dense ``coefficient * P_spec`` on ``n_spins`` qubits.

    >>> pauli_term([(0, "Z")], 1.0, 1).real
    array([[ 1.,  0.],
           [ 0., -1.]])
    """
    check_spin_count(n_spins)
    rows, phases = pauli_action(spec, n_spins)
    dim = 2**n_spins
    out = np.zeros((dim, dim), dtype=complex)
    out[rows, np.arange(dim)] = coefficient * phases
    return out


def pauli_sum(products, n_spins: int) -> np.ndarray:
    """Dense sum of ``(coefficient, ops)`` Pauli products."""
    check_spin_count(n_spins)
    dim = 2**n_spins
    out = np.zeros((dim, dim), dtype=complex)
    cols = np.arange(dim)
    for coefficient, ops in products:
        rows, phases = pauli_action(ops, n_spins)
        out[rows, cols] += coefficient * phases
    return out


def pauli_left_multiply(products, n_spins: int, A: np.ndarray) -> np.ndarray:
    """``P @ A`` for a Pauli sum ``P`` in O(terms * d**2)."""
    out = np.zeros_like(A, dtype=complex)
    for coefficient, ops in products:
        rows, phases = pauli_action(ops, n_spins)
        # P[r, b] nonzero only for b = rows^-1(r); rows is an involution (XOR)
        out += (coefficient * phases[rows])[:, None] * A[rows, :]
    return out


def is_hermitian(A: np.ndarray, tol: float = HERMITIAN_TOL) -> bool:
    scale = max(float(np.max(np.abs(A))) if A.size else 0.0, 1.0)
    return bool(np.max(np.abs(A - A.conj().T)) <= tol * scale)


def _check_square(A: np.ndarray, name: str) -> int:
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise DimensionMismatchError(f"{name} must be square, got shape {A.shape}")
    dim = A.shape[0]
    if dim & (dim - 1) or dim == 0:
        raise DimensionMismatchError(f"{name} dimension {dim} is not a power of two")
    return dim


@dataclass(frozen=True)
class EigenDecomposition:
    """Spectral data of a Hermitian operator.

    ``eigenvalues`` are ascending, in rad/ms; ``eigenvectors`` holds the
    eigenvectors as columns.
    """

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray

    @property
    def dim(self) -> int:
        return self.eigenvalues.shape[0]

    def phases(self, t: float) -> np.ndarray:
        return np.exp(1j * self.eigenvalues * t)

    def propagator(self, t: float) -> np.ndarray:
        """``U(t) = exp(+i H t)``."""
        Q = self.eigenvectors
        return (Q * self.phases(t)) @ Q.conj().T


def eigendecompose(H: np.ndarray, check: bool = True) -> EigenDecomposition:
    """Exact eigendecomposition of a Hermitian matrix.

    Raises :class:`InvalidInputError` for non-Hermitian input. When ``check``
    is set the reconstruction residual is verified against the library
    tolerance.
    """
    H = np.asarray(H)
    _check_square(H, "H")
    if not is_hermitian(H):
        raise InvalidInputError("eigendecompose requires a Hermitian matrix")
    if np.isrealobj(H) or not np.any(H.imag):
        w, Q = np.linalg.eigh(np.ascontiguousarray(H.real))
    else:
        w, Q = np.linalg.eigh(H)
    if check:
        scale = max(float(np.max(np.abs(H))), 1e-300)
        residual = np.max(np.abs((Q * w) @ Q.conj().T - H))
        if residual > RECONSTRUCTION_TOL * max(scale, 1.0):
            raise InvalidInputError(f"eigendecomposition residual {residual:.2e} too large")
    return EigenDecomposition(w, Q)


def _conjugate(A: np.ndarray, eig: EigenDecomposition, t: float) -> np.ndarray:
    """``U(t) A U(t)^dagger`` through the eigenbasis."""
    if A.shape[-1] != eig.dim:
        raise DimensionMismatchError(f"operand dim {A.shape[-1]} != Hamiltonian dim {eig.dim}")
    if t == 0:
        return A.copy()
    Q = eig.eigenvectors
    ph = eig.phases(t)
    if A.ndim == 1:
        return Q @ (ph * (Q.conj().T @ A))
    A_eig = Q.conj().T @ A @ Q
    return Q @ (ph[:, None] * A_eig * ph.conj()[None, :]) @ Q.conj().T


def evolve_state(rho: np.ndarray, eig: EigenDecomposition, t: float) -> np.ndarray:
    """Evolve a density matrix (``U rho U^dagger``) or a pure state (``U psi``) by time ``t``."""
    rho = np.asarray(rho)
    if rho.ndim == 2:
        _check_square(rho, "rho")
    return _conjugate(rho, eig, t)


def heisenberg_op(V: np.ndarray, eig: EigenDecomposition, dt: float) -> np.ndarray:
    """``U(dt) V U(dt)^dagger``: ``V`` carried forward by ``dt``."""
    V = np.asarray(V)
    _check_square(V, "V")
    return _conjugate(V, eig, dt)


def expectation(O: np.ndarray, rho: np.ndarray) -> float:
    """``Re Tr(O rho)`` for a density matrix, or ``<psi|O|psi>`` for a vector."""
    O = np.asarray(O)
    rho = np.asarray(rho)
    if O.shape[-1] != rho.shape[0]:
        raise DimensionMismatchError(f"observable dim {O.shape[-1]} != state dim {rho.shape[0]}")
    if rho.ndim == 1:
        value = np.vdot(rho, O @ rho)
    else:
        value = np.einsum("ij,ji->", O, rho)
    scale = max(1.0, float(np.max(np.abs(O))))
    if abs(value.imag) > TRACE_TOL * scale:
        raise InvalidInputError(f"expectation has imaginary part {value.imag:.2e}; inputs not Hermitian?")
    return float(value.real)


def n_up_of_basis(n_spins: int) -> np.ndarray:
    """Number of up spins (zero bits) of each computational-basis index."""
    basis = np.arange(2**n_spins)
    ones = np.zeros_like(basis)
    for k in range(n_spins):
        ones += (basis >> k) & 1
    return n_spins - ones


def sector_indices(n_spins: int, n_up: int) -> np.ndarray:
    """Ascending basis indices with exactly ``n_up`` spins up."""
    if not 0 <= n_up <= n_spins:
        raise InvalidSpecError(f"n_up={n_up} outside 0..{n_spins}")
    return np.flatnonzero(n_up_of_basis(n_spins) == n_up)


def conserves_magnetization(H: np.ndarray, tol: float = SYMMETRY_TOL) -> bool:
    dim = _check_square(H, "H")
    n = dim.bit_length() - 1
    m = n_up_of_basis(n)
    off = m[:, None] != m[None, :]
    scale = max(float(np.max(np.abs(H))), 1.0)
    return bool(np.max(np.abs(H[off]), initial=0.0) <= tol * scale)


def sector_project(H: np.ndarray, n_up: int) -> tuple[np.ndarray, np.ndarray]:
    """Block of ``H`` on the fixed-magnetization sector with ``n_up`` spins up.

    Returns ``(block, index_map)`` where ``index_map[k]`` is the full-space
    basis index of the block's ``k``-th row. Raises
    :class:`InvalidInputError` if ``H`` does not commute with total ``Z``.
    """
    H = np.asarray(H)
    dim = _check_square(H, "H")
    n = dim.bit_length() - 1
    if not conserves_magnetization(H):
        raise InvalidInputError("H does not commute with total Z; use the full-space path")
    idx = sector_indices(n, n_up)
    assert idx.size == comb(n, n_up)
    return H[np.ix_(idx, idx)], idx


def density_from_vector(psi: np.ndarray) -> np.ndarray:
    psi = np.asarray(psi, dtype=complex)
    return np.outer(psi, psi.conj())


def validate_density(rho: np.ndarray) -> None:
    """Raise :class:`InvalidInputError` unless ``rho`` is a valid density operator."""
    _check_square(rho, "rho")
    if abs(np.trace(rho) - 1.0) > 1e-12 * rho.shape[0] + 1e-12:
        raise InvalidInputError("density matrix trace differs from 1")
    if not is_hermitian(rho):
        raise InvalidInputError("density matrix is not Hermitian")
    if np.linalg.eigvalsh(rho).min() < -1e-10:
        raise InvalidInputError("density matrix has negative eigenvalues")
