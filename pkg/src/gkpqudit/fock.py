"""Truncated Fock-space linear algebra.

Operators are plain complex ``numpy`` arrays. Composite (ancilla + cavity)
operators use the ordering ``ancilla ⊗ cavity`` with the ancilla ground state
``g`` at index 0, so that ``np.kron(ancilla_op, cavity_op)`` builds them.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Callable, Literal

import numpy as np

from .errors import (
    ConvergenceError,
    DimensionMismatch,
    NonHermitianError,
    TruncationWarning,
)

__all__ = [
    "HilbertSpace",
    "LatticeSpace",
    "default_cavity_dim",
    "annihilation",
    "number",
    "quadratures",
    "displacement",
    "displacement_generator",
    "envelope",
    "envelope_conjugate",
    "displacement_finite",
    "convergence_guard",
    "matrix_exp",
    "ground_state",
    "embed",
    "expectation",
    "partial_trace_ancilla",
    "state_fidelity",
    "normalize",
    "is_unitary",
    "is_hermitian",
    "fock_ket",
    "SIGMA_X",
    "SIGMA_Y",
    "SIGMA_Z",
    "KET_G",
    "KET_E",
    "relative_change",
]

SIGMA_X = np.array([[0, 1], [1, 0]], dtype=complex)
SIGMA_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
SIGMA_Z = np.array([[1, 0], [0, -1]], dtype=complex)
KET_G = np.array([1, 0], dtype=complex)
KET_E = np.array([0, 1], dtype=complex)


@dataclass(frozen=True)
class HilbertSpace:
    """Cavity truncated at ``cavity_dim`` Fock levels, coupled to a qubit ancilla."""

    cavity_dim: int
    ancilla_dim: int = 2

    def __post_init__(self):
        if int(self.cavity_dim) != self.cavity_dim or self.cavity_dim < 2:
            raise ValueError(f"cavity_dim must be an integer >= 2, got {self.cavity_dim}")
        if self.ancilla_dim != 2:
            raise ValueError("only a two-level ancilla is supported")

    @property
    def total_dim(self) -> int:
        return self.cavity_dim * self.ancilla_dim

    def scaled(self, factor: float = 1.25) -> "HilbertSpace":
        """Return a larger space, used by the truncation convergence guard."""
        return HilbertSpace(int(math.ceil(self.cavity_dim * factor)), self.ancilla_dim)


@dataclass(frozen=True)
class LatticeSpace(HilbertSpace):
    """Cyclic position lattice ``q_j = j * spacing``, ``j mod cavity_dim``.

    Carries an exact (untruncated) representation of every displacement whose
    position shift is a whole number of sites and whose momentum kick is
    periodic over the ring. Used as the zero-envelope limit of GKP codes.
    """

    spacing: float = 1.0

    def scaled(self, factor: float = 1.25) -> "LatticeSpace":
        return self

    def displacement(self, alpha: complex) -> np.ndarray:
        """``D(x + iy) psi(q) = e^{−ixy} e^{i sqrt2 y q} psi(q − sqrt2 x)``."""
        x, y = float(np.real(alpha)), float(np.imag(alpha))
        L, s = self.cavity_dim, self.spacing
        shift = math.sqrt(2) * x / s
        a = round(shift)
        wrap = math.sqrt(2) * y * L * s / (2 * math.pi)
        if abs(shift - a) > 1e-9 or abs(wrap - round(wrap)) > 1e-9:
            raise ValueError(f"displacement {alpha} is not representable on this lattice")
        j = np.arange(L)
        phase = np.exp(1j * (math.sqrt(2) * y * s * j - x * y))
        return phase[:, None] * np.roll(np.eye(L, dtype=complex), a, axis=0)


def default_cavity_dim(d: int) -> int:
    """Recommended Fock cutoff for a qudit code of dimension ``d``."""
    return 140 if d >= 4 else 100


def _cavity_dim(space) -> int:
    if isinstance(space, HilbertSpace):
        return space.cavity_dim
    n = int(space)
    if n < 2:
        raise ValueError("cavity dimension must be >= 2")
    return n


def annihilation(space) -> np.ndarray:
    """Lowering operator with ``a[n-1, n] = sqrt(n)``."""
    n = _cavity_dim(space)
    return np.diag(np.sqrt(np.arange(1, n, dtype=float)), 1).astype(complex)


def number(space) -> np.ndarray:
    n = _cavity_dim(space)
    return np.diag(np.arange(n, dtype=float)).astype(complex)


def quadratures(space) -> tuple[np.ndarray, np.ndarray]:
    """Position and momentum, ``q = (a + a†)/√2`` and ``p = i(a† − a)/√2``."""
    a = annihilation(space)
    ad = a.conj().T
    return (a + ad) / np.sqrt(2), 1j * (ad - a) / np.sqrt(2)


def fock_ket(space, n: int) -> np.ndarray:
    v = np.zeros(_cavity_dim(space), dtype=complex)
    v[n] = 1.0
    return v


# Pade(13) coefficients and the theta_13 bound of Higham's scaling-and-squaring.
_PADE13 = np.array(
    [
        64764752532480000.0,
        32382376266240000.0,
        7771770303897600.0,
        1187353796428800.0,
        129060195264000.0,
        10559470521600.0,
        670442572800.0,
        33522128640.0,
        1323241920.0,
        40840800.0,
        960960.0,
        16380.0,
        182.0,
        1.0,
    ]
)
_THETA13 = 5.371920351148152


def matrix_exp(A: np.ndarray) -> np.ndarray:
    """Matrix exponential by Pade(13) scaling and squaring.

    Parameters
    ----------
    A : ndarray
        Square matrix with finite entries.

    Returns
    -------
    ndarray
        ``exp(A)``.

    Raises
    ------
    ConvergenceError
        If the input or the result contains non-finite entries.
    """
    A = np.asarray(A)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise DimensionMismatch(f"matrix_exp needs a square matrix, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise ConvergenceError("matrix_exp input has non-finite entries")
    A = A.astype(complex)
    n = A.shape[0]
    norm1 = np.linalg.norm(A, 1)
    s = 0
    if norm1 > _THETA13:
        s = max(0, int(math.ceil(math.log2(norm1 / _THETA13))))
    As = A / (2.0**s)
    b = _PADE13
    ident = np.eye(n, dtype=complex)
    A2 = As @ As
    A4 = A2 @ A2
    A6 = A4 @ A2
    U = As @ (A6 @ (b[13] * A6 + b[11] * A4 + b[9] * A2) + b[7] * A6 + b[5] * A4 + b[3] * A2 + b[1] * ident)
    V = A6 @ (b[12] * A6 + b[10] * A4 + b[8] * A2) + b[6] * A6 + b[4] * A4 + b[2] * A2 + b[0] * ident
    try:
        X = np.linalg.solve(V - U, V + U)
    except np.linalg.LinAlgError as exc:
        raise ConvergenceError("Pade denominator is singular") from exc
    for _ in range(s):
        X = X @ X
    if not np.all(np.isfinite(X)):
        raise ConvergenceError("matrix_exp overflowed during squaring")
    return X


def displacement_generator(space, alpha: complex) -> np.ndarray:
    """Return ``alpha a† − conj(alpha) a``."""
    a = annihilation(space)
    return alpha * a.conj().T - np.conj(alpha) * a


def displacement(space, alpha: complex) -> np.ndarray:
    """Displacement operator ``D(alpha) = exp(alpha a† − alpha* a)``.

    Warns with :class:`TruncationWarning` when ``|alpha|^2`` exceeds a quarter
    of the cutoff, where edge effects start to matter for low-energy states.
    """
    if isinstance(space, LatticeSpace):
        return space.displacement(alpha)
    n = _cavity_dim(space)
    if abs(alpha) ** 2 > n / 4:
        warnings.warn(
            f"|alpha|^2 = {abs(alpha) ** 2:.2f} exceeds cavity_dim/4 = {n / 4:.1f}",
            TruncationWarning,
            stacklevel=2,
        )
    if alpha == 0:
        return np.eye(n, dtype=complex)
    return matrix_exp(displacement_generator(n, alpha))


def envelope(space, delta: float) -> np.ndarray:
    """Gaussian envelope ``exp(−Δ² a†a)`` (diagonal)."""
    n = _cavity_dim(space)
    return np.diag(np.exp(-(delta**2) * np.arange(n))).astype(complex)


_OVERFLOW_NORM = 1e12


def envelope_conjugate(op, delta: float, *, alpha: complex | None = None) -> np.ndarray:
    """Finite-energy version ``E_Δ O E_Δ^{-1}`` of a cavity operator.

    Parameters
    ----------
    op : ndarray or HilbertSpace or int
        Operator to conjugate. When ``alpha`` is given, ``op`` stands for
        ``D(alpha)`` and only its dimension is used.
    delta : float
        Envelope width.
    alpha : complex, optional
        If set, the result is obtained by exponentiating the conjugated
        generator ``alpha e^{−Δ²} a† − alpha* e^{Δ²} a`` instead of scaling
        matrix entries.

    Raises
    ------
    OverflowError
        If the envelope amplification pushes the result norm above 1e12.
    """
    if alpha is not None:
        n = op.shape[0] if isinstance(op, np.ndarray) else _cavity_dim(op)
        g = math.exp(delta**2)
        a = annihilation(n)
        out = matrix_exp(alpha / g * a.conj().T - np.conj(alpha) * g * a)
    else:
        op = np.asarray(op)
        idx = np.arange(op.shape[0])
        # entry (m, k) picks up e^{-Δ² m} / e^{-Δ² k}
        log_scale = -(delta**2) * (idx[:, None] - idx[None, :])
        if log_scale.max() > 700:
            raise OverflowError("envelope conjugation overflows at this cutoff")
        out = op * np.exp(log_scale)
    nrm = np.linalg.norm(out)
    if not np.isfinite(nrm) or nrm > _OVERFLOW_NORM:
        raise OverflowError(f"finite-energy operator norm {nrm:.3g} exceeds {_OVERFLOW_NORM:g}")
    return out


def displacement_finite(space, alpha: complex, delta: float) -> np.ndarray:
    """Finite-energy displacement ``E_Δ D(alpha) E_Δ^{-1}``."""
    return envelope_conjugate(space, delta, alpha=alpha)


def is_hermitian(A: np.ndarray, tol: float = 1e-9) -> bool:
    return float(np.max(np.abs(A - A.conj().T), initial=0.0)) <= tol


def is_unitary(U: np.ndarray, tol: float = 1e-8) -> bool:
    defect = U.conj().T @ U - np.eye(U.shape[0])
    return float(np.max(np.abs(defect), initial=0.0)) <= tol


def ground_state(H: np.ndarray, tol: float = 1e-9) -> tuple[float, np.ndarray]:
    """Lowest eigenpair of a Hermitian matrix.

    Degenerate ground spaces return the first eigenvector from LAPACK's
    symmetric solver, which is deterministic for a given input.

    Raises
    ------
    NonHermitianError
        If ``max|H − H†| > tol``.
    """
    H = np.asarray(H)
    if H.ndim != 2 or H.shape[0] != H.shape[1]:
        raise DimensionMismatch("ground_state needs a square matrix")
    if not is_hermitian(H, tol):
        raise NonHermitianError(f"Hermiticity defect {np.max(np.abs(H - H.conj().T)):.3g} > {tol:g}")
    w, v = np.linalg.eigh(0.5 * (H + H.conj().T))
    return float(w[0]), v[:, 0]


def embed(op: np.ndarray, which: Literal["cavity", "ancilla"], space: HilbertSpace) -> np.ndarray:
    """Lift a cavity or ancilla operator to the composite ``ancilla ⊗ cavity`` space."""
    op = np.asarray(op)
    if which == "cavity":
        if op.shape != (space.cavity_dim, space.cavity_dim):
            raise DimensionMismatch(f"cavity operator shape {op.shape} != {space.cavity_dim}")
        return np.kron(np.eye(space.ancilla_dim), op)
    if which == "ancilla":
        if op.shape != (space.ancilla_dim, space.ancilla_dim):
            raise DimensionMismatch(f"ancilla operator shape {op.shape} != {space.ancilla_dim}")
        return np.kron(op, np.eye(space.cavity_dim))
    raise ValueError(f"which must be 'cavity' or 'ancilla', got {which!r}")


def _is_ket(x: np.ndarray) -> bool:
    return np.ndim(x) == 1


def expectation(state: np.ndarray, op: np.ndarray) -> complex:
    """``<psi|O|psi>`` for a ket or ``Tr[rho O]`` for a density matrix."""
    state = np.asarray(state)
    if state.shape[0] != op.shape[0]:
        raise DimensionMismatch(f"state dim {state.shape[0]} != operator dim {op.shape[0]}")
    if _is_ket(state):
        return complex(np.vdot(state, op @ state))
    return complex(np.einsum("ij,ji->", state, op))


def partial_trace_ancilla(rho: np.ndarray, space: HilbertSpace) -> np.ndarray:
    """Trace out the ancilla from a composite ket or density matrix."""
    rho = np.asarray(rho)
    if rho.shape[0] != space.total_dim:
        raise DimensionMismatch(f"state dim {rho.shape[0]} != {space.total_dim}")
    n = space.cavity_dim
    if _is_ket(rho):
        psi = rho.reshape(space.ancilla_dim, n)
        return psi.T @ psi.conj()
    r = rho.reshape(space.ancilla_dim, n, space.ancilla_dim, n)
    return np.einsum("aiaj->ij", r)


def state_fidelity(rho: np.ndarray, psi: np.ndarray) -> float:
    """Fidelity ``<psi|rho|psi>`` to a pure target (``|<psi|phi>|^2`` for a ket)."""
    rho = np.asarray(rho)
    psi = np.asarray(psi)
    if rho.shape[0] != psi.shape[0]:
        raise DimensionMismatch(f"state dims {rho.shape[0]} and {psi.shape[0]} differ")
    if _is_ket(rho):
        return float(abs(np.vdot(psi, rho)) ** 2)
    return float(np.real(np.vdot(psi, rho @ psi)))


def normalize(psi: np.ndarray) -> np.ndarray:
    nrm = np.linalg.norm(psi)
    if nrm == 0:
        raise ValueError("cannot normalize the zero vector")
    return psi / nrm


def relative_change(a, b) -> float:
    """Relative difference used by the truncation convergence guard."""
    a = np.asarray(a, dtype=complex)
    b = np.asarray(b, dtype=complex)
    scale = max(np.linalg.norm(a), np.linalg.norm(b), 1e-300)
    return float(np.linalg.norm(a - b) / scale)


def convergence_guard(
    compute: Callable[[HilbertSpace], np.ndarray],
    space: HilbertSpace,
    rtol: float = 1e-4,
    compare: Callable[[np.ndarray, np.ndarray], float] | None = None,
) -> np.ndarray:
    """Evaluate ``compute`` at ``space`` and at 1.25x the cutoff and compare.

    ``compute`` must return a result whose comparison is meaningful across
    cutoffs (scalars, or arrays zero-padded by ``compare``).

    Raises
    ------
    ConvergenceError
        If the relative change exceeds ``rtol``.
    """
    base = compute(space)
    big = compute(space.scaled())
    if compare is None:
        change = relative_change(base, big)
    else:
        change = compare(base, big)
    if change > rtol:
        raise ConvergenceError(
            f"result changed by {change:.2e} (> {rtol:g}) when the cutoff grew "
            f"from {space.cavity_dim} to {space.scaled().cavity_dim}"
        )
    return base
