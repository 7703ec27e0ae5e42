"""Square-lattice GKP qudit codes in a truncated Fock space."""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from . import fock
from .errors import ConvergenceError, DegenerateSpectrumError, TruncationError, UnsupportedDimension, WrongDimension
from .fock import HilbertSpace

__all__ = [
    "PauliLabel",
    "GkpCode",
    "LogicalBasis",
    "build_code",
    "pauli_displacement",
    "binned_projectors",
    "binned_probabilities",
    "ideal_code",
    "stabilizer_length",
    "omega",
    "pauli_operator",
    "logical_pauli_matrix",
    "pauli_eigenbasis",
    "parity_basis",
    "maximally_mixed",
    "measurement_pauli_sets",
    "TAIL_WEIGHT_LIMIT",
    "recommended_cavity_dim",
    "all_measurement_bases",
    "PARITY_LABELS",
]

TAIL_WEIGHT_LIMIT = 1e-6


def omega(d: int) -> complex:
    return cmath.exp(2j * math.pi / d)


def stabilizer_length(d: int) -> float:
    """Length ``sqrt(pi d)`` of the stabilizer displacements."""
    return math.sqrt(math.pi * d)


@dataclass(frozen=True, order=True)
class PauliLabel:
    """Generalized Pauli ``phase * X^n Z^m``.

    ``sqrt_omega`` selects the extra phase ``e^{i pi / d}`` used to make the
    spectrum of products like ``XZ`` equal to the ``d``-th roots of unity.
    """

    n: int
    m: int
    sqrt_omega: bool = False

    def phase(self, d: int) -> complex:
        return cmath.exp(1j * math.pi / d) if self.sqrt_omega else 1.0 + 0j

    def name(self) -> str:
        def power(sym, k):
            return "" if k == 0 else (sym if k == 1 else f"{sym}{k}")

        body = power("X", self.n) + power("Z", self.m)
        if not body:
            body = "I"
        return ("sqrtw" + body) if self.sqrt_omega else body

    @classmethod
    def parse(cls, text: str) -> "PauliLabel":
        """Inverse of :meth:`name`, e.g. ``"sqrtwX3Z"`` or ``"XZ2"``."""
        s = text.strip()
        sq = s.startswith("sqrtw")
        if sq:
            s = s[5:]
        n = m = 0
        i = 0
        while i < len(s):
            sym = s[i]
            j = i + 1
            while j < len(s) and s[j].isdigit():
                j += 1
            k = int(s[i + 1 : j]) if j > i + 1 else 1
            if sym == "X":
                n = k
            elif sym == "Z":
                m = k
            elif sym == "I" and j == len(s):
                pass
            else:
                raise ValueError(f"cannot parse Pauli label {text!r}")
            i = j
        return cls(n, m, sq)


X = PauliLabel(1, 0)
Z = PauliLabel(0, 1)


def measurement_pauli_sets(d: int) -> list[PauliLabel]:
    """Pauli sets whose eigenbases enter the decomposed channel fidelity.

    For ``d = 4`` the parity basis (see :func:`parity_basis`) is needed as well.
    """
    if d == 2:
        return [X, Z, PauliLabel(1, 1, True)]
    if d == 3:
        return [X, Z, PauliLabel(1, 1), PauliLabel(2, 1)]
    if d == 4:
        return [X, Z, PauliLabel(1, 1, True), PauliLabel(2, 1), PauliLabel(3, 1, True), PauliLabel(1, 2)]
    raise UnsupportedDimension(f"measurement sets exist for d in {{2, 3, 4}}, got {d}")


# Logical-space superposition coefficients of |P_k> in the |Z_j> basis, for
# eigenvalue omega^k, k = 0..d-1. Unnormalized; "w" is omega, "s" is sqrt(omega).
def _eigen_tables(d: int) -> dict[PauliLabel, np.ndarray]:
    w = omega(d)
    s = cmath.exp(1j * math.pi / d)
    if d == 2:
        return {
            X: np.array([[1, 1], [1, -1]]),
            PauliLabel(1, 1, True): np.array([[1, s], [1, -s]]),
        }
    if d == 3:
        return {
            X: np.array([[1, 1, 1], [1, w**2, w], [1, w, w**2]]),
            PauliLabel(1, 1): np.array([[1, 1, w], [1, w**2, w**2], [1, w, 1]]),
            PauliLabel(2, 1): np.array([[1, w**2, 1], [1, 1, w**2], [1, w, w]]),
        }
    if d == 4:
        return {
            X: np.array([[1, 1, 1, 1], [1, -w, -1, w], [1, -1, 1, -1], [1, w, -1, -w]]),
            PauliLabel(1, 1, True): np.array([[1, s, -1, s], [s, 1, s, -1], [1, -s, -1, -s], [s, -1, s, 1]]),
            PauliLabel(2, 1): np.array([[0, 1, 0, w], [1, 0, -w, 0], [0, 1, 0, -w], [1, 0, w, 0]]),
            PauliLabel(3, 1, True): np.array([[1, -s, 1, s], [s, 1, -s, 1], [1, s, 1, -s], [s, -1, -s, -1]]),
            PauliLabel(1, 2): np.array([[1, 1, -1, -1], [1, -w, 1, -w], [1, -1, -1, 1], [1, w, 1, w]]),
        }
    return {}


PARITY_LABELS = [("+", 0), ("-", 0), ("+", 1), ("-", 1)]
_PARITY_COEFFS = np.array([[1, 0, 1, 0], [1, 0, -1, 0], [0, 1, 0, 1], [0, 1, 0, -1]], dtype=complex)


@dataclass(frozen=True)
class LogicalBasis:
    """An orthonormal logical basis of ``d`` cavity states.

    Attributes
    ----------
    kind : str
        ``"pauli"`` or ``"parity"``.
    label : PauliLabel or None
    coefficients : ndarray
        ``(d, d)`` normalized logical amplitudes, row ``k`` is state ``k``.
    states : ndarray
        ``(d, N)`` cavity kets, row ``k`` is state ``k``.
    eigenvalue_labels : list
        ``omega^k`` for Pauli bases, ``(sign, m)`` tuples for the parity basis.
    """

    kind: str
    label: PauliLabel | None
    coefficients: np.ndarray
    states: np.ndarray
    eigenvalue_labels: list

    @property
    def name(self) -> str:
        return "parity" if self.kind == "parity" else self.label.name()

    def state_names(self) -> list[str]:
        if self.kind == "parity":
            return [f"{sgn}{m}" for sgn, m in self.eigenvalue_labels]
        return [f"{self.name}_{k}" for k in range(len(self.states))]


@dataclass(frozen=True)
class GkpCode:
    """Finite-energy square GKP code of dimension ``d`` and envelope ``delta``."""

    d: int
    delta: float
    space: HilbertSpace
    codewords: np.ndarray = field(repr=False)

    @property
    def length(self) -> float:
        return stabilizer_length(self.d)

    @property
    def logical_length(self) -> float:
        """Amplitude ``sqrt(pi/d)`` of the logical displacements."""
        return math.sqrt(math.pi / self.d)

    @cached_property
    def stabilizers(self) -> tuple[np.ndarray, np.ndarray]:
        """Ideal ``(S_X, S_Z) = (D(l), D(i l))``."""
        n = self.space.cavity_dim
        return fock.displacement(self.space, self.length), fock.displacement(self.space, 1j * self.length)

    @cached_property
    def finite_stabilizers(self) -> tuple[np.ndarray, np.ndarray]:
        """Envelope-conjugated stabilizers, which leave the finite-energy words invariant."""
        n = self.space.cavity_dim
        return (
            fock.displacement_finite(n, self.length, self.delta),
            fock.displacement_finite(n, 1j * self.length, self.delta),
        )

    @cached_property
    def logicals(self) -> tuple[np.ndarray, np.ndarray]:
        """Ideal ``(X_d, Z_d)``."""
        return pauli_operator(self, X), pauli_operator(self, Z)

    def codeword(self, j: int) -> np.ndarray:
        return self.codewords[j % self.d]

    def logical_state(self, coefficients) -> np.ndarray:
        """Normalized cavity ket ``sum_j c_j |Z_j>``."""
        c = np.asarray(coefficients, dtype=complex)
        return fock.normalize(c @ self.codewords)


def _fix_phase(psi: np.ndarray) -> np.ndarray:
    k = int(np.argmax(np.abs(psi)))
    return psi * (abs(psi[k]) / psi[k])


def _check_tail(psi: np.ndarray, label: str, limit: float) -> None:
    tail = float(np.sum(np.abs(psi[-10:]) ** 2))
    if tail > limit:
        raise TruncationError(
            f"{label} has weight {tail:.2e} in the top 10 Fock levels (limit {limit:g}); increase cavity_dim"
        )


def recommended_cavity_dim(d: int, delta: float) -> int:
    """Smallest round cutoff that keeps codeword tails below the limit.

    Empirical fit: the codeword photon distribution extends to roughly
    ``7.5 / delta^2`` levels at the ``1e-6`` tail level.
    """
    n = int(math.ceil(7.5 / delta**2 / 10.0) * 10)
    return max(n, fock.default_cavity_dim(d))


def build_code(
    d: int,
    delta: float,
    space: HilbertSpace | int | None = None,
    *,
    tail_limit: float = TAIL_WEIGHT_LIMIT,
    check_convergence: bool = False,
) -> GkpCode:
    """Build finite-energy codewords.

    ``|Z_0>`` is the ground state of the Hermitian penalty Hamiltonian
    ``1/2 A_X†A_X + 1/2 A_Z†A_Z + d A_L†A_L`` with ``A = E S E^{-1} − I`` for
    ``S`` in ``(S_X, S_Z, Z_d)``. For unitary ``S`` each term equals
    ``1 − (S + S†)/2`` so this is the usual cosine-potential Hamiltonian up to
    a constant. The other words are ``E X_d^n E^{-1} |Z_0>``.

    Args:
        d: Qudit dimension, 1 to 4.
        delta: Envelope width.
        space: Hilbert space or cavity cutoff. Defaults to :func:`recommended_cavity_dim`,
            which equals :func:`default_cavity_dim` for moderate ``delta``.
        tail_limit: Maximal weight allowed in the top 10 Fock levels.
        check_convergence: Rebuild at 1.25x cutoff and require the codewords
            to agree to 1e-4.

    Returns:
        GkpCode with rows of ``codewords`` normalized, largest amplitude real-positive.

    Raises:
        TruncationError: If a codeword leaks into the top of the Fock space.
    """
    if d not in (1, 2, 3, 4):
        raise UnsupportedDimension(f"d must be 1..4, got {d}")
    if not 0.05 <= delta <= 0.6:
        raise ValueError(f"delta must lie in [0.05, 0.6], got {delta}")
    if space is None:
        space = HilbertSpace(recommended_cavity_dim(d, delta))
    elif not isinstance(space, HilbertSpace):
        space = HilbertSpace(int(space))
    words = _codewords(d, delta, space.cavity_dim, tail_limit)
    if check_convergence:
        big = _codewords(d, delta, space.scaled().cavity_dim, tail_limit)
        change = fock.relative_change(words, big[:, : space.cavity_dim])
        if change > 1e-4:
            raise ConvergenceError(f"codewords changed by {change:.2e} at 1.25x cutoff")
    return GkpCode(d=d, delta=float(delta), space=space, codewords=words)


def ideal_code(d: int) -> GkpCode:
    """Zero-envelope code on a ``4d``-site position ring.

    Sites sit half a logical step apart, ``q_j = j sqrt(pi / 2d)``, and
    ``|Z_n> = (|2n> + |2n + 2d>)/sqrt2``. Every displacement used by the
    controlled-Pauli circuits acts exactly, so logical circuits run without
    finite-energy errors. Continuous gates such as sBs are not representable.
    """
    if d not in (1, 2, 3, 4):
        raise UnsupportedDimension(f"d must be 1..4, got {d}")
    L = 4 * d
    space = fock.LatticeSpace(cavity_dim=L, spacing=math.sqrt(math.pi / (2 * d)))
    words = np.zeros((d, L), dtype=complex)
    for n in range(d):
        words[n, 2 * n] = words[n, 2 * n + 2 * d] = 1 / math.sqrt(2)
    return GkpCode(d=d, delta=0.0, space=space, codewords=words)


def _codewords(d: int, delta: float, n: int, tail_limit: float) -> np.ndarray:
    ell = stabilizer_length(d)
    step = math.sqrt(math.pi / d)
    eye = np.eye(n)
    penalties = [
        (0.5, fock.displacement_finite(n, ell, delta)),
        (0.5, fock.displacement_finite(n, 1j * ell, delta)),
    ]
    if d > 1:
        penalties.append((float(d), fock.displacement_finite(n, 1j * step, delta)))
    H = np.zeros((n, n), dtype=complex)
    for weight, S in penalties:
        A = S - eye
        H += weight * (A.conj().T @ A)
    _, psi = fock.ground_state(H)
    psi = _fix_phase(fock.normalize(psi))
    _check_tail(psi, "|Z_0>", tail_limit)
    words = [psi]
    if d > 1:
        x_fe = fock.displacement_finite(n, step, delta)
        for j in range(1, d):
            nxt = fock.normalize(x_fe @ words[-1])
            _check_tail(nxt, f"|Z_{j}>", tail_limit)
            words.append(nxt)
    return np.array(words)


def _reduced_power(k: int, d: int) -> int:
    k %= d
    return k - d if k > d / 2 else k


def pauli_displacement(d: int, label: PauliLabel, length: float | None = None) -> tuple[complex, complex]:
    """``(prefactor, beta)`` with ``phase X^n Z^m = prefactor * D(beta)`` on the code.

    ``X^n Z^m = e^{−i n m pi / d} D((n + i m) sqrt(pi/d))`` with the powers
    shifted by multiples of ``d`` to the smallest magnitude, which keeps the
    displacement short. The shift multiplies by a stabilizer, so the
    operator is unchanged on the ideal code.
    """
    if d > 1:
        n, m = _reduced_power(label.n, d), _reduced_power(label.m, d)
    else:
        n, m = label.n, label.m
    length = math.sqrt(math.pi / d) if length is None else length
    pref = label.phase(d) * cmath.exp(-1j * n * m * math.pi / d)
    return pref, complex((n + 1j * m) * length)


def pauli_operator(code: GkpCode, label: PauliLabel, *, finite_energy: bool = False) -> np.ndarray:
    """Cavity operator ``phase * X_d^n Z_d^m`` as one (shortest) displacement."""
    pref, alpha = pauli_displacement(code.d, label, code.logical_length)
    dim = code.space.cavity_dim
    if alpha == 0:
        return pref * np.eye(dim, dtype=complex)
    if finite_energy:
        return pref * fock.displacement_finite(dim, alpha, code.delta)
    return pref * fock.displacement(code.space, alpha)


def logical_pauli_matrix(d: int, label: PauliLabel) -> np.ndarray:
    """``d x d`` matrix of ``phase X^n Z^m`` with ``X|j> = |j+1>``, ``Z|j> = omega^j |j>``."""
    shift = np.roll(np.eye(d), 1, axis=0)
    clock = np.diag([omega(d) ** j for j in range(d)])
    return label.phase(d) * np.linalg.matrix_power(shift, label.n % d) @ np.linalg.matrix_power(clock, label.m % d)


def _logical_eigenvectors(d: int, label: PauliLabel) -> np.ndarray:
    """Eigenvectors ordered by eigenvalue ``omega^k``; rows are states."""
    M = logical_pauli_matrix(d, label)
    w, v = np.linalg.eig(M)
    roots = np.array([omega(d) ** k for k in range(d)])
    order = []
    for r in roots:
        hits = np.where(np.abs(w - r) < 1e-8)[0]
        if len(hits) != 1:
            raise DegenerateSpectrumError(f"{label.name()} has no non-degenerate omega^k spectrum for d={d}")
        order.append(hits[0])
    vecs = v[:, order].T
    out = []
    for vec in vecs:
        k = int(np.argmax(np.abs(vec) > 1e-9))
        out.append(vec * (abs(vec[k]) / vec[k]))
    return np.array(out)


def pauli_eigenbasis(code: GkpCode, label: PauliLabel) -> LogicalBasis:
    """Finite-energy eigenstates of a generalized Pauli.

    Tabulated superpositions of the finite-energy codewords are used when
    available, otherwise the logical matrix is diagonalized.

    Raises
    ------
    DegenerateSpectrumError
        If the label's logical spectrum is not ``{omega^k}`` without repeats.
    """
    d = code.d
    if d < 2:
        raise UnsupportedDimension("Pauli eigenbases need d >= 2")
    label = PauliLabel(label.n % d, label.m % d, label.sqrt_omega)
    if label.n == 0 and label.m == 1 and not label.sqrt_omega:
        coeffs = np.eye(d, dtype=complex)
    else:
        table = _eigen_tables(d)
        coeffs = table.get(label)
        if coeffs is None:
            coeffs = _logical_eigenvectors(d, label)
        else:
            # Only the tabulated sets are guaranteed non-degenerate; the check
            # keeps the table honest.
            _logical_eigenvectors(d, label)
        coeffs = np.asarray(coeffs, dtype=complex)
    coeffs = coeffs / np.linalg.norm(coeffs, axis=1, keepdims=True)
    states = np.array([code.logical_state(c) for c in coeffs])
    return LogicalBasis(
        kind="pauli",
        label=label,
        coefficients=coeffs,
        states=states,
        eigenvalue_labels=[omega(d) ** k for k in range(d)],
    )


def parity_basis(code: GkpCode) -> LogicalBasis:
    """Joint eigenbasis of ``X_4^2`` and ``Z_4^2``: ``|±, m>`` for ``d = 4``."""
    if code.d != 4:
        raise WrongDimension(f"the parity basis is defined for d=4, got d={code.d}")
    coeffs = _PARITY_COEFFS / np.sqrt(2)
    states = np.array([code.logical_state(c) for c in coeffs])
    return LogicalBasis(kind="parity", label=None, coefficients=coeffs, states=states, eigenvalue_labels=list(PARITY_LABELS))


def all_measurement_bases(code: GkpCode) -> list[LogicalBasis]:
    """Eigenbases entering the decomposed fidelity (plus parity for ``d = 4``)."""
    bases = [pauli_eigenbasis(code, lab) for lab in measurement_pauli_sets(code.d)]
    if code.d == 4:
        bases.append(parity_basis(code))
    return bases


def maximally_mixed(code: GkpCode) -> np.ndarray:
    """Equal mixture ``(1/d) sum_n |Z_n><Z_n|`` of the codewords."""
    W = code.codewords
    rho = W.T @ W.conj() / code.d
    return rho / np.trace(rho).real


def _quadrature_bins(space, beta: complex, phase: complex, d: int) -> np.ndarray:
    """Projectors onto the ``d`` eigenvalue sectors of ``phase * D(beta)``.

    ``D(beta) = exp(i sqrt2 |beta| u)`` with the rotated quadrature
    ``u = (Im beta q − Re beta p) / |beta|``. Each eigenvector of the truncated
    ``u`` is assigned to the sector whose eigenphase is nearest.
    """
    q, p = fock.quadratures(space)
    u = (beta.imag * q - beta.real * p) / abs(beta)
    w, v = np.linalg.eigh((u + u.conj().T) / 2)
    theta = math.sqrt(2) * abs(beta) * w + cmath.phase(phase)
    k = np.mod(np.round(theta * d / (2 * math.pi)), d).astype(int)
    out = np.zeros((d, len(w), len(w)), dtype=complex)
    for s in range(d):
        cols = v[:, k == s]
        out[s] = cols @ cols.conj().T
    return out


def binned_projectors(code: GkpCode, label: PauliLabel) -> np.ndarray:
    """Ideal modular-quadrature measurement of a logical Pauli.

    Returns ``(d, N, N)`` projectors summing to the identity; sector ``k``
    collects eigenphase ``omega^k``. This is the error-free readout used for
    survival probabilities, free of the finite-energy infidelity of the
    ancilla circuits.
    """
    if isinstance(code.space, fock.LatticeSpace):
        raise WrongDimension("binned readout needs a Fock-space code")
    d = code.d
    pref, beta = pauli_displacement(d, label, code.logical_length)
    if beta == 0:
        raise ValueError("the identity has no eigen-sectors")
    return _quadrature_bins(code.space, beta, pref, d)


def binned_probabilities(code: GkpCode, basis: LogicalBasis, rho: np.ndarray) -> np.ndarray:
    """Outcome probabilities of the ideal readout in ``basis`` (index as ``basis.states``).

    The parity basis is read by an ``X^2`` measurement followed by ``Z^2``.
    """
    rho = np.asarray(rho, dtype=complex)
    if rho.ndim == 1:
        rho = np.outer(rho, rho.conj())
    if basis.kind == "pauli":
        P = binned_projectors(code, basis.label)
        return np.real(np.einsum("kij,ji->k", P, rho))
    px = binned_projectors(code, PauliLabel(2, 0))  # sectors 0 (+1) and 2 (−1)
    pz = binned_projectors(code, PauliLabel(0, 2))
    out = []
    for sign, mm in basis.eigenvalue_labels:
        Px = px[0] + px[1] if sign == "+" else px[2] + px[3]
        Pz = pz[0] + pz[1] if mm == 0 else pz[2] + pz[3]
        out.append(np.real(np.trace(Pz @ Px @ rho @ Px @ Pz)))
    return np.array(out)
