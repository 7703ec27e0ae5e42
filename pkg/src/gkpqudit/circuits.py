"""ECD-based circuits: gates, sBs stabilization rounds and logical measurements.

Schedules are immutable step lists executed by :func:`run_schedule` (sampled
measurements) or :func:`outcome_distribution` (exact branching). Composite
states use the ``ancilla ⊗ cavity`` ordering of :mod:`gkpqudit.fock`.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

from . import fock
from .errors import DimensionMismatch, NormCollapseError, WrongDimension
from .fock import HilbertSpace
from .gkp import GkpCode, PauliLabel, stabilizer_length

__all__ = [
    "FrameTracker",
    "CircuitStep",
    "CircuitSchedule",
    "SbsParams",
    "ecd_unitary",
    "rotation_unitary",
    "zphase_unitary",
    "step_unitary",
    "schedule_unitary",
    "controlled_pauli",
    "compile_controlled_pauli",
    "frame_phase",
    "sbs_params",
    "sbs_round",
    "sbs_rounds",
    "sbs_byproduct",
    "qubit_pauli_measurement",
    "qutrit_pauli_measurement",
    "ququart_pauli_measurement",
    "ququart_parity_measurement",
    "logical_measurement",
    "run_schedule",
    "outcome_distribution",
    "RunResult",
    "THETA0",
]

THETA0 = 2.0 * math.atan(1.0 / math.sqrt(2.0))

_SM_EG = np.array([[0, 0], [1, 0]], dtype=complex)  # |e><g|
_SM_GE = np.array([[0, 1], [0, 0]], dtype=complex)  # |g><e|
_PROJ = {
    "z": (np.diag([1.0, 0.0]).astype(complex), np.diag([0.0, 1.0]).astype(complex)),
    "x": (0.5 * (np.eye(2) + fock.SIGMA_X), 0.5 * (np.eye(2) - fock.SIGMA_X)),
    "y": (0.5 * (np.eye(2) + fock.SIGMA_Y), 0.5 * (np.eye(2) - fock.SIGMA_Y)),
}


@dataclass
class FrameTracker:
    """Accumulated cavity reference phase; rotates subsequent ``beta`` by ``e^{i phase}``."""

    phase: float = 0.0

    def advance(self, phi: float) -> None:
        self.phase = float((self.phase + phi) % (2 * math.pi))

    def rotate(self, beta: complex) -> complex:
        return beta * cmath.exp(1j * self.phase)


STEP_KINDS = ("ecd", "rotate", "zphase", "xflip", "displace", "frame", "measure", "reset", "idle")


@dataclass(frozen=True)
class CircuitStep:
    """One circuit element.

    ``kind`` is one of ``ecd(beta)``, ``rotate(phi, theta)``, ``zphase(theta)``,
    ``xflip`` (ancilla ``sigma_x``), ``displace(beta)`` (unconditional),
    ``frame(phi)``, ``measure(axis, tag)``, ``reset`` or ``idle``.
    ``segment`` and ``duration`` (µs) are read by noise models only.
    A measurement with ``cond_tag`` picks its axis from ``cond_axes`` indexed
    by the earlier outcome bit.
    """

    kind: str
    beta: complex = 0j
    phi: float = 0.0
    theta: float = 0.0
    axis: str = "z"
    tag: str = ""
    cond_tag: str = ""
    cond_axes: tuple = ()
    segment: str = ""
    duration: float = 0.0

    def __post_init__(self):
        if self.kind not in STEP_KINDS:
            raise ValueError(f"unknown step kind {self.kind!r}")
        if not cmath.isfinite(complex(self.beta)):
            raise ValueError("beta must be finite")
        if self.kind == "measure" and self.axis not in _PROJ:
            raise ValueError(f"measurement axis must be x, y or z, got {self.axis!r}")

    def inverse(self) -> "CircuitStep":
        if self.kind in ("ecd", "xflip", "frame", "idle"):
            return self if self.kind != "frame" else replace(self, phi=-self.phi)
        if self.kind == "rotate":
            return replace(self, theta=-self.theta)
        if self.kind == "zphase":
            return replace(self, theta=-self.theta)
        if self.kind == "displace":
            return replace(self, beta=-self.beta)
        raise ValueError(f"{self.kind} steps are not invertible")

    def to_dict(self) -> dict:
        out = {"kind": self.kind}
        defaults = CircuitStep("idle")
        for key, val in asdict(self).items():
            if key == "kind" or val == getattr(defaults, key):
                continue
            if isinstance(val, complex):
                out[key] = [val.real, val.imag]
            elif isinstance(val, tuple):
                out[key] = list(val)
            else:
                out[key] = val
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "CircuitStep":
        kw = dict(data)
        if "beta" in kw:
            b = kw["beta"]
            kw["beta"] = complex(b[0], b[1]) if isinstance(b, (list, tuple)) else complex(b)
        if "cond_axes" in kw:
            kw["cond_axes"] = tuple(kw["cond_axes"])
        return cls(**kw)


@dataclass(frozen=True)
class CircuitSchedule:
    """Ordered steps plus an explicit outcome decoder.

    ``decoder`` maps tuples of measurement bits (ordered as ``tags``) to the
    logical outcome label.
    """

    steps: tuple
    space: HilbertSpace
    decoder: dict = field(default_factory=dict)
    name: str = ""

    def __post_init__(self):
        tags = [s.tag for s in self.steps if s.kind == "measure"]
        if len(tags) != len(set(tags)):
            raise ValueError(f"measurement tags must be unique, got {tags}")

    @property
    def tags(self) -> list[str]:
        return [s.tag for s in self.steps if s.kind == "measure"]

    def __add__(self, other: "CircuitSchedule") -> "CircuitSchedule":
        if other.space != self.space:
            raise DimensionMismatch("cannot concatenate schedules on different spaces")
        return CircuitSchedule(self.steps + other.steps, self.space, other.decoder or self.decoder, self.name)

    def decode(self, record: dict):
        key = tuple(record[t] for t in self.tags)
        return self.decoder.get(key)

    def to_json_dict(self) -> dict:
        return {
            "name": self.name,
            "cavity_dim": self.space.cavity_dim,
            "steps": [s.to_dict() for s in self.steps],
            "decoder": [{"bits": list(k), "outcome": _jsonable(v)} for k, v in sorted(self.decoder.items())],
        }

    @classmethod
    def from_json_dict(cls, data: dict) -> "CircuitSchedule":
        dec = {tuple(e["bits"]): _unjson(e["outcome"]) for e in data.get("decoder", [])}
        steps = tuple(CircuitStep.from_dict(s) for s in data["steps"])
        return cls(steps, HilbertSpace(int(data["cavity_dim"])), dec, data.get("name", ""))


def _jsonable(v):
    return list(v) if isinstance(v, tuple) else v


def _unjson(v):
    return tuple(v) if isinstance(v, list) else v


# ---------------------------------------------------------------- unitaries


def ecd_unitary(space: HilbertSpace, beta: complex) -> np.ndarray:
    """``ECD(beta) = D(beta/2) ⊗ |e><g| + D(−beta/2) ⊗ |g><e|``."""
    if beta == 0:
        return fock.embed(fock.SIGMA_X, "ancilla", space)
    plus = fock.displacement(space, beta / 2)
    # D(-b) = D(b)^dagger for the truncated generator as well
    minus = plus.conj().T
    return np.kron(_SM_EG, plus) + np.kron(_SM_GE, minus)


def rotation_unitary(phi: float, theta: float) -> np.ndarray:
    """Ancilla rotation ``exp[i (sigma_x cos phi + sigma_y sin phi) theta / 2]``."""
    axis = math.cos(phi) * fock.SIGMA_X + math.sin(phi) * fock.SIGMA_Y
    return math.cos(theta / 2) * np.eye(2, dtype=complex) + 1j * math.sin(theta / 2) * axis


def zphase_unitary(theta: float) -> np.ndarray:
    """``|g><g| + e^{i theta} |e><e|``."""
    return np.diag([1.0, cmath.exp(1j * theta)])


def step_unitary(step: CircuitStep, space: HilbertSpace, frame: float = 0.0) -> np.ndarray | None:
    """Composite unitary of a unitary step (``None`` for non-unitary steps)."""
    rot = cmath.exp(1j * frame)
    if step.kind == "ecd":
        return ecd_unitary(space, step.beta * rot)
    if step.kind == "rotate":
        return fock.embed(rotation_unitary(step.phi, step.theta), "ancilla", space)
    if step.kind == "zphase":
        return fock.embed(zphase_unitary(step.theta), "ancilla", space)
    if step.kind == "xflip":
        return fock.embed(fock.SIGMA_X, "ancilla", space)
    if step.kind == "displace":
        return fock.embed(fock.displacement(space, step.beta * rot), "cavity", space)
    if step.kind == "idle":
        return np.eye(space.total_dim, dtype=complex)
    return None


def schedule_unitary(schedule: CircuitSchedule, frame: float = 0.0) -> np.ndarray:
    """Product of all unitary steps (frame steps honoured, measurements rejected)."""
    U = np.eye(schedule.space.total_dim, dtype=complex)
    ph = frame
    for step in schedule.steps:
        if step.kind == "frame":
            ph += step.phi
            continue
        V = step_unitary(step, schedule.space, ph)
        if V is None:
            raise ValueError(f"schedule contains non-unitary step {step.kind!r}")
        U = V @ U
    return U


# ---------------------------------------------------------- controlled Pauli


def _minimal_power(k: int, d: int) -> int:
    k %= d
    return k - d if k > d / 2 else k


def compile_controlled_pauli(d: int, label: PauliLabel) -> tuple[complex, float]:
    """Return ``(beta_nm, varphi_nm)`` of the ECD compilation of ``C(phase X^n Z^m)``.

    Powers are shifted by multiples of ``d`` (a stabilizer) to the smallest
    magnitude, which turns ``n = d − 1`` into ``−1`` for ``d > 2``.
    """
    n = _minimal_power(label.n, d) if d > 1 else label.n
    m = _minimal_power(label.m, d) if d > 1 else label.m
    step = math.sqrt(math.pi / d)
    beta = (n + 1j * m) * step
    varphi = math.pi / d if label.sqrt_omega else 0.0
    return complex(beta), n * m * math.pi / d - varphi


def controlled_pauli(
    code: GkpCode | int,
    label: PauliLabel,
    *,
    include_displacement: bool = False,
    space: HilbertSpace | None = None,
    segment: str = "measure",
) -> CircuitSchedule:
    """Schedule ``[sigma_x, ECD(beta_nm), sigma_z(−varphi_nm)]`` (+ ``D(beta_nm/2)``).

    On the ideal code the full product equals ``|g><g| ⊗ I + |e><e| ⊗ P``.
    By default the unconditional displacement is omitted, as in experiment.
    """
    if isinstance(code, GkpCode):
        d, space = code.d, code.space
    else:
        d = int(code)
        if space is None:
            raise ValueError("pass space when code is a dimension")
    beta, varphi = compile_controlled_pauli(d, label)
    steps = [CircuitStep("xflip", segment=segment), CircuitStep("ecd", beta=beta, segment=segment)]
    if abs(math.remainder(varphi, 2 * math.pi)) > 1e-15:
        steps.append(CircuitStep("zphase", theta=-varphi, segment=segment))
    if include_displacement:
        steps.append(CircuitStep("displace", beta=beta / 2, segment=segment))
    return CircuitSchedule(tuple(steps), space, name=f"C{label.name()}")


def _inverse_steps(steps: Sequence[CircuitStep]) -> list[CircuitStep]:
    return [s.inverse() for s in reversed(steps)]


# ----------------------------------------------------------------- sBs


@dataclass(frozen=True)
class SbsParams:
    """Amplitudes of one sBs round.

    ``small = sqrt(pi d) sinh(Delta^2)`` (each small ECD has amplitude
    ``small / 2``) and ``big = sqrt(pi d) cosh(Delta^2)``.
    """

    d: int
    delta: float
    small: float
    big: float

    def __post_init__(self):
        if not (0 <= self.small < self.big):
            raise ValueError("need 0 <= small < big")


def sbs_params(d: int, delta: float) -> SbsParams:
    ell = stabilizer_length(d)
    return SbsParams(d=d, delta=delta, small=ell * math.sinh(delta**2), big=ell * math.cosh(delta**2))


def frame_phase(d: int, j: int) -> float:
    """Cavity phase increment after sBs round ``j``.

    Even ``d`` cycles ``S_X, S_Z, S_X†, S_Z†`` with a constant ``pi/2``.
    Odd ``d`` pairs each stabilizer with its inverse so the half-lattice
    byproduct of the big ECD cancels: ``(pi, −pi/2, pi, pi/2)`` with period 4.
    """
    if d % 2 == 0:
        return math.pi / 2
    return (math.pi, -math.pi / 2, math.pi, math.pi / 2)[j % 4]


def cumulative_frame(d: int, j: int) -> float:
    """Frame phase in effect during round ``j`` (starting from 0)."""
    return float(sum(frame_phase(d, i) for i in range(j)) % (2 * math.pi))


# Durations used by noise models: the sBs gate segment is shared among the
# ECD gates in proportion to |beta|; ancilla rotations are instantaneous.
def sbs_round(
    code_or_params,
    params: SbsParams | None = None,
    j: int = 0,
    frame: FrameTracker | None = None,
    *,
    space: HilbertSpace | None = None,
    include_frame_step: bool = True,
) -> CircuitSchedule:
    """One sBs round in the ``S_X`` reference frame.

    Steps: ancilla prep to ``|+>``, ``ECD(−i s/2)``, ``R_0†(pi/2)``,
    ``ECD(big)``, ``R_0(pi/2)``, ``ECD(−i s/2)``, reset, then a frame step
    ``phi_j``. The amplitudes are emitted unrotated; the frame in effect is
    applied when the schedule runs. If ``frame`` is given it is advanced by
    ``phi_j``.
    """
    if isinstance(code_or_params, GkpCode):
        code = code_or_params
        space = code.space
        if params is None:
            params = sbs_params(code.d, code.delta)
    else:
        if params is None:
            params = code_or_params
        if space is None:
            raise ValueError("space is required without a code")
    # Under the R_phi and ECD conventions used here the small ECDs need the
    # minus sign to contract (rather than inflate) the envelope.
    small = -1j * params.small / 2
    big = params.big + 0j
    steps = [
        CircuitStep("rotate", phi=-math.pi / 2, theta=math.pi / 2, segment="sbs"),
        CircuitStep("ecd", beta=small, segment="sbs"),
        CircuitStep("rotate", phi=0.0, theta=-math.pi / 2, segment="sbs"),
        CircuitStep("ecd", beta=big, segment="sbs"),
        CircuitStep("rotate", phi=0.0, theta=math.pi / 2, segment="sbs"),
        CircuitStep("ecd", beta=small, segment="sbs"),
        CircuitStep("reset", segment="readout"),
    ]
    phi = frame_phase(params.d, j)
    if include_frame_step:
        steps.append(CircuitStep("frame", phi=phi))
    if frame is not None:
        frame.advance(phi)
    return CircuitSchedule(tuple(steps), space, name=f"sbs[{j}]")


def sbs_rounds(code: GkpCode, rounds: int, params: SbsParams | None = None, start: int = 0) -> CircuitSchedule:
    steps: list[CircuitStep] = []
    for j in range(start, start + rounds):
        steps.extend(sbs_round(code, params, j).steps)
    return CircuitSchedule(tuple(steps), code.space, name=f"sbs x{rounds}")


def sbs_byproduct(d: int, rounds: int, start: int = 0) -> tuple[int, int]:
    """Net logical displacement left by the big ECDs after ``rounds`` rounds.

    Each big ECD equals ``D(−beta/2)`` times a controlled stabilizer, so a
    round in frame ``Phi`` leaves ``D(−sqrt(pi d) e^{i Phi} / 2)``. Returns
    integers ``(u, v)`` with net displacement ``(u + i v) sqrt(pi/d)``; for odd
    ``d`` the sum is only a lattice vector after complete stabilizer pairs.

    Raises
    ------
    ValueError
        If the byproduct is off the logical lattice (odd ``d``, odd count).
    """
    total = 0j
    ph = cumulative_frame(d, start)
    for j in range(start, start + rounds):
        total += -0.5 * d * cmath.exp(1j * ph)
        ph += frame_phase(d, j)
    u, v = round(total.real), round(total.imag)
    if abs(total - complex(u, v)) > 1e-9:
        raise ValueError(f"byproduct {total:.3f} is off the logical lattice after {rounds} rounds")
    return int(u), int(v)


# ---------------------------------------------------------- measurements


def _plus_prep(segment="measure") -> CircuitStep:
    # R_{-pi/2}(pi/2)|g> = |+>
    return CircuitStep("rotate", phi=-math.pi / 2, theta=math.pi / 2, segment=segment)


def qubit_pauli_measurement(code: GkpCode, label: PauliLabel, *, include_displacement: bool = False) -> CircuitSchedule:
    """Ancilla ``|+>``, ``CP_2``, ``x`` measurement; bit 0 means ``P_0``."""
    if code.d != 2:
        raise WrongDimension("qubit measurement needs d=2")
    cp = controlled_pauli(code, label, include_displacement=include_displacement)
    steps = [CircuitStep("reset"), _plus_prep(), *cp.steps, CircuitStep("measure", axis="x", tag="m1", segment="measure")]
    return CircuitSchedule(tuple(steps), code.space, {(0,): 0, (1,): 1}, name=f"measure {label.name()}")


def qutrit_decoder(k: int) -> dict[tuple[int, int], int]:
    """Bits ``(b1, b2)`` → eigenstate index for symmetrization ``k``.

    With the controlled ``omega^k P`` of index ``k``, part 1 reports ``g``
    iff ``n + k = 0`` and part 2 reports ``g`` iff ``n + k = 1`` (mod 3).
    If part 1 reports ``g`` its verdict stands.
    """
    return {
        (0, 0): (-k) % 3,
        (0, 1): (-k) % 3,
        (1, 0): (1 - k) % 3,
        (1, 1): (2 - k) % 3,
    }


def qutrit_pauli_measurement(
    code: GkpCode, label: PauliLabel, k: int = 0, *, include_displacement: bool = False
) -> CircuitSchedule:
    """Two-part qutrit measurement with symmetrization index ``k``.

    Part 1: ``R_{pi/2}†(pi/2) CP R_0†(theta0) CP† R_0(theta0) CP`` on ``|+>``;
    part 2 uses ``R_{7pi/6}†(pi/2)`` and ``R_{2pi/3}(theta0)``. Both end in a
    ``z`` measurement. ``sigma_z(2 pi k / 3)`` follows every ``CP`` and
    ``sigma_z(−2 pi k / 3)`` every ``CP†``.
    """
    if code.d != 3:
        raise WrongDimension("qutrit measurement needs d=3")
    cp = list(controlled_pauli(code, label, include_displacement=include_displacement).steps)
    sym = 2 * math.pi * k / 3
    cp_s = cp + ([CircuitStep("zphase", theta=sym, segment="measure")] if k % 3 else [])
    cpd_s = _inverse_steps(cp_s)

    def part(first_phi: float, last_phi: float, tag: str) -> list[CircuitStep]:
        return [
            CircuitStep("reset"),
            _plus_prep(),
            *cp_s,
            CircuitStep("rotate", phi=first_phi, theta=THETA0, segment="measure"),
            *cpd_s,
            CircuitStep("rotate", phi=0.0, theta=-THETA0, segment="measure"),
            *cp_s,
            CircuitStep("rotate", phi=last_phi, theta=math.pi / 2, segment="measure"),
            CircuitStep("measure", axis="z", tag=tag, segment="measure"),
        ]

    steps = part(0.0, math.pi / 2, "m1") + part(2 * math.pi / 3, 7 * math.pi / 6, "m2")
    return CircuitSchedule(tuple(steps), code.space, qutrit_decoder(k), name=f"measure {label.name()} k={k}")


QUQUART_PAULI_DECODER = {(0, 0): 0, (0, 1): 2, (1, 0): 1, (1, 1): 3}


def _square(label: PauliLabel) -> PauliLabel:
    # (phase P)^2 = phase^2 X^{2n} Z^{2m} up to the reordering phase, which the
    # compilation re-derives; keep sqrt-omega squared as a plain omega phase.
    return PauliLabel(2 * label.n, 2 * label.m, False)


def _square_phase_fix(d: int, label: PauliLabel) -> float:
    """Extra ancilla phase so the compiled square equals ``(phase X^n Z^m)^2``.

    ``(X^n Z^m)^2 = omega^{nm} X^{2n} Z^{2m}``; with the sqrt-omega phase the
    square picks up another ``omega``.
    """
    n, m = label.n, label.m
    ph = 2 * math.pi * n * m / d
    if label.sqrt_omega:
        ph += 2 * math.pi / d
    return ph


def ququart_pauli_measurement(code: GkpCode, label: PauliLabel, *, include_displacement: bool = False) -> CircuitSchedule:
    """``CP^2`` + ``x`` measurement, then ``CP`` + ``x`` (even) or ``y`` (odd) measurement."""
    if code.d != 4:
        raise WrongDimension("ququart measurement needs d=4")
    cp2 = list(controlled_pauli(code, _square(label), include_displacement=include_displacement).steps)
    fix = _square_phase_fix(4, label)
    if abs(math.remainder(fix, 2 * math.pi)) > 1e-12:
        cp2.append(CircuitStep("zphase", theta=fix, segment="measure"))
    cp = list(controlled_pauli(code, label, include_displacement=include_displacement).steps)
    steps = [
        CircuitStep("reset"),
        _plus_prep(),
        *cp2,
        CircuitStep("measure", axis="x", tag="m1", segment="measure"),
        CircuitStep("reset"),
        _plus_prep(),
        *cp,
        CircuitStep("measure", axis="x", tag="m2", cond_tag="m1", cond_axes=("x", "y"), segment="measure"),
    ]
    decoder = dict(QUQUART_PAULI_DECODER)
    if not include_displacement:
        # the CP^2 part leaves D(−beta_2/2) = X^a Z^b, which moves the P
        # eigen-index by a m − b n before the second part reads it
        sq = _square(label)
        a = -_minimal_power(sq.n, 4) // 2
        b = -_minimal_power(sq.m, 4) // 2
        shift = a * label.m - b * label.n
        decoder = {bits: (k - shift) % 4 for bits, k in decoder.items()}
    return CircuitSchedule(tuple(steps), code.space, decoder, name=f"measure {label.name()}")


def parity_decoder(include_displacement: bool = False) -> dict:
    """Bits → ``(sign, m)``. The ``X_4^{-1}`` left by the first part flips ``Z_4^2``."""
    flip = 0 if include_displacement else 1
    return {(b1, b2): ("+" if b1 == 0 else "-", b2 ^ flip) for b1 in (0, 1) for b2 in (0, 1)}


def ququart_parity_measurement(code: GkpCode, *, include_displacement: bool = False) -> CircuitSchedule:
    """``CX_4^2`` + ``x`` measurement, then ``CZ_4^2`` + ``x`` measurement."""
    if code.d != 4:
        raise WrongDimension("parity measurement needs d=4")
    cx2 = controlled_pauli(code, PauliLabel(2, 0), include_displacement=include_displacement).steps
    cz2 = controlled_pauli(code, PauliLabel(0, 2), include_displacement=include_displacement).steps
    steps = [
        CircuitStep("reset"),
        _plus_prep(),
        *cx2,
        CircuitStep("measure", axis="x", tag="m1", segment="measure"),
        CircuitStep("reset"),
        _plus_prep(),
        *cz2,
        CircuitStep("measure", axis="x", tag="m2", segment="measure"),
    ]
    return CircuitSchedule(tuple(steps), code.space, parity_decoder(include_displacement), name="measure parity")


def logical_measurement(code: GkpCode, basis: str | PauliLabel, k: int = 0, **kw) -> CircuitSchedule:
    """Dispatch to the measurement circuit for ``code.d`` (``"parity"`` for the ququart parity basis)."""
    if isinstance(basis, str) and basis == "parity":
        return ququart_parity_measurement(code, **kw)
    if isinstance(basis, str):
        basis = PauliLabel.parse(basis)
    if code.d == 2:
        return qubit_pauli_measurement(code, basis, **kw)
    if code.d == 3:
        return qutrit_pauli_measurement(code, basis, k, **kw)
    if code.d == 4:
        return ququart_pauli_measurement(code, basis, **kw)
    raise WrongDimension(f"no logical measurement for d={code.d}")


# ---------------------------------------------------------------- execution


@dataclass
class RunResult:
    state: np.ndarray
    record: dict
    frame: float


def _is_ket(x) -> bool:
    return np.ndim(x) == 1


def _apply_unitary(state, U):
    return U @ state if _is_ket(state) else U @ state @ U.conj().T


def _project(state, P):
    if _is_ket(state):
        out = P @ state
        return out, float(np.vdot(out, out).real)
    out = P @ state @ P
    return out, float(np.trace(out).real)


def _reset(state, space: HilbertSpace, rng: np.random.Generator | None, prob_branch=None):
    """Reset the ancilla to ``|g>``. Kets collapse the ancilla first (sampled)."""
    n = space.cavity_dim
    if _is_ket(state):
        psi = state.reshape(2, n)
        pg = float(np.vdot(psi[0], psi[0]).real)
        pe = float(np.vdot(psi[1], psi[1]).real)
        tot = pg + pe
        if prob_branch is not None:
            pick = prob_branch
        else:
            pick = 0 if (rng is None or rng.random() < pg / tot) else 1
        branch = psi[pick]
        nrm = np.linalg.norm(branch)
        if nrm < 1e-12:
            branch = psi[1 - pick]
            nrm = np.linalg.norm(branch)
        out = np.zeros(2 * n, dtype=complex)
        out[:n] = branch / nrm * math.sqrt(tot)
        return out
    rho_c = fock.partial_trace_ancilla(state, space)
    out = np.zeros((2 * n, 2 * n), dtype=complex)
    out[:n, :n] = rho_c
    return out


def _measure_axis(step: CircuitStep, record: dict) -> str:
    if step.cond_tag:
        return step.cond_axes[record[step.cond_tag]]
    return step.axis


def _prepare(state, space):
    state = np.asarray(state, dtype=complex)
    if state.shape[0] == space.cavity_dim:
        # cavity-only input: attach the ancilla in |g>
        if _is_ket(state):
            state = np.kron(fock.KET_G, state)
        else:
            state = np.kron(np.diag([1.0, 0.0]), state)
    if state.shape[0] != space.total_dim:
        raise DimensionMismatch(f"state dim {state.shape[0]} does not match space {space.total_dim}")
    return state


class _UnitaryCache:
    def __init__(self, space):
        self.space = space
        self.cache = {}

    def get(self, step, frame):
        if step.kind in ("ecd", "displace"):
            key = (step.kind, complex(np.round(step.beta * cmath.exp(1j * frame), 13)))
        else:
            key = (step.kind, step.phi, step.theta)
        U = self.cache.get(key)
        if U is None:
            U = step_unitary(step, self.space, frame)
            self.cache[key] = U
        return U


def run_schedule(
    state: np.ndarray,
    schedule: CircuitSchedule,
    noise=None,
    rng_seed: int | np.random.Generator | None = None,
    *,
    frame: float = 0.0,
    cache: _UnitaryCache | None = None,
) -> RunResult:
    """Execute a schedule on a ket or density matrix.

    Measurements sample Born probabilities and project; ``reset`` replaces the
    ancilla by ``|g>``; ``frame`` steps rotate later ``ecd``/``displace``
    amplitudes. ``noise``, if given, must provide
    ``apply(state, step, space) -> state`` and is called after every step.

    Raises
    ------
    NormCollapseError
        If a post-measurement branch has norm below 1e-12.
    """
    space = schedule.space
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)
    state = _prepare(state, space)
    cache = cache or _UnitaryCache(space)
    record: dict = {}
    ph = frame
    for step in schedule.steps:
        if step.kind == "frame":
            ph = (ph + step.phi) % (2 * math.pi)
            continue
        if step.kind == "measure":
            axis = _measure_axis(step, record)
            P0, P1 = (fock.embed(P, "ancilla", space) for P in _PROJ[axis])
            s0, p0 = _project(state, P0)
            s1, p1 = _project(state, P1)
            tot = p0 + p1
            bit = 0 if rng.random() < p0 / tot else 1
            s, p = (s0, p0) if bit == 0 else (s1, p1)
            if p < 1e-12:
                raise NormCollapseError(f"measurement {step.tag} collapsed to norm {p:.2e}")
            state = s / math.sqrt(p / tot) if _is_ket(s) else s / (p / tot)
            record[step.tag] = bit
        elif step.kind == "reset":
            state = _reset(state, space, rng)
        else:
            state = _apply_unitary(state, cache.get(step, ph))
        if noise is not None:
            state = noise.apply(state, step, space)
    return RunResult(state=state, record=record, frame=ph)


def outcome_distribution(
    state: np.ndarray,
    schedule: CircuitSchedule,
    *,
    frame: float = 0.0,
    noise=None,
    min_prob: float = 0.0,
) -> list[tuple[dict, float, np.ndarray]]:
    """Exact branching over all measurement outcomes.

    Resets of density matrices trace out the ancilla; resets of kets after a
    ``z``-diagonal ancilla are exact, otherwise a density matrix is used.

    Returns
    -------
    list of (record, probability, normalized post-state)
    """
    space = schedule.space
    state = _prepare(state, space)
    if _is_ket(state):
        state = np.outer(state, state.conj())
    tr = float(np.trace(state).real)
    cache = _UnitaryCache(space)
    branches = [({}, state / tr, 1.0)]
    ph = frame
    for step in schedule.steps:
        if step.kind == "frame":
            ph = (ph + step.phi) % (2 * math.pi)
            continue
        new = []
        for record, rho, p in branches:
            if step.kind == "measure":
                axis = _measure_axis(step, record)
                for bit, P in enumerate(_PROJ[axis]):
                    Pe = fock.embed(P, "ancilla", space)
                    s, q = _project(rho, Pe)
                    if q * p <= min_prob or q < 1e-15:
                        continue
                    rec = dict(record)
                    rec[step.tag] = bit
                    new.append((rec, s / q, p * q))
            elif step.kind == "reset":
                new.append((record, _reset(rho, space, None), p))
            else:
                rho = _apply_unitary(rho, cache.get(step, ph))
                if noise is not None:
                    rho = noise.apply(rho, step, space)
                new.append((record, rho, p))
        branches = new
    return [(rec, p, rho) for rec, rho, p in branches]


def decoded_distribution(state, schedule: CircuitSchedule, **kw) -> dict:
    """Probability of each decoded logical outcome."""
    out: dict = {}
    for rec, p, _ in outcome_distribution(state, schedule, **kw):
        key = schedule.decode(rec)
        out[key] = out.get(key, 0.0) + p
    return out
