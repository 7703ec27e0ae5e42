"""Noisy time-domain simulation of repeated sBs stabilization.

A round consists of the sBs gates (ECDs realized by conditional-displacement
evolution with interleaved noise), the ancilla readout and reset, FPGA
latency and idle time. Between rounds only the cavity density matrix is
kept. Survival probabilities are read with the ideal binned readout after
undoing the net displacement left by the big ECDs.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy.special import gammaln

from . import circuits, fock, gkp
from .channels import NoiseModel, fit_exponential, noise_preset, representative_rate
from .errors import NotConverged, ResourceLimit
from .gkp import GkpCode, LogicalBasis, PauliLabel

__all__ = [
    "ERROR_SWITCHES",
    "BUDGET_CONFIGS",
    "SBS_GATE_US",
    "TimingPlan",
    "SimulationPlan",
    "LifetimeCurve",
    "ErrorBudgetEntry",
    "conditional_displacement_hamiltonian",
    "cd_time",
    "readout_effect",
    "basis_for",
    "run_memory_experiment",
    "measurement_fidelity",
    "measurement_fidelity_sweep",
    "error_budget",
    "steady_state_rho",
    "twirled_vacuum",
    "evolve_cavity",
    "BUDGET_DELTA",
]

ERROR_SWITCHES = ("bitflip_sbs", "dephase_sbs", "loss_sbs", "loss_idle", "dephase_idle")
_SBS_SWITCHES = ("bitflip_sbs", "dephase_sbs", "loss_sbs")
_IDLE_SWITCHES = ("loss_idle", "dephase_idle")

BUDGET_CONFIGS: dict[str, dict[str, bool]] = {
    "all": {s: True for s in ERROR_SWITCHES},
    **{s: {t: t == s for t in ERROR_SWITCHES} for s in ERROR_SWITCHES},
    "all_sbs": {s: s in _SBS_SWITCHES for s in ERROR_SWITCHES},
    "all_idle": {s: s in _IDLE_SWITCHES for s in ERROR_SWITCHES},
}

SBS_GATE_US = {1: 1.792, 2: 1.792, 3: 1.808, 4: 1.648}
DEFAULT_ECD_ALPHA = 20.0
# envelope used for budget runs: the effective Delta of the optimized memories
BUDGET_DELTA = {1: 0.3, 2: 0.3, 3: 0.26, 4: 0.25}


# ------------------------------------------------------------------ plans


@dataclass(frozen=True)
class TimingPlan:
    """Segment durations of one round in µs.

    The idle segment is whatever remains of ``round_duration``.
    """

    d: int
    round_duration: float = 7.0
    readout: float = 3.632
    sbs_gates: float | None = None
    fpga: float = 0.224

    def __post_init__(self):
        if self.sbs_gates is None:
            object.__setattr__(self, "sbs_gates", SBS_GATE_US.get(self.d, SBS_GATE_US[4]))
        if self.idle < -1e-12:
            raise ValueError("segments exceed the round duration")

    @property
    def idle(self) -> float:
        return self.round_duration - self.readout - self.sbs_gates - self.fpga

    def segments(self) -> dict[str, float]:
        return {"sbs": self.sbs_gates, "readout": self.readout, "fpga": self.fpga, "idle": max(self.idle, 0.0)}

    @property
    def non_sbs(self) -> float:
        return self.round_duration - self.sbs_gates


@dataclass(frozen=True)
class SimulationPlan:
    """Everything a memory experiment needs.

    Attributes:
        code: Finite-energy code; sets ``d``, ``delta`` and the truncation.
        rounds: Checkpoints (sorted, non-negative) at which survival is read.
        noise: Physical rates.
        error_switches: Which processes are active, see :data:`ERROR_SWITCHES`.
        mode: ``"dm"`` (density matrix) or ``"trajectory"``.
        shots: Trajectories per state in trajectory mode.
        seed: RNG seed for trajectory mode.
        substep: Noise interleaving step inside ECD gates (µs).
        timing: Round timing; defaults to the value for ``code.d``.
        sbs: sBs amplitudes; defaults to the nominal values at ``code.delta``.
        ecd_alpha: Intermediate displacement ``alpha`` of the conditional-displacement
            evolution; each ECD lasts ``|beta| / (chi alpha)`` and the rest of the
            sBs segment (pulse overhead) is noise-free.
        idle_hamiltonian: Apply the Kerr and second-order dispersive phases while idling.
        memory_cap_bytes: Upper bound on the propagated state size.
    """

    code: GkpCode
    rounds: tuple[int, ...] = (0,)
    noise: NoiseModel = field(default_factory=lambda: noise_preset("paper-device"))
    error_switches: Mapping[str, bool] = field(default_factory=lambda: dict(BUDGET_CONFIGS["all"]))
    mode: str = "dm"
    shots: int = 200
    seed: int = 0
    substep: float = 0.1
    timing: TimingPlan | None = None
    sbs: circuits.SbsParams | None = None
    ecd_alpha: float = DEFAULT_ECD_ALPHA
    idle_hamiltonian: bool = False
    memory_cap_bytes: float = 2e9

    def __post_init__(self):
        rounds = tuple(int(n) for n in self.rounds)
        if any(n < 0 for n in rounds) or list(rounds) != sorted(set(rounds)):
            raise ValueError("rounds must be distinct, sorted and non-negative")
        object.__setattr__(self, "rounds", rounds)
        unknown = set(self.error_switches) - set(ERROR_SWITCHES)
        if unknown:
            raise ValueError(f"unknown error switches {sorted(unknown)}")
        object.__setattr__(self, "error_switches", {s: bool(self.error_switches.get(s, False)) for s in ERROR_SWITCHES})
        if self.mode not in ("dm", "trajectory"):
            raise ValueError("mode must be 'dm' or 'trajectory'")
        if self.shots < 1 or self.substep <= 0:
            raise ValueError("shots must be >= 1 and substep > 0")
        if self.ecd_alpha <= 0:
            raise ValueError("ecd_alpha must be > 0")
        if self.timing is None:
            object.__setattr__(self, "timing", TimingPlan(self.code.d))
        if self.sbs is None:
            object.__setattr__(self, "sbs", circuits.sbs_params(self.code.d, self.code.delta))

    def with_(self, **kw) -> "SimulationPlan":
        return replace(self, **kw)

    def rates(self) -> dict[str, float]:
        """Active rates per process after applying the switches."""
        sw, nm = self.error_switches, self.noise
        return {
            "bitflip_sbs": nm.kappa_1q if sw["bitflip_sbs"] else 0.0,
            "dephase_sbs": nm.kappa_phi_q if sw["dephase_sbs"] else 0.0,
            "loss_sbs": nm.kappa_1c if sw["loss_sbs"] else 0.0,
            "loss_idle": nm.kappa_1c if sw["loss_idle"] else 0.0,
            "dephase_idle": nm.kappa_phi_c if sw["dephase_idle"] else 0.0,
        }


@dataclass(frozen=True)
class LifetimeCurve:
    """Survival of one prepared state versus round count."""

    basis: str
    state: int | tuple
    rounds: np.ndarray
    survival: np.ndarray
    err: np.ndarray
    round_duration: float = 7.0

    def __post_init__(self):
        r = np.asarray(self.rounds)
        if r.size > 1 and np.any(np.diff(r) <= 0):
            raise ValueError("rounds must be strictly increasing")
        p = np.asarray(self.survival)
        if np.any(p < -1e-9) or np.any(p > 1 + 1e-9):
            raise ValueError("survival probabilities must lie in [0, 1]")

    @property
    def times_us(self) -> np.ndarray:
        return np.asarray(self.rounds, dtype=float) * self.round_duration

    def points(self) -> list[tuple[int, float, float]]:
        return [(int(n), float(p), float(e)) for n, p, e in zip(self.rounds, self.survival, self.err)]

    def fit(self, d: int, min_round: int = 0):
        keep = np.asarray(self.rounds) >= min_round
        sigma = None
        if np.all(np.asarray(self.err)[keep] > 0):
            sigma = np.asarray(self.err)[keep]
        return fit_exponential(self.times_us[keep], np.asarray(self.survival)[keep], d, sigma=sigma)


@dataclass(frozen=True)
class ErrorBudgetEntry:
    """One row of an error budget.

    ``gamma`` holds per-basis rates in 1/µs. ``percent`` compares the
    excess rate (above the noiseless protocol) with that of ``"all"``.
    """

    error_type: str
    gamma: dict
    gamma_d: float
    excess: float
    percent: float

    def lifetimes_ms(self) -> dict:
        return {k: (math.inf if v <= 0 else 1e-3 / v) for k, v in self.gamma.items()}


# -------------------------------------------------------------- Hamiltonian


def conditional_displacement_hamiltonian(chi: float, alpha: float, theta_beta: float, space) -> np.ndarray:
    """``H_CD = (i/2) chi alpha (e^{i theta} a† − e^{−i theta} a) sigma_z`` on ancilla ⊗ cavity.

    Evolving for :func:`cd_time` and then applying ``sigma_x`` gives ``ECD(beta)``.
    """
    if alpha <= 0:
        raise ValueError("alpha must be > 0")
    a = fock.annihilation(space)
    gen = 0.5j * chi * alpha * (cmath.exp(1j * theta_beta) * a.conj().T - cmath.exp(-1j * theta_beta) * a)
    return np.kron(fock.SIGMA_Z, gen)


def cd_time(beta: complex, chi: float, alpha: float) -> float:
    """Gate time ``|beta| / (chi alpha)``."""
    return abs(beta) / (chi * alpha)


# ------------------------------------------------------------- readout


def basis_for(code: GkpCode, name: str) -> LogicalBasis:
    if name == "parity":
        return gkp.parity_basis(code)
    return gkp.pauli_eigenbasis(code, PauliLabel.parse(name))


def readout_effect(code: GkpCode, basis: LogicalBasis, k: int) -> np.ndarray:
    """Effect operator of outcome ``k`` of the binned readout of ``basis``."""
    if basis.kind == "pauli":
        return gkp.binned_projectors(code, basis.label)[k]
    px = gkp.binned_projectors(code, PauliLabel(2, 0))
    pz = gkp.binned_projectors(code, PauliLabel(0, 2))
    sign, mm = basis.eigenvalue_labels[k]
    Px = px[0] + px[1] if sign == "+" else px[2] + px[3]
    Pz = pz[0] + pz[1] if mm == 0 else pz[2] + pz[3]
    return Px @ Pz @ Px


def _byproduct(d: int, rounds: int) -> complex:
    """Net displacement left by the big ECDs of ``rounds`` rounds."""
    total = 0j
    ph = 0.0
    for j in range(rounds % 4):
        total += -0.5 * stabilizer_len(d) * cmath.exp(1j * ph)
        ph += circuits.frame_phase(d, j)
    return total


def stabilizer_len(d: int) -> float:
    return gkp.stabilizer_length(d)


# ------------------------------------------------------------ propagator


def _loss_weights(n: int, kappa: float, t: float, floor: float = 1e-14) -> list[tuple[int, np.ndarray]]:
    """Exact amplitude-damping Kraus amplitudes ``k_l(n)`` for ``eta = e^{−kappa t}``.

    ``K_l |n> = sqrt(C(n, l) (1−eta)^l eta^{n−l}) |n−l>``; ``l`` runs until
    every weight falls below ``floor``.
    """
    if kappa * t == 0:
        return [(0, np.ones(n))]
    eta = math.exp(-kappa * t)
    levels = np.arange(n, dtype=float)
    out = []
    for l in range(n):
        src = levels[l:]
        logw = gammaln(src + 1) - gammaln(l + 1) - gammaln(src - l + 1) + l * math.log1p(-eta) + (src - l) * math.log(eta)
        w = np.exp(0.5 * logw)
        if l > 0 and np.max(w) ** 2 < floor:
            break
        out.append((l, w))
    return out


class _CavityNoise:
    """Loss, dephasing and idle phases for a fixed duration, exact per application."""

    def __init__(self, n: int, kappa_1: float, kappa_phi: float, t: float, kerr_phase: float = 0.0):
        self.n = n
        self.loss = _loss_weights(n, kappa_1, t) if kappa_1 > 0 else None
        m = np.arange(n, dtype=float)
        self.kappa_1 = kappa_1
        self.sigma2 = 2 * kappa_phi * t
        self.deph = np.exp(-kappa_phi * t * (m[:, None] - m[None, :]) ** 2) if kappa_phi > 0 else None
        self.kerr = None
        if kerr_phase:
            ph = np.exp(-1j * kerr_phase * m * (m - 1))
            self.kerr = ph
        self.trivial = self.loss is None and self.deph is None and self.kerr is None

    def dm(self, rho: np.ndarray) -> np.ndarray:
        """Apply to an operator whose last two axes are cavity indices."""
        if self.loss is not None:
            out = np.zeros_like(rho)
            n = self.n
            for l, w in self.loss:
                ww = w[:, None] * w[None, :]
                out[..., : n - l, : n - l] += ww * rho[..., l:, l:]
            rho = out
        if self.deph is not None:
            rho = rho * self.deph
        if self.kerr is not None:
            rho = self.kerr[:, None] * rho * self.kerr.conj()[None, :]
        return rho

    def ket(self, psi: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        """One stochastic unravelling step for kets with cavity as the last axis."""
        n = self.n
        if self.loss is not None and len(self.loss) > 1:
            branches = []
            for l, w in self.loss:
                out = np.zeros_like(psi)
                out[..., : n - l] = w * psi[..., l:]
                branches.append(out)
            probs = np.array([np.vdot(b, b).real for b in branches])
            k = rng.choice(len(branches), p=probs / probs.sum())
            psi = branches[k] / math.sqrt(probs[k] / probs.sum())
        elif self.loss is not None:
            psi = psi * self.loss[0][1]
        if self.deph is not None:
            theta = rng.normal(0.0, math.sqrt(self.sigma2))
            psi = psi * np.exp(1j * theta * np.arange(n))
        if self.kerr is not None:
            psi = psi * self.kerr
        return psi


@dataclass
class _Op:
    kind: str
    mat: np.ndarray | None = None
    reps: int = 1
    dt: float = 0.0


def _rotate_blocks(R: np.ndarray, rho: np.ndarray) -> np.ndarray:
    """``(R ⊗ I) rho (R ⊗ I)†`` on (2, 2, N, N) blocks, returned C-contiguous."""
    out = np.empty_like(rho)
    for a in range(2):
        for b in range(2):
            out[a, b] = sum(R[a, c] * np.conj(R[b, e]) * rho[c, e] for c in range(2) for e in range(2))
    return out


class _RoundProgram:
    """Compiled per-frame sequences of a single sBs round."""

    def __init__(self, plan: SimulationPlan):
        code, sbs, timing, nm = plan.code, plan.sbs, plan.timing, plan.noise
        self.n = n = code.space.cavity_dim
        self.d = code.d
        self.space = code.space
        rates = plan.rates()
        self.rates = rates
        noisy_sbs = any(rates[s] > 0 for s in _SBS_SWITCHES)
        template = circuits.sbs_round(code, sbs, 0, include_frame_step=False).steps
        self.alpha = plan.ecd_alpha
        t_cd = sum(cd_time(s.beta, nm.chi, self.alpha) for s in template if s.kind == "ecd")
        if t_cd > timing.sbs_gates + 1e-9:
            raise ValueError(f"ECD evolution ({t_cd:.3f} us) exceeds the sBs segment; raise ecd_alpha")
        self.programs = {}
        self.period = 4
        ph = 0.0
        for j in range(self.period):
            ops: list[_Op] = []
            for step in template:
                if step.kind == "rotate":
                    ops.append(_Op("rot", circuits.rotation_unitary(step.phi, step.theta)))
                elif step.kind == "ecd":
                    beta = step.beta * cmath.exp(1j * ph)
                    t = cd_time(beta, nm.chi, self.alpha)
                    reps = max(1, math.ceil(t / plan.substep - 1e-9)) if noisy_sbs else 1
                    D = fock.displacement(code.space, beta / (2 * reps))
                    ops.append(_Op("cd", D, reps, t / reps))
                    ops.append(_Op("x"))
                elif step.kind == "reset":
                    ops.append(_Op("reset"))
            self.programs[j] = ops
            ph += circuits.frame_phase(code.d, j)
        self.sbs_noise = {}
        for ops in self.programs.values():
            for op in ops:
                if op.kind == "cd" and op.dt not in self.sbs_noise:
                    self.sbs_noise[op.dt] = (
                        _CavityNoise(n, rates["loss_sbs"], 0.0, op.dt),
                        0.5 * (1 - math.exp(-2 * rates["bitflip_sbs"] * op.dt)),
                        math.exp(-rates["dephase_sbs"] * op.dt),
                    )
        kerr = 0.0
        if plan.idle_hamiltonian:
            kerr = (nm.kerr / 2 + nm.chi_prime / 4) * timing.non_sbs
        self.idle = _CavityNoise(n, rates["loss_idle"], rates["dephase_idle"], timing.non_sbs, kerr)

    # density matrices are carried as (2, 2, N, N) ancilla blocks
    def round_dm(self, rho_c: np.ndarray, j: int) -> np.ndarray:
        n = self.n
        rho = np.zeros((2, 2, n, n), dtype=complex)
        rho[0, 0] = rho_c
        for op in self.programs[j % self.period]:
            if op.kind == "rot":
                rho = _rotate_blocks(op.mat, rho)
            elif op.kind == "cd":
                D = op.mat
                Dd = D.conj().T
                cav, pflip, fdeph = self.sbs_noise[op.dt]
                for _ in range(op.reps):
                    rho[0, 0] = D @ rho[0, 0] @ Dd
                    rho[0, 1] = D @ rho[0, 1] @ D
                    rho[1, 0] = Dd @ rho[1, 0] @ Dd
                    rho[1, 1] = Dd @ rho[1, 1] @ D
                    if not cav.trivial:
                        rho = cav.dm(rho)
                    if pflip:
                        rho = (1 - pflip) * rho + pflip * rho[::-1, ::-1]
                    if fdeph != 1.0:
                        rho[0, 1] *= fdeph
                        rho[1, 0] *= fdeph
            elif op.kind == "x":
                rho = rho[::-1, ::-1].copy()
            elif op.kind == "reset":
                rho_c = rho[0, 0] + rho[1, 1]
        return rho_c if self.idle.trivial else self.idle.dm(rho_c)

    def round_ket(self, psi_c: np.ndarray, j: int, rng: np.random.Generator) -> np.ndarray:
        psi = np.zeros((2, self.n), dtype=complex)
        psi[0] = psi_c
        for op in self.programs[j % self.period]:
            if op.kind == "rot":
                psi = op.mat @ psi
            elif op.kind == "cd":
                D = op.mat
                Dd = D.conj().T
                cav, pflip, fdeph = self.sbs_noise[op.dt]
                for _ in range(op.reps):
                    psi = np.stack([D @ psi[0], Dd @ psi[1]])
                    if not cav.trivial:
                        psi = cav.ket(psi, rng)
                    if pflip and rng.random() < pflip:
                        psi = psi[::-1].copy()
                    if fdeph != 1.0 and rng.random() < 0.5 * (1 - fdeph):
                        psi[1] *= -1
            elif op.kind == "x":
                psi = psi[::-1].copy()
            elif op.kind == "reset":
                pg = np.vdot(psi[0], psi[0]).real
                pe = np.vdot(psi[1], psi[1]).real
                pick = 0 if rng.random() < pg / (pg + pe) else 1
                psi_c = psi[pick] / np.linalg.norm(psi[pick])
        if not self.idle.trivial:
            psi_c = self.idle.ket(psi_c, rng)
        return psi_c / np.linalg.norm(psi_c)


def _check_memory(plan: SimulationPlan) -> None:
    n = plan.code.space.cavity_dim
    need = 16.0 * (2 * n) ** 2 * 6
    if plan.mode == "trajectory":
        need += 8.0 * plan.shots * len(plan.rounds)
    if need > plan.memory_cap_bytes:
        raise ResourceLimit(f"propagation needs about {need / 1e9:.2f} GB, cap is {plan.memory_cap_bytes / 1e9:.2f} GB")


def _corrected_effects(code: GkpCode, E: np.ndarray) -> list[np.ndarray]:
    """``D(c)† E D(c)`` with ``c`` the byproduct correction for each ``N mod 4``."""
    out = []
    for r in range(4):
        b = _byproduct(code.d, r)
        if b == 0:
            out.append(E)
            continue
        D = fock.displacement(code.space, -b)
        out.append(D.conj().T @ E @ D)
    return out


def run_memory_experiment(
    plan: SimulationPlan,
    basis: str | LogicalBasis,
    k: int = 0,
    *,
    measure_basis: str | LogicalBasis | None = None,
    measure_k: int | None = None,
    readout: str = "binned",
) -> LifetimeCurve:
    """Prepare ``|P_k>``, run sBs rounds and read the survival at each checkpoint.

    Args:
        plan: Simulation plan; ``plan.rounds`` lists the checkpoints.
        basis: Basis name (``"X"``, ``"sqrtwXZ"``, ``"parity"``...) or a basis object.
        k: Index of the prepared state.
        measure_basis, measure_k: Readout target, the prepared state by default.
        readout: ``"binned"`` (ideal modular-quadrature readout) or ``"overlap"``
            (projector onto the finite-energy target state).

    Returns:
        LifetimeCurve with exact probabilities (dm mode, zero error bars) or
        trajectory means with standard errors.

    Raises:
        ResourceLimit: If the state exceeds ``plan.memory_cap_bytes``.
    """
    _check_memory(plan)
    code = plan.code
    B = basis if isinstance(basis, LogicalBasis) else basis_for(code, basis)
    M = B if measure_basis is None else (measure_basis if isinstance(measure_basis, LogicalBasis) else basis_for(code, measure_basis))
    mk = k if measure_k is None else measure_k
    if readout == "binned":
        E = readout_effect(code, M, mk)
    elif readout == "overlap":
        E = np.outer(M.states[mk], M.states[mk].conj())
    else:
        raise ValueError("readout must be 'binned' or 'overlap'")
    effects = _corrected_effects(code, E)
    prog = _RoundProgram(plan)
    psi0 = B.states[k]
    checkpoints = set(plan.rounds)
    last = plan.rounds[-1]
    key = B.eigenvalue_labels[k] if B.kind == "parity" else k
    vals, errs = [], []
    if plan.mode == "dm":
        rho = np.outer(psi0, psi0.conj())
        for j in range(last + 1):
            if j in checkpoints:
                vals.append(float(np.real(np.einsum("ij,ji->", effects[j % 4], rho))))
                errs.append(0.0)
            if j < last:
                rho = prog.round_dm(rho, j)
    else:
        rng = np.random.default_rng(plan.seed)
        samples = np.zeros((plan.shots, len(plan.rounds)))
        for s in range(plan.shots):
            psi = psi0.copy()
            c = 0
            for j in range(last + 1):
                if j in checkpoints:
                    samples[s, c] = float(np.real(np.vdot(psi, effects[j % 4] @ psi)))
                    c += 1
                if j < last:
                    psi = prog.round_ket(psi, j, rng)
        vals = list(samples.mean(axis=0))
        errs = list(samples.std(axis=0, ddof=1) / math.sqrt(plan.shots)) if plan.shots > 1 else [0.0] * len(vals)
    vals = np.clip(np.array(vals), 0.0, 1.0)
    return LifetimeCurve(
        basis=B.name,
        state=key,
        rounds=np.array(plan.rounds),
        survival=vals,
        err=np.array(errs),
        round_duration=plan.timing.round_duration,
    )


# ------------------------------------------------- measurement fidelity


def _basis_names(d: int) -> list[str]:
    names = [lab.name() for lab in gkp.measurement_pauli_sets(d)]
    return names + (["parity"] if d == 4 else [])


def measurement_fidelity(code: GkpCode, basis: str, *, include_displacement: bool = False) -> float:
    """Noiseless-circuit ``(1/d) sum_k p(k | P_k)`` of a logical measurement."""
    B = basis_for(code, basis)
    total = 0.0
    for j, psi in enumerate(B.states):
        if code.d == 3:
            sched = circuits.logical_measurement(code, basis, j, include_displacement=include_displacement)
        else:
            sched = circuits.logical_measurement(code, basis, include_displacement=include_displacement)
        dist = circuits.decoded_distribution(psi, sched)
        want = B.eigenvalue_labels[j] if B.kind == "parity" else j
        total += dist.get(want, 0.0)
    return total / len(B.states)


def measurement_fidelity_sweep(
    d: int,
    deltas: Iterable[float],
    bases: Sequence[str] | None = None,
    *,
    include_displacement: bool = False,
) -> list[dict]:
    """Rows ``{"delta", "basis", "fidelity"}`` sorted by ``(delta, basis)``.

    ``delta = 0`` selects the ideal-code proxy of :func:`gkp.ideal_code`.
    """
    bases = list(bases or _basis_names(d))
    rows = []
    for delta in sorted(float(x) for x in deltas):
        if delta != 0 and not 0.2 - 1e-12 <= delta <= 0.45 + 1e-12:
            raise ValueError(f"sweep points must lie in [0.2, 0.45], got {delta}")
        code = gkp.ideal_code(d) if delta == 0 else gkp.build_code(d, delta)
        for name in sorted(bases):
            rows.append({"delta": delta, "basis": name, "fidelity": measurement_fidelity(code, name, include_displacement=include_displacement)})
    return rows


# ------------------------------------------------------------ budgets


def _representative_states(d: int) -> list[tuple[str, int]]:
    """``|P_0>`` of each basis, plus ``|+,0>`` for ``d = 4``."""
    return [(name, 0) for name in _basis_names(d)]


def _basis_rates(plan: SimulationPlan, min_round: int) -> tuple[dict, dict]:
    rates, curves = {}, {}
    for name, k in _representative_states(plan.code.d):
        curve = run_memory_experiment(plan, name, k)
        fit = curve.fit(plan.code.d, min_round=min_round)
        rates[name] = fit.gamma
        curves[name] = curve
    return rates, curves


def error_budget(
    plan: SimulationPlan,
    configs: Sequence[str] | None = None,
    *,
    min_round: int = 0,
    return_curves: bool = False,
):
    """Decay rates with each error source alone, per segment and combined.

    Only ``|P_0>`` of every basis is simulated and the rate is assigned to
    the whole basis. The excess rate subtracts the noiseless protocol's own
    logical error rate; shares are excess rates relative to ``"all"``.

    Returns:
        list of ErrorBudgetEntry in the order of ``configs`` (``"all"`` first),
        plus a dict of curves when ``return_curves``.
    """
    names = list(configs or BUDGET_CONFIGS)
    if "all" not in names:
        names = ["all"] + names
    d = plan.code.d
    base_rates, _ = _basis_rates(plan.with_(error_switches={s: False for s in ERROR_SWITCHES}), min_round)
    base = representative_rate(base_rates, d)
    results, curves = {}, {}
    for name in names:
        r, c = _basis_rates(plan.with_(error_switches=BUDGET_CONFIGS[name]), min_round)
        results[name] = r
        curves[name] = c
    all_excess = representative_rate(results["all"], d) - base
    entries = []
    for name in names:
        g = representative_rate(results[name], d)
        excess = g - base
        pct = 100.0 * excess / all_excess if all_excess > 0 else math.nan
        entries.append(ErrorBudgetEntry(error_type=name, gamma=results[name], gamma_d=g, excess=excess, percent=pct))
    entries.insert(0, ErrorBudgetEntry("none", base_rates, base, 0.0, 0.0))
    return (entries, curves) if return_curves else entries


# -------------------------------------------------------- steady state


def twirled_vacuum(code: GkpCode) -> np.ndarray:
    """Vacuum averaged over all ``d²`` logical displacements ``D((n + i m) sqrt(pi/d))``."""
    n = code.space.cavity_dim
    s = code.logical_length
    rho = np.zeros((n, n), dtype=complex)
    for a in range(code.d):
        for b in range(code.d):
            v = fock.displacement(code.space, (a + 1j * b) * s)[:, 0]
            rho += np.outer(v, v.conj())
    return rho / np.trace(rho).real


def evolve_cavity(plan: SimulationPlan, rho0: np.ndarray, checkpoints: Iterable[int]) -> dict[int, np.ndarray]:
    """Cavity density matrix after each requested number of sBs rounds."""
    if plan.mode != "dm":
        raise ValueError("evolve_cavity needs density-matrix mode")
    _check_memory(plan)
    marks = sorted(set(int(c) for c in checkpoints))
    if not marks or marks[0] < 0:
        raise ValueError("checkpoints must be non-negative")
    prog = _RoundProgram(plan)
    rho = np.array(rho0, dtype=complex)
    out = {}
    for j in range(marks[-1] + 1):
        if j in marks:
            out[j] = rho / np.trace(rho).real
        if j < marks[-1]:
            rho = prog.round_dm(rho, j)
    return out


def steady_state_rho(plan: SimulationPlan, rounds: int = 300, *, twirl: bool = True, tol: float = 1e-3) -> np.ndarray:
    """Cavity state after ``rounds`` sBs rounds starting from vacuum.

    With ``twirl`` (default) the vacuum is first averaged over logical
    displacements, which yields the maximally mixed code state without
    relying on noise to scramble the logical information. Without it the
    noiseless protocol keeps whatever logical state the vacuum maps to.
    Convergence compares with the state four rounds earlier (one full frame
    cycle) in trace distance.

    Raises:
        NotConverged: If that trace distance exceeds ``tol``.
    """
    if rounds < 100:
        raise ValueError("rounds must be >= 100")
    if plan.mode != "dm":
        raise ValueError("steady_state_rho needs density-matrix mode")
    _check_memory(plan)
    code = plan.code
    prog = _RoundProgram(plan)
    n = code.space.cavity_dim
    rho = twirled_vacuum(code) if twirl else np.outer(fock.fock_ket(n, 0), fock.fock_ket(n, 0))
    prev = None
    for j in range(rounds):
        if j == rounds - 4:
            prev = rho
        rho = prog.round_dm(rho, j)
    rho = 0.5 * (rho + rho.conj().T)
    dist = 0.5 * float(np.sum(np.abs(np.linalg.eigvalsh(rho - prev))))
    if dist > tol:
        raise NotConverged(f"trace distance {dist:.2e} between the last frame cycles exceeds {tol:g}")
    return rho / np.trace(rho).real
