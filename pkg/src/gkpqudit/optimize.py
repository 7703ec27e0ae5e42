"""Numerical optimization of ECD state-preparation circuits and sBs amplitudes.

A depth-``K`` circuit is ``ECD(beta_K) R(phi_K, theta_K) ... ECD(beta_1) R(phi_1, theta_1)``
acting on ``|g>|0>``. The default engine is L-BFGS-B with exact gradients
from a hand-written adjoint pass; Nelder-Mead and Powell are available as
derivative-free engines.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import minimize

from . import circuits, fock
from .circuits import CircuitSchedule, CircuitStep, rotation_unitary
from .errors import BudgetExhausted, TruncationWarning
from .fock import HilbertSpace
from .gkp import GkpCode
from .tomography import displacement_elements

__all__ = [
    "BETA_MAX",
    "EcdCircuitParams",
    "OptimizationReport",
    "ecd_circuit_unitary",
    "ecd_circuit_state",
    "prep_fidelity",
    "prep_fidelity_and_grad",
    "optimize_prep",
    "reward_objective",
    "tune_sbs",
]

BETA_MAX = 5.0
_PAD = 30


@dataclass(frozen=True)
class EcdCircuitParams:
    """Amplitudes and angles of a depth-``K`` ECD circuit (layer ``k`` acts ``k``-th)."""

    betas: np.ndarray
    phis: np.ndarray
    thetas: np.ndarray
    beta_max: float = BETA_MAX

    def __post_init__(self):
        b = np.asarray(self.betas, dtype=complex).ravel()
        p = np.asarray(self.phis, dtype=float).ravel()
        t = np.asarray(self.thetas, dtype=float).ravel()
        if not (b.size == p.size == t.size):
            raise ValueError("betas, phis and thetas must have equal length")
        if np.any(np.abs(b) > self.beta_max + 1e-9):
            raise ValueError(f"|beta| exceeds beta_max = {self.beta_max}")
        object.__setattr__(self, "betas", b)
        object.__setattr__(self, "phis", np.mod(p, 2 * np.pi))
        object.__setattr__(self, "thetas", np.mod(t + 2 * np.pi, 4 * np.pi) - 2 * np.pi)

    @property
    def depth(self) -> int:
        return int(self.betas.size)

    @classmethod
    def identity(cls, depth: int = 0) -> "EcdCircuitParams":
        """Depth-``K`` circuit with all parameters 0 (an even number of ancilla flips)."""
        z = np.zeros(depth)
        return cls(z + 0j, z, z)

    @classmethod
    def random(cls, depth: int, rng: np.random.Generator, beta_max: float = BETA_MAX) -> "EcdCircuitParams":
        """``beta`` parts from N(0, 1), clipped to ``beta_max``; angles uniform."""
        b = rng.normal(size=depth) + 1j * rng.normal(size=depth)
        b = np.where(np.abs(b) > beta_max, b / np.abs(b) * beta_max * 0.999, b)
        return cls(b, rng.uniform(0, 2 * np.pi, depth), rng.uniform(0, 2 * np.pi, depth), beta_max)

    # optimizer vector: [Re beta, Im beta, phi, theta]
    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.betas.real, self.betas.imag, self.phis, self.thetas])

    @classmethod
    def from_vector(cls, x: np.ndarray, beta_max: float = BETA_MAX) -> "EcdCircuitParams":
        K = len(x) // 4
        b = x[:K] + 1j * x[K : 2 * K]
        b = np.where(np.abs(b) > beta_max, b / np.maximum(np.abs(b), 1e-300) * beta_max, b)
        return cls(b, x[2 * K : 3 * K], x[3 * K :], beta_max)

    def to_json_dict(self) -> dict:
        return {
            "depth": self.depth,
            "betas": [[float(b.real), float(b.imag)] for b in self.betas],
            "phis": [float(v) for v in self.phis],
            "thetas": [float(v) for v in self.thetas],
            "beta_max": self.beta_max,
        }

    @classmethod
    def from_json_dict(cls, data: dict) -> "EcdCircuitParams":
        b = np.array([complex(r, i) for r, i in data["betas"]])
        if len(b) != int(data.get("depth", len(b))):
            raise ValueError("depth does not match the number of betas")
        return cls(b, np.array(data["phis"], float), np.array(data["thetas"], float), float(data.get("beta_max", BETA_MAX)))

    def to_schedule(self, space: HilbertSpace) -> CircuitSchedule:
        """The same circuit as ``circuits`` steps."""
        steps = []
        for b, p, t in zip(self.betas, self.phis, self.thetas):
            steps.append(CircuitStep("rotate", phi=float(p), theta=float(t), segment="prep"))
            steps.append(CircuitStep("ecd", beta=complex(b), segment="prep"))
        return CircuitSchedule(tuple(steps), space, name=f"ecd-prep K={self.depth}")


@dataclass
class OptimizationReport:
    """Outcome of :func:`optimize_prep`.

    ``trace`` is the best fidelity seen after each objective evaluation,
    concatenated over restarts.
    """

    params: EcdCircuitParams
    fidelity: float
    trace: list = field(default_factory=list)
    restarts_used: int = 0
    evaluations: int = 0
    exhausted: bool = False
    method: str = "lbfgs"
    seed: int = 0

    def to_json_dict(self) -> dict:
        return {
            "params": self.params.to_json_dict(),
            "fidelity": self.fidelity,
            "restarts_used": self.restarts_used,
            "evaluations": self.evaluations,
            "exhausted": self.exhausted,
            "method": self.method,
            "seed": self.seed,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), indent=2, sort_keys=True)


# ----------------------------------------------------------- evaluation


def ecd_circuit_unitary(space: HilbertSpace | int, params: EcdCircuitParams) -> np.ndarray:
    """Composite unitary on ancilla ⊗ cavity in the printed order.

    Warns with :class:`TruncationWarning` when the circuit drives vacuum into
    the top 10 Fock levels.
    """
    space = space if isinstance(space, HilbertSpace) else HilbertSpace(int(space))
    U = np.eye(space.total_dim, dtype=complex)
    for b, p, t in zip(params.betas, params.phis, params.thetas):
        U = fock.embed(rotation_unitary(p, t), "ancilla", space) @ U
        U = circuits.ecd_unitary(space, complex(b)) @ U
    if params.depth:
        col = U[:, 0].reshape(2, space.cavity_dim)
        tail = float(np.sum(np.abs(col[:, -10:]) ** 2))
        if tail > 1e-6:
            warnings.warn(f"circuit puts weight {tail:.1e} in the top 10 Fock levels", TruncationWarning, stacklevel=2)
    return U


def _layers(params: EcdCircuitParams, n: int):
    Dp = displacement_elements(params.betas / 2, n) if params.depth else np.zeros((0, n, n))
    Dm = np.conj(np.transpose(Dp, (0, 2, 1)))
    return Dp, Dm


def ecd_circuit_state(params: EcdCircuitParams, n: int) -> np.ndarray:
    """``U|g>|0>`` as a ``(2, n)`` array using exact displacement matrix elements."""
    Dp, Dm = _layers(params, n)
    psi = np.zeros((2, n), dtype=complex)
    psi[0, 0] = 1.0
    for k in range(params.depth):
        r = rotation_unitary(params.phis[k], params.thetas[k]) @ psi
        # ECD(beta): |g> -> D(beta/2)|e>, |e> -> D(−beta/2)|g>
        psi = np.stack([Dm[k] @ r[1], Dp[k] @ r[0]])
    return psi


def _padded(target: np.ndarray, n: int) -> np.ndarray:
    t = np.zeros(n, dtype=complex)
    t[: target.size] = target
    return t / np.linalg.norm(t)


def prep_fidelity(params: EcdCircuitParams, target: np.ndarray, work_dim: int | None = None) -> float:
    """``|<g|<psi| U |g>|0>|²`` for a normalized cavity target."""
    target = np.asarray(target, dtype=complex)
    n = work_dim or target.size + _PAD
    psi = ecd_circuit_state(params, n)
    return float(abs(np.vdot(_padded(target, n), psi[0])) ** 2)


_SX = fock.SIGMA_X
_SY = fock.SIGMA_Y


def _rot_derivs(phi: float, theta: float):
    axis = math.cos(phi) * _SX + math.sin(phi) * _SY
    daxis = -math.sin(phi) * _SX + math.cos(phi) * _SY
    d_phi = 1j * math.sin(theta / 2) * daxis
    d_theta = -0.5 * math.sin(theta / 2) * np.eye(2) + 0.5j * math.cos(theta / 2) * axis
    return d_phi, d_theta


def prep_fidelity_and_grad(x: np.ndarray, target: np.ndarray, n: int) -> tuple[float, np.ndarray]:
    """Fidelity and its gradient in the vector layout of :meth:`EcdCircuitParams.to_vector`.

    Forward states are stored, then the co-state ``chi`` is propagated back.
    Derivatives of ``D(alpha)`` use
    ``dD/dRe(alpha) = (a† − a + i Im alpha) D`` and
    ``dD/dIm(alpha) = (i(a† + a) − i Re alpha) D``, exact away from the cutoff.
    """
    K = len(x) // 4
    b = x[:K] + 1j * x[K : 2 * K]
    phi, th = x[2 * K : 3 * K], x[3 * K :]
    Dp = displacement_elements(b / 2, n)
    Dm = np.conj(np.transpose(Dp, (0, 2, 1)))
    a = fock.annihilation(n)
    Gr = a.conj().T - a
    Gi = 1j * (a.conj().T + a)
    states = []
    psi = np.zeros((2, n), dtype=complex)
    psi[0, 0] = 1.0
    for k in range(K):
        states.append(psi)
        r = rotation_unitary(phi[k], th[k]) @ psi
        psi = np.stack([Dm[k] @ r[1], Dp[k] @ r[0]])
    tgt = _padded(target, n)
    c = np.vdot(tgt, psi[0])
    grad = np.zeros(4 * K)
    chi = np.zeros((2, n), dtype=complex)
    chi[0] = tgt
    for k in reversed(range(K)):
        R = rotation_unitary(phi[k], th[k])
        r = R @ states[k]
        al = b[k] / 2
        up = Dp[k] @ r[0]
        dn = Dm[k] @ r[1]

        def overlap(v):
            return 2.0 * float(np.real(np.conj(c) * np.vdot(chi, v)))

        # chain rule: d/dRe(beta) = (1/2) d/dRe(alpha)
        grad[k] = overlap(np.stack([-0.5 * (Gr @ dn - 1j * al.imag * dn), 0.5 * (Gr @ up + 1j * al.imag * up)]))
        grad[K + k] = overlap(np.stack([-0.5 * (Gi @ dn + 1j * al.real * dn), 0.5 * (Gi @ up - 1j * al.real * up)]))
        d_phi, d_theta = _rot_derivs(phi[k], th[k])
        for idx, dR in ((2 * K + k, d_phi), (3 * K + k, d_theta)):
            rr = dR @ states[k]
            grad[idx] = overlap(np.stack([Dm[k] @ rr[1], Dp[k] @ rr[0]]))
        chi = R.conj().T @ np.stack([Dp[k].conj().T @ chi[1], Dm[k].conj().T @ chi[0]])
    return float(abs(c) ** 2), grad


# ------------------------------------------------------------ optimizer


class _Budget(Exception):
    pass


def optimize_prep(
    target: np.ndarray,
    K: int = 8,
    restarts: int = 10,
    seed: int = 0,
    budget: int = 2000,
    *,
    method: str = "lbfgs",
    target_fidelity: float | None = None,
    beta_max: float = BETA_MAX,
    work_dim: int | None = None,
    raise_on_exhaust: bool = False,
) -> OptimizationReport:
    """Multi-start maximization of :func:`prep_fidelity`.

    Args:
        target: Normalized cavity ket.
        K: Circuit depth.
        restarts: Maximum number of random starts.
        seed: Determines every start (restart ``r`` uses the ``r``-th spawned stream).
        budget: Objective evaluations per restart, at least 1000.
        method: ``"lbfgs"`` (adjoint gradients), ``"nelder-mead"`` or ``"powell"``.
        target_fidelity: Stop at the first restart that reaches it.
        beta_max: Bound on every ``|beta|``, enforced by a quadratic penalty
            during the search and by projection at the end.
        raise_on_exhaust: Raise instead of flagging when ``target_fidelity`` is missed.

    Raises:
        BudgetExhausted: Only with ``raise_on_exhaust``; ``err.report`` carries the best result.
    """
    if budget < 1000:
        raise ValueError("budget must be >= 1000 evaluations")
    if method not in ("lbfgs", "nelder-mead", "powell"):
        raise ValueError(f"unknown method {method!r}")
    target = np.asarray(target, dtype=complex)
    target = target / np.linalg.norm(target)
    n = work_dim or target.size + _PAD
    streams = np.random.SeedSequence(seed).spawn(restarts)
    best_f, best_x = -1.0, None
    trace: list[float] = []
    evaluations = 0
    used = 0

    def penalty(x):
        mag = np.hypot(x[:K], x[K : 2 * K])
        over = np.maximum(mag - beta_max, 0.0)
        g = np.zeros_like(x)
        scale = np.where(mag > 0, 2 * over / np.maximum(mag, 1e-300), 0.0)
        g[:K] = scale * x[:K]
        g[K : 2 * K] = scale * x[K : 2 * K]
        return float(np.sum(over**2)), g

    if K == 0:
        f0 = prep_fidelity(EcdCircuitParams.identity(0), target, n)
        return OptimizationReport(EcdCircuitParams.identity(0), f0, [f0], 0, 1, bool(target_fidelity and f0 < target_fidelity), method, seed)

    for r in range(restarts):
        used = r + 1
        rng = np.random.default_rng(streams[r])
        x0 = EcdCircuitParams.random(K, rng, beta_max).to_vector()
        count = [0]

        def record(f, x):
            nonlocal best_f, best_x
            count[0] += 1
            mag = np.hypot(x[:K], x[K : 2 * K])
            if f > best_f and np.all(mag <= beta_max):
                best_f, best_x = f, x.copy()
            trace.append(max(best_f, 0.0))
            if count[0] >= budget:
                raise _Budget

        try:
            if method == "lbfgs":

                def fun(x):
                    f, g = prep_fidelity_and_grad(x, target, n)
                    record(f, x)
                    p, gp = penalty(x)
                    return -f + 10.0 * p, -g + 10.0 * gp

                minimize(fun, x0, jac=True, method="L-BFGS-B", options={"maxfun": budget + 1, "maxiter": budget + 1})
            else:

                def fun(x):
                    f = prep_fidelity(EcdCircuitParams.from_vector(x, beta_max), target, n)
                    record(f, x)
                    return -f + 10.0 * penalty(x)[0]

                opts = {"maxfev": budget + 1}
                if method == "nelder-mead":
                    opts["adaptive"] = True
                minimize(fun, x0, method="Nelder-Mead" if method == "nelder-mead" else "Powell", options=opts)
        except _Budget:
            pass
        evaluations += count[0]
        if target_fidelity is not None and best_f >= target_fidelity:
            break
    params = EcdCircuitParams.from_vector(best_x, beta_max)
    final = prep_fidelity(params, target, n)
    exhausted = target_fidelity is not None and final < target_fidelity
    report = OptimizationReport(params, final, trace, used, evaluations, exhausted, method, seed)
    if exhausted and raise_on_exhaust:
        err = BudgetExhausted(f"best fidelity {final:.4f} below {target_fidelity} after {used} restarts")
        err.report = report
        raise err
    return report


# -------------------------------------------------------------- sBs tuner


def reward_objective(
    sbs: dict | circuits.SbsParams | None,
    code: GkpCode,
    n_rounds: int = 80,
    *,
    noise=None,
    plan_kw: dict | None = None,
) -> float:
    """``R = (1/2)[<Z_0|E^N(|Z_0><Z_0|)|Z_0> + <X_1|E^N(|X_1><X_1|)|X_1>]``.

    Args:
        sbs: ``{"small": ..., "big": ...}`` overrides of the nominal amplitudes
            (or a full :class:`circuits.SbsParams`); ``None`` keeps the nominal values.
        code: The code whose states are prepared.
        n_rounds: Number of sBs rounds ``N``.
        noise: NoiseModel; noiseless by default.
    """
    from . import simulate
    from .channels import NoiseModel

    nominal = circuits.sbs_params(code.d, code.delta)
    if sbs is None:
        params = nominal
    elif isinstance(sbs, circuits.SbsParams):
        params = sbs
    else:
        unknown = set(sbs) - {"small", "big"}
        if unknown:
            raise ValueError(f"unknown sBs parameters {sorted(unknown)}")
        params = circuits.SbsParams(code.d, code.delta, float(sbs.get("small", nominal.small)), float(sbs.get("big", nominal.big)))
    plan = simulate.SimulationPlan(
        code,
        rounds=(int(n_rounds),),
        noise=noise if noise is not None else NoiseModel(),
        sbs=params,
        **(plan_kw or {}),
    )
    z = simulate.run_memory_experiment(plan, "Z", 0, readout="overlap")
    x = simulate.run_memory_experiment(plan, "X", 1, readout="overlap")
    return 0.5 * float(z.survival[-1] + x.survival[-1])


def tune_sbs(
    code: GkpCode,
    n_rounds: int = 80,
    budget: int = 60,
    *,
    noise=None,
    plan_kw: dict | None = None,
) -> tuple[dict, float, list]:
    """Local Nelder-Mead search over ``(small, big)`` starting at the nominal values.

    Returns ``(best_params, best_reward, trace)``; deterministic.
    """
    nominal = circuits.sbs_params(code.d, code.delta)
    trace = []

    def fun(x):
        small, big = float(x[0]), float(x[1])
        if not 0 <= small < big:
            return 1.0
        r = reward_objective({"small": small, "big": big}, code, n_rounds, noise=noise, plan_kw=plan_kw)
        trace.append(r)
        return -r

    x0 = np.array([nominal.small, nominal.big])
    res = minimize(fun, x0, method="Nelder-Mead", options={"maxfev": budget, "initial_simplex": [x0, x0 * [1.2, 1.0], x0 * [1.0, 1.02]]})
    small, big = res.x
    return {"small": float(small), "big": float(big)}, float(-res.fun), trace
