"""Quantum channels, average channel fidelity and decay-rate bookkeeping.

Conventions: rates are in 1/µs and times in µs. Logical operators are
``d x d`` matrices in the ``|Z_j>`` basis.
"""

from __future__ import annotations

import csv
import io
import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np
from scipy.optimize import curve_fit

from . import fock
from .errors import (
    BasisNotOrthogonal,
    FitDiverged,
    IncompleteTable,
    NonlinearRegime,
    StepTooLarge,
    UnsupportedDimension,
)
from .gkp import PARITY_LABELS, PauliLabel, _eigen_tables, _logical_eigenvectors, logical_pauli_matrix, measurement_pauli_sets

__all__ = [
    "KrausChannel",
    "NoiseModel",
    "DEVICE",
    "NOISE_PRESETS",
    "noise_preset",
    "DecayFit",
    "cavity_idle_kraus",
    "truncated_cavity_channel",
    "depolarizing_channel",
    "weyl_basis",
    "average_channel_fidelity",
    "entanglement_fidelity",
    "survival_table",
    "decomposed_fidelity",
    "effective_rate_from_decays",
    "fock_qudit_rate",
    "short_time_rate",
    "qec_gain",
    "fit_exponential",
    "read_gamma_csv",
    "write_gamma_csv",
    "MEASURED_GAMMA_INV_US",
]

Channel = Callable[[np.ndarray], np.ndarray]


# ------------------------------------------------------------------ types


class KrausChannel:
    """``rho -> sum_k K_k rho K_k†`` with completeness checked on construction.

    Args:
        kraus_ops: Square matrices of equal shape.
        dt: Optional duration tag in µs.
        tol: Allowed deviation of ``sum K†K`` from the identity.
    """

    def __init__(self, kraus_ops: Sequence[np.ndarray], dt: float | None = None, tol: float = 1e-6):
        ops = [np.asarray(K, dtype=complex) for K in kraus_ops]
        if not ops:
            raise ValueError("a channel needs at least one Kraus operator")
        shape = ops[0].shape
        if any(K.shape != shape for K in ops) or shape[0] != shape[1]:
            raise ValueError("Kraus operators must be square and of equal shape")
        self.kraus_ops = ops
        self.dt = dt
        self.defect = float(np.max(np.abs(self.completeness() - np.eye(shape[0]))))
        if self.defect > tol:
            raise ValueError(f"Kraus completeness violated by {self.defect:.2e} (tol {tol:g})")

    @property
    def dim(self) -> int:
        return self.kraus_ops[0].shape[0]

    def completeness(self) -> np.ndarray:
        return sum(K.conj().T @ K for K in self.kraus_ops)

    def __call__(self, rho: np.ndarray) -> np.ndarray:
        return sum(K @ rho @ K.conj().T for K in self.kraus_ops)

    apply = __call__

    def then(self, other: "KrausChannel") -> "KrausChannel":
        """Channel ``other ∘ self``."""
        ops = [B @ A for A in self.kraus_ops for B in other.kraus_ops]
        dt = None if self.dt is None or other.dt is None else self.dt + other.dt
        return KrausChannel(ops, dt=dt, tol=max(self.defect, other.defect) * 4 + 1e-6)

    def restricted(self, d: int) -> "KrausChannel":
        """Truncate every Kraus operator to the first ``d`` levels (completeness not enforced)."""
        return KrausChannel([K[:d, :d] for K in self.kraus_ops], dt=self.dt, tol=np.inf)


@dataclass(frozen=True)
class NoiseModel:
    """Error rates of the cavity and ancilla.

    Attributes:
        kappa_1c: Cavity photon loss (1/µs).
        kappa_phi_c: Cavity dephasing (1/µs).
        kappa_1q: Ancilla bit-flip rate, heating plus decay (1/µs).
        kappa_phi_q: Ancilla pure dephasing (1/µs).
        n_th: Ancilla thermal population.
        chi: Dispersive shift (rad/µs).
        kerr: Cavity self-Kerr (rad/µs), off by default.
        chi_prime: Second-order dispersive shift (rad/µs), off by default.
    """

    kappa_1c: float = 0.0
    kappa_phi_c: float = 0.0
    kappa_1q: float = 0.0
    kappa_phi_q: float = 0.0
    n_th: float = 0.0
    chi: float = 2 * math.pi * 0.0418
    kerr: float = 0.0
    chi_prime: float = 0.0

    def __post_init__(self):
        for name in ("kappa_1c", "kappa_phi_c", "kappa_1q", "kappa_phi_q"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if not 0.0 <= self.n_th <= 1.0:
            raise ValueError("n_th must lie in [0, 1]")

    def with_(self, **kw) -> "NoiseModel":
        return replace(self, **kw)

    def to_dict(self) -> dict:
        return {k: float(v) for k, v in self.__dict__.items()}


# Measured device parameters (times in µs, chi in rad/µs).
DEVICE = {
    "T1c": 631.0,
    "T2Rc": 1030.0,
    "T1q": 295.0,
    "T2Eq": 286.0,
    "n_th": 0.022,
    "chi": 2 * math.pi * 0.0418,
}


def _device_model(p: Mapping[str, float]) -> NoiseModel:
    # error-budget model: cavity dephasing comes from ancilla thermal
    # fluctuations, ancilla dephasing from the echo time
    return NoiseModel(
        kappa_1c=1 / p["T1c"],
        kappa_phi_c=p["n_th"] / p["T1q"],
        kappa_1q=1 / p["T1q"],
        kappa_phi_q=1 / p["T2Eq"] - 1 / (2 * p["T1q"]),
        n_th=p["n_th"],
        chi=p["chi"],
    )


def fock_baseline_rates(p: Mapping[str, float] = DEVICE) -> tuple[float, float]:
    """``(kappa_1c, kappa_phi_c)`` of the bare cavity from ``T1`` and Ramsey ``T2``."""
    return 1 / p["T1c"], 1 / p["T2Rc"] - 1 / (2 * p["T1c"])


NOISE_PRESETS: dict[str, NoiseModel] = {
    "paper-device": _device_model(DEVICE),
    "noiseless": NoiseModel(),
}


def noise_preset(name: str) -> NoiseModel:
    try:
        return NOISE_PRESETS[name]
    except KeyError:
        raise KeyError(f"unknown noise preset {name!r}; choose from {sorted(NOISE_PRESETS)}") from None


@dataclass(frozen=True)
class DecayFit:
    """Result of ``p(t) = A exp(−gamma t) + offset``.

    ``degenerate`` flags curves without measurable decay (``gamma`` then 0).
    """

    gamma: float
    amplitude: float
    offset: float
    covariance: np.ndarray = field(repr=False)
    degenerate: bool = False
    offset_fixed: bool = True

    @property
    def gamma_err(self) -> float:
        return float(math.sqrt(max(self.covariance[0, 0], 0.0)))

    @property
    def lifetime(self) -> float:
        return math.inf if self.gamma <= 0 else 1.0 / self.gamma


# --------------------------------------------------------------- channels


def cavity_idle_kraus(model: NoiseModel | tuple[float, float], dt: float, space=None) -> KrausChannel:
    """Loss and dephasing Kraus operators for a step ``dt``.

    ``K0 = I − (k1 dt/2) n − kphi dt n²``, ``K1 = sqrt(k1 dt) a``,
    ``K2 = sqrt(2 kphi dt) n``. Completeness holds to first order; the
    residual ``(k1 dt n/2 + kphi dt n²)²`` is what the construction check allows.

    Raises:
        StepTooLarge: If ``k dt`` exceeds 0.5; a warning is issued above 0.05.
    """
    k1, kphi = (model.kappa_1c, model.kappa_phi_c) if isinstance(model, NoiseModel) else model
    if dt < 0:
        raise ValueError("dt must be >= 0")
    worst = max(k1, kphi) * dt
    if worst > 0.5:
        raise StepTooLarge(f"rate*dt = {worst:.3g} is far outside the first-order regime")
    if worst > 0.05:
        warnings.warn(f"rate*dt = {worst:.3g} > 0.05; first-order Kraus step is inaccurate", stacklevel=2)
    space = 2 if space is None else space
    a = fock.annihilation(space)
    nvec = np.arange(a.shape[0], dtype=float)
    K0 = np.diag(1 - 0.5 * k1 * dt * nvec - kphi * dt * nvec**2).astype(complex)
    ops = [K0]
    if k1 > 0:
        ops.append(math.sqrt(k1 * dt) * a)
    if kphi > 0:
        ops.append(math.sqrt(2 * kphi * dt) * np.diag(nvec).astype(complex))
    bound = float(np.max((0.5 * k1 * dt * nvec + kphi * dt * nvec**2) ** 2))
    return KrausChannel(ops, dt=dt, tol=max(1e-6, 1.01 * bound + 1e-12))


def truncated_cavity_channel(d: int, k1: float, kphi: float) -> Callable[[float], KrausChannel]:
    """Family ``dt -> E_c(dt)`` restricted to the Fock qudit ``|0>..|d−1>``."""

    def family(dt: float) -> KrausChannel:
        return cavity_idle_kraus((k1, kphi), dt, space=max(d, 2)).restricted(d)

    return family


def depolarizing_channel(d: int, gamma: float, t: float) -> Channel:
    """``rho -> e^{−gamma t} rho + (1 − e^{−gamma t}) Tr[rho] I/d``."""
    if gamma < 0 or t < 0:
        raise ValueError("gamma and t must be >= 0")
    keep = math.exp(-gamma * t)
    eye = np.eye(d, dtype=complex) / d

    def channel(rho):
        rho = np.asarray(rho, dtype=complex)
        return keep * rho + (1 - keep) * np.trace(rho) * eye

    return channel


def weyl_basis(d: int) -> list[np.ndarray]:
    """``X^n Z^m`` for ``n, m = 0..d−1``."""
    return [logical_pauli_matrix(d, PauliLabel(n, m)) if d > 1 else np.eye(1, dtype=complex) for n in range(d) for m in range(d)]


def average_channel_fidelity(channel: Channel, d: int, basis_ops: Sequence[np.ndarray] | None = None) -> float:
    """``F = 1/(d+1) + (1/(d²(d+1))) sum Tr[U† E(U)]`` over a unitary operator basis.

    Raises:
        BasisNotOrthogonal: If ``Tr[U_i† U_j] != d delta_ij`` or the basis size is not ``d²``.
    """
    ops = weyl_basis(d) if basis_ops is None else [np.asarray(U, dtype=complex) for U in basis_ops]
    if len(ops) != d * d:
        raise BasisNotOrthogonal(f"need {d * d} basis operators, got {len(ops)}")
    stack = np.array(ops)
    gram = np.einsum("aji,bjk->abik", stack.conj(), stack).trace(axis1=2, axis2=3)
    if np.max(np.abs(gram - d * np.eye(len(ops)))) > 1e-8:
        raise BasisNotOrthogonal("basis operators are not trace-orthogonal with norm d")
    total = sum(np.trace(U.conj().T @ channel(U)) for U in ops)
    return float(np.real(1 / (d + 1) + total / (d * d * (d + 1))))


def entanglement_fidelity(channel: Channel, d: int) -> float:
    """``<Phi| (E ⊗ I)(|Phi><Phi|) |Phi>`` from the Choi matrix, built column by column."""
    choi = np.zeros((d * d, d * d), dtype=complex)
    for i in range(d):
        for j in range(d):
            Eij = np.zeros((d, d), dtype=complex)
            Eij[i, j] = 1.0
            choi += np.kron(channel(Eij), Eij)
    phi = np.eye(d).reshape(-1) / math.sqrt(d)
    # sum_ij E(|i><j|) ⊗ |i><j| is d times the Choi state
    return float(np.real(phi @ choi @ phi)) / d


# ---------------------------------------------------- decomposed fidelity


def _basis_vectors(d: int, label: PauliLabel) -> np.ndarray:
    table = _eigen_tables(d)
    if label.n % d == 0 and label.m % d == 1 and not label.sqrt_omega:
        return np.eye(d, dtype=complex)
    v = table.get(PauliLabel(label.n % d, label.m % d, label.sqrt_omega))
    if v is None:
        v = _logical_eigenvectors(d, label)
    v = np.asarray(v, dtype=complex)
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def _parity_vectors() -> np.ndarray:
    from .gkp import _PARITY_COEFFS

    return _PARITY_COEFFS / math.sqrt(2)


def survival_table(channel: Channel, d: int) -> dict:
    """``<P_k| E(|P_k><P_k|) |P_k>`` for every basis entering the decomposition.

    Keys are ``(basis_name, k)``; ququart parity states use ``("parity", (s, m))``.
    """
    out = {}
    for label in measurement_pauli_sets(d):
        for k, v in enumerate(_basis_vectors(d, label)):
            rho = np.outer(v, v.conj())
            out[(label.name(), k)] = float(np.real(v.conj() @ channel(rho) @ v))
    if d == 4:
        for lab, v in zip(PARITY_LABELS, _parity_vectors()):
            rho = np.outer(v, v.conj())
            out[("parity", lab)] = float(np.real(v.conj() @ channel(rho) @ v))
    return out


def _required_keys(d: int) -> list:
    keys = [(lab.name(), k) for lab in measurement_pauli_sets(d) for k in range(d)]
    if d == 4:
        keys += [("parity", lab) for lab in PARITY_LABELS]
    return keys


def _check_table(table: Mapping, d: int) -> None:
    if d not in (2, 3, 4):
        raise UnsupportedDimension(f"decompositions exist for d = 2, 3, 4, got {d}")
    missing = [k for k in _required_keys(d) if k not in table]
    if missing:
        raise IncompleteTable(f"missing entries {missing[:4]}{'...' if len(missing) > 4 else ''}")


_NORMS = {2: 6.0, 3: 12.0, 4: 20.0}


def decomposed_fidelity(survival: Mapping, d: int) -> float:
    """Average channel fidelity from eigenstate survival probabilities.

    ``F_2 = (1/6) sum``, ``F_3 = (1/12) sum`` and
    ``F_4 = (1/20)[sum_Pauli − sum_parity]``; valid for unital channels.

    Raises:
        IncompleteTable: If any required ``(basis, k)`` entry is absent.
    """
    _check_table(survival, d)
    pauli = sum(survival[key] for key in _required_keys(d) if key[0] != "parity")
    parity = sum(survival[key] for key in _required_keys(d) if key[0] == "parity")
    return float((pauli - parity) / _NORMS[d])


def effective_rate_from_decays(gammas: Mapping, d: int) -> float:
    """``Gamma_d`` from per-state decay rates with the same weights as :func:`decomposed_fidelity`."""
    _check_table(gammas, d)
    pauli = sum(gammas[key] for key in _required_keys(d) if key[0] != "parity")
    parity = sum(gammas[key] for key in _required_keys(d) if key[0] == "parity")
    return float((pauli - parity) / _NORMS[d])


def representative_rate(gammas_by_basis: Mapping[str, float], d: int) -> float:
    """``Gamma_d`` when only ``|P_0>`` of each basis (and ``|+,0>``) is simulated.

    Every state of a basis is assigned the rate of its first state, so
    ``Gamma_2,3`` is the mean over bases and ``Gamma_4 = (1/5)[sum − gamma_{+,0}]``.
    """
    table = {}
    for lab in measurement_pauli_sets(d):
        for k in range(d):
            table[(lab.name(), k)] = gammas_by_basis[lab.name()]
    if d == 4:
        for lab in PARITY_LABELS:
            table[("parity", lab)] = gammas_by_basis["parity"]
    return effective_rate_from_decays(table, d)


_FOCK_PREFACTORS = {2: (2 / 3, 2 / 3), 3: (9 / 8, 3 / 2), 4: (8 / 5, 8 / 3)}


def fock_qudit_rate(d: int, kappa_1c: float, kappa_phi_c: float) -> float:
    """Closed-form short-time rate of the cavity Fock qudit ``|0>..|d−1>``."""
    if d not in _FOCK_PREFACTORS:
        raise UnsupportedDimension(f"Fock baseline is tabulated for d = 2, 3, 4, got {d}")
    a, b = _FOCK_PREFACTORS[d]
    return a * kappa_1c + b * kappa_phi_c


_RICHARDSON_DT_US = (0.010, 0.005, 0.0025, 0.00125)


def short_time_rate(
    family: Callable[[float], Channel],
    d: int,
    dts: Sequence[float] = _RICHARDSON_DT_US,
    basis_ops: Sequence[np.ndarray] | None = None,
    curvature_limit: float = 0.1,
) -> float:
    """Effective depolarization rate from ``F ≈ 1 − ((d−1)/d) Gamma dt``.

    Finite-difference slopes on a halving ``dt`` grid are Richardson
    extrapolated to ``dt -> 0``.

    Raises:
        NonlinearRegime: If the slope changes by more than ``curvature_limit``
            (relative) across the grid, i.e. quadratic terms dominate.
    """
    dts = sorted(dts, reverse=True)
    slopes = []
    for dt in dts:
        f = average_channel_fidelity(family(dt), d, basis_ops)
        slopes.append((1 - f) * d / ((d - 1) * dt))
    slopes = np.array(slopes)
    if slopes[0] == 0 and np.all(slopes == 0):
        return 0.0
    spread = abs(slopes[0] - slopes[-1]) / max(abs(slopes[-1]), 1e-300)
    if spread > curvature_limit:
        raise NonlinearRegime(f"slope varies by {spread:.2%} across dt grid")
    # Richardson table for a halving grid with O(dt) leading error
    table = list(slopes)
    for order in range(1, len(table)):
        fac = 2.0**order
        table = [(fac * table[i + 1] - table[i]) / (fac - 1) for i in range(len(table) - 1)]
    return float(table[0])


def qec_gain(gamma_physical: float, gamma_logical: float) -> float:
    """``G = Gamma_physical / Gamma_logical``."""
    if gamma_physical <= 0 or gamma_logical <= 0:
        raise ValueError("rates must be positive")
    return gamma_physical / gamma_logical


# ------------------------------------------------------------------ fits


def fit_exponential(times, probs, d: int, *, sigma=None, free_offset: bool = False) -> DecayFit:
    """Least-squares fit of ``A exp(−gamma t) + 1/d``.

    Args:
        times: Sample times (or round counts) with at least 5 points.
        probs: Survival probabilities.
        d: Qudit dimension fixing the offset.
        sigma: Optional per-point standard errors.
        free_offset: Fit the offset as a third parameter (diagnostic).

    Raises:
        FitDiverged: With fewer than 5 points or when the optimizer fails.
    """
    t = np.asarray(times, dtype=float)
    p = np.asarray(probs, dtype=float)
    if t.size < 5 or t.size != p.size:
        raise FitDiverged("need at least 5 matching points")
    off = 1.0 / d
    amp0 = p[0] - off
    if np.max(np.abs(p - off)) < 1e-12 or abs(amp0) < 1e-12:
        return DecayFit(0.0, float(amp0), off, np.zeros((2, 2)), degenerate=True)
    ratio = (p[-1] - off) / amp0
    span = t[-1] - t[0] if t[-1] > t[0] else 1.0
    g0 = -math.log(ratio) / span if 0 < ratio < 1 else 1.0 / span
    sig = None if sigma is None else np.maximum(np.asarray(sigma, dtype=float), 1e-12)
    try:
        if free_offset:
            popt, pcov = curve_fit(
                lambda x, A, g, B: A * np.exp(-g * x) + B, t, p, p0=(amp0, g0, off), sigma=sig, maxfev=20000
            )
            A, g, B = popt
            cov = pcov[np.ix_([1, 0], [1, 0])]
        else:
            popt, pcov = curve_fit(lambda x, A, g: A * np.exp(-g * x) + off, t, p, p0=(amp0, g0), sigma=sig, maxfev=20000)
            A, g = popt
            B = off
            cov = pcov[np.ix_([1, 0], [1, 0])]
    except (RuntimeError, ValueError) as exc:
        raise FitDiverged(f"exponential fit failed: {exc}") from exc
    if not np.isfinite(g) or not np.all(np.isfinite(cov)):
        raise FitDiverged(f"non-finite fit result gamma={g}")
    if g <= 0:
        return DecayFit(0.0, float(A), float(B), cov, degenerate=True, offset_fixed=not free_offset)
    return DecayFit(float(g), float(A), float(B), cov, offset_fixed=not free_offset)


# ------------------------------------------------------------- gamma CSV


def _key_to_row(key) -> tuple[str, str]:
    basis, n = key
    if basis == "parity":
        return basis, f"{n[0]}{n[1]}"
    return basis, str(n)


def _row_to_key(basis: str, n: str):
    if basis == "parity":
        return basis, (n[0], int(n[1:]))
    return basis, int(n)


def write_gamma_csv(gamma_inv_us: Mapping, errors: Mapping | None = None) -> str:
    """CSV with columns ``basis_label, n, gamma_inv_us, err``."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["basis_label", "n", "gamma_inv_us", "err"])
    for key in sorted(gamma_inv_us, key=lambda k: _key_to_row(k)):
        basis, n = _key_to_row(key)
        err = "" if errors is None or key not in errors else f"{errors[key]:.6g}"
        w.writerow([basis, n, f"{gamma_inv_us[key]:.6g}", err])
    return buf.getvalue()


def read_gamma_csv(text: str) -> tuple[dict, dict]:
    """Inverse of :func:`write_gamma_csv`: ``(gamma_inv_us, err)`` keyed by ``(basis, n)``."""
    vals, errs = {}, {}
    for row in csv.DictReader(io.StringIO(text)):
        key = _row_to_key(row["basis_label"], row["n"])
        vals[key] = float(row["gamma_inv_us"])
        if row.get("err"):
            errs[key] = float(row["err"])
    return vals, errs


def rates_from_lifetimes(gamma_inv: Mapping) -> dict:
    return {k: 1.0 / v for k, v in gamma_inv.items()}


def _table(names: Iterable[str], columns: Sequence[Sequence[float]]) -> dict:
    out = {}
    for name, col in zip(names, columns):
        for k, v in enumerate(col):
            out[(name, k)] = float(v)
    return out


# Measured lifetimes 1/gamma (µs) of the optimized memories.
MEASURED_GAMMA_INV_US = {
    2: _table(["X", "Z", "sqrtwXZ"], [[1863, 1902], [1935, 1872], [1086, 1150]]),
    3: _table(
        ["X", "Z", "XZ", "X2Z"],
        [[1153, 1117, 1120], [1120, 1138, 1107], [743, 737, 720], [727, 731, 723]],
    ),
    4: {
        **_table(
            ["X", "Z", "sqrtwXZ", "X2Z", "sqrtwX3Z", "XZ2"],
            [
                [840, 878, 867, 871],
                [836, 918, 867, 872],
                [519, 549, 570, 541],
                [507, 536, 520, 529],
                [571, 548, 531, 488],
                [562, 528, 525, 521],
            ],
        ),
        ("parity", ("+", 0)): 607.0,
        ("parity", ("-", 0)): 565.0,
        ("parity", ("+", 1)): 568.0,
        ("parity", ("-", 1)): 559.0,
    },
}
