"""Phase-space diagnostics: characteristic and Wigner functions, photon
statistics from the CF curvature, Gaussian envelope fits and linear-inversion
state reconstruction."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import curve_fit

from .errors import FitDiverged, GridTooCoarse, Underdetermined

__all__ = [
    "PhaseSpaceGrid",
    "displacement_elements",
    "characteristic_function",
    "wigner",
    "wigner_from_cf",
    "photon_stats_from_cf",
    "fit_delta_eff",
    "reconstruct_density_matrix",
    "ReconstructionResult",
    "gaussian_cf",
]


@dataclass(frozen=True)
class PhaseSpaceGrid:
    """Rectangular grid: ``values[i, j]`` sits at ``re[j] + 1j * im[i]``."""

    re: np.ndarray
    im: np.ndarray
    values: np.ndarray
    kind: str = "cf"
    meta: dict = field(default_factory=dict)

    @property
    def points(self) -> np.ndarray:
        return (self.re[None, :] + 1j * self.im[:, None]).ravel()

    @property
    def spacing(self) -> tuple[float, float]:
        return float(np.diff(self.re).mean()), float(np.diff(self.im).mean())

    def to_csv(self) -> str:
        """``re,im,value`` rows (real part only for complex grids, ``value_im`` added)."""
        cplx = np.iscomplexobj(self.values)
        head = "re,im,value" + (",value_im" if cplx else "")
        rows = [head]
        for i, y in enumerate(self.im):
            for j, x in enumerate(self.re):
                v = self.values[i, j]
                if cplx:
                    rows.append(f"{x:.10g},{y:.10g},{v.real:.12g},{v.imag:.12g}")
                else:
                    rows.append(f"{x:.10g},{y:.10g},{float(v):.12g}")
        return "\n".join(rows) + "\n"

    def header(self) -> dict:
        return {
            "kind": self.kind,
            "re": [float(self.re[0]), float(self.re[-1]), int(len(self.re))],
            "im": [float(self.im[0]), float(self.im[-1]), int(len(self.im))],
            **self.meta,
        }

    def header_json(self) -> str:
        return json.dumps(self.header(), sort_keys=True, indent=2)


def _as_rho(state) -> np.ndarray:
    state = np.asarray(state, dtype=complex)
    if state.ndim == 1:
        return np.outer(state, state.conj())
    return state


def displacement_elements(betas: np.ndarray, n: int) -> np.ndarray:
    """Exact Fock matrix elements ``<m|D(beta)|k>`` for ``m, k < n``.

    For ``m >= k`` the element is ``l_k^(m−k)(|beta|²) exp(i (m−k) arg beta)``
    with the normalized associated Laguerre function
    ``l_k^(a)(x) = sqrt(k!/(k+a)!) x^(a/2) exp(−x/2) L_k^(a)(x)``, obtained
    from its three-term recurrence in ``k``. The lower triangle follows from
    ``D(beta)† = D(−beta)``. No truncation error is involved.

    Returns
    -------
    ndarray, shape (len(betas), n, n)
        ``out[g, m, k] = <m|D(betas[g])|k>``.
    """
    betas = np.asarray(betas, dtype=complex).ravel()
    G = betas.size
    x = np.abs(betas) ** 2
    theta = np.angle(betas)
    a = np.arange(n, dtype=float)
    with np.errstate(divide="ignore"):
        logx = np.log(x)
    logx = np.where(x > 0, logx, -1e300)
    lg = np.array([math.lgamma(v + 1) for v in a])
    # l_0^(a) = x^(a/2) e^(-x/2) / sqrt(a!)
    expo = 0.5 * a[None, :] * logx[:, None] - 0.5 * x[:, None] - 0.5 * lg[None, :]
    expo[:, 0] = -0.5 * x
    prev = np.zeros((G, n))
    cur = np.exp(expo)
    ell = np.zeros((G, n, n))  # ell[g, k, a]
    ell[:, 0, :] = cur
    for k in range(n - 1):
        nxt = ((2 * k + 1 + a[None, :] - x[:, None]) * cur - np.sqrt(k * (k + a))[None, :] * prev) / np.sqrt(
            (k + 1) * (k + 1 + a)
        )[None, :]
        prev, cur = cur, nxt
        ell[:, k + 1, :] = cur
    out = np.zeros((G, n, n), dtype=complex)
    up = np.exp(1j * theta[:, None] * a[None, :])
    lo = np.exp(-1j * theta[:, None] * a[None, :]) * ((-1.0) ** a)[None, :]
    for k in range(n):
        span = n - k
        out[:, k : k + span, k] = ell[:, k, :span] * up[:, :span]
        if span > 1:
            out[:, k, k + 1 : n] = ell[:, k, 1:span] * lo[:, 1:span]
    return out


def _grid_points(re, im):
    re = np.asarray(re, dtype=float)
    im = np.asarray(im, dtype=float)
    return re, im, (re[None, :] + 1j * im[:, None])


def _trace_with_displacements(rho: np.ndarray, betas: np.ndarray, parity: bool, chunk: int = 2048) -> np.ndarray:
    n = rho.shape[0]
    # Tr[rho D Pi] = sum_{k,m} rho[k, m] D[m, k] (-1)^k
    weights = rho.T.copy()  # weights[m, k] = rho[k, m]
    if parity:
        weights = weights * ((-1.0) ** np.arange(n))[None, :]
    out = np.empty(betas.size, dtype=complex)
    flat = betas.ravel()
    for s in range(0, flat.size, chunk):
        D = displacement_elements(flat[s : s + chunk], n)
        out[s : s + chunk] = np.einsum("gmk,mk->g", D, weights)
    return out.reshape(betas.shape)


def characteristic_function(state, re, im=None) -> PhaseSpaceGrid:
    """``C(beta) = Tr[rho D(beta)]`` on the grid ``re x im``.

    Args:
        state: Cavity ket or density matrix.
        re: Real-axis samples.
        im: Imaginary-axis samples (defaults to ``re``).
    """
    im = re if im is None else im
    rho = _as_rho(state)
    re, im, pts = _grid_points(re, im)
    vals = _trace_with_displacements(rho, pts, parity=False)
    return PhaseSpaceGrid(re, im, vals, kind="cf")


def characteristic_at(state, betas) -> np.ndarray:
    """``C(beta)`` at arbitrary points."""
    rho = _as_rho(state)
    betas = np.asarray(betas, dtype=complex)
    return _trace_with_displacements(rho, betas, parity=False)


def wigner(state, re, im=None, *, density: bool = False) -> PhaseSpaceGrid:
    """Wigner function as a displaced-parity expectation.

    ``W(alpha) = Tr[rho D(alpha) Pi D(−alpha)] = Tr[rho D(2 alpha) Pi]``,
    bounded by ``[−1, 1]``. With ``density=True`` the quasi-probability
    density ``2 W / pi`` is returned instead.
    """
    im = re if im is None else im
    rho = _as_rho(state)
    re, im, pts = _grid_points(re, im)
    vals = _trace_with_displacements(rho, 2 * pts, parity=True).real
    if density:
        vals = vals * 2 / math.pi
    return PhaseSpaceGrid(re, im, vals, kind="wigner_density" if density else "wigner")


def wigner_at(state, alphas) -> np.ndarray:
    rho = _as_rho(state)
    return _trace_with_displacements(rho, 2 * np.asarray(alphas, dtype=complex), parity=True).real


def wigner_from_cf(cf: PhaseSpaceGrid, alphas) -> np.ndarray:
    """Fourier transform of a CF grid to the parity-normalized Wigner function.

    ``W(alpha) = 1/(2 pi) ∫ d²beta C(beta) exp(alpha beta* − alpha* beta)``,
    evaluated by a Riemann sum on the CF grid.
    """
    hx, hy = cf.spacing
    betas = cf.points
    vals = cf.values.ravel()
    alphas = np.asarray(alphas, dtype=complex).ravel()
    phase = np.exp(alphas[:, None] * np.conj(betas)[None, :] - np.conj(alphas)[:, None] * betas[None, :])
    return (phase @ vals).real * hx * hy / (2 * math.pi)


def photon_stats_from_cf(grid: PhaseSpaceGrid, max_spacing: float = 0.05) -> float:
    """Mean photon number from the CF curvature at the origin.

    ``<n> = −1/2 − (1/4)(d²/dx² + d²/dy²) Re C`` at ``beta = 0`` with
    ``beta = x + i y``, using central differences on the grid.

    Raises
    ------
    GridTooCoarse
        If the spacing exceeds ``max_spacing`` or the origin is not a grid point.
    """
    hx, hy = grid.spacing
    if max(hx, hy) > max_spacing * (1 + 1e-9):
        raise GridTooCoarse(f"grid spacing ({hx:.3g}, {hy:.3g}) exceeds {max_spacing}")
    j0 = int(np.argmin(np.abs(grid.re)))
    i0 = int(np.argmin(np.abs(grid.im)))
    if abs(grid.re[j0]) > 1e-9 or abs(grid.im[i0]) > 1e-9:
        raise GridTooCoarse("the origin must be a grid point")
    if not (0 < j0 < len(grid.re) - 1 and 0 < i0 < len(grid.im) - 1):
        raise GridTooCoarse("the origin needs neighbours on both axes")
    C = np.real(grid.values)
    d2x = (C[i0, j0 + 1] - 2 * C[i0, j0] + C[i0, j0 - 1]) / hx**2
    d2y = (C[i0 + 1, j0] - 2 * C[i0, j0] + C[i0 - 1, j0]) / hy**2
    return float(-0.5 - 0.25 * (d2x + d2y))


def gaussian_cf(beta, delta_eff: float, amplitude: float = 1.0, offset: float = 0.0):
    return amplitude * np.exp(-np.abs(beta) ** 2 / (2 * delta_eff**2)) + offset


def fit_delta_eff(grid: PhaseSpaceGrid, p0: tuple[float, float, float] | None = None) -> tuple[float, float, float]:
    """Least-squares fit ``Re C = A exp(−|beta|²/(2 Delta_eff²)) + B``.

    Returns
    -------
    (delta_eff, amplitude, offset)

    Raises
    ------
    FitDiverged
        If the optimizer fails or returns a non-positive width.
    """
    betas = grid.points
    y = np.real(grid.values).ravel()
    if p0 is None:
        r = np.abs(betas)
        p0 = (max(float(np.sqrt(np.sum(y * r**2) / max(np.sum(y), 1e-12) / 2)), 0.05), float(y.max()), 0.0)
        if not np.isfinite(p0[0]):
            p0 = (0.3, 1.0, 0.0)

    def model(b, s, A, B):
        return gaussian_cf(np.abs(b), s, A, B)

    try:
        popt, _ = curve_fit(model, np.abs(betas), y, p0=p0, maxfev=20000)
    except (RuntimeError, ValueError) as exc:
        raise FitDiverged(f"Gaussian CF fit failed: {exc}") from exc
    s, A, B = popt
    s = abs(float(s))
    if not np.all(np.isfinite(popt)) or s <= 0:
        raise FitDiverged(f"unphysical fit parameters {popt}")
    return s, float(A), float(B)


@dataclass(frozen=True)
class ReconstructionResult:
    rho: np.ndarray
    residual: float
    clipped_weight: float


def reconstruct_density_matrix(
    alphas, values, cavity_dim: int, rank_cap: int | None = None, ridge: float = 0.0
) -> ReconstructionResult:
    """Linear least-squares state estimate from Wigner samples.

    The Hermitian unknown is parametrized by ``N²`` real numbers; the
    unconstrained solution is projected onto the physical set by clipping
    negative eigenvalues (and, with ``rank_cap``, all but the largest ones)
    and renormalizing the trace. ``ridge > 0`` adds Tikhonov damping of
    poorly sampled directions, which matters once noise is present.

    Raises
    ------
    Underdetermined
        If fewer than ``cavity_dim²`` samples are supplied.
    """
    alphas = np.asarray(alphas, dtype=complex).ravel()
    values = np.asarray(values, dtype=float).ravel()
    n = int(cavity_dim)
    if alphas.size < n * n:
        raise Underdetermined(f"{alphas.size} samples cannot fix {n * n} real unknowns")
    if alphas.size != values.size:
        raise ValueError("alphas and values need equal length")
    M = displacement_elements(2 * alphas, n) * ((-1.0) ** np.arange(n))[None, None, :]
    iu = np.triu_indices(n, 1)
    diag = np.real(np.einsum("gmm->gm", M))
    upper = M[:, iu[1], iu[0]]  # M[m, k] with k < m pairs with rho[k, m]
    A = np.concatenate([diag, 2 * upper.real, -2 * upper.imag], axis=1)
    if ridge > 0:
        # Tikhonov: minimize |A x − w|² + ridge² |x|²
        U, sv, Vt = np.linalg.svd(A, full_matrices=False)
        sol = Vt.T @ ((sv / (sv**2 + ridge**2)) * (U.T @ values))
    else:
        sol, *_ = np.linalg.lstsq(A, values, rcond=None)
    residual = float(np.linalg.norm(A @ sol - values) / max(np.linalg.norm(values), 1e-300))
    rho = np.zeros((n, n), dtype=complex)
    rho[np.diag_indices(n)] = sol[:n]
    k = len(iu[0])
    rho[iu] = sol[n : n + k] + 1j * sol[n + k :]
    rho = rho + np.triu(rho, 1).conj().T
    w, v = np.linalg.eigh(rho)
    w_clip = np.clip(w, 0, None)
    if rank_cap is not None and rank_cap < n:
        w_clip[: n - rank_cap] = 0.0
    clipped = float(np.sum(np.abs(w - w_clip)))
    if w_clip.sum() <= 0:
        raise FitDiverged("reconstruction has no positive weight")
    rho_psd = (v * (w_clip / w_clip.sum())) @ v.conj().T
    return ReconstructionResult(rho=rho_psd, residual=residual, clipped_weight=clipped)
