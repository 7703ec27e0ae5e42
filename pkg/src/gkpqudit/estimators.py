"""Estimator-style wrappers around the fitting routines.

The classes follow the usual ``fit`` / ``get_params`` / ``set_params``
convention so sweeps can clone and refit them with different settings.
Fitted quantities carry a trailing underscore.
"""

from __future__ import annotations

import numpy as np

from .channels import fit_exponential
from .tomography import PhaseSpaceGrid, fit_delta_eff, gaussian_cf

__all__ = ["ExponentialDecayFitter", "GaussianEnvelopeFitter"]


class _ParamsMixin:
    _param_names: tuple[str, ...] = ()

    def get_params(self, deep: bool = True) -> dict:
        return {k: getattr(self, k) for k in self._param_names}

    def set_params(self, **params):
        for key, value in params.items():
            if key not in self._param_names:
                raise ValueError(f"invalid parameter {key!r} for {type(self).__name__}")
            setattr(self, key, value)
        return self

    def _check_fitted(self):
        if not getattr(self, "is_fitted_", False):
            raise RuntimeError(f"{type(self).__name__} is not fitted yet")

    def __repr__(self):
        args = ", ".join(f"{k}={v!r}" for k, v in self.get_params().items())
        return f"{type(self).__name__}({args})"


class ExponentialDecayFitter(_ParamsMixin):
    """Fit ``p(t) = A exp(-gamma t) + 1/d`` to survival data.

    Parameters
    ----------
    d : int
        Qudit dimension; sets the asymptote ``1/d``.
    free_offset : bool
        Fit the asymptote instead of fixing it at ``1/d``.
    use_errors : bool
        Weight points by the supplied standard errors when all are positive.
    """

    _param_names = ("d", "free_offset", "use_errors")

    def __init__(self, d: int = 2, free_offset: bool = False, use_errors: bool = True):
        self.d = d
        self.free_offset = free_offset
        self.use_errors = use_errors

    def fit(self, times, probs, sigma=None):
        """Fit the decay; ``times`` in µs."""
        sig = None
        if self.use_errors and sigma is not None and np.all(np.asarray(sigma) > 0):
            sig = np.asarray(sigma, dtype=float)
        self.result_ = fit_exponential(times, probs, self.d, sigma=sig, free_offset=self.free_offset)
        self.gamma_ = self.result_.gamma
        self.gamma_err_ = self.result_.gamma_err
        self.amplitude_ = self.result_.amplitude
        self.offset_ = self.result_.offset
        self.is_fitted_ = True
        return self

    def fit_curve(self, curve, min_round: int = 0):
        """Fit a :class:`~gkpqudit.simulate.LifetimeCurve`."""
        keep = np.asarray(curve.rounds) >= min_round
        return self.fit(curve.times_us[keep], np.asarray(curve.survival)[keep], np.asarray(curve.err)[keep])

    def predict(self, times) -> np.ndarray:
        self._check_fitted()
        t = np.asarray(times, dtype=float)
        return self.amplitude_ * np.exp(-self.gamma_ * t) + self.offset_

    @property
    def lifetime_(self) -> float:
        self._check_fitted()
        return self.result_.lifetime


class GaussianEnvelopeFitter(_ParamsMixin):
    """Fit the Gaussian envelope of a characteristic-function peak.

    Parameters
    ----------
    p0 : tuple of float, optional
        Initial ``(delta_eff, amplitude, offset)``.
    """

    _param_names = ("p0",)

    def __init__(self, p0: tuple[float, float, float] | None = None):
        self.p0 = p0

    def fit(self, grid: PhaseSpaceGrid):
        self.delta_eff_, self.amplitude_, self.offset_ = fit_delta_eff(grid, p0=self.p0)
        self.is_fitted_ = True
        return self

    def predict(self, betas) -> np.ndarray:
        self._check_fitted()
        return gaussian_cf(np.asarray(betas), self.delta_eff_, self.amplitude_, self.offset_)

    @property
    def mean_photon_number_(self) -> float:
        """``(1/delta_eff² - 1) / 2`` for the fitted envelope."""
        self._check_fitted()
        return 0.5 * (1.0 / self.delta_eff_**2 - 1.0)
