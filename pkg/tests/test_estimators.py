import numpy as np
import pytest

from gkpqudit import simulate
from gkpqudit import tomography as T
from gkpqudit.channels import fit_exponential
from gkpqudit.estimators import ExponentialDecayFitter, GaussianEnvelopeFitter


def decay(t, gamma, d, amp=0.45):
    return amp * np.exp(-gamma * t) + 1 / d


class TestExponentialDecayFitter:
    def test_recovers_rate(self):
        t = np.linspace(0, 700, 11)
        est = ExponentialDecayFitter(d=3).fit(t, decay(t, 1e-3, 3))
        assert est.gamma_ == pytest.approx(1e-3, rel=1e-6)
        assert est.offset_ == pytest.approx(1 / 3)
        assert est.lifetime_ == pytest.approx(1000, rel=1e-6)
        np.testing.assert_allclose(est.predict(t), decay(t, 1e-3, 3), atol=1e-9)

    def test_matches_function(self):
        rng = np.random.default_rng(0)
        t = np.linspace(0, 500, 8)
        p = decay(t, 2e-3, 2) + rng.normal(0, 1e-3, t.size)
        est = ExponentialDecayFitter(d=2, use_errors=False).fit(t, p)
        assert est.gamma_ == fit_exponential(t, p, 2).gamma

    def test_params(self):
        est = ExponentialDecayFitter()
        assert est.get_params() == {"d": 2, "free_offset": False, "use_errors": True}
        assert est.set_params(d=4, free_offset=True) is est
        assert est.d == 4
        with pytest.raises(ValueError):
            est.set_params(alpha=1)
        assert repr(est) == "ExponentialDecayFitter(d=4, free_offset=True, use_errors=True)"

    def test_unfitted(self):
        with pytest.raises(RuntimeError):
            ExponentialDecayFitter().predict([0.0])

    def test_fit_curve_min_round(self):
        rounds = np.arange(0, 110, 10)
        surv = decay(rounds * 7.0, 5e-4, 2)
        surv[0] = 0.99  # transient at round 0
        curve = simulate.LifetimeCurve("X", 0, rounds, surv, np.zeros(rounds.size))
        est = ExponentialDecayFitter(d=2).fit_curve(curve, min_round=10)
        assert est.gamma_ == pytest.approx(5e-4, rel=1e-6)


class TestGaussianEnvelopeFitter:
    def test_fit_and_predict(self):
        ax = 0.05 * np.arange(-16, 17)
        b = ax[None, :] + 1j * ax[:, None]
        grid = T.PhaseSpaceGrid(ax, ax, T.gaussian_cf(b, 0.29, 0.8, 0.01), kind="cf")
        est = GaussianEnvelopeFitter().fit(grid)
        assert est.delta_eff_ == pytest.approx(0.29, abs=1e-4)
        assert est.mean_photon_number_ == pytest.approx(5.445, abs=0.01)
        np.testing.assert_allclose(est.predict(b), grid.values.real, atol=1e-6)

    def test_params(self):
        est = GaussianEnvelopeFitter(p0=(0.3, 1.0, 0.0))
        assert est.get_params() == {"p0": (0.3, 1.0, 0.0)}
        with pytest.raises(RuntimeError):
            est.mean_photon_number_
