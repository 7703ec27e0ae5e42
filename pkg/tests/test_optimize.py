import json
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gkpqudit import circuits, fock, gkp
from gkpqudit import optimize as O
from gkpqudit.errors import BudgetExhausted, TruncationWarning
from gkpqudit.fock import HilbertSpace


def _coherent(n, alpha):
    from math import lgamma

    k = np.arange(n)
    logf = np.array([lgamma(j + 1) for j in k])
    return np.exp(-abs(alpha) ** 2 / 2 - logf / 2) * alpha**k


def random_params(seed, depth=4):
    return O.EcdCircuitParams.random(depth, np.random.default_rng(seed))


class TestParams:
    def test_beta_bound(self):
        with pytest.raises(ValueError):
            O.EcdCircuitParams(np.array([6.0 + 0j]), np.zeros(1), np.zeros(1))
        p = O.EcdCircuitParams.random(50, np.random.default_rng(0), beta_max=1.0)
        assert np.all(np.abs(p.betas) <= 1.0)

    def test_angles_wrapped(self):
        p = O.EcdCircuitParams(np.zeros(1) + 0j, np.array([7.0]), np.array([9.0]))
        assert 0 <= p.phis[0] < 2 * np.pi
        assert -2 * np.pi <= p.thetas[0] < 2 * np.pi
        np.testing.assert_allclose(O.ecd_circuit_state(p, 20), O.ecd_circuit_state(O.EcdCircuitParams(np.zeros(1) + 0j, np.array([7.0]), np.array([9.0 - 4 * np.pi])), 20), atol=1e-12)

    def test_json_round_trip(self):
        p = random_params(3)
        q = O.EcdCircuitParams.from_json_dict(json.loads(json.dumps(p.to_json_dict())))
        np.testing.assert_allclose(q.to_vector(), p.to_vector(), atol=0)
        bad = p.to_json_dict()
        bad["depth"] = 7
        with pytest.raises(ValueError):
            O.EcdCircuitParams.from_json_dict(bad)

    def test_vector_round_trip(self):
        p = random_params(4)
        np.testing.assert_allclose(O.EcdCircuitParams.from_vector(p.to_vector()).to_vector(), p.to_vector())


class TestCircuit:
    def test_depth_zero_identity(self):
        space = HilbertSpace(12)
        np.testing.assert_allclose(O.ecd_circuit_unitary(space, O.EcdCircuitParams.identity(0)), np.eye(24))

    def test_single_flip(self):
        space = HilbertSpace(12)
        p = O.EcdCircuitParams(np.zeros(1) + 0j, np.zeros(1), np.array([np.pi]))
        U = O.ecd_circuit_unitary(space, p)
        # rotation by pi then ECD(0) = sigma_x: two flips, identity up to a phase
        flip = fock.embed(circuits.rotation_unitary(0, np.pi), "ancilla", space)
        np.testing.assert_allclose(U, circuits.ecd_unitary(space, 0) @ flip, atol=1e-12)
        col = U[:, 0].reshape(2, 12)
        assert abs(col[0, 0]) == pytest.approx(1)

    @given(st.integers(0, 10_000))
    @settings(max_examples=10, deadline=None)
    def test_unitarity(self, seed):
        p = O.EcdCircuitParams.random(3, np.random.default_rng(seed), beta_max=1.5)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", TruncationWarning)
            U = O.ecd_circuit_unitary(HilbertSpace(50), p)
        assert np.linalg.norm(U.conj().T @ U - np.eye(100)) < 1e-8

    def test_truncation_warning(self):
        p = O.EcdCircuitParams(np.array([5.0 + 0j]), np.zeros(1), np.array([np.pi / 2]))
        with pytest.warns(TruncationWarning):
            O.ecd_circuit_unitary(HilbertSpace(20), p)

    def test_state_matches_unitary(self):
        # exact-element propagation vs the truncated unitary, away from the cutoff
        p = random_params(5, depth=3)
        p = O.EcdCircuitParams(p.betas * 0.4, p.phis, p.thetas)
        n = 60
        U = O.ecd_circuit_unitary(HilbertSpace(n), p)
        np.testing.assert_allclose(O.ecd_circuit_state(p, n).ravel()[:], U[:, 0], atol=1e-8)

    def test_schedule_matches(self):
        p = random_params(6, depth=2)
        p = O.EcdCircuitParams(p.betas * 0.5, p.phis, p.thetas)
        space = HilbertSpace(50)
        U = circuits.schedule_unitary(p.to_schedule(space), 0)
        np.testing.assert_allclose(U[:, 0], O.ecd_circuit_unitary(space, p)[:, 0], atol=1e-9)


class TestFidelity:
    def test_vacuum_identity(self):
        t = np.zeros(10)
        t[0] = 1
        assert O.prep_fidelity(O.EcdCircuitParams.identity(0), t) == pytest.approx(1)
        r = O.optimize_prep(t, K=0, budget=1000)
        assert r.fidelity == pytest.approx(1)

    def test_hand_set_coherent(self):
        # R_x(pi/2) then ECD(2): |g>|0> -> (|g>|-1> - i|e>|1>)/sqrt2 up to labels; the g branch is D(-1)|0>
        target = _coherent(30, 1.0)
        p = O.EcdCircuitParams(np.array([-2.0 + 0j]), np.zeros(1), np.array([np.pi]))
        assert O.prep_fidelity(p, target) > 0.9

    def test_in_unit_interval(self, rng):
        t = rng.normal(size=15) + 1j * rng.normal(size=15)
        t /= np.linalg.norm(t)
        for s in range(5):
            f = O.prep_fidelity(random_params(s), t)
            assert 0 <= f <= 1

    @given(st.floats(0, 2 * np.pi))
    @settings(max_examples=20, deadline=None)
    def test_global_phase_invariance(self, phase):
        t = _coherent(20, 0.7 + 0.2j)
        t /= np.linalg.norm(t)
        p = random_params(8, depth=3)
        assert O.prep_fidelity(p, np.exp(1j * phase) * t) == pytest.approx(O.prep_fidelity(p, t), abs=1e-12)

    def test_gradient_vs_finite_difference(self):
        t = _coherent(20, 0.5 - 0.8j)
        t /= np.linalg.norm(t)
        x = random_params(9, depth=3).to_vector() * np.r_[[0.5] * 6, [1] * 6]
        f, g = O.prep_fidelity_and_grad(x, t, 60)
        assert f == pytest.approx(O.prep_fidelity(O.EcdCircuitParams.from_vector(x), t, 60), abs=1e-12)
        h = 1e-6
        fd = np.array([(O.prep_fidelity_and_grad(x + h * e, t, 60)[0] - O.prep_fidelity_and_grad(x - h * e, t, 60)[0]) / (2 * h) for e in np.eye(x.size)])
        np.testing.assert_allclose(g, fd, atol=1e-6)


class TestOptimizer:
    def test_budget_floor(self):
        with pytest.raises(ValueError):
            O.optimize_prep(np.array([1.0, 0]), budget=999)

    def test_determinism_and_monotone_trace(self):
        t = _coherent(15, 1.2)
        t /= np.linalg.norm(t)
        a = O.optimize_prep(t, K=2, restarts=2, seed=5, budget=1000, method="nelder-mead")
        b = O.optimize_prep(t, K=2, restarts=2, seed=5, budget=1000, method="nelder-mead")
        assert a.to_json() == b.to_json()
        assert a.trace == b.trace
        assert np.all(np.diff(a.trace) >= 0)
        assert a.evaluations <= 2000
        assert len(a.trace) == a.evaluations

    def test_lbfgs_reaches_coherent(self):
        t = _coherent(20, 1.0j)
        t /= np.linalg.norm(t)
        r = O.optimize_prep(t, K=2, restarts=3, seed=0, budget=1000, target_fidelity=0.99)
        assert r.fidelity >= 0.99
        assert not r.exhausted

    def test_powell_runs(self):
        t = _coherent(15, 0.8)
        t /= np.linalg.norm(t)
        r = O.optimize_prep(t, K=1, restarts=1, seed=0, budget=1000, method="powell")
        assert r.fidelity > 0.9

    def test_exhausted_flag_and_error(self, codes):
        t = codes(2, 0.34, 80).codewords[0]
        r = O.optimize_prep(t, K=1, restarts=1, seed=0, budget=1000, target_fidelity=0.999)
        assert r.exhausted
        with pytest.raises(BudgetExhausted) as info:
            O.optimize_prep(t, K=1, restarts=1, seed=0, budget=1000, target_fidelity=0.999, raise_on_exhaust=True)
        assert info.value.report.fidelity == pytest.approx(r.fidelity)

    def test_unknown_method(self):
        with pytest.raises(ValueError):
            O.optimize_prep(np.array([1.0, 0]), method="adam")

    def test_qubit_z0(self, codes):
        t = codes(2, 0.34, 80).codewords[0]
        r = O.optimize_prep(t, K=8, restarts=10, seed=0, budget=2000, target_fidelity=0.95)
        assert r.fidelity >= 0.95
        assert np.all(np.abs(r.params.betas) <= O.BETA_MAX)

    def test_qutrit_x0(self, codes):
        code = codes(3, 0.32, 100)
        t = gkp.pauli_eigenbasis(code, gkp.X).states[0]
        r = O.optimize_prep(t, K=8, restarts=10, seed=0, budget=2000, target_fidelity=0.90)
        assert r.fidelity >= 0.90


@pytest.fixture(scope="module")
def code(codes):
    return codes(2, 0.34, 60, tail_limit=1e-3)


class TestReward:
    def test_zero_rounds(self, code):
        # with overlap readout prep and measure are perfect
        assert O.reward_objective(None, code, 0) == pytest.approx(1, abs=1e-9)

    def test_nominal_noiseless(self, code):
        assert O.reward_objective(None, code, 80) > 0.9

    def test_no_envelope_correction_is_worse(self, code):
        nominal = O.reward_objective(None, code, 80)
        assert O.reward_objective({"small": 0.0}, code, 80) < nominal

    def test_unknown_key(self, code):
        with pytest.raises(ValueError):
            O.reward_objective({"eps": 0.1}, code, 1)
