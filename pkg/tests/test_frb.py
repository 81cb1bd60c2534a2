import math

import numpy as np
import pytest

from pdbrf.frb import SingleInclusion, default_frb_gamma, frb_gamma_bound, frb_run, product_triple
from pdbrf.solver import StopRule

from instances import affine_q_bundle


def identity_resolvent(gamma, x):
    return np.array(x, dtype=float)


def test_gamma_bound_examples():
    assert frb_gamma_bound(1.0, 1.0) == pytest.approx(0.4)
    assert frb_gamma_bound(1.5, 0.0) == pytest.approx(3.0)
    assert frb_gamma_bound(math.inf, 1.0) == pytest.approx(0.5)
    assert frb_gamma_bound(1e12, 1.0) == pytest.approx(0.5)
    with pytest.raises(ValueError):
        frb_gamma_bound(0.0, 1.0)


def test_projection_example():
    prob = SingleInclusion(lambda g, x: np.clip(x, 0.0, 1.0), lambda x: x - 2.0, lambda x: np.zeros_like(x), 1.0, 0.0, 1)
    res = frb_run(prob, stop=StopRule(1000, 1e-12))
    assert res.status == "converged" and res.solution[0] == pytest.approx(1.0, abs=1e-12)


def test_identity_example():
    prob = SingleInclusion(identity_resolvent, lambda x: x, lambda x: np.zeros_like(x), 1.0, 0.0, 1)
    res = frb_run(prob, seeds=(np.array([3.0]), np.array([-2.0])), stop=StopRule(5000, 1e-12))
    assert res.status == "converged" and abs(res.solution[0]) <= 1e-12


def test_rotation_example():
    R = np.array([[0.0, -1.0], [1.0, 0.0]])
    prob = SingleInclusion(identity_resolvent, lambda x: 0.1 * x, lambda x: R @ x, 10.0, 1.0, 2)
    assert default_frb_gamma(prob) == pytest.approx(0.99 * 20.0 / 41.0)
    res = frb_run(prob, seeds=(np.ones(2), np.ones(2)), stop=StopRule(20_000, 1e-11))
    assert res.status == "converged" and np.linalg.norm(res.solution) <= 1e-10


def test_fixed_point_seed_is_stationary():
    R = np.array([[0.0, -1.0], [1.0, 0.0]])
    prob = SingleInclusion(lambda g, x: np.maximum(x, 0.0), lambda x: x - np.array([1.0, -1.0]), lambda x: 0.5 * R @ x, 1.0, 0.5, 2)
    xbar = frb_run(prob, stop=StopRule(100_000, 1e-14)).solution
    g = 0.3
    raw = xbar - g * (prob.Q(xbar) + prob.B(xbar))
    res = frb_run(prob, g, (raw, raw), StopRule(20, 0.0), keep_iterates=True)
    assert max(np.linalg.norm(x - raw) for x, _ in res.iterates) <= 1e-12


def test_gamma_validation_and_partition():
    prob = product_triple(affine_q_bundle())
    with pytest.raises(ValueError):
        frb_run(prob, gamma=frb_gamma_bound(prob.beta, prob.mu))
    with pytest.raises(ValueError):
        frb_run(prob, partition=[1, 1])
    res = frb_run(prob, stop=StopRule(5, 0.0), partition=[2, 1])
    assert len(res.history) == 5 and len(res.history[0].dual_residual_norms) == 1


def test_divergence_status():
    prob = SingleInclusion(identity_resolvent, lambda x: 10.0 * x, lambda x: np.zeros_like(x), 1.0, 0.0, 1)
    res = frb_run(prob, gamma=1.9, seeds=(np.ones(1), np.ones(1)), stop=StopRule(1000, 1e-10))
    assert res.status == "diverged"
