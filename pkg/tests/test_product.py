import math

import numpy as np
import pytest

from pdbrf.blocks import BlockVector, block_dot
from pdbrf.operators import CocoerciveOperator, LinearMap, LipschitzMonotoneOperator, ResolventOperator, firm_nonexpansive_slack, prox_factory
from pdbrf.product import (
    BundleError,
    assemble_B,
    assemble_S,
    beta_prime,
    lipschitz_mu,
    make_bundle,
    product_operators,
    resolvent_Abold,
)

ZERO_A = ResolventOperator(lambda g, x: np.array(x, dtype=float), name="0")


def unit_bundle(z=0.0, r=0.0, B=None, B1=None, Q=None, Q1=None, L=None):
    return make_bundle(
        ZERO_A,
        B or CocoerciveOperator.zero(),
        Q or LipschitzMonotoneOperator.zero(),
        [z],
        [(ZERO_A, B1 or CocoerciveOperator.zero("B_1"), Q1 or LipschitzMonotoneOperator.zero("Q_1"), L or LinearMap.identity(1), [r])],
    )


def test_S_pure_skew():
    S = assemble_S(unit_bundle())
    assert S(BlockVector([1.0], [[2.0]])).flatten().tolist() == [2.0, -1.0]
    assert S(BlockVector([0.0], [[0.0]])).flatten().tolist() == [0.0, 0.0]


def test_S_is_monotone_with_linear_Q():
    rng = np.random.default_rng(3)
    b = make_bundle(
        ZERO_A,
        CocoerciveOperator.zero(),
        LipschitzMonotoneOperator.affine([[0.5, 1.0], [-1.0, 0.0]]),
        np.zeros(2),
        [(ZERO_A, CocoerciveOperator.zero(), LipschitzMonotoneOperator.affine([[0.0, 2.0], [-2.0, 0.1]]), LinearMap.from_matrix(rng.standard_normal((2, 2))), np.zeros(2))],
    )
    S = assemble_S(b)
    worst = math.inf
    for _ in range(1000):
        u = BlockVector.from_flat(rng.standard_normal(4), b.shape)
        v = BlockVector.from_flat(rng.standard_normal(4), b.shape)
        d = u - v
        worst = min(worst, block_dot(S(u) - S(v), d))
    assert worst >= -1e-12


def test_B_identity_and_beta_prime():
    one = CocoerciveOperator.affine(np.eye(1), beta=1.0)
    b = unit_bundle(B=one, B1=one)
    assert assemble_B(b)(BlockVector([2.0], [[-3.0]])).flatten().tolist() == [2.0, -3.0]
    assert assemble_B(unit_bundle())(BlockVector([0.0], [[0.0]])).flatten().tolist() == [0.0, 0.0]
    ops = [CocoerciveOperator.affine(np.eye(1), beta=beta) for beta in (2.0, 1.0, 3.0)]
    b3 = make_bundle(ZERO_A, ops[0], LipschitzMonotoneOperator.zero(), [0.0], [(ZERO_A, op, LipschitzMonotoneOperator.zero(), LinearMap.identity(1), [0.0]) for op in ops[1:]])
    assert beta_prime(b3) == 1.0


def test_resolvent_shift():
    b = unit_bundle(z=1.0, r=1.0)
    assert resolvent_Abold(b, 2.0, BlockVector([0.0], [[0.0]])).flatten().tolist() == [2.0, -2.0]
    u = BlockVector([0.3], [[-0.7]])
    assert resolvent_Abold(unit_bundle(), 1.5, u).flatten().tolist() == u.flatten().tolist()
    with pytest.raises(ValueError):
        resolvent_Abold(b, 0.0, u)


def test_resolvent_firmly_nonexpansive_l1():
    J1 = prox_factory({"family": "l1", "scale": 0.8})
    b = make_bundle(J1, CocoerciveOperator.zero(), LipschitzMonotoneOperator.zero(), np.zeros(2), [(J1, CocoerciveOperator.zero(), LipschitzMonotoneOperator.zero(), LinearMap.identity(2), np.ones(2))])
    rng = np.random.default_rng(4)
    pairs = [(3 * rng.standard_normal(4), 3 * rng.standard_normal(4)) for _ in range(1000)]
    J = lambda u: resolvent_Abold(b, 0.7, BlockVector.from_flat(u, b.shape)).flatten()  # noqa: E731
    assert firm_nonexpansive_slack(J, pairs) >= -1e-10


def test_lipschitz_mu_examples():
    assert lipschitz_mu(unit_bundle()) == 1.0
    A = ZERO_A
    blocks = [
        (A, CocoerciveOperator.zero(), LipschitzMonotoneOperator.affine([[2.0]]), LinearMap.from_matrix([[3.0]], norm_bound=3.0), [0.0]),
        (A, CocoerciveOperator.zero(), LipschitzMonotoneOperator.affine([[1.0]]), LinearMap.from_matrix([[4.0]], norm_bound=4.0), [0.0]),
    ]
    b = make_bundle(A, CocoerciveOperator.zero(), LipschitzMonotoneOperator.zero(), [0.0], blocks)
    assert lipschitz_mu(b) == 7.0
    assert product_operators(b).mu == 7.0
    with pytest.raises(BundleError):
        lipschitz_mu(make_bundle(A, CocoerciveOperator.zero(), LipschitzMonotoneOperator.zero(), [0.0], [(A, CocoerciveOperator.zero(), LipschitzMonotoneOperator.zero(), LinearMap.from_matrix([[3.0]]), [0.0])]))


def test_bundle_preconditions():
    with pytest.raises(BundleError):
        unit_bundle(L=LinearMap.zero(1, 1))
    with pytest.raises(BundleError):
        make_bundle(ZERO_A, CocoerciveOperator.zero(), LipschitzMonotoneOperator.zero(), [0.0], [])
    with pytest.raises(BundleError):
        unit_bundle(L=LinearMap.from_matrix([[1.0, 2.0]]))
