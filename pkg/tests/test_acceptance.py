"""The ten acceptance criteria, each printing one PASS/FAIL line."""

from __future__ import annotations

import time
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from conftest import record_acceptance
from instances import lasso_problem, random_function_spec, tv_chain_problem
from pdbrf.blocks import BlockVector, block_combine, block_norm
from pdbrf.cli import main
from pdbrf.convex import build_inclusion
from pdbrf.frb import frb_run, product_triple
from pdbrf.inexact import GeometricSchedule, audit_condition, kappa_sup
from pdbrf.operators import adjoint_mismatch, conjugate_prox, firm_nonexpansive_slack, prox_factory
from pdbrf.oracles import active_set_oracle, block_error, grid_prox_oracle, kkt_residual
from pdbrf.product import assemble_B, beta_prime, lipschitz_mu, resolvent_Abold
from pdbrf.solver import Seeds, StopRule, brf_step, choose_gamma, initialize, limit_point_formula, product_step, run

CONFIGS = Path(__file__).resolve().parents[1] / "configs"
SUITE_STOP = StopRule(max_iters=100_000, tol=1e-10)


def _policy(inst, kappa=0.0):
    return choose_gamma(inst.beta_prime, inst.mu, kappa)


def _random_block(rng, shape, scale=1.0):
    return BlockVector.from_flat(scale * rng.standard_normal(shape.size), shape)


@pytest.fixture(scope="module")
def suite_runs(suite_instances):
    t0 = time.perf_counter()
    runs = {inst.name: run(inst.bundle, None, _policy(inst), stop=SUITE_STOP, keep_iterates=True) for inst in suite_instances}
    return runs, time.perf_counter() - t0


def test_criterion_01_prox_matches_grid_and_moreau():
    rng = np.random.default_rng(2024)
    t0 = time.perf_counter()
    worst_grid = worst_moreau = worst_fy = 0.0
    for _ in range(1000):
        spec, dim = random_function_spec(rng)
        J = prox_factory(spec)
        f = J.function
        gamma = float(rng.uniform(0.1, 3.0))
        x = 2.0 * rng.standard_normal(dim)
        p = J(gamma, x)
        worst_grid = max(worst_grid, float(np.max(np.abs(p - grid_prox_oracle(spec, gamma, x, resolution=1e-8)))))
        dual = conjugate_prox(J)(1.0 / gamma, x / gamma)
        worst_moreau = max(worst_moreau, float(np.linalg.norm(x - p - gamma * dual)))
        u = (x - p) / gamma
        fy = f.value(p) + f.conjugate_value(u) - float(p @ u)
        worst_fy = max(worst_fy, abs(fy) / (1.0 + abs(float(p @ u))))
    elapsed = time.perf_counter() - t0
    ok = worst_grid <= 1e-6 and worst_moreau <= 1e-10 and worst_fy <= 1e-10 and elapsed < 10.0
    record_acceptance(
        1, ok, f"grid {worst_grid:.1e} <= 1e-6, Moreau {worst_moreau:.1e} <= 1e-10, Fenchel-Young {worst_fy:.1e}, {elapsed:.2f}s < 10s"
    )
    assert ok


def test_criterion_02_firm_nonexpansive_and_adjoint(suite_instances):
    rng = np.random.default_rng(11)
    t0 = time.perf_counter()
    worst_slack = np.inf
    worst_adj = 0.0
    n_ops = 0

    def pairs(dim, k=1000):
        return [(3.0 * rng.standard_normal(dim), 3.0 * rng.standard_normal(dim)) for _ in range(k)]

    draws = 0
    while draws < 12:
        spec, dim = random_function_spec(rng)
        J = prox_factory(spec)
        for op in (J, conjugate_prox(J)):
            gamma = float(rng.uniform(0.1, 3.0))
            worst_slack = min(worst_slack, firm_nonexpansive_slack(lambda x: op(gamma, x), pairs(dim)))
            n_ops += 1
        draws += 1
    for inst in suite_instances:
        b = inst.bundle
        shape = b.shape
        gamma = _policy(inst).gamma
        bold = [(_random_block(rng, shape, 3.0), _random_block(rng, shape, 3.0)) for _ in range(1000)]
        flat = [(u.flatten(), v.flatten()) for u, v in bold]
        J = lambda u: resolvent_Abold(b, gamma, BlockVector.from_flat(u, shape)).flatten()  # noqa: E731
        worst_slack = min(worst_slack, firm_nonexpansive_slack(J, flat))
        n_ops += 1
        for blk in b.blocks:
            Lpairs = [(rng.standard_normal(blk.L.shape[1]), rng.standard_normal(blk.L.shape[0])) for _ in range(1000)]
            worst_adj = max(worst_adj, adjoint_mismatch(blk.L, Lpairs))
            n_ops += 1
    elapsed = time.perf_counter() - t0
    ok = worst_slack >= -1e-10 and worst_adj <= 1e-10 and elapsed < 10.0
    record_acceptance(
        2, ok, f"{n_ops} operators x 1000 pairs: min slack {worst_slack:.1e} >= -1e-10, adjoint {worst_adj:.1e}, {elapsed:.2f}s"
    )
    assert ok


def test_criterion_03_solver_matches_oracle(suite_instances, suite_oracles, suite_runs):
    runs, elapsed = suite_runs
    details, ok = [], elapsed < 60.0
    for inst in suite_instances:
        res = runs[inst.name]
        kkt = kkt_residual(inst.bundle, res.solution)
        err = block_error(res.solution, suite_oracles[inst.name].point)
        good = res.status == "converged" and kkt <= 1e-8 and err <= 1e-5
        ok &= good
        details.append(f"{inst.name}: {res.iterations} it, kkt {kkt:.0e}, err {err:.0e}")
    record_acceptance(3, ok, "; ".join(details) + f"; {elapsed:.2f}s < 60s")
    assert ok


def test_criterion_04_step_sums_are_cauchy(suite_instances, suite_oracles, suite_runs):
    runs, _ = suite_runs
    worst_step = worst_B = 0.0
    for inst in suite_instances:
        res = runs[inst.name]
        steps = np.array([rec.step_norm_sq for rec in res.history])
        tail = max(1, len(steps) // 10)
        worst_step = max(worst_step, float(steps[-tail:].sum()))
        Bb = assemble_B(inst.bundle)
        ref = Bb(suite_oracles[inst.name].point)
        bterms = np.array([block_norm(block_combine(1.0, Bb(y), -1.0, ref)) ** 2 for _, y in res.iterates[1:]])
        worst_B = max(worst_B, float(bterms[-tail:].sum()))
    ok = worst_step < 1e-10 and worst_B < 1e-10
    record_acceptance(4, ok, f"worst tail of sum ||y+ - y||^2: {worst_step:.1e}; of sum ||B y - B ybar||^2: {worst_B:.1e} (< 1e-10)")
    assert ok


@pytest.mark.parametrize("name,problem", [("lasso_1d", lasso_problem()), ("tv_chain_10d", tv_chain_problem())])
def test_criterion_05_limit_point(name, problem):
    bundle = build_inclusion(problem).with_norm_bounds()
    xbar = active_set_oracle(bundle).point
    policy = choose_gamma(beta_prime(bundle), lipschitz_mu(bundle))
    res = run(bundle, None, policy, stop=StopRule(100_000, 1e-11))
    y_err = block_error(res.solution, xbar)
    x_err = block_error(res.state.x, limit_point_formula(bundle, policy.gamma, xbar))
    ok = res.status == "converged" and y_err <= 1e-8 and x_err <= 1e-6
    record_acceptance(5, ok, f"{name}: ||y - xbar|| {y_err:.1e} <= 1e-8, ||x - formula|| {x_err:.1e} <= 1e-6")
    assert ok


def test_criterion_06_residual_certificates(suite_instances, suite_oracles, suite_runs):
    runs, _ = suite_runs
    worst_final = worst_fixed = 0.0
    for inst in suite_instances:
        last = runs[inst.name].history[-1]
        worst_final = max(worst_final, last.residual)
        policy = _policy(inst)
        xraw = limit_point_formula(inst.bundle, policy.gamma, suite_oracles[inst.name].point)
        res = run(inst.bundle, None, policy, Seeds(xraw, xraw), StopRule(5, 0.0))
        worst_fixed = max(worst_fixed, max(rec.residual for rec in res.history))
    ok = worst_final < 1e-8 and worst_fixed <= 1e-12
    record_acceptance(6, ok, f"final max(||p||, ||q_i||) {worst_final:.1e} < 1e-8; at the fixed point {worst_fixed:.1e} <= 1e-12")
    assert ok


def test_criterion_07_inexact_schedule(suite_instances, suite_oracles):
    rng = np.random.default_rng(5)
    worst_err = 0.0
    n_viol = 0
    for inst in suite_instances:
        sched = GeometricSchedule.from_aggregate(inst.bundle.m, 0.1, 0.5)
        policy = _policy(inst, kappa_sup(sched))
        res = run(inst.bundle, sched, policy, stop=SUITE_STOP)
        worst_err = max(worst_err, block_error(res.solution, suite_oracles[inst.name].point))
        worst_err = max(worst_err, 0.0 if res.status == "converged" else np.inf)
        samples = [(_random_block(rng, inst.bundle.shape, 2.0), _random_block(rng, inst.bundle.shape, 2.0)) for _ in range(30)]
        report = audit_condition(sched, inst.bundle, samples, ns=range(25))
        n_viol += len(report.violations) + (0 if report.ok else 1)
    ok = worst_err <= 1e-5 and n_viol == 0
    record_acceptance(7, ok, f"kappa aggregate 0.1, rho 0.5: worst distance to exact solution {worst_err:.1e} <= 1e-5, violations {n_viol}")
    assert ok


def test_criterion_08_product_blockwise_frb_agree(suite_instances):
    rng = np.random.default_rng(8)
    worst_prod = worst_frb = 0.0
    for inst in suite_instances:
        b = inst.bundle
        gamma = _policy(inst).gamma
        seeds = Seeds(_random_block(rng, b.shape), _random_block(rng, b.shape))
        s1 = initialize(b, gamma, seeds)
        s2 = initialize(b, gamma, seeds)
        blockwise = []
        for _ in range(100):
            s1 = brf_step(b, gamma, s1)
            s2 = product_step(b, gamma, s2)
            worst_prod = max(worst_prod, block_error(s1.x, s2.x), block_error(s1.y_curr, s2.y_curr))
            blockwise.append(s1.y_curr.flatten())
        frb = frb_run(
            product_triple(b), gamma, (seeds.x_prev.flatten(), seeds.x0.flatten()), StopRule(100, 0.0), keep_iterates=True
        )
        for ours, (_, y) in zip(blockwise, frb.iterates[1:]):
            worst_frb = max(worst_frb, float(np.linalg.norm(ours - y)))
    ok = worst_prod <= 1e-14 and worst_frb <= 1e-14
    record_acceptance(8, ok, f"100 steps: product vs blockwise {worst_prod:.1e}, frb on product triple {worst_frb:.1e} (<= 1e-14)")
    assert ok


class _Counter:
    def __init__(self):
        self.calls = {}

    def wrap(self, key, fn):
        self.calls[key] = 0

        def counted(*args):
            self.calls[key] += 1
            return fn(*args)

        return counted


def _instrument(bundle, counter):
    blocks = []
    for i, blk in enumerate(bundle.blocks, 1):
        L = replace(blk.L, apply=counter.wrap(f"L_{i}", blk.L.apply), adjoint=counter.wrap(f"L_{i}*", blk.L.adjoint))
        blocks.append(
            replace(
                blk,
                B=replace(blk.B, apply=counter.wrap(f"B_{i}", blk.B.apply)),
                Q=replace(blk.Q, apply=counter.wrap(f"Q_{i}", blk.Q.apply)),
                L=L,
            )
        )
    return replace(
        bundle,
        B=replace(bundle.B, apply=counter.wrap("B", bundle.B.apply)),
        Q=replace(bundle.Q, apply=counter.wrap("Q", bundle.Q.apply)),
        blocks=tuple(blocks),
    )


def test_criterion_09_one_call_per_iteration(suite_instances):
    bad = []
    steps = 50
    for inst in suite_instances:
        counter = _Counter()
        b = _instrument(inst.bundle, counter)
        gamma = _policy(inst).gamma
        state = initialize(b, gamma)
        for key in counter.calls:
            counter.calls[key] = 0
        for _ in range(steps):
            state = brf_step(b, gamma, state)
        bad += [f"{inst.name}:{k}={v}" for k, v in counter.calls.items() if v != steps]
    ok = not bad
    record_acceptance(9, ok, f"{steps} steps on 5 instances: every B, Q, L_i, L_i* called once per step" + ("" if ok else f"; off: {bad}"))
    assert ok


def test_criterion_10_cli_determinism_and_rejection(tmp_path, capsys):
    cfg = str(CONFIGS / "tv_chain.yaml")
    codes = [main(["--config", cfg, "--output", str(tmp_path / d)]) for d in ("a", "b")]
    same = all((tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes() for f in ("history.csv", "manifest.json", "certificate.json"))
    capsys.readouterr()
    bad_code = main(["--config", cfg, "--gamma", "10", "--output", str(tmp_path / "c")])
    err = capsys.readouterr().err
    named = "1 − γ/(2β) − 2γμ − 7γκ ≥ ε" in err
    ok = codes == [0, 0] and same and bad_code == 1 and named and not (tmp_path / "c").exists()
    record_acceptance(10, ok, f"identical outputs: {same}; gamma=10 rejected with exit {bad_code}, inequality named: {named}")
    assert ok
