"""Acceptance criteria 1-10, one pass/fail line each.

Run with ``pytest tests/test_acceptance.py`` (lines appear in the terminal
summary) or directly as ``python tests/test_acceptance.py``.
"""
import time

import numpy as np
import pytest

from conftest import REF_V1, REF_XHAT
from singular_rl import learn as L
from singular_rl.law import ThresholdLaw, boundary_from_above, improved_law
from singular_rl.model import AugmentedState, ExpCostParams, make_exp_cost_model
from singular_rl.oracle import (
    hjb_residual,
    per_threshold_q,
    pi_iterate,
    pi_map,
    solve_benchmark,
    two_step_violations,
    value,
)
from singular_rl.sim import SimConfig, brownian_increments, mc_value, simulate_paths

PARAMS = ExpCostParams(mu=0.2, sigma=1.0, a=0.1, c=1.0, beta=0.1)
GUESS = ExpCostParams(mu=0.1, sigma=0.5, a=0.08, c=1.0, beta=0.1)
INIT = AugmentedState(1.0, 0.0, 0.0)
RESULTS: list[str] = []


def report(n, name, ok, detail):
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {n:2d} {name}: {detail}"
    RESULTS.append(line)
    print(line)
    return ok


def timed(fn):
    t = time.perf_counter()
    out = fn()
    return out, time.perf_counter() - t


def criterion_1():
    times = []
    for _ in range(5):
        sol, dt = timed(lambda: solve_benchmark(PARAMS))
        times.append(dt)
    err = abs(sol.xhat - REF_XHAT)
    ok = err < 1e-9 and min(times) < 1e-3
    return report(1, "free boundary", ok,
                  f"xhat = {sol.xhat:.15f}, |xhat - ref| = {err:.2e} (< 1e-9), runtime {min(times) * 1e3:.3f} ms (< 1 ms)")


def criterion_2():
    sol = solve_benchmark(PARAMS)
    grid = np.round(np.arange(-500, 501) * 0.01, 12)
    grid = grid[np.abs(grid - sol.xhat) > 1e-9]
    (res, where), dt = timed(lambda: hjb_residual(sol, grid))
    ok = res < 1e-8 and dt < 0.1
    return report(2, "HJB residual", ok, f"max {res:.2e} at x = {where:.2f} (< 1e-8), runtime {dt:.4f} s (< 0.1 s)")


def criterion_3():
    sol = solve_benchmark(PARAMS)

    def run():
        out = {}
        for x0 in (-2.0, 0.0, 0.5, 3.0, 5.0):
            xs = pi_iterate(sol, x0, max_iter=100)
            hit = np.flatnonzero(np.abs(xs - sol.xhat) < 1e-6)
            out[x0] = (int(hit[0]) if hit.size else None, two_step_violations(sol, xs))
        return out

    res, dt = timed(run)
    ok = all(n is not None and n <= 100 and not bad for n, bad in res.values()) and dt < 1.0
    iters = ", ".join(f"x0={x0:g}: {n}" for x0, (n, _) in res.items())
    bad = sum(len(b) for _, b in res.values())
    return report(3, "PI convergence", ok,
                  f"iterations to 1e-6 [{iters}], two-step violations {bad}, runtime {dt:.3f} s (< 1 s)")


def criterion_4():
    sol = solve_benchmark(PARAMS)

    def run():
        errs = {}
        for xbar in (0.0, 1.0, 2.0, 3.0):
            q0, q1 = per_threshold_q(sol, xbar)
            errs[xbar] = abs(boundary_from_above(improved_law(q0, q1), 10.0) - pi_map(sol, xbar))
        return errs

    errs, dt = timed(run)
    ok = max(errs.values()) < 1e-4 and dt < 5.0
    return report(4, "oracle/grid cross-check", ok,
                  f"max |grid - pi_map| = {max(errs.values()):.2e} (< 1e-4), runtime {dt:.3f} s (< 5 s)")


def criterion_5():
    sol = solve_benchmark(PARAMS)
    m = make_exp_cost_model(PARAMS, 20.0)
    cfg = SimConfig.for_model(m, 0.02, seed=101, n_paths=1000)
    tr, dt = timed(lambda: simulate_paths(m, ThresholdLaw(sol.xhat), INIT, cfg))
    mono = bool(np.all(tr.jump >= 0) and np.all(tr.cont >= 0))
    y = np.concatenate([tr.y_pre[:, :1], np.stack([tr.y_post, tr.y_next], axis=-1).reshape(1000, -1)], axis=-1)
    mono = mono and bool(np.all(np.diff(y, axis=-1) >= 0))
    over = float(np.max(np.concatenate([tr.x_post, tr.x_next], axis=-1)) - sol.xhat)
    comp = int(np.sum((tr.jump > 0) & (tr.x_post != sol.xhat)) + np.sum((tr.cont > 0) & (tr.x_next != sol.xhat)))
    ok = mono and over <= 1e-12 and comp == 0 and dt < 10
    return report(5, "simulator invariants", ok,
                  f"xi nondecreasing {mono}, max(x - b) = {over:.2e} (<= 1e-12), "
                  f"complementarity violations {comp}, runtime {dt:.2f} s (< 10 s)")


def criterion_6():
    sol = solve_benchmark(PARAMS)
    m = make_exp_cost_model(PARAMS, 100.0)
    cfg = SimConfig.for_model(m, 0.02, seed=1, n_paths=10_000)
    res, dt = timed(lambda: mc_value(m, ThresholdLaw(sol.xhat), INIT, cfg))
    V1 = float(value(sol, 1.0))
    gap = abs(res.mean - V1)
    bound = 3 * res.stderr + 0.05
    ok = gap < bound and dt < 120 and abs(V1 - REF_V1) < 1e-9
    return report(6, "Monte Carlo vs closed form", ok,
                  f"mean {res.mean:.4f} +- {res.stderr:.4f} vs V(1) = {V1:.4f}, gap {gap:.4f} (< {bound:.4f}), "
                  f"runtime {dt:.1f} s (< 120 s)")


def criterion_7():
    sol = solve_benchmark(PARAMS)
    m = make_exp_cost_model(PARAMS, 20.0)
    qf = L.benchmark_qfunctions(PARAMS.c, PARAMS.beta)
    truth = L.ParamSet.shared_vector(L.BenchmarkTheta.from_params(PARAMS).array)

    def run():
        cfg = SimConfig.for_model(m, 0.02, seed=2, n_paths=10_000)
        tr = simulate_paths(m, ThresholdLaw(sol.xhat), INIT, cfg)
        pe = np.sum(L.pe_martingale_deltas(tr, qf.J, truth.J, PARAMS.beta), axis=-1)
        G, Gm = L.td0_deltas(tr, qf, truth, PARAMS.beta)
        return pe, np.sum(G + Gm, axis=-1)

    (pe, td), dt = timed(run)
    stats = [(float(np.mean(v)), float(np.std(v, ddof=1) / np.sqrt(v.size))) for v in (pe, td)]
    ok = all(abs(mu) < 3 * se for mu, se in stats) and dt < 120
    (m1, s1), (m2, s2) = stats
    return report(7, "martingale at truth", ok,
                  f"PE sums mean {m1:.3f} (3 se = {3 * s1:.3f}), TD sums mean {m2:.4f} (3 se = {3 * s2:.4f}), "
                  f"runtime {dt:.1f} s (< 120 s)")


def criterion_8():
    sol = solve_benchmark(PARAMS)
    m = make_exp_cost_model(PARAMS, 20.0)
    J = L.benchmark_approximator(PARAMS.c)
    theta = L.BenchmarkTheta.from_params(PARAMS).array

    def run():
        cfg = SimConfig.for_model(m, 0.02, seed=3, n_paths=10_000)
        tr = simulate_paths(m, ThresholdLaw(sol.xhat), INIT, cfg, brownian_increments(cfg))
        base = L.ml_loss(tr, J, theta, PARAMS.beta)
        perturbed = {}
        for k in range(3):
            for f in (0.9, 1.1):
                th = theta.copy()
                th[k] *= f
                perturbed[(k + 1, f)] = L.ml_loss(tr, J, th, PARAMS.beta)
        return base, perturbed

    (base, perturbed), dt = timed(run)
    margin = min(v - base for v in perturbed.values())
    ok = margin > 0 and dt < 180
    worst = min(perturbed, key=perturbed.get)
    return report(8, "loss separation", ok,
                  f"loss at truth {base:.2f}, smallest perturbed loss {perturbed[worst]:.2f} "
                  f"(theta{worst[0]} x{worst[1]}), margin {margin:.3f} (> 0), runtime {dt:.1f} s (< 180 s)")


def criterion_9():
    approx = L.benchmark_approximator(PARAMS.c)
    rng = np.random.default_rng(9)

    def run():
        worst = 0.0
        for _ in range(100):
            th = np.array([rng.uniform(-3, -1), rng.uniform(-2.5, -0.5), rng.uniform(-1, 3)])
            x = rng.uniform(-6, 6)
            while abs(x - th[2]) < 1e-3:
                x = rng.uniform(-6, 6)
            worst = max(worst, L.fd_gradient_error(approx, th, np.array([x])))
        return worst

    worst, dt = timed(run)
    ok = worst < 1e-5 and dt < 1.0
    return report(9, "gradient checks", ok, f"max relative error {worst:.2e} (< 1e-5), runtime {dt:.3f} s (< 1 s)")


def learning_errors(seeds=range(10), episodes=100):
    """|theta3 - xhat| after episode 1 and after the last episode, per seed.

    A run that diverges keeps its last finite parameters, as the learning
    loop reports them.
    """
    m = make_exp_cost_model(PARAMS, 20.0)
    xhat = solve_benchmark(PARAMS).xhat
    qf = L.benchmark_qfunctions(PARAMS.c, PARAMS.beta)
    cfg = L.LearnConfig(
        alphas=(np.array([0.5, 0.7, 1.8]), 0.0, 0.0),
        schedule=L.geometric_schedule(1.055),
        episodes=episodes,
        sim=SimConfig.for_model(m, 0.02),
    )
    theta0 = L.initial_benchmark_params(GUESS)
    first, final, diverged = [], [], 0
    for seed in seeds:
        try:
            hist = L.run_learning(m, L.SIMPLIFIED_TD0, theta0, qf, cfg, INIT, seed=seed)
        except L.LearningDiverged as err:
            hist = err.history
            diverged += 1
        first.append(abs(hist[min(1, len(hist) - 1)].J[2] - xhat))
        final.append(abs(hist[-1].J[2] - xhat))
    return np.array(first), np.array(final), diverged


def criterion_10():
    (first, final, diverged), dt = timed(learning_errors)
    med1, med100 = float(np.median(first)), float(np.median(final))
    ok = med100 < 0.15 and med100 < med1 and dt < 900
    return report(10, "learning experiment", ok,
                  f"median |theta3 - xhat| episode 1 = {med1:.3g}, final = {med100:.3g} (< 0.15 and < episode 1), "
                  f"{diverged}/10 seeds diverged, runtime {dt:.0f} s (< 900 s)")


CRITERIA = [criterion_1, criterion_2, criterion_3, criterion_4, criterion_5,
            criterion_6, criterion_7, criterion_8, criterion_9, criterion_10]


@pytest.mark.parametrize("criterion", CRITERIA, ids=[f"criterion_{i}" for i in range(1, 11)])
def test_criterion(criterion):
    assert criterion()


if __name__ == "__main__":
    import sys

    sys.exit(0 if all([c() for c in CRITERIA]) else 1)
