"""Command-line experiment runner.

Every subcommand reads one TOML config (``--config``, defaulting to the
bundled benchmark), applies flag overrides, writes its artifacts to
``--out`` and records a ``manifest.json`` next to them.

Exit codes: 0 success, 1 invalid configuration, 2 numerical/runtime failure,
3 a ``verify`` check failed.
"""
from __future__ import annotations

import argparse
import csv
import json
import re
import sys
from pathlib import Path
from typing import Callable

import numpy as np
import tomli

from . import __version__
from . import config as C
from . import learn as L
from . import oracle as O
from . import sim as S
from .law import NoProjection, ThresholdLaw
from .model import AugmentedState, ModelError, ModelSpec, check_cost_translation, check_vol_nonnegative

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME, EXIT_VERIFY = 0, 1, 2, 3


class VerifyFailed(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# helpers


def _boundary(spec, sol: O.ClosedFormSolution, key: str) -> float:
    """A number, ``"xhat"`` or ``"xhat+d"`` / ``"xhat-d"``."""
    if isinstance(spec, (int, float)) and not isinstance(spec, bool):
        return float(spec)
    m = re.fullmatch(r"\s*xhat\s*(?:([+-])\s*([0-9.eE+-]+))?\s*", str(spec))
    if not m:
        raise C.ConfigError(f"config key '{key}' must be a number or 'xhat[+/-d]', got {spec!r}")
    off = float(m.group(2)) if m.group(2) else 0.0
    return sol.xhat + (off if m.group(1) != "-" else -off)


def _sim_config(cfg, m: ModelSpec, paths: int) -> S.SimConfig:
    sim = cfg["sim"]
    return S.SimConfig.for_model(
        m, float(sim["dt"]), t0=float(sim["t0"]), seed=int(sim["seed"]), n_paths=int(paths)
    )


def _init(cfg) -> AugmentedState:
    sim = cfg["sim"]
    return AugmentedState(float(sim["x0"]), float(sim["t0"]), float(sim["y0"]))


def _write_rows(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([v if isinstance(v, (str, int)) else f"{v:.17g}" for v in row])


# ---------------------------------------------------------------------------
# subcommands; each returns the list of files it wrote


def cmd_oracle(cfg, out: Path, args) -> list[str]:
    sol = O.solve_benchmark(C.params(cfg))
    print(f"lambda2 = {sol.lambda2:.17g}")
    print(f"K1      = {sol.K1:.17g}")
    print(f"C2      = {sol.C2:.17g}")
    print(f"xhat    = {sol.xhat:.17g}")
    _write_rows(out / "oracle.csv", ("lambda2", "K1", "C2", "xhat"),
                [(sol.lambda2, sol.K1, sol.C2, sol.xhat)])
    g = cfg["grid"]
    grid = C.parse_grid(f"{g['lo']}:{g['hi']}:{g['step']}")
    V = O.value(sol, grid)
    q0, q1 = O.q0_closed(sol, grid), O.q1_closed(sol, grid)
    _write_rows(out / "oracle_grid.csv", ("x", "V", "q0", "q1"), zip(grid, V, q0, q1))
    print(f"grid: {len(grid)} rows")
    return ["oracle.csv", "oracle_grid.csv"]


def cmd_simulate(cfg, out: Path, args) -> list[str]:
    m = C.model(cfg)
    sol = O.solve_benchmark(C.params(cfg))
    law = ThresholdLaw(_boundary(cfg["law"]["boundary"], sol, "law.boundary"))
    sc = _sim_config(cfg, m, int(cfg["sim"]["paths"]))
    tr = S.simulate_paths(m, law, _init(cfg), sc)
    S.write_trajectory_csv(tr, out / "trajectory.csv", with_path_index=sc.n_paths > 1)
    cost = S.discounted_cost(tr, m)
    print(f"paths = {sc.n_paths}, steps = {sc.n_steps}, boundary = {law.boundary:.17g}")
    print(f"mean discounted cost = {float(np.mean(cost)):.17g}")
    return ["trajectory.csv"]


def cmd_evaluate(cfg, out: Path, args) -> list[str]:
    m = C.model(cfg)
    sol = O.solve_benchmark(C.params(cfg))
    sc = _sim_config(cfg, m, int(cfg["evaluate"]["paths"]))
    dW = S.brownian_increments(sc)
    init = _init(cfg)
    rows = []
    b = _boundary(cfg["law"]["boundary"], sol, "law.boundary")
    costs = {b: S.discounted_cost(S.simulate_paths(m, ThresholdLaw(b), init, sc, dW), m)}
    other = cfg["evaluate"].get("compare_boundary")
    if other is not None:
        b2 = _boundary(other, sol, "evaluate.compare_boundary")
        costs[b2] = S.discounted_cost(S.simulate_paths(m, ThresholdLaw(b2), init, sc, dW), m)
    n = sc.n_paths
    for bb, cst in costs.items():
        se = float(np.std(cst, ddof=1) / np.sqrt(n)) if n > 1 else float("nan")
        rows.append(("law", bb, float(np.mean(cst)), se))
        print(f"boundary {bb:.6g}: mean {np.mean(cst):.6f}  stderr {se:.6f}")
    if other is not None:
        diff = costs[b2] - costs[b]
        se = float(np.std(diff, ddof=1) / np.sqrt(n)) if n > 1 else float("nan")
        rows.append(("difference", b2 - b, float(np.mean(diff)), se))
        print(f"CRN difference (second - first): {np.mean(diff):.6f}  stderr {se:.6f}")
    if init.t == sc.t0 and C.get(cfg, "horizon.kind") == "infinite":
        print(f"closed-form V({init.x:g}) = {float(O.value(sol, init.x)):.6f}")
    _write_rows(out / "evaluate.csv", ("kind", "boundary", "mean", "stderr"), rows)
    return ["evaluate.csv"]


def cmd_pi_iterate(cfg, out: Path, args) -> list[str]:
    sol = O.solve_benchmark(C.params(cfg))
    pi = cfg["pi"]
    xs = O.pi_iterate(sol, float(pi["x0"]), int(pi["max_iter"]), float(pi["tol"]))
    _write_rows(out / "pi_iterate.csv", ("iteration", "boundary"), enumerate(xs))
    two_step = not O.two_step_violations(sol, xs)
    print(f"xhat = {sol.xhat:.17g}")
    print(f"iterations = {len(xs) - 1}, final = {xs[-1]:.17g}, |error| = {abs(xs[-1] - sol.xhat):.3g}")
    print(f"two-step decrease above xhat: {'yes' if two_step else 'NO'}")
    return ["pi_iterate.csv"]


def _schedule(spec) -> Callable[[int], float]:
    kind = spec.get("kind")
    if kind == "geometric":
        return L.geometric_schedule(float(spec["rate"]))
    if kind == "constant":
        value = float(spec["value"])
        return lambda m: value
    raise C.ConfigError(f"config key 'learn.schedule.kind' must be 'geometric' or 'constant', got {kind!r}")


def cmd_learn(cfg, out: Path, args) -> list[str]:
    from .model import ExpCostParams
    from .svg import COLORS, Panel, line_panels

    lc = cfg["learn"]
    algo = args.algo or lc["algo"]
    m = C.model(cfg)
    p = C.params(cfg)
    g = lc["guess"]
    guess = ExpCostParams(float(g["mu"]), float(g["sigma"]), float(g["a"]), p.c, p.beta)
    theta0 = L.initial_benchmark_params(guess)
    qf = L.benchmark_qfunctions(p.c, p.beta)
    lcfg = L.LearnConfig(
        alphas=(np.asarray(lc["alpha_theta"], dtype=float), 0.0, 0.0),
        schedule=_schedule(lc["schedule"]),
        episodes=int(lc["episodes"]),
        sim=_sim_config(cfg, m, 1),
        normalize_rates=bool(lc["normalize_rates"]),
    )
    failure = None
    try:
        history = L.run_learning(m, algo, theta0, qf, lcfg, _init(cfg))
    except L.LearningDiverged as err:
        history, failure = err.history, err
    L.write_history_csv(history, out / "learn_history.csv")

    truth = L.BenchmarkTheta.from_params(p).array
    th = np.array([h.J for h in history])
    panels = [
        Panel(f"theta{k + 1} (dashed: true value)", th[:, k], float(truth[k]), COLORS[k]) for k in range(3)
    ]
    (out / "learn_theta.svg").write_text(line_panels(np.arange(len(th)), panels, "episode"))
    final = th[-1]
    print(f"episodes completed = {len(th) - 1}")
    print(f"final theta = [{final[0]:.6f}, {final[1]:.6f}, {final[2]:.6f}]")
    print(f"true  theta = [{truth[0]:.6f}, {truth[1]:.6f}, {truth[2]:.6f}]")
    print(f"|theta3 - xhat| = {abs(final[2] - truth[2]):.6f}")
    if failure is not None:
        raise failure
    return ["learn_history.csv", "learn_theta.svg"]


def _verify_checks(cfg) -> list[tuple[str, bool, str]]:
    v = cfg["verify"]
    p = C.params(cfg)
    sol = O.solve_benchmark(p)
    checks = []

    cand = sol
    if float(v["perturb_xhat"]) != 0.0:
        cand = O.shifted_solution(sol, sol.xhat + float(v["perturb_xhat"]))
    grid = np.round(np.arange(-500, 501) * 0.01, 12)
    grid = grid[np.abs(grid - cand.xhat) > 1e-9]
    res, where = O.hjb_residual(cand, grid)
    checks.append(("HJB residual < 1e-8", res < 1e-8, f"max {res:.3g} at x = {where:.3g}"))

    m = C.model(cfg)
    drift = float(v["control_cost_drift"])
    if drift != 0.0:
        cc = m.control_cost
        m = ModelSpec(m.drift, m.vol, m.running_cost,
                      lambda x, t, y: cc(x, t, y) + drift * np.asarray(x, dtype=float),
                      m.discount, m.horizon, m.terminal_cost)
    rng = np.random.default_rng(int(cfg["sim"]["seed"]))
    samples = [(AugmentedState(*rng.uniform(-5, 5, 3)), float(rng.uniform(0, 5))) for _ in range(200)]
    rep = check_cost_translation(m, samples)
    checks.append(("control cost translation invariant", rep.ok, f"max deviation {rep.max_deviation:.3g}"))
    vmin = check_vol_nonnegative(m, [s for s, _ in samples])
    checks.append(("volatility nonnegative", vmin >= 0, f"min {vmin:.3g}"))

    probes = rng.uniform(-5, 5, 100)
    theta_true = L.BenchmarkTheta.from_params(p).array
    qf = L.benchmark_qfunctions(p.c, p.beta)
    worst = 0.0
    for x in probes:
        th = theta_true + rng.normal(0, 0.1, 3)
        if abs(x - th[2]) < 1e-3:
            continue
        for approx in (qf.J, qf.q0, qf.q1):
            worst = max(worst, L.fd_gradient_error(approx, th, np.array([x])))
    checks.append(("analytic gradients match finite differences", worst < 1e-5, f"max rel err {worst:.3g}"))

    bench = C.model(cfg)
    sc = S.SimConfig.for_model(bench, float(cfg["sim"]["dt"]), seed=int(cfg["sim"]["seed"]) + 1,
                               n_paths=int(v["paths"]))
    tr = S.simulate_paths(bench, ThresholdLaw(sol.xhat), _init(cfg), sc)
    y_path = np.concatenate([tr.y_pre, tr.y_post, tr.y_next], axis=-1)
    ok_mono = bool(np.all(tr.jump >= 0) and np.all(tr.cont >= 0) and np.all(tr.y_post >= tr.y_pre)
                   and np.all(tr.y_next >= tr.y_post))
    over = float(np.max(np.concatenate([tr.x_post, tr.x_next], axis=-1) - sol.xhat))
    comp = int(np.sum((tr.jump > 0) & (np.abs(tr.x_post - sol.xhat) > 1e-12))
               + np.sum((tr.cont > 0) & (np.abs(tr.x_next - sol.xhat) > 1e-12)))
    checks.append(("control nondecreasing", ok_mono, f"min y {np.min(y_path):.3g}"))
    checks.append(("x <= boundary after reflection", over <= 1e-12, f"max overshoot {over:.3g}"))
    checks.append(("complementarity (control only at the boundary)", comp == 0, f"{comp} violations"))

    truth = L.ParamSet.shared_vector(theta_true)
    G, Gm = L.td0_deltas(tr, qf, truth, p.beta)
    sums = np.sum(G + Gm, axis=-1)
    mean, se = float(np.mean(sums)), float(np.std(sums, ddof=1) / np.sqrt(sums.size))
    checks.append(("martingale at truth (TD sums, 3 stderr)", abs(mean) < 3 * se, f"mean {mean:.4g}, stderr {se:.4g}"))
    return checks


def cmd_verify(cfg, out: Path, args) -> list[str]:
    checks = _verify_checks(cfg)
    for name, ok, detail in checks:
        print(f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}")
    _write_rows(out / "verify.csv", ("check", "passed", "detail"),
                [(n, str(ok).lower(), d) for n, ok, d in checks])
    if not all(ok for _, ok, _ in checks):
        raise VerifyFailed(f"{sum(not ok for _, ok, _ in checks)} check(s) failed")
    return ["verify.csv"]


COMMANDS = {
    "oracle": cmd_oracle,
    "simulate": cmd_simulate,
    "evaluate": cmd_evaluate,
    "pi-iterate": cmd_pi_iterate,
    "learn": cmd_learn,
    "verify": cmd_verify,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="singular-rl", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", help="TOML config (default: bundled benchmark)")
        sp.add_argument("--seed", type=int, help="override sim.seed")
        sp.add_argument("--out", default=".", help="output directory")
        sp.add_argument("--paths", type=int, help="number of simulated paths")
        sp.add_argument("--grid", help="lo:hi:step grid for oracle output")
        sp.add_argument("--algo", choices=L.ALGORITHMS, help="learning algorithm")
    return ap


def _effective_config(args) -> dict:
    if args.config:
        cfg = C.load(args.config)
    else:
        cfg = C.from_mapping(tomli.loads(C.default_config_text()))
    if args.seed is not None:
        C.set_key(cfg, "sim.seed", args.seed)
    if args.paths is not None:
        key = {"evaluate": "evaluate.paths", "verify": "verify.paths"}.get(args.command, "sim.paths")
        C.set_key(cfg, key, args.paths)
    if args.grid is not None:
        C.parse_grid(args.grid)
        lo, hi, step = (float(v) for v in args.grid.split(":"))
        C.set_key(cfg, "grid", {"lo": lo, "hi": hi, "step": step})
    if args.algo is not None:
        C.set_key(cfg, "learn.algo", args.algo)
    return cfg


def _join_grid(argv: list[str]) -> list[str]:
    # "--grid -5:5:0.01" would otherwise be read as an unknown option
    out, i = [], 0
    while i < len(argv):
        if argv[i] == "--grid" and i + 1 < len(argv):
            out.append(f"--grid={argv[i + 1]}")
            i += 2
        else:
            out.append(argv[i])
            i += 1
    return out


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    args = build_parser().parse_args(_join_grid(argv))
    try:
        cfg = _effective_config(args)
        C.params(cfg)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        outputs = COMMANDS[args.command](cfg, out, args)
    except (C.ConfigError, ModelError, tomli.TOMLDecodeError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except VerifyFailed as err:
        print(f"verify failed: {err}", file=sys.stderr)
        return EXIT_VERIFY
    except (NoProjection, L.LearningDiverged, O.RootNotBracketed, ArithmeticError, ValueError) as err:
        print(f"numerical error: {err}", file=sys.stderr)
        return EXIT_RUNTIME
    manifest = {
        "command": args.command,
        "config_digest": C.digest(cfg),
        "seed": int(cfg["sim"]["seed"]),
        "tool_version": __version__,
        "outputs": outputs,
        "config": cfg,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
