"""q-learning for singular control laws via martingale characterizations.

Three parameterized functions are learned: the value J, the zero-order
q-function q0 (its sign marks where acting is cheaper than waiting) and the
first-order q-function q1 (the generator residual).  Along a trajectory the
process

    e^{-beta r} J(X_r) + int e^{-beta s} (H - q1) ds + int e^{-beta s} (c - q0) dxi_s

must be a martingale; the updates below drive its discretized increments to
zero, either through squared-increment losses (offline) or through
orthogonality conditions (TD(0), online).

The learning code only reads what a trajectory records (states, control
increments, realized H and c samples) and the discount rate; drift and
volatility are never queried.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np

from .law import ControlLaw, ThresholdLaw, improved_law
from .model import AugmentedState, ExpCostParams, ModelSpec
from .sim import SimConfig, StepRecord, Trajectory, simulate, step

OFFLINE_ML = "offline-ml"
ONLINE_TD0 = "td0"
SIMPLIFIED_TD0 = "td0-simplified"
ALGORITHMS = (OFFLINE_ML, ONLINE_TD0, SIMPLIFIED_TD0)


class LearningDiverged(RuntimeError):
    """Parameters became non-finite; ``history`` ends at the last finite value."""

    def __init__(self, msg, history):
        super().__init__(msg)
        self.history = history


@dataclass(frozen=True)
class Approximator:
    """A parameterized function ``eval(params, x, t, y)`` with its parameter gradient.

    ``grad`` returns an array of shape ``x.shape + (param_dim,)``.
    """

    eval: Callable
    grad: Callable
    param_dim: int


@dataclass(frozen=True)
class QFunctions:
    J: Approximator
    q0: Approximator
    q1: Approximator


@dataclass(frozen=True)
class ParamSet:
    """Parameters of (J, q0, q1).

    With ``shared`` all three views are the same vector (the benchmark
    parameterization), and only the J-update is applied.
    """

    J: np.ndarray
    q0: np.ndarray
    q1: np.ndarray
    shared: bool = False

    @classmethod
    def shared_vector(cls, theta) -> "ParamSet":
        theta = np.array(theta, dtype=float)
        return cls(theta, theta, theta, shared=True)

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(v)) for v in (self.J, self.q0, self.q1))


def _schedule_default(m: int) -> float:
    return 1.0


@dataclass(frozen=True)
class LearnConfig:
    """Learning rates ``(alpha_J, alpha_q0, alpha_q1)``, schedule l(m), episode count.

    Each rate may be a scalar or a per-coordinate array.
    """

    alphas: tuple = (1.0, 1.0, 1.0)
    schedule: Callable[[int], float] = _schedule_default
    episodes: int = 1
    sim: SimConfig = field(default_factory=SimConfig)
    normalize_rates: bool = False


def geometric_schedule(rate: float) -> Callable[[int], float]:
    """l(m) = rate^{-m}."""

    def l(m: int) -> float:
        return rate ** (-m)

    l.rate = rate
    return l


def fd_gradient_error(approx: Approximator, params, x, t=0.0, y=0.0, h=1e-6) -> float:
    """Max relative error between ``grad`` and central differences of ``eval``."""
    params = np.asarray(params, dtype=float)
    g = np.asarray(approx.grad(params, x, t, y), dtype=float)
    fd = np.empty_like(g)
    for k in range(approx.param_dim):
        e = np.zeros_like(params)
        e[k] = h
        fd[..., k] = (approx.eval(params + e, x, t, y) - approx.eval(params - e, x, t, y)) / (2 * h)
    scale = np.maximum(np.abs(fd), 1e-8 + 1e-3 * np.max(np.abs(fd)))
    return float(np.max(np.abs(g - fd) / scale))


# ---------------------------------------------------------------------------
# Benchmark parameterization: e^{theta1} = a, e^{theta2} = lambda2 - a, theta3 = xhat


@dataclass(frozen=True)
class BenchmarkTheta:
    theta1: float
    theta2: float
    theta3: float

    @property
    def array(self) -> np.ndarray:
        return np.array([self.theta1, self.theta2, self.theta3])

    @property
    def a(self) -> float:
        return math.exp(self.theta1)

    @property
    def lambda2(self) -> float:
        return math.exp(self.theta1) + math.exp(self.theta2)

    @property
    def xhat(self) -> float:
        return self.theta3

    @classmethod
    def from_params(cls, p: ExpCostParams) -> "BenchmarkTheta":
        """Encoding of the closed-form solution for parameters ``p``."""
        from .oracle import solve_benchmark

        sol = solve_benchmark(p)
        return cls(math.log(p.a), math.log(sol.lambda2 - p.a), sol.xhat)


def _bench_parts(theta, x):
    theta = np.asarray(theta, dtype=float)
    A, B = np.exp(theta[0]), np.exp(theta[1])
    L = A + B
    u = np.asarray(x, dtype=float) - theta[2]
    uc = np.minimum(u, 0.0)
    EA, EL = np.exp(A * uc), np.exp(L * uc)
    return A, B, L, u, uc, EA, EL


def _bench_value(c):
    def ev(theta, x, t=None, y=None):
        A, B, L, u, uc, EA, EL = _bench_parts(theta, x)
        return c * ((1 / A + 1 / B) * EA - A / (B * L) * EL + np.maximum(u, 0.0))

    def grad(theta, x, t=None, y=None):
        A, B, L, u, uc, EA, EL = _bench_parts(theta, x)
        dA = -EA / A**2 + (1 / A + 1 / B) * uc * EA - EL / L**2 - A / (B * L) * uc * EL
        dB = -EA / B**2 + A * (L + B) / (B * L) ** 2 * EL - A / (B * L) * uc * EL
        fu = np.where(u < 0, (1 + A / B) * EA - A / B * EL, 1.0)
        return c * np.stack([A * dA, B * dB, -fu], axis=-1)

    return Approximator(ev, grad, 3)


def _bench_q0(c):
    def ev(theta, x, t=None, y=None):
        A, B, L, u, uc, EA, EL = _bench_parts(theta, x)
        fu = (1 + A / B) * EA - A / B * EL
        return np.where(u < 0, c * (1 - fu), 0.0)

    def grad(theta, x, t=None, y=None):
        A, B, L, u, uc, EA, EL = _bench_parts(theta, x)
        dA = EA / B + (1 + A / B) * uc * EA - EL / B - A / B * uc * EL
        dB = -A / B**2 * EA + A / B**2 * EL - A / B * uc * EL
        fuu = A * (1 + A / B) * EA - L * A / B * EL
        g = -c * np.stack([A * dA, B * dB, -fuu], axis=-1)
        return np.where((u < 0)[..., None], g, 0.0)

    return Approximator(ev, grad, 3)


def _bench_q1(c, beta):
    # e^{a x} - beta V + mu c with mu c eliminated through the boundary identity
    # e^{a xhat} - beta V(xhat) + mu c = 0
    def ev(theta, x, t=None, y=None):
        A = np.exp(theta[0])
        x = np.asarray(x, dtype=float)
        u = x - theta[2]
        return np.where(u < 0, 0.0, np.exp(A * x) - np.exp(A * theta[2]) - beta * c * u)

    def grad(theta, x, t=None, y=None):
        A = np.exp(theta[0])
        x = np.asarray(x, dtype=float)
        u = x - theta[2]
        e3 = np.exp(A * theta[2])
        g = np.stack(
            [A * (x * np.exp(A * x) - theta[2] * e3), np.zeros_like(x), np.full_like(x, beta * c - A * e3)],
            axis=-1,
        )
        return np.where((u < 0)[..., None], 0.0, g)

    return Approximator(ev, grad, 3)


def benchmark_approximator(c: float) -> Approximator:
    """Value-function approximator V^theta for the benchmark (x-only)."""
    return _bench_value(c)


def benchmark_qfunctions(c: float, beta: float) -> QFunctions:
    """(V, q0, q1) all induced by the same theta."""
    return QFunctions(_bench_value(c), _bench_q0(c), _bench_q1(c, beta))


def benchmark_law(params: ParamSet) -> ThresholdLaw:
    """The waiting region ``{x < theta3}``."""
    return ThresholdLaw(float(params.J[2]))


def generic_law(qf: QFunctions, **kw) -> Callable[[ParamSet], ControlLaw]:
    """Law update ``W <- int{q1 <= 0 and q0 >= 0}`` from the current q-parameters."""

    def make(params: ParamSet) -> ControlLaw:
        return improved_law(
            lambda x, t, y: qf.q0.eval(params.q0, x, t, y),
            lambda x, t, y: qf.q1.eval(params.q1, x, t, y),
            **kw,
        )

    return make


def restrict_to_waiting(approx: Approximator, law: ControlLaw) -> Approximator:
    """Multiply ``approx`` by the indicator of the waiting region of ``law``.

    Makes a raw q0 approximator vanish on the action region, as the q-function
    of a law must.
    """

    def ev(p, x, t, y):
        return np.where(law.waiting(x, t, y), approx.eval(p, x, t, y), 0.0)

    def grad(p, x, t, y):
        return np.where(law.waiting(x, t, y)[..., None], approx.grad(p, x, t, y), 0.0)

    return Approximator(ev, grad, approx.param_dim)


# ---------------------------------------------------------------------------
# Martingale increments


def _discounts(tr: Trajectory, beta: float):
    return np.exp(-beta * (tr.r - tr.t0)), math.exp(-beta * (tr.T - tr.t0))


def _end_value(tr: Trajectory, J: Approximator, theta_J, d_end):
    """Terminal term: e^{-beta T} F for finite horizons, e^{-beta T} J(X_T) at truncation."""
    if tr.F_T is not None:
        return d_end * tr.F_T
    return d_end * J.eval(theta_J, tr.x_end, tr.T, tr.y_end)


def _suffix_sum(v):
    return np.flip(np.cumsum(np.flip(v, axis=-1), axis=-1), axis=-1)


def pe_martingale_deltas(tr: Trajectory, J: Approximator, theta_J, beta: float) -> np.ndarray:
    """Discretized M_{r_N} - M_{r_j-} for every grid index j (policy evaluation)."""
    d, d_end = _discounts(tr, beta)
    flow = d * (tr.H_bar * tr.dt + tr.c_pre * tr.jump + tr.c_bar * tr.cont)
    end = _end_value(tr, J, theta_J, d_end) + d_end * tr.c_pre_end * tr.jump_end
    J_pre = J.eval(theta_J, tr.x_pre, tr.r, tr.y_pre)
    return end[..., None] + _suffix_sum(flow) - d * J_pre


def q_martingale_deltas(tr: Trajectory, qf: QFunctions, params: ParamSet, beta: float) -> np.ndarray:
    """As ``pe_martingale_deltas`` with costs net of q1 dt and q0 dxi."""
    d, d_end = _discounts(tr, beta)
    r = tr.r
    q1_post = qf.q1.eval(params.q1, tr.x_post, r, tr.y_post)
    q0_post = qf.q0.eval(params.q0, tr.x_post, r, tr.y_post)
    q0_pre = qf.q0.eval(params.q0, tr.x_pre, r, tr.y_pre)
    flow = d * (
        (tr.H_bar - q1_post) * tr.dt + (tr.c_pre - q0_pre) * tr.jump + (tr.c_bar - q0_post) * tr.cont
    )
    q0_end = qf.q0.eval(params.q0, tr.x_end, tr.T, tr.y_end)
    end = _end_value(tr, qf.J, params.J, d_end) + d_end * (tr.c_pre_end - q0_end) * tr.jump_end
    J_pre = qf.J.eval(params.J, tr.x_pre, r, tr.y_pre)
    return end[..., None] + _suffix_sum(flow) - d * J_pre


def ml_loss(tr: Trajectory, J: Approximator, theta_J, beta: float) -> float:
    """Martingale loss: sum of squared increments, averaged over paths."""
    deltas = pe_martingale_deltas(tr, J, theta_J, beta)
    return float(np.mean(np.sum(deltas**2, axis=-1)))


def _rates(cfg: LearnConfig, dt: float):
    aJ, aq0, aq1 = (np.asarray(a, dtype=float) for a in cfg.alphas)
    if cfg.normalize_rates:
        return aJ / dt, aq0 / dt, aq1 / dt**2
    return aJ, aq0, aq1


def ml_offline_update(
    tr: Trajectory, qf: QFunctions, params: ParamSet, cfg: LearnConfig, m: int, beta: float
) -> ParamSet:
    """One offline martingale-loss step from a complete single-path trajectory.

    J follows the policy-evaluation increments; q1 and q0 follow the
    increments net of q-costs, with the (dt)^2 and dt factors as in the
    offline update rules and the q0 gradient split between jumps and
    continuous control.
    """
    if tr.x_pre.ndim != 1:
        raise ValueError("offline update takes a single trajectory")
    aJ, aq0, aq1 = _rates(cfg, tr.dt)
    lm = cfg.schedule(m)
    dt = tr.dt
    d, d_end = _discounts(tr, beta)
    r = tr.r

    R = pe_martingale_deltas(tr, qf.J, params.J, beta)
    gJ = qf.J.grad(params.J, tr.x_pre, r, tr.y_pre)
    new_J = params.J + lm * aJ * dt * np.sum((R * d)[:, None] * gJ, axis=0)
    if params.shared:
        return ParamSet.shared_vector(new_J)

    Q = q_martingale_deltas(tr, qf, params, beta)
    g1 = qf.q1.grad(params.q1, tr.x_post, r, tr.y_post)
    S1 = _suffix_sum((d[:, None] * g1).T).T
    new_q1 = params.q1 + lm * aq1 * dt**2 * np.sum(Q[:, None] * S1, axis=0)

    g0_pre = qf.q0.grad(params.q0, tr.x_pre, r, tr.y_pre)
    g0_post = qf.q0.grad(params.q0, tr.x_post, r, tr.y_post)
    g0_end = qf.q0.grad(params.q0, np.atleast_1d(tr.x_end), tr.T, np.atleast_1d(tr.y_end))[0]
    w = d[:, None] * (g0_pre * tr.jump[:, None] + g0_post * tr.cont[:, None])
    S0 = _suffix_sum(w.T).T + d_end * g0_end * tr.jump_end
    new_q0 = params.q0 + lm * aq0 * dt * np.sum(Q[:, None] * S0, axis=0)
    return ParamSet(new_J, new_q0, new_q1)


def td0_deltas(tr: Trajectory, qf: QFunctions, params: ParamSet, beta: float):
    """Per-step (G_n, G_{n-}): continuous and jump martingale differences.

    G_n  = M_{r_{n+1}-} - M_{r_n},   G_{n-} = M_{r_n} - M_{r_n-}.
    """
    d, _ = _discounts(tr, beta)
    r = tr.r
    d_next = np.exp(-beta * (r + tr.dt - tr.t0))
    J_next = qf.J.eval(params.J, tr.x_next, r + tr.dt, tr.y_next)
    J_post = qf.J.eval(params.J, tr.x_post, r, tr.y_post)
    J_pre = qf.J.eval(params.J, tr.x_pre, r, tr.y_pre)
    q1_post = qf.q1.eval(params.q1, tr.x_post, r, tr.y_post)
    q0_post = qf.q0.eval(params.q0, tr.x_post, r, tr.y_post)
    q0_pre = qf.q0.eval(params.q0, tr.x_pre, r, tr.y_pre)
    G = (
        d_next * J_next - d * J_post
        + d * (tr.H_bar - q1_post) * tr.dt
        + d * (tr.c_bar - q0_post) * tr.cont
    )
    G_minus = d * (J_post - J_pre + (tr.c_pre - q0_pre) * tr.jump)
    return G, G_minus


def td0_step_deltas(rec: StepRecord, qf: QFunctions, params: ParamSet, beta: float, t0: float = 0.0):
    """(G_n, G_{n-}) for one recorded step."""
    pre, post, nxt = rec.pre_state, rec.post_state, rec.next_pre_state
    d = math.exp(-beta * (pre.t - t0))
    d_next = math.exp(-beta * (nxt.t - t0))
    dt = nxt.t - pre.t
    J, q0, q1 = qf.J.eval, qf.q0.eval, qf.q1.eval
    J_post = float(J(params.J, post.x, post.t, post.y))
    G = (
        d_next * float(J(params.J, nxt.x, nxt.t, nxt.y)) - d * J_post
        + d * (rec.H_bar - float(q1(params.q1, post.x, post.t, post.y))) * dt
        + d * (rec.c_bar - float(q0(params.q0, post.x, post.t, post.y))) * rec.cont_increment
    )
    G_minus = d * (
        J_post - float(J(params.J, pre.x, pre.t, pre.y))
        + (rec.c_pre - float(q0(params.q0, pre.x, pre.t, pre.y))) * rec.jump
    )
    return G, G_minus


def td0_online_update(
    rec: StepRecord, qf: QFunctions, params: ParamSet, cfg: LearnConfig, m: int, beta: float,
    t0: float = 0.0,
) -> ParamSet:
    """theta += l(m) alpha [G_n grad(post) + G_{n-} grad(pre)] for J, q1 and q0."""
    G, G_minus = td0_step_deltas(rec, qf, params, beta, t0)
    dt = rec.next_pre_state.t - rec.pre_state.t
    aJ, aq0, aq1 = _rates(cfg, dt)
    lm = cfg.schedule(m)
    pre, post = rec.pre_state, rec.post_state

    def upd(approx, theta, alpha):
        g = G * approx.grad(theta, post.x, post.t, post.y) + G_minus * approx.grad(theta, pre.x, pre.t, pre.y)
        return theta + lm * alpha * np.asarray(g, dtype=float)

    new_J = upd(qf.J, params.J, aJ)
    if params.shared:
        return ParamSet.shared_vector(new_J)
    return ParamSet(new_J, upd(qf.q0, params.q0, aq0), upd(qf.q1, params.q1, aq1))


def td0_simplified_update(
    rec: StepRecord, qf: QFunctions, params: ParamSet, cfg: LearnConfig, m: int, beta: float,
    t0: float = 0.0,
) -> ParamSet:
    """Known control cost: only the continuous difference G_n drives the update."""
    G, _ = td0_step_deltas(rec, qf, params, beta, t0)
    dt = rec.next_pre_state.t - rec.pre_state.t
    aJ, aq0, aq1 = _rates(cfg, dt)
    lm = cfg.schedule(m)
    post = rec.post_state

    def upd(approx, theta, alpha):
        return theta + lm * alpha * G * np.asarray(approx.grad(theta, post.x, post.t, post.y), dtype=float)

    new_J = upd(qf.J, params.J, aJ)
    if params.shared:
        return ParamSet.shared_vector(new_J)
    return ParamSet(new_J, upd(qf.q0, params.q0, aq0), upd(qf.q1, params.q1, aq1))


def orthogonality_residuals(
    tr: Trajectory,
    qf: QFunctions,
    params: ParamSet,
    beta: float,
    test_functions: Optional[Sequence[Callable]] = None,
) -> np.ndarray:
    """sum_n psi(post_n) G_n + psi(pre_n) G_{n-} for each test function psi.

    Test functions map ``(x, t, y)`` to a scalar or a vector per point; the
    default is the parameter gradients of J, q1 and q0.  Results are
    concatenated along the last axis.
    """
    if test_functions is None:
        test_functions = [
            lambda x, t, y: qf.J.grad(params.J, x, t, y),
            lambda x, t, y: qf.q1.grad(params.q1, x, t, y),
            lambda x, t, y: qf.q0.grad(params.q0, x, t, y),
        ]
    G, G_minus = td0_deltas(tr, qf, params, beta)
    r = np.broadcast_to(tr.r, tr.x_pre.shape)
    out = []
    for psi in test_functions:
        a = np.asarray(psi(tr.x_post, r, tr.y_post), dtype=float)
        b = np.asarray(psi(tr.x_pre, r, tr.y_pre), dtype=float)
        if a.ndim < G.ndim or a.shape == G.shape:
            a, b = np.broadcast_to(a, G.shape), np.broadcast_to(b, G.shape)
            out.append(np.sum(a * G + b * G_minus, axis=-1)[..., None])
        else:
            out.append(np.sum(a * G[..., None] + b * G_minus[..., None], axis=-2))
    return np.concatenate(out, axis=-1)


# ---------------------------------------------------------------------------
# Learning loop


def run_learning(
    env: ModelSpec,
    algo: str,
    params0: ParamSet,
    qf: QFunctions,
    cfg: LearnConfig,
    init: AugmentedState,
    law_fn: Optional[Callable[[ParamSet], ControlLaw]] = None,
    seed: Optional[int] = None,
) -> list[ParamSet]:
    """Run ``cfg.episodes`` episodes; returns ``[params0, after ep 1, ...]``.

    ``law_fn`` maps parameters to the law used for acting; by default the
    threshold ``{x < theta3}`` for shared (benchmark) parameters and the
    q-sign region otherwise.  Offline ML updates once per completed episode;
    the TD(0) variants update and refresh the law after every step.
    """
    if algo not in ALGORITHMS:
        raise ValueError(f"unknown algorithm {algo!r}; expected one of {ALGORITHMS}")
    if law_fn is None:
        law_fn = benchmark_law if params0.shared else generic_law(qf)
    rng = np.random.default_rng(cfg.sim.seed if seed is None else seed)
    with np.errstate(over="ignore", invalid="ignore"):
        return _episodes(env, algo, params0, qf, cfg, init, law_fn, rng, [params0])


def _episodes(env, algo, params, qf, cfg, init, law_fn, rng, history):
    sc = cfg.sim
    beta = env.discount
    for m in range(1, cfg.episodes + 1):
        if algo == OFFLINE_ML:
            tr = simulate(env, law_fn(params), init, replace(sc, n_paths=1), rng)
            params = ml_offline_update(tr, qf, params, cfg, m, beta)
        else:
            update = td0_online_update if algo == ONLINE_TD0 else td0_simplified_update
            dW = rng.standard_normal(sc.n_steps) * math.sqrt(sc.dt)
            s = AugmentedState(init.x, sc.t0, init.y)
            for n in range(sc.n_steps):
                rec = step(env, law_fn(params), s, dW[n], sc.dt)
                t_next = sc.t0 + (n + 1) * sc.dt
                rec = rec._replace(next_pre_state=rec.next_pre_state._replace(t=t_next))
                params = update(rec, qf, params, cfg, m, beta, sc.t0)
                if not params.all_finite():
                    break
                s = rec.next_pre_state
        if not params.all_finite():
            raise LearningDiverged(f"non-finite parameters in episode {m}", history)
        history.append(params)
    return history


def initial_benchmark_params(guess: ExpCostParams) -> ParamSet:
    """Shared theta encoding the closed form of guessed model parameters."""
    return ParamSet.shared_vector(BenchmarkTheta.from_params(guess).array)


HISTORY_COLUMNS = ("episode", "theta1", "theta2", "theta3", "implied_xhat")


def write_history_csv(history: Sequence[ParamSet], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(HISTORY_COLUMNS)
        for m, p in enumerate(history):
            th = np.asarray(p.J, dtype=float)
            w.writerow([m] + [f"{v:.17g}" for v in th[:3]] + [f"{th[2]:.17g}"])
