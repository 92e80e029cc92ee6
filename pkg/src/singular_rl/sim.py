"""Simulation of the reflected state/control pair under a control law.

Each grid step has three phases:

1. jump: project the pre-jump state onto the closure of W (``jump``);
2. diffusion: Euler-Maruyama from the post-jump state;
3. reflection: project the diffused state back (``cont_increment``).

Costs are sampled with the left-endpoint rule.  Arrays in a ``Trajectory``
carry time on the last axis, so the same type holds one path ``(N,)`` or a
batch ``(P, N)``.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np
from scipy.optimize import minimize_scalar

from .law import ControlLaw, NoProjection
from .model import AugmentedState, ModelSpec


@dataclass(frozen=True)
class SimConfig:
    t0: float = 0.0
    n_steps: int = 1000
    dt: float = 0.02
    seed: int = 0
    n_paths: int = 1

    def __post_init__(self):
        if self.n_steps < 1:
            raise ValueError(f"n_steps must be >= 1, got {self.n_steps}")
        if not self.dt > 0:
            raise ValueError(f"dt must be > 0, got {self.dt}")
        if self.n_paths < 1:
            raise ValueError(f"n_paths must be >= 1, got {self.n_paths}")

    @classmethod
    def for_model(cls, m: ModelSpec, dt: float, t0: float = 0.0, **kw) -> "SimConfig":
        n = int(round((m.end_time - t0) / dt))
        cfg = cls(t0=t0, n_steps=n, dt=(m.end_time - t0) / n, **kw)
        cfg.check(m)
        return cfg

    @property
    def end_time(self) -> float:
        return self.t0 + self.n_steps * self.dt

    def check(self, m: ModelSpec) -> None:
        if abs(self.end_time - m.end_time) > 1e-12 * max(1.0, abs(m.end_time)):
            raise ValueError(
                f"t0 + n_steps*dt = {self.end_time!r} does not match the model "
                f"horizon {m.end_time!r}"
            )


class StepRecord(NamedTuple):
    pre_state: AugmentedState
    post_state: AugmentedState
    jump: float
    cont_increment: float
    H_bar: float
    c_pre: float
    c_bar: float
    next_pre_state: AugmentedState


@dataclass(frozen=True)
class Trajectory:
    """Recorded path(s) on the grid ``r_n = t0 + n dt``, n = 0..N-1.

    ``x_end``/``y_end`` are the pre-terminal state at ``r_N``.  For finite
    horizons the terminal projection moves it by ``jump_end`` to
    ``(x_T, y_T)`` and ``F_T`` holds the terminal cost there; for infinite
    horizons ``jump_end`` is zero and ``F_T`` is None.
    """

    t0: float
    dt: float
    x_pre: np.ndarray
    y_pre: np.ndarray
    x_post: np.ndarray
    y_post: np.ndarray
    jump: np.ndarray
    cont: np.ndarray
    H_bar: np.ndarray
    c_pre: np.ndarray
    c_bar: np.ndarray
    x_end: np.ndarray
    y_end: np.ndarray
    jump_end: np.ndarray
    c_pre_end: np.ndarray
    x_T: np.ndarray
    y_T: np.ndarray
    F_T: Optional[np.ndarray] = None

    @property
    def n_steps(self) -> int:
        return self.x_pre.shape[-1]

    @property
    def n_paths(self) -> int:
        return 1 if self.x_pre.ndim == 1 else self.x_pre.shape[0]

    @property
    def r(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.n_steps)

    @property
    def T(self) -> float:
        return self.t0 + self.dt * self.n_steps

    @property
    def x_next(self) -> np.ndarray:
        """Pre-jump level at r_{n+1} for each n."""
        return np.concatenate([self.x_pre[..., 1:], self.x_end[..., None]], axis=-1)

    @property
    def y_next(self) -> np.ndarray:
        return np.concatenate([self.y_pre[..., 1:], self.y_end[..., None]], axis=-1)

    def path(self, i: int) -> "Trajectory":
        if self.x_pre.ndim == 1:
            if i != 0:
                raise IndexError(i)
            return self
        fields = {k: v[i] if isinstance(v, np.ndarray) else v for k, v in self.__dict__.items()}
        return Trajectory(**fields)

    @property
    def terminal(self) -> AugmentedState:
        return AugmentedState(float(self.x_T), self.T, float(self.y_T))

    @property
    def terminal_cost_sample(self) -> Optional[float]:
        return None if self.F_T is None else float(self.F_T)

    @property
    def steps(self) -> list[StepRecord]:
        if self.x_pre.ndim != 1:
            raise ValueError("steps is defined for a single path; use path(i)")
        r = (self.t0 + self.dt * np.arange(self.n_steps + 1)).tolist()
        xn, yn = self.x_next.tolist(), self.y_next.tolist()
        x_pre, y_pre = self.x_pre.tolist(), self.y_pre.tolist()
        x_post, y_post = self.x_post.tolist(), self.y_post.tolist()
        return [
            StepRecord(
                AugmentedState(x_pre[n], r[n], y_pre[n]),
                AugmentedState(x_post[n], r[n], y_post[n]),
                float(self.jump[n]), float(self.cont[n]), float(self.H_bar[n]),
                float(self.c_pre[n]), float(self.c_bar[n]),
                AugmentedState(xn[n], r[n + 1], yn[n]),
            )
            for n in range(self.n_steps)
        ]


def _advance(m: ModelSpec, law: ControlLaw, x, t, y, dW, dt, t_next):
    """One grid step on arrays of paths; returns post, next-pre and costs."""
    x_post, y_post, jump = law.reflect(x, t, y)
    c_pre = m.control_cost(x, t, y)
    H_bar = m.running_cost(x_post, t, y_post)
    c_bar = m.control_cost(x_post, t, y_post)
    x_diff = x_post + m.drift(x_post, t, y_post) * dt + m.vol(x_post, t, y_post) * dW
    x_next, y_next, cont = law.reflect(x_diff, t_next, y_post)
    return x_post, y_post, jump, cont, H_bar, c_pre, c_bar, x_next, y_next


def step(m: ModelSpec, law: ControlLaw, s: AugmentedState, dW: float, dt: float) -> StepRecord:
    if not dt > 0:
        raise ValueError(f"dt must be > 0, got {dt}")
    one = lambda v: np.array([float(v)])
    out = _advance(m, law, one(s.x), one(s.t), one(s.y), one(dW), dt, one(s.t + dt))
    x_post, y_post, jump, cont, H_bar, c_pre, c_bar, x_next, y_next = (float(v[0]) for v in out)
    return StepRecord(
        AugmentedState(s.x, s.t, s.y),
        AugmentedState(x_post, s.t, y_post),
        jump, cont, H_bar, c_pre, c_bar,
        AugmentedState(x_next, s.t + dt, y_next),
    )


def _terminal_increment(m: ModelSpec, x: float, y: float, T: float, a_max: float = 1e6) -> float:
    """argmin_{a >= 0} F(x - a, y + a) + c(x, T, y) a for a convex objective."""
    c = float(m.control_cost(x, T, y))

    def obj(a):
        return float(m.terminal_cost(x - a, y + a)) + c * a

    hi = 1.0
    while hi < a_max and obj(2 * hi) < obj(hi):
        hi *= 2
    hi = min(2 * hi, a_max)
    res = minimize_scalar(obj, bounds=(0.0, hi), method="bounded", options={"xatol": 1e-10})
    return float(res.x) if obj(res.x) < obj(0.0) else 0.0


def brownian_increments(cfg: SimConfig) -> np.ndarray:
    """(n_paths, n_steps) Gaussian increments, one spawned stream per path."""
    children = np.random.SeedSequence(cfg.seed).spawn(cfg.n_paths)
    scale = np.sqrt(cfg.dt)
    return np.stack([np.random.default_rng(c).standard_normal(cfg.n_steps) * scale for c in children])


def path_rng(cfg: SimConfig, i: int) -> np.random.Generator:
    """The generator that drives path ``i`` in ``brownian_increments``."""
    return np.random.default_rng(np.random.SeedSequence(cfg.seed).spawn(i + 1)[i])


def simulate_paths(
    m: ModelSpec,
    law: ControlLaw,
    init: AugmentedState,
    cfg: SimConfig,
    dW: Optional[np.ndarray] = None,
) -> Trajectory:
    """Simulate a batch of paths; pass ``dW`` to reuse common random numbers."""
    if dW is None:
        dW = brownian_increments(cfg)
    dW = np.atleast_2d(np.asarray(dW, dtype=float))
    P, N = dW.shape
    if N != cfg.n_steps:
        raise ValueError(f"dW has {N} steps, config says {cfg.n_steps}")
    names = ("x_pre", "y_pre", "x_post", "y_post", "jump", "cont", "H_bar", "c_pre", "c_bar")
    rec = {k: np.empty((P, N)) for k in names}
    x = np.full(P, float(init.x))
    y = np.full(P, float(init.y))
    for n in range(N):
        t = np.full(P, cfg.t0 + n * cfg.dt)
        t_next = np.full(P, cfg.t0 + (n + 1) * cfg.dt)
        try:
            out = _advance(m, law, x, t, y, dW[:, n], cfg.dt, t_next)
        except NoProjection as err:
            err.step = n
            err.args = (f"{err.args[0]} (path {err.index}, step {n})",)
            raise
        x_post, y_post, jump, cont, H_bar, c_pre, c_bar, x_next, y_next = out
        for k, v in zip(names, (x, y, x_post, y_post, jump, cont, H_bar, c_pre, c_bar)):
            rec[k][:, n] = v
        x, y = x_next, y_next
    T = cfg.end_time
    c_pre_end = np.asarray(m.control_cost(x, np.full(P, T), y), dtype=float)
    if m.finite:
        jump_end = np.array([_terminal_increment(m, xi, yi, T) for xi, yi in zip(x, y)])
        x_T, y_T = x - jump_end, y + jump_end
        F_T = np.asarray(m.terminal_cost(x_T, y_T), dtype=float)
    else:
        jump_end = np.zeros(P)
        x_T, y_T, F_T = x.copy(), y.copy(), None
    return Trajectory(
        cfg.t0, cfg.dt, **rec,
        x_end=x, y_end=y, jump_end=jump_end, c_pre_end=c_pre_end,
        x_T=x_T, y_T=y_T, F_T=F_T,
    )


def simulate(
    m: ModelSpec,
    law: ControlLaw,
    init: AugmentedState,
    cfg: SimConfig,
    rng: np.random.Generator,
) -> Trajectory:
    """Single path driven by ``rng``."""
    dW = rng.standard_normal(cfg.n_steps) * np.sqrt(cfg.dt)
    return simulate_paths(m, law, init, cfg, dW[None, :]).path(0)


def discounted_cost(tr: Trajectory, m: ModelSpec) -> np.ndarray:
    """Discounted cost of each path (scalar array for a single path)."""
    disc = np.exp(-m.discount * (tr.r - tr.t0))
    flow = tr.H_bar * tr.dt + tr.c_pre * tr.jump + tr.c_bar * tr.cont
    total = np.sum(disc * flow, axis=-1)
    d_end = np.exp(-m.discount * (tr.T - tr.t0))
    total = total + d_end * tr.c_pre_end * tr.jump_end
    if tr.F_T is not None:
        total = total + d_end * tr.F_T
    return total


class MCResult(NamedTuple):
    mean: float
    stderr: float
    n_paths: int


def mc_value(
    m: ModelSpec,
    law: ControlLaw,
    init: AugmentedState,
    cfg: SimConfig,
    dW: Optional[np.ndarray] = None,
) -> MCResult:
    """Sample mean and standard error of the discounted cost.

    Passing the same ``dW`` for two laws gives a common-random-numbers
    comparison.  With a single path the standard error is NaN.
    """
    costs = discounted_cost(simulate_paths(m, law, init, cfg, dW), m)
    n = costs.size
    stderr = float(np.std(costs, ddof=1) / np.sqrt(n)) if n > 1 else float("nan")
    return MCResult(float(np.mean(costs)), stderr, n)


CSV_COLUMNS = (
    "n", "r_n", "x_pre", "x_post", "y_pre", "y_post",
    "jump", "cont_increment", "H_bar", "c_pre", "c_bar",
)


def write_trajectory_csv(tr: Trajectory, path, with_path_index: Optional[bool] = None) -> None:
    """Write one row per grid step at 17 significant digits."""
    if with_path_index is None:
        with_path_index = tr.x_pre.ndim > 1
    r = tr.r
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("path",) + CSV_COLUMNS if with_path_index else CSV_COLUMNS)
        for p in range(tr.n_paths):
            one = tr.path(p)
            cols = (one.x_pre, one.x_post, one.y_pre, one.y_post, one.jump,
                    one.cont, one.H_bar, one.c_pre, one.c_bar)
            for n in range(tr.n_steps):
                row = [str(n), f"{r[n]:.17g}"] + [f"{c[n]:.17g}" for c in cols]
                w.writerow(([str(p)] if with_path_index else []) + row)
