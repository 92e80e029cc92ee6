"""Control-problem environments for one-dimensional singular control.

A model is a bundle of coefficient and cost functions of the augmented state
``(x, t, y)``: level, time, and accumulated control.  All callables must accept
numpy arrays (broadcasting elementwise) so that path batches can be simulated
without Python loops.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, NamedTuple, Optional, Sequence, Union

import numpy as np

StateFn = Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray]
TerminalFn = Callable[[np.ndarray, np.ndarray], np.ndarray]


class ModelError(ValueError):
    """Invalid model parameters."""


class AugmentedState(NamedTuple):
    x: float
    t: float
    y: float = 0.0


@dataclass(frozen=True)
class FiniteHorizon:
    T: float


@dataclass(frozen=True)
class InfiniteHorizon:
    """Infinite horizon, simulated up to the truncation time ``t_trunc``."""

    t_trunc: float


Horizon = Union[FiniteHorizon, InfiniteHorizon]


@dataclass(frozen=True)
class ModelSpec:
    drift: StateFn
    vol: StateFn
    running_cost: StateFn
    control_cost: StateFn
    discount: float
    horizon: Horizon
    terminal_cost: Optional[TerminalFn] = None

    def __post_init__(self):
        if self.discount < 0:
            raise ModelError(f"discount must be >= 0, got {self.discount}")
        if isinstance(self.horizon, FiniteHorizon) and self.terminal_cost is None:
            raise ModelError("finite-horizon model needs a terminal_cost")

    @property
    def finite(self) -> bool:
        return isinstance(self.horizon, FiniteHorizon)

    @property
    def end_time(self) -> float:
        if self.finite:
            return self.horizon.T
        return self.horizon.t_trunc


@dataclass(frozen=True)
class ExpCostParams:
    """Benchmark parameters: constant drift/vol/control cost, H = exp(a x)."""

    mu: float
    sigma: float
    a: float
    c: float
    beta: float

    def __post_init__(self):
        if not self.sigma > 0:
            raise ModelError(f"sigma must be > 0, got {self.sigma}")
        if not self.a > 0:
            raise ModelError(f"a must be > 0, got {self.a}")
        if not self.c > 0:
            raise ModelError(f"c must be > 0, got {self.c}")
        rhs = self.mu * self.a + 0.5 * self.sigma**2 * self.a**2
        if not self.beta > rhs:
            raise ModelError(
                "finiteness condition beta > mu*a + sigma^2*a^2/2 violated: "
                f"beta={self.beta!r} <= {rhs!r}"
            )

    @property
    def gap(self) -> float:
        """beta - mu a - sigma^2 a^2 / 2, the (positive) denominator of K1."""
        return self.beta - self.mu * self.a - 0.5 * self.sigma**2 * self.a**2


def _const(value: float) -> StateFn:
    def f(x, t, y):
        return np.full(np.broadcast(x, t, y).shape, value, dtype=float)

    return f


def make_exp_cost_model(p: ExpCostParams, t_trunc: float) -> ModelSpec:
    """Benchmark model: dX = mu dt + sigma dB - dxi, H = e^{a x}, constant c."""
    if not t_trunc > 0:
        raise ModelError(f"t_trunc must be > 0, got {t_trunc}")
    a = p.a

    def running_cost(x, t, y):
        x, _, _ = np.broadcast_arrays(np.asarray(x, dtype=float), t, y)
        return np.exp(a * x)

    return ModelSpec(
        drift=_const(p.mu),
        vol=_const(p.sigma),
        running_cost=running_cost,
        control_cost=_const(p.c),
        discount=p.beta,
        horizon=InfiniteHorizon(float(t_trunc)),
    )


@dataclass
class TranslationReport:
    max_deviation: float
    worst_sample: Optional[tuple]
    tolerance: float

    @property
    def ok(self) -> bool:
        return self.max_deviation <= self.tolerance


def check_cost_translation(
    m: ModelSpec,
    samples: Sequence[tuple[AugmentedState, float]],
    tol: float = 1e-12,
) -> TranslationReport:
    """Max |c(x-a, t, y+a) - c(x, t, y)| over ``(state, a)`` samples."""
    worst, worst_sample = 0.0, None
    for s, a in samples:
        if a < 0:
            raise ValueError(f"shift must be >= 0, got {a}")
        shifted = float(m.control_cost(s.x - a, s.t, s.y + a))
        dev = abs(shifted - float(m.control_cost(s.x, s.t, s.y)))
        if dev > worst or worst_sample is None:
            worst, worst_sample = dev, (s, a)
    return TranslationReport(worst, worst_sample, tol)


def check_vol_nonnegative(m: ModelSpec, states: Sequence[AugmentedState]) -> float:
    """Smallest sampled volatility; negative values flag an invalid model."""
    xs, ts, ys = (np.array(v, dtype=float) for v in zip(*states))
    return float(np.min(m.vol(xs, ts, ys)))
