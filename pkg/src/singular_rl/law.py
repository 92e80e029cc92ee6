"""Singular control laws: waiting/action partitions and their projection map.

A law splits the augmented state space into an open waiting region W and its
closed complement.  The control it generates pushes the state along the ray
``(x - a, t, y + a)`` until it re-enters the closure of W; ``reflect`` returns
the landing point and the smallest such ``a``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence, Union

import numpy as np
from scipy.interpolate import LinearNDInterpolator, NearestNDInterpolator

from .model import AugmentedState

WAITING = "Waiting"
ACTION = "Action"

DEFAULT_A_MAX = 1e6


class NoProjection(RuntimeError):
    """No a <= a_max brings the state back to the closure of W."""

    def __init__(self, state, a_max, index=None):
        self.state = state
        self.a_max = a_max
        self.index = index
        super().__init__(
            f"no projection onto the waiting region from state {state} "
            f"within a <= {a_max:g}; the law is not admissible there"
        )


def _ray_search(is_waiting, x, t, y, a_max, scan_step, scan_span, tol):
    """Smallest a > 0 with (x - a, t, y + a) waiting, for points Action at a = 0.

    Scans with ``scan_step`` up to ``scan_span`` and doubling beyond, then
    bisects each bracket to width ``tol``.  Waiting components narrower than
    the scan resolution can be skipped.
    """
    lo = np.zeros_like(x)
    hi = np.full_like(x, np.nan)
    active = np.ones(x.shape, dtype=bool)
    a = scan_step
    while active.any():
        if a > a_max:
            i = np.flatnonzero(active)[0]
            state = AugmentedState(float(x[i]), float(t[i]), float(y[i]))
            raise NoProjection(state, a_max, index=int(i))
        idx = np.flatnonzero(active)
        w = np.asarray(is_waiting(x[idx] - a, t[idx], y[idx] + a), dtype=bool)
        hi[idx[w]] = a
        lo[idx[~w]] = a
        active[idx[w]] = False
        a = a + scan_step if a < scan_span else 2.0 * a
    while np.max(hi - lo) > tol:
        mid = 0.5 * (lo + hi)
        w = np.asarray(is_waiting(x - mid, t, y + mid), dtype=bool)
        hi = np.where(w, mid, hi)
        lo = np.where(w, lo, mid)
    return hi


def _search_subset(is_waiting, x, t, y, mask, *args):
    try:
        return _ray_search(is_waiting, x[mask], t[mask], y[mask], *args)
    except NoProjection as err:
        err.index = int(np.flatnonzero(mask)[err.index])
        raise


@dataclass(frozen=True)
class PiecewiseLinearBoundary:
    """Boundary b(t, y) interpolated from a (t, y, b) table."""

    table: np.ndarray

    def __post_init__(self):
        tab = np.atleast_2d(np.asarray(self.table, dtype=float))
        if tab.shape[1] != 3 or len(tab) == 0:
            raise ValueError("boundary table needs rows of (t, y, b)")
        object.__setattr__(self, "table", tab)

    def __call__(self, t, y):
        tab = self.table
        t, y = np.broadcast_arrays(np.asarray(t, dtype=float), np.asarray(y, dtype=float))
        if len(tab) == 1:
            return np.full(t.shape, tab[0, 2])
        if np.ptp(tab[:, 1]) == 0:
            order = np.argsort(tab[:, 0])
            return np.interp(t, tab[order, 0], tab[order, 2])
        if np.ptp(tab[:, 0]) == 0:
            order = np.argsort(tab[:, 1])
            return np.interp(y, tab[order, 1], tab[order, 2])
        lin = LinearNDInterpolator(tab[:, :2], tab[:, 2])
        out = lin(t, y)
        missing = np.isnan(out)
        if missing.any():
            out[missing] = NearestNDInterpolator(tab[:, :2], tab[:, 2])(t[missing], y[missing])
        return out


@dataclass(frozen=True)
class ThresholdLaw:
    """Waiting region ``{x < boundary(t, y)}``.

    ``boundary`` is a float (constant threshold) or a vectorized callable of
    ``(t, y)``.
    """

    boundary: Union[float, Callable]
    a_max: float = DEFAULT_A_MAX

    @property
    def constant(self) -> bool:
        return not callable(self.boundary)

    def b(self, t, y):
        if self.constant:
            return np.full(np.broadcast(t, y).shape, float(self.boundary))
        return np.asarray(self.boundary(t, y), dtype=float)

    def waiting(self, x, t, y):
        return np.asarray(x) < self.b(t, y)

    def reflect(self, x, t, y):
        """Landing point and increment; returns ``(x_new, y_new, a)``."""
        x, t, y = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (x, t, y)))
        if self.constant:
            b = float(self.boundary)
            x_new = np.minimum(x, b)
            a = x - x_new
            return x_new, y + a, a
        a = np.zeros_like(x)
        out = ~self.waiting(x, t, y) & (x > self.b(t, y))
        if out.any():
            a[out] = _search_subset(
                self.waiting, x, t, y, out, self.a_max, 0.01, 1.0, 1e-12
            )
        return x - a, y + a, a

    def to_table(self, t_grid=(0.0,), y_grid=(0.0,)) -> np.ndarray:
        tt, yy = np.meshgrid(np.asarray(t_grid, float), np.asarray(y_grid, float), indexing="ij")
        return np.column_stack([tt.ravel(), yy.ravel(), self.b(tt.ravel(), yy.ravel())])


def threshold_law_from_table(rows: Sequence[Sequence[float]], **kw) -> ThresholdLaw:
    tab = np.atleast_2d(np.asarray(rows, dtype=float))
    if np.ptp(tab[:, 2]) == 0:
        return ThresholdLaw(float(tab[0, 2]), **kw)
    return ThresholdLaw(PiecewiseLinearBoundary(tab), **kw)


@dataclass(frozen=True)
class GridSignLaw:
    """Waiting region ``int{q1 <= 0 and q0 >= 0}`` from pointwise sign queries.

    The interior is approximated by also requiring the condition at
    ``x -/+ eps_int``; points on the zero set of either function therefore
    fall in the action region.
    """

    q0: Callable
    q1: Callable
    eps_int: float = 1e-8
    a_max: float = DEFAULT_A_MAX
    scan_step: float = 0.01
    scan_span: float = 1.0
    tol: float = 1e-10

    def _cond(self, x, t, y):
        return (np.asarray(self.q1(x, t, y)) <= 0) & (np.asarray(self.q0(x, t, y)) >= 0)

    def waiting(self, x, t, y):
        e = self.eps_int
        return self._cond(x, t, y) & self._cond(x - e, t, y) & self._cond(x + e, t, y)

    def reflect(self, x, t, y):
        x, t, y = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (x, t, y)))
        a = np.zeros_like(x)
        out = ~self.waiting(x, t, y)
        if out.any():
            a[out] = _search_subset(
                self.waiting, x, t, y, out,
                self.a_max, self.scan_step, self.scan_span, self.tol,
            )
        return x - a, y + a, a


ControlLaw = Union[ThresholdLaw, GridSignLaw]


def classify(law: ControlLaw, s: AugmentedState) -> str:
    return WAITING if bool(law.waiting(s.x, s.t, s.y)) else ACTION


def projection_increment(law: ControlLaw, s: AugmentedState) -> float:
    """Smallest a >= 0 putting ``(x - a, t, y + a)`` in the closure of W."""
    _, _, a = law.reflect(np.array([s.x]), np.array([s.t]), np.array([s.y]))
    return float(a[0])


def improved_law(q0: Callable, q1: Callable, eps_int: float = 1e-8, **kw) -> GridSignLaw:
    """Region-iteration update: new waiting region ``int{q1 <= 0, q0 >= 0}``."""
    return GridSignLaw(q0, q1, eps_int=eps_int, **kw)


def boundary_from_above(law: ControlLaw, x_far: float, t: float = 0.0, y: float = 0.0) -> float:
    """Landing level of a projection started at ``x_far`` (single-threshold laws)."""
    return x_far - projection_increment(law, AugmentedState(x_far, t, y))


def admissibility_margin(law: ThresholdLaw, t: float, y_grid) -> float:
    """min over ``y_grid`` of b(t, y) - y: a lower bound of x - y on the action region."""
    y_grid = np.asarray(y_grid, dtype=float)
    return float(np.min(law.b(np.full_like(y_grid, t), y_grid) - y_grid))
