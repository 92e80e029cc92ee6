"""Closed-form solution of the exponential-cost benchmark.

With constant mu, sigma, c and running cost H = e^{a x}, the optimal waiting
region is ``{x < xhat}`` and the value function is

    V(x) = K1 e^{a x} + C2 e^{lambda2 x},   x < xhat,
    V(x) = c (x - xhat) + V(xhat),          x >= xhat,

with K1 = 1 / (beta - mu a - sigma^2 a^2 / 2).  Every law of threshold type
``{x < xbar}`` also has a closed-form value, which makes the policy-iteration
map on thresholds explicit.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from .model import ExpCostParams


class RootNotBracketed(RuntimeError):
    """The case analysis of ``pi_map`` did not find a sign change."""


@dataclass(frozen=True)
class ClosedFormSolution:
    params: ExpCostParams
    lambda2: float
    K1: float
    C2: float
    xhat: float


def solve_benchmark(p: ExpCostParams) -> ClosedFormSolution:
    mu, sigma, a, c, beta = p.mu, p.sigma, p.a, p.c, p.beta
    lam2 = (-mu + np.sqrt(mu**2 + 2 * beta * sigma**2)) / sigma**2
    gap = p.gap
    xhat = np.log(lam2 * c * gap / (lam2 * a - a**2)) / a
    C2 = -(a**2) / (lam2**2 * gap) * np.exp((a - lam2) * xhat)
    return ClosedFormSolution(p, float(lam2), float(1.0 / gap), float(C2), float(xhat))


def lambda1(sol: ClosedFormSolution) -> float:
    """Negative characteristic root (its coefficient is zero in V)."""
    p = sol.params
    return float((-p.mu - np.sqrt(p.mu**2 + 2 * p.beta * p.sigma**2)) / p.sigma**2)


def K2(sol: ClosedFormSolution, xbar):
    """Coefficient of e^{lambda2 x} in the value of the law ``{x < xbar}``."""
    a, c, lam2 = sol.params.a, sol.params.c, sol.lambda2
    return (c - sol.K1 * a * np.exp(a * xbar)) / (lam2 * np.exp(lam2 * xbar))


def _threshold_derivs(sol, coef, xbar, x):
    """(J, J_x, J_xx) for K1 e^{ax} + coef e^{lambda2 x}, extended linearly past xbar."""
    a, c, lam2 = sol.params.a, sol.params.c, sol.lambda2
    x = np.asarray(x, dtype=float)
    xl = np.minimum(x, xbar)
    ea, el = sol.K1 * np.exp(a * xl), coef * np.exp(lam2 * xl)
    J_in, Jx_in, Jxx_in = ea + el, a * ea + lam2 * el, a * a * ea + lam2 * lam2 * el
    inside = x < xbar
    J = np.where(inside, J_in, c * (x - xbar) + J_in)
    Jx = np.where(inside, Jx_in, c)
    Jxx = np.where(inside, Jxx_in, 0.0)
    return J, Jx, Jxx


def value_derivs(sol: ClosedFormSolution, x):
    """Analytic (V, V_x, V_xx)."""
    return _threshold_derivs(sol, sol.C2, sol.xhat, x)


def value(sol: ClosedFormSolution, x):
    return value_derivs(sol, x)[0]


def q0_closed(sol: ClosedFormSolution, x):
    """c - V_x on the waiting region, zero on the action region."""
    _, Vx, _ = value_derivs(sol, x)
    x = np.asarray(x, dtype=float)
    return np.where(x < sol.xhat, sol.params.c - Vx, 0.0)


def q1_closed(sol: ClosedFormSolution, x):
    """Zero on the waiting region, e^{ax} - beta V + mu c on the action region."""
    p = sol.params
    V, _, _ = value_derivs(sol, x)
    x = np.asarray(x, dtype=float)
    return np.where(x < sol.xhat, 0.0, np.exp(p.a * x) - p.beta * V + p.mu * p.c)


def per_threshold_derivs(sol: ClosedFormSolution, xbar: float, x):
    return _threshold_derivs(sol, K2(sol, xbar), xbar, x)


def per_threshold_value(sol: ClosedFormSolution, xbar: float, x):
    """Value of the law with waiting region ``{x < xbar}``."""
    return per_threshold_derivs(sol, xbar, x)[0]


def per_threshold_q(sol: ClosedFormSolution, xbar: float):
    """The (q0, q1) pair of the law ``{x < xbar}`` as callables of (x, t, y).

    Each function is set to exactly zero on the region where it vanishes by
    construction, so that sign queries are not decided by rounding noise.
    """
    p = sol.params

    def q0(x, t=None, y=None):
        x = np.asarray(x, dtype=float)
        _, Jx, _ = per_threshold_derivs(sol, xbar, x)
        return np.where(x < xbar, p.c - Jx, 0.0)

    def q1(x, t=None, y=None):
        x = np.asarray(x, dtype=float)
        J, _, _ = per_threshold_derivs(sol, xbar, x)
        return np.where(x < xbar, 0.0, np.exp(p.a * x) - p.beta * J + p.mu * p.c)

    return q0, q1


def _scan_bracket(f, anchor, direction, span, sign_at_anchor):
    """First log-spaced offset from ``anchor`` where f changes sign."""
    offsets = np.geomspace(1e-9, span, 200)
    for d in offsets:
        pt = anchor + direction * d
        if np.sign(f(pt)) != sign_at_anchor:
            return pt
    scan = [(float(anchor + direction * d), float(f(anchor + direction * d))) for d in offsets[::40]]
    raise RootNotBracketed(
        f"no sign change of the improvement function from {anchor!r} "
        f"(direction {direction:+d}); scan (x, f): {scan}"
    )


def pi_map(sol: ClosedFormSolution, xbar: float, xtol: float = 1e-12) -> float:
    """Boundary of the improved waiting region for the law ``{x < xbar}``.

    Above ``xhat`` the improved boundary is the smaller root of
    ``J_x = c``; below it, the root of ``q1 = 0`` to the right of ``xhat``.
    """
    p = sol.params
    a, c, lam2, xhat = p.a, p.c, sol.lambda2, sol.xhat
    span = 20.0 / a
    xbar = float(xbar)
    k2 = float(K2(sol, xbar))
    if xbar > xhat:
        if k2 >= 0:
            raise RootNotBracketed(f"K2({xbar!r}) = {k2!r} >= 0 above xhat")

        def g(x):
            return sol.K1 * a * np.exp(a * x) + k2 * lam2 * np.exp(lam2 * x) - c

        # J_x - c peaks at xstar; the two roots straddle it
        xstar = np.log(-sol.K1 * a * a / (k2 * lam2 * lam2)) / (lam2 - a)
        if g(xstar) <= 0:
            return float(xstar)
        lo = _scan_bracket(g, xstar, -1, span, 1.0)
        return float(brentq(g, lo, xstar, xtol=xtol))

    J_bar = float(per_threshold_value(sol, xbar, xbar))

    def q1(x):
        return np.exp(a * x) - p.beta * (c * (x - xbar) + J_bar) + p.mu * c

    for anchor in (xhat, xbar):
        if q1(anchor) < 0:
            hi = _scan_bracket(q1, anchor, +1, span, -1.0)
            return float(brentq(q1, anchor, hi, xtol=xtol))
    return xbar


def pi_iterate(sol: ClosedFormSolution, x0: float, max_iter: int = 100, tol: float = 0.0):
    """Iterates ``x0, pi_map(x0), ...``; stops early once a step moves < ``tol``."""
    xs = [float(x0)]
    for _ in range(max_iter):
        xs.append(pi_map(sol, xs[-1]))
        if abs(xs[-1] - xs[-2]) < tol:
            break
    return np.array(xs)


def two_step_violations(sol: ClosedFormSolution, xs, tol: float = 1e-12) -> list[int]:
    """Indices n with x_n above xhat where xhat < x_{n+2} < x_n fails.

    Steps whose x_n or x_{n+2} lies within ``tol`` of xhat are skipped: once
    the iteration has converged to rounding level the strict ordering is
    not resolvable.
    """
    xs = np.asarray(xs, dtype=float)
    xhat = sol.xhat
    bad = []
    for n in range(len(xs) - 2):
        if xs[n] - xhat > tol and abs(xs[n + 2] - xhat) > tol:
            if not xhat < xs[n + 2] < xs[n]:
                bad.append(n)
    return bad


def hjb_residual(sol: ClosedFormSolution, grid, xbar: float | None = None):
    """max |min{H - beta V + mu V_x + sigma^2 V_xx / 2, c - V_x}| over ``grid``.

    With ``xbar`` the candidate is the value of the law ``{x < xbar}`` instead
    of the optimal V, which makes a misplaced boundary visible.
    Returns ``(max_residual, argmax_point)``.
    """
    p = sol.params
    grid = np.asarray(grid, dtype=float)
    if xbar is None:
        V, Vx, Vxx = value_derivs(sol, grid)
    else:
        V, Vx, Vxx = per_threshold_derivs(sol, xbar, grid)
    gen = np.exp(p.a * grid) - p.beta * V + p.mu * Vx + 0.5 * p.sigma**2 * Vxx
    res = np.abs(np.minimum(gen, p.c - Vx))
    i = int(np.argmax(res))
    return float(res[i]), float(grid[i])


def shifted_solution(sol: ClosedFormSolution, xhat: float) -> ClosedFormSolution:
    """The closed-form formulas with the free boundary moved to ``xhat``.

    C2 is recomputed from the (misplaced) boundary, so the smooth-fit
    condition V_x = c fails there.  Used to check that the HJB residual
    detects a wrong boundary.
    """
    p = sol.params
    C2 = -(p.a**2) / (sol.lambda2**2 * p.gap) * np.exp((p.a - sol.lambda2) * xhat)
    return ClosedFormSolution(p, sol.lambda2, sol.K1, float(C2), float(xhat))
