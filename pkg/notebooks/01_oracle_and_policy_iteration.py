# %% [markdown]
# # Closed-form benchmark and policy iteration
#
# The benchmark has a state x with drift mu and volatility sigma, a running
# cost exp(x), and a proportional control cost a per unit pushed down. Its
# optimal law reflects x at a free boundary xhat. This script solves for
# xhat, checks the value function against its HJB variational inequality,
# and iterates the policy-improvement map from several starting thresholds.

# %%
import numpy as np

from singular_rl.model import ExpCostParams
from singular_rl.oracle import hjb_residual, pi_iterate, pi_map, solve_benchmark, value

p = ExpCostParams(mu=0.2, sigma=1.0, a=0.1, c=1.0, beta=0.1)
sol = solve_benchmark(p)
print(f"xhat = {sol.xhat:.12f}   V(1) = {float(value(sol, 1.0)):.6f}")

# %% [markdown]
# Below xhat the value solves the ODE. Above it, V' equals the marginal
# control cost. The residual is the max over both parts of the inequality.

# %%
grid = np.linspace(-5, 5, 1001)
res, where = hjb_residual(sol, grid[np.abs(grid - sol.xhat) > 1e-9])
print(f"max HJB residual {res:.2e} at x = {where:.2f}")

# %% [markdown]
# One improvement step maps a threshold xbar to a new one. Thresholds above
# xhat drop below it and vice versa, and every second iterate moves closer.

# %%
for x0 in (-2.0, 0.0, 3.0, 5.0):
    xs = pi_iterate(sol, x0, max_iter=15)
    print(f"x0 = {x0:5.1f}: " + " ".join(f"{v:.4f}" for v in xs[:8]))

# %%
xbars = np.linspace(-2, 4, 13)
for xb in xbars:
    print(f"pi_map({xb:5.2f}) = {pi_map(sol, xb):.5f}")
