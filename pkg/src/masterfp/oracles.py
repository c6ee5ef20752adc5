"""Independent reference computations used to cross-check the solvers.

None of these share code paths with the production routines beyond the
environment definition: enumeration replaces backward induction, sampling
replaces exact propagation and a generic LP replaces the transshipment solver.
"""

from __future__ import annotations

import itertools

import numpy as np
from scipy.optimize import linprog

from .core import Environment

MAX_ENUMERATION = 1 << 16


def enumerate_deterministic_values(env: Environment, mu0: np.ndarray, flow: np.ndarray, n_steps: int) -> np.ndarray:
    """Return ``J`` for every deterministic non-stationary policy against ``flow``.

    Policies are ordered lexicographically over ``(step, state)`` action
    choices. All of them are propagated at once as a batch of state
    distributions.
    """
    n_x, n_a = env.n_states, env.n_actions
    n_slots = n_x * (n_steps + 1)
    count = n_a**n_slots
    if count > MAX_ENUMERATION:
        raise ValueError(f"{count} policies is too many to enumerate")
    choices = np.array(list(itertools.product(range(n_a), repeat=n_slots)), dtype=np.int64)
    choices = choices.reshape(count, n_steps + 1, n_x)
    rho = np.tile(np.asarray(mu0, dtype=float), (count, 1))
    values = np.zeros(count)
    rows = np.arange(n_x)
    for n in range(n_steps + 1):
        reward = env.reward(flow[n])  # (X, A)
        picked = reward[rows, choices[:, n]]  # (count, X)
        values += env.gamma**n * np.einsum("px,px->p", rho, picked)
        if n < n_steps:
            kernel = env.transition(flow[n])  # (X, A, X)
            rho = np.einsum("px,pxy->py", rho, kernel[rows, choices[:, n]])
    return values


def enumerated_best_value(env: Environment, mu0, flow, n_steps: int) -> float:
    return float(enumerate_deterministic_values(env, mu0, flow, n_steps).max())


def enumerated_exploitability(env: Environment, mu0, policy: np.ndarray, n_steps: int) -> float:
    """Exploitability with the best response found by brute force.

    The policy's own flow and value are computed here from scratch by
    forward propagation.
    """
    mu0 = np.asarray(mu0, dtype=float)
    policy = np.asarray(policy, dtype=float)
    flow = [mu0]
    for n in range(n_steps):
        kernel = env.transition(flow[n])
        nxt = np.einsum("x,xa,xay->y", flow[n], policy[n], kernel)
        flow.append(nxt / nxt.sum())
    flow = np.array(flow)
    own = sum(
        env.gamma**n * float(np.einsum("x,xa,xa->", flow[n], policy[n], env.reward(flow[n])))
        for n in range(n_steps + 1)
    )
    return enumerated_best_value(env, mu0, flow, n_steps) - own


def monte_carlo_value(
    env: Environment, mu0, policy: np.ndarray, flow: np.ndarray, n_steps: int, n_agents: int, rng: np.random.Generator
) -> tuple:
    """Sample-average discounted return of independent agents; returns ``(mean, standard error)``."""
    policy = np.asarray(policy, dtype=float)
    x = rng.choice(env.n_states, size=n_agents, p=np.asarray(mu0, dtype=float))
    total = np.zeros(n_agents)
    for n in range(n_steps + 1):
        probs = policy[n][x]
        a = (rng.random(n_agents)[:, None] > np.cumsum(probs, axis=1)).sum(axis=1)
        a = np.minimum(a, env.n_actions - 1)
        total += env.gamma**n * env.reward(flow[n])[x, a]
        if n < n_steps:
            rows = env.transition(flow[n])[x, a]
            x = (rng.random(n_agents)[:, None] > np.cumsum(rows, axis=1)).sum(axis=1)
            x = np.minimum(x, env.n_states - 1)
    return float(total.mean()), float(total.std(ddof=1) / np.sqrt(n_agents))


def transport_lp(mu, nu, cost: np.ndarray) -> float:
    """Optimal transport cost from the coupling LP, solved with HiGHS dual simplex."""
    mu = np.asarray(mu, dtype=float)
    nu = np.asarray(nu, dtype=float)
    n, m = len(mu), len(nu)
    rows = np.zeros((n + m, n * m))
    for i in range(n):
        rows[i, i * m : (i + 1) * m] = 1.0
    for j in range(m):
        rows[n + j, j::m] = 1.0
    # total mass appears in both blocks; dropping one equality keeps the system full rank
    res = linprog(
        np.asarray(cost, dtype=float).ravel(),
        A_eq=rows[:-1],
        b_eq=np.concatenate([mu, nu])[:-1],
        bounds=(0, None),
        method="highs-ds",
        options={"primal_feasibility_tolerance": 1e-10, "dual_feasibility_tolerance": 1e-10},
    )
    if not res.success:
        raise RuntimeError(f"transport LP failed: {res.message}")
    return float(res.fun)
