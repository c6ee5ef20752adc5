"""Best responses, policy evaluation and exploitability on a tiny random game.

Backward induction is compared against brute-force enumeration of every
deterministic time-indexed policy, and against a Monte-Carlo estimate.
Run: python3 demos/01_exact_solvers.py
"""

import numpy as np

from masterfp import best_response, evaluate_policy, exploitability, rollout_flow
from masterfp.core import uniform_policy
from masterfp.envs import make_random_toy
from masterfp.oracles import enumerated_best_value, enumerated_exploitability, monte_carlo_value

N_T = 3
rng = np.random.default_rng(7)
env = make_random_toy(rng, n_states=3, n_actions=2)
mu0 = rng.dirichlet(np.ones(3))

# The population plays uniformly; a single agent best-responds to that flow.
crowd = uniform_policy(3, 2, N_T)
flow = rollout_flow(env, mu0, crowd, N_T)
br, table = best_response(env, flow, N_T)

print("initial distribution :", np.round(mu0, 4))
print("best-response value  :", float(mu0 @ table.values[0]))
print("enumerated optimum   :", enumerated_best_value(env, mu0, flow, N_T))
print("value of the crowd   :", evaluate_policy(env, mu0, crowd, flow, N_T))

mean, se = monte_carlo_value(env, mu0, crowd, flow, N_T, n_agents=200_000, rng=rng)
print(f"Monte-Carlo estimate : {mean:.5f} +- {2 * se:.5f}")

print("exploitability (BI)  :", exploitability(env, mu0, crowd, N_T))
print("exploitability (enum):", enumerated_exploitability(env, mu0, crowd, N_T))
