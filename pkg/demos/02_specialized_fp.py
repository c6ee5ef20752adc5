"""Fictitious Play from one fixed initial distribution on the 1-D exploration game.

Prints the exploitability curve and the log-log decay slope, then shows how
poorly each equilibrium policy transfers to the other training distributions.
Run: python3 demos/02_specialized_fp.py
"""

import numpy as np

from masterfp import make_exploration_1d, make_training_set, performance_matrices, solve_specialized_fp

N_T, K = 30, 20
env = make_exploration_1d()
training = make_training_set(env.space)

solutions = {name: solve_specialized_fp(env, mu0, K, N_T) for name, mu0 in training}

curve = solutions["train_gauss_0"].exploitability
print("exploitability by iteration (train_gauss_0):")
for k in (1, 2, 5, 10, 20):
    print(f"  k={k:2d}  {curve[k - 1]:.4f}")
ks = np.arange(5, K + 1)
slope = np.polyfit(np.log(ks), np.log(curve[ks - 1]), 1)[0]
print(f"log-log slope over k=5..20: {slope:.2f}")

rows = [(f"specialized_{name}", sol.policy) for name, sol in solutions.items()]
refs = {name: sol.flow for name, sol in solutions.items()}
w, e = performance_matrices(env, rows, training, refs, N_T)
print("\nexploitability matrix (rows: policies, columns: initial distributions)")
print(np.array2string(e.values, precision=2, suppress_small=True))
print("Wasserstein matrix")
print(np.array2string(w.values, precision=3, suppress_small=True))
