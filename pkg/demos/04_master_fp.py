"""Master Fictitious Play on a small 1-D exploration game.

A single population-dependent policy is trained on four initial
distributions and compared with the unconditioned and uniform baselines,
both on the training distributions and on unseen ones.
Run: python3 demos/04_master_fp.py   (a few seconds)
"""

from masterfp import (
    Exploration1DConfig,
    RLConfig,
    UniformPopulationPolicy,
    average_exploitability,
    make_exploration_1d,
    make_testing_set,
    make_training_set,
    master_fictitious_play,
    solve_unconditioned,
)

N_T, K = 15, 5
env = make_exploration_1d(Exploration1DConfig(size=16))
training = make_training_set(env.space)
testing = make_testing_set(env.space)
rl = RLConfig(hidden=(32, 32), fit_max_iter=100)

master = master_fictitious_play(env, training, K, rl, N_T, seed=0)
print("master average exploitability by iteration:", [round(v, 3) for v in master.history])
uncond = solve_unconditioned(env, training, K, rl, N_T, seed=1)
uniform = [UniformPopulationPolicy(env.n_states, env.n_actions)]

for label, dists in (("training", training), ("testing", testing)):
    print(f"\n{label} distributions, mean exploitability")
    print(f"  master        {average_exploitability(env, dists, master, N_T)[0]:.3f}")
    print(f"  unconditioned {average_exploitability(env, dists, uncond, N_T)[0]:.3f}")
    print(f"  uniform       {average_exploitability(env, dists, None, N_T, policies=uniform)[0]:.3f}")
