"""Specialized and master Fictitious Play, mixtures and bundles."""

import numpy as np
import pytest

from masterfp.artifacts import load_bundle, save_bundle
from masterfp.core import (
    UnconditionedPolicy,
    UniformPopulationPolicy,
    constant_flow,
    exploitability,
    induce_policy,
    rollout_flow,
)
from masterfp.envs import (
    Exploration1DConfig,
    make_exploration_1d,
    make_random_toy,
    make_training_set,
)
from masterfp.fictitious_play import (
    MasterPolicyBundle,
    average_exploitability,
    master_fictitious_play,
    mixture_exploitability,
    mixture_policy,
    rollout_mixture,
    solve_mixture_reward,
    solve_specialized_fp,
    solve_unconditioned,
)
from masterfp.qlearn import RLConfig

N_T = 6
SMALL_RL = RLConfig(hidden=(16, 16), fit_max_iter=60)


@pytest.fixture(scope="module")
def small():
    env = make_exploration_1d(Exploration1DConfig(size=8))
    return env, make_training_set(env.space)


def test_specialized_fp_improves_and_is_deterministic(small):
    env, training = small
    mu0 = training.entries[0]
    sol = solve_specialized_fp(env, mu0, 15, N_T, keep_best_responses=True)
    assert sol.exploitability[-1] < sol.exploitability[0]
    assert np.all(sol.exploitability >= -1e-12)
    assert sol.exploitability[-1] == pytest.approx(exploitability(env, mu0, sol.policy, N_T), abs=1e-12)
    assert len(sol.best_responses) == 15 and np.isfinite(sol.residual)
    again = solve_specialized_fp(env, mu0, 15, N_T)
    np.testing.assert_array_equal(again.policy, sol.policy)


def test_specialized_flow_is_the_average_of_best_response_flows(small):
    env, training = small
    mu0 = training.entries[1]
    sol = solve_specialized_fp(env, mu0, 6, N_T, keep_best_responses=True)
    flows = [rollout_flow(env, mu0, br, N_T) for br in sol.best_responses]
    np.testing.assert_allclose(sol.flow, np.mean(flows, axis=0), atol=1e-12)


def test_mixture_policy_reproduces_the_average_flow(rng):
    env = make_random_toy(rng, 4, 3)
    mu0 = rng.dirichlet(np.ones(4))
    tables = [rng.dirichlet(np.ones(3), size=(5, 4)) for _ in range(3)]
    flows = [rollout_flow(env, mu0, t, 4) for t in tables]
    mixed = mixture_policy(tables, flows)
    np.testing.assert_allclose(rollout_flow(env, mu0, mixed, 4), np.mean(flows, axis=0), atol=1e-12)


def test_mixture_reward_policy_is_greedy_for_the_averaged_reward(small):
    env, training = small
    flows = [constant_flow(mu, N_T) for _, mu in training]
    policy = solve_mixture_reward(env, flows, N_T)
    assert policy.shape == (N_T + 1, 8, 3)
    np.testing.assert_array_equal(policy.sum(axis=2), 1.0)
    with pytest.raises(ValueError):
        solve_mixture_reward(env, [], N_T)


def test_rollout_mixture_conserves_mass_and_single_policy_reduces(small, rng):
    env, training = small
    mu0 = training.entries[2]
    tabs = [rng.dirichlet(np.ones(3), size=(N_T + 1, 8)) for _ in range(3)]
    mix = rollout_mixture(env, mu0, [UnconditionedPolicy(t) for t in tabs], N_T)
    np.testing.assert_allclose(mix.sub_flows.sum(axis=2), 1.0, atol=1e-12)
    np.testing.assert_allclose(mix.flow.sum(axis=1), 1.0, atol=1e-12)
    one = rollout_mixture(env, mu0, [UnconditionedPolicy(tabs[0])], N_T)
    assert mixture_exploitability(env, mu0, one, N_T) == pytest.approx(exploitability(env, mu0, tabs[0], N_T), abs=1e-12)
    # the reduced time-indexed policy is exactly as exploitable as the mixture
    reduced = mix.reduced_policy()
    assert mixture_exploitability(env, mu0, mix, N_T) == pytest.approx(exploitability(env, mu0, reduced, N_T), abs=1e-10)


@pytest.fixture(scope="module")
def master_run(small):
    env, training = small
    return master_fictitious_play(env, training, 3, SMALL_RL, N_T, seed=5, conditioning="self")


def test_bank_is_the_running_average_including_the_initial_flow(small, master_run):
    env, training = small
    for name, mu0 in training:
        induced = [induce_policy(p, env, mu0, N_T)[1] for p in master_run.trained]
        expected = (constant_flow(mu0, N_T) + np.sum(induced, axis=0)) / (len(induced) + 1)
        np.testing.assert_allclose(master_run.bank[name], expected, atol=1e-9)
        np.testing.assert_allclose(master_run.bank[name].sum(axis=1), 1.0, atol=1e-12)


def test_master_history_and_mixture_membership(master_run):
    assert len(master_run.history) == 3 and len(master_run.fit_losses) == 3
    assert isinstance(master_run.policies[0], UniformPopulationPolicy)
    assert master_run.include_initial and len(master_run.active()) == 4
    master_run.include_initial = False
    try:
        assert len(master_run.active()) == 3
    finally:
        master_run.include_initial = True


def test_master_is_deterministic(small, master_run):
    env, training = small
    again = master_fictitious_play(env, training, 3, SMALL_RL, N_T, seed=5, conditioning="self")
    for a, b in zip(master_run.networks(), again.networks()):
        assert a.to_bytes() == b.to_bytes()
    assert again.history == master_run.history


def test_trained_bundle_beats_the_uniform_bundle(small, master_run):
    env, training = small
    trained, _ = average_exploitability(env, training, master_run, N_T)
    uniform = MasterPolicyBundle([UniformPopulationPolicy(8, 3)], {}, [], [])
    baseline, _ = average_exploitability(env, training, uniform, N_T)
    assert trained < baseline


def test_unconditioned_networks_ignore_the_population(small, rng):
    env, training = small
    bundle = solve_unconditioned(env, training, 2, SMALL_RL, N_T, seed=1)
    a, b = rng.dirichlet(np.ones(8), size=2)
    for net in bundle.networks():
        np.testing.assert_array_equal(net.all_states(a), net.all_states(b))


def test_bundle_round_trip(tmp_path, small, master_run):
    env, training = small
    save_bundle(master_run, tmp_path / "b", 8, 3)
    back = load_bundle(tmp_path / "b")
    mu0 = training.entries[0]
    flow_a, e_a = master_run.rollout(env, mu0, N_T)
    flow_b, e_b = back.rollout(env, mu0, N_T)
    np.testing.assert_array_equal(flow_a, flow_b)
    assert e_a == e_b
    for name in master_run.bank:
        np.testing.assert_array_equal(back.bank[name], master_run.bank[name])


def test_dqn_mode_runs(small):
    env, training = small
    cfg = RLConfig(n_episodes=30, batch_size=8, hidden=(8,), seed=0)
    bundle = master_fictitious_play(env, training, 2, cfg, N_T, mode="dqn", seed=2)
    assert len(bundle.trained) == 2 and np.isnan(bundle.fit_losses).all()


@pytest.mark.parametrize("kwargs", [dict(n_iterations=0), dict(mode="sarsa"), dict(conditioning="other")])
def test_master_argument_errors(small, kwargs):
    env, training = small
    args = dict(n_iterations=1, mode="exact", conditioning="bank") | kwargs
    with pytest.raises(ValueError):
        master_fictitious_play(env, training, args["n_iterations"], SMALL_RL, N_T, mode=args["mode"], conditioning=args["conditioning"])
