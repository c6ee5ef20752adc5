"""Mean-field propagation, policy evaluation and best responses."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from masterfp.core import (
    Environment,
    ShapeError,
    StateSpace,
    UnconditionedPolicy,
    UniformPopulationPolicy,
    FlowTabularPolicy,
    best_response,
    constant_flow,
    deterministic_policy,
    evaluate_policy,
    exploitability,
    induce_policy,
    rollout_flow,
    step_mean_field,
    uniform_policy,
)
from masterfp.envs import make_constant_reward_stub, make_exploration_1d, make_random_toy
from masterfp.oracles import enumerate_deterministic_values, monte_carlo_value


@st.composite
def toy_and_policy(draw):
    seed = draw(st.integers(0, 2**32 - 1))
    rng = np.random.default_rng(seed)
    n_states = draw(st.integers(1, 6))
    n_actions = draw(st.integers(1, 4))
    env = make_random_toy(rng, n_states, n_actions, mu_dependent_transition=draw(st.booleans()))
    mu = rng.dirichlet(np.ones(n_states) * draw(st.sampled_from([0.05, 1.0, 20.0])))
    pol = rng.dirichlet(np.ones(n_actions), size=n_states)
    return env, mu, pol


@settings(max_examples=1000)
@given(toy_and_policy())
def test_mean_field_step_preserves_mass(case):
    env, mu, pol = case
    nxt = step_mean_field(env, mu, pol)
    assert abs(nxt.sum() - 1.0) < 1e-9
    assert np.all(nxt >= 0)


def test_line_dynamics_move_mass_deterministically():
    env = make_exploration_1d()
    mu = np.zeros(32)
    mu[5] = 1.0
    right = deterministic_policy(np.full(32, 2), 3)
    assert step_mean_field(env, mu, right)[6] == 1.0
    mu = np.zeros(32)
    mu[0] = 1.0
    left = deterministic_policy(np.zeros(32, dtype=int), 3)
    assert step_mean_field(env, mu, left)[0] == 1.0  # clamped at the wall


def test_shape_errors():
    env = make_exploration_1d()
    with pytest.raises(ShapeError):
        step_mean_field(env, np.ones(31) / 31, uniform_policy(32, 3))
    with pytest.raises(ShapeError):
        rollout_flow(env, np.ones(32) / 32, uniform_policy(32, 3, 2), 5)
    with pytest.raises(ShapeError):
        best_response(env, np.ones((3, 32)) / 32, 5)


def test_state_space_geometry():
    grid = StateSpace.grid(4, 3)
    assert grid.size == 12 and grid.shape == (3, 4)
    assert grid.index((2, 1)) == 9
    assert grid.diameter() == 5
    assert StateSpace.line(32).diameter() == 31


def test_value_matches_monte_carlo(rng):
    env = make_random_toy(rng, 4, 3, mu_dependent_transition=True)
    mu0 = rng.dirichlet(np.ones(4))
    pol = rng.dirichlet(np.ones(3), size=(5, 4))
    flow = rollout_flow(env, mu0, pol, 4)
    exact = evaluate_policy(env, mu0, pol, flow, 4)
    mean, se = monte_carlo_value(env, mu0, pol, flow, 4, 200_000, np.random.default_rng(0))
    assert abs(exact - mean) < 5 * se


def test_value_of_constant_reward_is_geometric_sum():
    env = make_constant_reward_stub(value=2.0, gamma=0.5)
    mu0 = np.array([0.2, 0.3, 0.5])
    pol = uniform_policy(3, 2, 3)
    flow = rollout_flow(env, mu0, pol, 3)
    assert evaluate_policy(env, mu0, pol, flow, 3) == pytest.approx(2.0 * (1 + 0.5 + 0.25 + 0.125), abs=1e-14)
    # every policy earns the same, so nobody can gain by deviating
    assert abs(exploitability(env, mu0, pol, 3)) < 1e-12


def test_best_response_equals_enumeration(rng):
    for _ in range(20):
        env = make_random_toy(rng, 3, 2, mu_dependent_transition=True)
        mu0 = rng.dirichlet(np.ones(3))
        flow = rollout_flow(env, mu0, rng.dirichlet(np.ones(2), size=(4, 3)), 3)
        br, table = best_response(env, flow, 3)
        enumerated = enumerate_deterministic_values(env, mu0, flow, 3)
        assert mu0 @ table.values[0] == pytest.approx(enumerated.max(), abs=1e-12)
        assert evaluate_policy(env, mu0, br, flow, 3) == pytest.approx(enumerated.max(), abs=1e-12)


def test_best_response_ties_take_lowest_action():
    kernel = np.repeat(np.array([[[0.25, 0.75]], [[0.5, 0.5]]]), 3, axis=1)  # same row for every action
    env = Environment(2, 3, 0.9, np.ones((2, 3)), lambda mu: np.zeros(2), kernel)
    br, _ = best_response(env, constant_flow(np.array([0.5, 0.5]), 2), 2)
    assert np.all(br[..., 0] == 1.0)


def test_value_table_terminal_step_has_no_continuation(rng):
    env = make_random_toy(rng)
    flow = constant_flow(np.ones(3) / 3, 2)
    _, table = best_response(env, flow, 2)
    assert table.values.shape == (3, 3)
    np.testing.assert_allclose(table.q_values[2], env.reward(flow[2]), atol=0)


@settings(max_examples=200)
@given(st.integers(0, 2**32 - 1))
def test_exploitability_is_nonnegative(seed):
    rng = np.random.default_rng(seed)
    env = make_random_toy(rng, 3, 2, mu_dependent_transition=bool(seed % 2))
    mu0 = rng.dirichlet(np.ones(3))
    pol = rng.dirichlet(np.ones(2), size=(4, 3))
    assert exploitability(env, mu0, pol, 3) >= -1e-12


def test_induce_policy_variants(rng):
    env = make_random_toy(rng, 3, 2, mu_dependent_transition=True)
    mu0 = np.array([0.6, 0.3, 0.1])
    tab = rng.dirichlet(np.ones(2), size=(4, 3))
    table, flow = induce_policy(UnconditionedPolicy(tab), env, mu0, 3)
    np.testing.assert_array_equal(table, tab)
    np.testing.assert_allclose(flow, rollout_flow(env, mu0, tab, 3), atol=1e-15)

    reference = constant_flow(np.ones(3) / 3, 3)
    table, flow = induce_policy(UniformPopulationPolicy(3, 2), env, mu0, 3, conditioning=reference)
    manual = [mu0]
    for n in range(3):
        nxt = np.einsum("x,xa,xay->y", manual[-1], table[n], env.transition(reference[n]))
        manual.append(nxt / nxt.sum())
    np.testing.assert_allclose(flow, manual, atol=1e-15)


def test_flow_tabular_policy_reads_the_nearest_step():
    flow = np.array([[1.0, 0.0], [0.5, 0.5], [0.0, 1.0]])
    pol = np.array([np.eye(2)[[0, 0]], np.eye(2)[[1, 1]], np.eye(2)[[0, 1]]])
    lookup = FlowTabularPolicy(flow, pol)
    np.testing.assert_array_equal(lookup.table(np.array([0.45, 0.55])), pol[1])
    np.testing.assert_array_equal(lookup.act(1, np.array([0.0, 1.0])), pol[2][1])
