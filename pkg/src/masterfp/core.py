"""Exact primitives for finite mean-field games.

Distributions, flows and policies are plain numpy arrays:

* distribution: ``(n_states,)``
* flow: ``(n_steps + 1, n_states)``
* stationary policy: ``(n_states, n_actions)``, rows are action probabilities
* non-stationary policy: ``(n_steps + 1, n_states, n_actions)``

All evaluation is exact forward propagation of distributions; nothing here
samples.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

PROB_ATOL = 1e-9


class ShapeError(ValueError):
    """Raised when array dimensions do not match the environment."""


@dataclass(frozen=True)
class StateSpace:
    """Finite state space with line or grid geometry.

    Grid states are indexed row-major: ``index = row * width + col``.
    """

    kind: str
    width: int
    height: int = 1

    def __post_init__(self):
        if self.kind not in ("line", "grid"):
            raise ValueError(f"unknown geometry {self.kind!r}")
        if self.width < 1 or self.height < 1:
            raise ValueError("state space must be nonempty")
        if self.kind == "line" and self.height != 1:
            raise ValueError("line geometry has height 1")

    @classmethod
    def line(cls, n: int) -> "StateSpace":
        return cls("line", n, 1)

    @classmethod
    def grid(cls, width: int, height: int) -> "StateSpace":
        return cls("grid", width, height)

    @property
    def size(self) -> int:
        return self.width * self.height

    @property
    def shape(self) -> tuple:
        return (self.width,) if self.kind == "line" else (self.height, self.width)

    def coords(self) -> np.ndarray:
        """Integer coordinates, ``(size, 1)`` on a line and ``(size, 2)`` (row, col) on a grid."""
        if self.kind == "line":
            return np.arange(self.width)[:, None]
        rows, cols = np.divmod(np.arange(self.size), self.width)
        return np.stack([rows, cols], axis=1)

    def index(self, coord) -> int:
        if self.kind == "line":
            return int(np.asarray(coord).reshape(-1)[0])
        row, col = coord
        return int(row) * self.width + int(col)

    def diameter(self) -> int:
        return (self.width - 1) + (self.height - 1)


@dataclass(frozen=True)
class ActionSpace:
    """Actions as integer displacement vectors."""

    moves: tuple

    def __post_init__(self):
        if len(self.moves) == 0:
            raise ValueError("action space must be nonempty")
        if len(set(map(tuple, self.moves))) != len(self.moves):
            raise ValueError("duplicate actions")

    @property
    def size(self) -> int:
        return len(self.moves)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.moves, dtype=int)


class Environment:
    """Finite MFG with separable reward ``r(x, a, mu) = r_A(x, a) + r_M(x, mu)``.

    ``transition`` is either a fixed ``(X, A, X)`` array (population-independent
    dynamics) or a callable ``mu -> (X, A, X)``.
    """

    def __init__(
        self,
        n_states: int,
        n_actions: int,
        gamma: float,
        reward_a: np.ndarray,
        reward_m: Callable[[np.ndarray], np.ndarray],
        transition,
        space: Optional[StateSpace] = None,
        actions: Optional[ActionSpace] = None,
        name: str = "",
    ):
        if not 0.0 <= gamma < 1.0:
            raise ValueError("gamma must lie in [0, 1)")
        self.n_states = int(n_states)
        self.n_actions = int(n_actions)
        self.gamma = float(gamma)
        self.reward_a = np.asarray(reward_a, dtype=float)
        if self.reward_a.shape != (self.n_states, self.n_actions):
            raise ShapeError(f"reward_a has shape {self.reward_a.shape}")
        self._reward_m = reward_m
        self.transition_mu_independent = not callable(transition)
        if self.transition_mu_independent:
            transition = np.asarray(transition, dtype=float)
            if transition.shape != (self.n_states, self.n_actions, self.n_states):
                raise ShapeError(f"transition has shape {transition.shape}")
            transition.setflags(write=False)
        self._transition = transition
        self.space = space
        self.actions = actions
        self.name = name

    def reward_m(self, mu: np.ndarray) -> np.ndarray:
        return np.asarray(self._reward_m(check_distribution(mu, self.n_states)), dtype=float)

    def reward(self, mu: np.ndarray) -> np.ndarray:
        """Full reward table ``(X, A)`` against the MF state ``mu``."""
        return self.reward_a + self.reward_m(mu)[:, None]

    def transition(self, mu: Optional[np.ndarray] = None) -> np.ndarray:
        if self.transition_mu_independent:
            return self._transition
        return np.asarray(self._transition(check_distribution(mu, self.n_states)), dtype=float)

    def __repr__(self):
        return f"Environment({self.name or 'anonymous'}, X={self.n_states}, A={self.n_actions}, gamma={self.gamma})"


@dataclass(frozen=True)
class ValueTable:
    """Backward-induction output.

    ``values[n]`` and ``q_values[n]`` cover steps ``0..N_T``; the continuation
    after step ``N_T`` is zero.
    """

    values: np.ndarray
    q_values: np.ndarray


def check_distribution(mu, n_states: Optional[int] = None) -> np.ndarray:
    mu = np.asarray(mu, dtype=float)
    if mu.ndim != 1 or (n_states is not None and mu.shape[0] != n_states):
        raise ShapeError(f"distribution has shape {mu.shape}, expected ({n_states},)")
    return mu


def is_distribution(mu, atol: float = PROB_ATOL) -> bool:
    mu = np.asarray(mu, dtype=float)
    return bool(mu.ndim == 1 and np.all(mu >= -atol) and abs(mu.sum() - 1.0) <= atol)


def normalize(mu: np.ndarray) -> np.ndarray:
    mu = np.clip(np.asarray(mu, dtype=float), 0.0, None)
    total = mu.sum(axis=-1, keepdims=True)
    if np.any(total <= 0):
        raise ValueError("cannot normalize a zero vector")
    return mu / total


def constant_flow(mu0: np.ndarray, n_steps: int) -> np.ndarray:
    return np.repeat(np.asarray(mu0, dtype=float)[None, :], n_steps + 1, axis=0)


def uniform_policy(n_states: int, n_actions: int, n_steps: Optional[int] = None) -> np.ndarray:
    table = np.full((n_states, n_actions), 1.0 / n_actions)
    if n_steps is None:
        return table
    return np.repeat(table[None], n_steps + 1, axis=0)


def deterministic_policy(actions: np.ndarray, n_actions: int) -> np.ndarray:
    """One-hot policy from an integer array of chosen actions (any leading shape)."""
    actions = np.asarray(actions, dtype=int)
    return np.eye(n_actions)[actions]


def _check_policy(env: Environment, policy: np.ndarray, n_steps: int) -> np.ndarray:
    policy = np.asarray(policy, dtype=float)
    if policy.ndim != 3 or policy.shape[1:] != (env.n_states, env.n_actions):
        raise ShapeError(f"policy has shape {policy.shape}")
    if policy.shape[0] < n_steps + 1:
        raise ShapeError(f"policy has {policy.shape[0]} steps, need {n_steps + 1}")
    return policy


def _check_flow(env: Environment, flow: np.ndarray, n_steps: int) -> np.ndarray:
    flow = np.asarray(flow, dtype=float)
    if flow.ndim != 2 or flow.shape[1] != env.n_states:
        raise ShapeError(f"flow has shape {flow.shape}")
    if flow.shape[0] < n_steps + 1:
        raise ShapeError(f"flow has {flow.shape[0]} states, need {n_steps + 1}")
    return flow


def propagate(rho: np.ndarray, policy_step: np.ndarray, transition: np.ndarray) -> np.ndarray:
    """Push mass ``rho`` one step through ``policy_step`` and ``transition`` (no renormalization)."""
    return np.einsum("x,xa,xay->y", rho, policy_step, transition)


def step_mean_field(env: Environment, mu: np.ndarray, policy_step: np.ndarray) -> np.ndarray:
    """Next MF state when the whole population plays ``policy_step`` from ``mu``."""
    mu = check_distribution(mu, env.n_states)
    policy_step = np.asarray(policy_step, dtype=float)
    if policy_step.shape != (env.n_states, env.n_actions):
        raise ShapeError(f"policy step has shape {policy_step.shape}")
    nxt = propagate(mu, policy_step, env.transition(mu))
    return normalize(nxt)


def rollout_flow(env: Environment, mu0: np.ndarray, policy: np.ndarray, n_steps: int) -> np.ndarray:
    policy = _check_policy(env, policy, n_steps)
    flow = np.empty((n_steps + 1, env.n_states))
    flow[0] = check_distribution(mu0, env.n_states)
    for n in range(n_steps):
        flow[n + 1] = step_mean_field(env, flow[n], policy[n])
    return flow


def evaluate_policy(
    env: Environment, mu0: np.ndarray, policy: np.ndarray, flow: np.ndarray, n_steps: int
) -> float:
    """Discounted return of a representative agent playing ``policy`` against a fixed ``flow``."""
    policy = _check_policy(env, policy, n_steps)
    flow = _check_flow(env, flow, n_steps)
    rho = check_distribution(mu0, env.n_states).copy()
    total = 0.0
    discount = 1.0
    for n in range(n_steps + 1):
        reward = env.reward(flow[n])
        total += discount * float(np.einsum("x,xa,xa->", rho, policy[n], reward))
        if n < n_steps:
            rho = propagate(rho, policy[n], env.transition(flow[n]))
        discount *= env.gamma
    return total


def _backward_induction(env: Environment, rewards: Sequence[np.ndarray], transitions, n_steps: int):
    n_states, n_actions = env.n_states, env.n_actions
    values = np.zeros((n_steps + 1, n_states))
    q_values = np.zeros((n_steps + 1, n_states, n_actions))
    continuation = np.zeros(n_states)
    for n in range(n_steps, -1, -1):
        q = rewards[n] + env.gamma * transitions[n] @ continuation
        q_values[n] = q
        values[n] = q.max(axis=1)
        continuation = values[n]
    greedy = deterministic_policy(q_values.argmax(axis=2), n_actions)
    return greedy, ValueTable(values, q_values)


def best_response(env: Environment, flow: np.ndarray, n_steps: int):
    """Greedy optimal non-stationary policy against ``flow`` and its value table.

    Ties go to the lowest action index.
    """
    flow = _check_flow(env, flow, n_steps)
    rewards = [env.reward(flow[n]) for n in range(n_steps + 1)]
    transitions = [env.transition(flow[n]) for n in range(n_steps + 1)]
    return _backward_induction(env, rewards, transitions, n_steps)


def exploitability(env: Environment, mu0: np.ndarray, policy: np.ndarray, n_steps: int) -> float:
    flow = rollout_flow(env, mu0, policy, n_steps)
    return exploitability_against(env, mu0, policy, flow, n_steps)


def exploitability_against(
    env: Environment, mu0: np.ndarray, policy: np.ndarray, flow: np.ndarray, n_steps: int
) -> float:
    """Best-response value minus the value of ``policy``, both against ``flow``."""
    _, table = best_response(env, flow, n_steps)
    best = float(np.asarray(mu0, dtype=float) @ table.values[0])
    return best - evaluate_policy(env, mu0, policy, flow, n_steps)


class PopulationPolicy:
    """Policy conditioned on the agent's state and the current MF state.

    Subclasses implement :meth:`table`, returning the ``(X, A)`` action
    probabilities for every state at once. ``step`` is only consulted by
    wrappers around time-indexed policies.
    """

    n_states: int
    n_actions: int

    def table(self, mu: np.ndarray, step: int = 0) -> np.ndarray:
        raise NotImplementedError

    def act(self, x: int, mu: np.ndarray, step: int = 0) -> np.ndarray:
        return self.table(mu, step)[x]


class UniformPopulationPolicy(PopulationPolicy):
    def __init__(self, n_states: int, n_actions: int):
        self.n_states = n_states
        self.n_actions = n_actions

    def table(self, mu, step=0):
        return uniform_policy(self.n_states, self.n_actions)


class UnconditionedPolicy(PopulationPolicy):
    """Wraps a non-stationary policy; ignores ``mu`` entirely."""

    def __init__(self, policy: np.ndarray):
        self.policy = np.asarray(policy, dtype=float)
        _, self.n_states, self.n_actions = self.policy.shape

    def table(self, mu, step=0):
        return self.policy[min(step, len(self.policy) - 1)]


class FlowTabularPolicy(PopulationPolicy):
    """Tabular policy attached to a reference flow.

    The MF state is matched to the nearest (L1) state of the flow and the
    policy of that step is played.
    """

    def __init__(self, flow: np.ndarray, policy: np.ndarray):
        self.flow = np.asarray(flow, dtype=float)
        self.policy = np.asarray(policy, dtype=float)
        if len(self.flow) != len(self.policy):
            raise ShapeError("flow and policy lengths differ")
        _, self.n_states, self.n_actions = self.policy.shape

    def table(self, mu, step=0):
        idx = int(np.argmin(np.abs(self.flow - np.asarray(mu)[None, :]).sum(axis=1)))
        return self.policy[idx]


def induce_policy(
    pop_policy: PopulationPolicy,
    env: Environment,
    mu0: np.ndarray,
    n_steps: int,
    conditioning: Optional[np.ndarray] = None,
):
    """Reduce a population-dependent policy to a time-indexed one from ``mu0``.

    By default the policy reacts to the flow it generates itself. When
    ``conditioning`` is given, step ``n`` observes ``conditioning[n]``
    instead, and that reference flow is also the MF argument of the dynamics.
    """
    policy = np.empty((n_steps + 1, env.n_states, env.n_actions))
    flow = np.empty((n_steps + 1, env.n_states))
    flow[0] = check_distribution(mu0, env.n_states)
    if conditioning is not None:
        conditioning = _check_flow(env, conditioning, n_steps)
    for n in range(n_steps + 1):
        observed = flow[n] if conditioning is None else conditioning[n]
        policy[n] = pop_policy.table(observed, n)
        if n < n_steps:
            flow[n + 1] = normalize(propagate(flow[n], policy[n], env.transition(observed)))
    return policy, flow
