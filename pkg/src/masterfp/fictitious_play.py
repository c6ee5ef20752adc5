"""Fictitious Play solvers.

* :func:`solve_specialized_fp` - classic FP from one initial distribution,
  exact best responses by backward induction.
* :func:`solve_mixture_reward` - best response to the reward averaged over
  several equilibrium flows.
* :func:`master_fictitious_play` - FP over population-dependent policies
  trained on a whole set of initial distributions at once.
* :func:`solve_unconditioned` - the same pipeline with the MF-state input
  of the Q-network zeroed.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from .core import (
    Environment,
    PopulationPolicy,
    UniformPopulationPolicy,
    _backward_induction,
    best_response,
    constant_flow,
    evaluate_policy,
    exploitability,
    induce_policy,
    normalize,
    propagate,
    rollout_flow,
)
from .metrics import GroundMetric, flow_distance
from .qlearn import GreedyQPolicy, RLConfig, fit_q_exact, make_network, train_dqn

log = logging.getLogger(__name__)


def mixture_policy(tables: Sequence[np.ndarray], flows: Sequence[np.ndarray]) -> np.ndarray:
    """Time-indexed policy reproducing the average of several subpopulations.

    ``pi_n(a|x) = sum_k mu_k,n(x) pi_k,n(a|x) / sum_k mu_k,n(x)``; states
    carrying no mass get the plain average of the component policies.
    """
    tables = np.asarray(tables, dtype=float)
    flows = np.asarray(flows, dtype=float)
    weight = flows.sum(axis=0)[..., None]
    num = np.einsum("knx,knxa->nxa", flows, tables)
    fallback = tables.mean(axis=0)
    safe = np.where(weight > 0, weight, 1.0)
    return np.where(weight > 0, num / safe, fallback)


@dataclass
class SpecializedSolution:
    policy: np.ndarray  # averaged time-indexed policy
    flow: np.ndarray  # equilibrium (averaged) flow
    exploitability: np.ndarray  # after each iteration
    residual: float  # flow distance between the last two averaged flows
    best_responses: list = field(default_factory=list)


def solve_specialized_fp(
    env: Environment,
    mu0: np.ndarray,
    n_iterations: int,
    n_steps: int,
    metric: Optional[GroundMetric] = None,
    keep_best_responses: bool = False,
) -> SpecializedSolution:
    """Fictitious Play from a single initial distribution.

    Iteration ``k = 0, 1, ...`` best-responds to the averaged flow (the
    constant ``mu0`` flow at ``k = 0``), rolls the best response out from
    ``mu0`` and folds it into the average with weight ``1/(k+1)``. The
    returned policy is the flow-weighted mixture of all best responses; its
    flow is the final averaged flow.
    """
    if n_iterations < 1:
        raise ValueError("need at least one iteration")
    metric = GroundMetric(env.space) if (metric is None and env.space is not None) else metric
    average = constant_flow(mu0, n_steps)
    previous = average
    weighted = np.zeros((n_steps + 1, env.n_states, env.n_actions))
    mass = np.zeros((n_steps + 1, env.n_states))
    curve, kept = [], []
    policy = None
    for k in range(n_iterations):
        br, _ = best_response(env, average, n_steps)
        flow = rollout_flow(env, mu0, br, n_steps)
        weighted += flow[..., None] * br
        mass += flow
        previous, average = average, (k / (k + 1)) * average + flow / (k + 1)
        policy = np.where(mass[..., None] > 0, weighted / np.where(mass > 0, mass, 1.0)[..., None], 1.0 / env.n_actions)
        curve.append(exploitability(env, mu0, policy, n_steps))
        if keep_best_responses:
            kept.append(br)
    final_flow = rollout_flow(env, mu0, policy, n_steps)
    residual = flow_distance(previous, average, metric, n_steps) if (metric is not None and n_iterations > 1) else float("nan")
    return SpecializedSolution(policy, final_flow, np.array(curve), residual, kept)


def solve_mixture_reward(env: Environment, equilibrium_flows: Sequence[np.ndarray], n_steps: int) -> np.ndarray:
    """Greedy policy for the MDP whose reward averages ``r(x, a, flow_i[n])`` over flows."""
    if len(equilibrium_flows) == 0:
        raise ValueError("need at least one flow")
    rewards = [np.mean([env.reward(f[n]) for f in equilibrium_flows], axis=0) for n in range(n_steps + 1)]
    kernels = [np.mean([env.transition(f[n]) for f in equilibrium_flows], axis=0) for n in range(n_steps + 1)]
    policy, _ = _backward_induction(env, rewards, kernels, n_steps)
    return policy


# -- mixtures of population-dependent policies ---------------------------------


@dataclass
class MixtureRollout:
    sub_flows: np.ndarray  # (K, N_T+1, X)
    flow: np.ndarray  # averaged flow (N_T+1, X)
    tables: np.ndarray  # (K, N_T+1, X, A) policies as played along the rollout
    value: float  # (1/K) sum_k J(mu0, pi_k; averaged flow)

    def reduced_policy(self) -> np.ndarray:
        """Single time-indexed policy generating the averaged flow."""
        return mixture_policy(self.tables, self.sub_flows)


def rollout_mixture(env: Environment, mu0: np.ndarray, policies: Sequence[PopulationPolicy], n_steps: int) -> MixtureRollout:
    """Uniform mixture: subpopulation ``k`` plays ``policies[k]`` reacting to the average population."""
    if len(policies) == 0:
        raise ValueError("empty mixture")
    mu0 = np.asarray(mu0, dtype=float)
    n_pol = len(policies)
    sub = np.empty((n_pol, n_steps + 1, env.n_states))
    tables = np.empty((n_pol, n_steps + 1, env.n_states, env.n_actions))
    avg = np.empty((n_steps + 1, env.n_states))
    sub[:, 0] = mu0
    avg[0] = mu0
    for n in range(n_steps + 1):
        kernel = env.transition(avg[n])
        for k, pol in enumerate(policies):
            tables[k, n] = pol.table(avg[n], n)
            if n < n_steps:
                sub[k, n + 1] = normalize(propagate(sub[k, n], tables[k, n], kernel))
        if n < n_steps:
            avg[n + 1] = sub[:, n + 1].mean(axis=0)
    value = float(np.mean([evaluate_policy(env, mu0, tables[k], avg, n_steps) for k in range(n_pol)]))
    return MixtureRollout(sub, avg, tables, value)


def mixture_exploitability(env: Environment, mu0: np.ndarray, rollout: MixtureRollout, n_steps: int) -> float:
    _, values = best_response(env, rollout.flow, n_steps)
    return float(np.asarray(mu0) @ values.values[0]) - rollout.value


# -- Master Fictitious Play ------------------------------------------------------


@dataclass
class MasterPolicyBundle:
    """Policies ``pi_0 .. pi_K`` (``pi_0`` is the initial policy) with uniform weights.

    ``include_initial`` controls whether ``pi_0`` takes part in rollouts and
    exploitability. The returned mixture includes it; the per-iteration
    ``history`` is computed over the trained ``pi_1 .. pi_k`` only.
    """

    policies: List[PopulationPolicy]
    bank: dict  # name -> averaged flow
    history: list  # average exploitability after each iteration
    per_distribution: list  # dicts name -> exploitability, one per iteration
    include_initial: bool = True
    fit_losses: list = field(default_factory=list)
    zero_mu_input: bool = False

    @property
    def trained(self) -> list:
        return self.policies[1:]

    def active(self) -> list:
        return self.policies if self.include_initial else self.trained

    def rollout(self, env: Environment, mu0: np.ndarray, n_steps: int):
        """Averaged flow and exploitability of the mixture from ``mu0``."""
        mix = rollout_mixture(env, mu0, self.active(), n_steps)
        return mix.flow, mixture_exploitability(env, mu0, mix, n_steps)

    def networks(self) -> list:
        return [p.net for p in self.trained if isinstance(p, GreedyQPolicy)]


def average_exploitability(env: Environment, distributions, bundle, n_steps: int, policies=None) -> tuple:
    """Mean over initial distributions of the mixture exploitability; also returns the per-distribution values."""
    policies = bundle.active() if policies is None else policies
    per = {}
    for name, mu0 in distributions:
        mix = rollout_mixture(env, mu0, policies, n_steps)
        per[name] = mixture_exploitability(env, mu0, mix, n_steps)
    return float(np.mean(list(per.values()))), per


def master_fictitious_play(
    env: Environment,
    training,
    n_iterations: int,
    rl_cfg: RLConfig,
    n_steps: int,
    mode: str = "exact",
    seed: int = 0,
    conditioning: str = "bank",
    zero_mu_input: bool = False,
    initial_policy: Optional[PopulationPolicy] = None,
    track_exploitability: bool = True,
) -> MasterPolicyBundle:
    """Master Fictitious Play over a training set of initial distributions.

    Each iteration trains one Q-network against all averaged flows
    (``mode`` ``"exact"`` regresses on backward-induction targets, ``"dqn"``
    runs DQN), rolls its greedy policy out from every training distribution
    and averages the result into the bank with weights ``k/(k+1)`` and
    ``1/(k+1)``. ``conditioning="bank"`` lets the induced flow observe the
    bank flow; ``"self"`` lets it observe itself.
    """
    if n_iterations < 1:
        raise ValueError("need at least one iteration")
    names = [name for name, _ in training]
    if not names:
        raise ValueError("empty training set")
    if mode not in ("exact", "dqn"):
        raise ValueError(f"unknown mode {mode!r}")
    if conditioning not in ("bank", "self"):
        raise ValueError(f"unknown conditioning {conditioning!r}")
    initial = dict(training)
    seeds = np.random.SeedSequence(seed)
    init_seq, dqn_seq = seeds.spawn(2)
    dqn_rng = np.random.default_rng(dqn_seq)
    pi0 = UniformPopulationPolicy(env.n_states, env.n_actions) if initial_policy is None else initial_policy
    bank = {name: constant_flow(mu0, n_steps) for name, mu0 in training}
    policies: list = [pi0]
    history, per_distribution, losses = [], [], []
    net = make_network(env, rl_cfg, zero_mu_input, seed=int(init_seq.generate_state(1)[0]))
    for k in range(1, n_iterations + 1):
        flows = [bank[name] for name in names]
        if mode == "exact":
            result = fit_q_exact(env, flows, rl_cfg, n_steps, net=net, zero_mu_input=zero_mu_input)
            net, loss = result.net, result.loss
        else:
            net = train_dqn(env, [initial[n] for n in names], flows, rl_cfg, zero_mu_input=zero_mu_input, rng=dqn_rng)
            loss = float("nan")
        losses.append(loss)
        policy = GreedyQPolicy(net.copy())
        policies.append(policy)
        for name in names:
            reference = bank[name] if conditioning == "bank" else None
            _, flow = induce_policy(policy, env, initial[name], n_steps, conditioning=reference)
            bank[name] = (k / (k + 1)) * bank[name] + flow / (k + 1)
        if track_exploitability:
            avg, per = average_exploitability(env, training, None, n_steps, policies=policies[1:])
            history.append(avg)
            per_distribution.append(per)
            log.info("master FP iteration %d: loss %.3e, average exploitability %.4f", k, loss, avg)
    return MasterPolicyBundle(policies, bank, history, per_distribution, fit_losses=losses, zero_mu_input=zero_mu_input)


def solve_unconditioned(env: Environment, training, n_iterations: int, rl_cfg: RLConfig, n_steps: int, **kwargs) -> MasterPolicyBundle:
    """Master Fictitious Play with the MF-state embedding replaced by zeros."""
    return master_fictitious_play(env, training, n_iterations, rl_cfg, n_steps, zero_mu_input=True, **kwargs)


class AgnosticPolicy:
    """Time-indexed policy usable as a benchmark row."""

    def __init__(self, policy: np.ndarray):
        self.policy = np.asarray(policy, dtype=float)

    def rollout(self, env, mu0, n_steps):
        flow = rollout_flow(env, mu0, self.policy, n_steps)
        return flow, exploitability(env, mu0, self.policy, n_steps)
