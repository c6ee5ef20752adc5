"""Learning a population-dependent best response.

Two routes produce a :class:`~masterfp.qnet.QNetwork` against a set of
averaged flows:

* :func:`train_dqn` - DQN with replay memory and a periodically synced
  target network; the MF argument of rewards and transitions is the
  averaged flow at the current step.
* :func:`fit_q_exact` - least-squares regression of the network on exact
  backward-induction Q-values, deterministic and free of sampling noise.
"""

from __future__ import annotations

import logging
from collections import deque
from dataclasses import asdict, dataclass, field
from typing import NamedTuple, Optional, Sequence

import numpy as np
from scipy.optimize import minimize

from .core import Environment, PopulationPolicy, best_response, deterministic_policy
from .qnet import Adam, QNetwork, ReLU

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class RLConfig:
    n_episodes: int = 2000
    n_inner: Optional[int] = None  # defaults to horizon + 1
    batch_size: int = 32
    sync_period: int = 100
    epsilon: float = 0.1
    learning_rate: float = 1e-3
    optimizer: str = "adam"
    buffer_capacity: int = 50_000
    updates_per_episode: int = 1
    hidden: tuple = (64, 64)
    conv_channels: tuple = (8, 16)
    fit_max_iter: int = 200
    fit_tol: float = 1e-12
    seed: int = 0

    def __post_init__(self):
        positive = ("n_episodes", "batch_size", "sync_period", "buffer_capacity", "updates_per_episode", "fit_max_iter")
        for name in positive:
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.n_inner is not None and self.n_inner <= 0:
            raise ValueError("n_inner must be positive")
        if not 0.0 <= self.epsilon <= 1.0:
            raise ValueError("epsilon must lie in [0, 1]")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.optimizer != "adam":
            raise ValueError(f"unsupported optimizer {self.optimizer!r}")
        if not self.hidden or any(h <= 0 for h in self.hidden):
            raise ValueError("hidden sizes must be positive")
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        object.__setattr__(self, "conv_channels", tuple(int(c) for c in self.conv_channels))

    def to_dict(self) -> dict:
        out = asdict(self)
        out["hidden"] = list(self.hidden)
        out["conv_channels"] = list(self.conv_channels)
        return out


def make_network(env: Environment, cfg: RLConfig, zero_mu_input: bool = False, seed: Optional[int] = None) -> QNetwork:
    grid = None
    if env.space is not None and env.space.kind == "grid":
        grid = env.space.shape
    return QNetwork(
        env.n_states,
        env.n_actions,
        hidden=cfg.hidden,
        grid_shape=grid,
        conv_channels=cfg.conv_channels,
        zero_mu_input=zero_mu_input,
        seed=cfg.seed if seed is None else seed,
    )


def q_forward(net: QNetwork, x: int, mu: np.ndarray) -> np.ndarray:
    return net([x], np.asarray(mu, dtype=float))[0]


class GreedyQPolicy(PopulationPolicy):
    """``argmax_a Q(x, mu, a)`` with ties broken toward the lowest action index."""

    def __init__(self, net: QNetwork):
        self.net = net
        self.n_states = net.n_states
        self.n_actions = net.n_actions

    def table(self, mu, step=0):
        q = self.net.all_states(np.asarray(mu, dtype=float))
        return deterministic_policy(q.argmax(axis=1), self.n_actions)


def greedy_policy(net: QNetwork) -> GreedyQPolicy:
    return GreedyQPolicy(net)


# -- exact fitted Q -----------------------------------------------------------


class FitResult(NamedTuple):
    net: QNetwork
    loss: float


def exact_q_dataset(env: Environment, flows: Sequence[np.ndarray], n_steps: int):
    """Inputs and exact Q-targets for every (state, flow step) pair.

    Returns ``(mu_table, state_idx, mu_idx, targets)``; sample ``i`` is state
    ``state_idx[i]`` facing ``mu_table[mu_idx[i]]``.
    """
    tables, targets = [], []
    for flow in flows:
        _, values = best_response(env, flow, n_steps)
        tables.append(np.asarray(flow[: n_steps + 1], dtype=float))
        targets.append(values.q_values.reshape(-1, env.n_actions))
    mu_table = np.concatenate(tables)
    state_idx = np.tile(np.arange(env.n_states), len(mu_table))
    mu_idx = np.repeat(np.arange(len(mu_table)), env.n_states)
    return mu_table, state_idx, mu_idx, np.concatenate(targets)


def regress(net: QNetwork, mu_table, state_idx, mu_idx, targets, max_iter: int, tol: float = 1e-12) -> float:
    """Full-batch L-BFGS on the mean squared error; returns the loss in target units."""
    targets = np.asarray(targets, dtype=float)
    net.shift = float(targets.mean())
    spread = float(targets.std())
    net.scale = spread if spread > 0 else 1.0
    normalized = (targets - net.shift) / net.scale

    def objective(theta):
        net.set_flat(theta)
        resid = net.forward_indexed(state_idx, mu_table, mu_idx) - normalized
        net.backward(2.0 * resid / resid.size)
        return float(np.mean(resid**2)), net.flat_grad()

    result = minimize(
        objective,
        net.get_flat(),
        jac=True,
        method="L-BFGS-B",
        options={"maxiter": max_iter, "ftol": tol, "gtol": 1e-14, "maxcor": 20},
    )
    net.set_flat(result.x)
    resid = net.forward_indexed(state_idx, mu_table, mu_idx) - normalized
    return float(np.mean(resid**2)) * net.scale**2


def fit_q_exact(
    env: Environment,
    flows: Sequence[np.ndarray],
    cfg: RLConfig,
    n_steps: Optional[int] = None,
    net: Optional[QNetwork] = None,
    zero_mu_input: bool = False,
) -> FitResult:
    """Regress a Q-network on backward-induction Q-values against each flow."""
    if len(flows) == 0:
        raise ValueError("need at least one flow")
    n_steps = len(flows[0]) - 1 if n_steps is None else n_steps
    net = make_network(env, cfg, zero_mu_input) if net is None else net
    data = exact_q_dataset(env, flows, n_steps)
    loss = regress(net, *data, max_iter=cfg.fit_max_iter, tol=cfg.fit_tol)
    log.debug("exact fit: %d samples, loss %.3e", len(data[1]), loss)
    return FitResult(net, loss)


# -- DQN ------------------------------------------------------------------------


@dataclass(frozen=True)
class Transition:
    x: int
    a: int
    mu: np.ndarray
    r: float
    x_next: int
    mu_next: np.ndarray
    step: int
    terminal: bool
    key: int = -1  # row of ``mu`` in the trainer's MF-state table
    key_next: int = -1


class ReplayBuffer:
    """FIFO ring buffer; minibatches are drawn uniformly without replacement."""

    def __init__(self, capacity: int, rng: np.random.Generator):
        if capacity <= 0:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self.rng = rng
        self._items = deque(maxlen=capacity)

    def __len__(self):
        return len(self._items)

    def add(self, transition: Transition) -> None:
        self._items.append(transition)

    def sample(self, size: int) -> list:
        idx = self.rng.choice(len(self._items), size=min(size, len(self._items)), replace=False)
        return [self._items[i] for i in idx]


def td_loss(net: QNetwork, batch: Sequence[Transition], mu_table: np.ndarray, gamma: float, backward: bool = True):
    """Mean squared TD error with targets from the online network itself.

    When ``backward`` is set, parameter gradients are left in ``net.grads``.
    """
    x = np.array([t.x for t in batch])
    a = np.array([t.a for t in batch])
    r = np.array([t.r for t in batch])
    x_next = np.array([t.x_next for t in batch])
    keys = np.array([t.key for t in batch])
    keys_next = np.array([t.key_next for t in batch])
    alive = 1.0 - np.array([t.terminal for t in batch], dtype=float)
    q_next = net.scale * net.forward_indexed(x_next, mu_table, keys_next) + net.shift
    targets = r + gamma * alive * q_next.max(axis=1)
    raw = net.forward_indexed(x, mu_table, keys)
    pred = net.scale * raw[np.arange(len(batch)), a] + net.shift
    resid = pred - targets
    loss = float(np.mean(resid**2))
    if backward:
        grad = np.zeros_like(raw)
        grad[np.arange(len(batch)), a] = 2.0 * resid * net.scale / len(batch)
        net.backward(grad)
    return loss


def train_dqn(
    env: Environment,
    initial: Sequence[np.ndarray],
    flows: Sequence[np.ndarray],
    cfg: RLConfig,
    net: Optional[QNetwork] = None,
    zero_mu_input: bool = False,
    rng: Optional[np.random.Generator] = None,
    history: Optional[list] = None,
) -> QNetwork:
    """DQN best response against averaged flows ``flows[i]`` started from ``initial[i]``.

    Behaviour is epsilon-greedy on the target network; episodes end at the
    flow horizon with zero continuation. ``history`` (if given) receives one
    ``(grad_step, loss, target_checksum)`` tuple per gradient step.
    """
    if len(initial) == 0 or len(initial) != len(flows):
        raise ValueError("need one flow per initial distribution")
    rng = np.random.default_rng(cfg.seed) if rng is None else rng
    horizon = len(flows[0]) - 1
    n_inner = horizon + 1 if cfg.n_inner is None else min(cfg.n_inner, horizon + 1)
    if net is None:
        net = make_network(env, cfg, zero_mu_input, seed=int(rng.integers(2**31)))
        net.scale = 1.0 / (1.0 - env.gamma)
    target = net.copy()
    optimizer = Adam(net.params, lr=cfg.learning_rate)
    buffer = ReplayBuffer(cfg.buffer_capacity, rng)
    mu_table = np.concatenate([np.asarray(f, dtype=float) for f in flows])
    rewards = [[env.reward(mu) for mu in flow] for flow in flows]
    kernels = [[env.transition(mu) for mu in flow] for flow in flows]
    grad_steps = 0
    for _ in range(cfg.n_episodes):
        i = int(rng.integers(len(initial)))
        flow = flows[i]
        x = int(rng.choice(env.n_states, p=initial[i]))
        for n in range(n_inner):
            key = i * (horizon + 1) + n
            if rng.random() < cfg.epsilon:
                a = int(rng.integers(env.n_actions))
            else:
                a = int(target([x], flow[n])[0].argmax())
            x_next = int(rng.choice(env.n_states, p=kernels[i][n][x, a]))
            terminal = n == horizon
            step_next = n if terminal else n + 1
            buffer.add(
                Transition(x, a, flow[n], float(rewards[i][n][x, a]), x_next, flow[step_next], n, terminal, key, key - n + step_next)
            )
            x = x_next
        if len(buffer) < cfg.batch_size:
            continue
        for _ in range(cfg.updates_per_episode):
            loss = td_loss(net, buffer.sample(cfg.batch_size), mu_table, env.gamma)
            optimizer.step(net.grads)
            grad_steps += 1
            if history is not None:
                history.append((grad_steps, loss, float(target.get_flat().sum())))
            if grad_steps % cfg.sync_period == 0:
                target = net.copy()
    return net


# -- gradient verification ------------------------------------------------------


@dataclass(frozen=True)
class GradientCheckReport:
    max_rel_err: float
    n_used: int
    n_skipped: int
    errors: list = field(default_factory=list)


def _relu_masks(net: QNetwork) -> list:
    return [layer.mask.copy() for layer in net.layers() if isinstance(layer, ReLU) and hasattr(layer, "mask")]


def gradient_check(
    net: QNetwork, n_probes: int = 50, seed: int = 0, h: float = 1e-5, batch: int = 8, tamper=None, resolution: float = 1e-5
) -> GradientCheckReport:
    """Compare backprop gradients with central differences on random parameters.

    The loss is half the squared error of the raw outputs against random
    targets on a random batch. Probes whose perturbation flips any ReLU are
    skipped, as are probes whose gradient is too small for the central
    difference to resolve to ``resolution`` above its rounding noise. ``tamper`` optionally
    maps the backprop gradient before comparison, to show that corruption
    is caught.
    """
    rng = np.random.default_rng(seed)
    states = rng.integers(net.n_states, size=batch)
    mu_table = rng.dirichlet(np.ones(net.n_states), size=3)
    mu_idx = rng.integers(3, size=batch)
    targets = rng.normal(size=(batch, net.n_actions))

    def loss_at(theta):
        net.set_flat(theta)
        out = net.forward_indexed(states, mu_table, mu_idx)
        return 0.5 * float(np.sum((out - targets) ** 2)), out

    theta = net.get_flat().copy()
    _, out = loss_at(theta)
    net.backward(out - targets)
    analytic = net.flat_grad()
    if tamper is not None:
        analytic = np.asarray(tamper(analytic), dtype=float)
    base_masks = _relu_masks(net)
    sizes = [p.size for p in net.params]
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    errors, skipped = [], 0
    for _ in range(n_probes):
        tensor = int(rng.integers(len(sizes)))
        idx = int(offsets[tensor] + rng.integers(sizes[tensor]))
        plus, minus = theta.copy(), theta.copy()
        plus[idx] += h
        minus[idx] -= h
        f_plus, _ = loss_at(plus)
        masks_plus = _relu_masks(net)
        f_minus, _ = loss_at(minus)
        masks_minus = _relu_masks(net)
        kinked = any(
            not (np.array_equal(m0, m1) and np.array_equal(m0, m2)) for m0, m1, m2 in zip(base_masks, masks_plus, masks_minus)
        )
        numeric = (f_plus - f_minus) / (2 * h)
        scale = max(abs(numeric), abs(analytic[idx]))
        noise = np.finfo(float).eps * (abs(f_plus) + abs(f_minus)) / (2 * h)
        if kinked or scale < max(1e-10, noise / resolution):
            skipped += 1
            continue
        errors.append(abs(numeric - analytic[idx]) / scale)
    net.set_flat(theta)
    return GradientCheckReport(float(max(errors)) if errors else float("nan"), len(errors), skipped, errors)
