"""Environments, initial-distribution sets and the monotonicity check."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .core import ActionSpace, Environment, StateSpace, normalize

DEFAULT_GAMMA = 0.9
MU_CLIP = 1e-10

LINE_MOVES = ((-1,), (0,), (1,))
# (drow, dcol); stay first so the 4-move variant is a suffix slice
GRID_MOVES = ((0, 0), (-1, 0), (1, 0), (0, -1), (0, 1))


@dataclass(frozen=True)
class Exploration1DConfig:
    size: int = 32
    gamma: float = DEFAULT_GAMMA
    mu_clip: float = MU_CLIP
    move_cost_scale: Optional[float] = None  # defaults to 1/size

    def __post_init__(self):
        if self.size < 2:
            raise ValueError("size must be >= 2")
        if not 0.0 < self.mu_clip < 1.0 / self.size:
            raise ValueError("mu_clip must lie in (0, 1/size)")


@dataclass(frozen=True)
class BeachBar2DConfig:
    width: int = 16
    height: int = 16
    bar: Optional[tuple] = None  # (row, col); defaults to the center
    gamma: float = DEFAULT_GAMMA
    mu_clip: float = MU_CLIP
    move_cost_scale: Optional[float] = None
    four_moves: bool = False

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValueError("grid must be nonempty")
        if not 0.0 < self.mu_clip < 1.0 / (self.width * self.height):
            raise ValueError("mu_clip must lie in (0, 1/size)")
        row, col = self.bar_position
        if not (0 <= row < self.height and 0 <= col < self.width):
            raise ValueError(f"bar {self.bar_position} outside the grid")

    @property
    def bar_position(self) -> tuple:
        if self.bar is None:
            return (self.height // 2, self.width // 2)
        return tuple(int(v) for v in self.bar)


def _clamped_transitions(space: StateSpace, moves: np.ndarray) -> np.ndarray:
    coords = space.coords()
    limits = np.array(space.shape[::-1] if space.kind == "line" else space.shape) - 1
    n, n_actions = space.size, len(moves)
    transition = np.zeros((n, n_actions, n))
    for a, move in enumerate(moves):
        target = np.clip(coords + move, 0, limits)
        if space.kind == "line":
            idx = target[:, 0]
        else:
            idx = target[:, 0] * space.width + target[:, 1]
        transition[np.arange(n), a, idx] = 1.0
    return transition


def _log_crowd_penalty(mu_clip: float):
    def reward_m(mu):
        return -np.log(np.maximum(mu, mu_clip))

    return reward_m


def make_exploration_1d(cfg: Exploration1DConfig = Exploration1DConfig()) -> Environment:
    """Agents spread out on a line: ``r = -log(mu(x)) - |a| / |X|``."""
    space = StateSpace.line(cfg.size)
    actions = ActionSpace(LINE_MOVES)
    moves = actions.as_array()
    scale = 1.0 / cfg.size if cfg.move_cost_scale is None else cfg.move_cost_scale
    reward_a = -scale * np.abs(moves).sum(axis=1)[None, :].repeat(cfg.size, axis=0)
    return Environment(
        cfg.size,
        actions.size,
        cfg.gamma,
        reward_a,
        _log_crowd_penalty(cfg.mu_clip),
        _clamped_transitions(space, moves),
        space=space,
        actions=actions,
        name="exploration_1d",
    )


def bar_attraction(cfg: BeachBar2DConfig) -> np.ndarray:
    """Negated L1 distance to the bar, normalized by ``width + height``."""
    space = StateSpace.grid(cfg.width, cfg.height)
    dist = np.abs(space.coords() - np.array(cfg.bar_position)).sum(axis=1)
    return -dist / (cfg.width + cfg.height)


def make_beach_bar_2d(cfg: BeachBar2DConfig = BeachBar2DConfig()) -> Environment:
    """Agents head for the bar while avoiding crowds; walls on the boundary."""
    space = StateSpace.grid(cfg.width, cfg.height)
    actions = ActionSpace(GRID_MOVES[1:] if cfg.four_moves else GRID_MOVES)
    moves = actions.as_array()
    scale = 1.0 / space.size if cfg.move_cost_scale is None else cfg.move_cost_scale
    reward_a = -scale * np.abs(moves).sum(axis=1)[None, :].repeat(space.size, axis=0)
    attraction = bar_attraction(cfg)
    crowd = _log_crowd_penalty(cfg.mu_clip)

    def reward_m(mu):
        return attraction + crowd(mu)

    return Environment(
        space.size,
        actions.size,
        cfg.gamma,
        reward_a,
        reward_m,
        _clamped_transitions(space, moves),
        space=space,
        actions=actions,
        name="beach_bar_2d",
    )


def make_random_toy(
    rng: np.random.Generator,
    n_states: int = 3,
    n_actions: int = 2,
    gamma: float = DEFAULT_GAMMA,
    mu_dependent_transition: bool = False,
) -> Environment:
    """Small random MFG used by the exhaustive-enumeration checks.

    The reward couples to the population through ``c_x * mu(x)``; with
    ``mu_dependent_transition`` the kernel interpolates between two random
    kernels with weight ``mu(0)``.
    """
    reward_a = rng.normal(size=(n_states, n_actions))
    coupling = rng.normal(size=n_states)
    kernel = rng.dirichlet(np.ones(n_states), size=(n_states, n_actions))

    def reward_m(mu):
        return coupling * mu

    if mu_dependent_transition:
        other = rng.dirichlet(np.ones(n_states), size=(n_states, n_actions))

        def transition(mu):
            return (1.0 - mu[0]) * kernel + mu[0] * other

    else:
        transition = kernel
    return Environment(n_states, n_actions, gamma, reward_a, reward_m, transition, name="random_toy")


def make_constant_reward_stub(
    n_states: int = 3, n_actions: int = 2, value: float = 1.0, gamma: float = DEFAULT_GAMMA, seed: int = 0
) -> Environment:
    rng = np.random.default_rng(seed)
    kernel = rng.dirichlet(np.ones(n_states), size=(n_states, n_actions))
    return Environment(
        n_states,
        n_actions,
        gamma,
        np.full((n_states, n_actions), float(value)),
        lambda mu: np.zeros_like(mu),
        kernel,
        name="constant_reward_stub",
    )


def make_crowd_seeking_stub(n_states: int = 8, gamma: float = DEFAULT_GAMMA) -> Environment:
    """Non-monotone stub: agents are rewarded for joining crowds (``r_M = +mu(x)``)."""
    space = StateSpace.line(n_states)
    moves = np.array(LINE_MOVES)
    return Environment(
        n_states,
        len(moves),
        gamma,
        np.zeros((n_states, len(moves))),
        lambda mu: np.array(mu, dtype=float),
        _clamped_transitions(space, moves),
        space=space,
        actions=ActionSpace(LINE_MOVES),
        name="crowd_seeking_stub",
    )


def gaussian_distribution(space: StateSpace, mean, variance: float) -> np.ndarray:
    """Isotropic Gaussian density at cell centers, normalized to a distribution."""
    if variance <= 0:
        raise ValueError("variance must be positive")
    mean = np.atleast_1d(np.asarray(mean, dtype=float))
    coords = space.coords().astype(float)
    if mean.shape != (coords.shape[1],):
        raise ValueError(f"mean must have {coords.shape[1]} coordinates")
    upper = np.array(space.shape[::-1] if space.kind == "line" else space.shape) - 1
    if np.any(mean < 0) or np.any(mean > upper):
        raise ValueError(f"mean {mean} outside the domain")
    sq = ((coords - mean) ** 2).sum(axis=1)
    # shift by the minimum so narrow Gaussians do not underflow to all zeros
    density = np.exp(-(sq - sq.min()) / (2.0 * variance))
    return density / density.sum()


def random_distribution(space: StateSpace, seed: int) -> np.ndarray:
    """Independent uniform(0, 1) weights per state, normalized."""
    rng = np.random.default_rng(seed)
    weights = rng.uniform(size=space.size)
    while np.any(weights == 0.0):
        weights = rng.uniform(size=space.size)
    return weights / weights.sum()


@dataclass
class DistributionSet:
    names: list
    entries: np.ndarray
    kind: str
    metadata: list = field(default_factory=list)

    def __post_init__(self):
        self.entries = np.atleast_2d(np.asarray(self.entries, dtype=float))
        if len(self.names) == 0 or len(self.names) != len(self.entries):
            raise ValueError("distribution set must be nonempty with one name per entry")
        if self.kind not in ("training", "testing"):
            raise ValueError(f"unknown kind {self.kind!r}")
        if not self.metadata:
            self.metadata = [{} for _ in self.names]

    def __len__(self):
        return len(self.names)

    def __iter__(self):
        return iter(zip(self.names, self.entries))

    def to_json(self) -> dict:
        return {
            "kind": self.kind,
            "entries": [
                {"name": name, "probs": mu.tolist(), "provenance": meta}
                for name, mu, meta in zip(self.names, self.entries, self.metadata)
            ],
        }

    @classmethod
    def from_json(cls, data: dict) -> "DistributionSet":
        entries = data["entries"]
        return cls(
            [e["name"] for e in entries],
            np.array([e["probs"] for e in entries]),
            data["kind"],
            [e.get("provenance", {}) for e in entries],
        )


def default_training_means(space: StateSpace) -> list:
    if space.kind == "line":
        return [float(round(i * space.size / 5)) for i in range(1, 5)]
    rows = [round(space.height / 4), round(3 * space.height / 4)]
    cols = [round(space.width / 4), round(3 * space.width / 4)]
    return [(float(r), float(c)) for r in rows for c in cols]


def default_variance(space: StateSpace) -> float:
    return (max(space.shape) / 10.0) ** 2


def make_training_set(space: StateSpace, means=None, variance: Optional[float] = None) -> DistributionSet:
    """Equal-variance Gaussians whose means cover the domain."""
    means = default_training_means(space) if means is None else means
    variance = default_variance(space) if variance is None else variance
    names, entries, meta = [], [], []
    for i, mean in enumerate(means):
        names.append(f"train_gauss_{i}")
        entries.append(gaussian_distribution(space, mean, variance))
        meta.append({"type": "gaussian", "mean": np.atleast_1d(mean).tolist(), "variance": variance})
    return DistributionSet(names, np.array(entries), "training", meta)


def make_testing_set(
    space: StateSpace,
    training_means=None,
    variances=None,
    n_random: int = 2,
    seed: int = 0,
) -> DistributionSet:
    """Random distributions plus Gaussians centred between consecutive training means."""
    training_means = default_training_means(space) if training_means is None else training_means
    base = default_variance(space)
    variances = [base / 2.0, base * 2.0, base] if variances is None else list(variances)
    names, entries, meta = [], [], []
    seeds = np.random.SeedSequence(seed).generate_state(n_random)
    for i, s in enumerate(seeds):
        names.append(f"test_random_{i}")
        entries.append(random_distribution(space, int(s)))
        meta.append({"type": "random", "seed": int(s)})
    mids = [
        (np.atleast_1d(a).astype(float) + np.atleast_1d(b).astype(float)) / 2.0
        for a, b in zip(training_means[:-1], training_means[1:])
    ]
    for i, mean in enumerate(mids):
        variance = variances[i % len(variances)]
        names.append(f"test_gauss_{i}")
        entries.append(gaussian_distribution(space, mean, variance))
        meta.append({"type": "gaussian", "mean": mean.tolist(), "variance": variance})
    if len(names) == 0:
        raise ValueError("testing set is empty")
    return DistributionSet(names, np.array(entries), "testing", meta)


@dataclass(frozen=True)
class MonotonicityReport:
    violations: int
    min_margin: float
    n_pairs: int


def monotonicity_margin(env: Environment, mu: np.ndarray, mu_prime: np.ndarray) -> float:
    return float(np.dot(mu - mu_prime, env.reward_m(mu) - env.reward_m(mu_prime)))


def check_monotonicity(env: Environment, n_pairs: int = 1000, seed: int = 0) -> MonotonicityReport:
    """Sample distinct pairs of random distributions and test the monotonicity sign.

    ``min_margin`` is the largest (least negative) margin seen; a violation
    is any non-negative margin.
    """
    rng = np.random.default_rng(seed)
    violations = 0
    worst = -np.inf
    for _ in range(n_pairs):
        while True:
            mu = normalize(rng.uniform(size=env.n_states))
            mu_prime = normalize(rng.uniform(size=env.n_states))
            if not np.array_equal(mu, mu_prime):
                break
        margin = monotonicity_margin(env, mu, mu_prime)
        violations += margin >= 0
        worst = max(worst, margin)
    return MonotonicityReport(int(violations), float(worst), n_pairs)
