"""Wasserstein distances, flow distance and benchmark performance matrices."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core import PopulationPolicy, ShapeError, StateSpace, exploitability, induce_policy, rollout_flow
from .transport import min_cost_transshipment, scale_to_integers

MASS_SCALE = 2**40
LOG_FLOOR = 1e-12


@dataclass(frozen=True)
class GroundMetric:
    """L1 distance on a line or grid, optionally divided by the domain diameter."""

    space: StateSpace
    normalized: bool = True

    @property
    def unit(self) -> float:
        diam = self.space.diameter()
        return 1.0 / diam if (self.normalized and diam > 0) else 1.0

    def steps(self) -> np.ndarray:
        """Integer L1 distances between all pairs of states."""
        coords = self.space.coords()
        return np.abs(coords[:, None, :] - coords[None, :, :]).sum(axis=2)

    def matrix(self) -> np.ndarray:
        return self.steps() * self.unit

    def neighbor_costs(self) -> np.ndarray:
        """Dense arc costs of the nearest-neighbour graph (``inf`` off-graph).

        Shortest paths on this graph reproduce the L1 metric, so transshipment
        on it equals optimal transport under the full metric.
        """
        steps = self.steps()
        return np.where(steps == 1, 1.0, np.inf)


def _check_pair(mu, nu):
    mu = np.asarray(mu, dtype=float)
    nu = np.asarray(nu, dtype=float)
    if mu.shape != nu.shape or mu.ndim != 1:
        raise ShapeError(f"distribution shapes differ: {mu.shape} vs {nu.shape}")
    return mu, nu


def wasserstein_1d(mu, nu, spacing: float = 1.0) -> float:
    """Closed form on a line: ``sum |F_mu - F_nu| * spacing``."""
    mu, nu = _check_pair(mu, nu)
    return float(np.abs(np.cumsum(mu - nu)[:-1]).sum() * spacing)


def wasserstein_min_cost_flow(mu, nu, metric: GroundMetric, scale: int = MASS_SCALE) -> tuple:
    """Exact transport cost on integer-scaled masses.

    Returns ``(distance, error_bound)``; the bound covers the rounding of the
    masses to multiples of ``1/scale``.
    """
    mu, nu = _check_pair(mu, nu)
    if mu.shape[0] != metric.space.size:
        raise ShapeError("distribution does not match the ground metric")
    a = scale_to_integers(mu, scale)
    b = scale_to_integers(nu, scale)
    total, _ = min_cost_transshipment(metric.neighbor_costs(), a - b)
    rounding = (np.abs(a / scale - mu).sum() + np.abs(b / scale - nu).sum())
    bound = rounding * metric.space.diameter() * metric.unit
    return total / scale * metric.unit, float(bound)


def wasserstein(mu, nu, metric: GroundMetric) -> float:
    if metric.space.kind == "line":
        mu, nu = _check_pair(mu, nu)
        if mu.shape[0] != metric.space.size:
            raise ShapeError("distribution does not match the ground metric")
        return wasserstein_1d(mu, nu, metric.unit)
    return wasserstein_min_cost_flow(mu, nu, metric)[0]


def flow_distance(flow_a, flow_b, metric: GroundMetric, n_steps: int) -> float:
    """Time-averaged Wasserstein distance over steps ``0..n_steps``."""
    flow_a = np.asarray(flow_a, dtype=float)
    flow_b = np.asarray(flow_b, dtype=float)
    if len(flow_a) < n_steps + 1 or len(flow_b) < n_steps + 1:
        raise ShapeError("flows shorter than the horizon")
    return float(np.mean([wasserstein(flow_a[n], flow_b[n], metric) for n in range(n_steps + 1)]))


@dataclass
class PerformanceMatrix:
    rows: list
    columns: list
    values: np.ndarray
    kind: str  # "wasserstein" or "exploitability"

    def log10(self) -> np.ndarray:
        return np.log10(np.maximum(self.values, LOG_FLOOR))

    def to_json(self, log: bool = False) -> dict:
        values = self.log10() if log else self.values
        return {
            "kind": self.kind,
            "log10": log,
            "rows": list(self.rows),
            "columns": list(self.columns),
            "values": values.tolist(),
        }

    def to_csv(self, log: bool = False) -> str:
        import csv
        import io

        values = self.log10() if log else self.values
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\r\n")
        writer.writerow(["policy"] + list(self.columns))
        for label, row in zip(self.rows, values):
            writer.writerow([label] + [repr(float(v)) for v in row])
        return buf.getvalue()


def policy_outcome(env, policy, mu0, n_steps: int) -> tuple:
    """Population flow and exploitability of any supported policy from ``mu0``.

    ``policy`` is a time-indexed array, a :class:`PopulationPolicy`, or any
    object with a ``rollout(env, mu0, n_steps) -> (flow, exploitability)``
    method (mixtures of population-dependent policies).
    """
    if hasattr(policy, "rollout"):
        return policy.rollout(env, mu0, n_steps)
    if isinstance(policy, PopulationPolicy):
        table, flow = induce_policy(policy, env, mu0, n_steps)
        return flow, exploitability(env, mu0, table, n_steps)
    policy = np.asarray(policy, dtype=float)
    return rollout_flow(env, mu0, policy, n_steps), exploitability(env, mu0, policy, n_steps)


def performance_matrices(
    env,
    policies: list,
    distributions,
    reference_flows: dict,
    n_steps: int,
    metric: Optional[GroundMetric] = None,
) -> tuple:
    """Wasserstein and exploitability matrices, rows = policies, columns = initial distributions.

    ``policies`` is a list of ``(label, policy)``; ``distributions`` yields
    ``(name, mu0)`` pairs; ``reference_flows`` maps each column name to its
    equilibrium flow.
    """
    metric = GroundMetric(env.space) if metric is None else metric
    columns = [name for name, _ in distributions]
    missing = [name for name in columns if name not in reference_flows]
    if missing:
        raise KeyError(f"missing reference flow for {missing}")
    w = np.zeros((len(policies), len(columns)))
    e = np.zeros_like(w)
    for j, (name, mu0) in enumerate(distributions):
        for i, (_, policy) in enumerate(policies):
            flow, gap = policy_outcome(env, policy, mu0, n_steps)
            w[i, j] = flow_distance(flow, reference_flows[name], metric, n_steps)
            e[i, j] = gap
    rows = [label for label, _ in policies]
    return (
        PerformanceMatrix(rows, columns, w, "wasserstein"),
        PerformanceMatrix(rows, columns, e, "exploitability"),
    )
