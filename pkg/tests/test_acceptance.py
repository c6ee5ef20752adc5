"""Acceptance gate: one PASS/FAIL line per criterion at its stated tolerance.

Shared experiments (specialized equilibria, the master and unconditioned
bundles) are module fixtures so each runs once. A criterion that misses its
threshold fails its test; the printed line carries the measured numbers.
"""

import time

import numpy as np
import pytest
import yaml

from conftest import record
from masterfp.cli import main
from masterfp.core import StateSpace, best_response, exploitability, rollout_flow, uniform_policy
from masterfp.envs import (
    BeachBar2DConfig,
    check_monotonicity,
    make_beach_bar_2d,
    make_exploration_1d,
    make_random_toy,
    make_testing_set,
    make_training_set,
)
from masterfp.fictitious_play import master_fictitious_play, solve_specialized_fp, solve_unconditioned
from masterfp.metrics import GroundMetric, flow_distance, wasserstein, wasserstein_1d, wasserstein_min_cost_flow
from masterfp.oracles import enumerated_best_value, enumerated_exploitability, transport_lp
from masterfp.qlearn import RLConfig, gradient_check
from masterfp.qnet import QNetwork

N_T = 30
K_SPECIALIZED = 20
K_MASTER = 10


@pytest.fixture(scope="module")
def exploration():
    env = make_exploration_1d()
    return env, make_training_set(env.space), make_testing_set(env.space)


@pytest.fixture(scope="module")
def specialized(exploration):
    env, training, testing = exploration
    metric = GroundMetric(env.space)
    start = time.perf_counter()
    sols = {name: solve_specialized_fp(env, mu0, K_SPECIALIZED, N_T, metric) for name, mu0 in training}
    training_seconds = time.perf_counter() - start
    sols.update({name: solve_specialized_fp(env, mu0, K_SPECIALIZED, N_T, metric) for name, mu0 in testing})
    return sols, training_seconds


@pytest.fixture(scope="module")
def bundles(exploration):
    env, training, _ = exploration
    cfg = RLConfig()
    start = time.perf_counter()
    master = master_fictitious_play(env, training, K_MASTER, cfg, N_T, seed=0)
    unconditioned = solve_unconditioned(env, training, K_MASTER, cfg, N_T, seed=0)
    return master, unconditioned, time.perf_counter() - start


def test_criterion_1_oracle_equivalence():
    rng = np.random.default_rng(2024)
    start = time.perf_counter()
    worst_j = worst_e = 0.0
    for i in range(60):
        n_states, n_actions, n_steps = int(rng.integers(1, 4)), int(rng.integers(1, 3)), int(rng.integers(0, 4))
        env = make_random_toy(rng, n_states, n_actions, mu_dependent_transition=bool(i % 2))
        mu0 = rng.dirichlet(np.ones(n_states))
        policy = rng.dirichlet(np.ones(n_actions), size=(n_steps + 1, n_states))
        flow = rollout_flow(env, mu0, policy, n_steps)
        _, table = best_response(env, flow, n_steps)
        worst_j = max(worst_j, abs(float(mu0 @ table.values[0]) - enumerated_best_value(env, mu0, flow, n_steps)))
        worst_e = max(worst_e, abs(exploitability(env, mu0, policy, n_steps) - enumerated_exploitability(env, mu0, policy, n_steps)))
    seconds = time.perf_counter() - start
    # summation order differs between the two evaluations, so "exact" is read as agreement to 1e-12
    ok = worst_j <= 1e-12 and worst_e < 1e-9 and seconds < 10
    record("1", ok, f"60 toys, max |J_BR - J_enum| = {worst_j:.1e}, max exploitability gap = {worst_e:.1e}, {seconds:.1f}s")
    assert ok


def test_criterion_2_nash_diagonal(exploration, specialized):
    env, training, _ = exploration
    sols, seconds = specialized
    metric = GroundMetric(env.space)
    diag_e, diag_w = [], []
    for name, mu0 in training:
        policy = sols[name].policy
        diag_e.append(exploitability(env, mu0, policy, N_T))
        diag_w.append(flow_distance(rollout_flow(env, mu0, policy, N_T), sols[name].flow, metric, N_T))
    ok = max(diag_e) < 1e-3 and max(diag_w) == 0.0 and seconds < 120
    record(
        "2",
        ok,
        f"E_ii = {', '.join(f'{e:.3g}' for e in diag_e)} (need < 1e-3); max W_ii = {max(diag_w):.1g}; {seconds:.1f}s",
    )
    assert ok


def test_criterion_3_fp_decay(exploration, specialized):
    _, training, _ = exploration
    sols, _ = specialized
    iters = np.arange(5, K_SPECIALIZED + 1)
    slopes, ratios = [], []
    for name in training.names:
        curve = sols[name].exploitability
        slopes.append(np.polyfit(np.log(iters), np.log(curve[iters - 1]), 1)[0])
        ratios.append(curve[K_SPECIALIZED - 1] / curve[1])
    ok = max(slopes) <= -0.5 and max(ratios) < 0.2
    record("3", ok, f"log-log slopes {', '.join(f'{s:.2f}' for s in slopes)}; E(20)/E(2) max {max(ratios):.3f}")
    assert ok


def test_criterion_4_master_ordering(exploration, specialized, bundles):
    env, training, testing = exploration
    sols, _ = specialized
    master, unconditioned, seconds = bundles
    n_train = len(training)
    random_row = uniform_policy(env.n_states, env.n_actions, N_T)

    def row(bundle, dset):
        return np.array([bundle.rollout(env, mu0, N_T)[1] for _, mu0 in dset])

    m_train, u_train = row(master, training), row(unconditioned, training)
    r_train = np.array([exploitability(env, mu0, random_row, N_T) for _, mu0 in training])
    off = [
        exploitability(env, mu0, sols[row_name].policy, N_T)
        for row_name in training.names
        for col_name, mu0 in training
        if col_name != row_name
    ]
    a, b, c = m_train.mean() <= np.mean(off), m_train.mean() <= u_train.mean(), m_train.mean() <= r_train.mean()
    m_test, u_test = row(master, testing), row(unconditioned, testing)
    r_test = np.array([exploitability(env, mu0, random_row, N_T) for _, mu0 in testing])
    wins = (m_test <= u_test) & (m_test <= r_test)
    share = wins.mean()
    record("4(a)", a, f"master {m_train.mean():.2f} vs specialized off-diagonal {np.mean(off):.2f}")
    record("4(b)", b, f"master {m_train.mean():.2f} vs unconditioned {u_train.mean():.2f}")
    record("4(c)", c, f"master {m_train.mean():.2f} vs uniform random {r_train.mean():.2f}")
    record(
        "4(gen)",
        share >= 0.7,
        f"master beats unconditioned and random on {wins.sum()}/{len(wins)} testing columns "
        f"(master {np.round(m_test, 2).tolist()}, unconditioned {np.round(u_test, 2).tolist()}, random {np.round(r_test, 2).tolist()})",
    )
    record("4(time)", seconds < 900, f"master + unconditioned training {seconds:.0f}s")
    assert a and b and c and share >= 0.7 and seconds < 900


def test_criterion_5_flow_matching(exploration, specialized, bundles):
    env, training, _ = exploration
    sols, _ = specialized
    master = bundles[0]
    metric = GroundMetric(env.space)
    gaps = []
    for name, mu0 in training:
        flow, _ = master.rollout(env, mu0, N_T)
        gaps.append((flow_distance(flow, sols[name].flow, metric, N_T), 3 * sols[name].residual))
    ok = all(d < bound for d, bound in gaps)
    record("5", ok, "W(master, equilibrium) vs 3x residual: " + "; ".join(f"{d:.4f} vs {b:.4f}" for d, b in gaps))
    assert ok


def test_criterion_6_monotonicity_and_separability():
    reports, worst = {}, 0.0
    rng = np.random.default_rng(6)
    for name, env in (("exploration_1d", make_exploration_1d()), ("beach_bar_2d", make_beach_bar_2d())):
        reports[name] = check_monotonicity(env, n_pairs=1000, seed=6).violations
        for _ in range(100):
            mu = rng.dirichlet(np.ones(env.n_states))
            manual = np.empty((env.n_states, env.n_actions))
            moves = env.actions.as_array()
            coords = env.space.coords()
            for x in range(env.n_states):
                crowd = -np.log(max(mu[x], 1e-10))
                if name == "beach_bar_2d":
                    crowd -= np.abs(coords[x] - np.array(BeachBar2DConfig().bar_position)).sum() / 32
                manual[x] = crowd - np.abs(moves).sum(axis=1) / env.n_states
            worst = max(worst, float(np.max(np.abs(env.reward(mu) - manual))))
    ok = all(v == 0 for v in reports.values()) and worst < 1e-12
    record("6", ok, f"violations {reports}; recombination error {worst:.1e}")
    assert ok


def test_criterion_7_wasserstein():
    rng = np.random.default_rng(7)
    line = GroundMetric(StateSpace.line(32))
    closed = max(
        abs(wasserstein_1d(a, b, line.unit) - wasserstein_min_cost_flow(a, b, line)[0])
        for a, b in (rng.dirichlet(np.ones(32) * 0.5, size=2) for _ in range(100))
    )
    grid = GroundMetric(StateSpace.grid(6, 5))
    axioms = True
    for _ in range(200):
        a, b, c = rng.dirichlet(np.ones(30) * 0.5, size=3)
        ab = wasserstein(a, b, grid)
        axioms &= wasserstein(a, a, grid) == 0.0 and ab > 0 and abs(ab - wasserstein(b, a, grid)) < 1e-12
        axioms &= ab <= wasserstein(a, c, grid) + wasserstein(c, b, grid) + 1e-12
    lp = 0.0
    for space in (StateSpace.line(8), StateSpace.grid(4, 2)):
        metric = GroundMetric(space)
        for _ in range(25):
            a, b = rng.dirichlet(np.ones(8), size=2)
            lp = max(lp, abs(wasserstein(a, b, metric) - transport_lp(a, b, metric.matrix())))
    ok = closed < 1e-9 and axioms and lp < 1e-9
    record("7", ok, f"closed form vs min-cost flow {closed:.1e}; axioms on 200 triples {axioms}; LP gap {lp:.1e}")
    assert ok


def test_criterion_8_gradient_check():
    mlp = gradient_check(QNetwork(32, 3, hidden=(64, 64), seed=8), n_probes=100, seed=8)
    conv = gradient_check(QNetwork(256, 5, hidden=(64, 64), grid_shape=(16, 16), seed=8), n_probes=100, seed=8)
    ok = mlp.max_rel_err < 1e-4 and conv.max_rel_err < 1e-4 and mlp.n_used > 0 and conv.n_used > 0
    record(
        "8",
        ok,
        f"MLP {mlp.max_rel_err:.1e} ({mlp.n_used} probes), conv {conv.max_rel_err:.1e} ({conv.n_used} probes)",
    )
    assert ok


def test_criterion_9_determinism(tmp_path):
    config = {
        "schema_version": 1,
        "seed": 99,
        "horizon": 8,
        "environment": {"kind": "exploration_1d", "size": 10},
        "fp": {"specialized_iterations": 5, "master_iterations": 3},
        "rl": {"hidden": [16, 16], "fit_max_iter": 40, "n_episodes": 20, "batch_size": 8},
    }
    path = tmp_path / "cfg.yaml"
    path.write_text(yaml.safe_dump(config))
    runs = {}
    for label in ("a", "b"):
        out = tmp_path / label
        for verb in ("solve-exact", "train-master", "benchmark", "export", "verify"):
            assert main([verb, "--config", str(path), "--out", str(out)]) == 0
        assert main(["train-master", "--config", str(path), "--out", str(tmp_path / f"dqn_{label}"), "--mode", "dqn"]) == 0
        runs[label] = {
            f"{kind}/{p.relative_to(root).as_posix()}": p.read_bytes()
            for kind, root in (("main", out), ("dqn", tmp_path / f"dqn_{label}"))
            for p in sorted(root.rglob("*"))
            if p.is_file() and "manifests" not in p.parts
        }
    same = runs["a"].keys() == runs["b"].keys() and all(runs["a"][k] == runs["b"][k] for k in runs["a"])
    record("9", same, f"{len(runs['a'])} numeric artifacts from all five verbs (exact and dqn) compared byte for byte")
    assert same


def test_criterion_10_beach_bar_smoke():
    env = make_beach_bar_2d()
    training = make_training_set(env.space)
    start = time.perf_counter()
    master = master_fictitious_play(env, training, 5, RLConfig(), N_T, seed=0, track_exploitability=False)
    unconditioned = solve_unconditioned(env, training, 5, RLConfig(), N_T, seed=0, track_exploitability=False)
    m = np.mean([master.rollout(env, mu0, N_T)[1] for _, mu0 in training])
    u = np.mean([unconditioned.rollout(env, mu0, N_T)[1] for _, mu0 in training])
    seconds = time.perf_counter() - start
    ok = seconds < 3600 and m <= u
    record("10", ok, f"16x16, K=5: master {m:.2f} vs unconditioned {u:.2f} on training columns, {seconds / 60:.1f} min")
    assert ok
