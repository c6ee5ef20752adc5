"""Command-line experiment driver.

Verbs:

``solve-exact``   specialized FP equilibria for every training and testing distribution
``train-master``  master FP and the unconditioned baseline
``benchmark``     Wasserstein and exploitability matrices over all benchmark rows
``verify``        monotonicity, gradient and oracle checks (exit code 0 iff all pass)
``export``        time-indexed policies and flows of the master mixture per distribution

Each command writes into ``--out`` and finishes with a run manifest listing
every artifact with its SHA-256. Manifests also hold timings and versions, so
they are the only files that differ between identical reruns.
"""

from __future__ import annotations

import argparse
import logging
import platform
import sys
import time
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .artifacts import (
    MissingArtifactError,
    curves_csv,
    flow_from_json,
    flow_json,
    load_bundle,
    policy_from_json,
    policy_json,
    read_json,
    save_bundle,
    sha256,
    write_json,
    write_text,
)
from .config import DEFAULT_CONFIG_YAML, ConfigError, ExperimentConfig
from .core import best_response, exploitability, rollout_flow, uniform_policy
from .envs import BeachBar2DConfig, Exploration1DConfig, check_monotonicity, make_beach_bar_2d, make_exploration_1d, make_random_toy
from .fictitious_play import (
    AgnosticPolicy,
    master_fictitious_play,
    rollout_mixture,
    solve_mixture_reward,
    solve_specialized_fp,
    solve_unconditioned,
)
from .metrics import GroundMetric, performance_matrices
from .oracles import enumerated_best_value, enumerated_exploitability
from .qlearn import gradient_check
from .qnet import QNetwork

log = logging.getLogger("masterfp")

VERIFY_TOLERANCES = {"oracle": 1e-9, "gradient": 1e-4}


class RunWriter:
    """Single writer for one command in one run directory; refuses to overwrite."""

    def __init__(self, out: Path, command: str, cfg: ExperimentConfig | None):
        self.out = Path(out)
        self.command = command
        self.cfg = cfg
        self.files: list = []
        self.timings: dict = {}
        self.manifest_path = self.out / "manifests" / f"{command}.json"
        if self.manifest_path.exists():
            raise FileExistsError(f"{self.manifest_path} exists; artifacts are write-once, use a new --out")

    def path(self, relative: str) -> Path:
        target = self.out / relative
        if target.exists():
            raise FileExistsError(f"refusing to overwrite {target}")
        return target

    def json(self, relative: str, obj) -> None:
        self.files.append(write_json(self.path(relative), obj))

    def text(self, relative: str, text: str) -> None:
        self.files.append(write_text(self.path(relative), text))

    def extend(self, paths) -> None:
        self.files.extend(paths)

    def timed(self, label: str):
        writer = self

        class _Timer:
            def __enter__(self):
                self.start = time.perf_counter()

            def __exit__(self, *exc):
                writer.timings[label] = time.perf_counter() - self.start

        return _Timer()

    def finish(self, extra: dict | None = None) -> Path:
        manifest = {
            "command": self.command,
            "config": None if self.cfg is None else self.cfg.snapshot(),
            "artifacts": [
                {"path": Path(f).relative_to(self.out).as_posix(), "sha256": sha256(f)} for f in sorted(self.files)
            ],
            "versions": {
                "masterfp": __version__,
                "python": platform.python_version(),
                "numpy": np.__version__,
                "scipy": scipy.__version__,
            },
            "timings_seconds": self.timings,
        }
        if extra:
            manifest.update(extra)
        return write_json(self.manifest_path, manifest)


def _env_and_sets(cfg: ExperimentConfig):
    env = cfg.make_env()
    return env, cfg.training_set(env), cfg.testing_set(env)


def _specialized_path(name: str) -> str:
    return f"specialized/{name}.json"


def _require(path: Path) -> Path:
    if not path.is_file():
        raise MissingArtifactError(f"missing artifact: {path} (run the command that produces it first)")
    return path


# commands ---------------------------------------------------------------------


def cmd_solve_exact(cfg: ExperimentConfig, out: Path) -> Path:
    env, training, testing = _env_and_sets(cfg)
    writer = RunWriter(out, "solve-exact", cfg)
    metric = GroundMetric(env.space)
    writer.json("distributions/training.json", training.to_json())
    writer.json("distributions/testing.json", testing.to_json())
    curves, names = {}, []
    with writer.timed("specialized_fp"):
        for name, mu0 in list(training) + list(testing):
            sol = solve_specialized_fp(env, mu0, cfg.fp.specialized_iterations, cfg.horizon, metric)
            writer.json(
                _specialized_path(name),
                {
                    "name": name,
                    "flow": flow_json(sol.flow),
                    "policy": policy_json(sol.policy),
                    "exploitability": sol.exploitability.tolist(),
                    "residual": sol.residual,
                },
            )
            curves[name] = sol.exploitability
            names.append(name)
            log.info("%s: exploitability %.3e, residual %.3e", name, sol.exploitability[-1], sol.residual)
    writer.text("specialized/curves.csv", curves_csv(curves, names))
    with writer.timed("mixture_reward"):
        flows = [read_specialized(out, name)[0] for name in training.names]
        writer.json("specialized/mixture_reward.json", {"policy": policy_json(solve_mixture_reward(env, flows, cfg.horizon))})
    return writer.finish()


def read_specialized(out: Path, name: str):
    data = read_json(_require(Path(out) / _specialized_path(name)))
    return flow_from_json(data["flow"]), policy_from_json(data["policy"])


def cmd_train_master(cfg: ExperimentConfig, out: Path) -> Path:
    env, training, _ = _env_and_sets(cfg)
    writer = RunWriter(out, "train-master", cfg)
    common = dict(mode=cfg.mode, conditioning=cfg.fp.conditioning)
    runs = {
        "master": lambda: master_fictitious_play(
            env, training, cfg.fp.master_iterations, cfg.rl, cfg.horizon, seed=cfg.seed_for("init"), **common
        ),
        "unconditioned": lambda: solve_unconditioned(
            env, training, cfg.fp.master_iterations, cfg.rl, cfg.horizon, seed=cfg.seed_for("init-unconditioned"), **common
        ),
    }
    for label, run in runs.items():
        writer.path(f"{label}/manifest.json")
        with writer.timed(label):
            bundle = run()
        writer.extend(save_bundle(bundle, out / label, env.n_states, env.n_actions))
        curves = {name: [per[name] for per in bundle.per_distribution] for name in training.names}
        writer.text(f"{label}/curves.csv", curves_csv(curves, training.names))
    return writer.finish()


def benchmark_rows(cfg: ExperimentConfig, out: Path, env, training) -> list:
    rows = []
    for name in training.names:
        rows.append((f"specialized_{name}", AgnosticPolicy(read_specialized(out, name)[1])))
    mixture = read_json(_require(out / "specialized/mixture_reward.json"))
    rows.append(("mixture_reward", AgnosticPolicy(policy_from_json(mixture["policy"]))))
    _require(out / "unconditioned/manifest.json")
    _require(out / "master/manifest.json")
    rows.append(("unconditioned", load_bundle(out / "unconditioned")))
    rows.append(("uniform_random", AgnosticPolicy(uniform_policy(env.n_states, env.n_actions, cfg.horizon))))
    rows.append(("master", load_bundle(out / "master")))
    return rows


def cmd_benchmark(cfg: ExperimentConfig, out: Path) -> Path:
    env, training, testing = _env_and_sets(cfg)
    rows = benchmark_rows(cfg, out, env, training)
    columns = list(training) + list(testing)
    references = {name: read_specialized(out, name)[0] for name, _ in columns}
    writer = RunWriter(out, "benchmark", cfg)
    with writer.timed("matrices"):
        w, e = performance_matrices(env, rows, columns, references, cfg.horizon)
    for matrix in (w, e):
        for log10 in (False, True):
            stem = f"benchmark/{matrix.kind}{'_log10' if log10 else ''}"
            writer.text(stem + ".csv", matrix.to_csv(log=log10))
            writer.json(stem + ".json", matrix.to_json(log=log10))
    n_train = len(training)
    master, uncond = e.rows.index("master"), e.rows.index("unconditioned")
    summary = {
        "master_mean_training_exploitability": float(e.values[master, :n_train].mean()),
        "unconditioned_mean_training_exploitability": float(e.values[uncond, :n_train].mean()),
    }
    writer.json("benchmark/summary.json", summary)
    return writer.finish()


def cmd_export(cfg: ExperimentConfig, out: Path) -> Path:
    """Reduce the master mixture to a time-indexed policy and flow for every distribution."""
    env, training, testing = _env_and_sets(cfg)
    bundle = load_bundle(_require(out / "master/manifest.json").parent)
    writer = RunWriter(out, "export", cfg)
    with writer.timed("export"):
        for name, mu0 in list(training) + list(testing):
            mix = rollout_mixture(env, mu0, bundle.active(), cfg.horizon)
            writer.json(f"export/{name}.json", {"name": name, "flow": flow_json(mix.flow), "policy": policy_json(mix.reduced_policy())})
    return writer.finish()


def run_checks(cfg: ExperimentConfig | None = None, tamper_gradient: bool = False, env_override=None) -> dict:
    """Every verification check; each entry has ``passed`` plus its measurements."""
    seed = 0 if cfg is None else cfg.seed_for("verify")
    report = {}
    envs = {
        "exploration_1d": make_exploration_1d(Exploration1DConfig()),
        "beach_bar_2d": make_beach_bar_2d(BeachBar2DConfig()),
    }
    if env_override is not None:
        envs = {env_override.name or "custom": env_override}
    for name, env in envs.items():
        mono = check_monotonicity(env, 1000, seed=seed)
        report[f"monotonicity_{name}"] = {
            "passed": mono.violations == 0,
            "violations": mono.violations,
            "min_margin": mono.min_margin,
        }
    for label, grid in (("mlp_1d", None), ("conv_2d", (4, 4))):
        size = 8 if grid is None else grid[0] * grid[1]
        net = QNetwork(size, 3, hidden=(16, 16), grid_shape=grid, conv_channels=(4, 4), seed=seed % 2**32)
        check = gradient_check(net, n_probes=40, seed=seed % 2**32, tamper=(lambda g: -g) if tamper_gradient else None)
        report[f"gradient_{label}"] = {
            "passed": bool(check.max_rel_err < VERIFY_TOLERANCES["gradient"]),
            "max_rel_err": check.max_rel_err,
            "probes_used": check.n_used,
        }
    rng = np.random.default_rng(seed)
    worst_j = worst_e = 0.0
    for i in range(50):
        toy = make_random_toy(rng, mu_dependent_transition=bool(i % 2))
        n_steps = 3
        mu0 = rng.dirichlet(np.ones(toy.n_states))
        policy = rng.dirichlet(np.ones(toy.n_actions), size=(n_steps + 1, toy.n_states))
        flow = rollout_flow(toy, mu0, policy, n_steps)
        _, table = best_response(toy, flow, n_steps)
        worst_j = max(worst_j, abs(float(mu0 @ table.values[0]) - enumerated_best_value(toy, mu0, flow, n_steps)))
        worst_e = max(worst_e, abs(exploitability(toy, mu0, policy, n_steps) - enumerated_exploitability(toy, mu0, policy, n_steps)))
    tol = VERIFY_TOLERANCES["oracle"]
    report["oracle_equivalence"] = {"passed": worst_j < tol and worst_e < tol, "max_value_error": worst_j, "max_exploitability_error": worst_e}
    return report


def cmd_verify(cfg: ExperimentConfig | None, out: Path | None) -> tuple:
    report = run_checks(cfg)
    ok = all(entry["passed"] for entry in report.values())
    for name, entry in report.items():
        print(f"{'PASS' if entry['passed'] else 'FAIL'} {name}")
    if out is not None:
        writer = RunWriter(out, "verify", cfg)
        writer.json("verify/report.json", report)
        writer.finish({"passed": ok})
    return ok, report


COMMANDS = {
    "solve-exact": cmd_solve_exact,
    "train-master": cmd_train_master,
    "benchmark": cmd_benchmark,
    "export": cmd_export,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="masterfp", description="Master Fictitious Play experiments.")
    parser.add_argument("--version", action="version", version=f"masterfp {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for verb in list(COMMANDS) + ["verify"]:
        p = sub.add_parser(verb)
        p.add_argument("--config", type=Path, required=verb != "verify", help="YAML experiment config")
        p.add_argument("--seed", type=int, help="override the root seed (unsigned 64-bit)")
        p.add_argument("--out", type=Path, help="run directory (overrides output_dir)")
        p.add_argument("--mode", choices=("dqn", "exact"), help="best-response learner")
        p.add_argument("-v", "--verbose", action="store_true")
    sub.add_parser("default-config", help="print a starter config")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "default-config":
        sys.stdout.write(DEFAULT_CONFIG_YAML)
        return 0
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = None
        if args.config is not None:
            cfg = ExperimentConfig.load(args.config).with_overrides(args.seed, args.mode, args.out)
        if args.command == "verify":
            out = None
            if cfg is not None and cfg.output_dir is not None:
                out = Path(cfg.output_dir)
            elif args.out is not None:
                out = args.out
            ok, _ = cmd_verify(cfg, out)
            return 0 if ok else 1
        if cfg.output_dir is None:
            raise ConfigError("no output directory: pass --out or set output_dir")
        manifest = COMMANDS[args.command](cfg, Path(cfg.output_dir))
        print(f"wrote {manifest}")
        return 0
    except (ConfigError, MissingArtifactError, FileExistsError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
