"""On-disk formats: JSON documents, CSV curves and policy bundles.

Every writer produces bytes that depend only on the data. JSON keys are
sorted, floats use ``repr`` and CSV rows end in CRLF, so reruns with the
same inputs give identical files.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
from pathlib import Path

import numpy as np

from .core import PopulationPolicy, UniformPopulationPolicy, check_distribution
from .fictitious_play import MasterPolicyBundle
from .qlearn import GreedyQPolicy
from .qnet import QNetwork

BUNDLE_FORMAT = "masterfp-bundle"
BUNDLE_VERSION = 1


class MissingArtifactError(FileNotFoundError):
    """A command needs a file that an earlier command should have produced."""


def dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=1, allow_nan=False) + "\n"


def write_json(path: Path, obj) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps(obj), encoding="utf-8")
    return path


def read_json(path: Path):
    path = Path(path)
    if not path.is_file():
        raise MissingArtifactError(f"missing artifact: {path}")
    return json.loads(path.read_text(encoding="utf-8"))


def write_text(path: Path, text: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)
    return path


def sha256(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


# arrays -------------------------------------------------------------------


def distribution_json(mu) -> dict:
    mu = check_distribution(mu)
    return {"states": int(mu.shape[0]), "probs": mu.tolist()}


def flow_json(flow) -> dict:
    flow = np.asarray(flow, dtype=float)
    return {"steps": int(flow.shape[0]), "states": int(flow.shape[1]), "probs": flow.tolist()}


def flow_from_json(data: dict) -> np.ndarray:
    flow = np.asarray(data["probs"], dtype=float)
    if flow.shape != (data["steps"], data["states"]):
        raise ValueError(f"flow shape {flow.shape} disagrees with its header")
    return flow


def policy_json(policy) -> dict:
    policy = np.asarray(policy, dtype=float)
    return {
        "steps": int(policy.shape[0]),
        "states": int(policy.shape[1]),
        "actions": int(policy.shape[2]),
        "table": policy.tolist(),
    }


def policy_from_json(data: dict) -> np.ndarray:
    table = np.asarray(data["table"], dtype=float)
    if table.shape != (data["steps"], data["states"], data["actions"]):
        raise ValueError(f"policy shape {table.shape} disagrees with its header")
    return table


def curves_csv(curves: dict, names: list) -> str:
    """One row per iteration: iteration, value per initial distribution, average."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\r\n")
    writer.writerow(["iteration"] + list(names) + ["average"])
    length = len(next(iter(curves.values()))) if curves else 0
    for k in range(length):
        row = [float(curves[name][k]) for name in names]
        writer.writerow([k + 1] + [repr(v) for v in row] + [repr(float(np.mean(row)))])
    return buf.getvalue()


# bundles ------------------------------------------------------------------


def _policy_entry(policy: PopulationPolicy, index: int, directory: Path) -> dict:
    if isinstance(policy, UniformPopulationPolicy):
        return {"kind": "uniform"}
    if isinstance(policy, GreedyQPolicy):
        name = f"policy_{index:03d}.qnet"
        (directory / name).write_bytes(policy.net.to_bytes())
        return {"kind": "qnet", "file": name}
    raise TypeError(f"cannot persist {type(policy).__name__}")


def save_bundle(bundle: MasterPolicyBundle, directory: Path, n_states: int, n_actions: int) -> list:
    """Write a manifest plus one weight file per network; returns the written paths."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries = [_policy_entry(p, i, directory) for i, p in enumerate(bundle.policies)]
    manifest = {
        "format": BUNDLE_FORMAT,
        "version": BUNDLE_VERSION,
        "n_states": n_states,
        "n_actions": n_actions,
        "include_initial": bundle.include_initial,
        "zero_mu_input": bundle.zero_mu_input,
        "policies": entries,
        "bank": {name: flow_json(flow) for name, flow in sorted(bundle.bank.items())},
        "history": list(bundle.history),
        "fit_losses": [float(v) if np.isfinite(v) else None for v in bundle.fit_losses],
    }
    paths = [write_json(directory / "manifest.json", manifest)]
    paths += [directory / e["file"] for e in entries if "file" in e]
    return paths


def load_bundle(directory: Path) -> MasterPolicyBundle:
    directory = Path(directory)
    manifest = read_json(directory / "manifest.json")
    if manifest.get("format") != BUNDLE_FORMAT or manifest.get("version") != BUNDLE_VERSION:
        raise ValueError(f"{directory}: unsupported bundle format")
    policies = []
    for entry in manifest["policies"]:
        if entry["kind"] == "uniform":
            policies.append(UniformPopulationPolicy(manifest["n_states"], manifest["n_actions"]))
        elif entry["kind"] == "qnet":
            path = directory / entry["file"]
            if not path.is_file():
                raise MissingArtifactError(f"missing artifact: {path}")
            policies.append(GreedyQPolicy(QNetwork.from_bytes(path.read_bytes())))
        else:
            raise ValueError(f"unknown policy kind {entry['kind']!r}")
    return MasterPolicyBundle(
        policies,
        {name: flow_from_json(f) for name, f in manifest["bank"].items()},
        manifest["history"],
        [],
        include_initial=manifest["include_initial"],
        fit_losses=[float("nan") if v is None else v for v in manifest["fit_losses"]],
        zero_mu_input=manifest["zero_mu_input"],
    )
