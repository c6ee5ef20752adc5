"""Drive the experiment CLI end to end on a small configuration.

Equivalent shell session:
    masterfp default-config > run.yaml
    masterfp solve-exact  --config run.yaml --out runs/demo
    masterfp train-master --config run.yaml --out runs/demo
    masterfp benchmark    --config run.yaml --out runs/demo
    masterfp export       --config run.yaml --out runs/demo
    masterfp verify
Run: python3 demos/05_cli_pipeline.py
"""

import json
import tempfile
from pathlib import Path

import yaml

from masterfp.cli import main

config = {
    "schema_version": 1,
    "seed": 2024,
    "horizon": 10,
    "environment": {"kind": "exploration_1d", "size": 12},
    "fp": {"specialized_iterations": 10, "master_iterations": 4},
    "rl": {"hidden": [32, 32], "fit_max_iter": 80},
}

with tempfile.TemporaryDirectory() as tmp:
    cfg = Path(tmp) / "run.yaml"
    cfg.write_text(yaml.safe_dump(config))
    out = Path(tmp) / "run"
    for verb in ("solve-exact", "train-master", "benchmark", "export"):
        assert main([verb, "--config", str(cfg), "--out", str(out)]) == 0
    summary = json.loads((out / "benchmark" / "summary.json").read_text())
    print(json.dumps(summary, indent=2))
    print("files written:", sum(1 for p in out.rglob("*") if p.is_file()))
    main(["verify"])
