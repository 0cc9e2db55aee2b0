#!/usr/bin/env python3
"""Validate blora JSON outputs and shipped configs against schemas/."""
import json
import pathlib
import subprocess
import sys
import tempfile

import jsonschema
from referencing import Registry, Resource


def main():
    exe, src = sys.argv[1], pathlib.Path(sys.argv[2])
    schemas = {p.name: json.loads(p.read_text()) for p in (src / "schemas").glob("*.schema.json")}
    registry = Registry().with_resources(
        (name, Resource.from_contents(s)) for name, s in schemas.items())
    failures = []

    def check(doc, schema_name, label):
        validator = jsonschema.Draft202012Validator(schemas[schema_name], registry=registry)
        errors = sorted(validator.iter_errors(doc), key=lambda e: list(e.path))
        for e in errors[:5]:
            failures.append(f"{label}: {'/'.join(map(str, e.path))}: {e.message}")
        print(f"{'ok  ' if not errors else 'FAIL'} {label} ({schema_name})")

    def run(*args):
        out = subprocess.run([exe, *args], capture_output=True, text=True)
        if out.returncode != 0:
            raise SystemExit(f"blora {' '.join(args)} exited {out.returncode}:\n{out.stderr}")
        return out.stdout

    for cfg in sorted((src / "configs").glob("*.json")):
        doc = json.loads(cfg.read_text())
        if "train" in doc or "model" in doc or "task" in doc:
            check(doc, "run_config.schema.json", f"configs/{cfg.name}")

    with tempfile.TemporaryDirectory() as tmp:
        tmp = pathlib.Path(tmp)
        cfg = json.loads((src / "configs" / "default.json").read_text())
        cfg["model"] = {"d_model": 16, "heads": 2, "layers": 1, "d_ff": 32, "head_hidden": 16, "seed": 0}
        cfg["task"] = dict(cfg.get("task", {}), train_size=16, eval_size=8)
        cfg["train"] = dict(cfg.get("train", {}), epochs=1, batch_size=8)
        cfg["output_dir"] = str(tmp / "runs")
        (tmp / "small.json").write_text(json.dumps(cfg))
        run("train", str(tmp / "small.json"), "--seed", "0,1")

        runs = tmp / "runs"
        for seed in (0, 1):
            check(json.loads((runs / f"run_seed{seed}.json").read_text()), "run_report.schema.json",
                  f"run_seed{seed}.json")
        check(json.loads((runs / "summary.json").read_text()), "summary.schema.json", "summary.json")

        report = str(runs / "run_seed0.json")
        check(json.loads(run("report", report, "--format", "json")), "report_tables.schema.json",
              "report --format json")
        check(json.loads(run("audit", report, "--json")), "audit_report.schema.json", "audit of a run report")
        for name in ("table1_params.json", "table2_audit.json", "self_audit.json"):
            check(json.loads(run("audit", str(src / "configs" / name), "--json")),
                  "audit_report.schema.json", f"audit {name}")

    for f in failures:
        print(f, file=sys.stderr)
    return 1 if failures else 0


if __name__ == "__main__":
    sys.exit(main())
