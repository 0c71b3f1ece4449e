"""Command-line interface.

Subcommands: train-expert, collect, train-policy, evaluate, ablate-strategy,
ablate-noise-horizon, baselines, report. Exit codes: 0 success, 2 invalid
configuration (field path included), 3 missing upstream artifact, 1 any
other failure; errors are emitted as one JSON line on stderr.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from ..datagen import SamplingStrategy
from .ablations import ablate_noise_horizon, ablate_strategy, run_baselines
from .config import ConfigError, apply_overrides, default_config, describe_defaults, load_config
from .pipeline import (
    MissingArtifact,
    Pipeline,
    evaluate_policy_file,
    run_pipeline,
    stage_collect,
    stage_experts,
    stage_student,
    student_cfg_from,
    write_reports,
)

SUBCOMMANDS = (
    "train-expert",
    "collect",
    "train-policy",
    "evaluate",
    "ablate-strategy",
    "ablate-noise-horizon",
    "baselines",
    "report",
)


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pdp", description=__doc__)
    p.add_argument("subcommand", choices=SUBCOMMANDS)
    p.add_argument("--config", type=Path, default=None, help="flat key-value config file")
    p.add_argument("--seed", type=int, default=None, help="replace the seed list with this single seed")
    p.add_argument("--out", type=Path, default=Path("out"), help="output directory")
    p.add_argument("--override", action="append", default=[], metavar="KEY=VALUE",
                   help="config override, repeatable")
    p.add_argument("--print-defaults", action="store_true", help="print all config keys and exit")
    return p


def _students(pipe: Pipeline, cfg) -> list[tuple[str, str]]:
    scfg = student_cfg_from(cfg)
    strategy = SamplingStrategy(cfg["collect.strategy"], cfg["collect.noise_level"])
    ds_rel = stage_collect(pipe, strategy)
    out = []
    for seed in cfg["seeds"]:
        rel = stage_student(pipe, ds_rel, scfg, int(seed))
        out.append((f"{scfg.kind}_seed{seed}", rel))
    return out


def main(argv: list[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    if args.print_defaults:
        print(describe_defaults(), end="")
        return 0
    try:
        cfg = load_config(args.config) if args.config else default_config()
        if args.override:
            cfg = apply_overrides(cfg, args.override)
        if args.seed is not None:
            cfg.values["seeds"] = (int(args.seed),)

        cmd = args.subcommand
        if cmd == "train-expert":
            pipe = Pipeline(cfg, args.out)
            stage_experts(pipe)
        elif cmd == "collect":
            pipe = Pipeline(cfg, args.out)
            strategy = SamplingStrategy(cfg["collect.strategy"], cfg["collect.noise_level"])
            rel = stage_collect(pipe, strategy)
            print(f"dataset: {pipe.out / rel}")
        elif cmd == "train-policy":
            pipe = Pipeline(cfg, args.out)
            for label, rel in _students(pipe, cfg):
                print(f"policy {label}: {pipe.out / rel}")
        elif cmd == "evaluate":
            pipe = Pipeline(cfg, args.out)
            reports = [evaluate_policy_file(pipe, rel, label) for label, rel in _students(pipe, cfg)]
            csv_path, json_path = write_reports(pipe.out / "eval", "summary", reports)
            print(f"evaluation: {csv_path} {json_path}")
        elif cmd == "ablate-strategy":
            res = ablate_strategy(cfg, args.out)
            for kind, val in res["summary"].items():
                print(f"{kind}: ID success {val:.3f}")
        elif cmd == "ablate-noise-horizon":
            res = ablate_noise_horizon(cfg, args.out)
            for row in res["rows"]:
                print(f"noise={row['noise']} horizon={row['horizon']}: "
                      f"ID {row['success_id']:.3f} OOD {row['success_ood']:.3f}")
        elif cmd == "baselines":
            res = run_baselines(cfg, args.out)
            for row in res["rows"]:
                print(f"{row['method']}{'' if row['beta'] != row['beta'] else ' beta=' + str(row['beta'])}: "
                      f"success {row['success_rate']:.3f} modes cw={row['cw']} ccw={row['ccw']} "
                      f"direct={row['direct']} fpc={row['fpc']:.3f}")
        elif cmd == "report":
            manifest = run_pipeline(cfg, args.out)
            print(f"pipeline complete; manifest: {Path(args.out) / 'manifest.json'}")
            print(f"stages: {sorted(manifest['stages'])}")
        return 0
    except ConfigError as e:
        print(json.dumps({"error": "invalid-config", "field": e.field, "message": str(e)}), file=sys.stderr)
        return 2
    except MissingArtifact as e:
        print(json.dumps({"error": "missing-artifact", "message": str(e)}), file=sys.stderr)
        return 3
    except Exception as e:  # noqa: BLE001 - CLI boundary
        print(json.dumps({"error": type(e).__name__, "message": str(e)}), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
