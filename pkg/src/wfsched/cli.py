"""Command line entry points: gen, run, manifest, export, verify."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .benchgen import (
    FAMILY_NAMES,
    SuiteSpec,
    build_conflict_suite,
    build_prefix_suite,
    lifted_instance,
    make_instance,
    synth_generate,
)
from .config import DEFAULT_SEED, AblationFlags, default_config, load_config
from .executor import run as run_instance
from .harness import (
    CSV_COLUMNS,
    default_manifest,
    export_tables,
    load_manifest,
    run_manifest,
    save_manifest,
)
from .model import instance_from_json, instance_to_json
from .policies import POLICY_NAMES, make_policy
from .verification import verify_metrics, verify_solver

from dataclasses import replace


def _add_gen(sub: argparse._SubParsersAction) -> None:
    p = sub.add_parser("gen", help="generate workload instance files")
    p.add_argument("--suite", required=True,
                   choices=["lifted", "synthetic", "prefix", "conflict"])
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--family", choices=list(FAMILY_NAMES), help="lifted family")
    p.add_argument("--seed", type=int, default=DEFAULT_SEED)
    p.add_argument("--count", type=int, default=1, help="instances (seed, seed+1, ...)")
    p.add_argument("--batch", type=int, default=16)
    p.add_argument("--ratio", type=float, default=0.0, help="prefix repeat ratio")
    p.add_argument("--depth", type=int, default=4)
    p.add_argument("--width", type=int, default=3)
    p.add_argument("--density", type=float, default=0.5)
    p.add_argument("--scale", type=float, default=1.0)
    p.add_argument("--devices", type=int, default=4)
    p.add_argument("--config", help="config YAML path")


def _cmd_gen(args: argparse.Namespace) -> int:
    config = load_config(args.config) if args.config else default_config(args.devices)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    instances = []
    for i in range(args.count):
        seed = args.seed + i
        if args.suite == "lifted":
            if not args.family:
                print("gen --suite lifted requires --family", file=sys.stderr)
                return 2
            instances.append(
                lifted_instance(args.family, config, seed=seed, batch_size=args.batch,
                                scale=args.scale)
            )
        elif args.suite == "synthetic":
            spec = SuiteSpec(kind="synthetic", depth=args.depth, width=args.width,
                             density=args.density, seed=seed, batch_size=args.batch)
            instances.append(make_instance(synth_generate(spec, config), args.batch, seed))
        elif args.suite == "prefix":
            spec = SuiteSpec(kind="prefix_reuse", repeat_ratio=args.ratio,
                             batch_size=args.batch, seed=seed)
            instances.extend(build_prefix_suite(spec, config))
        else:
            spec = SuiteSpec(kind="conflict", batch_size=args.batch, seed=seed)
            instances.extend(build_conflict_suite(spec, config))
    for instance in instances:
        path = out / f"{instance.dag.workflow_id}@b{instance.batch_size}.json"
        path.write_text(instance_to_json(instance))
        print(path)
    return 0


def _add_run(sub: argparse._SubParsersAction) -> None:
    p = sub.add_parser("run", help="run one instance under one policy")
    p.add_argument("--instance", required=True, help="instance JSON file")
    p.add_argument("--policy", required=True, choices=list(POLICY_NAMES))
    p.add_argument("--h", type=int, default=None, help="planning horizon override")
    p.add_argument("--ablate", action="append", default=[], help="ablation flag (repeatable)")
    p.add_argument("--switch-x", type=float, default=1.0)
    p.add_argument("--transfer-x", type=float, default=1.0)
    p.add_argument("--prefix-x", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--devices", type=int, default=4)
    p.add_argument("--config", help="config YAML path")
    p.add_argument("--trace", help="write a JSON-lines event trace to this path")
    p.add_argument("--out", help="write the CSV row here instead of stdout")


def _cmd_run(args: argparse.Namespace) -> int:
    config = load_config(args.config) if args.config else default_config(args.devices)
    weights = config.weights
    overrides = {}
    if args.h is not None:
        overrides["horizon"] = args.h
    if args.ablate:
        overrides["ablation"] = AblationFlags.from_names(args.ablate)
    for name in ("switch_x", "transfer_x", "prefix_x"):
        value = getattr(args, name)
        if value != 1.0:
            overrides[name] = value
    if overrides:
        weights = replace(weights, **overrides)
    config = config.with_weights(weights)
    instance = instance_from_json(Path(args.instance).read_text())
    policy = make_policy(args.policy)
    record = run_instance(policy, instance, config, seed=args.seed,
                          record_trace=bool(args.trace))
    row = {
        "run_id": f"cli:{record.method}:{record.workflow_id}",
        "method": record.method,
        "workflow_id": record.workflow_id,
        "family": record.family,
        "batch_size": record.batch_size,
        "seed": record.seed,
        "makespan_s": f"{record.makespan:.6f}",
        "p95_latency_s": f"{record.p95_latency():.6f}",
        "workflow_tasks": record.workflow_tasks,
        "cross_device_parent_edges": record.cross_device_parent_edges,
        "prefix_cache_hits_est": record.prefix_cache_hits_est,
        "same_model_continuations": record.same_model_continuations,
        "solver_solves": record.solver_solves,
        "solver_optimal": record.solver_optimal,
        "solver_time_mean_s": f"{record.solver_time_mean_s:.6f}",
        "solver_time_p95_s": f"{record.solver_time_p95_s:.6f}",
        "solver_time_max_s": f"{record.solver_time_max_s:.6f}",
        "ablation_flags": record.ablation,
        "perturbation": record.perturbation,
        "h_value": record.h_value,
    }
    text = ",".join(CSV_COLUMNS) + "\n" + ",".join(str(row[c]) for c in CSV_COLUMNS) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    if args.trace:
        with Path(args.trace).open("w") as fh:
            for event in record.trace or []:
                fh.write(json.dumps(event, sort_keys=True) + "\n")
    return 0


def _add_manifest(sub: argparse._SubParsersAction) -> None:
    p = sub.add_parser("manifest", help="run a full experiment manifest")
    p.add_argument("--manifest", help="manifest YAML path")
    p.add_argument("--default", action="store_true", help="use the shipped default manifest")
    p.add_argument("--out", help="output directory (overrides the manifest)")
    p.add_argument("--parallelism", type=int, default=None)
    p.add_argument("--write-manifest", help="also save the resolved manifest YAML here")


def _cmd_manifest(args: argparse.Namespace) -> int:
    if args.default == bool(args.manifest):
        print("manifest: pass exactly one of --manifest PATH or --default", file=sys.stderr)
        return 2
    manifest = default_manifest() if args.default else load_manifest(args.manifest)
    if args.out:
        manifest = replace(manifest, output_dir=args.out)
    if args.write_manifest:
        save_manifest(manifest, args.write_manifest)
    paths = run_manifest(manifest, parallelism=args.parallelism, echo=print)
    for group, path in sorted(paths.items()):
        print(f"{group}: {path}")
    return 0


def _add_export(sub: argparse._SubParsersAction) -> None:
    p = sub.add_parser("export", help="export paper-shaped tables from manifest CSVs")
    p.add_argument("--out", required=True, help="manifest output directory")


def _cmd_export(args: argparse.Namespace) -> int:
    export_tables(args.out, echo=print)
    return 0


def _add_verify(sub: argparse._SubParsersAction) -> None:
    p = sub.add_parser("verify", help="run solver-oracle and metric formula checks")
    p.add_argument("--problems", type=int, default=200)
    p.add_argument("--seed", type=int, default=7)


def _cmd_verify(args: argparse.Namespace) -> int:
    ok = verify_solver(n_problems=args.problems, seed=args.seed)
    ok = verify_metrics() and ok
    print("verify: PASS" if ok else "verify: FAIL")
    return 0 if ok else 1


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="wfsched",
        description="Scheduling engine and simulator for heterogeneous multi-model "
                    "workflow DAGs",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    _add_gen(sub)
    _add_run(sub)
    _add_manifest(sub)
    _add_export(sub)
    _add_verify(sub)
    args = parser.parse_args(argv)
    handlers = {
        "gen": _cmd_gen,
        "run": _cmd_run,
        "manifest": _cmd_manifest,
        "export": _cmd_export,
        "verify": _cmd_verify,
    }
    return handlers[args.command](args)


if __name__ == "__main__":
    raise SystemExit(main())
