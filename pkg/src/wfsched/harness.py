"""Manifest-driven experiment runner and paper-shaped table exporter.

A manifest declares workloads, methods, seeds, batch sizes and the ablation,
perturbation and sensitivity matrices.  ``run_manifest`` executes every cell
exactly once, writes one CSV per experiment group in a fixed column order and
records a provenance index.  ``export_tables`` consumes only the CSVs that
the index declares and computes every aggregate through the metrics module.

Run-variant labels ride in two schema columns: ``ablation_flags`` carries
ablation names or sensitivity scale labels, ``perturbation`` carries proxy
multiplier labels (these participate in baseline pairing).
"""

from __future__ import annotations

import json
import math
import multiprocessing
import os
import statistics
from dataclasses import dataclass, field, replace
from pathlib import Path

import yaml

from . import metrics
from .benchgen import (
    CONFLICT_RATIOS,
    FAMILY_NAMES,
    SuiteSpec,
    build_conflict_suite,
    build_prefix_suite,
    lifted_instance,
    make_instance,
    synth_generate,
)
from .config import (
    DEFAULT_SEED,
    AblationFlags,
    RunConfig,
    ScoreWeights,
    default_config,
    load_config,
)
from .executor import run
from .model import WorkflowInstance, instance_from_json
from .policies import POLICY_NAMES, make_policy

MANIFEST_SCHEMA = "wfsched.manifest@1"
INDEX_SCHEMA = "wfsched.index@1"

CSV_COLUMNS = (
    "run_id",
    "method",
    "workflow_id",
    "family",
    "batch_size",
    "seed",
    "makespan_s",
    "p95_latency_s",
    "workflow_tasks",
    "cross_device_parent_edges",
    "prefix_cache_hits_est",
    "same_model_continuations",
    "solver_solves",
    "solver_optimal",
    "solver_time_mean_s",
    "solver_time_p95_s",
    "solver_time_max_s",
    "ablation_flags",
    "perturbation",
    "h_value",
)

ABLATION_NAMES = ("no_future_planning", "no_locality", "no_same_model", "no_prefix", "no_shard")
PERTURBATION_CLASSES = ("switch_x", "transfer_x", "prefix_x")


class ManifestError(ValueError):
    pass


@dataclass(frozen=True)
class Manifest:
    output_dir: str
    workloads: tuple[dict, ...]
    methods: tuple[str, ...]
    batch_sizes: tuple[int, ...] = (16, 32)
    seeds: tuple[int, ...] = (DEFAULT_SEED,)
    config_path: str | None = None
    num_devices: int = 4
    ablations: tuple[str, ...] = ABLATION_NAMES
    perturbation_multipliers: tuple[float, ...] = (0.5, 2.0)
    sensitivity_horizons: tuple[int, ...] = (0, 1, 2, 3, 4)
    sensitivity_scales: tuple[float, ...] = (0.5, 1.5)
    subset_size: int = 30
    prefix_ratios: tuple[float, ...] = (0.0, 0.25, 0.5, 1.0)
    suite_batch: int = 16
    contrast_methods: tuple[str, ...] = ("fate", "kvflow", "halo")
    perturbation_methods: tuple[str, ...] = ("fate", "kvflow", "helix", "roundrobin")

    def validate(self) -> None:
        if not self.methods:
            raise ManifestError("methods list is empty")
        for m in self.methods + self.contrast_methods + self.perturbation_methods:
            if m not in POLICY_NAMES:
                raise ManifestError(f"unknown method {m!r}")
        if "roundrobin" not in self.methods:
            raise ManifestError("roundrobin must be present for normalized metrics")
        if "roundrobin" not in self.perturbation_methods:
            raise ManifestError("roundrobin must run under every perturbation condition")
        for name in self.ablations:
            if name not in ABLATION_NAMES:
                raise ManifestError(f"unknown ablation flag {name!r}")
        for w in self.workloads:
            source = w.get("source")
            if source not in ("lifted", "synthetic", "file"):
                raise ManifestError(f"workload source {source!r} not recognized")
            if source == "file" and not Path(w["path"]).exists():
                raise ManifestError(f"workload file missing: {w['path']}")
            if source == "lifted" and w.get("family") not in FAMILY_NAMES:
                raise ManifestError(f"unknown family {w.get('family')!r}")
        if self.config_path is not None and not Path(self.config_path).exists():
            raise ManifestError(f"config file missing: {self.config_path}")


def manifest_to_dict(m: Manifest) -> dict:
    return {
        "schema": MANIFEST_SCHEMA,
        "output_dir": m.output_dir,
        "workloads": [dict(w) for w in m.workloads],
        "methods": list(m.methods),
        "batch_sizes": list(m.batch_sizes),
        "seeds": list(m.seeds),
        "config_path": m.config_path,
        "num_devices": m.num_devices,
        "ablations": list(m.ablations),
        "perturbation_multipliers": list(m.perturbation_multipliers),
        "sensitivity_horizons": list(m.sensitivity_horizons),
        "sensitivity_scales": list(m.sensitivity_scales),
        "subset_size": m.subset_size,
        "prefix_ratios": list(m.prefix_ratios),
        "suite_batch": m.suite_batch,
        "contrast_methods": list(m.contrast_methods),
        "perturbation_methods": list(m.perturbation_methods),
    }


def manifest_from_dict(doc: dict) -> Manifest:
    if doc.get("schema") != MANIFEST_SCHEMA:
        raise ManifestError(f"unsupported manifest schema {doc.get('schema')!r}")
    return Manifest(
        output_dir=doc["output_dir"],
        workloads=tuple(doc["workloads"]),
        methods=tuple(doc["methods"]),
        batch_sizes=tuple(doc.get("batch_sizes", (16, 32))),
        seeds=tuple(doc.get("seeds", (DEFAULT_SEED,))),
        config_path=doc.get("config_path"),
        num_devices=int(doc.get("num_devices", 4)),
        ablations=tuple(doc.get("ablations", ABLATION_NAMES)),
        perturbation_multipliers=tuple(doc.get("perturbation_multipliers", (0.5, 2.0))),
        sensitivity_horizons=tuple(doc.get("sensitivity_horizons", (0, 1, 2, 3, 4))),
        sensitivity_scales=tuple(doc.get("sensitivity_scales", (0.5, 1.5))),
        subset_size=int(doc.get("subset_size", 30)),
        prefix_ratios=tuple(doc.get("prefix_ratios", (0.0, 0.25, 0.5, 1.0))),
        suite_batch=int(doc.get("suite_batch", 16)),
        contrast_methods=tuple(doc.get("contrast_methods", ("fate", "kvflow", "halo"))),
        perturbation_methods=tuple(
            doc.get("perturbation_methods", ("fate", "kvflow", "helix", "roundrobin"))
        ),
    )


def load_manifest(path: str | Path) -> Manifest:
    return manifest_from_dict(yaml.safe_load(Path(path).read_text()))


def save_manifest(m: Manifest, path: str | Path) -> None:
    Path(path).write_text(yaml.safe_dump(manifest_to_dict(m), sort_keys=True))


def default_manifest(output_dir: str = "out") -> Manifest:
    """Ten lifted families plus synthetic layers; the shipped desk-scale matrix."""
    workloads: list[dict] = [
        {"source": "lifted", "family": family, "seeds": [11, 12, 13, 14]}
        for family in FAMILY_NAMES
    ]
    workloads.append(
        {"source": "synthetic", "seeds": [101, 102, 103, 104], "depth": 5, "width": 4,
         "density": 0.5}
    )
    workloads.append(
        {"source": "synthetic", "seeds": [105, 106, 107, 108], "depth": 7, "width": 3,
         "density": 0.7}
    )
    return Manifest(
        output_dir=output_dir,
        workloads=tuple(workloads),
        methods=("fate", "kvflow", "helix", "halo", "heft", "roundrobin"),
    )


# ---------------------------------------------------------------------------
# Cell construction
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Cell:
    group: str
    method: str
    workload_key: str  # key into the materialized instance registry
    seed: int
    ablation: tuple[str, ...] = ()
    perturbation: tuple[str, float] | None = None  # (class, factor)
    h_override: int | None = None
    scale_override: tuple[str, float] | None = None  # (scale field, factor)

    def run_id(self) -> str:
        ab = "+".join(self.ablation) if self.ablation else "none"
        if self.scale_override:
            ab = f"scale_{self.scale_override[0]}_{self.scale_override[1]:g}"
        pert = f"{self.perturbation[0]}{self.perturbation[1]:g}" if self.perturbation else "none"
        h = self.h_override if self.h_override is not None else "d"
        return f"{self.group}:{self.method}:{self.workload_key}:s{self.seed}:{ab}:{pert}:h{h}"


def _load_run_config(manifest: Manifest) -> RunConfig:
    if manifest.config_path is not None:
        return load_config(manifest.config_path)
    return default_config(manifest.num_devices)


def materialize_workloads(manifest: Manifest, config: RunConfig) -> dict[str, WorkflowInstance]:
    """Build every instance the matrix needs; keys are ``workflow_id@batch``."""
    registry: dict[str, WorkflowInstance] = {}

    def add(instance: WorkflowInstance) -> str:
        key = f"{instance.dag.workflow_id}@b{instance.batch_size}"
        registry[key] = instance
        return key

    for w in manifest.workloads:
        source = w["source"]
        if source == "file":
            add(instance_from_json(Path(w["path"]).read_text()))
            continue
        for seed in w.get("seeds", [DEFAULT_SEED]):
            for batch in manifest.batch_sizes:
                if source == "lifted":
                    scale = w.get("scale", 0.75 + 0.25 * (seed % 3))
                    min_groups = int(w.get("min_groups", 14 + 4 * (seed % 4)))
                    add(
                        lifted_instance(
                            w["family"], config, seed=seed, batch_size=batch, scale=scale,
                            max_stages=int(w.get("max_stages", 64)),
                            min_groups=min_groups,
                        )
                    )
                else:
                    spec = SuiteSpec(
                        kind="synthetic",
                        depth=int(w.get("depth", 4)),
                        width=int(w.get("width", 3)),
                        density=float(w.get("density", 0.5)),
                        seed=seed,
                        batch_size=batch,
                    )
                    dag = synth_generate(spec, config)
                    dag = replace(dag, workflow_id=f"{dag.workflow_id}")
                    add(make_instance(dag, batch, seed))
    for ratio in manifest.prefix_ratios:
        spec = SuiteSpec(
            kind="prefix_reuse", repeat_ratio=ratio, batch_size=manifest.suite_batch,
            seed=manifest.seeds[0],
        )
        for instance in build_prefix_suite(spec, config):
            add(instance)
    conflict_spec = SuiteSpec(
        kind="conflict", batch_size=manifest.suite_batch, seed=manifest.seeds[0]
    )
    for instance in build_conflict_suite(conflict_spec, config):
        add(instance)
    return registry


def _subset_keys(
    registry: dict[str, WorkflowInstance], manifest: Manifest, target_stages: int = 24
) -> list[str]:
    """Family-balanced subset of main-suite instances nearest the target size."""
    batch = manifest.batch_sizes[0]
    main_keys = [
        k
        for k, inst in registry.items()
        if inst.dag.family not in ("prefix_reuse", "conflict") and k.endswith(f"@b{batch}")
    ]
    by_family: dict[str, list[str]] = {}
    for k in main_keys:
        by_family.setdefault(registry[k].dag.family, []).append(k)
    for family in by_family:
        by_family[family].sort(
            key=lambda k: (abs(len(registry[k].dag.stages) - target_stages), k)
        )
    subset: list[str] = []
    rank = 0
    while len(subset) < manifest.subset_size:
        added = False
        for family in sorted(by_family):
            bucket = by_family[family]
            if rank < len(bucket) and len(subset) < manifest.subset_size:
                subset.append(bucket[rank])
                added = True
        if not added:
            break
        rank += 1
    return sorted(subset)


def build_cells(manifest: Manifest, registry: dict[str, WorkflowInstance]) -> list[Cell]:
    seed = manifest.seeds[0]
    cells: list[Cell] = []
    main_keys = sorted(
        k
        for k, inst in registry.items()
        if inst.dag.family not in ("prefix_reuse", "conflict")
    )
    batch0 = manifest.batch_sizes[0]
    main_b0 = [k for k in main_keys if k.endswith(f"@b{batch0}")]
    subset = _subset_keys(registry, manifest)

    for s in manifest.seeds:
        for key in main_keys:
            for method in manifest.methods:
                cells.append(Cell(group="main", method=method, workload_key=key, seed=s))
    for flag in manifest.ablations:
        for key in main_b0:
            cells.append(
                Cell(group="ablation", method="fate", workload_key=key, seed=seed,
                     ablation=(flag,))
            )
    prefix_keys = sorted(
        k for k, inst in registry.items() if inst.dag.family == "prefix_reuse"
    )
    for key in prefix_keys:
        for method in manifest.contrast_methods:
            cells.append(Cell(group="prefix", method=method, workload_key=key, seed=seed))
    conflict_keys = sorted(
        k for k, inst in registry.items() if inst.dag.family == "conflict"
    )
    for key in conflict_keys:
        for method in manifest.contrast_methods:
            cells.append(Cell(group="conflict", method=method, workload_key=key, seed=seed))
    for klass in PERTURBATION_CLASSES:
        for factor in manifest.perturbation_multipliers:
            for key in subset:
                for method in manifest.perturbation_methods:
                    cells.append(
                        Cell(group="perturbation", method=method, workload_key=key,
                             seed=seed, perturbation=(klass, factor))
                    )
    for key in subset:
        cells.append(Cell(group="sensitivity", method="roundrobin", workload_key=key, seed=seed))
        for h in manifest.sensitivity_horizons:
            cells.append(
                Cell(group="sensitivity", method="fate", workload_key=key, seed=seed,
                     h_override=h)
            )
        for scale_field in ("state_scale", "locality_scale", "prefix_scale"):
            for factor in manifest.sensitivity_scales:
                cells.append(
                    Cell(group="sensitivity", method="fate", workload_key=key, seed=seed,
                         scale_override=(scale_field, factor))
                )
    return cells


# ---------------------------------------------------------------------------
# Execution
# ---------------------------------------------------------------------------

_REGISTRY: dict[str, WorkflowInstance] = {}
_BASE_CONFIG: RunConfig | None = None


def _cell_weights(base: ScoreWeights, cell: Cell) -> ScoreWeights:
    kwargs: dict = {}
    if cell.ablation:
        kwargs["ablation"] = AblationFlags.from_names(list(cell.ablation))
    if cell.perturbation:
        kwargs[cell.perturbation[0]] = cell.perturbation[1]
    if cell.h_override is not None:
        kwargs["horizon"] = cell.h_override
    if cell.scale_override:
        kwargs[cell.scale_override[0]] = cell.scale_override[1]
    return replace(base, **kwargs) if kwargs else base


def execute_cell(cell: Cell) -> dict:
    """Run one matrix cell; module-level so worker processes can call it."""
    assert _BASE_CONFIG is not None, "worker not initialized"
    instance = _REGISTRY[cell.workload_key]
    config = _BASE_CONFIG.with_weights(_cell_weights(_BASE_CONFIG.weights, cell))
    policy = make_policy(cell.method)
    record = run(policy, instance, config, seed=cell.seed)
    ablation_label = record.ablation
    if cell.scale_override:
        ablation_label = f"scale_{cell.scale_override[0]}_{cell.scale_override[1]:g}"
    row = {
        "run_id": cell.run_id(),
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
        "ablation_flags": ablation_label,
        "perturbation": record.perturbation,
        "h_value": record.h_value,
        "_group": cell.group,
        "_solver_times": [f"{t:.6f}" for t in getattr(policy, "solver_stats", None).wall_times]
        if getattr(policy, "solver_stats", None)
        else [],
    }
    return row


def _init_worker(registry: dict[str, WorkflowInstance], config: RunConfig) -> None:
    global _REGISTRY, _BASE_CONFIG
    _REGISTRY = registry
    _BASE_CONFIG = config


def run_manifest(
    manifest: Manifest, parallelism: int | None = None, echo=lambda msg: None
) -> dict[str, Path]:
    """Execute the full matrix and write one CSV per experiment group."""
    manifest.validate()
    config = _load_run_config(manifest)
    registry = materialize_workloads(manifest, config)
    cells = build_cells(manifest, registry)
    echo(f"{len(registry)} instances, {len(cells)} matrix cells")
    _init_worker(registry, config)
    workers = parallelism if parallelism is not None else min(len(cells), os.cpu_count() or 1)
    if workers > 1:
        ctx = multiprocessing.get_context("fork")
        with ctx.Pool(processes=workers) as pool:
            rows = pool.map(execute_cell, cells, chunksize=max(1, len(cells) // (8 * workers)))
    else:
        rows = [execute_cell(c) for c in cells]

    out_dir = Path(manifest.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    groups: dict[str, list[dict]] = {}
    for row in rows:
        groups.setdefault(row["_group"], []).append(row)
    paths: dict[str, Path] = {}
    solver_samples: list[tuple[str, int, str]] = []
    for group in sorted(groups):
        group_rows = sorted(groups[group], key=lambda r: r["run_id"])
        path = out_dir / f"{group}.csv"
        _write_csv(path, group_rows)
        paths[group] = path
        for r in group_rows:
            for i, t in enumerate(r["_solver_times"]):
                solver_samples.append((r["run_id"], i, t))
    samples_path = out_dir / "solver_samples.csv"
    with samples_path.open("w") as fh:
        fh.write("run_id,solve_index,wall_time_s\n")
        for run_id, i, t in solver_samples:
            fh.write(f"{run_id},{i},{t}\n")
    paths["solver_samples"] = samples_path
    index = {
        "schema": INDEX_SCHEMA,
        "csvs": {group: path.name for group, path in sorted(paths.items())},
        "manifest": manifest_to_dict(manifest),
    }
    (out_dir / "index.json").write_text(json.dumps(index, indent=2, sort_keys=True))
    return paths


def _write_csv(path: Path, rows: list[dict]) -> None:
    with path.open("w") as fh:
        fh.write(",".join(CSV_COLUMNS) + "\n")
        for row in rows:
            fh.write(",".join(str(row[c]) for c in CSV_COLUMNS) + "\n")


def read_csv(path: Path) -> list[dict]:
    lines = path.read_text().splitlines()
    if not lines:
        raise ManifestError(f"{path}: empty CSV")
    header = lines[0].split(",")
    return [dict(zip(header, line.split(","))) for line in lines[1:]]


# ---------------------------------------------------------------------------
# Export
# ---------------------------------------------------------------------------


def _declared_rows(out_dir: Path, group: str, required: bool = True) -> list[dict]:
    index_path = out_dir / "index.json"
    if not index_path.exists():
        raise ManifestError(f"{out_dir}: missing index.json; run the manifest first")
    index = json.loads(index_path.read_text())
    name = index["csvs"].get(group)
    if name is None:
        if required:
            raise ManifestError(f"experiment group {group!r} not declared in the index")
        return []
    path = out_dir / name
    if not path.exists():
        raise ManifestError(f"declared CSV missing: {path}")
    return read_csv(path)


def export_tables(out_dir: str | Path, echo=lambda msg: None) -> dict[str, Path]:
    """Compute every paper-shaped table from the declared CSVs only."""
    out_dir = Path(out_dir)
    tables_dir = out_dir / "tables"
    tables_dir.mkdir(parents=True, exist_ok=True)
    main_rows = _declared_rows(out_dir, "main")
    ablation_rows = _declared_rows(out_dir, "ablation", required=False)
    prefix_rows = _declared_rows(out_dir, "prefix", required=False)
    conflict_rows = _declared_rows(out_dir, "conflict", required=False)
    perturbation_rows = _declared_rows(out_dir, "perturbation", required=False)
    sensitivity_rows = _declared_rows(out_dir, "sensitivity", required=False)

    outputs: dict[str, Path] = {}

    def emit(name: str, header: list[str], rows: list[list]) -> None:
        path = tables_dir / f"{name}.csv"
        with path.open("w") as fh:
            fh.write(",".join(header) + "\n")
            for row in rows:
                fh.write(",".join(str(v) for v in row) + "\n")
        outputs[name] = path
        echo(f"wrote {path}")

    methods = sorted({r["method"] for r in main_rows})
    metric_rows = metrics.normalized_rows(main_rows)

    # Overall end-to-end + mechanism table.
    table1 = []
    for method in methods:
        norm_ms, norm_p95 = metrics.method_summary(metric_rows, method)
        xdev, cache, cont = metrics.mechanism_rates(
            [r for r in main_rows if r["method"] == method]
        )
        table1.append(
            [method, f"{norm_ms:.3f}", f"{norm_p95:.3f}", f"{xdev:.3f}", f"{cache:.3f}",
             f"{cont:.3f}"]
        )
    table1.sort(key=lambda row: float(row[1]))
    emit("table1_overall", ["method", "norm_makespan", "norm_p95", "xdev_edge",
                            "cache_score", "model_cont"], table1)

    # ECDF of per-workflow normalized makespan.
    ecdf_rows = []
    for method in methods:
        values = [m.norm_makespan for m in metric_rows if m.method == method]
        for x, frac in metrics.ecdf_points(values):
            ecdf_rows.append([method, f"{x:.6f}", f"{frac:.6f}"])
    emit("ecdf_norm_makespan", ["method", "norm_makespan", "cumulative_fraction"], ecdf_rows)

    # Family breakdown on the strict completion intersection.
    breakdown = metrics.family_breakdown(metric_rows, methods)
    fam_rows = []
    for family, per_method in sorted(breakdown.items()):
        n = len({
            (m.workflow_id, m.batch_size, m.seed)
            for m in metric_rows
            if m.family == family and m.method == methods[0]
        })
        fam_rows.append([family, n] + [f"{per_method[m]:.3f}" for m in methods])
    emit("table8_family", ["family", "instances"] + methods, fam_rows)

    # Ablations: degradation relative to full configuration on the same cells.
    if ablation_rows:
        pool = main_rows + ablation_rows
        pooled_metrics = metrics.normalized_rows(pool)
        ablation_cells = {
            (r["workflow_id"], r["batch_size"], r["seed"]) for r in ablation_rows
        }

        def cell_of(m: metrics.MetricRow) -> tuple:
            return (m.workflow_id, str(m.batch_size), str(m.seed))

        full_values = [
            m.norm_makespan
            for m, r in zip(pooled_metrics, pool)
            if r["method"] == "fate" and r["ablation_flags"] == "none"
            and r["perturbation"] == "none" and cell_of(m) in ablation_cells
            and r["run_id"].startswith("main")
        ]
        full = metrics.geo_mean(full_values)
        table3 = [["full", f"{full:.3f}", ""]]
        for flag in sorted({r["ablation_flags"] for r in ablation_rows}):
            values = [
                m.norm_makespan
                for m, r in zip(pooled_metrics, pool)
                if r["ablation_flags"] == flag and r["run_id"].startswith("ablation")
            ]
            if not values:
                continue
            v = metrics.geo_mean(values)
            table3.append([flag, f"{v:.3f}", f"{(v / full - 1) * 100:+.2f}%"])
        emit("table3_ablation", ["variant", "norm_makespan", "degradation"], table3)

    # Controlled prefix-reuse suite normalized by the beam baseline at ratio 0.
    if prefix_rows:
        emit(
            "table2_prefix",
            ["method"] + [f"r{r}" for r in _ratio_labels(prefix_rows)],
            _suite_table(prefix_rows, anchor_ratio_zero=True),
        )

    # Controlled conflict suite normalized by the beam baseline per ratio.
    if conflict_rows:
        emit(
            "table9_conflict",
            ["method"] + [f"r{r}" for r in _ratio_labels(conflict_rows)],
            _suite_table(conflict_rows, anchor_ratio_zero=False),
        )

    # Solver overhead pooled over declared solver-backed runs.
    samples = _declared_rows(out_dir, "solver_samples", required=False)
    if samples:
        times = sorted(float(s["wall_time_s"]) for s in samples)
        solves = len(times)
        optimal = sum(int(r["solver_optimal"]) for r in main_rows + ablation_rows)
        total_solves = sum(int(r["solver_solves"]) for r in main_rows + ablation_rows)
        emit(
            "table10_solver",
            ["solves", "optimal", "mean_s", "median_s", "p95_s", "max_s"],
            [[
                solves,
                optimal if total_solves == solves else f"{optimal}/{total_solves}",
                f"{statistics.fmean(times):.4f}",
                f"{statistics.median(times):.4f}",
                f"{times[max(0, math.ceil(0.95 * solves) - 1)]:.4f}",
                f"{times[-1]:.4f}",
            ]],
        )

    # Hyperparameter sensitivity relative to the default horizon.
    if sensitivity_rows:
        sens_metrics = metrics.normalized_rows(sensitivity_rows)
        settings: dict[str, list[float]] = {}
        for m, r in zip(sens_metrics, sensitivity_rows):
            if r["method"] != "fate":
                continue
            if r["ablation_flags"].startswith("scale_"):
                label = r["ablation_flags"]
            else:
                label = f"H={r['h_value']}"
            settings.setdefault(label, []).append(m.norm_makespan)
        default_label = "H=4"
        default_value = metrics.geo_mean(settings[default_label]) if default_label in settings else None
        rows_out = []
        for label in sorted(settings):
            v = metrics.geo_mean(settings[label])
            rel = f"{v / default_value:.3f}" if default_value else ""
            rows_out.append([label, f"{v:.3f}", rel])
        emit("table11_sensitivity", ["setting", "norm_makespan", "rel_to_default"], rows_out)

    # Proxy-cost perturbation conditions.
    if perturbation_rows:
        pert_metrics = metrics.normalized_rows(perturbation_rows)
        conditions = sorted({r["perturbation"] for r in perturbation_rows})
        pmethods = sorted({r["method"] for r in perturbation_rows if r["method"] != "roundrobin"})
        rows_out = []
        for cond in conditions:
            row = [cond]
            for method in pmethods:
                values = [
                    m.norm_makespan
                    for m in pert_metrics
                    if m.method == method and m.perturbation == cond
                ]
                row.append(f"{metrics.geo_mean(values):.3f}" if values else "")
            rows_out.append(row)
        emit("table12_perturbation", ["condition"] + pmethods, rows_out)

    return outputs


def _ratio_labels(rows: list[dict]) -> list[str]:
    tags = sorted({r["workflow_id"].split("-r")[-1].split("-")[0] if "-r" in r["workflow_id"]
                   else r["workflow_id"].split("-")[1] for r in rows})
    return tags


def _suite_ratio(row: dict) -> str:
    wid = row["workflow_id"]
    if "-r" in wid:
        return wid.split("-r")[-1].split("-")[0]
    return wid.split("-")[1]


def _suite_table(rows: list[dict], anchor_ratio_zero: bool) -> list[list]:
    """Geometric-mean makespan per (method, ratio), normalized by the beam
    baseline (at ratio zero when anchored, per ratio otherwise)."""
    ratios = _ratio_labels(rows)
    methods = sorted({r["method"] for r in rows})

    def suite_geomean(method: str, ratio: str) -> float:
        values = [
            float(r["makespan_s"])
            for r in rows
            if r["method"] == method and _suite_ratio(r) == ratio
        ]
        return metrics.geo_mean(values)

    anchor_method = "halo" if "halo" in methods else methods[0]
    out = []
    for method in methods:
        row = [method]
        for ratio in ratios:
            denom = suite_geomean(anchor_method, ratios[0] if anchor_ratio_zero else ratio)
            row.append(f"{suite_geomean(method, ratio) / denom:.3f}")
        out.append(row)
    return out
