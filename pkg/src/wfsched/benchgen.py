"""Benchmark workload construction.

Three workload sources feed the harness: imported workflow JSON lifted into
stage graphs, fully synthetic layered DAGs, and the controlled prefix-reuse
and conflict suites.  Generation is a pure function of (inputs, seed); the
same call always yields byte-identical serialized output.
"""

from __future__ import annotations

import json
import math
import random
import re
from dataclasses import dataclass, replace

from .config import DEFAULT_SEED, RunConfig
from .hashutil import stable_choice, stable_hash64
from .model import (
    Query,
    Stage,
    WorkflowDag,
    WorkflowInstance,
    annotate_topology,
    validate_dag,
)

EARLY_ROLES = ("prompt_prep", "retrieval", "routing", "decomposition")
MERGE_ROLES = ("merge", "aggregation")
LATE_ROLES = ("summarization", "validation", "verification", "final_synthesis")

_SUFFIX_RE = re.compile(r"([_\-.]\d+)+$")


class BenchgenError(ValueError):
    pass


@dataclass(frozen=True)
class RawTaskDag:
    """Task names and parent links extracted from a workflow JSON document."""

    tasks: tuple[tuple[str, tuple[str, ...]], ...]
    source_file: str = "<inline>"


@dataclass(frozen=True)
class LiftParams:
    max_stages: int = 64
    min_groups: int = 12
    seed: int = DEFAULT_SEED
    family: str = "unknown"
    prefix_collapse: bool = True

    def __post_init__(self) -> None:
        if self.max_stages < 1:
            raise ValueError("max_stages must be >= 1")


@dataclass(frozen=True)
class SuiteSpec:
    kind: str  # prefix_reuse | conflict | synthetic
    repeat_ratio: float = 0.0
    prefix_length: int = 2000
    chain_length: int = 12
    width: int = 3
    depth: int = 4
    density: float = 0.5
    group_size: int = 4
    batch_size: int = 16
    seed: int = DEFAULT_SEED

    def __post_init__(self) -> None:
        if not (0.0 <= self.repeat_ratio <= 1.0):
            raise ValueError("repeat_ratio must lie in [0, 1]")


# ---------------------------------------------------------------------------
# Import
# ---------------------------------------------------------------------------


def import_workflow_json(document: str, source_file: str = "<inline>") -> RawTaskDag:
    """Parse a workflow JSON document into a raw task DAG.

    Accepts the task, job, and node list formats (optionally nested under a
    ``workflow`` key); unknown fields are ignored.
    """
    try:
        doc = json.loads(document)
    except json.JSONDecodeError as exc:
        raise BenchgenError(f"{source_file}: malformed JSON at line {exc.lineno}, "
                            f"column {exc.colno}: {exc.msg}") from exc
    if not isinstance(doc, dict):
        raise BenchgenError(f"{source_file}: top-level JSON value must be an object")
    container = doc.get("workflow") if isinstance(doc.get("workflow"), dict) else doc
    task_list = None
    for key in ("tasks", "jobs", "nodes"):
        if isinstance(container.get(key), list):
            task_list = container[key]
            break
    if task_list is None:
        raise BenchgenError(f"{source_file}: no tasks/jobs/nodes list found")
    tasks: list[tuple[str, tuple[str, ...]]] = []
    names: set[str] = set()
    for i, entry in enumerate(task_list):
        if not isinstance(entry, dict):
            raise BenchgenError(f"{source_file}: task #{i} is not an object")
        name = entry.get("name") or entry.get("id")
        if not name:
            raise BenchgenError(f"{source_file}: task #{i} has no name")
        parents = entry.get("parents") or entry.get("parentNames") or []
        if not isinstance(parents, list):
            raise BenchgenError(f"{source_file}: task {name}: parents must be a list")
        if name in names:
            raise BenchgenError(f"{source_file}: duplicate task name {name}")
        names.add(name)
        tasks.append((str(name), tuple(str(p) for p in parents)))
    for name, parents in tasks:
        for p in parents:
            if p not in names:
                raise BenchgenError(f"{source_file}: task {name} references unknown parent {p}")
    return RawTaskDag(tasks=tuple(tasks), source_file=source_file)


# ---------------------------------------------------------------------------
# Lifting
# ---------------------------------------------------------------------------


def normalize_task_name(name: str) -> str:
    """Lowercase and strip trailing _N / -N / .N index suffixes."""
    return _SUFFIX_RE.sub("", name.lower())


def _raw_toposort(raw: RawTaskDag) -> list[str] | None:
    names = [n for n, _ in raw.tasks]
    parents = {n: ps for n, ps in raw.tasks}
    indeg = {n: len(parents[n]) for n in names}
    children: dict[str, list[str]] = {n: [] for n in names}
    for n, ps in raw.tasks:
        for p in ps:
            children[p].append(n)
    ready = sorted(n for n in names if indeg[n] == 0)
    order = []
    while ready:
        n = ready.pop(0)
        order.append(n)
        changed = False
        for c in children[n]:
            indeg[c] -= 1
            if indeg[c] == 0:
                ready.append(c)
                changed = True
        if changed:
            ready.sort()
    return order if len(order) == len(names) else None


def lift_dag(raw: RawTaskDag, params: LiftParams) -> WorkflowDag:
    """Collapse raw tasks into stage groups, preserving induced dependencies.

    Tasks sharing a normalized name prefix form one group; when collapse
    over-compresses, the largest groups split deterministically until the
    ``min_groups`` floor is met; when the result still exceeds ``max_stages``,
    the deepest groups are dropped with their parents spliced to children.
    The returned stages carry no roles, models or eligibility yet.
    """
    if _raw_toposort(raw) is None:
        raise BenchgenError(f"{raw.source_file}: raw task graph is cyclic")

    group_of: dict[str, str] = {}
    members: dict[str, list[str]] = {}
    for name, _ in raw.tasks:
        g = normalize_task_name(name) if params.prefix_collapse else name.lower()
        group_of[name] = g
        members.setdefault(g, []).append(name)
    for g in members:
        members[g].sort()

    # Relax collapse by halving the largest groups until the floor is met.
    split_seq = 0
    while len(members) < params.min_groups:
        candidates = sorted(members.items(), key=lambda kv: (-len(kv[1]), kv[0]))
        g, names = candidates[0]
        if len(names) < 2:
            break
        split_seq += 1
        keep = names[: math.ceil(len(names) / 2)]
        moved = names[math.ceil(len(names) / 2):]
        new_g = f"{g}+{split_seq}"
        members[g] = keep
        members[new_g] = moved
        for n in moved:
            group_of[n] = new_g

    edges: set[tuple[str, str]] = set()
    for name, parents in raw.tasks:
        gv = group_of[name]
        for p in parents:
            gu = group_of[p]
            if gu != gv:
                edges.add((gu, gv))

    # Truncate to max_stages: drop the deepest groups, splice parents->children.
    levels = _group_levels(set(members), edges)
    while len(members) > params.max_stages:
        victim = sorted(members, key=lambda g: (-levels[g], g))[0]
        ps = {u for (u, v) in edges if v == victim}
        cs = {v for (u, v) in edges if u == victim}
        edges = {(u, v) for (u, v) in edges if victim not in (u, v)}
        edges.update((u, v) for u in sorted(ps) for v in sorted(cs) if u != v)
        del members[victim]
        del levels[victim]

    stages = {g: Stage(id=g) for g in sorted(members)}
    dag = WorkflowDag(
        workflow_id=f"{params.family}-{raw.source_file}",
        family=params.family,
        stages=stages,
        edges=frozenset(edges),
    )
    return annotate_topology(dag)


def _group_levels(groups: set[str], edges: set[tuple[str, str]]) -> dict[str, int]:
    parents: dict[str, list[str]] = {g: [] for g in groups}
    for u, v in sorted(edges):
        parents[v].append(u)
    levels: dict[str, int] = {}

    def level(g: str) -> int:
        if g not in levels:
            levels[g] = 1 + max((level(p) for p in parents[g]), default=-1)
        return levels[g]

    for g in sorted(groups):
        level(g)
    return levels


# ---------------------------------------------------------------------------
# Role / model / device assignment
# ---------------------------------------------------------------------------


def assign_roles(dag: WorkflowDag, config: RunConfig, seed: int = DEFAULT_SEED) -> WorkflowDag:
    """Attach role templates using fixed structural rules.

    Rules apply in a fixed order: sources and early wide stages take early
    roles, mid-level fan-out stages become workers, high-fanin stages merge or
    aggregate, sinks and max-level stages take late roles.  The pick inside a
    bucket hashes (stage id, seed).
    """
    if dag.annotations is None:
        dag = annotate_topology(dag)
    ann = dag.annotations
    max_level = ann.max_level
    new_stages: dict[str, Stage] = {}
    for sid in sorted(dag.stages):
        lvl = ann.level[sid]
        ind = ann.indegree[sid]
        outd = ann.outdegree[sid]
        width = ann.level_width.get(lvl, 1)
        parent_width = ann.level_width.get(lvl - 1, 1)
        if ind == 0 or (lvl <= 1 and width >= 3):
            bucket = EARLY_ROLES
        elif lvl < max_level and outd >= 3:
            bucket = ("worker",)
        elif ind >= 3 or (ind >= 2 and 2 * ind >= parent_width):
            bucket = MERGE_ROLES
        elif outd == 0 or lvl == max_level:
            bucket = LATE_ROLES
        else:
            bucket = ("worker",)
        kind = stable_choice(list(bucket), sid, seed)
        role = config.roles[kind]
        new_stages[sid] = replace(
            dag.stages[sid],
            role=role,
            shard_bound=2 if role.shard_eligible else 1,
            prompt_token_proxy=role.max_token_proxy // 4,
            output_token_proxy=role.output_size_proxy,
            keep_cache=role.default_keep_cache,
            cache_reuse=role.default_cache_reuse,
        )
    return annotate_topology(replace(dag, stages=new_stages))


def assign_models(
    dag: WorkflowDag,
    seed: int,
    config: RunConfig,
    pinned_alias: str | None = None,
) -> WorkflowDag:
    """Pick one model alias per stage from its role's candidate set.

    Cache-oriented and family-pinned tracks pass ``pinned_alias`` to hold the
    whole workflow on a single model.  Stages opting into cache reuse join a
    per-model shared-prefix group.
    """
    new_stages: dict[str, Stage] = {}
    for sid in sorted(dag.stages):
        stage = dag.stages[sid]
        if stage.role is None:
            raise BenchgenError(f"stage {sid}: assign_roles must run before assign_models")
        if pinned_alias is not None:
            alias = pinned_alias
        else:
            candidates = config.role_models.get(stage.role.kind, ())
            if not candidates:
                raise BenchgenError(f"role {stage.role.kind}: empty model candidate set")
            alias = stable_choice(list(candidates), dag.workflow_id, sid, seed)
        group = f"pg:{alias}" if stage.cache_reuse else None
        new_stages[sid] = replace(stage, model=alias, shared_prefix_group=group)
    return annotate_topology(replace(dag, stages=new_stages))


def assign_devices(dag: WorkflowDag, device_ids: tuple[str, ...]) -> WorkflowDag:
    """Open eligibility to the full device set (capability restrictions are
    exercised by hand-built DAGs, not the generated suites)."""
    eligible = frozenset(device_ids)
    new_stages = {sid: replace(s, eligible_devices=eligible) for sid, s in dag.stages.items()}
    return annotate_topology(replace(dag, stages=new_stages))


def finalize_dag(
    dag: WorkflowDag,
    config: RunConfig,
    seed: int,
    pinned_alias: str | None = None,
) -> WorkflowDag:
    """Run the role/model/device pipeline and validate the result."""
    dag = assign_roles(dag, config, seed=seed)
    dag = assign_models(dag, seed, config, pinned_alias=pinned_alias)
    dag = assign_devices(dag, config.topology.device_ids)
    report = validate_dag(dag, config.topology)
    if not report.ok:
        raise BenchgenError(f"generated dag invalid: {report.violations[:3]}")
    return dag


def make_queries(
    workflow_id: str, batch_size: int, seed: int, min_tokens: int = 200, span: int = 600
) -> tuple[Query, ...]:
    """Deterministic per-query prompt token counts, no shared prefixes."""
    return tuple(
        Query(
            query_id=f"q{i:03d}",
            prompt_tokens=min_tokens + stable_hash64(workflow_id, "query", i, seed) % span,
        )
        for i in range(batch_size)
    )


def make_instance(dag: WorkflowDag, batch_size: int, seed: int) -> WorkflowInstance:
    return WorkflowInstance(
        dag=dag,
        queries=make_queries(dag.workflow_id, batch_size, seed),
        batch_size=batch_size,
    )


# ---------------------------------------------------------------------------
# Synthetic generation
# ---------------------------------------------------------------------------


def synth_generate(spec: SuiteSpec, config: RunConfig) -> WorkflowDag:
    """Layered random DAG, acyclic by construction, fully deterministic."""
    if spec.kind != "synthetic":
        raise BenchgenError(f"synth_generate got suite kind {spec.kind!r}")
    rng = random.Random(spec.seed)
    layers: list[list[str]] = []
    n = 0
    for d in range(spec.depth):
        layer = [f"s{n + i:02d}" for i in range(spec.width)]
        n += spec.width
        layers.append(layer)
    edges: set[tuple[str, str]] = set()
    for d in range(1, spec.depth):
        for v in layers[d]:
            parents = [u for u in layers[d - 1] if rng.random() < spec.density]
            if not parents:
                parents = [layers[d - 1][rng.randrange(len(layers[d - 1]))]]
            edges.update((u, v) for u in parents)
    dag = WorkflowDag(
        workflow_id=f"synthetic-d{spec.depth}w{spec.width}-s{spec.seed}",
        family="synthetic",
        stages={sid: Stage(id=sid) for layer in layers for sid in layer},
        edges=frozenset(edges),
    )
    return finalize_dag(annotate_topology(dag), config, seed=spec.seed)


# ---------------------------------------------------------------------------
# Raw-instance synthesis (desk-scale stand-in for archived workflow traces)
# ---------------------------------------------------------------------------

# Per-family phase tables: (phase name, base count, wiring to previous phase).
# Wiring: "fan" connects every task of the previous phase to every task here,
# "pair" connects index-aligned tasks, "funnel" connects everything to task 0.
_FAMILY_PHASES: dict[str, list[tuple[str, int, str]]] = {
    "1000genome": [
        ("individuals", 20, "root"),
        ("individuals_merge", 5, "fan"),
        ("sifting", 2, "root"),
        ("mutation_overlap", 6, "fan"),
        ("frequency", 6, "pair"),
    ],
    "blast": [
        ("split_fasta", 1, "root"),
        ("blast_a", 10, "fan"),
        ("blast_b", 10, "root"),
        ("cat_blast", 1, "funnel"),
        ("cat", 1, "pair"),
    ],
    "bwa": [
        ("fastq_reduce", 1, "root"),
        ("bwa_align_a", 12, "fan"),
        ("bwa_align_b", 12, "root"),
        ("cat_bwa", 2, "fan"),
        ("bwa_index", 1, "funnel"),
    ],
    "cycles": [
        ("baseline_cycles", 8, "root"),
        ("cycles_a", 8, "pair"),
        ("fertilizer_increase", 8, "pair"),
        ("cycles_fi", 8, "pair"),
        ("summary", 2, "fan"),
    ],
    "montage": [
        ("mproject", 10, "root"),
        ("mdifffit", 14, "fan"),
        ("mconcatfit", 1, "funnel"),
        ("mbgmodel", 1, "pair"),
        ("mbackground", 10, "fan"),
        ("mimgtbl", 1, "funnel"),
        ("madd", 1, "pair"),
        ("mshrink", 2, "fan"),
        ("mjpeg", 1, "funnel"),
    ],
    "nextflow": [
        ("fastqc", 6, "root"),
        ("trimgalore", 6, "pair"),
        ("star_align", 6, "pair"),
        ("markduplicates", 6, "pair"),
        ("multiqc", 1, "funnel"),
    ],
    "rnaseq": [
        ("prep_genome", 1, "root"),
        ("hisat2_align", 8, "fan"),
        ("stringtie", 8, "pair"),
        ("ballgown", 1, "funnel"),
    ],
    "seismology": [
        ("sg1iterdecon", 18, "root"),
        ("wrapper_siftstfbypixels", 1, "funnel"),
        ("siftmerge", 1, "pair"),
    ],
    "soykb": [
        ("alignment_to_reference", 10, "root"),
        ("sort_sam", 10, "pair"),
        ("dedup", 10, "pair"),
        ("add_replace", 10, "pair"),
        ("realign_target_creator", 2, "fan"),
        ("indel_realign", 2, "pair"),
        ("haplotype_caller", 6, "fan"),
        ("genotype_gvcfs", 1, "funnel"),
        ("combine_variants", 1, "pair"),
    ],
    "srasearch": [
        ("prefetch", 12, "root"),
        ("fasterq_dump", 12, "pair"),
        ("bowtie2_build", 1, "root"),
        ("bowtie2_align", 12, "fan"),
        ("samtools_merge", 2, "fan"),
    ],
}

FAMILY_NAMES = tuple(sorted(_FAMILY_PHASES))


def synth_raw_family(family: str, seed: int, scale: float = 1.0) -> str:
    """Emit a workflow JSON document with the dependency shape of a family.

    A stand-in for archived workflow instance files: task counts scale
    deterministically with ``scale`` and ``seed`` so one family yields many
    structurally related instances.
    """
    if family not in _FAMILY_PHASES:
        raise BenchgenError(f"unknown family {family!r}; known: {FAMILY_NAMES}")
    rng = random.Random(stable_hash64(family, seed) & 0x7FFFFFFF)
    tasks: list[dict] = []
    prev_phase: list[str] = []
    for phase, base_count, wiring in _FAMILY_PHASES[family]:
        count = max(1, round(base_count * scale * (0.8 + 0.4 * rng.random())))
        names = [f"{phase}_{i + 1:05d}" for i in range(count)]
        for i, name in enumerate(names):
            if wiring == "root" or not prev_phase:
                parents: list[str] = []
            elif wiring == "fan":
                parents = list(prev_phase)
            elif wiring == "pair":
                parents = [prev_phase[i % len(prev_phase)]]
            elif wiring == "funnel":
                parents = list(prev_phase) if i == 0 else [prev_phase[i % len(prev_phase)]]
            else:
                raise BenchgenError(f"unknown wiring {wiring!r}")
            tasks.append({"name": name, "parents": parents})
        prev_phase = names
    doc = {"name": family, "workflow": {"tasks": tasks}}
    return json.dumps(doc, indent=2, sort_keys=True)


def lifted_instance(
    family: str,
    config: RunConfig,
    seed: int,
    batch_size: int = 16,
    scale: float = 1.0,
    max_stages: int = 64,
    min_groups: int = 12,
) -> WorkflowInstance:
    """Full pipeline: raw synthesis -> import -> lift -> roles/models/devices."""
    raw_text = synth_raw_family(family, seed, scale=scale)
    raw = import_workflow_json(raw_text, source_file=f"{family}-{seed}")
    params = LiftParams(
        max_stages=max_stages, min_groups=min_groups, seed=seed, family=family
    )
    dag = lift_dag(raw, params)
    dag = replace(dag, workflow_id=f"{family}-s{seed}")
    dag = finalize_dag(annotate_topology(dag), config, seed=seed)
    return make_instance(dag, batch_size, seed)


# ---------------------------------------------------------------------------
# Controlled suites
# ---------------------------------------------------------------------------


def _grouped_queries(
    workflow_id: str, spec: SuiteSpec
) -> tuple[tuple[Query, ...], dict[str, int]]:
    """Queries with ``floor(ratio * batch)`` members in shared-prefix groups."""
    grouped_n = math.floor(spec.repeat_ratio * spec.batch_size)
    queries: list[Query] = []
    groups: dict[str, int] = {}
    for i in range(spec.batch_size):
        tail = 100 + stable_hash64(workflow_id, "tail", i, spec.seed) % 100
        if i < grouped_n:
            gid = f"qg{i // spec.group_size:02d}"
            groups[gid] = spec.prefix_length
            queries.append(Query(f"q{i:03d}", spec.prefix_length + tail, gid))
        else:
            queries.append(Query(f"q{i:03d}", spec.prefix_length + tail, None))
    return tuple(queries), groups


_PREFIX_SHAPES = (
    ("chain", 4, 1, 1.0),
    ("funnelweb", 3, 2, 1.0),
    ("wide", 3, 3, 0.7),
)


def build_prefix_suite(spec: SuiteSpec, config: RunConfig) -> list[WorkflowInstance]:
    """Controlled reuse suite: workflow-style templates with cache flags on and
    query groups covering ``repeat_ratio`` of the batch.

    Models stay heterogeneous (role-assigned): the suite varies reusable
    prefix structure while residency and locality tradeoffs persist.
    """
    if spec.kind != "prefix_reuse":
        raise BenchgenError(f"build_prefix_suite got suite kind {spec.kind!r}")
    instances = []
    for shape, depth, width, density in _PREFIX_SHAPES:
        shape_seed = spec.seed + stable_hash64("prefix", shape) % 1000
        dag = synth_generate(
            replace(spec, kind="synthetic", depth=depth, width=width, density=density,
                    seed=shape_seed),
            config,
        )
        stages = {
            sid: replace(s, keep_cache=True, cache_reuse=True)
            for sid, s in dag.stages.items()
        }
        dag = annotate_topology(replace(dag, stages=stages))
        dag = assign_models(dag, spec.seed, config)
        dag = assign_devices(dag, config.topology.device_ids)
        ratio_tag = f"{int(round(spec.repeat_ratio * 100)):03d}"
        dag = replace(
            dag, workflow_id=f"prefix-{shape}-r{ratio_tag}-b{spec.batch_size}",
            family="prefix_reuse",
        )
        queries, groups = _grouped_queries(dag.workflow_id, spec)
        instances.append(
            WorkflowInstance(
                dag=dag, queries=queries, batch_size=spec.batch_size, prefix_groups=groups
            )
        )
    return instances


CONFLICT_RATIOS = (0.0, 0.25, 0.5, 1.0)
_CONFLICT_MODELS = ("qwen-7b", "deepseek-7b", "llama-8b")


def build_conflict_suite(spec: SuiteSpec, config: RunConfig) -> list[WorkflowInstance]:
    """Controlled conflict suite: a chain alternating model families while
    carrying cache-relevant state, one template per repeat ratio."""
    if spec.kind != "conflict":
        raise BenchgenError(f"build_conflict_suite got suite kind {spec.kind!r}")
    role = config.roles["worker"]
    instances = []
    for ratio in CONFLICT_RATIOS:
        ratio_tag = f"{int(round(ratio * 100)):03d}"
        workflow_id = f"conflict-{ratio_tag}-b{spec.batch_size}"
        stages: dict[str, Stage] = {}
        edges = set()
        for i in range(spec.chain_length):
            sid = f"c{i:02d}"
            stages[sid] = Stage(
                id=sid,
                model=_CONFLICT_MODELS[i % len(_CONFLICT_MODELS)],
                eligible_devices=frozenset(config.topology.device_ids),
                shard_bound=1,
                role=role,
                prompt_token_proxy=spec.prefix_length,
                output_token_proxy=role.output_size_proxy,
                shared_prefix_group="conflict-chain",
                keep_cache=True,
                cache_reuse=True,
            )
            if i > 0:
                edges.add((f"c{i - 1:02d}", sid))
        dag = annotate_topology(
            WorkflowDag(
                workflow_id=workflow_id,
                family="conflict",
                stages=stages,
                edges=frozenset(edges),
            )
        )
        # Cache-relevant state rides on the stage-level chain group; queries
        # stay small so stage compute reflects the shared prefix, not prompts.
        queries, groups = _grouped_queries(
            workflow_id, replace(spec, repeat_ratio=ratio, prefix_length=400)
        )
        instances.append(
            WorkflowInstance(
                dag=dag, queries=queries, batch_size=spec.batch_size, prefix_groups=groups
            )
        )
    return instances
