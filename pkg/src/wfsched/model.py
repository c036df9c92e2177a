"""Workflow DAG model: stages, device topology, readiness, serialization.

Everything here is immutable after construction and shared read-only by all
scheduling policies.  Topological annotations (level, reverse depth, etc.)
are computed once by :func:`annotate_topology` and carried on the DAG.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, NamedTuple

DAG_SCHEMA = "wfsched.dag@1"
INSTANCE_SCHEMA = "wfsched.instance@1"

ROLE_KINDS = (
    "prompt_prep",
    "retrieval",
    "routing",
    "decomposition",
    "worker",
    "merge",
    "aggregation",
    "summarization",
    "validation",
    "verification",
    "final_synthesis",
)

# Roles that sit at merge/finalization points; these never shard.
NON_SHARD_ROLES = frozenset({"merge", "aggregation", "final_synthesis"})


@dataclass(frozen=True)
class ModelProfile:
    """Proxy profile of one serving model."""

    alias: str
    memory_gb: float
    prefill_coeff: float  # seconds per 1000 prompt tokens
    decode_coeff: float  # seconds per output token
    switch_penalty: float  # seconds to load/activate when not resident

    def __post_init__(self) -> None:
        if self.prefill_coeff <= 0 or self.decode_coeff <= 0:
            raise ValueError(f"model {self.alias}: coefficients must be > 0")
        if self.switch_penalty < 0 or self.memory_gb <= 0:
            raise ValueError(f"model {self.alias}: invalid memory/switch values")


@dataclass(frozen=True)
class DeviceSpec:
    id: str
    speed_factor: float = 1.0
    memory_gb: float = 24.0

    def __post_init__(self) -> None:
        if self.speed_factor <= 0:
            raise ValueError(f"device {self.id}: speed_factor must be > 0")


@dataclass(frozen=True)
class DeviceTopology:
    """Device list plus pairwise transfer coefficients (seconds per 1k tokens)."""

    devices: tuple[DeviceSpec, ...]
    default_transfer_coeff: float = 1.0
    transfer_overrides: Mapping[tuple[str, str], float] = field(default_factory=dict)

    def __post_init__(self) -> None:
        ids = [d.id for d in self.devices]
        if len(set(ids)) != len(ids):
            raise ValueError("device ids must be unique")
        if self.default_transfer_coeff < 0:
            raise ValueError("transfer coefficient must be >= 0")
        for pair, beta in self.transfer_overrides.items():
            if beta < 0:
                raise ValueError(f"transfer coefficient for {pair} must be >= 0")

    @property
    def device_ids(self) -> tuple[str, ...]:
        return tuple(d.id for d in self.devices)

    def device(self, device_id: str) -> DeviceSpec:
        for d in self.devices:
            if d.id == device_id:
                return d
        raise KeyError(device_id)

    def speed_factor(self, device_id: str) -> float:
        return self.device(device_id).speed_factor

    def transfer_coeff(self, src: str, dst: str) -> float:
        if src == dst:
            return 0.0
        return float(self.transfer_overrides.get((src, dst), self.default_transfer_coeff))


@dataclass(frozen=True)
class StageRole:
    """Role template attached to a stage by the benchmark generator."""

    kind: str
    complexity: float = 1.0
    prefill_scale: float = 1.0
    decode_scale: float = 1.0
    max_token_proxy: int = 2048
    output_size_proxy: int = 256
    comm_weight: float = 1.0
    default_keep_cache: bool = False
    default_cache_reuse: bool = False
    shard_eligible: bool = True

    def __post_init__(self) -> None:
        if self.kind not in ROLE_KINDS:
            raise ValueError(f"unknown role kind {self.kind!r}")
        for name in ("complexity", "prefill_scale", "decode_scale", "comm_weight"):
            if getattr(self, name) <= 0:
                raise ValueError(f"role {self.kind}: {name} must be > 0")
        if self.kind in NON_SHARD_ROLES and self.shard_eligible:
            raise ValueError(f"role {self.kind} cannot be shard eligible")


@dataclass(frozen=True)
class Stage:
    """One workflow stage with its model, eligibility and proxy features."""

    id: str
    model: str | None = None
    eligible_devices: frozenset[str] = frozenset()
    shard_bound: int = 1
    role: StageRole | None = None
    prompt_token_proxy: int = 0
    output_token_proxy: int = 0
    shared_prefix_group: str | None = None
    keep_cache: bool = False
    cache_reuse: bool = False
    base_cost_override: Mapping[str, float] | None = None


class Query(NamedTuple):
    """One batched query instance: id, prompt size, optional shared-prefix group."""

    query_id: str
    prompt_tokens: int
    prefix_group: str | None = None


@dataclass(frozen=True)
class DagAnnotations:
    """Structural annotations computed by :func:`annotate_topology`."""

    level: Mapping[str, int]
    indegree: Mapping[str, int]
    outdegree: Mapping[str, int]
    reverse_depth: Mapping[str, int]
    level_width: Mapping[int, int]

    @property
    def max_level(self) -> int:
        return max(self.level.values()) if self.level else 0


@dataclass(frozen=True)
class WorkflowDag:
    workflow_id: str
    family: str
    stages: Mapping[str, Stage]
    edges: frozenset[tuple[str, str]]
    annotations: DagAnnotations | None = None

    def parents(self, stage_id: str) -> tuple[str, ...]:
        return tuple(sorted(u for (u, v) in self.edges if v == stage_id))

    def children(self, stage_id: str) -> tuple[str, ...]:
        return tuple(sorted(v for (u, v) in self.edges if u == stage_id))

    def parent_map(self) -> dict[str, tuple[str, ...]]:
        out: dict[str, list[str]] = {s: [] for s in self.stages}
        for u, v in sorted(self.edges):
            out[v].append(u)
        return {s: tuple(ps) for s, ps in out.items()}

    def child_map(self) -> dict[str, tuple[str, ...]]:
        out: dict[str, list[str]] = {s: [] for s in self.stages}
        for u, v in sorted(self.edges):
            out[u].append(v)
        return {s: tuple(cs) for s, cs in out.items()}


@dataclass(frozen=True)
class WorkflowInstance:
    """A workflow template paired with a batch of independent queries."""

    dag: WorkflowDag
    queries: tuple[Query, ...]
    batch_size: int
    # Shared token count per query prefix group; used to account cache overlap.
    prefix_groups: Mapping[str, int] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.batch_size != len(self.queries):
            raise ValueError("batch_size must equal the number of queries")
        ids = [q.query_id for q in self.queries]
        if len(set(ids)) != len(ids):
            raise ValueError("query ids must be unique")


@dataclass(frozen=True)
class ValidationReport:
    ok: bool
    violations: tuple[str, ...] = ()


def _toposort(stage_ids: Iterable[str], edges: Iterable[tuple[str, str]]) -> list[str] | None:
    """Kahn toposort over sorted ids; None if the graph has a cycle."""
    ids = sorted(stage_ids)
    indeg = {s: 0 for s in ids}
    children: dict[str, list[str]] = {s: [] for s in ids}
    for u, v in sorted(edges):
        indeg[v] += 1
        children[u].append(v)
    ready = sorted(s for s in ids if indeg[s] == 0)
    order: list[str] = []
    while ready:
        s = ready.pop(0)
        order.append(s)
        inserted = False
        for c in children[s]:
            indeg[c] -= 1
            if indeg[c] == 0:
                ready.append(c)
                inserted = True
        if inserted:
            ready.sort()
    return order if len(order) == len(ids) else None


def validate_dag(dag: WorkflowDag, topo: DeviceTopology | None = None) -> ValidationReport:
    """Check acyclicity, edge endpoints and per-stage invariants.

    Violations are data, not exceptions; an empty list means the DAG is usable.
    """
    violations: list[str] = []
    for u, v in sorted(dag.edges):
        if u not in dag.stages:
            violations.append(f"edge ({u},{v}): unknown parent {u}")
        if v not in dag.stages:
            violations.append(f"edge ({u},{v}): unknown child {v}")
        if u == v:
            violations.append(f"edge ({u},{v}): cycle (self-loop)")
    known_edges = [(u, v) for (u, v) in dag.edges if u in dag.stages and v in dag.stages]
    if _toposort(dag.stages, known_edges) is None:
        violations.append("cycle: graph is not acyclic")
    for sid in sorted(dag.stages):
        stage = dag.stages[sid]
        if not stage.eligible_devices:
            violations.append(f"stage {sid}: empty eligibility")
        elif topo is not None:
            unknown = sorted(set(stage.eligible_devices) - set(topo.device_ids))
            if unknown:
                violations.append(f"stage {sid}: unknown devices {unknown}")
        if stage.shard_bound < 1:
            violations.append(f"stage {sid}: shard_bound must be >= 1")
        if stage.shard_bound > 1 and stage.role is not None and not stage.role.shard_eligible:
            violations.append(f"stage {sid}: shard_bound > 1 on non-shardable role")
        if stage.prompt_token_proxy < 0 or stage.output_token_proxy < 0:
            violations.append(f"stage {sid}: negative token proxy")
    return ValidationReport(ok=not violations, violations=tuple(violations))


def annotate_topology(dag: WorkflowDag) -> WorkflowDag:
    """Fill level, indegree, outdegree, reverse depth and level width.

    Levels are longest-path depths from the sources; reverse depth is the
    longest path to any sink.  Deterministic and independent of stage
    insertion order.
    """
    order = _toposort(dag.stages, dag.edges)
    if order is None:
        raise ValueError(f"dag {dag.workflow_id}: cannot annotate a cyclic graph")
    parents = dag.parent_map()
    children = dag.child_map()
    level: dict[str, int] = {}
    for sid in order:
        ps = parents[sid]
        level[sid] = 1 + max(level[p] for p in ps) if ps else 0
    reverse_depth: dict[str, int] = {}
    for sid in reversed(order):
        cs = children[sid]
        reverse_depth[sid] = 1 + max(reverse_depth[c] for c in cs) if cs else 0
    width: dict[int, int] = {}
    for sid in order:
        width[level[sid]] = width.get(level[sid], 0) + 1
    ann = DagAnnotations(
        level=dict(sorted(level.items())),
        indegree={s: len(parents[s]) for s in sorted(dag.stages)},
        outdegree={s: len(children[s]) for s in sorted(dag.stages)},
        reverse_depth=dict(sorted(reverse_depth.items())),
        level_width=dict(sorted(width.items())),
    )
    return replace(dag, annotations=ann)


def ready_set(
    dag: WorkflowDag,
    completed: set[str],
    running: set[str] = frozenset(),
    committed: set[str] = frozenset(),
) -> set[str]:
    """Stages whose parents all completed and which are not otherwise claimed."""
    blocked = set(completed) | set(running) | set(committed)
    parents = dag.parent_map()
    return {
        sid
        for sid in dag.stages
        if sid not in blocked and all(p in completed for p in parents[sid])
    }


# ---------------------------------------------------------------------------
# JSON serialization (versioned, lossless round-trip)
# ---------------------------------------------------------------------------


def _role_to_dict(role: StageRole) -> dict:
    return {
        "kind": role.kind,
        "complexity": role.complexity,
        "prefill_scale": role.prefill_scale,
        "decode_scale": role.decode_scale,
        "max_token_proxy": role.max_token_proxy,
        "output_size_proxy": role.output_size_proxy,
        "comm_weight": role.comm_weight,
        "default_keep_cache": role.default_keep_cache,
        "default_cache_reuse": role.default_cache_reuse,
        "shard_eligible": role.shard_eligible,
    }


def _stage_to_dict(stage: Stage) -> dict:
    out: dict = {
        "id": stage.id,
        "model": stage.model,
        "eligible_devices": sorted(stage.eligible_devices),
        "shard_bound": stage.shard_bound,
        "role": _role_to_dict(stage.role) if stage.role else None,
        "prompt_token_proxy": stage.prompt_token_proxy,
        "output_token_proxy": stage.output_token_proxy,
        "shared_prefix_group": stage.shared_prefix_group,
        "keep_cache": stage.keep_cache,
        "cache_reuse": stage.cache_reuse,
    }
    if stage.base_cost_override is not None:
        out["base_cost_override"] = dict(sorted(stage.base_cost_override.items()))
    return out


def _stage_from_dict(data: dict) -> Stage:
    role = StageRole(**data["role"]) if data.get("role") else None
    return Stage(
        id=data["id"],
        model=data.get("model"),
        eligible_devices=frozenset(data.get("eligible_devices", [])),
        shard_bound=int(data.get("shard_bound", 1)),
        role=role,
        prompt_token_proxy=int(data.get("prompt_token_proxy", 0)),
        output_token_proxy=int(data.get("output_token_proxy", 0)),
        shared_prefix_group=data.get("shared_prefix_group"),
        keep_cache=bool(data.get("keep_cache", False)),
        cache_reuse=bool(data.get("cache_reuse", False)),
        base_cost_override=data.get("base_cost_override"),
    )


def dag_to_json(dag: WorkflowDag) -> str:
    doc = {
        "schema": DAG_SCHEMA,
        "workflow_id": dag.workflow_id,
        "family": dag.family,
        "stages": [_stage_to_dict(dag.stages[sid]) for sid in sorted(dag.stages)],
        "edges": sorted(list(e) for e in dag.edges),
    }
    return json.dumps(doc, indent=2, sort_keys=True)


def dag_from_json(text: str) -> WorkflowDag:
    doc = json.loads(text)
    if doc.get("schema") != DAG_SCHEMA:
        raise ValueError(f"unsupported dag schema {doc.get('schema')!r}")
    stages = {d["id"]: _stage_from_dict(d) for d in doc["stages"]}
    edges = frozenset((u, v) for u, v in doc["edges"])
    dag = WorkflowDag(
        workflow_id=doc["workflow_id"], family=doc["family"], stages=stages, edges=edges
    )
    return annotate_topology(dag)


def instance_to_json(instance: WorkflowInstance) -> str:
    doc = {
        "schema": INSTANCE_SCHEMA,
        "dag": json.loads(dag_to_json(instance.dag)),
        "queries": [list(q) for q in instance.queries],
        "batch_size": instance.batch_size,
        "prefix_groups": dict(sorted(instance.prefix_groups.items())),
    }
    return json.dumps(doc, indent=2, sort_keys=True)


def instance_from_json(text: str) -> WorkflowInstance:
    doc = json.loads(text)
    if doc.get("schema") != INSTANCE_SCHEMA:
        raise ValueError(f"unsupported instance schema {doc.get('schema')!r}")
    dag = dag_from_json(json.dumps(doc["dag"]))
    queries = tuple(Query(q[0], int(q[1]), q[2]) for q in doc["queries"])
    return WorkflowInstance(
        dag=dag,
        queries=queries,
        batch_size=int(doc["batch_size"]),
        prefix_groups={k: int(v) for k, v in doc.get("prefix_groups", {}).items()},
    )
