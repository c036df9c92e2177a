"""Discrete-event execution loop shared by every scheduling policy.

The loop is lazy: whenever the committed pool holds no task that could issue
right now, the active policy is invoked on the current ready frontier and its
placements are committed.  Dependency-ready tasks then issue in planned order
on free devices, and the clock advances completion by completion.
"""

from __future__ import annotations

import statistics
from dataclasses import dataclass, field
from typing import Protocol

from .config import RunConfig
from .costs import CostModel
from .model import Stage, WorkflowDag, WorkflowInstance, ready_set, validate_dag
from .planner import SolverStats
from .state import ExecutionState, TransitionError

_EPS = 1e-9


class DeadlockError(RuntimeError):
    """No task can issue, nothing is running, but stages remain unfinished."""


class WaveValidationError(RuntimeError):
    """A policy returned placements that violate the wave contract."""


@dataclass
class ScheduledTask:
    task_id: str
    stage_id: str
    slot: int
    device_id: str
    queries: tuple[str, ...]
    order_index: int = -1
    issue_time: float | None = None
    finish_time: float | None = None


class Policy(Protocol):  # pragma: no cover - structural typing only
    name: str

    def plan_wave(
        self,
        state: ExecutionState,
        frontier: set[str],
        dag: WorkflowDag,
        cost_model: CostModel,
    ) -> list[ScheduledTask]:
        ...


@dataclass
class RunRecord:
    method: str
    workflow_id: str
    family: str
    batch_size: int
    seed: int
    makespan: float
    query_completion: dict[str, float]
    workflow_tasks: int
    cross_device_parent_edges: int
    prefix_cache_hits_est: int
    same_model_continuations: int
    solver_solves: int
    solver_optimal: int
    solver_time_mean_s: float
    solver_time_p95_s: float
    solver_time_max_s: float
    ablation: str = "none"
    perturbation: str = "none"
    h_value: int = 4
    trace: list[dict] | None = None

    def p95_latency(self) -> float:
        from .metrics import p95_latency

        return p95_latency(list(self.query_completion.values()))


def partition_shards(
    stage: Stage, devices: list[str], queries: tuple[str, ...]
) -> list[tuple[str, tuple[str, ...]]]:
    """Near-equal contiguous query split across the chosen devices."""
    if not devices:
        raise ValueError("partition_shards requires at least one device")
    if len(devices) > stage.shard_bound:
        raise ValueError(
            f"stage {stage.id}: {len(devices)} devices exceed shard bound {stage.shard_bound}"
        )
    if len(set(devices)) != len(devices):
        raise ValueError(f"stage {stage.id}: shard devices must be distinct")
    for d in devices:
        if stage.eligible_devices and d not in stage.eligible_devices:
            raise ValueError(f"stage {stage.id}: device {d} not eligible")
    n, k = len(queries), len(devices)
    shards = []
    start = 0
    for i, device_id in enumerate(devices):
        size = n // k + (1 if i < n % k else 0)
        shards.append((device_id, tuple(queries[start : start + size])))
        start += size
    return shards


def _validate_wave(
    tasks: list[ScheduledTask],
    frontier: set[str],
    dag: WorkflowDag,
    instance: WorkflowInstance,
    device_ids: tuple[str, ...],
) -> None:
    if not tasks:
        raise WaveValidationError("policy returned an empty wave for a nonempty frontier")
    all_queries = set(q.query_id for q in instance.queries)
    devices_this_wave: set[str] = set()
    by_stage: dict[str, list[ScheduledTask]] = {}
    for t in tasks:
        if t.stage_id not in frontier:
            raise WaveValidationError(f"task for stage {t.stage_id} outside the ready frontier")
        stage = dag.stages[t.stage_id]
        if t.device_id not in device_ids:
            raise WaveValidationError(f"unknown device {t.device_id}")
        if stage.eligible_devices and t.device_id not in stage.eligible_devices:
            raise WaveValidationError(f"stage {t.stage_id}: device {t.device_id} ineligible")
        if t.device_id in devices_this_wave:
            raise WaveValidationError(f"device {t.device_id} assigned twice in one wave")
        devices_this_wave.add(t.device_id)
        by_stage.setdefault(t.stage_id, []).append(t)
    for stage_id, stage_tasks in sorted(by_stage.items()):
        stage = dag.stages[stage_id]
        slots = sorted(t.slot for t in stage_tasks)
        if slots != list(range(len(slots))):
            raise WaveValidationError(f"stage {stage_id}: non-monotonic slots {slots}")
        if len(slots) > stage.shard_bound:
            raise WaveValidationError(f"stage {stage_id}: too many shard slots")
        covered: set[str] = set()
        for t in stage_tasks:
            overlap = covered.intersection(t.queries)
            if overlap:
                raise WaveValidationError(f"stage {stage_id}: overlapping shards")
            covered.update(t.queries)
        if covered != all_queries:
            raise WaveValidationError(f"stage {stage_id}: shards do not cover the query batch")


def run(
    policy: Policy,
    instance: WorkflowInstance,
    config: RunConfig,
    seed: int = 0,
    record_trace: bool = False,
    max_waves: int | None = None,
) -> RunRecord:
    """Simulate one workflow instance under a policy; deterministic throughout."""
    dag = instance.dag
    report = validate_dag(dag, config.topology)
    if not report.ok:
        raise ValueError(f"invalid dag {dag.workflow_id}: {report.violations[:3]}")
    if dag.annotations is None:
        raise ValueError("instance dag must be annotated")

    cost_model = CostModel(config.models, config.topology, config.weights)
    device_ids = config.topology.device_ids
    state = ExecutionState.initial(instance, device_ids, record_trace=record_trace)
    parents = dag.parent_map()
    pool: list[ScheduledTask] = []
    task_seq = 0
    wave_limit = max_waves if max_waves is not None else 4 * len(dag.stages) + 16
    waves = 0

    query_completion: dict[str, float] = {}
    n_tasks = 0
    xdev_edges = 0
    prefix_hits = 0
    same_model = 0

    def issuable_now(task: ScheduledTask) -> bool:
        deps_done = all(p in state.completed for p in parents[task.stage_id])
        return deps_done and state.device_free[task.device_id] <= state.clock + _EPS

    while len(state.completed) < len(dag.stages):
        progressed = False
        planned = False

        if not any(issuable_now(t) for t in pool):
            frontier = ready_set(dag, state.completed, state.running_stages, state.committed)
            if frontier:
                waves += 1
                if waves > wave_limit:
                    raise DeadlockError(
                        f"{dag.workflow_id}: wave limit {wave_limit} exceeded "
                        f"(policy {policy.name} may be cycling)"
                    )
                wave = policy.plan_wave(state.snapshot(), set(frontier), dag, cost_model)
                if wave or not state.running_tasks:
                    # An empty wave is a deferral; it is only legal while work
                    # is in flight, otherwise it would deadlock the run.
                    _validate_wave(wave, frontier, dag, instance, device_ids)
                if wave:
                    by_stage: dict[str, list[ScheduledTask]] = {}
                    for t in wave:
                        by_stage.setdefault(t.stage_id, []).append(t)
                    for stage_id in sorted(by_stage):
                        state.commit_stage(stage_id, len(by_stage[stage_id]))
                    for t in sorted(wave, key=lambda t: (t.stage_id, t.slot)):
                        t.task_id = f"t{task_seq:05d}"
                        t.order_index = task_seq
                        task_seq += 1
                        pool.append(t)
                    progressed = True
                    planned = True

        # Issue in planned order on every free device.
        for device_id in sorted(device_ids):
            if state.device_free[device_id] > state.clock + _EPS:
                continue
            ready_tasks = sorted(
                (t for t in pool if t.device_id == device_id and issuable_now(t)),
                key=lambda t: t.order_index,
            )
            if not ready_tasks:
                continue
            task = ready_tasks[0]
            stage = dag.stages[task.stage_id]
            timing = cost_model.realized_duration(
                stage, [(device_id, task.queries)], state, dag
            )[0]
            task.issue_time = state.clock
            task.finish_time = state.clock + timing.total_s
            n_tasks += 1
            if state.residency.get(device_id) == stage.model:
                same_model += 1
            hit = state.cached_tokens(device_id, stage.shared_prefix_group, stage.model) > 0 or any(
                state.cached_tokens(device_id, state.query(q).prefix_group, stage.model) > 0
                for q in task.queries
            )
            if hit:
                prefix_hits += 1
            for parent_id in parents[task.stage_id]:
                if state.output_device(parent_id) != device_id:
                    xdev_edges += 1
            state.on_task_start(task)
            pool.remove(task)
            progressed = True

        # Stay at the current instant while planning or issuing can still make
        # progress; advancing early would idle devices a whole task duration.
        if planned:
            continue

        if state.running_tasks:
            next_finish = min(t.finish_time for t in state.running_tasks.values())
            batch = sorted(
                (t for t in state.running_tasks.values() if t.finish_time <= next_finish + _EPS),
                key=lambda t: (t.finish_time, t.device_id, t.task_id),
            )
            for t in batch:
                state.on_task_complete(t, t.finish_time)
                for q in t.queries:
                    query_completion[q] = max(query_completion.get(q, 0.0), t.finish_time)
            progressed = True

        if not progressed:
            raise DeadlockError(
                f"{dag.workflow_id}: no issuable task, nothing running, "
                f"{len(dag.stages) - len(state.completed)} stages unfinished "
                f"(pool={[(t.stage_id, t.device_id) for t in pool]})"
            )

    makespan = max(query_completion.values())
    stats: SolverStats = getattr(policy, "solver_stats", None) or SolverStats()
    times = stats.wall_times
    record = RunRecord(
        method=policy.name,
        workflow_id=dag.workflow_id,
        family=dag.family,
        batch_size=instance.batch_size,
        seed=seed,
        makespan=makespan,
        query_completion=dict(sorted(query_completion.items())),
        workflow_tasks=n_tasks,
        cross_device_parent_edges=xdev_edges,
        prefix_cache_hits_est=prefix_hits,
        same_model_continuations=same_model,
        solver_solves=stats.solves,
        solver_optimal=stats.optimal,
        solver_time_mean_s=statistics.fmean(times) if times else 0.0,
        solver_time_p95_s=_p95(times) if times else 0.0,
        solver_time_max_s=max(times) if times else 0.0,
        ablation=config.weights.ablation.label(),
        perturbation=_perturbation_label(config),
        h_value=config.weights.horizon,
        trace=state.trace,
    )
    if abs(record.makespan - max(query_completion.values())) > _EPS:
        raise TransitionError("makespan must equal the max per-query completion")
    return record


def _p95(values: list[float]) -> float:
    ordered = sorted(values)
    import math

    rank = math.ceil(0.95 * len(ordered))
    return ordered[max(0, rank - 1)]


def _perturbation_label(config: RunConfig) -> str:
    w = config.weights
    parts = []
    if w.switch_x != 1.0:
        parts.append(f"switch_x{w.switch_x:g}")
    if w.transfer_x != 1.0:
        parts.append(f"transfer_x{w.transfer_x:g}")
    if w.prefix_x != 1.0:
        parts.append(f"prefix_x{w.prefix_x:g}")
    return "+".join(parts) if parts else "none"
