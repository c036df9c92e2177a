"""Execution state: residency, prefix store, output locality, device clocks.

One simulation run owns a single mutable :class:`ExecutionState` and drives it
through ``commit_stage`` -> ``on_task_start`` -> ``on_task_complete``
transitions.  Planning works on :meth:`ExecutionState.snapshot` copies, which
never alias the live containers.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import TYPE_CHECKING

from .model import Query, WorkflowInstance

if TYPE_CHECKING:  # pragma: no cover - typing only
    from .executor import ScheduledTask

_EPS = 1e-9


class TransitionError(RuntimeError):
    """A scheduling invariant was violated; indicates a policy or executor bug."""


@dataclass
class PrefixEntry:
    """One cached prefix group on a device."""

    group: str
    tokens: int
    model: str  # model the entry was produced under
    sticky: bool = False  # produced by a keep_cache stage; survives one switch
    survived_switch: bool = False


@dataclass
class _StageProgress:
    total_slots: int
    finished: list[tuple[str, tuple[str, ...]]] = field(default_factory=list)
    open_tasks: set[str] = field(default_factory=set)
    issued: int = 0


@dataclass(eq=False)
class ExecutionState:
    instance: WorkflowInstance
    residency: dict[str, str | None] = field(default_factory=dict)
    prefix_store: dict[str, dict[str, PrefixEntry]] = field(default_factory=dict)
    parent_loc: dict[str, tuple[tuple[str, tuple[str, ...]], ...]] = field(default_factory=dict)
    device_free: dict[str, float] = field(default_factory=dict)
    completed: set[str] = field(default_factory=set)
    committed: set[str] = field(default_factory=set)
    clock: float = 0.0
    running_tasks: dict[str, "ScheduledTask"] = field(default_factory=dict)
    progress: dict[str, _StageProgress] = field(default_factory=dict)
    trace: list[dict] | None = None

    @staticmethod
    def initial(
        instance: WorkflowInstance, device_ids: tuple[str, ...], record_trace: bool = False
    ) -> "ExecutionState":
        return ExecutionState(
            instance=instance,
            residency={d: None for d in device_ids},
            prefix_store={d: {} for d in device_ids},
            device_free={d: 0.0 for d in device_ids},
            trace=[] if record_trace else None,
        )

    # -- queries ------------------------------------------------------------

    def query(self, query_id: str) -> Query:
        for q in self.instance.queries:
            if q.query_id == query_id:
                return q
        raise KeyError(query_id)

    def group_tokens(self, group: str, fallback: int) -> int:
        """Shared token count of a query prefix group.

        When the instance does not carry an explicit group length the whole
        prompt is treated as shared.
        """
        return int(self.instance.prefix_groups.get(group, fallback))

    # -- derived views -------------------------------------------------------

    @property
    def running_stages(self) -> set[str]:
        return {t.stage_id for t in self.running_tasks.values()}

    def output_shards(self, stage_id: str) -> tuple[tuple[str, tuple[str, ...]], ...]:
        return self.parent_loc.get(stage_id, ())

    def output_device(self, stage_id: str) -> str | None:
        """Device holding the completed output of a stage.

        Sharded stages report the device holding the plurality of the output
        queries (ties broken by device id).
        """
        shards = self.parent_loc.get(stage_id)
        if not shards:
            return None
        counts: dict[str, int] = {}
        for device_id, query_ids in shards:
            counts[device_id] = counts.get(device_id, 0) + len(query_ids)
        return min(counts, key=lambda d: (-counts[d], d))

    def cached_tokens(self, device_id: str, group: str | None, model: str | None = None) -> int:
        """Reusable cached tokens of a group on a device.

        Prefix state is model-specific: when ``model`` is given, entries
        produced under a different model do not count.
        """
        if group is None:
            return 0
        entry = self.prefix_store.get(device_id, {}).get(group)
        if entry is None:
            return 0
        if model is not None and entry.model != model:
            return 0
        return entry.tokens

    def prefix_groups_on(self, device_id: str) -> set[tuple[str, int]]:
        return {(e.group, e.tokens) for e in self.prefix_store.get(device_id, {}).values()}

    # -- transitions ----------------------------------------------------------

    def commit_stage(self, stage_id: str, total_slots: int) -> None:
        if stage_id in self.completed or stage_id in self.committed:
            raise TransitionError(f"stage {stage_id} committed twice")
        self.committed.add(stage_id)
        self.progress[stage_id] = _StageProgress(total_slots=total_slots)
        self._emit("commit", stage=stage_id, slots=total_slots)

    def on_task_start(self, task: "ScheduledTask") -> None:
        device = task.device_id
        stage = self.instance.dag.stages[task.stage_id]
        if task.issue_time is None or task.finish_time is None:
            raise TransitionError(f"task {task.task_id} issued without timing")
        if self.device_free[device] > task.issue_time + _EPS:
            raise TransitionError(
                f"device {device} busy until {self.device_free[device]}, "
                f"task {task.task_id} starts at {task.issue_time}"
            )
        prog = self.progress.get(task.stage_id)
        if prog is None:
            raise TransitionError(f"stage {task.stage_id} was never committed")

        new_model = stage.model
        if new_model is not None and self.residency.get(device) != new_model:
            self._evict_on_switch(device, new_model)
            self.residency[device] = new_model
        self.device_free[device] = task.finish_time
        if prog.issued == 0:
            self.committed.discard(task.stage_id)
        prog.issued += 1
        prog.open_tasks.add(task.task_id)
        self.running_tasks[task.task_id] = task
        self._emit(
            "start",
            task=task.task_id,
            stage=task.stage_id,
            device=device,
            t=task.issue_time,
            finish=task.finish_time,
        )

    def on_task_complete(self, task: "ScheduledTask", finish: float) -> None:
        if task.task_id not in self.running_tasks:
            raise TransitionError(f"unknown running task {task.task_id}")
        if finish < self.clock - _EPS:
            raise TransitionError(f"completion at {finish} precedes clock {self.clock}")
        self.clock = max(self.clock, finish)
        del self.running_tasks[task.task_id]
        prog = self.progress[task.stage_id]
        prog.open_tasks.discard(task.task_id)
        prog.finished.append((task.device_id, tuple(task.queries)))
        self._seed_prefixes(task)
        if len(prog.finished) == prog.total_slots:
            self.completed.add(task.stage_id)
            self.parent_loc[task.stage_id] = tuple(sorted(prog.finished))
        self._emit("complete", task=task.task_id, stage=task.stage_id, t=finish)

    def snapshot(self) -> "ExecutionState":
        """Deep value copy sharing only the immutable instance."""
        copy = ExecutionState(
            instance=self.instance,
            residency=dict(self.residency),
            prefix_store={
                d: {g: PrefixEntry(e.group, e.tokens, e.model, e.sticky, e.survived_switch)
                    for g, e in entries.items()}
                for d, entries in self.prefix_store.items()
            },
            parent_loc=dict(self.parent_loc),
            device_free=dict(self.device_free),
            completed=set(self.completed),
            committed=set(self.committed),
            clock=self.clock,
            running_tasks=dict(self.running_tasks),
            progress={
                s: _StageProgress(p.total_slots, list(p.finished), set(p.open_tasks), p.issued)
                for s, p in self.progress.items()
            },
            trace=None,
        )
        return copy

    def value_equal(self, other: "ExecutionState") -> bool:
        return (
            self.residency == other.residency
            and {d: self.prefix_groups_on(d) for d in self.prefix_store}
            == {d: other.prefix_groups_on(d) for d in other.prefix_store}
            and self.parent_loc == other.parent_loc
            and self.device_free == other.device_free
            and self.completed == other.completed
            and self.committed == other.committed
            and abs(self.clock - other.clock) < _EPS
        )

    # -- internals -------------------------------------------------------------

    def _evict_on_switch(self, device: str, new_model: str) -> None:
        entries = self.prefix_store[device]
        for group in sorted(entries):
            entry = entries[group]
            if entry.model == new_model:
                entry.survived_switch = False
                continue
            if entry.sticky and not entry.survived_switch:
                entry.survived_switch = True
            else:
                del entries[group]

    def _seed_prefixes(self, task: "ScheduledTask") -> None:
        stage = self.instance.dag.stages[task.stage_id]
        device = task.device_id
        model = stage.model or ""
        entries = self.prefix_store[device]
        if stage.keep_cache and stage.shared_prefix_group is not None:
            self._merge_entry(
                entries,
                PrefixEntry(
                    group=stage.shared_prefix_group,
                    tokens=stage.prompt_token_proxy,
                    model=model,
                    sticky=True,
                ),
            )
        for query_id in task.queries:
            q = self.query(query_id)
            if q.prefix_group is None:
                continue
            tokens = self.group_tokens(q.prefix_group, q.prompt_tokens)
            self._merge_entry(
                entries,
                PrefixEntry(
                    group=q.prefix_group, tokens=tokens, model=model, sticky=stage.keep_cache
                ),
            )

    @staticmethod
    def _merge_entry(entries: dict[str, PrefixEntry], new: PrefixEntry) -> None:
        old = entries.get(new.group)
        if old is None:
            entries[new.group] = new
            return
        old.tokens = max(old.tokens, new.tokens)
        old.model = new.model
        old.sticky = old.sticky or new.sticky
        old.survived_switch = False

    def _emit(self, kind: str, **fields: object) -> None:
        if self.trace is not None:
            self.trace.append({"event": kind, "clock": round(self.clock, 9), **fields})
