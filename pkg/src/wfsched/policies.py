"""Scheduling policies: the frontier-planning scheduler and five baselines.

Every policy implements the same wave contract (see ``executor.Policy``) and
is a deterministic function of the state snapshot, frontier and config.  The
baselines deliberately restrict which state signals they read: RoundRobin
sees only readiness and eligibility, the beam-search baseline only base costs
plus a coarse busy/idle bit, KVFlow prefix state with transfer as a tie-break
only, Helix immediate costs without prefix state, HEFT static ranks.
"""

from __future__ import annotations

import statistics
from dataclasses import dataclass

from .costs import CostModel
from .executor import ScheduledTask, partition_shards
from .model import WorkflowDag
from .planner import SolverStats, build_problem, solve_frontier
from .state import ExecutionState


@dataclass(frozen=True)
class BeamConfig:
    beam_width: int = 4
    lookdepth: int = 2

    def __post_init__(self) -> None:
        if self.beam_width < 1:
            raise ValueError("beam_width must be >= 1")


def _all_query_ids(state: ExecutionState) -> tuple[str, ...]:
    return tuple(q.query_id for q in state.instance.queries)


def _mean_base(stage, state: ExecutionState, cost_model: CostModel) -> float:
    devices = sorted(stage.eligible_devices)
    return statistics.fmean(
        cost_model.base_cost(stage, d, state.instance.queries) for d in devices
    )


class FatePolicy:
    """Frontier planning with horizon-aware scores and bounded shard slots."""

    name = "fate"

    def __init__(self, solver_budget_s: float = 0.25) -> None:
        self.solver_budget_s = solver_budget_s
        self.solver_stats = SolverStats()

    def plan_wave(
        self,
        state: ExecutionState,
        frontier: set[str],
        dag: WorkflowDag,
        cost_model: CostModel,
    ) -> list[ScheduledTask]:
        if cost_model.weights.horizon == 0:
            return self._greedy_wave(state, frontier, dag, cost_model)
        problem = build_problem(frontier, state, cost_model, dag)
        solution = solve_frontier(problem, budget_s=self.solver_budget_s)
        self.solver_stats.record(solution)
        selected = self._extend_work_conserving(
            solution.selected, problem, state, dag, cost_model
        )
        if not selected:
            if state.running_tasks:
                return []  # defer: replan when the next completion frees a device
            best = min(
                (c for c in problem.candidates if c.slot == 0),
                key=lambda c: (-c.psi, c.stage_id, c.device_id),
            )
            selected = ((best.stage_id, 0, best.device_id),)
        return self._materialize(selected, state, dag)

    @staticmethod
    def _extend_work_conserving(selected, problem, state, dag, cost_model):
        """Fill idle devices with remaining primary-slot candidates when that
        beats queueing.

        The solver legitimately leaves negative-score stages unassigned.  An
        idle device is filled with the best such stage unless the stage would
        finish earlier by waiting for its preferred device (for example when
        the preferred device holds its cached prefixes or resident model);
        deferred stages are replanned on the next wave.
        """
        queries = _all_query_ids(state)

        def completion(stage_id: str, device_id: str) -> float:
            stage = dag.stages[stage_id]
            timing = cost_model.realized_duration(stage, [(device_id, queries)], state, dag)[0]
            wait = max(0.0, state.device_free.get(device_id, 0.0) - state.clock)
            return wait + timing.total_s

        chosen = list(selected)
        used_devices = {d for (_, _, d) in chosen}
        assigned_stages = {s for (s, _, _) in chosen}
        idle = {
            d
            for d, free in state.device_free.items()
            if free <= state.clock + 1e-12 and d not in used_devices
        }
        while idle:
            pool = [
                c
                for c in problem.candidates
                if c.slot == 0 and c.device_id in idle and c.stage_id not in assigned_stages
            ]
            if not pool:
                break
            best = None
            for c in sorted(pool, key=lambda c: (-c.psi, c.stage_id, c.device_id)):
                stage = dag.stages[c.stage_id]
                best_elsewhere = min(
                    completion(c.stage_id, d) for d in sorted(stage.eligible_devices)
                )
                if completion(c.stage_id, c.device_id) <= best_elsewhere + 1e-9:
                    best = c
                    break
            if best is None:
                break
            chosen.append((best.stage_id, 0, best.device_id))
            idle.discard(best.device_id)
            assigned_stages.add(best.stage_id)
        return tuple(sorted(chosen))

    def _greedy_wave(self, state, frontier, dag, cost_model) -> list[ScheduledTask]:
        # Horizon zero disables the planning path entirely: myopic greedy
        # placement by immediate score, one slot per stage, no sharding.
        scored = []
        for stage_id in sorted(frontier):
            stage = dag.stages[stage_id]
            for device_id in sorted(stage.eligible_devices):
                s = cost_model.sched_score(stage, device_id, state, dag)
                scored.append((-s, stage_id, device_id))
        scored.sort()
        used_devices: set[str] = set()
        placed: dict[str, str] = {}
        for _, stage_id, device_id in scored:
            if stage_id in placed or device_id in used_devices:
                continue
            placed[stage_id] = device_id
            used_devices.add(device_id)
        queries = _all_query_ids(state)
        return [
            ScheduledTask(task_id="", stage_id=s, slot=0, device_id=d, queries=queries)
            for s, d in sorted(placed.items())
        ]

    def _materialize(self, selected, state, dag) -> list[ScheduledTask]:
        queries = _all_query_ids(state)
        by_stage: dict[str, list[tuple[int, str]]] = {}
        for stage_id, slot, device_id in selected:
            by_stage.setdefault(stage_id, []).append((slot, device_id))
        tasks: list[ScheduledTask] = []
        for stage_id in sorted(by_stage):
            stage = dag.stages[stage_id]
            devices = [d for _, d in sorted(by_stage[stage_id])]
            devices = self._align_shards(stage, devices, queries, state)
            for slot, (device_id, shard) in enumerate(partition_shards(stage, devices, queries)):
                tasks.append(
                    ScheduledTask(
                        task_id="",
                        stage_id=stage_id,
                        slot=slot,
                        device_id=device_id,
                        queries=shard,
                    )
                )
        return tasks

    @staticmethod
    def _align_shards(stage, devices, queries, state) -> list:
        """Order shard devices so cached query-prefix groups stay local."""
        if len(devices) != 2:
            return devices
        shards = partition_shards(stage, devices, queries)

        def overlap(query_ids, device_id) -> int:
            total = 0
            for qid in query_ids:
                q = state.query(qid)
                total += min(
                    state.cached_tokens(device_id, q.prefix_group, stage.model),
                    q.prompt_tokens,
                )
            return total

        keep = overlap(shards[0][1], devices[0]) + overlap(shards[1][1], devices[1])
        swap = overlap(shards[0][1], devices[1]) + overlap(shards[1][1], devices[0])
        return [devices[1], devices[0]] if swap > keep else devices


class RoundRobinPolicy:
    """Device rotation under dependency readiness; reads no execution state."""

    name = "roundrobin"

    def __init__(self) -> None:
        self._counter = 0

    def plan_wave(
        self,
        state: ExecutionState,
        frontier: set[str],
        dag: WorkflowDag,
        cost_model: CostModel,
    ) -> list[ScheduledTask]:
        device_ids = cost_model.topo.device_ids
        queries = tuple(q.query_id for q in state.instance.queries)
        used: set[str] = set()
        tasks = []
        for stage_id in sorted(frontier):
            stage = dag.stages[stage_id]
            chosen = None
            for i in range(len(device_ids)):
                d = device_ids[(self._counter + i) % len(device_ids)]
                if d in used or (stage.eligible_devices and d not in stage.eligible_devices):
                    continue
                chosen = d
                self._counter = (self._counter + i + 1) % len(device_ids)
                break
            if chosen is None:
                continue
            used.add(chosen)
            tasks.append(
                ScheduledTask(
                    task_id="", stage_id=stage_id, slot=0, device_id=chosen, queries=queries
                )
            )
        return tasks


class HeftPolicy:
    """Upward-rank priority with earliest-finish device selection."""

    name = "heft"

    def __init__(self) -> None:
        self._rank_cache: dict[int, dict[str, float]] = {}

    def _ranks(self, dag: WorkflowDag, state, cost_model: CostModel) -> dict[str, float]:
        cached = self._rank_cache.get(id(dag))
        if cached is not None:
            return cached
        topo = cost_model.topo
        pairs = [
            (i, j)
            for i in topo.device_ids
            for j in topo.device_ids
            if i != j
        ]
        ranks: dict[str, float] = {}

        def mean_transfer(parent, child) -> float:
            sigma = parent.output_token_proxy * cost_model._role(child).comm_weight / 1000.0
            if not pairs:
                return 0.0
            return statistics.fmean(topo.transfer_coeff(i, j) for i, j in pairs) * sigma

        order = sorted(dag.stages, key=lambda s: -dag.annotations.level[s])
        for stage_id in order:
            stage = dag.stages[stage_id]
            cost = _mean_base(stage, state, cost_model)
            best_child = 0.0
            for child_id in dag.children(stage_id):
                child = dag.stages[child_id]
                best_child = max(best_child, mean_transfer(stage, child) + ranks[child_id])
            ranks[stage_id] = cost + best_child
        self._rank_cache[id(dag)] = ranks
        return ranks

    def plan_wave(self, state, frontier, dag, cost_model) -> list[ScheduledTask]:
        ranks = self._ranks(dag, state, cost_model)
        queries = _all_query_ids(state)
        used: set[str] = set()
        tasks = []
        for stage_id in sorted(frontier, key=lambda s: (-ranks[s], s)):
            stage = dag.stages[stage_id]
            best = None
            for d in sorted(stage.eligible_devices):
                if d in used:
                    continue
                eft = (
                    max(state.device_free.get(d, 0.0), state.clock)
                    + cost_model.switch_cost(stage, d, state)
                    + cost_model.transfer_cost(stage, d, state, dag)
                    + cost_model.base_cost(stage, d, state.instance.queries)
                )
                if best is None or eft < best[0] - 1e-12:
                    best = (eft, d)
            if best is None:
                continue
            used.add(best[1])
            tasks.append(
                ScheduledTask(
                    task_id="", stage_id=stage_id, slot=0, device_id=best[1], queries=queries
                )
            )
        return tasks


class HaloBeamPolicy:
    """Beam search over joint assignments using base costs and busy/idle bits."""

    name = "halo"

    def __init__(self, beam: BeamConfig | None = None) -> None:
        self.beam = beam or BeamConfig()

    def plan_wave(self, state, frontier, dag, cost_model) -> list[ScheduledTask]:
        levels = dag.annotations.level
        frontier_list = sorted(frontier)
        max_front_level = max(levels[s] for s in frontier_list)
        downstream = sorted(
            (
                s
                for s in dag.stages
                if s not in frontier
                and s not in state.completed
                and s not in state.committed
                and s not in state.running_stages
                and levels[s] <= max_front_level + self.beam.lookdepth
            ),
            key=lambda s: (levels[s], s),
        )
        nodes = frontier_list + downstream
        busy_offset = statistics.fmean(
            _mean_base(dag.stages[s], state, cost_model) for s in frontier_list
        )
        load0 = {
            d: 0.0 if state.device_free.get(d, 0.0) <= state.clock + 1e-12 else busy_offset
            for d in cost_model.topo.device_ids
        }
        # Beam item: (objective, assignment tuple, load map, frontier devices used).
        beam = [(0.0, (), load0, frozenset())]
        for node_id in nodes:
            stage = dag.stages[node_id]
            is_frontier = node_id in frontier
            expanded = []
            for obj, assign, load, used in beam:
                placed = False
                for d in sorted(stage.eligible_devices):
                    if is_frontier and d in used:
                        continue
                    new_load = dict(load)
                    new_load[d] += cost_model.base_cost(stage, d, state.instance.queries)
                    new_obj = max(new_load.values())
                    expanded.append(
                        (
                            new_obj,
                            assign + ((node_id, d),),
                            new_load,
                            used | {d} if is_frontier else used,
                        )
                    )
                    placed = True
                if not placed:
                    expanded.append((obj, assign, load, used))
            expanded.sort(key=lambda item: (item[0], item[1]))
            beam = expanded[: self.beam.beam_width]
        best = beam[0]
        queries = _all_query_ids(state)
        tasks = []
        for node_id, d in best[1]:
            if node_id in frontier:
                tasks.append(
                    ScheduledTask(
                        task_id="", stage_id=node_id, slot=0, device_id=d, queries=queries
                    )
                )
        if not tasks:
            # Capacity exhausted in the beam head: fall back to the first
            # frontier stage on its first eligible device.
            stage = dag.stages[frontier_list[0]]
            tasks.append(
                ScheduledTask(
                    task_id="",
                    stage_id=stage.id,
                    slot=0,
                    device_id=sorted(stage.eligible_devices)[0],
                    queries=queries,
                )
            )
        return tasks


class KvflowPolicy:
    """Prefix-priority greedy: cache affinity first, residency and queue next."""

    name = "kvflow"

    def __init__(self) -> None:
        self._desc_cache: dict[tuple[int, str], int] = {}

    def _group_descendants(self, dag: WorkflowDag, stage_id: str) -> int:
        key = (id(dag), stage_id)
        if key in self._desc_cache:
            return self._desc_cache[key]
        group = dag.stages[stage_id].shared_prefix_group
        count = 0
        if group is not None:
            seen = set()
            frontier = [stage_id]
            while frontier:
                nxt = []
                for s in frontier:
                    for c in dag.children(s):
                        if c not in seen:
                            seen.add(c)
                            nxt.append(c)
                frontier = nxt
            count = sum(1 for s in seen if dag.stages[s].shared_prefix_group == group)
        self._desc_cache[key] = count
        return count

    def plan_wave(self, state, frontier, dag, cost_model) -> list[ScheduledTask]:
        queries = _all_query_ids(state)
        device_ids = cost_model.topo.device_ids

        def overlap(stage, d) -> float:
            return cost_model.prefix_overlap_thousands(stage, d, state)

        def stage_key(stage_id: str):
            stage = dag.stages[stage_id]
            has_match = any(overlap(stage, d) > 0 for d in sorted(stage.eligible_devices))
            return (
                0 if has_match else 1,
                -self._group_descendants(dag, stage_id),
                -_mean_base(stage, state, cost_model),
                stage_id,
            )

        used: set[str] = set()
        tasks = []
        for stage_id in sorted(frontier, key=stage_key):
            stage = dag.stages[stage_id]
            best = None
            for d in sorted(stage.eligible_devices):
                if d in used:
                    continue
                key = (
                    -overlap(stage, d),
                    0 if state.residency.get(d) == stage.model else 1,
                    max(state.device_free.get(d, 0.0), state.clock),
                    cost_model.transfer_cost(stage, d, state, dag),  # tie-break only
                    d,
                )
                if best is None or key < best[0]:
                    best = (key, d)
            if best is None:
                continue
            used.add(best[1])
            tasks.append(
                ScheduledTask(
                    task_id="", stage_id=stage_id, slot=0, device_id=best[1], queries=queries
                )
            )
        return tasks


class HelixPolicy:
    """Heterogeneity-aware earliest-finish placement with switch/transfer terms."""

    name = "helix"

    def plan_wave(self, state, frontier, dag, cost_model) -> list[ScheduledTask]:
        queries = _all_query_ids(state)
        used: set[str] = set()
        tasks = []
        ordered = sorted(
            frontier, key=lambda s: (-_mean_base(dag.stages[s], state, cost_model), s)
        )
        for stage_id in ordered:
            stage = dag.stages[stage_id]
            best = None
            for d in sorted(stage.eligible_devices):
                if d in used:
                    continue
                finish = (
                    max(0.0, state.device_free.get(d, 0.0) - state.clock)
                    + cost_model.switch_cost(stage, d, state)
                    + cost_model.transfer_cost(stage, d, state, dag)
                    + cost_model.base_cost(stage, d, state.instance.queries)
                )
                if best is None or finish < best[0] - 1e-12:
                    best = (finish, d)
            if best is None:
                continue
            used.add(best[1])
            tasks.append(
                ScheduledTask(
                    task_id="", stage_id=stage_id, slot=0, device_id=best[1], queries=queries
                )
            )
        return tasks


POLICY_NAMES = ("fate", "roundrobin", "heft", "halo", "kvflow", "helix")


def make_policy(name: str, beam: BeamConfig | None = None, solver_budget_s: float = 0.25):
    if name == "fate":
        return FatePolicy(solver_budget_s=solver_budget_s)
    if name == "roundrobin":
        return RoundRobinPolicy()
    if name == "heft":
        return HeftPolicy()
    if name == "halo":
        return HaloBeamPolicy(beam=beam)
    if name == "kvflow":
        return KvflowPolicy()
    if name == "helix":
        return HelixPolicy()
    raise ValueError(f"unknown policy {name!r}; expected one of {POLICY_NAMES}")
