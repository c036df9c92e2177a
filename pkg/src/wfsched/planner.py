"""Exact solver for the per-wave frontier placement problem.

Maximizes the summed placement score over binary (stage, slot, device)
assignments subject to four constraint families: at most one assignment per
device per wave (C1), at most one device per slot (C2), slots enabled
monotonically (C3), eligibility (C4).  Waves are small, so a memoized search
over device subsets solves them exactly; a wall-time budget guards the
pathological case and falls back to a greedy selection flagged non-optimal.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import NamedTuple

from .costs import CostModel
from .model import WorkflowDag
from .state import ExecutionState


class Candidate(NamedTuple):
    stage_id: str
    slot: int
    device_id: str
    psi: float


@dataclass(frozen=True)
class FrontierProblem:
    candidates: tuple[Candidate, ...]
    shard_bounds: dict[str, int]
    device_ids: tuple[str, ...]

    def __post_init__(self) -> None:
        seen = set()
        devices = set(self.device_ids)
        for c in self.candidates:
            if c.stage_id not in self.shard_bounds:
                raise ValueError(f"candidate references unknown stage {c.stage_id}")
            if c.device_id not in devices:
                raise ValueError(f"candidate references unknown device {c.device_id}")
            if not (0 <= c.slot < self.shard_bounds[c.stage_id]):
                raise ValueError(f"candidate slot {c.slot} out of range for {c.stage_id}")
            key = (c.stage_id, c.slot, c.device_id)
            if key in seen:
                raise ValueError(f"duplicate candidate {key}")
            seen.add(key)


@dataclass(frozen=True)
class FrontierSolution:
    selected: tuple[tuple[str, int, str], ...]
    objective: float
    optimal: bool
    wall_time: float
    nodes_explored: int


@dataclass
class SolverStats:
    """Aggregated per-run solve statistics."""

    solves: int = 0
    optimal: int = 0
    wall_times: list[float] = field(default_factory=list)

    def record(self, solution: FrontierSolution) -> None:
        self.solves += 1
        if solution.optimal:
            self.optimal += 1
        self.wall_times.append(solution.wall_time)


def build_problem(
    frontier: set[str],
    state: ExecutionState,
    cost_model: CostModel,
    dag: WorkflowDag,
) -> FrontierProblem:
    """One candidate per (stage, slot, device); negative scores retained."""
    candidates: list[Candidate] = []
    bounds: dict[str, int] = {}
    no_shard = cost_model.weights.ablation.no_shard
    for stage_id in sorted(frontier):
        stage = dag.stages[stage_id]
        eligible = sorted(stage.eligible_devices)
        bound = 1 if no_shard else min(stage.shard_bound, len(eligible))
        bounds[stage_id] = bound
        for slot in range(bound):
            for device_id in eligible:
                psi = cost_model.plan_score(stage, slot, device_id, state, dag)
                candidates.append(Candidate(stage_id, slot, device_id, psi))
    return FrontierProblem(
        candidates=tuple(candidates),
        shard_bounds=bounds,
        device_ids=cost_model.topo.device_ids,
    )


def _stage_options(
    problem: FrontierProblem, device_bit: dict[str, int]
) -> list[tuple[str, list[tuple[float, int, tuple[tuple[str, int, str], ...]]]]]:
    """Per stage, all C2/C3-valid slot->device sequences worth considering.

    An option whose trailing slots sum to a negative score is dominated by its
    truncation (strictly better objective, fewer devices used), so only
    suffix-nonnegative options are enumerated.
    """
    by_stage: dict[str, dict[int, list[tuple[str, float]]]] = {}
    for c in problem.candidates:
        by_stage.setdefault(c.stage_id, {}).setdefault(c.slot, []).append((c.device_id, c.psi))
    result = []
    for stage_id in sorted(by_stage):
        slot_map = by_stage[stage_id]
        options: list[tuple[float, int, tuple[tuple[str, int, str], ...]]] = []

        def extend(slot: int, value: float, mask: int, triples: tuple) -> None:
            options.append((value, mask, triples))
            if slot not in slot_map:
                return
            for device_id, psi in sorted(slot_map[slot]):
                bit = 1 << device_bit[device_id]
                if mask & bit:
                    continue
                extend(slot + 1, value + psi, mask | bit, triples + ((stage_id, slot, device_id),))

        extend(0, 0.0, 0, ())
        kept = [
            opt
            for opt in options
            if opt[2] and all(
                opt[0] - pv >= 0.0
                for pv in _prefix_values(opt[2], by_stage[stage_id])
            )
        ]
        kept.sort(key=lambda o: o[2])
        result.append((stage_id, kept))
    return result


def _prefix_values(triples: tuple, slot_map: dict[int, list[tuple[str, float]]]) -> list[float]:
    psis = []
    for stage_id, slot, device_id in triples:
        psi = next(p for d, p in slot_map[slot] if d == device_id)
        psis.append(psi)
    return [sum(psis[:i]) for i in range(len(psis))]


def solve_frontier(problem: FrontierProblem, budget_s: float = 0.25) -> FrontierSolution:
    """Provably optimal selection with deterministic tie-breaking.

    Ties on the objective are broken toward the lexicographically smallest
    selection tuple of sorted (stage id, slot, device id) triples.
    """
    if not problem.candidates:
        raise ValueError("solve_frontier requires a nonempty problem")
    t0 = time.perf_counter()
    device_bit = {d: i for i, d in enumerate(sorted(set(problem.device_ids)))}
    stage_options = _stage_options(problem, device_bit)
    n = len(stage_options)

    # Optimistic per-suffix bound: best option value per stage, conflicts ignored.
    suffix_best = [0.0] * (n + 1)
    for i in range(n - 1, -1, -1):
        best_here = max((opt[0] for opt in stage_options[i][1]), default=0.0)
        suffix_best[i] = suffix_best[i + 1] + max(0.0, best_here)

    memo: dict[tuple[int, int], tuple[float, tuple]] = {}
    nodes = 0
    deadline = t0 + budget_s

    class _Timeout(Exception):
        pass

    def best(i: int, mask: int) -> tuple[float, tuple]:
        nonlocal nodes
        nodes += 1
        if i == n:
            return 0.0, ()
        if suffix_best[i] <= 0.0:
            return 0.0, ()
        key = (i, mask)
        hit = memo.get(key)
        if hit is not None:
            return hit
        if time.perf_counter() > deadline:
            raise _Timeout
        best_val, best_sel = best(i + 1, mask)  # skipping this stage is always feasible
        for value, opt_mask, triples in stage_options[i][1]:
            if opt_mask & mask:
                continue
            sub_val, sub_sel = best(i + 1, mask | opt_mask)
            total = value + sub_val
            sel = triples + sub_sel
            if total > best_val or (total == best_val and sel < best_sel):
                best_val, best_sel = total, sel
        memo[key] = (best_val, best_sel)
        return best_val, best_sel

    try:
        objective, selection = best(0, 0)
        optimal = True
    except _Timeout:
        objective, selection = _greedy_fallback(stage_options)
        optimal = False
    wall = time.perf_counter() - t0
    return FrontierSolution(
        selected=tuple(sorted(selection)),
        objective=objective,
        optimal=optimal,
        wall_time=wall,
        nodes_explored=nodes,
    )


def _greedy_fallback(stage_options) -> tuple[float, tuple]:
    """Deadline fallback: stages by best option value, first-fit devices."""
    ranked = sorted(
        (so for so in stage_options),
        key=lambda so: (-max((o[0] for o in so[1]), default=0.0), so[0]),
    )
    used_mask = 0
    total = 0.0
    selection: tuple = ()
    for _, options in ranked:
        feasible = [o for o in options if o[0] > 0 and not (o[1] & used_mask)]
        if not feasible:
            continue
        value, mask, triples = sorted(feasible, key=lambda o: (-o[0], o[2]))[0]
        used_mask |= mask
        total += value
        selection = selection + triples
    return total, tuple(sorted(selection))


def check_constraints(problem: FrontierProblem, selection: tuple) -> list[str]:
    """Return violations of C1-C4 for a selection; empty when feasible."""
    violations = []
    per_device: dict[str, int] = {}
    per_slot: dict[tuple[str, int], int] = {}
    slots_by_stage: dict[str, set[int]] = {}
    allowed = {(c.stage_id, c.slot, c.device_id) for c in problem.candidates}
    for stage_id, slot, device_id in selection:
        per_device[device_id] = per_device.get(device_id, 0) + 1
        per_slot[(stage_id, slot)] = per_slot.get((stage_id, slot), 0) + 1
        slots_by_stage.setdefault(stage_id, set()).add(slot)
        if (stage_id, slot, device_id) not in allowed:
            violations.append(f"C4: {(stage_id, slot, device_id)} not an eligible candidate")
    for device_id, count in sorted(per_device.items()):
        if count > 1:
            violations.append(f"C1: device {device_id} assigned {count} slots")
    for key, count in sorted(per_slot.items()):
        if count > 1:
            violations.append(f"C2: slot {key} assigned {count} devices")
    for stage_id, slots in sorted(slots_by_stage.items()):
        for k in slots:
            if k > 0 and (k - 1) not in slots:
                violations.append(f"C3: stage {stage_id} enables slot {k} without slot {k - 1}")
    return violations
