"""Built-in verification: solver-vs-oracle equality and metric formula checks.

The ``verify`` CLI subcommand runs these so a fresh checkout can prove the
planner's optimality contract and the metric formulas without the test suite.
"""

from __future__ import annotations

import itertools
import random
import time

from .metrics import geo_mean_normalized, mechanism_rates, p95_latency
from .planner import Candidate, FrontierProblem, check_constraints, solve_frontier


def random_problem(rng: random.Random, max_stages: int = 5, max_devices: int = 4,
                   max_shards: int = 2) -> FrontierProblem:
    n_stages = rng.randint(1, max_stages)
    n_devices = rng.randint(1, max_devices)
    devices = tuple(f"d{i}" for i in range(n_devices))
    candidates = []
    bounds = {}
    for s in range(n_stages):
        stage_id = f"v{s}"
        bound = rng.randint(1, max_shards)
        bounds[stage_id] = bound
        eligible = rng.sample(devices, rng.randint(1, n_devices))
        for slot in range(bound):
            for d in sorted(eligible):
                candidates.append(Candidate(stage_id, slot, d, round(rng.uniform(-10, 10), 4)))
    return FrontierProblem(candidates=tuple(candidates), shard_bounds=bounds,
                           device_ids=devices)


def enumerate_optimum(problem: FrontierProblem) -> float:
    """Exhaustive maximum over all selections satisfying the four constraint
    families; exponential, for verification only."""
    psi = {(c.stage_id, c.slot, c.device_id): c.psi for c in problem.candidates}
    stages = sorted({c.stage_id for c in problem.candidates})
    by_stage: dict[str, dict[int, list[str]]] = {s: {} for s in stages}
    for c in problem.candidates:
        by_stage[c.stage_id].setdefault(c.slot, []).append(c.device_id)

    def stage_assignments(stage_id: str):
        # All C2/C3-valid device sequences for the stage, including none.
        yield ()
        slot_devices = by_stage[stage_id]
        max_slots = problem.shard_bounds[stage_id]
        for length in range(1, max_slots + 1):
            if any(k not in slot_devices for k in range(length)):
                break
            pools = [slot_devices[k] for k in range(length)]
            for combo in itertools.product(*pools):
                if len(set(combo)) == length:
                    yield tuple((stage_id, k, d) for k, d in enumerate(combo))

    best = 0.0

    def recurse(i: int, used: frozenset, value: float) -> None:
        nonlocal best
        if i == len(stages):
            best = max(best, value)
            return
        for assignment in stage_assignments(stages[i]):
            devs = {d for (_, _, d) in assignment}
            if len(devs & used) == 0:
                recurse(i + 1, used | devs, value + sum(psi[t] for t in assignment))

    recurse(0, frozenset(), 0.0)
    return best


def verify_solver(n_problems: int = 200, seed: int = 7, echo=print) -> bool:
    rng = random.Random(seed)
    t0 = time.perf_counter()
    worst_gap = 0.0
    for i in range(n_problems):
        problem = random_problem(rng)
        solution = solve_frontier(problem)
        oracle = enumerate_optimum(problem)
        violations = check_constraints(problem, solution.selected)
        gap = abs(solution.objective - oracle)
        worst_gap = max(worst_gap, gap)
        if gap > 1e-9 or violations or not solution.optimal:
            echo(f"FAIL problem {i}: objective {solution.objective} vs oracle {oracle}, "
                 f"violations {violations}")
            return False
    elapsed = time.perf_counter() - t0
    echo(f"solver oracle: {n_problems} problems optimal, worst gap {worst_gap:.2e}, "
         f"{elapsed:.2f}s")
    return True


def verify_metrics(echo=print) -> bool:
    checks = [
        ("geomean {0.5,2.0} == 1", abs(geo_mean_normalized([(0.5, 1.0), (2.0, 1.0)]) - 1.0) < 1e-12),
        ("geomean self-normalization == 1",
         geo_mean_normalized([(3.7, 3.7), (12.0, 12.0)]) == 1.0),
        ("pooled rate (2+12)/(10+30) == 0.35",
         mechanism_rates([
             {"workflow_tasks": 10, "cross_device_parent_edges": 2,
              "prefix_cache_hits_est": 0, "same_model_continuations": 0},
             {"workflow_tasks": 30, "cross_device_parent_edges": 12,
              "prefix_cache_hits_est": 0, "same_model_continuations": 0},
         ])[0] == 0.35),
        ("nearest-rank p95 of 1..20 == 19",
         p95_latency([float(i) for i in range(1, 21)]) == 19.0),
    ]
    ok = True
    for label, passed in checks:
        echo(f"{'PASS' if passed else 'FAIL'} {label}")
        ok = ok and passed
    return ok
