"""End-to-end and mechanism metrics.

Normalized metrics pair each run with the RoundRobin run of the identical
(workflow, batch size, seed, perturbation) tuple and aggregate with the
geometric mean.  Mechanism rates are pooled ratios: counters and task counts
are summed over instances before dividing.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

BASELINE_METHOD = "roundrobin"


@dataclass(frozen=True)
class MetricRow:
    method: str
    workflow_id: str
    family: str
    batch_size: int
    seed: int
    perturbation: str
    makespan: float
    p95: float
    norm_makespan: float
    norm_p95: float


def p95_latency(values: list[float]) -> float:
    """95th percentile by the nearest-rank method."""
    if not values:
        raise ValueError("p95_latency requires a nonempty input")
    ordered = sorted(values)
    rank = math.ceil(0.95 * len(ordered))
    return ordered[rank - 1]


def geo_mean_normalized(pairs: list[tuple[float, float]]) -> float:
    """exp(mean(log(value / baseline))) over (value, baseline) pairs."""
    if not pairs:
        raise ValueError("geo_mean_normalized requires a nonempty input")
    total = 0.0
    for value, baseline in pairs:
        if value <= 0 or baseline <= 0:
            raise ValueError(f"nonpositive pair ({value}, {baseline})")
        total += math.log(value / baseline)
    return math.exp(total / len(pairs))


def geo_mean(values: list[float]) -> float:
    return geo_mean_normalized([(v, 1.0) for v in values])


def mechanism_rates(rows: list[dict]) -> tuple[float, float, float]:
    """Pooled (xdev_edge, cache_score, model_cont) over a method's rows."""
    tasks = sum(int(r["workflow_tasks"]) for r in rows)
    if tasks <= 0:
        raise ValueError("mechanism_rates requires rows with workflow tasks")
    xdev = sum(int(r["cross_device_parent_edges"]) for r in rows)
    hits = sum(int(r["prefix_cache_hits_est"]) for r in rows)
    cont = sum(int(r["same_model_continuations"]) for r in rows)
    return xdev / tasks, hits / tasks, cont / tasks


def ecdf_points(values: list[float]) -> list[tuple[float, float]]:
    """Sorted unique values with cumulative step fractions."""
    if not values:
        raise ValueError("ecdf_points requires a nonempty input")
    ordered = sorted(values)
    n = len(ordered)
    points = []
    for i, x in enumerate(ordered):
        if i + 1 < n and ordered[i + 1] == x:
            continue
        points.append((x, (i + 1) / n))
    return points


def _pair_key(row: dict) -> tuple:
    return (row["workflow_id"], int(row["batch_size"]), int(row["seed"]), row["perturbation"])


def normalized_rows(rows: list[dict]) -> list[MetricRow]:
    """Attach per-run normalized metrics against the paired RoundRobin run."""
    baselines = {
        _pair_key(r): r for r in rows if r["method"] == BASELINE_METHOD
    }
    out = []
    for r in rows:
        base = baselines.get(_pair_key(r))
        if base is None:
            raise ValueError(
                f"no {BASELINE_METHOD} run paired with "
                f"{r['workflow_id']}/b{r['batch_size']}/s{r['seed']}/{r['perturbation']}"
            )
        out.append(
            MetricRow(
                method=r["method"],
                workflow_id=r["workflow_id"],
                family=r["family"],
                batch_size=int(r["batch_size"]),
                seed=int(r["seed"]),
                perturbation=r["perturbation"],
                makespan=float(r["makespan_s"]),
                p95=float(r["p95_latency_s"]),
                norm_makespan=float(r["makespan_s"]) / float(base["makespan_s"]),
                norm_p95=float(r["p95_latency_s"]) / float(base["p95_latency_s"]),
            )
        )
    return out


def method_summary(metric_rows: list[MetricRow], method: str) -> tuple[float, float]:
    """(geometric-mean normalized makespan, normalized p95) for a method."""
    rows = [m for m in metric_rows if m.method == method]
    if not rows:
        raise ValueError(f"no rows for method {method!r}")
    return (
        geo_mean([m.norm_makespan for m in rows]),
        geo_mean([m.norm_p95 for m in rows]),
    )


def family_breakdown(
    metric_rows: list[MetricRow], methods: list[str]
) -> dict[str, dict[str, float]]:
    """Per-family geometric means over the strict completion intersection.

    An instance key missing under any compared method is excluded from every
    method's aggregate for that family; empty families are omitted.
    """
    by_family: dict[str, list[MetricRow]] = {}
    for m in metric_rows:
        if m.method in methods:
            by_family.setdefault(m.family, []).append(m)
    out: dict[str, dict[str, float]] = {}
    for family in sorted(by_family):
        rows = by_family[family]
        keys_by_method = {
            method: {(m.workflow_id, m.batch_size, m.seed) for m in rows if m.method == method}
            for method in methods
        }
        common = set.intersection(*keys_by_method.values()) if keys_by_method else set()
        if not common:
            continue
        out[family] = {
            method: geo_mean(
                [
                    m.norm_makespan
                    for m in rows
                    if m.method == method and (m.workflow_id, m.batch_size, m.seed) in common
                ]
            )
            for method in methods
        }
    return out
