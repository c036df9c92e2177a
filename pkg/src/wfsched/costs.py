"""State-conditional cost estimation and candidate scoring.

All scheduling policies price work through one :class:`CostModel`: the six
score terms, the corrected cost, the scheduling score, the horizon-aware
planning score and the realized simulated duration of a placed task all live
here so that planner and executor measure with the same ruler.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .config import ScoreWeights
from .model import DeviceTopology, ModelProfile, Query, Stage, StageRole, WorkflowDag
from .state import ExecutionState

COST_FLOOR = 1e-6

_NEUTRAL_ROLE = StageRole(kind="worker")


@dataclass(frozen=True)
class CostBreakdown:
    base: float
    wait: float
    switch: float
    transfer: float
    colo: float
    prefix: float
    parallel: float
    corrected_total: float


@dataclass(frozen=True)
class ShardTiming:
    device_id: str
    queries: tuple[str, ...]
    switch_s: float
    transfer_s: float
    compute_s: float

    @property
    def total_s(self) -> float:
        return self.switch_s + self.transfer_s + self.compute_s


@dataclass(frozen=True, eq=False)
class CostModel:
    models: dict[str, ModelProfile]
    topo: DeviceTopology
    weights: ScoreWeights
    _desc_cache: dict = field(default_factory=dict, repr=False)

    # -- profiles -------------------------------------------------------------

    def profile(self, alias: str | None) -> ModelProfile | None:
        if alias is None:
            return None
        try:
            return self.models[alias]
        except KeyError:
            raise KeyError(f"model alias {alias!r} not in catalog") from None

    @staticmethod
    def _role(stage: Stage) -> StageRole:
        return stage.role if stage.role is not None else _NEUTRAL_ROLE

    # -- primitive costs -------------------------------------------------------

    def query_compute(
        self, stage: Stage, device_id: str, query: Query, state: ExecutionState | None
    ) -> float:
        """Compute seconds for one query of this stage on a device.

        Cached prefix overlap on the device reduces the prefill component:
        the query's own prefix group always counts; the stage-level shared
        group counts only when the stage opts into cache reuse.
        """
        role = self._role(stage)
        prof = self.profile(stage.model)
        prefill_coeff = prof.prefill_coeff if prof else 1.0
        decode_coeff = prof.decode_coeff if prof else 0.0
        stage_part = stage.prompt_token_proxy
        query_part = query.prompt_tokens
        if state is not None:
            if stage.cache_reuse and stage.shared_prefix_group is not None:
                cached = state.cached_tokens(device_id, stage.shared_prefix_group, stage.model)
                stage_part = max(0, stage_part - cached)
            if query.prefix_group is not None:
                cached = state.cached_tokens(device_id, query.prefix_group, stage.model)
                query_part = max(0, query_part - cached)
        prefill = (stage_part + query_part) / 1000.0 * prefill_coeff * role.prefill_scale
        decode = stage.output_token_proxy * decode_coeff * role.decode_scale
        return (prefill + decode) * role.complexity / self.topo.speed_factor(device_id)

    def base_cost(self, stage: Stage, device_id: str, queries: tuple[Query, ...]) -> float:
        """Nominal stage runtime on a device: full batch, no state corrections."""
        if stage.base_cost_override is not None and device_id in stage.base_cost_override:
            return float(stage.base_cost_override[device_id])
        return sum(self.query_compute(stage, device_id, q, None) for q in queries)

    def _mean_base(self, stage: Stage, state: ExecutionState) -> float:
        devices = sorted(stage.eligible_devices) or list(self.topo.device_ids)
        total = sum(self.base_cost(stage, d, state.instance.queries) for d in devices)
        return total / len(devices)

    def switch_cost(self, stage: Stage, device_id: str, state: ExecutionState) -> float:
        prof = self.profile(stage.model)
        if prof is None or state.residency.get(device_id) == stage.model:
            return 0.0
        return prof.switch_penalty * self.weights.switch_x

    def transfer_cost(
        self, stage: Stage, device_id: str, state: ExecutionState, dag: WorkflowDag
    ) -> float:
        total = 0.0
        role = self._role(stage)
        for parent_id in dag.parents(stage.id):
            loc = state.output_device(parent_id)
            if loc is None or loc == device_id:
                continue
            parent = dag.stages[parent_id]
            sigma = parent.output_token_proxy * role.comm_weight / 1000.0
            total += self.topo.transfer_coeff(loc, device_id) * sigma
        return total * self.weights.transfer_x

    def prefix_overlap_thousands(
        self, stage: Stage, device_id: str, state: ExecutionState
    ) -> float:
        """Reusable cached tokens (in thousands) aligned with this device.

        Query-group overlap totals over the batch (those savings are concrete
        workload structure); stage-group overlap counts once per stage, since
        the producer's cached span may only partially align with this stage.
        """
        tokens = 0.0
        if stage.cache_reuse and stage.shared_prefix_group is not None:
            cached = state.cached_tokens(device_id, stage.shared_prefix_group, stage.model)
            tokens += min(cached, stage.prompt_token_proxy)
        for q in state.instance.queries:
            if q.prefix_group is None:
                continue
            cached = state.cached_tokens(device_id, q.prefix_group, stage.model)
            tokens += min(cached, q.prompt_tokens)
        return tokens / 1000.0

    # -- score terms -------------------------------------------------------------

    def score_terms(
        self, stage: Stage, device_id: str, state: ExecutionState, dag: WorkflowDag
    ) -> CostBreakdown:
        if device_id not in stage.eligible_devices:
            raise ValueError(f"device {device_id} not eligible for stage {stage.id}")
        w = self.weights
        queries = state.instance.queries
        base = self.base_cost(stage, device_id, queries)
        wait = max(0.0, state.device_free.get(device_id, 0.0) - state.clock)
        switch = self.switch_cost(stage, device_id, state)
        transfer = self.transfer_cost(stage, device_id, state, dag)
        parent_ids = dag.parents(stage.id)
        if parent_ids:
            colocated = sum(1 for p in parent_ids if state.output_device(p) == device_id)
            colo = colocated / len(parent_ids)
        else:
            colo = 0.0
        prefix = w.kappa_prefix * self.prefix_overlap_thousands(stage, device_id, state) * w.prefix_x
        parallel = self._parallel_benefit(stage, device_id, state, dag)
        locality_benefit = w.locality_coeff * colo * base
        corrected = base + switch + transfer - prefix - locality_benefit - parallel
        return CostBreakdown(
            base=base,
            wait=wait,
            switch=switch,
            transfer=transfer,
            colo=colo,
            prefix=prefix,
            parallel=parallel,
            corrected_total=max(COST_FLOOR, corrected),
        )

    def _parallel_benefit(
        self, stage: Stage, device_id: str, state: ExecutionState, dag: WorkflowDag
    ) -> float:
        """Estimated finish-time reduction from sharding onto idle devices."""
        if stage.shard_bound <= 1 or self.weights.ablation.no_shard:
            return 0.0
        idle_others = [
            d
            for d in sorted(stage.eligible_devices)
            if d != device_id and state.device_free.get(d, 0.0) <= state.clock + 1e-12
        ]
        k = min(stage.shard_bound, 1 + len(idle_others))
        if k <= 1:
            return 0.0
        queries = state.instance.queries
        full = self.realized_duration(stage, [(device_id, tuple(q.query_id for q in queries))], state)
        devices = [device_id] + idle_others[: k - 1]
        split = _even_split(tuple(q.query_id for q in queries), devices)
        shards = self.realized_duration(stage, split, state)
        overhead = self.weights.shard_overhead_frac * full[0].compute_s * (k - 1)
        return max(0.0, full[0].total_s - max(s.total_s for s in shards) - overhead)

    # -- corrected cost and scores ------------------------------------------------

    def corrected_cost(
        self, stage: Stage, device_id: str, state: ExecutionState, dag: WorkflowDag
    ) -> float:
        return self.score_terms(stage, device_id, state, dag).corrected_total

    def sched_score(
        self,
        stage: Stage,
        device_id: str,
        state: ExecutionState,
        dag: WorkflowDag,
        terms: CostBreakdown | None = None,
    ) -> float:
        w = self.weights
        t = terms if terms is not None else self.score_terms(stage, device_id, state, dag)
        transfer = 0.0 if w.ablation.no_locality else t.transfer
        colo = 0.0 if w.ablation.no_locality else t.colo
        prefix = 0.0 if w.ablation.no_prefix else t.prefix
        parallel = 0.0 if w.ablation.no_shard else t.parallel
        return (
            -w.lambda_q * t.wait
            - w.lambda_s * t.switch * w.state_scale
            - w.lambda_tr * transfer * w.locality_scale
            + w.lambda_c * colo * w.locality_scale
            + w.lambda_p * prefix * w.prefix_scale
            + w.lambda_r * parallel
        )

    def plan_score(
        self,
        stage: Stage,
        slot: int,
        device_id: str,
        state: ExecutionState,
        dag: WorkflowDag,
    ) -> float:
        """Frontier-planning score: immediate quality plus discounted tail."""
        if slot >= stage.shard_bound:
            raise ValueError(f"slot {slot} exceeds shard bound of stage {stage.id}")
        if slot == 0:
            score = self.sched_score(stage, device_id, state, dag)
            return score + self.tail_value(stage, device_id, state, dag)
        return self._marginal_shard_score(stage, slot, device_id, state, dag)

    def _marginal_shard_score(
        self, stage: Stage, slot: int, device_id: str, state: ExecutionState, dag: WorkflowDag
    ) -> float:
        w = self.weights

        # State-aware compute anchored on the stage's best device: a shard on
        # a cache-cold device can be slower than not sharding at all.
        def aware(d: str) -> float:
            return sum(self.query_compute(stage, d, q, state) for q in state.instance.queries)

        base_best = min(aware(d) for d in sorted(stage.eligible_devices))
        here = aware(device_id)
        reduction = base_best / slot - max(base_best, here) / (slot + 1)
        overhead = w.shard_overhead_frac * base_best
        wait = max(0.0, state.device_free.get(device_id, 0.0) - state.clock)
        switch = self.switch_cost(stage, device_id, state)
        transfer = 0.0 if w.ablation.no_locality else self.transfer_cost(stage, device_id, state, dag)
        # Sharding splits the stage output across devices; children of the
        # stage will pay a transfer from the minority shard.
        split_penalty = 0.0
        if not w.ablation.no_locality:
            for child_id in dag.children(stage.id):
                child_role = self._role(dag.stages[child_id])
                sigma = stage.output_token_proxy * child_role.comm_weight / 1000.0
                split_penalty += 0.5 * self.topo.default_transfer_coeff * sigma * w.transfer_x
        return (
            w.lambda_r * (reduction - overhead)
            - w.lambda_q * wait
            - w.lambda_s * switch * w.state_scale
            - w.lambda_tr * (transfer + split_penalty) * w.locality_scale
        )

    def tail_value(
        self, stage: Stage, device_id: str, state: ExecutionState, dag: WorkflowDag
    ) -> float:
        """Discounted downstream alignment estimate over the planning horizon.

        This is the single replacement point for the tail heuristic: per
        downstream level it credits same-model continuation and prefix
        alignment and charges expected transfers from already-placed parents.
        """
        w = self.weights
        horizon = w.effective_horizon()
        if horizon <= 1:
            return 0.0
        by_level = self._descendants_by_level(dag, stage.id)
        total = 0.0
        for level_offset in range(1, horizon):
            bucket = by_level.get(level_offset)
            if not bucket:
                continue
            # Downstream demand: stages feeding heavy near-future work are
            # worth scheduling early; the heaviest descendant at the level
            # approximates the critical path through this stage.
            demand = max(self._mean_base(dag.stages[d], state) for d in bucket)
            # Per-level alignment is the mean over the level's descendants so
            # the tail stays bounded at the scale of single-stage costs and
            # cannot swamp the immediate terms on wide graphs.
            affinity = 0.0
            resident = state.residency.get(device_id)
            displaces = resident is not None and resident != stage.model
            for desc_id in bucket:
                desc = dag.stages[desc_id]
                if not w.ablation.no_same_model and desc.model is not None:
                    if desc.model == stage.model:
                        prof = self.profile(desc.model)
                        affinity += (
                            w.lambda_s * prof.switch_penalty * w.switch_x * w.state_scale
                        )
                    elif displaces and desc.model == resident:
                        # This placement evicts a residency that a descendant
                        # would have continued; count the switch it re-incurs.
                        prof = self.profile(desc.model)
                        affinity -= (
                            w.lambda_s * prof.switch_penalty * w.switch_x * w.state_scale
                        )
                if not w.ablation.no_prefix and desc.shared_prefix_group is not None:
                    if desc.shared_prefix_group == stage.shared_prefix_group:
                        shared = min(stage.prompt_token_proxy, desc.prompt_token_proxy)
                        affinity += (
                            w.lambda_p * w.kappa_prefix * shared / 1000.0
                            * w.prefix_x * w.prefix_scale
                        )
                if not w.ablation.no_locality:
                    role = self._role(desc)
                    for parent_id in dag.parents(desc_id):
                        if parent_id == stage.id:
                            continue
                        loc = state.output_device(parent_id)
                        if loc is None or loc == device_id:
                            continue
                        parent = dag.stages[parent_id]
                        sigma = parent.output_token_proxy * role.comm_weight / 1000.0
                        affinity -= (
                            w.lambda_tr
                            * self.topo.transfer_coeff(loc, device_id)
                            * sigma
                            * w.transfer_x
                            * w.locality_scale
                        )
            total += (w.gamma ** level_offset) * (
                affinity / len(bucket) + w.demand_coeff * demand
            )
        return total

    def _descendants_by_level(self, dag: WorkflowDag, stage_id: str) -> dict[int, tuple[str, ...]]:
        key = (id(dag), stage_id)
        cached = self._desc_cache.get(key)
        if cached is not None:
            return cached
        if dag.annotations is None:
            raise ValueError("plan_score requires an annotated dag")
        levels = dag.annotations.level
        children = dag.child_map()
        seen: set[str] = set()
        frontier = [stage_id]
        while frontier:
            nxt: set[str] = set()
            for sid in frontier:
                for c in children[sid]:
                    if c not in seen:
                        seen.add(c)
                        nxt.add(c)
            frontier = sorted(nxt)
        base_level = levels[stage_id]
        by_level: dict[int, list[str]] = {}
        for d in sorted(seen):
            by_level.setdefault(levels[d] - base_level, []).append(d)
        result = {k: tuple(v) for k, v in by_level.items()}
        self._desc_cache[key] = result
        return result

    # -- realized simulation time ---------------------------------------------

    def realized_duration(
        self,
        stage: Stage,
        shard_assignment: list[tuple[str, tuple[str, ...]]],
        state: ExecutionState,
        dag: WorkflowDag | None = None,
    ) -> list[ShardTiming]:
        """Deterministic simulated duration of each shard of a placed stage."""
        seen: set[str] = set()
        for _, qids in shard_assignment:
            dup = seen.intersection(qids)
            if dup:
                raise ValueError(f"overlapping shards share queries {sorted(dup)}")
            seen.update(qids)
        graph = dag if dag is not None else state.instance.dag
        timings = []
        for device_id, qids in shard_assignment:
            if stage.eligible_devices and device_id not in stage.eligible_devices:
                raise ValueError(f"device {device_id} not eligible for stage {stage.id}")
            switch_s = self.switch_cost(stage, device_id, state)
            transfer_s = self.transfer_cost(stage, device_id, state, graph)
            compute_s = sum(
                self.query_compute(stage, device_id, state.query(qid), state) for qid in qids
            )
            timings.append(
                ShardTiming(
                    device_id=device_id,
                    queries=tuple(qids),
                    switch_s=switch_s,
                    transfer_s=transfer_s,
                    compute_s=compute_s,
                )
            )
        return timings


def _even_split(query_ids: tuple[str, ...], devices: list[str]) -> list[tuple[str, tuple[str, ...]]]:
    """Near-equal contiguous split of queries over devices (sizes differ by <= 1)."""
    n, k = len(query_ids), len(devices)
    out = []
    start = 0
    for i, device_id in enumerate(devices):
        size = n // k + (1 if i < n % k else 0)
        out.append((device_id, tuple(query_ids[start : start + size])))
        start += size
    return out
