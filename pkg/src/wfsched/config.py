"""Default catalogs and the versioned YAML config document.

The config document bundles everything a run needs besides the workload:
device topology, model catalog, role templates, role->model candidate sets
and scoring weights.  Every field has a shipped default so the harness works
out of the box; a YAML file overrides individual sections.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path

import yaml

from .model import DeviceSpec, DeviceTopology, ModelProfile, StageRole

CONFIG_SCHEMA = "wfsched.config@1"

# Fixed construction seed used by the benchmark pipeline.
DEFAULT_SEED = 20260423


def default_model_catalog() -> dict[str, ModelProfile]:
    profiles = [
        ModelProfile("qwen-7b", memory_gb=15.0, prefill_coeff=0.8, decode_coeff=0.0010, switch_penalty=12.0),
        ModelProfile("deepseek-7b", memory_gb=15.0, prefill_coeff=1.0, decode_coeff=0.0013, switch_penalty=15.0),
        ModelProfile("llama-8b", memory_gb=17.0, prefill_coeff=0.9, decode_coeff=0.0011, switch_penalty=18.0),
    ]
    return {p.alias: p for p in profiles}


# Role template table: complexity, prefill/decode scaling, token proxies,
# communication weight, cache flags and shard eligibility per role kind.
_ROLE_TABLE: dict[str, tuple] = {
    # kind:            (cplx, pre,  dec,  max_tok, out_tok, comm, keep,  reuse, shard)
    "prompt_prep":     (0.6,  0.8,  0.5,  2048,    256,     1.0,  True,  True,  True),
    "retrieval":       (0.8,  1.2,  0.4,  4096,    512,     2.0,  True,  True,  True),
    "routing":         (0.5,  0.6,  0.3,  1024,    128,     0.5,  False, True,  True),
    "decomposition":   (1.0,  1.0,  0.8,  2048,    384,     1.5,  True,  True,  True),
    "worker":          (1.4,  1.0,  1.0,  4096,    512,     1.0,  False, True,  True),
    "merge":           (1.1,  1.3,  0.7,  3072,    512,     3.0,  False, False, False),
    "aggregation":     (1.2,  1.4,  0.8,  3072,    640,     3.0,  False, False, False),
    "summarization":   (1.0,  1.1,  0.9,  4096,    384,     1.5,  True,  True,  True),
    "validation":      (0.7,  0.9,  0.5,  2048,    192,     1.0,  False, True,  True),
    "verification":    (0.8,  1.0,  0.6,  2048,    192,     1.0,  False, True,  True),
    "final_synthesis": (1.2,  1.2,  1.1,  4096,    512,     2.0,  False, False, False),
}


def default_role_catalog() -> dict[str, StageRole]:
    catalog = {}
    for kind, row in _ROLE_TABLE.items():
        cplx, pre, dec, max_tok, out_tok, comm, keep, reuse, shard = row
        catalog[kind] = StageRole(
            kind=kind,
            complexity=cplx,
            prefill_scale=pre,
            decode_scale=dec,
            max_token_proxy=max_tok,
            output_size_proxy=out_tok,
            comm_weight=comm,
            default_keep_cache=keep,
            default_cache_reuse=reuse,
            shard_eligible=shard,
        )
    return catalog


# Role-dependent model candidate sets; order matters for the stable hash pick.
DEFAULT_ROLE_MODELS: dict[str, tuple[str, ...]] = {
    "prompt_prep": ("qwen-7b", "llama-8b"),
    "retrieval": ("qwen-7b", "deepseek-7b"),
    "routing": ("qwen-7b",),
    "decomposition": ("deepseek-7b", "llama-8b"),
    "worker": ("qwen-7b", "deepseek-7b", "llama-8b"),
    "merge": ("llama-8b", "deepseek-7b"),
    "aggregation": ("llama-8b", "deepseek-7b"),
    "summarization": ("qwen-7b", "llama-8b"),
    "validation": ("deepseek-7b",),
    "verification": ("deepseek-7b", "qwen-7b"),
    "final_synthesis": ("llama-8b",),
}


def default_topology(num_devices: int = 4) -> DeviceTopology:
    devices = tuple(DeviceSpec(id=f"d{i}", speed_factor=1.0) for i in range(num_devices))
    return DeviceTopology(devices=devices, default_transfer_coeff=2.0)


@dataclass(frozen=True)
class AblationFlags:
    """Component switches exercised by the ablation matrix."""

    no_future_planning: bool = False
    no_locality: bool = False
    no_same_model: bool = False
    no_prefix: bool = False
    no_shard: bool = False

    def label(self) -> str:
        names = [n for n in (
            "no_future_planning", "no_locality", "no_same_model", "no_prefix", "no_shard",
        ) if getattr(self, n)]
        return "+".join(names) if names else "none"

    @staticmethod
    def from_names(names: list[str] | tuple[str, ...]) -> "AblationFlags":
        known = {"no_future_planning", "no_locality", "no_same_model", "no_prefix", "no_shard"}
        bad = sorted(set(names) - known)
        if bad:
            raise ValueError(f"unknown ablation flags: {bad}")
        return AblationFlags(**{n: True for n in names})


@dataclass(frozen=True)
class ScoreWeights:
    """Score-term weights, planning horizon and sensitivity/perturbation knobs."""

    lambda_q: float = 1.0
    lambda_s: float = 1.0
    lambda_tr: float = 1.0
    lambda_c: float = 0.5
    lambda_p: float = 0.5
    lambda_r: float = 0.5
    gamma: float = 0.5
    horizon: int = 4
    kappa_prefix: float = 1.0  # seconds per 1k overlapped tokens
    locality_coeff: float = 0.1  # locality benefit as a fraction of base cost
    shard_overhead_frac: float = 0.15  # per extra shard, fraction of unsharded compute
    demand_coeff: float = 0.6  # weight of downstream demand in the planning tail
    state_scale: float = 1.0
    locality_scale: float = 1.0
    prefix_scale: float = 1.0
    switch_x: float = 1.0
    transfer_x: float = 1.0
    prefix_x: float = 1.0
    ablation: AblationFlags = field(default_factory=AblationFlags)

    def __post_init__(self) -> None:
        for name in ("lambda_q", "lambda_s", "lambda_tr", "lambda_c", "lambda_p", "lambda_r"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if not (0.0 < self.gamma <= 1.0):
            raise ValueError("gamma must be in (0, 1]")
        if self.horizon < 0:
            raise ValueError("horizon must be >= 0")
        for name in ("state_scale", "locality_scale", "prefix_scale",
                     "switch_x", "transfer_x", "prefix_x"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be > 0")

    def effective_horizon(self) -> int:
        # The named ablation collapses the planning horizon to one: the solver
        # still assigns the frontier but uses no downstream tail.
        if self.ablation.no_future_planning:
            return min(self.horizon, 1)
        return self.horizon


@dataclass(frozen=True)
class RunConfig:
    """Everything a run needs besides the workload itself."""

    topology: DeviceTopology
    models: dict[str, ModelProfile]
    roles: dict[str, StageRole]
    role_models: dict[str, tuple[str, ...]]
    weights: ScoreWeights

    def with_weights(self, weights: ScoreWeights) -> "RunConfig":
        return replace(self, weights=weights)


def default_config(num_devices: int = 4) -> RunConfig:
    return RunConfig(
        topology=default_topology(num_devices),
        models=default_model_catalog(),
        roles=default_role_catalog(),
        role_models=dict(DEFAULT_ROLE_MODELS),
        weights=ScoreWeights(),
    )


# ---------------------------------------------------------------------------
# YAML load/save
# ---------------------------------------------------------------------------


def config_to_dict(config: RunConfig) -> dict:
    topo = config.topology
    return {
        "schema": CONFIG_SCHEMA,
        "devices": [
            {"id": d.id, "speed_factor": d.speed_factor, "memory_gb": d.memory_gb}
            for d in topo.devices
        ],
        "default_transfer_coeff": topo.default_transfer_coeff,
        "transfer_overrides": {
            f"{src}->{dst}": beta for (src, dst), beta in sorted(topo.transfer_overrides.items())
        },
        "models": {
            alias: {
                "memory_gb": p.memory_gb,
                "prefill_coeff": p.prefill_coeff,
                "decode_coeff": p.decode_coeff,
                "switch_penalty": p.switch_penalty,
            }
            for alias, p in sorted(config.models.items())
        },
        "roles": {
            kind: {
                "complexity": r.complexity,
                "prefill_scale": r.prefill_scale,
                "decode_scale": r.decode_scale,
                "max_token_proxy": r.max_token_proxy,
                "output_size_proxy": r.output_size_proxy,
                "comm_weight": r.comm_weight,
                "default_keep_cache": r.default_keep_cache,
                "default_cache_reuse": r.default_cache_reuse,
                "shard_eligible": r.shard_eligible,
            }
            for kind, r in sorted(config.roles.items())
        },
        "role_models": {k: list(v) for k, v in sorted(config.role_models.items())},
        "weights": {
            "lambda_q": config.weights.lambda_q,
            "lambda_s": config.weights.lambda_s,
            "lambda_tr": config.weights.lambda_tr,
            "lambda_c": config.weights.lambda_c,
            "lambda_p": config.weights.lambda_p,
            "lambda_r": config.weights.lambda_r,
            "gamma": config.weights.gamma,
            "horizon": config.weights.horizon,
            "kappa_prefix": config.weights.kappa_prefix,
            "locality_coeff": config.weights.locality_coeff,
            "shard_overhead_frac": config.weights.shard_overhead_frac,
        },
    }


def config_from_dict(doc: dict) -> RunConfig:
    if doc.get("schema") != CONFIG_SCHEMA:
        raise ValueError(f"unsupported config schema {doc.get('schema')!r}")
    base = default_config()
    devices = tuple(
        DeviceSpec(
            id=d["id"],
            speed_factor=float(d.get("speed_factor", 1.0)),
            memory_gb=float(d.get("memory_gb", 24.0)),
        )
        for d in doc.get("devices", [])
    ) or base.topology.devices
    overrides = {}
    for key, beta in doc.get("transfer_overrides", {}).items():
        src, dst = key.split("->", 1)
        overrides[(src, dst)] = float(beta)
    topo = DeviceTopology(
        devices=devices,
        default_transfer_coeff=float(
            doc.get("default_transfer_coeff", base.topology.default_transfer_coeff)
        ),
        transfer_overrides=overrides,
    )
    models = dict(base.models)
    for alias, m in doc.get("models", {}).items():
        models[alias] = ModelProfile(alias=alias, **m)
    roles = dict(base.roles)
    for kind, r in doc.get("roles", {}).items():
        roles[kind] = StageRole(kind=kind, **r)
    role_models = dict(base.role_models)
    for kind, aliases in doc.get("role_models", {}).items():
        role_models[kind] = tuple(aliases)
    weights = ScoreWeights(**doc.get("weights", {}))
    return RunConfig(
        topology=topo, models=models, roles=roles, role_models=role_models, weights=weights
    )


def load_config(path: str | Path) -> RunConfig:
    doc = yaml.safe_load(Path(path).read_text())
    return config_from_dict(doc)


def save_config(config: RunConfig, path: str | Path) -> None:
    Path(path).write_text(yaml.safe_dump(config_to_dict(config), sort_keys=True))
