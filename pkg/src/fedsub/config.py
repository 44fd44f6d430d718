"""Experiment configuration: JSON parsing, validation, emission, overrides.

Configs are plain JSON objects. Unknown keys anywhere are rejected, every
validation error names the offending key path, and ``parse_config_text``
and ``emit_config`` round-trip exactly. ``batch_size`` may be null for
full-batch local steps.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Any

METHODS = ("fiarse", "heterofl", "fedrolex", "pruning_greedy")
STRATEGIES = ("modelwise", "layerwise", "shardwise")


class ConfigError(ValueError):
    """Invalid configuration; the message names the key path."""


@dataclass(frozen=True)
class CapacityTier:
    gamma: float
    count: int


@dataclass(frozen=True)
class ModelConfig:
    widths: tuple[int, ...]


@dataclass(frozen=True)
class DataConfig:
    classes: int
    dim: int
    samples: int
    alpha: float
    spread: float


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int
    rounds: int
    clients: int
    participants: int
    eta_local: float
    method: str
    strategy: str
    capacities: tuple[CapacityTier, ...]
    model: ModelConfig
    data: DataConfig
    local_steps: int | None = None
    local_epochs: int | None = None
    batch_size: int | None = 32
    eta_global: float = 1.0
    shards: tuple[tuple[int, int], ...] | None = None
    mask_biases: bool = True
    output: str = "out"


def _require(raw: dict, key: str, path: str) -> Any:
    if key not in raw:
        raise ConfigError(f"{path}{key}: missing required key")
    return raw[key]


def _typed(value: Any, kinds: tuple[type, ...], path: str) -> Any:
    if isinstance(value, bool) and bool not in kinds:
        raise ConfigError(f"{path}: expected {kinds}, got a boolean")
    if not isinstance(value, kinds):
        raise ConfigError(f"{path}: expected {kinds}, got {type(value).__name__}")
    return value


def _reject_unknown(raw: dict, known: set[str], path: str) -> None:
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"{path or 'config'}: unknown keys {sorted(unknown)}")


def _parse_data(raw: Any) -> DataConfig:
    raw = _typed(raw, (dict,), "data")
    _reject_unknown(raw, {"classes", "dim", "samples", "alpha", "spread"}, "data")
    return DataConfig(
        classes=int(_typed(_require(raw, "classes", "data."), (int,), "data.classes")),
        dim=int(_typed(_require(raw, "dim", "data."), (int,), "data.dim")),
        samples=int(_typed(_require(raw, "samples", "data."), (int,), "data.samples")),
        alpha=float(_typed(_require(raw, "alpha", "data."), (int, float), "data.alpha")),
        spread=float(_typed(_require(raw, "spread", "data."), (int, float), "data.spread")),
    )


def _parse_model(raw: Any) -> ModelConfig:
    raw = _typed(raw, (dict,), "model")
    _reject_unknown(raw, {"widths"}, "model")
    widths = _typed(_require(raw, "widths", "model."), (list,), "model.widths")
    if len(widths) < 2:
        raise ConfigError("model.widths: need at least input and output widths")
    return ModelConfig(
        widths=tuple(int(_typed(w, (int,), f"model.widths[{i}]")) for i, w in enumerate(widths))
    )


def _parse_capacities(raw: Any) -> tuple[CapacityTier, ...]:
    raw = _typed(raw, (list,), "capacities")
    if not raw:
        raise ConfigError("capacities: need at least one tier")
    tiers = []
    for i, entry in enumerate(raw):
        path = f"capacities[{i}]"
        entry = _typed(entry, (dict,), path)
        _reject_unknown(entry, {"gamma", "count"}, path)
        gamma = float(_typed(_require(entry, "gamma", path + "."), (int, float), path + ".gamma"))
        count = int(_typed(_require(entry, "count", path + "."), (int,), path + ".count"))
        if not 0.0 < gamma <= 1.0:
            raise ConfigError(f"{path}.gamma: must be in (0, 1], got {gamma}")
        if count < 0:
            raise ConfigError(f"{path}.count: must be >= 0, got {count}")
        tiers.append(CapacityTier(gamma, count))
    gammas = [t.gamma for t in tiers]
    if len(set(gammas)) != len(gammas):
        raise ConfigError("capacities: duplicate gamma levels")
    return tuple(tiers)


_TOP_KEYS = {
    "seed", "rounds", "clients", "participants", "local_steps", "local_epochs",
    "batch_size", "eta_local", "eta_global", "method", "strategy", "shards",
    "capacities", "model", "data", "mask_biases", "output",
}


def parse_config_dict(raw: dict) -> ExperimentConfig:
    _typed(raw, (dict,), "config")
    _reject_unknown(raw, _TOP_KEYS, "")

    steps = raw.get("local_steps")
    epochs = raw.get("local_epochs")
    if (steps is None) == (epochs is None):
        raise ConfigError("local_steps/local_epochs: provide exactly one")

    batch = raw.get("batch_size", 32)
    if batch is not None:
        batch = int(_typed(batch, (int,), "batch_size"))
        if batch < 1:
            raise ConfigError(f"batch_size: must be >= 1 or null, got {batch}")

    shards = raw.get("shards")
    if shards is not None:
        shards = _typed(shards, (list,), "shards")
        parsed = []
        for i, pair in enumerate(shards):
            pair = _typed(pair, (list,), f"shards[{i}]")
            if len(pair) != 2:
                raise ConfigError(f"shards[{i}]: expected [start, stop]")
            parsed.append((int(pair[0]), int(pair[1])))
        shards = tuple(parsed)

    cfg = ExperimentConfig(
        seed=int(_typed(_require(raw, "seed", ""), (int,), "seed")),
        rounds=int(_typed(_require(raw, "rounds", ""), (int,), "rounds")),
        clients=int(_typed(_require(raw, "clients", ""), (int,), "clients")),
        participants=int(_typed(_require(raw, "participants", ""), (int,), "participants")),
        local_steps=None if steps is None else int(_typed(steps, (int,), "local_steps")),
        local_epochs=None if epochs is None else int(_typed(epochs, (int,), "local_epochs")),
        batch_size=batch,
        eta_local=float(_typed(_require(raw, "eta_local", ""), (int, float), "eta_local")),
        eta_global=float(_typed(raw.get("eta_global", 1.0), (int, float), "eta_global")),
        method=_typed(_require(raw, "method", ""), (str,), "method"),
        strategy=_typed(_require(raw, "strategy", ""), (str,), "strategy"),
        shards=shards,
        capacities=_parse_capacities(_require(raw, "capacities", "")),
        model=_parse_model(_require(raw, "model", "")),
        data=_parse_data(_require(raw, "data", "")),
        mask_biases=bool(_typed(raw.get("mask_biases", True), (bool,), "mask_biases")),
        output=_typed(raw.get("output", "out"), (str,), "output"),
    )
    _validate(cfg)
    return cfg


def _validate(cfg: ExperimentConfig) -> None:
    if cfg.rounds < 0:
        raise ConfigError(f"rounds: must be >= 0, got {cfg.rounds}")
    if cfg.clients < 1:
        raise ConfigError(f"clients: must be >= 1, got {cfg.clients}")
    if not 1 <= cfg.participants <= cfg.clients:
        raise ConfigError(
            f"participants: must be in [1, clients={cfg.clients}], got {cfg.participants}"
        )
    for key, value in (("local_steps", cfg.local_steps), ("local_epochs", cfg.local_epochs)):
        if value is not None and value < 1:
            raise ConfigError(f"{key}: must be >= 1, got {value}")
    if cfg.eta_local <= 0:
        raise ConfigError(f"eta_local: must be > 0, got {cfg.eta_local}")
    if cfg.eta_global <= 0:
        raise ConfigError(f"eta_global: must be > 0, got {cfg.eta_global}")
    if cfg.method not in METHODS:
        raise ConfigError(f"method: expected one of {METHODS}, got {cfg.method!r}")
    if cfg.strategy not in STRATEGIES:
        raise ConfigError(f"strategy: expected one of {STRATEGIES}, got {cfg.strategy!r}")
    total = sum(t.count for t in cfg.capacities)
    if total != cfg.clients:
        raise ConfigError(
            f"capacities: tier counts sum to {total}, expected clients={cfg.clients}"
        )
    n_layers = len(cfg.model.widths) - 1
    if cfg.strategy == "shardwise":
        if cfg.shards is None:
            raise ConfigError("shards: required for the shardwise strategy")
        pos = 0
        for i, (a, b) in enumerate(cfg.shards):
            if a != pos or b <= a:
                raise ConfigError(f"shards[{i}]: ranges must tile the layers in order")
            pos = b
        if pos != n_layers:
            raise ConfigError(f"shards: cover layers [0, {pos}) but model has {n_layers}")
    for i, w in enumerate(cfg.model.widths):
        if w < 1:
            raise ConfigError(f"model.widths[{i}]: must be >= 1, got {w}")
    if cfg.model.widths[0] != cfg.data.dim:
        raise ConfigError(
            f"model.widths[0]: must equal data.dim={cfg.data.dim}, got {cfg.model.widths[0]}"
        )
    if cfg.model.widths[-1] != cfg.data.classes:
        raise ConfigError(
            f"model.widths[-1]: must equal data.classes={cfg.data.classes}, "
            f"got {cfg.model.widths[-1]}"
        )
    if cfg.data.classes < 2:
        raise ConfigError(f"data.classes: must be >= 2, got {cfg.data.classes}")
    if cfg.data.dim < cfg.data.classes:
        raise ConfigError("data.dim: must be >= data.classes for simplex centers")
    if cfg.data.samples < cfg.data.classes:
        raise ConfigError(f"data.samples: must be >= classes, got {cfg.data.samples}")
    if cfg.data.alpha <= 0:
        raise ConfigError(f"data.alpha: must be > 0, got {cfg.data.alpha}")
    if cfg.data.spread < 0:
        raise ConfigError(f"data.spread: must be >= 0, got {cfg.data.spread}")


def parse_config_text(text: str) -> ExperimentConfig:
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    return parse_config_dict(raw)


def parse_config(path: str) -> ExperimentConfig:
    with open(path) as fh:
        return parse_config_text(fh.read())


def config_to_dict(cfg: ExperimentConfig) -> dict:
    out: dict[str, Any] = {
        "seed": cfg.seed,
        "rounds": cfg.rounds,
        "clients": cfg.clients,
        "participants": cfg.participants,
        "batch_size": cfg.batch_size,
        "eta_local": cfg.eta_local,
        "eta_global": cfg.eta_global,
        "method": cfg.method,
        "strategy": cfg.strategy,
        "capacities": [{"gamma": t.gamma, "count": t.count} for t in cfg.capacities],
        "model": {"widths": list(cfg.model.widths)},
        "data": {
            "classes": cfg.data.classes,
            "dim": cfg.data.dim,
            "samples": cfg.data.samples,
            "alpha": cfg.data.alpha,
            "spread": cfg.data.spread,
        },
        "mask_biases": cfg.mask_biases,
        "output": cfg.output,
    }
    if cfg.local_steps is not None:
        out["local_steps"] = cfg.local_steps
    else:
        out["local_epochs"] = cfg.local_epochs
    if cfg.shards is not None:
        out["shards"] = [list(pair) for pair in cfg.shards]
    return out


def emit_config(cfg: ExperimentConfig) -> str:
    return json.dumps(config_to_dict(cfg), indent=2) + "\n"


def apply_overrides(raw: dict, overrides: list[str]) -> dict:
    """Apply ``dotted.path=json_value`` overrides to a raw config dict."""
    out = json.loads(json.dumps(raw))
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r}: expected key=value")
        key, _, text = item.partition("=")
        try:
            value = json.loads(text)
        except json.JSONDecodeError:
            value = text
        node = out
        parts = key.split(".")
        for part in parts[:-1]:
            if not isinstance(node.get(part), dict):
                node[part] = {}
            node = node[part]
        node[parts[-1]] = value
    return out
