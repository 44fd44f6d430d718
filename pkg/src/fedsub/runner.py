"""Experiment orchestration: the round loop, metrics rows, CSV emission.

Each round samples participants, extracts per-capacity submodels with the
configured method, runs the local trainers, folds the updates with partial
averaging, and applies the global step. Every random draw is seeded from
the experiment seed plus (purpose, round, client) tags, so repeated runs
of one config produce byte-identical CSV output regardless of how client
work would be scheduled.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import baselines
from .client import ClientUpdate, local_train_fiarse, local_train_fixed_mask
from .config import ExperimentConfig
from .data import ClientDataset, dirichlet_partition, gen_synthetic, global_test
from .masking import Mask, Threshold, eval_mask, topk_threshold
from .metrics import MaskHistory, capacity_sweep, exploration_rate, report_round
from .network import Batch
from .params import CapacityProfile, ParamVector, init_params, mlp_layout
from .seeding import derive_seed
from .server import RoundPlan, aggregate_indexwise, aggregate_nested, global_step, sample_clients

_TAG_DATA, _TAG_PARTITION, _TAG_INIT, _TAG_SAMPLE, _TAG_CLIENT = range(5)

_NESTED_METHODS = ("fiarse", "heterofl")


class NumericFailure(RuntimeError):
    """Non-finite values appeared during a run; carries round/client context."""

    def __init__(self, message: str, round_index: int, client_id: int | None = None):
        super().__init__(message)
        self.round_index = round_index
        self.client_id = client_id


@dataclass(frozen=True)
class MetricRow:
    round: int
    method: str
    tier: float
    local_acc: float
    global_acc: float
    exploration_rate: float
    mask_churn: float
    train_loss: float


@dataclass(frozen=True)
class RoundContext:
    """Snapshot handed to the on_round observer after each global step."""

    round_index: int
    params: ParamVector
    plan: RoundPlan
    tier_masks: dict[float, Mask]
    tier_thresholds: dict[float, Threshold | None]


@dataclass
class RunResult:
    rows: list[MetricRow]
    params: ParamVector
    history: MaskHistory
    tiers: tuple[float, ...]
    mask_for: Callable[[float], Mask]


def client_gammas(cfg: ExperimentConfig) -> tuple[float, ...]:
    """Static per-client capacities: tiers fill client ids in config order."""
    gammas: list[float] = []
    for tier in cfg.capacities:
        gammas.extend([tier.gamma] * tier.count)
    return tuple(gammas)


def _local_steps(cfg: ExperimentConfig, n_train: int) -> int:
    if cfg.local_steps is not None:
        return cfg.local_steps
    per_epoch = 1 if cfg.batch_size is None else math.ceil(n_train / cfg.batch_size)
    return cfg.local_epochs * per_epoch


def build_problem(cfg: ExperimentConfig):
    """Deterministic layout, capacity profile, client datasets, global test."""
    layout = mlp_layout(cfg.model.widths)
    profile = CapacityProfile(
        gammas=client_gammas(cfg),
        strategy=cfg.strategy,
        shards=cfg.shards,
        mask_biases=cfg.mask_biases,
    )
    profile.validate_shards(layout)
    dataset = gen_synthetic(
        cfg.data.classes, cfg.data.dim, cfg.data.samples,
        derive_seed(cfg.seed, _TAG_DATA), cfg.data.spread,
    )
    clients = dirichlet_partition(
        dataset, cfg.clients, cfg.data.alpha, derive_seed(cfg.seed, _TAG_PARTITION)
    )
    return layout, profile, clients, global_test(clients)


def run_experiment(
    cfg: ExperimentConfig,
    on_round: Callable[[RoundContext], None] | None = None,
) -> RunResult:
    """Run the configured method for ``cfg.rounds`` communication rounds."""
    layout, profile, clients, gtest = build_problem(cfg)
    gammas = profile.gammas
    tiers = tuple(sorted({t.gamma for t in cfg.capacities}))
    by_tier: dict[float, list[ClientDataset]] = {g: [] for g in tiers}
    for i, c in enumerate(clients):
        by_tier[gammas[i]].append(c)

    x = init_params(layout, derive_seed(cfg.seed, _TAG_INIT))
    history = MaskHistory(layout.d)
    rows: list[MetricRow] = []

    static_masks = (
        {g: baselines.heterofl_mask(layout, g) for g in tiers}
        if cfg.method == "heterofl"
        else None
    )
    roll_states = (
        {g: baselines.initial_roll_state(layout) for g in tiers}
        if cfg.method == "fedrolex"
        else None
    )

    def magnitude_mask(p: ParamVector, gamma: float) -> tuple[Threshold, Mask]:
        th = topk_threshold(p, gamma, profile)
        return th, eval_mask(p, th)

    for t in range(cfg.rounds):
        participants = sample_clients(
            cfg.clients, cfg.participants, derive_seed(cfg.seed, _TAG_SAMPLE, t)
        )

        tier_masks: dict[float, Mask] = {}
        tier_thresholds: dict[float, Threshold | None] = {}
        if cfg.method in ("fiarse", "pruning_greedy"):
            for g in tiers:
                th, m = magnitude_mask(x, g)
                tier_thresholds[g], tier_masks[g] = th, m
        elif cfg.method == "heterofl":
            for g in tiers:
                tier_masks[g], tier_thresholds[g] = static_masks[g], None
        else:
            for g in tiers:
                tier_masks[g], roll_states[g] = baselines.fedrolex_mask(
                    layout, g, roll_states[g]
                )
                tier_thresholds[g] = None

        updates: list[ClientUpdate] = []
        losses: dict[int, float] = {}
        for i in participants:
            i = int(i)
            g = gammas[i]
            mask = tier_masks[g]
            init = x.replace(x.values * mask.bits)
            train = clients[i].train
            steps = _local_steps(cfg, len(train))
            sub_seed = derive_seed(cfg.seed, _TAG_CLIENT, t, i)
            step_losses: list[float] = []

            def track(_k: int, _x: np.ndarray, loss: float) -> None:
                step_losses.append(loss)

            try:
                if cfg.method == "fiarse":
                    update = local_train_fiarse(
                        init, tier_thresholds[g], train, cfg.eta_local, steps,
                        cfg.batch_size, sub_seed, client_id=i, on_step=track,
                    )
                else:
                    update = local_train_fixed_mask(
                        init, mask, train, cfg.eta_local, steps,
                        cfg.batch_size, sub_seed, client_id=i, on_step=track,
                    )
            except (ValueError, FloatingPointError) as exc:
                raise NumericFailure(
                    f"round {t}, client {i}: {exc}", t, client_id=i
                ) from exc
            if not np.all(np.isfinite(step_losses)):
                raise NumericFailure(
                    f"round {t}, client {i}: non-finite training loss", t, client_id=i
                )
            losses[i] = float(np.mean(step_losses))
            updates.append(update)

        if cfg.method in _NESTED_METHODS:
            agg = aggregate_nested(updates, levels=list(tiers))
        else:
            agg = aggregate_indexwise(updates)
        try:
            x = global_step(x, agg, cfg.eta_global)
        except ValueError as exc:
            raise NumericFailure(f"round {t}: {exc}", t) from exc

        history.record([tier_masks[gammas[int(i)]] for i in participants], tier_masks)

        if cfg.method in ("fiarse", "pruning_greedy"):
            def mask_for(g: float, _p=x) -> Mask:
                return magnitude_mask(_p, g)[1]
        else:
            def mask_for(g: float, _m=dict(tier_masks)) -> Mask:
                return _m[g]

        report = report_round(x, tiers, by_tier, gtest, mask_for)
        explo = exploration_rate(history)
        for tier_row in report.tiers:
            g = tier_row.gamma
            tier_losses = [losses[i] for i in losses if gammas[i] == g]
            rows.append(
                MetricRow(
                    round=t,
                    method=cfg.method,
                    tier=g,
                    local_acc=tier_row.local_acc,
                    global_acc=tier_row.global_acc,
                    exploration_rate=explo,
                    mask_churn=history.churn(g),
                    train_loss=float(np.mean(tier_losses)) if tier_losses else float("nan"),
                )
            )

        if on_round is not None:
            plan = RoundPlan(
                round_index=t,
                participants=tuple(int(i) for i in participants),
                gammas={int(i): gammas[int(i)] for i in participants},
                thresholds={int(i): tier_thresholds[gammas[int(i)]] for i in participants},
                masks={int(i): tier_masks[gammas[int(i)]] for i in participants},
            )
            on_round(RoundContext(t, x, plan, dict(tier_masks), dict(tier_thresholds)))

    if cfg.method in ("fiarse", "pruning_greedy"):
        def final_mask_for(g: float) -> Mask:
            return magnitude_mask(x, g)[1]
    elif cfg.method == "heterofl":
        def final_mask_for(g: float) -> Mask:
            return baselines.heterofl_mask(layout, g)
    else:
        final_states = roll_states

        def final_mask_for(g: float) -> Mask:
            return baselines.fedrolex_mask(layout, g, final_states[g])[0]

    return RunResult(rows=rows, params=x, history=history, tiers=tiers, mask_for=final_mask_for)


CSV_HEADER = "round,method,tier,local_acc,global_acc,exploration_rate,mask_churn,train_loss"


def _fmt(value: float) -> str:
    return f"{value:.6g}"


def emit_csv(rows: list[MetricRow], path: str) -> None:
    """Write metric rows with 6 significant digits and LF line endings."""
    with open(path, "w", newline="\n") as fh:
        fh.write(CSV_HEADER + "\n")
        for r in rows:
            fh.write(
                f"{r.round},{r.method},{_fmt(r.tier)},{_fmt(r.local_acc)},"
                f"{_fmt(r.global_acc)},{_fmt(r.exploration_rate)},"
                f"{_fmt(r.mask_churn)},{_fmt(r.train_loss)}\n"
            )


def load_metrics_csv(path: str) -> list[MetricRow]:
    """Parse a file previously written by :func:`emit_csv`."""
    rows = []
    with open(path) as fh:
        header = fh.readline().rstrip("\n")
        if header != CSV_HEADER:
            raise ValueError(f"{path}: unexpected header {header!r}")
        for line in fh:
            part = line.rstrip("\n").split(",")
            if len(part) != 8:
                raise ValueError(f"{path}: malformed row {line!r}")
            rows.append(
                MetricRow(
                    round=int(part[0]), method=part[1], tier=float(part[2]),
                    local_acc=float(part[3]), global_acc=float(part[4]),
                    exploration_rate=float(part[5]), mask_churn=float(part[6]),
                    train_loss=float(part[7]),
                )
            )
    return rows


def sweep_csv(result: RunResult, gammas: list[float], dataset: Batch, path: str) -> None:
    """Write the capacity/accuracy curve of the trained model."""
    rows = capacity_sweep(result.params, gammas, result.mask_for, dataset)
    with open(path, "w", newline="\n") as fh:
        fh.write("gamma,global_acc\n")
        for g, acc in rows:
            fh.write(f"{_fmt(g)},{_fmt(acc)}\n")
