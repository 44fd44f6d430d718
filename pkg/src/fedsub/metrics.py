"""Coverage, mask stability, and per-capacity accuracy reporting."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable, Mapping

import numpy as np

from .data import ClientDataset
from .masking import Mask
from .network import Batch, evaluate
from .params import ParamVector


class MaskHistory:
    """Running union of participant masks plus each tier's latest mask.

    ``record`` is called once per round with the masks actually assigned
    to participants (feeding the never-trained count) and the server-side
    extracted mask per capacity tier (feeding per-tier churn).
    """

    def __init__(self, d: int):
        self.d = d
        self.rounds = 0
        self._union = np.zeros(d, dtype=np.uint8)
        self._last_tier: dict[float, np.ndarray] = {}
        self._churn: dict[float, float] = {}

    def record(
        self,
        participant_masks: Iterable[Mask],
        tier_masks: Mapping[float, Mask],
    ) -> None:
        for m in participant_masks:
            self._union |= m.bits
        for gamma, m in tier_masks.items():
            prev = self._last_tier.get(gamma)
            self._churn[gamma] = 0.0 if prev is None else mask_churn(prev, m.bits)
            self._last_tier[gamma] = m.bits
        self.rounds += 1

    def union_bits(self) -> np.ndarray:
        return self._union.copy()

    def churn(self, gamma: float) -> float:
        """Latest round's churn for a tier; 0 on the tier's first round."""
        return self._churn.get(gamma, 0.0)


def exploration_rate(history: MaskHistory) -> float:
    """Fraction of coordinates never assigned to any participant so far."""
    if history.rounds < 1:
        raise ValueError("no rounds recorded")
    return 1.0 - float(history._union.sum()) / history.d


def mask_churn(m_prev: Mask | np.ndarray, m_next: Mask | np.ndarray) -> float:
    """Normalized Hamming distance between two masks of equal length."""
    a = m_prev.bits if isinstance(m_prev, Mask) else np.asarray(m_prev)
    b = m_next.bits if isinstance(m_next, Mask) else np.asarray(m_next)
    if a.shape != b.shape:
        raise ValueError(f"mask lengths differ: {a.shape} vs {b.shape}")
    return float(np.mean(a != b))


@dataclass(frozen=True)
class TierAccuracy:
    gamma: float
    local_acc: float
    global_acc: float


@dataclass(frozen=True)
class RoundReport:
    tiers: tuple[TierAccuracy, ...]
    local_mean: float
    global_mean: float


def report_round(
    params: ParamVector,
    tiers: Iterable[float],
    clients: Mapping[float, list[ClientDataset]],
    global_set: Batch,
    mask_for: Callable[[float], Mask],
) -> RoundReport:
    """Per-tier accuracies of the extracted submodels.

    For each capacity: the mean accuracy on that tier's clients' local test
    sets (clients with empty test sets are skipped), and the accuracy of the
    same submodel on the global test set. ``mask_for`` supplies the
    method-specific extraction at a given capacity.
    """
    rows = []
    for gamma in sorted(tiers):
        mask = mask_for(gamma)
        local_accs = [
            evaluate(params, mask, c.test)
            for c in clients.get(gamma, [])
            if len(c.test) > 0
        ]
        local = float(np.mean(local_accs)) if local_accs else float("nan")
        rows.append(
            TierAccuracy(
                gamma=gamma,
                local_acc=local,
                global_acc=evaluate(params, mask, global_set),
            )
        )
    local_mean = float(np.mean([r.local_acc for r in rows]))
    global_mean = float(np.mean([r.global_acc for r in rows]))
    return RoundReport(tuple(rows), local_mean, global_mean)


def capacity_sweep(
    params: ParamVector,
    gammas: Iterable[float],
    mask_for: Callable[[float], Mask],
    dataset: Batch,
) -> list[tuple[float, float]]:
    """Accuracy of extracted submodels over a capacity grid.

    The grid may include capacities never used in training; this is how a
    trained model is customized for unseen client budgets.
    """
    return [(g, evaluate(params, mask_for(g), dataset)) for g in sorted(gammas)]
