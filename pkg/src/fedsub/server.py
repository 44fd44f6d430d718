"""Server side: sampling, extraction, partial averaging, global step.

Partial averaging assigns each coordinate the mean of the updates from the
clients whose masks hold it; coordinates held by nobody stay untouched.
Two implementations are provided: the generic index-wise form, and a
banded form that exploits nested masks by partitioning coordinates into
capacity bands. On nested inputs they agree bit for bit because both fold
updates in ascending client-id order.

``expected_agg_coeff`` gives the exact per-band shrinkage factor of the
aggregate under uniform sampling of participant subsets; it is used as an
enumeration oracle in the tests.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .client import ClientUpdate
from .masking import Mask, Threshold, eval_mask, is_nested, topk_threshold
from .params import CapacityProfile, ParamVector


@dataclass(frozen=True)
class RoundPlan:
    """One round's participants and their extraction results."""

    round_index: int
    participants: tuple[int, ...]
    gammas: dict[int, float]
    thresholds: dict[int, Threshold | None]
    masks: dict[int, Mask]

    def __post_init__(self) -> None:
        if len(set(self.participants)) != len(self.participants):
            raise ValueError("participants must be distinct")


@dataclass(frozen=True)
class AggResult:
    """Aggregated delta plus the per-coordinate holder counts."""

    delta: np.ndarray
    counts: np.ndarray

    def __post_init__(self) -> None:
        counts = np.asarray(self.counts, dtype=np.int64)
        delta = np.asarray(self.delta)
        if delta.shape != counts.shape:
            raise ValueError("delta and counts must have equal shape")
        if np.any(delta[counts == 0] != 0):
            raise ValueError("coordinates with zero holders must aggregate to zero")
        object.__setattr__(self, "counts", counts)
        object.__setattr__(self, "delta", delta)


def sample_clients(N: int, A: int, seed: int) -> np.ndarray:
    """Uniform A-subset of [0, N), sorted ascending; deterministic in seed."""
    if not 1 <= A <= N:
        raise ValueError(f"need 1 <= A <= N, got A={A}, N={N}")
    rng = np.random.default_rng(seed)
    return np.sort(rng.choice(N, size=A, replace=False))


def extract_submodel(
    x_t: ParamVector, gamma_i: float, profile: CapacityProfile
) -> tuple[ParamVector, Threshold, Mask]:
    """Magnitude extraction: cutoffs from x_t, mask, and the masked vector."""
    th = topk_threshold(x_t, gamma_i, profile)
    mask = eval_mask(x_t, th)
    masked = x_t.replace(x_t.values * mask.bits)
    return masked, th, mask


def _sorted_updates(updates: list[ClientUpdate]) -> list[ClientUpdate]:
    if not updates:
        raise ValueError("no updates to aggregate")
    d = updates[0].mask.d
    for u in updates:
        if u.mask.d != d:
            raise ValueError("updates have inconsistent lengths")
    return sorted(updates, key=lambda u: u.client_id)


def aggregate_indexwise(updates: list[ClientUpdate]) -> AggResult:
    """Per-coordinate mean over holders; zero where nobody holds.

    Works for arbitrary (possibly non-nested) masks. Accumulation runs in
    ascending client-id order so results are reproducible regardless of
    the order updates arrive in, and exact for object-dtype inputs such as
    Fractions.
    """
    ordered = _sorted_updates(updates)
    d = ordered[0].mask.d
    counts = np.zeros(d, dtype=np.int64)
    total = np.zeros(d, dtype=ordered[0].delta.dtype)
    for u in ordered:
        counts += u.mask.bits
        total = total + u.delta
    held = counts > 0
    delta = np.zeros(d, dtype=total.dtype)
    delta[held] = total[held] / counts[held]
    return AggResult(delta, counts)


def aggregate_nested(
    updates: list[ClientUpdate], levels: list[float] | None = None
) -> AggResult:
    """Banded partial averaging for nested masks.

    Coordinates are partitioned into bands by the smallest capacity level
    whose mask holds them; each band is averaged over exactly the
    participants at or above that level. Raises if the tier masks are not
    nested consistently with the capacity ordering. Bands held by no
    participant aggregate to zero.
    """
    ordered = _sorted_updates(updates)
    d = ordered[0].mask.d
    present = sorted({u.mask.gamma for u in ordered})
    if levels is None:
        levels = present
    else:
        levels = sorted(float(g) for g in levels)
        missing = [g for g in present if g not in levels]
        if missing:
            raise ValueError(f"updates carry capacity levels {missing} absent from {levels}")
    tiers: dict[float, list[ClientUpdate]] = {g: [] for g in present}
    for u in ordered:
        tiers[u.mask.gamma].append(u)

    tier_bits: dict[float, np.ndarray] = {}
    for g in present:
        bits = tiers[g][0].mask.bits
        for u in tiers[g][1:]:
            if not np.array_equal(u.mask.bits, bits):
                raise ValueError(f"participants at capacity {g} carry differing masks")
        tier_bits[g] = bits
    for lo, hi in zip(present, present[1:]):
        if not is_nested(Mask(tier_bits[lo], None, lo), Mask(tier_bits[hi], None, hi)):
            raise ValueError(f"mask at capacity {lo} is not nested in capacity {hi}")

    counts = np.zeros(d, dtype=np.int64)
    delta = np.zeros(d, dtype=ordered[0].delta.dtype)
    inner = np.zeros(d, dtype=np.uint8)
    for g in present:
        band = (tier_bits[g] == 1) & (inner == 0)
        inner = tier_bits[g]
        holders = [u for u in ordered if u.mask.gamma >= g]
        if not np.any(band) or not holders:
            continue
        total = np.zeros(int(band.sum()), dtype=delta.dtype)
        for u in holders:
            total = total + u.delta[band]
        counts[band] = len(holders)
        delta[band] = total / len(holders)
    return AggResult(delta, counts)


def global_step(x_t: ParamVector, agg: AggResult, eta_s: float) -> ParamVector:
    """Server update ``x - eta_s * aggregated_delta``."""
    if agg.delta.shape != (x_t.d,):
        raise ValueError(f"aggregate length {agg.delta.shape} does not match d={x_t.d}")
    return x_t.replace(x_t.values - eta_s * agg.delta)


def expected_agg_coeff(N: int, A: int, tier_sizes: list[int]) -> list[Fraction]:
    """Exact expected shrinkage per band under uniform A-of-N sampling.

    For a band held by ``c`` of the N clients the expected aggregate equals
    ``(C(N,A) - C(N-c,A)) / C(N,A)`` times the band's all-holder mean, with
    the convention C(m, A) = 0 whenever A > m.
    """
    if not 1 <= A <= N:
        raise ValueError(f"need 1 <= A <= N, got A={A}, N={N}")
    total = math.comb(N, A)
    coeffs = []
    for c in tier_sizes:
        if not 0 <= c <= N:
            raise ValueError(f"tier size {c} outside [0, {N}]")
        coeffs.append(Fraction(total - math.comb(N - c, A), total))
    return coeffs
