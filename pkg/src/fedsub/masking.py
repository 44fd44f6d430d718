"""Magnitude thresholds, binary masks, and the biased backward factor.

A submodel is the global vector times a binary mask. The mask keeps every
coordinate whose magnitude meets a threshold; the threshold is the k-th
largest magnitude inside a granularity unit (whole model, one layer, or
one shard of consecutive layers), with k derived from the client's
capacity ratio. Because larger capacities yield lower thresholds over the
same parameters, masks of different capacities are nested.

The backward factor ``1 + 2|x|t / (|x| + t)^2`` (t the unit's threshold)
is the surrogate derivative used to bias gradient descent toward cleanly
separating coordinates near the threshold; it lives in [1, 1.5] with the
maximum exactly at |x| = t.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .params import CapacityProfile, LayerLayout, ParamVector


@dataclass(frozen=True)
class Threshold:
    """Per-unit magnitude cutoffs plus the top-k budgets that produced them.

    ``units`` are the flat-index arrays of each granularity unit; indices
    outside every unit (exempt bias blocks) are treated as threshold 0 and
    are always kept.
    """

    strategy: str
    values: tuple[float, ...]
    budgets: tuple[int, ...]
    units: tuple[np.ndarray, ...]
    gamma: float
    d: int

    def __post_init__(self) -> None:
        if len(self.values) != len(self.units) or len(self.budgets) != len(self.units):
            raise ValueError("one threshold and one budget required per unit")
        for theta in self.values:
            if theta < 0:
                raise ValueError(f"thresholds must be >= 0, got {theta}")

    def per_index(self) -> np.ndarray:
        """Expand to a length-d vector of per-coordinate thresholds."""
        theta = np.zeros(self.d)
        for unit, value in zip(self.units, self.values):
            theta[unit] = value
        return theta


@dataclass(frozen=True)
class Mask:
    """Binary keep/drop vector plus the threshold and capacity that made it.

    ``threshold`` is None for masks built by structured baselines rather
    than by magnitude extraction.
    """

    bits: np.ndarray
    threshold: Threshold | None
    gamma: float

    def __post_init__(self) -> None:
        bits = np.asarray(self.bits, dtype=np.uint8).copy()
        if bits.ndim != 1 or not np.all((bits == 0) | (bits == 1)):
            raise ValueError("mask bits must be a flat 0/1 vector")
        bits.flags.writeable = False
        object.__setattr__(self, "bits", bits)

    @property
    def d(self) -> int:
        return int(self.bits.shape[0])

    def popcount(self) -> int:
        return int(self.bits.sum())


def full_mask(layout: LayerLayout) -> Mask:
    """All-ones mask over a layout (the gamma = 1 submodel)."""
    return Mask(np.ones(layout.d, dtype=np.uint8), None, 1.0)


def granularity_units(
    layout: LayerLayout,
    strategy: str,
    shards: tuple[tuple[int, int], ...] | None = None,
    mask_biases: bool = True,
) -> tuple[np.ndarray, ...]:
    """Flat-index arrays of each granularity unit, in layer order.

    Bias indices are excluded from every unit when ``mask_biases`` is
    False; they are then exempt from masking.
    """

    def layer_part(i: int) -> np.ndarray:
        return layout.layer_indices(i, include_bias=mask_biases)

    n_layers = len(layout.layers)
    if strategy == "modelwise":
        units = [np.concatenate([layer_part(i) for i in range(n_layers)])]
    elif strategy == "layerwise":
        units = [layer_part(i) for i in range(n_layers)]
    elif strategy == "shardwise":
        if not shards:
            raise ValueError("shardwise strategy requires shard ranges")
        pos = 0
        units = []
        for a, b in shards:
            if a != pos or b <= a:
                raise ValueError(f"shard ranges must tile the layers, got {shards}")
            units.append(np.concatenate([layer_part(i) for i in range(a, b)]))
            pos = b
        if pos != n_layers:
            raise ValueError(f"shards cover layers [0, {pos}) of {n_layers}")
    else:
        raise ValueError(f"unknown strategy {strategy!r}")
    for u in units:
        if u.size == 0:
            raise ValueError("empty granularity unit (zero maskable parameters)")
    return tuple(units)


def topk_threshold(p: ParamVector, gamma: float, profile: CapacityProfile) -> Threshold:
    """Magnitude cutoff(s) keeping roughly a ``gamma`` fraction per unit.

    Within a unit of size d_u the budget is k = max(1, floor(gamma * d_u))
    and the cutoff is the k-th largest magnitude. gamma = 1 uses the
    keep-all convention: cutoff 0, budget d_u.
    """
    if not 0.0 < gamma <= 1.0:
        raise ValueError(f"gamma must be in (0, 1], got {gamma}")
    units = granularity_units(p.layout, profile.strategy, profile.shards, profile.mask_biases)
    values, budgets = [], []
    for unit in units:
        d_u = unit.size
        if gamma == 1.0:
            values.append(0.0)
            budgets.append(d_u)
            continue
        k = max(1, math.floor(gamma * d_u))
        mags = np.abs(p.values[unit])
        theta = float(np.partition(mags, d_u - k)[d_u - k])
        values.append(theta)
        budgets.append(k)
    return Threshold(
        strategy=profile.strategy,
        values=tuple(values),
        budgets=tuple(budgets),
        units=units,
        gamma=gamma,
        d=p.layout.d,
    )


def eval_mask(p: ParamVector, th: Threshold) -> Mask:
    """Keep coordinates with |value| >= the unit's cutoff, within budget.

    Magnitude ties exactly at the cutoff are dropped from the largest flat
    index down until the unit's top-k budget holds, so cardinality is
    deterministic and nestedness survives ties. Indices outside all units
    are always kept.
    """
    if th.d != p.layout.d:
        raise ValueError(f"threshold built for d={th.d}, vector has d={p.layout.d}")
    bits = np.ones(p.layout.d, dtype=np.uint8)
    for unit, theta, budget in zip(th.units, th.values, th.budgets):
        mags = np.abs(p.values[unit])
        keep = mags >= theta
        excess = int(keep.sum()) - budget
        if excess > 0:
            tied = np.flatnonzero(keep & (mags == theta))
            drop = tied[len(tied) - min(excess, len(tied)):]
            keep[drop] = False
        bits[unit] = keep
    return Mask(bits, th, th.gamma)


def ste_factor(p: ParamVector, th: Threshold) -> np.ndarray:
    """Elementwise backward bias factor ``1 + 2|x|t / (|x| + t)^2``.

    Coordinates in units with cutoff 0 (and exempt coordinates) get factor
    exactly 1, including the 0/0 case at x = 0.
    """
    theta = th.per_index()
    mag = np.abs(p.values)
    denom = np.square(mag + theta)
    with np.errstate(invalid="ignore", divide="ignore"):
        factor = np.where(denom > 0.0, 1.0 + (2.0 * mag * theta) / denom, 1.0)
    return factor


def is_nested(a: Mask, b: Mask) -> bool:
    """True iff every kept coordinate of ``a`` is kept by ``b``."""
    if a.d != b.d:
        raise ValueError(f"mask lengths differ: {a.d} vs {b.d}")
    return bool(np.all(a.bits <= b.bits))
