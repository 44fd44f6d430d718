"""Structured baseline mask generators and the greedy-pruning round.

HeteroFL keeps a static prefix of each hidden layer's units; FedRolex keeps
a same-sized window that advances by one unit per round and wraps. Both are
unit-structured: a mask keeps exactly the weights and biases touching the
kept units, with input features and output classes never cut. The kept
width is ceil(sqrt(gamma) * width), which matches the capacity ratio on
the hidden-to-hidden blocks; edge blocks (first layer in, last layer out)
shrink only like sqrt(gamma), so the total kept fraction exceeds gamma on
small nets. The guaranteed bound, asserted in tests, is

    popcount <= sqrt(gamma) * d + sum over layers of (in + out + 1).

Note for multi-hidden-layer nets: FedRolex windows advance in lockstep, so
a hidden-to-hidden weight is explored only in rounds where both endpoints
are windowed; unit pairs further apart than the window never co-occur and
stay unexplored. Single-hidden-layer nets have no such pairs and reach
full coverage within width rounds.

Greedy pruning reuses magnitude extraction but keeps the round's mask
frozen during local training and applies no backward bias.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .client import ClientUpdate, local_train_fixed_mask
from .masking import Mask, eval_mask, topk_threshold
from .network import Batch
from .params import CapacityProfile, LayerLayout, ParamVector


@dataclass(frozen=True)
class RollState:
    """Current window start per hidden layer; advanced once per round."""

    offsets: tuple[int, ...]

    def advanced(self, layout: LayerLayout) -> "RollState":
        widths = _hidden_widths(layout)
        if len(widths) != len(self.offsets):
            raise ValueError("roll state does not match layout")
        return RollState(tuple((o + 1) % w for o, w in zip(self.offsets, widths)))


def initial_roll_state(layout: LayerLayout) -> RollState:
    return RollState(tuple(0 for _ in _hidden_widths(layout)))


def _hidden_widths(layout: LayerLayout) -> list[int]:
    return [spec.out_dim for spec in layout.layers[:-1]]


def _kept_width(width: int, gamma: float) -> int:
    kept = math.ceil(math.sqrt(gamma) * width)
    if kept < 1:
        raise ValueError(f"capacity {gamma} keeps no units of a width-{width} layer")
    return min(kept, width)


def _mask_from_units(layout: LayerLayout, kept: list[np.ndarray]) -> np.ndarray:
    """Bits for the weights/biases touching the kept units of each layer.

    ``kept[l]`` are the kept output units of hidden layer l; the input
    features and the final layer's outputs are always fully kept.
    """
    bits = np.zeros(layout.d, dtype=np.uint8)
    n_layers = len(layout.layers)
    in_keep = np.ones(layout.layers[0].in_dim, dtype=np.uint8)
    for i, spec in enumerate(layout.layers):
        if i < n_layers - 1:
            out_keep = np.zeros(spec.out_dim, dtype=np.uint8)
            out_keep[kept[i]] = 1
        else:
            out_keep = np.ones(spec.out_dim, dtype=np.uint8)
        ws, we, bs, be = layout.offsets[i]
        bits[ws:we] = np.outer(out_keep, in_keep).ravel()
        if spec.has_bias:
            bits[bs:be] = out_keep
        in_keep = out_keep
    return bits


def heterofl_mask(layout: LayerLayout, gamma: float) -> Mask:
    """Static prefix mask: the first ceil(sqrt(gamma)*width) hidden units."""
    if not 0.0 < gamma <= 1.0:
        raise ValueError(f"gamma must be in (0, 1], got {gamma}")
    kept = [np.arange(_kept_width(w, gamma)) for w in _hidden_widths(layout)]
    return Mask(_mask_from_units(layout, kept), None, gamma)


def fedrolex_mask(
    layout: LayerLayout, gamma: float, state: RollState
) -> tuple[Mask, RollState]:
    """Rolling-window mask at the state's offsets, plus the advanced state."""
    if not 0.0 < gamma <= 1.0:
        raise ValueError(f"gamma must be in (0, 1], got {gamma}")
    widths = _hidden_widths(layout)
    if len(widths) != len(state.offsets):
        raise ValueError("roll state does not match layout")
    kept = []
    for width, offset in zip(widths, state.offsets):
        window = _kept_width(width, gamma)
        kept.append((offset + np.arange(window)) % width)
    return Mask(_mask_from_units(layout, kept), None, gamma), state.advanced(layout)


def pruning_greedy_round(
    x_t: ParamVector,
    gamma: float,
    profile: CapacityProfile,
    data: Batch,
    eta_l: float,
    K: int,
    batch_size: int | None,
    seed: int,
    client_id: int = 0,
) -> ClientUpdate:
    """Magnitude-extracted mask computed once at round start, then fixed SGD."""
    th = topk_threshold(x_t, gamma, profile)
    mask = eval_mask(x_t, th)
    init = x_t.replace(x_t.values * mask.bits)
    return local_train_fixed_mask(
        init, mask, data, eta_l, K, batch_size, seed, client_id=client_id
    )
