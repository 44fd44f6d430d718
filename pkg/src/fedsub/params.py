"""Flat parameter vectors with layer segmentation.

The global model and every submodel view share one storage convention: a
single float64 vector holding, for each layer in order, the weight block
(row-major, shape ``out_dim x in_dim``) followed by the bias block. Masks,
gradients, and aggregation all operate on this flat vector; layer structure
is recovered through :class:`LayerLayout` offsets.

ParamVector is immutable once constructed, so concurrently simulated
clients can share one instance read-only. New parameter states are new
vectors.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np

STRATEGIES = ("modelwise", "layerwise", "shardwise")


@dataclass(frozen=True)
class LayerSpec:
    """Shape of one dense layer: ``in_dim`` inputs to ``out_dim`` outputs."""

    in_dim: int
    out_dim: int
    has_bias: bool = True

    def __post_init__(self) -> None:
        if self.in_dim < 1 or self.out_dim < 1:
            raise ValueError(f"layer dims must be >= 1, got {self.in_dim}x{self.out_dim}")

    @property
    def weight_size(self) -> int:
        return self.in_dim * self.out_dim

    @property
    def bias_size(self) -> int:
        return self.out_dim if self.has_bias else 0

    @property
    def size(self) -> int:
        return self.weight_size + self.bias_size


@dataclass(frozen=True)
class LayerLayout:
    """Ordered layers plus the block offsets of each in the flat vector."""

    layers: tuple[LayerSpec, ...]

    def __post_init__(self) -> None:
        if not self.layers:
            raise ValueError("layout needs at least one layer")
        object.__setattr__(self, "layers", tuple(self.layers))

    @cached_property
    def offsets(self) -> tuple[tuple[int, int, int, int], ...]:
        """Per layer: (weight_start, weight_end, bias_start, bias_end)."""
        out, pos = [], 0
        for spec in self.layers:
            ws, we = pos, pos + spec.weight_size
            bs, be = we, we + spec.bias_size
            out.append((ws, we, bs, be))
            pos = be
        return tuple(out)

    @cached_property
    def d(self) -> int:
        return sum(spec.size for spec in self.layers)

    def bias_indices(self) -> np.ndarray:
        """Flat indices of all bias entries (empty if no layer has bias)."""
        parts = [np.arange(bs, be) for (_, _, bs, be) in self.offsets]
        return np.concatenate(parts) if parts else np.empty(0, dtype=np.int64)

    def layer_indices(self, index: int, include_bias: bool = True) -> np.ndarray:
        ws, we, bs, be = self.offsets[index]
        end = be if include_bias else we
        return np.arange(ws, end)


def mlp_layout(widths: tuple[int, ...] | list[int], bias: bool = True) -> LayerLayout:
    """Layout for a fully connected chain ``widths[0] -> ... -> widths[-1]``."""
    if len(widths) < 2:
        raise ValueError("need at least input and output widths")
    layers = tuple(
        LayerSpec(widths[i], widths[i + 1], has_bias=bias) for i in range(len(widths) - 1)
    )
    return LayerLayout(layers)


@dataclass(frozen=True)
class ParamVector:
    """Immutable flat float64 parameter vector tied to a layout."""

    values: np.ndarray
    layout: LayerLayout

    def __post_init__(self) -> None:
        vals = np.asarray(self.values, dtype=np.float64).copy()
        if vals.ndim != 1 or vals.shape[0] != self.layout.d:
            raise ValueError(f"expected {self.layout.d} values, got shape {vals.shape}")
        if not np.all(np.isfinite(vals)):
            raise ValueError("parameter vector contains non-finite entries")
        vals.flags.writeable = False
        object.__setattr__(self, "values", vals)

    @property
    def d(self) -> int:
        return self.layout.d

    def replace(self, values: np.ndarray) -> "ParamVector":
        return ParamVector(values, self.layout)


@dataclass(frozen=True)
class CapacityProfile:
    """Client capacity ratios plus the threshold-granularity strategy.

    ``shards`` lists half-open layer ranges ``(start, stop)`` and is only
    consulted for the shardwise strategy. With ``mask_biases=False`` bias
    blocks are exempt from masking and capacity budgets count weights only.
    """

    gammas: tuple[float, ...]
    strategy: str = "modelwise"
    shards: tuple[tuple[int, int], ...] | None = None
    mask_biases: bool = True

    def __post_init__(self) -> None:
        object.__setattr__(self, "gammas", tuple(float(g) for g in self.gammas))
        for g in self.gammas:
            if not 0.0 < g <= 1.0:
                raise ValueError(f"capacity ratio must be in (0, 1], got {g}")
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r}, expected one of {STRATEGIES}")
        if self.strategy == "shardwise" and not self.shards:
            raise ValueError("shardwise strategy requires shard ranges")
        if self.shards is not None:
            object.__setattr__(
                self, "shards", tuple((int(a), int(b)) for a, b in self.shards)
            )

    def validate_shards(self, layout: LayerLayout) -> None:
        """Check shard ranges are contiguous, disjoint, and cover all layers."""
        if self.strategy != "shardwise":
            return
        assert self.shards is not None
        pos = 0
        for a, b in self.shards:
            if a != pos or b <= a:
                raise ValueError(f"shard ranges must tile the layers, got {self.shards}")
            pos = b
        if pos != len(layout.layers):
            raise ValueError(
                f"shards cover layers [0, {pos}) but layout has {len(layout.layers)} layers"
            )


def init_params(layout: LayerLayout, seed: int) -> ParamVector:
    """Scaled-uniform initialization, deterministic in (layout, seed).

    Each layer's weight and bias entries are drawn from uniform(-b, b) with
    b = sqrt(6 / (in_dim + out_dim)).
    """
    rng = np.random.default_rng(seed)
    blocks = []
    for spec in layout.layers:
        b = math.sqrt(6.0 / (spec.in_dim + spec.out_dim))
        blocks.append(rng.uniform(-b, b, size=spec.size))
    return ParamVector(np.concatenate(blocks), layout)


def slice_layer(p: ParamVector, index: int) -> tuple[np.ndarray, np.ndarray]:
    """Read-only views of one layer's (weight block, bias block).

    The bias view is empty for layers without bias. Raises IndexError for
    an out-of-range layer index.
    """
    if not 0 <= index < len(p.layout.layers):
        raise IndexError(f"layer index {index} out of range for {len(p.layout.layers)} layers")
    ws, we, bs, be = p.layout.offsets[index]
    return p.values[ws:we], p.values[bs:be]
