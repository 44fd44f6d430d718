"""Deterministic 64-bit seed derivation.

Every random draw in a simulation run is seeded from the experiment seed
plus integer stream tags (round index, client id, purpose tag) through a
splitmix64 chain, so results do not depend on execution order or on
Python's per-process string hashing.
"""
from __future__ import annotations

_MASK64 = (1 << 64) - 1


def splitmix64(x: int) -> int:
    """One splitmix64 step; maps a 64-bit state to a well-mixed output."""
    z = (x + 0x9E3779B97F4A7C15) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return (z ^ (z >> 31)) & _MASK64


def derive_seed(*parts: int) -> int:
    """Fold integer parts into one 64-bit seed, order-sensitively."""
    state = 0
    for p in parts:
        state = splitmix64(state ^ (p & _MASK64))
    return state
