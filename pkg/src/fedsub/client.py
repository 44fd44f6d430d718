"""Local K-step training loops producing masked updates.

Two trainers share the minibatch machinery: the importance-aware loop
re-evaluates its mask each step against fixed cutoffs and applies the
biased backward factor, while the fixed-mask loop (used by all baselines)
trains with one constant mask. Both return the update ``init - final``
restricted to the round's initial mask, and both are pure functions of
their arguments, so simulated clients can run in any order or in parallel.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterator

import numpy as np

from .masking import Mask, Threshold, eval_mask, ste_factor
from .network import Batch, _loss_and_grad
from .params import ParamVector

StepHook = Callable[[int, np.ndarray, float], None]


@dataclass(frozen=True)
class ClientUpdate:
    """Per-client delta (zero off the mask) plus the mask that scoped it."""

    delta: np.ndarray
    mask: Mask
    client_id: int

    def __post_init__(self) -> None:
        delta = np.asarray(self.delta)
        if delta.shape != (self.mask.d,):
            raise ValueError(f"delta shape {delta.shape} does not match mask d={self.mask.d}")
        off = self.mask.bits == 0
        if np.any(delta[off] != 0):
            raise ValueError("update carries nonzero entries outside its mask")
        if delta.dtype.kind == "f":
            if not np.all(np.isfinite(delta)):
                raise ValueError("update contains non-finite entries")
            delta = delta.copy()
            delta.flags.writeable = False
        object.__setattr__(self, "delta", delta)


def _batches(data: Batch, batch_size: int | None, steps: int, rng: np.random.Generator) -> Iterator[Batch]:
    """Deterministic minibatch stream: seeded reshuffle at each epoch edge."""
    n = len(data)
    if batch_size is None or batch_size >= n:
        for _ in range(steps):
            yield data
        return
    produced = 0
    while produced < steps:
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            if produced == steps:
                return
            yield data.take(order[start:start + batch_size])
            produced += 1


def _run_sgd(
    init: ParamVector,
    data: Batch,
    eta_l: float,
    K: int,
    batch_size: int | None,
    seed: int,
    grad_fn: Callable[[np.ndarray, Batch], tuple[float, np.ndarray]],
    on_step: StepHook | None,
) -> np.ndarray:
    if len(data) == 0:
        raise ValueError("local dataset is empty")
    if K < 1:
        raise ValueError(f"need at least one local step, got K={K}")
    x = init.values.copy()
    rng = np.random.default_rng(seed)
    for k, batch in enumerate(_batches(data, batch_size, K, rng)):
        loss, grad = grad_fn(x, batch)
        x -= eta_l * grad
        if on_step is not None:
            on_step(k, x.copy(), loss)
    return x


def local_train_fiarse(
    init: ParamVector,
    th: Threshold,
    data: Batch,
    eta_l: float,
    K: int,
    batch_size: int | None,
    seed: int,
    client_id: int = 0,
    on_step: StepHook | None = None,
) -> ClientUpdate:
    """K steps of threshold-controlled biased gradient descent.

    ``init`` must already be the extracted submodel (zeros outside the
    cutoff mask). The cutoffs stay fixed for the whole round while the mask
    follows the moving parameters, so the active set can only shrink:
    coordinates below the cutoff receive zero gradient and never re-enter.
    The returned delta is ``init - final`` restricted to the initial mask.
    """
    mask0 = eval_mask(init, th)
    if np.any(init.values[mask0.bits == 0] != 0):
        raise ValueError("initial parameters carry values outside the cutoff mask")

    def grad_fn(x: np.ndarray, batch: Batch) -> tuple[float, np.ndarray]:
        p = ParamVector(x, init.layout)
        m = eval_mask(p, th)
        loss, g = _loss_and_grad(p, m, batch)
        return loss, g * ste_factor(p, th)

    final = _run_sgd(init, data, eta_l, K, batch_size, seed, grad_fn, on_step)
    delta = np.where(mask0.bits == 1, init.values - final, 0.0)
    return ClientUpdate(delta, mask0, client_id)


def local_train_fixed_mask(
    init: ParamVector,
    m: Mask,
    data: Batch,
    eta_l: float,
    K: int,
    batch_size: int | None,
    seed: int,
    client_id: int = 0,
    on_step: StepHook | None = None,
) -> ClientUpdate:
    """K steps of plain SGD with one constant mask (baseline local loop)."""

    def grad_fn(x: np.ndarray, batch: Batch) -> tuple[float, np.ndarray]:
        return _loss_and_grad(ParamVector(x, init.layout), m, batch)

    final = _run_sgd(init, data, eta_l, K, batch_size, seed, grad_fn, on_step)
    delta = np.where(m.bits == 1, init.values - final, 0.0)
    return ClientUpdate(delta, m, client_id)
