"""Small fully connected classifier on flat masked parameters.

Forward is ReLU hidden layers plus mean softmax cross-entropy; backward is
exact backpropagation with the mask treated as a constant. The central
finite-difference routine is the independent oracle used to validate the
analytic gradient.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .masking import Mask, Threshold, eval_mask, ste_factor
from .params import LayerLayout, ParamVector


@dataclass(frozen=True)
class Batch:
    """A design matrix (n x in_dim) with integer class labels."""

    inputs: np.ndarray
    labels: np.ndarray

    def __post_init__(self) -> None:
        inputs = np.asarray(self.inputs, dtype=np.float64)
        labels = np.asarray(self.labels, dtype=np.int64)
        if inputs.ndim != 2 or labels.ndim != 1 or inputs.shape[0] != labels.shape[0]:
            raise ValueError(
                f"inputs {inputs.shape} and labels {labels.shape} are inconsistent"
            )
        object.__setattr__(self, "inputs", inputs)
        object.__setattr__(self, "labels", labels)

    def __len__(self) -> int:
        return int(self.labels.shape[0])

    def take(self, idx: np.ndarray) -> "Batch":
        return Batch(self.inputs[idx], self.labels[idx])


def _unpack(values: np.ndarray, layout: LayerLayout) -> list[tuple[np.ndarray, np.ndarray]]:
    """Split a flat vector into per-layer (W, b); W is (out_dim, in_dim)."""
    out = []
    for spec, (ws, we, bs, be) in zip(layout.layers, layout.offsets):
        w = values[ws:we].reshape(spec.out_dim, spec.in_dim)
        b = values[bs:be] if spec.has_bias else np.zeros(spec.out_dim)
        out.append((w, b))
    return out


def _check_batch(layout: LayerLayout, batch: Batch, allow_empty: bool = False) -> None:
    in_dim = layout.layers[0].in_dim
    n_classes = layout.layers[-1].out_dim
    if batch.inputs.shape[1] != in_dim:
        raise ValueError(f"batch has {batch.inputs.shape[1]} features, model expects {in_dim}")
    if len(batch) == 0:
        if not allow_empty:
            raise ValueError("batch must contain at least one sample")
        return
    if batch.labels.min() < 0 or batch.labels.max() >= n_classes:
        raise ValueError(f"labels must lie in [0, {n_classes})")


def _forward(values: np.ndarray, layout: LayerLayout, inputs: np.ndarray):
    """Returns (logits, activations, preactivations) for backprop reuse."""
    acts = [inputs]
    pre = []
    a = inputs
    n_layers = len(layout.layers)
    for i, (w, b) in enumerate(_unpack(values, layout)):
        z = a @ w.T + b
        pre.append(z)
        a = np.maximum(z, 0.0) if i < n_layers - 1 else z
        acts.append(a)
    return acts[-1], acts, pre


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def forward_loss(p: ParamVector, m: Mask, batch: Batch) -> float:
    """Mean softmax cross-entropy of the network at parameters p * m."""
    _check_batch(p.layout, batch)
    if m.d != p.d:
        raise ValueError(f"mask length {m.d} does not match d={p.d}")
    masked = p.values * m.bits
    logits, _, _ = _forward(masked, p.layout, batch.inputs)
    logp = _log_softmax(logits)
    return float(-logp[np.arange(len(batch)), batch.labels].mean())


def _loss_and_grad(p: ParamVector, m: Mask, batch: Batch) -> tuple[float, np.ndarray]:
    """Loss plus the exact gradient w.r.t. p with the mask held constant."""
    _check_batch(p.layout, batch)
    if m.d != p.d:
        raise ValueError(f"mask length {m.d} does not match d={p.d}")
    layout = p.layout
    masked = p.values * m.bits
    layers = _unpack(masked, layout)
    logits, acts, pre = _forward(masked, layout, batch.inputs)
    logp = _log_softmax(logits)
    n = len(batch)
    loss = float(-logp[np.arange(n), batch.labels].mean())

    probs = np.exp(logp)
    delta = probs
    delta[np.arange(n), batch.labels] -= 1.0
    delta /= n

    grad = np.zeros(layout.d)
    for i in range(len(layout.layers) - 1, -1, -1):
        spec = layout.layers[i]
        ws, we, bs, be = layout.offsets[i]
        grad[ws:we] = (delta.T @ acts[i]).ravel()
        if spec.has_bias:
            grad[bs:be] = delta.sum(axis=0)
        if i > 0:
            delta = (delta @ layers[i][0]) * (pre[i - 1] > 0.0)
    grad *= m.bits
    return loss, grad


def grad_frozen_mask(p: ParamVector, m: Mask, batch: Batch) -> np.ndarray:
    """Backpropagation gradient of :func:`forward_loss`; zero off the mask."""
    return _loss_and_grad(p, m, batch)[1]


def tcb_grad(p: ParamVector, th: Threshold, batch: Batch) -> np.ndarray:
    """Threshold-controlled biased gradient.

    Re-evaluates the mask from the current parameters against the fixed
    cutoffs, backpropagates with that mask frozen, and scales elementwise
    by :func:`ste_factor`. Coordinates below the cutoff get exactly zero.
    """
    m = eval_mask(p, th)
    return grad_frozen_mask(p, m, batch) * ste_factor(p, th)


def finite_diff_grad(p: ParamVector, m: Mask, batch: Batch, h: float) -> np.ndarray:
    """Central-difference gradient oracle with the mask frozen.

    Masked-out coordinates cannot influence the loss, so their entries are
    exactly zero without evaluation.
    """
    if h <= 0:
        raise ValueError("step size h must be positive")
    base = p.values.copy()
    grad = np.zeros(p.d)
    for j in np.flatnonzero(m.bits):
        base[j] += h
        up = forward_loss(ParamVector(base, p.layout), m, batch)
        base[j] -= 2 * h
        down = forward_loss(ParamVector(base, p.layout), m, batch)
        base[j] += h
        grad[j] = (up - down) / (2 * h)
    return grad


def evaluate(p: ParamVector, m: Mask, dataset: Batch) -> float:
    """Fraction of argmax-correct predictions at parameters p * m.

    Argmax ties resolve to the smallest class index.
    """
    if len(dataset) == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    _check_batch(p.layout, dataset)
    masked = p.values * m.bits
    logits, _, _ = _forward(masked, p.layout, dataset.inputs)
    pred = np.argmax(logits, axis=1)
    return float(np.mean(pred == dataset.labels))
