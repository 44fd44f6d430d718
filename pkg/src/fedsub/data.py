"""Synthetic classification data and non-IID client partitioning.

The generator is a Gaussian mixture with class centers on the vertices of
a regular simplex, scaled by ``spread``; labels are assigned round-robin
so class counts stay balanced within one. Clients are carved out with a
per-class Dirichlet draw over proportions, which skews class distributions
harder for small concentration values.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .network import Batch


@dataclass(frozen=True)
class ClientDataset:
    """One client's disjoint train/test split; train is never empty."""

    train: Batch
    test: Batch
    client_id: int

    def __post_init__(self) -> None:
        if len(self.train) == 0:
            raise ValueError(f"client {self.client_id} has an empty training set")


def simplex_centers(classes: int, dim: int, spread: float) -> np.ndarray:
    """Unit-norm regular simplex directions in R^dim, scaled by spread."""
    if dim < classes:
        raise ValueError(f"need dim >= classes to place {classes} simplex vertices")
    verts = np.zeros((classes, dim))
    verts[:, :classes] = np.eye(classes) - 1.0 / classes
    verts /= np.linalg.norm(verts, axis=1, keepdims=True)
    return spread * verts


def gen_synthetic(classes: int, dim: int, n: int, seed: int, spread: float) -> Batch:
    """Gaussian mixture with unit covariance around the simplex centers."""
    if classes < 2:
        raise ValueError("need at least two classes")
    if n < classes:
        raise ValueError(f"need at least {classes} samples, got {n}")
    rng = np.random.default_rng(seed)
    labels = np.arange(n, dtype=np.int64) % classes
    centers = simplex_centers(classes, dim, spread)
    inputs = centers[labels] + rng.standard_normal((n, dim))
    return Batch(inputs, labels)


def _largest_remainder(proportions: np.ndarray, total: int) -> np.ndarray:
    """Integer quotas summing to total; ties go to the smaller index."""
    quota = proportions * total
    base = np.floor(quota).astype(np.int64)
    short = total - int(base.sum())
    if short > 0:
        order = np.lexsort((np.arange(len(quota)), -(quota - base)))
        base[order[:short]] += 1
    return base


def dirichlet_partition(
    dataset: Batch, N: int, alpha: float, seed: int, max_retries: int = 100
) -> list[ClientDataset]:
    """Per-class Dirichlet split into N clients with an 80/20 local split.

    Each class's samples are dealt to clients by a Dirichlet(alpha)
    proportion draw with largest-remainder rounding. Draws leaving any
    client empty are rejected and retried up to ``max_retries`` times.
    """
    if alpha <= 0:
        raise ValueError(f"concentration must be positive, got {alpha}")
    if N < 1:
        raise ValueError("need at least one client")
    rng = np.random.default_rng(seed)
    labels = dataset.labels
    classes = np.unique(labels)
    for _ in range(max_retries):
        assignment: list[list[np.ndarray]] = [[] for _ in range(N)]
        for c in classes:
            idx = rng.permutation(np.flatnonzero(labels == c))
            counts = _largest_remainder(rng.dirichlet(np.full(N, alpha)), len(idx))
            start = 0
            for i in range(N):
                assignment[i].append(idx[start:start + counts[i]])
                start += counts[i]
        sizes = [sum(len(part) for part in parts) for parts in assignment]
        if min(sizes) >= 1:
            break
    else:
        raise RuntimeError(
            f"could not give every client a sample in {max_retries} draws"
        )

    clients = []
    for i in range(N):
        idx = rng.permutation(np.concatenate(assignment[i]))
        n_test = len(idx) // 5
        test, train = idx[:n_test], idx[n_test:]
        clients.append(
            ClientDataset(
                train=dataset.take(train), test=dataset.take(test), client_id=i
            )
        )
    return clients


def global_test(clients: list[ClientDataset]) -> Batch:
    """Concatenation of every client's test set."""
    if not clients:
        raise ValueError("no clients")
    inputs = np.concatenate([c.test.inputs for c in clients])
    labels = np.concatenate([c.test.labels for c in clients])
    return Batch(inputs, labels)


def load_csv_dataset(path: str) -> Batch:
    """Read ``label, f_0, ..., f_{dim-1}`` rows; the header row is required."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or not header or header[0].strip() != "label":
            raise ValueError(f"{path}: expected a header row starting with 'label'")
        width = len(header)
        labels, rows = [], []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != width:
                raise ValueError(f"{path}:{lineno}: expected {width} fields, got {len(row)}")
            labels.append(int(row[0]))
            rows.append([float(v) for v in row[1:]])
    if not rows:
        raise ValueError(f"{path}: no data rows")
    return Batch(np.asarray(rows), np.asarray(labels, dtype=np.int64))
