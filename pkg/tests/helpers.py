"""Shared test utilities: random problem generators with kink avoidance."""
import numpy as np

from fedsub.masking import Mask, eval_mask, topk_threshold
from fedsub.network import Batch, _forward
from fedsub.params import CapacityProfile, ParamVector, mlp_layout

MODELWISE = CapacityProfile(gammas=(), strategy="modelwise")


def random_batch(rng, n, in_dim, classes):
    return Batch(rng.standard_normal((n, in_dim)), rng.integers(0, classes, size=n))


def random_smooth_triple(rng, widths, n=6, gamma=None, kink_tol=1e-4, max_tries=50):
    """Random (params, mask, batch) whose ReLU preactivations avoid zero.

    Central differences with step h perturb preactivations by O(h), so any
    |z| > kink_tol >> h guarantees no unit flips during the check.
    """
    layout = mlp_layout(widths)
    classes = widths[-1]
    for _ in range(max_tries):
        p = ParamVector(rng.standard_normal(layout.d) * 0.8, layout)
        batch = random_batch(rng, n, widths[0], classes)
        if gamma is None:
            bits = (rng.random(layout.d) < 0.75).astype(np.uint8)
            if bits.sum() == 0:
                continue
            mask = Mask(bits, None, float(bits.mean()))
        else:
            mask = eval_mask(p, topk_threshold(p, gamma, MODELWISE))
        masked = p.values * mask.bits
        _, _, pre = _forward(masked, layout, batch.inputs)
        hidden = np.concatenate([z.ravel() for z in pre[:-1]]) if len(pre) > 1 else np.array([1.0])
        if hidden.size == 0 or np.min(np.abs(hidden)) > kink_tol:
            return p, mask, batch
    raise AssertionError("could not sample a kink-free configuration")


def relative_errors(analytic, numeric, floor=1e-8):
    """Relative error on coordinates where the analytic gradient is nonzero."""
    idx = np.abs(analytic) > floor
    if not np.any(idx):
        return np.zeros(0)
    return np.abs(analytic[idx] - numeric[idx]) / np.abs(analytic[idx])
