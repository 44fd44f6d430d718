import numpy as np
import pytest

from helpers import MODELWISE, random_batch

from fedsub.client import ClientUpdate, local_train_fiarse, local_train_fixed_mask
from fedsub.masking import Mask, eval_mask, full_mask, topk_threshold
from fedsub.network import Batch, grad_frozen_mask
from fedsub.params import ParamVector, init_params, mlp_layout


def make_problem(seed=0, widths=(4, 8, 3), n=40, gamma=0.5):
    rng = np.random.default_rng(seed)
    layout = mlp_layout(list(widths))
    x = init_params(layout, seed)
    data = random_batch(rng, n, widths[0], widths[-1])
    th = topk_threshold(x, gamma, MODELWISE)
    mask = eval_mask(x, th)
    init = x.replace(x.values * mask.bits)
    return init, th, mask, data


def test_zero_learning_rate_gives_zero_update():
    init, th, _, data = make_problem()
    up = local_train_fiarse(init, th, data, eta_l=0.0, K=5, batch_size=8, seed=1)
    assert np.array_equal(up.delta, np.zeros(init.d))


def test_sub_threshold_coordinates_untouched():
    init, th, mask, data = make_problem(gamma=0.4)
    snapshots = []
    up = local_train_fiarse(
        init, th, data, eta_l=0.1, K=8, batch_size=8, seed=2,
        on_step=lambda k, x, loss: snapshots.append(x),
    )
    below = np.abs(init.values) < th.values[0]
    assert np.all(up.delta[below] == 0.0)
    final = init.values - up.delta
    assert np.array_equal(final[below], init.values[below])
    for x in snapshots:
        assert np.array_equal(x[below], init.values[below])


def test_active_set_shrinks_monotonically():
    rng = np.random.default_rng(3)
    for trial in range(10):
        init, th, _, data = make_problem(seed=trial, gamma=0.5)
        theta = th.values[0]
        actives = [np.abs(init.values) >= theta]
        local_train_fiarse(
            init, th, data, eta_l=0.2, K=10, batch_size=8, seed=trial,
            on_step=lambda k, x, loss: actives.append(np.abs(x) >= theta),
        )
        for prev, cur in zip(actives, actives[1:]):
            assert np.all(prev | ~cur), "a coordinate re-entered the active set"


def test_delta_restricted_to_initial_mask():
    init, th, mask, data = make_problem(gamma=0.3)
    up = local_train_fiarse(init, th, data, eta_l=0.3, K=12, batch_size=8, seed=4)
    assert np.all(up.delta[mask.bits == 0] == 0.0)


def test_fiarse_rejects_unmasked_init():
    init, th, mask, data = make_problem(gamma=0.3)
    raw = init.values.copy()
    off = np.flatnonzero(mask.bits == 0)
    raw[off[0]] = 0.5
    with pytest.raises(ValueError):
        local_train_fiarse(init.replace(raw), th, data, eta_l=0.1, K=1, batch_size=8, seed=0)


def test_fixed_mask_one_full_batch_step_is_one_gradient():
    layout = mlp_layout([4, 6, 3])
    x = init_params(layout, 9)
    rng = np.random.default_rng(9)
    data = random_batch(rng, 16, 4, 3)
    mask = full_mask(layout)
    eta = 0.05
    up = local_train_fixed_mask(x, mask, data, eta_l=eta, K=1, batch_size=None, seed=0)
    expected = eta * grad_frozen_mask(x, mask, data)
    # delta is init - (init - eta*g); cancellation leaves an ulp of |init|
    np.testing.assert_allclose(up.delta, expected, rtol=1e-12, atol=1e-15)


def test_fixed_mask_support_and_determinism():
    init, th, mask, data = make_problem(gamma=0.6)
    a = local_train_fixed_mask(init, mask, data, eta_l=0.1, K=7, batch_size=8, seed=5)
    b = local_train_fixed_mask(init, mask, data, eta_l=0.1, K=7, batch_size=8, seed=5)
    assert np.array_equal(a.delta, b.delta)
    assert np.all(a.delta[mask.bits == 0] == 0.0)
    c = local_train_fixed_mask(init, mask, data, eta_l=0.1, K=7, batch_size=8, seed=6)
    assert np.any(a.delta != c.delta)


def test_fiarse_determinism():
    init, th, _, data = make_problem(gamma=0.5)
    a = local_train_fiarse(init, th, data, eta_l=0.1, K=7, batch_size=8, seed=5)
    b = local_train_fiarse(init, th, data, eta_l=0.1, K=7, batch_size=8, seed=5)
    assert np.array_equal(a.delta, b.delta)


def test_update_norm_bounded_by_step_norms():
    init, th, _, data = make_problem(gamma=0.7)
    eta = 0.1
    xs = [init.values]
    up = local_train_fiarse(
        init, th, data, eta_l=eta, K=10, batch_size=8, seed=7,
        on_step=lambda k, x, loss: xs.append(x),
    )
    step_norm_sum = sum(
        np.linalg.norm(b - a) for a, b in zip(xs, xs[1:])
    )
    assert np.linalg.norm(up.delta) <= step_norm_sum * (1 + 1e-12)


def test_empty_dataset_raises():
    init, th, mask, _ = make_problem()
    empty = Batch(np.empty((0, 4)), np.empty(0, dtype=np.int64))
    with pytest.raises(ValueError):
        local_train_fiarse(init, th, empty, eta_l=0.1, K=1, batch_size=4, seed=0)
    with pytest.raises(ValueError):
        local_train_fixed_mask(init, mask, empty, eta_l=0.1, K=1, batch_size=4, seed=0)


def test_minibatch_schedule_covers_data_each_epoch():
    # with batch_size dividing n, one epoch of steps touches every sample once
    layout = mlp_layout([2, 2])
    x = init_params(layout, 0)
    inputs = np.arange(12, dtype=np.float64).reshape(6, 2)
    data = Batch(inputs, np.zeros(6, dtype=np.int64))
    seen = []
    local_train_fixed_mask(
        x, full_mask(layout), data, eta_l=0.0, K=3, batch_size=2, seed=11,
        on_step=lambda k, xv, loss: seen.append(loss),
    )
    assert len(seen) == 3


def test_client_update_validation():
    layout = mlp_layout([2, 2])
    mask = full_mask(layout)
    bits = mask.bits.copy()
    bits[0] = 0
    partial = Mask(bits, None, 0.9)
    bad = np.ones(layout.d)
    with pytest.raises(ValueError):
        ClientUpdate(bad, partial, 0)
    nan = np.zeros(layout.d)
    nan[1] = np.nan
    with pytest.raises(ValueError):
        ClientUpdate(nan, mask, 0)
