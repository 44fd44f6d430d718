import math

import numpy as np
import pytest

from helpers import MODELWISE, random_batch

from fedsub.baselines import (
    RollState,
    fedrolex_mask,
    heterofl_mask,
    initial_roll_state,
    pruning_greedy_round,
)
from fedsub.client import local_train_fixed_mask
from fedsub.masking import eval_mask, full_mask, is_nested, ste_factor, topk_threshold
from fedsub.network import Batch
from fedsub.params import init_params, mlp_layout


def test_heterofl_full_capacity_is_all_ones():
    lay = mlp_layout([4, 6, 3])
    assert heterofl_mask(lay, 1.0).popcount() == lay.d


def test_heterofl_static_across_calls():
    lay = mlp_layout([4, 6, 3])
    a = heterofl_mask(lay, 0.3)
    b = heterofl_mask(lay, 0.3)
    assert np.array_equal(a.bits, b.bits)


def test_heterofl_prefix_masks_nest():
    lay = mlp_layout([5, 8, 8, 4])
    for ga, gb in ((0.1, 0.3), (0.3, 0.7), (0.7, 1.0)):
        assert is_nested(heterofl_mask(lay, ga), heterofl_mask(lay, gb))


def test_heterofl_kept_count_matches_construction():
    lay = mlp_layout([8, 16, 16, 4])
    for gamma in (0.1, 0.25, 0.5, 0.9):
        widths = [8, 16, 16, 4]
        kept = [widths[0]] + [math.ceil(math.sqrt(gamma) * w) for w in widths[1:-1]]
        kept.append(widths[-1])
        expect = sum(kept[i] * kept[i + 1] + kept[i + 1] for i in range(len(kept) - 1))
        assert heterofl_mask(lay, gamma).popcount() == expect


def test_structured_budget_bound():
    # kept fraction is at most sqrt(gamma) plus one unit's worth per layer
    for widths in ([8, 16, 16, 4], [6, 32, 3], [10, 12, 12, 12, 2]):
        lay = mlp_layout(widths)
        slack = sum(
            spec.in_dim + spec.out_dim + 1 for spec in lay.layers
        )
        for gamma in (0.05, 0.1, 0.25, 0.5, 0.75, 1.0):
            m = heterofl_mask(lay, gamma)
            assert m.popcount() <= math.sqrt(gamma) * lay.d + slack
            roll, _ = fedrolex_mask(lay, gamma, initial_roll_state(lay))
            assert roll.popcount() <= math.sqrt(gamma) * lay.d + slack


def test_fedrolex_windows_roll_and_wrap():
    lay = mlp_layout([3, 4, 2])
    state = initial_roll_state(lay)
    gamma = 0.25  # window = ceil(0.5 * 4) = 2
    kept_units = []
    for _ in range(4):
        mask, state = fedrolex_mask(lay, gamma, state)
        ws, we, bs, be = lay.offsets[0]
        rows = mask.bits[ws:we].reshape(4, 3)
        kept_units.append(tuple(np.flatnonzero(rows.any(axis=1))))
    assert kept_units == [(0, 1), (1, 2), (2, 3), (0, 3)]


def test_fedrolex_full_window_every_round():
    lay = mlp_layout([3, 4, 2])
    state = initial_roll_state(lay)
    for _ in range(3):
        mask, state = fedrolex_mask(lay, 1.0, state)
        assert mask.popcount() == lay.d


def test_fedrolex_coverage_within_width_rounds():
    lay = mlp_layout([5, 6, 3])
    state = initial_roll_state(lay)
    union = np.zeros(lay.d, dtype=np.uint8)
    for _ in range(6):
        mask, state = fedrolex_mask(lay, 0.25, state)
        union |= mask.bits
    assert union.sum() == lay.d


def test_fedrolex_mask_changes_between_rounds_when_windowed():
    lay = mlp_layout([4, 8, 2])
    state = initial_roll_state(lay)
    m0, state = fedrolex_mask(lay, 0.3, state)
    m1, state = fedrolex_mask(lay, 0.3, state)
    assert np.any(m0.bits != m1.bits)


def test_roll_state_validates_layout():
    lay = mlp_layout([3, 4, 4, 2])
    with pytest.raises(ValueError):
        RollState((0,)).advanced(lay)
    with pytest.raises(ValueError):
        fedrolex_mask(lay, 0.5, RollState((0,)))


def test_pruning_mask_fixed_for_all_steps():
    rng = np.random.default_rng(0)
    lay = mlp_layout([4, 8, 3])
    x = init_params(lay, 5)
    data = random_batch(rng, 32, 4, 3)
    th = topk_threshold(x, 0.5, MODELWISE)
    mask = eval_mask(x, th)
    seen = []
    up = pruning_greedy_round(
        x, 0.5, MODELWISE, data, eta_l=0.2, K=6, batch_size=8, seed=3, client_id=1
    )
    assert np.array_equal(up.mask.bits, mask.bits)
    assert np.all(up.delta[mask.bits == 0] == 0.0)


def test_pruning_full_capacity_equals_plain_local_sgd():
    rng = np.random.default_rng(1)
    lay = mlp_layout([4, 6, 3])
    x = init_params(lay, 6)
    data = random_batch(rng, 24, 4, 3)
    greedy = pruning_greedy_round(x, 1.0, MODELWISE, data, 0.1, 4, 8, seed=9)
    plain = local_train_fixed_mask(x, full_mask(lay), data, 0.1, 4, 8, seed=9)
    assert np.array_equal(greedy.delta, plain.delta)


def test_one_step_greedy_vs_importance_aware_algebra():
    # with one step both methods use the gradient at init, where their masks
    # coincide, so the importance-aware update is the greedy update scaled
    # elementwise by the backward factor
    from fedsub.client import local_train_fiarse

    rng = np.random.default_rng(2)
    lay = mlp_layout([4, 8, 3])
    x = init_params(lay, 7)
    data = random_batch(rng, 16, 4, 3)
    gamma, eta = 0.5, 1e-4
    th = topk_threshold(x, gamma, MODELWISE)
    mask = eval_mask(x, th)
    init = x.replace(x.values * mask.bits)

    greedy = pruning_greedy_round(x, gamma, MODELWISE, data, eta, 1, None, seed=0)
    aware = local_train_fiarse(init, th, data, eta, 1, None, seed=0)
    factor = ste_factor(init, th)

    active = mask.bits == 1
    np.testing.assert_allclose(
        aware.delta[active], (greedy.delta * factor)[active], rtol=1e-9, atol=1e-18
    )


def test_baseline_updates_respect_support():
    rng = np.random.default_rng(3)
    lay = mlp_layout([4, 6, 3])
    x = init_params(lay, 8)
    data = random_batch(rng, 20, 4, 3)
    for gamma in (0.2, 0.6):
        m = heterofl_mask(lay, gamma)
        up = local_train_fixed_mask(x.replace(x.values * m.bits), m, data, 0.1, 3, 8, seed=4)
        assert np.all(up.delta[m.bits == 0] == 0.0)
