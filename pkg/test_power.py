"""
Tests for the power caps and the target-rate power update
"""
import math

import numpy as np
import pytest

from power import (
    cap_matrix, initial_levels, per_rb_target, power_caps, select_power, target_power,
    update_levels, update_power
)
from rates import RateContext, check_constraints, rate_matrix
from conftest import make_cfg, make_channel

UNIT_NOISE = dict(noise_psd=30.0, rb_bandwidth_hz=1.0)


def single_link(q_min=0.25, p1=0.5):
    """One CUE with h = 1, H = 1, noise 1 W and 1 W budgets on both hops"""
    cfg = make_cfg(q_min_cue_bps=q_min, p_max_ue_dbm=30.0, p_max_relay_dbm=30.0, **UNIT_NOISE)
    cs = make_channel(np.ones((1, 1, 1)), serving=[0], relay_enb=np.ones((1, 1)))
    return RateContext(cfg, cs, np.ones((1, 1)), np.full((1, 1), p1))


def test_initial_levels_split_budget():
    cfg = make_cfg(rb_count=4)
    cs = make_channel(np.full((1, 1, 4), 1e-9), serving=[0])
    levels = initial_levels(RateContext(cfg, cs, np.zeros((1, 4)), np.zeros((1, 4))))
    np.testing.assert_allclose(levels, cfg.p_max_ue_w / 4)


def test_ue_budget_cap_per_held_rb():
    cfg = make_cfg(rb_count=2, p_max_ue_dbm=23.0103)
    cs = make_channel(np.full((1, 1, 2), 1e-9), serving=[0])
    ctx = RateContext(cfg, cs, np.ones((1, 2)), np.zeros((1, 2)))
    p_hat_max, varpi = power_caps(ctx, 0, 0)
    assert p_hat_max == pytest.approx(0.1, rel=1e-4)
    assert varpi == math.inf


def test_relay_budget_cap_counts_robust_margin():
    cfg = make_cfg(rb_count=2, num_cues=2)
    cs = make_channel(np.full((2, 1, 2), 1e-9), serving=[0, 0], xi=(0.0, 1.0, 0.0, 0.0))
    x = np.array([[1.0, 0.0], [0.0, 1.0]])
    ctx = RateContext(cfg, cs, x, np.zeros((2, 2)))
    p_hat_max, _ = cap_matrix(ctx)
    # 1 W relay budget over (H + ξ2) = 2 and two allocated pairs
    assert p_hat_max[0, 0] == pytest.approx(min(cfg.p_max_ue_w, 0.25))
    assert p_hat_max[0, 0] == pytest.approx(0.1995, rel=1e-3)

    cfg_low = make_cfg(rb_count=2, num_cues=2, p_max_ue_dbm=30.0, p_max_relay_dbm=20.0)
    p_hat_max, _ = cap_matrix(RateContext(cfg_low, cs, x, np.zeros((2, 2))))
    assert p_hat_max[1, 1] == pytest.approx(0.1 / (2 * 2))


def test_hop1_interference_cap():
    cfg = make_cfg(num_relays=2, num_cues=2, i_th1_dbm=-70.0)
    ue_relay = np.array([[[1e-9], [1e-7]], [[1e-12], [1e-9]]])
    cs = make_channel(ue_relay, serving=[0, 1])
    ctx = RateContext(cfg, cs, np.ones((2, 1)), np.zeros((2, 1)))
    _, varpi = power_caps(ctx, 0, 0)
    assert varpi == pytest.approx(1e-3)


def test_no_rb_means_no_caps_and_zero_power():
    ctx = single_link()
    idle = ctx.with_allocation(np.zeros((1, 1)), np.zeros((1, 1)))
    assert power_caps(idle, 0, 0) is None
    assert update_power(idle, 0, 0, prev_rate=0.1, prev_p=0.5) == 0.0
    p_hat_max, varpi = cap_matrix(idle)
    assert np.isnan(p_hat_max).all() and np.isnan(varpi).all()


def test_target_power_hand_value():
    assert target_power(2.0, 1.0, 0.1) == pytest.approx(0.3)
    assert target_power(1.0, 1.0, 0.37) == pytest.approx(0.37)
    assert target_power(1.0, 0.0, 0.1) == math.inf
    assert target_power(1.0, -1.0, 0.1) == math.inf


def test_per_rb_target_units():
    assert per_rb_target(128e3, 2, 180e3) == pytest.approx(128e3 / 360e3)


@pytest.mark.parametrize("lam, p_hat_max, varpi, expected", [
    (0.1, 0.2, 0.15, 0.1),
    (0.12, 0.2, 0.1, 0.1),
    (0.5, 0.2, 0.15, 0.15),
    (0.5, 0.2, 0.3, 0.2),
    (math.inf, 0.2, math.inf, 0.2),
])
def test_select_power(lam, p_hat_max, varpi, expected):
    assert select_power(lam, p_hat_max, varpi) == expected


def test_select_power_fallback_below_caps():
    assert select_power(0.5, 0.2, 0.3, p_tilde=0.05) == 0.05
    assert select_power(0.5, 0.2, 0.3, p_tilde=0.9) == 0.2


def test_update_power_explicit_target():
    ctx = single_link()
    rate = rate_matrix(ctx, 'robust')[0, 0]
    # current rate at 0.5 W already above target: power drops
    new = update_power(ctx, 0, 0, prev_rate=rate, prev_p=0.5, target=0.25)
    assert 0.0 < new < 0.5
    capped = update_power(ctx, 0, 0, prev_rate=rate, prev_p=0.5, target=10.0)
    assert capped == pytest.approx(1.0)


def test_power_iteration_reaches_rate_target():
    ctx = single_link(q_min=0.25)
    levels = np.full((1, 1), 0.5)
    for _ in range(30):
        step = ctx.with_allocation(ctx.x, levels)
        utility = rate_matrix(step, 'robust', levels)
        levels = update_levels(step, [0], utility, np.array([1]), levels).levels

    # ½ log2(1 + p) = 0.25 at p = sqrt(2) - 1
    assert levels[0, 0] == pytest.approx(math.sqrt(2) - 1, rel=1e-9)
    final = ctx.with_allocation(ctx.x, levels)
    assert rate_matrix(final, 'robust')[0, 0] == pytest.approx(0.25, rel=1e-9)


def test_updated_powers_respect_caps_and_constraints(small_cfg, small_network):
    _, cs = small_network
    rng = np.random.default_rng(2)
    x = np.zeros((cs.num_ues, cs.num_rbs))
    for l in range(cs.num_relays):
        members = cs.members(l)
        for n in range(cs.num_rbs):
            if members.size:
                x[rng.choice(members), n] = 1.0
    ctx = RateContext(small_cfg, cs, x, np.zeros_like(x))
    levels = initial_levels(ctx)
    ctx = ctx.with_allocation(x, x * levels)

    for l in range(cs.num_relays):
        members = cs.members(l)
        if members.size == 0:
            continue
        utility = rate_matrix(ctx, 'robust', levels)[members]
        kappa = np.maximum(1, x[members].sum(axis=1)).astype(int)
        alloc = update_levels(ctx, members, utility, kappa, levels)
        held = x[members] > 0
        assert np.all(alloc.p1[members][held] <= np.fmin(alloc.p_hat_max, alloc.varpi)[members][held] + 1e-15)
        assert np.all(alloc.p1[members][~held] == 0)
        np.testing.assert_allclose(alloc.p2, cs.hop_ratio * alloc.p1)
        levels = alloc.levels
        ctx = ctx.with_allocation(x, x * levels)

    assert check_constraints(ctx, 'robust').passed
