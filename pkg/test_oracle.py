"""
Tests for the exhaustive oracle: enumeration counts, feasibility tags and stable sets
"""
import numpy as np
import pytest

from allocator import run_network
from logger import InfeasibleError, OracleSizeError
from matching import Matching, Quota, allocate_rbs, build_preferences
from metrics import efficiency
from oracle import (
    build_instance, check_guard, dominating_matchings, enumerate_allocations, enumerate_matchings,
    optimal_rate, stable_set, state_count
)
from rates import RateContext, check_constraints, ue_rates
from scenario import NetworkConfig
from conftest import distinct_utility, make_cfg, make_channel, sampled_network


def unit_quota(num_ues):
    return Quota(kappa=np.ones(num_ues, dtype=int), infeasible=np.zeros(num_ues, dtype=bool))


def test_state_count_and_guard():
    assert state_count(2, 3, 5) == 11 ** 3
    check_guard(3, 3, 5)
    with pytest.raises(OracleSizeError):
        check_guard(8, 8, 5)


def test_build_instance_guard(small_cfg, small_network):
    _, cs = small_network
    with pytest.raises(OracleSizeError):
        build_instance(small_cfg, cs, 0, grid_levels=1000)


def test_background_keeps_other_relays(small_cfg, small_network):
    _, cs = small_network
    U, N = cs.num_ues, cs.num_rbs
    background = RateContext(small_cfg, cs, np.ones((U, N)), np.full((U, N), 0.01))
    inst = build_instance(small_cfg, cs, 0, background=background, grid_levels=1)
    members = cs.members(0)
    others = cs.members(1)
    assert not inst.background.x[members].any()
    assert not inst.background.p1[members].any()
    assert inst.background.x[others].all()
    assert inst.num_ues == len(members)


def test_candidate_counts():
    cfg = make_cfg(num_cues=2, rb_count=2)
    cs = make_channel(np.full((2, 1, 2), 1e-9), serving=[0, 0])
    assert len(list(enumerate_allocations(build_instance(cfg, cs, grid_levels=1)))) == 9

    single = make_cfg()
    cs = make_channel(np.full((1, 1, 1), 1e-9), serving=[0])
    inst = build_instance(single, cs, grid_levels=3)
    assert inst.states == 4
    assert len(list(enumerate_allocations(inst))) == 4


def test_single_level_grid_sits_at_cap():
    cfg = make_cfg()
    cs = make_channel(np.full((1, 1, 1), 1e-9), serving=[0])
    powers = sorted(c.p1[0, 0] for c in enumerate_allocations(build_instance(cfg, cs, grid_levels=1)))
    assert powers == [0.0, pytest.approx(cfg.p_max_ue_w)]


def test_absolute_grid_marks_budget_violation():
    cfg = make_cfg()
    cs = make_channel(np.full((1, 1, 1), 1e-9), serving=[0])
    inst = build_instance(cfg, cs, power_grid=[0.1, 0.5])
    tags = {round(float(c.p1[0, 0]), 3): c.feasible for c in enumerate_allocations(inst)}
    # 23 dBm is just under 0.2 W
    assert tags == {0.0: True, 0.1: True, 0.5: False}


def test_feasibility_tags_agree_with_constraint_report(tiny_cfg):
    topology, cs = sampled_network(tiny_cfg, 5)
    inst = build_instance(tiny_cfg, cs, grid_levels=2)
    members = inst.members
    count = 0
    for candidate in enumerate_allocations(inst):
        ctx = RateContext(tiny_cfg, cs, candidate.x, candidate.p1)
        assert check_constraints(ctx, 'robust').passed == candidate.feasible
        np.testing.assert_allclose(candidate.ue_rates, ue_rates(ctx, 'robust')[members], rtol=1e-9)
        count += 1
    assert count == inst.states


def test_oracle_bounds_iterative_allocation(tiny_cfg):
    for seed in range(10):
        topology, cs = sampled_network(tiny_cfg, seed)
        result = run_network(tiny_cfg, topology, cs)
        best = optimal_rate(build_instance(tiny_cfg, cs))
        assert best.best_rate >= result.sum_rate * (1 - 1e-9)
        assert 0.0 < efficiency(result.sum_rate, best.best_rate) <= 1.0 + 1e-9
        assert best.feasible <= best.candidates


def test_unreachable_targets_are_infeasible():
    cfg = make_cfg(q_min_cue_bps=1e12)
    cs = make_channel(np.full((1, 1, 1), 1e-9), serving=[0])
    inst = build_instance(cfg, cs, grid_levels=3)
    with pytest.raises(InfeasibleError):
        optimal_rate(inst, enforce_qos=True)
    assert optimal_rate(inst).best_rate > 0


def test_enumerate_matchings_respects_quota():
    matchings = list(enumerate_matchings(2, 2, 1))
    assert len(matchings) == 7
    assert all(len(rbs) <= 1 for m in matchings for rbs in m.ue_rbs)
    assert len(list(enumerate_matchings(1, 3, 3))) == 8


def test_stable_set_of_two_by_two():
    utility = np.array([[3.0, 1.0], [2.0, 4.0]])
    profiles = build_preferences(utility)
    stable = stable_set(profiles, unit_quota(2))
    assert len(stable) == 1
    assert stable[0].rb_owner == allocate_rbs(profiles, unit_quota(2)).rb_owner


def test_dominating_matchings():
    utility = np.array([[3.0, 1.0], [2.0, 4.0]])
    swapped = Matching.from_pairs(2, 2, [(0, 1), (1, 0)])
    better = dominating_matchings(utility, swapped)
    assert [m.rb_owner for m in better] == [[0, 1]]
    assert dominating_matchings(utility, Matching.from_pairs(2, 2, [(0, 0), (1, 1)])) == []


def check_uniqueness(rng, instances, max_ues, max_rbs):
    for _ in range(instances):
        U = int(rng.integers(1, max_ues + 1))
        N = int(rng.integers(U, max_rbs + 1))
        utility = distinct_utility(rng, U, N)
        profiles = build_preferences(utility)
        stable = stable_set(profiles, unit_quota(U))
        assert len(stable) == 1
        assert stable[0].rb_owner == allocate_rbs(profiles, unit_quota(U)).rb_owner


def test_unique_stable_matching(rng):
    check_uniqueness(rng, 60, max_ues=3, max_rbs=4)


@pytest.mark.slow
def test_unique_stable_matching_many_instances():
    check_uniqueness(np.random.default_rng(7), 500, max_ues=3, max_rbs=5)


@pytest.mark.slow
def test_iterative_allocation_efficiency():
    ratios = []
    rng = np.random.default_rng(11)
    for seed in range(200):
        cues = int(rng.integers(0, 3))
        pairs = int(rng.integers(1 if cues == 0 else 0, 5 - cues))
        cfg = NetworkConfig(num_relays=1, num_cues=cues, num_d2d_pairs=pairs, rb_count=int(rng.integers(1, 5)),
                            q_min_cue_bps=1e9, q_min_d2d_bps=1e9, xi1=0.1, xi2=0.1, xi3=0.1, xi4=0.1)
        topology, cs = sampled_network(cfg, seed)
        result = run_network(cfg, topology, cs)
        best = optimal_rate(build_instance(cfg, cs, grid_levels=5))
        ratios.append(efficiency(result.sum_rate, best.best_rate))

    ratios = np.array(ratios)
    assert np.all(ratios <= 1.0 + 1e-9)
    assert np.mean((ratios >= 0.6) & (ratios <= 1.0 + 1e-9)) >= 0.9
