"""Group decomposition, enumeration and radiality.

The networkx forest check in ``oracles`` is the independent reference.
"""
import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from psps_lab.grid import Bus, Line, Network, validate_network
from psps_lab.synthetic import synth54, synth138, toy6
from psps_lab.topology import (SwitchConfig, SwitchGroup, TopologyError, choices_from_config,
                               config_from_choices, count_topologies, decompose_groups,
                               enumerate_choices, enumerate_configs, is_radial)

from netgen import random_network
from oracles import brute_force_radial_sets, nx_is_radial

NET54 = synth54()


def test_table_groups_of_the_54_bus_network():
    groups = decompose_groups(NET54)
    assert [g.lines for g in groups] == [(3, 27), (5, 34), (9, 37), (13, 19, 47), (17, 52)]
    assert sorted(len(g.lines) for g in groups) == [2, 2, 2, 2, 3]
    assert count_topologies(groups) == 324


def test_count_examples():
    assert count_topologies([SwitchGroup((1, 2)), SwitchGroup((3, 4)), SwitchGroup((5, 6, 7)),
                             SwitchGroup((8, 9)), SwitchGroup((10, 11))]) == 324
    assert count_topologies([]) == 1
    assert count_topologies([SwitchGroup((4,))]) == 2


def test_no_switchable_lines():
    net = toy6()
    fixed = Network(net.buses, tuple(l for l in net.lines if not l.switchable), net.horizon,
                    net.demand_p, net.demand_q, 1, 1, 1)
    assert decompose_groups(fixed) == []


def _path4(switchable):
    buses = (Bus(1, "substation", 0.9, 1.1, 5, -5, 5),) + tuple(Bus(i, "load", 0.9, 1.1) for i in (2, 3, 4))
    lines = tuple(Line(i, i, i + 1, 0.01, 0.01, 1.0, switchable=i in switchable) for i in (1, 2, 3))
    return validate_network(Network(buses, lines, 1, np.zeros((4, 1)), np.zeros((4, 1)), 1, 1, 1))


def test_bridges_become_singleton_groups():
    groups = decompose_groups(_path4({1, 3}))
    assert [g.lines for g in groups] == [(1,), (3,)]
    assert [g.n_configs for g in groups] == [2, 2]
    assert count_topologies(groups) == 4


def test_overlapping_loops_are_reported():
    # three switchable ties between three sections: every pair is fine, all three loop
    buses = (Bus(1, "substation", 0.9, 1.1, 5, -5, 5),) + tuple(Bus(i, "load", 0.9, 1.1) for i in (2, 3))
    lines = (Line(1, 1, 2, 0.01, 0.01, 1, switchable=True), Line(2, 2, 3, 0.01, 0.01, 1, switchable=True),
             Line(3, 3, 1, 0.01, 0.01, 1, switchable=True))
    net = validate_network(Network(buses, lines, 1, np.zeros((3, 1)), np.zeros((3, 1)), 1, 1, 1))
    with pytest.raises(TopologyError, match=r"\[1, 2, 3\]"):
        decompose_groups(net)


def test_fixed_loop_is_reported():
    buses = (Bus(1, "substation", 0.9, 1.1, 5, -5, 5), Bus(2, "load", 0.9, 1.1))
    lines = (Line(1, 1, 2, 0.01, 0.01, 1), Line(2, 2, 1, 0.01, 0.01, 1))
    net = Network(buses, lines, 1, np.zeros((2, 1)), np.zeros((2, 1)), 1, 1, 1)
    with pytest.raises(TopologyError, match="loop"):
        decompose_groups(net)


def test_choices_conventions():
    groups = decompose_groups(NET54)
    assert config_from_choices(groups, (0,) * 5).closed_ids == frozenset()
    cfg = config_from_choices(groups, (1, 1, 2, 1, 1))
    assert cfg.closed_ids == {3, 5, 37, 13, 17}
    assert choices_from_config(groups, cfg) == (1, 1, 2, 1, 1)
    with pytest.raises(IndexError):
        config_from_choices(groups, (0, 0, 0, 4, 0))
    with pytest.raises(ValueError):
        config_from_choices(groups, (0, 0))


def test_exhaustive_enumeration_is_distinct_and_radial():
    groups = decompose_groups(NET54)
    cfgs = enumerate_configs(groups)
    assert len(cfgs) == len({c.key for c in cfgs}) == 324
    for c in cfgs:
        assert is_radial(NET54, c) and nx_is_radial(NET54, c.closed_ids)


def test_two_lines_of_one_group_close_a_loop():
    for g in decompose_groups(NET54):
        for a, b in itertools.combinations(g.lines, 2):
            cfg = SwitchConfig.from_closed(NET54.switchable_ids, {a, b})
            assert not is_radial(NET54, cfg)


def test_all_open_is_radial_on_shipped_networks():
    for net in (toy6(), NET54, synth138()):
        assert is_radial(net, SwitchConfig.all_open(net.switchable_ids))


def test_random_configs_match_oracle():
    rng = np.random.default_rng(3)
    sw = NET54.switchable_ids
    for _ in range(300):
        closed = {s for s in sw if rng.random() < 0.5}
        av = rng.random(NET54.n_line) > 0.1
        cfg = SwitchConfig.from_closed(sw, closed)
        assert is_radial(NET54, cfg, av) == nx_is_radial(NET54, closed, av)


def test_availability_can_break_a_loop():
    cfg = SwitchConfig.from_closed(NET54.switchable_ids, {3, 27})
    assert not is_radial(NET54, cfg)
    av = np.ones(NET54.n_line, bool)
    av[NET54.line_pos[27]] = False
    assert is_radial(NET54, cfg, av)


def test_relabeling_invariance():
    net = toy6()
    perm = {l.id: 100 - l.id for l in net.lines}
    lines = tuple(Line(perm[l.id], l.from_bus, l.to_bus, l.r, l.x, l.f_max, l.switchable,
                       l.wildfire_area) for l in net.lines)
    relabeled = Network(net.buses, lines, net.horizon, net.demand_p, net.demand_q, 1, 1, 1)
    a = {frozenset(perm[i] for i in g.lines) for g in decompose_groups(net)}
    b = {frozenset(g.lines) for g in decompose_groups(relabeled)}
    assert a == b


def _pairwise_witness(net):
    """Is there a loop that no single pair of switchable lines reveals?"""
    sw = net.switchable_ids
    ok1 = {s for s in sw if nx_is_radial(net, {s})}
    ok2 = {frozenset(p) for p in itertools.combinations(sorted(ok1), 2) if nx_is_radial(net, set(p))}
    for r in range(3, len(ok1) + 1):
        for combo in itertools.combinations(sorted(ok1), r):
            if all(frozenset(p) in ok2 for p in itertools.combinations(combo, 2)) \
                    and not nx_is_radial(net, set(combo)):
                return True
    return len(ok1) < len(sw)


@settings(max_examples=120, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_enumeration_equals_brute_force(seed):
    net = random_network(np.random.default_rng(seed), horizon=1)
    try:
        groups = decompose_groups(net)
    except TopologyError:
        assert _pairwise_witness(net) or not nx_is_radial(net, set())
        return
    assert sorted(i for g in groups for i in g.lines) == list(net.switchable_ids)
    enumerated = {c.closed_ids for c in enumerate_configs(groups)}
    assert len(enumerated) == count_topologies(groups)
    assert enumerated == set(brute_force_radial_sets(net))


@settings(max_examples=200, deadline=None)
@given(st.lists(st.integers(0, 3), min_size=5, max_size=5))
def test_round_trip_choices(raw):
    groups = decompose_groups(NET54)
    ch = tuple(min(k, g.n_configs - 1) for k, g in zip(raw, groups))
    assert choices_from_config(groups, config_from_choices(groups, ch)) == ch


def test_enumerate_choices_order_is_lexicographic():
    groups = decompose_groups(toy6())
    ch = list(enumerate_choices(groups))
    assert ch == sorted(ch) and len(ch) == 12
