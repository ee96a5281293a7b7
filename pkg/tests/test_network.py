import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from odassign.errors import ContractViolation, StructuralError
from odassign.network import (DemandMatrix, Objective, RouteSet, bpr_time, check_joint_action,
                              load_network, marginal_time, uniform_action)
from odassign.paths import build_route_sets

from conftest import make_net, small_instances


@pytest.mark.parametrize("flow, expected", [(0.0, 2.0), (300.0, 2.3), (600.0, 6.8)])
def test_bpr_hand_values(flow, expected):
    assert bpr_time(flow, 2.0, 300.0) == pytest.approx(expected, rel=1e-12)


def test_marginal_hand_values():
    assert marginal_time(0.0, 2.0, 300.0) == 2.0
    assert marginal_time(300.0, 2.0, 300.0) == pytest.approx(3.5, rel=1e-12)
    # power 0: flow-independent
    vals = marginal_time(np.array([0.0, 10.0, 1e4]), 2.0, 300.0, 0.15, 0.0)
    np.testing.assert_allclose(vals, 2.0 * 1.15)


def test_negative_flow_rejected():
    with pytest.raises(ValueError):
        bpr_time(-1.0, 1.0, 1.0)
    with pytest.raises(ValueError):
        marginal_time(-1.0, 1.0, 1.0)


@settings(max_examples=200)
@given(st.floats(0, 1e4), st.floats(0, 1e4), st.floats(0.01, 100), st.floats(1, 1e4),
       st.floats(0, 1), st.floats(0, 6))
def test_bpr_monotone_and_marginal_dominates(x1, x2, t0, w, b, p):
    lo, hi = min(x1, x2), max(x1, x2)
    assert bpr_time(lo, t0, w, b, p) <= bpr_time(hi, t0, w, b, p) * (1 + 1e-12)
    assert marginal_time(lo, t0, w, b, p) <= marginal_time(hi, t0, w, b, p) * (1 + 1e-12)
    assert marginal_time(hi, t0, w, b, p) >= bpr_time(hi, t0, w, b, p) * (1 - 1e-12)


def test_network_validation():
    with pytest.raises(StructuralError):
        make_net(2, [(0, 0)])
    with pytest.raises(StructuralError):
        make_net(2, [(0, 1), (0, 1)])
    with pytest.raises(StructuralError):
        make_net(2, [(0, 1)], cap=[0.0])
    with pytest.raises(StructuralError):
        make_net(2, [(0, 1)], t0=[-1.0])
    with pytest.raises(StructuralError):
        make_net(2, [(0, 2)])


def test_adjacency_sorted_by_link_index():
    net = make_net(3, [(1, 2), (0, 2), (0, 1)])
    assert net.out_links[net.out_ptr[0]:net.out_ptr[1]].tolist() == [1, 2]
    assert net.in_links[net.in_ptr[2]:net.in_ptr[3]].tolist() == [0, 1]
    assert net.out_degree().tolist() == [2, 1, 0]


def test_demand_matrix_contract():
    with pytest.raises(StructuralError):
        DemandMatrix([0], [1], [0.0])
    with pytest.raises(StructuralError):
        DemandMatrix([0, 0], [1, 1], [1.0, 2.0])
    dm = DemandMatrix([0, 1], [1, 0], [2.0, 3.0])
    assert dm.scaled([0.5, 2.0]).demand.tolist() == [1.0, 6.0]


def two_route_instance():
    # links: 0:(0->1) shared, 1:(1->2) route a, 2:(1->3) route b part, 3:(3->2)
    net = make_net(4, [(0, 1), (1, 2), (1, 3), (3, 2)])
    dm = DemandMatrix([0], [2], [8.0])
    rs = RouteSet((((0, 1), (0, 2, 3)),), k=6)
    return net, dm, rs


def test_load_network_shared_link_hand_example():
    net, dm, rs = two_route_instance()
    act = np.zeros((1, 6))
    act[0, :2] = 0.5
    fs = load_network(net, rs, dm, act)
    np.testing.assert_allclose(fs.link_flows, [8, 4, 4, 4])
    np.testing.assert_allclose(fs.path_flows, [4, 4])
    np.testing.assert_allclose(fs.link_times, bpr_time(fs.link_flows, 1.0, 1.0))
    np.testing.assert_allclose(fs.path_costs, [fs.link_times[0] + fs.link_times[1],
                                              fs.link_times[0] + fs.link_times[2]
                                              + fs.link_times[3]])


def test_load_network_so_uses_marginal_costs():
    net, dm, rs = two_route_instance()
    fs = load_network(net, rs, dm, uniform_action(rs), Objective.SO)
    np.testing.assert_allclose(fs.link_times, marginal_time(fs.link_flows, 1.0, 1.0))
    np.testing.assert_allclose(fs.bpr_times, bpr_time(fs.link_flows, 1.0, 1.0))


def test_zero_demand_gives_free_flow_times(ow):
    net, dm, _ = ow
    rs = build_route_sets(net, dm)
    tiny = DemandMatrix(dm.origins, dm.destinations, np.full(dm.num_agents, 1e-300))
    fs = load_network(net, rs, tiny, uniform_action(rs))
    np.testing.assert_allclose(fs.link_times, net.t0)


def test_joint_action_contract():
    net, dm, rs = two_route_instance()
    ok = np.zeros((1, 6))
    ok[0, 0] = 1.0
    check_joint_action(rs, ok)
    for bad in (np.zeros((1, 6)), np.full((1, 6), 1 / 6), np.zeros((2, 6))):
        with pytest.raises(ContractViolation):
            check_joint_action(rs, bad)
    neg = ok.copy()
    neg[0, :2] = [1.5, -0.5]
    with pytest.raises(ContractViolation):
        check_joint_action(rs, neg)


def test_routeset_padding_roundtrip(sioux):
    net, dm, _ = sioux
    rs = build_route_sets(net, dm)
    flat = np.arange(rs.num_routes, dtype=float)
    padded = rs.to_padded(flat)
    np.testing.assert_array_equal(rs.from_padded(padded), flat)
    assert np.all(padded[~rs.mask()] == 0)
    np.testing.assert_allclose(rs.route_sums(np.ones(net.num_links)), rs.route_lengths())


def test_routeset_requires_routes():
    with pytest.raises(StructuralError):
        RouteSet(((),), k=6)
    with pytest.raises(StructuralError):
        RouteSet((((0,),) * 7,), k=6)


@settings(max_examples=40, deadline=None)
@given(small_instances())
def test_flow_conservation_and_sp_bound(inst):
    net, dm, rng = inst
    rs = build_route_sets(net, dm, 4)
    act = np.where(rs.mask(), rng.uniform(0.01, 1, size=(rs.num_agents, 6)), 0.0)
    act /= act.sum(axis=1, keepdims=True)
    fs = load_network(net, rs, dm, act)
    per_agent = np.bincount(rs.route_agent, weights=fs.path_flows, minlength=rs.num_agents)
    np.testing.assert_allclose(per_agent, dm.demand, rtol=1e-9)
    assert np.all(fs.link_flows >= 0)
    assert np.all(fs.link_times >= net.t0)
    best = np.minimum.reduceat(fs.path_costs, rs.agent_ptr[:-1])
    assert np.all(fs.sp_costs <= best * (1 + 1e-12))
