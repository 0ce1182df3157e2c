import math
from collections import deque

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tapdecomp.decomposition import (
    BOUNDARY_DESTINATION, ORIGIN_BOUNDARY, build, full_gap, map_to_full, update_artificial_params,
    update_subnet_demand,
)
from tapdecomp.equilibrium import SolverConfig, solve
from tapdecomp.errors import ConsistencyError, InfeasibleError
from tapdecomp.instances import synthetic_grid, two_cluster
from tapdecomp.network import ARTIFICIAL, Network, ODMatrix, PathFlowSolution, tstt
from tapdecomp.partitioning import Partition, partition_network
from tapdecomp.shortest_path import has_consecutive_artificial


def reachable_within(net, part, s, origin):
    """Nodes reachable from ``origin`` on subnetwork ``s`` links, never
    passing through a node closed to through traffic."""
    ls = part.link_subnet(net)
    out = {}
    for a in np.flatnonzero(ls == s).tolist():
        out.setdefault(int(net.tail[a]), []).append(int(net.head[a]))
    seen = {origin}
    queue = deque([origin])
    while queue:
        v = queue.popleft()
        if v != origin and not net.through[v]:
            continue
        for u in out.get(v, []):
            if u not in seen:
                seen.add(u)
                queue.append(u)
    return seen


def expected_artificial(net, od, part):
    inter = [(o, d) for (o, d), _ in od.items() if not part.members(o) & part.members(d)]
    origins = {o for o, _ in inter}
    dests = {d for _, d in inter}
    bnd = part.boundary_nodes(net)
    pairs = set()
    for s, bs in bnd.items():
        for o in origins:
            if s in part.members(o):
                r = reachable_within(net, part, s, o)
                pairs |= {(o, b) for b in bs if b != o and b in r}
        for b in bs:
            r = reachable_within(net, part, s, b)
            pairs |= {(b, d) for d in dests if s in part.members(d) and d != b and d in r}
    return pairs


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 5000), rows=st.integers(3, 5), cols=st.integers(3, 6),
       zones=st.integers(3, 7))
def test_artificial_links_match_reachability(seed, rows, cols, zones):
    net, od = synthetic_grid(rows, cols, zones, seed=seed)
    part = partition_network(net, "sdda", seed=seed)
    dec = build(net, od, part)
    got = {(a.tail, a.head) for a in dec.artificial}
    assert got == expected_artificial(net, od, part)
    assert int((dec.master.kind == ARTIFICIAL).sum()) == len(got)
    for a in dec.artificial:
        assert a.owner in part.members(a.tail) and a.owner in part.members(a.head)
        assert a.slope == 0.0 and a.flow == 0.0
        assert a.direction in (ORIGIN_BOUNDARY, BOUNDARY_DESTINATION)
    # no subnetwork carries an artificial link
    assert all(int((sub.kind == ARTIFICIAL).sum()) == 0 for sub in dec.subnets)
    assert all(row[3] == 0 for row in dec.summary()[1:])
    # every demand unit sits in exactly one level
    total = sum(o.total() for o in dec.native_od) + dec.master_od.total()
    assert total == pytest.approx(od.total(), abs=1e-9)
    # master routes never chain two artificial links
    costs = dec.master.link_costs(np.zeros(dec.master.n_links))
    for o in dec.master_od.origins():
        lab = dec.router(dec.master, o, costs)
        for d, _ in dec.master_od.destinations(o):
            links = lab.path_links(d)
            assert links and not has_consecutive_artificial(dec.master, links)


def test_artificial_intercepts_are_free_flow_times():
    net, od, assign = two_cluster()
    dec = build(net, od, Partition(assign))
    fft = [sub.link_costs(np.zeros(sub.n_links)) for sub in dec.subnets]
    for a in dec.artificial:
        assert a.intercept == pytest.approx(sum(fft[a.owner][list(a.ff_path)]))
    assert dec.routing == "three-stage"


def test_single_subnet_is_degenerate():
    net, od = synthetic_grid(4, 4, 4, seed=1)
    part = Partition(np.zeros(net.n_nodes, dtype=np.int64))
    dec = build(net, od, part)
    assert dec.master.n_links == 0 and len(dec.master_od) == 0 and dec.artificial == []
    assert dec.n_subnets == 1 and dec.subnets[0].n_links == net.n_links
    sub_od = update_subnet_demand(dec, None)[0]
    assert sub_od == dec.native_od[0]
    res = solve(dec.subnets[0], sub_od, config=SolverConfig(target_rg=1e-5))
    mapped = map_to_full(dec, None, [res.solution])
    assert full_gap(net, od, mapped) == pytest.approx(res.relative_gap, rel=1e-9, abs=1e-15)


# ------------------------------------------------------ demand between levels
def master_path(dec, o, d):
    costs = dec.master.link_costs(np.zeros(dec.master.n_links))
    return tuple(dec.router(dec.master, o, costs).path_links(d))


def test_update_subnet_demand_copies_artificial_flow():
    net, od, assign = two_cluster()
    dec = build(net, od, Partition(assign))
    m = dec.master
    o, d = dec.master_od.origins()[0], dec.master_od.destinations(dec.master_od.origins()[0])[0][0]
    path = master_path(dec, o, d)
    sol = PathFlowSolution(m, {(o, d): {path: 37.5}})
    out = update_subnet_demand(dec, sol)
    art = {a.master_link: a for a in dec.artificial}
    first = art[path[0]]
    key = (dec.local(first.owner, first.tail), dec.local(first.owner, first.head))
    assert out[first.owner][key] == 37.5
    assert first.flow == 37.5
    # unloaded artificial links add no demand
    for a in dec.artificial:
        if a.master_link not in path:
            k = (dec.local(a.owner, a.tail), dec.local(a.owner, a.head))
            assert k not in out[a.owner] or k in dec.native_od[a.owner]
    # totals per subnetwork: native + artificial flow owned by it
    for s in range(dec.n_subnets):
        owned = sum(a.flow for a in dec.artificial if a.owner == s)
        assert out[s].total() == pytest.approx(dec.native_od[s].total() + owned)


# --------------------------------------------------------- parameter refit
def chain(t0=10.0, cap=100.0, alpha=0.15, beta=4.0):
    """Zone 0 -> 2 -> 3 -> zone 1, cut at 2 -> 3; the first link is the
    only path from the origin to its boundary node."""
    net = Network([0, 2, 3], [2, 3, 1], [t0, 1.0, 1.0], [cap, 1e4, 1e4], [alpha, 0.15, 0.15],
                  [beta, 4.0, 4.0], n_nodes=4, zones=(0, 1), first_thru_node=3)
    part = Partition(np.array([0, 1, 0, 1]))
    return net, part


def refit_once(flow, **kw):
    net, part = chain(**kw)
    dec = build(net, ODMatrix({(0, 1): flow}), part)
    o, d = next(iter(dec.master_od))
    path = master_path(dec, o, d)
    update_subnet_demand(dec, PathFlowSolution(dec.master, {(o, d): {path: flow}}))
    subs = [solve(sub, dec.subnet_od[s], config=SolverConfig(target_rg=1e-10)).solution
            for s, sub in enumerate(dec.subnets)]
    update_artificial_params(dec, subs)
    return dec, next(a for a in dec.artificial if a.owner == 0)


def test_refit_single_link_example():
    dec, a = refit_once(100.0)
    # L = 10 (1 + 0.15) = 11.5, m = 10 * 0.15 * 4 / 100 = 0.06
    assert a.slope == pytest.approx(0.06, rel=1e-12)
    assert a.intercept == pytest.approx(5.5, rel=1e-12)
    assert a.cost(100.0) == pytest.approx(11.5, rel=1e-12)
    assert dec.master.link_costs(np.eye(dec.master.n_links)[a.master_link] * 100.0)[a.master_link] \
        == pytest.approx(11.5, rel=1e-12)


def test_refit_clamps_negative_intercept():
    # x = 2u, alpha = 1: L = 10 * 17 = 170, m * x = 3.2 * 200 = 640 > L
    dec, a = refit_once(200.0, alpha=1.0)
    assert a.intercept == 0.0
    assert a.slope == pytest.approx(170.0 / 200.0, rel=1e-12)
    assert a.cost(200.0) == pytest.approx(170.0, rel=1e-12)


def test_uncongested_refit_keeps_free_flow():
    net, part = chain()
    dec = build(net, ODMatrix({(0, 1): 5.0}), part)
    update_subnet_demand(dec, None)
    update_artificial_params(dec, [None, None])
    for a in dec.artificial:
        assert a.slope == 0.0
        assert a.intercept == pytest.approx(a.cost(0.0))
    assert next(a for a in dec.artificial if a.owner == 0).intercept == 10.0


def test_unloaded_links_freeze_after_three_updates():
    net, part = chain()
    dec = build(net, ODMatrix({(0, 1): 5.0}), part)
    a = next(a for a in dec.artificial if a.owner == 0)
    sub = dec.subnets[0]
    k = int(np.flatnonzero(sub.link_map == 0)[0])
    busy = PathFlowSolution(sub, {(dec.local(0, 0), dec.local(0, 2)): {(k,): 100.0}})
    update_subnet_demand(dec, None)
    for step in range(1, 4):
        a.intercept = -1.0
        update_artificial_params(dec, [busy, None])
        assert a.zero_streak == step and not a.frozen
        assert a.intercept == pytest.approx(11.5)
    a.intercept = -1.0
    update_artificial_params(dec, [busy, None])
    assert a.frozen and a.intercept == -1.0
    # a loaded update resets the streak
    o, d = next(iter(dec.master_od))
    update_subnet_demand(dec, PathFlowSolution(dec.master, {(o, d): {master_path(dec, o, d): 5.0}}))
    update_artificial_params(dec, [busy, None])
    assert a.zero_streak == 0 and a.intercept >= 0


# ------------------------------------------------------------------- mapping
def split_instance():
    """Zone 0 reaches boundary node 4 over 2->4 or 2->3->4; cut 4->5; 5 -> zone 1."""
    t = [0, 2, 2, 3, 4, 5]
    h = [2, 4, 3, 4, 5, 1]
    net = Network(t, h, np.ones(6), np.full(6, 50.0), n_nodes=6, zones=(0, 1), first_thru_node=3)
    part = Partition(np.array([0, 1, 0, 0, 0, 1]))
    od = ODMatrix({(0, 1): 10.0})
    dec = build(net, od, part)
    return net, od, dec


def split_solutions(net, dec, shares=(6.0, 4.0)):
    (o, d), = list(dec.master_od)
    mpath = master_path(dec, o, d)
    msol = PathFlowSolution(dec.master, {(o, d): {mpath: sum(shares)}})
    update_subnet_demand(dec, msol)
    s0, s1 = dec.subnets

    def loc(sub, links):
        return tuple(int(np.flatnonzero(sub.link_map == a)[0]) for a in links)

    sol0 = PathFlowSolution(s0, {(dec.local(0, 0), dec.local(0, 4)): {
        loc(s0, [0, 1]): shares[0], loc(s0, [0, 2, 3]): shares[1]}})
    sol1 = PathFlowSolution(s1, {(dec.local(1, 5), dec.local(1, 1)): {loc(s1, [5]): sum(shares)}})
    return msol, [sol0, sol1]


def test_map_splits_proportionally():
    net, od, dec = split_instance()
    msol, subs = split_solutions(net, dec)
    mapped = map_to_full(dec, msol, subs)
    assert mapped.paths[(0, 1)] == {(0, 1, 4, 5): 6.0, (0, 2, 3, 4, 5): 4.0}
    x = mapped.link_flows
    assert x.tolist() == [10.0, 6.0, 4.0, 4.0, 10.0, 10.0]
    # total travel time from the link vector and from the paths
    c = net.link_costs(x)
    by_path = math.fsum(h * c[list(p)].sum() for ps in mapped.paths.values() for p, h in ps.items())
    assert tstt(net, x) == pytest.approx(by_path, rel=1e-9)


def test_map_requires_subnet_flow_for_loaded_artificial_link():
    net, od, dec = split_instance()
    msol, subs = split_solutions(net, dec)
    subs[0] = PathFlowSolution(dec.subnets[0], {})
    with pytest.raises(ConsistencyError):
        map_to_full(dec, msol, subs)


def test_unreachable_master_pair_is_infeasible():
    # the only cut link points from subnetwork 0 to 1; demand runs the other way
    t = [0, 2, 2, 3, 1]
    h = [2, 0, 3, 1, 3]
    net = Network(t, h, np.ones(5), np.ones(5), n_nodes=4, zones=(0, 1), first_thru_node=3)
    with pytest.raises(InfeasibleError):
        build(net, ODMatrix({(1, 0): 1.0}), Partition(np.array([0, 1, 0, 1])))


def one_round(net, od, part, routing="auto", gap=1e-8):
    dec = build(net, od, part, routing=routing)
    cfg = SolverConfig(target_rg=gap, max_iterations=500)
    msol = solve(dec.master, dec.master_od, config=cfg, router=dec.router).solution
    update_subnet_demand(dec, msol)
    subs = [solve(sub, dec.subnet_od[s], config=cfg).solution for s, sub in enumerate(dec.subnets)]
    return dec, msol, subs, map_to_full(dec, msol, subs)


@pytest.mark.parametrize("routing", ["three-stage", "transform"])
def test_round_conserves_demand(routing):
    net, od, assign = two_cluster()
    dec, msol, subs, mapped = one_round(net, od, Partition(assign), routing)
    for key, dem in od.items():
        assert math.fsum(mapped.paths[key].values()) == pytest.approx(dem, abs=1e-9)
    for ps in msol.paths.values():
        for p in ps:
            assert not has_consecutive_artificial(dec.master, p)
    assert 0 <= full_gap(net, od, mapped) < 0.05


def test_routings_agree_on_master_costs():
    net, od, assign = two_cluster()
    part = Partition(assign)
    a = build(net, od, part, routing="three-stage")
    b = build(net, od, part, routing="transform")
    costs = a.master.link_costs(np.zeros(a.master.n_links))
    for o in a.master_od.origins():
        la, lb = a.router(a.master, o, costs), b.router(b.master, o, costs)
        for d, _ in a.master_od.destinations(o):
            assert la.cost[d] == pytest.approx(lb.cost[d], abs=1e-12)


def test_format_summary():
    net, od, dec = split_instance()
    text = dec.format_summary()
    assert text.splitlines()[0] == "master: (4, 1, 2)"
    assert text.splitlines()[1].endswith(", 0)")
