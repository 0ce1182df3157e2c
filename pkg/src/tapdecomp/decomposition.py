"""Master network and subnetworks for the decomposition heuristic.

The master network holds every zone, every boundary node, the cut links, and
artificial links standing in for the subnetwork paths between an origin and a
boundary node or between a boundary node and a destination.  Artificial-link
costs are affine, ``c0 + m * x``.  Subnetworks contain no artificial links;
their demand is the native intra-subnetwork demand plus one artificial OD pair
per loaded artificial link.
"""
from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import ConsistencyError, InfeasibleError
from .network import ARTIFICIAL, PHYSICAL, Network, ODMatrix, PathFlowSolution, relative_gap
from .partitioning import Partition
from .shortest_path import dijkstra, three_stage_spp, transform_master

log = logging.getLogger(__name__)

ORIGIN_BOUNDARY = "origin-boundary"
BOUNDARY_DESTINATION = "boundary-destination"
FREEZE_AFTER = 3


@dataclass
class ArtificialLink:
    """Affine stand-in for the subnetwork paths from ``tail`` to ``head``.

    ``tail`` and ``head`` are full-network node indices; ``master_link`` is
    the link's index in the master network.  ``ff_path`` holds the free-flow
    shortest path in the owner's local link ids.
    """
    master_link: int
    tail: int
    head: int
    owner: int
    direction: str
    intercept: float
    slope: float = 0.0
    flow: float = 0.0
    ff_path: tuple = ()
    zero_streak: int = 0

    @property
    def frozen(self) -> bool:
        return self.zero_streak > FREEZE_AFTER

    def cost(self, x: float) -> float:
        return self.intercept + self.slope * x


@dataclass
class Decomposition:
    network: Network
    od_matrix: ODMatrix
    partition: Partition
    master: Network
    master_od: ODMatrix
    artificial: list
    subnets: list
    native_od: list
    subnet_od: list
    routing: str
    router: Callable = field(repr=False, default=None)
    local_maps: list = field(repr=False, default_factory=list)
    warnings: list = field(default_factory=list)

    @property
    def n_subnets(self) -> int:
        return len(self.subnets)

    def local(self, s: int, v: int) -> int:
        return int(self.local_maps[s][v])

    def summary(self) -> list:
        """``(name, nodes, physical links, artificial links)`` rows."""
        rows = [("master", self.master.n_nodes, int((self.master.kind == PHYSICAL).sum()),
                 int((self.master.kind == ARTIFICIAL).sum()))]
        for s, sub in enumerate(self.subnets):
            rows.append((f"subnetwork {s + 1}", sub.n_nodes, sub.n_links, int((sub.kind == ARTIFICIAL).sum())))
        return rows

    def format_summary(self) -> str:
        return "\n".join(f"{name}: ({n}, {p}, {a})" for name, n, p, a in self.summary())


def build(network: Network, od_matrix: ODMatrix, partition: Partition,
          routing: str = "auto") -> Decomposition:
    """Create the master network, the subnetworks and the artificial links.

    OD pairs whose endpoints share a subnetwork stay in the lowest shared
    one; the rest go to the master.  Each master origin gets an artificial
    link to every boundary node of its subnetwork(s) it can reach there, and
    each master destination one from every boundary node that reaches it.
    Links start at the free-flow shortest-path time with zero slope.

    Parameters
    ----------
    routing : {"auto", "three-stage", "transform"}
        Constrained search for the master.  ``auto`` picks the three-stage
        search when it is exact: two subnetworks, no node in both, and no
        zone that both carries artificial links and relays traffic over cut
        links.
    """
    partition.check(network)
    od_matrix.check(network)
    k = max(partition.n_subnets, 1)
    ls = partition.link_subnet(network)

    boundary = partition.boundary_nodes(network)
    subnets, local_maps = [], []
    for s in range(k):
        nodes = partition.subnet_nodes(s) if partition.n_nodes else []
        # boundary nodes terminate artificial OD pairs, so they act as zones
        sub = network.subnetwork(nodes, np.flatnonzero(ls == s), name=f"{network.name}-sub{s + 1}",
                                 extra_zones=boundary.get(s, []))
        loc = np.full(network.n_nodes, -1, dtype=np.int64)
        loc[sub.node_map] = np.arange(sub.n_nodes)
        subnets.append(sub)
        local_maps.append(loc)

    native = [dict() for _ in range(k)]
    master_pairs = {}
    for (o, d), v in od_matrix.items():
        common = partition.members(o) & partition.members(d)
        if common:
            s = min(common)
            native[s][(int(local_maps[s][o]), int(local_maps[s][d]))] = v
        else:
            master_pairs[(o, d)] = v
    native_od = [ODMatrix(n) for n in native]

    bset = sorted({v for vs in boundary.values() for v in vs})
    mnodes = sorted(set(network.zones.tolist()) | set(bset))
    mloc = np.full(network.n_nodes, -1, dtype=np.int64)
    mloc[mnodes] = np.arange(len(mnodes))

    cut = np.flatnonzero(ls < 0)
    origins = sorted({o for o, _ in master_pairs})
    dests = sorted({d for _, d in master_pairs})

    art = {}
    ff_costs = [sub.link_costs(np.zeros(sub.n_links)) for sub in subnets]
    for s in range(k):
        sub, loc = subnets[s], local_maps[s]
        bs = boundary.get(s, [])
        for o in origins:
            if s not in partition.members(o):
                continue
            lab = dijkstra(sub, int(loc[o]), ff_costs[s])
            for b in bs:
                if b == o or (o, b) in art:
                    continue
                c = lab.cost[loc[b]]
                if c < math.inf:
                    art[(o, b)] = ArtificialLink(-1, o, b, s, ORIGIN_BOUNDARY, c,
                                                 ff_path=lab.path_links(int(loc[b])))
        targets = [d for d in dests if s in partition.members(d)]
        if not targets:
            continue
        for b in bs:
            lab = dijkstra(sub, int(loc[b]), ff_costs[s])
            for d in targets:
                if d == b or (b, d) in art:
                    continue
                c = lab.cost[loc[d]]
                if c < math.inf:
                    art[(b, d)] = ArtificialLink(-1, b, d, s, BOUNDARY_DESTINATION, c,
                                                 ff_path=lab.path_links(int(loc[d])))
    artificial = [art[key] for key in sorted(art)]

    n_phys, n_art = len(cut), len(artificial)
    tail = np.concatenate([mloc[network.tail[cut]], [mloc[a.tail] for a in artificial]]).astype(np.int64)
    head = np.concatenate([mloc[network.head[cut]], [mloc[a.head] for a in artificial]]).astype(np.int64)
    ones = np.ones(n_art)
    master = Network(
        tail, head,
        np.concatenate([network.free_flow_time[cut], [a.intercept for a in artificial]]),
        np.concatenate([network.capacity[cut], ones]),
        np.concatenate([network.alpha[cut], 0 * ones]),
        np.concatenate([network.beta[cut], ones]),
        n_nodes=len(mnodes), labels=network.labels[mnodes],
        zones=[int(mloc[z]) for z in network.zones],
        first_thru_node=network.first_thru_node, through=network.through[mnodes],
        kind=np.concatenate([np.zeros(n_phys, np.int8), np.ones(n_art, np.int8)]),
        intercept=np.concatenate([np.zeros(n_phys), [a.intercept for a in artificial]]),
        slope=np.zeros(n_phys + n_art),
        name=f"{network.name}-master",
    )
    master.node_map = np.asarray(mnodes, dtype=np.int64)
    master.link_map = np.concatenate([cut, -np.ones(n_art, dtype=np.int64)])
    for idx, a in enumerate(artificial):
        a.master_link = n_phys + idx
    master_od = ODMatrix({(int(mloc[o]), int(mloc[d])): v for (o, d), v in master_pairs.items()})

    routing, router = _choose_router(master, partition, master_od, routing, k)
    dec = Decomposition(network, od_matrix, partition, master, master_od, artificial, subnets,
                        native_od, list(native_od), routing, router, local_maps)
    if len(master_od):
        costs = master.link_costs(np.zeros(master.n_links))
        for o in master_od.origins():
            lab = router(master, o, costs)
            for d, _ in master_od.destinations(o):
                if lab.cost[d] == math.inf:
                    raise InfeasibleError(f"OD pair ({master.labels[o]},{master.labels[d]}) "
                                          "has no path through the master network")
    return dec


def _choose_router(master, partition, master_od, routing, k):
    full_nodes = master.node_map
    sub_of = np.array([min(partition.members(int(v))) for v in full_nodes], dtype=np.int64)
    if routing == "auto":
        routing = "transform"
        shared = any(len(partition.members(int(v))) > 1 for v in full_nodes)
        if k == 2 and not shared:
            phys = master.kind == PHYSICAL
            on_cut = np.zeros(master.n_nodes, bool)
            on_cut[master.tail[phys]] = True
            on_cut[master.head[phys]] = True
            endpoints = {o for o, _ in master_od} | {d for _, d in master_od}
            if not any(master.through[z] and on_cut[z] for z in endpoints):
                routing = "three-stage"
    if routing == "three-stage":
        def router(net, origin, costs, _sub=sub_of):
            return three_stage_spp(net, origin, _sub, costs)
    elif routing == "transform":
        tm = transform_master(master)

        def router(net, origin, costs, _tm=tm):
            return _tm.route(origin, costs)
    else:
        raise ValueError(f"unknown routing {routing!r}")
    return routing, router


def update_subnet_demand(dec: Decomposition, master_solution: PathFlowSolution | None) -> list:
    """Replace artificial OD demand with the current artificial-link flows."""
    x = master_solution.link_flows if master_solution is not None else np.zeros(dec.master.n_links)
    extra = [dict() for _ in dec.subnets]
    for a in dec.artificial:
        a.flow = float(x[a.master_link])
        if a.flow > 0:
            key = (dec.local(a.owner, a.tail), dec.local(a.owner, a.head))
            extra[a.owner][key] = extra[a.owner].get(key, 0.0) + a.flow
    out = []
    for s, native in enumerate(dec.native_od):
        merged = dict(native.items())
        for key, v in extra[s].items():
            merged[key] = merged.get(key, 0.0) + v
        out.append(ODMatrix(merged))
    dec.subnet_od = out
    return out


def update_artificial_params(dec: Decomposition, subnet_solutions: list) -> None:
    """Refit every artificial link's affine cost at the current subnetwork state.

    With ``L`` the current shortest-path time from tail to head inside the
    owner subnetwork and ``m`` the sum of link-cost derivatives along that
    path, the intercept is ``L - m * flow`` so the model reproduces ``L`` at
    the current flow.  A negative intercept is clamped to zero with slope
    ``L / flow``, which keeps the cost non-negative and still exact at the
    current flow.  Unloaded links take ``L`` as intercept and the derivative
    sum along their free-flow path as slope; after more than three unloaded
    updates in a row they stop being refitted.
    """
    by_owner = {}
    for a in dec.artificial:
        by_owner.setdefault(a.owner, []).append(a)
    for s, links in by_owner.items():
        sub = dec.subnets[s]
        sol = subnet_solutions[s]
        x = sol.link_flows if sol is not None else np.zeros(sub.n_links)
        costs = sub.link_costs(x)
        derivs = sub.link_derivatives(x)
        trees = {}
        for a in links:
            if a.flow > 0:
                a.zero_streak = 0
            else:
                a.zero_streak += 1
                if a.frozen:
                    continue
            t = dec.local(s, a.tail)
            if t not in trees:
                trees[t] = dijkstra(sub, t, costs)
            lab = trees[t]
            h = dec.local(s, a.head)
            L = lab.cost[h]
            if L == math.inf:
                msg = (f"artificial link ({dec.network.labels[a.tail]},{dec.network.labels[a.head]}) "
                       f"lost its subnetwork path; keeping previous parameters")
                log.warning(msg)
                dec.warnings.append(msg)
                continue
            if a.flow > 0:
                m = max(float(derivs[list(lab.path_links(h))].sum()), 0.0)
                c0 = L - m * a.flow
                if c0 < 0:
                    c0, m = 0.0, L / a.flow
            else:
                c0 = L
                m = max(float(derivs[list(a.ff_path)].sum()), 0.0)
            a.intercept, a.slope = c0, m
            dec.master.intercept[a.master_link] = c0
            dec.master.slope[a.master_link] = m


def _fractions(dec: Decomposition, subnet_solutions: list) -> list:
    """Per subnetwork: local pair -> list of (full link tuple, share)."""
    out = []
    for s, sol in enumerate(subnet_solutions):
        table = {}
        if sol is not None:
            lmap = dec.subnets[s].link_map
            for key, ps in sol.paths.items():
                total = math.fsum(ps.values())
                if total > 0:
                    table[key] = [(tuple(int(lmap[a]) for a in p), h / total) for p, h in ps.items() if h > 0]
        out.append(table)
    return out


def map_to_full(dec: Decomposition, master_solution: PathFlowSolution | None,
                subnet_solutions: list) -> PathFlowSolution:
    """Express the master and subnetwork solutions as full-network paths.

    Each artificial link on a master path is replaced by the owner
    subnetwork's used paths for the matching OD pair, split in proportion to
    their flows; intra-subnetwork demand is split the same way.
    """
    frac = _fractions(dec, subnet_solutions)
    paths = {}
    for s, native in enumerate(dec.native_od):
        nmap = dec.subnets[s].node_map
        for key, dem in native.items():
            parts = frac[s].get(key)
            if not parts:
                raise ConsistencyError(f"subnetwork {s + 1} has no flow for its OD pair "
                                       f"({dec.network.labels[nmap[key[0]]]},{dec.network.labels[nmap[key[1]]]})")
            full = (int(nmap[key[0]]), int(nmap[key[1]]))
            ps = paths.setdefault(full, {})
            for p, share in parts:
                ps[p] = ps.get(p, 0.0) + dem * share

    if master_solution is not None and len(dec.master_od):
        master = dec.master
        art_of = {a.master_link: a for a in dec.artificial}
        mmap = master.node_map
        for (mo, md), mps in master_solution.paths.items():
            full = (int(mmap[mo]), int(mmap[md]))
            ps = paths.setdefault(full, {})
            for mpath, h in mps.items():
                if h <= 0:
                    continue
                segments = []
                for ml in mpath:
                    a = art_of.get(ml)
                    if a is None:
                        segments.append([((int(master.link_map[ml]),), 1.0)])
                        continue
                    parts = frac[a.owner].get((dec.local(a.owner, a.tail), dec.local(a.owner, a.head)))
                    if not parts:
                        raise ConsistencyError(
                            f"artificial link ({dec.network.labels[a.tail]},{dec.network.labels[a.head]}) "
                            f"carries {h:g} but subnetwork {a.owner + 1} routes no flow for it")
                    segments.append(parts)
                for combo in itertools.product(*segments):
                    p = tuple(itertools.chain.from_iterable(c[0] for c in combo))
                    share = math.prod(c[1] for c in combo)
                    ps[p] = ps.get(p, 0.0) + h * share
    ordered = {k: paths[k] for k in dec.od_matrix if k in paths}
    missing = [k for k in dec.od_matrix if k not in paths]
    if missing:
        o, d = missing[0]
        raise ConsistencyError(f"no mapped flow for OD pair ({dec.network.labels[o]},{dec.network.labels[d]})")
    return PathFlowSolution(dec.network, ordered)


def full_gap(network: Network, od_matrix: ODMatrix, mapped_solution: PathFlowSolution) -> float:
    """Relative gap of the mapped flows on the full network."""
    return relative_gap(network, od_matrix, mapped_solution.link_flows)
