"""One-to-all shortest paths, including the master-network routines.

Master networks mix physical links with artificial links, and a usable master
path never traverses two artificial links in a row.  Two routines respect that
constraint: :func:`transform_master` rewrites the master so plain
:func:`dijkstra` cannot produce a violating path, and :func:`three_stage_spp`
exploits the fixed origin -> boundary -> boundary -> destination layout of a
two-subnetwork master.
"""
from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Iterator, Sequence

import numpy as np

from .errors import DomainError, StructuralError, UnsupportedTopologyError

if TYPE_CHECKING:
    from .network import Network

INF = math.inf


@dataclass
class LabelSet:
    """Result of a one-to-all search.

    Attributes
    ----------
    origin : int
    cost : list of float
        Shortest cost per node, ``inf`` when unreachable.
    back_node, back_link : list of int
        Predecessor node and link, ``-1`` at the origin or unreachable nodes.
    explicit_paths : dict
        Destination -> tuple of link ids, for destinations whose path cannot be
        rebuilt from back labels (three-stage search only).
    """
    origin: int
    cost: list
    back_node: list
    back_link: list
    explicit_paths: dict = field(default_factory=dict)

    def path_links(self, dest: int) -> tuple | None:
        if dest in self.explicit_paths:
            return self.explicit_paths[dest]
        if self.cost[dest] == INF:
            return None
        links = []
        node = dest
        while node != self.origin:
            a = self.back_link[node]
            if a < 0:
                return None
            links.append(a)
            node = self.back_node[node]
        return tuple(reversed(links))

    def path_nodes(self, network: "Network", dest: int) -> list | None:
        links = self.path_links(dest)
        if links is None:
            return None
        return network.path_nodes(links) if links else [self.origin]


def _check_costs(costs) -> list:
    c = np.asarray(costs, dtype=float)
    if c.size and (c.min() < 0 or not np.isfinite(c).all()):
        bad = np.flatnonzero(~(c >= 0))
        if bad.size:
            raise DomainError(f"negative or undefined link cost {c[bad[0]]} on link {bad[0]}")
        raise DomainError("non-finite link cost")
    return c.tolist()


def dijkstra(network: "Network", origin: int, costs, group: Sequence[int] | None = None,
             allowed: np.ndarray | None = None) -> LabelSet:
    """Label-setting shortest paths from ``origin`` with non-negative costs.

    Nodes closed to through traffic are never scanned unless they are the
    origin.  With ``group`` given, a closed node may still be left over links
    to nodes of its own group, and nodes of the origin's group are scanned
    freely (used by transformed master networks, where a zone is split into
    several child nodes).  ``allowed`` optionally masks the usable links.

    Ties are broken by lower node id (heap entries are ``(cost, node)``) and a
    label only changes on strict improvement, so paths are deterministic.
    """
    c = _check_costs(costs)
    n = network.n_nodes
    fstar = network.fstar
    through = network.through
    cost = [INF] * n
    back_node = [-1] * n
    back_link = [-1] * n
    done = [False] * n
    cost[origin] = 0.0
    heap = [(0.0, origin)]
    ok = None if allowed is None else np.asarray(allowed, dtype=bool).tolist()
    og = None if group is None else group[origin]
    while heap:
        ci, i = heapq.heappop(heap)
        if done[i]:
            continue
        done[i] = True
        if i != origin and not through[i]:
            if group is None:
                continue
            if group[i] != og:
                gi = group[i]
                for a, j in fstar[i]:
                    if group[j] == gi and (ok is None or ok[a]):
                        nc = ci + c[a]
                        if nc < cost[j]:
                            cost[j] = nc
                            back_node[j] = i
                            back_link[j] = a
                            heapq.heappush(heap, (nc, j))
                continue
        for a, j in fstar[i]:
            if ok is not None and not ok[a]:
                continue
            nc = ci + c[a]
            if nc < cost[j]:
                cost[j] = nc
                back_node[j] = i
                back_link[j] = a
                heapq.heappush(heap, (nc, j))
    return LabelSet(origin, cost, back_node, back_link)


# --------------------------------------------------------------- transformation
@dataclass
class TransformedMaster:
    """Master network rewritten so that plain Dijkstra respects the
    no-consecutive-artificial-links rule.

    Attributes
    ----------
    master : Network
    network : Network
        The transformed network.  Its links are copies of master links or
        zero-cost connectors.
    parent : ndarray
        Transformed node -> master node.
    orig_link : ndarray
        Transformed link -> master link, ``-1`` for connectors.
    source : ndarray
        Master node -> transformed node a search from that node starts at.
    sinks : list of tuple
        Master node -> transformed nodes whose labels give the cost of
        reaching it.
    role : dict
        Split master node -> "origin", "destination" or "both".
    """
    master: "Network"
    network: "Network"
    parent: np.ndarray
    orig_link: np.ndarray
    source: np.ndarray
    sinks: list
    role: dict

    @property
    def n_connectors(self) -> int:
        return int((self.orig_link < 0).sum())

    def costs(self, master_costs) -> np.ndarray:
        mc = np.asarray(master_costs, dtype=float)
        return np.where(self.orig_link >= 0, mc[np.maximum(self.orig_link, 0)], 0.0)

    def to_master(self, links: Sequence[int]) -> tuple:
        """Master links of a transformed path, connectors removed."""
        return tuple(int(self.orig_link[a]) for a in links if self.orig_link[a] >= 0)

    def map_nodes(self, nodes: Sequence[int]) -> list:
        """Child -> parent, then collapse consecutive duplicates."""
        out = []
        for v in nodes:
            p = int(self.parent[v])
            if not out or out[-1] != p:
                out.append(p)
        return out

    def route(self, origin: int, master_costs) -> LabelSet:
        """Constrained one-to-all search expressed in master terms."""
        net = self.network
        ls = dijkstra(net, int(self.source[origin]), self.costs(master_costs), group=self.parent)
        n = self.master.n_nodes
        cost = [INF] * n
        best = [-1] * n
        for m in range(n):
            for v in self.sinks[m]:
                if ls.cost[v] < cost[m]:
                    cost[m] = ls.cost[v]
                    best[m] = v
        cost[origin] = 0.0
        paths = {}
        back_node = [-1] * n
        back_link = [-1] * n
        for m in range(n):
            if m == origin or best[m] < 0:
                continue
            p = self.to_master(ls.path_links(best[m]))
            paths[m] = p
            back_link[m] = p[-1]
            back_node[m] = int(self.master.tail[p[-1]])
        return LabelSet(origin, cost, back_node, back_link, paths)


def _art_roles(master: "Network") -> tuple:
    art = master.kind == 1
    has_out = np.zeros(master.n_nodes, bool)
    has_in = np.zeros(master.n_nodes, bool)
    has_out[master.tail[art]] = True
    has_in[master.head[art]] = True
    return has_out, has_in


def transform_master(master: "Network", origins=None, destinations=None) -> TransformedMaster:
    """Split nodes so that no path can chain two artificial links.

    Every zone gets children ``z_p`` (entered by physical links, may leave by
    any link) and ``z_a`` (entered by artificial links, may leave only by
    physical links) tied to the zone by zero-cost connectors.  A zone acting
    as both origin and destination keeps its own node as the origin copy and
    gains a separate destination copy.  Non-zone nodes that have both incoming
    and outgoing artificial links are split the same way, with both roles,
    since a path could otherwise enter and leave them artificially.  Children
    inherit the through status of their parent; children with no incident
    non-connector link are removed.

    Parameters
    ----------
    origins, destinations : iterable of int, optional
        Zone roles.  By default a zone is an origin if it has any outgoing
        link and a destination if it has an incoming artificial link.
    """
    from .network import ARTIFICIAL, PHYSICAL, Network

    if not np.isin(master.kind, (PHYSICAL, ARTIFICIAL)).all():
        raise StructuralError("master link with unknown kind")
    n = master.n_nodes
    has_out, has_in = _art_roles(master)
    # a zone can start paths over any outgoing link, physical ones included
    any_out = np.zeros(n, bool)
    any_out[master.tail] = True
    is_origin = any_out if origins is None else np.isin(np.arange(n), list(origins))
    is_dest = has_in.copy() if destinations is None else np.isin(np.arange(n), list(destinations))
    zones = set(master.zones.tolist())

    role = {}
    for z in range(n):
        if z in zones:
            if is_origin[z] and is_dest[z]:
                role[z] = "both"
            elif is_origin[z]:
                role[z] = "origin"
            elif is_dest[z]:
                role[z] = "destination"
        elif has_in[z] and has_out[z]:
            role[z] = "both"

    parent = list(range(n))
    through = master.through.tolist()
    labels = master.labels.tolist()
    p_child, a_child, d_copy = {}, {}, {}

    def new_node(z):
        parent.append(z)
        through.append(master.through[z])
        labels.append(labels[z])
        return len(parent) - 1

    for z, r in role.items():
        p_child[z] = new_node(z)
        a_child[z] = new_node(z)
        if r == "both":
            d_copy[z] = new_node(z)

    tails, heads, orig = [], [], []

    def add(i, j, a):
        tails.append(i)
        heads.append(j)
        orig.append(a)

    for a in range(master.n_links):
        i, j = int(master.tail[a]), int(master.head[a])
        art = master.kind[a] == ARTIFICIAL
        if j in role:
            heads_j = [a_child[j] if art else p_child[j]]
        else:
            heads_j = [j]
        if i in role:
            tails_i = [p_child[i]] if art else [p_child[i], a_child[i]]
        else:
            tails_i = [i]
        for ti in tails_i:
            for hj in heads_j:
                add(ti, hj, a)

    # drop children without any copied master link, then add connectors
    used = set(tails) | set(heads)
    keep = [v < n or v in used for v in range(len(parent))]
    for v in d_copy.values():
        keep[v] = True
    for z, r in role.items():
        zp, za = p_child[z], a_child[z]
        for child in (zp, za):
            if not keep[child]:
                continue
            if r == "origin":
                add(z, child, -1)
            elif r == "destination":
                add(child, z, -1)
            else:
                add(z, child, -1)
                add(child, d_copy[z], -1)

    index = np.cumsum(keep) - 1
    kept = np.flatnonzero(keep)
    tails = index[np.asarray(tails, dtype=np.int64)] if tails else np.zeros(0, np.int64)
    heads = index[np.asarray(heads, dtype=np.int64)] if heads else np.zeros(0, np.int64)
    orig = np.asarray(orig, dtype=np.int64)
    src = np.maximum(orig, 0)
    conn = orig < 0
    parent_all = parent
    parent = np.asarray(parent)[kept]
    tnet = Network(
        tails, heads,
        np.where(conn, 0.0, master.free_flow_time[src]),
        np.where(conn, 1.0, master.capacity[src]),
        np.where(conn, 0.0, master.alpha[src]),
        np.where(conn, 1.0, master.beta[src]),
        n_nodes=len(kept),
        labels=np.asarray(labels)[kept],
        zones=[int(index[v]) for v in range(len(keep)) if keep[v] and parent_all[v] in zones],
        through=np.asarray(through)[kept],
        kind=np.where(conn, ARTIFICIAL, master.kind[src]),
        intercept=np.where(conn, 0.0, master.intercept[src]),
        slope=np.where(conn, 0.0, master.slope[src]),
        name=f"{master.name}-transformed",
    )
    sinks = []
    for m in range(n):
        r = role.get(m)
        if r is None or r == "destination":
            sinks.append((int(index[m]),))
        elif r == "origin":
            # an origin-only zone is still reachable through its children
            sinks.append(tuple(int(index[c]) for c in (p_child[m], a_child[m]) if keep[c]))
        else:
            sinks.append((int(index[d_copy[m]]),))
    source = index[np.arange(n)]
    return TransformedMaster(master, tnet, parent, orig, source, sinks, role)


# ---------------------------------------------------------------- three-stage
def three_stage_spp(master: "Network", origin: int, subnet_of: Sequence[int],
                    costs=None) -> LabelSet:
    """Constrained one-to-all search on a two-subnetwork master network.

    Stage 1 relaxes the origin's artificial links.  Stage 2 runs label setting
    over physical links from the boundary nodes of the origin's subnetwork.
    Stage 3 prices every destination of the other subnetwork through its
    incoming artificial links, interior destinations first, then boundary
    destinations in increasing label order (the order is fixed when the stage
    starts).  Stage 3 reads tail labels as they were after stage 2, so a label
    set by an artificial link never feeds another artificial link.

    Only destinations in the other subnetwork get explicit paths; that is the
    only place master demand goes.

    Parameters
    ----------
    subnet_of : sequence of int
        Master node -> subnetwork id (0 or 1).
    costs : array, optional
        Master link costs; free-flow costs when omitted.
    """
    sub = np.asarray(subnet_of)
    if len(sub) != master.n_nodes:
        raise StructuralError("subnet_of does not cover the master nodes")
    ids = np.unique(sub)
    if len(ids) > 2:
        raise UnsupportedTopologyError(
            f"three-stage search handles two subnetworks, got {len(ids)}; use transform_master")
    if costs is None:
        costs = master.link_costs(np.zeros(master.n_links))
    c = _check_costs(costs)
    n = master.n_nodes
    fstar = master.fstar
    kind = master.kind.tolist()
    through = master.through
    home = sub[origin]
    sub_l = sub.tolist()

    boundary = np.zeros(n, bool)
    phys = master.kind == 0
    boundary[master.tail[phys]] = True
    boundary[master.head[phys]] = True

    cost = [INF] * n
    back_node = [-1] * n
    back_link = [-1] * n
    cost[origin] = 0.0

    # stage 1
    for a, j in fstar[origin]:
        if kind[a] == 1 and c[a] < cost[j]:
            cost[j] = c[a]
            back_node[j] = origin
            back_link[j] = a

    # stage 2
    heap = [(cost[b], b) for b in np.flatnonzero(boundary & (sub == home)).tolist()
            if cost[b] < INF]
    heapq.heapify(heap)
    done = [False] * n
    while heap:
        ci, i = heapq.heappop(heap)
        if done[i] or ci > cost[i]:
            continue
        done[i] = True
        if i != origin and not through[i]:
            continue
        for a, j in fstar[i]:
            if kind[a] != 0:
                continue
            nc = ci + c[a]
            if nc < cost[j]:
                cost[j] = nc
                back_node[j] = i
                back_link[j] = a
                heapq.heappush(heap, (nc, j))

    # stage 3
    frozen = list(cost)

    def trace(i):
        links = []
        while i != origin:
            links.append(back_link[i])
            i = back_node[i]
        return tuple(reversed(links))

    zones = [z for z in master.zones.tolist() if sub_l[z] != home]
    explicit = {}
    interior = [d for d in zones if not boundary[d]]
    at_boundary = sorted((d for d in zones if boundary[d]), key=lambda d: (cost[d], d))
    for d in interior + at_boundary:
        for a in master.incoming(d).tolist():
            if kind[a] != 1:
                continue
            i = int(master.tail[a])
            # the origin's own artificial links were priced in stage 1; closed
            # zones cannot relay and artificial labels cannot feed another one
            if i == origin or not through[i] or frozen[i] == INF or kind[back_link[i]] == 1:
                continue
            nc = frozen[i] + c[a]
            if nc < cost[d]:
                cost[d] = nc
                back_node[d] = i
                back_link[d] = a
                explicit[d] = trace(i) + (a,)
        if d not in explicit and cost[d] < INF:
            explicit[d] = trace(d)
    return LabelSet(origin, cost, back_node, back_link, explicit)


# ------------------------------------------------------------------ enumeration
def iter_constrained_paths(master: "Network", origin: int, max_links: int, costs=None) -> Iterator:
    """Depth-first enumeration of simple paths from ``origin`` with no two
    consecutive artificial links; intermediate nodes must be open to through
    traffic.  Yields ``(node_list, link_tuple, cost)``."""
    if costs is None:
        costs = master.link_costs(np.zeros(master.n_links))
    c = np.asarray(costs, dtype=float).tolist()
    kind = master.kind.tolist()
    fstar = master.fstar
    through = master.through.tolist()
    on_path = [False] * master.n_nodes
    on_path[origin] = True
    nodes = [origin]
    links = []

    def extend(i, last_art, cost):
        if len(links) >= max_links:
            return
        if i != origin and not through[i]:
            return
        for a, j in fstar[i]:
            if on_path[j] or (last_art and kind[a] == 1):
                continue
            on_path[j] = True
            nodes.append(j)
            links.append(a)
            nc = cost + c[a]
            yield list(nodes), tuple(links), nc
            yield from extend(j, kind[a] == 1, nc)
            links.pop()
            nodes.pop()
            on_path[j] = False

    yield from extend(origin, False, 0.0)


def enumerate_constrained_paths(master: "Network", origin: int, destination: int,
                                max_links: int = 10, costs=None) -> list:
    """All feasible simple paths ``origin -> destination`` as ``(nodes, cost)``.

    Meant as a test oracle on small masters.
    """
    return [(nodes, cost) for nodes, _, cost in iter_constrained_paths(master, origin, max_links, costs)
            if nodes[-1] == destination]


def has_consecutive_artificial(network: "Network", links: Sequence[int]) -> bool:
    kinds = network.kind[list(links)] if len(links) else []
    return any(kinds[k] == 1 and kinds[k + 1] == 1 for k in range(len(kinds) - 1))
