"""Two-way network partitions: the psi statistic, partitioners and refinement.

A partition assigns every node to a subnetwork.  Centroids (zones closed to
through traffic) may belong to several subnetworks at once; each membership
stands for a copy of the centroid holding only the connectors into that
subnetwork.  A link is cut when its endpoints share no subnetwork, and the
endpoints of cut links are boundary nodes.

psi = interflow - interdemand, where interflow is the reference flow on cut
links and interdemand the demand between zones with no subnetwork in common.
Every unit of interdemand must cross the cut at least once, so psi measures
flow that leaves a subnetwork and comes back.
"""
from __future__ import annotations

import heapq
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Iterator, Mapping, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.sparse import csgraph
from scipy.sparse.linalg import splu

from .errors import InfeasibleError, NumericalError, PartitionError, StructuralError, UnsupportedTopologyError
from .network import Network, ODMatrix


@dataclass(frozen=True)
class Partition:
    """Node -> subnetwork assignment.

    Attributes
    ----------
    assignment : ndarray of int
        Primary (lowest) subnetwork of each node.
    shared : mapping
        Node -> frozenset of all its subnetworks, for nodes in more than one.
    dropped : tuple of tuple
        Node groups removed by pruning before partitioning and attached to a
        neighbouring subnetwork afterwards.
    """
    assignment: np.ndarray
    shared: Mapping = field(default_factory=dict)
    dropped: tuple = ()

    def __post_init__(self):
        a = np.asarray(self.assignment, dtype=np.int64)
        a.setflags(write=False)
        object.__setattr__(self, "assignment", a)
        object.__setattr__(self, "shared", {int(k): frozenset(v) for k, v in dict(self.shared).items()
                                            if len(v) > 1})
        if len(a) and a.min() < 0:
            raise PartitionError("unassigned node in partition")
        ids = set(a.tolist())
        for k, v in self.shared.items():
            if int(a[k]) != min(v):
                raise PartitionError(f"node {k}: primary subnet must be the lowest membership")
            ids |= v
        if sorted(ids) != list(range(len(ids))):
            raise PartitionError(f"subnet ids {sorted(ids)} are not contiguous from 0")

    @classmethod
    def from_memberships(cls, members: Sequence, dropped: tuple = ()) -> "Partition":
        members = [frozenset(m) for m in members]
        if any(not m for m in members):
            raise PartitionError("node without subnet")
        return cls(np.array([min(m) for m in members], dtype=np.int64),
                   {v: m for v, m in enumerate(members) if len(m) > 1}, dropped)

    @property
    def n_nodes(self) -> int:
        return len(self.assignment)

    @property
    def n_subnets(self) -> int:
        return int(self.assignment.max()) + 1 if self.n_nodes else 0

    def members(self, v: int) -> frozenset:
        m = self.shared.get(v)
        return m if m is not None else frozenset((int(self.assignment[v]),))

    def subnet_nodes(self, s: int) -> list:
        return [v for v in range(self.n_nodes) if s in self.members(v)]

    def check(self, network: Network) -> None:
        if self.n_nodes != network.n_nodes:
            raise StructuralError(
                f"partition covers {self.n_nodes} nodes, network has {network.n_nodes}")

    def link_subnet(self, network: Network) -> np.ndarray:
        """Lowest subnetwork containing both endpoints of each link; -1 if cut."""
        self.check(network)
        out = np.full(network.n_links, -1, dtype=np.int64)
        a = self.assignment
        same = a[network.tail] == a[network.head]
        out[same] = a[network.tail[same]]
        if self.shared:
            for k in np.flatnonzero(~same).tolist():
                common = self.members(int(network.tail[k])) & self.members(int(network.head[k]))
                if common:
                    out[k] = min(common)
        return out

    def cut_links(self, network: Network) -> np.ndarray:
        return np.flatnonzero(self.link_subnet(network) < 0)

    def boundary_nodes(self, network: Network) -> dict:
        """Subnet -> sorted boundary nodes."""
        cut = self.cut_links(network)
        nodes = set(network.tail[cut].tolist()) | set(network.head[cut].tolist())
        out = {s: [] for s in range(self.n_subnets)}
        for v in sorted(nodes):
            for s in self.members(v):
                out[s].append(v)
        return out

    def is_connected(self, network: Network) -> bool:
        """Every subnetwork weakly connected on its own links."""
        self.check(network)
        tails, heads = network.tail.tolist(), network.head.tolist()
        for s in range(self.n_subnets):
            nodes = self.subnet_nodes(s)
            if len(nodes) <= 1:
                continue
            inside = set(nodes)
            adj = {v: [] for v in nodes}
            for t, h in zip(tails, heads):
                if t in inside and h in inside:
                    adj[t].append(h)
                    adj[h].append(t)
            seen = {nodes[0]}
            stack = [nodes[0]]
            while stack:
                for j in adj[stack.pop()]:
                    if j not in seen:
                        seen.add(j)
                        stack.append(j)
            if len(seen) != len(nodes):
                return False
        return True

    def __eq__(self, other):
        return (isinstance(other, Partition) and np.array_equal(self.assignment, other.assignment)
                and self.shared == other.shared)

    def __hash__(self):
        return hash((self.assignment.tobytes(), tuple(sorted(self.shared.items()))))


# ------------------------------------------------------------------------- psi
@dataclass(frozen=True)
class PsiReport:
    interflow: float
    interdemand: float
    psi: float
    nodes: tuple
    links: tuple
    n_boundary: int
    n_cut: int

    def row(self) -> dict:
        """Table row with the usual partition-statistics columns."""
        return {"n1:n2": ":".join(map(str, self.nodes)), "m1:m2": ":".join(map(str, self.links)),
                "boundary nodes": self.n_boundary, "cut links": self.n_cut,
                "interflow": self.interflow, "interdemand": self.interdemand, "psi": self.psi}


def interdemand(od_matrix: ODMatrix, partition: Partition) -> float:
    return math.fsum(v for (o, d), v in od_matrix.items()
                     if not partition.members(o) & partition.members(d))


def psi(network: Network, od_matrix: ODMatrix, reference_flows, partition: Partition) -> PsiReport:
    """Interflow, interdemand and their difference for ``partition``."""
    partition.check(network)
    x = np.asarray(reference_flows, dtype=float)
    if x.shape != (network.n_links,):
        raise StructuralError("reference flows do not match the network")
    ls = partition.link_subnet(network)
    cut = np.flatnonzero(ls < 0)
    flow = math.fsum(x[cut])
    dem = interdemand(od_matrix, partition)
    bnd = set(network.tail[cut].tolist()) | set(network.head[cut].tolist())
    k = partition.n_subnets
    return PsiReport(
        interflow=flow, interdemand=dem, psi=flow - dem,
        nodes=tuple(len(partition.subnet_nodes(s)) for s in range(k)),
        links=tuple(int((ls == s).sum()) for s in range(k)),
        n_boundary=len(bnd), n_cut=len(cut),
    )


# ------------------------------------------------------------------ refinement
def centroid_mask(network: Network) -> np.ndarray:
    """Zones closed to through traffic; they follow their connectors."""
    mask = np.zeros(network.n_nodes, bool)
    mask[network.zones] = True
    return mask & ~network.through


@dataclass(frozen=True)
class FMMove:
    node: int
    source: int
    target: int
    delta: float
    psi_before: float
    psi_after: float


class _FMState:
    """Incremental psi bookkeeping for a two-way partition."""

    def __init__(self, network, od, flows, partition):
        self.net = network
        self.flows = np.asarray(flows, dtype=float)
        self.centroid = centroid_mask(network)
        n = network.n_nodes
        self.assign = partition.assignment.copy()
        nbr = network.undirected_adjacency()
        self.nbr = nbr
        self.core_nbr = [[j for j in nbr[v] if not self.centroid[j]] for v in range(n)]
        # centroid -> non-centroid neighbours, and the reverse
        self.attached = [[] for _ in range(n)]
        for c in np.flatnonzero(self.centroid).tolist():
            if not self.core_nbr[c]:
                raise InfeasibleError(f"centroid {network.labels[c]} has no connector into the network")
            for u in self.core_nbr[c]:
                self.attached[u].append(c)
        self.incident = [[] for _ in range(n)]
        for a, (i, j) in enumerate(zip(network.tail.tolist(), network.head.tolist())):
            self.incident[i].append(a)
            self.incident[j].append(a)
        self.od_at = [[] for _ in range(n)]
        for (o, d), v in od.items():
            self.od_at[o].append((o, d, v))
            if d != o:
                self.od_at[d].append((o, d, v))
        self.tail = network.tail.tolist()
        self.head = network.head.tolist()
        self.od = od

    def members(self, v):
        if self.centroid[v]:
            return {int(self.assign[u]) for u in self.core_nbr[v]}
        return {int(self.assign[v])}

    def partition(self, dropped=()) -> Partition:
        return Partition.from_memberships([self.members(v) for v in range(self.net.n_nodes)], dropped)

    def psi(self) -> float:
        return psi(self.net, self.od, self.flows, self.partition()).psi

    def _local(self, v):
        nodes = {v, *self.attached[v]}
        links = sorted({a for u in nodes for a in self.incident[u]})
        ods = sorted({e for u in nodes for e in self.od_at[u]})
        return links, ods

    def _local_psi(self, links, ods):
        mem = {}

        def m(u):
            r = mem.get(u)
            if r is None:
                r = mem[u] = self.members(u)
            return r

        flow = math.fsum(self.flows[a] for a in links if not m(self.tail[a]) & m(self.head[a]))
        dem = math.fsum(val for o, d, val in ods if not m(o) & m(d))
        return flow - dem

    def delta(self, v, target):
        links, ods = self._local(v)
        before = self._local_psi(links, ods)
        old = self.assign[v]
        self.assign[v] = target
        after = self._local_psi(links, ods)
        self.assign[v] = old
        return after - before

    def boundary(self):
        out = []
        for v in range(self.net.n_nodes):
            if self.centroid[v]:
                continue
            s = self.assign[v]
            if any(self.assign[u] != s for u in self.core_nbr[v]):
                out.append(v)
        return out

    def keeps_connected(self, v):
        """Would the core of v's subnetwork stay connected (and non-empty)
        without v?"""
        s = self.assign[v]
        rest = [u for u in self.core_nbr[v] if self.assign[u] == s]
        if not rest:
            return not any(self.assign[u] == s for u in range(self.net.n_nodes)
                           if u != v and not self.centroid[u])
        size = sum(1 for u in range(self.net.n_nodes)
                   if u != v and not self.centroid[u] and self.assign[u] == s)
        seen = {rest[0]}
        queue = deque([rest[0]])
        while queue:
            u = queue.popleft()
            for w in self.core_nbr[u]:
                if w != v and w not in seen and self.assign[w] == s:
                    seen.add(w)
                    queue.append(w)
        return len(seen) == size


def fm_moves(network: Network, od_matrix: ODMatrix, reference_flows, partition: Partition,
             max_moves: int = 1000, tol: float = 1e-9) -> Iterator[FMMove]:
    """Yield the moves of psi-driven single-node refinement.

    Each step moves the unlocked boundary node whose transfer to the other
    subnetwork lowers psi the most, skipping moves that would disconnect or
    empty its subnetwork.  A moved node stays locked until the pass ends; a
    new pass starts while the previous one moved something.  Only moves that
    lower psi by more than ``tol`` (relative to the total demand) are taken.
    """
    partition.check(network)
    if partition.n_subnets > 2:
        raise UnsupportedTopologyError("refinement handles two subnetworks")
    if partition.n_subnets < 2:
        return
    st = _FMState(network, od_matrix, reference_flows, partition)
    scale = max(1.0, od_matrix.total(), float(np.abs(st.flows).sum()))
    current = st.psi()
    moves = 0
    while moves < max_moves:
        locked = set()
        moved_in_pass = 0
        while moves < max_moves:
            cands = []
            for v in st.boundary():
                if v in locked:
                    continue
                tgt = 1 - int(st.assign[v])
                cands.append((st.delta(v, tgt), v, tgt))
            cands.sort()
            chosen = None
            for dlt, v, tgt in cands:
                if dlt >= -tol * scale:
                    break
                if st.keeps_connected(v):
                    chosen = (dlt, v, tgt)
                    break
            if chosen is None:
                break
            dlt, v, tgt = chosen
            src = int(st.assign[v])
            st.assign[v] = tgt
            locked.add(v)
            moves += 1
            moved_in_pass += 1
            yield FMMove(v, src, tgt, dlt, current, current + dlt)
            current += dlt
        if not moved_in_pass:
            return


def fm_refine(network: Network, od_matrix: ODMatrix, reference_flows, partition: Partition,
              max_moves: int = 1000) -> Partition:
    """Refined partition; its psi never exceeds the input's."""
    st_moves = list(fm_moves(network, od_matrix, reference_flows, partition, max_moves))
    if not st_moves:
        return partition
    centroid = centroid_mask(network)
    assign = partition.assignment.copy()
    for mv in st_moves:
        assign[mv.node] = mv.target
    core = network.undirected_adjacency()
    members = []
    for v in range(network.n_nodes):
        if centroid[v]:
            members.append({int(assign[u]) for u in core[v] if not centroid[u]})
        else:
            members.append({int(assign[v])})
    out = Partition.from_memberships(members, partition.dropped)
    before = psi(network, od_matrix, reference_flows, partition).psi
    after = psi(network, od_matrix, reference_flows, out).psi
    return out if after <= before else partition


# ---------------------------------------------------------------- partitioners
@dataclass
class PrunedNetwork:
    """Core network handed to a partitioner.

    ``network`` is the kept subgraph; its ``node_map`` and ``link_map`` lead
    back to the full network.  ``dropped`` lists the node groups removed
    besides centroids.
    """
    network: Network
    source: Network
    dropped: tuple


def prune(network: Network, reference_flows=None, drop_zero_flow: bool = False) -> PrunedNetwork:
    """Remove centroids and their connectors, optionally links without
    reference flow, and keep the largest weakly connected component."""
    centroid = centroid_mask(network)
    keep_link = ~centroid[network.tail] & ~centroid[network.head]
    if drop_zero_flow:
        if reference_flows is None:
            raise PartitionError("zero-flow pruning needs reference flows")
        keep_link &= np.asarray(reference_flows, dtype=float) > 0
    links = np.flatnonzero(keep_link)
    core = np.flatnonzero(~centroid)
    n = network.n_nodes
    g = sp.coo_matrix((np.ones(len(links)), (network.tail[links], network.head[links])), shape=(n, n))
    _, comp = csgraph.connected_components(g, directed=True, connection="weak")
    sizes = np.bincount(comp[core], minlength=comp.max() + 1)
    main = int(np.argmax(sizes))  # lowest component id wins ties
    kept = core[comp[core] == main]
    # dropped nodes are grouped over all their core links, used or not
    out = np.zeros(n, bool)
    out[core[comp[core] != main]] = True
    rest = np.flatnonzero(out[network.tail] & out[network.head])
    g = sp.coo_matrix((np.ones(len(rest)), (network.tail[rest], network.head[rest])), shape=(n, n))
    _, rcomp = csgraph.connected_components(g, directed=True, connection="weak")
    groups = {}
    for v in np.flatnonzero(out).tolist():
        groups.setdefault(int(rcomp[v]), []).append(v)
    dropped = tuple(tuple(g) for g in sorted(groups.values()))
    kept_set = np.zeros(n, bool)
    kept_set[kept] = True
    links = links[kept_set[network.tail[links]] & kept_set[network.head[links]]]
    sub = network.subnetwork(kept, links, name=f"{network.name}-core")
    return PrunedNetwork(sub, network, dropped)


def _undirected(network: Network, weights) -> sp.csr_matrix:
    n = network.n_nodes
    w = sp.coo_matrix((weights, (network.tail, network.head)), shape=(n, n)).tocsr()
    return (w + w.T).tocsr()


def _check_connected(network: Network):
    n = network.n_nodes
    g = sp.coo_matrix((np.ones(network.n_links), (network.tail, network.head)), shape=(n, n))
    k, _ = csgraph.connected_components(g, directed=True, connection="weak")
    if k > 1:
        raise PartitionError(f"network has {k} weakly connected components; prune it first")


def sdda_partition(network: Network, k: int = 2, seed: int = 0) -> Partition:
    """Seed-growth partitioning.

    Seeds are spread out by repeated farthest-node sweeps over undirected
    free-flow distances (the first sweep starts at a node drawn from
    ``seed``).  Regions then grow in turn, one node per turn, each taking the
    unassigned neighbour closest to its own seed.
    """
    n = network.n_nodes
    if k < 1 or k > n:
        raise PartitionError(f"cannot split {n} nodes into {k} subnetworks")
    _check_connected(network)
    if k == 1:
        return Partition(np.zeros(n, dtype=np.int64))
    fft = network.free_flow_time
    # tiny hop cost keeps zero-time links as edges and breaks distance ties
    w = fft + 1e-9 * max(float(fft.mean()), 1.0)
    g = sp.coo_matrix((w, (network.tail, network.head)), shape=(n, n)).tocsr()
    rng = np.random.default_rng(seed)
    start = int(rng.integers(n))
    d0 = csgraph.dijkstra(g, directed=False, indices=start)
    seeds = [int(np.argmax(d0))]
    dist = [csgraph.dijkstra(g, directed=False, indices=seeds[0])]
    nearest = dist[0].copy()
    while len(seeds) < k:
        cand = nearest.copy()
        cand[seeds] = -1
        s = int(np.argmax(cand))
        seeds.append(s)
        dist.append(csgraph.dijkstra(g, directed=False, indices=s))
        nearest = np.minimum(nearest, dist[-1])
    adj = network.undirected_adjacency()
    assign = np.full(n, -1, dtype=np.int64)
    heaps = [[(0.0, s)] for s in seeds]
    left = n
    while left:
        progressed = False
        for r in range(k):
            h = heaps[r]
            while h:
                _, v = heapq.heappop(h)
                if assign[v] < 0:
                    assign[v] = r
                    left -= 1
                    progressed = True
                    for u in adj[v]:
                        if assign[u] < 0:
                            heapq.heappush(h, (float(dist[r][u]), u))
                    break
        if not progressed:
            raise PartitionError("growth stalled; network is not connected")
    return Partition(assign)


def fiedler_vector(laplacian, tol: float = 1e-8, max_iter: int = 2000, seed: int = 0) -> tuple:
    """Second eigenpair of a connected graph Laplacian.

    Shifted inverse iteration with the constant vector projected out after
    every solve; the factorisation is computed once.  Stops when
    ``||L f - lam f|| <= tol * max(diag L)``.

    Returns
    -------
    (lam, f) with ``||f|| = 1`` and ``f`` orthogonal to the ones vector.
    """
    L = sp.csc_matrix(laplacian, dtype=float)
    n = L.shape[0]
    if n < 2:
        raise NumericalError("Fiedler vector needs at least two nodes")
    scale = float(L.diagonal().max())
    if not scale > 0:
        raise NumericalError("Laplacian has no edges")
    shift = 1e-10 * scale
    lu = splu((L + shift * sp.identity(n, format="csc")).tocsc())
    rng = np.random.default_rng(seed)
    f = rng.standard_normal(n)
    f -= f.mean()
    f /= np.linalg.norm(f)
    lam = float(f @ (L @ f))
    for _ in range(max_iter):
        y = lu.solve(f)
        y -= y.mean()
        nrm = np.linalg.norm(y)
        if not nrm > 0 or not np.isfinite(nrm):
            raise NumericalError("inverse iteration broke down")
        f = y / nrm
        Lf = L @ f
        lam = float(f @ Lf)
        if np.linalg.norm(Lf - lam * f) <= tol * scale:
            return lam, f
    raise NumericalError(f"Fiedler iteration did not reach residual {tol:g} in {max_iter} steps")


def laplacian(network: Network, reference_flows=None, unit_weights: bool = False) -> sp.csr_matrix:
    """Graph Laplacian with edge weight = flow i->j + flow j->i (or 1)."""
    if unit_weights:
        w = np.ones(network.n_links)
        W = _undirected(network, w)
        W.data[:] = 1.0
    else:
        if reference_flows is None:
            raise PartitionError("flow-weighted spectral partitioning needs reference flows")
        W = _undirected(network, np.asarray(reference_flows, dtype=float))
    W.setdiag(0)
    W.eliminate_zeros()
    deg = np.asarray(W.sum(axis=1)).ravel()
    return (sp.diags(deg) - W).tocsr()


def spectral_partition(network: Network, reference_flows=None, unit_weights: bool = False,
                       seed: int = 0, tol: float = 1e-8) -> Partition:
    """Bisect by the sign of the Fiedler vector.

    Orientation is fixed so that node 0 is non-positive; non-positive entries
    go to subnetwork 0.  With ``unit_weights`` every adjacent pair weighs 1,
    which targets few cut links instead of little cut flow.
    """
    n = network.n_nodes
    if n < 2:
        return Partition(np.zeros(n, dtype=np.int64))
    L = laplacian(network, reference_flows, unit_weights)
    k, _ = csgraph.connected_components(L, directed=False)
    if k > 1:
        raise PartitionError(f"weighted graph has {k} components; drop zero-flow parts first")
    _, f = fiedler_vector(L, tol=tol, seed=seed)
    f = np.where(np.abs(f) <= 1e-12 * np.abs(f).max(), 0.0, f)
    if f[0] > 0:
        f = -f
    return Partition((f > 0).astype(np.int64))


def prune_and_reattach(network: Network, raw: Partition, pruned: PrunedNetwork) -> Partition:
    """Lift a partition of the pruned core back to the full network.

    Pruned non-centroid nodes join the subnetwork of the nearest assigned
    node (breadth first, lowest node first).  Each centroid joins every
    subnetwork its connectors reach; several memberships mean one centroid
    copy per subnetwork.
    """
    core = pruned.network
    raw.check(core)
    n = network.n_nodes
    centroid = centroid_mask(network)
    assign = np.full(n, -1, dtype=np.int64)
    assign[core.node_map] = raw.assignment
    adj = network.undirected_adjacency()
    queue = deque(sorted(core.node_map.tolist()))
    while queue:
        v = queue.popleft()
        for u in adj[v]:
            if assign[u] < 0 and not centroid[u]:
                assign[u] = assign[v]
                queue.append(u)
    members = []
    for v in range(n):
        if centroid[v]:
            m = {int(assign[u]) for u in adj[v] if not centroid[u] and assign[u] >= 0}
            if not m:
                raise InfeasibleError(f"centroid {network.labels[v]} has no connector into the partitioned network")
            members.append(m)
        else:
            members.append({int(assign[v])} if assign[v] >= 0 else {0})
    return Partition.from_memberships(members, pruned.dropped)


def partition_network(network: Network, method: str = "sdda", reference_flows=None, seed: int = 0,
                      k: int = 2) -> Partition:
    """Prune, partition the core with ``method`` and reattach.

    ``method`` is ``sdda``, ``spectral`` (flow weighted, zero-flow links
    pruned) or ``spectral-unit``.
    """
    if method == "sdda":
        pruned = prune(network)
        raw = sdda_partition(pruned.network, k=k, seed=seed)
    elif method in ("spectral", "spectral-unit"):
        if k != 2:
            raise UnsupportedTopologyError("spectral bisection makes two subnetworks")
        unit = method == "spectral-unit"
        pruned = prune(network, reference_flows, drop_zero_flow=not unit)
        flows = None if unit else np.asarray(reference_flows, dtype=float)[pruned.network.link_map]
        raw = spectral_partition(pruned.network, flows, unit_weights=unit, seed=seed)
    else:
        raise PartitionError(f"unknown partitioner {method!r}")
    return prune_and_reattach(network, raw, pruned)
