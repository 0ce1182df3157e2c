"""Road network model, link performance functions and convergence metrics.

Nodes are dense 0-based indices internally; ``Network.labels`` keeps the
external (file) ids.  Links are stored column-wise in numpy arrays so that
costs for a whole flow vector are one vectorised call.  Two link kinds share
the interface: physical links use the BPR function, artificial links an
affine cost ``intercept + slope * x`` whose parameters stay mutable.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Iterator, Mapping, Sequence

import numpy as np

from .errors import DomainError, InfeasibleError, NumericalError, StructuralError, ValidationError

PHYSICAL = 0
ARTIFICIAL = 1
KIND_NAMES = {PHYSICAL: "physical", ARTIFICIAL: "artificial"}

DEFAULT_ALPHA = 0.15
DEFAULT_BETA = 4.0


@dataclass(frozen=True)
class Link:
    tail: int
    head: int
    free_flow_time: float
    capacity: float
    alpha: float = DEFAULT_ALPHA
    beta: float = DEFAULT_BETA
    kind: str = "physical"
    intercept: float = 0.0
    slope: float = 0.0

    def __post_init__(self):
        if self.kind not in ("physical", "artificial"):
            raise StructuralError(f"unknown link kind {self.kind!r}")
        if self.kind == "physical":
            if not self.capacity > 0:
                raise ValidationError(f"link ({self.tail},{self.head}): capacity must be > 0")
            if self.free_flow_time < 0:
                raise ValidationError(f"link ({self.tail},{self.head}): negative free-flow time")
        elif self.slope < 0:
            raise ValidationError(f"artificial link ({self.tail},{self.head}): negative slope")


def bpr_time(link: Link, flow: float) -> float:
    """Travel time on ``link`` carrying ``flow``.

    Physical links: ``t0 * (1 + alpha * (flow / capacity) ** beta)``.
    Artificial links: ``intercept + slope * flow``.
    """
    if flow < 0:
        raise DomainError(f"negative flow {flow} on link ({link.tail},{link.head})")
    if link.kind == "artificial":
        return link.intercept + link.slope * flow
    return link.free_flow_time * (1.0 + link.alpha * (flow / link.capacity) ** link.beta)


def bpr_derivative(link: Link, flow: float) -> float:
    """d(travel time)/d(flow); zero at zero flow whenever beta > 1."""
    if flow < 0:
        raise DomainError(f"negative flow {flow} on link ({link.tail},{link.head})")
    if link.kind == "artificial":
        return link.slope
    if flow == 0.0:
        return link.free_flow_time * link.alpha / link.capacity if link.beta == 1.0 else 0.0
    return (link.free_flow_time * link.alpha * link.beta
            * flow ** (link.beta - 1.0) / link.capacity ** link.beta)


def _frozen(a, dtype):
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


class Network:
    """Directed road network.

    Parameters
    ----------
    tail, head : sequences of int
        Internal (0-based) endpoints of each link.
    free_flow_time, capacity, alpha, beta : sequences of float
        BPR parameters; ``alpha``/``beta`` default to 0.15 and 4.
    n_nodes : int, optional
        Defaults to ``max(tail, head) + 1``.
    labels : sequence of int, optional
        External node ids, defaults to ``1..n_nodes``.
    zones : sequence of int, optional
        Internal indices of centroids (defaults to none).
    first_thru_node : int
        External id of the first node that may carry through traffic.  Nodes
        with a smaller external id can only start or end a path.
    through : sequence of bool, optional
        Explicit through-traffic mask; overrides ``first_thru_node``.  Used by
        derived networks whose labels are not contiguous.
    kind, intercept, slope : sequences, optional
        Link kind (``PHYSICAL``/``ARTIFICIAL``) and affine cost parameters for
        artificial links.
    extra : mapping of str to sequence, optional
        Unused per-link columns carried through to output (length, toll...).
    """

    def __init__(self, tail, head, free_flow_time, capacity, alpha=None, beta=None, *,
                 n_nodes=None, labels=None, zones=(), first_thru_node=1, through=None,
                 kind=None, intercept=None, slope=None, extra=None, name=""):
        tail = np.asarray(tail, dtype=np.int64)
        head = np.asarray(head, dtype=np.int64)
        m = len(tail)
        if len(head) != m:
            raise StructuralError("tail/head length mismatch")
        if n_nodes is None:
            n_nodes = int(max(tail.max(initial=-1), head.max(initial=-1))) + 1
        self.n_nodes = int(n_nodes)
        self.n_links = m
        self.name = name
        self.tail = _frozen(tail, np.int64)
        self.head = _frozen(head, np.int64)
        self.free_flow_time = _frozen(free_flow_time, float)
        self.capacity = _frozen(capacity, float)
        self.alpha = _frozen(np.full(m, DEFAULT_ALPHA) if alpha is None else alpha, float)
        self.beta = _frozen(np.full(m, DEFAULT_BETA) if beta is None else beta, float)
        self.kind = _frozen(np.zeros(m, np.int8) if kind is None else kind, np.int8)
        # artificial-link parameters are updated in place between iterations
        self.intercept = np.zeros(m) if intercept is None else np.array(intercept, dtype=float)
        self.slope = np.zeros(m) if slope is None else np.array(slope, dtype=float)
        self.labels = _frozen(np.arange(1, self.n_nodes + 1) if labels is None else labels, np.int64)
        self.zones = _frozen(sorted(set(int(z) for z in zones)), np.int64)
        self.first_thru_node = int(first_thru_node)
        if through is None:
            through = self.labels >= self.first_thru_node
        self.through = _frozen(through, bool)
        self.extra = {k: np.asarray(v) for k, v in (extra or {}).items()}
        self._validate()

        self._phys = self.kind == PHYSICAL
        self._art = ~self._phys
        order = np.argsort(self.tail, kind="stable")
        self.out_ptr = np.searchsorted(self.tail[order], np.arange(self.n_nodes + 1))
        self.out_links = order
        order = np.argsort(self.head, kind="stable")
        self.in_ptr = np.searchsorted(self.head[order], np.arange(self.n_nodes + 1))
        self.in_links = order
        self._fstar = None
        self._link_index = None
        self._label_index = None
        self._zone_set = frozenset(self.zones.tolist())
        # set when this network was cut out of a larger one
        self.node_map = None
        self.link_map = None

    def _validate(self):
        m = self.n_links
        for arr in (self.free_flow_time, self.capacity, self.alpha, self.beta, self.kind,
                    self.intercept, self.slope):
            if len(arr) != m:
                raise StructuralError("link attribute length mismatch")
        if len(self.labels) != self.n_nodes or len(self.through) != self.n_nodes:
            raise StructuralError("node attribute length mismatch")
        if m and (self.tail.min() < 0 or self.head.min() < 0
                  or self.tail.max() >= self.n_nodes or self.head.max() >= self.n_nodes):
            raise StructuralError("link endpoint outside node range")
        if np.any(self.tail == self.head):
            bad = int(np.flatnonzero(self.tail == self.head)[0])
            raise StructuralError(f"self-loop at node {self.labels[self.tail[bad]]}")
        if not np.isin(self.kind, (PHYSICAL, ARTIFICIAL)).all():
            raise StructuralError("link kind must be physical or artificial")
        phys = self.kind == PHYSICAL
        if np.any(self.capacity[phys] <= 0):
            bad = int(np.flatnonzero(phys & (self.capacity <= 0))[0])
            raise ValidationError(f"link {self.describe_link(bad)}: capacity must be > 0")
        if np.any(self.free_flow_time[phys] < 0):
            raise ValidationError("negative free-flow time")
        if len(self.zones) and (self.zones.min() < 0 or self.zones.max() >= self.n_nodes):
            raise StructuralError("zone index outside node range")
        # nodes closed to through traffic must be centroids
        closed = np.flatnonzero(~self.through)
        if len(closed) and not np.isin(closed, self.zones).all():
            raise ValidationError("a node below the first through node is not a zone")

    # ------------------------------------------------------------------ lookups
    def describe_link(self, a: int) -> str:
        return f"({self.labels[self.tail[a]]},{self.labels[self.head[a]]})"

    @property
    def fstar(self) -> list:
        """Forward star as Python lists of ``(link, head)`` for tight loops."""
        if self._fstar is None:
            heads = self.head.tolist()
            ptr = self.out_ptr.tolist()
            order = self.out_links.tolist()
            self._fstar = [[(a, heads[a]) for a in order[ptr[i]:ptr[i + 1]]]
                           for i in range(self.n_nodes)]
        return self._fstar

    def outgoing(self, i: int) -> np.ndarray:
        return self.out_links[self.out_ptr[i]:self.out_ptr[i + 1]]

    def incoming(self, i: int) -> np.ndarray:
        return self.in_links[self.in_ptr[i]:self.in_ptr[i + 1]]

    @property
    def link_index(self) -> dict:
        if self._link_index is None:
            self._link_index = {}
            for a, (i, j) in enumerate(zip(self.tail.tolist(), self.head.tolist())):
                self._link_index.setdefault((i, j), a)
        return self._link_index

    def find_link(self, tail: int, head: int) -> int:
        try:
            return self.link_index[(tail, head)]
        except KeyError:
            raise StructuralError(
                f"no link ({self.labels[tail]},{self.labels[head]})") from None

    def index_of(self, label: int) -> int:
        if self._label_index is None:
            self._label_index = {int(l): i for i, l in enumerate(self.labels.tolist())}
        try:
            return self._label_index[int(label)]
        except KeyError:
            raise StructuralError(f"unknown node {label}") from None

    def is_zone(self, i: int) -> bool:
        return i in self._zone_set

    def link(self, a: int) -> Link:
        return Link(int(self.tail[a]), int(self.head[a]), float(self.free_flow_time[a]),
                    float(self.capacity[a]), float(self.alpha[a]), float(self.beta[a]),
                    KIND_NAMES[int(self.kind[a])], float(self.intercept[a]), float(self.slope[a]))

    def links(self) -> Iterator[Link]:
        for a in range(self.n_links):
            yield self.link(a)

    def path_links(self, nodes: Sequence[int]) -> tuple:
        """Link ids along a node sequence."""
        return tuple(self.find_link(i, j) for i, j in zip(nodes[:-1], nodes[1:]))

    def path_nodes(self, links: Sequence[int]) -> list:
        if not len(links):
            return []
        return [int(self.tail[links[0]])] + [int(self.head[a]) for a in links]

    def has_artificial(self) -> bool:
        return bool(self._art.any())

    # ------------------------------------------------------------- evaluation
    def link_costs(self, flows) -> np.ndarray:
        x = np.asarray(flows, dtype=float)
        if x.shape != (self.n_links,):
            raise StructuralError(f"flow vector has shape {x.shape}, expected ({self.n_links},)")
        return self._costs(np.arange(self.n_links), x)

    def _costs(self, idx, x):
        """Costs of links ``idx`` at flows ``x`` (same length); no validation."""
        x = np.maximum(x, 0.0)
        t = self.free_flow_time[idx] * (1.0 + self.alpha[idx] * (x / self.capacity[idx]) ** self.beta[idx])
        art = self._art[idx]
        if art.any():
            t = np.where(art, self.intercept[idx] + self.slope[idx] * x, t)
        return t

    def link_derivatives(self, flows) -> np.ndarray:
        x = np.asarray(flows, dtype=float)
        if x.shape != (self.n_links,):
            raise StructuralError(f"flow vector has shape {x.shape}, expected ({self.n_links},)")
        return self._derivs(np.arange(self.n_links), x)

    def _derivs(self, idx, x):
        x = np.maximum(x, 0.0)
        beta = self.beta[idx]
        with np.errstate(divide="ignore", invalid="ignore"):
            d = (self.free_flow_time[idx] * self.alpha[idx] * beta
                 * np.power(x, beta - 1.0) / self.capacity[idx] ** beta)
        d = np.where(np.isfinite(d), d, 0.0)
        art = self._art[idx]
        if art.any():
            d = np.where(art, self.slope[idx], d)
        return d

    def _integrals(self, idx, x):
        """Beckmann integral of each link's cost from 0 to ``x``."""
        x = np.maximum(x, 0.0)
        beta = self.beta[idx]
        cap = self.capacity[idx]
        b = self.free_flow_time[idx] * (x + self.alpha[idx] * cap / (beta + 1.0) * (x / cap) ** (beta + 1.0))
        art = self._art[idx]
        if art.any():
            b = np.where(art, self.intercept[idx] * x + 0.5 * self.slope[idx] * x * x, b)
        return b

    def beckmann(self, flows) -> float:
        """Value of the Beckmann objective (sum of integrated link costs)."""
        x = np.asarray(flows, dtype=float)
        return math.fsum(self._integrals(np.arange(self.n_links), x))

    def subnetwork(self, nodes: Sequence[int], links: Sequence[int] | None = None,
                   name: str = "", extra_zones: Sequence[int] = ()) -> "Network":
        """Network on ``nodes`` (full indices, kept in the given order).

        ``links`` defaults to every link with both endpoints in ``nodes``.
        Labels, zones, through status and link attributes are inherited.
        ``extra_zones`` (full indices) become zones of the result as well.
        The result carries ``node_map`` (local -> full node) and ``link_map``
        (local -> full link) arrays.
        """
        nodes = np.asarray(nodes, dtype=np.int64)
        local = np.full(self.n_nodes, -1, dtype=np.int64)
        local[nodes] = np.arange(len(nodes))
        if links is None:
            links = np.flatnonzero((local[self.tail] >= 0) & (local[self.head] >= 0))
        links = np.asarray(links, dtype=np.int64)
        if len(links) and (local[self.tail[links]].min() < 0 or local[self.head[links]].min() < 0):
            raise StructuralError("subnetwork link leaves the node set")
        sub = Network(
            local[self.tail[links]], local[self.head[links]],
            self.free_flow_time[links], self.capacity[links], self.alpha[links], self.beta[links],
            n_nodes=len(nodes), labels=self.labels[nodes],
            zones=[int(local[z]) for z in list(self.zones) + list(extra_zones) if local[z] >= 0],
            first_thru_node=self.first_thru_node, through=self.through[nodes],
            kind=self.kind[links], intercept=self.intercept[links], slope=self.slope[links],
            extra={k: v[links] for k, v in self.extra.items()},
            name=name or f"{self.name}-sub",
        )
        sub.node_map = nodes
        sub.link_map = links
        return sub

    def undirected_adjacency(self, nodes_mask=None) -> list:
        """Sorted neighbour lists ignoring direction (optionally restricted)."""
        nbr = [set() for _ in range(self.n_nodes)]
        for i, j in zip(self.tail.tolist(), self.head.tolist()):
            if nodes_mask is None or (nodes_mask[i] and nodes_mask[j]):
                nbr[i].add(j)
                nbr[j].add(i)
        return [sorted(s) for s in nbr]

    def __repr__(self):
        return f"Network({self.name or 'unnamed'}: {self.n_nodes} nodes, {self.n_links} links, {len(self.zones)} zones)"


class ODMatrix:
    """Demand per (origin, destination) pair of internal node indices.

    Zero entries are dropped on construction; iteration order is sorted by
    origin then destination so every consumer visits pairs deterministically.
    """

    def __init__(self, demand: Mapping | Iterable = ()):
        items = demand.items() if isinstance(demand, Mapping) else demand
        entries = {}
        for (o, d), v in items:
            v = float(v)
            if not math.isfinite(v) or v < 0:
                raise ValidationError(f"demand {v} for pair ({o},{d}) is not a non-negative number")
            if v > 0 and o != d:
                key = (int(o), int(d))
                entries[key] = entries.get(key, 0.0) + v
        self._entries = dict(sorted(entries.items()))
        self._by_origin = {}
        for (o, d), v in self._entries.items():
            self._by_origin.setdefault(o, []).append((d, v))

    def __len__(self):
        return len(self._entries)

    def __iter__(self):
        return iter(self._entries)

    def __getitem__(self, key):
        return self._entries.get(key, 0.0)

    def __contains__(self, key):
        return key in self._entries

    def __eq__(self, other):
        return isinstance(other, ODMatrix) and self._entries == other._entries

    def items(self):
        return self._entries.items()

    def origins(self) -> list:
        return list(self._by_origin)

    def destinations(self, origin: int) -> list:
        return self._by_origin.get(origin, [])

    def total(self) -> float:
        return math.fsum(self._entries.values())

    def scaled(self, factor: float) -> "ODMatrix":
        if not factor > 0:
            raise ValidationError("demand scale must be > 0")
        return ODMatrix({k: v * factor for k, v in self._entries.items()})

    def check(self, network: Network) -> None:
        for o, d in self._entries:
            for z in (o, d):
                if not 0 <= z < network.n_nodes:
                    raise StructuralError(f"OD endpoint {z} outside network")
                if not network.is_zone(z):
                    raise ValidationError(f"OD endpoint {network.labels[z]} is not a zone")

    def __repr__(self):
        return f"ODMatrix({len(self)} pairs, total {self.total():g})"


@dataclass
class PathFlowSolution:
    """Used paths and their flows per OD pair, plus the induced link flows.

    ``paths[(o, d)]`` maps a path (tuple of link ids) to its flow.
    """
    network: Network
    paths: dict = field(default_factory=dict)
    link_flows: np.ndarray | None = None

    def __post_init__(self):
        if self.link_flows is None:
            self.link_flows = link_flows_from_paths(self)

    def od_flow(self, od) -> float:
        return math.fsum(self.paths.get(od, {}).values())

    def node_paths(self) -> Iterator:
        """Yield ``(od, node_list, flow)`` triples."""
        for od, ps in self.paths.items():
            for links, h in ps.items():
                yield od, self.network.path_nodes(links), h

    def total_flow(self) -> float:
        return math.fsum(h for ps in self.paths.values() for h in ps.values())

    def copy(self) -> "PathFlowSolution":
        return PathFlowSolution(self.network, {k: dict(v) for k, v in self.paths.items()},
                                self.link_flows.copy())


def link_flows_from_paths(solution: PathFlowSolution) -> np.ndarray:
    """Aggregate path flows onto links."""
    net = solution.network
    chunks, weights = [], []
    for ps in solution.paths.values():
        for links, h in ps.items():
            if h:
                chunks.append(np.asarray(links, dtype=np.int64))
                weights.append(np.full(len(links), h))
    if not chunks:
        return np.zeros(net.n_links)
    idx = np.concatenate(chunks)
    if idx.min() < 0 or idx.max() >= net.n_links:
        raise StructuralError("path references a link outside the network")
    return np.bincount(idx, weights=np.concatenate(weights), minlength=net.n_links)


def check_path(network: Network, links: Sequence[int]) -> None:
    """Raise unless ``links`` is contiguous in ``network``."""
    for a, b in zip(links[:-1], links[1:]):
        if network.head[a] != network.tail[b]:
            raise StructuralError(f"path breaks between links {network.describe_link(a)} and {network.describe_link(b)}")


# --------------------------------------------------------------------- metrics
def tstt(network: Network, link_flows) -> float:
    """Total system travel time, ``sum t(x) * x``."""
    x = np.asarray(link_flows, dtype=float)
    if x.shape != (network.n_links,):
        raise StructuralError(f"flow vector has shape {x.shape}, expected ({network.n_links},)")
    if np.any(x < 0):
        raise DomainError("negative link flow")
    return math.fsum(network.link_costs(x) * x)


def sptt(network: Network, od_matrix: ODMatrix, link_flows, router: Callable | None = None,
         costs=None) -> float:
    """Shortest-path travel time: every traveller on a current shortest path.

    ``router(network, origin, costs)`` returns a label set; plain Dijkstra by
    default.  Passing ``costs`` skips re-evaluating the link costs.
    """
    from .shortest_path import dijkstra

    router = router or dijkstra
    if costs is None:
        costs = network.link_costs(link_flows)
    terms = []
    for o in od_matrix.origins():
        labels = router(network, o, costs)
        for d, dem in od_matrix.destinations(o):
            c = labels.cost[d]
            if not math.isfinite(c):
                raise InfeasibleError(
                    f"OD pair ({network.labels[o]},{network.labels[d]}) is disconnected")
            terms.append(c * dem)
    return math.fsum(terms)


def relative_gap(network: Network, od_matrix: ODMatrix, link_flows, router: Callable | None = None) -> float:
    """``TSTT / SPTT - 1``; zero for an instance without demand."""
    x = np.asarray(link_flows, dtype=float)
    total = tstt(network, x)
    shortest = sptt(network, od_matrix, x, router)
    if shortest <= 0:
        if total <= 0:
            return 0.0
        raise NumericalError(f"shortest-path travel time is zero while TSTT is {total}")
    return total / shortest - 1.0

