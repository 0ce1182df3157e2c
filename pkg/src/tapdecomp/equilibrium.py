"""Path-based gradient projection for user equilibrium.

Each iteration visits origins in a fixed order.  For an origin the current
shortest-path tree is built once, each OD pair's shortest path joins its
used-path set, and flow moves from every costlier used path to the cheapest
one by a Newton step on the path-cost difference.  Link flows are updated in
place as flow moves (Gauss-Seidel), and rebuilt from path flows at the end of
every iteration so accumulated round-off never drifts.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import InfeasibleError, MappingError, NumericalError, ValidationError
from .network import Network, ODMatrix, PathFlowSolution, link_flows_from_paths, relative_gap, tstt
from .shortest_path import LabelSet, dijkstra

Router = Callable[[Network, int, np.ndarray], LabelSet]


@dataclass(frozen=True)
class SolverConfig:
    """Gradient projection settings.

    Attributes
    ----------
    target_rg : float
        Stop once the relative gap is at or below this value.
    max_iterations : int
    newton_scale : float
        Multiplier on the Newton step, in (0, 1].
    path_cost_epsilon : float
        Paths within this cost of the cheapest are left alone.
    drop_threshold : float
        Paths whose flow falls below this are removed, their flow moving to
        the cheapest path.
    """
    target_rg: float = 1e-4
    max_iterations: int = 500
    newton_scale: float = 1.0
    path_cost_epsilon: float = 1e-10
    drop_threshold: float = 1e-10

    def __post_init__(self):
        if not self.target_rg > 0:
            raise ValidationError("target_rg must be > 0")
        if not 0 < self.newton_scale <= 1:
            raise ValidationError("newton_scale must be in (0, 1]")
        if self.max_iterations < 0:
            raise ValidationError("max_iterations must be >= 0")
        if self.path_cost_epsilon < 0 or self.drop_threshold < 0:
            raise ValidationError("tolerances must be >= 0")


@dataclass(frozen=True)
class TraceRow:
    iteration: int
    elapsed: float
    relative_gap: float
    tstt: float
    phase: str = ""


@dataclass
class SolveResult:
    solution: PathFlowSolution
    trace: list = field(default_factory=list)

    @property
    def relative_gap(self) -> float:
        return self.trace[-1].relative_gap if self.trace else math.nan

    @property
    def iterations(self) -> int:
        return self.trace[-1].iteration if self.trace else 0

    def __iter__(self):
        yield self.solution
        yield self.trace


class _PathCache:
    """Tuple path -> int array, shared across ODs in one solve."""

    def __init__(self):
        self._arrays = {}
        self._simple = {}

    def is_simple(self, key) -> bool:
        s = self._simple.get(key)
        if s is None:
            s = self._simple[key] = len(set(key)) == len(key)
        return s

    def __getitem__(self, key):
        arr = self._arrays.get(key)
        if arr is None:
            arr = np.fromiter(key, dtype=np.int64, count=len(key))
            self._arrays[key] = arr
        return arr


def _path_cost(network, arr, x):
    return float(network._costs(arr, x[arr]).sum())


def _guarded_step(network, x, only_p, only_b, step):
    """Halve ``step`` until moving it from ``only_p`` to ``only_b`` does not
    raise the Beckmann objective; zero if that never happens."""
    xp, xb = x[only_p], x[only_b]
    base = network._integrals(only_p, xp).sum() + network._integrals(only_b, xb).sum()
    for _ in range(40):
        new = (network._integrals(only_p, np.maximum(xp - step, 0.0)).sum()
               + network._integrals(only_b, xb + step).sum())
        if new <= base:
            return step
        step *= 0.5
    return 0.0


def equilibrate_od(network: Network, od, path_set: dict, link_flows: np.ndarray,
                   config: SolverConfig | None = None, cache: _PathCache | None = None) -> tuple:
    """One projection pass over an OD pair's used paths.

    Flow moves from each costlier path to the currently cheapest path by
    ``newton_scale * (c_path - c_min) / sum(t')`` over the links the two paths
    do not share, capped at the path's flow.  If the step would raise the
    Beckmann objective it is halved until it does not.  Paths left with less
    than ``drop_threshold`` are removed and their flow handed to the cheapest
    path.  ``path_set`` and ``link_flows`` are updated in place.

    Returns
    -------
    (path_set, link_flows)
    """
    cfg = config or SolverConfig()
    cache = cache or _PathCache()
    if len(path_set) <= 1:
        return path_set, link_flows
    x = link_flows
    keys = list(path_set)
    costs = [_path_cost(network, cache[k], x) for k in keys]
    best = min(range(len(keys)), key=lambda k: (costs[k], k))
    bkey = keys[best]
    barr = cache[bkey]
    for k, key in enumerate(keys):
        if k == best:
            continue
        h = path_set[key]
        arr = cache[key]
        c_best = _path_cost(network, barr, x)
        diff = _path_cost(network, arr, x) - c_best
        if h > 0 and diff > cfg.path_cost_epsilon:
            simple = cache.is_simple(key) and cache.is_simple(bkey)
            if simple:
                only_p = np.setdiff1d(arr, barr, assume_unique=True)
                only_b = np.setdiff1d(barr, arr, assume_unique=True)
            else:
                # a path revisiting a link: work on full link sequences
                only_p, only_b = arr, barr
            denom = float(network._derivs(only_p, x[only_p]).sum() + network._derivs(only_b, x[only_b]).sum())
            if denom > 0:
                step = min(h, cfg.newton_scale * diff / denom)
            else:
                step = h
            if simple:
                step = _guarded_step(network, x, only_p, only_b, step)
            if step > 0:
                if simple:
                    x[only_p] = np.maximum(x[only_p] - step, 0.0)
                    x[only_b] += step
                else:
                    np.subtract.at(x, only_p, step)
                    np.add.at(x, only_b, step)
                    np.maximum(x, 0.0, out=x)
                h -= step
                path_set[bkey] += step
                path_set[key] = h
        if h < cfg.drop_threshold:
            if h > 0:
                np.subtract.at(x, arr, h)
                np.add.at(x, barr, h)
                np.maximum(x, 0.0, out=x)
                path_set[bkey] += h
            del path_set[key]
    return path_set, link_flows


def _shortest(labels: LabelSet, network: Network, o: int, d: int) -> tuple:
    p = labels.path_links(d)
    if p is None or labels.cost[d] == math.inf:
        raise InfeasibleError(f"OD pair ({network.labels[o]},{network.labels[d]}) is disconnected")
    return p


def all_or_nothing(network: Network, od: ODMatrix, costs, router: Router | None = None) -> dict:
    """Every OD's demand on its shortest path at ``costs``."""
    router = router or dijkstra
    paths = {}
    for o in od.origins():
        labels = router(network, o, costs)
        for d, dem in od.destinations(o):
            paths[(o, d)] = {_shortest(labels, network, o, d): dem}
    return paths


def _remap_path(src: Network, dst: Network, links: tuple) -> tuple:
    nodes = src.path_nodes(links)
    try:
        idx = [dst.index_of(int(src.labels[v])) for v in nodes]
        return tuple(dst.find_link(i, j) for i, j in zip(idx[:-1], idx[1:]))
    except ValidationError as exc:
        raise MappingError(f"path {[int(src.labels[v]) for v in nodes]} does not exist in "
                           f"{dst.name or 'the target network'}: {exc}") from None


def warmstart_from(solution: PathFlowSolution, od_matrix: ODMatrix, network: Network | None = None,
                   router: Router | None = None) -> PathFlowSolution:
    """Initial solution for ``od_matrix`` built from an earlier solution.

    Each OD's path flows are rescaled proportionally to the new demand.  ODs
    the earlier solution does not cover get their whole demand on the
    shortest path at the link costs the rescaled flows induce.  When
    ``network`` differs from the solution's network, paths are re-expressed
    through their node sequences.
    """
    target = network if network is not None else solution.network
    remap = target is not solution.network
    paths = {}
    src = solution.network
    for key, dem in od_matrix.items():
        if remap:
            o, d = key
            try:
                key_src = (src.index_of(int(target.labels[o])), src.index_of(int(target.labels[d])))
            except ValidationError:
                key_src = None
            old = solution.paths.get(key_src)
        else:
            old = solution.paths.get(key)
        total = math.fsum(old.values()) if old else 0.0
        if total > 0:
            scale = dem / total
            ps = {}
            for p, h in old.items():
                if h > 0:
                    q = _remap_path(src, target, p) if remap else p
                    ps[q] = ps.get(q, 0.0) + h * scale
            paths[key] = ps
    tmp = PathFlowSolution(target, paths)
    missing = [k for k in od_matrix if k not in paths]
    if missing:
        router = router or dijkstra
        costs = target.link_costs(tmp.link_flows)
        by_origin = {}
        for o, d in missing:
            by_origin.setdefault(o, []).append(d)
        for o, ds in by_origin.items():
            labels = router(target, o, costs)
            for d in ds:
                paths[(o, d)] = {_shortest(labels, target, o, d): od_matrix[(o, d)]}
    ordered = {k: paths[k] for k in od_matrix}
    return PathFlowSolution(target, ordered)


def _needs_rescale(solution: PathFlowSolution, od: ODMatrix) -> bool:
    if solution.paths.keys() != set(od):
        return True
    return any(not math.isclose(solution.od_flow(k), v, rel_tol=1e-12, abs_tol=0.0) for k, v in od.items())


def solve(network: Network, od_matrix: ODMatrix, initial: PathFlowSolution | None = None,
          config: SolverConfig | None = None, router: Router | None = None,
          clock: float | None = None, phase: str = "",
          callback: Callable | None = None) -> SolveResult:
    """Gradient projection to ``config.target_rg``.

    Parameters
    ----------
    initial : PathFlowSolution, optional
        Warm start; rescaled to ``od_matrix`` when its demands differ.
        All-or-nothing loading at free-flow costs otherwise.
    router : callable, optional
        ``router(network, origin, costs) -> LabelSet``; plain Dijkstra by
        default.  Master networks pass a constrained search.
    clock : float, optional
        ``time.perf_counter()`` reference for elapsed times, so that several
        phases can share one clock.
    callback : callable, optional
        Called with ``(iteration, link_flows)`` after every iteration.

    Returns
    -------
    SolveResult
        Trace row 0 describes the starting point; row ``k`` the state after
        iteration ``k``.
    """
    cfg = config or SolverConfig()
    router = router or dijkstra
    start = time.perf_counter() if clock is None else clock
    od_matrix.check(network)

    if initial is None:
        paths = all_or_nothing(network, od_matrix, network.link_costs(np.zeros(network.n_links)), router)
        sol = PathFlowSolution(network, paths)
    elif initial.network is not network or _needs_rescale(initial, od_matrix):
        sol = warmstart_from(initial, od_matrix, network, router)
    else:
        sol = initial.copy()
    paths = sol.paths
    x = sol.link_flows.copy()
    cache = _PathCache()

    def gap_row(it):
        if len(od_matrix) == 0:
            return TraceRow(it, time.perf_counter() - start, 0.0, 0.0, phase)
        with np.errstate(over="ignore", invalid="ignore"):
            finite = np.isfinite(network.link_costs(x)).all()
        if not finite:
            raise NumericalError(f"non-finite link cost at iteration {it}")
        rg = relative_gap(network, od_matrix, x, router)
        if not math.isfinite(rg):
            raise NumericalError(f"relative gap is {rg} at iteration {it}")
        return TraceRow(it, time.perf_counter() - start, rg, tstt(network, x), phase)

    trace = [gap_row(0)]
    it = 0
    while trace[-1].relative_gap > cfg.target_rg and it < cfg.max_iterations:
        it += 1
        for o in od_matrix.origins():
            costs = network.link_costs(x)
            if not np.isfinite(costs).all():
                raise NumericalError(f"non-finite link cost at iteration {it}, origin {network.labels[o]}")
            labels = router(network, o, costs)
            for d, _ in od_matrix.destinations(o):
                sp = _shortest(labels, network, o, d)
                ps = paths[(o, d)]
                if sp not in ps:
                    ps[sp] = 0.0
                equilibrate_od(network, (o, d), ps, x, cfg, cache)
        sol.link_flows = link_flows_from_paths(sol)
        x = sol.link_flows.copy()
        trace.append(gap_row(it))
        if callback is not None:
            callback(it, x.copy())
    sol.link_flows = x
    return SolveResult(sol, trace)
