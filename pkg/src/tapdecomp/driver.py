"""Outer loop of the decomposition heuristic, the warmstart handoff and the
centralized baseline."""
from __future__ import annotations

import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .decomposition import Decomposition, build, full_gap, map_to_full, update_artificial_params, update_subnet_demand
from .equilibrium import SolveResult, SolverConfig, TraceRow, solve, warmstart_from
from .errors import ValidationError
from .network import Network, ODMatrix, PathFlowSolution, tstt
from .partitioning import Partition

TIMING_CATEGORIES = ("master", "subnetworks", "mapping", "full_gap")


@dataclass(frozen=True)
class HeuristicConfig:
    """Settings for the decomposition heuristic.

    Attributes
    ----------
    outer_max_iterations : int
    full_gap_threshold : float
        Stop once the mapped full-network relative gap reaches this.
    per_level_gap : float
        Target relative gap for each master and subnetwork solve.
    worker_count : int
        Processes used for subnetwork solves; 1 solves in-process.
    track_best : bool
        Return the best mapped solution seen rather than the last one.
    skip_full_gap : bool
        Run a fixed number of iterations without evaluating the full gap.
    level_max_iterations : int
        Iteration cap for each master and subnetwork solve.
    routing : str
        Master search, see :func:`decomposition.build`.
    """
    outer_max_iterations: int = 10
    full_gap_threshold: float = 1e-4
    per_level_gap: float = 0.05
    worker_count: int = 1
    track_best: bool = True
    skip_full_gap: bool = False
    level_max_iterations: int = 500
    routing: str = "auto"

    def __post_init__(self):
        if self.worker_count < 1:
            raise ValidationError("worker_count must be >= 1")
        if not self.per_level_gap > 0:
            raise ValidationError("per_level_gap must be > 0")
        if self.outer_max_iterations < 1:
            raise ValidationError("outer_max_iterations must be >= 1")

    def level_config(self) -> SolverConfig:
        return SolverConfig(target_rg=self.per_level_gap, max_iterations=self.level_max_iterations)


@dataclass
class HeuristicResult:
    solution: PathFlowSolution
    best_rg: float
    best_iteration: int
    trace: list
    timing: dict
    decomposition: Decomposition
    subnet_solutions: list = field(default_factory=list)
    master_solution: PathFlowSolution | None = None


def _solve_subnet(args):
    net, od, initial, cfg = args
    return solve(net, od, initial, cfg)


def solve_subnetworks(dec: Decomposition, previous: list, config: SolverConfig,
                      pool: ProcessPoolExecutor | None = None) -> list:
    """Solve every subnetwork at its current demand.

    Solves are independent; with a pool they run in worker processes and the
    returned solutions are re-attached to the local subnetwork objects.
    """
    jobs = [(sub, dec.subnet_od[s], previous[s], config) for s, sub in enumerate(dec.subnets)]
    if pool is None:
        results = [_solve_subnet(j) for j in jobs]
    else:
        results = list(pool.map(_solve_subnet, jobs))
        for s, r in enumerate(results):
            r.solution.network = dec.subnets[s]
    return [r.solution for r in results]


def run_heuristic(network: Network, od_matrix: ODMatrix, partition: Partition,
                  config: HeuristicConfig | None = None, clock: float | None = None,
                  phase: str = "heuristic") -> HeuristicResult:
    """Iterate master solve, subnetwork solves and artificial-link refits.

    Each outer iteration solves the master to ``per_level_gap`` (warm from
    the previous master solution), hands artificial-link flows to the
    subnetworks as demand, solves the subnetworks, refits the artificial
    links, maps everything onto the full network and evaluates its relative
    gap.  The timing split charges demand hand-off to the master and
    artificial-link refits to the subnetworks.
    """
    cfg = config or HeuristicConfig()
    level = cfg.level_config()
    start = time.perf_counter() if clock is None else clock
    dec = build(network, od_matrix, partition, routing=cfg.routing)
    timing = dict.fromkeys(TIMING_CATEGORIES, 0.0)
    trace = []
    master_sol = None
    subnet_sols = [None] * dec.n_subnets
    best = (math.inf, 0, None)
    last = None
    pool = ProcessPoolExecutor(max_workers=cfg.worker_count) if cfg.worker_count > 1 else None
    t_run = time.perf_counter()
    try:
        for it in range(1, cfg.outer_max_iterations + 1):
            t0 = time.perf_counter()
            if len(dec.master_od):
                master_sol = solve(dec.master, dec.master_od, master_sol, level, router=dec.router).solution
            update_subnet_demand(dec, master_sol)
            t1 = time.perf_counter()
            subnet_sols = solve_subnetworks(dec, subnet_sols, level, pool)
            update_artificial_params(dec, subnet_sols)
            t2 = time.perf_counter()
            mapped = map_to_full(dec, master_sol, subnet_sols)
            t3 = time.perf_counter()
            rg = math.nan if cfg.skip_full_gap else full_gap(network, od_matrix, mapped)
            t4 = time.perf_counter()
            for key, a, b in zip(TIMING_CATEGORIES, (t0, t1, t2, t3), (t1, t2, t3, t4)):
                timing[key] += b - a
            trace.append(TraceRow(it, t4 - start, rg, tstt(network, mapped.link_flows), phase))
            last = (rg, it, mapped)
            if not cfg.skip_full_gap and rg < best[0]:
                best = (rg, it, mapped)
            if not cfg.skip_full_gap and rg <= cfg.full_gap_threshold:
                break
    finally:
        if pool is not None:
            pool.shutdown()
    timing["wall"] = time.perf_counter() - t_run
    rg, it, sol = best if (cfg.track_best and best[2] is not None) else last
    return HeuristicResult(sol, rg, it, trace, timing, dec, subnet_sols, master_sol)


@dataclass
class WarmstartResult:
    solution: PathFlowSolution
    trace: list
    heuristic: HeuristicResult
    centralized: SolveResult

    @property
    def relative_gap(self) -> float:
        return self.trace[-1].relative_gap


def run_warmstart(network: Network, od_matrix: ODMatrix, partition: Partition,
                  heuristic_iterations: int = 1, config: HeuristicConfig | None = None,
                  solver_config: SolverConfig | None = None) -> WarmstartResult:
    """Heuristic for a few outer iterations, then gradient projection on the
    full network from the mapped path flows.  Both phases share one clock;
    the trace marks rows ``heuristic`` or ``centralized``."""
    cfg = config or HeuristicConfig()
    cfg = HeuristicConfig(**{**cfg.__dict__, "outer_max_iterations": heuristic_iterations})
    start = time.perf_counter()
    heur = run_heuristic(network, od_matrix, partition, cfg, clock=start)
    initial = warmstart_from(heur.solution, od_matrix, network)
    cen = solve(network, od_matrix, initial, solver_config or SolverConfig(), clock=start, phase="centralized")
    return WarmstartResult(cen.solution, heur.trace + cen.trace, heur, cen)


def run_centralized(network: Network, od_matrix: ODMatrix, config: SolverConfig | None = None) -> SolveResult:
    """Gradient projection on the whole network from all-or-nothing loading."""
    return solve(network, od_matrix, None, config or SolverConfig(), phase="centralized")


def time_to_gap(trace, gap: float, phase: str | None = None) -> float:
    """Elapsed seconds at the first row at or below ``gap``; ``nan`` if never."""
    for r in trace:
        rg = r.relative_gap if hasattr(r, "relative_gap") else r["relative_gap"]
        ph = r.phase if hasattr(r, "phase") else r["phase"]
        el = r.elapsed if hasattr(r, "elapsed") else r["elapsed_seconds"]
        if (phase is None or ph == phase) and rg <= gap:
            return el
    return math.nan


def relative_flow_difference(a, b) -> float:
    """``max |a - b| / max |b|``."""
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    scale = np.abs(b).max()
    return float(np.abs(a - b).max() / scale) if scale > 0 else float(np.abs(a).max())
