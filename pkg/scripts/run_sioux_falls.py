"""Sioux Falls end to end: centralized solve, partitions with their psi
statistics, the decomposition heuristic and the warmstart.

    python scripts/run_sioux_falls.py [--gap 1e-4] [--out-dir runs/sioux_falls]
"""
from __future__ import annotations

import argparse
import logging
from pathlib import Path

from tapdecomp.driver import HeuristicConfig, run_centralized, run_heuristic, run_warmstart, time_to_gap
from tapdecomp.equilibrium import SolverConfig
from tapdecomp.partitioning import fm_refine, partition_network, psi
from tapdecomp.tntp import parse_network, parse_trips, write_partition, write_trace

DATA = Path(__file__).resolve().parent.parent / "data"
log = logging.getLogger("sioux_falls")


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--net", type=Path, default=DATA / "SiouxFalls_net.tntp")
    parser.add_argument("--trips", type=Path, default=DATA / "SiouxFalls_trips.tntp")
    parser.add_argument("--gap", type=float, default=1e-4)
    parser.add_argument("--heuristic-iters", type=int, default=10)
    parser.add_argument("--out-dir", type=Path, default=Path("runs/sioux_falls"))
    args = parser.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    args.out_dir.mkdir(parents=True, exist_ok=True)

    net = parse_network(args.net)
    od = parse_trips(args.trips, net)
    cen = run_centralized(net, od, SolverConfig(target_rg=1e-6))
    write_trace(cen.trace, args.out_dir / "trace_centralized.csv")
    ref = cen.solution.link_flows
    log.info("centralized: RG %.2e after %d iterations, TSTT %.1f, %.2fs",
             cen.relative_gap, cen.iterations, cen.trace[-1].tstt, cen.trace[-1].elapsed)

    log.info("%-16s %8s %8s %9s %9s %10s %10s %9s", "partition", "n1:n2", "m1:m2", "boundary", "cut",
             "psi", "best RG", "warm (s)")
    for method in ("sdda", "spectral", "spectral-unit"):
        base = partition_network(net, method, reference_flows=ref)
        for name, part in ((method, base), (f"{method}+fm", fm_refine(net, od, ref, base))):
            rep = psi(net, od, ref, part)
            heur = run_heuristic(net, od, part, HeuristicConfig(outer_max_iterations=args.heuristic_iters))
            warm = run_warmstart(net, od, part, solver_config=SolverConfig(target_rg=args.gap))
            write_partition(part, args.out_dir / f"partition_{name}.txt", net)
            write_trace(warm.trace, args.out_dir / f"trace_warmstart_{name}.csv")
            row = rep.row()
            log.info("%-16s %8s %8s %9d %9d %10.1f %10.2e %9.3f", name, row["n1:n2"], row["m1:m2"],
                     rep.n_boundary, rep.n_cut, rep.psi, heur.best_rg, time_to_gap(warm.trace, args.gap))
    log.info("centralized time to RG %g: %.3fs", args.gap, time_to_gap(cen.trace, args.gap))


if __name__ == "__main__":
    main()
