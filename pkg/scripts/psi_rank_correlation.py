"""Rank correlation between a partition's psi and the best relative gap the
heuristic reaches with it.

Partitions come from every partitioner over a sweep of seeds, each with and
without refinement; duplicates are dropped.  The correlation is reported,
not tested: low psi is expected to go with low gap, but nothing forces it.

    python scripts/psi_rank_correlation.py [--instance sioux-falls|grid] [--seeds 8]
"""
from __future__ import annotations

import argparse
from pathlib import Path

from scipy.stats import spearmanr

from tapdecomp.driver import HeuristicConfig, run_centralized, run_heuristic
from tapdecomp.equilibrium import SolverConfig
from tapdecomp.instances import synthetic_grid
from tapdecomp.partitioning import fm_refine, partition_network, psi
from tapdecomp.tntp import parse_network, parse_trips

DATA = Path(__file__).resolve().parent.parent / "data"


def load(name: str):
    if name == "sioux-falls":
        net = parse_network(DATA / "SiouxFalls_net.tntp")
        return net, parse_trips(DATA / "SiouxFalls_trips.tntp", net)
    return synthetic_grid(10, 10, 12, seed=3, demand_per_pair=80, capacity=300)


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--instance", choices=("sioux-falls", "grid"), default="sioux-falls")
    parser.add_argument("--seeds", type=int, default=8)
    parser.add_argument("--iterations", type=int, default=5)
    args = parser.parse_args()

    net, od = load(args.instance)
    ref = run_centralized(net, od, SolverConfig(target_rg=1e-6)).solution.link_flows
    seen, rows = set(), []
    for method in ("sdda", "spectral", "spectral-unit"):
        for seed in range(args.seeds):
            base = partition_network(net, method, reference_flows=ref, seed=seed)
            for part, tag in ((base, method), (fm_refine(net, od, ref, base), f"{method}+fm")):
                if part in seen:
                    continue
                seen.add(part)
                heur = run_heuristic(net, od, part, HeuristicConfig(outer_max_iterations=args.iterations,
                                                                    full_gap_threshold=1e-9))
                rows.append((tag, seed, psi(net, od, ref, part).psi, heur.best_rg))

    print(f"{'partition':<16} {'seed':>4} {'psi':>12} {'best RG':>10}")
    for tag, seed, p, rg in sorted(rows, key=lambda r: r[2]):
        print(f"{tag:<16} {seed:>4} {p:>12.1f} {rg:>10.3e}")
    if len(rows) >= 3:
        rho, pval = spearmanr([r[2] for r in rows], [r[3] for r in rows])
        print(f"\n{len(rows)} distinct partitions; Spearman rho = {rho:.3f} (p = {pval:.3g})")
    else:
        print(f"\nonly {len(rows)} distinct partitions; no correlation reported")


if __name__ == "__main__":
    main()
