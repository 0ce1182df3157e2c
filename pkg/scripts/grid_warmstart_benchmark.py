"""Warmstart against centralized solves on a generated grid at several demand
levels, all using one base partition, followed by the comparison report.

    python scripts/grid_warmstart_benchmark.py --rows 44 --cols 45 --zones 20 --out-dir runs/grid
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

from tapdecomp.cli import main as cli
from tapdecomp.instances import synthetic_grid
from tapdecomp.partitioning import partition_network
from tapdecomp.tntp import write_network, write_partition, write_trips


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--rows", type=int, default=44)
    parser.add_argument("--cols", type=int, default=45)
    parser.add_argument("--zones", type=int, default=20)
    parser.add_argument("--seed", type=int, default=1)
    parser.add_argument("--scales", type=float, nargs="+", default=[0.85, 1.0, 1.5])
    parser.add_argument("--gap", type=float, default=1e-4, help="gap the report measures time to")
    parser.add_argument("--final-gap", type=float, default=1e-4, help="gap both runs stop at")
    parser.add_argument("--workers", type=int, default=1)
    parser.add_argument("--out-dir", type=Path, default=Path("runs/grid"))
    args = parser.parse_args()
    out = args.out_dir
    out.mkdir(parents=True, exist_ok=True)

    net, od = synthetic_grid(args.rows, args.cols, args.zones, seed=args.seed)
    write_network(net, out / "grid_net.tntp")
    write_trips(od, out / "grid_trips.tntp", net)
    # demand scenarios reuse the partition built at base demand
    write_partition(partition_network(net, "sdda", seed=0), out / "grid.part", net)
    common = ["--net", str(out / "grid_net.tntp"), "--trips", str(out / "grid_trips.tntp"),
              "--out-dir", str(out), "--gap", str(args.final_gap), "--workers", str(args.workers)]
    for scale in args.scales:
        s = ["--demand-scale", f"{scale:g}"]
        for argv in (["solve", *common, *s], ["warmstart", *common, *s, "--partition-file", str(out / "grid.part")]):
            print("$ tapdecomp", " ".join(argv), flush=True)
            code = cli(argv)
            if code:
                return code
    return cli(["report", "--out-dir", str(out), "--gap", str(args.gap)])


if __name__ == "__main__":
    sys.exit(main())
