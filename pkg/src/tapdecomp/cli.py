"""Command-line entry point.

Subcommands: ``solve``, ``partition``, ``refine``, ``heuristic``,
``warmstart`` and ``report``.  Exit codes: 0 success, 1 invalid input or
usage, 2 solver failure (infeasible demand, numerical breakdown).  Every run
writes ``manifest_<command>.txt`` (key=value) next to its outputs; all files
are written to a temporary name and renamed on success.
"""
from __future__ import annotations

import argparse
import csv
import glob
import hashlib
import io
import math
import os
import platform
import re
import sys
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .driver import HeuristicConfig, run_centralized, run_heuristic, run_warmstart, time_to_gap
from .equilibrium import SolverConfig
from .errors import TapError, ValidationError
from .partitioning import fm_refine, partition_network, psi
from .tntp import (atomic_write_text, parse_network, parse_trips, read_flows, read_partition, read_trace,
                   write_convergence_log, write_flows, write_partition, write_timing, write_trace)

EXIT_OK, EXIT_INPUT, EXIT_SOLVER = 0, 1, 2

REPORT_COLUMNS = ("demand_scale", "n1:n2", "m1:m2", "boundary_nodes", "cut_links", "psi",
                  "heuristic_gap", "centralized_seconds", "warmstart_seconds", "savings_percent")


class _Parser(argparse.ArgumentParser):
    """Usage errors exit with status 1 instead of argparse's 2, which is
    reserved for solver failures."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INPUT, f"{self.prog}: error: {message}\n")


def _positive(text):
    v = float(text)
    if not v > 0 or not math.isfinite(v):
        raise argparse.ArgumentTypeError(f"must be a positive number, got {text}")
    return v


def _count(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {text}")
    return v


def build_parser() -> argparse.ArgumentParser:
    shared = argparse.ArgumentParser(add_help=False)
    shared.add_argument("--net", help="TNTP network file")
    shared.add_argument("--trips", help="TNTP trips file")
    shared.add_argument("--out-dir", default=".", help="output directory (default: .)")
    shared.add_argument("--gap", type=_positive, default=1e-4, help="target relative gap (default: 1e-4)")
    shared.add_argument("--max-iters", type=_count, default=500, help="solver iteration cap (default: 500)")
    shared.add_argument("--workers", type=_count, default=1, help="subnetwork worker processes (default: 1)")
    shared.add_argument("--seed", type=int, default=0, help="partitioner seed (default: 0)")

    part = argparse.ArgumentParser(add_help=False)
    part.add_argument("--partition-file", help="partition to use, 'node_id subnet_id' lines")
    part.add_argument("--partitioner", choices=("sdda", "spectral", "spectral-unit", "import"),
                      default=None, help="how to obtain the partition (default: import if "
                      "--partition-file is given, else sdda)")
    part.add_argument("--flows", help="reference link flows (tail head flow [cost])")

    scale = argparse.ArgumentParser(add_help=False)
    scale.add_argument("--demand-scale", type=_positive, default=1.0, help="demand multiplier (default: 1)")

    p = _Parser(prog="tapdecomp", description="Decomposition heuristic for static traffic assignment.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("solve", parents=[shared, scale], help="centralized gradient projection")
    sub.add_parser("partition", parents=[shared, part], help="partition a network into two subnetworks")
    sub.add_parser("refine", parents=[shared, part], help="psi-driven boundary refinement of a partition")
    h = sub.add_parser("heuristic", parents=[shared, part, scale], aliases=["decompose-solve"],
                       help="decomposition heuristic")
    h.add_argument("--heuristic-iters", type=_count, default=10, help="outer iterations (default: 10)")
    h.add_argument("--skip-full-gap", action="store_true",
                   help="run all outer iterations without evaluating the full-network gap")
    w = sub.add_parser("warmstart", parents=[shared, part, scale],
                       help="heuristic iterations, then gradient projection on the full network")
    w.add_argument("--heuristic-iters", type=_count, default=1, help="heuristic iterations (default: 1)")
    r = sub.add_parser("report", help="compare centralized and warmstart traces in --out-dir")
    r.add_argument("--out-dir", default=".", help="directory holding the traces (default: .)")
    r.add_argument("--gap", type=_positive, default=1e-4, help="gap for time-to-gap (default: 1e-4)")
    return p


# ------------------------------------------------------------------- helpers
def _require(args, *names):
    for name in names:
        value = getattr(args, name.replace("-", "_"))
        if value is None:
            raise ValidationError(f"--{name} is required for {args.command}")
        if not os.path.isfile(value):
            raise ValidationError(f"--{name}: no such file {value}")


def _scale_tag(scale: float) -> str:
    return f"d{scale:g}"


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_kv(path, items) -> None:
    atomic_write_text(path, "".join(f"{k}={v}\n" for k, v in items))


def read_kv(path) -> dict:
    out = {}
    with open(path) as fh:
        for line in fh:
            if "=" in line:
                k, v = line.rstrip("\n").split("=", 1)
                out[k] = v
    return out


def _manifest(args, argv, out: Path) -> None:
    items = [("command", args.command), ("argv", " ".join(argv)), ("tapdecomp", __version__),
             ("python", platform.python_version()), ("numpy", np.__version__), ("scipy", scipy.__version__)]
    for key in sorted(vars(args)):
        items.append((f"flag.{key}", getattr(args, key)))
    for key in ("net", "trips", "partition_file", "flows"):
        path = getattr(args, key, None)
        if path:
            items.append((f"sha256.{key}", _sha256(path)))
    _write_kv(out / f"manifest_{args.command}.txt", items)


def _load(args):
    _require(args, "net", "trips")
    net = parse_network(args.net)
    od = parse_trips(args.trips, net)
    scale = getattr(args, "demand_scale", 1.0)
    if scale != 1.0:
        od = od.scaled(scale)
    return net, od


def _reference_flows(args, net):
    return read_flows(args.flows, net) if args.flows else None


def _partition(args, net, flows):
    method = args.partitioner or ("import" if args.partition_file else "sdda")
    if method == "import":
        _require(args, "partition-file")
        return read_partition(args.partition_file, net)
    if method == "spectral" and flows is None:
        raise ValidationError("--partitioner spectral weights links by flow and needs --flows")
    return partition_network(net, method, flows, seed=args.seed)


def _check_files(args):
    for name in ("partition_file", "flows"):
        value = getattr(args, name, None)
        if value is not None and not os.path.isfile(value):
            raise ValidationError(f"--{name.replace('_', '-')}: no such file {value}")


# ------------------------------------------------------------------ commands
def cmd_solve(args, out: Path) -> None:
    net, od = _load(args)
    res = run_centralized(net, od, SolverConfig(target_rg=args.gap, max_iterations=args.max_iters))
    x = res.solution.link_flows
    tag = _scale_tag(args.demand_scale)
    write_flows(net, x, net.link_costs(x), out / "flows.tsv")
    write_convergence_log(res.trace, out / "convergence.csv")
    write_trace(res.trace, out / f"trace_centralized_{tag}.csv")
    print(f"iterations={res.iterations} relative_gap={res.relative_gap:.6e} tstt={res.trace[-1].tstt:.6f}")


def cmd_partition(args, out: Path) -> None:
    _require(args, "net")
    _check_files(args)
    net = parse_network(args.net)
    flows = _reference_flows(args, net)
    part = _partition(args, net, flows)
    write_partition(part, out / "partition.txt", net)
    rows = [("subnets", part.n_subnets), ("nodes", ":".join(str(len(part.subnet_nodes(s)))
                                                             for s in range(part.n_subnets))),
            ("cut_links", len(part.cut_links(net)))]
    if flows is not None and args.trips:
        _require(args, "trips")
        rep = psi(net, parse_trips(args.trips, net), flows, part)
        rows.append(("psi", repr(rep.psi)))
    _write_kv(out / "partition_stats.txt", rows)
    print(" ".join(f"{k}={v}" for k, v in rows))


def cmd_refine(args, out: Path) -> None:
    if args.flows is None:
        raise ValidationError("refine needs --flows: psi is defined from reference equilibrium link flows")
    _require(args, "net", "trips", "flows")
    _check_files(args)
    net = parse_network(args.net)
    od = parse_trips(args.trips, net)
    flows = read_flows(args.flows, net)
    part = _partition(args, net, flows)
    before = psi(net, od, flows, part)
    refined = fm_refine(net, od, flows, part)
    after = psi(net, od, flows, refined)
    write_partition(refined, out / "partition_refined.txt", net)
    _write_kv(out / "refine_stats.txt", [("psi_before", repr(before.psi)), ("psi_after", repr(after.psi))])
    print(f"psi_before={before.psi:.6f} psi_after={after.psi:.6f}")


def _heuristic_config(args, iters) -> HeuristicConfig:
    return HeuristicConfig(outer_max_iterations=iters, full_gap_threshold=args.gap, worker_count=args.workers,
                           skip_full_gap=getattr(args, "skip_full_gap", False))


def cmd_heuristic(args, out: Path) -> None:
    _check_files(args)
    net, od = _load(args)
    part = _partition(args, net, _reference_flows(args, net))
    res = run_heuristic(net, od, part, _heuristic_config(args, args.heuristic_iters))
    x = res.solution.link_flows
    tag = _scale_tag(args.demand_scale)
    write_flows(net, x, net.link_costs(x), out / "flows_heuristic.tsv")
    write_trace(res.trace, out / f"trace_heuristic_{tag}.csv")
    write_timing(res.timing, out / f"timing_heuristic_{tag}.csv")
    print(f"best_relative_gap={res.best_rg:.6e} best_iteration={res.best_iteration} routing={res.decomposition.routing}")


def cmd_warmstart(args, out: Path) -> None:
    _check_files(args)
    net, od = _load(args)
    flows = _reference_flows(args, net)
    part = _partition(args, net, flows)
    res = run_warmstart(net, od, part, args.heuristic_iters, _heuristic_config(args, args.heuristic_iters),
                        SolverConfig(target_rg=args.gap, max_iterations=args.max_iters))
    x = res.solution.link_flows
    tag = _scale_tag(args.demand_scale)
    write_flows(net, x, net.link_costs(x), out / f"flows_warmstart_{tag}.tsv")
    write_trace(res.trace, out / f"trace_warmstart_{tag}.csv")
    write_timing(res.heuristic.timing, out / f"timing_warmstart_{tag}.csv")
    ls = part.link_subnet(net)
    k = part.n_subnets
    stats = [("demand_scale", f"{args.demand_scale:g}"),
             ("n1:n2", ":".join(str(len(part.subnet_nodes(s))) for s in range(k))),
             ("m1:m2", ":".join(str(int((ls == s).sum())) for s in range(k))),
             ("boundary_nodes", sum(len(v) for v in part.boundary_nodes(net).values())),
             ("cut_links", int((ls < 0).sum())),
             ("psi", repr(psi(net, od, flows, part).psi) if flows is not None else "nan"),
             ("heuristic_gap", repr(res.heuristic.trace[-1].relative_gap)),
             ("routing", res.heuristic.decomposition.routing)]
    _write_kv(out / f"summary_warmstart_{tag}.txt", stats)
    print(f"relative_gap={res.relative_gap:.6e} heuristic_gap={res.heuristic.trace[-1].relative_gap:.6e}")


def _fmt(v) -> str:
    if isinstance(v, float):
        return "nan" if math.isnan(v) else f"{v:.3f}"
    return str(v)


def report_rows(out_dir, gap: float = 1e-4) -> list:
    """One row per demand scale with both a centralized and a warmstart trace."""
    out_dir = Path(out_dir)
    traces = sorted(glob.glob(str(out_dir / "trace_*_d*.csv")))
    if len(traces) < 2:
        raise ValidationError(f"{out_dir}: need centralized and warmstart traces, found {len(traces)}")
    pat = re.compile(r"trace_(centralized|warmstart)_d(.+)\.csv$")
    found = {}
    for path in traces:
        m = pat.search(os.path.basename(path))
        if m:
            found.setdefault(m.group(2), {})[m.group(1)] = path
    rows = []
    for tag in sorted(found, key=float):
        pair = found[tag]
        if len(pair) != 2:
            raise ValidationError(f"{out_dir}: demand scale {tag} lacks a "
                                  f"{'warmstart' if 'centralized' in pair else 'centralized'} trace")
        cen = time_to_gap(read_trace(pair["centralized"]), gap)
        warm = time_to_gap(read_trace(pair["warmstart"]), gap)
        summary = out_dir / f"summary_warmstart_d{tag}.txt"
        stats = read_kv(summary) if summary.exists() else {}
        savings = (cen - warm) / cen * 100.0 if cen > 0 else math.nan
        row = {"demand_scale": tag}
        for col in ("n1:n2", "m1:m2", "boundary_nodes", "cut_links"):
            row[col] = stats.get(col, "")
        for col in ("psi", "heuristic_gap"):
            row[col] = float(stats[col]) if col in stats else math.nan
        row.update(centralized_seconds=cen, warmstart_seconds=warm, savings_percent=savings)
        rows.append(row)
    if not rows:
        raise ValidationError(f"{out_dir}: no matching centralized/warmstart trace pairs")
    return rows


def format_report(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(REPORT_COLUMNS)
    for r in rows:
        w.writerow([_fmt(r[c]) if c not in ("psi", "heuristic_gap") else
                    ("nan" if math.isnan(r[c]) else f"{r[c]:.6g}") for c in REPORT_COLUMNS])
    return buf.getvalue()


def cmd_report(args, out: Path) -> None:
    text = format_report(report_rows(out, args.gap))
    atomic_write_text(out / "report.csv", text)
    sys.stdout.write(text)


COMMANDS = {"solve": cmd_solve, "partition": cmd_partition, "refine": cmd_refine,
            "heuristic": cmd_heuristic, "warmstart": cmd_warmstart, "report": cmd_report}


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.command == "decompose-solve":
        args.command = "heuristic"
    out = Path(args.out_dir)
    try:
        if args.command == "report":
            if not out.is_dir():
                raise ValidationError(f"--out-dir: no such directory {out}")
        else:
            out.mkdir(parents=True, exist_ok=True)
        COMMANDS[args.command](args, out)
        if args.command != "report":
            _manifest(args, argv, out)
    except (ValidationError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except TapError as exc:
        print(f"solver error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
