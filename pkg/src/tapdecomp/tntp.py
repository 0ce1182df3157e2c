"""Readers and writers for TNTP instance files and the package's result files.

TNTP files open with ``<TAG> value`` metadata lines closed by
``<END OF METADATA>``; ``~`` starts a comment.  Node ids in files are the
external labels; everything in memory uses dense 0-based indices.
"""
from __future__ import annotations

import csv
import io
import math
import os
import re
import tempfile
from pathlib import Path
from typing import Iterable

import numpy as np

from .errors import ParseError, ValidationError
from .network import Network, ODMatrix
from .partitioning import Partition

_META = re.compile(r"^<([^>]+)>\s*(.*)$")
LINK_COLUMNS = ("init_node", "term_node", "capacity", "length", "free_flow_time",
                "b", "power", "speed", "toll", "link_type")
EXTRA_COLUMNS = ("length", "speed", "toll", "link_type")


def atomic_write_text(path, text: str) -> None:
    """Write through a temporary file in the target directory, then rename."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _read_lines(path) -> list:
    try:
        return Path(path).read_text().splitlines()
    except UnicodeDecodeError as exc:
        raise ParseError(f"not a text file ({exc})", path=path) from None


def _split_metadata(lines, path):
    """Return (metadata dict, index of the first body line)."""
    meta = {}
    for k, raw in enumerate(lines):
        line = raw.strip()
        if not line or line.startswith("~"):
            continue
        m = _META.match(line)
        if not m:
            raise ParseError("expected <END OF METADATA> before data", k + 1, path)
        tag = m.group(1).strip().upper()
        if tag == "END OF METADATA":
            return meta, k + 1
        meta[tag] = (m.group(2).strip(), k + 1)
    raise ParseError("missing <END OF METADATA>", len(lines), path)


def _int_tag(meta, tag, path, required=True):
    if tag not in meta:
        if required:
            raise ParseError(f"missing <{tag}> header", 1, path)
        return None
    value, line = meta[tag]
    try:
        return int(float(value))
    except ValueError:
        raise ParseError(f"<{tag}> is not a number: {value!r}", line, path) from None


def parse_network(path, name: str | None = None) -> Network:
    """Read a TNTP ``_net`` file."""
    lines = _read_lines(path)
    meta, start = _split_metadata(lines, path)
    n_zones = _int_tag(meta, "NUMBER OF ZONES", path)
    n_nodes = _int_tag(meta, "NUMBER OF NODES", path)
    ftn = _int_tag(meta, "FIRST THRU NODE", path)
    n_links = _int_tag(meta, "NUMBER OF LINKS", path)
    if n_zones > n_nodes:
        raise ParseError(f"{n_zones} zones but only {n_nodes} nodes", meta["NUMBER OF ZONES"][1], path)
    if ftn > n_zones + 1:
        raise ValidationError(
            f"{path}: first through node {ftn} leaves non-zone nodes closed to through traffic")

    cols = {c: [] for c in LINK_COLUMNS}
    seen = {}
    for k in range(start, len(lines)):
        line = lines[k].split("~", 1)[0].strip()
        if not line:
            continue
        fields = line.replace(";", " ").split()
        if len(fields) < 7:
            raise ParseError(f"link record has {len(fields)} fields, expected at least 7", k + 1, path)
        try:
            vals = [float(v) for v in fields[:10]]
        except ValueError as exc:
            raise ParseError(f"bad number in link record ({exc})", k + 1, path) from None
        vals += [0.0] * (10 - len(vals))
        i, j = int(vals[0]), int(vals[1])
        for v in (i, j):
            if not 1 <= v <= n_nodes:
                raise ParseError(f"node {v} outside 1..{n_nodes}", k + 1, path)
        if (i, j) in seen:
            raise ParseError(f"duplicate link ({i},{j}), first defined on line {seen[(i, j)]}", k + 1, path)
        seen[(i, j)] = k + 1
        if vals[2] <= 0:
            raise ValidationError(f"{path}:{k + 1}: link ({i},{j}) has capacity {vals[2]:g} <= 0")
        if vals[4] < 0:
            raise ValidationError(f"{path}:{k + 1}: link ({i},{j}) has negative free-flow time")
        for c, v in zip(LINK_COLUMNS, vals):
            cols[c].append(v)
    if len(seen) != n_links:
        raise ParseError(f"header declares {n_links} links but {len(seen)} records were found",
                         meta["NUMBER OF LINKS"][1], path)
    tail = np.asarray(cols["init_node"], dtype=np.int64) - 1
    head = np.asarray(cols["term_node"], dtype=np.int64) - 1
    return Network(
        tail, head, cols["free_flow_time"], cols["capacity"], cols["b"], cols["power"],
        n_nodes=n_nodes, zones=range(n_zones), first_thru_node=ftn,
        extra={c: np.asarray(cols[c]) for c in EXTRA_COLUMNS},
        name=name or Path(path).stem,
    )


def parse_trips(path, network: Network | None = None) -> ODMatrix:
    """Read a TNTP ``_trips`` file into an :class:`ODMatrix`.

    Without ``network`` node ids are checked against ``<NUMBER OF ZONES>``
    and mapped as ``id - 1``.
    """
    lines = _read_lines(path)
    meta, start = _split_metadata(lines, path)
    n_zones = _int_tag(meta, "NUMBER OF ZONES", path)
    limit = network.n_nodes if network is not None else n_zones

    def index(v, k):
        if not 1 <= v <= limit:
            raise ParseError(f"zone {v} outside 1..{limit}", k, path)
        if network is not None:
            idx = network.index_of(v)
            if not network.is_zone(idx):
                raise ParseError(f"node {v} is not a zone", k, path)
            return idx
        return v - 1

    entries = {}
    origin = None
    entry = re.compile(r"(\S+)\s*:\s*([^;\s]+)\s*;?")
    for k in range(start, len(lines)):
        line = lines[k].split("~", 1)[0].strip()
        if not line:
            continue
        if line.lower().startswith("origin"):
            parts = line.split()
            if len(parts) != 2:
                raise ParseError("malformed origin line", k + 1, path)
            try:
                origin = index(int(float(parts[1])), k + 1)
            except ValueError:
                raise ParseError(f"bad origin id {parts[1]!r}", k + 1, path) from None
            continue
        if origin is None:
            raise ParseError("demand entry before any Origin line", k + 1, path)
        pos = 0
        for m in entry.finditer(line):
            if line[pos:m.start()].strip():
                raise ParseError(f"unparseable text {line[pos:m.start()].strip()!r}", k + 1, path)
            pos = m.end()
            try:
                dest = int(float(m.group(1)))
                value = float(m.group(2))
            except ValueError:
                raise ParseError(f"bad entry {m.group(0)!r}", k + 1, path) from None
            if value < 0 or not math.isfinite(value):
                raise ValidationError(f"{path}:{k + 1}: demand {value} is negative or not finite")
            d = index(dest, k + 1)
            if value > 0 and d != origin:
                entries[(origin, d)] = entries.get((origin, d), 0.0) + value
        if line[pos:].strip():
            raise ParseError(f"unparseable text {line[pos:].strip()!r}", k + 1, path)
    return ODMatrix(entries)


def format_network(network: Network) -> str:
    """TNTP text for ``network`` (physical links only)."""
    extra = network.extra
    lines = [
        f"<NUMBER OF ZONES> {len(network.zones)}",
        f"<NUMBER OF NODES> {network.n_nodes}",
        f"<FIRST THRU NODE> {network.first_thru_node}",
        f"<NUMBER OF LINKS> {network.n_links}",
        "<END OF METADATA>",
        "",
        "~\t" + "\t".join(LINK_COLUMNS) + "\t;",
    ]
    lab = network.labels
    for a in range(network.n_links):
        row = [str(lab[network.tail[a]]), str(lab[network.head[a]]), repr(float(network.capacity[a])),
               repr(float(extra["length"][a])) if "length" in extra else "0",
               repr(float(network.free_flow_time[a])), repr(float(network.alpha[a])),
               repr(float(network.beta[a]))]
        for c in ("speed", "toll", "link_type"):
            row.append(repr(float(extra[c][a])) if c in extra else "0")
        lines.append("\t" + "\t".join(row) + "\t;")
    return "\n".join(lines) + "\n"


def write_network(network: Network, path) -> None:
    atomic_write_text(path, format_network(network))


def format_trips(od: ODMatrix, network: Network | None = None, n_zones: int | None = None) -> str:
    label = (lambda i: int(network.labels[i])) if network is not None else (lambda i: i + 1)
    if n_zones is None:
        n_zones = len(network.zones) if network is not None else max((max(k) for k in od), default=-1) + 1
    lines = [f"<NUMBER OF ZONES> {n_zones}", f"<TOTAL OD FLOW> {od.total()!r}", "<END OF METADATA>", ""]
    for o in od.origins():
        lines.append(f"Origin {label(o)}")
        lines.append(" ".join(f"{label(d)} : {v!r};" for d, v in od.destinations(o)))
        lines.append("")
    return "\n".join(lines)


def write_trips(od: ODMatrix, path, network: Network | None = None) -> None:
    atomic_write_text(path, format_trips(od, network))


# ----------------------------------------------------------------- result files
def write_flows(network: Network, link_flows, costs, path) -> None:
    """Tab-separated ``tail head flow cost`` with external node ids."""
    x = np.asarray(link_flows, dtype=float)
    c = np.asarray(costs, dtype=float)
    if x.shape != (network.n_links,) or c.shape != (network.n_links,):
        raise ValidationError("flow/cost vectors do not match the network")
    buf = io.StringIO()
    buf.write("tail\thead\tflow\tcost\n")
    lab = network.labels
    for a in range(network.n_links):
        buf.write(f"{lab[network.tail[a]]}\t{lab[network.head[a]]}\t{float(x[a])!r}\t{float(c[a])!r}\n")
    atomic_write_text(path, buf.getvalue())


def read_flows(path, network: Network) -> np.ndarray:
    """Link flow vector from a ``tail head flow [cost]`` file.

    Links missing from the file get zero flow.
    """
    x = np.zeros(network.n_links)
    for k, raw in enumerate(_read_lines(path), start=1):
        line = raw.split("~", 1)[0].strip()
        if not line:
            continue
        parts = line.replace(";", " ").split()
        if parts[0].lower() == "tail" or parts[0].lower().startswith("from"):
            continue
        if len(parts) < 3:
            raise ParseError("expected tail, head, flow", k, path)
        try:
            i, j, f = int(float(parts[0])), int(float(parts[1])), float(parts[2])
        except ValueError:
            raise ParseError(f"bad flow record {line!r}", k, path) from None
        if f < 0:
            raise ValidationError(f"{path}:{k}: negative flow")
        try:
            a = network.find_link(network.index_of(i), network.index_of(j))
        except ValidationError:
            raise ParseError(f"no link ({i},{j}) in the network", k, path) from None
        x[a] = f
    return x


def write_partition(partition: Partition, path, network: Network | None = None) -> None:
    """One ``node_id subnet_id`` line per node and membership.

    A centroid copied into several subnetworks appears once per copy.
    """
    label = (lambda i: int(network.labels[i])) if network is not None else (lambda i: i + 1)
    lines = []
    for v in range(partition.n_nodes):
        for s in sorted(partition.members(v)):
            lines.append(f"{label(v)} {s}")
    atomic_write_text(path, "\n".join(lines) + "\n")


def read_partition(path, network: Network | None = None) -> Partition:
    memberships = {}
    for k, raw in enumerate(_read_lines(path), start=1):
        line = raw.split("~", 1)[0].split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 2:
            raise ParseError("expected 'node_id subnet_id'", k, path)
        try:
            node, s = int(parts[0]), int(parts[1])
        except ValueError:
            raise ParseError(f"bad partition record {line!r}", k, path) from None
        if s < 0:
            raise ParseError("negative subnet id", k, path)
        if network is not None:
            try:
                v = network.index_of(node)
            except ValidationError:
                raise ParseError(f"unknown node {node}", k, path) from None
        else:
            v = node - 1
            if v < 0:
                raise ParseError(f"node id {node} must be >= 1", k, path)
        memberships.setdefault(v, set()).add(s)
    n = network.n_nodes if network is not None else (max(memberships) + 1 if memberships else 0)
    missing = [v for v in range(n) if v not in memberships]
    if missing:
        lab = network.labels[missing[0]] if network is not None else missing[0] + 1
        raise ValidationError(f"{path}: node {lab} has no subnet ({len(missing)} nodes unassigned)")
    ids = sorted(set().union(*memberships.values())) if memberships else []
    if ids != list(range(len(ids))):
        raise ValidationError(f"{path}: subnet ids {ids} are not contiguous from 0")
    return Partition.from_memberships([memberships[v] for v in range(n)])


def write_convergence_log(rows: Iterable, path) -> None:
    """CSV ``iteration,elapsed_seconds,relative_gap,tstt``."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["iteration", "elapsed_seconds", "relative_gap", "tstt"])
    for r in rows:
        w.writerow([r.iteration, repr(float(r.elapsed)), repr(float(r.relative_gap)), repr(float(r.tstt))])
    atomic_write_text(path, buf.getvalue())


def read_convergence_log(path) -> list:
    with open(path, newline="") as fh:
        return [{"iteration": int(r["iteration"]), "elapsed_seconds": float(r["elapsed_seconds"]),
                 "relative_gap": float(r["relative_gap"]), "tstt": float(r["tstt"])}
                for r in csv.DictReader(fh)]


def write_trace(rows: Iterable, path) -> None:
    """CSV ``phase,iteration,elapsed_seconds,relative_gap,tstt``."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["phase", "iteration", "elapsed_seconds", "relative_gap", "tstt"])
    for r in rows:
        w.writerow([r.phase, r.iteration, repr(float(r.elapsed)), repr(float(r.relative_gap)),
                    repr(float(r.tstt))])
    atomic_write_text(path, buf.getvalue())


def read_trace(path) -> list:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if rows and "phase" not in rows[0]:
        raise ValidationError(f"{path}: not a trace file (no phase column)")
    return [{"phase": r["phase"], "iteration": int(r["iteration"]),
             "elapsed_seconds": float(r["elapsed_seconds"]),
             "relative_gap": float(r["relative_gap"]), "tstt": float(r["tstt"])} for r in rows]


def write_timing(split: dict, path) -> None:
    """CSV ``category,seconds,fraction``; the fraction is of the wall time."""
    wall = split.get("wall", sum(v for k, v in split.items() if k != "wall"))
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["category", "seconds", "fraction"])
    for k, v in split.items():
        if k == "wall":
            continue
        w.writerow([k, f"{v:.6f}", f"{(v / wall if wall > 0 else 0.0):.6f}"])
    w.writerow(["wall", f"{wall:.6f}", "1.000000"])
    atomic_write_text(path, buf.getvalue())
