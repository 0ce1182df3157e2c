"""Write the public Sioux Falls instance as TNTP net/trips files.

The instance ships inside the aequilibrae wheel (reference_files/sioux_falls.zip)
as a spatialite project plus an OMX demand matrix.  The link table carries the
standard TNTP columns (capacity, free-flow time, B, power), so the conversion
is a straight copy.

    pip download aequilibrae --no-deps -d /tmp/wheels
    python scripts/extract_sioux_falls.py /tmp/wheels/aequilibrae-*.whl data/
"""
from __future__ import annotations

import argparse
import io
import sqlite3
import tempfile
import zipfile
from pathlib import Path

import h5py


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("wheel", type=Path)
    parser.add_argument("out_dir", type=Path)
    args = parser.parse_args()

    with zipfile.ZipFile(args.wheel) as wheel:
        inner = zipfile.ZipFile(io.BytesIO(wheel.read("aequilibrae/reference_files/sioux_falls.zip")))
    with tempfile.TemporaryDirectory() as tmp:
        inner.extract("project_database.sqlite", tmp)
        inner.extract("matrices/demand.omx", tmp)
        con = sqlite3.connect(Path(tmp) / "project_database.sqlite")
        links = con.execute(
            "select a_node, b_node, capacity_ab, free_flow_time, b, power from links order by link_id"
        ).fetchall()
        con.close()
        with h5py.File(Path(tmp) / "matrices/demand.omx", "r") as omx:
            demand = omx["data/matrix"][:]
            taz = omx["lookup/taz"][:]

    nodes = sorted({a for a, _, *_ in links} | {b for _, b, *_ in links})
    args.out_dir.mkdir(parents=True, exist_ok=True)
    net_lines = [
        f"<NUMBER OF ZONES> {len(taz)}",
        f"<NUMBER OF NODES> {len(nodes)}",
        "<FIRST THRU NODE> 1",
        f"<NUMBER OF LINKS> {len(links)}",
        "<END OF METADATA>",
        "",
        "~\tinit_node\tterm_node\tcapacity\tlength\tfree_flow_time\tb\tpower\tspeed\ttoll\tlink_type\t;",
    ]
    for a, b, cap, fft, alpha, power in links:
        net_lines.append(f"\t{a}\t{b}\t{cap!r}\t{fft:g}\t{fft:g}\t{alpha:g}\t{power:g}\t0\t0\t1\t;")
    (args.out_dir / "SiouxFalls_net.tntp").write_text("\n".join(net_lines) + "\n")

    trip_lines = [
        f"<NUMBER OF ZONES> {len(taz)}",
        f"<TOTAL OD FLOW> {demand.sum():.1f}",
        "<END OF METADATA>",
        "",
    ]
    for i, origin in enumerate(taz):
        trip_lines.append(f"Origin \t{int(origin)}")
        row = [f"{int(dest):5d} : {demand[i, j]:8.1f};" for j, dest in enumerate(taz)]
        for k in range(0, len(row), 5):
            trip_lines.append("  ".join(row[k:k + 5]))
        trip_lines.append("")
    (args.out_dir / "SiouxFalls_trips.tntp").write_text("\n".join(trip_lines))


if __name__ == "__main__":
    main()
