import csv

import pytest

from tapdecomp.cli import format_report, main, read_kv, report_rows
from tapdecomp.equilibrium import TraceRow
from tapdecomp.network import Network, ODMatrix, relative_gap
from tapdecomp.tntp import parse_network, parse_trips, read_flows, read_trace, write_network, write_trace, write_trips


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    return code, capsys.readouterr()


def test_solve_writes_outputs(sf_paths, tmp_path, capsys):
    net_path, trips_path = sf_paths
    code, out = run(capsys, "solve", "--net", net_path, "--trips", trips_path, "--gap", "1e-6",
                    "--out-dir", tmp_path)
    assert code == 0, out.err
    for name in ("flows.tsv", "convergence.csv", "trace_centralized_d1.csv", "manifest_solve.txt"):
        assert (tmp_path / name).is_file()
    net = parse_network(net_path)
    od = parse_trips(trips_path, net)
    x = read_flows(tmp_path / "flows.tsv", net)
    # offline recomputation from the dumped flows
    trace = read_trace(tmp_path / "trace_centralized_d1.csv")
    assert trace[-1]["relative_gap"] <= 1e-6
    assert relative_gap(net, od, x) == pytest.approx(trace[-1]["relative_gap"], rel=1e-6)
    manifest = read_kv(tmp_path / "manifest_solve.txt")
    assert manifest["command"] == "solve" and manifest["flag.gap"] == "1e-06"
    assert len(manifest["sha256.net"]) == 64


def test_refine_needs_flows(sf_paths, tmp_path, capsys):
    net_path, trips_path = sf_paths
    part = tmp_path / "p.txt"
    part.write_text("1 0\n")
    code, out = run(capsys, "refine", "--net", net_path, "--trips", trips_path, "--partition-file", part,
                    "--out-dir", tmp_path)
    assert code == 1
    assert "--flows" in out.err and "reference" in out.err
    assert not (tmp_path / "partition_refined.txt").exists()


def test_unknown_flag_and_command(capsys):
    code, out = run(capsys, "solve", "--bogus")
    assert code == 1 and "usage" in out.err
    assert run(capsys, "frobnicate")[0] == 1
    assert run(capsys, "solve", "--demand-scale", "0")[0] == 1


def test_missing_input_file(tmp_path, capsys):
    code, out = run(capsys, "solve", "--net", tmp_path / "none.tntp", "--trips", tmp_path / "none.trips",
                    "--out-dir", tmp_path)
    assert code == 1 and "no such file" in out.err


def test_infeasible_demand_exits_2(tmp_path, capsys):
    net = Network([0, 2], [2, 1], [1.0, 1.0], [1.0, 1.0], n_nodes=3, zones=(0, 1), first_thru_node=3)
    write_network(net, tmp_path / "n.tntp")
    write_trips(ODMatrix({(1, 0): 5.0}), tmp_path / "t.tntp", net)
    code, out = run(capsys, "solve", "--net", tmp_path / "n.tntp", "--trips", tmp_path / "t.tntp",
                    "--out-dir", tmp_path / "o")
    assert code == 2, out.err
    assert "error" in out.err


def test_partition_refine_and_scaled_warmstart(sf_paths, tmp_path, capsys):
    net_path, trips_path = sf_paths
    common = ["--net", net_path, "--trips", trips_path, "--out-dir", tmp_path]
    assert run(capsys, "solve", *common, "--gap", "1e-3")[0] == 0
    code, out = run(capsys, "partition", *common, "--partitioner", "spectral", "--flows", tmp_path / "flows.tsv")
    assert code == 0, out.err
    stats = read_kv(tmp_path / "partition_stats.txt")
    assert stats["subnets"] == "2" and "psi" in stats
    code, out = run(capsys, "refine", *common, "--partition-file", tmp_path / "partition.txt",
                    "--flows", tmp_path / "flows.tsv")
    assert code == 0, out.err
    ref = read_kv(tmp_path / "refine_stats.txt")
    assert float(ref["psi_after"]) <= float(ref["psi_before"])
    code, out = run(capsys, "warmstart", *common, "--partition-file", tmp_path / "partition.txt",
                    "--demand-scale", "1.5", "--gap", "1e-4")
    assert code == 0, out.err
    trace = read_trace(tmp_path / "trace_warmstart_d1.5.csv")
    phases = {r["phase"] for r in trace}
    assert phases == {"heuristic", "centralized"}
    assert trace[-1]["relative_gap"] <= 1e-4
    summary = read_kv(tmp_path / "summary_warmstart_d1.5.txt")
    assert summary["demand_scale"] == "1.5"
    for name in ("manifest_partition.txt", "manifest_refine.txt", "manifest_warmstart.txt",
                 "timing_warmstart_d1.5.csv", "flows_warmstart_d1.5.tsv"):
        assert (tmp_path / name).is_file()


def test_heuristic_command(sf_paths, tmp_path, capsys):
    net_path, trips_path = sf_paths
    code, out = run(capsys, "heuristic", "--net", net_path, "--trips", trips_path, "--out-dir", tmp_path,
                    "--heuristic-iters", "2", "--skip-full-gap")
    assert code == 0, out.err
    with open(tmp_path / "timing_heuristic_d1.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert {r["category"] for r in rows} >= {"master", "subnetworks", "mapping", "full_gap"}
    assert len(read_trace(tmp_path / "trace_heuristic_d1.csv")) == 2


def test_decompose_solve_alias(sf_paths, tmp_path, capsys):
    net_path, trips_path = sf_paths
    code, out = run(capsys, "decompose-solve", "--net", net_path, "--trips", trips_path, "--out-dir", tmp_path,
                    "--heuristic-iters", "1", "--skip-full-gap")
    assert code == 0, out.err
    assert read_kv(tmp_path / "manifest_heuristic.txt")["command"] == "heuristic"


def fake_traces(tmp_path, cen_seconds, warm_seconds, scale="1"):
    write_trace([TraceRow(0, 0.0, 1.0, 1.0, "centralized"),
                 TraceRow(1, cen_seconds, 5e-5, 1.0, "centralized")],
                tmp_path / f"trace_centralized_d{scale}.csv")
    write_trace([TraceRow(1, 1.0, 0.1, 1.0, "heuristic"),
                 TraceRow(1, warm_seconds, 5e-5, 1.0, "centralized")],
                tmp_path / f"trace_warmstart_d{scale}.csv")


def test_report_savings(tmp_path, capsys):
    fake_traces(tmp_path, 100.0, 80.0)
    fake_traces(tmp_path, 50.0, 50.0, scale="0.85")
    rows = report_rows(tmp_path)
    assert [r["demand_scale"] for r in rows] == ["0.85", "1"]
    assert rows[0]["savings_percent"] == 0.0
    assert rows[1]["savings_percent"] == pytest.approx(20.0)
    code, out = run(capsys, "report", "--out-dir", tmp_path)
    assert code == 0
    first = (tmp_path / "report.csv").read_bytes()
    assert out.out == first.decode()
    assert out.out.splitlines()[0].startswith("demand_scale,n1:n2,m1:m2,boundary_nodes,cut_links,psi")
    assert run(capsys, "report", "--out-dir", tmp_path)[0] == 0
    assert (tmp_path / "report.csv").read_bytes() == first
    assert format_report(rows) == first.decode()


def test_report_missing_traces(tmp_path, capsys):
    assert run(capsys, "report", "--out-dir", tmp_path)[0] == 1
    fake_traces(tmp_path, 100.0, 80.0)
    (tmp_path / "trace_warmstart_d1.csv").unlink()
    fake_traces(tmp_path, 10.0, 8.0, scale="2")
    code, out = run(capsys, "report", "--out-dir", tmp_path)
    assert code == 1 and "lacks a warmstart trace" in out.err
    assert run(capsys, "report", "--out-dir", tmp_path / "absent")[0] == 1
