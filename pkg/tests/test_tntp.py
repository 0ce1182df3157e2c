import math
import os

import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from tapdecomp.equilibrium import TraceRow
from tapdecomp.errors import ParseError, ValidationError
from tapdecomp.network import Network, ODMatrix
from tapdecomp.partitioning import Partition
from tapdecomp.tntp import (atomic_write_text, format_network, format_trips, parse_network, parse_trips,
                            read_convergence_log, read_flows, read_partition, read_trace, write_convergence_log,
                            write_flows, write_network, write_partition, write_trace, write_trips)

HEADER = "<NUMBER OF ZONES> {z}\n<NUMBER OF NODES> {n}\n<FIRST THRU NODE> {f}\n<NUMBER OF LINKS> {m}\n<END OF METADATA>\n"


def write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text)
    return p


def same_network(a: Network, b: Network):
    assert a.n_nodes == b.n_nodes and a.n_links == b.n_links
    assert a.first_thru_node == b.first_thru_node
    for attr in ("tail", "head", "free_flow_time", "capacity", "alpha", "beta", "zones", "labels", "through"):
        np.testing.assert_array_equal(getattr(a, attr), getattr(b, attr))


def test_minimal_network(tmp_path):
    p = write(tmp_path, "n.tntp", HEADER.format(z=2, n=2, f=1, m=1) + "1 2 100 1 5 0.15 4 0 0 1 ;\n")
    net = parse_network(p)
    assert (net.n_nodes, net.n_links) == (2, 1)
    assert net.free_flow_time[0] == 5.0 and net.capacity[0] == 100.0


def test_sioux_falls_shape(sioux_falls):
    net, od = sioux_falls
    assert (net.n_nodes, net.n_links, len(net.zones)) == (24, 76, 24)
    assert od.total() == pytest.approx(360600.0, rel=1e-15)
    assert len(od) == 528


def test_link_count_mismatch_named(tmp_path):
    p = write(tmp_path, "n.tntp", HEADER.format(z=2, n=3, f=1, m=3) + "1 2 100 1 5 0.15 4 ;\n2 3 100 1 5 0.15 4 ;\n")
    with pytest.raises(ParseError, match="declares 3 links but 2"):
        parse_network(p)


def test_missing_header_has_line_number(tmp_path):
    p = write(tmp_path, "n.tntp", "<NUMBER OF ZONES> 2\n<NUMBER OF NODES> 2\n<NUMBER OF LINKS> 1\n"
              "<END OF METADATA>\n1 2 100 1 5 0.15 4 ;\n")
    with pytest.raises(ParseError, match="FIRST THRU NODE") as exc:
        parse_network(p)
    assert exc.value.path is not None


def test_duplicate_link_and_capacity(tmp_path):
    p = write(tmp_path, "n.tntp", HEADER.format(z=2, n=2, f=1, m=2) + "1 2 100 1 5 0.15 4 ;\n1 2 100 1 5 0.15 4 ;\n")
    with pytest.raises(ParseError, match="duplicate"):
        parse_network(p)
    p = write(tmp_path, "c.tntp", HEADER.format(z=2, n=2, f=1, m=1) + "1 2 0 1 5 0.15 4 ;\n")
    with pytest.raises(ValidationError, match="capacity"):
        parse_network(p)


def test_comments_and_whitespace(tmp_path):
    text = ("~ a comment\n<NUMBER OF ZONES>   2\n<NUMBER OF NODES>\t3\n<FIRST THRU NODE> 3\n"
            "<NUMBER OF LINKS> 2\n<END OF METADATA>\n\n~ init term ...\n"
            "   1\t 3  10 1 2 0.15 4 0 0 1 ;  ~ trailing\n\n3 2 10 1 2 0.15 4 0 0 1;\n")
    net = parse_network(write(tmp_path, "n.tntp", text))
    assert net.n_links == 2 and list(net.zones) == [0, 1]
    assert not net.through[0] and net.through[2]


def test_trips_examples(tmp_path):
    empty = parse_trips(write(tmp_path, "e.tntp", "<NUMBER OF ZONES> 2\n<END OF METADATA>\n"))
    assert len(empty) == 0
    one = parse_trips(write(tmp_path, "o.tntp", "<NUMBER OF ZONES> 2\n<END OF METADATA>\nOrigin 1\n2 : 100.0;\n"))
    assert dict(one.items()) == {(0, 1): 100.0}
    with pytest.raises(ParseError):
        parse_trips(write(tmp_path, "b.tntp", "<NUMBER OF ZONES> 2\n<END OF METADATA>\nOrigin 1\n3 : 1.0;\n"))
    with pytest.raises(ValidationError):
        parse_trips(write(tmp_path, "n.tntp", "<NUMBER OF ZONES> 2\n<END OF METADATA>\nOrigin 1\n2 : -1.0;\n"))


@settings(max_examples=30, suppress_health_check=[HealthCheck.function_scoped_fixture])
@given(st.integers(2, 8), st.data())
def test_trips_total_matches_line_sum(tmp_path, nz, data):
    # the file is built as text and summed independently of the parser
    values = data.draw(st.lists(st.lists(st.sampled_from([0.0, 0.5, 1.25, 10.0, 333.0, 1e4]),
                                         min_size=nz, max_size=nz), min_size=nz, max_size=nz))
    lines = [f"<NUMBER OF ZONES> {nz}", "<END OF METADATA>"]
    expected = []
    for o in range(nz):
        lines.append(f"Origin {o + 1}")
        lines.append("  ".join(f"{d + 1} : {values[o][d]};" for d in range(nz)))
        expected += [values[o][d] for d in range(nz) if d != o]
    od = parse_trips(write(tmp_path, "t.tntp", "\n".join(lines) + "\n"))
    assert od.total() == math.fsum(expected)


@st.composite
def networks(draw):
    nz = draw(st.integers(1, 4))
    n = nz + draw(st.integers(1, 5))
    pairs = draw(st.lists(st.tuples(st.integers(0, n - 1), st.integers(0, n - 1)).filter(lambda p: p[0] != p[1]),
                          min_size=1, max_size=15, unique=True))
    m = len(pairs)
    pos = st.floats(0.01, 1e5, allow_nan=False, allow_infinity=False)
    fft = draw(st.lists(st.floats(0.0, 1e3), min_size=m, max_size=m))
    cap = draw(st.lists(pos, min_size=m, max_size=m))
    ftn = draw(st.sampled_from([1, nz + 1]))
    return Network([p[0] for p in pairs], [p[1] for p in pairs], fft, cap,
                   draw(st.lists(st.floats(0.0, 1.0), min_size=m, max_size=m)),
                   draw(st.lists(st.floats(1.0, 6.0), min_size=m, max_size=m)),
                   n_nodes=n, zones=range(nz), first_thru_node=ftn)


@settings(max_examples=40, suppress_health_check=[HealthCheck.function_scoped_fixture])
@given(networks())
def test_network_round_trip(tmp_path, net):
    p = tmp_path / "rt.tntp"
    write_network(net, p)
    back = parse_network(p)
    same_network(net, back)
    # parsed networks carry the unused columns, so from here on text is stable
    write_network(back, tmp_path / "rt2.tntp")
    assert format_network(parse_network(tmp_path / "rt2.tntp")) == format_network(back)


@settings(max_examples=40, suppress_health_check=[HealthCheck.function_scoped_fixture])
@given(st.dictionaries(st.tuples(st.integers(0, 5), st.integers(0, 5)), st.floats(0.0, 1e6), max_size=20))
def test_trips_round_trip(tmp_path, entries):
    od = ODMatrix(entries)
    p = tmp_path / "t.tntp"
    atomic_write_text(p, format_trips(od, n_zones=6))
    assert dict(parse_trips(p).items()) == dict(od.items())


def test_sioux_falls_round_trip(tmp_path, sioux_falls):
    net, od = sioux_falls
    write_network(net, tmp_path / "n.tntp")
    write_trips(od, tmp_path / "t.tntp", net)
    net2 = parse_network(tmp_path / "n.tntp")
    same_network(net, net2)
    assert dict(parse_trips(tmp_path / "t.tntp", net2).items()) == dict(od.items())


def test_flows_round_trip(tmp_path, sioux_falls):
    net, _ = sioux_falls
    x = np.linspace(0.0, 1e4, net.n_links) / 3.0
    write_flows(net, x, net.link_costs(x), tmp_path / "f.tsv")
    header = (tmp_path / "f.tsv").read_text().splitlines()[0]
    assert header.split("\t") == ["tail", "head", "flow", "cost"]
    np.testing.assert_array_equal(read_flows(tmp_path / "f.tsv", net), x)


def test_partition_round_trip_and_contiguity(tmp_path):
    part = Partition.from_memberships([{0}, {0, 1}, {1}, {1}])
    write_partition(part, tmp_path / "p.txt")
    assert (tmp_path / "p.txt").read_text() == "1 0\n2 0\n2 1\n3 1\n4 1\n"
    assert read_partition(tmp_path / "p.txt") == part
    (tmp_path / "gap.txt").write_text("1 0\n2 2\n")
    with pytest.raises(ValidationError, match="contiguous"):
        read_partition(tmp_path / "gap.txt")


def test_convergence_log_round_trip(tmp_path):
    rows = [TraceRow(k, 0.1 * k + 1e-7, 10.0 ** -k / 3.0, 12345.678 + k / 7.0) for k in range(6)]
    write_convergence_log(rows, tmp_path / "c.csv")
    back = read_convergence_log(tmp_path / "c.csv")
    for r, b in zip(rows, back):
        assert b["iteration"] == r.iteration
        for key, val in (("elapsed_seconds", r.elapsed), ("relative_gap", r.relative_gap), ("tstt", r.tstt)):
            assert b[key] == pytest.approx(val, rel=1e-12)
    write_trace([TraceRow(1, 0.5, 0.1, 3.0, "heuristic")], tmp_path / "t.csv")
    assert read_trace(tmp_path / "t.csv")[0]["phase"] == "heuristic"


def test_atomic_write_leaves_nothing_on_failure(tmp_path):
    with pytest.raises(TypeError):
        atomic_write_text(tmp_path / "x.txt", 123)  # not text
    assert os.listdir(tmp_path) == []
    with pytest.raises(OSError):
        atomic_write_text(tmp_path / "missing" / "x.txt", "hello")
