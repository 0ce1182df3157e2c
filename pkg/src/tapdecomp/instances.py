"""Small constructed instances and a synthetic grid generator."""
from __future__ import annotations

import numpy as np

from .network import ARTIFICIAL, Network, ODMatrix


def affine_network(links, n_nodes=None, zones=(), **kw) -> Network:
    """Network of affine links ``(tail, head, intercept, slope)`` (0-based)."""
    t, h, c0, m = (list(c) for c in zip(*links))
    k = len(t)
    return Network(t, h, c0, np.ones(k), np.zeros(k), np.ones(k), n_nodes=n_nodes, zones=zones,
                   kind=np.full(k, ARTIFICIAL), intercept=c0, slope=m, **kw)


def two_link_affine(demand: float = 10.0) -> tuple:
    """Two parallel links, ``t1 = x`` and ``t2 = 2 + x``."""
    net = affine_network([(0, 1, 0.0, 1.0), (0, 1, 2.0, 1.0)], zones=(0, 1), name="two-link")
    return net, ODMatrix({(0, 1): demand})


def braess(demand: float = 6.0) -> tuple:
    """Four-node Braess network, OD 1 -> 2 through nodes 3 and 4."""
    net = affine_network([
        (0, 2, 0.0, 10.0),   # 1 -> 3
        (2, 1, 50.0, 1.0),   # 3 -> 2
        (0, 3, 50.0, 1.0),   # 1 -> 4
        (3, 1, 0.0, 10.0),   # 4 -> 2
        (2, 3, 10.0, 1.0),   # 3 -> 4
    ], n_nodes=4, zones=(0, 1), name="braess")
    return net, ODMatrix({(0, 1): demand})


def grid_links(rows: int, cols: int, offset: int = 0) -> list:
    """Bidirectional 4-neighbour grid links over nodes ``offset + r*cols + c``."""
    out = []
    for r in range(rows):
        for c in range(cols):
            v = offset + r * cols + c
            if c + 1 < cols:
                out += [(v, v + 1), (v + 1, v)]
            if r + 1 < rows:
                out += [(v, v + cols), (v + cols, v)]
    return out


def grid3x3() -> tuple:
    """3x3 BPR grid with four corner-to-corner OD pairs."""
    links = grid_links(3, 3)
    fft = [1.0 + ((3 * i + 7 * j) % 4) for i, j in links]
    cap = [100.0 + 25.0 * ((i + 2 * j) % 3) for i, j in links]
    net = Network([i for i, _ in links], [j for _, j in links], fft, cap, n_nodes=9,
                  zones=(0, 2, 6, 8), name="grid3x3")
    od = ODMatrix({(0, 8): 150.0, (8, 0): 120.0, (2, 6): 140.0, (6, 2): 100.0})
    return net, od


def synthetic_grid(rows: int, cols: int, n_zones: int, seed: int = 0, demand_per_pair: float = 30.0,
                   capacity: float = 400.0, name: str = "") -> tuple:
    """Grid of through nodes with separate centroids.

    Centroids take labels ``1..n_zones`` and sit below the first through
    node; each connects both ways to one grid node, spread evenly over the
    grid.  Link free-flow times and capacities vary by up to 50% around their
    base values; demand between every ordered pair of zones is drawn around
    ``demand_per_pair``.
    """
    rng = np.random.default_rng(seed)
    links = grid_links(rows, cols, offset=n_zones)
    fft = rng.uniform(0.5, 1.5, len(links))
    cap = capacity * rng.uniform(0.75, 1.25, len(links))
    picks = np.linspace(0, rows * cols - 1, n_zones + 2)[1:-1].round().astype(int)
    conn = []
    for z, g in enumerate(picks):
        conn += [(z, n_zones + int(g)), (n_zones + int(g), z)]
    tails = [i for i, _ in links] + [i for i, _ in conn]
    heads = [j for _, j in links] + [j for _, j in conn]
    fft = np.concatenate([fft, np.full(len(conn), 0.1)])
    cap = np.concatenate([cap, np.full(len(conn), 1e5)])
    net = Network(tails, heads, fft, cap, n_nodes=n_zones + rows * cols, zones=range(n_zones),
                  first_thru_node=n_zones + 1, name=name or f"grid{rows}x{cols}")
    od = {}
    for o in range(n_zones):
        for d in range(n_zones):
            if o != d:
                od[(o, d)] = float(demand_per_pair * rng.uniform(0.5, 1.5))
    return net, ODMatrix(od)


def two_cluster(side: int = 4, demand: float = 40.0, bridge_time: float = 2.0) -> tuple:
    """Two grids joined by two bridges (both directions), four centroids each.

    Bridges sit on the facing edges of the grids and the grids are cheap to
    cross, so no equilibrium path leaves a cluster and comes back; with the
    clusters as subnetworks the psi statistic is zero.

    Returns
    -------
    network, od, partition assignment (ndarray)
    """
    nz = 8
    n_grid = side * side
    a_off, b_off = nz, nz + n_grid
    links = grid_links(side, side, a_off) + grid_links(side, side, b_off)
    fft = [1.0] * len(links)
    cap = [200.0] * len(links)
    rows = (0, side - 1)
    for r in rows:
        a = a_off + r * side + side - 1
        b = b_off + r * side
        links += [(a, b), (b, a)]
        fft += [bridge_time, bridge_time]
        cap += [150.0, 150.0]
    corners = [0, side - 1, side * (side - 1), side * side - 1]
    conn = []
    for k, c in enumerate(corners):
        conn += [(k, a_off + c), (a_off + c, k)]
        conn += [(4 + k, b_off + c), (b_off + c, 4 + k)]
    links += conn
    fft += [0.1] * len(conn)
    cap += [1e5] * len(conn)
    net = Network([i for i, _ in links], [j for _, j in links], fft, cap, n_nodes=nz + 2 * n_grid,
                  zones=range(nz), first_thru_node=nz + 1, name="two-cluster")
    od = {}
    for o in range(nz):
        for d in range(nz):
            if o != d:
                same = (o < 4) == (d < 4)
                od[(o, d)] = demand if same else 0.5 * demand
    assign = np.zeros(net.n_nodes, dtype=np.int64)
    assign[4:8] = 1
    assign[b_off:] = 1
    return net, ODMatrix(od), assign
