"""Tube-structure geometry: metric graph, 2D polygonal domain, MAPDD partition.

A tube structure is a union of thin rectangles of width theta_i * epsilon along
the graph segments, joined by small junction polygons at the interior nodes.
All constructed objects are immutable and built deterministically.
"""

import json
import math
from dataclasses import dataclass, field

import numpy as np

from tubenet.errors import (
    DisconnectedGraph,
    GraphSpecError,
    InvalidDeadNode,
    NonSolitaryPort,
    OverlapError,
    StenosisTooCloseToNode,
    ThicknessOutOfRange,
    ZoomOverlap,
)

TRIM_SAFETY = 1.05

NODE_KINDS = ("bifurcation", "entrance_exit", "dead")


def _bump(rho):
    """C-infinity bump, 1 at rho=0, 0 for |rho| >= 1."""
    rho = np.asarray(rho, dtype=float)
    out = np.zeros_like(rho)
    inside = np.abs(rho) < 1.0
    r2 = rho[inside] ** 2
    out[inside] = np.exp(1.0 - 1.0 / (1.0 - r2))
    return out


def _bump_dr(rho):
    """Derivative of the bump with respect to rho."""
    rho = np.asarray(rho, dtype=float)
    out = np.zeros_like(rho)
    inside = np.abs(rho) < 1.0
    r = rho[inside]
    out[inside] = np.exp(1.0 - 1.0 / (1.0 - r**2)) * (-2.0 * r / (1.0 - r**2) ** 2)
    return out


@dataclass(frozen=True)
class StenosisMarker:
    """Coefficient perturbation centered at arclength ``s`` on an edge.

    Perturbations are radial bumps of the scaled variable xi = (x - x_s)/eps,
    supported in |xi| < radius <= 2.  The velocity perturbation is the curl of
    a bump stream function, hence exactly divergence-free.
    """

    s: float
    m_amp: float = 0.0
    k_amp: float = 0.0
    v_amp: float = 0.0
    radius: float = 1.4

    def viscosity_bump(self, xi):
        xi = np.atleast_2d(np.asarray(xi, dtype=float))
        return self.m_amp * _bump(np.linalg.norm(xi, axis=1) / self.radius)

    def diffusivity_bump(self, xi):
        xi = np.atleast_2d(np.asarray(xi, dtype=float))
        return self.k_amp * _bump(np.linalg.norm(xi, axis=1) / self.radius)

    def velocity_bump(self, xi):
        """Divergence-free perturbation: curl of v_amp * bump(|xi|/radius)."""
        xi = np.atleast_2d(np.asarray(xi, dtype=float))
        r = np.linalg.norm(xi, axis=1)
        rho = r / self.radius
        dpsi_dr = self.v_amp * _bump_dr(rho) / self.radius
        with np.errstate(invalid="ignore", divide="ignore"):
            rad = np.where(r > 0.0, dpsi_dr / r, 0.0)
        # curl psi = (d psi/d xi2, -d psi/d xi1)
        return np.column_stack([rad * xi[:, 1], -rad * xi[:, 0]])


@dataclass(frozen=True)
class Node:
    id: str
    x: float
    y: float
    kind: str
    q: float = None
    inflow: float = 0.0

    @property
    def pos(self):
        return np.array([self.x, self.y])


@dataclass(frozen=True)
class Edge:
    """Graph segment; endpoint order fixes the local axis from ``a`` to ``b``."""

    id: str
    a: str
    b: str
    theta: float
    stenoses: tuple = ()


@dataclass(frozen=True)
class TubeGraph:
    nodes: tuple
    edges: tuple
    epsilon: float

    _node_by_id: dict = field(init=False, repr=False)
    _incident: dict = field(init=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "_node_by_id", {n.id: n for n in self.nodes})
        inc = {n.id: [] for n in self.nodes}
        for e in self.edges:
            inc[e.a].append(e.id)
            inc[e.b].append(e.id)
        object.__setattr__(self, "_incident", inc)

    def node(self, nid):
        return self._node_by_id[nid]

    def edge(self, eid):
        for e in self.edges:
            if e.id == eid:
                return e
        raise KeyError(eid)

    def incident(self, nid):
        return tuple(self._incident[nid])

    def degree(self, nid):
        return len(self._incident[nid])

    def ports(self):
        return tuple(n for n in self.nodes if n.kind == "entrance_exit")

    def length(self, e):
        return float(np.linalg.norm(self.node(e.b).pos - self.node(e.a).pos))

    def direction(self, e):
        d = self.node(e.b).pos - self.node(e.a).pos
        return d / np.linalg.norm(d)

    def normal(self, e):
        d = self.direction(e)
        return np.array([-d[1], d[0]])

    def width(self, e):
        return e.theta * self.epsilon

    def away_direction(self, e, nid):
        """Unit vector along the edge pointing away from node ``nid``."""
        if e.a == nid:
            return self.direction(e)
        if e.b == nid:
            return -self.direction(e)
        raise ValueError(f"node {nid} is not an endpoint of edge {e.id}")


def _reject_unknown(obj, allowed, where):
    extra = set(obj) - set(allowed)
    if extra:
        raise GraphSpecError(f"unknown keys {sorted(extra)} in {where}")


def build_graph(spec):
    """Validate a structured description (dict or JSON path) into a TubeGraph.

    Raises DisconnectedGraph, NonSolitaryPort, StenosisTooCloseToNode,
    ThicknessOutOfRange, InvalidDeadNode or GraphSpecError, naming the
    offending entity.
    """
    if isinstance(spec, (str, bytes)):
        with open(spec) as f:
            spec = json.load(f)
    _reject_unknown(spec, ("epsilon", "nodes", "edges"), "graph spec")
    eps = float(spec["epsilon"])
    if not (0.0 < eps < 1.0):
        raise GraphSpecError(f"epsilon must be in (0, 1), got {eps}")

    nodes = []
    for nd in spec["nodes"]:
        _reject_unknown(nd, ("id", "x", "y", "kind", "q", "inflow"), f"node {nd.get('id')}")
        kind = nd["kind"]
        if kind not in NODE_KINDS:
            raise GraphSpecError(f"node {nd['id']}: unknown kind {kind!r}")
        q = nd.get("q")
        if kind == "entrance_exit":
            if q is None or not math.isfinite(float(q)):
                raise GraphSpecError(f"port node {nd['id']} needs a finite concentration q")
            q = float(q)
        nodes.append(
            Node(
                id=str(nd["id"]),
                x=float(nd["x"]),
                y=float(nd["y"]),
                kind=kind,
                q=q,
                inflow=float(nd.get("inflow", 0.0)),
            )
        )
    if len({n.id for n in nodes}) != len(nodes):
        raise GraphSpecError("duplicate node ids")

    edges = []
    for ed in spec["edges"]:
        _reject_unknown(ed, ("id", "from", "to", "theta", "stenoses"), f"edge {ed.get('id')}")
        stens = []
        for st in ed.get("stenoses", ()):
            _reject_unknown(
                st, ("s", "m_amp", "k_amp", "v_amp", "radius"), f"stenosis on edge {ed.get('id')}"
            )
            radius = float(st.get("radius", 1.4))
            if not (0.0 < radius <= 2.0):
                raise GraphSpecError(
                    f"edge {ed['id']}: stenosis radius must be in (0, 2], got {radius}"
                )
            stens.append(
                StenosisMarker(
                    s=float(st["s"]),
                    m_amp=float(st.get("m_amp", 0.0)),
                    k_amp=float(st.get("k_amp", 0.0)),
                    v_amp=float(st.get("v_amp", 0.0)),
                    radius=radius,
                )
            )
        stens.sort(key=lambda m: m.s)
        edges.append(
            Edge(
                id=str(ed["id"]),
                a=str(ed["from"]),
                b=str(ed["to"]),
                theta=float(ed["theta"]),
                stenoses=tuple(stens),
            )
        )
    if len({e.id for e in edges}) != len(edges):
        raise GraphSpecError("duplicate edge ids")

    graph = TubeGraph(nodes=tuple(nodes), edges=tuple(edges), epsilon=eps)
    _validate(graph)
    return graph


def _validate(g):
    eps = g.epsilon
    ids = {n.id for n in g.nodes}
    for e in g.edges:
        if e.a not in ids or e.b not in ids:
            raise GraphSpecError(f"edge {e.id} references unknown node")
        if not (0.0 < e.theta <= 1.0):
            raise ThicknessOutOfRange(f"edge {e.id}: theta={e.theta} not in (0, 1]")
        length = g.length(e)
        if length < 10.0 * eps:
            raise GraphSpecError(
                f"edge {e.id}: length {length:.4g} violates |e| >= 10*eps = {10 * eps:.4g}"
            )
        for m in e.stenoses:
            if m.s < 2.0 * eps or m.s > length - 2.0 * eps:
                raise StenosisTooCloseToNode(
                    f"edge {e.id}: stenosis at s={m.s:.4g} within 2*eps of an endpoint"
                )

    # connectivity
    if g.nodes:
        seen = {g.nodes[0].id}
        stack = [g.nodes[0].id]
        while stack:
            nid = stack.pop()
            for eid in g.incident(nid):
                e = g.edge(eid)
                for other in (e.a, e.b):
                    if other not in seen:
                        seen.add(other)
                        stack.append(other)
        if seen != ids:
            raise DisconnectedGraph(f"nodes {sorted(ids - seen)} unreachable")

    for n in g.nodes:
        deg = g.degree(n.id)
        if n.kind == "entrance_exit" and deg != 1:
            raise NonSolitaryPort(f"port node {n.id} has degree {deg}, must be 1")
        if n.kind != "entrance_exit" and deg == 1:
            raise GraphSpecError(
                f"degree-1 node {n.id} must be an entrance_exit port, not {n.kind}"
            )
        if n.kind != "entrance_exit" and n.q is not None:
            raise GraphSpecError(f"node {n.id}: concentration q only allowed on ports")
        if n.kind == "dead":
            if deg != 2:
                raise InvalidDeadNode(f"dead node {n.id} has degree {deg}, must be 2")
            e1, e2 = (g.edge(eid) for eid in g.incident(n.id))
            d1 = g.away_direction(e1, n.id)
            d2 = g.away_direction(e2, n.id)
            if abs(d1 @ d2 + 1.0) > 1e-12 or abs(e1.theta - e2.theta) > 1e-12:
                raise InvalidDeadNode(
                    f"dead node {n.id}: edges must be collinear with equal thickness"
                )
        if deg == 0:
            raise DisconnectedGraph(f"isolated node {n.id}")

    # two segments share at most a common endpoint
    for i, e1 in enumerate(g.edges):
        for e2 in g.edges[i + 1:]:
            if {e1.a, e1.b} & {e2.a, e2.b}:
                continue
            if _segments_intersect(
                g.node(e1.a).pos, g.node(e1.b).pos, g.node(e2.a).pos, g.node(e2.b).pos
            ):
                raise GraphSpecError(f"edges {e1.id} and {e2.id} intersect away from nodes")


def _segments_intersect(p1, p2, p3, p4):
    def cross(o, a, b):
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

    d1 = cross(p3, p4, p1)
    d2 = cross(p3, p4, p2)
    d3 = cross(p1, p2, p3)
    d4 = cross(p1, p2, p4)
    return ((d1 > 0) != (d2 > 0)) and ((d3 > 0) != (d4 > 0))


# --------------------------------------------------------------------------
# 2D domain instantiation
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class ChannelGeom:
    """Trimmed rectangle of an edge: local frame plus retained arclength range."""

    edge_id: str
    origin: np.ndarray   # position of node `a`
    d: np.ndarray        # unit axis a -> b
    n: np.ndarray        # left normal
    width: float
    s0: float            # trim at the a end
    s1: float            # length - trim at the b end
    length: float

    def point(self, s, t):
        return self.origin + s * self.d + t * self.n

    def local(self, points):
        rel = np.atleast_2d(points) - self.origin
        return rel @ self.d, rel @ self.n

    @property
    def area(self):
        return self.width * (self.s1 - self.s0)


@dataclass(frozen=True)
class JunctionGeom:
    """Polygon joining the trimmed rectangle end-faces at an interior node."""

    node_id: str
    polygon: np.ndarray          # (m, 2) CCW
    faces: dict                  # edge_id -> (p_minus, p_plus) in walk order
    trims: dict                  # edge_id -> axial trim from the node

    @property
    def area(self):
        x, y = self.polygon[:, 0], self.polygon[:, 1]
        return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


@dataclass(frozen=True)
class PolygonalDomain:
    """Union of channel rectangles and junction polygons with tagged boundary."""

    graph: TubeGraph
    channels: dict               # edge_id -> ChannelGeom
    junctions: dict              # node_id -> JunctionGeom
    boundary_loops: tuple        # tuple of (points (m,2), tags (m,)) closed walks

    @property
    def area(self):
        """Shoelace area of the boundary walk (holes counted negative)."""
        total = 0.0
        for pts, _tags in self.boundary_loops:
            x, y = pts[:, 0], pts[:, 1]
            total += 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))
        return total

    @property
    def parts_area(self):
        return sum(c.area for c in self.channels.values()) + sum(
            j.area for j in self.junctions.values()
        )

    def channel_of(self, points):
        """edge id containing each point's trimmed rectangle, or None."""
        points = np.atleast_2d(points)
        out = [None] * len(points)
        for eid, ch in self.channels.items():
            s, t = ch.local(points)
            inside = (
                (s >= ch.s0 - 1e-12)
                & (s <= ch.s1 + 1e-12)
                & (np.abs(t) <= 0.5 * ch.width + 1e-12)
            )
            for i in np.where(inside)[0]:
                if out[i] is None:
                    out[i] = eid
        return out


def _node_trims(g, nid):
    """Axial trim per incident edge so that trimmed rectangles never overlap."""
    eids = g.incident(nid)
    node = g.node(nid)
    if len(eids) == 1:
        return {eids[0]: 0.0}
    dirs = {}
    widths = {}
    for eid in eids:
        e = g.edge(eid)
        dirs[eid] = g.away_direction(e, nid)
        widths[eid] = 0.5 * g.width(e)
    # dead-node seamless continuation
    if node.kind == "dead":
        return {eid: 0.0 for eid in eids}
    trims = {eid: 0.0 for eid in eids}
    for i, ei in enumerate(eids):
        for ej in eids[i + 1:]:
            di, dj = dirs[ei], dirs[ej]
            ni = np.array([-di[1], di[0]])
            nj = np.array([-dj[1], dj[0]])
            det = ni[0] * nj[1] - ni[1] * nj[0]
            if abs(det) < 1e-12:
                if di @ dj > 0.0:
                    raise OverlapError(
                        f"edges {ei} and {ej} leave node {nid} in the same direction"
                    )
                t = 0.75 * max(widths[ei], widths[ej])
                trims[ei] = max(trims[ei], t)
                trims[ej] = max(trims[ej], t)
                continue
            mi = mj = 0.0
            for si in (-1.0, 1.0):
                for sj in (-1.0, 1.0):
                    rhs = np.array([si * widths[ei], sj * widths[ej]])
                    x = np.linalg.solve(np.vstack([ni, nj]), rhs)
                    mi = max(mi, x @ di)
                    mj = max(mj, x @ dj)
            trims[ei] = max(trims[ei], TRIM_SAFETY * mi)
            trims[ej] = max(trims[ej], TRIM_SAFETY * mj)
    return trims


def instantiate_domain(graph):
    """Realize the 2D tube domain: trimmed channel rectangles + junction polygons.

    Deterministic: identical graph spec gives identical coordinates.  Raises
    OverlapError if the geometry is too tight for the given epsilon.
    """
    trims = {nid: _node_trims(graph, nid) for nid in (n.id for n in graph.nodes)}

    channels = {}
    for e in graph.edges:
        length = graph.length(e)
        s0 = trims[e.a][e.id]
        s1 = length - trims[e.b][e.id]
        if s1 - s0 < 2.0 * graph.epsilon:
            raise OverlapError(
                f"edge {e.id}: trims {s0:.4g} and {length - s1:.4g} leave no channel"
            )
        channels[e.id] = ChannelGeom(
            edge_id=e.id,
            origin=graph.node(e.a).pos,
            d=graph.direction(e),
            n=graph.normal(e),
            width=graph.width(e),
            s0=s0,
            s1=s1,
            length=length,
        )

    junctions = {}
    for node in graph.nodes:
        nid = node.id
        if graph.degree(nid) <= 1:
            continue
        if node.kind == "dead":
            continue  # seamless continuation, no polygon
        eids = sorted(
            graph.incident(nid),
            key=lambda eid: math.atan2(*graph.away_direction(graph.edge(eid), nid)[::-1]),
        )
        poly = []
        faces = {}
        for eid in eids:
            e = graph.edge(eid)
            d_away = graph.away_direction(e, nid)
            n_away = np.array([-d_away[1], d_away[0]])
            t = trims[nid][eid]
            w = 0.5 * graph.width(e)
            p_minus = node.pos + t * d_away - w * n_away
            p_plus = node.pos + t * d_away + w * n_away
            faces[eid] = (p_minus, p_plus)
            poly.append(p_minus)
            poly.append(p_plus)
        junctions[nid] = JunctionGeom(
            node_id=nid,
            polygon=np.array(poly),
            faces=faces,
            trims=dict(trims[nid]),
        )
        if junctions[nid].area <= 0.0:
            raise OverlapError(f"junction polygon at node {nid} is degenerate")

    loops = _boundary_walk(graph, channels, trims)
    domain = PolygonalDomain(
        graph=graph, channels=channels, junctions=junctions, boundary_loops=loops
    )
    if abs(domain.area - domain.parts_area) > 1e-9 * max(domain.parts_area, 1e-300):
        raise OverlapError(
            f"boundary area {domain.area:.12g} != sum of parts {domain.parts_area:.12g}; "
            "channel rectangles overlap"
        )
    return domain


def _boundary_walk(graph, channels, trims):
    """Closed boundary loops (interior on the left) with per-segment tags."""
    # directed edge (eid, forward?) -> traverse the right wall
    visited = set()
    loops = []

    def next_edge_ccw(nid, eid):
        node_edges = graph.incident(nid)
        angles = {}
        for other in node_edges:
            d = graph.away_direction(graph.edge(other), nid)
            angles[other] = math.atan2(d[1], d[0])
        ordered = sorted(node_edges, key=lambda x: angles[x])
        i = ordered.index(eid)
        return ordered[(i + 1) % len(ordered)]

    def wall_end(eid, nid):
        """Arrival corner on the right wall of the directed edge ending at nid."""
        ch = channels[eid]
        e = graph.edge(eid)
        d_away = graph.away_direction(e, nid)
        n_away = np.array([-d_away[1], d_away[0]])
        return graph.node(nid).pos + trims[nid][eid] * d_away + 0.5 * ch.width * n_away

    def wall_start(eid, nid):
        ch = channels[eid]
        e = graph.edge(eid)
        d_away = graph.away_direction(e, nid)
        n_away = np.array([-d_away[1], d_away[0]])
        return graph.node(nid).pos + trims[nid][eid] * d_away - 0.5 * ch.width * n_away

    all_directed = [(e.id, True) for e in graph.edges] + [(e.id, False) for e in graph.edges]
    for start in all_directed:
        if start in visited:
            continue
        pts = []
        tags = []
        cur = start
        while cur not in visited:
            visited.add(cur)
            eid, forward = cur
            e = graph.edge(eid)
            u, v = (e.a, e.b) if forward else (e.b, e.a)
            pts.append(wall_start(eid, u))
            tags.append("wall")
            arrive = wall_end(eid, v)
            pts.append(arrive)
            if graph.degree(v) == 1:
                tags.append(f"port:{v}" if graph.node(v).kind == "entrance_exit" else "wall")
                cur = (eid, not forward)
            else:
                nxt = next_edge_ccw(v, eid)
                tags.append("wall")
                ne = graph.edge(nxt)
                cur = (nxt, ne.a == v)
        loops.append((np.array(pts), tuple(tags)))
    return tuple(loops)


# --------------------------------------------------------------------------
# MAPDD partition
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class CutLine:
    id: int
    edge_id: str
    s: float


@dataclass(frozen=True)
class ZoomZone:
    id: int
    kind: str                    # "node" | "stenosis" | "port"
    node_id: str = None
    edge_id: str = None
    center: float = None         # stenosis arclength
    intervals: tuple = ()        # ((edge_id, s0, s1), ...)
    cut_ids: tuple = ()


@dataclass(frozen=True)
class SkeletonSegment:
    """1D piece of an edge; ends are ('cut', id), ('port', nid) or ('dead', nid)."""

    edge_id: str
    s0: float
    s1: float
    end0: tuple = None
    end1: tuple = None


@dataclass(frozen=True)
class MapddDecomposition:
    graph: TubeGraph
    domain: PolygonalDomain
    K: float
    delta: float
    zones: tuple
    skeleton: tuple
    cuts: tuple
    include_ports: bool = False

    def cut(self, cid):
        return self.cuts[cid]


def decompose_mapdd(graph, K, include_ports=False, domain=None):
    """Partition the tube domain into 2D zoom zones and 1D skeleton segments.

    Cut lines sit at distance delta = K * eps * |ln eps| from bifurcation
    nodes and stenosis centers (and ports when ``include_ports``).  Raises
    ZoomOverlap when delta does not fit the geometry, naming the colliding
    features.
    """
    eps = graph.epsilon
    if K <= 0.0:
        raise ZoomOverlap(f"K={K} gives delta=0; zoom zones cannot cover any feature")
    delta = K * eps * abs(math.log(eps))
    domain = domain or instantiate_domain(graph)

    cuts = []
    zone_records = []

    def new_cut(edge_id, s):
        cuts.append(CutLine(id=len(cuts), edge_id=edge_id, s=s))
        return cuts[-1].id

    # per-edge list of (s0, s1, owner) zoom intervals
    edge_intervals = {e.id: [] for e in graph.edges}

    for node in graph.nodes:
        deg = graph.degree(node.id)
        zoomed = (node.kind == "bifurcation" and deg >= 2) or (
            include_ports and node.kind == "entrance_exit"
        )
        if not zoomed:
            continue
        intervals = []
        cut_ids = []
        for eid in graph.incident(node.id):
            e = graph.edge(eid)
            ch = domain.channels[eid]
            at_start = e.a == node.id
            trim = ch.s0 if at_start else ch.length - ch.s1
            if delta <= trim + 0.5 * eps:
                raise ZoomOverlap(
                    f"node {node.id}: delta={delta:.4g} does not clear the junction "
                    f"trim {trim:.4g} on edge {eid}"
                )
            if at_start:
                s0, s1 = ch.s0, delta
                cid = new_cut(eid, s1)
            else:
                s0, s1 = ch.length - delta, ch.s1
                cid = new_cut(eid, s0)
            intervals.append((eid, s0, s1))
            cut_ids.append(cid)
            edge_intervals[eid].append((s0, s1, f"node {node.id}"))
        zone_records.append(
            ZoomZone(
                id=len(zone_records),
                kind="port" if node.kind == "entrance_exit" else "node",
                node_id=node.id,
                intervals=tuple(intervals),
                cut_ids=tuple(cut_ids),
            )
        )

    for e in graph.edges:
        ch = domain.channels[e.id]
        for m in e.stenoses:
            if delta <= m.radius * eps:
                raise ZoomOverlap(
                    f"stenosis at s={m.s:.4g} on edge {e.id}: delta={delta:.4g} "
                    f"does not cover the perturbation support {m.radius * eps:.4g}"
                )
            s0, s1 = m.s - delta, m.s + delta
            if s0 < ch.s0 - 1e-12 or s1 > ch.s1 + 1e-12:
                raise ZoomOverlap(
                    f"stenosis at s={m.s:.4g} on edge {e.id}: zoom "
                    f"[{s0:.4g}, {s1:.4g}] exceeds the channel [{ch.s0:.4g}, {ch.s1:.4g}]"
                )
            c0 = new_cut(e.id, s0)
            c1 = new_cut(e.id, s1)
            zone_records.append(
                ZoomZone(
                    id=len(zone_records),
                    kind="stenosis",
                    edge_id=e.id,
                    center=m.s,
                    intervals=((e.id, s0, s1),),
                    cut_ids=(c0, c1),
                )
            )
            edge_intervals[e.id].append((s0, s1, f"stenosis s={m.s:.4g}"))

    # overlap audit with the 2*eps safety margin between zones
    skeleton = []
    tol = 1e-12
    for e in graph.edges:
        ch = domain.channels[e.id]
        ivs = sorted(edge_intervals[e.id])
        for (a0, a1, fa), (b0, b1, fb) in zip(ivs[:-1], ivs[1:]):
            if b0 - a1 < 2.0 * eps:
                raise ZoomOverlap(
                    f"edge {e.id}: zoom zones for {fa} and {fb} collide "
                    f"(gap {b0 - a1:.4g} < 2*eps)"
                )
        # skeleton-piece boundaries alternate with zoom intervals
        bounds = []
        zoom_at_a = any(abs(s0 - ch.s0) < tol for s0, _s1, _n in ivs)
        zoom_at_b = any(abs(s1 - ch.s1) < tol for _s0, s1, _n in ivs)
        na, nb = graph.node(e.a), graph.node(e.b)
        if not zoom_at_a:
            if na.kind not in ("entrance_exit", "dead"):
                raise ZoomOverlap(f"edge {e.id}: interior node {e.a} has no zoom zone")
            bounds.append((ch.s0, ("port" if na.kind == "entrance_exit" else "dead", e.a)))
        for s0, s1, _name in ivs:
            if s0 > ch.s0 + tol:
                bounds.append((s0, ("cut", _cut_at(cuts, e.id, s0))))
            if s1 < ch.s1 - tol:
                bounds.append((s1, ("cut", _cut_at(cuts, e.id, s1))))
        if not zoom_at_b:
            if nb.kind not in ("entrance_exit", "dead"):
                raise ZoomOverlap(f"edge {e.id}: interior node {e.b} has no zoom zone")
            bounds.append((ch.s1, ("port" if nb.kind == "entrance_exit" else "dead", e.b)))
        bounds.sort(key=lambda x: x[0])
        for k in range(0, len(bounds), 2):
            (s0, d0), (s1, d1) = bounds[k], bounds[k + 1]
            if s1 - s0 < 2.0 * eps:
                raise ZoomOverlap(
                    f"edge {e.id}: skeleton piece [{s0:.4g}, {s1:.4g}] shorter than 2*eps"
                )
            skeleton.append(SkeletonSegment(edge_id=e.id, s0=s0, s1=s1, end0=d0, end1=d1))

    return MapddDecomposition(
        graph=graph,
        domain=domain,
        K=float(K),
        delta=delta,
        zones=tuple(zone_records),
        skeleton=tuple(skeleton),
        cuts=tuple(cuts),
        include_ports=include_ports,
    )


def _cut_at(cuts, edge_id, s):
    for c in cuts:
        if c.edge_id == edge_id and abs(c.s - s) < 1e-12:
            return c.id
    return None
