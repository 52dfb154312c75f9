"""Meshing of tube domains and MAPDD zoom zones.

Channels get mapped structured grids (near-square cells, consistent diagonals);
junction polygons get radial layers around the node.  Channel end faces are
shared vertex arrays, so the global mesh is conforming by construction.
"""

import math

import numpy as np

from tubenet.errors import TooCoarse
from tubenet.femcore.mesh import MeshBuilder


def _transverse_count(width, h):
    return max(3, int(math.ceil(width / h - 1e-9)))


def _face_order_for_walk(graph, edge, nid, face):
    """Face vertex ids in the junction-walk order (away-frame minus to plus)."""
    return face if edge.a == nid else face[::-1]


def mesh_domain(domain, h, stations=None, check=True):
    """Triangulate a PolygonalDomain with target size ``h``.

    Requires h <= theta_min * eps / 3 (three element layers across every
    channel); raises TooCoarse otherwise.  ``stations`` optionally forces
    axial grid lines per edge id (used so MAPDD cut lines land on mesh lines).
    """
    graph = domain.graph
    theta_min = min(e.theta for e in graph.edges)
    if h > theta_min * graph.epsilon / 3.0 + 1e-12:
        raise TooCoarse(
            f"h={h:.4g} > theta_min*eps/3 = {theta_min * graph.epsilon / 3.0:.4g}"
        )
    stations = stations or {}
    builder = MeshBuilder(h)
    faces = {}  # (node_id, edge_id) -> face vertex ids ordered along the edge normal

    for e in graph.edges:
        ch = domain.channels[e.id]
        ny = _transverse_count(ch.width, h)
        face_in = face_out = None
        tag_in = tag_out = None
        na, nb = graph.node(e.a), graph.node(e.b)
        if na.kind == "dead" and (e.a, e.id) not in faces:
            partner = next(x for x in graph.incident(e.a) if x != e.id)
            if (e.a, partner) in faces:
                pf = faces[(e.a, partner)]
                same = graph.direction(graph.edge(partner)) @ graph.direction(e) > 0.0
                face_in = pf if same else pf[::-1]
        if nb.kind == "dead" and (e.b, e.id) not in faces:
            partner = next(x for x in graph.incident(e.b) if x != e.id)
            if (e.b, partner) in faces:
                pf = faces[(e.b, partner)]
                same = graph.direction(graph.edge(partner)) @ graph.direction(e) > 0.0
                face_out = pf if same else pf[::-1]
        if na.kind == "entrance_exit":
            tag_in = f"port:{e.a}"
        if nb.kind == "entrance_exit":
            tag_out = f"port:{e.b}"
        fin, fout = builder.add_structured_channel(
            origin=ch.origin,
            direction=ch.d,
            width=ch.width,
            s0=ch.s0,
            s1=ch.s1,
            ny=ny,
            stations=stations.get(e.id, ()),
            face_in=face_in,
            face_out=face_out,
            tag_in=tag_in,
            tag_out=tag_out,
        )
        faces[(e.a, e.id)] = fin
        faces[(e.b, e.id)] = fout

    for nid, junc in domain.junctions.items():
        _mesh_junction(builder, graph, junc, faces, nid)

    return builder.build(check=check)


def _mesh_junction(builder, graph, junc, faces, nid):
    node = graph.node(nid)
    eids = sorted(
        graph.incident(nid),
        key=lambda eid: math.atan2(*graph.away_direction(graph.edge(eid), nid)[::-1]),
    )
    walk_faces = [
        _face_order_for_walk(graph, graph.edge(eid), nid, list(faces[(nid, eid)]))
        for eid in eids
    ]
    ring = []
    for i, wf in enumerate(walk_faces):
        nxt = walk_faces[(i + 1) % len(walk_faces)]
        ring.extend(wf)
        hop = builder.add_polyline_wall(wf[-1], nxt[0], tag="wall")
        ring.extend(hop[1:-1])
    builder.add_radial_patch(node.pos, ring)


def mesh_zoom_zone(decomposition, zone, h, check=True):
    """Mesh one MAPDD zoom zone; cut faces are tagged ``cut:<id>``."""
    graph = decomposition.graph
    domain = decomposition.domain
    builder = MeshBuilder(h)

    if zone.kind == "stenosis":
        (eid, s0, s1), = zone.intervals
        ch = domain.channels[eid]
        ny = _transverse_count(ch.width, h)
        builder.add_structured_channel(
            origin=ch.origin,
            direction=ch.d,
            width=ch.width,
            s0=s0,
            s1=s1,
            ny=ny,
            tag_in=f"cut:{zone.cut_ids[0]}",
            tag_out=f"cut:{zone.cut_ids[1]}",
        )
        return builder.build(check=check)

    nid = zone.node_id
    node = graph.node(nid)
    faces = {}
    for (eid, s0, s1), cid in zip(zone.intervals, zone.cut_ids):
        e = graph.edge(eid)
        ch = domain.channels[eid]
        ny = _transverse_count(ch.width, h)
        at_start = e.a == nid
        port_tag = f"port:{nid}" if node.kind == "entrance_exit" else None
        fin, fout = builder.add_structured_channel(
            origin=ch.origin,
            direction=ch.d,
            width=ch.width,
            s0=s0,
            s1=s1,
            ny=ny,
            tag_in=(port_tag or None) if at_start else f"cut:{cid}",
            tag_out=f"cut:{cid}" if at_start else (port_tag or None),
        )
        faces[(nid, eid)] = fin if at_start else fout
        # port zones keep the channel face at the node; nothing else to do
        if node.kind == "entrance_exit":
            return builder.build(check=check)

    junc = domain.junctions[nid]
    _mesh_junction(builder, graph, junc, faces, nid)
    return builder.build(check=check)


def cut_geometry(decomposition, cut_id):
    """(midpoint, tangent, width, edge direction) of a cut line."""
    cut = decomposition.cuts[cut_id]
    ch = decomposition.domain.channels[cut.edge_id]
    mid = ch.point(cut.s, 0.0)
    return mid, ch.n.copy(), ch.width, ch.d.copy()
