"""MAPDD hybrid solver: full 2D FEM in zoom zones, transversally-constant
(k = 0) representation on skeleton segments, coupled in one linear system.

The reduced weak form on a skeleton segment is the tube-average of the 2D
form and keeps its overall factor eps,

    eps * int (kappa theta cbar' vbar' + <V_p>_theta cbar' vbar
               - 2 beta cbar vbar - theta g vbar) dx1,

so the hybrid matrix is exactly the Galerkin projection of the full weak form
onto the constrained subspace: every cut-line trace DOF is identified with
the adjacent 1D endpoint value and no extra interface equations appear (flux
matching is natural).
"""

import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from tubenet.errors import SetupMismatch
from tubenet.femcore.assembly import SparseSystem, assemble
from tubenet.femcore.domainmesh import mesh_zoom_zone
from tubenet.femcore.fields import Field
from tubenet.femcore.solve import solve_sparse
from tubenet import stokes2d
from tubenet.asym1d import mean_velocity
from tubenet.transport2d import cell_peclet, cross_section_average


# --------------------------------------------------------------------------
# composite velocity
# --------------------------------------------------------------------------

class CompositeVelocity:
    """Network Poiseuille profiles outside zoom zones, local Stokes inside.

    On every channel the axial profile is the per-edge parabola scaled by the
    edge flux (plus the divergence-free stenosis bump V_bar where present).
    Inside each bifurcation/port zoom zone a local Stokes problem is solved
    with Poiseuille traces on the cut lines, so the two descriptions agree on
    the cut lines exactly.
    """

    def __init__(self, decomposition, flow, viscosity, h=None):
        self.dec = decomposition
        self.flow = flow
        graph = decomposition.graph
        self.graph = graph
        self.domain = decomposition.domain
        self.h = h or min(e.theta for e in graph.edges) * graph.epsilon / 4.0
        self.zone_fields = {}
        self.zone_meshes = {}
        for zone in decomposition.zones:
            if zone.kind in ("node", "port"):
                self._solve_zone(zone, viscosity)

    def _solve_zone(self, zone, viscosity):
        graph = self.graph
        mesh = mesh_zoom_zone(self.dec, zone, self.h)
        port_data = {}
        for (eid, _s0, _s1), cid in zip(zone.intervals, zone.cut_ids):
            # the signed edge parabola carries exactly the edge flux through
            # the cut, so prescribing it keeps the zone problem compatible
            port_data[f"cut:{cid}"] = _edge_parabola(graph, self.flow, eid)
        if zone.kind == "port":
            nid = zone.node_id
            port_data[f"port:{nid}"] = _edge_parabola(
                graph, self.flow, graph.incident(nid)[0]
            )
        sol = stokes2d.solve_stokes(mesh, viscosity, port_data)
        self.zone_fields[zone.id] = sol.velocity
        self.zone_meshes[zone.id] = mesh

    def __call__(self, points):
        points = np.atleast_2d(np.asarray(points, dtype=float))
        out = np.zeros((len(points), 2))
        done = np.zeros(len(points), dtype=bool)
        for zid, fld in self.zone_fields.items():
            tri, _lam = fld.mesh.locator().locate(points)
            inside = (tri >= 0) & ~done
            if np.any(inside):
                out[inside] = fld.evaluate(points[inside])
                done[inside] = True
        if not np.all(done):
            rest = ~done
            out[rest] = analytic_network_velocity(self.graph, self.domain, self.flow)(
                points[rest]
            )
        return out


def _edge_parabola(graph, flow, eid):
    """Dirichlet trace: the edge's parabolic profile as a point callable."""
    e = graph.edge(eid)
    ch_dir = graph.direction(e)

    def profile(points):
        points = np.atleast_2d(points)
        rel = points - graph.node(e.a).pos
        t = rel @ graph.normal(e)
        speed = flow.profile_velocity(eid, t)
        return np.outer(speed, ch_dir)

    return profile


def analytic_network_velocity(graph, domain, flow):
    """Pure channel-profile velocity (with stenosis bumps), zero on junctions."""

    def evaluate(points):
        points = np.atleast_2d(np.asarray(points, dtype=float))
        out = np.zeros((len(points), 2))
        done = np.zeros(len(points), dtype=bool)
        eps = graph.epsilon
        for e in graph.edges:
            ch = domain.channels[e.id]
            s, t = ch.local(points)
            inside = (
                (s >= ch.s0 - 1e-12)
                & (s <= ch.s1 + 1e-12)
                & (np.abs(t) <= 0.5 * ch.width + 1e-12)
                & ~done
            )
            if not np.any(inside):
                continue
            speed = flow.profile_velocity(e.id, t[inside])
            vals = np.outer(speed, ch.d)
            for m in e.stenoses:
                if m.v_amp != 0.0:
                    center = ch.point(m.s, 0.0)
                    xi = (points[inside] - center) / eps
                    vals += m.velocity_bump(xi)
            out[inside] = vals
            done[inside] = True
        return out

    return evaluate


# --------------------------------------------------------------------------
# hybrid transport solve
# --------------------------------------------------------------------------

@dataclass
class HybridSolution:
    decomposition: object
    zones: dict                # zone id -> Field (P2 concentration)
    segments: dict             # index -> (SkeletonSegment, grid, values)
    dof_count: int
    dof_full_equivalent: int
    timings: dict
    velocity: object
    params: object
    max_cell_peclet: float

    def segment_values(self, seg_index):
        _seg, grid, vals = self.segments[seg_index]
        return grid, vals

    def channel_average(self, edge_id, samples):
        """Cross-averaged hybrid concentration along an edge (1D exact on the
        skeleton, transverse quadrature inside zoom zones)."""
        samples = np.atleast_1d(np.asarray(samples, dtype=float))
        out = np.full(len(samples), np.nan)
        for _idx, (seg, grid, vals) in self.segments.items():
            if seg.edge_id != edge_id:
                continue
            sel = (samples >= seg.s0 - 1e-12) & (samples <= seg.s1 + 1e-12)
            if np.any(sel):
                out[sel] = np.interp(samples[sel], grid, vals)
        ch = self.decomposition.domain.channels[edge_id]
        for zone in self.decomposition.zones:
            fld = self.zones.get(zone.id)
            if fld is None:
                continue
            for eid, s0, s1 in zone.intervals:
                if eid != edge_id:
                    continue
                sel = np.isnan(out) & (samples >= s0 - 1e-12) & (samples <= s1 + 1e-12)
                if np.any(sel):
                    out[sel] = cross_section_average(fld, ch, samples[sel])
        return out


def solve_mapdd_transport(decomposition, params, velocity, port_values, h,
                          reduction_order=0, n_1d_per_unit=256):
    """Assemble and solve the k = 0 partially-decomposed transport problem.

    ``port_values`` maps port node ids to Dirichlet concentrations.  Returns a
    HybridSolution with per-zone 2D fields and per-segment 1D profiles.
    """
    if reduction_order != 0:
        raise NotImplementedError("only the k = 0 reduction is implemented")
    graph = decomposition.graph
    eps = graph.epsilon
    t0 = time.perf_counter()

    zone_meshes = {}
    zone_systems = {}
    peclet = 0.0
    if isinstance(velocity, CompositeVelocity):
        zone_meshes = dict(velocity.zone_meshes)
    for zone in decomposition.zones:
        mesh = zone_meshes.get(zone.id) or mesh_zoom_zone(decomposition, zone, h)
        zone_meshes[zone.id] = mesh
        vel_here = velocity
        if isinstance(velocity, CompositeVelocity) and zone.id in velocity.zone_fields:
            vel_here = velocity.zone_fields[zone.id]  # same mesh: fast path
        system = assemble(
            mesh,
            "P2",
            diffusion=params.diffusivity,
            convection=vel_here,
            boundary_mass={"wall": -eps * params.beta} if params.beta != 0.0 else None,
            load=params.source_2d if params.sources else None,
        )
        peclet = max(peclet, cell_peclet(mesh, params, vel_here))
        zone_systems[zone.id] = system

    # 1D skeleton blocks
    seg_blocks = []
    seg_grids = []
    for seg in decomposition.skeleton:
        e = graph.edge(seg.edge_id)
        n = max(4, int(np.ceil((seg.s1 - seg.s0) * n_1d_per_unit)))
        grid = np.linspace(seg.s0, seg.s1, n + 1)
        hseg = grid[1] - grid[0]
        dcoef = params.kappa * e.theta
        vcoef = decomposition_flow_mean(decomposition, seg.edge_id)
        a = _segment_matrix(n, hseg, eps, dcoef, vcoef, params.beta, e.theta)
        b = np.zeros(n + 1)
        if params.sources and seg.edge_id in params.sources:
            g = np.asarray(params.sources[seg.edge_id](grid), dtype=float)
            b = eps * e.theta * _lumped_mass(n, hseg) * g
        seg_blocks.append((a, b))
        seg_grids.append(grid)

    # global numbering: zones first, then segments
    offsets = {}
    ndof = 0
    for zone in decomposition.zones:
        offsets[("zone", zone.id)] = ndof
        ndof += zone_meshes[zone.id].n_p2
    for i, seg in enumerate(decomposition.skeleton):
        offsets[("seg", i)] = ndof
        ndof += len(seg_grids[i])

    mats = [zone_systems[z.id].matrix for z in decomposition.zones]
    rhss = [zone_systems[z.id].rhs for z in decomposition.zones]
    mats += [blk[0] for blk in seg_blocks]
    rhss += [blk[1] for blk in seg_blocks]
    big = sp.block_diag(mats, format="csr")
    rhs = np.concatenate(rhss) if rhss else np.zeros(0)
    system = SparseSystem(matrix=big, rhs=rhs)

    # constraint table: cut-line trace DOFs -> 1D endpoint DOF
    cut_master = {}
    for i, seg in enumerate(decomposition.skeleton):
        base = offsets[("seg", i)]
        for end, dof in ((seg.end0, base), (seg.end1, base + len(seg_grids[i]) - 1)):
            if end is None:
                continue
            kind, ident = end
            if kind == "cut":
                cut_master[ident] = dof
            elif kind == "port":
                system.fix(dof, float(port_values[ident]))
            elif kind == "dead":
                cut_master.setdefault(("dead", ident), dof)
    # dead nodes join two segments: identify the second endpoint with the first
    seen_dead = {}
    for i, seg in enumerate(decomposition.skeleton):
        base = offsets[("seg", i)]
        for end, dof in ((seg.end0, base), (seg.end1, base + len(seg_grids[i]) - 1)):
            if end and end[0] == "dead":
                if end[1] in seen_dead:
                    system.identify(dof, seen_dead[end[1]])
                else:
                    seen_dead[end[1]] = dof

    for zone in decomposition.zones:
        mesh = zone_meshes[zone.id]
        base = offsets[("zone", zone.id)]
        for cid in zone.cut_ids:
            tag = f"cut:{cid}"
            master = cut_master.get(cid)
            if master is None:
                raise SetupMismatch(f"cut {cid} has no adjacent skeleton segment")
            for d in mesh.boundary_p2_dofs(lambda t, tag=tag: t == tag):
                system.identify(base + int(d), master)
        if zone.kind == "port":
            tag = f"port:{zone.node_id}"
            q = float(port_values[zone.node_id])
            for d in mesh.boundary_p2_dofs(lambda t, tag=tag: t == tag):
                system.fix(base + int(d), q)

    t_assembled = time.perf_counter()
    x = solve_sparse(system)
    t_solved = time.perf_counter()

    zones = {
        z.id: Field(zone_meshes[z.id], "P2",
                    x[offsets[("zone", z.id)]: offsets[("zone", z.id)] + zone_meshes[z.id].n_p2])
        for z in decomposition.zones
    }
    segments = {}
    for i, seg in enumerate(decomposition.skeleton):
        base = offsets[("seg", i)]
        segments[i] = (seg, seg_grids[i], x[base: base + len(seg_grids[i])])

    # reduced (actually solved) unknown count
    a_red, _b, _e = system.reduced()
    return HybridSolution(
        decomposition=decomposition,
        zones=zones,
        segments=segments,
        dof_count=a_red.shape[0],
        dof_full_equivalent=0,
        timings={"assemble": t_assembled - t0, "solve": t_solved - t_assembled},
        velocity=velocity,
        params=params,
        max_cell_peclet=peclet,
    )


def decomposition_flow_mean(decomposition, edge_id):
    """<V_p>_theta of the edge: flux / eps (needs the flow attached)."""
    flow = getattr(decomposition, "_flow", None)
    if flow is None:
        raise SetupMismatch("decomposition has no attached NetworkFlow; call attach_flow")
    return flow.flux[edge_id] / decomposition.graph.epsilon


def attach_flow(decomposition, flow):
    object.__setattr__(decomposition, "_flow", flow)
    return decomposition


def _segment_matrix(n, h, eps, dcoef, vcoef, beta, theta):
    """P1 Galerkin matrix of the reduced 1D form on a uniform segment grid."""
    main_k = np.full(n + 1, 2.0 / h)
    main_k[0] = main_k[-1] = 1.0 / h
    a = sp.diags(
        [main_k, np.full(n, -1.0 / h), np.full(n, -1.0 / h)], [0, -1, 1], format="lil"
    ) * (eps * dcoef)
    # convection: (c' , v): antisymmetric stencil
    conv = sp.diags([np.full(n, 0.5), np.full(n, -0.5)], [1, -1], format="lil")
    conv[0, 0] = -0.5
    conv[-1, -1] = 0.5
    a = a + eps * vcoef * conv
    # reaction: -2 beta (c, v) with consistent mass
    mass_main = np.full(n + 1, 2.0 * h / 3.0)
    mass_main[0] = mass_main[-1] = h / 3.0
    mass = sp.diags(
        [mass_main, np.full(n, h / 6.0), np.full(n, h / 6.0)], [0, -1, 1], format="lil"
    )
    a = a + eps * (-2.0 * beta) * mass
    return a.tocsr()


def _lumped_mass(n, h):
    m = np.full(n + 1, h)
    m[0] = m[-1] = h / 2.0
    return m


# --------------------------------------------------------------------------
# error report
# --------------------------------------------------------------------------

def mapdd_error_report(hybrid, reference, n_transverse=6):
    """L2 and broken-H1 differences vs a full 2D reference, plus savings.

    The 2D field is compared on zoom-zone quadrature points; on skeleton
    segments the hybrid is the transversally-constant extension of the 1D
    profile.  Norms are relative to the reference.  DOF and wall-time ratios
    quantify the reduction.
    """
    dec = hybrid.decomposition
    if reference.params.epsilon != hybrid.params.epsilon:
        raise SetupMismatch("reference and hybrid use different epsilon")
    ref = reference.concentration
    graph = dec.graph

    l2_diff = l2_ref = 0.0
    h1_diff = h1_ref = 0.0

    from tubenet.femcore.assembly import _quad_points_physical, _tri_geometry
    from tubenet.femcore import elements

    for zid, fld in hybrid.zones.items():
        mesh = fld.mesh
        pts, qw = _quad_points_physical(mesh)
        det, _ = _tri_geometry(mesh)
        w = (qw[None, :] * (0.5 * det)[:, None]).ravel()
        flat = pts.reshape(-1, 2)
        ch = fld.evaluate(flat)
        cr = ref.evaluate(flat)
        gh = fld.gradient(flat)
        gr = ref.gradient(flat)
        l2_diff += float(w @ (ch - cr) ** 2)
        l2_ref += float(w @ cr**2)
        h1_diff += float(w @ np.sum((gh - gr) ** 2, axis=1))
        h1_ref += float(w @ np.sum(gr**2, axis=1))

    nodes, wq = np.polynomial.legendre.leggauss(n_transverse)
    for _idx, (seg, grid, vals) in hybrid.segments.items():
        ch = dec.domain.channels[seg.edge_id]
        mids = 0.5 * (grid[:-1] + grid[1:])
        hseg = grid[1] - grid[0]
        dvals = np.diff(vals) / hseg
        cmid = 0.5 * (vals[:-1] + vals[1:])
        for t, wt in zip(0.5 * ch.width * nodes, 0.5 * ch.width * wq):
            pts = np.array([ch.point(s, t) for s in mids])
            cr = ref.evaluate(pts)
            gr = ref.gradient(pts)
            gr_ax = gr @ ch.d
            gr_tr = gr @ ch.n
            l2_diff += float(np.sum(wt * hseg * (cmid - cr) ** 2))
            l2_ref += float(np.sum(wt * hseg * cr**2))
            h1_diff += float(np.sum(wt * hseg * ((dvals - gr_ax) ** 2 + gr_tr**2)))
            h1_ref += float(np.sum(wt * hseg * (gr_ax**2 + gr_tr**2)))

    dof_full = reference.concentration.mesh.n_p2
    return {
        "l2": np.sqrt(l2_diff),
        "l2_relative": np.sqrt(l2_diff / max(l2_ref, 1e-300)),
        "h1_broken": np.sqrt(h1_diff),
        "h1_relative": np.sqrt(h1_diff / max(h1_ref, 1e-300)),
        "dof_full": dof_full,
        "dof_hybrid": hybrid.dof_count,
        "dof_ratio": hybrid.dof_count / dof_full,
        "t_hybrid": hybrid.timings["assemble"] + hybrid.timings["solve"],
    }
