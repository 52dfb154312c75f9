"""2D steady convection-diffusion with Robin sorption walls and Dirichlet ports.

This is the reference solver all reduced models are compared against: plain
Galerkin P2, no stabilization.  The weak form is

    (K grad c, grad v) + (V . grad c, v) - eps*beta (c, v)_wall = (g, v),
    c = q_t on each port,

which is the sorption wall condition K dc/dn = eps*beta*c integrated by parts
with the outward normal.  Meshes whose cell Peclet number exceeds 2 trigger a
PecletWarning (callers may refuse to proceed).
"""

import warnings
from dataclasses import dataclass

import numpy as np

from tubenet.errors import OutsideChannel, PecletWarning
from tubenet.femcore import elements
from tubenet.femcore.assembly import (
    SparseSystem,
    _quad_points_physical,
    _tri_geometry,
    assemble,
    boundary_mass_matrix,
    eval_velocity_at_quadrature,
    load_vector,
)
from tubenet.femcore.fields import Field, write_csv
from tubenet.femcore.solve import solve_sparse

PECLET_LIMIT = 2.0


@dataclass(frozen=True)
class TransportParams:
    """Physical data of the transport problem.

    ``perturbations`` holds (center, bump) pairs evaluated at (x-center)/eps;
    ``sources`` maps edge ids to axial profiles g(s) (zero near segment ends),
    evaluated in 2D through the domain's channel frames.
    """

    kappa: float
    beta: float = 0.0
    epsilon: float = 1.0
    perturbations: tuple = ()
    sources: dict = None
    domain: object = None

    def __post_init__(self):
        floor = self.kappa
        for _c, bump in self.perturbations:
            floor = min(floor, self.kappa + float(np.min(bump(np.zeros((1, 2))))))
        if floor <= 0.0:
            raise ValueError(f"diffusivity not uniformly positive (min {floor:.4g})")
        if self.sources and self.domain is None:
            raise ValueError("axial sources need the domain for channel frames")

    def diffusivity(self, points):
        points = np.atleast_2d(np.asarray(points, dtype=float))
        vals = np.full(len(points), self.kappa)
        for center, bump in self.perturbations:
            xi = (points - np.asarray(center)) / self.epsilon
            vals += np.asarray(bump(xi), dtype=float)
        return vals

    def source_2d(self, points):
        points = np.atleast_2d(np.asarray(points, dtype=float))
        vals = np.zeros(len(points))
        if not self.sources:
            return vals
        for eid, g in self.sources.items():
            ch = self.domain.channels[eid]
            s, t = ch.local(points)
            inside = (
                (s >= ch.s0 - 1e-12)
                & (s <= ch.s1 + 1e-12)
                & (np.abs(t) <= 0.5 * ch.width + 1e-12)
            )
            if np.any(inside):
                vals[inside] = np.asarray(g(s[inside]), dtype=float)
        return vals


def transport_params_from_graph(graph, domain, kappa, beta, sources=None):
    """TransportParams with one diffusivity bump per marker carrying k_amp != 0."""
    perts = []
    for e in graph.edges:
        ch = domain.channels[e.id]
        for m in e.stenoses:
            if m.k_amp != 0.0:
                perts.append((ch.point(m.s, 0.0), m.diffusivity_bump))
    return TransportParams(
        kappa=kappa,
        beta=beta,
        epsilon=graph.epsilon,
        perturbations=tuple(perts),
        sources=dict(sources) if sources else None,
        domain=domain,
    )


@dataclass(frozen=True)
class TransportSolution:
    concentration: Field        # P2
    params: TransportParams
    velocity: object
    max_cell_peclet: float
    system: SparseSystem        # unconstrained weak form, kept for flux audits
    port_tags: tuple

    def export_csv(self, path):
        self.concentration.export_csv(path, header="x,y,c")


def cell_peclet(mesh, params, velocity):
    """Max over elements of |V| h_T / (2 K)."""
    vel = eval_velocity_at_quadrature(velocity, mesh)
    speed = np.linalg.norm(vel, axis=2).max(axis=1)
    pts, _ = _quad_points_physical(mesh)
    nt, nq = pts.shape[:2]
    kmin = params.diffusivity(pts.reshape(-1, 2)).reshape(nt, nq).min(axis=1)
    v = mesh.vertices[mesh.triangles]
    hs = np.max(
        [np.linalg.norm(v[:, (k + 1) % 3] - v[:, k], axis=1) for k in range(3)], axis=0
    )
    return float(np.max(speed * hs / (2.0 * kmin)))


def solve_transport(mesh, params, velocity, port_values, warn_peclet=True):
    """Galerkin P2 solve of the convection-diffusion-sorption problem.

    ``velocity`` is a callable of points or a P2v Field on the same mesh;
    ``port_values`` maps port tags to Dirichlet concentrations q_t.
    """
    peclet = cell_peclet(mesh, params, velocity)
    if warn_peclet and peclet > PECLET_LIMIT:
        warnings.warn(
            f"cell Peclet {peclet:.2f} exceeds {PECLET_LIMIT}; plain Galerkin may oscillate",
            PecletWarning,
            stacklevel=2,
        )
    system = assemble(
        mesh,
        "P2",
        diffusion=params.diffusivity,
        convection=velocity,
        boundary_mass={"wall": -params.epsilon * params.beta} if params.beta != 0.0 else None,
        load=params.source_2d if params.sources else None,
    )
    # keep the raw weak form for variational flux extraction
    raw = SparseSystem(matrix=system.matrix.copy(), rhs=system.rhs.copy())
    for tag, q in port_values.items():
        for d in mesh.boundary_p2_dofs(lambda t, tag=tag: t == tag):
            system.fix(d, float(q))
    c = solve_sparse(system)
    return TransportSolution(
        concentration=Field(mesh, "P2", c),
        params=params,
        velocity=velocity,
        max_cell_peclet=peclet,
        system=raw,
        port_tags=tuple(port_values),
    )


def conservation_report(solution):
    """Mass balance: integral of g plus wall sorption vs net port outflow.

    Port outflow combines the variational diffusive flux (residual of the
    unconstrained weak form at port DOFs) with the quadrature convective flux.
    Returns a dict with the individual terms and the relative defect.
    """
    mesh = solution.concentration.mesh
    params = solution.params
    c = solution.concentration.values
    res = solution.system.residual(c)

    port_dofs = mesh.boundary_p2_dofs(lambda t: t in solution.port_tags)
    diffusive_out = -float(res[port_dofs].sum())

    ts, ws = elements.gauss1d(3)
    basis = elements.p2_edge_basis(ts)
    conv_out = 0.0
    for i, tag in enumerate(mesh.boundary_tags):
        if tag not in solution.port_tags:
            continue
        v0, v1 = mesh.boundary_edges[i]
        mid = mesh.n_vertices + mesh.boundary_edge_ids[i]
        p0, p1 = mesh.vertices[v0], mesh.vertices[v1]
        tvec = p1 - p0
        length = np.linalg.norm(tvec)
        nrm = np.array([tvec[1], -tvec[0]]) / length
        pts = p0[None, :] + np.outer(ts, tvec)
        if isinstance(solution.velocity, Field):
            vel = solution.velocity.evaluate(pts)
        else:
            vel = np.asarray(solution.velocity(pts), dtype=float)
        cvals = basis @ c[[v0, v1, mid]]
        conv_out += length * np.sum(ws * cvals * (vel @ nrm))

    source_total = 0.0
    if params.sources:
        source_total = float(load_vector(mesh, "P2", params.source_2d).sum())
    wall_term = 0.0
    if params.beta != 0.0:
        bm = boundary_mass_matrix(mesh, "P2", "wall")
        wall_term = params.epsilon * params.beta * float(np.ones(len(c)) @ (bm @ c))

    outflow = diffusive_out + conv_out
    lhs = source_total + wall_term
    scale = max(abs(lhs), abs(outflow), 1e-12)
    return {
        "source": source_total,
        "wall_sorption": wall_term,
        "diffusive_outflow": diffusive_out,
        "convective_outflow": conv_out,
        "defect": lhs - outflow,
        "relative_defect": abs(lhs - outflow) / scale,
    }


def wall_sorption_integral(solution):
    """eps*beta * boundary integral of c over the lateral walls."""
    mesh = solution.concentration.mesh
    bm = boundary_mass_matrix(mesh, "P2", "wall")
    ones = np.ones(mesh.n_p2)
    return solution.params.epsilon * solution.params.beta * float(
        ones @ (bm @ solution.concentration.values)
    )


def cross_section_average(field, channel, samples, n_quad=8):
    """Transverse averages (1/w) int c dt at the given axial positions.

    ``channel`` is a ChannelGeom; samples outside its trimmed range raise
    OutsideChannel.
    """
    samples = np.atleast_1d(np.asarray(samples, dtype=float))
    bad = (samples < channel.s0 - 1e-12) | (samples > channel.s1 + 1e-12)
    if np.any(bad):
        s = samples[np.where(bad)[0][0]]
        raise OutsideChannel(
            f"sample s={s:.6g} outside channel [{channel.s0:.6g}, {channel.s1:.6g}] "
            f"of edge {channel.edge_id}"
        )
    nodes, wq = np.polynomial.legendre.leggauss(n_quad)  # on [-1, 1], weights sum to 2
    offsets = 0.5 * channel.width * nodes
    out = np.empty(len(samples))
    for i, s in enumerate(samples):
        pts = np.array([channel.point(s, t) for t in offsets])
        vals = field.evaluate(pts)
        out[i] = 0.5 * float(wq @ vals)
    return out


def total_flux_density(solution):
    """Element-centroid total flux  -K grad c + V c  as (points, vectors)."""
    mesh = solution.concentration.mesh
    centroids = mesh.vertices[mesh.triangles].mean(axis=1)
    grad = solution.concentration.gradient(centroids)
    cvals = solution.concentration.evaluate(centroids)
    if isinstance(solution.velocity, Field):
        vel = solution.velocity.evaluate(centroids)
    else:
        vel = np.asarray(solution.velocity(centroids), dtype=float)
    k = solution.params.diffusivity(centroids)
    flux = -k[:, None] * grad + vel * cvals[:, None]
    return centroids, flux


def export_flux_csv(solution, path):
    pts, flux = total_flux_density(solution)
    write_csv(path, "x,y,fx,fy", [pts[:, 0], pts[:, 1], flux[:, 0], flux[:, 1]])


def export_cross_average_csv(field, channel, samples, path):
    vals = cross_section_average(field, channel, samples)
    write_csv(path, "x1,cbar", [samples, vals])
