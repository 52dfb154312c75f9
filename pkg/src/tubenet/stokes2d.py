"""2D steady Stokes with variable viscosity, Poiseuille analytics, hydraulic
network flow, and streamfunction post-processing.

Discretization is the Taylor-Hood pair (P2 velocity / P1 pressure); the
pressure gauge is a zero-mean constraint imposed through a single Lagrange
multiplier.  Stenosis viscosity perturbations and fictitious (blocked) regions
enter as pointwise viscosity values at quadrature points.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from tubenet.errors import IncompatibleFlux, FloatingNetwork, NonClosedBoundaryIntegral
from tubenet.femcore import elements
from tubenet.femcore.assembly import (
    SparseSystem,
    _quad_points_physical,
    _tri_geometry,
    mass_matrix,
    stiffness_matrix,
)
from tubenet.femcore.fields import Field, write_csv
from tubenet.femcore.solve import solve_sparse

FLUX_BALANCE_TOL = 1e-10


# --------------------------------------------------------------------------
# viscosity
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class ViscosityField:
    """Base viscosity plus scaled stenosis bumps and fictitious-region overrides.

    Perturbations are (center, M) pairs with M evaluated at xi = (x-center)/eps;
    fictitious regions are (polygon, omega) with omega replacing the viscosity
    inside the polygon (large omega emulates excluded geometry).
    """

    mu: float
    epsilon: float = 1.0
    perturbations: tuple = ()
    fictitious: tuple = ()

    def __post_init__(self):
        floor = self.min_value()
        if floor <= 0.0:
            raise ValueError(f"viscosity not uniformly positive (min {floor:.4g})")

    def min_value(self):
        floor = self.mu
        for _center, bump in self.perturbations:
            vals = bump(np.zeros((1, 2)))
            floor = min(floor, self.mu + float(np.min(vals)))
        for _poly, omega in self.fictitious:
            floor = min(floor, omega)
        return floor

    def evaluate(self, points):
        points = np.atleast_2d(np.asarray(points, dtype=float))
        vals = np.full(len(points), self.mu)
        for center, bump in self.perturbations:
            xi = (points - np.asarray(center)) / self.epsilon
            vals += np.asarray(bump(xi), dtype=float)
        for poly, omega in self.fictitious:
            vals[_in_polygon(points, np.asarray(poly))] = omega
        return vals


def _in_polygon(points, poly):
    """Even-odd ray casting; points exactly on edges count as inside-ish."""
    x, y = points[:, 0], points[:, 1]
    inside = np.zeros(len(points), dtype=bool)
    n = len(poly)
    for i in range(n):
        x0, y0 = poly[i]
        x1, y1 = poly[(i + 1) % n]
        crosses = (y0 > y) != (y1 > y)
        with np.errstate(divide="ignore", invalid="ignore"):
            xint = x0 + (y - y0) * (x1 - x0) / (y1 - y0)
        inside ^= crosses & (x < np.where(crosses, xint, np.inf))
    return inside


def viscosity_from_graph(graph, domain, mu, fictitious=()):
    """ViscosityField with one bump per stenosis marker carrying m_amp != 0."""
    perts = []
    for e in graph.edges:
        ch = domain.channels[e.id]
        for m in e.stenoses:
            if m.m_amp != 0.0:
                center = ch.point(m.s, 0.0)
                perts.append((center, m.viscosity_bump))
    return ViscosityField(
        mu=mu, epsilon=graph.epsilon, perturbations=tuple(perts), fictitious=tuple(fictitious)
    )


# --------------------------------------------------------------------------
# Poiseuille analytics
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class PoiseuilleFlow:
    """Plane Poiseuille flow in a channel of the given width.

    velocity(x2) = (c1 / (2 mu)) (x2^2 - w^2/4) along the axis,
    pressure(x1) = c1 x1 + c2, flux Q = -c1 w^3 / (12 mu).
    """

    c1: float
    mu: float
    width: float
    c2: float = 0.0

    def velocity(self, x2):
        x2 = np.asarray(x2, dtype=float)
        return (self.c1 / (2.0 * self.mu)) * (x2**2 - self.width**2 / 4.0)

    def pressure(self, x1):
        return self.c1 * np.asarray(x1, dtype=float) + self.c2

    @property
    def flux(self):
        return -self.c1 * self.width**3 / (12.0 * self.mu)


def poiseuille_profile(c1, mu, width):
    if mu <= 0.0 or width <= 0.0:
        raise ValueError("poiseuille_profile requires mu > 0 and width > 0")
    return PoiseuilleFlow(c1=float(c1), mu=float(mu), width=float(width))


# --------------------------------------------------------------------------
# hydraulic resistance network
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class NetworkFlow:
    """Edge fluxes, Poiseuille amplitudes and nodal pressures on the graph."""

    graph: object
    mu: float
    pressure: dict                       # node id -> pressure
    flux: dict                           # edge id -> signed flux along a->b
    c1: dict                             # edge id -> axial pressure gradient
    amplitude: dict = field(default=None)  # edge id -> transverse profile amplitude

    def kirchhoff_residual(self):
        res = {}
        for node in self.graph.nodes:
            if node.kind == "entrance_exit":
                continue
            total = 0.0
            for eid in self.graph.incident(node.id):
                e = self.graph.edge(eid)
                total += self.flux[eid] * (1.0 if e.b == node.id else -1.0)
            res[node.id] = total
        return res

    def profile_velocity(self, edge_id, t):
        """Axial speed at physical transverse offset t from the edge axis."""
        e = self.graph.edge(edge_id)
        eps = self.graph.epsilon
        zeta = np.asarray(t, dtype=float) / eps
        prof = self.amplitude[edge_id] * (e.theta**2 / 4.0 - zeta**2)
        return np.where(np.abs(zeta) <= e.theta / 2.0, prof, 0.0)


def hydraulic_resistance(graph, e, mu):
    """12 mu |e| / (theta eps)^3 for the plane Poiseuille law."""
    return 12.0 * mu * graph.length(e) / graph.width(e) ** 3


def solve_network_flow(graph, port_fluxes, mu=1.0, port_pressures=None):
    """Nodal pressures and edge fluxes of the hydraulic resistance network.

    ``port_fluxes`` maps port node ids to signed inflow (positive into the
    network).  Ports may instead appear in ``port_pressures`` (prescribed
    pressure); with no pressure condition the fluxes must balance to zero and
    the gauge pins the first node.
    """
    port_pressures = port_pressures or {}
    ports = {n.id for n in graph.ports()}
    unknown = (set(port_fluxes) | set(port_pressures)) - ports
    if unknown:
        raise FloatingNetwork(f"conditions prescribed at non-port nodes {sorted(unknown)}")
    if set(port_fluxes) & set(port_pressures):
        raise FloatingNetwork("a port cannot carry both a flux and a pressure condition")
    if not port_pressures:
        total = sum(port_fluxes.values())
        scale = max((abs(q) for q in port_fluxes.values()), default=0.0)
        if abs(total) > 1e-12 * max(scale, 1.0):
            raise IncompatibleFlux(f"port fluxes sum to {total:.3e}, must be 0")

    nodes = [n.id for n in graph.nodes]
    index = {nid: i for i, nid in enumerate(nodes)}
    n = len(nodes)
    a = np.zeros((n, n))
    b = np.zeros(n)
    for e in graph.edges:
        g = 1.0 / hydraulic_resistance(graph, e, mu)
        i, j = index[e.a], index[e.b]
        a[i, i] += g
        a[j, j] += g
        a[i, j] -= g
        a[j, i] -= g
    for nid, q in port_fluxes.items():
        b[index[nid]] += q
    if port_pressures:
        for nid, pval in port_pressures.items():
            i = index[nid]
            a[i, :] = 0.0
            a[i, i] = 1.0
            b[i] = pval
    else:
        # gauge: pin the first node's pressure
        a[0, :] = 0.0
        a[0, 0] = 1.0
        b[0] = 0.0
    try:
        p = np.linalg.solve(a, b)
    except np.linalg.LinAlgError as exc:
        raise FloatingNetwork(f"network matrix singular: {exc}") from exc
    if not np.all(np.isfinite(p)):
        raise FloatingNetwork("network solve produced non-finite pressures")

    pressure = {nid: float(p[index[nid]]) for nid in nodes}
    flux, c1, amp = {}, {}, {}
    eps = graph.epsilon
    for e in graph.edges:
        dp = pressure[e.a] - pressure[e.b]
        q = dp / hydraulic_resistance(graph, e, mu)
        flux[e.id] = q
        c1[e.id] = (pressure[e.b] - pressure[e.a]) / graph.length(e)
        amp[e.id] = 6.0 * q / (eps * e.theta**3)
    return NetworkFlow(
        graph=graph, mu=mu, pressure=pressure, flux=flux, c1=c1, amplitude=amp
    )


# --------------------------------------------------------------------------
# Taylor-Hood Stokes solve
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class StokesSolution:
    velocity: Field           # P2v
    pressure: Field           # P1, zero mean
    divergence_l2: float
    port_fluxes: dict         # tag -> outward flux integral
    peclet_info: dict = None

    def export_velocity_csv(self, path):
        self.velocity.export_csv(path, header="x,y,ux,uy")

    def export_pressure_csv(self, path):
        self.pressure.export_csv(path, header="x,y,p")


def _port_frames(mesh, tag):
    """(center, tangent, outward normal, width) of a straight tagged boundary."""
    ids = mesh.boundary_ids_for(tag)
    if len(ids) == 0:
        raise KeyError(f"no boundary tagged {tag!r}")
    pts = []
    for i in ids:
        v0, v1 = mesh.boundary_edges[i]
        pts.append(mesh.vertices[v0])
        pts.append(mesh.vertices[v1])
    pts = np.array(pts)
    v0, v1 = mesh.boundary_edges[ids[0]]
    t = mesh.vertices[v1] - mesh.vertices[v0]
    t = t / np.linalg.norm(t)
    nrm = np.array([t[1], -t[0]])  # outward (domain on the left of travel)
    s = pts @ t
    width = s.max() - s.min()
    center = 0.5 * (pts[np.argmin(s)] + pts[np.argmax(s)])
    return center, t, nrm, width


def parabolic_port_profile(mesh, tag, influx):
    """Poiseuille-trace Dirichlet data carrying the given inflow through a port."""
    center, t, nrm, width = _port_frames(mesh, tag)
    amp = 1.5 * influx / width

    def profile(points):
        points = np.atleast_2d(points)
        s = (points - center) @ t
        speed = amp * (1.0 - (2.0 * s / width) ** 2)
        return -np.outer(speed, nrm)

    return profile


def assemble_stokes(mesh, viscosity, body_force=None):
    """Taylor-Hood blocks: (A, B, m) with a(u,v), b(v,q) = -(q, div v), and
    the pressure-mean vector m; plus the velocity load vector."""
    qp, qw = elements.tri_quadrature()
    det, invjt = _tri_geometry(mesh)
    pts, _ = _quad_points_physical(mesh)
    nt, nq = pts.shape[:2]
    gref2 = elements.p2_grads(qp)
    g2 = np.einsum("eab,qib->eqia", invjt, gref2)      # (nt, nq, 6, 2)
    basis1 = elements.p1_basis(qp)                      # (nq, 3)
    if isinstance(viscosity, ViscosityField):
        mu = viscosity.evaluate(pts.reshape(-1, 2)).reshape(nt, nq)
    elif np.isscalar(viscosity):
        mu = np.full((nt, nq), float(viscosity))
    else:
        mu = np.asarray(viscosity(pts.reshape(-1, 2)), dtype=float).reshape(nt, nq)
    w = qw[None, :] * (0.5 * det)[:, None]
    muw = mu * w

    gx = g2[..., 0]
    gy = g2[..., 1]
    axx = np.einsum("eqi,eqj,eq->eij", gx, gx, 2.0 * muw) + np.einsum(
        "eqi,eqj,eq->eij", gy, gy, muw
    )
    ayy = np.einsum("eqi,eqj,eq->eij", gy, gy, 2.0 * muw) + np.einsum(
        "eqi,eqj,eq->eij", gx, gx, muw
    )
    axy = np.einsum("eqi,eqj,eq->eij", gy, gx, muw)  # row vx-test, col uy-trial

    n2 = mesh.n_p2
    n1 = mesh.n_vertices
    dofs2 = mesh.tri_p2_dofs()
    dofs1 = mesh.triangles

    def acc(local, rows_dofs, cols_dofs, shape):
        nr = local.shape[1]
        nc = local.shape[2]
        rows = np.repeat(rows_dofs, nc, axis=1).ravel()
        cols = np.tile(cols_dofs, (1, nr)).ravel()
        return sp.coo_matrix((local.ravel(), (rows, cols)), shape=shape).tocsr()

    a = sp.bmat(
        [
            [acc(axx, dofs2, dofs2, (n2, n2)), acc(axy, dofs2, dofs2, (n2, n2))],
            [acc(np.swapaxes(axy, 1, 2), dofs2, dofs2, (n2, n2)), acc(ayy, dofs2, dofs2, (n2, n2))],
        ]
    ).tocsr()

    bx = -np.einsum("qk,eqj,eq->ekj", basis1, gx, w)
    by = -np.einsum("qk,eqj,eq->ekj", basis1, gy, w)
    b = sp.bmat(
        [[acc(bx, dofs1, dofs2, (n1, n2)), acc(by, dofs1, dofs2, (n1, n2))]]
    ).tocsr()

    m_p = np.asarray(mass_matrix(mesh, "P1").sum(axis=1)).ravel()  # integral of each q_k

    rhs_u = np.zeros(2 * n2)
    if body_force is not None:
        fvals = np.asarray(body_force(pts.reshape(-1, 2)), dtype=float).reshape(nt, nq, 2)
        basis2 = elements.p2_basis(qp)
        fx = np.einsum("qi,eq,eq->ei", basis2, fvals[..., 0], w)
        fy = np.einsum("qi,eq,eq->ei", basis2, fvals[..., 1], w)
        np.add.at(rhs_u, dofs2.ravel(), fx.ravel())
        np.add.at(rhs_u[n2:], dofs2.ravel(), fy.ravel())
    return a, b, m_p, rhs_u


def solve_stokes(mesh, viscosity, port_data, body_force=None):
    """Taylor-Hood Stokes solve with no-slip walls and Dirichlet port profiles.

    ``port_data`` maps boundary tags to a signed inflow flux (a Poiseuille
    trace is imposed) or directly to a profile callable points -> (n, 2).
    Net prescribed inflow must vanish (IncompatibleFlux otherwise).
    """
    profiles = {}
    fluxes = {}
    for tag, data in port_data.items():
        if callable(data):
            profiles[tag] = data
            fluxes[tag] = _profile_influx(mesh, tag, data)
        else:
            profiles[tag] = parabolic_port_profile(mesh, tag, float(data))
            fluxes[tag] = float(data)
    total = sum(fluxes.values())
    scale = max([abs(q) for q in fluxes.values()] + [1.0])
    if abs(total) > 1e-9 * scale:
        raise IncompatibleFlux(f"net prescribed inflow {total:.3e} != 0")

    a, b, m_p, rhs_u = assemble_stokes(mesh, viscosity, body_force)
    n2 = mesh.n_p2
    coords = mesh.p2_coordinates()
    dirichlet = {}
    for d in mesh.boundary_p2_dofs(lambda t: t == "wall"):
        dirichlet[int(d)] = 0.0
        dirichlet[int(n2 + d)] = 0.0
    for tag, profile in profiles.items():
        dofs = mesh.boundary_p2_dofs(lambda t, tag=tag: t == tag)
        vals = np.atleast_2d(profile(coords[dofs]))
        for d, v in zip(dofs, vals):
            dirichlet[int(d)] = float(v[0])
            dirichlet[int(n2 + d)] = float(v[1])
    u_vals, p_vals = solve_saddle(mesh, a, b, m_p, rhs_u, dirichlet)
    u = Field(mesh, "P2v", u_vals)
    p = Field(mesh, "P1", p_vals)
    div = divergence_l2(u)
    flux_report = {tag: boundary_flux(u, tag) for tag in profiles}
    return StokesSolution(velocity=u, pressure=p, divergence_l2=div, port_fluxes=flux_report)


def solve_saddle(mesh, a, b, m_p, rhs_u, dirichlet_u):
    """Solve the Taylor-Hood saddle system with a zero-mean pressure gauge.

    The pressure kernel is one-dimensional (constants), so the system is
    solved with one pinned pressure DOF (keeps the factorization sparse) and
    the pressure is then shifted to exact zero mean; this is identical to the
    Lagrange-multiplier gauge up to the shift.
    """
    n2 = mesh.n_p2
    n1 = mesh.n_vertices
    mat = sp.bmat([[a, b.T], [b, None]], format="csr")
    system = SparseSystem(matrix=mat, rhs=np.concatenate([rhs_u, np.zeros(n1)]))
    for d, v in dirichlet_u.items():
        system.fix(d, v)
    system.fix(2 * n2, 0.0)  # pin one pressure value; corrected below
    x = solve_sparse(system)
    u_vals = np.column_stack([x[:n2], x[n2: 2 * n2]])
    p_vals = x[2 * n2:]
    area = float(m_p.sum())
    p_vals = p_vals - float(m_p @ p_vals) / area
    return u_vals, p_vals


def _profile_influx(mesh, tag, profile):
    ids = mesh.boundary_ids_for(tag)
    ts, ws = elements.gauss1d(4)
    total = 0.0
    for i in ids:
        v0, v1 = mesh.boundary_edges[i]
        p0, p1 = mesh.vertices[v0], mesh.vertices[v1]
        t = p1 - p0
        length = np.linalg.norm(t)
        nrm = np.array([t[1], -t[0]]) / length
        pts = p0[None, :] + np.outer(ts, t)
        vals = np.atleast_2d(profile(pts))
        total += length * np.sum(ws * (vals @ nrm))
    return -total  # outward integral -> inflow is its negative


def boundary_flux(u_field, tag):
    """Outward flux integral of a P2v field over a tagged boundary (exact)."""
    mesh = u_field.mesh
    ids = mesh.boundary_ids_for(tag)
    ts, ws = elements.gauss1d(3)
    basis = elements.p2_edge_basis(ts)
    total = 0.0
    for i in ids:
        v0, v1 = mesh.boundary_edges[i]
        mid = mesh.n_vertices + mesh.boundary_edge_ids[i]
        p0, p1 = mesh.vertices[v0], mesh.vertices[v1]
        t = p1 - p0
        length = np.linalg.norm(t)
        nrm = np.array([t[1], -t[0]]) / length
        local = u_field.values[[v0, v1, mid]]
        vals = basis @ local
        total += length * np.sum(ws * (vals @ nrm))
    return float(total)


def flux_through_cut(u_field, point, normal, width, nsamples=4):
    """Flux of u through a transverse segment centered at ``point``.

    The segment spans ``width`` orthogonally to ``normal``; integration uses
    Gauss points on subdivisions, exact for piecewise-quadratic traces.
    """
    normal = np.asarray(normal, dtype=float)
    normal = normal / np.linalg.norm(normal)
    tang = np.array([-normal[1], normal[0]])
    ts, ws = elements.gauss1d(4)
    total = 0.0
    nsub = max(nsamples, 4)
    for k in range(nsub):
        a = -width / 2.0 + width * k / nsub
        h = width / nsub
        pts = np.asarray(point)[None, :] + np.outer(a + h * ts, tang)
        vals = u_field.evaluate(pts)
        total += h * np.sum(ws * (vals @ normal))
    return float(total)


def divergence_l2(u_field):
    mesh = u_field.mesh
    qp, qw = elements.tri_quadrature()
    det, invjt = _tri_geometry(mesh)
    g2 = np.einsum("eab,qib->eqia", invjt, elements.p2_grads(qp))
    local = u_field.values[mesh.tri_p2_dofs()]
    div = np.einsum("eqi,ei->eq", g2[..., 0], local[..., 0]) + np.einsum(
        "eqi,ei->eq", g2[..., 1], local[..., 1]
    )
    w = qw[None, :] * (0.5 * det)[:, None]
    return float(np.sqrt(np.sum(div**2 * w)))


def mean_speed_in_polygon(u_field, polygon):
    """Area-averaged |u| over mesh elements whose centroid lies in the polygon."""
    mesh = u_field.mesh
    pts, qw = _quad_points_physical(mesh)
    det, _ = _tri_geometry(mesh)
    centroids = mesh.vertices[mesh.triangles].mean(axis=1)
    inside = _in_polygon(centroids, np.asarray(polygon))
    if not np.any(inside):
        return 0.0
    qp, _ = elements.tri_quadrature()
    basis2 = elements.p2_basis(qp)
    local = u_field.values[mesh.tri_p2_dofs()[inside]]
    vals = np.einsum("qi,eic->eqc", basis2, local)
    speed = np.linalg.norm(vals, axis=2)
    w = qw[None, :] * (0.5 * det[inside])[:, None]
    return float(np.sum(speed * w) / np.sum(w))


# --------------------------------------------------------------------------
# streamfunction
# --------------------------------------------------------------------------

def _boundary_loops(mesh):
    """Boundary edge indices ordered into closed loops following orientation."""
    start_of = {}
    for i, (v0, _v1) in enumerate(mesh.boundary_edges):
        start_of[int(v0)] = i
    seen = set()
    loops = []
    for i in range(len(mesh.boundary_edges)):
        if i in seen:
            continue
        loop = []
        j = i
        while j not in seen:
            seen.add(j)
            loop.append(j)
            j = start_of[int(mesh.boundary_edges[j][1])]
        loops.append(loop)
    return loops


def streamfunction(solution):
    """Streamline potential: Laplace(psi) = curl(u), Dirichlet data integrated
    from the wall-flux condition along the boundary; psi = 0 at the start vertex."""
    u = solution.velocity
    mesh = u.mesh
    n2 = mesh.n_p2
    ts, ws = elements.gauss1d(4)
    basis = elements.p2_edge_basis(ts)
    # half-interval rule for the midpoint node value
    ts_h, ws_h = elements.gauss1d(4)
    psi_b = {}
    scale = max(1.0, float(np.max(np.abs(u.values))))
    for loop in _boundary_loops(mesh):
        val = 0.0
        first_vertex = int(mesh.boundary_edges[loop[0]][0])
        psi_b[first_vertex] = 0.0
        for i in loop:
            v0, v1 = (int(v) for v in mesh.boundary_edges[i])
            mid = int(mesh.n_vertices + mesh.boundary_edge_ids[i])
            p0, p1 = mesh.vertices[v0], mesh.vertices[v1]
            tvec = p1 - p0
            length = np.linalg.norm(tvec)
            nrm = np.array([tvec[1], -tvec[0]]) / length
            local = u.values[[v0, v1, mid]]
            flux_full = length * np.sum(ws * ((basis @ local) @ nrm))
            half_basis = elements.p2_edge_basis(0.5 * ts_h)
            flux_half = 0.5 * length * np.sum(ws_h * ((half_basis @ local) @ nrm))
            psi_b[mid] = val + flux_half
            val += flux_full
            psi_b[v1] = val
        mismatch = abs(val - 0.0)
        if mismatch > 1e-6 * max(scale, 1e-12):
            raise NonClosedBoundaryIntegral(
                f"boundary flux integral does not close: residual {val:.3e}"
            )

    # rhs: -(curl u, v)
    qp, qw = elements.tri_quadrature()
    det, invjt = _tri_geometry(mesh)
    g2 = np.einsum("eab,qib->eqia", invjt, elements.p2_grads(qp))
    local = u.values[mesh.tri_p2_dofs()]
    curl = np.einsum("eqi,ei->eq", g2[..., 1], local[..., 0]) - np.einsum(
        "eqi,ei->eq", g2[..., 0], local[..., 1]
    )
    w = qw[None, :] * (0.5 * det)[:, None]
    basis2 = elements.p2_basis(qp)
    rhs = np.zeros(n2)
    np.add.at(rhs, mesh.tri_p2_dofs().ravel(), -np.einsum("qi,eq->ei", basis2, curl * w).ravel())

    system = SparseSystem(matrix=stiffness_matrix(mesh, "P2"), rhs=rhs)
    for d, v in psi_b.items():
        system.fix(d, v)
    psi = solve_sparse(system)
    return Field(mesh, "P2", psi)


# --------------------------------------------------------------------------
# diagnostics
# --------------------------------------------------------------------------

def stokes_residual(solution, viscosity, body_force=None, grad_mu=None):
    """Element-wise strong-form residual norms of a Stokes solution.

    Returns dict with L2 norms of the momentum residual (second derivatives of
    P2 are element-wise constant) and of the divergence.  ``grad_mu`` supplies
    the viscosity gradient; if omitted it is approximated by central
    differences of the viscosity evaluation.
    """
    mesh = solution.velocity.mesh
    qp, qw = elements.tri_quadrature()
    det, invjt = _tri_geometry(mesh)
    pts, _ = _quad_points_physical(mesh)
    nt, nq = pts.shape[:2]
    flat = pts.reshape(-1, 2)

    if isinstance(viscosity, ViscosityField):
        mu = viscosity.evaluate(flat).reshape(nt, nq)
        mu_eval = viscosity.evaluate
    elif np.isscalar(viscosity):
        mu = np.full((nt, nq), float(viscosity))
        mu_eval = None
    else:
        mu = np.asarray(viscosity(flat), dtype=float).reshape(nt, nq)
        mu_eval = viscosity
    if grad_mu is not None:
        gmu = np.asarray(grad_mu(flat), dtype=float).reshape(nt, nq, 2)
    elif mu_eval is not None:
        step = 1e-6 * max(mesh.h, 1e-12)
        gmu = np.empty((nt * nq, 2))
        for k, dvec in enumerate((np.array([step, 0.0]), np.array([0.0, step]))):
            gmu[:, k] = (mu_eval(flat + dvec) - mu_eval(flat - dvec)) / (2.0 * step)
        gmu = gmu.reshape(nt, nq, 2)
    else:
        gmu = np.zeros((nt, nq, 2))

    # second derivatives of P2: constant per element
    hess_ref = _p2_ref_hessians()                       # (6, 2, 2)
    local_u = solution.velocity.values[mesh.tri_p2_dofs()]  # (nt, 6, 2)
    # map: H_phys[a,c] = sum_{b,d} invJT[a,b] H_ref[b,d] invJT[c,d]
    hess_phys = np.einsum("eab,ibd,ecd->eiac", invjt, hess_ref, invjt)
    lap_u = np.einsum("eiaa,eic->ec", hess_phys, local_u)   # (nt, 2) Laplacian
    # grad div u: d/dx_a (du_c/dx_c): uses mixed second derivatives
    graddiv = np.einsum("eiac,eic->ea", hess_phys, local_u)

    g2 = np.einsum("eab,qib->eqia", invjt, elements.p2_grads(qp))
    grad_u = np.einsum("eqid,eic->eqcd", g2, local_u)
    g1 = np.einsum("eab,ib->eia", invjt, elements.p1_grads())
    local_p = solution.pressure.values[mesh.triangles]
    grad_p = np.einsum("eid,ei->ed", g1, local_p)       # constant per element

    if body_force is not None:
        f = np.asarray(body_force(flat), dtype=float).reshape(nt, nq, 2)
    else:
        f = np.zeros((nt, nq, 2))

    # momentum residual: div(mu (grad u + grad u^T)) - grad p - f
    # with div(mu S) = mu (lap u + grad div u) + S grad mu
    strain = grad_u + np.swapaxes(grad_u, 2, 3)
    visc_term = mu[..., None] * (lap_u + graddiv)[:, None, :] + np.einsum(
        "eqcd,eqd->eqc", strain, gmu
    )
    res = visc_term - grad_p[:, None, :] - f
    w = qw[None, :] * (0.5 * det)[:, None]
    mom = float(np.sqrt(np.sum(np.sum(res**2, axis=2) * w)))
    return {"momentum_l2": mom, "divergence_l2": divergence_l2(solution.velocity)}


def _p2_ref_hessians():
    """Reference-element second derivatives of the six P2 shape functions."""
    h = np.zeros((6, 2, 2))
    d = elements.p1_grads()  # gradients of barycentric lam0..2
    for i in range(3):
        h[i] = 4.0 * np.outer(d[i], d[i])
    pairs = [(0, 1), (1, 2), (2, 0)]
    for k, (i, j) in enumerate(pairs):
        h[3 + k] = 4.0 * (np.outer(d[i], d[j]) + np.outer(d[j], d[i]))
    return h


def inf_sup_constant(mesh, viscosity=1.0):
    """Smallest nonzero generalized singular value of the pressure Schur
    complement, normalized by the pressure mass matrix (dense; small meshes)."""
    a, b, _m, _rhs = assemble_stokes(mesh, viscosity)
    n2 = mesh.n_p2
    wall = mesh.boundary_p2_dofs(lambda t: True)
    fixed = np.concatenate([wall, n2 + wall])
    keep = np.setdiff1d(np.arange(2 * n2), fixed)
    a_red = a.toarray()[np.ix_(keep, keep)]
    b_red = b.toarray()[:, keep]
    mp = mass_matrix(mesh, "P1").toarray()
    s = b_red @ np.linalg.solve(a_red, b_red.T)
    import scipy.linalg as sla

    vals = sla.eigvalsh(s, mp)
    vals = np.sort(np.abs(vals))
    # drop the constant-pressure null mode
    return float(np.sqrt(vals[1]))
