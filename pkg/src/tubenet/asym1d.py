"""Dimension-reduced solver on the tube graph: leading 1D network model,
higher-order transverse correctors, wall corrector, and 2D reconstruction.

The per-edge leading equation (transverse average of the 2D problem) is

    -kappa*theta * cbar'' + <V_p>_theta * cbar' - 2*beta*cbar = theta * g,

with Dirichlet values at ports, continuity plus the Kirchhoff flux balance
    sum_i kappa*theta_i * d(cbar)/dx_away = 0
at interior nodes, and (at leading order) continuous values/fluxes across
stenosis markers.

Discretization: on each edge the coefficients are constant, so each grid cell
carries the exact local solution span{e^{r1 x}, e^{r2 x}} of the homogeneous
operator (exponential fitting with reaction).  Nodal values are exact up to
roundoff for piecewise-constant right-hand sides; derivative continuity and
the Kirchhoff rows are written directly on the exact local derivatives.
"""

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from tubenet.errors import OrderUnsupported, SingularSystem, SolvabilityViolation

MAX_ORDER = 3


def mean_velocity(theta, amplitude):
    """Transverse mean of the parabolic edge profile A*(theta^2/4 - zeta^2).

    Equals A * theta^3 / 6; reduces to 1/6 for theta=1, A=1.
    """
    if not (0.0 < theta <= 1.0):
        raise ValueError(f"theta must be in (0, 1], got {theta}")
    return amplitude * theta**3 / 6.0


def velocity_poly_xi(theta, amplitude):
    """Axial profile as polynomial in the normalized coordinate xi2 = t/(theta*eps):
    A*theta^2*(1/4 - xi2^2); coefficients [c0, c1, c2]."""
    return np.array([amplitude * theta**2 / 4.0, 0.0, -amplitude * theta**2])


# --------------------------------------------------------------------------
# exact local two-point solutions
# --------------------------------------------------------------------------

def _cs(s2, x):
    """(C, S) with C = cosh(s x), S = sinh(s x)/s for s = sqrt(s2), analytic in s2."""
    z = s2 * x * x
    if abs(z) < 1e-8:
        c = 1.0 + z / 2.0 + z * z / 24.0 + z**3 / 720.0
        s = x * (1.0 + z / 6.0 + z * z / 120.0 + z**3 / 5040.0)
        return c, s
    if s2 > 0.0:
        rt = math.sqrt(s2)
        return math.cosh(rt * x), math.sinh(rt * x) / rt
    rt = math.sqrt(-s2)
    return math.cos(rt * x), math.sin(rt * x) / rt


@dataclass(frozen=True)
class EdgeScheme:
    """Exact-cell coefficients for -D c'' + v c' + r c = f on a uniform grid.

    Derivative maps of a cell [0, h]:
        c'(0) = a00 c0 + a01 c1 + g0 f,   c'(h) = a10 c0 + a11 c1 + g1 f,
    with f the cell's (constant) right-hand side.
    """

    D: float
    v: float
    r: float
    h: float
    a00: float = field(init=False)
    a01: float = field(init=False)
    a10: float = field(init=False)
    a11: float = field(init=False)
    g0: float = field(init=False)
    g1: float = field(init=False)

    def __post_init__(self):
        d, v, r, h = self.D, self.v, self.r, self.h
        if d <= 0.0:
            raise SingularSystem("edge diffusion must be positive")
        m = v / (2.0 * d)
        s2 = m * m + r / d
        if abs(m) * h > 30.0:
            raise SingularSystem(
                f"cell Peclet too extreme for the fitted scheme (|m| h = {abs(m) * h:.1f}); "
                "increase the grid resolution"
            )
        if s2 < 0.0 and math.sqrt(-s2) * h > 2.0:
            raise SingularSystem(
                "oscillatory local solutions under-resolved; increase the grid resolution"
            )
        e = math.exp(m * h)
        c, s = _cs(s2, h)
        # Ie = int_0^h exp(m t) S(t) dt by Gauss quadrature (smooth integrand)
        gx, gw = np.polynomial.legendre.leggauss(20)
        ts = 0.5 * h * (gx + 1.0)
        ie = 0.5 * h * sum(w * math.exp(m * t) * _cs(s2, t)[1] for w, t in zip(gw, ts))
        es = e * s
        if es == 0.0:
            raise SingularSystem("degenerate cell in fitted scheme")
        object.__setattr__(self, "a00", m - c / s)
        object.__setattr__(self, "a01", 1.0 / es)
        object.__setattr__(self, "a10", e * ((m * c + s2 * s) - (m * s + c) * c / s))
        object.__setattr__(self, "a11", (m * s + c) / s)
        object.__setattr__(self, "g0", ie / (d * es))
        object.__setattr__(self, "g1", (m * s + c) * ie / (d * s) - e * s / d)

    def solve_cell(self, c0, c1, f, x):
        """Exact in-cell solution value at local coordinate x in [0, h]."""
        d, v, r, h = self.D, self.v, self.r, self.h
        m = v / (2.0 * d)
        s2 = m * m + r / d
        e = math.exp(m * h)
        ch, sh = _cs(s2, h)
        gx, gw = np.polynomial.legendre.leggauss(20)

        def ie(xx):
            ts = 0.5 * xx * (gx + 1.0)
            return 0.5 * xx * sum(w * math.exp(m * t) * _cs(s2, t)[1] for w, t in zip(gw, ts))

        p_h = (-f / d) * ie(h)
        a = c0
        b = (c1 - c0 * e * ch - p_h) / (e * sh)
        cx, sx = _cs(s2, x)
        return a * math.exp(m * x) * cx + b * math.exp(m * x) * sx + (-f / d) * ie(x)


# --------------------------------------------------------------------------
# network solution container
# --------------------------------------------------------------------------

@dataclass
class Edge1DSolution:
    """Per-edge mean profiles cbar_j on uniform grids, order j = 0..k."""

    graph: object
    params: object                  # TransportParams (kappa, beta, epsilon)
    flow: object                    # NetworkFlow
    grids: dict                     # edge_id -> axial grid (edge-local, a->b)
    orders: dict                    # j -> {edge_id -> values (n+1,)}
    schemes: dict                   # edge_id -> EdgeScheme
    rhs_cells: dict                 # j -> {edge_id -> per-cell rhs}

    @property
    def max_order(self):
        return max(self.orders)

    def values(self, edge_id, j=0):
        return self.orders[j][edge_id]

    def interp(self, edge_id, s, j=0):
        return np.interp(np.asarray(s, dtype=float), self.grids[edge_id], self.orders[j][edge_id])

    def node_value(self, node_id, j=0):
        eid = self.graph.incident(node_id)[0]
        e = self.graph.edge(eid)
        vals = self.orders[j][eid]
        return float(vals[0] if e.a == node_id else vals[-1])

    def end_derivative(self, edge_id, node_id, j=0):
        """d(cbar_j)/dx in the away-from-node orientation (exact cell formula)."""
        e = self.graph.edge(edge_id)
        sc = self.schemes[edge_id]
        vals = self.orders[j][edge_id]
        f = self.rhs_cells.get(j, {}).get(edge_id)
        if e.a == node_id:
            fc = 0.0 if f is None else f[0]
            return sc.a00 * vals[0] + sc.a01 * vals[1] + sc.g0 * fc
        if e.b == node_id:
            fc = 0.0 if f is None else f[-1]
            # away from node b means -d/dx in edge orientation
            return -(sc.a10 * vals[-2] + sc.a11 * vals[-1] + sc.g1 * fc)
        raise ValueError(f"node {node_id} not an endpoint of {edge_id}")

    def kirchhoff_residual(self, j=0):
        out = {}
        g = self.graph
        for node in g.nodes:
            if node.kind == "entrance_exit":
                continue
            total = 0.0
            for eid in g.incident(node.id):
                e = g.edge(eid)
                total += self.params.kappa * e.theta * self.end_derivative(eid, node.id, j)
            out[node.id] = total
        return out


def _edge_rhs_cells(grid, f):
    """Piecewise-constant cell right-hand side from a callable or array."""
    mids = 0.5 * (grid[:-1] + grid[1:])
    if f is None:
        return np.zeros(len(mids))
    if callable(f):
        return np.asarray(f(mids), dtype=float)
    return np.interp(mids, grid, np.asarray(f, dtype=float))


def _solve_network(graph, schemes, grids, rhs_cells, port_values, value_jumps=None):
    """Assemble and solve the fitted 1D network system.

    ``value_jumps``: optional {(edge_id, grid_index): jump} forcing
    c(right) - c(left) = jump with flux continuity at an interior grid point
    (the grid point is duplicated).
    """
    value_jumps = value_jumps or {}
    # dof numbering: nodes first, then edge interiors (with duplicates at jumps)
    node_ids = [n.id for n in graph.nodes]
    node_dof = {nid: i for i, nid in enumerate(node_ids)}
    ndof = len(node_ids)
    edge_dofs = {}
    for e in graph.edges:
        n = len(grids[e.id]) - 1
        dofs_list = []
        jumps_here = sorted(i for (eid, i) in value_jumps if eid == e.id)
        for i in range(n + 1):
            if i == 0:
                dofs_list.append(node_dof[e.a])
            elif i == n:
                dofs_list.append(node_dof[e.b])
            else:
                dofs_list.append(ndof)
                ndof += 1
            if i in jumps_here and 0 < i < n:
                dofs_list.append(ndof)  # right-side duplicate
                ndof += 1
        edge_dofs[e.id] = np.array(dofs_list, dtype=np.int64)

    a = sp.lil_matrix((ndof, ndof))
    b = np.zeros(ndof)

    for e in graph.edges:
        sc = schemes[e.id]
        grid = grids[e.id]
        n = len(grid) - 1
        f = rhs_cells[e.id]
        dofs = edge_dofs[e.id]
        jumps_here = {i: value_jumps[(e.id, i)] for (eid, i) in value_jumps if eid == e.id}
        # map (grid index, side) -> dof position in dofs array
        pos = []
        p = 0
        for i in range(n + 1):
            left = p
            right = p
            if i in jumps_here and 0 < i < n:
                right = p + 1
                p += 1
            pos.append((left, right))
            p += 1
        for i in range(1, n):
            dl = dofs[pos[i][0]]
            dr = dofs[pos[i][1]]
            dlm = dofs[pos[i - 1][1]]
            drp = dofs[pos[i + 1][0]]
            if i in jumps_here:
                # duplicated point: value jump + flux continuity
                a[dl, dl] += 0.0
                a[dr, dl] -= 1.0
                a[dr, dr] += 1.0
                b[dr] += jumps_here[i]
                # flux continuity written on the left dof's equation
                a[dl, dlm] += -sc.a10
                a[dl, dl] += -sc.a11
                a[dl, dr] += sc.a00
                a[dl, drp] += sc.a01
                b[dl] += sc.g1 * f[i - 1] - sc.g0 * f[i]
            else:
                # derivative continuity: c'(x_i^+) - c'(x_i^-) = 0
                a[dl, dl] += sc.a00 - sc.a11
                a[dl, drp] += sc.a01
                a[dl, dlm] += -sc.a10
                b[dl] += sc.g1 * f[i - 1] - sc.g0 * f[i]

    # node equations
    for node in graph.nodes:
        d = node_dof[node.id]
        if node.id in port_values:
            a[d, :] = 0.0
            a[d, d] = 1.0
            b[d] = port_values[node.id]
            continue
        # Kirchhoff: sum_e D_e * away-derivative = 0
        for eid in graph.incident(node.id):
            e = graph.edge(eid)
            sc = schemes[eid]
            grid = grids[eid]
            n = len(grid) - 1
            dofs = edge_dofs[eid]
            f = rhs_cells[eid]
            if e.a == node.id:
                a[d, dofs[0]] += sc.D * sc.a00
                a[d, dofs[1]] += sc.D * sc.a01
                b[d] += -sc.D * sc.g0 * f[0]
            else:
                a[d, dofs[-1]] += -sc.D * sc.a11
                a[d, dofs[-2]] += -sc.D * sc.a10
                b[d] += sc.D * sc.g1 * f[-1]

    try:
        x = spla.spsolve(a.tocsc(), b)
    except RuntimeError as exc:
        raise SingularSystem(str(exc)) from exc
    if not np.all(np.isfinite(x)):
        raise SingularSystem("1D network solve produced non-finite values")

    out = {}
    for e in graph.edges:
        dofs = edge_dofs[e.id]
        n = len(grids[e.id]) - 1
        jumps_here = sorted(i for (eid, i) in value_jumps if eid == e.id)
        vals = np.empty(n + 1)
        p = 0
        for i in range(n + 1):
            vals[i] = x[dofs[p]]
            if i in jumps_here and 0 < i < n:
                p += 1
                vals[i] = x[dofs[p]]  # store the right-side value at the jump point
            p += 1
        out[e.id] = vals
    return out


def solve_leading(graph, flow, params, n_per_edge=512, value_jumps=None):
    """Leading-order mean concentration on the network (order j=0).

    ``flow`` supplies the per-edge flux (mean velocity = flux / eps); ports
    take their prescribed q_t; interior nodes get value continuity and the
    Kirchhoff balance; stenosis markers are transparent at this order.
    """
    grids = {}
    schemes = {}
    rhs = {}
    for e in graph.edges:
        length = graph.length(e)
        grids[e.id] = np.linspace(0.0, length, n_per_edge + 1)
        d = params.kappa * e.theta
        v = flow.flux[e.id] / graph.epsilon
        schemes[e.id] = EdgeScheme(D=d, v=v, r=-2.0 * params.beta, h=length / n_per_edge)
        source = params.sources.get(e.id) if params.sources else None
        f = None
        if source is not None:
            f = lambda s, th=e.theta, g=source: th * np.asarray(g(s), dtype=float)
        rhs[e.id] = _edge_rhs_cells(grids[e.id], f)
    port_values = {n.id: n.q for n in graph.ports()}
    values = _solve_network(graph, schemes, grids, rhs, port_values, value_jumps)
    return Edge1DSolution(
        graph=graph,
        params=params,
        flow=flow,
        grids=grids,
        orders={0: values},
        schemes=schemes,
        rhs_cells={0: rhs},
    )


# --------------------------------------------------------------------------
# transverse correctors
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class TransversePolynomial:
    """Zero-mean transverse profile ctilde_j as polynomials in xi2 per grid point.

    Coefficient arrays have shape (n+1, 2j+1): the structural degree bound 2j
    of the recursion (coefficients above the actually realized degree are
    exactly zero).
    """

    order: int
    coefs: dict           # edge_id -> (n+1, 2j+1)

    @property
    def degree(self):
        return 2 * self.order

    def eval_xi(self, edge_id, xi2):
        """Values at transverse coordinate xi2 for every grid point."""
        c = self.coefs[edge_id]
        xi2 = float(xi2)
        powers = xi2 ** np.arange(c.shape[1])
        return c @ powers

    def mean(self, edge_id):
        """Transverse mean over xi2 in (-1/2, 1/2) per grid point (exact)."""
        c = self.coefs[edge_id]
        p = np.arange(c.shape[1])
        w = np.where(p % 2 == 0, 1.0 / ((p + 1) * 2.0**p), 0.0)
        return c @ w


def _poly_mean_weights(ncoef):
    p = np.arange(ncoef)
    return np.where(p % 2 == 0, 1.0 / ((p + 1) * 2.0**p), 0.0)


def _axial_derivative(vals, h, order=1):
    """4th-order finite differences along axis 0 with one-sided closures."""
    vals = np.asarray(vals, dtype=float)
    out = np.empty_like(vals)
    n = vals.shape[0]
    if order == 1:
        if n < 7:
            return np.gradient(vals, h, axis=0)
        out[2:-2] = (vals[:-4] - 8 * vals[1:-3] + 8 * vals[3:-1] - vals[4:]) / (12 * h)
        # 4th-order one-sided
        c = np.array([-25.0, 48.0, -36.0, 16.0, -3.0]) / (12 * h)
        for i in (0, 1):
            out[i] = sum(cc * vals[i + k] for k, cc in enumerate(c))
        for i in (n - 2, n - 1):
            out[i] = -sum(cc * vals[i - k] for k, cc in enumerate(c))
        return out
    if order == 2:
        if n < 7:
            return np.gradient(np.gradient(vals, h, axis=0), h, axis=0)
        out[2:-2] = (
            -vals[:-4] + 16 * vals[1:-3] - 30 * vals[2:-2] + 16 * vals[3:-1] - vals[4:]
        ) / (12 * h * h)
        c = np.array([45.0, -154.0, 214.0, -156.0, 61.0, -10.0]) / (12 * h * h)
        for i in (0, 1):
            out[i] = sum(cc * vals[i + k] for k, cc in enumerate(c))
        for i in (n - 2, n - 1):
            out[i] = sum(cc * vals[i - k] for k, cc in enumerate(c))
        return out
    raise ValueError("order must be 1 or 2")


def corrector_recursion(leading, params, k, tol=1e-8):
    """Transverse correctors ctilde_j and mean corrections cbar_j for j <= k.

    ctilde_0 = ctilde_1 = 0 identically.  For j >= 2 the profile solves the
    transverse two-point problem by double integration in xi2 with the wall
    Neumann data beta*c_{j-2} and exact zero mean; the corresponding cbar_j
    solves the 1D network problem whose right-hand side collects the profile's
    convective moment and wall traces.  Returns (correctors, solution) where
    ``solution`` is ``leading`` extended with orders 1..k.
    """
    if k > MAX_ORDER:
        raise OrderUnsupported(f"expansion order k={k} > {MAX_ORDER}")
    graph = leading.graph
    flow = leading.flow
    kappa, beta = params.kappa, params.beta

    correctors = {0: _zero_corrector(leading, 0), 1: _zero_corrector(leading, 1)}

    for j in range(1, k + 1):
        if j >= 2:
            correctors[j] = _solve_ctilde(leading, correctors[j - 2], params, j, tol)
        # right-hand side of the cbar_j network problem
        rhs = {}
        for e in graph.edges:
            grid = leading.grids[e.id]
            h = grid[1] - grid[0]
            theta = e.theta
            ct = correctors[j]
            coef = ct.coefs[e.id]
            if j >= 2 and np.any(coef):
                dcoef = _axial_derivative(coef, h)
                vpoly = velocity_poly_xi(theta, flow.amplitude[e.id])
                conv = _poly_product_mean(vpoly, dcoef)
                top = ct.eval_xi(e.id, 0.5)
                bot = ct.eval_xi(e.id, -0.5)
                fvals = -theta * conv + beta * (top + bot)
            else:
                fvals = np.zeros(len(grid))
            rhs[e.id] = 0.5 * (fvals[:-1] + fvals[1:])
        ports_zero = {n.id: 0.0 for n in graph.ports()}
        values = _solve_network(graph, leading.schemes, leading.grids, rhs, ports_zero)
        leading.orders[j] = values
        leading.rhs_cells[j] = rhs
    return correctors, leading


def _zero_corrector(leading, j):
    coefs = {
        eid: np.zeros((len(grid), 2 * j + 1)) for eid, grid in leading.grids.items()
    }
    return TransversePolynomial(order=j, coefs=coefs)


def _poly_product_mean(vpoly, coef):
    """Transverse mean of V(xi2) * P(xi2) per grid point.

    ``vpoly`` is a fixed polynomial (len 3), ``coef`` per-point coefficients.
    """
    n, nc = coef.shape
    prod = np.zeros((n, nc + len(vpoly) - 1))
    for a, va in enumerate(vpoly):
        if va != 0.0:
            prod[:, a: a + nc] += va * coef
    return prod @ _poly_mean_weights(prod.shape[1])


def _solve_ctilde(leading, c_prev, params, j, tol):
    """Double integration of the transverse problem for ctilde_j (j >= 2)."""
    graph = leading.graph
    flow = leading.flow
    kappa, beta = params.kappa, params.beta
    coefs = {}
    for e in graph.edges:
        grid = leading.grids[e.id]
        h = grid[1] - grid[0]
        theta = e.theta
        n = len(grid)
        cbar_prev = leading.orders[j - 2][e.id]
        prev_coefs = c_prev.coefs[e.id].copy()
        ncoef_prev = prev_coefs.shape[1]
        # assemble c_{j-2} = cbar + ctilde as coefficient array
        full_prev = prev_coefs.copy()
        full_prev[:, 0] += cbar_prev

        d1 = _axial_derivative(full_prev, h)
        d2 = _axial_derivative(full_prev, h, order=2)
        vpoly = velocity_poly_xi(theta, flow.amplitude[e.id])

        # rhs(x1, xi2) = -kappa d2 c_{j-2} + V(xi2) d1 c_{j-2} - g delta_{j2}
        nrhs = ncoef_prev + len(vpoly) - 1
        rhs = np.zeros((n, nrhs))
        rhs[:, :ncoef_prev] -= kappa * d2
        for a, va in enumerate(vpoly):
            if va != 0.0:
                rhs[:, a: a + ncoef_prev] += va * d1
        if j == 2 and params.sources and e.id in params.sources:
            rhs[:, 0] -= e.theta ** 0 * np.asarray(params.sources[e.id](grid), dtype=float)

        # (kappa/theta^2) d2/dxi2^2 ctilde = rhs  -> integrate twice
        scale = theta**2 / kappa
        i1 = rhs / (np.arange(nrhs) + 1.0)                     # one power up
        i2 = i1 / (np.arange(nrhs) + 2.0)                      # two powers up
        ncoef = 2 * j + 1
        ct = np.zeros((n, max(ncoef, nrhs + 2)))
        ct[:, 2: nrhs + 2] = scale * i2

        # Neumann at +1/2: (kappa/theta) d(ctilde)/dxi2 = beta c_{j-2}(+1/2)
        top_prev = full_prev @ (0.5 ** np.arange(ncoef_prev))
        dct = np.zeros((n, nrhs + 1))
        dct[:, 1:] = scale * i1
        dtop = dct @ (0.5 ** np.arange(nrhs + 1))
        lin = (theta / kappa) * beta * top_prev - dtop
        ct[:, 1] += lin

        # solvability: the bottom Neumann condition must hold up to tol
        bot_prev = full_prev @ ((-0.5) ** np.arange(ncoef_prev))
        dbot = np.zeros((n, nrhs + 1))
        dbot[:, 1:] = scale * i1
        dbot_val = dbot @ ((-0.5) ** np.arange(nrhs + 1)) + lin
        residual = -(kappa / theta) * dbot_val - beta * bot_prev
        scale_res = max(1.0, float(np.max(np.abs(beta * bot_prev))), float(np.max(np.abs(dbot_val))))
        if float(np.max(np.abs(residual))) > tol * scale_res:
            raise SolvabilityViolation(
                f"transverse Neumann compatibility fails on edge {e.id} at order {j}: "
                f"max residual {float(np.max(np.abs(residual))):.3e}"
            )

        # exact zero mean
        w = _poly_mean_weights(ct.shape[1])
        ct[:, 0] -= (ct @ w) / w[0]
        coefs[e.id] = ct[:, :ncoef] if ct.shape[1] >= ncoef else np.pad(
            ct, ((0, 0), (0, ncoef - ct.shape[1]))
        )
        if ct.shape[1] > ncoef:
            # degree bound of the recursion: everything above 2j must vanish
            extra = ct[:, ncoef:]
            if np.max(np.abs(extra)) > 1e-12 * max(1.0, np.max(np.abs(ct))):
                raise SolvabilityViolation(
                    f"profile degree exceeds the structural bound 2j on edge {e.id}"
                )
    return TransversePolynomial(order=j, coefs=coefs)


# --------------------------------------------------------------------------
# wall corrector
# --------------------------------------------------------------------------

_P_PLUS = np.array([-0.125, -0.25, 0.5, 1.0])    # (xi-1/2)(xi+1/2)^2
_P_MINUS = np.array([0.125, -0.25, -0.5, 1.0])   # (xi-1/2)^2(xi+1/2)


def wall_corrector(c_top, c_bot, kappa, beta, theta=1.0):
    """Cubic profile cancelling the order-k wall Robin defect.

    Given wall traces c_k(x1, +1/2) and c_k(x1, -1/2) returns coefficients
    (n, 4) of  (theta/kappa) * beta * [c_top * Pp(xi2) - c_bot * Pm(xi2)],
    which satisfies +-(kappa/theta) d/dxi2 = beta * c_k at xi2 = +-1/2 exactly.
    """
    c_top = np.atleast_1d(np.asarray(c_top, dtype=float))
    c_bot = np.atleast_1d(np.asarray(c_bot, dtype=float))
    out = (theta / kappa) * beta * (
        np.outer(c_top, _P_PLUS) - np.outer(c_bot, _P_MINUS)
    )
    return out


def wall_corrector_identity_residual(coef, c_top, c_bot, kappa, beta, theta=1.0):
    """Defect of the wall Neumann identity at xi2 = +-1/2 (0 up to roundoff)."""
    dcoef = coef[:, 1:] * np.arange(1, coef.shape[1])
    half = 0.5 ** np.arange(dcoef.shape[1])
    mhalf = (-0.5) ** np.arange(dcoef.shape[1])
    top = (kappa / theta) * (dcoef @ half) - beta * np.asarray(c_top, dtype=float)
    bot = -(kappa / theta) * (dcoef @ mhalf) - beta * np.asarray(c_bot, dtype=float)
    return float(np.max(np.abs(top))), float(np.max(np.abs(bot)))


def wall_corrector_symbolic_identity():
    """Exact-arithmetic proof of the wall Neumann identity of the corrector.

    In rational arithmetic the two cubic basis polynomials satisfy
    d/dxi2 Pp = (1, 0) and d/dxi2 Pm = (0, 1) at xi2 = (+1/2, -1/2); by
    linearity the assembled corrector then matches +-(kappa/theta) d/dxi2 =
    beta c_k exactly.  Returns True only if all four values are exact.
    """
    from fractions import Fraction as F

    p_plus = [F(-1, 8), F(-1, 4), F(1, 2), F(1)]
    p_minus = [F(1, 8), F(-1, 4), F(-1, 2), F(1)]

    def deriv_at(poly, x):
        return sum(k * c * x ** (k - 1) for k, c in enumerate(poly) if k)

    half = F(1, 2)
    return (
        deriv_at(p_plus, half) == 1
        and deriv_at(p_plus, -half) == 0
        and deriv_at(p_minus, half) == 0
        and deriv_at(p_minus, -half) == 1
    )


# --------------------------------------------------------------------------
# ansatz assembly, 2D reconstruction and residuals
# --------------------------------------------------------------------------

@dataclass
class AsymptoticAnsatz:
    """Reconstruction c^(k) = sum_j eps^j (cbar_j + ctilde_j) + eps^(k+2) chat_{k+1}.

    The wall corrector enters with weight eps^(k+2): its scaled normal flux
    then cancels the order-(k+1) wall Robin defect of the truncated expansion
    exactly, leaving only the corrector's own eps^(k+3) self-term.
    """

    k: int
    solution: Edge1DSolution
    correctors: dict                 # j -> TransversePolynomial
    wall_coefs: dict                 # edge_id -> (n+1, 4) chat_{k+1} coefficients
    layers: tuple = ()               # optional boundary-layer patches

    @property
    def graph(self):
        return self.solution.graph

    @property
    def epsilon(self):
        return self.graph.epsilon


def build_ansatz(solution, correctors, params, layers=(), include_wall_corrector=True):
    """Assemble the ansatz of order k = max computed order, with wall corrector."""
    k = solution.max_order
    graph = solution.graph
    wall_coefs = {}
    for e in graph.edges:
        grid = solution.grids[e.id]
        if include_wall_corrector:
            ck = correctors[k]
            top = solution.orders[k][e.id] + ck.eval_xi(e.id, 0.5)
            bot = solution.orders[k][e.id] + ck.eval_xi(e.id, -0.5)
            wall_coefs[e.id] = wall_corrector(top, bot, params.kappa, params.beta, e.theta)
        else:
            wall_coefs[e.id] = np.zeros((len(grid), 4))
    return AsymptoticAnsatz(
        k=k, solution=solution, correctors=correctors, wall_coefs=wall_coefs, layers=tuple(layers)
    )


def evaluate_ansatz(ansatz, domain, points):
    """Pointwise reconstruction over the tube domain.

    Channel points use the per-edge regular expansion; junction-polygon points
    continue the nodal value (plus any supplied layer patches); points outside
    the domain raise UncoveredPoint.
    """
    from tubenet.errors import UncoveredPoint

    points = np.atleast_2d(np.asarray(points, dtype=float))
    sol = ansatz.solution
    graph = ansatz.graph
    eps = ansatz.epsilon
    out = np.full(len(points), np.nan)
    covered = np.zeros(len(points), dtype=bool)

    for e in graph.edges:
        ch = domain.channels[e.id]
        s, t = ch.local(points)
        inside = (
            (s >= ch.s0 - 1e-12)
            & (s <= ch.s1 + 1e-12)
            & (np.abs(t) <= 0.5 * ch.width * (1.0 + 1e-12))
        ) & ~covered
        if not np.any(inside):
            continue
        si = s[inside]
        xi2 = t[inside] / ch.width
        grid = sol.grids[e.id]
        vals = np.zeros(len(si))
        for j in range(ansatz.k + 1):
            term = np.interp(si, grid, sol.orders[j][e.id])
            coef = ansatz.correctors[j].coefs[e.id]
            if np.any(coef[:, 1:]):
                for p in range(coef.shape[1]):
                    cp = np.interp(si, grid, coef[:, p])
                    term = term + cp * xi2**p if p else term + cp
            vals += eps**j * term
        wc = ansatz.wall_coefs[e.id]
        chat = np.zeros(len(si))
        for p in range(4):
            chat += np.interp(si, grid, wc[:, p]) * xi2**p
        vals += eps ** (ansatz.k + 2) * chat
        out[inside] = vals
        covered[inside] = True

    for nid, junc in domain.junctions.items():
        from tubenet.stokes2d import _in_polygon

        inside = _in_polygon(points, junc.polygon) & ~covered
        if not np.any(inside):
            continue
        val = sum(
            eps**j * sol.node_value(nid, j) for j in range(ansatz.k + 1)
        )
        out[inside] = val
        covered[inside] = True

    for layer in ansatz.layers:
        out[covered] += layer(points[covered])

    if not np.all(covered):
        bad = points[~covered][0]
        raise UncoveredPoint(f"point ({bad[0]:.6g}, {bad[1]:.6g}) not covered by the ansatz")
    return out


def reconstruct_2d(ansatz, mesh, domain):
    """Sample the ansatz at the P2 nodes of a mesh."""
    from tubenet.femcore.fields import Field

    vals = evaluate_ansatz(ansatz, domain, mesh.p2_coordinates())
    return Field(mesh, "P2", vals)


def ansatz_residual(ansatz, domain, params, n_xi=8):
    """Interior PDE residual and wall Robin defect of the reconstruction.

    Interior: L2 norm of -div(kappa grad c) + V . grad c - g over the channel
    rectangles (transverse derivatives exact from the polynomials, axial by
    4th-order differences).  Walls: sup of the Robin defect.
    """
    graph = ansatz.graph
    sol = ansatz.solution
    eps = ansatz.epsilon
    kappa, beta = params.kappa, params.beta
    nodes, wq = np.polynomial.legendre.leggauss(n_xi)
    xi_pts = 0.5 * nodes  # in (-1/2, 1/2)

    total = 0.0
    wall_sup = 0.0
    for e in graph.edges:
        ch = domain.channels[e.id]
        grid = sol.grids[e.id]
        h = grid[1] - grid[0]
        theta = e.theta
        vpoly = velocity_poly_xi(theta, sol.flow.amplitude[e.id])
        # total coefficient array of the reconstruction
        kmax = ansatz.k
        ncoef = max(2 * kmax + 1, 4)
        coef = np.zeros((len(grid), ncoef))
        for j in range(kmax + 1):
            cj = ansatz.correctors[j].coefs[e.id]
            coef[:, : cj.shape[1]] += eps**j * cj
            coef[:, 0] += eps**j * sol.orders[j][e.id]
        coef[:, :4] += eps ** (kmax + 2) * ansatz.wall_coefs[e.id]

        d1 = _axial_derivative(coef, h)
        d2 = _axial_derivative(coef, h, order=2)
        # transverse second derivative: (1/(theta*eps)^2) d^2/dxi2^2
        p = np.arange(ncoef)
        dxi2 = coef[:, 2:] * (p[2:] * (p[2:] - 1.0))
        gvals = np.zeros(len(grid))
        if params.sources and e.id in params.sources:
            gvals = np.asarray(params.sources[e.id](grid), dtype=float)

        mask = (grid >= ch.s0) & (grid <= ch.s1)
        res2 = 0.0
        for xi, w in zip(xi_pts, wq):
            pw = xi ** np.arange(ncoef)
            val_d2 = d2 @ pw
            val_dxi2 = dxi2 @ (xi ** np.arange(ncoef - 2)) / (theta * eps) ** 2
            val_d1 = d1 @ pw
            vxi = vpoly @ (xi ** np.arange(3))
            r = -kappa * (val_d2 + val_dxi2) + vxi * val_d1 - gvals
            res2 += 0.5 * w * np.trapezoid(r[mask] ** 2, grid[mask]) * (theta * eps)
        total += res2

        dcoef = coef[:, 1:] * np.arange(1, ncoef)
        top = (kappa / theta) * (dcoef @ (0.5 ** np.arange(ncoef - 1))) / eps - eps * beta * (
            coef @ (0.5 ** np.arange(ncoef))
        )
        bot = -(kappa / theta) * (dcoef @ ((-0.5) ** np.arange(ncoef - 1))) / eps - eps * beta * (
            coef @ ((-0.5) ** np.arange(ncoef))
        )
        wall_sup = max(wall_sup, float(np.max(np.abs(top[mask]))), float(np.max(np.abs(bot[mask]))))
    return {"interior_l2": math.sqrt(total), "wall_robin_sup": wall_sup}
