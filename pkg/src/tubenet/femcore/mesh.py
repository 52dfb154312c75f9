"""Triangle meshes: storage, construction helpers, quality audit, point location.

Meshes are built deterministically (no randomized point placement); channels
use mapped structured grids and junction polygons use radial layers, so
identical input always yields bit-identical vertex coordinates.
"""

from dataclasses import dataclass, field

import numpy as np

from tubenet.errors import MeshQualityFailure, UncoveredPoint

MIN_ANGLE_DEG = 20.0


@dataclass(frozen=True)
class Mesh:
    """Conforming triangulation with tagged boundary edges and a P2 node table.

    ``boundary_edges[i] = (v0, v1)`` is oriented with the domain on the left,
    so the outward normal is the right-hand normal of v0 -> v1.
    """

    vertices: np.ndarray        # (nv, 2)
    triangles: np.ndarray       # (nt, 3) CCW
    boundary_edges: np.ndarray  # (nb, 2)
    boundary_tags: tuple        # (nb,) strings
    h: float

    edges: np.ndarray = field(init=False, repr=False)       # (ne, 2) sorted pairs
    tri_edges: np.ndarray = field(init=False, repr=False)   # (nt, 3) edge ids, local edge k=(k,k+1)
    boundary_edge_ids: np.ndarray = field(init=False, repr=False)  # (nb,) into edges

    def __post_init__(self):
        tris = np.asarray(self.triangles, dtype=np.int64)
        raw = np.concatenate(
            [tris[:, [0, 1]], tris[:, [1, 2]], tris[:, [2, 0]]], axis=0
        )
        key = np.sort(raw, axis=1)
        edges, inverse = np.unique(key, axis=0, return_inverse=True)
        tri_edges = inverse.reshape(3, -1).T
        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "tri_edges", np.ascontiguousarray(tri_edges))
        if len(self.boundary_edges):
            bkey = np.sort(np.asarray(self.boundary_edges, dtype=np.int64), axis=1)
            lut = {tuple(e): i for i, e in enumerate(edges)}
            bids = np.array([lut[tuple(e)] for e in bkey], dtype=np.int64)
        else:
            bids = np.empty(0, dtype=np.int64)
        object.__setattr__(self, "boundary_edge_ids", bids)

    @property
    def n_vertices(self):
        return len(self.vertices)

    @property
    def n_p2(self):
        return len(self.vertices) + len(self.edges)

    @property
    def n_triangles(self):
        return len(self.triangles)

    def p2_coordinates(self):
        """Coordinates of all P2 nodes (vertices then edge midpoints)."""
        mids = 0.5 * (self.vertices[self.edges[:, 0]] + self.vertices[self.edges[:, 1]])
        return np.vstack([self.vertices, mids])

    def tri_p2_dofs(self):
        """(nt, 6) global P2 dof ids per triangle, local order of elements.py."""
        return np.hstack([self.triangles, self.n_vertices + self.tri_edges])

    def areas(self):
        v = self.vertices
        t = self.triangles
        d1 = v[t[:, 1]] - v[t[:, 0]]
        d2 = v[t[:, 2]] - v[t[:, 0]]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    def min_angle_deg(self):
        v = self.vertices
        t = self.triangles
        worst = 180.0
        for k in range(3):
            a = v[t[:, (k + 1) % 3]] - v[t[:, k]]
            b = v[t[:, (k + 2) % 3]] - v[t[:, k]]
            cosang = np.einsum("ij,ij->i", a, b) / (
                np.linalg.norm(a, axis=1) * np.linalg.norm(b, axis=1)
            )
            ang = np.degrees(np.arccos(np.clip(cosang, -1.0, 1.0)))
            worst = min(worst, ang.min())
        return worst

    def check_quality(self, min_angle=MIN_ANGLE_DEG):
        if self.n_triangles == 0:
            raise MeshQualityFailure(0.0, "(empty mesh)")
        areas = self.areas()
        if areas.min() <= 0.0:
            raise MeshQualityFailure(0.0, "(inverted or degenerate triangle)")
        worst = self.min_angle_deg()
        if worst < min_angle:
            raise MeshQualityFailure(worst)
        return worst

    def boundary_ids_for(self, tag):
        ids = [i for i, t in enumerate(self.boundary_tags) if t == tag]
        return np.array(ids, dtype=np.int64)

    def tags(self):
        return sorted(set(self.boundary_tags))

    def boundary_p2_dofs(self, tag_predicate):
        """P2 dof ids lying on boundary edges whose tag satisfies the predicate."""
        dofs = set()
        for i, t in enumerate(self.boundary_tags):
            if tag_predicate(t):
                v0, v1 = self.boundary_edges[i]
                dofs.add(int(v0))
                dofs.add(int(v1))
                dofs.add(int(self.n_vertices + self.boundary_edge_ids[i]))
        return np.array(sorted(dofs), dtype=np.int64)

    def locator(self):
        loc = getattr(self, "_locator", None)
        if loc is None:
            loc = _Locator(self)
            object.__setattr__(self, "_locator", loc)
        return loc


class _Locator:
    """Uniform background grid accelerating point-in-triangle queries."""

    def __init__(self, mesh):
        self.mesh = mesh
        v = mesh.vertices
        t = mesh.triangles
        self.lo = v.min(axis=0)
        hi = v.max(axis=0)
        span = np.maximum(hi - self.lo, 1e-300)
        ncell = max(1, int(np.sqrt(len(t))))
        self.nx = max(1, min(ncell, int(np.ceil(span[0] / max(mesh.h, 1e-300)))))
        self.ny = max(1, min(ncell, int(np.ceil(span[1] / max(mesh.h, 1e-300)))))
        self.dx = span[0] / self.nx
        self.dy = span[1] / self.ny
        self.buckets = [[] for _ in range(self.nx * self.ny)]
        tv = v[t]
        tmin = tv.min(axis=1)
        tmax = tv.max(axis=1)
        for it in range(len(t)):
            i0, j0 = self._cell(tmin[it])
            i1, j1 = self._cell(tmax[it])
            for i in range(i0, i1 + 1):
                for j in range(j0, j1 + 1):
                    self.buckets[j * self.nx + i].append(it)

    def _cell(self, p):
        i = int(np.clip((p[0] - self.lo[0]) / self.dx, 0, self.nx - 1))
        j = int(np.clip((p[1] - self.lo[1]) / self.dy, 0, self.ny - 1))
        return i, j

    def locate(self, points, tol=1e-10):
        """Return (tri_index, barycentric) per point; tri_index -1 if outside."""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        v = self.mesh.vertices
        t = self.mesh.triangles
        out_tri = np.full(len(points), -1, dtype=np.int64)
        out_lam = np.zeros((len(points), 3))
        for ip, p in enumerate(points):
            i, j = self._cell(p)
            best = None
            for it in self.buckets[j * self.nx + i]:
                a, b, c = v[t[it]]
                m = np.array([[b[0] - a[0], c[0] - a[0]], [b[1] - a[1], c[1] - a[1]]])
                det = m[0, 0] * m[1, 1] - m[0, 1] * m[1, 0]
                rh = p - a
                l1 = (m[1, 1] * rh[0] - m[0, 1] * rh[1]) / det
                l2 = (-m[1, 0] * rh[0] + m[0, 0] * rh[1]) / det
                l0 = 1.0 - l1 - l2
                worst = min(l0, l1, l2)
                if worst >= -tol:
                    if best is None or worst > best[0]:
                        best = (worst, it, (l0, l1, l2))
                        if worst >= 0.0:
                            break
            if best is not None:
                out_tri[ip] = best[1]
                out_lam[ip] = np.clip(best[2], 0.0, 1.0)
                out_lam[ip] /= out_lam[ip].sum()
        return out_tri, out_lam

    def locate_strict(self, points, tol=1e-10):
        tri, lam = self.locate(points, tol)
        if np.any(tri < 0):
            bad = np.atleast_2d(points)[np.where(tri < 0)[0][0]]
            raise UncoveredPoint(f"point ({bad[0]:.6g}, {bad[1]:.6g}) is outside the mesh")
        return tri, lam


class MeshBuilder:
    """Incremental mesh assembly with shared-vertex bookkeeping."""

    def __init__(self, h):
        self.h = float(h)
        self._xs = []
        self._ys = []
        self.triangles = []
        self.boundary = []
        self.tags = []

    def add_vertex(self, x, y):
        self._xs.append(float(x))
        self._ys.append(float(y))
        return len(self._xs) - 1

    def add_vertices(self, pts):
        return [self.add_vertex(p[0], p[1]) for p in pts]

    def add_triangle(self, a, b, c):
        self.triangles.append((a, b, c))

    def add_boundary(self, v0, v1, tag):
        self.boundary.append((v0, v1))
        self.tags.append(tag)

    def vertex(self, i):
        return np.array([self._xs[i], self._ys[i]])

    def add_structured_channel(
        self,
        origin,
        direction,
        width,
        s0,
        s1,
        ny,
        stations=(),
        face_in=None,
        face_out=None,
        wall_tag="wall",
        tag_in=None,
        tag_out=None,
    ):
        """Mapped structured grid on the rectangle [s0,s1] x [-w/2,w/2].

        Local frame: axis = ``direction`` (unit), transverse = left normal.
        ``stations`` are axial coordinates forced onto grid lines.  Face index
        arrays (ordered from -w/2 to +w/2) may be supplied for conformity with
        neighbouring blocks; tags are applied only to faces created here.
        Returns (face_in, face_out) index arrays.
        """
        origin = np.asarray(origin, dtype=float)
        d = np.asarray(direction, dtype=float)
        d = d / np.linalg.norm(d)
        n = np.array([-d[1], d[0]])
        tvals = np.linspace(-0.5 * width, 0.5 * width, ny + 1)

        stations = sorted({float(s0), float(s1), *map(float, stations)})
        stations = [s for s in stations if s0 - 1e-14 <= s <= s1 + 1e-14]
        svals = [stations[0]]
        for a, b in zip(stations[:-1], stations[1:]):
            nseg = max(1, int(np.ceil((b - a) / self.h - 1e-9)))
            svals.extend(a + (b - a) * (k + 1) / nseg for k in range(nseg))
        svals = np.array(svals)
        nx = len(svals) - 1

        grid = np.empty((nx + 1, ny + 1), dtype=np.int64)
        for j, s in enumerate(svals):
            if j == 0 and face_in is not None:
                grid[0] = face_in
                continue
            if j == nx and face_out is not None:
                grid[nx] = face_out
                continue
            base = origin + s * d
            grid[j] = [self.add_vertex(*(base + t * n)) for t in tvals]

        for j in range(nx):
            for i in range(ny):
                v00, v01 = grid[j, i], grid[j, i + 1]
                v10, v11 = grid[j + 1, i], grid[j + 1, i + 1]
                self.add_triangle(v00, v10, v11)
                self.add_triangle(v00, v11, v01)

        for j in range(nx):  # bottom wall: interior on the left travelling +axial
            self.add_boundary(grid[j, 0], grid[j + 1, 0], wall_tag)
        for j in range(nx):  # top wall: travel -axial
            self.add_boundary(grid[j + 1, ny], grid[j, ny], wall_tag)
        if face_in is None and tag_in is not None:
            for i in range(ny):  # start face: outward normal -d => travel -n
                self.add_boundary(grid[0, i + 1], grid[0, i], tag_in)
        if face_out is None and tag_out is not None:
            for i in range(ny):  # end face: outward normal +d => travel +n
                self.add_boundary(grid[nx, i], grid[nx, i + 1], tag_out)
        return grid[0].copy(), grid[nx].copy()

    def add_polyline_wall(self, p_from, p_to, tag="wall"):
        """Subdivided straight boundary wall from vertex p_from to p_to.

        Interior must lie on the left of the travel direction. Returns all
        vertex ids along the segment including endpoints.
        """
        a = self.vertex(p_from)
        b = self.vertex(p_to)
        nseg = max(1, int(np.ceil(np.linalg.norm(b - a) / self.h - 1e-9)))
        ids = [p_from]
        for k in range(1, nseg):
            t = k / nseg
            ids.append(self.add_vertex(*((1.0 - t) * a + t * b)))
        ids.append(p_to)
        for u, v in zip(ids[:-1], ids[1:]):
            self.add_boundary(u, v, tag)
        return ids

    def add_radial_patch(self, center, ring):
        """Fill a star-shaped polygon (CCW vertex-id ring) with radial layers.

        Interior rings are rescaled copies of the boundary with a point count
        that shrinks with the radius, so triangles stay near-isotropic all the
        way to the center.
        """
        c = np.asarray(center, dtype=float)
        pts = np.array([self.vertex(i) for i in ring])
        closed = np.vstack([pts, pts[:1]])
        seg = np.linalg.norm(np.diff(closed, axis=0), axis=1)
        total = seg.sum()
        params = np.concatenate([[0.0], np.cumsum(seg[:-1])]) / total
        rbar = np.linalg.norm(pts - c, axis=1).mean()
        m = max(1, int(round(rbar / self.h)))

        def boundary_point(u):
            k = int(np.searchsorted(params, u, side="right")) - 1
            p0 = pts[k]
            p1 = pts[(k + 1) % len(pts)]
            t = (u - params[k]) * total / seg[k]
            return p0 + t * (p1 - p0)

        # polygon corners must stay sampled on every ring, else the bands
        # spanning a deep corner become radially stretched
        nring = len(pts)
        corners = []
        for i in range(nring):
            a = pts[i] - pts[i - 1]
            b = pts[(i + 1) % nring] - pts[i]
            turn = abs(np.arctan2(a[0] * b[1] - a[1] * b[0], a @ b))
            if turn > np.radians(20.0):
                corners.append(i)
        if not corners:
            corners = [0]

        def ring_params(f):
            us = []
            for ci, cj in zip(corners, corners[1:] + [corners[0] + nring]):
                u_a = params[ci % nring] + (ci // nring)
                u_b = params[cj % nring] + (cj // nring)
                narc = max(1, int(np.ceil((cj - ci) * f)))
                us.extend(u_a + (u_b - u_a) * j / narc for j in range(narc))
            return np.array(sorted(u % 1.0 for u in us))

        loop_ids = list(ring)
        loop_u = params
        tri_start = len(self.triangles)
        interior = []
        for k in range(1, m):
            f = 1.0 - k / m
            us = ring_params(f)
            if len(us) < 3 or len(us) >= len(loop_ids):
                us = loop_u if len(us) >= len(loop_ids) else us
            if len(us) < 3:
                break
            ids = []
            for u in us:
                rel = boundary_point(u) - c
                r = np.linalg.norm(rel)
                # blend toward a circle as rings shrink so corner rays fade out
                blended = rel * ((1.0 - k / m) + (k / m) * rbar / r)
                ids.append(self.add_vertex(*(c + f * blended)))
            self._zip_loops(loop_ids, loop_u, ids, us)
            loop_ids, loop_u = list(ids), us
            interior.extend(ids)
        cid = self.add_vertex(*c)
        interior.append(cid)
        n = len(loop_ids)
        for i in range(n):
            self.add_triangle(loop_ids[i], loop_ids[(i + 1) % n], cid)
        self._optimize_patch(tri_start, interior)

    def _tri_min_angle(self, tri):
        import math as _m

        xs, ys = self._xs, self._ys
        px = (xs[tri[0]], xs[tri[1]], xs[tri[2]])
        py = (ys[tri[0]], ys[tri[1]], ys[tri[2]])
        worst = _m.pi
        for k in range(3):
            ax = px[(k + 1) % 3] - px[k]
            ay = py[(k + 1) % 3] - py[k]
            bx = px[(k + 2) % 3] - px[k]
            by = py[(k + 2) % 3] - py[k]
            na = _m.hypot(ax, ay)
            nb = _m.hypot(bx, by)
            if na == 0.0 or nb == 0.0:
                return 0.0
            cosv = (ax * bx + ay * by) / (na * nb)
            worst = min(worst, _m.acos(max(-1.0, min(1.0, cosv))))
        return worst

    def _tri_area(self, tri):
        ax, ay = self._xs[tri[0]], self._ys[tri[0]]
        bx, by = self._xs[tri[1]], self._ys[tri[1]]
        cx, cy = self._xs[tri[2]], self._ys[tri[2]]
        return 0.5 * ((bx - ax) * (cy - ay) - (by - ay) * (cx - ax))

    def _flip_pass(self, tri_start):
        """One Lawson sweep over patch-interior edges, flipping when the
        min angle of the triangle pair improves."""
        patch = range(tri_start, len(self.triangles))
        edge_map = {}
        for it in patch:
            a, b, c = self.triangles[it]
            for u, v in ((a, b), (b, c), (c, a)):
                edge_map.setdefault((min(u, v), max(u, v)), []).append(it)
        flipped = 0
        touched = set()
        for edge, tris in edge_map.items():
            if len(tris) != 2:
                continue
            i1, i2 = tris
            if i1 in touched or i2 in touched:
                continue  # edge map is stale for triangles flipped this pass
            t1, t2 = self.triangles[i1], self.triangles[i2]
            if set(t1) & set(t2) != set(edge):
                continue
            c1 = next(x for x in t1 if x not in edge)
            c2 = next(x for x in t2 if x not in edge)
            if c1 == c2:
                continue
            a, b = edge
            new1 = (a, c2, c1) if self._tri_area((a, c2, c1)) > 0 else (a, c1, c2)
            new2 = (b, c1, c2) if self._tri_area((b, c1, c2)) > 0 else (b, c2, c1)
            if self._tri_area(new1) <= 0 or self._tri_area(new2) <= 0:
                continue
            old_q = min(self._tri_min_angle(t1), self._tri_min_angle(t2))
            new_q = min(self._tri_min_angle(new1), self._tri_min_angle(new2))
            if new_q > old_q + 1e-12:
                self.triangles[i1] = new1
                self.triangles[i2] = new2
                touched.update((i1, i2))
                flipped += 1
        return flipped

    def _optimize_patch(self, tri_start, interior, cycles=4):
        """Alternate Lawson flips and fail-safe Laplacian smoothing in a patch.

        A vertex move is accepted only if it does not lower the worst angle of
        its incident triangles, so smoothing can never invert an element.
        """
        if not interior:
            return
        interior = set(interior)
        for cycle in range(cycles):
            for _ in range(10):
                if self._flip_pass(tri_start) == 0:
                    break
            neighbors = {}
            incident = {}
            for it in range(tri_start, len(self.triangles)):
                tri = self.triangles[it]
                for k, u in enumerate(tri):
                    if u in interior:
                        neighbors.setdefault(u, set()).update(
                            (tri[(k + 1) % 3], tri[(k + 2) % 3])
                        )
                        incident.setdefault(u, []).append(it)
            order = sorted(neighbors)
            for _ in range(10):
                for vid in order:
                    nbs = neighbors[vid]
                    xs = sum(self._xs[n] for n in nbs) / len(nbs)
                    ys = sum(self._ys[n] for n in nbs) / len(nbs)
                    old = (self._xs[vid], self._ys[vid])
                    before = min(self._tri_min_angle(self.triangles[i]) for i in incident[vid])
                    self._xs[vid], self._ys[vid] = xs, ys
                    after = min(self._tri_min_angle(self.triangles[i]) for i in incident[vid])
                    if after < before - 1e-12:
                        self._xs[vid], self._ys[vid] = old
        for _ in range(10):
            if self._flip_pass(tri_start) == 0:
                break

    def _zip_loops(self, outer_ids, outer_u, inner_ids, inner_u):
        """Triangulate the band between two CCW loops aligned at parameter 0."""
        na, nb = len(outer_ids), len(inner_ids)
        ua = np.append(np.asarray(outer_u, dtype=float), 1.0)
        ub = np.append(np.asarray(inner_u, dtype=float), 1.0)
        i = j = 0
        while i < na or j < nb:
            adv_a = i < na and (j >= nb or ua[i + 1] <= ub[j + 1])
            if adv_a:
                self.add_triangle(outer_ids[i], outer_ids[(i + 1) % na], inner_ids[j % nb])
                i += 1
            else:
                self.add_triangle(outer_ids[i % na], inner_ids[(j + 1) % nb], inner_ids[j])
                j += 1

    def build(self, check=True, min_angle=MIN_ANGLE_DEG):
        mesh = Mesh(
            vertices=np.column_stack([self._xs, self._ys]),
            triangles=np.array(self.triangles, dtype=np.int64),
            boundary_edges=np.array(self.boundary, dtype=np.int64).reshape(-1, 2),
            boundary_tags=tuple(self.tags),
            h=self.h,
        )
        if check:
            mesh.check_quality(min_angle)
        return mesh


def structured_rectangle(x0, x1, y0, y1, h, ny=None, tags=("wall", "wall", "end:minus", "end:plus")):
    """Axis-aligned rectangle mesh; tags = (bottom/top walls, left, right)."""
    b = MeshBuilder(h)
    width = y1 - y0
    ny = ny or max(3, int(round(width / h)))
    b.add_structured_channel(
        origin=np.array([0.0, 0.5 * (y0 + y1)]),
        direction=np.array([1.0, 0.0]),
        width=width,
        s0=x0,
        s1=x1,
        ny=ny,
        wall_tag=tags[0],
        tag_in=tags[2],
        tag_out=tags[3],
    )
    return b.build()


_MESH_MAGIC = "tubenet-mesh v1"


def save_mesh(mesh, path):
    """Plain-text mesh export: vertex / triangle / boundary sections."""
    lines = [_MESH_MAGIC, f"vertices {mesh.n_vertices}"]
    lines += [f"{x:.17g} {y:.17g}" for x, y in mesh.vertices]
    lines.append(f"triangles {mesh.n_triangles}")
    lines += [f"{a} {b} {c}" for a, b, c in mesh.triangles]
    lines.append(f"boundary {len(mesh.boundary_edges)}")
    lines += [
        f"{v0} {v1} {tag}"
        for (v0, v1), tag in zip(mesh.boundary_edges, mesh.boundary_tags)
    ]
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")


def load_mesh(path):
    with open(path) as f:
        tokens = f.read().splitlines()
    if tokens[0] != _MESH_MAGIC:
        raise ValueError(f"unsupported mesh format header: {tokens[0]!r}")
    i = 1
    nv = int(tokens[i].split()[1]); i += 1
    verts = np.array([[float(x) for x in tokens[i + k].split()] for k in range(nv)])
    i += nv
    nt = int(tokens[i].split()[1]); i += 1
    tris = np.array([[int(x) for x in tokens[i + k].split()] for k in range(nt)], dtype=np.int64)
    i += nt
    nb = int(tokens[i].split()[1]); i += 1
    bed, tags = [], []
    for k in range(nb):
        v0, v1, tag = tokens[i + k].split(maxsplit=2)
        bed.append((int(v0), int(v1)))
        tags.append(tag)
    hs = np.linalg.norm(verts[tris[:, 1]] - verts[tris[:, 0]], axis=1)
    return Mesh(
        vertices=verts,
        triangles=tris,
        boundary_edges=np.array(bed, dtype=np.int64).reshape(-1, 2),
        boundary_tags=tuple(tags),
        h=float(np.median(hs)),
    )
