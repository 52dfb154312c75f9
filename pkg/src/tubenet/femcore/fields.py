"""Coefficient vectors over P1/P2 spaces with point evaluation and CSV export."""

from dataclasses import dataclass

import numpy as np

from tubenet.femcore.elements import p1_basis, p1_grads, p2_basis, p2_grads

FAMILIES = ("P1", "P2", "P2v")


def n_dofs(mesh, family):
    if family == "P1":
        return mesh.n_vertices
    if family in ("P2", "P2v"):
        return mesh.n_p2
    raise ValueError(f"unknown family {family!r}")


@dataclass(frozen=True)
class Field:
    """A finite-element function: mesh + family + coefficient vector.

    Scalar families store shape (ndof,); "P2v" stores (ndof, 2).
    """

    mesh: object
    family: str
    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "values", vals)
        want = n_dofs(self.mesh, self.family)
        if self.family == "P2v":
            if vals.shape != (want, 2):
                raise ValueError(f"P2v values must have shape ({want}, 2), got {vals.shape}")
        elif vals.shape != (want,):
            raise ValueError(f"{self.family} values must have shape ({want},), got {vals.shape}")

    def _local(self, tri):
        if self.family == "P1":
            return self.values[self.mesh.triangles[tri]]
        dofs = self.mesh.tri_p2_dofs()[tri]
        return self.values[dofs]

    def evaluate(self, points, tol=1e-10):
        """Evaluate at physical points (outside points raise UncoveredPoint)."""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        tri, lam = self.mesh.locator().locate_strict(points, tol)
        ref = lam[:, 1:3]
        basis = p1_basis(ref) if self.family == "P1" else p2_basis(ref)
        local = self._local(tri)
        if self.family == "P2v":
            return np.einsum("pi,pic->pc", basis, local)
        return np.einsum("pi,pi->p", basis, local)

    def gradient(self, points, tol=1e-10):
        """Gradient at physical points; (n,2) for scalars, (n,2,2) for P2v.

        For P2v the result g[p, c, d] = d u_c / d x_d.
        """
        points = np.atleast_2d(np.asarray(points, dtype=float))
        tri, lam = self.mesh.locator().locate_strict(points, tol)
        ref = lam[:, 1:3]
        v = self.mesh.vertices
        t = self.mesh.triangles[tri]
        j11 = v[t[:, 1], 0] - v[t[:, 0], 0]
        j21 = v[t[:, 1], 1] - v[t[:, 0], 1]
        j12 = v[t[:, 2], 0] - v[t[:, 0], 0]
        j22 = v[t[:, 2], 1] - v[t[:, 0], 1]
        det = j11 * j22 - j12 * j21
        # rows of inv(J)^T
        it = np.empty((len(points), 2, 2))
        it[:, 0, 0] = j22 / det
        it[:, 0, 1] = -j21 / det
        it[:, 1, 0] = -j12 / det
        it[:, 1, 1] = j11 / det
        if self.family == "P1":
            gref = np.broadcast_to(p1_grads(), (len(points), 3, 2))
        else:
            gref = p2_grads(ref)
        gphys = np.einsum("pde,pie->pid", it, gref)
        local = self._local(tri)
        if self.family == "P2v":
            return np.einsum("pid,pic->pcd", gphys, local)
        return np.einsum("pid,pi->pd", gphys, local)

    def node_coordinates(self):
        if self.family == "P1":
            return self.mesh.vertices
        return self.mesh.p2_coordinates()

    def export_csv(self, path, header=None):
        """Write `x,y,value[,value2]` rows at this field's nodes."""
        xy = self.node_coordinates()
        if self.family == "P2v":
            cols = [xy[:, 0], xy[:, 1], self.values[:, 0], self.values[:, 1]]
            header = header or "x,y,ux,uy"
        else:
            cols = [xy[:, 0], xy[:, 1], self.values]
            header = header or ("x,y,p" if self.family == "P1" else "x,y,c")
        write_csv(path, header, cols)


def write_csv(path, header, columns):
    """Comma-separated, '.' decimal, 17 significant digits, one header line."""
    columns = [np.asarray(c) for c in columns]
    with open(path, "w") as f:
        f.write(header + "\n")
        for row in zip(*columns):
            f.write(",".join(f"{x:.17g}" for x in row) + "\n")
