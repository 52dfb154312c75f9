"""Reference-element bases (P1/P2 Lagrange on triangles) and quadrature rules.

Local numbering on the reference triangle (0,0)-(1,0)-(0,1): vertices 0,1,2
followed by the midpoints of edges (0,1), (1,2), (2,0).
"""

import numpy as np

_S15 = np.sqrt(15.0)

# Dunavant degree-5 rule, 7 points, barycentric; weights sum to 1.
_B1 = (6.0 + _S15) / 21.0
_B2 = (6.0 - _S15) / 21.0
_TRI_QP = np.array(
    [
        [1.0 / 3.0, 1.0 / 3.0],
        [1.0 - 2.0 * _B1, _B1],
        [_B1, 1.0 - 2.0 * _B1],
        [_B1, _B1],
        [1.0 - 2.0 * _B2, _B2],
        [_B2, 1.0 - 2.0 * _B2],
        [_B2, _B2],
    ]
)
_TRI_QW = np.array(
    [
        9.0 / 40.0,
        (155.0 + _S15) / 1200.0,
        (155.0 + _S15) / 1200.0,
        (155.0 + _S15) / 1200.0,
        (155.0 - _S15) / 1200.0,
        (155.0 - _S15) / 1200.0,
        (155.0 - _S15) / 1200.0,
    ]
)


def tri_quadrature():
    """Quadrature on the reference triangle, exact for total degree <= 5.

    Returns (points, weights): points in reference coordinates, weights
    normalized so they sum to 1 (multiply by element area).
    """
    return _TRI_QP.copy(), _TRI_QW.copy()


def gauss1d(n=3):
    """n-point Gauss-Legendre rule on [0, 1]; n=3 is exact for degree 5."""
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


def _bary(pts):
    pts = np.asarray(pts, dtype=float)
    lam = np.empty((pts.shape[0], 3))
    lam[:, 0] = 1.0 - pts[:, 0] - pts[:, 1]
    lam[:, 1] = pts[:, 0]
    lam[:, 2] = pts[:, 1]
    return lam


def p1_basis(pts):
    """P1 shape functions at reference points; shape (npts, 3)."""
    return _bary(pts)


def p1_grads():
    """Constant P1 reference gradients; shape (3, 2)."""
    return np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]])


def p2_basis(pts):
    """P2 shape functions at reference points; shape (npts, 6)."""
    lam = _bary(pts)
    n = np.empty((lam.shape[0], 6))
    for i in range(3):
        n[:, i] = lam[:, i] * (2.0 * lam[:, i] - 1.0)
    n[:, 3] = 4.0 * lam[:, 0] * lam[:, 1]
    n[:, 4] = 4.0 * lam[:, 1] * lam[:, 2]
    n[:, 5] = 4.0 * lam[:, 2] * lam[:, 0]
    return n


def p2_grads(pts):
    """P2 reference gradients at reference points; shape (npts, 6, 2)."""
    lam = _bary(pts)
    dlam = p1_grads()  # (3, 2)
    g = np.empty((lam.shape[0], 6, 2))
    for i in range(3):
        g[:, i, :] = (4.0 * lam[:, i, None] - 1.0) * dlam[i]
    pairs = [(0, 1), (1, 2), (2, 0)]
    for k, (i, j) in enumerate(pairs):
        g[:, 3 + k, :] = 4.0 * (lam[:, i, None] * dlam[j] + lam[:, j, None] * dlam[i])
    return g


def p2_edge_basis(ts):
    """Quadratic Lagrange basis on an edge parametrized by t in [0,1].

    Node order: endpoint 0, endpoint 1, midpoint. Shape (npts, 3).
    """
    ts = np.asarray(ts, dtype=float)
    return np.stack(
        [(1.0 - ts) * (1.0 - 2.0 * ts), ts * (2.0 * ts - 1.0), 4.0 * ts * (1.0 - ts)],
        axis=1,
    )


def p1_edge_basis(ts):
    """Linear basis on an edge parametrized by t in [0,1]; shape (npts, 2)."""
    ts = np.asarray(ts, dtype=float)
    return np.stack([1.0 - ts, ts], axis=1)
