"""Direct sparse solve: fill-reducing LU with iterative refinement."""

import numpy as np
import scipy.sparse.linalg as spla

from tubenet.errors import ResidualTooLarge, SingularSystem

BACKWARD_TOL = 1e-12


def solve_sparse(system, rtol=1e-10, max_refine=4):
    """Solve a constrained SparseSystem with a direct factorization.

    Uses SuperLU (COLAMD ordering, partial pivoting) plus a few refinement
    sweeps targeting ||Ax - b|| <= rtol * ||b||.  When refinement stalls above
    that (possible for strongly ill-conditioned systems, e.g. huge viscosity
    contrast), the solution is still accepted if its normwise backward error
    ||r|| / (||A|| ||x|| + ||b||) is at machine level; otherwise
    ResidualTooLarge is raised.  SingularSystem reports factorization failure.
    """
    a_red, b_red, expand = system.reduced()
    if a_red.shape[0] == 0:
        return expand(np.zeros(0))
    try:
        lu = spla.splu(a_red)
    except RuntimeError as exc:  # "Factor is exactly singular" et al.
        raise SingularSystem(str(exc)) from exc
    x = lu.solve(b_red)
    if not np.all(np.isfinite(x)):
        raise SingularSystem("factorization produced non-finite values (zero pivot)")
    scale = max(float(np.linalg.norm(b_red)), 1e-300)
    r = b_red - a_red @ x
    for _ in range(max_refine):
        if np.linalg.norm(r) <= rtol * scale:
            break
        x = x + lu.solve(r)
        r = b_red - a_red @ x
    if np.linalg.norm(r) > rtol * scale:
        a_norm = float(np.max(np.abs(a_red).sum(axis=1)))
        backward = float(np.linalg.norm(r, np.inf)) / max(
            a_norm * float(np.linalg.norm(x, np.inf)) + float(np.linalg.norm(b_red, np.inf)),
            1e-300,
        )
        if backward > BACKWARD_TOL:
            raise ResidualTooLarge(
                f"residual {np.linalg.norm(r):.3e} > {rtol:.1e} * ||b|| and backward "
                f"error {backward:.3e} > {BACKWARD_TOL:.1e} after refinement"
            )
    return expand(x)
