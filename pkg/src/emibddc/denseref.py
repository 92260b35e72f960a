"""Dense reference computations for cross-checking the sparse solver stack.

Everything here is rebuilt from the raw local operators with plain dense
linear algebra (``numpy.linalg`` / ``scipy.linalg``) and deliberately does
not reuse the production factorization or preconditioner code paths, so a
disagreement implicates exactly one side.  Intended for meshes of at most
a few thousand unknowns.
"""

import numpy as np
import scipy.linalg as sla

from .bddc import build_scaling
from .errors import VerificationError

__all__ = [
    "dense_substructure_schur",
    "dense_broken_schur",
    "gather_matrix",
    "dense_assembled_schur",
    "difference_rows",
    "constrained_basis",
    "dense_bddc_matrix",
    "preconditioned_spectrum",
    "projected_solve",
]


def dense_substructure_schur(op):
    """Dense interface Schur complement of one local operator.

    Eliminates the interior block by direct dense solves:
    ``S = K_gg - K_gi inv(K_ii) K_ig``.
    """
    k = op.matrix.toarray()
    ni = op.n_interior
    k_ii = k[:ni, :ni]
    k_ig = k[:ni, ni:]
    k_gi = k[ni:, :ni]
    k_gg = k[ni:, ni:]
    if ni == 0:
        return k_gg
    return k_gg - k_gi @ np.linalg.solve(k_ii, k_ig)


def dense_broken_schur(dofmap, local_ops):
    """Block-diagonal Schur complement on the stacked broken interface."""
    nb = dofmap.n_broken
    sb = np.zeros((nb, nb))
    for op in local_ops:
        sl = dofmap.gamma_slice(op.sub)
        sb[sl, sl] = dense_substructure_schur(op)
    return sb


def gather_matrix(dofmap):
    """(n_broken, n_gamma) injection: broken dof <- backing assembled dof."""
    g = np.zeros((dofmap.n_broken, dofmap.n_gamma))
    g[np.arange(dofmap.n_broken), dofmap.bro_gamma] = 1.0
    return g


def dense_assembled_schur(dofmap, local_ops):
    g = gather_matrix(dofmap)
    return g.T @ dense_broken_schur(dofmap, local_ops) @ g


def _row_to_broken(dofmap, row):
    """Spread one ConstraintRow onto the stacked broken interface."""
    vec = np.zeros(dofmap.n_broken)
    pos = dofmap.bro_ptr[row.sub] + row.local_dofs - dofmap.n_interior[row.sub]
    vec[pos] = row.weights
    return vec


def difference_rows(dofmap, constraints):
    """All primal identifications as difference functionals on W(Gamma').

    Each class with k rows (or k identified nodal members) contributes
    k - 1 rows of the form ``member - first member``; their joint null
    space is the partially assembled space of admissible vectors.
    """
    rows = []
    for cl in constraints.classes:
        if cl.kind == "vertex":
            base_sub, base_dof = cl.members[0]
            base = np.zeros(dofmap.n_broken)
            base[dofmap.bro_ptr[base_sub] + base_dof - dofmap.n_interior[base_sub]] = 1.0
            for sub, dof in cl.members[1:]:
                r = -base
                r = r.copy()
                r[dofmap.bro_ptr[sub] + dof - dofmap.n_interior[sub]] += 1.0
                rows.append(r)
        else:
            base = _row_to_broken(dofmap, cl.rows[0])
            for row in cl.rows[1:]:
                rows.append(_row_to_broken(dofmap, row) - base)
    if not rows:
        return np.zeros((0, dofmap.n_broken))
    return np.array(rows)


def constrained_basis(dofmap, constraints):
    """Orthonormal basis of the constrained (partially assembled) space."""
    rows = difference_rows(dofmap, constraints)
    if rows.shape[0] == 0:
        return np.eye(dofmap.n_broken)
    return sla.null_space(rows)


def dense_bddc_matrix(dofmap, constraints, local_ops, sigma):
    """Explicit preconditioner matrix on the assembled interface space.

    Realizes M^-1 = R_D^T S~^+ R_D with the constrained-space solve done
    as one dense pseudo-inverse in a null-space basis, which is exactly
    the block-elimination sum (local dual solvers + coarse solve) that
    the production code evaluates piecewise.
    """
    sb = dense_broken_schur(dofmap, local_ops)
    z = constrained_basis(dofmap, constraints)
    if z.shape[1] == 0:
        raise VerificationError("constrained space is empty; nothing to verify")
    delta = build_scaling(dofmap, sigma)
    g = gather_matrix(dofmap)
    r_d = delta[:, None] * g                  # scaled injection, (nb, n_gamma)
    s_z = z.T @ sb @ z
    # pseudo-inverse with a relative cutoff: S~ carries the global constant
    vals, vecs = np.linalg.eigh(s_z)
    cut = 1e-10 * vals[-1]
    inv = np.where(vals > cut, 1.0 / np.where(vals > cut, vals, 1.0), 0.0)
    s_plus = (vecs * inv) @ vecs.T
    return r_d.T @ z @ s_plus @ z.T @ r_d


def preconditioned_spectrum(m_inv, s_hat):
    """Eigenvalues of M^-1 S restricted to the complement of constants."""
    n = s_hat.shape[0]
    q = sla.null_space(np.ones((1, n)))
    a2 = q.T @ s_hat @ q
    m2 = q.T @ m_inv @ q
    try:
        low = np.linalg.cholesky(m2)
    except np.linalg.LinAlgError as exc:
        raise VerificationError(
            "projected preconditioner is not positive definite"
        ) from exc
    return np.sort(sla.eigvalsh(low.T @ a2 @ low))


def projected_solve(s_hat, rhs):
    """Minimum-norm solve of the singular interface system, mean removed."""
    n = s_hat.shape[0]
    rhs = rhs - rhs.mean()
    q = sla.null_space(np.ones((1, n)))
    x = q @ np.linalg.solve(q.T @ s_hat @ q, q.T @ rhs)
    return x - x.mean()
