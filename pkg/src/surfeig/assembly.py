"""Assembly of the regularized generalized eigenvalue system on a surface mesh.

For a density rho in [0,1] and regularization epsilon > 0 the system pairs

    M[i,j] = integral (rho + eps)   grad(phi_i) . grad(phi_j)
    K[i,j] = integral (rho + eps^2) phi_i phi_j

over P1 hat functions phi on flat triangles, with rho interpolated in the
same P1 space. Element integrals use the edge-midpoint rule (exact for
quadratic integrands); the committed contract is the quadrature-defined
matrices, so the analytic eigenvalue gradient below is exact for the
discrete objective.
"""

from dataclasses import dataclass

import numpy as np
from scipy import sparse

from .mesh import DensityField, MeshError, SurfaceMesh

# edge midpoints in barycentric coordinates and P1 values there:
# midpoint q of edge (a, b) has phi_a = phi_b = 1/2, the third basis 0
_MID_PAIRS = ((0, 1), (1, 2), (2, 0))


class StaleEigenpairError(ValueError):
    """Eigenpair residual exceeds the tolerance the gradient formula assumes."""


@dataclass(frozen=True)
class SparseSymSystem:
    """Stiffness/mass pair (M, K) with the mass vector g for one density."""

    stiffness: sparse.csr_matrix
    mass: sparse.csr_matrix
    g: np.ndarray
    epsilon: float
    mesh: SurfaceMesh

    @property
    def dimension(self) -> int:
        return self.g.shape[0]


def _check_field(mesh: SurfaceMesh, rho: DensityField):
    if rho.mesh is not mesh and rho.mesh.num_vertices != mesh.num_vertices:
        raise MeshError("density lives on a different mesh")


def _local_gram(grads):
    """Per-triangle 3x3 Gram matrices of the constant basis gradients."""
    return np.einsum("tik,tjk->tij", grads, grads)


def assemble_system(mesh: SurfaceMesh, rho: DensityField, epsilon: float) -> SparseSymSystem:
    """Assemble M (stiffness, coefficient rho+eps) and K (mass, rho+eps^2).

    Assembly order is deterministic: COO triplets in triangle order, summed
    by scipy on conversion. Both (i,j) and (j,i) entries are written, so the
    matrices are exactly symmetric.
    """
    if epsilon <= 0.0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")
    _check_field(mesh, rho)

    tri = mesh.triangles
    areas = mesh.areas
    rho_tri = rho.values[tri]

    gram = _local_gram(mesh.grads)
    coef_m = rho_tri.mean(axis=1) + epsilon
    local_m = gram * (coef_m * areas)[:, None, None]

    # edge-midpoint quadrature for K: weight area/3 per midpoint,
    # rho(midpoint of (a,b)) = (rho_a + rho_b)/2
    local_k = np.zeros_like(local_m)
    w = areas / 3.0
    for a, b in _MID_PAIRS:
        coef_q = 0.5 * (rho_tri[:, a] + rho_tri[:, b]) + epsilon**2
        cw = 0.25 * w * coef_q
        local_k[:, a, a] += cw
        local_k[:, b, b] += cw
        local_k[:, a, b] += cw
        local_k[:, b, a] += cw

    n = mesh.num_vertices
    rows = np.repeat(tri, 3, axis=1).ravel()
    cols = np.tile(tri, (1, 3)).ravel()
    M = sparse.coo_matrix((local_m.ravel(), (rows, cols)), shape=(n, n)).tocsr()
    K = sparse.coo_matrix((local_k.ravel(), (rows, cols)), shape=(n, n)).tocsr()

    g = np.zeros(n)
    np.add.at(g, tri.ravel(), np.repeat(w, 3))
    return SparseSymSystem(M, K, g, float(epsilon), mesh)


def plain_matrices(mesh: SurfaceMesh):
    """Unweighted P1 stiffness and mass matrices (coefficient 1, no shift).

    These are the rho == 1, eps -> 0 limits of the system matrices and back
    the velocity regularizer of the level-set method.
    """
    tri = mesh.triangles
    areas = mesh.areas
    gram = _local_gram(mesh.grads)
    local_s = gram * areas[:, None, None]
    # consistent P1 mass: area/6 diagonal, area/12 off-diagonal
    local_b = np.tile(areas[:, None, None] / 12.0, (1, 3, 3))
    local_b[:, [0, 1, 2], [0, 1, 2]] = (areas / 6.0)[:, None]

    n = mesh.num_vertices
    rows = np.repeat(tri, 3, axis=1).ravel()
    cols = np.tile(tri, (1, 3)).ravel()
    S = sparse.coo_matrix((local_s.ravel(), (rows, cols)), shape=(n, n)).tocsr()
    B = sparse.coo_matrix((local_b.ravel(), (rows, cols)), shape=(n, n)).tocsr()
    return S, B


def eigenvalue_gradient(
    mesh: SurfaceMesh,
    rho: DensityField,
    epsilon: float,
    mu: float,
    u: np.ndarray,
    system: SparseSymSystem | None = None,
    residual_tol: float = 1e-6,
) -> np.ndarray:
    """Derivative of a simple eigenvalue w.r.t. the nodal density values.

    d(mu)/d(rho_l) = u^T (d_l M - mu d_l K) u / (u^T K u), accumulated per
    triangle without materializing the derivative matrices:

    * d_l M contributes (area/3) |grad u|^2 on the triangle, to each of its
      three vertices;
    * d_l K contributes, for every edge midpoint q adjacent to l, the
      quadrature weight (area/3) * (1/2) * u(q)^2.
    """
    _check_field(mesh, rho)
    if system is None:
        system = assemble_system(mesh, rho, epsilon)
    u = np.asarray(u, dtype=float)
    ku = system.mass @ u
    res = np.linalg.norm(system.stiffness @ u - mu * ku)
    # backward-error scaling, matching the eigensolver's guarantee (a plain
    # ||Ku|| yardstick is unattainable when K is scaled nearly singular)
    scale = (sparse.linalg.norm(system.stiffness, 1)
             + abs(mu) * sparse.linalg.norm(system.mass, 1)) * np.linalg.norm(u)
    if res > residual_tol * max(scale, 1e-300):
        raise StaleEigenpairError(
            f"eigenpair residual {res:.3e} above tolerance; re-solve before differentiating"
        )

    tri = mesh.triangles
    w = mesh.areas / 3.0
    u_tri = u[tri]
    grad_u = np.einsum("ti,tik->tk", u_tri, mesh.grads)
    m_part = w * np.einsum("tk,tk->t", grad_u, grad_u)

    grad = np.zeros(mesh.num_vertices)
    np.add.at(grad, tri.ravel(), np.repeat(m_part, 3))

    k_part = np.zeros_like(u_tri)
    for a, b in _MID_PAIRS:
        uq2 = (0.5 * (u_tri[:, a] + u_tri[:, b])) ** 2
        contrib = 0.5 * w * uq2
        k_part[:, a] += contrib
        k_part[:, b] += contrib
    np.add.at(grad, tri.ravel(), (-mu * k_part).ravel())

    return grad / float(u @ ku)
