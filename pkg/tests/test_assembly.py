import numpy as np
import pytest
from scipy.linalg import eigh, lu_factor, lu_solve

from surfeig.assembly import (StaleEigenpairError, assemble_system,
                              eigenvalue_gradient, plain_matrices)
from surfeig.mesh import DensityField, constant_density, total_area


def test_symmetry_and_kernel(ico4, ones4):
    sys_ = assemble_system(ico4, ones4, 1e-4)
    M, K = sys_.stiffness, sys_.mass
    assert abs(M - M.T).max() == 0.0
    assert abs(K - K.T).max() == 0.0
    row_sums = np.abs(M @ np.ones(ico4.num_vertices)).max()
    assert row_sums <= 1e-10 * abs(M).max()


def test_mass_vector_partition_of_unity(ico4, ones4):
    sys_ = assemble_system(ico4, ones4, 1e-4)
    assert abs(sys_.g.sum() - total_area(ico4)) <= 1e-12 * total_area(ico4)


def test_linearity_in_rho(ico3):
    zero = DensityField(ico3, np.zeros(ico3.num_vertices))
    sys_ = assemble_system(ico3, zero, 1e-4)
    S, B = plain_matrices(ico3)
    assert abs(sys_.stiffness - 1e-4 * S).max() < 1e-14
    assert abs(sys_.mass - 1e-8 * B).max() < 1e-14


def test_coordinate_dirichlet_energy(ico4, ones4):
    # x is a spherical harmonic: laplacian x = -2x, so the energy of the
    # coordinate is 2 * integral x^2 = 2 * (4 pi / 3)
    sys_ = assemble_system(ico4, ones4, 1e-12)
    x = ico4.vertices[:, 0]
    assert x @ (sys_.stiffness @ x) == pytest.approx(8.0 * np.pi / 3.0, rel=0.01)


def test_mismatched_mesh_rejected(ico2, ico3):
    rho = constant_density(ico2)
    with pytest.raises(Exception):
        assemble_system(ico3, rho, 1e-4)


def test_epsilon_validation(ico2):
    with pytest.raises(ValueError):
        assemble_system(ico2, constant_density(ico2), 0.0)


def _mu_refined(mesh, values, eps, k=1):
    """FD oracle: dense solve, inverse-iteration refinement, long-double
    Rayleigh quotient. Accurate to ~1e-15 relative, far below the h=1e-6
    difference quotient."""
    sys_ = assemble_system(mesh, DensityField(mesh, values), eps)
    M = sys_.stiffness.toarray()
    K = sys_.mass.toarray()
    w, vec = eigh(M, K, subset_by_index=[k, k])
    u = vec[:, 0]
    lu = lu_factor(M - (w[0] * (1 + 1e-7) + 1e-9) * K)
    for _ in range(2):
        u = lu_solve(lu, K @ u)
        u /= np.linalg.norm(u)
    Ml, Kl, ul = M.astype(np.longdouble), K.astype(np.longdouble), u.astype(np.longdouble)
    return float((ul @ (Ml @ ul)) / (ul @ (Kl @ ul)))


def test_gradient_matches_finite_differences(ico3, rng):
    eps = 1e-4
    vals = rng.uniform(0.05, 0.95, ico3.num_vertices)
    sys_ = assemble_system(ico3, DensityField(ico3, vals), eps)
    w, vec = eigh(sys_.stiffness.toarray(), sys_.mass.toarray(), subset_by_index=[0, 2])
    grad = eigenvalue_gradient(ico3, DensityField(ico3, vals), eps, w[1], vec[:, 1],
                               system=sys_)
    h = 1e-6
    for l in rng.choice(ico3.num_vertices, 6, replace=False):
        vp = vals.copy(); vp[l] += h
        vm = vals.copy(); vm[l] -= h
        fd = (_mu_refined(ico3, vp, eps) - _mu_refined(ico3, vm, eps)) / (2 * h)
        assert abs(fd - grad[l]) <= 1e-5 * max(abs(fd), 1e-12)


def test_gradient_scale_and_constant(ico3, rng):
    eps = 1e-4
    vals = rng.uniform(0.2, 0.9, ico3.num_vertices)
    rho = DensityField(ico3, vals)
    sys_ = assemble_system(ico3, rho, eps)
    w, vec = eigh(sys_.stiffness.toarray(), sys_.mass.toarray(), subset_by_index=[0, 1])
    g1 = eigenvalue_gradient(ico3, rho, eps, w[1], vec[:, 1], system=sys_)
    g2 = eigenvalue_gradient(ico3, rho, eps, w[1], -2.5 * vec[:, 1], system=sys_)
    np.testing.assert_allclose(g1, g2, atol=1e-14)
    # constants are the zero eigenpair: zero gradient
    g0 = eigenvalue_gradient(ico3, rho, eps, 0.0, np.ones(ico3.num_vertices),
                             system=sys_)
    assert np.abs(g0).max() < 1e-20


def test_stale_eigenpair_rejected(ico3, rng):
    rho = constant_density(ico3)
    sys_ = assemble_system(ico3, rho, 1e-4)
    bogus = rng.standard_normal(ico3.num_vertices)
    with pytest.raises(StaleEigenpairError):
        eigenvalue_gradient(ico3, rho, 1e-4, 2.0, bogus, system=sys_)


def test_monotone_mass(ico3, rng):
    # raising the density anywhere strictly increases u^T K u for any u
    # supported there
    vals = rng.uniform(0.2, 0.8, ico3.num_vertices)
    sys0 = assemble_system(ico3, DensityField(ico3, vals), 1e-4)
    bumped = vals.copy()
    target = 37
    bumped[target] += 0.1
    sys1 = assemble_system(ico3, DensityField(ico3, bumped), 1e-4)
    u = np.zeros(ico3.num_vertices)
    u[target] = 1.0
    assert u @ (sys1.mass @ u) > u @ (sys0.mass @ u)
