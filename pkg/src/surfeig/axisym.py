"""Axisymmetric solvers on the unit sphere: densities as functions of latitude.

Separation of variables reduces mu_1 of an axisymmetric density to the
minimum over two regularized Sturm-Liouville problems on (0, pi):

* mode 1 (essential ends y(0) = y(pi) = 0):
      -((rho sin + eps) y')' + ((rho + eps)/sin) y = mu (rho sin + eps^2) y
* mode 0 (natural ends):
      -((rho sin + eps) y')' = mu (rho sin + eps^2) y,  least nonzero mu.

Sin-weighted terms integrate the antiderivative exactly per element; the
1/sin and mass terms use two-point Gauss quadrature, whose interior points
avoid the endpoint singularity. The same quadrature defines the density
gradients, so the 1D optimizer's objective and gradient are consistent.
"""

import logging
from dataclasses import dataclass, replace

import numpy as np
from scipy import linalg, sparse
from scipy.sparse.linalg import eigsh

from .density import (DensityOptConfig, ascend, cluster_size,
                      smoothed_min)
from .mesh import cap_radius_from_area

logger = logging.getLogger(__name__)

_GAUSS = np.array([0.5 - 0.5 / np.sqrt(3.0), 0.5 + 0.5 / np.sqrt(3.0)])


@dataclass
class LatitudeDensity:
    """Density values on the uniform latitude grid over [0, pi], N elements."""

    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 1 or len(self.values) < 5:
            raise ValueError("need at least 5 nodes (N >= 4 elements)")
        if np.any(self.values < -1e-12) or np.any(self.values > 1 + 1e-12):
            raise ValueError("density values must lie in [0, 1]")
        self.values = np.clip(self.values, 0.0, 1.0)

    @property
    def num_elements(self) -> int:
        return len(self.values) - 1

    @property
    def grid(self) -> np.ndarray:
        return np.linspace(0.0, np.pi, len(self.values))


def _sin_moments(a, b):
    """Exact integrals of (left hat, right hat) * sin(theta) per element."""
    h = b - a
    s0 = (h * np.cos(a) - (np.sin(b) - np.sin(a))) / h
    s1 = ((np.sin(b) - np.sin(a)) - h * np.cos(b)) / h
    return s0, s1


class _Grid1D:
    """Per-element quadrature data on a uniform grid over [0, span]."""

    def __init__(self, n_elems, span=np.pi):
        self.n = n_elems
        self.h = span / n_elems
        self.nodes = np.linspace(0.0, span, n_elems + 1)
        a, b = self.nodes[:-1], self.nodes[1:]
        self.s0, self.s1 = _sin_moments(a, b)
        # Gauss points per element: theta_g, weights h/2, hat values
        self.tg = a[:, None] + self.h * _GAUSS[None, :]
        self.wg = np.full_like(self.tg, 0.5 * self.h)
        self.lam_r = (self.tg - a[:, None]) / self.h
        self.lam_l = 1.0 - self.lam_r
        self.sin_g = np.sin(self.tg)


def _tridiag(n, diag, off):
    return sparse.diags([off, diag, off], [-1, 0, 1], format="csc")


def _assemble_pair(grid, rho, epsilon, with_singular_term):
    """Stiffness and mass of the regularized pencil; hats on ``grid``."""
    rho_l, rho_r = rho[:-1], rho[1:]
    stiff_c = rho_l * grid.s0 + rho_r * grid.s1 + epsilon * grid.h

    n = grid.n + 1
    diag = np.zeros(n)
    off = np.zeros(n - 1)
    np.add.at(diag, np.arange(grid.n), stiff_c / grid.h**2)
    np.add.at(diag, np.arange(1, n), stiff_c / grid.h**2)
    off -= stiff_c / grid.h**2

    rho_g = rho_l[:, None] * grid.lam_l + rho_r[:, None] * grid.lam_r
    mass_c = grid.wg * (rho_g * grid.sin_g + epsilon**2)
    mdiag = np.zeros(n)
    moff = np.zeros(n - 1)
    np.add.at(mdiag, np.arange(grid.n), (mass_c * grid.lam_l**2).sum(axis=1))
    np.add.at(mdiag, np.arange(1, n), (mass_c * grid.lam_r**2).sum(axis=1))
    moff += (mass_c * grid.lam_l * grid.lam_r).sum(axis=1)

    if with_singular_term:
        sing_c = grid.wg * (rho_g + epsilon) / grid.sin_g
        np.add.at(diag, np.arange(grid.n), (sing_c * grid.lam_l**2).sum(axis=1))
        np.add.at(diag, np.arange(1, n), (sing_c * grid.lam_r**2).sum(axis=1))
        off += (sing_c * grid.lam_l * grid.lam_r).sum(axis=1)

    return _tridiag(n, diag, off), _tridiag(n, mdiag, moff)


def _smallest(A, B, k):
    """The k algebraically smallest eigenpairs of the tridiagonal pencil."""
    n = A.shape[0]
    if n <= 200 or k > n // 4:
        w, v = linalg.eigh(A.toarray(), B.toarray(), subset_by_index=[0, k - 1])
        return w, v
    scale = A.diagonal().sum() / B.diagonal().sum()
    w, v = eigsh(A, k=k, M=B, sigma=-1e-3 * scale, which="LM", v0=np.ones(n), tol=0)
    order = np.argsort(w)
    return w[order], v[:, order]


def _mode_pairs(rho_vals, epsilon, k_each=2):
    """Candidate eigenpairs from both regularized problems, merged ascending.

    Returns (values, contexts); each context carries the problem tag, the
    full-grid eigenvector (boundary zeros restored for mode 1) and the
    matrices needed for Rayleigh-quotient derivatives.
    """
    grid = _Grid1D(len(rho_vals) - 1)
    out = []

    A1, B1 = _assemble_pair(grid, rho_vals, epsilon, with_singular_term=True)
    interior = slice(1, grid.n)
    A1i = A1[interior, interior]
    B1i = B1[interior, interior]
    w1, v1 = _smallest(A1i.tocsc(), B1i.tocsc(), k_each)
    for i in range(k_each):
        y = np.zeros(grid.n + 1)
        y[1:-1] = v1[:, i]
        out.append((w1[i], ("mode1", y, B1)))

    A0, B0 = _assemble_pair(grid, rho_vals, epsilon, with_singular_term=False)
    w0, v0 = _smallest(A0, B0, k_each + 1)
    for i in range(1, k_each + 1):  # skip the constant kernel
        out.append((w0[i], ("mode0", v0[:, i], B0)))

    out.sort(key=lambda t: t[0])
    values = np.array([t[0] for t in out])
    return values, [t[1] for t in out], grid


def axisym_mu1(rho: LatitudeDensity, epsilon: float) -> float:
    """First nontrivial eigenvalue of the axisymmetric density."""
    if epsilon <= 0.0:
        raise ValueError("epsilon must be positive")
    values, _, _ = _mode_pairs(rho.values, epsilon, k_each=1)
    return float(values[0])


def latitude_mass_vector(n_elems: int) -> np.ndarray:
    """g with mass(rho) = g . rho = integral of rho * 2 pi sin(theta)."""
    grid = _Grid1D(n_elems)
    g = np.zeros(n_elems + 1)
    g[:-1] += grid.s0
    g[1:] += grid.s1
    return 2.0 * np.pi * g


def cap_indicator(m: float, n_elems: int) -> LatitudeDensity:
    """Polar-cap density of exact discrete mass m: ones out to a fractional rim.

    Fills nodes from the pole until the discrete mass functional reaches m,
    putting the remainder on the single rim node. Unlike a projection of the
    snapped indicator, this never shaves the plateau or sprinkles mass.
    """
    theta = cap_radius_from_area(m)  # validates the range of m
    del theta
    g = latitude_mass_vector(n_elems)
    values = np.zeros(n_elems + 1)
    cum = np.cumsum(g)
    j = int(np.searchsorted(cum, m))
    values[:j] = 1.0
    spent = cum[j - 1] if j > 0 else 0.0
    values[j] = min(1.0, (m - spent) / g[j])
    return LatitudeDensity(values)


def cap_reference_mu1(m: float, N: int = 10000) -> float:
    """mu_1 of the geodesic cap of area m, via the exact 1D cap problems.

    Solves the azimuthal mode-1 equation on (0, theta_m) with a free end at
    theta_m, plus the mode-0 problem, and returns the smaller candidate.
    """
    if not (0.0 < m < 4.0 * np.pi):
        raise ValueError(f"cap area m={m} outside (0, 4*pi)")
    theta_m = cap_radius_from_area(m)
    grid = _Grid1D(N, span=theta_m)
    ones = np.ones(N + 1)

    # stiffness int sin y'w', mass int sin y w, singular int y w / sin
    stiff_c = grid.s0 + grid.s1
    n = N + 1
    diag = np.zeros(n)
    off = -stiff_c / grid.h**2
    np.add.at(diag, np.arange(N), stiff_c / grid.h**2)
    np.add.at(diag, np.arange(1, n), stiff_c / grid.h**2)

    mass_c = grid.wg * grid.sin_g
    mdiag = np.zeros(n)
    np.add.at(mdiag, np.arange(N), (mass_c * grid.lam_l**2).sum(axis=1))
    np.add.at(mdiag, np.arange(1, n), (mass_c * grid.lam_r**2).sum(axis=1))
    moff = (mass_c * grid.lam_l * grid.lam_r).sum(axis=1)
    B = _tridiag(n, mdiag, moff)

    sing_c = grid.wg / grid.sin_g
    d1 = diag.copy()
    o1 = off.copy()
    np.add.at(d1, np.arange(N), (sing_c * grid.lam_l**2).sum(axis=1))
    np.add.at(d1, np.arange(1, n), (sing_c * grid.lam_r**2).sum(axis=1))
    o1 += (sing_c * grid.lam_l * grid.lam_r).sum(axis=1)
    A1 = _tridiag(n, d1, o1)
    # mode 1: the 1/sin term forces y(0) = 0; free (natural) at theta_m
    w1, _ = _smallest(A1[1:, 1:].tocsc(), B[1:, 1:].tocsc(), 1)

    A0 = _tridiag(n, diag, off)
    w0, _ = _smallest(A0, B, 2)
    return float(min(w1[0], w0[1]))


def union_of_balls_mu(m: float, k: int, N: int = 10000) -> float:
    """mu_k of k disjoint geodesic balls of area m/k each (reference curve)."""
    return cap_reference_mu1(m / k, N)


class _Objective1D:
    """Smoothed-cluster objective over both axisymmetric problems."""

    def __init__(self, config):
        self.cfg = config

    def __call__(self, values, cluster=None, epsilon=None):
        cfg = self.cfg
        eps = cfg.epsilon if epsilon is None else epsilon
        k_each = max(2, (cfg.extra_eigs + 1) // 2)
        w, ctxs, grid = _mode_pairs(values, eps, k_each=k_each)
        w = w[: cfg.extra_eigs]
        ctxs = ctxs[: cfg.extra_eigs]
        if cluster is None:
            cluster = cluster_size(w, 0, cfg.cluster_rel_gap * w[0])
        F = smoothed_min(w[:cluster], cfg.p)
        return F, cluster, w, (ctxs, grid, eps)

    def gradients(self, values, window, ctx, cluster):
        ctxs, grid, eps = ctx
        return np.array(
            [
                _eig_gradient_1d(grid, values, eps, window[i], ctxs[i])
                for i in range(cluster)
            ]
        )


def _eig_gradient_1d(grid, rho, epsilon, mu, ctx):
    """d(mu)/d(rho_l) through the quadrature-defined 1D matrices."""
    tag, y, B = ctx
    dy = np.diff(y) / grid.h
    n = grid.n + 1
    grad = np.zeros(n)

    # stiffness: d(coef)/d(rho_l) is the exact sin moment of the hat
    np.add.at(grad, np.arange(grid.n), dy**2 * grid.s0)
    np.add.at(grad, np.arange(1, n), dy**2 * grid.s1)

    y_g = y[:-1, None] * grid.lam_l + y[1:, None] * grid.lam_r
    if tag == "mode1":
        sing = grid.wg * y_g**2 / grid.sin_g
        np.add.at(grad, np.arange(grid.n), (sing * grid.lam_l).sum(axis=1))
        np.add.at(grad, np.arange(1, n), (sing * grid.lam_r).sum(axis=1))

    mass = grid.wg * y_g**2 * grid.sin_g
    np.add.at(grad, np.arange(grid.n), (-mu) * (mass * grid.lam_l).sum(axis=1))
    np.add.at(grad, np.arange(1, n), (-mu) * (mass * grid.lam_r).sum(axis=1))

    return grad / float(y @ (B @ y))


def optimize_density_1d(m: float, N: int, config: DensityOptConfig | None = None):
    """Maximize mu_1 over axisymmetric densities of total mass m.

    Multi-starts combine structured initializations (polar cap, constant)
    with ``config.restarts`` seeded random ones; the best final objective
    wins. Returns (LatitudeDensity, OptTrace).
    """
    if not (0.0 < m < 4.0 * np.pi):
        raise ValueError(f"mass m={m} outside (0, 4*pi)")
    if config is None:
        config = DensityOptConfig(target_mass=m)
    else:
        config = replace(config, target_mass=m)

    g = latitude_mass_vector(N)
    objective = _Objective1D(config)
    from .density import project_feasible

    starts = [
        ("cap", cap_indicator(m, N).values),
        ("constant", np.full(N + 1, m / (4.0 * np.pi))),
    ]
    seeds = np.random.SeedSequence(config.seed).spawn(config.restarts)
    for i, ss in enumerate(seeds):
        rng = np.random.default_rng(ss)
        starts.append((f"random{i}", rng.uniform(0.0, 1.0, N + 1)))

    best = None
    for idx, (label, raw) in enumerate(starts):
        rho0 = project_feasible(raw, g, m)
        values, trace = ascend(objective, objective.gradients, g, rho0, config, idx)
        logger.info("1D start %-9s mu_1 %.6f (merit %.6f, %s)", label,
                    trace.final_value, trace.best_objective, trace.message)
        if best is None or trace.final_value > best[1].final_value:
            best = (LatitudeDensity(values), trace)
    return best


def dispersion(rho: LatitudeDensity) -> float:
    """Mesh-scaled measure of the fractional set: (N/pi) int rho (1 - rho)."""
    integrand = rho.values * (1.0 - rho.values)
    return float(rho.num_elements / np.pi * np.trapezoid(integrand, rho.grid))


def dispersion_ratio(m: float, N_list, config: DensityOptConfig | None = None):
    """h_m(N) / h_m(100) for each N, re-optimizing the density per N."""
    N_list = list(N_list)
    if N_list[0] != 100 or sorted(N_list) != N_list:
        raise ValueError("N_list must be ascending and start at 100")
    h = {}
    for N in N_list:
        rho, _ = optimize_density_1d(m, N, config)
        h[N] = dispersion(rho)
    if h[100] == 0.0:
        raise ZeroDivisionError("h_m(100) = 0: dispersion ratio undefined")
    return {N: h[N] / h[100] for N in N_list}
