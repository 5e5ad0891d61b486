"""Ersatz-material level-set maximization of mu_k over domains on a fixed mesh.

The domain is Omega = {phi < 0}. Each step solves the ersatz eigenproblem on
the smoothed indicator, assembles the shape-derivative velocity of the cost

    J(Omega) = area * mu_k - b (area - m')^2,

extends/smooths it with a screened-Poisson solve, and advects phi through
the Hamilton-Jacobi equation phi_t + v |grad phi| = 0 with CFL sub-stepping.
phi is periodically rebuilt as a signed geodesic distance by fast marching.
"""

import heapq
import logging
from dataclasses import dataclass

import numpy as np
from scipy.sparse.linalg import splu

from .assembly import assemble_system, plain_matrices
from .density import OptTrace, cluster_size, smoothed_min_weights
from .eigsolve import solve_smallest
from .mesh import DensityField, SurfaceMesh

logger = logging.getLogger(__name__)


@dataclass
class LevelSetField:
    """Per-vertex level-set values phi with the indicator smoothing width."""

    mesh: SurfaceMesh
    phi: np.ndarray
    sigma_s: float = 1e-5

    def __post_init__(self):
        self.phi = np.asarray(self.phi, dtype=float)
        if self.phi.shape != (self.mesh.num_vertices,):
            raise ValueError("phi must hold one value per mesh vertex")
        if not np.all(np.isfinite(self.phi)):
            raise ValueError("phi must be finite everywhere")


@dataclass
class LevelSetConfig:
    """Parameters of the level-set optimization loop."""

    target_area: float
    k: int = 1
    epsilon: float = 1e-4
    sigma_s: float = 1e-5
    gamma: float = 3e-2
    area_penalty: float = 5.0
    n_steps: int = 600
    adapt_max_steps: int = 200
    dt_stop: float = 1e-7
    trig_p: int = 3
    trig_q: int = 3
    seed: int = 0
    alpha: float = 0.1
    p: float = 20.0
    cluster_rel_gap: float = 0.05
    extra_eigs: int = 4
    eig_tol: float = 1e-9
    redistance_period: int = 20
    restarts: int = 3

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.target_area <= 0.0:
            raise ValueError("target area must be positive")
        for name in ("epsilon", "sigma_s", "gamma", "area_penalty", "alpha"):
            if getattr(self, name) <= 0.0:
                raise ValueError(f"{name} must be positive")


def init_random_levelset(mesh: SurfaceMesh, p: int, q: int, seed: int,
                         sigma_s: float = 1e-5) -> LevelSetField:
    """Randomized trigonometric field in the surface angle coordinates.

    phi = Re sum_{j<=p} sum_{k<=q} c_jk exp(i(j*theta + k*psi)) with complex
    Gaussian coefficients, normalized to max|phi| = 1.
    """
    rng = np.random.default_rng(seed)
    theta, psi = mesh.params[:, 0], mesh.params[:, 1]
    c = rng.standard_normal((p + 1, q + 1)) + 1j * rng.standard_normal((p + 1, q + 1))
    phi = np.zeros(mesh.num_vertices)
    for j in range(p + 1):
        for k in range(q + 1):
            phi += np.real(c[j, k] * np.exp(1j * (j * theta + k * psi)))
    peak = np.abs(phi).max()
    if peak > 0.0:
        phi /= peak
    return LevelSetField(mesh, phi, sigma_s)


def smoothed_indicator(ls: LevelSetField) -> DensityField:
    """Smooth approximation of the indicator of {phi < 0}."""
    phi = ls.phi
    vals = 0.5 * (1.0 - phi / np.sqrt(phi**2 + ls.sigma_s**2))
    return DensityField(ls.mesh, vals)


def nodal_gradient_norm(mesh: SurfaceMesh, values: np.ndarray) -> np.ndarray:
    """|grad of the P1 interpolant| per vertex: area-weighted triangle average."""
    tri = mesh.triangles
    grad_t = np.einsum("ti,tik->tk", values[tri], mesh.grads)
    norm_t = np.linalg.norm(grad_t, axis=1)
    acc = np.zeros(mesh.num_vertices)
    wsum = np.zeros(mesh.num_vertices)
    np.add.at(acc, tri.ravel(), np.repeat(norm_t * mesh.areas, 3))
    np.add.at(wsum, tri.ravel(), np.repeat(mesh.areas, 3))
    return acc / wsum


def _nodal_field_average(mesh, per_triangle):
    acc = np.zeros(mesh.num_vertices)
    wsum = np.zeros(mesh.num_vertices)
    np.add.at(acc, mesh.triangles.ravel(), np.repeat(per_triangle * mesh.areas, 3))
    np.add.at(wsum, mesh.triangles.ravel(), np.repeat(mesh.areas, 3))
    return acc / wsum


def cost_and_velocity(mesh: SurfaceMesh, ls: LevelSetField, config: LevelSetConfig):
    """Cost J, raw boundary velocity, smoothed eigenvalue and current area.

    The velocity is the nodal shape gradient of J: with w_i the cluster
    weights of the smoothed minimum F over {mu_k, ...},

        v = area * sum_i w_i (|grad u_i|^2 - mu_i u_i^2)
            + F - 2 b (area - m').

    Positive v grows the domain.
    """
    cfg = config
    rho = smoothed_indicator(ls)
    system = assemble_system(mesh, rho, cfg.epsilon)
    eig = solve_smallest(system, cfg.k + cfg.extra_eigs, tol=cfg.eig_tol, seed=cfg.seed)
    area = float(rho.values @ system.g)

    window = eig.eigenvalues[cfg.k :]
    cluster = cluster_size(window, 0, cfg.cluster_rel_gap * window[0])
    F, weights = smoothed_min_weights(window[:cluster], cfg.p)

    w_grad = np.zeros(mesh.num_vertices)
    tri = mesh.triangles
    for i in range(cluster):
        u = eig.eigenvectors[:, cfg.k + i]
        grad_u2_t = np.einsum("tk,tk->t",
                              np.einsum("ti,tik->tk", u[tri], mesh.grads),
                              np.einsum("ti,tik->tk", u[tri], mesh.grads))
        w_grad += weights[i] * (_nodal_field_average(mesh, grad_u2_t)
                                - window[i] * u**2)

    J = area * F - cfg.area_penalty * (area - cfg.target_area) ** 2
    v = area * w_grad + (F - 2.0 * cfg.area_penalty * (area - cfg.target_area))
    return J, v, F, area, window


def regularize_velocity(mesh: SurfaceMesh, raw_v: np.ndarray, alpha: float,
                        solver=None) -> np.ndarray:
    """Screened-Poisson extension/smoothing: (alpha S + B) w = B raw_v."""
    if alpha <= 0.0:
        raise ValueError("alpha must be positive")
    S, B = plain_matrices(mesh)
    if solver is None:
        solver = splu((alpha * S + B).tocsc())
    return solver.solve(B @ np.asarray(raw_v, dtype=float))


def velocity_smoother(mesh: SurfaceMesh, alpha: float):
    """Factorized screened-Poisson solver reused across iterations."""
    S, B = plain_matrices(mesh)
    lu = splu((alpha * S + B).tocsc())
    return lambda raw: lu.solve(B @ np.asarray(raw, dtype=float))


def advect(ls: LevelSetField, v: np.ndarray, dt: float) -> LevelSetField:
    """Explicit nodal Hamilton-Jacobi transport phi_t + v |grad phi| = 0.

    Internally sub-stepped so each update respects dt_sub <= 0.5 h_min /
    max|v| with h_min the shortest mesh edge.
    """
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    v = np.asarray(v, dtype=float)
    vmax = np.abs(v).max()
    phi = ls.phi.copy()
    if vmax == 0.0:
        return LevelSetField(ls.mesh, phi, ls.sigma_s)
    h_min = ls.mesh.edge_lengths().min()
    n_sub = max(1, int(np.ceil(dt / (0.5 * h_min / vmax))))
    dt_sub = dt / n_sub
    for _ in range(n_sub):
        phi -= dt_sub * v * nodal_gradient_norm(ls.mesh, phi)
    return LevelSetField(ls.mesh, phi, ls.sigma_s)


def _interface_segments(mesh, phi):
    """Zero-crossing segment endpoints per triangle with a sign change.

    Returns (tri_idx, z1, z2): arrays of crossing triangles and the two
    segment endpoints from linear interpolation along the edges.
    """
    tri = mesh.triangles
    f = phi[tri]
    neg = f < 0.0
    count = neg.sum(axis=1)
    crossing = (count == 1) | (count == 2)
    idx = np.where(crossing)[0]
    if len(idx) == 0:
        return idx, np.empty((0, 3)), np.empty((0, 3))

    f = f[idx]
    neg = neg[idx]
    p = mesh.vertices[tri[idx]]
    # lone vertex: the one whose sign differs from the other two
    lone = np.where(neg.sum(axis=1) == 1, neg.argmax(axis=1), (~neg).argmax(axis=1))
    rows = np.arange(len(idx))
    o1 = (lone + 1) % 3
    o2 = (lone + 2) % 3

    def cut(other):
        fl = f[rows, lone]
        fo = f[rows, other]
        t = fl / (fl - fo)
        return p[rows, lone] + t[:, None] * (p[rows, other] - p[rows, lone])

    return idx, cut(o1), cut(o2)


def interface_length(ls: LevelSetField) -> float:
    """Length of the polygonal zero set of the P1 interpolant."""
    _, z1, z2 = _interface_segments(ls.mesh, ls.phi)
    return float(np.linalg.norm(z2 - z1, axis=1).sum())


def domain_area(ls: LevelSetField) -> float:
    """Exact area of {phi_h < 0} for the P1 interpolant (clipped triangles)."""
    mesh = ls.mesh
    tri = mesh.triangles
    f = ls.phi[tri]
    neg = f < 0.0
    count = neg.sum(axis=1)
    area = float(mesh.areas[count == 3].sum())

    idx, z1, z2 = _interface_segments(mesh, ls.phi)
    if len(idx) == 0:
        return area
    f = f[idx]
    neg = neg[idx]
    p = mesh.vertices[tri[idx]]
    lone = np.where(neg.sum(axis=1) == 1, neg.argmax(axis=1), (~neg).argmax(axis=1))
    rows = np.arange(len(idx))
    corner = np.linalg.norm(np.cross(z1 - p[rows, lone], z2 - p[rows, lone]), axis=1) / 2
    lone_negative = neg.sum(axis=1) == 1
    area += float(corner[lone_negative].sum())
    full = mesh.areas[idx]
    area += float((full - corner)[~lone_negative].sum())
    return area


def _point_segment_distance(pts, a, b):
    ab = b - a
    denom = np.einsum("ij,ij->i", ab, ab)
    t = np.einsum("ij,ij->i", pts - a, ab) / np.where(denom > 0.0, denom, 1.0)
    t = np.clip(t, 0.0, 1.0)
    foot = a + t[:, None] * ab
    return np.linalg.norm(pts - foot, axis=1)


def _triangle_update(xA, xB, xC, a, b):
    """Kimmel-Sethian update of the arrival time at C from values at A, B."""
    if b < a:
        xA, xB, a, b = xB, xA, b, a
    e = xB - xA
    L = np.linalg.norm(e)
    u = b - a
    fallback = min(a + np.linalg.norm(xC - xA), b + np.linalg.norm(xC - xB))
    if L <= 0.0 or u >= L:
        return fallback
    ehat = e / L
    w = xC - xA
    along = w @ ehat
    hvec = w - along * ehat
    h = np.linalg.norm(hvec)
    if h <= 0.0:
        return fallback
    s = np.sqrt(1.0 - (u / L) ** 2)
    # wedge check: the characteristic foot must land inside the edge
    foot = along - (h / s) * (u / L)
    if foot < 0.0 or foot > L:
        return fallback
    return min(fallback, a + (u / L) * along + s * h)


def redistance(ls: LevelSetField):
    """Signed geodesic distance to the zero set by fast marching.

    Seeds exact point-to-segment distances on interface triangles, then
    propagates outward with triangle updates (edge fallback). The sign of
    the original phi is kept. Without a sign change the field is returned
    unchanged together with flag False.
    """
    mesh = ls.mesh
    phi = ls.phi
    idx, z1, z2 = _interface_segments(mesh, phi)
    if len(idx) == 0 and not np.any(phi == 0.0):
        return ls, False

    n = mesh.num_vertices
    dist = np.full(n, np.inf)
    dist[phi == 0.0] = 0.0
    tri = mesh.triangles
    for t, za, zb in zip(idx, z1, z2):
        for v in tri[t]:
            d = _point_segment_distance(mesh.vertices[v][None, :], za[None, :], zb[None, :])[0]
            if d < dist[v]:
                dist[v] = d

    incident = [[] for _ in range(n)]
    for a, b, c in tri:
        incident[a].append((b, c))
        incident[b].append((c, a))
        incident[c].append((a, b))

    frozen = np.zeros(n, dtype=bool)
    heap = [(d, v) for v, d in enumerate(dist) if np.isfinite(d)]
    heapq.heapify(heap)
    verts = mesh.vertices
    while heap:
        d, v = heapq.heappop(heap)
        if frozen[v] or d > dist[v]:
            continue
        frozen[v] = True
        for u, w in incident[v]:
            for tgt, other in ((u, w), (w, u)):
                if frozen[tgt]:
                    continue
                if frozen[other]:
                    cand = _triangle_update(verts[v], verts[other], verts[tgt],
                                            dist[v], dist[other])
                else:
                    cand = dist[v] + np.linalg.norm(verts[tgt] - verts[v])
                if cand < dist[tgt]:
                    dist[tgt] = cand
                    heapq.heappush(heap, (cand, tgt))

    signed = np.where(phi < 0.0, -dist, dist)
    signed[phi == 0.0] = 0.0
    return LevelSetField(mesh, signed, ls.sigma_s), True


def optimize_levelset(mesh: SurfaceMesh, config: LevelSetConfig):
    """Gradient flow of J with multi-start; returns the best-J iterate.

    Phase one runs ``n_steps`` fixed-budget steps with dt = gamma/max|v|;
    phase two adapts dt (grow 1.1 on improvement, halve on regression) and
    stops below ``dt_stop``. The returned field is the best-J iterate across
    the winning restart; the trace records every step.
    """
    cfg = config
    smooth = velocity_smoother(mesh, cfg.alpha)
    seeds = np.random.SeedSequence(cfg.seed).spawn(cfg.restarts)

    best = None
    for ridx, ss in enumerate(seeds):
        sub = int(ss.generate_state(1)[0])
        ls = init_random_levelset(mesh, cfg.trig_p, cfg.trig_q, sub, cfg.sigma_s)
        result = _flow(mesh, ls, cfg, smooth, ridx)
        logger.info("levelset restart %d: best J %.6f (mu=%.5f area=%.4f)",
                    ridx, result[1].best_objective, result[1].final_value,
                    result[2])
        if best is None or result[1].best_objective > best[1].best_objective:
            best = result
    return best[0], best[1]


def _flow(mesh, ls0, cfg, smooth, restart_idx):
    ls = ls0
    rows = {key: [] for key in ("objective", "gain", "mass", "step", "cluster")}
    eig_rows = []

    best_J = -np.inf
    best_ls = ls0
    best_mu = np.nan
    best_area = np.nan
    J_prev = None
    failure = ""

    def push(J, dt, window, area, mu):
        nonlocal best_J, best_ls, best_mu, best_area, J_prev
        cluster = cluster_size(window, 0, cfg.cluster_rel_gap * window[0])
        rows["objective"].append(J)
        rows["gain"].append(0.0 if J_prev is None else J - J_prev)
        rows["mass"].append(area)
        rows["step"].append(dt)
        rows["cluster"].append(cluster)
        eig_rows.append(window[: cfg.extra_eigs])
        if J > best_J:
            best_J = J
            best_ls = LevelSetField(mesh, ls.phi.copy(), cfg.sigma_s)
            best_mu = mu
            best_area = area
        J_prev = J

    step_count = 0

    def maybe_redistance():
        nonlocal ls
        if (step_count % cfg.redistance_period) == 0 and step_count > 0:
            ls, _ = redistance(ls)

    # fixed-budget phase
    for _ in range(cfg.n_steps):
        try:
            J, v_raw, mu, area, window = cost_and_velocity(mesh, ls, cfg)
        except Exception as exc:  # eigensolver failure mid-run
            failure = f"step {step_count}: {exc}"
            break
        v = smooth(v_raw)
        dt = cfg.gamma / max(np.abs(v).max(), 1e-300)
        push(J, dt, window, area, mu)
        ls = advect(ls, v, dt)
        step_count += 1
        maybe_redistance()

    # adaptive phase
    if not failure and cfg.adapt_max_steps > 0:
        try:
            J_cur, v_raw, mu, area, window = cost_and_velocity(mesh, ls, cfg)
            v = smooth(v_raw)
            dt = cfg.gamma / max(np.abs(v).max(), 1e-300)
            while dt >= cfg.dt_stop and step_count < cfg.n_steps + cfg.adapt_max_steps:
                ls_new = advect(ls, v, dt)
                J_new, v_raw_new, mu, area, window = cost_and_velocity(mesh, ls_new, cfg)
                if J_new > J_cur:
                    dt *= 1.1
                else:
                    dt *= 0.5
                ls, J_cur, v = ls_new, J_new, smooth(v_raw_new)
                push(J_new, dt, window, area, mu)
                step_count += 1
                maybe_redistance()
        except Exception as exc:
            failure = f"step {step_count}: {exc}"

    trace = OptTrace(
        objective=np.asarray(rows["objective"]),
        gain=np.asarray(rows["gain"]),
        eigenvalues=np.asarray(eig_rows) if eig_rows else np.empty((0, cfg.extra_eigs)),
        mass=np.asarray(rows["mass"]),
        step=np.asarray(rows["step"]),
        cluster=np.asarray(rows["cluster"], dtype=int),
        restart=restart_idx,
        best_objective=best_J,
        final_value=best_mu,
        message=failure or "completed",
    )
    return best_ls, trace, best_area


def evaluate_domain(mesh: SurfaceMesh, ls: LevelSetField, k: int,
                    epsilon: float = 1e-6, extra: int = 4):
    """Sharp-indicator eigenvalue and exact P1 area of {phi < 0}.

    Replaces the ersatz smoothing by the binary indicator and a tight
    regularization; this is the honest value reported for a final domain.
    """
    sharp = DensityField(mesh, (ls.phi < 0.0).astype(float))
    system = assemble_system(mesh, sharp, epsilon)
    eig = solve_smallest(system, k + extra, tol=1e-8)
    return float(eig.eigenvalues[k]), domain_area(ls)
