"""Projected-gradient maximization of mu_k over densities with a mass constraint.

The objective is the p-norm smoothed minimum of the eigenvalue cluster at
mu_k (re-detected every iteration), ascended with backtracking and an exact
Euclidean projection onto {0 <= rho <= 1, rho . g = mass, rho = 0 on mask}.
Multi-start over seeded random initializations; the best restart wins.
"""

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .assembly import assemble_system, eigenvalue_gradient
from .eigsolve import ConvergenceError, solve_smallest
from .mesh import DensityField, SurfaceMesh

logger = logging.getLogger(__name__)


class FeasibilityError(ValueError):
    """The mass constraint cannot be met inside the box/mask constraints."""


@dataclass
class DensityOptConfig:
    """Parameters of the density maximization.

    ``cluster_rel_gap`` sets the cluster threshold relative to the current
    eigenvalue: sigma_c = cluster_rel_gap * mu_k.
    """

    target_mass: float
    k: int = 1
    epsilon: float = 1e-4
    p: float = 20.0
    cluster_rel_gap: float = 0.05
    max_iters: int = 200
    restarts: int = 3
    seed: int = 0
    exclusion_mask: np.ndarray | None = None
    extra_eigs: int = 4
    eig_tol: float = 1e-9
    step_init_move: float = 0.1
    step_grow: float = 1.3
    step_shrink: float = 0.5
    max_backtracks: int = 30
    ftol: float = 1e-9
    patience: int = 12
    polish_iters: int = 100
    polish_epsilon: float = 1e-6
    cleanup_snap: float = 0.02
    cleanup_period: int = 5

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.target_mass <= 0.0:
            raise ValueError("target mass must be positive")
        if self.p < 2.0:
            raise ValueError("smoothing exponent p must be >= 2")
        if self.epsilon <= 0.0:
            raise ValueError("epsilon must be positive")


@dataclass
class OptTrace:
    """Per-iteration records of one optimization run (the winning restart)."""

    objective: np.ndarray = field(default_factory=lambda: np.empty(0))
    gain: np.ndarray = field(default_factory=lambda: np.empty(0))
    eigenvalues: np.ndarray = field(default_factory=lambda: np.empty((0, 0)))
    mass: np.ndarray = field(default_factory=lambda: np.empty(0))
    step: np.ndarray = field(default_factory=lambda: np.empty(0))
    cluster: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=int))
    restart: int = 0
    best_objective: float = -np.inf
    final_value: float = -np.inf
    message: str = ""

    @property
    def iterations(self) -> int:
        return len(self.objective)


def cluster_size(eigs, k: int, sigma_c: float) -> int:
    """Number of eigenvalues within sigma_c above eigs[k], inside the window."""
    eigs = np.asarray(eigs)
    if len(eigs) < k + 1:
        raise ValueError(f"need at least {k + 1} eigenvalues, got {len(eigs)}")
    m = 1
    while k + m < len(eigs) and eigs[k + m] - eigs[k] <= sigma_c:
        m += 1
    return m


def smoothed_min(values, p: float) -> float:
    """(sum v_i^-p)^(-1/p), evaluated in log space."""
    v = np.asarray(values, dtype=float)
    if np.any(v <= 0.0):
        raise ValueError("smoothed_min requires positive values")
    return float(np.exp(-logsumexp(-p * np.log(v)) / p))


def smoothed_min_weights(values, p: float):
    """Value F and the chain-rule weights dF/dv_i = F^(p+1) v_i^-(p+1)."""
    v = np.asarray(values, dtype=float)
    F = smoothed_min(v, p)
    w = np.exp((p + 1.0) * (np.log(F) - np.log(v)))
    return F, w


def smoothed_min_gradient(values, gradients, p: float) -> np.ndarray:
    """Gradient of smoothed_min composed with per-value gradient vectors."""
    grads = np.asarray(gradients, dtype=float)
    v = np.asarray(values, dtype=float)
    if grads.shape[0] != v.shape[0]:
        raise ValueError("one gradient vector per value is required")
    _, w = smoothed_min_weights(v, p)
    return w @ grads


def project_feasible(raw, g, m: float, mask=None, rtol: float = 1e-10) -> np.ndarray:
    """Euclidean projection of ``raw`` onto {0<=rho<=1, rho.g=m, rho=0 on mask}.

    The projection is clip(raw + lam*g, 0, 1) with the multiplier lam located
    by bisection of the monotone mass map, then snapped exactly by linear
    interpolation inside the final (linear) segment.
    """
    raw = np.asarray(raw, dtype=float)
    g = np.asarray(g, dtype=float)
    free = np.ones(len(raw), dtype=bool) if mask is None else ~np.asarray(mask, dtype=bool)
    gf = g[free]
    rf = raw[free]
    reachable = gf.sum()
    if not (0.0 < m <= reachable * (1.0 + 1e-12)):
        raise FeasibilityError(
            f"target mass {m} not reachable (max {reachable} outside the mask)"
        )

    already_boxed = np.all(rf >= 0.0) and np.all(rf <= 1.0)
    if mask is not None:
        already_boxed &= not np.any(raw[~free])
    if already_boxed and abs(gf @ rf - m) <= 1e-12 * m:
        return raw.copy()

    def mass_at(lam):
        return gf @ np.clip(rf + lam * gf, 0.0, 1.0)

    lo = np.min(-rf / gf)
    hi = np.max((1.0 - rf) / gf)
    mlo, mhi = 0.0, reachable
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        mm = mass_at(mid)
        if mm < m:
            lo, mlo = mid, mm
        else:
            hi, mhi = mid, mm
        if mhi - mlo <= rtol * m or hi - lo <= 1e-16 * max(1.0, abs(lo) + abs(hi)):
            break
    # the mass map is linear inside the final bracket: snap exactly
    if mhi > mlo:
        lam = lo + (m - mlo) * (hi - lo) / (mhi - mlo)
    else:
        lam = 0.5 * (lo + hi)

    out = np.zeros(len(raw))
    out[free] = np.clip(rf + lam * gf, 0.0, 1.0)
    return out


class _ClusterObjective:
    """Eigensolve + cluster detection + smoothed objective for one density.

    The callable returns (F, cluster, window, context); ``window`` holds the
    eigenvalues from mu_k on and the context whatever the matching gradient
    callable needs. The 1D solver plugs in its own pair with the same shape.
    """

    def __init__(self, mesh, config):
        self.mesh = mesh
        self.cfg = config
        self.count = config.k + config.extra_eigs

    def __call__(self, values, cluster=None, epsilon=None):
        cfg = self.cfg
        eps = cfg.epsilon if epsilon is None else epsilon
        rho = DensityField(self.mesh, values)
        system = assemble_system(self.mesh, rho, eps)
        # near-singular mass floors (tight-eps evaluation) cap the float64
        # accuracy; 3e-7 backward error is still far below optimizer needs
        tol = cfg.eig_tol if eps >= 1e-5 else max(cfg.eig_tol, 3e-7)
        eig = solve_smallest(system, self.count, tol=tol, seed=cfg.seed)
        window = eig.eigenvalues[cfg.k :]
        if cluster is None:
            cluster = cluster_size(window, 0, cfg.cluster_rel_gap * window[0])
        F = smoothed_min(window[:cluster], cfg.p)
        return F, cluster, window, (eig, system, eps)

    def gradients(self, values, window, ctx, cluster):
        cfg = self.cfg
        eig, system, eps = ctx
        rho = DensityField(self.mesh, values)
        return np.array(
            [
                eigenvalue_gradient(self.mesh, rho, eps, window[i],
                                    eig.eigenvectors[:, cfg.k + i], system=system)
                for i in range(cluster)
            ]
        )


def _farthest_centers(mesh, count, rng, mask=None):
    """Well-separated unit directions by farthest-point sampling.

    Anchored at the direction opposite the masked region when a mask is
    given, otherwise at a seeded random vertex.
    """
    verts = mesh.vertices / np.linalg.norm(mesh.vertices, axis=1)[:, None]
    allowed = np.ones(len(verts), dtype=bool) if mask is None else ~np.asarray(mask, bool)
    anchors = []
    if mask is not None and mask.any():
        centroid = verts[np.asarray(mask, bool)].mean(axis=0)
        nc = np.linalg.norm(centroid)
        if nc > 1e-12:
            anchors.append(centroid / nc)  # repels centers from the mask
    centers = []
    if not anchors:
        centers.append(verts[rng.integers(0, len(verts))])
    while len(centers) < count:
        ref = np.array(anchors + centers)
        score = np.min(np.arccos(np.clip(verts @ ref.T, -1, 1)), axis=1)
        score[~allowed] = -np.inf
        centers.append(verts[int(np.argmax(score))])
    return centers[:count]


def _cap_union_start(mesh, config, rng):
    """Union of k equal caps at well-separated centers (reference shape)."""
    from .mesh import geodesic_cap_field

    k = config.k
    centers = _farthest_centers(mesh, k, rng, config.exclusion_mask)
    raw = np.zeros(mesh.num_vertices)
    for c in centers:
        raw = np.maximum(raw, geodesic_cap_field(mesh, c, config.target_mass / k).values)
    return raw


def optimize_density(mesh: SurfaceMesh, config: DensityOptConfig,
                     initial: np.ndarray | None = None):
    """Maximize the smoothed mu_k cluster over feasible densities.

    The multi-start portfolio holds one union-of-k-caps configuration (the
    reference shape at seeded well-separated centers) plus
    ``config.restarts`` uniform random fields; every start is projected
    feasible and the best true (unsmoothed) final mu_k wins. When
    ``initial`` is given it is prepended (warm start from a coarser mesh).
    Deterministic for a fixed ``config.seed``.
    """
    if mesh.kind != "sphere" and config.exclusion_mask is not None:
        raise ValueError("exclusion masks are supported on sphere meshes only")
    objective = _ClusterObjective(mesh, config)
    g = mesh.vertex_areas()
    root = np.random.SeedSequence(config.seed)
    seeds = root.spawn(config.restarts + 1)

    starts = []
    if initial is not None:
        starts.append(("warm", np.asarray(initial, dtype=float)))
    elif mesh.kind == "sphere":
        starts.append(("caps", _cap_union_start(mesh, config,
                                                np.random.default_rng(seeds[0]))))
    for i, ss in enumerate(seeds[1:]):
        rng = np.random.default_rng(ss)
        starts.append((f"random{i}", rng.uniform(0.0, 1.0, mesh.num_vertices)))

    best = None
    for idx, (label, raw) in enumerate(starts):
        rho0 = project_feasible(raw, g, config.target_mass, config.exclusion_mask)
        values, trace = ascend(objective, objective.gradients, g, rho0, config, idx)
        # the winner is the restart with the best true (unsmoothed) mu_k
        if best is None or trace.final_value > best[1].final_value:
            best = (DensityField(mesh, values), trace)
        logger.info(
            "start %-8s mu_k %.6f (merit %.6f) after %d iterations (%s)",
            label, trace.final_value, trace.best_objective, trace.iterations,
            trace.message,
        )
    return best


def optimize_density_refined(meshes, config: DensityOptConfig, mask_builder=None,
                             refine_iters: int | None = None):
    """Coarse-to-fine density optimization over a list of meshes.

    The full multi-start portfolio runs on the coarsest mesh; each finer
    mesh is warm-started from the previous optimum by nearest-vertex
    transfer only (``refine_iters`` overrides the iteration budget there).
    ``mask_builder(mesh)`` recomputes the exclusion mask per mesh when the
    constraint is geometric.
    """
    from dataclasses import replace

    from .mesh import nearest_vertex_transfer

    carried = None
    result = None
    for depth, mesh in enumerate(meshes):
        mask = mask_builder(mesh) if mask_builder is not None else None
        cfg = replace(config, exclusion_mask=mask)
        initial = None
        if carried is not None:
            initial = nearest_vertex_transfer(*carried, mesh)
            if mask is not None:
                initial = initial.copy()
                initial[mask] = 0.0
            cfg = replace(cfg, restarts=0,
                          max_iters=refine_iters or cfg.max_iters,
                          polish_iters=refine_iters or cfg.polish_iters)
        result = optimize_density(mesh, cfg, initial=initial)
        carried = (mesh, result[0].values)
        logger.info("level %d (%d vertices): mu_k %.6f", depth,
                    mesh.num_vertices, result[1].final_value)
    return result


def ascend(objective, gradients, g, rho0, config, restart_idx=0):
    """Projected-gradient ascent with backtracking from one starting density.

    ``objective(values, cluster=None) -> (F, cluster, window, ctx)`` and
    ``gradients(values, window, ctx, cluster) -> (cluster, n) array`` define
    the problem; the loop owns stepping, projection and the trace.

    Two phases: the cluster-smoothed ascent (cluster re-detected every
    iteration), then a polish phase that maximizes the plain mu_k with the
    cluster frozen at one. The polish undoes the sag the smoothed objective
    tolerates when a spurious near eigenvalue (e.g. from low-density dust
    the mass projection spreads around) joins the cluster; at genuinely
    multiple optima its line search fails immediately and it is a no-op.
    """
    cfg = config
    rho = rho0

    rows = {key: [] for key in ("objective", "gain", "mass", "step", "cluster")}
    eig_rows = []
    message = "max iterations reached"

    def record(F_now, gain, w, cl, step_now):
        rows["objective"].append(F_now)
        rows["gain"].append(gain)
        rows["mass"].append(float(rho @ g))
        rows["step"].append(step_now)
        rows["cluster"].append(cl)
        eig_rows.append(w[: cfg.extra_eigs])

    def proposals(rho):
        """Sharpening proposals: tail snapping and full binarization.

        Tail snapping removes the low positive values the mass projection
        sprinkles over the free set. Binarization fills vertices by
        decreasing density until the mass is reached (one fractional rim
        value survives); it turns a smeared indicator into a clean one and
        is rejected by the merit guard wherever the optimum is a genuine
        density.
        """
        snapped = np.where(rho < cfg.cleanup_snap, 0.0,
                           np.where(rho > 1.0 - cfg.cleanup_snap, 1.0, rho))
        if np.any(snapped != rho):
            yield snapped, snapped == 0.0

        order = np.argsort(-rho, kind="stable")
        cum = np.cumsum(g[order])
        cut = int(np.searchsorted(cum, cfg.target_mass))
        binary = np.zeros_like(rho)
        binary[order[: cut + 1]] = 1.0
        if cfg.exclusion_mask is not None:
            binary[np.asarray(cfg.exclusion_mask, dtype=bool)] = 0.0
        yield binary, binary == 0.0

    def try_cleanup(rho, F, w, ctx, merit_of, eps, cluster):
        for raw, dead in proposals(rho):
            if cfg.exclusion_mask is not None:
                dead = dead | np.asarray(cfg.exclusion_mask, dtype=bool)
            try:
                cleaned = project_feasible(raw, g, cfg.target_mass, dead)
                F_c, _, w_c, ctx_c = objective(cleaned, cluster=cluster, epsilon=eps)
            except (FeasibilityError, ConvergenceError):
                continue
            merit_c = merit_of(F_c, w_c)
            if merit_c >= F:
                rho, F, w, ctx = cleaned, merit_c, w_c, ctx_c
        return rho, F, w, ctx

    for phase, iters in (("cluster", cfg.max_iters), ("polish", cfg.polish_iters)):
        if phase == "cluster":
            eps = None  # objective default
            merit_of = lambda F_val, w_val: F_val
            F, cluster, w, ctx = objective(rho)
        else:
            # plain mu_k at a tight regularization: residual low-density dust
            # depresses this merit directly, so the ascent removes it
            eps = min(cfg.epsilon, cfg.polish_epsilon)
            merit_of = lambda F_val, w_val: w_val[0]
            cluster = 1
            try:
                _, _, w, ctx = objective(rho, cluster=1, epsilon=eps)
            except ConvergenceError:
                message = "polish skipped: tight-eps pencil unsolvable"
                break
            F = w[0]
            message = "max iterations reached"
        step = None
        stale = 0
        for it in range(iters):
            grads = gradients(rho, w, ctx, cluster)
            direction = smoothed_min_gradient(w[:cluster], grads, cfg.p)
            gnorm = np.abs(direction).max()
            if gnorm == 0.0:
                message = "zero gradient"
                break
            if step is None:
                step = cfg.step_init_move / gnorm

            accepted = False
            for _ in range(cfg.max_backtracks):
                trial = project_feasible(rho + step * direction, g, cfg.target_mass,
                                         cfg.exclusion_mask)
                try:
                    # merit comparison uses this iteration's cluster on both sides
                    F_trial, _, w_t, ctx_t = objective(trial, cluster=cluster,
                                                       epsilon=eps)
                except ConvergenceError:
                    # an unsolvable trial pencil is a state to step away from
                    step *= cfg.step_shrink
                    continue
                merit_trial = merit_of(F_trial, w_t)
                if merit_trial >= F:
                    accepted = True
                    break
                step *= cfg.step_shrink
            if not accepted:
                message = "line search exhausted"
                break

            gain = merit_trial - F
            rho, w, ctx = trial, w_t, ctx_t
            if phase == "cluster":
                # re-detect the cluster on the accepted iterate
                cluster = cluster_size(w, 0, cfg.cluster_rel_gap * w[0])
                F = smoothed_min(w[:cluster], cfg.p)
            else:
                F = w[0]
            record(F, gain, w, cluster, step)
            step *= cfg.step_grow

            if cfg.cleanup_period and (it + 1) % cfg.cleanup_period == 0:
                rho, F, w, ctx = try_cleanup(rho, F, w, ctx, merit_of, eps, cluster)
                if phase == "cluster":
                    cluster = cluster_size(w, 0, cfg.cluster_rel_gap * w[0])
                    F = smoothed_min(w[:cluster], cfg.p)

            stale = stale + 1 if gain <= cfg.ftol * max(abs(F), 1.0) else 0
            if stale >= cfg.patience:
                message = "objective plateau"
                break
        rho, F, w, ctx = try_cleanup(rho, F, w, ctx, merit_of, eps, cluster)

    trace = OptTrace(
        objective=np.asarray(rows["objective"]),
        gain=np.asarray(rows["gain"]),
        eigenvalues=np.asarray(eig_rows) if eig_rows else np.empty((0, cfg.extra_eigs)),
        mass=np.asarray(rows["mass"]),
        step=np.asarray(rows["step"]),
        cluster=np.asarray(rows["cluster"], dtype=int),
        restart=restart_idx,
        best_objective=F,
        final_value=w[0],
        message=message,
    )
    return rho, trace
