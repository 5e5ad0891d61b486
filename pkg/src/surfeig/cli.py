"""Command-line driver: meshes, reference curves, optimizations, diagnostics.

Every command writes deterministic CSV (17 significant digits, LF endings)
plus matplotlib figures beside them (suppress with --no-figures), and MEDIT
mesh/.sol files for fields. Exit codes: 0 ok, 1 numerical failure, 2 usage.
"""

import argparse
import csv
import logging
import sys
from pathlib import Path

import numpy as np

from . import figures
from .audit import audit_product, strichartz_bound
from .axisym import (cap_reference_mu1, dispersion_ratio,
                     optimize_density_1d, union_of_balls_mu)
from .density import DensityOptConfig, optimize_density_refined
from .eigsolve import ConvergenceError
from .levelset import LevelSetConfig, evaluate_domain, optimize_levelset
from .medit import read_medit_mesh, write_medit_mesh, write_medit_sol
from .mesh import geodesic_cap_field, make_icosphere, make_torus, total_area

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_NUMERICAL = 1
EXIT_USAGE = 2


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "pass" if x else "fail"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return f"{float(x):.17g}"


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def _write_trace(path, trace, k, extra):
    header = ["iteration", "objective", "gain"]
    header += [f"mu_{k + i}" for i in range(extra)]
    header += ["mass", "step", "cluster"]
    rows = []
    for i in range(trace.iterations):
        rows.append([i, trace.objective[i], trace.gain[i],
                     *trace.eigenvalues[i], trace.mass[i], trace.step[i],
                     trace.cluster[i]])
    _write_csv(path, header, rows)


def _summary(m, mu, k):
    bound_mu = strichartz_bound(k) / m
    print(f"m={_fmt(m)} mu_{k}={_fmt(mu)} bound={_fmt(bound_mu)}")


def _parse_masses(text):
    return [float(tok) for tok in text.split(",") if tok.strip()]


def _load_config_file(path):
    values = {}
    for line_no, line in enumerate(Path(path).read_text().splitlines(), 1):
        body = line.split("#")[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ValueError(f"{path}:{line_no}: expected key = value")
        key, _, val = body.partition("=")
        values[key.strip().replace("-", "_")] = val.strip()
    return values


def _apply_config_file(args):
    """Fill argparse namespace entries that are still None from the file."""
    if not getattr(args, "config", None):
        return
    file_vals = _load_config_file(args.config)
    for key, raw in file_vals.items():
        if not hasattr(args, key):
            continue
        if getattr(args, key) is None:
            setattr(args, key, raw)


def _build_sphere_levels(spec_text):
    levels = [int(tok) for tok in str(spec_text).split(",") if tok.strip()]
    return [make_icosphere(level) for level in levels]


def _resolve_mesh(args):
    if getattr(args, "mesh_file", None):
        return read_medit_mesh(args.mesh_file)
    if args.surface == "torus":
        return make_torus(float(args.R), float(args.r), int(args.nu), int(args.nv))
    return make_icosphere(int(args.subdivisions))


def _out_dir(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_mesh(args):
    out = _out_dir(args)
    mesh = _resolve_mesh(args)
    path = out / "surface.mesh"
    write_medit_mesh(mesh, path)
    print(f"wrote {path} ({mesh.num_vertices} vertices, "
          f"{mesh.num_triangles} triangles, area={_fmt(total_area(mesh))})")
    return EXIT_OK


def cmd_reference(args):
    out = _out_dir(args)
    k = int(args.k)
    masses = _parse_masses(args.masses)
    grid_n = int(args.grid_n or 10000)
    rows = []
    mu_caps, mu_balls = [], []
    for m in masses:
        mu_cap = cap_reference_mu1(m, grid_n)
        mu_kb = union_of_balls_mu(m, k, grid_n)
        bound, ok = audit_product(m, mu_kb, k)
        rows.append([m, mu_cap, mu_kb, bound / m, m * mu_kb, ok])
        mu_caps.append(mu_cap)
        mu_balls.append(mu_kb)
        _summary(m, mu_kb, k)
    path = out / "reference.csv"
    _write_csv(path, ["m", "mu_cap", "mu_kballs", "bound_mu", "product", "audit"], rows)
    if not args.no_figures:
        figures.save_curves(out / "reference.png", masses,
                            {"single cap": mu_caps, f"{k} balls": mu_balls},
                            title=f"reference curves, k={k}")
    print(f"wrote {path}")
    return EXIT_OK


def cmd_optimize_density(args):
    out = _out_dir(args)
    k = int(args.k)
    masses = _parse_masses(args.masses if args.masses else args.mass)
    if args.surface == "torus" or getattr(args, "mesh_file", None):
        meshes = [_resolve_mesh(args)]
    else:
        meshes = _build_sphere_levels(args.levels or "3,4")

    status = EXIT_OK
    summary_rows = []
    for m in masses:
        cfg = DensityOptConfig(
            target_mass=m, k=k,
            epsilon=float(args.epsilon), p=float(args.p),
            restarts=int(args.restarts), seed=int(args.seed),
            max_iters=int(args.max_iters), polish_iters=int(args.polish_iters),
        )
        mask_builder = None
        if args.exclude_ball:
            if meshes[0].kind != "sphere":
                print("--exclude-ball requires a sphere mesh", file=sys.stderr)
                return EXIT_USAGE

            def mask_builder(mesh, m=m):
                return geodesic_cap_field(mesh, [0.0, 0.0, 1.0], m).values > 0.5

        tag = f"k{k}_m{m:g}"
        try:
            rho, trace = optimize_density_refined(
                meshes, cfg, mask_builder,
                refine_iters=int(args.refine_iters) if args.refine_iters else None)
        except ConvergenceError as exc:
            print(f"numerical failure at m={m}: {exc}", file=sys.stderr)
            (out / f"trace_{tag}.csv.partial").write_text("")
            status = EXIT_NUMERICAL
            continue

        mesh = meshes[-1]
        write_medit_mesh(mesh, out / f"density_{tag}.mesh")
        write_medit_sol(rho.values, out / f"density_{tag}.sol")
        _write_trace(out / f"trace_{tag}.csv", trace, k, cfg.extra_eigs)
        mu = trace.final_value
        bound, ok = audit_product(m, mu, k)
        if not ok:
            logger.warning("bound audit flag raised at m=%g (product %.6g > %.6g)",
                           m, m * mu, bound)
        summary_rows.append([m, mu, bound / m, m * mu, ok])
        _summary(m, mu, k)
        if not args.no_figures:
            figures.save_trace(out / f"trace_{tag}.png", trace,
                               title=f"density optimization {tag}")
            figures.save_surface(out / f"density_{tag}.png", mesh, rho.values,
                                 title=f"optimal density {tag}")
    _write_csv(out / "summary.csv", ["m", "mu_k", "bound_mu", "product", "audit"],
               summary_rows)
    return status


def cmd_optimize_density_1d(args):
    out = _out_dir(args)
    masses = _parse_masses(args.masses if args.masses else args.mass)
    grid_n = int(args.grid_n or 400)
    status = EXIT_OK
    summary_rows = []
    for m in masses:
        cfg = DensityOptConfig(
            target_mass=m, epsilon=float(args.epsilon), p=float(args.p),
            restarts=int(args.restarts), seed=int(args.seed),
            max_iters=int(args.max_iters), polish_iters=int(args.polish_iters),
        )
        tag = f"m{m:g}"
        try:
            rho, trace = optimize_density_1d(m, grid_n, cfg)
        except ConvergenceError as exc:
            print(f"numerical failure at m={m}: {exc}", file=sys.stderr)
            (out / f"trace1d_{tag}.csv.partial").write_text("")
            status = EXIT_NUMERICAL
            continue
        _write_csv(out / f"profile_{tag}.csv", ["theta", "rho"],
                   list(zip(rho.grid, rho.values)))
        _write_trace(out / f"trace1d_{tag}.csv", trace, 1, cfg.extra_eigs)
        mu = trace.final_value
        bound, ok = audit_product(m, mu, 1)
        summary_rows.append([m, mu, bound / m, m * mu, ok])
        _summary(m, mu, 1)
        if not args.no_figures:
            figures.save_profile(out / f"profile_{tag}.png", rho.grid, rho.values,
                                 title=f"latitude profile m={m:g}")
            figures.save_trace(out / f"trace1d_{tag}.png", trace,
                               title=f"1D optimization m={m:g}")
    _write_csv(out / "summary.csv", ["m", "mu_1", "bound_mu", "product", "audit"],
               summary_rows)
    return status


def cmd_diagnose_dispersion(args):
    out = _out_dir(args)
    masses = _parse_masses(args.masses)
    n_list = [int(tok) for tok in args.n_list.split(",")]
    rows = []
    curves = {}
    for m in masses:
        cfg = DensityOptConfig(
            target_mass=m, epsilon=float(args.epsilon),
            restarts=int(args.restarts), seed=int(args.seed),
            max_iters=int(args.max_iters), polish_iters=int(args.polish_iters),
        )
        ratios = dispersion_ratio(m, n_list, cfg)
        curves[m] = [ratios[n] for n in n_list]
        for n in n_list:
            rows.append([m, n, ratios[n]])
        print(f"m={_fmt(m)} dispersion({n_list[-1]})={_fmt(ratios[n_list[-1]])}")
    path = out / "dispersion.csv"
    _write_csv(path, ["m", "N", "dispersion_ratio"], rows)
    if not args.no_figures:
        figures.save_dispersion(out / "dispersion.png", n_list, curves)
    print(f"wrote {path}")
    return EXIT_OK


def cmd_optimize_levelset(args):
    out = _out_dir(args)
    k = int(args.k)
    mesh = _resolve_mesh(args)
    cfg = LevelSetConfig(
        target_area=float(args.target_area), k=k,
        epsilon=float(args.epsilon), gamma=float(args.gamma),
        area_penalty=float(args.area_penalty),
        n_steps=int(args.steps), adapt_max_steps=int(args.adapt_steps),
        trig_p=int(args.trig_p), trig_q=int(args.trig_q),
        restarts=int(args.restarts), seed=int(args.seed),
        alpha=float(args.alpha),
    )
    tag = f"k{k}_a{cfg.target_area:g}"
    try:
        ls, trace = optimize_levelset(mesh, cfg)
        mu, area = evaluate_domain(mesh, ls, k)
    except ConvergenceError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        (out / f"trace_ls_{tag}.csv.partial").write_text("")
        return EXIT_NUMERICAL
    if trace.message.startswith("step"):
        # eigensolver died mid-run; flush what we have and flag it
        _write_trace(out / f"trace_ls_{tag}.csv.partial", trace, k, cfg.extra_eigs)
        print(f"numerical failure mid-run: {trace.message}", file=sys.stderr)
        return EXIT_NUMERICAL

    write_medit_mesh(mesh, out / f"levelset_{tag}.mesh")
    write_medit_sol(ls.phi, out / f"levelset_{tag}.sol")
    _write_trace(out / f"trace_ls_{tag}.csv", trace, k, cfg.extra_eigs)
    bound, ok = audit_product(area, mu, k)
    _write_csv(out / "summary.csv", ["area", "mu_k", "bound_mu", "product", "audit"],
               [[area, mu, bound / area, area * mu, ok]])
    _summary(area, mu, k)
    if not args.no_figures:
        figures.save_trace(out / f"trace_ls_{tag}.png", trace,
                           title=f"level-set optimization {tag}")
        figures.save_surface(out / f"levelset_{tag}.png", mesh,
                             (ls.phi < 0).astype(float),
                             title=f"optimal domain {tag}", cmap="viridis")
    if not ok:
        print(f"bound audit FAILED: area*mu = {_fmt(area * mu)} > {_fmt(bound)}",
              file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


def _add_common(sub, mesh_opts=True):
    sub.add_argument("--out", default="out", help="output directory")
    sub.add_argument("--config", help="flat key=value config file")
    sub.add_argument("--seed", default=None)
    sub.add_argument("--no-figures", action="store_true",
                     help="skip PNG rendering next to the CSV outputs")
    if mesh_opts:
        sub.add_argument("--surface", choices=["sphere", "torus"], default="sphere")
        sub.add_argument("--subdivisions", default=None, help="icosphere depth")
        sub.add_argument("--mesh-file", help="external MEDIT mesh instead")
        sub.add_argument("--R", default=None, help="torus major radius")
        sub.add_argument("--r", default=None, help="torus minor radius")
        sub.add_argument("--nu", default=None)
        sub.add_argument("--nv", default=None)


def _add_opt_common(sub):
    sub.add_argument("--epsilon", default=None)
    sub.add_argument("--p", default=None, help="smoothed-min exponent")
    sub.add_argument("--restarts", default=None)
    sub.add_argument("--max-iters", default=None)
    sub.add_argument("--polish-iters", default=None)


_DEFAULTS = {
    "seed": "0", "epsilon": "1e-4", "p": "20", "restarts": "2",
    "max_iters": "200", "polish_iters": "100", "subdivisions": "4",
    "R": "2.0", "r": "1.0", "nu": "128", "nv": "128",
    "grid_n": None, "levels": None, "refine_iters": None,
    "masses": None, "mass": None,
    "k": "1", "n_list": "100,200,400,800",
    "gamma": "3e-2", "area_penalty": "5", "steps": "600",
    "adapt_steps": "200", "trig_p": "2", "trig_q": "2", "alpha": "0.1",
    "target_area": None,
}


def _finalize(args):
    _apply_config_file(args)
    for key, default in _DEFAULTS.items():
        if hasattr(args, key) and getattr(args, key) is None:
            setattr(args, key, default)


def build_parser():
    parser = argparse.ArgumentParser(
        prog="surfeig",
        description="Neumann eigenvalue maximization over densities and "
                    "domains on triangulated surfaces",
    )
    subs = parser.add_subparsers(dest="command", required=True)

    p_mesh = subs.add_parser("mesh", help="generate and export a surface mesh")
    _add_common(p_mesh)
    p_mesh.set_defaults(func=cmd_mesh)

    p_ref = subs.add_parser("reference", help="cap and k-ball reference curves")
    _add_common(p_ref, mesh_opts=False)
    p_ref.add_argument("--k", default=None)
    p_ref.add_argument("--masses", required=True, help="comma-separated masses")
    p_ref.add_argument("--grid-n", default=None)
    p_ref.set_defaults(func=cmd_reference)

    p_den = subs.add_parser("optimize-density", help="density relaxation on a surface")
    _add_common(p_den)
    _add_opt_common(p_den)
    p_den.add_argument("--k", default=None)
    p_den.add_argument("--mass", default=None)
    p_den.add_argument("--masses", default=None, help="sweep list")
    p_den.add_argument("--levels", default=None,
                       help="icosphere refinement schedule, e.g. 3,4")
    p_den.add_argument("--refine-iters", default=None)
    p_den.add_argument("--exclude-ball", action="store_true",
                       help="force the density to vanish on a polar cap of the same mass")
    p_den.set_defaults(func=cmd_optimize_density)

    p_1d = subs.add_parser("optimize-density-1d", help="axisymmetric 1D optimization")
    _add_common(p_1d, mesh_opts=False)
    _add_opt_common(p_1d)
    p_1d.add_argument("--mass", default=None)
    p_1d.add_argument("--masses", default=None)
    p_1d.add_argument("--grid-n", default=None)
    p_1d.set_defaults(func=cmd_optimize_density_1d)

    p_disp = subs.add_parser("diagnose-dispersion",
                             help="mesh-refinement dispersion diagnostic")
    _add_common(p_disp, mesh_opts=False)
    _add_opt_common(p_disp)
    p_disp.add_argument("--masses", required=True)
    p_disp.add_argument("--n-list", default=None)
    p_disp.set_defaults(func=cmd_diagnose_dispersion)

    p_ls = subs.add_parser("optimize-levelset", help="ersatz level-set optimization")
    _add_common(p_ls)
    p_ls.add_argument("--k", default=None)
    p_ls.add_argument("--target-area", default=None, required=False)
    p_ls.add_argument("--epsilon", default=None)
    p_ls.add_argument("--gamma", default=None)
    p_ls.add_argument("--area-penalty", default=None)
    p_ls.add_argument("--steps", default=None)
    p_ls.add_argument("--adapt-steps", default=None)
    p_ls.add_argument("--trig-p", default=None)
    p_ls.add_argument("--trig-q", default=None)
    p_ls.add_argument("--alpha", default=None)
    p_ls.add_argument("--restarts", default=None)
    p_ls.set_defaults(func=cmd_optimize_levelset)

    return parser


def main(argv=None):
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on usage errors already; normalize other codes
        return int(exc.code) if exc.code else EXIT_OK
    try:
        _finalize(args)
        if getattr(args, "target_area", None) is None and args.command == "optimize-levelset":
            parser.error("--target-area is required for optimize-levelset")
        if args.command in ("optimize-density", "optimize-density-1d") \
                and not (args.mass or args.masses):
            parser.error("--mass or --masses is required")
        return args.func(args)
    except SystemExit as exc:
        return int(exc.code) if exc.code else EXIT_USAGE
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ConvergenceError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
