"""Command-line front end.

Subcommands: helicoid, lift, solve, trace, period-scan, period1, period2,
knoid.  Every run resolves its configuration (JSON file plus flag
overrides), writes a manifest next to the outputs, and renders figures
alongside the delimited files unless --no-figures is given.  Exit codes:
0 success, 2 invalid input, 3 solver non-convergence.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import exporters, figures
from .errors import PreconditionError, SolverError
from .fibration import (
    BaseLoop,
    Chart,
    ManifoldParams,
    holonomy,
    horizontal_lift,
    nil_symmetric,
)
from . import helicoid as hel
from . import periods as per
from .hyperbolic import theta_from_twist
from .mc_graph import GraphDomain, corner_twist_profile, edge_trace, residual, solve
from .sister import curve_k_t

EXIT_OK = 0
EXIT_PRECONDITION = 2
EXIT_SOLVER = 3


def _default_jobs() -> int:
    try:
        return max(1, int(os.environ.get("CMC_FORGE_JOBS", "1")))
    except ValueError:
        return 1


def _resolve_config(args, keys) -> dict:
    config = {}
    if getattr(args, "config", None):
        config.update(json.loads(Path(args.config).read_text()))
    for key in keys:
        val = getattr(args, key.replace("-", "_"), None)
        if val is not None:
            config[key] = val
    return config


def _outdir(args) -> Path:
    out = Path(getattr(args, "out", None) or ".")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _pipeline_config(config: dict) -> per.PipelineConfig:
    cfg = per.PipelineConfig()
    for key in ("grid_n", "n0", "n_max", "n_stab_tol", "newton_tol",
                "period_tol", "angle_tol", "gb_tol", "a_ref", "max_iter"):
        if key in config:
            setattr(cfg, key, type(getattr(cfg, key))(config[key]))
    return cfg


def cmd_helicoid(args) -> int:
    config = _resolve_config(args, ["alpha", "width", "umax", "out"])
    out = _outdir(args)
    if config.get("alpha") is None and config.get("width") is None:
        print("error: provide --alpha or --width", file=sys.stderr)
        return EXIT_PRECONDITION
    alpha = config.get("alpha")
    if alpha is None:
        alpha = hel.alpha_for_width(float(config["width"]))
        config["alpha"] = alpha
    model = hel.build(float(alpha), config.get("umax"))
    exporters.helicoid_tables_to_csv(out / "helicoid_tables.csv", model)
    exporters.helicoid_to_obj(out / "helicoid.obj", model)
    exporters.write_json(out / "helicoid.json", {
        "alpha": model.alpha, "U": model.U, "width": model.width,
        "u_max": model.u_max,
        "U_elliptic": hel.u_of_alpha(model.alpha),
    })
    exporters.write_manifest(out / "manifest.json", "helicoid", config,
                             {"ode_tol": 1e-12})
    if not args.no_figures:
        figures.helicoid_figure(out / "helicoid.png", model)
    print(f"pitch alpha = {model.alpha:.6f}, U = {model.U:.6f}, "
          f"width = {model.width:.6f}")
    return EXIT_OK


def cmd_lift(args) -> int:
    config = _resolve_config(args, ["loop", "radius", "side", "kappa", "tau",
                                    "z0", "samples", "out"])
    out = _outdir(args)
    kappa = float(config.get("kappa", 0.0))
    tau = float(config.get("tau", 0.5))
    params = ManifoldParams(kappa=kappa, tau=tau)
    kind = config.get("loop", "circle")
    n = int(config.get("samples", 1024))
    if kind == "circle":
        loop = BaseLoop.circle(radius=float(config.get("radius", 1.0)), n=n)
    elif kind == "square":
        loop = BaseLoop.square(side=float(config.get("side", 1.0)),
                               samples_per_edge=max(16, n // 4))
    else:
        pts = np.loadtxt(kind, delimiter=",")
        loop = BaseLoop(pts)
    lifted = horizontal_lift(params, loop, float(config.get("z0", 0.0)))
    hol = holonomy(params, loop)
    gap = float(lifted[-1, 2] - lifted[0, 2])
    exporters.lifted_loop_to_csv(out / "lift.csv", lifted)
    exporters.write_json(out / "lift.json", {
        "holonomy": hol, "lift_displacement": gap,
        "mismatch": abs(hol - gap),
    })
    exporters.write_manifest(out / "manifest.json", "lift", config,
                             {"lift_tol": 1e-8})
    if not args.no_figures:
        import matplotlib.pyplot as plt

        fig, axes = plt.subplots(1, 2, figsize=(8, 3.2))
        axes[0].plot(lifted[:, 0], lifted[:, 1], lw=0.9)
        axes[0].set_aspect("equal")
        axes[0].set_title("base loop")
        axes[1].plot(lifted[:, 2], lw=0.9)
        axes[1].set_title("lift height")
        fig.savefig(out / "lift.png", dpi=150, bbox_inches="tight")
        plt.close(fig)
    print(f"holonomy = {hol:.8f}, lift displacement = {gap:.8f}")
    return EXIT_OK


def _preset_domain(config):
    preset = config.get("preset", "square-affine")
    h = float(config.get("h", 1.0 / 32))
    params = nil_symmetric()
    H = 0.0
    if preset == "square-affine":
        fn = lambda x, y: 1.0 + 2.0 * x - 3.0 * y
        params = ManifoldParams(0.0, 0.0)
        dom = GraphDomain([(0, 0), (1, 0), (1, 1), (0, 1)], h, [fn] * 4)
    elif preset == "nil-xy":
        fn = lambda x, y: -0.5 * x * y
        dom = GraphDomain([(0, 0), (1, 0), (1, 1), (0, 1)], h, [fn] * 4)
    elif preset == "sphere-cap":
        fn = lambda x, y: np.sqrt(4.0 - x * x - y * y)
        th = np.linspace(0.0, 2 * np.pi, 721)[:-1]
        poly = np.stack([np.cos(th), np.sin(th)], axis=1)
        params = ManifoldParams(0.0, 0.0)
        H = -0.5
        dom = GraphDomain(poly, h, [fn] * len(poly))
    elif preset == "knoid":
        spec = per.ContourSpec(float(config.get("a", 1.0)),
                               float(config.get("b", 0.2)),
                               float(config.get("phi", math.pi / 3)),
                               float(config.get("n", 3.0)))
        contour = per.build_contour(spec)
        dom = GraphDomain(contour.work_polygon, h, contour.edge_data,
                          frame=contour.frame,
                          vertical_vertices=contour.vertical_vertices)
    else:
        raise PreconditionError(f"unknown preset '{preset}'")
    return dom, params, H


def cmd_solve(args) -> int:
    config = _resolve_config(args, ["preset", "h", "tol", "a", "b", "phi",
                                    "n", "seed", "out"])
    out = _outdir(args)
    dom, params, H = _preset_domain(config)
    field = solve(dom, params, H, {"tol": float(config.get("tol", 1e-8)),
                                   "seed": config.get("seed", "mean")})
    res = float(np.max(np.abs(residual(field))))
    exporters.field_to_csv(out / "field.csv", field)
    exporters.field_to_obj(out / "field.obj", field)
    exporters.write_json(out / "solve.json", {
        "preset": config.get("preset", "square-affine"),
        "residual_max": res, "nodes": int(dom.n_nodes),
    })
    exporters.write_manifest(out / "manifest.json", "solve", config,
                             {"tol": float(config.get("tol", 1e-8))})
    if not args.no_figures:
        figures.field_figure(out / "field.png", field,
                             config.get("preset", ""))
    print(f"solved {dom.n_nodes} nodes, max residual {res:.3e}")
    return EXIT_OK


def cmd_trace(args) -> int:
    config = _resolve_config(args, ["preset", "h", "a", "b", "phi", "n",
                                    "edge", "what", "out"])
    out = _outdir(args)
    config.setdefault("preset", "knoid")
    dom, params, H = _preset_domain(config)
    field = solve(dom, params, H, {"tol": float(config.get("tol", 1e-8))})
    what = config.get("what", "conormal")
    if what == "conormal":
        tr = edge_trace(field, int(config.get("edge", 0)))
        exporters.trace_to_csv(out / "trace.csv", tr)
        exporters.mirror_profile_to_csv(out / "mirror_profile.csv", tr)
        exporters.write_json(out / "trace.json", {"period": tr.integral()})
        if not args.no_figures:
            figures.trace_figure(out / "trace.png", tr)
        print(f"edge period integral = {tr.integral():.8f}")
    elif what == "twist":
        b = float(config.get("b", 0.2))
        heights = np.linspace(0.05, 0.95, 19) * b
        profile = corner_twist_profile(field, 0, heights)
        theta = theta_from_twist(profile)
        exporters.write_csv(out / "twist.csv", "t,alpha,theta",
                            [profile.t, profile.alpha,
                             theta_from_twist(profile)])
        if not args.no_figures:
            figures.profile_figure(out / "twist.png", profile, theta)
        print(f"total twist = {profile.total:.8f} over length {profile.length:.8f}")
    elif what == "frame":
        data = curve_k_t(field, int(config.get("edge", 0)))
        exporters.frame_data_to_csv(out / "frame.csv", data)
        print(f"edge frame data over length {data.length:.6f}")
    else:
        raise PreconditionError(f"unknown trace kind '{what}'")
    exporters.write_manifest(out / "manifest.json", "trace", config, {})
    return EXIT_OK


def _scan_point(payload):
    b, a, phi, cfg_kwargs = payload
    cfg = per.PipelineConfig(**cfg_kwargs)
    ev = per.solve_truncated(per.ContourSpec(a, b, phi, cfg.n0), cfg)
    return b, ev.p


def cmd_period_scan(args) -> int:
    config = _resolve_config(args, ["a", "phi", "b-range", "points", "jobs",
                                    "grid-n", "n-max", "out"])
    out = _outdir(args)
    a = float(config.get("a", 1.0))
    phi = float(config.get("phi", math.pi / 3))
    rng = config.get("b-range", "0.05:0.5")
    parts = [float(v) for v in str(rng).split(":")]
    if len(parts) == 2:
        lo, hi = parts
        npts = int(config.get("points", 8))
    elif len(parts) == 3:
        lo, hi, npts = parts[0], parts[1], int(parts[2])
    else:
        print("error: --b-range must be lo:hi or lo:hi:n", file=sys.stderr)
        return EXIT_PRECONDITION
    if not (0.0 < lo < hi) or npts < 1:
        print("error: empty or invalid scan range", file=sys.stderr)
        return EXIT_PRECONDITION
    bs = np.linspace(lo, hi, npts)

    checkpoint = out / "scan_checkpoint.jsonl"
    done = {}
    if args.resume and checkpoint.exists():
        for line in checkpoint.read_text().splitlines():
            row = json.loads(line)
            done[round(row["b"], 12)] = row["p"]
    todo = [b for b in bs if round(float(b), 12) not in done]

    cfg_kwargs = {"grid_n": int(config.get("grid-n", 96)),
                  "n_max": float(config.get("n-max", 4.0))}
    jobs = int(config.get("jobs", _default_jobs()))
    payloads = [(float(b), a, phi, cfg_kwargs) for b in todo]
    results = []
    if jobs > 1 and len(payloads) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_scan_point, payloads))
    else:
        results = [_scan_point(p) for p in payloads]
    with checkpoint.open("a") as fh:
        for b, p in results:
            fh.write(json.dumps({"b": b, "p": p}) + "\n")
            done[round(b, 12)] = p

    bs_sorted = sorted(done)
    ps_sorted = [done[b] for b in bs_sorted]
    exporters.write_csv(out / "period_scan.csv", "b,p", [bs_sorted, ps_sorted])
    exporters.write_manifest(out / "manifest.json", "period-scan", config,
                             {"n_stab_tol": 1e-4})
    if not args.no_figures:
        figures.scan_figure(out / "period_scan.png", bs_sorted, ps_sorted)
    signs = np.sign(ps_sorted)
    changes = int(np.sum(np.abs(np.diff(signs)) > 0))
    print(f"scanned {len(bs_sorted)} points, {changes} sign change(s)")
    return EXIT_OK


def cmd_period1(args) -> int:
    config = _resolve_config(args, ["a", "phi", "grid-n", "n-max", "out"])
    out = _outdir(args)
    cfg = _pipeline_config({"grid_n": int(config.get("grid-n", 96)),
                            "n_max": float(config.get("n-max", 4.0))})
    sol = per.solve_first_period(float(config.get("a", 1.0)),
                                 float(config.get("phi", math.pi / 3)), cfg)
    exporters.write_json(out / "period1.json", {
        "a": sol.a, "phi": sol.phi, "b": sol.b, "p": sol.p,
        "bracket": list(sol.bracket), "n_used": sol.n_used,
        "h_used": sol.h_used,
    })
    exporters.write_csv(out / "period1_scan.csv", "b,p",
                        [[b for b, _ in sol.scan], [p for _, p in sol.scan]])
    exporters.write_manifest(out / "manifest.json", "period1", config,
                             {"period_tol": cfg.period_tol})
    if not args.no_figures:
        order = np.argsort([b for b, _ in sol.scan])
        figures.scan_figure(out / "period1.png",
                            np.asarray([b for b, _ in sol.scan])[order],
                            np.asarray([p for _, p in sol.scan])[order],
                            root=sol.b)
    print(f"first period closes at b = {sol.b:.6f} (p = {sol.p:.2e})")
    return EXIT_OK


def cmd_period2(args) -> int:
    config = _resolve_config(args, ["k", "grid-n", "n-max", "out"])
    out = _outdir(args)
    cfg = _pipeline_config({"grid_n": int(config.get("grid-n", 96)),
                            "n_max": float(config.get("n-max", 4.0))})
    sol = per.solve_second_period(int(config.get("k", 3)), cfg)
    exporters.write_json(out / "period2.json", {
        "k": sol.k, "phi": sol.phi, "b": sol.b, "A": sol.angle,
        "areaV": sol.area_v, "b0": sol.b0,
        "endpoint_signs": list(sol.endpoint_signs),
    })
    exporters.write_csv(out / "period2_visits.csv", "b,A",
                        [[b for b, _ in sol.visited],
                         [a for _, a in sol.visited]])
    exporters.write_manifest(out / "manifest.json", "period2", config,
                             {"angle_tol": cfg.angle_tol})
    if not args.no_figures:
        order = np.argsort([b for b, _ in sol.visited])
        figures.scan_figure(out / "period2.png",
                            np.asarray([b for b, _ in sol.visited])[order],
                            np.asarray([a for _, a in sol.visited])[order],
                            root=sol.b)
    print(f"angular period pi/{sol.k} at b = {sol.b:.6f}, phi = {sol.phi:.6f}")
    return EXIT_OK


def cmd_knoid(args) -> int:
    config = _resolve_config(args, ["k", "grid-n", "n-max", "a-ref", "out"])
    out = _outdir(args)
    k = int(config.get("k", 3))
    cfg = _pipeline_config({"grid_n": int(config.get("grid-n", 96)),
                            "n_max": float(config.get("n-max", 4.0)),
                            "a_ref": float(config.get("a-ref", 1.0))})
    if args.dry_run:
        resolved = dict(config)
        resolved.update({"k": k, "grid_n": cfg.grid_n, "n_max": cfg.n_max,
                         "a_ref": cfg.a_ref})
        print(json.dumps(resolved, indent=2, sort_keys=True))
        return EXIT_OK
    if k < 3:
        print("error: the construction needs k >= 3", file=sys.stderr)
        return EXIT_PRECONDITION
    assembled = per.assemble_report(k, cfg)
    rep = assembled.report
    exporters.write_json(out / "report.json", rep.to_dict())
    exporters.field_to_obj(out / "fundamental_piece.obj", assembled.field)
    exporters.field_to_csv(out / "fundamental_piece.csv", assembled.field)
    exporters.curve_to_csv(out / "mirror_curve.csv", assembled.angular.curve)
    exporters.mirror_profile_to_csv(out / "neck_mirror_profile.csv",
                                    assembled.trace)
    exporters.write_csv(out / "twist_profile.csv", "t,alpha",
                        [assembled.profile.t, assembled.profile.alpha])
    exporters.write_manifest(out / "manifest.json", "knoid", config, {
        "period_tol": cfg.period_tol, "angle_tol": cfg.angle_tol,
        "gb_tol": cfg.gb_tol,
    })
    if not args.no_figures:
        figures.mirror_curve_figure(out / "mirror_curve.png",
                                    assembled.angular.curve,
                                    assembled.angular.meeting_point)
        figures.field_figure(out / "fundamental_piece.png", assembled.field,
                             f"k = {k} fundamental piece")
        figures.profile_figure(out / "twist_profile.png", assembled.profile)
    print(f"k = {k}: a = {rep.a:.5f}, b = {rep.b:.5f}, phi = {rep.phi:.5f}, "
          f"p = {rep.p:.2e}, A = {rep.A:.6f} (target {math.pi / k:.6f}), "
          f"chi = {rep.chi}, genus = {rep.genus}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cmc-forge",
        description="Minimal graphs over hinge contours and their periods")
    parser.add_argument("--config", help="JSON config file (flags override)")
    parser.add_argument("--out", help="output directory (default .)")
    parser.add_argument("--no-figures", action="store_true",
                        help="skip PNG rendering next to data files")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("helicoid", help="build one helicoid model")
    p.add_argument("--alpha", type=float)
    p.add_argument("--width", type=float)
    p.add_argument("--umax", type=float)
    p.set_defaults(func=cmd_helicoid)

    p = sub.add_parser("lift", help="horizontal lift and holonomy of a loop")
    p.add_argument("--loop", default="circle",
                   help="circle | square | path to x,y csv")
    p.add_argument("--radius", type=float)
    p.add_argument("--side", type=float)
    p.add_argument("--kappa", type=float)
    p.add_argument("--tau", type=float)
    p.add_argument("--z0", type=float)
    p.add_argument("--samples", type=int)
    p.set_defaults(func=cmd_lift)

    p = sub.add_parser("solve", help="solve a graph preset")
    p.add_argument("--preset", choices=["square-affine", "nil-xy",
                                        "sphere-cap", "knoid"])
    p.add_argument("--h", type=float)
    p.add_argument("--tol", type=float)
    p.add_argument("--a", type=float)
    p.add_argument("--b", type=float)
    p.add_argument("--phi", type=float)
    p.add_argument("--n", type=float)
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("trace", help="boundary traces of a solved preset")
    p.add_argument("--preset", choices=["square-affine", "nil-xy", "knoid"])
    p.add_argument("--what", choices=["conormal", "twist", "frame"])
    p.add_argument("--edge", type=int)
    p.add_argument("--h", type=float)
    p.add_argument("--a", type=float)
    p.add_argument("--b", type=float)
    p.add_argument("--phi", type=float)
    p.add_argument("--n", type=float)
    p.set_defaults(func=cmd_trace)

    p = sub.add_parser("period-scan", help="tabulate p(b) over a range")
    p.add_argument("--a", type=float)
    p.add_argument("--phi", type=float)
    p.add_argument("--b-range", dest="b_range")
    p.add_argument("--points", type=int)
    p.add_argument("--jobs", type=int)
    p.add_argument("--grid-n", dest="grid_n", type=int)
    p.add_argument("--n-max", dest="n_max", type=float)
    p.add_argument("--resume", action="store_true",
                   help="skip b values already in the checkpoint")
    p.set_defaults(func=cmd_period_scan)

    p = sub.add_parser("period1", help="solve the vertical period p(b) = 0")
    p.add_argument("--a", type=float)
    p.add_argument("--phi", type=float)
    p.add_argument("--grid-n", dest="grid_n", type=int)
    p.add_argument("--n-max", dest="n_max", type=float)
    p.set_defaults(func=cmd_period1)

    p = sub.add_parser("period2", help="solve the angular period A = pi/k")
    p.add_argument("--k", type=int)
    p.add_argument("--grid-n", dest="grid_n", type=int)
    p.add_argument("--n-max", dest="n_max", type=float)
    p.set_defaults(func=cmd_period2)

    p = sub.add_parser("knoid", help="full pipeline for one symmetry order")
    p.add_argument("--k", type=int)
    p.add_argument("--grid-n", dest="grid_n", type=int)
    p.add_argument("--n-max", dest="n_max", type=float)
    p.add_argument("--a-ref", dest="a_ref", type=float)
    p.add_argument("--dry-run", action="store_true",
                   help="print the resolved configuration and stop")
    p.set_defaults(func=cmd_knoid)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except PreconditionError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PRECONDITION
    except SolverError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        if exc.diagnostics:
            print(json.dumps(exc.diagnostics, default=str)[:2000],
                  file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
