"""Command line front end: tableau inspection, stability maps, experiments.

Exit codes: 0 on success, 1 when a study fails to produce usable results,
2 for configuration errors (bad flags, malformed config files).
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import svgplot
from .config import ConfigError, build_study_config, load_config
from .lab import (ExperimentReport, LabError, convergence_study,
                  edit_experiment, latent_stats, reconstruction_experiment,
                  roundtrip_study)
from .stability import (DEFAULT_WINDOW, coupled_gamma_region,
                        empirical_domain, polynomial_domain, raster_csv,
                        real_axis_boundary, zero_stability)
from .tableau import (TableauError, get_tableau, stability_polynomial)

__all__ = ["main"]

_STUDIES = {
    "convergence": convergence_study,
    "roundtrip": roundtrip_study,
    "reconstruct": reconstruction_experiment,
    "edit": edit_experiment,
    "latent": latent_stats,
}


def _out_dir(args) -> str:
    out = args.out or os.environ.get("REVODE_OUT") or "."
    os.makedirs(out, exist_ok=True)
    return out


def _parse_window(text: str):
    parts = [float(p) for p in text.split(",")]
    if len(parts) != 4:
        raise ConfigError("window must be re_min,re_max,im_min,im_max")
    return tuple(parts)


def _add_study_flags(p: argparse.ArgumentParser):
    p.add_argument("--config", help="JSON config file (strict keys)")
    p.add_argument("--solvers", help="comma list, e.g. ddim,edict:p=0.93 "
                                     "or 'all'")
    p.add_argument("--schedule", choices=["linear-beta", "cosine"],
                   help="noise schedule kind")
    p.add_argument("--field", help="field kind (rough-synthetic, gaussian, "
                                   "gaussian-mixture)")
    p.add_argument("--dim", type=int, help="state dimension")
    p.add_argument("--roughness", type=float,
                   help="global roughness multiplier in [0, 1]")
    p.add_argument("--n-list", help="comma list of step counts")
    p.add_argument("--budget", type=int, dest="nfe_budget",
                   help="shared NFE budget instead of an N ladder")
    p.add_argument("--guidance", help="comma list of guidance weights")
    p.add_argument("--strength", type=float, help="partial-inversion depth")
    p.add_argument("--seed", type=int, default=0,
                   help="base seed; fully determines all outputs")
    p.add_argument("--num-seeds", type=int, default=None,
                   help="number of consecutive seeds starting at --seed")
    p.add_argument("--separations", help="comma list of edit separations")
    p.add_argument("--edit-guidance", type=float, dest="edit_guidance")
    p.add_argument("--jobs", type=int, help="worker count (output is "
                                            "identical for any value)")
    p.add_argument("--out", help="output directory (default $REVODE_OUT or .)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="revode",
        description="Reversible ODE solver laboratory for diffusion "
                    "probability-flow sampling.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("tableau", help="print a Butcher tableau and its "
                                       "stability polynomial")
    p.add_argument("name", help="ees25, ees27, euler, midpoint, heun2, "
                                "rk3, rk4")
    p.add_argument("--x", type=float, help="free parameter for ees families")
    p.add_argument("--sign", choices=["+", "-"], default="+",
                   help="branch for ees27")
    p.add_argument("--verify", action="store_true",
                   help="re-check consistency conditions and report")
    p.add_argument("--out", help=argparse.SUPPRESS)

    p = sub.add_parser("stability", help="stability maps and root analyses")
    p.add_argument("--method", required=True,
                   help="solver kind or tableau name")
    p.add_argument("--mode", choices=["polynomial", "empirical", "gamma",
                                      "zero", "boundary"],
                   default="polynomial")
    p.add_argument("--window", default=None,
                   help="re_min,re_max,im_min,im_max "
                        f"(default {','.join(str(v) for v in DEFAULT_WINDOW)})")
    p.add_argument("--res", type=int, default=41, help="raster resolution")
    p.add_argument("--iters", type=int, default=200,
                   help="iterations per cell in empirical mode")
    p.add_argument("--zeta", type=float, default=0.999)
    p.add_argument("--gamma", type=float, default=0.96)
    p.add_argument("--base", default="euler",
                   help="base tableau for coupled schemes")
    p.add_argument("--x", type=float, help="free parameter for ees methods")
    p.add_argument("--out", help="output directory")

    for name in _STUDIES:
        p = sub.add_parser(name, help=f"run the {name} study")
        _add_study_flags(p)
    return parser


def _study_flags(args) -> dict:
    flags = {
        "solvers": args.solvers,
        "schedule": {"kind": args.schedule} if args.schedule else None,
        "field": args.field,
        "dim": args.dim,
        "roughness": args.roughness,
        "nfe_budget": args.nfe_budget,
        "strength": args.strength,
        "edit_guidance": getattr(args, "edit_guidance", None),
        "jobs": args.jobs,
    }
    if args.n_list:
        flags["n_list"] = [int(v) for v in args.n_list.split(",")]
    if args.guidance:
        flags["guidance"] = [float(v) for v in args.guidance.split(",")]
    if getattr(args, "separations", None):
        flags["separations"] = [float(v) for v in args.separations.split(",")]
    num = args.num_seeds
    if num is not None or args.seed != 0:
        flags["seeds"] = [args.seed + i for i in range(num or 1)]
    return flags


def _write_report(report: ExperimentReport, out: str, summary_extra=None):
    csv_path = os.path.join(out, f"{report.study}.csv")
    with open(csv_path, "w", encoding="utf-8") as fh:
        fh.write(report.to_csv())
    summary = json.loads(report.summary_json())
    if summary_extra:
        summary.update(summary_extra)
    json_path = os.path.join(out, f"{report.study}_summary.json")
    with open(json_path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(summary, sort_keys=True, indent=2) + "\n")
    return csv_path, json_path


def _report_svg(report: ExperimentReport, out: str):
    """One line plot per study with its natural x axis, when it has one."""
    series = {}
    if report.study in ("convergence", "roundtrip"):
        metric_x, xlabel, logx = "h", "step size h", True
    elif report.study == "reconstruction":
        metric_x, xlabel, logx = "g", "guidance weight g", False
    else:
        return None
    for r in report.rows:
        if r["metric"] not in ("terminal-error", "roundtrip-rel-error", "mse"):
            continue
        series.setdefault(r["solver"], []).append((r[metric_x], r["value"]))
    plotted = {}
    for label, pts in series.items():
        pts.sort()
        xs = [p[0] for p in pts]
        ys = [p[1] for p in pts]
        plotted[label] = (xs, ys)
    if not plotted:
        return None
    svg = svgplot.line_plot_svg(plotted, xlabel=xlabel, ylabel="error",
                                title=report.study, logx=logx, logy=True)
    path = os.path.join(out, f"{report.study}.svg")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(svg)
    return path


def _summary_extra(report: ExperimentReport) -> dict:
    per_metric = {}
    for r in report.rows:
        vals = per_metric.setdefault(r["metric"], [])
        if isinstance(r["value"], float) and np.isfinite(r["value"]):
            vals.append(r["value"])
    medians = {m: float(np.median(v)) for m, v in per_metric.items() if v}
    flags = sorted({r["flag"] for r in report.rows if r["flag"]})
    return {"metric_medians": medians, "flags": flags,
            "n_rows": len(report.rows)}


def _cmd_tableau(args) -> int:
    tab = get_tableau(args.name, x=args.x, sign=args.sign)
    poly = stability_polynomial(tab)
    print(tab.pretty())
    print(f"order {tab.order}"
          + (f", anti-symmetric order {tab.anti_order}" if tab.anti_order
             else ""))
    coeffs = ", ".join(f"{c:.17g}" for c in poly.coeffs)
    print(f"stability polynomial coefficients (z^0..z^{poly.degree}): "
          f"[{coeffs}]")
    if args.verify:
        rng = np.random.default_rng(0)
        ok = True
        for z in rng.normal(size=10) + 1j * rng.normal(size=10):
            f = lambda _t, y: z * y
            from .stepper import rk_step
            got = rk_step(tab, f, 0.0, complex(1.0), 1.0)
            if abs(got - poly(z)) > 1e-12 * max(1.0, abs(poly(z))):
                ok = False
        print("verify: consistency with direct stepping "
              + ("OK" if ok else "FAILED"))
        if not ok:
            return 1
    return 0


def _cmd_stability(args) -> int:
    out = _out_dir(args)
    window = _parse_window(args.window) if args.window else DEFAULT_WINDOW

    if args.mode == "zero":
        res = zero_stability(args.method, gamma=args.gamma)
        payload = {"kind": args.method,
                   "roots": [[float(r.real), float(r.imag)]
                             for r in res["roots"]],
                   "root_condition": res["root_condition"],
                   "unit_roots_simple": res["unit_roots_simple"]}
        print(json.dumps(payload, indent=2))
        path = os.path.join(out, f"zero_stability_{args.method}.json")
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(json.dumps(payload, indent=2) + "\n")
        return 0

    if args.mode == "boundary":
        tab = get_tableau(args.method, x=args.x)
        edge = real_axis_boundary(stability_polynomial(tab))
        print(f"{args.method}: real-axis stability boundary {edge:.6f}")
        return 0

    if args.mode == "polynomial":
        tab = get_tableau(args.method, x=args.x)
        raster = polynomial_domain(stability_polynomial(tab), window,
                                   args.res, args.res)
    elif args.mode == "gamma":
        raster = coupled_gamma_region(args.base, args.zeta, window,
                                      args.res, args.res)
    else:
        kw = {}
        if args.method in ("mccallum-foster",):
            kw = {"base": args.base, "zeta": args.zeta}
        raster = empirical_domain(args.method, window, args.res, args.res,
                                  n_iters=args.iters, **kw)

    stem = f"stability_{args.method}_{args.mode}"
    csv_path = os.path.join(out, f"{stem}.csv")
    with open(csv_path, "w", encoding="utf-8") as fh:
        fh.write(raster_csv(raster))
    svg_path = os.path.join(out, f"{stem}.svg")
    with open(svg_path, "w", encoding="utf-8") as fh:
        fh.write(svgplot.raster_svg(raster.re, raster.im, raster.values,
                                    title=stem))
    print(f"{args.method} [{args.mode}]: {raster.stable_count} stable cells "
          f"of {raster.values.size} "
          f"({raster.indeterminate_count} indeterminate)")
    print(f"wrote {csv_path} and {svg_path}")
    return 0


def _cmd_study(name: str, args) -> int:
    file_cfg = load_config(args.config) if args.config else {}
    flags = _study_flags(args)
    cfg = build_study_config(file_cfg, flags)
    cfg.study = name
    out = args.out or file_cfg.get("out")
    args.out = out
    out = _out_dir(args)

    report = _STUDIES[name](cfg)

    finite = [r for r in report.rows
              if isinstance(r["value"], float) and np.isfinite(r["value"])]
    csv_path, json_path = _write_report(report, out, _summary_extra(report))
    svg_path = _report_svg(report, out)
    print(f"{report.study}: {len(report.rows)} rows "
          f"({len(report.rows) - len(finite)} unusable)")
    for solver, info in sorted(report.slopes.items()):
        print(f"  slope {solver}: {info['slope']:.3f} "
              f"± {info['half_width']:.3f}")
    wrote = [csv_path, json_path] + ([svg_path] if svg_path else [])
    print("wrote " + ", ".join(wrote))
    if not finite:
        print("study failed: no usable rows", file=sys.stderr)
        return 1
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "tableau":
            return _cmd_tableau(args)
        if args.command == "stability":
            return _cmd_stability(args)
        return _cmd_study(args.command, args)
    except (ConfigError, TableauError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except (LabError, ValueError) as exc:
        print(f"study failed: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
