"""``lightray`` command line: one subcommand per verification suite.

    lightray <subcommand> --config <path> [--out <dir>] [--seed <u64>]

Every run writes ``report.json`` (schema ``report_v1``) and
``timing.json`` into the output directory, plus subcommand-specific CSV
and SVG files.  Exit status: 0 when every criterion passes, 1 when a
suite fails (the report is still written), 2 for configuration errors.

Wall-clock times are kept out of ``report.json`` so that identical
configurations give byte-identical reports; runtime budgets appear there
only as pass/fail criteria.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
import time
from pathlib import Path

SUBCOMMANDS = ("transform", "slice", "reconstruct", "verify-gauge", "conformal-check", "decompose",
               "foliation-check", "theorem2-suite")

_THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS")

log = logging.getLogger("lightray")


class UsageError(Exception):
    def __init__(self, field, message):
        super().__init__(f"{field}: {message}")
        self.field = field


def thread_cap(environ=None):
    """Value of ``LIGHTRAY_THREADS`` as a positive int, or None when unset."""
    environ = os.environ if environ is None else environ
    raw = environ.get("LIGHTRAY_THREADS")
    if raw is None or raw == "":
        return None
    try:
        n = int(raw)
    except ValueError:
        n = 0
    if n <= 0:
        raise UsageError("LIGHTRAY_THREADS", f"expected a positive integer, got {raw!r}")
    return n


def _apply_thread_cap(n):
    # BLAS pools read these when numpy is first imported; the suites
    # themselves run vectorized in a single process.
    if n is not None:
        for var in _THREAD_VARS:
            os.environ[var] = str(n)


def _seed(text):
    try:
        v = int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid seed {text!r}") from None
    if not 0 <= v < 2 ** 64:
        raise argparse.ArgumentTypeError(f"seed {v} is not an unsigned 64-bit integer")
    return v


def build_parser():
    parser = argparse.ArgumentParser(prog="lightray",
                                     description="Light ray transform verification suites.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="subcommand", metavar="SUBCOMMAND")
    helps = {
        "transform": "sinograms of a phantom plus null and reduced-vs-direct ray checks",
        "slice": "Fourier slice and moment identity residuals",
        "reconstruct": "scalar reconstruction of a space-time phantom",
        "verify-gauge": "gauge tensors lie in the kernel",
        "conformal-check": "conformal reparametrization and conformal gauge checks",
        "decompose": "Helmholtz and trace-free Helmholtz decompositions",
        "foliation-check": "strict convexity of a foliation along G-curves",
        "theorem2-suite": "rank 1 and 2 tensors over static geometries",
    }
    for name in SUBCOMMANDS:
        p = sub.add_parser(name, help=helps[name])
        p.add_argument("--config", type=Path, default=None,
                       help="JSON experiment file (defaults are used when omitted)")
        p.add_argument("--out", type=Path, default=None, help="output directory")
        p.add_argument("--seed", type=_seed, default=None, help="seed for randomized suites")
    return parser


# --------------------------------------------------------------------------
# subcommand bodies: each returns (SuiteResult, artifacts, timings)
# --------------------------------------------------------------------------

def _runtime(name, seconds, budget):
    from .suites import Criterion
    return Criterion(f"runtime[{name}]", None, budget, seconds <= budget,
                     "measured seconds are in timing.json")


def run_transform(cfg, out, rng):
    import numpy as np

    from .io import sinogram_svg, write_rows
    from .reconstruction import GaussianPhantom
    from .rays import null_defect, sample_inflow, trace_rays
    from .stationary import get_geometry
    from .suites import SuiteResult, null_suite, reduced_direct_suite
    from .transforms import t_grid_for, translation_sinogram

    tol, grids, checks = cfg.tolerances, cfg["grids"], cfg["checks"]
    geo = get_geometry(cfg["geometry"])
    samples = sample_inflow(geo.conformal_manifold(), tuple(grids["counts"]))
    rays = trace_rays(geo, samples, step=grids["step"])
    alpha = GaussianPhantom.from_config(cfg["phantom"]).field()
    T_grid = t_grid_for(alpha, rays, grids["n_T"])
    sino = translation_sinogram(geo, alpha, rays, T_grid, samples)
    arts = []
    sino.to_csv(out / "sinogram.csv")
    arts.append("sinogram.csv")
    rows = []
    for k, ray in enumerate(rays):
        for s, y in zip(ray.s, ray.point):
            rows.append([k, float(s)] + [float(v) for v in y])
    header = ["ray", "s", "t"] + [f"x{i + 1}" for i in range(geo.dim)]
    write_rows(out / "rays.csv", header, rows)
    sinogram_svg(out / "sinogram.svg", sino.values, T_grid, f"L f on {cfg['geometry']}")
    arts += ["rays.csv", "sinogram.svg"]

    res = SuiteResult("transform")
    t0 = time.perf_counter()
    nul = null_suite(checks["geometries"], checks["n_rays"], rng, tol["null_defect"],
                     tuple(checks["coarse_steps"]), tol["halving_ratio"])
    t_null = time.perf_counter() - t0
    rd = reduced_direct_suite(checks["geometries"], checks["n_rays"], rng, tol["reduced_direct"])
    res.criteria = nul.criteria + [_runtime("null-preservation", t_null, tol["null_runtime_seconds"])]
    res.criteria += rd.criteria
    res.data.update(nul.data)
    res.data["sinogram_shape"] = list(sino.values.shape)
    res.data["sinogram_max"] = float(np.max(np.abs(sino.values)))
    res.data["ray_null_defect_max"] = max(null_defect(geo, r) for r in rays)
    return res, arts, {"null-preservation": t_null, "reduced-vs-direct": rd.seconds}


def run_slice(cfg, out, rng):
    from .io import write_rows
    from .suites import SuiteResult, fourier_slice_suite, moment_suite

    tol, grids, mom = cfg.tolerances, cfg["grids"], cfg["moment"]
    fs = fourier_slice_suite(cfg["geometries"], tuple(cfg["taus"]), grids["n_rays"], rng,
                             tol["fourier_slice"], grids["n_T"])
    ms = moment_suite(mom["manifolds"], mom["ranks"], mom["js"], mom["n_fields"], mom["n_rays"], rng,
                      tol["moment"])
    rows = [[r["geometry"], r["ray"], float(r["tau"]), complex(r["lhs"]).real, complex(r["lhs"]).imag,
             complex(r["rhs"]).real, complex(r["rhs"]).imag] for r in fs.data.pop("rows")]
    write_rows(out / "fourier_slices.csv", ["geometry", "ray", "tau", "lhs_re", "lhs_im", "rhs_re",
                                            "rhs_im"], rows)
    res = SuiteResult("slice", fs.criteria + ms.criteria)
    return res, ["fourier_slices.csv"], {"fourier-slice": fs.seconds, "moment": ms.seconds}


def run_reconstruct(cfg, out, rng):
    import numpy as np

    from .io import heatmap_svg, write_rows
    from .reconstruction import GaussianPhantom, run_reconstruction
    from .stationary import get_geometry
    from .suites import SuiteResult, check

    tol, grids, solver = cfg.tolerances, cfg["grids"], cfg["solver"]
    geo = get_geometry(cfg["geometry"])
    phantom = GaussianPhantom.from_config(cfg["phantom"])
    t0 = time.perf_counter()
    rec, rep = run_reconstruction(geo, phantom, tuple(grids["counts"]), grids["pixels"], grids["step"],
                                  grids["dT"], grids["oversample"], grids["n_t"], solver["lam_factor"],
                                  solver["maxiter"])
    seconds = time.perf_counter() - t0
    pts = rec.grid.inside_points()
    exact = phantom(rec.t[:, None], pts[None, :, :])
    rows = [[float(t), float(p[0]), float(p[1]), float(v), float(e)]
            for k, t in enumerate(rec.t) for p, v, e in zip(pts, rec.values[k], exact[k])]
    write_rows(out / "reconstruction.csv", ["t", "x", "y", "value", "exact"], rows)
    k = int(np.argmin(np.abs(rec.t - phantom.centers[0, 0])))
    heatmap_svg(out / "reconstruction.svg",
                [rec.image(k), rec.grid.to_image(exact[k]), rec.grid.to_image(rec.values[k] - exact[k])],
                [f"reconstruction t={rec.t[k]:.2f}", "phantom", "error"])
    res = SuiteResult("reconstruct")
    res.add(check("relative_l2_error", rep["relative_l2_error"], tol["relative_l2"]))
    res.add(_runtime("reconstruct", seconds, tol["runtime_seconds"]))
    res.data = {k: v for k, v in rep.items() if k not in ("seconds", "scan_seconds")}
    timing = {"reconstruct": seconds, "scan": rep["scan_seconds"]}
    return res, ["reconstruction.csv", "reconstruction.svg"], timing


def run_verify_gauge(cfg, out, rng):
    from .suites import gauge_suite

    tol, grids = cfg.tolerances, cfg["grids"]
    res = gauge_suite(cfg["geometries"], tuple(cfg["ranks"]), grids["n_pairs"], grids["n_rays"], rng,
                      tol["gauge"])
    res.add(_runtime("verify-gauge", res.seconds, tol["runtime_seconds"]))
    return res, [], {"verify-gauge": res.seconds}


def run_conformal(cfg, out, rng):
    from .suites import conformal_suite

    tol, grids = cfg.tolerances, cfg["grids"]
    res = conformal_suite(cfg["geometries"], tuple(cfg["reparam_ranks"]), tuple(cfg["lemma_ranks"]),
                          grids["n_rays"], grids["n_points"], rng, tol["reparam"], tol["lemma"])
    return res, [], {"conformal-check": res.seconds}


def run_decompose(cfg, out, rng):
    from .io import line_svg, write_rows
    from .suites import decomposition_suite

    tol, sizes = cfg.tolerances, cfg["grids"]["sizes"]
    res = decomposition_suite(tuple(cfg["ranks"]), tuple(cfg["tf_ranks"]), tuple(sizes), rng,
                              tol["residual"], tol["order_ratio"], tol["pure_gauge"])
    table = res.data["table"]
    keys = ["kind", "rank", "N", "err", "err_h", "err_s", "residual", "pure_gauge"]
    write_rows(out / "decomposition.csv", keys, [[row.get(k, "") for k in keys] for row in table])
    series = {}
    for row in table:
        label = f"{row['kind']} m={row['rank']}"
        series.setdefault(label, []).append(row.get("err", row.get("err_h")))
    h = [2.0 / (n - 1) for n in sizes]
    line_svg(out / "convergence.svg", h, series, "manufactured-solution error", "h", "max error")
    return res, ["decomposition.csv", "convergence.svg"], {"decompose": res.seconds}


def run_foliation(cfg, out, rng):
    from .io import histogram_svg, write_rows
    from .suites import foliation_suite

    res = foliation_suite(cfg["rho"], cfg["grids"]["n_curves"], cfg["eps_pass"], cfg["eps_sweep"],
                          rng_seed=cfg.seed)
    margins = res.data.pop("margins")
    histogram_svg(out / "foliation_margins.svg", margins, "second derivative of rho at tangencies",
                  "d^2 rho / ds^2")
    write_rows(out / "foliation_sweep.csv", ["eps", "pass", "worst_margin", "reason"],
               [[float(r["eps"]), int(r["pass"]), float(r["worst_margin"]), r["reason"]]
                for r in res.data["sweep"]])
    return res, ["foliation_margins.svg", "foliation_sweep.csv"], {"foliation-check": res.seconds}


def run_theorem2(cfg, out, rng):
    from .suites import tensor_theorem_suite

    tol, grids = cfg.tolerances, cfg["grids"]
    res = tensor_theorem_suite(cfg["geometry"], tuple(cfg["ranks"]), grids["n_rays"], grids["N"],
                               grids["n_t"], rng, tol["sinogram"], tol["grid"], tol["detect_factor"])
    return res, [], {"theorem2-suite": res.seconds}


RUNNERS = {
    "transform": run_transform,
    "slice": run_slice,
    "reconstruct": run_reconstruct,
    "verify-gauge": run_verify_gauge,
    "conformal-check": run_conformal,
    "decompose": run_decompose,
    "foliation-check": run_foliation,
    "theorem2-suite": run_theorem2,
}


def run(subcommand, config_path=None, out=None, seed=None):
    """Load the config, run the suite and write its artifacts.

    Returns ``(exit code, output directory)``.
    """
    import numpy as np

    from .config import load_config
    from .io import build_report, write_json

    cfg = load_config(config_path, subcommand, seed)
    out = Path(out or cfg.get("output") or Path("out") / subcommand)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(cfg.seed)
    t0 = time.perf_counter()
    result, arts, timings = RUNNERS[subcommand](cfg, out, rng)
    timings["total"] = time.perf_counter() - t0
    report = build_report(cfg, result, arts + ["timing.json"])
    write_json(out / "report.json", report)
    write_json(out / "timing.json", {"schema": "timing_v1", "config_hash": cfg.hash(),
                                      "threads": thread_cap(),
                                      "seconds": {k: round(v, 3) for k, v in timings.items()}})
    for c in result.criteria:
        log.info("%s %s value=%s tol=%s", "PASS" if c.passed else "FAIL", c.name, c.value, c.tol)
    return (0 if result.passed else 1), out


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.subcommand is None:
        parser.print_help(sys.stderr)
        return 2
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        _apply_thread_cap(thread_cap())
        from .errors import ConfigError
    except UsageError as exc:
        print(f"lightray: config error: {exc}", file=sys.stderr)
        return 2
    try:
        code, out = run(args.subcommand, args.config, args.out, args.seed)
    except ConfigError as exc:
        print("lightray: config error: " + " ".join(str(exc).split()), file=sys.stderr)
        return 2
    status = "passed" if code == 0 else "FAILED"
    print(f"lightray {args.subcommand}: {status} (report in {out / 'report.json'})")
    return code


if __name__ == "__main__":
    sys.exit(main())
