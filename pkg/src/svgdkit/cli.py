"""Command-line experiment runner.

Usage::

    svgdkit run configs/mixture_rate.json --out out/rate
    svgdkit chaos configs/mixture_chaos.json --threads 4
    svgdkit selftest

Exit codes: 0 success, 1 selftest failure, 2 invalid config or missing
input, 3 numerical abort (non-finite particle or score).
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
import tempfile
import time
from pathlib import Path

import numpy as np

from .chaos import CoupledRun, InitialLaw, lipschitz_constant, run_coupled, summarize
from .config import ConfigError, load_config
from .core import (
    NonFiniteError,
    StepSizePlan,
    SvgdConfig,
    Trace,
    as_ensemble,
    descent_constant,
    plan_step_size,
    run,
)
from .diagnostics import GridKL, fit_rate, ksd_squared, verify_descent, windowed_means
from .kernels import Kernel, median_bandwidth
from .rng import STREAM_INIT, make_rng
from .targets import GaussianMixture1D, gaussian_target, mixture_target

logger = logging.getLogger("svgdkit")

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3
STREAM_BANDWIDTH = 3  # chaos sweep: pool used for the median bandwidth


# -- atomic output -------------------------------------------------------------


def write_atomic(path: Path, text: str) -> None:
    """Write ``text`` to a temp file in the same directory, then rename over ``path``."""
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _json(obj) -> str:
    def clean(v):
        if isinstance(v, float) and not math.isfinite(v):
            return None if math.isnan(v) else ("inf" if v > 0 else "-inf")
        if isinstance(v, dict):
            return {k: clean(x) for k, x in v.items()}
        if isinstance(v, (list, tuple)):
            return [clean(x) for x in v]
        if isinstance(v, np.generic):
            return clean(v.item())
        return v

    return json.dumps(clean(obj), indent=2) + "\n"


def points_csv(X: np.ndarray) -> str:
    header = ",".join(f"x{a}" for a in range(X.shape[1]))
    rows = (",".join(repr(float(v)) for v in row) for row in X)
    return header + "\n" + "".join(r + "\n" for r in rows)


def load_points(path: str, dim: int) -> np.ndarray:
    """Read particles from CSV (optional header row, one particle per line)."""
    text = Path(path).read_text().strip().splitlines()
    if text and not _is_numeric_row(text[0]):
        text = text[1:]
    try:
        X = np.array([[float(v) for v in line.split(",")] for line in text if line.strip()], dtype=float)
    except ValueError as err:
        raise ConfigError("init.path", f"cannot parse {path}: {err}") from None
    if X.ndim != 2 or X.shape[0] == 0 or X.shape[1] != dim:
        raise ConfigError("init.path", f"{path} must hold rows of {dim} comma-separated numbers")
    return as_ensemble(X, dim)


def _is_numeric_row(line: str) -> bool:
    try:
        [float(v) for v in line.split(",")]
        return True
    except ValueError:
        return False


# -- building blocks from a resolved config ---------------------------------------


def build_target(params: dict):
    if params["family"] == "mixture1d":
        mix = GaussianMixture1D(params["weights"], params["means"], params["sds"])
        target = mixture_target(mix, params["grid_points"], params["margin"])
    else:
        try:
            target = gaussian_target(params["mean"], params["cov"])
        except ValueError as err:
            raise ConfigError("target.cov", str(err)) from None
    if params["hessian_bound"] is not None:
        target.hessian_bound = float(params["hessian_bound"])
    if params["score_bound"] is not None:
        target.score_bound = float(params["score_bound"])
    return target


def build_initial(cfg: dict, dim: int) -> np.ndarray:
    init = cfg["init"]
    if init["family"] == "file":
        X = load_points(init["path"], dim)
        if X.shape[0] != cfg["n_particles"]:
            raise ConfigError("n_particles", f"init file has {X.shape[0]} particles, config says {cfg['n_particles']}")
        return X
    rng = make_rng(cfg["seed"], STREAM_INIT)
    return np.asarray(init["mean"]) + init["sd"] * rng.standard_normal((cfg["n_particles"], dim))


def build_kernel(params: dict, dim: int, pool: np.ndarray | None = None) -> Kernel:
    if params["family"] == "imq":
        return Kernel("imq", dim, offset=float(params["offset"]), exponent=float(params["exponent"]))
    h = params["bandwidth"]
    if h == "median":
        try:
            h = median_bandwidth(pool)
        except ValueError as err:
            raise ConfigError("kernel.bandwidth", f"median heuristic failed: {err}") from None
    return Kernel("rbf", dim, bandwidth=float(h))


def build_plan(step: dict, kernel: Kernel, target, ksd0: float) -> StepSizePlan:
    """Planner constants; a fixed ``step.gamma`` bypasses the planner but keeps the constants."""
    B, M = kernel.bound(), float(target.hessian_bound)
    C = (1.0 + step["C_margin"]) * ksd0 if step["C"] == "auto" else float(step["C"])
    if not C > 0:
        raise ConfigError("step.C", f"planning constant must be positive, got {C} (initial KSD^2 is {ksd0})")
    alpha = float(step["alpha"])
    if step["gamma"] is not None:
        g = float(step["gamma"])
        return StepSizePlan(alpha, B, M, C, g, descent_constant(g, alpha, B, M))
    try:
        return plan_step_size(alpha, B, M, C, step["safety"])
    except ValueError as err:
        raise ConfigError("step", str(err)) from None


def build_kl(diag: dict, target) -> GridKL | None:
    kl = diag["kl"]
    if kl is None:
        return None
    bw = None if kl["bandwidth"] == "silverman" else float(kl["bandwidth"])
    try:
        return GridKL(target, kl["lo"], kl["hi"], kl["points"], bw)
    except ValueError as err:
        raise ConfigError("diagnostics.kl", str(err)) from None


def gnuplot_script(trace_name: str = "trace.csv") -> str:
    return (
        "set datafile separator ','\n"
        "set logscale xy\n"
        "set xlabel 'iteration'\n"
        "set key top right\n"
        f"plot '{trace_name}' using 1:2 with lines title 'KSD^2', \\\n"
        f"     '{trace_name}' using 1:3 with lines title 'running mean KSD^2', \\\n"
        f"     '{trace_name}' using 1:(1/$1) with lines dashtype 2 title '1/n'\n"
    )


# -- commands ------------------------------------------------------------------


def _rate_fit(trace: Trace, window_cfg) -> dict:
    n = len(trace)
    lo, hi = window_cfg[0], window_cfg[1] if window_cfg[1] is not None else n
    hi = min(hi, n)
    try:
        return fit_rate(trace, (lo, hi)).as_dict()
    except ValueError as err:
        return {"slope": None, "intercept": None, "r2": None, "window": [lo, hi], "note": str(err)}


def execute_run(cfg: dict) -> dict:
    """Run one SVGD experiment from a resolved config and return the in-memory results."""
    target = build_target(cfg["target"])
    X0 = build_initial(cfg, target.dim)
    kernel = build_kernel(cfg["kernel"], target.dim, X0)
    ksd0 = ksd_squared(X0, target, kernel, "V")
    plan = build_plan(cfg["step"], kernel, target, ksd0)
    diag = cfg["diagnostics"]
    kl = build_kl(diag, target)
    run_cfg = SvgdConfig(
        n_max=cfg["n_iter"],
        plan=plan,
        seed=cfg["seed"],
        check_every=diag["check_every"],
        ksd_mode=diag["ksd_mode"],
        adaptive_bandwidth=cfg["kernel"].get("adaptive", False),
        record_timing=diag["record_timing"],
    )
    t0 = time.perf_counter()
    trace, X = run(run_cfg, X0, target, kernel, kl)
    elapsed = time.perf_counter() - t0

    descent = {"violations": None, "worst_margin": None, "tolerance": diag["descent_tolerance"], "steps": 0}
    kl_windows = None
    if kl is not None and len(trace) > 0:
        # include the first step: KL_0 -> KL_1 against KSD^2_0
        full_kl = np.concatenate([[trace.initial_kl], trace.kl_est])
        full_ksd = np.concatenate([[trace.initial_ksd2], trace.ksd2])
        rep = verify_descent(Trace.from_arrays(full_ksd), plan, full_kl, diag["descent_tolerance"])
        descent = rep.as_dict()
        means = windowed_means(trace.kl_est, diag["kl_window"])
        kl_windows = {
            "width": diag["kl_window"],
            "count": int(means.size),
            "increases": int(np.sum(np.diff(means) > 0)),
            "first": float(means[0]) if means.size else None,
            "last": float(means[-1]) if means.size else None,
        }
    report = {
        "resolved_config": cfg,
        "rate_fit": _rate_fit(trace, diag["rate_window"]) if len(trace) else
        {"slope": None, "intercept": None, "r2": None, "window": None, "note": "empty trace"},
        "descent": descent,
        "plan": plan.as_dict(),
        "kernel": {"family": kernel.family, "bandwidth": kernel.bandwidth if kernel.family == "rbf" else None,
                   "offset": kernel.offset if kernel.family == "imq" else None,
                   "exponent": kernel.exponent if kernel.family == "imq" else None},
        "initial": {"ksd2": trace.initial_ksd2, "kl": trace.initial_kl},
        "final": {
            "ksd2": float(trace.ksd2[-1]) if len(trace) else trace.initial_ksd2,
            "kl": float(trace.kl_est[-1]) if len(trace) else trace.initial_kl,
        },
        "kl_windows": kl_windows,
        "invariants": trace.invariants.as_dict(),
        "elapsed_s": elapsed,
    }
    return {"trace": trace, "final": X, "report": report, "plan": plan, "kernel": kernel, "target": target}


def cmd_run(config_path, out: str | None = None, seed: int | None = None, threads: int | None = None) -> int:
    try:
        loaded = load_config(config_path, {"seed": seed, "output_dir": out})
        cfg = loaded.resolved
        result = execute_run(cfg)
    except ConfigError as err:
        print(f"error: invalid config: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except NonFiniteError as err:
        print(f"error: numerical abort at iteration {err.iteration}: {err}", file=sys.stderr)
        return EXIT_NUMERIC
    out_dir = Path(cfg["output_dir"])
    write_atomic(out_dir / "trace.csv", result["trace"].to_csv())
    write_atomic(out_dir / "final_particles.csv", points_csv(result["final"]))
    write_atomic(out_dir / "report.json", _json(result["report"]))
    if cfg["gnuplot"]:
        write_atomic(out_dir / "plot.gp", gnuplot_script())
    rf = result["report"]["rate_fit"]
    print(f"wrote {out_dir}/trace.csv ({len(result['trace'])} iterations); rate slope = {rf['slope']}")
    return EXIT_OK


def _initial_law(cfg: dict, dim: int) -> InitialLaw:
    init = cfg["init"]
    if init["family"] == "file":
        return InitialLaw(points=load_points(init["path"], dim))
    return InitialLaw(mean=tuple(init["mean"]), sd=float(init["sd"]))


def execute_chaos(cfg: dict, workers: int | None = None) -> dict:
    ch = cfg["chaos"]
    target = build_target(cfg["target"])
    law = _initial_law(cfg, target.dim)
    pool = law.sample(make_rng(cfg["seed"], STREAM_BANDWIDTH), ch["M_ref"])
    kernel = build_kernel(cfg["kernel"], target.dim, pool)
    sweep = CoupledRun(
        sizes=tuple(ch["sizes"]), M_ref=ch["M_ref"], T=float(ch["T"]), gamma=float(ch["gamma"]),
        repetitions=ch["repetitions"], seed=cfg["seed"], record_every=ch["record_every"],
        nested_reference=ch["nested_reference"], min_ref_ratio=float(ch["min_ref_ratio"]),
    )
    C_V, D, B, M = float(target.score_bound), kernel.lipschitz(), kernel.bound(), float(target.hessian_bound)
    L = lipschitz_constant(C_V, D, B, M)
    workers = workers or ch["workers"]
    result = run_coupled(sweep, target, kernel, law, L=L, workers=workers)
    checks = summarize(result, L, law.variance)
    sizes = np.asarray(sweep.sizes, dtype=float)
    per_step = []
    for r, n in enumerate(result.steps):
        m = result.mean[r]
        slope = float(np.polyfit(np.log(sizes), np.log(m), 1)[0]) if sizes.size > 1 and np.all(m > 0) else None
        per_step.append({"n": n, "slope": slope})
    final = [
        {"N": int(N), "w2sq_mean": float(result.mean[-1, c]), "w2sq_stderr": float(result.stderr[-1, c]),
         "bound": float(result.bound[-1, c]),
         "within_bound": bool(result.mean[-1, c] <= result.bound[-1, c] + 2 * result.stderr[-1, c])}
        for c, N in enumerate(sweep.sizes)
    ]
    report = {
        "resolved_config": cfg,
        "constants": {"C_V": C_V, "D": D, "B": B, "M": M, "L": L, "var0": law.variance,
                      "bandwidth": kernel.bandwidth if kernel.family == "rbf" else None},
        "decay_fit": {"final_step": result.steps[-1], "slope": checks.slope, "per_step": per_step},
        "bound_comparison": final,
        "checks": checks.as_dict(),
    }
    if ch["proxy_check"]:
        doubled = run_coupled(sweep, target, kernel, law, L=L, workers=workers, M_ref=2 * ch["M_ref"])
        base, alt = result.mean[-1], doubled.mean[-1]
        rel = np.abs(alt - base) / np.maximum(base, 1e-300)
        report["proxy_check"] = {
            "M_ref": 2 * ch["M_ref"],
            "final_means": alt.tolist(),
            "max_relative_change": float(rel.max()),
            "within_stderr": bool(np.all(np.abs(alt - base) <= result.stderr[-1])),
        }
    return {"result": result, "report": report, "checks": checks}


def cmd_chaos(config_path, out: str | None = None, seed: int | None = None, threads: int | None = None) -> int:
    try:
        loaded = load_config(config_path, {"seed": seed, "output_dir": out})
        cfg = loaded.resolved
        if cfg["chaos"] is None:
            raise ConfigError("chaos", "the chaos command needs a 'chaos' block in the config")
        res = execute_chaos(cfg, threads)
    except ConfigError as err:
        print(f"error: invalid config: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except (NonFiniteError, FloatingPointError) as err:
        print(f"error: numerical abort: {err}", file=sys.stderr)
        return EXIT_NUMERIC
    out_dir = Path(cfg["output_dir"])
    write_atomic(out_dir / "chaos.csv", res["result"].to_csv())
    write_atomic(out_dir / "chaos_report.json", _json(res["report"]))
    print(f"wrote {out_dir}/chaos.csv; decay slope = {res['checks'].slope:.3f}")
    return EXIT_OK


def cmd_selftest(kernels=None, stream=None) -> int:
    from .selftest import print_table, run_selftest

    rows = run_selftest(kernels)
    print_table(rows, stream or sys.stdout)
    return EXIT_OK if all(r.passed for r in rows) else EXIT_FAIL


# -- entry point ---------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="svgdkit", description="SVGD experiments and diagnostics")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (("run", "run one SVGD experiment"), ("chaos", "propagation-of-chaos sweep")):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("config", help="JSON config file")
        p.add_argument("--out", default=None, help="output directory (overrides output_dir)")
        p.add_argument("--seed", type=int, default=None, help="master seed (overrides seed)")
        p.add_argument("--threads", type=int, default=None, help="worker processes for chaos repetitions")
    sub.add_parser("selftest", help="run the invariant suite")
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    if args.command == "selftest":
        return cmd_selftest()
    if args.seed is not None and args.seed < 0:
        print("error: --seed must be nonnegative", file=sys.stderr)
        return EXIT_CONFIG
    if args.threads is not None and args.threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    fn = cmd_run if args.command == "run" else cmd_chaos
    return fn(args.config, out=args.out, seed=args.seed, threads=args.threads)


if __name__ == "__main__":
    sys.exit(main())
