"""JSON experiment configuration.

A config is a single JSON object. Every key is optional; omitted keys take
the defaults below, which reproduce the 1-D Gaussian mixture experiment.
Unknown keys are rejected. ``resolve`` returns the config with every
default filled in, and feeding that back through ``resolve`` gives
the same experiment.
"""

from __future__ import annotations

import copy
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any

DEFAULTS: dict[str, Any] = {
    "seed": 0,
    "output_dir": "out",
    "n_particles": 200,
    "n_iter": 10_000,
    "target": {
        "family": "mixture1d",
        "weights": [1 / 3, 2 / 3],
        "means": [-2.0, 2.0],
        "sds": [1.0, 1.0],
        "grid_points": 10_000,
        "margin": 0.1,
        "hessian_bound": None,
        "score_bound": None,
    },
    "kernel": {"family": "rbf", "bandwidth": "median", "adaptive": False},
    "init": {"family": "gaussian", "mean": [-10.0], "sd": 1.0},
    "step": {"gamma": None, "alpha": 2.0, "safety": 0.5, "C": "auto", "C_margin": 1.0},
    "diagnostics": {
        "ksd_mode": "V",
        "kl": {"lo": -10.0, "hi": 10.0, "points": 2000, "bandwidth": "silverman"},
        "descent_tolerance": 0.02,
        "rate_window": [100, None],
        "kl_window": 50,
        "check_every": 10,
        "record_timing": False,
    },
    "chaos": None,
    "gnuplot": False,
}

CHAOS_DEFAULTS: dict[str, Any] = {
    "sizes": [25, 50, 100, 200],
    "M_ref": 2000,
    "T": 2.0,
    "gamma": 0.05,
    "repetitions": 32,
    "record_every": 10,
    "nested_reference": False,
    "min_ref_ratio": 10.0,
    "proxy_check": False,
    "workers": 1,
}

GAUSSIAN_TARGET_DEFAULTS = {"family": "gaussian", "mean": [0.0], "cov": [[1.0]], "hessian_bound": None,
                            "score_bound": None}
IMQ_DEFAULTS = {"family": "imq", "offset": 1.0, "exponent": -0.5}
FILE_INIT_DEFAULTS = {"family": "file", "path": None}


class ConfigError(ValueError):
    """Invalid configuration; ``path`` names the offending field (``a.b.c``)."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path


def _is_num(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool) and math.isfinite(v)


def _merge(path: str, given: Any, defaults: dict) -> dict:
    if not isinstance(given, dict):
        raise ConfigError(path, f"expected an object, got {type(given).__name__}")
    unknown = sorted(set(given) - set(defaults))
    if unknown:
        where = f"{path}.{unknown[0]}" if path else unknown[0]
        raise ConfigError(where, f"unknown key (allowed: {', '.join(sorted(defaults))})")
    out = copy.deepcopy(defaults)
    out.update(copy.deepcopy(given))
    return out


def _num(path, v, *, lo=None, lo_open=False, hi=None, integer=False, allow_none=False):
    if v is None and allow_none:
        return None
    if integer:
        if not (isinstance(v, int) and not isinstance(v, bool)):
            raise ConfigError(path, f"expected an integer, got {v!r}")
    elif not _is_num(v):
        raise ConfigError(path, f"expected a finite number, got {v!r}")
    if lo is not None and (v <= lo if lo_open else v < lo):
        raise ConfigError(path, f"must be {'>' if lo_open else '>='} {lo}, got {v!r}")
    if hi is not None and v > hi:
        raise ConfigError(path, f"must be <= {hi}, got {v!r}")
    return v


def _vec(path, v, n=None):
    if _is_num(v):
        v = [v]
    if not (isinstance(v, list) and v and all(_is_num(x) for x in v)):
        raise ConfigError(path, f"expected a non-empty list of numbers, got {v!r}")
    if n is not None and len(v) != n:
        raise ConfigError(path, f"expected {n} entries, got {len(v)}")
    return [float(x) for x in v]


def _bool(path, v):
    if not isinstance(v, bool):
        raise ConfigError(path, f"expected true/false, got {v!r}")
    return v


def _choice(path, v, options):
    if v not in options:
        raise ConfigError(path, f"expected one of {list(options)}, got {v!r}")
    return v


def _resolve_target(t) -> dict:
    if not isinstance(t, dict):
        raise ConfigError("target", "expected an object")
    fam = _choice("target.family", t.get("family", "mixture1d"), ("mixture1d", "gaussian"))
    if fam == "mixture1d":
        t = _merge("target", t, DEFAULTS["target"])
        w, m, s = (_vec(f"target.{k}", t[k]) for k in ("weights", "means", "sds"))
        if not len(w) == len(m) == len(s):
            raise ConfigError("target", "weights, means and sds must have equal length")
        if abs(sum(w) - 1.0) > 1e-12 or min(w) < 0:
            raise ConfigError("target.weights", "must be nonnegative and sum to 1")
        if min(s) <= 0:
            raise ConfigError("target.sds", "must be positive")
        t.update(weights=w, means=m, sds=s)
        _num("target.grid_points", t["grid_points"], lo=10, integer=True)
        _num("target.margin", t["margin"], lo=0)
    else:
        t = _merge("target", t, GAUSSIAN_TARGET_DEFAULTS)
        mean = _vec("target.mean", t["mean"])
        cov = t["cov"]
        if _is_num(cov):
            cov = [[cov]]
        if not (isinstance(cov, list) and len(cov) == len(mean)
                and all(isinstance(r, list) and len(r) == len(mean) and all(_is_num(x) for x in r) for r in cov)):
            raise ConfigError("target.cov", f"expected a {len(mean)}x{len(mean)} matrix")
        t.update(mean=mean, cov=[[float(x) for x in r] for r in cov])
    _num("target.hessian_bound", t["hessian_bound"], lo=0, allow_none=True)
    _num("target.score_bound", t["score_bound"], lo=0, allow_none=True)
    return t


def _resolve_kernel(k) -> dict:
    if not isinstance(k, dict):
        raise ConfigError("kernel", "expected an object")
    fam = _choice("kernel.family", k.get("family", "rbf"), ("rbf", "imq"))
    if fam == "rbf":
        k = _merge("kernel", k, DEFAULTS["kernel"])
        if k["bandwidth"] != "median":
            _num("kernel.bandwidth", k["bandwidth"], lo=0, lo_open=True)
        _bool("kernel.adaptive", k["adaptive"])
    else:
        k = _merge("kernel", k, IMQ_DEFAULTS)
        _num("kernel.offset", k["offset"], lo=0, lo_open=True)
        _num("kernel.exponent", k["exponent"], lo=-1)
        if k["exponent"] >= 0:
            raise ConfigError("kernel.exponent", "must lie in [-1, 0)")
    return k


def _resolve_init(i, base_dir: Path) -> dict:
    if not isinstance(i, dict):
        raise ConfigError("init", "expected an object")
    fam = _choice("init.family", i.get("family", "gaussian"), ("gaussian", "file"))
    if fam == "gaussian":
        i = _merge("init", i, DEFAULTS["init"])
        i["mean"] = _vec("init.mean", i["mean"])
        _num("init.sd", i["sd"], lo=0, lo_open=True)
        return i
    i = _merge("init", i, FILE_INIT_DEFAULTS)
    if not isinstance(i["path"], str):
        raise ConfigError("init.path", "expected a file path")
    p = Path(i["path"])
    p = p if p.is_absolute() else (base_dir / p)
    if not p.is_file():
        raise ConfigError("init.path", f"file not found: {p}")
    i["path"] = str(p.resolve())
    return i


def _resolve_step(s) -> dict:
    s = _merge("step", s, DEFAULTS["step"])
    _num("step.gamma", s["gamma"], lo=0, lo_open=True, allow_none=True)
    _num("step.alpha", s["alpha"], lo=1, lo_open=True)
    _num("step.safety", s["safety"], lo=0, lo_open=True, hi=1)
    if s["C"] != "auto":
        _num("step.C", s["C"], lo=0, lo_open=True)
    _num("step.C_margin", s["C_margin"], lo=0)
    return s


def _resolve_diagnostics(d) -> dict:
    d = _merge("diagnostics", d, DEFAULTS["diagnostics"])
    _choice("diagnostics.ksd_mode", d["ksd_mode"], ("V", "U"))
    if d["kl"] is not None:
        kl = _merge("diagnostics.kl", d["kl"], DEFAULTS["diagnostics"]["kl"])
        _num("diagnostics.kl.lo", kl["lo"])
        _num("diagnostics.kl.hi", kl["hi"])
        if kl["hi"] <= kl["lo"]:
            raise ConfigError("diagnostics.kl.hi", "must exceed diagnostics.kl.lo")
        _num("diagnostics.kl.points", kl["points"], lo=100, integer=True)
        if kl["bandwidth"] != "silverman":
            _num("diagnostics.kl.bandwidth", kl["bandwidth"], lo=0, lo_open=True)
        d["kl"] = kl
    _num("diagnostics.descent_tolerance", d["descent_tolerance"], lo=0)
    rw = d["rate_window"]
    if not (isinstance(rw, list) and len(rw) == 2):
        raise ConfigError("diagnostics.rate_window", "expected [start, end] with end possibly null")
    _num("diagnostics.rate_window[0]", rw[0], lo=1, integer=True)
    _num("diagnostics.rate_window[1]", rw[1], lo=1, integer=True, allow_none=True)
    _num("diagnostics.kl_window", d["kl_window"], lo=1, integer=True)
    _num("diagnostics.check_every", d["check_every"], lo=0, integer=True)
    _bool("diagnostics.record_timing", d["record_timing"])
    return d


def _resolve_chaos(c) -> dict | None:
    if c is None:
        return None
    c = _merge("chaos", c, CHAOS_DEFAULTS)
    sizes = c["sizes"]
    if not (isinstance(sizes, list) and sizes and all(isinstance(n, int) and not isinstance(n, bool) and n >= 1
                                                     for n in sizes)):
        raise ConfigError("chaos.sizes", "expected a non-empty list of positive integers")
    _num("chaos.M_ref", c["M_ref"], lo=1, integer=True)
    _num("chaos.T", c["T"], lo=0)
    _num("chaos.gamma", c["gamma"], lo=0)
    _num("chaos.repetitions", c["repetitions"], lo=1, integer=True)
    _num("chaos.record_every", c["record_every"], lo=1, integer=True)
    _bool("chaos.nested_reference", c["nested_reference"])
    _num("chaos.min_ref_ratio", c["min_ref_ratio"], lo=0)
    _bool("chaos.proxy_check", c["proxy_check"])
    _num("chaos.workers", c["workers"], lo=1, integer=True)
    if c["M_ref"] < c["min_ref_ratio"] * max(sizes):
        raise ConfigError("chaos.M_ref", f"must be at least min_ref_ratio x max(sizes) = {c['min_ref_ratio'] * max(sizes):g}")
    return c


def resolve(raw: Any, base_dir: Path | str = ".") -> dict:
    """Validate ``raw`` and return it with all defaults materialised."""
    base_dir = Path(base_dir)
    cfg = _merge("", raw, DEFAULTS)
    _num("seed", cfg["seed"], lo=0, integer=True)
    if not isinstance(cfg["output_dir"], str):
        raise ConfigError("output_dir", "expected a string")
    _num("n_particles", cfg["n_particles"], lo=1, integer=True)
    _num("n_iter", cfg["n_iter"], lo=0, integer=True)
    cfg["target"] = _resolve_target(cfg["target"])
    cfg["kernel"] = _resolve_kernel(cfg["kernel"])
    cfg["init"] = _resolve_init(cfg["init"], base_dir)
    cfg["step"] = _resolve_step(cfg["step"])
    cfg["diagnostics"] = _resolve_diagnostics(cfg["diagnostics"])
    cfg["chaos"] = _resolve_chaos(cfg["chaos"])
    _bool("gnuplot", cfg["gnuplot"])
    dim = _target_dim(cfg["target"])
    if cfg["init"]["family"] == "gaussian" and len(cfg["init"]["mean"]) != dim:
        raise ConfigError("init.mean", f"expected {dim} entries to match the target dimension")
    if cfg["diagnostics"]["kl"] is not None and dim != 1:
        raise ConfigError("diagnostics.kl", "KL estimation is only available for 1-D targets; set it to null")
    if cfg["kernel"]["family"] == "rbf" and cfg["kernel"]["bandwidth"] == "median" and cfg["n_particles"] < 2:
        raise ConfigError("kernel.bandwidth", "the median heuristic needs n_particles >= 2")
    return cfg


def _target_dim(t: dict) -> int:
    return 1 if t["family"] == "mixture1d" else len(t["mean"])


@dataclass
class LoadedConfig:
    resolved: dict
    source: Path


def load_config(path: str | Path, overrides: dict | None = None) -> LoadedConfig:
    """Read and resolve a config file; JSON syntax errors report line and column."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError("", f"config file not found: {path}")
    text = path.read_text()
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as err:
        raise ConfigError("", f"{path}:{err.lineno}:{err.colno}: invalid JSON ({err.msg})") from None
    if not isinstance(raw, dict):
        raise ConfigError("", "top-level JSON value must be an object")
    for key, value in (overrides or {}).items():
        if value is not None:
            raw[key] = value
    return LoadedConfig(resolve(raw, path.parent), path)
