"""Command-line front end: ``ergolab run | rate-table | list-experiments | validate``.

Exit codes: 0 pass or inconclusive, 1 a verdict failed, 2 invalid
configuration, 3 the computation raised.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import io
import json
import math
import platform
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from . import __version__
from .diffusion_sim import Dynamics
from .experiment_harness import (
    DEFAULT_SEED,
    ExperimentReport,
    TPoint,
    clt_check,
    ks_limit_law_test,
    lb_consistency_experiment,
    mc_moment_experiment,
    null_calibration,
    qsd_experiment,
)
from .model_spaces import Circle, Interval, space_from_dict
from .spectral_oracles import basis_for, example51_envelope, gamma_d, limit_t4, rate_t5, xi_k

try:  # Python >= 3.11
    import tomllib
except ModuleNotFoundError:  # pragma: no cover
    import tomli as tomllib

EXIT_PASS, EXIT_FAIL, EXIT_SCHEMA, EXIT_COMPUTE = 0, 1, 2, 3

KINDS = {
    "moment": "E[W_p(mu_t, mu)^q] over replicas; t E[W_2^2] against the spectral limit constant",
    "qsd": "killed BM on (0, l) conditioned on survival; both quasi-stationary constants",
    "limit-law": "two-sample KS of t W_2^2 against the spectral chi-square series",
    "clt": "variance of sqrt(t)(mu_t(f) - mu(f)) against 2 V_f",
    "lb-consistency": "N-atom subsampled occupation measures against the ball-measure lower bound",
    "bounds-audit": "spectral upper bound against exact W_p^p on random density pairs",
    "rate-table": "tabulate a rate envelope on a t grid",
}

RATE_KINDS = ("xi_k", "gamma_d", "t5", "cv51")


class ConfigError(ValueError):
    """Configuration failed schema validation."""


@dataclass
class ExperimentConfig:
    kind: str
    space: dict = field(default_factory=lambda: {"kind": "circle"})
    dynamics: dict = field(default_factory=lambda: {"kind": "bm"})
    p: float = 2.0
    q: float = 2.0
    t_list: List[float] = field(default_factory=lambda: [100.0, 200.0])
    replicas: Optional[int] = 400
    h: float = 1e-3
    n_max: int = 256
    seed: int = DEFAULT_SEED
    output: str = "ergolab-out"
    tolerance: Optional[float] = None
    x0: Optional[float] = None
    N_list: List[int] = field(default_factory=lambda: [10, 100, 1000])
    f_coeffs: List[float] = field(default_factory=lambda: [0.0, 1.0])
    n_modes: int = 64
    level: float = 0.01
    n_pairs: int = 100
    grid: int = 2048
    rate_kind: str = "t5"
    rate_params: dict = field(default_factory=dict)
    threads: Optional[int] = None

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


_INT_FIELDS = {"replicas", "n_max", "seed", "n_modes", "n_pairs", "grid", "threads"}
_FLOAT_FIELDS = {"p", "q", "h", "tolerance", "x0", "level"}


def _fail(msg):
    raise ConfigError(msg)


def validate_config(raw: dict) -> ExperimentConfig:
    """Schema check and coercion; raises :class:`ConfigError` before any compute."""
    if not isinstance(raw, dict):
        _fail("configuration must be a table/object")
    known = {f.name for f in dataclasses.fields(ExperimentConfig)}
    extra = sorted(set(raw) - known)
    if extra:
        _fail(f"unknown keys: {extra}")
    if "kind" not in raw:
        _fail("missing required key 'kind'")
    if raw["kind"] not in KINDS:
        _fail(f"kind must be one of {sorted(KINDS)}, got {raw['kind']!r}")
    vals = dict(raw)
    for k in _INT_FIELDS & set(vals):
        v = vals[k]
        if v is None and (k == "threads" or (k == "replicas" and raw.get("kind") == "qsd")):
            continue
        if isinstance(v, bool) or not isinstance(v, (int, float)) or int(v) != v:
            _fail(f"{k} must be an integer, got {v!r}")
        vals[k] = int(v)
    for k in _FLOAT_FIELDS & set(vals):
        v = vals[k]
        if v is None and k in ("tolerance", "x0"):
            continue
        if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
            _fail(f"{k} must be a finite number, got {v!r}")
        vals[k] = float(v)
    if raw["kind"] == "qsd" and "replicas" not in raw:
        vals["replicas"] = None  # sized from the survival probability
    cfg = ExperimentConfig(**vals)
    if cfg.replicas is not None and cfg.replicas < 1:
        _fail("replicas must be >= 1")
    if cfg.h <= 0:
        _fail("h must be positive")
    if cfg.p < 1 or cfg.q <= 0:
        _fail("need p >= 1 and q > 0")
    if cfg.n_max < 2:
        _fail("n_max must be >= 2")
    if not isinstance(cfg.t_list, list) or not cfg.t_list:
        _fail("t_list must be a non-empty list")
    try:
        cfg.t_list = [float(t) for t in cfg.t_list]
    except (TypeError, ValueError):
        _fail("t_list must contain numbers")
    if any(t <= 0 for t in cfg.t_list) or any(b <= a for a, b in zip(cfg.t_list, cfg.t_list[1:])):
        _fail("t_list must be positive and strictly increasing")
    if cfg.kind != "rate-table" and any(t < cfg.h for t in cfg.t_list):
        _fail("every t must be at least one step h")
    if not isinstance(cfg.space, dict) or not isinstance(cfg.dynamics, dict):
        _fail("space and dynamics must be tables")
    try:
        space_from_dict(cfg.space)
    except (TypeError, ValueError) as exc:
        _fail(f"space: {exc}")
    try:
        Dynamics(**cfg.dynamics)
    except (TypeError, ValueError) as exc:
        _fail(f"dynamics: {exc}")
    if cfg.kind == "lb-consistency":
        if not cfg.N_list or any(int(n) != n or n < 1 for n in cfg.N_list):
            _fail("N_list must contain positive integers")
        cfg.N_list = [int(n) for n in cfg.N_list]
    if cfg.kind == "rate-table":
        if cfg.rate_kind not in RATE_KINDS:
            _fail(f"rate_kind must be one of {RATE_KINDS}")
        if not isinstance(cfg.rate_params, dict):
            _fail("rate_params must be a table")
    if cfg.kind == "qsd":
        sp = space_from_dict(cfg.space)
        if not (isinstance(sp, Interval) and sp.boundary == "dirichlet"):
            _fail("qsd needs space = {kind = 'interval', boundary = 'dirichlet'}")
    if cfg.kind == "bounds-audit":
        sp = space_from_dict(cfg.space)
        if not isinstance(sp, (Circle, Interval)) or (isinstance(sp, Interval) and sp.boundary != "neumann"):
            _fail("bounds-audit needs a circle or Neumann interval")
        if cfg.n_pairs < 1 or cfg.grid < 16:
            _fail("need n_pairs >= 1 and grid >= 16")
    return cfg


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_bytes()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from None
    suffix = path.suffix.lower()
    try:
        if suffix == ".toml":
            raw = tomllib.loads(text.decode("utf-8"))
        elif suffix == ".json":
            raw = json.loads(text)
        else:
            raise ConfigError(f"unsupported config extension {suffix!r} (use .toml or .json)")
    except (tomllib.TOMLDecodeError, json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from None
    return validate_config(raw)


def config_hash(cfg: ExperimentConfig) -> str:
    blob = json.dumps(cfg.to_dict(), sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()


# ---------------------------------------------------------------------------
# rate tables
# ---------------------------------------------------------------------------


def rate_table(kind: str, params: dict, t_grid: Sequence[float]) -> str:
    """CSV text with columns ``t, envelope``."""
    if kind == "xi_k":
        fn = lambda t: xi_k(float(params["K"]), t)  # noqa: E731
    elif kind == "gamma_d":
        fn = lambda t: gamma_d(float(params["d"]), t)  # noqa: E731
    elif kind == "t5":
        fn = lambda t: rate_t5(float(params["d"]), t)  # noqa: E731
    elif kind == "cv51":
        fn = lambda t: example51_envelope(float(params["l"]), float(params["p"]), t)  # noqa: E731
    else:
        raise ConfigError(f"rate kind must be one of {RATE_KINDS}")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["t", "envelope"])
    for t in t_grid:
        w.writerow([repr(float(t)), repr(float(fn(float(t))))])
    return buf.getvalue()


# ---------------------------------------------------------------------------
# experiment dispatch
# ---------------------------------------------------------------------------


def _bounds_audit(cfg: ExperimentConfig) -> ExperimentReport:
    from .transport_engines import DensityOnGrid, ta1_upper_bound, wasserstein
    from .diffusion_sim import replica_rng

    space = space_from_dict(cfg.space)
    basis = basis_for(space, cfg.n_max)
    n = cfg.grid
    p = cfg.p
    rows = []
    violations = 0
    is_circle = isinstance(space, Circle)
    ext = space.circumference if is_circle else space.length
    for k in range(cfg.n_pairs):
        rng = replica_rng(cfg.seed, k)
        dens = []
        for _ in range(2):
            c = rng.uniform(-0.08, 0.08, size=(4, 2))
            w = 2 * math.pi / ext if is_circle else math.pi / ext

            def f(x, c=c, w=w):
                out = np.ones_like(x)
                for j in range(4):
                    out += c[j, 0] * np.cos((j + 1) * w * x)
                    if is_circle:
                        out += c[j, 1] * np.sin((j + 1) * w * x)
                return out

            dens.append(DensityOnGrid.from_function(space, f, n))
        exact = wasserstein(dens[0], dens[1], p).value ** p
        bound = ta1_upper_bound(basis, dens[0], dens[1], p)
        ok = exact <= bound.value * (1 + 1e-9) + 1e-15
        violations += not ok
        rows.append(TPoint(float(k), exact, float("nan"), 1, bound.value, exact / bound.value if bound.value else None,
                           "pass" if ok else "fail", {"bounds": list(bound.bounds)}))
    verdict = "pass" if violations == 0 else "fail"
    return ExperimentReport("bounds-audit", cfg.to_dict(), rows, {"provenance": "spectral upper bound vs exact"},
                            verdict, None, [], {}, {"violations": violations}, {})


def _limit_law(cfg: ExperimentConfig) -> ExperimentReport:
    space = space_from_dict(cfg.space)
    t = cfg.t_list[-1]
    stat, pval, verdict, samples = ks_limit_law_test(space, t, cfg.replicas, cfg.n_modes, cfg.seed, cfg.h, cfg.level,
                                                     threads=cfg.threads)
    lim = limit_t4(basis_for(space, cfg.n_max)).value
    m = float(np.mean(samples))
    pt = TPoint(t, m, float("nan"), int(samples.size), lim, m / lim, verdict, {"ks_statistic": stat, "p_value": pval})
    calib = null_calibration(basis_for(space, cfg.n_modes + 1).eigenvalues[1:], seed=cfg.seed, size=cfg.replicas,
                             level=cfg.level)
    flags = [] if calib >= 0.95 else ["null_calibration_below_95pct"]
    return ExperimentReport("limit-law", cfg.to_dict(), [pt], {"value": lim, "provenance": "limit_t4 (mean of law)"},
                            verdict if not flags else "fail", None, flags, {}, {"null_pass_fraction": calib}, {})


def run_experiment(cfg: ExperimentConfig) -> ExperimentReport:
    space = space_from_dict(cfg.space)
    dyn = Dynamics(**cfg.dynamics)
    if cfg.kind == "moment":
        return mc_moment_experiment(space, dyn, cfg.p, cfg.q, cfg.t_list, cfg.replicas, cfg.seed, cfg.h, cfg.n_max,
                                    0.15 if cfg.tolerance is None else cfg.tolerance, cfg.x0, threads=cfg.threads)
    if cfg.kind == "qsd":
        return qsd_experiment(space.length, cfg.x0, cfg.t_list, cfg.replicas, cfg.seed, cfg.h,
                              0.25 if cfg.tolerance is None else cfg.tolerance, n_max=cfg.n_max, threads=cfg.threads)
    if cfg.kind == "limit-law":
        return _limit_law(cfg)
    if cfg.kind == "clt":
        return clt_check(space, cfg.f_coeffs, cfg.t_list[-1], cfg.replicas, cfg.seed, cfg.h, threads=cfg.threads)
    if cfg.kind == "lb-consistency":
        return lb_consistency_experiment(space, cfg.t_list[-1], cfg.N_list, cfg.replicas, cfg.seed, cfg.p, cfg.h,
                                         threads=cfg.threads)
    if cfg.kind == "bounds-audit":
        return _bounds_audit(cfg)
    raise ConfigError(f"kind {cfg.kind!r} is not an experiment")


# ---------------------------------------------------------------------------
# output
# ---------------------------------------------------------------------------

SERIES_COLUMNS = ("t", "estimate", "ci_low", "ci_high", "target", "ratio", "verdict")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return "" if not math.isfinite(v) else repr(v)
    return str(v)


def write_outputs(report: ExperimentReport, cfg: ExperimentConfig, outdir: Path, started: float, finished: float):
    outdir.mkdir(parents=True, exist_ok=True)
    rep = _jsonable(report.to_dict(include_runtime=False))
    (outdir / "report.json").write_text(json.dumps(rep, sort_keys=True, indent=2) + "\n")
    with open(outdir / "series.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SERIES_COLUMNS)
        for p in report.points:
            w.writerow([_fmt(p.t), _fmt(p.estimate), _fmt(p.ci_low), _fmt(p.ci_high), _fmt(p.target), _fmt(p.ratio),
                        p.verdict])
    with open(outdir / "series.dat", "w") as fh:
        fh.write("# " + " ".join(SERIES_COLUMNS[:-1]) + "\n")
        for p in report.points:
            cells = [p.t, p.estimate, p.ci_low, p.ci_high, p.target, p.ratio]
            fh.write(" ".join("NaN" if c is None or not math.isfinite(c) else repr(float(c)) for c in cells) + "\n")
    manifest = {
        "config": cfg.to_dict(),
        "config_hash": config_hash(cfg),
        "seed": cfg.seed,
        "version": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "started": time.strftime("%Y-%m-%dT%H:%M:%S%z", time.localtime(started)),
        "finished": time.strftime("%Y-%m-%dT%H:%M:%S%z", time.localtime(finished)),
        "runtime_seconds": finished - started,
        "runtime": _jsonable(report.runtime),
        "verdict": report.verdict,
    }
    (outdir / "manifest.json").write_text(json.dumps(_jsonable(manifest), sort_keys=True, indent=2) + "\n")


def verdict_table(report: ExperimentReport) -> str:
    lines = [f"{report.kind}: verdict {report.verdict.upper()}"]
    lines.append(f"{'t':>10} {'estimate':>14} {'ci_half':>12} {'target':>14} {'ratio':>8}  verdict")
    for p in report.points:
        def f(v, w, fmt):
            return f"{'-':>{w}}" if v is None or (isinstance(v, float) and not math.isfinite(v)) else format(v, f">{w}{fmt}")
        lines.append(f"{f(p.t, 10, '.4g')} {f(p.estimate, 14, '.6g')} {f(p.ci_half, 12, '.3g')} "
                     f"{f(p.target, 14, '.6g')} {f(p.ratio, 8, '.3f')}  {p.verdict}")
    if report.rate_fit is not None:
        r = report.rate_fit
        lines.append(f"rate fit: exponent {r.exponent:.4f} ± {r.stderr:.4f}, R² {r.r2:.4f}")
    if report.flags:
        lines.append("flags: " + ", ".join(report.flags))
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


def cmd_run(args) -> int:
    try:
        cfg = load_config(args.config)
        if args.output:
            cfg.output = args.output
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_SCHEMA
    started = time.time()
    if cfg.kind == "rate-table":
        try:
            text = rate_table(cfg.rate_kind, cfg.rate_params, cfg.t_list)
        except (KeyError, ValueError) as exc:
            print(f"config error: {exc}", file=sys.stderr)
            return EXIT_SCHEMA
        out = Path(cfg.output)
        out.mkdir(parents=True, exist_ok=True)
        (out / "rate_table.csv").write_text(text)
        print(text, end="")
        return EXIT_PASS
    try:
        report = run_experiment(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_SCHEMA
    except Exception as exc:  # noqa: BLE001
        print(f"compute error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_COMPUTE
    finished = time.time()
    write_outputs(report, cfg, Path(cfg.output), started, finished)
    print(verdict_table(report))
    return EXIT_FAIL if report.verdict == "fail" else EXIT_PASS


def cmd_validate(args) -> int:
    try:
        cfg = load_config(args.config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_SCHEMA
    print(f"ok: kind={cfg.kind} hash={config_hash(cfg)[:12]}")
    return EXIT_PASS


def cmd_list(args) -> int:
    for k, v in KINDS.items():
        print(f"{k:<16} {v}")
    bundled = Path(__file__).parent / "configs"
    if bundled.is_dir():
        print("\nbundled configs:")
        for p in sorted(bundled.glob("*.toml")):
            print(f"  {p}")
    return EXIT_PASS


def _parse_params(items):
    out = {}
    for it in items or []:
        if "=" not in it:
            raise ConfigError(f"parameter {it!r} must look like name=value")
        k, v = it.split("=", 1)
        out[k] = float(v)
    return out


def cmd_rate_table(args) -> int:
    try:
        params = _parse_params(args.param)
        text = rate_table(args.kind, params, args.t)
    except (ConfigError, KeyError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SCHEMA
    if args.output:
        Path(args.output).write_text(text)
    else:
        print(text, end="")
    return EXIT_PASS


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ergolab", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"ergolab {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run an experiment from a TOML/JSON config")
    r.add_argument("config")
    r.add_argument("-o", "--output", help="override the output directory")
    r.set_defaults(func=cmd_run)
    v = sub.add_parser("validate", help="check a config without computing")
    v.add_argument("config")
    v.set_defaults(func=cmd_validate)
    sub.add_parser("list-experiments", help="list experiment kinds and bundled configs").set_defaults(func=cmd_list)
    t = sub.add_parser("rate-table", help="tabulate a rate envelope")
    t.add_argument("--kind", required=True, choices=RATE_KINDS)
    t.add_argument("--param", action="append", help="name=value, e.g. K=1.5 or d=4 or l=6")
    t.add_argument("--t", type=float, nargs="+", required=True)
    t.add_argument("-o", "--output")
    t.set_defaults(func=cmd_rate_table)
    return ap


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
