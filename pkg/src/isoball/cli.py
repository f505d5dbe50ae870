"""Command-line driver: ``isoball <experiment> [options]`` and ``isoball check``.

Every run writes ``results.csv`` (schema comment, header row, shortest
round-trip floats) and ``manifest.json`` into its output directory; the small
ball experiment also writes ``fit.json``. A manifest can be passed back via
``--config`` to repeat the run exactly.

Exit codes: 0 success, 2 configuration error, 3 numerical failure,
4 acceptance-threshold failure (``check`` only).
"""
import argparse
import configparser
from dataclasses import asdict, dataclass, fields
import json
import math
import os
from pathlib import Path
import platform
import sys

import numpy as np

from . import __version__
from ._backend import BACKEND
from .errors import ConfigError, IsoballError
from .spectrum import PowerSpectrum

SCHEMA_VERSION = 1
EXPERIMENTS = ("sample", "roots", "covering", "metric", "bounds", "smallball", "slnd", "chung")
EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_CHECK = 0, 2, 3, 4

DEFAULT_EPS = {
    "roots": "log10:-1:-6",
    "covering": "dyadic:0.16:4",
    "smallball": "0.06,0.07,0.08,0.09,0.1,0.12,0.14,0.16,0.19",
}


@dataclass
class RunConfig:
    """Everything that determines a run. Zero-valued optional knobs mean "use the policy default"."""

    experiment: str = "roots"
    alpha: float = 4.0
    modulation: str = "const:1"
    lmax: int = 100
    include_monopole: bool = False
    monopole: float = 0.0
    center_theta: float = 0.0
    center_phi: float = 0.0
    r: float = 0.2
    mesh_fill: float = 0.0
    eps_grid: str = ""
    replicates: int = 100000
    seed: int = 0
    refine: bool = True
    metric: str = "rho"
    distances: str = "geom:0.01:0.1:30"
    compare_lmax: int = 0
    n_configs: int = 200
    distance_floor: float = 0.05
    slnd_reach: float = 0.0
    sizes: str = "1,2,4,8"
    ratio: float = 1.5
    k_max: int = 0
    fill_fraction: float = 0.1
    n_seeds: int = 20
    theta_max: float = 0.1
    ell_max: int = 200
    out: str = ""

    def validate(self):
        if self.experiment not in EXPERIMENTS:
            raise ConfigError(f"unknown experiment {self.experiment!r}")
        if not self.alpha > 2.0:
            raise ConfigError("alpha must exceed 2")
        if self.lmax < 1:
            raise ConfigError("lmax must be positive")
        if self.experiment == "smallball":
            if self.replicates <= 0:
                raise ConfigError("replicates must be positive")
            if any(e >= self.r for e in self.eps_values()):
                raise ConfigError("every eps must be below r")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        return self

    def eps_values(self):
        return parse_grid(self.eps_grid or DEFAULT_EPS.get(self.experiment, "0.1"))

    def spectrum(self, lmax=None):
        return PowerSpectrum(self.alpha, lmax or self.lmax, self.modulation, self.include_monopole, self.monopole)

    def center(self):
        from .spheregeom import SpherePoint

        return SpherePoint(self.center_theta, self.center_phi)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, data):
        known = {f.name: f for f in fields(cls)}
        unknown = set(data) - set(known)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**{k: _coerce(known[k].type, v) for k, v in data.items()})


def _coerce(typ, value):
    name = typ if isinstance(typ, str) else typ.__name__
    if name == "bool":
        if isinstance(value, bool):
            return value
        text = str(value).strip().lower()
        if text in ("1", "true", "yes", "on"):
            return True
        if text in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"not a boolean: {value!r}")
    try:
        if name == "int":
            return int(value)
        if name == "float":
            return float(value)
    except (TypeError, ValueError):
        raise ConfigError(f"expected {name}, got {value!r}") from None
    return str(value)


def parse_grid(spec):
    """Parse ``a,b,c``, ``geom:lo:hi:n``, ``dyadic:start:n`` or ``log10:a:b``."""
    spec = str(spec).strip()
    try:
        kind, _, rest = spec.partition(":")
        if kind == "geom":
            lo, hi, n = rest.split(":")
            return np.geomspace(float(lo), float(hi), int(n)).tolist()
        if kind == "dyadic":
            start, n = rest.split(":")
            return [float(start) * 2.0**-j for j in range(int(n))]
        if kind == "log10":
            a, b = (int(v) for v in rest.split(":"))
            step = 1 if b >= a else -1
            return [10.0**k for k in range(a, b + step, step)]
        return [float(v) for v in spec.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"cannot parse grid {spec!r}") from None


def load_config(path):
    """Read a flat ``key = value`` file (INI-like) or a run manifest (JSON)."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file {path} not found")
    text = path.read_text(encoding="utf-8")
    if path.suffix == ".json":
        data = json.loads(text)
        return data.get("config", data)
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    parser.optionxform = str
    try:
        parser.read_string("[run]\n" + text)
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from None
    return {k: v for section in parser.sections() for k, v in parser[section].items()}


# ----------------------------------------------------------------- output


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(path, columns, rows, meta=None):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"# schema_version={SCHEMA_VERSION}\n")
        for k, v in (meta or {}).items():
            fh.write(f"# {k}={_fmt(v)}\n")
        fh.write(",".join(columns) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(row[c]) for c in columns) + "\n")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else None
    return obj


def write_json(path, obj):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(_jsonable(obj), fh, indent=2, sort_keys=True)
        fh.write("\n")


# ------------------------------------------------------------ experiments


class Result:
    def __init__(self, columns, rows, summary, meta=None, fit=None, certificates=None):
        self.columns = columns
        self.rows = rows
        self.summary = summary
        self.meta = meta or {}
        self.fit = fit
        self.certificates = certificates or {}


def run_sample(cfg, workers):
    from .field import sample_field, synthesize

    spec = cfg.spectrum()
    s = sample_field(spec, cfg.seed)
    rows, k = [], 0
    for ell in range(1, spec.max_degree + 1):
        for m in range(-ell, ell + 1):
            rows.append({"ell": ell, "m": m, "a": float(s.coefficients[k])})
            k += 1
    summary = {
        "count": int(s.coefficients.size),
        "mean": float(np.mean(s.coefficients)),
        "std": float(np.std(s.coefficients)),
        "value_at_center": synthesize(s, cfg.center()),
    }
    return Result(["ell", "m", "a"], rows, summary, {"L": spec.max_degree, "alpha": spec.alpha, "seed": cfg.seed})


def run_roots(cfg, workers):
    from .spheregeom import rho_ball_roots, rho_ball_volume

    rows = []
    for e in cfg.eps_values():
        rt = rho_ball_roots(e)
        e2 = e * e
        rows.append({
            "eps": e,
            "theta1": rt.theta1,
            "theta2": rt.theta2,
            "theta3": rt.theta3,
            "residuals": max(rt.residuals()),
            "theta1_ratio": rt.theta1**2 * abs(math.log(2.0 * e2)) / (2.0 * e2),
            "gap2_scaled": (e2 - rt.gap2) / e2,
            "gap3_scaled": (rt.gap3 - e2) / e2,
            "volume_ratio": rho_ball_volume(e) / (4.0 * math.pi * e2 / abs(math.log(e))),
        })
    ratios = [r["theta1_ratio"] for r in rows]
    summary = {
        "max_residual": max(r["residuals"] for r in rows),
        "theta1_ratio_last": ratios[-1],
        "theta1_ratio_monotone": bool(all(a < b for a, b in zip(ratios, ratios[1:]))),
        "gap2_shrinking": _shrinking([r["gap2_scaled"] for r in rows]),
        "gap3_shrinking": _shrinking([r["gap3_scaled"] for r in rows]),
    }
    return Result(list(rows[0]), rows, summary)


def _shrinking(values):
    mags = [abs(v) for v in values]
    return bool(all(a > b for a, b in zip(mags, mags[1:])))


def run_covering(cfg, workers):
    from .spheregeom import cap_mesh, covering_number, rho_inverse
    from .experiments import mesh_fill_for

    eps = sorted(cfg.eps_values(), reverse=True)
    metric = "rho" if cfg.metric == "rho" else cfg.spectrum()
    fill = cfg.mesh_fill or (rho_inverse(eps[-1] / 4.0) if metric == "rho" else mesh_fill_for(metric, eps[-1], 0.25))
    mesh = cap_mesh(cfg.center(), cfg.r, fill)
    rows = []
    for e in eps:
        c = covering_number(mesh, metric, e)
        rows.append({
            "eps": e, "count": c.count, "psi": c.bound_fn_value, "count_over_psi": c.count / c.bound_fn_value,
            "doubling_low": c.doubling_low, "doubling_high": c.doubling_high, "diameter": c.diameter,
        })
    k = max(r["count_over_psi"] for r in rows)
    summary = {
        "K": k,
        "octaves": math.log2(eps[0] / eps[-1]),
        "bound_holds": bool(all(r["count"] <= k * r["psi"] for r in rows)),
        "mesh_nodes": len(mesh),
        "doubling_max": max(r["doubling_high"] for r in rows),
    }
    return Result(list(rows[0]), rows, summary, {"mesh_nodes": len(mesh), "mesh_fill": fill})


def run_metric(cfg, workers):
    from .spectrum import metric_equivalence_scan, metric_sq_of_distance, rho, truncation_tail

    spec = cfg.spectrum()
    d = np.asarray(parse_grid(cfg.distances))
    lo, hi = metric_equivalence_scan(spec, d)
    dt2 = metric_sq_of_distance(spec, d)
    rows = [{"d": float(a), "dT2": float(b), "rho2": float(rho(a) ** 2), "ratio": float(b / rho(a) ** 2)}
            for a, b in zip(d, dt2)]
    summary = {"D_low": lo, "D_high": hi, "D_ratio": hi / lo}
    if cfg.compare_lmax:
        lo2, hi2 = metric_equivalence_scan(spec.with_max_degree(cfg.compare_lmax), d)
        summary.update({"D_low_compare": lo2, "D_high_compare": hi2,
                        "relative_shift": max(abs(lo2 - lo) / lo, abs(hi2 - hi) / hi)})
    cutoff = 100
    ell = np.arange(cutoff + 1, 10**6 + 1, dtype=float)
    direct = math.fsum(spec.modulation(ell) * ell ** -spec.alpha * (2 * ell + 1)) / (4 * math.pi)
    summary["tail_bound_over_direct"] = truncation_tail(spec, cutoff) / direct
    cert = {"tail_bound": truncation_tail(spec, spec.max_degree), "dT2_min": float(dt2.min())}
    return Result(list(rows[0]), rows, summary, certificates={"truncation": cert})


def run_bounds(cfg, workers):
    from .asymptotics import integral_bound_check, integral_bound_closed_form, legendre_bound_check, legendre_bound_ratio

    sup = legendre_bound_check(cfg.theta_max, cfg.ell_max)
    rows = []
    for p in (-1.0, 0.0, 0.25, 0.5, 0.75):
        for a in (0.5, math.exp(-1.0), 1e-2, 1e-4, 1e-8, 1e-16, 1e-32, 1e-300):
            res = integral_bound_check(p, a)
            rows.append({"p": p, "a": a, "lhs": res.lhs, "rhs_ratio": res.rhs_ratio,
                         "closed_form": integral_bound_closed_form(p, a) * a ** (1.0 - p) if a > 1e-200 else float("nan")})
    small = [r for r in rows if r["a"] == 1e-300]
    summary = {
        "legendre_sup": sup,
        "legendre_l1_small_theta": legendre_bound_ratio(1, 1e-6),
        "lhs_p0_inv_e": next(r["lhs"] for r in rows if r["p"] == 0.0 and r["a"] == math.exp(-1.0)),
        "rhs_ratio_max": max(r["rhs_ratio"] for r in rows),
        "limit_rel_error_max": max(abs(r["rhs_ratio"] * (1.0 - r["p"]) - 1.0) for r in small),
    }
    return Result(list(rows[0]), rows, summary)


def run_smallball(cfg, workers):
    from .asymptotics import rate_fit
    from .experiments import refinement_shift, small_ball_sweep

    spec = cfg.spectrum()
    eps = cfg.eps_values()
    fill = cfg.mesh_fill or None
    if cfg.refine:
        coarse, fine, within = refinement_shift(spec, cfg.center(), cfg.r, eps, cfg.replicates, cfg.seed, fill, workers)
        runs = [("coarse", coarse), ("fine", fine)]
    else:
        coarse = small_ball_sweep(spec, cfg.center(), cfg.r, eps, cfg.replicates, cfg.seed, fill, workers)
        runs, within = [("coarse", coarse)], []
    rows = []
    for level, run in runs:
        for est in run.estimates:
            rows.append({"level": level, **est.as_row()})
    usable = [e for e in coarse.estimates if e.usable]
    summary = {"n_usable": len(usable), "p_min": min((e.p_hat for e in usable), default=float("nan")),
               "p_max": max((e.p_hat for e in usable), default=float("nan"))}
    fit = None
    if len(usable) >= 4:
        f = rate_fit(usable)
        fit = f.to_dict()
        summary.update({"slope": f.slope, "r_squared": f.r_squared, "c_plus": f.c_plus, "c_minus": f.c_minus,
                        "c_ratio": f.c_plus / f.c_minus})
    p = [e.p_hat for e in sorted(coarse.estimates, key=lambda e: e.eps)]
    summary["monotone"] = bool(all(a <= b for a, b in zip(p, p[1:])))
    if within:
        summary["refine_within_ci"] = bool(all(within))
    return Result(list(rows[0]), rows, summary, {"mesh_nodes": coarse.estimates[0].mesh_nodes}, fit,
                  {"truncation": coarse.truncation_certificate,
                   "factor": {"method": coarse.factor.method, "rank": coarse.factor.rank,
                              "residual_variance": coarse.factor.residual_variance}})


def run_slnd(cfg, workers):
    from .experiments import slnd_scan

    sizes = tuple(int(v) for v in cfg.sizes.split(","))
    spec = cfg.spectrum()
    reach = cfg.slnd_reach or None
    res = slnd_scan(spec, cfg.n_configs, cfg.distance_floor, sizes, seed=cfg.seed, max_distance=reach)
    rows = [{"index": i, "ratio": float(v)} for i, v in enumerate(res.ratios)]
    summary = {"min_ratio": res.min_ratio, "by_layout": res.by_layout, "by_size": res.by_size, "argmin": res.argmin}
    if cfg.compare_lmax:
        res2 = slnd_scan(spec.with_max_degree(cfg.compare_lmax), cfg.n_configs, cfg.distance_floor, sizes,
                         seed=cfg.seed, max_distance=reach)
        summary.update({"min_ratio_compare": res2.min_ratio,
                        "relative_shift": abs(res2.min_ratio - res.min_ratio) / res.min_ratio})
        for row, v in zip(rows, res2.ratios):
            row["ratio_compare"] = float(v)
    return Result(list(rows[0]), rows, summary)


def run_chung(cfg, workers):
    from concurrent.futures import ThreadPoolExecutor
    from .experiments import chung_trace
    from .field import derive_seed

    spec = cfg.spectrum()
    seeds = [derive_seed(cfg.seed, j) for j in range(cfg.n_seeds)]

    def one(s):
        return chung_trace(spec, cfg.center(), cfg.ratio, cfg.k_max or None, cfg.fill_fraction, s)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            traces = list(pool.map(one, seeds))
    else:
        traces = [one(s) for s in seeds]
    rows = []
    for j, tr in enumerate(traces):
        for k, r, st, rm in zip(tr.exponents, tr.radii, tr.stats, tr.running_min):
            rows.append({"seed_index": j, "seed": tr.seed, "k": k, "r": r, "stat": st, "running_min": rm})
    term = np.array([tr.running_min[-1] for tr in traces])
    summary = {
        "terminal_min": float(term.min()),
        "terminal_mean": float(term.mean()),
        "terminal_cv": float(term.std(ddof=1) / term.mean()) if term.size > 1 else 0.0,
        "all_positive": bool(np.all(term > 0.0)),
        "nonincreasing": bool(all(all(a >= b for a, b in zip(t.running_min, t.running_min[1:])) for t in traces)),
    }
    return Result(list(rows[0]), rows, summary)


RUNNERS = {
    "sample": run_sample, "roots": run_roots, "covering": run_covering, "metric": run_metric,
    "bounds": run_bounds, "smallball": run_smallball, "slnd": run_slnd, "chung": run_chung,
}


def output_dir(cfg):
    base = cfg.out or os.environ.get("ISOBALL_OUT") or os.path.join("isoball_out", cfg.experiment)
    path = Path(base)
    try:
        path.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"cannot create output directory {path}: {exc}") from None
    if not os.access(path, os.W_OK):
        raise ConfigError(f"output directory {path} is not writable")
    return path


def manifest(cfg, result, workers):
    import scipy

    return {
        "schema_version": SCHEMA_VERSION,
        "config": cfg.to_dict(),
        "versions": {"isoball": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
                     "python": platform.python_version()},
        "backend": BACKEND,
        "seeds": {"master_seed": cfg.seed},
        "certificates": result.certificates,
        "summary": result.summary,
        "runtime": {"workers": workers},
    }


def run(cfg, workers=1):
    """Execute one experiment and write its files; returns ``(out_dir, Result)``."""
    cfg.validate()
    out = output_dir(cfg)
    result = RUNNERS[cfg.experiment](cfg, workers)
    write_csv(out / "results.csv", result.columns, result.rows, {"experiment": cfg.experiment, **result.meta})
    write_json(out / "manifest.json", manifest(cfg, result, workers))
    if result.fit is not None:
        write_json(out / "fit.json", result.fit)
    return out, result


def evaluate_thresholds(summary, criteria):
    """Compare summary values with ``{"name": {"min": a, "max": b, "equals": c}}`` criteria."""
    report = {}
    for name, rule in criteria.items():
        if name not in summary:
            raise ConfigError(f"threshold refers to unknown quantity {name!r}")
        value = summary[name]
        ok = value is not None and not (isinstance(value, float) and math.isnan(value))
        if ok and "min" in rule:
            ok = value >= rule["min"]
        if ok and "max" in rule:
            ok = value <= rule["max"]
        if ok and "equals" in rule:
            ok = value == rule["equals"]
        report[name] = {"value": value, "rule": rule, "pass": bool(ok)}
    return report


def check(cfg, thresholds_path, workers=1):
    path = Path(thresholds_path) if thresholds_path else None
    if path is None or not path.is_file():
        raise ConfigError(f"thresholds file {thresholds_path} not found")
    try:
        spec = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid thresholds file: {exc}") from None
    if "criteria" not in spec or not isinstance(spec["criteria"], dict):
        raise ConfigError("thresholds file needs a 'criteria' object")
    out, result = run(cfg, workers)
    report = evaluate_thresholds(result.summary, spec["criteria"])
    passed = all(v["pass"] for v in report.values())
    write_json(out / "check.json", {"experiment": cfg.experiment, "pass": passed, "criteria": report})
    return passed, report


# -------------------------------------------------------------------- CLI


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value config file or a previous manifest.json")
    common.add_argument("--out", help="output directory (default $ISOBALL_OUT or ./isoball_out/<experiment>)")
    common.add_argument("--seed", type=int, help="master seed (unsigned 64-bit)")
    common.add_argument("--workers", type=int, default=None, help="worker threads (default: CPU count)")
    common.add_argument("--alpha", type=float)
    common.add_argument("--lmax", type=int)
    common.add_argument("--r", type=float)
    common.add_argument("--eps-grid", dest="eps_grid", help="a,b,c | geom:lo:hi:n | dyadic:start:n | log10:a:b")
    common.add_argument("--replicates", type=int)
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override any config key (repeatable)")
    parser = argparse.ArgumentParser(prog="isoball", description="Small-ball experiments for isotropic spherical fields.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in EXPERIMENTS:
        sub.add_parser(name, parents=[common], help=f"run the {name} experiment")
    chk = sub.add_parser("check", parents=[common], help="run an experiment and compare with thresholds")
    chk.add_argument("--experiment", choices=EXPERIMENTS)
    chk.add_argument("--thresholds", help="JSON file with a 'criteria' object")
    return parser


def config_from_args(args, thresholds=None):
    """Defaults, then the config file, then command-line flags."""
    data = {}
    if args.config:
        data.update(load_config(args.config))
    if thresholds and "experiment" in thresholds:
        data.setdefault("experiment", thresholds["experiment"])
    if args.command != "check":
        data["experiment"] = args.command
    elif getattr(args, "experiment", None):
        data["experiment"] = args.experiment
    for key in ("out", "seed", "alpha", "lmax", "r", "eps_grid", "replicates"):
        val = getattr(args, key)
        if val is not None:
            data[key] = val
    for item in args.set:
        key, sep, val = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        data[key.strip().replace("-", "_")] = val.strip()
    return RunConfig.from_dict(data)


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    workers = args.workers or os.cpu_count() or 1
    try:
        thresholds = None
        if args.command == "check" and args.thresholds and Path(args.thresholds).is_file():
            try:
                thresholds = json.loads(Path(args.thresholds).read_text(encoding="utf-8"))
            except json.JSONDecodeError:
                thresholds = None
        cfg = config_from_args(args, thresholds)
        if args.command == "check":
            passed, report = check(cfg, args.thresholds, workers)
            for name, item in report.items():
                print(f"{'PASS' if item['pass'] else 'FAIL'} {name} = {item['value']!r} {item['rule']}")
            return EXIT_OK if passed else EXIT_CHECK
        out, result = run(cfg, workers)
        print(json.dumps(_jsonable(result.summary), sort_keys=True))
        print(f"wrote {out}")
        return EXIT_OK
    except (ConfigError, ValueError) as exc:
        if isinstance(exc, IsoballError) and not isinstance(exc, (ConfigError,)) and _numeric(exc):
            print(f"numerical failure: {exc}", file=sys.stderr)
            return EXIT_NUMERIC
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (IsoballError, ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


def _numeric(exc):
    from .errors import MeshResolutionError

    return isinstance(exc, MeshResolutionError)


if __name__ == "__main__":
    sys.exit(main())
