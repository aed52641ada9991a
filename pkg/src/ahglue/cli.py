"""Command line drivers: configuration, experiment runs and report emission.

Usage::

    ahglue glue --config run.json --out results/
    ahglue verify-identities --fault stencil
    ahglue kids --grid 32x32 --zmin 0.02

Configs are JSON objects whose keys are validated against ``CONFIG_SCHEMA``;
missing keys take the defaults in ``DEFAULTS``.  Every run writes
``report.json`` (sorted keys, no timings, so it is byte-deterministic for a
given config, seed and build id) and, where a table is produced, a CSV
companion.

Exit codes: 0 ok, 1 configuration error, 2 nonconvergence, 3 regression-gate
failure.
"""

import argparse
import csv
import hashlib
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .errors import AhglueError, ClosenessError, ConfigError, DegenerateMetricError, NonConvergenceError
from .geometry import build_metric
from .grid import build_grid
from .inequalities import (REGISTRY, IdentityCase, corner_constants, global_poincare_korn, korn_admissible,
                           rayleigh_min, sharp_stripe_constant, stripe_constants, stripe_model_1d, verify_identity)
from .kids import DEFAULT_LADDER, exact_static_kids, kernel_test, static_kid_convergence
from .operators import InitialData, hyperboloidal, static_ads
from .solver import (GluingProblem, expected_decay, glue_constraints, glue_scalar, lambda_exchange,
                     maskit_assemble)
from .weights import WeightConfig

log = logging.getLogger("ahglue")

EXIT_OK, EXIT_CONFIG, EXIT_NONCONVERGENCE, EXIT_GATE = 0, 1, 2, 3

_METRIC = {"catalog": str, "params": dict}
_WEIGHTS = {"a": (int, float), "b": (int, float), "c": (int, float), "sigma": (int, float), "k": int}

CONFIG_SCHEMA = {
    "common": {"n": int, "seed": int, "grid": (str, list), "zmin": (int, float)},
    "glue": {"g": _METRIC, "g_hat": _METRIC, "weights": _WEIGHTS, "tol": (int, float), "max_iter": int,
             "full": bool, "tau": (int, float), "decay_tol": (int, float)},
    "sweep-lambda": {"g": _METRIC, "g_hat": _METRIC, "weights": _WEIGHTS, "lams": list, "tol": (int, float),
                     "max_iter": int},
    "ineq": {"family": str, "kinds": list, "sweep": list, "z_depths": list, "resolutions": list,
             "use_K": bool},
    "verify-identities": {"identities": list, "resolutions": list, "fault": (str, type(None)),
                          "min_order": (int, float)},
    "kids": {"data": str, "system": str, "b": (int, float), "ladder": list, "kid_resolutions": list},
    "maskit": {"g1": _METRIC, "g2": _METRIC, "tau1": (int, float), "tau2": (int, float), "eps": (int, float)},
}

DEFAULTS = {
    "common": {"n": 3, "seed": 0, "grid": None, "zmin": None},
    "glue": {"g": {"catalog": "hyperbolic", "params": {}},
             "g_hat": {"catalog": "conformal_bump", "params": {"eps": 1e-3, "sigma": 3.0}},
             "weights": {"b": 1.0, "sigma": 3.0}, "tol": 1e-8, "max_iter": 20, "full": False, "tau": 0.5,
             "decay_tol": 0.1},
    "sweep-lambda": {"g": {"catalog": "hyperbolic", "params": {}},
                     "g_hat": {"catalog": "transverse_bump", "params": {"m": 0.01, "p": 3.0}},
                     "weights": {"b": 1.0, "sigma": 3.0}, "lams": [0.5, 0.25, 0.125, 0.0625],
                     "tol": 1e-8, "max_iter": 20},
    "ineq": {"family": "corner", "kinds": ["poincare", "korn"],
             "sweep": [{"b": 0.0, "c": 0.0}, {"b": 0.0, "c": -1.5}, {"b": 2.0, "c": 0.0}],
             "z_depths": [8.0, 16.0], "resolutions": [[24, 32], [32, 48]], "use_K": True},
    "verify-identities": {"identities": list(REGISTRY), "resolutions": [63, 127, 255], "fault": None,
                          "min_order": 1.9},
    "kids": {"data": "static_ads", "system": "static", "b": 1.0,
             "ladder": [[r[0], r[1], z] for r, z in DEFAULT_LADDER], "kid_resolutions": [33, 65, 129]},
    "maskit": {"g1": {"catalog": "hyperbolic", "params": {}}, "g2": {"catalog": "hyperbolic", "params": {}},
               "tau1": 1.0, "tau2": 1.0, "eps": 0.5},
}


# ----------------------------------------------------------------------------
# configuration
# ----------------------------------------------------------------------------

def _check(obj, schema, where):
    if not isinstance(obj, dict):
        raise ConfigError(f"{where}: expected an object")
    for key, val in obj.items():
        if key not in schema:
            raise ConfigError(f"{where}: unknown key {key!r}")
        typ = schema[key]
        if isinstance(typ, dict):
            _check(val, typ, f"{where}.{key}")
        elif isinstance(val, bool) and typ in (int, float, (int, float)):
            raise ConfigError(f"{where}.{key}: expected a number")
        elif not isinstance(val, typ):
            raise ConfigError(f"{where}.{key}: wrong type {type(val).__name__}")


def parse_grid(text):
    """``"NxM"`` (or a two-element list) -> ``(N, M)``; both at least 5 and at most 256."""
    try:
        if isinstance(text, str):
            parts = text.lower().split("x")
            if len(parts) != 2:
                raise ValueError
            res = (int(parts[0]), int(parts[1]))
        else:
            res = tuple(int(v) for v in text)
            if len(res) != 2:
                raise ValueError
    except (TypeError, ValueError):
        raise ConfigError(f"grid must look like NxM, got {text!r}") from None
    if min(res) < 5 or max(res) > 256:
        raise ConfigError(f"grid sizes must lie in [5, 256], got {res}")
    return res


def load_config(command, path=None, overrides=None):
    """Merged and validated configuration for ``command``."""
    raw = {}
    if path is not None:
        try:
            raw = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
    schema = dict(CONFIG_SCHEMA["common"], **CONFIG_SCHEMA[command])
    _check(raw, schema, "config")
    cfg = dict(DEFAULTS["common"], **DEFAULTS[command])
    cfg.update(raw)
    for k, v in (overrides or {}).items():
        if v is not None:
            cfg[k] = v
    if cfg["n"] < 3:
        raise ConfigError("n must be at least 3")
    if cfg["grid"] is not None:
        cfg["grid"] = list(parse_grid(cfg["grid"]))
    if cfg["zmin"] is not None and not 0 < cfg["zmin"] < 1:
        raise ConfigError("zmin must lie in (0, 1)")
    return cfg


def _weights(cfg):
    w = dict(cfg["weights"])
    return WeightConfig(n=cfg["n"], **w)


def _metric(spec, n):
    return build_metric(spec.get("catalog", "hyperbolic"), spec.get("params", {}), n=n)


def _annulus(cfg, default=(48, 48), zmin=0.02):
    res = tuple(cfg["grid"] or default)
    return build_grid("annulus", res, "log", cfg["zmin"] or zmin)


def build_id():
    """Hash of the package sources (stands in for a commit id)."""
    h = hashlib.sha256()
    for p in sorted(Path(__file__).parent.glob("*.py")):
        h.update(p.name.encode())
        h.update(p.read_bytes())
    return h.hexdigest()[:12]


def _clean(v):
    if isinstance(v, dict):
        return {str(k): _clean(x) for k, x in v.items() if k != "wall_time"}
    if isinstance(v, (list, tuple)):
        return [_clean(x) for x in v]
    if isinstance(v, np.ndarray):
        return _clean(v.tolist())
    if isinstance(v, (np.floating, float)):
        v = float(v)
        return v if np.isfinite(v) else None
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, np.bool_):
        return bool(v)
    return v


def _verdict(name, passed, measured, expected=None):
    return {"criterion": name, "passed": bool(passed), "measured": measured, "expected": expected}


# ----------------------------------------------------------------------------
# subcommands; each returns (report dict, csv rows or None, exit code)
# ----------------------------------------------------------------------------

def cmd_glue(cfg):
    n = cfg["n"]
    wc = _weights(cfg)
    grid = _annulus(cfg)
    g, g_hat = _metric(cfg["g"], n), _metric(cfg["g_hat"], n)
    if cfg["full"]:
        g, g_hat = InitialData(g, tau=cfg["tau"]), InitialData(g_hat, tau=cfg["tau"])
    prob = GluingProblem(g, g_hat, wc, grid, tol=cfg["tol"], max_iter=cfg["max_iter"])
    _, rep = (glue_constraints if cfg["full"] else glue_scalar)(prob)
    ex, ez, _ = expected_decay(wc)
    verdicts = [_verdict("residual", rep.residual_history[-1] <= cfg["tol"], rep.residual_history[-1], cfg["tol"]),
                _verdict("iterations", rep.iterations <= cfg["max_iter"], rep.iterations, cfg["max_iter"])]
    if "outside_max" in rep.extra:
        verdicts.append(_verdict("vanishes_outside_annulus", rep.extra["outside_max"] == 0.0,
                                 rep.extra["outside_max"], 0.0))
    for name, fit in rep.decay.items():
        if "x" in fit and rep.h_max > 0:
            for axis, want in (("x", ex), ("z", ez)):
                got = fit[axis]
                verdicts.append(_verdict(f"decay_{name}_{axis}", abs(got - want) <= cfg["decay_tol"] * abs(want),
                                         got, want))
    return {"solve": rep.to_dict(), "verdicts": verdicts}, None, EXIT_OK


def cmd_sweep_lambda(cfg):
    n = cfg["n"]
    lams = [float(v) for v in cfg["lams"]]
    if not lams or any(not 0 < v <= 1 for v in lams):
        raise ConfigError("lams must be a nonempty list of values in (0, 1]")
    wc = _weights(cfg)
    base = GluingProblem(_metric(cfg["g"], n), _metric(cfg["g_hat"], n), wc, _annulus(cfg),
                         tol=cfg["tol"], max_iter=cfg["max_iter"])
    out = lambda_exchange(base.g, base.g_hat, lams, base)
    want = wc.sigma - wc.b - 0.2
    verdicts = []
    if len(out["lams"]) >= 2:
        verdicts.append(_verdict("slope", out["slope"] >= want, out["slope"], want))
    if out.get("mass_g_hat") is not None and out["mass_glued"]:
        ref = out["mass_g_hat"]
        last = out["mass_glued"][-1]
        verdicts.append(_verdict("mass_proxy", abs(last - ref) <= 0.1 * abs(ref), last, ref))
    if 1.0 in lams and any(lam == 1.0 for lam, _ in out["errors"]):
        verdicts.append(_verdict("lambda_1_outside_smallness_regime", True, "diverged", None))
    rows = [dict(lam=lam, h_norm=h, residual=r) for lam, h, r in zip(out["lams"], out["h_norm"], out["residual"])]
    rep = {k: v for k, v in out.items() if k != "reports"}
    rep["reports"] = [r.to_dict() for r in out["reports"]]
    rep["verdicts"] = verdicts
    code = EXIT_NONCONVERGENCE if not out["lams"] else EXIT_OK
    return rep, rows, code


def _ineq_job(args):
    family, point, cfg = args
    n = cfg["n"]
    wc = WeightConfig(n=n, **point)
    if family == "corner":
        rows = corner_constants(wc, kinds=tuple(cfg["kinds"]), z_depths=tuple(cfg["z_depths"]),
                                resolutions=tuple(tuple(r) for r in cfg["resolutions"]))
        for r in rows:
            r["admissible"] = korn_admissible(wc.b, wc.c, n) if r["kind"] == "korn" else wc.b != (n - 1) / 2
        return rows
    if family == "hardy":
        val = rayleigh_min(stripe_model_1d(wc.b, n)).value
        ref = sharp_stripe_constant(wc.b, n)
        return [dict(kind="hardy_1d", b=wc.b, n=n, constant=val, sharp=ref, admissible=wc.b != (n - 1) / 2)]
    if family == "stripe":
        rows = []
        for kind in cfg["kinds"]:
            res = tuple(cfg["grid"] or (24, 48))
            r = stripe_constants(kind, wc, resolution=res)
            rows.append(dict(kind=kind, a=wc.a, b=wc.b, c=wc.c, n=n, constant=r.constant, converged=r.converged))
        return rows
    if family == "global":
        grid = _annulus(cfg)
        out = global_poincare_korn(wc, grid, kinds=tuple(cfg["kinds"]), use_K=cfg["use_K"])
        return [dict(kind=k, a=wc.a, b=wc.b, c=wc.c, n=n, constant=v)
                for k, v in sorted(out.items()) if isinstance(v, (int, float, np.floating))]
    raise ConfigError(f"unknown inequality family {family!r}")


def cmd_ineq(cfg, jobs=1):
    sweep = cfg["sweep"]
    if not sweep:
        raise ConfigError("ineq needs a nonempty sweep list")
    allowed = {"a", "b", "c", "sigma", "k"}
    for p in sweep:
        if not isinstance(p, dict) or not set(p) <= allowed:
            raise ConfigError(f"sweep entries are objects with keys from {sorted(allowed)}")
    if cfg["family"] not in ("corner", "hardy", "stripe", "global"):
        raise ConfigError(f"unknown inequality family {cfg['family']!r}")
    tasks = [(cfg["family"], p, cfg) for p in sweep]
    rows = [r for chunk in _map(_ineq_job, tasks, jobs) for r in chunk]
    return {"rows": rows}, rows, EXIT_OK


def cmd_verify_identities(cfg, jobs=1):
    names = cfg["identities"]
    if not names:
        raise ConfigError("no identities selected")
    for name in names:
        if name not in REGISTRY:
            raise ConfigError(f"unknown identity {name!r}")
    res = [int(r) for r in cfg["resolutions"]]
    if len(res) < 3 or any(not 9 <= r <= 256 for r in res):
        raise ConfigError("need at least three resolutions in [9, 256]")
    if cfg["fault"] not in (None, "stencil"):
        raise ConfigError("fault must be null or 'stencil'")
    tasks = [(name, res, cfg) for name in names]
    reports = list(_map(_identity_job, tasks, jobs))
    passed = all(r["passed"] for r in reports)
    rows = [dict(identity=r["identity"], min_order=r["min_order"], passed=r["passed"],
                 errors=" ".join(f"{e:.6e}" for e in r["errors"])) for r in reports]
    rep = {"identities": reports, "verdicts": [_verdict("identity_gate", passed, min(r["min_order"] for r in reports),
                                                        cfg["min_order"])]}
    return rep, rows, EXIT_OK if passed else EXIT_GATE


def _identity_job(args):
    name, res, cfg = args
    r = verify_identity(IdentityCase(name, seed=cfg["seed"]), tuple(res), cfg["n"], cfg["min_order"],
                        fault=cfg["fault"])
    return r.to_dict()


def cmd_kids(cfg):
    n = cfg["n"]
    ladder = []
    for rung in cfg["ladder"]:
        if len(rung) != 3:
            raise ConfigError("ladder rungs are [N, M, zmin]")
        ladder.append((parse_grid(rung[:2]), float(rung[2])))
    if cfg["grid"] is not None:
        zmin = cfg["zmin"] or ladder[-1][1]
        ladder = [(tuple(cfg["grid"]), zmin)]
    if len(ladder) < 2 and cfg["grid"] is None:
        raise ConfigError("kernel test needs at least two rungs")
    data = {"static_ads": static_ads, "hyperboloidal": hyperboloidal}.get(cfg["data"])
    if data is None:
        raise ConfigError(f"unknown data {cfg['data']!r}")
    if cfg["system"] not in ("static", "full"):
        raise ConfigError("system must be 'static' or 'full'")
    wc = WeightConfig(n=n, b=float(cfg["b"]))
    trend = kernel_test(data(n), wc, ladder, system=cfg["system"])
    conv = static_kid_convergence(n, tuple(cfg["kid_resolutions"]))
    admissible = wc.b <= (n + 1) / 2
    rows = [dict(grid=f"{r[0]}x{r[1]}", zmin=z, value=v) for (r, z), v in zip(ladder, trend.values)]
    verdicts = [_verdict(f"static_kid_{k}", v["min_order"] >= 1.9, v["min_order"], 1.9) for k, v in conv.items()]
    if len(ladder) >= 2:
        if admissible:
            verdicts.append(_verdict("no_kernel", trend.bounded_below, trend.variation, "< 0.2"))
        else:
            verdicts.append(_verdict("kernel_entry", not trend.bounded_below, trend.variation, ">= 0.2"))
    rep = {"kernel_trend": trend.to_dict(), "static_kids": conv, "catalog": list(exact_static_kids(n)),
           "verdicts": verdicts}
    anomaly = admissible and len(ladder) >= 2 and not trend.bounded_below
    return rep, rows, EXIT_GATE if anomaly else EXIT_OK


def cmd_maskit(cfg):
    n = cfg["n"]
    if not np.isclose(cfg["tau1"], cfg["tau2"]):
        raise ConfigError("maskit assembly needs matching tau")
    d1 = InitialData(_metric(cfg["g1"], n), tau=cfg["tau1"])
    d2 = InitialData(_metric(cfg["g2"], n), tau=cfg["tau2"])
    _, rep = maskit_assemble(d1, d2, cfg["eps"])
    verdicts = [_verdict("neck_constraints", max(rep["neck_J"], rep["neck_rho"]) <= 1e-8,
                         max(rep["neck_J"], rep["neck_rho"]), 1e-8)]
    return {"assembly": rep, "verdicts": verdicts}, None, EXIT_OK


def _map(fn, tasks, jobs):
    if jobs <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, tasks))


COMMANDS = {
    "glue": cmd_glue,
    "sweep-lambda": cmd_sweep_lambda,
    "ineq": cmd_ineq,
    "verify-identities": cmd_verify_identities,
    "kids": cmd_kids,
    "maskit": cmd_maskit,
}


# ----------------------------------------------------------------------------
# entry point
# ----------------------------------------------------------------------------

def _write(out_dir, report, rows):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "report.json").write_text(json.dumps(_clean(report), indent=2, sort_keys=True) + "\n")
    if rows:
        rows = _clean(rows)
        keys = sorted({k for r in rows for k in r})
        with open(out_dir / "table.csv", "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=keys, lineterminator="\n")
            w.writeheader()
            w.writerows(rows)


def build_parser():
    p = argparse.ArgumentParser(prog="ahglue", description="Gluing and weighted-inequality workbench.")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", help="JSON configuration file")
        s.add_argument("--out", default=None, help="output directory for report.json / table.csv")
        s.add_argument("--jobs", type=int, default=1, help="worker processes for sweeps")
        s.add_argument("--seed", type=int, default=None)
        s.add_argument("--grid", default=None, help="grid resolution NxM")
        s.add_argument("--zmin", type=float, default=None, help="truncation height")
        if name == "verify-identities":
            s.add_argument("--fault", choices=["stencil"], default=None,
                           help="inject a first-order stencil to exercise the gate")
        s.add_argument("-v", "--verbose", action="store_true")
    return p


def run(argv=None):
    """Parse ``argv``, run the subcommand and return ``(exit code, report)``."""
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    report = {"command": args.command, "build_id": build_id()}
    try:
        if args.jobs < 1:
            raise ConfigError("--jobs must be at least 1")
        overrides = dict(seed=args.seed, grid=args.grid, zmin=args.zmin)
        if getattr(args, "fault", None):
            overrides["fault"] = args.fault
        cfg = load_config(args.command, args.config, overrides)
        report["config"] = cfg
        report["seed"] = cfg["seed"]
        np.random.seed(cfg["seed"])
        fn = COMMANDS[args.command]
        if args.command in ("ineq", "verify-identities"):
            body, rows, code = fn(cfg, jobs=args.jobs)
        else:
            body, rows, code = fn(cfg)
        report.update(body)
    except (NonConvergenceError, ClosenessError) as exc:
        report["error"] = {"type": type(exc).__name__, "message": str(exc)}
        rep = getattr(exc, "report", None)
        if rep is not None:
            report["error"]["report"] = rep.to_dict() if hasattr(rep, "to_dict") else rep
        report["verdicts"] = [_verdict("convergence", False, str(exc))]
        rows, code = None, EXIT_NONCONVERGENCE
    except (ConfigError, DegenerateMetricError) as exc:
        report["error"] = {"type": type(exc).__name__, "message": str(exc)}
        rows, code = None, EXIT_CONFIG
    except AhglueError as exc:
        report["error"] = {"type": type(exc).__name__, "message": str(exc)}
        rows, code = None, EXIT_CONFIG
    report["exit_code"] = code
    if args.out:
        _write(args.out, report, rows)
    for v in report.get("verdicts", []):
        log.info("%s %s: %s", "PASS" if v["passed"] else "FAIL", v["criterion"], v["measured"])
    if "error" in report:
        print(f"ahglue {args.command}: {report['error']['type']}: {report['error']['message']}", file=sys.stderr)
    return code, _clean(report)


def main(argv=None):
    code, report = run(argv)
    if "error" not in report:
        summary = {k: report[k] for k in ("command", "exit_code", "verdicts") if k in report}
        print(json.dumps(summary, indent=2, sort_keys=True))
    return code


if __name__ == "__main__":
    sys.exit(main())
