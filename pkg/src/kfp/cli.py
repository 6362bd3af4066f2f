"""Command-line driver: ``kfp solve|battery|verify|compare|mc|exhaust|run``.

Every run writes ``run.json`` (resolved config, results and, separately,
wall times), a ``summary.txt`` and the computed fields as CSV and binary.
Exit codes: 0 ok, 1 numerical failure, 2 config error.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from . import __version__
from .config import SCHEMA, ConfigError, dumps, load_config, resolve_config
from .discretization import (ConvergenceError, DiscreteField, assemble, read_field_binary, solve_direct,
                             weak_residual, write_field_binary, write_field_csv)
from .geometry import (Point, ProductDomain, classify_boundary, compose, dilate, domain_from_json,
                       homogeneous_norm, inverse, quasi_distance, BoundaryClass)
from .problems import build_problem, data_function, interior_error, refined_resolution

__all__ = ["main", "run_config", "compare_runs", "NumericalFailure"]

EXIT_OK, EXIT_NUMERICAL, EXIT_CONFIG = 0, 1, 2


class NumericalFailure(RuntimeError):
    """A run completed but its numerical checks failed."""


# --------------------------------------------------------------------------- output


def _write_field(u: DiscreteField, out: Path, name: str, formats) -> dict:
    entry = {"shape": list(u.values.shape),
             "axes": [a.tolist() for a in u.grid.x_axes + u.grid.y_axes + (u.grid.t_axis,)]}
    if "csv" in formats:
        write_field_csv(u, out / f"{name}.csv")
        entry["csv"] = f"{name}.csv"
    if "binary" in formats:
        write_field_binary(u, out / f"{name}.bin")
        entry["binary"] = f"{name}.bin"
    return entry


def _summary_lines(obj, prefix=""):
    if isinstance(obj, dict):
        for k, v in obj.items():
            if k in ("axes", "shape") or (isinstance(v, list) and len(v) > 8):
                continue
            yield from _summary_lines(v, f"{prefix}{k}." if isinstance(v, (dict, list)) else f"{prefix}{k}")
    elif isinstance(obj, list) and all(isinstance(v, (int, float)) for v in obj):
        yield f"{prefix.rstrip('.')}: " + ", ".join(format(v, ".6g") for v in obj)
    elif isinstance(obj, list):
        for i, v in enumerate(obj):
            yield from _summary_lines(v, f"{prefix}{i}.")
    else:
        val = format(obj, ".6g") if isinstance(obj, float) else str(obj)
        yield f"{prefix.rstrip('.')}: {val}"


def _finish(cfg: dict, results: dict, timing: dict, out: Path, status: str) -> None:
    out.mkdir(parents=True, exist_ok=True)
    doc = {"schema": SCHEMA, "version": __version__, "status": status, "config": cfg,
           "results": results, "timing": timing}
    (out / "run.json").write_text(dumps(doc))
    lines = [f"mode: {cfg['mode']}", f"status: {status}"] + list(_summary_lines(results))
    lines += [f"wall time {k}: {v:.3f} s" for k, v in timing.items()]
    (out / "summary.txt").write_text("\n".join(lines) + "\n")


# --------------------------------------------------------------------------- modes


def _mode_direct(cfg, out, jobs):
    pb = build_problem(cfg)
    s = cfg["solver"]
    t0 = time.perf_counter()
    op = assemble(pb.A, pb.grid, pb.gstar, pb.g)
    u, rep = solve_direct(op, method=s["method"], solver=s["slab"], tol=s["tol"], maxiter=s["maxiter"])
    res = {"solve": rep.as_dict(), "unknowns": int(op.E.size),
           "min_u": float(u.flat.min()), "max_u": float(u.flat.max()),
           "min_g": float(pb.g.flat[pb.grid.kolmogorov_mask].min()),
           "max_g": float(pb.g.flat[pb.grid.kolmogorov_mask].max())}
    if pb.exact is not None:
        res["error"] = interior_error(u, pb.exact)
    res["fields"] = {"u": _write_field(u, out, "u", cfg["output"]["fields"])}
    return res, {"solve": time.perf_counter() - t0}


def _mode_variational(cfg, out, jobs):
    from .variational import minimize_joint
    pb = build_problem(cfg)
    t0 = time.perf_counter()
    mp = minimize_joint(pb.g, pb.gstar, pb.A, pb.grid)
    u = mp.f
    res = {"minimizer": mp.as_dict(), "weak_residual": weak_residual(u, pb.A, pb.g, pb.gstar, pb.grid),
           "min_u": float(u.flat.min()), "max_u": float(u.flat.max())}
    if pb.exact is not None:
        res["error"] = interior_error(u, pb.exact)
    res["fields"] = {"u": _write_field(u, out, "u", cfg["output"]["fields"])}
    return res, {"solve": time.perf_counter() - t0}


def _battery_level(cfg, level):
    b = cfg["battery"]
    resol = refined_resolution(b["base"], level)
    pb = build_problem(cfg, resol)
    if pb.exact is None:
        raise ConfigError("battery needs data with a known exact solution "
                          "(constant, affine, or kernel data with A = I and g* = 0)", "data")
    t0 = time.perf_counter()
    s = cfg["solver"]
    op = assemble(pb.A, pb.grid, pb.gstar, pb.g)
    u, rep = solve_direct(op, method=s["method"], solver=s["slab"], tol=s["tol"], maxiter=s["maxiter"], norms=False)
    err = interior_error(u, pb.exact)
    h = max(float(np.max(np.diff(a))) for a in pb.grid.x_axes + pb.grid.y_axes + (pb.grid.t_axis,))
    return {"level": level, "resolution": resol, "h": h, "unknowns": int(op.E.size), **err}, \
        time.perf_counter() - t0


def _mode_battery(cfg, out, jobs):
    if len(cfg["battery"]["base"]) != 2 * cfg["m"] + 1:
        raise ConfigError(f"battery.base needs {2 * cfg['m'] + 1} node counts", "battery.base")
    levels = range(cfg["battery"]["levels"])
    with ThreadPoolExecutor(max_workers=max(1, jobs)) as pool:
        done = list(pool.map(lambda k: _battery_level(cfg, k), levels))
    rows = [r for r, _ in done]
    for prev, cur in zip(rows, rows[1:]):
        cur["order"] = float(np.log2(prev["l2"] / cur["l2"])) if cur["l2"] > 0 else float("nan")
    rows[0]["order"] = float("nan")
    with open(out / "convergence.csv", "w") as fh:
        fh.write("level,resolution,h,unknowns,l2_error,sup_error,order\n")
        for r in rows:
            fh.write(",".join([str(r["level"]), "x".join(map(str, r["resolution"])), format(r["h"], ".17g"),
                               str(r["unknowns"]), format(r["l2"], ".17g"), format(r["sup"], ".17g"),
                               format(r["order"], ".17g")]) + "\n")
    errs = [r["l2"] for r in rows]
    monotone = bool(all(b < a for a, b in zip(errs, errs[1:])))
    res = {"levels": rows, "monotone": monotone, "table": "convergence.csv"}
    timing = {f"level_{k}": t for k, (_, t) in enumerate(done)}
    if not monotone:
        raise NumericalFailure("battery errors are not monotonically decreasing", res, timing)
    return res, timing


def _check(value, tol, ok) -> dict:
    return {"value": value, "tolerance": tol, "pass": bool(ok)}


def geometry_checks(m: int, samples: int, seed: int) -> dict:
    """Group law, inverse, dilation homogeneity and quasi-distance symmetry on random points."""
    rng = np.random.default_rng(seed)
    P = rng.normal(size=(samples, 3, 2 * m + 1)) * rng.choice([0.1, 1.0, 10.0], size=(samples, 3, 1))
    assoc = inv = hom = sym = 0.0
    for a, b, c in P:
        p, q, r = (Point.from_array(v) for v in (a, b, c))
        lhs = compose(compose(p, q), r).as_array()
        rhs = compose(p, compose(q, r)).as_array()
        assoc = max(assoc, float(np.max(np.abs(lhs - rhs)) / max(1.0, np.max(np.abs(rhs)))))
        e1, e2 = compose(p, inverse(p)).as_array(), compose(inverse(p), p).as_array()
        inv = max(inv, float(max(np.max(np.abs(e1)), np.max(np.abs(e2)))) / max(1.0, float(np.max(np.abs(a)))))
        lam = float(np.exp(rng.uniform(-2, 2)))
        n = homogeneous_norm(p)
        hom = max(hom, abs(homogeneous_norm(dilate(lam, p)) - lam * n) / max(lam * n, 1e-300))
        d1, d2 = quasi_distance(p, q), quasi_distance(q, p)
        sym = max(sym, abs(d1 - d2) / max(d1, 1e-300))
    out = {"associativity": _check(assoc, 1e-12, assoc <= 1e-12),
           "inverse": _check(inv, 1e-12, inv <= 1e-12),
           "dilation_homogeneity": _check(hom, 1e-12, hom <= 1e-12),
           "quasi_distance_symmetry": _check(sym, 1e-12, sym <= 1e-12)}
    out["boundary_classification"] = _classification_check()
    return out


def _classification_check() -> dict:
    """Exhaustive node check on a small m = 1 box grid."""
    from .discretization import build_grid
    dom = ProductDomain([[-1, 1]], [[-1, 1], [0, 1]])
    grid = build_grid(dom, [9, 9, 9])
    X, Y, t = grid.coordinates()
    kol = grid.kolmogorov_mask
    t0, t1 = np.isclose(t, 0.0), np.isclose(t, 1.0)
    xface = np.isclose(np.abs(X[:, 0]), 1.0)
    yface = np.isclose(np.abs(Y[:, 0]), 1.0)
    # the final face counts without its edges, which belong to inflow faces too
    bad = int(np.sum(~kol[t0]) + np.sum(kol[t1 & ~xface & ~yface]))
    for sgn in (1.0, -1.0):
        face = np.isclose(Y[:, 0], sgn) & ~t0 & ~t1 & ~xface
        want = sgn * X[face, 0] > 0
        bad += int(np.sum(kol[face] != want))
        for x in X[face, 0]:
            cls = classify_boundary(dom, [sgn, 0.0], [x])
            bad += int((cls is BoundaryClass.KOLMOGOROV) != (sgn * x > 0))
    return _check(bad, 0, bad == 0)


def _mode_verify(cfg, out, jobs):
    from .kernel import kernel_gates
    v = cfg["verify"]
    suite = v["suite"]
    if suite not in ("geometry", "kernel", "all"):
        raise ConfigError("verify.suite must be geometry, kernel or all", "verify.suite")
    t0 = time.perf_counter()
    res = {}
    if suite in ("geometry", "all"):
        res["geometry"] = geometry_checks(cfg["m"], v["samples"], v["seed"])
    if suite in ("kernel", "all"):
        gates = kernel_gates(cfg["m"])
        res["kernel"] = {
            "normalization": _check(gates["normalization_error"], 1e-6, gates["normalization_ok"]),
            "chapman_kolmogorov": _check(gates["chapman_kolmogorov_error"], 1e-4, gates["chapman_kolmogorov_ok"]),
            "pde_residual_order": _check(gates["pde_residual_order"], 2.0, gates["pde_residual_ok"]),
            "dilation_exponent": _check(gates["dilation_exponent"], -4 * cfg["m"], gates["dilation_ok"]),
        }
    passed = all(c["pass"] for grp in res.values() for c in grp.values())
    res["passed"] = passed
    timing = {"verify": time.perf_counter() - t0}
    if not passed:
        raise NumericalFailure("verification checks failed", res, timing)
    return res, timing


def _mc_domain(cfg):
    return ProductDomain(cfg["domain"]["U_X"], cfg["domain"]["V_Yt"])


def _mode_montecarlo(cfg, out, jobs):
    from .coefficients import field_from_config
    from .stochastic import estimate_parabolic_measure, estimate_solution
    m = cfg["m"]
    A = field_from_config(cfg["coefficients"], m)
    if not A.is_constant:
        raise ConfigError("the Monte-Carlo oracle needs a constant coefficient matrix", "coefficients.family")
    mc = cfg["montecarlo"]
    if not mc["probes"]:
        raise ConfigError("montecarlo.probes is empty; give probes in the config or with --probe",
                          "montecarlo.probes")
    phi = data_function(cfg["data"]["g"], m)
    if phi is None:
        raise ConfigError("Monte-Carlo needs data given as a function, not random node values", "data.g")
    if cfg["data"]["gstar"]["type"] != "zero":
        raise ConfigError("the Monte-Carlo oracle covers g* = 0 only", "data.gstar")
    dom = _mc_domain(cfg)
    Am = np.asarray(A.fn(None, None, None), dtype=float)
    t0 = time.perf_counter()
    probes, timing = [], {}
    for i, p in enumerate(mc["probes"]):
        start = Point.from_array(p)
        if not dom.contains(start, closed=True):
            raise ConfigError(f"probe {p} lies outside the domain", f"montecarlo.probes.{i}")
        ts = time.perf_counter()
        r = estimate_solution(start, dom, phi, paths=mc["paths"], dt=mc["dt"], seed=mc["seed"] + i, A=Am,
                              antithetic=mc["antithetic"], exact_y=mc["exact_y"], bridge=mc["bridge"], jobs=jobs)
        entry = {"point": [float(v) for v in p], **r.as_dict()}
        if mc["patches"] is not None:
            patches = None if mc["patches"] == "all" else mc["patches"]
            meas = estimate_parabolic_measure(start, dom, patches, paths=mc["paths"], dt=mc["dt"],
                                              seed=mc["seed"] + i, A=Am, bridge=mc["bridge"], jobs=jobs)
            entry["measure"] = meas
        probes.append(entry)
        timing[f"probe_{i}"] = time.perf_counter() - ts
    timing["total"] = time.perf_counter() - t0
    return {"probes": probes}, timing


def _mode_exhaustion(cfg, out, jobs):
    from .coefficients import field_from_config
    from .exhaustion import solve_exhaustion, write_convergence_csv
    m = cfg["m"]
    ex = cfg["exhaustion"]
    try:
        omega = domain_from_json({**ex["graph"], "type": "graph", "m": m})
    except ValueError as exc:
        raise ConfigError(str(exc), "exhaustion.graph") from exc
    A = field_from_config(cfg["coefficients"], m)
    g = data_function(cfg["data"]["g"], m)
    gs = data_function(cfg["data"]["gstar"], m)
    if g is None or gs is None:
        raise ConfigError("exhaustion data must be given as functions", "data")
    if len(ex["core_counts"]) != 2 * m + 1:
        raise ConfigError(f"exhaustion.core_counts needs {2 * m + 1} entries", "exhaustion.core_counts")
    try:
        result = solve_exhaustion(omega, ex["V"], g, gs, A, ex["R_list"], ex["probe"], ex["core_counts"],
                                  ratio=ex["ratio"], method=cfg["solver"]["method"])
    except ValueError as exc:
        raise ConfigError(str(exc), "exhaustion") from exc
    write_convergence_csv(result, out / "convergence.csv")
    steps = [{k: v for k, v in s.as_dict().items() if k != "wall_time"} for s in result.steps]
    res = {"steps": steps, "differences": result.differences.tolist(), "monotone": result.monotone,
           "table": "convergence.csv"}
    if not result.monotone:
        print("warning: exhaustion differences are not strictly decreasing", file=sys.stderr)
    return res, {f"R_{s.R:g}": s.wall_time for s in result.steps}


MODES = {"direct": _mode_direct, "variational": _mode_variational, "battery": _mode_battery,
         "verify": _mode_verify, "montecarlo": _mode_montecarlo, "exhaustion": _mode_exhaustion}


def run_config(cfg: dict, out, jobs: int = 1) -> int:
    """Execute a resolved config, write the artifacts and return the exit code."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    try:
        results, timing = MODES[cfg["mode"]](cfg, out, jobs)
    except ConfigError:
        raise
    except ValueError as exc:
        # invalid parameter combinations surface from the constructors
        raise ConfigError(str(exc)) from exc
    except NumericalFailure as exc:
        msg, results, timing = exc.args
        _finish(cfg, {**results, "failure": msg}, timing, out, "failed")
        print(f"error: {msg}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (ConvergenceError, np.linalg.LinAlgError, FloatingPointError) as exc:
        _finish(cfg, {"failure": str(exc)}, {}, out, "failed")
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    _finish(cfg, results, timing, out, "ok")
    return EXIT_OK


# --------------------------------------------------------------------------- compare


def _load_run(path) -> tuple[dict, Path]:
    path = Path(path)
    if path.is_dir():
        path = path / "run.json"
    try:
        return json.loads(path.read_text()), path.parent
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read run file: {exc}", source=str(path)) from exc


def _field(doc: dict, base: Path):
    f = doc.get("results", {}).get("fields", {}).get("u")
    if f is None:
        return None
    if "binary" in f:
        vals = read_field_binary(base / f["binary"])
    else:
        vals = np.loadtxt(base / f["csv"], delimiter=",", skiprows=1)[:, -1].reshape(f["shape"])
    return vals, [np.asarray(a) for a in f["axes"]]


def compare_runs(a, b, tolerance: float) -> tuple[bool, dict]:
    """Compare two runs: fields by relative L^2 and sup, or MC probes against a field within 3 SE."""
    da, ba = _load_run(a)
    db, bb = _load_run(b)
    fa, fb = _field(da, ba), _field(db, bb)
    pa, pb = (d.get("results", {}).get("probes") for d in (da, db))
    if fa is not None and fb is not None:
        (va, xa), (vb, xb) = fa, fb
        if va.shape != vb.shape or any(x.shape != y.shape or not np.allclose(x, y, rtol=0, atol=1e-14)
                                       for x, y in zip(xa, xb)):
            raise ConfigError(f"grid mismatch: shapes {list(va.shape)} and {list(vb.shape)} "
                              "or different node coordinates", source="compare")
        d = va - vb
        ref = max(np.linalg.norm(vb), np.linalg.norm(va), np.finfo(float).tiny)
        rep = {"kind": "field", "relative_l2": float(np.linalg.norm(d) / ref),
               "sup": float(np.max(np.abs(d))),
               "relative_sup": float(np.max(np.abs(d)) / max(np.max(np.abs(vb)), np.finfo(float).tiny))}
        rep["within_tolerance"] = rep["relative_l2"] <= tolerance
        return rep["within_tolerance"], rep
    if (fa is not None or fb is not None) and (pa or pb):
        (vals, axes), probes = (fa, pb) if fa is not None else (fb, pa)
        interp = RegularGridInterpolator(axes, vals)
        rows = []
        for p in probes:
            pt = np.asarray(p["point"], dtype=float)
            if np.any(pt < [x[0] for x in axes]) or np.any(pt > [x[-1] for x in axes]):
                raise ConfigError(f"probe {p['point']} lies outside the field grid", source="compare")
            v = float(interp(pt[None])[0])
            z = abs(v - p["mean"]) / p["std_error"] if p["std_error"] > 0 else (0.0 if v == p["mean"] else np.inf)
            rows.append({"point": p["point"], "field": v, "mean": p["mean"], "std_error": p["std_error"],
                         "z": float(z), "ok": bool(z <= 3.0)})
        ok = all(r["ok"] for r in rows)
        return ok, {"kind": "probes", "probes": rows, "within_tolerance": ok}
    if pa and pb:
        if len(pa) != len(pb):
            raise ConfigError("runs have different probe counts", source="compare")
        rows = []
        for p, q in zip(pa, pb):
            if not np.allclose(p["point"], q["point"]):
                raise ConfigError(f"probe mismatch: {p['point']} vs {q['point']}", source="compare")
            se = float(np.hypot(p["std_error"], q["std_error"]))
            diff = abs(p["mean"] - q["mean"])
            ok = diff <= 3 * se if se > 0 else diff <= tolerance
            rows.append({"point": p["point"], "difference": diff, "std_error": se, "ok": bool(ok)})
        ok = all(r["ok"] for r in rows)
        return ok, {"kind": "probes", "probes": rows, "within_tolerance": ok}
    raise ConfigError("runs carry no comparable fields or probes", source="compare")


# --------------------------------------------------------------------------- argument handling


def _jobs(args) -> int:
    env = os.environ.get("KFP_JOBS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ConfigError(f"KFP_JOBS must be an integer, got {env!r}", source="environment") from None
    return max(1, args.jobs)


def _parse_probe(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"probe must be comma-separated numbers, got {text!r}") from None


def _load(args, mode: str | None = None) -> dict:
    cfg, text = load_config(args.config)
    raw = json.loads(text)
    if mode is not None:
        raw["mode"] = mode
    if getattr(args, "seed", None) is not None:
        raw.setdefault("montecarlo", {})["seed"] = args.seed
        raw.setdefault("verify", {})["seed"] = args.seed
    if mode == "montecarlo":
        mc = raw.setdefault("montecarlo", {})
        if args.paths is not None:
            mc["paths"] = args.paths
        if args.dt is not None:
            mc["dt"] = args.dt
        if args.probe:
            mc["probes"] = args.probe
    return resolve_config(raw, text, str(args.config))


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="kfp", description="Kinetic Fokker-Planck Dirichlet solvers and oracles.")
    p.add_argument("--version", action="version", version=f"kfp {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out=True):
        sp.add_argument("config", help="JSON config file")
        if out:
            sp.add_argument("-o", "--out", default="kfp-out", help="output directory (default kfp-out)")
        sp.add_argument("--jobs", type=int, default=1, help="worker count; KFP_JOBS overrides")
        sp.add_argument("--seed", type=int, default=None, help="override the config seed")

    run = sub.add_parser("run", help="run the mode named in the config")
    common(run)
    solve = sub.add_parser("solve", help="direct solve (or variational with --variational)")
    common(solve)
    solve.add_argument("--variational", action="store_true", help="use the joint minimisation")
    common(sub.add_parser("battery", help="refinement study with a convergence CSV"))
    common(sub.add_parser("verify", help="algebraic and kernel verification suites"))
    common(sub.add_parser("exhaust", help="increasing-domain solves with a convergence CSV"))
    mc = sub.add_parser("mc", help="Monte-Carlo estimates at probe points")
    common(mc)
    mc.add_argument("--paths", type=int, default=None)
    mc.add_argument("--dt", type=float, default=None)
    mc.add_argument("--probe", type=_parse_probe, action="append", help="probe x,y,t (repeatable)")
    cmp_ = sub.add_parser("compare", help="compare two run.json files")
    cmp_.add_argument("run_a")
    cmp_.add_argument("run_b")
    cmp_.add_argument("--tolerance", type=float, default=1e-8)
    return p


_COMMAND_MODES = {"battery": "battery", "verify": "verify", "exhaust": "exhaustion", "mc": "montecarlo"}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "compare":
            ok, rep = compare_runs(args.run_a, args.run_b, args.tolerance)
            sys.stdout.write(dumps(rep))
            return EXIT_OK if ok else EXIT_NUMERICAL
        if args.command == "run":
            mode = None
        elif args.command == "solve":
            mode = "variational" if args.variational else "direct"
        else:
            mode = _COMMAND_MODES[args.command]
        cfg = _load(args, mode)
        jobs = _jobs(args)
        code = run_config(cfg, args.out, jobs)
        if cfg["mode"] == "montecarlo" and code == EXIT_OK:
            doc = json.loads((Path(args.out) / "run.json").read_text())
            sys.stdout.write(dumps([{k: p[k] for k in ("point", "mean", "std_error", "lost_fraction")}
                                    for p in doc["results"]["probes"]]))
        else:
            print((Path(args.out) / "summary.txt").read_text(), end="")
        return code
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
