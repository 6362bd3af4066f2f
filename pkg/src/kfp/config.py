"""Run configuration: schema defaults, validation with line-anchored errors, JSON output."""
from __future__ import annotations

import copy
import json
import math
import re
from typing import Any

import numpy as np

__all__ = ["SCHEMA", "DEFAULTS", "ConfigError", "load_config", "resolve_config", "dumps", "MODES"]

SCHEMA = "kfp-config/1"
MODES = ("direct", "variational", "exhaustion", "montecarlo", "battery", "verify")

# Every physical and numerical default lives here; the code reads values
# only from the resolved config.
DEFAULTS: dict[str, Any] = {
    "schema": SCHEMA,
    "mode": "direct",
    "m": 1,
    "domain": {"type": "box", "U_X": [[-1.0, 1.0]], "V_Yt": [[-1.0, 1.0], [0.0, 1.0]]},
    "resolution": [16, 16, 16],
    "coefficients": {"family": "constant", "params": [], "kappa": None, "identity_outside": None},
    "data": {"g": {"type": "constant", "value": 1.0}, "gstar": {"type": "zero"}},
    "solver": {"method": "march", "slab": "lu", "tol": 1e-10, "maxiter": 500},
    "montecarlo": {"paths": 100000, "dt": None, "seed": 0, "probes": [], "antithetic": False,
                   "exact_y": False, "bridge": True, "patches": None},
    "exhaustion": {"graph": {"type": "graph", "psi": "plane", "M": 1.0, "params": []},
                   "V": [[-0.25, 0.25], [-0.25, 0.25]], "R_list": [1.0, 2.0, 4.0, 8.0],
                   "probe": [[0.125, 0.5], [-0.125, 0.125], [0.0, 0.25]],
                   "core_counts": [17, 17, 17], "ratio": 1.2},
    "battery": {"levels": 3, "base": [8, 8, 8]},
    "verify": {"suite": "all", "samples": 1000, "seed": 0},
    "output": {"fields": ["csv", "binary"]},
}


class ConfigError(ValueError):
    """Schema violation; ``line`` points into the config text when known."""

    def __init__(self, message: str, path: str = "", line: int | None = None, source: str = "config"):
        self.message = message
        self.path = path
        self.line = line
        self.source = source
        loc = f"{source}:{line}" if line is not None else source
        key = f" ({path})" if path else ""
        super().__init__(f"{loc}: {message}{key}")


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict) and k not in ("domain", "graph", "g", "gstar"):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def _line_of(text: str, path: str) -> int | None:
    """Line of the last key of a dotted path, following the keys in order through the text."""
    if not text or not path:
        return None
    pos = 0
    found = None
    for part in path.split("."):
        if part.isdigit():
            continue
        mt = re.compile(r'"%s"\s*:' % re.escape(part)).search(text, pos)
        if mt is None:
            break
        pos = mt.start()
        found = pos
    return None if found is None else text.count("\n", 0, found) + 1


def _num(x, path, text, src, positive=False, integer=False):
    ok = isinstance(x, (int, float)) and not isinstance(x, bool) and math.isfinite(x)
    if ok and integer:
        ok = float(x).is_integer()
    if ok and positive:
        ok = x > 0
    if not ok:
        kind = "positive " if positive else ""
        kind += "integer" if integer else "number"
        raise ConfigError(f"expected a {kind}, got {x!r}", path, _line_of(text, path), src)
    return int(x) if integer else float(x)


def _box(x, rows, path, text, src):
    try:
        a = np.asarray(x, dtype=float)
    except (TypeError, ValueError):
        a = None
    if a is None or a.ndim != 2 or a.shape[1] != 2 or (rows is not None and a.shape[0] != rows):
        need = f"{rows} " if rows is not None else ""
        raise ConfigError(f"expected {need}[lo, hi] intervals", path, _line_of(text, path), src)
    if np.any(a[:, 1] <= a[:, 0]):
        raise ConfigError("intervals must have positive length", path, _line_of(text, path), src)
    return a.tolist()


def resolve_config(raw: dict, text: str = "", source: str = "config") -> dict:
    """Merge with defaults and validate; raises ConfigError."""
    if not isinstance(raw, dict):
        raise ConfigError("top level must be a JSON object", "", 1, source)
    unknown = set(raw) - set(DEFAULTS)
    if unknown:
        key = sorted(unknown)[0]
        raise ConfigError(f"unknown key {key!r}", key, _line_of(text, key), source)
    schema = raw.get("schema", SCHEMA)
    if schema != SCHEMA:
        raise ConfigError(f"unsupported schema {schema!r}; expected {SCHEMA!r}", "schema",
                          _line_of(text, "schema"), source)
    cfg = _merge(DEFAULTS, raw)
    L = lambda p: _line_of(text, p)  # noqa: E731
    if cfg["mode"] not in MODES:
        raise ConfigError(f"mode must be one of {', '.join(MODES)}", "mode", L("mode"), source)
    m = _num(cfg["m"], "m", text, source, positive=True, integer=True)
    cfg["m"] = m
    dom = cfg["domain"]
    if "domain" not in raw and m != 1:
        dom = {"type": "box", "U_X": [[-1.0, 1.0]] * m, "V_Yt": [[-1.0, 1.0]] * m + [[0.0, 1.0]]}
        cfg["domain"] = dom
    if dom.get("type") != "box":
        raise ConfigError("domain.type must be 'box' (graph domains go under exhaustion.graph)",
                          "domain.type", L("domain.type"), source)
    dom["U_X"] = _box(dom.get("U_X"), m, "domain.U_X", text, source)
    dom["V_Yt"] = _box(dom.get("V_Yt"), m + 1, "domain.V_Yt", text, source)
    res = cfg["resolution"]
    if "resolution" not in raw and m != 1:
        res = [8] * (2 * m + 1)
    if not isinstance(res, list) or len(res) != 2 * m + 1:
        raise ConfigError(f"resolution needs {2 * m + 1} node counts", "resolution", L("resolution"), source)
    cfg["resolution"] = [_num(n, "resolution", text, source, True, True) for n in res]
    if min(cfg["resolution"]) < 3:
        raise ConfigError("every axis needs at least 3 nodes", "resolution", L("resolution"), source)
    co = cfg["coefficients"]
    if co.get("kappa") is not None:
        k = co["kappa"]
        if not isinstance(k, (int, float)) or isinstance(k, bool) or not k >= 1:
            raise ConfigError("ellipticity constant must be ≥ 1", "coefficients.kappa",
                              L("coefficients.kappa"), source)
    if co.get("family") not in ("constant", "rotated", "checkerboard", "periodic"):
        raise ConfigError("coefficients.family must be constant, rotated, checkerboard or periodic",
                          "coefficients.family", L("coefficients.family"), source)
    for key in ("g", "gstar"):
        spec = cfg["data"].get(key)
        path = f"data.{key}"
        if not isinstance(spec, dict) or spec.get("type") not in ("zero", "constant", "kernel", "affine", "random"):
            raise ConfigError("data type must be zero, constant, kernel, affine or random",
                              path, L(path), source)
        if spec["type"] == "kernel":
            pole = spec.get("pole")
            if not isinstance(pole, list) or len(pole) != 2 * m + 1:
                raise ConfigError(f"kernel pole needs {2 * m + 1} coordinates", path + ".pole",
                                  L(path + ".pole"), source)
    s = cfg["solver"]
    if s["method"] not in ("march", "monolithic"):
        raise ConfigError("solver.method must be march or monolithic", "solver.method", L("solver.method"), source)
    if s["slab"] not in ("lu", "gmres"):
        raise ConfigError("solver.slab must be lu or gmres", "solver.slab", L("solver.slab"), source)
    s["tol"] = _num(s["tol"], "solver.tol", text, source, positive=True)
    mc = cfg["montecarlo"]
    mc["paths"] = _num(mc["paths"], "montecarlo.paths", text, source, True, True)
    if mc["dt"] is not None:
        mc["dt"] = _num(mc["dt"], "montecarlo.dt", text, source, positive=True)
    for i, p in enumerate(mc["probes"]):
        if not isinstance(p, list) or len(p) != 2 * m + 1:
            raise ConfigError(f"probe needs {2 * m + 1} coordinates", f"montecarlo.probes.{i}",
                              L("montecarlo.probes"), source)
    ex = cfg["exhaustion"]
    given = raw.get("exhaustion", {}) if isinstance(raw.get("exhaustion"), dict) else {}
    if m != 1:
        # the defaults above are written for m = 1; widen the ones the user left out
        if "V" not in given:
            ex["V"] = [[-0.25, 0.25]] * (m + 1)
        if "probe" not in given:
            ex["probe"] = [[-0.125, 0.125]] * (m - 1) + [[0.125, 0.5]] + [[-0.125, 0.125]] * m + [[0.0, 0.25]]
        if "core_counts" not in given:
            ex["core_counts"] = [9] * (2 * m + 1)
    if ex["graph"].get("psi") not in ("plane", "cone", "sine"):
        raise ConfigError("exhaustion.graph.psi must be plane, cone or sine", "exhaustion.graph.psi",
                          L("exhaustion.graph"), source)
    ex["V"] = _box(ex["V"], m + 1, "exhaustion.V", text, source)
    ex["probe"] = _box(ex["probe"], 2 * m + 1, "exhaustion.probe", text, source)
    b = cfg["battery"]
    b["levels"] = _num(b["levels"], "battery.levels", text, source, True, True)
    if b["levels"] < 2:
        raise ConfigError("battery needs at least 2 levels", "battery.levels", L("battery.levels"), source)
    return cfg


def load_config(path) -> tuple[dict, str]:
    """Read, parse and validate a config file; returns (resolved config, raw text)."""
    src = str(path)
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc.strerror}", source=src) from exc
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON: {exc.msg}", line=exc.lineno, source=src) from exc
    return resolve_config(raw, text, src), text


def _fmt(x: Any, indent: int, level: int) -> str:
    pad = " " * (indent * (level + 1))
    end = " " * (indent * level)
    if isinstance(x, dict):
        if not x:
            return "{}"
        items = [f"{pad}{json.dumps(str(k))}: {_fmt(v, indent, level + 1)}" for k, v in x.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(x, (list, tuple)):
        if not x:
            return "[]"
        if all(not isinstance(v, (dict, list, tuple)) for v in x):
            return "[" + ", ".join(_fmt(v, indent, level + 1) for v in x) + "]"
        return "[\n" + ",\n".join(pad + _fmt(v, indent, level + 1) for v in x) + "\n" + end + "]"
    if isinstance(x, np.ndarray):
        return _fmt(x.tolist(), indent, level)
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        x = float(x)
        if not math.isfinite(x):
            return "null"
        s = format(x, ".17g")
        if re.fullmatch(r"-?\d+", s):
            s += ".0"
        return s
    if x is None:
        return "null"
    return json.dumps(str(x))


def dumps(obj: Any, indent: int = 2) -> str:
    """JSON text with every float written to 17 significant digits."""
    return _fmt(obj, indent, 0) + "\n"
