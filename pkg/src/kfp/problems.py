"""Problems built from resolved configs, plus the standard battery used for cross-checks."""
from __future__ import annotations

import copy
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .coefficients import EllipticMatrixField, field_from_config
from .config import DEFAULTS, resolve_config
from .discretization import DiscreteField, Grid, build_grid
from .geometry import Point, ProductDomain
from .kernel import kernel_values

__all__ = ["Problem", "build_problem", "data_function", "data_values", "interior_error",
           "battery_configs", "refined_resolution"]


@dataclass
class Problem:
    grid: Grid
    A: EllipticMatrixField
    g: DiscreteField
    gstar: DiscreteField
    exact: DiscreteField | None


def data_function(spec: dict, m: int) -> Callable | None:
    """``f(X, Y, t)`` on flat node arrays for a data spec; None for per-node random data."""
    kind = spec["type"]
    if kind == "zero":
        return lambda X, Y, t: np.zeros(np.shape(t))
    if kind == "constant":
        c = float(spec.get("value", 1.0))
        return lambda X, Y, t: np.full(np.shape(t), c)
    if kind == "kernel":
        p0 = Point.from_array(spec["pole"])
        return lambda X, Y, t: kernel_values(X, Y, t, p0)
    if kind == "affine":
        # c + a.X + b.(Y + tX) is annihilated by the prototype operator for constant A
        c = float(spec.get("c", 0.0))
        a = np.asarray(spec.get("a", [0.0] * m), dtype=float)
        b = np.asarray(spec.get("b", [0.0] * m), dtype=float)
        return lambda X, Y, t: c + X @ a + (Y + np.asarray(t)[:, None] * X) @ b
    if kind == "random":
        return None
    raise ValueError(f"unknown data type {kind!r}")


def data_values(spec: dict, grid: Grid) -> np.ndarray:
    fn = data_function(spec, grid.m)
    if fn is None:
        rng = np.random.default_rng(int(spec.get("seed", 0)))
        return rng.uniform(float(spec.get("low", 0.0)), float(spec.get("high", 1.0)), grid.size)
    return np.asarray(fn(*grid.coordinates()), dtype=float).reshape(-1)


def _is_exact(cfg: dict, A: EllipticMatrixField) -> bool:
    g, gs = cfg["data"]["g"], cfg["data"]["gstar"]
    if gs["type"] != "zero":
        return False
    if g["type"] == "constant":
        return True
    if g["type"] == "affine":
        return A.is_constant
    if g["type"] == "kernel":
        return A.is_constant and np.allclose(A.fn(None, None, None), np.eye(A.m))
    return False


def build_problem(cfg: dict, resolution=None) -> Problem:
    m = cfg["m"]
    dom = ProductDomain(cfg["domain"]["U_X"], cfg["domain"]["V_Yt"])
    grid = build_grid(dom, resolution or cfg["resolution"])
    A = field_from_config(cfg["coefficients"], m)
    g = DiscreteField(grid, data_values(cfg["data"]["g"], grid))
    gs = DiscreteField(grid, data_values(cfg["data"]["gstar"], grid))
    exact = g if _is_exact(cfg, A) else None
    return Problem(grid, A, g, gs, exact)


def interior_error(u: DiscreteField, exact: DiscreteField) -> dict:
    """Quadrature L^2 error (absolute and relative) and sup error over interior nodes."""
    grid = u.grid
    w = np.repeat(grid.x_mass, grid.nS) * np.tile(grid.yt_weights, grid.nX)
    I = grid.interior_mask
    e = (u.flat - exact.flat)[I]
    l2 = float(np.sqrt(np.sum(w[I] * e ** 2)))
    ref = float(np.sqrt(np.sum(w[I] * exact.flat[I] ** 2)))
    return {"l2": l2, "l2_relative": l2 / ref if ref > 0 else float("nan"),
            "sup": float(np.max(np.abs(e), initial=0.0))}


def refined_resolution(base, level: int) -> list[int]:
    """Node counts after ``level`` dyadic refinements of a vertex grid."""
    return [(int(n) - 1) * 2 ** level + 1 for n in base]


def battery_configs() -> list[dict]:
    """Six small problems spanning the coefficient families, m = 1 and m = 2."""
    base = {"schema": DEFAULTS["schema"], "mode": "direct"}
    probs = [
        {"m": 1, "resolution": [17, 17, 17], "coefficients": {"family": "constant"},
         "data": {"g": {"type": "kernel", "pole": [0.0, 0.0, -1.0]}, "gstar": {"type": "zero"}}},
        {"m": 1, "resolution": [17, 17, 17], "coefficients": {"family": "checkerboard", "params": [4.0]},
         "data": {"g": {"type": "random", "seed": 1}, "gstar": {"type": "zero"}}},
        {"m": 1, "resolution": [17, 17, 17], "coefficients": {"family": "checkerboard", "params": [4.0, 0.25]},
         "data": {"g": {"type": "kernel", "pole": [0.3, -0.2, -0.5]}, "gstar": {"type": "constant", "value": 0.5}}},
        {"m": 1, "resolution": [17, 17, 17], "coefficients": {"family": "periodic", "params": [0.6, 0.5]},
         "data": {"g": {"type": "affine", "c": 1.0, "a": [0.5], "b": [0.25]}, "gstar": {"type": "zero"}}},
        {"m": 2, "resolution": [7, 7, 7, 7, 7], "coefficients": {"family": "rotated", "params": [0.6, 3.0, 1.0]},
         "data": {"g": {"type": "random", "seed": 2}, "gstar": {"type": "zero"}}},
        {"m": 2, "resolution": [7, 7, 7, 7, 7], "coefficients": {"family": "checkerboard", "params": [4.0]},
         "data": {"g": {"type": "kernel", "pole": [0.0, 0.0, 0.0, 0.0, -1.0]}, "gstar": {"type": "zero"}}},
    ]
    return [resolve_config({**copy.deepcopy(base), **p}) for p in probs]
