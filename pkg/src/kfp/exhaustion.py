"""Increasing-domain solves on unbounded Lipschitz-graph cylinders.

Each R solves the Dirichlet problem on ``U_X^R x V^R`` with data cut off
away from the graph patch of radius ``3R/4``, restricts the solution to a
fixed probe box and records how much it moved since the previous R.

All R share one uniform core grid (the grid of the smallest domain); axes
grow geometrically beyond it, so differences on the probe measure the
influence of the far boundary rather than a change of resolution.
"""
from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from .coefficients import EllipticMatrixField
from .discretization import DiscreteField, Grid, assemble, solve_direct
from .geometry import LipschitzGraphDomain, exhaustion_domain

__all__ = [
    "graded_axis", "exhaustion_grid", "graph_layer", "cutoff_weights", "cutoff_data",
    "solve_exhaustion", "ExhaustionStep", "ExhaustionResult", "write_convergence_csv",
]


def graded_axis(core_lo: float, core_hi: float, n_core: int, lo: float, hi: float,
                ratio: float = 1.2) -> np.ndarray:
    """Uniform nodes on ``[core_lo, core_hi]`` extended geometrically out to ``[lo, hi]``."""
    if not (lo <= core_lo < core_hi <= hi):
        raise ValueError("core interval must lie inside the full interval")
    if ratio < 1:
        raise ValueError("growth ratio must be at least 1")
    core = np.linspace(core_lo, core_hi, n_core)
    h = core[1] - core[0]

    def grow(start, stop, sign):
        pts, step, x = [], h, start
        while sign * (stop - x) > 1e-12 * max(1.0, abs(stop)):
            step *= ratio
            x = x + sign * step
            if sign * (stop - x) < 0.5 * step:
                x = stop
            pts.append(x)
        return pts

    left = grow(core_lo, lo, -1.0)[::-1]
    right = grow(core_hi, hi, 1.0)
    return np.concatenate([left, core, right])


def exhaustion_grid(omega: LipschitzGraphDomain, V, R: float, core_box: np.ndarray,
                    core_counts: Sequence[int], ratio: float = 1.2) -> Grid:
    """Graded grid on the bounding box of ``U_X^R x V^R`` with the graph cut as exterior mask."""
    dom = exhaustion_domain(omega, V, R)
    box = np.vstack([dom.box.U_X, dom.box.V_Yt])
    core = np.asarray(core_box, dtype=float)
    axes = [graded_axis(c[0], c[1], int(n), b[0], b[1], ratio)
            for c, n, b in zip(core, core_counts, box)]
    m = omega.m
    mesh = np.meshgrid(*axes[:m], indexing="ij")
    Xn = np.stack([g.ravel() for g in mesh], 1)
    exterior = ~omega.contains_x(Xn)
    return Grid(tuple(axes[:m]), tuple(axes[m:2 * m]), axes[-1], exterior)


def graph_layer(grid: Grid) -> np.ndarray:
    """X nodes on or just below the graph: data nodes with a free X neighbour, or on the lowest x_m face."""
    m, nx = grid.m, grid.nx
    ext = grid.x_dirichlet.reshape(nx)
    free = ~ext
    layer = np.zeros(nx, dtype=bool)
    for i in range(m):
        for shift in (1, -1):
            nb = np.zeros(nx, dtype=bool)
            src = [slice(None)] * m
            dst = [slice(None)] * m
            if shift == 1:
                src[i], dst[i] = slice(1, None), slice(None, -1)
            else:
                src[i], dst[i] = slice(None, -1), slice(1, None)
            nb[tuple(dst)] = free[tuple(src)]
            layer |= ext & nb
    if grid.x_exterior is None:
        return layer.ravel()
    # with a graph cut only the layer under the graph carries data, not the box faces
    return (layer.ravel() & (grid.x_exterior | _on_bottom(grid)))


def _on_bottom(grid: Grid) -> np.ndarray:
    idx = np.indices(grid.nx).reshape(grid.m, -1)
    return idx[-1] == 0


def cutoff_weights(grid: Grid, R: float) -> np.ndarray:
    """``phi_R`` per X node: 1 on the graph patch of radius R/2, smooth ramp to 0 at 3R/4.

    Patch radius is measured in the tangential coordinates ``x_1..x_{m-1}``;
    nodes off the graph layer get 0.
    """
    if not R > 0:
        raise ValueError("R must be positive")
    X = grid.x_nodes
    rho = np.max(np.abs(X[:, :-1]), axis=1) if grid.m > 1 else np.zeros(grid.nX)
    s = np.clip((rho - 0.5 * R) / (0.25 * R), 0.0, 1.0)
    phi = 1.0 - s * s * (3.0 - 2.0 * s)
    return np.where(graph_layer(grid), phi, 0.0)


def cutoff_data(g: DiscreteField, R: float) -> DiscreteField:
    """Data ``g phi_R`` on the graph layer, zero on every other node."""
    w = cutoff_weights(g.grid, R)
    return g.with_values(g.flat * np.repeat(w, g.grid.nS))


@dataclass
class ExhaustionStep:
    R: float
    unknowns: int
    sup_difference: float
    wall_time: float
    probe_values: np.ndarray
    sup_u: float
    sup_g: float

    def as_dict(self) -> dict:
        return {"R": self.R, "unknowns": self.unknowns, "sup_difference": self.sup_difference,
                "wall_time": self.wall_time, "sup_u": self.sup_u, "sup_g": self.sup_g}


@dataclass
class ExhaustionResult:
    steps: list = field(default_factory=list)
    probe_axes: tuple = ()

    @property
    def differences(self) -> np.ndarray:
        return np.array([s.sup_difference for s in self.steps[1:]])

    @property
    def monotone(self) -> bool:
        d = self.differences
        return bool(np.all(np.diff(d) < 0)) if d.size > 1 else True

    def as_dict(self) -> dict:
        return {"steps": [s.as_dict() for s in self.steps], "monotone": self.monotone}


def _sample(fn, grid: Grid) -> np.ndarray:
    if fn is None:
        return np.zeros(grid.size)
    if callable(fn):
        return np.asarray(fn(*grid.coordinates()), dtype=float).reshape(-1)
    return np.full(grid.size, float(fn))


def solve_exhaustion(omega: LipschitzGraphDomain, V, g: Callable | float | None, gstar, A: EllipticMatrixField,
                     R_list: Sequence[float], probe, core_counts: Sequence[int], probe_counts=None,
                     ratio: float = 1.2, method: str = "march") -> ExhaustionResult:
    """Solve on ``U_X^R x V^R`` for each R and track sup differences on the probe box.

    Parameters
    ----------
    g, gstar : callables ``f(X, Y, t)`` on flat node arrays, constants or None
    probe : (2m+1, 2) box inside the smallest domain
    core_counts : node counts per axis on the smallest domain's bounding box
    probe_counts : probe lattice size per axis (default 5)
    """
    R_list = [float(r) for r in R_list]
    if any(b <= a for a, b in zip(R_list, R_list[1:])):
        raise ValueError("R_list must be strictly increasing")
    m = omega.m
    probe = np.asarray(probe, dtype=float).reshape(-1, 2)
    if probe.shape[0] != 2 * m + 1:
        raise ValueError("probe box needs 2m+1 intervals")
    first = exhaustion_domain(omega, V, R_list[0])
    core_box = np.vstack([first.box.U_X, first.box.V_Yt])
    # nesting of consecutive domains, checked on their bounding boxes
    boxes = [np.vstack([d.box.U_X, d.box.V_Yt]) for d in (exhaustion_domain(omega, V, R) for R in R_list)]
    for a, b in zip(boxes, boxes[1:]):
        if np.any(b[:, 0] > a[:, 0] + 1e-12) or np.any(b[:, 1] < a[:, 1] - 1e-12):
            raise ValueError("exhaustion domains are not nested")
    pc = [5] * (2 * m + 1) if probe_counts is None else list(probe_counts)
    pax = [np.linspace(lo, hi, n) for (lo, hi), n in zip(probe, pc)]
    pmesh = np.stack([a.ravel() for a in np.meshgrid(*pax, indexing="ij")], 1)
    from .geometry import Point
    for q in (pmesh[0], pmesh[-1]):
        if not first.contains(Point.from_array(q)) and not _in_closed(first, q):
            raise ValueError("probe box must lie inside the smallest exhaustion domain")
    if not np.all(omega.contains_x(pmesh[:, :m])):
        raise ValueError("probe box must lie inside the graph domain")
    result = ExhaustionResult(probe_axes=tuple(pax))
    prev = None
    for R in R_list:
        t0 = time.perf_counter()
        grid = exhaustion_grid(omega, V, R, core_box, core_counts, ratio)
        gR = cutoff_data(DiscreteField(grid, _sample(g, grid)), R)
        op = assemble(A, grid, _sample(gstar, grid), gR)
        u, _ = solve_direct(op, method=method, norms=False)
        interp = RegularGridInterpolator(grid.x_axes + grid.y_axes + (grid.t_axis,), u.values)
        vals = interp(pmesh)
        diff = float("nan") if prev is None else float(np.max(np.abs(vals - prev)))
        result.steps.append(ExhaustionStep(R, int(op.E.size), diff, time.perf_counter() - t0, vals,
                                           float(np.max(np.abs(u.flat))), float(np.max(np.abs(gR.flat)))))
        prev = vals
    return result


def _in_closed(dom, q) -> bool:
    box = np.vstack([dom.box.U_X, dom.box.V_Yt])
    return bool(np.all(q >= box[:, 0]) and np.all(q <= box[:, 1]))


def write_convergence_csv(result: ExhaustionResult, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["R", "unknowns", "sup_difference", "wall_time"])
        for s in result.steps:
            w.writerow([repr(s.R), s.unknowns, repr(s.sup_difference), repr(s.wall_time)])
