"""Tensor grids, finite-difference operators and the direct weak-form solve.

Layout
------
Grid functions are arrays of shape ``(n_x1, .., n_xm, n_y1, .., n_ym, n_t)``
in C order, so a flat node index splits as ``k = kx * nS + ks`` with ``kx``
the X node and ``ks`` the (Y, t) node, time running fastest.

X nodes are vertex-centred and include the faces of ``U_X``, which carry
Dirichlet rows.  The X-gradient lives on quadrature points inside each X
cell (one per cell in 1D, one per cell corner otherwise), so the diffusion
block ``D = G^T W_A G`` is symmetric positive semidefinite by construction.
Transport ``X . grad_Y - d_t`` is first-order upwind in Y keyed to
``sign(x_i)`` and backward in t.
"""
from __future__ import annotations

import itertools
import math
import struct
import time
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .coefficients import EllipticMatrixField
from .geometry import Point, ProductDomain, inflow_flux

__all__ = [
    "Grid", "DiscreteField", "SparseOperator", "SolveReport", "ConvergenceError",
    "build_grid", "assemble", "solve_direct", "weak_residual", "gradient_matrix",
    "transport_matrix", "coefficient_weights", "trapezoid_weights",
    "write_field_csv", "write_field_binary", "read_field_binary",
]


class ConvergenceError(RuntimeError):
    """Raised when an iterative slab solve misses its tolerance."""

    def __init__(self, message: str, history: list[float]):
        super().__init__(message)
        self.history = history


def trapezoid_weights(axis: np.ndarray) -> np.ndarray:
    """Dual-cell lengths of a 1D node set (trapezoid rule weights)."""
    h = np.diff(axis)
    w = np.zeros(axis.size)
    w[:-1] += 0.5 * h
    w[1:] += 0.5 * h
    return w


def _axis(a, name: str) -> np.ndarray:
    a = np.array(a, dtype=float).reshape(-1)
    if a.size < 3:
        raise ValueError(f"axis {name} needs at least 3 nodes, got {a.size}")
    if not np.all(np.isfinite(a)) or np.any(np.diff(a) <= 0):
        raise ValueError(f"axis {name} must be finite and strictly increasing")
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Grid:
    """Tensor grid over ``U_X x V_{Y,t}`` with per-node boundary classes.

    Parameters
    ----------
    x_axes, y_axes : sequences of m coordinate arrays
    t_axis : coordinate array in time
    x_exterior : optional boolean mask over the flattened X nodes marking
        nodes cut away by a graph boundary; they carry Dirichlet rows.
    """

    x_axes: tuple
    y_axes: tuple
    t_axis: np.ndarray
    x_exterior: np.ndarray | None = None

    def __post_init__(self):
        xs = tuple(_axis(a, f"x{i + 1}") for i, a in enumerate(self.x_axes))
        ys = tuple(_axis(a, f"y{i + 1}") for i, a in enumerate(self.y_axes))
        if len(xs) != len(ys) or not xs:
            raise ValueError("need the same positive number of X and Y axes")
        object.__setattr__(self, "x_axes", xs)
        object.__setattr__(self, "y_axes", ys)
        object.__setattr__(self, "t_axis", _axis(self.t_axis, "t"))
        if self.x_exterior is not None:
            ext = np.array(self.x_exterior, dtype=bool).reshape(-1)
            if ext.size != int(np.prod([a.size for a in xs])):
                raise ValueError("x_exterior must have one entry per X node")
            ext.setflags(write=False)
            object.__setattr__(self, "x_exterior", ext)

    # ---- sizes
    @property
    def m(self) -> int:
        return len(self.x_axes)

    @property
    def nx(self) -> tuple:
        return tuple(a.size for a in self.x_axes)

    @property
    def ny(self) -> tuple:
        return tuple(a.size for a in self.y_axes)

    @property
    def nt(self) -> int:
        return self.t_axis.size

    @property
    def shape(self) -> tuple:
        return self.nx + self.ny + (self.nt,)

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    @property
    def nX(self) -> int:
        return int(np.prod(self.nx))

    @property
    def nS(self) -> int:
        return int(np.prod(self.ny)) * self.nt

    @property
    def h(self) -> list[np.ndarray]:
        """Spacings of every axis in the layout order."""
        return [np.diff(a) for a in self.x_axes + self.y_axes + (self.t_axis,)]

    @cached_property
    def domain(self) -> ProductDomain:
        ax = self.x_axes + self.y_axes + (self.t_axis,)
        box = np.array([[a[0], a[-1]] for a in ax])
        return ProductDomain(box[:self.m], box[self.m:])

    # ---- coordinates
    @cached_property
    def x_nodes(self) -> np.ndarray:
        """(nX, m) coordinates of the X nodes."""
        mesh = np.meshgrid(*self.x_axes, indexing="ij")
        return np.stack([g.ravel() for g in mesh], axis=1)

    @cached_property
    def yt_nodes(self) -> tuple[np.ndarray, np.ndarray]:
        """(nS, m) Y coordinates and (nS,) times of the (Y, t) nodes."""
        mesh = np.meshgrid(*self.y_axes, self.t_axis, indexing="ij")
        Y = np.stack([g.ravel() for g in mesh[:-1]], axis=1)
        return Y, mesh[-1].ravel()

    def coordinates(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Flat ``X (N, m), Y (N, m), t (N,)`` for every node."""
        Y, t = self.yt_nodes
        X = np.repeat(self.x_nodes, self.nS, axis=0)
        return X, np.tile(Y, (self.nX, 1)), np.tile(t, self.nX)

    def point(self, k: int) -> Point:
        kx, ks = divmod(int(k), self.nS)
        Y, t = self.yt_nodes
        return Point(self.x_nodes[kx], Y[ks], t[ks])

    def nearest_index(self, p: Point) -> int:
        ax = self.x_axes + self.y_axes + (self.t_axis,)
        idx = [int(np.argmin(np.abs(a - v))) for a, v in zip(ax, p.as_array())]
        return int(np.ravel_multi_index(idx, self.shape))

    def sample(self, fn: Callable) -> "DiscreteField":
        """Evaluate ``fn(X, Y, t)`` (flat arrays) on every node."""
        return DiscreteField(self, fn(*self.coordinates()))

    # ---- weights
    @cached_property
    def x_mass(self) -> np.ndarray:
        """Lumped X mass (dual-cell volume) per X node."""
        w = [trapezoid_weights(a) for a in self.x_axes]
        return np.prod(np.stack(np.meshgrid(*w, indexing="ij")), axis=0).ravel()

    @cached_property
    def yt_weights(self) -> np.ndarray:
        """Trapezoid quadrature weight of each (Y, t) node."""
        w = [trapezoid_weights(a) for a in self.y_axes + (self.t_axis,)]
        return np.prod(np.stack(np.meshgrid(*w, indexing="ij")), axis=0).ravel()

    # ---- classification
    @cached_property
    def x_boundary(self) -> np.ndarray:
        idx = np.indices(self.nx).reshape(self.m, -1)
        on = np.zeros(self.nX, dtype=bool)
        for i, n in enumerate(self.nx):
            on |= (idx[i] == 0) | (idx[i] == n - 1)
        return on

    @cached_property
    def x_dirichlet(self) -> np.ndarray:
        """X nodes carrying data: faces of U_X plus graph-exterior nodes."""
        d = self.x_boundary.copy()
        if self.x_exterior is not None:
            d |= self.x_exterior
        return d

    @cached_property
    def _classes(self) -> tuple[np.ndarray, np.ndarray]:
        m, shape = self.m, self.shape
        X = self.x_nodes
        kol = np.zeros(shape, dtype=bool)
        face = np.zeros(shape, dtype=bool)
        kol |= self.x_dirichlet.reshape(self.nx + (1,) * (m + 1))
        for i in range(m):
            n = self.ny[i]
            for j, side in ((0, -1.0), (n - 1, 1.0)):
                normal = np.zeros(m + 1)
                normal[i] = side
                inflow = (inflow_flux(X, normal) > 0).reshape(self.nx)
                sl = [slice(None)] * len(shape)
                sl[m + i] = j
                sl = tuple(sl)
                face[sl] = True
                expand = inflow.reshape(self.nx + (1,) * (m))
                kol[sl] |= np.broadcast_to(expand, kol[sl].shape)
        # initial-time face: (X, -1) . (0, -1) = 1 > 0 always; final-time face never
        kol[..., 0] = True
        face[..., 0] = True
        face[..., -1] = True
        return kol.ravel(), face.ravel()

    @property
    def kolmogorov_mask(self) -> np.ndarray:
        return self._classes[0]

    @property
    def free_mask(self) -> np.ndarray:
        kol, face = self._classes
        return face & ~kol

    @property
    def interior_mask(self) -> np.ndarray:
        kol, face = self._classes
        return ~face & ~kol

    @cached_property
    def equation_nodes(self) -> np.ndarray:
        """Indices of nodes that carry an equation (interior and free boundary)."""
        return np.flatnonzero(~self.kolmogorov_mask)

    @cached_property
    def data_nodes(self) -> np.ndarray:
        return np.flatnonzero(self.kolmogorov_mask)

    def time_index(self) -> np.ndarray:
        return np.tile(np.arange(self.nt), self.size // self.nt)


def build_grid(domain: ProductDomain, resolution: Sequence[int], x_exterior=None) -> Grid:
    """Uniform grid with ``resolution = (n_x1.., n_y1.., n_t)`` nodes per axis.

    X nodes are vertex-centred including the faces of U_X; an even count on
    a symmetric interval keeps every node off ``x_i = 0``.
    """
    m = domain.m
    res = [int(n) for n in resolution]
    if len(res) != 2 * m + 1:
        raise ValueError(f"resolution needs 2m+1={2 * m + 1} counts, got {len(res)}")
    if min(res) < 3:
        raise ValueError("every axis needs at least 3 nodes (n_t = 1 has no initial layer to march from)")
    box = np.vstack([domain.U_X, domain.V_Yt])
    ax = [np.linspace(lo, hi, n) for (lo, hi), n in zip(box, res)]
    return Grid(tuple(ax[:m]), tuple(ax[m:2 * m]), ax[-1], x_exterior)


@dataclass(frozen=True, eq=False)
class DiscreteField:
    """Immutable grid function."""

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.size != self.grid.size:
            raise ValueError(f"field has {v.size} values for {self.grid.size} nodes")
        if not np.all(np.isfinite(v)):
            raise ValueError("field values must be finite")
        v = v.reshape(self.grid.shape)
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def flat(self) -> np.ndarray:
        return self.values.reshape(-1)

    def with_values(self, values) -> "DiscreteField":
        return DiscreteField(self.grid, values)

    @classmethod
    def zeros(cls, grid: Grid) -> "DiscreteField":
        return cls(grid, np.zeros(grid.size))

    @classmethod
    def constant(cls, grid: Grid, c: float) -> "DiscreteField":
        return cls(grid, np.full(grid.size, float(c)))


# --------------------------------------------------------------------------- operators


def gradient_matrix(grid: Grid) -> tuple[sp.csr_matrix, np.ndarray, np.ndarray]:
    """X-gradient on one (Y, t) slice.

    Returns ``(G, w, centres)``: ``G`` maps nX node values to ``nq * m``
    gradient components ordered ``q * m + i``, ``w`` holds the quadrature
    weight of each point ``q`` and ``centres`` the X cell centre it belongs
    to (where A is sampled).
    """
    m, nx = grid.m, grid.nx
    cshape = tuple(n - 1 for n in nx)
    ncell = int(np.prod(cshape))
    cidx = np.indices(cshape).reshape(m, -1)
    hs = [np.diff(a) for a in grid.x_axes]
    vol = np.prod([hs[i][cidx[i]] for i in range(m)], axis=0)
    corners = [(0,) * m] if m == 1 else list(itertools.product((0, 1), repeat=m))
    nc = len(corners)
    rows, cols, vals = [], [], []
    cells = np.arange(ncell)
    for ci, kappa in enumerate(corners):
        q = cells * nc + ci
        base = cidx + np.array(kappa)[:, None]
        for i in range(m):
            lo = base.copy()
            lo[i] = cidx[i]
            hi = lo.copy()
            hi[i] += 1
            inv_h = 1.0 / hs[i][cidx[i]]
            r = q * m + i
            rows += [r, r]
            cols += [np.ravel_multi_index(lo, nx), np.ravel_multi_index(hi, nx)]
            vals += [-inv_h, inv_h]
    G = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(ncell * nc * m, grid.nX))
    w = np.repeat(vol / nc, nc)
    mids = [0.5 * (a[1:] + a[:-1]) for a in grid.x_axes]
    centres = np.stack([mids[i][cidx[i]] for i in range(m)], axis=1)
    return G, w, np.repeat(centres, nc, axis=0)


def coefficient_weights(A: EllipticMatrixField, grid: Grid, w: np.ndarray,
                        centres: np.ndarray) -> sp.csr_matrix:
    """Block-diagonal ``W_A``: quadrature weight times A at every gradient point and (Y, t) node."""
    m, nS = grid.m, grid.nS
    nq = w.size
    Y, t = grid.yt_nodes
    Xq = np.repeat(centres, nS, axis=0)
    Yq = np.tile(Y, (nq, 1))
    tq = np.tile(t, nq)
    Av = A.evaluate(Xq, Yq, tq).reshape(nq, nS, m, m) * w[:, None, None, None]
    q, s = np.meshgrid(np.arange(nq), np.arange(nS), indexing="ij")
    rows, cols, vals = [], [], []
    for c in range(m):
        for d in range(m):
            rows.append(((q * m + c) * nS + s).ravel())
            cols.append(((q * m + d) * nS + s).ravel())
            vals.append(Av[:, :, c, d].ravel())
    n = nq * m * nS
    return sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n))


def transport_matrix(grid: Grid) -> sp.csr_matrix:
    """``X . grad_Y - d_t``: upwind in each y_i keyed to sign(x_i), backward in t.

    At equation nodes the upwind neighbour always exists (the face it would
    cross is Kolmogorov).  Rows of data nodes fall back to an inward
    one-sided difference so that the operator is defined everywhere.
    """
    m, shape, N = grid.m, grid.shape, grid.size
    k = np.arange(N)
    multi = np.unravel_index(k, shape)
    strides = np.cumprod((1,) + shape[::-1])[:-1][::-1]
    rows, cols, vals = [], [], []

    def add(r, c, v):
        rows.append(r)
        cols.append(c)
        vals.append(v)

    for i in range(m):
        ax = m + i
        c = grid.y_axes[i]
        n = c.size
        j = multi[ax]
        x = grid.x_axes[i][multi[i]]
        fwd = ((x > 0) & (j < n - 1)) | ((x < 0) & (j == 0))
        bwd = ((x < 0) & (j > 0)) | ((x > 0) & (j == n - 1))
        st = strides[ax]
        kf, jf = k[fwd], j[fwd]
        cf = x[fwd] / (c[jf + 1] - c[jf])
        add(kf, kf + st, cf)
        add(kf, kf, -cf)
        kb, jb = k[bwd], j[bwd]
        cb = x[bwd] / (c[jb] - c[jb - 1])
        add(kb, kb, cb)
        add(kb, kb - st, -cb)
    tn = multi[-1]
    dt = np.diff(grid.t_axis)
    later = tn > 0
    kl = k[later]
    inv = 1.0 / dt[tn[later] - 1]
    add(kl, kl, -inv)
    add(kl, kl - 1, inv)
    k0 = k[~later]
    inv0 = 1.0 / dt[0]
    add(k0, k0 + 1, -np.full(k0.size, inv0))
    add(k0, k0, np.full(k0.size, inv0))
    return sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(N, N))


@dataclass(eq=False)
class SparseOperator:
    """Assembled discrete problem ``L_h u = g*`` on equation nodes, ``u = g`` on data nodes.

    ``L_h = -D / M + T`` row-wise, where ``D`` is the diffusion (stiffness)
    block, ``M`` the lumped X mass and ``T`` the transport stencil.
    """

    grid: Grid
    A: EllipticMatrixField | None
    L: sp.csr_matrix
    D: sp.csr_matrix
    T: sp.csr_matrix
    mass: np.ndarray
    g: np.ndarray
    gstar: np.ndarray
    G: sp.csr_matrix | None = None
    WA: sp.csr_matrix | None = None
    quad_weights: np.ndarray | None = None

    @property
    def E(self) -> np.ndarray:
        return self.grid.equation_nodes

    @property
    def K(self) -> np.ndarray:
        return self.grid.data_nodes

    @cached_property
    def matrix(self) -> sp.csr_matrix:
        """Reduced system matrix on equation nodes."""
        return self.L[self.E][:, self.E].tocsr()

    @cached_property
    def rhs(self) -> np.ndarray:
        E, K = self.E, self.K
        return self.gstar[E] - self.L[E][:, K] @ self.g[K]

    def residual(self, u: np.ndarray) -> np.ndarray:
        """Nodal strong residual ``(L_h u - g*)`` on equation nodes."""
        u = np.asarray(u, dtype=float).reshape(-1)
        return self.L[self.E] @ u - self.gstar[self.E]


def _flat(f, grid: Grid) -> np.ndarray:
    if f is None:
        return np.zeros(grid.size)
    if isinstance(f, DiscreteField):
        if f.grid is not grid and f.grid.shape != grid.shape:
            raise ValueError("field lives on a different grid")
        return f.flat.copy()
    a = np.asarray(f, dtype=float)
    if a.ndim == 0:
        return np.full(grid.size, float(a))
    if a.size != grid.size:
        raise ValueError(f"field has {a.size} values for {grid.size} nodes")
    return a.reshape(-1).copy()


def assemble(A: EllipticMatrixField | None, grid: Grid, gstar=None, g=None,
             diffusion: bool = True) -> SparseOperator:
    """Assemble the discrete weak form.

    Parameters
    ----------
    A : coefficient field (ignored when ``diffusion=False``)
    gstar, g : source and boundary data (DiscreteField, array or scalar)
    diffusion : set False for the pure transport operator
    """
    N = grid.size
    mass = np.repeat(grid.x_mass, grid.nS)
    T = transport_matrix(grid)
    if diffusion:
        if A is None:
            raise ValueError("a coefficient field is required when diffusion is on")
        if A.m != grid.m:
            raise ValueError(f"coefficient dimension {A.m} does not match grid dimension {grid.m}")
        Gx, w, centres = gradient_matrix(grid)
        G = sp.kron(Gx, sp.identity(grid.nS, format="csr"), format="csr")
        WA = coefficient_weights(A, grid, w, centres)
        D = (G.T @ WA @ G).tocsr()
        # the product is symmetric only up to rounding; averaging makes it exact
        D = (0.5 * (D + D.T)).tocsr()
        L = (T - sp.diags(1.0 / mass) @ D).tocsr()
    else:
        G = WA = w = None
        D = sp.csr_matrix((N, N))
        L = T
    op = SparseOperator(grid, A, L, D, T, mass, _flat(g, grid), _flat(gstar, grid), G, WA, w)
    diag = op.matrix.diagonal()
    if np.any(diag == 0):
        raise np.linalg.LinAlgError(f"singular assembly: {int(np.sum(diag == 0))} zero pivots")
    return op


# --------------------------------------------------------------------------- solve


@dataclass
class SolveReport:
    algebraic_residual: float
    weak_residual: float
    iterations: int
    wall_time: float
    w_norm: float = float("nan")
    energy_ratio: float = float("nan")
    method: str = "march"
    residual_history: list = field(default_factory=list)

    def as_dict(self) -> dict:
        return {"algebraic_residual": self.algebraic_residual, "weak_residual": self.weak_residual,
                "iterations": self.iterations, "w_norm": self.w_norm,
                "energy_ratio": self.energy_ratio, "method": self.method}


def _solve_block(Ann: sp.csr_matrix, b: np.ndarray, solver: str, tol: float, maxiter: int,
                 cache: dict) -> tuple[np.ndarray, int]:
    if solver == "lu":
        key = (Ann.shape, Ann.indptr.tobytes(), Ann.indices.tobytes(), Ann.data.tobytes())
        if cache.get("key") != key:
            cache["key"] = key
            cache["lu"] = spla.splu(Ann.tocsc())
        return cache["lu"].solve(b), 1
    if solver == "gmres":
        ilu = spla.spilu(Ann.tocsc(), drop_tol=1e-5, fill_factor=10)
        Mop = spla.LinearOperator(Ann.shape, ilu.solve)
        hist: list[float] = []
        x, info = spla.gmres(Ann, b, rtol=tol, atol=0.0, maxiter=maxiter, M=Mop,
                             callback=hist.append, callback_type="pr_norm")
        if info != 0:
            raise ConvergenceError(f"GMRES did not reach {tol:g} in {maxiter} iterations", hist)
        return x, len(hist)
    raise ValueError(f"unknown slab solver {solver!r}; expected 'lu' or 'gmres'")


def solve_direct(op: SparseOperator, method: str = "march", solver: str = "lu",
                 tol: float = 1e-10, maxiter: int = 500, norms: bool = True
                 ) -> tuple[DiscreteField, SolveReport]:
    """Solve the assembled system.

    ``method="march"`` exploits the block lower-triangular structure in time
    and solves one (X, Y) slab per time level; ``"monolithic"`` solves the
    full space-time system at once.
    """
    t0 = time.perf_counter()
    grid = op.grid
    E, K = op.E, op.K
    u = np.zeros(grid.size)
    u[K] = op.g[K]
    iters = 0
    if method == "monolithic":
        u[E] = spla.spsolve(op.matrix.tocsc(), op.rhs)
        iters = 1
    elif method == "march":
        tidx = grid.time_index()[E]
        LE = op.L[E].tocsr()
        cache: dict = {}
        for n in range(1, grid.nt):
            sel = np.flatnonzero(tidx == n)
            if sel.size == 0:
                continue
            rows = LE[sel]
            cols = E[sel]
            Ann = rows[:, cols].tocsr()
            b = op.gstar[cols] - rows @ u
            x, it = _solve_block(Ann, b, solver, tol, maxiter, cache)
            u[cols] = x
            iters += it
    else:
        raise ValueError(f"unknown method {method!r}; expected 'march' or 'monolithic'")
    r = op.residual(u)
    scale = max(np.linalg.norm(op.rhs), np.finfo(float).tiny)
    alg = float(np.linalg.norm(r) / scale)
    if solver == "lu" and not alg <= max(tol, 1e-8):
        raise ConvergenceError(f"direct solve residual {alg:.3e} above tolerance", [alg])
    sol = DiscreteField(grid, u)
    report = SolveReport(alg, float(np.max(np.abs(r), initial=0.0)), iters,
                         time.perf_counter() - t0, method=method, residual_history=[alg])
    if norms and op.A is not None:
        from .function_spaces import w_norm
        from .variational import energy_estimate_ratio
        report.w_norm = w_norm(sol).w_norm
        report.energy_ratio = energy_estimate_ratio(sol, DiscreteField(grid, op.g),
                                                    DiscreteField(grid, op.gstar), grid)
    report.wall_time = time.perf_counter() - t0
    return sol, report


def weak_residual(u, A: EllipticMatrixField, g, gstar, grid: Grid) -> float:
    """Largest weak-form pairing over nodal hat test functions, per unit test mass.

    Testing with the hat at node k (vanishing on the X faces) and dividing
    by its L1 mass reduces the pairing to the nodal residual
    ``|(L_h u - g*)_k|``; the maximum over equation nodes is returned.
    """
    op = assemble(A, grid, gstar, g)
    return float(np.max(np.abs(op.residual(_flat(u, grid))), initial=0.0))


# --------------------------------------------------------------------------- IO

_MAGIC = b"KFPF"


def write_field_csv(f: DiscreteField, path) -> None:
    """One row per node: ``x1..xm, y1..ym, t, value``."""
    X, Y, t = f.grid.coordinates()
    m = f.grid.m
    head = [f"x{i + 1}" for i in range(m)] + [f"y{i + 1}" for i in range(m)] + ["t", "value"]
    data = np.column_stack([X, Y, t, f.flat])
    np.savetxt(path, data, delimiter=",", header=",".join(head), comments="", fmt="%.17g")


def write_field_binary(f: DiscreteField, path) -> None:
    """``KFPF`` magic, uint32 ndim, uint32 dims, then little-endian float64 values in C order."""
    shape = f.values.shape
    with open(path, "wb") as fh:
        fh.write(_MAGIC + struct.pack(f"<I{len(shape)}I", len(shape), *shape))
        fh.write(np.ascontiguousarray(f.values, dtype="<f8").tobytes())


def read_field_binary(path) -> np.ndarray:
    with open(path, "rb") as fh:
        buf = fh.read()
    if buf[:4] != _MAGIC:
        raise ValueError(f"{path}: not a field file")
    (nd,) = struct.unpack_from("<I", buf, 4)
    shape = struct.unpack_from(f"<{nd}I", buf, 8)
    off = 8 + 4 * nd
    count = math.prod(shape)
    return np.frombuffer(buf, dtype="<f8", count=count, offset=off).reshape(shape).copy()
