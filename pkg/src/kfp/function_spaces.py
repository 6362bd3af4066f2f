"""Discrete H^1_X, H^-1_X and W norms, and Poincare constant estimates.

All norms are slice-wise in X (lumped mass ``M`` and the gradient
quadrature of the discretization) and then L^2 over the (Y, t) nodes with
trapezoid weights.  The dual norm on a slice is realised through the
Riesz map of ``(-Delta_X + 1)`` with zero values on the X boundary.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .discretization import DiscreteField, Grid, gradient_matrix, transport_matrix

__all__ = [
    "NormReport", "SliceSpace", "slice_space", "h1x_norm", "h1x_dual_norm", "dual_norm",
    "w_norm", "poincare_constant_x", "kinetic_poincare_check", "KineticPoincareReport",
]


class SliceSpace:
    """Stiffness, mass and factorised Riesz map on one X slice of a grid."""

    def __init__(self, grid: Grid):
        G, w, _ = gradient_matrix(grid)
        self.grid = grid
        self.G = G
        self.W = sp.diags(np.repeat(w, grid.m))
        self.K = (G.T @ self.W @ G).tocsr()
        self.mass = grid.x_mass
        self.free = np.flatnonzero(~grid.x_dirichlet)
        I = self.free
        self.K_II = self.K[I][:, I].tocsc()
        self.M_I = self.mass[I]
        self._riesz = spla.splu((self.K_II + sp.diags(self.M_I)).tocsc()) if I.size else None

    def riesz(self, F: np.ndarray) -> np.ndarray:
        """Solve ``(K + M)_II W = M_I F_I`` column-wise for F of shape (nX, k)."""
        rhs = self.M_I[:, None] * F[self.free]
        return self._riesz.solve(np.ascontiguousarray(rhs))

    def dual(self, F: np.ndarray) -> np.ndarray:
        """Slice dual norms of the columns of F (nX, k)."""
        F = np.asarray(F, dtype=float).reshape(self.grid.nX, -1)
        if self._riesz is None:
            return np.zeros(F.shape[1])
        Wf = self.riesz(F)
        val = np.einsum("ik,i,ik->k", F[self.free], self.M_I, Wf)
        return np.sqrt(np.maximum(val, 0.0))

    def l2(self, F: np.ndarray) -> np.ndarray:
        return np.sqrt(np.einsum("ik,i,ik->k", F, self.mass, F))

    def grad_l2(self, F: np.ndarray) -> np.ndarray:
        GF = self.G @ F
        return np.sqrt(np.maximum(np.einsum("ik,i,ik->k", GF, self.W.diagonal(), GF), 0.0))

    def h1_hilbert(self, phi: np.ndarray) -> float:
        """``sqrt(phi^T (K + M) phi)``, the norm dual to :meth:`dual`."""
        phi = np.asarray(phi, dtype=float)
        return float(np.sqrt(phi @ (self.K @ phi) + phi @ (self.mass * phi)))


@lru_cache(maxsize=8)
def slice_space(grid: Grid) -> SliceSpace:
    return SliceSpace(grid)


def _slices(u) -> tuple[Grid, np.ndarray]:
    if not isinstance(u, DiscreteField):
        raise TypeError("expected a DiscreteField")
    return u.grid, u.flat.reshape(u.grid.nX, u.grid.nS)


def _aggregate(grid: Grid, per_slice: np.ndarray) -> float:
    return float(np.sqrt(np.sum(grid.yt_weights * per_slice ** 2)))


def h1x_norm(u: DiscreteField) -> float:
    """``L^2_{Y,t}`` of the slice norms ``||u||_{L^2_X} + ||grad_X u||_{L^2_X}``."""
    grid, F = _slices(u)
    S = slice_space(grid)
    return _aggregate(grid, S.l2(F) + S.grad_l2(F))


def h1x_dual_norm(f, grid: Grid) -> float:
    """Dual norm of one slice ``f`` (length nX) against zero-boundary H^1 test functions.

    Computed as ``<f, w>^(1/2)`` with ``(-Delta_X + 1) w = f``; the
    boundary entries of ``f`` are ignored.
    """
    f = np.asarray(f, dtype=float).reshape(-1)
    if f.size != grid.nX:
        raise ValueError(f"slice has {f.size} values for {grid.nX} X nodes")
    return float(slice_space(grid).dual(f[:, None])[0])


def dual_norm(u: DiscreteField) -> float:
    """``L^2(V; H^-1_X)`` norm: slice dual norms aggregated over (Y, t)."""
    grid, F = _slices(u)
    return _aggregate(grid, slice_space(grid).dual(F))


@dataclass
class NormReport:
    l2: float
    h1x: float
    h1x_dual: float
    transport_dual: float
    w_norm: float

    def as_dict(self) -> dict:
        return {"l2": self.l2, "h1x": self.h1x, "h1x_dual": self.h1x_dual,
                "transport_dual": self.transport_dual, "w_norm": self.w_norm}


def w_norm(u: DiscreteField) -> NormReport:
    """Norm of the solution space: H^1_X part plus dual norm of the transport derivative."""
    grid, F = _slices(u)
    S = slice_space(grid)
    Tu = (transport_matrix(grid) @ u.flat).reshape(grid.nX, grid.nS)
    l2 = _aggregate(grid, S.l2(F))
    h1 = _aggregate(grid, S.l2(F) + S.grad_l2(F))
    tr = _aggregate(grid, S.dual(Tu))
    return NormReport(l2, h1, _aggregate(grid, S.dual(F)), tr, h1 + tr)


def poincare_constant_x(grid: Grid) -> float:
    """Best discrete constant in ``||f|| <= c ||grad_X f||`` for f vanishing on the X boundary.

    Equal to ``lambda_min^(-1/2)`` of ``K v = lambda M v`` on free X nodes.
    """
    S = slice_space(grid)
    n = S.free.size
    if n == 0:
        raise ValueError("no free X nodes: the zero-boundary subspace is empty")
    if n <= 400:
        lam = sla.eigh(S.K_II.toarray(), np.diag(S.M_I), eigvals_only=True, subset_by_index=[0, 0])[0]
    else:
        lam = spla.eigsh(S.K_II, k=1, M=sp.diags(S.M_I).tocsc(), sigma=0, which="LM",
                         return_eigenvectors=False)[0]
    return float(lam ** -0.5)


@dataclass
class KineticPoincareReport:
    max_ratio: float
    median_ratio: float
    ratios: np.ndarray

    def as_dict(self) -> dict:
        return {"max_ratio": self.max_ratio, "median_ratio": self.median_ratio,
                "trials": int(self.ratios.size)}


def kinetic_ratio(f: DiscreteField) -> float:
    """``||f|| / (||grad_X f|| + ||(X . grad_Y - d_t) f||_{L^2(H^-1_X)})``."""
    grid, F = _slices(f)
    S = slice_space(grid)
    Tf = (transport_matrix(grid) @ f.flat).reshape(grid.nX, grid.nS)
    num = _aggregate(grid, S.l2(F))
    den = _aggregate(grid, S.grad_l2(F)) + _aggregate(grid, S.dual(Tf))
    return num / den


def _random_smooth(grid: Grid, rng: np.random.Generator, modes: int = 4) -> np.ndarray:
    X, Y, t = grid.coordinates()
    P = np.column_stack([X, Y, t])
    lo, hi = P.min(0), P.max(0)
    Z = (P - lo) / (hi - lo)
    f = np.zeros(grid.size)
    for _ in range(modes):
        k = rng.uniform(0.5, 2.5, P.shape[1]) * np.pi
        ph = rng.uniform(0, 2 * np.pi, P.shape[1])
        f += rng.normal() * np.prod(np.cos(k * Z + ph), axis=1)
    return f


def kinetic_poincare_check(grid: Grid, trials: int = 100, seed: int = 0) -> KineticPoincareReport:
    """Sampled ratios for random smooth f vanishing on the Kolmogorov nodes.

    The maximum is an empirical lower bound on the best constant of the
    kinetic Poincare inequality; it is not an extremal computation.
    """
    if trials < 1:
        raise ValueError("trials must be at least 1")
    rng = np.random.default_rng(seed)
    kol = grid.kolmogorov_mask
    ratios = []
    while len(ratios) < trials:
        f = np.where(kol, 0.0, _random_smooth(grid, rng))
        if not np.any(f):
            continue
        ratios.append(kinetic_ratio(DiscreteField(grid, f)))
    r = np.array(ratios)
    return KineticPoincareReport(float(r.max()), float(np.median(r)), r)
