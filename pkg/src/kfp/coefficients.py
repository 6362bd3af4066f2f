"""Rough coefficient fields A(X, Y, t): built-in families, checks, mollification."""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .geometry import Point

__all__ = [
    "EllipticMatrixField", "EllipticityReport", "verify_ellipticity", "mollify",
    "constant_field", "rotated_field", "checkerboard_field", "periodic_field",
    "field_from_config", "bump_quadrature",
]

Evaluator = Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray]


@dataclass(frozen=True)
class EllipticMatrixField:
    """Symmetric m x m coefficient field with declared ellipticity constant ``kappa``.

    ``fn(X, Y, t)`` takes arrays of shape (n, m), (n, m), (n,) and returns
    (n, m, m).  When ``identity_outside`` is set (rows of [lo, hi] covering
    X, or X, Y and t) the field is replaced by the identity outside that box.
    """

    m: int
    fn: Evaluator
    kappa: float
    name: str = "custom"
    params: tuple = ()
    identity_outside: np.ndarray | None = None
    is_constant: bool = False

    def __post_init__(self):
        if not self.kappa >= 1:
            raise ValueError("ellipticity constant must be ≥ 1")
        if self.identity_outside is not None:
            box = np.asarray(self.identity_outside, dtype=float).reshape(-1, 2)
            if box.shape[0] not in (self.m, 2 * self.m + 1):
                raise ValueError("identity_outside must bound X or all of (X, Y, t)")
            object.__setattr__(self, "identity_outside", box)

    def evaluate(self, X, Y, t) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        Y = np.atleast_2d(np.asarray(Y, dtype=float))
        t = np.atleast_1d(np.asarray(t, dtype=float))
        n = max(X.shape[0], Y.shape[0], t.shape[0])
        X = np.broadcast_to(X, (n, self.m))
        Y = np.broadcast_to(Y, (n, self.m))
        t = np.broadcast_to(t, (n,))
        A = np.asarray(self.fn(X, Y, t), dtype=float)
        A = np.broadcast_to(A, (n, self.m, self.m)).copy()
        if self.identity_outside is not None:
            box = self.identity_outside
            coords = X if box.shape[0] == self.m else np.column_stack([X, Y, t])
            inside = np.all((coords > box[:, 0]) & (coords < box[:, 1]), axis=1)
            A[~inside] = np.eye(self.m)
        return A

    def __call__(self, p: Point) -> np.ndarray:
        return self.evaluate(p.X[None], p.Y[None], np.array([p.t]))[0]


def constant_field(matrix, kappa: float | None = None) -> EllipticMatrixField:
    M = np.atleast_2d(np.asarray(matrix, dtype=float))
    if M.shape[0] != M.shape[1]:
        raise ValueError("constant coefficient must be a square matrix")
    if not np.allclose(M, M.T, atol=0, rtol=1e-14):
        raise ValueError("coefficient matrix must be symmetric")
    ev = np.linalg.eigvalsh(M)
    if ev[0] <= 0:
        raise ValueError("coefficient matrix must be positive definite")
    if kappa is None:
        kappa = max(ev[-1], 1.0 / ev[0], 1.0)
    M = M.copy()
    return EllipticMatrixField(M.shape[0], lambda X, Y, t: M, float(kappa), "constant",
                               tuple(M.ravel()), is_constant=True)


def rotated_field(m: int, angle: float, lam1: float, lam2: float,
                  kappa: float | None = None) -> EllipticMatrixField:
    """``R(angle) diag(lam1, lam2) R(angle)^T`` in the (x1, x2) plane, identity in other directions."""
    if m == 1:
        return constant_field([[lam1]], kappa)
    c, s = np.cos(angle), np.sin(angle)
    R = np.eye(m)
    R[:2, :2] = [[c, -s], [s, c]]
    D = np.eye(m)
    D[0, 0], D[1, 1] = lam1, lam2
    field = constant_field(R @ D @ R.T, kappa)
    return EllipticMatrixField(m, field.fn, field.kappa, "rotated", (angle, lam1, lam2), is_constant=True)


def checkerboard_field(m: int, contrast: float, period: float | None = None,
                       kappa: float | None = None) -> EllipticMatrixField:
    """Piecewise-constant field switching at cell walls.

    Without ``period`` the switch is the sign of x1; with it, the parity of
    ``sum_i floor(x_i / period)``.  In one dimension the values are
    ``contrast`` and ``1/contrast``; otherwise ``diag(c, 1/c, c, ...)`` and
    its reciprocal.
    """
    if not contrast > 0:
        raise ValueError("contrast must be positive")
    d_even = np.array([contrast if i % 2 == 0 else 1.0 / contrast for i in range(m)])
    d_odd = 1.0 / d_even

    def fn(X, Y, t):
        if period is None:
            even = X[:, 0] > 0
        else:
            even = np.sum(np.floor(X / period), axis=1).astype(np.int64) % 2 == 0
        d = np.where(even[:, None], d_even, d_odd)
        out = np.zeros((X.shape[0], m, m))
        idx = np.arange(m)
        out[:, idx, idx] = d
        return out

    if kappa is None:
        kappa = max(contrast, 1.0 / contrast)
    params = (contrast,) if period is None else (contrast, period)
    return EllipticMatrixField(m, fn, float(kappa), "checkerboard", params)


def periodic_field(m: int, amplitude: float, period: float = 1.0,
                   kappa: float | None = None) -> EllipticMatrixField:
    """Smooth oscillating scalar field ``(1 + a sin(2 pi x1/P) cos(2 pi y1/P) cos(2 pi t/P)) I``."""
    if not 0 <= amplitude < 1:
        raise ValueError("periodic amplitude must lie in [0, 1)")
    w = 2 * np.pi / period

    def fn(X, Y, t):
        a = 1.0 + amplitude * np.sin(w * X[:, 0]) * np.cos(w * Y[:, 0]) * np.cos(w * t)
        return a[:, None, None] * np.eye(m)

    if kappa is None:
        kappa = 1.0 / (1.0 - amplitude)
    return EllipticMatrixField(m, fn, float(kappa), "periodic", (amplitude, period))


@dataclass
class EllipticityReport:
    min_eig: float
    max_eig: float
    symmetric_defect: float
    kappa: float
    ok: bool
    witness: Point | None = None

    def as_dict(self) -> dict:
        return {"min_eig": self.min_eig, "max_eig": self.max_eig,
                "symmetric_defect": self.symmetric_defect, "kappa": self.kappa, "ok": self.ok,
                "witness": None if self.witness is None else self.witness.as_array().tolist()}


def verify_ellipticity(A: EllipticMatrixField, samples: int = 1000, box=None, seed: int = 0,
                       tol: float = 1e-10) -> EllipticityReport:
    """Sample A at random points and check symmetry and the kappa eigenvalue bounds."""
    if samples < 1:
        raise ValueError("samples must be at least 1")
    m = A.m
    box = np.tile([-2.0, 2.0], (2 * m + 1, 1)) if box is None else np.asarray(box, dtype=float)
    rng = np.random.default_rng(seed)
    P = rng.uniform(box[:, 0], box[:, 1], (samples, 2 * m + 1))
    M = A.evaluate(P[:, :m], P[:, m:2 * m], P[:, -1])
    defect = float(np.max(np.abs(M - np.swapaxes(M, 1, 2))))
    ev = np.linalg.eigvalsh(0.5 * (M + np.swapaxes(M, 1, 2)))
    lo, hi = ev[:, 0], ev[:, -1]
    bad = (lo < 1.0 / A.kappa - tol) | (hi > A.kappa + tol)
    witness = Point.from_array(P[np.argmax(bad)]) if bad.any() else None
    ok = not bad.any() and defect <= tol
    return EllipticityReport(float(lo.min()), float(hi.max()), defect, A.kappa, ok, witness)


# --------------------------------------------------------------------------- mollification


def bump_quadrature(cells: int = 2, order: int = 5) -> tuple[np.ndarray, np.ndarray]:
    """Nodes on [-1, 1] and normalised weights of the bump ``(1 - s^2)^2``.

    Each of ``cells`` equal sub-intervals gets an ``order``-point Gauss rule,
    so with an even number of cells no node sits at the kernel centre.
    """
    g, w = np.polynomial.legendre.leggauss(order)
    edges = np.linspace(-1.0, 1.0, cells + 1)
    nodes, weights = [], []
    for a, b in zip(edges[:-1], edges[1:]):
        nodes.append(0.5 * (b - a) * g + 0.5 * (a + b))
        weights.append(0.5 * (b - a) * w)
    s = np.concatenate(nodes)
    wt = np.concatenate(weights) * (1.0 - s ** 2) ** 2
    return s, wt / wt.sum()


def mollify(A: EllipticMatrixField, epsilon: float, axes: str | tuple = "all",
            chunk: int = 200_000) -> EllipticMatrixField:
    """Componentwise convolution of A with a product bump of width ``epsilon``.

    ``axes`` selects the smoothed coordinates: ``"all"``, ``"X"`` or a tuple
    of indices into the flat layout ``[x.., y.., t]``.
    """
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    m = A.m
    if axes == "all":
        ax = tuple(range(2 * m + 1))
    elif axes == "X":
        ax = tuple(range(m))
    else:
        ax = tuple(int(a) for a in axes)
    s, w = bump_quadrature()
    shifts = np.array(list(itertools.product(s, repeat=len(ax))))
    weights = np.prod(np.array(list(itertools.product(w, repeat=len(ax)))), axis=1)
    offs = np.zeros((shifts.shape[0], 2 * m + 1))
    offs[:, ax] = epsilon * shifts

    def fn(X, Y, t):
        P = np.column_stack([X, Y, t])
        n = P.shape[0]
        out = np.zeros((n, m, m))
        step = max(1, chunk // max(n, 1))
        for k in range(0, offs.shape[0], step):
            o = offs[k:k + step]
            Q = (P[:, None, :] - o[None, :, :]).reshape(-1, 2 * m + 1)
            vals = A.evaluate(Q[:, :m], Q[:, m:2 * m], Q[:, -1]).reshape(n, o.shape[0], m, m)
            out += np.einsum("q,nqij->nij", weights[k:k + step], vals)
        return 0.5 * (out + np.swapaxes(out, 1, 2))

    return EllipticMatrixField(m, fn, A.kappa, f"mollified-{A.name}", A.params + (epsilon,),
                               A.identity_outside, A.is_constant)


# --------------------------------------------------------------------------- config


def field_from_config(cfg: dict | None, m: int) -> EllipticMatrixField:
    """Build a field from ``{"family", "kappa", "params", "identity_outside"}``."""
    if cfg is None:
        return constant_field(np.eye(m))
    family = cfg.get("family", "constant")
    params = list(cfg.get("params", []))
    kappa = cfg.get("kappa")
    if kappa is not None and not float(kappa) >= 1:
        raise ValueError("ellipticity constant must be ≥ 1")
    kappa = None if kappa is None else float(kappa)
    if family == "constant":
        if not params:
            base = constant_field(np.eye(m), kappa)
        elif len(params) == 1:
            base = constant_field(params[0] * np.eye(m), kappa)
        elif len(params) == m:
            base = constant_field(np.diag(params), kappa)
        elif len(params) == m * m:
            base = constant_field(np.reshape(params, (m, m)), kappa)
        else:
            raise ValueError(f"constant family needs 0, 1, m or m*m params, got {len(params)}")
    elif family == "rotated":
        base = rotated_field(m, *params[:3], kappa=kappa)
    elif family == "checkerboard":
        contrast = params[0] if params else (kappa if kappa is not None else 2.0)
        period = params[1] if len(params) > 1 else None
        base = checkerboard_field(m, contrast, period, kappa)
    elif family == "periodic":
        base = periodic_field(m, *(params or [0.5]), kappa=kappa)
    else:
        raise ValueError(f"unknown coefficient family {family!r}")
    box = cfg.get("identity_outside")
    if box is None:
        return base
    return EllipticMatrixField(m, base.fn, base.kappa, base.name, base.params, np.asarray(box, dtype=float))
