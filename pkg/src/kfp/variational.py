"""Convex variational route: the functional J, joint minimisation and certificates.

The discrete constraint set pairs a grid function f with a vector field j
on the X-gradient quadrature points and asks, on every equation node k,

    (G^T W_A j)_k = -M_k g*_k + M_k (T f)_k

which is the weak identity tested against the nodal hat at k.  Because j
lives where the gradient lives, ``j = G f`` is admissible exactly when f
solves the direct scheme, so null minimisers and discrete solutions
coincide at the matrix level.

Objectives carry the (Y, t) trapezoid weights so that values approximate
space-time integrals; the minimisers do not depend on them.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .coefficients import EllipticMatrixField
from .discretization import DiscreteField, Grid, SparseOperator, assemble
from .function_spaces import dual_norm, h1x_norm, w_norm

__all__ = [
    "ConstraintSystem", "MinimizerPair", "constraint_system", "evaluate_J", "minimize_joint",
    "objective", "convexity_certificate", "ConvexityReport", "energy_estimate_ratio",
    "transport_energy_identity", "quadratic_growth_exponent",
]


@dataclass(eq=False)
class ConstraintSystem:
    """Rows ``B j = c(f)`` with ``B = (G^T W_A)[E]``; ``Wobj`` is W_A with (Y, t) weights."""

    op: SparseOperator
    B: sp.csr_matrix
    Wobj: sp.csr_matrix
    jw: np.ndarray

    @property
    def grid(self) -> Grid:
        return self.op.grid

    def rhs(self, f: np.ndarray, fstar: np.ndarray) -> np.ndarray:
        """``-M f* + M (T f)`` on equation nodes."""
        E = self.op.E
        M = self.op.mass[E]
        return -M * fstar[E] + M * (self.op.T[E] @ f)

    def residual(self, j: np.ndarray, f: np.ndarray, fstar: np.ndarray) -> np.ndarray:
        return self.B @ j - self.rhs(f, fstar)


def constraint_system(A: EllipticMatrixField, grid: Grid, op: SparseOperator | None = None) -> ConstraintSystem:
    op = op if op is not None else assemble(A, grid)
    B = (op.G.T @ op.WA)[op.E].tocsr()
    nS = grid.nS
    s = np.arange(op.WA.shape[0]) % nS
    ytw = grid.yt_weights[s]
    Wobj = (sp.diags(ytw) @ op.WA).tocsr()
    # weights for the plain L^2 norm of j: X quadrature weight times (Y, t) weight
    qw = np.repeat(op.quad_weights, grid.m)
    jw = np.repeat(qw, nS) * ytw
    return ConstraintSystem(op, B, Wobj, jw)


def objective(cs: ConstraintSystem, f: np.ndarray, j: np.ndarray) -> float:
    """``1/2 (G f - j)^T W_A (G f - j)`` with space-time quadrature weights."""
    e = cs.op.G @ f - j
    return 0.5 * float(e @ (cs.Wobj @ e))


def _as_flat(f, grid: Grid) -> np.ndarray:
    if isinstance(f, DiscreteField):
        return f.flat.copy()
    a = np.asarray(f, dtype=float)
    return np.full(grid.size, float(a)) if a.ndim == 0 else a.reshape(-1).copy()


def _kkt_solve(K: sp.spmatrix, rhs: np.ndarray, refine: int = 2) -> np.ndarray:
    lu = spla.splu(K.tocsc())
    x = lu.solve(rhs)
    for _ in range(refine):
        x += lu.solve(rhs - K @ x)
    return x


def evaluate_J(f, fstar, A: EllipticMatrixField, grid: Grid, method: str = "kkt",
               return_j: bool = False, cs: ConstraintSystem | None = None):
    """Inner minimum of the objective over j in the constraint set of f.

    ``method="kkt"`` factorises the saddle-point system
    ``[[W, B^T], [B, 0]]``; ``"cg"`` eliminates j and runs conjugate
    gradients on the Schur complement ``B W^-1 B^T`` instead.
    """
    cs = cs or constraint_system(A, grid)
    f = _as_flat(f, grid)
    fs = _as_flat(fstar, grid)
    c = cs.rhs(f, fs)
    Gf = cs.op.G @ f
    W, B = cs.Wobj, cs.B
    nJ, nE = B.shape[1], B.shape[0]
    if method == "kkt":
        K = sp.bmat([[W, B.T], [B, None]], format="csc")
        sol = _kkt_solve(K, np.concatenate([W @ Gf, c]))
        j = sol[:nJ]
    elif method == "cg":
        Winv = sp.diags(1.0 / W.diagonal()) if grid.m == 1 else None
        if Winv is None:
            Wlu = spla.splu(W.tocsc())
            apply_winv = Wlu.solve
        else:
            apply_winv = Winv.dot
        S = spla.LinearOperator((nE, nE), lambda v: B @ apply_winv(B.T @ v))
        lam, info = spla.cg(S, B @ Gf - c, rtol=1e-13, atol=0.0, maxiter=20 * nE)
        if info != 0:
            raise RuntimeError(f"Schur-complement CG did not converge (info={info})")
        j = Gf - apply_winv(B.T @ lam)
    else:
        raise ValueError(f"unknown method {method!r}; expected 'kkt' or 'cg'")
    J = 0.5 * float((Gf - j) @ (W @ (Gf - j)))
    return (J, j) if return_j else J


@dataclass
class MinimizerPair:
    f: DiscreteField
    j: np.ndarray
    objective: float
    constraint_residual: float
    gradient_mismatch: float

    def as_dict(self) -> dict:
        return {"objective": self.objective, "constraint_residual": self.constraint_residual,
                "gradient_mismatch": self.gradient_mismatch}


def minimize_joint(g, gstar, A: EllipticMatrixField, grid: Grid,
                   cs: ConstraintSystem | None = None) -> MinimizerPair:
    """Joint minimisation over ``(f, j)`` with ``f = g`` on the Kolmogorov nodes.

    One sparse saddle-point solve over the unknowns ``z = (f_E, j)``.
    """
    cs = cs or constraint_system(A, grid)
    op = cs.op
    E, K = op.E, op.K
    gv = _as_flat(g, grid)
    gs = _as_flat(gstar, grid)
    G = op.G.tocsc()
    GE, GK = G[:, E], G[:, K]
    nJ = G.shape[0]
    P = sp.hstack([GE, -sp.identity(nJ)], format="csr")
    o = GK @ gv[K]
    W = cs.Wobj
    H = (P.T @ W @ P).tocsr()
    h = P.T @ (W @ o)
    ME = sp.diags(op.mass[E])
    TE = op.T[E]
    C = sp.hstack([-ME @ TE[:, E], cs.B], format="csr")
    d = -op.mass[E] * gs[E] + op.mass[E] * (TE[:, K] @ gv[K])
    KKT = sp.bmat([[H, C.T], [C, None]], format="csc")
    sol = _kkt_solve(KKT, np.concatenate([-h, d]))
    nE = E.size
    f = gv.copy()
    f[E] = sol[:nE]
    j = sol[nE:nE + nJ]
    val = objective(cs, f, j)
    res = cs.residual(j, f, gs)
    scale = max(np.linalg.norm(d), np.finfo(float).tiny)
    mismatch = float(np.max(np.abs(op.G @ f - j), initial=0.0))
    return MinimizerPair(DiscreteField(grid, f), j, val, float(np.linalg.norm(res) / scale), mismatch)


# --------------------------------------------------------------------------- certificates


@dataclass
class ConvexityReport:
    min_coercivity_ratio: float
    ratios: np.ndarray
    parallelogram_defect: float
    scaling_defect: float

    def as_dict(self) -> dict:
        return {"min_coercivity_ratio": self.min_coercivity_ratio,
                "parallelogram_defect": self.parallelogram_defect,
                "scaling_defect": self.scaling_defect, "trials": int(self.ratios.size)}


def _admissible_pair(cs: ConstraintSystem, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Random f vanishing on the data nodes and j projected onto its constraint set (g* = 0)."""
    op, grid = cs.op, cs.grid
    f = np.where(grid.kolmogorov_mask, 0.0, rng.standard_normal(grid.size))
    j0 = rng.standard_normal(cs.B.shape[1])
    c = cs.rhs(f, np.zeros(grid.size))
    E = op.E
    # W_A-orthogonal projection: j = j0 - W^-1 B^T mu with (B W^-1 B^T) mu = B j0 - c and B W^-1 B^T = D_EE
    mu = spla.spsolve(op.D[E][:, E].tocsc(), cs.B @ j0 - c)
    WA = op.WA
    if grid.m == 1:
        j = j0 - (cs.B.T @ mu) / WA.diagonal()
    else:
        j = j0 - spla.splu(WA.tocsc()).solve(cs.B.T @ mu)
    return f, j


def convexity_certificate(grid: Grid, A: EllipticMatrixField, trials: int = 100, seed: int = 0
                          ) -> ConvexityReport:
    """Empirical coercivity ``J[f, j] / (||f||_W^2 + ||j||^2)`` over random admissible pairs.

    Also reports the worst relative defects of the parallelogram identity and
    of quadratic scaling on the same samples.
    """
    if trials < 1:
        raise ValueError("trials must be at least 1")
    cs = constraint_system(A, grid)
    rng = np.random.default_rng(seed)
    ratios, para, scal = [], 0.0, 0.0
    prev = None
    for _ in range(trials):
        f, j = _admissible_pair(cs, rng)
        J = objective(cs, f, j)
        nf = w_norm(DiscreteField(grid, f)).w_norm
        nj = float(j @ (cs.jw * j))
        ratios.append(J / (nf ** 2 + nj))
        scal = max(scal, abs(objective(cs, 2 * f, 2 * j) - 4 * J) / (4 * J))
        if prev is not None:
            f2, j2 = prev
            lhs = 0.5 * objective(cs, f2 + f, j2 + j) + 0.5 * objective(cs, f2 - f, j2 - j) \
                - objective(cs, f2, j2)
            para = max(para, abs(lhs - J) / max(J, objective(cs, f2, j2)))
        prev = (f, j)
    r = np.array(ratios)
    return ConvexityReport(float(r.min()), r, para, scal)


def quadratic_growth_exponent(u: DiscreteField, gstar, A: EllipticMatrixField,
                              deltas=None, node: int | None = None) -> tuple[float, np.ndarray, np.ndarray]:
    """Fit ``J[u + delta e_k] ~ delta^p`` over several decades of delta.

    Returns the fitted exponent, the deltas and the J values.
    """
    grid = u.grid
    deltas = np.logspace(-3, 0, 7) if deltas is None else np.asarray(deltas, dtype=float)
    E = grid.equation_nodes
    if node is None:
        node = int(E[E.size // 2])
    cs = constraint_system(A, grid)
    base = u.flat.copy()
    vals = []
    for dlt in deltas:
        f = base.copy()
        f[node] += dlt
        vals.append(evaluate_J(f, gstar, A, grid, cs=cs))
    vals = np.array(vals)
    p = np.polyfit(np.log(deltas), np.log(vals), 1)[0]
    return float(p), deltas, vals


def energy_estimate_ratio(u: DiscreteField, g: DiscreteField, gstar, grid: Grid) -> float:
    """``||u - g||_{L^2(H^1_X)} / (||g||_W + ||g*||_{L^2(H^-1_X)})``."""
    gs = gstar if isinstance(gstar, DiscreteField) else DiscreteField(grid, _as_flat(gstar, grid))
    num = h1x_norm(DiscreteField(grid, u.flat - g.flat))
    den = w_norm(g).w_norm + dual_norm(gs)
    if den == 0:
        return 0.0 if num == 0 else float("inf")
    return float(num / den)


def transport_energy_identity(f: DiscreteField) -> dict:
    """Summation by parts of ``sum w (X . grad_Y f - d_t f) f`` for f vanishing on data nodes.

    With node weights ``M_X * prod_i h_i^up * dt`` the volume sum splits
    exactly into a boundary sum of ``1/2 f^2 (X, -1) . N`` over free faces
    (never positive) minus the non-negative upwind dissipation.
    """
    from .discretization import transport_matrix
    grid = f.grid
    if np.any(f.flat[grid.kolmogorov_mask] != 0):
        raise ValueError("f must vanish on the Kolmogorov nodes")
    m, shape = grid.m, grid.shape
    F = f.values
    idx = np.indices(shape, sparse=True)
    Mx = grid.x_mass.reshape(grid.nx + (1,) * (m + 1))
    hup = []
    xs = []
    for i in range(m):
        c = grid.y_axes[i]
        h = np.diff(c)
        fwd = np.append(h, h[-1])
        bwd = np.insert(h, 0, h[0])
        x = grid.x_axes[i][idx[i]]
        j = idx[m + i]
        hi = np.where(x > 0, np.where(j < c.size - 1, fwd[j], bwd[j]),
                      np.where(x < 0, np.where(j > 0, bwd[j], fwd[j]), 1.0))
        hup.append(hi)
        xs.append(x)
    dtv = np.diff(grid.t_axis)
    n = idx[-1]
    dtn = np.where(n > 0, dtv[np.maximum(n - 1, 0)], dtv[0])
    weight = Mx * np.prod(np.broadcast_arrays(*hup), axis=0) * dtn
    Tf = (transport_matrix(grid) @ f.flat).reshape(shape)
    volume = float(np.sum(weight * Tf * F))

    boundary = 0.0
    dissipation = 0.0
    for i in range(m):
        ax = m + i
        line_w = weight / hup[i]
        x = np.broadcast_to(xs[i], shape)
        lw = np.broadcast_to(line_w, shape)
        dF = np.diff(F, axis=ax)
        # each edge dissipates with the speed and line weight of the node whose stencil uses it
        x_lo = np.take(x, range(shape[ax] - 1), axis=ax)
        lw_lo = np.take(lw, range(shape[ax] - 1), axis=ax)
        dissipation += 0.5 * float(np.sum(np.abs(x_lo) * lw_lo * dF ** 2))
        first = np.take(F, 0, axis=ax)
        last = np.take(F, shape[ax] - 1, axis=ax)
        x0 = np.take(x, 0, axis=ax)
        w0 = np.take(lw, 0, axis=ax)
        w1 = np.take(lw, shape[ax] - 1, axis=ax)
        # (X, -1) . N equals -x_i on the lower face and +x_i on the upper face
        boundary += 0.5 * float(np.sum(-x0 * w0 * first ** 2) + np.sum(x0 * w1 * last ** 2))
    line_t = np.broadcast_to(weight / dtn, shape)
    dissipation += 0.5 * float(np.sum(line_t[..., 1:] * np.diff(F, axis=-1) ** 2))
    boundary += -0.5 * float(np.sum(line_t[..., -1] * F[..., -1] ** 2))
    return {"volume": volume, "boundary": boundary, "dissipation": dissipation,
            "defect": volume - (boundary - dissipation)}
