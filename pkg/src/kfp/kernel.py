"""Fundamental solution of the prototype operator ``Delta_X + X . grad_Y - d_t``.

With ``s = t - t0`` and, per coordinate pair, ``z_x = x - x0`` and
``z_y = y - (y0 - x0 s)``, the kernel is the Gaussian

    Gamma = sqrt(3) / (2 pi s^2) * exp(-(z_x^2/s + 3 z_x z_y/s^2 + 3 z_y^2/s^3))

with covariance ``[[2s, -s^2], [-s^2, 2s^3/3]]`` (determinant ``s^4/3``),
multiplied over the m pairs.  Read as a function of the pole it is the
transition density of the kinetic process ``dX = sqrt(2) dW, dY = X ds``
run from ``(X, Y)`` for time s, which is how the Monte-Carlo oracle meets it.

The oracles below (normalisation, Chapman-Kolmogorov, PDE residual,
dilation exponent, left invariance) gate its use as a benchmark.
"""
from __future__ import annotations

import math

import numpy as np
from scipy import stats

from .discretization import DiscreteField, Grid
from .geometry import Point, ProductDomain, compose, dilate

__all__ = [
    "kernel_values", "prototype_kernel", "kernel_boundary_data", "normalization_error",
    "chapman_kolmogorov_error", "pde_residual", "pde_residual_order", "dilation_exponent",
    "left_invariance_defect", "marginal_bin_probabilities", "chi_square_marginals", "kernel_gates",
]


def kernel_values(X, Y, t, p0: Point) -> np.ndarray:
    """Vectorised kernel at points ``X (n, m), Y (n, m), t (n,)`` for pole ``p0``.

    Points with ``t <= t0`` get 0 (the kernel vanishes before its pole).
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    t = np.atleast_1d(np.asarray(t, dtype=float))
    s = t - p0.t
    out = np.zeros(np.broadcast_shapes(s.shape, X.shape[:1]))
    ok = np.broadcast_to(s > 0, out.shape)
    if not ok.any():
        return out
    Xo = np.broadcast_to(X, out.shape + X.shape[1:])[ok]
    Yo = np.broadcast_to(Y, out.shape + Y.shape[1:])[ok]
    so = np.broadcast_to(s, out.shape)[ok][:, None]
    zx = Xo - p0.X
    zy = Yo - (p0.Y - p0.X * so)
    q = np.sum(zx ** 2 / so + 3 * zx * zy / so ** 2 + 3 * zy ** 2 / so ** 3, axis=1)
    m = p0.m
    norm = (math.sqrt(3) / (2 * math.pi)) ** m / so[:, 0] ** (2 * m)
    out[ok] = norm * np.exp(-q)
    return out


def prototype_kernel(p: Point, p0: Point) -> float:
    """Kernel value ``Gamma(p; p0)``; requires ``t > t0``."""
    if not p.t > p0.t:
        raise ValueError(f"kernel needs t > t0, got t={p.t}, t0={p0.t}")
    if p.m != p0.m:
        raise ValueError("points must have the same dimension")
    return float(kernel_values(p.X[None], p.Y[None], np.array([p.t]), p0)[0])


def kernel_boundary_data(grid: Grid | ProductDomain, p0: Point, resolution=None,
                         extension: bool = True) -> DiscreteField:
    """Kernel sampled on a grid as Dirichlet data.

    With ``extension`` the kernel is sampled on every node (a smooth
    extension of the Kolmogorov data into the domain); otherwise nodes off
    the Kolmogorov boundary are set to 0.  The pole must precede the slab.
    """
    if isinstance(grid, ProductDomain):
        from .discretization import build_grid
        if resolution is None:
            raise ValueError("a resolution is required when passing a domain")
        grid = build_grid(grid, resolution)
    if p0.m != grid.m:
        raise ValueError("pole dimension does not match the grid")
    if not p0.t < grid.t_axis[0]:
        raise ValueError(f"pole time {p0.t} must precede the initial time {grid.t_axis[0]}")
    X, Y, t = grid.coordinates()
    vals = kernel_values(X, Y, t, p0)
    if not extension:
        vals = np.where(grid.kolmogorov_mask, vals, 0.0)
    return DiscreteField(grid, vals)


# --------------------------------------------------------------------------- oracles


def _pair_box(p0: Point, s: float, width: float) -> tuple[np.ndarray, np.ndarray]:
    sx, sy = math.sqrt(2 * s), math.sqrt(2 * s ** 3 / 3)
    cx = p0.X
    cy = p0.Y - p0.X * s
    return (np.stack([cx - width * sx, cx + width * sx], 1),
            np.stack([cy - width * sy, cy + width * sy], 1))


def normalization_error(m: int, s: float, n: int = 81, width: float = 9.0,
                        p0: Point | None = None) -> float:
    """``|integral of Gamma(., t0 + s; p0) dX dY - 1|`` by a tensor trapezoid rule."""
    p0 = p0 or Point.origin(m)
    bx, by = _pair_box(p0, s, width)
    # the kernel does not factor in (x, y) so integrate on the full 2m-dim lattice
    axes = [np.linspace(*bx[i], n) for i in range(m)] + [np.linspace(*by[i], n) for i in range(m)]
    w = [np.full(n, a[1] - a[0]) for a in axes]
    for wi in w:
        wi[[0, -1]] *= 0.5
    mesh = np.meshgrid(*axes, indexing="ij")
    P = np.stack([g.ravel() for g in mesh], 1)
    W = np.prod(np.stack(np.meshgrid(*w, indexing="ij")), 0).ravel()
    vals = kernel_values(P[:, :m], P[:, m:], np.full(P.shape[0], p0.t + s), p0)
    return float(abs(W @ vals - 1.0))


def chapman_kolmogorov_error(s1: float, s2: float, points: int = 5, n: int = 161,
                             width: float = 9.0, seed: int = 0) -> float:
    """Max relative defect of ``Gamma(s1+s2) = int Gamma(s2) Gamma(s1)`` (m = 1) at random targets."""
    rng = np.random.default_rng(seed)
    p0 = Point([0.3], [-0.2], 0.0)
    bx, by = _pair_box(p0, s1, width)
    xs = np.linspace(*bx[0], n)
    ys = np.linspace(*by[0], n)
    wx = np.full(n, xs[1] - xs[0])
    wy = np.full(n, ys[1] - ys[0])
    wx[[0, -1]] *= 0.5
    wy[[0, -1]] *= 0.5
    QX, QY = np.meshgrid(xs, ys, indexing="ij")
    Qx, Qy = QX.ravel()[:, None], QY.ravel()[:, None]
    W = np.outer(wx, wy).ravel()
    first = kernel_values(Qx, Qy, np.full(Qx.shape[0], s1), p0)
    worst = 0.0
    s = s1 + s2
    for _ in range(points):
        mx, my = p0.X[0], p0.Y[0] - p0.X[0] * s
        tx = mx + rng.uniform(-1, 1) * math.sqrt(2 * s)
        ty = my + rng.uniform(-1, 1) * math.sqrt(2 * s ** 3 / 3)
        target = Point([tx], [ty], s)
        exact = prototype_kernel(target, p0)
        second = _second_leg(target, Qx[:, 0], Qy[:, 0], s1)
        approx = W @ (first * second)
        worst = max(worst, abs(approx - exact) / exact)
    return float(worst)


def _second_leg(target: Point, qx: np.ndarray, qy: np.ndarray, s1: float) -> np.ndarray:
    # Gamma(target; (qx, qy, s1)) for many poles at once, written out for m = 1
    s = target.t - s1
    zx = target.X[0] - qx
    zy = target.Y[0] - (qy - qx * s)
    q = zx ** 2 / s + 3 * zx * zy / s ** 2 + 3 * zy ** 2 / s ** 3
    return math.sqrt(3) / (2 * math.pi * s ** 2) * np.exp(-q)


def pde_residual(p: Point, p0: Point, h: float) -> float:
    """``Delta_X Gamma + X . grad_Y Gamma - d_t Gamma`` at p by fourth-order central differences."""
    c1 = np.array([1.0, -8.0, 0.0, 8.0, -1.0]) / (12 * h)
    c2 = np.array([-1.0, 16.0, -30.0, 16.0, -1.0]) / (12 * h * h)
    offs = np.arange(-2, 3) * h
    base = p.as_array()
    m = p.m

    def along(axis, coeffs):
        P = np.tile(base, (5, 1))
        P[:, axis] += offs
        v = kernel_values(P[:, :m], P[:, m:2 * m], P[:, -1], p0)
        return coeffs @ v

    lap = sum(along(i, c2) for i in range(m))
    adv = sum(p.X[i] * along(m + i, c1) for i in range(m))
    return float(lap + adv - along(2 * m, c1))


def pde_residual_order(m: int = 1, points: int = 6, hs=(0.08, 0.04, 0.02), seed: int = 1) -> float:
    """Smallest observed convergence order of the finite-difference kernel residual.

    Probes sit at homogeneous distance at least 1 from the pole; since the
    kernel solves the equation exactly, the residual is pure truncation error.
    """
    from .geometry import quasi_distance
    rng = np.random.default_rng(seed)
    p0 = Point.origin(m)
    worst = math.inf
    found = 0
    while found < points:
        s = rng.uniform(1.0, 2.0)
        p = Point(rng.normal(0, 1, m), rng.normal(0, 0.8, m), s)
        if quasi_distance(p, p0) < 1.0 or prototype_kernel(p, p0) < 1e-4:
            continue
        found += 1
        res = [abs(pde_residual(p, p0, h)) for h in hs]
        orders = [math.log(res[k] / res[k + 1]) / math.log(hs[k] / hs[k + 1]) for k in range(len(hs) - 1)]
        worst = min(worst, min(orders))
    return float(worst)


def dilation_exponent(m: int, r: float = 2.0, samples: int = 20, seed: int = 2) -> tuple[int, float]:
    """Measured exponent ``a`` in ``Gamma(delta_r p; delta_r p0) = r^a Gamma(p; p0)``.

    Returns the rounded integer and the largest deviation of the raw
    estimates from it.
    """
    rng = np.random.default_rng(seed)
    est = []
    for _ in range(samples):
        p0 = Point(rng.normal(size=m), rng.normal(size=m), -rng.uniform(0.5, 1.5))
        p = Point(p0.X + rng.normal(size=m), p0.Y + rng.normal(size=m), p0.t + rng.uniform(0.5, 2))
        a = prototype_kernel(dilate(r, p), dilate(r, p0))
        b = prototype_kernel(p, p0)
        est.append(math.log(a / b) / math.log(r))
    est = np.array(est)
    k = int(round(float(np.median(est))))
    return k, float(np.max(np.abs(est - k)))


def left_invariance_defect(m: int, samples: int = 50, seed: int = 3) -> float:
    """Max relative change of ``Gamma`` when pole and point are both left-translated."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(samples):
        q = Point.from_array(rng.normal(size=2 * m + 1))
        p0 = Point.from_array(rng.normal(size=2 * m + 1))
        p = Point(p0.X + rng.normal(size=m), p0.Y + rng.normal(size=m), p0.t + rng.uniform(0.3, 2))
        a = prototype_kernel(compose(q, p), compose(q, p0))
        b = prototype_kernel(p, p0)
        worst = max(worst, abs(a - b) / b)
    return worst


# --------------------------------------------------------------------------- chi-square cross-check


def marginal_bin_probabilities(start: Point, s: float, edges_x: np.ndarray, edges_y: np.ndarray,
                               n: int = 400, width: float = 9.0) -> tuple[np.ndarray, np.ndarray]:
    """Bin masses of the x1 and y1 marginals of the endpoint density after time s (m = 1).

    The endpoint ``(x0, y0)`` of the kinetic process from ``start`` has
    density ``Gamma(start; (x0, y0, t - s))``; masses come from a fine
    trapezoid integration of that density, not from its closed-form moments.
    """
    if start.m != 1:
        raise ValueError("marginal bins are implemented for m = 1")
    sx, sy = math.sqrt(2 * s), math.sqrt(2 * s ** 3 / 3)
    cx, cy = start.X[0], start.Y[0] + start.X[0] * s
    xs = np.linspace(cx - width * sx, cx + width * sx, n)
    ys = np.linspace(cy - width * sy, cy + width * sy, n)
    GX, GY = np.meshgrid(xs, ys, indexing="ij")
    zx = start.X[0] - GX
    zy = start.Y[0] - (GY - GX * s)
    dens = math.sqrt(3) / (2 * math.pi * s ** 2) * np.exp(-(zx ** 2 / s + 3 * zx * zy / s ** 2
                                                            + 3 * zy ** 2 / s ** 3))
    wx = np.full(n, xs[1] - xs[0])
    wy = np.full(n, ys[1] - ys[0])
    wx[[0, -1]] *= 0.5
    wy[[0, -1]] *= 0.5
    fx = dens @ wy
    fy = wx @ dens
    return _bin_mass(xs, fx, edges_x), _bin_mass(ys, fy, edges_y)


def _bin_mass(grid: np.ndarray, dens: np.ndarray, edges: np.ndarray) -> np.ndarray:
    # cumulative trapezoid, interpolated at the bin edges
    cdf = np.concatenate([[0.0], np.cumsum(0.5 * (dens[1:] + dens[:-1]) * np.diff(grid))])
    c = np.interp(edges, grid, cdf, left=0.0, right=cdf[-1])
    mass = np.diff(c)
    mass[0] += c[0]
    mass[-1] += cdf[-1] - c[-1]
    return mass / cdf[-1]


def chi_square_marginals(samples_x: np.ndarray, samples_y: np.ndarray, start: Point, s: float,
                         bins: int = 20) -> dict:
    """Pearson chi-square of the endpoint marginals against kernel bin masses.

    Bin edges are equiprobable under a normal fitted to the samples; the
    outer bins are open.  Returns statistics and p-values per marginal.
    """
    out = {}
    edges = {}
    for name, smp in (("x", samples_x), ("y", samples_y)):
        q = stats.norm.ppf(np.linspace(0, 1, bins + 1)[1:-1], loc=np.mean(smp), scale=np.std(smp))
        edges[name] = np.concatenate([[-np.inf], q, [np.inf]])
    finite = {k: np.concatenate([[v[1] - 1e6], v[1:-1], [v[-2] + 1e6]]) for k, v in edges.items()}
    px, py = marginal_bin_probabilities(start, s, finite["x"], finite["y"])
    for name, smp, p in (("x", samples_x, px), ("y", samples_y, py)):
        counts = np.histogram(smp, bins=edges[name])[0]
        expected = p * smp.size
        chi2 = float(np.sum((counts - expected) ** 2 / expected))
        out[name] = {"chi2": chi2, "dof": bins - 1, "p_value": float(stats.chi2.sf(chi2, bins - 1))}
    return out


def kernel_gates(m: int = 1) -> dict:
    """Run the deterministic kernel oracles and report values and pass flags."""
    norm = max(normalization_error(m, s, n=81 if m == 1 else 41) for s in (0.25, 1.0))
    ck = chapman_kolmogorov_error(0.3, 0.5)
    order = pde_residual_order(m)
    k, dev = dilation_exponent(m)
    return {
        "normalization_error": norm, "normalization_ok": norm <= 1e-6,
        "chapman_kolmogorov_error": ck, "chapman_kolmogorov_ok": ck <= 1e-4,
        "pde_residual_order": order, "pde_residual_ok": order >= 2.0,
        "dilation_exponent": k, "dilation_ok": k == -4 * m and dev < 1e-9,
        "passed": norm <= 1e-6 and ck <= 1e-4 and order >= 2.0 and k == -4 * m and dev < 1e-9,
    }
