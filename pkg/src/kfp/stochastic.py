"""Monte-Carlo oracle: kinetic paths and exit statistics on the Kolmogorov boundary.

A path started at ``(X, Y, t)`` runs ``dX = sqrt(2A) dW``, ``dY = X ds`` and
consumes calendar time, so after elapsed time s it sits at
``(X_s, Y_s, t - s)``.  It is absorbed the first time it reaches the
Kolmogorov boundary: a face of U_X (or the graph), an inflow Y face, or the
initial-time face.  Averaging the data over exit points estimates the
solution of the prototype Dirichlet problem.

Random numbers come from a counter-based Philox generator keyed by
``(seed, block)``, so a fixed block layout gives identical results for any
number of workers.
"""
from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .geometry import ExhaustionDomain, LipschitzGraphDomain, Point, ProductDomain

__all__ = [
    "PathState", "step", "sqrt_diffusion", "simulate_free", "estimate_solution",
    "estimate_parabolic_measure", "MCResult", "block_rng",
]

BLOCK = 1 << 16


def block_rng(seed: int, block: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=[int(seed) & (2 ** 64 - 1), int(block)]))


def sqrt_diffusion(A) -> np.ndarray:
    """Lower Cholesky factor S with ``S S^T = 2A`` for a constant SPD matrix."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    return np.linalg.cholesky(2.0 * A)


@dataclass
class PathState:
    """A batch of paths; rows are paths.  Exited rows are frozen."""

    X: np.ndarray
    Y: np.ndarray
    s: np.ndarray
    alive: np.ndarray
    exit_point: np.ndarray | None = None
    exit_face: np.ndarray | None = None

    @classmethod
    def start(cls, p: Point, n: int) -> "PathState":
        m = p.m
        return cls(np.tile(p.X, (n, 1)), np.tile(p.Y, (n, 1)), np.zeros(n), np.ones(n, dtype=bool),
                   np.full((n, 2 * m + 1), np.nan), np.full(n, -1, dtype=np.int64))


def step(state: PathState, dt: float, sqrtA: np.ndarray, draw: np.ndarray) -> PathState:
    """One Euler-Maruyama step for alive paths; drift uses the pre-step X.

    ``draw`` holds m standard normals per path (shape (n, m) or (m,)).
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    draw = np.atleast_2d(draw)
    a = state.alive
    X, Y, s = state.X.copy(), state.Y.copy(), state.s.copy()
    Y[a] = Y[a] + X[a] * dt
    X[a] = X[a] + math.sqrt(dt) * (draw[a] if draw.shape[0] == a.size else draw) @ np.asarray(sqrtA).T
    s[a] = s[a] + dt
    return PathState(X, Y, s, a.copy(), state.exit_point, state.exit_face)


def simulate_free(start: Point, s: float, paths: int, n_steps: int = 2048, seed: int = 0,
                  A=None, exact_y: bool = False) -> tuple[np.ndarray, np.ndarray]:
    """Endpoints ``(X_s, Y_s)`` of unconstrained paths, shapes (paths, m)."""
    m = start.m
    S = sqrt_diffusion(np.eye(m) if A is None else A)
    dt = s / n_steps
    Xs, Ys = [], []
    for b, lo in enumerate(range(0, paths, BLOCK)):
        n = min(BLOCK, paths - lo)
        rng = block_rng(seed, b)
        X = np.tile(start.X, (n, 1))
        Y = np.tile(start.Y, (n, 1))
        for _ in range(n_steps):
            X, Y = _advance(X, Y, dt, S, rng, exact_y)
        Xs.append(X)
        Ys.append(Y)
    return np.vstack(Xs), np.vstack(Ys)


def _advance(X, Y, dt, S, rng, exact_y, xi=None, eta=None):
    n, m = X.shape
    xi = rng.standard_normal((n, m)) if xi is None else xi
    dX = math.sqrt(dt) * xi @ S.T
    if exact_y:
        # the Y increment of the exact process given both X endpoints is the
        # trapezoid value plus an independent bridge term of variance 2A dt^3/12
        eta = rng.standard_normal((n, m)) if eta is None else eta
        Yn = Y + (X + 0.5 * dX) * dt + math.sqrt(dt ** 3 / 12.0) * eta @ S.T
    else:
        Yn = Y + X * dt
    return X + dX, Yn


# --------------------------------------------------------------------------- exits


@dataclass
class _Region:
    m: int
    x_lo: np.ndarray
    x_hi: np.ndarray
    y_lo: np.ndarray
    y_hi: np.ndarray
    t_min: float
    graph: LipschitzGraphDomain | None = None
    faces: list = field(default_factory=list)

    @classmethod
    def of(cls, domain, t_min: float | None = None) -> "_Region":
        if isinstance(domain, ProductDomain):
            m = domain.m
            return cls(m, domain.U_X[:, 0], domain.U_X[:, 1], domain.Y_box[:, 0], domain.Y_box[:, 1],
                       domain.t_interval[0])
        if isinstance(domain, ExhaustionDomain):
            r = cls.of(domain.box)
            r.graph = domain.omega
            return r
        if isinstance(domain, LipschitzGraphDomain):
            if t_min is None:
                raise ValueError("an unbounded graph domain needs t_min for the initial face")
            m = domain.m
            inf = np.full(m, np.inf)
            return cls(m, -inf, inf, -inf, inf, float(t_min), domain)
        raise TypeError(f"unsupported domain {type(domain).__name__}")

    def face_names(self) -> list[str]:
        names = []
        for i in range(self.m):
            names += [f"x{i + 1}_lo", f"x{i + 1}_hi"]
        for i in range(self.m):
            names += [f"y{i + 1}_lo", f"y{i + 1}_hi"]
        names += ["t_lo", "t_hi"]
        if self.graph is not None:
            names.append("graph")
        return names

    def inside_x(self, X: np.ndarray) -> np.ndarray:
        ok = np.all((X > self.x_lo) & (X < self.x_hi), axis=1)
        if self.graph is not None:
            ok &= self.graph.contains_x(X)
        return ok


@dataclass
class MCResult:
    mean: float
    std_error: float
    lost_fraction: float
    paths: int
    resampled: int = 0
    face_counts: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {"mean": self.mean, "std_error": self.std_error, "lost_fraction": self.lost_fraction,
                "paths": self.paths, "resampled": self.resampled, "face_counts": self.face_counts}


def _resolve_exits(region: _Region, fid: dict, X, Y, X1, Y1, t: float, dt: float, sig2: np.ndarray,
                   rng: np.random.Generator, bridge: bool):
    """Earliest exit (fraction of the step and face id) of candidate paths; inf when none."""
    m = region.m
    k = X.shape[0]
    theta = np.full(k, np.inf)
    which = np.full(k, -1, dtype=np.int64)

    def offer(th, code, mask):
        better = mask & (th < theta)
        theta[better] = th[better]
        which[better] = code

    if t - dt <= region.t_min:
        offer(np.full(k, (t - region.t_min) / dt), fid["t_lo"], np.ones(k, dtype=bool))
    with np.errstate(divide="ignore", invalid="ignore"):
        for i in range(m):
            for bound, tag, sgn in ((region.x_lo[i], "lo", -1.0), (region.x_hi[i], "hi", 1.0)):
                if not np.isfinite(bound):
                    continue
                d0 = sgn * (bound - X[:, i])
                d1 = sgn * (bound - X1[:, i])
                crossed = d1 <= 0
                offer(d0 / (d0 - d1), fid[f"x{i + 1}_{tag}"], crossed)
                if bridge:
                    # probability that the Brownian bridge between the endpoints touched the face
                    p = np.exp(-2.0 * np.clip(d0, 0, None) * np.clip(d1, 0, None) / (sig2[i] * dt))
                    kill = ~crossed & (rng.random(k) < p)
                    offer(np.full(k, 0.5), fid[f"x{i + 1}_{tag}"], kill)
        if region.graph is not None:
            g0 = X[:, -1] - region.graph.psi(X[:, :-1])
            g1 = X1[:, -1] - region.graph.psi(X1[:, :-1])
            offer(g0 / (g0 - g1), fid["graph"], g1 <= 0)
        for i in range(m):
            for bound, tag, sgn in ((region.y_lo[i], "lo", -1.0), (region.y_hi[i], "hi", 1.0)):
                if not np.isfinite(bound):
                    continue
                d0 = sgn * (bound - Y[:, i])
                d1 = sgn * (bound - Y1[:, i])
                offer(d0 / (d0 - d1), fid[f"y{i + 1}_{tag}"], d1 <= 0)
    return theta, which


def _run_block(start: Point, region: _Region, dt: float, horizon: float, S: np.ndarray,
               n: int, rng: np.random.Generator, antithetic: bool, exact_y: bool,
               bridge: bool) -> tuple[np.ndarray, np.ndarray, int]:
    """Simulate one block; returns exit points (n, 2m+1) (NaN when lost), face ids and resamples."""
    m = region.m
    names = region.face_names()
    fid = {nm: k for k, nm in enumerate(names)}
    exit_pt = np.full((n, 2 * m + 1), np.nan)
    face = np.full(n, -1, dtype=np.int64)
    idx = np.arange(n)
    X = np.tile(start.X, (n, 1))
    Y = np.tile(start.Y, (n, 1))
    t = start.t
    resampled = 0
    sig2 = np.sum(S ** 2, axis=1)  # diagonal of 2A
    # beyond this distance from a face the bridge crossing probability is below exp(-2 * 36)
    reach = 6.0 * np.sqrt(sig2 * dt) if bridge else np.zeros(m)
    half = (n + 1) // 2
    while idx.size:
        k = idx.size
        if antithetic:
            # path i and path i + half share a draw with opposite signs
            pair = idx % half
            sign = np.where(idx < half, 1.0, -1.0)[:, None]
            xi = rng.standard_normal((half, m))[pair] * sign
            eta = rng.standard_normal((half, m))[pair] * sign if exact_y else None
        else:
            xi = rng.standard_normal((k, m))
            eta = rng.standard_normal((k, m)) if exact_y else None
        X1, Y1 = _advance(X, Y, dt, S, rng, exact_y, xi, eta)
        if t - dt <= region.t_min:
            cand = np.arange(k)
        else:
            near = np.zeros(k, dtype=bool)
            for i in range(m):
                near |= (X1[:, i] - region.x_lo[i] < reach[i]) | (region.x_hi[i] - X1[:, i] < reach[i])
                near |= (Y1[:, i] <= region.y_lo[i]) | (Y1[:, i] >= region.y_hi[i])
            if region.graph is not None:
                near |= ~region.graph.contains_x(X1)
            cand = np.flatnonzero(near)
        done_mask = np.zeros(k, dtype=bool)
        if cand.size:
            theta, which = _resolve_exits(region, fid, X[cand], Y[cand], X1[cand], Y1[cand], t, dt,
                                          sig2, rng, bridge)
            hit = np.isfinite(theta)
            c = cand[hit]
            done_mask[c] = True
            th = np.clip(theta[hit], 0.0, 1.0)[:, None]
            Xe = X[c] + th * (X1[c] - X[c])
            Ye = Y[c] + th * (Y1[c] - Y[c])
            te = t - th[:, 0] * dt
            fc = which[hit]
            for i in range(m):
                Xe[fc == fid[f"x{i + 1}_lo"], i] = region.x_lo[i]
                Xe[fc == fid[f"x{i + 1}_hi"], i] = region.x_hi[i]
                Ye[fc == fid[f"y{i + 1}_lo"], i] = region.y_lo[i]
                Ye[fc == fid[f"y{i + 1}_hi"], i] = region.y_hi[i]
                # a Y exit must satisfy the inflow sign rule; fall back to the
                # pre-step velocity, which drove the crossing
                for tag, sgn in (("lo", -1.0), ("hi", 1.0)):
                    bad = (fc == fid[f"y{i + 1}_{tag}"]) & ~(sgn * Xe[:, i] > 0)
                    if bad.any():
                        resampled += int(bad.sum())
                        Xe[bad] = X[c][bad]
                        fc[bad & ~(sgn * Xe[:, i] > 0)] = -2
            te[fc == fid["t_lo"]] = region.t_min
            rows = idx[c]
            exit_pt[rows] = np.column_stack([Xe, Ye, te])
            face[rows] = fc
            exit_pt[rows[fc == -2]] = np.nan
        t -= dt
        if start.t - t >= horizon:
            break
        if done_mask.any():
            keep = ~done_mask
            idx, X, Y = idx[keep], X1[keep], Y1[keep]
        else:
            X, Y = X1, Y1
    return exit_pt, face, resampled


def _simulate(start: Point, domain, paths: int, dt: float | None, seed: int, A, antithetic: bool,
              exact_y: bool, bridge: bool, jobs: int, t_min: float | None):
    region = _Region.of(domain, t_min)
    m = region.m
    if start.m != m:
        raise ValueError("start point dimension does not match the domain")
    if not region.inside_x(start.X[None])[0] and not np.isclose(start.t, region.t_min):
        raise ValueError("start point must lie inside the domain")
    S = sqrt_diffusion(np.eye(m) if A is None else A)
    span = start.t - region.t_min
    if span < 0:
        raise ValueError("start time precedes the initial-time face")
    names = region.face_names()
    if span == 0:
        pt = np.tile(start.as_array(), (paths, 1))
        return pt, np.full(paths, names.index("t_lo")), 0, names
    dt = span / 2048 if dt is None else float(dt)
    if not dt > 0:
        raise ValueError("dt must be positive")
    horizon = span + 2 * dt

    def work(b):
        n = min(BLOCK, paths - b * BLOCK)
        return _run_block(start, region, dt, horizon, S, n, block_rng(seed, b), antithetic, exact_y, bridge)

    blocks = range(math.ceil(paths / BLOCK))
    if jobs > 1:
        with ThreadPoolExecutor(jobs) as ex:
            out = list(ex.map(work, blocks))
    else:
        out = [work(b) for b in blocks]
    pts = np.vstack([o[0] for o in out])
    faces = np.concatenate([o[1] for o in out])
    return pts, faces, sum(o[2] for o in out), names


def estimate_solution(start: Point, domain, phi: Callable, paths: int = 100_000, dt: float | None = None,
                      seed: int = 0, A=None, antithetic: bool = False, exact_y: bool = False,
                      bridge: bool = True, jobs: int = 1, t_min: float | None = None) -> MCResult:
    """Mean of ``phi`` over exit points, with its standard error.

    ``phi(X, Y, t)`` takes flat arrays of exit coordinates.  Lost paths
    (no exit within the horizon, or an unresolvable free-face crossing)
    contribute 0 and are reported through ``lost_fraction``.
    """
    if paths < 1:
        raise ValueError("paths must be at least 1")
    pts, faces, res, names = _simulate(start, domain, paths, dt, seed, A, antithetic, exact_y, bridge, jobs, t_min)
    m = start.m
    ok = faces >= 0
    vals = np.zeros(paths)
    if ok.any():
        vals[ok] = np.asarray(phi(pts[ok, :m], pts[ok, m:2 * m], pts[ok, -1]), dtype=float)
    if antithetic and paths > 1:
        # pair path i of a block with path i + half of the same block
        pairs = []
        for lo in range(0, paths, BLOCK):
            v = vals[lo:lo + BLOCK]
            h = (v.size + 1) // 2
            pairs.append(0.5 * (v[:v.size - h] + v[h:h + v.size - h]) if v.size > 1 else v)
        pv = np.concatenate(pairs)
        se = float(np.std(pv, ddof=1) / math.sqrt(pv.size)) if pv.size > 1 else 0.0
    else:
        se = float(np.std(vals, ddof=1) / math.sqrt(paths)) if paths > 1 else 0.0
    lost = float(np.mean(~ok))
    counts = {nm: int(np.sum(faces == k)) for k, nm in enumerate(names) if np.any(faces == k)}
    return MCResult(float(np.mean(vals)), se, lost, paths, res, counts)


def estimate_parabolic_measure(start: Point, domain, boundary_partition: Sequence[str] | None = None,
                               paths: int = 100_000, dt: float | None = None, seed: int = 0, A=None,
                               bridge: bool = True, jobs: int = 1, t_min: float | None = None) -> dict:
    """Exit frequencies per boundary patch (box face names such as ``"y1_hi"``).

    Returns ``{"masses": {patch: mass}, "lost_fraction": ...}``; the masses
    sum to ``1 - lost_fraction``.
    """
    pts, faces, res, names = _simulate(start, domain, paths, dt, seed, A, False, False, bridge, jobs, t_min)
    patches = list(boundary_partition) if boundary_partition is not None else \
        [nm for nm in names if nm != "t_hi"]
    unknown = set(patches) - set(names)
    if unknown:
        raise ValueError(f"unknown boundary patches {sorted(unknown)}; available {names}")
    masses = {p: float(np.sum(faces == names.index(p))) / paths for p in patches}
    covered = np.isin(faces, [names.index(p) for p in patches])
    stray = (faces >= 0) & ~covered
    if stray.any():
        raise ValueError("patches do not cover every exit: "
                         + ", ".join(sorted({names[f] for f in faces[stray]})))
    lost = float(np.mean(faces < 0))
    if lost > 0.01:
        warnings.warn(f"{lost:.2%} of paths were lost", RuntimeWarning, stacklevel=2)
    return {"masses": masses, "lost_fraction": lost, "resampled": res}
