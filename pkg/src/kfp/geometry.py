"""Group structure of the Kolmogorov operator and the domains it is posed on.

Points are stored in plain Cartesian coordinates ``(X, Y, t)`` with
``X, Y`` in R^m; the non-Euclidean structure (group law, dilations,
homogeneous norm) is exposed through functions rather than a change of
coordinates.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "Point", "compose", "inverse", "dilate", "homogeneous_norm", "quasi_distance",
    "quasi_triangle_constant", "ProductDomain", "LipschitzGraphDomain",
    "ExhaustionDomain", "BoundaryClass", "BoundaryFace", "classify_boundary",
    "inflow_flux", "box_faces", "exhaustion_domain", "domain_from_json",
    "domain_to_json", "graph_domain",
]


def _vec(v) -> np.ndarray:
    a = np.array(v, dtype=float).reshape(-1)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Point:
    """A point ``(X, Y, t)`` of R^m x R^m x R."""

    X: np.ndarray
    Y: np.ndarray
    t: float

    def __post_init__(self):
        X, Y = _vec(self.X), _vec(self.Y)
        if X.shape != Y.shape:
            raise ValueError(f"X and Y must have the same length, got {X.size} and {Y.size}")
        t = float(self.t)
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(Y)) and math.isfinite(t)):
            raise ValueError("point components must be finite")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "Y", Y)
        object.__setattr__(self, "t", t)

    @property
    def m(self) -> int:
        return self.X.size

    @classmethod
    def origin(cls, m: int) -> "Point":
        return cls(np.zeros(m), np.zeros(m), 0.0)

    @classmethod
    def from_array(cls, a: Sequence[float]) -> "Point":
        """Build from the flat layout ``[x_1..x_m, y_1..y_m, t]``."""
        a = np.asarray(a, dtype=float).reshape(-1)
        if a.size % 2 != 1:
            raise ValueError("flat point must have 2m+1 entries")
        m = (a.size - 1) // 2
        return cls(a[:m], a[m:2 * m], a[-1])

    def as_array(self) -> np.ndarray:
        return np.concatenate([self.X, self.Y, [self.t]])

    def __iter__(self):
        return iter((self.X, self.Y, self.t))


def compose(p: Point, q: Point) -> Point:
    """Group law ``p o q = (X~ + X, Y~ + Y - t X~, t~ + t)`` with p = (X~, Y~, t~)."""
    return Point(p.X + q.X, p.Y + q.Y - q.t * p.X, p.t + q.t)


def inverse(p: Point) -> Point:
    # solving compose(p, q) = 0 gives X = -X~, t = -t~ and Y = -Y~ - t~ X~
    return Point(-p.X, -p.Y - p.t * p.X, -p.t)


def dilate(r: float, p: Point) -> Point:
    """Anisotropic dilation ``(rX, r^3 Y, r^2 t)``."""
    if not r > 0:
        raise ValueError(f"dilation factor must be positive, got {r}")
    return Point(r * p.X, r ** 3 * p.Y, r ** 2 * p.t)


def homogeneous_norm(p: Point) -> float:
    """``|X| + |Y|^(1/3) + |t|^(1/2)``, homogeneous of degree one under dilations."""
    return float(np.linalg.norm(p.X) + np.cbrt(np.linalg.norm(p.Y)) + math.sqrt(abs(p.t)))


def _relative(q: Point, p: Point) -> Point:
    # q^-1 o p in closed form, (X - X~, Y - Y~ + (t - t~) X~, t - t~) for q = (X~, Y~, t~);
    # differencing first keeps q^-1 o q exactly zero, which the cube root would otherwise amplify
    return Point(p.X - q.X, (p.Y - q.Y) + (p.t - q.t) * q.X, p.t - q.t)


def quasi_distance(p: Point, q: Point) -> float:
    """Symmetrised quasi-distance ``(||q^-1 o p|| + ||p^-1 o q||) / 2``."""
    return 0.5 * (homogeneous_norm(_relative(q, p)) + homogeneous_norm(_relative(p, q)))


def quasi_triangle_constant(m: int, samples: int = 1000, seed: int = 0,
                            scale: float = 1.0) -> float:
    """Largest observed ``d(p, q) / (d(p, w) + d(w, q))`` over random triples.

    This is an empirical lower bound on the constant in the quasi-triangle
    inequality; no value for it is asserted anywhere.
    """
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(samples):
        # mix scales so near-degenerate and spread-out triples both appear
        pts = [Point.from_array(scale * rng.standard_normal(2 * m + 1) * 10.0 ** rng.uniform(-2, 1))
               for _ in range(3)]
        p, q, w = pts
        den = quasi_distance(p, w) + quasi_distance(w, q)
        if den > 0:
            worst = max(worst, quasi_distance(p, q) / den)
    return worst


# --------------------------------------------------------------------------- domains


@dataclass(frozen=True)
class ProductDomain:
    """Axis-aligned box ``U_X x V_{Y,t}``.

    ``U_X`` has shape (m, 2) and ``V_Yt`` shape (m + 1, 2); the last row of
    ``V_Yt`` is the time interval.
    """

    U_X: np.ndarray
    V_Yt: np.ndarray

    def __post_init__(self):
        U = np.array(self.U_X, dtype=float).reshape(-1, 2)
        V = np.array(self.V_Yt, dtype=float).reshape(-1, 2)
        if V.shape[0] != U.shape[0] + 1:
            raise ValueError(f"V_Yt must have m+1={U.shape[0] + 1} intervals, got {V.shape[0]}")
        for name, box in (("U_X", U), ("V_Yt", V)):
            if not np.all(np.isfinite(box)):
                raise ValueError(f"{name} corners must be finite")
            if np.any(box[:, 1] <= box[:, 0]):
                raise ValueError(f"{name} must have positive side lengths, got {box.tolist()}")
        U.setflags(write=False)
        V.setflags(write=False)
        object.__setattr__(self, "U_X", U)
        object.__setattr__(self, "V_Yt", V)

    @property
    def m(self) -> int:
        return self.U_X.shape[0]

    @property
    def Y_box(self) -> np.ndarray:
        return self.V_Yt[:-1]

    @property
    def t_interval(self) -> tuple[float, float]:
        return float(self.V_Yt[-1, 0]), float(self.V_Yt[-1, 1])

    def contains(self, p: Point, closed: bool = False) -> bool:
        a = p.as_array()
        lo = np.concatenate([self.U_X[:, 0], self.V_Yt[:, 0]])
        hi = np.concatenate([self.U_X[:, 1], self.V_Yt[:, 1]])
        if closed:
            return bool(np.all(a >= lo) and np.all(a <= hi))
        return bool(np.all(a > lo) and np.all(a < hi))

    def volume(self) -> float:
        return float(np.prod(self.U_X[:, 1] - self.U_X[:, 0]) * np.prod(self.V_Yt[:, 1] - self.V_Yt[:, 0]))


class BoundaryClass(enum.Enum):
    KOLMOGOROV = "kolmogorov"
    FREE = "free"


@dataclass(frozen=True)
class BoundaryFace:
    """One face of a box domain.

    ``axis`` indexes the flat coordinate layout ``[x.., y.., t]`` and
    ``side`` is -1 (lower) or +1 (upper).  ``normal`` is the outward unit
    normal in the ``(Y, t)`` coordinates, or ``None`` for faces of U_X.
    """

    name: str
    axis: int
    side: int
    normal: tuple | None


def box_faces(domain: ProductDomain) -> list[BoundaryFace]:
    m = domain.m
    faces = []
    for i in range(m):
        for side, tag in ((-1, "lo"), (1, "hi")):
            faces.append(BoundaryFace(f"x{i + 1}_{tag}", i, side, None))
    for i in range(m):
        for side, tag in ((-1, "lo"), (1, "hi")):
            n = [0.0] * (m + 1)
            n[i] = float(side)
            faces.append(BoundaryFace(f"y{i + 1}_{tag}", m + i, side, tuple(n)))
    for side, tag in ((-1, "lo"), (1, "hi")):
        n = [0.0] * m + [float(side)]
        faces.append(BoundaryFace(f"t_{tag}", 2 * m, side, tuple(n)))
    return faces


def inflow_flux(X, normal) -> np.ndarray:
    """``(X, -1) . N_{Y,t}`` evaluated for one or many X (last axis of length m)."""
    X = np.asarray(X, dtype=float)
    n = np.asarray(normal, dtype=float)
    return X @ n[:-1] - n[-1]


def classify_boundary(domain: ProductDomain, face_normal, X) -> BoundaryClass:
    """Kolmogorov or free class of a boundary point.

    ``face_normal=None`` signals a point of ``dU_X x V_{Y,t}``, which always
    carries data.  Otherwise the point lies on a face of ``V_{Y,t}`` and is
    Kolmogorov iff ``(X, -1) . N > 0`` (strictly).
    """
    X = np.asarray(X, dtype=float).reshape(-1)
    if X.size != domain.m:
        raise ValueError(f"X must have {domain.m} components")
    if face_normal is None:
        return BoundaryClass.KOLMOGOROV
    n = np.asarray(face_normal, dtype=float).reshape(-1)
    if n.size != domain.m + 1:
        raise ValueError(f"N_Yt must have {domain.m + 1} components")
    return BoundaryClass.KOLMOGOROV if inflow_flux(X, n) > 0 else BoundaryClass.FREE


# --------------------------------------------------------------------------- graph domains


def _plane(params):
    a = np.asarray(params, dtype=float)

    def psi(x):
        x = np.asarray(x, dtype=float)
        if a.size == 0:
            return np.zeros(x.shape[:-1])
        return x @ a
    return psi, float(np.linalg.norm(a))


def _cone(params):
    slope = float(params[0]) if len(params) else 1.0

    def psi(x):
        return slope * np.linalg.norm(np.asarray(x, dtype=float), axis=-1)
    return psi, abs(slope)


def _sine(params):
    amp = float(params[0]) if len(params) > 0 else 0.5
    freq = float(params[1]) if len(params) > 1 else 1.0

    def psi(x):
        x = np.asarray(x, dtype=float)
        if x.shape[-1] == 0:
            return np.zeros(x.shape[:-1])
        return amp * np.sin(freq * x[..., 0])
    return psi, abs(amp * freq)


_GRAPHS = {"plane": _plane, "cone": _cone, "sine": _sine}


@dataclass(frozen=True)
class LipschitzGraphDomain:
    """``Omega = {(x, x_m) : x_m > psi(x)}`` with ``psi`` Lipschitz on R^(m-1).

    ``M`` is the declared Lipschitz constant; it also fixes the height
    ``4 M R`` of the exhaustion boxes, so it must be positive even for a
    flat boundary.
    """

    m: int
    psi: Callable[[np.ndarray], np.ndarray]
    M: float
    name: str = "custom"
    params: tuple = field(default=())

    def __post_init__(self):
        if self.m < 1:
            raise ValueError("m must be at least 1")
        if not self.M > 0:
            raise ValueError(f"declared Lipschitz constant M must be positive, got {self.M}")

    def contains_x(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return X[:, -1] > self.psi(X[:, :-1])

    def check_lipschitz(self, samples: int = 2000, seed: int = 0, radius: float = 10.0) -> float:
        """Largest sampled difference quotient of psi (a spot check, not a proof)."""
        if self.m == 1:
            return 0.0
        rng = np.random.default_rng(seed)
        a = rng.uniform(-radius, radius, (samples, self.m - 1))
        b = a + rng.standard_normal((samples, self.m - 1)) * 10.0 ** rng.uniform(-3, 0, (samples, 1))
        num = np.abs(self.psi(a) - self.psi(b))
        den = np.linalg.norm(a - b, axis=1)
        return float(np.max(num / den))


def graph_domain(name: str, m: int, M: float | None = None, params: Sequence[float] = ()) -> LipschitzGraphDomain:
    """Built-in graph domains: ``plane`` (psi = a.x), ``cone`` (psi = s|x|), ``sine``."""
    if name not in _GRAPHS:
        raise ValueError(f"unknown graph {name!r}; expected one of {sorted(_GRAPHS)}")
    params = tuple(float(p) for p in params)
    if name == "plane" and len(params) not in (0, m - 1):
        raise ValueError(f"plane needs m-1={m - 1} slope parameters")
    psi, lip = _GRAPHS[name](params if params or name != "plane" else [0.0] * (m - 1))
    if M is None:
        M = max(lip, 1.0)
    if M < lip - 1e-12:
        raise ValueError(f"declared M={M} is below the Lipschitz constant {lip} of {name}")
    return LipschitzGraphDomain(m, psi, float(M), name, params)


@dataclass(frozen=True)
class ExhaustionDomain:
    """``U_X^R x V^R``: a bounding box together with the graph cut ``x_m > psi(x)``."""

    omega: LipschitzGraphDomain
    R: float
    box: ProductDomain

    def contains(self, p: Point) -> bool:
        X = p.X
        x, xm = X[:-1], X[-1]
        if np.any(np.abs(x) >= self.R):
            return False
        if not (self.omega.psi(x[None, :])[0] < xm < 4 * self.omega.M * self.R):
            return False
        V = self.box.V_Yt
        yt = np.concatenate([p.Y, [p.t]])
        return bool(np.all(yt > V[:, 0]) and np.all(yt < V[:, 1]))


def exhaustion_domain(omega: LipschitzGraphDomain, V, R: float, samples: int = 257) -> ExhaustionDomain:
    """Bounded piece ``U_X^R x V^R`` of ``Omega x R^m x R``.

    ``U_X^R = Omega n {|x_i| < R, psi(x) < x_m < 4MR}`` and ``V^R`` is ``V``
    stretched by ``R^3`` in Y and ``R^2`` in t.  The returned bounding box
    uses the sampled minimum of psi on ``[-R, R]^(m-1)`` as its lower x_m side.
    """
    if not R > 0:
        raise ValueError(f"R must be positive, got {R}")
    m = omega.m
    V = np.array(V, dtype=float).reshape(-1, 2)
    if V.shape[0] != m + 1:
        raise ValueError(f"V must have m+1={m + 1} intervals")
    scale = np.array([R ** 3] * m + [R ** 2])
    VR = V * scale[:, None]
    if m == 1:
        lo = float(omega.psi(np.zeros((1, 0)))[0])
        U = np.array([[lo, 4 * omega.M * R]])
    else:
        axes = [np.linspace(-R, R, samples)] * (m - 1)
        mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, m - 1)
        lo = float(np.min(omega.psi(mesh)))
        U = np.vstack([np.tile([-R, R], (m - 1, 1)), [[lo, 4 * omega.M * R]]])
    return ExhaustionDomain(omega, float(R), ProductDomain(U, VR))


# --------------------------------------------------------------------------- JSON


def domain_to_json(domain) -> dict:
    if isinstance(domain, ProductDomain):
        return {"type": "box", "U_X": domain.U_X.tolist(), "V_Yt": domain.V_Yt.tolist()}
    if isinstance(domain, LipschitzGraphDomain):
        return {"type": "graph", "m": domain.m, "M": domain.M, "psi": domain.name,
                "params": list(domain.params)}
    raise TypeError(f"cannot serialise {type(domain).__name__}")


def domain_from_json(obj: dict, m: int | None = None):
    kind = obj.get("type")
    if kind == "box":
        return ProductDomain(obj["U_X"], obj["V_Yt"])
    if kind == "graph":
        mm = int(obj.get("m", m if m is not None else 1))
        return graph_domain(obj.get("psi", "plane"), mm, obj.get("M"), obj.get("params", ()))
    raise ValueError(f"domain type must be 'box' or 'graph', got {kind!r}")
