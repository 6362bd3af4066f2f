"""Acceptance gate: one test (or small group) per criterion, at the stated tolerances.

A PASS/FAIL line per criterion is printed at the end of the run by conftest.
"""
import math
import time

import numpy as np
import pytest
from scipy.interpolate import RegularGridInterpolator

from kfp.cli import geometry_checks
from kfp.coefficients import checkerboard_field, constant_field, periodic_field, rotated_field
from kfp.discretization import DiscreteField, assemble, build_grid, solve_direct
from kfp.exhaustion import solve_exhaustion
from kfp.function_spaces import kinetic_poincare_check, poincare_constant_x
from kfp.geometry import BoundaryClass, Point, ProductDomain, classify_boundary, graph_domain
from kfp.kernel import kernel_boundary_data, kernel_gates, kernel_values
from kfp.problems import battery_configs, build_problem, interior_error, refined_resolution
from kfp.stochastic import estimate_parabolic_measure, estimate_solution, simulate_free
from kfp.variational import evaluate_J, minimize_joint, quadratic_growth_exponent

BOX1 = ProductDomain([[-1, 1]], [[-1, 1], [0, 1]])
BOX2 = ProductDomain([[-1, 1]] * 2, [[-1, 1]] * 2 + [[0, 1]])
I1 = constant_field(np.eye(1))
POLE = Point([0.0], [0.0], -1.0)

criterion = pytest.mark.criterion


def rel_l2(a, b):
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300))


# ---------------------------------------------------------------- C1


@criterion(1, "algebraic suite: group law, inverse, dilation, quasi-distance symmetry")
@pytest.mark.parametrize("m", [1, 2])
def test_c01_algebraic_suite(m, measured):
    res = geometry_checks(m, samples=1000, seed=0)
    worst = max(res[k]["value"] for k in ("associativity", "inverse", "dilation_homogeneity",
                                           "quasi_distance_symmetry"))
    measured(f"m={m} worst relative defect {worst:.1e}")
    for k in ("associativity", "inverse", "dilation_homogeneity", "quasi_distance_symmetry"):
        assert res[k]["value"] <= 1e-12, k


# ---------------------------------------------------------------- C2


@criterion(2, "boundary classification on an m = 1 box")
def test_c02_boundary_classification(measured):
    grid = build_grid(BOX1, (17, 17, 17))
    X, Y, t = grid.coordinates()
    x = X[:, 0]
    kol = grid.kolmogorov_mask
    xface = np.isclose(np.abs(x), 1.0)
    t0, t1 = np.isclose(t, 0.0), np.isclose(t, 1.0)
    ylo, yhi = np.isclose(Y[:, 0], -1.0), np.isclose(Y[:, 0], 1.0)
    # the final face minus the edges it shares with inflow y faces
    inflow_edge = (yhi & (x > 0)) | (ylo & (x < 0))
    final = t1 & ~xface & ~inflow_edge
    initial_frac = kol[t0].mean()
    final_frac = kol[final].mean()
    split_bad = 0
    for face, sgn in ((yhi, 1.0), (ylo, -1.0)):
        sel = face & ~xface & ~t0
        split_bad += int(np.sum(kol[sel] != (sgn * x[sel] > 0)))
        for xv in np.unique(x[sel]):
            cls = classify_boundary(BOX1, [sgn, 0.0], [xv])
            split_bad += int((cls is BoundaryClass.KOLMOGOROV) != (sgn * xv > 0))
    measured(f"initial {initial_frac:.0%}, final {final_frac:.0%}, y-face mismatches {split_bad}")
    assert initial_frac == 1.0
    assert final_frac == 0.0
    assert split_bad == 0
    assert np.all(kol[xface])


# ---------------------------------------------------------------- C3

FIELDS = {
    "constant": lambda m: constant_field(np.diag(np.linspace(0.5, 2.0, m))),
    "rotated": lambda m: rotated_field(m, 0.6, 1.0, 4.0),
    "checkerboard": lambda m: checkerboard_field(m, 4.0),
    "periodic": lambda m: periodic_field(m, 0.5),
}


@criterion(3, "constant reproduction (direct and variational)")
@pytest.mark.parametrize("family", sorted(FIELDS))
@pytest.mark.parametrize("m", [1, 2])
def test_c03_constant_reproduction(family, m, measured):
    A = FIELDS[family](m)
    grid = build_grid(BOX1 if m == 1 else BOX2, (9, 9, 9) if m == 1 else (5,) * 5)
    g = DiscreteField(grid, np.full(grid.size, 1.75))
    u, _ = solve_direct(assemble(A, grid, 0.0, g), norms=False)
    pair = minimize_joint(g, 0.0, A, grid)
    err = max(np.max(np.abs(u.flat - 1.75)), np.max(np.abs(pair.f.flat - 1.75)))
    measured(f"worst sup error {err:.1e}")
    assert err <= 1e-12


# ---------------------------------------------------------------- C12 then C4


@pytest.fixture(scope="module")
def gates():
    return {m: kernel_gates(m) for m in (1, 2)}


@criterion(12, "kernel gates: normalisation, Chapman-Kolmogorov, PDE residual order")
@pytest.mark.parametrize("m", [1, 2])
def test_c12_kernel_gates(gates, m, measured):
    r = gates[m]
    measured(f"m={m}: norm {r['normalization_error']:.1e}, CK {r['chapman_kolmogorov_error']:.1e}, "
             f"order {r['pde_residual_order']:.2f}")
    assert r["normalization_error"] <= 1e-6
    assert r["chapman_kolmogorov_error"] <= 1e-4
    assert r["pde_residual_order"] >= 2.0


@criterion(4, "prototype convergence: interior L2 order >= 1 over three refinements")
def test_c04_prototype_convergence(gates, measured):
    assert gates[1]["passed"], "kernel gates must pass before the convergence study"
    start = time.perf_counter()
    errors, hs = [], []
    for level in range(4):
        grid = build_grid(BOX1, refined_resolution([9, 9, 9], level))
        g = kernel_boundary_data(grid, POLE)
        u, _ = solve_direct(assemble(I1, grid, 0.0, g), norms=False)
        errors.append(interior_error(u, g)["l2"])
        hs.append(grid.t_axis[1] - grid.t_axis[0])
    elapsed = time.perf_counter() - start
    orders = [math.log(errors[k] / errors[k + 1]) / math.log(hs[k] / hs[k + 1]) for k in range(3)]
    measured("orders " + ", ".join(f"{o:.3f}" for o in orders) + f"; {elapsed:.1f} s")
    assert min(orders) >= 1.0
    assert elapsed <= 60.0


# ---------------------------------------------------------------- C5


@criterion(5, "direct/variational equivalence on the battery")
def test_c05_direct_variational(measured):
    cfgs = battery_configs()
    assert len(cfgs) >= 5
    assert any(c["coefficients"]["family"] == "checkerboard" and c["coefficients"]["params"][0] == 4.0
               for c in cfgs)
    diffs = []
    for cfg in cfgs:
        pb = build_problem(cfg)
        u, _ = solve_direct(assemble(pb.A, pb.grid, pb.gstar, pb.g), norms=False)
        pair = minimize_joint(pb.g, pb.gstar, pb.A, pb.grid)
        diffs.append(rel_l2(pair.f.flat, u.flat))
    measured(f"{len(cfgs)} problems, worst relative L2 {max(diffs):.1e}")
    assert max(diffs) <= 1e-8


# ---------------------------------------------------------------- C6


@criterion(6, "null minimum and quadratic growth of J")
def test_c06_null_minimum_and_growth(measured):
    A = checkerboard_field(1, 4.0)
    grid = build_grid(BOX1, (9, 9, 9))
    rng = np.random.default_rng(6)
    g = DiscreteField(grid, rng.uniform(size=grid.size))
    gs = DiscreteField(grid, rng.normal(size=grid.size))
    u, _ = solve_direct(assemble(A, grid, gs, g), norms=False)
    scale = evaluate_J(g, gs, A, grid)
    j0 = evaluate_J(u, gs, A, grid)
    p, _, _ = quadratic_growth_exponent(u, gs, A)
    measured(f"J(u)/J(g) {j0 / scale:.1e}, growth exponent {p:.4f}")
    assert j0 <= 1e-10 * scale
    assert abs(p - 2.0) <= 0.05


# ---------------------------------------------------------------- C7


def _random_field(rng, m, i):
    fam = ("constant", "rotated", "checkerboard", "periodic")[i % 4]
    if fam == "constant":
        Q = np.linalg.qr(rng.normal(size=(m, m)))[0]
        A = constant_field(Q @ np.diag(rng.uniform(0.1, 1.0, m)) @ Q.T)
    elif fam == "rotated":
        A = rotated_field(m, rng.uniform(0, np.pi), 1.0, rng.uniform(1.0, 10.0))
    elif fam == "checkerboard":
        A = checkerboard_field(m, rng.uniform(1.0, 10.0))
    else:
        A = periodic_field(m, rng.uniform(0.0, 0.9))
    return A


@criterion(7, "discrete maximum principle on 20 random problems")
def test_c07_maximum_principle(measured):
    rng = np.random.default_rng(7)
    violations, worst_kappa = 0, 0.0
    for i in range(20):
        m = 1 + (i // 4) % 2
        A = _random_field(rng, m, i)
        assert A.kappa <= 10.0
        worst_kappa = max(worst_kappa, A.kappa)
        grid = build_grid(BOX1 if m == 1 else BOX2, (9, 9, 9) if m == 1 else (5,) * 5)
        g = DiscreteField(grid, rng.uniform(-1.0, 2.0, grid.size))
        u, _ = solve_direct(assemble(A, grid, 0.0, g), norms=False)
        lo, hi = g.flat.min(), g.flat.max()
        violations += int(np.sum((u.flat < lo) | (u.flat > hi)))
    measured(f"{violations} violations, largest kappa {worst_kappa:.2f}")
    assert violations == 0


# ---------------------------------------------------------------- C8


@criterion(8, "Poincare constants: classical limit and bounded kinetic ratios")
def test_c08_poincare(measured):
    consts = [poincare_constant_x(build_grid(BOX1, (n, 3, 3))) for n in (17, 65, 257)]
    exact = 2.0 / math.pi  # first Dirichlet eigenvalue of -d^2/dx^2 on (-1, 1) is (pi/2)^2
    rel = abs(consts[-1] - exact) / exact
    rep = kinetic_poincare_check(build_grid(BOX1, (17, 17, 17)), trials=100, seed=8)
    measured(f"X constant rel. error {rel:.1e}; kinetic max/median {rep.max_ratio / rep.median_ratio:.2f}")
    assert rel <= 0.01
    assert abs(consts[-1] - exact) < abs(consts[0] - exact)
    assert rep.ratios.size == 100
    assert np.all(np.isfinite(rep.ratios))
    assert rep.max_ratio <= 10.0 * rep.median_ratio


# ---------------------------------------------------------------- C9

PROBES = [(0.0, 0.0, 0.6), (0.4, 0.2, 0.75), (-0.4, -0.3, 0.5), (0.2, -0.5, 0.9), (-0.5, 0.4, 0.7)]
PATHS = 100_000


@criterion(9, "Monte-Carlo cross-oracle against the direct solver")
@pytest.mark.slow
def test_c09_monte_carlo(measured):
    start = time.perf_counter()
    grid = build_grid(BOX1, (65, 129, 257))
    g = kernel_boundary_data(grid, POLE, extension=False)
    u, _ = solve_direct(assemble(I1, grid, 0.0, g), norms=False)
    interp = RegularGridInterpolator(grid.x_axes + grid.y_axes + (grid.t_axis,), u.values)
    phi = lambda X, Y, t: kernel_values(X, Y, t, POLE)  # noqa: E731
    zs = []
    for k, p in enumerate(PROBES):
        r = estimate_solution(Point.from_array(p), BOX1, phi, paths=PATHS, seed=100 + k)
        zs.append(abs(r.mean - float(interp(np.array([p]))[0])) / r.std_error)
    mass = estimate_parabolic_measure(Point.from_array(PROBES[1]), BOX1, paths=PATHS, seed=200)
    total = sum(mass["masses"].values())
    elapsed = time.perf_counter() - start
    measured("z " + ", ".join(f"{z:.2f}" for z in zs) + f"; mass sum {total:.5f}; {elapsed:.0f} s")
    assert max(zs) <= 3.0
    assert abs(total - 1.0) <= 3.0 / math.sqrt(PATHS)
    assert elapsed <= 120.0


# ---------------------------------------------------------------- C10


@criterion(10, "exhaustion on the half-space: decreasing differences")
def test_c10_exhaustion(measured):
    pole = Point([1.0], [0.0], -8.0)
    res = solve_exhaustion(graph_domain("plane", 1), [[-0.25, 0.25], [-0.25, 0.25]],
                           lambda X, Y, t: kernel_values(X, Y, t, pole), None, I1, [1, 2, 4, 8],
                           [[0.125, 0.5], [-0.125, 0.125], [0.0, 0.25]], [17, 17, 17])
    d = res.differences
    scale = max(s.sup_g for s in res.steps)
    measured("differences " + ", ".join(f"{v:.2e}" for v in d) + f"; data scale {scale:.3f}")
    assert np.all(np.diff(d) < 0)
    assert d[-1] <= 1e-3 * scale


# ---------------------------------------------------------------- C11


@criterion(11, "SDE moments within three standard errors")
def test_c11_sde_moments(measured):
    s = 1.0
    X, Y = simulate_free(Point([0.0], [0.0], 0.0), s, PATHS, n_steps=256, seed=11)
    x, y = X[:, 0], Y[:, 0]
    zs = []
    for est, target in ((x * x, 2 * s), (x * y, s ** 2), (y * y, 2 * s ** 3 / 3)):
        se = est.std(ddof=1) / math.sqrt(PATHS)
        zs.append(abs(est.mean() - target) / se)
    measured("z " + ", ".join(f"{z:.2f}" for z in zs))
    assert max(zs) <= 3.0
