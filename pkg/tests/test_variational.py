import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from kfp.coefficients import checkerboard_field, constant_field, periodic_field, rotated_field
from kfp.discretization import DiscreteField, assemble, build_grid, solve_direct, weak_residual
from kfp.geometry import Point, ProductDomain
from kfp.kernel import kernel_boundary_data
from kfp.variational import (constraint_system, convexity_certificate, energy_estimate_ratio, evaluate_J,
                             minimize_joint, objective, quadratic_growth_exponent, transport_energy_identity)

BOX1 = ProductDomain([[-1, 1]], [[-1, 1], [0, 1]])
BOX2 = ProductDomain([[-1, 1]] * 2, [[-1, 1]] * 2 + [[0, 1]])
CHECKER = checkerboard_field(1, 4.0)


def random_problem(A, dom, res, seed=0):
    g = build_grid(dom, res)
    rng = np.random.default_rng(seed)
    gd = DiscreteField(g, rng.uniform(size=g.size))
    gs = DiscreteField(g, rng.normal(size=g.size))
    u, _ = solve_direct(assemble(A, g, gs, gd), norms=False)
    return g, gd, gs, u


def dense_J(f, fs, A, grid):
    """Closed form of the inner minimum: 1/2 r^T diag(w_yt) D_EE^-1 r with r = B G f - c."""
    cs = constraint_system(A, grid)
    op = cs.op
    E = op.E
    r = cs.B @ (op.G @ f) - cs.rhs(f, fs)
    w = np.tile(grid.yt_weights, grid.nX)[E]
    D = op.D[E][:, E].toarray()
    return 0.5 * float(r @ (w * np.linalg.solve(D, r)))


def test_J_vanishes_at_solution():
    g, gd, gs, u = random_problem(CHECKER, BOX1, (9, 9, 9))
    scale = evaluate_J(gd, gs, CHECKER, g)
    assert scale > 1e-3
    assert evaluate_J(u, gs, CHECKER, g) <= 1e-10 * scale
    assert evaluate_J(u, gs, CHECKER, g, method="cg") <= 1e-10 * scale


@pytest.mark.parametrize("A,dom,res", [(CHECKER, BOX1, (7, 6, 5)), (rotated_field(2, 0.5, 3.0, 1.0), BOX2, (4, 4, 3, 3, 3))])
def test_J_routes_agree(A, dom, res):
    g = build_grid(dom, res)
    rng = np.random.default_rng(5)
    f, fs = rng.normal(size=(2, g.size))
    ref = dense_J(f, fs, A, g)
    assert evaluate_J(f, fs, A, g) == pytest.approx(ref, rel=1e-9)
    assert evaluate_J(f, fs, A, g, method="cg") == pytest.approx(ref, rel=1e-8)


def test_constant_f_has_zero_minimiser():
    g = build_grid(BOX1, (7, 7, 7))
    J, j = evaluate_J(DiscreteField.constant(g, 3.0), 0.0, constant_field(np.eye(1)), g, return_j=True)
    assert J <= 1e-25 and np.max(np.abs(j)) <= 1e-12


def test_inner_minimiser_satisfies_constraints():
    g = build_grid(BOX1, (8, 7, 6))
    A = periodic_field(1, 0.5)
    rng = np.random.default_rng(1)
    f, fs = rng.normal(size=(2, g.size))
    cs = constraint_system(A, g)
    for method in ("kkt", "cg"):
        J, j = evaluate_J(f, fs, A, g, method=method, return_j=True, cs=cs)
        res = cs.residual(j, f, fs)
        assert np.linalg.norm(res) <= 1e-10 * max(1.0, np.linalg.norm(cs.rhs(f, fs)))
        assert J == pytest.approx(objective(cs, f, j), rel=1e-14)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000))
def test_J_nonnegative(seed):
    g = build_grid(BOX1, (5, 5, 5))
    rng = np.random.default_rng(seed)
    assert evaluate_J(rng.normal(size=g.size), rng.normal(size=g.size), CHECKER, g) >= 0.0


def test_quadratic_growth():
    g, gd, gs, u = random_problem(CHECKER, BOX1, (9, 9, 9))
    p, deltas, vals = quadratic_growth_exponent(u, gs, CHECKER)
    assert deltas[-1] / deltas[0] >= 1e3
    assert abs(p - 2.0) <= 0.05


@pytest.mark.parametrize("A,dom,res", [
    (CHECKER, BOX1, (9, 9, 9)),
    (periodic_field(1, 0.6, 0.5), BOX1, (12, 10, 8)),
    (rotated_field(2, 0.6, 3.0, 1.0), BOX2, (5, 5, 4, 4, 4)),
])
def test_minimize_joint_matches_direct(A, dom, res):
    g, gd, gs, u = random_problem(A, dom, res, seed=3)
    mp = minimize_joint(gd, gs, A, g)
    rel = np.linalg.norm(mp.f.flat - u.flat) / np.linalg.norm(u.flat)
    assert rel <= 1e-8
    assert mp.gradient_mismatch <= 1e-8
    assert mp.constraint_residual <= 1e-10
    assert mp.objective >= 0.0


def test_minimize_joint_zero_data():
    g = build_grid(BOX1, (6, 6, 6))
    mp = minimize_joint(0.0, 0.0, CHECKER, g)
    assert np.all(mp.f.flat == 0) and np.max(np.abs(mp.j)) == 0 and mp.objective == 0


def test_null_minimum_equivalence():
    g, gd, gs, u = random_problem(CHECKER, BOX1, (9, 9, 9), seed=7)
    scale = evaluate_J(gd, gs, CHECKER, g)
    assert evaluate_J(u, gs, CHECKER, g) <= 1e-8 * scale
    assert weak_residual(u, CHECKER, gd, gs, g) <= 1e-6
    v = u.flat.copy()
    v[g.equation_nodes[10]] += 1e-2
    assert evaluate_J(v, gs, CHECKER, g) > 1e-8 * scale
    assert weak_residual(v, CHECKER, gd, gs, g) > 1e-6


def test_convexity_certificate():
    g = build_grid(BOX1, (7, 7, 7))
    rep = convexity_certificate(g, CHECKER, trials=100, seed=2)
    assert rep.min_coercivity_ratio > 0 and np.all(rep.ratios > 0)
    assert rep.parallelogram_defect <= 1e-10
    assert rep.scaling_defect <= 1e-12


def test_energy_ratio_properties():
    g = build_grid(BOX1, (9, 9, 9))
    one = DiscreteField.constant(g, 1.0)
    assert energy_estimate_ratio(one, one, 0.0, g) == 0.0
    g2, gd, gs, u = random_problem(CHECKER, BOX1, (9, 9, 9))
    r1 = energy_estimate_ratio(u, gd, gs, g2)
    u2, _ = solve_direct(assemble(CHECKER, g2, 2 * gs.flat, 2 * gd.flat), norms=False)
    r2 = energy_estimate_ratio(u2, gd.with_values(2 * gd.flat), gs.with_values(2 * gs.flat), g2)
    assert r2 == pytest.approx(r1, rel=1e-10)


def test_energy_ratio_stable_under_refinement():
    # extend the kernel data by Gamma (1 + bump) with a bump vanishing on every face, so
    # u - g tends to a fixed nonzero field instead of the discretisation error
    A = constant_field(np.eye(1))
    ratios = []
    for n in (9, 17, 33):
        g = build_grid(BOX1, (n, n, n))
        X, Y, t = g.coordinates()
        bump = 4 * (1 - X[:, 0] ** 2) * (1 - Y[:, 0] ** 2) * t * (1 - t)
        gd = kernel_boundary_data(g, Point([0.0], [0.0], -1.0))
        ext = gd.with_values(gd.flat * (1 + bump))
        u, rep = solve_direct(assemble(A, g, 0.0, ext))
        ratios.append(rep.energy_ratio)
    assert min(ratios) > 0 and max(ratios) / min(ratios) <= 2.0


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000))
def test_transport_energy_identity(seed):
    g = build_grid(BOX1, (6, 7, 5))
    rng = np.random.default_rng(seed)
    f = np.where(g.kolmogorov_mask, 0.0, rng.normal(size=g.size))
    out = transport_energy_identity(DiscreteField(g, f))
    assert out["boundary"] <= 0.0 and out["dissipation"] >= 0.0
    assert abs(out["defect"]) <= 1e-12 * max(1.0, abs(out["volume"]))
    assert out["volume"] <= 0.0


def test_transport_identity_rejects_data():
    g = build_grid(BOX1, (5, 5, 5))
    with pytest.raises(ValueError):
        transport_energy_identity(DiscreteField.constant(g, 1.0))
