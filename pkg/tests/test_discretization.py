import numpy as np
import pytest

from kfp.coefficients import checkerboard_field, constant_field, periodic_field, rotated_field
from kfp.discretization import (ConvergenceError, DiscreteField, assemble, build_grid, read_field_binary,
                                solve_direct, transport_matrix, weak_residual, write_field_binary,
                                write_field_csv)
from kfp.geometry import Point, ProductDomain

BOX1 = ProductDomain([[-1, 1]], [[-1, 1], [0, 1]])
BOX2 = ProductDomain([[-1, 1]] * 2, [[-1, 1]] * 2 + [[0, 1]])
I1 = constant_field(np.eye(1))


def test_grid_counts_and_initial_layer():
    unit = ProductDomain([[0, 1]], [[0, 1], [0, 1]])
    g = build_grid(unit, (4, 4, 4))
    assert g.size == 64
    X, Y, t = g.coordinates()
    assert np.all(g.kolmogorov_mask[t == 0])


def test_grid_sign_rule_on_y_face():
    g = build_grid(BOX1, (6, 5, 5))
    X, Y, t = g.coordinates()
    on = (Y[:, 0] == 1.0) & (t > 0) & (t < 1) & (np.abs(X[:, 0]) < 1)
    assert np.all(g.kolmogorov_mask[on & (X[:, 0] > 0)])
    assert not np.any(g.kolmogorov_mask[on & (X[:, 0] < 0)])


@pytest.mark.parametrize("dom,res", [(BOX1, (5, 6, 7)), (BOX2, (4, 5, 3, 4, 5))])
def test_masks_partition(dom, res):
    g = build_grid(dom, res)
    total = g.kolmogorov_mask.astype(int) + g.free_mask + g.interior_mask
    assert np.all(total == 1)
    assert not np.any(g.kolmogorov_mask[g.time_index() == g.nt - 1] & g.interior_mask[g.time_index() == g.nt - 1])


def test_grid_rejects_degenerate():
    with pytest.raises(ValueError):
        build_grid(BOX1, (4, 4, 2))
    with pytest.raises(ValueError):
        build_grid(BOX1, (4, 4))


def test_discrete_field_is_immutable_and_checked():
    g = build_grid(BOX1, (4, 4, 4))
    f = DiscreteField.constant(g, 2.0)
    with pytest.raises(ValueError):
        f.values[0, 0, 0] = 1.0
    with pytest.raises(ValueError):
        DiscreteField(g, np.zeros(10))
    with pytest.raises(ValueError):
        DiscreteField(g, np.full(g.size, np.inf))


@pytest.mark.parametrize("A", [I1, checkerboard_field(1, 4.0), periodic_field(1, 0.6, 0.5)])
def test_constant_data_reproduced(A):
    g = build_grid(BOX1, (9, 9, 9))
    op = assemble(A, g, 0.0, 1.0)
    u, rep = solve_direct(op)
    assert np.max(np.abs(u.flat - 1.0)) <= 1e-12
    assert rep.algebraic_residual <= 1e-12
    assert weak_residual(u, A, 1.0, 0.0, g) <= 1e-12


def test_pure_transport_one_step():
    g = build_grid(BOX1, (6, 9, 5))
    X, Y, t = g.coordinates()
    exact = Y[:, 0] + X[:, 0] * t
    op = assemble(None, g, 0.0, exact, diffusion=False)
    u, _ = solve_direct(op, norms=False)
    dt = g.t_axis[1] - g.t_axis[0]
    layer = g.time_index() == 1
    np.testing.assert_allclose(u.flat[layer], (Y[:, 0] + X[:, 0] * dt)[layer], atol=1e-12)


def test_diffusion_block_symmetric():
    g = build_grid(BOX2, (4, 4, 3, 3, 3))
    op = assemble(rotated_field(2, 0.5, 4.0, 1.0), g)
    assert abs(op.D - op.D.T).max() == 0.0
    # negative semidefinite in the operator sign convention: -D <= 0
    ev = np.linalg.eigvalsh(op.D.toarray())
    assert ev.min() >= -1e-10


def test_upwind_reaches_toward_inflow_face():
    g = build_grid(BOX1, (6, 7, 4))
    T = transport_matrix(g).tocsr()
    X, Y, t = g.coordinates()
    E = g.equation_nodes
    sy = g.nt
    for k in E:
        cols = set(T.indices[T.indptr[k]:T.indptr[k + 1]]) - {k, k - 1}
        (c,) = cols
        assert (c - k == sy) == (X[k, 0] > 0)


@pytest.mark.parametrize("A", [I1, constant_field([[2.5]])])
def test_affine_data_reproduced(A):
    g = build_grid(BOX1, (8, 9, 9))
    X, Y, t = g.coordinates()
    u0 = 0.5 + 0.3 * X[:, 0] - 0.7 * (Y[:, 0] + t * X[:, 0])
    u, _ = solve_direct(assemble(A, g, 0.0, u0))
    assert np.max(np.abs(u.flat - u0)) <= 1e-10


def test_affine_y_data_constant_anisotropic_m2():
    A = rotated_field(2, 0.8, 3.0, 0.5)
    g = build_grid(BOX2, (4, 5, 5, 5, 5))
    X, Y, t = g.coordinates()
    b = np.array([0.4, -0.9])
    u0 = 1.0 + X @ np.array([0.2, 0.1]) + (Y + t[:, None] * X) @ b
    u, _ = solve_direct(assemble(A, g, 0.0, u0))
    assert np.max(np.abs(u.flat - u0)) <= 1e-10


@pytest.mark.parametrize("A,dom,res", [
    (checkerboard_field(1, 4.0), BOX1, (6, 7, 6)),
    (rotated_field(2, 0.6, 3.0, 1.0), BOX2, (4, 4, 3, 3, 4)),
])
def test_march_matches_monolithic(A, dom, res):
    g = build_grid(dom, res)
    rng = np.random.default_rng(0)
    op = assemble(A, g, rng.normal(size=g.size), rng.uniform(size=g.size))
    assert op.E.size <= 500
    u1, _ = solve_direct(op, method="march", norms=False)
    u2, _ = solve_direct(op, method="monolithic", norms=False)
    u3, _ = solve_direct(op, method="march", solver="gmres", tol=1e-13, norms=False)
    assert np.max(np.abs(u1.flat - u2.flat)) <= 1e-10
    assert np.max(np.abs(u1.flat - u3.flat)) <= 1e-10


def test_gmres_failure_reports_history():
    g = build_grid(BOX1, (10, 10, 4))
    op = assemble(checkerboard_field(1, 9.0), g, 1.0, np.random.default_rng(1).normal(size=g.size))
    with pytest.raises(ConvergenceError) as info:
        solve_direct(op, solver="gmres", tol=1e-30, maxiter=1, norms=False)
    assert info.value.history


def test_weak_residual_of_solution_and_perturbation():
    jumps = []
    for n in (9, 17):
        g = build_grid(BOX1, (n, n, n))
        A = checkerboard_field(1, 4.0)
        gd = np.random.default_rng(2).uniform(size=g.size)
        u, rep = solve_direct(assemble(A, g, 0.0, gd))
        assert weak_residual(u, A, gd, 0.0, g) <= 1e-8
        assert rep.weak_residual <= 1e-8
        k = g.nearest_index(Point([0.5], [0.0], 0.5))
        v = u.flat.copy()
        v[k] += 1.0
        jumps.append(weak_residual(v, A, gd, 0.0, g))
    # the diffusion part 2a/h^2 dominates the jump: halving h multiplies it by nearly 4
    assert 3.0 < jumps[1] / jumps[0] < 4.5


def test_solve_report_norms():
    g = build_grid(BOX1, (9, 9, 9))
    X, Y, t = g.coordinates()
    u, rep = solve_direct(assemble(I1, g, 0.0, np.exp(-X[:, 0] ** 2) * (1 + t)))
    assert np.isfinite(rep.w_norm) and rep.w_norm > 0
    assert np.isfinite(rep.energy_ratio) and rep.energy_ratio > 0
    d = rep.as_dict()
    assert set(d) >= {"algebraic_residual", "weak_residual", "iterations", "w_norm", "energy_ratio"}


def test_field_io_round_trip(tmp_path):
    g = build_grid(BOX2, (3, 4, 3, 3, 5))
    f = DiscreteField(g, np.random.default_rng(0).normal(size=g.size))
    write_field_binary(f, tmp_path / "f.bin")
    np.testing.assert_array_equal(read_field_binary(tmp_path / "f.bin"), f.values)
    raw = (tmp_path / "f.bin").read_bytes()
    assert raw[:4] == b"KFPF" and len(raw) == 8 + 4 * 5 + 8 * g.size
    write_field_csv(f, tmp_path / "f.csv")
    data = np.loadtxt(tmp_path / "f.csv", delimiter=",", skiprows=1)
    np.testing.assert_array_equal(data[:, -1], f.flat)
    X, Y, t = g.coordinates()
    np.testing.assert_array_equal(data[:, :2], X)
    with pytest.raises(ValueError):
        (tmp_path / "bad.bin").write_bytes(b"NOPE")
        read_field_binary(tmp_path / "bad.bin")


def test_assemble_rejects_dimension_mismatch():
    g = build_grid(BOX1, (4, 4, 4))
    with pytest.raises(ValueError):
        assemble(rotated_field(2, 0.1, 2.0, 1.0), g)
    with pytest.raises(ValueError):
        assemble(None, g)
