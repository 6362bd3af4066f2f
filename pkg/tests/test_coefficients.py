import numpy as np
import pytest

from kfp.coefficients import (EllipticMatrixField, bump_quadrature, checkerboard_field, constant_field,
                              field_from_config, mollify, periodic_field, rotated_field,
                              verify_ellipticity)
from kfp.geometry import Point


def test_identity_report():
    rep = verify_ellipticity(constant_field(np.eye(3)), samples=50)
    assert rep.min_eig == 1.0 and rep.max_eig == 1.0 and rep.symmetric_defect == 0.0 and rep.ok


def test_diagonal_with_declared_kappa():
    assert verify_ellipticity(constant_field(np.diag([2.0, 0.5]), kappa=2.0)).ok


def test_checkerboard_kappa_check():
    ok = verify_ellipticity(checkerboard_field(2, 2.0, kappa=2.0))
    assert ok.ok and ok.min_eig == pytest.approx(0.5) and ok.max_eig == pytest.approx(2.0)
    bad = verify_ellipticity(checkerboard_field(2, 2.0, kappa=1.5))
    assert not bad.ok and bad.witness is not None
    A = bad.witness
    ev = np.linalg.eigvalsh(checkerboard_field(2, 2.0)(A))
    assert ev.max() > 1.5 or ev.min() < 1 / 1.5


def test_builtin_families_are_elliptic():
    for A in (rotated_field(2, 0.7, 3.0, 0.5), checkerboard_field(3, 4.0, period=0.3),
              periodic_field(2, 0.6)):
        rep = verify_ellipticity(A, samples=500)
        assert rep.ok, A.name


def test_kappa_below_one_rejected():
    with pytest.raises(ValueError, match="ellipticity constant must be ≥ 1"):
        field_from_config({"family": "constant", "kappa": 0.5}, 1)
    with pytest.raises(ValueError):
        EllipticMatrixField(1, lambda X, Y, t: np.eye(1), 0.9)


def test_identity_outside_box():
    A = field_from_config({"family": "constant", "params": [3.0], "identity_outside": [[-1, 1]] * 3}, 1)
    assert not A.is_constant
    assert A(Point([0.0], [0.0], 0.0))[0, 0] == 3.0
    assert A(Point([2.0], [0.0], 0.0))[0, 0] == 1.0


def test_bump_quadrature_normalised_and_symmetric():
    s, w = bump_quadrature()
    assert w.sum() == pytest.approx(1.0, abs=1e-15)
    np.testing.assert_allclose(s, -s[::-1], atol=1e-15)
    np.testing.assert_allclose(w, w[::-1], atol=1e-15)


def test_mollify_constant_is_unchanged():
    M = np.array([[2.0, 0.3], [0.3, 1.0]])
    Ae = mollify(constant_field(M), 0.2)
    X = np.random.default_rng(0).normal(size=(10, 2))
    np.testing.assert_allclose(Ae.evaluate(X, X, np.zeros(10)), np.broadcast_to(M, (10, 2, 2)), atol=1e-14)


def test_mollified_step():
    A = checkerboard_field(1, 4.0)  # 4 for x > 0, 1/4 otherwise
    eps = 0.1
    Ae = mollify(A, eps, axes="X")
    X = np.array([[0.25], [-0.3], [0.0]])
    v = Ae.evaluate(X, np.zeros((3, 1)), np.zeros(3))[:, 0, 0]
    assert v[0] == pytest.approx(4.0, abs=1e-14)
    assert v[1] == pytest.approx(0.25, abs=1e-14)
    # symmetric kernel: half the mass on each side of the jump
    assert v[2] == pytest.approx(0.5 * (4.0 + 0.25), abs=1e-6)


def test_mollify_preserves_symmetry_and_bounds():
    for A in (rotated_field(2, 0.4, 5.0, 0.5), checkerboard_field(2, 3.0, period=0.25)):
        rep = verify_ellipticity(mollify(A, 0.1, axes="X"), samples=200, tol=1e-8)
        assert rep.symmetric_defect == 0.0 and rep.ok


def test_mollify_converges_at_continuity_points():
    A = periodic_field(1, 0.5, period=1.0)
    rng = np.random.default_rng(3)
    P = rng.uniform(-1, 1, (20, 3))
    exact = A.evaluate(P[:, :1], P[:, 1:2], P[:, 2])
    errs = []
    for eps in (0.2, 0.1, 0.05):
        Ae = mollify(A, eps)
        errs.append(np.max(np.abs(Ae.evaluate(P[:, :1], P[:, 1:2], P[:, 2]) - exact)))
    assert errs[0] / errs[1] >= 1.5 and errs[1] / errs[2] >= 1.5


def test_field_from_config_families():
    assert field_from_config(None, 2).is_constant
    assert field_from_config({"family": "rotated", "params": [0.3, 2.0, 1.0]}, 2).name == "rotated"
    assert field_from_config({"family": "checkerboard", "params": [4.0]}, 1).kappa == 4.0
    with pytest.raises(ValueError):
        field_from_config({"family": "spiral"}, 1)
    with pytest.raises(ValueError):
        field_from_config({"family": "constant", "params": [1, 2, 3]}, 2)
