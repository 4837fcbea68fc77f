import numpy as np
import pytest

from pace.errors import NumericalError, ShapeError
from pace.numerics import linalg


def test_matmul_matches_triple_loop():
    gen = np.random.default_rng(0)
    for _ in range(5):
        a = gen.normal(size=(6, 4))
        b = gen.normal(size=(4, 3))
        slow = np.zeros((6, 3))
        for i in range(6):
            for j in range(3):
                for k in range(4):
                    slow[i, j] += a[i, k] * b[k, j]
        assert np.max(np.abs(linalg.matmul(a, b) - slow)) <= 1e-12


def test_matmul_rejects_inner_mismatch():
    with pytest.raises(ShapeError):
        linalg.matmul(np.ones((2, 3)), np.ones((4, 2)))


def test_sym_eig_reconstructs_and_descends():
    gen = np.random.default_rng(1)
    for _ in range(5):
        m = gen.normal(size=(8, 8))
        m = m @ m.T
        vals, vecs = linalg.sym_eig(m)
        assert np.all(np.diff(vals) <= 1e-12)
        assert np.max(np.abs(vecs @ np.diag(vals) @ vecs.T - m)) <= 1e-9
        assert np.max(np.abs(vecs.T @ vecs - np.eye(8))) <= 1e-9


def test_sym_eig_rejects_asymmetric():
    m = np.array([[1.0, 2.0], [0.0, 1.0]])
    with pytest.raises(ShapeError):
        linalg.sym_eig(m)


def test_sym_eig_rejects_nonsquare():
    with pytest.raises(ShapeError):
        linalg.sym_eig(np.ones((3, 4)))


def test_solve_spd_matches_dense_solve():
    gen = np.random.default_rng(2)
    a = gen.normal(size=(6, 6))
    spd = a @ a.T + 6 * np.eye(6)
    b = gen.normal(size=(6, 2))
    x = linalg.solve_spd(spd, b)
    assert np.max(np.abs(spd @ x - b)) <= 1e-9


def test_solve_spd_rejects_indefinite():
    with pytest.raises(NumericalError):
        linalg.solve_spd(np.diag([1.0, -1.0]), np.ones((2, 1)))


def test_ensure_matrix_rejects_other_ranks():
    assert linalg.ensure_matrix([[1.0, 2.0]]).shape == (1, 2)
    with pytest.raises(ShapeError):
        linalg.ensure_matrix(np.ones(3))
    with pytest.raises(ShapeError):
        linalg.ensure_matrix(np.ones((2, 2, 2)))
