import unittest

import numpy as np
import scipy.linalg

from qms_deco.exceptions import DomainError, RejectedInputError
from qms_deco.matops import (
    LOG,
    SQRT,
    DensityMatrix,
    InnerKind,
    WeightedInner,
    check_hermitian,
    choi_matrix,
    divided_difference_rep,
    hermitian_basis,
    hermitian_from_params,
    kraus_from_choi,
    matfunc,
    params_from_hermitian,
    partial_trace,
    power,
    random_density,
    random_hermitian,
    random_positive,
    random_unitary,
    resolve_function,
    theta_map,
    trace_norm,
    unvec,
    vec,
)


class TestMatops(unittest.TestCase):
    def setUp(self):
        super().setUp()
        self.rng = np.random.default_rng(7)

    def test_vec_convention(self):
        a, x, b = (self.rng.normal(size=(3, 3)) for _ in range(3))
        self.assertTrue(np.allclose(vec(a @ x @ b), np.kron(b.T, a) @ vec(x)))
        self.assertTrue(np.allclose(unvec(vec(x)), x))
        with self.assertRaises(RejectedInputError):
            unvec(np.zeros(5))

    def test_check_hermitian(self):
        with self.assertRaisesRegex(RejectedInputError, "not Hermitian"):
            check_hermitian([[0, 1], [0, 0]])
        with self.assertRaisesRegex(RejectedInputError, "square"):
            check_hermitian(np.zeros((2, 3)))

    def test_matfunc(self):
        x = random_positive(3, self.rng)
        self.assertTrue(np.allclose(matfunc(x, SQRT) @ matfunc(x, SQRT), x))
        self.assertTrue(np.allclose(scipy.linalg.expm(matfunc(x, "log")), x))
        self.assertTrue(np.allclose(matfunc(x, power(-1)), np.linalg.inv(x)))
        with self.assertRaises(DomainError) as err:
            matfunc(np.diag([1.0, -0.5]), LOG)
        self.assertAlmostEqual(err.exception.eigenvalue, -0.5)
        with self.assertRaisesRegex(RejectedInputError, "Unknown scalar function"):
            resolve_function("cosh")

    def test_chain_rule(self):
        x = random_positive(3, self.rng)
        y = random_positive(3, self.rng)
        v = self.rng.normal(size=(3, 3)) + 1j * self.rng.normal(size=(3, 3))
        for fn in (power(2), power(3), SQRT, LOG):
            lhs = divided_difference_rep(x, y, fn, v @ y - x @ v)
            rhs = v @ matfunc(y, fn) - matfunc(x, fn) @ v
            self.assertTrue(np.allclose(lhs, rhs, atol=1e-9), fn.name)

    def test_theta_map_is_log_derivative(self):
        sigma = random_density(3, self.rng)
        direction = random_hermitian(3, self.rng)
        step = 1e-6
        numeric = (matfunc(sigma + step * direction, LOG) - matfunc(sigma - step * direction, LOG)) / (2 * step)
        self.assertTrue(np.allclose(theta_map(sigma, direction), numeric, atol=1e-6))
        with self.assertRaises(DomainError):
            theta_map(np.diag([1.0, 0.0]), direction[:2, :2])

    def test_density_matrix(self):
        rho = DensityMatrix.from_matrix(np.diag([0.75, 0.25]))
        self.assertTrue(rho.faithful)
        self.assertAlmostEqual(rho.min_eigenvalue, 0.25)
        self.assertTrue(np.allclose(rho.inv_sqrt, np.diag([2 / np.sqrt(3), 2.0])))
        pure = DensityMatrix.from_matrix(np.diag([1.0, 0.0]))
        self.assertFalse(pure.faithful)
        self.assertTrue(np.allclose(DensityMatrix.from_matrix(np.diag([3.0, 1.0]), normalize=True).mat, rho.mat))
        with self.assertRaisesRegex(RejectedInputError, "trace"):
            DensityMatrix.from_matrix(np.diag([0.5, 0.25]))
        with self.assertRaisesRegex(RejectedInputError, "positive semidefinite"):
            DensityMatrix.from_matrix(np.diag([1.5, -0.5]))

    def test_weighted_inner_gram(self):
        sigma = DensityMatrix.from_matrix(random_density(3, self.rng))
        x = self.rng.normal(size=(3, 3)) + 1j * self.rng.normal(size=(3, 3))
        y = self.rng.normal(size=(3, 3)) + 1j * self.rng.normal(size=(3, 3))
        for kind in InnerKind:
            inner = WeightedInner(sigma, kind)
            gram = inner.gram()
            self.assertAlmostEqual(inner(x, y), vec(x).conj() @ gram @ vec(y), msg=kind.value)
            self.assertTrue(np.allclose(inner.gram_inverse() @ gram, np.eye(9)), kind.value)
            self.assertGreater(inner.norm_squared(x), 0.0)

    def test_choi_and_kraus(self):
        unitary = random_unitary(2, self.rng)
        superop = np.kron(unitary.conj(), unitary)
        choi = choi_matrix(superop)
        self.assertTrue(np.allclose(choi, np.outer(vec(unitary), vec(unitary).conj())))
        (kraus,) = kraus_from_choi(choi)
        rho = random_density(2, self.rng)
        self.assertTrue(np.allclose(kraus @ rho @ kraus.conj().T, unitary @ rho @ unitary.conj().T))
        with self.assertRaisesRegex(RejectedInputError, "completely positive"):
            kraus_from_choi(-choi)

    def test_partial_trace(self):
        rho_a = random_density(2, self.rng)
        rho_b = random_density(3, self.rng)
        joint = np.kron(rho_a, rho_b)
        self.assertTrue(np.allclose(partial_trace(joint, (2, 3), 0), rho_a))
        self.assertTrue(np.allclose(partial_trace(joint, (2, 3), 1), rho_b))
        with self.assertRaises(RejectedInputError):
            partial_trace(joint, (2, 3), 2)

    def test_trace_norm(self):
        self.assertAlmostEqual(trace_norm(np.diag([0.5, -0.25])), 0.75)
        self.assertAlmostEqual(trace_norm(np.array([[0, 0.3], [0.3, 0]])), 0.6)

    def test_hermitian_params(self):
        mat = random_hermitian(4, self.rng)
        self.assertTrue(np.allclose(hermitian_from_params(params_from_hermitian(mat), 4), mat))
        basis = hermitian_basis(3)
        self.assertEqual(len(basis), 9)
        gram = np.array([[np.vdot(a, b) for b in basis] for a in basis])
        self.assertTrue(np.allclose(gram, np.eye(9)))
