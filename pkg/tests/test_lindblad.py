import unittest

import numpy as np

from qms_deco.catalog import build_deco, build_diagonal_gamma
from qms_deco.dfstructure import decompose
from qms_deco.exceptions import NoFaithfulStateError, RejectedInputError, UnsupportedStructureError
from qms_deco.lindblad import (
    Lindbladian,
    Picture,
    adjoint_wrt,
    apply_generator,
    apply_predual,
    check_doubly_stochastic,
    dbc_jump_decomposition,
    derivation_residual,
    hamiltonian_residual,
    invariant_states,
    reconstruct_from_derivations,
    semigroup,
    to_superoperator,
)
from qms_deco.matops import DensityMatrix, InnerKind, WeightedInner, random_density, random_hermitian


def thermal_qubit(hamiltonian=False):
    lower = np.array([[0.0, 1.0], [0.0, 0.0]])
    ham = np.diag([0.5, -0.5]) if hamiltonian else np.zeros((2, 2))
    return Lindbladian(ham, (np.sqrt(0.6) * lower, np.sqrt(0.4) * lower.T))


class TestLindblad(unittest.TestCase):
    def setUp(self):
        super().setUp()
        self.rng = np.random.default_rng(3)
        self.gen = Lindbladian(
            random_hermitian(3, self.rng),
            tuple(self.rng.normal(size=(3, 3)) + 1j * self.rng.normal(size=(3, 3)) for _ in range(2)),
        )

    def test_superoperator_matches_action(self):
        x = self.rng.normal(size=(3, 3)) + 1j * self.rng.normal(size=(3, 3))
        heis = to_superoperator(self.gen, Picture.HEISENBERG)
        schro = to_superoperator(self.gen, Picture.SCHRODINGER)
        self.assertTrue(np.allclose(heis.apply(x), apply_generator(self.gen, x)))
        self.assertTrue(np.allclose(schro.apply(x), apply_predual(self.gen, x)))
        self.assertTrue(np.allclose(heis.dual().mat, schro.mat))
        self.assertIs(heis.dual().picture, Picture.SCHRODINGER)

    def test_duality_and_unitality(self):
        rho = random_density(3, self.rng)
        x = random_hermitian(3, self.rng)
        lhs = np.trace(apply_predual(self.gen, rho) @ x)
        rhs = np.trace(rho @ apply_generator(self.gen, x))
        self.assertAlmostEqual(lhs, rhs)
        self.assertTrue(np.allclose(apply_generator(self.gen, np.eye(3)), 0.0))

    def test_semigroup(self):
        rho = random_density(3, self.rng)
        evolved = semigroup(self.gen, 0.7, Picture.SCHRODINGER).apply(rho)
        self.assertAlmostEqual(np.trace(evolved).real, 1.0)
        self.assertGreaterEqual(np.linalg.eigvalsh(0.5 * (evolved + evolved.conj().T))[0], -1e-12)
        self.assertTrue(np.allclose(semigroup(self.gen, 0.0).mat, np.eye(9)))
        with self.assertRaisesRegex(RejectedInputError, "non-negative"):
            semigroup(self.gen, -1.0)

    def test_adjoint_wrt(self):
        heis = to_superoperator(self.gen)
        sigma = DensityMatrix.maximally_mixed(3)
        hs = adjoint_wrt(heis, WeightedInner(sigma, InnerKind.HS))
        self.assertTrue(np.allclose(hs.mat, heis.mat.conj().T))

    def test_invariant_state(self):
        states = invariant_states(thermal_qubit(hamiltonian=True))
        self.assertTrue(np.allclose(states.state.mat, np.diag([0.6, 0.4])))
        self.assertEqual(len(states.kernel), 1)

    def test_no_faithful_state(self):
        damping = Lindbladian(np.zeros((2, 2)), (np.array([[0.0, 1.0], [0.0, 0.0]]),))
        with self.assertRaises(NoFaithfulStateError) as err:
            invariant_states(damping)
        self.assertTrue(np.allclose(err.exception.best_state.mat, np.diag([1.0, 0.0])))

    def test_doubly_stochastic(self):
        self.assertTrue(check_doubly_stochastic(build_deco(3, 1.0)))
        self.assertFalse(check_doubly_stochastic(thermal_qubit()))

    def test_invalid_generator(self):
        with self.assertRaisesRegex(RejectedInputError, "jump of shape"):
            Lindbladian(np.zeros((2, 2)), (np.zeros((3, 3)),))
        with self.assertRaisesRegex(RejectedInputError, "positive"):
            thermal_qubit().scaled(0.0)
        with self.assertRaisesRegex(RejectedInputError, "operand"):
            apply_generator(thermal_qubit(), np.eye(3))

    def test_derivation_form(self):
        ctx = decompose(thermal_qubit()).ctx
        self.assertTrue(ctx.dbc)
        self.assertTrue(ctx.reversible)
        jumps = dbc_jump_decomposition(ctx)
        self.assertEqual(sorted(round(jump.omega, 9) for jump in jumps), [-0.405465108, 0.405465108])
        self.assertLess(derivation_residual(ctx, jumps), 1e-8)
        rebuilt = to_superoperator(reconstruct_from_derivations(jumps, ctx.dim))
        _ham, residual = hamiltonian_residual(ctx.heisenberg.mat - rebuilt.mat)
        self.assertLess(residual, 1e-8)

    def test_hamiltonian_breaks_detailed_balance(self):
        ctx = decompose(thermal_qubit(hamiltonian=True)).ctx
        self.assertFalse(ctx.dbc)
        with self.assertRaises(UnsupportedStructureError):
            dbc_jump_decomposition(ctx)

    def test_hamiltonian_residual(self):
        ham = random_hermitian(3, self.rng)
        fitted, residual = hamiltonian_residual(to_superoperator(Lindbladian(ham)).mat)
        self.assertLess(residual, 1e-10)
        # fitted up to a multiple of the identity
        shift = np.trace(fitted - ham).real / 3
        self.assertTrue(np.allclose(fitted - shift * np.eye(3), ham))
        dephasing = build_diagonal_gamma(np.eye(2) - np.ones((2, 2)))
        _fitted, residual = hamiltonian_residual(to_superoperator(dephasing).mat)
        self.assertGreater(residual, 1e-3)
