import math
import unittest
from dataclasses import replace

import numpy as np

from qms_deco.catalog import build_bipartite, build_deco, build_depolarizing, build_generic_conditional, build_random
from qms_deco.dfstructure import BlockStructure, decompose
from qms_deco.exceptions import DomainError, RejectedInputError
from qms_deco.functionals import (
    Functionals,
    chi2_divergence,
    draw_samples,
    mutual_information,
    relative_entropy,
    richardson,
    von_neumann_entropy,
)
from qms_deco.lindblad import Picture, semigroup
from qms_deco.matops import POLICY, random_density, random_positive, random_unitary, trace_norm

PAULI_X = np.array([[0.0, 1.0], [1.0, 0.0]])
PAULI_Z = np.diag([1.0, -1.0])


def functionals_of(gen):
    return Functionals.from_decomposition(decompose(gen))


class TestFunctionals(unittest.TestCase):
    def setUp(self):
        super().setUp()
        self.rng = np.random.default_rng(13)
        self.deco = functionals_of(build_deco(2, 1.0))

    def test_entropies(self):
        self.assertAlmostEqual(relative_entropy(np.diag([0.8, 0.2]), np.eye(2) / 2), 0.19274, places=5)
        self.assertAlmostEqual(von_neumann_entropy(np.eye(4) / 4), math.log(4))
        self.assertAlmostEqual(von_neumann_entropy(np.diag([1.0, 0.0])), 0.0)
        self.assertAlmostEqual(chi2_divergence(np.diag([0.8, 0.2]), np.eye(2) / 2), 0.36)

    def test_deco_functionals(self):
        rho = np.array([[0.5, 0.3], [0.3, 0.5]])
        self.assertTrue(np.allclose(self.deco.state_n(rho), np.eye(2) / 2))
        self.assertAlmostEqual(self.deco.entropy_production(rho), 0.3 * math.log(4), places=10)
        self.assertAlmostEqual(self.deco.df_entropy(rho), 0.19274, places=5)
        self.assertAlmostEqual(self.deco.df_entropy(np.diag([0.8, 0.2])), 0.0)
        self.assertAlmostEqual(self.deco.relative_entropy_to_reference(np.diag([0.8, 0.2])), 0.19274, places=5)
        self.assertAlmostEqual(self.deco.df_variance(PAULI_X), 1.0)
        self.assertAlmostEqual(self.deco.df_variance(PAULI_Z), 0.0)
        self.assertAlmostEqual(self.deco.variance_sigma(PAULI_Z), 1.0)
        self.assertAlmostEqual(self.deco.dirichlet(PAULI_X), 1.0)
        self.assertAlmostEqual(self.deco.dirichlet(PAULI_Z), 0.0)

    def test_entropy_production_closed_form(self):
        unitary = random_unitary(4, self.rng)
        mixed = BlockStructure.from_taus([np.array([[1.0]]), np.diag([0.7, 0.3])], dim_h=[2, 1], basis=unitary)
        cases = [(build_deco(dim, gamma), gamma) for dim, gamma in ((2, 1.0), (3, 0.5), (4, 3.0))]
        cases.append((build_generic_conditional(mixed, 1.5), 1.5))
        cases.append((build_generic_conditional(BlockStructure.from_taus([np.diag([0.6, 0.3, 0.1])]), 0.7), 0.7))
        for gen, gamma in cases:
            func = functionals_of(gen)
            for _ in range(25):
                rho = random_density(func.dim, self.rng)
                rho_n = func.state_n(rho)
                expected = gamma * (relative_entropy(rho, rho_n) + relative_entropy(rho_n, rho))
                value = func.entropy_production(rho)
                self.assertLessEqual(abs(value - expected), 1e-8 * max(1.0, abs(expected)), (func.dim, gamma))

    def test_p_dirichlet(self):
        func = functionals_of(build_random(3, 2, self.rng))
        x = random_positive(3, self.rng)
        self.assertAlmostEqual(func.p_dirichlet(x, 2), func.dirichlet(x))
        self.assertGreaterEqual(func.p_dirichlet(x, 1), -1e-12)
        self.assertGreaterEqual(func.p_dirichlet(x, 3), -1e-12)
        with self.assertRaisesRegex(RejectedInputError, "p >= 1"):
            func.p_dirichlet(x, 0.5)
        with self.assertRaises(DomainError):
            func.p_dirichlet(-x, 2)

    def test_entropy_production_is_relative_entropy_derivative(self):
        func = functionals_of(build_depolarizing(np.diag([0.7, 0.3]), 1.0))
        rho = random_density(2, self.rng)
        step = 1e-5
        flow = semigroup(func.ctx.schrodinger, step, Picture.SCHRODINGER)
        later = func.relative_entropy_to_reference(flow.apply(rho))
        derivative = (later - func.relative_entropy_to_reference(rho)) / step
        self.assertAlmostEqual(-derivative, func.entropy_production(rho), places=3)

    def test_mutual_information(self):
        rho_a = random_density(2, self.rng)
        rho_b = random_density(3, self.rng)
        self.assertAlmostEqual(mutual_information(np.kron(rho_a, rho_b), (2, 3)), 0.0)
        psi = np.array([1.0, 0.0, 0.0, 1.0]) / math.sqrt(2)
        bell = np.outer(psi, psi)
        self.assertAlmostEqual(mutual_information(bell, (2, 2)), 2 * math.log(2))
        rho = random_density(4, self.rng)
        self.assertAlmostEqual(mutual_information(rho, (2, 2)), mutual_information(rho, (2, 2), path="relative"))
        with self.assertRaisesRegex(RejectedInputError, "does not factor"):
            mutual_information(rho, (3, 2))

    def test_information_production(self):
        inner = build_depolarizing(np.diag([0.7, 0.3]), 1.0)
        func = functionals_of(build_bipartite(np.diag([1.0, -1.0]), inner))
        rho = random_density(4, self.rng)
        self.assertGreaterEqual(func.information_production(rho, (2, 2)), -1e-10)
        product = np.kron(random_density(2, self.rng), np.diag([0.7, 0.3]))
        self.assertAlmostEqual(func.information_production(product, (2, 2)), 0.0)

    def test_chi2_chain(self):
        func = functionals_of(build_deco(3, 1.0))
        rho = random_density(3, self.rng)
        distance = trace_norm(rho - func.state_n(rho)) ** 2
        variance = func.df_variance(func.density_image(rho))
        chi2 = chi2_divergence(rho, func.sigma)
        self.assertLessEqual(distance, variance + 1e-12)
        self.assertLessEqual(variance, chi2 + 1e-12)
        self.assertLessEqual(chi2, 1.0 / func.sigma_min)
        self.assertLessEqual(distance, 2 * func.df_entropy(rho) + 1e-12)

    def test_regularity_reports(self):
        samples = draw_samples(2, self.rng, 4)
        self.assertEqual(len(samples.states), 4)
        self.assertEqual(len(samples.positive), 4)
        lp = self.deco.check_strong_lp_regularity(samples.positive, (1.5, 2, 3))
        self.assertTrue(lp.strong.passed, lp.strong.to_dict())
        self.assertEqual(len(lp.strong.margins), 12)
        l1 = self.deco.check_l1_regularity(samples.states, factor=4.0)
        self.assertTrue(l1.passed, l1.to_dict())
        self.assertEqual(l1.kind, "l1x4")
        epc = self.deco.check_entropy_production_condition(samples.states)
        self.assertTrue(epc.passed)
        self.assertEqual(epc.samples, 4)

    def test_perturbative_coefficients(self):
        func = functionals_of(build_deco(3, 1.0))
        base = func.state_n(random_density(3, self.rng))
        coeffs = func.perturbative_coefficients(base, np.ones((3, 3)))
        self.assertAlmostEqual(coeffs.entropy_limit, coeffs.entropy_form, delta=1e-4 * abs(coeffs.entropy_form))
        self.assertAlmostEqual(
            coeffs.production_limit, coeffs.production_form, delta=1e-4 * abs(coeffs.production_form)
        )
        self.assertGreater(coeffs.production_form, 0.0)

    def test_richardson(self):
        values = [2.0 + 3.0 * h + 5.0 * h * h for h in (0.1, 0.05, 0.025)]
        self.assertAlmostEqual(richardson(values), 2.0)

    def test_reference_state_required(self):
        ctx = decompose(build_deco(2, 1.0)).ctx
        with self.assertRaisesRegex(RejectedInputError, "reference state"):
            Functionals(ctx.__class__(ctx.gen, ctx.sigma_inv), None)

    def test_policy_reaches_report_tolerances(self):
        policy = replace(POLICY, regularity_slack=0.5, production=0.25)
        func = Functionals.from_decomposition(decompose(build_deco(2, 1.0)), policy)
        samples = draw_samples(2, self.rng, 3)
        self.assertEqual(func.check_l1_regularity(samples.states).threshold, -0.5)
        reports = func.check_strong_lp_regularity(samples.positive, (2.0,))
        self.assertEqual((reports.strong.threshold, reports.weak.threshold), (-0.5, -0.5))
        self.assertEqual(func.check_entropy_production_condition(samples.states).tolerance, 0.25)
        self.assertEqual(self.deco.check_l1_regularity(samples.states).threshold, -POLICY.regularity_slack)
