import math
import unittest
from dataclasses import replace
from unittest import mock

import numpy as np

from qms_deco.catalog import build_bipartite, build_deco, build_depolarizing, build_diagonal_gamma
from qms_deco.constants import (
    Budget,
    chart_params,
    chart_state,
    deco_depolarizing_comparison,
    estimate_alpha,
    estimate_beta,
    mlsi_ratio,
    perturbative_directions,
    poincare_check,
    scale_covariance,
    spectral_gap,
)
from qms_deco.dfstructure import decompose
from qms_deco.exceptions import RejectedInputError, StructuralError
from qms_deco.functionals import Functionals, draw_samples
from qms_deco.matops import POLICY, random_density

COMPLEX_RATES = np.array([[0.0, -1.0 + 1.0j, -0.5], [-1.0 - 1.0j, 0.0, -0.5], [-0.5, -0.5, 0.0]])
SMALL = Budget(starts=2, iterations=60, perturbative_seeds=2)


def functionals_of(gen):
    return Functionals.from_decomposition(decompose(gen))


class TestConstants(unittest.TestCase):
    def setUp(self):
        super().setUp()
        self.rng = np.random.default_rng(17)

    def test_budget_validation(self):
        with self.assertRaises(RejectedInputError):
            Budget(threads=0)
        with self.assertRaises(RejectedInputError):
            Budget(iterations=0)

    def test_gap(self):
        for gamma in (0.5, 2.0):
            self.assertAlmostEqual(spectral_gap(functionals_of(build_deco(3, gamma))).gap, gamma)
        self.assertAlmostEqual(spectral_gap(functionals_of(build_depolarizing(np.diag([0.7, 0.3]), 1.0))).gap, 1.0)
        result = spectral_gap(functionals_of(build_diagonal_gamma(COMPLEX_RATES)))
        self.assertAlmostEqual(result.gap, 0.5)
        self.assertAlmostEqual(np.linalg.norm(result.eigvec), 1.0)
        with self.assertRaisesRegex(StructuralError, "Rayleigh quotient"):
            spectral_gap(functionals_of(build_deco(2, 1.0)), replace(POLICY, rayleigh=-1.0))

    def test_poincare(self):
        func = functionals_of(build_diagonal_gamma(COMPLEX_RATES))
        gap = spectral_gap(func).gap
        samples = draw_samples(3, self.rng, 8).observables
        self.assertGreaterEqual(poincare_check(func, samples), gap - 1e-9)
        self.assertTrue(math.isnan(poincare_check(func, [np.eye(3)])))

    def test_chart(self):
        rho = random_density(3, self.rng)
        state, spread = chart_state(chart_params(rho), 3)
        self.assertTrue(np.allclose(state, rho))
        self.assertGreater(spread, 0.0)

    def test_mlsi_ratio(self):
        func = functionals_of(build_deco(2, 1.0))
        self.assertIsNone(mlsi_ratio(func, np.diag([0.8, 0.2])))
        ratio = mlsi_ratio(func, np.array([[0.5, 0.3], [0.3, 0.5]]))
        divergence = math.log(2) + 0.8 * math.log(0.8) + 0.2 * math.log(0.2)
        self.assertAlmostEqual(ratio, 0.3 * math.log(4) / (2 * divergence))

    def test_perturbative_directions(self):
        func = functionals_of(build_deco(3, 1.0))
        values, directions = perturbative_directions(func, func.sigma.mat)
        # kernel of the dephasing conditional expectation: the 6 off-diagonal directions
        self.assertEqual(len(directions), 6)
        self.assertTrue(np.allclose(values, 1.0))

    def test_estimate_alpha(self):
        func = functionals_of(build_deco(2, 1.0))
        gap = spectral_gap(func).gap
        estimate = estimate_alpha(func, SMALL)
        self.assertGreater(estimate.alpha_upper, 0.0)
        self.assertLessEqual(estimate.alpha_upper, gap + 1e-6)
        self.assertLessEqual(estimate.alpha_upper, min(estimate.perturbative_ratios) + 1e-12)
        self.assertEqual(len(estimate.optimizer_trace), 1 + len(estimate.perturbative_ratios) + SMALL.starts)
        report = estimate.to_dict()
        self.assertEqual(report["alpha_upper"], estimate.alpha_upper)
        self.assertEqual(len(report["starts"]), len(estimate.optimizer_trace))

    def test_estimate_alpha_is_reproducible(self):
        func = functionals_of(build_depolarizing(np.diag([0.7, 0.3]), 1.0))
        first = estimate_alpha(func, SMALL)
        second = estimate_alpha(func, Budget(starts=2, iterations=60, perturbative_seeds=2, threads=2))
        self.assertEqual(first.alpha_upper, second.alpha_upper)

    def test_scale_covariance(self):
        gen = build_diagonal_gamma(COMPLEX_RATES)
        states = draw_samples(3, self.rng, 4).states
        defects = scale_covariance(functionals_of(gen), functionals_of(gen.scaled(2.0)), 2.0, states)
        self.assertEqual(len(defects), 4)
        self.assertLess(max(defects), 1e-8)

    def test_estimate_beta(self):
        inner = build_depolarizing(np.diag([0.7, 0.3]), 1.0)
        func = functionals_of(build_bipartite(np.diag([1.0, -1.0]), inner))
        estimate = estimate_beta(func, (2, 2), SMALL, inner_func=functionals_of(inner), alpha_upper=1.0)
        self.assertGreater(estimate.beta_upper, 0.0)
        self.assertIsNotNone(estimate.alpha_inner_upper)
        self.assertIsNotNone(estimate.consistent)
        self.assertEqual(len(estimate.to_dict()["starts"]), SMALL.starts)
        self.assertIsNone(estimate_beta(func, (2, 2), SMALL).consistent)

    def test_deco_depolarizing_comparison(self):
        comparison = deco_depolarizing_comparison(2, 1.0, SMALL)
        self.assertLessEqual(comparison.alpha_deco, comparison.deco_ratio_at_witness + 1e-12)
        self.assertEqual(comparison.alpha_deco, comparison.deco_estimate.alpha_upper)
        self.assertTrue(np.allclose(np.trace(comparison.rotated_witness), 1.0))

    def test_deco_ratios_stay_above_half_gamma(self):
        for dim, gamma in ((2, 1.0), (3, 0.5)):
            estimate = estimate_alpha(functionals_of(build_deco(dim, gamma)), SMALL)
            ratios = estimate.evaluations + estimate.perturbative_ratios
            self.assertTrue(ratios)
            self.assertGreaterEqual(min(ratios), gamma / 2.0 - 1e-9)

    def test_depolarizing_on_b_beta_ratios_stay_above_half_gamma(self):
        inner = build_depolarizing(np.diag([0.7, 0.3]), 1.0)
        estimate = estimate_beta(functionals_of(build_bipartite(np.diag([1.0, -1.0]), inner)), (2, 2), SMALL)
        ratios = [entry.ratio for entry in estimate.optimizer_trace if entry.state is not None]
        self.assertTrue(ratios)
        self.assertGreaterEqual(min(ratios), 0.5 - 1e-9)
        self.assertGreaterEqual(estimate.beta_upper, 0.5 - 1e-9)

    def test_comparison_without_depolarizing_witness(self):
        real_estimate = estimate_alpha
        calls = []

        def without_first_witness(func, budget, extra_seeds=()):
            estimate = real_estimate(func, budget, extra_seeds)
            calls.append(extra_seeds)
            if len(calls) == 1:
                return replace(estimate, witness=None, alpha_upper=float("nan"))
            return estimate

        with mock.patch("qms_deco.constants.estimate_alpha", side_effect=without_first_witness):
            with self.assertLogs("qms-deco", level="WARNING") as logs:
                comparison = deco_depolarizing_comparison(2, 1.0, SMALL)
        self.assertIn(
            "WARNING:qms-deco:Depolarizing estimate has no witness; skipping the Fourier comparison", logs.output
        )
        self.assertTrue(math.isnan(comparison.deco_ratio_at_witness))
        self.assertTrue(math.isnan(comparison.alpha_depolarizing))
        self.assertIsNone(comparison.rotated_witness)
        self.assertEqual(calls[1], ())
        self.assertGreater(comparison.alpha_deco, 0.0)
