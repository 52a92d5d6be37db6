import logging
import unittest

import numpy as np

from qms_deco import checks
from qms_deco.catalog import (
    Model,
    build_bipartite,
    build_deco,
    build_depolarizing,
    build_diagonal_gamma,
    build_generic_conditional,
)
from qms_deco.checks import CheckEnv, CheckResult, Status, raise_for_failures, run_suites
from qms_deco.constants import Budget
from qms_deco.dfstructure import decompose
from qms_deco.exceptions import StructuralError, ToleranceViolation

COMPLEX_RATES = np.array([[0.0, -1.0 + 1.0j, -0.5], [-1.0 - 1.0j, 0.0, -0.5], [-0.5, -0.5, 0.0]])
SMALL = Budget(starts=2, iterations=60, perturbative_seeds=2)


def by_name(results):
    return {result.name: result for result in results}


class TestChecks(unittest.TestCase):
    def test_status_levels(self):
        self.assertEqual(Status.PASSED.level, logging.INFO)
        self.assertEqual(Status.SKIPPED.level, logging.WARNING)
        self.assertEqual(Status.FAILED.level, logging.ERROR)

    def test_deco_lemmas_and_dbc(self):
        model = Model(build_deco(2, 1.0), "deco-2")
        with self.assertLogs("qms-deco", level="INFO") as logs:
            results = run_suites(model, ("dbc", "lemmas"), SMALL, samples=4)
        # suites run in their canonical order whatever the selection order
        lemmas = logs.output.index("INFO:qms-deco:Running lemmas checks")
        self.assertLess(lemmas, logs.output.index("INFO:qms-deco:Running dbc checks"))
        self.assertEqual([result.suite for result in results][-1], "dbc")
        named = by_name(results)
        self.assertIs(named["bipartite_identities"].status, Status.SKIPPED)
        failed = [result.to_dict() for result in results if result.status is Status.FAILED]
        self.assertFalse(failed)
        self.assertIs(named["derivation_reconstruction"].status, Status.PASSED)

    def test_non_dbc_skips(self):
        model = Model(build_diagonal_gamma(COMPLEX_RATES), "diagonal-gamma-3")
        named = by_name(run_suites(model, ("dbc",), SMALL, samples=4))
        self.assertEqual(len(named), 3)
        for result in named.values():
            self.assertIs(result.status, Status.SKIPPED)
            self.assertIn("detailed balance", result.reason)

    def test_bipartite_identities(self):
        inner = build_depolarizing(np.diag([0.7, 0.3]), 1.0)
        model = Model(build_bipartite(np.diag([1.0, -1.0]), inner), "bipartite", split=(2, 2), inner=inner)
        env = CheckEnv(model, SMALL, samples=4)
        result = checks.bipartite_identities(env)
        self.assertIs(result.status, Status.PASSED, result)
        self.assertLess(result.residual, 1e-8)

    def test_pinsker_chain(self):
        env = CheckEnv(Model(build_deco(3, 1.0), "deco-3"), SMALL, samples=6)
        self.assertIs(checks.pinsker_chi2_chain(env).status, Status.PASSED)

    def test_sample_sizes(self):
        env = CheckEnv(Model(build_deco(2, 1.0), "deco-2"), SMALL)
        self.assertEqual(len(env.samples.states), 50)
        self.assertEqual(len(env.moderate.observables), 20)
        self.assertEqual(env.moderate.states[0].tolist(), env.samples.states[0].tolist())

    def test_flow_derivatives_central_differences(self):
        for model in (
            Model(build_deco(3, 1.0), "deco-3"),
            Model(build_diagonal_gamma(COMPLEX_RATES), "diagonal-gamma-3"),
        ):
            result = checks.flow_derivatives(CheckEnv(model, SMALL, samples=6, moderate=6))
            self.assertIs(result.status, Status.PASSED, result)
            self.assertLess(result.residual, 1e-4)

    def test_variance_equality(self):
        env = CheckEnv(Model(build_deco(3, 0.5), "deco-3"), SMALL, samples=4)
        result = checks.variance_equality(env)
        self.assertIs(result.status, Status.PASSED, result)
        self.assertEqual(result.tolerance, 1e-8)
        structure = decompose(build_deco(2, 1.0)).structure
        conditional = Model(build_generic_conditional(structure, 2.0), "generic-conditional-2")
        self.assertIs(checks.variance_equality(CheckEnv(conditional, SMALL, samples=4)).status, Status.PASSED)
        env = CheckEnv(Model(build_diagonal_gamma(COMPLEX_RATES), "diagonal-gamma-3"), SMALL, samples=4)
        self.assertIs(checks.variance_equality(env).status, Status.SKIPPED)

    def test_half_gamma_bounds(self):
        env = CheckEnv(Model(build_deco(3, 1.0), "deco-3"), SMALL, samples=4)
        self.assertIs(checks.mlsi_ratios_above_half_gamma(env).status, Status.PASSED)
        self.assertIs(checks.beta_ratios_above_half_gamma(env).status, Status.SKIPPED)
        inner = build_depolarizing(np.diag([0.7, 0.3]), 1.0)
        model = Model(build_bipartite(np.diag([1.0, -1.0]), inner), "bipartite", split=(2, 2), inner=inner)
        result = checks.beta_ratios_above_half_gamma(CheckEnv(model, SMALL, samples=4))
        self.assertIs(result.status, Status.PASSED, result)
        self.assertEqual(result.residual, 0.0)
        env = CheckEnv(Model(build_diagonal_gamma(COMPLEX_RATES), "diagonal-gamma-3"), SMALL, samples=4)
        self.assertIs(checks.mlsi_ratios_above_half_gamma(env).status, Status.SKIPPED)

    def test_errors_become_failures(self):
        def broken(env):
            raise StructuralError("no faithful state")

        env = CheckEnv(Model(build_deco(2, 1.0), "deco-2"), SMALL, samples=2)
        with self.assertLogs("qms-deco", level="WARNING") as logs:
            (result,) = checks._run_check("lemmas", broken, env)
        self.assertIs(result.status, Status.FAILED)
        self.assertEqual(result.reason, "no faithful state")
        self.assertIn("WARNING:qms-deco:Check broken failed to run: no faithful state", logs.output)

    def test_raise_for_failures(self):
        results = [
            CheckResult("lemmas", "chain_rule", Status.PASSED, 0.0, 1e-8),
            CheckResult("constants", "beta_estimate", Status.FAILED, reason="estimate is inconsistent"),
            CheckResult("decay", "trace_distance_bound", Status.FAILED, 0.25, 0.0),
        ]
        with self.assertRaisesRegex(ToleranceViolation, "trace_distance_bound") as raised:
            raise_for_failures(results)
        self.assertEqual(raised.exception.residual, 0.25)
        raise_for_failures(results[:2])


if __name__ == "__main__":
    unittest.main()
