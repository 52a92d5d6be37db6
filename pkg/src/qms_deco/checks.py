"""Named invariant suites behind ``qms-deco check``.

Every check returns a ``CheckResult``; numeric failures become ``failed``
results and never escape as exceptions.
"""
import logging
import math
from dataclasses import dataclass
from enum import Enum
from functools import cached_property
from typing import Callable, Dict, List, Optional

import numpy as np
import scipy.linalg

from .constants import (
    Budget,
    estimate_alpha,
    estimate_beta,
    perturbative_directions,
    poincare_check,
    scale_covariance,
    spectral_gap,
)
from .dfstructure import decompose
from .dynamics import default_grid, trajectory, verify_decay_theorems
from .exceptions import QmsDecoError, ToleranceViolation
from .functionals import Functionals, chi2_divergence, draw_samples, mutual_information, relative_entropy
from .lindblad import (
    adjoint_wrt,
    apply_predual,
    dbc_jump_decomposition,
    derivation_residual,
    hamiltonian_residual,
    reconstruct_from_derivations,
    to_superoperator,
)
from .matops import (
    LOG,
    SQRT,
    divided_difference_rep,
    hermitian_part,
    matfunc,
    partial_trace,
    power,
    random_positive,
    trace_norm,
    unvec,
    vec,
)

_logger = logging.getLogger("qms-deco")

SUITE_NAMES = ("lemmas", "regularity", "dbc", "constants", "decay")


class Status(Enum):
    PASSED = "passed"
    FAILED = "failed"
    SKIPPED = "skipped"

    @property
    def level(self):
        return {Status.PASSED: logging.INFO, Status.FAILED: logging.ERROR, Status.SKIPPED: logging.WARNING}[self]


@dataclass(frozen=True)
class CheckResult:
    suite: str
    name: str
    status: Status
    residual: Optional[float] = None
    tolerance: Optional[float] = None
    reason: str = ""

    def to_dict(self):
        return {
            "suite": self.suite,
            "name": self.name,
            "status": self.status.value,
            "residual": self.residual,
            "tolerance": self.tolerance,
            "reason": self.reason,
        }


class CheckEnv:
    """Lazily computed objects shared by every check of one model"""

    def __init__(self, model, budget=Budget(), samples=50, decomposition=None, moderate=20):
        self.model = model
        self.budget = budget
        self.decomposition = decomposition or decompose(model.gen, seed=budget.seed)
        self.func = Functionals.from_decomposition(self.decomposition)
        self.rng = np.random.default_rng(budget.seed)
        self.samples = draw_samples(model.dim, self.rng, samples)
        # trajectories and finite differences run on the first ones only
        self.moderate = self.samples.head(moderate)

    @property
    def ctx(self):
        return self.func.ctx

    @cached_property
    def gap(self):
        return spectral_gap(self.func).gap

    @cached_property
    def alpha(self):
        return estimate_alpha(self.func, self.budget)

    @cached_property
    def inner_func(self):
        if self.model.inner is None:
            return None
        return Functionals.from_decomposition(decompose(self.model.inner, seed=self.budget.seed))


def _bounded(suite, name, residual, tolerance, reason=""):
    status = Status.PASSED if residual <= tolerance else Status.FAILED
    return CheckResult(suite, name, status, float(residual), tolerance, reason)


def _skipped(suite, name, reason, residual=None):
    return CheckResult(suite, name, Status.SKIPPED, residual, None, reason)


def _relative(left, right):
    return abs(left - right) / max(1.0, abs(left), abs(right))


def _single_rate_residual(func, gap):
    """Distance of ``L`` from ``gap (E_N - id)``, relative to the generator norm"""
    generator = func.ctx.heisenberg.mat
    target = gap * (func.cond.heisenberg.mat - np.eye(generator.shape[0]))
    return float(np.linalg.norm(generator - target)) / max(1.0, float(np.linalg.norm(generator)))


SUITES: Dict[str, List[Callable]] = {name: [] for name in SUITE_NAMES}


def register(suite):
    def decorator(check):
        SUITES[suite].append(check)
        return check

    return decorator


# lemmas


@register("lemmas")
def conditional_expectation(env):
    residuals = env.func.cond.verify()
    worst = max(residuals, key=residuals.get)
    return _bounded("lemmas", "conditional_expectation", residuals[worst], 1e-8, "largest defect: %s" % worst)


@register("lemmas")
def reference_state(env):
    func = env.func
    residual = float(np.linalg.norm(apply_predual(func.gen, func.sigma.mat)))
    for elem in env.decomposition.algebra:
        residual = max(residual, float(np.linalg.norm(func.sigma.mat @ elem - elem @ func.sigma.mat)))
    return _bounded("lemmas", "reference_state_invariant_and_central", residual, 1e-9)


@register("lemmas")
def kms_projection(env):
    func = env.func
    cond = func.cond.heisenberg
    adjoint = adjoint_wrt(cond, func.inner)
    residual = float(np.linalg.norm(cond.mat - adjoint.mat)) / max(1.0, float(np.linalg.norm(cond.mat)))
    return _bounded("lemmas", "kms_orthogonal_projection", residual, 1e-8)


@register("lemmas")
def modular_covariance(env):
    """``E_N*(s X s) = s E_N(X) s`` with ``s = sigma_tr^1/2``"""
    func = env.func
    root = func.sigma.sqrt
    residual = 0.0
    for x in env.samples.observables:
        left = func.cond.apply_predual(root @ x @ root)
        right = root @ func.cond.apply(x) @ root
        residual = max(residual, float(np.linalg.norm(left - right)))
    return _bounded("lemmas", "modular_covariance", residual, 1e-8)


@register("lemmas")
def df_variance(env):
    func = env.func
    residual = 0.0
    for x in env.samples.observables:
        expected = func.variance_sigma(x) - func.variance_sigma(func.cond.apply(x))
        residual = max(residual, _relative(func.df_variance(x), expected))
    return _bounded("lemmas", "df_variance", residual, 1e-8)


@register("lemmas")
def df_entropy(env):
    func = env.func
    residual, excess = 0.0, 0.0
    for rho in env.samples.states:
        total = func.relative_entropy_to_reference(rho)
        expected = total - func.relative_entropy_to_reference(func.state_n(rho))
        value = func.df_entropy(rho)
        residual = max(residual, _relative(value, expected))
        excess = max(excess, value - total)
    reason = "largest excess over D(rho || sigma_tr): %.3g" % excess
    return _bounded("lemmas", "df_entropy", max(residual, excess), 1e-8, reason)


@register("lemmas")
def chain_rule(env):
    """``V f(Y) - f(X) V`` through divided differences, for powers, square root and log"""
    dim = env.model.dim
    rng = np.random.default_rng(env.budget.seed + 1)
    residual = 0.0
    for fn in (power(2), power(3), SQRT, LOG):
        for _ in range(4):
            x, y = random_positive(dim, rng), random_positive(dim, rng)
            v = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
            lhs = v @ matfunc(y, fn) - matfunc(x, fn) @ v
            rhs = divided_difference_rep(x, y, fn, v @ y - x @ v)
            residual = max(residual, float(np.linalg.norm(lhs - rhs)) / max(1.0, float(np.linalg.norm(lhs))))
    return _bounded("lemmas", "chain_rule", residual, 1e-8)


def _central(values, step):
    backward, forward = values
    return (forward - backward) / (2.0 * step)


@register("lemmas")
def flow_derivatives(env):
    """Derivatives along the flow: ``-2 E(X)`` for the variance and ``-EP`` for the entropy"""
    func = env.func
    step = 1e-5
    heis = [scipy.linalg.expm(sign * step * env.ctx.heisenberg.mat) for sign in (-1.0, 1.0)]
    residual, skipped = 0.0, 0
    for x in env.moderate.observables:
        values = [func.variance_sigma(unvec(op @ vec(x), func.dim)) for op in heis]
        residual = max(residual, _relative(_central(values, step), -2.0 * func.dirichlet(x)))
    for rho in env.moderate.states:
        states = [hermitian_part(unvec(op.conj().T @ vec(rho), func.dim)) for op in heis]
        # running the flow backwards can leave the state cone
        if min(float(scipy.linalg.eigvalsh(state)[0]) for state in states) <= 0.0:
            skipped += 1
            continue
        values = [func.relative_entropy_to_reference(state) for state in states]
        residual = max(residual, _relative(_central(values, step), -func.entropy_production(rho)))
    if skipped:
        _logger.debug("flow_derivatives skipped %d state(s) too close to the boundary", skipped)
    return _bounded("lemmas", "flow_derivatives", residual, 1e-4)


@register("lemmas")
def bipartite_identities(env):
    inner = env.inner_func
    if inner is None:
        return _skipped("lemmas", "bipartite_identities", "model is not bipartite")
    func = env.func
    split = env.model.split
    residual, lowest_ip = 0.0, 0.0
    for rho in env.samples.states:
        rho_b = partial_trace(rho, split, 1)
        production = func.entropy_production(rho)
        information = func.information_production(rho, split)
        residual = max(residual, _relative(production, information + inner.entropy_production(rho_b)))
        entropy = mutual_information(rho, split) + relative_entropy(rho_b, inner.sigma)
        residual = max(residual, _relative(func.df_entropy(rho), entropy))
        lowest_ip = min(lowest_ip, information)
    if lowest_ip < -1e-9:
        return CheckResult(
            "lemmas", "bipartite_identities", Status.FAILED, -lowest_ip, 1e-9, "negative information production"
        )
    return _bounded("lemmas", "bipartite_identities", residual, 1e-8)


# regularity


def _regularity_result(name, report, binding, reason=""):
    residual = max(0.0, -report.min_margin)
    if report.passed:
        return CheckResult("regularity", name, Status.PASSED, residual, -report.threshold, reason)
    if not binding:
        return _skipped("regularity", name, reason or "inequality is not asserted for this model", residual)
    return CheckResult(
        "regularity", name, Status.FAILED, residual, -report.threshold, "witness: %s" % (report.witness(),)
    )


@register("regularity")
def strong_lp(env):
    reports = env.func.check_strong_lp_regularity(env.samples.positive, (1.0, 1.5, 2.0, 3.0))
    binding = bool(env.ctx.dbc)
    reason = "" if binding else "strong regularity is only asserted under detailed balance"
    return [
        _regularity_result("strong_lp", reports.strong, binding, reason),
        _regularity_result("weak_lp", reports.weak, False, "weak regularity is reported, not asserted"),
    ]


@register("regularity")
def l1_regularity(env):
    dbc = bool(env.ctx.dbc)
    report = env.func.check_l1_regularity(env.samples.states, factor=4.0 if dbc else 2.0)
    reason = "" if dbc else "L1 regularity is only asserted under detailed balance"
    return _regularity_result("l1_regularity", report, dbc, reason)


@register("regularity")
def entropy_production_condition(env):
    report = env.func.check_entropy_production_condition(env.samples.states)
    if report.samples == 0:
        return _skipped("regularity", "entropy_production_condition", "no sample away from the algebra")
    status = Status.PASSED if report.passed else Status.FAILED
    reason = "min EP off the algebra %.3g, max |EP| on it %.3g" % (report.min_off, report.max_on)
    return CheckResult("regularity", "entropy_production_condition", status, report.max_on, report.tolerance, reason)


@register("regularity")
def positivity(env):
    func = env.func
    lowest = min(
        [func.dirichlet(x) for x in env.samples.observables]
        + [func.entropy_production(rho) for rho in env.samples.states]
    )
    return _bounded("regularity", "dirichlet_and_production_nonnegative", max(0.0, -lowest), 1e-9)


# dbc


@register("dbc")
def detailed_balance(env):
    ctx = env.ctx
    if not ctx.dbc:
        return [
            _skipped("dbc", "dbc_implies_reversible", "generator does not satisfy detailed balance"),
            _skipped("dbc", "derivation_decomposition", "generator does not satisfy detailed balance"),
            _skipped("dbc", "derivation_reconstruction", "generator does not satisfy detailed balance"),
        ]
    results = [
        CheckResult(
            "dbc",
            "dbc_implies_reversible",
            Status.PASSED if ctx.reversible else Status.FAILED,
            reason="reversible=%s" % ctx.reversible,
        )
    ]
    jumps = dbc_jump_decomposition(ctx)
    results.append(_bounded("dbc", "derivation_decomposition", derivation_residual(ctx, jumps), 1e-7))
    rebuilt = to_superoperator(reconstruct_from_derivations(jumps, ctx.dim)).mat
    _ham, residual = hamiltonian_residual(ctx.heisenberg.mat - rebuilt)
    results.append(
        _bounded("dbc", "derivation_reconstruction", residual, 1e-7, "generator minus rebuilt dissipator is i[H, .]")
    )
    return results


# constants


@register("constants")
def poincare(env):
    ratio = poincare_check(env.func, env.samples.observables)
    if math.isnan(ratio):
        return _skipped("constants", "poincare_inequality", "every sample lies in the algebra")
    return _bounded("constants", "poincare_inequality", max(0.0, env.gap - ratio), 1e-7, "gap %.10g" % env.gap)


@register("constants")
def alpha_below_gap(env):
    estimate = env.alpha
    if math.isnan(estimate.alpha_upper):
        return _skipped("constants", "alpha_below_gap", "no admissible state for the log-Sobolev ratio")
    excess = max(0.0, estimate.alpha_upper - env.gap)
    if not (env.ctx.reversible or env.ctx.doubly_stochastic):
        return _skipped(
            "constants", "alpha_below_gap", "comparison is only asserted for reversible models", excess
        )
    return _bounded("constants", "alpha_below_gap", excess, 1e-6, "alpha <= %.10g" % estimate.alpha_upper)


@register("constants")
def scaling(env):
    factor = 2.0
    scaled = Functionals.from_decomposition(decompose(env.model.gen.scaled(factor), seed=env.budget.seed))
    defects = scale_covariance(env.func, scaled, factor, env.samples.states)
    if not defects:
        return _skipped("constants", "scale_covariance", "no admissible sample")
    return _bounded("constants", "scale_covariance", max(defects), 1e-8)


@register("constants")
def perturbative_expansion(env):
    func = env.func
    _values, directions = perturbative_directions(func, func.sigma.mat)
    if not directions:
        return _skipped("constants", "perturbative_expansion", "algebra is everything")
    coeffs = func.perturbative_coefficients(func.sigma.mat, directions[0])
    residual = max(
        _relative(coeffs.entropy_limit, coeffs.entropy_form),
        _relative(coeffs.production_limit, coeffs.production_form),
    )
    return _bounded("constants", "perturbative_expansion", residual, 1e-3)


@register("constants")
def information_constant(env):
    inner = env.inner_func
    if inner is None:
        return _skipped("constants", "beta_estimate", "model is not bipartite")
    estimate = estimate_beta(env.func, env.model.split, env.budget, inner, env.alpha.alpha_upper)
    if estimate.consistent:
        return CheckResult("constants", "beta_estimate", Status.PASSED, reason="beta <= %.10g" % estimate.beta_upper)
    return CheckResult("constants", "beta_estimate", Status.FAILED, reason="estimate is inconsistent")


@register("constants")
def mlsi_ratios_above_half_gamma(env):
    """For ``L = gamma (E_N - id)`` every log-Sobolev ratio is at least ``gamma / 2``"""
    name = "mlsi_ratios_above_half_gamma"
    if _single_rate_residual(env.func, env.gap) > 1e-9:
        return _skipped("constants", name, "generator is not a single-rate conditional expectation")
    ratios = env.alpha.evaluations + env.alpha.perturbative_ratios
    if not ratios:
        return _skipped("constants", name, "no admissible state for the log-Sobolev ratio")
    lowest = min(ratios)
    reason = "lowest of %d ratio(s): %.10g" % (len(ratios), lowest)
    return _bounded("constants", name, max(0.0, env.gap / 2.0 - lowest), 1e-9, reason)


@register("constants")
def beta_ratios_above_half_gamma(env):
    """Information ratios stay above ``gamma / 2`` when the second factor is depolarizing"""
    name = "beta_ratios_above_half_gamma"
    inner = env.inner_func
    if inner is None:
        return _skipped("constants", name, "model is not bipartite")
    gamma = spectral_gap(inner).gap
    if _single_rate_residual(inner, gamma) > 1e-9:
        return _skipped("constants", name, "second factor is not depolarizing")
    estimate = estimate_beta(env.func, env.model.split, env.budget)
    ratios = [entry.ratio for entry in estimate.optimizer_trace if entry.state is not None]
    if not ratios:
        return _skipped("constants", name, "every state was close to a product state")
    lowest = min(ratios)
    reason = "lowest of %d ratio(s): %.10g" % (len(ratios), lowest)
    return _bounded("constants", name, max(0.0, gamma / 2.0 - lowest), 1e-9, reason)


# decay


@register("decay")
def decay_theorems(env):
    grid = default_grid(env.gap, points=64)
    report = verify_decay_theorems(env.func, env.gap, env.moderate.observables, env.moderate.states, grid)
    witness = report.violations[0] if report.violations else None
    residual = max(0.0, -min(report.variance_margins + report.entropy_margins, default=0.0))
    reason = "" if witness is None else "first violation: %s" % (witness,)
    return CheckResult(
        "decay", "decay_theorems", Status.PASSED if report.passed else Status.FAILED, residual, 0.0, reason
    )


@register("decay")
def variance_equality(env):
    """``Var_N(P_t X) = exp(-2 gamma t) Var_N(X)`` when ``L = gamma (E_N - id)``"""
    func = env.func
    if _single_rate_residual(func, env.gap) > 1e-9:
        return _skipped("decay", "variance_equality", "generator is not a single-rate conditional expectation")
    grid = default_grid(env.gap, points=64)
    maps = [scipy.linalg.expm(float(t) * env.ctx.heisenberg.mat) for t in grid]
    residual = 0.0
    for x in env.moderate.observables:
        start = func.df_variance(x)
        for t, superop in zip(grid, maps):
            value = func.df_variance(unvec(superop @ vec(x), func.dim))
            residual = max(residual, abs(value - math.exp(-2.0 * env.gap * t) * start) / max(1.0, start))
    return _bounded("decay", "variance_equality", residual, 1e-8)


@register("decay")
def trace_distance_bound(env):
    func = env.func
    grid = default_grid(env.gap, points=64)
    worst = 0.0
    for rho in env.moderate.states:
        curve = trajectory(func, rho, grid, gap=env.gap)
        allowed = curve.columns["pi_bound"] * (1.0 + 1e-6)
        worst = max(worst, float(np.max(curve.columns["trace_dist"] - allowed)))
    return _bounded("decay", "trace_distance_bound", max(0.0, worst), 0.0)


@register("decay")
def pinsker_chi2_chain(env):
    func = env.func
    worst = 0.0
    for rho in env.moderate.states:
        distance = trace_norm(rho - func.state_n(rho)) ** 2
        variance = func.df_variance(func.density_image(rho))
        chi2 = chi2_divergence(rho, func.sigma)
        links = (
            distance - 2.0 * func.df_entropy(rho),
            distance - variance,
            variance - chi2,
            chi2 - 1.0 / func.sigma_min,
        )
        worst = max(worst, max(links) / max(1.0, chi2))
    return _bounded("decay", "pinsker_chi2_chain", max(0.0, worst), 1e-9)


def _run_check(suite, check, env):
    try:
        outcome = check(env)
    except QmsDecoError as exc:
        _logger.warning("Check %s failed to run: %s", check.__name__, exc)
        return [CheckResult(suite, check.__name__, Status.FAILED, reason=str(exc))]
    except (ArithmeticError, np.linalg.LinAlgError) as exc:
        return [CheckResult(suite, check.__name__, Status.FAILED, reason="numeric error: %s" % exc)]
    results = outcome if isinstance(outcome, list) else [outcome]
    for result in results:
        _logger.log(
            result.status.level if result.status is not Status.PASSED else logging.DEBUG,
            "%s/%s %s (residual %s)",
            result.suite,
            result.name,
            result.status.value,
            result.residual,
        )
    return results


def run_suites(model, suites=SUITE_NAMES, budget=Budget(), samples=50, decomposition=None, moderate=20):
    env = CheckEnv(model, budget, samples, decomposition, moderate)
    results = []
    for suite in SUITE_NAMES:
        if suite not in suites:
            continue
        _logger.info("Running %s checks", suite)
        for check in SUITES[suite]:
            results.extend(_run_check(suite, check, env))
    return results


def raise_for_failures(results):
    """Raise ``ToleranceViolation`` for the first failed check that has a residual"""
    for result in results:
        if result.status is Status.FAILED and result.residual is not None and result.tolerance is not None:
            raise ToleranceViolation(result.name, result.residual, result.tolerance)
