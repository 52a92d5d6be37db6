"""Decoherence-free Poincare constant and estimates of the log-Sobolev type constants.

The gap is exact (a Hermitian eigenproblem). ``alpha`` and ``beta`` are infima
over states, estimated by multi-start Nelder-Mead; the results are upper
bounds with a witness state, never certified constants.
"""
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
import scipy.linalg
import scipy.optimize

from .catalog import build_deco, build_depolarizing
from .dfstructure import decompose
from .exceptions import RejectedInputError, StructuralError
from .functionals import Functionals, mutual_information
from .lindblad import adjoint_wrt
from .matops import (
    POLICY,
    fourier_matrix,
    hermitian_basis,
    hermitian_from_params,
    hermitian_part,
    params_from_hermitian,
    random_density,
    state_matrix,
    theta_map,
    trace_norm,
    unvec,
)

_logger = logging.getLogger("qms-deco")

PENALTY = 1e6
MAX_LOG_SPREAD = 30.0


@dataclass(frozen=True)
class Budget:
    starts: int = 32
    iterations: int = 500
    seed: int = 42
    threads: int = 1
    perturbative_seeds: int = 4
    tiny_steps: Tuple[float, ...] = (1e-2, 1e-3)

    def __post_init__(self):
        if self.starts < 0 or self.iterations < 1 or self.threads < 1:
            raise RejectedInputError("budget needs starts >= 0, iterations >= 1 and threads >= 1")


@dataclass(frozen=True, eq=False)
class GapResult:
    gap: float
    eigvec: np.ndarray
    method: str = "symmetrized_spectrum"


def _kms_root(sigma):
    quarter = sigma.power(0.25)
    inv_quarter = sigma.power(-0.25)
    return np.kron(quarter.T, quarter), np.kron(inv_quarter.T, inv_quarter)


def spectral_gap(func, policy=POLICY):
    """Gap of the KMS-symmetrized generator on the complement of the decoherence-free algebra"""
    ctx = func.ctx
    dim = ctx.dim
    generator = ctx.heisenberg.mat
    symmetric = 0.5 * (generator + adjoint_wrt(ctx.heisenberg, func.inner).mat)
    root, inv_root = _kms_root(func.sigma)
    symmetric = hermitian_part(root @ symmetric @ inv_root)
    complement = hermitian_part(root @ (np.eye(dim * dim) - func.cond.heisenberg.mat) @ inv_root)
    weights, frame = scipy.linalg.eigh(complement)
    frame = frame[:, weights > 0.5]
    if frame.shape[1] == 0:
        raise StructuralError("decoherence-free algebra is everything, there is no gap")
    values, vectors = scipy.linalg.eigh(hermitian_part(frame.conj().T @ symmetric @ frame))
    scale = max(1.0, float(np.max(np.abs(values))))
    if values[-1] >= -policy.kernel * scale:
        raise StructuralError("symmetrized generator has a kernel larger than the decoherence-free algebra")
    gap = -float(values[-1])

    candidate = unvec(inv_root @ (frame @ vectors[:, -1]), dim)
    parts = (hermitian_part(candidate), hermitian_part(-1j * candidate))
    eigvec = max(parts, key=lambda part: float(np.linalg.norm(part)))
    eigvec = eigvec / np.linalg.norm(eigvec)

    ratio = func.dirichlet(eigvec) / func.df_variance(eigvec)
    if abs(ratio - gap) > policy.rayleigh * max(1.0, gap):
        raise StructuralError("gap eigenvector has Rayleigh quotient %.12g, expected %.12g" % (ratio, gap))
    _logger.info("Decoherence-free spectral gap %.10g", gap)
    return GapResult(gap, eigvec)


def poincare_check(func, samples, policy=POLICY):
    """Smallest ``E(X) / Var_N(X)`` over samples, skipping elements of the algebra"""
    ratios = []
    for x in samples:
        x = hermitian_part(np.asarray(x, dtype=complex))
        variance = func.df_variance(x)
        if variance <= policy.kernel * max(1.0, float(np.linalg.norm(x)) ** 2):
            continue
        ratios.append(func.dirichlet(x) / variance)
    return min(ratios) if ratios else float("nan")


@dataclass
class StartResult:
    index: int
    kind: str
    ratio: float
    state: Optional[np.ndarray]
    evaluations: int = 0
    rejected: int = 0
    iterations: int = 0
    converged: bool = True

    def to_dict(self):
        return {
            "index": self.index,
            "kind": self.kind,
            "ratio": self.ratio,
            "evaluations": self.evaluations,
            "rejected": self.rejected,
            "iterations": self.iterations,
            "converged": self.converged,
        }


@dataclass(frozen=True, eq=False)
class MlsiEstimate:
    alpha_upper: float
    witness: Optional[np.ndarray]
    perturbative_ratios: Tuple[float, ...]
    optimizer_trace: Tuple[StartResult, ...]
    evaluations: Tuple[float, ...] = ()
    flagged: bool = False
    attained_in_limit: bool = False

    def to_dict(self):
        return {
            "alpha_upper": self.alpha_upper,
            "attained_in_limit": self.attained_in_limit,
            "witness_spectrum": (
                None if self.witness is None else [float(v) for v in scipy.linalg.eigvalsh(self.witness)]
            ),
            "perturbative_ratios": list(self.perturbative_ratios),
            "starts": [entry.to_dict() for entry in self.optimizer_trace],
            "flagged": self.flagged,
        }


@dataclass(frozen=True, eq=False)
class BetaEstimate:
    beta_upper: float
    witness: Optional[np.ndarray]
    optimizer_trace: Tuple[StartResult, ...]
    alpha_inner_upper: Optional[float] = None
    alpha_upper: Optional[float] = None
    flagged: bool = False

    @property
    def consistent(self):
        """``min(beta, alpha_inner) <= alpha_N``, when all three are known"""
        if self.alpha_inner_upper is None or self.alpha_upper is None:
            return None
        return min(self.beta_upper, self.alpha_inner_upper) <= self.alpha_upper + 1e-6

    def to_dict(self):
        return {
            "beta_upper": self.beta_upper,
            "alpha_inner_upper": self.alpha_inner_upper,
            "consistent": self.consistent,
            "starts": [entry.to_dict() for entry in self.optimizer_trace],
            "flagged": self.flagged,
        }


def chart_state(params, dim):
    """``exp(A) / Tr exp(A)`` for the Hermitian ``A`` encoded by ``params``"""
    values, vectors = scipy.linalg.eigh(hermitian_from_params(params, dim))
    weights = np.exp(values - values.max())
    return (vectors * (weights / weights.sum())) @ vectors.conj().T, float(values.max() - values.min())


def chart_params(rho):
    values, vectors = scipy.linalg.eigh(hermitian_part(state_matrix(rho)))
    logs = np.log(np.maximum(values, np.exp(-MAX_LOG_SPREAD)))
    return params_from_hermitian((vectors * logs) @ vectors.conj().T)


def mlsi_ratio(func, rho):
    """``EP(rho) / (2 D_N(rho))``, or ``None`` close to the decoherence-free states"""
    rho = state_matrix(rho)
    divergence = func.df_entropy(rho)
    policy = func.policy
    if divergence < policy.df_entropy_floor or trace_norm(rho - func.state_n(rho)) < policy.equality:
        return None
    return func.entropy_production(rho) / (2.0 * divergence)


class _RatioSearch:
    """One Nelder-Mead start; keeps its own best point so starts can run in threads"""

    def __init__(self, ratio, dim, index, kind):
        self.ratio = ratio
        self.dim = dim
        self.result = StartResult(index, kind, float("inf"), None)

    def record(self, rho):
        value = self.ratio(rho)
        self.result.evaluations += 1
        if value is None:
            self.result.rejected += 1
            return None
        if value < self.result.ratio:
            self.result.ratio = value
            self.result.state = rho
        return value

    def objective(self, params):
        rho, spread = chart_state(params, self.dim)
        if spread > MAX_LOG_SPREAD:
            self.result.rejected += 1
            return PENALTY
        value = self.record(rho)
        return PENALTY if value is None else value

    def run(self, start, iterations):
        outcome = scipy.optimize.minimize(
            self.objective,
            chart_params(start),
            method="Nelder-Mead",
            options={"maxiter": iterations, "xatol": 1e-8, "fatol": 1e-12, "adaptive": True},
        )
        self.result.iterations = int(outcome.nit)
        self.result.converged = bool(outcome.success)
        return self.result


def _kernel_hermitian_basis(func):
    """Orthonormal Hermitian basis of the kernel of ``E_N``"""
    dim = func.dim
    basis = hermitian_basis(dim)
    coords = []
    for elem in basis:
        rest = hermitian_part(elem - func.cond.apply(elem))
        coords.append([float(np.trace(other @ rest).real) for other in basis])
    frame = scipy.linalg.orth(np.array(coords).T)
    return [sum(c * elem for c, elem in zip(col, basis)) for col in frame.T]


def perturbative_directions(func, base):
    """Generalized eigenpairs of the second-order entropy and production forms around ``base``"""
    kernel = _kernel_hermitian_basis(func)
    if not kernel:
        return np.zeros(0), []
    root = func.sigma.sqrt
    tangents = [hermitian_part(theta_map(base, hermitian_part(root @ y @ root))) for y in kernel]
    production = np.array([[func.dirichlet(y, t) for t in tangents] for y in kernel])
    entropy = np.array([[func.inner(y, t).real for t in tangents] for y in kernel])
    production = 0.5 * (production + production.T)
    entropy = 0.5 * (entropy + entropy.T)
    # eigenvalues are the limits of EP / (2 D_N) along each direction
    values, vectors = scipy.linalg.eigh(production, entropy)
    directions = [sum(c * y for c, y in zip(col, kernel)) for col in vectors.T]
    return values, directions


def _perturbative_seeds(func, budget, search):
    """Record ratios at tiny steps along the softest directions; return larger-step starts"""
    base = func.sigma.mat
    values, directions = perturbative_directions(func, base)
    starts = []
    root = func.sigma.sqrt
    lowest = func.sigma_min
    for direction in directions[: budget.perturbative_seeds]:
        shift = hermitian_part(root @ direction @ root)
        reach = lowest / max(float(np.max(np.abs(scipy.linalg.eigvalsh(shift)))), 1e-300)
        for step in budget.tiny_steps:
            for sign in (1.0, -1.0):
                search.record(base + sign * step * reach * shift)
        starts.append(base + 0.5 * reach * shift)
    return tuple(float(v) for v in values[: budget.perturbative_seeds]), starts


def _run_starts(ratio, dim, seeds, budget):
    def work(item):
        index, (label, start) = item
        return _RatioSearch(ratio, dim, index, label).run(start, budget.iterations)

    items = list(enumerate(seeds))
    if budget.threads > 1 and len(items) > 1:
        with ThreadPoolExecutor(max_workers=budget.threads) as pool:
            return list(pool.map(work, items))
    return [work(item) for item in items]


def _ginibre_starts(dim, budget):
    children = np.random.SeedSequence(budget.seed).spawn(budget.starts)
    return [("ginibre", random_density(dim, np.random.default_rng(child))) for child in children]


def estimate_alpha(func, budget=Budget(), extra_seeds=()):
    """Upper bound on ``inf EP(rho) / (2 D_N(rho))`` with the state attaining it"""
    dim = func.dim
    ratio = lambda rho: mlsi_ratio(func, rho)  # noqa: E731
    near_sigma = _RatioSearch(ratio, dim, -1, "perturbative")
    perturbative, pert_starts = _perturbative_seeds(func, budget, near_sigma)
    seeds = [("perturbative", start) for start in pert_starts]
    for state in extra_seeds:
        near_sigma.record(state_matrix(state))
        seeds.append(("extra", state_matrix(state)))
    seeds += _ginibre_starts(dim, budget)
    trace = [near_sigma.result] + _run_starts(ratio, dim, seeds, budget)

    found = [entry for entry in trace if entry.state is not None]
    if not found:
        _logger.warning("Every evaluated state was rejected; no log-Sobolev estimate")
        return MlsiEstimate(float("nan"), None, perturbative, tuple(trace), flagged=True)
    best = min(found, key=lambda entry: (entry.ratio, entry.index))
    flagged = not all(entry.converged for entry in trace[1:])
    if flagged:
        _logger.warning("Some log-Sobolev starts hit the iteration cap of %d", budget.iterations)
    alpha_upper = best.ratio
    limit = min(perturbative, default=float("inf"))
    if limit < alpha_upper:
        # the infimum is at most any limit of evaluated ratios
        alpha_upper = limit
    _logger.info("Log-Sobolev ratio upper bound %.10g over %d start(s)", alpha_upper, len(trace) - 1)
    return MlsiEstimate(
        alpha_upper,
        best.state,
        perturbative,
        tuple(trace),
        tuple(entry.ratio for entry in found),
        flagged,
        attained_in_limit=alpha_upper < best.ratio,
    )


def information_ratio(func, rho, split):
    """``IP(rho) / (2 I(A:B))``, or ``None`` on (nearly) product states"""
    rho = state_matrix(rho)
    information = mutual_information(rho, split)
    if information < func.policy.mutual_information_floor:
        return None
    return func.information_production(rho, split) / (2.0 * information)


def estimate_beta(func, split, budget=Budget(), inner_func=None, alpha_upper=None):
    """Upper bound on the information constant of a bipartite model"""
    dim = func.dim
    ratio = lambda rho: information_ratio(func, rho, split)  # noqa: E731
    trace = _run_starts(ratio, dim, _ginibre_starts(dim, budget), budget)
    alpha_inner = None
    if inner_func is not None:
        alpha_inner = estimate_alpha(inner_func, budget).alpha_upper
    found = [entry for entry in trace if entry.state is not None]
    if not found:
        return BetaEstimate(float("nan"), None, tuple(trace), alpha_inner, alpha_upper, flagged=True)
    best = min(found, key=lambda entry: (entry.ratio, entry.index))
    return BetaEstimate(
        best.ratio,
        best.state,
        tuple(trace),
        alpha_inner,
        alpha_upper,
        flagged=not all(entry.converged for entry in trace),
    )


@dataclass(frozen=True, eq=False)
class DecoDepolComparison:
    alpha_depolarizing: float
    deco_ratio_at_witness: float
    alpha_deco: float
    rotated_witness: Optional[np.ndarray] = field(repr=False)
    deco_estimate: Optional[MlsiEstimate] = field(default=None, repr=False)


def deco_depolarizing_comparison(dim, gamma, budget=Budget()):
    """Carry the depolarizing witness into the Fourier basis, where ``rho_N = I/d`` for dephasing"""
    depol = Functionals.from_decomposition(
        decompose(build_depolarizing(np.eye(dim) / dim, gamma), seed=budget.seed)
    )
    deco = Functionals.from_decomposition(decompose(build_deco(dim, gamma), seed=budget.seed))
    depol_estimate = estimate_alpha(depol, budget)
    if depol_estimate.witness is None:
        _logger.warning("Depolarizing estimate has no witness; skipping the Fourier comparison")
        deco_estimate = estimate_alpha(deco, budget)
        return DecoDepolComparison(
            depol_estimate.alpha_upper, float("nan"), deco_estimate.alpha_upper, None, deco_estimate
        )
    values = scipy.linalg.eigvalsh(depol_estimate.witness)
    fourier = fourier_matrix(dim)
    rotated = hermitian_part((fourier * values) @ fourier.conj().T)
    deco_ratio = mlsi_ratio(deco, rotated)
    if deco_ratio is None:
        deco_ratio = float("nan")
    deco_estimate = estimate_alpha(deco, budget, extra_seeds=(rotated,))
    return DecoDepolComparison(
        depol_estimate.alpha_upper, deco_ratio, deco_estimate.alpha_upper, rotated, deco_estimate
    )


def scale_covariance(func_a, func_b, factor, samples: Sequence[np.ndarray]) -> List[float]:
    """Relative defects of ``ratio_b = factor * ratio_a`` at the given states"""
    defects = []
    for rho in samples:
        first = mlsi_ratio(func_a, rho)
        second = mlsi_ratio(func_b, rho)
        if first is None or second is None:
            continue
        defects.append(abs(second - factor * first) / max(1e-300, abs(factor * first)))
    return defects
