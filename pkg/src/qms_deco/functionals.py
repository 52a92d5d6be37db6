"""Variances, relative entropies, Dirichlet forms, entropy production and regularity reports."""
import logging
from dataclasses import dataclass, field
from functools import cached_property
from typing import NamedTuple, Tuple

import numpy as np
import scipy.linalg

from .exceptions import DomainError, RejectedInputError
from .lindblad import apply_generator, apply_predual
from .matops import (
    POLICY,
    DensityMatrix,
    InnerKind,
    WeightedInner,
    XLOGX,
    hermitian_part,
    partial_trace,
    power,
    random_density,
    random_hermitian,
    random_positive,
    state_matrix,
    theta_map,
)

_logger = logging.getLogger("qms-deco")


def _floored_log(mat, policy=POLICY):
    values, vectors = scipy.linalg.eigh(hermitian_part(mat))
    low = values < policy.entropy_floor
    if low.any():
        _logger.warning(
            "Flooring %d eigenvalue(s) below %g before taking a logarithm", int(low.sum()), policy.entropy_floor
        )
        values = np.where(low, policy.entropy_floor, values)
    return (vectors * np.log(values)) @ vectors.conj().T


def _trace_xlogx(mat):
    return float(np.sum(XLOGX(XLOGX.admit(scipy.linalg.eigvalsh(hermitian_part(mat))))))


def von_neumann_entropy(rho):
    return -_trace_xlogx(state_matrix(rho))


def relative_entropy(rho, sigma, policy=POLICY):
    """``Tr[rho (log rho - log sigma)]`` with ``0 log 0 = 0``"""
    rho = state_matrix(rho)
    sigma = state_matrix(sigma)
    if rho.shape != sigma.shape:
        raise RejectedInputError("states of shapes %s and %s" % (rho.shape, sigma.shape))
    return _trace_xlogx(rho) - float(np.trace(rho @ _floored_log(sigma, policy)).real)


def chi2_divergence(rho, sigma):
    """``Tr[(rho - sigma) sigma^-1/2 (rho - sigma) sigma^-1/2]``"""
    if not isinstance(sigma, DensityMatrix):
        sigma = DensityMatrix.from_matrix(sigma)
    diff = state_matrix(rho) - sigma.mat
    inv_root = sigma.inv_sqrt
    return float(np.trace(diff @ inv_root @ diff @ inv_root).real)


def _check_split(dim, split):
    dim_a, dim_b = split
    if dim_a * dim_b != dim:
        raise RejectedInputError("split %s does not factor dimension %d" % (tuple(split), dim))
    return int(dim_a), int(dim_b)


def mutual_information(rho, split, path="entropy"):
    """``S(rho_A) + S(rho_B) - S(rho)``; ``path="relative"`` evaluates ``D(rho || rho_A kron rho_B)``"""
    rho = state_matrix(rho)
    split = _check_split(rho.shape[0], split)
    rho_a = partial_trace(rho, split, 0)
    rho_b = partial_trace(rho, split, 1)
    if path == "entropy":
        return von_neumann_entropy(rho_a) + von_neumann_entropy(rho_b) - von_neumann_entropy(rho)
    if path == "relative":
        return _relative_to_product(rho, rho_a, rho_b)
    raise RejectedInputError("unknown mutual information path %r" % (path,))


def _product_log(rho_a, rho_b):
    return np.kron(_floored_log(rho_a), np.eye(rho_b.shape[0])) + np.kron(np.eye(rho_a.shape[0]), _floored_log(rho_b))


def _relative_to_product(rho, rho_a, rho_b):
    return _trace_xlogx(rho) - float(np.trace(rho @ _product_log(rho_a, rho_b)).real)


def entropy_production_of(gen, rho, sigma, policy=POLICY):
    """``-Tr[L_*(rho) (log rho - log sigma)]``"""
    rho = state_matrix(rho)
    flow = apply_predual(gen, rho)
    return -float(np.trace(flow @ (_floored_log(rho, policy) - _floored_log(state_matrix(sigma), policy))).real)


def information_production_of(gen, rho, split, policy=POLICY):
    """``-Tr[L_*(rho) (log rho - log(rho_A kron rho_B))]``"""
    rho = state_matrix(rho)
    split = _check_split(rho.shape[0], split)
    flow = apply_predual(gen, rho)
    log_product = _product_log(partial_trace(rho, split, 0), partial_trace(rho, split, 1))
    return -float(np.trace(flow @ (_floored_log(rho, policy) - log_product)).real)


@dataclass(frozen=True)
class RegularityReport:
    kind: str
    margins: Tuple[float, ...]
    labels: Tuple[str, ...] = ()
    threshold: float = -POLICY.regularity_slack

    @property
    def min_margin(self):
        return min(self.margins) if self.margins else 0.0

    @property
    def violations(self):
        return sum(1 for margin in self.margins if margin < self.threshold)

    @property
    def passed(self):
        return self.violations == 0

    def witness(self):
        if not self.margins:
            return None
        idx = int(np.argmin(self.margins))
        return self.labels[idx] if self.labels else idx

    def to_dict(self):
        return {
            "kind": self.kind,
            "samples": len(self.margins),
            "min_margin": self.min_margin,
            "violations": self.violations,
            "witness": self.witness(),
        }


class LpRegularity(NamedTuple):
    strong: RegularityReport
    weak: RegularityReport


@dataclass(frozen=True)
class EpcReport:
    """Entropy production away from and on the decoherence-free states"""

    min_off: float
    max_on: float
    samples: int
    tolerance: float = POLICY.production

    @property
    def passed(self):
        return self.min_off > self.tolerance and self.max_on <= self.tolerance


class PerturbativeCoefficients(NamedTuple):
    entropy_limit: float
    entropy_form: float
    production_limit: float
    production_form: float


def richardson(values):
    """Extrapolate ``f(h), f(h/2), f(h/4)`` to ``h -> 0`` assuming a power series in ``h``"""
    first, second, third = values
    level_a = 2 * second - first
    level_b = 2 * third - second
    return (4 * level_b - level_a) / 3


class Functionals:
    """Every functional of a model, once its reference state and ``E_N`` are known"""

    def __init__(self, ctx, cond, policy=POLICY):
        if ctx.sigma_tr is None:
            raise RejectedInputError("context has no reference state")
        if not ctx.sigma_tr.faithful:
            raise DomainError("reference state is not faithful", ctx.sigma_tr.min_eigenvalue)
        self.ctx = ctx
        self.cond = cond
        self.policy = policy

    @classmethod
    def from_decomposition(cls, decomposition, policy=POLICY):
        return cls(decomposition.ctx, decomposition.cond, policy)

    @property
    def gen(self):
        return self.ctx.gen

    @property
    def dim(self):
        return self.ctx.dim

    @property
    def sigma(self):
        return self.ctx.sigma_tr

    @property
    def sigma_min(self):
        return self.sigma.min_eigenvalue

    @cached_property
    def inner(self):
        return WeightedInner(self.sigma, InnerKind.KMS)

    @cached_property
    def quarter_inv(self):
        return self.sigma.power(-0.25)

    @cached_property
    def log_sigma(self):
        return self.sigma.log

    def state_n(self, rho):
        return hermitian_part(self.cond.apply_predual(state_matrix(rho)))

    def variance_sigma(self, x):
        x = np.asarray(x, dtype=complex)
        mean = np.trace(self.sigma.mat @ x)
        return self.inner.norm_squared(x - mean * np.eye(self.dim))

    def df_variance(self, x):
        x = np.asarray(x, dtype=complex)
        return self.inner.norm_squared(x - self.cond.apply(x))

    def df_entropy(self, rho):
        rho = state_matrix(rho)
        return relative_entropy(rho, self.state_n(rho), self.policy)

    def relative_entropy_to_reference(self, rho):
        rho = state_matrix(rho)
        return _trace_xlogx(rho) - float(np.trace(rho @ self.log_sigma).real)

    def dirichlet(self, x, y=None):
        """``-<X, L(Y)>`` in the KMS product of the reference state"""
        x = np.asarray(x, dtype=complex)
        y = x if y is None else np.asarray(y, dtype=complex)
        return -self.inner(x, apply_generator(self.gen, y)).real

    def p_dirichlet(self, x, p):
        """p-Dirichlet form of a positive definite ``X``; ``p = 2`` is ``dirichlet``"""
        p = float(p)
        if p < 1:
            raise RejectedInputError("p-Dirichlet form needs p >= 1, got %g" % p)
        x = np.asarray(x, dtype=complex)
        lowest = scipy.linalg.eigvalsh(hermitian_part(x))[0]
        if lowest <= self.policy.positive_definite:
            raise DomainError("p-Dirichlet form needs a positive definite argument", float(lowest))
        x = hermitian_part(x)
        sigma = self.sigma
        flow = apply_generator(self.gen, x)
        if p == 1:
            root = sigma.sqrt
            middle = root @ x @ root
            log_diff = _floored_log(middle, self.policy) - self.log_sigma
            return -0.5 * float(np.trace(root @ flow @ root @ log_diff).real)
        q = p / (p - 1.0)
        outer = sigma.power(1.0 / (2.0 * p))
        middle = hermitian_part(outer @ x @ outer)
        powered = self._matpower(middle, p - 1.0)
        dual_side = sigma.power(-1.0 / (2.0 * q))
        image = dual_side @ powered @ dual_side
        return -p / (2.0 * (p - 1.0)) * self.inner(image, flow).real

    @staticmethod
    def _matpower(mat, exponent):
        values, vectors = scipy.linalg.eigh(mat)
        fn = power(exponent)
        return (vectors * fn(fn.admit(values))) @ vectors.conj().T

    def lp_image(self, x, p):
        """``sigma^-1/4 (sigma^1/2p X sigma^1/2p)^(p/2) sigma^-1/4``"""
        outer = self.sigma.power(1.0 / (2.0 * float(p)))
        middle = hermitian_part(outer @ np.asarray(x, dtype=complex) @ outer)
        return self.quarter_inv @ self._matpower(middle, float(p) / 2.0) @ self.quarter_inv

    def entropy_production(self, rho):
        rho = state_matrix(rho)
        flow = apply_predual(self.gen, rho)
        return -float(np.trace(flow @ (_floored_log(rho, self.policy) - self.log_sigma)).real)

    def information_production(self, rho, split):
        return information_production_of(self.gen, rho, split, self.policy)

    def density_image(self, rho):
        """``sigma^-1/2 rho sigma^-1/2``, the observable a state corresponds to"""
        inv_root = self.sigma.inv_sqrt
        return inv_root @ state_matrix(rho) @ inv_root

    def check_l1_regularity(self, samples, factor=2.0):
        """Margins ``EP(rho) - factor E(sigma^-1/4 rho^1/2 sigma^-1/4)``"""
        margins, labels = [], []
        for idx, rho in enumerate(samples):
            rho = state_matrix(rho)
            image = self.quarter_inv @ _psd_sqrt(rho) @ self.quarter_inv
            margins.append(self.entropy_production(rho) - factor * self.dirichlet(image))
            labels.append("sample %d" % idx)
        kind = "l1" if factor == 2.0 else "l1x%g" % factor
        return RegularityReport(kind, tuple(margins), tuple(labels), -self.policy.regularity_slack)

    def check_strong_lp_regularity(self, samples, p_grid):
        """Strong margins ``E_p(X) - (2/p) E(I_2p(X))`` and the weak variant"""
        strong, weak, labels = [], [], []
        for idx, x in enumerate(samples):
            for p in p_grid:
                p = float(p)
                lhs = self.p_dirichlet(x, p)
                rhs = self.dirichlet(self.lp_image(x, p))
                strong.append(lhs - (2.0 / p) * rhs)
                weak.append(lhs - max(1.0, p - 1.0) * rhs)
                labels.append("sample %d, p=%g" % (idx, p))
        return LpRegularity(
            RegularityReport("strong_lp", tuple(strong), tuple(labels), -self.policy.regularity_slack),
            RegularityReport("weak_lp", tuple(weak), tuple(labels), -self.policy.regularity_slack),
        )

    def check_entropy_production_condition(self, samples, separation=1e-6):
        """EP vanishes on ``N_*`` and stays positive away from it"""
        off, on = [], []
        for rho in samples:
            rho = state_matrix(rho)
            if self.df_entropy(rho) > separation:
                off.append(self.entropy_production(rho))
            on.append(abs(self.entropy_production(self.state_n(rho))))
        return EpcReport(min(off) if off else float("nan"), max(on) if on else 0.0, len(off), self.policy.production)

    def perturbative_coefficients(self, base, direction, eps=(1e-2, 5e-3, 2.5e-3)):
        """Second-order coefficients of ``D(rho_e || base)`` and ``EP(rho_e)`` along ``base + e g``

        ``g = sigma^1/2 Y sigma^1/2`` with ``Y`` projected onto the kernel of ``E_N``.
        Returns the Richardson limits next to the quadratic forms they should match.
        """
        base = state_matrix(base)
        y = hermitian_part(np.asarray(direction, dtype=complex))
        y = hermitian_part(y - self.cond.apply(y))
        root = self.sigma.sqrt
        shift = hermitian_part(root @ y @ root)
        tangent = hermitian_part(theta_map(base, shift, self.policy))
        entropy_form = 0.5 * self.inner(y, tangent).real
        production_form = self.dirichlet(y, tangent)
        entropy_values, production_values = [], []
        for step in eps:
            rho = base + step * shift
            entropy_values.append(relative_entropy(rho, base, self.policy) / step**2)
            production_values.append(self.entropy_production(rho) / step**2)
        return PerturbativeCoefficients(
            richardson(entropy_values), entropy_form, richardson(production_values), production_form
        )


def _psd_sqrt(mat):
    values, vectors = scipy.linalg.eigh(hermitian_part(mat))
    return (vectors * np.sqrt(np.clip(values, 0.0, None))) @ vectors.conj().T


@dataclass(frozen=True)
class SampleSet:
    """Seeded batch of random states and observables shared by the checks"""

    states: Tuple[np.ndarray, ...]
    observables: Tuple[np.ndarray, ...]
    positive: Tuple[np.ndarray, ...] = field(default=())

    def head(self, count):
        return SampleSet(self.states[:count], self.observables[:count], self.positive[:count])


def draw_samples(dim, rng, count):
    return SampleSet(
        tuple(random_density(dim, rng) for _ in range(count)),
        tuple(random_hermitian(dim, rng) for _ in range(count)),
        tuple(random_positive(dim, rng) for _ in range(count)),
    )
