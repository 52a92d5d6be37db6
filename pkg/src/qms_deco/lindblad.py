"""GKSL generators, their superoperator matrices and invariant states."""
import logging
import math
from dataclasses import dataclass, replace
from enum import Enum
from functools import cached_property
from typing import NamedTuple, Optional, Tuple

import numpy as np
import scipy.linalg

from .exceptions import (
    NoFaithfulStateError,
    RejectedInputError,
    StructuralError,
    UnsupportedStructureError,
)
from .matops import (
    POLICY,
    DensityMatrix,
    InnerKind,
    WeightedInner,
    as_matrix,
    check_hermitian,
    choi_matrix,
    commutator_superop,
    hermitian_basis,
    hermitian_part,
    unvec,
    vec,
)

_logger = logging.getLogger("qms-deco")


class Picture(Enum):
    HEISENBERG = "heisenberg"
    SCHRODINGER = "schrodinger"

    @property
    def other(self):
        return Picture.SCHRODINGER if self is Picture.HEISENBERG else Picture.HEISENBERG


@dataclass(frozen=True, eq=False)
class Lindbladian:
    """``L(X) = i[H, X] + sum_k (L_k^* X L_k - 1/2 {L_k^* L_k, X})``"""

    hamiltonian: np.ndarray
    jumps: Tuple[np.ndarray, ...] = ()

    def __post_init__(self):
        ham = check_hermitian(self.hamiltonian, "hamiltonian")
        jumps = tuple(as_matrix(jump, "jump operator") for jump in self.jumps)
        for jump in jumps:
            if jump.shape != ham.shape:
                raise RejectedInputError("jump of shape %s for a %d-level system" % (jump.shape, ham.shape[0]))
        object.__setattr__(self, "hamiltonian", ham)
        object.__setattr__(self, "jumps", jumps)

    @classmethod
    def zero(cls, dim):
        return cls(np.zeros((dim, dim), dtype=complex))

    @property
    def dim(self):
        return self.hamiltonian.shape[0]

    @cached_property
    def dissipation_sum(self):
        total = np.zeros_like(self.hamiltonian)
        for jump in self.jumps:
            total += jump.conj().T @ jump
        return total

    def scaled(self, factor):
        if factor <= 0:
            raise RejectedInputError("generator scale must be positive, got %r" % (factor,))
        root = math.sqrt(factor)
        return Lindbladian(factor * self.hamiltonian, tuple(root * jump for jump in self.jumps))


def _operand(gen, value):
    mat = np.asarray(value, dtype=complex)
    if mat.shape != (gen.dim, gen.dim):
        raise RejectedInputError("operand of shape %s for a %d-level generator" % (mat.shape, gen.dim))
    return mat


def apply_generator(gen, x):
    """Heisenberg picture action on an observable"""
    x = _operand(gen, x)
    ham = gen.hamiltonian
    out = 1j * (ham @ x - x @ ham)
    for jump in gen.jumps:
        out += jump.conj().T @ x @ jump
    anti = gen.dissipation_sum
    out -= 0.5 * (anti @ x + x @ anti)
    return out


def apply_predual(gen, rho):
    """Schroedinger picture action on a state"""
    rho = _operand(gen, rho)
    ham = gen.hamiltonian
    out = -1j * (ham @ rho - rho @ ham)
    for jump in gen.jumps:
        out += jump @ rho @ jump.conj().T
    anti = gen.dissipation_sum
    out -= 0.5 * (anti @ rho + rho @ anti)
    return out


@dataclass(frozen=True, eq=False)
class Superoperator:
    mat: np.ndarray
    picture: Picture = Picture.HEISENBERG

    @property
    def dim(self):
        return math.isqrt(self.mat.shape[0])

    @classmethod
    def identity(cls, dim, picture=Picture.HEISENBERG):
        return cls(np.eye(dim * dim, dtype=complex), picture)

    def apply(self, x):
        return unvec(self.mat @ vec(x), self.dim)

    def __matmul__(self, other):
        return Superoperator(self.mat @ other.mat, self.picture)

    def dual(self):
        """Hilbert-Schmidt dual, which switches the picture"""
        return Superoperator(self.mat.conj().T, self.picture.other)

    def choi(self):
        mat = self.mat if self.picture is Picture.SCHRODINGER else self.mat.conj().T
        return choi_matrix(mat)


def to_superoperator(gen, which=Picture.HEISENBERG):
    dim = gen.dim
    eye = np.eye(dim)
    ham = gen.hamiltonian
    anti = gen.dissipation_sum
    sign = 1.0 if which is Picture.HEISENBERG else -1.0
    mat = sign * 1j * (np.kron(eye, ham) - np.kron(ham.T, eye))
    for jump in gen.jumps:
        if which is Picture.HEISENBERG:
            mat += np.kron(jump.T, jump.conj().T)
        else:
            mat += np.kron(jump.conj(), jump)
    mat -= 0.5 * (np.kron(eye, anti) + np.kron(anti.T, eye))
    return Superoperator(mat, which)


def _superop(op, which=Picture.HEISENBERG):
    if isinstance(op, Superoperator):
        if op.picture is which:
            return op
        return op.dual()
    return to_superoperator(op, which)


def semigroup(gen, t, which=Picture.HEISENBERG):
    """``exp(t L)`` in the requested picture; ``t`` must be non-negative"""
    if t < 0:
        raise RejectedInputError("semigroup time must be non-negative, got %r" % (t,))
    superop = _superop(gen, which)
    return Superoperator(scipy.linalg.expm(t * superop.mat), which)


def adjoint_wrt(op, inner):
    """Adjoint of a superoperator for a weighted inner product: ``G^-1 S^* G``"""
    superop = _superop(op)
    gram = inner.gram()
    return Superoperator(inner.gram_inverse() @ superop.mat.conj().T @ gram, superop.picture)


class InvariantStates(NamedTuple):
    kernel: Tuple[np.ndarray, ...]
    state: DensityMatrix


def ergodic_projector(gen, policy=POLICY):
    """Projector onto ``Ker L_*`` along the range (Schroedinger picture)"""
    s_star = to_superoperator(gen, Picture.SCHRODINGER).mat
    right = scipy.linalg.null_space(s_star, rcond=policy.kernel)
    left = scipy.linalg.null_space(s_star.conj().T, rcond=policy.kernel)
    if right.shape[1] == 0:
        raise StructuralError("generator has no invariant state")
    if right.shape[1] != left.shape[1]:
        raise StructuralError(
            "left and right kernels differ in dimension (%d vs %d)" % (left.shape[1], right.shape[1])
        )
    try:
        coupling = np.linalg.solve(left.conj().T @ right, left.conj().T)
    except np.linalg.LinAlgError as exc:
        raise StructuralError("zero eigenvalue of the generator is not semisimple") from exc
    return right, right @ coupling


def ergodic_projection(gen, rho, policy=POLICY):
    """Long-time average of ``rho``, renormalized to trace one"""
    _kernel, projector = ergodic_projector(gen, policy)
    image = hermitian_part(unvec(projector @ vec(np.asarray(rho, dtype=complex)), gen.dim))
    return DensityMatrix.from_matrix(image, normalize=True, policy=policy)


def _as_state(candidate, policy):
    candidate = hermitian_part(candidate)
    trace = np.trace(candidate).real
    if abs(trace) <= policy.trace:
        return None
    candidate = candidate / trace
    if scipy.linalg.eigvalsh(candidate)[0] < -policy.equality:
        return None
    return candidate


def invariant_states(gen, policy=POLICY):
    """Basis of ``Ker L_*`` and a faithful invariant state when one exists"""
    dim = gen.dim
    kernel, projector = ergodic_projector(gen, policy)
    basis = tuple(unvec(col, dim) for col in kernel.T)
    best = _as_state(unvec(projector @ vec(np.eye(dim) / dim), dim), policy)
    if best is None:
        raise StructuralError("ergodic projection of the maximally mixed state is not a state")
    state = DensityMatrix.from_matrix(best, normalize=True, policy=policy)
    if state.faithful:
        return InvariantStates(basis, state)

    # the mixed-state projection already has maximal support, so this rarely helps
    mixture = state.mat.copy()
    for element in basis:
        for part in (hermitian_part(element), hermitian_part(-1j * element)):
            for sign in (1.0, -1.0):
                candidate = _as_state(sign * part, policy)
                if candidate is not None:
                    mixture = mixture + candidate
    state = DensityMatrix.from_matrix(mixture, normalize=True, policy=policy)
    if not state.faithful:
        raise NoFaithfulStateError(
            "no faithful invariant state (best minimal eigenvalue %.3g)" % state.min_eigenvalue, state
        )
    return InvariantStates(basis, state)


def _relative_defect(left, right):
    scale = max(float(np.linalg.norm(left)), float(np.linalg.norm(right)))
    if scale == 0.0:
        return 0.0
    return float(np.linalg.norm(left - right)) / scale


@dataclass(frozen=True, eq=False)
class QmsContext:
    """A generator together with its invariant state and, once known, the reference state"""

    gen: Lindbladian
    sigma_inv: DensityMatrix
    sigma_tr: Optional[DensityMatrix] = None
    reversible: Optional[bool] = None
    dbc: Optional[bool] = None
    doubly_stochastic: Optional[bool] = None

    @classmethod
    def from_generator(cls, gen, policy=POLICY):
        state = invariant_states(gen, policy).state
        check_invariant(gen, state, policy)
        ctx = cls(gen, state, doubly_stochastic=check_doubly_stochastic(gen, policy))
        _logger.debug("Invariant state found, minimal eigenvalue %.3g", state.min_eigenvalue)
        return ctx

    @property
    def dim(self):
        return self.gen.dim

    @cached_property
    def heisenberg(self):
        return to_superoperator(self.gen, Picture.HEISENBERG)

    @cached_property
    def schrodinger(self):
        return to_superoperator(self.gen, Picture.SCHRODINGER)

    def with_reference_state(self, sigma_tr):
        ctx = replace(self, sigma_tr=sigma_tr)
        return replace(ctx, reversible=check_reversible(ctx), dbc=check_dbc(ctx))


def check_invariant(gen, state, policy=POLICY):
    residual = float(np.linalg.norm(apply_predual(gen, state.mat)))
    scale = max(1.0, float(np.linalg.norm(to_superoperator(gen).mat)) / gen.dim)
    if residual > policy.invariance * scale:
        raise StructuralError("state is not invariant (residual %.3g)" % residual)
    return residual


def check_doubly_stochastic(gen, policy=POLICY):
    """``L_*(I) = 0``; accepts a generator or a context"""
    gen = getattr(gen, "gen", gen)
    residual = float(np.linalg.norm(apply_predual(gen, np.eye(gen.dim))))
    scale = max(1.0, float(np.linalg.norm(gen.dissipation_sum)))
    return residual <= policy.kernel * scale


def _self_adjointness(ctx, kind):
    if ctx.sigma_tr is None:
        raise RejectedInputError("reference state is not known yet")
    superop = ctx.heisenberg
    adjoint = adjoint_wrt(superop, WeightedInner(ctx.sigma_tr, kind))
    return _relative_defect(superop.mat, adjoint.mat)


def check_reversible(ctx, policy=POLICY):
    """KMS self-adjointness with respect to the reference state"""
    return _self_adjointness(ctx, InnerKind.KMS) <= policy.equality


def check_dbc(ctx, policy=POLICY):
    """GNS self-adjointness (detailed balance) with respect to the reference state"""
    return _self_adjointness(ctx, InnerKind.GNS) <= policy.equality


class DerivationJump(NamedTuple):
    """Jump of the derivation form: ``sigma V = exp(omega) V sigma``"""

    operator: np.ndarray
    omega: float


def _group_frequencies(omegas, policy):
    """Cluster the modular frequencies of the matrix units ``|u_a><u_b|``"""
    pairs = sorted(np.ndindex(omegas.shape), key=lambda ab: (omegas[ab], ab))
    groups = []
    for pair in pairs:
        value = omegas[pair]
        if groups and abs(value - groups[-1][0]) <= policy.equality * max(1.0, abs(groups[-1][0])):
            groups[-1][1].append(pair)
        else:
            groups.append((value, [pair]))
    return groups


def derivation_dirichlet_matrix(jumps, sigma):
    """Matrix ``M`` with ``sum_j <[V_j, X], [V_j, Y]>_KMS = vec(X)^* M vec(Y)``"""
    gram = WeightedInner(sigma, InnerKind.KMS).gram()
    dim = sigma.dim
    total = np.zeros((dim * dim, dim * dim), dtype=complex)
    for jump in jumps:
        deriv = commutator_superop(jump.operator)
        total += deriv.conj().T @ gram @ deriv
    return total


def dirichlet_matrix(ctx):
    """Matrix of ``E(X, Y) = -<X, L(Y)>_KMS`` for the reference state"""
    gram = WeightedInner(ctx.sigma_tr, InnerKind.KMS).gram()
    return -gram @ ctx.heisenberg.mat


def hamiltonian_residual(superop_mat, policy=POLICY):
    """Fit ``i[H, .]`` to a Heisenberg superoperator; return ``(H, relative residual)``"""
    dim = math.isqrt(superop_mat.shape[0])
    basis = hermitian_basis(dim)
    columns = np.column_stack([(1j * commutator_superop(elem)).reshape(-1) for elem in basis])
    target = superop_mat.reshape(-1)
    design = np.vstack([columns.real, columns.imag])
    rhs = np.concatenate([target.real, target.imag])
    coeffs, *_ = scipy.linalg.lstsq(design, rhs)
    ham = sum(c * elem for c, elem in zip(coeffs, basis))
    fitted = (1j * commutator_superop(ham)).reshape(-1)
    scale = max(1.0, float(np.linalg.norm(target)))
    return ham, float(np.linalg.norm(target - fitted)) / scale


def reconstruct_from_derivations(jumps, dim):
    """GKSL generator (no Hamiltonian) whose dissipator the derivation jumps describe"""
    ops = tuple(np.sqrt(2.0) * np.exp(jump.omega / 4.0) * jump.operator for jump in jumps)
    return Lindbladian(np.zeros((dim, dim), dtype=complex), ops)


def dbc_jump_decomposition(ctx, policy=POLICY):
    """Modular-eigenvector jumps representing the Dirichlet form of a DBC generator"""
    if ctx.sigma_tr is None:
        raise RejectedInputError("reference state is not known yet")
    if not (ctx.dbc if ctx.dbc is not None else check_dbc(ctx, policy)):
        raise UnsupportedStructureError("generator does not satisfy detailed balance for the reference state")
    dim = ctx.dim
    sigma = ctx.sigma_tr
    identity = vec(np.eye(dim)) / np.sqrt(dim)
    traceless = np.eye(dim * dim) - np.outer(identity, identity.conj())
    kossakowski = hermitian_part(traceless @ ctx.schrodinger.choi() @ traceless)
    scale = max(1.0, float(np.linalg.norm(kossakowski)))

    values, vectors = sigma.spectrum
    logs = np.log(values)
    omegas = logs[:, None] - logs[None, :]
    jumps = []
    leakage = kossakowski.copy()
    for omega, pairs in _group_frequencies(omegas, policy):
        basis = np.column_stack([vec(np.outer(vectors[:, a], vectors[:, b].conj())) for a, b in pairs])
        block = hermitian_part(basis.conj().T @ kossakowski @ basis)
        leakage -= basis @ block @ basis.conj().T
        weights, coeffs = scipy.linalg.eigh(block)
        for weight, coeff in zip(weights, coeffs.T):
            if weight <= policy.kernel * scale:
                continue
            jump = np.sqrt(weight) * unvec(basis @ coeff, dim)
            jumps.append(DerivationJump(np.exp(-omega / 4.0) / np.sqrt(2.0) * jump, float(omega)))

    cross = float(np.linalg.norm(leakage)) / scale
    if cross > policy.equality:
        raise UnsupportedStructureError("jump span mixes modular frequencies (leakage %.3g)" % cross)
    residual = derivation_residual(ctx, jumps)
    if residual > 10 * policy.equality:
        raise StructuralError("derivation form does not reproduce the Dirichlet form (residual %.3g)" % residual)
    _logger.debug("Derivation decomposition: %d jumps, residual %.3g", len(jumps), residual)
    return jumps


def derivation_residual(ctx, jumps):
    target = dirichlet_matrix(ctx)
    rebuilt = derivation_dirichlet_matrix(jumps, ctx.sigma_tr)
    return float(np.linalg.norm(target - rebuilt)) / max(1.0, float(np.linalg.norm(target)))
