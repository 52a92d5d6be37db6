"""Decoherence-free algebra, its block structure and the conditional expectations.

The algebra is computed as the commutant of the iterated commutators
``[H, .]^n`` of the jump operators and their adjoints, then checked a
posteriori. Its block decomposition ``W^* N W = sum_i B(H_i) kron I_{K_i}``
fixes the reference state ``sigma_tr`` and the conditional expectations.
"""
import logging
import math
from dataclasses import dataclass, replace
from functools import cached_property
from typing import NamedTuple, Optional, Tuple

import numpy as np
import scipy.linalg

from .exceptions import DecompositionError, RejectedInputError, StructuralError
from .lindblad import Picture, QmsContext, Superoperator, apply_predual, semigroup
from .matops import (
    POLICY,
    DensityMatrix,
    InnerKind,
    WeightedInner,
    commutator_superop,
    hermitian_part,
    unvec,
    vec,
)

_logger = logging.getLogger("qms-deco")

CLOSURE_FULL_CHECK = 32
CLOSURE_SAMPLES = 16


@dataclass(frozen=True, eq=False)
class Block:
    dim_h: int
    dim_k: int
    tau: Optional[DensityMatrix] = None
    weight: Optional[float] = None

    @property
    def size(self):
        return self.dim_h * self.dim_k


@dataclass(frozen=True, eq=False)
class BlockStructure:
    """Blocks ``H_i kron K_i`` and the unitary ``W`` whose columns list them in order"""

    blocks: Tuple[Block, ...]
    basis: np.ndarray

    def __post_init__(self):
        basis = np.asarray(self.basis, dtype=complex)
        dim = sum(block.size for block in self.blocks)
        if basis.shape != (dim, dim):
            raise RejectedInputError("block sizes add up to %d but the basis has shape %s" % (dim, basis.shape))
        if np.linalg.norm(basis.conj().T @ basis - np.eye(dim)) > POLICY.kernel * dim:
            raise RejectedInputError("block basis is not unitary")
        object.__setattr__(self, "basis", basis)
        object.__setattr__(self, "blocks", tuple(self.blocks))

    @classmethod
    def from_taus(cls, taus, dim_h=None, basis=None):
        """Structure from a list of ``tau_i`` (the multiplicity states) and block dimensions"""
        taus = [tau if isinstance(tau, DensityMatrix) else DensityMatrix.from_matrix(tau) for tau in taus]
        dim_h = dim_h or [1] * len(taus)
        if len(dim_h) != len(taus):
            raise RejectedInputError("got %d block dimensions for %d blocks" % (len(dim_h), len(taus)))
        for tau in taus:
            if not tau.faithful:
                raise RejectedInputError("multiplicity state is not faithful")
        blocks = tuple(Block(int(h), tau.dim, tau) for h, tau in zip(dim_h, taus))
        dim = sum(block.size for block in blocks)
        return cls(blocks, np.eye(dim, dtype=complex) if basis is None else basis)

    @property
    def dim(self):
        return self.basis.shape[0]

    @property
    def dim_algebra(self):
        return sum(block.dim_h**2 for block in self.blocks)

    @cached_property
    def slices(self):
        out, start = [], 0
        for block in self.blocks:
            out.append(slice(start, start + block.size))
            start += block.size
        return tuple(out)

    @cached_property
    def projections(self):
        return tuple(self.basis[:, sl] @ self.basis[:, sl].conj().T for sl in self.slices)

    def to_local(self, mat):
        return self.basis.conj().T @ mat @ self.basis

    def to_global(self, mat):
        return self.basis @ mat @ self.basis.conj().T

    def algebra_part(self, local):
        """Closest ``sum_i a_i kron I_{K_i}`` to a matrix given in the block basis"""
        out = np.zeros_like(local)
        for block, sl in zip(self.blocks, self.slices):
            tensor = local[sl, sl].reshape(block.dim_h, block.dim_k, block.dim_h, block.dim_k)
            reduced = np.einsum("ikjk->ij", tensor) / block.dim_k
            out[sl, sl] = np.kron(reduced, np.eye(block.dim_k))
        return out

    def summary(self):
        return {
            "dim_algebra": self.dim_algebra,
            "blocks": [
                {
                    "dim_h": block.dim_h,
                    "dim_k": block.dim_k,
                    "weight": block.weight,
                    "tau_eigenvalues": None if block.tau is None else [float(v) for v in block.tau.eigenvalues],
                }
                for block in self.blocks
            ],
        }


def _compress(stacked, ncols):
    (upper,) = scipy.linalg.qr(stacked, mode="r")
    return upper[:ncols]


def _joint_null_space(row_blocks, ncols, policy):
    """Null space of a tall stack of blocks, compressing the stack with QR as it grows"""
    reduced = np.zeros((0, ncols), dtype=complex)
    pending, rows = [], 0
    for block in row_blocks:
        pending.append(block)
        rows += block.shape[0]
        if rows > 4 * ncols:
            reduced = _compress(np.vstack([reduced] + pending), ncols)
            pending, rows = [], 0
    stacked = np.vstack([reduced] + pending)
    if not stacked.any():
        return np.eye(ncols, dtype=complex)
    return scipy.linalg.null_space(stacked, rcond=policy.kernel)


def _dissipative_span(gen, policy):
    """Smallest ``[H, .]``-invariant subspace containing every jump and its adjoint"""
    ops = [op for jump in gen.jumps for op in (jump, jump.conj().T)]
    if not ops:
        return np.zeros((gen.dim**2, 0), dtype=complex)
    span = scipy.linalg.orth(np.column_stack([vec(op) for op in ops]), rcond=policy.kernel)
    derivation = commutator_superop(gen.hamiltonian)
    while span.shape[1]:
        grown = scipy.linalg.orth(np.hstack([span, derivation @ span]), rcond=policy.kernel)
        if grown.shape[1] == span.shape[1]:
            break
        span = grown
    return span


def _check_closure(vecs, dim, rng, policy):
    projector = vecs @ vecs.conj().T
    count = vecs.shape[1]
    if count <= CLOSURE_FULL_CHECK:
        pairs = [(i, j) for i in range(count) for j in range(count)]
    else:
        pairs = [tuple(rng.integers(count, size=2)) for _ in range(CLOSURE_SAMPLES)]
    worst = 0.0
    for i, j in pairs:
        left, right = unvec(vecs[:, i], dim), unvec(vecs[:, j], dim)
        for product in (left @ right, left.conj().T):
            flat = vec(product)
            worst = max(worst, float(np.linalg.norm(flat - projector @ flat)))
    if worst > 10 * policy.invariance:
        raise StructuralError("computed algebra is not closed under products (defect %.3g)" % worst)
    return worst


def _check_automorphic(gen, vecs, sigma, rng, policy):
    """The semigroup must act isometrically on the algebra in the GNS product"""
    gram = WeightedInner(sigma, InnerKind.GNS).gram()
    reference = vecs.conj().T @ gram @ vecs
    worst = 0.0
    for t in rng.uniform(0.1, 2.0, size=2):
        images = semigroup(gen, float(t)).mat @ vecs
        worst = max(worst, float(np.linalg.norm(images.conj().T @ gram @ images - reference)))
    if worst > policy.equality * max(1.0, float(np.linalg.norm(reference))):
        raise StructuralError("semigroup is not isometric on the computed algebra (defect %.3g)" % worst)
    return worst


def df_algebra_basis(gen, sigma_inv=None, seed=0, policy=POLICY):
    """Hilbert-Schmidt orthonormal basis of the decoherence-free algebra"""
    dim = gen.dim
    span = _dissipative_span(gen, policy)
    null = _joint_null_space((commutator_superop(unvec(col, dim)) for col in span.T), dim * dim, policy)
    rng = np.random.default_rng(seed)
    _check_closure(null, dim, rng, policy)
    if sigma_inv is not None:
        _check_automorphic(gen, null, sigma_inv, rng, policy)
    _logger.debug("Decoherence-free algebra has dimension %d", null.shape[1])
    return tuple(unvec(col, dim) for col in null.T)


def _clusters(values, policy):
    spread = max(1.0, float(values[-1] - values[0]))
    groups = [[0]]
    for idx in range(1, values.size):
        if values[idx] - values[idx - 1] <= policy.equality * spread:
            groups[-1].append(idx)
        else:
            groups.append([idx])
    return groups


def _generic_hermitian(elements, rng):
    total = np.zeros_like(elements[0])
    for elem in elements:
        total += rng.normal() * hermitian_part(elem) + rng.normal() * hermitian_part(1j * elem)
    return hermitian_part(total)


def _factorize(basis, frame, rng, policy):
    """Split one central block into ``B(H) kron I_K``; returns local columns"""
    size = frame.shape[1]
    restricted = [frame.conj().T @ elem @ frame for elem in basis]
    span = scipy.linalg.orth(np.column_stack([vec(elem) for elem in restricted]), rcond=policy.kernel)
    rank = span.shape[1]
    dim_h = math.isqrt(rank)
    if dim_h * dim_h != rank or size % dim_h:
        raise DecompositionError("block of size %d carries an algebra of dimension %d" % (size, rank))
    dim_k = size // dim_h
    elements = [unvec(col, size) for col in span.T]
    values, vectors = scipy.linalg.eigh(_generic_hermitian(elements, rng))
    groups = _clusters(values, policy)
    if len(groups) != dim_h or any(len(group) != dim_k for group in groups):
        raise DecompositionError("generic element has degenerate spectrum on a factor block")

    mixer = sum((rng.normal() + 1j * rng.normal()) * elem for elem in elements)
    first = vectors[:, groups[0]]
    aligned = [first]
    for group in groups[1:]:
        columns = vectors[:, group]
        overlap = columns.conj().T @ mixer @ first
        scale = math.sqrt(max(float(np.trace(overlap.conj().T @ overlap).real) / dim_k, 0.0))
        if scale <= policy.kernel:
            raise DecompositionError("could not align multiplicity spaces")
        aligned.append(columns @ (overlap / scale))
    return dim_h, dim_k, frame @ np.hstack(aligned)


def _decompose_once(basis, sigma, rng, policy):
    dim = basis[0].shape[0]
    vecs = np.column_stack([vec(elem) for elem in basis])
    coeffs = _joint_null_space((commutator_superop(elem) @ vecs for elem in basis), len(basis), policy)
    center = [unvec(vecs @ col, dim) for col in coeffs.T]
    values, vectors = scipy.linalg.eigh(_generic_hermitian(center, rng))
    groups = _clusters(values, policy)
    if len(groups) != len(center):
        raise DecompositionError(
            "found %d central projections for a %d-dimensional center" % (len(groups), len(center))
        )

    pieces = []
    for group in groups:
        dim_h, dim_k, columns = _factorize(basis, vectors[:, group], rng, policy)
        diag = np.sum(np.abs(columns) ** 2, axis=1)
        weight = 0.0 if sigma is None else float(np.trace(columns.conj().T @ sigma.mat @ columns).real)
        pieces.append((dim_h, dim_k, round(weight, 12), int(np.argmax(diag)), columns))
    pieces.sort(key=lambda piece: (-piece[0], -piece[1], -piece[2], piece[3]))

    blocks = tuple(Block(h, k, weight=w if sigma is not None else None) for h, k, w, _anchor, _cols in pieces)
    structure = BlockStructure(blocks, np.hstack([piece[4] for piece in pieces]))
    _check_leakage(structure, basis, policy)
    return structure


def _check_leakage(structure, basis, policy):
    worst = 0.0
    for elem in basis:
        local = structure.to_local(elem)
        defect = float(np.linalg.norm(local - structure.algebra_part(local)))
        worst = max(worst, defect / max(1.0, float(np.linalg.norm(elem))))
    if worst > policy.equality:
        raise DecompositionError("off-block leakage %.3g after block decomposition" % worst)
    return worst


def block_decompose(basis, sigma=None, seed=0, policy=POLICY):
    """Minimal central projections and factor splitting of a finite-dimensional *-algebra"""
    if not basis:
        raise RejectedInputError("empty algebra basis")
    rng = np.random.default_rng(seed)
    for attempt in range(2):
        try:
            return _decompose_once(basis, sigma, rng, policy)
        except DecompositionError as exc:
            if attempt:
                raise
            _logger.warning("Block decomposition failed (%s), resampling generic elements", exc)


def extract_taus(structure, sigma_inv, policy=POLICY):
    """Read off ``p_i`` and ``tau_i`` from ``sigma = sum p_i sigma_i kron tau_i``"""
    local = structure.to_local(sigma_inv.mat)
    mask = np.zeros(local.shape, dtype=bool)
    for sl in structure.slices:
        mask[sl, sl] = True
    off_block = float(np.linalg.norm(np.where(mask, 0.0, local)))
    if off_block > policy.equality:
        raise StructuralError("invariant state has off-block entries (%.3g)" % off_block)

    blocks = []
    for block, sl in zip(structure.blocks, structure.slices):
        piece = local[sl, sl]
        weight = float(np.trace(piece).real)
        if weight <= policy.faithful:
            raise StructuralError("invariant state has no weight on a block")
        tensor = (piece / weight).reshape(block.dim_h, block.dim_k, block.dim_h, block.dim_k)
        sigma_h = np.einsum("ikjk->ij", tensor)
        tau = np.einsum("ikil->kl", tensor)
        defect = float(np.linalg.norm(piece / weight - np.kron(sigma_h, tau)))
        if defect > policy.equality:
            raise StructuralError("invariant state is not a product on a block (defect %.3g)" % defect)
        blocks.append(replace(block, tau=DensityMatrix.from_matrix(tau, normalize=True, policy=policy), weight=weight))
    return replace(structure, blocks=tuple(blocks))


def sigma_tr(structure):
    """Reference state ``sum_i (dim K_i / d) I_{H_i} kron tau_i``, the image of ``I/d``"""
    local = np.zeros((structure.dim, structure.dim), dtype=complex)
    for block, sl in zip(structure.blocks, structure.slices):
        local[sl, sl] = block.dim_k / structure.dim * np.kron(np.eye(block.dim_h), block.tau.mat)
    return DensityMatrix.from_matrix(hermitian_part(structure.to_global(local)), normalize=True)


@dataclass(frozen=True, eq=False)
class ConditionalExpectation:
    structure: BlockStructure

    def __post_init__(self):
        if any(block.tau is None for block in self.structure.blocks):
            raise RejectedInputError("conditional expectation needs every tau_i")

    @property
    def dim(self):
        return self.structure.dim

    def apply(self, x):
        """``E_N``: block-wise ``Tr_tau`` followed by ``kron I_K``"""
        struct = self.structure
        local = struct.to_local(np.asarray(x, dtype=complex))
        out = np.zeros_like(local)
        for block, sl in zip(struct.blocks, struct.slices):
            tensor = local[sl, sl].reshape(block.dim_h, block.dim_k, block.dim_h, block.dim_k)
            reduced = np.einsum("iljk,kl->ij", tensor, block.tau.mat)
            out[sl, sl] = np.kron(reduced, np.eye(block.dim_k))
        return struct.to_global(out)

    def apply_predual(self, rho):
        """``E_N*``: block-wise partial trace over ``K_i`` followed by ``kron tau_i``"""
        struct = self.structure
        local = struct.to_local(np.asarray(rho, dtype=complex))
        out = np.zeros_like(local)
        for block, sl in zip(struct.blocks, struct.slices):
            tensor = local[sl, sl].reshape(block.dim_h, block.dim_k, block.dim_h, block.dim_k)
            out[sl, sl] = np.kron(np.einsum("ikjk->ij", tensor), block.tau.mat)
        return struct.to_global(out)

    def _superop(self, func, picture):
        dim = self.dim
        columns = [vec(func(unvec(unit, dim))) for unit in np.eye(dim * dim, dtype=complex)]
        return Superoperator(np.column_stack(columns), picture)

    @cached_property
    def heisenberg(self):
        return self._superop(self.apply, Picture.HEISENBERG)

    @cached_property
    def schrodinger(self):
        return self._superop(self.apply_predual, Picture.SCHRODINGER)

    @cached_property
    def sigma_tr(self):
        return sigma_tr(self.structure)

    def verify(self):
        """Residuals of the defining properties, keyed by name"""
        dim = self.dim
        heis = self.heisenberg.mat
        schro = self.schrodinger.mat
        sigma = self.sigma_tr.mat
        identity = np.eye(dim)
        return {
            "idempotent": float(np.linalg.norm(heis @ heis - heis)),
            "unital": float(np.linalg.norm(self.apply(identity) - identity)),
            "completely_positive": max(0.0, -float(scipy.linalg.eigvalsh(hermitian_part(self.schrodinger.choi()))[0])),
            "trace_preserving": float(np.linalg.norm(vec(identity).conj() @ schro - vec(identity).conj())),
            "duality": float(np.linalg.norm(schro - heis.conj().T)),
            "compatible": float(np.linalg.norm(vec(sigma).conj() @ heis - vec(sigma).conj())),
        }


def conditional_expectations(structure):
    return ConditionalExpectation(structure)


class Decomposition(NamedTuple):
    ctx: QmsContext
    algebra: Tuple[np.ndarray, ...]
    structure: BlockStructure
    cond: ConditionalExpectation


def _decay_rate(superop, policy):
    """Slowest decay rate of the generator off its purely oscillating part"""
    rates = -np.linalg.eigvals(superop).real
    threshold = policy.invariance * max(1.0, float(np.linalg.norm(superop)))
    decaying = rates[rates > threshold]
    return float(decaying.min()) if decaying.size else None


def _check_decay(ctx, cond, policy):
    rate = _decay_rate(ctx.heisenberg.mat, policy)
    if rate is None:
        return 0.0
    horizon = 50.0 / rate
    complement = np.eye(ctx.dim**2) - cond.heisenberg.mat
    residual = float(np.linalg.norm(semigroup(ctx.gen, horizon).mat @ complement, 2))
    if residual > policy.decay_residual:
        raise StructuralError("complement of the algebra does not decay (norm %.3g at t=%.3g)" % (residual, horizon))
    return residual


def decompose(gen, seed=0, sigma_inv=None, policy=POLICY):
    """Full structure analysis: invariant state, algebra, blocks, ``sigma_tr`` and ``E_N``"""
    ctx = QmsContext.from_generator(gen, policy)
    if sigma_inv is not None:
        ctx = replace(ctx, sigma_inv=sigma_inv)
    algebra = df_algebra_basis(gen, ctx.sigma_inv, seed=seed, policy=policy)
    structure = block_decompose(algebra, ctx.sigma_inv, seed=seed, policy=policy)
    structure = extract_taus(structure, ctx.sigma_inv, policy)
    if structure.dim_algebra != len(algebra):
        raise DecompositionError(
            "blocks describe an algebra of dimension %d, computed %d" % (structure.dim_algebra, len(algebra))
        )
    cond = ConditionalExpectation(structure)
    reference = cond.sigma_tr

    residual = float(np.linalg.norm(apply_predual(gen, reference.mat)))
    if residual > policy.invariance * max(1.0, float(np.linalg.norm(ctx.heisenberg.mat)) / gen.dim):
        raise StructuralError("reference state is not invariant (residual %.3g)" % residual)
    for elem in algebra:
        defect = float(np.linalg.norm(reference.mat @ elem - elem @ reference.mat))
        if defect > policy.invariance:
            raise StructuralError("algebra leaves the centralizer of the reference state (%.3g)" % defect)

    ctx = ctx.with_reference_state(reference)
    _check_decay(ctx, cond, policy)
    _logger.info(
        "Decoherence-free algebra: dimension %d, %d block(s), reversible=%s, detailed balance=%s",
        len(algebra),
        len(structure.blocks),
        ctx.reversible,
        ctx.dbc,
    )
    return Decomposition(ctx, algebra, structure, cond)
