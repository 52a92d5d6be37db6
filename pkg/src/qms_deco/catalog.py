"""Ready-made generators: decoherence, depolarizing, bipartite, diagonal and projection models."""
import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Mapping, Optional, Tuple

import numpy as np
import scipy.linalg

from .dfstructure import BlockStructure, ConditionalExpectation
from .exceptions import RejectedInputError, StructuralError
from .lindblad import Lindbladian
from .matops import (
    POLICY,
    DensityMatrix,
    as_matrix,
    check_hermitian,
    hermitian_part,
    kraus_from_choi,
    random_hermitian,
)

_logger = logging.getLogger("qms-deco")


class ModelKind(Enum):
    DECO = "deco"
    DEPOLARIZING = "depolarizing"
    BIPARTITE = "bipartite"
    DIAGONAL_GAMMA = "diagonal_gamma"
    GENERIC_CONDITIONAL = "generic_conditional"
    RANDOM = "random"


@dataclass(frozen=True)
class ModelSpec:
    kind: ModelKind
    params: Mapping[str, Any] = field(default_factory=dict)


@dataclass(frozen=True, eq=False)
class Model:
    gen: Lindbladian
    name: str
    split: Optional[Tuple[int, int]] = None
    inner: Optional[Lindbladian] = None
    spec: Optional[ModelSpec] = None

    @property
    def dim(self):
        return self.gen.dim


def _rate(gamma):
    gamma = float(gamma)
    if not gamma > 0:
        raise RejectedInputError("rate must be positive, got %r" % (gamma,))
    return gamma


def build_deco(dim, gamma):
    """Pure dephasing in the computational basis: ``L_*(rho) = gamma (diag(rho) - rho)``"""
    dim = int(dim)
    if dim < 2:
        raise RejectedInputError("decoherence model needs d >= 2, got %d" % dim)
    root = np.sqrt(_rate(gamma))
    jumps = []
    for idx in range(dim):
        proj = np.zeros((dim, dim), dtype=complex)
        proj[idx, idx] = root
        jumps.append(proj)
    return Lindbladian(np.zeros((dim, dim), dtype=complex), tuple(jumps))


def build_depolarizing(tau, gamma):
    """``L_*(rho) = gamma (tau Tr[rho] - rho)`` through jumps ``sqrt(gamma t_j) |psi_j><i|``"""
    if not isinstance(tau, DensityMatrix):
        tau = DensityMatrix.from_matrix(tau)
    if not tau.faithful:
        raise RejectedInputError("depolarizing target state must be faithful")
    gamma = _rate(gamma)
    values, vectors = tau.spectrum
    dim = tau.dim
    jumps = []
    for weight, psi in zip(values, vectors.T):
        for idx in range(dim):
            op = np.zeros((dim, dim), dtype=complex)
            op[:, idx] = np.sqrt(gamma * weight) * psi
            jumps.append(op)
    return Lindbladian(np.zeros((dim, dim), dtype=complex), tuple(jumps))


def build_bipartite(hamiltonian_a, inner):
    """``i[H_A kron I, .] + I kron L_inner`` on ``H_A kron H_B``"""
    ham_a = check_hermitian(hamiltonian_a, "hamiltonian_a")
    eye_a = np.eye(ham_a.shape[0])
    eye_b = np.eye(inner.dim)
    ham = np.kron(ham_a, eye_b) + np.kron(eye_a, inner.hamiltonian)
    return Lindbladian(ham, tuple(np.kron(eye_a, jump) for jump in inner.jumps))


def _validate_gamma(gamma_matrix, policy):
    gamma_matrix = as_matrix(gamma_matrix, "gamma matrix")
    if not np.allclose(gamma_matrix, gamma_matrix.conj().T, atol=policy.hermitian, rtol=0.0):
        raise RejectedInputError("gamma matrix must be Hermitian as a coefficient matrix")
    if np.max(np.abs(np.diag(gamma_matrix))) > policy.hermitian:
        raise RejectedInputError("gamma matrix must have a zero diagonal")
    off = ~np.eye(gamma_matrix.shape[0], dtype=bool)
    if np.any(gamma_matrix.real[off] >= 0):
        raise RejectedInputError("off-diagonal gamma entries need a negative real part")
    return gamma_matrix


def build_diagonal_gamma(gamma_matrix, policy=POLICY):
    """Generator with ``L(|e_i><e_j|) = gamma_ij |e_i><e_j|``

    Realized by diagonal jumps ``sum_k l_i(k) |e_i><e_i|`` and a diagonal Hamiltonian.
    The rates are realizable exactly when ``C = P Gamma P`` is positive semidefinite,
    ``P`` being the projection orthogonal to the all-ones vector.
    """
    gamma_matrix = _validate_gamma(gamma_matrix, policy)
    dim = gamma_matrix.shape[0]
    ones = np.ones(dim) / np.sqrt(dim)
    proj = np.eye(dim) - np.outer(ones, ones)
    coupling = hermitian_part(proj @ gamma_matrix @ proj)
    values, vectors = scipy.linalg.eigh(coupling)
    scale = max(1.0, float(np.linalg.norm(gamma_matrix)))
    if values[0] < -policy.kernel * scale:
        err = StructuralError(
            "rates are not realizable by a GKSL generator (certificate eigenvalue %.3g)" % values[0]
        )
        err.certificate = vectors[:, 0]
        raise err

    center = ones.conj() @ gamma_matrix @ ones
    shift = -(2.0 / np.sqrt(dim)) * (gamma_matrix @ ones - 0.5 * center * ones)
    ham = np.diag(-shift.imag / 2.0).astype(complex)
    jumps = tuple(
        np.diag(np.sqrt(val) * vecs.conj()) for val, vecs in zip(values, vectors.T) if val > policy.kernel * scale
    )
    return Lindbladian(ham, jumps)


def build_generic_conditional(structure, gamma, policy=POLICY):
    """``L(X) = gamma (E_N(X) - X)`` from the Kraus operators of ``E_N``"""
    gamma = _rate(gamma)
    if not isinstance(structure, ConditionalExpectation):
        if not isinstance(structure, BlockStructure):
            raise RejectedInputError("expected a block structure or conditional expectation")
        structure = ConditionalExpectation(structure)
    residuals = structure.verify()
    worst = max(residuals["idempotent"], residuals["unital"], residuals["completely_positive"])
    if worst > policy.equality:
        raise StructuralError("map is not a completely positive unital projection (defect %.3g)" % worst)
    kraus = kraus_from_choi(structure.schrodinger.choi(), policy)
    root = np.sqrt(gamma)
    dim = structure.dim
    return Lindbladian(np.zeros((dim, dim), dtype=complex), tuple(root * op for op in kraus))


def build_random(dim, n_jumps, rng, hamiltonian=True):
    """Seeded generic generator, primitive with probability one"""
    dim = int(dim)
    jumps = tuple(
        (rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))) / np.sqrt(2 * dim) for _ in range(n_jumps)
    )
    ham = random_hermitian(dim, rng, scale=0.5) if hamiltonian else np.zeros((dim, dim), dtype=complex)
    return Lindbladian(ham, jumps)


def build(spec):
    """Model for a ``ModelSpec``; parameter names match the model-file builders"""
    params = dict(spec.params)
    kind = spec.kind
    try:
        if kind is ModelKind.DECO:
            dim = int(params["d"])
            gen = build_deco(dim, params.get("gamma", 1.0))
            return Model(gen, "deco-%d" % dim, spec=spec)
        if kind is ModelKind.DEPOLARIZING:
            gen = build_depolarizing(params["tau"], params.get("gamma", 1.0))
            return Model(gen, "depolarizing-%d" % gen.dim, spec=spec)
        if kind is ModelKind.BIPARTITE:
            inner = params["inner"]
            inner_gen = inner.gen if isinstance(inner, Model) else inner
            gen = build_bipartite(params["hamiltonian_a"], inner_gen)
            split = (gen.dim // inner_gen.dim, inner_gen.dim)
            return Model(gen, "bipartite-%dx%d" % split, split=split, inner=inner_gen, spec=spec)
        if kind is ModelKind.DIAGONAL_GAMMA:
            gen = build_diagonal_gamma(params["gamma_matrix"])
            return Model(gen, "diagonal-gamma-%d" % gen.dim, spec=spec)
        if kind is ModelKind.GENERIC_CONDITIONAL:
            structure = BlockStructure.from_taus(params["taus"], params.get("dim_h"), params.get("basis"))
            gen = build_generic_conditional(structure, params.get("gamma", 1.0))
            return Model(gen, "conditional-%d" % gen.dim, spec=spec)
        if kind is ModelKind.RANDOM:
            rng = np.random.default_rng(int(params.get("seed", 0)))
            gen = build_random(params["d"], int(params.get("jumps", 2)), rng, bool(params.get("hamiltonian", True)))
            return Model(gen, "random-%d" % gen.dim, spec=spec)
    except KeyError as exc:
        raise RejectedInputError("%s model is missing parameter %s" % (kind.value, exc)) from None
    raise RejectedInputError("unknown model kind %r" % (kind,))
