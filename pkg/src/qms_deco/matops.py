"""Dense complex matrix core.

Superoperators act on column-stacked vectors, ``vec(A X B) = (B^T kron A) vec(X)``.
Nothing in here knows about generators; it is pure linear algebra on numpy arrays.
"""
import logging
import math
from dataclasses import dataclass
from enum import Enum
from functools import cached_property
from typing import Callable, Optional

import numpy as np
import scipy.linalg

from .exceptions import DomainError, RejectedInputError

_logger = logging.getLogger("qms-deco")


@dataclass(frozen=True)
class NumericPolicy:
    hermitian: float = 1e-12
    psd_slack: float = 1e-12
    trace: float = 1e-12
    faithful: float = 1e-10
    equality: float = 1e-8
    kernel: float = 1e-10
    degenerate: float = 1e-10
    positive_definite: float = 1e-12
    entropy_floor: float = 1e-14
    invariance: float = 1e-9
    decay_residual: float = 1e-6
    rayleigh: float = 1e-7
    regularity_slack: float = 1e-8
    production: float = 1e-9
    df_entropy_floor: float = 1e-10
    mutual_information_floor: float = 1e-8
    entropy_cutoff: float = 1e-8


POLICY = NumericPolicy()


def as_matrix(value, name="matrix"):
    mat = np.asarray(value, dtype=complex)
    if mat.ndim != 2 or mat.shape[0] != mat.shape[1] or mat.shape[0] == 0:
        raise RejectedInputError("%s must be a non-empty square matrix, got shape %s" % (name, mat.shape))
    return mat


def dagger(mat):
    return mat.conj().T


def hermitian_part(mat):
    return 0.5 * (mat + mat.conj().T)


def commutator(a, b):
    return a @ b - b @ a


def hermiticity_defect(mat):
    return float(np.max(np.abs(mat - mat.conj().T), initial=0.0))


def is_hermitian(mat, policy=POLICY):
    scale = max(1.0, float(np.linalg.norm(mat)))
    return hermiticity_defect(mat) <= policy.hermitian * scale


def check_hermitian(value, name="matrix", policy=POLICY):
    """Validate ``value`` and return its exactly Hermitian part"""
    mat = as_matrix(value, name)
    if not is_hermitian(mat, policy):
        raise RejectedInputError("%s is not Hermitian (defect %.3g)" % (name, hermiticity_defect(mat)))
    return hermitian_part(mat)


def eig_hermitian(value, policy=POLICY):
    """Ascending eigenvalues and orthonormal eigenvectors (columns)"""
    mat = check_hermitian(value, policy=policy)
    return scipy.linalg.eigh(mat)


class Domain(Enum):
    REAL = "real"
    NONNEGATIVE = "nonnegative"
    POSITIVE = "positive"


@dataclass(frozen=True)
class ScalarFunction:
    """A real function lifted to Hermitian matrices by spectral calculus"""

    name: str
    func: Callable[[np.ndarray], np.ndarray]
    derivative: Optional[Callable[[np.ndarray], np.ndarray]] = None
    domain: Domain = Domain.REAL

    def __call__(self, values):
        return self.func(values)

    def admit(self, eigenvalues, policy=POLICY):
        if self.domain is Domain.POSITIVE:
            bad = eigenvalues[eigenvalues <= policy.positive_definite]
            if bad.size:
                raise DomainError("%s needs a positive definite argument" % self.name, float(bad[0]))
        elif self.domain is Domain.NONNEGATIVE:
            bad = eigenvalues[eigenvalues < -policy.psd_slack]
            if bad.size:
                raise DomainError("%s needs a positive semidefinite argument" % self.name, float(bad[0]))
            eigenvalues = np.clip(eigenvalues, 0.0, None)
        return eigenvalues


def _xlogx(values):
    values = np.asarray(values, dtype=float)
    out = np.zeros_like(values)
    mask = values > 0
    out[mask] = values[mask] * np.log(values[mask])
    return out


def _xlogx_derivative(values):
    return np.log(np.maximum(values, np.finfo(float).tiny)) + 1.0


LOG = ScalarFunction("log", np.log, np.reciprocal, Domain.POSITIVE)
EXP = ScalarFunction("exp", np.exp, np.exp, Domain.REAL)
SQRT = ScalarFunction("sqrt", np.sqrt, lambda x: 0.5 / np.sqrt(x), Domain.POSITIVE)
INV = ScalarFunction("inv", np.reciprocal, lambda x: -1.0 / (x * x), Domain.POSITIVE)
XLOGX = ScalarFunction("xlogx", _xlogx, _xlogx_derivative, Domain.NONNEGATIVE)

NAMED_FUNCTIONS = {fn.name: fn for fn in (LOG, EXP, SQRT, INV, XLOGX)}


def power(exponent):
    """``x ** exponent``; fractional exponents below one need a positive definite argument"""
    exponent = float(exponent)
    if exponent.is_integer() and exponent >= 0:
        domain = Domain.REAL
    elif exponent < 1:
        domain = Domain.POSITIVE
    else:
        domain = Domain.NONNEGATIVE

    if exponent == 0:
        return ScalarFunction("x^0", np.ones_like, np.zeros_like, domain)
    return ScalarFunction(
        "x^%g" % exponent,
        lambda x: np.power(x, exponent),
        lambda x: exponent * np.power(x, exponent - 1.0),
        domain,
    )


def resolve_function(func):
    if isinstance(func, ScalarFunction):
        return func
    if isinstance(func, str):
        try:
            return NAMED_FUNCTIONS[func]
        except KeyError:
            raise RejectedInputError(
                "Unknown scalar function %r, choose one of %s" % (func, ", ".join(sorted(NAMED_FUNCTIONS)))
            ) from None
    if callable(func):
        return ScalarFunction(getattr(func, "__name__", "custom"), func)
    raise RejectedInputError("Not a scalar function: %r" % (func,))


def matfunc(value, func, policy=POLICY):
    """Apply ``func`` to the spectrum of a Hermitian matrix"""
    fn = resolve_function(func)
    eigvals, eigvecs = eig_hermitian(value, policy)
    eigvals = fn.admit(eigvals, policy)
    return (eigvecs * fn(eigvals)) @ eigvecs.conj().T


def first_divided_differences(func, xs, ys, policy=POLICY):
    """Matrix of ``f[x_a, y_b]`` with the derivative on (near) coincident points"""
    fn = resolve_function(func)
    if fn.derivative is None:
        raise RejectedInputError("%s has no registered derivative" % fn.name)
    diff = xs[:, None] - ys[None, :]
    close = np.abs(diff) <= policy.degenerate * np.maximum(1.0, np.abs(xs))[:, None]
    safe = np.where(close, 1.0, diff)
    quotient = (fn(xs)[:, None] - fn(ys)[None, :]) / safe
    slope = np.broadcast_to(fn.derivative(xs)[:, None], diff.shape)
    return np.where(close, slope, quotient)


def divided_difference_rep(x_mat, y_mat, func, operand, policy=POLICY):
    """Frechet-type map ``Z -> sum f[x_a, y_b] P_a Z Q_b`` over the spectral projections"""
    fn = resolve_function(func)
    xs, u = eig_hermitian(x_mat, policy)
    ys, w = eig_hermitian(y_mat, policy)
    xs = fn.admit(xs, policy)
    ys = fn.admit(ys, policy)
    operand = np.asarray(operand, dtype=complex)
    if operand.shape != (xs.size, ys.size):
        raise RejectedInputError("operand shape %s does not match %s" % (operand.shape, (xs.size, ys.size)))
    weights = first_divided_differences(fn, xs, ys, policy)
    return u @ (weights * (u.conj().T @ operand @ w)) @ w.conj().T


def theta_map(sigma, operand, policy=POLICY):
    """Derivative of the matrix logarithm at a faithful state, applied to ``operand``"""
    mat = sigma.mat if isinstance(sigma, DensityMatrix) else as_matrix(sigma, "sigma")
    lowest = scipy.linalg.eigvalsh(hermitian_part(mat))[0]
    if lowest <= policy.faithful:
        raise DomainError("theta map needs a faithful state", float(lowest))
    return divided_difference_rep(mat, mat, LOG, operand, policy)


@dataclass(frozen=True, eq=False)
class DensityMatrix:
    mat: np.ndarray
    faithful: bool

    @classmethod
    def from_matrix(cls, value, normalize=False, policy=POLICY):
        mat = check_hermitian(value, "state", policy)
        trace = float(np.trace(mat).real)
        if normalize:
            if trace <= policy.trace:
                raise RejectedInputError("cannot normalize a matrix with trace %.3g" % trace)
            mat = mat / trace
        elif abs(trace - 1.0) > policy.trace:
            raise RejectedInputError("state has trace %.15g" % trace)
        lowest = float(scipy.linalg.eigvalsh(mat)[0])
        if lowest < -policy.psd_slack:
            raise RejectedInputError("state is not positive semidefinite (eigenvalue %.3g)" % lowest)
        return cls(mat, lowest > policy.faithful)

    @classmethod
    def maximally_mixed(cls, dim):
        return cls(np.eye(dim, dtype=complex) / dim, True)

    @property
    def dim(self):
        return self.mat.shape[0]

    @cached_property
    def spectrum(self):
        return scipy.linalg.eigh(self.mat)

    @property
    def eigenvalues(self):
        return self.spectrum[0]

    @property
    def min_eigenvalue(self):
        return float(self.eigenvalues[0])

    def power(self, exponent):
        eigvals, eigvecs = self.spectrum
        fn = power(exponent)
        return (eigvecs * fn(fn.admit(eigvals))) @ eigvecs.conj().T

    @cached_property
    def sqrt(self):
        eigvals, eigvecs = self.spectrum
        return (eigvecs * np.sqrt(np.clip(eigvals, 0.0, None))) @ eigvecs.conj().T

    @cached_property
    def inv_sqrt(self):
        return self.power(-0.5)

    @cached_property
    def log(self):
        eigvals, eigvecs = self.spectrum
        return (eigvecs * np.log(LOG.admit(eigvals))) @ eigvecs.conj().T


def state_matrix(state):
    if isinstance(state, DensityMatrix):
        return state.mat
    return as_matrix(state, "state")


class InnerKind(Enum):
    KMS = "kms"
    GNS = "gns"
    HS = "hs"


@dataclass(frozen=True, eq=False)
class WeightedInner:
    """State-weighted inner product on B(H)

    KMS: ``Tr[s^(1/2) X^* s^(1/2) Y]``, GNS: ``Tr[s X^* Y]``, HS: ``Tr[X^* Y]``.
    """

    sigma: DensityMatrix
    kind: InnerKind = InnerKind.KMS

    def __call__(self, x, y):
        x = np.asarray(x, dtype=complex)
        y = np.asarray(y, dtype=complex)
        if self.kind is InnerKind.KMS:
            root = self.sigma.sqrt
            return complex(np.trace(root @ x.conj().T @ root @ y))
        if self.kind is InnerKind.GNS:
            return complex(np.trace(self.sigma.mat @ x.conj().T @ y))
        return complex(np.vdot(x, y))

    def norm_squared(self, x):
        return self(x, x).real

    def gram(self):
        """``G`` with ``<X, Y> = vec(X)^* G vec(Y)``"""
        dim = self.sigma.dim
        if self.kind is InnerKind.KMS:
            root = self.sigma.sqrt
            return np.kron(root.T, root)
        if self.kind is InnerKind.GNS:
            return np.kron(self.sigma.mat.T, np.eye(dim))
        return np.eye(dim * dim, dtype=complex)

    def gram_inverse(self):
        dim = self.sigma.dim
        if self.kind is InnerKind.HS:
            return np.eye(dim * dim, dtype=complex)
        if not self.sigma.faithful:
            raise DomainError("%s weight is not invertible" % self.kind.value, self.sigma.min_eigenvalue)
        if self.kind is InnerKind.KMS:
            inv_root = self.sigma.inv_sqrt
            return np.kron(inv_root.T, inv_root)
        return np.kron(self.sigma.power(-1).T, np.eye(dim))


def weighted_inner(inner, x, y):
    return inner(x, y)


def vec(mat):
    return np.asarray(mat).T.reshape(-1)


def unvec(vector, dim=None):
    vector = np.asarray(vector)
    if dim is None:
        dim = math.isqrt(vector.size)
    if dim * dim != vector.size:
        raise RejectedInputError("vector of length %d is not a vectorized square matrix" % vector.size)
    return vector.reshape(dim, dim).T


def choi_matrix(superop):
    """Realigned (Choi) matrix of a Schroedinger-picture superoperator

    For ``rho -> sum A rho A^*`` this is ``sum vec(A) vec(A)^*``.
    """
    superop = np.asarray(superop)
    dim = math.isqrt(superop.shape[0])
    return superop.reshape([dim] * 4).swapaxes(0, 3).reshape(dim * dim, dim * dim)


def kraus_from_choi(choi, policy=POLICY):
    eigvals, eigvecs = eig_hermitian(hermitian_part(choi), policy)
    scale = max(1.0, float(np.max(np.abs(eigvals), initial=0.0)))
    if eigvals[0] < -policy.equality * scale:
        raise RejectedInputError("map is not completely positive (Choi eigenvalue %.3g)" % eigvals[0])
    keep = eigvals > policy.kernel * scale
    return [np.sqrt(val) * unvec(col) for val, col in zip(eigvals[keep], eigvecs[:, keep].T)]


def partial_trace(mat, dims, keep):
    """Trace out one factor of a bipartite operator; ``keep`` is 0 (first) or 1 (second)"""
    dim_a, dim_b = dims
    tensor = np.asarray(mat).reshape(dim_a, dim_b, dim_a, dim_b)
    if keep == 0:
        return np.einsum("ijkj->ik", tensor)
    if keep == 1:
        return np.einsum("ijil->jl", tensor)
    raise RejectedInputError("keep must be 0 or 1, got %r" % (keep,))


def trace_norm(mat):
    return float(np.sum(scipy.linalg.svdvals(mat)))


def hermitian_basis(dim):
    """Hilbert-Schmidt orthonormal basis of the Hermitian d x d matrices"""
    basis = []
    for i in range(dim):
        unit = np.zeros((dim, dim), dtype=complex)
        unit[i, i] = 1.0
        basis.append(unit)
    for i in range(dim):
        for j in range(i + 1, dim):
            sym = np.zeros((dim, dim), dtype=complex)
            sym[i, j] = sym[j, i] = 1.0 / np.sqrt(2.0)
            anti = np.zeros((dim, dim), dtype=complex)
            anti[i, j] = 1j / np.sqrt(2.0)
            anti[j, i] = -1j / np.sqrt(2.0)
            basis.extend((sym, anti))
    return basis


def hermitian_from_params(params, dim):
    """Inverse of ``params_from_hermitian``: d reals on the diagonal, then Re/Im pairs"""
    params = np.asarray(params, dtype=float)
    mat = np.diag(params[:dim]).astype(complex)
    rows, cols = np.triu_indices(dim, 1)
    off = params[dim:].reshape(-1, 2)
    mat[rows, cols] = off[:, 0] + 1j * off[:, 1]
    mat[cols, rows] = off[:, 0] - 1j * off[:, 1]
    return mat


def params_from_hermitian(mat):
    dim = mat.shape[0]
    rows, cols = np.triu_indices(dim, 1)
    upper = mat[rows, cols]
    return np.concatenate([np.diag(mat).real, np.column_stack([upper.real, upper.imag]).reshape(-1)])


def random_hermitian(dim, rng, scale=1.0):
    ginibre = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
    return scale * hermitian_part(ginibre)


def random_density(dim, rng):
    ginibre = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
    mat = ginibre @ ginibre.conj().T
    return hermitian_part(mat / np.trace(mat).real)


def random_pure_state(dim, rng):
    psi = rng.normal(size=dim) + 1j * rng.normal(size=dim)
    psi /= np.linalg.norm(psi)
    return np.outer(psi, psi.conj())


def random_unitary(dim, rng):
    ginibre = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
    q, r = scipy.linalg.qr(ginibre)
    phases = np.diag(r) / np.abs(np.diag(r))
    return q * phases


def random_positive(dim, rng, low=0.1, high=3.0):
    """Random positive definite matrix with spectrum drawn from ``[low, high]``"""
    unitary = random_unitary(dim, rng)
    return hermitian_part((unitary * rng.uniform(low, high, size=dim)) @ unitary.conj().T)


def fourier_matrix(dim):
    idx = np.arange(dim)
    return np.exp(2j * np.pi * np.outer(idx, idx) / dim) / np.sqrt(dim)


def commutator_superop(op):
    """Matrix of ``X -> [op, X]`` on column-stacked vectors"""
    eye = np.eye(op.shape[0])
    return np.kron(eye, op) - np.kron(op.T, eye)
