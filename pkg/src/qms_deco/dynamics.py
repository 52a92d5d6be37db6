"""Trajectories, decay bounds and decoherence times."""
import csv
import io
import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np
import scipy.linalg
import scipy.optimize

from .exceptions import RejectedInputError
from .functionals import mutual_information
from .lindblad import Picture, semigroup
from .matops import hermitian_part, random_pure_state, state_matrix, trace_norm, unvec, vec

_logger = logging.getLogger("qms-deco")

CSV_FORMAT = ".17g"


@dataclass(frozen=True, eq=False)
class DecayCurve:
    times: np.ndarray
    columns: Dict[str, np.ndarray]

    @property
    def header(self):
        return ["t"] + list(self.columns)

    def rows(self):
        for idx, t in enumerate(self.times):
            yield [float(t)] + [float(series[idx]) for series in self.columns.values()]

    def write_csv(self, stream):
        writer = csv.writer(stream, lineterminator="\n")
        writer.writerow(self.header)
        for row in self.rows():
            writer.writerow([format(value, CSV_FORMAT) for value in row])

    def to_csv(self):
        buf = io.StringIO()
        self.write_csv(buf)
        return buf.getvalue()

    @classmethod
    def read_csv(cls, stream):
        reader = csv.reader(stream)
        header = next(reader)
        data = np.array([[float(cell) for cell in row] for row in reader if row], dtype=float).reshape(-1, len(header))
        return cls(data[:, 0], {name: data[:, idx] for idx, name in enumerate(header[1:], start=1)})


@dataclass(frozen=True)
class DecoTimeResult:
    epsilon: float
    tau_empirical: float
    tau_pi_bound: float
    tau_mlsi_bound: float
    sigma_min: float
    dim: Optional[int] = None
    flagged: bool = False

    def to_dict(self):
        return {
            "d": self.dim,
            "epsilon": self.epsilon,
            "tau_empirical": self.tau_empirical,
            "tau_pi_bound": self.tau_pi_bound,
            "tau_mlsi_bound": self.tau_mlsi_bound,
            "sigma_min": self.sigma_min,
            "flagged": self.flagged,
        }


def _check_grid(t_grid):
    times = np.asarray(t_grid, dtype=float)
    if times.ndim != 1 or times.size == 0:
        raise RejectedInputError("time grid must be a non-empty sequence")
    if times[0] < 0 or np.any(np.diff(times) < 0):
        raise RejectedInputError("time grid must be ascending and non-negative")
    return times


def default_grid(gap, points=64, tmax=None):
    """``t = 0`` followed by log-spaced times over ``[1e-3, 50] / gap`` (or ``[0, tmax]``)"""
    if tmax is not None:
        return np.linspace(0.0, float(tmax), int(points))
    return np.concatenate([[0.0], np.geomspace(1e-3, 50.0, int(points) - 1) / gap])


def pi_bound(sigma_min, gap, times):
    return math.sqrt(1.0 / sigma_min) * np.exp(-gap * np.asarray(times, dtype=float))


def mlsi_bound(sigma_min, alpha, times):
    return math.sqrt(2.0 * math.log(1.0 / sigma_min)) * np.exp(-alpha * np.asarray(times, dtype=float))


def bound_curves(sigma_min, gap, alpha, t_grid):
    """Trace-distance bounds from the Poincare and the log-Sobolev constants"""
    times = _check_grid(t_grid)
    return pi_bound(sigma_min, gap, times), mlsi_bound(sigma_min, alpha, times)


def crossing_time(sigma_min, gap, alpha):
    """Time after which the log-Sobolev bound is the smaller one, ``None`` if never for t > 0"""
    if gap == alpha:
        return None
    offset = 0.5 * math.log(1.0 / sigma_min) - 0.5 * math.log(2.0 * math.log(1.0 / sigma_min))
    t = offset / (gap - alpha)
    return t if t > 0 else None


def trajectory(func, rho0, t_grid, split=None, gap=None, alpha=None):
    """Decoherence functionals of ``P_*t(rho0)`` along a time grid"""
    times = _check_grid(t_grid)
    rho0 = hermitian_part(state_matrix(rho0))
    schrodinger = func.ctx.schrodinger
    names = ["trace_dist", "df_variance", "df_entropy"]
    if gap is not None:
        names.append("pi_bound")
    if alpha is not None:
        names.append("mlsi_bound")
    if split is not None:
        names.append("mutual_info")
    columns = {name: np.zeros(times.size) for name in names}
    for idx, t in enumerate(times):
        rho_t = rho0 if t == 0 else hermitian_part(semigroup(schrodinger, float(t), Picture.SCHRODINGER).apply(rho0))
        columns["trace_dist"][idx] = trace_norm(rho_t - func.state_n(rho_t))
        columns["df_variance"][idx] = func.df_variance(func.density_image(rho_t))
        columns["df_entropy"][idx] = func.df_entropy(rho_t)
        if split is not None:
            columns["mutual_info"][idx] = mutual_information(rho_t, split)
    if gap is not None:
        columns["pi_bound"] = pi_bound(func.sigma_min, gap, times)
    if alpha is not None:
        columns["mlsi_bound"] = mlsi_bound(func.sigma_min, alpha, times)
    return DecayCurve(times, columns)


def bound_times(sigma_min, epsilon, gap, alpha=None):
    """Times at which the two bound curves reach ``epsilon``, clamped at zero"""
    tau_pi = max(0.0, math.log(math.sqrt(1.0 / sigma_min) / epsilon) / gap)
    if alpha is None or not alpha > 0:
        return tau_pi, float("nan")
    tau_mlsi = max(0.0, math.log(math.sqrt(2.0 * math.log(1.0 / sigma_min)) / epsilon) / alpha)
    return tau_pi, tau_mlsi


@dataclass(frozen=True)
class DecoSearch:
    starts: int = 8
    iterations: int = 300
    seed: int = 42
    horizon: float = 200.0
    resolution: float = 1e-3


class _WorstCase:
    """``g(t) = max_psi ||P_*t (I - E_N*)(psi psi^*)||_1`` by multi-start search over pure states"""

    def __init__(self, func, search):
        self.dim = func.dim
        self.schrodinger = func.ctx.schrodinger.mat
        self.complement = np.eye(self.dim**2) - func.cond.schrodinger.mat
        self.search = search
        rng = np.random.default_rng(search.seed)
        self.pool = [self._uniform()] + [self._vector(random_pure_state(self.dim, rng)) for _ in range(search.starts)]
        self.cache = {}

    def _uniform(self):
        return np.ones(self.dim, dtype=complex) / math.sqrt(self.dim)

    @staticmethod
    def _vector(projector):
        values, vectors = scipy.linalg.eigh(projector)
        return vectors[:, -1]

    def _map(self, t):
        return scipy.linalg.expm(t * self.schrodinger) @ self.complement

    def _value(self, superop, psi):
        psi = psi / np.linalg.norm(psi)
        return trace_norm(unvec(superop @ vec(np.outer(psi, psi.conj())), self.dim))

    def _proxy(self, superop):
        """Pure state maximizing the Hilbert-Schmidt norm of the image, a seed for the search"""
        values, vectors = scipy.linalg.eigh(superop.conj().T @ superop)
        top = hermitian_part(unvec(vectors[:, -1], self.dim))
        return self._vector(top if abs(top.min()) < abs(top.max()) else -top)

    def __call__(self, t):
        if t in self.cache:
            return self.cache[t]
        superop = self._map(t)
        candidates = self.pool + [self._proxy(superop)]
        scored = sorted(((self._value(superop, psi), idx) for idx, psi in enumerate(candidates)), reverse=True)
        best_value, best_psi = scored[0][0], candidates[scored[0][1]]
        for _value, idx in scored[: max(1, self.search.starts // 2)]:
            start = np.concatenate([candidates[idx].real, candidates[idx].imag])
            outcome = scipy.optimize.minimize(
                lambda params: -self._value(superop, params[: self.dim] + 1j * params[self.dim :]),
                start,
                method="Nelder-Mead",
                options={"maxiter": self.search.iterations, "xatol": 1e-9, "fatol": 1e-12},
            )
            if -outcome.fun > best_value:
                best_value = -float(outcome.fun)
                vector = outcome.x[: self.dim] + 1j * outcome.x[self.dim :]
                best_psi = vector / np.linalg.norm(vector)
        self.pool.append(best_psi)
        self.cache[t] = best_value
        return best_value


def decoherence_time(func, epsilon, gap, alpha=None, search=DecoSearch()):
    """Smallest ``t`` with ``||P_*t(rho - E_N*(rho))||_1 <= epsilon`` for every state"""
    epsilon = float(epsilon)
    if not epsilon > 0:
        raise RejectedInputError("epsilon must be positive, got %r" % (epsilon,))
    tau_pi, tau_mlsi = bound_times(func.sigma_min, epsilon, gap, alpha)
    worst = _WorstCase(func, search)
    flagged = False
    if worst(0.0) <= epsilon:
        return DecoTimeResult(epsilon, 0.0, tau_pi, tau_mlsi, func.sigma_min, func.dim)

    low, high = 0.0, 1.0 / gap
    cap = search.horizon / gap
    while worst(high) > epsilon:
        low, high = high, 2.0 * high
        if high > cap:
            _logger.warning("Worst-case distance still above %g at t=%g; giving up the bracket", epsilon, cap)
            high, flagged = cap, True
            break
    while not flagged and high - low > search.resolution / gap:
        middle = 0.5 * (low + high)
        if worst(middle) > epsilon:
            low = middle
        else:
            high = middle
    _logger.info("Decoherence time %.6g at epsilon=%g", high, epsilon)
    return DecoTimeResult(epsilon, high, tau_pi, tau_mlsi, func.sigma_min, func.dim, flagged)


def deco_time_closed_form(dim, gamma, epsilon, alpha=None):
    """Dephasing model in closed form: ``g(t) = 2 (d - 1) / d * exp(-gamma t)``, ``sigma_tr = I/d``"""
    dim = int(dim)
    if dim < 2:
        raise RejectedInputError("decoherence model needs d >= 2, got %d" % dim)
    alpha = 0.5 * gamma if alpha is None else alpha
    sigma_min = 1.0 / dim
    initial = 2.0 * (dim - 1) / dim
    tau_empirical = max(0.0, math.log(initial / epsilon) / gamma)
    tau_pi, tau_mlsi = bound_times(sigma_min, epsilon, gamma, alpha)
    return DecoTimeResult(float(epsilon), tau_empirical, tau_pi, tau_mlsi, sigma_min, dim)


@dataclass
class DecayReport:
    variance_margins: List[float] = field(default_factory=list)
    entropy_margins: List[float] = field(default_factory=list)
    violations: List[dict] = field(default_factory=list)

    @property
    def passed(self):
        return not self.violations

    def to_dict(self):
        return {
            "variance_min_margin": min(self.variance_margins, default=0.0),
            "entropy_min_margin": min(self.entropy_margins, default=0.0),
            "violations": self.violations,
        }


def verify_decay_theorems(func, gap, observables: Sequence[np.ndarray], states: Sequence[np.ndarray], t_grid):
    """Variance decay at rate ``2 gap`` and entropy decay at twice the ratio seen along each trajectory"""
    from .constants import mlsi_ratio

    times = _check_grid(t_grid)
    report = DecayReport()
    maps = [scipy.linalg.expm(float(t) * func.ctx.heisenberg.mat) for t in times]

    for idx, x in enumerate(observables):
        x = hermitian_part(np.asarray(x, dtype=complex))
        start = func.df_variance(x)
        for t, superop in zip(times, maps):
            value = func.df_variance(unvec(superop @ vec(x), func.dim))
            allowed = math.exp(-2.0 * gap * t) * start * (1.0 + 1e-6) + 1e-14
            margin = allowed - value
            report.variance_margins.append(margin)
            if margin < 0:
                report.violations.append({"kind": "variance", "sample": idx, "t": float(t), "margin": margin})

    for idx, rho in enumerate(states):
        rho = state_matrix(rho)
        entropies, ratios = [], []
        for t, superop in zip(times, maps):
            rho_t = hermitian_part(unvec(superop.conj().T @ vec(rho), func.dim))
            value = func.df_entropy(rho_t)
            if value < func.policy.entropy_cutoff:
                break
            entropies.append((float(t), value))
            ratio = mlsi_ratio(func, rho_t)
            if ratio is not None:
                ratios.append(ratio)
        if len(entropies) < 2 or not ratios:
            continue
        rate = min(ratios)
        t0, d0 = entropies[0]
        for t, value in entropies[1:]:
            elapsed = t - t0
            margin = -2.0 * rate * elapsed - math.log(value / d0) + 1e-3 * rate * elapsed + 1e-6
            report.entropy_margins.append(margin)
            if margin < 0:
                report.violations.append({"kind": "entropy", "sample": idx, "t": t, "margin": margin})
    return report
