import contextlib
import csv
import logging
import os
import re
import sys
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.linalg

from . import __version__, logging_colored
from .catalog import ModelKind, ModelSpec, build
from .checks import SUITE_NAMES, Status, run_suites
from .constants import Budget, deco_depolarizing_comparison, estimate_alpha, estimate_beta, spectral_gap
from .dfstructure import decompose
from .dynamics import (
    DecoSearch,
    crossing_time,
    deco_time_closed_form,
    decoherence_time,
    default_grid,
    trajectory,
)
from .exceptions import ModelFileError, QmsDecoError, StructuralError
from .functionals import Functionals, draw_samples
from .matops import random_density
from .modelfile import dump_report, load_model, parse_rho

_logger = logging.getLogger("qms-deco")

EXIT_OK, EXIT_IO, EXIT_STRUCTURE, EXIT_CHECK = 0, 1, 2, 3

re_export = re.compile(
    r"^(?P<export>export|EXPORT)( )+"
    + r"(?P<variable>[\w]*)[ ]*[\=][ ]*[\"\']{0,1}"
    + r"(?P<value>[\w\.\-\_/\$\{\}\:,\(\)\#\*= ]*)[\"\']{0,1}",
    re.M,
)


def envfile2envdict(dirname, source_file="variables.sh", no_overwrite_environ=True):
    """Emulate ``source variables.sh``: return ``{variable: value}`` for its ``export`` lines"""
    envdict = {}
    source_file_path = os.path.join(dirname, source_file)
    if not os.path.isfile(source_file_path):
        _logger.debug("Skipping 'source %s' file because it was not found", source_file)
        return envdict
    with open(source_file_path) as f_source_file:
        _logger.debug("Running 'source %s'", source_file)
        for line in f_source_file:
            line_match = re_export.match(line)
            if not line_match:
                continue
            line_match = line_match.groupdict()
            if no_overwrite_environ and line_match["variable"] in os.environ:
                continue
            envdict[line_match["variable"]] = line_match["value"]
    return envdict


@dataclass
class DecoherenceReport:
    model: str
    dim: int
    structure: dict
    sigma_tr_spectrum: list
    sigma_min: float
    reversible: bool
    dbc: bool
    doubly_stochastic: bool
    gap: float
    alpha: dict
    alpha_below_gap: Optional[bool]
    crossing_time: Optional[float]
    regularity: dict
    decoherence_times: list
    beta: Optional[dict] = None
    comparison: Optional[dict] = None
    seed: int = 42
    version: str = field(default=__version__)

    def to_dict(self):
        return {
            "model": self.model,
            "d": self.dim,
            "structure": self.structure,
            "sigma_tr_spectrum": self.sigma_tr_spectrum,
            "sigma_min": self.sigma_min,
            "reversible": self.reversible,
            "dbc": self.dbc,
            "doubly_stochastic": self.doubly_stochastic,
            "lambda": self.gap,
            "alpha": self.alpha,
            "alpha_below_gap": self.alpha_below_gap,
            "crossing_time": self.crossing_time,
            "regularity": self.regularity,
            "decoherence_times": self.decoherence_times,
            "beta": self.beta,
            "deco_depolarizing": self.comparison,
            "seed": self.seed,
            "version": self.version,
        }


def _alpha_for(model, func, budget):
    """Log-Sobolev estimate with the extra seeds the model family calls for"""
    if model.spec is not None and model.spec.kind is ModelKind.DECO:
        comparison = deco_depolarizing_comparison(model.dim, model.spec.params.get("gamma", 1.0), budget)
        info = {
            "alpha_depolarizing": comparison.alpha_depolarizing,
            "deco_ratio_at_witness": comparison.deco_ratio_at_witness,
        }
        return comparison.deco_estimate, info, None
    if model.inner is not None:
        inner_func = Functionals.from_decomposition(decompose(model.inner, seed=budget.seed))
        inner_alpha = estimate_alpha(inner_func, budget)
        seeds = ()
        if inner_alpha.witness is not None:
            rng = np.random.default_rng(budget.seed)
            dim_a = model.split[0]
            seeds = tuple(np.kron(random_density(dim_a, rng), inner_alpha.witness) for _ in range(2))
        return estimate_alpha(func, budget, extra_seeds=seeds), None, inner_func
    return estimate_alpha(func, budget), None, None


def analyze(model, budget=Budget(), epsilons=(1e-2,), samples=16):
    """Structure, constants and decoherence times of one model"""
    decomposition = decompose(model.gen, seed=budget.seed)
    func = Functionals.from_decomposition(decomposition)
    ctx = func.ctx
    gap = spectral_gap(func).gap
    alpha, comparison, inner_func = _alpha_for(model, func, budget)
    below = None
    if not np.isnan(alpha.alpha_upper):
        below = bool(alpha.alpha_upper <= gap + 1e-6)
        if not below and (ctx.reversible or ctx.doubly_stochastic):
            _logger.error("Log-Sobolev estimate %.10g exceeds the gap %.10g", alpha.alpha_upper, gap)
    beta = None
    if inner_func is not None:
        beta = estimate_beta(func, model.split, budget, inner_func, alpha.alpha_upper).to_dict()

    sample_set = draw_samples(model.dim, np.random.default_rng(budget.seed), samples)
    strong = func.check_strong_lp_regularity(sample_set.positive, (1.0, 1.5, 2.0, 3.0))
    regularity = {
        "strong_lp": strong.strong.to_dict(),
        "weak_lp": strong.weak.to_dict(),
        "l1": func.check_l1_regularity(sample_set.states, 4.0 if ctx.dbc else 2.0).to_dict(),
    }
    alpha_value = None if np.isnan(alpha.alpha_upper) else alpha.alpha_upper
    search = DecoSearch(seed=budget.seed)
    times = [decoherence_time(func, epsilon, gap, alpha_value, search).to_dict() for epsilon in epsilons]
    crossing = crossing_time(func.sigma_min, gap, alpha_value) if alpha_value else None
    return DecoherenceReport(
        model=model.name,
        dim=model.dim,
        structure=decomposition.structure.summary(),
        sigma_tr_spectrum=[float(v) for v in func.sigma.eigenvalues],
        sigma_min=func.sigma_min,
        reversible=bool(ctx.reversible),
        dbc=bool(ctx.dbc),
        doubly_stochastic=bool(ctx.doubly_stochastic),
        gap=gap,
        alpha=alpha.to_dict(),
        alpha_below_gap=below,
        crossing_time=crossing,
        regularity=regularity,
        decoherence_times=times,
        beta=beta,
        comparison=comparison,
        seed=budget.seed,
    )


def simulate(model, rho, budget=Budget(), tmax=None, points=64, with_alpha=True):
    decomposition = decompose(model.gen, seed=budget.seed)
    func = Functionals.from_decomposition(decomposition)
    gap = spectral_gap(func).gap
    rho0 = parse_rho(rho, model.dim, np.random.default_rng(budget.seed), func.sigma)
    alpha = None
    if with_alpha:
        estimate = estimate_alpha(func, budget)
        alpha = None if np.isnan(estimate.alpha_upper) else estimate.alpha_upper
    grid = default_grid(gap, points, tmax)
    return trajectory(func, rho0, grid, split=model.split, gap=gap, alpha=alpha)


DECOTIME_HEADER = ("d", "epsilon", "tau_empirical", "tau_pi_bound", "tau_mlsi_bound", "sigma_min", "flagged")


def _resized(model, dim):
    spec = model.spec
    if spec is None or "d" not in spec.params:
        raise ModelFileError(model.name, "--dims needs a builder model with a 'd' parameter")
    params = dict(spec.params, d=dim)
    return build(ModelSpec(spec.kind, params))


def decotime_rows(model, epsilons, dims=(), budget=Budget()):
    """``DecoTimeResult`` rows, closed form for the dephasing builder"""
    rows = []
    spec = model.spec
    closed = spec is not None and spec.kind is ModelKind.DECO
    for dim in dims or (model.dim,):
        if closed:
            gamma = float(spec.params.get("gamma", 1.0))
            rows.extend(deco_time_closed_form(dim, gamma, epsilon) for epsilon in epsilons)
            continue
        current = model if dim == model.dim else _resized(model, dim)
        func = Functionals.from_decomposition(decompose(current.gen, seed=budget.seed))
        gap = spectral_gap(func).gap
        estimate = estimate_alpha(func, budget)
        alpha = None if np.isnan(estimate.alpha_upper) else estimate.alpha_upper
        search = DecoSearch(seed=budget.seed)
        rows.extend(decoherence_time(func, epsilon, gap, alpha, search) for epsilon in epsilons)
    return rows


def write_decotime_csv(rows, stream):
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(DECOTIME_HEADER)
    for row in rows:
        data = row.to_dict()
        writer.writerow(
            [data["d"]]
            + [format(float(data[key]), ".17g") for key in DECOTIME_HEADER[1:-1]]
            + [str(data["flagged"]).lower()]
        )


@contextlib.contextmanager
def _output(path):
    if not path or path == "-":
        yield sys.stdout
        return
    with open(path, "w", encoding="utf8") as stream:
        yield stream


def _guarded(action, do_exit):
    """Run ``action`` and map errors onto exit codes"""
    try:
        status = action()
    except (ModelFileError, OSError) as exc:
        _logger.error("%s", exc)
        status = EXIT_IO
    except StructuralError as exc:
        _logger.error("Structural failure: %s", exc)
        status = EXIT_STRUCTURE
    except QmsDecoError as exc:
        _logger.error("%s", exc)
        status = EXIT_STRUCTURE
    if do_exit:
        sys.exit(status)
    return status


def run_analyze(model_path, defines, budget, out=None, epsilons=(1e-2,), do_exit=True):
    def action():
        show_version()
        model = load_model(model_path, defines)
        report = analyze(model, budget, epsilons)
        with _output(out) as stream:
            dump_report(report.to_dict(), stream)
        _logger.info(
            "Analysis of %s finished: lambda=%.10g alpha<=%.10g", model.name, report.gap, report.alpha["alpha_upper"]
        )
        return EXIT_OK

    return _guarded(action, do_exit)


def run_simulate(model_path, defines, budget, rho="uniform", tmax=None, points=64, out=None, do_exit=True):
    def action():
        model = load_model(model_path, defines)
        curve = simulate(model, rho, budget, tmax, points)
        with _output(out) as stream:
            curve.write_csv(stream)
        _logger.info("Wrote %d time point(s) for %s", curve.times.size, model.name)
        return EXIT_OK

    return _guarded(action, do_exit)


def run_decotime(model_path, defines, budget, epsilons=(1e-2,), dims=(), out=None, do_exit=True):
    def action():
        model = load_model(model_path, defines)
        rows = decotime_rows(model, epsilons, dims, budget)
        with _output(out) as stream:
            write_decotime_csv(rows, stream)
        print_table(rows)
        return EXIT_OK

    return _guarded(action, do_exit)


def run_check(model_path, defines, budget, suites=SUITE_NAMES, out=None, do_exit=True):
    def action():
        model = load_model(model_path, defines)
        results = run_suites(model, suites, budget)
        with _output(out) as stream:
            dump_report({"model": model.name, "checks": [result.to_dict() for result in results]}, stream)
        print_summary(results)
        failed = [result for result in results if result.status is Status.FAILED]
        if failed:
            _logger.error("%d check(s) failed", len(failed))
            return EXIT_CHECK
        return EXIT_OK

    return _guarded(action, do_exit)


def print_summary(results):
    summary_msg = ["+" + "=" * 59]
    summary_msg.append("|  Checks summary:")
    summary_msg.append("|" + "-" * 59)
    for result in results:
        outcome = logging_colored.colorized_msg(result.status.value.capitalize(), result.status.level)
        summary_msg.append("| {:<48}{}".format("%s/%s" % (result.suite, result.name), outcome))
    summary_msg.append("+" + "=" * 59)
    _logger.info("Checks summary\n%s", "\n".join(summary_msg))


def print_table(rows):
    lines = ["{:>4} {:>10} {:>14} {:>14} {:>14}".format("d", "epsilon", "tau_empirical", "tau_pi", "tau_mlsi")]
    for row in rows:
        lines.append(
            "{:>4} {:>10.4g} {:>14.6g} {:>14.6g} {:>14.6g}".format(
                row.dim or 0, row.epsilon, row.tau_empirical, row.tau_pi_bound, row.tau_mlsi_bound
            )
        )
    _logger.info("Decoherence times\n%s", "\n".join(lines))


def show_version():
    _logger.info(
        "Version\nqms-deco %s\nPython %s\nnumpy %s, scipy %s",
        __version__,
        sys.version,
        np.__version__,
        scipy.__version__,
    )
