"""Command line front end. Options are declared here; the work happens in ``qms_deco.qms_deco``.

Keep the entry point here rather than in ``__main__`` so ``python -m qms_deco`` does not import it twice.
"""
import contextlib
import functools
import os

import click

from qms_deco import logging_colored, qms_deco
from qms_deco.checks import SUITE_NAMES
from qms_deco.constants import Budget
from qms_deco.exceptions import RejectedInputError
from qms_deco.modelfile import RHO_KEYWORDS, parse_defines


def source_variables():
    # Overwrite os.environ with variables.sh file only if it was not already defined
    envdict = qms_deco.envfile2envdict(os.getcwd())
    os.environ.update({var: value for var, value in envdict.items() if var not in os.environ})


@contextlib.contextmanager
def env_clear():
    """Restore the environment variables once the block finishes"""
    old_environ = os.environ.copy()
    try:
        yield
    finally:
        os.environ.clear()
        os.environ.update(old_environ)


class SourcedContextMixin:
    """Source ``variables.sh`` before the options of a command are parsed"""

    def make_context(self, *args, **kwargs):
        with env_clear():
            source_variables()
            return super().make_context(*args, **kwargs)


class QmsCommand(SourcedContextMixin, click.Command):
    pass


class QmsGroup(SourcedContextMixin, click.Group):
    command_class = QmsCommand


def strcsv2tuple(strcsv, lower=False):
    if isinstance(strcsv, (tuple, list)):
        strcsv = ",".join(str(item) for item in strcsv)
    elif strcsv is not None and not isinstance(strcsv, str):
        strcsv = str(strcsv)
    strcsv = strcsv and strcsv.strip() or ""
    if not strcsv:
        return ()
    items = ()
    for item in strcsv.split(","):
        item = item.strip()
        if lower:
            item = item.lower()
        items += (item,)
    return items


class CSVChoice(click.Choice):
    envvar_list_splitter = ","

    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        self.name += " CSV"

    def convert(self, value, param, ctx):
        values = ()
        for v in strcsv2tuple(value, lower=True):
            values += (super().convert(v, param, ctx),)
        return values


class CSVMixin:
    envvar_list_splitter = ","

    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        self.name += " CSV"

    def convert(self, value, param, ctx):
        values = ()
        for v in strcsv2tuple(value):
            values += (super().convert(v, param, ctx),)
        return values


class CSVStringParamType(CSVMixin, click.types.StringParamType):
    pass


class CSVFloatParamType(CSVMixin, click.types.FloatParamType):
    pass


class CSVIntParamType(CSVMixin, click.types.IntParamType):
    pass


def merge_tuples(ctx, param, value):
    """Convert (('value1', 'value2'), ('value3')) to ('value1', 'value2', 'value3')
    It is useful for csv separated by commas parameters but using multiple number of args
    """
    if value is None:
        return value
    values = ()
    for v in value:
        if not isinstance(v, tuple):
            v = (v,)
        values += v
    return values


def suite_callback(ctx, param, value):
    """'all' selects every suite and a '-' prefix removes one
    value = 'all,-decay' will return the suites but 'decay'
    """
    values = set(merge_tuples(ctx, param, value))
    all_values = {i for i in param.type.choices if not i.startswith("-") and not i == "all"}
    if "all" in values:
        values -= {"all"}
        values |= all_values
    for v in values.copy():
        if v.startswith("-"):
            values -= {v, v[1:]}
    return tuple(suite for suite in SUITE_NAMES if suite in values)


def defines_callback(ctx, param, value):
    try:
        return parse_defines(merge_tuples(ctx, param, value))
    except RejectedInputError as exc:
        raise click.BadParameter(str(exc)) from None


def positive_callback(ctx, param, value):
    values = value if isinstance(value, tuple) else (value,)
    if any(v is not None and v <= 0 for v in values):
        raise click.BadParameter("must be positive")
    return value


SUITE_CHOICES = list(SUITE_NAMES) + ["all"] + ["-%s" % i for i in SUITE_NAMES]


def model_options(command):
    """Model file, template variables and the optimizer budget shared by every command"""

    @click.argument("model", type=click.Path(dir_okay=False))
    @click.option(
        "--define",
        "-D",
        multiple=True,
        type=CSVStringParamType(),
        callback=defines_callback,
        envvar="QMS_DECO_DEFINE",
        help="Template variables for the model file as key=value, separated by commas.",
        show_envvar=True,
    )
    @click.option(
        "--seed",
        type=click.INT,
        default=42,
        show_default=True,
        envvar="QMS_DECO_SEED",
        help="Seed of every random choice (samples, optimizer starts, decomposition).",
        show_envvar=True,
    )
    @click.option(
        "--budget",
        "-b",
        type=click.IntRange(min=0),
        default=32,
        show_default=True,
        envvar="QMS_DECO_BUDGET",
        help="Number of random starts of the log-Sobolev and information constant searches.",
        show_envvar=True,
    )
    @click.option(
        "--iterations",
        type=click.IntRange(min=1),
        default=500,
        show_default=True,
        envvar="QMS_DECO_ITERATIONS",
        help="Nelder-Mead iteration cap per start.",
        show_envvar=True,
    )
    @click.option(
        "--threads",
        type=click.IntRange(min=1),
        default=1,
        show_default=True,
        envvar="QMS_DECO_THREADS",
        help="Cap on parallel optimizer starts.",
        show_envvar=True,
    )
    @functools.wraps(command)
    def wrapper(*args, **kwargs):
        kwargs["budget"] = Budget(
            starts=kwargs.pop("budget"),
            iterations=kwargs.pop("iterations"),
            seed=kwargs.pop("seed"),
            threads=kwargs.pop("threads"),
        )
        return command(*args, **kwargs)

    return wrapper


def epsilon_option(command):
    return click.option(
        "--epsilon",
        "-e",
        type=CSVFloatParamType(),
        multiple=True,
        default=["0.01"],
        show_default=True,
        callback=lambda ctx, param, value: positive_callback(ctx, param, merge_tuples(ctx, param, value)),
        help="Trace-distance thresholds of the decoherence time, separated by commas.",
    )(command)


def out_option(command):
    return click.option(
        "--out",
        "-o",
        type=click.Path(dir_okay=False, writable=True),
        default=None,
        help="Output file. Standard output when omitted.",
    )(command)


@click.group(cls=QmsGroup, invoke_without_command=True)
@click.option("--verbose", "-v", is_flag=True, default=False, help="Show debug messages.")
@click.option(
    "--version",
    type=click.BOOL,
    is_flag=True,
    default=False,
    help="Show the version of this package",
)
@click.pass_context
def main(ctx, verbose, version):
    """qms-deco analyze decoherence of quantum Markov semigroups: decoherence-free algebra,
    functional inequality constants and decoherence times"""
    logging_colored.set_verbosity(verbose)
    if version:
        qms_deco.show_version()
        ctx.exit(0)
    if ctx.invoked_subcommand is None:
        click.echo(ctx.get_help())


@main.command()
@model_options
@epsilon_option
@out_option
def analyze(model, define, budget, epsilon, out):
    """Run the full analysis of MODEL and write a JSON report"""
    qms_deco.run_analyze(model, define, budget, out=out, epsilons=epsilon)


@main.command()
@model_options
@click.option(
    "--rho",
    default="uniform",
    show_default=True,
    help="Initial state: one of %s, an inline JSON matrix or a JSON file." % ", ".join(RHO_KEYWORDS),
)
@click.option("--tmax", type=click.FLOAT, default=None, callback=positive_callback, help="Last time of the grid.")
@click.option("--points", type=click.IntRange(min=2), default=64, show_default=True, help="Number of time points.")
@out_option
def simulate(model, define, budget, rho, tmax, points, out):
    """Write the decay curves of MODEL started at RHO as CSV"""
    qms_deco.run_simulate(model, define, budget, rho=rho, tmax=tmax, points=points, out=out)


@main.command()
@model_options
@epsilon_option
@click.option(
    "--dims",
    type=CSVIntParamType(),
    multiple=True,
    callback=merge_tuples,
    help="Rebuild a builder model at these dimensions, separated by commas.",
)
@out_option
def decotime(model, define, budget, epsilon, dims, out):
    """Tabulate decoherence times and their bounds as CSV"""
    qms_deco.run_decotime(model, define, budget, epsilons=epsilon, dims=dims, out=out)


@main.command()
@model_options
@click.option(
    "--suite",
    "-s",
    type=CSVChoice(SUITE_CHOICES),
    default=["all"],
    multiple=True,
    callback=suite_callback,
    show_default=True,
    envvar="QMS_DECO_SUITE",
    help="Check suites to run, separated by commas. "
    "\f\nprefix '-' means that the suite will be removed. "
    "\f\n*lemmas: structure lemmas, chain rule and flow derivatives. "
    "\f\n*regularity: L_p regularity and entropy production condition. "
    "\f\n*dbc: derivation form of detailed-balance models. "
    "\f\n*constants: gap, log-Sobolev and information constants. "
    "\f\n*decay: decay theorems and trace-distance bounds. ",
    show_envvar=True,
)
@out_option
def check(model, define, budget, suite, out):
    """Run the named invariant suites on MODEL and report each check"""
    qms_deco.run_check(model, define, budget, suites=suite, out=out)
