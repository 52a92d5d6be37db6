"""Model files (JSON, optionally a Jinja2 template) and JSON report output.

A model file holds either an explicit generator::

    {"schema": 1, "dim": 2, "hamiltonian": [[[0, 0], [0, 0]], ...], "jumps": [...]}

or a builder of the catalog::

    {"schema": 1, "builder": {"kind": "deco", "d": 4, "gamma": 1.0}}

Complex matrices are row-major arrays whose entries are ``[re, im]`` pairs
(plain real numbers are accepted too).
"""
import json
import logging
import math
import os
import re

import numpy as np
from jinja2 import Environment, StrictUndefined, TemplateError, meta

from .catalog import Model, ModelKind, ModelSpec, build
from .exceptions import ModelFileError, RejectedInputError
from .lindblad import Lindbladian
from .matops import DensityMatrix, random_density

_logger = logging.getLogger("qms-deco")

SCHEMA_VERSION = 1
RHO_KEYWORDS = ("uniform", "mixed", "random", "sigma_tr")
FLOAT_FORMAT = ".17g"
# floats travel through json.dumps as marked strings and are unquoted afterwards
_FLOAT_MARK = "\x00float:"
re_marked_float = re.compile(r'"\\u0000float:([^"]+)"')


def parse_defines(items):
    """``("d=4", "gamma=0.5")`` -> ``{"d": 4, "gamma": 0.5}``; values are JSON when they parse as JSON"""
    defines = {}
    for item in items or ():
        key, sep, value = item.partition("=")
        key = key.strip()
        if not sep or not key:
            raise RejectedInputError("Template variable %r is not of the form key=value" % item)
        try:
            defines[key] = json.loads(value)
        except ValueError:
            defines[key] = value.strip()
    return defines


def render_template(fname, content, defines):
    """Render ``content`` with Jinja2 after checking every variable it uses is defined"""
    env = Environment(undefined=StrictUndefined, keep_trailing_newline=True)
    try:
        parsed = env.parse(content)
    except TemplateError as exc:
        raise ModelFileError(fname, "template error: %s" % exc) from None
    missing = meta.find_undeclared_variables(parsed) - set(defines)
    if missing:
        raise ModelFileError(
            fname,
            "undefined template variables: (%s). Pass them with --define key=value" % ", ".join(sorted(missing)),
        )
    try:
        return env.from_string(content).render(**defines)
    except TemplateError as exc:
        raise ModelFileError(fname, "template error: %s" % exc) from None


def load_json(fname, content):
    try:
        return json.loads(content)
    except json.decoder.JSONDecodeError as json_e:
        json_line_error = "\n".join(content.splitlines()[max(0, json_e.lineno - 2) : json_e.lineno])  # noqa: E203
        raise ModelFileError(
            fname, "invalid JSON at line %d column %d: %s" % (json_e.lineno, json_e.colno, json_e.msg), json_line_error
        ) from None


def parse_matrix(value, name="matrix"):
    """Complex matrix from nested lists of ``[re, im]`` pairs or real numbers"""
    if not isinstance(value, list) or not value or not all(isinstance(row, list) for row in value):
        raise RejectedInputError("%s must be a non-empty list of rows" % name)
    rows = []
    for row in value:
        entries = []
        for entry in row:
            if isinstance(entry, list):
                if len(entry) != 2:
                    raise RejectedInputError("%s entries must be [re, im] pairs, got %r" % (name, entry))
                entries.append(complex(float(entry[0]), float(entry[1])))
            elif isinstance(entry, (int, float)) and not isinstance(entry, bool):
                entries.append(complex(float(entry)))
            else:
                raise RejectedInputError("%s has an invalid entry %r" % (name, entry))
        rows.append(entries)
    if len({len(row) for row in rows}) != 1:
        raise RejectedInputError("%s has rows of different lengths" % name)
    return np.array(rows, dtype=complex)


def format_matrix(mat):
    return [[[float(entry.real), float(entry.imag)] for entry in row] for row in np.asarray(mat, dtype=complex)]


def _explicit(doc):
    jumps = tuple(parse_matrix(jump, "jump %d" % idx) for idx, jump in enumerate(doc.get("jumps", [])))
    if "hamiltonian" in doc:
        ham = parse_matrix(doc["hamiltonian"], "hamiltonian")
    elif "dim" in doc:
        dim = int(doc["dim"])
        ham = np.zeros((dim, dim), dtype=complex)
    elif jumps:
        ham = np.zeros_like(jumps[0])
    else:
        raise RejectedInputError("model needs a dimension, a hamiltonian or jump operators")
    if "dim" in doc and ham.shape != (int(doc["dim"]),) * 2:
        raise RejectedInputError("hamiltonian of shape %s for dim %s" % (ham.shape, doc["dim"]))
    return Lindbladian(ham, jumps)


_MATRIX_PARAMS = ("tau", "gamma_matrix", "hamiltonian_a", "basis")


def _builder_spec(builder):
    params = dict(builder)
    try:
        kind = ModelKind(params.pop("kind"))
    except KeyError:
        raise RejectedInputError("builder needs a 'kind'") from None
    except ValueError:
        choices = ", ".join(kind.value for kind in ModelKind)
        raise RejectedInputError("unknown builder kind %r, choose one of %s" % (builder["kind"], choices)) from None
    for key in _MATRIX_PARAMS:
        if key in params:
            params[key] = parse_matrix(params[key], key)
    if "taus" in params:
        params["taus"] = [parse_matrix(tau, "taus[%d]" % idx) for idx, tau in enumerate(params["taus"])]
    if kind is ModelKind.BIPARTITE and "inner" in params:
        params["inner"] = model_from_document(params["inner"])
    return ModelSpec(kind, params)


def model_from_document(doc):
    """Model described by a parsed JSON document"""
    if not isinstance(doc, dict):
        raise RejectedInputError("model document must be a JSON object")
    schema = doc.get("schema", SCHEMA_VERSION)
    if schema != SCHEMA_VERSION:
        raise RejectedInputError("unsupported schema %r, expected %d" % (schema, SCHEMA_VERSION))
    if "builder" in doc:
        model = build(_builder_spec(doc["builder"]))
    else:
        gen = _explicit(doc)
        split = tuple(doc["split"]) if "split" in doc else None
        model = Model(gen, "explicit-%d" % gen.dim, split=split)
    if doc.get("name"):
        model = Model(model.gen, str(doc["name"]), model.split, model.inner, model.spec)
    return model


def load_model(fname, defines=None):
    """Read, render, parse and build the model in ``fname``"""
    try:
        with open(fname, encoding="utf8") as f_model:
            content = f_model.read()
    except OSError as exc:
        raise ModelFileError(fname, "cannot read model file: %s" % (exc.strerror or exc)) from None
    if fname.endswith(".j2") or defines:
        content = render_template(fname, content, defines or {})
    doc = load_json(fname, content)
    try:
        model = model_from_document(doc)
    except (TypeError, ValueError) as exc:
        raise ModelFileError(fname, "invalid model: %s" % exc) from None
    _logger.info("Loaded model %s (dimension %d, %d jump operator(s))", model.name, model.dim, len(model.gen.jumps))
    return model


def parse_rho(value, dim, rng, sigma_tr=None):
    """Initial state from a keyword, a JSON matrix inline or a JSON file path"""
    value = value.strip()
    if value == "uniform":
        psi = np.ones(dim, dtype=complex) / math.sqrt(dim)
        return np.outer(psi, psi.conj())
    if value == "mixed":
        return np.eye(dim, dtype=complex) / dim
    if value == "random":
        return random_density(dim, rng)
    if value == "sigma_tr":
        if sigma_tr is None:
            raise RejectedInputError("reference state is not available")
        return sigma_tr.mat
    if os.path.isfile(value):
        with open(value, encoding="utf8") as f_rho:
            value = f_rho.read()
    try:
        doc = json.loads(value)
    except ValueError:
        raise RejectedInputError(
            "initial state %r is neither one of %s, a JSON matrix nor a file" % (value, ", ".join(RHO_KEYWORDS))
        ) from None
    rho = DensityMatrix.from_matrix(parse_matrix(doc, "initial state"), normalize=True).mat
    if rho.shape != (dim, dim):
        raise RejectedInputError("initial state of shape %s for a %d-level model" % (rho.shape, dim))
    return rho


def _format_float(value, float_format):
    text = format(value, float_format)
    # keep integral values floats once parsed back
    return text if any(char in text for char in ".e") else text + ".0"


def to_jsonable(value, float_format=None):
    """Plain JSON types; non-finite floats become ``None``, finite ones are marked when ``float_format`` is set"""
    if isinstance(value, dict):
        return {str(key): to_jsonable(item, float_format) for key, item in value.items()}
    if isinstance(value, (list, tuple)):
        return [to_jsonable(item, float_format) for item in value]
    if isinstance(value, np.ndarray):
        return to_jsonable(value.tolist(), float_format)
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (complex, np.complexfloating)):
        return [to_jsonable(float(value.real), float_format), to_jsonable(float(value.imag), float_format)]
    if isinstance(value, (float, np.floating)):
        value = float(value)
        if not math.isfinite(value):
            return None
        return value if float_format is None else _FLOAT_MARK + _format_float(value, float_format)
    return value


def dump_report(report, stream):
    """Deterministic JSON: sorted keys, floats with 17 significant digits"""
    text = json.dumps(to_jsonable(report, FLOAT_FORMAT), sort_keys=True, indent=2)
    stream.write(re_marked_float.sub(r"\1", text))
    stream.write("\n")
