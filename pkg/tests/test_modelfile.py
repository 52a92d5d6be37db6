import io
import json
import os
import unittest

import numpy as np

from qms_deco.catalog import ModelKind
from qms_deco.exceptions import ModelFileError, RejectedInputError, StructuralError
from qms_deco.matops import DensityMatrix
from qms_deco.modelfile import (
    dump_report,
    format_matrix,
    load_model,
    model_from_document,
    parse_defines,
    parse_matrix,
    parse_rho,
    render_template,
)

RESOURCES = os.path.join(os.path.dirname(os.path.dirname(os.path.realpath(__file__))), "resources")


def resource(name):
    return os.path.join(RESOURCES, name)


class TestModelFile(unittest.TestCase):
    def setUp(self):
        super().setUp()
        self.rng = np.random.default_rng(29)

    def test_parse_defines(self):
        self.assertEqual(parse_defines(("d=4", "gamma=0.5", "name=deco")), {"d": 4, "gamma": 0.5, "name": "deco"})
        self.assertEqual(parse_defines(()), {})
        with self.assertRaisesRegex(RejectedInputError, "key=value"):
            parse_defines(("d",))

    def test_parse_matrix(self):
        mat = parse_matrix([[[1, 0], [0, -1]], [[0, 1], 2]])
        self.assertTrue(np.allclose(mat, [[1, -1j], [1j, 2]]))
        self.assertEqual(format_matrix(mat)[0][1], [0.0, -1.0])
        with self.assertRaisesRegex(RejectedInputError, "different lengths"):
            parse_matrix([[1, 2], [3]])
        with self.assertRaisesRegex(RejectedInputError, r"\[re, im\] pairs"):
            parse_matrix([[[1, 2, 3]]])
        with self.assertRaisesRegex(RejectedInputError, "invalid entry"):
            parse_matrix([["x"]])

    def test_render_template(self):
        content = '{"builder": {"kind": "deco", "d": {{ d }}, "gamma": {{ gamma }}}}'
        self.assertEqual(json.loads(render_template("m.j2", content, {"d": 3, "gamma": 1}))["builder"]["d"], 3)
        with self.assertRaisesRegex(ModelFileError, r"undefined template variables: \(gamma\)"):
            render_template("m.j2", content, {"d": 3})

    def test_load_builder(self):
        model = load_model(resource("deco4.json"))
        self.assertEqual((model.name, model.dim), ("deco-4", 4))
        self.assertIs(model.spec.kind, ModelKind.DECO)
        model = load_model(resource("deco.json.j2"), {"d": 3, "gamma": 0.5})
        self.assertEqual((model.name, model.dim), ("deco-3", 3))
        self.assertEqual(model.spec.params["gamma"], 0.5)

    def test_load_bipartite(self):
        model = load_model(resource("bipartite.json"))
        self.assertEqual(model.split, (2, 2))
        self.assertEqual(model.inner.dim, 2)

    def test_load_explicit(self):
        with self.assertLogs("qms-deco", level="INFO") as logs:
            model = load_model(resource("thermal_qubit.json"))
        self.assertEqual(model.name, "thermal-qubit")
        self.assertEqual(len(model.gen.jumps), 2)
        self.assertIn("INFO:qms-deco:Loaded model thermal-qubit (dimension 2, 2 jump operator(s))", logs.output)

    def test_load_errors(self):
        with self.assertRaisesRegex(ModelFileError, "invalid JSON at line 3"):
            load_model(resource("malformed.json"))
        with self.assertRaisesRegex(ModelFileError, "cannot read model file"):
            load_model(resource("missing.json"))
        with self.assertRaisesRegex(ModelFileError, "undefined template variables"):
            load_model(resource("deco.json.j2"))
        rates = [[0, -0.01, -0.01], [-0.01, 0, -10], [-0.01, -10, 0]]
        with self.assertRaisesRegex(StructuralError, "realizable"):
            model_from_document({"builder": {"kind": "diagonal_gamma", "gamma_matrix": rates}})

    def test_document_errors(self):
        with self.assertRaisesRegex(RejectedInputError, "unsupported schema"):
            model_from_document({"schema": 2, "dim": 2})
        with self.assertRaisesRegex(RejectedInputError, "unknown builder kind"):
            model_from_document({"builder": {"kind": "ising"}})
        with self.assertRaisesRegex(RejectedInputError, "JSON object"):
            model_from_document([1, 2])
        with self.assertRaisesRegex(RejectedInputError, "hamiltonian of shape"):
            model_from_document({"dim": 3, "hamiltonian": [[1, 0], [0, -1]]})

    def test_parse_rho(self):
        uniform = parse_rho("uniform", 3, self.rng)
        self.assertTrue(np.allclose(uniform, np.ones((3, 3)) / 3))
        self.assertTrue(np.allclose(parse_rho("mixed", 2, self.rng), np.eye(2) / 2))
        self.assertAlmostEqual(np.trace(parse_rho("random", 3, self.rng)).real, 1.0)
        sigma = DensityMatrix.from_matrix(np.diag([0.7, 0.3]))
        self.assertIs(parse_rho("sigma_tr", 2, self.rng, sigma), sigma.mat)
        self.assertTrue(np.allclose(parse_rho("[[3, 0], [0, 1]]", 2, self.rng), np.diag([0.75, 0.25])))
        with self.assertRaisesRegex(RejectedInputError, "neither"):
            parse_rho("thermal", 2, self.rng)
        with self.assertRaisesRegex(RejectedInputError, "2-level"):
            parse_rho("[[1, 0, 0], [0, 0, 0], [0, 0, 0]]", 2, self.rng)

    def test_dump_report(self):
        buf = io.StringIO()
        dump_report({"b": np.float64(0.5), "a": [np.int64(2), complex(1, -1)], "c": float("nan")}, buf)
        self.assertEqual(json.loads(buf.getvalue()), {"a": [2, [1.0, -1.0]], "b": 0.5, "c": None})
        self.assertTrue(buf.getvalue().startswith('{\n  "a"'))
        self.assertTrue(buf.getvalue().endswith("}\n"))

    def test_dump_report_uses_17_significant_digits(self):
        buf = io.StringIO()
        dump_report({"x": 0.1, "y": 1 / 3, "z": [2.0, -1e-20], "name": "deco-2"}, buf)
        text = buf.getvalue()
        self.assertIn('"x": 0.10000000000000001', text)
        self.assertIn('"y": 0.33333333333333331', text)
        self.assertIn("2.0,", text)
        self.assertIn("-9.9999999999999995e-21", text)
        report = json.loads(text)
        self.assertEqual(report["x"], 0.1)
        self.assertIsInstance(report["z"][0], float)
        self.assertEqual(report["name"], "deco-2")
