import json

import numpy as np
import pytest

from mfsaddle import io
from mfsaddle.model import ControlProcess, ModelError


def test_floats_round_trip_with_seventeen_digits():
    x = 0.1 + 0.2
    text = io.dumps({"x": x, "v": [1.0 / 3.0, 2.0], "n": 3, "flag": True, "none": None})
    back = json.loads(text)
    assert back["x"] == x and back["v"][0] == 1.0 / 3.0
    assert "0.30000000000000004" in text


def test_numpy_values_serialize():
    text = io.dumps({"a": np.arange(3.0), "b": np.float64(1.5), "c": np.int64(4), "d": np.bool_(False)})
    assert json.loads(text) == {"a": [0.0, 1.0, 2.0], "b": 1.5, "c": 4, "d": False}


def test_metadata_carries_version():
    meta = io.metadata(7, 0.01, 100, 100)
    assert meta == {"seed": 7, "dt": 0.01, "N": 100, "steps": 100, "version": io.__version__}


def test_control_csv_round_trip(tmp_path):
    c = ControlProcess.deterministic(2, [0.0, 0.25, 0.5], [[0.1, -1.0], [1.0 / 3.0, 2.0], [0.0, 5.5]])
    path = tmp_path / "u.csv"
    io.write_control_csv(path, c, io.metadata(1, 0.25, None, 4))
    back = io.read_control_csv(path, 2)
    np.testing.assert_array_equal(back.times, c.times)
    np.testing.assert_array_equal(back.values, c.values)
    assert path.read_text().startswith("# seed=1 ")


def test_bad_control_csv(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("t,u\n0,1\n")
    with pytest.raises(io.ProblemFileError):
        io.read_control_csv(path, 1)
    path.write_text("time,u_0\n0,abc\n")
    with pytest.raises(io.ProblemFileError):
        io.read_control_csv(path, 1)


def test_parse_lq_problem_defaults_missing_matrices():
    doc = {"type": "lq", "n": 1, "k1": 1, "k2": 1, "T": 2.0, "a": [1.0], "matrices": {"N11": 1, "N21": -1}}
    problem, spec = io.parse_problem(doc)
    assert spec is not None and problem.lq is spec
    assert spec.A1.values.shape == (1, 1) and np.all(spec.M == 0)


def test_parse_requires_cost_weights():
    doc = {"type": "lq", "n": 1, "k1": 1, "k2": 1, "T": 1.0, "a": [0.0], "matrices": {"N11": 1}}
    with pytest.raises(io.ProblemFileError, match="N21"):
        io.parse_problem(doc)


def test_parse_tabulated_matrix():
    doc = {
        "type": "lq", "n": 1, "k1": 1, "k2": 1, "T": 1.0, "a": [0.0],
        "matrices": {"N11": 1, "N21": -1, "A1": {"times": [0, 0.5], "values": [1.0, 2.0]}},
    }
    _, spec = io.parse_problem(doc)
    assert spec.A1(0.7) == 2.0


def test_parse_general_problem_with_bounds():
    doc = {
        "type": "general", "n": 1, "k1": 1, "k2": 1, "T": 1.0, "a": [0.0],
        "coefficients": {"b": {"family": "linear", "params": {"Au1": [[1.0]]}}},
        "control_bounds": [[[-1.0], [1.0]], None],
    }
    problem, spec = io.parse_problem(doc)
    assert spec is None
    assert problem.control_bounds[1] is None
    np.testing.assert_array_equal(problem.control_bounds[0][0], [-1.0])


@pytest.mark.parametrize(
    "doc,needle",
    [
        ({"type": "cubic", "n": 1, "k1": 1, "k2": 1, "T": 1, "a": [0]}, "unknown problem type"),
        ({"type": "lq", "k1": 1, "k2": 1, "T": 1, "a": [0]}, "'n'"),
        ({"type": "general", "n": 1, "k1": 1, "k2": 1, "T": 1, "a": [0], "coefficients": {"q": {}}}, "unknown"),
    ],
)
def test_parse_errors(doc, needle):
    with pytest.raises(ModelError, match=needle):
        io.parse_problem(doc)


def test_malformed_json_reports_position(tmp_path):
    path = tmp_path / "p.json"
    path.write_text('{\n  "type": "lq",\n  "n": 1,,\n}')
    with pytest.raises(io.ProblemFileError, match="line 3, column"):
        io.load_problem(path)
