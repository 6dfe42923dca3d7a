import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from matbackprop.data import SegmentationTaskConfig, segmentation_instance
from matbackprop.errors import CsvFormatError
from matbackprop.io import (
    dump_json,
    format_float,
    load_instance,
    read_key_values,
    read_matrix_csv,
    save_instance,
    write_jsonl,
    write_matrix_csv,
)

finite = st.floats(allow_nan=False, allow_infinity=False, width=64)


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 5), st.integers(1, 5)), elements=finite))
def test_matrix_csv_round_trip_is_exact(tmp_path_factory, A):
    path = tmp_path_factory.mktemp("csv") / "a.csv"
    write_matrix_csv(path, A)
    B = read_matrix_csv(path)
    assert np.array_equal(A, B)


@settings(max_examples=100, deadline=None)
@given(finite)
def test_format_float_round_trips(x):
    assert float(format_float(x)) == x


@pytest.mark.parametrize(
    "text, line",
    [
        ("", 1),
        ("2;2\n1,2\n3,4\n", 1),
        ("2,2\n1,2\n", 2),
        ("2,2\n1,2\n3\n", 3),
        ("2,2\n1,x\n3,4\n", 2),
        ("1,2\n1,nan\n", 2),
        ("0,2\n", 1),
    ],
)
def test_malformed_csv_reports_line(tmp_path, text, line):
    path = tmp_path / "bad.csv"
    path.write_text(text)
    with pytest.raises(CsvFormatError) as info:
        read_matrix_csv(path)
    assert info.value.line == line


def test_missing_csv(tmp_path):
    with pytest.raises(CsvFormatError):
        read_matrix_csv(tmp_path / "missing.csv")


def test_key_values(tmp_path):
    path = tmp_path / "cfg.txt"
    path.write_text("# comment\nepochs = 3\n\nseed=7  # trailing\n")
    assert read_key_values(path) == {"epochs": "3", "seed": "7"}
    path.write_text("epochs 3\n")
    with pytest.raises(CsvFormatError):
        read_key_values(path)


def test_json_helpers(tmp_path):
    x = 0.1 + 0.2
    text = dump_json({"a": np.float64(x), "b": np.arange(2), "c": math.inf, "d": np.bool_(True)})
    data = json.loads(text)
    assert data["a"] == x and data["b"] == [0, 1] and data["c"] is None and data["d"] is True
    write_jsonl([{"x": 1}, {"x": np.float64(2.5)}], tmp_path / "log.jsonl")
    lines = (tmp_path / "log.jsonl").read_text().splitlines()
    assert [json.loads(s)["x"] for s in lines] == [1, 2.5]


def test_instance_round_trip(tmp_path):
    inst = segmentation_instance(SegmentationTaskConfig(height=6, width=5), np.random.default_rng(0))
    save_instance(tmp_path / "inst", inst)
    back = load_instance(tmp_path / "inst")
    assert np.array_equal(back.F, inst.F) and np.array_equal(back.E, inst.E)
    assert back.k == inst.k and back.image_shape == (6, 5)


def test_instance_rejects_fractional_labels(tmp_path):
    inst = segmentation_instance(SegmentationTaskConfig(height=4, width=4), np.random.default_rng(1))
    save_instance(tmp_path, inst)
    write_matrix_csv(tmp_path / "labels.csv", np.full((16, 1), 0.5))
    with pytest.raises(CsvFormatError):
        load_instance(tmp_path)
