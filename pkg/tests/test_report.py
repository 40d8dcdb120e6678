import json
import math
import os

import numpy as np
import pytest
from hypothesis import given, strategies as st

from idg.report import REPORT_SCHEMA_VERSION, dumps, loads, plain, write_atomic


def test_plain_converts_numpy_and_nonfinite():
    d = plain({"a": np.float64(1.5), "b": np.arange(3), "c": [math.inf, -math.inf, math.nan],
               "d": np.bool_(True), 3: (np.int32(4),)})
    assert d == {"a": 1.5, "b": [0, 1, 2], "c": ["inf", "-inf", "nan"], "d": True, "3": [4]}


@given(st.dictionaries(st.text(max_size=5), st.floats(allow_nan=True, allow_infinity=True), max_size=6))
def test_dumps_sorted_and_strict_json(d):
    text = dumps({"schema_version": REPORT_SCHEMA_VERSION, "x": d})
    back = json.loads(text)  # strict parse: no NaN tokens
    assert list(back["x"]) == sorted(back["x"])
    assert text == dumps(loads(text))


def test_loads_rejects_other_versions():
    with pytest.raises(ValueError):
        loads(json.dumps({"schema_version": 99}))


def test_write_atomic_replaces_and_leaves_no_temp(tmp_path):
    p = tmp_path / "sub" / "r.json"
    write_atomic(p, "one")
    write_atomic(p, "two")
    assert p.read_text() == "two"
    assert os.listdir(p.parent) == ["r.json"]


def test_write_atomic_cleans_up_on_failure(tmp_path, monkeypatch):
    p = tmp_path / "r.json"
    write_atomic(p, "keep")

    def fail(src, dst):
        raise OSError("disk full")

    monkeypatch.setattr(os, "replace", fail)
    with pytest.raises(OSError):
        write_atomic(p, "lost")
    assert p.read_text() == "keep"
    assert os.listdir(tmp_path) == ["r.json"]
