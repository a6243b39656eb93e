import json

import numpy as np
import pandas as pd
import pytest

from src.report_generator import ReportGenerator, library_versions, to_jsonable
from src.twfe import FitMode


@pytest.fixture
def report(config, tmp_path):
    return ReportGenerator(config, str(tmp_path / "out"))


def test_to_jsonable():
    payload = {(2, 3): np.float64(1.5), "bad": float("nan"), "mode": FitMode.TWO_PERIOD,
               "arr": np.array([1, 2]), "flag": np.bool_(True)}
    assert to_jsonable(payload) == {"2,3": 1.5, "bad": None, "mode": "two_period", "arr": [1, 2], "flag": True}


def test_frames_become_records():
    frame = pd.DataFrame({"a": [1.0, np.inf], "b": ["x", "y"]})
    assert to_jsonable(frame) == [{"a": 1.0, "b": "x"}, {"a": None, "b": "y"}]


def test_write_json_is_stable(report):
    path = report.write_json("a.json", {"b": 1, "a": [np.nan]})
    assert path.read_text() == '{\n  "a": [\n    null\n  ],\n  "b": 1\n}\n'


def test_write_csv(report):
    path = report.write_csv("t.csv", pd.DataFrame({"x": [1 / 3]}))
    assert path.read_text() == "x\n0.333333333333\n"


def test_run_meta_without_timestamp(report):
    meta = json.loads(report.write_run_meta("estimate", {"method": "dr"}, seed=7).read_text())
    assert "timestamp" not in meta
    assert meta["seed"] == 7
    assert meta["config"]["ESTIMATION"]["method"] == "dr"
    assert set(meta["versions"]) >= {"didforge", "numpy", "statsmodels"}


def test_run_meta_with_timestamp(report):
    meta = json.loads(report.write_run_meta("simulate", {}, stamp=True).read_text())
    assert "timestamp" in meta


def test_render_table():
    text = ReportGenerator.render_table(pd.DataFrame({"function": ["d_x1"], "difference": [1e-12]}),
                                        title="balance")
    assert text.startswith("balance\n-------\n")
    assert "1e-12" in text


def test_versions():
    assert library_versions()["didforge"] == "1.0.0"
