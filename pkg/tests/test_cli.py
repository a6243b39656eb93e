"""End-to-end runs of the command line through ``main``."""

import json
from pathlib import Path

import pandas as pd
import pytest

from src.cli import build_parser, main

PROJECT_ROOT = Path(__file__).parent.parent


@pytest.fixture(scope="module")
def settings(tmp_path_factory):
    """config.ini without the log file sink."""
    path = tmp_path_factory.mktemp("settings") / "config.ini"
    text = (PROJECT_ROOT / "config.ini").read_text()
    path.write_text(text.replace("log_to_file = true", "log_to_file = false"))
    return str(path)


@pytest.fixture(scope="module")
def simulated(tmp_path_factory, settings):
    out = tmp_path_factory.mktemp("sim")
    code = main(["simulate", "--preset", "clean", "--n", "600", "--seed", "3", "--out-dir", str(out),
                 "--settings", settings])
    assert code == 0
    return out


def read_json(path: Path):
    return json.loads(path.read_text())


def test_simulate_outputs(simulated):
    for name in ("panel.csv", "panel.json", "oracle.json", "dgp_config.json", "run_meta.json"):
        assert (simulated / name).exists()
    oracle = read_json(simulated / "oracle.json")
    assert oracle["overall"]["value"] == 2.0
    meta = read_json(simulated / "run_meta.json")
    assert meta["seed"] == 3
    assert "timestamp" not in meta


def test_estimate_round_trip(simulated, settings, tmp_path):
    code = main(["estimate", "--input", str(simulated / "panel.csv"), "--out-dir", str(tmp_path),
                 "--bootstrap-draws", "200", "--seed", "7", "--settings", settings])
    assert code == 0
    cells = read_json(tmp_path / "att_gt.json")["cells"]
    assert len(cells) == 6
    assert len(pd.read_csv(tmp_path / "att_gt.csv")) == 6
    aggregates = read_json(tmp_path / "aggregates.json")
    overall = aggregates["overall"]
    assert overall["ci_lower"] < overall["estimate"] < overall["ci_upper"]
    assert overall["estimate"] == pytest.approx(2.0, abs=0.5)
    assert [e["e"] for e in aggregates["event_study"]] == [0, 1, 2]
    assert aggregates["inference"]["seed"] == 7
    assert read_json(tmp_path / "run_meta.json")["options"]["validation"]["ok"] is True


def test_estimate_is_reproducible(simulated, settings, tmp_path):
    outputs = []
    for run, threads in (("a", "1"), ("b", "3")):
        out = tmp_path / run
        code = main(["estimate", "--input", str(simulated / "panel.csv"), "--out-dir", str(out),
                     "--bootstrap-draws", "999", "--seed", "7", "--threads", threads, "--settings", settings])
        assert code == 0
        outputs.append(out)
    for name in ("att_gt.json", "att_gt.csv", "aggregates.json"):
        assert (outputs[0] / name).read_bytes() == (outputs[1] / name).read_bytes()


def test_analytic_standard_errors(simulated, settings, tmp_path):
    code = main(["estimate", "--input", str(simulated / "panel.csv"), "--out-dir", str(tmp_path),
                 "--bootstrap-draws", "0", "--method", "ra", "--settings", settings])
    assert code == 0
    payload = read_json(tmp_path / "att_gt.json")
    assert payload["inference"]["type"] == "analytic"
    assert all(cell["se"] > 0 for cell in payload["cells"])
    assert payload["estimator"]["method"] == "ra"


def test_missing_row_is_an_input_error(simulated, settings, tmp_path):
    frame = pd.read_csv(simulated / "panel.csv")
    broken = tmp_path / "broken.csv"
    frame.drop(index=5).to_csv(broken, index=False)
    (tmp_path / "broken.json").write_text((simulated / "panel.json").read_text())
    out = tmp_path / "out"
    code = main(["estimate", "--input", str(broken), "--out-dir", str(out), "--settings", settings])
    assert code == 2
    assert read_json(out / "error.json")["error"] == "MissingCell"


def test_missing_file(settings, tmp_path):
    code = main(["decompose", "--input", str(tmp_path / "absent.csv"), "--out-dir", str(tmp_path),
                 "--settings", settings])
    assert code == 2
    assert (tmp_path / "error.json").exists()


def test_decompose_negative_weights(settings, tmp_path):
    sim = tmp_path / "sim"
    assert main(["simulate", "--preset", "negative_weights", "--n", "2000", "--seed", "1",
                 "--out-dir", str(sim), "--settings", settings]) == 0
    out = tmp_path / "out"
    code = main(["decompose", "--input", str(sim / "panel.csv"), "--config", str(sim / "dgp_config.json"),
                 "--out-dir", str(out), "--settings", settings])
    assert code == 0
    decomposition = read_json(out / "decomposition.json")
    assert decomposition["mode"] == "two_period"
    assert decomposition["negative_census"]["share_negative"] > 0
    assert decomposition["discrepancy"] < 1e-8
    assert decomposition["oracle"]["weighted_att"] == pytest.approx(2.0)
    assert set(decomposition["implicit_checks"]) == {"two_period_implicit", "multi_period_implicit"}
    weights = pd.read_csv(out / "weights.csv")
    assert "two_period_conditional_att" in set(weights["variant"])
    assert read_json(out / "twfe.json")["x_names"] == ["x1"]


def test_diagnose_prints_tables(simulated, settings, tmp_path, capsys):
    code = main(["diagnose", "--input", str(simulated / "panel.csv"), "--out-dir", str(tmp_path),
                 "--squares", "--benchmark", "--settings", settings])
    assert code == 0
    printed = capsys.readouterr().out
    assert "twfe_implicit balance, table overall" in printed
    assert "gps_benchmark balance" in printed
    balance = read_json(tmp_path / "balance.json")
    assert set(balance) == {"twfe_implicit", "gps_benchmark"}
    frame = pd.read_csv(tmp_path / "balance.csv")
    assert "square:d_x1" in set(frame["function"])


def test_unknown_preset(settings, tmp_path):
    code = main(["simulate", "--preset", "violate_Z", "--out-dir", str(tmp_path), "--settings", settings])
    assert code == 2
    assert read_json(tmp_path / "error.json")["error"] == "UnknownPreset"


def test_unknown_flag_exits_with_usage_error():
    with pytest.raises(SystemExit) as info:
        build_parser().parse_args(["estimate", "--input", "panel.csv", "--bandwidth", "3"])
    assert info.value.code == 2
