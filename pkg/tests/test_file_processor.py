import numpy as np
import pandas as pd
import pytest
from numpy.testing import assert_allclose

from src.exceptions import DuplicateRow, MissingCell, NonConstantTimeInvariant, UnknownColumn
from src.file_processor import PanelFileProcessor, load_csv, parse_columns
from src.panel import ColumnMapping


@pytest.fixture
def processor():
    return PanelFileProcessor()


@pytest.fixture
def long_frame():
    rows = []
    for unit, first in [(10, 2002), (11, 2002), (12, 2003), (13, 0), (14, 0)]:
        for year in (2001, 2002, 2003):
            rows.append({"firm": unit, "year": year, "sales": unit + year / 1000.0, "adopt": first,
                         "size": 0.1 * unit + 0.01 * year, "region": unit % 2})
    return pd.DataFrame(rows)


SCHEMA = ColumnMapping(id_col="firm", time_col="year", y_col="sales", g_col="adopt",
                       x_cols=("size",), z_cols=("region",))


def test_frame_to_panel(processor, long_frame):
    data = processor.frame_to_panel(long_frame, SCHEMA)
    assert (data.n_units, data.n_periods) == (5, 3)
    assert data.period_labels == (2001, 2002, 2003)
    assert data.group.tolist() == [2, 2, 3, 4, 4]
    assert data.x_names == ("size",)
    assert_allclose(data.z_ti[:, 0], [0, 1, 0, 1, 0])


def test_rows_are_reordered(processor, long_frame):
    shuffled = long_frame.sample(frac=1.0, random_state=3)
    data = processor.frame_to_panel(shuffled, SCHEMA)
    ids = np.asarray(data.unit_ids, dtype=float)
    assert_allclose(data.outcome[:, 0], ids + 2.001)
    assert_allclose(data.outcome[:, 2], ids + 2.003)


def test_unknown_column(processor, long_frame):
    schema = ColumnMapping(id_col="firm", time_col="year", y_col="profit", g_col="adopt")
    with pytest.raises(UnknownColumn) as info:
        processor.frame_to_panel(long_frame, schema)
    assert info.value.context["missing"] == ["profit"]


def test_missing_row(processor, long_frame):
    with pytest.raises(MissingCell):
        processor.frame_to_panel(long_frame.drop(index=4), SCHEMA)


def test_duplicate_row(processor, long_frame):
    with pytest.raises(DuplicateRow):
        processor.frame_to_panel(pd.concat([long_frame, long_frame.iloc[[0]]]), SCHEMA)


def test_time_invariant_must_be_constant(processor, long_frame):
    frame = long_frame.copy()
    frame.loc[1, "region"] = 5
    with pytest.raises(NonConstantTimeInvariant) as info:
        processor.frame_to_panel(frame, SCHEMA)
    assert info.value.context["units"] == [10]


def test_label_past_the_sample_is_never_treated(processor, long_frame):
    frame = long_frame.copy()
    frame.loc[frame["firm"] == 12, "adopt"] = 2010
    data = processor.frame_to_panel(frame, SCHEMA)
    assert data.group.tolist() == [2, 2, 4, 4, 4]


def test_empty_group_label_is_never_treated(processor, long_frame):
    frame = long_frame.copy()
    frame["adopt"] = frame["adopt"].astype(float)
    frame.loc[frame["firm"] == 13, "adopt"] = np.nan
    assert processor.frame_to_panel(frame, SCHEMA).group.tolist() == [2, 2, 3, 4, 4]


def test_write_then_load(processor, tmp_path, staggered_panel):
    target = processor.write_csv(staggered_panel, str(tmp_path / "panel.csv"))
    assert target.with_suffix(".json").exists()
    loaded = load_csv(str(target))
    assert_allclose(loaded.outcome, staggered_panel.outcome)
    assert_allclose(loaded.x_tv, staggered_panel.x_tv)
    assert_allclose(loaded.z_ti, staggered_panel.z_ti)
    assert loaded.group.tolist() == staggered_panel.group.tolist()
    assert loaded.x_names == staggered_panel.x_names


def test_sidecar_roundtrip(processor, tmp_path):
    path = str(tmp_path / "schema.json")
    processor.write_sidecar(SCHEMA, path)
    assert processor.read_sidecar(path) == SCHEMA


def test_missing_file(processor, tmp_path):
    with pytest.raises(FileNotFoundError):
        processor.load_csv(str(tmp_path / "absent.csv"))


def test_validate_file(processor, tmp_path):
    text = tmp_path / "notes.txt"
    text.write_text("id,time\n")
    result = processor.validate_file(str(text))
    assert not result["is_valid"]
    assert "Unsupported file format" in result["errors"][0]
    assert processor.validate_file(str(tmp_path / "absent.csv"))["is_valid"] is False


def test_parse_columns():
    assert parse_columns("x1, x2,,x3 ") == ["x1", "x2", "x3"]
    assert parse_columns(None) == []
