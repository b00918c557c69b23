"""Run-report serialization and table rendering."""

import pytest

from xmf.errors import ParseError
from xmf.report import RunReport, format_table, load_report, save_report, write_csv


def test_report_json_round_trip(tmp_path):
    report = RunReport(
        kind="ablate-attention",
        config_hash="a" * 64,
        seeds=[0, 1, 2],
        rows=[{"label": "x", "f1_mean": 0.5, "f1_per_seed": [0.4, 0.5, 0.6]}],
        confusions={"x": [[[1, 0, 0], [0, 1, 0], [0, 0, 1]]]},
        wall_time_s=1.25,
        tool_version="0.1.0",
        extra={"budget": 4},
    )
    path = tmp_path / "report.json"
    save_report(report, path)
    again = load_report(path)
    assert again == report


def test_unknown_field_rejected(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text('{"kind": "x", "config_hash": "y", "seeds": [], "bogus": 1}')
    with pytest.raises(ParseError):
        load_report(path)


def test_malformed_json_rejected(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text("{")
    with pytest.raises(ParseError):
        load_report(path)


def test_format_table_alignment():
    rows = [{"name": "alpha", "value": 0.123456}, {"name": "b", "value": 10.0}]
    text = format_table(rows)
    lines = text.splitlines()
    assert lines[0].startswith("name")
    assert "0.1235" in lines[2]
    assert len(lines) == 4
    assert format_table([]) == "(empty table)\n"


def test_write_csv(tmp_path):
    rows = [{"a": 1, "b": "x"}, {"a": 2, "b": "y"}]
    path = tmp_path / "t.csv"
    write_csv(rows, path)
    content = path.read_text().splitlines()
    assert content == ["a,b", "1,x", "2,y"]
