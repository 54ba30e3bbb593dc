from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from app.infrastructure.writers import config_sha256, fmt, render_csv, render_json, sidecar, to_jsonable, write_csv


def test_hash_ignores_key_order() -> None:
    assert config_sha256({"a": 1, "b": [1.5, 2]}) == config_sha256({"b": [1.5, 2], "a": 1})
    assert config_sha256({"a": 1}) != config_sha256({"a": 2})


def test_floats_keep_17_digits() -> None:
    assert fmt(0.1) == "0.10000000000000001"
    assert fmt(np.float64(1 / 3)) == "0.33333333333333331"
    assert fmt(np.int64(4)) == "4"
    assert fmt(None) == ""


def test_non_finite_values_become_strings() -> None:
    doc = to_jsonable({"x": np.array([1.0, np.inf]), "y": float("nan")})
    assert doc == {"x": [1.0, "inf"], "y": "nan"}


def test_csv_header_and_union_of_columns() -> None:
    text = render_csv([{"x": 1.0}, {"x": 2.0, "err": "bad"}], "abc")
    lines = text.splitlines()
    assert lines[0] == "# config_sha256=abc"
    assert lines[1] == "x,err"
    assert lines[2] == "1,"
    assert lines[3] == "2,bad"


def test_json_document_carries_hash() -> None:
    doc = json.loads(render_json({"b": [0.1], "a": 1}, "abc"))
    assert doc == {"config_sha256": "abc", "a": 1, "b": [0.1]}


def test_atomic_csv_write(tmp_path: Path) -> None:
    target = tmp_path / "out" / "risk.csv"
    write_csv(target, [{"x": 0.5}], "h")
    assert target.read_text(encoding="utf-8").startswith("# config_sha256=h\nx\n0.5")
    assert not (tmp_path / "out" / "risk.csv.tmp").exists()
    assert sidecar(target, "atoms") == tmp_path / "out" / "risk.atoms.csv"
