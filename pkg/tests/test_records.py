import json
import math

import numpy as np

from shellgibbs.records import (
    read_checkpoint,
    read_states_csv,
    state_columns,
    to_json_text,
    write_checkpoint,
    write_report,
    write_states_csv,
)


def test_state_csv_roundtrip(tmp_path):
    x = np.random.default_rng(0).normal(size=(5, 3, 2))
    write_states_csv(tmp_path / "s.csv", x, prefix={"id": np.arange(5)})
    head, rows = read_states_csv(tmp_path / "s.csv")
    assert head == ["id"] + state_columns(3)
    np.testing.assert_array_equal(rows[:, 1:].reshape(5, 3, 2), x)  # repr round-trips exactly


def test_json_is_strict_and_sorted(tmp_path):
    text = to_json_text({"b": math.inf, "a": np.float64(1.5), "c": [np.int64(2), math.nan]})
    doc = json.loads(text)
    assert doc == {"a": 1.5, "b": "inf", "c": [2, "nan"]}
    assert text.index('"a"') < text.index('"b"')
    write_report(tmp_path / "r.json", {"x": 1}, "test")
    rep = json.loads((tmp_path / "r.json").read_text())
    assert rep["schema_version"] == "1.0" and rep["kind"] == "test" and rep["timestamp"]


def test_checkpoint_roundtrip(tmp_path):
    row = np.random.default_rng(1).normal(size=8)
    header = {"grid": {"k0": 1, "lam": 2, "M": 4}, "seed": 3, "step": 17}
    write_checkpoint(tmp_path / "c.ckpt", header, row)
    h, r = read_checkpoint(tmp_path / "c.ckpt")
    assert h == header
    np.testing.assert_array_equal(r, row)
