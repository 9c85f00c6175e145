import json

import numpy as np
from hypothesis import given, strategies as st

from blab import io as bio


@given(st.floats(allow_nan=False, allow_infinity=False))
def test_float_format_round_trips(x):
    assert float(bio.fmt(x)) == x
    assert float(bio.fmt(np.float64(x))) == x


def test_csv_is_deterministic(tmp_path):
    rows = [(1, 0.1, "a"), (2, 1 / 3, "b")]
    a = bio.write_csv(tmp_path / "a.csv", ["k", "v", "s"], rows)
    b = bio.write_csv(tmp_path / "b.csv", ["k", "v", "s"], rows)
    assert a.read_bytes() == b.read_bytes()
    header, body = bio.read_csv(a)
    assert header == ["k", "v", "s"] and float(body[1][1]) == 1 / 3


def test_json_sorted_and_plain(tmp_path):
    doc = {"b": np.arange(3), "a": np.float64(0.1), "c": 1 + 2j, "d": np.bool_(True)}
    p = bio.write_json(tmp_path / "x.json", doc)
    back = json.loads(p.read_text())
    assert list(back) == ["a", "b", "c", "d"]
    assert back == {"a": 0.1, "b": [0, 1, 2], "c": {"re": 1.0, "im": 2.0}, "d": True}
    assert bio.dumps(doc) == bio.dumps(dict(reversed(list(doc.items()))))


def test_plots_come_with_scripts(tmp_path, grid16):
    bio.svg_lines(tmp_path / "l.svg", {"a": ([1, 2, 3], [1, 4, 9])})
    bio.svg_field(tmp_path / "f.svg", grid16, np.ones(grid16.size))
    bio.gnuplot_script(tmp_path / "l.gp", "l.csv", 1, {"a": 2})
    bio.gnuplot_field_script(tmp_path / "f.gp", "f.csv")
    for name in ("l.svg", "f.svg"):
        assert (tmp_path / name).read_text().startswith("<svg")
    assert "l.csv" in (tmp_path / "l.gp").read_text()
