import json

import numpy as np
from PIL import Image

from fraclab import __version__
from fraclab.schemas.report_schemas import PiconeReport
from fraclab.utils.file_utils import (
    header_line,
    read_csv,
    round_floats,
    write_csv,
    write_heatmap,
    write_json,
    write_line_plot,
)


def test_header_line_sorts_parameters():
    line = header_line("solve", {"p": 2.0, "n": 129, "domain": "ball"})
    assert line == f"# fraclab {__version__} solve domain=ball n=129 p=2"


def test_round_floats_handles_models_and_non_finite():
    report = PiconeReport(lhs=1.0 / 3.0, rhs=float("nan"), residual=float("inf"), h_min=0.0)
    rounded = round_floats({"report": report, "values": np.array([0.1, 0.2])}, digits=4)
    assert rounded["report"]["lhs"] == 0.3333
    assert rounded["report"]["rhs"] is None
    assert rounded["report"]["residual"] is None
    assert rounded["values"] == [0.1, 0.2]


def test_json_keys_sorted(tmp_path):
    path = write_json(str(tmp_path / "nested" / "out.json"), {"b": 1, "a": [np.float64(2.5)]})
    text = open(path, encoding="utf-8").read()
    assert text.index('"a"') < text.index('"b"')
    assert json.loads(text) == {"a": [2.5], "b": 1}


def test_csv_has_comment_header(tmp_path):
    path = write_csv(str(tmp_path / "t.csv"), ["k", "value"], [[1, 0.5], [2, 0.25]], "spectrum", {"k": 2})
    with open(path, encoding="utf-8") as fh:
        assert fh.readline().strip() == f"# fraclab {__version__} spectrum k=2"
        assert fh.readline().strip() == "k,value"
    assert read_csv(path) == [{"k": "1", "value": "0.5"}, {"k": "2", "value": "0.25"}]


def test_line_plot_is_svg(tmp_path):
    x = np.linspace(-1.0, 1.0, 11)
    path = write_line_plot(str(tmp_path / "plot.svg"), x, {"a": x**2, "b": x}, title="t")
    assert open(path, encoding="utf-8").read().lstrip().startswith("<?xml")


def test_heatmap_dimensions(tmp_path):
    values = np.outer(np.linspace(-1.0, 1.0, 5), np.ones(40))
    path = write_heatmap(str(tmp_path / "map.png"), values, max_width=30, row_height=3)
    with Image.open(path) as image:
        assert image.size == (30, 15)
        assert image.mode == "RGB"
