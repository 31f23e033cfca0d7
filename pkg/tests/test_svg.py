import re
import xml.etree.ElementTree as ET

import pytest

from treelab.svg import PlotSpec, render_line_chart

NS = "{http://www.w3.org/2000/svg}"


def test_single_series_one_polyline_two_vertices():
    spec = PlotSpec((100.0, 200.0), (("cart",),), title="t")
    svg = render_line_chart(spec, {("cart",): {100.0: 0.5, 200.0: 0.25}})
    root = ET.fromstring(svg)
    lines = root.findall(f"{NS}polyline")
    assert len(lines) == 1
    assert len(lines[0].get("points").split()) == 2


def test_identical_inputs_give_identical_bytes():
    spec = PlotSpec((100.0, 500.0, 5000.0), (("cart", "x1"), ("oct", "x1")), y_label="share")
    table = {("cart", "x1"): {100.0: 0.1, 500.0: 0.05, 5000.0: 0.01},
             ("oct", "x1"): {100.0: 0.0, 500.0: 0.0, 5000.0: 0.0}}
    assert render_line_chart(spec, table) == render_line_chart(spec, dict(table))


def test_missing_series_listed():
    spec = PlotSpec((1.0,), (("cart",), ("gbt",), ("shap",)))
    with pytest.raises(KeyError, match="gbt.*shap"):
        render_line_chart(spec, {("cart",): {1.0: 0.3}})


def test_legend_and_ticks():
    xs = (100.0, 200.0, 300.0, 400.0, 500.0, 1000.0, 5000.0)
    spec = PlotSpec(xs, (("cart",), ("oct",)))
    svg = render_line_chart(spec, {("cart",): {x: 0.5 for x in xs}, ("oct",): {x: 0.1 for x in xs}})
    texts = [t.text for t in ET.fromstring(svg).iter(f"{NS}text")]
    assert "cart" in texts and "oct" in texts
    assert "100" in texts and "5000" in texts
    # every x value still gets a tick mark even when its label is dropped
    ticks = re.findall(r'<line x1="([\d.]+)" y1="(\d+)" x2="\1" y2="(\d+)"', svg)
    assert len([t for t in ticks if int(t[2]) - int(t[1]) == 4]) == len(xs)


def test_values_clipped_to_range():
    spec = PlotSpec((0.0, 1.0), (("a",),), y_range=(0.5, 1.0), height=200)
    svg = render_line_chart(spec, {("a",): {0.0: 0.0, 1.0: 2.0}})
    pts = ET.fromstring(svg).find(f"{NS}polyline").get("points").split()
    ys = [float(p.split(",")[1]) for p in pts]
    assert min(ys) >= 36 and max(ys) <= 200 - 50


def test_plotspec_validation():
    with pytest.raises(ValueError):
        PlotSpec((1.0,), ())
    with pytest.raises(ValueError):
        PlotSpec((), (("a",),))
    with pytest.raises(ValueError):
        PlotSpec((1.0,), (("a",),), y_range=(1.0, 1.0))
