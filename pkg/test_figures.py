"""
Tests for the relevance palette, SVG panels and the overlap table
"""

import xml.etree.ElementTree as ET

import numpy as np
import pytest

from gaitxai.core.errors import MissingInput
from gaitxai.figures import palette, panels
from gaitxai.figures.templates import FigureTemplateLibrary
from gaitxai.models.gait import CHANNEL_ORDER, ChannelId
from gaitxai.models.statistics import Cluster
from gaitxai.services import eval_harness

SVG = "{http://www.w3.org/2000/svg}"


def _groups(svg: str):
    root = ET.fromstring(svg.encode("utf-8"))
    assert root.get("width") == "1200" and root.get("height") == "300"
    return {g.get("id"): g for g in root.iter(f"{SVG}g")}


@pytest.fixture
def signals(small_dataset):
    return {label: eval_harness.aggregate_signals(small_dataset, label) for label in (0, 1)}


class TestPalette:
    def test_scale_shape(self):
        assert len(palette.PALETTE) == 64
        assert palette.color_for(-1.0) == "#2166ac"
        assert palette.color_for(1.0) == "#b2182b"
        assert palette.color_for(5.0) == "#b2182b"

    def test_zero_is_neutral_and_sign_picks_the_half(self):
        assert palette.color_for(0.0) == palette.NEUTRAL_HEX
        assert palette.color_for(-0.01) in palette.PALETTE[:32]
        assert palette.color_for(0.01) in palette.PALETTE[32:]
        assert palette.color_for(float("nan")) == palette.NEUTRAL_HEX

    def test_zero_scale(self):
        assert palette.colors_for(np.array([1.0, -2.0]), 0.0) == [palette.NEUTRAL_HEX] * 2
        assert palette.colors_for(np.array([2.0, -2.0]), 2.0) == ["#b2182b", "#2166ac"]


class TestPanels:
    def test_panel_a_has_six_channels_and_cluster_shading(self, signals):
        means = {label: {ch: s[0] for ch, s in signals[label].items()} for label in (0, 1)}
        svg = panels.build_panel_a(means, {"L_V": [Cluster(start=8, end=16, peak_t=5.2)]})
        groups = _groups(svg)
        assert list(groups) == [f"channel-{ch.value}" for ch in CHANNEL_ORDER]
        shaded = [r for r in groups["channel-L_V"].iter(f"{SVG}rect") if r.get("fill") == "#969696"]
        assert len(shaded) == 1
        assert not [r for r in groups["channel-R_V"].iter(f"{SVG}rect") if r.get("fill") == "#969696"]
        assert len(list(groups["channel-R_AP"].iter(f"{SVG}polyline"))) == 2

    def test_zero_relevance_draws_a_neutral_strip(self, signals, small_dataset):
        relevance = {ch: np.zeros(small_dataset.T) for ch in CHANNEL_ORDER}
        svg = panels.build_class_panel(0, signals[0], relevance, panels.class_title(0))
        for group in _groups(svg).values():
            strip = [r for r in group.iter(f"{SVG}rect") if r.get("fill-opacity") == "1"]
            assert len(strip) == small_dataset.T
            assert {r.get("fill") for r in strip} == {palette.NEUTRAL_HEX}

    def test_relevance_strip_colors_follow_sign(self, signals, small_dataset):
        values = np.zeros(small_dataset.T)
        values[3], values[5] = 2.0, -2.0
        relevance = {ChannelId.L_V: values}
        svg = panels.build_class_panel(1, signals[1], relevance, panels.class_title(1))
        groups = _groups(svg)
        strip = [r.get("fill") for r in groups["channel-L_V"].iter(f"{SVG}rect") if r.get("fill-opacity") == "1"]
        assert strip[3] == "#b2182b" and strip[5] == "#2166ac"
        assert not [r for r in groups["channel-R_V"].iter(f"{SVG}rect") if r.get("fill-opacity") == "1"]
        assert "male (class 1)" in svg

    def test_panel_d_and_determinism(self, small_dataset):
        d = {"L_V": np.linspace(-1.0, 2.0, small_dataset.T)}
        total = {ch: np.linspace(0.0, 1.0, small_dataset.T) for ch in CHANNEL_ORDER}
        first = panels.build_panel_d(d, total)
        assert first == panels.build_panel_d(d, total)
        groups = _groups(first)
        assert len(list(groups["channel-L_V"].iter(f"{SVG}polyline"))) == 3
        assert len(list(groups["channel-R_ML"].iter(f"{SVG}polyline"))) == 2

    def test_each_strip_reaches_the_palette_ends(self, signals, small_dataset):
        strong, weak = np.zeros(small_dataset.T), np.zeros(small_dataset.T)
        strong[2], strong[4] = 2.0, -2.0
        weak[2], weak[4] = 0.01, -0.01
        svg = panels.build_class_panel(0, signals[0], {ChannelId.L_V: strong, ChannelId.R_V: weak},
                                       panels.class_title(0))
        groups = _groups(svg)
        for channel in ("L_V", "R_V"):
            strip = [r.get("fill") for r in groups[f"channel-{channel}"].iter(f"{SVG}rect")
                     if r.get("fill-opacity") == "1"]
            assert strip[2] == "#b2182b" and strip[4] == "#2166ac"
            assert strip[0] == palette.NEUTRAL_HEX


class TestOverlapTable:
    def test_table_lists_pairs_and_literature_rows(self):
        text = panels.overlap_table(
            [("LRP vs SPM", {"L_V": 0.25, "R_V": 0.0}, 0.2), ("LRP vs literature", {}, 1.0)],
            [{"name": "loading_response", "channel": "L_V", "start": 5, "end": 15, "lrp": True, "spm": False}],
            0.5,
        )
        assert "LRP regions hold 0.5 of the total relevance mass" in text
        assert "LRP vs SPM: overall 0.2000" in text
        assert "  L_V    0.2500" in text
        assert "(no regions on either side)" in text
        row = next(line for line in text.splitlines() if line.startswith("loading_response"))
        assert row.split() == ["loading_response", "L_V", "5", "15", "yes", "no"]

    def test_empty_literature(self):
        text = panels.overlap_table([], [], 0.5)
        assert "(no literature regions configured)" in text

    def test_template_requires_its_variables(self):
        with pytest.raises(MissingInput):
            FigureTemplateLibrary.PANEL.render(title="x")
