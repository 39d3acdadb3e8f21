"""
Report panels rendered as deterministic SVG: a row of six GRF channel subplots per panel.

A: class means with SPM clusters shaded. B/C: one class's mean with a one-standard-deviation
band and a relevance strip. D: effect size with total relevance overlaid.
"""

from dataclasses import dataclass
from typing import Dict, List, Mapping, Sequence, Tuple

import numpy as np

from gaitxai.figures.palette import NEGATIVE, POSITIVE, colors_for
from gaitxai.figures.templates import FigureTemplateLibrary
from gaitxai.models.gait import CHANNEL_ORDER, ChannelId
from gaitxai.models.statistics import Cluster
from gaitxai.services.lrp import normalize_for_display

WIDTH = 1200
HEIGHT = 300
_MARGIN = 10.0
_TOP = 34.0
_PLOT_HEIGHT = 232.0
_STRIP = 10.0

CLASS_COLORS = {0: "#%02x%02x%02x" % NEGATIVE, 1: "#%02x%02x%02x" % POSITIVE}
CLASS_NAMES = {0: "female (class 0)", 1: "male (class 1)"}


def _fmt(value: float) -> str:
    return f"{value:.2f}"


@dataclass
class _Frame:
    x: float
    y: float
    w: float
    h: float
    lo: float
    hi: float
    n: int

    def px(self, i: float) -> float:
        return self.x + (i / max(self.n - 1, 1)) * self.w

    def py(self, v: float) -> float:
        return self.y + self.h - (v - self.lo) / (self.hi - self.lo) * self.h

    def points(self, curve: np.ndarray) -> str:
        return " ".join(f"{_fmt(self.px(i))},{_fmt(self.py(v))}" for i, v in enumerate(curve))


def _value_range(*curves: np.ndarray) -> Tuple[float, float]:
    finite = np.concatenate([c[np.isfinite(c)] for c in curves]) if curves else np.zeros(0)
    if finite.size == 0:
        return -1.0, 1.0
    lo, hi = float(finite.min()), float(finite.max())
    if hi - lo == 0:
        return lo - 1.0, hi + 1.0
    pad = 0.05 * (hi - lo)
    return lo - pad, hi + pad


def _subplot(index: int, channel: ChannelId, lo: float, hi: float, n: int) -> Tuple[Dict, _Frame]:
    w = (WIDTH - _MARGIN * (len(CHANNEL_ORDER) + 1)) / len(CHANNEL_ORDER)
    x = _MARGIN + index * (w + _MARGIN)
    frame = _Frame(x=x, y=_TOP, w=w, h=_PLOT_HEIGHT, lo=lo, hi=hi, n=n)
    sub = {
        "id": f"channel-{channel.value}",
        "x": _fmt(x), "y": _fmt(_TOP), "w": _fmt(w), "h": _fmt(_PLOT_HEIGHT),
        "label": channel.value,
        "label_x": _fmt(x + w / 2), "label_y": _fmt(_TOP + _PLOT_HEIGHT + 16),
        "rects": [], "polygons": [], "polylines": [],
        "texts": [
            {"x": _fmt(x + 2), "y": _fmt(_TOP + 9), "fill": "#666666", "text": f"{hi:.3g}"},
            {"x": _fmt(x + 2), "y": _fmt(_TOP + _PLOT_HEIGHT - 2), "fill": "#666666", "text": f"{lo:.3g}"},
        ],
    }
    return sub, frame


def _render(title: str, subplots: List[Dict]) -> str:
    return FigureTemplateLibrary.PANEL.render(title=title, width=WIDTH, height=HEIGHT, subplots=subplots)


def _cluster_rect(frame: _Frame, cluster: Cluster) -> Dict[str, str]:
    left, right = frame.px(cluster.start), frame.px(cluster.end)
    return {
        "x": _fmt(left), "y": _fmt(frame.y),
        "w": _fmt(max(right - left, 1.0)), "h": _fmt(frame.h),
        "fill": "#969696", "opacity": "0.35",
    }


def build_panel_a(means: Mapping[int, Mapping[ChannelId, np.ndarray]],
                  clusters: Mapping[str, Sequence[Cluster]]) -> str:
    """Class means per channel with significant SPM clusters shaded"""
    subplots = []
    for index, channel in enumerate(CHANNEL_ORDER):
        curves = [np.asarray(means[label][channel]) for label in (0, 1)]
        lo, hi = _value_range(*curves)
        sub, frame = _subplot(index, channel, lo, hi, len(curves[0]))
        sub["rects"] = [_cluster_rect(frame, c) for c in clusters.get(channel.value, ())]
        sub["polylines"] = [
            {"points": frame.points(curve), "stroke": CLASS_COLORS[label], "width": "1.5"}
            for label, curve in zip((0, 1), curves)
        ]
        subplots.append(sub)
    return _render("A: class means (shaded: SPM clusters)", subplots)


def build_class_panel(label: int, signals: Mapping[ChannelId, Tuple[np.ndarray, np.ndarray]],
                      relevance: Mapping[ChannelId, np.ndarray], title: str) -> str:
    """Mean ± one standard deviation with a relevance strip scaled by that strip's own max |r|"""
    subplots = []
    for index, channel in enumerate(CHANNEL_ORDER):
        mean, sd = (np.asarray(a) for a in signals[channel])
        lo, hi = _value_range(mean - sd, mean + sd)
        sub, frame = _subplot(index, channel, lo, hi, len(mean))
        upper = [(frame.px(i), frame.py(v)) for i, v in enumerate(mean + sd)]
        lower = [(frame.px(i), frame.py(v)) for i, v in enumerate(mean - sd)][::-1]
        sub["polygons"] = [{
            "points": " ".join(f"{_fmt(x)},{_fmt(y)}" for x, y in upper + lower),
            "fill": CLASS_COLORS[label], "opacity": "0.2",
        }]
        sub["polylines"] = [{"points": frame.points(mean), "stroke": "#252525", "width": "1.5"}]
        if channel in relevance:
            values = normalize_for_display(relevance[channel])[0]
            step = frame.w / len(values)
            sub["rects"] = [
                {
                    "x": _fmt(frame.x + i * step), "y": _fmt(frame.y + frame.h - _STRIP),
                    "w": _fmt(step), "h": _fmt(_STRIP), "fill": color, "opacity": "1",
                }
                for i, color in enumerate(colors_for(values, 1.0))
            ]
        subplots.append(sub)
    return _render(title, subplots)


def build_panel_d(effect_sizes: Mapping[str, np.ndarray], total_relevance: Mapping[ChannelId, np.ndarray]) -> str:
    """Cohen's d per channel (black) with total relevance on its own scale (orange)"""
    subplots = []
    for index, channel in enumerate(CHANNEL_ORDER):
        d = effect_sizes.get(channel.value)
        total = total_relevance.get(channel)
        reference = d if d is not None else total
        n = len(reference) if reference is not None else 2
        lo, hi = _value_range(*(c for c in (d, np.zeros(n)) if c is not None))
        sub, frame = _subplot(index, channel, lo, hi, n)
        zero = frame.py(0.0)
        sub["polylines"] = [{
            "points": f"{_fmt(frame.x)},{_fmt(zero)} {_fmt(frame.x + frame.w)},{_fmt(zero)}",
            "stroke": "#d9d9d9", "width": "1",
        }]
        if d is not None:
            sub["polylines"].append({"points": frame.points(np.asarray(d)), "stroke": "#252525", "width": "1.5"})
        if total is not None:
            peak = float(np.max(total)) if np.max(total) > 0 else 1.0
            relevance_frame = _Frame(x=frame.x, y=frame.y, w=frame.w, h=frame.h, lo=0.0, hi=peak * 1.05, n=len(total))
            sub["polylines"].append({
                "points": relevance_frame.points(np.asarray(total)), "stroke": "#e08214", "width": "1.5",
            })
            sub["texts"].append({
                "x": _fmt(frame.x + frame.w - 60), "y": _fmt(frame.y + 9), "fill": "#e08214",
                "text": f"R max {peak:.3g}",
            })
        subplots.append(sub)
    return _render("D: effect size (black) and total relevance (orange)", subplots)


def overlap_table(pairs: Sequence[Tuple[str, Dict[str, float], float]],
                  consistency: Sequence[Dict[str, object]], mass_fraction: float) -> str:
    rows = [
        {
            "name": name,
            "overall": f"{overall:.4f}",
            "channels": [{"channel": ch, "score": f"{score:.4f}"} for ch, score in sorted(per_channel.items())],
        }
        for name, per_channel, overall in pairs
    ]
    consistency_rows = [
        {**row, "lrp": "yes" if row["lrp"] else "no", "spm": "yes" if row["spm"] else "no"}
        for row in consistency
    ]
    return FigureTemplateLibrary.OVERLAP_TABLE.render(
        pairs=rows, consistency=consistency_rows, mass_fraction=f"{mass_fraction:g}",
    )


def class_title(label: int) -> str:
    return f"{'B' if label == 0 else 'C'}: {CLASS_NAMES[label]} mean ± 1 SD, LRP relevance strip"
