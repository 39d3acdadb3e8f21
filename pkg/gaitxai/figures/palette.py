"""
Fixed 64-step diverging color scale for relevance: blue (negative), neutral at zero, red (positive)
"""

from typing import List, Tuple

import numpy as np

STEPS = 64
NEGATIVE = (0x21, 0x66, 0xAC)
NEUTRAL = (0xF7, 0xF7, 0xF7)
POSITIVE = (0xB2, 0x18, 0x2B)
NEUTRAL_HEX = "#f7f7f7"


def _hex(rgb: Tuple[float, float, float]) -> str:
    return "#" + "".join(f"{int(round(c)):02x}" for c in rgb)


def _lerp(a: Tuple[int, int, int], b: Tuple[int, int, int], f: float) -> Tuple[float, float, float]:
    return tuple(x + (y - x) * f for x, y in zip(a, b))


def _build() -> List[str]:
    half = STEPS // 2
    lower = [_hex(_lerp(NEGATIVE, NEUTRAL, i / half)) for i in range(half)]
    upper = [_hex(_lerp(NEUTRAL, POSITIVE, (i + 1) / half)) for i in range(half)]
    return lower + upper


PALETTE: List[str] = _build()


def color_for(value: float) -> str:
    """Color of a value already scaled into [-1, 1]; exactly zero maps to the neutral color"""
    if value == 0 or not np.isfinite(value):
        return NEUTRAL_HEX
    half = STEPS // 2
    if value < 0:
        return PALETTE[min(half - 1, int(np.floor((max(value, -1.0) + 1.0) * half)))]
    return PALETTE[half + min(half - 1, int(np.floor(min(value, 1.0) * half)))]


def colors_for(values: np.ndarray, scale: float) -> List[str]:
    """Colors for raw values divided by a shared symmetric scale; scale 0 gives all neutral"""
    if scale == 0:
        return [NEUTRAL_HEX] * len(values)
    return [color_for(float(v) / scale) for v in values]
