"""LSC scoring, box baselines and aggregate statistics.

``LSC(a, c) = ln(max(0.05, a)) - ln(c)`` where ``a`` is the fractional area of
a box and ``c`` the classifier's confidence in the true label on that box,
cropped and bilinearly resized back to the full image size. Lower is better.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .tensor_net import Box, NetworkSpec, Sigmoid, Softmax, bilinear_resize, crop, predict

AREA_FLOOR = 0.05
MIN_CONFIDENCE = 1e-12
DEFAULT_THRESHOLDS = 20
OPTBOX_GRID = 10


class EmptyMaskError(ValueError):
    pass


@dataclass(frozen=True)
class LscRecord:
    method: str
    box: Box
    a: float
    a_clamped: float
    c: float
    score: float
    threshold: float | None = None
    flag: str = ""


def lsc(a: float, c: float) -> float:
    if not 0 < a <= 1:
        raise ValueError(f"fractional area must lie in (0, 1], got {a}")
    if c < MIN_CONFIDENCE:
        return math.inf
    return math.log(max(AREA_FLOOR, a)) - math.log(c)


def tightest_bbox(mask) -> Box:
    m = np.asarray(mask) != 0
    if m.ndim != 2:
        raise ValueError("tightest_bbox needs a 2-D mask")
    rows = np.flatnonzero(m.any(axis=1))
    cols = np.flatnonzero(m.any(axis=0))
    if rows.size == 0:
        raise EmptyMaskError("mask has no set bits")
    return Box(int(rows[0]), int(cols[0]), int(rows[-1]), int(cols[-1]))


def confidence(net: NetworkSpec, image, label: int) -> float:
    """Probability of ``label``; raw outputs are passed through a softmax first."""
    out = predict(net, image).reshape(-1)
    if not (net.layers and isinstance(net.layers[-1], (Softmax, Sigmoid))):
        e = np.exp(out - out.max())
        out = e / e.sum()
    return float(out[label])


def crop_confidence(net: NetworkSpec, image, box: Box, label: int) -> float:
    """Confidence on ``box`` cropped and resized to the full image.

    This is the only crop-resize path; every box method goes through it.
    """
    h, w = image.shape[:2]
    return confidence(net, bilinear_resize(crop(image, box), h, w), label)


def box_record(net, image, label, box: Box, method: str, threshold=None, flag="") -> LscRecord:
    h, w = image.shape[:2]
    a = box.area / (h * w)
    c = crop_confidence(net, image, box, label)
    return LscRecord(method, box, a, max(AREA_FLOOR, a), c, lsc(a, c), threshold, flag)


def maxbox(image) -> Box:
    return Box(0, 0, image.shape[0] - 1, image.shape[1] - 1)


def centerbox(height: int, width: int) -> Box:
    """Centered box of half the area: sides scaled by 1/sqrt(2), rounded half up."""
    bh = max(1, math.floor(height / math.sqrt(2) + 0.5))
    bw = max(1, math.floor(width / math.sqrt(2) + 0.5))
    top = (height - bh) // 2
    left = (width - bw) // 2
    return Box(top, left, top + bh - 1, left + bw - 1)


def fixed_boxes(net, image, label) -> dict[str, LscRecord]:
    h, w = image.shape[:2]
    return {
        "maxbox": box_record(net, image, label, maxbox(image), "maxbox"),
        "centerbox": box_record(net, image, label, centerbox(h, w), "centerbox"),
    }


def lsc_for_map(net, image, label, scores, n_thresholds: int = DEFAULT_THRESHOLDS,
                method: str = "map") -> LscRecord:
    """Best LSC over thresholds ``max * j / n`` for ``j = 1..n``.

    Positions with ``score >= threshold`` form the mask. Ties keep the smaller
    threshold. An all-zero map yields the MaxBox record flagged ``degenerate``.
    """
    if n_thresholds < 1:
        raise ValueError("n_thresholds must be >= 1")
    s = np.asarray(scores, dtype=np.float64)
    if s.shape != image.shape[:2]:
        raise ValueError(f"map shape {s.shape} does not match image {image.shape[:2]}")
    top = s.max()
    if not top > 0:
        return box_record(net, image, label, maxbox(image), method, None, "degenerate")
    best = None
    seen = {}
    for j in range(1, n_thresholds + 1):
        t = top * (j / n_thresholds)  # j / n == 1.0 exactly, so the last threshold never exceeds top
        box = tightest_bbox(s >= t)
        if box not in seen:
            seen[box] = box_record(net, image, label, box, method)
        rec = seen[box]
        if best is None or rec.score < best.score:
            best = LscRecord(rec.method, rec.box, rec.a, rec.a_clamped, rec.c, rec.score, t)
    return best


def grid_edges(size: int, grid: int) -> list[int]:
    return sorted({(i * size + grid // 2) // grid for i in range(grid + 1)})


def optbox(net, image, label, grid: int = OPTBOX_GRID) -> LscRecord:
    """Brute force over every box with corners on a ``grid x grid`` lattice."""
    if grid < 2:
        raise ValueError("grid must be >= 2")
    h, w = image.shape[:2]
    rows, cols = grid_edges(h, grid), grid_edges(w, grid)
    best = None
    for i, r0 in enumerate(rows):
        for r1 in rows[i + 1 :]:
            for j, c0 in enumerate(cols):
                for c1 in cols[j + 1 :]:
                    rec = box_record(net, image, label, Box(r0, c0, r1 - 1, c1 - 1), "optbox")
                    if best is None or (rec.score, rec.box.area, rec.box.as_tuple()) < (
                        best.score, best.box.area, best.box.as_tuple()
                    ):
                        best = rec
    return best


def optbox_candidates(height: int, width: int, grid: int) -> int:
    r, c = len(grid_edges(height, grid)), len(grid_edges(width, grid))
    return (r * (r - 1) // 2) * (c * (c - 1) // 2)


def win_rate(scores: dict[str, dict[str, float]]) -> dict[str, float]:
    """Percent of items where a method's score is <= every other method's.

    ``scores`` maps item id to ``{method: score}``; each method is judged on
    the items where it has a score.
    """
    wins: dict[str, int] = {}
    seen: dict[str, int] = {}
    for per_item in scores.values():
        if not per_item:
            continue
        low = min(per_item.values())
        for method, s in per_item.items():
            seen[method] = seen.get(method, 0) + 1
            wins[method] = wins.get(method, 0) + (s <= low)
    return {m: 100.0 * wins[m] / seen[m] for m in sorted(seen)}


def sparsity(scores) -> float:
    s = np.asarray(scores)
    return float(np.count_nonzero(s)) / s.size if s.size else 0.0


def quartiles(values) -> tuple[float, float, float]:
    """(25th percentile, median, 75th percentile)."""
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        return (math.nan, math.nan, math.nan)
    q = np.percentile(v, [25, 50, 75])
    return float(q[0]), float(q[1]), float(q[2])
