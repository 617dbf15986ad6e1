"""Saliency maps built from solved masks and first-layer attributions.

Maps live on the input's spatial domain: ``(H, W)`` for ``(H, W, C)`` images,
``(L,)`` for ``(L, E)`` token sequences and ``(n,)`` for flat inputs. A
position's score is the sum of the attributions of the selected neurons whose
receptive field touches it, and is only kept where the mask is on.
"""

from __future__ import annotations

import html
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .attribution import TopKSelection
from .errors import EncodingError, ShapeError
from .tensor_net import AffineMap


@dataclass(frozen=True, eq=False)
class SaliencyMap:
    scores: np.ndarray
    mask: np.ndarray  # bool, same shape as scores
    kind: str = "image"  # "image" or "text"

    def __post_init__(self):
        if self.scores.shape != self.mask.shape:
            raise ShapeError("scores and mask shapes differ")
        if not np.all(np.isfinite(self.scores)):
            raise ShapeError("saliency scores must be finite")


def spatial_shape(input_shape) -> tuple[int, ...]:
    shape = tuple(input_shape)
    if len(shape) == 3:
        return shape[:2]
    if len(shape) in (1, 2):
        return shape[:1]
    raise ShapeError(f"unsupported input rank {len(shape)}")


def map_kind(input_shape) -> str:
    return "image" if len(tuple(input_shape)) == 3 else "text"


def _positions_per_coord(input_shape) -> int:
    shape = tuple(input_shape)
    return shape[-1] if len(shape) in (2, 3) else 1


def receptive_fields(amap: AffineMap, neurons=None) -> dict[int, np.ndarray]:
    """Spatial positions (flat indices into the map) feeding each neuron."""
    per = _positions_per_coord(amap.input_shape)
    ids = range(amap.n_neurons) if neurons is None else (int(n) for n in neurons)
    return {i: np.unique(amap.rows[i][0] // per) for i in ids}


def to_spatial(input_mask) -> np.ndarray:
    """Collapse an input-coordinate mask to positions (any channel on)."""
    m = np.asarray(input_mask) != 0
    if m.ndim in (2, 3):
        return m.any(axis=-1)
    return m


def _coverage_scores(selection: TopKSelection, fields, shape) -> np.ndarray:
    scores = np.zeros(int(np.prod(shape)))
    for neuron, alpha in zip(selection.indices, selection.scores):
        scores[fields[int(neuron)]] += alpha
    return scores.reshape(shape)


def score_mask(mask, selection: TopKSelection, fields, kind: str = "image") -> SaliencyMap:
    """Attribution-weighted coverage of the positions where ``mask`` is on."""
    mask = np.asarray(mask).astype(bool)
    scores = _coverage_scores(selection, fields, mask.shape)
    scores = np.where(mask, scores, 0.0)
    return SaliencyMap(scores, mask, kind)


def smug_base_mask(selection: TopKSelection, fields, shape, kind: str = "image") -> SaliencyMap:
    """Union of the selected receptive fields, scored the same way."""
    if len(selection) == 0:
        raise EncodingError("smug-base needs at least one selected neuron")
    mask = np.zeros(int(np.prod(shape)), dtype=bool)
    for neuron in selection.indices:
        mask[fields[int(neuron)]] = True
    return score_mask(mask.reshape(shape), selection, fields, kind)


def rescale_visual(smap: SaliencyMap) -> SaliencyMap:
    """Map nonzero scores affinely onto [0.5, 1]; zeros stay zero."""
    s = smap.scores
    nz = s != 0
    out = np.zeros_like(s)
    if nz.any():
        lo, hi = s[nz].min(), s[nz].max()
        if hi == lo:
            out[nz] = 1.0
        else:
            out[nz] = 0.5 + 0.5 * (s[nz] - lo) / (hi - lo)
    return SaliencyMap(out, smap.mask.copy(), smap.kind)


def _to_bytes(values) -> np.ndarray:
    return np.clip(np.floor(np.asarray(values, dtype=np.float64) * 255.0 + 0.5), 0, 255).astype(np.uint8)


def render_image(smap: SaliencyMap, path, image=None, overlay_path=None) -> None:
    """Write the map as a binary PGM; optionally a 50% overlay PPM on ``image``."""
    s = smap.scores
    if s.ndim != 2:
        raise ShapeError("image rendering needs a 2-D map")
    h, w = s.shape
    Path(path).write_bytes(b"P5\n%d %d\n255\n" % (w, h) + _to_bytes(s).tobytes())
    if overlay_path is None:
        return
    img = np.asarray(image, dtype=np.float64)
    if img.shape[:2] != (h, w):
        raise ShapeError("overlay image does not match the map")
    if img.ndim == 2:
        img = img[:, :, None]
    rgb = np.repeat(img, 3, axis=2) if img.shape[2] == 1 else img[:, :, :3]
    span = rgb.max() - rgb.min()
    rgb = (rgb - rgb.min()) / span if span > 0 else np.zeros_like(rgb)
    heat = np.zeros_like(rgb)
    heat[:, :, 0] = np.clip(s, 0.0, 1.0)
    blended = 0.5 * rgb + 0.5 * heat
    Path(overlay_path).write_bytes(b"P6\n%d %d\n255\n" % (w, h) + _to_bytes(blended).tobytes())


def render_text(tokens, smap: SaliencyMap, path) -> None:
    """Self-contained HTML; each token's green background encodes its score."""
    scores = np.asarray(smap.scores).reshape(-1)
    if len(tokens) != scores.size:
        raise ShapeError(f"{len(tokens)} tokens but {scores.size} scores")
    spans = []
    for tok, s in zip(tokens, scores):
        a = float(np.clip(s, 0.0, 1.0))
        spans.append(
            f'<span style="background-color: rgba(0, 160, 0, {a:.3f})" '
            f'title="{s:.6g}">{html.escape(tok)}</span>'
        )
    doc = (
        "<!DOCTYPE html>\n<html>\n<head><meta charset=\"utf-8\"><title>saliency</title></head>\n"
        "<body>\n" + " ".join(spans) + ("\n" if spans else "") + "</body>\n</html>\n"
    )
    Path(path).write_text(doc, encoding="utf-8")
