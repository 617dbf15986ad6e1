"""Integrated Gradients, applied to inputs or to first-layer activations."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError, UnsupportedModelError
from .tensor_net import NetworkSpec, as_tensor, forward, gradient, predict

DEFAULT_STEPS = 64


@dataclass(frozen=True, eq=False)
class AttributionConfig:
    """Riemann resolution and baseline; ``baseline=None`` means all zeros."""

    steps: int = DEFAULT_STEPS
    baseline: np.ndarray | None = None

    def __post_init__(self):
        if int(self.steps) < 1:
            raise ValueError("steps must be >= 1")
        if self.baseline is not None:
            object.__setattr__(self, "baseline", as_tensor(self.baseline))


@dataclass(frozen=True, eq=False)
class AttributionVector:
    scores: np.ndarray  # one entry per first-layer neuron (flat index)
    activations: np.ndarray  # L1 values the scores were computed at
    output_index: int

    @property
    def neuron_count(self) -> int:
        return self.scores.size


@dataclass(frozen=True, eq=False)
class TopKSelection:
    k: int
    indices: np.ndarray  # neuron ids, descending score
    scores: np.ndarray

    def __len__(self):
        return len(self.indices)

    def prefix(self, k: int) -> "TopKSelection":
        return TopKSelection(k, self.indices[:k].copy(), self.scores[:k].copy())


def default_output_index(net: NetworkSpec, x) -> int:
    return int(np.argmax(predict(net, x)))


def integrated_gradients(net: NetworkSpec, x, output_index: int | None = None,
                         cfg: AttributionConfig | None = None) -> np.ndarray:
    """``(x - x') * mean_t grad F(x' + a_t (x - x'))`` with midpoints ``a_t = (t + 0.5) / steps``."""
    cfg = cfg or AttributionConfig()
    x = as_tensor(x)
    base = np.zeros_like(x) if cfg.baseline is None else cfg.baseline
    if base.shape != x.shape:
        raise ShapeError(f"baseline shape {base.shape} does not match input {x.shape}")
    if output_index is None:
        output_index = default_output_index(net, x)
    delta = x - base
    total = np.zeros_like(x)
    for t in range(cfg.steps):
        alpha = (t + 0.5) / cfg.steps
        total += gradient(net, base + alpha * delta, output_index)
    return delta * (total / cfg.steps)


def first_layer_attribution(net: NetworkSpec, x, output_index: int | None = None,
                            steps: int = DEFAULT_STEPS) -> AttributionVector:
    """Score each first-layer neuron by IG of the rest of the network.

    The first layer output ``L1`` (affine layer plus its activation) is the
    input of the suffix network; the baseline is the all-zeros activation.
    """
    x = as_tensor(x)
    end = net.first_block_end()
    if end >= len(net.layers):
        raise UnsupportedModelError("network has no layers after the first block")
    if output_index is None:
        output_index = default_output_index(net, x)
    activations = forward(net, x)[end - 1]
    scores = integrated_gradients(net.suffix(end), activations, output_index, AttributionConfig(steps))
    return AttributionVector(scores.reshape(-1), activations.reshape(-1), int(output_index))


def top_k_positive(attr: AttributionVector | np.ndarray, k: int) -> TopKSelection:
    """Up to ``k`` strictly positive scores, descending; ties go to the lower index."""
    if k < 1:
        raise ValueError("k must be >= 1")
    scores = np.asarray(getattr(attr, "scores", attr), dtype=np.float64).reshape(-1)
    pos = np.flatnonzero(scores > 0)
    order = pos[np.lexsort((pos, -scores[pos]))][:k]
    return TopKSelection(k, order, scores[order])
