"""Deterministic desk-scale models and inputs with planted evidence.

Randomness comes from ``XorShift64Star`` (Vigna's xorshift64*: shifts 12, 25,
27 and multiplier 0x2545F4914F6CDD1D) seeded through one splitmix64 step, so
the same seed yields the same bytes on any platform. Generated reals are
rounded to float32 so tensor files store them exactly.

Kinds:

``dense-mnist-like``
    8x8x1 image, flatten, dense 64->8, relu, dense 8->4, softmax. Class ``c``
    is evidenced by a bright 3x3 patch inside quadrant ``c``; hidden units
    ``2c`` and ``2c+1`` respond to that quadrant.
``conv-image``
    16x16x1 image, conv 3x3 with 4 filters (valid), relu, flatten,
    dense 784->4, softmax. Filter 0 is a blob detector; class ``c`` reads it
    over quadrant ``c`` where a bright 4x4 patch is planted.
``conv1d-text``
    12 tokens x 8 dims, conv1d width 3 with 4 kernels, relu, flatten,
    dense 40->1, sigmoid. Kernel 0 fires on the planted ``good`` token.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .model_io import (
    AnnotationRecord,
    save_annotations,
    save_model,
    save_tensor,
    save_tokens,
)
from .tensor_net import Box, Conv1d, Conv2d, Dense, Flatten, NetworkSpec, Relu, Sigmoid, Softmax, predict

KINDS = ("dense-mnist-like", "conv-image", "conv1d-text")
_MASK64 = (1 << 64) - 1


class XorShift64Star:
    def __init__(self, seed: int):
        z = (seed + 0x9E3779B97F4A7C15) & _MASK64
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
        self.state = (z ^ (z >> 31)) or 0x9E3779B97F4A7C15

    def next_u64(self) -> int:
        x = self.state
        x ^= x >> 12
        x ^= (x << 25) & _MASK64
        x ^= x >> 27
        self.state = x
        return (x * 0x2545F4914F6CDD1D) & _MASK64

    def random(self) -> float:
        """Uniform in [0, 1) with 53 random bits."""
        return (self.next_u64() >> 11) * (1.0 / (1 << 53))

    def uniform(self, lo: float, hi: float, shape=()) -> np.ndarray:
        n = int(np.prod(shape)) if shape else 1
        vals = np.array([lo + (hi - lo) * self.random() for _ in range(n)])
        vals = vals.astype(np.float32).astype(np.float64)
        return vals.reshape(shape) if shape else vals[0]

    def randint(self, lo: int, hi: int) -> int:
        """Integer in [lo, hi)."""
        return lo + self.next_u64() % (hi - lo)


@dataclass(frozen=True)
class FixtureSpec:
    kind: str
    seed: int
    n_items: int = 4

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown fixture kind {self.kind!r}; choose from {KINDS}")


@dataclass(eq=False)
class Fixture:
    spec: FixtureSpec
    net: NetworkSpec
    inputs: dict[str, np.ndarray]
    labels: dict[str, int]
    annotations: list[AnnotationRecord]
    tokens: dict[str, list[str]] = field(default_factory=dict)

    @property
    def name(self) -> str:
        return f"{self.spec.kind}-s{self.spec.seed}"


def _f32(a) -> np.ndarray:
    return np.asarray(a, dtype=np.float32).astype(np.float64)


def _dense_mnist(rng: XorShift64Star, n_items: int) -> Fixture:
    w1 = rng.uniform(-0.15, 0.05, (8, 64))
    for c in range(4):
        r0, c0 = 4 * (c // 2), 4 * (c % 2)
        for unit in (2 * c, 2 * c + 1):
            quad = np.zeros((8, 8))
            quad[r0 : r0 + 4, c0 : c0 + 4] = rng.uniform(0.4, 1.0, (4, 4))
            w1[unit] += quad.reshape(-1)
    b1 = rng.uniform(-0.6, -0.3, (8,))
    w2 = rng.uniform(-0.3, 0.0, (4, 8))
    for c in range(4):
        w2[c, 2 * c] = rng.uniform(1.0, 1.5)
        w2[c, 2 * c + 1] = rng.uniform(1.0, 1.5)
    b2 = _f32(np.zeros(4))
    net = NetworkSpec((8, 8, 1), [Flatten(), Dense(_f32(w1), b1), Relu(), Dense(_f32(w2), b2), Softmax()])

    inputs, labels, ann = {}, {}, []
    for i in range(n_items):
        label = i % 4
        img = rng.uniform(0.0, 0.15, (8, 8, 1))
        r = 4 * (label // 2) + rng.randint(0, 2)
        c = 4 * (label % 2) + rng.randint(0, 2)
        img[r : r + 3, c : c + 3, 0] = rng.uniform(0.7, 1.0, (3, 3))
        item = f"item{i:02d}"
        inputs[item], labels[item] = _f32(img), label
        ann.append(AnnotationRecord(item, label, box=Box(r, c, r + 2, c + 2)))
    return Fixture(None, net, inputs, labels, ann)


def _conv_image(rng: XorShift64Star, n_items: int) -> Fixture:
    kern = np.zeros((3, 3, 1, 4))
    kern[:, :, 0, 0] = rng.uniform(0.8, 1.2, (3, 3)) / 9.0 * 2.0
    kern[:, :, 0, 1] = np.array([[1, 1, 1], [0, 0, 0], [-1, -1, -1]]) * rng.uniform(0.3, 0.6)
    kern[:, :, 0, 2] = np.array([[1, 0, -1], [1, 0, -1], [1, 0, -1]]) * rng.uniform(0.3, 0.6)
    kern[:, :, 0, 3] = rng.uniform(-0.5, 0.5, (3, 3))
    b1 = np.array([-0.9, -0.1, -0.1, rng.uniform(-0.2, 0.0)])
    head = rng.uniform(-0.02, 0.02, (4, 14, 14, 4))
    for c in range(4):
        r0, c0 = 7 * (c // 2), 7 * (c % 2)
        head[c, r0 : r0 + 7, c0 : c0 + 7, 0] += rng.uniform(0.5, 1.0, (7, 7))
        head[:, r0 : r0 + 7, c0 : c0 + 7, 0] -= 0.1 * (np.arange(4) != c)[:, None, None]
    net = NetworkSpec(
        (16, 16, 1),
        [
            Conv2d(_f32(kern), _f32(b1)),
            Relu(),
            Flatten(),
            Dense(_f32(head.reshape(4, -1)), _f32(np.zeros(4))),
            Softmax(),
        ],
    )
    inputs, labels, ann = {}, {}, []
    for i in range(n_items):
        label = i % 4
        img = rng.uniform(0.0, 0.2, (16, 16, 1))
        r = 8 * (label // 2) + 1 + rng.randint(0, 3)
        c = 8 * (label % 2) + 1 + rng.randint(0, 3)
        img[r : r + 4, c : c + 4, 0] = rng.uniform(0.8, 1.0, (4, 4))
        item = f"item{i:02d}"
        inputs[item], labels[item] = _f32(img), label
        ann.append(AnnotationRecord(item, label, box=Box(r, c, r + 3, c + 3)))
    return Fixture(None, net, inputs, labels, ann)


def _conv1d_text(rng: XorShift64Star, n_items: int) -> Fixture:
    vocab = [f"w{i}" for i in range(12)]
    emb = {w: rng.uniform(-0.5, 0.5, (8,)) for w in vocab}
    good = rng.uniform(-1.0, 1.0, (8,))
    good = good / np.linalg.norm(good) * 2.0
    emb["good"] = _f32(good)
    kern = rng.uniform(-0.05, 0.05, (3, 8, 4))
    kern[1, :, 0] = good / 4.0  # response 1.0 on the good token
    kern[:, :, 1:] += rng.uniform(-0.3, 0.3, (3, 8, 3))
    b1 = np.array([-0.4, 0.0, 0.0, 0.0])
    head = rng.uniform(-0.05, 0.05, (1, 10, 4))
    head[0, :, 0] = rng.uniform(2.0, 3.0, (10,))
    net = NetworkSpec(
        (12, 8),
        [
            Conv1d(_f32(kern), _f32(b1)),
            Relu(),
            Flatten(),
            Dense(_f32(head.reshape(1, -1)), _f32([-0.8])),
            Sigmoid(),
        ],
    )
    inputs, labels, ann, tokens = {}, {}, [], {}
    for i in range(n_items):
        words = [vocab[rng.randint(0, len(vocab))] for _ in range(12)]
        spots = sorted({1 + rng.randint(0, 10) for _ in range(1 + i % 2)})
        for s in spots:
            words[s] = "good"
        item = f"item{i:02d}"
        inputs[item] = np.stack([emb[w] for w in words])
        labels[item] = 0
        tokens[item] = words
        ann.append(AnnotationRecord(item, 0, rationale=tuple(spots)))
    return Fixture(None, net, inputs, labels, ann, tokens)


_BUILDERS = {"dense-mnist-like": _dense_mnist, "conv-image": _conv_image, "conv1d-text": _conv1d_text}


def check_fixture(fx: Fixture) -> None:
    """Raise if a planted input is not classified as intended."""
    for item, x in fx.inputs.items():
        out = predict(fx.net, x)
        if fx.spec.kind == "conv1d-text":
            planted = fx.annotations[list(fx.inputs).index(item)].rationale
            masked = x.copy()
            masked[list(planted)] = 0.0
            if not (out[0] > 0.5 and predict(fx.net, masked)[0] < 0.5):
                raise AssertionError(f"{fx.name}/{item}: planted tokens do not decide the output")
        else:
            label = fx.labels[item]
            margin = out[label] - np.delete(out, label).max()
            if margin <= 0:
                raise AssertionError(f"{fx.name}/{item}: misclassified (margin {margin:.4f})")


def build_fixture(spec: FixtureSpec) -> Fixture:
    fx = _BUILDERS[spec.kind](XorShift64Star(spec.seed), spec.n_items)
    fx.spec = spec
    check_fixture(fx)
    return fx


def generate(spec: FixtureSpec, out_dir) -> list[Path]:
    """Write model, inputs, annotations and a manifest; returns the paths written."""
    fx = build_fixture(spec)
    out = Path(out_dir)
    (out / "inputs").mkdir(parents=True, exist_ok=True)
    written = [out / "model.json"]
    save_model(written[0], fx.net)
    for item, x in fx.inputs.items():
        p = out / "inputs" / f"{item}.tnsr"
        save_tensor(p, x)
        written.append(p)
    ann_path = out / ("rationales.csv" if fx.tokens else "annotations.csv")
    save_annotations(ann_path, fx.annotations)
    written.append(ann_path)
    if fx.tokens:
        (out / "tokens").mkdir(exist_ok=True)
        for item, toks in fx.tokens.items():
            p = out / "tokens" / f"{item}.tokens"
            save_tokens(p, toks)
            written.append(p)
    manifest = {
        "kind": spec.kind,
        "seed": spec.seed,
        "items": {item: {"label": fx.labels[item]} for item in fx.inputs},
    }
    mp = out / "manifest.json"
    mp.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    written.append(mp)
    return written
