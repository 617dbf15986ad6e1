"""Small dense/convolutional networks evaluated with plain numpy.

Tensors are ``numpy.ndarray`` values. Images are laid out ``(height, width,
channels)`` and token sequences ``(length, embed_dim)``; all indexing into a
tensor's flat view is row-major. Arithmetic runs in float64.

Every affine layer accumulates its dot products in ascending input-index order
(via ``cumsum``) and adds the bias last. ``AffineMap.evaluate`` follows the same
order, so the sparse description of the first layer reproduces the forward
pass bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ShapeError, UnsupportedModelError

PADDING_MODES = ("valid", "same")


def as_tensor(values) -> np.ndarray:
    t = np.asarray(values, dtype=np.float64)
    if t.ndim == 0:
        raise ShapeError("tensors must have rank >= 1")
    if not np.all(np.isfinite(t)):
        raise ShapeError("tensor contains non-finite entries")
    return t


@dataclass(frozen=True)
class Box:
    """Inclusive pixel rectangle ``rows row_min..row_max, cols col_min..col_max``."""

    row_min: int
    col_min: int
    row_max: int
    col_max: int

    def __post_init__(self):
        if self.row_min < 0 or self.col_min < 0:
            raise ShapeError(f"negative box corner in {self}")
        if self.row_min > self.row_max or self.col_min > self.col_max:
            raise ShapeError(f"box corners out of order in {self}")

    @property
    def height(self) -> int:
        return self.row_max - self.row_min + 1

    @property
    def width(self) -> int:
        return self.col_max - self.col_min + 1

    @property
    def area(self) -> int:
        return self.height * self.width

    def fits(self, height: int, width: int) -> bool:
        return self.row_max < height and self.col_max < width

    def as_tuple(self) -> tuple[int, int, int, int]:
        return (self.row_min, self.col_min, self.row_max, self.col_max)


# --------------------------------------------------------------------------
# Layers
# --------------------------------------------------------------------------


def _conv_out_len(size: int, k: int, stride: int, padding: str) -> tuple[int, int]:
    """Output length and leading pad for one spatial axis."""
    if padding == "valid":
        if size < k:
            raise ShapeError(f"kernel {k} larger than input {size} with valid padding")
        return (size - k) // stride + 1, 0
    out = -(-size // stride)
    total = max((out - 1) * stride + k - size, 0)
    return out, total // 2


@dataclass(frozen=True, eq=False)
class Dense:
    weights: np.ndarray  # (out, in)
    biases: np.ndarray  # (out,)
    kind = "dense"
    affine = True

    def __post_init__(self):
        object.__setattr__(self, "weights", as_tensor(self.weights))
        object.__setattr__(self, "biases", as_tensor(self.biases))
        if self.weights.ndim != 2:
            raise ShapeError("dense weights must be a matrix")
        if self.biases.shape != (self.weights.shape[0],):
            raise ShapeError(
                f"dense biases have shape {self.biases.shape}, expected ({self.weights.shape[0]},)"
            )

    def output_shape(self, shape):
        if tuple(shape) != (self.weights.shape[1],):
            raise ShapeError(f"dense layer expects input ({self.weights.shape[1]},), got {tuple(shape)}")
        return (self.weights.shape[0],)

    def forward(self, x):
        prods = self.weights * x[None, :]
        if prods.shape[1] == 0:
            return self.biases.copy()
        return np.cumsum(prods, axis=1)[:, -1] + self.biases

    def backward(self, x, y, grad):
        return self.weights.T @ grad

    def affine_rows(self, shape):
        self.output_shape(shape)
        rows = []
        for w in self.weights:
            idx = np.flatnonzero(w)
            rows.append((idx, w[idx].copy()))
        return rows


@dataclass(frozen=True, eq=False)
class Conv2d:
    kernels: np.ndarray  # (kh, kw, in_channels, out_channels)
    biases: np.ndarray  # (out_channels,)
    stride: int = 1
    padding: str = "valid"
    kind = "conv2d"
    affine = True

    def __post_init__(self):
        object.__setattr__(self, "kernels", as_tensor(self.kernels))
        object.__setattr__(self, "biases", as_tensor(self.biases))
        if self.kernels.ndim != 4:
            raise ShapeError("conv2d kernels must have shape (kh, kw, in, out)")
        if self.biases.shape != (self.kernels.shape[3],):
            raise ShapeError("conv2d biases must have one entry per output channel")
        if int(self.stride) < 1:
            raise ShapeError("stride must be >= 1")
        if self.padding not in PADDING_MODES:
            raise ShapeError(f"unknown padding mode {self.padding!r}")

    def _geometry(self, shape):
        if len(shape) != 3 or shape[2] != self.kernels.shape[2]:
            raise ShapeError(
                f"conv2d expects input (H, W, {self.kernels.shape[2]}), got {tuple(shape)}"
            )
        kh, kw = self.kernels.shape[:2]
        oh, pt = _conv_out_len(shape[0], kh, self.stride, self.padding)
        ow, pl = _conv_out_len(shape[1], kw, self.stride, self.padding)
        return oh, ow, pt, pl

    def output_shape(self, shape):
        oh, ow, _, _ = self._geometry(shape)
        return (oh, ow, self.kernels.shape[3])

    def _patch_index(self, shape):
        """Flat input index of every window element, ``-1`` where padded."""
        h, w, c = shape
        kh, kw = self.kernels.shape[:2]
        oh, ow, pt, pl = self._geometry(shape)
        s = self.stride
        r = (np.arange(oh) * s - pt)[:, None, None, None, None] + np.arange(kh)[None, None, :, None, None]
        q = (np.arange(ow) * s - pl)[None, :, None, None, None] + np.arange(kw)[None, None, None, :, None]
        ch = np.arange(c)[None, None, None, None, :]
        r, q, ch = np.broadcast_arrays(r, q, ch)
        idx = (r * w + q) * c + ch
        idx = np.where((r < 0) | (r >= h) | (q < 0) | (q >= w), -1, idx)
        return idx.reshape(oh, ow, kh * kw * c)

    def forward(self, x):
        idx = self._patch_index(x.shape)
        flat = np.concatenate([x.reshape(-1), [0.0]])
        patches = flat[idx]  # index -1 reads the appended zero
        kern = self.kernels.reshape(-1, self.kernels.shape[3])
        prods = patches[:, :, :, None] * kern[None, None, :, :]
        return np.cumsum(prods, axis=2)[:, :, -1, :] + self.biases

    def backward(self, x, y, grad):
        idx = self._patch_index(x.shape)
        kern = self.kernels.reshape(-1, self.kernels.shape[3])
        gp = grad @ kern.T  # (oh, ow, K)
        out = np.zeros(x.size + 1)
        np.add.at(out, idx.reshape(-1), gp.reshape(-1))
        return out[:-1].reshape(x.shape)

    def affine_rows(self, shape):
        idx = self._patch_index(tuple(shape))
        oh, ow, k = idx.shape
        kern = self.kernels.reshape(k, -1)
        rows = []
        for i in range(oh):
            for j in range(ow):
                cols = idx[i, j]
                valid = cols >= 0
                for f in range(kern.shape[1]):
                    keep = valid & (kern[:, f] != 0)
                    rows.append((cols[keep].copy(), kern[keep, f].copy()))
        return rows


@dataclass(frozen=True, eq=False)
class Conv1d:
    kernels: np.ndarray  # (width, in_channels, out_channels)
    biases: np.ndarray
    stride: int = 1
    padding: str = "valid"
    kind = "conv1d"
    affine = True

    def __post_init__(self):
        object.__setattr__(self, "kernels", as_tensor(self.kernels))
        object.__setattr__(self, "biases", as_tensor(self.biases))
        if self.kernels.ndim != 3:
            raise ShapeError("conv1d kernels must have shape (width, in, out)")
        if self.biases.shape != (self.kernels.shape[2],):
            raise ShapeError("conv1d biases must have one entry per output channel")
        if int(self.stride) < 1:
            raise ShapeError("stride must be >= 1")
        if self.padding not in PADDING_MODES:
            raise ShapeError(f"unknown padding mode {self.padding!r}")

    # Treated as a conv2d over a (length, 1, channels) image.
    def _as_2d(self):
        return Conv2d(self.kernels[:, None, :, :], self.biases, self.stride, self.padding)

    def output_shape(self, shape):
        if len(shape) != 2:
            raise ShapeError(f"conv1d expects input (length, channels), got {tuple(shape)}")
        oh, _, f = self._as_2d().output_shape((shape[0], 1, shape[1]))
        return (oh, f)

    def forward(self, x):
        self.output_shape(x.shape)
        y = self._as_2d().forward(x[:, None, :])
        return y[:, 0, :]

    def backward(self, x, y, grad):
        g = self._as_2d().backward(x[:, None, :], None, grad[:, None, :])
        return g[:, 0, :]

    def affine_rows(self, shape):
        self.output_shape(shape)
        return self._as_2d().affine_rows((shape[0], 1, shape[1]))


@dataclass(frozen=True, eq=False)
class Flatten:
    kind = "flatten"
    affine = False

    def output_shape(self, shape):
        return (int(np.prod(shape)),)

    def forward(self, x):
        return x.reshape(-1)

    def backward(self, x, y, grad):
        return grad.reshape(x.shape)


@dataclass(frozen=True, eq=False)
class Relu:
    kind = "relu"
    affine = False

    def output_shape(self, shape):
        return tuple(shape)

    def forward(self, x):
        return np.maximum(x, 0.0)

    def backward(self, x, y, grad):
        # subgradient at exactly 0 is 0
        return np.where(x > 0, grad, 0.0)


@dataclass(frozen=True, eq=False)
class Sigmoid:
    kind = "sigmoid"
    affine = False

    def output_shape(self, shape):
        return tuple(shape)

    def forward(self, x):
        out = np.empty_like(x)
        pos = x >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
        e = np.exp(x[~pos])
        out[~pos] = e / (1.0 + e)
        return out

    def backward(self, x, y, grad):
        return grad * y * (1.0 - y)


@dataclass(frozen=True, eq=False)
class Softmax:
    kind = "softmax"
    affine = False

    def output_shape(self, shape):
        if len(shape) != 1:
            raise ShapeError("softmax applies to rank-1 tensors only")
        return tuple(shape)

    def forward(self, x):
        e = np.exp(x - x.max())
        return e / e.sum()

    def backward(self, x, y, grad):
        return y * (grad - np.dot(grad, y))


Layer = Dense | Conv2d | Conv1d | Flatten | Relu | Sigmoid | Softmax
ACTIVATIONS = (Relu, Sigmoid, Softmax)


@dataclass(frozen=True, eq=False)
class NetworkSpec:
    """An input shape plus an ordered list of layers."""

    input_shape: tuple[int, ...]
    layers: tuple = field(default_factory=tuple)

    def __post_init__(self):
        shape = tuple(int(d) for d in self.input_shape)
        if not shape or any(d < 1 for d in shape):
            raise ShapeError(f"invalid input shape {self.input_shape}")
        object.__setattr__(self, "input_shape", shape)
        object.__setattr__(self, "layers", tuple(self.layers))
        shapes = [shape]
        for i, layer in enumerate(self.layers):
            try:
                shapes.append(tuple(layer.output_shape(shapes[-1])))
            except ShapeError as exc:
                raise ShapeError(f"layer {i} ({layer.kind}): {exc}") from None
        object.__setattr__(self, "_shapes", tuple(shapes))

    @property
    def shapes(self) -> tuple[tuple[int, ...], ...]:
        """Shape of the input followed by the output shape of every layer."""
        return self._shapes

    @property
    def output_shape(self) -> tuple[int, ...]:
        return self._shapes[-1]

    def first_affine_index(self) -> int:
        for i, layer in enumerate(self.layers):
            if layer.affine:
                return i
            if not isinstance(layer, Flatten):
                break
        raise UnsupportedModelError(
            "the first parameterized layer must be Dense, Conv1d or Conv2d"
        )

    def first_block_end(self) -> int:
        """Index one past the first affine layer and its activation, if any."""
        i = self.first_affine_index() + 1
        if i < len(self.layers) and isinstance(self.layers[i], ACTIVATIONS):
            i += 1
        return i

    def suffix(self, start: int) -> "NetworkSpec":
        return NetworkSpec(self._shapes[start], self.layers[start:])


def _check_input(net: NetworkSpec, x) -> np.ndarray:
    x = as_tensor(x)
    if x.shape != net.input_shape:
        raise ShapeError(f"input shape {x.shape} does not match network input {net.input_shape}")
    return x


def forward(net: NetworkSpec, x) -> list[np.ndarray]:
    """Outputs of every layer; the last entry is the network output."""
    cur = _check_input(net, x)
    outs = []
    for layer in net.layers:
        cur = layer.forward(cur)
        outs.append(cur)
    return outs


def predict(net: NetworkSpec, x) -> np.ndarray:
    outs = forward(net, x)
    return outs[-1] if outs else as_tensor(x)


def gradient(net: NetworkSpec, x, output_index: int) -> np.ndarray:
    """Reverse-mode gradient of one flat output entry with respect to ``x``."""
    x = _check_input(net, x)
    outs = forward(net, x)
    final = outs[-1] if outs else x
    n_out = final.size
    if not 0 <= output_index < n_out:
        raise ShapeError(f"output index {output_index} out of range for {n_out} outputs")
    grad = np.zeros(n_out)
    grad[output_index] = 1.0
    grad = grad.reshape(final.shape)
    inputs = [x] + outs[:-1]
    for layer, inp, out in zip(reversed(net.layers), reversed(inputs), reversed(outs)):
        grad = layer.backward(inp, out, grad)
    return grad


# --------------------------------------------------------------------------
# Image helpers
# --------------------------------------------------------------------------


def _axis_weights(size: int, new_size: int):
    src = (np.arange(new_size) + 0.5) * (size / new_size) - 0.5
    src = np.clip(src, 0.0, size - 1)
    lo = np.floor(src).astype(int)
    hi = np.minimum(lo + 1, size - 1)
    return lo, hi, src - lo


def bilinear_resize(t, new_h: int, new_w: int) -> np.ndarray:
    """Resize an ``(H, W, C)`` tensor with half-pixel-center sampling."""
    t = as_tensor(t)
    if t.ndim != 3:
        raise ShapeError("bilinear_resize expects an (H, W, C) tensor")
    if new_h < 1 or new_w < 1:
        raise ShapeError("target size must be at least 1x1")
    r0, r1, fr = _axis_weights(t.shape[0], new_h)
    c0, c1, fc = _axis_weights(t.shape[1], new_w)
    fr = fr[:, None, None]
    fc = fc[None, :, None]
    top = t[r0][:, c0] * (1 - fc) + t[r0][:, c1] * fc
    bottom = t[r1][:, c0] * (1 - fc) + t[r1][:, c1] * fc
    return top * (1 - fr) + bottom * fr


def crop(t, box: Box) -> np.ndarray:
    t = as_tensor(t)
    if t.ndim != 3:
        raise ShapeError("crop expects an (H, W, C) tensor")
    if not box.fits(t.shape[0], t.shape[1]):
        raise ShapeError(f"{box} lies outside a {t.shape[0]}x{t.shape[1]} image")
    return t[box.row_min : box.row_max + 1, box.col_min : box.col_max + 1, :].copy()


# --------------------------------------------------------------------------
# First-layer affine description
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class AffineMap:
    """Sparse rows of an affine layer: ``out[i] = sum(w * x[coords]) + bias[i]``.

    ``rows[i]`` holds ascending flat input coordinates and their weights, i.e.
    the receptive field of neuron ``i``. Neuron ids are flat indices into the
    layer's output tensor.
    """

    input_shape: tuple[int, ...]
    output_shape: tuple[int, ...]
    rows: tuple
    bias: np.ndarray
    layer_index: int = 0

    @property
    def n_neurons(self) -> int:
        return len(self.rows)

    def evaluate(self, x) -> np.ndarray:
        flat = as_tensor(x).reshape(-1)
        out = np.empty(len(self.rows))
        for i, (coords, weights) in enumerate(self.rows):
            acc = 0.0
            if len(coords):
                acc = np.cumsum(weights * flat[coords])[-1]
            out[i] = acc + self.bias[i]
        return out

    def matrix(self) -> np.ndarray:
        m = np.zeros((len(self.rows), int(np.prod(self.input_shape))))
        for i, (coords, weights) in enumerate(self.rows):
            m[i, coords] = weights
        return m


def layer_affine_map(layer, input_shape: Sequence[int], layer_index: int = 0) -> AffineMap:
    if not getattr(layer, "affine", False):
        raise UnsupportedModelError(f"layer {layer_index} ({layer.kind}) is not affine")
    input_shape = tuple(input_shape)
    out_shape = tuple(layer.output_shape(input_shape))
    rows = tuple(layer.affine_rows(input_shape))
    bias = np.broadcast_to(layer.biases, out_shape).reshape(-1).copy()
    return AffineMap(input_shape, out_shape, rows, bias, layer_index)


def first_layer_affine(net: NetworkSpec, input_shape: Sequence[int] | None = None) -> AffineMap:
    """Receptive field, weights and bias of every first-layer neuron.

    Leading ``Flatten`` layers are folded in; flat input coordinates are
    unchanged by a row-major reshape.
    """
    if input_shape is not None and tuple(input_shape) != net.input_shape:
        raise ShapeError(f"input shape {tuple(input_shape)} does not match {net.input_shape}")
    i = net.first_affine_index()
    amap = layer_affine_map(net.layers[i], net.shapes[i], i)
    return AffineMap(net.input_shape, amap.output_shape, amap.rows, amap.bias, i)
