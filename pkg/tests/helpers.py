"""Builders shared by the test modules."""

from __future__ import annotations

import numpy as np

from smug.attribution import TopKSelection
from smug.encoding import LinearConstraint, MaskProblem, MaskVariable, build_full_encoding, build_partial_encoding
from smug.tensor_net import Conv2d, Dense, Flatten, NetworkSpec, Relu, Sigmoid, Softmax, forward, predict

FIXTURE_SPECS = [("dense-mnist-like", 1), ("conv-image", 1), ("conv1d-text", 1), ("conv-image", 2)]
GRID_FOR_KIND = {"dense-mnist-like": 2, "conv-image": 2, "conv1d-text": 1}


def random_mlp(rng: np.random.Generator, n_in=None, hidden=None, n_out=None, final=None) -> NetworkSpec:
    n_in = n_in or int(rng.integers(2, 7))
    hidden = hidden or [int(rng.integers(2, 7)) for _ in range(int(rng.integers(1, 3)))]
    n_out = n_out or int(rng.integers(1, 4))
    layers, width = [], n_in
    for h in hidden:
        layers += [Dense(rng.normal(size=(h, width)), rng.normal(size=h) * 0.3), Relu()]
        width = h
    layers.append(Dense(rng.normal(size=(n_out, width)), rng.normal(size=n_out) * 0.3))
    if final == "softmax":
        layers.append(Softmax())
    elif final == "sigmoid":
        layers.append(Sigmoid())
    return NetworkSpec((n_in,), layers)


def scaled_mlp(rng: np.random.Generator) -> NetworkSpec:
    """ReLU net with fan-in scaled weights N(0, 2 / fan_in) and small biases."""
    sizes = [int(rng.integers(3, 9))]
    sizes += [int(rng.integers(3, 9)) for _ in range(int(rng.integers(1, 3)))]
    sizes.append(int(rng.integers(1, 4)))
    layers = []
    for i, (fan_in, fan_out) in enumerate(zip(sizes, sizes[1:])):
        layers.append(Dense(rng.normal(size=(fan_out, fan_in)) * np.sqrt(2 / fan_in), rng.normal(size=fan_out) * 0.1))
        if i < len(sizes) - 2:
            layers.append(Relu())
    return NetworkSpec((sizes[0],), layers)


def random_convnet(rng: np.random.Generator, stride=1, padding="valid") -> NetworkSpec:
    h, w, c = int(rng.integers(4, 7)), int(rng.integers(4, 7)), int(rng.integers(1, 3))
    filters = int(rng.integers(1, 4))
    conv = Conv2d(rng.normal(size=(3, 3, c, filters)), rng.normal(size=filters) * 0.2, stride, padding)
    spec = NetworkSpec((h, w, c), [conv, Relu(), Flatten()])
    flat = spec.output_shape[0]
    return NetworkSpec((h, w, c), [conv, Relu(), Flatten(), Dense(rng.normal(size=(3, flat)) * 0.5, np.zeros(3))])


def random_problem(rng: np.random.Generator, max_vars=16, max_constraints=8) -> MaskProblem:
    n = int(rng.integers(1, max_vars + 1))
    m = int(rng.integers(1, max_constraints + 1))
    variables = [MaskVariable(i, (i,), np.array([i])) for i in range(n)]
    constraints = []
    for _ in range(m):
        size = int(rng.integers(1, n + 1))
        ids = sorted(rng.choice(n, size=size, replace=False).tolist())
        coefs = rng.uniform(-10, 10, size=size)
        terms = tuple((int(v), float(c)) for v, c in zip(ids, coefs))
        constraints.append(LinearConstraint(terms, float(rng.uniform(-5, 5))))
    return MaskProblem(tuple(variables), tuple(constraints), input_shape=(n,), grid_size=1)


def two_var_problem() -> MaskProblem:
    """One neuron with weights [2, -1], bias 0.5 on x = [1, 1]."""
    net = NetworkSpec((2,), [Dense(np.array([[2.0, -1.0]]), np.array([0.5]))])
    sel = TopKSelection(1, np.array([0]), np.array([1.0]))
    return build_partial_encoding(net, np.array([1.0, 1.0]), sel, 0.0, 1)


# Five published 4x4-cell constraints (k = 5, gamma = 0), cells as (row, col).
PUBLISHED_CONSTRAINTS = [
    ([(99.53, 132, 132), (-58.37, 132, 136), (4.88, 132, 140), (-141.25, 136, 132), (639.97, 136, 136),
      (10.29, 136, 140), (-9.66, 140, 132), (20.30, 140, 136), (-25.19, 140, 140)], -0.58),
    ([(-270.67, 120, 150), (101.23, 142, 144), (10.38, 113, 124), (207.98, 122, 121), (640.64, 121, 121),
      (-100.72, 121, 126), (25.06, 121, 165), (-75.49, 121, 156), (75.47, 112, 154)], -0.36),
    ([(2925.38, 144, 132), (-395.09, 144, 136), (81.61, 148, 132), (-999.88, 148, 136), (-82.70, 152, 132),
      (17.08, 152, 136)], 0.21),
    ([(-20.87, 76, 80), (8.40, 76, 84), (-122.72, 80, 80), (929.71, 80, 84), (85.52, 84, 80),
      (138.99, 84, 84)], -0.01),
    ([(231.34, 168, 148), (722.71, 168, 152), (80.18, 172, 148), (663.96, 172, 152), (5.37, 176, 148),
      (4.63, 176, 152)], 0.12),
]


def five_constraint_problem() -> MaskProblem:
    """Five-constraint instance with variables numbered by sorted cell."""
    cells = sorted({(r, c) for terms, _ in PUBLISHED_CONSTRAINTS for _, r, c in terms})
    ids = {cell: i for i, cell in enumerate(cells)}
    variables = tuple(MaskVariable(i, cell, np.array([], dtype=np.int64)) for i, cell in enumerate(cells))
    constraints = tuple(
        LinearConstraint(tuple(sorted((ids[(r, c)], w) for w, r, c in terms)), const, neuron=j)
        for j, (terms, const) in enumerate(PUBLISHED_CONSTRAINTS)
    )
    return MaskProblem(variables, constraints, 0.0, tuple(range(5)), grid_size=4)


def tiny_full_problem():
    """2-input identity-logit net on x = [1, 0.2], label 0."""
    net = NetworkSpec((2,), [Dense(np.eye(2), np.zeros(2)), Relu(), Dense(np.eye(2), np.zeros(2)), Softmax()])
    return build_full_encoding(net, np.array([1.0, 0.2]), 0, 1)


def away_from_kinks(net, rng, margin=0.01):
    """Input whose ReLU pre-activations all stay ``margin`` away from zero."""
    while True:
        x = rng.normal(size=net.input_shape)
        outs = forward(net, x)
        pre = [outs[i - 1] for i, layer in enumerate(net.layers) if isinstance(layer, Relu)]
        if all(np.abs(p).min() > margin for p in pre):
            return x


def central_difference(net, x, index, h=1e-3):
    g = np.zeros(x.size)
    flat = x.reshape(-1)
    for j in range(x.size):
        up, down = flat.copy(), flat.copy()
        up[j] += h
        down[j] -= h
        g[j] = (predict(net, up.reshape(x.shape))[index] - predict(net, down.reshape(x.shape))[index]) / (2 * h)
    return g.reshape(x.shape)
