"""Boolean minimal-mask problems over first-layer pre-activations.

A mask variable switches a group of input coordinates on or off together: a
``grid x grid`` block of pixels across all channels for ``(H, W, C)`` inputs, a
run of ``grid`` tokens across all embedding dimensions for ``(L, E)`` inputs, or
a run of ``grid`` entries for flat inputs.

For each selected neuron ``i`` the partial encoding asks that the masked
pre-activation stays above ``gamma`` times the original one::

    sum_v c[i, v] * M_v + b[i] - gamma * o[i] > 0

where ``c[i, v]`` sums ``w * x`` over the coordinates of ``v`` inside the
neuron's receptive field. The objective is to minimize ``sum_v M_v``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .attribution import TopKSelection
from .errors import EncodingError
from .tensor_net import (
    Flatten,
    NetworkSpec,
    Relu,
    Sigmoid,
    Softmax,
    as_tensor,
    first_layer_affine,
    predict,
)

EPSILON = 1e-9
COEF_TOL = 1e-12

DEFAULT_IMAGE = {"grid_size": 4, "gamma": 0.0, "k": 3000}
DEFAULT_TEXT = {"grid_size": 1, "gamma": 0.0, "k": 100}


@dataclass(frozen=True, eq=False)
class MaskVariable:
    id: int
    cell: tuple[int, ...]  # first covered position: (row, col) or (index,)
    coords: np.ndarray  # flat input coordinates covered, ascending


@dataclass(frozen=True)
class LinearConstraint:
    """``sum(coef * M[var] for var, coef in terms) + constant > 0``."""

    terms: tuple[tuple[int, float], ...]
    constant: float
    neuron: int | None = None

    def __post_init__(self):
        ids = [v for v, _ in self.terms]
        if len(set(ids)) != len(ids):
            raise EncodingError("a variable appears twice in one constraint")
        if not all(np.isfinite(c) for _, c in self.terms) or not np.isfinite(self.constant):
            raise EncodingError("constraint coefficients must be finite")


@dataclass(frozen=True, eq=False)
class MaskProblem:
    variables: tuple[MaskVariable, ...]
    constraints: tuple[LinearConstraint, ...]
    gamma: float = 0.0
    selected: tuple[int, ...] = ()
    original_activations: tuple[float, ...] = ()
    input_shape: tuple[int, ...] | None = None
    grid_size: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "variables", tuple(self.variables))
        object.__setattr__(self, "constraints", tuple(self.constraints))
        for i, v in enumerate(self.variables):
            if v.id != i:
                raise EncodingError("variable ids must be dense and ordered")
        n = len(self.variables)
        for c in self.constraints:
            for v, _ in c.terms:
                if not 0 <= v < n:
                    raise EncodingError(f"constraint references undeclared variable {v}")
        if not 0 <= self.gamma < 1:
            raise EncodingError("gamma must lie in [0, 1)")

    @property
    def n_vars(self) -> int:
        return len(self.variables)

    @cached_property
    def matrix(self) -> np.ndarray:
        a = np.zeros((len(self.constraints), self.n_vars))
        for j, c in enumerate(self.constraints):
            for v, coef in c.terms:
                a[j, v] = coef
        return a

    @cached_property
    def constants(self) -> np.ndarray:
        return np.array([c.constant for c in self.constraints], dtype=np.float64)

    def lhs(self, assignment) -> np.ndarray:
        """Constraint left-hand sides; set coefficients summed by ascending id, constant last."""
        m = np.asarray(assignment)
        ones = np.flatnonzero(m)
        if ones.size == 0:
            return self.constants.copy()
        return np.cumsum(self.matrix[:, ones], axis=1)[:, -1] + self.constants

    def expand(self, assignment) -> np.ndarray:
        """Mask over flat input coordinates (omitted cells stay 0)."""
        if self.input_shape is None:
            raise EncodingError("problem has no input domain attached")
        mask = np.zeros(int(np.prod(self.input_shape)))
        for v, bit in zip(self.variables, assignment):
            if bit:
                mask[v.coords] = 1.0
        return mask.reshape(self.input_shape)


def grid_cells(input_shape, grid_size: int):
    """Row-major list of ``(cell, coords)`` plus the cell index of every coordinate."""
    if grid_size < 1:
        raise EncodingError("grid_size must be >= 1")
    shape = tuple(input_shape)
    flat = np.arange(int(np.prod(shape))).reshape(shape)
    cells = []
    if len(shape) == 3:
        h, w, _ = shape
        for r in range(0, h, grid_size):
            for c in range(0, w, grid_size):
                cells.append(((r, c), flat[r : r + grid_size, c : c + grid_size, :].reshape(-1)))
    elif len(shape) in (1, 2):
        for t in range(0, shape[0], grid_size):
            cells.append(((t,), flat[t : t + grid_size].reshape(-1)))
    else:
        raise EncodingError(f"unsupported input rank {len(shape)}")
    owner = np.empty(flat.size, dtype=np.int64)
    for i, (_, coords) in enumerate(cells):
        owner[coords] = i
    return cells, owner


def _cell_coefficients(coords, weights, x_flat, owner, n_cells):
    return np.bincount(owner[coords], weights=weights * x_flat[coords], minlength=n_cells)


def build_partial_encoding(net: NetworkSpec, x, selection: TopKSelection, gamma: float = 0.0,
                           grid_size: int = 4) -> MaskProblem:
    if len(selection) == 0:
        raise EncodingError(
            "no neuron has a positive attribution; fall back to the smug-base mask"
        )
    if not 0 <= gamma < 1:
        raise EncodingError("gamma must lie in [0, 1)")
    x = as_tensor(x)
    amap = first_layer_affine(net, x.shape)
    original = amap.evaluate(x)
    cells, owner = grid_cells(x.shape, grid_size)
    x_flat = x.reshape(-1)

    raw = []
    used = set()
    for neuron in (int(i) for i in selection.indices):
        if not 0 <= neuron < amap.n_neurons:
            raise EncodingError(f"selected neuron {neuron} is not a first-layer neuron")
        coords, weights = amap.rows[neuron]
        coefs = _cell_coefficients(coords, weights, x_flat, owner, len(cells))
        keep = np.flatnonzero(np.abs(coefs) >= COEF_TOL)
        used.update(keep.tolist())
        const = amap.bias[neuron] - gamma * original[neuron]
        raw.append((neuron, keep, coefs[keep], const))

    cell_ids = sorted(used)
    remap = {c: i for i, c in enumerate(cell_ids)}
    variables = tuple(MaskVariable(i, cells[c][0], cells[c][1]) for i, c in enumerate(cell_ids))
    constraints = tuple(
        LinearConstraint(
            tuple((remap[int(c)], float(v)) for c, v in zip(keep, vals)), float(const), neuron
        )
        for neuron, keep, vals, const in raw
    )
    return MaskProblem(
        variables,
        constraints,
        float(gamma),
        tuple(int(i) for i in selection.indices),
        tuple(float(original[i]) for i in selection.indices),
        x.shape,
        grid_size,
    )


# --------------------------------------------------------------------------
# Whole-network encoding
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class FullMaskProblem:
    """Argmax-preserving masks through every layer of a ReLU network.

    ``logit_net`` is the network with any trailing softmax/sigmoid removed;
    constraints are the pairwise logit comparisons on the masked input.
    """

    variables: tuple[MaskVariable, ...]
    logit_net: NetworkSpec
    x: np.ndarray
    label: int
    grid_size: int
    first_layer: tuple = field(default=())  # per-neuron (var ids, coefs, bias)

    @property
    def n_vars(self) -> int:
        return len(self.variables)

    @property
    def input_shape(self):
        return self.x.shape

    def expand(self, assignment) -> np.ndarray:
        mask = np.zeros(self.x.size)
        for v, bit in zip(self.variables, assignment):
            if bit:
                mask[v.coords] = 1.0
        return mask.reshape(self.x.shape)

    def logits(self, assignment) -> np.ndarray:
        return predict(self.logit_net, self.x * self.expand(assignment))

    def margins(self, assignment) -> np.ndarray:
        """``logit[label] - logit[l]`` for every other class ``l``."""
        z = self.logits(assignment)
        return np.delete(z[self.label] - z, self.label)

    def satisfied(self, assignment) -> bool:
        return bool(np.all(self.margins(assignment) >= EPSILON))


def build_full_encoding(net: NetworkSpec, x, label: int, grid_size: int = 4) -> FullMaskProblem:
    x = as_tensor(x)
    layers = list(net.layers)
    while layers and isinstance(layers[-1], (Softmax, Sigmoid)):
        layers.pop()
    if not layers or not getattr(layers[-1], "affine", False):
        raise EncodingError("full encoding needs a final linear logit layer")
    for i, layer in enumerate(layers):
        if not (layer.affine or isinstance(layer, (Relu, Flatten))):
            raise EncodingError(f"layer {i} ({layer.kind}) is not supported by the full encoding")
    logit_net = NetworkSpec(net.input_shape, layers)
    n_out = logit_net.output_shape
    if len(n_out) != 1 or not 0 <= label < n_out[0]:
        raise EncodingError(f"label {label} out of range for outputs {n_out}")
    if n_out[0] < 2:
        raise EncodingError("full encoding compares at least two logits")

    cells, owner = grid_cells(x.shape, grid_size)
    variables = tuple(MaskVariable(i, cell, coords) for i, (cell, coords) in enumerate(cells))
    amap = first_layer_affine(logit_net, x.shape)
    x_flat = x.reshape(-1)
    first = []
    for i, (coords, weights) in enumerate(amap.rows):
        coefs = _cell_coefficients(coords, weights, x_flat, owner, len(cells))
        keep = np.flatnonzero(np.abs(coefs) >= COEF_TOL)
        first.append((tuple(int(k) for k in keep), tuple(float(c) for c in coefs[keep]), float(amap.bias[i])))
    return FullMaskProblem(variables, logit_net, x, int(label), grid_size, tuple(first))

