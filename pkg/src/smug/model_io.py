"""Readers and writers for models, tensors, annotations and token streams.

Model files are JSON documents::

    {"format": "smug-model", "version": 1, "input_shape": [8, 8, 1],
     "layers": [{"kind": "flatten"},
                {"kind": "dense", "weights": [[...]], "biases": [...]},
                {"kind": "relu"}, ...]}

Weights are nested row-major arrays. Conv2d kernels are ``(kh, kw, in, out)``
and Conv1d kernels ``(width, in, out)``; both also carry ``stride`` and
``padding`` (``"valid"`` or ``"same"``).

Tensor files are little-endian binary: ``b"TNSR"``, u32 rank, one u32 per
dimension, then float32 values in row-major order.
"""

from __future__ import annotations

import csv
import io
import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping

import numpy as np

from .errors import LayerShapeError, ParseError, ShapeError
from .tensor_net import (
    Box,
    Conv1d,
    Conv2d,
    Dense,
    Flatten,
    NetworkSpec,
    Relu,
    Sigmoid,
    Softmax,
)

MODEL_FORMAT = "smug-model"
MODEL_VERSION = 1
TENSOR_MAGIC = b"TNSR"

_SIMPLE_LAYERS = {"flatten": Flatten, "relu": Relu, "sigmoid": Sigmoid, "softmax": Softmax}


# --------------------------------------------------------------------------
# Models
# --------------------------------------------------------------------------


def _array(value, where: str) -> np.ndarray:
    def check(v, path):
        if isinstance(v, list):
            for i, item in enumerate(v):
                check(item, f"{path}[{i}]")
        elif isinstance(v, bool) or not isinstance(v, (int, float)):
            raise ParseError("expected a number", path)

    check(value, where)
    try:
        arr = np.array(value, dtype=np.float64)
    except ValueError:
        raise ParseError("ragged nested array", where) from None
    if not np.all(np.isfinite(arr)):
        raise ParseError("non-finite weight", where)
    return arr


def _int(doc: dict, key: str, where: str, default=None) -> int:
    v = doc.get(key, default)
    if isinstance(v, bool) or not isinstance(v, int):
        raise ParseError(f"{key!r} must be an integer", f"{where}.{key}")
    return v


def _layer_from_dict(doc, where: str):
    if not isinstance(doc, dict):
        raise ParseError("layer entry must be an object", where)
    kind = doc.get("kind")
    if isinstance(kind, str) and kind in _SIMPLE_LAYERS:
        return _SIMPLE_LAYERS[kind]()
    if kind not in ("dense", "conv2d", "conv1d"):
        raise ParseError(f"unknown layer kind {kind!r}", f"{where}.kind")
    for key in ("biases",) + (("weights",) if kind == "dense" else ("kernels",)):
        if key not in doc:
            raise ParseError(f"missing field {key!r}", where)
    if kind == "dense":
        return Dense(_array(doc["weights"], f"{where}.weights"), _array(doc["biases"], f"{where}.biases"))
    if kind in ("conv2d", "conv1d"):
        cls = Conv2d if kind == "conv2d" else Conv1d
        padding = doc.get("padding", "valid")
        if not isinstance(padding, str):
            raise ParseError("'padding' must be a string", f"{where}.padding")
        return cls(
            _array(doc["kernels"], f"{where}.kernels"),
            _array(doc["biases"], f"{where}.biases"),
            _int(doc, "stride", where, 1),
            padding,
        )


def model_from_dict(doc) -> NetworkSpec:
    if not isinstance(doc, dict):
        raise ParseError("model document must be a JSON object", "$")
    if doc.get("format") != MODEL_FORMAT:
        raise ParseError(f"expected format {MODEL_FORMAT!r}", "$.format")
    if doc.get("version") != MODEL_VERSION:
        raise ParseError(f"unsupported version {doc.get('version')!r}", "$.version")
    shape = doc.get("input_shape")
    if not isinstance(shape, list) or not shape or any(
        isinstance(d, bool) or not isinstance(d, int) or d < 1 for d in shape
    ):
        raise ParseError("input_shape must be a list of positive integers", "$.input_shape")
    layers_doc = doc.get("layers")
    if not isinstance(layers_doc, list):
        raise ParseError("layers must be a list", "$.layers")
    layers = []
    for i, ldoc in enumerate(layers_doc):
        where = f"$.layers[{i}]"
        try:
            layers.append(_layer_from_dict(ldoc, where))
        except ShapeError as exc:
            raise LayerShapeError(f"layer {i}: {exc}", where) from None
    try:
        return NetworkSpec(tuple(shape), layers)
    except ShapeError as exc:
        # NetworkSpec messages start with "layer <i> (...)"
        msg = str(exc)
        idx = msg.split()[1] if msg.startswith("layer ") else "?"
        raise LayerShapeError(msg, f"$.layers[{idx}]") from None


def model_to_dict(net: NetworkSpec) -> dict:
    layers = []
    for layer in net.layers:
        if isinstance(layer, Dense):
            layers.append({"kind": "dense", "weights": layer.weights.tolist(), "biases": layer.biases.tolist()})
        elif isinstance(layer, (Conv1d, Conv2d)):
            layers.append(
                {
                    "kind": layer.kind,
                    "kernels": layer.kernels.tolist(),
                    "biases": layer.biases.tolist(),
                    "stride": int(layer.stride),
                    "padding": layer.padding,
                }
            )
        else:
            layers.append({"kind": layer.kind})
    return {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "input_shape": list(net.input_shape),
        "layers": layers,
    }


def dumps_model(net: NetworkSpec) -> str:
    doc = model_to_dict(net)
    layers = doc.pop("layers")
    head = json.dumps(doc)[:-1]
    body = ",\n".join("  " + json.dumps(layer) for layer in layers)
    return f'{head}, "layers": [\n{body}\n]}}\n'


def loads_model(data: bytes | str) -> NetworkSpec:
    if isinstance(data, bytes):
        try:
            data = data.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise ParseError("model file is not UTF-8", f"byte {exc.start}") from None
    try:
        doc = json.loads(data)
    except json.JSONDecodeError as exc:
        raise ParseError(exc.msg, f"byte {exc.pos}") from None
    except RecursionError:
        raise ParseError("nesting too deep", "$") from None
    return model_from_dict(doc)


def load_model(path) -> NetworkSpec:
    return loads_model(Path(path).read_bytes())


def save_model(path, net: NetworkSpec) -> None:
    Path(path).write_text(dumps_model(net), encoding="utf-8")


# --------------------------------------------------------------------------
# Tensors
# --------------------------------------------------------------------------


def tensor_to_bytes(t) -> bytes:
    arr = np.asarray(t)
    if arr.ndim == 0:
        raise ShapeError("tensor files need rank >= 1")
    if any(d < 1 for d in arr.shape):
        raise ShapeError("tensor dimensions must be positive")
    header = TENSOR_MAGIC + struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape)
    return header + np.ascontiguousarray(arr, dtype="<f4").tobytes()


def tensor_from_bytes(data: bytes) -> np.ndarray:
    if len(data) < 8:
        raise ParseError("truncated header", "byte 0")
    if data[:4] != TENSOR_MAGIC:
        raise ParseError("bad magic", "byte 0")
    (rank,) = struct.unpack_from("<I", data, 4)
    if rank < 1:
        raise ParseError("rank must be >= 1", "byte 4")
    end = 8 + 4 * rank
    if len(data) < end:
        raise ParseError("truncated shape", f"byte {len(data)}")
    dims = struct.unpack_from(f"<{rank}I", data, 8)
    if any(d < 1 for d in dims):
        raise ParseError("dimensions must be positive", "byte 8")
    count = 1
    for d in dims:
        count *= d
    if len(data) - end != 4 * count:
        raise ParseError(
            f"payload has {len(data) - end} bytes, expected {4 * count}", f"byte {end}"
        )
    arr = np.frombuffer(data, dtype="<f4", count=count, offset=end).reshape(dims)
    if not np.all(np.isfinite(arr)):
        raise ParseError("non-finite value in payload", f"byte {end}")
    return arr.astype(np.float32)


def load_tensor(path) -> np.ndarray:
    return tensor_from_bytes(Path(path).read_bytes())


def save_tensor(path, t) -> None:
    Path(path).write_bytes(tensor_to_bytes(t))


# --------------------------------------------------------------------------
# Annotations and tokens
# --------------------------------------------------------------------------

BOX_COLUMNS = ["item_id", "row_min", "col_min", "row_max", "col_max", "label"]
RATIONALE_COLUMNS = ["item_id", "indices", "label"]


@dataclass(frozen=True)
class AnnotationRecord:
    item_id: str
    label: int
    box: Box | None = None
    rationale: tuple[int, ...] | None = None


def _parse_int(text: str, where: str) -> int:
    try:
        return int(text.strip())
    except ValueError:
        raise ParseError(f"expected an integer, got {text!r}", where) from None


def parse_annotations(text: str, dims: Mapping[str, tuple] | tuple | None = None) -> list[AnnotationRecord]:
    """Parse annotation CSV text.

    ``dims`` is either one ``(height, width)`` for every item or a mapping from
    item id to its dimensions; boxes are checked against it when given.
    """
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        return []
    except csv.Error as exc:
        raise ParseError(str(exc), "line 1") from None
    header = [h.strip() for h in header]
    if header == BOX_COLUMNS:
        boxed = True
    elif header == RATIONALE_COLUMNS:
        boxed = False
    else:
        missing = [c for c in BOX_COLUMNS if c not in header]
        raise ParseError(f"unexpected header {header}; missing columns {missing}", "line 1")

    records = []
    try:
        rows = list(reader)
    except csv.Error as exc:
        raise ParseError(str(exc), f"line {reader.line_num}") from None
    for lineno, row in enumerate(rows, start=2):
        if not row or all(not c.strip() for c in row):
            continue
        where = f"line {lineno}"
        if len(row) != len(header):
            raise ParseError(f"expected {len(header)} fields, got {len(row)}", where)
        item_id = row[0].strip()
        label = _parse_int(row[-1], f"{where}, column label")
        if label < 0:
            raise ParseError("label must be non-negative", f"{where}, column label")
        if boxed:
            coords = [_parse_int(v, f"{where}, column {c}") for v, c in zip(row[1:5], BOX_COLUMNS[1:5])]
            try:
                box = Box(*coords)
            except ShapeError as exc:
                raise ParseError(str(exc), where) from None
            if dims is not None:
                hw = dims.get(item_id) if isinstance(dims, Mapping) else dims
                if hw is not None and not box.fits(hw[0], hw[1]):
                    raise ParseError(f"{box} exceeds item dimensions {tuple(hw)}", where)
            records.append(AnnotationRecord(item_id, label, box=box))
        else:
            field = row[1].strip()
            idx = tuple(_parse_int(v, f"{where}, column indices") for v in field.split(";")) if field else ()
            if any(i < 0 for i in idx):
                raise ParseError("rationale indices must be non-negative", where)
            records.append(AnnotationRecord(item_id, label, rationale=idx))
    return records


def load_annotations(path, dims=None) -> list[AnnotationRecord]:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except UnicodeDecodeError as exc:
        raise ParseError("annotation file is not UTF-8", f"byte {exc.start}") from None
    return parse_annotations(text, dims)


def save_annotations(path, records: list[AnnotationRecord]) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    if records and records[0].box is None:
        writer.writerow(RATIONALE_COLUMNS)
        for r in records:
            writer.writerow([r.item_id, ";".join(str(i) for i in r.rationale or ()), r.label])
    else:
        writer.writerow(BOX_COLUMNS)
        for r in records:
            writer.writerow([r.item_id, *r.box.as_tuple(), r.label])
    Path(path).write_text(buf.getvalue(), encoding="utf-8")


@dataclass(frozen=True, eq=False)
class TokenizedInput:
    tokens: tuple[str, ...]
    embeddings: np.ndarray  # (length, embed_dim)

    def __post_init__(self):
        if self.embeddings.ndim != 2 or self.embeddings.shape[0] != len(self.tokens):
            raise ShapeError(
                f"{len(self.tokens)} tokens but embeddings have shape {self.embeddings.shape}"
            )


def load_tokens(path) -> list[str]:
    text = Path(path).read_text(encoding="utf-8")
    return text.split("\n")[:-1] if text else []


def save_tokens(path, tokens) -> None:
    for t in tokens:
        if "\n" in t:
            raise ValueError("tokens may not contain newlines")
    Path(path).write_text("".join(t + "\n" for t in tokens), encoding="utf-8")


def load_tokenized(tokens_path, tensor_path) -> TokenizedInput:
    return TokenizedInput(tuple(load_tokens(tokens_path)), load_tensor(tensor_path))
