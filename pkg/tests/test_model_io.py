import json
import struct

import numpy as np
import pytest
from helpers import random_convnet, random_mlp
from hypothesis import given, settings
from hypothesis import strategies as st

from smug.errors import LayerShapeError, ParseError
from smug.model_io import (
    AnnotationRecord,
    TokenizedInput,
    dumps_model,
    load_annotations,
    load_model,
    load_tensor,
    load_tokens,
    loads_model,
    model_to_dict,
    parse_annotations,
    save_annotations,
    save_model,
    save_tensor,
    save_tokens,
    tensor_from_bytes,
    tensor_to_bytes,
)
from smug.tensor_net import Box, Conv1d, Dense, Flatten, NetworkSpec, Relu, Sigmoid, predict
from smug.errors import ShapeError


def one_dense_doc(weights=((1.0, 2.0),), biases=(0.5,)):
    return {
        "format": "smug-model",
        "version": 1,
        "input_shape": [2],
        "layers": [{"kind": "dense", "weights": [list(r) for r in weights], "biases": list(biases)}],
    }


class TestModel:
    def test_minimal_dense(self):
        net = loads_model(json.dumps(one_dense_doc()))
        assert len(net.layers) == 1 and isinstance(net.layers[0], Dense)
        np.testing.assert_array_equal(predict(net, [1.0, 1.0]), [3.5])

    def test_mismatched_weights_name_the_layer(self):
        doc = one_dense_doc()
        doc["input_shape"] = [3]
        with pytest.raises(LayerShapeError, match=r"layers\[0\]"):
            loads_model(json.dumps(doc))

    def test_bias_length_mismatch(self):
        with pytest.raises(LayerShapeError):
            loads_model(json.dumps(one_dense_doc(biases=(0.5, 1.0))))

    def test_unknown_layer_kind(self):
        doc = one_dense_doc()
        doc["layers"].append({"kind": "maxpool"})
        with pytest.raises(ParseError, match="maxpool"):
            loads_model(json.dumps(doc))

    def test_malformed_json_reports_position(self):
        with pytest.raises(ParseError, match="byte"):
            loads_model('{"format": "smug-model", "version": 1,')

    def test_wrong_format_tag(self):
        doc = one_dense_doc()
        doc["format"] = "other"
        with pytest.raises(ParseError):
            loads_model(json.dumps(doc))

    def test_non_finite_weight(self):
        with pytest.raises(ParseError):
            loads_model(json.dumps(one_dense_doc(weights=((1.0, float("nan")),))))

    @pytest.mark.parametrize("seed", range(3))
    def test_random_mlp_round_trip(self, tmp_path, seed):
        rng = np.random.default_rng(seed)
        net = random_mlp(rng, hidden=[5, 4], final="softmax")
        save_model(tmp_path / "m.json", net)
        back = load_model(tmp_path / "m.json")
        x = rng.normal(size=net.input_shape)
        assert predict(back, x).tobytes() == predict(net, x).tobytes()
        assert dumps_model(back) == dumps_model(net)

    def test_conv_round_trip(self, tmp_path):
        net = random_convnet(np.random.default_rng(5), stride=2, padding="same")
        save_model(tmp_path / "c.json", net)
        assert model_to_dict(load_model(tmp_path / "c.json")) == model_to_dict(net)

    def test_conv1d_sigmoid_round_trip(self):
        rng = np.random.default_rng(6)
        net = NetworkSpec((6, 3), [Conv1d(rng.normal(size=(3, 3, 2)), np.zeros(2)), Relu(), Flatten(),
                                   Dense(rng.normal(size=(1, 8)), np.zeros(1)), Sigmoid()])
        back = loads_model(dumps_model(net))
        x = rng.normal(size=(6, 3))
        assert predict(back, x).tobytes() == predict(net, x).tobytes()

    @settings(max_examples=200, deadline=None)
    @given(st.binary(max_size=200))
    def test_arbitrary_bytes_never_crash(self, data):
        try:
            loads_model(data)
        except ParseError:
            pass

    @settings(max_examples=100, deadline=None)
    @given(st.recursive(
        st.none() | st.booleans() | st.floats(allow_nan=False) | st.integers() | st.text(max_size=5),
        lambda inner: st.lists(inner, max_size=4) | st.dictionaries(st.text(max_size=6), inner, max_size=4),
        max_leaves=12,
    ))
    def test_arbitrary_json_never_crashes(self, doc):
        try:
            loads_model(json.dumps(doc))
        except ParseError:
            pass


class TestTensor:
    def test_two_by_two_bytes(self, tmp_path):
        t = np.array([[1.0, -2.5], [3.25, 0.0]], dtype=np.float32)
        save_tensor(tmp_path / "t.tnsr", t)
        raw = (tmp_path / "t.tnsr").read_bytes()
        assert raw == b"TNSR" + struct.pack("<III", 2, 2, 2) + t.astype("<f4").tobytes()
        np.testing.assert_array_equal(load_tensor(tmp_path / "t.tnsr"), t)

    def test_large_image_round_trip(self, tmp_path):
        t = np.random.default_rng(0).uniform(size=(224, 224, 3)).astype(np.float32)
        save_tensor(tmp_path / "img.tnsr", t)
        assert load_tensor(tmp_path / "img.tnsr").tobytes() == t.tobytes()

    def test_rank_zero_rejected(self):
        with pytest.raises(ParseError, match="rank"):
            tensor_from_bytes(b"TNSR" + struct.pack("<I", 0))

    def test_bad_magic(self):
        with pytest.raises(ParseError, match="magic"):
            tensor_from_bytes(b"TNSX" + struct.pack("<II", 1, 1) + b"\0\0\0\0")

    def test_truncated_payload(self):
        data = tensor_to_bytes(np.ones((3, 3), dtype=np.float32))
        with pytest.raises(ParseError):
            tensor_from_bytes(data[:-1])

    def test_trailing_bytes(self):
        data = tensor_to_bytes(np.ones(2, dtype=np.float32))
        with pytest.raises(ParseError):
            tensor_from_bytes(data + b"\0")

    @settings(max_examples=300, deadline=None)
    @given(st.binary(max_size=64))
    def test_arbitrary_bytes_never_crash(self, data):
        try:
            tensor_from_bytes(data)
        except ParseError:
            pass

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.integers(1, 4), min_size=1, max_size=3))
    def test_round_trip_any_shape(self, shape):
        t = np.random.default_rng(len(shape)).normal(size=shape).astype(np.float32)
        assert tensor_from_bytes(tensor_to_bytes(t)).tobytes() == t.tobytes()


class TestAnnotations:
    def test_box_row(self):
        recs = parse_annotations("item_id,row_min,col_min,row_max,col_max,label\nimg1,10,20,50,60,3\n")
        assert recs == [AnnotationRecord("img1", 3, box=Box(10, 20, 50, 60))]

    def test_inverted_box_rejected(self):
        with pytest.raises(ParseError):
            parse_annotations("item_id,row_min,col_min,row_max,col_max,label\nimg1,50,20,10,60,3\n")

    def test_empty_file(self):
        assert parse_annotations("") == []

    def test_missing_column(self):
        with pytest.raises(ParseError, match="label"):
            parse_annotations("item_id,row_min,col_min,row_max,col_max\nimg1,1,2,3,4\n")

    def test_non_integer_coordinate(self):
        with pytest.raises(ParseError, match="row_min"):
            parse_annotations("item_id,row_min,col_min,row_max,col_max,label\nimg1,1.5,2,3,4,0\n")

    def test_out_of_bounds_with_known_dims(self):
        text = "item_id,row_min,col_min,row_max,col_max,label\nimg1,0,0,8,3,0\n"
        assert len(parse_annotations(text)) == 1
        with pytest.raises(ParseError, match="exceeds"):
            parse_annotations(text, (8, 8))
        with pytest.raises(ParseError):
            parse_annotations(text, {"img1": (8, 8)})

    def test_rationales(self):
        recs = parse_annotations("item_id,indices,label\nr1,1;4;7,1\nr2,,0\n")
        assert recs[0].rationale == (1, 4, 7) and recs[1].rationale == ()

    def test_round_trip(self, tmp_path):
        recs = [AnnotationRecord("a", 1, box=Box(0, 1, 2, 3)), AnnotationRecord("b", 0, box=Box(4, 4, 4, 4))]
        save_annotations(tmp_path / "ann.csv", recs)
        assert load_annotations(tmp_path / "ann.csv") == recs
        rat = [AnnotationRecord("t", 0, rationale=(2, 5))]
        save_annotations(tmp_path / "rat.csv", rat)
        assert load_annotations(tmp_path / "rat.csv") == rat

    @settings(max_examples=200, deadline=None)
    @given(st.text(max_size=120))
    def test_arbitrary_text_never_crashes(self, text):
        try:
            parse_annotations(text, (10, 10))
        except ParseError:
            pass


class TestTokens:
    def test_round_trip(self, tmp_path):
        toks = ["the", "beer", "was", "", "good,", "naïve"]
        save_tokens(tmp_path / "t.tokens", toks)
        assert load_tokens(tmp_path / "t.tokens") == toks

    def test_embedding_rows_must_match(self):
        with pytest.raises(ShapeError):
            TokenizedInput(("a", "b"), np.zeros((3, 4)))
