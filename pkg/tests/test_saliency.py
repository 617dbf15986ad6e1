import re

import numpy as np
import pytest
from helpers import GRID_FOR_KIND
from hypothesis import given, settings
from hypothesis import strategies as st

from smug.attribution import TopKSelection
from smug.errors import EncodingError, ShapeError
from smug.evaluation import sparsity
from smug.pipeline import ExplainConfig, explain
from smug.saliency import (
    SaliencyMap,
    receptive_fields,
    render_image,
    render_text,
    rescale_visual,
    score_mask,
    smug_base_mask,
    to_spatial,
)
from smug.tensor_net import Conv2d, Dense, Flatten, NetworkSpec, first_layer_affine


def sel(ids, scores):
    return TopKSelection(len(ids), np.array(ids), np.array(scores, dtype=float))


class TestScoreMask:
    def test_single_neuron(self):
        mask = np.zeros((2, 2), bool)
        mask[0, 0] = True
        smap = score_mask(mask, sel([0], [2.0]), {0: np.array([0, 1])})
        np.testing.assert_array_equal(smap.scores, [[2.0, 0.0], [0.0, 0.0]])

    def test_overlap_sums(self):
        mask = np.ones((1, 3), bool)
        smap = score_mask(mask, sel([0, 1], [1.0, 3.0]), {0: np.array([0, 1]), 1: np.array([1, 2])})
        np.testing.assert_array_equal(smap.scores, [[1.0, 4.0, 3.0]])

    def test_all_zero_mask(self):
        smap = score_mask(np.zeros((3, 3)), sel([0], [1.0]), {0: np.arange(9)})
        assert not smap.scores.any()

    def test_unselected_neurons_do_not_contribute(self):
        fields = {0: np.array([0]), 1: np.array([0, 1])}
        smap = score_mask(np.ones(2, bool), sel([0], [5.0]), fields, "text")
        np.testing.assert_array_equal(smap.scores, [5.0, 0.0])

    def test_support_is_mask_and_coverage(self):
        rng = np.random.default_rng(0)
        fields = {i: rng.choice(16, size=4, replace=False) for i in range(5)}
        mask = rng.integers(0, 2, size=16).astype(bool)
        smap = score_mask(mask.reshape(4, 4), sel([1, 3], [0.5, 0.25]), fields)
        covered = np.zeros(16, bool)
        covered[np.concatenate([fields[1], fields[3]])] = True
        np.testing.assert_array_equal(smap.scores.reshape(-1) > 0, mask & covered)

    def test_map_invariants(self):
        with pytest.raises(ShapeError):
            SaliencyMap(np.zeros(3), np.zeros(4, bool))
        with pytest.raises(ShapeError):
            SaliencyMap(np.array([np.inf]), np.ones(1, bool))


class TestBaseMask:
    def test_conv_patch(self):
        net = NetworkSpec((5, 5, 1), [Conv2d(np.ones((3, 3, 1, 1)), np.zeros(1))])
        amap = first_layer_affine(net)
        smap = smug_base_mask(sel([4], [1.0]), receptive_fields(amap, [4]), (5, 5))
        assert smap.mask.sum() == 9 and smap.mask[1:4, 1:4].all()

    def test_dense_covers_everything(self):
        net = NetworkSpec((3, 3, 1), [Flatten(), Dense(np.ones((2, 9)), np.zeros(2))])
        amap = first_layer_affine(net)
        smap = smug_base_mask(sel([0, 1], [1.0, 1.0]), receptive_fields(amap), (3, 3))
        assert smap.mask.all()

    def test_empty_selection(self):
        with pytest.raises(EncodingError):
            smug_base_mask(sel([], []), {}, (2, 2))

    def test_channels_collapse(self):
        m = np.zeros((2, 2, 3))
        m[1, 0, 2] = 1
        np.testing.assert_array_equal(to_spatial(m), [[False, False], [True, False]])

    def test_smug_within_base_on_fixtures(self, all_fixtures):
        strict = 0
        for fx in all_fixtures:
            cfg = ExplainConfig(k=8, grid_size=GRID_FOR_KIND[fx.spec.kind], ig_steps=16)
            for item, x in fx.inputs.items():
                e = explain(fx.net, x, fx.labels[item], cfg)
                assert not ((e.smug.scores > 0) & ~(e.base.scores > 0)).any()
                assert sparsity(e.smug.scores) <= sparsity(e.base.scores)
                strict += sparsity(e.smug.scores) < sparsity(e.base.scores)
        assert strict > 0


class TestRescale:
    def test_affine(self):
        out = rescale_visual(SaliencyMap(np.array([0.0, 2.0, 4.0]), np.ones(3, bool)))
        np.testing.assert_array_equal(out.scores, [0.0, 0.5, 1.0])

    def test_equal_values(self):
        out = rescale_visual(SaliencyMap(np.array([0.0, 7.0, 7.0]), np.ones(3, bool)))
        np.testing.assert_array_equal(out.scores, [0.0, 1.0, 1.0])

    def test_all_zero(self):
        out = rescale_visual(SaliencyMap(np.zeros(4), np.zeros(4, bool)))
        assert not out.scores.any()

    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.floats(0, 100, allow_nan=False), min_size=1, max_size=20))
    def test_preserves_zero_set_and_order(self, values):
        s = np.array(values)
        out = rescale_visual(SaliencyMap(s, s > 0)).scores
        np.testing.assert_array_equal(out == 0, s == 0)
        nz = s > 0
        if nz.sum() > 1:
            order = np.argsort(s[nz], kind="stable")
            assert np.all(np.diff(out[nz][order]) >= -1e-12)
            assert out[nz].min() == pytest.approx(0.5) or out[nz].min() == 1.0


class TestRender:
    def test_pgm_bytes(self, tmp_path):
        smap = SaliencyMap(np.array([[1.0, 0.5, 0.0]]), np.ones((1, 3), bool))
        render_image(smap, tmp_path / "m.pgm")
        assert (tmp_path / "m.pgm").read_bytes() == b"P5\n3 1\n255\n" + bytes([255, 128, 0])

    def test_overlay(self, tmp_path):
        smap = SaliencyMap(np.array([[1.0, 0.0]]), np.ones((1, 2), bool))
        image = np.array([[[0.0], [1.0]]])
        render_image(smap, tmp_path / "m.pgm", image, tmp_path / "o.ppm")
        data = (tmp_path / "o.ppm").read_bytes()
        assert data[:11] == b"P6\n2 1\n255\n"
        assert list(data[11:]) == [128, 0, 0, 128, 128, 128]

    def test_overlay_shape_mismatch(self, tmp_path):
        smap = SaliencyMap(np.zeros((2, 2)), np.zeros((2, 2), bool))
        with pytest.raises(ShapeError):
            render_image(smap, tmp_path / "m.pgm", np.zeros((3, 3, 1)), tmp_path / "o.ppm")

    def test_text_html(self, tmp_path):
        smap = SaliencyMap(np.array([0.0, 1.0]), np.array([False, True]), "text")
        render_text(["bad", "<good>"], smap, tmp_path / "t.html")
        html = (tmp_path / "t.html").read_text()
        assert "&lt;good&gt;" in html
        alphas = re.findall(r"rgba\(0, 160, 0, ([0-9.]+)\)", html)
        assert alphas == ["0.000", "1.000"]

    def test_empty_tokens(self, tmp_path):
        smap = SaliencyMap(np.zeros(0), np.zeros(0, bool), "text")
        render_text([], smap, tmp_path / "e.html")
        html = (tmp_path / "e.html").read_text()
        assert "<body>\n</body>" in html and html.startswith("<!DOCTYPE html>")

    def test_token_count_mismatch(self, tmp_path):
        with pytest.raises(ShapeError):
            render_text(["a"], SaliencyMap(np.zeros(2), np.zeros(2, bool), "text"), tmp_path / "x.html")

    def test_unwritable_path(self, tmp_path):
        smap = SaliencyMap(np.zeros((1, 1)), np.zeros((1, 1), bool))
        with pytest.raises(OSError):
            render_image(smap, tmp_path / "missing" / "m.pgm")
