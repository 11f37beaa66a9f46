import json

import numpy as np
import pytest

from spikecast.graph import (GraphError, QcfsConfig, init_random, load_weights,
                             parse_manifest, save_weights, serialize_manifest)
from spikecast.zoo import vgg16_manifest


def small_manifest(**overrides):
    doc = {
        "name": "small",
        "classes": 2,
        "layers": [
            {"id": "in", "kind": "input", "pred": [], "shape": [3, 4, 4]},
            {"id": "c1", "kind": "conv", "pred": ["in"], "out_channels": 4,
             "kernel": 3, "padding": 1, "bias": True},
            {"id": "a1", "kind": "qcfs_act", "pred": ["c1"], "L": 4, "theta": 1.0},
            {"id": "f1", "kind": "fc", "pred": ["a1"], "out_features": 2},
        ],
    }
    doc.update(overrides)
    return doc


class TestParse:
    def test_three_layer_chain(self):
        g = parse_manifest(json.dumps(small_manifest()))
        assert [l.kind for l in g.layers] == ["input", "conv", "qcfs_act", "fc"]
        assert g.layer("c1").out_shape == (4, 4, 4)
        assert g.layer("f1").in_channels == 64

    def test_vgg16_layer_census(self):
        g = parse_manifest(vgg16_manifest(classes=10, steps=4))
        kinds = [l.kind for l in g.layers]
        assert kinds.count("conv") == 13
        assert kinds.count("fc") == 3
        assert kinds.count("avg_pool") == 5
        assert kinds.count("qcfs_act") == 15
        assert len(g.matmul_layers()) == 16
        assert g.quantization_steps() == [4] * 15

    def test_residual_arity_error(self):
        doc = small_manifest()
        doc["layers"].insert(3, {"id": "r", "kind": "residual_add", "pred": ["a1"]})
        doc["layers"][4]["pred"] = ["r"]
        with pytest.raises(GraphError, match="residual_add arity"):
            parse_manifest(json.dumps(doc))

    def test_cycle_detected(self):
        doc = small_manifest()
        doc["layers"][1]["pred"] = ["a1"]
        with pytest.raises(GraphError, match="cycle"):
            parse_manifest(json.dumps(doc))

    def test_dangling_predecessor(self):
        doc = small_manifest()
        doc["layers"][1]["pred"] = ["ghost"]
        with pytest.raises(GraphError, match="dangling predecessor"):
            parse_manifest(json.dumps(doc))

    def test_activation_must_follow_matmul(self):
        doc = small_manifest()
        doc["layers"].insert(2, {"id": "p", "kind": "avg_pool", "pred": ["c1"],
                                 "window": 2})
        doc["layers"][3]["pred"] = ["p"]
        with pytest.raises(GraphError, match="must directly follow"):
            parse_manifest(json.dumps(doc))

    def test_missing_activation_params(self):
        doc = small_manifest()
        del doc["layers"][2]["L"]
        with pytest.raises(GraphError, match="'L' and 'theta'"):
            parse_manifest(json.dumps(doc))

    def test_non_positive_step_or_threshold(self):
        with pytest.raises(GraphError, match="quantization step"):
            QcfsConfig(L=0, theta=1.0)
        with pytest.raises(GraphError, match="threshold"):
            QcfsConfig(L=4, theta=0.0)

    def test_standalone_bn_is_fused(self):
        doc = small_manifest()
        doc["layers"].insert(2, {"id": "bn", "kind": "bn_affine", "pred": ["c1"],
                                 "epsilon": 1e-4})
        doc["layers"][3]["pred"] = ["bn"]
        g = parse_manifest(json.dumps(doc))
        assert "bn" not in [l.id for l in g.layers]
        c1 = g.layer("c1")
        assert c1.has_bn and c1.epsilon == 1e-4
        assert g.layer("a1").preds == ("c1",)

    def test_output_size_must_match_classes(self):
        doc = small_manifest(classes=5)
        with pytest.raises(GraphError, match="class count"):
            parse_manifest(json.dumps(doc))

    def test_serialize_round_trip(self):
        g = parse_manifest(vgg16_manifest(classes=10, steps=[1, 2, 4] * 5))
        again = parse_manifest(serialize_manifest(g))
        assert serialize_manifest(again) == serialize_manifest(g)
        assert [l.id for l in again.layers] == [l.id for l in g.layers]


class TestWeights:
    def test_round_trip_bit_exact(self, toy_graph, tmp_path):
        save_weights(toy_graph, tmp_path)
        loaded = load_weights(toy_graph, tmp_path)
        for lid, arrays in toy_graph.weights.items():
            for name, arr in arrays.items():
                np.testing.assert_array_equal(loaded.weights[lid][name], arr)

    def test_wrong_length_blob(self, toy_graph, tmp_path):
        save_weights(toy_graph, tmp_path)
        blob = tmp_path / "conv1.f32"
        data = np.fromfile(blob, dtype="<f4")
        data[:-3].tofile(blob)
        with pytest.raises(GraphError, match=r"has \d+ elements, expected \d+"):
            load_weights(toy_graph, tmp_path)

    def test_missing_blob(self, toy_graph, tmp_path):
        with pytest.raises(GraphError, match="missing weight blob"):
            load_weights(toy_graph, tmp_path)

    def test_non_finite_rejected(self, toy_graph, tmp_path):
        save_weights(toy_graph, tmp_path)
        blob = tmp_path / "conv1.f32"
        data = np.fromfile(blob, dtype="<f4")
        data[0] = np.nan
        data.tofile(blob)
        with pytest.raises(GraphError, match="non-finite"):
            load_weights(toy_graph, tmp_path)

    def test_zero_weights_forward_to_zero(self, toy_graph):
        from spikecast.reference import ann_forward
        zeros = {lid: {k: np.zeros_like(v) for k, v in arrs.items()}
                 for lid, arrs in toy_graph.weights.items()}
        trace = ann_forward(toy_graph.with_weights(zeros), np.ones((1, 2, 8, 8)))
        np.testing.assert_array_equal(trace.logits, 0.0)


class TestInitRandom:
    def test_same_seed_bit_identical(self, toy_graph):
        a = init_random(toy_graph, 123)
        b = init_random(toy_graph, 123)
        for lid in a.weights:
            for name in a.weights[lid]:
                assert a.weights[lid][name].tobytes() == b.weights[lid][name].tobytes()

    def test_different_seeds_differ(self, toy_graph):
        a = init_random(toy_graph, 1)
        b = init_random(toy_graph, 2)
        assert any((a.weights[lid]["weight"] != b.weights[lid]["weight"]).any()
                   for lid in a.weights)

    def test_fan_in_bound(self):
        doc = small_manifest()
        doc["layers"][0]["shape"] = [1, 4, 4]
        g = init_random(parse_manifest(json.dumps(doc)), 99)
        w = g.weights["c1"]["weight"]          # fan_in = 1 * 3 * 3 = 9
        assert np.all(np.abs(w) <= 1.0 / 3.0)
