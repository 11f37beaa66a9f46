"""Shared builders: small manifests, random model generation, naive oracles."""

import json

import numpy as np
import pytest

from spikecast.graph import init_random, parse_manifest
from spikecast.zoo import residual_block_manifest, toy_manifest


@pytest.fixture
def toy_graph():
    return init_random(parse_manifest(toy_manifest()), 42)


def naive_conv2d(x, weights, stride=(1, 1), padding=(0, 0)):
    """Loop reference convolution (independent oracle for the fast kernel)."""
    n, c, h, w = x.shape
    c_o, c_i, k_h, k_w = weights.shape
    s_h, s_w = stride
    p_h, p_w = padding
    xp = np.pad(x, ((0, 0), (0, 0), (p_h, p_h), (p_w, p_w)))
    h_o = (h + 2 * p_h - k_h) // s_h + 1
    w_o = (w + 2 * p_w - k_w) // s_w + 1
    out = np.zeros((n, c_o, h_o, w_o))
    for b in range(n):
        for oc in range(c_o):
            for i in range(h_o):
                for j in range(w_o):
                    patch = xp[b, :, i * s_h:i * s_h + k_h, j * s_w:j * s_w + k_w]
                    out[b, oc, i, j] = np.sum(patch * weights[oc])
    return out


def random_manifest(rng, allow_residual=True):
    """Random 2-5 matmul model: channels <= 16, spatial <= 16, L in {1,2,4,8}."""
    if allow_residual and rng.random() < 0.25:
        return residual_block_manifest(classes=int(rng.integers(2, 6)),
                                       l_main=int(rng.choice([1, 2, 4, 8])),
                                       theta=float(rng.uniform(0.3, 1.5)))
    n_matmul = int(rng.integers(2, 6))
    c_in = int(rng.integers(1, 4))
    hw = int(rng.choice([4, 6, 8, 12, 16]))
    classes = int(rng.integers(2, 6))
    layers = [{"id": "in", "kind": "input", "pred": [], "shape": [c_in, hw, hw]}]
    prev, cur_hw, spatial = "in", hw, True
    for idx in range(1, n_matmul):
        if spatial and rng.random() < 0.75:
            layers.append({"id": f"conv{idx}", "kind": "conv", "pred": [prev],
                           "out_channels": int(rng.integers(2, 17)), "kernel": 3,
                           "stride": 1, "padding": 1,
                           "bias": bool(rng.random() < 0.7),
                           "batch_norm": bool(rng.random() < 0.5)})
            prev = f"conv{idx}"
        else:
            spatial = False
            layers.append({"id": f"fc{idx}", "kind": "fc", "pred": [prev],
                           "out_features": int(rng.integers(2, 17)),
                           "bias": bool(rng.random() < 0.7),
                           "batch_norm": bool(rng.random() < 0.3)})
            prev = f"fc{idx}"
        layers.append({"id": f"act{idx}", "kind": "qcfs_act", "pred": [prev],
                       "L": int(rng.choice([1, 2, 4, 8])),
                       "theta": float(rng.uniform(0.3, 1.5))})
        prev = f"act{idx}"
        if spatial and cur_hw % 2 == 0 and rng.random() < 0.4:
            layers.append({"id": f"pool{idx}", "kind": "avg_pool", "pred": [prev],
                           "window": 2})
            prev, cur_hw = f"pool{idx}", cur_hw // 2
    layers.append({"id": "head", "kind": "fc", "pred": [prev],
                   "out_features": classes, "bias": True})
    return json.dumps({"name": "rand", "classes": classes, "layers": layers})


def random_graph(rng, allow_residual=True):
    g = parse_manifest(random_manifest(rng, allow_residual))
    return init_random(g, int(rng.integers(0, 2 ** 63)))


def negative_weight_graph():
    """Hand-built net that deterministically needs inhibitory spikes.

    The first activation saturates on pixel-like input, the middle fc layer
    is all-negative so the second membrane dives below zero during
    integration, and only an inhibitory correction brings the spike count
    back to the true level (zero).
    """
    doc = {
        "name": "inhibitory-fixture",
        "classes": 2,
        "layers": [
            {"id": "in", "kind": "input", "pred": [], "shape": [1, 2, 2]},
            {"id": "conv1", "kind": "conv", "pred": ["in"], "out_channels": 1,
             "kernel": 1, "bias": True},
            {"id": "act1", "kind": "qcfs_act", "pred": ["conv1"], "L": 2, "theta": 1.0},
            {"id": "fc1", "kind": "fc", "pred": ["act1"], "out_features": 3},
            {"id": "act2", "kind": "qcfs_act", "pred": ["fc1"], "L": 2, "theta": 1.0},
            {"id": "head", "kind": "fc", "pred": ["act2"], "out_features": 2,
             "bias": True},
        ],
    }
    graph = parse_manifest(json.dumps(doc))
    weights = {
        "conv1": {"weight": np.ones((1, 1, 1, 1), dtype=np.float32),
                  "bias": np.array([0.5], dtype=np.float32)},
        "fc1": {"weight": np.full((3, 4), -0.25, dtype=np.float32)},
        "head": {"weight": np.array([[1.0, 0.5, 0.25], [0.5, 1.0, 0.25]],
                                    dtype=np.float32),
                 "bias": np.array([0.3, 0.1], dtype=np.float32)},
    }
    return graph.with_weights(weights)
