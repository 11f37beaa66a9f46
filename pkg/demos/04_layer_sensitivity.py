#!/usr/bin/env python3
"""Choosing a per-layer quantization step from activation statistics.

Each activation layer's outputs over a calibration batch form a histogram
over its levels. Layers whose histograms are concentrated (high agreement
A, skewed toward zero, sharply peaked) can afford a smaller step, which
directly shortens their spiking unroll. The composite metric
M = A * (g^2 + 1) * K ranks the layers; exact 1-D clustering groups them,
and each group gets a step.

Run time is a few seconds: this builds a random-weight VGG-16 at 32x32 and
pushes a small calibration batch through it.
"""

import numpy as np

from spikecast.graph import init_random, parse_manifest
from spikecast.reference import ann_forward
from spikecast.sensitivity import analyze_trace, default_alpha
from spikecast.zoo import vgg16_manifest

graph = init_random(parse_manifest(vgg16_manifest(classes=10, steps=4)), seed=11)
rng = np.random.default_rng(0)
x = rng.uniform(0, 1, size=(8, 3, 32, 32))

alpha = default_alpha(len(graph.matmul_layers()))
print(f"agreement threshold alpha = 1 / (2 * 16 matmul layers) = {alpha}")

trace = ann_forward(graph, x)
rows = analyze_trace(trace, graph, alpha=alpha, chi=3)

print(f"\n{'layer':10} {'A':>7} {'g':>8} {'K':>9} {'M':>10}  cluster  L")
for r in rows:
    if r.flag:
        print(f"{r.layer_id:10} flagged: {r.flag}")
        continue
    print(f"{r.layer_id:10} {r.agreement:7.3f} {r.skew:8.3f} {r.kurt:9.3f} "
          f"{r.metric:10.3f}  {r.cluster:^7}  {r.assigned_L}")

usable = [r for r in rows if not r.flag]
vector = [r.assigned_L for r in usable]
print(f"\nsuggested layerwise steps (highest-metric cluster gets L=1): {vector}")
print("a training pipeline would consume this vector and fine-tune with it")
