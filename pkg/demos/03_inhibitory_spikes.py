#!/usr/bin/env python3
"""Why the integrate-and-fire layer needs inhibitory spikes.

Binary spikes cannot represent negative values, so when a neuron's
per-timestep inputs are net negative, the plain integrate-and-fire rule
can leave the spike counter above the level the reference activation
assigns to the summed input. During the input-free settling stage the
staged layer therefore emits inhibitory spikes whenever the membrane is
negative: each one raises the membrane by the threshold and takes one
spike back off the counter. The counter value s after settling maps to
clamp(s, 0, L_out) emitted spikes.
"""

import numpy as np

from spikecast.graph import QcfsConfig
from spikecast.reference import qcfs
from spikecast.runtime import IfLayer, if_generic_layer

plan = IfLayer("demo", theta_star=0.5, l_in=2, l_out=2)

print("per-neuron unrolled inputs (2 timesteps each):")
stack = np.array([
    [0.6, 0.9, -0.5, 0.2],     # t = 1
    [-0.5, 0.8, -0.5, 0.3],    # t = 2
]).reshape(2, 1, 4)
for neuron in range(4):
    print(f"  neuron {neuron}: {stack[:, 0, neuron].tolist()} "
          f"(sum {stack[:, 0, neuron].sum():+.2f})")

train, stats = if_generic_layer(stack, plan, keep_counter=True)

print(f"\nstage lengths (integrate, settle, emit): {stats.stage_steps}")
print(f"stage-1 excitatory spikes: {stats.stage1_spikes}")
print(f"stage-2 excitatory spikes: {stats.stage2_excitatory}")
print(f"stage-2 inhibitory spikes: {stats.stage2_inhibitory}")
print(f"counters after settling:   {stats.counter.ravel().tolist()}")
print(f"emitted spikes per neuron: {train.spike_counts().ravel().tolist()}")

reference = qcfs(stack.sum(axis=0), QcfsConfig(L=2, theta=1.0))
print(f"\nreference activation of the summed input: {reference.ravel().tolist()}")
print(f"spike-train totals:                       "
      f"{train.dense().sum(axis=0).ravel().tolist()}")
print("\nneuron 0 fired once during integration (0.25 + 0.6 crosses 0.5), but")
print("its true total is only 0.1, i.e. level 0; the settling stage sees the")
print("negative membrane, emits one inhibitory spike, and the counter returns")
print("to zero. Without inhibition it would wrongly emit a spike.")
