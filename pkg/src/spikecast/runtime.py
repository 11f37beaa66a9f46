"""Conversion engine and spiking simulator.

A trained quantized-activation network is converted by replacing every
activation with a staged integrate-and-fire layer and unrolling every
matmul layer over the timesteps of its incoming spike train. The additive
constants of an unrolled matmul (bias, batch mean, batch shift) are divided
by the number of incoming timesteps so that the per-timestep outputs sum to
the single-shot output; the multiplicative batch-norm factors are left
alone.

A generic integrate-and-fire layer runs three stages per neuron, with the
threshold theta_star = theta / L_out and the membrane starting at
theta_star / 2:

  stage 1  integrate the L_in input slices; an excitatory spike fires when
           the membrane reaches the threshold (inclusive), soft-resets it
           by theta_star, and increments the spike counter.
  stage 2  max(L_in, L_out) - 1 input-free settling steps; excitatory
           spikes as above, and when the membrane is negative an
           inhibitory spike increments the membrane by theta_star and
           decrements the counter. Without inhibitory spikes a negative
           accumulated input could leave the counter one level too high.
  stage 3  re-emit: the final counter value s maps to
           clamp(s, 0, L_out) output spikes, placed in the first
           timesteps of the emitted train.

Stage 3 is implemented directly through that counter mapping (the
threshold cascade started at s * theta_star provably emits exactly
clamp(s, 0, L_out) spikes, and the integer form keeps the spike count
exact instead of re-deriving it from rounded float subtractions).

The first activation after the real-valued input needs no settling: the
preceding matmul runs once at full precision, the staircase activation is
applied, and the resulting level index directly becomes the spike count.

Spike trains are stored as a bit tensor plus the shared theta_star scalar,
so the "every element is 0 or theta_star" guarantee is structural.

Converted models are immutable; the forward pass keeps all mutable neuron
state local to the call, so batches and models can be run concurrently.
"""

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .graph import conv_params, fc_weights, layer_affine
from .reference import ann_forward, qcfs_levels


class ConversionError(ValueError):
    """Raised when a graph cannot be converted into a spiking model."""


@dataclass(frozen=True)
class SpikeTrain:
    """T-stacked binary spikes scaled by a shared threshold."""

    bits: np.ndarray          # bool, shape (T, N, ...)
    theta_star: float

    @property
    def timesteps(self):
        return self.bits.shape[0]

    def dense(self):
        return self.bits.astype(np.float64) * self.theta_star

    def spike_counts(self):
        return self.bits.sum(axis=0)


@dataclass(frozen=True)
class IfLayer:
    """Plan for one integrate-and-fire layer of the converted model."""

    layer_id: str
    theta_star: float
    l_in: int
    l_out: int
    input_mode: bool = False   # first activation on a real-valued branch


@dataclass
class IfStats:
    """Step and spike counters for one integrate-and-fire execution."""

    layer_id: str
    stage_steps: tuple         # (stage 1, stage 2, stage 3) step counts
    stage1_spikes: int
    stage2_excitatory: int
    stage2_inhibitory: int
    emitted_spikes: int
    elements: int              # neurons times batch
    timesteps: int             # emitted train length
    counter: np.ndarray = None # per-neuron net spike count after stage 2

    @property
    def spike_rate(self):
        return self.emitted_spikes / self.elements

    @property
    def inhibitory_spikes(self):
        return self.stage2_inhibitory


@dataclass(frozen=True)
class SpikingModel:
    """A converted model: source graph plus per-layer unrolling plan."""

    graph: object
    t_map: dict                # layer id -> timestep count (None = single-shot)
    if_plans: dict             # activation layer id -> IfLayer
    scaled_affines: dict       # matmul layer id -> BnAffine or None

    @property
    def final_timesteps(self):
        t = self.t_map[self.graph.output_layer.id]
        return 1 if t is None else t


def convert(graph):
    """Build the spiking execution plan for a quantized-activation graph.

    Raises ConversionError for max-pool layers (the max over unrolled
    timesteps does not commute with their sum, so there is no exact
    spiking counterpart) and for residual merges whose branches arrive
    with different timestep counts.
    """
    if not graph.weights:
        raise ConversionError("graph has no weights loaded")
    for layer in graph.layers:
        if layer.kind == "max_pool":
            raise ConversionError(
                f"layer '{layer.id}': unsupported nonlinearity in certified path (max_pool)")

    t_map, if_plans, scaled_affines = {}, {}, {}
    for layer in graph.layers:
        if layer.kind == "input":
            t_map[layer.id] = None
        elif layer.kind == "qcfs_act":
            t_in = t_map[layer.preds[0]]
            cfg = layer.qcfs
            theta_star = cfg.theta / cfg.L
            if t_in is None:
                plan = IfLayer(layer.id, theta_star, l_in=cfg.L, l_out=cfg.L, input_mode=True)
            else:
                plan = IfLayer(layer.id, theta_star, l_in=t_in, l_out=cfg.L)
            if_plans[layer.id] = plan
            t_map[layer.id] = cfg.L
        elif layer.kind == "residual_add":
            t_a, t_b = (t_map[p] for p in layer.preds)
            if t_a != t_b:
                raise ConversionError(
                    f"layer '{layer.id}': residual branches carry unequal timestep "
                    f"counts ({t_a} vs {t_b}); branches must merge at equal "
                    f"quantization steps")
            t_map[layer.id] = t_a
        else:
            t_map[layer.id] = t_map[layer.preds[0]]
            if layer.is_matmul:
                affine = layer_affine(graph, layer)
                t_in = t_map[layer.preds[0]]
                if affine is not None and t_in is not None:
                    affine = affine.scaled(1.0 / t_in)
                scaled_affines[layer.id] = affine
    return SpikingModel(graph=graph, t_map=t_map, if_plans=if_plans,
                        scaled_affines=scaled_affines)


# ---------------------------------------------------------------------------
# layer executions


def if_input_layer(x, cfg):
    """Spike train for the first activation of a real-valued branch.

    The staircase activation of the (single-shot) matmul output yields an
    integer level c per neuron; the emitted train carries c spikes in its
    first c timesteps, which makes the train sum reproduce the activation
    exactly.
    """
    x = np.asarray(x, dtype=np.float64)
    levels = qcfs_levels(x, cfg)
    ticks = np.arange(1, cfg.L + 1).reshape((cfg.L,) + (1,) * x.ndim)
    bits = ticks <= levels[None, ...]
    return SpikeTrain(bits=bits, theta_star=cfg.theta / cfg.L)


def if_generic_layer(stack, plan, keep_counter=False):
    """Run the three-stage integrate-and-fire layer on an unrolled stack.

    stack has shape (L_in, N, ...) and holds the unrolled matmul outputs
    (arbitrary reals). Returns the emitted SpikeTrain of length L_out plus
    the stage statistics.
    """
    stack = np.asarray(stack, dtype=np.float64)
    if stack.shape[0] != plan.l_in:
        raise ConversionError(
            f"layer '{plan.layer_id}': expected {plan.l_in} input timesteps, "
            f"got {stack.shape[0]}")
    th = plan.theta_star
    shape = stack.shape[1:]
    mem = np.full(shape, th / 2.0)
    count = np.zeros(shape, dtype=np.int64)

    stage1_spikes = 0
    for t in range(plan.l_in):
        mem += stack[t]
        fire = mem >= th
        count += fire
        mem -= th * fire
        stage1_spikes += int(fire.sum())

    stage2_steps = max(plan.l_in, plan.l_out) - 1
    excitatory = inhibitory = 0
    for _ in range(stage2_steps):
        fire = mem >= th
        inhib = (~fire) & (mem < 0.0)
        count += fire
        count -= inhib
        mem += th * (inhib.astype(np.float64) - fire.astype(np.float64))
        excitatory += int(fire.sum())
        inhibitory += int(inhib.sum())

    emit = np.clip(count, 0, plan.l_out)
    ticks = np.arange(1, plan.l_out + 1).reshape((plan.l_out,) + (1,) * count.ndim)
    bits = ticks <= emit[None, ...]
    stats = IfStats(
        layer_id=plan.layer_id,
        stage_steps=(plan.l_in, stage2_steps, plan.l_out),
        stage1_spikes=stage1_spikes,
        stage2_excitatory=excitatory,
        stage2_inhibitory=inhibitory,
        emitted_spikes=int(emit.sum()),
        elements=int(np.prod(shape)),
        timesteps=plan.l_out,
        counter=count if keep_counter else None,
    )
    return SpikeTrain(bits=bits, theta_star=th), stats


def _dense(value):
    return value.dense() if isinstance(value, SpikeTrain) else np.asarray(value, dtype=np.float64)


def unrolled_matmul(stack, params, affine=None, l_scale=None):
    """Per-timestep matmul over an unrolled stack or spike train.

    params is either ConvParams or a 2-D fully-connected weight matrix.
    The additive affine constants are scaled by l_scale (default 1/T), so
    the timestep outputs sum to the single-shot matmul of the summed stack.
    """
    stack = _dense(stack)
    t = stack.shape[0]
    if l_scale is None:
        l_scale = 1.0 / t
    folded = stack.reshape((t * stack.shape[1],) + stack.shape[2:])
    if isinstance(params, kernels.ConvParams):
        out = kernels.conv2d(folded, params)
    else:
        if folded.ndim > 2:
            folded = folded.reshape(folded.shape[0], -1)
        out = kernels.fully_connected(folded, params)
    if affine is not None:
        out = kernels.fused_bn_affine(out, affine, l_scale)
    return out.reshape((t, stack.shape[1]) + out.shape[1:])


def unrolled_residual_add(a, b):
    """Elementwise per-timestep sum of two unrolled stacks."""
    a, b = _dense(a), _dense(b)
    if a.shape[0] != b.shape[0]:
        raise ConversionError(
            f"residual branches carry unequal timestep counts ({a.shape[0]} vs {b.shape[0]})")
    return a + b


def unrolled_avg_pool(stack, window):
    """Per-timestep average pooling; the result is a plain unrolled stack.

    Pooling a spike train yields fractional values, so the output is typed
    as a float stack rather than a SpikeTrain; that is fine because only
    matmul layers consume it and they just need the timestep sum preserved.
    """
    stack = _dense(stack)
    t, n = stack.shape[0], stack.shape[1]
    folded = stack.reshape((t * n,) + stack.shape[2:])
    out = kernels.avg_pool2d(folded, window)
    return out.reshape((t, n) + out.shape[1:])


# ---------------------------------------------------------------------------
# whole-model execution


@dataclass
class SnnTrace:
    """Optional capture of the spiking pass: per-layer timestep sums
    (the quantity the layer invariant constrains) and the emitted trains."""

    sums: dict = field(default_factory=dict)
    trains: dict = field(default_factory=dict)


def snn_forward(model, x, trace=None, keep_counters=False):
    """Run the converted model. Returns (logits, stats).

    logits is the mean over the final stack's timesteps, shape
    (N, classes). stats maps each integrate-and-fire layer id to its
    IfStats. Pass an SnnTrace to capture per-layer sums and spike trains.
    """
    graph = model.graph
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 3:
        x = x[None]
    values, stats = {}, {}
    for layer in graph.layers:
        if layer.kind == "input":
            out = x
        elif layer.is_matmul:
            src = values[layer.preds[0]]
            if model.t_map[layer.id] is None:
                out = _single_matmul(graph, layer, src, model.scaled_affines[layer.id])
            else:
                params = (conv_params(graph, layer) if layer.kind == "conv"
                          else fc_weights(graph, layer))
                out = unrolled_matmul(src, params, model.scaled_affines[layer.id], l_scale=1.0)
        elif layer.kind == "avg_pool":
            src = values[layer.preds[0]]
            if model.t_map[layer.id] is None:
                out = kernels.avg_pool2d(src, layer.window)
            else:
                out = unrolled_avg_pool(src, layer.window)
        elif layer.kind == "residual_add":
            a, b = (values[p] for p in layer.preds)
            if model.t_map[layer.id] is None:
                out = a + b
            else:
                out = unrolled_residual_add(a, b)
        elif layer.kind == "qcfs_act":
            plan = model.if_plans[layer.id]
            src = values[layer.preds[0]]
            if plan.input_mode:
                out = if_input_layer(src, layer.qcfs)
            else:
                out, st = if_generic_layer(_dense(src), plan, keep_counter=keep_counters)
                stats[layer.id] = st
        else:
            raise ConversionError(f"layer '{layer.id}': kind '{layer.kind}' not executable")
        values[layer.id] = out
        if trace is not None:
            if isinstance(out, SpikeTrain):
                trace.sums[layer.id] = out.dense().sum(axis=0)
                trace.trains[layer.id] = out
            elif model.t_map[layer.id] is not None:
                trace.sums[layer.id] = out.sum(axis=0)
            else:
                trace.sums[layer.id] = out

    final = values[graph.output_layer.id]
    if model.t_map[graph.output_layer.id] is None:
        logits = _dense(final)
    else:
        logits = _dense(final).mean(axis=0)
    logits = logits.reshape(x.shape[0], -1)
    return logits, stats


def _single_matmul(graph, layer, x, affine):
    if layer.kind == "conv":
        out = kernels.conv2d(x, conv_params(graph, layer))
    else:
        if x.ndim > 2:
            x = x.reshape(x.shape[0], -1)
        out = kernels.fully_connected(x, fc_weights(graph, layer))
    if affine is not None:
        out = kernels.fused_bn_affine(out, affine, 1.0)
    return out


def spike_rate_by_layer(stats):
    """Measured per-activation-layer spike rates, keyed by layer id."""
    return {lid: st.spike_rate for lid, st in stats.items()}


# ---------------------------------------------------------------------------
# equivalence checking


@dataclass
class LayerDeviation:
    layer_id: str
    max_abs_dev: float
    rel_dev: float


@dataclass
class EquivalenceReport:
    """Side-by-side comparison of the reference and spiking passes."""

    per_layer: list
    argmax_agreement: float
    max_logit_dev: float
    inhibitory_spikes: int
    instances: int

    @property
    def max_rel_dev(self):
        return max((d.rel_dev for d in self.per_layer), default=0.0)

    def to_dict(self):
        return {
            "per_layer": [
                {"id": d.layer_id, "max_abs_dev": d.max_abs_dev, "rel_dev": d.rel_dev}
                for d in self.per_layer
            ],
            "argmax_agreement": self.argmax_agreement,
            "max_logit_dev": self.max_logit_dev,
            "inhibitory_spikes": self.inhibitory_spikes,
        }


def check_equivalence(graph, inputs, model=None):
    """Run both passes on a batch and report per-layer deviations.

    At every layer boundary the spiking path's timestep sum is compared
    against the reference tensor; the logits are compared on the summed
    scale (the spiking mean times its timestep count). Argmax agreement is
    the fraction of batch rows whose predicted class matches.
    """
    if model is None:
        model = convert(graph)
    trace = ann_forward(graph, inputs)
    snn_trace = SnnTrace()
    logits_snn, stats = snn_forward(model, inputs, trace=snn_trace)

    per_layer = []
    for layer in graph.layers:
        ann_out = np.asarray(trace.outputs[layer.id], dtype=np.float64)
        snn_sum = np.asarray(snn_trace.sums[layer.id], dtype=np.float64)
        ann_out = ann_out.reshape(snn_sum.shape)
        dev = float(np.max(np.abs(snn_sum - ann_out))) if ann_out.size else 0.0
        scale = float(np.max(np.abs(ann_out))) if ann_out.size else 0.0
        rel = dev / scale if scale > 0 else dev
        per_layer.append(LayerDeviation(layer.id, dev, rel))

    snn_total = logits_snn * model.final_timesteps
    logit_dev = float(np.max(np.abs(snn_total - trace.logits)))
    logit_scale = float(np.max(np.abs(trace.logits)))
    max_logit_dev = logit_dev / logit_scale if logit_scale > 0 else logit_dev
    agreement = float(np.mean(trace.logits.argmax(axis=1) == logits_snn.argmax(axis=1)))
    inhibitory = sum(st.stage2_inhibitory for st in stats.values())
    return EquivalenceReport(
        per_layer=per_layer,
        argmax_agreement=agreement,
        max_logit_dev=max_logit_dev,
        inhibitory_spikes=inhibitory,
        instances=int(np.asarray(inputs).shape[0]) if np.asarray(inputs).ndim == 4 else 1,
    )
