"""Command-line interface.

Subcommands
  convert      build the spiking bundle (rescaled constants + plan) on disk
  check-equiv  certify reference/spiking agreement on seeded random inputs
  al-metric    per-layer sensitivity statistics, clustering and step hints
  energy       op counts, overhead-weighted timesteps and energy ratios

Exit codes are stable: 0 success, 1 check failed, 2 invalid input or model.
Reports are written as canonical JSON (sorted keys, floats at 6 significant
digits) plus a CSV sibling where a flat table makes sense, so identical
configurations produce byte-identical files.
"""

import argparse
import csv
import io
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import energy as energy_model
from . import runtime, sensitivity
from .graph import (GraphError, init_random, load_weights, parse_manifest,
                    save_weights)
from .kernels import KernelError
from .reference import ann_forward
from .runtime import ConversionError, convert, snn_forward

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_INVALID = 2


class CliError(Exception):
    pass


def _fmt(x):
    """6 significant digits for floats, exact rendering for integers."""
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return f"{x:.6g}"


def _round6(obj):
    if isinstance(obj, dict):
        return {k: _round6(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_round6(v) for v in obj]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        if math.isnan(v):
            return None
        return float(f"{v:.6g}")
    return obj


def write_json(path, obj):
    text = json.dumps(_round6(obj), indent=2, sort_keys=True, allow_nan=False)
    Path(path).write_text(text + "\n")


def write_csv(path, header, rows):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow(["" if v is None else _fmt(v) if isinstance(v, float) else v
                         for v in row])
    Path(path).write_text(buf.getvalue())


def _load_model(args, need_weights=True):
    try:
        text = Path(args.manifest).read_text()
    except OSError as exc:
        raise CliError(f"cannot read manifest: {exc}")
    graph = parse_manifest(text)
    if not need_weights:
        return graph
    if bool(args.weights) == (args.seed is not None):
        raise CliError("provide exactly one of --weights or --seed")
    if args.weights:
        return load_weights(graph, args.weights)
    return init_random(graph, args.seed)


def _load_inputs(args, graph):
    """One (N, C, H, W) batch: a raw f32 blob or a seeded uniform batch."""
    shape = graph.input_layer.shape
    if args.inputs:
        raw = np.fromfile(args.inputs, dtype="<f4").astype(np.float64)
        per = int(np.prod(shape))
        if raw.size == 0 or raw.size % per:
            raise CliError(f"input blob holds {raw.size} floats, not a multiple of {per}")
        return raw.reshape((-1,) + shape)
    seed = args.seed if args.seed is not None else 0
    rng = np.random.default_rng(np.uint64(seed) + 0x5EED)
    return rng.uniform(0.0, 1.0, size=(args.n,) + shape)


def _config_echo(args, extra=None):
    echo = {
        "manifest": getattr(args, "manifest", None),
        "weights": getattr(args, "weights", None),
        "seed": getattr(args, "seed", None),
        "inputs": getattr(args, "inputs", None),
    }
    if extra:
        echo.update(extra)
    return {k: v for k, v in echo.items() if v is not None}


# ---------------------------------------------------------------------------
# convert


def cmd_convert(args):
    graph = _load_model(args)
    model = convert(graph)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    layers = []
    for layer in graph.layers:
        entry = {"id": layer.id, "kind": layer.kind}
        t = model.t_map[layer.id]
        entry["timesteps"] = 1 if t is None else t
        if layer.id in model.if_plans:
            plan = model.if_plans[layer.id]
            entry.update(theta_star=plan.theta_star, l_in=plan.l_in,
                         l_out=plan.l_out, input_mode=plan.input_mode)
        if layer.is_matmul:
            t_in = model.t_map[layer.preds[0]]
            entry["constant_scale"] = 1.0 if t_in is None else 1.0 / t_in
        layers.append(entry)
    write_json(out / "model.json", {
        "source": graph.name,
        "classes": graph.classes,
        "layers": layers,
        "config": _config_echo(args),
    })

    scaled = {}
    for layer in graph.matmul_layers():
        arrays = dict(graph.weights[layer.id])
        affine = model.scaled_affines.get(layer.id)
        if affine is not None:
            if layer.has_bias:
                arrays["bias"] = affine.bias
            if layer.has_bn:
                arrays.update(gamma=affine.gamma, beta=affine.beta,
                              mu=affine.mu, sigma_sq=affine.sigma_sq)
        scaled[layer.id] = arrays
    save_weights(graph.with_weights(scaled), out)
    print(f"wrote spiking bundle to {out} "
          f"({len(model.if_plans)} integrate-and-fire layers)")
    return EXIT_OK


# ---------------------------------------------------------------------------
# check-equiv


def cmd_check_equiv(args):
    graph = _load_model(args)
    inputs = _load_inputs(args, graph)
    report = runtime.check_equivalence(graph, inputs)
    doc = report.to_dict()
    doc["config"] = _config_echo(args, {"n": inputs.shape[0], "tol": args.tol})
    if args.out:
        write_json(args.out, doc)
    ok = report.argmax_agreement == 1.0 and report.max_rel_dev <= args.tol
    print(f"argmax agreement {report.argmax_agreement * 100:.6g}% over "
          f"{inputs.shape[0]} inputs; max relative layer deviation "
          f"{_fmt(report.max_rel_dev)} (tolerance {_fmt(args.tol)}); "
          f"max logit deviation {_fmt(report.max_logit_dev)}; "
          f"{report.inhibitory_spikes} inhibitory spikes")
    if not ok:
        worst = max(report.per_layer, key=lambda d: d.rel_dev)
        print(f"check FAILED: worst layer '{worst.layer_id}' deviates "
              f"{_fmt(worst.rel_dev)} relative", file=sys.stderr)
        return EXIT_CHECK_FAILED
    print("check passed")
    return EXIT_OK


# ---------------------------------------------------------------------------
# al-metric


def cmd_al_metric(args):
    graph = _load_model(args)
    inputs = _load_inputs(args, graph)
    if inputs.shape[0] < 1:
        raise CliError("need at least one calibration image")
    alpha = args.alpha
    if alpha is None:
        k = args.alpha_k if args.alpha_k is not None else 0.5
        alpha = sensitivity.default_alpha(len(graph.matmul_layers()), k)
    trace = ann_forward(graph, inputs)
    rows = sensitivity.analyze_trace(trace, graph, alpha=alpha, chi=args.chi)
    table = sensitivity.report_rows(rows)
    doc = {
        "layers": table,
        "config": _config_echo(args, {"alpha": alpha, "chi": args.chi,
                                      "images": inputs.shape[0]}),
    }
    if args.out:
        out = Path(args.out)
        write_json(out, doc)
        write_csv(out.with_suffix(".csv"),
                  ["layer", "A", "g", "kurtosis", "M", "cluster", "assigned_L"],
                  [[r["layer"], r["agreement"], r["skewness"], r["kurtosis"],
                    r["metric"], r["cluster"], r["assigned_L"]] for r in table])
    for r in table:
        if r["flag"]:
            print(f"{r['layer']}: flagged ({r['flag']})")
        else:
            print(f"{r['layer']}: A={_fmt(r['agreement'])} g={_fmt(r['skewness'])} "
                  f"K={_fmt(r['kurtosis'])} M={_fmt(r['metric'])} "
                  f"cluster={r['cluster']} L={r['assigned_L']}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# energy


def _parse_steps(text):
    if text is None:
        return 4
    parts = [p.strip() for p in text.split(",") if p.strip()]
    values = [int(p) for p in parts]
    if any(v < 1 for v in values):
        raise CliError("quantization steps must be >= 1")
    return values[0] if len(values) == 1 else values


def _graph_dims(graph, model):
    """MatMulDims list plus per-matmul step vector from a parsed model."""
    succ = {}
    for layer in graph.layers:
        for p in layer.preds:
            succ.setdefault(p, []).append(layer.id)
    dims, steps = [], []
    for layer in graph.matmul_layers():
        nexts = [graph.layer(i) for i in succ.get(layer.id, [])]
        paired = any(n.kind == "qcfs_act" for n in nexts)
        if layer.kind == "conv":
            c, h, w = layer.out_shape
            dims.append(energy_model.MatMulDims(
                layer.id, "conv", layer.in_channels, c,
                layer.kernel[0], layer.kernel[1], h, w, paired=paired))
        else:
            dims.append(energy_model.MatMulDims(
                layer.id, "fc", layer.in_channels, layer.out_channels, paired=paired))
        if paired:
            steps.append(next(n.qcfs.L for n in nexts if n.kind == "qcfs_act"))
        else:
            t = model.t_map[layer.id]
            steps.append(1 if t is None else t)
    return dims, steps


def _measured_rates(graph, model, dims, inputs):
    """Per-matmul spike rate of the train each matmul consumes.

    Prefix layers see the real-valued image; they are MAC-counted anyway
    and get the model-mean rate so the ratio columns stay defined.
    """
    _, stats = snn_forward(model, inputs)
    source_if = {}
    for layer in graph.layers:
        if layer.kind == "qcfs_act":
            source_if[layer.id] = layer.id
        elif layer.kind == "input":
            source_if[layer.id] = None
        elif layer.kind == "residual_add":
            source_if[layer.id] = source_if[layer.preds[0]]
        else:
            source_if[layer.id] = source_if[layer.preds[0]]
    mean_rate = (float(np.mean([st.spike_rate for st in stats.values()]))
                 if stats else 0.75)
    rates = []
    for layer, d in zip(graph.matmul_layers(), dims):
        src = source_if[layer.preds[0]]
        rate = stats[src].spike_rate if src in stats else mean_rate
        rates.append(max(rate, 1e-12))
    return rates


def cmd_energy(args):
    steps = _parse_steps(args.L)
    if args.golden:
        rows, totals = energy_model.golden_table(args.golden)
        print(f"{'Layer':34} {'Input':>14} {'Output':>14} {'#MACs':>16}")
        for name, in_d, out_d, macs in rows:
            printed = "-" if macs is None else f"{macs:,}"
            print(f"{name:34} {in_d:>14} {out_d:>14} {printed:>16}")
        for head, total in totals.items():
            print(f"Total Operations ({head}): {total:,}")
        if args.out:
            write_csv(args.out, ["layer", "input", "output", "macs"], rows)
        arch = energy_model.ARCHITECTURES.get(args.golden)
        if arch and args.L is not None and isinstance(steps, int):
            rate = 0.75 if args.rate in (None, "measured") else float(args.rate)
            tn = energy_model.t_norm(arch(), steps, rate)
            print(f"T_norm (L={steps}, rate={_fmt(rate)}): {_fmt(tn)}")
        return EXIT_OK

    if not args.manifest:
        raise CliError("energy needs --golden or --manifest")
    measured = args.rate == "measured"
    graph = _load_model(args, need_weights=measured)
    if measured:
        model = convert(graph)
        dims, graph_steps = _graph_dims(graph, model)
        rates = _measured_rates(graph, model, dims, _load_inputs(args, graph))
        rate_label = "measured"
    else:
        model = convert(init_random(graph, 0) if not graph.weights else graph)
        dims, graph_steps = _graph_dims(graph, model)
        rates = float(args.rate) if args.rate else 0.75
        rate_label = "assumed"
    if args.L is None:
        steps = graph_steps
    elif not isinstance(steps, int):
        paired = [i for i, d in enumerate(dims) if d.paired]
        if len(steps) == len(paired) and len(paired) != len(dims):
            # vector written per activation layer; unpaired matmuls keep the
            # timestep count they actually run at
            expanded = list(graph_steps)
            for i, L in zip(paired, steps):
                expanded[i] = L
            steps = expanded
    report = energy_model.build_report(dims, steps, spike_rate=rates,
                                       precision=args.precision, rate_label=rate_label)
    report["config"] = _config_echo(args, {"L": steps, "rate": rate_label,
                                           "precision": args.precision})
    agg = report["aggregates"]
    for key in ("t_norm", "t_eff"):
        if key in agg:
            print(f"{key}: {_fmt(agg[key])}")
    print(f"total matmul ops: {agg['total_ann_macs']:,}")
    print(f"overall staged/plain energy ratio: {_fmt(agg['overall_r_e'])}")
    print(f"ANN/SNN energy ratio: {_fmt(agg['energy_ratio_fp32'])} (fp32), "
          f"{_fmt(agg['energy_ratio_int8'])} (int8)")
    if args.out:
        out = Path(args.out)
        write_json(out, report)
        write_csv(out.with_suffix(".csv"),
                  ["layer", "kind", "L", "spike_rate", "ann_macs", "snn_acs",
                   "threshold_mults", "r_prime", "r_e"],
                  [[r["layer"], r["kind"], r["L"], r["spike_rate"], r["ann_macs"],
                    r["snn_acs"], r["threshold_mults"], r["r_prime"], r["r_e"]]
                   for r in report["per_layer"]])
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser():
    parser = argparse.ArgumentParser(
        prog="spikecast",
        description="Convert quantized-activation networks to spiking networks, "
                    "certify the conversion, and analyze sensitivity and energy.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, weights=True, inputs=True):
        p.add_argument("--manifest", help="model manifest JSON")
        if weights:
            p.add_argument("--weights", help="directory of per-layer .f32 blobs")
            p.add_argument("--seed", type=int, help="seeded random weights/inputs")
        if inputs:
            p.add_argument("--inputs", help="raw float32 input blob")
            p.add_argument("--n", type=int, default=16,
                           help="random input count when no blob is given")
        p.add_argument("--out", help="output path")

    p = sub.add_parser("convert", help="write the converted spiking bundle")
    common(p, inputs=False)
    p.set_defaults(func=cmd_convert)

    p = sub.add_parser("check-equiv", help="certify reference/spiking agreement")
    common(p)
    p.add_argument("--tol", type=float, default=1e-4,
                   help="max relative per-layer deviation")
    p.set_defaults(func=cmd_check_equiv)

    p = sub.add_parser("al-metric", help="layer sensitivity metrics and clustering")
    common(p)
    p.add_argument("--alpha", type=float, help="agreement occupancy threshold")
    p.add_argument("--alpha-k", dest="alpha_k", type=float,
                   help="set alpha = k / (matmul layer count)")
    p.add_argument("--chi", type=int, default=1, help="cluster count")
    p.set_defaults(func=cmd_al_metric)

    p = sub.add_parser("energy", help="op counts, timesteps, energy ratios")
    common(p)
    p.add_argument("--golden", choices=energy_model.GOLDEN_NAMES,
                   help="print a built-in reference op-count table")
    p.add_argument("--L", help="uniform step or comma-separated layerwise vector")
    p.add_argument("--rate", default=None,
                   help="'measured' or a spike-rate value (default 0.75)")
    p.add_argument("--precision", choices=("fp32", "int8"), default="fp32")
    p.set_defaults(func=cmd_energy)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (CliError, GraphError, ConversionError, KernelError,
            sensitivity.MetricError, energy_model.EnergyModelError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
