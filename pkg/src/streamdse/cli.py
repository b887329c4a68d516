"""Command-line surface: dse, estimate, simulate, validate, sweep, codec-stats.

Exit codes: 0 success, 1 infeasible design, 2 input/usage error.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from dataclasses import dataclass
from fractions import Fraction

from . import codec as codec_mod
from .devices import DeviceError, DeviceSpec, load_device
from .dse import (DesignPlan, InfeasibleDesign, check_constraints, plan_from_dict,
                  plan_json, run_dse)
from .graph import GraphError, ModelGraph, load_model
from .layers import effective_perf, graph_perf, load_cost_table
from .memory import evicted_buffer_depth
from .simulator import (DmaParams, SimConfig, auto_block_words, dump_waveform,
                        measure_pipeline_depth, simulate, sweep_ratio_variability)

EXIT_OK = 0
EXIT_INFEASIBLE = 1
EXIT_INPUT = 2


@dataclass
class RunManifest:
    model_path: str
    device_path: str
    batch: int = 1
    scheme: str = "none"
    seed: int = 0
    out_dir: str = "out"
    cost_table_path: str | None = None
    boundary_kinds: set[str] | None = None
    jobs: int = 1

    def load(self) -> tuple[ModelGraph, DeviceSpec]:
        for path in (self.model_path, self.device_path):
            if not os.path.exists(path):
                raise FileNotFoundError(path)
        if self.cost_table_path and not os.path.exists(self.cost_table_path):
            raise FileNotFoundError(self.cost_table_path)
        if self.batch < 1:
            raise ValueError("batch must be >= 1")
        return load_model(self.model_path), load_device(self.device_path)


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return value


def _human_report(plan: DesignPlan, device: DeviceSpec) -> str:
    rep = plan.report
    lines = []
    lines.append(f"model        {plan.model}")
    lines.append(f"device       {plan.device}")
    lines.append(f"batch size   {plan.batch}")
    lines.append(f"subgraphs    {rep.n_subgraphs}")
    lines.append(f"latency      {float(rep.latency_s) * 1e3:.2f} ms")
    lines.append(f"throughput   {float(rep.throughput_fps):.2f} fps")
    lines.append(f"reconfig     {float(rep.reconfig_s):.3f} s ({float(100 * rep.reconfig_share):.2f}%)")
    cap = device.resources
    total = {"dsp": 0, "lut": 0, "ff": 0, "bram18k": 0, "uram": 0}
    peak = {k: 0 for k in total}
    bw_peak = 0.0
    for s in plan.subgraphs:
        res = s.resources()
        for k in total:
            total[k] += res.get(k, 0)
            peak[k] = max(peak[k], res.get(k, 0))
        bw_peak = max(bw_peak, device.gbps(s.bandwidth_wpc, 8))
    caps = {"dsp": cap.dsp, "lut": cap.lut, "ff": cap.ff, "bram18k": cap.bram18k, "uram": cap.uram}
    for k in ("dsp", "bram18k", "uram", "lut", "ff"):
        if caps[k]:
            lines.append(f"{k.upper():<12} {peak[k]} ({100 * peak[k] / caps[k]:.0f}%)")
        else:
            lines.append(f"{k.upper():<12} {peak[k]} (-)")
    lines.append(f"BW           {bw_peak:.1f} Gbps ({100 * bw_peak / device.bandwidth_gbps:.0f}%)")
    lines.append("")
    lines.append("per-subgraph:")
    for s in plan.subgraphs:
        lines.append(f"  [{s.index}] {len(s.members)} vertices, II {s.ii} cycles, "
                     f"fill {float(s.depth):.0f} cycles, "
                     f"evictions {len(s.evictions)}, "
                     f"fragmented {sum(1 for m in s.frag.values() if m > 0)}")
    return "\n".join(lines) + "\n"


def _plan_sim_config(g: ModelGraph, device: DeviceSpec, plan: DesignPlan, sub,
                     frames: int, block: int | None, ratio_mult: float = 1.0) -> SimConfig:
    raw = graph_perf(g, sub.pmap)
    perf = effective_perf(g, raw, set(sub.members))
    evs = {}
    n_ports = max(1, device.max_dma_ports)
    port_rate = device.bandwidth_words_per_cycle(g.word_length) / n_ports
    for key in sub.evictions:
        evs[tuple(key)] = DmaParams(
            burst_words=device.dma_burst_words,
            latency_cycles=device.dma_latency_cycles,
            ratio_trace=[plan.act_ratio * ratio_mult] * frames,
        )
    fifo = {tuple(k): (evicted_buffer_depth(device) // 2 if tuple(k) in evs else d)
            for k, d in sub.fifo_depths.items()}
    if block is None:
        block = auto_block_words(g, set(sub.members), perf, frames)
    return SimConfig(
        graph=g, perf=perf, members=set(sub.members), frames=frames,
        fifo_depths=fifo, evictions=evs,
        port_words_per_cycle=port_rate, n_ports=n_ports, block_words=block,
    )


# -- subcommands ---------------------------------------------------------------


def cmd_dse(args) -> int:
    manifest = RunManifest(args.model, args.device, args.batch, args.codec,
                           args.seed, args.out, args.cost_table,
                           set(args.boundary) if args.boundary else None, args.jobs)
    g, device = manifest.load()
    table = load_cost_table(manifest.cost_table_path)
    plan = run_dse(g, device, manifest.batch, scheme=manifest.scheme,
                   boundary_kinds=manifest.boundary_kinds, seed=manifest.seed,
                   cost_table=table)
    os.makedirs(manifest.out_dir, exist_ok=True)
    with open(os.path.join(manifest.out_dir, "plan.json"), "w", encoding="utf-8") as fh:
        fh.write(plan_json(plan))
    with open(os.path.join(manifest.out_dir, "report.json"), "w", encoding="utf-8") as fh:
        json.dump(plan.report.as_dict(), fh, indent=2, sort_keys=True)
    with open(os.path.join(manifest.out_dir, "audit.jsonl"), "w", encoding="utf-8") as fh:
        for rec in plan.audit:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    table_txt = _human_report(plan, device)
    with open(os.path.join(manifest.out_dir, "report.txt"), "w", encoding="utf-8") as fh:
        fh.write(table_txt)
    sys.stdout.write(table_txt)
    return EXIT_OK


def cmd_estimate(args) -> int:
    manifest = RunManifest(args.model, args.device)
    g, device = manifest.load()
    if not os.path.exists(args.plan):
        raise FileNotFoundError(args.plan)
    with open(args.plan, "r", encoding="utf-8") as fh:
        plan = plan_from_dict(json.load(fh), g, device)
    json.dump(plan.report.as_dict(), sys.stdout, indent=2, sort_keys=True)
    sys.stdout.write("\n")
    return EXIT_OK


def cmd_simulate(args) -> int:
    manifest = RunManifest(args.model, args.device)
    g, device = manifest.load()
    with open(args.plan, "r", encoding="utf-8") as fh:
        plan = plan_from_dict(json.load(fh), g, device)
    rows = []
    for sub in plan.subgraphs:
        cfg = _plan_sim_config(g, device, plan, sub, args.frames, args.block)
        cfg.capture_waveform = bool(args.dump_waveform)
        report = simulate(cfg)
        if report.deadlock:
            sys.stderr.write(f"subgraph {sub.index}: deadlock: {report.deadlock}\n")
            return EXIT_INFEASIBLE
        if args.dump_waveform:
            path = f"{args.dump_waveform}.{sub.index}.csv"
            dump_waveform(report, path)
        rows.append({"subgraph": sub.index, "total_cycles": report.total_cycles,
                     "stall_cycles": float(report.total_stalls())})
    json.dump(rows, sys.stdout, indent=2)
    sys.stdout.write("\n")
    return EXIT_OK


def cmd_validate(args) -> int:
    manifest = RunManifest(args.model, args.device)
    g, device = manifest.load()
    with open(args.plan, "r", encoding="utf-8") as fh:
        plan = plan_from_dict(json.load(fh), g, device)
    frames = max(2, args.frames)
    writer = csv.writer(sys.stdout)
    writer.writerow(["subgraph", "depth_model", "depth_sim", "depth_dev_pct",
                     "ii_model", "ii_sim", "ii_dev_pct"])
    worst = 0.0
    for sub in plan.subgraphs:
        cfg = _plan_sim_config(g, device, plan, sub, frames, args.block)
        report = simulate(cfg)
        if report.deadlock:
            sys.stderr.write(f"subgraph {sub.index}: deadlock: {report.deadlock}\n")
            return EXIT_INFEASIBLE
        exits = [vid for vid in sub.members
                 if all(e.dst not in set(sub.members) for e in g.out_edges(vid))]
        sim_depth = max(float(measure_pipeline_depth(report, vid)) for vid in exits)
        model_depth = float(sub.depth)
        sim_ii = max(float(report.steady_interval(vid)) for vid in exits)
        dev_depth = 100.0 * abs(sim_depth - model_depth) / sim_depth if sim_depth else 0.0
        dev_ii = 100.0 * abs(sim_ii - sub.ii) / sim_ii if sim_ii else 0.0
        worst = max(worst, dev_depth)
        writer.writerow([sub.index, f"{model_depth:.1f}", f"{sim_depth:.1f}", f"{dev_depth:.2f}",
                         sub.ii, f"{sim_ii:.1f}", f"{dev_ii:.2f}"])
    sys.stderr.write(f"worst fill deviation {worst:.2f}%\n")
    return EXIT_OK


def cmd_sweep(args) -> int:
    manifest = RunManifest(args.model, args.device, seed=args.seed)
    g, device = manifest.load()
    writer = csv.writer(sys.stdout)
    if args.axis == "batch":
        writer.writerow(["batch", "throughput_fps", "latency_s", "reconfig_share_pct", "subgraphs"])
        rows = []
        for b in args.batches:
            plan = run_dse(g, device, b, scheme=args.codec, seed=args.seed)
            rep = plan.report
            rows.append([b, float(rep.throughput_fps), float(rep.latency_s),
                         float(100 * rep.reconfig_share), rep.n_subgraphs])
        for row in rows:
            writer.writerow(row)
        if args.gnuplot:
            _write_gnuplot(args.gnuplot, "batch", "throughput_fps")
        return EXIT_OK
    # ratio axis
    if not args.plan:
        sys.stderr.write("ratio sweep requires --plan\n")
        return EXIT_INPUT
    with open(args.plan, "r", encoding="utf-8") as fh:
        plan = plan_from_dict(json.load(fh), g, device)
    sub = next((s for s in plan.subgraphs if s.evictions), None)
    writer.writerow(["multiplier", "macs_per_sec"])
    if sub is None:
        for mult in args.multipliers:
            writer.writerow([mult, "flat"])
        return EXIT_OK
    cfg = _plan_sim_config(g, device, plan, sub, max(2, args.frames), args.block)
    curve = sweep_ratio_variability(cfg, args.multipliers, device.freq_hz)
    for mult, macs in curve:
        writer.writerow([mult, f"{macs:.3e}"])
    if args.gnuplot:
        _write_gnuplot(args.gnuplot, "multiplier", "macs_per_sec")
    return EXIT_OK


def _write_gnuplot(path: str, x: str, y: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"set datafile separator ','\nset xlabel '{x}'\nset ylabel '{y}'\n"
                 f"plot '-' using 1:2 with linespoints title '{y}'\n")


def cmd_codec_stats(args) -> int:
    if args.tensor:
        samples = [codec_mod.read_tensor_file(p) for p in args.tensor]
    else:
        samples = codec_mod.synthetic_activations(
            args.samples, args.words, args.word_length, args.zero_fraction, args.seed)
    writer = csv.writer(sys.stdout)
    writer.writerow(["scheme", "mean_ratio", "min_ratio", "max_ratio"])
    for scheme in codec_mod.SCHEMES:
        est = codec_mod.estimate_ratio(samples, scheme)
        writer.writerow([scheme, f"{est.c_bar:.4f}", f"{est.minimum:.4f}", f"{est.maximum:.4f}"])
    return EXIT_OK


# -- parser ----------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="streamdse",
        description="Map CNN graphs onto a modelled streaming FPGA accelerator: "
                    "partitioning, parallelism, on-chip memory and off-chip eviction.")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--model", required=True, help="graph JSON document")
        p.add_argument("--device", required=True, help="device spec JSON")

    p = sub.add_parser("dse", help="run the full design-space exploration")
    common(p)
    p.add_argument("--batch", type=_positive_int, default=1)
    p.add_argument("--codec", choices=("none", "rle", "huffman"), default="none")
    p.add_argument("--seed", type=int, default=0, help="calibration data seed")
    p.add_argument("--out", default="out", help="artifact directory")
    p.add_argument("--cost-table", dest="cost_table", default=None)
    p.add_argument("--boundary", nargs="*", default=None,
                   help="vertex kinds allowed to start a subgraph")
    p.add_argument("--jobs", type=_positive_int, default=1)
    p.set_defaults(fn=cmd_dse)

    p = sub.add_parser("estimate", help="recompute the performance report of a plan")
    common(p)
    p.add_argument("--plan", required=True)
    p.set_defaults(fn=cmd_estimate)

    p = sub.add_parser("simulate", help="discrete-event simulation of a plan's subgraphs")
    common(p)
    p.add_argument("--plan", required=True)
    p.add_argument("--frames", type=_positive_int, default=2)
    p.add_argument("--block", type=_positive_int, default=None,
                   help="words per simulated token (default: auto)")
    p.add_argument("--dump-waveform", dest="dump_waveform", default=None,
                   help="CSV path prefix for (cycle, vertex, event) rows")
    p.set_defaults(fn=cmd_simulate)

    p = sub.add_parser("validate", help="compare the analytical model against the simulator")
    common(p)
    p.add_argument("--plan", required=True)
    p.add_argument("--frames", type=_positive_int, default=2)
    p.add_argument("--block", type=_positive_int, default=None)
    p.set_defaults(fn=cmd_validate)

    p = sub.add_parser("sweep", help="batch or compression-ratio sweeps")
    common(p)
    p.add_argument("--axis", choices=("batch", "ratio"), required=True)
    p.add_argument("--plan", default=None, help="plan.json (ratio axis)")
    p.add_argument("--batches", type=_positive_int, nargs="*", default=[1, 4, 16, 64])
    p.add_argument("--multipliers", type=float, nargs="*",
                   default=[1.0, 1.2, 1.4, 1.6, 1.8, 2.0])
    p.add_argument("--codec", choices=("none", "rle", "huffman"), default="none")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--frames", type=_positive_int, default=2)
    p.add_argument("--block", type=_positive_int, default=None)
    p.add_argument("--gnuplot", default=None, help="write a gnuplot script here")
    p.set_defaults(fn=cmd_sweep)

    p = sub.add_parser("codec-stats", help="per-scheme compression ratios as CSV")
    p.add_argument("--tensor", nargs="*", default=None, help="raw tensor files")
    p.add_argument("--samples", type=_positive_int, default=8)
    p.add_argument("--words", type=_positive_int, default=4096)
    p.add_argument("--word-length", dest="word_length", type=int, choices=(8, 16, 32), default=8)
    p.add_argument("--zero-fraction", dest="zero_fraction", type=float, default=0.5)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_codec_stats)
    return ap


def main(argv: list[str] | None = None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    try:
        return args.fn(args)
    except FileNotFoundError as exc:
        sys.stderr.write(f"error: file not found: {exc}\n")
        return EXIT_INPUT
    except (GraphError, DeviceError, ValueError) as exc:
        if isinstance(exc, InfeasibleDesign):
            sys.stderr.write(f"infeasible: {exc}\n")
            return EXIT_INFEASIBLE
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
