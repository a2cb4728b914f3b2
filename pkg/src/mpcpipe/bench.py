"""Benchmark harness: blocking vs pipelined N-party inference runs.

Subcommands::

    run     run one or both modes, verify, write report.json / report.txt
    verify  compare one secure run with the plaintext fixed-point replica
    sweep   time chunked against blocking AND (or ReLU) over operand sizes
"""
import argparse
import hashlib
import json
import math
import os
import re
import sys
from dataclasses import asdict, dataclass, field

import numpy as np

from .engine import build_model, calibrate, replica_forward, run_model, sweep_threshold
from .engine.layers import encode_weight
from .engine.scheduler import CATEGORIES, DEFAULT_SWEEP_BYTES
from .policy import BLOCKING, PIPELINED, PipelinePolicy
from .ring import RING_DTYPE, encode_fixed, to_signed
from .runtime import run_parties
from .sharing import share_additive
from .transport import SessionConfig, TransportError

LOGIT_TOLERANCE = 2.0 ** -6
SESSION_PORT_STRIDE = 16

_TIME_UNITS = {"": 1.0, "s": 1.0, "ms": 1e-3, "us": 1e-6, "ns": 1e-9}
_RATE_UNITS = {"": 1.0, "bps": 1.0 / 8, "Bps": 1.0, "kbps": 1e3 / 8, "KBps": 1e3,
               "Mbps": 1e6 / 8, "MBps": 1e6, "Gbps": 1e9 / 8, "GBps": 1e9}


def _parse_quantity(text, units, what):
    m = re.fullmatch(r"\s*([0-9.eE+-]+|inf)\s*([A-Za-z]*)\s*", str(text))
    if not m or m.group(2) not in units:
        raise argparse.ArgumentTypeError(f"bad {what}: {text!r}")
    return float(m.group(1)) * units[m.group(2)]


def parse_latency(text):
    """'1ms', '250us', '0', '0.001' -> seconds."""
    return _parse_quantity(text, _TIME_UNITS, "latency")


def parse_bandwidth(text):
    """'1GBps', '100Mbps', 'inf', '1e9' -> bytes per second."""
    return _parse_quantity(text, _RATE_UNITS, "bandwidth")


@dataclass
class BenchRun:
    model: str = "transformer-toy"
    n_parties: int = 2
    backend: str = "sim"
    modes: tuple = (BLOCKING, PIPELINED)
    weights: str = "private"
    iterations: int = 50
    seed: int = 0
    latency: float = 1e-3
    bandwidth: float = 1e9
    chunks: int = 4
    threshold: float = None
    model_kwargs: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.n_parties not in (2, 3):
            raise ValueError("parties must be 2 or 3")

    def session(self, index=0):
        cfg = SessionConfig.from_dict(dict(n_parties=self.n_parties, backend=self.backend,
                                           latency=self.latency, bandwidth=self.bandwidth,
                                           seed=self.seed))
        cfg.port_base += SESSION_PORT_STRIDE * index
        return cfg


def share_inputs(graph, x, n, seed):
    """Per-party (input share, weight dict). Public weights go to every party in the clear."""
    rng = np.random.default_rng([seed, 0x5EED])
    s = graph.scale_bits
    xs = [sh.tensor for sh in share_additive(encode_fixed(x, s), n, rng)]
    ws = [{} for _ in range(n)]
    for layer in graph.linear_layers():
        w = encode_weight(layer, graph.weights[layer.name], s)
        if layer.weight_mode == "public":
            for d in ws:
                d[layer.name] = w
        else:
            for d, sh in zip(ws, share_additive(w, n, rng)):
                d[layer.name] = sh.tensor
    return xs, ws


def _calibrate_program(party, graph, x, w, chunks, threshold):
    return calibrate(party, graph, x, w, chunks=chunks, threshold=threshold)


def _run_program(party, graph, x, w, policy, calib, iterations):
    outs, reports = [], []
    for _ in range(iterations):
        out, rep = run_model(party, graph, x, w, policy, calib)
        outs.append(out)
        reports.append(rep)
    return outs, reports


def _sweep_program(party, op, sizes, chunks):
    return sweep_threshold(party, op, sizes, chunks)


def _launch(cfg, program, per_rank):
    return run_parties(cfg, program, per_rank, processes=cfg.backend == "socket")


def reconstruct_outputs(results):
    """Sum the parties' output shares per iteration -> list of signed int64 arrays."""
    iters = len(results[0][0])
    return [to_signed(sum(r[0][i] for r in results).astype(RING_DTYPE)) for i in range(iters)]


def output_hash(outputs):
    h = hashlib.sha256()
    for o in outputs:
        h.update(np.ascontiguousarray(o, "<i8").tobytes())
    return h.hexdigest()


def mean_report(reports):
    """Average numeric leaves over iterations; other fields come from the first report."""
    first = reports[0]
    if isinstance(first, dict):
        return {k: mean_report([r[k] for r in reports]) for k in first}
    if isinstance(first, list):
        return [mean_report(list(items)) for items in zip(*reports)]
    if isinstance(first, bool) or not isinstance(first, (int, float)):
        return first
    if any(r is None for r in reports):
        return None
    return float(np.mean(reports)) if isinstance(first, float) else \
        (first if all(r == first for r in reports) else float(np.mean(reports)))


def compare_replica(graph, x, outputs):
    ref = replica_forward(graph, x)
    dev = max(int(np.abs(o - ref).max()) for o in outputs)
    err = dev / 2.0 ** graph.scale_bits
    return {"max_abs_error": err, "max_lsb_deviation": dev, "tolerance": LOGIT_TOLERANCE,
            "pass": err <= LOGIT_TOLERANCE}


def run_bench(run):
    """Calibrate, run every requested mode, verify. Returns the report dict."""
    graph, x = build_model(run.model, run.seed, run.weights, **run.model_kwargs)
    n = run.n_parties
    xs, ws = share_inputs(graph, x, n, run.seed)
    calib = _launch(run.session(0), _calibrate_program,
                    [(graph, xs[r], ws[r], run.chunks, run.threshold) for r in range(n)])[0]
    threshold = calib.threshold_bytes
    modes, hashes, replica = {}, {}, {}
    for i, mode in enumerate(run.modes, 1):
        policy = PipelinePolicy(mode, inner_chunks=run.chunks, inner_threshold_bytes=threshold)
        results = _launch(run.session(i), _run_program,
                          [(graph, xs[r], ws[r], policy, calib, run.iterations)
                           for r in range(n)])
        outputs = reconstruct_outputs(results)
        hashes[mode] = output_hash(outputs)
        replica[mode] = compare_replica(graph, x, outputs)
        modes[mode] = mean_report(results[0][1])
    speedup = {}
    if BLOCKING in modes and PIPELINED in modes:
        b, p = modes[BLOCKING], modes[PIPELINED]
        speedup["total"] = (b["total_time"] - p["total_time"]) / b["total_time"]
        for cat in CATEGORIES:
            tb = b["categories"][cat]["time"]
            if tb > 0:
                speedup[cat] = (tb - p["categories"][cat]["time"]) / tb
    identical = len(set(hashes.values())) == 1
    ok = identical and all(r["pass"] for r in replica.values())
    run_info = asdict(run)
    run_info["modes"] = list(run.modes)
    run_info["bandwidth"] = None if math.isinf(run.bandwidth) else run.bandwidth
    return {
        "schema": 1,
        "run": run_info,
        "calibration": calib.to_dict(),
        "modes": modes,
        "speedup": speedup,
        "output_hashes": hashes,
        "hashes_identical": identical,
        "replica": replica,
        "ok": ok,
    }


def format_report(report):
    run = report["run"]
    lines = [f"model {run['model']}  parties {run['n_parties']}  backend {run['backend']}  "
             f"weights {run['weights']}  iterations {run['iterations']}  seed {run['seed']}"]
    thr = report["calibration"]["threshold_bytes"]
    bw = "inf" if run["bandwidth"] is None else f"{run['bandwidth'] / 1e9:g} GB/s"
    lines.append(f"latency {run['latency'] * 1e3:g} ms  bandwidth {bw}  chunks {run['chunks']}"
                 "  threshold " + ("inf" if thr is None else f"{int(thr)} B"))
    modes = report["modes"]
    names = list(modes)
    head = f"{'category':<10}" + "".join(f"{m + ' ms':>16}{'bytes':>14}{'wait ms':>10}"
                                         for m in names)
    if "total" in report["speedup"]:
        head += f"{'speedup':>10}"
    lines += ["", head]
    rows = [(c, {m: modes[m]["categories"][c] for m in names}) for c in CATEGORIES]
    rows.append(("total", {m: {"time": modes[m]["total_time"], "bytes": modes[m]["bytes_sent"],
                               "wait": modes[m]["wait_time"]} for m in names}))
    for cat, per in rows:
        if all(per[m]["time"] == 0 for m in names):
            continue
        line = f"{cat:<10}" + "".join(
            f"{per[m]['time'] * 1e3:>16.3f}{int(per[m]['bytes']):>14d}{per[m]['wait'] * 1e3:>10.3f}"
            for m in names)
        if cat in report["speedup"]:
            line += f"{report['speedup'][cat] * 100:>9.2f}%"
        lines.append(line)
    if PIPELINED in modes:
        w = modes[PIPELINED]["wait"]
        frac = w["delta_fraction"]
        lines += ["", f"weight-metadata wait (pipelined): {w['delta_wait'] * 1e3:.4f} ms over "
                  f"{w['prefetched_layers']} prefetched layers, "
                  + ("n/a" if frac is None else f"{frac * 100:.3f}%")
                  + f" of their comm time; first-layer synchronous wait "
                  f"{w['delta_sync_wait'] * 1e3:.4f} ms"]
    lines.append("")
    for m in names:
        r = report["replica"][m]
        lines.append(f"{m:<10} hash {report['output_hashes'][m][:16]}  replica max error "
                     f"{r['max_abs_error']:.3e} ({'pass' if r['pass'] else 'FAIL'})")
    lines.append("outputs identical across modes: " + ("yes" if report["hashes_identical"]
                                                       else "NO"))
    return "\n".join(lines) + "\n"


def write_report(report, out_dir):
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "report.json"), "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
    with open(os.path.join(out_dir, "report.txt"), "w") as fh:
        fh.write(format_report(report))


def verify(model, seed=0, n_parties=2, weights="private", mode=BLOCKING, corrupt=False,
           backend="sim", **model_kwargs):
    """One secure run against the replica. Returns (passed, diagnostics dict)."""
    graph, x = build_model(model, seed, weights, **model_kwargs)
    xs, ws = share_inputs(graph, x, n_parties, seed)
    cfg = SessionConfig.from_dict(dict(n_parties=n_parties, backend=backend, seed=seed))
    calib = run_parties(cfg, _calibrate_program,
                        [(graph, xs[r], ws[r], 4, math.inf) for r in range(n_parties)])[0]
    policy = PipelinePolicy(mode)
    results = run_parties(cfg, _run_program,
                          [(graph, xs[r], ws[r], policy, calib, 1) for r in range(n_parties)],
                          corrupt=corrupt)
    diag = compare_replica(graph, x, reconstruct_outputs(results))
    return diag["pass"], diag


def build_parser():
    ap = argparse.ArgumentParser(prog="mpcpipe", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    def net(p):
        p.add_argument("--parties", type=int, choices=(2, 3), default=2)
        p.add_argument("--backend", choices=("sim", "socket"), default="sim")
        p.add_argument("--latency", type=parse_latency, default=1e-3,
                       help="one-way latency, e.g. 1ms (default)")
        p.add_argument("--bandwidth", type=parse_bandwidth, default=1e9,
                       help="per-link bandwidth, e.g. 1GBps (default)")
        p.add_argument("--seed", type=int, default=0)

    run = sub.add_parser("run", help="benchmark blocking and/or pipelined inference")
    run.add_argument("--model", default="transformer-toy",
                     help="transformer-toy, cnn-toy or a model.json path")
    net(run)
    run.add_argument("--mode", choices=("blocking", "pipelined", "both"), default="both")
    run.add_argument("--weights", choices=("private", "public"), default="private")
    run.add_argument("--chunks", type=int, default=4)
    run.add_argument("--threshold", type=float, default=None,
                     help="inner-pipeline threshold in bytes (default: calibrated)")
    run.add_argument("--iterations", type=int, default=50)
    run.add_argument("--out", default="bench_out")

    ver = sub.add_parser("verify", help="check secure output against the plaintext replica")
    ver.add_argument("--model", default="transformer-toy")
    net(ver)
    ver.add_argument("--weights", choices=("private", "public"), default="private")
    ver.add_argument("--corrupt-triple", action="store_true",
                     help="negative control: perturb every dealer triple")

    sw = sub.add_parser("sweep", help="find the inner-pipeline size threshold")
    net(sw)
    sw.add_argument("--op", choices=("and", "relu"), default="and")
    sw.add_argument("--sizes", type=int, nargs="+", default=list(DEFAULT_SWEEP_BYTES),
                    help="operand sizes in bytes")
    sw.add_argument("--chunks", type=int, default=4)
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        if args.command == "run":
            modes = (BLOCKING, PIPELINED) if args.mode == "both" else (args.mode,)
            run = BenchRun(args.model, args.parties, args.backend, modes, args.weights,
                           args.iterations, args.seed, args.latency, args.bandwidth,
                           args.chunks, args.threshold)
            report = run_bench(run)
            write_report(report, args.out)
            sys.stdout.write(format_report(report))
            return 0 if report["ok"] else 1
        if args.command == "verify":
            ok, diag = verify(args.model, args.seed, args.parties, args.weights,
                              corrupt=args.corrupt_triple, backend=args.backend)
            print(f"{args.model} {args.parties}PC {args.weights}: "
                  f"max deviation {diag['max_abs_error']:.3e} "
                  f"({diag['max_lsb_deviation']} LSB), tolerance {diag['tolerance']:.3e} -> "
                  + ("pass" if ok else "FAIL"))
            return 0 if ok else 1
        cfg = SessionConfig.from_dict(dict(n_parties=args.parties, backend=args.backend,
                                           latency=args.latency, bandwidth=args.bandwidth,
                                           seed=args.seed))
        res = run_parties(cfg, _sweep_program,
                          [(args.op, args.sizes, args.chunks)] * args.parties,
                          processes=args.backend == "socket")[0]
        print(res.table())
        return 0
    except (ValueError, OSError, TransportError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
