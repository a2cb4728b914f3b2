"""Model execution in blocking or pipelined mode, calibration and timing reports."""
import math
from dataclasses import dataclass, field

import numpy as np

from .. import protocols as P
from ..nonlinear import relu
from ..policy import PIPELINED, PipelinePolicy
from ..ring import RING_DTYPE
from ..transport import SUM
from .graph import CATEGORY, CalibrationRecord, LinearDims
from .layers import (InterLayerState, attention, dense_private, dense_public, linear_op,
                     nonlinear_layer)

SCHEMA = 1
CATEGORIES = ("Linear", "Softmax", "ReLU", "Attention", "Maxpool", "Other")
DEFAULT_SWEEP_BYTES = tuple(2 ** k for k in range(10, 23, 2))


def _execute(party, graph, layer, env, weights, policy, state, calib, record):
    x = env[layer.inputs[0]]
    if layer.linear:
        w = weights[layer.name]
        if record is not None:
            op, params = linear_op(layer, x.shape)
            record[layer.name] = LinearDims(tuple(x.shape), tuple(w.shape), op, params)
        if layer.weight_mode == "public":
            return dense_public(party, layer, x, w)
        return dense_private(party, layer, x, w, weights, policy, state, calib)
    if layer.kind == "attention":
        q, k, v = (env[n] for n in layer.inputs)
        return attention(party, q, k, v, layer.params["heads"], policy, graph.approx,
                         tag=layer.name)
    if layer.kind == "flatten":
        return x.reshape(x.shape[0], -1)
    return nonlinear_layer(party, layer, x, policy, graph.approx)


def _transfer_time(cfg, entry):
    tag, blocked, span, nbytes = entry
    if cfg.backend == "sim":
        return cfg.latency + nbytes / cfg.bandwidth
    return span


def run_model(party, graph, x, weights, policy, calibration=None, record=None):
    """Run ``graph`` on this party's input share.

    ``weights`` maps linear layer names to this party's weight share
    (private mode) or to the encoded plaintext operand (public mode).
    Pipelined runs without a calibration record still chunk inner-layer
    operations but open every linear layer's weight metadata synchronously.
    Returns (output share, timing report dict).
    """
    calib = calibration if calibration is not None else graph.calibration
    comm = party.comm
    state = InterLayerState()
    env = {graph.input_name: np.asarray(x, RING_DTYPE)}
    rows = []
    start = party.snapshot()
    totals_before = {k: dict(v) for k, v in party.totals.items()}
    for layer in graph.layers:
        s = party.snapshot()
        mark = len(comm.wait_log)
        with party.category(CATEGORY[layer.kind]):
            env[layer.name] = _execute(party, graph, layer, env, weights, policy, state,
                                       calib, record)
        e = party.snapshot()
        row = {"name": layer.name, "kind": layer.kind, "category": CATEGORY[layer.kind],
               "time": e[0] - s[0], "bytes_sent": e[1] - s[1], "wait": e[2] - s[2],
               "collectives": e[3] - s[3]}
        if layer.linear:
            entries = comm.wait_log[mark:]
            row["comm_time"] = sum(_transfer_time(party.cfg, en) for en in entries)
            row["delta_wait"] = sum(en[1] for en in entries if en[0].startswith("delta:"))
            row["delta_sync_wait"] = sum(en[1] for en in entries
                                         if en[0].startswith("delta-sync:"))
            row["delta_prefetched"] = any(en[0].startswith("delta:") for en in entries)
        rows.append(row)
    end = party.snapshot()
    if state.staged:
        raise RuntimeError(f"unconsumed staged layers: {sorted(state.staged)}")
    cats = {}
    for name in CATEGORIES:
        now = party.totals.get(name, {"time": 0.0, "bytes": 0, "wait": 0.0, "collectives": 0})
        before = totals_before.get(name, {"time": 0.0, "bytes": 0, "wait": 0.0,
                                          "collectives": 0})
        cats[name] = {k: now[k] - before[k] for k in ("time", "bytes", "wait", "collectives")}
    report = {
        "schema": SCHEMA,
        "model": graph.name,
        "mode": policy.mode,
        "n_parties": party.n,
        "rank": party.rank,
        "clock": "simulated" if party.cfg.backend == "sim" else "wall",
        "weight_mode": graph.weight_mode,
        "inner_chunks": policy.inner_chunks,
        "inner_threshold_bytes": _finite(policy.inner_threshold_bytes),
        "total_time": end[0] - start[0],
        "bytes_sent": end[1] - start[1],
        "wait_time": end[2] - start[2],
        "collectives": end[3] - start[3],
        "categories": cats,
        "layers": rows,
        "wait": wait_attribution(rows),
    }
    return env[graph.output_name], report


def wait_attribution(rows):
    """Blocked time on weight-metadata reveals versus linear-layer comm time.

    Only layers whose metadata was pre-transmitted count towards the
    fraction; the first linear layer's synchronous reveal is reported on
    its own.
    """
    lin = [r for r in rows if "comm_time" in r]
    pre = [r for r in lin if r["delta_prefetched"]]
    comm = sum(r["comm_time"] for r in pre)
    delta = sum(r["delta_wait"] for r in pre)
    return {
        "delta_wait": delta,
        "delta_sync_wait": sum(r["delta_sync_wait"] for r in lin),
        "prefetched_comm_time": comm,
        "linear_comm_time": sum(r["comm_time"] for r in lin),
        "delta_fraction": delta / comm if comm > 0 else None,
        "prefetched_layers": len(pre),
    }


def _finite(v):
    return None if v is None or math.isinf(v) else v


@dataclass
class SweepResult:
    op: str
    chunks: int
    rows: list = field(default_factory=list)       # (bytes, blocking s, chunked s)
    threshold_bytes: float = math.inf
    note: str = ""

    def table(self):
        lines = [f"{'bytes':>10} {'blocking':>12} {'chunked':>12}  win"]
        for nbytes, tb, tc in self.rows:
            lines.append(f"{nbytes:>10d} {tb * 1e3:>10.4f}ms {tc * 1e3:>10.4f}ms  "
                         f"{'yes' if tc < tb else 'no'}")
        if self.note:
            lines.append(self.note)
        else:
            t = self.threshold_bytes
            lines.append("crossover: none (chunking never wins)" if math.isinf(t)
                         else f"crossover: {int(t)} bytes")
        return "\n".join(lines)


def sweep_threshold(party, op="and", sizes=DEFAULT_SWEEP_BYTES, chunks=4):
    """Time blocking against chunked evaluation of ``op`` over operand byte sizes.

    All parties run the same sweep; per-size wins are agreed with one sum
    reveal so every party adopts the same threshold. The threshold is the
    smallest size from which chunking wins at every larger swept size.
    """
    sizes = sorted(int(s) for s in sizes)
    result = SweepResult(op, chunks)
    if len(sizes) < 3:
        result.note = "insufficient sweep: need at least 3 sizes"
        result.threshold_bytes = None
        return result
    blocking = PipelinePolicy()
    chunked = PipelinePolicy(PIPELINED, inner_chunks=chunks, inner_threshold_bytes=0)
    wins = []
    for nbytes in sizes:
        m = max(chunks, nbytes // 8)
        x = party.rng.integers(0, 2 ** 64, m, dtype=np.uint64, endpoint=False)
        y = party.rng.integers(0, 2 ** 64, m, dtype=np.uint64, endpoint=False)
        times = []
        for pol in (blocking, chunked):
            t0 = party.now()
            if op == "and":
                P.beaver_and(party, x, y, policy=pol, tag=f"sweep:{nbytes}")
            elif op == "relu":
                relu(party, x >> np.uint64(20), pol, tag=f"sweep:{nbytes}")
            else:
                raise ValueError(f"unknown sweep op {op!r}")
            times.append(party.now() - t0)
        result.rows.append((8 * m, times[0], times[1]))
        wins.append(1 if times[1] < times[0] else 0)
    votes = party.comm.wait(party.comm.reveal_async(np.array(wins, RING_DTYPE), SUM,
                                                    tag="sweep:vote"))
    agreed = [int(v) == party.n for v in votes]
    threshold = math.inf
    for (nbytes, _, _), win in zip(reversed(result.rows), reversed(agreed)):
        if not win:
            break
        threshold = nbytes
    result.threshold_bytes = threshold
    return result


def calibrate(party, graph, x, weights, sweep_sizes=DEFAULT_SWEEP_BYTES, chunks=4,
              threshold=None):
    """One blocking pass recording linear-layer operand dimensions, plus the
    inner-pipeline threshold sweep (skipped if ``threshold`` is given)."""
    record = {}
    run_model(party, graph, x, weights, PipelinePolicy(), calibration=None, record=record)
    sweep = []
    if threshold is None:
        res = sweep_threshold(party, "and", sweep_sizes, chunks)
        threshold = res.threshold_bytes if res.threshold_bytes is not None else math.inf
        sweep = res.rows
    return CalibrationRecord(record, graph.static_next_linear(), threshold, sweep)
