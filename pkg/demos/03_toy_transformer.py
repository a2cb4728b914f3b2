"""Blocking against pipelined inference on the toy transformer block, 3 parties.

The run calibrates once (operand shapes of every linear layer plus the
chunking threshold), then executes both schedules and prints where the
time goes.
"""
from mpcpipe.bench import BenchRun, format_report, run_bench

run = BenchRun("transformer-toy", n_parties=3, iterations=1, latency=1e-3, bandwidth=1e9)
report = run_bench(run)
print(format_report(report))

# per-layer view of the pipelined run
for row in report["modes"]["pipelined"]["layers"]:
    extra = ""
    if row.get("delta_prefetched"):
        extra = f"  prefetched metadata, wait {row['delta_wait'] * 1e3:.4f} ms"
    elif "delta_sync_wait" in row:
        extra = f"  synchronous metadata, wait {row['delta_sync_wait'] * 1e3:.4f} ms"
    print(f"{row['name']:>6} {row['kind']:>9} {row['time'] * 1e3:9.3f} ms{extra}")
