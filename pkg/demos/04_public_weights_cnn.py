"""Public against private weights on the six-layer CNN.

With public weights each party multiplies the plaintext kernels into its
own share, so linear layers need neither triples nor messages (with two
parties; three parties still exchange one message per truncation).
"""
from mpcpipe.bench import BenchRun, run_bench

for weights in ("private", "public"):
    rep = run_bench(BenchRun("cnn-toy", n_parties=2, weights=weights, iterations=1,
                             modes=("pipelined",)))
    mode = rep["modes"]["pipelined"]
    lin = mode["categories"]["Linear"]
    print(f"{weights:>8}: total {mode['total_time'] * 1e3:8.2f} ms, "
          f"linear {lin['time'] * 1e3:7.2f} ms / {lin['bytes']:>9d} bytes, "
          f"replica error {rep['replica']['pipelined']['max_abs_error']:.2e}")
