import math

import numpy as np
import pytest

from mpcpipe import SessionConfig, run_parties
from mpcpipe import replica as R
from mpcpipe.bench import share_inputs
from mpcpipe.engine import (APPLICABILITY, CATEGORY, LayerSpec, ModelGraph, PipelinePolicy,
                            build_model, calibrate, dense_public, inner_matmul, load_model,
                            load_weights, replica_forward, run_model, save_model, save_weights,
                            transformer_toy)
from mpcpipe.engine.im2col import col2out, im2col, weight_matrix
from mpcpipe.engine.layers import attention
from mpcpipe.nonlinear import DEFAULT_APPROX
from mpcpipe.policy import BLOCKING, PIPELINED
from mpcpipe.ring import encode_fixed, ring_matmul, to_signed
from mpcpipe.sharing import ProtocolError

from conftest import add_shares, mpc, open_add

ALWAYS = PipelinePolicy(PIPELINED, inner_chunks=4, inner_threshold_bytes=0)


def _calib(party, graph, x, w):
    return calibrate(party, graph, x, w, threshold=0)


def _run(party, graph, x, w, policy, calib):
    return run_model(party, graph, x, w, policy, calib)


def secure_forward(graph, x, n=2, policy=ALWAYS, calibrated=True, seed=0, **cfg):
    xs, ws = share_inputs(graph, x, n, seed)
    conf = SessionConfig(n_parties=n, seed=seed, **cfg)
    cal = run_parties(conf, _calib, [(graph, xs[r], ws[r]) for r in range(n)])[0] \
        if calibrated else None
    res = run_parties(conf, _run, [(graph, xs[r], ws[r], policy, cal) for r in range(n)])
    return to_signed(open_add([r[0] for r in res])), [r[1] for r in res], cal


def two_dense(w0, w1, mode="private"):
    layers = [LayerSpec("fc0", "dense", ("x",), weight_mode=mode),
              LayerSpec("fc1", "dense", ("fc0",), weight_mode=mode)]
    return ModelGraph("two", "x", (4, w0.shape[0]), layers, {"fc0": w0, "fc1": w1})


def test_applicability_table():
    assert APPLICABILITY["dense"] == APPLICABILITY["conv2d"] == (True, False)
    for k in ("relu", "softmax", "maxpool"):
        assert APPLICABILITY[k] == (False, True)
    assert APPLICABILITY["attention"] == (True, True)
    assert set(CATEGORY.values()) >= {"Linear", "Softmax", "ReLU", "Attention", "Maxpool"}


def test_graph_validation():
    with pytest.raises(ValueError):
        LayerSpec("a", "gelu")
    with pytest.raises(ValueError):
        ModelGraph("g", "x", (1, 2), [LayerSpec("a", "relu", ("nope",))], {})
    with pytest.raises(ValueError):
        ModelGraph("g", "x", (1, 2), [LayerSpec("a", "dense", ("x",), weight_mode="public"),
                                      LayerSpec("b", "dense", ("a",))],
                   {"a": np.eye(2), "b": np.eye(2)})


@pytest.mark.parametrize("n", [2, 3])
@pytest.mark.parametrize("mode", ["private", "public"])
def test_identity_weights_reconstruct_input(n, mode, rng):
    x = rng.uniform(-3, 3, (4, 8))
    out, _, _ = secure_forward(two_dense(np.eye(8), np.eye(8), mode), x, n)
    assert np.array_equal(out, R.enc(x))


@pytest.mark.parametrize("n", [2, 3])
def test_dense_matches_fixed_point_oracle(n, rng):
    w0, w1 = rng.normal(0, 0.3, (8, 6)), rng.normal(0, 0.3, (6, 5))
    x = rng.uniform(-3, 3, (4, 8))
    for mode in ("private", "public"):
        g = two_dense(w0, w1, mode)
        out, _, _ = secure_forward(g, x, n)
        # each truncation is off by < 1 LSB; layer 0's error passes through w1
        bound = 1 + np.abs(w1).sum(0).max() + 1
        assert np.abs(out - replica_forward(g, x)).max() <= bound


def test_dense_public_zero_weight_and_no_messages(rng):
    x = rng.uniform(-3, 3, (3, 5))
    xs = add_shares(2, encode_fixed(x))
    layer = LayerSpec("z", "dense", weight_mode="public")

    def run(p):
        out = dense_public(p, layer, xs[p.rank], np.zeros((5, 4), np.uint64))
        return out, p.comm.bytes_sent

    res = mpc(2, run)
    assert not open_add([r[0] for r in res]).any()
    assert all(r[1] == 0 for r in res)


def test_pipelined_equals_blocking_dense(rng):
    g = two_dense(rng.normal(0, 0.3, (8, 8)), rng.normal(0, 0.3, (8, 3)))
    x = rng.uniform(-2, 2, (4, 8))
    a, _, _ = secure_forward(g, x, 3, PipelinePolicy())
    b, _, _ = secure_forward(g, x, 3, ALWAYS)
    assert np.array_equal(a, b)


def test_next_layer_delta_issued_before_combine(rng):
    g = two_dense(rng.normal(0, 0.3, (8, 8)), rng.normal(0, 0.3, (8, 3)))
    xs, ws = share_inputs(g, rng.uniform(-2, 2, (4, 8)), 2, 0)

    def run(p):
        cal = calibrate(p, g, xs[p.rank], ws[p.rank], threshold=0)
        p.comm.trace.clear()
        run_model(p, g, xs[p.rank], ws[p.rank], ALWAYS, cal)
        return [(e["ev"], e["tag"]) for e in p.comm.trace]

    trace = mpc(2, run)[0]
    issue_delta = trace.index(("issue", "delta:fc1"))
    combine = trace.index(("combine", "fc0"))
    assert issue_delta < combine
    assert ("issue", "delta-sync:fc0") in trace
    assert ("issue", "delta-sync:fc1") not in trace


def test_uncalibrated_pipelined_falls_back_to_sync_delta(rng):
    g = two_dense(rng.normal(0, 0.3, (8, 8)), rng.normal(0, 0.3, (8, 3)))
    x = rng.uniform(-2, 2, (4, 8))
    a, reps, _ = secure_forward(g, x, 2, ALWAYS, calibrated=False)
    b, _, _ = secure_forward(g, x, 2, PipelinePolicy())
    assert np.array_equal(a, b)
    assert reps[0]["wait"]["prefetched_layers"] == 0


def test_stale_calibration_is_detected(rng):
    g = two_dense(rng.normal(0, 0.3, (8, 8)), rng.normal(0, 0.3, (8, 3)))
    xs, ws = share_inputs(g, rng.uniform(-2, 2, (4, 8)), 2, 0)
    xs2, _ = share_inputs(g, rng.uniform(-2, 2, (5, 8)), 2, 0)

    def run(p):
        cal = calibrate(p, g, xs[p.rank], ws[p.rank], threshold=0)
        run_model(p, g, xs2[p.rank], ws[p.rank], ALWAYS, cal)

    with pytest.raises(ProtocolError):
        mpc(2, run)


def _conv_graph(w, mode="private", stride=1, padding=1):
    k = w.shape[-1]
    layers = [LayerSpec("c", "conv2d", ("x",), {"kernel": k, "stride": stride,
                                                "padding": padding}, mode),
              LayerSpec("f", "flatten", ("c",))]
    return ModelGraph("conv", "x", (2, w.shape[1], 6, 6), layers, {"c": w})


def test_im2col_against_direct_convolution(rng):
    x, w = rng.normal(size=(2, 3, 7, 7)), rng.normal(size=(4, 3, 3, 3))
    z = col2out(im2col(x, 3, 2, 1) @ weight_matrix(w), 2, 4, 4)
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    ref = np.zeros((2, 4, 4, 4))
    for i in range(4):
        for j in range(4):
            patch = xp[:, :, 2 * i:2 * i + 3, 2 * j:2 * j + 3]
            ref[:, :, i, j] = np.einsum("bcuv,ocuv->bo", patch, w)
    assert np.allclose(z, ref)


@pytest.mark.parametrize("n", [2, 3])
def test_conv_matches_oracle_and_modes_agree(n, rng):
    w = rng.normal(0, 0.3, (4, 3, 3, 3))
    x = rng.uniform(-2, 2, (2, 3, 6, 6))
    for mode in ("private", "public"):
        g = _conv_graph(w, mode, stride=2)
        a, _, _ = secure_forward(g, x, n, PipelinePolicy())
        b, _, _ = secure_forward(g, x, n, ALWAYS)
        assert np.array_equal(a, b)
        assert np.abs(a - replica_forward(g, x)).max() <= 1


def test_one_by_one_conv_is_dense_over_channels(rng):
    w = rng.normal(0, 0.5, (5, 3, 1, 1))
    x = rng.uniform(-2, 2, (2, 3, 6, 6))
    conv, _, _ = secure_forward(_conv_graph(w, padding=0), x, 2)
    ref = R.matmul(R.enc(x).transpose(0, 2, 3, 1), R.enc(w[:, :, 0, 0].T))
    got = conv.reshape(2, 5, 6, 6).transpose(0, 2, 3, 1)
    assert np.abs(got - ref).max() <= 1


def test_limb_matmul_path_matches_direct(rng):
    w = rng.normal(0, 0.3, (4, 3, 3, 3))
    x = rng.uniform(-2, 2, (2, 3, 6, 6))
    g = _conv_graph(w)
    a, _, _ = secure_forward(g, x, 2)
    b, _, _ = secure_forward(g.with_matmul_path("limb16"), x, 2)
    c, _, _ = secure_forward(g.with_matmul_path("limb4"), x, 2)
    assert np.array_equal(a, b) and np.array_equal(a, c)


def _attn(n, q, k, v, heads, policy):
    qs, ks, vs = (add_shares(n, encode_fixed(t), seed=i) for i, t in enumerate((q, k, v)))
    out = mpc(n, lambda p: attention(p, qs[p.rank], ks[p.rank], vs[p.rank], heads, policy,
                                     DEFAULT_APPROX))
    return to_signed(open_add(out))


def test_attention_against_replica_and_modes(rng):
    q, k, v = (rng.normal(size=(2, 16, 8)) for _ in range(3))
    g = ModelGraph("a", "q", q.shape, [LayerSpec("attn", "attention", ("q", "q", "q"),
                                                 {"heads": 2})], {})
    from mpcpipe.engine.reference import _attention
    ref = _attention(R.enc(q), R.enc(k), R.enc(v), 2, g)
    for n in (2, 3):
        blk = _attn(n, q, k, v, 2, PipelinePolicy())
        pip = _attn(n, q, k, v, 2, ALWAYS)
        assert np.array_equal(blk, pip)
        assert np.abs(blk - ref).max() <= 64


def test_attention_single_token_returns_value_row(rng):
    q, k, v = (rng.normal(size=(1, 1, 8)) for _ in range(3))
    out = _attn(2, q, k, v, 2, PipelinePolicy())
    assert np.abs(out - R.enc(v)).max() <= 8


def test_inner_matmul_chunk_trace_and_equality(rng):
    x, y = rng.integers(0, 2 ** 20, (2, 16, 8)), rng.integers(0, 2 ** 20, (2, 8, 16))
    xs, ys = add_shares(2, x.astype(np.uint64)), add_shares(2, y.astype(np.uint64))

    def run(policy):
        def prog(p):
            out = inner_matmul(p, xs[p.rank], ys[p.rank], policy, tag="mm")
            return out, [e["ev"] for e in p.comm.trace]
        return mpc(2, prog)

    blk, chk = run(PipelinePolicy()), run(ALWAYS)
    assert np.array_equal(open_add([r[0] for r in blk]), ring_matmul(x.astype(np.uint64),
                                                                     y.astype(np.uint64)))
    assert np.array_equal(open_add([r[0] for r in blk]), open_add([r[0] for r in chk]))
    assert blk[0][1] == ["issue", "wait"]
    assert chk[0][1] == ["issue"] * 5 + ["wait"] * 5


def test_calibration_record_structure_and_idempotence(rng):
    g, x = transformer_toy(batch=1, seq=8)
    xs, ws = share_inputs(g, x, 2, 0)

    def run(p):
        a = calibrate(p, g, xs[p.rank], ws[p.rank], threshold=0)
        b = calibrate(p, g, xs[p.rank], ws[p.rank], threshold=0)
        return a, b

    a, b = mpc(2, run)[0]
    lin = [l.name for l in g.linear_layers()]
    assert set(a.next_linear) == set(lin) and a.next_linear[lin[-1]] is None
    assert all(a.next_linear[u] == v for u, v in zip(lin, lin[1:]))
    assert a.linear == b.linear and set(a.linear) == set(lin)


def test_calibrate_sweep_picks_finite_threshold_under_latency():
    g, x = transformer_toy(batch=1, seq=8)
    xs, ws = share_inputs(g, x, 2, 0)
    cal = run_parties(SessionConfig(), lambda p: calibrate(p, g, xs[p.rank], ws[p.rank]),
                      [()] * 2)
    assert cal[0].threshold_bytes == cal[1].threshold_bytes
    assert math.isfinite(cal[0].threshold_bytes) and len(cal[0].sweep) >= 3


@pytest.mark.parametrize("model", ["transformer-toy", "cnn-toy"])
def test_zoo_models_blocking_equals_pipelined_and_replica(model):
    kw = {"batch": 1, "seq": 8} if model == "transformer-toy" else {"batch": 1}
    g, x = build_model(model, 0, **kw)
    a, reps, cal = secure_forward(g, x, 2, PipelinePolicy())
    b, preps, _ = secure_forward(g, x, 2, ALWAYS)
    assert np.array_equal(a, b)
    assert np.abs(a - replica_forward(g, x)).max() <= 2 ** 10
    for rep in reps + preps:
        assert rep["schema"] == 1
        assert {r["name"] for r in rep["layers"]} == {l.name for l in g.layers}
    assert preps[0]["wait"]["prefetched_layers"] == len(g.linear_layers()) - 1


def test_public_weights_zero_linear_bytes_two_party():
    g, x = build_model("cnn-toy", 0, "public", batch=1)
    _, reps, _ = secure_forward(g, x, 2, ALWAYS)
    assert reps[0]["categories"]["Linear"]["bytes"] == 0


def test_timing_categories_add_up():
    g, x = build_model("transformer-toy", 0, batch=1, seq=8)
    _, reps, _ = secure_forward(g, x, 3, ALWAYS)
    rep = reps[0]
    total = sum(c["time"] for c in rep["categories"].values())
    assert total == pytest.approx(rep["total_time"])
    assert sum(c["bytes"] for c in rep["categories"].values()) == rep["bytes_sent"]
    assert rep["categories"]["Softmax"]["time"] > 0 and rep["categories"]["Attention"]["time"] > 0


def test_model_and_weight_files_roundtrip(tmp_path, rng):
    g, x = build_model("cnn-toy", 3, batch=1)
    path = save_model(g, tmp_path / "m")
    g2 = load_model(path)
    assert [l.to_dict() for l in g2.layers] == [l.to_dict() for l in g.layers]
    assert np.array_equal(replica_forward(g, x), replica_forward(g2, x))
    save_weights(tmp_path / "w.mpw", np.array([[1.5, -2.0]]))
    w, scale = load_weights(tmp_path / "w.mpw")
    assert scale == 16 and np.array_equal(w, [[1.5, -2.0]])
    raw, _ = load_weights(tmp_path / "w.mpw", decode=False)
    assert raw.dtype == np.uint64 and raw[0, 0] == 3 << 15
    (tmp_path / "bad.mpw").write_bytes(b"nope")
    with pytest.raises(ValueError):
        load_weights(tmp_path / "bad.mpw")
