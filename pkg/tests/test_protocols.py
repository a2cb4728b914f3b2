import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mpcpipe import protocols as P
from mpcpipe.policy import PIPELINED, PipelinePolicy
from mpcpipe.ring import encode_fixed, ring_matmul, to_signed

from conftest import add_shares, mpc, open_add, open_xor, rand_ring, xor_shares

CHUNKED = PipelinePolicy(PIPELINED, inner_chunks=4, inner_threshold_bytes=0)
UNFUSED = PipelinePolicy(PIPELINED, inner_chunks=4, inner_threshold_bytes=0, merged_and=False)


@settings(max_examples=25, deadline=None)
@given(st.sampled_from([2, 3]), st.integers(0, 2 ** 32), st.integers(1, 40))
def test_beaver_mul_identity(n, seed, size):
    g = np.random.default_rng(seed)
    x, y = rand_ring(g, size), rand_ring(g, size)
    xs, ys = add_shares(n, x, seed), add_shares(n, y, seed + 1)
    out = mpc(n, lambda p: P.beaver_mul(p, xs[p.rank], ys[p.rank]), seed=seed)
    assert np.array_equal(open_add(out), x * y)


@settings(max_examples=15, deadline=None)
@given(st.sampled_from([2, 3]), st.integers(0, 2 ** 32))
def test_beaver_matmul_identity(n, seed):
    g = np.random.default_rng(seed)
    x, y = rand_ring(g, (3, 5)), rand_ring(g, (5, 2))
    xs, ys = add_shares(n, x, seed), add_shares(n, y, seed + 1)
    out = mpc(n, lambda p: P.beaver_matmul(p, xs[p.rank], ys[p.rank]), seed=seed)
    assert np.array_equal(open_add(out), ring_matmul(x, y))


@pytest.mark.parametrize("n", [2, 3])
def test_square_and_and(n, rng):
    x, y = rand_ring(rng, 33), rand_ring(rng, 33)
    xs, ys = add_shares(n, x), add_shares(n, y)
    bx, by = xor_shares(n, x), xor_shares(n, y)
    out = mpc(n, lambda p: (P.square(p, xs[p.rank]), P.beaver_and(p, bx[p.rank], by[p.rank])))
    assert np.array_equal(open_add([o[0] for o in out]), x * x)
    assert np.array_equal(open_xor([o[1] for o in out]), x & y)


@pytest.mark.parametrize("n", [2, 3])
def test_chunked_equals_blocking_bitwise(n, rng):
    x, y = rand_ring(rng, 1000), rand_ring(rng, 1000)
    xs, ys = add_shares(n, x), add_shares(n, y)
    blk = mpc(n, lambda p: P.beaver_mul(p, xs[p.rank], ys[p.rank]))
    chk = mpc(n, lambda p: P.beaver_mul(p, xs[p.rank], ys[p.rank], policy=CHUNKED))
    for a, b in zip(blk, chk):
        assert np.array_equal(a, b)


def test_one_chunk_is_the_blocking_path(rng):
    x = rand_ring(rng, 64)
    xs = add_shares(2, x)
    one = PipelinePolicy(PIPELINED, inner_chunks=1, inner_threshold_bytes=0)

    def prog(policy):
        def run(p):
            out = P.beaver_mul(p, xs[p.rank], xs[p.rank], policy=policy)
            return out, p.comm.collectives, p.now()
        return run

    assert all(np.array_equal(a[0], b[0]) and a[1:] == b[1:]
               for a, b in zip(mpc(2, prog(None)), mpc(2, prog(one))))


def test_below_threshold_is_one_collective(rng):
    x = rand_ring(rng, 100)
    xs = add_shares(2, x)
    pol = PipelinePolicy(PIPELINED, inner_chunks=4)   # 2 MiB threshold

    def run(p):
        P.beaver_mul(p, xs[p.rank], xs[p.rank], policy=pol, tag="small")
        return [e for e in p.comm.trace if e["ev"] == "issue"]

    assert len(mpc(2, run)[0]) == 1


def test_inner_pipeline_issues_all_before_first_wait(rng):
    x = rand_ring(rng, 4000)
    xs = add_shares(2, x)

    def run(p):
        P.beaver_mul(p, xs[p.rank], xs[p.rank], policy=CHUNKED, tag="m")
        return [e["ev"] for e in p.comm.trace]

    evs = mpc(2, run)[0]
    assert evs == ["issue"] * 4 + ["wait"] * 4


def test_chunked_faster_under_latency(rng):
    x = rand_ring(rng, 2 ** 19)       # 4 MiB operand
    xs, ys = xor_shares(2, x), xor_shares(2, x ^ np.uint64(12345))

    def timed(policy):
        def run(p):
            out = P.beaver_and(p, xs[p.rank], ys[p.rank], policy=policy)
            return out, p.now()
        return mpc(2, run)

    blk, chk = timed(None), timed(CHUNKED)
    assert all(np.array_equal(a[0], b[0]) for a, b in zip(blk, chk))
    assert chk[0][1] < blk[0][1]


def test_spk_constants_generator_matches_literals():
    assert P.spk_constants(64) == P.SPK64
    c8 = P.spk_constants(8)
    assert c8.levels == 3 and c8.in_masks[0] == 0x55 and c8.out_masks[2] == 0xF0


@pytest.mark.parametrize("bits", [4, 8])
def test_reduced_width_adder_exhaustive_small(bits):
    c = P.spk_constants(bits)
    vals = np.arange(1 << bits, dtype=np.uint64)
    a, b = np.repeat(vals, 1 << bits), np.tile(vals, 1 << bits)
    sa, sb = xor_shares(2, a, 1), xor_shares(2, b, 2)
    out = mpc(2, lambda p: P.binary_add(p, sa[p.rank], sb[p.rank], consts=c))
    assert np.array_equal(open_xor(out), (a + b) & np.uint64(c.width_mask))


@pytest.mark.parametrize("n", [2, 3])
def test_adder_64bit_random_and_edges(n, rng):
    a = np.concatenate([rand_ring(rng, 2000), np.array([2 ** 64 - 1, 0, 2 ** 63], np.uint64)])
    b = np.concatenate([rand_ring(rng, 2000), np.array([1, 0, 2 ** 63], np.uint64)])
    sa, sb = xor_shares(n, a, 1), xor_shares(n, b, 2)
    out = mpc(n, lambda p: P.binary_add(p, sa[p.rank], sb[p.rank]))
    assert np.array_equal(open_xor(out), a + b)


def test_merged_and_fused_equals_unfused(rng):
    a, b = rand_ring(rng, 5000), rand_ring(rng, 5000)
    sa, sb = xor_shares(2, a, 1), xor_shares(2, b, 2)
    fused = mpc(2, lambda p: P.binary_add(p, sa[p.rank], sb[p.rank], policy=CHUNKED))
    plain = mpc(2, lambda p: P.binary_add(p, sa[p.rank], sb[p.rank], policy=UNFUSED))
    for f, u in zip(fused, plain):
        assert np.array_equal(f, u)


@pytest.mark.parametrize("n", [2, 3])
def test_a2b_msb_less_than(n, rng):
    x = rand_ring(rng, 300)
    y = rand_ring(rng, 300) >> np.uint64(2)
    xs = add_shares(n, x)
    xv = to_signed(x) >> np.int64(2)
    xq = xv.view(np.uint64)
    xqs, ys = add_shares(n, xq, 3), add_shares(n, y, 4)
    out = mpc(n, lambda p: (P.a2b(p, xs[p.rank]), P.msb(p, xs[p.rank]),
                            P.less_than(p, xqs[p.rank], ys[p.rank])))
    assert np.array_equal(open_xor([o[0] for o in out]), x)
    assert np.array_equal(open_xor([o[1] for o in out]), x >> np.uint64(63))
    assert np.array_equal(open_xor([o[2] for o in out]),
                          (xv < to_signed(y)).astype(np.uint64))


@pytest.mark.parametrize("n", [2, 3])
def test_b2a_and_select(n, rng):
    bits = rng.integers(0, 2, 200).astype(np.uint64)
    a, b = rand_ring(rng, 200), rand_ring(rng, 200)
    bs = xor_shares(n, bits)
    as_, bs2 = add_shares(n, a, 5), add_shares(n, b, 6)

    def run(p):
        ba = P.b2a_bit(p, bs[p.rank])
        return ba, P.select(p, ba, as_[p.rank], bs2[p.rank])

    out = mpc(n, run)
    assert np.array_equal(open_add([o[0] for o in out]), bits)
    assert np.array_equal(open_add([o[1] for o in out]), np.where(bits == 1, a, b))


@pytest.mark.parametrize("n,interactive", [(2, False), (2, True), (3, False)])
def test_truncation_within_one_lsb(n, interactive, rng):
    v = rng.integers(-(2 ** 40), 2 ** 40, 5000)
    xs = add_shares(n, v.view(np.uint64))
    out = mpc(n, lambda p: P.truncate_share(p, xs[p.rank], 16, interactive=interactive))
    got = to_signed(open_add(out))
    assert np.abs(got - (v >> 16)).max() <= 1


@pytest.mark.parametrize("n", [2, 3])
def test_mul_fixed(n, rng):
    x, y = rng.uniform(-50, 50, 400), rng.uniform(-50, 50, 400)
    xs, ys = add_shares(n, encode_fixed(x)), add_shares(n, encode_fixed(y))
    out = mpc(n, lambda p: P.mul_fixed(p, xs[p.rank], ys[p.rank]))
    want = (to_signed(encode_fixed(x)) * to_signed(encode_fixed(y))) >> 16
    assert np.abs(to_signed(open_add(out)) - want).max() <= 1


def test_shape_mismatch_raises():
    xs = add_shares(2, np.zeros(3, np.uint64))

    def run(p):
        with pytest.raises(Exception):
            P.beaver_mul(p, xs[p.rank], np.zeros(4, np.uint64))
        return True

    assert all(mpc(2, run))
