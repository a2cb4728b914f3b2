"""Beaver-triple protocols over one party's local shares.

Every function here runs on a single party's protocol thread and takes the
:class:`~mpcpipe.runtime.Party` first; shares are plain uint64 arrays.
Arithmetic products come back *untruncated*; callers holding fixed-point
operands apply :func:`truncate_share`.
"""
from dataclasses import dataclass

import numpy as np

from .policy import BLOCKING_POLICY
from .ring import RING_DTYPE, ring_matmul
from .sharing import ARITHMETIC, BINARY, SQUARE, TRUNC, ProtocolError
from .transport import SUM, XOR

U64 = np.uint64
ALL_ONES = U64(0xFFFFFFFFFFFFFFFF)


def add_public(party, x, value):
    """Add a public ring value; only party 0 contributes it."""
    x = np.asarray(x, RING_DTYPE)
    if party.rank == 0:
        return x + np.asarray(value, RING_DTYPE)
    return x.copy()


def _splits(length, nchunks):
    edges = np.linspace(0, length, nchunks + 1).astype(int)
    return [slice(int(a), int(b)) for a, b in zip(edges[:-1], edges[1:])]


def _beaver_core(party, t, op, x, y, nchunks, tag, pre=None, post=None):
    """Elementwise Beaver evaluation, optionally split along the last axis.

    ``op`` is ``"mul"``, ``"and"`` or ``"square"``. With more than one chunk
    every chunk's masked operands are put on the wire first and results are
    then collected chunk by chunk, so chunk i is combined while later chunks
    are still in transit. ``pre(sl)`` may produce the operand chunk lazily
    and ``post(sl, z)`` may transform each result chunk; both run in the
    compute stage of their chunk.
    """
    a, b, c = t.consume()
    comm = party.comm
    length = c.shape[-1] if c.ndim else 1
    binary = op == "and"
    kind = XOR if binary else SUM
    slices = _splits(length, nchunks) if nchunks > 1 else [slice(None)]

    pending = []
    for i, sl in enumerate(slices):
        if pre is not None:
            xs, ys = pre(sl)
        else:
            xs = x[..., sl]
            ys = None if y is None else y[..., sl]
        a_s = a[..., sl]
        if binary:
            eps = xs ^ a_s
            dlt = ys ^ b[..., sl]
        else:
            eps = xs - a_s
            dlt = None if op == "square" else ys - b[..., sl]
        payload = eps.ravel() if dlt is None else np.concatenate([eps.ravel(), dlt.ravel()])
        party.charge(payload.size)
        h = comm.reveal_async(payload, kind, tag=f"{tag}/c{i}" if nchunks > 1 else tag)
        pending.append((sl, h, eps.shape, None if dlt is None else dlt.shape))

    out = np.empty(c.shape, RING_DTYPE)
    for sl, h, eshape, dshape in pending:
        opened = comm.wait(h)
        ne = int(np.prod(eshape, dtype=np.int64))
        eps = opened[:ne].reshape(eshape)
        a_s, c_s = a[..., sl], c[..., sl]
        if op == "square":
            z = c_s + (eps * a_s << U64(1))
            if party.rank == 0:
                z += eps * eps
        else:
            dlt = opened[ne:].reshape(dshape)
            b_s = b[..., sl]
            if binary:
                z = c_s ^ (eps & b_s) ^ (a_s & dlt)
                if party.rank == 0:
                    z ^= eps & dlt
            else:
                z = c_s + eps * b_s + a_s * dlt
                if party.rank == 0:
                    z += eps * dlt
        party.charge(6 * z.size)
        if post is not None:
            z = post(sl, z)
        out[..., sl] = z
    return out


def _nchunks(party, policy, x_shape, y_shape=None):
    policy = policy or BLOCKING_POLICY
    big = max(int(np.prod(x_shape, dtype=np.int64)),
              int(np.prod(y_shape, dtype=np.int64)) if y_shape is not None else 0)
    length = (y_shape or x_shape)[-1] if len(y_shape or x_shape) else 1
    return policy.chunks_for(8 * big, length)


def beaver_mul(party, x, y, triple=None, policy=None, tag="mul"):
    """Elementwise product of two additive shares (no truncation)."""
    x = np.asarray(x, RING_DTYPE)
    y = np.asarray(y, RING_DTYPE)
    if x.shape != y.shape:
        raise ProtocolError(f"beaver_mul shape mismatch {x.shape} vs {y.shape}")
    shape = x.shape
    xf, yf = x.reshape(-1), y.reshape(-1)
    t = triple or party.triples.get(ARITHMETIC, xf.shape, yf.shape, "mul")
    if t.kind != ARITHMETIC or t.a.shape != xf.shape:
        raise ProtocolError("beaver_mul needs an arithmetic triple of matching shape")
    n = _nchunks(party, policy, xf.shape)
    return _beaver_core(party, t, "mul", xf, yf, n, tag).reshape(shape)


def square(party, x, triple=None, policy=None, tag="square"):
    """x*x with a square pair: only x - a is revealed."""
    x = np.asarray(x, RING_DTYPE)
    xf = x.reshape(-1)
    t = triple or party.triples.get(SQUARE, xf.shape)
    n = _nchunks(party, policy, xf.shape)
    return _beaver_core(party, t, "square", xf, None, n, tag).reshape(x.shape)


def beaver_and(party, x, y, triple=None, policy=None, tag="and"):
    """Bitwise AND of two XOR shares. ``x`` may broadcast over leading axes of ``y``."""
    x = np.asarray(x, RING_DTYPE)
    y = np.asarray(y, RING_DTYPE)
    if x.shape != y.shape[y.ndim - x.ndim:]:
        raise ProtocolError(f"beaver_and shape mismatch {x.shape} vs {y.shape}")
    if x.ndim == 0:
        x, y = x.reshape(1), y.reshape(1)
    t = triple or party.triples.get(BINARY, x.shape, y.shape, "mul")
    if t.kind != BINARY:
        raise ProtocolError("beaver_and needs a binary triple")
    n = _nchunks(party, policy, x.shape, y.shape)
    return _beaver_core(party, t, "and", x, y, n, tag)


def beaver_matmul(party, x, y, triple=None, op="matmul", params=None, matmul=ring_matmul,
                  tag="matmul"):
    """Blocking Beaver matmul (or conv lowered to matmul): one collective."""
    x = np.asarray(x, RING_DTYPE)
    y = np.asarray(y, RING_DTYPE)
    t = triple or party.triples.get(ARITHMETIC, x.shape, y.shape, op, params)
    a, b, c = t.consume()
    if a.shape != x.shape or b.shape != y.shape:
        raise ProtocolError(f"triple shapes {a.shape},{b.shape} do not fit {x.shape},{y.shape}")
    eps = x - a
    dlt = y - b
    party.charge(eps.size + dlt.size)
    h = party.comm.reveal_async(np.concatenate([eps.ravel(), dlt.ravel()]), SUM, tag=tag)
    opened = party.comm.wait(h)
    eps = opened[:eps.size].reshape(eps.shape)
    dlt = opened[eps.size:].reshape(dlt.shape)
    return combine_matmul(party, op, t.params, a, c, b, eps, dlt, matmul)


def lower(op, params, x):
    if op == "conv":
        from .engine.im2col import im2col
        return im2col(x, params["kernel"], params["stride"], params["padding"])
    return x


def combine_matmul(party, op, params, a, c, b, eps, dlt, matmul=ring_matmul):
    """Final Beaver combination for matrix products: c + eps.b + a.dlt (+ eps.dlt)."""
    eps_l = lower(op, params, eps)
    a_l = lower(op, params, a)
    z = c + matmul(eps_l, b) + matmul(a_l, dlt)
    if party.rank == 0:
        z += matmul(eps_l, dlt)
    m, k = eps_l.shape[-2], eps_l.shape[-1]
    party.charge(3 * int(np.prod(eps_l.shape[:-2], dtype=np.int64)) * m * k * dlt.shape[-1],
                 kernels=3)
    return z


def truncate_share(party, x, bits=None, tag="trunc", interactive=False):
    """Divide a shared fixed-point value by 2^bits.

    Two parties shift their shares locally (party 0 rounding down, party 1
    up); this fails (by a multiple of 2^(64-bits)) with probability about
    |x| / 2^64. With more parties the
    shares' wrap-around breaks local shifting altogether, so a dealer
    pair (r, r >> bits, msb(r)) masks x + 2^62 for one reveal; the wrap of
    the masked sum is recovered from msb(r) and the public msb of the
    opened value. ``interactive`` forces that path for two parties too,
    for products too large for local shifting. Both paths are off by at
    most one LSB; the interactive one needs |x| < 2^62.
    """
    bits = party.scale if bits is None else bits
    x = np.asarray(x, RING_DTYPE)
    if bits == 0:
        return x.copy()
    party.charge(x.size)
    if party.n == 2 and not interactive:
        # party 1 rounds up: exact whenever the low bits of x are zero
        if party.rank == 0:
            return (x.view(np.int64) >> np.int64(bits)).view(RING_DTYPE)
        return -((-x).view(np.int64) >> np.int64(bits)).view(RING_DTYPE)
    t = party.triples.get(TRUNC, x.shape, params={"shift": bits})
    r, r_hi, r_msb = t.consume()
    offset = U64(1 << 62)
    masked = add_public(party, x, offset) + r
    opened = party.comm.wait(party.comm.reveal_async(masked, SUM, tag=tag))
    no_wrap_side = U64(1) - (opened >> U64(63))
    out = (no_wrap_side * r_msb << U64(64 - bits)) - r_hi
    if party.rank == 0:
        out += (opened >> U64(bits)) - U64(1 << (62 - bits))
    party.charge(4 * x.size)
    return out


def mul_fixed(party, x, y, policy=None, tag="mulf"):
    return truncate_share(party, beaver_mul(party, x, y, policy=policy, tag=tag),
                          tag=tag + ":trunc")


def square_fixed(party, x, policy=None, tag="sq"):
    return truncate_share(party, square(party, x, policy=policy, tag=tag), tag=tag + ":trunc")


# ------------------------------------------------------------------- SPK adder

@dataclass(frozen=True)
class SpkConstants:
    """Masks and spreading multipliers of a log-depth carry-prefix network.

    At level i, ``in_masks[i]`` selects the top bit of the low half of every
    2^(i+1)-bit block, ``multipliers[i]`` copies that bit over the block's
    high half, and ``out_masks[i]`` (= in_mask * multiplier) marks that high
    half.
    """

    bits: int
    in_masks: tuple
    out_masks: tuple
    multipliers: tuple

    @property
    def levels(self):
        return len(self.in_masks)

    @property
    def width_mask(self):
        return (1 << self.bits) - 1


def spk_constants(bits=64):
    if bits < 2 or bits & (bits - 1) or bits > 64:
        raise ValueError("adder width must be a power of two in [2, 64]")
    levels = bits.bit_length() - 1
    width = (1 << bits) - 1
    ins, outs, mults = [], [], []
    for i in range(levels):
        block = 1 << (i + 1)
        mask = sum(1 << p for p in range(bits) if p % block == (1 << i) - 1)
        mult = (1 << ((1 << i) + 1)) - 2
        ins.append(mask)
        mults.append(mult)
        outs.append((mask * mult) & width)
    return SpkConstants(bits, tuple(ins), tuple(outs), tuple(mults))


SPK64 = SpkConstants(
    bits=64,
    in_masks=(0x5555555555555555, 0x2222222222222222, 0x0808080808080808,
              0x0080008000800080, 0x0000800000008000, 0x0000000080000000),
    out_masks=(0xAAAAAAAAAAAAAAAA, 0xCCCCCCCCCCCCCCCC, 0xF0F0F0F0F0F0F0F0,
               0xFF00FF00FF00FF00, 0xFFFF0000FFFF0000, 0xFFFFFFFF00000000),
    multipliers=(2, 6, 30, 510, 131070, 8589934590),
)


def _level_consts(consts, level):
    return (U64(consts.in_masks[level]), U64(consts.out_masks[level]),
            U64(consts.multipliers[level]), U64(consts.out_masks[level]) ^ ALL_ONES)


def spk_pre(sp, in_mask, out_mask, mult):
    """Local constant logic of one level: (P & out_mask, (SP & in_mask) * mult)."""
    return sp[1] & out_mask, (sp & in_mask) * mult


def spk_post(sp, update, not_out):
    out = sp.copy()
    out[1] &= not_out
    out ^= update
    return out


def merged_and(party, sp, level, consts=SPK64, triple=None, policy=None, tag="spk"):
    """One SPK level on the stacked (S, P) XOR shares.

    With ``policy.merged_and`` the constant-mask logic before and the state
    update after the Beaver AND run per chunk inside the AND's own stages;
    otherwise they run on the whole tensor around a plain AND. Both produce
    identical shares.
    """
    policy = policy or BLOCKING_POLICY
    in_mask, out_mask, mult, not_out = _level_consts(consts, level)
    m = sp.shape[-1]
    t = triple or party.triples.get(BINARY, (m,), (2, m), "mul")
    n = _nchunks(party, policy, (m,), (2, m))
    tag = f"{tag}{level}"
    if policy.merged_and:
        def pre(sl):
            party.charge(8 * len(range(*sl.indices(m))))
            return spk_pre(sp[..., sl], in_mask, out_mask, mult)

        def post(sl, update):
            party.charge(3 * update.size)
            return spk_post(sp[..., sl], update, not_out)

        return _beaver_core(party, t, "and", None, None, n, tag, pre=pre, post=post)
    p0, s1p1 = spk_pre(sp, in_mask, out_mask, mult)
    party.charge(4 * m, kernels=3)
    update = _beaver_core(party, t, "and", p0, s1p1, n, tag)
    party.charge(3 * update.size, kernels=2)
    return spk_post(sp, update, not_out)


def binary_add(party, a, b, policy=None, consts=SPK64, tag="add"):
    """XOR shares of (A + B) mod 2^bits from XOR shares of A and B."""
    a = np.asarray(a, RING_DTYPE)
    b = np.asarray(b, RING_DTYPE)
    if a.shape != b.shape:
        raise ProtocolError(f"binary_add shape mismatch {a.shape} vs {b.shape}")
    shape = a.shape
    a, b = a.reshape(-1), b.reshape(-1)
    width = U64(consts.width_mask)
    s = beaver_and(party, a, b, policy=policy, tag=tag + ":s")
    p = a ^ b
    sp = np.stack([s, p])
    party.charge(3 * a.size, kernels=2)
    for level in range(consts.levels):
        sp = merged_and(party, sp, level, consts, policy=policy, tag=tag + ":spk")
    out = (p ^ (sp[0] << U64(1))) & width
    party.charge(3 * a.size, kernels=3)
    return out.reshape(shape)


# ----------------------------------------------------------- conversions

def exchange_pointwise(party, payloads, shape, tag="x"):
    """Send ``payloads[j]`` to every peer j; return what each peer sent us."""
    comm = party.comm
    recvs = {p: comm.recv_async(p, shape, tag=f"{tag}<{p}") for p in comm.peers()}
    for p in comm.peers():
        comm.send_async(p, payloads[p], tag=f"{tag}>{p}")
    return {p: comm.wait(h) for p, h in recvs.items()}


def a2b(party, x, policy=None, consts=SPK64, tag="a2b"):
    """Additive -> XOR sharing: reshare every additive share, then add them
    up with the binary adder (n - 1 adder passes)."""
    x = np.asarray(x, RING_DTYPE)
    shape = x.shape
    flat = x.reshape(-1) & U64(consts.width_mask)
    pieces = [party.rng.integers(0, 1 << 64, size=flat.size, dtype=RING_DTYPE)
              for _ in range(party.n - 1)]
    mine = flat.copy()
    for piece in pieces:
        mine ^= piece
    mine &= U64(consts.width_mask)
    outgoing = {}
    it = iter(pieces)
    for p in range(party.n):
        if p != party.rank:
            outgoing[p] = next(it) & U64(consts.width_mask)
    party.charge(party.n * flat.size)
    received = exchange_pointwise(party, outgoing, flat.shape, tag=tag)
    received[party.rank] = mine
    acc = received[0]
    for j in range(1, party.n):
        acc = binary_add(party, acc, received[j], policy=policy, consts=consts,
                         tag=f"{tag}:add{j}")
    return acc.reshape(shape)


def msb(party, x, policy=None, tag="msb"):
    """XOR-shared sign bit (bit 63) of an additive share, in bit position 0."""
    bits = a2b(party, x, policy=policy, tag=tag)
    return (bits >> U64(63)) & U64(1)


def less_than(party, x, y, policy=None, tag="lt"):
    return msb(party, np.asarray(x, RING_DTYPE) - np.asarray(y, RING_DTYPE), policy, tag)


def b2a_bit(party, bit, policy=None, tag="b2a"):
    """Additive 0/1 from an XOR-shared bit: fold u xor v = u + v - 2uv over the
    parties' arithmetic lifts (n - 1 Beaver products, scale 0)."""
    bit = np.asarray(bit, RING_DTYPE) & U64(1)
    zero = np.zeros_like(bit)
    acc = bit.copy() if party.rank == 0 else zero.copy()
    for j in range(1, party.n):
        lift = bit if party.rank == j else zero
        prod = beaver_mul(party, acc, lift, policy=policy, tag=f"{tag}{j}")
        acc = acc + lift - (prod << U64(1))
    return acc


def select(party, bit_a, if_one, if_zero, policy=None, tag="sel"):
    """bit ? if_one : if_zero for an additive 0/1 ``bit_a`` (no truncation)."""
    if_one = np.asarray(if_one, RING_DTYPE)
    if_zero = np.asarray(if_zero, RING_DTYPE)
    return if_zero + beaver_mul(party, bit_a, if_one - if_zero, policy=policy, tag=tag)
