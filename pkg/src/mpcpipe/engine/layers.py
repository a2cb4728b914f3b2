"""Per-party layer execution, including both pipeline schemes."""
import math
from functools import partial

import numpy as np

from .. import protocols as P
from ..nonlinear import maxpool2d, relu, softmax_stable
from ..ring import LIMB4, LIMB16, RING_DTYPE, encode_fixed, limb_matmul, ring_matmul
from ..sharing import ARITHMETIC, ProtocolError
from ..transport import SUM
from .im2col import col2out, conv_out_size, im2col, weight_matrix

MATMULS = {"direct": ring_matmul, "limb16": partial(limb_matmul, plan=LIMB16),
           "limb4": partial(limb_matmul, plan=LIMB4)}


def encode_weight(layer, w, scale):
    """Plaintext float weight -> ring operand (conv kernels become matrices)."""
    w = np.asarray(w, np.float64)
    if layer.kind == "conv2d":
        w = weight_matrix(w)
    return encode_fixed(w, scale)


def conv_geometry(layer, x_shape):
    k = layer.params["kernel"]
    s = layer.params.get("stride", 1)
    p = layer.params.get("padding", 0)
    b, _, h, w = x_shape
    return b, conv_out_size(h, k, s, p), conv_out_size(w, k, s, p), \
        {"kernel": k, "stride": s, "padding": p}


def linear_op(layer, x_shape):
    if layer.kind == "conv2d":
        return "conv", conv_geometry(layer, x_shape)[3]
    return "matmul", {}


class InterLayerState:
    """Triples and in-flight weight-metadata reveals staged for upcoming layers."""

    def __init__(self):
        self.staged = {}

    def stage(self, name, triple, handle):
        self.staged[name] = (triple, handle)

    def take(self, name):
        return self.staged.pop(name, (None, None))


def dense_public(party, layer, x, w_plain):
    """Plaintext weights times local shares: no triples, no messages."""
    mm = MATMULS[layer.matmul_path]
    if layer.kind == "conv2d":
        b, ho, wo, params = conv_geometry(layer, x.shape)
        cols = im2col(x, params["kernel"], params["stride"], params["padding"])
        party.charge(cols.size * w_plain.shape[-1])
        return col2out(P.truncate_share(party, mm(cols, w_plain), tag=f"trunc:{layer.name}"),
                       b, ho, wo)
    party.charge(x.size * w_plain.shape[-1])
    return P.truncate_share(party, mm(x, w_plain), tag=f"trunc:{layer.name}")


def dense_private(party, layer, x, w, weights, policy, state, calib):
    """Beaver matmul against secret-shared weights.

    Blocking: one collective opens (x - a, w - b) together. Pipelined: x - a
    goes out first, then the *next* linear layer's w' - b' is put on the
    wire while this layer waits, so that layer finds its weight metadata
    already delivered. A layer with nothing staged (the first one) opens its
    own w - b synchronously.
    """
    comm = party.comm
    name = layer.name
    op, params = linear_op(layer, x.shape)
    t, h_dlt = state.take(name) if policy.pipelined else (None, None)
    if t is None:
        t = party.triples.get(ARITHMETIC, x.shape, w.shape, op, params, key=name)
        party.mark("triple", name)
    if t.a.shape != x.shape or t.b.shape != w.shape:
        raise ProtocolError(f"staged triple for {name} does not match input {x.shape}; "
                            "recalibrate")
    a, b, c = t.consume()
    eps = x - a
    party.charge(eps.size)
    if not policy.pipelined:
        dlt = w - b
        party.charge(dlt.size)
        opened = comm.wait(comm.reveal_async(np.concatenate([eps.ravel(), dlt.ravel()]), SUM,
                                             tag=f"lin:{name}"))
        eps = opened[:eps.size].reshape(eps.shape)
        dlt = opened[eps.size:].reshape(dlt.shape)
    else:
        h_eps = comm.reveal_async(eps, SUM, tag=f"eps:{name}")
        if h_dlt is None:
            party.charge(w.size)
            h_dlt = comm.reveal_async(w - b, SUM, tag=f"delta-sync:{name}")
        nxt = calib.next_linear.get(name) if calib is not None else None
        if nxt is not None:
            dims = calib.linear[nxt]
            t1 = party.triples.get(ARITHMETIC, dims.x_shape, dims.w_shape, dims.op, dims.params,
                                   key=nxt)
            party.mark("triple", nxt)
            w1 = weights[nxt]
            party.charge(w1.size)
            state.stage(nxt, t1, comm.reveal_async(w1 - t1.b, SUM, tag=f"delta:{nxt}"))
        dlt = comm.wait(h_dlt)
        eps = comm.wait(h_eps)
    party.mark("combine", name)
    z = P.combine_matmul(party, op, params, a, c, b, eps, dlt, MATMULS[layer.matmul_path])
    z = P.truncate_share(party, z, tag=f"trunc:{name}")
    if layer.kind == "conv2d":
        bsz, ho, wo, _ = conv_geometry(layer, x.shape)
        z = col2out(z, bsz, ho, wo)
    return z


def inner_matmul(party, x, y, policy, tag="attn"):
    """Beaver matmul of two input-dependent shares with row chunking.

    Above the size threshold the masked right operand and each row block of
    the masked left operand travel as separate collectives, all issued
    before the first wait; row block i is combined while later blocks are
    in flight. The result equals the unchunked product exactly.
    """
    comm = party.comm
    t = party.triples.get(ARITHMETIC, x.shape, y.shape, "matmul")
    a, b, c = t.consume()
    rows = x.shape[-2]
    n = policy.chunks_for(8 * max(x.size, y.size), rows)
    eps_all = x - a
    dlt = y - b
    party.charge(eps_all.size + dlt.size)
    if n == 1:
        opened = comm.wait(comm.reveal_async(np.concatenate([eps_all.ravel(), dlt.ravel()]),
                                             SUM, tag=tag))
        eps = opened[:eps_all.size].reshape(eps_all.shape)
        dlt = opened[eps_all.size:].reshape(dlt.shape)
        return P.combine_matmul(party, "matmul", {}, a, c, b, eps, dlt)
    edges = np.linspace(0, rows, n + 1).astype(int)
    blocks = [slice(int(s), int(e)) for s, e in zip(edges[:-1], edges[1:])]
    h_dlt = comm.reveal_async(dlt, SUM, tag=f"{tag}/d")
    pending = [(sl, comm.reveal_async(eps_all[..., sl, :], SUM, tag=f"{tag}/c{i}"))
               for i, sl in enumerate(blocks)]
    dlt = comm.wait(h_dlt)
    out = np.empty(c.shape, RING_DTYPE)
    for sl, h in pending:
        eps = comm.wait(h)
        out[..., sl, :] = P.combine_matmul(party, "matmul", {}, a[..., sl, :], c[..., sl, :],
                                           b, eps, dlt)
    return out


def attention(party, q, k, v, heads, policy, approx, tag="attn"):
    """Multi-head Softmax(Q K^T / s) V with s = sqrt(head dim)."""
    bsz, seq, dim = q.shape
    if dim % heads:
        raise ValueError(f"model dim {dim} not divisible by {heads} heads")
    dh = dim // heads

    def split(t):
        return t.reshape(bsz, seq, heads, dh).transpose(0, 2, 1, 3)

    qh, kh, vh = split(q), split(k), split(v)
    inv_s = encode_fixed(1.0 / math.sqrt(dh), party.scale)
    with party.category("Attention"):
        scores = P.truncate_share(party, inner_matmul(party, qh, kh.swapaxes(-1, -2).copy(),
                                                      policy, tag=f"{tag}:qk"),
                                  tag=f"{tag}:qk:trunc")
        scores = P.truncate_share(party, scores * inv_s, tag=f"{tag}:scale")
        party.charge(scores.size)
    with party.category("Softmax"):
        probs = softmax_stable(party, scores, -1, approx, policy, tag=f"{tag}:softmax")
    with party.category("Attention"):
        out = P.truncate_share(party, inner_matmul(party, probs, vh, policy, tag=f"{tag}:pv"),
                               tag=f"{tag}:pv:trunc")
    return out.transpose(0, 2, 1, 3).reshape(bsz, seq, dim)


def nonlinear_layer(party, layer, x, policy, approx):
    if layer.kind == "relu":
        return relu(party, x, policy, tag=layer.name)
    if layer.kind == "softmax":
        return softmax_stable(party, x, layer.params.get("axis", -1), approx, policy,
                              tag=layer.name)
    if layer.kind == "maxpool":
        window = layer.params.get("window", 2)
        return maxpool2d(party, x, window, layer.params.get("stride", window), policy,
                         tag=layer.name)
    raise ValueError(f"not a nonlinear layer: {layer.kind}")
