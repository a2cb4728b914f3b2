"""Plaintext fixed-point forward pass mirroring the secure computation chain."""
import math

import numpy as np

from .. import replica as R
from .im2col import col2out, conv_out_size, im2col, weight_matrix


def replica_forward(graph, x):
    """Encoded int64 output of ``graph`` on plaintext input ``x``."""
    s = graph.scale_bits
    env = {graph.input_name: R.enc(x, s)}
    for layer in graph.layers:
        v = env[layer.inputs[0]]
        kind = layer.kind
        if kind == "dense":
            out = R.matmul(v, R.enc(graph.weights[layer.name], s), s)
        elif kind == "conv2d":
            p = layer.params
            k, st, pad = p["kernel"], p.get("stride", 1), p.get("padding", 0)
            b, _, h, w = v.shape
            cols = im2col(v, k, st, pad)
            z = R.matmul(cols, R.enc(weight_matrix(np.asarray(graph.weights[layer.name])), s), s)
            out = col2out(z, b, conv_out_size(h, k, st, pad), conv_out_size(w, k, st, pad))
        elif kind == "relu":
            out = R.relu(v)
        elif kind == "softmax":
            out = R.softmax(v, layer.params.get("axis", -1), graph.approx, s)
        elif kind == "maxpool":
            win = layer.params.get("window", 2)
            out = R.maxpool2d(v, win, layer.params.get("stride", win))
        elif kind == "flatten":
            out = v.reshape(v.shape[0], -1)
        elif kind == "attention":
            out = _attention(*(env[n] for n in layer.inputs), layer.params["heads"], graph)
        else:
            raise ValueError(kind)
        env[layer.name] = out
    return env[graph.output_name]


def _attention(q, k, v, heads, graph):
    s = graph.scale_bits
    b, n, d = q.shape
    dh = d // heads

    def split(t):
        return t.reshape(b, n, heads, dh).transpose(0, 2, 1, 3)

    qh, kh, vh = split(q), split(k), split(v)
    scores = R.matmul(qh, kh.swapaxes(-1, -2), s)
    scores = R.mul(scores, R.enc(1.0 / math.sqrt(dh), s), s)
    probs = R.softmax(scores, -1, graph.approx, s)
    out = R.matmul(probs, vh, s)
    return out.transpose(0, 2, 1, 3).reshape(b, n, d)


def float_forward(graph, x):
    """Floating-point forward with exact nonlinearities, for sanity checks."""
    env = {graph.input_name: np.asarray(x, np.float64)}
    for layer in graph.layers:
        v = env[layer.inputs[0]]
        kind = layer.kind
        if kind == "dense":
            out = v @ graph.weights[layer.name]
        elif kind == "conv2d":
            p = layer.params
            k, st, pad = p["kernel"], p.get("stride", 1), p.get("padding", 0)
            b, _, h, w = v.shape
            z = im2col(v, k, st, pad) @ weight_matrix(np.asarray(graph.weights[layer.name]))
            out = col2out(z, b, conv_out_size(h, k, st, pad), conv_out_size(w, k, st, pad))
        elif kind == "relu":
            out = np.maximum(v, 0)
        elif kind == "softmax":
            e = np.exp(v - v.max(-1, keepdims=True))
            out = e / e.sum(-1, keepdims=True)
        elif kind == "maxpool":
            win = layer.params.get("window", 2)
            out = R.pool_windows(v, win, layer.params.get("stride", win)).max(-1)
        elif kind == "flatten":
            out = v.reshape(v.shape[0], -1)
        else:
            q, kk, vv = (env[n] for n in layer.inputs)
            b, n, d = q.shape
            h = layer.params["heads"]
            dh = d // h
            sp = [t.reshape(b, n, h, dh).transpose(0, 2, 1, 3) for t in (q, kk, vv)]
            sc = sp[0] @ sp[1].swapaxes(-1, -2) / math.sqrt(dh)
            e = np.exp(sc - sc.max(-1, keepdims=True))
            out = (e / e.sum(-1, keepdims=True) @ sp[2]).transpose(0, 2, 1, 3).reshape(b, n, d)
        env[layer.name] = out
    return env[graph.output_name]
