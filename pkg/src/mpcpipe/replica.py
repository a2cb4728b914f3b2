"""Single-party plaintext replica of the fixed-point computation chain.

Works on encoded int64 values with exact floor truncation; the MPC paths
must match it up to probabilistic-truncation LSB noise.
"""
import numpy as np

from .nonlinear import DEFAULT_APPROX, pool_windows
from .ring import encode_fixed, to_signed


def enc(x, scale=16):
    return to_signed(encode_fixed(np.asarray(x, np.float64), scale))


def trunc(v, bits):
    return v >> np.int64(bits)


def mul(a, b, scale=16):
    return trunc(a * b, scale)


def matmul(a, b, scale=16):
    return trunc(np.matmul(a, b), scale)


def exp(v, cfg=DEFAULT_APPROX, scale=16):
    n = cfg.exp_iterations
    fine = cfg.exp_fine_steps
    extra = cfg.exp_extra_bits if fine else 0
    wide = scale + extra
    y = trunc(v, n - extra) if n > extra else v << np.int64(extra - n)
    y = y + enc(1.0, wide)
    for i in range(n):
        if i == fine and extra:
            y = trunc(y, extra)
        y = mul(y, y, wide if i < fine else scale)
    if fine == n and extra:
        y = trunc(y, extra)
    return y


def reciprocal(v, cfg=DEFAULT_APPROX, scale=16):
    mult, shift, bias = cfg.recip_init
    y = exp(enc(shift, scale) - v, cfg, scale) * int(mult) + enc(bias, scale)
    two = enc(2.0, scale)
    for _ in range(cfg.recip_iterations):
        y = mul(y, two - mul(v, y, scale), scale)
    return y


def relu(v):
    return np.where(v < 0, 0, v)


def softmax(v, axis=-1, cfg=DEFAULT_APPROX, scale=16):
    m = v.max(axis=axis, keepdims=True)
    e = exp(v - m, cfg, scale)
    inv = reciprocal(e.sum(axis=axis, keepdims=True), cfg, scale)
    return mul(e, inv, scale)


def maxpool2d(v, window=2, stride=None):
    stride = window if stride is None else stride
    return pool_windows(v, window, stride).max(axis=-1)
