"""Nonlinear layers over additive shares: exp, reciprocal, softmax, ReLU, max, maxpool."""
from dataclasses import dataclass

import numpy as np

from . import protocols as P
from .ring import RING_DTYPE, encode_fixed

U64 = np.uint64


@dataclass(frozen=True)
class ApproxConfig:
    """Iteration counts and the reciprocal's starting guess y0 = a*exp(b - x) + c.

    The first ``exp_iterations - exp_coarse_steps`` squarings carry
    ``exp_extra_bits`` more fraction bits: their truncation noise is
    amplified 2^(remaining squarings) times, while the late squarings hold
    values too large for the wider scale.
    """

    exp_iterations: int = 8
    exp_extra_bits: int = 8
    exp_coarse_steps: int = 2
    recip_iterations: int = 10
    recip_init: tuple = (3.0, 0.5, 0.003)

    def __post_init__(self):
        if self.exp_iterations < 1 or self.recip_iterations < 1:
            raise ValueError("iteration counts must be >= 1")
        if self.exp_extra_bits < 0 or self.exp_coarse_steps < 0:
            raise ValueError("exp precision settings must be >= 0")

    @property
    def exp_fine_steps(self):
        return max(0, self.exp_iterations - self.exp_coarse_steps)


DEFAULT_APPROX = ApproxConfig()


def exp_approx(party, x, cfg=DEFAULT_APPROX, policy=None, tag="exp"):
    """(1 + x / 2^n) squared n times."""
    n = cfg.exp_iterations
    extra = cfg.exp_extra_bits if cfg.exp_fine_steps else 0
    wide = party.scale + extra
    x = np.asarray(x, RING_DTYPE)
    if n > extra:
        y = P.truncate_share(party, x, n - extra, tag=tag + ":pre")
    else:
        y = x << U64(extra - n)
    y = P.add_public(party, y, encode_fixed(1.0, wide))
    for i in range(n):
        if i == cfg.exp_fine_steps and extra:
            y = P.truncate_share(party, y, extra, tag=tag + ":narrow")
        fine = i < cfg.exp_fine_steps and extra > 0
        y = P.truncate_share(party, P.square(party, y, policy=policy, tag=f"{tag}:sq{i}"),
                             wide if fine else party.scale, tag=f"{tag}:sq{i}:trunc",
                             interactive=fine)
    if cfg.exp_fine_steps == n and extra:
        y = P.truncate_share(party, y, extra, tag=tag + ":narrow")
    return y


def reciprocal_approx(party, x, cfg=DEFAULT_APPROX, policy=None, tag="recip"):
    """Newton iterations y <- y (2 - x y) from y0 = 3 exp(0.5 - x) + 0.003; x > 0."""
    x = np.asarray(x, RING_DTYPE)
    scale = party.scale
    mult, shift, bias = cfg.recip_init
    shifted = P.add_public(party, -x, encode_fixed(shift, scale))
    y = exp_approx(party, shifted, cfg, policy, tag=tag + ":y0")
    y = P.add_public(party, y * U64(int(mult)), encode_fixed(bias, scale))
    two = encode_fixed(2.0, scale)
    for i in range(cfg.recip_iterations):
        xy = P.mul_fixed(party, x, y, policy=policy, tag=f"{tag}:xy{i}")
        y = P.mul_fixed(party, y, P.add_public(party, -xy, two), policy=policy,
                        tag=f"{tag}:yy{i}")
    return y


def relu(party, x, policy=None, tag="relu"):
    """x * (1 - msb(x)), exact up to nothing: the bit is an integer."""
    x = np.asarray(x, RING_DTYPE)
    sign = P.b2a_bit(party, P.msb(party, x, policy, tag=tag + ":msb"), policy, tag=tag + ":b2a")
    keep = P.add_public(party, -sign, U64(1))
    return P.beaver_mul(party, x, keep, policy=policy, tag=tag + ":mask")


def max_reduce_log(party, x, axis=-1, policy=None, tag="max"):
    """Tournament maximum along ``axis`` in ceil(log2 L) comparison rounds."""
    v = np.moveaxis(np.asarray(x, RING_DTYPE), axis, -1)
    if v.shape[-1] < 1:
        raise ValueError("cannot take the maximum of an empty axis")
    rnd = 0
    while v.shape[-1] > 1:
        half = v.shape[-1] // 2
        left, right = v[..., 0:2 * half:2], v[..., 1:2 * half:2]
        tail = v[..., 2 * half:]
        bit = P.b2a_bit(party, P.less_than(party, left, right, policy, tag=f"{tag}{rnd}:lt"),
                        policy, tag=f"{tag}{rnd}:b2a")
        best = P.select(party, bit, right, left, policy, tag=f"{tag}{rnd}:sel")
        v = np.concatenate([best, tail], axis=-1)
        rnd += 1
    return v[..., 0]


def softmax_stable(party, x, axis=-1, cfg=DEFAULT_APPROX, policy=None, tag="softmax"):
    """exp(x - max) / sum(exp(x - max)) with division by reciprocal_approx."""
    x = np.asarray(x, RING_DTYPE)
    m = np.expand_dims(max_reduce_log(party, x, axis, policy, tag=tag + ":max"), axis)
    e = exp_approx(party, x - m, cfg, policy, tag=tag + ":exp")
    total = e.sum(axis=axis, keepdims=True, dtype=RING_DTYPE)
    party.charge(e.size)
    inv = reciprocal_approx(party, total, cfg, policy, tag=tag + ":recip")
    return P.mul_fixed(party, e, np.broadcast_to(inv, e.shape).copy(), policy=policy,
                       tag=tag + ":norm")


def pool_windows(x, window, stride):
    """(B, C, H, W) -> (B, C, Ho, Wo, window*window) gathered windows."""
    b, c, h, w = x.shape
    ho = (h - window) // stride + 1
    wo = (w - window) // stride + 1
    if ho < 1 or wo < 1:
        raise ValueError(f"window {window} does not fit spatial size {h}x{w}")
    parts = [x[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride]
             for i in range(window) for j in range(window)]
    return np.stack(parts, axis=-1)


def maxpool2d(party, x, window=2, stride=None, policy=None, tag="maxpool"):
    stride = window if stride is None else stride
    x = np.asarray(x, RING_DTYPE)
    if x.ndim != 4:
        raise ValueError(f"maxpool2d expects (B, C, H, W), got {x.shape}")
    return max_reduce_log(party, pool_windows(x, window, stride), -1, policy, tag=tag)
