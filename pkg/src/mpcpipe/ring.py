"""Arithmetic over the ring Z_{2^64} with a fixed-point view.

Ring tensors are plain ``numpy.uint64`` arrays. Addition, subtraction and
multiplication wrap modulo 2^64 exactly as numpy's unsigned integer ops do;
values >= 2^63 are read as negatives when a signed view is needed.
"""
from dataclasses import dataclass

import numpy as np

RING_BITS = 64
DEFAULT_SCALE = 16
RING_DTYPE = np.uint64

_MASK64 = (1 << 64) - 1


class RangeError(ValueError):
    """A real value does not fit the fixed-point range."""


class BudgetError(ValueError):
    """Inner dimension exceeds the accumulation budget of a limb plan."""


def as_ring(x):
    """Coerce ints / int arrays into a uint64 ring tensor (wrapping)."""
    if isinstance(x, np.ndarray) and x.dtype == RING_DTYPE:
        return x
    arr = np.asarray(x)
    if arr.dtype == object or (arr.dtype.kind in "iu" and arr.dtype.itemsize > 8):
        return np.vectorize(lambda v: int(v) & _MASK64, otypes=[RING_DTYPE])(arr)
    if arr.dtype.kind == "i":
        return arr.astype(np.int64).view(RING_DTYPE)
    if arr.dtype.kind in "ub":
        return arr.astype(RING_DTYPE)
    raise TypeError(f"cannot interpret dtype {arr.dtype} as ring elements")


def to_signed(x):
    """Two's-complement signed view of a ring tensor."""
    return np.asarray(x, dtype=RING_DTYPE).view(np.int64)


def encode_fixed(x, scale_bits=DEFAULT_SCALE):
    """Encode real value(s) as round(x * 2^scale_bits) mod 2^64."""
    arr = np.asarray(x, dtype=np.float64)
    limit = 2.0 ** (63 - scale_bits)
    if not np.all(np.isfinite(arr)) or np.any(np.abs(arr) >= limit):
        raise RangeError(f"value outside (-2^{63 - scale_bits}, 2^{63 - scale_bits})")
    scaled = np.rint(arr * float(1 << scale_bits)).astype(np.int64)
    out = scaled.view(RING_DTYPE)
    return out if out.ndim else RING_DTYPE(out[()])


def decode_fixed(x, scale_bits=DEFAULT_SCALE):
    return to_signed(x).astype(np.float64) / float(1 << scale_bits)


def truncate(x, scale_bits=DEFAULT_SCALE):
    """Arithmetic right shift by ``scale_bits`` under the signed view.

    Applied to each party's share separately this is the local truncation
    used after fixed-point products; on two shares the reconstruction is
    off by at most one LSB with overwhelming probability.
    """
    return (to_signed(x) >> np.int64(scale_bits)).view(RING_DTYPE)


def ring_matmul(a, b):
    """Wrapping 64-bit integer matmul (numpy integer matmul wraps)."""
    return np.matmul(np.asarray(a, RING_DTYPE), np.asarray(b, RING_DTYPE))


def msb(x):
    return (np.asarray(x, RING_DTYPE) >> np.uint64(63)).astype(RING_DTYPE)


@dataclass(frozen=True)
class LimbPlan:
    """Split 64-bit operands into ``num_limbs`` limbs of ``limb_bits`` bits.

    Limb products are accumulated in a float carrier with ``mantissa_bits``
    of exact integer precision; the accumulation budget is what remains
    after one limb-by-limb product.
    """

    limb_bits: int
    num_limbs: int
    mantissa_bits: int
    carrier: type

    def __post_init__(self):
        if self.limb_bits * self.num_limbs != RING_BITS:
            raise ValueError("limb_bits * num_limbs must be 64")
        if self.accum_budget_bits < 1:
            raise ValueError("limb product does not fit the carrier")

    @property
    def accum_budget_bits(self):
        return self.mantissa_bits - 2 * self.limb_bits

    @property
    def max_inner(self):
        return 1 << self.accum_budget_bits


# float64: 52 stored fraction bits; float32: 22 usable fraction bits.
LIMB16 = LimbPlan(limb_bits=16, num_limbs=4, mantissa_bits=52, carrier=np.float64)
LIMB4 = LimbPlan(limb_bits=4, num_limbs=16, mantissa_bits=22, carrier=np.float32)


def split_limbs(x, plan):
    x = np.asarray(x, RING_DTYPE)
    mask = np.uint64((1 << plan.limb_bits) - 1)
    return [((x >> np.uint64(i * plan.limb_bits)) & mask).astype(plan.carrier)
            for i in range(plan.num_limbs)]


def limb_matmul(a, b, plan=LIMB16):
    """Wrapping matmul computed from narrow limb products in a float carrier.

    Bit-identical to :func:`ring_matmul`. Only limb pairs whose combined
    shift stays below 64 bits contribute.
    """
    a = np.asarray(a, RING_DTYPE)
    b = np.asarray(b, RING_DTYPE)
    inner = a.shape[-1]
    if b.ndim >= 2 and b.shape[-2] != inner or b.ndim == 1 and b.shape[0] != inner:
        raise ValueError(f"inner dimensions differ: {a.shape} @ {b.shape}")
    if inner > plan.max_inner:
        raise BudgetError(
            f"inner dimension {inner} exceeds 2^{plan.accum_budget_bits} accumulations")
    al = split_limbs(a, plan)
    bl = split_limbs(b, plan)
    out = None
    for i in range(plan.num_limbs):
        for j in range(plan.num_limbs - i):
            part = np.matmul(al[i], bl[j]).astype(RING_DTYPE)
            part <<= np.uint64(plan.limb_bits * (i + j))
            out = part if out is None else out + part
    return out
