"""Additive / XOR secret sharing and the trusted triple dealer."""
import json
import struct
import zlib
from dataclasses import dataclass, field

import numpy as np

from .ring import RING_DTYPE, as_ring, ring_matmul


class ConfigError(ValueError):
    pass


class ProtocolError(RuntimeError):
    pass


def random_ring(rng, shape):
    """Uniform elements of Z_{2^64}."""
    shape = tuple(shape)
    n = int(np.prod(shape, dtype=np.int64))
    return rng.integers(0, 1 << 64, size=n, dtype=RING_DTYPE).reshape(shape)


@dataclass(frozen=True)
class AdditiveShare:
    party: int
    tensor: np.ndarray


@dataclass(frozen=True)
class BinaryShare:
    party: int
    tensor: np.ndarray


def share_additive(x, n, rng):
    """Split ``x`` into ``n`` shares summing to ``x`` mod 2^64.

    Parties 1..n-1 get uniform masks R_i; party 0 gets x - sum(R_i).
    """
    if n < 2:
        raise ConfigError(f"need at least 2 parties, got {n}")
    x = as_ring(x)
    masks = [random_ring(rng, x.shape) for _ in range(n - 1)]
    first = x.copy()
    for m in masks:
        first = first - m
    return [AdditiveShare(0, first)] + [AdditiveShare(i + 1, m) for i, m in enumerate(masks)]


def share_binary(x, n, rng):
    if n < 2:
        raise ConfigError(f"need at least 2 parties, got {n}")
    x = as_ring(x)
    masks = [random_ring(rng, x.shape) for _ in range(n - 1)]
    first = x.copy()
    for m in masks:
        first = first ^ m
    return [BinaryShare(0, first)] + [BinaryShare(i + 1, m) for i, m in enumerate(masks)]


def reconstruct(shares):
    """Wrapping sum of additive shares or XOR of binary shares."""
    if not shares:
        raise ProtocolError("no shares to reconstruct")
    kinds = {type(s) for s in shares}
    if len(kinds) != 1 or not kinds <= {AdditiveShare, BinaryShare}:
        raise ProtocolError(f"cannot mix share kinds {sorted(k.__name__ for k in kinds)}")
    shapes = {np.shape(s.tensor) for s in shares}
    if len(shapes) != 1:
        raise ProtocolError(f"share shapes differ: {sorted(shapes)}")
    parties = sorted(s.party for s in shares)
    if parties != list(range(len(shares))):
        raise ProtocolError(f"expected one share per party, got parties {parties}")
    out = np.array(shares[0].tensor, dtype=RING_DTYPE, copy=True)
    for s in shares[1:]:
        if isinstance(s, AdditiveShare):
            out += s.tensor
        else:
            out ^= s.tensor
    return out


# --------------------------------------------------------------------- triples

ARITHMETIC = "arithmetic"
BINARY = "binary"
SQUARE = "square"
TRUNC = "trunc"

_KIND_CODES = {ARITHMETIC: 0, BINARY: 1, SQUARE: 2, TRUNC: 3}
_OP_CODES = {"mul": 0, "matmul": 1, "conv": 2}


@dataclass
class BeaverTriple:
    """One party's shares of correlated randomness from the dealer.

    ``arithmetic``/``binary``: c = a (op) b.  ``square``: c = a*a, b unused.
    ``trunc``: a = r, b = r >> shift (logical), c = msb(r).
    """

    kind: str
    op: str
    party: int
    a: np.ndarray
    b: np.ndarray
    c: np.ndarray
    params: dict = field(default_factory=dict)
    consumed: bool = False

    def consume(self):
        if self.consumed:
            raise ProtocolError("beaver triple reused")
        self.consumed = True
        return self.a, self.b, self.c

    def chunk(self, sl):
        """Elementwise slice along the last axis (for chunked pipelines).

        The slices share the parent's randomness, so chunked and unchunked
        evaluations produce identical output shares.
        """
        if self.op != "mul":
            raise ProtocolError("only elementwise triples can be sliced")
        return BeaverTriple(self.kind, self.op, self.party, self.a[..., sl],
                            self.b[..., sl], self.c[..., sl], self.params)


def _conv_cols(x, params):
    from .engine.im2col import im2col
    return im2col(x, params["kernel"], params["stride"], params["padding"])


def _combine(kind, op, a, b, params):
    if kind == BINARY:
        return a & b
    if op == "mul":
        return a * b
    if op == "matmul":
        return ring_matmul(a, b)
    if op == "conv":
        return ring_matmul(_conv_cols(a, params), b)
    raise ConfigError(f"unknown triple op {op!r}")


def _check_shapes(op, shape_a, shape_b, params):
    try:
        if op == "mul":
            np.broadcast_shapes(shape_a, shape_b)
        elif op == "matmul":
            np.empty(shape_a, np.int8) @ np.empty(shape_b, np.int8)
        elif op == "conv":
            k = params["kernel"]
            if len(shape_a) != 4 or shape_a[1] * k * k != shape_b[0]:
                raise ValueError("conv triple: weight rows != C*k*k")
        else:
            raise ConfigError(f"unknown triple op {op!r}")
    except ValueError as exc:
        raise ConfigError(f"incompatible triple shapes {shape_a}, {shape_b}: {exc}") from None


class TrustedDealer:
    """Counter-mode dealer: every triple derives from (seed, stream, index).

    Party j >= 1 only needs its own random shares, drawn from a stream keyed
    by j; party 0 regenerates the plaintext triple and the other parties'
    shares to compute its correcting share.  Any party can therefore
    materialise its bundle independently and all bundles agree.
    """

    def __init__(self, n, seed, corrupt=False):
        if n < 2:
            raise ConfigError(f"need at least 2 parties, got {n}")
        self.n = n
        self.seed = int(seed)
        self.corrupt = corrupt

    def _rng(self, stream, index, who):
        sid = zlib.crc32(stream.encode()) if isinstance(stream, str) else int(stream)
        ss = np.random.SeedSequence(self.seed, spawn_key=(sid, int(index), who))
        return np.random.Generator(np.random.Philox(ss))

    def _plain(self, kind, op, shape_a, shape_b, params, stream, index):
        g = self._rng(stream, index, 1000)
        if kind == TRUNC:
            r = random_ring(g, shape_a)
            shift = np.uint64(params["shift"])
            return r, r >> shift, r >> np.uint64(63)
        a = random_ring(g, shape_a)
        if kind == SQUARE:
            return a, np.zeros(0, RING_DTYPE), a * a
        b = random_ring(g, shape_b)
        return a, b, _combine(kind, op, a, b, params)

    def _mask(self, kind, party, stream, index, shapes):
        g = self._rng(stream, index, party)
        return tuple(random_ring(g, s) for s in shapes)

    def party_triple(self, party, kind, shape_a, shape_b=(), op="mul", params=None,
                     stream="seq", index=0):
        params = dict(params or {})
        shape_a, shape_b = tuple(shape_a), tuple(shape_b)
        if kind in (ARITHMETIC, BINARY):
            _check_shapes(op, shape_a, shape_b, params)
            shape_c = np.shape(_combine(kind, op, np.zeros(shape_a, RING_DTYPE),
                                        np.zeros(shape_b, RING_DTYPE), params))
        elif kind == SQUARE:
            shape_b, shape_c = (0,), shape_a
        elif kind == TRUNC:
            shape_b, shape_c = shape_a, shape_a
        else:
            raise ConfigError(f"unknown triple kind {kind!r}")
        shapes = (shape_a, shape_b, shape_c)
        if party != 0:
            a, b, c = self._mask(kind, party, stream, index, shapes)
        else:
            A, B, C = self._plain(kind, op, shape_a, shape_b, params, stream, index)
            a, b, c = A.copy(), B.reshape(shape_b).copy(), C.copy()
            for j in range(1, self.n):
                ma, mb, mc = self._mask(kind, j, stream, index, shapes)
                if kind == BINARY:
                    a ^= ma
                    b ^= mb
                    c ^= mc
                else:
                    a -= ma
                    b -= mb
                    c -= mc
            if self.corrupt:
                c = c + np.uint64(1)
        return BeaverTriple(kind, op, party, a, b, c, params)

    def bundles_for(self, log):
        """Offline phase: materialise all parties' bundles for a request log."""
        return [self.generate(kind, sa, sb, op, params, stream, index)
                for kind, sa, sb, op, params, stream, index in log]

    def generate(self, kind, shape_a, shape_b=(), op="mul", params=None, stream="seq", index=0):
        return [self.party_triple(p, kind, shape_a, shape_b, op, params, stream, index)
                for p in range(self.n)]


def dealer_gen_triple(kind, shape_a, shape_b, op, n, rng):
    """Sample a fresh triple and return one bundle per party."""
    seed = int(rng.integers(0, 1 << 63))
    return TrustedDealer(n, seed).generate(kind, shape_a, shape_b, op)


class TripleSource:
    """Per-party triple feed.

    Triples requested with ``key`` (per-layer slots) are independent of
    request order across keys; a repeated key gets the next triple of its
    own slot, never the same one. Unkeyed requests draw sequentially from
    ``stream``.
    """

    def __init__(self, dealer, party):
        self.dealer = dealer
        self.party = party
        self._counters = {}
        self.log = []

    def get(self, kind, shape_a, shape_b=(), op="mul", params=None, key=None, stream="seq"):
        if key is not None:
            stream = "key:" + key
        index = self._counters.get(stream, 0)
        self._counters[stream] = index + 1
        self.log.append((kind, tuple(shape_a), tuple(shape_b), op, dict(params or {}),
                         stream, index))
        return self.dealer.party_triple(self.party, kind, shape_a, shape_b, op, params,
                                        stream, index)


# ------------------------------------------------------------- triple queues
#
# Record: u32 body length, then body:
#   u8 kind, u8 op, u8 n_parties, 3 x (u8 ndim, ndim x u32 dims),
#   u16 params-json length + params json,
#   per party: a, b, c payloads as little-endian u64.

def _pack_shape(shape):
    return struct.pack("<B", len(shape)) + struct.pack(f"<{len(shape)}I", *shape)


def _unpack_shape(buf, off):
    (nd,) = struct.unpack_from("<B", buf, off)
    dims = struct.unpack_from(f"<{nd}I", buf, off + 1)
    return tuple(dims), off + 1 + 4 * nd


def write_triple_queue(path, bundles):
    """Persist a list of per-party triple bundles (each a list over parties)."""
    with open(path, "wb") as fh:
        for bundle in bundles:
            t0 = bundle[0]
            params = json.dumps(t0.params, sort_keys=True).encode()
            body = struct.pack("<BBB", _KIND_CODES[t0.kind], _OP_CODES[t0.op], len(bundle))
            for arr in (t0.a, t0.b, t0.c):
                body += _pack_shape(arr.shape)
            body += struct.pack("<H", len(params)) + params
            for t in sorted(bundle, key=lambda t: t.party):
                for arr in (t.a, t.b, t.c):
                    body += np.ascontiguousarray(arr, dtype="<u8").tobytes()
            fh.write(struct.pack("<I", len(body)) + body)


def read_triple_queue(path):
    kinds = {v: k for k, v in _KIND_CODES.items()}
    ops = {v: k for k, v in _OP_CODES.items()}
    bundles = []
    with open(path, "rb") as fh:
        data = fh.read()
    off = 0
    while off < len(data):
        (length,) = struct.unpack_from("<I", data, off)
        body = data[off + 4: off + 4 + length]
        if len(body) != length:
            raise ProtocolError("truncated triple queue record")
        off += 4 + length
        kind, op, n = struct.unpack_from("<BBB", body, 0)
        p = 3
        shapes = []
        for _ in range(3):
            s, p = _unpack_shape(body, p)
            shapes.append(s)
        (plen,) = struct.unpack_from("<H", body, p)
        params = json.loads(body[p + 2: p + 2 + plen])
        p += 2 + plen
        bundle = []
        for party in range(n):
            arrs = []
            for s in shapes:
                cnt = int(np.prod(s, dtype=np.int64))
                arrs.append(np.frombuffer(body, "<u8", cnt, p).astype(RING_DTYPE).reshape(s))
                p += 8 * cnt
            bundle.append(BeaverTriple(kinds[kind], ops[op], party, *arrs, params=params))
        bundles.append(bundle)
    return bundles


class QueuedTripleSource:
    """Replays a persisted triple queue for one party, in order."""

    def __init__(self, bundles, party):
        self._items = [b[party] for b in bundles]
        self._pos = 0

    def get(self, kind, shape_a, shape_b=(), op="mul", params=None, key=None, stream="seq"):
        if self._pos >= len(self._items):
            raise ProtocolError("triple queue exhausted")
        t = self._items[self._pos]
        self._pos += 1
        if t.kind != kind or t.a.shape != tuple(shape_a):
            raise ProtocolError(
                f"triple queue mismatch: wanted {kind}{tuple(shape_a)}, have {t.kind}{t.a.shape}")
        return t
