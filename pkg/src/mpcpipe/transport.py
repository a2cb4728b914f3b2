"""Per-party communication: async sum/xor reveals and point-to-point sends.

Two interchangeable backends share one endpoint API:

* ``SimComm`` -- in-process queues plus a simulated clock per party. Every
  message carries its simulated arrival time (link serialisation, then
  bandwidth, then one-way latency), so a party's clock only depends on its
  own work and on message timestamps, never on thread scheduling.
* ``SocketComm`` -- TCP full mesh on localhost, timed with the monotonic
  wall clock.
"""
import json
import os
import queue
import socket
import struct
import threading
import time
from collections import defaultdict, namedtuple
from dataclasses import asdict, dataclass, fields

import numpy as np

from .ring import RING_DTYPE

SUM = "sum"
XOR = "xor"
P2P = "p2p"
_KIND_CODE = {SUM: 1, XOR: 2, P2P: 3}
_CODE_KIND = {v: k for k, v in _KIND_CODE.items()}
_FRAME = struct.Struct("<IBI")

PORT_ENV = "MPCPIPE_PORT_BASE"


class TransportError(RuntimeError):
    pass


class ProtocolDesyncError(TransportError):
    pass


class UsageError(RuntimeError):
    pass


@dataclass
class SessionConfig:
    n_parties: int = 2
    backend: str = "sim"
    latency: float = 1e-3          # one-way, seconds
    bandwidth: float = 1e9         # bytes / second, per directed link
    seed: int = 0
    scale_bits: int = 16
    # simulated compute: "model" charges op counts, "measured" charges real time
    compute: str = "model"
    op_time: float = 1e-9          # seconds per 64-bit word operation
    kernel_overhead: float = 5e-6  # seconds per kernel launch
    host: str = "127.0.0.1"
    port_base: int = 29500
    timeout: float = 120.0

    def __post_init__(self):
        if self.n_parties < 2:
            raise ValueError("n_parties must be >= 2")
        if self.backend not in ("sim", "socket"):
            raise ValueError(f"unknown backend {self.backend!r}")
        if self.latency < 0:
            raise ValueError("latency must be >= 0")
        if not self.bandwidth > 0:
            raise ValueError("bandwidth must be > 0")
        if self.compute not in ("model", "measured"):
            raise ValueError(f"unknown compute mode {self.compute!r}")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, data):
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown session keys: {sorted(unknown)}")
        cfg = cls(**data)
        env = os.environ.get(PORT_ENV)
        if env:
            cfg.port_base = int(env)
        return cfg

    @classmethod
    def from_file(cls, path):
        with open(path, "rb") as fh:
            raw = fh.read()
        if str(path).endswith(".toml"):
            try:
                import tomllib
            except ImportError:  # python < 3.11
                import tomli as tomllib
            data = tomllib.loads(raw.decode())
        else:
            data = json.loads(raw)
        return cls.from_dict(data.get("session", data))


def simulated_transfer_time(nbytes, cfg):
    """One message on an idle link: latency + bytes / bandwidth."""
    if nbytes < 0:
        raise ValueError("nbytes must be >= 0")
    return cfg.latency + nbytes / cfg.bandwidth


Msg = namedtuple("Msg", "channel seq kind data arrival")


class SendHandle:
    """Token for one in-flight reveal or point-to-point receive."""

    __slots__ = ("seq", "kind", "shape", "tag", "peers", "local", "issued_at", "waited",
                 "nbytes")

    def __init__(self, seq, kind, shape, tag, peers, local, issued_at, nbytes):
        self.seq = seq
        self.kind = kind
        self.shape = shape
        self.tag = tag
        self.peers = peers
        self.local = local
        self.issued_at = issued_at
        self.nbytes = nbytes
        self.waited = False

    def __repr__(self):
        return f"SendHandle(seq={self.seq}, kind={self.kind}, tag={self.tag!r})"


class Communicator:
    """Backend-independent endpoint logic: sequencing, stashing, tracing."""

    def __init__(self, rank, cfg):
        self.rank = rank
        self.n = cfg.n_parties
        self.cfg = cfg
        self.clock = 0.0
        self.trace = []
        self.bytes_sent = 0
        self.bytes_recv = 0
        self.wait_time = 0.0
        self.collectives = 0
        self.wait_log = []          # (tag, blocked s, issue-to-ready s, bytes)
        self._seq = 0
        self._p2p_send = defaultdict(int)
        self._p2p_recv = defaultdict(int)
        self._stash = {}
        self._inbox = {p: queue.Queue() for p in range(self.n) if p != rank}
        self._mark = time.perf_counter()

    # -- clock -----------------------------------------------------------
    def now(self):
        return self.clock

    def charge(self, ops, kernels=1):
        """Account local compute of ``ops`` word operations."""

    def _enter(self):
        pass

    def _leave(self):
        pass

    def event(self, ev, tag="", **info):
        self.trace.append(dict(t=self.clock, ev=ev, tag=tag, **info))

    # -- sending (backend specific) ----------------------------------------
    def _deliver(self, dest, channel, seq, kind, data):
        raise NotImplementedError

    def _poll_abort(self):
        pass

    # -- API -------------------------------------------------------------
    def peers(self):
        return [p for p in range(self.n) if p != self.rank]

    def reveal_async(self, local, kind=SUM, tag=""):
        if kind not in (SUM, XOR):
            raise UsageError(f"unknown reveal kind {kind!r}")
        self._enter()
        data = np.ascontiguousarray(local, dtype=RING_DTYPE).copy()
        seq = self._seq
        self._seq += 1
        self.collectives += 1
        for p in self.peers():
            self._deliver(p, "c", seq, kind, data)
        self.bytes_sent += data.nbytes * (self.n - 1)
        h = SendHandle(seq, kind, data.shape, tag, self.peers(), data, self.clock,
                       data.nbytes)
        self.event("issue", tag, seq=seq, kind=kind, nbytes=data.nbytes)
        self._leave()
        return h

    def send_async(self, dest, payload, tag=""):
        """Point-to-point send; the matching receive is :meth:`recv_async`."""
        if dest == self.rank or not 0 <= dest < self.n:
            raise UsageError(f"bad destination {dest}")
        self._enter()
        data = np.ascontiguousarray(payload, dtype=RING_DTYPE).copy()
        seq = self._p2p_send[dest]
        self._p2p_send[dest] += 1
        self._deliver(dest, "p", seq, P2P, data)
        self.bytes_sent += data.nbytes
        self.event("send", tag, seq=seq, dest=dest, nbytes=data.nbytes)
        self._leave()

    def recv_async(self, src, shape, tag=""):
        if src == self.rank or not 0 <= src < self.n:
            raise UsageError(f"bad source {src}")
        seq = self._p2p_recv[src]
        self._p2p_recv[src] += 1
        nbytes = int(np.prod(shape, dtype=np.int64)) * 8
        return SendHandle(seq, P2P, tuple(shape), tag, [src], None, self.clock, nbytes)

    def wait(self, h):
        if h.waited:
            raise UsageError(f"{h!r} already waited")
        h.waited = True
        self._enter()
        start = self.clock
        count = int(np.prod(h.shape, dtype=np.int64))
        if h.kind == P2P:
            msg = self._fetch(h.peers[0], "p", h.seq, P2P, count)
            out = msg.data.reshape(h.shape)
            ready = msg.arrival
            self.bytes_recv += msg.data.nbytes
        else:
            out = h.local.copy()
            ready = start
            for p in h.peers:
                msg = self._fetch(p, "c", h.seq, h.kind, count)
                if h.kind == SUM:
                    out += msg.data.reshape(h.shape)
                else:
                    out ^= msg.data.reshape(h.shape)
                ready = max(ready, msg.arrival)
                self.bytes_recv += msg.data.nbytes
        self._arrive(ready)
        blocked = self.clock - start
        self.wait_time += blocked
        self.wait_log.append((h.tag, blocked, self.clock - h.issued_at, h.nbytes))
        if h.kind != P2P:
            self.charge(count * (self.n - 1))
        self.event("wait", h.tag, seq=h.seq, blocked=blocked)
        self._leave()
        return out

    def _arrive(self, ready):
        pass

    def _fetch(self, peer, channel, seq, kind, count):
        key = (peer, channel, seq)
        if key in self._stash:
            msg = self._stash.pop(key)
        else:
            deadline = time.monotonic() + self.cfg.timeout
            while True:
                try:
                    msg = self._inbox[peer].get(timeout=0.05)
                except queue.Empty:
                    self._poll_abort()
                    if time.monotonic() > deadline:
                        raise TransportError(
                            f"party {self.rank}: timed out waiting for party {peer}") from None
                    continue
                if msg is None:
                    raise TransportError(f"party {self.rank}: peer {peer} disconnected")
                if (peer, msg.channel, msg.seq) == key:
                    break
                self._stash[(peer, msg.channel, msg.seq)] = msg
        if msg.kind != kind or msg.data.size != count:
            raise ProtocolDesyncError(
                f"party {self.rank}: collective {channel}{seq} from party {peer} is "
                f"{msg.kind}[{msg.data.size}], expected {kind}[{count}]")
        return msg

    def close(self):
        pass


class SimNetwork:
    """Shared mailbox fabric for the in-process simulated backend."""

    def __init__(self, cfg):
        self.cfg = cfg
        self.abort = threading.Event()
        self.endpoints = [SimComm(r, cfg, self) for r in range(cfg.n_parties)]


class SimComm(Communicator):
    def __init__(self, rank, cfg, net):
        super().__init__(rank, cfg)
        self.net = net
        self._link_free = defaultdict(float)

    def charge(self, ops, kernels=1):
        if self.cfg.compute == "model":
            self.clock += kernels * self.cfg.kernel_overhead + ops * self.cfg.op_time

    def _enter(self):
        if self.cfg.compute == "measured":
            now = time.perf_counter()
            self.clock += now - self._mark
            self._mark = now

    def _leave(self):
        if self.cfg.compute == "measured":
            self._mark = time.perf_counter()

    def _deliver(self, dest, channel, seq, kind, data):
        cfg = self.cfg
        start = max(self.clock, self._link_free[dest])
        done = start + data.nbytes / cfg.bandwidth
        self._link_free[dest] = done
        self.net.endpoints[dest]._inbox[self.rank].put(
            Msg(channel, seq, kind, data, done + cfg.latency))

    def _arrive(self, ready):
        self.clock = max(self.clock, ready)

    def _poll_abort(self):
        if self.net.abort.is_set():
            raise TransportError(f"party {self.rank}: session aborted by a peer")


class SocketComm(Communicator):
    """TCP full mesh. Frames: u32 seq, u8 kind, u32 count, count x u64 (LE)."""

    def __init__(self, rank, cfg, port_base=None):
        super().__init__(rank, cfg)
        self._t0 = time.perf_counter()
        base = cfg.port_base if port_base is None else port_base
        self._socks = {}
        self._outq = {}
        self._closed = threading.Event()
        srv = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        srv.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        srv.bind((cfg.host, base + rank))
        srv.listen(self.n)
        try:
            for p in range(rank):
                self._socks[p] = self._connect(cfg.host, base + p)
            srv.settimeout(cfg.timeout)
            while len(self._socks) < self.n - 1:
                conn, _ = srv.accept()
                (peer,) = struct.unpack("<I", _recv_exact(conn, 4))
                self._socks[peer] = conn
        except OSError as exc:
            raise TransportError(f"party {rank}: mesh setup failed: {exc}") from exc
        finally:
            srv.close()
        self._writers = []
        for p, s in self._socks.items():
            s.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
            s.settimeout(None)
            self._outq[p] = queue.Queue()
            threading.Thread(target=self._reader, args=(p, s), daemon=True).start()
            w = threading.Thread(target=self._writer, args=(p, s), daemon=True)
            w.start()
            self._writers.append(w)

    def _connect(self, host, port):
        deadline = time.monotonic() + self.cfg.timeout
        while True:
            try:
                s = socket.create_connection((host, port), timeout=1.0)
                s.sendall(struct.pack("<I", self.rank))
                return s
            except OSError:
                if time.monotonic() > deadline:
                    raise
                time.sleep(0.02)

    def now(self):
        return time.perf_counter() - self._t0

    def _enter(self):
        self.clock = self.now()

    _leave = _enter

    def event(self, ev, tag="", **info):
        self.clock = self.now()
        super().event(ev, tag, **info)

    def _deliver(self, dest, channel, seq, kind, data):
        self._outq[dest].put(_FRAME.pack(seq, _KIND_CODE[kind], data.size)
                             + data.astype("<u8", copy=False).tobytes())

    def _writer(self, peer, sock):
        q = self._outq[peer]
        while True:
            frame = q.get()
            if frame is None:
                return
            try:
                sock.sendall(frame)
            except OSError:
                return

    def _reader(self, peer, sock):
        inbox = self._inbox[peer]
        try:
            while True:
                head = _recv_exact(sock, _FRAME.size)
                seq, code, count = _FRAME.unpack(head)
                payload = _recv_exact(sock, 8 * count)
                data = np.frombuffer(payload, "<u8").astype(RING_DTYPE)
                kind = _CODE_KIND[code]
                inbox.put(Msg("p" if kind == P2P else "c", seq, kind, data, 0.0))
        except (OSError, EOFError, KeyError):
            inbox.put(None)

    def close(self):
        for q in self._outq.values():
            q.put(None)
        for w in self._writers:
            w.join(timeout=10.0)
        for s in self._socks.values():
            try:
                s.shutdown(socket.SHUT_WR)
            except OSError:
                pass


def _recv_exact(sock, n):
    buf = bytearray()
    while len(buf) < n:
        chunk = sock.recv(n - len(buf))
        if not chunk:
            raise EOFError("connection closed")
        buf += chunk
    return bytes(buf)
