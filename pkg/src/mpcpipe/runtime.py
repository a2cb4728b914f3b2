"""Party runtime: one protocol thread per party, launched in-process or as OS processes."""
import multiprocessing as mp
import threading
import traceback
from collections import defaultdict
from contextlib import contextmanager

import numpy as np

from .sharing import TripleSource, TrustedDealer
from .transport import SessionConfig, SimNetwork, SocketComm, TransportError


class Party:
    """Everything one server needs to run protocols: its rank, endpoint,
    triple feed, private randomness and time accounting."""

    def __init__(self, rank, comm, cfg, triples=None, corrupt=False):
        self.rank = rank
        self.n = cfg.n_parties
        self.comm = comm
        self.cfg = cfg
        self.scale = cfg.scale_bits
        self.dealer = TrustedDealer(self.n, cfg.seed, corrupt=corrupt)
        self.triples = triples if triples is not None else TripleSource(self.dealer, rank)
        ss = np.random.SeedSequence(cfg.seed, spawn_key=(0xA2B, rank))
        self.rng = np.random.Generator(np.random.Philox(ss))
        self.totals = defaultdict(lambda: {"time": 0.0, "bytes": 0, "wait": 0.0,
                                           "collectives": 0})
        self._stack = []

    def now(self):
        self.comm._enter()
        self.comm._leave()
        return self.comm.clock

    def charge(self, ops, kernels=1):
        self.comm.charge(int(ops), kernels)

    def mark(self, ev, tag="", **info):
        self.comm.event(ev, tag, **info)

    def snapshot(self):
        c = self.comm
        return (self.now(), c.bytes_sent, c.wait_time, c.collectives)

    @contextmanager
    def category(self, name):
        """Attribute time/bytes/waits to ``name`` (exclusive of nested categories)."""
        start = self.snapshot()
        child = [0.0, 0, 0.0, 0]
        self._stack.append(child)
        try:
            yield
        finally:
            self._stack.pop()
            incl = [e - s for e, s in zip(self.snapshot(), start)]
            tot = self.totals[name]
            for k, i, c in zip(("time", "bytes", "wait", "collectives"), incl, child):
                tot[k] += i - c
            if self._stack:
                parent = self._stack[-1]
                for k in range(4):
                    parent[k] += incl[k]


def _thread_main(rank, comm, cfg, program, args, corrupt, results, errors, on_error):
    try:
        party = Party(rank, comm, cfg, corrupt=corrupt)
        results[rank] = program(party, *args)
    except BaseException as exc:  # noqa: BLE001 - surfaced by run_parties
        errors[rank] = exc
        on_error()
    finally:
        comm.close()


def _process_main(rank, cfg, program, args, corrupt, q):
    try:
        comm = SocketComm(rank, cfg)
        try:
            party = Party(rank, comm, cfg, corrupt=corrupt)
            q.put((rank, True, program(party, *args)))
        finally:
            comm.close()
    except BaseException as exc:  # noqa: BLE001
        q.put((rank, False, f"{type(exc).__name__}: {exc}\n{traceback.format_exc()}"))


def run_parties(cfg, program, args=None, *, processes=False, corrupt=False):
    """Run ``program(party, *args[rank])`` for every party; return the results.

    The simulated backend always uses threads. The socket backend uses
    threads unless ``processes`` is set, in which case each party is an OS
    process and ``program`` must be importable at module level.
    """
    if isinstance(cfg, dict):
        cfg = SessionConfig.from_dict(cfg)
    n = cfg.n_parties
    args = list(args) if args is not None else [()] * n
    if len(args) != n:
        raise ValueError(f"expected {n} argument tuples, got {len(args)}")
    if cfg.backend == "socket" and processes:
        return _run_processes(cfg, program, args, corrupt)

    results = [None] * n
    errors = [None] * n
    if cfg.backend == "sim":
        net = SimNetwork(cfg)
        comms = net.endpoints
        on_error = net.abort.set
    else:
        comms = [None] * n
        on_error = lambda: None  # noqa: E731 - closing the socket notifies peers

    def socket_main(rank, *rest):
        try:
            comm = SocketComm(rank, cfg)
        except BaseException as exc:  # noqa: BLE001
            errors[rank] = exc
            return
        _thread_main(rank, comm, *rest)

    threads = []
    for r in range(n):
        rest = (cfg, program, args[r], corrupt, results, errors, on_error)
        if cfg.backend == "sim":
            t = threading.Thread(target=_thread_main, args=(r, comms[r]) + rest,
                                 name=f"party-{r}")
        else:
            t = threading.Thread(target=socket_main, args=(r,) + rest, name=f"party-{r}")
        threads.append(t)
        t.start()
    for t in threads:
        t.join()
    _raise_first(errors)
    return results


def _raise_first(errors):
    real = [e for e in errors if e is not None and not isinstance(e, TransportError)]
    if real:
        raise real[0]
    for e in errors:
        if e is not None:
            raise e


def _run_processes(cfg, program, args, corrupt):
    ctx = mp.get_context("spawn")
    q = ctx.Queue()
    procs = [ctx.Process(target=_process_main, args=(r, cfg, program, args[r], corrupt, q))
             for r in range(cfg.n_parties)]
    for p in procs:
        p.start()
    results = [None] * cfg.n_parties
    failures = []
    for _ in procs:
        try:
            rank, ok, value = q.get(timeout=cfg.timeout + 30)
        except Exception as exc:  # queue.Empty
            failures.append(f"no result: {exc!r}")
            break
        if ok:
            results[rank] = value
        else:
            failures.append(f"party {rank}: {value}")
    for p in procs:
        p.join(timeout=10)
        if p.is_alive():
            p.terminate()
    if failures:
        raise TransportError("; ".join(failures))
    return results
