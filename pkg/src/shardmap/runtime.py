"""Simulated multi-locale cluster: shards, dispatch, privatization.

A "cluster" is a fixed set of locales (shards) living in one process.
Each shard owns a message inbox and a worker pool of ``tasks_per_locale``
core threads. Running a closure on another locale enqueues a message to
the target shard and blocks the caller until the result comes back, which
models a synchronous remote call; running it on the caller's own locale
executes inline at zero dispatch cost. Every cross-shard message bumps
the target shard's dispatch counter, so communication structure stays
observable even though everything is shared memory underneath.

Two conventions keep the model workable:

* Threads that do not belong to any shard pool (the main thread, plain
  user threads) count as tasks of locale 0, mirroring how a program's
  initial task lives on the first node of a cluster.
* A pool thread that blocks waiting on a reply (or any event routed
  through :func:`cooperative_wait`) releases its concurrency slot, and
  the shard spawns a compensation thread if the inbox would otherwise
  starve. Active parallelism stays near ``tasks_per_locale`` while
  nested synchronous calls cannot deadlock the pool.
"""

from __future__ import annotations

import threading
import time
from dataclasses import dataclass
from queue import Empty, SimpleQueue

from .atomics import AtomicInt

_TL = threading.local()

_SPARE_IDLE_S = 0.05
_MAX_SPARE_THREADS = 1024


def task_yield() -> None:
    """Give other runnable tasks a chance to be scheduled."""
    time.sleep(0)


def cooperative_wait(event: threading.Event, timeout: float | None = None) -> bool:
    """Wait on event, releasing the caller's pool slot while blocked."""
    shard = getattr(_TL, "shard", None)
    if shard is None:
        return event.wait(timeout)
    shard._enter_blocked()
    try:
        return event.wait(timeout)
    finally:
        shard._exit_blocked()


class _Message:
    __slots__ = ("fn", "event", "result", "error")

    def __init__(self, fn):
        self.fn = fn
        self.event = threading.Event()
        self.result = None
        self.error = None


_SHUTDOWN = _Message(None)


class PendingTask:
    """Handle for a task submitted with ``submit_on``."""

    __slots__ = ("_msg",)

    def __init__(self, msg: _Message):
        self._msg = msg

    def done(self) -> bool:
        return self._msg.event.is_set()

    def wait(self, timeout: float | None = None):
        """Block until the task finishes; returns its result.

        Raises TimeoutError if the task is still running after timeout,
        and re-raises the task's exception if it failed.
        """
        if not cooperative_wait(self._msg.event, timeout):
            raise TimeoutError("task did not complete in time")
        if self._msg.error is not None:
            raise self._msg.error
        return self._msg.result


@dataclass(frozen=True)
class BlockDistribution:
    """Deterministic block mapping of slot indices onto locales.

    Each locale owns exactly ``slots_per_locale`` contiguous indices.
    """

    num_locales: int
    slots_per_locale: int

    @property
    def total_slots(self) -> int:
        return self.num_locales * self.slots_per_locale

    def locale_of(self, idx: int) -> int:
        if not 0 <= idx < self.total_slots:
            raise IndexError(f"slot index {idx} out of range [0, {self.total_slots})")
        return idx // self.slots_per_locale

    def base_of(self, locale_id: int) -> int:
        return locale_id * self.slots_per_locale


class LocaleShard:
    """One simulated locale: an inbox plus a bounded worker pool."""

    def __init__(self, cluster: "Cluster", locale_id: int, core_size: int):
        self.cluster = cluster
        self.locale_id = locale_id
        self.received_dispatches = AtomicInt()  # cross-locale messages delivered here
        self.inline_execs = AtomicInt()         # same-locale execute_on calls
        self.local_spawns = AtomicInt()         # same-locale submit_on calls
        self._inbox: SimpleQueue = SimpleQueue()
        self._privatized: dict[int, object] = {}
        self._core_size = core_size
        self._acct = threading.Lock()
        self._idle = 0
        self._unblocked_running = 0
        self._pending = 0
        self._starting = 0
        self._threads_total = 0
        self._shutdown = False

    def _start_core_workers(self) -> None:
        with self._acct:
            for _ in range(self._core_size):
                self._add_thread_locked(core=True)

    def _add_thread_locked(self, core: bool) -> None:
        if not core and self._threads_total - self._core_size >= _MAX_SPARE_THREADS:
            raise RuntimeError(
                f"locale {self.locale_id}: worker pool exhausted "
                f"({self._threads_total} threads)"
            )
        self._threads_total += 1
        self._starting += 1
        t = threading.Thread(
            target=self._worker_main,
            args=(core,),
            name=f"locale{self.locale_id}-{'core' if core else 'spare'}",
            daemon=True,
        )
        t.start()

    def _worker_main(self, core: bool) -> None:
        _TL.shard = self
        with self._acct:
            self._starting -= 1
        while True:
            with self._acct:
                self._idle += 1
            try:
                msg = self._inbox.get(timeout=None if core else _SPARE_IDLE_S)
            except Empty:
                with self._acct:
                    self._idle -= 1
                    if self._pending > 0 and self._idle == 0 and self._unblocked_running == 0:
                        continue  # inbox would starve; stay alive
                    self._threads_total -= 1
                    return
            with self._acct:
                self._idle -= 1
                self._pending -= 1
                self._unblocked_running += 1
            if msg is _SHUTDOWN:
                with self._acct:
                    self._unblocked_running -= 1
                    self._threads_total -= 1
                self._enqueue(_SHUTDOWN)  # cascade to the remaining workers
                return
            try:
                msg.result = msg.fn()
            except Exception as e:
                msg.error = e
            msg.event.set()
            with self._acct:
                self._unblocked_running -= 1

    def _enqueue(self, msg: _Message) -> None:
        with self._acct:
            self._pending += 1
            if (
                self._idle == 0
                and self._unblocked_running == 0
                and self._starting == 0
                and not self._shutdown
            ):
                self._add_thread_locked(core=False)
        self._inbox.put(msg)

    def _enter_blocked(self) -> None:
        with self._acct:
            self._unblocked_running -= 1
            if (
                self._pending > 0
                and self._idle == 0
                and self._unblocked_running == 0
                and self._starting == 0
                and not self._shutdown
            ):
                self._add_thread_locked(core=False)

    def _exit_blocked(self) -> None:
        with self._acct:
            self._unblocked_running += 1


class Cluster:
    """A fixed set of locales connected by synchronous message dispatch."""

    def __init__(self, num_locales: int, tasks_per_locale: int):
        if num_locales < 1:
            raise ValueError("num_locales must be >= 1")
        if tasks_per_locale < 1:
            raise ValueError("tasks_per_locale must be >= 1")
        self.num_locales = num_locales
        self.tasks_per_locale = tasks_per_locale
        self._shards = tuple(
            LocaleShard(self, i, tasks_per_locale) for i in range(num_locales)
        )
        self._next_pid = AtomicInt()
        self._alive = True
        for shard in self._shards:
            shard._start_core_workers()

    # -- context ------------------------------------------------------

    @property
    def shards(self) -> tuple[LocaleShard, ...]:
        return self._shards

    def current_locale_id(self) -> int:
        """Locale of the calling task; non-pool threads count as locale 0."""
        shard = getattr(_TL, "shard", None)
        if shard is not None and shard.cluster is self:
            return shard.locale_id
        return 0

    # -- dispatch -----------------------------------------------------

    def _shard(self, locale_id: int) -> LocaleShard:
        if not 0 <= locale_id < self.num_locales:
            raise IndexError(f"locale id {locale_id} out of range [0, {self.num_locales})")
        return self._shards[locale_id]

    def execute_on(self, locale_id: int, fn):
        """Run fn in the target locale's context and return its result.

        Same-locale calls run inline on the calling thread. Cross-locale
        calls enqueue to the target pool and block until completion;
        exceptions raised by fn propagate to the caller.
        """
        shard = self._shard(locale_id)
        if self.current_locale_id() == locale_id:
            shard.inline_execs.inc()
            return fn()
        shard.received_dispatches.inc()
        msg = _Message(fn)
        shard._enqueue(msg)
        cooperative_wait(msg.event)
        if msg.error is not None:
            raise msg.error
        return msg.result

    def submit_on(self, locale_id: int, fn) -> PendingTask:
        """Fire-and-forget fn onto the target locale's pool."""
        shard = self._shard(locale_id)
        if self.current_locale_id() == locale_id:
            shard.local_spawns.inc()
        else:
            shard.received_dispatches.inc()
        msg = _Message(fn)
        shard._enqueue(msg)
        return PendingTask(msg)

    # -- privatization ------------------------------------------------

    def privatize(self, factory) -> int:
        """Install factory(locale_id)'s result on every locale; returns the pid."""
        pid = self._next_pid.inc()

        def install(locale_id: int) -> None:
            self._shards[locale_id]._privatized[pid] = factory(locale_id)

        for locale_id in range(self.num_locales):
            self.execute_on(locale_id, lambda lid=locale_id: install(lid))
        return pid

    def get_privatized(self, pid: int, locale_id: int | None = None):
        """Resolve pid to the per-locale instance; never crosses shards."""
        if locale_id is None:
            locale_id = self.current_locale_id()
        return self._shard(locale_id)._privatized[pid]

    # -- counters -----------------------------------------------------

    def dispatch_counts(self) -> list[int]:
        return [s.received_dispatches.load() for s in self._shards]

    def remote_dispatch_total(self) -> int:
        return sum(self.dispatch_counts())

    def reset_dispatch_counters(self) -> None:
        for s in self._shards:
            s.received_dispatches.store(0)
            s.inline_execs.store(0)
            s.local_spawns.store(0)

    # -- lifecycle ----------------------------------------------------

    def shutdown(self) -> None:
        if not self._alive:
            return
        self._alive = False
        for shard in self._shards:
            with shard._acct:
                shard._shutdown = True
            shard._enqueue(_SHUTDOWN)

    def __enter__(self) -> "Cluster":
        return self

    def __exit__(self, *exc) -> None:
        self.shutdown()


def spawn_cluster(num_locales: int, tasks_per_locale: int) -> Cluster:
    """Create a running cluster with idle worker pools."""
    return Cluster(num_locales, tasks_per_locale)
