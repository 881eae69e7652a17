"""Epoch-based deferred reclamation.

Retired objects are parked in one of three rotating limbo slots keyed by
the epoch they were retired in, and a whole slot is released at once two
epochs later. The epoch counter only advances when a scan finds no token
pinned at all (a token pinned even at the current epoch holds the epoch
back), which makes every advance a proof of quiescence: an object freed
at that point cannot be reachable from any active task.

Retirement and release are both counted, and an object is flagged on
each transition, so leaks and double frees show up as counter imbalance
or an immediate error rather than silent corruption. "Reclaiming" here
means dropping the manager's reference and invoking the object's
``on_reclaimed`` hook (if any), which poisons it against later use;
actual memory is then the garbage collector's business.
"""

from __future__ import annotations

import threading

from .atomics import AtomicInt
from .runtime import Cluster


class _Registry:
    __slots__ = ("lock", "tokens")

    def __init__(self):
        self.lock = threading.Lock()
        self.tokens: list[Token] = []


class _LimboShard:
    __slots__ = ("lock", "slots")

    def __init__(self):
        self.lock = threading.Lock()
        self.slots: list[list] = [[], [], []]


class Token:
    """Participant handle: pin/unpin epochs and defer deletions.

    A token belongs to one task at a time. Pinning nests via a depth
    counter, so helper code may pin a token its caller already pinned.
    A freshly acquired token is registered but not in any epoch.
    """

    __slots__ = ("_mgr", "_depth", "_epoch", "_defer_count")

    def __init__(self, mgr: "EpochManager"):
        self._mgr = mgr
        self._depth = 0
        self._epoch = None
        self._defer_count = 0

    @property
    def pinned_epoch(self) -> int | None:
        return self._epoch

    def is_pinned(self) -> bool:
        return self._epoch is not None

    def pin(self) -> None:
        if self._depth == 0:
            self._mgr._pinned_hint.inc()
            self._epoch = self._mgr._epoch
        self._depth += 1

    def unpin(self) -> None:
        assert self._depth > 0, "unpin of a token that is not pinned"
        self._depth -= 1
        if self._depth == 0:
            self._epoch = None
            self._mgr._pinned_hint.dec()
            self._mgr._maybe_advance()

    def defer_delete(self, obj) -> None:
        """Park obj for reclamation; the caller must not touch it again."""
        assert self._epoch is not None, "defer_delete requires a pinned token"
        self._mgr._defer(obj, self._epoch)
        self._defer_count += 1
        if self._defer_count % self._mgr.advance_stride == 0:
            self._mgr._maybe_advance()

    # The losing side of an install race retires its never-published
    # object through the same limbo path.
    try_reclaim = defer_delete

    def __enter__(self) -> "Token":
        self.pin()
        return self

    def __exit__(self, *exc) -> None:
        self.unpin()


class EpochManager:
    """Cluster-wide epoch counter with per-locale registries and limbo lists.

    The epoch is a single shared counter (the cluster is one process);
    token registries and limbo lists shard per locale so registration
    and retirement stay locale-local.
    """

    def __init__(self, cluster: Cluster, advance_stride: int = 64):
        self._cluster = cluster
        self.advance_stride = advance_stride
        self._epoch = 2  # headroom so (epoch - 1) % 3 is well-defined from the start
        self._advance_lock = threading.Lock()
        self._registries = [_Registry() for _ in range(cluster.num_locales)]
        self._limbo = [_LimboShard() for _ in range(cluster.num_locales)]
        self._pinned_hint = AtomicInt()
        self._retired_total = AtomicInt()
        self._reclaimed_total = AtomicInt()
        self._pending = AtomicInt()

    # -- token lifecycle ------------------------------------------------

    def get_token(self) -> Token:
        """Register and return a fresh token (not yet in any epoch)."""
        tok = Token(self)
        reg = self._registries[self._cluster.current_locale_id()]
        with reg.lock:
            reg.tokens.append(tok)
        return tok

    # -- retirement ------------------------------------------------------

    def _defer(self, obj, epoch: int) -> None:
        if getattr(obj, "_retired", False):
            raise RuntimeError(f"object retired twice: {obj!r}")
        try:
            obj._retired = True
        except AttributeError:
            pass  # objects without writable attrs lose double-retire detection only
        shard = self._limbo[self._cluster.current_locale_id()]
        with shard.lock:
            shard.slots[epoch % 3].append(obj)
        self._retired_total.inc()
        self._pending.inc()

    # -- advancement -----------------------------------------------------

    def _maybe_advance(self) -> None:
        if self._pending.load() == 0 or self._pinned_hint.load() != 0:
            return
        self.try_advance()

    def try_advance(self) -> bool:
        """Advance the epoch if no token is pinned; frees the two-stale slot.

        Returns False when any pinned token is found. The pinned-count
        hint is a cheap pre-filter; the registry scan under the advance
        lock is authoritative.
        """
        if self._pinned_hint.load() != 0:
            return False
        with self._advance_lock:
            for reg in self._registries:
                with reg.lock:
                    for tok in reg.tokens:
                        if tok._epoch is not None:
                            return False
            g = self._epoch
            stale = (g - 1) % 3
            freed: list = []
            for shard in self._limbo:
                with shard.lock:
                    if shard.slots[stale]:
                        freed.extend(shard.slots[stale])
                        shard.slots[stale] = []
            self._epoch = g + 1
        if freed:
            self._reclaim(freed)
        return True

    def _reclaim(self, objs: list) -> None:
        for obj in objs:
            if getattr(obj, "_reclaimed", False):
                raise RuntimeError(f"object reclaimed twice: {obj!r}")
            try:
                obj._reclaimed = True
            except AttributeError:
                pass
            hook = getattr(obj, "on_reclaimed", None)
            if hook is not None:
                hook()
        self._reclaimed_total.add(len(objs))
        self._pending.add(-len(objs))

    # -- introspection -----------------------------------------------------

    @property
    def epoch(self) -> int:
        return self._epoch

    def retired_count(self) -> int:
        return self._retired_total.load()

    def reclaimed_count(self) -> int:
        return self._reclaimed_total.load()

    def pending_count(self) -> int:
        return self._pending.load()
