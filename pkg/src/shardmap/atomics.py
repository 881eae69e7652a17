"""Small atomic cells backed by fine-grained locks.

CPython has no user-level compare-and-swap, so every cell that needs CAS
carries its own ``threading.Lock``. Plain loads and stores of a single
attribute are already atomic under the GIL and skip the lock entirely;
only read-modify-write operations take it. This keeps the algorithms
written against these cells structurally identical to their native-CAS
counterparts.
"""

from __future__ import annotations

import threading


class AtomicInt:
    """Integer cell with atomic increment, add, and compare-and-swap."""

    __slots__ = ("_value", "_lock")

    def __init__(self, initial: int = 0) -> None:
        self._value = initial
        self._lock = threading.Lock()

    def load(self) -> int:
        return self._value

    def store(self, value: int) -> None:
        self._value = value

    def add(self, delta: int) -> int:
        """Add delta and return the previous value."""
        with self._lock:
            old = self._value
            self._value = old + delta
            return old

    def inc(self) -> int:
        return self.add(1)

    def dec(self) -> int:
        return self.add(-1)

    def cas(self, expected: int, new: int) -> bool:
        with self._lock:
            if self._value != expected:
                return False
            self._value = new
            return True


class AtomicRef:
    """Reference cell with CAS on object identity (``is``, not ``==``)."""

    __slots__ = ("_value", "_lock")

    def __init__(self, initial=None) -> None:
        self._value = initial
        self._lock = threading.Lock()

    def load(self):
        return self._value

    def store(self, value) -> None:
        self._value = value

    def cas(self, expected, new) -> bool:
        with self._lock:
            if self._value is not expected:
                return False
            self._value = new
            return True

    def swap(self, new):
        """Store new and return the previous value."""
        with self._lock:
            old = self._value
            self._value = new
            return old


class AtomicSlots:
    """Fixed-size array of reference slots with per-array CAS.

    One lock serves all slots of the array: slot CAS only happens on
    structure-changing installs, which are rare next to plain loads, so
    per-slot locks would cost memory for no measurable contention win.
    """

    __slots__ = ("_refs", "_lock")

    def __init__(self, size: int) -> None:
        self._refs = [None] * size
        self._lock = threading.Lock()

    def __len__(self) -> int:
        return len(self._refs)

    def load(self, idx: int):
        return self._refs[idx]

    def cas(self, idx: int, expected, new) -> bool:
        with self._lock:
            if self._refs[idx] is not expected:
                return False
            self._refs[idx] = new
            return True
