"""Multi-version memory keyed by writer index, with estimate flags."""

from __future__ import annotations

import threading
from bisect import bisect_left, insort
from typing import Callable, Iterable, Mapping, NamedTuple, Optional

from .core import StateKey


class MVMemoryError(RuntimeError):
    """Raised on misuse that can only come from an executor bug."""


class ReadResult(NamedTuple):
    value: int
    source: Optional[int]  # None means the pre-block base state
    estimate: bool


class VersionEntry(NamedTuple):
    writer: int
    value: int
    estimate: bool


class _VersionedKey:
    __slots__ = ("lock", "writers", "entries")

    def __init__(self):
        self.lock = threading.Lock()
        self.writers: list = []  # sorted writer indices
        self.entries: dict = {}  # writer -> [value, estimate]


class MVMemory:
    """Per-key ordered version lists supporting largest-preceding-version reads.

    Each key has its own lock, so operations on disjoint keys never contend.
    ``hook`` (if given) is called with no arguments at every shared-memory
    touch point and is used to perturb thread schedules in stress tests.
    """

    def __init__(self, hook: Optional[Callable[[], None]] = None):
        self._keys: dict = {}
        self._hook = hook

    def _slot(self, key: StateKey) -> _VersionedKey:
        vk = self._keys.get(key)
        if vk is None:
            vk = self._keys.setdefault(key, _VersionedKey())
        return vk

    def read_lvp(self, k: int, key: StateKey, base: Mapping[StateKey, int]) -> ReadResult:
        """Highest version written by some ``i < k``; the base value if none."""
        if self._hook:
            self._hook()
        vk = self._keys.get(key)
        if vk is not None:
            with vk.lock:
                pos = bisect_left(vk.writers, k)
                if pos:
                    w = vk.writers[pos - 1]
                    value, est = vk.entries[w]
                    return ReadResult(value, w, est)
        return ReadResult(base.get(key, 0), None, False)

    def write_version(self, k: int, key: StateKey, value: int) -> bool:
        """Insert or replace ``k``'s version of ``key``. Returns True if it is new."""
        if self._hook:
            self._hook()
        vk = self._slot(key)
        with vk.lock:
            entry = vk.entries.get(k)
            if entry is None:
                insort(vk.writers, k)
                vk.entries[k] = [value, False]
                return True
            entry[0] = value
            entry[1] = False
            return False

    def delete_version(self, k: int, key: StateKey) -> None:
        if self._hook:
            self._hook()
        vk = self._keys.get(key)
        if vk is None:
            raise MVMemoryError(f"no version of {key} by {k}")
        with vk.lock:
            if vk.entries.pop(k, None) is None:
                raise MVMemoryError(f"no version of {key} by {k}")
            vk.writers.pop(bisect_left(vk.writers, k))

    def mark_estimates(self, k: int, keys: Iterable[StateKey]) -> None:
        for key in keys:
            if self._hook:
                self._hook()
            vk = self._keys.get(key)
            entry = None
            if vk is not None:
                with vk.lock:
                    entry = vk.entries.get(k)
                    if entry is not None:
                        entry[1] = True
            if entry is None:
                raise MVMemoryError(f"cannot mark missing version of {key} by {k}")

    def record(self, k: int, writes: Mapping[StateKey, int], prev_keys: Iterable[StateKey] = ()) -> bool:
        """Publish an incarnation's writes, dropping stale keys of the previous one.

        Returns True when a key was written that the previous incarnation
        did not write, which means later readers may have missed it.
        """
        wrote_new = False
        for key, value in writes.items():
            if self.write_version(k, key, value):
                wrote_new = True
        for key in prev_keys:
            if key not in writes:
                self.delete_version(k, key)
        return wrote_new

    def entries(self, key: StateKey) -> list:
        vk = self._keys.get(key)
        if vk is None:
            return []
        with vk.lock:
            return [VersionEntry(w, *vk.entries[w]) for w in vk.writers]

    def keys(self) -> list:
        return list(self._keys)

    def snapshot_final(self, n: int, base: Mapping[StateKey, int]) -> dict:
        """Final block state. Requires quiescence and no remaining estimates."""
        state = dict(base)
        for key, vk in self._keys.items():
            if not vk.writers:
                continue
            for w in vk.writers:
                if w >= n:
                    raise MVMemoryError(f"version of {key} by {w} outside block of {n}")
                if vk.entries[w][1]:
                    raise MVMemoryError(f"estimate left on {key} by {w}: execution incomplete")
            state[key] = vk.entries[vk.writers[-1]][0]
        return state
