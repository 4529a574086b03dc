"""Schedule perturbation for stress testing.

A :class:`Perturbation` is called at shared-memory touch points and
randomly yields or sleeps for a few microseconds, which shuffles thread
interleavings between runs.
"""

from __future__ import annotations

import random
import threading
import time


class Perturbation:
    def __init__(self, seed: int, probability: float = 0.3, max_sleep: float = 100e-6):
        if not 0.0 <= probability <= 1.0:
            raise ValueError("probability must lie in [0, 1]")
        self.seed = seed
        self.probability = probability
        self.max_sleep = max_sleep
        self._local = threading.local()
        self._lock = threading.Lock()
        self._streams = 0
        self.touches = 0

    def _rng(self) -> random.Random:
        rng = getattr(self._local, "rng", None)
        if rng is None:
            with self._lock:
                stream = self._streams
                self._streams += 1
            rng = random.Random(self.seed * 1_000_003 + stream)
            self._local.rng = rng
        return rng

    def __call__(self) -> None:
        self.touches += 1  # approximate under contention; informational only
        rng = self._rng()
        if rng.random() >= self.probability:
            return
        if rng.random() < 0.5:
            time.sleep(0)
        else:
            time.sleep(rng.random() * self.max_sleep)
