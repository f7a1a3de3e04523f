"""Deterministic discrete-event scheduler shared by every simulated actor.

Events fire in (time, insertion-order) order, so a fixed seed plus a fixed
wiring order reproduces a run exactly. Named RNG streams decouple the noise
consumed by one subsystem from scheduling changes in another.
"""

from __future__ import annotations

import hashlib
import heapq
import itertools
from typing import Callable

import numpy as np

NS_PER_S = 1_000_000_000


def ns(seconds: float) -> int:
    return int(round(seconds * NS_PER_S))


def ms_ns(millis: float) -> int:
    return int(round(millis * 1e6))


class Scheduler:
    """Virtual-time event loop with seeded, named RNG streams."""

    def __init__(self, seed: int = 0):
        self.seed = seed
        self.now_ns = 0
        self._heap: list[tuple[int, int, Callable[[], None]]] = []
        self._order = itertools.count()
        self._rngs: dict[str, np.random.Generator] = {}
        self._stopped = False

    def rng(self, name: str) -> np.random.Generator:
        """Stable per-name generator derived from the run seed."""
        if name not in self._rngs:
            digest = hashlib.sha256(f"{self.seed}:{name}".encode()).digest()
            self._rngs[name] = np.random.default_rng(
                int.from_bytes(digest[:8], "little")
            )
        return self._rngs[name]

    def at(self, t_ns: int, fn: Callable[[], None]) -> None:
        if t_ns < self.now_ns:
            t_ns = self.now_ns
        heapq.heappush(self._heap, (t_ns, next(self._order), fn))

    def after(self, dt_ns: int, fn: Callable[[], None]) -> None:
        self.at(self.now_ns + max(0, dt_ns), fn)

    def run_until(self, t_end_ns: int) -> None:
        """Process events up to and including t_end_ns."""
        while self._heap and not self._stopped:
            t, _, fn = self._heap[0]
            if t > t_end_ns:
                break
            heapq.heappop(self._heap)
            self.now_ns = t
            fn()
        self.now_ns = max(self.now_ns, t_end_ns)

    def run_while(self, predicate: Callable[[], bool], limit_ns: int) -> None:
        """Drain events while the predicate holds, up to a time limit."""
        while self._heap and predicate():
            t, _, fn = self._heap[0]
            if t > limit_ns:
                break
            heapq.heappop(self._heap)
            self.now_ns = t
            fn()

    def stop(self) -> None:
        self._stopped = True
