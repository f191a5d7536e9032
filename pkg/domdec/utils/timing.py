"""
Wall-time accounting per named phase.
"""

import time
from contextlib import contextmanager
from typing import Dict, Iterator


class PhaseTimer:
    """Accumulates wall time per phase name."""

    def __init__(self) -> None:
        self.totals: Dict[str, float] = {}

    @contextmanager
    def phase(self, name: str) -> Iterator[None]:
        start = time.perf_counter()
        try:
            yield
        finally:
            self.add(name, time.perf_counter() - start)

    def add(self, name: str, seconds: float) -> None:
        self.totals[name] = self.totals.get(name, 0.0) + seconds

    def merge(self, other: Dict[str, float]) -> None:
        for name, seconds in other.items():
            self.add(name, seconds)

    def get(self, name: str) -> float:
        return self.totals.get(name, 0.0)

    def as_dict(self) -> Dict[str, float]:
        return dict(self.totals)
