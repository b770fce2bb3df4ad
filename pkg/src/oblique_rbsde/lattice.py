"""Binomial approximations of a one-dimensional Brownian motion.

Two node layouts are supported:

``recombining``
    level ``n`` has ``n + 1`` nodes indexed by the number of up moves ``u``;
    the state is ``(2u - n) * sqrt(dt)``.  Children of ``u`` are ``u`` (down)
    and ``u + 1`` (up).

``full_tree``
    level ``n`` has ``2**n`` nodes indexed by a path word ``p`` whose ``n`` low
    bits record the moves.  Children of ``p`` are ``2p`` (down) and
    ``2p + 1`` (up), so the state is ``(2 * popcount(p) - n) * sqrt(dt)``.

All level arrays carry nodes on their last axis; leading axes (modes,
strategies, ...) are broadcast through.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

RECOMBINING = "recombining"
FULL_TREE = "full_tree"
MAX_FULL_TREE_STEPS = 20

__all__ = [
    "RECOMBINING",
    "FULL_TREE",
    "Lattice",
    "build_lattice",
    "cond_expect",
    "cond_expect_dw",
]


@dataclass(frozen=True)
class Lattice:
    horizon: float
    steps: int
    kind: str

    @property
    def dt(self) -> float:
        return self.horizon / self.steps

    @property
    def sqrt_dt(self) -> float:
        return math.sqrt(self.dt)

    def time(self, level: int) -> float:
        return level * self.horizon / self.steps

    def node_count(self, level: int) -> int:
        return level + 1 if self.kind == RECOMBINING else 1 << level

    def up_counts(self, level: int) -> np.ndarray:
        if self.kind == RECOMBINING:
            return np.arange(level + 1, dtype=np.int64)
        return np.bitwise_count(np.arange(1 << level, dtype=np.int64)).astype(np.int64)

    def states(self, level: int) -> np.ndarray:
        """Brownian state of every node at ``level``, derived from up-counts."""
        return (2 * self.up_counts(level) - level) * self.sqrt_dt

    def probabilities(self, level: int) -> np.ndarray:
        """Probability of reaching each node at ``level``."""
        if self.kind == FULL_TREE:
            return np.full(1 << level, 0.5 ** level)
        w = np.ones(1)
        for _ in range(level):
            nxt = np.zeros(w.size + 1)
            nxt[:-1] += 0.5 * w
            nxt[1:] += 0.5 * w
            w = nxt
        return w

    def children(self, level: int) -> tuple[np.ndarray, np.ndarray]:
        """Indices (down, up) of the children of each node at ``level``."""
        idx = np.arange(self.node_count(level), dtype=np.int64)
        if self.kind == RECOMBINING:
            return idx, idx + 1
        return 2 * idx, 2 * idx + 1

    def _split(self, level: int, next_values) -> tuple[np.ndarray, np.ndarray]:
        if not 0 <= level < self.steps:
            raise ValueError(f"level {level} outside [0, {self.steps - 1}]")
        v = np.asarray(next_values, dtype=float)
        expected = self.node_count(level + 1)
        if v.shape[-1:] != (expected,):
            raise ValueError(
                f"level {level + 1} has {expected} nodes, got values of shape {v.shape}"
            )
        if self.kind == RECOMBINING:
            return v[..., :-1], v[..., 1:]
        return v[..., 0::2], v[..., 1::2]


def build_lattice(T: float, N: int, kind: str = RECOMBINING) -> Lattice:
    if not (math.isfinite(T) and T > 0):
        raise ValueError("horizon T must be finite and positive")
    if int(N) != N or N < 1:
        raise ValueError("step count N must be an integer >= 1")
    if kind not in (RECOMBINING, FULL_TREE):
        raise ValueError(f"unknown lattice kind {kind!r}")
    if kind == FULL_TREE and N > MAX_FULL_TREE_STEPS:
        raise ValueError(
            f"full_tree with N={N} would need 2**{N} terminal nodes; the limit is N <= {MAX_FULL_TREE_STEPS}"
        )
    return Lattice(float(T), int(N), kind)


def cond_expect(lat: Lattice, level: int, next_values) -> np.ndarray:
    """Conditional expectation given the node at ``level``."""
    down, up = lat._split(level, next_values)
    return 0.5 * (up + down)


def cond_expect_dw(lat: Lattice, level: int, next_values) -> np.ndarray:
    """Martingale-increment integrand ``E[Y dW | node] / dt``."""
    down, up = lat._split(level, next_values)
    return (up - down) / (2.0 * lat.sqrt_dt)
