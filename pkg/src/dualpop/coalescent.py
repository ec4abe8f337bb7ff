"""Marked two-level coalescent of dual ranks and occupied sites.

A state lists the number of blocks at each occupied site. Transitions, with
rates taken exactly as stated for this process:

* a block leaves site ``i`` for a new site at rate ``c * n_i``, only when
  ``n_i > 1``;
* two blocks at site ``i`` merge at rate ``gamma1 * n_i * (n_i - 1)``;
* two sites merge (their blocks become co-located) at total rate
  ``gamma2 * k * (k - 1)``, uniformly over unordered pairs.

These totals are twice the per-pair conventions of the dual engine. The
absorbing classes do not depend on the factor.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .parallel import replicate_seeds

__all__ = [
    "CoalescentState",
    "CoalescentEvent",
    "CoalescentResult",
    "coalescent_rates",
    "apply_coalescent_event",
    "simulate_coalescent",
    "coalescent_replicates",
]


@dataclass(frozen=True)
class CoalescentState:
    """Block counts ``(n_1, ..., n_k)`` of the occupied sites."""

    blocks: tuple

    def __post_init__(self):
        b = tuple(int(n) for n in self.blocks)
        if not b or min(b) < 1:
            raise ValueError(f"every site needs at least one block, got {self.blocks!r}")
        object.__setattr__(self, "blocks", b)

    @property
    def k(self) -> int:
        return len(self.blocks)

    @property
    def total(self) -> int:
        return sum(self.blocks)

    def __str__(self) -> str:
        return f"({self.k},({','.join(map(str, self.blocks))}))"


@dataclass(frozen=True)
class CoalescentEvent:
    """``kind`` is ``"migrate"`` or ``"coalesce1"`` (``sites = (i,)``) or
    ``"coalesce2"`` (``sites = (i, j)``, ``i < j``)."""

    kind: str
    sites: tuple
    rate: float


def coalescent_rates(state: CoalescentState, c: float, gamma1: float,
                     gamma2: float) -> list[CoalescentEvent]:
    out = []
    for i, n in enumerate(state.blocks):
        if n > 1 and c * n > 0:
            out.append(CoalescentEvent("migrate", (i,), c * n))
        if gamma1 * n * (n - 1) > 0:
            out.append(CoalescentEvent("coalesce1", (i,), gamma1 * n * (n - 1)))
    k = state.k
    if gamma2 > 0 and k > 1:
        # total gamma2 k (k-1) over k (k-1) / 2 pairs
        for i in range(k):
            for j in range(i + 1, k):
                out.append(CoalescentEvent("coalesce2", (i, j), 2.0 * gamma2))
    return out


def apply_coalescent_event(state: CoalescentState, ev: CoalescentEvent) -> CoalescentState:
    b = list(state.blocks)
    if ev.kind == "migrate":
        (i,) = ev.sites
        b[i] -= 1
        b.append(1)
    elif ev.kind == "coalesce1":
        (i,) = ev.sites
        b[i] -= 1
    elif ev.kind == "coalesce2":
        i, j = ev.sites
        b[i] += b[j]
        del b[j]
    else:
        raise ValueError(f"unknown event kind {ev.kind!r}")
    return CoalescentState(tuple(b))


@dataclass(frozen=True)
class CoalescentResult:
    state: CoalescentState
    log: tuple  # (time, event) pairs
    absorbed: bool
    time: float

    @property
    def events(self) -> int:
        return len(self.log)

    @property
    def all_singletons(self) -> bool:
        return all(n == 1 for n in self.state.blocks)


def simulate_coalescent(state0: CoalescentState, c: float, gamma1: float, gamma2: float,
                        rng: np.random.Generator, max_events: int = 100_000) -> CoalescentResult:
    """Jump until no transition is enabled or ``max_events`` is reached."""
    st = state0
    t = 0.0
    log = []
    while True:
        evs = coalescent_rates(st, c, gamma1, gamma2)
        if not evs:
            return CoalescentResult(st, tuple(log), True, t)
        if len(log) >= max_events:
            return CoalescentResult(st, tuple(log), False, t)
        rates = np.array([e.rate for e in evs])
        total = rates.sum()
        t += rng.exponential(1.0 / total)
        k = min(int(np.searchsorted(np.cumsum(rates), rng.random() * total, side="right")),
                len(evs) - 1)
        st = apply_coalescent_event(st, evs[k])
        log.append((t, evs[k]))


def coalescent_replicates(state0: CoalescentState, c: float, gamma1: float, gamma2: float,
                          replicates: int, seed: int,
                          max_events: int = 100_000) -> list[CoalescentResult]:
    """Independent runs; replicate ``i`` is seeded from ``(seed, i)``."""
    seeds = replicate_seeds(seed, replicates, key=2)
    return [simulate_coalescent(state0, c, gamma1, gamma2, np.random.default_rng(int(s)),
                                max_events) for s in seeds]
