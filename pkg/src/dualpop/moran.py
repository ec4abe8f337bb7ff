"""Finite two-level Moran system: exact-event simulation and observables.

``N2`` demes of ``N1`` individuals each, ``K`` types. With ``x = n / N1`` the
type frequencies of a deme, the transitions are

* mutation ``i -> j`` in a deme at rate ``clock * eta * m[i, j] * x_i``;
* resampling and selection, an ``i`` replaced by a copy of a ``j != i`` in
  the same deme, at rate ``clock * eta * ((N1-1)*gamma1/2 + s1*V1[j]) * x_i * x_j``;
* migration: every individual at rate ``c`` is replaced by a copy of an
  individual drawn uniformly from the pooled population (its own deme
  included);
* deme replacement: for each ordered pair ``src != tgt`` the target deme is
  overwritten by a copy of the source at rate
  ``(s2 * V2(x_src) + gamma2/2 * (N2-1)) / N2``.

``clock`` is ``N1`` for ``time_unit="diffusion"`` (the default), which puts
time on the same scale as the dual and the density equation, and ``1`` for
``time_unit="moran"``.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from . import _morankernel as MK
from .dual import DualState, Estimate, MomentQuery
from .model import (
    DiracAtDeme,
    FiniteMixture,
    ModelParams,
    TwoTypeGridDensity,
    validate_params,
)
from .parallel import RunningStats, chunk_bounds, replicate_seeds

__all__ = [
    "DemeState",
    "PopulationState",
    "MoranEvent",
    "MoranAbsorbed",
    "MoranTrajectory",
    "MoranRun",
    "moran_event_rates",
    "apply_moran_event",
    "step_moran",
    "simulate_moran",
    "sample_population",
    "moran_replicates",
    "empirical_moment",
    "estimate_forward",
]

TIME_UNITS = ("diffusion", "moran")


class MoranAbsorbed(RuntimeError):
    """No event of the Moran system is enabled."""


def _clock(N1: int, time_unit: str) -> float:
    if time_unit not in TIME_UNITS:
        raise ValueError(f"time_unit must be one of {TIME_UNITS}")
    return float(N1) if time_unit == "diffusion" else 1.0


# ---------------------------------------------------------------------------
# states
# ---------------------------------------------------------------------------


def _counts(a) -> np.ndarray:
    arr = np.array(a, dtype=np.int64)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class DemeState:
    """Type counts of one deme."""

    counts: np.ndarray

    def __post_init__(self):
        c = _counts(self.counts)
        if c.ndim != 1 or c.size < 1 or np.any(c < 0) or c.sum() < 1:
            raise ValueError(f"invalid deme counts {self.counts!r}")
        object.__setattr__(self, "counts", c)

    @property
    def N1(self) -> int:
        return int(self.counts.sum())

    @property
    def K(self) -> int:
        return int(self.counts.size)

    @property
    def freqs(self) -> np.ndarray:
        return self.counts / self.N1

    def __eq__(self, other):
        return isinstance(other, DemeState) and np.array_equal(self.counts, other.counts)


@dataclass(frozen=True, eq=False)
class PopulationState:
    """All demes and the current time."""

    demes: tuple
    time: float = 0.0

    def __post_init__(self):
        demes = tuple(d if isinstance(d, DemeState) else DemeState(d) for d in self.demes)
        if not demes:
            raise ValueError("population needs at least one deme")
        if len({(d.N1, d.K) for d in demes}) != 1:
            raise ValueError("all demes must have the same size and type count")
        object.__setattr__(self, "demes", demes)
        object.__setattr__(self, "time", float(self.time))

    @classmethod
    def from_counts(cls, counts, time: float = 0.0) -> "PopulationState":
        return cls(tuple(np.asarray(counts)), time)

    @property
    def N1(self) -> int:
        return self.demes[0].N1

    @property
    def N2(self) -> int:
        return len(self.demes)

    @property
    def K(self) -> int:
        return self.demes[0].K

    @property
    def counts(self) -> np.ndarray:
        return np.stack([d.counts for d in self.demes])

    def to_dict(self) -> dict:
        return {"time": self.time, "demes": self.counts.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "PopulationState":
        return cls.from_counts(d["demes"], d.get("time", 0.0))

    def __eq__(self, other):
        return (isinstance(other, PopulationState) and self.time == other.time
                and np.array_equal(self.counts, other.counts))


# ---------------------------------------------------------------------------
# events
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MoranEvent:
    """One transition with its rate.

    ``kind`` is ``"mutate"`` (``types = (i, j)``, an ``i`` becomes ``j``),
    ``"resample"`` (an ``i`` is replaced by a copy of a ``j`` in the same
    deme), ``"migrate"`` (an ``i`` in ``demes[0]`` is replaced by a ``j``
    from the pool) or ``"replace"`` (``demes = (src, tgt)``). Types are
    0-based.
    """

    kind: str
    demes: tuple
    types: tuple
    rate: float


def moran_event_rates(state: PopulationState, p: ModelParams,
                      time_unit: str = "diffusion") -> list[MoranEvent]:
    """Every enabled transition of ``state`` with its exact rate.

    Deme replacement is listed for every ordered pair of distinct demes,
    including pairs with identical content.
    """
    if p.K != state.K:
        raise ValueError(f"state has K={state.K}, parameters K={p.K}")
    N1, N2, K = state.N1, state.N2, state.K
    clk = _clock(N1, time_unit) * p.eta
    n = state.counts
    x = n / N1
    P = n.sum(axis=0)
    Ntot = N1 * N2
    a = (N1 - 1) * p.gamma1 / 2.0
    out = []
    for d in range(N2):
        for i in range(K):
            if n[d, i] == 0:
                continue
            for j in range(K):
                if j == i:
                    continue
                r = clk * p.m[i, j] * x[d, i]
                if r > 0:
                    out.append(MoranEvent("mutate", (d,), (i, j), r))
                r = clk * (a + p.s1 * p.V1[j]) * x[d, i] * x[d, j]
                if r > 0:
                    out.append(MoranEvent("resample", (d,), (i, j), r))
                r = p.c * n[d, i] * P[j] / Ntot
                if r > 0:
                    out.append(MoranEvent("migrate", (d,), (i, j), r))
    for src in range(N2):
        r = (p.s2 * p.V2(x[src]) + p.gamma2 / 2.0 * (N2 - 1)) / N2
        if r <= 0:
            continue
        for tgt in range(N2):
            if tgt != src:
                out.append(MoranEvent("replace", (src, tgt), (), r))
    return out


def apply_moran_event(state: PopulationState, ev: MoranEvent,
                      elapsed: float = 0.0) -> PopulationState:
    n = state.counts.copy()
    if ev.kind == "replace":
        src, tgt = ev.demes
        n[tgt] = n[src]
    else:
        (d,), (i, j) = ev.demes, ev.types
        n[d, i] -= 1
        n[d, j] += 1
    return PopulationState.from_counts(n, state.time + elapsed)


def step_moran(state: PopulationState, p: ModelParams, rng: np.random.Generator,
               time_unit: str = "diffusion") -> tuple[PopulationState, float]:
    """Draw the waiting time and the next event, and apply it.

    Raises
    ------
    MoranAbsorbed
        If the total rate is zero.
    """
    events = moran_event_rates(state, p, time_unit)
    rates = np.array([e.rate for e in events])
    total = rates.sum() if rates.size else 0.0
    if total <= 0:
        raise MoranAbsorbed("no enabled event")
    dt = rng.exponential(1.0 / total)
    k = min(int(np.searchsorted(np.cumsum(rates), rng.random() * total, side="right")),
            len(events) - 1)
    return apply_moran_event(state, events[k], dt), dt


# ---------------------------------------------------------------------------
# observables
# ---------------------------------------------------------------------------


def _set_partitions(items):
    if not items:
        yield []
        return
    first, rest = items[0], items[1:]
    for part in _set_partitions(rest):
        yield [[first]] + part
        for b in range(len(part)):
            yield part[:b] + [[first] + part[b]] + part[b + 1:]


def _factorial(n: int) -> int:
    out = 1
    for k in range(2, n + 1):
        out *= k
    return out


def empirical_moment(counts, query, distinct: bool = True) -> np.ndarray:
    """Moment ``H(Xi, G)`` of the empirical deme distribution.

    Parameters
    ----------
    counts : int array (..., N2, K)
        Deme counts; leading axes are batch axes.
    query : MomentQuery or DualState
    distinct : bool
        ``True`` assigns the query's deme labels to distinct demes (averaging
        over injective assignments), which is the finite-``N2`` moment. With
        ``False`` labels are assigned independently with replacement, i.e.
        the moment of the measure ``Xi`` itself.

    Returns
    -------
    array of shape ``counts.shape[:-2]``
    """
    st = query.initial if isinstance(query, MomentQuery) else query
    n = np.asarray(counts, dtype=float)
    N1 = n.sum(axis=-1, keepdims=True)
    x = n / N1
    N2, K = n.shape[-2:]
    if K != st.K:
        raise ValueError(f"counts have K={K}, query K={st.K}")
    bits = (st.cells[..., None] >> np.arange(K, dtype=np.uint64)) & np.uint64(1)
    # mass[..., demes, row, col] = x_d(A_{row, col})
    mass = np.einsum("...dk,rck->...drc", x, bits.astype(float))
    labels = list(dict.fromkeys(st.deme.tolist()))
    if len(labels) > N2 and distinct:
        return np.zeros(n.shape[:-2])
    # f[label][..., d, row]
    f = {lab: np.prod(mass[..., st.deme == lab], axis=-1) for lab in labels}
    batch = n.shape[:-2]
    S = st.cells.shape[0]
    if S == 0:
        return np.zeros(batch)
    if not labels:
        return np.ones(batch)
    if not distinct:
        out = np.ones(batch + (S,))
        for lab in labels:
            out *= f[lab].mean(axis=-2)
        return out.sum(axis=-1)
    k = len(labels)
    norm = 1.0
    for i in range(k):
        norm *= N2 - i
    total = np.zeros(batch + (S,))
    for part in _set_partitions(labels):
        coef = 1.0
        term = np.ones(batch + (S,))
        for block in part:
            coef *= (-1) ** (len(block) - 1) * _factorial(len(block) - 1)
            g = np.ones_like(f[block[0]])
            for lab in block:
                g = g * f[lab]
            term *= g.sum(axis=-2)
        total += coef * term
    return (total / norm).sum(axis=-1)


def _observable(obs, state: PopulationState) -> float:
    if callable(obs) and not isinstance(obs, (MomentQuery, DualState)):
        return float(obs(state))
    return float(empirical_moment(state.counts, obs))


@dataclass(frozen=True)
class MoranTrajectory:
    times: np.ndarray
    values: dict
    final: PopulationState
    absorbed: bool
    events: int


def simulate_moran(state0: PopulationState, p: ModelParams, t_end: float,
                   observables: Mapping[str, object], rng: np.random.Generator,
                   checkpoints=None, time_unit: str = "diffusion") -> MoranTrajectory:
    """Run the reference event loop and record observables at checkpoints.

    Parameters
    ----------
    observables : mapping of id to a MomentQuery, DualState or callable
        Callables receive the ``PopulationState``.
    checkpoints : sequence of float, optional
        Times in ``[0, t_end]``; defaults to ``[0, t_end]``. The recorded
        state at a checkpoint is the state in force at that time.
    """
    times = np.asarray([0.0, t_end] if checkpoints is None else checkpoints, dtype=float)
    if np.any(np.diff(times) < 0) or np.any(times > t_end):
        raise ValueError("checkpoints must be sorted and not exceed t_end")
    vals = {k: np.empty(times.size) for k in observables}
    st = state0
    t0 = state0.time
    ti = 0
    absorbed = False
    nev = 0

    def record(s):
        for k, obs in observables.items():
            vals[k][ti] = _observable(obs, s)

    while ti < times.size:
        try:
            nxt, dt = step_moran(st, p, rng, time_unit)
        except MoranAbsorbed:
            absorbed = True
            while ti < times.size:
                record(st)
                ti += 1
            break
        while ti < times.size and nxt.time - t0 > times[ti]:
            record(st)
            ti += 1
        if ti < times.size:
            st = nxt
            nev += 1
    return MoranTrajectory(times, vals, st, absorbed, nev)


# ---------------------------------------------------------------------------
# initial states
# ---------------------------------------------------------------------------


def _round_counts(w, N1: int) -> np.ndarray:
    """Largest-remainder rounding of ``N1 * w`` to integers summing to ``N1``."""
    raw = np.asarray(w, dtype=float) * N1
    base = np.floor(raw).astype(np.int64)
    short = N1 - int(base.sum())
    if short > 0:
        order = np.argsort(-(raw - base), kind="stable")
        base[order[:short]] += 1
    return base


def sample_population(nu0, N1: int, N2: int, rng: np.random.Generator) -> PopulationState:
    """Draw ``N2`` independent demes from the initial law ``nu0``.

    A deme at type distribution ``w`` gets counts ``N1 * w`` rounded by
    largest remainder, so a Dirac initial law gives a deterministic state.
    Grid densities are sampled through their atoms and cells.
    """
    if isinstance(nu0, (DiracAtDeme, FiniteMixture)):
        comps = nu0.components()
        ws = np.array([w for w, _ in comps])
        idx = rng.choice(len(comps), size=N2, p=ws / ws.sum())
        rows = [_round_counts(comps[i][1].weights, N1) for i in idx]
    elif isinstance(nu0, TwoTypeGridDensity):
        g = nu0.grid
        probs = np.concatenate([[g.atom0, g.atom1], g.cells * g.dx])
        probs = np.clip(probs, 0, None)
        idx = rng.choice(probs.size, size=N2, p=probs / probs.sum())
        u = rng.random(N2)
        xs = np.where(idx == 0, 0.0, np.where(idx == 1, 1.0, (idx - 2 + u) * g.dx))
        rows = [_round_counts([x, 1 - x], N1) for x in xs]
    else:
        raise TypeError(f"unsupported initial measure {type(nu0).__name__}")
    return PopulationState.from_counts(np.stack(rows))


# ---------------------------------------------------------------------------
# compiled replicates
# ---------------------------------------------------------------------------


@dataclass
class MoranRun:
    times: np.ndarray
    counts: np.ndarray  # (replicates, times, N2, K)
    absorbed: np.ndarray
    events: np.ndarray


def moran_replicates(initial, p: ModelParams, times, replicates: int, seed: int, *,
                     N1: int | None = None, N2: int | None = None,
                     time_unit: str = "diffusion", threads: int = 1,
                     chunk: int = 256) -> MoranRun:
    """Run independent Moran populations with the compiled kernel.

    Parameters
    ----------
    initial : PopulationState or initial measure
        A fixed start, or a law from which each replicate draws its own
        ``N2`` demes of size ``N1``.
    times : sequence of float
        Sorted checkpoints.
    seed : int
        Master seed. Replicate ``i`` derives its initial draw and its event
        stream from ``(seed, i)`` only.
    """
    validate_params(p)
    times = np.ascontiguousarray(np.atleast_1d(times), dtype=np.float64)
    if np.any(times < 0) or np.any(np.diff(times) < 0):
        raise ValueError("times must be nonnegative and sorted")
    if isinstance(initial, PopulationState):
        N1, N2 = initial.N1, initial.N2
        init = np.broadcast_to(initial.counts, (replicates, N2, p.K)).copy()
    else:
        if N1 is None or N2 is None:
            raise ValueError("N1 and N2 are required when starting from a law")
        init_seeds = replicate_seeds(seed, replicates, key=1)
        init = np.stack([sample_population(nu0=initial, N1=N1, N2=N2,
                                           rng=np.random.default_rng(int(s))).counts
                         for s in init_seeds])
    if init.shape[-1] != p.K:
        raise ValueError(f"initial state has K={init.shape[-1]}, parameters K={p.K}")
    clk = _clock(N1, time_unit) * p.eta
    coef, off, masks = p.V2.packed()
    seeds = replicate_seeds(seed, replicates, key=0)
    snaps = np.empty((replicates, times.size, N2, p.K), dtype=np.int64)
    absorbed = np.zeros(replicates, dtype=np.bool_)
    events = np.zeros(replicates, dtype=np.int64)
    m = np.ascontiguousarray(p.m, dtype=np.float64)
    sv1 = np.ascontiguousarray(p.s1 * p.V1, dtype=np.float64)

    def work(bounds):
        a, b = bounds
        MK.run_moran(init[a:b], seeds[a:b], N1, times, m, sv1,
                     (N1 - 1) * p.gamma1 / 2.0, clk / N1**2, clk / N1, p.c, p.s2,
                     p.gamma2 / 2.0, coef, off, masks,
                     snaps[a:b], absorbed[a:b], events[a:b])

    bounds = chunk_bounds(replicates, chunk)
    if threads and threads > 1:
        with ThreadPoolExecutor(threads) as ex:
            list(ex.map(work, bounds))
    else:
        for bd in bounds:
            work(bd)
    return MoranRun(times, snaps, absorbed, events)


def estimate_forward(query, initial, p: ModelParams, t, replicates: int, seed: int, *,
                     N1: int | None = None, N2: int | None = None, distinct: bool = True,
                     time_unit: str = "diffusion", threads: int = 1):
    """Monte Carlo estimate of ``E H(Xi_t, G)`` from Moran replicates.

    Returns an ``Estimate`` for scalar ``t`` and a list otherwise.
    """
    if replicates < 2:
        raise ValueError("replicates must be at least 2")
    scalar = np.ndim(t) == 0
    run = moran_replicates(initial, p, t, replicates, seed, N1=N1, N2=N2,
                           time_unit=time_unit, threads=threads)
    out = []
    for q, tq in enumerate(run.times):
        v = empirical_moment(run.counts[:, q], query, distinct=distinct)
        acc = RunningStats()
        for a, b in chunk_bounds(v.size, 4096):
            acc = acc.merge(RunningStats.of(v[a:b]))
        out.append(Estimate(float(tq), acc.mean, acc.stderr, acc.count))
    return out[0] if scalar else out
