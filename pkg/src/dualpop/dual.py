"""Set-valued dual process: states, transitions, evaluation and Monte Carlo.

A dual state is a finite disjoint union of product sets. All summands share
one index frame of (deme, rank) cells, and every transition acts on the same
cells of every summand at once, which keeps the summands disjoint.

Rates (per event):

* level-I selection: ``eta * s1 * w`` per rank and per indicator component
  ``w * 1_B`` of ``V1``;
* mutation: ``eta * m[l, k]`` per rank and ordered type pair, acting as the
  preimage of the map ``l -> k``;
* level-I coalescence: ``eta * gamma1`` per unordered rank pair in a deme;
* migration: ``c`` per rank to a fresh deme (infinite mode), or ``c / N2``
  per rank and other deme (finite mode);
* level-II selection: ``s2 * s2j`` per occupied deme and ``V2`` term
  (infinite mode), or ``s2 * s2j / N2`` per occupied target and other
  source deme (finite mode);
* level-II coalescence: ``gamma2`` per unordered pair of occupied demes,
  times ``(N2 - 1) / N2`` in finite mode.
"""
from __future__ import annotations

import math
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import _dualkernel as K_
from .model import (
    DiracAtDeme,
    FiniteMixture,
    ModelParams,
    TwoTypeGridDensity,
    TypeSubset,
    decompose_fitness1,
    full_mask,
)
from .parallel import RunningStats, chunk_bounds, replicate_seeds

__all__ = [
    "InternalConsistencyError",
    "DualState",
    "DualEvent",
    "MomentQuery",
    "Estimate",
    "FixationEstimate",
    "parse_query",
    "dual_event_rates",
    "apply_event",
    "evaluate_dual",
    "estimate_moment",
    "estimate_fixation",
    "pack_params",
    "pack_measure",
]

EVAL_TOL = 1e-9
FAMILIES = ("select1", "mutate", "coalesce1", "migrate", "select2", "coalesce2")


class InternalConsistencyError(RuntimeError):
    """A dual value left ``[0, 1]``, which means disjointness was violated."""


# ---------------------------------------------------------------------------
# state
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class DualState:
    """Disjoint union of product sets on a shared (deme, rank) frame.

    Parameters
    ----------
    cells : ndarray of uint64, shape (S, C)
        ``cells[r, j]`` is the subset of summand ``r`` at column ``j``.
    deme : ndarray of int64, shape (C,)
        Deme label of each column; columns sharing a label are its ranks.
    K : int
        Number of types.
    mode : {"infinite", "finite"}
    N2 : int or None
        Number of demes in finite mode; labels then lie in ``0..N2-1``.
    time : float
    next_label : int
        First label never used so far (fresh demes in infinite mode).
    """

    cells: np.ndarray
    deme: np.ndarray
    K: int
    mode: str = "infinite"
    N2: int | None = None
    time: float = 0.0
    next_label: int = 0

    def __post_init__(self):
        cells = np.ascontiguousarray(self.cells, dtype=np.uint64)
        deme = np.ascontiguousarray(self.deme, dtype=np.int64)
        if cells.ndim != 2 or cells.shape[1] != deme.size:
            raise ValueError("cells must be (summands, columns) matching deme labels")
        if self.mode not in ("infinite", "finite"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.mode == "finite":
            if self.N2 is None or self.N2 < 1:
                raise ValueError("finite mode needs N2 >= 1")
            if deme.size and (deme.min() < 0 or deme.max() >= self.N2):
                raise ValueError("finite-mode deme labels must lie in 0..N2-1")
        full = full_mask(self.K)
        if np.any(cells > np.uint64(full)):
            raise ValueError("cell outside the type space")
        nl = max(int(self.next_label), int(deme.max()) + 1 if deme.size else 0)
        object.__setattr__(self, "cells", cells)
        object.__setattr__(self, "deme", deme)
        object.__setattr__(self, "next_label", nl)

    # construction ----------------------------------------------------------

    @classmethod
    def from_products(cls, K: int, summands: Sequence, mode: str = "infinite",
                      N2: int | None = None, labels: Sequence[int] | None = None,
                      trim: bool = True) -> "DualState":
        """Build from nested lists ``summand -> deme -> rank -> subset``.

        Subsets may be ``TypeSubset``, indicator strings like ``"(10)"``, or
        iterables of 1-based types. All summands must share the frame shape.
        """
        if not summands:
            return cls(np.zeros((0, 0), np.uint64), np.zeros(0, np.int64), K, mode, N2)
        shape = [len(d) for d in summands[0]]
        labels = list(range(len(shape))) if labels is None else list(labels)
        if len(labels) != len(shape):
            raise ValueError("one label per deme required")
        rows = []
        for s in summands:
            if [len(d) for d in s] != shape:
                raise ValueError("all summands must share the same frame")
            rows.append([_as_subset(a, K).mask for d in s for a in d])
        deme = [labels[i] for i, n in enumerate(shape) for _ in range(n)]
        st = cls(np.array(rows, dtype=np.uint64).reshape(len(rows), len(deme)),
                 np.array(deme, dtype=np.int64), K, mode, N2)
        return st.trimmed() if trim else st

    def trimmed(self) -> "DualState":
        cells, deme = K_.trim(self.cells, self.deme, np.uint64(full_mask(self.K)))
        return self._with(cells, deme)

    def _with(self, cells, deme, time=None, next_label=None) -> "DualState":
        return DualState(cells, deme, self.K, self.mode, self.N2,
                         self.time if time is None else time,
                         self.next_label if next_label is None else next_label)

    # views -----------------------------------------------------------------

    @property
    def n_summands(self) -> int:
        return self.cells.shape[0]

    @property
    def n_columns(self) -> int:
        return self.cells.shape[1]

    @property
    def frame(self) -> list[tuple[int, int]]:
        """Occupied demes as ``(label, rank count)`` sorted by label."""
        labels, counts = np.unique(self.deme, return_counts=True)
        return [(int(a), int(b)) for a, b in zip(labels, counts)]

    @property
    def summands(self) -> list[list[list[TypeSubset]]]:
        """Nested ``summand -> deme (frame order) -> rank -> TypeSubset``."""
        out = []
        for r in range(self.n_summands):
            out.append([[TypeSubset(int(self.cells[r, j]), self.K)
                         for j in np.flatnonzero(self.deme == lab)]
                        for lab, _ in self.frame])
        return out

    def product_sets(self) -> list[set]:
        """Each summand as an explicit set of points of ``I^C`` (small frames only)."""
        import itertools
        out = []
        for r in range(self.n_summands):
            axes = [TypeSubset(int(a), self.K).members for a in self.cells[r]]
            out.append(set(itertools.product(*axes)))
        return out

    def __str__(self) -> str:
        if self.n_summands == 0:
            return "∅"
        if self.n_columns == 0:
            return "I"
        parts = []
        for s in self.summands:
            parts.append(" ⊗₂ ".join(
                f"[{' ⊗₁ '.join(str(a) for a in d)}]_{lab}"
                for d, (lab, _) in zip(s, self.frame)))
        return "  ∪  ".join(parts)


def _as_subset(a, K: int) -> TypeSubset:
    if isinstance(a, TypeSubset):
        if a.K != K:
            raise ValueError("subset over a different type space")
        return a
    if isinstance(a, str):
        b = TypeSubset.parse(a)
        if b.K != K:
            raise ValueError(f"{a!r} has {b.K} positions, expected {K}")
        return b
    return TypeSubset.of(a, K)


@dataclass(frozen=True, eq=False)
class MomentQuery:
    """Initial dual state of a moment computation."""

    initial: DualState
    description: str = ""

    @property
    def K(self) -> int:
        return self.initial.K

    def to_dict(self) -> dict:
        st = self.initial
        return {
            "K": st.K,
            "mode": st.mode,
            "N2": st.N2,
            "frame": [n for _, n in st.frame],
            "summands": [[[list(a.members) for a in d] for d in s] for s in st.summands],
            "description": self.description,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MomentQuery":
        K = int(d["K"])
        if "shorthand" in d:
            q = parse_query(d["shorthand"], mode=d.get("mode", "infinite"), N2=d.get("N2"))
            return cls(q.initial, d.get("description", q.description))
        summands = [[[list(a) for a in dm] for dm in s] for s in d["summands"]]
        frame = d.get("frame")
        if frame is not None and summands and [len(x) for x in summands[0]] != list(frame):
            raise ValueError("query frame does not match its summands")
        st = DualState.from_products(K, summands, mode=d.get("mode", "infinite"), N2=d.get("N2"))
        return cls(st, d.get("description", ""))


_DEME_RE = re.compile(r"deme\s*\[([^\]]*)\]")


def parse_query(text: str, mode: str = "infinite", N2: int | None = None) -> MomentQuery:
    """Parse shorthand like ``"deme[(10),(01)] deme[(10)] + deme[(01)]"``.

    Each ``deme[...]`` group lists the ranks of one deme; groups side by side
    form a product over demes; ``+`` separates disjoint summands. A bare
    indicator such as ``"(10)"`` means a single deme with a single rank.
    """
    summands = []
    for part in text.split("+"):
        part = part.strip()
        groups = _DEME_RE.findall(part)
        if not groups:
            if not part:
                raise ValueError(f"empty summand in {text!r}")
            groups = [part]
        summands.append([[g.strip() for g in grp.split(",") if g.strip()] for grp in groups])
    K = TypeSubset.parse(summands[0][0][0]).K
    st = DualState.from_products(K, summands, mode=mode, N2=N2)
    return MomentQuery(st, text.strip())


# ---------------------------------------------------------------------------
# parameters and measures for the kernels
# ---------------------------------------------------------------------------


def pack_params(p: ModelParams, mode: str = "infinite", N2: int | None = None):
    """Flatten ``p`` into the tuple consumed by the compiled kernels."""
    comps = decompose_fitness1(p.V1)
    sel1_masks = np.array([m for _, m in comps], dtype=np.uint64)
    sel1_rates = np.array([p.eta * p.s1 * w for w, _ in comps], dtype=np.float64)
    if p.s1 == 0:
        sel1_masks = sel1_masks[:0]
        sel1_rates = sel1_rates[:0]
    ls, ks, rs = [], [], []
    for l in range(p.K):
        for k in range(p.K):
            if l != k and p.m[l, k] > 0:
                ls.append(l)
                ks.append(k)
                rs.append(p.eta * p.m[l, k])
    coef, off, masks = p.V2.packed()
    sel2_rates = p.s2 * coef
    if p.s2 == 0:
        sel2_rates = np.zeros(0)
        off = off[:1]
    finite = mode == "finite"
    if finite and (N2 is None or N2 < 1):
        raise ValueError("finite mode needs N2 >= 1")
    return (np.uint64(full_mask(p.K)), sel1_masks, sel1_rates,
            np.array(ls, dtype=np.int64), np.array(ks, dtype=np.int64),
            np.array(rs, dtype=np.float64), float(p.eta * p.gamma1), float(p.c),
            np.ascontiguousarray(sel2_rates, dtype=np.float64), off.astype(np.int64), masks,
            float(p.gamma2), bool(finite), int(N2 if finite else 1))


_QUAD_NODES = 4
_ITAB = 96


def pack_measure(nu0, K: int):
    """Flatten an initial measure into the tuple consumed by the kernels."""
    empty2 = np.zeros((0, 0))
    empty1 = np.zeros(0)
    if isinstance(nu0, (DiracAtDeme, FiniteMixture)):
        if nu0.K != K:
            raise ValueError(f"initial measure over K={nu0.K}, expected {K}")
        comps = nu0.components()
        w = np.array([c[0] for c in comps], dtype=np.float64)
        pts = np.array([c[1].weights for c in comps], dtype=np.float64)
        if K <= 12:
            masks = np.arange(1 << K)
            bits = (masks[:, None] >> np.arange(K)[None, :]) & 1
            tab = pts @ bits.T.astype(np.float64)
        else:
            tab = np.zeros((len(w), 0))
        return (0, w, pts, np.ascontiguousarray(tab), empty1, empty1, 0.0, 0.0,
                empty2, empty1, 1)
    if isinstance(nu0, TwoTypeGridDensity):
        if K != 2:
            raise ValueError("grid initial measures need K = 2")
        g = nu0.grid
        gl, gw = np.polynomial.legendre.leggauss(_QUAD_NODES)
        x = (g.centers[:, None] + 0.5 / g.M * gl[None, :]).ravel()
        w = (g.cells[:, None] / g.M * 0.5 * gw[None, :]).ravel()
        a = np.arange(_ITAB)
        lx = np.log(np.clip(x, 1e-300, None))
        l1x = np.log(np.clip(1.0 - x, 1e-300, None))
        # itab[a, b] = sum_q w_q x_q^a (1-x_q)^b + atoms
        pa = np.exp(a[:, None] * lx[None, :])
        pb = np.exp(a[:, None] * l1x[None, :])
        itab = (pa * w[None, :]) @ pb.T
        itab[0, :] += g.atom0
        itab[:, 0] += g.atom1
        cdf = np.cumsum(np.concatenate([[g.atom0, g.atom1], g.cells / g.M]))
        return (1, empty1, empty2, empty2, x, w, g.atom0, g.atom1,
                np.ascontiguousarray(itab), cdf, g.M)
    raise TypeError(f"not an initial measure: {nu0!r}")


# ---------------------------------------------------------------------------
# transitions
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DualEvent:
    """One enabled transition.

    ``args`` by family (types 0-based, columns index ``DualState.cells``):

    * ``select1``: ``(column, B_mask)``
    * ``mutate``: ``(column, l, k)``
    * ``coalesce1``: ``(kept_column, removed_column)``
    * ``migrate``: ``(column, destination_label)``
    * ``select2``: ``(target_label, factor_masks, source_label)``
    * ``coalesce2``: ``(kept_label, merged_label)``

    In infinite mode ``destination_label`` and ``source_label`` are the
    state's ``next_label`` (a fresh deme).
    """

    kind: str
    args: tuple
    rate: float


def dual_event_rates(state: DualState, p: ModelParams) -> list[DualEvent]:
    """Enumerate every enabled transition of ``state`` with its rate."""
    out: list[DualEvent] = []
    C = state.n_columns
    if state.n_summands == 0 or C == 0:
        return out
    finite = state.mode == "finite"
    N2 = state.N2 or 1
    fresh = state.next_label
    for j in range(C):
        for w, B in decompose_fitness1(p.V1):
            if p.s1 > 0:
                out.append(DualEvent("select1", (j, B), p.eta * p.s1 * w))
    for j in range(C):
        for l in range(p.K):
            for k in range(p.K):
                if l != k and p.m[l, k] > 0:
                    out.append(DualEvent("mutate", (j, l, k), p.eta * p.m[l, k]))
    labels = [lab for lab, _ in state.frame]
    if p.gamma1 > 0:
        for lab in labels:
            cols = np.flatnonzero(state.deme == lab)
            for a in range(cols.size):
                for b in range(a + 1, cols.size):
                    out.append(DualEvent("coalesce1", (int(cols[a]), int(cols[b])), p.eta * p.gamma1))
    if p.c > 0:
        for j in range(C):
            if finite:
                for d in range(N2):
                    if d != state.deme[j]:
                        out.append(DualEvent("migrate", (j, d), p.c / N2))
            else:
                out.append(DualEvent("migrate", (j, fresh), p.c))
    if p.s2 > 0:
        for lab in labels:
            for coef, factors in p.V2.terms:
                if coef <= 0:
                    continue
                masks = tuple(b.mask for b in factors)
                if finite:
                    for src in range(N2):
                        if src != lab:
                            out.append(DualEvent("select2", (lab, masks, src), p.s2 * coef / N2))
                else:
                    out.append(DualEvent("select2", (lab, masks, fresh), p.s2 * coef))
    if p.gamma2 > 0:
        f = (N2 - 1) / N2 if finite else 1.0
        for a in range(len(labels)):
            for b in range(a + 1, len(labels)):
                if f > 0:
                    out.append(DualEvent("coalesce2", (labels[a], labels[b]), p.gamma2 * f))
    return out


def apply_event(state: DualState, event: DualEvent) -> DualState:
    """Apply ``event`` to every summand at once and trim the result."""
    full = np.uint64(full_mask(state.K))
    cells, deme = state.cells, state.deme
    nl = state.next_label
    kind, a = event.kind, event.args
    if kind == "select1":
        cells, deme = K_.apply_sel1(cells, deme, a[0], np.uint64(a[1]), full)
    elif kind == "mutate":
        cells, deme = K_.apply_mut(cells, deme, a[0], a[1], a[2], full)
    elif kind == "coalesce1":
        j1, j2 = min(a[0], a[1]), max(a[0], a[1])
        cells, deme = K_.apply_coal1(cells, deme, j1, j2, full)
    elif kind == "migrate":
        deme = deme.copy()
        deme[a[0]] = a[1]
        nl = max(nl, a[1] + 1)
    elif kind == "select2":
        tgt, masks, src = a
        facs = np.array(masks, dtype=np.uint64)
        if state.mode == "finite":
            cells, deme = K_.apply_sel2(cells, deme, tgt, src, src, True, facs, full)
        else:
            cells, deme = K_.apply_sel2(cells, deme, tgt, tgt, src, False, facs, full)
            nl = max(nl, src + 1)
    elif kind == "coalesce2":
        deme = K_.relabel(deme, a[1], a[0])
    else:
        raise ValueError(f"unknown event kind {kind!r}")
    return state._with(cells, deme, next_label=nl)


def evaluate_dual(state: DualState, nu0) -> float:
    """``H(nu0, G)``: sum over summands of products of per-deme integrals.

    Raises
    ------
    InternalConsistencyError
        If the value leaves ``[-1e-9, 1 + 1e-9]``.
    """
    v = float(K_.eval_set(state.cells, state.deme, pack_measure(nu0, state.K)))
    if not -EVAL_TOL <= v <= 1 + EVAL_TOL:
        raise InternalConsistencyError(f"dual value {v} outside [0, 1]")
    return v


# ---------------------------------------------------------------------------
# Monte Carlo
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Estimate:
    """Monte Carlo estimate of ``E H(nu0, G_t)``.

    ``replicates`` counts the replicates entering the mean; aborted overflow
    replicates are excluded and reported through ``overflow_fraction``.
    ``sampled_fraction`` is the share of replicates that continued pathwise
    after hitting the summand cap.
    """

    t: float
    value: float
    stderr: float
    replicates: int
    overflow_fraction: float = 0.0
    sampled_fraction: float = 0.0

    def __iter__(self):
        yield self.value
        yield self.stderr


@dataclass(frozen=True)
class FixationEstimate:
    value: float
    stderr: float
    replicates: int
    non_absorbed_fraction: float
    overflow_fraction: float = 0.0
    mean_stop_time: float = 0.0

    def __iter__(self):
        yield self.value
        yield self.stderr


@dataclass
class _Run:
    values: np.ndarray
    status: np.ndarray
    sampled: np.ndarray
    stop_time: np.ndarray
    events: np.ndarray
    peak: np.ndarray


MAX_FRAME = 100_000


def _run(query, nu0, p, times, replicates, seed, max_summands, on_overflow, threads,
         mode, N2, max_frame=MAX_FRAME, chunk=4096) -> _Run:
    st = query.initial if isinstance(query, MomentQuery) else query
    if st.K != p.K:
        raise ValueError(f"query over K={st.K}, parameters over K={p.K}")
    if on_overflow not in ("abort", "sample"):
        raise ValueError("on_overflow must be 'abort' or 'sample'")
    mode = mode or st.mode
    N2 = N2 if N2 is not None else st.N2
    if st.mode != mode or st.N2 != N2:
        st = DualState(st.cells, st.deme, st.K, mode, N2, st.time, st.next_label)
    prm = pack_params(p, mode, N2)
    meas = pack_measure(nu0, p.K)
    times = np.ascontiguousarray(times, dtype=np.float64)
    seeds = replicate_seeds(seed, replicates)
    n = replicates
    out = _Run(np.empty((n, times.size)), np.empty(n, np.int64), np.empty(n, np.bool_),
               np.empty(n), np.empty(n, np.int64), np.empty(n, np.int64))

    def work(bounds):
        a, b = bounds
        K_.run_replicates(seeds[a:b], st.cells, st.deme, st.next_label, times, prm, meas,
                          int(max_summands), on_overflow == "sample", int(max_frame),
                          out.values[a:b], out.status[a:b], out.sampled[a:b],
                          out.stop_time[a:b], out.events[a:b], out.peak[a:b])

    bounds = chunk_bounds(n, chunk)
    if threads and threads > 1:
        with ThreadPoolExecutor(threads) as ex:
            list(ex.map(work, bounds))
    else:
        for bd in bounds:
            work(bd)
    finite_vals = out.values[np.isfinite(out.values)]
    if finite_vals.size and (finite_vals.min() < -EVAL_TOL or finite_vals.max() > 1 + EVAL_TOL):
        raise InternalConsistencyError("a replicate produced a dual value outside [0, 1]")
    return out


def _stats(values: np.ndarray, chunk: int = 4096) -> RunningStats:
    acc = RunningStats()
    for a, b in chunk_bounds(values.size, chunk):
        acc = acc.merge(RunningStats.of(values[a:b]))
    return acc


def estimate_moment(query, nu0, p: ModelParams, t, replicates: int, seed: int, *,
                    max_summands: int = 10**6, on_overflow: str = "abort",
                    threads: int = 1, mode: str | None = None, N2: int | None = None,
                    max_frame: int = MAX_FRAME):
    """Estimate ``E H(nu0, G_t)`` by running independent dual trajectories.

    Parameters
    ----------
    query : MomentQuery or DualState
        The initial dual state.
    nu0 : initial measure
    p : ModelParams
    t : float or sequence of float
        Evaluation time(s); a sequence returns one estimate per time from the
        same trajectories.
    replicates : int
        At least 2.
    seed : int
        Master seed; replicate ``i`` uses a stream derived from ``(seed, i)``.
    max_summands : int
        Summand cap per replicate. Set storage above ``2**24`` words counts
        as exceeding the cap as well.
    on_overflow : {"abort", "sample"}
        ``"abort"`` drops a replicate that exceeds the cap and counts it as an
        overflow. ``"sample"`` keeps it: the trajectory continues on the bare
        frame and is evaluated by drawing one point from the initial law and
        testing membership, which is unbiased for the same expectation.
    threads : int
        Worker threads; results do not depend on it.
    mode, N2 : optional
        Override the query's deme mode.

    Returns
    -------
    Estimate or list of Estimate
    """
    if replicates < 2:
        raise ValueError("replicates must be at least 2")
    scalar = np.ndim(t) == 0
    times = np.atleast_1d(np.asarray(t, dtype=float))
    if np.any(times < 0) or np.any(np.diff(times) < 0):
        raise ValueError("times must be nonnegative and sorted")
    run = _run(query, nu0, p, times, replicates, seed, max_summands, on_overflow,
               threads, mode, N2, max_frame)
    ok = run.status != K_.ST_OVERFLOW
    of = 1.0 - ok.mean()
    sf = float(run.sampled.mean())
    ests = []
    for q, tq in enumerate(times):
        s = _stats(run.values[ok, q])
        v, se = (s.mean, s.stderr) if s.count else (math.nan, math.nan)
        ests.append(Estimate(float(tq), v, se, s.count, float(of), sf))
    return ests[0] if scalar else ests


def estimate_fixation(query, nu0, p: ModelParams, max_t: float, replicates: int, seed: int, *,
                      max_summands: int = 10**6, on_overflow: str = "abort",
                      threads: int = 1, mode: str | None = None,
                      N2: int | None = None, max_frame: int = MAX_FRAME) -> FixationEstimate:
    """Run the dual until it is absorbed or ``max_t`` and average its value.

    A replicate is absorbed when the state is empty, is the full space, or
    has no enabled transition (a single rank in a single deme without
    selection or mutation, for instance). Replicates still running at
    ``max_t`` contribute their value at ``max_t`` and are counted in
    ``non_absorbed_fraction``.
    """
    if replicates < 2:
        raise ValueError("replicates must be at least 2")
    run = _run(query, nu0, p, [float(max_t)], replicates, seed, max_summands, on_overflow,
               threads, mode, N2, max_frame)
    ok = run.status != K_.ST_OVERFLOW
    s = _stats(run.values[ok, 0])
    v, se = (s.mean, s.stderr) if s.count else (math.nan, math.nan)
    return FixationEstimate(v, se, s.count,
                            float(np.mean(run.status[ok] != K_.ST_ABSORBED)) if ok.any() else 1.0,
                            float(1.0 - ok.mean()),
                            float(run.stop_time[ok].mean()) if ok.any() else float("nan"))


def run_trajectories(query, nu0, p: ModelParams, times, replicates: int, seed: int, **kw) -> _Run:
    """Raw per-replicate output (values, status, events, peak summand counts)."""
    return _run(query, nu0, p, np.atleast_1d(np.asarray(times, float)), replicates, seed,
                kw.get("max_summands", 10**6), kw.get("on_overflow", "abort"),
                kw.get("threads", 1), kw.get("mode"), kw.get("N2"),
                kw.get("max_frame", MAX_FRAME))
