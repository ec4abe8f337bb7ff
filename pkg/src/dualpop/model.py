"""Parameter, fitness and initial-condition types shared by every engine.

Types are numbered ``1..K`` in all public interfaces (JSON, strings,
``TypeSubset.members``). Internally a subset is a bit mask in which bit
``i - 1`` marks type ``i``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

MAX_TYPES = 64
SIMPLEX_TOL = 1e-12
MASS_TOL = 1e-8

__all__ = [
    "MAX_TYPES",
    "InvalidParamsError",
    "TypeSubset",
    "LevelIIFitness",
    "ModelParams",
    "SimplexPoint",
    "GridDensity",
    "DiracAtDeme",
    "FiniteMixture",
    "TwoTypeGridDensity",
    "InitialMeasure",
    "full_mask",
    "validate_params",
    "eval_fitness2",
    "decompose_fitness1",
    "params_from_dict",
    "params_to_dict",
    "measure_from_dict",
    "measure_to_dict",
]


class InvalidParamsError(ValueError):
    """Raised when parameters or measures fail validation.

    Attributes
    ----------
    errors : list of str
        Every violation found, not only the first one.
    """

    def __init__(self, errors: Sequence[str]):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


def full_mask(K: int) -> int:
    """Bit mask of the full type set ``{1..K}``."""
    return (1 << K) - 1


# ---------------------------------------------------------------------------
# Type subsets
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TypeSubset:
    """A subset of the type space ``{1..K}`` stored as a bit mask.

    Parameters
    ----------
    mask : int
        Bit ``i - 1`` set iff type ``i`` is a member.
    K : int
        Size of the type space.
    """

    mask: int
    K: int

    def __post_init__(self):
        if not 1 <= self.K <= MAX_TYPES:
            raise ValueError(f"K must be in 1..{MAX_TYPES}, got {self.K}")
        if self.mask < 0 or self.mask > full_mask(self.K):
            raise ValueError(f"mask {self.mask:#x} outside {{1..{self.K}}}")

    @classmethod
    def of(cls, members: Iterable[int], K: int) -> "TypeSubset":
        """Build from 1-based type labels."""
        mask = 0
        for i in members:
            i = int(i)
            if not 1 <= i <= K:
                raise ValueError(f"type {i} outside 1..{K}")
            mask |= 1 << (i - 1)
        return cls(mask, K)

    @classmethod
    def full(cls, K: int) -> "TypeSubset":
        return cls(full_mask(K), K)

    @classmethod
    def empty(cls, K: int) -> "TypeSubset":
        return cls(0, K)

    @classmethod
    def parse(cls, text: str) -> "TypeSubset":
        """Parse indicator notation such as ``"(110)"`` or ``"110"``.

        Position ``i`` (1-based, left to right) is type ``i``.
        """
        s = text.strip()
        if s.startswith("(") and s.endswith(")"):
            s = s[1:-1]
        s = s.replace(" ", "")
        if not s or set(s) - {"0", "1"}:
            raise ValueError(f"bad indicator string {text!r}")
        return cls.of([i + 1 for i, ch in enumerate(s) if ch == "1"], len(s))

    @property
    def members(self) -> tuple[int, ...]:
        return tuple(i + 1 for i in range(self.K) if self.mask >> i & 1)

    @property
    def is_full(self) -> bool:
        return self.mask == full_mask(self.K)

    @property
    def is_empty(self) -> bool:
        return self.mask == 0

    def complement(self) -> "TypeSubset":
        return TypeSubset(full_mask(self.K) ^ self.mask, self.K)

    def _check(self, other: "TypeSubset"):
        if other.K != self.K:
            raise ValueError("type subsets over different type spaces")

    def __and__(self, other: "TypeSubset") -> "TypeSubset":
        self._check(other)
        return TypeSubset(self.mask & other.mask, self.K)

    def __or__(self, other: "TypeSubset") -> "TypeSubset":
        self._check(other)
        return TypeSubset(self.mask | other.mask, self.K)

    def __contains__(self, i: int) -> bool:
        return 1 <= i <= self.K and bool(self.mask >> (i - 1) & 1)

    def __len__(self) -> int:
        return bin(self.mask).count("1")

    def measure(self, weights: np.ndarray) -> float:
        """``mu(A)`` for a probability vector ``weights``."""
        w = np.asarray(weights, dtype=float)
        return float(sum(w[i - 1] for i in self.members))

    def __str__(self) -> str:
        return "(" + "".join("1" if self.mask >> i & 1 else "0" for i in range(self.K)) + ")"


# ---------------------------------------------------------------------------
# Fitness
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LevelIIFitness:
    """Polynomial deme fitness ``V2(mu) = sum_j s2j * prod_i mu(B_ji)``.

    Parameters
    ----------
    terms : tuple of (float, tuple of TypeSubset)
        Coefficients ``s2j >= 0`` and their factor subsets.
    """

    terms: tuple = ()

    @classmethod
    def from_terms(cls, terms: Iterable) -> "LevelIIFitness":
        return cls(tuple((float(c), tuple(f)) for c, f in terms))

    @classmethod
    def linear(cls, subset: TypeSubset, coef: float = 1.0) -> "LevelIIFitness":
        """``coef * mu(subset)``."""
        return cls(((float(coef), (subset,)),))

    @property
    def total(self) -> float:
        """Upper bound ``sum_j s2j``."""
        return float(sum(c for c, _ in self.terms))

    def __call__(self, weights) -> float:
        w = np.asarray(weights, dtype=float)
        out = 0.0
        for coef, factors in self.terms:
            prod = coef
            for b in factors:
                prod *= b.measure(w)
            out += prod
        return out

    def packed(self):
        """Arrays ``(coef, offsets, masks)`` for the compiled kernels."""
        coef = np.array([c for c, _ in self.terms], dtype=np.float64)
        offsets = np.zeros(len(self.terms) + 1, dtype=np.int64)
        masks = []
        for j, (_, factors) in enumerate(self.terms):
            offsets[j + 1] = offsets[j] + len(factors)
            masks.extend(b.mask for b in factors)
        return coef, offsets, np.array(masks, dtype=np.uint64)


def eval_fitness2(V2: LevelIIFitness, mu) -> float:
    """Evaluate ``V2`` on a probability vector or ``SimplexPoint``."""
    w = mu.weights if isinstance(mu, SimplexPoint) else mu
    return V2(w)


def decompose_fitness1(V1) -> list[tuple[float, int]]:
    """Write ``V1`` as a nonnegative combination of indicator functions.

    Sorting the distinct values ``v_(1) < ... < v_(r)`` and telescoping gives
    ``V1 = sum_r (v_(r) - v_(r-1)) 1{V1 >= v_(r)}`` with ``v_(0) = 0``.
    Components whose set is the whole type space act as a constant shift and
    are dropped, since they never change the dual.

    Returns
    -------
    list of (weight, mask)
        Weights are positive; masks are proper nonempty subsets.
    """
    v = np.asarray(V1, dtype=float)
    K = v.size
    full = full_mask(K)
    out = []
    prev = 0.0
    for level in np.unique(v):
        mask = 0
        for i in range(K):
            if v[i] >= level:
                mask |= 1 << i
        w = float(level - prev)
        prev = float(level)
        if w > 0 and mask != full:
            out.append((w, mask))
    return out


# ---------------------------------------------------------------------------
# Model parameters
# ---------------------------------------------------------------------------


def _frozen(a, dtype=float) -> np.ndarray:
    arr = np.array(a, dtype=dtype)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class ModelParams:
    """Rate constants and fitness functions of the two-level model.

    Parameters
    ----------
    K : int
        Number of types.
    m : array_like, shape (K, K)
        Mutation rates ``m[i, j]`` from type ``i+1`` to type ``j+1``.
    s1, s2 : float
        Level-I and level-II selection intensities.
    V1 : array_like, shape (K,)
        Individual fitness values in ``[0, 1]``.
    V2 : LevelIIFitness
        Deme fitness; effective level-II rates are ``s2 * s2j``.
    c : float
        Migration rate.
    gamma1, gamma2 : float
        Level-I and level-II resampling rates.
    eta : float
        Speed factor applied to within-deme mechanisms.
    """

    K: int
    m: np.ndarray = None
    s1: float = 0.0
    V1: np.ndarray = None
    s2: float = 0.0
    V2: LevelIIFitness = field(default_factory=LevelIIFitness)
    c: float = 0.0
    gamma1: float = 0.0
    gamma2: float = 0.0
    eta: float = 1.0

    def __post_init__(self):
        K = int(self.K)
        object.__setattr__(self, "K", K)
        m = np.zeros((K, K)) if self.m is None else self.m
        V1 = np.zeros(K) if self.V1 is None else self.V1
        object.__setattr__(self, "m", _frozen(m))
        object.__setattr__(self, "V1", _frozen(V1))
        for name in ("s1", "s2", "c", "gamma1", "gamma2", "eta"):
            object.__setattr__(self, name, float(getattr(self, name)))

    def replace(self, **changes) -> "ModelParams":
        d = {k: getattr(self, k) for k in
             ("K", "m", "s1", "V1", "s2", "V2", "c", "gamma1", "gamma2", "eta")}
        d.update(changes)
        return ModelParams(**d)

    def __eq__(self, other):
        if not isinstance(other, ModelParams):
            return NotImplemented
        return params_to_dict(self) == params_to_dict(other)

    __hash__ = None


def _param_errors(p: ModelParams) -> list[str]:
    errs = []
    K = p.K
    if K < 2:
        errs.append(f"K < 2 (got {K})")
    if K > MAX_TYPES:
        errs.append(f"K > {MAX_TYPES} (got {K})")
    for name in ("s1", "s2", "c", "gamma1", "gamma2"):
        val = getattr(p, name)
        if not np.isfinite(val) or val < 0:
            errs.append(f"negative rate: {name} = {val}")
    if not np.isfinite(p.eta) or p.eta <= 0:
        errs.append(f"eta must be positive (got {p.eta})")
    if p.m.shape != (K, K):
        errs.append(f"m has shape {p.m.shape}, expected {(K, K)}")
    else:
        for i in range(K):
            if np.any(p.m[i] < 0) or not np.all(np.isfinite(p.m[i])):
                errs.append(f"row {i + 1} of m has a negative entry")
        if np.any(np.diag(p.m) != 0):
            errs.append("m has a nonzero diagonal")
    if p.V1.shape != (K,):
        errs.append(f"V1 has shape {p.V1.shape}, expected {(K,)}")
    elif np.any(p.V1 < 0) or np.any(p.V1 > 1) or not np.all(np.isfinite(p.V1)):
        errs.append("V1 outside [0,1]")
    for j, (coef, factors) in enumerate(p.V2.terms):
        if not np.isfinite(coef) or coef < 0:
            errs.append(f"negative rate: V2 term {j + 1} coefficient {coef}")
        if len(factors) == 0:
            errs.append(f"V2 term {j + 1} has no factors")
        for b in factors:
            if b.K != K:
                errs.append(f"V2 term {j + 1} factor over K={b.K}, expected {K}")
            elif b.is_empty:
                errs.append(f"V2 term {j + 1} has an empty factor")
    return errs


def validate_params(p: ModelParams) -> ModelParams:
    """Check every constraint on ``p`` and return it in normalized form.

    Raises
    ------
    InvalidParamsError
        Listing all violations.
    """
    errs = _param_errors(p)
    if errs:
        raise InvalidParamsError(errs)
    return p.replace()


# ---------------------------------------------------------------------------
# Measures
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class SimplexPoint:
    """A probability vector on ``{1..K}``."""

    weights: np.ndarray

    def __post_init__(self):
        w = np.array(self.weights, dtype=float)
        if w.ndim != 1 or w.size < 1:
            raise InvalidParamsError(["simplex point must be a nonempty vector"])
        if np.any(w < 0) or abs(w.sum() - 1.0) > SIMPLEX_TOL:
            raise InvalidParamsError([f"not a probability vector: {w.tolist()}"])
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    @property
    def K(self) -> int:
        return self.weights.size

    def __eq__(self, other):
        return isinstance(other, SimplexPoint) and np.array_equal(self.weights, other.weights)

    __hash__ = None


@dataclass(frozen=True, eq=False)
class GridDensity:
    """Cell-averaged density of ``mu(1)`` on ``M`` uniform cells of ``[0, 1]``.

    Parameters
    ----------
    cells : array_like, shape (M,)
        Density values (not masses); the mass of cell ``i`` is ``cells[i] / M``.
    atom0, atom1 : float
        Point masses at ``x = 0`` and ``x = 1``.
    """

    cells: np.ndarray
    atom0: float = 0.0
    atom1: float = 0.0

    def __post_init__(self):
        cells = np.array(self.cells, dtype=float)
        cells.setflags(write=False)
        object.__setattr__(self, "cells", cells)
        object.__setattr__(self, "atom0", float(self.atom0))
        object.__setattr__(self, "atom1", float(self.atom1))

    @classmethod
    def uniform(cls, M: int = 400) -> "GridDensity":
        return cls(np.ones(M))

    @classmethod
    def from_function(cls, f, M: int = 400, atom0=0.0, atom1=0.0, nodes: int = 8):
        """Cell averages of ``f`` by Gauss-Legendre quadrature, then normalized."""
        g, w = np.polynomial.legendre.leggauss(nodes)
        edges = np.linspace(0.0, 1.0, M + 1)
        x = 0.5 * (edges[:-1, None] + edges[1:, None]) + 0.5 / M * g[None, :]
        vals = (np.asarray(f(x), dtype=float) * (0.5 * w)[None, :]).sum(axis=1)
        scale = (1.0 - atom0 - atom1) / (vals.sum() / M) if vals.sum() > 0 else 0.0
        return cls(vals * scale, atom0, atom1)

    @property
    def M(self) -> int:
        return self.cells.size

    @property
    def dx(self) -> float:
        return 1.0 / self.M

    @property
    def centers(self) -> np.ndarray:
        return (np.arange(self.M) + 0.5) / self.M

    @property
    def mass(self) -> float:
        return float(self.cells.sum() / self.M + self.atom0 + self.atom1)

    @property
    def mean(self) -> float:
        """``int x nu(dx)``; exact for piecewise-constant cells."""
        return float((self.cells * self.centers).sum() / self.M + self.atom1)

    def integrate(self, f, nodes: int = 4) -> float:
        """``int f(x) nu(dx)`` with Gauss-Legendre nodes inside each cell."""
        g, w = np.polynomial.legendre.leggauss(nodes)
        x = self.centers[:, None] + 0.5 / self.M * g[None, :]
        inner = (np.asarray(f(x), dtype=float) * (0.5 * w)[None, :]).sum(axis=1)
        return float((self.cells * inner).sum() / self.M
                     + self.atom0 * f(np.array(0.0)) + self.atom1 * f(np.array(1.0)))

    def errors(self) -> list[str]:
        errs = []
        if self.M < 1:
            errs.append("grid density needs at least one cell")
        if np.any(self.cells < 0) or self.atom0 < 0 or self.atom1 < 0:
            errs.append("grid density has negative mass")
        if abs(self.mass - 1.0) > MASS_TOL:
            errs.append(f"grid density has total mass {self.mass!r}, expected 1")
        return errs


@dataclass(frozen=True, eq=False)
class DiracAtDeme:
    """Every deme starts at the same type distribution."""

    point: SimplexPoint

    @property
    def K(self) -> int:
        return self.point.K

    def components(self):
        return [(1.0, self.point)]


@dataclass(frozen=True, eq=False)
class FiniteMixture:
    """Each deme independently starts at ``point_m`` with probability ``w_m``."""

    items: tuple

    def __post_init__(self):
        items = tuple((float(w), p if isinstance(p, SimplexPoint) else SimplexPoint(p))
                      for w, p in self.items)
        object.__setattr__(self, "items", items)
        errs = []
        if not items:
            errs.append("mixture needs at least one component")
        else:
            ws = np.array([w for w, _ in items])
            if np.any(ws < 0) or abs(ws.sum() - 1.0) > SIMPLEX_TOL:
                errs.append("mixture weights must be nonnegative and sum to 1")
            if len({p.K for _, p in items}) != 1:
                errs.append("mixture components over different type spaces")
        if errs:
            raise InvalidParamsError(errs)

    @property
    def K(self) -> int:
        return self.items[0][1].K

    def components(self):
        return list(self.items)


@dataclass(frozen=True, eq=False)
class TwoTypeGridDensity:
    """Each deme independently has ``mu(1) = x`` with ``x`` drawn from a grid density."""

    grid: GridDensity

    def __post_init__(self):
        errs = self.grid.errors()
        if errs:
            raise InvalidParamsError(errs)

    @property
    def K(self) -> int:
        return 2


InitialMeasure = DiracAtDeme | FiniteMixture | TwoTypeGridDensity


# ---------------------------------------------------------------------------
# JSON
# ---------------------------------------------------------------------------


def _subset_to_json(b: TypeSubset) -> list[int]:
    return list(b.members)


def params_to_dict(p: ModelParams) -> dict:
    """JSON-ready dictionary using the field names of ``ModelParams``."""
    return {
        "K": p.K,
        "m": p.m.tolist(),
        "s1": p.s1,
        "V1": p.V1.tolist(),
        "s2": p.s2,
        "V2": [{"coef": c, "factors": [_subset_to_json(b) for b in f]} for c, f in p.V2.terms],
        "c": p.c,
        "gamma1": p.gamma1,
        "gamma2": p.gamma2,
        "eta": p.eta,
    }


def params_from_dict(d: dict) -> ModelParams:
    """Inverse of :func:`params_to_dict`; unspecified rates default to zero.

    Raises
    ------
    InvalidParamsError
        On unknown keys, malformed entries, or any constraint violation.
    """
    known = {"K", "m", "s1", "V1", "s2", "V2", "c", "gamma1", "gamma2", "eta"}
    errs = [f"unknown parameter field {k!r}" for k in d if k not in known]
    if "K" not in d:
        errs.append("missing field 'K'")
        raise InvalidParamsError(errs)
    K = int(d["K"])
    terms = []
    for j, t in enumerate(d.get("V2", [])):
        try:
            terms.append((float(t["coef"]), tuple(TypeSubset.of(f, K) for f in t["factors"])))
        except (KeyError, TypeError, ValueError) as e:
            errs.append(f"V2 term {j + 1}: {e}")
    if errs:
        raise InvalidParamsError(errs)
    try:
        p = ModelParams(
            K=K,
            m=d.get("m"),
            s1=d.get("s1", 0.0),
            V1=d.get("V1"),
            s2=d.get("s2", 0.0),
            V2=LevelIIFitness(tuple(terms)),
            c=d.get("c", 0.0),
            gamma1=d.get("gamma1", 0.0),
            gamma2=d.get("gamma2", 0.0),
            eta=d.get("eta", 1.0),
        )
    except (TypeError, ValueError) as e:
        raise InvalidParamsError([str(e)]) from None
    return validate_params(p)


def measure_to_dict(nu) -> dict:
    if isinstance(nu, DiracAtDeme):
        return {"variant": "DiracAtDeme", "point": nu.point.weights.tolist()}
    if isinstance(nu, FiniteMixture):
        return {"variant": "FiniteMixture",
                "items": [{"weight": w, "point": p.weights.tolist()} for w, p in nu.items]}
    if isinstance(nu, TwoTypeGridDensity):
        g = nu.grid
        return {"variant": "TwoTypeGridDensity", "cells": g.cells.tolist(),
                "atom0": g.atom0, "atom1": g.atom1}
    raise TypeError(f"not an initial measure: {nu!r}")


def measure_from_dict(d: dict):
    """Build an initial measure from JSON.

    Besides the explicit ``cells`` form, ``{"variant": "TwoTypeGridDensity",
    "uniform": true, "M": 400}`` is accepted as shorthand.
    """
    variant = d.get("variant")
    try:
        if variant == "DiracAtDeme":
            return DiracAtDeme(SimplexPoint(d["point"]))
        if variant == "FiniteMixture":
            return FiniteMixture(tuple((it["weight"], it["point"]) for it in d["items"]))
        if variant == "TwoTypeGridDensity":
            if d.get("uniform"):
                return TwoTypeGridDensity(GridDensity.uniform(int(d.get("M", 400))))
            return TwoTypeGridDensity(GridDensity(d["cells"], d.get("atom0", 0.0), d.get("atom1", 0.0)))
    except KeyError as e:
        raise InvalidParamsError([f"initial measure missing field {e}"]) from None
    raise InvalidParamsError([f"unknown initial measure variant {variant!r}"])
