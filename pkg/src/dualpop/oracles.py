"""Closed forms and small exact solvers used as reference values."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate

from .model import GridDensity, SimplexPoint

__all__ = [
    "OracleDomainError",
    "LuoSolution",
    "luo_density",
    "luo_uniform_limits",
    "BDStationary",
    "bd_stationary",
    "kimura_critical_s2",
    "mutualism_threshold",
    "cooperation_threshold_check",
]


class OracleDomainError(ValueError):
    """The requested quantity has no finite or interior value."""


# ---------------------------------------------------------------------------
# transport-replicator density
# ---------------------------------------------------------------------------


def _uniform_log_prefactor(tau: float, lam: float) -> float:
    """``log((e^tau - 1)(lam - 1) / (e^{tau(lam-1)} - 1))``, continuous at ``lam = 1``."""
    if tau == 0.0:
        return 0.0
    a = lam - 1.0
    num = math.log(math.expm1(tau))
    if abs(a * tau) < 1e-12:
        return num - math.log(tau)
    return num + math.log(abs(a)) - math.log(abs(math.expm1(a * tau)))


@dataclass
class LuoSolution:
    """Density of ``x = mu(1)`` under level-I selection against type 1 at rate
    ``s1`` and deme selection ``s2 * mu(1)``, with ``c = gamma1 = gamma2 = 0``.

    Parameters
    ----------
    lam : float
        ``s2 / s1 > 0``.
    initial : None, callable or GridDensity
        Initial density on ``[0, 1]``; ``None`` is the uniform density.
    s1 : float
        Level-I selection rate. Times passed to the methods are model times;
        the closed form is written in ``tau = s1 * t``.

    Notes
    -----
    The factor ``exp(-lam * int_0^t h)`` is fixed by requiring the density to
    integrate to one, so no iteration over ``h`` is needed; ``h`` itself is
    then the mean of the normalized density and is cached per time.
    """

    lam: float
    initial: object = None
    s1: float = 1.0
    h_path: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if not self.lam > 0:
            raise ValueError("lambda must be positive")
        if not self.s1 > 0:
            raise ValueError("s1 must be positive")
        if isinstance(self.initial, GridDensity):
            g = self.initial
            if g.atom0 > 0 or g.atom1 > 0:
                raise ValueError("initial law must be a density without atoms")
            cells = np.asarray(g.cells)
            M = g.M
            self._f0 = lambda y: cells[np.clip((np.asarray(y) * M).astype(int), 0, M - 1)]
            self._breaks = np.linspace(0, 1, M + 1)
        elif callable(self.initial):
            self._f0 = self.initial
            self._breaks = None
        elif self.initial is None:
            self._f0 = None
            self._breaks = None
        else:
            raise TypeError("initial must be None, a callable or a GridDensity")
        self._norm = {}

    @property
    def uniform(self) -> bool:
        return self._f0 is None

    def _unnormalized(self, x, tau):
        x = np.asarray(x, dtype=float)
        e = math.expm1(tau)
        base = 1.0 + x * e
        y = x * math.exp(tau) / base
        return np.asarray(self._f0(y), dtype=float) * base ** (self.lam - 2.0)

    def _norm_const(self, tau: float) -> float:
        if tau not in self._norm:
            pts = None
            if self._breaks is not None and tau > 0:
                # cell edges of the initial grid, carried along characteristics
                b = self._breaks[1:-1]
                pts = list(b / (b + (1 - b) * math.exp(tau)))[:200]
            val, _ = integrate.quad(lambda z: float(self._unnormalized(z, tau)), 0.0, 1.0,
                                    points=pts, limit=max(200, 2 * len(pts or [])),
                                    epsabs=1e-13, epsrel=1e-12)
            self._norm[tau] = val
        return self._norm[tau]

    def density(self, x, t):
        """``nu(t, x)``; vectorized in ``x``."""
        if t < 0:
            raise ValueError("t must be nonnegative")
        tau = self.s1 * float(t)
        x = np.asarray(x, dtype=float)
        if self.uniform:
            lp = _uniform_log_prefactor(tau, self.lam)
            return np.exp(lp + (self.lam - 2.0) * np.log1p(x * math.expm1(tau)))
        if tau == 0:
            return np.asarray(self._f0(x), dtype=float)
        return self._unnormalized(x, tau) / self._norm_const(tau)

    def h(self, t) -> float:
        """Mean ``int x nu(t, x) dx``."""
        t = float(t)
        if t not in self.h_path:
            val, _ = integrate.quad(lambda z: z * float(self.density(z, t)), 0.0, 1.0,
                                    limit=400, epsabs=1e-13, epsrel=1e-12)
            self.h_path[t] = val
        return self.h_path[t]

    mean = h

    def cell_averages(self, t, M: int, nodes: int = 8) -> np.ndarray:
        """Cell averages on ``M`` uniform cells by Gauss-Legendre quadrature."""
        xg, wg = np.polynomial.legendre.leggauss(nodes)
        edges = np.linspace(0, 1, M + 1)
        xs = (edges[:-1, None] + (xg[None, :] + 1) / (2 * M))
        return (self.density(xs, t) * wg[None, :]).sum(axis=1) / 2


def luo_density(x, t, sol: LuoSolution):
    return sol.density(x, t)


def luo_uniform_limits(lam: float) -> tuple[float, float]:
    """Long-run ``(mean, density at 1)`` from a uniform start.

    Raises
    ------
    OracleDomainError
        At the critical value ``lam = 1``.
    """
    if not lam > 0:
        raise ValueError("lambda must be positive")
    if lam == 1.0:
        raise OracleDomainError("critical case lambda = 1")
    if lam < 1.0:
        return 0.0, 0.0
    return (lam - 1.0) / lam, lam - 1.0


# ---------------------------------------------------------------------------
# birth-death process of dual ranks
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BDStationary:
    """Stationary law of the rank count with birth ``s1 * n`` and death
    ``gamma1 * n (n-1) / 2``; ``p[n-1]`` is the mass at ``n``."""

    p: np.ndarray

    @property
    def n_max(self) -> int:
        return int(self.p.size)

    def g(self, z) -> float:
        """Generating function ``sum_n p_n z^n``."""
        z = np.asarray(z, dtype=float)
        n = np.arange(1, self.p.size + 1)
        return np.sum(self.p * z[..., None] ** n, axis=-1)


def bd_stationary(s1: float, gamma1: float, n_max: int | None = None,
                  tail_tol: float = 1e-12) -> BDStationary:
    """Solve detailed balance ``p_n * s1 * n = p_{n+1} * gamma1 * (n+1) * n / 2`` on ``1..n_max``.

    Raises
    ------
    ValueError
        If the truncated tail beyond ``n_max`` may exceed ``tail_tol``; the
        message suggests a sufficient ``n_max``.
    """
    if not (s1 > 0 and gamma1 > 0):
        raise ValueError("s1 and gamma1 must be positive")
    theta = 2.0 * s1 / gamma1
    if n_max is None:
        n_max = _sufficient_n(theta, tail_tol)
    elif _tail_bound(theta, n_max) > tail_tol:
        raise ValueError(f"tail mass beyond n_max={n_max} too large; "
                         f"use n_max >= {_sufficient_n(theta, tail_tol)}")
    logp = np.zeros(n_max)
    for n in range(1, n_max):
        # p_{n+1} / p_n = s1 n / (gamma1 (n+1) n / 2)
        logp[n] = logp[n - 1] + math.log(s1 * n / (gamma1 * (n + 1) * n / 2.0))
    p = np.exp(logp - logp.max())
    return BDStationary(p / p.sum())


def _sufficient_n(theta: float, tol: float) -> int:
    n = max(10, int(math.ceil(theta)) + 1)
    while _tail_bound(theta, n) > tol:
        n += 1
    return n


def _tail_bound(theta: float, n: int) -> float:
    """Relative mass beyond ``n`` of ``theta^{k-1}/k!`` (geometric bound)."""
    r = theta / (n + 1)
    if r >= 1:
        return math.inf
    log_pn = (n - 1) * math.log(theta) - math.lgamma(n + 1) if theta > 0 else -math.inf
    log_z = math.log(math.expm1(theta) / theta) if theta > 0 else 0.0
    return math.exp(log_pn - log_z) * r / (1 - r)


# ---------------------------------------------------------------------------
# thresholds
# ---------------------------------------------------------------------------


def kimura_critical_s2(s1: float, c: float, gamma1: float) -> float:
    """Linear-stability threshold ``s1 * c / gamma1`` for deme selection.

    Raises
    ------
    OracleDomainError
        If ``gamma1 == 0``.
    """
    if gamma1 == 0:
        raise OracleDomainError("no interior threshold without level-I resampling")
    if gamma1 < 0:
        raise ValueError("gamma1 must be nonnegative")
    return s1 * c / gamma1


def mutualism_threshold(x1_0: float) -> float:
    """``2 / (1 - x1_0)``; infinite at ``x1_0 = 1``."""
    if not 0.0 <= x1_0 <= 1.0:
        raise ValueError("x1_0 must lie in [0, 1]")
    if x1_0 == 1.0:
        return math.inf
    return 2.0 / (1.0 - x1_0)


def cooperation_threshold_check(p, v1: float, v2: float) -> bool:
    """Strict inequality ``v1 * p1 < v2 * p2 * p3`` for a three-type deme."""
    w = p.weights if isinstance(p, SimplexPoint) else np.asarray(p, dtype=float)
    if w.size != 3:
        raise ValueError("cooperation check needs K = 3")
    return bool(v1 * w[0] < v2 * w[1] * w[2])
