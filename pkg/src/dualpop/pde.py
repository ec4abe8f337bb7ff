"""Deterministic two-type references: the density equation and mean ODEs.

For ``K = 2`` and ``N2 -> infinity`` with ``gamma2 = 0`` the law of
``x = mu(1)`` across demes has a density ``u(t, x)`` solving

    u_t = (eta*gamma1/2) (x(1-x) u)_xx - (M u)_x + s2 (V2(x) - int V2 u) u,

    M(t, x) = eta*(m[1,0] (1-x) - m[0,1] x) + c (int y u(dy) - x)
              + eta*s1 (V1[0] - V1[1]) x (1-x),

where ``V2(x)`` is the deme fitness at type distribution ``(x, 1-x)``.
Mass reaching ``x = 0`` or ``x = 1`` is kept in point masses (atoms).
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .model import GridDensity, ModelParams, validate_params

__all__ = [
    "StabilityError",
    "stable_dt",
    "integrate_density_pde",
    "MeanODEResult",
    "integrate_mean_ode",
]

EPS = 1e-12


class StabilityError(ValueError):
    """Time step above the explicit-scheme guard; ``suggested_dt`` is safe."""

    def __init__(self, dt: float, suggested_dt: float):
        self.dt = dt
        self.suggested_dt = suggested_dt
        super().__init__(f"dt={dt:g} exceeds the stability guard; use dt <= {suggested_dt:g}")


def _v2_on_line(V2, x: np.ndarray) -> np.ndarray:
    """``V2((x, 1-x))`` for an array of ``x``."""
    out = np.zeros_like(x)
    for coef, factors in V2.terms:
        prod = np.full_like(x, coef)
        for b in factors:
            prod = prod * (x * (b.mask & 1) + (1 - x) * ((b.mask >> 1) & 1))
        out += prod
    return out


def _drift_bound(p: ModelParams) -> float:
    return (p.c + p.eta * (p.m[0, 1] + p.m[1, 0])
            + p.eta * p.s1 * abs(p.V1[0] - p.V1[1]) / 4.0)


def stable_dt(p: ModelParams, M: int) -> float:
    """Largest step the scheme accepts on ``M`` cells.

    The diffusion part is ``dx^2 / (eta*gamma1 * max x(1-x))``; drift and the
    replicator term add their own explicit limits (twice the drift CFL for
    the limited reconstruction, and the reciprocal of the fitness range).
    """
    dx = 1.0 / M
    rate = (p.eta * p.gamma1 * 0.25 / dx**2 + 2.0 * _drift_bound(p) / dx
            + p.s2 * p.V2.total)
    return 1.0 / (rate + EPS)


def _minmod(a, b):
    return np.where(a * b > 0, np.sign(a) * np.minimum(np.abs(a), np.abs(b)), 0.0)


class _Rhs:
    def __init__(self, p: ModelParams, M: int):
        self.p = p
        self.M = M
        self.dx = 1.0 / M
        self.xc = (np.arange(M) + 0.5) * self.dx
        self.xe = np.arange(M + 1) * self.dx
        self.v2c = _v2_on_line(p.V2, self.xc)
        self.v20, self.v21 = _v2_on_line(p.V2, np.array([0.0, 1.0]))
        self.gc = self.xc * (1 - self.xc)
        self.D = p.eta * p.gamma1 / 2.0
        m = p.m
        self.sel = p.eta * p.s1 * (p.V1[0] - p.V1[1])
        self.mut_in = p.eta * m[1, 0]
        self.mut_out = p.eta * m[0, 1]

    def __call__(self, u, a0, a1):
        p, dx, xe = self.p, self.dx, self.xe
        xbar = float(np.dot(self.xc, u) * dx + a1)
        Me = (self.mut_in * (1 - xe) - self.mut_out * xe + p.c * (xbar - xe)
              + self.sel * xe * (1 - xe))
        # limited linear reconstruction, flat in the end cells
        slope = np.zeros_like(u)
        slope[1:-1] = _minmod(u[1:-1] - u[:-2], u[2:] - u[1:-1])
        left = u + slope / 2   # value at the right edge of each cell
        right = u - slope / 2  # value at the left edge of each cell
        F = np.empty(self.M + 1)
        Mi = Me[1:-1]
        F[1:-1] = np.maximum(Mi, 0) * left[:-1] + np.minimum(Mi, 0) * right[1:]
        # atoms enter as if spread over one cell
        F[0] = max(Me[0], 0.0) * a0 / dx + min(Me[0], 0.0) * right[0]
        F[-1] = max(Me[-1], 0.0) * left[-1] + min(Me[-1], 0.0) * a1 / dx
        if self.D > 0:
            g = self.gc * u
            F[1:-1] -= self.D * (g[1:] - g[:-1]) / dx
            F[0] -= self.D * g[0] / (dx / 2)
            F[-1] += self.D * g[-1] / (dx / 2)
        du = -(F[1:] - F[:-1]) / dx
        da0 = -F[0]
        da1 = F[-1]
        if p.s2 > 0:
            vbar = float(np.dot(self.v2c, u) * dx + self.v20 * a0 + self.v21 * a1)
            du += p.s2 * (self.v2c - vbar) * u
            da0 += p.s2 * (self.v20 - vbar) * a0
            da1 += p.s2 * (self.v21 - vbar) * a1
        return du, da0, da1


def integrate_density_pde(g0: GridDensity, p: ModelParams, t_end: float,
                          dt: float | None = None, times=None):
    """Advance a grid density with a conservative finite-volume scheme.

    Upwind fluxes with a minmod-limited reconstruction, centred degenerate
    diffusion, and a three-stage strong-stability-preserving Runge-Kutta
    step. Outgoing flux at ``x = 0`` and ``x = 1`` accumulates in the atoms.

    Parameters
    ----------
    g0 : GridDensity
    p : ModelParams
        ``K = 2``; ``gamma2`` is not part of this equation and must be 0.
    t_end : float
    dt : float, optional
        Defaults to 0.9 times :func:`stable_dt`.
    times : sequence of float, optional
        Also return the density at these times (sorted, at most ``t_end``).

    Returns
    -------
    GridDensity, or list of GridDensity when ``times`` is given.

    Raises
    ------
    StabilityError
        If ``dt`` exceeds :func:`stable_dt`.
    """
    validate_params(p)
    if p.K != 2:
        raise ValueError("the density equation needs K = 2")
    if p.gamma2 != 0:
        raise ValueError("the density equation has no level-II resampling; set gamma2 = 0")
    if t_end < 0:
        raise ValueError("t_end must be nonnegative")
    M = g0.M
    dmax = stable_dt(p, M)
    if dt is None:
        dt = 0.9 * dmax
    elif dt > dmax:
        raise StabilityError(dt, 0.9 * dmax)
    want = [float(t_end)] if times is None else [float(t) for t in times]
    if any(b < a for a, b in zip(want, want[1:])) or (want and (want[0] < 0 or want[-1] > t_end)):
        raise ValueError("times must be sorted within [0, t_end]")
    rhs = _Rhs(p, M)
    u = np.array(g0.cells, dtype=float)
    a0, a1 = float(g0.atom0), float(g0.atom1)
    if _drift_bound(p) == 0 and rhs.D == 0 and p.s2 == 0:
        # nothing moves; skip the stepping to avoid roundoff
        out = [GridDensity(u.copy(), a0, a1) for _ in want]
        return out[-1] if times is None else out
    t = 0.0
    out = []
    for target in want:
        while t < target - 1e-14:
            h = min(dt, target - t)
            d1 = rhs(u, a0, a1)
            u1, b0, b1 = u + h * d1[0], a0 + h * d1[1], a1 + h * d1[2]
            d2 = rhs(u1, b0, b1)
            u2 = 0.75 * u + 0.25 * (u1 + h * d2[0])
            c0 = 0.75 * a0 + 0.25 * (b0 + h * d2[1])
            c1 = 0.75 * a1 + 0.25 * (b1 + h * d2[2])
            d3 = rhs(u2, c0, c1)
            u = u / 3 + 2 / 3 * (u2 + h * d3[0])
            a0 = a0 / 3 + 2 / 3 * (c0 + h * d3[1])
            a1 = a1 / 3 + 2 / 3 * (c1 + h * d3[2])
            t += h
        out.append(GridDensity(u.copy(), a0, a1))
    return out[-1] if times is None else out


# ---------------------------------------------------------------------------
# mean ODEs
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MeanODEResult:
    t: np.ndarray
    x: np.ndarray
    limit: float | None  # last value once |dx/dt| < 1e-10, else None

    @property
    def final(self) -> float:
        return float(self.x[-1])


def _mean_rhs(model: str, params: dict):
    if model == "two_type":
        s1 = float(params.get("s1", 0.0))
        s2 = float(params.get("s2", 0.0))
        var = float(params.get("var", 0.0))
        return lambda e: s2 * var + s1 * (e * e - e)
    if model == "mutualism":
        v = float(params["v_M"])
        return lambda x: x * ((1 - x) - v / 2 * (1 - x) ** 2)
    raise ValueError(f"unknown model {model!r}; expected 'two_type' or 'mutualism'")


def integrate_mean_ode(model: str, x0: float, params: dict, t_end: float,
                       dt: float = 1e-2) -> MeanODEResult:
    """Fixed-step RK4 for a scalar mean equation.

    ``model="two_type"`` integrates ``dE/dt = s2*var + s1*(E^2 - E)`` with a
    constant between-deme variance ``var`` (default 0, the closed case).
    ``model="mutualism"`` integrates ``dx/dt = x((1-x) - (v_M/2)(1-x)^2)``.
    """
    f = _mean_rhs(model, params)
    n = max(1, int(math.ceil(t_end / dt - 1e-12)))
    h = t_end / n
    ts = np.linspace(0.0, t_end, n + 1)
    xs = np.empty(n + 1)
    xs[0] = x = float(x0)
    for i in range(n):
        k1 = f(x)
        k2 = f(x + h / 2 * k1)
        k3 = f(x + h / 2 * k2)
        k4 = f(x + h * k3)
        x = x + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        xs[i + 1] = x
    limit = x if abs(f(x)) < 1e-10 else None
    return MeanODEResult(ts, xs, limit)
