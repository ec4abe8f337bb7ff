"""Configuration-driven experiments binding the engines together.

A configuration is a JSON object with a ``kind`` and a mandatory ``seed``;
see :func:`config_from_dict` for the keys each kind needs. :func:`run_config`
writes a CSV table and a JSON manifest (and optionally gnuplot ``.dat``
files) into the output directory.
"""
from __future__ import annotations

import json
import math
import platform
import time as _time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .coalescent import CoalescentState, coalescent_replicates
from .dual import (
    Estimate,
    MomentQuery,
    apply_event,
    dual_event_rates,
    estimate_fixation,
    estimate_moment,
    evaluate_dual,
    parse_query,
    run_trajectories,
)
from .model import (
    DiracAtDeme,
    GridDensity,
    InvalidParamsError,
    LevelIIFitness,
    ModelParams,
    SimplexPoint,
    TwoTypeGridDensity,
    TypeSubset,
    measure_from_dict,
    measure_to_dict,
    params_from_dict,
    params_to_dict,
    validate_params,
)
from .moran import estimate_forward
from .oracles import (
    LuoSolution,
    bd_stationary,
    cooperation_threshold_check,
    kimura_critical_s2,
    luo_uniform_limits,
    mutualism_threshold,
)
from .parallel import RunningStats, chunk_bounds, replicate_seeds
from .pde import integrate_density_pde, integrate_mean_ode

__all__ = [
    "KINDS",
    "SCENARIOS",
    "ConfigError",
    "ExperimentConfig",
    "RunReport",
    "config_from_dict",
    "load_config",
    "run_config",
    "duality_check",
    "phase_sweep",
    "scenario",
    "long_run_estimate",
    "LongRun",
    "two_jump_rate",
    "linear_stability",
    "density_moment",
]

SCHEMA_VERSION = 1
KINDS = ("forward", "dual", "duality_check", "phase_sweep", "coalescent", "oracle", "scenario")
SCENARIOS = ("cooperation", "mutualism", "ex6", "kimura")
ORACLES = ("kimura", "bd_stationary", "luo", "luo_limits", "mutualism_threshold", "cooperation")


class ConfigError(ValueError):
    """Invalid configuration; ``errors`` lists every violation found."""

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ExperimentConfig:
    """Validated experiment description.

    ``options`` holds the kind-specific keys (``N1``, ``N2``, ``reference``,
    ``axes``, ``name``, ...), exactly as given in the JSON object.
    """

    kind: str
    seed: int
    params: ModelParams | None = None
    initial: object = None
    query: MomentQuery | None = None
    observables: dict = field(default_factory=dict)
    schedule: tuple = ()
    replicates: int = 0
    out_dir: str = "."
    options: dict = field(default_factory=dict)
    source: dict = field(default_factory=dict)


_COMMON = {"kind", "seed", "params", "initial", "query", "observables", "schedule",
           "replicates", "out_dir", "schema"}


def _parse_query(q, errs, key="query"):
    try:
        if isinstance(q, str):
            return parse_query(q)
        if isinstance(q, dict):
            return MomentQuery.from_dict(q)
        errs.append(f"{key}: expected a shorthand string or an object")
    except (ValueError, KeyError, TypeError) as e:
        errs.append(f"{key}: {e}")
    return None


def config_from_dict(d: dict) -> ExperimentConfig:
    """Validate a configuration object, collecting every violation.

    Keys common to all kinds: ``kind``, ``seed`` (required), ``params``,
    ``initial``, ``query`` (shorthand such as ``"deme[(10)]"`` or an
    object), ``observables`` (id to query), ``schedule`` (checkpoint times),
    ``replicates``, ``out_dir``. Everything else is a kind-specific option:

    * ``forward``: ``engine`` (``"moran"`` or ``"pde"``), ``N1``, ``N2``,
      ``time_unit``, ``M``;
    * ``dual``: ``max_summands``, ``on_overflow``, ``max_frame``, ``mode``, ``N2``;
    * ``duality_check``: ``reference`` (``"moran"``, ``"pde"``, ``"luo"``),
      ``N1``, ``N2``, ``forward_replicates``, ``allowance``, ``M`` and the
      dual options;
    * ``phase_sweep``: ``axes`` (one or two parameter names mapped to a list
      of values or ``{"start", "stop", "step"}``), ``t_max``,
      ``checkpoints``, ``max_summands``;
    * ``coalescent``: ``blocks``, ``c``, ``gamma1``, ``gamma2``,
      ``max_events``;
    * ``oracle``: ``name`` and its inputs;
    * ``scenario``: ``name``.

    Raises
    ------
    ConfigError
    """
    errs: list[str] = []
    if not isinstance(d, dict):
        raise ConfigError(["configuration must be a JSON object"])
    kind = d.get("kind")
    if kind not in KINDS:
        errs.append(f"kind must be one of {list(KINDS)} (got {kind!r})")
    seed = d.get("seed")
    if not isinstance(seed, int) or isinstance(seed, bool) or seed < 0:
        errs.append("seed is required and must be a nonnegative integer")
    params = initial = query = None
    if "params" in d:
        try:
            params = validate_params(params_from_dict(d["params"]))
        except InvalidParamsError as e:
            errs.extend(f"params: {x}" for x in e.errors)
        except (KeyError, TypeError, ValueError) as e:
            errs.append(f"params: {e}")
    if "initial" in d:
        try:
            initial = measure_from_dict(d["initial"])
        except InvalidParamsError as e:
            errs.extend(f"initial: {x}" for x in e.errors)
        except (KeyError, TypeError, ValueError) as e:
            errs.append(f"initial: {e}")
    if "query" in d:
        query = _parse_query(d["query"], errs)
    observables = {}
    for k, q in (d.get("observables") or {}).items():
        observables[str(k)] = _parse_query(q, errs, f"observables.{k}")
    if query is not None and not observables:
        observables = {"q": query}
    schedule = d.get("schedule", [])
    try:
        schedule = tuple(float(t) for t in schedule)
        if any(t < 0 for t in schedule) or list(schedule) != sorted(schedule):
            errs.append("schedule must be sorted nonnegative times")
    except (TypeError, ValueError):
        errs.append("schedule must be a list of numbers")
        schedule = ()
    reps = d.get("replicates", 0)
    if not isinstance(reps, int) or isinstance(reps, bool) or reps < 0:
        errs.append("replicates must be a nonnegative integer")
        reps = 0
    options = {k: v for k, v in d.items() if k not in _COMMON}
    cfg = ExperimentConfig(kind, seed if isinstance(seed, int) else 0, params, initial, query,
                           observables, schedule, reps, str(d.get("out_dir", ".")), options, d)
    if kind in KINDS:
        errs.extend(_kind_errors(cfg, d))
    if errs:
        raise ConfigError(errs)
    return cfg


def _need(d, keys, kind):
    return [f"{kind} needs '{k}'" for k in keys if k not in d]


def _kind_errors(cfg: ExperimentConfig, d: dict) -> list[str]:
    k, o = cfg.kind, cfg.options
    errs = []
    if k in ("forward", "dual", "duality_check"):
        errs += _need(d, ["params", "initial", "schedule"], k)
        if not cfg.observables:
            errs.append(f"{k} needs 'query' or 'observables'")
        if cfg.replicates < 2:
            errs.append(f"{k} needs replicates >= 2")
    if k == "forward":
        eng = o.get("engine", "moran")
        if eng not in ("moran", "pde"):
            errs.append("engine must be 'moran' or 'pde'")
        if eng == "moran":
            errs += [f"forward needs integer '{n}' >= 1" for n in ("N1", "N2")
                     if not isinstance(o.get(n), int) or o.get(n) < 1]
        elif cfg.initial is not None and not isinstance(cfg.initial, TwoTypeGridDensity):
            errs.append("the pde engine needs a two-type grid density as initial law")
    if k in ("dual", "duality_check"):
        if o.get("on_overflow", "abort") not in ("abort", "sample"):
            errs.append("on_overflow must be 'abort' or 'sample'")
    if k == "duality_check":
        ref = o.get("reference")
        if ref not in ("moran", "pde", "luo"):
            errs.append("duality_check needs reference in {'moran', 'pde', 'luo'}")
        if ref == "moran":
            errs += [f"duality_check needs integer '{n}' >= 1" for n in ("N1", "N2")
                     if not isinstance(o.get(n), int) or o.get(n) < 1]
        if ref in ("pde", "luo") and cfg.initial is not None \
                and not isinstance(cfg.initial, TwoTypeGridDensity):
            errs.append(f"reference '{ref}' needs a two-type grid density as initial law")
        if ref == "luo" and cfg.params is not None:
            errs += _luo_errors(cfg.params)
    if k == "phase_sweep":
        errs += _need(d, ["params", "initial", "axes"], k)
        axes = o.get("axes")
        if axes is not None:
            if not isinstance(axes, dict) or not 1 <= len(axes) <= 2:
                errs.append("axes must map one or two parameter names to values")
            else:
                for name, spec in axes.items():
                    if name not in ("s1", "s2", "c", "gamma1", "gamma2", "eta"):
                        errs.append(f"axis {name!r} is not a scalar rate")
                    try:
                        _axis_values(spec)
                    except (TypeError, ValueError, KeyError) as e:
                        errs.append(f"axis {name!r}: {e}")
        if cfg.replicates and cfg.replicates < 2:
            errs.append("phase_sweep replicates must be 0 (analytic columns only) or >= 2")
    if k == "coalescent":
        try:
            CoalescentState(tuple(o.get("blocks", ())))
        except (TypeError, ValueError) as e:
            errs.append(f"blocks: {e}")
        for r in ("c", "gamma1", "gamma2"):
            v = o.get(r, 0.0)
            if not isinstance(v, (int, float)) or v < 0:
                errs.append(f"{r} must be a nonnegative number")
        if cfg.replicates < 1:
            errs.append("coalescent needs replicates >= 1")
    if k == "oracle" and o.get("name") not in ORACLES:
        errs.append(f"oracle name must be one of {list(ORACLES)}")
    if k == "scenario" and o.get("name") not in SCENARIOS:
        errs.append(f"scenario name must be one of {list(SCENARIOS)}")
    return errs


def _luo_errors(p: ModelParams) -> list[str]:
    errs = []
    if p.K != 2:
        errs.append("luo reference needs K = 2")
        return errs
    if p.c or p.gamma1 or p.gamma2 or np.any(p.m):
        errs.append("luo reference needs c = gamma1 = gamma2 = 0 and no mutation")
    if not (p.s1 > 0 and p.s2 > 0):
        errs.append("luo reference needs s1 > 0 and s2 > 0")
    if list(p.V1) != [0.0, 1.0]:
        errs.append("luo reference needs V1 = (0, 1)")
    V2 = p.V2
    if not (len(V2.terms) == 1 and V2.terms[0][0] == 1.0 and len(V2.terms[0][1]) == 1
            and V2.terms[0][1][0].mask == 1):
        errs.append("luo reference needs V2 = mu(1)")
    return errs


def load_config(path) -> ExperimentConfig:
    try:
        with open(path) as fh:
            d = json.load(fh)
    except OSError as e:
        raise ConfigError([f"cannot read {path}: {e}"]) from e
    except json.JSONDecodeError as e:
        raise ConfigError([f"{path} is not valid JSON: {e}"]) from e
    return config_from_dict(d)


def _axis_values(spec) -> np.ndarray:
    if isinstance(spec, dict):
        a, b, h = float(spec["start"]), float(spec["stop"]), float(spec["step"])
        if h <= 0 or b < a:
            raise ValueError("need start <= stop and step > 0")
        n = int(math.floor((b - a) / h + 1e-9)) + 1
        return np.round(a + h * np.arange(n), 12)
    vals = np.asarray(spec, dtype=float)
    if vals.ndim != 1 or vals.size == 0:
        raise ValueError("axis needs a nonempty list of values")
    return vals


# ---------------------------------------------------------------------------
# shared estimators
# ---------------------------------------------------------------------------


def density_moment(g: GridDensity, query) -> float:
    """``H(nu, G)`` for a two-type law of ``x = mu(1)`` given as a grid density."""
    st = query.initial if isinstance(query, MomentQuery) else query
    if st.K != 2:
        raise ValueError("density moments need K = 2")
    total = 0.0
    labels = list(dict.fromkeys(st.deme.tolist()))
    for row in st.cells:
        prod = 1.0
        for lab in labels:
            masks = [int(m) for m in row[st.deme == lab]]

            def f(x, masks=masks):
                out = np.ones_like(np.asarray(x, dtype=float))
                for m in masks:
                    out = out * (x * (m & 1) + (1 - x) * ((m >> 1) & 1))
                return out

            prod *= g.integrate(f)
        total += prod
    return float(total)


@dataclass(frozen=True)
class LongRun:
    """Dual estimate at the last checkpoint and the convergence verdict."""

    estimate: Estimate
    converged: bool
    times: tuple
    values: tuple


def long_run_estimate(query, nu0, p: ModelParams, t_max: float, replicates: int, seed: int,
                      checkpoints: int = 6, **kw) -> LongRun:
    """Run to ``t_max`` with geometric checkpoints and test convergence.

    Converged means the last two checkpoint estimates differ by less than
    three combined standard errors (or coincide). A checkpoint without any
    surviving replicate never counts as converged.
    """
    times = np.geomspace(t_max / 2 ** (checkpoints - 1), t_max, checkpoints)
    ests = estimate_moment(query, nu0, p, times, replicates, seed, **kw)
    a, b = ests[-2], ests[-1]
    tol = 3 * math.hypot(a.stderr, b.stderr)
    conv = (a.replicates > 0 and b.replicates > 0
            and (abs(a.value - b.value) < tol or a.value == b.value))
    return LongRun(b, bool(conv), tuple(float(t) for t in times),
                   tuple(e.value for e in ests))


def linear_stability(s1: float, s2: float, c: float, gamma1: float) -> float:
    """Initial drift sign of the rare deme-favoured type, ``s2*gamma1 - s1*c``."""
    return s2 * gamma1 - s1 * c


_RESOLVING = ("coalesce1", "migrate", "coalesce2")


def two_jump_rate(p: ModelParams, eps: float = 1e-6) -> float:
    """Growth rate of ``E mu(1)`` near ``mu(1) = 0`` read off the dual.

    Starting from the single rank ``(10)`` against ``delta_(eps, 1-eps)``,
    each first jump is followed by the race of the events that change which
    ranks share a deme (level-I coalescence, migration of a rank that is not
    alone, level-II coalescence). The expected change of the dual value over
    these two jumps, per unit time of the first jump and per ``eps``, is the
    linearized growth rate. ``K = 2``.
    """
    if p.K != 2:
        raise ValueError("two_jump_rate needs K = 2")
    st = parse_query("(10)").initial
    nu = DiracAtDeme(SimplexPoint([eps, 1 - eps]))
    h0 = evaluate_dual(st, nu)
    total = 0.0
    for e1 in dual_event_rates(st, p):
        if e1.kind in _RESOLVING:
            continue
        g1 = apply_event(st, e1)
        crowded = {lab for lab, n in g1.frame if n > 1}
        res = [e for e in dual_event_rates(g1, p)
               if e.kind != "migrate" or int(g1.deme[e.args[0]]) in crowded]
        res = [e for e in res if e.kind in _RESOLVING]
        R = sum(e.rate for e in res)
        if R == 0:
            v = evaluate_dual(g1, nu)
        else:
            v = sum(e.rate * evaluate_dual(apply_event(g1, e), nu) for e in res) / R
        total += e1.rate * (v - h0)
    return total / eps


def _stats_of(x) -> RunningStats:
    acc = RunningStats()
    for a, b in chunk_bounds(len(x), 4096):
        acc = acc.merge(RunningStats.of(x[a:b]))
    return acc


def _dominance(mean: float) -> str:
    if math.isnan(mean):
        return "undetermined"
    if mean >= 0.9:
        return "dominant"
    if mean <= 0.1:
        return "eliminated"
    return "mixed/undecided"


# ---------------------------------------------------------------------------
# kinds
# ---------------------------------------------------------------------------


def _dual_kw(o: dict) -> dict:
    kw = {"max_summands": int(o.get("max_summands", 10**6)),
          "on_overflow": o.get("on_overflow", "abort"),
          "threads": int(o.get("threads", 1))}
    if "max_frame" in o:
        kw["max_frame"] = int(o["max_frame"])
    if "mode" in o:
        kw["mode"] = o["mode"]
    if "N2" in o and o.get("mode") == "finite":
        kw["N2"] = int(o["N2"])
    return kw


def _est_row(t, oid, e: Estimate) -> dict:
    return {"t": t, "observable_id": oid, "value": e.value, "stderr": e.stderr,
            "replicates": e.replicates}


def _forward(cfg: ExperimentConfig):
    o = cfg.options
    rows = []
    if o.get("engine", "moran") == "pde":
        g0 = cfg.initial.grid
        t_end = max(cfg.schedule) if cfg.schedule else 0.0
        gs = integrate_density_pde(g0, cfg.params, t_end, times=list(cfg.schedule))
        for t, g in zip(cfg.schedule, gs):
            for oid, q in cfg.observables.items():
                rows.append({"t": t, "observable_id": oid, "value": density_moment(g, q),
                             "stderr": 0.0, "replicates": 1})
        return rows, False
    for oid, q in cfg.observables.items():
        ests = estimate_forward(q, cfg.initial, cfg.params, list(cfg.schedule), cfg.replicates,
                                cfg.seed, N1=int(o["N1"]), N2=int(o["N2"]),
                                time_unit=o.get("time_unit", "diffusion"),
                                threads=int(o.get("threads", 1)))
        rows += [_est_row(e.t, oid, e) for e in ests]
    return rows, False


def _dual(cfg: ExperimentConfig):
    kw = _dual_kw(cfg.options)
    rows = []
    flagged = False
    for oid, q in cfg.observables.items():
        ests = estimate_moment(q, cfg.initial, cfg.params, list(cfg.schedule),
                               cfg.replicates, cfg.seed, **kw)
        for e in ests:
            r = _est_row(e.t, oid, e)
            r["overflow_fraction"] = e.overflow_fraction
            r["sampled_fraction"] = e.sampled_fraction
            flagged |= e.overflow_fraction > 0
            rows.append(r)
    return rows, flagged


def duality_check(cfg: ExperimentConfig) -> list[dict]:
    """Compare a forward reference with the dual estimate at each time.

    Rows carry ``t``, both estimates with standard errors and replicate
    counts, ``delta``, ``tolerance = 3 * combined stderr + allowance`` and
    ``pass``. At ``t = 0`` both sides are the exact initial moment.
    """
    o = cfg.options
    ref = o["reference"]
    q = cfg.query or next(iter(cfg.observables.values()))
    times = list(cfg.schedule)
    kw = _dual_kw(o)
    allowance = float(o.get("allowance", 0.02 if ref == "moran" else 1e-3))
    exact0 = evaluate_dual(q.initial, cfg.initial)
    fwd: list[tuple[float, float, int]] = []
    if ref == "moran":
        N1, N2 = int(o["N1"]), int(o["N2"])
        kw.update(mode="finite", N2=N2)
        fr = int(o.get("forward_replicates", cfg.replicates))
        ests = estimate_forward(q, cfg.initial, cfg.params, times, fr, cfg.seed,
                                N1=N1, N2=N2, time_unit=o.get("time_unit", "diffusion"),
                                threads=int(o.get("threads", 1)))
        fwd = [(e.value, e.stderr, e.replicates) for e in ests]
    elif ref == "pde":
        t_end = max(times) if times else 0.0
        gs = integrate_density_pde(cfg.initial.grid, cfg.params, t_end, times=times)
        fwd = [(density_moment(g, q), 0.0, 1) for g in gs]
    else:
        p = cfg.params
        sol = LuoSolution(p.s2 / p.s1, initial=cfg.initial.grid, s1=p.s1)
        M = int(o.get("M", 2000))
        fwd = [(density_moment(GridDensity(sol.cell_averages(t, M)), q), 0.0, 1)
               for t in times]
    duals = estimate_moment(q, cfg.initial, cfg.params, times, cfg.replicates, cfg.seed, **kw)
    rows = []
    for t, (fv, fe, fn), d in zip(times, fwd, duals):
        dv, de = d.value, d.stderr
        if t == 0:
            # both sides are the deterministic initial pairing
            fv, fe, dv, de = exact0, 0.0, exact0, 0.0
        delta = abs(fv - dv)
        tol = 3 * math.hypot(fe, de) + allowance
        rows.append({"t": t, "forward": fv, "forward_stderr": fe, "forward_replicates": fn,
                     "dual": dv, "dual_stderr": de, "dual_replicates": d.replicates,
                     "overflow_fraction": d.overflow_fraction, "delta": delta,
                     "tolerance": tol, "pass": bool(delta <= tol)})
    return rows


def phase_sweep(cfg: ExperimentConfig) -> list[dict]:
    """Grid over one or two rates with analytic and dual-estimated columns.

    Per cell: the linear-stability value ``s2*gamma1 - s1*c`` and its
    threshold ``s1*c/gamma1``, the dual two-jump growth rate (``K = 2``),
    and, when ``replicates > 0``, the long-run dual mean of the query with
    convergence flag, dominance label and overflow fraction.
    """
    o = cfg.options
    names = list(o["axes"])
    grids = [_axis_values(o["axes"][n]) for n in names]
    mesh = np.array(np.meshgrid(*grids, indexing="ij")).reshape(len(names), -1).T
    q = cfg.query or parse_query("(10)" if cfg.params.K == 2 else
                                 "(" + "1" + "0" * (cfg.params.K - 1) + ")")
    seeds = replicate_seeds(cfg.seed, len(mesh), key=3)
    kw = _dual_kw({**o, "on_overflow": o.get("on_overflow", "sample"),
                   "max_summands": o.get("max_summands", 4096)})
    rows = []
    for i, vals in enumerate(mesh):
        p = cfg.params.replace(**{n: float(v) for n, v in zip(names, vals)})
        row = {n: float(v) for n, v in zip(names, vals)}
        try:
            row["kimura_s2_star"] = kimura_critical_s2(p.s1, p.c, p.gamma1)
        except ValueError:
            row["kimura_s2_star"] = math.nan
        row["linear_stability"] = linear_stability(p.s1, p.s2, p.c, p.gamma1)
        row["two_jump_rate"] = two_jump_rate(p) if p.K == 2 else math.nan
        if cfg.replicates:
            lr = long_run_estimate(q, cfg.initial, p, float(o.get("t_max", 20.0)),
                                   cfg.replicates, int(seeds[i]),
                                   checkpoints=int(o.get("checkpoints", 6)), **kw)
            e = lr.estimate
            row.update(mean=e.value, stderr=e.stderr, replicates=e.replicates,
                       overflow_fraction=e.overflow_fraction,
                       sampled_fraction=e.sampled_fraction, converged=lr.converged,
                       label=_dominance(e.value))
        rows.append(row)
    return rows


def _coalescent(cfg: ExperimentConfig) -> list[dict]:
    o = cfg.options
    res = coalescent_replicates(CoalescentState(tuple(o["blocks"])), float(o.get("c", 0.0)),
                                float(o.get("gamma1", 0.0)), float(o.get("gamma2", 0.0)),
                                cfg.replicates, cfg.seed, int(o.get("max_events", 100_000)))
    return [{"replicate": i, "k": r.state.k, "partition": " ".join(map(str, r.state.blocks)),
             "absorbed": r.absorbed, "events": r.events} for i, r in enumerate(res)]


def _oracle(cfg: ExperimentConfig) -> list[dict]:
    o = cfg.options
    name = o["name"]
    if name == "kimura":
        return [{"quantity": "s2_star",
                 "value": kimura_critical_s2(float(o["s1"]), float(o["c"]), float(o["gamma1"]))}]
    if name == "bd_stationary":
        bd = bd_stationary(float(o["s1"]), float(o["gamma1"]), o.get("n_max"))
        z = float(o.get("z", 0.5))
        return [{"quantity": f"g({z:g})", "value": float(bd.g(z))}] + \
               [{"quantity": f"p_{n}", "value": float(v)} for n, v in enumerate(bd.p, 1)]
    if name == "luo":
        sol = LuoSolution(float(o["lambda"]), s1=float(o.get("s1", 1.0)))
        out = []
        for t in o.get("t", [1.0]):
            out.append({"quantity": f"mean(t={t:g})", "value": sol.h(t)})
            for x in o.get("x", []):
                out.append({"quantity": f"density(t={t:g},x={x:g})",
                            "value": float(sol.density(x, t))})
        return out
    if name == "luo_limits":
        m, d = luo_uniform_limits(float(o["lambda"]))
        return [{"quantity": "mean_limit", "value": m}, {"quantity": "density_at_1_limit", "value": d}]
    if name == "mutualism_threshold":
        return [{"quantity": "v_M_star", "value": mutualism_threshold(float(o["x1_0"]))}]
    return [{"quantity": "emerges",
             "value": cooperation_threshold_check(o["p"], float(o["v1"]), float(o["v2"]))}]


# ---------------------------------------------------------------------------
# scenarios
# ---------------------------------------------------------------------------


def _two_type(**kw) -> ModelParams:
    base = dict(K=2, m=np.zeros((2, 2)), s1=0.0, V1=[0.0, 1.0], s2=0.0,
                V2=LevelIIFitness.linear(TypeSubset.parse("(10)")), c=0.0,
                gamma1=0.0, gamma2=0.0)
    base.update(kw)
    return ModelParams(**base)


def scenario(name: str, seed: int = 0, replicates: int | None = None) -> list[dict]:
    """Pre-packaged parameterizations compared with their reference values.

    Every row has ``quantity``, ``value``, ``stderr``, ``replicates``,
    ``reference`` and ``pass``.
    """
    def row(q, v, se, n, ref, ok):
        return {"quantity": q, "value": float(v), "stderr": float(se), "replicates": int(n),
                "reference": ref, "pass": bool(ok)}

    if name == "mutualism":
        out = []
        for v in (3.0, 5.0):
            r = integrate_mean_ode("mutualism", 0.5, {"v_M": v}, 100.0)
            expect = 1.0 if v < mutualism_threshold(0.5) else 0.0
            out.append(row(f"x1_limit(v_M={v:g})", r.final, 0.0, 1, expect,
                           abs(r.final - expect) < 1e-3))
        return out
    if name == "ex6":
        n = replicates or 100_000
        # type 2 disfavoured: its dual (01) stays a single product (01)^n
        p = _two_type(s1=1.0, gamma1=1.0, V1=[1.0, 0.0])
        nu = DiracAtDeme(SimplexPoint([0.5, 0.5]))
        ref = float(bd_stationary(1.0, 1.0).g(0.5))
        lr = long_run_estimate(parse_query("(01)"), nu, p, 20.0, n, seed)
        e = lr.estimate
        fx = estimate_fixation(parse_query("deme[(10),(01)]"), nu, p, 400.0, n, seed + 1)
        return [row("mu(2) long-run", e.value, e.stderr, e.replicates, ref,
                    abs(e.value - ref) <= 3 * e.stderr + 1e-12),
                row("mu(1)mu(2) long-run", fx.value, fx.stderr, fx.replicates, 0.0,
                    abs(fx.value) <= 3 * fx.stderr + 1e-12)]
    if name == "kimura":
        s2s = np.round(np.arange(0.0, 2.0 + 1e-9, 0.1), 10)
        star = kimura_critical_s2(1.0, 1.0, 1.0)
        ls = [linear_stability(1.0, s, 1.0, 1.0) for s in s2s]
        tj = [two_jump_rate(_two_type(s1=1.0, s2=s, c=1.0, gamma1=1.0)) for s in s2s]
        flip = [s for s, a, b in zip(s2s[1:], ls[:-1], ls[1:]) if a < 0 <= b]
        return [row("s2_star", star, 0.0, 1, 1.0, star == 1.0),
                row("linear_stability_sign_change", flip[0] if flip else math.nan, 0.0, 1, 1.0,
                    bool(flip) and 0.9 <= flip[0] <= 1.1),
                row("two_jump_rate(s2=1)", tj[10], 0.0, 1, -1.0 / 3.0,
                    abs(tj[10] + 1.0 / 3.0) < 1e-4)]
    if name == "cooperation":
        # level-I selection for type 1 only (v2 = 0). The dual of mu(1) is a
        # branching system of summands: it either dies out (type 1 is lost)
        # or grows past any cap (type 1 survives). Explosion is read off as
        # the fraction of replicates overflowing a small summand cap.
        n = replicates or 1000
        cap, horizon = 64, 80.0
        nu = DiracAtDeme(SimplexPoint([0.5, 0.25, 0.25]))
        out = []
        for v1, survive in ((4.0, True), (0.05, False)):
            p = ModelParams(K=3, m=[[0, 0.05, 0.05], [0, 0, 0.1], [0, 0.1, 0]], s1=v1,
                            V1=[1.0, 0.0, 0.0], s2=0.0,
                            V2=LevelIIFitness.from_terms([(1.0, (TypeSubset.parse("(010)"),
                                                                 TypeSubset.parse("(001)")))]),
                            c=1.0, gamma1=1.0, gamma2=0.0)
            run = run_trajectories(parse_query("(100)"), nu, p, [horizon], n, seed,
                                   max_summands=cap)
            boom = run.status == 2
            f = float(boom.mean())
            se = math.sqrt(f * (1 - f) / n)
            ok = (f - 3 * se > 0.05) if survive else (f + 3 * se < 0.05)
            out.append(row(f"dual_explosion_fraction(v1={v1:g})", f, se, n,
                           1.0 if survive else 0.0, ok))
            if not survive:
                s_ = _stats_of(run.values[~boom, 0])
                out.append(row(f"mu(1) at t={horizon:g} (v1={v1:g})", s_.mean, s_.stderr,
                               s_.count, 0.0, s_.mean - 3 * s_.stderr < 0.05))
        return out
    raise ValueError(f"unknown scenario {name!r}")


# ---------------------------------------------------------------------------
# runner
# ---------------------------------------------------------------------------


@dataclass
class RunReport:
    rows: list
    paths: list
    flagged: bool  # overflowing, non-converged or failing rows present
    manifest: dict


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _write_csv(path: Path, rows: list[dict], sep=",", comment=""):
    cols = list(rows[0]) if rows else []
    for r in rows:
        cols += [k for k in r if k not in cols]
    with open(path, "w", newline="") as fh:
        fh.write(comment + sep.join(cols) + "\n")
        for r in rows:
            fh.write(sep.join(_fmt(r.get(c, "")) for c in cols) + "\n")


def _versions() -> dict:
    import numba
    import scipy
    return {"dualpop": __version__, "python": platform.python_version(),
            "numpy": np.__version__, "scipy": scipy.__version__, "numba": numba.__version__}


def run_config(cfg: ExperimentConfig, out_dir=None, gnuplot: bool = False) -> RunReport:
    """Execute ``cfg`` and write ``<kind>.csv`` plus ``manifest.json``.

    On an exception every file written by this call is removed before the
    exception propagates.
    """
    out = Path(out_dir if out_dir is not None else cfg.out_dir)
    k = cfg.kind
    flagged = False
    if k == "forward":
        rows, flagged = _forward(cfg)
    elif k == "dual":
        rows, flagged = _dual(cfg)
    elif k == "duality_check":
        rows = duality_check(cfg)
        flagged = any(r["overflow_fraction"] > 0 for r in rows)
    elif k == "phase_sweep":
        rows = phase_sweep(cfg)
        flagged = any(r.get("overflow_fraction", 0) > 0 or r.get("converged") is False
                      for r in rows)
    elif k == "coalescent":
        rows = _coalescent(cfg)
        flagged = not all(r["absorbed"] for r in rows)
    elif k == "oracle":
        rows = _oracle(cfg)
    else:
        rows = scenario(cfg.options["name"], cfg.seed, cfg.replicates or None)
    written: list[Path] = []
    try:
        out.mkdir(parents=True, exist_ok=True)
        csv = out / f"{k}.csv"
        _write_csv(csv, rows)
        written.append(csv)
        if gnuplot:
            dat = out / f"{k}.dat"
            _write_csv(dat, rows, sep=" ", comment="# ")
            written.append(dat)
        manifest = {
            "schema_version": SCHEMA_VERSION,
            "kind": k,
            "config": cfg.source,
            "seed": cfg.seed,
            "seed_derivation": "SeedSequence(entropy=seed, spawn_key=(stream,)), "
                               "replicate i takes state word i",
            "versions": _versions(),
            "outputs": [p.name for p in written],
            "rows": len(rows),
            "flagged": flagged,
            "created": _time.strftime("%Y-%m-%dT%H:%M:%SZ", _time.gmtime()),
        }
        if cfg.params is not None:
            manifest["params"] = params_to_dict(cfg.params)
        if cfg.initial is not None:
            manifest["initial"] = measure_to_dict(cfg.initial)
        mpath = out / "manifest.json"
        with open(mpath, "w") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True, default=str)
        written.append(mpath)
    except BaseException:
        for p in written:
            p.unlink(missing_ok=True)
        raise
    return RunReport(rows, [str(p) for p in written], flagged, manifest)

