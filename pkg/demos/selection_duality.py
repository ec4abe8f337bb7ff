"""Dual Monte Carlo, the density PDE and the closed-form solution side by side.

Two types, selection at both levels, no drift or migration, uniform initial
law across demes. For lambda = s2/s1 > 1 the deme-favoured type persists
with long-run mean 1 - 1/lambda; below 1 it dies out.

    python3 demos/luo_duality.py
"""
import numpy as np

from dualpop.dual import estimate_moment, parse_query
from dualpop.model import GridDensity, LevelIIFitness, ModelParams, TwoTypeGridDensity, TypeSubset
from dualpop.oracles import LuoSolution, luo_uniform_limits
from dualpop.pde import integrate_density_pde

TIMES = [0.5, 1.0, 2.0]
nu0 = TwoTypeGridDensity(GridDensity.uniform(400))

for lam in (0.5, 2.0, 3.0):
    p = ModelParams(K=2, m=np.zeros((2, 2)), s1=1.0, V1=[0.0, 1.0], s2=lam,
                    V2=LevelIIFitness.linear(TypeSubset.parse("(10)")))
    sol = LuoSolution(lam)
    ests = estimate_moment(parse_query("(10)"), nu0, p, TIMES, 10000, seed=1,
                           max_summands=64, on_overflow="sample")
    gs = integrate_density_pde(nu0.grid, p, TIMES[-1], times=TIMES)
    print(f"lambda = {lam}  (long-run mean {luo_uniform_limits(lam)[0]:.4f})")
    print("     t    closed form    PDE mean    dual estimate")
    for t, e, g in zip(TIMES, ests, gs):
        print(f"  {t:4.1f}    {sol.h(t):.5f}       {g.mean:.5f}     "
              f"{e.value:.5f} +- {e.stderr:.5f}")
