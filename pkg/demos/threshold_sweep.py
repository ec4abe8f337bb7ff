"""Where does the deme-favoured type take over?

Sweeps s2 with s1 = c = gamma1 = 1 and prints the linearised growth of the
rare type (sign change at the critical s2 = s1*c/gamma1 = 1), the two-jump
rate read off the dual, and long-run dual means with a dominance label.
Level-II resampling (gamma2 = 1) keeps the dual frame small.

    python3 demos/kimura_sweep.py
"""
from dualpop.experiments import config_from_dict, phase_sweep

cfg = config_from_dict({
    "kind": "phase_sweep", "seed": 3,
    "params": {"K": 2, "V1": [0, 1], "V2": [{"coef": 1.0, "factors": [[1]]}],
               "s1": 1.0, "c": 1.0, "gamma1": 1.0, "gamma2": 1.0},
    "initial": {"variant": "DiracAtDeme", "point": [0.5, 0.5]},
    "query": "(10)", "axes": {"s2": [0.0, 0.5, 1.0, 2.0, 4.0]},
    "replicates": 400, "t_max": 10.0, "max_summands": 256,
})
print("   s2   linear   two-jump    long-run mean       label")
for r in phase_sweep(cfg):
    print(f"  {r['s2']:3.1f}  {r['linear_stability']:+6.2f}   {r['two_jump_rate']:+7.3f}   "
          f"{r['mean']:.3f} +- {r['stderr']:.3f}   {r['label']}")
