"""
Stability under perturbed initial data
======================================

Adds a small Gaussian bump of height delta to the initial phase field and
tracks how far the solution moves. Stable dependence shows up as a slope
of one on a log-log plot.
"""

from mechanochem.config import load_shipped
from mechanochem.experiments import perturbation_study

cfg = load_shipped("perturb")
deltas = [1e-1, 1e-2, 1e-3, 1e-4]

res = perturbation_study(cfg, deltas, "phi0", betas=[1.0, 0.1], threads=2)
print(f"{'delta':>8} {'beta':>5} {'lhs':>10} {'rhs':>10} {'ratio':>8}")
for delta, beta, lhs, rhs, ratio in zip(res.values, *(res.metrics[k] for k in ("beta", "lhs", "rhs", "ratio"))):
    print(f"{delta:8.0e} {beta:5g} {lhs:10.3e} {rhs:10.3e} {ratio:8.2f}")

# the ratio lhs/rhs should not care about beta or delta
print("slopes:", {b: round(s, 3) for b, s in res.flags["slopes"].items()})
print("ratio spread:", round(res.flags["ratio_spread"], 3))
