"""
Shrinking the nutrient relaxation time
======================================

As beta goes to zero the nutrient equation loses its time derivative. Here
we measure how fast the nutrient field approaches the quasi-static one.
"""

from mechanochem.config import load_shipped
from mechanochem.experiments import quasistatic_sweep

cfg = load_shipped("quasistatic")

# beta = 0 is the reference; the others are compared against it
res = quasistatic_sweep(cfg, [1.0, 0.5, 0.25, 0.125, 0.0], threads=2)
for beta, e in zip(res.values, res.metrics["e_beta"]):
    print(f"beta={beta:<6g} e={e:.3e}")

# first-order in beta: halving beta halves the error
print(f"log-log slope {res.slope:.3f}")
print(res.summary())
