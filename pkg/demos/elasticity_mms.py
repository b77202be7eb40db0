"""
Checking the elasticity solver with a manufactured solution
===========================================================

We pick a smooth displacement, derive the body force that produces it and
solve on a sequence of refined grids. Q1 elements should give second-order
L2 convergence.
"""

from mechanochem.experiments import elasticity_mms

res = elasticity_mms((8, 16, 32, 64))
for n, err in zip(res.values, res.metrics["l2_error"]):
    print(f"{n:>3}x{n:<3} L2 error {err:.3e}")

print("pairwise orders:", [round(p, 3) for p in res.flags["orders"]])
print(f"fitted order {res.slope:.3f}")
