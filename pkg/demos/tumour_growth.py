"""
Growing a tumour on the unit square
===================================

Runs the shipped baseline: a disc of tumour tissue fed by a nutrient that
enters through the Robin boundary, coupled to a linear-elastic matrix that
swells with the tumour.
"""

import numpy as np

from mechanochem import load_shipped, run_simulation
from mechanochem.linalg import lump_mass

cfg = load_shipped("baseline")
grid = cfg.build_grid()
params = cfg.build_params()
phi0 = cfg.initial_phi(grid)
sigma0 = cfg.initial_sigma(grid, params, phi0)
print(f"{grid.nx}x{grid.ny} cells, {grid.n_nodes} nodes, beta = {params.beta}")

# each record is a snapshot of the scalar diagnostics after one step
state, records = run_simulation(grid, params, phi0, sigma0, cfg["time"]["dt"], cfg["time"]["n_steps"])

for r in records[:: len(records) // 5]:
    print(f"t={r.time:.3f}  mass={r.mass:+.5f}  E={r.total_energy:.5f}  "
          f"sigma in [{r.sigma_min:.4f}, {r.sigma_max:.4f}]")

# tumour fraction: where phi has crossed zero
frac = lump_mass(grid.mass_matrix()) @ (state.phi > 0) / (grid.lx * grid.ly)
print(f"tumour area fraction at t={state.time:.3f}: {frac:.4f}")

# the nutrient never leaves [0, M]
assert 0.0 <= state.sigma.min() and state.sigma.max() <= params.M + 1e-12

# largest displacement, to see how far the matrix was pushed
print("max |u| =", float(np.max(np.linalg.norm(state.u, axis=1))))
