"""Quasi-static linear elasticity with Vegard eigenstrain.

Displacements are stored nodewise as arrays of shape (n_nodes, 2); the flat
dof index of component c at node n is ``2 n + c``.  Dirichlet dofs on Γ_D are
removed from the system (u = 0 there), so the reduced stiffness is SPD.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from .grid import GAMMA_N, ElementQuadrature, Grid, dirichlet_dofs, gauss_1d
from .linalg import SolveReport, SolverError, cg_solve, is_symmetric, reduce_system
from .materials import ElasticLaw, elastic_energy_W

QUAD = ElementQuadrature.gauss(2)


def _b_matrices(grid: Grid, quad: ElementQuadrature) -> np.ndarray:
    """Strain-displacement matrices (nq, 3, 8) in engineering Voigt order."""
    g = quad.shape_gradients / np.array([grid.hx, grid.hy])
    B = np.zeros((quad.n_points, 3, 8))
    B[:, 0, 0::2] = g[:, :, 0]
    B[:, 1, 1::2] = g[:, :, 1]
    B[:, 2, 0::2] = g[:, :, 1]
    B[:, 2, 1::2] = g[:, :, 0]
    return B


def _d_matrix(law: ElasticLaw) -> np.ndarray:
    lam, mu = law.lame_lambda, law.lame_mu
    return np.array([[lam + 2 * mu, lam, 0.0], [lam, lam + 2 * mu, 0.0], [0.0, 0.0, mu]])


def _voigt_stress(t: np.ndarray) -> np.ndarray:
    return np.array([t[0, 0], t[1, 1], t[0, 1]])


def cell_dofs(grid: Grid) -> np.ndarray:
    c = grid.cells
    out = np.empty((grid.n_cells, 8), dtype=np.int64)
    out[:, 0::2] = 2 * c
    out[:, 1::2] = 2 * c + 1
    return out


def element_stiffness(grid: Grid, law: ElasticLaw, quad: ElementQuadrature = QUAD) -> np.ndarray:
    B = _b_matrices(grid, quad)
    return np.einsum("q,qia,ij,qjb->ab", grid.jxw(quad), B, _d_matrix(law), B)


def traction_load(grid: Grid, traction) -> np.ndarray:
    """Flat load vector ``∫_{Γ_N} g·η``.

    ``traction`` is a constant 2-vector, an array (n_neumann_faces, 2) of
    per-face constants, or a callable ``g(x, y) -> (gx, gy)``.
    """
    n = grid.n_nodes
    out = np.zeros(2 * n)
    faces = grid.faces(GAMMA_N)
    if not faces or traction is None:
        return out
    xq, wq = gauss_1d(2)
    vals = np.column_stack([1 - xq, xq])
    coords = grid.node_coords
    if not callable(traction):
        tr = np.asarray(traction, dtype=float)
        tr = np.broadcast_to(tr, (len(faces), 2))
    for k, f in enumerate(faces):
        a, b = f.nodes
        if callable(traction):
            pts = coords[a] + xq[:, None] * (coords[b] - coords[a])
            gq = np.column_stack(traction(pts[:, 0], pts[:, 1]))
            gq = np.broadcast_to(gq, (len(xq), 2))
        else:
            gq = np.broadcast_to(tr[k], (len(xq), 2))
        local = f.length * np.einsum("q,qa,qc->ac", wq, vals, gq)
        out[2 * a: 2 * a + 2] += local[0]
        out[2 * b: 2 * b + 2] += local[1]
    return out


def body_force_load(grid: Grid, body_force) -> np.ndarray:
    """Flat load vector ``∫ b·η`` for a callable or nodal body force."""
    quad = ElementQuadrature.gauss(3)
    if callable(body_force):
        pts = grid.quadrature_points(quad)
        bx, by = body_force(pts[..., 0], pts[..., 1])
        bq = np.stack(np.broadcast_arrays(bx, by), axis=-1)
    else:
        bq = grid.values_at(np.asarray(body_force, dtype=float), quad)
    out = np.empty(2 * grid.n_nodes)
    out[0::2] = grid.load_vector(bq[..., 0], quad)
    out[1::2] = grid.load_vector(bq[..., 1], quad)
    return out


@dataclass(eq=False)
class ElasticitySystem:
    grid: Grid
    law: ElasticLaw
    stiffness: sp.csr_matrix  # full 2N x 2N, before elimination
    free: np.ndarray
    fixed: np.ndarray
    load_base: np.ndarray
    offset_load: np.ndarray
    eigenstrain_coupling: sp.csr_matrix  # 2N x N
    body_force_hook: np.ndarray | None = None
    cg_tol: float = 1e-12

    def __post_init__(self):
        self.reduced = reduce_system(self.stiffness, self.free)

    def rhs(self, phi: np.ndarray) -> np.ndarray:
        b = self.load_base + self.offset_load + self.eigenstrain_coupling @ np.asarray(phi, dtype=float)
        if self.body_force_hook is not None:
            b = b + self.body_force_hook
        return b

    def residual(self, u: np.ndarray, phi: np.ndarray) -> np.ndarray:
        """Discrete weak-form residual against every free basis function."""
        r = self.stiffness @ np.asarray(u).ravel() - self.rhs(phi)
        return r[self.free]


def assemble_elasticity(grid: Grid, law: ElasticLaw, traction_g=None,
                        body_force=None) -> ElasticitySystem:
    """Assemble stiffness, traction load and the φ → eigenstrain-load map."""
    dofs = cell_dofs(grid)
    ke = element_stiffness(grid, law)
    rows = np.repeat(dofs, 8, axis=1).ravel()
    cols = np.tile(dofs, (1, 8)).ravel()
    n2 = 2 * grid.n_nodes
    K = sp.coo_matrix((np.broadcast_to(ke, (grid.n_cells, 8, 8)).ravel(), (rows, cols)),
                      shape=(n2, n2)).tocsr()

    B = _b_matrices(grid, QUAD)
    jxw = grid.jxw(QUAD)
    s_hat = _voigt_stress(law.apply_C(law.eigenstrain_offset))
    s_star = _voigt_stress(law.apply_C(law.eigenstrain_slope))
    f_hat_e = np.einsum("q,qia,i->a", jxw, B, s_hat)
    offset = np.bincount(dofs.ravel(), weights=np.broadcast_to(f_hat_e, dofs.shape).ravel(),
                         minlength=n2)
    g_e = np.einsum("q,qia,i,qb->ab", jxw, B, s_star, QUAD.shape_values)  # 8 x 4
    G = sp.coo_matrix(
        (np.broadcast_to(g_e, (grid.n_cells, 8, 4)).ravel(),
         (np.repeat(dofs, 4, axis=1).ravel(), np.tile(grid.cells, (1, 8)).ravel())),
        shape=(n2, grid.n_nodes),
    ).tocsr()

    fixed = dirichlet_dofs(grid)
    free = np.setdiff1d(np.arange(n2), fixed)
    if fixed.size == 0:
        raise SolverError("Korn violation: check Γ_D")
    hook = None if body_force is None else body_force_load(grid, body_force)
    system = ElasticitySystem(grid, law, K, free, fixed, traction_load(grid, traction_g),
                              offset, G, hook)
    Kf = system.reduced
    if not is_symmetric(Kf) or np.any(Kf.diagonal() <= 0):
        raise SolverError("Korn violation: check Γ_D")
    return system


def solve_displacement(system: ElasticitySystem, phi, x0=None) -> tuple[np.ndarray, SolveReport]:
    """Displacement (n_nodes, 2) in equilibrium with the eigenstrain of ``phi``."""
    phi = np.asarray(phi, dtype=float)
    if not np.all(np.isfinite(phi)):
        raise ValueError("phi must be finite")
    b = system.rhs(phi)[system.free]
    guess = None if x0 is None else np.asarray(x0).ravel()[system.free]
    try:
        uf, report = cg_solve(system.reduced, b, tol=system.cg_tol, precond="JACOBI", x0=guess)
    except SolverError as exc:
        raise SolverError("Korn violation: check Γ_D", exc.report) from exc
    if not report.converged:
        raise SolverError(f"elasticity CG did not converge (residual {report.final_residual:.3e})",
                          report)
    u = np.zeros(2 * system.grid.n_nodes)
    u[system.free] = uf
    return u.reshape(-1, 2), report


def strain_field(grid: Grid, u, quad: ElementQuadrature = QUAD) -> np.ndarray:
    """Symmetric strain at each Gauss point, shape (n_cells, nq, 2, 2)."""
    grad = grid.gradients_at(np.asarray(u, dtype=float).reshape(-1, 2), quad)
    return 0.5 * (grad + np.swapaxes(grad, -1, -2))


def nodal_average(grid: Grid, qvals: np.ndarray, quad: ElementQuadrature = QUAD) -> np.ndarray:
    """Volume-weighted average of Gauss-point data onto nodes."""
    qvals = np.asarray(qvals, dtype=float)
    tail = qvals.shape[2:]
    w = np.einsum("q,qa->a", grid.jxw(quad), quad.shape_values)
    denom = grid.scatter(np.broadcast_to(w, (grid.n_cells, 4)))
    flat = qvals.reshape(grid.n_cells, quad.n_points, -1)
    out = np.empty((grid.n_nodes, flat.shape[-1]))
    for k in range(flat.shape[-1]):
        out[:, k] = grid.load_vector(flat[:, :, k], quad) / denom
    return out.reshape(grid.n_nodes, *tail)


def elastic_energy(grid: Grid, law: ElasticLaw, phi, u) -> float:
    """``∫ W(φ, ℰ(u))`` by 2x2 Gauss (exact for Q1 data)."""
    strain = strain_field(grid, u)
    return grid.integrate(elastic_energy_W(law, grid.values_at(phi, QUAD), strain), QUAD)


def potential_energy(system: ElasticitySystem, phi, u) -> float:
    """Elastic energy minus traction (and body-force) work."""
    ext = system.load_base
    if system.body_force_hook is not None:
        ext = ext + system.body_force_hook
    return elastic_energy(system.grid, system.law, phi, u) - float(ext @ np.asarray(u).ravel())


def vector_h1_matrix(grid: Grid) -> sp.csr_matrix:
    """Gram matrix of the full vector H¹ inner product on flat dofs."""
    S = grid.stiffness_matrix() + grid.mass_matrix()
    P = sp.kron(S, sp.eye(2), format="csr")
    return P


def korn_constant(system: ElasticitySystem) -> float:
    """Discrete C_K with ‖u‖_{H¹} ≤ C_K ‖ℰ(u)‖_{L²} on the free dofs (dense)."""
    law1 = ElasticLaw(lame_lambda=0.0, lame_mu=0.5)  # 𝒞 = identity: u Ku = ‖ℰ(u)‖²
    grid = system.grid
    E = assemble_elasticity(grid, law1).reduced.toarray()
    H = reduce_system(vector_h1_matrix(grid), system.free).toarray()
    lam_min = scipy.linalg.eigh(E, H, eigvals_only=True, subset_by_index=[0, 0])[0]
    return float(1.0 / np.sqrt(lam_min))


def trace_constant(system: ElasticitySystem) -> float:
    """Discrete constant with ‖u‖_{L²(Γ_N)} ≤ C ‖u‖_{H¹} on the free dofs (dense)."""
    from .grid import boundary_mass_terms

    grid = system.grid
    R, _ = boundary_mass_terms(grid, GAMMA_N)
    if R.nnz == 0:
        return 0.0
    Rv = reduce_system(sp.kron(R, sp.eye(2), format="csr"), system.free).toarray()
    H = reduce_system(vector_h1_matrix(grid), system.free).toarray()
    lam_max = scipy.linalg.eigh(Rv, H, eigvals_only=True)[-1]
    return float(np.sqrt(max(lam_max, 0.0)))
