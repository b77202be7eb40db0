import numpy as np
import pytest

from mechanochem.diagnostics import l2_norm, vector_h1_norm
from mechanochem.elasticity import (
    assemble_elasticity,
    korn_constant,
    potential_energy,
    solve_displacement,
    strain_field,
    trace_constant,
)
from mechanochem.experiments import elasticity_mms
from mechanochem.grid import GAMMA_N, Grid, boundary_mass_terms, build_grid
from mechanochem.linalg import SolverError
from mechanochem.materials import ElasticLaw, frobenius

LAW = ElasticLaw(1.0, 1.0)
VEGARD = ElasticLaw(0.8, 1.2, np.array([[0.01, 0.0], [0.0, 0.02]]), np.array([[0.03, 0.01], [0.01, -0.02]]))


def dense_stiffness_oracle(grid, law):
    """Loop-based bilinear-element assembly, independent of the vectorised path."""
    n2 = 2 * grid.n_nodes
    K = np.zeros((n2, n2))
    lam, mu = law.lame_lambda, law.lame_mu
    D = np.array([[lam + 2 * mu, lam, 0], [lam, lam + 2 * mu, 0], [0, 0, mu]])
    g = 1 / np.sqrt(3)
    pts = [(0.5 - g / 2, 0.5 - g / 2), (0.5 + g / 2, 0.5 - g / 2),
           (0.5 - g / 2, 0.5 + g / 2), (0.5 + g / 2, 0.5 + g / 2)]
    hx, hy = grid.hx, grid.hy
    for cell in grid.cells:
        ke = np.zeros((8, 8))
        for xi, eta in pts:
            dN = [(-(1 - eta) / hx, -(1 - xi) / hy), ((1 - eta) / hx, -xi / hy),
                  (-eta / hx, (1 - xi) / hy), (eta / hx, xi / hy)]
            B = np.zeros((3, 8))
            for a, (dx, dy) in enumerate(dN):
                B[0, 2 * a], B[1, 2 * a + 1] = dx, dy
                B[2, 2 * a], B[2, 2 * a + 1] = dy, dx
            ke += B.T @ D @ B * 0.25 * hx * hy
        dofs = np.ravel([[2 * n, 2 * n + 1] for n in cell])
        K[np.ix_(dofs, dofs)] += ke
    return K


def test_zero_data_zero_load():
    sys_ = assemble_elasticity(build_grid(3, 3), LAW, (0.0, 0.0))
    assert not np.any(sys_.load_base)
    assert sys_.eigenstrain_coupling.count_nonzero() == 0
    u, _ = solve_displacement(sys_, np.random.default_rng(0).uniform(-1, 1, 16))
    assert not np.any(u)


def test_traction_total_load():
    grid = build_grid(4, 4, 1.0, 1.0, ("left", "bottom", "top"))
    sys_ = assemble_elasticity(grid, LAW, (1.0, 0.0))
    right = grid.edge_nodes("right")
    assert np.isclose(sys_.load_base[2 * right].sum(), 1.0, rtol=1e-14)
    assert np.isclose(sys_.load_base[2 * right + 1].sum(), 0.0)


def test_stiffness_matches_dense_oracle():
    for grid, law in ((build_grid(2, 2), LAW), (build_grid(3, 2, 1.5, 0.8), VEGARD)):
        K = assemble_elasticity(grid, law).stiffness.toarray()
        assert np.allclose(K, dense_stiffness_oracle(grid, law), atol=1e-13)


def test_solve_matches_dense_direct():
    grid = build_grid(4, 4)
    sys_ = assemble_elasticity(grid, VEGARD, (0.2, -0.1))
    phi = np.random.default_rng(1).uniform(-1, 1, grid.n_nodes)
    u, rep = solve_displacement(sys_, phi)
    assert rep.converged
    dense = np.linalg.solve(sys_.reduced.toarray(), sys_.rhs(phi)[sys_.free])
    assert np.allclose(u.ravel()[sys_.free], dense, atol=1e-8)
    assert not np.any(u.ravel()[sys_.fixed])


def test_residual_against_every_basis_function():
    grid = build_grid(8, 8)
    sys_ = assemble_elasticity(grid, VEGARD, (0.3, 0.0))
    u, _ = solve_displacement(sys_, np.full(grid.n_nodes, 0.4))
    assert np.max(np.abs(sys_.residual(u, np.full(grid.n_nodes, 0.4)))) <= 1e-10


def test_doubling_traction_doubles_u():
    grid = build_grid(6, 6)
    phi = np.random.default_rng(2).uniform(-1, 1, grid.n_nodes)
    u1, _ = solve_displacement(assemble_elasticity(grid, LAW, (0.5, 0.2)), phi)
    u2, _ = solve_displacement(assemble_elasticity(grid, LAW, (1.0, 0.4)), phi)
    assert np.allclose(u2, 2 * u1, atol=1e-12)


def test_linearity_in_phi():
    law = ElasticLaw(1.0, 1.0, np.zeros((2, 2)), np.array([[0.05, 0.0], [0.0, 0.05]]))
    grid = build_grid(8, 8)
    sys_ = assemble_elasticity(grid, law)
    rng = np.random.default_rng(3)
    p1, p2 = rng.uniform(-1, 1, (2, grid.n_nodes))
    u1, _ = solve_displacement(sys_, p1)
    u2, _ = solve_displacement(sys_, p2)
    u12, _ = solve_displacement(sys_, p1 + p2)
    assert np.allclose(u12, u1 + u2, atol=1e-10)


def test_minimiser_under_random_perturbations():
    grid = build_grid(6, 6)
    sys_ = assemble_elasticity(grid, VEGARD, (0.2, 0.1))
    rng = np.random.default_rng(4)
    phi = rng.uniform(-1, 1, grid.n_nodes)
    u, _ = solve_displacement(sys_, phi)
    e0 = potential_energy(sys_, phi, u)
    for _ in range(20):
        v = np.zeros(2 * grid.n_nodes)
        v[sys_.free] = rng.standard_normal(sys_.free.size)
        for eps in (1e-3, -1e-3):
            assert potential_energy(sys_, phi, u.ravel() + eps * v) >= e0 - 1e-12


def test_a_priori_bound():
    grid = build_grid(6, 6)
    g = np.array([0.3, -0.2])
    sys_ = assemble_elasticity(grid, VEGARD, g)
    ck, ctr = korn_constant(sys_), trace_constant(sys_)
    R, _ = boundary_mass_terms(grid, GAMMA_N)
    g_norm = np.linalg.norm(g) * np.sqrt(R.sum())
    a, b = frobenius(VEGARD.eigenstrain_offset), frobenius(VEGARD.eigenstrain_slope)
    c4, cmax = VEGARD.coercivity, VEGARD.c_max
    C = ck / c4 * max(cmax * a * np.sqrt(grid.lx * grid.ly) + g_norm * ctr * ck, cmax * b)
    rng = np.random.default_rng(5)
    for scale in (0.0, 0.5, 3.0, 20.0):
        phi = scale * rng.uniform(-1, 1, grid.n_nodes)
        u, _ = solve_displacement(sys_, phi)
        assert vector_h1_norm(grid, u) <= C * (1 + l2_norm(grid, phi)) + 1e-12


def test_strain_examples():
    grid = build_grid(3, 4, 1.0, 2.0)
    x, y = grid.node_coords.T
    assert not np.any(strain_field(grid, np.zeros((grid.n_nodes, 2))))
    e = strain_field(grid, np.column_stack([x, 0 * x]))
    assert np.allclose(e, np.diag([1.0, 0.0]), atol=1e-14)
    e = strain_field(grid, 0.5 * np.column_stack([y, x]))
    assert np.allclose(e, [[0.0, 0.5], [0.5, 0.0]], atol=1e-14)


def test_missing_dirichlet_is_korn_violation():
    grid = Grid(3, 3, 1.0, 1.0, frozenset())
    with pytest.raises(SolverError, match="Korn violation"):
        assemble_elasticity(grid, LAW)


def test_manufactured_solution_order():
    res = elasticity_mms((8, 16, 32, 64))
    assert 1.8 <= res.slope <= 2.2
    assert all(1.8 <= o <= 2.2 for o in res.flags["orders"])
