"""Norms, free energy and the per-step ledgers used to check the model's properties."""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields

import numpy as np

from .elasticity import elastic_energy
from .grid import ElementQuadrature, Grid
from .linalg import SolverError, cg_solve

QUAD3 = ElementQuadrature.gauss(3)


@dataclass
class DiagnosticsRecord:
    time: float
    total_energy: float
    ginzburg_landau_part: float
    nutrient_part: float
    elastic_part: float
    mass: float
    sigma_min: float
    sigma_max: float
    grad_mu_norm: float
    sigma_h1_norm: float
    newton_iters: int
    linear_iters: int
    dt: float = 0.0
    source_integral: float = 0.0
    phi_h1_norm: float = 0.0
    psi_l1: float = 0.0
    sigma_l2_norm: float = 0.0
    u_h1_norm: float = 0.0
    mu_h1_norm: float = 0.0

    @classmethod
    def field_names(cls) -> list[str]:
        return [f.name for f in fields(cls)]

    def as_dict(self) -> dict:
        return asdict(self)


@dataclass
class EnergyParts:
    ginzburg_landau: float
    nutrient: float
    elastic: float

    @property
    def total(self) -> float:
        return self.ginzburg_landau + self.nutrient + self.elastic


def _mats(grid: Grid):
    # small per-grid cache; grids hash by identity
    cache = _mats.__dict__.setdefault("cache", {})
    key = id(grid)
    hit = cache.get(key)
    if hit is None or hit[0] is not grid:
        if len(cache) > 32:
            cache.clear()
        hit = (grid, grid.mass_matrix(), grid.stiffness_matrix())
        cache[key] = hit
    return hit[1], hit[2]


def l2_norm(grid: Grid, f) -> float:
    M, _ = _mats(grid)
    f = np.asarray(f, dtype=float)
    return float(np.sqrt(max(f @ (M @ f), 0.0)))


def grad_norm(grid: Grid, f) -> float:
    _, K = _mats(grid)
    f = np.asarray(f, dtype=float)
    return float(np.sqrt(max(f @ (K @ f), 0.0)))


def h1_norm(grid: Grid, f) -> float:
    M, K = _mats(grid)
    f = np.asarray(f, dtype=float)
    return float(np.sqrt(max(f @ (K @ f) + f @ (M @ f), 0.0)))


def vector_h1_norm(grid: Grid, u) -> float:
    """Full H¹ norm of a displacement field (n_nodes, 2)."""
    u = np.asarray(u, dtype=float)
    return float(np.sqrt(sum(h1_norm(grid, u[:, c]) ** 2 for c in range(2))))


def riesz_inverse(grid: Grid, f, tol: float = 1e-13) -> np.ndarray:
    """``z`` solving the discrete Neumann problem ``(K + M) z = M f``."""
    M, K = _mats(grid)
    b = M @ np.asarray(f, dtype=float)
    z, rep = cg_solve((K + M).tocsr(), b, tol=tol, precond="JACOBI")
    if not rep.converged and rep.final_residual > 1e-11 * max(np.linalg.norm(b), 1e-300):
        raise SolverError("dual-norm CG did not converge", rep)
    return z


def dual_norm(grid: Grid, f) -> float:
    """Discrete (H¹)' norm: ``‖f‖*² = (M f)·z`` with ``(K + M) z = M f``."""
    M, _ = _mats(grid)
    f = np.asarray(f, dtype=float)
    if not np.any(f):
        return 0.0
    z = riesz_inverse(grid, f)
    return float(np.sqrt(max((M @ f) @ z, 0.0)))


def l2h1_accumulate(records, attr: str = "sigma_h1_norm") -> float:
    """``∫₀ᵀ ‖·‖²`` by the left-endpoint rectangle rule over the record times."""
    t = np.array([r.time for r in records])
    v = np.array([getattr(r, attr) for r in records])
    return float(np.sum(np.diff(t) * v[:-1] ** 2))


def bochner_l2(times, norms) -> float:
    """Left-endpoint ``∫ n(t)² dt`` for plain arrays."""
    t = np.asarray(times, dtype=float)
    v = np.asarray(norms, dtype=float)
    return float(np.sum(np.diff(t) * v[:-1] ** 2))


def total_energy(grid: Grid, params, state) -> EnergyParts:
    """Ginzburg-Landau, nutrient and elastic parts of the free energy."""
    _, K = _mats(grid)
    phi = np.asarray(state.phi, dtype=float)
    gl = 0.5 * params.epsilon * float(phi @ (K @ phi))
    gl += grid.integrate(params.potential.psi(grid.values_at(phi, QUAD3)), QUAD3) / params.epsilon
    nutrient = 0.0
    if params.beta > 0:
        nutrient = 0.5 * params.beta * l2_norm(grid, state.sigma) ** 2
    elastic = elastic_energy(grid, params.elastic, phi, state.u)
    return EnergyParts(gl, nutrient, elastic)


def make_record(grid: Grid, params, state) -> DiagnosticsRecord:
    parts = total_energy(grid, params, state)
    M, _ = _mats(grid)
    info = state.info
    return DiagnosticsRecord(
        time=float(state.time),
        total_energy=parts.total,
        ginzburg_landau_part=parts.ginzburg_landau,
        nutrient_part=parts.nutrient,
        elastic_part=parts.elastic,
        mass=float(np.sum(M @ state.phi)),
        sigma_min=float(np.min(state.sigma)),
        sigma_max=float(np.max(state.sigma)),
        grad_mu_norm=grad_norm(grid, state.mu),
        sigma_h1_norm=h1_norm(grid, state.sigma),
        newton_iters=int(info.newton_iters),
        linear_iters=int(info.linear_iters),
        dt=float(info.dt),
        source_integral=float(info.source_integral),
        phi_h1_norm=h1_norm(grid, state.phi),
        psi_l1=grid.integrate(np.abs(params.potential.psi(grid.values_at(state.phi, QUAD3))), QUAD3),
        sigma_l2_norm=l2_norm(grid, state.sigma),
        u_h1_norm=vector_h1_norm(grid, state.u),
        mu_h1_norm=h1_norm(grid, state.mu),
    )


@dataclass
class LedgerReport:
    sup_phi_h1_sq: float
    sup_psi_l1: float
    sup_beta_sigma_sq: float
    sup_u_h1_sq: float
    sup_part: float
    mu_l2h1_sq: float
    sigma_l2h1_sq: float
    lhs: float
    rhs_scale: float
    ratio: float
    finite: bool


def energy_inequality_ledger(records, params, init_data_norms) -> LedgerReport:
    """Collect the terms of the energy inequality and the ratio to ``1 + β‖σ₀‖²``.

    ``init_data_norms`` is a mapping with at least ``sigma0_l2``.  The sup
    terms use the maximum of the summed quantity over the recorded times.
    """
    if not records:
        raise ValueError("need at least one record")
    beta = params.beta
    phi_sq = np.array([r.phi_h1_norm ** 2 for r in records])
    psi = np.array([r.psi_l1 for r in records])
    sig_sq = np.array([beta * r.sigma_l2_norm ** 2 for r in records])
    u_sq = np.array([r.u_h1_norm ** 2 for r in records])
    sup_part = float(np.max(phi_sq + psi + sig_sq + u_sq))
    mu_int = l2h1_accumulate(records, "mu_h1_norm")
    sig_int = l2h1_accumulate(records, "sigma_h1_norm")
    lhs = sup_part + mu_int + sig_int
    scale = 1.0 + beta * float(init_data_norms["sigma0_l2"]) ** 2
    ratio = lhs / scale
    finite = bool(np.all(np.isfinite([lhs, ratio])))
    return LedgerReport(float(phi_sq.max()), float(psi.max()), float(sig_sq.max()),
                        float(u_sq.max()), sup_part, mu_int, sig_int, lhs, scale, ratio, finite)


def sigma_bounds_check(state, M: float, tol: float = 1e-12) -> tuple[bool, float]:
    """``(ok, violation)`` for the nodal bound ``0 <= σ <= M``."""
    if M < 0:
        raise ValueError("M must be non-negative")
    sigma = np.asarray(getattr(state, "sigma", state), dtype=float)
    violation = max(0.0, -float(np.min(sigma)), float(np.max(sigma)) - M)
    return violation <= tol, violation
