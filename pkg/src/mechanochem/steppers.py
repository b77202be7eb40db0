"""Time integration of the coupled phase-field / nutrient / elasticity system.

One step of :func:`coupled_step` is staggered:

1. displacement in equilibrium with the old phase field,
2. implicit nutrient update on the lumped mass (discrete maximum principle),
3. convex-splitting Cahn-Hilliard update solved by damped Newton.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from functools import cached_property, lru_cache

import numpy as np
import scipy.sparse as sp

from .elasticity import (
    QUAD as QUAD2,
    ElasticitySystem,
    assemble_elasticity,
    solve_displacement,
    strain_field,
)
from .grid import ALL_GAMMA, ElementQuadrature, Grid, boundary_mass_terms
from .linalg import SolveReport, SolverError, cg_solve, factorize, lump_mass
from .materials import (
    ElasticLaw,
    HypothesisError,
    MobilityLaw,
    PotentialSplit,
    SourceLaw,
    ddot,
    source_U,
    stress_W_E,
    truncate_g,
)

logger = logging.getLogger(__name__)

QUAD3 = ElementQuadrature.gauss(3)


class StageError(RuntimeError):
    """A sub-step failed; the message is prefixed with the stage label."""

    def __init__(self, stage: str, cause: Exception, step: int | None = None):
        where = stage if step is None else f"step {step}: {stage}"
        super().__init__(f"{where}: {cause}")
        self.stage = stage
        self.step = step
        self.cause = cause


@dataclass(frozen=True, eq=False)
class ModelParams:
    epsilon: float = 0.05
    chi: float = 0.0
    beta: float = 1.0
    kappa: float = 1.0
    sigma_B: object = 1.0  # constant or one value per boundary face
    traction: object = (0.0, 0.0)
    potential: PotentialSplit = field(default_factory=PotentialSplit)
    mobility: MobilityLaw = field(default_factory=MobilityLaw)
    elastic: ElasticLaw = field(default_factory=ElasticLaw)
    sources: SourceLaw = field(default_factory=SourceLaw)

    def __post_init__(self):
        if not self.epsilon > 0:
            raise HypothesisError(f"epsilon must be a positive constant, got {self.epsilon}")
        for name in ("beta", "kappa", "chi"):
            if getattr(self, name) < 0:
                raise HypothesisError(f"{name} must be non-negative, got {getattr(self, name)}")
        if self.beta == 0 and self.sources.B + self.kappa <= 0:
            raise HypothesisError("beta=0 requires B+kappa>0")
        sb = np.asarray(self.sigma_B, dtype=float)
        if np.any(sb < 0) or not np.all(np.isfinite(sb)):
            raise HypothesisError("sigma_B must be non-negative and bounded")

    @property
    def M(self) -> float:
        """Upper nutrient bound ``max(‖σ_c‖∞, ‖σ_B‖∞)``."""
        return max(float(np.max(self.sigma_B)), self.sources.sigma_c_max)

    @property
    def truncation_caps(self) -> tuple[float, float]:
        """Caps of the σ truncation; a cap whose source term is switched off is inactive."""
        sb = float(np.max(self.sigma_B)) if self.kappa > 0 else np.inf
        sc = self.sources.sigma_c_max if self.sources.B > 0 else np.inf
        return sb, sc


@dataclass
class StepInfo:
    newton_iters: int = 0
    linear_iters: int = 0
    source_integral: float = 0.0
    dt: float = 0.0


@dataclass
class FieldState:
    time: float
    phi: np.ndarray
    mu: np.ndarray
    sigma: np.ndarray
    u: np.ndarray
    strain: np.ndarray
    info: StepInfo = field(default_factory=StepInfo)

    def copy(self) -> "FieldState":
        return replace(self, phi=self.phi.copy(), mu=self.mu.copy(), sigma=self.sigma.copy(),
                       u=self.u.copy(), strain=self.strain.copy(), info=replace(self.info))


@dataclass
class NewtonReport:
    iterations: int
    residuals: list
    converged: bool
    linear_solves: int = 0
    source_integral: float = 0.0


class Operators:
    """Matrices shared by every step on a fixed grid/parameter pair."""

    def __init__(self, grid: Grid, params: ModelParams):
        self.grid = grid
        self.params = params
        self.M = grid.mass_matrix()
        self.K = grid.stiffness_matrix()
        self.m_lumped = lump_mass(self.M)
        R, _ = boundary_mass_terms(grid, ALL_GAMMA)
        self.r_lumped = lump_mass(R)
        self.ones = np.ones(grid.n_nodes)

    @cached_property
    def elasticity(self) -> ElasticitySystem:
        return assemble_elasticity(self.grid, self.params.elastic, self.params.traction)

    @cached_property
    def sigma_B_load(self) -> np.ndarray:
        """``∫_Γ σ_B N_i`` with face-constant σ_B (equals lumped R σ_B for constants)."""
        faces = self.grid.faces(ALL_GAMMA)
        sb = np.broadcast_to(np.asarray(self.params.sigma_B, dtype=float), (len(faces),))
        out = np.zeros(self.grid.n_nodes)
        for f, v in zip(faces, sb):
            out[list(f.nodes)] += 0.5 * f.length * v
        return out

    @cached_property
    def sigma_c_nodal(self) -> np.ndarray:
        return np.broadcast_to(np.asarray(self.params.sources.sigma_c, dtype=float),
                               (self.grid.n_nodes,)).copy()

    @cached_property
    def mobility_matrix_const(self):
        return self.params.mobility.c3 * self.K

    def mobility_matrix(self, phi_old, strain_old):
        mob = self.params.mobility
        if mob.kind == "CONSTANT":
            return self.mobility_matrix_const
        stress = stress_W_E(self.params.elastic, self.grid.values_at(phi_old, QUAD2), strain_old)
        return self.grid.stiffness_matrix(mob(stress), QUAD2)


@lru_cache(maxsize=16)
def operators(grid: Grid, params: ModelParams) -> Operators:
    return Operators(grid, params)


# -- initial data ------------------------------------------------------------


def mollify_initial(grid: Grid, phi0, delta: float, tol: float = 1e-13) -> np.ndarray:
    """Neumann smoothing: solve ``(δK + M) φ_δ = M φ₀``."""
    if not (0 < delta <= 1):
        raise ValueError(f"delta must lie in (0, 1], got {delta}")
    phi0 = np.asarray(phi0, dtype=float)
    if not np.all(np.isfinite(phi0)):
        raise ValueError("phi0 must be finite")
    M = grid.mass_matrix()
    A = (delta * grid.stiffness_matrix() + M).tocsr()
    x, rep = cg_solve(A, M @ phi0, tol=tol, precond="JACOBI", x0=phi0)
    if not rep.converged:
        raise SolverError("mollifier CG did not converge", rep)
    return x


# -- nutrient ----------------------------------------------------------------


def nutrient_matrix(grid: Grid, params: ModelParams, phi_old, dt: float, t_new: float):
    ops = operators(grid, params)
    src = params.sources
    beta = params.beta
    if beta == 0 and src.B + params.kappa <= 0:
        raise ValueError("quasi-static nutrient system singular")
    if beta > 0 and not dt > 0:
        raise ValueError("dt must be positive")
    react = src.lambda_c(t_new) * src.h(np.asarray(phi_old)) + src.B
    diag = ops.m_lumped * react + params.kappa * ops.r_lumped
    if beta > 0:
        diag = diag + (beta / dt) * ops.m_lumped
    A = (ops.K + sp.diags(diag)).tocsr()
    return A


def nutrient_step(grid: Grid, params: ModelParams, phi_old, sigma_old, dt: float,
                  t_new: float, solver: str = "DIRECT",
                  tol: float = 1e-12) -> tuple[np.ndarray, SolveReport]:
    """Implicit nutrient update on the lumped mass.

    The matrix is an M-matrix on square cells, so the update maps
    ``[0, M]``-valued data into ``[0, M]``.  The default sparse LU keeps the
    nodal bounds at round-off level; ``solver="CG"`` uses conjugate gradients
    with relative tolerance ``tol``.
    """
    ops = operators(grid, params)
    src = params.sources
    A = nutrient_matrix(grid, params, phi_old, dt, t_new)
    b = src.B * ops.m_lumped * ops.sigma_c_nodal + params.kappa * ops.sigma_B_load
    if params.beta > 0:
        b = b + (params.beta / dt) * ops.m_lumped * np.asarray(sigma_old, dtype=float)
    if solver == "DIRECT":
        x = factorize(A).solve(b)
        res = float(np.linalg.norm(A @ x - b))
        return x, SolveReport(1, res, True, "DIRECT")
    x, rep = cg_solve(A, b, tol=tol, precond="JACOBI", x0=np.asarray(sigma_old, dtype=float))
    if not rep.converged:
        raise SolverError("nutrient CG did not converge", rep)
    return x, rep


# -- Cahn-Hilliard -----------------------------------------------------------


class _CHSystem:
    """Residual and Jacobian of the convex-split Cahn-Hilliard step."""

    def __init__(self, grid, params, phi_old, sigma_new, strain_new, mobility_matrix,
                 source_load, dt):
        ops = operators(grid, params)
        el: ElasticLaw = params.elastic
        self.grid, self.params, self.ops, self.dt = grid, params, ops, dt
        self.phi_old = np.asarray(phi_old, dtype=float)
        self.Km = mobility_matrix
        self.bU = source_load
        self.c_slope = el.slope_stiffness()
        if el.is_coupled:
            pre = el.apply_C(strain_new - el.eigenstrain_offset)
            self.w0 = grid.load_vector(-ddot(pre, el.eigenstrain_slope), QUAD2)
        else:
            self.w0 = np.zeros(grid.n_nodes)
        self.chem = params.chi * (ops.M @ np.asarray(sigma_new, dtype=float))
        self.explicit_q = params.potential.psi2_prime(grid.values_at(self.phi_old, QUAD3))
        self.n = grid.n_nodes

    def potential_load(self, phi):
        q = self.grid.values_at(phi, QUAD3)
        return self.grid.load_vector(self.params.potential.psi1_prime(q) + self.explicit_q, QUAD3)

    def residual(self, x):
        n, p, ops = self.n, self.params, self.ops
        phi, mu = x[:n], x[n:]
        r1 = ops.M @ (phi - self.phi_old) + self.dt * (self.Km @ mu) - self.dt * self.bU
        r2 = (ops.M @ mu - p.epsilon * (ops.K @ phi) - self.potential_load(phi) / p.epsilon
              + self.chem - self.w0 - self.c_slope * (ops.M @ phi))
        return np.concatenate([r1, r2])

    def jacobian(self, x):
        p, ops = self.params, self.ops
        phi = x[: self.n]
        JF = self.grid.weighted_mass_matrix(
            p.potential.psi1_second(self.grid.values_at(phi, QUAD3)), QUAD3)
        lower = -p.epsilon * ops.K - JF / p.epsilon - self.c_slope * ops.M
        return sp.bmat([[ops.M, self.dt * self.Km], [lower, ops.M]], format="csc")


def source_load(grid: Grid, params: ModelParams, t, phi_old, sigma_new, strain_new,
                truncate: bool = True) -> np.ndarray:
    """Nodal vector ``∫ U(φ_old, g(σ_new), ℰ(u_new)) N_i`` by 2x2 Gauss."""
    src = params.sources
    if src.lambda_p(t) == 0 and src.lambda_a(t) == 0:
        return np.zeros(grid.n_nodes)
    phi_q = grid.values_at(phi_old, QUAD2)
    sig_q = grid.values_at(sigma_new, QUAD2)
    if truncate:
        sig_q = truncate_g(sig_q, *params.truncation_caps)
    return grid.load_vector(source_U(src, params.elastic, t, phi_q, sig_q, strain_new), QUAD2)


def ch_step(grid: Grid, params: ModelParams, state_old: FieldState, sigma_new, u_new,
            dt: float, t_new: float, tol: float = 1e-10, max_iter: int = 50,
            strain_new=None) -> tuple[np.ndarray, np.ndarray, NewtonReport]:
    """Convex-splitting Cahn-Hilliard step, solved by damped Newton.

    ψ₁' is implicit, ψ₂' explicit, W_,φ implicit (affine in φ), mobility
    lagged at the old state.  Returns ``(phi_new, mu_new, report)``.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    ops = operators(grid, params)
    if strain_new is None:
        strain_new = strain_field(grid, u_new)
    Km = ops.mobility_matrix(state_old.phi, state_old.strain)
    bU = source_load(grid, params, t_new, state_old.phi, sigma_new, strain_new)
    system = _CHSystem(grid, params, state_old.phi, sigma_new, strain_new, Km, bU, dt)

    x = np.concatenate([state_old.phi, state_old.mu])
    r = system.residual(x)
    rnorm = float(np.max(np.abs(r)))
    history = [rnorm]
    solves = 0
    for it in range(max_iter):
        if rnorm <= tol:
            return (x[: system.n].copy(), x[system.n:].copy(),
                    NewtonReport(it, history, True, solves, float(np.sum(bU))))
        dx = factorize(system.jacobian(x)).solve(-r)
        solves += 1
        lam = 1.0
        for halving in range(11):
            trial = x + lam * dx
            r_trial = system.residual(trial)
            t_norm = float(np.max(np.abs(r_trial)))
            if t_norm < rnorm or not np.isfinite(rnorm):
                break
            lam *= 0.5
        else:
            raise SolverError(f"Newton stagnation (residuals {history})",
                              NewtonReport(it + 1, history, False, solves))
        x, r, rnorm = trial, r_trial, t_norm
        history.append(rnorm)
    if rnorm <= tol:
        return (x[: system.n].copy(), x[system.n:].copy(),
                NewtonReport(max_iter, history, True, solves, float(np.sum(bU))))
    raise SolverError(f"Newton failed after {max_iter} iterations (residuals {history})",
                      NewtonReport(max_iter, history, False, solves))


def chemical_potential(grid: Grid, params: ModelParams, phi, sigma, strain) -> np.ndarray:
    """μ consistent with ``phi`` (the μ-equation with ψ' fully evaluated at ``phi``)."""
    ops = operators(grid, params)
    el = params.elastic
    q = grid.values_at(phi, QUAD3)
    pot = grid.load_vector(params.potential.psi1_prime(q) + params.potential.psi2_prime(q), QUAD3)
    rhs = params.epsilon * (ops.K @ phi) + pot / params.epsilon - params.chi * (ops.M @ sigma)
    if el.is_coupled:
        wphi = -ddot(stress_W_E(el, grid.values_at(phi, QUAD2), strain), el.eigenstrain_slope)
        rhs = rhs + grid.load_vector(wphi, QUAD2)
    return factorize(ops.M).solve(rhs)


# -- coupling ----------------------------------------------------------------


def initial_state(grid: Grid, params: ModelParams, phi0, sigma0, t0: float = 0.0) -> FieldState:
    phi0 = np.asarray(phi0, dtype=float) * np.ones(grid.n_nodes)
    sigma0 = np.asarray(sigma0, dtype=float) * np.ones(grid.n_nodes)
    ops = operators(grid, params)
    try:
        u0, rep = solve_displacement(ops.elasticity, phi0)
    except Exception as exc:
        raise StageError("elasticity", exc) from exc
    strain0 = strain_field(grid, u0)
    mu0 = chemical_potential(grid, params, phi0, sigma0, strain0)
    return FieldState(t0, phi0, mu0, sigma0, u0, strain0, StepInfo(linear_iters=rep.iterations))


def coupled_step(grid: Grid, params: ModelParams, state: FieldState, dt: float) -> FieldState:
    """Advance ``state`` by ``dt`` (elasticity, then nutrient, then Cahn-Hilliard)."""
    ops = operators(grid, params)
    t_new = state.time + dt
    try:
        u_new, rep_u = solve_displacement(ops.elasticity, state.phi, x0=state.u)
    except Exception as exc:
        raise StageError("elasticity", exc) from exc
    strain_new = strain_field(grid, u_new)
    try:
        sigma_new, rep_s = nutrient_step(grid, params, state.phi, state.sigma, dt, t_new)
    except Exception as exc:
        raise StageError("nutrient", exc) from exc
    try:
        phi_new, mu_new, rep_n = ch_step(grid, params, state, sigma_new, u_new, dt, t_new,
                                         strain_new=strain_new)
    except Exception as exc:
        raise StageError("cahn-hilliard", exc) from exc
    info = StepInfo(
        newton_iters=rep_n.iterations,
        linear_iters=rep_u.iterations + rep_s.iterations + rep_n.linear_solves,
        source_integral=rep_n.source_integral,
        dt=dt,
    )
    return FieldState(t_new, phi_new, mu_new, sigma_new, u_new, strain_new, info)


def run_simulation(grid: Grid, params: ModelParams, phi0, sigma0, dt: float, n_steps: int,
                   hooks=()):
    """Run ``n_steps`` coupled steps; returns ``(final_state, records)``.

    ``hooks`` are callables ``hook(state, record)`` invoked after the initial
    state and after every step.
    """
    from .diagnostics import make_record

    sigma0_arr = np.asarray(sigma0, dtype=float) * np.ones(grid.n_nodes)
    M = params.M
    if np.min(sigma0_arr) < 0 or np.max(sigma0_arr) > M:
        raise HypothesisError(f"initial nutrient must satisfy 0 <= sigma0 <= M = {M:g}, "
                         f"got range [{np.min(sigma0_arr):g}, {np.max(sigma0_arr):g}]")
    if n_steps < 0 or (n_steps > 0 and not dt > 0):
        raise ValueError("need n_steps >= 0 and dt > 0")
    state = initial_state(grid, params, phi0, sigma0_arr)
    records = [make_record(grid, params, state)]
    for hook in hooks:
        hook(state, records[-1])
    for k in range(1, n_steps + 1):
        try:
            state = coupled_step(grid, params, state, dt)
        except StageError as exc:
            raise StageError(exc.stage, exc.cause, step=k) from exc
        records.append(make_record(grid, params, state))
        for hook in hooks:
            hook(state, records[-1])
    return state, records
