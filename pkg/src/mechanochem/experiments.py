"""Parameter sweeps: quasi-static limit, continuous dependence, self-convergence."""

from __future__ import annotations

import csv
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .config import RunConfig
from .diagnostics import bochner_l2, dual_norm, h1_norm, l2_norm, vector_h1_norm
from .elasticity import assemble_elasticity, solve_displacement
from .grid import GAMMA_N, boundary_mass_terms, build_grid
from .materials import CONSTANT, ElasticLaw, HypothesisError, SourceLaw
from .steppers import coupled_step, initial_state

logger = logging.getLogger(__name__)

PHI0, SIGMA0, G, SIGMA_B, SIGMA_C = "phi0", "sigma0", "g", "sigma_b", "sigma_c"


@dataclass
class Scenario:
    grid: object
    params: object
    phi0: np.ndarray
    sigma0: np.ndarray
    dt: float
    n_steps: int

    @classmethod
    def from_config(cls, cfg: RunConfig) -> "Scenario":
        grid = cfg.build_grid()
        params = cfg.build_params()
        phi0 = cfg.initial_phi(grid)
        sigma0 = cfg.initial_sigma(grid, params, phi0)
        return cls(grid, params, phi0, sigma0, cfg["time"]["dt"], cfg["time"]["n_steps"])


@dataclass
class Trajectory:
    times: np.ndarray
    phi: list
    mu: list
    sigma: list
    u: list


@dataclass
class SweepResult:
    name: str
    parameter: str
    values: list
    metrics: dict = field(default_factory=dict)
    slope: float | None = None
    flags: dict = field(default_factory=dict)
    notes: list = field(default_factory=list)

    def rows(self):
        keys = list(self.metrics)
        for i, v in enumerate(self.values):
            yield [v] + [self.metrics[k][i] for k in keys]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow([self.parameter] + list(self.metrics))
            for row in self.rows():
                w.writerow([f"{x:.17g}" if isinstance(x, float) else x for x in row])

    def summary(self) -> str:
        lines = [f"{self.name}: {len(self.values)} values of {self.parameter}"]
        if self.slope is not None:
            lines.append(f"  fitted log-log slope: {self.slope:.4f}")
        for k, v in self.flags.items():
            lines.append(f"  {k}: {v}")
        lines.extend(f"  note: {n}" for n in self.notes)
        return "\n".join(lines)


def loglog_slope(x, y) -> float:
    """Least-squares slope of log y against log x (needs >= 3 positive points)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if len(x) < 3:
        raise ValueError("slope needs at least 3 points")
    if np.any(x <= 0) or np.any(y <= 0):
        raise ValueError("log-log fit needs positive data")
    return float(np.polyfit(np.log(x), np.log(y), 1)[0])


def simulate(sc: Scenario) -> Trajectory:
    """Run a scenario and keep every time level of every field."""
    state = initial_state(sc.grid, sc.params, sc.phi0, sc.sigma0)
    times, phi, mu, sigma, u = [state.time], [state.phi], [state.mu], [state.sigma], [state.u]
    for _ in range(sc.n_steps):
        state = coupled_step(sc.grid, sc.params, state, sc.dt)
        times.append(state.time)
        phi.append(state.phi)
        mu.append(state.mu)
        sigma.append(state.sigma)
        u.append(state.u)
    return Trajectory(np.array(times), phi, mu, sigma, u)


def _map(fn, items, threads: int):
    items = list(items)
    if threads <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))  # results come back in submission order


def _scenario(config) -> Scenario:
    return config if isinstance(config, Scenario) else Scenario.from_config(config)


# -- quasi-static limit ------------------------------------------------------


def quasistatic_sweep(config, beta_list, threads: int = 1) -> SweepResult:
    """``e(β) = ‖σ_β − σ_0‖_{L²(0,T;H¹)}`` against the quasi-static (β = 0) run."""
    betas = [float(b) for b in beta_list]
    positive = [b for b in betas if b > 0]
    if 0.0 not in betas or len(positive) < 3:
        raise ValueError("beta_list must contain 0 and at least 3 positive values")
    base = _scenario(config)

    def run(beta):
        try:
            return simulate(replace(base, params=replace(base.params, beta=beta)))
        except Exception as exc:
            raise RuntimeError(f"beta={beta:g}: {exc}") from exc

    trajs = dict(zip(betas, _map(run, betas, threads)))
    ref = trajs[0.0]
    grid = base.grid
    err = []
    for b in betas:
        tr = trajs[b]
        norms = [h1_norm(grid, s - r) for s, r in zip(tr.sigma, ref.sigma)]
        err.append(math.sqrt(bochner_l2(tr.times, norms)))
    pos = sorted(positive, reverse=True)
    e_pos = [err[betas.index(b)] for b in pos]
    res = SweepResult("quasistatic_sweep", "beta", betas, {"e_beta": err})
    res.flags["finite"] = bool(np.all(np.isfinite(err)))
    res.flags["strictly_decreasing"] = bool(all(a > b for a, b in zip(e_pos[:-1], e_pos[1:])))
    # below this, e(β) is round-off and a fitted slope would be meaningless
    floor = 1e-12 * math.sqrt(bochner_l2(ref.times, [h1_norm(grid, s) for s in ref.sigma]))
    if all(e > floor for e in e_pos):
        res.slope = loglog_slope(pos, e_pos)
    res.notes.append("convergence is along the full beta sequence; relies on uniqueness of "
                     "the quasi-static limit under constant mobility")
    return res


# -- continuous dependence ---------------------------------------------------


def _bump(grid, center=(0.6, 0.5), width=0.1):
    x, y = grid.node_coords.T
    return np.exp(-((x - center[0]) ** 2 + (y - center[1]) ** 2) / (2 * width**2))


def perturb(sc: Scenario, target: str, delta: float) -> Scenario:
    """Scenario with one datum perturbed by ``delta`` along a fixed direction."""
    grid, p = sc.grid, sc.params
    bump = _bump(grid)
    if target == PHI0:
        return replace(sc, phi0=sc.phi0 + delta * bump)
    if target == SIGMA0:
        return replace(sc, sigma0=sc.sigma0 - delta * bump * sc.sigma0)
    if target == G:
        g = np.asarray(p.traction, dtype=float) + delta * np.array([1.0, 0.0])
        return replace(sc, params=replace(p, traction=tuple(g)))
    if target == SIGMA_B:
        return replace(sc, params=replace(p, sigma_B=float(np.max(p.sigma_B)) - delta))
    if target == SIGMA_C:
        sc_field = np.broadcast_to(np.asarray(p.sources.sigma_c, dtype=float), (grid.n_nodes,))
        new_src = replace(p.sources, sigma_c=sc_field - delta * bump * sc_field)
        return replace(sc, params=replace(p, sources=new_src))
    raise ValueError(f"unknown perturbation target {target!r}")


def data_difference(base: Scenario, pert: Scenario, q: int = 2) -> float:
    """Right-hand side of the continuous-dependence estimate without its constant."""
    grid = base.grid
    T = base.dt * base.n_steps
    dphi = pert.phi0 - base.phi0
    out = (l2_norm(grid, dphi) if q == 2 else dual_norm(grid, dphi)) ** 2
    out += base.params.beta * l2_norm(grid, pert.sigma0 - base.sigma0) ** 2
    R, _ = boundary_mass_terms(grid, GAMMA_N)
    dg = np.asarray(pert.params.traction, float) - np.asarray(base.params.traction, float)
    out += float(dg @ dg) * float(R.sum())
    Rall, _ = boundary_mass_terms(grid)
    dsb = float(np.max(pert.params.sigma_B) - np.max(base.params.sigma_B))
    out += T * dsb**2 * float(Rall.sum())
    dsc = (np.broadcast_to(np.asarray(pert.params.sources.sigma_c, float), (grid.n_nodes,))
           - np.broadcast_to(np.asarray(base.params.sources.sigma_c, float), (grid.n_nodes,)))
    out += T * l2_norm(grid, dsc) ** 2
    return out


def solution_difference(grid, beta: float, a: Trajectory, b: Trajectory, q: int = 2) -> dict:
    """Terms of the left-hand side of the continuous-dependence estimate."""
    t = a.times
    dphi = [x - y for x, y in zip(a.phi, b.phi)]
    dsig = [x - y for x, y in zip(a.sigma, b.sigma)]
    du = [x - y for x, y in zip(a.u, b.u)]
    dmu = [x - y for x, y in zip(a.mu, b.mu)]
    weak = l2_norm if q == 2 else dual_norm
    terms = {
        "phi_sup": max(weak(grid, d) ** 2 for d in dphi),
        "phi_l2h1": bochner_l2(t, [h1_norm(grid, d) for d in dphi]),
        "sigma_sup": beta * max(l2_norm(grid, d) ** 2 for d in dsig),
        "sigma_l2h1": bochner_l2(t, [h1_norm(grid, d) for d in dsig]),
        "mu": bochner_l2(t[1:], [weak(grid, d) for d in dmu[1:]]),
    }
    u_norms = [vector_h1_norm(grid, d) for d in du]
    terms["u"] = max(n**2 for n in u_norms) if q == 2 else bochner_l2(t, u_norms)
    terms["lhs"] = sum(terms.values())
    # H¹-level parts of the stronger estimate; reported, not part of lhs
    terms["phi_sup_h1"] = max(h1_norm(grid, d) ** 2 for d in dphi)
    terms["mu_l2h1"] = bochner_l2(t[1:], [h1_norm(grid, d) for d in dmu[1:]])
    return terms


def check_dependence_hypotheses(params) -> None:
    if params.mobility.kind != CONSTANT:
        raise HypothesisError("continuous-dependence hypotheses not met: needs constant mobility")
    if not isinstance(params.elastic, ElasticLaw) or not isinstance(params.sources, SourceLaw):
        raise HypothesisError("continuous-dependence hypotheses not met: needs the affine eigenstrain "
                              "law and the standard source law")


def perturbation_study(config, deltas, perturb_target: str = PHI0, betas=None, q: int = 2,
                       threads: int = 1) -> SweepResult:
    """Output differences against data differences for a family of perturbations.

    One row per ``(beta, delta)`` pair; ``slope`` is the fit of √LHS against
    delta for the first beta, and ``flags['slopes']`` has one entry per beta.
    """
    base = _scenario(config)
    check_dependence_hypotheses(base.params)
    if q not in (2, 4):
        raise ValueError("q must be 2 or 4")
    deltas = [float(d) for d in deltas]
    betas = [base.params.beta] if betas is None else [float(b) for b in betas]

    jobs = []
    for beta in betas:
        sc = replace(base, params=replace(base.params, beta=beta))
        jobs.append((beta, None, sc))
        jobs.extend((beta, d, perturb(sc, perturb_target, d)) for d in deltas)
    trajs = _map(lambda job: simulate(job[2]), jobs, threads)

    res = SweepResult("perturbation_study", "delta", [],
                      {"beta": [], "lhs": [], "rhs": [], "ratio": [], "u_over_g": [],
                       "phi_sup_h1": [], "mu_l2h1": []})
    slopes = {}
    for beta in betas:
        ib = next(i for i, j in enumerate(jobs) if j[0] == beta and j[1] is None)
        base_sc, base_tr = jobs[ib][2], trajs[ib]
        sq = []
        for i, (b, d, sc) in enumerate(jobs):
            if b != beta or d is None:
                continue
            terms = solution_difference(base.grid, beta, trajs[i], base_tr, q)
            rhs = data_difference(base_sc, sc, q)
            res.values.append(d)
            res.metrics["beta"].append(beta)
            res.metrics["lhs"].append(terms["lhs"])
            res.metrics["rhs"].append(rhs)
            res.metrics["ratio"].append(terms["lhs"] / rhs if rhs > 0 else 0.0)
            res.metrics["phi_sup_h1"].append(terms["phi_sup_h1"])
            res.metrics["mu_l2h1"].append(terms["mu_l2h1"])
            res.metrics["u_over_g"].append(
                math.sqrt(terms["u"]) / d if (perturb_target == G and d > 0 and q == 2) else float("nan"))
            sq.append((d, math.sqrt(terms["lhs"])))
        pos = [(d, s) for d, s in sq if d > 0 and s > 0]
        if len(pos) >= 3:
            slopes[beta] = loglog_slope(*zip(*pos))
    res.slope = slopes.get(betas[0])
    res.flags["slopes"] = slopes
    ratios = [r for r, d in zip(res.metrics["ratio"], res.values) if d > 0]
    if ratios:
        res.flags["max_ratio"] = max(ratios)
        res.flags["ratio_spread"] = max(ratios) / min(ratios) if min(ratios) > 0 else float("inf")
    return res


# -- convergence -------------------------------------------------------------


def _dt_for(rule: str, dt0: float, h0: float, h: float) -> float:
    if rule == "fixed":
        return dt0
    if rule == "linear":
        return dt0 * h / h0
    if rule == "quadratic":
        return dt0 * (h / h0) ** 2
    raise ValueError(f"unknown dt rule {rule!r}")


def convergence_study(config: RunConfig, grid_list, dt_rule: str = "fixed",
                      threads: int = 1) -> SweepResult:
    """Self-convergence of φ, σ, u at the final time against the finest grid."""
    ns = [int(n) for n in grid_list]
    if len(ns) < 3:
        raise ValueError("need at least 3 grids")
    if any(b != a and b != 2 * a for a, b in zip(ns[:-1], ns[1:])):
        raise ValueError("each grid must refine the previous one by 2 (or repeat it)")
    dt0 = config["time"]["dt"]
    T = dt0 * config["time"]["n_steps"]
    h0 = config["grid"]["lx"] / ns[0]

    def run(n):
        dt = _dt_for(dt_rule, dt0, h0, config["grid"]["lx"] / n)
        steps = int(round(T / dt))
        cfg = config.with_values(grid__nx=n, grid__ny=n, time__dt=dt, time__n_steps=steps)
        sc = Scenario.from_config(cfg)
        tr = simulate(sc)
        return sc.grid, tr

    runs = _map(run, ns, threads)
    fine_grid, fine = runs[-1]
    metrics = {"err_phi": [], "err_sigma": [], "err_u": []}
    for grid, tr in runs:
        metrics["err_phi"].append(l2_norm(grid, tr.phi[-1] - grid.restrict_from(fine_grid, fine.phi[-1])))
        metrics["err_sigma"].append(
            l2_norm(grid, tr.sigma[-1] - grid.restrict_from(fine_grid, fine.sigma[-1])))
        du = tr.u[-1] - grid.restrict_from(fine_grid, fine.u[-1])
        metrics["err_u"].append(math.sqrt(sum(l2_norm(grid, du[:, c]) ** 2 for c in range(2))))
    res = SweepResult("convergence_study", "n", ns, metrics)
    orders = {}
    for k, e in metrics.items():
        e = e[:-1]
        orders[k] = [math.log2(a / b) if a > 0 and b > 0 else float("nan")
                     for a, b in zip(e[:-1], e[1:])]
    res.flags["orders"] = orders
    return res


def manufactured_displacement(x, y):
    return np.sin(np.pi * x) * np.sin(np.pi * y), 0.5 * np.sin(2 * np.pi * x) * np.sin(np.pi * y)


def _manufactured_body_force(law: ElasticLaw):
    lam, mu = law.lame_lambda, law.lame_mu
    pi = np.pi

    def f(x, y):
        sx, cx, sy, cy = np.sin(pi * x), np.cos(pi * x), np.sin(pi * y), np.cos(pi * y)
        s2x, c2x = np.sin(2 * pi * x), np.cos(2 * pi * x)
        # u1 = sx sy, u2 = s2x sy / 2
        u1_xx = -pi**2 * sx * sy
        u1_yy = -pi**2 * sx * sy
        u1_xy = pi**2 * cx * cy
        u2_xx = -2 * pi**2 * s2x * sy
        u2_yy = -0.5 * pi**2 * s2x * sy
        u2_xy = pi**2 * c2x * cy
        # -div(𝒞ℰ(u)) = -(μ Δu + (λ + μ) ∇ div u)
        fx = -(mu * (u1_xx + u1_yy) + (lam + mu) * (u1_xx + u2_xy))
        fy = -(mu * (u2_xx + u2_yy) + (lam + mu) * (u1_xy + u2_yy))
        return fx, fy

    return f


def elasticity_mms(grid_sizes=(8, 16, 32, 64), law: ElasticLaw | None = None) -> SweepResult:
    """L² error of the displacement against a smooth manufactured solution."""
    law = law or ElasticLaw(lame_lambda=1.0, lame_mu=1.0)
    body = _manufactured_body_force(law)
    errs = []
    for n in grid_sizes:
        grid = build_grid(n, n, 1.0, 1.0, ("left", "right", "bottom", "top"))
        system = assemble_elasticity(grid, law, None, body_force=body)
        u, _ = solve_displacement(system, np.zeros(grid.n_nodes))
        errs.append(_l2_error_vector(grid, u, manufactured_displacement))
    res = SweepResult("elasticity_mms", "n", list(grid_sizes), {"l2_error": errs})
    res.slope = -loglog_slope(grid_sizes, errs)
    res.flags["orders"] = [math.log2(a / b) for a, b in zip(errs[:-1], errs[1:])]
    return res


def _l2_error_vector(grid, u, exact) -> float:
    from .grid import ElementQuadrature

    quad = ElementQuadrature.gauss(4)
    pts = grid.quadrature_points(quad)
    ex = np.stack(exact(pts[..., 0], pts[..., 1]), axis=-1)
    uh = grid.values_at(u, quad)
    return math.sqrt(grid.integrate(np.sum((uh - ex) ** 2, axis=-1), quad))
