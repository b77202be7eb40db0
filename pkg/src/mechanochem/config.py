"""INI-style run configuration.

Every key is declared in ``SCHEMA`` with a parser, a formatter and a default;
unknown sections or keys are rejected.  ``RunConfig.to_text()`` writes the
canonical form (every key, schema order), so ``parse(to_text(c)) == c``.

Rate keys (``lambda_p``, ``lambda_a``, ``lambda_c``) accept a constant or a
left-continuous table ``v0, t1:v1, t2:v2`` (``v0`` up to and including ``t1``).
Tensor keys are four comma-separated numbers in row-major order.
"""

from __future__ import annotations

import configparser
import io
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .grid import EDGES, build_grid
from .materials import (
    CLAMPED_LINEAR,
    CONSTANT,
    ONE,
    STRESS_GATED,
    ZERO,
    ElasticLaw,
    MobilityLaw,
    PotentialSplit,
    RateTable,
    SourceLaw,
)


class ConfigError(ValueError):
    """Invalid configuration (syntax or a violated model hypothesis)."""


def _fmt_float(v: float) -> str:
    return repr(float(v))


def _parse_float(s: str) -> float:
    return float(s)


def _parse_int(s: str) -> int:
    v = float(s)
    if v != int(v):
        raise ValueError(f"expected an integer, got {s!r}")
    return int(v)


def _parse_floats(s: str) -> tuple:
    return tuple(float(x) for x in s.replace(";", ",").split(",") if x.strip())


def _fmt_floats(v) -> str:
    return ", ".join(repr(float(x)) for x in v)


def _parse_tensor(s: str) -> tuple:
    v = _parse_floats(s)
    if len(v) != 4:
        raise ValueError(f"expected 4 comma-separated numbers, got {len(v)}")
    return v


def _parse_vec2(s: str) -> tuple:
    v = _parse_floats(s)
    if len(v) != 2:
        raise ValueError(f"expected 2 comma-separated numbers, got {len(v)}")
    return v


def _parse_edges(s: str) -> tuple:
    edges = tuple(e for e in (x.strip().lower() for x in s.replace(",", " ").split()) if e)
    bad = [e for e in edges if e not in EDGES]
    if bad:
        raise ValueError(f"unknown edge(s) {bad}; choose from {list(EDGES)}")
    return tuple(sorted(set(edges), key=EDGES.index))


def _fmt_edges(v) -> str:
    return ", ".join(v)


def _parse_rate(s: str) -> RateTable:
    parts = [p.strip() for p in s.split(",") if p.strip()]
    values = [float(parts[0])]
    breaks = []
    for p in parts[1:]:
        t, v = p.split(":")
        breaks.append(float(t))
        values.append(float(v))
    return RateTable(tuple(values), tuple(breaks))


def _fmt_rate(r: RateTable) -> str:
    out = [repr(r.values[0])]
    out += [f"{b!r}:{v!r}" for b, v in zip(r.breaks, r.values[1:])]
    return ", ".join(out)


def _choice(*options):
    def parse(s: str) -> str:
        v = s.strip().lower()
        if v not in options:
            raise ValueError(f"expected one of {list(options)}, got {s!r}")
        return v
    return parse


def _parse_bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {s!r}")


def _parse_sigma0(s: str):
    v = s.strip().lower()
    return v if v == "quasistatic" else float(v)


def _fmt_sigma0(v) -> str:
    return v if isinstance(v, str) else repr(float(v))


_str = (str.strip, str)
_float = (_parse_float, _fmt_float)
_int = (_parse_int, str)
_rate = (_parse_rate, _fmt_rate)
_tensor = (_parse_tensor, _fmt_floats)
_vec2 = (_parse_vec2, _fmt_floats)
_floats = (_parse_floats, _fmt_floats)
_bool = (_parse_bool, lambda b: "true" if b else "false")
_shape_kind = (_choice("one", "zero", "clamped_linear"), str)

# section -> key -> (parse, format, default)
SCHEMA: dict[str, dict[str, tuple]] = {
    "grid": {
        "nx": (*_int, 32),
        "ny": (*_int, 32),
        "lx": (*_float, 1.0),
        "ly": (*_float, 1.0),
        "dirichlet": (_parse_edges, _fmt_edges, ("left",)),
    },
    "time": {
        "dt": (*_float, 1e-3),
        "n_steps": (*_int, 100),
    },
    "model": {
        "epsilon": (*_float, 0.05),
        "chi": (*_float, 0.0),
        "beta": (*_float, 1.0),
        "mobility": (_choice("constant", "stress_gated"), str, "constant"),
        "mobility_min": (*_float, 1.0),
        "mobility_max": (*_float, 1.0),
        "phi0": (_choice("disc", "constant", "cosine", "random"), str, "disc"),
        "phi0_value": (*_float, 0.0),
        "seed_radius": (*_float, 0.2),
        "seed_center": (*_vec2, (0.5, 0.5)),
        "mollify_delta": (*_float, 0.0),
        "seed": (*_int, 0),
    },
    "potential": {
        "kind": (_choice("quartic"), str, "quartic"),
    },
    "elasticity": {
        "lame_lambda": (*_float, 1.0),
        "lame_mu": (*_float, 1.0),
        "eigenstrain_offset": (*_tensor, (0.0, 0.0, 0.0, 0.0)),
        "eigenstrain_slope": (*_tensor, (0.0, 0.0, 0.0, 0.0)),
        "traction": (*_vec2, (0.0, 0.0)),
    },
    "nutrient": {
        "kappa": (*_float, 1.0),
        "sigma_b": (*_float, 1.0),
        "sigma0": (_parse_sigma0, _fmt_sigma0, 1.0),
    },
    "sources": {
        "lambda_p": (*_rate, RateTable.constant(0.0)),
        "lambda_a": (*_rate, RateTable.constant(0.0)),
        "lambda_c": (*_rate, RateTable.constant(0.0)),
        "supply_rate": (*_float, 0.0),
        "sigma_c": (*_float, 1.0),
        "f": (*_shape_kind, "clamped_linear"),
        "h": (*_shape_kind, "clamped_linear"),
        "k": (*_shape_kind, "clamped_linear"),
    },
    "output": {
        "directory": (*_str, "output"),
        "csv": (*_str, "diagnostics.csv"),
        "snapshot_every": (*_int, 0),
        "vtk_prefix": (*_str, "state"),
    },
    "experiment": {
        "betas": (*_floats, (1.0, 0.5, 0.25, 0.125, 0.0)),
        "deltas": (*_floats, (1e-1, 1e-2, 1e-3, 1e-4)),
        "perturb_target": (_choice("phi0", "sigma0", "g", "sigma_b", "sigma_c"), str, "phi0"),
        "perturb_betas": (*_floats, (1.0, 0.1)),
        "dual_branch": (*_bool, False),
        "grids": (*_floats, (8.0, 16.0, 32.0)),
        "dt_rule": (_choice("fixed", "linear", "quadratic"), str, "fixed"),
    },
}

_KIND = {"one": ONE, "zero": ZERO, "clamped_linear": CLAMPED_LINEAR}


@dataclass
class RunConfig:
    sections: dict = field(default_factory=dict)
    source: str | None = None

    def __post_init__(self):
        full = {s: {k: spec[2] for k, spec in keys.items()} for s, keys in SCHEMA.items()}
        for s, kv in self.sections.items():
            full[s].update(kv)
        self.sections = full

    def __getitem__(self, section: str) -> dict:
        return self.sections[section]

    def get(self, section: str, key: str):
        return self.sections[section][key]

    def __eq__(self, other) -> bool:
        return isinstance(other, RunConfig) and self.to_text() == other.to_text()

    def with_values(self, **updates) -> "RunConfig":
        """Copy with ``section__key=value`` overrides."""
        sections = {s: dict(kv) for s, kv in self.sections.items()}
        for name, value in updates.items():
            s, k = name.split("__", 1)
            if k not in SCHEMA.get(s, {}):
                raise ConfigError(f"unknown key {s}.{k}")
            parse = SCHEMA[s][k][0]
            if isinstance(value, str):
                value = parse(value)
            elif parse is _parse_rate and not isinstance(value, RateTable):
                value = RateTable.constant(float(value))
            sections[s][k] = value
        cfg = RunConfig(sections, self.source)
        cfg.validate()
        return cfg

    def to_text(self) -> str:
        out = io.StringIO()
        for s, keys in SCHEMA.items():
            out.write(f"[{s}]\n")
            for k, (_, fmt, _) in keys.items():
                out.write(f"{k} = {fmt(self.sections[s][k])}\n")
            out.write("\n")
        return out.getvalue()

    # -- model construction -------------------------------------------

    def build_grid(self):
        g = self["grid"]
        return build_grid(g["nx"], g["ny"], g["lx"], g["ly"], g["dirichlet"])

    def build_params(self):
        from .steppers import ModelParams

        m, e, n, s = self["model"], self["elasticity"], self["nutrient"], self["sources"]
        mob_kind = CONSTANT if m["mobility"] == "constant" else STRESS_GATED
        return ModelParams(
            epsilon=m["epsilon"],
            chi=m["chi"],
            beta=m["beta"],
            kappa=n["kappa"],
            sigma_B=n["sigma_b"],
            traction=tuple(e["traction"]),
            potential=PotentialSplit(self["potential"]["kind"].upper()),
            mobility=MobilityLaw(mob_kind, m["mobility_min"], m["mobility_max"]),
            elastic=ElasticLaw(e["lame_lambda"], e["lame_mu"],
                               np.reshape(e["eigenstrain_offset"], (2, 2)),
                               np.reshape(e["eigenstrain_slope"], (2, 2))),
            sources=SourceLaw(s["lambda_p"], s["lambda_a"], s["lambda_c"], s["supply_rate"],
                              s["sigma_c"], _KIND[s["f"]], _KIND[s["h"]], _KIND[s["k"]]),
        )

    def initial_phi(self, grid):
        from .steppers import mollify_initial

        m = self["model"]
        x, y = grid.node_coords.T
        if m["phi0"] == "constant":
            phi0 = np.full(grid.n_nodes, m["phi0_value"])
        elif m["phi0"] == "cosine":
            phi0 = m["phi0_value"] + 0.5 * np.cos(np.pi * x / grid.lx) * np.cos(np.pi * y / grid.ly)
        elif m["phi0"] == "random":
            rng = np.random.default_rng(m["seed"])
            phi0 = m["phi0_value"] + 0.05 * rng.uniform(-1.0, 1.0, grid.n_nodes)
        else:
            cx, cy = m["seed_center"]
            r = np.hypot(x - cx, y - cy)
            phi0 = -np.tanh((r - m["seed_radius"]) / (np.sqrt(2.0) * m["epsilon"]))
        if m["mollify_delta"] > 0:
            phi0 = mollify_initial(grid, phi0, m["mollify_delta"])
        return phi0

    def initial_sigma(self, grid, params, phi0):
        from .steppers import nutrient_step

        s0 = self["nutrient"]["sigma0"]
        if s0 == "quasistatic":
            from dataclasses import replace

            qs = replace(params, beta=0.0)
            sigma, _ = nutrient_step(grid, qs, phi0, np.zeros(grid.n_nodes), 1.0, 0.0)
            return np.clip(sigma, 0.0, params.M)
        return np.full(grid.n_nodes, float(s0))

    def validate(self) -> None:
        """Re-check model hypotheses; raises ConfigError naming section.key."""
        g, m, n, s = self["grid"], self["model"], self["nutrient"], self["sources"]
        if not g["dirichlet"]:
            raise ConfigError("grid.dirichlet: Γ_D must have positive measure")
        if g["nx"] < 2 or g["ny"] < 2 or g["lx"] <= 0 or g["ly"] <= 0:
            raise ConfigError("grid: need nx, ny >= 2 and positive lx, ly")
        if self["time"]["dt"] <= 0 or self["time"]["n_steps"] < 0:
            raise ConfigError("time: need dt > 0 and n_steps >= 0")
        if not m["epsilon"] > 0:
            raise ConfigError("model.epsilon: epsilon is a positive constant")
        for sec, key in (("model", "beta"), ("model", "chi"), ("nutrient", "kappa"),
                         ("sources", "supply_rate")):
            if self[sec][key] < 0:
                raise ConfigError(f"{sec}.{key}: must be non-negative")
        if m["beta"] == 0 and s["supply_rate"] + n["kappa"] <= 0:
            raise ConfigError("model.beta: beta=0 requires B+kappa>0")
        if not (0 < m["mobility_min"] <= m["mobility_max"]):
            raise ConfigError("model.mobility_min: need 0 < C2 <= C3")
        if n["sigma_b"] < 0 or s["sigma_c"] < 0:
            raise ConfigError("nutrient.sigma_b/sources.sigma_c: must be non-negative")
        e = self["elasticity"]
        if not (e["lame_mu"] > 0 and e["lame_lambda"] + e["lame_mu"] > 0):
            raise ConfigError("elasticity.lame_mu: need mu > 0 and lambda + mu > 0")
        for key in ("eigenstrain_offset", "eigenstrain_slope"):
            t = e[key]
            if t[1] != t[2]:
                raise ConfigError(f"elasticity.{key}: tensor must be symmetric")
        M = max(n["sigma_b"], s["sigma_c"])
        s0 = n["sigma0"]
        if s0 != "quasistatic" and not (0 <= s0 <= M):
            raise ConfigError(f"nutrient.sigma0: need 0 <= sigma0 <= M = {M:g}")
        if not (0 <= m["mollify_delta"] <= 1):
            raise ConfigError("model.mollify_delta: must lie in [0, 1]")


def parse_config_text(text: str, source: str | None = None) -> RunConfig:
    cp = configparser.ConfigParser(
        comment_prefixes=("#",), inline_comment_prefixes=("#",), strict=True,
        interpolation=None, empty_lines_in_values=False,
    )
    where = source or "<config>"
    try:
        cp.read_string(text, source=where)
    except configparser.MissingSectionHeaderError as exc:
        raise ConfigError(f"parse error in {where}, line {exc.lineno}: "
                          "expected a [section] header") from exc
    except configparser.ParsingError as exc:
        lineno, line = exc.errors[0][0], exc.errors[0][1].strip()
        raise ConfigError(f"parse error in {where}, line {lineno}: cannot parse {line}") from exc
    except (configparser.DuplicateOptionError, configparser.DuplicateSectionError) as exc:
        what = f"key {exc.section}.{exc.option}" if hasattr(exc, "option") else f"section [{exc.section}]"
        raise ConfigError(f"parse error in {where}, line {exc.lineno}: duplicate {what}") from exc
    except configparser.Error as exc:
        raise ConfigError(f"parse error in {where}: {exc}") from exc
    sections: dict = {}
    for s in cp.sections():
        if s not in SCHEMA:
            raise ConfigError(f"unknown section [{s}]")
        sections[s] = {}
        for k, raw in cp.items(s):
            if k not in SCHEMA[s]:
                raise ConfigError(f"unknown key {s}.{k}")
            try:
                sections[s][k] = SCHEMA[s][k][0](raw)
            except (ValueError, TypeError) as exc:
                raise ConfigError(f"{s}.{k}: {exc}") from exc
    cfg = RunConfig(sections, source)
    cfg.validate()
    return cfg


def parse_config(path) -> RunConfig:
    """Read and validate a configuration file."""
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    return parse_config_text(text, str(path))


def serialize(cfg: RunConfig) -> str:
    return cfg.to_text()


def shipped_config_path(name: str) -> Path:
    return Path(__file__).parent / "configs" / f"{name}.ini"


def load_shipped(name: str = "baseline") -> RunConfig:
    return parse_config(shipped_config_path(name))
