"""Constitutive laws: double-well split, mobility, Vegard elasticity, sources.

All evaluators are vectorised: scalars broadcast against arrays, and tensor
arguments carry their 2x2 block in the last two axes.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class HypothesisError(ValueError):
    """Model data outside the admissible parameter set."""


QUARTIC = "QUARTIC"
CONSTANT = "CONSTANT"
STRESS_GATED = "STRESS_GATED"
ONE = "ONE"
ZERO = "ZERO"
CLAMPED_LINEAR = "CLAMPED_LINEAR"

_SYM_ATOL = 1e-12


def ddot(a, b):
    """Double contraction ``a : b`` over the trailing 2x2 axes."""
    return np.einsum("...ij,...ij->...", a, b)


def frobenius(a):
    return np.sqrt(ddot(a, a))


def _check_sym(strain, what="strain"):
    strain = np.asarray(strain, dtype=float)
    if strain.shape[-2:] != (2, 2):
        raise ValueError(f"{what} must end in a 2x2 block, got shape {strain.shape}")
    scale = max(1.0, float(np.max(np.abs(strain), initial=0.0)))
    if not np.allclose(strain, np.swapaxes(strain, -1, -2), atol=_SYM_ATOL * scale, rtol=0):
        raise ValueError(f"{what} must be symmetric")
    return strain


def _sym_tensor(t) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    if t.shape == ():
        t = t * np.eye(2)
    t = t.reshape(2, 2)
    if not np.allclose(t, t.T, atol=1e-14):
        raise HypothesisError("eigenstrain tensors must be symmetric")
    return t


# -- potential ---------------------------------------------------------------


@dataclass(frozen=True)
class PotentialSplit:
    """``ψ(s) = (s² − 1)²`` split as convex ``s⁴ + 1`` plus concave ``−2s²``."""

    kind: str = QUARTIC

    def __post_init__(self):
        if self.kind != QUARTIC:
            raise ValueError(f"unsupported potential kind {self.kind!r}")

    # |ψ₂''| bound
    C1 = 4.0

    @staticmethod
    def psi(s):
        s = np.asarray(s, dtype=float)
        return (s * s - 1.0) ** 2

    @staticmethod
    def psi1(s):
        s = np.asarray(s, dtype=float)
        return s**4 + 1.0

    @staticmethod
    def psi2(s):
        s = np.asarray(s, dtype=float)
        return -2.0 * s * s

    @staticmethod
    def psi1_prime(s):
        s = np.asarray(s, dtype=float)
        return 4.0 * s**3

    @staticmethod
    def psi1_second(s):
        s = np.asarray(s, dtype=float)
        return 12.0 * s * s

    @staticmethod
    def psi2_prime(s):
        return -4.0 * np.asarray(s, dtype=float)

    @staticmethod
    def psi2_second(s):
        return np.full_like(np.asarray(s, dtype=float), -4.0)


def psi_eval(split: PotentialSplit, s):
    """Return ``(ψ, ψ₁', ψ₁'', ψ₂')`` at ``s``."""
    return split.psi(s), split.psi1_prime(s), split.psi1_second(s), split.psi2_prime(s)


# -- mobility ----------------------------------------------------------------


@dataclass(frozen=True)
class MobilityLaw:
    """Constant mobility ``c3``, or ``c2 + (c3 − c2) / (1 + |W_,E|²)``."""

    kind: str = CONSTANT
    c2: float = 1.0
    c3: float = 1.0

    def __post_init__(self):
        if self.kind not in (CONSTANT, STRESS_GATED):
            raise ValueError(f"unknown mobility kind {self.kind!r}")
        if not (0 < self.c2 <= self.c3):
            raise HypothesisError(f"mobility bounds need 0 < C2 <= C3, got {self.c2}, {self.c3}")

    def __call__(self, stress=None, shape=None):
        """Mobility given the stress ``W_,E`` (ignored for CONSTANT)."""
        if self.kind == CONSTANT:
            if stress is not None:
                shape = np.shape(stress)[:-2]
            return np.full(shape if shape is not None else (), self.c3)
        s2 = ddot(stress, stress)
        return self.c2 + (self.c3 - self.c2) / (1.0 + s2)


# -- elasticity --------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ElasticLaw:
    """Constant isotropic tensor with Vegard eigenstrain ``Ê + E* s``."""

    lame_lambda: float = 0.0
    lame_mu: float = 0.5
    eigenstrain_offset: np.ndarray = field(default_factory=lambda: np.zeros((2, 2)))
    eigenstrain_slope: np.ndarray = field(default_factory=lambda: np.zeros((2, 2)))

    def __post_init__(self):
        if not (self.lame_mu > 0 and self.lame_lambda + self.lame_mu > 0):
            raise HypothesisError(
                "Lamé moduli must satisfy mu > 0 and lambda + mu > 0, "
                f"got lambda={self.lame_lambda}, mu={self.lame_mu}"
            )
        object.__setattr__(self, "eigenstrain_offset", _sym_tensor(self.eigenstrain_offset))
        object.__setattr__(self, "eigenstrain_slope", _sym_tensor(self.eigenstrain_slope))

    def apply_C(self, e):
        """``𝒞 e = λ tr(e) I + 2μ e``."""
        e = np.asarray(e, dtype=float)
        tr = e[..., 0, 0] + e[..., 1, 1]
        return 2.0 * self.lame_mu * e + self.lame_lambda * tr[..., None, None] * np.eye(2)

    def voigt_matrix(self) -> np.ndarray:
        """Matrix of 𝒞 in the orthonormal basis (e11, e22, √2 e12)."""
        lam, mu = self.lame_lambda, self.lame_mu
        return np.array([[lam + 2 * mu, lam, 0.0], [lam, lam + 2 * mu, 0.0], [0.0, 0.0, 2 * mu]])

    @property
    def coercivity(self) -> float:
        """C₄: smallest eigenvalue of 𝒞 on symmetric tensors."""
        return min(2.0 * self.lame_mu, 2.0 * (self.lame_lambda + self.lame_mu))

    @property
    def c_max(self) -> float:
        return max(2.0 * self.lame_mu, 2.0 * (self.lame_lambda + self.lame_mu))

    @property
    def growth_constant(self) -> float:
        """A C₅ valid for both growth bounds on W, W_,φ and W_,E."""
        c = self.c_max
        a = frobenius(self.eigenstrain_offset)
        b = frobenius(self.eigenstrain_slope)
        # |W| <= (3c/2)(|E|² + a² + b² s²)
        w = 1.5 * c * max(1.0, a * a, b * b)
        # |W_φ| <= c b (|E| + a + b|s|) <= c b ((1 + |E|²)/2 + a + b(1 + s²)/2)
        wphi = c * b * max(0.5 + a + 0.5 * b, 0.5, 0.5 * b)
        # |W_E| <= c (|E| + a + b|s|)
        we = c * max(1.0, a, b)
        return max(w + wphi, we)

    @property
    def is_coupled(self) -> bool:
        return bool(np.any(self.eigenstrain_slope != 0))

    def eigenstrain(self, s):
        s = np.asarray(s, dtype=float)
        return self.eigenstrain_offset + s[..., None, None] * self.eigenstrain_slope

    def slope_stiffness(self) -> float:
        """``𝒞E* : E*``, the constant ∂W_,φ/∂s."""
        return float(ddot(self.apply_C(self.eigenstrain_slope), self.eigenstrain_slope))


def elastic_energy_W(law: ElasticLaw, s, strain):
    strain = _check_sym(strain)
    d = strain - law.eigenstrain(s)
    return 0.5 * ddot(d, law.apply_C(d))


def stress_W_E(law: ElasticLaw, s, strain):
    strain = _check_sym(strain)
    return law.apply_C(strain - law.eigenstrain(s))


def w_phi(law: ElasticLaw, s, strain):
    """``W_,φ = −𝒞(ℰ − Ê − E*s) : E*``."""
    return -ddot(stress_W_E(law, s, strain), law.eigenstrain_slope)


# -- sources -----------------------------------------------------------------


@dataclass(frozen=True)
class RateTable:
    """Piecewise-constant, left-continuous rate.

    ``values[0]`` holds on ``t <= breaks[0]``, ``values[k]`` on
    ``(breaks[k-1], breaks[k]]`` and ``values[-1]`` after the last break.
    """

    values: tuple
    breaks: tuple = ()

    def __post_init__(self):
        vals = tuple(float(v) for v in np.atleast_1d(self.values))
        brk = tuple(float(b) for b in np.atleast_1d(self.breaks)) if len(np.atleast_1d(self.breaks)) else ()
        if len(vals) != len(brk) + 1:
            raise ValueError("rate table needs one more value than breakpoints")
        if any(v < 0 for v in vals):
            raise HypothesisError("rates must be non-negative")
        if any(b1 >= b2 for b1, b2 in zip(brk[:-1], brk[1:])):
            raise ValueError("rate table breakpoints must increase")
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "breaks", brk)

    @classmethod
    def constant(cls, v: float) -> "RateTable":
        return cls((v,), ())

    def __call__(self, t: float) -> float:
        k = int(np.searchsorted(self.breaks, t, side="left"))
        return self.values[k]

    @property
    def max_value(self) -> float:
        return max(self.values)


def _as_rate(v) -> RateTable:
    return v if isinstance(v, RateTable) else RateTable.constant(float(v))


def _shape_fn(kind: str, which: str):
    if kind == ONE:
        return lambda s: np.ones_like(np.asarray(s, dtype=float))
    if kind == ZERO:
        return lambda s: np.zeros_like(np.asarray(s, dtype=float))
    if kind == CLAMPED_LINEAR:
        if which == "k":
            return lambda s: np.clip(np.asarray(s, dtype=float), -1.0, 1.0)
        return lambda s: np.clip(0.5 * (1.0 + np.asarray(s, dtype=float)), 0.0, 1.0)
    raise ValueError(f"unknown {which}-law kind {kind!r}")


@dataclass(frozen=True, eq=False)
class SourceLaw:
    lambda_p: RateTable = field(default_factory=lambda: RateTable.constant(0.0))
    lambda_a: RateTable = field(default_factory=lambda: RateTable.constant(0.0))
    lambda_c: RateTable = field(default_factory=lambda: RateTable.constant(0.0))
    B: float = 0.0
    sigma_c: object = 0.0
    f_kind: str = CLAMPED_LINEAR
    h_kind: str = CLAMPED_LINEAR
    k_kind: str = CLAMPED_LINEAR

    def __post_init__(self):
        for name in ("lambda_p", "lambda_a", "lambda_c"):
            object.__setattr__(self, name, _as_rate(getattr(self, name)))
        if self.B < 0:
            raise HypothesisError("supply rate B must be non-negative")
        sc = np.asarray(self.sigma_c, dtype=float)
        if np.any(sc < 0) or not np.all(np.isfinite(sc)):
            raise HypothesisError("sigma_c must be non-negative and bounded")
        for kind, which in ((self.f_kind, "f"), (self.h_kind, "h"), (self.k_kind, "k")):
            _shape_fn(kind, which)

    def f(self, s):
        return _shape_fn(self.f_kind, "f")(s)

    def h(self, s):
        return _shape_fn(self.h_kind, "h")(s)

    def k(self, s):
        return _shape_fn(self.k_kind, "k")(s)

    @property
    def lipschitz(self) -> float:
        """Common Lipschitz constant L of f, h, k."""
        return 1.0

    @property
    def sigma_c_max(self) -> float:
        return float(np.max(self.sigma_c))


def truncate_g(s, sB_max: float, sc_max: float):
    """``max(0, min(s, sB_max, sc_max))``; pass ``np.inf`` to disable a cap."""
    return np.maximum(0.0, np.minimum(np.minimum(s, sB_max), sc_max))


def source_U(srcs: SourceLaw, law: ElasticLaw, t: float, phi, sigma, strain):
    """Stress-gated proliferation minus apoptosis.

    The stress magnitude is the Frobenius norm of ``W_,E(φ, ℰ)``.
    """
    stress = stress_W_E(law, phi, strain)
    gate = 1.0 / (1.0 + frobenius(stress))
    return srcs.lambda_p(t) * srcs.f(phi) * sigma * gate - srcs.lambda_a(t) * srcs.k(phi)


def source_S(srcs: SourceLaw, t: float, phi, sigma, sigma_c=None):
    """Nutrient consumption plus capillary supply."""
    sc = srcs.sigma_c if sigma_c is None else sigma_c
    return -srcs.lambda_c(t) * srcs.h(phi) * sigma + srcs.B * (sc - sigma)
