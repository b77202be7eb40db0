"""Structured Q1 mesh on an axis-aligned rectangle.

Nodes are numbered x-fastest: node ``j * (nx + 1) + i`` sits at
``(i * hx, j * hy)``.  Cell ``c = j * nx + i`` owns the four nodes
``n0, n0 + 1, n0 + nx + 1, n0 + nx + 2`` with ``n0 = j * (nx + 1) + i``,
i.e. local order (0,0), (1,0), (0,1), (1,1) on the reference square [0,1]^2.

Everything the assembly routines need (quadrature, basis evaluations,
scatter helpers, scalar mass/stiffness matrices) lives here.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp

logger = logging.getLogger(__name__)

EDGES = ("bottom", "right", "top", "left")
DIRICHLET_D = "D"
NEUMANN_N = "N"
ALL_GAMMA = "ALL_GAMMA"
GAMMA_N = "GAMMA_N"

# reference coordinates of the local nodes
_LOCAL_NODES = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])


def gauss_1d(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre rule with ``n`` points on [0, 1]."""
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


def q1_values(xi: np.ndarray, eta: np.ndarray) -> np.ndarray:
    """Q1 basis values, shape (npts, 4)."""
    xi = np.asarray(xi, dtype=float)
    eta = np.asarray(eta, dtype=float)
    return np.stack(
        [(1 - xi) * (1 - eta), xi * (1 - eta), (1 - xi) * eta, xi * eta], axis=-1
    )


def q1_gradients(xi: np.ndarray, eta: np.ndarray) -> np.ndarray:
    """Reference gradients, shape (npts, 4, 2)."""
    xi = np.asarray(xi, dtype=float)
    eta = np.asarray(eta, dtype=float)
    dxi = np.stack([-(1 - eta), 1 - eta, -eta, eta], axis=-1)
    deta = np.stack([-(1 - xi), -xi, 1 - xi, xi], axis=-1)
    return np.stack([dxi, deta], axis=-1)


@dataclass(frozen=True)
class ElementQuadrature:
    """Tensor Gauss rule on the reference cell with Q1 tabulations.

    ``shape_gradients`` are with respect to reference coordinates; divide by
    (hx, hy) for physical gradients.
    """

    points: np.ndarray
    weights: np.ndarray
    shape_values: np.ndarray
    shape_gradients: np.ndarray

    @classmethod
    def gauss(cls, n: int = 2) -> "ElementQuadrature":
        x, w = gauss_1d(n)
        xi, eta = np.meshgrid(x, x, indexing="xy")
        pts = np.column_stack([xi.ravel(), eta.ravel()])
        wts = np.outer(w, w).ravel()
        return cls(
            points=pts,
            weights=wts,
            shape_values=q1_values(pts[:, 0], pts[:, 1]),
            shape_gradients=q1_gradients(pts[:, 0], pts[:, 1]),
        )

    @property
    def n_points(self) -> int:
        return len(self.weights)


@dataclass(frozen=True)
class BoundaryFace:
    edge: str
    nodes: tuple[int, int]
    length: float
    tag: str


@dataclass(frozen=True, eq=False)
class Grid:
    nx: int
    ny: int
    lx: float
    ly: float
    dirichlet_edges: frozenset = field(default_factory=frozenset)

    @property
    def hx(self) -> float:
        return self.lx / self.nx

    @property
    def hy(self) -> float:
        return self.ly / self.ny

    @property
    def n_nodes(self) -> int:
        return (self.nx + 1) * (self.ny + 1)

    @property
    def n_cells(self) -> int:
        return self.nx * self.ny

    @property
    def cell_area(self) -> float:
        return self.hx * self.hy

    @property
    def is_square(self) -> bool:
        return bool(np.isclose(self.hx, self.hy, rtol=1e-12, atol=0.0))

    @cached_property
    def node_coords(self) -> np.ndarray:
        x = np.linspace(0.0, self.lx, self.nx + 1)
        y = np.linspace(0.0, self.ly, self.ny + 1)
        X, Y = np.meshgrid(x, y, indexing="xy")
        return np.column_stack([X.ravel(), Y.ravel()])

    @cached_property
    def cells(self) -> np.ndarray:
        """Connectivity, shape (n_cells, 4)."""
        i, j = np.meshgrid(np.arange(self.nx), np.arange(self.ny), indexing="xy")
        n0 = (j * (self.nx + 1) + i).ravel()
        return np.column_stack([n0, n0 + 1, n0 + self.nx + 1, n0 + self.nx + 2])

    @cached_property
    def cell_origins(self) -> np.ndarray:
        return self.node_coords[self.cells[:, 0]]

    def edge_nodes(self, edge: str) -> np.ndarray:
        nx, ny = self.nx, self.ny
        if edge == "bottom":
            return np.arange(nx + 1)
        if edge == "top":
            return ny * (nx + 1) + np.arange(nx + 1)
        if edge == "left":
            return np.arange(ny + 1) * (nx + 1)
        if edge == "right":
            return np.arange(ny + 1) * (nx + 1) + nx
        raise ValueError(f"unknown edge {edge!r}")

    @cached_property
    def boundary_faces(self) -> tuple[BoundaryFace, ...]:
        faces = []
        for edge in EDGES:
            nodes = self.edge_nodes(edge)
            length = self.hx if edge in ("bottom", "top") else self.hy
            tag = DIRICHLET_D if edge in self.dirichlet_edges else NEUMANN_N
            for a, b in zip(nodes[:-1], nodes[1:]):
                faces.append(BoundaryFace(edge, (int(a), int(b)), length, tag))
        return tuple(faces)

    @property
    def boundary_tags(self) -> list[str]:
        return [f.tag for f in self.boundary_faces]

    @property
    def robin_faces(self) -> tuple[BoundaryFace, ...]:
        return self.boundary_faces

    def faces(self, subset: str = ALL_GAMMA) -> list[BoundaryFace]:
        if subset == ALL_GAMMA:
            return list(self.boundary_faces)
        if subset == GAMMA_N:
            return [f for f in self.boundary_faces if f.tag == NEUMANN_N]
        raise ValueError(f"unknown boundary subset {subset!r}")

    # -- quadrature-point evaluation ------------------------------------

    def quadrature_points(self, quad: ElementQuadrature) -> np.ndarray:
        """Physical coordinates, shape (n_cells, nq, 2)."""
        scale = np.array([self.hx, self.hy])
        return self.cell_origins[:, None, :] + quad.points[None, :, :] * scale

    def values_at(self, f: np.ndarray, quad: ElementQuadrature) -> np.ndarray:
        """Interpolate a nodal field to quadrature points, shape (n_cells, nq, ...)."""
        f = np.asarray(f, dtype=float)
        return np.einsum("qa,ca...->cq...", quad.shape_values, f[self.cells])

    def gradients_at(self, f: np.ndarray, quad: ElementQuadrature) -> np.ndarray:
        """Physical gradient of a nodal field, shape (n_cells, nq, [ncomp,] 2)."""
        f = np.asarray(f, dtype=float)
        g = quad.shape_gradients / np.array([self.hx, self.hy])
        return np.einsum("qad,ca...->cq...d", g, f[self.cells])

    def jxw(self, quad: ElementQuadrature) -> np.ndarray:
        return quad.weights * self.cell_area

    def integrate(self, values: np.ndarray, quad: ElementQuadrature) -> float:
        """Integrate quadrature-point values (n_cells, nq) over the domain."""
        return float(np.sum(values * self.jxw(quad)))

    def scatter(self, local: np.ndarray) -> np.ndarray:
        """Sum per-cell local vectors (n_cells, 4) into a nodal vector."""
        return np.bincount(
            self.cells.ravel(), weights=np.asarray(local).ravel(), minlength=self.n_nodes
        )

    def load_vector(self, values: np.ndarray, quad: ElementQuadrature) -> np.ndarray:
        """Nodal vector of ``∫ v N_i`` for values given at quadrature points."""
        local = np.einsum("cq,qa,q->ca", values, quad.shape_values, self.jxw(quad))
        return self.scatter(local)

    def assemble(self, local: np.ndarray) -> sp.csr_matrix:
        """Assemble per-cell matrices (n_cells, 4, 4) into a CSR matrix."""
        rows = np.repeat(self.cells, 4, axis=1).ravel()
        cols = np.tile(self.cells, (1, 4)).ravel()
        n = self.n_nodes
        return sp.coo_matrix((np.asarray(local).ravel(), (rows, cols)), shape=(n, n)).tocsr()

    # -- scalar operators -----------------------------------------------

    def mass_matrix(self, quad: ElementQuadrature | None = None) -> sp.csr_matrix:
        """Consistent Q1 mass matrix (2x2 Gauss is exact for bilinear products)."""
        quad = quad or ElementQuadrature.gauss(2)
        me = np.einsum("q,qa,qb->ab", self.jxw(quad), quad.shape_values, quad.shape_values)
        return self.assemble(np.broadcast_to(me, (self.n_cells, 4, 4)))

    def weighted_mass_matrix(self, coeff: np.ndarray, quad: ElementQuadrature) -> sp.csr_matrix:
        """Matrix of ``∫ c N_i N_j`` with ``c`` given at quadrature points."""
        local = np.einsum(
            "cq,q,qa,qb->cab", coeff, self.jxw(quad), quad.shape_values, quad.shape_values
        )
        return self.assemble(local)

    def stiffness_matrix(self, coeff: np.ndarray | None = None,
                         quad: ElementQuadrature | None = None) -> sp.csr_matrix:
        """Q1 Laplacian ``∫ c ∇N_i·∇N_j``; ``coeff`` at quadrature points or None for 1."""
        quad = quad or ElementQuadrature.gauss(2)
        g = quad.shape_gradients / np.array([self.hx, self.hy])
        if coeff is None:
            ke = np.einsum("q,qad,qbd->ab", self.jxw(quad), g, g)
            return self.assemble(np.broadcast_to(ke, (self.n_cells, 4, 4)))
        local = np.einsum("cq,q,qad,qbd->cab", coeff, self.jxw(quad), g, g)
        return self.assemble(local)

    def interpolate(self, func) -> np.ndarray:
        """Nodal interpolant of ``func(x, y)``."""
        x, y = self.node_coords.T
        return np.asarray(func(x, y), dtype=float) * np.ones(self.n_nodes)

    def restrict_from(self, fine: "Grid", f_fine: np.ndarray) -> np.ndarray:
        """Inject a nodal field from a nested finer grid onto this grid's nodes."""
        rx, ry = fine.nx // self.nx, fine.ny // self.ny
        if rx * self.nx != fine.nx or ry * self.ny != fine.ny:
            raise ValueError("grids are not nested")
        f = np.asarray(f_fine).reshape(fine.ny + 1, fine.nx + 1, *np.shape(f_fine)[1:])
        return f[::ry, ::rx].reshape(self.n_nodes, *np.shape(f_fine)[1:])


def build_grid(nx: int, ny: int, lx: float = 1.0, ly: float = 1.0,
               dirichlet_spec=("left",)) -> Grid:
    """Build a rectangular grid; ``dirichlet_spec`` selects the clamped edges.

    Raises ValueError for fewer than two cells per axis, nonpositive sizes or
    an empty Dirichlet selection.
    """
    if int(nx) != nx or int(ny) != ny or nx < 2 or ny < 2:
        raise ValueError(f"need at least 2 cells per axis, got nx={nx}, ny={ny}")
    if not (lx > 0 and ly > 0):
        raise ValueError(f"domain lengths must be positive, got lx={lx}, ly={ly}")
    if isinstance(dirichlet_spec, str):
        dirichlet_spec = [s for s in dirichlet_spec.replace(",", " ").split() if s]
    edges = frozenset(dirichlet_spec)
    if not edges:
        raise ValueError("Γ_D must have positive measure")
    bad = edges - set(EDGES)
    if bad:
        raise ValueError(f"unknown edge selector(s): {sorted(bad)}")
    grid = Grid(int(nx), int(ny), float(lx), float(ly), edges)
    if not grid.is_square:
        logger.warning("non-square cells (hx=%g, hy=%g): the nutrient maximum principle is "
                       "not guaranteed", grid.hx, grid.hy)
    return grid


def dirichlet_dofs(grid: Grid) -> np.ndarray:
    """Sorted displacement dof indices (``2 * node + component``) on Γ_D."""
    if not grid.dirichlet_edges:
        return np.zeros(0, dtype=int)
    nodes = np.unique(np.concatenate([grid.edge_nodes(e) for e in sorted(grid.dirichlet_edges)]))
    return np.sort(np.concatenate([2 * nodes, 2 * nodes + 1]))


def boundary_mass_terms(grid: Grid, subset: str = ALL_GAMMA) -> tuple[sp.csr_matrix, np.ndarray]:
    """Boundary mass matrix over ``subset`` and the nodal face-length weights.

    The weight vector ``w`` satisfies ``w @ f = ∫ f`` over the subset for any
    nodal f that is linear along each face.
    """
    faces = grid.faces(subset)
    n = grid.n_nodes
    if not faces:
        return sp.csr_matrix((n, n)), np.zeros(n)
    x, w = gauss_1d(2)
    vals = np.column_stack([1 - x, x])
    me = np.einsum("q,qa,qb->ab", w, vals, vals)  # [[1/3, 1/6], [1/6, 1/3]]
    nodes = np.array([f.nodes for f in faces])
    lengths = np.array([f.length for f in faces])
    local = lengths[:, None, None] * me
    rows = np.repeat(nodes, 2, axis=1).ravel()
    cols = np.tile(nodes, (1, 2)).ravel()
    mat = sp.coo_matrix((local.ravel(), (rows, cols)), shape=(n, n)).tocsr()
    weights = np.bincount(nodes.ravel(), weights=np.repeat(lengths / 2, 2), minlength=n)
    return mat, weights
