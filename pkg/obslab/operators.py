"""Finite-difference assembly in the symmetric form M u'' + C u' + K u = M F.

M is the diagonal trapezoid mass over the unknown (free) nodes and K the
5-point (3-point in 1D) stiffness multiplied by M. A Neumann edge is closed
by a mirrored ghost node; eliminating the ghost is the same as halving the
mass of the boundary row, which keeps K symmetric.
"""

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import sparse

from obslab.errors import DomainError
from obslab.grid import Field, Grid, trapezoid_weights

BOUNDARY_KINDS = ("dirichlet", "mixed")


@dataclass(frozen=True, eq=False)
class DiscreteOperator:
    """−Δ on the free nodes of a grid, in mass-weighted form."""

    grid: Grid
    boundary: str
    free: np.ndarray
    mass: np.ndarray
    stiffness: sparse.csr_matrix

    @property
    def size(self) -> int:
        return self.free.size

    def gather(self, values) -> np.ndarray:
        if isinstance(values, Field):
            values = values.values
        return np.asarray(values).reshape(-1)[self.free]

    def scatter(self, vector: np.ndarray) -> np.ndarray:
        out = np.zeros(self.grid.size, dtype=np.result_type(vector, float))
        out[self.free] = vector
        return out.reshape(self.grid.shape)

    def with_potential(self, q: Field | None) -> sparse.csr_matrix:
        """K + M·diag(q), the weighted form of −Δ + q."""
        if q is None:
            return self.stiffness
        return (self.stiffness + sparse.diags(self.mass * self.gather(q))).tocsr()

    def apply(self, values, q: Field | None = None) -> np.ndarray:
        """(−Δ + q) u on the free nodes, scattered to the full grid."""
        u = self.gather(values)
        return self.scatter(self.with_potential(q) @ u / self.mass)


def _axis(n: int, h: float, neumann_start: bool) -> tuple[np.ndarray, np.ndarray, sparse.csr_matrix]:
    # the far end (x = 1) is always Dirichlet
    start = 0 if neumann_start else 1
    free = np.arange(start, n - 1)
    m = free.size
    mass = np.full(m, h)
    main = np.full(m, 2.0 / h)
    if neumann_start:
        mass[0] = 0.5 * h
        main[0] = 1.0 / h
    off = np.full(m - 1, -1.0 / h)
    stiffness = sparse.diags([off, main, off], [-1, 0, 1], format="csr")
    return free, mass, stiffness


@lru_cache(maxsize=64)
def assemble(grid: Grid, boundary: str = "dirichlet") -> DiscreteOperator:
    """Assemble −Δ with Dirichlet data everywhere, or Dirichlet on Γ₀ / Neumann on Γ₁."""
    if boundary not in BOUNDARY_KINDS:
        raise DomainError(f"unknown boundary kind '{boundary}'")
    neumann = boundary == "mixed"
    parts = [_axis(n, h, neumann) for n, h in zip(grid.nodes, grid.spacing)]
    if grid.dimension == 1:
        free, mass, stiffness = parts[0]
    else:
        (fx, mx, kx), (fy, my, ky) = parts
        ix, iy = np.meshgrid(fx, fy, indexing="ij")
        free = np.ravel_multi_index((ix.ravel(), iy.ravel()), grid.shape)
        mass = np.outer(mx, my).ravel()
        stiffness = (
            sparse.kron(kx, sparse.diags(my)) + sparse.kron(sparse.diags(mx), ky)
        ).tocsr()
    free.setflags(write=False)
    mass.setflags(write=False)
    return DiscreteOperator(grid, boundary, free, mass, stiffness)


# ---------------------------------------------------------------------
# Γ₁ edge data on the square
# ---------------------------------------------------------------------


def _require_square(grid: Grid):
    if grid.dimension != 2:
        raise DomainError("edge profiles live on the unit square")


def edge_density(grid: Grid, bottom: np.ndarray, left: np.ndarray) -> np.ndarray:
    """Lump an edge density on Γ₁ into nodal values with the edge quadrature weights.

    ``bottom`` is indexed by x-nodes along y = 0, ``left`` by y-nodes along x = 0.
    The corner (0, 0) receives the half weights of both edges.
    """
    _require_square(grid)
    bottom = np.asarray(bottom)
    left = np.asarray(left)
    nx, ny = grid.nodes
    if bottom.shape != (nx,) or left.shape != (ny,):
        raise DomainError(f"edge profiles must have {nx} and {ny} values")
    out = np.zeros(grid.shape, dtype=np.result_type(bottom, left, float))
    out[:, 0] += bottom * trapezoid_weights(nx, grid.spacing[0])
    out[0, :] += left * trapezoid_weights(ny, grid.spacing[1])
    return out


def boundary_damping(op: DiscreteOperator, a1: np.ndarray, a2: np.ndarray) -> np.ndarray:
    """Diagonal of C for ∂_ν u + a ∂_t u = 0 on Γ₁ (a1 on the bottom edge, a2 on the left)."""
    if op.boundary != "mixed":
        raise DomainError("boundary damping needs the mixed operator")
    return op.gather(edge_density(op.grid, a1, a2))


# ---------------------------------------------------------------------
# Neumann trace operators
# ---------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class TraceOperator:
    """Sparse map from nodal values to outward normal derivatives on a label."""

    label: str
    matrix: sparse.csr_matrix
    weights: np.ndarray
    coords: np.ndarray

    def __call__(self, values: np.ndarray) -> np.ndarray:
        """Apply to one snapshot (grid shape) or a stack (time, *grid shape)."""
        values = np.asarray(values)
        grid_size = self.matrix.shape[1]
        if values.size == grid_size:
            return self.matrix @ values.reshape(-1)
        flat = values.reshape(values.shape[0], grid_size)
        return (self.matrix @ flat.T).T


def _edge(grid: Grid, name: str) -> tuple[int, int, int, int]:
    """(normal axis, boundary index, inward step, along-edge length)."""
    nx = grid.nodes[0]
    if grid.dimension == 1:
        return (0, 0, 1, 1) if name == "left" else (0, nx - 1, -1, 1)
    ny = grid.nodes[1]
    return {
        "left": (0, 0, 1, ny),
        "right": (0, nx - 1, -1, ny),
        "bottom": (1, 0, 1, nx),
        "top": (1, ny - 1, -1, nx),
    }[name]


@lru_cache(maxsize=64)
def trace_operator(grid: Grid, label: str) -> TraceOperator:
    """Second-order one-sided normal derivative (3u_b − 4u_{b±1} + u_{b±2})/(2h), outward.

    Each boundary node appears once. A corner shared by two edges of the label
    keeps the normal of the first edge and the summed quadrature weight.
    """
    rows, cols, data = [], [], []
    weights, coords = [], []
    emitted: dict[tuple[int, ...], int] = {}
    axes = grid.axes
    for name in grid.edges(label):
        axis, b, step, length = _edge(grid, name)
        h = grid.spacing[axis]
        along = np.arange(length)
        edge_w = np.ones(1) if grid.dimension == 1 else trapezoid_weights(length, grid.spacing[1 - axis])
        if label == "gamma1" and grid.dimension == 2:
            # the far corner touches Γ₀
            along = along[:-1]
        for k in along:
            node = [0] * grid.dimension
            node[axis] = b
            if grid.dimension == 2:
                node[1 - axis] = k
            if tuple(node) in emitted:
                weights[emitted[tuple(node)]] += edge_w[k]
                continue
            row = len(weights)
            emitted[tuple(node)] = row
            for offset, c in zip((0, 1, 2), (3.0, -4.0, 1.0)):
                idx = [0] * grid.dimension
                idx[axis] = b + step * offset
                if grid.dimension == 2:
                    idx[1 - axis] = k
                rows.append(row)
                cols.append(np.ravel_multi_index(tuple(idx), grid.shape))
                data.append(c / (2.0 * h))
            weights.append(edge_w[k])
            point = [0.0] * grid.dimension
            point[axis] = axes[axis][b]
            if grid.dimension == 2:
                point[1 - axis] = axes[1 - axis][k]
            coords.append(point)
    matrix = sparse.csr_matrix((data, (rows, cols)), shape=(len(weights), grid.size))
    return TraceOperator(label, matrix, np.asarray(weights), np.asarray(coords))
