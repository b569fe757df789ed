"""Grids, fields, boundary traces and kernels on (0,1) and (0,1)².

Arrays are indexed [i, j] with i along x and j along y. The mixed boundary
configuration uses Γ₀ = top ∪ right (x = 1 in 1D) and Γ₁ = bottom ∪ left
(x = 0 in 1D); corner nodes touching Γ₀ belong to Γ₀.
"""

import logging
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.integrate import trapezoid

from obslab.errors import DomainError

log = logging.getLogger(__name__)


# ---------------------------------------------------------------------
# Boundary labels
# ---------------------------------------------------------------------

LABELS_1D = {
    "left": ("left",),
    "right": ("right",),
    "boundary": ("left", "right"),
    "gamma0": ("right",),
    "gamma1": ("left",),
}

LABELS_2D = {
    "bottom": ("bottom",),
    "top": ("top",),
    "left": ("left",),
    "right": ("right",),
    "boundary": ("bottom", "top", "left", "right"),
    "gamma0": ("top", "right"),
    "gamma1": ("bottom", "left"),
}


def time_levels(tau: float, dt: float) -> int:
    """Number of time rows ⌊τ/dt⌋+1 (rounding guarded against τ/dt = k - ulp)."""
    if not dt > 0:
        raise DomainError(f"dt must be positive, got {dt}")
    if not tau > 0:
        raise DomainError(f"tau must be positive, got {tau}")
    return int(np.floor(tau / dt + 1e-9)) + 1


def trapezoid_weights(n: int, h: float) -> np.ndarray:
    w = np.full(n, h)
    w[0] = w[-1] = 0.5 * h
    return w


# ---------------------------------------------------------------------
# Grid
# ---------------------------------------------------------------------


@dataclass(frozen=True)
class Grid:
    """Uniform grid on the unit interval or the unit square."""

    dimension: int
    nodes: tuple[int, ...]

    def __post_init__(self):
        if self.dimension not in (1, 2):
            raise DomainError(f"dimension must be 1 or 2, got {self.dimension}")
        nodes = tuple(int(n) for n in self.nodes)
        if len(nodes) != self.dimension:
            raise DomainError(f"expected {self.dimension} node counts, got {len(nodes)}")
        if any(n < 3 for n in nodes):
            raise DomainError(f"need at least 3 nodes per axis, got {nodes}")
        object.__setattr__(self, "nodes", nodes)

    @classmethod
    def interval(cls, nodes: int) -> "Grid":
        return cls(1, (nodes,))

    @classmethod
    def square(cls, nodes: int) -> "Grid":
        return cls(2, (nodes, nodes))

    @property
    def shape(self) -> tuple[int, ...]:
        return self.nodes

    @property
    def size(self) -> int:
        return int(np.prod(self.nodes))

    @property
    def spacing(self) -> tuple[float, ...]:
        return tuple(1.0 / (n - 1) for n in self.nodes)

    @property
    def h(self) -> float:
        """Largest spacing over the axes."""
        return max(self.spacing)

    @property
    def axes(self) -> tuple[np.ndarray, ...]:
        return tuple(np.linspace(0.0, 1.0, n) for n in self.nodes)

    @property
    def labels(self) -> dict[str, tuple[str, ...]]:
        return LABELS_1D if self.dimension == 1 else LABELS_2D

    def mesh(self) -> tuple[np.ndarray, ...]:
        return tuple(np.meshgrid(*self.axes, indexing="ij"))

    def weights(self) -> np.ndarray:
        """Trapezoid quadrature weights, boundary nodes weighted ½ per axis."""
        w = trapezoid_weights(self.nodes[0], self.spacing[0])
        if self.dimension == 2:
            w = np.outer(w, trapezoid_weights(self.nodes[1], self.spacing[1]))
        return w

    def edges(self, label: str) -> tuple[str, ...]:
        try:
            return self.labels[label]
        except KeyError:
            raise DomainError(
                f"boundary label '{label}' not on this grid "
                f"(known: {', '.join(self.labels)})"
            ) from None

    def boundary_mask(self) -> np.ndarray:
        mask = np.zeros(self.shape, dtype=bool)
        mask[0] = mask[-1] = True
        if self.dimension == 2:
            mask[:, 0] = mask[:, -1] = True
        return mask

    def distance_to_boundary(self) -> np.ndarray:
        """Exact distance to ∂Ω (minimum over the edge distances)."""
        coords = self.mesh()
        d = np.minimum(coords[0], 1.0 - coords[0])
        if self.dimension == 2:
            d = np.minimum(d, np.minimum(coords[1], 1.0 - coords[1]))
        return d

    def refined(self, ratio: int) -> "Grid":
        return Grid(self.dimension, tuple((n - 1) * ratio + 1 for n in self.nodes))

    def refinement_ratio(self, fine: "Grid") -> int:
        """Integer r with fine = self.refined(r), or 0 when fine is not a refinement."""
        if fine.dimension != self.dimension:
            return 0
        ratios = set()
        for nc, nf in zip(self.nodes, fine.nodes):
            if (nf - 1) % (nc - 1):
                return 0
            ratios.add((nf - 1) // (nc - 1))
        return ratios.pop() if len(ratios) == 1 else 0


# ---------------------------------------------------------------------
# Fields
# ---------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Field:
    """Nodal samples of a real or complex function on a grid."""

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values)
        if values.shape != self.grid.shape:
            if values.size != self.grid.size:
                raise DomainError(
                    f"field has {values.size} values, grid has {self.grid.size} nodes"
                )
            values = values.reshape(self.grid.shape)
        if not np.iscomplexobj(values):
            values = values.astype(float)
        object.__setattr__(self, "values", values)

    @classmethod
    def zeros(cls, grid: Grid) -> "Field":
        return cls(grid, np.zeros(grid.shape))

    @classmethod
    def from_function(cls, grid: Grid, fn: Callable[..., np.ndarray]) -> "Field":
        values = np.broadcast_to(fn(*grid.mesh()), grid.shape)
        return cls(grid, np.array(values))

    @property
    def is_complex(self) -> bool:
        return np.iscomplexobj(self.values)

    @property
    def real(self) -> "Field":
        return Field(self.grid, np.real(self.values))

    @property
    def imag(self) -> "Field":
        return Field(self.grid, np.imag(self.values))

    def max_abs(self) -> float:
        return float(np.max(np.abs(self.values)))

    def vanishes_on_boundary(self, tol: float = 1e-12) -> bool:
        edge = np.abs(self.values[self.grid.boundary_mask()])
        return bool(np.all(edge <= tol * max(1.0, self.max_abs())))

    def _other(self, other) -> np.ndarray:
        if isinstance(other, Field):
            if other.grid != self.grid:
                raise DomainError("fields live on different grids")
            return other.values
        return other

    def __add__(self, other):
        return Field(self.grid, self.values + self._other(other))

    __radd__ = __add__

    def __sub__(self, other):
        return Field(self.grid, self.values - self._other(other))

    def __mul__(self, other):
        return Field(self.grid, self.values * self._other(other))

    __rmul__ = __mul__

    def __truediv__(self, scalar):
        return Field(self.grid, self.values / scalar)

    def __neg__(self):
        return Field(self.grid, -self.values)


def restrict(field: Field, coarse: Grid) -> Field:
    """Sample a fine-grid field at the nodes of a coarser grid."""
    ratio = coarse.refinement_ratio(field.grid)
    if ratio < 1:
        raise DomainError("coarse grid nodes are not a subset of the fine grid nodes")
    index = tuple(slice(None, None, ratio) for _ in range(coarse.dimension))
    return Field(coarse, field.values[index])


# ---------------------------------------------------------------------
# Time series on the boundary and kernels
# ---------------------------------------------------------------------


def time_norm(
    values: np.ndarray,
    dt: float,
    weights: np.ndarray | None = None,
    order: int = 0,
) -> float:
    """L²(0,τ) (order 0) or H¹(0,τ) (order 1) norm of a scalar or trace series."""
    values = np.asarray(values)

    def squared(series):
        sq = np.abs(series) ** 2
        if sq.ndim == 2:
            sq = sq @ (np.ones(sq.shape[1]) if weights is None else weights)
        return trapezoid(sq, dx=dt)

    total = squared(values)
    if order >= 1:
        total += squared(np.gradient(values, dt, axis=0, edge_order=2))
    return float(np.sqrt(total))


@dataclass(frozen=True, eq=False)
class BoundaryTrace:
    """Neumann data on a labeled boundary subset: rows are times, columns nodes."""

    label: str
    dt: float
    values: np.ndarray
    weights: np.ndarray
    coords: np.ndarray

    def __post_init__(self):
        if not self.dt > 0:
            raise DomainError(f"trace dt must be positive, got {self.dt}")
        values = np.asarray(self.values)
        if values.ndim != 2 or values.shape[1] != len(self.weights):
            raise DomainError(
                f"trace values of shape {values.shape} do not match "
                f"{len(self.weights)} boundary nodes"
            )
        object.__setattr__(self, "values", values)

    @property
    def times(self) -> np.ndarray:
        return self.dt * np.arange(self.values.shape[0])

    @property
    def tau(self) -> float:
        return self.dt * (self.values.shape[0] - 1)

    @property
    def is_complex(self) -> bool:
        return np.iscomplexobj(self.values)

    def norm(self, kind: str = "L2") -> float:
        """L² or H¹-in-time norm over Γ × (0, τ)."""
        if kind not in ("L2", "H1"):
            raise DomainError(f"unknown trace norm '{kind}'")
        return time_norm(self.values, self.dt, self.weights, order=1 if kind == "H1" else 0)

    def with_values(self, values: np.ndarray) -> "BoundaryTrace":
        return BoundaryTrace(self.label, self.dt, values, self.weights, self.coords)

    def _check(self, other: "BoundaryTrace"):
        if (
            other.label != self.label
            or other.values.shape != self.values.shape
            or not np.isclose(other.dt, self.dt, rtol=1e-12)
        ):
            raise DomainError("traces differ in label, dt or shape")

    def __sub__(self, other: "BoundaryTrace") -> "BoundaryTrace":
        self._check(other)
        return self.with_values(self.values - other.values)

    def __add__(self, other: "BoundaryTrace") -> "BoundaryTrace":
        self._check(other)
        return self.with_values(self.values + other.values)

    def __mul__(self, scalar) -> "BoundaryTrace":
        return self.with_values(self.values * scalar)

    __rmul__ = __mul__


@dataclass(frozen=True, eq=False)
class Kernel:
    """Uniform time samples of λ(t) or g(t), t = 0, dt, 2dt, ..."""

    samples: np.ndarray
    dt: float

    def __post_init__(self):
        samples = np.asarray(self.samples)
        if samples.ndim != 1 or samples.size < 2:
            raise DomainError("a kernel needs at least 2 samples")
        if not self.dt > 0:
            raise DomainError(f"kernel dt must be positive, got {self.dt}")
        if not np.iscomplexobj(samples):
            samples = samples.astype(float)
        object.__setattr__(self, "samples", samples)

    @classmethod
    def from_function(cls, fn: Callable[[np.ndarray], np.ndarray], tau: float, dt: float) -> "Kernel":
        t = dt * np.arange(time_levels(tau, dt))
        return cls(np.array(np.broadcast_to(fn(t), t.shape)), dt)

    @property
    def is_complex(self) -> bool:
        return np.iscomplexobj(self.samples)

    @property
    def value0(self):
        return self.samples[0]

    @property
    def times(self) -> np.ndarray:
        return self.dt * np.arange(self.samples.size)

    def derivative(self) -> np.ndarray:
        """λ′ by centered differences, second-order one-sided at the ends."""
        return np.gradient(self.samples, self.dt, edge_order=2)

    def truncated(self, count: int) -> "Kernel":
        if count > self.samples.size:
            raise DomainError(f"kernel has {self.samples.size} samples, {count} requested")
        return Kernel(self.samples[:count], self.dt)

    def __mul__(self, scalar) -> "Kernel":
        return Kernel(self.samples * scalar, self.dt)

    __rmul__ = __mul__
