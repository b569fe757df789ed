"""Discrete inner products and the L2, H10, H2, V and dualV norms."""

import numpy as np
from scipy.sparse.linalg import spsolve

from obslab.errors import DomainError
from obslab.grid import Field, Grid, trapezoid_weights
from obslab.operators import assemble

NORM_KINDS = ("L2", "H10", "H2", "V", "dualV")


def inner(f: Field, g: Field) -> complex | float:
    """Trapezoid inner product ⟨f, g⟩ (conjugate-linear in g)."""
    if f.grid != g.grid:
        raise DomainError("fields live on different grids")
    value = np.sum(f.grid.weights() * f.values * np.conj(g.values))
    return complex(value) if np.iscomplexobj(value) else float(value)


def _weights_except(grid: Grid, axis: int) -> np.ndarray:
    if grid.dimension == 1:
        return np.ones(1)
    other = 1 - axis
    w = trapezoid_weights(grid.nodes[other], grid.spacing[other])
    return w[None, :] if axis == 0 else w[:, None]


def gradient_squared(field: Field) -> float:
    """∫|∇f|² with one-sided (forward) differences, midpoint rule across cells."""
    grid = field.grid
    total = 0.0
    for axis, h in enumerate(grid.spacing):
        d = np.diff(field.values, axis=axis) / h
        total += h * float(np.sum(np.abs(d) ** 2 * _weights_except(grid, axis)))
    return total


def second_difference(values: np.ndarray, h: float, axis: int = 0) -> np.ndarray:
    """3-point second difference with 4-point one-sided closures at both ends."""
    v = np.moveaxis(np.asarray(values), axis, 0)
    if v.shape[0] < 4:
        raise DomainError("H2 needs at least 4 nodes per axis (stencil underdetermined)")
    out = np.empty_like(v)
    out[1:-1] = v[2:] - 2.0 * v[1:-1] + v[:-2]
    out[0] = 2.0 * v[0] - 5.0 * v[1] + 4.0 * v[2] - v[3]
    out[-1] = 2.0 * v[-1] - 5.0 * v[-2] + 4.0 * v[-3] - v[-4]
    return np.moveaxis(out / h**2, 0, axis)


def hessian_squared(field: Field) -> float:
    grid = field.grid
    w = grid.weights()
    v = field.values
    total = 0.0
    for axis, h in enumerate(grid.spacing):
        total += float(np.sum(w * np.abs(second_difference(v, h, axis)) ** 2))
    if grid.dimension == 2:
        hx, hy = grid.spacing
        mixed = np.gradient(np.gradient(v, hx, axis=0, edge_order=2), hy, axis=1, edge_order=2)
        total += 2.0 * float(np.sum(w * np.abs(mixed) ** 2))
    return total


def dual_v_norm(grid: Grid, load: np.ndarray) -> float:
    """‖ℓ‖_{V′} for the functional with nodal load vector ``load`` (full grid shape).

    Solves the Riesz problem K r = b for −Δ with Dirichlet data on Γ₀ and
    natural (Neumann) data on Γ₁, and returns ‖r‖_V = (bᴴ r)^{1/2}.
    """
    op = assemble(grid, "mixed")
    b = op.gather(load)
    if not np.any(b):
        return 0.0
    r = spsolve(op.stiffness.tocsc(), b)
    return float(np.sqrt(max(np.real(np.vdot(b, r)), 0.0)))


def norm(field: Field, kind: str = "L2") -> float:
    if kind not in NORM_KINDS:
        raise DomainError(f"unknown norm kind '{kind}' (expected one of {', '.join(NORM_KINDS)})")
    if kind == "H2" and min(field.grid.nodes) < 4:
        raise DomainError("H2 needs at least 4 nodes per axis (stencil underdetermined)")
    if not np.any(field.values):
        return 0.0
    if kind == "L2":
        return float(np.sqrt(np.sum(field.grid.weights() * np.abs(field.values) ** 2)))
    if kind in ("H10", "V"):
        return float(np.sqrt(gradient_squared(field)))
    if kind == "H2":
        l2 = np.sum(field.grid.weights() * np.abs(field.values) ** 2)
        return float(np.sqrt(l2 + gradient_squared(field) + hessian_squared(field)))
    # dualV: the field is a density, ℓ(v) = ∫ f v
    return dual_v_norm(field.grid, field.grid.weights() * field.values)
