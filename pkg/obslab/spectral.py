"""Spectral decompositions: Dirichlet eigenpairs of −Δ+q, the explicit mixed
eigenpairs of the unit square, and damped quadratic eigenpairs."""

import logging
from dataclasses import dataclass

import numpy as np
import scipy.linalg
from scipy import sparse
from scipy.sparse.linalg import ArpackNoConvergence, eigs, eigsh

from obslab.errors import DomainError, EigenSolverError
from obslab.grid import Field, Grid
from obslab.operators import assemble

log = logging.getLogger(__name__)

DENSE_LIMIT = 2500
RESIDUAL_TOL = 1e-6


@dataclass(frozen=True, eq=False)
class EigenBasis:
    """Eigenpairs (λ_k, φ_k) of −Δ+q in nondecreasing order; index 0 holds φ₁."""

    grid: Grid
    potential: Field
    eigenvalues: np.ndarray
    functions: tuple[Field, ...]

    def __len__(self) -> int:
        return len(self.functions)

    def __iter__(self):
        return iter(zip(self.eigenvalues, self.functions))

    def mode(self, k: int) -> tuple[float, Field]:
        """1-based access: mode(1) is the ground state."""
        if not 1 <= k <= len(self):
            raise DomainError(f"mode {k} outside 1..{len(self)}")
        return float(self.eigenvalues[k - 1]), self.functions[k - 1]

    def matrix(self, count: int | None = None) -> np.ndarray:
        """Eigenfunctions as rows, flattened over the grid."""
        fns = self.functions[: count or len(self)]
        return np.array([f.values.reshape(-1) for f in fns])

    def coefficients(self, field: Field, count: int | None = None) -> np.ndarray:
        """(f, φ_k) for k = 1..count."""
        w = self.grid.weights().reshape(-1)
        return self.matrix(count) @ (w * field.values.reshape(-1))

    def synthesize(self, coefficients: np.ndarray) -> Field:
        coefficients = np.asarray(coefficients)
        values = coefficients @ self.matrix(coefficients.size)
        return Field(self.grid, values.reshape(self.grid.shape))


def _fix_sign(vector: np.ndarray) -> np.ndarray:
    scale = np.max(np.abs(vector))
    first = np.flatnonzero(np.abs(vector) > 1e-10 * scale)[0]
    return -vector if vector[first] < 0 else vector


def dirichlet_eigenpairs(grid: Grid, q: Field | None, count: int) -> EigenBasis:
    """First ``count`` eigenpairs of the symmetric finite-difference −Δ+q."""
    op = assemble(grid, "dirichlet")
    if not 1 <= count <= op.size:
        raise DomainError(f"count must be in 1..{op.size}, got {count}")
    q = q if q is not None else Field.zeros(grid)
    scale = 1.0 / np.sqrt(op.mass)
    sym = (sparse.diags(scale) @ op.with_potential(q) @ sparse.diags(scale)).tocsr()

    if grid.dimension == 1:
        values, vectors = scipy.linalg.eigh_tridiagonal(
            sym.diagonal(), sym.diagonal(1), select="i", select_range=(0, count - 1)
        )
    elif op.size <= DENSE_LIMIT:
        values, vectors = scipy.linalg.eigh(sym.toarray(), subset_by_index=[0, count - 1])
    else:
        shift = float(np.min(q.values)) - 1.0
        try:
            values, vectors = eigsh(sym, k=count, sigma=shift, which="LM")
        except ArpackNoConvergence as exc:
            raise EigenSolverError("ARPACK did not converge", float("nan")) from exc
        order = np.argsort(values)
        values, vectors = values[order], vectors[:, order]

    residual = float(np.max(np.linalg.norm(sym @ vectors - vectors * values, axis=0)))
    if residual > 1e-8 * max(1.0, float(np.max(np.abs(values)))):
        raise EigenSolverError("Dirichlet eigen-solve inaccurate", residual)

    functions = tuple(
        Field(grid, op.scatter(_fix_sign(scale * vectors[:, k]))) for k in range(count)
    )
    log.debug("dirichlet eigenpairs: %d modes, lambda_1 = %.6g", count, values[0])
    return EigenBasis(grid, q, np.asarray(values), functions)


def weyl_bracket_holds(eigenvalues: np.ndarray, bound: float) -> bool:
    """β⁻¹k² ≤ λ_k ≤ βk² with β = π² + N + 1 (1D, ‖q‖_∞ ≤ N)."""
    beta = np.pi**2 + bound + 1.0
    k2 = np.arange(1, len(eigenvalues) + 1) ** 2
    return bool(np.all(k2 / beta <= eigenvalues) and np.all(eigenvalues <= beta * k2))


def mixed_square_eigenvalue(k: int, l: int) -> float:
    return ((k + 0.5) ** 2 + (l + 0.5) ** 2) * np.pi**2


def mixed_square_eigenpairs(grid: Grid, k: int, l: int) -> tuple[float, Field]:
    """λ_kℓ and φ_kℓ = 2cos((k+½)πx)cos((ℓ+½)πy): Dirichlet on Γ₀, Neumann on Γ₁."""
    if grid.dimension != 2:
        raise DomainError("mixed eigenpairs live on the unit square")
    if k < 0 or l < 0:
        raise DomainError(f"mode indices must be nonnegative, got ({k}, {l})")
    x, y = grid.mesh()
    values = 2.0 * np.cos((k + 0.5) * np.pi * x) * np.cos((l + 0.5) * np.pi * y)
    # exact zeros on Γ₀
    values[-1, :] = 0.0
    values[:, -1] = 0.0
    return mixed_square_eigenvalue(k, l), Field(grid, values)


def mixed_square_modes(count: int) -> list[tuple[int, int]]:
    """The ``count`` index pairs (k, ℓ) of smallest λ_kℓ, ties broken by k then ℓ."""
    side = int(np.ceil(np.sqrt(count))) + 1
    pairs = [(k, l) for k in range(side) for l in range(side)]
    pairs.sort(key=lambda kl: (mixed_square_eigenvalue(*kl), kl))
    return pairs[:count]


# ---------------------------------------------------------------------
# Damped quadratic eigenproblem
# ---------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class DampedEigenPair:
    """(−Δ+q+aμ+μ²)φ = 0 with ψ = μφ."""

    mu: complex
    phi: Field
    psi: Field
    residual: float


def damped_quadratic_eigenpairs(
    grid: Grid, q: Field | None, a: Field | None, count: int
) -> list[DampedEigenPair]:
    """Eigenvalues of smallest modulus via the companion linearization

        [ 0      I ] [φ]     [φ]
        [ −A    −D ] [ψ] = μ [ψ],   A = M⁻¹(K + Mq),  D = diag(a).
    """
    op = assemble(grid, "dirichlet")
    n = op.size
    if not 1 <= count <= 2 * n:
        raise DomainError(f"count must be in 1..{2 * n}, got {count}")
    stiff = (sparse.diags(1.0 / op.mass) @ op.with_potential(q)).tocsr()
    damp = op.gather(a) if a is not None else np.zeros(n)
    companion = sparse.bmat(
        [[None, sparse.identity(n)], [-stiff, sparse.diags(-damp)]], format="csr"
    )

    try:
        if 2 * n <= DENSE_LIMIT:
            mus, vectors = scipy.linalg.eig(companion.toarray())
        else:
            mus, vectors = eigs(companion.tocsc(), k=min(count + 2, 2 * n - 2), sigma=0.0)
    except (np.linalg.LinAlgError, ArpackNoConvergence) as exc:
        raise EigenSolverError("companion eigen-solve broke down", float("nan")) from exc

    order = sorted(range(len(mus)), key=lambda i: (round(abs(mus[i]), 9), -mus[i].imag))
    weights = op.mass
    pairs = []
    for i in order[:count]:
        mu = complex(mus[i])
        phi = vectors[:n, i]
        phi = phi / np.sqrt(np.sum(weights * np.abs(phi) ** 2))
        peak = np.argmax(np.abs(phi))
        phi = phi * (np.abs(phi[peak]) / phi[peak])
        psi = mu * phi
        r = stiff @ phi + mu * damp * phi + mu**2 * phi
        residual = float(np.sqrt(np.sum(weights * np.abs(r) ** 2)))
        if residual > RESIDUAL_TOL:
            raise EigenSolverError(f"quadratic eigenpair mu={mu:.6g} inaccurate", residual)
        pairs.append(
            DampedEigenPair(mu, Field(grid, op.scatter(phi)), Field(grid, op.scatter(psi)), residual)
        )
    return pairs
