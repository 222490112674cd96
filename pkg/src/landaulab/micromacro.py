"""Macroscopic moments, the kernel projector and the moment functionals
used by the hypocoercive inner product."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .calculus import KineticField, SpatialLattice, VelocityGrid


@lru_cache(maxsize=16)
def _kernel_basis(V: float, N: int, gamma: float) -> np.ndarray:
    grid = VelocityGrid(V, N, gamma)
    return kernel_basis_for(grid)


def raw_invariants(grid: VelocityGrid) -> np.ndarray:
    """sqrt(M) {1, v1, v2, v3, (|v|^2 - 3)/sqrt(6)}, rows."""
    s = grid.sqrtM
    return np.stack([s, grid.v[:, 0] * s, grid.v[:, 1] * s, grid.v[:, 2] * s, (grid.v2 - 3) / np.sqrt(6) * s])


def kernel_basis_for(grid: VelocityGrid) -> np.ndarray:
    """Invariants orthonormalised under the quadrature inner product (rows)."""
    E = raw_invariants(grid)
    # modified Gram-Schmidt, twice for stability
    for _ in range(2):
        for i in range(len(E)):
            for j in range(i):
                E[i] -= grid.inner(E[i], E[j]) * E[j]
            E[i] /= grid.norm(E[i])
    return E


def kernel_basis(grid: VelocityGrid) -> np.ndarray:
    return _kernel_basis(grid.V, grid.N, grid.gamma)


def projector_matrix(grid: VelocityGrid) -> np.ndarray:
    """Dense matrix of pi acting on velocity vectors."""
    E = kernel_basis(grid)
    return grid.w * E.T @ E


def pi_velocity(f: np.ndarray, grid: VelocityGrid) -> np.ndarray:
    """pi applied along the last axis of a velocity array."""
    E = kernel_basis(grid)
    coef = grid.w * f @ E.T
    return coef @ E


@dataclass
class MacroState:
    """Fluid fields (rho, u, theta) as Fourier coefficients on a lattice."""

    lattice: SpatialLattice
    rho: np.ndarray
    u: np.ndarray  # (3, n_modes)
    theta: np.ndarray

    def as_array(self) -> np.ndarray:
        return np.vstack([self.rho[None], self.u, self.theta[None]])


def moment_weights(grid: VelocityGrid) -> np.ndarray:
    """Rows sqrt(M), v sqrt(M), (|v|^2-3) sqrt(M)/3 for (rho, u, theta)."""
    s = grid.sqrtM
    return np.stack([s, grid.v[:, 0] * s, grid.v[:, 1] * s, grid.v[:, 2] * s, (grid.v2 - 3) * s / 3])


def moments(g: KineticField) -> MacroState:
    m = g.grid.w * g.values @ moment_weights(g.grid).T
    return MacroState(g.lattice, m[:, 0], m[:, 1:4].T.copy(), m[:, 4])


def lift_macro(state: MacroState, grid: VelocityGrid) -> KineticField:
    """sqrt(M) (rho + u.v + theta (|v|^2-3)/2) on every mode."""
    s = grid.sqrtM
    vals = (
        state.rho[:, None] * s
        + np.einsum("km,nk->mn", state.u, grid.v) * s
        + state.theta[:, None] * (grid.v2 - 3) / 2 * s
    )
    return KineticField(state.lattice, grid, vals)


def pi_project(g: KineticField) -> KineticField:
    return g.with_values(pi_velocity(g.values, g.grid))


def micro_part(g: KineticField) -> KineticField:
    return g.with_values(g.values - pi_velocity(g.values, g.grid))


def Pi_project(g: KineticField) -> KineticField:
    """pi on the zero mode only, zero elsewhere."""
    out = np.zeros_like(g.values)
    z = g.lattice.zero
    out[z] = pi_velocity(g.values[z], g.grid)
    return g.with_values(out)


def remove_Pi(g: KineticField) -> KineticField:
    return g - Pi_project(g)


def psi_k(g: KineticField) -> np.ndarray:
    """psi_k[g] = int v_k (|v|^2-5)/3 g sqrt(M), shape (3, n_modes)."""
    grid = g.grid
    wts = grid.v.T * (grid.v2 - 5) / 3 * grid.sqrtM
    return grid.w * wts @ g.values.T


def theta_kl(g: KineticField) -> np.ndarray:
    """Theta_kl[g], shape (3, 3, n_modes)."""
    grid = g.grid
    v, s = grid.v, grid.sqrtM
    W = np.empty((3, 3, grid.n))
    for k in range(3):
        for l in range(3):
            if k == l:
                W[k, l] = (0.5 + v[:, k] ** 2 - 0.5 * grid.v2) * s
            else:
                W[k, l] = v[:, k] * v[:, l] * grid.v2 / 7 * s
    return grid.w * np.einsum("kln,mn->klm", W, g.values)


def inv_laplacian(phi: np.ndarray, lattice: SpatialLattice, tol: float = 1e-10) -> np.ndarray:
    """(-Delta)^{-1} on zero-mean spectral scalars: phi(xi)/|2 pi xi|^2."""
    phi = np.asarray(phi)
    scale = max(1.0, float(np.max(np.abs(phi))) if phi.size else 1.0)
    mean = phi[..., lattice.zero]
    if np.max(np.abs(mean)) > tol * scale:
        raise ValueError(f"nonzero mean {np.max(np.abs(mean)):.3e} has no inverse Laplacian")
    k2 = lattice.k2.copy()
    k2[lattice.zero] = 1.0
    out = phi / k2
    out[..., lattice.zero] = 0.0
    return out
