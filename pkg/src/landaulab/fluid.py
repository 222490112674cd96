"""Incompressible Navier-Stokes-Fourier limit: transport coefficients from
Chapman-Enskog correctors, a pseudo-spectral NSF integrator on the mode
lattice, and kinetic lifts of fluid states.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .calculus import KineticField, SpatialLattice, VelocityGrid, from_physical, to_physical
from .collision import Collision
from .micromacro import MacroState, kernel_basis, lift_macro, micro_part, moments, pi_velocity


@dataclass
class FluidCorrectors:
    """Correctors Phi_ij, Psi_k (velocity arrays orthogonal to Ker L) and the coefficients."""

    Phi: np.ndarray  # (3, 3, n)
    Psi: np.ndarray  # (3, n)
    nu1: float
    nu2: float
    raw_nu1: float  # signed quadratic forms before taking |.|
    raw_nu2: float
    residual: float


def corrector_sources(grid: VelocityGrid) -> tuple[np.ndarray, np.ndarray]:
    """r_ij = (|v|^2/3 delta_ij - v_i v_j) sqrt(M) and r_k = (5-|v|^2)/2 v_k sqrt(M)."""
    v, s = grid.v, grid.sqrtM
    eye = np.eye(3)[:, :, None]
    r_shear = (grid.v2 / 3 * eye - v.T[:, None, :] * v.T[None, :, :]) * s
    r_heat = (5 - grid.v2) / 2 * v.T * s
    return r_shear, r_heat


def compute_correctors(coll: Collision, tol: float = 1e-6) -> FluidCorrectors:
    """Solve L h = r on (Ker L)^perp for the shear and heat sources.

    The kernel is spanned exactly by the discrete invariants, so L - U U^T
    with U the Euclidean-orthonormal kernel basis is invertible and maps the
    orthogonal complement onto itself.
    """
    grid = coll.grid
    U = np.sqrt(grid.w) * kernel_basis(grid).T
    L = coll.L
    r_shear, r_heat = corrector_sources(grid)
    rhs = np.vstack([r_shear.reshape(9, -1), r_heat]).T  # (n, 12)
    # sources are orthogonal to the invariants up to quadrature round-off; remove it
    rhs = rhs - U @ (U.T @ rhs)
    lu = sla.lu_factor(L - U @ U.T)
    h = sla.lu_solve(lu, rhs)
    h = h - U @ (U.T @ h)
    resid = float(np.linalg.norm(L @ h - rhs) / np.linalg.norm(rhs))
    if resid > tol:
        raise np.linalg.LinAlgError(f"projected corrector solve residual {resid:.2e} > {tol:.0e}")
    h = h.T
    raw1 = float(grid.w * np.sum(h[:9] * rhs.T[:9]) / 10)
    raw2 = float(grid.w * np.sum(h[9:] * rhs.T[9:]) * 2 / 15)
    nu1, nu2 = abs(raw1), abs(raw2)
    if nu1 <= 0 or nu2 <= 0:
        raise ValueError(f"non-positive transport coefficients nu1={nu1}, nu2={nu2}")
    return FluidCorrectors(h[:9].reshape(3, 3, -1), h[9:], nu1, nu2, raw1, raw2, resid)


# ----- macroscopic constraints ---------------------------------------------


def leray(u: np.ndarray, lattice: SpatialLattice) -> np.ndarray:
    """Projection of spectral vector fields (3, modes) onto divergence-free fields."""
    k = lattice.wavevectors.T
    k2 = lattice.k2.copy()
    k2[lattice.zero] = 1.0
    return u - k * np.sum(k * u, axis=0) / k2


def constraint_residuals(state: MacroState) -> dict[str, float]:
    lat = state.lattice
    k = lat.wavevectors.T
    scale = max(1.0, float(np.max(np.abs(state.as_array()))))
    div = float(np.max(np.abs(np.sum(k * state.u, axis=0)))) / scale
    bous = state.rho + state.theta
    bous = np.delete(bous, lat.zero)
    return {"divergence": div, "boussinesq": float(np.max(np.abs(bous), initial=0.0)) / scale}


def check_constraints(state: MacroState, tol: float = 1e-8) -> None:
    res = constraint_residuals(state)
    mean = float(np.max(np.abs(state.as_array()[:, state.lattice.zero])))
    res["mean"] = mean
    bad = {k: v for k, v in res.items() if v > tol}
    if bad:
        raise ValueError(f"fluid constraints violated: {bad}")


# ----- NSF integrator -----------------------------------------------------------


def _nonlinear(u: np.ndarray, theta: np.ndarray, lattice: SpatialLattice) -> tuple[np.ndarray, np.ndarray]:
    """-P(u.grad u) and -u.grad theta, products formed on the alias-free collocation grid."""
    d = lattice.dim
    k = lattice.wavevectors.T
    up = np.real(to_physical(u.T, lattice))  # (x..., 3)
    adv_u = np.zeros_like(u)
    for i in range(3):
        grad = np.real(to_physical((1j * k[:d] * u[i]).T, lattice))  # (x..., d)
        prod = np.sum(up[..., :d] * grad, axis=-1)
        adv_u[i] = from_physical(prod, lattice)
    gradt = np.real(to_physical((1j * k[:d] * theta).T, lattice))
    adv_t = from_physical(np.sum(up[..., :d] * gradt, axis=-1), lattice)
    return -leray(adv_u, lattice), -adv_t


def nsf_step(state: MacroState, dt: float, nu1: float, nu2: float, check: bool = True) -> MacroState:
    """One integrating-factor RK2 step of the Boussinesq NSF system.

    d_t u + P(u.grad u) = nu1 Lap u,  d_t theta + u.grad theta = nu2 Lap theta,
    rho = -theta.
    """
    lat = state.lattice
    if check:
        check_constraints(state)
    h = 1.0 / lat.physical_shape()[0] if lat.dim else 1.0
    umax = float(np.max(np.abs(np.real(to_physical(state.u.T, lat))))) if lat.dim else 0.0
    if umax * dt / h > 0.5:
        raise ValueError(f"CFL number {umax * dt / h:.3f} exceeds 0.5")
    Eu = np.exp(-nu1 * lat.k2 * dt)
    Et = np.exp(-nu2 * lat.k2 * dt)
    u0, t0 = state.u, state.theta
    Nu0, Nt0 = _nonlinear(u0, t0, lat)
    ua = Eu * (u0 + dt * Nu0)
    ta = Et * (t0 + dt * Nt0)
    Nua, Nta = _nonlinear(ua, ta, lat)
    u1 = Eu * u0 + 0.5 * dt * (Eu * Nu0 + Nua)
    t1 = Et * t0 + 0.5 * dt * (Et * Nt0 + Nta)
    u1 = leray(u1, lat)
    return MacroState(lat, -t1, u1, t1)


@dataclass
class FluidTrajectory:
    t: np.ndarray
    states: list[MacroState]

    def energy(self) -> np.ndarray:
        return np.array([float(np.sum(np.abs(s.u) ** 2) + np.sum(np.abs(s.theta) ** 2)) for s in self.states])

    def enstrophy(self) -> np.ndarray:
        out = []
        for s in self.states:
            out.append(float(np.sum(s.lattice.k2 * (np.sum(np.abs(s.u) ** 2, axis=0) + np.abs(s.theta) ** 2))))
        return np.array(out)


def run_nsf(state: MacroState, T: float, dt: float, nu1: float, nu2: float, stride: int = 1) -> FluidTrajectory:
    steps = int(round(T / dt))
    if steps * dt < T - 1e-12:
        steps += 1
    h = T / steps if steps else 0.0
    ts, states = [0.0], [state]
    cur = state
    for n in range(1, steps + 1):
        cur = nsf_step(cur, h, nu1, nu2)
        if n % stride == 0 or n == steps:
            ts.append(n * h)
            states.append(cur)
    return FluidTrajectory(np.array(ts), states)


# ----- kinetic lifts -------------------------------------------------------------------


def well_prepared_lift(rho0: np.ndarray, u0: np.ndarray, theta0: np.ndarray, lattice: SpatialLattice,
                       grid: VelocityGrid, tol: float = 1e-8) -> KineticField:
    """sqrt(M)(rho + u.v + theta(|v|^2-3)/2) after checking the well-prepared constraints."""
    state = MacroState(lattice, np.asarray(rho0, complex), np.asarray(u0, complex), np.asarray(theta0, complex))
    check_constraints(state, tol)
    g = lift_macro(state, grid)
    res = float(np.max(np.abs(micro_part(g).values)))
    if res > tol * max(1.0, float(np.max(np.abs(g.values)))):
        raise ValueError(f"lift leaves Ker L: micro residual {res:.2e}")
    return g


def kinetic_lift(traj: FluidTrajectory, grid: VelocityGrid) -> list[KineticField]:
    return [lift_macro(s, grid) for s in traj.states]


def taylor_green(lattice: SpatialLattice, amplitude: float = 1.0, theta_amp: float = 0.5) -> MacroState:
    """Taylor-Green vortex u = A(sin 2pi x1 cos 2pi x2, -cos 2pi x1 sin 2pi x2) with
    a temperature mode theta = B cos 2pi(x1 + x2) and rho = -theta (d_x = 2)."""
    if lattice.dim != 2 or lattice.K < 1:
        raise ValueError("Taylor-Green data needs d_x = 2 and K >= 1")
    shape = lattice.physical_shape()
    x = np.meshgrid(*(np.arange(m) / m for m in shape), indexing="ij")
    s1, c1 = np.sin(2 * np.pi * x[0]), np.cos(2 * np.pi * x[0])
    s2, c2 = np.sin(2 * np.pi * x[1]), np.cos(2 * np.pi * x[1])
    u = np.stack([amplitude * s1 * c2, -amplitude * c1 * s2, 0 * s1], axis=-1)
    th = theta_amp * np.cos(2 * np.pi * (x[0] + x[1]))
    uh = from_physical(u, lattice).T
    thh = from_physical(th, lattice)
    return MacroState(lattice, -thh, uh, thh)


def fluid_moments(g: KineticField) -> MacroState:
    return moments(g)


def kernel_component(g: KineticField) -> KineticField:
    return g.with_values(pi_velocity(g.values, g.grid))
