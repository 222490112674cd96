"""Weighted velocity and phase-space norms, hypocoercive inner products and
the Lyapunov functionals used to measure regularisation.

Spatial derivatives act per Fourier mode, so ``|nabla_x^i f|^2`` becomes the
mode weight ``|2 pi xi|^(2 i)``.  Velocity derivatives use the spectral
differentiation of :mod:`calculus`.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .calculus import KineticField, VelocityGrid, grad_tilde_v
from .micromacro import micro_part, moment_weights, psi_k, theta_kl


def _s(grid: VelocityGrid) -> float:
    """Weight exponent gamma/2 + 1."""
    return grid.gamma / 2 + 1


def _bv(grid: VelocityGrid, p: float) -> np.ndarray:
    return grid.bracket**p


def _weighted_sq(f: np.ndarray, wgt: np.ndarray, grid: VelocityGrid) -> np.ndarray:
    """w sum_v wgt^2 |f|^2 over the last axis."""
    return grid.w * np.sum(wgt**2 * np.abs(f) ** 2, axis=-1)


# ----- velocity norms ------------------------------------------------------


def h1v_sq(f: np.ndarray, B: np.ndarray, grid: VelocityGrid) -> np.ndarray:
    """Squared H^1_{v,*} norm over the last axis: |<v>^s f|^2 + |B grad f|^2."""
    gt = grad_tilde_v(f, B, grid)
    return _weighted_sq(f, _bv(grid, _s(grid)), grid) + grid.w * np.sum(np.abs(gt) ** 2, axis=(-2, -1))


def norm_H1vstar(f: np.ndarray, B: np.ndarray, grid: VelocityGrid) -> float:
    return float(np.sqrt(np.sum(h1v_sq(f, B, grid))))


def h2v_sq(f: np.ndarray, B: np.ndarray, grid: VelocityGrid) -> np.ndarray:
    """Squared H^2_{v,*} norm over the last axis."""
    s = _s(grid)
    wt = _bv(grid, s)
    gt = grad_tilde_v(f, B, grid)
    hess = grad_tilde_v(gt, B, grid)  # (..., 3, 3, n): tilde-d_i tilde-d_j f
    out = _weighted_sq(f, _bv(grid, 2 * s), grid)
    out = out + grid.w * np.sum(np.abs(grad_tilde_v(wt * f, B, grid)) ** 2, axis=(-2, -1))
    out = out + grid.w * np.sum(wt**2 * np.abs(gt) ** 2, axis=(-2, -1))
    return out + grid.w * np.sum(np.abs(hess) ** 2, axis=(-3, -2, -1))


def norm_H2vstar(f: np.ndarray, B: np.ndarray, grid: VelocityGrid) -> float:
    return float(np.sqrt(np.sum(h2v_sq(f, B, grid))))


# ----- phase-space norms ----------------------------------------------------


def _mode_weight(f: KineticField, i: int) -> np.ndarray:
    return f.lattice.k2**i


def inner_X(f: KineticField, g: KineticField) -> float:
    """<f, g>_X: sum over i of <<v>^((3-i)s) nabla_x^i f, same for g>."""
    grid = f.grid
    s = _s(grid)
    prod = f.values * np.conj(g.values)
    out = 0.0
    for i in range(4):
        out += np.sum(_mode_weight(f, i)[:, None] * _bv(grid, 2 * (3 - i) * s) * prod)
    return float(np.real(grid.w * out))


def norm_X(f: KineticField) -> float:
    return float(np.sqrt(max(inner_X(f, f), 0.0)))


def _sobolev_sum(f: KineticField, per_node) -> float:
    grid = f.grid
    s = _s(grid)
    out = 0.0
    for i in range(4):
        vals = _bv(grid, (3 - i) * s) * f.values
        out += float(np.sum(_mode_weight(f, i) * per_node(vals)))
    return out


def norm_Y1(f: KineticField, B: np.ndarray) -> float:
    return float(np.sqrt(_sobolev_sum(f, lambda x: h1v_sq(x, B, f.grid))))


def norm_Y2(f: KineticField, B: np.ndarray) -> float:
    return float(np.sqrt(_sobolev_sum(f, lambda x: h2v_sq(x, B, f.grid))))


def grad_tilde_x_values(f: KineticField, B: np.ndarray) -> np.ndarray:
    """(B grad_x f)_i per mode, shape (3, modes, n)."""
    k = f.lattice.wavevectors
    return 1j * np.einsum("pm,nim->ipn", k, B) * f.values[None]


def grad_x_values(f: KineticField) -> np.ndarray:
    """grad_x f per mode, shape (3, modes, n)."""
    k = f.lattice.wavevectors
    return 1j * k.T[:, :, None] * f.values[None]


def _vec_inner_X(F: np.ndarray, G: np.ndarray, ref: KineticField) -> float:
    return sum(inner_X(ref.with_values(F[i]), ref.with_values(G[i])) for i in range(F.shape[0]))


def norm_Z1eps(f: KineticField, B: np.ndarray, eps: float) -> float:
    gx = grad_tilde_x_values(f, B)
    return float(np.sqrt(norm_X(f) ** 2 + norm_Y1(f, B) ** 2 + eps**2 * _vec_inner_X(gx, gx, f)))


# ----- hypocoercive inner products -----------------------------------------


def eta_weights(eta: float) -> tuple[float, float, float]:
    """(eta1, eta2, eta3) = (eta, eta^(3/2), eta^(7/4))."""
    return eta, eta**1.5, eta**1.75


def _macro(f: KineticField) -> np.ndarray:
    """Rows rho, u1, u2, u3, theta per mode, shape (5, modes)."""
    return f.grid.w * moment_weights(f.grid) @ f.values.T


def _dx_inv_lap(f: KineticField) -> np.ndarray:
    """Fourier symbol of d_{x_k} (-Delta)^{-1}, shape (3, modes); zero at xi = 0."""
    lat = f.lattice
    k2 = lat.k2.copy()
    k2[lat.zero] = 1.0
    out = 1j * lat.wavevectors.T / k2
    out[:, lat.zero] = 0.0
    return out


def _coupling(f: KineticField, g: KineticField, mode_weight: np.ndarray) -> tuple[float, float, float]:
    """Moment terms of the hypocoercive L2 form, with an extra per-mode weight.

    Returns (term1, term2, term3) without the eta and eps factors, each
    already symmetrised in (f, g).
    """
    sym = _dx_inv_lap(f)
    mf, mg = _macro(f), _macro(g)
    pf, pg = psi_k(f), psi_k(g)
    tf, tg = theta_kl(f), theta_kl(g)
    wgt = mode_weight

    def pair(a, b):
        return float(np.real(np.sum(wgt * a * np.conj(b))))

    t1 = sum(pair(sym[k] * mf[4], pg[k]) + pair(sym[k] * mg[4], pf[k]) for k in range(3))
    t2 = sum(
        pair(sym[l] * mf[1 + k], tg[k, l]) + pair(sym[l] * mg[1 + k], tf[k, l]) for k in range(3) for l in range(3)
    )
    t3 = sum(pair(sym[k] * mf[0], mg[1 + k]) + pair(sym[k] * mg[0], mf[1 + k]) for k in range(3))
    return t1, t2, t3


def _hypo_L2_weighted(f: KineticField, g: KineticField, eps: float, eta: float, mode_weight: np.ndarray) -> float:
    e1, e2, e3 = eta_weights(eta)
    base = float(np.real(f.grid.w * np.sum(mode_weight[:, None] * f.values * np.conj(g.values))))
    if eta == 0.0:
        return base
    t1, t2, t3 = _coupling(f, g, mode_weight)
    return base + eps * (e1 * t1 + e2 * t2 + e3 * t3)


def hypo_inner_L2(f: KineticField, g: KineticField, eps: float, eta: float) -> float:
    """Moment-coupled inner product equivalent to the L^2_{x,v} one."""
    _check_means(f)
    _check_means(g)
    return _hypo_L2_weighted(f, g, eps, eta, np.ones(f.lattice.size))


def hypo_inner_X(f: KineticField, g: KineticField, eps: float, eta: float, delta: float = 0.05) -> float:
    """Hypocoercive inner product equivalent to the X one.

    sum_{i<=2} delta <<v>^((3-i)s) nabla^i f_perp, ...> + sum_{i<=3} [[nabla^i f, nabla^i g]].
    """
    _check_means(f)
    _check_means(g)
    grid = f.grid
    s = _s(grid)
    fp, gp = micro_part(f), micro_part(g)
    out = 0.0
    for i in range(4):
        mw = _mode_weight(f, i)
        if i < 3:
            wv = _bv(grid, 2 * (3 - i) * s)
            out += delta * float(np.real(grid.w * np.sum(mw[:, None] * wv * fp.values * np.conj(gp.values))))
        out += _hypo_L2_weighted(f, g, eps, eta, mw)
    return out


def _check_means(f: KineticField, tol: float = 1e-8) -> None:
    """The inverse Laplacian needs zero-mean moments (relative to the L2 norm)."""
    m = _macro(f)[:, f.lattice.zero]
    scale = float(np.sqrt(f.grid.w * np.sum(np.abs(f.values) ** 2)))
    if np.max(np.abs(m)) > tol * scale:
        raise ValueError(f"nonzero mean moments {np.max(np.abs(m)):.3e}: inverse Laplacian undefined")


def hypo_norm_X(f: KineticField, eps: float, eta: float, delta: float = 0.05) -> float:
    return float(np.sqrt(max(hypo_inner_X(f, f, eps, eta, delta), 0.0)))


# ----- Lyapunov functionals ------------------------------------------------


@dataclass(frozen=True)
class LyapunovWeights:
    """Time-weight constants of the regularisation functionals."""

    alpha1: float
    alpha2: float
    alpha3: float
    K: float = 1.0

    @classmethod
    def from_eta(cls, eta: float, K: float = 1.0) -> "LyapunovWeights":
        return cls(eta, eta**1.5, eta ** (5.0 / 3.0), K)


def lyapunov_U(
    t: float,
    f: KineticField,
    eps: float,
    B: np.ndarray,
    weights: LyapunovWeights,
    eta: float = 0.1,
    delta: float = 0.05,
) -> float:
    """Time-weighted functional with t, t^2, t^3 weights on the micro gradient,
    mixed and spatial-gradient terms, on top of the hypocoercive X norm."""
    if t < 0:
        raise ValueError("t must be non-negative")
    grid = f.grid
    out = hypo_inner_X(f, f, eps, eta, delta)
    if t == 0:
        return out
    a1, a2, a3, K = weights.alpha1, weights.alpha2, weights.alpha3, weights.K
    fp = micro_part(f)
    gv_perp = np.moveaxis(grad_tilde_v(fp.values, B, grid), -2, 0)
    w_s = _bv(grid, _s(grid))
    out += a1 * t * (_vec_inner_X(gv_perp, gv_perp, f) + K * inner_X(fp.with_values(w_s * fp.values), fp.with_values(w_s * fp.values)))
    gv = np.moveaxis(grad_tilde_v(f.values, B, grid), -2, 0)
    gx = grad_tilde_x_values(f, B)
    out += eps * a2 * t**2 * _vec_inner_X(gv, gx, f)
    w_g = _bv(grid, grid.gamma / 2)
    dxf = w_g * grad_x_values(f)
    out += eps**2 * a3 * t**3 * (_vec_inner_X(gx, gx, f) + K * _vec_inner_X(dxf, dxf, f))
    return out


def _l2(F: np.ndarray, G: np.ndarray, grid: VelocityGrid) -> float:
    return float(np.real(grid.w * np.sum(F * np.conj(G))))


def lyapunov_E(
    t: float,
    f: KineticField,
    eps: float,
    B: np.ndarray,
    weights: LyapunovWeights,
    alpha: float = 0.0,
    mixed_sign: float = 1.0,
) -> float:
    """Functional with weights (t/eps^2)^k in <v>^alpha-weighted L^2_{x,v}.

    ``mixed_sign=-1`` flips the mixed term (adjoint version).
    """
    if t < 0:
        raise ValueError("t must be non-negative")
    grid = f.grid
    wa = _bv(grid, alpha)
    F = wa * f.values
    out = _l2(F, F, grid)
    if t == 0:
        return out
    a1, a2, a3, K = weights.alpha1, weights.alpha2, weights.alpha3, weights.K
    tau = t / eps**2
    ws = _bv(grid, _s(grid))
    gv = wa * np.moveaxis(grad_tilde_v(f.values, B, grid), -2, 0)
    gx = wa * grad_tilde_x_values(f, B)
    dx = wa * _bv(grid, grid.gamma / 2) * grad_x_values(f)
    out += a1 * tau * (K * _l2(ws * F, ws * F, grid) + _l2(gv, gv, grid))
    out += mixed_sign * eps * a2 * tau**2 * _l2(gv, gx, grid)
    out += eps**2 * a3 * tau**3 * (_l2(gx, gx, grid) + K * _l2(dx, dx, grid))
    return out


# ----- report ----------------------------------------------------------------


@dataclass
class NormReport:
    H1vstar: float
    H2vstar: float
    X: float
    Y1: float
    Y2: float
    Z1eps: float
    hypo_L2: float
    hypo_X: float
    eta: float
    delta: float
    eps: float

    def as_dict(self) -> dict:
        return asdict(self)


def norm_report(f: KineticField, B: np.ndarray, eps: float, eta: float = 0.1, delta: float = 0.05) -> NormReport:
    grid = f.grid
    return NormReport(
        H1vstar=float(np.sqrt(np.sum(h1v_sq(f.values, B, grid)))),
        H2vstar=float(np.sqrt(np.sum(h2v_sq(f.values, B, grid)))),
        X=norm_X(f),
        Y1=norm_Y1(f, B),
        Y2=norm_Y2(f, B),
        Z1eps=norm_Z1eps(f, B, eps),
        hypo_L2=float(np.sqrt(max(hypo_inner_L2(f, f, eps, eta), 0.0))),
        hypo_X=hypo_norm_X(f, eps, eta, delta),
        eta=eta,
        delta=delta,
        eps=eps,
    )
