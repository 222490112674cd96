"""Landau kernel coefficients, Maxwellian convolutions and the derived tables.

The kernel is sampled analytically on the lattice of node differences.  The
zero difference and its nearest neighbours receive weights built from
continued lattice moments, which keeps the quadrature high order for the
singular soft-potential kernels and exact for gamma = 0.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import fft as sfft
from scipy import special

from .calculus import VelocityGrid, dv

# (i, j) pairs of the symmetric 3x3 tensor in storage order
SYM_PAIRS = ((0, 0), (1, 1), (2, 2), (0, 1), (0, 2), (1, 2))


def landau_a(z: np.ndarray, gamma: float) -> np.ndarray:
    """a_ij(z) = |z|^(gamma+2) (delta_ij - z_i z_j/|z|^2), shape (..., 3, 3)."""
    r2 = np.sum(z**2, axis=-1)
    safe = np.where(r2 > 0, r2, 1.0)
    proj = np.eye(3) - z[..., :, None] * z[..., None, :] / safe[..., None, None]
    out = safe[..., None, None] ** ((gamma + 2) / 2) * proj
    return np.where((r2 > 0)[..., None, None], out, 0.0)


def landau_b(z: np.ndarray, gamma: float) -> np.ndarray:
    """b_i(z) = -2 |z|^gamma z_i."""
    r2 = np.sum(z**2, axis=-1)
    safe = np.where(r2 > 0, r2, 1.0)
    out = -2.0 * safe[..., None] ** (gamma / 2) * z
    return np.where((r2 > 0)[..., None], out, 0.0)


def landau_c(z: np.ndarray, gamma: float) -> np.ndarray:
    """c(z) = -2 (gamma+3) |z|^gamma."""
    r2 = np.sum(z**2, axis=-1)
    safe = np.where(r2 > 0, r2, 1.0)
    return np.where(r2 > 0, -2.0 * (gamma + 3) * safe ** (gamma / 2), 0.0)


_THETA_RANGE = np.arange(-40, 41).astype(float)
_GL_X, _GL_W = np.polynomial.legendre.leggauss(240)


@lru_cache(maxsize=None)
def lattice_moment(s: float, alpha: tuple[int, int, int] = (0, 0, 0)) -> float:
    """Analytically continued sum over m in Z^3, m != 0, of m^alpha |m|^(-s).

    Uses the theta-function splitting of the Mellin integral; the t -> 0
    part has its power-law asymptote removed and integrated in closed form.
    """
    alpha = tuple(int(a) for a in alpha)
    if any(a % 2 for a in alpha):
        return 0.0
    order = sum(alpha)
    if order == 0 and abs(s) < 1e-14:
        return -1.0
    lead = (3 + order) / 2
    coef = float(np.prod([special.gamma((a + 1) / 2) / np.pi ** ((a + 1) / 2) for a in alpha]))
    origin = 1.0 if order == 0 else 0.0
    # t in [1, 16]: the theta tail beyond is below exp(-16 pi)
    t_hi = 1.0 + 7.5 * (_GL_X + 1.0)
    w_hi = 7.5 * _GL_W
    # t in [0.03, 1] on a log scale; below, the remainder is below exp(-pi/t)
    u0 = np.log(0.03)
    t_lo = np.exp(0.5 * u0 * (1.0 - _GL_X))
    w_lo = -0.5 * u0 * _GL_W * t_lo
    hi = np.sum(w_hi * t_hi ** (s / 2 - 1) * _theta_moment(t_hi, alpha, origin))
    lo = np.sum(w_lo * t_lo ** (s / 2 - 1) * (_theta_moment(t_lo, alpha, origin) - coef * t_lo**-lead + origin))
    closed = coef / (s / 2 - lead) - (2.0 / s if order == 0 else 0.0)
    return float(np.pi ** (s / 2) * special.rgamma(s / 2) * (hi + lo + closed))


def _theta_moment(t: np.ndarray, alpha: tuple[int, int, int], origin: float) -> np.ndarray:
    """sum over m in Z^3 of m^alpha exp(-pi t |m|^2), minus the origin term."""
    m = _THETA_RANGE
    e = np.exp(-np.pi * np.outer(t, m**2))
    out = np.ones_like(t)
    for a in alpha:
        out = out * (e @ m**a)
    return out - origin


def epstein_zeta(s: float) -> float:
    """Analytically continued lattice sum Z(s) = sum_{m in Z^3, m != 0} |m|^(-s)."""
    return lattice_moment(float(s), (0, 0, 0))


def self_weight(p: float, h: float) -> float:
    """Value assigned to |z|^p at z = 0 on the lattice h Z^3.

    Chosen so that the lattice sum of |z|^p phi(z) matches the integral up
    to O(h^(p+5)) for smooth phi (zeta-corrected trapezoidal rule).
    """
    return -epstein_zeta(-p) * h**p


def _kernel_terms(gamma: float) -> dict[str, list[list[tuple[float, float, tuple[int, int, int]]]]]:
    """Each kernel component as a sum of coef |z|^q zhat^alpha terms."""

    def unit(*idx):
        a = [0, 0, 0]
        for i in idx:
            a[i] += 1
        return tuple(a)

    a = [[(1.0 if i == j else 0.0, gamma + 2, (0, 0, 0)), (-1.0, gamma + 2, unit(i, j))] for i, j in SYM_PAIRS]
    b = [[(-2.0, gamma + 1, unit(i))] for i in range(3)]
    c = [[(-2.0 * (gamma + 3), gamma, (0, 0, 0))]]
    return {"a": a, "b": b, "c": c}


def _moment(terms, beta) -> float:
    """Continued lattice sum of K(m) m^beta for K given by ``terms``."""
    out = 0.0
    for coef, q, alpha in terms:
        if coef == 0.0:
            continue
        al = tuple(x + y for x, y in zip(alpha, beta))
        out += coef * lattice_moment(float(sum(alpha) - q), al)
    return out


def _multi_indices(order: int) -> list[tuple[int, int, int]]:
    return [(i, j, k) for i in range(order + 1) for j in range(order + 1 - i) for k in range(order + 1 - i - j)]


def correction_stencil(terms, degree: float, h: float, order: int = 4) -> dict[tuple[int, int, int], float]:
    """Table increments on offsets in {-2..2}^3 that cancel the lattice-sum error.

    The punctured lattice sum of K(z) phi(z) differs from the integral by
    sum_beta h^(3+degree+|beta|) S_beta d^beta phi(0) / beta!, where S_beta
    is the continued lattice moment of K m^beta.  The increments w_d solve
    sum_d w_d d^beta = -h^degree S_beta for |beta| <= order, with the next
    order of moments set to zero, with a norm that penalises distant offsets.
    """
    r = np.arange(-2, 3)
    offs = np.stack(np.meshgrid(r, r, r, indexing="ij"), axis=-1).reshape(-1, 3)
    betas = _multi_indices(order + 1)
    rows = np.array([np.prod(offs.astype(float) ** np.array(b), axis=1) for b in betas])
    rhs = np.array([-(h**degree) * _moment(terms, b) if 0 < sum(b) <= order else 0.0 for b in betas])
    # the zeroth moment is a pure self weight; the rest is a zero-sum stencil
    # found by a weighted minimum norm that uses distant offsets only when needed
    reach = 4.0 ** -np.sum(offs**2, axis=1)
    wts = reach * np.linalg.lstsq(rows * reach, rhs, rcond=None)[0] if np.any(rhs) else np.zeros(len(offs))
    wts[len(offs) // 2] += -(h**degree) * _moment(terms, (0, 0, 0))
    return {tuple(int(x) for x in d): float(wv) for d, wv in zip(offs, wts) if wv != 0.0}


class Convolver:
    """Convolutions (k * f)(v) = w sum_{v*} k(v - v*) f(v*) on a velocity grid.

    Two interchangeable paths: a zero-padded FFT (default) and the direct
    double sum used as reference.
    """

    def __init__(self, grid: VelocityGrid):
        self.grid = grid
        N, h, gamma = grid.N, grid.h, grid.gamma
        d = np.arange(-(N - 1), N) * h
        Z = np.stack(np.meshgrid(d, d, d, indexing="ij"), axis=-1)
        a = landau_a(Z, gamma)
        b = landau_b(Z, gamma)
        c = landau_c(Z, gamma)
        o = N - 1
        tables = {"a": np.stack([a[..., i, j] for i, j in SYM_PAIRS]), "b": np.moveaxis(b, -1, 0), "c": c[None]}
        degrees = {"a": gamma + 2, "b": gamma + 1, "c": gamma}
        for name, comps in _kernel_terms(gamma).items():
            for ci, terms in enumerate(comps):
                for off, val in correction_stencil(terms, degrees[name], h).items():
                    tables[name][(ci,) + tuple(o + x for x in off)] += val
        # tables indexed [component, dx, dy, dz]
        self.tables = tables
        self.P = sfft.next_fast_len(2 * N - 1, real=True)
        s = (self.P,) * 3
        self.spectra = {k: sfft.rfftn(t, s=s, axes=(1, 2, 3)) for k, t in self.tables.items()}

    def __call__(self, f: np.ndarray, which: str, path: str = "fft") -> np.ndarray:
        """Convolve real or complex ``f`` (..., n) with kernel family ``which``.

        Returns shape (..., n_comp, n) where n_comp is 6 (symmetric a, in
        SYM_PAIRS order), 3 (b) or 1 (c).
        """
        if path == "direct":
            return self.direct(f, which)
        if np.iscomplexobj(f):
            return self(f.real, which) + 1j * self(f.imag, which)
        g = self.grid
        N, P = g.N, self.P
        lead = f.shape[:-1]
        F = sfft.rfftn(f.reshape(lead + (N, N, N)), s=(P, P, P), axes=(-3, -2, -1))
        spec = self.spectra[which]
        full = sfft.irfftn(F[..., None, :, :, :] * spec, s=(P, P, P), axes=(-3, -2, -1))
        out = full[..., N - 1 : 2 * N - 1, N - 1 : 2 * N - 1, N - 1 : 2 * N - 1]
        return g.w * out.reshape(lead + (spec.shape[0], g.n))

    def kernel_matrix(self, which: str, rows: slice | np.ndarray | None = None) -> np.ndarray:
        """Dense kernel values k(v_i - v_j) for the requested rows, (n_comp, r, n)."""
        g = self.grid
        N = g.N
        idx = np.indices(g.shape).reshape(3, -1)
        ri = idx[:, rows] if rows is not None else idx
        diff = ri[:, :, None] - idx[:, None, :] + (N - 1)
        t = self.tables[which]
        return t[:, diff[0], diff[1], diff[2]]

    def direct(self, f: np.ndarray, which: str, chunk: int = 256) -> np.ndarray:
        g = self.grid
        lead = f.shape[:-1]
        ncomp = self.tables[which].shape[0]
        out = np.zeros(lead + (ncomp, g.n), dtype=np.result_type(f, float))
        for s in range(0, g.n, chunk):
            rows = np.arange(s, min(s + chunk, g.n))
            Kc = self.kernel_matrix(which, rows)
            out[..., rows] = np.einsum("crn,...n->...cr", Kc, f)
        return g.w * out


def sym_to_full(s: np.ndarray) -> np.ndarray:
    """(..., 6, n) symmetric storage to (..., n, 3, 3)."""
    full = np.empty(s.shape[:-2] + (s.shape[-1], 3, 3), dtype=s.dtype)
    for c, (i, j) in enumerate(SYM_PAIRS):
        full[..., i, j] = s[..., c, :]
        full[..., j, i] = s[..., c, :]
    return full


def smooth_cutoff(r: np.ndarray) -> np.ndarray:
    """C-infinity bump: 1 on |r| <= 1/2, 0 for |r| >= 1."""
    r = np.abs(np.asarray(r, dtype=float))

    def f(t):
        return np.where(t > 0, np.exp(-1.0 / np.where(t > 0, t, 1.0)), 0.0)

    num = f(1.0 - r)
    return num / (num + f(r - 0.5))


def build_B(A: np.ndarray, v: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray, int]:
    """Square root B of the isotropic matrix field A.

    Returns (B, ell1, ell2, clamps) where ell1 is the eigenvalue along v and
    ell2 the double eigenvalue on the orthogonal plane; negative values from
    quadrature noise are clamped at zero and counted.
    """
    r2 = np.sum(v**2, axis=-1)
    tr = np.trace(A, axis1=-2, axis2=-1)
    small = r2 < 1e-18
    safe = np.where(small, 1.0, r2)
    ell1 = np.where(small, tr / 3, np.einsum("ni,nij,nj->n", v, A, v) / safe)
    ell2 = np.where(small, tr / 3, 0.5 * (tr - ell1))
    clamps = int(np.sum(ell1 < 0) + np.sum(ell2 < 0))
    ell1 = np.maximum(ell1, 0.0)
    ell2 = np.maximum(ell2, 0.0)
    P = np.where(small[:, None, None], 0.0, v[:, :, None] * v[:, None, :] / safe[:, None, None])
    eye = np.eye(3)
    B = np.sqrt(ell1)[:, None, None] * P + np.sqrt(ell2)[:, None, None] * (eye - P)
    B = np.where(small[:, None, None], np.sqrt(tr / 3)[:, None, None] * eye, B)
    return B, ell1, ell2, clamps


@dataclass
class KernelTables:
    """Per-node tables derived from the Landau kernel on a velocity grid."""

    grid: VelocityGrid
    conv: Convolver
    A_raw: np.ndarray  # quadrature value of a * M, (n, 3, 3)
    A: np.ndarray  # isotropic form ell1 P_v + ell2 (I - P_v)
    ell1: np.ndarray
    ell2: np.ndarray
    B: np.ndarray
    bM: np.ndarray  # (b * M), (n, 3)
    psi: np.ndarray
    R: float
    Rbar: float
    chi: np.ndarray
    m2: np.ndarray
    clamps: int

    @property
    def anisotropy(self) -> float:
        """Relative size of the non-isotropic remainder of the quadrature A."""
        return float(np.max(np.abs(self.A_raw - self.A)) / np.max(np.abs(self.A_raw)))

    def psi_fd(self, order: int = 2) -> np.ndarray:
        """psi with div(A v) from finite differences of the tabulated A v."""
        Av = np.einsum("nij,nj->ni", self.A, self.grid.v)
        div = sum(dv(Av[:, i], i, self.grid, order) for i in range(3))
        return 0.25 * self.ell1 * self.grid.v2 - 0.5 * div


def build_m_squared(psi: np.ndarray, grid: VelocityGrid, R: float, Rbar: float) -> tuple[np.ndarray, np.ndarray]:
    chi = smooth_cutoff(np.sqrt(grid.v2) / Rbar)
    return psi + R * chi, chi


def build_kernel_tables(grid: VelocityGrid, R: float = 20.0, Rbar: float = 10.0) -> KernelTables:
    conv = Convolver(grid)
    A_raw = sym_to_full(conv(grid.M, "a"))
    B, ell1, ell2, clamps = build_B(A_raw, grid.v)
    A = np.einsum("nij,nkj->nik", B, B)
    bM = np.moveaxis(conv(grid.M, "b"), -1, 0)
    # div(A v) = (b * M).v + tr A, since d_i A_ij = (b_j * M)
    div_Av = np.einsum("ni,ni->n", bM, grid.v) + np.trace(A, axis1=1, axis2=2)
    psi = 0.25 * ell1 * grid.v2 - 0.5 * div_Av
    m2, chi = build_m_squared(psi, grid, R, Rbar)
    return KernelTables(grid, conv, A_raw, A, ell1, ell2, B, bM, psi, R, Rbar, chi, m2, clamps)
