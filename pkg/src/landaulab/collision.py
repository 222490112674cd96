"""Landau collision operators on a velocity grid.

Pointwise operators (Q, Gamma) work on flat velocity arrays with optional
batch axes.  The linearised operator and its splittings are assembled as
dense symmetric matrices acting on velocity nodes.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .calculus import VelocityGrid, apply_along, dv, grad_v
from .kernels import SYM_PAIRS, KernelTables, build_kernel_tables
from .micromacro import kernel_basis


def _hessian_contract(T6: np.ndarray, f: np.ndarray, grid: VelocityGrid) -> np.ndarray:
    """sum_ij T_ij d_ij f with T in symmetric storage (..., 6, n)."""
    D = grid.spectral_matrix
    first = [apply_along(D, f, k, grid.N) for k in range(3)]
    out = 0.0
    for c, (i, j) in enumerate(SYM_PAIRS):
        dij = apply_along(D, first[j], i, grid.N)
        out = out + (1.0 if i == j else 2.0) * T6[..., c, :] * dij
    return out


def _contract_sym(T6: np.ndarray, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """sum_ij T_ij x_i y_j for symmetric T (..., 6, n) and vectors (..., 3, n)."""
    out = 0.0
    for c, (i, j) in enumerate(SYM_PAIRS):
        if i == j:
            out = out + T6[..., c, :] * x[..., i, :] * y[..., j, :]
        else:
            out = out + T6[..., c, :] * (x[..., i, :] * y[..., j, :] + x[..., j, :] * y[..., i, :])
    return out


def _apply_sym(T6: np.ndarray, x: np.ndarray) -> np.ndarray:
    """(T x)_i for symmetric T (..., 6, n) and x (..., 3, n)."""
    full_idx = {}
    for c, (i, j) in enumerate(SYM_PAIRS):
        full_idx[(i, j)] = c
        full_idx[(j, i)] = c
    return np.stack(
        [sum(T6[..., full_idx[(i, j)], :] * x[..., j, :] for j in range(3)) for i in range(3)], axis=-2
    )


@dataclass
class Collision:
    """Landau operators bound to one velocity grid and its kernel tables."""

    grid: VelocityGrid
    tables: KernelTables = None
    R: float = 20.0
    Rbar: float = 10.0
    l2_sign: str = "derived"
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.tables is None:
            self.tables = build_kernel_tables(self.grid, self.R, self.Rbar)
        if self.l2_sign not in ("derived", "printed"):
            raise ValueError("l2_sign must be 'derived' or 'printed'")

    # ----- nonlinear operators ---------------------------------------------

    def Q(self, g: np.ndarray, f: np.ndarray) -> np.ndarray:
        """Q(g, f) = (a * g)_ij d_ij f - (c * g) f."""
        conv = self.tables.conv
        ag = conv(g, "a")
        cg = conv(g, "c")[..., 0, :]
        return _hessian_contract(ag, f, self.grid) - cg * f

    def Gamma(self, g1: np.ndarray, g2: np.ndarray, path: str = "B") -> np.ndarray:
        """Gamma(g1, g2) = M^{-1/2} Q(sqrt(M) g1, sqrt(M) g2).

        Path "A" evaluates the definition literally; path "B" uses the
        expanded five-term form, which needs no division by sqrt(M).
        """
        grid = self.grid
        s = grid.sqrtM
        if path == "A":
            return self.Q(s * g1, s * g2) / s
        if path != "B":
            raise ValueError("path must be 'A' or 'B'")
        conv = self.tables.conv
        h = s * g1
        a = conv(h, "a")
        b = conv(h, "b")
        v = grid.v.T
        grad2 = grad_v(g2, grid)
        flux = _apply_sym(a, grad2) - b * g2[..., None, :]
        div = sum(apply_along(grid.spectral_matrix, flux[..., i, :], i, grid.N) for i in range(3))
        t3 = -_contract_sym(a, v, grad2)
        t4 = 0.25 * _contract_sym(a, v, v) * g2
        t5 = -0.5 * (a[..., 0, :] + a[..., 1, :] + a[..., 2, :]) * g2
        return div + t3 + t4 + t5

    def entropy_dissipation(self, f: np.ndarray, chunk: int = 256, floor: float = 1e-10) -> float:
        """Landau entropy dissipation by the pairwise double sum.

        D(f) = 1/2 sum_{v,v*} w^2 f f* (u - u*)^T a(v - v*) (u - u*), u = grad log f.
        The log-gradient is differenced directly, which is exact on Maxwellians
        for the centred stencil. Nodes where f is below ``floor * max f`` and the
        outer node layer are dropped.
        """
        grid = self.grid
        # the centred stencil sees zeros beyond the box, so the outer node layer is dropped
        interior = np.all(np.abs(grid.v) < grid.V - grid.h, axis=1)
        keep = (f > floor * np.max(f)) & interior
        logf = np.log(np.where(f > 0, f, floor * np.max(f)))
        u = np.where(keep, np.stack([dv(logf, k, grid) for k in range(3)]), 0.0)
        fk = np.where(keep, f, 0.0)
        v = grid.v
        total = 0.0
        # the integrand vanishes like |z|^(gamma+4) at z = 0, so the plain pointwise kernel is used
        for s in range(0, grid.n, chunk):
            rows = np.arange(s, min(s + chunk, grid.n))
            z = v[rows, None, :] - v[None, :, :]
            du = u[:, rows, None] - u[:, None, :]  # (3, r, n)
            r2 = np.sum(z**2, axis=-1)
            zdu = np.einsum("rnk,krn->rn", z, du)
            safe = np.where(r2 > 0, r2, 1.0)
            q = safe ** ((grid.gamma + 2) / 2) * (np.sum(du**2, axis=0) - zdu**2 / safe)
            q = np.where(r2 > 0, q, 0.0)
            total += float(np.sum(fk[rows, None] * fk[None, :] * q))
        return 0.5 * grid.w**2 * total

    # ----- linearised operator -------------------------------------------

    def L2_matrix(self, chunk: int = 256) -> np.ndarray:
        """Dense L2: {(a_ij * sqrt(M) f) v_i v_j - (a_ii * sqrt(M) f) - (c * sqrt(M) f)} sqrt(M).

        With ``l2_sign='printed'`` the first two terms change sign.
        """
        grid = self.grid
        conv = self.tables.conv
        n = grid.n
        s = grid.sqrtM
        sign = 1.0 if self.l2_sign == "derived" else -1.0
        out = np.empty((n, n))
        for st in range(0, n, chunk):
            rows = np.arange(st, min(st + chunk, n))
            a = conv.kernel_matrix("a", rows)
            c = conv.kernel_matrix("c", rows)[0]
            vr = grid.v[rows]
            avv = sum(
                (1.0 if i == j else 2.0) * a[c] * (vr[:, i] * vr[:, j])[:, None]
                for c, (i, j) in enumerate(SYM_PAIRS)
            )
            tra = a[0] + a[1] + a[2]
            out[rows] = sign * (avv - tra) - c
        out *= grid.w * s[:, None] * s[None, :]
        return out

    def L1_apply(self, f: np.ndarray) -> np.ndarray:
        """L1 f = div(A grad f) - psi f with spectral derivatives."""
        grid = self.grid
        D = grid.spectral_matrix
        A = self.tables.A
        grads = [apply_along(D, f, k, grid.N) for k in range(3)]
        out = -self.tables.psi * f
        for k in range(3):
            flux = sum(A[:, k, l] * grads[l] for l in range(3))
            out = out + apply_along(D, flux, k, grid.N)
        return out

    def L1_matrix(self, chunk: int = 512) -> np.ndarray:
        n = self.grid.n
        out = np.empty((n, n))
        for st in range(0, n, chunk):
            e = np.zeros((min(chunk, n - st), n))
            e[np.arange(e.shape[0]), st + np.arange(e.shape[0])] = 1.0
            out[st : st + e.shape[0]] = self.L1_apply(e)
        return out.T.copy()

    @cached_property
    def L1(self) -> np.ndarray:
        M = self.L1_matrix()
        self.diagnostics["L1_asymmetry"] = float(np.max(np.abs(M - M.T)) / np.max(np.abs(M)))
        return 0.5 * (M + M.T)

    @cached_property
    def L2(self) -> np.ndarray:
        M = self.L2_matrix()
        self.diagnostics["L2_asymmetry"] = float(np.max(np.abs(M - M.T)) / np.max(np.abs(M)))
        return 0.5 * (M + M.T)

    @cached_property
    def L_raw(self) -> np.ndarray:
        """Symmetrised L1 + L2 as assembled, before kernel correction."""
        L = self.L1 + self.L2
        asym = float(np.max(np.abs(L - L.T)) / np.max(np.abs(L)))
        self.diagnostics["L_asymmetry"] = asym
        if asym > 1e-6:
            raise RuntimeError(f"assembled L asymmetry {asym:.3e} exceeds 1e-6")
        return 0.5 * (L + L.T)

    @cached_property
    def L(self) -> np.ndarray:
        """(I - pi) L_raw (I - pi): collision invariants are an exact kernel."""
        Lr = self.L_raw
        # pi = U U^T with orthonormal columns U = sqrt(w) E^T (rank 5)
        U = np.sqrt(self.grid.w) * kernel_basis(self.grid).T
        LU = Lr @ U
        L = Lr - U @ LU.T - LU @ U.T + U @ (U.T @ LU) @ U.T
        L = 0.5 * (L + L.T)
        self.diagnostics["kernel_correction"] = float(np.max(np.abs(L - Lr)) / np.max(np.abs(Lr)))
        return L

    @property
    def cutoff_diag(self) -> np.ndarray:
        return self.tables.R * self.tables.chi

    def A_split(self) -> np.ndarray:
        """Regular part: L2 + R chi plus the finite-rank kernel correction."""
        A = self.L - self.L1
        A[np.diag_indices_from(A)] += self.cutoff_diag
        return A

    def B_split(self) -> np.ndarray:
        B = self.L1.copy()
        B[np.diag_indices_from(B)] -= self.cutoff_diag
        return B

    def invariant_residuals(self, L: np.ndarray | None = None) -> np.ndarray:
        """Relative residual |L phi| / (|L| |phi|) for the raw invariants."""
        L = self.L_raw if L is None else L
        E = kernel_basis(self.grid)
        scale = np.max(np.abs(L)) * np.sqrt(self.grid.n)
        return np.array([np.linalg.norm(L @ e) / (np.linalg.norm(e) * scale) for e in E])
