"""Velocity grid, quadrature, spatial Fourier lattice and differential operators.

Velocity arrays are stored flat over the tensor grid (C order, shape ``N**3``)
with any number of leading batch axes.  Kinetic fields carry one row per
spatial Fourier mode.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from itertools import product

import numpy as np

TWO_PI = 2.0 * np.pi


@dataclass(frozen=True)
class VelocityGrid:
    """Cell-centred tensor grid on the cube (-V, V)^3.

    With ``N`` even the node set is closed under ``v -> -v`` and never
    contains the origin.
    """

    V: float = 8.0
    N: int = 16
    gamma: float = 0.0

    def __post_init__(self):
        if self.N < 2 or self.N % 2:
            raise ValueError(f"N must be a positive even integer, got {self.N}")
        if self.V <= 0:
            raise ValueError("V must be positive")
        if not -2.0 <= self.gamma <= 1.0:
            raise ValueError(f"gamma must lie in [-2, 1], got {self.gamma}")

    @property
    def h(self) -> float:
        return 2.0 * self.V / self.N

    @property
    def w(self) -> float:
        """Quadrature weight of every node."""
        return self.h**3

    @property
    def n(self) -> int:
        return self.N**3

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.N, self.N, self.N)

    @cached_property
    def axis(self) -> np.ndarray:
        return -self.V + (np.arange(self.N) + 0.5) * self.h

    @cached_property
    def v(self) -> np.ndarray:
        """Node coordinates, shape (n, 3)."""
        g = np.meshgrid(self.axis, self.axis, self.axis, indexing="ij")
        return np.stack([c.ravel() for c in g], axis=-1)

    @cached_property
    def v2(self) -> np.ndarray:
        return np.sum(self.v**2, axis=-1)

    @cached_property
    def bracket(self) -> np.ndarray:
        """Japanese bracket <v> = sqrt(1 + |v|^2)."""
        return np.sqrt(1.0 + self.v2)

    @cached_property
    def M(self) -> np.ndarray:
        return (TWO_PI) ** -1.5 * np.exp(-0.5 * self.v2)

    @cached_property
    def sqrtM(self) -> np.ndarray:
        return np.sqrt(self.M)

    @cached_property
    def mirror(self) -> np.ndarray:
        """Index permutation realising v -> -v."""
        return np.arange(self.n)[::-1].copy()

    def integrate(self, f: np.ndarray) -> np.ndarray:
        """Quadrature over the last axis."""
        return self.w * np.sum(f, axis=-1)

    def inner(self, f: np.ndarray, g: np.ndarray) -> np.ndarray:
        """L2_v inner product <f, g> (conjugate-linear in g) over the last axis."""
        return self.w * np.sum(f * np.conj(g), axis=-1)

    def norm(self, f: np.ndarray) -> np.ndarray:
        return np.sqrt(np.abs(self.inner(f, f)))

    # ----- velocity derivatives -------------------------------------------

    @cached_property
    def spectral_matrix(self) -> np.ndarray:
        """Real skew-symmetric Fourier differentiation matrix along one axis."""
        N = self.N
        k = TWO_PI * np.fft.fftfreq(N, d=self.h)
        k[N // 2] = 0.0
        eye = np.eye(N)
        D = np.real(np.fft.ifft(1j * k[:, None] * np.fft.fft(eye, axis=0), axis=0))
        return 0.5 * (D - D.T)

    def fd_matrix(self, order: int = 2) -> np.ndarray:
        """Centred difference matrix along one axis, zero outside the box."""
        if order not in (2, 4, 6):
            raise ValueError("order must be 2, 4 or 6")
        m = order // 2
        A = np.array([[k ** (2 * i + 1) for k in range(1, m + 1)] for i in range(m)], float)
        rhs = np.zeros(m)
        rhs[0] = 0.5
        coef = np.linalg.solve(A, rhs)
        D = np.zeros((self.N, self.N))
        for k, ck in enumerate(coef, 1):
            D += ck * (np.eye(self.N, k=k) - np.eye(self.N, k=-k))
        return D / self.h


def apply_along(D: np.ndarray, f: np.ndarray, axis: int, N: int) -> np.ndarray:
    """Apply the 1-D matrix ``D`` along velocity ``axis`` of flat arrays."""
    lead = f.shape[:-1]
    F = f.reshape(lead + (N, N, N))
    out = np.moveaxis(np.tensordot(F, D, axes=([len(lead) + axis], [1])), -1, len(lead) + axis)
    return out.reshape(lead + (N**3,))


def dv(f: np.ndarray, axis: int, grid: VelocityGrid, order: int = 2) -> np.ndarray:
    """Centred finite-difference derivative in ``v_axis`` (axis in 0..2)."""
    return apply_along(grid.fd_matrix(order), f, axis, grid.N)


def dv_spectral(f: np.ndarray, axis: int, grid: VelocityGrid) -> np.ndarray:
    """Fourier derivative in ``v_axis`` for fields that vanish at the box edge."""
    return apply_along(grid.spectral_matrix, f, axis, grid.N)


def grad_v(f: np.ndarray, grid: VelocityGrid) -> np.ndarray:
    """Spectral gradient, result shape (..., 3, n)."""
    return np.stack([dv_spectral(f, k, grid) for k in range(3)], axis=-2)


def grad_tilde_v(f: np.ndarray, B: np.ndarray, grid: VelocityGrid) -> np.ndarray:
    """Anisotropic gradient (B grad_v f)_i = B_im d_m f, shape (..., 3, n).

    ``B`` has shape (n, 3, 3).
    """
    g = grad_v(f, grid)
    return np.einsum("nim,...mn->...in", B, g)


def grad_tilde_v_adjoint(g: np.ndarray, B: np.ndarray, grid: VelocityGrid) -> np.ndarray:
    """Adjoint of ``grad_tilde_v``: sum_i -d_m(B_im g_i) for g of shape (..., 3, n)."""
    flux = np.einsum("nim,...in->...mn", B, g)
    return -sum(dv_spectral(flux[..., m, :], m, grid) for m in range(3))


# ----- spatial lattice ----------------------------------------------------


@dataclass(frozen=True)
class SpatialLattice:
    """Fourier modes xi with max-norm <= K on the d_x-torus, embedded in Z^3."""

    dim: int = 1
    K: int = 2

    def __post_init__(self):
        if self.dim not in (0, 1, 2, 3):
            raise ValueError("dim must be in {0, 1, 2, 3}")
        if self.K < 0:
            raise ValueError("K must be non-negative")

    @cached_property
    def modes(self) -> np.ndarray:
        rng = range(-self.K, self.K + 1)
        pts = [p + (0,) * (3 - self.dim) for p in product(rng, repeat=self.dim)]
        return np.array(pts, dtype=int).reshape(-1, 3)

    @property
    def size(self) -> int:
        return len(self.modes)

    @cached_property
    def index(self) -> dict[tuple[int, int, int], int]:
        return {tuple(int(c) for c in m): i for i, m in enumerate(self.modes)}

    @cached_property
    def zero(self) -> int:
        return self.index[(0, 0, 0)]

    @cached_property
    def conj_index(self) -> np.ndarray:
        return np.array([self.index[tuple(int(-c) for c in m)] for m in self.modes])

    @cached_property
    def wavevectors(self) -> np.ndarray:
        """Physical wavevectors 2*pi*xi."""
        return TWO_PI * self.modes.astype(float)

    @cached_property
    def k2(self) -> np.ndarray:
        return np.sum(self.wavevectors**2, axis=-1)

    def physical_shape(self, oversample: int | None = None) -> tuple[int, ...]:
        """Collocation grid able to hold quadratic products without aliasing."""
        m = oversample or (3 * self.K + 1)
        return (m,) * self.dim


@dataclass
class KineticField:
    """Perturbation g(x, v) stored as values[mode, node]."""

    lattice: SpatialLattice
    grid: VelocityGrid
    values: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.values is None:
            self.values = np.zeros((self.lattice.size, self.grid.n), dtype=complex)
        self.values = np.asarray(self.values, dtype=complex)
        if self.values.shape != (self.lattice.size, self.grid.n):
            raise ValueError(
                f"values shape {self.values.shape} != {(self.lattice.size, self.grid.n)}"
            )

    def copy(self) -> "KineticField":
        return KineticField(self.lattice, self.grid, self.values.copy())

    def with_values(self, values: np.ndarray) -> "KineticField":
        return KineticField(self.lattice, self.grid, values)

    def is_real(self, tol: float = 1e-12) -> bool:
        v = self.values
        scale = max(1.0, np.max(np.abs(v)))
        return bool(np.max(np.abs(v - np.conj(v[self.lattice.conj_index]))) <= tol * scale)

    def __add__(self, other: "KineticField") -> "KineticField":
        return self.with_values(self.values + other.values)

    def __sub__(self, other: "KineticField") -> "KineticField":
        return self.with_values(self.values - other.values)

    def __mul__(self, a: complex) -> "KineticField":
        return self.with_values(a * self.values)

    __rmul__ = __mul__


def quad_inner(f: KineticField, g: KineticField) -> complex:
    """L2_{x,v} inner product with the Plancherel mode sum."""
    if f.values.shape != g.values.shape:
        raise ValueError(f"shape mismatch: {f.values.shape} vs {g.values.shape}")
    return complex(f.grid.w * np.sum(f.values * np.conj(g.values)))


def dx(f: KineticField, axis: int) -> KineticField:
    """Spatial derivative d_{x_axis} under the convention d_x -> 2*pi*i*xi."""
    k = f.lattice.wavevectors[:, axis]
    return f.with_values(1j * k[:, None] * f.values)


def grad_tilde_x(f: KineticField, B: np.ndarray) -> list[KineticField]:
    """Anisotropic spatial gradient (B grad_x f)_i, one field per component."""
    k = f.lattice.wavevectors
    return [
        f.with_values(1j * np.einsum("pm,nm->pn", k, B[:, i, :]) * f.values)
        for i in range(3)
    ]


def to_physical(values: np.ndarray, lattice: SpatialLattice, shape: tuple[int, ...] | None = None) -> np.ndarray:
    """Synthesize mode coefficients on a uniform x-grid (leading axes = x)."""
    shape = shape or lattice.physical_shape()
    d = lattice.dim
    if d == 0:
        return values.copy()
    spec = np.zeros(shape + values.shape[1:], dtype=complex)
    idx = tuple(lattice.modes[:, a] % shape[a] for a in range(d))
    spec[idx] = values
    return np.fft.ifftn(spec, axes=tuple(range(d))) * np.prod(shape)


def from_physical(phys: np.ndarray, lattice: SpatialLattice) -> np.ndarray:
    """Project x-grid samples back onto the lattice modes (truncation)."""
    d = lattice.dim
    if d == 0:
        return phys.copy()
    shape = phys.shape[:d]
    spec = np.fft.fftn(phys, axes=tuple(range(d))) / np.prod(shape)
    idx = tuple(lattice.modes[:, a] % shape[a] for a in range(d))
    return spec[idx]
