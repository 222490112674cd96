"""Per-mode linearised operators, their spectra, small-wavenumber branches,
spectral projectors, semigroups and rate fitting.

For one spatial mode the operator is (L - i eps k.v) / eps^2 with the physical
wavevector k = 2 pi xi.  Every reflection v_a -> -v_a with k_a = 0 commutes
with it, so matrices are reduced to parity blocks before any dense
factorisation.  Because L is real symmetric the per-mode operator is complex
symmetric, hence left eigenvectors are the transposed right ones.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from itertools import product

import numpy as np
import scipy.linalg as sla
from scipy.sparse.linalg import eigs

from .calculus import KineticField, VelocityGrid, grad_tilde_v, grad_tilde_v_adjoint
from .collision import Collision
from .micromacro import kernel_basis


# ----- parity reduction -------------------------------------------------------


class ParityBlocks:
    """Symmetry-adapted orthonormal basis for reflections along ``axes``."""

    def __init__(self, grid: VelocityGrid, axes: tuple[int, ...]):
        self.grid = grid
        self.axes = tuple(sorted(axes))
        N = grid.N
        ijk = np.indices(grid.shape).reshape(3, -1)
        rep = np.ones(grid.n, dtype=bool)
        for a in self.axes:
            rep &= ijk[a] >= N // 2
        reps = ijk[:, rep]
        flips = list(product((0, 1), repeat=len(self.axes)))
        idx = []
        for fl in flips:
            c = reps.copy()
            for a, f in zip(self.axes, fl):
                if f:
                    c[a] = N - 1 - c[a]
            idx.append(np.ravel_multi_index(tuple(c), grid.shape))
        self.idx = np.array(idx)  # (m, nr)
        self.patterns = list(product((1, -1), repeat=len(self.axes)))
        # characters chi[b, t] = prod over flipped axes of the pattern sign
        self.chars = np.array(
            [[np.prod([s for s, f in zip(pat, fl) if f]) for fl in flips] for pat in self.patterns], dtype=float
        )
        self.m = len(flips)
        self.size = self.idx.shape[1]

    @property
    def n_blocks(self) -> int:
        return len(self.patterns)

    def reduce(self, A: np.ndarray) -> list[np.ndarray]:
        """Blocks Q_b^T A Q_b of a reflection-invariant matrix."""
        m = self.m
        sub = [[A[np.ix_(self.idx[t], self.idx[u])] for u in range(m)] for t in range(m)]
        out = []
        for b in range(self.n_blocks):
            ch = self.chars[b]
            acc = sum(ch[t] * ch[u] * sub[t][u] for t in range(m) for u in range(m))
            out.append(acc / m)
        return out

    def to_blocks(self, f: np.ndarray) -> np.ndarray:
        """Coefficients (..., n_blocks, nr) of velocity arrays (..., n)."""
        g = f[..., self.idx]  # (..., m, nr)
        return np.einsum("bt,...tr->...br", self.chars, g) / np.sqrt(self.m)

    def from_blocks(self, c: np.ndarray) -> np.ndarray:
        lead = c.shape[:-2]
        out = np.zeros(lead + (self.grid.n,), dtype=c.dtype)
        vals = np.einsum("bt,...br->...tr", self.chars, c) / np.sqrt(self.m)
        for t in range(self.m):
            out[..., self.idx[t]] = vals[..., t, :]
        return out

    def diag(self, d: np.ndarray) -> np.ndarray:
        """Node values on the representatives of a reflection-invariant diagonal."""
        return d[self.idx[0]]


def parity_axes(k: np.ndarray, tol: float = 0.0) -> tuple[int, ...]:
    return tuple(a for a in range(3) if abs(k[a]) <= tol)


# ----- operators ------------------------------------------------------------


@dataclass
class LinearOperators:
    """Dense L and split B on one velocity grid, with cached parity reductions."""

    coll: Collision
    _reduced: dict = field(default_factory=dict)

    @property
    def grid(self) -> VelocityGrid:
        return self.coll.grid

    @cached_property
    def L(self) -> np.ndarray:
        return self.coll.L

    @cached_property
    def B(self) -> np.ndarray:
        return self.coll.B_split()

    @cached_property
    def A(self) -> np.ndarray:
        return self.coll.A_split()

    def matrix(self, which: str) -> np.ndarray:
        if which not in ("L", "B", "A"):
            raise ValueError("which must be 'L', 'B' or 'A'")
        return getattr(self, which)

    def blocks(self, axes: tuple[int, ...]) -> ParityBlocks:
        key = ("pb", axes)
        if key not in self._reduced:
            self._reduced[key] = ParityBlocks(self.grid, axes)
        return self._reduced[key]

    def reduced(self, which: str, axes: tuple[int, ...]) -> list[np.ndarray]:
        key = (which, axes)
        if key not in self._reduced:
            self._reduced[key] = self.blocks(axes).reduce(self.matrix(which))
        return self._reduced[key]


def assemble_Lambda_hat(ops: LinearOperators, xi, eps: float, which: str = "L", physical: bool = False) -> np.ndarray:
    """Dense (M - i eps k.v)/eps^2 with M = L (default) or the split part B.

    ``xi`` is a lattice mode (k = 2 pi xi) unless ``physical`` is set, in which
    case it is the wavevector k itself.
    """
    k = np.asarray(xi, dtype=float) * (1.0 if physical else 2 * np.pi)
    M = ops.matrix(which).astype(complex)
    M[np.diag_indices_from(M)] -= 1j * eps * (ops.grid.v @ k)
    return M / eps**2


@dataclass
class ModeSpectrum:
    """Eigendecomposition of the per-mode operator block by block.

    Represents (M - i q.v) for a physical wavevector q (eps absorbed), so the
    operator of Knudsen number eps at mode k is this one with q = eps k,
    scaled by 1/eps^2.
    """

    blocks: ParityBlocks
    evals: list[np.ndarray]
    vecs: list[np.ndarray]
    inv: list[np.ndarray]
    cond: float

    @property
    def eigenvalues(self) -> np.ndarray:
        return np.concatenate(self.evals)

    def apply(self, fn, f: np.ndarray) -> np.ndarray:
        """fn(operator) applied to velocity arrays (..., n), fn acting on eigenvalues."""
        c = self.blocks.to_blocks(np.asarray(f, dtype=complex))
        out = np.empty_like(c)
        for b in range(self.blocks.n_blocks):
            coef = c[..., b, :] @ self.inv[b].T
            out[..., b, :] = (coef * fn(self.evals[b])) @ self.vecs[b].T
        return self.blocks.from_blocks(out)

    def expm_apply(self, t: float, f: np.ndarray, scale: float = 1.0) -> np.ndarray:
        return self.apply(lambda lam: np.exp(t * scale * lam), f)


def mode_spectrum(ops: LinearOperators, q: np.ndarray, which: str = "L") -> ModeSpectrum:
    """Eigendecomposition of (M - i q.v) with q a physical wavevector."""
    q = np.asarray(q, dtype=float)
    axes = parity_axes(q)
    pb = ops.blocks(axes)
    red = ops.reduced(which, axes)
    qv = pb.diag(ops.grid.v @ q)
    evals, vecs, inv = [], [], []
    cond = 1.0
    for Mb in red:
        if not np.any(qv):
            lam, V = np.linalg.eigh(Mb)
            evals.append(lam.astype(complex))
            vecs.append(V.astype(complex))
            inv.append(V.T.astype(complex))
            continue
        Mc = Mb.astype(complex)
        Mc[np.diag_indices_from(Mc)] -= 1j * qv
        lam, V = sla.eig(Mc, overwrite_a=True, check_finite=False)
        # complex-symmetric normalisation: V^T V = I when eigenvalues are simple
        nrm = np.sqrt(np.einsum("ij,ij->j", V, V))
        V = V / nrm
        Vi = np.linalg.inv(V)
        cond = max(cond, float(np.linalg.norm(V, 1) * np.linalg.norm(Vi, 1)))
        evals.append(lam)
        vecs.append(V)
        inv.append(Vi)
    if cond > 1e8:
        raise np.linalg.LinAlgError(f"eigenbasis condition number {cond:.2e} exceeds 1e8")
    return ModeSpectrum(pb, evals, vecs, inv, cond)


def rightmost_eigenvalues(ops: LinearOperators, q, count: int = 8, which: str = "L") -> np.ndarray:
    """The ``count`` eigenvalues of largest real part, over all parity blocks."""
    lam = mode_spectrum(ops, q, which).eigenvalues
    return lam[np.argsort(-lam.real)][:count]


# ----- branches ----------------------------------------------------------------


@dataclass
class BranchFit:
    """Quadratic fit lambda(k) = c0 + c1 k + c2 k^2 of one eigenvalue trace."""

    label: str
    ks: np.ndarray
    values: np.ndarray
    alpha: float  # Im c1
    beta: float  # -Re c2
    residual: float  # relative l2 misfit of the quadratic fit
    remainder: np.ndarray  # lambda - (i alpha k - beta k^2)
    cubic_constant: float  # max |remainder| / k^3

    def row(self) -> dict:
        return {"label": self.label, "alpha": self.alpha, "beta": self.beta, "residual": self.residual}


def _near_zero(Mb: np.ndarray, qv: np.ndarray, count: int) -> tuple[np.ndarray, np.ndarray]:
    """Eigenpairs of (Mb - i diag(qv)) closest to zero."""
    Mc = Mb.astype(complex)
    Mc[np.diag_indices_from(Mc)] -= 1j * qv
    if Mc.shape[0] <= 600:
        lam, V = sla.eig(Mc)
        order = np.argsort(np.abs(lam))[:count]
        return lam[order], V[:, order]
    lam, V = eigs(Mc, k=count, sigma=0.0, which="LM", v0=np.ones(Mc.shape[0], dtype=Mc.dtype))
    order = np.argsort(np.abs(lam))
    return lam[order], V[:, order]


def branch_traces(ops: LinearOperators, direction, ks) -> dict[str, np.ndarray]:
    """Small-wavenumber eigenvalue traces continued from the 5 kernel directions.

    ``ks`` are physical wavenumbers |k|.  Each trace is attached to the
    parity block that contains its kernel vector at k = 0; inside a block
    traces are continued by nearest eigenvalue.
    """
    d = np.asarray(direction, dtype=float)
    d = d / np.linalg.norm(d)
    axes = parity_axes(d, 1e-14)
    pb = ops.blocks(axes)
    red = ops.reduced("L", axes)
    E = kernel_basis(ops.grid) * np.sqrt(ops.grid.w)
    # parity block of each kernel vector
    Eb = pb.to_blocks(E)  # (5, nb, nr)
    weight = np.sum(np.abs(Eb) ** 2, axis=-1)
    owner = np.argmax(weight, axis=1)
    counts = {b: int(np.sum(owner == b)) for b in set(owner.tolist())}
    traces: dict[int, list[list[complex]]] = {b: [[] for _ in range(c)] for b, c in counts.items()}
    for k in ks:
        for b, c in counts.items():
            qv = pb.diag(ops.grid.v @ (k * d))
            lam, _ = _near_zero(red[b], qv, c + 2)
            lam = lam[:c] if not traces[b][0] else lam
            if not traces[b][0]:
                lam = lam[np.argsort(-lam.imag)]
                for j in range(c):
                    traces[b][j].append(lam[j])
                continue
            used = set()
            for j in range(c):
                prev = traces[b][j][-1]
                cand = [i for i in range(len(lam)) if i not in used]
                i = min(cand, key=lambda i: abs(lam[i] - prev))
                used.add(i)
                traces[b][j].append(lam[i])
    out = {}
    for b, trs in traces.items():
        for j, tr in enumerate(trs):
            out[f"block{b}_{j}"] = np.array(tr)
    return out


def _label_traces(traces: dict[str, np.ndarray], ks: np.ndarray) -> dict[str, np.ndarray]:
    """Name traces acoustic+/acoustic-/shear/thermal from their imaginary slope and block."""
    named = {}
    shear = 0
    for key, tr in traces.items():
        slope = np.polyfit(ks, tr.imag, 1)[0]
        if abs(slope) > 1e-3:
            named["acoustic+" if slope > 0 else "acoustic-"] = tr
        else:
            named[key] = tr
    rest = [k for k in named if k.startswith("block")]
    # thermal shares the block of the acoustic pair; shear sits alone or in pairs
    ac_block = None
    for key, tr in traces.items():
        if np.any([tr is named.get(a) for a in ("acoustic+", "acoustic-")]):
            ac_block = key.split("_")[0]
    final = {k: v for k, v in named.items() if not k.startswith("block")}
    for key in rest:
        if key.split("_")[0] == ac_block:
            final["thermal"] = named[key]
        else:
            shear += 1
            final[f"shear{shear}"] = named[key]
    return final


def fit_branch(label: str, ks: np.ndarray, lam: np.ndarray) -> BranchFit:
    ks = np.asarray(ks, dtype=float)
    V = np.vander(ks, 3, increasing=True)
    coef, *_ = np.linalg.lstsq(V.astype(complex), lam, rcond=None)
    fitted = V @ coef
    residual = float(np.linalg.norm(lam - fitted) / np.linalg.norm(lam))
    alpha = float(coef[1].imag)
    beta = float(-coef[2].real)
    remainder = lam - (1j * alpha * ks - beta * ks**2)
    cubic = float(np.max(np.abs(remainder) / ks**3))
    return BranchFit(label, ks, lam, alpha, beta, residual, remainder, cubic)


def branch_fit(ops: LinearOperators, direction=(1.0, 0.0, 0.0), ks=None) -> list[BranchFit]:
    """Fits of the 5 small-wavenumber branches along ``direction``.

    ``ks`` are physical wavenumbers (default 8 samples in (0, 0.3]).
    """
    ks = np.linspace(0.3 / 8, 0.3, 8) if ks is None else np.asarray(ks, dtype=float)
    if np.any(ks <= 0):
        raise ValueError("wavenumber samples must be positive")
    traces = _label_traces(branch_traces(ops, direction, ks), ks)
    if len(traces) != 5:
        raise RuntimeError(f"expected 5 branch traces, found {sorted(traces)}")
    return [fit_branch(lbl, ks, tr) for lbl, tr in sorted(traces.items())]


# ----- projectors -------------------------------------------------------------------


@dataclass
class BranchProjector:
    """Spectral projector of one eigenvalue cluster, stored as P = V W^T (rank r)."""

    label: str
    eigenvalues: np.ndarray
    V: np.ndarray  # (n, r)
    W: np.ndarray  # (n, r)

    def apply(self, f: np.ndarray) -> np.ndarray:
        return (f @ self.W) @ self.V.T

    def dense(self) -> np.ndarray:
        return self.V @ self.W.T


def eig_projectors(ops: LinearOperators, q, cluster_tol: float = 1e-8) -> list[BranchProjector]:
    """Projectors onto the 5 eigenvalues of (L - i q.v) nearest zero.

    Eigenvalues closer than ``cluster_tol`` are merged into one projector.
    """
    q = np.asarray(q, dtype=float)
    grid = ops.grid
    axes = parity_axes(q, 1e-14)
    pb = ops.blocks(axes)
    red = ops.reduced("L", axes)
    E = kernel_basis(grid) * np.sqrt(grid.w)
    owner = np.argmax(np.sum(np.abs(pb.to_blocks(E)) ** 2, axis=-1), axis=1)
    qv = pb.diag(grid.v @ q)
    out = []
    for b in sorted(set(owner.tolist())):
        c = int(np.sum(owner == b))
        lam, V = _near_zero(red[b], qv, c)
        # group near-equal eigenvalues
        groups: list[list[int]] = []
        for i in range(c):
            for gidx in groups:
                if abs(lam[i] - lam[gidx[0]]) < cluster_tol * max(1.0, abs(lam[i])):
                    gidx.append(i)
                    break
            else:
                groups.append([i])
        for gidx in groups:
            Vb = V[:, gidx]
            Wb = Vb @ np.linalg.inv(Vb.T @ Vb)  # complex-symmetric biorthogonal partner
            coefV = np.zeros((pb.n_blocks, pb.size, len(gidx)), dtype=complex)
            coefW = np.zeros_like(coefV)
            coefV[b] = Vb
            coefW[b] = Wb
            Vfull = pb.from_blocks(np.moveaxis(coefV, -1, 0)).T
            Wfull = pb.from_blocks(np.moveaxis(coefW, -1, 0)).T
            out.append(BranchProjector(f"block{b}", lam[gidx], Vfull, Wfull))
    return out


def _name_projectors(projs: list[BranchProjector]) -> list[BranchProjector]:
    """Attach acoustic/shear/thermal labels (eigenvalues at small |q|)."""
    ac_blocks = {p.label for p in projs if abs(p.eigenvalues[0].imag) > 1e-12}
    shear = 0
    for p in projs:
        lam = p.eigenvalues[0]
        if abs(lam.imag) > 1e-12:
            p.label = "acoustic+" if lam.imag > 0 else "acoustic-"
        elif p.label in ac_blocks:
            p.label = "thermal"
        else:
            shear += 1
            p.label = f"shear{shear}"
    return projs


def limit_projectors(ops: LinearOperators, direction, k0: float = 1e-3) -> dict[str, np.ndarray]:
    """Dense k -> 0 limits of the branch projectors along ``direction``.

    Richardson extrapolation 2 P(k0) - P(2 k0); shear projectors are summed.
    """
    d = np.asarray(direction, dtype=float)
    d = d / np.linalg.norm(d)
    out: dict[str, np.ndarray] = {}
    for fac, wgt in ((1.0, 2.0), (2.0, -1.0)):
        for p in _name_projectors(eig_projectors(ops, fac * k0 * d)):
            key = "shear" if p.label.startswith("shear") else p.label
            out[key] = out.get(key, 0.0) + wgt * p.dense()
    return out


# ----- semigroups -------------------------------------------------------------------


def canonical_wavevector(q: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Representative of q under signed axis permutations: sorted |q_a| descending.

    Returns (qc, order, signs) with q[order[j]] = signs[j] qc[j].
    """
    q = np.asarray(q, dtype=float)
    order = np.argsort(-np.abs(q), kind="stable")
    qc = np.abs(q[order])
    signs = np.where(q[order] < 0, -1, 1)
    return qc, order, signs


def node_map(grid: VelocityGrid, order: np.ndarray, signs: np.ndarray) -> np.ndarray:
    """Index q[n] of the node w(v_n) with w_j = signs[j] v[order[j]].

    For a collision matrix invariant under signed axis permutations the
    per-mode operator at q satisfies Lambda(q)[n, m] = Lambda(qc)[q[n], q[m]].
    """
    N = grid.N
    ijk = np.indices(grid.shape).reshape(3, -1)
    new = []
    for j in range(3):
        c = ijk[order[j]]
        new.append(c if signs[j] > 0 else N - 1 - c)
    return np.ravel_multi_index(tuple(new), grid.shape)


class SemigroupCache:
    """Eigendecompositions of (M - i eps k.v), shared across modes related by
    signed velocity-axis permutations (including k -> -k)."""

    def __init__(self, ops: LinearOperators, eps: float, which: str = "L"):
        self.ops = ops
        self.eps = eps
        self.which = which
        self._spec: dict[tuple, ModeSpectrum] = {}
        self._maps: dict[tuple, tuple[tuple, np.ndarray]] = {}

    def lookup(self, k: np.ndarray) -> tuple[ModeSpectrum, np.ndarray]:
        """Spectrum of the canonical representative of eps*k and the node map."""
        key = tuple(np.round(np.asarray(k, float) * self.eps, 12))
        if key not in self._maps:
            qc, order, signs = canonical_wavevector(self.eps * np.asarray(k, float))
            ckey = tuple(np.round(qc, 12))
            self._maps[key] = (ckey, node_map(self.ops.grid, order, signs))
            if ckey not in self._spec:
                self._spec[ckey] = mode_spectrum(self.ops, qc, self.which)
        ckey, qmap = self._maps[key]
        return self._spec[ckey], qmap

    def coords(self, k: np.ndarray, f: np.ndarray) -> tuple[ModeSpectrum, np.ndarray, list[np.ndarray]]:
        spec, qmap = self.lookup(k)
        ft = np.empty_like(np.asarray(f, dtype=complex))
        ft[..., qmap] = f
        c = spec.blocks.to_blocks(ft)
        return spec, qmap, [c[..., b, :] @ spec.inv[b].T for b in range(spec.blocks.n_blocks)]

    def synth(self, spec: ModeSpectrum, qmap: np.ndarray, coef: list[np.ndarray]) -> np.ndarray:
        out = np.stack([coef[b] @ spec.vecs[b].T for b in range(len(coef))], axis=-2)
        r = spec.blocks.from_blocks(out)
        return r[..., qmap]

    def scaled_eigenvalues(self, spec: ModeSpectrum) -> list[np.ndarray]:
        """Eigenvalues of the eps-scaled operator (divided by eps^2)."""
        return [lam / self.eps**2 for lam in spec.evals]

    def apply_k(self, fn, k: np.ndarray, f: np.ndarray) -> np.ndarray:
        """fn(Lambda_hat_eps) f at physical wavevector k, fn acting on scaled eigenvalues."""
        spec, qmap, c = self.coords(k, f)
        lam = self.scaled_eigenvalues(spec)
        return self.synth(spec, qmap, [c[b] * fn(lam[b]) for b in range(len(c))])

    def apply(self, fn, lattice, values: np.ndarray) -> np.ndarray:
        out = np.empty_like(values, dtype=complex)
        for p in range(lattice.size):
            out[p] = self.apply_k(fn, lattice.wavevectors[p], values[p])
        return out


def semigroup_apply(t: float, eps: float, which: str, g: KineticField, ops: LinearOperators, cache: SemigroupCache | None = None) -> KineticField:
    """exp(t Lambda_hat) per mode for U_eps (which='U_eps') or S_B (which='S_B')."""
    if t < 0:
        raise ValueError("t must be non-negative")
    mat = {"U_eps": "L", "S_B": "B"}[which]
    if cache is None or cache.eps != eps or cache.which != mat:
        cache = SemigroupCache(ops, eps, mat)
    if t == 0:
        return g.copy()
    return g.with_values(cache.apply(lambda lam: np.exp(t * lam), g.lattice, g.values))


# ----- Duhamel iterates ----------------------------------------------------------------


@dataclass
class DuhamelReport:
    V: list[np.ndarray]
    U: np.ndarray
    remainder: np.ndarray
    residual: float


def duhamel_iterates(ops: LinearOperators, xi, n: int, t: float, eps: float, physical: bool = False) -> DuhamelReport:
    """V_0 = S_B, V_{j+1} = S_B * (A/eps^2) V_j at one mode, and the splitting identity.

    The iterated convolutions are read off the exponential of a block upper
    bidiagonal matrix (B on the diagonal, A/eps^2 above), which evaluates them
    exactly instead of by quadrature in s.  The residual is
    |U - sum V_j - V_n * (A/eps^2) U| / |U| in the spectral norm.
    """
    if not 0 <= n <= 3:
        raise ValueError("n must be in 0..3")
    if t < 0:
        raise ValueError("t must be non-negative")
    Bh = assemble_Lambda_hat(ops, xi, eps, "B", physical)
    Lh = assemble_Lambda_hat(ops, xi, eps, "L", physical)
    Ah = ops.A / eps**2
    m = Bh.shape[0]
    nb = n + 2
    T = np.zeros((nb * m, nb * m), dtype=complex)
    for j in range(n + 1):
        T[j * m : (j + 1) * m, j * m : (j + 1) * m] = Bh
        T[j * m : (j + 1) * m, (j + 1) * m : (j + 2) * m] = Ah
    T[(n + 1) * m :, (n + 1) * m :] = Lh
    E = sla.expm(t * T)
    V = [E[:m, j * m : (j + 1) * m] for j in range(n + 1)]
    # (0, n+1) block: iterated convolution ending with U
    rem = E[:m, (n + 1) * m :]
    U = sla.expm(t * Lh)
    resid = U - sum(V) - rem
    scale = np.linalg.norm(U, 2)
    return DuhamelReport(V, U, rem, float(np.linalg.norm(resid, 2) / scale))


# ----- limit semigroup -------------------------------------------------------------------


@dataclass
class LimitSemigroup:
    """The eps-free semigroup built from the shear and thermal branches."""

    lattice: object
    grid: VelocityGrid
    beta: dict[str, float]
    projectors: dict[int, dict[str, np.ndarray]]

    def apply(self, t: float, g0: KineticField) -> KineticField:
        out = np.zeros_like(g0.values)
        lat = self.lattice
        P = kernel_basis(self.grid)
        for p in range(lat.size):
            if p == lat.zero:
                out[p] = (self.grid.w * g0.values[p] @ P.T) @ P
                continue
            if p not in self.projectors:
                raise KeyError(f"no branch data for mode {tuple(lat.modes[p])}")
            k2 = lat.k2[p]
            acc = 0.0
            for lbl in ("shear", "thermal"):
                acc = acc + np.exp(-self.beta[lbl] * t * k2) * (self.projectors[p][lbl] @ g0.values[p])
            out[p] = acc
        return g0.with_values(out)


def build_limit_semigroup(ops: LinearOperators, lattice, fits: list[BranchFit] | None = None) -> LimitSemigroup:
    """Branch rates from ``fits`` (or a fresh fit along e1) and limit projectors per mode."""
    fits = fits if fits is not None else branch_fit(ops)
    beta = {
        "shear": float(np.mean([f.beta for f in fits if f.label.startswith("shear")])),
        "thermal": float(next(f.beta for f in fits if f.label == "thermal")),
    }
    projs: dict[int, dict[str, np.ndarray]] = {}
    cache: dict[tuple, dict[str, np.ndarray]] = {}
    for p in range(lattice.size):
        if p == lattice.zero:
            continue
        d = lattice.wavevectors[p] / np.sqrt(lattice.k2[p])
        key = tuple(np.round(d, 12))
        if key not in cache:
            cache[key] = limit_projectors(ops, d)
        projs[p] = cache[key]
    return LimitSemigroup(lattice, ops.grid, beta, projs)


def limit_semigroup_apply(t: float, g0: KineticField, limit: LimitSemigroup) -> KineticField:
    if t < 0:
        raise ValueError("t must be non-negative")
    return limit.apply(t, g0)


# ----- rate fitting -------------------------------------------------------------------------


@dataclass
class RateFit:
    model: str
    C: float
    p: float
    sigma: float
    window: tuple[float, float]
    residual: float
    t: np.ndarray
    values: np.ndarray


def fit_rate(t, values, model: str = "exp", window: tuple[float, float] | None = None) -> RateFit:
    """Least squares in log coordinates for log v = log C + p log t - sigma t.

    ``model`` selects the free parameters: 'exp' (C, sigma), 'power' (C, p)
    or 'power_times_exp' (C, p, sigma).
    """
    t = np.asarray(t, dtype=float)
    v = np.asarray(values, dtype=float)
    if window is not None:
        keep = (t >= window[0]) & (t <= window[1])
        t, v = t[keep], v[keep]
    if t.size < 8:
        raise ValueError(f"need at least 8 samples, got {t.size}")
    if np.any(v <= 0):
        raise ValueError("rate fitting needs positive samples")
    y = np.log(v)
    if model not in ("exp", "power", "power_times_exp"):
        raise ValueError("model must be 'exp', 'power' or 'power_times_exp'")
    if model != "exp" and np.any(t <= 0):
        raise ValueError("power models need t > 0")
    cols = {"exp": lambda: [np.ones_like(t), -t], "power": lambda: [np.ones_like(t), np.log(t)],
            "power_times_exp": lambda: [np.ones_like(t), np.log(t), -t]}
    X = np.stack(cols[model](), axis=1)
    coef, *_ = np.linalg.lstsq(X, y, rcond=None)
    res = float(np.sqrt(np.mean((X @ coef - y) ** 2)))
    C = float(np.exp(coef[0]))
    if model == "exp":
        p, sigma = 0.0, float(coef[1])
    elif model == "power":
        p, sigma = float(coef[1]), 0.0
    else:
        p, sigma = float(coef[1]), float(coef[2])
    win = window if window is not None else (float(t.min()), float(t.max()))
    return RateFit(model, C, p, sigma, win, res, t, v)


# ----- mode-wise operator norms -----------------------------------------------------------


def _weight_exponent(grid: VelocityGrid) -> float:
    return grid.gamma / 2 + 1


def mode_gram_apply(grid: VelocityGrid, B: np.ndarray, k2: float, norm: str, f: np.ndarray) -> np.ndarray:
    """G f with f^H G f the squared X or Y1 norm of a single-mode field f e^{2 pi i xi.x}."""
    s = _weight_exponent(grid)
    br = grid.bracket
    out = np.zeros_like(f, dtype=complex)
    for i in range(4):
        D = br ** ((3 - i) * s)
        u = D * f
        if norm == "X":
            Gu = u
        elif norm == "Y1":
            Gu = br ** (2 * s) * u + grad_tilde_v_adjoint(grad_tilde_v(u, B, grid), B, grid)
        else:
            raise ValueError("norm must be 'X' or 'Y1'")
        out += k2**i * D * Gu
    return grid.w * out


def regularization_norm(ops: LinearOperators, k, eps: float, t: float, which: str = "U_eps",
                        target: str = "Y1", cache: SemigroupCache | None = None, remove_pi: bool = True) -> float:
    """Operator norm of exp(t Lambda_hat)(Id - pi) from X to ``target`` at wavevector k.

    The largest eigenvalue of W^-1 P E^H G E P W^-1 is found by Lanczos,
    with W the (diagonal) X weight, P = Id - pi and E^H = conj(E) because the
    per-mode operator is complex symmetric.
    """
    from scipy.sparse.linalg import LinearOperator, eigsh

    grid = ops.grid
    B = ops.coll.tables.B
    k = np.asarray(k, dtype=float)
    k2 = float(k @ k)
    mat = {"U_eps": "L", "S_B": "B"}[which]
    cache = cache if cache is not None and cache.eps == eps and cache.which == mat else SemigroupCache(ops, eps, mat)
    wX = np.sqrt(np.real(mode_gram_apply(grid, B, k2, "X", np.ones(grid.n)) / grid.w) * grid.w)
    E = kernel_basis(grid) * np.sqrt(grid.w)

    def proj(x):
        return x - (x @ E.T) @ E if remove_pi else x

    def mv(x):
        y = proj(np.asarray(x, complex).ravel() / wX)
        z = cache.apply_k(lambda lam: np.exp(t * lam), k, y)
        z = mode_gram_apply(grid, B, k2, target, z)
        z = np.conj(cache.apply_k(lambda lam: np.exp(t * lam), k, np.conj(z)))
        return proj(z) / wX

    op = LinearOperator((grid.n, grid.n), matvec=mv, dtype=complex)
    val = eigsh(op, k=1, which="LA", tol=1e-8, v0=np.ones(grid.n, complex),
                return_eigenvectors=False)
    return float(np.sqrt(max(val[0].real, 0.0)))
