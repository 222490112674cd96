"""Time integration of the rescaled perturbation equation

    d_t g + (1/eps) v.grad_x g = (1/eps^2) L g + (1/eps) Gamma(g, g),

the Duhamel bilinear operator and trajectory diagnostics.

The linear part is treated per Fourier mode (implicitly for BDF1 and
Crank-Nicolson, exactly for the exponential scheme); Gamma is evaluated
at collocation points in x on a grid that holds quadratic products without
aliasing, then truncated back to the lattice.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
from scipy.integrate import trapezoid

from .calculus import KineticField, SpatialLattice, from_physical, to_physical
from .micromacro import micro_part, moment_weights, pi_velocity
from .norms import inner_X, norm_X, norm_Y1, norm_Y2, grad_tilde_x_values, _vec_inner_X
from .calculus import grad_tilde_v
from .spectral import LinearOperators, SemigroupCache, canonical_wavevector, node_map

log = logging.getLogger(__name__)

SCHEMES = ("bdf1", "cn", "etd2", "etdrk2")


# ----- nonlinear term ----------------------------------------------------------


def gamma_field(ops: LinearOperators, f1: KineticField, f2: KineticField, project: bool = True) -> KineticField:
    """Gamma(f1, f2) per lattice mode via products at collocation points.

    With ``project`` the result is made exactly orthogonal to the collision
    invariants, as the continuous operator is.
    """
    lat = f1.lattice
    coll = ops.coll
    if lat.dim == 0:
        vals = coll.Gamma(f1.values, f2.values)
    else:
        a = to_physical(f1.values, lat)
        b = to_physical(f2.values, lat) if f2 is not f1 else a
        real = f1.is_real() and f2.is_real()
        if real:
            a, b = a.real, b.real
            G = coll.Gamma(a, b)
        else:
            G = coll.Gamma(a.real, b.real) - coll.Gamma(a.imag, b.imag)
            G = G + 1j * (coll.Gamma(a.real, b.imag) + coll.Gamma(a.imag, b.real))
        vals = from_physical(G, lat)
    if project:
        vals = vals - pi_velocity(vals, f1.grid)
    return f1.with_values(vals)


def _phi1(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=complex)
    small = np.abs(z) < 1e-2
    zs = np.where(small, 1.0, z)
    out = np.expm1(zs) / zs
    ser = 1 + z / 2 + z**2 / 6 + z**3 / 24 + z**4 / 120 + z**5 / 720
    return np.where(small, ser, out)


def _phi2(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=complex)
    small = np.abs(z) < 1e-2
    zs = np.where(small, 1.0, z)
    out = (np.expm1(zs) - zs) / zs**2
    ser = 0.5 + z / 6 + z**2 / 24 + z**3 / 120 + z**4 / 720 + z**5 / 5040
    return np.where(small, ser, out)


# ----- stepping -------------------------------------------------------------------


class StepFailure(RuntimeError):
    """Raised on NaNs or blow-up; carries the last good state."""

    def __init__(self, msg: str, state: KineticField | None = None, t: float | None = None):
        super().__init__(msg)
        self.state = state
        self.t = t


class KineticStepper:
    """Fixed-step integrator for one (lattice, eps, dt, scheme).

    Linear factorisations (LU pencils or eigendecompositions) are computed
    once per canonical wavevector and shared by modes related through signed
    axis permutations.
    """

    def __init__(self, ops: LinearOperators, lattice: SpatialLattice, eps: float, dt: float,
                 scheme: str = "bdf1", nonlinear: bool = True, dt_max: float = 0.05, c_dt: float = 0.1):
        if scheme not in SCHEMES:
            raise ValueError(f"scheme must be one of {SCHEMES}")
        if dt <= 0:
            raise ValueError("dt must be positive")
        cap = min(dt_max, c_dt * eps)
        if dt > cap * (1 + 1e-12):
            raise ValueError(f"dt={dt} exceeds min(dt_max, c*eps)={cap}")
        self.ops, self.lattice, self.eps, self.dt = ops, lattice, eps, dt
        self.scheme, self.nonlinear = scheme, nonlinear
        self.grid = ops.grid
        self._lu: dict[tuple, tuple] = {}
        self._maps: dict[int, tuple[tuple, np.ndarray]] = {}
        self.cache = SemigroupCache(ops, eps, "L") if scheme.startswith("etd") else None
        self._prev_N: np.ndarray | None = None

    # per-mode linear algebra
    def _canon(self, p: int) -> tuple[tuple, np.ndarray]:
        if p not in self._maps:
            qc, order, signs = canonical_wavevector(self.lattice.modes[p].astype(float))
            self._maps[p] = (tuple(qc), node_map(self.grid, order, signs))
        return self._maps[p]

    def _Lambda(self, qc: tuple) -> np.ndarray:
        k = 2 * np.pi * np.asarray(qc)
        M = self.ops.L.astype(complex)
        M[np.diag_indices_from(M)] -= 1j * self.eps * (self.grid.v @ k)
        return M / self.eps**2

    def _factor(self, qc: tuple):
        if qc not in self._lu:
            Lam = self._Lambda(qc)
            n = Lam.shape[0]
            theta = 1.0 if self.scheme == "bdf1" else 0.5
            lhs = np.eye(n) - theta * self.dt * Lam
            lu = sla.lu_factor(lhs, check_finite=False)
            piv = np.abs(np.diag(lu[0]))
            if not np.all(np.isfinite(piv)) or piv.min() < 1e-14 * piv.max():
                raise np.linalg.LinAlgError(f"singular step matrix at mode {qc}")
            self._lu[qc] = (lu, Lam if self.scheme == "cn" else None)
        return self._lu[qc]

    def apply_Lambda(self, values: np.ndarray) -> np.ndarray:
        """Lambda_hat g on every mode (values (modes, n))."""
        L = self.ops.L
        k = self.lattice.wavevectors
        tr = (k @ self.grid.v.T) * values
        return (values @ L.T - 1j * self.eps * tr) / self.eps**2

    def _solve(self, p: int, rhs: np.ndarray) -> np.ndarray:
        qc, qmap = self._canon(p)
        lu, _ = self._factor(qc)
        r = np.empty_like(rhs)
        r[qmap] = rhs
        return sla.lu_solve(lu, r, check_finite=False)[qmap]

    def nonlinear_term(self, g: KineticField) -> np.ndarray:
        if not self.nonlinear:
            return np.zeros_like(g.values)
        return gamma_field(self.ops, g, g).values / self.eps

    def _etd(self, values: np.ndarray, N0: np.ndarray, N1: np.ndarray) -> np.ndarray:
        """exp(dt Lambda) values + dt phi1(dt Lambda) N0 + dt phi2(dt Lambda) N1, mode by mode."""
        dt, cache = self.dt, self.cache
        out = np.empty_like(values)
        for p in range(self.lattice.size):
            k = self.lattice.wavevectors[p]
            spec, qmap, cg = cache.coords(k, values[p])
            _, _, c0 = cache.coords(k, N0[p])
            _, _, c1 = cache.coords(k, N1[p])
            lam = cache.scaled_eigenvalues(spec)
            coef = []
            for b in range(len(cg)):
                z = dt * lam[b]
                coef.append(np.exp(z) * cg[b] + dt * _phi1(z) * c0[b] + dt * _phi2(z) * c1[b])
            out[p] = cache.synth(spec, qmap, coef)
        return out

    def step(self, g: KineticField) -> KineticField:
        dt = self.dt
        N = self.nonlinear_term(g)
        if self.scheme == "bdf1":
            rhs = g.values + dt * N
            out = np.stack([self._solve(p, rhs[p]) for p in range(self.lattice.size)])
        elif self.scheme == "cn":
            Next = N if self._prev_N is None else 1.5 * N - 0.5 * self._prev_N
            rhs = g.values + 0.5 * dt * self.apply_Lambda(g.values) + dt * Next
            out = np.stack([self._solve(p, rhs[p]) for p in range(self.lattice.size)])
        elif self.scheme == "etd2":
            dN = np.zeros_like(N) if self._prev_N is None else N - self._prev_N
            out = self._etd(g.values, N, dN)
        else:
            # single-step predictor-corrector: the forcing is re-evaluated at the predicted state
            pred = self._etd(g.values, N, np.zeros_like(N))
            out = pred + self._etd(np.zeros_like(N), np.zeros_like(N),
                                   self.nonlinear_term(g.with_values(pred)) - N)
        self._prev_N = N
        if not np.all(np.isfinite(out)):
            raise StepFailure("non-finite values after step", g)
        return g.with_values(out)


def step_imex(g: KineticField, dt: float, eps: float, ops: LinearOperators, scheme: str = "bdf1",
              stepper: KineticStepper | None = None) -> KineticField:
    """One step of the chosen scheme (a fresh stepper is built if none is given)."""
    if stepper is None:
        stepper = KineticStepper(ops, g.lattice, eps, dt, scheme)
    return stepper.step(g)


# ----- trajectories ---------------------------------------------------------------------


@dataclass
class Trajectory:
    """Time stamps, strided snapshots and per-step diagnostic series."""

    eps: float
    dt: float
    scheme: str
    t: np.ndarray
    snap_t: np.ndarray
    snapshots: list[KineticField]
    series: dict[str, np.ndarray] = field(default_factory=dict)
    report: dict[str, float] = field(default_factory=dict)

    def at(self, t: float) -> KineticField:
        i = int(np.argmin(np.abs(self.snap_t - t)))
        if abs(self.snap_t[i] - t) > 1e-9 * max(1.0, abs(t)):
            raise KeyError(f"no snapshot at t={t}")
        return self.snapshots[i]


def _mean_moments(g: KineticField) -> np.ndarray:
    z = g.lattice.zero
    return g.grid.w * moment_weights(g.grid) @ g.values[z]


def diagnostics(g: KineticField, B: np.ndarray, record: tuple[str, ...]) -> dict[str, float]:
    out = {}
    if "X" in record:
        out["X"] = norm_X(g)
    if "Y1" in record:
        out["Y1"] = norm_Y1(g, B)
    if "micro_Y1" in record:
        out["micro_Y1"] = norm_Y1(micro_part(g), B)
    if "moments" in record:
        out["mean_moments"] = float(np.max(np.abs(_mean_moments(g))))
    return out


def run_trajectory(g_in: KineticField, eps: float, T: float, ops: LinearOperators, scheme: str = "bdf1",
                   dt: float | None = None, record: tuple[str, ...] = ("X", "Y1", "micro_Y1", "moments"),
                   stride: int = 10, sigma: float = 0.05, eta0: float | None = None, nonlinear: bool = True,
                   dt_max: float = 0.05, c_dt: float = 0.1, blowup: float = 1e6,
                   stepper: KineticStepper | None = None) -> Trajectory:
    """Integrate to time T and collect diagnostics after every step.

    The report holds sup_t e^{2 sigma t}|g|_X^2, the time integral of
    e^{2 sigma t}(|g_perp|_{Y1}^2/eps^2 + |g|_{Y1}^2) (trapezoid rule) and the
    monitored sum sup + (1/eps^2) int e^{2 sigma t}|g_perp|_{Y1}^2.
    """
    if T < 0:
        raise ValueError("T must be non-negative")
    cap = min(dt_max, c_dt * eps)
    dt = cap if dt is None else dt
    steps = max(1, int(np.ceil(T / dt - 1e-9))) if T > 0 else 0
    h = T / steps if steps else dt
    stepper = stepper or KineticStepper(ops, g_in.lattice, eps, h, scheme, nonlinear, dt_max, c_dt)
    B = ops.coll.tables.B
    n0 = norm_X(g_in)
    if eta0 is not None and n0 > eta0:
        warnings.warn(f"|g_in|_X = {n0:.3e} above the smallness level {eta0}", RuntimeWarning)
    g = g_in.copy()
    ts = [0.0]
    snaps_t, snaps = [0.0], [g.copy()]
    rows = [diagnostics(g, B, record)]
    for n in range(1, steps + 1):
        try:
            g = stepper.step(g)
        except StepFailure as exc:
            exc.t = ts[-1]
            raise
        ts.append(n * h)
        d = diagnostics(g, B, record)
        rows.append(d)
        if "X" in d and n0 > 0 and d["X"] > blowup * n0:
            raise StepFailure(f"norm growth above {blowup:.0e} at t={n * h:.4g}", g, n * h)
        if n % stride == 0 or n == steps:
            snaps_t.append(n * h)
            snaps.append(g.copy())
    t = np.array(ts)
    series = {k: np.array([r[k] for r in rows]) for k in rows[0]}
    traj = Trajectory(eps, h, scheme, t, np.array(snaps_t), snaps, series)
    if "X" in series:
        wt = np.exp(2 * sigma * t)
        sup = float(np.max(wt * series["X"] ** 2))
        rep = {"sup_weighted_X2": sup, "g_in_X2": n0**2}
        if "micro_Y1" in series and len(t) > 1:
            micro = float(trapezoid(wt * series["micro_Y1"] ** 2, t))
            rep["int_weighted_micro_Y1"] = micro
            rep["int_micro_Y1_unweighted"] = float(trapezoid(series["micro_Y1"] ** 2, t))
            rep["monitored"] = sup + micro / eps**2
            rep["constant"] = rep["monitored"] / n0**2 if n0 > 0 else 0.0
            if "Y1" in series:
                full = float(trapezoid(wt * series["Y1"] ** 2, t))
                rep["int_weighted_dissipation"] = micro / eps**2 + full
        if "mean_moments" in series:
            rep["moment_drift"] = float(np.max(np.abs(series["mean_moments"] - series["mean_moments"][0])))
        traj.report = rep
    return traj


# ----- Duhamel bilinear operator ------------------------------------------------------------


def psi_eps_apply(T: float, eps: float, traj1: Trajectory, traj2: Trajectory, ops: LinearOperators,
                  cache: SemigroupCache | None = None) -> KineticField:
    """(1/eps) int_0^T U_eps(T-s) Gamma(f1(s), f2(s)) ds from snapshots.

    Gamma is sampled at the snapshot times in [0, T] and interpolated
    linearly in s; each piece is integrated exactly against the semigroup
    through phi-functions of the per-mode eigenvalues.
    """
    t1, t2 = traj1.snap_t, traj2.snap_t
    if len(t1) != len(t2) or np.max(np.abs(t1 - t2)) > 1e-12:
        raise ValueError("trajectories have mismatched snapshot grids")
    ref = traj1.snapshots[0]
    if T == 0:
        return ref.with_values(np.zeros_like(ref.values))
    keep = t1 <= T + 1e-12
    s = t1[keep]
    if abs(s[-1] - T) > 1e-9 * max(1.0, T):
        raise ValueError(f"T={T} is not a snapshot time")
    cache = cache if cache is not None and cache.eps == eps and cache.which == "L" else SemigroupCache(ops, eps, "L")
    G = [gamma_field(ops, traj1.snapshots[i], traj2.snapshots[i]).values / eps for i in range(len(s))]
    lat = ref.lattice
    out = np.empty_like(ref.values)
    for p in range(lat.size):
        k = lat.wavevectors[p]
        spec = None
        cs = []
        for Gi in G:
            spec, qmap, c = cache.coords(k, Gi[p])
            cs.append(c)
        lam = cache.scaled_eigenvalues(spec)
        acc = [np.zeros_like(cs[0][b]) for b in range(len(lam))]
        for i in range(len(s) - 1):
            d = s[i + 1] - s[i]
            for b in range(len(lam)):
                z = d * lam[b]
                decay = np.exp((T - s[i + 1]) * lam[b])
                # e^{(T-s_{i+1})L} [d phi1 G_i + d phi2 (G_{i+1} - G_i)]
                acc[b] += decay * d * (_phi1(z) * cs[i][b] + _phi2(z) * (cs[i + 1][b] - cs[i][b]))
        out[p] = cache.synth(spec, qmap, acc)
    return ref.with_values(out)


def duhamel_residual(traj: Trajectory, ops: LinearOperators, T: float | None = None,
                     cache: SemigroupCache | None = None) -> float:
    """|g(T) - U_eps(T) g_in - Psi_eps(T)(g, g)|_X / |g_in|_X."""
    T = traj.snap_t[-1] if T is None else T
    eps = traj.eps
    cache = cache or SemigroupCache(ops, eps, "L")
    g0 = traj.snapshots[0]
    lin = g0.with_values(cache.apply(lambda lam: np.exp(T * lam), g0.lattice, g0.values))
    psi = psi_eps_apply(T, eps, traj, traj, ops, cache)
    r = traj.at(T) - lin - psi
    return norm_X(r) / norm_X(g0)


# ----- bilinear ratio monitor ------------------------------------------------------------------


@dataclass
class BilinearReport:
    ratios: dict[str, np.ndarray]

    @property
    def max_ratio(self) -> float:
        vals = np.concatenate([v[np.isfinite(v)] for v in self.ratios.values()])
        return float(np.max(vals)) if vals.size else 0.0

    @property
    def finite(self) -> bool:
        return all(np.all(np.isfinite(v)) for v in self.ratios.values())


def _vec_norm_Y1(F: np.ndarray, ref: KineticField, B: np.ndarray) -> float:
    return float(np.sqrt(sum(norm_Y1(ref.with_values(F[i]), B) ** 2 for i in range(F.shape[0]))))


def bilinear_ratios(ops: LinearOperators, g1: KineticField, g2: KineticField, g3: KineticField,
                    alpha: float = 0.0) -> dict[str, float]:
    """Ratios of the four bilinear forms to their bounding products.

    gamma_X: <<v>^a Gamma(g1,g2), g3>_X / |g1|_X |<v>^a g2|_Y1 |g3|_Y1;
    gamma_XXX: |Gamma(g1,g2)|_X / (|g1|_X |g2|_Y2 + |g1|_Y1 |g2|_X);
    dv_gamma: <grad~_v Gamma, grad~_v g3>_X / ((|g1|_X|g2|_Y2 + |g1|_Y1|g2|_X) |grad~_v g3|_Y1);
    dx_gamma: <grad~_x Gamma, grad~_x g3>_X / ((|g1|_X|grad~_x g2|_Y1 + |grad~_x g1|_X|g2|_Y1 + |g1|_X|g2|_Y2) |grad~_x g3|_Y1).
    """
    B = ops.coll.tables.B
    grid = g1.grid
    G = gamma_field(ops, g1, g2, project=False)
    wa = grid.bracket**alpha
    nX1, nY1_1 = norm_X(g1), norm_Y1(g1, B)
    nX2, nY1_2, nY2_2 = norm_X(g2), norm_Y1(g2, B), norm_Y2(g2, B)
    out = {}
    den = nX1 * norm_Y1(g2.with_values(wa * g2.values), B) * norm_Y1(g3, B)
    out["gamma_X"] = abs(inner_X(G.with_values(wa * G.values), g3)) / den if den > 0 else 0.0
    den2 = nX1 * nY2_2 + nY1_1 * nX2
    out["gamma_XXX"] = norm_X(G) / den2 if den2 > 0 else 0.0
    gvG = np.moveaxis(grad_tilde_v(G.values, B, grid), -2, 0)
    gv3 = np.moveaxis(grad_tilde_v(g3.values, B, grid), -2, 0)
    den3 = den2 * _vec_norm_Y1(gv3, g3, B)
    out["dv_gamma"] = abs(_vec_inner_X(gvG, gv3, g3)) / den3 if den3 > 0 else 0.0
    gxG = grad_tilde_x_values(G, B)
    gx3 = grad_tilde_x_values(g3, B)
    gx1 = grad_tilde_x_values(g1, B)
    gx2 = grad_tilde_x_values(g2, B)
    nx1 = float(np.sqrt(max(_vec_inner_X(gx1, gx1, g1), 0.0)))
    den4 = (nX1 * _vec_norm_Y1(gx2, g2, B) + nx1 * nY1_2 + nX1 * nY2_2) * _vec_norm_Y1(gx3, g3, B)
    out["dx_gamma"] = abs(_vec_inner_X(gxG, gx3, g3)) / den4 if den4 > 0 else 0.0
    return out


def random_field(lattice: SpatialLattice, grid, rng: np.random.Generator, amplitude: float = 1.0,
                 decay: float = 1.0) -> KineticField:
    """Real random perturbation: sqrt(M)-weighted polynomial noise on every mode."""
    n_modes = lattice.size
    poly = rng.standard_normal((n_modes, 10))
    v = grid.v
    basis = np.stack([np.ones(grid.n), v[:, 0], v[:, 1], v[:, 2], v[:, 0] * v[:, 1], v[:, 1] * v[:, 2],
                      v[:, 0] * v[:, 2], v[:, 0] ** 2 - 1, v[:, 1] ** 2 - 1, grid.v2 - 3]) * grid.sqrtM
    c = (poly + 1j * rng.standard_normal((n_modes, 10))) @ basis
    c *= np.exp(-decay * np.sum(lattice.modes**2, axis=1))[:, None]
    vals = 0.5 * (c + np.conj(c[lattice.conj_index]))
    return KineticField(lattice, grid, amplitude * vals)


def monitor_bilinear_ratios(ops: LinearOperators, lattice: SpatialLattice, samples: int = 200,
                            seed: int = 0, triples=None) -> BilinearReport:
    """Ratio statistics over supplied triples or random smooth triples."""
    rng = np.random.default_rng(seed)
    if triples is None:
        triples = ((random_field(lattice, ops.grid, rng), random_field(lattice, ops.grid, rng),
                    random_field(lattice, ops.grid, rng)) for _ in range(samples))
    rows = [bilinear_ratios(ops, *tr) for tr in triples]
    return BilinearReport({k: np.array([r[k] for r in rows]) for k in rows[0]})
