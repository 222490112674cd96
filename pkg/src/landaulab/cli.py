"""Experiment driver: verification suites, spectral and decay studies and the
hydrodynamic-limit sweep, with CSV/JSON output.

Each ``exp_*`` function returns a result dictionary containing a list of
:class:`Verdict` objects under ``"verdicts"`` plus the raw series; the
``cmd_*`` functions wrap them with configuration handling and serialization.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from functools import lru_cache
from pathlib import Path

import numpy as np
import scipy.linalg as sla
from scipy.optimize import linear_sum_assignment

from .calculus import KineticField, SpatialLattice, VelocityGrid, grad_tilde_v
from .collision import Collision
from .dynamics import SCHEMES, KineticStepper, duhamel_residual, random_field, run_trajectory
from .fluid import compute_correctors, kinetic_lift, run_nsf, taylor_green, well_prepared_lift
from .micromacro import kernel_basis, micro_part, pi_project, projector_matrix, raw_invariants, remove_Pi
from .norms import LyapunovWeights, h1v_sq, hypo_inner_L2, lyapunov_E, lyapunov_U, norm_X
from .serialize import RunConfig, Verdict, set_threads, write_bin, write_csv, write_report
from .spectral import (LinearOperators, SemigroupCache, assemble_Lambda_hat, branch_fit, eig_projectors,
                       fit_rate, mode_spectrum, regularization_norm)

COMMANDS = ("check", "spectrum", "decay", "regrate", "viscosity", "hydro", "lyapunov", "bound")

# command-specific defaults layered under user configuration
DEFAULTS: dict[str, dict] = {
    "check": {"V": 8.0, "N": 16},
    "spectrum": {"gamma": 0.0},
    "viscosity": {},
    "decay": {"dx": 1, "K": 2, "eps": (1.0, 0.25, 0.05)},
    "regrate": {"dx": 1, "K": 2, "eps": (0.4, 0.2, 0.1)},
    "lyapunov": {"dx": 1, "K": 2, "eps": (0.25,), "T": 1.0, "amplitude": 0.01},
    "bound": {"dx": 2, "K": 2, "eps": (0.4, 0.2, 0.1), "T": 1.0, "amplitude": 0.002},
    "hydro": {"dx": 2, "K": 2, "eps": (0.4, 0.28, 0.2, 0.14, 0.1), "T": 1.0},
}


@lru_cache(maxsize=8)
def operators(gamma: float, V: float, N: int, R: float = 20.0, Rbar: float = 10.0) -> LinearOperators:
    """Assembled linear operators for one grid, shared within a process."""
    return LinearOperators(Collision(VelocityGrid(V, N, gamma), R=R, Rbar=Rbar))


def _ops(cfg: RunConfig, gamma: float | None = None) -> LinearOperators:
    return operators(float(cfg.gamma if gamma is None else gamma), float(cfg.V), int(cfg.N), cfg.R, cfg.Rbar)


def _weights(cfg: RunConfig) -> LyapunovWeights:
    if cfg.alpha is not None:
        return LyapunovWeights(*cfg.alpha, K=cfg.K_weight)
    return LyapunovWeights.from_eta(cfg.eta, cfg.K_weight)


# ----- structural identities --------------------------------------------------------


def _test_pair(grid: VelocityGrid, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Two smooth perturbations: random degree-2 polynomials times sqrt(M)."""
    basis = raw_invariants(grid) / grid.sqrtM  # 1, v, |v|^2
    v = grid.v
    extra = np.stack([v[:, 0] * v[:, 1], v[:, 1] * v[:, 2], v[:, 0] ** 2 - v[:, 2] ** 2])
    P = np.vstack([basis, extra])
    c = rng.standard_normal((2, P.shape[0]))
    return c[0] @ P * grid.sqrtM, c[1] @ P * grid.sqrtM


def _two_path(coll: Collision, g1: np.ndarray, g2: np.ndarray) -> float:
    """sqrt(M)-weighted relative difference between the literal and expanded Gamma."""
    s = coll.grid.sqrtM
    GA = coll.Gamma(g1, g2, "A")
    GB = coll.Gamma(g1, g2, "B")
    return float(np.linalg.norm(s * (GA - GB)) / np.linalg.norm(s * GB))


def exp_two_path(gamma: float, V: float, N: int, seed: int = 0, threshold: float = 1e-3) -> Verdict:
    """Gamma two-path agreement on a refined grid (kernel tables only, no dense L)."""
    coll = Collision(VelocityGrid(V, N, gamma))
    h1, h2 = _test_pair(coll.grid, np.random.default_rng(seed))
    tp = _two_path(coll, h1, h2)
    return Verdict(f"gamma_two_path_N{N}", tp, threshold, tp <= threshold)


def exp_structure(gamma: float, V: float = 8.0, N: int = 16, N_fine: int | None = 24, seed: int = 0,
                  corrupt_L: float = 0.0) -> dict:
    """Kernel dimension, Gamma two-path agreement, splittings, conservation, entropy, pi algebra.

    ``corrupt_L`` adds a rank-one symmetric perturbation to L_raw before the
    kernel test (fault injection: the suite must then report a failure).
    """
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    grid = VelocityGrid(V, N, gamma)
    coll = Collision(grid)
    out: list[Verdict] = []

    Lr = coll.L_raw.copy()
    if corrupt_L:
        e = kernel_basis(grid)[1] * np.sqrt(grid.w)
        Lr += corrupt_L * np.outer(e, e) * np.max(np.abs(Lr))
    sv = np.sort(np.abs(np.linalg.eigvalsh(Lr)))
    ratio = float(sv[5] / sv[4]) if sv[4] > 0 else np.inf
    out.append(Verdict("kernel_ratio", ratio, 1e3, ratio >= 1e3, f"s5={sv[4]:.3e} s6={sv[5]:.3e}"))

    g1, g2 = _test_pair(grid, rng)
    tp = _two_path(coll, g1, g2)
    out.append(Verdict(f"gamma_two_path_N{N}", tp, 1e-2, tp <= 1e-2))
    if N_fine:
        out.append(exp_two_path(gamma, V, N_fine, seed, 1e-3))

    L = coll.L
    A, B = coll.A_split(), coll.B_split()
    split_ab = float(np.max(np.abs(A + B - L)) / np.max(np.abs(L)))
    out.append(Verdict("split_A_plus_B", split_ab, 1e-10, split_ab <= 1e-10))
    f = rng.standard_normal((3, grid.n)) * grid.sqrtM
    lhs = 0.5 * (coll.L1_apply(f) + f @ coll.L1_matrix()) + f @ coll.L2
    rhs = f @ coll.L_raw
    split_12 = float(np.max(np.abs(lhs - rhs)) / np.max(np.abs(rhs)))
    out.append(Verdict("split_L1_plus_L2", split_12, 1e-10, split_12 <= 1e-10))

    E = raw_invariants(grid)
    G = coll.Gamma(g1, g2) + coll.Gamma(g2, g1)
    cons = float(np.max(np.abs(grid.w * E @ G)) / np.sqrt(grid.w * np.sum(G**2)))
    out.append(Verdict("conservation_gamma_sym", cons, 1e-6, cons <= 1e-6,
                       "invariant moments of Gamma(g1,g2)+Gamma(g2,g1) relative to |G|"))
    inv = float(np.max(np.abs(E @ L)) / (np.max(np.abs(L)) * np.max(np.linalg.norm(E, axis=1))))
    out.append(Verdict("conservation_L", inv, 1e-6, inv <= 1e-6))

    dmin = np.inf
    for _ in range(5):
        c = 0.2 * rng.standard_normal(4)
        v = grid.v
        F = grid.M * (1 + c[0] * v[:, 0] + c[1] * (v[:, 1] * v[:, 2]) + c[2] * np.cos(v[:, 2]) + c[3] * (grid.v2 - 3) / 5)
        F = np.maximum(F, 0.0)
        dmin = min(dmin, coll.entropy_dissipation(F))
    out.append(Verdict("entropy_dissipation_min", dmin, -1e-8, dmin >= -1e-8))

    P = projector_matrix(grid)
    W = grid.w * np.ones(grid.n)
    idem = float(np.max(np.abs(P @ P - P)))
    # pi is self-adjoint in the quadrature inner product
    selfadj = float(np.max(np.abs(W[:, None] * P - (W[:, None] * P).T)))
    out.append(Verdict("pi_idempotent", idem, 1e-10, idem <= 1e-10))
    out.append(Verdict("pi_self_adjoint", selfadj, 1e-10, selfadj <= 1e-10))
    runtime = time.perf_counter() - t0
    return {"gamma": gamma, "verdicts": out, "runtime": runtime,
            "kernel_singular_values": sv[:8], "diagnostics": dict(coll.diagnostics)}


def h1_gram(grid: VelocityGrid, B: np.ndarray) -> np.ndarray:
    """Dense Gram matrix of the squared H^1_{v,*} norm on node values."""
    T = grad_tilde_v(np.eye(grid.n), B, grid)  # (n, 3, n): component i of grad-tilde of e_j
    T = T.reshape(grid.n, -1)
    s = grid.gamma / 2 + 1
    return grid.w * (T @ T.T + np.diag(grid.bracket ** (2 * s)))


def exp_spectral_gap(gamma: float, V: float = 6.0, N: int = 12, samples: int = 100, seed: int = 0,
                     ops: LinearOperators | None = None) -> dict:
    """Rayleigh quotients -<Lf,f>/|f - pi f|^2 on random samples against the generalized eigen-oracle."""
    t0 = time.perf_counter()
    ops = ops or operators(gamma, V, N)
    grid, L, B = ops.grid, ops.L, ops.coll.tables.B
    G = h1_gram(grid, B)
    U = np.sqrt(grid.w) * kernel_basis(grid).T
    Q = sla.null_space(U.T)
    oracle = float(sla.eigh(-grid.w * Q.T @ L @ Q, Q.T @ G @ Q, eigvals_only=True, subset_by_index=[0, 0])[0])
    rng = np.random.default_rng(seed)
    v = grid.v
    feats = np.stack([np.ones(grid.n), *v.T, *(v[:, i] * v[:, j] for i in range(3) for j in range(i, 3)),
                      grid.v2 * v[:, 0], grid.v2 * v[:, 1], grid.v2**2]) * grid.sqrtM
    ratios = np.empty(samples)
    for i in range(samples):
        f = rng.standard_normal(feats.shape[0]) @ feats + 0.05 * rng.standard_normal(grid.n) * grid.sqrtM**0.5
        fp = f - U @ (U.T @ f)
        ratios[i] = -grid.w * (fp @ L @ fp) / float(np.sum(h1v_sq(fp, B, grid)))
    sigma = float(ratios.min())
    ok = oracle > 0 and sigma > 0 and sigma >= oracle * (1 - 1e-8)
    v1 = Verdict("spectral_gap", sigma, oracle, ok, f"min sample quotient vs oracle {oracle:.4e}")
    return {"gamma": gamma, "verdicts": [v1], "sigma_samples": sigma, "sigma_oracle": oracle,
            "ratios": ratios, "runtime": time.perf_counter() - t0}


# ----- spectrum --------------------------------------------------------------------


def _low_rank_norm(V: np.ndarray, W: np.ndarray) -> float:
    """Spectral norm of V W^T from thin QR factors."""
    _, Rv = np.linalg.qr(V)
    _, Rw = np.linalg.qr(W)
    return float(np.linalg.norm(Rv @ Rw.T, 2))


def projector_checks(ops: LinearOperators, qs) -> list[dict]:
    """Idempotence, boundedness and the distance of the branch projector sum to pi along e1."""
    grid = ops.grid
    U = np.sqrt(grid.w) * kernel_basis(grid).T
    rows = []
    for q in qs:
        projs = eig_projectors(ops, np.array([q, 0.0, 0.0]))
        idem = max(float(np.max(np.abs(p.W.T @ p.V - np.eye(p.V.shape[1])))) for p in projs)
        bound = max(_low_rank_norm(p.V, p.W) for p in projs)
        Vs = np.hstack([p.V for p in projs] + [-U])
        Ws = np.hstack([p.W for p in projs] + [U])
        dist = _low_rank_norm(Vs, Ws)
        rows.append({"q": q, "idempotence": idem, "max_norm": bound, "sum_minus_pi": dist, "count": len(projs)})
    return rows


def exp_spectrum(ops: LinearOperators, scaling_eps: float = 0.25, xi=(1.0, 0.0, 0.0)) -> dict:
    t0 = time.perf_counter()
    fits = branch_fit(ops)
    out: list[Verdict] = [Verdict("branch_count", len(fits), 5, len(fits) == 5)]
    alphas = sorted(abs(f.alpha) for f in fits)
    zero = alphas[:3]
    out.append(Verdict("alpha_zero_max", max(zero), 1e-6, max(zero) <= 1e-6))
    target = np.sqrt(5.0 / 3.0)
    acoustic = [abs(f.alpha) for f in fits if f.label.startswith("acoustic")]
    aerr = max(abs(a - target) / target for a in acoustic) if acoustic else np.inf
    out.append(Verdict("acoustic_speed_rel_err", aerr, 0.02, aerr <= 0.02, f"sqrt(5/3)={target:.6f}"))
    bmin = min(f.beta for f in fits)
    out.append(Verdict("beta_min", bmin, 0.0, bmin > 0))
    res = max(f.residual for f in fits)
    out.append(Verdict("quadratic_fit_residual", res, 0.01, res < 0.01))

    # spectrum of Lambda_eps(xi) = eps^-2 x spectrum of Lambda_1(eps xi): dense route against the parity-reduced route
    xi = np.asarray(xi, float)
    dense = np.linalg.eigvals(assemble_Lambda_hat(ops, xi, scaling_eps))
    reduced = mode_spectrum(ops, scaling_eps * 2 * np.pi * xi).eigenvalues / scaling_eps**2
    cost = np.abs(dense[:, None] - reduced[None, :])
    r, c = linear_sum_assignment(cost)
    scale = np.max(np.abs(dense))
    sc = float(np.max(cost[r, c]) / scale)
    out.append(Verdict("scaling_identity", sc, 1e-8, sc <= 1e-8))
    re = float(np.max(dense.real) / scale)
    out.append(Verdict("stability_max_real", re, 1e-8, re <= 1e-8, "rightmost Re relative to spectral radius"))

    proj = projector_checks(ops, [0.05, 0.1, 0.2])
    lin = max(p["sum_minus_pi"] / p["q"] for p in proj)
    out.append(Verdict("projector_idempotence", max(p["idempotence"] for p in proj), 1e-6,
                       max(p["idempotence"] for p in proj) <= 1e-6))
    out.append(Verdict("projector_sum_linear_const", lin, np.inf, bool(np.isfinite(lin)),
                       "max |sum P_j - pi| / |q|"))
    return {"fits": fits, "verdicts": out, "projectors": proj, "runtime": time.perf_counter() - t0}


def exp_viscosity(gammas, V: float = 6.0, N: int = 12, fits_gamma: float = 0.0) -> dict:
    t0 = time.perf_counter()
    rows, out = [], []
    shear_beta = None
    for g in gammas:
        ops = operators(float(g), V, N)
        corr = compute_correctors(ops.coll)
        rows.append({"gamma": g, "nu1": corr.nu1, "nu2": corr.nu2, "raw_nu1": corr.raw_nu1,
                     "raw_nu2": corr.raw_nu2, "residual": corr.residual})
        out.append(Verdict(f"nu_positive_gamma{g:g}", min(corr.nu1, corr.nu2), 0.0, min(corr.nu1, corr.nu2) > 0))
        if float(g) == fits_gamma:
            fits = branch_fit(ops)
            shear = [f.beta for f in fits if f.label.startswith("shear")]
            thermal = [f.beta for f in fits if f.label.startswith("thermal")]
            shear_beta = float(np.mean(shear))
            rel = abs(corr.nu1 - shear_beta) / shear_beta
            out.append(Verdict("nu1_vs_shear_beta", rel, 0.05, rel <= 0.05,
                               f"nu1={corr.nu1:.6g} beta_shear={shear_beta:.6g}"))
            if thermal:
                relt = abs(corr.nu2 - thermal[0]) / thermal[0]
                rows[-1]["beta_thermal"] = thermal[0]
                rows[-1]["nu2_vs_thermal_beta"] = relt
            rows[-1]["beta_shear"] = shear_beta
    return {"rows": rows, "verdicts": out, "runtime": time.perf_counter() - t0}


# ----- decay, dissipativity ----------------------------------------------------------


def _Lambda_apply(ops: LinearOperators, f: KineticField, eps: float) -> KineticField:
    k = f.lattice.wavevectors
    vals = (f.values @ ops.L.T - 1j * eps * (k @ ops.grid.v.T) * f.values) / eps**2
    return f.with_values(vals)


def _dissipation_sample(ops: LinearOperators, f: KineticField, eps: float, eta: float) -> tuple[float, float, float]:
    """(-[[Lambda f, f]], [[f]]^2, |B grad_v f_perp|-type micro term / eps^2)."""
    D = -hypo_inner_L2(_Lambda_apply(ops, f, eps), f, eps, eta)
    Nf = hypo_inner_L2(f, f, eps, eta)
    P = float(np.sum(h1v_sq(micro_part(f).values, ops.coll.tables.B, ops.grid))) / eps**2
    return D, Nf, P


def _macro_dominated(lat: SpatialLattice, grid: VelocityGrid, rng: np.random.Generator) -> KineticField:
    f = remove_Pi(random_field(lat, grid, rng, decay=0.1))
    b = 10 ** rng.uniform(-4, 0)
    return pi_project(f) + micro_part(f) * b


def exp_decay(ops: LinearOperators, eps_list, dx: int = 1, K: int = 2, eta: float = 0.1, samples: int = 100,
              seed: int = 0, T: float = 3.0) -> dict:
    t0 = time.perf_counter()
    lat = SpatialLattice(dx, K)
    grid = ops.grid
    rng = np.random.default_rng(seed)
    g = remove_Pi(random_field(lat, grid, rng, decay=0.1))
    ts = np.linspace(0.0, T, 61)
    series, rates = {}, []
    for eps in eps_list:
        cache = SemigroupCache(ops, eps, "L")
        vals = np.array([norm_X(g.with_values(cache.apply(lambda lam, t=t: np.exp(t * lam), lat, g.values)))
                         for t in ts])
        series[eps] = vals
        fit = fit_rate(ts, vals, "exp", window=(T / 6, T))
        rates.append(fit.sigma)
    rates = np.array(rates)
    spread = float(rates.max() / rates.min() - 1) if rates.min() > 0 else np.inf
    out = [Verdict("decay_rate_min", float(rates.min()), 0.0, rates.min() > 0),
           Verdict("decay_rate_spread", spread, 0.25, spread <= 0.25, f"rates={np.round(rates, 4).tolist()}")]

    # calibration on one seed, verification on a fresh one
    cal = np.random.default_rng(seed + 1000)
    D, Nf, P = [], [], []
    for eps in eps_list:
        for _ in range(max(20, samples // 2)):
            d, n, p = _dissipation_sample(ops, _macro_dominated(lat, grid, cal), eps, eta)
            D.append(d), Nf.append(n), P.append(p)
    D, Nf, P = map(np.array, (D, Nf, P))
    kappa0 = 0.1 * float(np.min(D / P))
    sigma0 = 0.5 * float(np.min((D - kappa0 * P) / Nf))
    ver = np.random.default_rng(seed + 2000)
    worst = np.inf
    for eps in eps_list:
        for _ in range(samples):
            d, n, p = _dissipation_sample(ops, _macro_dominated(lat, grid, ver), eps, eta)
            worst = min(worst, (d - sigma0 * n - kappa0 * p) / max(d, 1e-300))
    ok = sigma0 > 0 and kappa0 > 0 and worst >= -1e-10
    out.append(Verdict("hypocoercive_margin", worst, 0.0, ok,
                       f"eta={eta} sigma0={sigma0:.4g} kappa0={kappa0:.4g} samples/eps={samples}"))
    return {"verdicts": out, "rates": rates, "series": series, "t": ts, "sigma0": sigma0, "kappa0": kappa0,
            "runtime": time.perf_counter() - t0}


# ----- regularization ---------------------------------------------------------------


def exp_regularization(ops: LinearOperators, eps_list, modes=((1, 0, 0), (2, 0, 0)), n_t: int = 12,
                       window=(1e-3, 1e-1)) -> dict:
    """X -> Y1 operator norm of U^eps(t)(Id - pi) and of S_B, maximised over nonzero modes."""
    t0 = time.perf_counter()
    ts = np.geomspace(window[0], window[1], n_t)
    ks = [2 * np.pi * np.array(m, float) for m in modes]
    out, rows = [], []
    exps, prefs = [], []
    sb_series = {}
    for eps in eps_list:
        cU = SemigroupCache(ops, eps, "L")
        vals = np.array([max(regularization_norm(ops, k, eps, t, "U_eps", cache=cU) for k in ks) for t in ts])
        fit = fit_rate(ts, vals, "power")
        pref = float(np.exp(np.mean(np.log(vals) + 0.5 * np.log(ts))))
        exps.append(fit.p), prefs.append(pref)
        cB = SemigroupCache(ops, eps, "B")
        sb = np.array([max(regularization_norm(ops, k, eps, tau * eps**2, "S_B", cache=cB) for k in ks) for tau in ts])
        sb_series[eps] = sb
        for t, a, b in zip(ts, vals, sb):
            rows.append((eps, t, a, b))
    exps, prefs = np.array(exps), np.array(prefs)
    for eps, p in zip(eps_list, exps):
        out.append(Verdict(f"U_exponent_eps{eps:g}", float(p), -0.5, -0.65 <= p <= -0.4, "range [-0.65, -0.4]"))
    slope = float(np.polyfit(np.log(eps_list), np.log(prefs), 1)[0])
    out.append(Verdict("U_prefactor_eps_exponent", slope, 1.0, abs(slope - 1) <= 0.25,
                       f"C/eps={np.round(prefs / np.array(eps_list), 4).tolist()}"))
    sb_all = np.array([sb_series[e] for e in eps_list])
    collapse = float(np.max(np.abs(sb_all - sb_all[0])) / np.max(sb_all))
    pB = fit_rate(ts, sb_all[-1], "power").p
    out.append(Verdict("S_B_exponent_in_tau", float(pB), -0.5, -0.65 <= pB <= -0.4,
                       f"collapse across eps in t/eps^2 = {collapse:.2e}"))
    return {"verdicts": out, "rows": rows, "exponents": exps, "prefactors": prefs, "S_B_collapse": collapse,
            "runtime": time.perf_counter() - t0}


def exp_lyapunov(ops: LinearOperators, eps: float = 0.25, dx: int = 1, K: int = 2, weights=None,
                 eta: float = 0.1, delta: float = 0.05, T: float = 1.0, seed: int = 0, amplitude: float = 0.01,
                 n_t: int = 101) -> dict:
    """Monotonicity of U_eps along linear and small-data nonlinear trajectories and of E_eps along S_B."""
    t0 = time.perf_counter()
    lat = SpatialLattice(dx, K)
    grid, B = ops.grid, ops.coll.tables.B
    w = weights or LyapunovWeights.from_eta(eta)
    rng = np.random.default_rng(seed)
    f0 = remove_Pi(random_field(lat, grid, rng, decay=0.1))
    cU, cB = SemigroupCache(ops, eps, "L"), SemigroupCache(ops, eps, "B")
    ts = np.linspace(0, T, n_t)
    U = np.array([lyapunov_U(t, f0.with_values(cU.apply(lambda l, t=t: np.exp(t * l), lat, f0.values)), eps, B, w,
                             eta, delta) for t in ts])
    tb = np.linspace(0, eps**2, 51)
    E = np.array([lyapunov_E(t, f0.with_values(cB.apply(lambda l, t=t: np.exp(t * l), lat, f0.values)), eps, B, w)
                  for t in tb])
    g = f0 * (amplitude / norm_X(f0))
    dt = min(0.01, 0.1 * eps)
    stepper = KineticStepper(ops, lat, eps, dt, "etd2", dt_max=dt)
    steps = int(round(T / dt))
    Un = [lyapunov_U(0.0, g, eps, B, w, eta, delta)]
    for n in range(1, steps + 1):
        g = stepper.step(g)
        Un.append(lyapunov_U(n * dt, g, eps, B, w, eta, delta))
    Un = np.array(Un)
    incs = {"U_linear": float(np.max(np.diff(U)) / U[0]), "E_S_B": float(np.max(np.diff(E)) / E[0]),
            "U_nonlinear": float(np.max(np.diff(Un)) / Un[0])}
    out = [Verdict(f"monotone_{k}", v, 1e-6, v <= 1e-6, "max relative increment per step") for k, v in incs.items()]
    return {"verdicts": out, "U": U, "E": E, "U_nonlinear": Un, "t": ts, "t_B": tb,
            "runtime": time.perf_counter() - t0}


# ----- nonlinear runs ---------------------------------------------------------------


def exp_bound(ops: LinearOperators, eps_list, dx: int = 2, K: int = 2, T: float = 1.0, amplitude: float = 0.002,
              seed: int = 0, sigma: float = 0.05, scheme: str = "etd2", dt_max: float = 0.01, c_dt: float = 0.1) -> dict:
    """Monitored small-data functional and the eps^2 scaling of the integrated micro Y1 norm."""
    t0 = time.perf_counter()
    lat = SpatialLattice(dx, K)
    # data in Ker L: the micro part is generated by transport, so the O(eps^2)
    # initial layer of a kinetic perturbation does not have to be resolved by dt
    g_in = pi_project(remove_Pi(random_field(lat, ops.grid, np.random.default_rng(seed), decay=0.5)))
    g_in = g_in * (amplitude / norm_X(g_in))
    consts, micro, rows = [], [], []
    for eps in eps_list:
        traj = run_trajectory(g_in, eps, T, ops, scheme=scheme, record=("X", "micro_Y1", "moments"), stride=10,
                              sigma=sigma, eta0=None, dt_max=dt_max, c_dt=c_dt)
        rep = traj.report
        consts.append(rep["constant"]), micro.append(rep["int_micro_Y1_unweighted"])
        rows.append({"eps": eps, **rep})
    consts, micro = np.array(consts), np.array(micro)
    slope = float(np.polyfit(np.log(eps_list), np.log(micro), 1)[0])
    out = [Verdict("bound_constant_max", float(consts.max()), np.inf, bool(np.all(np.isfinite(consts)))),
           Verdict("micro_integral_eps_exponent", slope, 2.0, abs(slope - 2) <= 0.6, "within 30% of 2")]
    return {"verdicts": out, "rows": rows, "runtime": time.perf_counter() - t0}


def exp_hydro(ops: LinearOperators, eps_list, T: float = 1.0, amplitude: float = 0.05, scheme: str = "etd2",
              dt_max: float = 0.01, c_dt: float = 0.1, duhamel: bool = True) -> dict:
    """Kinetic solutions from well-prepared Taylor-Green data against the lifted NSF solution."""
    t0 = time.perf_counter()
    lat = SpatialLattice(2, 2)
    grid = ops.grid
    corr = compute_correctors(ops.coll)
    state = taylor_green(lat, amplitude, 0.4 * amplitude)
    g_in = well_prepared_lift(state.rho, state.u, state.theta, lat, grid)
    n0 = norm_X(g_in)
    errors, resid, rows = [], [], []
    fluid_cache: dict[float, list] = {}
    for eps in eps_list:
        traj = run_trajectory(g_in, eps, T, ops, scheme=scheme, record=("X", "moments"), stride=1, eta0=None,
                              dt_max=dt_max, c_dt=c_dt)
        dt = traj.dt
        if dt not in fluid_cache:
            fluid_cache[dt] = kinetic_lift(run_nsf(state, T, dt, corr.nu1, corr.nu2), grid)
        lifted = fluid_cache[dt]
        if len(lifted) != len(traj.snapshots):
            raise RuntimeError("kinetic and fluid snapshot counts differ")
        err = max(norm_X(a - b) for a, b in zip(traj.snapshots, lifted)) / n0
        r = duhamel_residual(traj, ops) if duhamel else np.nan
        errors.append(err), resid.append(r)
        rows.append({"eps": eps, "dt": dt, "sup_error_X_rel": err, "duhamel_residual": r,
                     "moment_drift": traj.report.get("moment_drift", np.nan)})
    errors, resid = np.array(errors), np.array(resid)
    order = np.argsort(eps_list)[::-1]
    e_sorted = errors[order]
    monotone = bool(np.all(np.diff(e_sorted) < 0))
    slope = float(np.polyfit(np.log(np.array(eps_list)[order]), np.log(e_sorted), 1)[0])
    out = [Verdict("hydro_error_strictly_decreasing", float(np.max(np.diff(e_sorted))), 0.0, monotone),
           Verdict("hydro_loglog_slope", slope, 0.4, slope >= 0.4)]
    if duhamel:
        out.append(Verdict("duhamel_residual_max", float(np.max(resid)), 1e-3, float(np.max(resid)) <= 1e-3))
    return {"verdicts": out, "rows": rows, "nu1": corr.nu1, "nu2": corr.nu2, "g_in_X": n0,
            "runtime": time.perf_counter() - t0}


# ----- command wrappers -------------------------------------------------------------


def _finish(cfg: RunConfig, name: str, results: dict, verdicts: list[Verdict], start: float) -> dict:
    out = Path(cfg.out)
    write_csv(out / f"{name}_verdicts.csv", ["name", "value", "threshold", "passed"],
              [(v.name, v.value, v.threshold, v.passed) for v in verdicts], cfg)
    report = {"command": name, "passed": all(v.passed for v in verdicts),
              "verdicts": [{"name": v.name, "value": v.value, "threshold": v.threshold, "passed": v.passed,
                            "detail": v.detail} for v in verdicts],
              "runtime_s": time.perf_counter() - start, **results}
    write_report(out / f"{name}_report.json", report, cfg)
    for v in verdicts:
        print(v.line())
    return report


def cmd_check(cfg: RunConfig, N_fine: int | None = 24, corrupt_L: float = 0.0) -> dict:
    start = time.perf_counter()
    verdicts, runtimes = [], {}
    for g in cfg.gammas:
        res = exp_structure(float(g), cfg.V, cfg.N, N_fine, cfg.seed, corrupt_L)
        for v in res["verdicts"]:
            v.name = f"gamma{g:g}_{v.name}"
        verdicts += res["verdicts"]
        runtimes[f"structure_gamma{g:g}"] = res["runtime"]
    for g in cfg.gammas:
        res = exp_spectral_gap(float(g), 6.0, 12, cfg.samples, cfg.seed)
        for v in res["verdicts"]:
            v.name = f"gamma{g:g}_{v.name}"
        verdicts += res["verdicts"]
        runtimes[f"gap_gamma{g:g}"] = res["runtime"]
    return _finish(cfg, "check", {"runtimes": runtimes}, verdicts, start)


def cmd_spectrum(cfg: RunConfig) -> dict:
    start = time.perf_counter()
    res = exp_spectrum(_ops(cfg))
    fits = res["fits"]
    out = Path(cfg.out)
    write_csv(out / "branch_fit.csv", ["label", "alpha", "beta", "residual", "cubic_constant"],
              [(f.label, f.alpha, f.beta, f.residual, f.cubic_constant) for f in fits], cfg)
    cols = ["k"] + [f"{f.label}_{p}" for f in fits for p in ("re", "im")]
    rows = [[k] + [x for f in fits for x in (f.values[i].real, f.values[i].imag)] for i, k in enumerate(fits[0].ks)]
    write_csv(out / "branches.csv", cols, rows, cfg)
    return _finish(cfg, "spectrum", {"fits": [f.row() for f in fits], "projectors": res["projectors"]},
                   res["verdicts"], start)


def cmd_viscosity(cfg: RunConfig) -> dict:
    start = time.perf_counter()
    res = exp_viscosity(cfg.gammas, cfg.V, cfg.N, fits_gamma=0.0 if 0.0 in cfg.gammas else None)
    write_csv(Path(cfg.out) / "viscosity.csv", ["gamma", "nu1", "nu2", "raw_nu1", "raw_nu2"],
              [(r["gamma"], r["nu1"], r["nu2"], r["raw_nu1"], r["raw_nu2"]) for r in res["rows"]], cfg)
    return _finish(cfg, "viscosity", {"rows": res["rows"]}, res["verdicts"], start)


def cmd_decay(cfg: RunConfig) -> dict:
    start = time.perf_counter()
    res = exp_decay(_ops(cfg), cfg.eps, cfg.dx, cfg.K, cfg.eta, cfg.samples, cfg.seed)
    write_csv(Path(cfg.out) / "decay.csv", ["t"] + [f"eps{e:g}" for e in cfg.eps],
              [[t] + [res["series"][e][i] for e in cfg.eps] for i, t in enumerate(res["t"])], cfg)
    return _finish(cfg, "decay", {"rates": res["rates"], "sigma0": res["sigma0"], "kappa0": res["kappa0"]},
                   res["verdicts"], start)


def cmd_regrate(cfg: RunConfig) -> dict:
    start = time.perf_counter()
    res = exp_regularization(_ops(cfg), cfg.eps)
    write_csv(Path(cfg.out) / "regrate.csv", ["eps", "t_or_tau", "U_eps_norm", "S_B_norm"], res["rows"], cfg)
    return _finish(cfg, "regrate", {"exponents": res["exponents"], "prefactors": res["prefactors"],
                                    "S_B_collapse": res["S_B_collapse"]}, res["verdicts"], start)


def cmd_lyapunov(cfg: RunConfig) -> dict:
    start = time.perf_counter()
    verdicts, series = [], {}
    for eps in cfg.eps:
        res = exp_lyapunov(_ops(cfg), eps, cfg.dx, cfg.K, _weights(cfg), cfg.eta, cfg.delta, cfg.T, cfg.seed,
                           cfg.amplitude)
        for v in res["verdicts"]:
            v.name = f"eps{eps:g}_{v.name}"
        verdicts += res["verdicts"]
        series[eps] = res
        write_csv(Path(cfg.out) / f"lyapunov_eps{eps:g}.csv", ["t", "U_linear"], list(zip(res["t"], res["U"])), cfg)
    return _finish(cfg, "lyapunov", {}, verdicts, start)


def cmd_bound(cfg: RunConfig) -> dict:
    start = time.perf_counter()
    res = exp_bound(_ops(cfg), cfg.eps, cfg.dx, cfg.K, cfg.T, cfg.amplitude, cfg.seed, scheme=cfg.scheme,
                    dt_max=cfg.dt_max, c_dt=cfg.c_dt)
    keys = ["eps", "constant", "g_in_X2", "int_micro_Y1_unweighted", "moment_drift"]
    write_csv(Path(cfg.out) / "bound.csv", keys, [[r[k] for k in keys] for r in res["rows"]], cfg)
    return _finish(cfg, "bound", {"rows": res["rows"]}, res["verdicts"], start)


def cmd_hydro(cfg: RunConfig, duhamel: bool = True) -> dict:
    start = time.perf_counter()
    res = exp_hydro(_ops(cfg), cfg.eps, cfg.T, cfg.amplitude, cfg.scheme, cfg.dt_max, cfg.c_dt, duhamel)
    keys = ["eps", "dt", "sup_error_X_rel", "duhamel_residual", "moment_drift"]
    write_csv(Path(cfg.out) / "hydro.csv", keys, [[r[k] for k in keys] for r in res["rows"]], cfg)
    write_bin(Path(cfg.out) / "hydro_errors.bin", np.array([r["sup_error_X_rel"] for r in res["rows"]]), cfg,
              {"eps": list(cfg.eps)})
    return _finish(cfg, "hydro", {"rows": res["rows"], "nu1": res["nu1"], "nu2": res["nu2"]}, res["verdicts"], start)


HANDLERS = {"check": cmd_check, "spectrum": cmd_spectrum, "viscosity": cmd_viscosity, "decay": cmd_decay,
            "regrate": cmd_regrate, "lyapunov": cmd_lyapunov, "bound": cmd_bound, "hydro": cmd_hydro}


def build_config(command: str, config_path: str | None = None, **overrides) -> RunConfig:
    """Command defaults, then the JSON file, then explicit overrides."""
    cfg = RunConfig(experiment=command).updated(**DEFAULTS.get(command, {}))
    if config_path:
        with open(config_path) as fh:
            keys = json.load(fh)
        cfg = RunConfig.from_dict({**cfg.as_dict(), **keys, "experiment": command})
    return cfg.updated(**overrides)


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(x) for x in text.split(","))


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="landaulab", description=__doc__.splitlines()[0])
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", help="JSON configuration file")
    parser.add_argument("--gamma", type=float)
    parser.add_argument("--gammas", type=_floats)
    parser.add_argument("--V", type=float)
    parser.add_argument("--N", type=int)
    parser.add_argument("--dx", type=int)
    parser.add_argument("--K", type=int)
    parser.add_argument("--eps", type=_floats)
    parser.add_argument("--T", type=float)
    parser.add_argument("--dt-max", dest="dt_max", type=float)
    parser.add_argument("--c-dt", dest="c_dt", type=float, help="step cap factor: dt <= c_dt * eps")
    parser.add_argument("--scheme", choices=SCHEMES)
    parser.add_argument("--eta", type=float)
    parser.add_argument("--seed", type=int)
    parser.add_argument("--samples", type=int)
    parser.add_argument("--amplitude", type=float)
    parser.add_argument("--out")
    parser.add_argument("--no-duhamel", action="store_true", help="hydro: skip the Duhamel residual")
    parser.add_argument("--corrupt-L", dest="corrupt_L", type=float, default=0.0, help="check: fault injection")
    args = parser.parse_args(argv)
    set_threads()
    keys = ("gamma", "gammas", "V", "N", "dx", "K", "eps", "T", "dt_max", "c_dt", "scheme", "eta", "seed",
            "samples", "amplitude", "out")
    over = {k: getattr(args, k) for k in keys}
    cfg = build_config(args.command, args.config, **over)
    if args.command == "check":
        report = cmd_check(cfg, corrupt_L=args.corrupt_L)
    elif args.command == "hydro":
        report = cmd_hydro(cfg, duhamel=not args.no_duhamel)
    else:
        report = HANDLERS[args.command](cfg)
    return 0 if report["passed"] else 1


if __name__ == "__main__":
    sys.exit(main())
