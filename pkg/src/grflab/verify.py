"""Property suites run by ``grflab verify``.

Each check returns a ``Check`` record; a suite passes when every check does.
Suites are deterministic for a given seed.
"""

import time
from dataclasses import asdict, dataclass

import numpy as np

from . import io
from .curvature import bismut_pack, bismut_rm_direct, levi_civita_pack
from .flow import FlowConfig, grf_rhs, integrate
from .geometry import (ALGEBRAS, Torus, berger_state, biinvariant_geometry, jacobi_residual,
                       round_sphere, su2, torus_perturbation, torus_state)
from .spectral import compute_lambda, dense_lambda, lambda_identity_residual, rayleigh_quotient
from .stability import (SecondVariation, VariationPair, dh_identity_terms, gauge_direction,
                        sphere_mode_analysis, sphere_mode_form)
from .tensors import antisym_p, sym

SUITES = ("algebra", "curvature", "spectral", "variation", "flow")


@dataclass
class Check:
    name: str
    passed: bool
    value: float
    tol: float
    detail: str = ""


def _check(name, value, tol, detail=""):
    value = float(value)
    return Check(name, bool(np.isfinite(value) and value <= tol), value, tol, detail)


def random_traceless(rng, n, g=None):
    h = sym(rng.standard_normal((n, n)))
    g = np.eye(n) if g is None else g
    return h - np.trace(np.linalg.solve(g, h)) / n * g


def dim3_identity_residual(samples, rng):
    """max |3 R_ijkl h_il h_jk + R_jl h_lk h_jk + |h|^2| over random traceless h on unit S^3."""
    st = biinvariant_geometry(su2())
    pack = levi_civita_pack(st)
    worst = 0.0
    for _ in range(samples):
        h = random_traceless(rng, 3)
        lhs = (3.0 * np.einsum("ijkl,il,jk->", pack.Rm, h, h)
               + np.einsum("jl,lk,jk->", pack.Rc, h, h))
        worst = max(worst, abs(lhs + np.sum(h * h)))
    return worst


def random_pair(grid, rng, kcut=2):
    h = sym(grid.random_bandlimited((3, 3), kcut, rng))
    K = grid.random_bandlimited((3, 3), kcut, rng)
    return VariationPair(h, K - np.swapaxes(K, -1, -2))


def fd_master(curves, seed, n=16, eps=(1e-2, 5e-3)):
    """Centered second differences of lambda on the flat torus against the second variation.

    Returns (max relative error at the smallest step, min observed order).
    """
    grid = Torus(n)
    rng = np.random.default_rng(seed)
    base = torus_state(grid)
    r0 = compute_lambda(base)
    sv = SecondVariation(base, r0.f)
    worst_err, worst_order = 0.0, np.inf
    for _ in range(curves):
        x = random_pair(grid, rng)
        x = VariationPair(0.3 * x.h, 0.3 * x.K)
        q = sv.second_variation(x, x)
        errs = []
        for e in eps:
            lp = compute_lambda(torus_state(grid, np.eye(3) + e * x.h, e * x.K)).lam
            lm = compute_lambda(torus_state(grid, np.eye(3) - e * x.h, -e * x.K)).lam
            errs.append(abs((lp + lm - 2 * r0.lam) / e ** 2 - q))
        worst_err = max(worst_err, errs[-1] / abs(q))
        worst_order = min(worst_order, np.log(errs[0] / errs[1]) / np.log(eps[0] / eps[1]))
    return worst_err, worst_order


# ---------------------------------------------------------------------------

def suite_algebra(seed):
    rng = np.random.default_rng(seed)
    out = []
    for name, make in ALGEBRAS.items():
        sc = make()
        out.append(_check(f"jacobi[{name}]", jacobi_residual(sc.alpha), 1e-12))
        out.append(_check(f"antisymmetry[{name}]",
                          np.max(np.abs(sc.alpha + np.swapaxes(sc.alpha, 0, 1))), 0.0))
    T = rng.standard_normal((3, 3, 3))
    A = antisym_p(T, 3)
    out.append(_check("antisym_idempotent", np.max(np.abs(antisym_p(A, 3) - A)), 1e-15))
    out.append(_check("dim3_identity", dim3_identity_residual(200, rng), 1e-12))
    su2p = levi_civita_pack(biinvariant_geometry(su2()))
    out.append(_check("su2_scalar_curvature", abs(su2p.R - 6.0), 1e-12))
    out.append(_check("su2_H_norm", abs(su2p.Hnorm_sq - 24.0), 1e-12))
    return out


def suite_curvature(seed):
    out = []
    for name in ("su2", "su2xsu2"):
        st = biinvariant_geometry(ALGEBRAS[name]())
        out.append(_check(f"bismut_flat[{name}]", np.max(np.abs(bismut_pack(st).RmPlus)), 1e-12))
    for fname in ("s3_round.json", "lie_su2xsu2.json", "torus_flat.json"):
        st = io.load_geometry(io.fixture_path(fname))
        p = levi_civita_pack(st)
        gap = np.max(np.abs(p.R - 0.25 * p.Hnorm_sq))
        var = np.max(p.R) - np.min(p.R) if np.ndim(p.R) else 0.0
        out.append(_check(f"R_equals_quarter_H2[{fname}]", gap, 1e-10))
        out.append(_check(f"R_constant[{fname}]", var, 1e-10))
    st = torus_perturbation(Torus(16), eps=0.05, seed=seed)
    out.append(_check("torus_bianchi", levi_civita_pack(st).bianchi_residual(), 1e-12))
    direct = bismut_rm_direct(st)
    out.append(_check("torus_bismut_formula", np.max(np.abs(bismut_pack(st).RmPlus - direct)), 1e-5,
                      "aliasing-limited"))
    st = berger_state(1.3, 0.7)
    out.append(_check("frame_bismut_formula",
                      np.max(np.abs(bismut_pack(st).RmPlus - bismut_rm_direct(st))), 1e-13))
    return out


def suite_spectral(seed):
    out = []
    st = io.load_geometry(io.fixture_path("s3_round.json"))
    out.append(_check("s3_lambda", abs(compute_lambda(st).lam - 4.0), 1e-10))
    flat = io.load_geometry(io.fixture_path("torus_flat.json"))
    out.append(_check("flat_lambda", abs(compute_lambda(flat).lam), 1e-12))
    pert = io.load_geometry(io.fixture_path("torus_perturbed_seed7.json"))
    res = compute_lambda(pert)
    gold = io.read_json(io.fixture_path("golden.json"))
    out.append(_check("seed7_vs_dense_oracle", abs(res.lam - gold["torus_perturbed_seed7.json"]["lambda"]),
                      1e-10))
    out.append(_check("rayleigh_consistency", abs(rayleigh_quotient(pert, res.omega) - res.lam), 1e-10))
    out.append(_check("lambda_pointwise_identity", lambda_identity_residual(pert, res), 1e-7))
    small = torus_perturbation(Torus(8), eps=0.1, seed=seed)
    out.append(_check("dense_oracle_n8", abs(compute_lambda(small).lam - dense_lambda(small)), 1e-10))
    return out


def suite_variation(seed, curves=3):
    rng = np.random.default_rng(seed)
    out = []
    for k, mu in enumerate([0, 3, 8, 15, 24]):
        M = sphere_mode_form(mu)
        want = [[-(mu + 12), -5 * mu], [-5 * mu, -(mu * mu + 2 * mu)]]
        out.append(_check(f"mode_form[mu={mu}]", 0 if M == want else 1, 0))
    rep = sphere_mode_analysis(round_sphere(4).backend.basis)
    out.append(_check("modes_semidefinite", 0 if rep.classification == "stable" else 1, 0))
    grid = Torus(8)
    flat = torus_state(grid)
    sv = SecondVariation(flat, compute_lambda(flat).f)
    worst_sa, worst_g = 0.0, 0.0
    for _ in range(5):
        x, y = random_pair(grid, rng), random_pair(grid, rng)
        nx = np.sqrt(sv.pair(x, x, False))
        ny = np.sqrt(sv.pair(y, y, False))
        worst_sa = max(worst_sa, abs(sv.quad(x, y) - sv.quad(y, x)) / (nx * ny))
        gx = gauge_direction(flat, grid.random_bandlimited((3,), 2, rng),
                             grid.random_bandlimited((3,), 2, rng))
        ng = np.sqrt(sv.pair(gx, gx, False))
        worst_g = max(worst_g, abs(sv.quad(gx, y)) / (ng * ny))
    out.append(_check("self_adjoint", worst_sa, 1e-9))
    out.append(_check("gauge_null", worst_g, 1e-8))
    pert = torus_perturbation(Torus(16), eps=1e-2, seed=seed, metric_only=True)
    worst = 0.0
    for _ in range(3):
        h = sym(pert.backend.random_bandlimited((3, 3), 3, rng))
        lhs, rhs = dh_identity_terms(pert, h)
        worst = max(worst, abs(lhs - rhs) / abs(lhs))
    out.append(_check("dh_identity", worst, 1e-8))
    err, order = fd_master(curves, seed)
    out.append(_check("fd_master_error", err, 1e-4))
    out.append(_check("fd_master_order", 1.9 - order, 0.0, f"order {order:.4f}"))
    return out


def suite_flow(seed):
    out = []
    s3 = biinvariant_geometry(su2())
    tr = integrate(s3, FlowConfig(t_end=10.0))
    out.append(_check("s3_stationary", np.max(np.abs(grf_rhs(s3).dg)), 1e-12, tr.reason))
    st = torus_perturbation(Torus(16), eps=1e-2, seed=seed)
    tr = integrate(st, FlowConfig(t_end=0.02, dt_init=1e-3, dt_max=0.004, tol=1e-7, snapshot_every=1))
    drops = -np.min(np.diff(tr.lambdas) + 1e-9 * (1 + np.abs(tr.lambdas[:-1])))
    out.append(_check("lambda_monotone", max(drops, 0.0), 0.0))
    rel = max(abs(d - g) / g for _, d, g in tr.dlambda_dt())
    out.append(_check("dlambda_dt_integrand", rel, 0.02))
    tr = integrate(berger_state(1.2, 0.8), FlowConfig(t_end=40.0, dt_init=1e-2, dt_max=0.5, tol=1e-10,
                                                       gauge="gradient_f", snapshot_every=1,
                                                       stop_residual=1e-7))
    out.append(_check("berger_converges", tr.residuals[-1], 1e-6, tr.reason))
    out.append(_check("berger_lambda_limit", abs(tr.lambdas[-1] - 4.0), 1e-6))
    return out


def run(suite="all", seed=0):
    names = SUITES if suite == "all" else (suite,)
    funcs = {"algebra": suite_algebra, "curvature": suite_curvature, "spectral": suite_spectral,
             "variation": suite_variation, "flow": suite_flow}
    results = {}
    for name in names:
        t0 = time.perf_counter()
        checks = funcs[name](seed)
        results[name] = {"checks": [asdict(c) for c in checks],
                         "passed": all(c.passed for c in checks),
                         "seconds": time.perf_counter() - t0}
    return results


def regen_golden(path=None):
    """Recompute dense-oracle values for the shipped fixtures and write golden.json."""
    path = path or io.fixture_path("golden.json")
    gold = {}
    for fname in ("torus_perturbed_seed7.json", "torus_flat.json"):
        st = io.load_geometry(io.fixture_path(fname))
        gold[fname] = {"lambda": dense_lambda(st), "sha256": io.sha256_file(io.fixture_path(fname)),
                       "oracle": "dense eigensolve"}
    st = io.load_geometry(io.fixture_path("s3_round.json"))
    p = levi_civita_pack(st)
    gold["s3_round.json"] = {"lambda": float(p.R - p.Hnorm_sq / 12.0),
                             "sha256": io.sha256_file(io.fixture_path("s3_round.json")),
                             "oracle": "constant potential"}
    io.write_json(path, gold)
    return gold
