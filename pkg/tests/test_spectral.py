import numpy as np
import pytest

from grflab import io
from grflab.calculus import codiff, covd
from grflab.curvature import levi_civita_pack
from grflab.geometry import Torus, biinvariant_geometry, su2, torus_perturbation, torus_state
from grflab.tensors import sym
from grflab.spectral import (compute_lambda, dense_lambda, lambda_identity_residual, potential,
                             rayleigh_quotient, schrodinger_apply, weighted_ops)


@pytest.fixture(scope="module")
def pert():
    return io.load_geometry(io.fixture_path("torus_perturbed_seed7.json"))


@pytest.fixture(scope="module")
def pert_res(pert):
    return compute_lambda(pert)


def test_round_s3_lambda():
    st = biinvariant_geometry(su2())
    p = levi_civita_pack(st)
    oracle = p.R - p.Hnorm_sq / 12.0  # constant potential: ground state is the constant
    res = compute_lambda(st)
    assert abs(res.lam - oracle) < 1e-12 and abs(res.lam - 4.0) < 1e-12
    assert res.solver_info["homogeneous"] is True


def test_flat_torus_lambda(grid16):
    st = torus_state(grid16)
    res = compute_lambda(st)
    assert abs(res.lam) < 1e-12
    assert np.max(np.abs(res.f - np.log((2 * np.pi) ** 3))) < 1e-10


def test_against_dense_oracle(pert, pert_res):
    gold = io.read_json(io.fixture_path("golden.json"))["torus_perturbed_seed7.json"]
    assert gold["sha256"] == io.sha256_file(io.fixture_path("torus_perturbed_seed7.json"))
    assert abs(pert_res.lam - gold["lambda"]) < 1e-9


def test_dense_oracle_small_grid(grid8):
    st = torus_perturbation(grid8, eps=0.1, seed=11)
    assert abs(compute_lambda(st).lam - dense_lambda(st)) < 1e-9


def test_spectral_invariants(pert, pert_res):
    res = pert_res
    assert np.min(res.omega) > 0
    assert abs(pert.integrate(np.exp(-res.f)) - 1.0) < 1e-10
    # the discrete operator acts on the Nyquist-free subspace
    Lw = pert.backend.drop_nyquist(schrodinger_apply(pert, res.omega))
    nrm = np.sqrt(pert.integrate(res.omega ** 2))
    err = np.sqrt(pert.integrate((Lw - res.lam * res.omega) ** 2))
    assert err < 1e-9 * nrm
    assert abs(rayleigh_quotient(pert, res.omega) - res.lam) < 1e-9
    assert lambda_identity_residual(pert, res) < 1e-8


def test_lambda_below_sup_potential(grid16):
    for seed in range(3):
        st = torus_perturbation(grid16, eps=0.05, seed=seed)
        assert compute_lambda(st).lam <= np.max(potential(st)) + 1e-12


def test_grid_exact_diffeomorphisms(grid16, pert_res):
    st = torus_perturbation(grid16, eps=1e-2, kcut=2, seed=7)
    # integer grid translation
    sh = torus_state(grid16, np.roll(st.g, (3, -5, 2), axis=(0, 1, 2)),
                     np.roll(st.b, (3, -5, 2), axis=(0, 1, 2)))
    assert abs(compute_lambda(sh).lam - pert_res.lam) < 1e-8
    # swapping x1 and x2 (orientation reversing, b picks no sign as a tensor pull-back)
    P = [1, 0, 2]
    g = np.transpose(st.g, (1, 0, 2, 3, 4))[..., P, :][..., :, P]
    b = np.transpose(st.b, (1, 0, 2, 3, 4))[..., P, :][..., :, P]
    assert abs(compute_lambda(torus_state(grid16, g, b)).lam - pert_res.lam) < 1e-8


def test_weighted_ops_unweighted_reduction(grid16, rng):
    st = torus_perturbation(grid16, eps=0.05, seed=1)
    ops0 = weighted_ops(st, np.zeros(grid16.grid_shape))
    u = grid16.random_bandlimited((), 3, rng)
    # Delta u = |g|^{-1/2} d_a(|g|^{1/2} g^{ab} d_b u)
    du = grid16.deriv(u)
    flux = st.sqrt_det[..., None] * np.einsum("...ab,...b->...a", st.ginv, du)
    lap = grid16.divergence(flux) / st.sqrt_det
    np.testing.assert_allclose(ops0.lap_f(u), lap, atol=1e-11)


def test_weighted_codiff_unweighted_reduction(rng):
    # conservative and Christoffel forms of d* agree up to aliasing, which is
    # spectrally small once the grid resolves the metric products
    grid = Torus(32)
    st = torus_perturbation(grid, eps=0.05, seed=1)
    K = grid.random_bandlimited((3, 3), 2, rng)
    K = K - np.swapaxes(K, -1, -2)
    ops0 = weighted_ops(st, np.zeros(grid.grid_shape))
    np.testing.assert_allclose(ops0.dstar_f(K), codiff(st, K), atol=1e-9)
    flat = torus_state(grid)
    np.testing.assert_allclose(weighted_ops(flat, np.zeros(grid.grid_shape)).dstar_f(K), codiff(flat, K),
                               atol=1e-12)


def test_weighted_adjointness(grid16, rng, pert_res, pert):
    ops = weighted_ops(pert, pert_res.f)
    u, w = (grid16.random_bandlimited((), 3, rng) for _ in range(2))
    a, b = ops.ip(ops.lap_f(u), w), ops.ip(u, ops.lap_f(w))
    assert abs(a - b) < 1e-9 * max(abs(a), 1.0)
    h = grid16.random_bandlimited((3, 3), 3, rng)
    h = 0.5 * (h + np.swapaxes(h, -1, -2))
    xi = grid16.random_bandlimited((3,), 3, rng)
    # (div_f h, xi)_f = -(h, sym nabla xi)_f; div_star is that adjoint with its sign built in
    a, b = ops.ip(ops.div_f(h), xi), -ops.ip(h, sym(covd(pert, xi)))
    assert abs(a - b) < 1e-9 * max(abs(a), 1.0)
    b = ops.ip(h, ops.div_star(xi))
    assert abs(a - b) < 1e-9 * max(abs(a), 1.0)
    assert abs(ops.ip(ops.div_f_one(ops.div_f(h)), np.ones(grid16.grid_shape))) < 1e-10


def test_poisson_single_mode(grid16):
    st = torus_state(grid16)
    ops = weighted_ops(st, np.zeros(grid16.grid_shape))
    x1, x2, x3 = grid16.coords
    rhs = np.cos(2 * x1 - x3)
    v = ops.solve_lap_f(rhs)
    np.testing.assert_allclose(v, -rhs / 5.0, atol=1e-12)


def test_poisson_rejects_incompatible(grid8):
    from grflab.errors import ConsistencyError

    ops = weighted_ops(torus_state(grid8), np.zeros(grid8.grid_shape))
    with pytest.raises(ConsistencyError):
        ops.solve_lap_f(np.ones(grid8.grid_shape))
