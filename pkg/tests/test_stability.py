from fractions import Fraction

import numpy as np
import pytest

from grflab import io
from grflab.calculus import exterior_d
from grflab.errors import PreconditionError
from grflab.geometry import (Torus, biinvariant_geometry, round_sphere, su2, su2xsu2,
                             torus_perturbation, torus_state)
from grflab.spectral import compute_lambda
from grflab.stability import (SecondVariation, VariationPair, VariationSpace, delta_G, gauge_direction,
                              slice_projector, sphere_mode_analysis, sphere_mode_form,
                              stability_verdict, conformal_bound)
from grflab.tensors import sym


@pytest.fixture(scope="module")
def flat8():
    grid = Torus(8)
    st = torus_state(grid)
    return grid, st, SecondVariation(st, compute_lambda(st).f)


def rand_pair(grid, rng, kcut=2):
    h = sym(grid.random_bandlimited((3, 3), kcut, rng))
    K = grid.random_bandlimited((3, 3), kcut, rng)
    return VariationPair(h, K - np.swapaxes(K, -1, -2))


def frame_pair(rng, n):
    h = sym(rng.standard_normal((n, n)))
    K = rng.standard_normal((n, n))
    return VariationPair(h, K - K.T)


def test_refuses_non_soliton(grid8):
    with pytest.raises(PreconditionError):
        SecondVariation(torus_perturbation(grid8, eps=0.05, seed=0))


def test_zero_variation(flat8):
    grid, st, sv = flat8
    z = VariationPair(np.zeros(grid.grid_shape + (3, 3)), np.zeros(grid.grid_shape + (3, 3)))
    assert sv.second_variation(z, z) == 0.0
    Nz = sv.apply(z)
    assert np.all(Nz.h == 0) and np.all(Nz.K == 0)


def test_operator_matches_form(flat8, rng):
    grid, st, sv = flat8
    for _ in range(3):
        x = rand_pair(grid, rng)
        q = sv.second_variation(x, x)
        assert abs(sv.quad(x, x) - q) < 1e-9 * abs(q)


def test_flat_reductions(flat8, rng):
    grid, st, sv = flat8
    x = rand_pair(grid, rng)
    assert np.max(np.abs(sv.C(x.K))) == 0 and np.max(np.abs(sv.D(x.h))) == 0
    # A = Delta_L / 2 + div* div and B = -d* d / 2 on a flat background
    from grflab import calculus as calc

    lap = calc.rough_laplacian(st, x.h)
    np.testing.assert_allclose(sv.A(x.h), 0.5 * lap + calc.div_star(st, calc.div_sym(st, x.h)), atol=1e-11)
    np.testing.assert_allclose(sv.B(x.K), -0.5 * calc.codiff(st, exterior_d(st, x.K)), atol=1e-11)


@pytest.mark.parametrize("make", [su2, su2xsu2])
def test_cross_block_adjointness(make, rng):
    st = biinvariant_geometry(make())
    sv = SecondVariation(st, 0.0)
    n = st.dim
    for _ in range(100):
        x, y = frame_pair(rng, n), frame_pair(rng, n)
        a = sv.ops.ip(sv.D(x.h), y.K)
        b = sv.ops.ip(x.h, sv.C(y.K))
        assert abs(a - b) < 1e-12 * max(1.0, abs(a))


def test_v_potential(flat8):
    grid, st, sv = flat8
    x1 = grid.coords[0]
    h = np.zeros(grid.grid_shape + (3, 3))
    h[..., 0, 0] = np.cos(x1)
    K = np.zeros_like(h)
    # div div h = -cos x1, so Delta v = -cos x1 gives v = cos x1
    np.testing.assert_allclose(sv.v_of(h, K), np.cos(x1), atol=1e-12)
    assert np.max(np.abs(sv.v_of(np.broadcast_to(2.0 * np.eye(3), h.shape).copy(), K))) < 1e-14


def test_slice_projections(flat8, rng):
    grid, st, sv = flat8
    space = VariationSpace(sv, 1)
    proj = slice_projector(space)
    for k, (idem, sa) in proj.check().items():
        assert idem < 1e-9 and sa < 1e-9, k
    # gauge input: nothing survives in the complement
    xi = np.stack([np.cos(grid.coords[1]), np.sin(grid.coords[2]), np.cos(grid.coords[0])], axis=-1)
    gx = gauge_direction(st, xi)
    _, _, perp = proj.project(gx)
    assert np.sqrt(sv.pair(perp, perp, False)) < 1e-9 * np.sqrt(sv.pair(gx, gx, False))
    # TT input is its own complement component
    h = np.zeros(grid.grid_shape + (3, 3))
    h[..., 1, 2] = h[..., 2, 1] = np.cos(grid.coords[0])
    tt = VariationPair(h, np.zeros_like(h))
    _, _, perp = proj.project(tt)
    d = VariationPair(perp.h - h, perp.K)
    assert np.sqrt(sv.pair(d, d, False)) < 1e-9
    # v vanishes on slice elements
    c = proj.project_coeffs(space.coeffs(rand_pair(grid, rng, kcut=1)))[2]
    x = space.field(c)
    assert np.max(np.abs(sv.v_of(x.h, x.K))) < 1e-9


def test_complement_structure_dim6():
    st = biinvariant_geometry(su2xsu2())
    sv = SecondVariation(st, 0.0)
    space = VariationSpace(sv)
    proj = slice_projector(space)
    from grflab import calculus as calc

    for j in range(proj.Qp.shape[1]):
        c = np.linalg.solve(proj.L.T, proj.Qp[:, j])
        x = space.field(c)
        assert abs(np.trace(x.h)) < 1e-10
        assert np.max(np.abs(x.K)) < 1e-10
        assert np.max(np.abs(calc.div_sym(st, x.h))) < 1e-10


def test_delta_G_preconditions(grid8):
    st = biinvariant_geometry(su2())
    with pytest.raises(PreconditionError):
        delta_G(st, np.eye(3))
    assert np.all(delta_G(st, np.zeros((3, 3))) == 0)


def test_sphere_tt_reduction(rng):
    # traceless frame-constant h is TT, and the form is (<Delta h, h>/2 - |h|^2) vol;
    # left-invariant traceless tensors carry the spin-2 rotation action, so Delta h = -6 h
    st = biinvariant_geometry(su2())
    sv = SecondVariation(st, 0.0)
    from grflab import calculus as calc

    for _ in range(5):
        h = sym(rng.standard_normal((3, 3)))
        h -= np.trace(h) / 3 * np.eye(3)
        np.testing.assert_allclose(calc.rough_laplacian(st, h), -6.0 * h, atol=1e-13)
        x = VariationPair(h, np.zeros((3, 3)))
        val = sv.second_variation(x, x)
        want = (0.5 * -6.0 - 1.0) * np.sum(h * h) * st.volume
        assert abs(val - want) < 1e-12 * abs(want)


def test_mode_form_examples():
    for mu in (0, 3, 8, 15, 24, 35):
        M = sphere_mode_form(mu)
        assert M == [[-(mu + 12), -5 * mu], [-5 * mu, -(mu * mu + 2 * mu)]]
        assert all(isinstance(v, Fraction) for row in M for v in row)
    # indefinite strictly between 3 and 8
    (p, q), (_, r) = sphere_mode_form(5)
    assert p * r - q * q < 0


def test_sphere_mode_analysis_rays():
    rep = sphere_mode_analysis(round_sphere(4).backend.basis)
    assert rep.classification == "stable"
    rays = {e["mu"]: e["ray"] for e in rep.kernel}
    assert set(rays) == {3, 8}
    a, b = rays[3]
    assert a == -b
    a, b = rays[8]
    assert a == -2 * b
    assert all(e["identified"] and e["angle"] < 1e-4 for e in rep.kernel)
    assert [r["multiplicity"] for r in rep.mode_table] == [1, 4, 9, 16, 25]


def test_verdict_round_s3():
    rep = stability_verdict(round_sphere(2), 0.0)
    assert rep.classification == "stable"
    assert rep.details["rayleigh_residual"] < 1e-8
    assert any("d*(chi dV)/4" in (e.get("identified") or "") for e in rep.kernel)


def test_verdict_flat_torus(flat8):
    grid, st, sv = flat8
    rep = stability_verdict(st, sv.f, kcut=1)
    assert rep.classification == "kernel-marginal"
    assert max(rep.top_eigenvalues) <= 1e-7
    assert rep.details["rayleigh_residual"] < 1e-8
    assert rep.details["asymmetry"] < 1e-9


def test_verdict_su2xsu2_reports():
    st = io.load_geometry(io.fixture_path("lie_su2xsu2.json"))
    rep = stability_verdict(st, 0.0)
    d = rep.to_dict()
    assert d["classification"] in ("stable", "unstable", "kernel-marginal")
    assert "delta_G_frame_max" in d["details"] and "lambda_form_exactness" in d["details"]
    assert rep.details["rayleigh_residual"] < 1e-8
    val, bound = conformal_bound(st, 0.0)
    assert val <= bound + 1e-12
