import numpy as np
import pytest

from grflab.errors import InputError
from grflab.flow import FlowConfig, gauged_rhs, grad_norm_sq, grf_rhs, integrate
from grflab.geometry import (berger_state, biinvariant_geometry, left_invariant_state, su2,
                             torus_perturbation, torus_state)
from grflab.spectral import compute_lambda


def berger_oracle(a, c):
    # Milnor frame: Rc = diag(4 - 2c/a, 4 - 2c/a, 2c^2/a^2), H^2 = diag(8/(ac), 8/(ac), 8/a^2)
    da = -2 * (4 - 2 * c / a) + 4 / (a * c)
    dc = -4 * c * c / (a * a) + 4 / (a * a)
    return np.diag([da, da, dc])


def test_fixed_points(grid8):
    t = grf_rhs(biinvariant_geometry(su2()))
    assert np.max(np.abs(t.dg)) < 1e-14 and np.max(np.abs(t.db)) < 1e-14
    t = grf_rhs(torus_state(grid8))
    assert np.max(np.abs(t.dg)) == 0 and np.max(np.abs(t.db)) == 0


@pytest.mark.parametrize("a,c", [(1.2, 0.8), (0.9, 1.1), (1.5, 0.6), (0.7, 0.7), (1.1, 1.3)])
def test_berger_rhs(a, c):
    t = grf_rhs(berger_state(a, c))
    np.testing.assert_allclose(t.dg, berger_oracle(a, c), atol=1e-13)
    assert np.max(np.abs(t.db)) < 1e-14


def test_gauged_reductions(grid16):
    st = biinvariant_geometry(su2())
    t = gauged_rhs(st, 0.0)
    assert np.max(np.abs(t.dg)) < 1e-14
    b = berger_state(1.2, 0.8)
    np.testing.assert_allclose(gauged_rhs(b, 0.0).dg, grf_rhs(b).dg, atol=1e-14)
    pert = torus_perturbation(grid16, eps=1e-2, seed=5)
    res = compute_lambda(pert)
    t = gauged_rhs(pert, res.f)
    ef = np.exp(-res.f)
    from grflab.tensors import inner

    integrand = (0.5 * inner(t.dg, t.dg, pert.ginv) + 0.5 * inner(t.db, t.db, pert.ginv)) * ef
    gn = grad_norm_sq(pert, res.f)
    assert abs(pert.integrate(integrand) - gn) < 1e-12 * gn


def test_config_validation():
    with pytest.raises(InputError):
        FlowConfig(dt_min=1.0, dt_init=0.1)
    with pytest.raises(InputError):
        FlowConfig(gauge="harmonic")
    with pytest.raises(InputError):
        FlowConfig.from_dict({"t_end": 1.0, "bogus": 2})
    cfg = FlowConfig.from_dict({"t_end": 2.0, "tol": 1e-9})
    assert FlowConfig.from_dict(cfg.to_dict()) == cfg


def test_s3_stationary():
    tr = integrate(biinvariant_geometry(su2()), FlowConfig(t_end=10.0))
    assert tr.stationary and tr.reason == "stationary" and len(tr.times) == 1


def test_torus_short_flow(grid16):
    st = torus_perturbation(grid16, eps=1e-2, seed=2)
    tr = integrate(st, FlowConfig(t_end=0.02, dt_init=1e-3, dt_max=0.005, tol=1e-7, snapshot_every=1))
    assert tr.reason == "t_end"
    assert np.all(np.diff(tr.times) > 0)
    assert not tr.monotone_violations
    assert all(np.min(np.linalg.eigvalsh(s.g)) > 0 for s in tr.states)
    # H0 untouched, b evolves
    assert np.all(tr.states[-1].H0 == 0) and np.max(np.abs(tr.states[-1].b - st.b)) > 0


def test_positivity_breakdown():
    # pure Ricci flow of the round S^3 collapses at t = 1/4
    st = left_invariant_state(su2(), np.eye(3), H0=np.zeros((3, 3, 3)))
    tr = integrate(st, FlowConfig(t_end=1.0, dt_init=1e-3, dt_max=0.05, tol=1e-8))
    assert tr.reason.startswith("breakdown")
    assert tr.times[-1] < 0.25
    assert tr.last_good.min_metric_eigenvalue() > 0


def test_dt_underflow():
    cfg = FlowConfig(t_end=10.0, dt_min=0.05, dt_init=0.05, dt_max=0.05, tol=1e-14)
    tr = integrate(berger_state(1.2, 0.8), cfg)
    assert tr.reason == "dt_underflow"
