import numpy as np
import pytest

from chbsim import geometry as geo
from chbsim import timestepper as ts
from chbsim.diagnostics import guard_check
from conftest import make_model, slow_initial


def equilibrium(model, level=0.2):
    a = np.zeros(model.n_a)
    a[0] = level * np.sqrt(model.basis.geom.area)
    return a, geo.trace_coeffs(a, model.basis)


def test_zero_dt_is_identity(model4):
    a, b = slow_initial(model4.basis)
    an, bn, _ = ts.step_imex(a, b, 0.0, model4)
    assert np.array_equal(an, a) and np.array_equal(bn, b)
    an, bn, _ = ts.step_explicit(a, b, 0.0, model4)
    assert np.array_equal(an, a) and np.array_equal(bn, b)


def test_equilibrium_is_fixed_point(model4):
    a, b = equilibrium(model4)
    for step in (ts.step_imex, ts.step_explicit):
        an, bn, ev = step(a, b, 1e-2, model4)
        assert np.max(np.abs(an - a)) < 1e-13 and np.max(np.abs(bn - b)) < 1e-13
        assert np.max(np.abs(ev.e)) < 1e-13


def test_pure_noise_step(model4):
    m = model4
    a, b = equilibrium(m)
    rng = np.random.default_rng(0)
    dMa, dMb = 1e-3 * rng.standard_normal(m.n_a), 1e-3 * rng.standard_normal(m.n_b)
    an, bn, _ = ts.step_explicit(a, b, 1e-3, m, dMa, dMb)
    assert np.allclose(an, a + dMa, atol=1e-15) and np.allclose(bn, b + dMb, atol=1e-15)
    dt = 1e-3
    L = ts.imex_operator(m, *ts.stabilization_constants(m, ts.SchemeConfig(dt=dt)))
    an, bn, _ = ts.step_imex(a, b, dt, m, dMa, dMb)
    X = np.linalg.solve(np.eye(L.shape[0]) - dt * L, np.concatenate([a + dMa, b + dMb]) - dt * L @ np.concatenate([a, b]))
    assert np.allclose(np.concatenate([an, bn]), X, atol=1e-13)


def test_scheme_violations():
    assert ts.SchemeConfig().violations() == []
    errs = ts.SchemeConfig(dt=0, n_steps=0, scheme="rk4", decimate=0).violations()
    assert len(errs) == 4


def test_deterministic_path_constant_mass_and_decreasing_energy():
    m = make_model(4, noise=False)
    a0, b0 = slow_initial(m.basis)
    r = ts.simulate_path(m, ts.SchemeConfig(dt=1e-3, n_steps=100), a0, b0)
    assert r.stopped_at is None and r.n_rows == 101
    assert np.max(np.abs(r.ledger["mass"] - r.ledger["mass"][0])) < 1e-12
    assert np.all(np.diff(r.ledger["E"]) <= 1e-10)
    assert r.ledger["residual"][0] == 0.0


def test_guard_stops_path():
    m = make_model(4, noise=False)
    a0, b0 = slow_initial(m.basis)
    q0 = ts.guard_quantity(m, a0, b0)
    sc = ts.SchemeConfig(dt=1e-3, n_steps=20, kappa_guard=float(q0) * (1 - 1e-9))
    r = ts.simulate_path(m, sc, a0, b0)
    assert r.stopped_at == 0 and r.n_rows == 1
    assert guard_check([r])


def test_batch_matches_single_paths():
    m = make_model(3)
    a0, b0 = slow_initial(m.basis)
    sc = ts.SchemeConfig(dt=2e-3, n_steps=30, decimate=5)
    batch = ts.simulate_batch(m, sc, a0, b0, [0, 1, 2], master_seed=4)
    for p in batch:
        single = ts.simulate_path(m, sc, a0, b0, (4, p.path_index))
        for k in ts.LEDGER_COLUMNS:
            assert np.allclose(single.ledger[k], p.ledger[k], rtol=1e-12, atol=1e-13)
        assert np.allclose(single.snap_a, p.snap_a, atol=1e-13)
    assert not np.allclose(batch[0].ledger["E"], batch[1].ledger["E"])


def test_imex_first_order_convergence():
    m = make_model(4, noise=False)
    a0, b0 = slow_initial(m.basis)
    T = 0.05
    run = lambda dt: ts.simulate_path(m, ts.SchemeConfig(dt=dt, n_steps=round(T / dt)), a0, b0).snap_a[-1]
    ref = run(T / 512)
    dts = [T / 16, T / 32, T / 64]
    err = [np.linalg.norm(run(dt) - ref) for dt in dts]
    slope = np.polyfit(np.log(dts), np.log(err), 1)[0]
    assert 0.8 < slope < 1.3


def test_imex_stable_where_explicit_aborts():
    m = make_model(8, noise=False)
    a0, b0 = slow_initial(m.basis)
    ex = ts.simulate_path(m, ts.SchemeConfig(dt=1e-2, n_steps=200, scheme="explicit"), a0, b0)
    assert ex.stopped_at is not None and ex.stopped_at < 10
    with pytest.raises(ts.NumericalAbort, match="stiffness"):
        ts.simulate_path(m, ts.SchemeConfig(dt=1e-2, n_steps=200, scheme="explicit",
                                            kappa_guard=1e300), a0, b0)
    r = ts.simulate_path(m, ts.SchemeConfig(dt=1e-2, n_steps=200), a0, b0)
    assert r.stopped_at is None and r.ledger["E"][-1] < r.ledger["E"][0]
