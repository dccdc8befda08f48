import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from chbsim import geometry as geo


def gram(F, w):
    return (F * w) @ F.T


def test_constant_mode_zero_eigenvalue(basis43):
    assert basis43.bulk_eig[0] == 0.0
    assert np.allclose(basis43.V[0], 1 / math.sqrt(basis43.geom.area))


def test_first_cosine_eigenvalue(basis43):
    # (k=1, m=0) is index 1 * n_y
    i = 1 * basis43.geom.n_y_modes
    assert basis43.bulk_eig[i] == pytest.approx(1.0, abs=1e-14)


@pytest.mark.parametrize("n", [(1, 1), (3, 2), (5, 4)])
def test_orthonormality(n):
    b = geo.build_basis(geo.ChannelGeometry(n_x_modes=n[0], n_y_modes=n[1]))
    for F in (b.V,):
        assert np.max(np.abs(gram(F, b.w) - np.eye(F.shape[0]))) < 1e-12
    Gx = gram(b.Xb, b.wx)
    assert np.max(np.abs(Gx - np.eye(Gx.shape[0]))) < 1e-12
    Gu = (b.Ux * b.w) @ b.Ux.T + (b.Uy * b.w) @ b.Uy.T
    assert np.max(np.abs(Gu - np.eye(b.n_vel))) < 1e-12


def test_first_ten_bulk_modes_gram():
    b = geo.build_basis(geo.ChannelGeometry(n_x_modes=3, n_y_modes=4))
    G = gram(b.V[:10], b.w)
    assert np.max(np.abs(G - np.eye(10))) < 1e-12


def test_velocity_divergence_free_and_slip(basis43):
    b = basis43
    div = b.Uxx + b.Uyy
    assert np.max(np.abs(div)) <= 1e-12
    assert np.max(np.abs(b.Ub_n)) <= 1e-13


def test_neumann_condition():
    # d/dy of the cosine family vanishes at y = 0 and y = H, evaluated at the walls
    H = 1.0
    m = np.arange(1, 6)
    d0 = -np.sqrt(2 / H) * m * np.pi / H * np.sin(m * np.pi * np.array([[0.0], [H]]) / H)
    assert np.max(np.abs(d0)) <= 1e-13 * np.max(m * np.pi)


def test_to_grid_analytic(basis43):
    b = basis43
    L, H = b.geom.period_length, b.geom.channel_height
    # cos(x) cos(pi y) = (X_1 Y_1) * sqrt(L/2) sqrt(H/2)
    c = np.zeros(b.n_bulk)
    c[1 * b.geom.n_y_modes + 1] = math.sqrt(L / 2) * math.sqrt(H / 2)
    g = geo.to_grid(c, b)
    X, Y = np.meshgrid(b.x, b.y, indexing="ij")
    assert np.max(np.abs(g - np.cos(X) * np.cos(np.pi * Y))) < 1e-13


def test_to_grid_zero_and_constant(basis43):
    b = basis43
    assert np.all(geo.to_grid(np.zeros(b.n_bulk), b) == 0)
    c = np.zeros(b.n_bulk)
    c[0] = 1.0
    assert np.allclose(geo.to_grid(c, b), 1 / math.sqrt(b.geom.area))


def test_to_grid_length_mismatch(basis43):
    with pytest.raises(ValueError):
        geo.to_grid(np.zeros(basis43.n_bulk + 1), basis43)


def test_from_grid_out_of_band():
    b = geo.build_basis(geo.ChannelGeometry(n_x_modes=2, n_y_modes=2))
    X, Y = np.meshgrid(b.x, b.y, indexing="ij")
    assert np.max(np.abs(geo.from_grid(np.cos(3 * X), b))) < 1e-13


def test_from_grid_constant(basis43):
    v = 2.5
    c = geo.from_grid(np.full(basis43.grid_shape, v), basis43)
    assert c[0] == pytest.approx(v * math.sqrt(basis43.geom.area), rel=1e-13)
    assert np.max(np.abs(c[1:])) < 1e-13


def test_from_grid_shape_mismatch(basis43):
    with pytest.raises(ValueError):
        geo.from_grid(np.zeros((3, 3)), basis43)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1), st.sampled_from(["bulk", "boundary", "velocity"]))
def test_round_trip(seed, which):
    b = geo.build_basis(geo.ChannelGeometry(n_x_modes=3, n_y_modes=3))
    n = {"bulk": b.n_bulk, "boundary": b.n_bnd, "velocity": b.n_vel}[which]
    c = np.random.default_rng(seed).standard_normal(n)
    back = geo.from_grid(geo.to_grid(c, b, which), b, which)
    assert np.max(np.abs(back - c)) < 1e-12


def test_gradient_quadrature_eigenrelation(basis43):
    b = basis43
    for j in (0, 2, 5, b.n_bulk - 1):
        e = np.zeros(b.n_bulk)
        e[j] = 1.0
        assert geo.gradient_quadrature(e, e, b) == pytest.approx(b.bulk_eig[j], abs=1e-12)
    e1, e2 = np.eye(b.n_bulk)[3], np.eye(b.n_bulk)[4]
    assert abs(geo.gradient_quadrature(e1, e2, b)) < 1e-12


def test_gradient_quadrature_weighted_oracle():
    # weight 1 + cos(x)/2, low modes; reference: Gauss-Legendre (y) x trapezoid (x) at 4x
    b = geo.build_basis(geo.ChannelGeometry(n_x_modes=3, n_y_modes=3))
    rng = np.random.default_rng(3)
    f, g = rng.standard_normal(b.n_bulk), rng.standard_normal(b.n_bulk)
    wgt = 1 + 0.5 * np.cos(b.x)[:, None] * np.ones((1, b.y.size))
    val = geo.gradient_quadrature(f, g, b, wgt)
    from oracle import Oracle

    class _M:
        basis = b
    o = Oracle(_M, 4)
    W = 1 + 0.5 * np.cos(o.X)
    ref = o.bint(W * (o.field(f, dx=1) * o.field(g, dx=1) + o.field(f, dy=1) * o.field(g, dy=1)))
    assert val == pytest.approx(ref, rel=1e-9)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_gradient_quadrature_symmetric(seed):
    b = geo.build_basis(geo.ChannelGeometry(n_x_modes=3, n_y_modes=2))
    rng = np.random.default_rng(seed)
    f, g = rng.standard_normal(b.n_bulk), rng.standard_normal(b.n_bulk)
    w = 1 + rng.random(b.grid_shape)
    assert geo.gradient_quadrature(f, g, b, w) == pytest.approx(geo.gradient_quadrature(g, f, b, w), rel=1e-12)
    fb, gb = rng.standard_normal(b.n_bnd), rng.standard_normal(b.n_bnd)
    assert geo.gradient_quadrature(fb, gb, b, which="boundary") == pytest.approx(
        float(np.sum(b.bnd_eig * fb * gb)), rel=1e-10, abs=1e-12)


def test_trace_examples(basis43):
    b = basis43
    c = np.zeros(b.n_bulk)
    c[0] = 1.0
    tr = geo.trace(c, b)
    assert np.allclose(tr, 1 / math.sqrt(b.geom.area))
    c = np.zeros(b.n_bulk)
    c[1 * b.geom.n_y_modes + 1] = math.sqrt(b.geom.period_length / 2) * math.sqrt(1 / 2)
    tr = geo.trace(c, b)
    assert np.max(np.abs(tr[0] - np.cos(b.x))) < 1e-13
    assert np.max(np.abs(tr[1] + np.cos(b.x))) < 1e-13


def test_trace_pointwise_oracle(basis43):
    b = basis43
    c = np.random.default_rng(1).standard_normal(b.n_bulk)
    from oracle import Oracle

    class _M:
        basis = b
    o = Oracle(_M, 1)
    tr = geo.trace(c, b)
    ref = np.array([o.field(c, y=0.0), o.field(c, y=b.geom.channel_height)])
    assert np.max(np.abs(tr - ref)) < 1e-12


def test_trace_matrix_consistent(basis43):
    b = basis43
    c = np.random.default_rng(2).standard_normal(b.n_bulk)
    assert np.max(np.abs(geo.to_grid(geo.trace_coeffs(c, b), b, "boundary") - geo.trace(c, b))) < 1e-12


def test_korn_rigid_translation_is_zero(basis43):
    e = np.zeros(basis43.n_vel)
    e[0] = 1.0
    assert geo.korn_ratio(e[None], basis43)[0] == 0.0


def test_poincare_constant_numerator_zero(basis43):
    b = np.zeros(basis43.n_bnd)
    b[0] = b[basis43.n_xfun] = 1.0
    b[1] = 1e-3  # avoid a zero denominator
    g, c = geo.poincare_ratios(b[None], basis43)
    b2 = np.zeros(basis43.n_bnd)
    b2[1] = 1e-3
    g2, c2 = geo.poincare_ratios(b2[None], basis43)
    assert g[0] == pytest.approx(g2[0], rel=1e-12)
    assert c[0] == pytest.approx(c2[0], rel=1e-12)


def test_poincare_zero_denominator_is_nan(basis43):
    b = np.zeros(basis43.n_bnd)
    b[0] = 1.0
    g, c = geo.poincare_ratios(b[None], basis43)
    assert math.isnan(g[0]) and math.isnan(c[0])


def test_certificate_reproducible_and_finite(basis43):
    c1 = geo.korn_poincare_certificate(basis43, 100, seed=5)
    c2 = geo.korn_poincare_certificate(basis43, 100, seed=5)
    assert c1 == c2
    assert np.isfinite(c1.korn_ratio_max) and np.isfinite(c1.poincare_ratio_max)
    assert c1.poincare_circle_ratio_max <= basis43.geom.period_length / (2 * math.pi) + 1e-12


def test_geometry_violations():
    g = geo.ChannelGeometry(n_x_modes=4, n_y_modes=4, n_quad_x=5, n_quad_y=20)
    errs = g.violations()
    assert any("n_quad_x" in e for e in errs)
    with pytest.raises(ValueError):
        geo.build_basis(g)
    assert geo.ChannelGeometry(period_length=-1.0).violations()


def test_summary_is_json(basis43):
    import json
    d = json.loads(basis43.summary())
    assert isinstance(d, dict)
