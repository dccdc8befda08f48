import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from chbsim import geometry as geo
from chbsim.noise import (NoiseFamily, NoiseModel, WienerIncrement, brownian_increments,
                          diffusion_apply, hilbert_schmidt_norms, sample_increment,
                          standard_normals)


def test_sample_increment_deterministic():
    a = sample_increment((7, 3, 11), 0.01)
    b = sample_increment((7, 3, 11), 0.01)
    assert np.array_equal(a.bulk_draws, b.bulk_draws)
    assert np.array_equal(a.boundary_draws, b.boundary_draws)
    c = sample_increment((7, 4, 11), 0.01)
    assert not np.array_equal(a.bulk_draws, c.bulk_draws)


def test_zero_dt_increment_is_zero():
    inc = sample_increment((1, 0, 0), 0.0)
    assert np.all(inc.bulk_draws == 0)
    with pytest.raises(ValueError):
        sample_increment((1, 0, 0), -1.0)


def test_increment_variance():
    z = standard_normals(5, 0, 0, 20000, 16)
    assert abs(z.mean()) < 0.01
    assert abs(z.var() - 1) < 0.01


def test_chunking_independent():
    whole = standard_normals(9, 2, 0, 50, 5)
    parts = np.concatenate([standard_normals(9, 2, 0, 17, 5), standard_normals(9, 2, 17, 33, 5)])
    assert np.array_equal(whole, parts)
    inc = sample_increment((9, 2, 20), 1.0, n_modes=5)
    assert np.array_equal(inc.bulk_draws, whole[20, 0])


def test_refined_increments_sum():
    fine, _ = brownian_increments(3, 1, 40, 0.01, 4, refine=1)
    coarse, _ = brownian_increments(3, 1, 10, 0.04, 4, refine=4)
    assert np.allclose(coarse, fine.reshape(10, 4, 4).sum(axis=1), atol=1e-14)


def test_shared_coupling():
    b, g = brownian_increments(3, 1, 10, 0.01, 4, shared=True)
    assert np.array_equal(b, g)
    inc = sample_increment((3, 1, 0), 0.1, NoiseModel(coupling="shared"))
    assert np.array_equal(inc.bulk_draws, inc.boundary_draws)
    with pytest.raises(ValueError):
        NoiseModel(coupling="partial")


def test_weights_and_bounds():
    fam = NoiseFamily(n_modes=4, c0=2.0, rho=1.0, amplitude=0.5)
    assert np.allclose(fam.weights, [1.0, 0.5, 1 / 3, 0.25])
    assert fam.sup_bound() == pytest.approx(fam.weight_sq_sum)
    # tail bound dominates the actual tail of the untruncated series
    k = np.arange(5, 200000, dtype=float)
    assert np.sum((1.0 / k) ** 2) <= fam.tail_bound()
    assert NoiseFamily(rho=0.5).tail_bound() == float("inf")


@settings(max_examples=30, deadline=None)
@given(st.floats(-1, 1), st.floats(-1, 1))
def test_diffusion_linear_in_increment(al, be):
    nm = NoiseModel()
    phi = np.linspace(-2, 2, 30)
    d1 = np.random.default_rng(0).standard_normal(16)
    d2 = np.random.default_rng(1).standard_normal(16)
    inc = lambda d: WienerIncrement(1.0, d, d)
    lhs = diffusion_apply(phi, nm, inc(al * d1 + be * d2))
    rhs = al * diffusion_apply(phi, nm, inc(d1)) + be * diffusion_apply(phi, nm, inc(d2))
    assert np.allclose(lhs, rhs, atol=1e-12)


def test_diffusion_mode_mismatch():
    with pytest.raises(ValueError):
        diffusion_apply(np.zeros(3), NoiseModel(), WienerIncrement(1.0, np.zeros(3), np.zeros(3)))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_hs_norms_bounded_and_lipschitz(seed):
    b = geo.build_basis(geo.ChannelGeometry(n_x_modes=3, n_y_modes=3))
    nm = NoiseModel()
    rng = np.random.default_rng(seed)
    a1, a2 = rng.standard_normal((2, b.n_bulk))
    p1, p2 = geo.to_grid(a1, b), geo.to_grid(a2, b)
    l2, _ = hilbert_schmidt_norms(p1, nm, "bulk", b)
    assert l2 <= nm.bulk.sup_bound() * b.geom.area * (1 + 1e-12)
    fam = nm.bulk
    diff = fam.weight_sq_sum * geo.integrate((fam.g(p1) - fam.g(p2)) ** 2, b, "bulk")
    assert diff <= fam.lipschitz_constant() * geo.integrate((p1 - p2) ** 2, b, "bulk") * (1 + 1e-12)
    gx, gy = geo.bulk_gradient(a1, b)
    l2b, h1 = hilbert_schmidt_norms(p1, nm, "bulk", b, (gx, gy))
    grad2 = geo.integrate(gx**2 + gy**2, b, "bulk")
    assert h1 <= fam.h1_constant(b.geom.area) * (1 + grad2) * (1 + 1e-12)
