import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))

from chbsim import geometry as geo
from chbsim.galerkin import CoefficientFunction, GalerkinModel, PhysicalParams
from chbsim.noise import NoiseFamily, NoiseModel
from chbsim.potentials import RegularizedPotential, SmoothPotential


def ramp(lo, hi):
    return CoefficientFunction("tanh_ramp", lo=lo, hi=hi)


def make_model(n=4, ny=None, delta=0.1, amp=0.5, noise=True, variable=False, nq=None,
               coupling="independent", params=None):
    ny = n if ny is None else ny
    g = geo.ChannelGeometry(n_x_modes=n, n_y_modes=ny,
                            n_quad_x=None if nq is None else nq * n,
                            n_quad_y=None if nq is None else nq * ny)
    b = geo.build_basis(g)
    F = RegularizedPotential(SmoothPotential(), delta)
    if params is None:
        params = (PhysicalParams(nu=ramp(0.5, 1.5), lam=ramp(0.2, 0.4), gamma=ramp(0.5, 1.0),
                                 mob_bulk=ramp(0.5, 1.0), mob_bnd=ramp(0.5, 1.0))
                  if variable else PhysicalParams())
    fam = NoiseFamily(amplitude=amp)
    nm = NoiseModel(fam, fam, coupling=coupling, enabled=noise)
    return GalerkinModel(b, params, F, F, nm)


def slow_initial(basis, A=0.3):
    H = basis.geom.channel_height
    X = basis.x[:, None] * np.ones((1, basis.y.size))
    Y = np.ones((basis.x.size, 1)) * basis.y[None, :]
    phi = 0.1 + A * (np.cos(X) + 0.6 * np.cos(np.pi * Y / H) + 0.6 * np.sin(X) * np.cos(np.pi * Y / H))
    a0 = geo.from_grid(phi, basis)
    return a0, geo.trace_coeffs(a0, basis)


@pytest.fixture(scope="session")
def basis43():
    return geo.build_basis(geo.ChannelGeometry(n_x_modes=4, n_y_modes=3))


@pytest.fixture(scope="session")
def model4():
    return make_model(4)


@pytest.fixture(scope="session")
def model_var():
    return make_model(3, variable=True)


def pytest_terminal_summary(terminalreporter):
    from acceptance_log import LINES
    if LINES:
        terminalreporter.section("acceptance criteria")
        for line in LINES:
            terminalreporter.write_line(line)
