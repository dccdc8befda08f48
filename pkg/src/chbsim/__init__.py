"""Spectral Galerkin simulator for a stochastic Cahn-Hilliard-Brinkman system
with dynamic boundary conditions on a periodic channel."""
from .config import RunConfig, parse_config, serialize_config, config_hash
from .geometry import ChannelGeometry, SpectralBasis, build_basis
from .galerkin import GalerkinModel, PhysicalParams, CoefficientFunction
from .noise import NoiseFamily, NoiseModel
from .potentials import RegularizedPotential, SmoothPotential
from .timestepper import SchemeConfig, PathResult, simulate_batch, simulate_path

__version__ = "0.1.0"
