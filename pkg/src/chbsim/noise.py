"""Truncated cylindrical Wiener noise with Nemytskii (pointwise) diffusion.

sigma_k(s) = c_k g(s),  c_k = amplitude * c0 * k^(-rho),  k = 1..K_W.

Random numbers are counter based: a Philox key is derived from
(master_seed, path) and every step owns a fixed block of counters, so each
draw is addressed by (path, step, stream, mode) and never depends on how
paths are grouped or scheduled.  Normals come from the inverse CDF of
uniforms, which consume exactly one 64-bit word each.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import ndtri

from . import geometry as geo

_PROFILES = {
    # name: (g, g', sup|g|, sup|g'|)
    "tanh": (np.tanh, lambda s: 1.0 / np.cosh(s) ** 2, 1.0, 1.0),
    "sin": (np.sin, np.cos, 1.0, 1.0),
    "constant": (np.ones_like, np.zeros_like, 1.0, 0.0),
}


@dataclass(frozen=True)
class NoiseFamily:
    """One diffusion family sigma_k = c_k g."""
    n_modes: int = 16
    c0: float = 1.0
    rho: float = 1.0
    amplitude: float = 0.1
    profile: str = "tanh"

    def __post_init__(self):
        if self.profile not in _PROFILES:
            raise ValueError(f"unknown noise profile {self.profile!r}")

    @property
    def weights(self) -> np.ndarray:
        k = np.arange(1, self.n_modes + 1, dtype=float)
        return self.amplitude * self.c0 * k ** (-self.rho)

    @property
    def weight_sq_sum(self) -> float:
        return float(np.sum(self.weights**2))

    def g(self, s):
        return _PROFILES[self.profile][0](np.asarray(s, dtype=float))

    def dg(self, s):
        return _PROFILES[self.profile][1](np.asarray(s, dtype=float))

    @property
    def g_sup(self) -> float:
        return _PROFILES[self.profile][2]

    @property
    def dg_sup(self) -> float:
        return _PROFILES[self.profile][3]

    def tail_bound(self) -> float:
        """Closed-form bound on sum_{k > K_W} c_k^2 (needs rho > 1/2)."""
        if self.rho <= 0.5:
            return float("inf")
        a = (self.amplitude * self.c0) ** 2
        return float(a * self.n_modes ** (1 - 2 * self.rho) / (2 * self.rho - 1))

    def summability_bound(self) -> float:
        """Bound on sum_k ||sigma_k||^2_{W^{1,inf}} over the untruncated series."""
        if self.rho <= 0.5:
            return float("inf")
        a = (self.amplitude * self.c0) ** 2
        return float(a * (1 + 1 / (2 * self.rho - 1)) * max(self.g_sup, self.dg_sup) ** 2)

    def sup_bound(self) -> float:
        """C~ = ||g||_inf^2 sum c_k^2, bound on sum_k ||sigma_k(phi)||_inf^2."""
        return self.g_sup**2 * self.weight_sq_sum

    def lipschitz_constant(self) -> float:
        """C2 with ||F(phi) - F(psi)||^2_HS <= C2 |phi - psi|^2."""
        return self.dg_sup**2 * self.weight_sq_sum

    def h1_constant(self, measure: float) -> float:
        """C1 with sum_k ||sigma_k(phi)||^2_H1 <= C1 (1 + |grad phi|^2)."""
        return self.weight_sq_sum * max(self.g_sup**2 * measure, self.dg_sup**2)


@dataclass(frozen=True)
class NoiseModel:
    bulk: NoiseFamily = NoiseFamily()
    boundary: NoiseFamily = NoiseFamily()
    # "independent": W and W_Gamma independent; "shared": W_Gamma = W mode by mode
    coupling: str = "independent"
    enabled: bool = True

    def __post_init__(self):
        if self.bulk.n_modes != self.boundary.n_modes:
            raise ValueError("bulk and boundary truncations must agree")
        if self.coupling not in ("independent", "shared"):
            raise ValueError(f"unknown noise coupling {self.coupling!r}")

    @property
    def n_w_modes(self) -> int:
        return self.bulk.n_modes

    @property
    def correlation(self) -> float:
        return 1.0 if self.coupling == "shared" else 0.0


@dataclass(frozen=True)
class WienerIncrement:
    dt: float
    bulk_draws: np.ndarray        # (..., K_W)
    boundary_draws: np.ndarray
    path_seed: tuple = ()
    step_index: int | np.ndarray = 0


def path_key(master_seed: int, path: int) -> np.ndarray:
    ss = np.random.SeedSequence([int(master_seed), int(path)])
    return ss.generate_state(2, dtype=np.uint64)


def _blocks_per_step(n_modes: int) -> int:
    # Philox emits 4 words per counter value; bulk then boundary draws
    return -(-2 * n_modes // 4)


def _uniforms(key, first_step: int, n_steps: int, n_modes: int) -> np.ndarray:
    B = _blocks_per_step(n_modes)
    bg = np.random.Philox(key=key, counter=[first_step * B, 0, 0, 0])
    u = np.random.Generator(bg).random(n_steps * 4 * B)
    return u.reshape(n_steps, 4 * B)[:, : 2 * n_modes]


def standard_normals(master_seed: int, path: int, first_step: int, n_steps: int,
                     n_modes: int) -> np.ndarray:
    """Unit normals for steps [first_step, first_step + n_steps), shape (n, 2, K_W)."""
    u = _uniforms(path_key(master_seed, path), first_step, n_steps, n_modes)
    # random() lives on the 2^-53 lattice in [0, 1); shift to the open interval
    z = ndtri(u + 2.0**-54)
    return z.reshape(n_steps, 2, n_modes)


def sample_increment(rng_key, dt: float, model: NoiseModel | None = None,
                     n_modes: int | None = None) -> WienerIncrement:
    """Increment for one step; rng_key = (master_seed, path_index, step_index)."""
    if dt < 0:
        raise ValueError("dt must be >= 0")
    seed, path, step = (int(v) for v in rng_key)
    K = n_modes if n_modes is not None else (model.n_w_modes if model else 16)
    z = standard_normals(seed, path, step, 1, K)[0] * np.sqrt(dt)
    bnd = z[0] if (model is not None and model.coupling == "shared") else z[1]
    return WienerIncrement(dt=dt, bulk_draws=z[0], boundary_draws=bnd,
                           path_seed=(seed, path), step_index=step)


def brownian_increments(master_seed: int, path: int, n_steps: int, dt: float,
                        n_modes: int, refine: int = 1, shared: bool = False):
    """Increments for a whole path on the dt grid.

    The underlying draws live on the fine grid dt/refine; coarse increments are
    sums of `refine` consecutive fine increments, so a dt ladder driven by one
    fine level sees the same Brownian path.  Returns (bulk, boundary), each of
    shape (n_steps, K_W).
    """
    z = standard_normals(master_seed, path, 0, n_steps * refine, n_modes)
    z = z * np.sqrt(dt / refine)
    if refine > 1:
        z = z.reshape(n_steps, refine, 2, n_modes).sum(axis=1)
    bnd = z[:, 0] if shared else z[:, 1]
    return z[:, 0], bnd


def diffusion_apply(state_grid, model: NoiseModel, increment: WienerIncrement,
                    which: str = "bulk"):
    """sum_k sigma_k(phi) dW^k on the grid (unprojected Euler increment)."""
    fam = model.bulk if which == "bulk" else model.boundary
    dw = np.asarray(increment.bulk_draws if which == "bulk" else increment.boundary_draws)
    if dw.shape[-1] != fam.n_modes:
        raise ValueError(f"increment has {dw.shape[-1]} modes, model has {fam.n_modes}")
    amp = dw @ fam.weights
    g = fam.g(state_grid)
    extra = g.ndim - np.ndim(amp)
    return g * np.reshape(amp, np.shape(amp) + (1,) * extra)


def hilbert_schmidt_norms(state_grid, model: NoiseModel, which: str,
                          basis: geo.SpectralBasis, grad_grid=None):
    """(sum_k ||sigma_k(phi)||^2_L2, sum_k ||sigma_k(phi)||^2_H1) by quadrature.

    grad_grid is the gradient of phi on the grid: a pair (phi_x, phi_y) for the
    bulk (flat grids) or the tangential derivative for the walls.
    """
    fam = model.bulk if which == "bulk" else model.boundary
    c2 = fam.weight_sq_sum
    kind = "bulk" if which == "bulk" else "boundary"
    g = fam.g(state_grid)
    l2 = c2 * geo.integrate(g * g, basis, kind)
    if grad_grid is None:
        return l2, float("nan")
    dg = fam.dg(state_grid)
    if which == "bulk":
        gx, gy = grad_grid
        dg = dg.reshape(np.shape(gx))
        h = c2 * geo.integrate(dg**2 * (gx**2 + gy**2), basis, "bulk")
    else:
        h = c2 * geo.integrate(dg**2 * np.asarray(grad_grid) ** 2, basis, "boundary")
    return l2, l2 + h
