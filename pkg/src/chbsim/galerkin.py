"""Finite-dimensional Galerkin system: chemical potentials, Brinkman solve, drift.

All state arrays carry leading batch axes (paths).  Bulk coefficients `a`
have length n_bulk, wall coefficients `b` length n_bnd (circle 0 block, then
circle 1), velocity coefficients `e` length n_vel.

The wall coupling enters only through the penalty (eps/K) |phi_G - tr phi|^2;
the bulk basis is Neumann, so eps (phi_G - tr phi)/K is the discrete normal
derivative term and is exposed for diagnostics.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from . import geometry as geo
from .noise import NoiseModel
from .potentials import RegularizedPotential


class NonSPDError(RuntimeError):
    """Brinkman matrix failed its positive-definiteness certificate."""


@dataclass(frozen=True)
class CoefficientFunction:
    """Scalar coefficient s -> f(s).

    kind "constant": f = value.
    kind "tanh_ramp": f = lo + (hi - lo) (1 + tanh s)/2, bounded in (lo, hi).
    """
    kind: str = "constant"
    value: float = 1.0
    lo: float = 1.0
    hi: float = 1.0

    def __post_init__(self):
        if self.kind not in ("constant", "tanh_ramp"):
            raise ValueError(f"unknown coefficient kind {self.kind!r}")

    @property
    def is_constant(self) -> bool:
        return self.kind == "constant" or self.lo == self.hi

    @property
    def const(self) -> float:
        return float(self.value if self.kind == "constant" else self.lo)

    def __call__(self, s):
        s = np.asarray(s, dtype=float)
        if self.kind == "constant":
            return np.full_like(s, self.value)
        return self.lo + (self.hi - self.lo) * 0.5 * (1.0 + np.tanh(s))

    @property
    def bounds(self) -> tuple[float, float]:
        if self.kind == "constant":
            return (float(self.value), float(self.value))
        return (float(min(self.lo, self.hi)), float(max(self.lo, self.hi)))

    def sampled_bounds(self, s_grid=None) -> tuple[float, float]:
        if s_grid is None:
            s_grid = np.linspace(-4, 4, 801)
        v = self(s_grid)
        return float(v.min()), float(v.max())


@dataclass(frozen=True)
class PhysicalParams:
    eps: float = 0.5
    eps_gamma: float = 0.5
    robin_K: float = 1.0
    nu: CoefficientFunction = CoefficientFunction(value=1.0)
    lam: CoefficientFunction = CoefficientFunction(value=1.0)
    gamma: CoefficientFunction = CoefficientFunction(value=1.0)
    mob_bulk: CoefficientFunction = CoefficientFunction(value=1.0)
    mob_bnd: CoefficientFunction = CoefficientFunction(value=1.0)

    def violations(self) -> list[str]:
        errs = []
        for name in ("eps", "eps_gamma"):
            v = getattr(self, name)
            if not v > 0:
                errs.append(f"{name} must be > 0 (got {v})")
        if not self.robin_K > 0:
            errs.append(f"robin_K must be > 0 (paper treats only K>0) (got {self.robin_K})")
        for name in ("nu", "lam", "gamma", "mob_bulk", "mob_bnd"):
            lo, hi = getattr(self, name).sampled_bounds()
            if not lo > 0:
                errs.append(f"{name} must be uniformly positive on [-4, 4] (min {lo})")
            if not np.isfinite(hi):
                errs.append(f"{name} must be bounded on [-4, 4]")
        return errs


@dataclass
class GalerkinState:
    a: np.ndarray
    b: np.ndarray
    c: np.ndarray | None = None
    d: np.ndarray | None = None
    e: np.ndarray | None = None
    time: float = 0.0


class GalerkinModel:
    """Bundles basis, parameters, regularized potentials and noise, with the
    precomputed matrices every step needs.  Immutable after construction."""

    def __init__(self, basis: geo.SpectralBasis, params: PhysicalParams,
                 pot_F: RegularizedPotential, pot_G: RegularizedPotential,
                 noise: NoiseModel | None = None):
        self.basis = basis
        self.params = params
        self.pot_F = pot_F
        self.pot_G = pot_G
        self.noise = noise if noise is not None else NoiseModel(enabled=False)
        B = basis
        w = B.w
        self.T = B.trace_matrix
        self.lam = B.bulk_eig
        self.lam_b = B.bnd_eig
        self.P_bulk = B._proj("bulk")                         # (Nq, n_a)
        self.P_x = np.ascontiguousarray((B.Vx * w).T)
        self.P_y = np.ascontiguousarray((B.Vy * w).T)
        self.P_xfun = B._proj("xfun")                        # (Nx, nX)
        self.P_xfun_d = np.ascontiguousarray((B.Xb_x * B.wx).T)
        self.P_ux = np.ascontiguousarray((B.Ux * w).T)       # (Nq, n_e)
        self.P_uy = np.ascontiguousarray((B.Uy * w).T)
        # wall velocity projection: (2*Nx, n_e) with quadrature weights
        self.Ub_flat = B.Ub.reshape(B.n_vel, -1)
        self.P_ub = np.ascontiguousarray((self.Ub_flat * np.tile(B.wx, 2)).T)
        # strain-rate gram and wall gram
        D12 = 0.5 * (B.Uxy + B.Uyx)
        self.G_strain = 2.0 * ((B.Uxx * w) @ B.Uxx.T + 2 * (D12 * w) @ D12.T
                               + (B.Uyy * w) @ B.Uyy.T)
        self.G_mass = (B.Ux * w) @ B.Ux.T + (B.Uy * w) @ B.Uy.T
        self.G_wall = (self.Ub_flat * np.tile(B.wx, 2)) @ self.Ub_flat.T
        self.G_grad = ((B.Uxx * w) @ B.Uxx.T + (B.Uxy * w) @ B.Uxy.T
                       + (B.Uyx * w) @ B.Uyx.T + (B.Uyy * w) @ B.Uyy.T)
        p = params
        self.const_brinkman = p.nu.is_constant and p.lam.is_constant and p.gamma.is_constant
        self._A_const = None
        self._chol_const = None
        if self.const_brinkman:
            A = p.nu.const * self.G_strain + p.lam.const * self.G_mass + p.gamma.const * self.G_wall
            self._A_const = 0.5 * (A + A.T)
            self._chol_const = self._cholesky(self._A_const)

    # -- small helpers ---------------------------------------------------
    @property
    def n_a(self) -> int:
        return self.basis.n_bulk

    @property
    def n_b(self) -> int:
        return self.basis.n_bnd

    def wall_from_grid(self, vals):
        """(..., 2, Nx) wall grid -> (..., n_b) coefficients."""
        c = vals @ self.P_xfun
        return c.reshape(c.shape[:-2] + (self.n_b,))

    def wall_to_grid(self, b):
        nX = self.basis.n_xfun
        return b.reshape(b.shape[:-1] + (2, nX)) @ self.basis.Xb

    def wall_dx_to_grid(self, b):
        nX = self.basis.n_xfun
        return b.reshape(b.shape[:-1] + (2, nX)) @ self.basis.Xb_x

    def wall_dx_project(self, vals):
        """sum over wall nodes of vals * d/dx Lambda_i, i.e. (vals, d_x Lambda_i)_Gamma."""
        c = vals @ self.P_xfun_d
        return c.reshape(c.shape[:-2] + (self.n_b,))

    @staticmethod
    def _cholesky(A):
        try:
            return sla.cho_factor(A, lower=True, check_finite=True)
        except (np.linalg.LinAlgError, ValueError) as exc:
            raise NonSPDError(f"Brinkman matrix is not positive definite: {exc}") from exc

    # -- chemical potentials ----------------------------------------------
    def chemical_potentials(self, a, b, phi=None, phig=None, dF=None, dG=None):
        p = self.params
        B = self.basis
        if dF is None:
            phi = a @ B.V if phi is None else phi
            dF = self.pot_F.derivative(phi)
        if dG is None:
            phig = self.wall_to_grid(b) if phig is None else phig
            dG = self.pot_G.derivative(phig)
        jump = a @ self.T.T - b                      # tr phi - phi_G
        k = p.eps / p.robin_K
        c = p.eps * self.lam * a + (dF @ self.P_bulk) / p.eps + k * (jump @ self.T)
        d = p.eps_gamma * self.lam_b * b + self.wall_from_grid(dG) / p.eps_gamma - k * jump
        return c, d

    # -- Brinkman -----------------------------------------------------------
    def brinkman_assemble(self, a, b):
        """Velocity-mode matrix for one state (a, b) (no batch axis)."""
        if self.const_brinkman:
            return self._A_const.copy()
        B = self.basis
        p = self.params
        phi = a @ B.V
        phig = self.wall_to_grid(b).reshape(-1)
        w = B.w
        nu = 2.0 * p.nu(phi) * w
        D12 = 0.5 * (B.Uxy + B.Uyx)
        A = (B.Uxx * nu) @ B.Uxx.T + 2 * (D12 * nu) @ D12.T + (B.Uyy * nu) @ B.Uyy.T
        lw = p.lam(phi) * w
        A += (B.Ux * lw) @ B.Ux.T + (B.Uy * lw) @ B.Uy.T
        gw = p.gamma(phig) * np.tile(B.wx, 2)
        A += (self.Ub_flat * gw) @ self.Ub_flat.T
        return 0.5 * (A + A.T)

    def brinkman_rhs(self, phi, mux, muy, phig, thx):
        """f_j = -int_G phi_G d_x theta w_j,x - int phi grad mu . w_j."""
        f = -((phi * mux) @ self.P_ux + (phi * muy) @ self.P_uy)
        wall = (phig * thx).reshape(phig.shape[:-2] + (-1,))
        f -= wall @ self.P_ub
        return f

    def brinkman_solve_rhs(self, a, b, f):
        if self.const_brinkman:
            return sla.cho_solve(self._chol_const, f.T).T
        a2 = np.atleast_2d(a)
        b2 = np.atleast_2d(b)
        f2 = np.atleast_2d(f)
        out = np.empty_like(f2)
        for i in range(f2.shape[0]):
            ch = self._cholesky(self.brinkman_assemble(a2[i], b2[i]))
            out[i] = sla.cho_solve(ch, f2[i])
        return out.reshape(np.shape(f))

    # -- full evaluation ------------------------------------------------------
    def evaluate(self, a, b, with_velocity: bool = True):
        """All derived fields of a batch of states, returned as a StateEval."""
        p = self.params
        B = self.basis
        a = np.asarray(a, dtype=float)
        b = np.asarray(b, dtype=float)
        phi = a @ B.V
        phix, phiy = a @ B.Vx, a @ B.Vy
        phig = self.wall_to_grid(b)
        phig_x = self.wall_dx_to_grid(b)
        Fd, dFd, ddFd = self.pot_F.all_terms(phi)
        Gd, dGd, ddGd = self.pot_G.all_terms(phig)
        c, d = self.chemical_potentials(a, b, dF=dFd, dG=dGd)
        mux, muy = c @ B.Vx, c @ B.Vy
        thx = self.wall_dx_to_grid(d)
        ev = StateEval(a=a, b=b, c=c, d=d, phi=phi, phix=phix, phiy=phiy,
                       phig=phig, phig_x=phig_x, Fd=Fd, dFd=dFd, ddFd=ddFd,
                       Gd=Gd, dGd=dGd, ddGd=ddGd, mux=mux, muy=muy, thx=thx)
        if with_velocity:
            f = self.brinkman_rhs(phi, mux, muy, phig, thx)
            e = self.brinkman_solve_rhs(a, b, f)
            ev.f = f
            ev.e = e
            ev.ux, ev.uy = e @ B.Ux, e @ B.Uy
            ev.ub = (e @ self.Ub_flat).reshape(e.shape[:-1] + (2, B.x.size))
        return ev

    def drift(self, ev: "StateEval"):
        """(da, db) with convective and mobility parts kept separately on ev."""
        p = self.params
        Mo = p.mob_bulk(ev.phi)
        Mg = p.mob_bnd(ev.phig)
        conv_a = (ev.phi * ev.ux) @ self.P_x + (ev.phi * ev.uy) @ self.P_y
        mob_a = (Mo * ev.mux) @ self.P_x + (Mo * ev.muy) @ self.P_y
        conv_b = self.wall_dx_project(ev.phig * ev.ub)
        mob_b = self.wall_dx_project(Mg * ev.thx)
        ev.conv_a, ev.conv_b = conv_a, conv_b
        ev.Mo, ev.Mg = Mo, Mg
        return conv_a - mob_a, conv_b - mob_b

    # -- energy -----------------------------------------------------------------
    def energy(self, ev: "StateEval", base: bool = False):
        """(E, E_tot).  base=True uses the unregularized F, G (Lyapunov form)."""
        p = self.params
        B = self.basis
        a, b = ev.a, ev.b
        if base:
            Fv = self.pot_F.base.value(ev.phi)
            Gv = self.pot_G.base.value(ev.phig)
        else:
            Fv, Gv = ev.Fd, ev.Gd
        jump = a @ self.T.T - b
        E = (0.5 * p.eps * np.sum(self.lam * a * a, axis=-1)
             + (Fv @ B.w) / p.eps
             + 0.5 * p.eps_gamma * np.sum(self.lam_b * b * b, axis=-1)
             + geo.integrate(Gv, B, "boundary") / p.eps_gamma
             + 0.5 * p.eps / p.robin_K * np.sum(jump * jump, axis=-1))
        return E, E + 0.5 * np.sum(a * a, axis=-1)

    def dissipation(self, ev: "StateEval"):
        """(int 2nu|Du|^2, int lam|u|^2, int_G gamma|u|^2, int M|grad mu|^2, int_G M_G|theta_x|^2)."""
        p = self.params
        B = self.basis
        e = ev.e
        if self.const_brinkman:
            visc = p.nu.const * np.einsum("...i,ij,...j->...", e, self.G_strain, e)
            perm = p.lam.const * np.einsum("...i,ij,...j->...", e, self.G_mass, e)
            fric = p.gamma.const * np.einsum("...i,ij,...j->...", e, self.G_wall, e)
        else:
            gxx, gxy, gyx, gyy = e @ B.Uxx, e @ B.Uxy, e @ B.Uyx, e @ B.Uyy
            d12 = 0.5 * (gxy + gyx)
            visc = (2 * p.nu(ev.phi) * (gxx**2 + 2 * d12**2 + gyy**2)) @ B.w
            perm = (p.lam(ev.phi) * (ev.ux**2 + ev.uy**2)) @ B.w
            fric = geo.integrate(p.gamma(ev.phig) * ev.ub**2, B, "boundary")
        Mo = ev.Mo if ev.Mo is not None else p.mob_bulk(ev.phi)
        Mg = ev.Mg if ev.Mg is not None else p.mob_bnd(ev.phig)
        dmu = (Mo * (ev.mux**2 + ev.muy**2)) @ B.w
        dth = geo.integrate(Mg * ev.thx**2, B, "boundary")
        return visc, perm, fric, dmu, dth

    # -- mean chemical potentials -----------------------------------------------
    def growth_constants(self, s_range: float = 40.0):
        """Sampled constants C with |F_d'| <= C(1 + |F_d|) (and for G) on [-R, R]."""
        if getattr(self, "_growth_range", None) != s_range:
            self._growth_range = s_range
            s = np.linspace(-s_range, s_range, 40001)
            self._growth = (self.pot_F.growth_constant(s), self.pot_G.growth_constant(s))
        return self._growth


@dataclass
class StateEval:
    a: np.ndarray
    b: np.ndarray
    c: np.ndarray
    d: np.ndarray
    phi: np.ndarray
    phix: np.ndarray
    phiy: np.ndarray
    phig: np.ndarray
    phig_x: np.ndarray
    Fd: np.ndarray
    dFd: np.ndarray
    ddFd: np.ndarray
    Gd: np.ndarray
    dGd: np.ndarray
    ddGd: np.ndarray
    mux: np.ndarray
    muy: np.ndarray
    thx: np.ndarray
    f: np.ndarray | None = None
    e: np.ndarray | None = None
    ux: np.ndarray | None = None
    uy: np.ndarray | None = None
    ub: np.ndarray | None = None
    conv_a: np.ndarray | None = None
    conv_b: np.ndarray | None = None
    Mo: np.ndarray | None = None
    Mg: np.ndarray | None = None


# -- functional interface ---------------------------------------------------------

def chemical_potentials(a, b, model: GalerkinModel):
    return model.chemical_potentials(np.asarray(a, float), np.asarray(b, float))


def brinkman_assemble(a, b, model: GalerkinModel, check: bool = True):
    A = model.brinkman_assemble(np.asarray(a, float), np.asarray(b, float))
    if check:
        model._cholesky(A)
    return A


def brinkman_solve(a, b, c, d, model: GalerkinModel):
    B = model.basis
    a = np.asarray(a, float)
    b = np.asarray(b, float)
    phi = a @ B.V
    phig = model.wall_to_grid(b)
    f = model.brinkman_rhs(phi, c @ B.Vx, c @ B.Vy, phig, model.wall_dx_to_grid(d))
    return model.brinkman_solve_rhs(a, b, f)


def drift(a, b, model: GalerkinModel):
    """(da, db, GalerkinState with the induced c, d, e)."""
    ev = model.evaluate(a, b)
    da, db = model.drift(ev)
    return da, db, GalerkinState(a=ev.a, b=ev.b, c=ev.c, d=ev.d, e=ev.e)


def mean_chemical_potential_bound(a, b, model: GalerkinModel):
    """Means of mu over the channel and theta over the walls, with certified bounds.

    Integrating the discrete chemical-potential relations against constants:
        int mu      = (1/eps) int F_d'(phi) + (eps/K) int_G (tr phi - phi_G)
        int_c theta = (1/eps_G) int_c G_d'(phi_G) + (eps/K) int_c (phi_G - tr phi)
    on each wall circle c.  Cauchy-Schwarz and the sampled growth constant
    |F_d'| <= C_F (1 + |F_d|) give bounds of the form C (1 + |jump| + ||F_d||_L1).
    """
    p = model.params
    B = model.basis
    g = B.geom
    a = np.asarray(a, float)
    b = np.asarray(b, float)
    ev = model.evaluate(a, b, with_velocity=False)
    area, blen, L = g.area, g.boundary_length, g.period_length
    k = p.eps / p.robin_K
    mu_mean = (ev.c @ B.V) @ B.w / area
    th = model.wall_to_grid(ev.d)
    theta_mean = geo.integrate(th, B, "boundary") / blen
    theta_circle = (th @ B.wx) / L
    jump = a @ model.T.T - b
    jump_l2 = np.sqrt(np.sum(jump * jump, axis=-1))
    jump_c = np.sqrt(np.sum(jump.reshape(jump.shape[:-1] + (2, -1)) ** 2, axis=-1))
    CF, CG = model.growth_constants()
    F_l1 = np.abs(ev.Fd) @ B.w
    G_l1 = geo.integrate(np.abs(ev.Gd), B, "boundary")
    G_l1_c = np.abs(ev.Gd) @ B.wx
    dF_l1 = np.abs(ev.dFd) @ B.w
    dG_l1 = geo.integrate(np.abs(ev.dGd), B, "boundary")
    # direct bounds (Cauchy-Schwarz only)
    mu_direct = (k * np.sqrt(blen) * jump_l2 + dF_l1 / p.eps) / area
    th_direct = (k * np.sqrt(blen) * jump_l2 + dG_l1 / p.eps_gamma) / blen
    # structural bounds C (1 + |jump| + ||F_d||_L1)
    C_mu = max(k * np.sqrt(blen) / area, CF / p.eps, CF / (p.eps * area))
    C_th = max(k * np.sqrt(blen) / blen, CG / p.eps_gamma, CG / (p.eps_gamma * blen))
    C_thc = max(k * np.sqrt(L) / L, CG / p.eps_gamma, CG / (p.eps_gamma * L))
    mu_struct = C_mu * (1 + jump_l2 + F_l1)
    th_struct = C_th * (1 + jump_l2 + G_l1)
    thc_struct = C_thc * (1 + jump_c + G_l1_c)
    bounds = {
        "mu_direct": mu_direct, "theta_direct": th_direct,
        "mu_structural": mu_struct, "theta_structural": th_struct,
        "theta_circle_structural": thc_struct,
        "C_mu": C_mu, "C_theta": C_th, "C_theta_circle": C_thc,
        "growth_F": CF, "growth_G": CG,
        "F_delta_L1": F_l1, "G_delta_L1": G_l1, "jump_L2": jump_l2,
        "theta_circle_mean": theta_circle,
        "holds": bool(np.all(np.abs(mu_mean) <= mu_direct * (1 + 1e-12) + 1e-14)
                      and np.all(mu_direct <= mu_struct * (1 + 1e-12))
                      and np.all(np.abs(theta_mean) <= th_direct * (1 + 1e-12) + 1e-14)
                      and np.all(th_direct <= th_struct * (1 + 1e-12))
                      and np.all(np.abs(theta_circle) <= thc_struct * (1 + 1e-12))),
    }
    return mu_mean, theta_mean, bounds


def chemical_potential_control(a, b, model: GalerkinModel):
    """||(mu, theta)||^2 against the Poincare-based bound, per state.

    Bulk: |mu|^2 <= |grad mu|^2 / lam_1 + |O| mean(mu)^2 (exact for the
    Neumann basis).  Walls, circle by circle: |theta|^2 <= (L/2pi)^2 |theta_x|^2
    + L mean_c(theta)^2.  The means are replaced by their structural bounds.
    Returns (lhs, explicit_rhs, structural_C, structural_rhs).
    """
    p = model.params
    B = model.basis
    g = B.geom
    ev = model.evaluate(a, b, with_velocity=False)
    lam1 = np.min(B.bulk_eig[B.bulk_eig > 1e-12]) if np.any(B.bulk_eig > 1e-12) else np.inf
    L = g.period_length
    cp_wall = (L / (2 * np.pi)) ** 2
    lhs = np.sum(ev.c**2, axis=-1) + np.sum(ev.d**2, axis=-1)
    grad_mu = np.sum(B.bulk_eig * ev.c**2, axis=-1)
    grad_th = np.sum(B.bnd_eig * ev.d**2, axis=-1)
    _, _, bd = mean_chemical_potential_bound(a, b, model)
    circ = bd["theta_circle_structural"]
    rhs = (grad_mu / lam1 + g.area * bd["mu_structural"] ** 2
           + cp_wall * grad_th + L * np.sum(circ**2, axis=-1))
    # (x + y + z)^2 <= 3 (x^2 + y^2 + z^2) turns the squared means into the structural form
    C = max(1 / lam1, cp_wall,
            3 * g.area * bd["C_mu"] ** 2 + 2 * 3 * L * bd["C_theta_circle"] ** 2)
    jump = bd["jump_L2"]
    struct = C * (1 + grad_mu + grad_th + jump**2 + bd["F_delta_L1"] ** 2 + bd["G_delta_L1"] ** 2)
    return lhs, rhs, C, struct
