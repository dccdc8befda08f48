"""Euler-Maruyama and IMEX Euler-Maruyama integration of the Galerkin SDE.

Paths are advanced in batches (leading axis = path) so that the grid
transforms become matrix products.  Every batch is computed the same way no
matter which worker runs it; draws are keyed per path (see noise).

IMEX splitting: the constant-coefficient linear part

    bulk  -Mref lam_i (eps lam_i a_i + S_F/eps a_i + (eps/K) (T^T (T a - b))_i)
    wall  -Nref lamG_i (epsG lamG_i b_i + S_G/epsG b_i + (eps/K) (b - T a)_i)

is implicit; the rest of the drift is explicit at the old state.  S_F, S_G
are stabilization constants (subtracted again explicitly).  Mref, Nref are the
mobility upper bounds, so only the constant mode rows are zero and the bulk
mass is carried exactly.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from . import geometry as geo
from .diagnostics import identity_residual
from .galerkin import GalerkinModel, StateEval
from .noise import brownian_increments
from .potentials import ResolventError


class NumericalAbort(RuntimeError):
    pass


@dataclass(frozen=True)
class SchemeConfig:
    dt: float = 1e-3
    n_steps: int = 100
    scheme: str = "imex"                  # "imex" | "explicit"
    kappa_guard: float | None = None      # None -> 10 (initial guard + 1)
    imex_mobility_freeze: bool = True
    stabilization: float | str = "auto"   # "auto" -> half the sup of F_d''
    decimate: int = 10

    def violations(self) -> list[str]:
        errs = []
        if not self.dt > 0:
            errs.append(f"scheme.dt must be > 0 (got {self.dt})")
        if not (isinstance(self.n_steps, (int, np.integer)) and self.n_steps >= 1):
            errs.append(f"scheme.n_steps must be a positive integer (got {self.n_steps!r})")
        if self.scheme not in ("imex", "explicit"):
            errs.append(f"scheme.scheme must be 'imex' or 'explicit' (got {self.scheme!r})")
        if self.kappa_guard is not None and not self.kappa_guard > 0:
            errs.append(f"scheme.kappa_guard must be > 0 (got {self.kappa_guard})")
        if self.imex_mobility_freeze is not True:
            errs.append("scheme.imex_mobility_freeze must be true "
                        "(mobility is always taken at the old time level)")
        if not (self.stabilization == "auto" or
                (isinstance(self.stabilization, (int, float)) and self.stabilization >= 0)):
            errs.append(f"scheme.stabilization must be 'auto' or >= 0 (got {self.stabilization!r})")
        if not (isinstance(self.decimate, (int, np.integer)) and self.decimate >= 1):
            errs.append(f"scheme.decimate must be a positive integer (got {self.decimate!r})")
        return errs


LEDGER_COLUMNS = (
    "t", "E", "E_tot", "E_lyap", "mass", "mass_bnd", "guard",
    "diss_visc", "diss_perm", "diss_fric", "diss_mu", "diss_theta",
    "ito_grad", "ito_grad_bnd", "ito_F", "ito_G", "ito_robin", "ito_cross", "ito_l2",
    "hs_F2_proj", "int_g_phi",
    "mob_cross", "stoch_mu", "stoch_theta", "stoch_phi",
    "hs_F1", "hs_F2", "curv_F", "curv_G", "grad_phi_sq", "grad_phig_sq",
    "grad_u_sq", "grad_mu_sq", "grad_theta_sq", "phig_l2", "conv_bulk", "conv_bnd",
    "residual",
)


@dataclass
class PathResult:
    path_index: int
    dt: float
    times: np.ndarray
    ledger: dict
    snap_times: np.ndarray
    snap_a: np.ndarray
    snap_b: np.ndarray
    stopped_at: int | None
    seed_key: tuple
    kappa: float

    @property
    def n_rows(self) -> int:
        return self.times.size


def stabilization_constants(model: GalerkinModel, scheme: SchemeConfig):
    if scheme.stabilization == "auto":
        sF = 0.5 * max(0.0, 1.0 / model.pot_F.delta - model.pot_F.shift)
        sG = 0.5 * max(0.0, 1.0 / model.pot_G.delta - model.pot_G.shift)
        return sF, sG
    return float(scheme.stabilization), float(scheme.stabilization)


def imex_operator(model: GalerkinModel, sF: float, sG: float) -> np.ndarray:
    p = model.params
    T = model.T
    lam, lamb = model.lam, model.lam_b
    k = p.eps / p.robin_K
    Mref = p.mob_bulk.bounds[1]
    Nref = p.mob_bnd.bounds[1]
    na, nb = model.n_a, model.n_b
    L = np.zeros((na + nb, na + nb))
    Haa = np.diag(p.eps * lam + sF / p.eps) + k * (T.T @ T)
    Hab = -k * T.T
    Hbb = np.diag(p.eps_gamma * lamb + sG / p.eps_gamma + k)
    Hba = -k * T
    L[:na, :na] = -Mref * lam[:, None] * Haa
    L[:na, na:] = -Mref * lam[:, None] * Hab
    L[na:, :na] = -Nref * lamb[:, None] * Hba
    L[na:, na:] = -Nref * lamb[:, None] * Hbb
    return L


def guard_quantity(model: GalerkinModel, a, b):
    """(||phi||_V1^2 + |phi_G - tr phi|^2 + |grad_G phi_G|^2)^(1/2)."""
    jump = a @ model.T.T - b
    q = (np.sum((1 + model.lam) * a * a, axis=-1) + np.sum(jump * jump, axis=-1)
         + np.sum(model.lam_b * b * b, axis=-1))
    return np.sqrt(q)


def ledger_row(model: GalerkinModel, ev: StateEval, s=None, sb=None):
    """Ledger quantities at one time level (batched).  s, sb: projected noise
    profiles P(g(phi)), P_G(g(phi_G)) or None without noise."""
    p = model.params
    B = model.basis
    nm = model.noise
    E, Et = model.energy(ev)
    _, El = model.energy(ev, base=True)
    visc, perm, fric, dmu, dth = model.dissipation(ev)
    a, b, c, d, e = ev.a, ev.b, ev.c, ev.d, ev.e
    row = {
        "E": E, "E_tot": Et, "E_lyap": El,
        "mass": a[..., 0] * np.sqrt(B.geom.area),
        "mass_bnd": (b[..., 0] + b[..., B.n_xfun]) * np.sqrt(B.geom.period_length),
        "guard": guard_quantity(model, a, b),
        "diss_visc": visc, "diss_perm": perm, "diss_fric": fric,
        "diss_mu": dmu, "diss_theta": dth,
        "mob_cross": -((ev.Mo * (ev.mux * ev.phix + ev.muy * ev.phiy)) @ B.w),
        "grad_phi_sq": np.sum(model.lam * a * a, axis=-1),
        "grad_phig_sq": np.sum(model.lam_b * b * b, axis=-1),
        "grad_u_sq": np.einsum("...i,ij,...j->...", e, model.G_grad, e),
        "grad_mu_sq": np.sum(model.lam * c * c, axis=-1),
        "grad_theta_sq": np.sum(model.lam_b * d * d, axis=-1),
        "phig_l2": np.sqrt(np.sum(b * b, axis=-1)),
        "conv_bulk": np.sum(a * ev.conv_a, axis=-1),
        "conv_bnd": geo.integrate(ev.phig * ev.ub * ev.phig_x, B, "boundary"),
    }
    zeros = np.zeros_like(E)
    if s is None or not nm.enabled:
        for k in ("ito_grad", "ito_grad_bnd", "ito_F", "ito_G", "ito_robin", "ito_cross",
                  "ito_l2", "hs_F2_proj", "int_g_phi", "hs_F1", "hs_F2", "curv_F", "curv_G"):
            row[k] = zeros.copy()
        return row
    C2 = nm.bulk.weight_sq_sum
    C2b = nm.boundary.weight_sq_sum
    Cx = float(np.dot(nm.bulk.weights, nm.boundary.weights)) * nm.correlation
    sg = s @ B.V
    sbg = model.wall_to_grid(sb)
    Ts = s @ model.T.T
    kk = p.eps / p.robin_K
    row["ito_grad"] = 0.5 * p.eps * C2 * np.sum(model.lam * s * s, axis=-1)
    row["ito_grad_bnd"] = 0.5 * p.eps_gamma * C2b * np.sum(model.lam_b * sb * sb, axis=-1)
    row["ito_F"] = 0.5 / p.eps * C2 * ((ev.ddFd * sg * sg) @ B.w)
    row["ito_G"] = 0.5 / p.eps_gamma * C2b * geo.integrate(ev.ddGd * sbg * sbg, B, "boundary")
    row["ito_robin"] = 0.5 * kk * (C2b * np.sum(sb * sb, axis=-1) + C2 * np.sum(Ts * Ts, axis=-1))
    row["ito_cross"] = -kk * Cx * np.sum(Ts * sb, axis=-1)
    row["ito_l2"] = 0.5 * C2 * np.sum(s * s, axis=-1)
    row["hs_F2_proj"] = C2b * np.sum(sb * sb, axis=-1)
    gphi = nm.bulk.g(ev.phi)
    gphig = nm.boundary.g(ev.phig)
    row["int_g_phi"] = gphi @ B.w
    row["hs_F1"] = C2 * ((gphi * gphi) @ B.w)
    row["hs_F2"] = C2b * geo.integrate(gphig * gphig, B, "boundary")
    row["curv_F"] = C2 * ((np.abs(model.pot_F.base.second_derivative(ev.phi)) * gphi * gphi) @ B.w)
    row["curv_G"] = C2b * geo.integrate(
        np.abs(model.pot_G.base.second_derivative(ev.phig)) * gphig * gphig, B, "boundary")
    return row


def noise_profiles(model: GalerkinModel, ev: StateEval):
    nm = model.noise
    s = nm.bulk.g(ev.phi) @ model.P_bulk
    sb = model.wall_from_grid(nm.boundary.g(ev.phig))
    return s, sb


class Stepper:
    """Holds the per-dt implicit solve so repeated steps reuse it."""

    def __init__(self, model: GalerkinModel, scheme: SchemeConfig):
        self.model = model
        self.scheme = scheme
        self.dt = float(scheme.dt)
        self.sF, self.sG = stabilization_constants(model, scheme)
        self.na = model.n_a
        if scheme.scheme == "imex":
            self.L = imex_operator(model, self.sF, self.sG)
            Mat = np.eye(self.L.shape[0]) - self.dt * self.L
            lu = sla.lu_factor(Mat)
            self.Minv_T = sla.lu_solve(lu, np.eye(Mat.shape[0])).T.copy()
        else:
            self.L = None
            self.Minv_T = None

    def step(self, a, b, da, db, dMa=None, dMb=None):
        dt = self.dt
        if self.scheme.scheme == "explicit":
            an = a + dt * da
            bn = b + dt * db
            if dMa is not None:
                an = an + dMa
                bn = bn + dMb
            return an, bn
        X = np.concatenate([a, b], axis=-1)
        f = np.concatenate([da, db], axis=-1)
        rhs = X + dt * (f - X @ self.L.T)
        if dMa is not None:
            rhs = rhs + np.concatenate([dMa, dMb], axis=-1)
        Xn = rhs @ self.Minv_T
        return Xn[..., : self.na], Xn[..., self.na:]


def step_explicit(a, b, dt, model: GalerkinModel, dMa=None, dMb=None):
    """One Euler-Maruyama step; returns (a+, b+, eval at the old state)."""
    ev = model.evaluate(a, b)
    da, db = model.drift(ev)
    st = Stepper(model, SchemeConfig(dt=dt if dt > 0 else 1.0, scheme="explicit"))
    st.dt = dt
    an, bn = st.step(a, b, da, db, dMa, dMb)
    return an, bn, ev


def step_imex(a, b, dt, model: GalerkinModel, dMa=None, dMb=None, scheme: SchemeConfig | None = None):
    """One IMEX Euler-Maruyama step; returns (a+, b+, eval at the old state)."""
    if dt == 0:
        return np.array(a, float, copy=True), np.array(b, float, copy=True), None
    sc = scheme if scheme is not None else SchemeConfig(dt=dt, scheme="imex")
    if sc.dt != dt:
        sc = SchemeConfig(dt=dt, scheme="imex", stabilization=sc.stabilization)
    ev = model.evaluate(a, b)
    da, db = model.drift(ev)
    an, bn = Stepper(model, sc).step(a, b, da, db, dMa, dMb)
    return an, bn, ev


def _abort_message(model, st, scheme, n, dt):
    rate = float(np.max(np.abs(np.linalg.eigvals(st.L)))) if st.L is not None else \
        float(model.params.mob_bulk.bounds[1] * model.params.eps * model.lam.max() ** 2)
    return (f"non-finite state at step {n} (t={n * dt:.6g}); dt={dt:g}, "
            f"scheme={scheme.scheme}, stiffness estimate dt*rate={dt * rate:.3g}")


def simulate_batch(model: GalerkinModel, scheme: SchemeConfig, a0, b0, paths,
                   master_seed: int = 0, refine: int = 1, stepper: Stepper | None = None,
                   noise_scale: float = 1.0) -> list[PathResult]:
    """Advance a batch of paths from the same initial data.

    refine > 1 drives the paths with Brownian increments summed from a grid
    that is `refine` times finer (used by dt ladders).
    """
    paths = [int(p) for p in paths]
    P = len(paths)
    nsteps = int(scheme.n_steps)
    dt = float(scheme.dt)
    st = stepper if stepper is not None else Stepper(model, scheme)
    nm = model.noise
    a = np.tile(np.asarray(a0, float), (P, 1))
    b = np.tile(np.asarray(b0, float), (P, 1))
    noisy = nm.enabled and noise_scale != 0.0
    if noisy:
        K = nm.n_w_modes
        shared = nm.coupling == "shared"
        dWa = np.empty((P, nsteps, K))
        dWb = np.empty((P, nsteps, K))
        for i, pth in enumerate(paths):
            dWa[i], dWb[i] = brownian_increments(master_seed, pth, nsteps, dt, K, refine, shared)
        amp_a = noise_scale * (dWa @ nm.bulk.weights)        # (P, nsteps)
        amp_b = noise_scale * (dWb @ nm.boundary.weights)
    q0 = guard_quantity(model, a[:1], b[:1])[0]
    kappa = float(scheme.kappa_guard) if scheme.kappa_guard is not None else 10.0 * (q0 + 1.0)
    rows = {k: np.zeros((nsteps + 1, P)) for k in LEDGER_COLUMNS}
    dec = int(scheme.decimate)
    snap_idx = list(range(0, nsteps + 1, dec))
    if snap_idx[-1] != nsteps:
        snap_idx.append(nsteps)
    snap_a = np.zeros((len(snap_idx), P, a.shape[1]))
    snap_b = np.zeros((len(snap_idx), P, b.shape[1]))
    stopped = np.full(P, -1)
    active = np.ones(P, dtype=bool)
    si = 0
    for n in range(nsteps + 1):
        try:
            ev = model.evaluate(a, b)
        except ResolventError as exc:
            # overflowed states break the resolvent before they turn non-finite
            raise NumericalAbort(_abort_message(model, st, scheme, n, dt) + f" ({exc})") from exc
        da, db = model.drift(ev)
        if noisy:
            s, sb = noise_profiles(model, ev)
            row = ledger_row(model, ev, s, sb)
        else:
            row = ledger_row(model, ev)
        row["t"] = np.full(P, n * dt)
        for k, v in row.items():
            rows[k][n] = v
        if si < len(snap_idx) and snap_idx[si] == n:
            snap_a[si], snap_b[si] = a, b
            si += 1
        newly = active & (row["guard"] >= kappa)
        stopped[newly] = n
        active &= ~newly
        if n == nsteps or not active.any():
            if n < nsteps:
                # fill remaining snapshot slots with the frozen state
                while si < len(snap_idx):
                    snap_a[si], snap_b[si] = a, b
                    si += 1
            last = n
            break
        if noisy:
            dMa = s * amp_a[:, n, None]
            dMb = sb * amp_b[:, n, None]
            rows["stoch_mu"][n] = np.sum(ev.c * dMa, axis=-1)
            rows["stoch_theta"][n] = np.sum(ev.d * dMb, axis=-1)
            rows["stoch_phi"][n] = np.sum(a * dMa, axis=-1)
        else:
            dMa = dMb = None
        an, bn = st.step(a, b, da, db, dMa, dMb)
        if not (np.all(np.isfinite(an[active])) and np.all(np.isfinite(bn[active]))):
            raise NumericalAbort(_abort_message(model, st, scheme, n + 1, dt))
        a = np.where(active[:, None], an, a)
        b = np.where(active[:, None], bn, b)
    else:
        last = nsteps
    rows["residual"] = identity_residual(rows, dt)
    out = []
    snap_t = np.array(snap_idx) * dt
    for i, pth in enumerate(paths):
        end = int(stopped[i]) if stopped[i] >= 0 else last
        led = {k: rows[k][: end + 1, i].copy() for k in LEDGER_COLUMNS}
        # increments after the final row never happened
        for k in ("stoch_mu", "stoch_theta", "stoch_phi"):
            led[k][-1] = 0.0
        keep = np.array(snap_idx) <= end
        out.append(PathResult(
            path_index=pth, dt=dt, times=led["t"].copy(), ledger=led,
            snap_times=snap_t[keep], snap_a=snap_a[keep, i].copy(), snap_b=snap_b[keep, i].copy(),
            stopped_at=int(stopped[i]) if stopped[i] >= 0 else None,
            seed_key=(int(master_seed), pth), kappa=kappa))
    return out


def simulate_path(model: GalerkinModel, scheme: SchemeConfig, a0, b0, path_key=(0, 0),
                  refine: int = 1) -> PathResult:
    seed, path = path_key
    return simulate_batch(model, scheme, a0, b0, [path], seed, refine)[0]
