"""Energy functionals, the pathwise Ito energy identity, and Monte-Carlo
certificates built on the per-path ledgers.

Everything here is post-processing of immutable PathResult objects.  Path
collections are always reduced in path-index order so that reports do not
depend on how the paths were scheduled.
"""
from __future__ import annotations

import numpy as np

from .galerkin import GalerkinModel, chemical_potential_control

DISSIPATION_COLUMNS = ("diss_visc", "diss_perm", "diss_fric", "diss_mu", "diss_theta")
ITO_COLUMNS = ("ito_grad", "ito_grad_bnd", "ito_F", "ito_G", "ito_robin", "ito_cross", "ito_l2")
STOCH_COLUMNS = ("stoch_mu", "stoch_theta", "stoch_phi")


def energy(a, b, model: GalerkinModel):
    """(E, E_tot) with the regularized potentials."""
    ev = model.evaluate(np.asarray(a, float), np.asarray(b, float), with_velocity=False)
    return model.energy(ev)


def lyapunov(a, b, model: GalerkinModel):
    """E_tot with the unregularized potentials."""
    ev = model.evaluate(np.asarray(a, float), np.asarray(b, float), with_velocity=False)
    return model.energy(ev, base=True)[1]


def _sorted(paths):
    return sorted(paths, key=lambda p: p.path_index)


def identity_residual(ledger: dict, dt: float) -> np.ndarray:
    """LHS - RHS of the discrete energy identity, left-point (Ito) sums.

    E_tot(t_n) - E_tot(0) + sum_{k<n} [dt (D_k - I_k - X_k) - S_k]

    D: dissipation, I: Ito corrections, X: mobility cross term, S: the three
    stochastic-integral increments.  residual[0] is 0 exactly.
    """
    D = sum(ledger[k] for k in DISSIPATION_COLUMNS)
    ito = sum(ledger[k] for k in ITO_COLUMNS)
    stoch = sum(ledger[k] for k in STOCH_COLUMNS)
    inc = dt * (D - ito - ledger["mob_cross"]) - stoch
    cum = np.zeros_like(inc)
    cum[1:] = np.cumsum(inc[:-1], axis=0)
    return ledger["E_tot"] - ledger["E_tot"][0] + cum


def ito_identity_residual(path) -> np.ndarray:
    return identity_residual(path.ledger, path.dt)


def fit_slope(x, y) -> float:
    """Least-squares slope of log y against log x."""
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    if x.size < 2 or np.any(y <= 0) or not np.all(np.isfinite(y)):
        return float("nan")
    return float(np.polyfit(np.log(x), np.log(y), 1)[0])


def residual_rms(paths) -> float:
    r = np.array([ito_identity_residual(p)[-1] for p in _sorted(paths)])
    return float(np.sqrt(np.mean(r * r)))


def residual_ladder(ladder: dict) -> dict:
    """ladder: {dt: [PathResult]} -> RMS residual(T) per dt with monotonicity and slope."""
    dts = sorted(ladder, reverse=True)
    rms = [residual_rms(ladder[dt]) for dt in dts]
    mono = all(rms[i + 1] < rms[i] for i in range(len(rms) - 1))
    return {"dt": dts, "rms": rms, "monotone": mono, "slope": fit_slope(dts, rms)}


def energy_dissipation_defect(path) -> dict:
    """Per-step defect E(t_{k+1}) - E(t_k) + dt * D(t_k) of a noise-free path."""
    led = path.ledger
    D = sum(led[k] for k in DISSIPATION_COLUMNS)
    dE = np.diff(led["E"])
    defect = dE + path.dt * D[:-1]
    return {
        "defect": defect,
        "max_defect": float(np.max(np.abs(defect))) if defect.size else 0.0,
        "max_dE": float(np.max(dE)) if dE.size else 0.0,
        "mass_drift": float(np.max(np.abs(led["mass"] - led["mass"][0]))),
        "C_fit": float(np.max(np.abs(defect)) / path.dt**2) if defect.size else 0.0,
    }


def mass_martingale(paths, model: GalerkinModel) -> dict:
    """Mean-of-phi martingale checks.

    d<phi> = (1/|O|) (sum_k c_k dbeta_k) int g(phi), so the Ito isometry
    predicts Var(<phi>(T) - <phi>(0)) = E QV with
    QV = C2 / |O|^2 sum_n dt (int g(phi_n))^2.
    Both the mean and D = M^2 - QV are tested against 0 at 3 standard errors.
    Also checks Doob's L2 bound E sup M_t^2 <= 4 E QV_T.
    """
    ps = _sorted(paths)
    area = model.basis.geom.area
    C2 = model.noise.bulk.weight_sq_sum if model.noise.enabled else 0.0
    M, QV, supM2 = [], [], []
    for p in ps:
        m = (p.ledger["mass"] - p.ledger["mass"][0]) / area
        ig = p.ledger["int_g_phi"][:-1]
        M.append(m[-1])
        QV.append(C2 / area**2 * p.dt * np.sum(ig * ig))
        supM2.append(np.max(m * m))
    M, QV, supM2 = np.array(M), np.array(QV), np.array(supM2)
    N = M.size
    se_mean = float(np.std(M, ddof=1) / np.sqrt(N))
    Dv = M * M - QV
    se_D = float(np.std(Dv, ddof=1) / np.sqrt(N))
    mean_ok = abs(M.mean()) <= 3 * se_mean if se_mean > 0 else abs(M.mean()) <= 1e-12
    var_ok = abs(Dv.mean()) <= 3 * se_D if se_D > 0 else abs(Dv.mean()) <= 1e-12
    return {
        "n_paths": N,
        "mean": float(M.mean()), "se_mean": se_mean,
        "sample_variance": float(np.var(M, ddof=1)), "predicted_variance": float(QV.mean()),
        "variance_gap": float(Dv.mean()), "se_variance_gap": se_D,
        "doob_lhs": float(supM2.mean()), "doob_rhs": float(4 * QV.mean()),
        "pass_mean": bool(mean_ok), "pass_variance": bool(var_ok),
        "pass_doob": bool(supM2.mean() <= 4 * QV.mean() + 1e-300 or N == 0),
    }


def _initial_norm_V(model: GalerkinModel, a0, b0) -> float:
    a0 = np.asarray(a0, float)
    b0 = np.asarray(b0, float)
    return float(np.sqrt(np.sum((1 + model.lam) * a0 * a0) + np.sum((1 + model.lam_b) * b0 * b0)))


MOMENT_STATISTICS = ("sup_E_tot", "int_grad_u", "int_grad_mu", "int_grad_theta", "sup_phig")


def moment_certificate(paths, r: float, model: GalerkinModel, a0=None, b0=None) -> dict:
    """Monte-Carlo moment estimates with standard errors.

    Statistics (time integrals are left-point sums):
      E sup_t |E_tot|^(r/2), E (int |grad u|^2)^(r/2), E (int |grad mu|^2)^(r/2),
      E (int |theta_x|^2)^(r/2), E sup_t |phi_G|^r.
    Each is also reported divided by 1 + ||X0||_V^r, which is the smallest
    constant C for which the structural bound C (1 + ||X0||^r) holds.
    """
    ps = _sorted(paths)
    if len(ps) < 2:
        raise ValueError("moment_certificate needs at least 2 paths")
    h = r / 2.0
    vals = {k: [] for k in MOMENT_STATISTICS}
    for p in ps:
        led, dt = p.ledger, p.dt
        vals["sup_E_tot"].append(np.max(np.abs(led["E_tot"])) ** h)
        vals["int_grad_u"].append((dt * np.sum(led["grad_u_sq"][:-1])) ** h)
        vals["int_grad_mu"].append((dt * np.sum(led["grad_mu_sq"][:-1])) ** h)
        vals["int_grad_theta"].append((dt * np.sum(led["grad_theta_sq"][:-1])) ** h)
        vals["sup_phig"].append(np.max(led["phig_l2"]) ** r)
    if a0 is None:
        a0, b0 = ps[0].snap_a[0], ps[0].snap_b[0]
    norm0 = _initial_norm_V(model, a0, b0)
    normalizer = 1.0 + norm0**r
    stats = {}
    for k, v in vals.items():
        v = np.array(v)
        est = float(v.mean())
        stats[k] = {"estimate": est, "se": float(v.std(ddof=1) / np.sqrt(v.size)),
                    "C_fit": est / normalizer}
    finite = all(np.isfinite(s["estimate"]) and np.isfinite(s["se"]) for s in stats.values())
    return {"r": r, "n_paths": len(ps), "initial_norm_V": norm0, "normalizer": normalizer,
            "statistics": stats, "finite": bool(finite)}


def moment_stability(coarse: dict, fine: dict, tol: float = 0.2) -> dict:
    """Relative change of every moment statistic between two refinement levels."""
    rel = {}
    for k in MOMENT_STATISTICS:
        x, y = coarse["statistics"][k]["estimate"], fine["statistics"][k]["estimate"]
        scale = max(abs(x), abs(y))
        rel[k] = 0.0 if scale == 0 else abs(x - y) / scale
    return {"relative_change": rel, "max_relative_change": max(rel.values()),
            "pass": bool(max(rel.values()) < tol and coarse["finite"] and fine["finite"])}


def a_priori_inequality_check(paths, model: GalerkinModel) -> dict:
    """Fit the constant of the Monte-Carlo energy bound.

    LHS(t) = max_{s<=t} E[E_lyap(s)] + E int_0^t (2nu|Du|^2 + lam|u|^2
             + gamma|u|^2_G + 1/2 M|grad mu|^2 + M_G|theta_x|^2)
    RHS(t) = E_lyap(0) + C [1/K + E int ||F1||^2_HS + E int |phi_G,x|^2
             + (1 + 1/K) E int |grad phi|^2 + (1/K) E int ||F2||^2_HS
             + E int sum_k |F''| |F1 e_k|^2 + E int sum_k |G''| |F2 e_k|^2]
    The fitted C is the smallest value for which RHS >= LHS at every step.
    Paths that stop early contribute their frozen final row afterwards.
    """
    ps = _sorted(paths)
    K = model.params.robin_K
    dt = ps[0].dt
    n = max(p.n_rows for p in ps)

    def stack(col):
        out = np.empty((len(ps), n))
        for i, p in enumerate(ps):
            v = p.ledger[col]
            out[i, : v.size] = v
            out[i, v.size:] = v[-1]
        return out

    def lp_integral(col, frozen_zero=True):
        x = stack(col)
        if frozen_zero:
            for i, p in enumerate(ps):
                x[i, p.n_rows - 1:] = 0.0
        cum = np.zeros_like(x)
        cum[:, 1:] = dt * np.cumsum(x[:, :-1], axis=1)
        return cum.mean(axis=0)

    El = stack("E_lyap").mean(axis=0)
    diss = {k: stack(k) for k in DISSIPATION_COLUMNS}
    diss_nonneg = all(bool(np.all(v >= -1e-14 * (1 + np.abs(v).max()))) for v in diss.values())
    lhs = np.maximum.accumulate(El)
    for k, wgt in zip(DISSIPATION_COLUMNS, (1.0, 1.0, 1.0, 0.5, 1.0)):
        lhs = lhs + wgt * lp_integral(k)
    bracket = (1.0 / K + lp_integral("hs_F1") + lp_integral("grad_phig_sq")
               + (1 + 1.0 / K) * lp_integral("grad_phi_sq") + lp_integral("hs_F2") / K
               + lp_integral("curv_F") + lp_integral("curv_G"))
    excess = np.maximum(lhs - El[0], 0.0)
    ratio = excess / bracket
    C = float(np.max(ratio))
    return {"C_fit": C, "argmax_t": float(np.argmax(ratio) * dt), "finite": bool(np.isfinite(C)),
            "dissipation_nonnegative": diss_nonneg, "E_lyap0": float(El[0]),
            "lhs_T": float(lhs[-1]), "bracket_T": float(bracket[-1]), "n_paths": len(ps)}


def constant_stability(values, factor: float = 2.0) -> dict:
    v = np.asarray(values, float)
    finite = bool(np.all(np.isfinite(v)))
    pos = v[v > 0]
    spread = float(pos.max() / pos.min()) if pos.size == v.size and v.size else float("inf")
    if np.all(v == 0):
        spread = 1.0
    return {"values": v.tolist(), "spread": spread, "pass": finite and spread < factor}


def correction_accounting(paths, model: GalerkinModel, rtol: float = 1e-10) -> dict:
    """Every Ito correction in the ledgers against its a priori bound.

      ito_F <= (1/delta + c_F) / eps * ito_l2
      ito_G <= (1/delta_G + c_G) / (2 eps_G) * ||P_G F2||^2_HS
      F_d'' >= -c_F gives the matching lower bounds.
    """
    p = model.params
    kF = model.pot_F.second_derivative_bound()
    kG = model.pot_G.second_derivative_bound()
    cF, cG = model.pot_F.shift, model.pot_G.shift
    worst = {"ito_F": -np.inf, "ito_G": -np.inf, "ito_F_low": -np.inf, "ito_G_low": -np.inf}
    for pth in _sorted(paths):
        led = pth.ledger
        bF = kF / p.eps * led["ito_l2"]
        bG = kG / (2 * p.eps_gamma) * led["hs_F2_proj"]
        lF = -cF / p.eps * led["ito_l2"]
        lG = -cG / (2 * p.eps_gamma) * led["hs_F2_proj"]
        tolF = rtol * (1 + np.abs(bF))
        tolG = rtol * (1 + np.abs(bG))
        worst["ito_F"] = max(worst["ito_F"], float(np.max(led["ito_F"] - bF - tolF)))
        worst["ito_G"] = max(worst["ito_G"], float(np.max(led["ito_G"] - bG - tolG)))
        worst["ito_F_low"] = max(worst["ito_F_low"], float(np.max(lF - led["ito_F"] - tolF)))
        worst["ito_G_low"] = max(worst["ito_G_low"], float(np.max(lG - led["ito_G"] - tolG)))
    return {"worst_excess": worst, "pass": bool(all(v <= 0 for v in worst.values()))}


def potential_control_check(paths, model: GalerkinModel) -> dict:
    """Chemical-potential control on the stored snapshots of every path."""
    worst_explicit, worst_struct = 0.0, 0.0
    C = float("nan")
    for pth in _sorted(paths):
        lhs, rhs, C, struct = chemical_potential_control(pth.snap_a, pth.snap_b, model)
        worst_explicit = max(worst_explicit, float(np.max(lhs / rhs)))
        worst_struct = max(worst_struct, float(np.max(lhs / struct)))
    return {"C": C, "max_ratio_explicit": worst_explicit, "max_ratio_structural": worst_struct,
            "pass": bool(worst_explicit <= 1 + 1e-10 and worst_struct <= 1 + 1e-10)}


def guard_check(paths) -> bool:
    """stopped_at set <=> guard crossed kappa there and nowhere before."""
    for p in paths:
        g = p.ledger["guard"]
        if p.stopped_at is None:
            if np.any(g >= p.kappa):
                return False
        elif not (g[-1] >= p.kappa and np.all(g[:-1] < p.kappa)):
            return False
    return True


def boundary_convection(paths) -> dict:
    """Measured size of the wall convective term (no cancellation is expected)."""
    v = np.concatenate([p.ledger["conv_bnd"] for p in _sorted(paths)])
    return {"max_abs": float(np.max(np.abs(v))), "mean": float(np.mean(v))}


def negative_potential_count(model: GalerkinModel, paths) -> int:
    """Grid points of stored snapshots where F_d dips below zero."""
    B = model.basis
    count = 0
    for p in _sorted(paths):
        phi = p.snap_a @ B.V
        count += int(np.sum(model.pot_F.value(phi) < 0))
    return count


def discrete_normal_derivative(a, b, model: GalerkinModel):
    """eps (phi_G - tr phi) / K on the wall grid; the Robin relation's stand-in for
    the normal derivative, which the Neumann basis cannot represent."""
    jump = np.asarray(b, float) - np.asarray(a, float) @ model.T.T
    return model.params.eps / model.params.robin_K * model.wall_to_grid(jump)



def brinkman_coercivity(model: GalerkinModel, n_states: int = 50, seed: int = 0,
                        amplitude: float = 1.0) -> dict:
    """Smallest Brinkman-matrix eigenvalue over random states, against the
    lower bound min(nu0, gamma0) lam_min(G_strain + G_wall) + lam0."""
    p = model.params
    rng = np.random.default_rng(seed)
    a = amplitude * rng.standard_normal((n_states, model.n_a))
    b = amplitude * rng.standard_normal((n_states, model.n_b))
    eigs = np.array([np.linalg.eigvalsh(model.brinkman_assemble(a[i], b[i]))[0]
                     for i in range(n_states)])
    nu0, gam0, lam0 = p.nu.bounds[0], p.gamma.bounds[0], p.lam.bounds[0]
    kw = float(np.linalg.eigvalsh(model.G_strain + model.G_wall)[0])
    bound = min(nu0, gam0) * kw + lam0
    return {"min_eigenvalue": float(eigs.min()), "lower_bound": bound, "n_states": n_states,
            "seed": seed, "pass": bool(eigs.min() > 0 and eigs.min() >= bound * (1 - 1e-10))}
