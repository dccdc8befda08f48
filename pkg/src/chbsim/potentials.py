"""Double-well potentials and their Yosida (Moreau envelope) regularization.

With F'' >= -c, the shifted potential Ft(s) = F(s) + c s^2/2 is convex and
its derivative is monotone.  For delta > 0:

    J(s)   solves  x + delta Ft'(x) = s           (resolvent, 1-Lipschitz)
    A(s)   = (s - J(s)) / delta = Ft'(J(s))       (Yosida approximation)
    Ft_d   = delta/2 A^2 + Ft(J)                  (Moreau envelope of Ft)
    F_d    = Ft_d - c s^2/2,   F_d' = A - c s,   F_d'' = Ft''(J)/(1 + delta Ft''(J)) - c
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class SmoothPotential:
    """C2 potential from a small closed-form family.

    family "polynomial": F(s) = alpha/4 (s^2 - beta^2)^2, minimal shift alpha beta^2.
    family "quadratic":  F(s) = alpha/2 s^2, shift max(0, -alpha).
    """
    family: str = "polynomial"
    alpha: float = 1.0
    beta: float = 1.0
    shift: float | None = None

    def __post_init__(self):
        if self.family not in ("polynomial", "quadratic"):
            raise ValueError(f"unknown potential family {self.family!r}")
        if self.shift is None:
            object.__setattr__(self, "shift", self.minimal_shift)

    @property
    def minimal_shift(self) -> float:
        if self.family == "polynomial":
            return float(self.alpha * self.beta**2)
        return float(max(0.0, -self.alpha))

    @property
    def convexity_shift(self) -> float:
        return float(self.shift)

    @property
    def growth_exponent(self) -> float:
        return 4.0 if self.family == "polynomial" else 2.0

    def value(self, s):
        s = np.asarray(s, dtype=float)
        if self.family == "polynomial":
            return 0.25 * self.alpha * (s * s - self.beta**2) ** 2
        return 0.5 * self.alpha * s * s

    def first_derivative(self, s):
        s = np.asarray(s, dtype=float)
        if self.family == "polynomial":
            return self.alpha * s * (s * s - self.beta**2)
        return self.alpha * s

    def second_derivative(self, s):
        s = np.asarray(s, dtype=float)
        if self.family == "polynomial":
            return self.alpha * (3 * s * s - self.beta**2)
        return np.full_like(s, self.alpha)

    # shifted convex potential Ft = F + c s^2/2
    def shifted(self, s):
        s = np.asarray(s, dtype=float)
        return self.value(s) + 0.5 * self.shift * s * s

    def shifted_d1(self, s):
        s = np.asarray(s, dtype=float)
        return self.first_derivative(s) + self.shift * s

    def shifted_d2(self, s):
        return self.second_derivative(s) + self.shift

    def growth_constant(self, s_grid) -> float:
        """Smallest C_F with |F'|, |F''| <= C_F (1 + F) on the sampled grid."""
        s = np.asarray(s_grid, dtype=float)
        den = 1.0 + self.value(s)
        return float(max(np.max(np.abs(self.first_derivative(s)) / den),
                         np.max(np.abs(self.second_derivative(s)) / den)))

    def check_assumptions(self, s_grid) -> list[str]:
        """Sampled checks: F >= 0, F'(0) = 0, F'' + c >= 0."""
        s = np.asarray(s_grid, dtype=float)
        errs = []
        if np.min(self.value(s)) < 0:
            errs.append("potential is negative somewhere on the sampled range")
        if abs(float(self.first_derivative(0.0))) > 0:
            errs.append("potential derivative does not vanish at 0")
        if np.min(self.shifted_d2(s)) < -1e-12:
            errs.append(f"shift {self.shift} does not convexify the potential "
                        f"(min F''+c = {np.min(self.shifted_d2(s)):.3g})")
        return errs


class ResolventError(RuntimeError):
    pass


@dataclass(frozen=True)
class RegularizedPotential:
    base: SmoothPotential
    delta: float
    resolvent_tolerance: float = 1e-13
    max_doublings: int = 60

    def __post_init__(self):
        if not self.delta > 0:
            raise ValueError(f"delta must be > 0 (got {self.delta})")

    @property
    def shift(self) -> float:
        return self.base.shift

    def resolvent(self, s):
        """Unique x with x + delta Ft'(x) = s; safeguarded Newton on a bracket."""
        s = np.asarray(s, dtype=float)
        scalar = s.ndim == 0
        s = np.atleast_1d(s)
        d = self.delta
        h = lambda x: x + d * self.base.shifted_d1(x)
        lo = np.minimum(0.0, s)
        hi = np.maximum(0.0, s)
        # Ft'(0) = 0 makes [min(0,s), max(0,s)] a bracket; expansion only matters
        # for a misconfigured potential, and then it is bounded.
        for _ in range(self.max_doublings):
            bad_lo = h(lo) > s
            bad_hi = h(hi) < s
            if not (bad_lo.any() or bad_hi.any()):
                break
            width = np.maximum(hi - lo, 1.0)
            lo = np.where(bad_lo, lo - width, lo)
            hi = np.where(bad_hi, hi + width, hi)
        else:
            raise ResolventError("resolvent bracket expansion failed; "
                                 "x + delta*Ft'(x) is not monotone for this potential")
        tol = self.resolvent_tolerance * np.maximum(1.0, np.abs(s))
        x = np.clip(s / (1.0 + d * max(self.base.shifted_d2(0.0).item(), 0.0)), lo, hi)
        for _ in range(200):
            r = h(x) - s
            done = np.abs(r) <= tol
            if done.all():
                break
            lo = np.where(r < 0, x, lo)
            hi = np.where(r > 0, x, hi)
            dh = 1.0 + d * self.base.shifted_d2(x)
            xn = x - r / dh
            inside = (xn > lo) & (xn < hi)
            xn = np.where(inside, xn, 0.5 * (lo + hi))
            x = np.where(done, x, xn)
        else:
            raise ResolventError("resolvent iteration did not converge")
        return x[0] if scalar else x

    def yosida_A(self, s):
        s = np.asarray(s, dtype=float)
        return (s - self.resolvent(s)) / self.delta

    def derivative(self, s):
        s = np.asarray(s, dtype=float)
        return self.yosida_A(s) - self.shift * s

    def second_derivative(self, s):
        s = np.asarray(s, dtype=float)
        q = self.base.shifted_d2(self.resolvent(s))
        return q / (1.0 + self.delta * q) - self.shift

    def envelope(self, s):
        """Moreau envelope Ft_d of the shifted potential."""
        s = np.asarray(s, dtype=float)
        J = self.resolvent(s)
        A = (s - J) / self.delta
        return 0.5 * self.delta * A * A + self.base.shifted(J)

    def value(self, s):
        s = np.asarray(s, dtype=float)
        return self.envelope(s) - 0.5 * self.shift * s * s

    def all_terms(self, s):
        """(F_d, F_d', F_d'') with a single resolvent solve."""
        s = np.asarray(s, dtype=float)
        J = self.resolvent(s)
        A = (s - J) / self.delta
        q = self.base.shifted_d2(J)
        c = self.shift
        val = 0.5 * self.delta * A * A + self.base.shifted(J) - 0.5 * c * s * s
        return val, A - c * s, q / (1.0 + self.delta * q) - c

    def second_derivative_bound(self) -> float:
        return 1.0 / self.delta + self.shift

    def growth_constant(self, s_grid) -> float:
        """Smallest C with |F_d'| <= C (1 + |F_d|) on the sampled grid."""
        v, d1, _ = self.all_terms(np.asarray(s_grid, dtype=float))
        return float(np.max(np.abs(d1) / (1.0 + np.abs(v))))


# thin functional aliases

def resolvent(s, pot: RegularizedPotential):
    return pot.resolvent(s)


def yosida_derivative(s, pot: RegularizedPotential):
    return pot.derivative(s)


def yosida_value(s, pot: RegularizedPotential):
    return pot.value(s)


def yosida_second_derivative_bound(pot: RegularizedPotential) -> float:
    return pot.second_derivative_bound()


def nemytskii(field_grid, scalar_fn):
    """Pointwise application of scalar_fn; shape preserved."""
    g = np.asarray(field_grid, dtype=float)
    out = np.asarray(scalar_fn(g), dtype=float)
    if out.shape != g.shape:
        out = np.broadcast_to(out, g.shape).copy()
    return out


def moreau_envelope_bruteforce(F_shifted, s, delta, iters=90):
    """Independent envelope evaluation by golden-section minimisation.

    The minimiser of Ft(x) + (s - x)^2/(2 delta) lies between 0 and s when
    Ft'(0) = 0, so no derivative information is needed.
    """
    s = np.atleast_1d(np.asarray(s, dtype=float))
    a = np.minimum(0.0, s)
    b = np.maximum(0.0, s)
    g = (np.sqrt(5.0) - 1) / 2
    obj = lambda x: F_shifted(x) + (s - x) ** 2 / (2 * delta)
    for _ in range(iters):
        c = b - g * (b - a)
        d = a + g * (b - a)
        left = obj(c) < obj(d)
        b = np.where(left, d, b)
        a = np.where(left, a, c)
    x = 0.5 * (a + b)
    return np.minimum(obj(x), np.minimum(obj(a), obj(b)))


def yosida_suite(base: SmoothPotential, deltas=(0.5, 0.1, 0.01),
                 s_grid=None, n_pairs: int = 20000, seed: int = 0) -> dict:
    """Check the Yosida-regularization properties on a sampled grid.

    Returns a report of max deviations and pass flags.  "P5_literal" tests
    |F_d'| nondecreasing as delta decreases; "P5_convergence" tests the
    monotone convergence of F_d' to F' (distance to F' nonincreasing and
    sign(s) F_d' nondecreasing).
    """
    if s_grid is None:
        s_grid = np.round(np.arange(-400, 401) * 0.01, 12)
    s = np.asarray(s_grid, dtype=float)
    deltas = sorted(deltas, reverse=True)
    c = base.shift
    F, dF = base.value(s), base.first_derivative(s)
    rng = np.random.default_rng(seed)
    rep = {"deltas": list(deltas), "s_min": float(s.min()), "s_max": float(s.max()),
           "n_points": int(s.size), "per_delta": {}}
    vals, ders = [], []
    ok = {k: True for k in ("P1", "P2", "P3", "P4", "P5_literal", "P5_convergence", "P6")}
    for d in deltas:
        pot = RegularizedPotential(base, d)
        J = pot.resolvent(s)
        A = (s - J) / d
        env = pot.envelope(s)
        env_bf = moreau_envelope_bruteforce(base.shifted, s, d)
        p1 = float(np.max(np.abs(env - env_bf)))
        Fd, dFd, _ = pot.all_terms(s)
        lower = base.shifted(J)
        upper = base.shifted(s)
        slack = 1e-12 * np.maximum(1.0, np.abs(upper))
        p3 = int(np.sum((lower > env + slack) | (env > upper + slack)))
        # Lipschitz: neighbours plus random pairs
        lip_nb = np.max(np.abs(np.diff(dFd)) / np.diff(s))
        i, j = rng.integers(0, s.size, (2, n_pairs))
        m = i != j
        lip_rp = np.max(np.abs(dFd[i[m]] - dFd[j[m]]) / np.abs(s[i[m]] - s[j[m]]))
        lip = float(max(lip_nb, lip_rp))
        Jpairs = np.abs(J[i[m]] - J[j[m]]) - np.abs(s[i[m]] - s[j[m]])
        p6v = float(pot.value(0.0)) - float(base.value(0.0))
        p6d = float(pot.derivative(0.0))
        rep["per_delta"][str(d)] = {
            "P1_max_abs_dev": p1,
            "P3_violations": p3,
            "P4_lipschitz_empirical": lip,
            "P4_bound": 1 / d + c,
            "resolvent_nonexpansive_excess": float(max(Jpairs.max(), 0.0)),
            "P6_value_dev": p6v, "P6_derivative": p6d,
            "min_F_delta": float(Fd.min()),
            "negative_F_delta_count": int(np.sum(Fd < 0)),
        }
        ok["P1"] &= p1 <= 1e-9
        ok["P3"] &= p3 == 0
        ok["P4"] &= lip <= 1 / d + c + 1e-9
        ok["P6"] &= (p6v == 0.0) and (p6d == 0.0)
        vals.append(Fd)
        ders.append(dFd)
    vals, ders = np.array(vals), np.array(ders)
    # P2: |F_d - F| nonincreasing as delta decreases, and small at the finest level
    gap = np.abs(vals - F)
    p2_viol = int(np.sum(np.diff(gap, axis=0) > 1e-12 * np.maximum(1, np.abs(F))))
    ok["P2"] = p2_viol == 0
    # P5 literal
    absd = np.abs(ders)
    lit_bad = np.diff(absd, axis=0) < -1e-12
    lit_bad_s = s[np.any(lit_bad, axis=0)]
    ok["P5_literal"] = lit_bad_s.size == 0
    dist = np.abs(ders - dF)
    sg = np.sign(s) * ders
    conv_bad = (np.any(np.diff(dist, axis=0) > 1e-12, axis=0)
                | np.any(np.diff(sg, axis=0) < -1e-12, axis=0))
    ok["P5_convergence"] = not conv_bad.any()
    rep["P2_violations"] = p2_viol
    rep["P2_max_gap_finest"] = float(gap[-1].max())
    rep["P5_literal_violations"] = int(lit_bad_s.size)
    rep["P5_literal_violation_range"] = ([float(lit_bad_s.min()), float(lit_bad_s.max())]
                                         if lit_bad_s.size else None)
    rep["P5_convergence_violations"] = int(conv_bad.sum())
    rep["pass"] = {k: bool(v) for k, v in ok.items()}
    return rep
