"""Periodic channel geometry, trigonometric spectral bases and quadrature.

The domain is T_L x (0, H): periodic in x with period L, bounded by two walls
y = 0 and y = H.  The wall set is two disjoint circles; boundary fields are
stored per circle and boundary integrals sum over both.

Three families live here:

* bulk modes     X_j(x) Y_m(y), Y_m a cosine in y (homogeneous Neumann),
* boundary modes X_j(x) on each circle (Laplace-Beltrami eigenfunctions),
* velocity modes curl of X_j(x) S_m(y), S_m a sine in y (divergence free,
  u.n = 0 on the walls), plus the uniform translation (1, 0).

X_j runs over 1, cos(kx'), sin(kx') with x' = 2 pi x / L, k < n_x_modes.

The y-quadrature is the uniform midpoint rule, which integrates cos(j pi y/H)
exactly for 0 < j < 2 n_quad_y.  Every integrand built from products of at
most three bandlimited factors is therefore integrated exactly.
"""
from __future__ import annotations

from dataclasses import dataclass, field
import json

import numpy as np


@dataclass(frozen=True)
class ChannelGeometry:
    period_length: float = 2 * np.pi
    channel_height: float = 1.0
    n_x_modes: int = 4
    n_y_modes: int = 4
    n_quad_x: int | None = None
    n_quad_y: int | None = None

    def __post_init__(self):
        if self.n_quad_x is None:
            object.__setattr__(self, "n_quad_x", 3 * self.n_x_modes)
        if self.n_quad_y is None:
            object.__setattr__(self, "n_quad_y", 3 * self.n_y_modes)

    def violations(self) -> list[str]:
        errs = []
        if not self.period_length > 0:
            errs.append(f"period_length must be > 0 (got {self.period_length})")
        if not self.channel_height > 0:
            errs.append(f"channel_height must be > 0 (got {self.channel_height})")
        for name in ("n_x_modes", "n_y_modes"):
            v = getattr(self, name)
            if not (isinstance(v, (int, np.integer)) and v >= 1):
                errs.append(f"{name} must be a positive integer (got {v!r})")
        if not errs:
            if self.n_quad_x < 3 * self.n_x_modes:
                errs.append(f"n_quad_x must be >= 3*n_x_modes = {3 * self.n_x_modes} "
                            f"(got {self.n_quad_x})")
            if self.n_quad_y < 3 * self.n_y_modes:
                errs.append(f"n_quad_y must be >= 3*n_y_modes = {3 * self.n_y_modes} "
                            f"(got {self.n_quad_y})")
        return errs

    @property
    def area(self) -> float:
        return self.period_length * self.channel_height

    @property
    def boundary_length(self) -> float:
        # two circles of length L
        return 2 * self.period_length


def _x_functions(L, n_x, x):
    """Values and first/second derivatives of the real Fourier family at x."""
    nX = 2 * n_x - 1
    v = np.empty((nX, x.size))
    d1 = np.empty_like(v)
    d2 = np.empty_like(v)
    wav = np.zeros(nX)
    v[0] = 1 / np.sqrt(L)
    d1[0] = 0.0
    d2[0] = 0.0
    c = np.sqrt(2 / L)
    for k in range(1, n_x):
        kap = 2 * np.pi * k / L
        wav[2 * k - 1] = wav[2 * k] = kap
        cs, sn = np.cos(kap * x), np.sin(kap * x)
        v[2 * k - 1], d1[2 * k - 1], d2[2 * k - 1] = c * cs, -c * kap * sn, -c * kap**2 * cs
        v[2 * k], d1[2 * k], d2[2 * k] = c * sn, c * kap * cs, -c * kap**2 * sn
    return v, d1, d2, wav


def _y_cosines(H, n_y, y):
    v = np.empty((n_y, y.size))
    d1 = np.empty_like(v)
    v[0] = 1 / np.sqrt(H)
    d1[0] = 0.0
    c = np.sqrt(2 / H)
    for m in range(1, n_y):
        q = m * np.pi / H
        v[m] = c * np.cos(q * y)
        d1[m] = -c * q * np.sin(q * y)
    return v, d1


def _y_sines(H, n_y, y):
    """sin(m pi y/H), m = 1..n_y, with first and second derivatives."""
    v = np.empty((n_y, y.size))
    d1 = np.empty_like(v)
    d2 = np.empty_like(v)
    c = np.sqrt(2 / H)
    for i, m in enumerate(range(1, n_y + 1)):
        q = m * np.pi / H
        v[i] = c * np.sin(q * y)
        d1[i] = c * q * np.cos(q * y)
        d2[i] = -c * q**2 * np.sin(q * y)
    return v, d1, d2


@dataclass(frozen=True, eq=False)
class SpectralBasis:
    """Immutable container of mode tables, grid evaluation matrices and weights.

    Grids are flattened in (x, y) C-order: node index = ix * n_quad_y + iy.
    Boundary grids have shape (2, n_quad_x) with circle 0 at y = 0.
    """
    geom: ChannelGeometry
    x: np.ndarray
    y: np.ndarray
    wx: np.ndarray
    wy: np.ndarray
    w: np.ndarray                 # tensor weights, flat
    # bulk
    bulk_index: np.ndarray        # (n_a, 2) -> (x-function j, m)
    bulk_eig: np.ndarray
    V: np.ndarray                 # (n_a, Nq)
    Vx: np.ndarray
    Vy: np.ndarray
    # boundary (per circle, same x-family)
    xfun_wavenumber: np.ndarray
    Xb: np.ndarray                # (nX, Nx) x-functions on the boundary nodes
    Xb_x: np.ndarray
    bnd_eig: np.ndarray           # (n_b,) = tile of wavenumber^2 for both circles
    trace_matrix: np.ndarray      # (n_b, n_a)
    # velocity
    vel_index: np.ndarray         # (n_e, 2) -> (j, m); translation mode is (-1, 0)
    vel_eig: np.ndarray
    Ux: np.ndarray                # (n_e, Nq)
    Uy: np.ndarray
    Uxx: np.ndarray               # d/dx u_x
    Uxy: np.ndarray               # d/dy u_x
    Uyx: np.ndarray               # d/dx u_y
    Uyy: np.ndarray               # d/dy u_y
    Ub: np.ndarray                # (n_e, 2, Nx) tangential velocity on the walls
    Ub_n: np.ndarray              # (n_e, 2, Nx) normal velocity on the walls
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def n_bulk(self) -> int:
        return self.V.shape[0]

    @property
    def n_bnd(self) -> int:
        return self.trace_matrix.shape[0]

    @property
    def n_vel(self) -> int:
        return self.Ux.shape[0]

    @property
    def n_xfun(self) -> int:
        return self.Xb.shape[0]

    @property
    def grid_shape(self) -> tuple[int, int]:
        return (self.x.size, self.y.size)

    # projection matrices are cached lazily; the basis is otherwise immutable
    def _proj(self, name):
        if name not in self._cache:
            if name == "bulk":
                self._cache[name] = np.ascontiguousarray((self.V * self.w).T)
            elif name == "xfun":
                self._cache[name] = np.ascontiguousarray((self.Xb * self.wx).T)
            elif name == "velocity":
                self._cache[name] = (np.ascontiguousarray((self.Ux * self.w).T),
                                     np.ascontiguousarray((self.Uy * self.w).T))
        return self._cache[name]

    def summary(self) -> str:
        """Structured-text mode table (JSON) for debugging."""
        g = self.geom
        doc = {
            "geometry": {"period_length": g.period_length, "channel_height": g.channel_height,
                         "n_x_modes": g.n_x_modes, "n_y_modes": g.n_y_modes,
                         "n_quad_x": g.n_quad_x, "n_quad_y": g.n_quad_y},
            "bulk_modes": [{"i": i, "xfun": int(j), "m": int(m), "eig": float(e)}
                           for i, ((j, m), e) in enumerate(zip(self.bulk_index, self.bulk_eig))],
            "boundary_modes": [{"i": i, "circle": i // self.n_xfun, "xfun": i % self.n_xfun,
                                "eig": float(e)} for i, e in enumerate(self.bnd_eig)],
            "velocity_modes": [{"i": i, "xfun": int(j), "m": int(m), "eig": float(e)}
                               for i, ((j, m), e) in enumerate(zip(self.vel_index, self.vel_eig))],
        }
        return json.dumps(doc, indent=1)


def build_basis(geom: ChannelGeometry) -> SpectralBasis:
    errs = geom.violations()
    if errs:
        raise ValueError("; ".join(errs))
    L, H = float(geom.period_length), float(geom.channel_height)
    nx, ny = geom.n_x_modes, geom.n_y_modes
    Nx, Ny = geom.n_quad_x, geom.n_quad_y

    x = np.arange(Nx) * (L / Nx)
    y = (np.arange(Ny) + 0.5) * (H / Ny)
    wx = np.full(Nx, L / Nx)
    wy = np.full(Ny, H / Ny)
    w = np.outer(wx, wy).ravel()

    X, X1, X2, wav = _x_functions(L, nx, x)
    Y, Y1 = _y_cosines(H, ny, y)
    nX = X.shape[0]

    def tens(a, b):
        # (nA, Nx) x (nB, Ny) -> (nA*nB, Nx*Ny) with index j*nB + m
        return np.einsum("ja,mb->jmab", a, b).reshape(a.shape[0] * b.shape[0], -1)

    V, Vx, Vy = tens(X, Y), tens(X1, Y), tens(X, Y1)
    jj, mm = np.meshgrid(np.arange(nX), np.arange(ny), indexing="ij")
    bulk_index = np.stack([jj.ravel(), mm.ravel()], axis=1)
    bulk_eig = wav[jj.ravel()] ** 2 + (mm.ravel() * np.pi / H) ** 2

    # trace: Y_m(0) and Y_m(H) = (-1)^m Y_m(0)
    y0 = np.where(np.arange(ny) == 0, 1 / np.sqrt(H), np.sqrt(2 / H))
    yH = y0 * (-1.0) ** np.arange(ny)
    T = np.zeros((2 * nX, nX * ny))
    for i, (j, m) in enumerate(bulk_index):
        T[j, i] = y0[m]
        T[nX + j, i] = yH[m]

    # velocity: translation mode first, then curl(X_j S_m)/sqrt(eig)
    S, S1, S2 = _y_sines(H, ny, y)
    q = np.arange(1, ny + 1) * np.pi / H
    s1_wall = np.sqrt(2 / H) * q                            # S_m'(0)
    s1_wallH = s1_wall * (-1.0) ** np.arange(1, ny + 1)     # S_m'(H)
    n_e = nX * ny + 1
    Nq = Nx * Ny
    Ux, Uy = np.zeros((n_e, Nq)), np.zeros((n_e, Nq))
    Uxx, Uxy, Uyx, Uyy = (np.zeros((n_e, Nq)) for _ in range(4))
    Ub = np.zeros((n_e, 2, Nx))
    vel_index = np.zeros((n_e, 2), dtype=int)
    vel_eig = np.zeros(n_e)
    vel_index[0] = (-1, 0)
    Ux[0] = 1 / np.sqrt(L * H)
    Ub[0] = 1 / np.sqrt(L * H)
    i = 1
    for j in range(nX):
        for mi in range(ny):
            lam = wav[j] ** 2 + q[mi] ** 2
            r = 1 / np.sqrt(lam)
            Ux[i] = r * np.outer(X[j], S1[mi]).ravel()
            Uy[i] = -r * np.outer(X1[j], S[mi]).ravel()
            Uxx[i] = r * np.outer(X1[j], S1[mi]).ravel()
            Uxy[i] = r * np.outer(X[j], S2[mi]).ravel()
            Uyx[i] = -r * np.outer(X2[j], S[mi]).ravel()
            Uyy[i] = -r * np.outer(X1[j], S1[mi]).ravel()
            Ub[i, 0] = r * X[j] * s1_wall[mi]
            Ub[i, 1] = r * X[j] * s1_wallH[mi]
            vel_index[i] = (j, mi + 1)
            vel_eig[i] = lam
            i += 1
    # u_y on the walls is -X_j' S_m(wall) with S_m(0) = S_m(H) = 0; evaluated, not assumed
    s_wall = np.sqrt(2 / H) * np.sin(np.outer([0.0, H], q))       # (2, ny)
    Ub_n = np.zeros((n_e, 2, Nx))
    i = 1
    for j in range(nX):
        for mi in range(ny):
            r = 1 / np.sqrt(wav[j] ** 2 + q[mi] ** 2)
            Ub_n[i] = -r * s_wall[:, mi, None] * X1[j][None, :]
            i += 1

    return SpectralBasis(
        geom=geom, x=x, y=y, wx=wx, wy=wy, w=w,
        bulk_index=bulk_index, bulk_eig=bulk_eig, V=V, Vx=Vx, Vy=Vy,
        xfun_wavenumber=wav, Xb=X, Xb_x=X1, bnd_eig=np.tile(wav**2, 2), trace_matrix=T,
        vel_index=vel_index, vel_eig=vel_eig, Ux=Ux, Uy=Uy,
        Uxx=Uxx, Uxy=Uxy, Uyx=Uyx, Uyy=Uyy, Ub=Ub, Ub_n=Ub_n,
    )


def _check_len(c, n, which):
    if c.shape[-1] != n:
        raise ValueError(f"{which} coefficient length {c.shape[-1]} != truncation {n}")


def to_grid(coeffs, basis: SpectralBasis, which: str = "bulk"):
    """Evaluate an expansion on the collocation grid.

    bulk -> (..., Nx, Ny); boundary -> (..., 2, Nx); velocity -> (..., 2, Nx, Ny)
    (components u_x, u_y).  Leading axes are batch axes.
    """
    c = np.asarray(coeffs, dtype=float)
    Nx, Ny = basis.grid_shape
    if which == "bulk":
        _check_len(c, basis.n_bulk, which)
        return (c @ basis.V).reshape(c.shape[:-1] + (Nx, Ny))
    if which == "boundary":
        _check_len(c, basis.n_bnd, which)
        nX = basis.n_xfun
        cc = c.reshape(c.shape[:-1] + (2, nX))
        return cc @ basis.Xb
    if which == "velocity":
        _check_len(c, basis.n_vel, which)
        ux = (c @ basis.Ux).reshape(c.shape[:-1] + (Nx, Ny))
        uy = (c @ basis.Uy).reshape(c.shape[:-1] + (Nx, Ny))
        return np.stack([ux, uy], axis=-3)
    raise ValueError(f"unknown field family {which!r}")


def from_grid(values, basis: SpectralBasis, which: str = "bulk"):
    """Quadrature L2 projection onto the truncated basis (left inverse of to_grid)."""
    v = np.asarray(values, dtype=float)
    Nx, Ny = basis.grid_shape
    if which == "bulk":
        if v.shape[-2:] != (Nx, Ny):
            raise ValueError(f"bulk grid shape {v.shape[-2:]} != {(Nx, Ny)}")
        return v.reshape(v.shape[:-2] + (Nx * Ny,)) @ basis._proj("bulk")
    if which == "boundary":
        if v.shape[-2:] != (2, Nx):
            raise ValueError(f"boundary grid shape {v.shape[-2:]} != {(2, Nx)}")
        c = v @ basis._proj("xfun")
        return c.reshape(c.shape[:-2] + (2 * basis.n_xfun,))
    if which == "velocity":
        if v.shape[-3:] != (2, Nx, Ny):
            raise ValueError(f"velocity grid shape {v.shape[-3:]} != {(2, Nx, Ny)}")
        px, py = basis._proj("velocity")
        flat = v.reshape(v.shape[:-3] + (2, Nx * Ny))
        return flat[..., 0, :] @ px + flat[..., 1, :] @ py
    raise ValueError(f"unknown field family {which!r}")


def bulk_gradient(coeffs, basis: SpectralBasis):
    """(d/dx, d/dy) of a bulk expansion on the flat grid, each (..., Nq)."""
    c = np.asarray(coeffs, dtype=float)
    return c @ basis.Vx, c @ basis.Vy


def boundary_gradient(coeffs, basis: SpectralBasis):
    """Tangential derivative of a boundary expansion, shape (..., 2, Nx)."""
    c = np.asarray(coeffs, dtype=float)
    return c.reshape(c.shape[:-1] + (2, basis.n_xfun)) @ basis.Xb_x


def trace(bulk_coeffs, basis: SpectralBasis):
    """Bulk field restricted to the two wall circles, shape (..., 2, Nx)."""
    c = np.asarray(bulk_coeffs, dtype=float)
    _check_len(c, basis.n_bulk, "bulk")
    return to_grid(c @ basis.trace_matrix.T, basis, "boundary")


def trace_coeffs(bulk_coeffs, basis: SpectralBasis):
    """Boundary-mode coefficients of the trace (exact: traces stay in the span)."""
    return np.asarray(bulk_coeffs, dtype=float) @ basis.trace_matrix.T


def integrate(values, basis: SpectralBasis, which: str = "bulk"):
    """Quadrature integral over the channel (bulk grids) or over both circles."""
    v = np.asarray(values, dtype=float)
    if which == "bulk":
        Nx, Ny = basis.grid_shape
        if v.shape[-2:] == (Nx, Ny):
            v = v.reshape(v.shape[:-2] + (Nx * Ny,))
        return v @ basis.w
    if which == "boundary":
        return v.sum(axis=-2) @ basis.wx
    raise ValueError(f"unknown field family {which!r}")


def gradient_quadrature(f_coeffs, g_coeffs, basis: SpectralBasis, weight=None,
                        which: str = "bulk") -> float:
    """Weighted Dirichlet form  int w grad f . grad g  (bulk) or the wall analogue."""
    f = np.asarray(f_coeffs, dtype=float)
    g = np.asarray(g_coeffs, dtype=float)
    if which == "bulk":
        fx, fy = bulk_gradient(f, basis)
        gx, gy = bulk_gradient(g, basis)
        prod = fx * gx + fy * gy
        if weight is not None:
            prod = prod * np.asarray(weight, dtype=float).reshape(prod.shape)
        return float(prod @ basis.w)
    if which == "boundary":
        prod = boundary_gradient(f, basis) * boundary_gradient(g, basis)
        if weight is not None:
            prod = prod * np.asarray(weight, dtype=float).reshape(prod.shape)
        return float(integrate(prod, basis, "boundary"))
    raise ValueError(f"unknown field family {which!r}")


def velocity_norms(e, basis: SpectralBasis):
    """(|grad v|, |Dv|, |v|_Gamma, |v|) for velocity coefficient vectors e (batched)."""
    e = np.asarray(e, dtype=float)
    gxx, gxy = e @ basis.Uxx, e @ basis.Uxy
    gyx, gyy = e @ basis.Uyx, e @ basis.Uyy
    w = basis.w
    grad2 = (gxx**2 + gxy**2 + gyx**2 + gyy**2) @ w
    d12 = 0.5 * (gxy + gyx)
    D2 = (gxx**2 + 2 * d12**2 + gyy**2) @ w
    ub = np.einsum("...e,ecx->...cx", e, basis.Ub)
    bnd2 = integrate(ub**2, basis, "boundary")
    l2 = (e @ basis.Ux) ** 2 + (e @ basis.Uy) ** 2
    return np.sqrt(grad2), np.sqrt(D2), np.sqrt(bnd2), np.sqrt(l2 @ w)


def poincare_ratios(b, basis: SpectralBasis):
    """Surface Poincare quotients for boundary coefficient vectors b.

    Returns (global, per_circle): numerators |v - mean_Gamma v|_Gamma and
    sum over circles |v - mean_circle v|, both over |grad_Gamma v|_Gamma.
    Quotients with a vanishing denominator come back as nan.
    """
    b = np.asarray(b, dtype=float)
    v = to_grid(b, basis, "boundary")
    dv = boundary_gradient(b, basis)
    den = np.sqrt(integrate(dv**2, basis, "boundary"))
    L = basis.geom.period_length
    gmean = integrate(v, basis, "boundary") / (2 * L)
    num_g = np.sqrt(integrate((v - gmean[..., None, None]) ** 2, basis, "boundary"))
    cmean = (v @ basis.wx) / L
    num_c = np.sqrt(integrate((v - cmean[..., None]) ** 2, basis, "boundary"))
    with np.errstate(divide="ignore", invalid="ignore"):
        tiny = den <= 1e-14 * np.maximum(1.0, np.sqrt(np.sum(b**2, axis=-1)))
        rg = np.where(tiny, np.nan, num_g / np.where(tiny, 1.0, den))
        rc = np.where(tiny, np.nan, num_c / np.where(tiny, 1.0, den))
    return rg, rc


def korn_ratio(e, basis: SpectralBasis):
    grad, D, bnd, _ = velocity_norms(e, basis)
    den = D + bnd
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(den > 0, grad / np.where(den > 0, den, 1.0), np.nan)


@dataclass
class KornPoincareCertificate:
    korn_ratio_max: float
    poincare_ratio_max: float
    poincare_circle_ratio_max: float
    n_samples: int
    skipped_korn: int
    skipped_poincare: int
    seed: int

    def as_dict(self):
        return dict(self.__dict__)


def korn_poincare_certificate(basis: SpectralBasis, n_samples: int = 100,
                              seed: int = 0) -> KornPoincareCertificate:
    """Sample random velocity and wall fields and record the worst quotients.

    The per-circle Poincare quotient is bounded by L/(2 pi) on this geometry;
    the global-mean quotient is finite per sample but has no uniform bound
    because the wall has two components.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    rng = np.random.default_rng(seed)
    e = rng.standard_normal((n_samples, basis.n_vel))
    b = rng.standard_normal((n_samples, basis.n_bnd))
    kr = korn_ratio(e, basis)
    pg, pc = poincare_ratios(b, basis)
    return KornPoincareCertificate(
        korn_ratio_max=float(np.nanmax(kr)) if np.any(np.isfinite(kr)) else float("nan"),
        poincare_ratio_max=float(np.nanmax(pg)) if np.any(np.isfinite(pg)) else float("nan"),
        poincare_circle_ratio_max=float(np.nanmax(pc)) if np.any(np.isfinite(pc)) else float("nan"),
        n_samples=int(n_samples),
        skipped_korn=int(np.sum(~np.isfinite(kr))),
        skipped_poincare=int(np.sum(~np.isfinite(pg))),
        seed=int(seed),
    )
