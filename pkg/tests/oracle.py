"""Brute-force reference assembly used by the equivalence tests.

Mode functions are evaluated pointwise from their closed forms (no shared
tables with the package), integrals use a Gauss-Legendre rule in y and a
trapezoid rule in x at a chosen resolution, and every matrix entry is an
explicit double loop over modes.
"""
import math

import numpy as np


def xfun(j, x, L, deriv=0):
    if j == 0:
        return np.full_like(x, 1 / math.sqrt(L)) if deriv == 0 else np.zeros_like(x)
    k = (j + 1) // 2
    kap = 2 * math.pi * k / L
    c = math.sqrt(2 / L)
    ph = kap * x
    if j % 2 == 1:   # cosine
        return [c * np.cos(ph), -c * kap * np.sin(ph), -c * kap**2 * np.cos(ph)][deriv]
    return [c * np.sin(ph), c * kap * np.cos(ph), -c * kap**2 * np.sin(ph)][deriv]


def xwav(j, L):
    return 0.0 if j == 0 else 2 * math.pi * ((j + 1) // 2) / L


def ycos(m, y, H, deriv=0):
    if m == 0:
        return np.full_like(y, 1 / math.sqrt(H)) if deriv == 0 else np.zeros_like(y)
    q = m * math.pi / H
    c = math.sqrt(2 / H)
    return c * np.cos(q * y) if deriv == 0 else -c * q * np.sin(q * y)


def ysin(m, y, H, deriv=0):
    q = m * math.pi / H
    c = math.sqrt(2 / H)
    return [c * np.sin(q * y), c * q * np.cos(q * y), -c * q * q * np.sin(q * y)][deriv]


class Oracle:
    def __init__(self, model, factor=4):
        B = model.basis
        g = B.geom
        self.model = model
        self.L, self.H = g.period_length, g.channel_height
        self.nx, self.ny = g.n_x_modes, g.n_y_modes
        self.nX = 2 * self.nx - 1
        Nx = factor * g.n_quad_x
        Ny = factor * g.n_quad_y
        self.x1 = np.arange(Nx) * self.L / Nx
        self.wx1 = np.full(Nx, self.L / Nx)
        t, wt = np.polynomial.legendre.leggauss(Ny)
        self.y1 = 0.5 * self.H * (t + 1)
        self.wy1 = 0.5 * self.H * wt
        self.X, self.Y = np.meshgrid(self.x1, self.y1, indexing="ij")
        self.W = np.outer(self.wx1, self.wy1)
        self._cache = {}

    # -- mode tables evaluated pointwise ------------------------------------------
    def bulk(self, i, dx=0, dy=0, y=None):
        key = ("bulk", i, dx, dy, y)
        if key not in self._cache:
            self._cache[key] = self._bulk(i, dx, dy, y)
        return self._cache[key]

    def _bulk(self, i, dx, dy, y):
        j, m = divmod(i, self.ny)
        X = self.X if y is None else self.x1
        Y = self.Y if y is None else np.full_like(self.x1, y)
        return xfun(j, X, self.L, dx) * ycos(m, Y, self.H, dy)

    def bulk_eig(self, i):
        j, m = divmod(i, self.ny)
        return xwav(j, self.L) ** 2 + (m * math.pi / self.H) ** 2

    def wall(self, i, dx=0):
        """Boundary mode i on its own circle, zero on the other: (2, Nx)."""
        c, j = divmod(i, self.nX)
        out = np.zeros((2, self.x1.size))
        out[c] = xfun(j, self.x1, self.L, dx)
        return out

    def vel(self, i, y=None):
        """(ux, uy, dux/dx, dux/dy, duy/dx, duy/dy) of velocity mode i."""
        key = ("vel", i, y)
        if key not in self._cache:
            self._cache[key] = self._vel(i, y)
        return self._cache[key]

    def _vel(self, i, y):
        X = self.X if y is None else self.x1
        Y = self.Y if y is None else np.full_like(self.x1, y)
        if i == 0:
            c = 1 / math.sqrt(self.L * self.H)
            z = np.zeros_like(X)
            return np.full_like(X, c), z, z, z, z, z
        j, mi = divmod(i - 1, self.ny)
        m = mi + 1
        r = 1 / math.sqrt(xwav(j, self.L) ** 2 + (m * math.pi / self.H) ** 2)
        f = lambda dx, dy: xfun(j, X, self.L, dx) * ysin(m, Y, self.H, dy)
        # psi = X S / sqrt(lam); u = (psi_y, -psi_x)
        return (r * f(0, 1), -r * f(1, 0), r * f(1, 1), r * f(0, 2), -r * f(2, 0), -r * f(1, 1))

    # -- fields ---------------------------------------------------------------------
    def field(self, a, dx=0, dy=0, y=None):
        return sum(a[i] * self.bulk(i, dx, dy, y) for i in range(a.size))

    def wall_field(self, b, dx=0):
        return sum(b[i] * self.wall(i, dx) for i in range(b.size))

    def gint(self, f):
        """Integral over the two walls of a (2, Nx) array."""
        return float(np.sum(f * self.wx1))

    def bint(self, f):
        return float(np.sum(f * self.W))

    # -- assembly ---------------------------------------------------------------------
    def chemical_potentials(self, a, b):
        p = self.model.params
        k = p.eps / p.robin_K
        phi = self.field(a)
        tr = np.array([self.field(a, y=0.0), self.field(a, y=self.H)])
        phig = self.wall_field(b)
        dF = self.model.pot_F.derivative(phi)
        dG = self.model.pot_G.derivative(phig)
        c = np.zeros(a.size)
        for i in range(a.size):
            tri = np.array([self.bulk(i, y=0.0), self.bulk(i, y=self.H)])
            c[i] = (p.eps * self.bulk_eig(i) * a[i] + self.bint(dF * self.bulk(i)) / p.eps
                    + k * self.gint((tr - phig) * tri))
        d = np.zeros(b.size)
        for i in range(b.size):
            lw = self.wall(i)
            wav = xwav(i % self.nX, self.L)
            d[i] = (p.eps_gamma * wav**2 * b[i] + self.gint(dG * lw) / p.eps_gamma
                    + k * self.gint((phig - tr) * lw))
        return c, d

    def brinkman_matrix(self, a, b):
        p = self.model.params
        phi = self.field(a)
        phig = self.wall_field(b)
        nu, lam = p.nu(phi), p.lam(phi)
        gam = p.gamma(phig)
        n = self.model.basis.n_vel
        V = np.array([self.vel(i) for i in range(n)]).reshape(n, 6, -1)
        Vw = np.array([[self.vel(i, y=0.0)[0], self.vel(i, y=self.H)[0]] for i in range(n)])
        ux, uy, uxx, uxy, uyx, uyy = (V[:, k] for k in range(6))
        d12 = 0.5 * (uxy + uyx)
        w2 = (2 * nu * self.W).ravel()
        wl = (lam * self.W).ravel()
        A = np.zeros((n, n))
        for i in range(n):
            for j in range(i, n):
                strain = uxx[i] * uxx[j] + 2 * d12[i] * d12[j] + uyy[i] * uyy[j]
                A[i, j] = (strain @ w2 + (ux[i] * ux[j] + uy[i] * uy[j]) @ wl
                           + self.gint(gam * Vw[i] * Vw[j]))
                A[j, i] = A[i, j]
        return A

    def drift(self, a, b):
        p = self.model.params
        c, d = self.chemical_potentials(a, b)
        phi = self.field(a)
        phig = self.wall_field(b)
        mux, muy = self.field(c, dx=1), self.field(c, dy=1)
        thx = self.wall_field(d, dx=1)
        n = self.model.basis.n_vel
        f = np.zeros(n)
        for i in range(n):
            ux, uy = self.vel(i)[:2]
            uw = np.array([self.vel(i, y=0.0)[0], self.vel(i, y=self.H)[0]])
            f[i] = -self.bint(phi * (mux * ux + muy * uy)) - self.gint(phig * thx * uw)
        A = self.brinkman_matrix(a, b)
        e = np.linalg.solve(A, f)
        ux = sum(e[i] * self.vel(i)[0] for i in range(n))
        uy = sum(e[i] * self.vel(i)[1] for i in range(n))
        uw = sum(e[i] * np.array([self.vel(i, y=0.0)[0], self.vel(i, y=self.H)[0]])
                 for i in range(n))
        Mo = p.mob_bulk(phi)
        Mg = p.mob_bnd(phig)
        da = np.zeros(a.size)
        for j in range(a.size):
            gx, gy = self.bulk(j, dx=1), self.bulk(j, dy=1)
            da[j] = self.bint(phi * (ux * gx + uy * gy)) - self.bint(Mo * (mux * gx + muy * gy))
        db = np.zeros(b.size)
        for j in range(b.size):
            lx = self.wall(j, dx=1)
            db[j] = self.gint(phig * uw * lx) - self.gint(Mg * thx * lx)
        return da, db, c, d, e
