"""Reduced vector fields in the slowly rotating frame.

With ``q_i = q_s,i exp(i r_i Omega t)`` the reduced dynamics becomes
autonomous.  Two coordinate charts are offered:

* Cartesian ``(Re q_s1, Im q_s1, ..., Re q_sm, Im q_sm)``, smooth at the
  origin and used for continuation;
* polar ``(rho_1, theta_1, ..., rho_m, theta_m)``, convenient for reading
  off amplitudes and phases.

Both fields take parameters ``p = (Omega, eps)`` and expose analytic
Jacobians with respect to state and parameters.
"""

from __future__ import annotations

import numpy as np

from .ssm import ReducedModel


class _Terms:
    """Flat arrays of the resonant monomials of a reduced model."""

    def __init__(self, rm: ReducedModel):
        keys = sorted(rm.gamma)
        m = rm.m
        self.m = m
        self.row = np.array([k[0] for k in keys], dtype=int)
        self.L = np.array([k[1] for k in keys], dtype=int).reshape(-1, m)
        self.J = np.array([k[2] for k in keys], dtype=int).reshape(-1, m)
        self.g = np.array([rm.gamma[k] for k in keys], dtype=complex)
        self.lam = np.asarray(rm.lam, dtype=complex)
        self.r = np.array([float(x) for x in rm.r])
        self.f = np.asarray(rm.f, dtype=complex)

    def __len__(self):
        return len(self.row)


def _powers(z, E):
    """``prod_k z_k ** E[t, k]`` for batched ``z`` (..., m) -> (..., nt)."""
    out = np.ones(z.shape[:-1] + (E.shape[0],), dtype=z.dtype)
    for k in range(E.shape[1]):
        e = E[:, k]
        if np.any(e):
            out = out * z[..., k, None] ** e
    return out


class CartesianROM:
    """Reduced field in Cartesian slow-frame coordinates."""

    autonomous = True

    def __init__(self, rm: ReducedModel):
        self.rm = rm
        self.t = _Terms(rm)
        self.m = rm.m
        self.dim = 2 * rm.m

    # complex helpers ------------------------------------------------------
    def _q(self, x):
        x = np.asarray(x, dtype=float)
        return x[..., 0::2] + 1j * x[..., 1::2]

    def _complex_rhs(self, q, Omega, eps):
        t = self.t
        lin = (t.lam - 1j * t.r * Omega) * q
        if len(t):
            mono = _powers(q, t.L) * _powers(np.conj(q), t.J) * t.g
            nl = np.zeros_like(q)
            for i in range(self.m):
                nl[..., i] = mono[..., t.row == i].sum(axis=-1)
        else:
            nl = 0.0
        return lin + nl + eps * t.f

    def rhs(self, x, p, phase=None):
        q = self._q(x)
        g = self._complex_rhs(q, p[0], p[1])
        out = np.empty(q.shape[:-1] + (self.dim,))
        out[..., 0::2] = g.real
        out[..., 1::2] = g.imag
        return out

    def jac(self, x, p, phase=None):
        q = self._q(x)
        t = self.t
        m = self.m
        shp = q.shape[:-1]
        # dg_i/dq_k and dg_i/dconj(q_k)
        Gq = np.zeros(shp + (m, m), dtype=complex)
        Gc = np.zeros(shp + (m, m), dtype=complex)
        for i in range(m):
            Gq[..., i, i] = t.lam[i] - 1j * t.r[i] * p[0]
        if len(t):
            qc = np.conj(q)
            PL = _powers(q, t.L)
            PJ = _powers(qc, t.J)
            for k in range(m):
                Lk = t.L.copy()
                Lk[:, k] = np.maximum(Lk[:, k] - 1, 0)
                Jk = t.J.copy()
                Jk[:, k] = np.maximum(Jk[:, k] - 1, 0)
                dq = t.g * t.L[:, k] * _powers(q, Lk) * PJ
                dc = t.g * t.J[:, k] * PL * _powers(qc, Jk)
                for i in range(m):
                    sel = t.row == i
                    Gq[..., i, k] += dq[..., sel].sum(axis=-1)
                    Gc[..., i, k] += dc[..., sel].sum(axis=-1)
        dx = Gq + Gc
        dy = 1j * (Gq - Gc)
        J = np.empty(shp + (self.dim, self.dim))
        J[..., 0::2, 0::2] = dx.real
        J[..., 1::2, 0::2] = dx.imag
        J[..., 0::2, 1::2] = dy.real
        J[..., 1::2, 1::2] = dy.imag
        return J

    def dpar(self, x, p, phase=None):
        x = np.asarray(x, dtype=float)
        t = self.t
        out = np.zeros(x.shape + (2,))
        out[..., 0::2, 0] = t.r * x[..., 1::2]
        out[..., 1::2, 0] = -t.r * x[..., 0::2]
        out[..., 0::2, 1] = t.f.real
        out[..., 1::2, 1] = t.f.imag
        return out

    # orbits of the reduced field live in the slow frame
    def period(self, p):
        raise TypeError("autonomous field has no forcing period")


class PolarROM:
    """Reduced field in polar slow-frame coordinates ``(rho_i, theta_i)``."""

    autonomous = True

    def __init__(self, rm: ReducedModel):
        self.rm = rm
        self.t = _Terms(rm)
        self.m = rm.m
        self.dim = 2 * rm.m
        m = self.m
        t = self.t
        # phase weights <l - j - e_i, theta>
        self.Phi = t.L - t.J
        self.Phi[np.arange(len(t)), t.row] -= 1
        self.P = t.L + t.J

    def _terms(self, x):
        rho = x[..., 0::2]
        th = x[..., 1::2]
        T = self.t.g * _powers(rho.astype(complex), self.P) * np.exp(1j * (th @ self.Phi.T))
        return rho, th, T

    def rhs(self, x, p, phase=None):
        x = np.asarray(x, dtype=float)
        t = self.t
        Omega, eps = p[0], p[1]
        rho, th, T = self._terms(x)
        G = eps * t.f * np.exp(-1j * th)
        out = np.empty(x.shape)
        rd = rho * t.lam.real + G.real
        td = t.lam.imag - t.r * Omega + G.imag / rho
        for i in range(self.m):
            s = T[..., t.row == i].sum(axis=-1)
            rd[..., i] += s.real
            td[..., i] += s.imag / rho[..., i]
        out[..., 0::2] = rd
        out[..., 1::2] = td
        return out

    def jac(self, x, p, phase=None):
        x = np.asarray(x, dtype=float)
        t = self.t
        m = self.m
        eps = p[1]
        rho, th, T = self._terms(x)
        G = eps * t.f * np.exp(-1j * th)
        shp = x.shape[:-1]
        J = np.zeros(shp + (self.dim, self.dim))
        for i in range(m):
            sel = t.row == i
            Ti = T[..., sel]
            Pi = self.P[sel]
            Phii = self.Phi[sel]
            Si = Ti.sum(axis=-1)
            for k in range(m):
                # d/d rho_k of rho^P: P_k / rho_k
                dT_r = (Ti * Pi[:, k] / rho[..., k, None]).sum(axis=-1)
                dT_t = (1j * Ti * Phii[:, k]).sum(axis=-1)
                J[..., 2 * i, 2 * k] += dT_r.real
                J[..., 2 * i, 2 * k + 1] += dT_t.real
                J[..., 2 * i + 1, 2 * k] += dT_r.imag / rho[..., i]
                J[..., 2 * i + 1, 2 * k + 1] += dT_t.imag / rho[..., i]
            J[..., 2 * i, 2 * i] += t.lam[i].real
            J[..., 2 * i + 1, 2 * i] -= (Si.imag + G[..., i].imag) / rho[..., i] ** 2
            dG = -1j * G[..., i]
            J[..., 2 * i, 2 * i + 1] += dG.real
            J[..., 2 * i + 1, 2 * i + 1] += dG.imag / rho[..., i]
        return J

    def dpar(self, x, p, phase=None):
        x = np.asarray(x, dtype=float)
        t = self.t
        th = x[..., 1::2]
        rho = x[..., 0::2]
        out = np.zeros(x.shape + (2,))
        out[..., 1::2, 0] = -t.r
        H = t.f * np.exp(-1j * th)
        out[..., 0::2, 1] = H.real
        out[..., 1::2, 1] = H.imag / rho
        return out


def assemble_cartesian(rm: ReducedModel) -> CartesianROM:
    return CartesianROM(rm)


def assemble_polar(rm: ReducedModel) -> PolarROM:
    return PolarROM(rm)


def polar_vf(state, rm: ReducedModel, Omega, eps, rho_min=1e-12):
    """Polar reduced field at ``(rho_1, theta_1, ...)``.

    Raises ``ValueError`` when an amplitude drops below ``rho_min``, where
    the angle equation is singular.
    """
    rho = np.asarray(state, dtype=float)[..., 0::2]
    if np.any(rho < rho_min):
        raise ValueError(f"polar amplitude below {rho_min:g}: use Cartesian coordinates")
    return PolarROM(rm).rhs(state, (Omega, eps))


def cartesian_vf(state, rm: ReducedModel, Omega, eps):
    return CartesianROM(rm).rhs(state, (Omega, eps))


def cartesian_jacobian(state, rm: ReducedModel, Omega, eps):
    return CartesianROM(rm).jac(state, (Omega, eps))


def param_derivatives(state, rm: ReducedModel):
    """Columns are the derivatives of the Cartesian field in Omega and eps."""
    return CartesianROM(rm).dpar(state, (0.0, 0.0))


def polar_to_cartesian(y):
    y = np.asarray(y, dtype=float)
    x = np.empty_like(y)
    x[..., 0::2] = y[..., 0::2] * np.cos(y[..., 1::2])
    x[..., 1::2] = y[..., 0::2] * np.sin(y[..., 1::2])
    return x


def cartesian_to_polar(x):
    x = np.asarray(x, dtype=float)
    y = np.empty_like(x)
    y[..., 0::2] = np.hypot(x[..., 0::2], x[..., 1::2])
    y[..., 1::2] = np.arctan2(x[..., 1::2], x[..., 0::2])
    return y


def slow_to_modal(x, rm: ReducedModel, Omega, t):
    """Modal coordinates ``p(t)`` from slow-frame Cartesian states at times ``t``.

    Returns ``(..., 2m)`` complex values ordered as ``(q1, conj q1, ...)``.
    """
    x = np.asarray(x, dtype=float)
    qs = x[..., 0::2] + 1j * x[..., 1::2]
    r = np.array([float(v) for v in rm.r])
    q = qs * np.exp(1j * np.multiply.outer(np.asarray(t, dtype=float) * Omega, r))
    p = np.empty(q.shape[:-1] + (2 * rm.m,), dtype=complex)
    p[..., 0::2] = q
    p[..., 1::2] = np.conj(q)
    return p
