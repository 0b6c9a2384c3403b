"""Periodic orbits by collocation, Floquet analysis and bifurcation tests.

Works for autonomous fields (the reduced slow-frame dynamics, where the
period is an unknown fixed by an integral phase condition) and for
periodically forced fields such as :class:`ssmtori.model.MechanicalField`
(period ``2 pi / (r_d Omega)``, no phase condition).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .colloc import Mesh, block_diag_coo, fundamental_solution, transfer_matrices
from .cont import Branch, ContSettings, ContinuationError, continue_branch, newton

log = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# test functions on multipliers
# ---------------------------------------------------------------------------

def drop_trivial(mult):
    """Remove the multiplier closest to one."""
    mult = np.asarray(mult)
    k = int(np.argmin(np.abs(mult - 1.0)))
    return np.delete(mult, k)


def po_test_functions(mult, autonomous=True, n_b=None):
    """``(psi_SN, psi_PD, psi_TR)`` from Floquet multipliers.

    For autonomous systems the trivial multiplier is removed first.  With
    ``n_b`` only the ``n_b`` multipliers closest to the unit circle enter.
    ``psi_TR`` is 1 when a single multiplier remains.
    """
    lam = np.asarray(mult, dtype=complex)
    if autonomous:
        lam = drop_trivial(lam)
    if n_b is not None and n_b > len(lam):
        raise ValueError(f"n_b = {n_b} exceeds the {len(lam)} available multipliers")
    if n_b is not None:
        order = np.argsort(np.abs(np.abs(lam) - 1.0))
        lam = lam[order[:n_b]]
    sn = np.prod(lam - 1.0)
    pd = np.prod(lam + 1.0)
    tr = 1.0 + 0j
    for i in range(len(lam)):
        for j in range(i):
            tr *= lam[i] * lam[j] - 1.0
    return float(sn.real), float(pd.real), float(tr.real)


def _tr_pair(lam, tol=1e-6):
    """Complex multiplier pair with ``lam_i lam_j`` closest to one, if genuine."""
    best = None
    for i in range(len(lam)):
        for j in range(i):
            v = abs(lam[i] * lam[j] - 1.0)
            if best is None or v < best[0]:
                best = (v, i, j)
    if best is None:
        return None
    _, i, j = best
    if abs(lam[i] - np.conj(lam[j])) > 1e-3 * max(1.0, abs(lam[i])) or abs(lam[i].imag) < tol:
        return None
    k = i if lam[i].imag > 0 else j
    return k


# ---------------------------------------------------------------------------
# collocation problem
# ---------------------------------------------------------------------------

class POProblem:
    """Collocation equations for one periodic orbit with one free parameter.

    Unknowns ``y = (X, T, p_free)`` for autonomous fields and
    ``y = (X, p_free)`` for forced ones, where ``X`` holds the base-point
    values row by row.
    """

    def __init__(self, field_, p, free=0, mesh: Mesh | None = None):
        self.f = field_
        self.p = np.array(p, dtype=float)
        self.free = free
        self.mesh = mesh or Mesh()
        self.n = field_.dim
        self.aut = bool(field_.autonomous)
        self.nX = self.mesh.n_base * self.n
        self.ref_dX = None

    # -- packing -----------------------------------------------------------
    def pack(self, X, T, pfree):
        parts = [np.ravel(X)]
        if self.aut:
            parts.append([T])
        parts.append([pfree])
        return np.concatenate(parts)

    def unpack(self, y):
        X = y[: self.nX].reshape(self.mesh.n_base, self.n)
        p = self.p.copy()
        p[self.free] = y[-1]
        T = y[self.nX] if self.aut else self.f.period(p)
        return X, T, p

    def phase_c(self, T, p):
        if self.aut:
            return np.zeros(self.mesh.n_coll)
        return p[0] * T * self.mesh.tau_c

    def set_reference(self, y):
        X, _, _ = self.unpack(y)
        self.ref_X = X.copy()
        self.ref_dX = (self.mesh.D @ X)

    # -- residual ------------------------------------------------------------
    def fun(self, y):
        X, T, p = self.unpack(y)
        m = self.mesh
        Xc = m.L @ X
        f = self.f.rhs(Xc, p, self.phase_c(T, p))
        res = [(m.D @ X - T * f).ravel(), X[-1] - X[0]]
        if self.aut:
            res.append([np.sum(m.w_c[:, None] * (Xc - m.L @ self.ref_X) * self.ref_dX)])
        return np.concatenate(res)

    def jac(self, y):
        X, T, p = self.unpack(y)
        m = self.mesh
        n = self.n
        Lk, Dk = m.ops(n)
        Xc = m.L @ X
        ph = self.phase_c(T, p)
        Jc = self.f.jac(Xc, p, ph)
        f = self.f.rhs(Xc, p, ph)
        dp = self.f.dpar(Xc, p, ph)[..., self.free]
        dX = Dk - T * (block_diag_coo(Jc) @ Lk)
        per = sp.hstack([-sp.identity(n), sp.csr_matrix((n, self.nX - 2 * n)),
                         sp.identity(n)])
        cols_extra = []
        if self.aut:
            cols_extra.append(-f.ravel())
            dpf = -T * dp.ravel()
        else:
            dT = self.f.dperiod(p)[self.free]
            # phase grid scales with Omega T, which is constant for forced fields
            dpf = -T * dp.ravel() - dT * f.ravel()
        cols_extra.append(dpf)
        top = sp.hstack([dX, sp.csr_matrix(np.column_stack(cols_extra))])
        mid = sp.hstack([per, sp.csr_matrix((n, len(cols_extra)))])
        blocks = [top, mid]
        if self.aut:
            row = (m.w_c[:, None] * self.ref_dX).ravel() @ Lk
            blocks.append(sp.hstack([sp.csr_matrix(row), sp.csr_matrix((1, 2))]))
        return sp.vstack(blocks, format="csc")

    # -- diagnostics ---------------------------------------------------------
    def monodromy(self, y):
        X, T, p = self.unpack(y)
        Xc = self.mesh.L @ X
        Jc = self.f.jac(Xc, p, self.phase_c(T, p))
        Phis, _ = transfer_matrices(self.mesh, Jc, T)
        M = np.eye(self.n)
        for P in Phis:
            M = P @ M
        return M

    def multipliers(self, y):
        return np.linalg.eigvals(self.monodromy(y))

    def size(self, y):
        X, _, _ = self.unpack(y)
        return orbit_size(self.mesh, X)


def orbit_size(mesh: Mesh, X):
    """``sqrt(int_0^1 |x - mean(x)|^2 dtau)`` for base values ``X``."""
    g, w = np.polynomial.legendre.leggauss(mesh.d + 2)
    tau = np.concatenate([(j + 0.5 * (g + 1)) / mesh.N for j in range(mesh.N)])
    wt = np.tile(0.5 * w / mesh.N, mesh.N)
    xs = mesh.interp(X, tau)
    mean = wt @ xs
    return float(np.sqrt(wt @ np.sum((xs - mean) ** 2, axis=1)))


po_size = orbit_size


# ---------------------------------------------------------------------------
# results
# ---------------------------------------------------------------------------

@dataclass
class PeriodicOrbit:
    """A converged periodic orbit on a mesh."""

    mesh: Mesh
    X: np.ndarray
    T: float
    p: np.ndarray
    multipliers: np.ndarray
    autonomous: bool

    @property
    def stable(self):
        lam = drop_trivial(self.multipliers) if self.autonomous else self.multipliers
        return bool(np.all(np.abs(lam) < 1.0))

    def sample(self, n_pt=200, tau=None):
        tau = np.linspace(0.0, 1.0, n_pt) if tau is None else np.asarray(tau)
        return tau * self.T, self.mesh.interp(self.X, tau)

    @property
    def size(self):
        return orbit_size(self.mesh, self.X)

    def amplitude(self, n_pt=400):
        _, xs = self.sample(n_pt)
        return np.max(np.abs(xs), axis=0)


def collocate_po(field_, X_guess, T_guess, p, mesh: Mesh | None = None, tol=1e-10,
                 max_iter=30):
    """Converge one periodic orbit at fixed parameters.

    ``X_guess`` are values at the mesh base points (or a callable of
    ``tau``).  Returns a :class:`PeriodicOrbit`.
    """
    mesh = mesh or Mesh()
    prob = POProblem(field_, p, free=0, mesh=mesh)
    if callable(X_guess):
        X_guess = X_guess(mesh.tau)
    X_guess = np.asarray(X_guess, dtype=float)
    y = prob.pack(X_guess, T_guess, p[0])
    prob.set_reference(y)
    fix = np.zeros(len(y))
    fix[-1] = 1.0
    for _ in range(3):
        y, ok, _ = newton(prob.fun, prob.jac, y, tol, max_iter, row=fix, rhs_row=p[0])
        if not ok:
            raise ContinuationError("periodic orbit Newton solve did not converge")
        if not prob.aut:
            break
        prob.set_reference(y)
    X, T, pp = prob.unpack(y)
    return PeriodicOrbit(mesh, X.copy(), float(T), pp, prob.multipliers(y), prob.aut)


def hb_switch(field_, x_hb, p_hb, eigvec, omega, delta=1e-3, mesh: Mesh | None = None):
    """Seed orbit ``x_hb + delta Re(w e^{i omega t})`` near a Hopf point.

    Returns ``(X, T, direction)`` where ``direction`` is the tangent-like
    perturbation used to pick the bifurcating branch.
    """
    mesh = mesh or Mesh()
    w = np.asarray(eigvec, dtype=complex)
    w = w / np.linalg.norm(w)
    w = w * np.exp(-1j * np.angle(w[np.argmax(np.abs(w))]))
    T = 2.0 * np.pi / omega
    pert = np.real(np.outer(np.exp(2j * np.pi * mesh.tau), w))
    X = np.asarray(x_hb, dtype=float)[None, :] + delta * pert
    return X, T, pert


def continue_po(field_, X0, T0, p, free=0, settings: ContSettings | None = None,
                mesh: Mesh | None = None, bounds=None, direction=None, size_tol=1e-6,
                n_b=None, max_size=None, sense=1, x_scale=None):
    """Continue a periodic orbit in ``p[free]``.

    ``direction`` (same shape as ``X0``) pins the first correction along a
    perturbation, as used for branch switching at a Hopf point; the first
    branch step then moves away from the degenerate orbit.

    Returns a :class:`Branch`; each point carries ``T``, ``size``,
    ``multipliers``, ``stable`` and ``amp`` annotations.  Events are
    ``SN``, ``PD`` and ``TR``; the branch stops when the orbit shrinks
    below ``size_tol``.  ``sense = -1`` starts towards decreasing
    ``p[free]`` when no perturbation is given.  ``x_scale`` is the
    characteristic state magnitude used to measure steps; by default it is
    taken from the starting orbit, which is small right at a Hopf point.
    """
    mesh = mesh or Mesh()
    s = settings or ContSettings(h0=0.01, h_max=0.1, h_min=1e-8, max_steps=1500)
    prob = POProblem(field_, p, free=free, mesh=mesh)
    X0 = np.asarray(X0, dtype=float)
    y0 = prob.pack(X0, T0, p[free])
    prob.set_reference(y0)
    n = prob.n
    if direction is not None:
        row = np.zeros(len(y0))
        row[: prob.nX] = np.ravel(direction)
        ok = False
        for _ in range(4):
            y0, ok, _ = newton(prob.fun, prob.jac, y0, s.tol, 40, row=row, rhs_row=row @ y0)
            if not ok:
                break
            prob.set_reference(y0)
        hint = row
    else:
        fix = np.zeros(len(y0))
        fix[-1] = 1.0
        for _ in range(3 if prob.aut else 1):
            y0, ok, _ = newton(prob.fun, prob.jac, y0, s.tol, 40, row=fix, rhs_row=p[free])
            if not ok:
                break
            prob.set_reference(y0)
        hint = fix
    if not ok:
        raise ContinuationError("could not converge the starting periodic orbit")

    cache = {}

    def mults(y):
        key = y.tobytes()
        if key not in cache:
            if len(cache) > 64:
                cache.clear()
            cache[key] = prob.multipliers(y)
        return cache[key]

    def tf(k):
        return lambda y, J, t: po_test_functions(mults(y), prob.aut, n_b)[k]

    def deviation(X):
        return X - X[:-1].mean(axis=0)

    def t_size(y, J, t):
        return prob.size(y) - size_tol

    def end_check(y, t, h):
        # An orbit shrinking onto an equilibrium: the predicted deviation
        # passes through zero within this step.  Stop at that point.
        X = prob.unpack(y)[0]
        dX = t[: prob.nX].reshape(X.shape)
        d0 = deviation(X)
        d1 = deviation(dX)
        a = float(np.sum(d0 * d1))
        b = float(np.sum(d0 * d0))
        if a >= 0 or b == 0:
            return None
        hs = -b / a
        if hs > h:
            return None
        ye = y + hs * t
        return "HB", ye, {"size": prob.size(ye)}

    def classify(name, y, J, t):
        lam = mults(y)
        if prob.aut:
            lam = drop_trivial(lam)
        if name == "TR":
            k = _tr_pair(lam)
            if k is None:
                return None
            return "TR", {"alpha": float(abs(np.angle(lam[k]))), "multiplier": lam[k]}
        if name == "ZS":
            return "HB", {"size": prob.size(y)}
        return name

    max_seen = [prob.size(y0)]

    def annotate(y, J):
        X, T, pp = prob.unpack(y)
        max_seen[0] = max(max_seen[0], prob.size(y))
        lam = mults(y)
        red = drop_trivial(lam) if prob.aut else lam
        return {"T": float(T), "p": pp.copy(), "size": prob.size(y), "multipliers": lam,
                "stable": bool(np.all(np.abs(red) < 1.0)),
                "amp": np.max(np.abs(mesh.interp(X, np.linspace(0, 1, 4 * mesh.n_base))), axis=0)}

    bnds = dict(s.bounds)
    if bounds is not None:
        bnds[len(y0) - 1] = tuple(bounds)
    s2 = ContSettings(**{k: getattr(s, k) for k in s.__dataclass_fields__})
    s2.bounds = bnds
    s2.detect_closed = s.detect_closed

    scale = np.ones(len(y0))
    X0c = prob.unpack(y0)[0]
    rms = float(np.sqrt(np.mean(np.sum(X0c ** 2, axis=1))))
    xs = max(rms, prob.size(y0), 1e-3) if x_scale is None else float(x_scale)
    scale[: prob.nX] = xs * np.sqrt(mesh.n_base)
    if prob.aut:
        scale[prob.nX] = abs(T0)
    scale[-1] = 1.0
    tests = {"SN": tf(0), "PD": tf(1), "TR": tf(2)}
    if prob.aut:
        tests["ZS"] = t_size
    br = continue_branch(prob.fun, prob.jac, y0, s2, t0=hint, tests=tests, classify=classify,
                         annotate=annotate, scale=scale, terminal=("HB",), direction=sense,
                         on_accept=prob.set_reference, fold_tests=("SN",),
                         end_check=end_check if prob.aut else None)
    br.info.update(kind="periodic_orbits", n=n, nX=prob.nX, autonomous=prob.aut,
                   mesh=(mesh.N, mesh.d), free=free)
    br.problem = prob
    return br


def branch_orbit(br: Branch, k: int) -> PeriodicOrbit:
    """Periodic orbit stored at index ``k`` of a PO branch."""
    prob = br.problem
    X, T, p = prob.unpack(br.points[k])
    return PeriodicOrbit(prob.mesh, X.copy(), float(T), p, prob.multipliers(br.points[k]),
                         prob.aut)


def floquet(orbit: PeriodicOrbit, field_):
    """Multipliers and fundamental solution at the mesh base points."""
    mesh = orbit.mesh
    Xc = mesh.L @ orbit.X
    ph = orbit.p[0] * orbit.T * mesh.tau_c if not orbit.autonomous else np.zeros(mesh.n_coll)
    Jc = field_.jac(Xc, orbit.p, ph)
    Phi = fundamental_solution(mesh, Jc, orbit.T)
    return np.linalg.eigvals(Phi[-1]), Phi
