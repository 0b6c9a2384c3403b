"""Two-dimensional invariant tori as multi-segment boundary-value problems.

A torus is represented by ``K = 2 n_h + 1`` trajectory segments
``u_i(t)``, ``t in [0, T2]``, whose initial points sample a closed curve
at equally spaced phases.  The end points must equal the initial curve
rotated by ``2 pi rho``, where the rotation acts on the order-``n_h``
trigonometric interpolant of the initial points.

Autonomous fields (the slow-frame reduced dynamics) have ``T2`` unknown
and need two phase conditions.  Periodically forced fields use the
forcing period as ``T2`` and need one.

Phase conditions (not fixed by the method itself, so chosen here):

* along the curve: ``sum_i <u_i(0) - u_i^ref(0), d_theta u^ref(0)_i> = 0``;
* along the flow (autonomous only):
  ``sum_i int <u_i - u_i^ref, (u_i^ref)'> dtau = 0``.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .colloc import Mesh, block_diag_coo
from .cont import Branch, ContSettings, ContinuationError, continue_branch, newton
from .po import PeriodicOrbit, drop_trivial, floquet

log = logging.getLogger(__name__)

PHASE_CONDITIONS = ("curve: linearised first-harmonic pin on the initial points",
                    "flow: integral condition against the previous torus (autonomous only)")


# ---------------------------------------------------------------------------
# rotation on the closed curve
# ---------------------------------------------------------------------------

def _fourier_mats(K):
    n_h = (K - 1) // 2
    k = np.arange(-n_h, n_h + 1)
    phi = 2.0 * np.pi * np.arange(K) / K
    E = np.exp(1j * np.outer(phi, k))           # synthesis
    F = np.exp(-1j * np.outer(k, phi)) / K      # analysis
    return k, E, F


def rotation_matrix(K, rho, derivative=False):
    """Real ``K x K`` matrix rotating curve samples by ``2 pi rho``.

    With ``derivative=True`` also returns ``dR / d rho``.
    """
    if K % 2 != 1:
        raise ValueError("point count must be odd")
    k, E, F = _fourier_mats(K)
    D = np.exp(2j * np.pi * k * rho)
    R = np.real((E * D) @ F)
    if not derivative:
        return R
    dR = np.real((E * (2j * np.pi * k * D)) @ F)
    return R, dR


def curve_derivative_matrix(K):
    """Matrix of ``d/d theta`` acting on curve samples."""
    k, E, F = _fourier_mats(K)
    return np.real((E * (1j * k)) @ F)


def rotation_operator(points, rho):
    """Rotate ``2 n_h + 1`` curve samples (rows of ``points``) by ``2 pi rho``."""
    P = np.asarray(points, dtype=float)
    return rotation_matrix(P.shape[0], rho) @ P


# ---------------------------------------------------------------------------
# solution container
# ---------------------------------------------------------------------------

@dataclass
class TorusSolution:
    """Converged torus: ``U[i]`` holds segment ``i`` at the mesh base points."""

    mesh: Mesh
    U: np.ndarray
    T2: float
    rho: float
    p: np.ndarray
    autonomous: bool
    info: dict = field(default_factory=dict)

    @property
    def n_h(self):
        return (self.U.shape[0] - 1) // 2

    @property
    def K(self):
        return self.U.shape[0]

    @property
    def omega2(self):
        return 2.0 * np.pi / self.T2

    @property
    def omega1(self):
        return self.rho * self.omega2

    @property
    def phases(self):
        return 2.0 * np.pi * np.arange(self.K) / self.K

    def initial_curve(self):
        return self.U[:, 0, :]

    def sample(self, n_pt=100):
        tau = np.linspace(0.0, 1.0, n_pt + 1)
        return tau * self.T2, np.stack([self.mesh.interp(Ui, tau) for Ui in self.U])

    def curve(self, theta, tau=0.0):
        """Trigonometric interpolant of the segments at time ``tau T2``."""
        pts = np.stack([self.mesh.interp(Ui, np.atleast_1d(tau))[0] for Ui in self.U])
        k, _, F = _fourier_mats(self.K)
        c = F @ pts
        return np.real(np.exp(1j * np.outer(np.atleast_1d(theta), k)) @ c)


# ---------------------------------------------------------------------------
# boundary-value problem
# ---------------------------------------------------------------------------

class TorusProblem:
    """Collocation equations of a torus with chosen free scalars.

    Unknowns: segment base values, then ``T2`` (autonomous only), then
    ``rho`` (unless ``fix_rho``), then the parameters listed in ``free``.
    """

    def __init__(self, field_, p, K, mesh: Mesh, free=(0,), fix_rho=False, rho=0.0):
        self.f = field_
        self.p = np.array(p, dtype=float)
        self.K = int(K)
        self.mesh = mesh
        self.n = field_.dim
        self.aut = bool(field_.autonomous)
        self.free = tuple(free)
        self.fix_rho = bool(fix_rho)
        self.rho_fixed = float(rho)
        self.nU = self.K * mesh.n_base * self.n
        self.Dtheta = curve_derivative_matrix(self.K)
        self.n_phase = 2 if self.aut else 1
        self._ops = None

    # -- packing -----------------------------------------------------------
    def pack(self, U, T2, rho, pfree):
        parts = [np.ravel(U)]
        if self.aut:
            parts.append([T2])
        if not self.fix_rho:
            parts.append([rho])
        parts.append(np.atleast_1d(pfree))
        return np.concatenate(parts)

    def unpack(self, y):
        U = y[: self.nU].reshape(self.K, self.mesh.n_base, self.n)
        k = self.nU
        p = self.p.copy()
        if self.aut:
            T2 = y[k]
            k += 1
        if self.fix_rho:
            rho = self.rho_fixed
        else:
            rho = y[k]
            k += 1
        for j, idx in enumerate(self.free):
            p[idx] = y[k + j]
        if not self.aut:
            T2 = self.f.period(p)
        return U, T2, rho, p

    @property
    def n_extra(self):
        return int(self.aut) + int(not self.fix_rho) + len(self.free)

    def set_reference(self, y):
        U, _, _, _ = self.unpack(y)
        self.ref_U = U.copy()
        U0 = U[:, 0, :]
        self.ref_dtheta = self.Dtheta @ U0
        self.ref_dU = np.stack([self.mesh.D @ Ui for Ui in U])

    def _phase(self, T2, p):
        if self.aut:
            return np.zeros(self.mesh.n_coll)
        return p[0] * T2 * self.mesh.tau_c

    def ops(self):
        if self._ops is None:
            Lk, Dk = self.mesh.ops(self.n)
            I = sp.identity(self.K, format="csr")
            self._ops = (sp.kron(I, Lk, format="csr"), sp.kron(I, Dk, format="csr"))
        return self._ops

    # -- residual ------------------------------------------------------------
    def fun(self, y):
        U, T2, rho, p = self.unpack(y)
        m = self.mesh
        ph = self._phase(T2, p)
        Uc = np.stack([m.L @ Ui for Ui in U])
        f = self.f.rhs(Uc, p, ph)
        ode = np.stack([m.D @ Ui for Ui in U]) - T2 * f
        R = rotation_matrix(self.K, rho)
        bc = U[:, -1, :] - R @ U[:, 0, :]
        res = [ode.ravel(), bc.ravel(),
               [np.sum((U[:, 0, :] - self.ref_U[:, 0, :]) * self.ref_dtheta)]]
        if self.aut:
            Lref = np.stack([m.L @ Ui for Ui in self.ref_U])
            dref = np.stack([m.D @ Ui for Ui in self.ref_U])
            res.append([np.sum(m.w_c[None, :, None] * (Uc - Lref) * dref)])
        return np.concatenate(res)

    def jac(self, y):
        U, T2, rho, p = self.unpack(y)
        m = self.mesh
        n, K, nb = self.n, self.K, m.n_base
        Lb, Db = self.ops()
        ph = self._phase(T2, p)
        Uc = np.stack([m.L @ Ui for Ui in U])
        Jc = self.f.jac(Uc, p, ph).reshape(-1, n, n)
        f = self.f.rhs(Uc, p, ph)
        dU_ode = Db - T2 * (block_diag_coo(Jc) @ Lb)
        extra_cols = []
        if self.aut:
            extra_cols.append(-f.ravel())
        R, dR = rotation_matrix(K, rho, derivative=True)
        if not self.fix_rho:
            extra_cols.append(np.zeros(f.size))
        for idx in self.free:
            dp = self.f.dpar(Uc, p, ph)[..., idx]
            col = -T2 * dp.ravel()
            if not self.aut:
                col = col - self.f.dperiod(p)[idx] * f.ravel()
            extra_cols.append(col)
        top = sp.hstack([dU_ode, sp.csr_matrix(np.column_stack(extra_cols))])

        # boundary rows: U_i(end) - sum_j R_ij U_j(0)
        rows, cols, vals = [], [], []
        ar = np.arange(n)
        for i in range(K):
            r0 = i * n + ar
            rows.append(r0)
            cols.append((i * nb + nb - 1) * n + ar)
            vals.append(np.ones(n))
            for j in range(K):
                if R[i, j] != 0.0:
                    rows.append(r0)
                    cols.append(j * nb * n + ar)
                    vals.append(np.full(n, -R[i, j]))
        bcU = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                            shape=(K * n, self.nU))
        bc_extra = np.zeros((K * n, self.n_extra))
        c = int(self.aut)
        if not self.fix_rho:
            bc_extra[:, c] = -(dR @ U[:, 0, :]).ravel()
        mid = sp.hstack([bcU, sp.csr_matrix(bc_extra)])

        # phase rows
        ph1 = np.zeros((K, nb, n))
        ph1[:, 0, :] = self.ref_dtheta
        blocks = [top, mid, sp.csr_matrix(np.append(ph1.ravel(), np.zeros(self.n_extra)))]
        if self.aut:
            dref = np.stack([m.D @ Ui for Ui in self.ref_U])
            wvec = (m.w_c[None, :, None] * dref).ravel()
            row = Lb.T @ wvec
            blocks.append(sp.csr_matrix(np.append(row, np.zeros(self.n_extra))))
        return sp.vstack(blocks, format="csc")

    def size(self, y):
        U = self.unpack(y)[0]
        U0 = U[:, 0, :]
        return float(np.sqrt(np.mean(np.sum((U0 - U0.mean(axis=0)) ** 2, axis=1))))

    def solution(self, y, info=None):
        U, T2, rho, p = self.unpack(y)
        return TorusSolution(self.mesh, U.copy(), float(T2), float(rho), p,
                             self.aut, dict(info or {}))


def torus_residual(tor: TorusSolution, field_):
    """Largest collocation residual plus boundary-closure error of ``tor``."""
    m = tor.mesh
    ph = np.zeros(m.n_coll) if tor.autonomous else tor.p[0] * tor.T2 * m.tau_c
    ode = 0.0
    for Ui in tor.U:
        r = m.D @ Ui - tor.T2 * field_.rhs(m.L @ Ui, tor.p, ph)
        ode = max(ode, float(np.max(np.abs(r))))
    bc = tor.U[:, -1, :] - rotation_operator(tor.U[:, 0, :], tor.rho)
    return ode + float(np.max(np.abs(bc)))


# ---------------------------------------------------------------------------
# seeds
# ---------------------------------------------------------------------------

_STRONG = (2.0 * np.pi / 3.0, np.pi / 2.0)


def tr_switch(orbit: PeriodicOrbit, field_, n_h=10, delta=1e-3, multipliers=None,
              strong_tol=0.02):
    """Seed torus near a torus bifurcation of ``orbit``.

    Each segment is the critical cycle perturbed along the Floquet
    eigenplane of the multiplier pair ``exp(+-i alpha)``; the seed rotation
    number is ``alpha / (2 pi)``.  ``delta = 0`` reproduces the cycle on
    every segment.  Returns ``(TorusSolution, direction)``.
    """
    mult, Phi = floquet(orbit, field_)
    if multipliers is not None:
        mult = np.asarray(multipliers)
    cand = drop_trivial(mult) if orbit.autonomous else mult
    cand = cand[cand.imag > 1e-9]
    if len(cand) == 0:
        raise ValueError("no complex multiplier pair at this orbit")
    mu = cand[np.argmin(np.abs(np.abs(cand) - 1.0))]
    alpha = float(np.angle(mu))
    if any(abs(alpha - a) < strong_tol for a in _STRONG):
        warnings.warn(f"torus seed near a strong resonance (alpha = {alpha:.4f})",
                      RuntimeWarning, stacklevel=2)
    w, vecs = np.linalg.eig(Phi[-1])
    v = vecs[:, np.argmin(np.abs(w - mu))]
    v = v / np.linalg.norm(v)
    K = 2 * n_h + 1
    theta = 2.0 * np.pi * np.arange(K) / K
    V = Phi @ v                                   # (n_base, n) complex
    pert = np.real(np.exp(1j * theta)[:, None, None] * V[None, :, :])
    pert /= max(np.max(np.abs(pert[:, 0, :])), 1e-300)
    U = orbit.X[None, :, :] + delta * pert
    tor = TorusSolution(orbit.mesh, U, float(orbit.T), alpha / (2.0 * np.pi),
                        np.array(orbit.p, dtype=float), orbit.autonomous,
                        {"seed": "TR", "alpha": alpha, "multiplier": complex(mu)})
    return tor, pert


def torus_from_curves(U, mesh: Mesh, T2, rho, p, autonomous):
    """Wrap user-supplied segment values as a :class:`TorusSolution`."""
    U = np.asarray(U, dtype=float)
    if U.shape[0] % 2 != 1:
        raise ValueError("segment count must be odd")
    return TorusSolution(mesh, U, float(T2), float(rho), np.asarray(p, dtype=float),
                         bool(autonomous))


# ---------------------------------------------------------------------------
# solve and continue
# ---------------------------------------------------------------------------

def correct_torus(field_, seed: TorusSolution, free=(), fix_rho=False, tol=1e-9,
                  max_iter=30, rounds=3):
    """Newton-correct a torus at fixed parameters.

    For autonomous fields nothing else is free besides ``T2`` and ``rho``;
    for forced fields ``rho`` is the only extra unknown.  Extra entries of
    ``free`` are pinned to their seed values.
    """
    prob = TorusProblem(field_, seed.p, seed.K, seed.mesh, free=free, fix_rho=fix_rho,
                        rho=seed.rho)
    y = prob.pack(seed.U, seed.T2, seed.rho, [seed.p[i] for i in free])
    prob.set_reference(y)
    n_pin = prob.n_extra - prob.n_phase
    if n_pin != len(free):
        raise ValueError("inconsistent torus unknowns")
    ok = True
    for _ in range(rounds):
        if free:
            rows = np.zeros((len(free), len(y)))
            for j in range(len(free)):
                rows[j, len(y) - len(free) + j] = 1.0
            y, ok = _newton_pinned(prob, y, rows, rows @ y, tol, max_iter)
        else:
            y, ok, _ = newton(prob.fun, prob.jac, y, tol, max_iter)
        if not ok:
            break
        prob.set_reference(y)
    if not ok:
        raise ContinuationError("torus Newton solve did not converge")
    tor = prob.solution(y, {"phase_conditions": PHASE_CONDITIONS})
    tor.info["residual"] = torus_residual(tor, field_)
    return tor


def _newton_pinned(prob, y, rows, rhs, tol, max_iter):
    from .cont import _solve
    for _ in range(max_iter):
        F = np.concatenate([prob.fun(y), rows @ y - rhs])
        J = sp.vstack([prob.jac(y), sp.csr_matrix(rows)], format="csc")
        dy = _solve(J, -F)
        if not np.all(np.isfinite(dy)):
            return y, False
        y = y + dy
        if np.linalg.norm(dy) <= tol * (1.0 + np.linalg.norm(y)):
            return y, True
    return y, False


def continue_torus(field_, seed: TorusSolution, free=0, bounds=None, mode="free",
                   settings: ContSettings | None = None, direction=None, sense=1,
                   second_free=1):
    """Continue a torus family in parameter ``p[free]``.

    ``mode="free"`` lets the rotation number vary; ``mode="fixed"`` keeps
    it at the seed value and frees ``p[second_free]`` as well.
    ``direction`` (shape of ``seed.U``) pins the first correction, as used
    when starting from a :func:`tr_switch` seed.  The branch ends at the
    bounds or when Newton keeps failing (reported as the branch status).
    """
    if mode not in ("free", "fixed"):
        raise ValueError("mode must be 'free' or 'fixed'")
    s = settings or ContSettings(h0=0.01, h_max=0.1, h_min=1e-6, max_steps=300)
    fix = mode == "fixed"
    frees = (free,) if not fix else (free, second_free)
    prob = TorusProblem(field_, seed.p, seed.K, seed.mesh, free=frees, fix_rho=fix,
                        rho=seed.rho)
    y0 = prob.pack(seed.U, seed.T2, seed.rho, [seed.p[i] for i in frees])
    prob.set_reference(y0)
    if direction is not None:
        row = np.zeros(len(y0))
        row[: prob.nU] = np.ravel(direction)
    else:
        row = np.zeros(len(y0))
        row[len(y0) - len(frees)] = 1.0
    ok = False
    for _ in range(4):
        y0, ok = _newton_pinned(prob, y0, row[None, :], np.array([row @ y0]), s.tol, 40)
        if not ok:
            break
        prob.set_reference(y0)
    if not ok:
        raise ContinuationError("could not converge the starting torus")

    def annotate(y, J):
        U, T2, rho, p = prob.unpack(y)
        return {"T2": float(T2), "rho": float(rho), "omega1": float(rho * 2 * np.pi / T2),
                "omega2": float(2 * np.pi / T2), "p": p.copy(), "size": prob.size(y)}

    scale = np.ones(len(y0))
    U0 = prob.unpack(y0)[0]
    scale[: prob.nU] = max(float(np.sqrt(np.mean(U0 ** 2))), 1e-3) * np.sqrt(prob.mesh.n_base)
    if prob.aut:
        scale[prob.nU] = abs(seed.T2)
    bnds = dict(s.bounds)
    if bounds is not None:
        bnds[len(y0) - len(frees)] = tuple(bounds)
    s2 = ContSettings(**{k: getattr(s, k) for k in s.__dataclass_fields__})
    s2.bounds = bnds
    s2.detect_closed = False
    br = continue_branch(prob.fun, prob.jac, y0, s2, t0=row, annotate=annotate, scale=scale,
                         direction=sense, on_accept=prob.set_reference)
    br.info.update(kind="torus2", K=prob.K, n_h=(prob.K - 1) // 2, mode=mode,
                   mesh=(prob.mesh.N, prob.mesh.d), phase_conditions=PHASE_CONDITIONS)
    br.problem = prob
    return br


def branch_torus(br: Branch, k: int) -> TorusSolution:
    """Torus stored at index ``k`` of a torus branch."""
    return br.problem.solution(br.points[k], {"index": k})
