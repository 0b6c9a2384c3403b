"""Direct time integration of the full system and torus verification.

The integrator is the implicit Newmark scheme with numerical damping
parameter ``alpha`` (``gamma = 1/2 + alpha``, ``beta = (1 + alpha)^2 / 4``)
and a fixed number of steps per forcing period.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .lift import poincare_circle
from .model import MechSystem
from .po import drop_trivial


class IntegrationError(RuntimeError):
    """Newton failure inside a time step."""


@dataclass
class Trajectory:
    """Samples of ``z = (x, v)`` at times ``t``."""

    t: np.ndarray
    z: np.ndarray
    Omega: float
    eps: float
    steps_per_cycle: int


def newmark_integrate(mech: MechSystem, z0, Omega, eps=None, steps_per_cycle=1000,
                      n_cycles=10, alpha=0.005, keep_every=1, tol=1e-12, max_iter=20):
    """Integrate ``M x'' + C x' + K x + f_nl = eps f_ext cos(Omega t)``.

    ``z0 = (x0, v0)``.  Returns a :class:`Trajectory` holding every
    ``keep_every``-th step plus the state at each full forcing period.
    """
    eps = mech.eps if eps is None else eps
    n = mech.n
    M, C, K = mech.M, mech.C, mech.K
    gam = 0.5 + alpha
    beta = (1.0 + alpha) ** 2 / 4.0
    h = 2.0 * np.pi / (steps_per_cycle * Omega)
    z0 = np.asarray(z0, dtype=float)
    x, v = z0[:n].copy(), z0[n:].copy()
    fnl = mech.f_nl
    has_nl = fnl.n_terms > 0

    def force(t):
        return eps * np.cos(Omega * t) * mech.f_ext

    def nl(x, v):
        if not has_nl:
            return np.zeros(n), np.zeros((n, 2 * n))
        zz = np.concatenate([x, v])
        return fnl.eval(zz), fnl.jacobian(zz)

    f0, _ = nl(x, v)
    a = np.linalg.solve(M, force(0.0) - C @ v - K @ x - f0)
    S_lin = M + gam * h * C + beta * h * h * K
    n_steps = int(steps_per_cycle * n_cycles)
    ts, zs = [0.0], [np.concatenate([x, v])]
    for k in range(1, n_steps + 1):
        t = k * h
        xp = x + h * v + h * h * (0.5 - beta) * a
        vp = v + h * (1.0 - gam) * a
        Fk = force(t)
        an = a.copy()
        for it in range(max_iter):
            xn = xp + beta * h * h * an
            vn = vp + gam * h * an
            fn, Jn = nl(xn, vn)
            r = M @ an + C @ vn + K @ xn + fn - Fk
            S = S_lin + beta * h * h * Jn[:, :n] + gam * h * Jn[:, n:]
            da = np.linalg.solve(S, -r)
            an = an + da
            if np.linalg.norm(da) <= tol * (1.0 + np.linalg.norm(an)):
                break
        else:
            raise IntegrationError(f"Newton failed at t = {t:.6g}")
        x = xp + beta * h * h * an
        v = vp + gam * h * an
        a = an
        if k % keep_every == 0 or k % steps_per_cycle == 0:
            ts.append(t)
            zs.append(np.concatenate([x, v]))
    return Trajectory(np.array(ts), np.array(zs), float(Omega), float(eps), int(steps_per_cycle))


def section(traj: Trajectory):
    """States at integer multiples of the forcing period."""
    T = 2.0 * np.pi / traj.Omega
    k = np.round(traj.t / T)
    on = np.abs(traj.t - k * T) <= 1e-9 * max(1.0, traj.t[-1])
    return traj.z[on]


def select_tf(rho_s, multipliers, Delta=1e-3, M_bar=200, Omega=1.0, autonomous=True):
    """Final time and window divisor ``(t_f, M)`` for a torus simulation.

    ``M = min(ceil(log Delta / log |mu_max|), M_bar)`` with ``mu_max`` the
    largest nontrivial multiplier of the reduced cycle; at least one.
    ``t_f = M ceil(1 / rho_s) 2 pi / Omega``.
    """
    lam = np.asarray(multipliers, dtype=complex)
    if autonomous and len(lam) > 1:
        lam = drop_trivial(lam)
    if len(lam) == 0:
        raise ValueError("no nontrivial multipliers")
    mu = float(np.max(np.abs(lam)))
    if mu >= 1.0:
        warnings.warn("reduced cycle is not stable; using the cap M_bar", RuntimeWarning,
                      stacklevel=2)
        M = int(M_bar)
    elif Delta >= 1.0:
        M = 1
    else:
        M = max(1, min(int(math.ceil(math.log(Delta) / math.log(mu) - 1e-12)), int(M_bar)))
    t_f = M * math.ceil(1.0 / rho_s) * 2.0 * np.pi / Omega
    return t_f, M


def mle(multipliers, T_s, autonomous=True):
    """Maximal Lyapunov exponent ``ln max|mu| / T_s`` of a cycle."""
    lam = np.asarray(multipliers, dtype=complex)
    if autonomous:
        if len(lam) < 2:
            raise ValueError("no nontrivial multipliers")
        lam = drop_trivial(lam)
    if len(lam) == 0:
        raise ValueError("no nontrivial multipliers")
    return float(np.log(np.max(np.abs(lam))) / T_s)


def polyline_distance(points, curve, closed=True):
    """Distance from each point to the polyline through ``curve``."""
    P = np.atleast_2d(points)
    A = np.asarray(curve)
    B = np.roll(A, -1, axis=0) if closed else A[1:]
    if not closed:
        A = A[:-1]
    AB = B - A
    L2 = np.maximum(np.sum(AB * AB, axis=1), 1e-300)
    AP = P[:, None, :] - A[None, :, :]
    s = np.clip(np.sum(AP * AB[None], axis=2) / L2[None], 0.0, 1.0)
    d = AP - s[..., None] * AB[None]
    return np.sqrt(np.min(np.sum(d * d, axis=2), axis=1))


@dataclass
class SimReport:
    """Outcome of a torus verification run."""

    verdict: str
    distances: np.ndarray
    diameter: float
    threshold: float
    amplitude: np.ndarray
    n_cycles: int
    M: int
    section: np.ndarray
    trajectory: Trajectory | None = None
    info: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "verdict": self.verdict,
            "max_distance": float(np.max(self.distances)),
            "steady_max_distance": float(np.max(self.distances[-self._window():])),
            "diameter": self.diameter,
            "threshold": self.threshold,
            "amplitude": self.amplitude.tolist(),
            "n_cycles": self.n_cycles,
            "M": self.M,
            "metric": "nearest distance to the predicted section polyline / diameter",
            **{k: v for k, v in self.info.items() if isinstance(v, (int, float, str))},
        }

    def _window(self):
        return max(1, len(self.distances) // max(self.M, 1))


def verify_torus(torus, mech: MechSystem, n_cycles=None, multipliers=None, T_s=None,
                 Delta=1e-3, M_bar=200, M=None, steps_per_cycle=1000, alpha=0.005,
                 rel_tol=0.02, start=0, keep_every=10):
    """Integrate the full system from a point of a lifted 2-torus.

    The horizon is ``n_cycles`` forcing periods, or follows
    :func:`select_tf` when multipliers of the reduced cycle are given.
    Section points (one per forcing period) are compared with the
    predicted invariant circle.  Verdicts:

    * ``on-torus``: every section point is within ``rel_tol`` times the
      circle diameter;
    * ``converged-nearby``: only the steady window (last ``1/M`` of the
      horizon) is within tolerance;
    * ``diverged``: otherwise.
    """
    Omega = torus.Omega
    circle = poincare_circle(torus)
    diam = float(np.max(np.linalg.norm(circle[:, None, :] - circle[None, :, :], axis=2)))
    if n_cycles is None:
        if multipliers is None or T_s is None:
            raise ValueError("give n_cycles or the reduced-cycle multipliers and period")
        rho_s = (2.0 * np.pi / T_s) / Omega
        t_f, M = select_tf(rho_s, multipliers, Delta, M_bar, Omega)
        n_cycles = int(round(t_f * Omega / (2.0 * np.pi)))
    elif M is None:
        M = 1 if multipliers is None else select_tf(1.0, multipliers, Delta, M_bar, Omega)[1]
    z0 = torus.trajectories[start, 0, :]
    traj = newmark_integrate(mech, z0, Omega, torus.eps, steps_per_cycle, n_cycles, alpha,
                             keep_every=keep_every)
    sec = section(traj)[1:]
    dist = polyline_distance(sec, circle) / diam
    thr = rel_tol
    w = max(1, len(dist) // max(M, 1))
    T = 2.0 * np.pi / Omega
    steady = traj.t >= traj.t[-1] - n_cycles * T / max(M, 1) - 1e-12
    amp = np.max(np.abs(traj.z[steady]), axis=0)
    if np.all(dist <= thr):
        verdict = "on-torus"
    elif np.all(dist[-w:] <= thr):
        verdict = "converged-nearby"
    else:
        verdict = "diverged"
    return SimReport(verdict, dist, diam, thr, amp, int(n_cycles), int(M), sec, traj,
                     {"alpha": alpha, "steps_per_cycle": steps_per_cycle})
