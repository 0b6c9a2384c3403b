"""Map reduced-model objects back to physical coordinates.

Equilibria of the slow-frame reduced dynamics become periodic orbits,
limit cycles become 2-tori and 2-tori become 3-tori.  Everything here is a
pure transformation of its inputs.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .rom import slow_to_modal
from .ssm import ReducedModel


@dataclass
class PhysicalOrbit:
    """A lifted periodic response sampled over one period."""

    t: np.ndarray
    z: np.ndarray
    Omega: float
    eps: float
    stable: bool | None = None

    @property
    def period(self):
        return float(self.t[-1] - self.t[0]) if len(self.t) > 1 else 0.0

    def amplitude(self, index=None):
        a = np.max(np.abs(self.z), axis=0)
        return a if index is None else float(a[index])


@dataclass
class PhysicalTorus:
    """Lifted invariant torus stored as a bundle of trajectories.

    ``trajectories`` has shape ``(K, n_t, n_out)`` and shares the time grid
    ``t``.  ``frequencies`` is ``(Omega, omega_s)`` for 2-tori and
    ``(Omega, omega_1s, omega_2s)`` for 3-tori.
    """

    dim: int
    t: np.ndarray
    trajectories: np.ndarray
    frequencies: tuple
    Omega: float
    eps: float
    stable: bool | None = None
    phases: np.ndarray | None = None
    info: dict = field(default_factory=dict)

    @property
    def n_traj(self):
        return self.trajectories.shape[0]

    def amplitude(self, index):
        return amplitude_inf(self.trajectories, index)


def _period(rm: ReducedModel, Omega):
    return 2.0 * np.pi / (float(rm.r_d) * Omega)


def lift_point(p, phase, Omega, eps, rm: ReducedModel, rows=None):
    """Physical state for modal coordinates ``p`` at forcing phase ``phase``."""
    return rm.lift(np.asarray(p, dtype=complex), phase, Omega, eps, rows)


def _lift_slow(xs, t, rm, Omega, eps, rows=None):
    """Lift slow-frame Cartesian states ``xs`` sampled at times ``t``."""
    p = slow_to_modal(xs, rm, Omega, t)
    return rm.lift(p, Omega * np.asarray(t), Omega, eps, rows)


def eq_to_po(x, rm: ReducedModel, Omega, eps=None, n_pt=128, rows=None, stable=None):
    """Periodic orbit of the full system from a slow-frame equilibrium ``x``."""
    eps = rm.eps if eps is None else eps
    T = _period(rm, Omega)
    t = np.linspace(0.0, T, n_pt + 1)
    xs = np.broadcast_to(np.asarray(x, dtype=float), (len(t), len(x)))
    z = _lift_slow(xs, t, rm, Omega, eps, rows)
    return PhysicalOrbit(t, z, float(Omega), float(eps), stable)


def _orbit_eval(orbit, s):
    """Reduced cycle at times ``s`` (taken modulo its period)."""
    tau = np.mod(np.asarray(s, dtype=float) / orbit.T, 1.0)
    return orbit.mesh.interp(orbit.X, tau)


def po_to_torus2(orbit, rm: ReducedModel, n_pt=128, eps=None, shifts=None, rows=None,
                 size_tol=1e-8, times=None):
    """2-torus of the full system from a limit cycle of the slow-frame dynamics.

    ``orbit`` is a :class:`ssmtori.po.PeriodicOrbit` with parameters
    ``(Omega, eps)``.  By default the shifts are the mesh base times of the
    cycle.  Each trajectory covers one forcing period with ``n_pt``
    intervals, or is sampled at ``times`` when given.
    """
    Omega = float(orbit.p[0])
    eps = float(orbit.p[1]) if eps is None else eps
    if orbit.size < size_tol:
        po = eq_to_po(orbit.X[0], rm, Omega, eps, n_pt, rows, orbit.stable)
        return PhysicalTorus(2, po.t, po.z[None], (Omega, 0.0), Omega, eps, orbit.stable,
                             np.zeros(1), {"degenerate": True})
    Ts = orbit.T
    if shifts is None:
        shifts = orbit.mesh.tau[:-1] * Ts
    shifts = np.asarray(shifts, dtype=float)
    T = _period(rm, Omega)
    t = np.linspace(0.0, T, n_pt + 1) if times is None else np.asarray(times, dtype=float)
    xs = _orbit_eval(orbit, shifts[:, None] + t[None, :])
    z = _lift_slow(xs, t[None, :], rm, Omega, eps, rows)
    return PhysicalTorus(2, t, z, (Omega, 2.0 * np.pi / Ts), Omega, eps, orbit.stable,
                         2.0 * np.pi * shifts / Ts, {"T_s": Ts})


def torus2_to_torus3(tor, rm: ReducedModel, n_T=10, eps=None, rows=None):
    """3-torus of the full system from a 2-torus of the slow-frame dynamics.

    ``tor`` is a :class:`ssmtori.tor2.TorusSolution`.  Each segment is
    sampled ``n_T`` times per forcing period over ``ceil(T2 / T)`` periods.
    """
    Omega = float(tor.p[0])
    eps = float(tor.p[1]) if eps is None else eps
    T = _period(rm, Omega)
    T2 = tor.T2
    ratio = T2 / T
    if ratio < 2.0:
        warnings.warn(f"slow period is only {ratio:.2f} forcing periods; time scales "
                      "are not well separated", RuntimeWarning, stacklevel=2)
    n_q = max(1, math.ceil(ratio)) * n_T
    t = np.linspace(0.0, T2, n_q + 1)
    tau = t / T2
    xs = np.stack([tor.mesh.interp(U, tau) for U in tor.U])
    z = _lift_slow(xs, t[None, :], rm, Omega, eps, rows)
    return PhysicalTorus(3, t, z, (Omega, tor.omega1, tor.omega2), Omega, eps, None,
                         tor.phases, {"k2": int(round(ratio)), "rho": tor.rho})


def classify_rotation(T_s, Omega, r_d=1, denominator_cap=100, tol=1e-5):
    """Rotation number ``rho = omega_s / (r_d Omega)`` and its type.

    Returns ``(rho, kind, m_p)`` where ``kind`` is ``"periodic"`` when
    ``rho`` lies within ``tol`` of a fraction with denominator at most
    ``denominator_cap`` (``m_p`` is that denominator), and
    ``"quasiperiodic"`` otherwise (``m_p`` is ``None``).
    """
    if T_s <= 0 or Omega <= 0:
        raise ValueError("T_s and Omega must be positive")
    rho = (2.0 * np.pi / T_s) / (float(r_d) * Omega)
    frac = Fraction(rho).limit_denominator(int(denominator_cap))
    if abs(rho - float(frac)) <= tol * max(1.0, abs(rho)):
        return rho, "periodic", frac.denominator
    return rho, "quasiperiodic", None


def amplitude_inf(trajectories, output_index):
    """Largest ``|z_k|`` over every trajectory and sample."""
    a = np.asarray(trajectories)
    return float(np.max(np.abs(a[..., output_index])))


def poincare_circle(torus: PhysicalTorus):
    """Section of a 2-torus at forcing phase zero, ordered by slow phase."""
    pts = torus.trajectories[:, 0, :]
    if torus.phases is None:
        return pts
    order = np.argsort(np.mod(torus.phases, 2.0 * np.pi))
    return pts[order]
