"""Generalised eigenproblem, master subspace and resonance bookkeeping."""

from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass
from fractions import Fraction

import numpy as np
import scipy.linalg as sla


class ResonanceError(ValueError):
    """Raised when no admissible rational frequency ratio exists."""


class SpectralError(ValueError):
    """Raised for spectra that violate the reduction assumptions."""


@dataclass
class EigenData:
    """Eigenvalues with binormalised right/left eigenvectors.

    ``lam[k]``, ``V[:, k]`` and ``U[:, k]`` satisfy ``A v = lam B v``,
    ``u^H A = lam u^H B`` and ``u^H B v = 1``.  Eigenvalues are sorted by
    ascending ``|Im lam|``; complex pairs appear as ``(lam, conj(lam))``.
    """

    lam: np.ndarray
    V: np.ndarray
    U: np.ndarray
    n_dof: int

    @property
    def pairs(self):
        """Indices of the upper-half-plane member of each complex pair."""
        return [k for k in range(len(self.lam)) if self.lam[k].imag > 0]


def _pair_indices(lam, rtol=1e-8):
    """Match each eigenvalue with Im > 0 to its conjugate partner."""
    scale = max(np.max(np.abs(lam)), 1.0)
    upper = [k for k in range(len(lam)) if lam[k].imag > rtol * scale]
    lower = [k for k in range(len(lam)) if lam[k].imag < -rtol * scale]
    real = [k for k in range(len(lam)) if abs(lam[k].imag) <= rtol * scale]
    used = set()
    pairs = []
    for k in upper:
        cands = [j for j in lower if j not in used]
        j = min(cands, key=lambda j: abs(lam[j] - np.conj(lam[k])))
        used.add(j)
        pairs.append((k, j))
    return pairs, real


def eig_pair(A, B, n_dof=None):
    """Solve ``A v = lam B v`` with left vectors and binormalise.

    The displacement half of each right eigenvector is scaled to unit
    mass norm when a mass block can be identified (``n_dof`` given), and
    rotated so its largest entry is real and positive.  Left vectors are
    then fixed by ``u^H B v = 1``.
    """
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    N = A.shape[0]
    lam, UL, VR = sla.eig(A, B, left=True, right=True)
    if not np.all(np.isfinite(lam)):
        raise SpectralError("infinite eigenvalues; B is singular")
    pairs, real = _pair_indices(lam)
    order = []
    for k, j in sorted(pairs, key=lambda kj: abs(lam[kj[0]].imag)):
        order.append(("c", k, j))
    for k in real:
        order.append(("r", k, None))
    order.sort(key=lambda item: abs(lam[item[1]].imag))

    n = n_dof if n_dof is not None else N // 2
    Mblk = B[n:, :n] if n_dof is not None else None
    lam_out, V_out, U_out = [], [], []
    for kind, k, _ in order:
        v = VR[:, k].astype(complex)
        if Mblk is not None:
            phi = v[:n]
            nrm = np.sqrt(abs(np.vdot(phi, Mblk @ phi)))
        else:
            nrm = np.linalg.norm(v)
        v = v / nrm
        ref = v[:n] if Mblk is not None else v
        imax = np.argmax(np.abs(ref))
        v = v * np.exp(-1j * np.angle(ref[imax]))
        # left vector from the solver is only defined up to scale
        u = UL[:, k].astype(complex)
        u = u / np.conj(np.vdot(u, B @ v))
        lk = lam[k]
        if kind == "c":
            lam_out += [lk, np.conj(lk)]
            V_out += [v, np.conj(v)]
            U_out += [u, np.conj(u)]
        else:
            lam_out.append(complex(lk.real, 0.0))
            V_out.append(v.real.astype(complex) if np.allclose(v.imag, 0) else v)
            U_out.append(u)
    return EigenData(np.array(lam_out), np.array(V_out).T, np.array(U_out).T, n)


@dataclass
class MasterSubspace:
    """Spectral subspace spanned by ``m`` complex-conjugate mode pairs.

    Columns of ``V``/``U`` follow ``p = (q1, conj q1, ..., qm, conj qm)``.
    """

    modes: list
    lam: np.ndarray       # (m,) upper-half-plane eigenvalues
    V: np.ndarray         # (N, 2m)
    U: np.ndarray         # (N, 2m)
    eig: EigenData

    @property
    def m(self):
        return len(self.lam)

    @property
    def Lam(self):
        out = np.empty(2 * self.m, dtype=complex)
        out[0::2] = self.lam
        out[1::2] = np.conj(self.lam)
        return out

    @property
    def outer_lam(self):
        idx = set()
        for k in self.modes:
            idx.add(self.eig.pairs[k])
            idx.add(self.eig.pairs[k] + 1)
        return np.array([lam for j, lam in enumerate(self.eig.lam) if j not in idx])


def select_master(eig: EigenData, modes):
    """Master subspace from pair indices (0-based, in sorted order)."""
    pairs = eig.pairs
    modes = list(modes)
    if not modes:
        raise SpectralError("empty master selection")
    cols = []
    for k in modes:
        if k >= len(pairs):
            raise SpectralError(f"mode {k} does not exist; only {len(pairs)} complex pairs")
        cols += [pairs[k], pairs[k] + 1]
    lam = eig.lam[[pairs[k] for k in modes]]
    if np.any(lam.real >= 0):
        raise SpectralError("master modes must have Re(lambda) < 0")
    return MasterSubspace(modes, lam, eig.V[:, cols], eig.U[:, cols], eig)


def multi_indices(m, order, min_order=2):
    """All ``(l, j)`` with ``l, j`` in ``N^m`` and ``min_order <= |l + j| <= order``."""
    out = []
    for deg in range(min_order, order + 1):
        for combo in itertools.combinations_with_replacement(range(2 * m), deg):
            k = [0] * (2 * m)
            for c in combo:
                k[c] += 1
            out.append((tuple(k[0::2]), tuple(k[1::2])))
    return out


def resonance_defect(lam, i, l, j):
    """``lam_i - <l, lam> - <j, conj lam>``."""
    lam = np.asarray(lam)
    return lam[i] - np.dot(l, lam) - np.dot(j, np.conj(lam))


def detect_inner_resonances(lam, order, tol=0.05):
    """Near-resonant ``(l, j)`` for each master eigenvalue.

    ``(l, j)`` belongs to ``R_i`` when
    ``|lam_i - <l, lam> - <j, conj lam>| <= tol |Im lam_i|``.
    """
    lam = np.asarray(lam, dtype=complex)
    m = len(lam)
    idx = multi_indices(m, order)
    res = []
    for i in range(m):
        thr = tol * abs(lam[i].imag)
        res.append([(l, j) for l, j in idx if abs(resonance_defect(lam, i, l, j)) <= thr])
    return res


def _rational_gcd(fracs):
    num = 0
    den = 1
    for f in fracs:
        num = math.gcd(num, f.numerator)
        den = den * f.denominator // math.gcd(den, f.denominator)
    return Fraction(num, den)


def detect_external_resonance(lam, Omega, tol=0.05, max_den=10):
    """Rational ratios ``r_i`` with ``Im lam_i ~ r_i Omega``.

    Among rationals with denominator ``<= max_den`` inside the tolerance
    ``tol * Omega`` the one with the smallest denominator wins; ties go to
    the closest.  Returns ``(r, r_d)`` with ``r_d`` the rational gcd.
    """
    lam = np.asarray(lam, dtype=complex)
    if Omega <= 0:
        raise ValueError("Omega must be positive")
    r = []
    for li in lam:
        ratio = li.imag / Omega
        best = None
        for den in range(1, max_den + 1):
            num = round(ratio * den)
            if num <= 0:
                continue
            cand = Fraction(num, den)
            err = abs(li.imag - float(cand) * Omega)
            if err <= tol * Omega:
                key = (cand.denominator, err)
                if best is None or key < best[0]:
                    best = (key, cand)
        if best is None:
            raise ResonanceError(
                f"no rational ratio with denominator <= {max_den} matches "
                f"Im(lambda)={li.imag:.6g} at Omega={Omega:.6g}")
        r.append(best[1])
    return r, _rational_gcd(r)


def spectral_quotient(lam_all, lam_master):
    """``floor(min Re lam_all / max Re lam_master)``."""
    lam_all = np.asarray(lam_all)
    lam_master = np.asarray(lam_master)
    rmax = np.max(lam_master.real)
    if rmax >= 0:
        raise SpectralError("master spectrum touches or crosses the imaginary axis")
    return int(math.floor(np.min(lam_all.real) / rmax + 1e-12))


def check_nonresonance(master: MasterSubspace, order=None, rtol=1e-6):
    """Real-part non-resonance between master and outer spectrum.

    Returns a list of ``(k, a, b)`` violations where
    ``<a, Re lam> + <b, Re lam> = Re lam_k`` within ``rtol``.  Orders from 2
    up to the spectral quotient (or ``order`` when given) are scanned.
    """
    outer = master.outer_lam
    if outer.size == 0:
        return []
    sigma = spectral_quotient(master.eig.lam, master.lam)
    top = sigma if order is None else min(order, max(sigma, 2))
    viol = []
    re = master.lam.real
    for l, j in multi_indices(master.m, top):
        val = np.dot(l, re) + np.dot(j, re)
        for k, lk in enumerate(outer):
            if abs(val - lk.real) <= rtol * abs(lk.real):
                viol.append((k, l, j))
    if viol:
        warnings.warn(f"{len(viol)} real-part resonances between master and outer spectrum")
    return viol
