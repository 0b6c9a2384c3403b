"""Autonomous SSM expansion and its leading forced correction.

The manifold is parametrised by ``p = (q1, conj q1, ..., qm, conj qm)``.
Coefficients are solved degree by degree from

    (A - (k . Lam) B) W_k = B V R_k + B Mix_k - F_k,

where ``Mix_k`` collects products of lower-order ``W`` and ``R`` and
``F_k`` is the degree-``k`` part of ``F_nl(W(p))``.  ``R_k`` is nonzero
only on near-resonant rows, which keeps the reduced dynamics in
normal-form style.  Near-resonant rows are handled with a bordered solve
so the system stays regular even at exact resonance.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .model import FirstOrderSystem
from .spectral import (MasterSubspace, SpectralError, detect_external_resonance,
                       detect_inner_resonances)


class MonomialBasis:
    """Monomials in ``2m`` variables of degree ``1..order``, sorted by degree."""

    def __init__(self, nvar, order):
        self.nvar = nvar
        self.order = order
        self.exps = []
        self.deg_start = [0, 0]
        for d in range(1, order + 1):
            for combo in itertools.combinations_with_replacement(range(nvar), d):
                k = [0] * nvar
                for c in combo:
                    k[c] += 1
                self.exps.append(tuple(k))
            self.deg_start.append(len(self.exps))
        self.index = {k: i for i, k in enumerate(self.exps)}
        self.E = np.array(self.exps, dtype=int).reshape(-1, nvar)
        self.degree = self.E.sum(axis=1)
        self._tables = {}

    def __len__(self):
        return len(self.exps)

    def of_degree(self, d):
        return range(self.deg_start[d], self.deg_start[d + 1])

    def product_table(self, d):
        """Index triples ``(ia, ib, ic)`` with ``|a| + |b| = d``."""
        if d not in self._tables:
            ia, ib, ic = [], [], []
            for da in range(1, d):
                db = d - da
                for a in self.of_degree(da):
                    ea = self.E[a]
                    for b in self.of_degree(db):
                        ia.append(a)
                        ib.append(b)
                        ic.append(self.index[tuple(ea + self.E[b])])
            self._tables[d] = (np.array(ia, dtype=int), np.array(ib, dtype=int),
                               np.array(ic, dtype=int))
        return self._tables[d]

    def conj_index(self):
        """Index of the monomial with each ``(q, conj q)`` pair swapped."""
        out = np.empty(len(self), dtype=int)
        for i, k in enumerate(self.exps):
            kk = list(k)
            kk[0::2], kk[1::2] = k[1::2], k[0::2]
            out[i] = self.index[tuple(kk)]
        return out

    def evaluate(self, p):
        """Monomial values for ``p`` of shape ``(..., nvar)`` -> ``(..., n_mon)``."""
        p = np.asarray(p)
        out = np.ones(p.shape[:-1] + (len(self),), dtype=np.result_type(p, float))
        for v in range(self.nvar):
            col = self.E[:, v]
            maxp = col.max()
            if maxp == 0:
                continue
            powers = [np.ones(p.shape[:-1], dtype=out.dtype)]
            for _ in range(maxp):
                powers.append(powers[-1] * p[..., v])
            stack = np.stack(powers, axis=-1)
            out = out * stack[..., col]
        return out


class _Composer:
    """Degree-by-degree evaluation of ``F_nl(W(p))``.

    Products of factor polynomials are accumulated one degree at a time,
    reusing lower degrees, so each level only needs ``W`` of lower degree.
    """

    def __init__(self, F, basis: MonomialBasis):
        self.F = F
        self.basis = basis
        self.terms = []
        n = len(basis)
        for o, c, f in zip(F.out, F.coef, F.factors):
            seq = []
            for s, pw in f:
                seq += [s] * pw
            # partial products P_1 .. P_len(seq); P_1 is the first factor itself
            partial = [np.zeros(n, dtype=complex) for _ in range(len(seq) - 1)]
            self.terms.append((o, c, seq, partial))

    def level(self, d, W):
        """Degree-``d`` coefficients of ``F_nl(W)``; rows follow ``basis.of_degree(d)``."""
        rng = self.basis.of_degree(d)
        out = np.zeros((len(rng), self.F.n_out), dtype=complex)
        if d < 2:
            return out
        ia, ib, ic = self.basis.product_table(d)
        lo = rng.start
        for o, c, seq, partial in self.terms:
            if len(seq) == 1:
                out[:, o] += c * W[lo:rng.stop, seq[0]]
                continue
            prev = W[:, seq[0]]
            for j in range(1, len(seq)):
                cur = partial[j - 1]
                vals = np.zeros(len(self.basis), dtype=complex)
                np.add.at(vals, ic, prev[ia] * W[ib, seq[j]])
                cur[lo:rng.stop] = vals[lo:rng.stop]
                prev = cur
            out[:, o] += c * partial[-1][lo:rng.stop]
        return out


@dataclass
class SSMExpansion:
    """Autonomous manifold and reduced dynamics coefficients."""

    basis: MonomialBasis
    W: np.ndarray                 # (n_mon, N) complex
    R: dict                       # monomial index -> (2m,) complex, degree >= 2
    master: MasterSubspace
    order: int
    resonances: list              # per master mode, list of (l, j)
    info: dict = field(default_factory=dict)

    def gamma(self):
        """``{(i, l, j): coefficient}`` for the ``q_i`` rows."""
        out = {}
        m = self.master.m
        for idx, vec in self.R.items():
            k = self.basis.exps[idx]
            l, j = tuple(k[0::2]), tuple(k[1::2])
            for i in range(m):
                if vec[2 * i] != 0:
                    out[(i, l, j)] = complex(vec[2 * i])
        return out


def _row_resonant(k, row, res_sets):
    """Whether ``R_k`` has a free entry in ``row`` of ``p``."""
    i, is_conj = divmod(row, 2)
    l, j = tuple(k[0::2]), tuple(k[1::2])
    if is_conj:
        l, j = j, l
    return (l, j) in res_sets[i]


def expand_autonomous(sys: FirstOrderSystem, master: MasterSubspace, order: int,
                      res_tol=0.05, outer_tol=1e-8):
    """Compute ``W`` and ``R`` up to ``order``.

    Raises :class:`SpectralError` when an outer eigenvalue sits on a
    degree-``k`` combination of master eigenvalues (outer resonance).
    """
    if order < 1:
        raise ValueError("order must be >= 1")
    A, B = sys.A, sys.B
    N = sys.N
    m = master.m
    nvar = 2 * m
    Lam = master.Lam
    V, U = master.V, master.U
    res_sets = [set(s) for s in detect_inner_resonances(master.lam, order, res_tol)]
    basis = MonomialBasis(nvar, order)
    W = np.zeros((len(basis), N), dtype=complex)
    W[basis.of_degree(1).start:basis.of_degree(1).stop] = V.T
    R = {}
    comp = _Composer(sys.F_nl, basis)
    conj_idx = basis.conj_index()
    outer = master.outer_lam
    BV = B @ V
    UB = U.conj().T @ B
    n_solves = 0
    for d in range(2, order + 1):
        rng = basis.of_degree(d)
        Fd = comp.level(d, W)
        mix = np.zeros((len(rng), N), dtype=complex)
        # DW R cross terms with 2 <= |a|, |b| < d
        for bidx, rvec in R.items():
            db = basis.degree[bidx]
            da = d - db + 1
            if da < 2 or da >= d:
                continue
            eb = basis.E[bidx]
            for jv in np.nonzero(rvec)[0]:
                for a in basis.of_degree(da):
                    ea = basis.E[a]
                    if ea[jv] == 0:
                        continue
                    k = ea.copy()
                    k[jv] -= 1
                    k = k + eb
                    mix[basis.index[tuple(k)] - rng.start] += ea[jv] * rvec[jv] * W[a]
        rhs_all = mix @ B.T - Fd
        for pos, idx in enumerate(rng):
            cidx = conj_idx[idx]
            if cidx < idx:
                continue
            k = basis.exps[idx]
            s = np.dot(k, Lam)
            rows = [r for r in range(nvar) if _row_resonant(k, r, res_sets)]
            if outer.size:
                gap = np.min(np.abs(outer - s))
                if gap <= outer_tol * max(abs(s), 1.0):
                    raise SpectralError(
                        f"outer resonance at monomial {k}: k.lambda={s:.6g} hits an outer "
                        "eigenvalue; include that mode in the master subspace")
            nb = len(rows)
            Mat = np.zeros((N + nb, N + nb), dtype=complex)
            Mat[:N, :N] = A - s * B
            rhs = np.zeros(N + nb, dtype=complex)
            rhs[:N] = rhs_all[pos]
            if nb:
                Mat[:N, N:] = -BV[:, rows]
                Mat[N:, :N] = UB[rows]
            sol = np.linalg.solve(Mat, rhs)
            n_solves += 1
            W[idx] = sol[:N]
            if nb:
                rv = np.zeros(nvar, dtype=complex)
                rv[rows] = sol[N:]
                R[idx] = rv
            if cidx != idx:
                W[cidx] = np.conj(sol[:N])
                if nb:
                    rvc = np.zeros(nvar, dtype=complex)
                    rvc[0::2] = np.conj(rv[1::2])
                    rvc[1::2] = np.conj(rv[0::2])
                    R[cidx] = rvc
    info = dict(n_solves=n_solves, n_monomials=len(basis))
    return SSMExpansion(basis, W, R, master, order, [sorted(s) for s in res_sets], info)


def invariance_residual(sys: FirstOrderSystem, exp: SSMExpansion):
    """Per-monomial residual of ``B DW R - A W - F_nl(W)`` up to the order.

    Returns an array of relative residuals indexed like ``exp.basis``.
    """
    basis = exp.basis
    W = exp.W
    N = sys.N
    Lam = exp.master.Lam
    comp = _Composer(sys.F_nl, basis)
    Rfull = dict(exp.R)
    for v, idx in enumerate(basis.of_degree(1)):
        vec = np.zeros(2 * exp.master.m, dtype=complex)
        vec[v] = Lam[v]
        Rfull[idx] = vec
    out = np.zeros(len(basis))
    for d in range(1, exp.order + 1):
        rng = basis.of_degree(d)
        Fd = comp.level(d, W) if d >= 2 else np.zeros((len(rng), N), dtype=complex)
        dwr = np.zeros((len(rng), N), dtype=complex)
        for bidx, rvec in Rfull.items():
            db = basis.degree[bidx]
            da = d - db + 1
            if da < 1 or da > exp.order:
                continue
            eb = basis.E[bidx]
            for jv in np.nonzero(rvec)[0]:
                for a in basis.of_degree(da):
                    ea = basis.E[a]
                    if ea[jv] == 0:
                        continue
                    k = ea.copy()
                    k[jv] -= 1
                    k = k + eb
                    dwr[basis.index[tuple(k)] - rng.start] += ea[jv] * rvec[jv] * W[a]
        res = dwr @ sys.B.T - W[rng.start:rng.stop] @ sys.A.T - Fd
        scale = np.maximum(np.abs(dwr @ sys.B.T).max(axis=1),
                           np.abs(Fd).max(axis=1) if d >= 2 else 0.0)
        scale = np.maximum(scale, np.abs(W[rng.start:rng.stop] @ sys.A.T).max(axis=1))
        out[rng.start:rng.stop] = np.abs(res).max(axis=1) / np.maximum(scale, 1e-300)
    return out


def external_ratios(master: MasterSubspace, Omega, tol=0.05, max_den=10):
    return detect_external_resonance(master.lam, Omega, tol, max_den)


def forced_coefficients(sys: FirstOrderSystem, master: MasterSubspace, r):
    """``f_i = u_i^H F_a`` for modes with ``r_i = 1``, zero otherwise."""
    f = np.zeros(master.m, dtype=complex)
    for i in range(master.m):
        if r[i] == 1:
            f[i] = np.vdot(master.U[:, 2 * i], sys.F_a)
    return f


def leading_nonautonomous(sys: FirstOrderSystem, master: MasterSubspace, r, Omega):
    """Leading forced correction at ``Omega``.

    Solves the ``e^{i phi}`` coefficient equation
    ``(A - i Omega B) x0 = B V s - F_a`` where ``s`` is nonzero only for
    modes forced at resonance (``r_i = 1``), using a bordered system.

    Returns ``(x0, S0)`` with ``S0`` of length ``m``.
    """
    N = sys.N
    rows = [2 * i for i in range(master.m) if r[i] == 1]
    nb = len(rows)
    Mat = np.zeros((N + nb, N + nb), dtype=complex)
    Mat[:N, :N] = sys.A - 1j * Omega * sys.B
    rhs = np.zeros(N + nb, dtype=complex)
    rhs[:N] = -sys.F_a
    if nb:
        Mat[:N, N:] = -sys.B @ master.V[:, rows]
        Mat[N:, :N] = master.U[:, rows].conj().T @ sys.B
    sol = np.linalg.solve(Mat, rhs)
    S0 = np.zeros(master.m, dtype=complex)
    for c, row in enumerate(rows):
        S0[row // 2] = sol[N + c]
    return sol[:N], S0


def linear_response(sys: FirstOrderSystem, Omega):
    """Complex amplitude ``z_c`` with ``z = eps (z_c e^{i Omega t} + c.c.)``."""
    return -sla.solve(sys.A - 1j * Omega * sys.B, sys.F_a)


# ---------------------------------------------------------------------------
# reduced model container
# ---------------------------------------------------------------------------

@dataclass
class ReducedModel:
    """Everything needed to integrate, continue and lift the reduced dynamics.

    ``gamma`` maps ``(i, l, j)`` to the coefficient of ``q^l conj(q)^j`` in
    the equation for ``q_i``; ``f`` holds the forced coefficients and
    ``r`` the external frequency ratios.
    """

    lam: np.ndarray
    r: list
    r_d: object
    gamma: dict
    f: np.ndarray
    eps: float
    order: int
    modes: list
    Omega_ref: float
    exps: np.ndarray
    W: np.ndarray
    system: FirstOrderSystem | None = None
    V: np.ndarray | None = None
    U: np.ndarray | None = None
    resonances: list = field(default_factory=list)
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        self._x0_cache = {}
        self._basis = None

    @property
    def m(self):
        return len(self.lam)

    @property
    def N(self):
        return self.W.shape[1]

    @property
    def basis(self):
        if self._basis is None:
            self._basis = _ExpBasis(self.exps)
        return self._basis

    def W_eval(self, p, rows=None):
        """Autonomous parametrisation ``W(p)`` for ``p`` of shape ``(..., 2m)``."""
        mons = self.basis.evaluate(p)
        Wc = self.W if rows is None else self.W[:, rows]
        return mons @ Wc

    def x0(self, Omega):
        """Leading forced correction at ``Omega`` (cached per value)."""
        key = float(Omega)
        if key not in self._x0_cache:
            if self.system is None:
                raise ValueError("reduced model carries no system; cannot build x0")
            sub = _MasterView(self.lam, self.V, self.U)
            self._x0_cache[key] = leading_nonautonomous(self.system, sub, self.r, Omega)[0]
        return self._x0_cache[key]

    def lift(self, p, phase, Omega, eps=None, rows=None):
        """Physical state ``W(p) + eps (x0 e^{i phase} + c.c.)``."""
        eps = self.eps if eps is None else eps
        z = self.W_eval(p, rows)
        x0 = self.x0(Omega)
        if rows is not None:
            x0 = x0[rows]
        z = z + eps * 2.0 * np.real(np.multiply.outer(np.exp(1j * np.asarray(phase)), x0))
        return np.real(z)

    # -- serialisation ---------------------------------------------------
    def to_dict(self, include_system=True):
        d = {
            "format": "ssmtori.reduced_model",
            "version": 1,
            "lam": _cplx(self.lam),
            "r": [[x.numerator, x.denominator] for x in self.r],
            "r_d": [self.r_d.numerator, self.r_d.denominator],
            "gamma": [{"i": i, "l": list(l), "j": list(j), "value": _cplx(v)}
                      for (i, l, j), v in sorted(self.gamma.items())],
            "f": _cplx(self.f),
            "eps": self.eps,
            "order": self.order,
            "modes": list(self.modes),
            "Omega_ref": self.Omega_ref,
            "exps": self.exps.tolist(),
            "W": _cplx(self.W),
            "V": _cplx(self.V) if self.V is not None else None,
            "U": _cplx(self.U) if self.U is not None else None,
            "resonances": [[[list(l), list(j)] for l, j in s] for s in self.resonances],
            "info": {k: v for k, v in self.info.items() if isinstance(v, (int, float, str))},
        }
        if include_system and self.system is not None:
            d["system"] = {
                "A": _coo(self.system.A),
                "B": _coo(self.system.B),
                "F_a": _cplx(self.system.F_a),
                "F_nl": self.system.F_nl.to_dict(),
            }
        return d

    @classmethod
    def from_dict(cls, d):
        from fractions import Fraction
        from .model import PolynomialForce
        system = None
        if d.get("system"):
            s = d["system"]
            system = FirstOrderSystem(A=_uncoo(s["A"]), B=_uncoo(s["B"]),
                                      F_nl=PolynomialForce.from_dict(s["F_nl"]),
                                      F_a=_uncplx(s["F_a"]))
        gamma = {(g["i"], tuple(g["l"]), tuple(g["j"])): complex(_uncplx(g["value"]))
                 for g in d["gamma"]}
        return cls(
            lam=_uncplx(d["lam"]),
            r=[Fraction(a, b) for a, b in d["r"]],
            r_d=Fraction(*d["r_d"]),
            gamma=gamma,
            f=_uncplx(d["f"]),
            eps=d["eps"],
            order=d["order"],
            modes=d["modes"],
            Omega_ref=d["Omega_ref"],
            exps=np.array(d["exps"], dtype=int),
            W=_uncplx(d["W"]),
            system=system,
            V=_uncplx(d["V"]) if d.get("V") is not None else None,
            U=_uncplx(d["U"]) if d.get("U") is not None else None,
            resonances=[[(tuple(l), tuple(j)) for l, j in s] for s in d.get("resonances", [])],
            info=d.get("info", {}),
        )


class _ExpBasis(MonomialBasis):
    """Monomial basis rebuilt from a stored exponent table."""

    def __init__(self, exps):
        exps = np.asarray(exps, dtype=int)
        self.nvar = exps.shape[1]
        self.exps = [tuple(e) for e in exps]
        self.E = exps
        self.degree = exps.sum(axis=1)
        self.order = int(self.degree.max())
        self.index = {k: i for i, k in enumerate(self.exps)}
        self._tables = {}


@dataclass
class _MasterView:
    lam: np.ndarray
    V: np.ndarray
    U: np.ndarray

    @property
    def m(self):
        return len(self.lam)


def _cplx(a):
    a = np.asarray(a, dtype=complex)
    return {"shape": list(a.shape), "re": a.real.ravel().tolist(), "im": a.imag.ravel().tolist()}


def _uncplx(d):
    a = np.array(d["re"]) + 1j * np.array(d["im"])
    return a.reshape(d["shape"])


def _coo(a):
    a = np.asarray(a, dtype=float)
    i, j = np.nonzero(a)
    return {"shape": list(a.shape), "i": i.tolist(), "j": j.tolist(), "v": a[i, j].tolist()}


def _uncoo(d):
    a = np.zeros(d["shape"])
    a[d["i"], d["j"]] = d["v"]
    return a


def compute_ssm(sys: FirstOrderSystem, master: MasterSubspace, order: int, Omega_ref: float,
                res_tol=0.05, max_den=10, eps=None):
    """Autonomous expansion plus forcing data packed into a :class:`ReducedModel`.

    The external ratios ``r`` are fixed at ``Omega_ref`` and reused over
    the whole continuation window.
    """
    r, r_d = detect_external_resonance(master.lam, Omega_ref, res_tol, max_den)
    exp = expand_autonomous(sys, master, order, res_tol=res_tol)
    gamma = exp.gamma()
    # slow-frame autonomy needs <r, l - j> = r_i on every kept term
    for (i, l, j) in gamma:
        if sum(rk * (a - b) for rk, a, b in zip(r, l, j)) != r[i]:
            raise SpectralError(
                f"resonant term {(l, j)} in mode {i} is not compatible with the "
                f"frequency ratios {r}; tighten res_tol")
    f = forced_coefficients(sys, master, r)
    return ReducedModel(
        lam=master.lam.copy(), r=r, r_d=r_d, gamma=gamma, f=f,
        eps=sys.eps if eps is None else eps, order=order, modes=list(master.modes),
        Omega_ref=Omega_ref, exps=exp.basis.E.copy(), W=exp.W, system=sys,
        V=master.V.copy(), U=master.U.copy(), resonances=exp.resonances, info=dict(exp.info),
    )
