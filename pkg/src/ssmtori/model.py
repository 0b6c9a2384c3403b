"""Mechanical system definitions and their first-order form.

A mechanical system here is

    M x'' + C x' + K x + f_nl(x, x') = eps * f_ext * cos(Omega t)

with ``f_nl`` a sparse polynomial in the stacked state ``(x, x')``.  The
first-order form used everywhere else is ``B z' = A z + F_nl(z) + eps F_ext``
with ``z = (x, x')``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla


class PolynomialForce:
    """Sparse polynomial map ``R^n_in -> R^n_out``.

    Each term is ``coef * prod_s z[s]**p_s`` added to output ``out``.

    Parameters
    ----------
    n_in, n_out : int
        Number of input variables and output components.
    terms : iterable of (out, coef, factors)
        ``factors`` is a mapping or a sequence of ``(index, power)`` pairs.
    """

    def __init__(self, n_in, n_out, terms=()):
        self.n_in = int(n_in)
        self.n_out = int(n_out)
        self.out = []
        self.coef = []
        self.factors = []
        for t in terms:
            self.add_term(*t)

    def add_term(self, out, coef, factors):
        if isinstance(factors, dict):
            factors = factors.items()
        merged = {}
        for s, pw in factors:
            s, pw = int(s), int(pw)
            if not 0 <= s < self.n_in:
                raise ValueError(f"factor index {s} outside 0..{self.n_in - 1}")
            if pw < 0:
                raise ValueError("negative powers are not polynomial")
            if pw:
                merged[s] = merged.get(s, 0) + pw
        if not 0 <= int(out) < self.n_out:
            raise ValueError(f"output index {out} outside 0..{self.n_out - 1}")
        self.out.append(int(out))
        self.coef.append(complex(coef) if np.iscomplexobj(coef) else float(coef))
        self.factors.append(tuple(sorted(merged.items())))

    @property
    def n_terms(self):
        return len(self.out)

    @property
    def degrees(self):
        return [sum(p for _, p in f) for f in self.factors]

    @property
    def min_degree(self):
        return min(self.degrees) if self.factors else np.inf

    def scaled(self, factor):
        """Copy with all coefficients multiplied by ``factor``."""
        new = PolynomialForce(self.n_in, self.n_out)
        for o, c, f in zip(self.out, self.coef, self.factors):
            new.add_term(o, factor * c, f)
        return new

    def remapped(self, n_in, n_out, in_map=None, out_map=None):
        """Copy acting on a larger space through index maps."""
        new = PolynomialForce(n_in, n_out)
        for o, c, f in zip(self.out, self.coef, self.factors):
            oo = out_map[o] if out_map is not None else o
            ff = [((in_map[s] if in_map is not None else s), p) for s, p in f]
            new.add_term(oo, c, ff)
        return new

    def __call__(self, z):
        return self.eval(z)

    def eval(self, z):
        """Evaluate on ``z`` of shape ``(..., n_in)``."""
        z = np.asarray(z)
        dtype = np.result_type(z.dtype, *(np.asarray(c).dtype for c in self.coef), float)
        out = np.zeros(z.shape[:-1] + (self.n_out,), dtype=dtype)
        for o, c, f in zip(self.out, self.coef, self.factors):
            val = c
            for s, p in f:
                val = val * z[..., s] ** p
            out[..., o] += val
        return out

    def jacobian(self, z):
        """Jacobian of shape ``(..., n_out, n_in)``."""
        z = np.asarray(z)
        dtype = np.result_type(z.dtype, *(np.asarray(c).dtype for c in self.coef), float)
        jac = np.zeros(z.shape[:-1] + (self.n_out, self.n_in), dtype=dtype)
        for o, c, f in zip(self.out, self.coef, self.factors):
            for k, (s, p) in enumerate(f):
                val = c * p * z[..., s] ** (p - 1)
                for kk, (ss, pp) in enumerate(f):
                    if kk != k:
                        val = val * z[..., ss] ** pp
                jac[..., o, s] += val
        return jac

    def to_dict(self):
        return {
            "n_in": self.n_in,
            "n_out": self.n_out,
            "terms": [
                {"out": o, "coef": _jsonable(c), "factors": [list(x) for x in f]}
                for o, c, f in zip(self.out, self.coef, self.factors)
            ],
        }

    @classmethod
    def from_dict(cls, d):
        new = cls(d["n_in"], d["n_out"])
        for t in d["terms"]:
            new.add_term(t["out"], _from_jsonable(t["coef"]), [tuple(x) for x in t["factors"]])
        return new


def _jsonable(c):
    if isinstance(c, complex):
        return [c.real, c.imag]
    return c


def _from_jsonable(c):
    if isinstance(c, (list, tuple)):
        return complex(c[0], c[1])
    return c


@dataclass
class MechSystem:
    """Second-order system ``M x'' + C x' + K x + f_nl(x, x') = eps f_ext cos(Omega t)``.

    ``f_nl`` acts on the stacked vector ``(x, x')`` of length ``2 n``.
    """

    M: np.ndarray
    C: np.ndarray
    K: np.ndarray
    f_nl: PolynomialForce
    f_ext: np.ndarray
    eps: float = 1.0
    name: str = "system"
    dof_labels: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.M = np.atleast_2d(np.asarray(self.M, dtype=float))
        self.C = np.atleast_2d(np.asarray(self.C, dtype=float))
        self.K = np.atleast_2d(np.asarray(self.K, dtype=float))
        self.f_ext = np.atleast_1d(np.asarray(self.f_ext, dtype=float))
        n = self.M.shape[0]
        for name, mat in (("M", self.M), ("C", self.C), ("K", self.K)):
            if mat.shape != (n, n):
                raise ValueError(f"{name} has shape {mat.shape}, expected {(n, n)}")
        if self.f_ext.shape != (n,):
            raise ValueError(f"f_ext has shape {self.f_ext.shape}, expected {(n,)}")
        if self.f_nl.n_in != 2 * n or self.f_nl.n_out != n:
            raise ValueError("f_nl must map R^(2n) -> R^n")
        if not np.allclose(self.M, self.M.T):
            raise ValueError("mass matrix is not symmetric")
        try:
            np.linalg.cholesky(self.M)
        except np.linalg.LinAlgError as exc:
            raise ValueError("mass matrix is not positive definite") from exc
        if not self.dof_labels:
            self.dof_labels = [f"x{i + 1}" for i in range(n)]

    @property
    def n(self):
        return self.M.shape[0]


@dataclass
class FirstOrderSystem:
    """``B z' = A z + F_nl(z) + eps (F_a e^{i phi} + conj(F_a) e^{-i phi})``."""

    A: np.ndarray
    B: np.ndarray
    F_nl: PolynomialForce
    F_a: np.ndarray
    mech: MechSystem | None = None

    @property
    def N(self):
        return self.A.shape[0]

    @property
    def eps(self):
        return self.mech.eps if self.mech is not None else 1.0

    def forcing(self, phase):
        """Real forcing vector ``F_a e^{i phase} + c.c.`` for array ``phase``."""
        phase = np.asarray(phase)
        return 2.0 * np.real(np.multiply.outer(np.exp(1j * phase), self.F_a))

    def residual(self, z, zdot, phase, eps=None):
        """``B z' - A z - F_nl(z) - eps F_ext``; vanishes on trajectories."""
        eps = self.eps if eps is None else eps
        return (zdot @ self.B.T - z @ self.A.T - self.F_nl.eval(z)
                - eps * self.forcing(phase))


def assemble_first_order(sys: MechSystem) -> FirstOrderSystem:
    """First-order form of a :class:`MechSystem`.

    ``A = [[-K, 0], [0, M]]``, ``B = [[C, M], [M, 0]]``,
    ``F_nl = (-f_nl; 0)`` and ``F_a = (f_ext / 2; 0)``.
    """
    n = sys.n
    Z = np.zeros((n, n))
    A = np.block([[-sys.K, Z], [Z, sys.M]])
    B = np.block([[sys.C, sys.M], [sys.M, Z]])
    F_nl = sys.f_nl.scaled(-1.0).remapped(2 * n, 2 * n)
    F_a = np.concatenate([sys.f_ext / 2.0, np.zeros(n)]).astype(complex)
    return FirstOrderSystem(A=A, B=B, F_nl=F_nl, F_a=F_a, mech=sys)


class MechanicalField:
    """Explicit vector field of a :class:`MechSystem` in first-order form.

    Parameters are ``p = (Omega, eps)``.  Time enters only through the
    forcing phase, so the field can be evaluated on the phase grid of a
    collocation mesh.
    """

    autonomous = False

    def __init__(self, sys: MechSystem, r_d=1.0):
        self.sys = sys
        self.n = sys.n
        self.dim = 2 * sys.n
        self.r_d = float(r_d)
        self._lu = sla.lu_factor(sys.M)

    def _minv(self, v):
        shp = v.shape
        flat = v.reshape(-1, self.n).T
        return sla.lu_solve(self._lu, flat).T.reshape(shp)

    def rhs(self, z, p, phase):
        z = np.asarray(z, dtype=float)
        x, v = z[..., : self.n], z[..., self.n:]
        eps = p[1]
        f = (-x @ self.sys.K.T - v @ self.sys.C.T - self.sys.f_nl.eval(z)
             + eps * np.multiply.outer(np.cos(phase), self.sys.f_ext))
        return np.concatenate([v, self._minv(f)], axis=-1)

    def jac(self, z, p, phase):
        z = np.asarray(z, dtype=float)
        n = self.n
        J = np.zeros(z.shape[:-1] + (2 * n, 2 * n))
        J[..., :n, n:] = np.eye(n)
        dfn = self.sys.f_nl.jacobian(z)
        lower = -dfn
        lower[..., :, :n] -= self.sys.K
        lower[..., :, n:] -= self.sys.C
        Minv = sla.lu_solve(self._lu, np.eye(n))
        J[..., n:, :] = Minv @ lower
        return J

    def dpar(self, z, p, phase):
        z = np.asarray(z, dtype=float)
        out = np.zeros(z.shape + (2,))
        fe = np.multiply.outer(np.cos(phase), self.sys.f_ext)
        out[..., self.n:, 1] = self._minv(fe * np.ones(z.shape[:-1] + (1,)))
        return out

    def period(self, p):
        return 2.0 * np.pi / (self.r_d * p[0])

    def dperiod(self, p):
        return np.array([-2.0 * np.pi / (self.r_d * p[0] ** 2), 0.0])


# ---------------------------------------------------------------------------
# builders
# ---------------------------------------------------------------------------

def build_coupled_oscillators(c1=0.005, c2=0.01, b1=0.3, b2=1.0, f1=1.0, f2=0.0,
                              eps=0.01, w1=1.0, w2=2.0):
    """Two quadratically coupled oscillators near a 1:2 internal resonance.

    ``x1'' + c1 x1' + w1^2 x1 + b1 x1 x2 = eps f1 cos(Omega t)``
    ``x2'' + c2 x2' + w2^2 x2 + b2 x1^2 = eps f2 cos(Omega t)``
    """
    f_nl = PolynomialForce(4, 2, [
        (0, b1, [(0, 1), (1, 1)]),
        (1, b2, [(0, 2)]),
    ])
    return MechSystem(
        M=np.eye(2),
        C=np.diag([c1, c2]),
        K=np.diag([w1 ** 2, w2 ** 2]),
        f_nl=f_nl,
        f_ext=np.array([f1, f2]),
        eps=eps,
        name="coupled_oscillators",
        dof_labels=["x1", "x2"],
        meta=dict(c1=c1, c2=c2, b1=b1, b2=b2, f1=f1, f2=f2, eps=eps, w1=w1, w2=w2),
    )


def beam_matrices(n_elements, length, E, rho, width, height):
    """Cantilever Euler-Bernoulli beam with cubic Hermite elements.

    Returns consistent mass and bending stiffness after clamping the first
    node.  Each node carries (deflection, rotation).
    """
    Le = length / n_elements
    I = width * height ** 3 / 12.0
    Ar = width * height
    EI = E * I
    k = EI / Le ** 3 * np.array([
        [12, 6 * Le, -12, 6 * Le],
        [6 * Le, 4 * Le ** 2, -6 * Le, 2 * Le ** 2],
        [-12, -6 * Le, 12, -6 * Le],
        [6 * Le, 2 * Le ** 2, -6 * Le, 4 * Le ** 2],
    ])
    m = rho * Ar * Le / 420.0 * np.array([
        [156, 22 * Le, 54, -13 * Le],
        [22 * Le, 4 * Le ** 2, 13 * Le, -3 * Le ** 2],
        [54, 13 * Le, 156, -22 * Le],
        [-13 * Le, -3 * Le ** 2, -22 * Le, 4 * Le ** 2],
    ])
    ndof = 2 * (n_elements + 1)
    K = np.zeros((ndof, ndof))
    M = np.zeros((ndof, ndof))
    for e in range(n_elements):
        idx = slice(2 * e, 2 * e + 4)
        K[idx, idx] += k
        M[idx, idx] += m
    return M[2:, 2:], K[2:, 2:]


def build_bernoulli_beam(n_elements=40, k_l=27.0, k_nl=60.0, alpha=1.25e-4, beta=2.5e-5,
                         length=2700.0, E=45e6, rho=1780e-9, width=10.0, height=10.0,
                         eps=0.002, forcing_mode=0):
    """Cantilever beam with a linear plus cubic spring at the free tip.

    Units are kg, mm, s.  Damping is ``alpha M + beta K_b`` where ``K_b``
    is the bending stiffness without the tip spring.  The forcing shape is
    ``omega^2 M phi`` for the selected undamped mode ``phi`` (mass
    normalised), so a unit modal force drives that mode.
    """
    M, Kb = beam_matrices(n_elements, length, E, rho, width, height)
    n = M.shape[0]
    tip = n - 2
    K = Kb.copy()
    K[tip, tip] += k_l
    C = alpha * M + beta * Kb
    w2, phi = sla.eigh(K, M)
    mode = phi[:, forcing_mode]
    mode = mode / np.sqrt(mode @ M @ mode)
    if mode[tip] < 0:
        mode = -mode
    f_ext = w2[forcing_mode] * (M @ mode)
    f_nl = PolynomialForce(2 * n, n, [(tip, k_nl, [(tip, 3)])])
    labels = []
    for node in range(1, n_elements + 1):
        labels += [f"w{node}", f"th{node}"]
    return MechSystem(
        M=M, C=C, K=K, f_nl=f_nl, f_ext=f_ext, eps=eps, name="bernoulli_beam",
        dof_labels=labels,
        meta=dict(n_elements=n_elements, k_l=k_l, k_nl=k_nl, alpha=alpha, beta=beta,
                  tip_dof=tip, length=length, E=E, rho=rho, width=width,
                  height=height, eps=eps),
    )


def eval_force(force: PolynomialForce, z):
    return force.eval(z)


def eval_force_jacobian(force: PolynomialForce, z):
    return force.jacobian(z)


BUILDERS = {
    "coupled_oscillators": build_coupled_oscillators,
    "bernoulli_beam": build_bernoulli_beam,
}
