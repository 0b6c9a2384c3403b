"""Piecewise-polynomial collocation on ``[0, 1]``.

A mesh has ``N`` intervals carrying degree-``d`` polynomials represented
by their values at ``d + 1`` equally spaced base points (end points are
shared, giving ``N d + 1`` base points).  The ODE is enforced at the ``d``
Gauss-Legendre nodes of each interval.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp


def _lagrange(nodes, x):
    """Values and derivatives of the Lagrange basis on ``nodes`` at ``x``."""
    nodes = np.asarray(nodes, dtype=float)
    x = np.atleast_1d(np.asarray(x, dtype=float))
    m = len(nodes)
    Lv = np.ones((len(x), m))
    Ld = np.zeros((len(x), m))
    for k in range(m):
        others = [j for j in range(m) if j != k]
        den = np.prod([nodes[k] - nodes[j] for j in others])
        for j in others:
            Lv[:, k] *= (x - nodes[j])
        Lv[:, k] /= den
        # derivative: sum over dropped factor
        for jj in others:
            term = np.ones(len(x))
            for j in others:
                if j != jj:
                    term *= (x - nodes[j])
            Ld[:, k] += term
        Ld[:, k] /= den
    return Lv, Ld


class Mesh:
    """Uniform collocation mesh with ``n_int`` intervals of degree ``degree``.

    ``degree + 1`` base points per interval; five base points (degree 4)
    and ten intervals are the defaults.
    """

    def __init__(self, n_int=10, degree=4):
        self.N = int(n_int)
        self.d = int(degree)
        d, N = self.d, self.N
        self.base_local = np.linspace(0.0, 1.0, d + 1)
        g, w = np.polynomial.legendre.leggauss(d)
        self.coll_local = 0.5 * (g + 1.0)
        self.coll_w = 0.5 * w
        self.Lc, Dc = _lagrange(self.base_local, self.coll_local)
        self.Dc = Dc * N  # derivative w.r.t. global tau
        self.n_base = N * d + 1
        self.n_coll = N * d
        self.tau = np.concatenate([(j + self.base_local[:-1]) / N for j in range(N)] + [[1.0]])
        self.tau_c = np.concatenate([(j + self.coll_local) / N for j in range(N)])
        self.w_c = np.tile(self.coll_w / N, N)
        rows, cols, lv, dv = [], [], [], []
        for j in range(N):
            for i in range(d):
                for k in range(d + 1):
                    rows.append(j * d + i)
                    cols.append(j * d + k)
                    lv.append(self.Lc[i, k])
                    dv.append(self.Dc[i, k])
        shape = (self.n_coll, self.n_base)
        self.L = sp.csr_matrix((lv, (rows, cols)), shape=shape)
        self.D = sp.csr_matrix((dv, (rows, cols)), shape=shape)
        self._kron = {}

    def ops(self, n):
        """``(L (x) I_n, D (x) I_n)`` for states of dimension ``n``."""
        if n not in self._kron:
            I = sp.identity(n, format="csr")
            self._kron[n] = (sp.kron(self.L, I, format="csr"), sp.kron(self.D, I, format="csr"))
        return self._kron[n]

    def interval_of(self, tau):
        tau = np.clip(np.asarray(tau, dtype=float), 0.0, 1.0)
        j = np.minimum((tau * self.N).astype(int), self.N - 1)
        return j, tau * self.N - j

    def _eval(self, X, tau, which):
        X = np.asarray(X)
        tau = np.asarray(tau, dtype=float)
        j, s = self.interval_of(tau.ravel())
        B = _lagrange(self.base_local, s)[which]
        idx = j[:, None] * self.d + np.arange(self.d + 1)[None, :]
        out = np.einsum("pk,pk...->p...", B, X[idx])
        return out.reshape(tau.shape + X.shape[1:])

    def interp(self, X, tau):
        """Evaluate the piecewise polynomial with base values ``X`` at ``tau``."""
        return self._eval(X, tau, 0)

    def deriv(self, X, tau):
        """Derivative with respect to ``tau``."""
        return self.N * self._eval(X, tau, 1)

    def at_nodes(self, X):
        """Values at collocation nodes for base values ``X`` (n_base, n)."""
        return self.L @ X

    def integrate(self, values_at_nodes):
        """Quadrature over ``[0, 1]`` of values sampled at the collocation nodes."""
        return np.tensordot(self.w_c, values_at_nodes, axes=(0, 0))


def block_diag_coo(blocks):
    """Sparse block-diagonal matrix from an array of shape ``(K, n, m)``."""
    blocks = np.asarray(blocks)
    K, n, m = blocks.shape
    r = (np.arange(K)[:, None, None] * n + np.arange(n)[None, :, None]) * np.ones((1, 1, m), int)
    c = (np.arange(K)[:, None, None] * m + np.arange(m)[None, None, :]) * np.ones((1, n, 1), int)
    return sp.csr_matrix((blocks.ravel(), (r.ravel(), c.ravel())), shape=(K * n, K * m))


def transfer_matrices(mesh: Mesh, Jc, T):
    """Per-interval transfer maps of ``Y' = T J(tau) Y``.

    ``Jc`` holds the Jacobian at all collocation nodes, shape
    ``(N d, n, n)``.  Returns an array of ``N`` matrices mapping the state
    at the start of each interval to its end, and the intermediate base
    values for reconstructing the fundamental solution.
    """
    N, d = mesh.N, mesh.d
    n = Jc.shape[-1]
    Phis = np.empty((N, n, n))
    inner = np.empty((N, d, n, n))
    I = np.eye(n)
    for j in range(N):
        G = np.zeros((d * n, (d + 1) * n))
        for i in range(d):
            Jn = Jc[j * d + i]
            for k in range(d + 1):
                G[i * n:(i + 1) * n, k * n:(k + 1) * n] = mesh.Dc[i, k] * I - T * mesh.Lc[i, k] * Jn
        Y = -np.linalg.solve(G[:, n:], G[:, :n])
        inner[j] = Y.reshape(d, n, n)
        Phis[j] = inner[j, -1]
    return Phis, inner


def fundamental_solution(mesh: Mesh, Jc, T):
    """Fundamental matrix at every base point (``Phi(0) = I``)."""
    Phis, inner = transfer_matrices(mesh, Jc, T)
    n = Jc.shape[-1]
    out = np.empty((mesh.n_base, n, n))
    cur = np.eye(n)
    out[0] = cur
    for j in range(mesh.N):
        for k in range(mesh.d):
            out[j * mesh.d + k + 1] = inner[j, k] @ cur
        cur = out[(j + 1) * mesh.d]
    return out
