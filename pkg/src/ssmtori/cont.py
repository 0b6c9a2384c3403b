"""Pseudo-arclength continuation with event detection.

The generic driver :func:`continue_branch` traces the solution curve of
``F(y) = 0`` with ``F: R^{n+1} -> R^n``.  Specialised front ends handle
equilibria of the reduced field and codimension-one curves of fold and
Hopf points in the ``(Omega, eps)`` plane.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.optimize import brentq

log = logging.getLogger(__name__)


class ContinuationError(RuntimeError):
    """Raised when a branch cannot be started."""


@dataclass
class ContSettings:
    """Step-size control and tolerances.

    ``bounds`` maps a component of the unknown vector to an interval; the
    branch stops at the first crossing, which is localised as an ``EP``
    point.
    """

    h0: float = 0.01
    h_min: float = 1e-7
    h_max: float = 0.05
    max_steps: int = 2000
    tol: float = 1e-9
    max_iter: int = 10
    event_tol: float = 1e-10
    grow: float = 1.5
    shrink: float = 0.5
    fast_iter: int = 3
    bounds: dict = field(default_factory=dict)
    detect_closed: bool = True
    min_cos: float = 0.8


@dataclass
class Event:
    kind: str
    index: int          # branch point index inserted at the event
    y: np.ndarray
    data: dict = field(default_factory=dict)


@dataclass
class Branch:
    """Continuation output.

    ``points`` has one row per accepted solution; event points are
    inserted in arclength order.  ``extra`` holds per-point annotations.
    """

    points: np.ndarray
    tangents: np.ndarray
    events: list
    status: str
    extra: list = field(default_factory=list)
    labels: list = field(default_factory=list)
    info: dict = field(default_factory=dict)

    def count(self, kind):
        return sum(1 for e in self.events if e.kind == kind)

    def by_kind(self, kind):
        return [e for e in self.events if e.kind == kind]


# ---------------------------------------------------------------------------
# linear algebra helpers
# ---------------------------------------------------------------------------

def _bordered(J, row):
    if sp.issparse(J):
        return sp.vstack([J, sp.csr_matrix(row[None, :])], format="csc")
    return np.vstack([J, row[None, :]])


def _solve(M, b):
    if sp.issparse(M):
        return spla.spsolve(M, b)
    return np.linalg.solve(M, b)


def tangent(J, t_prev):
    """Unit null vector of ``J`` oriented along ``t_prev``."""
    n1 = J.shape[1]
    rhs = np.zeros(n1)
    rhs[-1] = 1.0
    t = _solve(_bordered(J, t_prev), rhs)
    t = t / np.linalg.norm(t)
    if np.dot(t, t_prev) < 0:
        t = -t
    return t


def initial_tangent(J, hint=None):
    """Null vector of ``J``; ``hint`` fixes orientation."""
    n1 = J.shape[1]
    if sp.issparse(J):
        if hint is None:
            hint = np.zeros(n1)
            hint[-1] = 1.0
        return tangent(J, hint)
    _, _, vt = np.linalg.svd(J)
    t = vt[-1]
    if hint is not None and np.dot(t, hint) < 0:
        t = -t
    elif hint is None and t[-1] < 0:
        t = -t
    return t


def newton(fun, jac, y, tol=1e-9, max_iter=20, row=None, rhs_row=None):
    """Newton iteration on ``F(y) = 0`` (square) or bordered with ``row``.

    With ``row`` given, the extra equation ``row . y = rhs_row`` closes the
    system.  Returns ``(y, converged, iterations)``.
    """
    y = np.array(y, dtype=float)
    for it in range(1, max_iter + 1):
        F = fun(y)
        J = jac(y)
        if row is not None:
            F = np.append(F, np.dot(row, y) - rhs_row)
            J = _bordered(J, row)
        try:
            dy = _solve(J, -F)
        except (np.linalg.LinAlgError, RuntimeError):
            return y, False, it
        if not np.all(np.isfinite(dy)):
            return y, False, it
        y = y + dy
        if np.linalg.norm(dy) <= tol * (1.0 + np.linalg.norm(y)):
            Fn = fun(y)
            if np.linalg.norm(Fn) <= max(1e3 * tol, 1e-8) * (1.0 + np.linalg.norm(y)):
                return y, True, it
    return y, False, max_iter


# ---------------------------------------------------------------------------
# generic driver
# ---------------------------------------------------------------------------

def continue_branch(fun, jac, y0, settings: ContSettings | None = None, t0=None,
                    tests=None, classify=None, annotate=None, scale=None,
                    direction=1, terminal=(), on_accept=None, fold_tests=(),
                    end_check=None):
    """Trace ``fun(y) = 0`` from ``y0``.

    Parameters
    ----------
    fun, jac : callables
        Residual ``R^{n+1} -> R^n`` and its ``n x (n+1)`` Jacobian.
    y0 : array
        Converged starting point.
    t0 : array, optional
        Initial tangent (orientation hint).  Computed when omitted.
    tests : dict, optional
        ``name -> psi(y, J, t)``; a sign change between consecutive points
        triggers localisation by bracketed root finding along the step.
    classify : callable, optional
        ``classify(name, y, J, t) -> kind or None``; lets callers reject or
        rename a located zero (for example neutral saddles).
    annotate : callable, optional
        ``annotate(y, J) -> dict`` stored per point.
    scale : array, optional
        Characteristic size of each unknown.  Steps are measured in the
        rescaled variables ``y / scale``.
    terminal : iterable
        Event kinds that stop the branch.
    on_accept : callable, optional
        Called with each accepted point (for example to refresh a phase
        reference).
    fold_tests : iterable
        Tests whose zeros are folds in the continuation parameter.  A sign
        change without a matching flip of the parameter direction means the
        corrector jumped across a hairpin; such steps are retried smaller.
    end_check : callable, optional
        ``end_check(y, t, h)`` may return ``(kind, y_end, data)`` when the
        branch terminates inside the next predictor step; ``y_end`` is then
        stored as a terminal event.
    """
    s = settings or ContSettings()
    tests = tests or {}
    if scale is not None:
        sig = np.asarray(scale, dtype=float)
        raw_fun, raw_jac = fun, jac
        fun = lambda yy: raw_fun(sig * yy)
        jac = lambda yy: _scale_cols(raw_jac(sig * yy), sig)
        tests = {k: (lambda yy, JJ, tt, f=f: f(sig * yy, _scale_cols(JJ, 1.0 / sig), sig * tt))
                 for k, f in tests.items()}
        if classify is not None:
            raw_cls = classify
            classify = lambda name, yy, JJ, tt: raw_cls(name, sig * yy,
                                                        _scale_cols(JJ, 1.0 / sig), sig * tt)
        if annotate is not None:
            raw_ann = annotate
            annotate = lambda yy, JJ: raw_ann(sig * yy, _scale_cols(JJ, 1.0 / sig))
        if on_accept is not None:
            raw_acc = on_accept
            on_accept = lambda yy: raw_acc(sig * yy)
        if end_check is not None:
            raw_end = end_check

            def end_check(yy, tt, hh):
                res = raw_end(sig * yy, sig * tt, hh)
                if res is None:
                    return None
                return res[0], res[1] / sig, res[2]
        y0 = np.asarray(y0, dtype=float) / sig
        if t0 is not None:
            t0 = np.asarray(t0, dtype=float) / sig
        sb = ContSettings(**{k: getattr(s, k) for k in s.__dataclass_fields__})
        sb.bounds = {c: (lo / sig[c], hi / sig[c]) for c, (lo, hi) in s.bounds.items()}
        s = sb
    else:
        sig = None
    w = np.ones(len(y0))

    y = np.array(y0, dtype=float)
    J = jac(y)
    t = initial_tangent(J, t0)
    if direction < 0:
        t = -t

    pts, tans, extra, labels = [y.copy()], [t.copy()], [], ["start"]
    if annotate:
        extra.append(annotate(y, J))
    events = []
    psi_prev = {k: f(y, J, t) for k, f in tests.items()}
    h = s.h0
    status = "max_steps"

    def correct(y_base, t_base, hh):
        yp = y_base + hh * t_base
        row = w * t_base
        return newton(fun, jac, yp, s.tol, s.max_iter, row=row, rhs_row=np.dot(row, yp))

    for step in range(s.max_steps):
        if end_check is not None:
            res = end_check(y, t, h)
            if res is not None:
                kind, ye, data = res
                Je = jac(ye)
                pts.append(ye)
                tans.append(t.copy())
                labels.append(kind)
                if annotate:
                    extra.append(annotate(ye, Je))
                events.append(Event(kind, len(pts) - 1, ye, data))
                status = kind
                break
        yn, ok, its = correct(y, t, h)
        if ok:
            # reject steps whose corrector wandered far from the predictor
            if np.linalg.norm(yn - (y + h * t)) > 0.5 * h + 10 * s.tol:
                ok = False
        if not ok:
            h *= s.shrink
            if h < s.h_min:
                status = "min_step"
                break
            continue
        Jn = jac(yn)
        tn = tangent(Jn, t)
        if h > 4 * s.h_min:
            bad = np.dot(tn, t) < s.min_cos
            if not bad and fold_tests and t[-1] * tn[-1] > 0:
                for name in fold_tests:
                    a = psi_prev[name]
                    b = tests[name](yn, Jn, tn)
                    if np.sign(a) != np.sign(b):
                        bad = True
            if bad:
                h *= s.shrink
                continue

        # bounds --------------------------------------------------------
        hit = None
        for comp, (lo, hi) in s.bounds.items():
            if yn[comp] < lo or yn[comp] > hi:
                hit = (comp, lo if yn[comp] < lo else hi)
                break
        if hit is not None:
            comp, val = hit
            ye = _locate(lambda yy: yy[comp] - val, correct, y, t, h, s.event_tol,
                         fa=y[comp] - val, fb=yn[comp] - val)
            if ye is not None:
                Je = jac(ye)
                te = tangent(Je, t)
                _check_events(tests, classify, psi_prev, y, t, ye, Je, te, correct,
                              h, s, events, pts, tans, extra, labels, annotate, jac)
                pts.append(ye)
                tans.append(te)
                labels.append("EP")
                if annotate:
                    extra.append(annotate(ye, Je))
                events.append(Event("EP", len(pts) - 1, ye))
            status = "bounds"
            break

        stop = _check_events(tests, classify, psi_prev, y, t, yn, Jn, tn, correct, h, s,
                             events, pts, tans, extra, labels, annotate, jac, terminal)
        pts.append(yn)
        tans.append(tn)
        labels.append("")
        if annotate:
            extra.append(annotate(yn, Jn))
        psi_prev = {k: f(yn, Jn, tn) for k, f in tests.items()}
        y, t = yn, tn
        if on_accept is not None:
            on_accept(y)
        if stop:
            status = stop
            break

        if s.detect_closed and len(pts) > 10:
            if np.linalg.norm(w * (y - pts[0])) < 0.5 * h and np.dot(t, tans[0]) > 0.9:
                status = "closed"
                break

        if its <= s.fast_iter:
            h = min(h * s.grow, s.h_max)

    pts = np.array(pts)
    tans = np.array(tans)
    if sig is not None:
        pts = pts * sig
        tans = tans * sig
        tans /= np.linalg.norm(tans, axis=1, keepdims=True)
        for ev in events:
            ev.y = ev.y * sig
    return Branch(pts, tans, events, status, extra, labels)


def _scale_cols(J, sig):
    if sp.issparse(J):
        return (J @ sp.diags(sig)).tocsc()
    return J * sig


def _locate(psi_of_y, correct, y, t, h, tol, fa, fb):
    """Root of ``psi`` along the secant step from ``y``; returns a point."""
    cache = {}

    def g(hh):
        yy, ok, _ = correct(y, t, hh)
        if not ok:
            raise ContinuationError("corrector failed during event localisation")
        cache[hh] = yy
        return psi_of_y(yy)

    if fa == 0:
        return y.copy()
    try:
        hr = brentq(g, 0.0, h, xtol=max(tol * h, 1e-15), rtol=4 * np.finfo(float).eps,
                    maxiter=200, full_output=False)
    except (ValueError, ContinuationError):
        return None
    if hr not in cache:
        g(hr)
    return cache[hr]


def _check_events(tests, classify, psi_prev, y, t, yn, Jn, tn, correct, h, s, events,
                  pts, tans, extra, labels, annotate, jac, terminal=()):
    found = []
    for name, f in tests.items():
        a = psi_prev[name]
        b = f(yn, Jn, tn)
        if np.isfinite(a) and np.isfinite(b) and np.sign(a) != np.sign(b) and a != 0:
            def psi(yy, f=f):
                JJ = jac(yy)
                return f(yy, JJ, tangent(JJ, t))
            ye = _locate(psi, correct, y, t, h, s.event_tol, a, b)
            if ye is None:
                continue
            Je = jac(ye)
            te = tangent(Je, t)
            kind = name
            data = {"psi": float(f(ye, Je, te))}
            if classify is not None:
                res = classify(name, ye, Je, te)
                if res is None:
                    continue
                if isinstance(res, tuple):
                    kind, more = res
                    data.update(more)
                else:
                    kind = res
            arc = np.dot(ye - y, t)
            found.append((arc, kind, ye, Je, te, data))
    stop = None
    for arc, kind, ye, Je, te, data in sorted(found, key=lambda z: z[0]):
        pts.append(ye)
        tans.append(te)
        labels.append(kind)
        if annotate:
            extra.append(annotate(ye, Je))
        events.append(Event(kind, len(pts) - 1, ye, data))
        if kind in terminal:
            stop = kind
    return stop


# ---------------------------------------------------------------------------
# equilibria of the reduced field
# ---------------------------------------------------------------------------

def psi_sn(Jx):
    return float(np.linalg.det(Jx))


def psi_hb(Jx):
    mu = np.linalg.eigvals(Jx)
    n = len(mu)
    prod = 1.0 + 0j
    for i in range(n):
        for j in range(i + 1, n):
            prod *= mu[i] + mu[j]
    return float(prod.real)


def eq_test_functions(Jx):
    """``(psi_SN, psi_HB)`` for a square Jacobian."""
    Jx = np.asarray(Jx, dtype=float)
    if Jx.ndim != 2 or Jx.shape[0] != Jx.shape[1]:
        raise ValueError("Jacobian must be square")
    return psi_sn(Jx), psi_hb(Jx)


def _hopf_pair(Jx):
    """Eigenpair closest to the imaginary axis with positive frequency."""
    mu, vec = np.linalg.eig(Jx)
    n = len(mu)
    best = None
    for i in range(n):
        for j in range(i + 1, n):
            v = abs(mu[i] + mu[j])
            if best is None or v < best[0]:
                best = (v, i, j)
    _, i, j = best
    k = i if mu[i].imag >= mu[j].imag else j
    return mu[k], vec[:, k], mu


class EquilibriumProblem:
    """Equilibria of an autonomous field with one free parameter.

    Unknowns are ``y = (x, p[free])``; the remaining parameters stay at
    ``p_fixed``.
    """

    def __init__(self, field_, p, free=0):
        self.f = field_
        self.p = np.array(p, dtype=float)
        self.free = free
        self.n = field_.dim

    def params(self, y):
        p = self.p.copy()
        p[self.free] = y[-1]
        return p

    def fun(self, y):
        return self.f.rhs(y[:-1], self.params(y))

    def jac(self, y):
        p = self.params(y)
        Jx = self.f.jac(y[:-1], p)
        Jp = self.f.dpar(y[:-1], p)[:, self.free]
        return np.column_stack([Jx, Jp])


def find_equilibrium(field_, x_guess, p, tol=1e-12, max_iter=50):
    """Newton solve of ``f(x, p) = 0`` at fixed parameters."""
    fun = lambda x: field_.rhs(x, p)
    jac = lambda x: field_.jac(x, p)
    x, ok, _ = newton(fun, jac, x_guess, tol, max_iter)
    if not ok:
        raise ContinuationError("equilibrium Newton solve did not converge")
    return x


def equilibrium_at(field_, Omega, eps, settings: ContSettings | None = None):
    """Equilibrium at ``(Omega, eps)`` reached by continuation in ``eps`` from zero.

    The unforced field has the trivial equilibrium, so this needs no
    guess.  Folds in ``eps`` are passed by arclength continuation.
    """
    s = settings or ContSettings(h0=0.01, h_max=0.05)
    n = field_.dim
    prob = EquilibriumProblem(field_, [Omega, 0.0], free=1)
    y0 = np.r_[find_equilibrium(field_, np.zeros(n), np.array([Omega, 0.0])), 0.0]
    s = _with_bounds(s, {n: (-abs(eps) - 1.0, eps)})
    s.detect_closed = False
    hint = np.zeros(n + 1)
    hint[-1] = 1.0
    scale = np.ones(n + 1)
    scale[-1] = max(abs(eps), 1e-12)
    br = continue_branch(prob.fun, prob.jac, y0, s, t0=hint, scale=scale)
    if br.status != "bounds" or abs(br.points[-1, -1] - eps) > 1e-9 * max(1.0, abs(eps)):
        raise ContinuationError(f"forcing homotopy stopped early ({br.status})")
    return br.points[-1, :n]


def join_branches(down: Branch, up: Branch) -> Branch:
    """Concatenate two branches traced in opposite senses from one start."""
    nd = len(down.points)
    pts = np.vstack([down.points[::-1], up.points[1:]])
    tans = np.vstack([-down.tangents[::-1], up.tangents[1:]])
    extra = list(down.extra[::-1]) + list(up.extra[1:])
    labels = list(down.labels[::-1]) + list(up.labels[1:])
    labels[nd - 1] = ""
    labels[0] = labels[0] if labels[0] != "start" else ""
    events = [Event(e.kind, nd - 1 - e.index, e.y, e.data) for e in reversed(down.events)]
    events += [Event(e.kind, nd - 1 + e.index, e.y, e.data) for e in up.events]
    info = dict(up.info)
    info["start_index"] = nd - 1
    return Branch(pts, tans, events, f"{down.status}/{up.status}", extra, labels, info)


def continue_equilibria(field_, x0, Omega_range, eps, settings: ContSettings | None = None,
                        r_d=1.0, direction=1, Omega0=None, two_sided=False):
    """Forced-response curve of slow-frame equilibria over ``Omega``.

    Starts at ``Omega0`` (default: lower end of the range) from the
    Newton-corrected guess ``x0`` and records ``SN`` and ``HB`` events.
    ``x0=None`` obtains the start by a forcing homotopy.  With
    ``two_sided`` the curve is traced in both senses from ``Omega0`` and
    returned as one branch ordered by arclength.
    Each point is annotated with eigenvalues, stability and the period
    ``T = 2 pi / (r_d Omega)`` of the corresponding forced orbit.
    """
    s = settings or ContSettings()
    lo, hi = Omega_range
    Om0 = lo if Omega0 is None else Omega0
    if x0 is None:
        x0 = equilibrium_at(field_, Om0, eps)
    if two_sided:
        kw = dict(settings=s, r_d=r_d, Omega0=Om0)
        down = continue_equilibria(field_, x0, Omega_range, eps, direction=-1, **kw)
        up = continue_equilibria(field_, x0, Omega_range, eps, direction=1, **kw)
        return join_branches(down, up)
    prob = EquilibriumProblem(field_, [Om0, eps], free=0)
    xs = find_equilibrium(field_, np.asarray(x0, dtype=float), prob.params(np.r_[x0, Om0]))
    y0 = np.r_[xs, Om0]
    s = _with_bounds(s, {len(y0) - 1: (lo, hi)})
    n = field_.dim

    def t_sn(y, J, t):
        return psi_sn(J[:, :n])

    def t_hb(y, J, t):
        return psi_hb(J[:, :n])

    def t_bp(y, J, t):
        return float(np.linalg.det(np.vstack([J, t])))

    def classify(name, y, J, t):
        if name == "HB":
            mu, vec, allmu = _hopf_pair(J[:, :n])
            if abs(mu.imag) <= 1e-8 * max(1.0, np.max(np.abs(allmu))):
                log.info("neutral saddle at Omega=%.8g ignored", y[-1])
                return None
            return "HB", {"omega": float(abs(mu.imag)), "eigvec": vec}
        return name

    def annotate(y, J):
        mu = np.linalg.eigvals(J[:, :n])
        return {"eig": mu, "stable": bool(np.all(mu.real < 0)),
                "T": 2 * np.pi / (float(r_d) * y[-1]) if y[-1] else np.inf}

    hint = np.zeros(n + 1)
    hint[-1] = 1.0
    br = continue_branch(prob.fun, prob.jac, y0, s, t0=hint,
                         tests={"SN": t_sn, "HB": t_hb, "BP": t_bp},
                         classify=classify, annotate=annotate, direction=direction,
                         fold_tests=("SN",))
    br.info.update(kind="equilibria", eps=eps, r_d=float(r_d), dim=n)
    return br


def _with_bounds(s, bounds):
    new = ContSettings(**{k: getattr(s, k) for k in s.__dataclass_fields__})
    new.bounds = dict(s.bounds)
    new.bounds.update(bounds)
    return new


# ---------------------------------------------------------------------------
# two-parameter curves of SN / HB points
# ---------------------------------------------------------------------------

class Codim1Problem:
    """``f(x, Omega, eps) = 0`` augmented with a fold or Hopf test function."""

    def __init__(self, field_, kind):
        if kind not in ("SN", "HB"):
            raise ValueError("kind must be 'SN' or 'HB'")
        self.f = field_
        self.kind = kind
        self.n = field_.dim

    def psi(self, y):
        Jx = self.f.jac(y[: self.n], y[self.n:])
        return psi_sn(Jx) if self.kind == "SN" else psi_hb(Jx)

    def fun(self, y):
        return np.append(self.f.rhs(y[: self.n], y[self.n:]), self.psi(y))

    def jac(self, y):
        n = self.n
        p = y[n:]
        top = np.column_stack([self.f.jac(y[:n], p), self.f.dpar(y[:n], p)])
        g = np.empty(len(y))
        for k in range(len(y)):
            hk = 1e-7 * max(1.0, abs(y[k]))
            e = np.zeros(len(y))
            e[k] = hk
            g[k] = (self.psi(y + e) - self.psi(y - e)) / (2 * hk)
        return np.vstack([top, g])


def continue_codim1(field_, y_event, kind, eps_range=(1e-4, 0.05), Omega_range=None,
                    settings: ContSettings | None = None, direction=1, stop_at_cusp=True):
    """Continue an ``SN`` or ``HB`` point in ``(Omega, eps)``.

    ``y_event`` is ``(x, Omega)`` from an equilibrium branch together with
    the ``eps`` used there, passed as ``(x, Omega, eps)``.  A cusp (fold
    curve with vanishing parameter tangent) is reported as ``CP``.
    """
    s = settings or ContSettings(h0=0.002, h_max=0.02)
    prob = Codim1Problem(field_, kind)
    n = field_.dim
    y_event = np.asarray(y_event, dtype=float)
    y0, ok, _ = newton(prob.fun, prob.jac, y_event, s.tol, 30,
                       row=np.eye(n + 2)[n + 1], rhs_row=y_event[n + 1])
    if not ok:
        raise ContinuationError(f"could not converge the {kind} point")
    bounds = {n + 1: tuple(eps_range)}
    if Omega_range is not None:
        bounds[n] = tuple(Omega_range)
    s = _with_bounds(s, bounds)

    def t_cusp(y, J, t):
        return t[n + 1]

    def classify(name, y, J, t):
        if name == "CP":
            tp = np.hypot(t[n], t[n + 1])
            if kind == "SN" and tp < 0.05:
                return "CP", {"param_tangent": float(tp)}
            return None
        return name

    hint = np.zeros(n + 2)
    hint[n + 1] = 1.0
    br = continue_branch(prob.fun, prob.jac, y0, s, t0=hint, tests={"CP": t_cusp},
                         classify=classify, direction=direction,
                         terminal=("CP",) if stop_at_cusp else ())
    br.info.update(kind=f"codim1-{kind}", dim=n)
    return br
