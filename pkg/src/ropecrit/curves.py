"""Piecewise-analytic space curves with arclength evaluation and endpoint constraints.

Segments are evaluated by local arclength ``s`` in vectorized form and return
position ``P``, unit tangent ``T`` and curvature vector ``K = T'``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Sequence

import numpy as np

from ._cheb import PiecewiseAntiderivative

JUNCTION_TOL = 1e-9


def _unit(v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    n = np.linalg.norm(v)
    if n == 0:
        raise ValueError("zero vector")
    return v / n


def _vec(v) -> np.ndarray:
    a = np.asarray(v, dtype=float).reshape(3)
    return a


@dataclass(frozen=True)
class CurvePoint:
    position: np.ndarray
    tangent: np.ndarray
    curvature: np.ndarray
    s: float
    component: int
    segment: int
    # one-sided curvature of the earlier segment at a junction (None elsewhere)
    curvature_before: np.ndarray | None = None

    @property
    def max_curvature(self) -> float:
        k = float(np.linalg.norm(self.curvature))
        if self.curvature_before is not None:
            k = max(k, float(np.linalg.norm(self.curvature_before)))
        return k


class Segment:
    """Base class. Subclasses set ``length`` and implement ``frame``."""

    length: float

    def frame(self, s):
        raise NotImplementedError

    def torsion(self, s):
        return np.zeros_like(np.asarray(s, dtype=float))

    def max_curvature(self) -> float:
        s = np.linspace(0.0, self.length, 257)
        return float(np.max(np.linalg.norm(self.frame(s)[2], axis=-1)))

    def scaled(self, lam: float) -> "Segment":
        raise NotImplementedError

    def to_json(self) -> dict:
        raise NotImplementedError(f"{type(self).__name__} has no JSON form")

    def start(self):
        P, T, K = self.frame(np.array([0.0]))
        return P[0], T[0], K[0]

    def end(self):
        P, T, K = self.frame(np.array([self.length]))
        return P[0], T[0], K[0]


class Line(Segment):
    def __init__(self, start, end):
        self.p0 = _vec(start)
        self.p1 = _vec(end)
        self.length = float(np.linalg.norm(self.p1 - self.p0))
        if not self.length > 0:
            raise ValueError("Line must have positive length")
        self.t = (self.p1 - self.p0) / self.length

    def frame(self, s):
        s = np.asarray(s, dtype=float)
        P = self.p0 + s[..., None] * self.t
        T = np.broadcast_to(self.t, P.shape).copy()
        return P, T, np.zeros_like(P)

    def max_curvature(self) -> float:
        return 0.0

    def scaled(self, lam):
        return Line(lam * self.p0, lam * self.p1)

    def to_json(self):
        return {"type": "line", "start": self.p0.tolist(), "end": self.p1.tolist()}


class Arc(Segment):
    """Circle arc ``center + r (cos a e1 + sin a e2)`` for ``a`` from angle0 to angle1."""

    def __init__(self, center, radius, e1, e2, angle0, angle1):
        self.center = _vec(center)
        self.radius = float(radius)
        self.e1 = _unit(e1)
        self.e2 = _unit(e2)
        if abs(self.e1 @ self.e2) > 1e-12:
            raise ValueError("Arc basis must be orthonormal")
        self.angle0, self.angle1 = float(angle0), float(angle1)
        if not self.radius > 0 or self.angle0 == self.angle1:
            raise ValueError("Arc needs positive radius and a nonempty angle interval")
        self.sign = 1.0 if self.angle1 > self.angle0 else -1.0
        self.length = self.radius * abs(self.angle1 - self.angle0)

    def frame(self, s):
        s = np.asarray(s, dtype=float)
        a = (self.angle0 + self.sign * s / self.radius)[..., None]
        c, sn = np.cos(a), np.sin(a)
        radial = c * self.e1 + sn * self.e2
        P = self.center + self.radius * radial
        T = self.sign * (-sn * self.e1 + c * self.e2)
        return P, T, -radial / self.radius

    def max_curvature(self):
        return 1.0 / self.radius

    def scaled(self, lam):
        return Arc(lam * self.center, lam * self.radius, self.e1, self.e2, self.angle0, self.angle1)

    def to_json(self):
        return {"type": "arc", "center": self.center.tolist(), "radius": self.radius,
                "e1": self.e1.tolist(), "e2": self.e2.tolist(),
                "angle0": self.angle0, "angle1": self.angle1}


class Profile(Segment):
    """Planar convex arc given by curvature as a function of u = sin(tangent angle).

    The tangent is ``cos(theta) e1 + sin(theta) e2`` with ``u = sin(theta)``
    running from u0 to u1; the arc turns toward e2 when u increases.
    Arclength and position come from Chebyshev antiderivatives in theta.
    """

    def __init__(self, kappa: Callable, u0: float, u1: float, start, e1, e2, scale: float = 1.0):
        self.kappa = kappa
        self.u0, self.u1 = float(u0), float(u1)
        if self.u0 == self.u1 or max(abs(self.u0), abs(self.u1)) > 1:
            raise ValueError("Profile needs a nonempty u interval inside [-1, 1]")
        self.p0 = _vec(start)
        self.e1 = _unit(e1)
        self.e2 = _unit(e2)
        self.scale = float(scale)
        self.th0, self.th1 = math.asin(self.u0), math.asin(self.u1)
        self.dir = 1.0 if self.th1 > self.th0 else -1.0
        lo, hi = min(self.th0, self.th1), max(self.th0, self.th1)
        kmin = np.min(self._k(np.linspace(lo, hi, 513)))
        if not kmin > 0:
            raise ValueError("Profile curvature must be strictly positive")

        def integrand(th):
            k = self._k(th)
            return np.array([1.0 / k, np.cos(th) / k, np.sin(th) / k])

        self._F = PiecewiseAntiderivative(integrand, lo, hi)
        self._F0 = self._F(np.array([self.th0]))[:, 0]
        self.length = self.scale * abs(self._F.total[0])
        th_tab = np.linspace(self.th0, self.th1, 4097)
        # refine the inverse table near steep ends so the Hermite guess is good
        extra = []
        for k in range(40):
            frac = 2.0 ** -(k + 13)
            extra += [self.th0 + frac * (self.th1 - self.th0), self.th1 - frac * (self.th1 - self.th0)]
        th_tab = np.unique(np.concatenate([th_tab, extra]))
        if self.dir < 0:
            th_tab = th_tab[::-1]
        s_tab = self._S(th_tab)
        keep = np.concatenate([[True], np.diff(s_tab) > 0])
        self._tab_th = th_tab[keep]
        self._tab_s = s_tab[keep]
        self._tab_d = self.dir * self._k(self._tab_th) / self.scale

    def _k(self, th):
        return np.asarray(self.kappa(np.sin(th)), dtype=float)

    def _S(self, th):
        return self.scale * self.dir * (self._F(th, rows=1)[0] - self._F0[0])

    def theta_of_s(self, s):
        s = np.clip(np.asarray(s, dtype=float), 0.0, self.length)
        idx = np.clip(np.searchsorted(self._tab_s, s) - 1, 0, len(self._tab_s) - 2)
        s0, s1 = self._tab_s[idx], self._tab_s[idx + 1]
        h = s1 - s0
        x = (s - s0) / h
        y0, y1 = self._tab_th[idx], self._tab_th[idx + 1]
        d0, d1 = self._tab_d[idx] * h, self._tab_d[idx + 1] * h
        th = ((2 * x ** 3 - 3 * x ** 2 + 1) * y0 + (x ** 3 - 2 * x ** 2 + x) * d0
              + (-2 * x ** 3 + 3 * x ** 2) * y1 + (x ** 3 - x ** 2) * d1)
        lo, hi = np.minimum(y0, y1), np.maximum(y0, y1)
        th = np.clip(th, lo, hi)
        for _ in range(30):
            f = self._S(th) - s
            step = f * self.dir * self._k(th) / self.scale
            new = np.clip(th - step, lo, hi)
            done = np.max(np.abs(new - th), initial=0.0) <= 2e-16 * (1 + np.max(np.abs(th), initial=0.0))
            th = new
            if done:
                break
        return th

    def frame(self, s):
        s = np.asarray(s, dtype=float)
        th = self.theta_of_s(s)
        F = self._F(th)
        X = self.scale * self.dir * (F[1] - self._F0[1])
        Z = self.scale * self.dir * (F[2] - self._F0[2])
        c, sn = np.cos(th)[..., None], np.sin(th)[..., None]
        P = self.p0 + X[..., None] * self.e1 + Z[..., None] * self.e2
        T = c * self.e1 + sn * self.e2
        k = (self.dir * self._k(th) / self.scale)[..., None]
        K = k * (-sn * self.e1 + c * self.e2)
        return P, T, K

    def max_curvature(self):
        from scipy.optimize import minimize_scalar

        lo, hi = min(self.u0, self.u1), max(self.u0, self.u1)
        u = np.linspace(lo, hi, 2049)
        k = np.asarray(self.kappa(u), dtype=float)
        i = int(np.argmax(k))
        best = float(k[i])
        a, b = u[max(i - 1, 0)], u[min(i + 1, len(u) - 1)]
        if b > a:
            r = minimize_scalar(lambda v: -float(self.kappa(np.array([v]))[0]), bounds=(a, b),
                                method="bounded", options={"xatol": 1e-14})
            best = max(best, -float(r.fun))
        return best / self.scale

    def scaled(self, lam):
        return Profile(self.kappa, self.u0, self.u1, lam * self.p0, self.e1, self.e2,
                       scale=self.scale * lam)


# ---------------------------------------------------------------------------
# Gehring arc


def gehring_kappa(tau: float, u) -> np.ndarray:
    """Curvature of the Gehring clasp arc at parameter u (|u| <= tau)."""
    u = np.abs(np.asarray(u, dtype=float))
    w = tau - u
    one_m_w = (1.0 - tau) + u
    one_m_w2 = one_m_w * (1.0 + w)
    a = 1.0 - u * u * w * w
    return np.sqrt(a ** 3 * one_m_w2) / (one_m_w2 + w * u * (1.0 - u * u))


def gehring_x(tau: float, u) -> np.ndarray:
    u = np.asarray(u, dtype=float)
    au = np.abs(u)
    w = tau - au
    one_m_w2 = ((1.0 - tau) + au) * (1.0 + w)
    return u * np.sqrt(one_m_w2) / np.sqrt(1.0 - u * u * w * w)


@lru_cache(maxsize=64)
def _gehring_z_table(tau: float) -> tuple[PiecewiseAntiderivative, float]:
    th1 = math.asin(tau)

    def integrand(th):
        k = gehring_kappa(tau, np.sin(th))
        return np.array([np.sin(th) / k, 1.0 / k])

    F = PiecewiseAntiderivative(integrand, 0.0, th1)
    delta = float(F.total[0])
    z0 = 0.5 * (-math.sqrt((1.0 - tau) * (1.0 + tau)) - delta)
    return F, z0


def gehring_z(tau: float, u) -> np.ndarray:
    """Height of the Gehring arc, normalized so that z(0) + z(tau) = -sqrt(1 - tau^2)."""
    F, z0 = _gehring_z_table(float(tau))
    u = np.asarray(u, dtype=float)
    th = np.arcsin(np.abs(u))
    return z0 + F(th)[0]


def gehring_arclength(tau: float, u0: float, u1: float) -> float:
    """Arclength of the Gehring arc between parameters of equal sign."""
    F, _ = _gehring_z_table(float(tau))
    a, b = F(np.arcsin(np.abs(np.array([u0, u1]))))[1]
    return float(abs(b - a))


class GehringArc(Profile):
    """Gehring clasp arc for u in [u0, u1] (same sign), placed as origin + x e1 + z e2."""

    def __init__(self, tau: float, u0: float, u1: float, origin=(0, 0, 0), e1=(1, 0, 0),
                 e2=(0, 0, 1), scale: float = 1.0):
        self.tau = float(tau)
        if not 0 < self.tau <= 1 - 1e-9 + 1e-15:
            raise ValueError("Gehring arc needs 0 < tau <= 1 - 1e-9")
        if u0 * u1 < 0 or max(abs(u0), abs(u1)) > self.tau + 1e-15:
            raise ValueError("Gehring arc parameters must share a sign and satisfy |u| <= tau")
        self.origin = _vec(origin)
        e1, e2 = _unit(e1), _unit(e2)
        start = self.origin + scale * (float(gehring_x(self.tau, u0)) * e1
                                       + float(gehring_z(self.tau, u0)) * e2)
        tau_ = self.tau
        super().__init__(lambda u: gehring_kappa(tau_, u), u0, u1, start, e1, e2, scale=scale)

    def scaled(self, lam):
        return GehringArc(self.tau, self.u0, self.u1, lam * self.origin, self.e1, self.e2,
                          scale=self.scale * lam)

    def to_json(self):
        d = {"type": "gehring_profile", "tau": self.tau, "u0": self.u0, "u1": self.u1,
             "origin": self.origin.tolist(), "e1": self.e1.tolist(), "e2": self.e2.tolist()}
        if self.scale != 1.0:
            d["scale"] = self.scale
        return d


class Helix(Segment):
    """``center + a (cos t e1 + sin t e2) + b t e3`` for t in [t0, t1], t1 > t0."""

    def __init__(self, center, radius, rise, t0, t1, e1=(1, 0, 0), e2=(0, 1, 0), e3=(0, 0, 1)):
        self.center = _vec(center)
        self.a = float(radius)
        self.b = float(rise)
        self.t0, self.t1 = float(t0), float(t1)
        if not (self.a > 0 and self.t1 > self.t0):
            raise ValueError("Helix needs positive radius and t1 > t0")
        self.e1, self.e2, self.e3 = _unit(e1), _unit(e2), _unit(e3)
        self.v = math.hypot(self.a, self.b)
        self.length = self.v * (self.t1 - self.t0)

    def frame(self, s):
        s = np.asarray(s, dtype=float)
        t = (self.t0 + s / self.v)[..., None]
        c, sn = np.cos(t), np.sin(t)
        P = self.center + self.a * (c * self.e1 + sn * self.e2) + self.b * t * self.e3
        T = (self.a * (-sn * self.e1 + c * self.e2) + self.b * self.e3) / self.v
        K = -self.a * (c * self.e1 + sn * self.e2) / self.v ** 2
        return P, T, K

    def torsion(self, s):
        return np.full(np.shape(s), self.b / self.v ** 2)

    def max_curvature(self):
        return self.a / self.v ** 2

    def scaled(self, lam):
        return Helix(lam * self.center, lam * self.a, lam * self.b, self.t0, self.t1,
                     self.e1, self.e2, self.e3)

    def to_json(self):
        return {"type": "helix", "center": self.center.tolist(), "radius": self.a,
                "rise": self.b, "t0": self.t0, "t1": self.t1, "e1": self.e1.tolist(),
                "e2": self.e2.tolist(), "e3": self.e3.tolist()}


class Sampled(Segment):
    """Dense samples joined by cubic Hermite interpolation (positions and tangents).

    Curvature and torsion are interpolated linearly. The sample parameter is
    taken as arclength.
    """

    def __init__(self, s, points, tangents, curvatures=None, torsions=None):
        self.s = np.asarray(s, dtype=float) - float(s[0])
        self.P = np.asarray(points, dtype=float)
        T = np.asarray(tangents, dtype=float)
        self.T = T / np.linalg.norm(T, axis=1)[:, None]
        if len(self.s) < 2 or np.any(np.diff(self.s) <= 0):
            raise ValueError("Sampled segment needs increasing parameters")
        self.K = np.zeros_like(self.P) if curvatures is None else np.asarray(curvatures, float)
        self.tau = np.zeros(len(self.s)) if torsions is None else np.asarray(torsions, float)
        self.length = float(self.s[-1])

    def _locate(self, s):
        s = np.clip(np.asarray(s, dtype=float), 0.0, self.length)
        i = np.clip(np.searchsorted(self.s, s, side="right") - 1, 0, len(self.s) - 2)
        h = self.s[i + 1] - self.s[i]
        return s, i, h, (s - self.s[i]) / h

    def frame(self, s):
        s, i, h, x = self._locate(s)
        x_ = x[..., None]
        h_ = h[..., None]
        h00 = 2 * x_ ** 3 - 3 * x_ ** 2 + 1
        h10 = x_ ** 3 - 2 * x_ ** 2 + x_
        h01 = -2 * x_ ** 3 + 3 * x_ ** 2
        h11 = x_ ** 3 - x_ ** 2
        P = (h00 * self.P[i] + h10 * h_ * self.T[i] + h01 * self.P[i + 1]
             + h11 * h_ * self.T[i + 1])
        d00 = 6 * x_ ** 2 - 6 * x_
        d10 = 3 * x_ ** 2 - 4 * x_ + 1
        d01 = -d00
        d11 = 3 * x_ ** 2 - 2 * x_
        D = (d00 * self.P[i] / h_ + d10 * self.T[i] + d01 * self.P[i + 1] / h_
             + d11 * self.T[i + 1])
        T = D / np.linalg.norm(D, axis=-1)[..., None]
        K = (1 - x_) * self.K[i] + x_ * self.K[i + 1]
        K = K - np.sum(K * T, axis=-1)[..., None] * T
        return P, T, K

    def torsion(self, s):
        s, i, h, x = self._locate(s)
        return (1 - x) * self.tau[i] + x * self.tau[i + 1]

    def max_curvature(self):
        return float(np.max(np.linalg.norm(self.K, axis=1)))

    def scaled(self, lam):
        return Sampled(lam * self.s, lam * self.P, self.T, self.K / lam, self.tau / lam)

    def to_json(self):
        return {"type": "sampled", "s": self.s.tolist(), "points": self.P.tolist(),
                "tangents": self.T.tolist(), "curvatures": self.K.tolist(),
                "torsions": self.tau.tolist()}


class Mapped(Segment):
    """Image of a segment under x -> x + t xi(x), reparametrized by arclength.

    ``xi``, ``jac`` and ``hess`` act on arrays of points of shape (n, 3) and
    return (n, 3), (n, 3, 3) and (n, 3, 3, 3) arrays respectively.
    """

    def __init__(self, base: Segment, t: float, xi, jac, hess):
        self.base, self.t = base, float(t)
        self.xi, self.jac, self.hess = xi, jac, hess

        def speed(s):
            _, g1, _ = self._raw(s)
            return np.linalg.norm(g1, axis=-1)[None, :]

        self._F = PiecewiseAntiderivative(speed, 0.0, base.length, tol=1e-14)
        self.length = float(self._F.total[0])
        self._tab_b = np.linspace(0.0, base.length, 1025)
        self._tab_s = self._F(self._tab_b)[0]

    def _raw(self, sb):
        sb = np.atleast_1d(np.asarray(sb, dtype=float))
        P, T, K = self.base.frame(sb)
        J = self.jac(P)
        H = self.hess(P)
        g0 = P + self.t * self.xi(P)
        g1 = T + self.t * np.einsum("nij,nj->ni", J, T)
        g2 = K + self.t * (np.einsum("nijk,nj,nk->ni", H, T, T) + np.einsum("nij,nj->ni", J, K))
        return g0, g1, g2

    def base_param(self, s):
        s = np.clip(np.atleast_1d(np.asarray(s, dtype=float)), 0.0, self.length)
        sb = np.interp(s, self._tab_s, self._tab_b)
        for _ in range(30):
            _, g1, _ = self._raw(sb)
            f = self._F(sb)[0] - s
            step = f / np.linalg.norm(g1, axis=-1)
            sb = np.clip(sb - step, 0.0, self.base.length)
            if np.max(np.abs(step)) < 1e-15 * (1 + self.base.length):
                break
        return sb

    def frame(self, s):
        shape = np.shape(s)
        sb = self.base_param(s)
        g0, g1, g2 = self._raw(sb)
        v = np.linalg.norm(g1, axis=-1)[:, None]
        T = g1 / v
        K = (g2 - np.sum(g2 * T, axis=-1)[:, None] * T) / v ** 2
        return g0.reshape(shape + (3,)), T.reshape(shape + (3,)), K.reshape(shape + (3,))

    def max_curvature(self):
        s = np.linspace(0.0, self.length, 1025)
        return float(np.max(np.linalg.norm(self.frame(s)[2], axis=-1)))


# ---------------------------------------------------------------------------
# Components and curves


@dataclass(frozen=True)
class EndpointConstraint:
    """H0 = point + span(basis) (dimension 0..3); H1 = span(fixed_tangent) or free."""

    point: np.ndarray
    basis: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    fixed_tangent: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "point", _vec(self.point))
        b = np.asarray(self.basis, dtype=float).reshape(-1, 3)
        if len(b):
            q, _ = np.linalg.qr(b.T)
            b = q.T[: np.linalg.matrix_rank(b)]
        object.__setattr__(self, "basis", b)
        if self.fixed_tangent is not None:
            object.__setattr__(self, "fixed_tangent", _unit(self.fixed_tangent))

    @property
    def h0_dim(self) -> int:
        return len(self.basis)

    @property
    def free_tangent(self) -> bool:
        return self.fixed_tangent is None

    def project_h0(self, v) -> np.ndarray:
        """Orthogonal projection of a vector onto the direction space of H0."""
        v = np.asarray(v, dtype=float)
        return self.basis.T @ (self.basis @ v) if len(self.basis) else np.zeros(3)

    def h0_distance(self, x) -> float:
        d = np.asarray(x, dtype=float) - self.point
        return float(np.linalg.norm(d - self.project_h0(d)))

    def in_h1(self, v, tol: float = 1e-9) -> bool:
        if self.fixed_tangent is None:
            return True
        v = np.asarray(v, dtype=float)
        return float(np.linalg.norm(v - (v @ self.fixed_tangent) * self.fixed_tangent)) <= tol

    def scaled(self, lam):
        ft = None if self.fixed_tangent is None else self.fixed_tangent
        return EndpointConstraint(lam * self.point, self.basis, ft)

    def to_json(self):
        d = {"h0": {"point": self.point.tolist(), "basis": self.basis.tolist()}}
        d["h1"] = {"free": True} if self.fixed_tangent is None else {
            "fixed_tangent": self.fixed_tangent.tolist()}
        return d

    @classmethod
    def from_json(cls, d):
        h0 = d.get("h0", {})
        h1 = d.get("h1", {"free": True})
        return cls(h0["point"], h0.get("basis", []),
                   None if h1.get("free") else h1["fixed_tangent"])


class Component:
    """Ordered C1 chain of segments, open (with endpoint constraints) or closed.

    Open components default to pinned endpoints with free tangents.
    """

    def __init__(self, segments: Sequence[Segment], closed: bool = False,
                 endpoints: Sequence[EndpointConstraint] | None = None):
        if not segments:
            raise ValueError("component needs at least one segment")
        self.segments = list(segments)
        self.closed = bool(closed)
        self.offsets = np.concatenate([[0.0], np.cumsum([g.length for g in self.segments])])
        self.length = float(self.offsets[-1])
        if self.closed:
            self.endpoints = None
        elif endpoints is None:
            self.endpoints = (EndpointConstraint(self.segments[0].start()[0]),
                              EndpointConstraint(self.segments[-1].end()[0]))
        else:
            if len(endpoints) != 2:
                raise ValueError("open component needs two endpoint constraints")
            self.endpoints = tuple(endpoints)

    @property
    def junctions(self) -> np.ndarray:
        """Arclengths of interior junctions (and 0 for closed components)."""
        j = self.offsets[1:-1]
        return np.concatenate([[0.0], j]) if self.closed else j

    def locate(self, s):
        s = np.asarray(s, dtype=float)
        idx = np.searchsorted(self.offsets, s, side="right") - 1
        return np.clip(idx, 0, len(self.segments) - 1)

    def _wrap(self, s):
        s = np.asarray(s, dtype=float)
        if self.closed:
            return np.mod(s, self.length)
        return np.clip(s, 0.0, self.length)

    def frame(self, s):
        """Vectorized (P, T, K); junctions take the later segment's one-sided data."""
        s = np.atleast_1d(self._wrap(s))
        idx = self.locate(s)
        P = np.empty(s.shape + (3,))
        T = np.empty_like(P)
        K = np.empty_like(P)
        for g in np.unique(idx):
            sel = idx == g
            P[sel], T[sel], K[sel] = self.segments[g].frame(s[sel] - self.offsets[g])
        return P, T, K

    def torsion(self, s):
        s = np.atleast_1d(self._wrap(s))
        idx = self.locate(s)
        out = np.empty(s.shape)
        for g in np.unique(idx):
            sel = idx == g
            out[sel] = self.segments[g].torsion(s[sel] - self.offsets[g])
        return out

    def curvature_before(self, s):
        """One-sided curvature from the left (earlier segment) at arclength s."""
        s = np.atleast_1d(self._wrap(s))
        idx = self.locate(s)
        at_start = np.isclose(s, self.offsets[idx], rtol=0, atol=0) & (s > 0)
        prev = np.where(at_start, idx - 1, idx)
        if self.closed:
            at0 = s == 0
            prev = np.where(at0, len(self.segments) - 1, prev)
            at_start = at_start | at0
        out = np.empty(s.shape + (3,))
        for g in np.unique(prev):
            sel = prev == g
            loc = np.where(at_start[sel], self.segments[g].length, s[sel] - self.offsets[g])
            out[sel] = self.segments[g].frame(loc)[2]
        return out

    def scaled(self, lam):
        eps = None if self.endpoints is None else [e.scaled(lam) for e in self.endpoints]
        return Component([g.scaled(lam) for g in self.segments], self.closed, eps)


class Curve:
    """A finite union of disjoint components."""

    def __init__(self, components: Sequence[Component]):
        if not components:
            raise ValueError("curve needs at least one component")
        self.components = list(components)
        if not self.total_length() > 0:
            raise ValueError("curve must have positive length")

    def total_length(self) -> float:
        return float(sum(c.length for c in self.components))

    def component(self, i: int) -> Component:
        if not 0 <= i < len(self.components):
            raise IndexError(f"unknown component index {i}")
        return self.components[i]

    def frame(self, comp: int, s):
        return self.component(comp).frame(s)

    def scaled(self, lam: float) -> "Curve":
        return Curve([c.scaled(lam) for c in self.components])

    def to_json(self) -> dict:
        out = []
        for c in self.components:
            d = {"closed": c.closed, "segments": [g.to_json() for g in c.segments]}
            if c.endpoints is not None:
                d["endpoints"] = [e.to_json() for e in c.endpoints]
            out.append(d)
        return {"components": out}


def eval_at(curve: Curve, component: int, s: float) -> CurvePoint:
    """Evaluate one point; raises on out-of-range arclength."""
    comp = curve.component(component)
    s = float(s)
    tol = 1e-12 * max(1.0, comp.length)
    if not -tol <= s <= comp.length + tol:
        raise ValueError(f"arclength {s} outside [0, {comp.length}]")
    s = min(max(s, 0.0), comp.length)
    P, T, K = comp.frame(np.array([s]))
    seg = int(comp.locate(np.array([s]))[0])
    before = None
    if (comp.offsets[seg] == s and seg > 0) or (comp.closed and s == 0.0):
        before = comp.curvature_before(np.array([s]))[0]
    return CurvePoint(P[0], T[0], K[0], s, component, seg, before)


@dataclass
class C1Report:
    ok: bool
    violations: list = field(default_factory=list)


def validate_c1(curve: Curve, tol: float = JUNCTION_TOL) -> C1Report:
    """List junctions whose position or tangent gap exceeds ``tol``."""
    bad = []
    for ci, comp in enumerate(curve.components):
        pairs = list(zip(range(len(comp.segments) - 1), range(1, len(comp.segments))))
        if comp.closed:
            pairs.append((len(comp.segments) - 1, 0))
        for a, b in pairs:
            pa, ta, _ = comp.segments[a].end()
            pb, tb, _ = comp.segments[b].start()
            dp = float(np.linalg.norm(pa - pb))
            dt = float(np.linalg.norm(ta - tb))
            if dp > tol or dt > tol:
                bad.append({"component": ci, "segments": (a, b), "position_gap": dp,
                            "tangent_gap": dt})
    return C1Report(not bad, bad)


def total_length(curve: Curve) -> float:
    return curve.total_length()


@dataclass
class Samples:
    """Flat sample arrays over all components."""

    comp: np.ndarray
    seg: np.ndarray
    s: np.ndarray
    P: np.ndarray
    T: np.ndarray
    K: np.ndarray
    K_before: np.ndarray
    junction: np.ndarray
    spacing: np.ndarray  # local sample spacing per sample

    def __len__(self):
        return len(self.s)

    @property
    def kmax(self) -> np.ndarray:
        return np.maximum(np.linalg.norm(self.K, axis=1), np.linalg.norm(self.K_before, axis=1))


def component_grid(comp: Component, n: int) -> np.ndarray:
    """Near-uniform arclength grid containing every junction (and both ends if open)."""
    if n < 2:
        raise ValueError("need at least 2 samples per component")
    pts = []
    for g, seg in enumerate(comp.segments):
        m = max(1, int(round(n * seg.length / comp.length)))
        pts.append(comp.offsets[g] + np.linspace(0.0, seg.length, m + 1)[:-1])
    s = np.concatenate(pts)
    if not comp.closed:
        s = np.concatenate([s, [comp.length]])
    return s


def sample_arrays(curve: Curve, n: int) -> Samples:
    cs, gs, ss, Ps, Ts, Ks, Kb, J, H = [], [], [], [], [], [], [], [], []
    for ci, comp in enumerate(curve.components):
        s = component_grid(comp, n)
        P, T, K = comp.frame(s)
        kb = K.copy()
        is_j = np.isin(s, comp.offsets[1:-1])
        if comp.closed:
            is_j |= s == 0.0
        if np.any(is_j):
            kb[is_j] = comp.curvature_before(s[is_j])
        ext = np.concatenate([s, [s[0] + comp.length]]) if comp.closed else s
        d = np.diff(ext)
        h = np.empty(len(s))
        if comp.closed:
            h[:] = np.maximum(d, np.roll(d, 1))
        else:
            h[:-1] = d
            h[-1] = d[-1]
            h[1:] = np.maximum(h[1:], d)
        cs.append(np.full(len(s), ci))
        gs.append(comp.locate(s))
        ss.append(s)
        Ps.append(P)
        Ts.append(T)
        Ks.append(K)
        Kb.append(kb)
        J.append(is_j)
        H.append(h)
    return Samples(np.concatenate(cs), np.concatenate(gs), np.concatenate(ss), np.vstack(Ps),
                   np.vstack(Ts), np.vstack(Ks), np.vstack(Kb), np.concatenate(J),
                   np.concatenate(H))


def sample(curve: Curve, n: int) -> list[CurvePoint]:
    """Near-uniform samples per component, including every junction exactly."""
    S = sample_arrays(curve, n)
    out = []
    for i in range(len(S)):
        kb = S.K_before[i] if S.junction[i] else None
        out.append(CurvePoint(S.P[i], S.T[i], S.K[i], float(S.s[i]), int(S.comp[i]),
                              int(S.seg[i]), kb))
    return out


# ---------------------------------------------------------------------------
# JSON


def segment_from_json(d: dict) -> Segment:
    kind = d.get("type")
    if kind == "line":
        return Line(d["start"], d["end"])
    if kind == "arc":
        return Arc(d["center"], d["radius"], d["e1"], d["e2"], d["angle0"], d["angle1"])
    if kind == "gehring_profile":
        return GehringArc(d["tau"], d["u0"], d["u1"], d.get("origin", (0, 0, 0)),
                          d.get("e1", (1, 0, 0)), d.get("e2", (0, 0, 1)), d.get("scale", 1.0))
    if kind == "helix":
        return Helix(d["center"], d["radius"], d["rise"], d["t0"], d["t1"],
                     d.get("e1", (1, 0, 0)), d.get("e2", (0, 1, 0)), d.get("e3", (0, 0, 1)))
    if kind == "sampled":
        return Sampled(d["s"], d["points"], d["tangents"], d.get("curvatures"),
                       d.get("torsions"))
    raise ValueError(f"unknown segment type {kind!r}")


def curve_from_json(data: dict | str) -> Curve:
    if isinstance(data, str):
        data = json.loads(data)
    comps = []
    for c in data["components"]:
        segs = [segment_from_json(g) for g in c["segments"]]
        eps = c.get("endpoints")
        eps = None if eps is None else [EndpointConstraint.from_json(e) for e in eps]
        comps.append(Component(segs, c.get("closed", False), eps))
    return Curve(comps)


def circle(radius: float = 1.0, center=(0, 0, 0), e1=(1, 0, 0), e2=(0, 1, 0)) -> Curve:
    """Round circle as a closed single-arc component."""
    return Curve([Component([Arc(center, radius, e1, e2, 0.0, 2 * math.pi)], closed=True)])


def double_helix(k: float, turns: float = 2.0) -> Curve:
    """Strands (cos t, sin t, k t) / 2 and its half-turn image, t in [0, 2 pi turns]."""
    t1 = 2 * math.pi * turns
    a = Helix((0, 0, 0), 0.5, 0.5 * k, 0.0, t1, (-1, 0, 0), (0, -1, 0), (0, 0, 1))
    b = Helix((0, 0, 0), 0.5, 0.5 * k, 0.0, t1)
    return Curve([Component([a]), Component([b])])
