"""First variations of length, curvature radius and sigma-thickness.

A deformation field xi acts by x -> x + t xi(x). Along a curve its derivatives
are xi' = D xi(T) and xi'' = D^2 xi(T, T) + D xi(kappa).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.interpolate import CubicHermiteSpline

from .curves import Component, Curve, EndpointConstraint, Mapped
from .thickness import Kink, ThicknessReport

GAUSS_X, GAUSS_W = np.polynomial.legendre.leggauss(16)


def _cross_matrix(a) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    return np.array([[0.0, -a[2], a[1]], [a[2], 0.0, -a[0]], [-a[1], a[0], 0.0]])


@dataclass
class DeformationField:
    """A C2 vector field in one of three representations.

    ``affine``: xi(x) = v + A x with constant D xi = A and D^2 xi = 0.
    ``analytic``: callables on (n, 3) point arrays returning xi (n, 3),
    D xi (n, 3, 3) and D^2 xi (n, 3, 3, 3) with D^2 xi[i, j, k] = d_j d_k xi_i.
    ``sampled``: xi, xi' and xi'' tabulated along the curve per component.
    """

    kind: str
    xi: Callable | None = None
    jac: Callable | None = None
    hess: Callable | None = None
    matrix: np.ndarray | None = None
    vector: np.ndarray | None = None
    table: dict = field(default_factory=dict)

    @classmethod
    def affine(cls, translation=(0.0, 0.0, 0.0), rotation=None, scale: float = 0.0):
        v = np.asarray(translation, dtype=float)
        W = np.zeros((3, 3)) if rotation is None else np.asarray(rotation, dtype=float)
        if np.max(np.abs(W + W.T)) > 1e-12:
            raise ValueError("rotation generator must be antisymmetric")
        A = W + scale * np.eye(3)
        return cls("affine", xi=lambda P: v + P @ A.T,
                   jac=lambda P: np.broadcast_to(A, (len(P), 3, 3)),
                   hess=lambda P: np.zeros((len(P), 3, 3, 3)), matrix=A, vector=v)

    @classmethod
    def translation(cls, v):
        return cls.affine(translation=v)

    @classmethod
    def rotation(cls, axis):
        """Infinitesimal rotation xi(x) = axis x x."""
        return cls.affine(rotation=_cross_matrix(axis))

    @classmethod
    def euler(cls):
        return cls.affine(scale=1.0)

    @classmethod
    def analytic(cls, xi, jac, hess):
        return cls("analytic", xi=xi, jac=jac, hess=hess)

    @classmethod
    def sampled(cls, table: dict):
        """``table[comp] = (s, xi, dxi, ddxi)`` with strictly increasing s."""
        clean = {}
        for c, (s, x0, x1, x2) in table.items():
            s = np.asarray(s, dtype=float)
            x0, x1, x2 = (np.asarray(a, dtype=float).reshape(len(s), 3) for a in (x0, x1, x2))
            clean[int(c)] = (s, x0, x1, x2, CubicHermiteSpline(s, x0, x1, axis=0),
                             CubicHermiteSpline(s, x1, x2, axis=0))
        return cls("sampled", table=clean)

    @classmethod
    def from_json(cls, d: dict, base_dir: str = "."):
        kind = d.get("type")
        if kind == "translation":
            return cls.translation(d["v"])
        if kind == "rotation":
            return cls.rotation(d["axis"])
        if kind == "euler":
            return cls.euler()
        if kind == "sampled":
            import os

            path = d["file"] if os.path.isabs(d["file"]) else os.path.join(base_dir, d["file"])
            data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
            table = {}
            for c in np.unique(data[:, 0]).astype(int):
                r = data[data[:, 0] == c]
                table[c] = (r[:, 1], r[:, 2:5], r[:, 5:8], r[:, 8:11])
            return cls.sampled(table)
        raise ValueError(f"unknown field type {kind!r}")

    @property
    def has_spatial(self) -> bool:
        return self.kind != "sampled"

    def at_points(self, P) -> np.ndarray:
        if not self.has_spatial:
            raise ValueError("sampled field has no spatial extension")
        return self.xi(np.atleast_2d(P))

    def along(self, curve: Curve, comp: int, s):
        """(xi, xi', xi'') at arclengths ``s`` of component ``comp``."""
        s = np.atleast_1d(np.asarray(s, dtype=float))
        if self.kind == "sampled":
            if comp not in self.table:
                raise ValueError(f"field has no samples on component {comp}")
            _, _, _, _, f0, f1 = self.table[comp]
            return f0(s), f1(s), f1.derivative()(s)
        P, T, K = curve.frame(comp, s)
        J = self.jac(P)
        H = self.hess(P)
        d1 = np.einsum("nij,nj->ni", J, T)
        d2 = np.einsum("nijk,nj,nk->ni", H, T, T) + np.einsum("nij,nj->ni", J, K)
        return self.xi(P), d1, d2

    def fd_consistency(self) -> float:
        """Largest mismatch between tabulated xi' and centered differences of xi."""
        worst = 0.0
        for s, x0, x1, _, _, _ in self.table.values():
            if len(s) < 3:
                continue
            fd = (x0[2:] - x0[:-2]) / (s[2:] - s[:-2])[:, None]
            worst = max(worst, float(np.max(np.abs(fd - x1[1:-1]))))
        return worst


# ---------------------------------------------------------------------------
# compatibility


@dataclass
class Compatibility:
    ok: bool
    violations: list

    def __bool__(self):
        return self.ok


def check_compatible(curve: Curve, fld: DeformationField, tol: float = 1e-9) -> Compatibility:
    """xi(p) must be tangent to H0 and xi'(p) must lie in H1 at every endpoint."""
    bad = []
    for c, comp in enumerate(curve.components):
        if comp.closed:
            continue
        for end, (s, ep) in enumerate(zip((0.0, comp.length), comp.endpoints)):
            x0, x1, _ = fld.along(curve, c, [s])
            v = x0[0]
            off = float(np.linalg.norm(v - ep.project_h0(v)))
            if off > tol:
                bad.append(f"component {c} end {end}: xi leaves H0 by {off:.3e}")
            if not ep.in_h1(x1[0], tol):
                bad.append(f"component {c} end {end}: xi' not in H1")
    return Compatibility(not bad, bad)


# ---------------------------------------------------------------------------
# variations


def _segment_integral(g, f, tol=1e-13, max_panels=4096):
    """Composite Gauss-Legendre integral of f over [0, g.length], doubling panels."""
    prev = None
    n = 4
    while n <= max_panels:
        e = np.linspace(0.0, g.length, n + 1)
        mid, half = 0.5 * (e[1:] + e[:-1]), 0.5 * np.diff(e)
        s = (mid[:, None] + half[:, None] * GAUSS_X[None, :]).ravel()
        val = float(np.sum(f(s).reshape(n, -1) * (half[:, None] * GAUSS_W[None, :])))
        if prev is not None and abs(val - prev) <= tol * (1.0 + abs(val)):
            return val
        prev = val
        n *= 2
    raise RuntimeError("length variation quadrature did not converge")


def delta_length(curve: Curve, fld: DeformationField) -> float:
    """Integral of <xi', T> ds over every segment of every component."""
    total = 0.0
    for c, comp in enumerate(curve.components):
        for g, off in zip(comp.segments, comp.offsets[:-1]):
            def f(s, off=off, g=g, c=c):
                _, x1, _ = fld.along(curve, c, off + s)
                T = g.frame(s)[1]
                return np.sum(x1 * T, axis=-1)

            total += _segment_integral(g, f)
    return total


def delta_radius(kink: Kink, fld: DeformationField, curve: Curve | None = None) -> float:
    """dR = 2 R <T, xi'> - R^3 <kappa, xi''> with kappa = n / R.

    Affine fields need no curve; others are evaluated along ``curve``.
    """
    R, T = kink.R, np.asarray(kink.T, dtype=float)
    kap = np.asarray(kink.n, dtype=float) / R
    if fld.kind == "affine":
        A = fld.matrix
        d1, d2 = A @ T, A @ kap
    elif curve is None:
        raise ValueError("non-affine field needs the curve")
    elif fld.has_spatial:
        # the kink's one-sided frame, which at a junction differs from curve.frame
        P = curve.frame(kink.comp, [kink.s])[0]
        J, H = fld.jac(P)[0], fld.hess(P)[0]
        d1 = J @ T
        d2 = np.einsum("ijk,j,k->i", H, T, T) + J @ kap
    else:
        _, x1, x2 = fld.along(curve, kink.comp, [kink.s])
        d1, d2 = x1[0], x2[0]
    return float(2.0 * R * (T @ d1) - R ** 3 * (kap @ d2))


def _points_of(curve: Curve, where) -> np.ndarray:
    """Positions of (comp, s) pairs, evaluated one component at a time."""
    out = np.empty((len(where), 3))
    comps = np.array([c for c, _ in where], dtype=int)
    ss = np.array([s for _, s in where], dtype=float)
    for c in np.unique(comps):
        m = comps == c
        out[m] = curve.frame(int(c), ss[m])[0]
    return out


def _delta_radii(kinks, fld: DeformationField, curve: Curve) -> np.ndarray:
    """delta_radius over many kinks, batched for spatial fields."""
    if not fld.has_spatial or fld.kind == "affine":
        return np.array([delta_radius(k, fld, curve) for k in kinks])
    R = np.array([k.R for k in kinks])
    T = np.array([k.T for k in kinks], dtype=float)
    kap = np.array([k.n for k in kinks], dtype=float) / R[:, None]
    P = _points_of(curve, [(k.comp, k.s) for k in kinks])
    J, H = fld.jac(P), fld.hess(P)
    d1 = np.einsum("nij,nj->ni", J, T)
    d2 = np.einsum("nijk,nj,nk->ni", H, T, T) + np.einsum("nij,nj->ni", J, kap)
    return 2.0 * R * np.sum(T * d1, axis=1) - R ** 3 * np.sum(kap * d2, axis=1)


@dataclass
class ThicknessVariation:
    value: float
    strut_min: float
    kink_min: float
    half_factor: bool
    strut_tol: float
    kink_tol: float


def delta_thickness(curve: Curve, sigma: float, fld: DeformationField, report: ThicknessReport,
                    half_strut: bool = False, detail: bool = False):
    """Right derivative of Ts: min over struts of d|x - y| and over kinks of dR / sigma.

    ``half_strut`` multiplies the strut term by 1/2 for comparison with that
    variant of the formula. Accuracy is bounded by the report's detection
    tolerances.
    """
    if not math.isfinite(report.ts):
        return ThicknessVariation(0.0, math.inf, math.inf, half_strut,
                                  report.strut_tol, report.kink_tol) if detail else 0.0
    if not report.struts and not report.kinks:
        raise ValueError("finite thickness but no struts or kinks in the report")
    if abs(report.sigma - sigma) > 1e-15:
        raise ValueError("report was computed at a different sigma")
    smin = math.inf
    if report.struts:
        X = _points_of(curve, [st.x for st in report.struts])
        Y = _points_of(curve, [st.y for st in report.struts])
        if fld.has_spatial:
            dv = fld.at_points(X) - fld.at_points(Y)
        else:
            dv = (np.vstack([fld.along(curve, *st.x)[0] for st in report.struts])
                  - np.vstack([fld.along(curve, *st.y)[0] for st in report.struts]))
        U = (X - Y) / np.linalg.norm(X - Y, axis=1)[:, None]
        smin = float(np.min(np.sum(U * dv, axis=1))) * (0.5 if half_strut else 1.0)
    kmin = math.inf
    if report.kinks:
        kmin = float(np.min(_delta_radii(report.kinks, fld, curve))) / sigma
    val = min(smin, kmin)
    if detail:
        return ThicknessVariation(val, smin, kmin, half_strut, report.strut_tol, report.kink_tol)
    return val


# ---------------------------------------------------------------------------
# finite-difference oracle


def deform(curve: Curve, fld: DeformationField, t: float) -> Curve:
    """The image curve under x -> x + t xi(x), segment by segment."""
    if not fld.has_spatial:
        raise ValueError("deformation needs a spatial field")
    comps = []
    for comp in curve.components:
        segs = [Mapped(g, t, fld.xi, fld.jac, fld.hess) for g in comp.segments]
        eps = None
        if not comp.closed:
            eps = []
            for ep in comp.endpoints:
                J = np.eye(3) + t * fld.jac(ep.point[None, :])[0]
                p = ep.point + t * fld.xi(ep.point[None, :])[0]
                basis = (J @ ep.basis.T).T if ep.h0_dim else np.zeros((0, 3))
                ft = None if ep.fixed_tangent is None else J @ ep.fixed_tangent
                eps.append(EndpointConstraint(p, basis, ft))
        comps.append(Component(segs, comp.closed, eps))
    return Curve(comps)


def random_analytic_field(rng: np.random.Generator, modes: int = 3, scale: float = 1.0,
                          freq: float = 1.0) -> DeformationField:
    """xi_i(x) = sum_m a_im sin(<b_m, x> + c_m) plus a random linear part."""
    a = rng.normal(size=(3, modes)) * scale
    b = rng.normal(size=(modes, 3)) * freq
    c = rng.uniform(0, 2 * np.pi, size=modes)
    L = rng.normal(size=(3, 3)) * scale

    def xi(P):
        return np.sin(P @ b.T + c) @ a.T + P @ L.T

    def jac(P):
        return np.einsum("im,nm,mj->nij", a, np.cos(P @ b.T + c), b) + L

    def hess(P):
        return -np.einsum("im,nm,mj,mk->nijk", a, np.sin(P @ b.T + c), b, b)

    return DeformationField.analytic(xi, jac, hess)
