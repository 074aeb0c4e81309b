"""Tight (tau, sigma)-clasps in four regimes: fully kinked, transitional, generic, Gehring.

Conventions: the symmetry center is the origin. Component 1 lies in the
xz-plane with its tip on the negative z-axis and rays leaving upward at
angle arcsin(tau) above the horizontal. Component 2 is its image under
the rotary reflection (x, y, z) -> (-y, x, -z).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .curves import (Arc, Component, Curve, EndpointConstraint, GehringArc, Line, Segment,
                     gehring_arclength, gehring_kappa, gehring_x, gehring_z)

TAU_ONE = 1.0 - 1e-9
EX = np.array([1.0, 0.0, 0.0])
EZ = np.array([0.0, 0.0, 1.0])
ROTREF = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, -1.0]])
MIRROR_X = np.diag([-1.0, 1.0, 1.0])


class Regime(str, Enum):
    FULLY_KINKED = "fully_kinked"
    TRANSITIONAL = "transitional"
    GENERIC = "generic"
    GEHRING = "gehring"


def gehring_boundary(tau: float) -> float:
    """sigma at the Gehring/generic boundary, sqrt(1 - tau^2)."""
    return math.sqrt((1.0 - tau) * (1.0 + tau))


def transitional_boundary(tau: float) -> float:
    """sigma at the generic/transitional boundary, (sqrt(4+t^2)-2)/(2-sqrt(4-t^2)).

    Evaluated in the cancellation-free form (2 + sqrt(4-t^2)) / (2 + sqrt(4+t^2)).
    """
    return (2.0 + math.sqrt(4.0 - tau * tau)) / (2.0 + math.sqrt(4.0 + tau * tau))


def _check(tau, sigma):
    if not (0.0 < tau <= 1.0) or sigma < 0:
        raise ValueError(f"invalid clasp parameters tau={tau}, sigma={sigma}")


def classify_regime(tau: float, sigma: float) -> Regime:
    _check(tau, sigma)
    tau = min(tau, TAU_ONE)
    if sigma >= 1.0:
        return Regime.FULLY_KINKED
    if sigma >= transitional_boundary(tau):
        return Regime.TRANSITIONAL
    if sigma > gehring_boundary(tau):
        return Regime.GENERIC
    return Regime.GEHRING


def gehring_profile(tau: float, u):
    """(x, z, kappa) of the Gehring arc at parameter u, |u| <= tau <= 1 - 1e-9."""
    if tau > TAU_ONE + 1e-15:
        raise ValueError("tau must be at most 1 - 1e-9")
    u = np.asarray(u, dtype=float)
    if np.any(np.abs(u) > tau + 1e-15):
        raise ValueError("|u| must not exceed tau")
    return gehring_x(tau, u), gehring_z(tau, u), gehring_kappa(tau, u)


def gehring_kappa_angles(tau: float, u) -> np.ndarray:
    """Curvature in the angle form cos b cos^3 g / (cos^2 b + sin g cos^2 a).

    sin a = |u|, sin b = tau - |u|, sin g = sin a sin b.
    """
    sa = np.abs(np.asarray(u, dtype=float))
    sb = tau - sa
    sg = sa * sb
    ca2 = 1.0 - sa * sa
    cb2 = ((1.0 - tau) + sa) * (1.0 + sb)
    cg = np.sqrt(1.0 - sg * sg)
    return np.sqrt(cb2) * cg ** 3 / (cb2 + sg * ca2)


def sigma_of_alpha(tau: float, alpha: float) -> float:
    sa = math.sin(alpha)
    sb = tau - sa
    cb = math.sqrt(((1.0 - tau) + sa) * (1.0 + sb))
    cg = math.sqrt(1.0 - (sa * sb) ** 2)
    ca = math.cos(alpha)
    return (1.0 + ca) * cb / (cg + ca)


@dataclass(frozen=True)
class GenericParams:
    alpha: float
    beta: float
    gamma: float
    a: float
    b: float


def _generic_closed_forms(tau, sigma, alpha) -> GenericParams:
    sa, ca = math.sin(alpha), math.cos(alpha)
    sb = tau - sa
    cb = math.sqrt(((1.0 - tau) + sa) * (1.0 + sb))
    sg = sa * sb
    cg = math.sqrt(1.0 - sg * sg)
    b = (sb - ca * sb / cg) / cb
    a = (sa * cb / cg - sigma * sa) / ca
    return GenericParams(alpha, math.asin(sb), math.asin(sg), a, b)


def solve_generic(tau: float, sigma: float) -> GenericParams:
    """Invert sigma(alpha) by bisection on [0, arcsin(tau/2)] and fill in the rest."""
    tau = min(tau, TAU_ONE)
    lo_s, hi_s = gehring_boundary(tau), transitional_boundary(tau)
    if not lo_s < sigma < hi_s:
        raise ValueError(f"sigma={sigma} outside the generic interval ({lo_s}, {hi_s})")
    lo, hi = 0.0, math.asin(tau / 2)
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if sigma_of_alpha(tau, mid) < sigma:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-17:
            break
    alpha = 0.5 * (lo + hi)
    return _generic_closed_forms(tau, sigma, alpha)


def claspsystem_residuals(tau: float, sigma: float, p: GenericParams) -> np.ndarray:
    """Residuals of the five defining equations of the generic clasp."""
    sa, ca = math.sin(p.alpha), math.cos(p.alpha)
    sb, cb = math.sin(p.beta), math.cos(p.beta)
    sg, cg = math.sin(p.gamma), math.cos(p.gamma)
    return np.array([
        sa + sb - tau,
        sg - sa * sb,
        p.b / sb - (p.a * sa + sigma * (1 - ca)) if sb != 0 else p.b,
        p.b * cb - (sb - ca * sb / cg),
        p.a * ca - (sa * cb / cg - sigma * sa),
    ])


def perp_plane_critical(rho: float = 1.0, *, u1=None, u2=None, x1=None, x2=None):
    """Complete (x1, x2, u1, u2) and dz for a critical pair in perpendicular planes.

    Exactly two of the four values must be given. Returns a dict.
    """
    given = {k: v for k, v in dict(u1=u1, u2=u2, x1=x1, x2=x2).items() if v is not None}
    if len(given) != 2:
        raise ValueError("give exactly two of u1, u2, x1, x2")

    def x_from_u(ui, uj):
        return rho * ui * math.sqrt((1 - uj * uj) / (1 - ui * ui * uj * uj))

    def u_from_x(xi, xj):
        d = rho * rho - xj * xj
        if d <= 0 or xi * xi > d:
            raise ValueError("inconsistent inputs")
        return xi / math.sqrt(d)

    if u1 is not None and u2 is not None:
        x1, x2 = x_from_u(u1, u2), x_from_u(u2, u1)
    elif x1 is not None and x2 is not None:
        u1, u2 = u_from_x(x1, x2), u_from_x(x2, x1)
    elif u1 is not None and x1 is not None:
        # x1^2 (1 - u1^2 u2^2) = rho^2 u1^2 (1 - u2^2)
        q = (rho * rho * u1 * u1 - x1 * x1) / (rho * rho * u1 * u1 - x1 * x1 * u1 * u1)
        u2 = math.sqrt(max(q, 0.0))
        x2 = x_from_u(u2, u1)
    elif u2 is not None and x2 is not None:
        q = (rho * rho * u2 * u2 - x2 * x2) / (rho * rho * u2 * u2 - x2 * x2 * u2 * u2)
        u1 = math.sqrt(max(q, 0.0))
        x1 = x_from_u(u1, u2)
    elif u1 is not None and x2 is not None:
        # u1^2 = x1^2 / (rho^2 - x2^2) and x2 from (u2, u1)
        x1 = u1 * math.sqrt(rho * rho - x2 * x2)
        u2 = u_from_x(x2, x1)
    else:
        x2 = u2 * math.sqrt(rho * rho - x1 * x1)
        u1 = u_from_x(x1, x2)
    for v in (u1, u2):
        if not 0 <= v <= 1:
            raise ValueError("inconsistent inputs")
    if u1 > 0:
        dz = (x1 / u1) * math.sqrt(1 - u1 * u1)
    elif u2 > 0:
        dz = (x2 / u2) * math.sqrt(1 - u2 * u2)
    else:
        dz = rho
    return {"x1": x1, "x2": x2, "u1": u1, "u2": u2, "dz": dz}


# ---------------------------------------------------------------------------
# construction


def _xz(x, z):
    return np.array([x, 0.0, z])


def _arc_xz(center_z, radius, th0, th1):
    """Left-turning arc in the xz-plane with tangent angle from th0 to th1."""
    return Arc(_xz(0.0, center_z) if np.isscalar(center_z) else center_z, radius, EX, EZ,
               th0 - math.pi / 2, th1 - math.pi / 2)


def _transform(seg: Segment, A: np.ndarray) -> Segment:
    if isinstance(seg, Line):
        return Line(A @ seg.p0, A @ seg.p1)
    if isinstance(seg, Arc):
        return Arc(A @ seg.center, seg.radius, A @ seg.e1, A @ seg.e2, seg.angle0, seg.angle1)
    if isinstance(seg, GehringArc):
        return GehringArc(seg.tau, seg.u0, seg.u1, A @ seg.origin, A @ seg.e1, A @ seg.e2,
                          seg.scale)
    raise TypeError(type(seg))


def _mirror_reverse(seg: Segment) -> Segment:
    """Reflect x -> -x and reverse the direction of travel."""
    M = MIRROR_X
    if isinstance(seg, Line):
        return Line(M @ seg.p1, M @ seg.p0)
    if isinstance(seg, Arc):
        return Arc(M @ seg.center, seg.radius, M @ seg.e1, M @ seg.e2, seg.angle1, seg.angle0)
    if isinstance(seg, GehringArc):
        return GehringArc(seg.tau, -seg.u1, -seg.u0, seg.origin, seg.e1, seg.e2, seg.scale)
    raise TypeError(type(seg))


@dataclass
class ClaspSolution:
    tau: float
    sigma: float
    regime: Regime
    pieces: list  # curved half-arc pieces from the tip, in the xz-plane
    kinds: list  # names of the pieces
    ray_start: np.ndarray
    ray_dir: np.ndarray
    tip_z: float
    kink_angle: float  # half turning angle of the tip kink (0 if none)
    params: GenericParams | None = None
    regularized: bool = False
    families: list = field(default_factory=list)

    @property
    def curved_length(self) -> float:
        return float(sum(p.length for p in self.pieces))

    @property
    def reference_direction(self) -> np.ndarray:
        """Depth direction of the truncation planes (vertical in the tau -> 1 limit)."""
        return EZ.copy() if self.regularized else self.ray_dir.copy()

    def half_arc(self, ray_length: float = 1.0) -> Curve:
        segs = list(self.pieces)
        if ray_length > 0:
            segs.append(Line(self.ray_start, self.ray_start + ray_length * self.ray_dir))
        return Curve([Component(segs)])

    def curve(self, ray_length: float = 1.5) -> Curve:
        """Both full components, truncated at ``ray_length`` past the ray starts.

        Endpoint constraints are planes orthogonal to the rays with free tangents.
        """
        right = list(self.pieces)
        end = self.ray_start + ray_length * self.ray_dir
        right.append(Line(self.ray_start, end))
        left = [_mirror_reverse(g) for g in reversed(right)]
        c1 = left + right

        def plane(p, d):
            u = np.cross(d, [0.0, 1.0, 0.0] if abs(d[1]) < 0.9 else [1.0, 0.0, 0.0])
            u /= np.linalg.norm(u)
            return EndpointConstraint(p, [u, np.cross(d, u)])

        def comp(segs):
            p0, t0, _ = segs[0].start()
            p1, t1, _ = segs[-1].end()
            return Component(segs, False, [plane(p0, t0), plane(p1, t1)])

        return Curve([comp(c1), comp([_transform(g, ROTREF) for g in c1])])

    def tip_positions(self):
        p1 = _xz(0.0, self.tip_z)
        return p1, ROTREF @ p1


def build_clasp(tau: float, sigma: float) -> ClaspSolution:
    """Assemble the clasp half-arc for the regime determined by (tau, sigma)."""
    _check(tau, sigma)
    regularized = tau >= TAU_ONE - 1e-15
    tau = min(tau, TAU_ONE)
    regime = classify_regime(tau, sigma)
    ct = gehring_boundary(tau)
    th_end = math.asin(tau)
    ray_dir = np.array([ct, 0.0, tau])
    params = None
    fams = []
    if regime is Regime.FULLY_KINKED:
        cz = sigma - 0.5
        kink = _arc_xz(cz, sigma, 0.0, th_end)
        pieces, kinds = [kink], ["kink"]
        tip_z = -0.5
        kink_angle = th_end
        fams.append({"kind": "tip_atom", "mass": 2 * tau})
    elif regime is Regime.TRANSITIONAL:
        ak = math.asin(tau / 2)
        r4 = math.sqrt(4.0 - tau * tau)
        z0 = (2 * sigma - 2) / r4 - sigma
        shift = -z0 / 2
        kink = _arc_xz(z0 + sigma + shift, sigma, 0.0, ak)
        p_end = kink.end()[0]
        seg_len = tau * (1 - sigma) / r4
        pieces, kinds = [kink], ["kink"]
        if seg_len > 0:
            q = p_end + seg_len * np.array([math.cos(ak), 0.0, math.sin(ak)])
            pieces.append(Line(p_end, q))
            kinds.append("segment")
        pieces.append(_arc_xz(shift, 1.0, ak, th_end))
        kinds.append("shoulder")
        tip_z = z0 + shift
        kink_angle = ak
        fams.append({"kind": "shoulder_to_tip", "theta": (ak, th_end)})
    elif regime is Regime.GENERIC:
        params = solve_generic(tau, sigma)
        al, be = params.alpha, params.beta
        sa, sb = math.sin(al), math.sin(be)
        ga = _xz(float(gehring_x(tau, sa)), float(gehring_z(tau, sa)))
        gb = _xz(float(gehring_x(tau, sb)), float(gehring_z(tau, sb)))
        s1 = ga - params.a * np.array([math.cos(al), 0.0, sa])
        kc = s1 + sigma * np.array([-sa, 0.0, math.cos(al)])
        tip_z = float(kc[2] - sigma)
        kc[0] = 0.0
        s4 = gb + params.b * np.array([math.cos(be), 0.0, sb])
        # within rounding of the Gehring boundary the kink and shoulder are empty
        pieces, kinds = [], []
        if al - math.pi / 2 != -math.pi / 2:
            pieces.append(Arc(kc, sigma, EX, EZ, -math.pi / 2, al - math.pi / 2))
            kinds.append("kink")
        if params.a > 0 and pieces:
            pieces.append(Line(pieces[0].end()[0], ga))
            kinds.append("segment_a")
        pieces.append(GehringArc(tau, sa, sb))
        kinds.append("gehring")
        if params.b > 0:
            pieces.append(Line(gb, s4))
            kinds.append("segment_b")
        if be != th_end:
            pieces.append(Arc(_xz(0.0, -tip_z), 1.0, EX, EZ, be - math.pi / 2,
                              th_end - math.pi / 2))
            kinds.append("shoulder")
        kink_angle = al
        fams += [{"kind": "gehring_conjugate", "u": (sa, sb)},
                 {"kind": "shoulder_to_tip", "theta": (be, th_end)}]
    else:
        pieces, kinds = [GehringArc(tau, 0.0, tau)], ["gehring"]
        tip_z = float(gehring_z(tau, 0.0))
        kink_angle = 0.0
        fams.append({"kind": "gehring_conjugate", "u": (0.0, tau)})
    ray_start = pieces[-1].end()[0]
    return ClaspSolution(tau, sigma, regime, pieces, kinds, ray_start, ray_dir, tip_z,
                         kink_angle, params, regularized, fams)


def excess_length(sol: ClaspSolution, depths=(10.0, 20.0), check: float = 1e-10) -> float:
    """Length truncated at depth D along the reference direction, minus 4D.

    Evaluated at two depths which must agree to ``check``.
    """
    d = sol.reference_direction
    start_depth = float(sol.ray_start @ d)
    vals = []
    for D in depths:
        if D <= start_depth:
            raise ValueError("truncation depth inside the curved part")
        total = 4 * (sol.curved_length + (D - start_depth))
        vals.append(total - 4 * D)
    if abs(vals[0] - vals[1]) > check:
        raise ValueError("excess length depends on truncation depth")
    return vals[0]


def excess_length_closed_form_kinked(tau: float, sigma: float) -> float:
    """4 (sigma arcsin tau - tau sigma + tau / 2) for the fully kinked clasp."""
    return 4 * (sigma * math.asin(tau) - tau * sigma + tau / 2)


def tip_gap(sol: ClaspSolution) -> float:
    p1, p2 = sol.tip_positions()
    return float(np.linalg.norm(p1 - p2))


def conjugate_strut_lengths(tau: float, u) -> np.ndarray:
    """|(x(u), 0, z(u)) - (0, x(u*), -z(u*))| for u* = tau - u."""
    u = np.asarray(u, dtype=float)
    us = tau - u
    d = np.stack([gehring_x(tau, u), -gehring_x(tau, us), gehring_z(tau, u) + gehring_z(tau, us)])
    return np.linalg.norm(d, axis=0)


def transitional_rho_candidate(tau: float, sigma: float) -> float:
    """Length of the candidate segment-to-segment critical chord in the transitional clasp."""
    return (2 + sigma * (2 - math.sqrt(4 - tau * tau))) / math.sqrt(tau * tau + 4)


@dataclass
class ClaspThickness:
    ts: float
    modified: bool
    min_distance: float
    max_curvature: float
    report: object = None


def clasp_thickness(sol: ClaspSolution, samples: int = 4096, ray_length: float = 1.0):
    """Thickness check of the full clasp.

    For sigma >= 1/2 this is compute_thickness; below 1/2 the separate checks
    (inter-component distance, curvature <= 1/sigma) replace Ts, which is
    reported as their combination min(distance, 1 / (sigma kappa_max)).
    """
    from .thickness import compute_thickness, curvature_bound, inter_component_distance

    curve = sol.curve(ray_length)
    if sol.sigma >= 0.5:
        rep = compute_thickness(curve, sol.sigma, samples)
        return ClaspThickness(rep.ts, False, math.nan, 1.0 / rep.min_rho, rep)
    dist = inter_component_distance(curve, 0, 1, samples)
    kmax, _ = curvature_bound(curve)
    ts = min(dist, math.inf if kmax == 0 else 1.0 / (sol.sigma * kmax))
    return ClaspThickness(ts, True, dist, kmax)


def piece_lengths(sol: ClaspSolution) -> dict:
    out = {}
    for k, p in zip(sol.kinds, sol.pieces):
        out[k] = out.get(k, 0.0) + p.length
    return out


def gehring_piece_length(tau: float, u0: float, u1: float) -> float:
    return gehring_arclength(tau, u0, u1)


def kinked_clasp_tension(sol: ClaspSolution, ray_length: float = 1.0):
    """Exact certificate data for the fully kinked clasp.

    Each tip carries one strut atom of mass 2 tau and the delta-arc tension
    phi = 1 - cos(theta - d / sigma), d the distance from the tip, on its kink.
    """
    from .balance import FunctionTension, StrutAtom, StrutMeasure

    if sol.regime is not Regime.FULLY_KINKED:
        raise ValueError("not a fully kinked clasp")
    curve = sol.curve(ray_length)
    th, sg = sol.kink_angle, sol.sigma
    tips = [0.5 * comp.length for comp in curve.components]

    def fn(c, s):
        d = s - tips[c]
        arg = th - np.abs(d) / sg
        on = arg > 0
        phi = np.where(on, 1.0 - np.cos(arg), 0.0)
        dphi = np.where(on, -np.sign(d) * np.sin(arg) / sg, 0.0)
        return phi, dphi

    mu = StrutMeasure([StrutAtom((0, tips[0]), (1, tips[1]), sol.tau)], [])
    return curve, mu, FunctionTension(fn)


def clasp_certificate(sol: ClaspSolution, samples: int = 4096, grid: int = 512,
                      ray_length: float = 1.0):
    """Balance certificate: exact for the fully kinked clasp, synthesized otherwise."""
    from .balance import balance_residual, solve_balance

    if sol.regime is Regime.FULLY_KINKED:
        curve, mu, phi = kinked_clasp_tension(sol, ray_length)
        return balance_residual(curve, mu, phi, sol.sigma, grid)
    th = clasp_thickness(sol, samples, ray_length)
    if th.report is None:
        raise ValueError("balance synthesis needs sigma >= 1/2")
    return solve_balance(sol.curve(ray_length), sol.sigma, th.report, grid)
