"""Independent reference computations used to derive and freeze expected values.

Nothing here imports the package's numerical kernels except curve evaluation.
"""

from __future__ import annotations

import math

import mpmath as mp
import numpy as np
from scipy.optimize import minimize

mp.mp.dps = 40


# ---------------------------------------------------------------------------
# Gehring clasp in extended precision


def gehring_kappa(tau, u):
    w = tau - abs(u)
    return mp.sqrt((1 - u * u * w * w) ** 3 * (1 - w * w)) / (1 - w * w + w * abs(u) * (1 - u * u))


def gehring_x(tau, u):
    w = tau - abs(u)
    return u * mp.sqrt(1 - w * w) / mp.sqrt(1 - u * u * w * w)


def _theta_integral(f, tau, u0, u1):
    a, b = mp.asin(u0), mp.asin(u1)
    return mp.quad(lambda t: f(t) / gehring_kappa(tau, mp.sin(t)), [a, (a + b) / 2, b])


def gehring_length(tau, u0, u1):
    return _theta_integral(lambda t: 1, tau, u0, u1)


def gehring_z(tau, u):
    d = _theta_integral(mp.sin, tau, 0, tau)
    z0 = (-mp.sqrt(1 - tau * tau) - d) / 2
    return z0 + _theta_integral(mp.sin, tau, 0, u) if u > 0 else z0


def gehring_excess(tau, vertical=False):
    """Excess of the Gehring clasp: 4 (curved length - depth of the ray start)."""
    L = gehring_length(tau, 0, tau)
    zt = gehring_z(tau, tau)
    if vertical:
        return 4 * (L - zt)
    return 4 * (L - tau * mp.sqrt(1 - tau * tau) - tau * zt)


def gehring_tip_gap(tau):
    return -2 * gehring_z(tau, 0)


def generic_clasp(tau, sigma, vertical=False):
    """(alpha, excess, tip gap) of the generic clasp from the printed system."""
    tau, sigma = mp.mpf(tau), mp.mpf(sigma)

    def sig(al):
        sa = mp.sin(al)
        sb = tau - sa
        be, ga = mp.asin(sb), mp.asin(sa * sb)
        return (1 + mp.cos(al)) * mp.cos(be) / (mp.cos(ga) + mp.cos(al))

    al = mp.findroot(lambda a: sig(a) - sigma, (mp.mpf(0), mp.asin(tau / 2)), solver="anderson")
    sa = mp.sin(al)
    sb = tau - sa
    be, ga = mp.asin(sb), mp.asin(sa * sb)
    b = (sb - mp.cos(al) * sb / mp.cos(ga)) / mp.cos(be)
    a = (sa * mp.cos(be) / mp.cos(ga) - sigma * sa) / mp.cos(al)
    ga_pt = (gehring_x(tau, sa), gehring_z(tau, sa))
    gb_pt = (gehring_x(tau, sb), gehring_z(tau, sb))
    s1 = (ga_pt[0] - a * mp.cos(al), ga_pt[1] - a * sa)
    tip = s1[1] + sigma * mp.cos(al) - sigma
    s4 = (gb_pt[0] + b * mp.cos(be), gb_pt[1] + b * sb)
    c4 = (s4[0] - sb, s4[1] + mp.cos(be))
    th = mp.asin(tau)
    pend = (c4[0] + tau, c4[1] - mp.sqrt(1 - tau * tau))
    L = sigma * al + a + gehring_length(tau, sa, sb) + b + (th - be)
    d = (0, 1) if vertical else (mp.sqrt(1 - tau * tau), tau)
    return al, 4 * (L - pend[0] * d[0] - pend[1] * d[1]), -2 * tip


def kinked_excess(tau, sigma):
    """Fully kinked clasp: tip arc of radius sigma and angle arcsin(tau), then the ray."""
    tau, sigma = mp.mpf(tau), mp.mpf(sigma)
    th = mp.asin(tau)
    cz = sigma - mp.mpf(1) / 2
    end = (sigma * mp.sin(th), cz - sigma * mp.cos(th))
    d = (mp.sqrt(1 - tau * tau), tau)
    return 4 * (sigma * th - (end[0] * d[0] + end[1] * d[1]))


# ---------------------------------------------------------------------------
# reach by brute force over r*


def r_star(curve, x, y):
    """|x - y| / (2 cos psi*), psi* taken at x with halfspace cones at open ends."""
    if x[0] == y[0] and abs(x[1] - y[1]) < 1e-14:
        return math.inf
    Px, Tx, _ = curve.frame(x[0], [x[1]])
    Py = curve.frame(y[0], [y[1]])[0]
    d = Py[0] - Px[0]
    r = float(np.linalg.norm(d))
    if r == 0:
        return math.inf
    cs = abs(float(Tx[0] @ d)) / r
    comp = curve.components[x[0]]
    if not comp.closed:
        if x[1] <= 1e-12 and float(Tx[0] @ d) <= 0:
            cs = 0.0
        if x[1] >= comp.length - 1e-12 and float(Tx[0] @ d) >= 0:
            cs = 0.0
    c = math.sqrt(max(0.0, 1 - cs * cs))
    return math.inf if c == 0 else r / (2 * c)


def _r_star_grid(curve, ci, si, cj, sj):
    Px, Tx, _ = curve.frame(ci, si)
    Py = curve.frame(cj, sj)[0]
    d = Py[None, :, :] - Px[:, None, :]
    r = np.linalg.norm(d, axis=-1)
    dot = np.einsum("ik,ijk->ij", Tx, d)
    with np.errstate(invalid="ignore", divide="ignore"):
        cs = np.abs(dot) / r
        comp = curve.components[ci]
        if not comp.closed:
            cs[(si <= 1e-12)[:, None] & (dot <= 0)] = 0.0
            cs[(si >= comp.length - 1e-12)[:, None] & (dot >= 0)] = 0.0
        c = np.sqrt(np.maximum(0.0, 1 - cs * cs))
        out = np.where((r > 0) & (c > 0), r / (2 * c), np.inf)
    return out


def brute_force_reach(curve, n: int, starts: int = 25) -> float:
    """All-pairs r* on n samples per component, then bounded Nelder-Mead from the best pairs.

    The diagonal limit of r* is the curvature radius, which is added
    separately; searches that slide onto the diagonal are discarded.
    """
    best = math.inf
    for comp in curve.components:
        for g in comp.segments:
            k = g.max_curvature()
            if k > 0:
                best = min(best, 1.0 / k)
    grids = [np.linspace(0.0, c.length, n) for c in curve.components]
    cands = []
    for ci in range(len(grids)):
        for cj in range(len(grids)):
            V = _r_star_grid(curve, ci, grids[ci], cj, grids[cj])
            if ci == cj:
                sep = np.abs(grids[ci][:, None] - grids[cj][None, :])
                V[sep < 3 * (grids[ci][1] - grids[ci][0])] = np.inf
            for flat in np.argsort(V, axis=None)[:starts]:
                i, j = divmod(int(flat), n)
                cands.append((float(V[i, j]), ci, grids[ci][i], cj, grids[cj][j]))
    cands.sort()
    for v0, ci, si, cj, sj in cands[:starts]:
        Li = curve.components[ci].length
        Lj = curve.components[cj].length
        f = lambda v: r_star(curve, (ci, float(np.clip(v[0], 0, Li))), (cj, float(np.clip(v[1], 0, Lj))))
        res = minimize(f, [si, sj], method="Nelder-Mead", bounds=[(0, Li), (0, Lj)],
                       options={"xatol": 1e-10, "fatol": 1e-15, "maxiter": 4000})
        if ci == cj and abs(res.x[0] - res.x[1]) < 0.05:
            continue
        best = min(best, float(res.fun))
    return best


def random_arc_curve(rng: np.random.Generator, pieces: int = 4):
    """Open C1 chain of random arcs and lines in space."""
    from ropecrit.curves import Arc, Component, Curve, Line

    p = np.zeros(3)
    T = np.array([1.0, 0.0, 0.0])
    segs = []
    for k in range(pieces):
        if k % 2 == 1 and rng.random() < 0.5:
            L = rng.uniform(0.3, 1.0)
            segs.append(Line(p, p + L * T))
            p = p + L * T
            continue
        # normal direction: random unit vector orthogonal to T
        v = rng.normal(size=3)
        v -= (v @ T) * T
        n = v / np.linalg.norm(v)
        R = rng.uniform(0.6, 1.5)
        ang = rng.uniform(0.6, 1.8)
        center = p + R * n
        e1 = -n
        e2 = T
        arc = Arc(center, R, e1, e2, 0.0, ang)
        segs.append(arc)
        p, T, _ = arc.end()
    return Curve([Component(segs)])


def polyline_length(points: np.ndarray) -> float:
    return float(np.sum(np.linalg.norm(np.diff(points, axis=0), axis=1)))


def double_helix_gap(k: float, grid: int = 200001) -> float:
    """Minimum distance between the strands (cos t, sin t, k t)/2 and its half-turn image.

    With d = t1 - t2 the squared distance is (2 + 2 cos d + k^2 d^2) / 4; it
    is minimized by a dense scan in d followed by a bounded scalar search.
    """
    from scipy.optimize import minimize_scalar

    g = lambda d: 0.25 * (2 + 2 * np.cos(d) + k * k * d * d)
    d = np.linspace(0, 2 * math.pi, grid)
    i = int(np.argmin(g(d)))
    lo, hi = d[max(i - 1, 0)], d[min(i + 1, grid - 1)]
    if hi - lo <= 0:
        return math.sqrt(g(d[i]))
    r = minimize_scalar(g, bounds=(lo, hi), method="bounded", options={"xatol": 1e-14})
    return math.sqrt(min(float(r.fun), float(g(d[i]))))
