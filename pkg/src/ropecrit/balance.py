"""Strut force, kink tension, virtual tangent and the balance equation Omega + V' = 0.

Measures are discretized on a finite-volume grid: nodes are the segment
junctions plus a uniform subdivision of every segment, and cell boundaries are
the midpoints of the node intervals. The residual of a cell is the strut force
it carries plus the jump of V across it; integrating the measure equation over
cells keeps atoms exact and needs V only at interior points of segments.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.optimize import nnls

from .curves import Curve, component_grid
from .thickness import ThicknessReport, curvature_bound

GAUSS_X, GAUSS_W = np.polynomial.legendre.leggauss(8)
KINK_REL_TOL = 1e-6
STRUT_SNAP = 1e-6  # strut minimizers are located to about sqrt(eps)
FAMILY_PANELS = 256  # Gauss panels per strut family when no grid is given


# ---------------------------------------------------------------------------
# measures


@dataclass(frozen=True)
class StrutAtom:
    """Weight ``w`` on the ordered pair (x, y) and the same weight on (y, x)."""

    x: tuple[int, float]
    y: tuple[int, float]
    weight: float


@dataclass
class StrutFamily:
    """Continuous family s -> (x(s), y(partner(s))) with density per x-arclength.

    The measure sits on both orientations, so Omega receives 2(x - y) rho ds at
    x(s) and 2(y - x) rho ds at the partner.
    """

    x_comp: int
    y_comp: int
    s0: float
    s1: float
    partner: Callable
    density: Callable
    breaks: np.ndarray = field(default_factory=lambda: np.zeros(0))


@dataclass
class StrutMeasure:
    atoms: list = field(default_factory=list)
    families: list = field(default_factory=list)

    def total_mass(self) -> float:
        """Mass over both orientations."""
        m = 2.0 * sum(a.weight for a in self.atoms)
        for f in self.families:
            s = np.linspace(f.s0, f.s1, 2001)
            m += 2.0 * float(np.trapezoid(f.density(s), s))
        return m

    def min_weight(self) -> float:
        vals = [a.weight for a in self.atoms]
        for f in self.families:
            vals.append(float(np.min(f.density(np.linspace(f.s0, f.s1, 2001)))))
        return min(vals) if vals else 0.0


class KinkTension:
    """phi >= 0 with one-sided derivative; subclasses implement ``values``."""

    def values(self, comp: int, s) -> tuple[np.ndarray, np.ndarray]:
        raise NotImplementedError

    @staticmethod
    def zero() -> "KinkTension":
        return FunctionTension(lambda c, s: (np.zeros_like(s), np.zeros_like(s)))


class FunctionTension(KinkTension):
    """Tension from a callable ``fn(comp, s) -> (phi, dphi)``."""

    def __init__(self, fn):
        self.fn = fn

    def values(self, comp, s):
        s = np.asarray(s, dtype=float)
        phi, dphi = self.fn(comp, s)
        return np.broadcast_to(phi, s.shape).astype(float), np.broadcast_to(dphi, s.shape).astype(float)


class HermiteTension(KinkTension):
    """Piecewise cubic Hermite phi on node intervals; zero off the listed intervals."""

    def __init__(self, pieces: dict):
        # pieces[comp] = (nodes, interval_ids, phi_a, phi_b, d_a, d_b)
        self.pieces = pieces

    def values(self, comp, s):
        s = np.asarray(s, dtype=float)
        phi = np.zeros(s.shape)
        dphi = np.zeros(s.shape)
        if comp not in self.pieces:
            return phi, dphi
        nodes, ids, pa, pb, da, db = self.pieces[comp]
        k = np.clip(np.searchsorted(nodes, s, side="right") - 1, 0, len(nodes) - 2)
        pos = np.searchsorted(ids, k)
        pos = np.minimum(pos, len(ids) - 1)
        hit = ids[pos] == k
        if not np.any(hit):
            return phi, dphi
        kk, pp = k[hit], pos[hit]
        h = nodes[kk + 1] - nodes[kk]
        x = (s[hit] - nodes[kk]) / h
        phi[hit] = ((2 * x ** 3 - 3 * x ** 2 + 1) * pa[pp] + (x ** 3 - 2 * x ** 2 + x) * h * da[pp]
                    + (-2 * x ** 3 + 3 * x ** 2) * pb[pp] + (x ** 3 - x ** 2) * h * db[pp])
        dphi[hit] = ((6 * x ** 2 - 6 * x) * (pa[pp] - pb[pp]) / h + (3 * x ** 2 - 4 * x + 1) * da[pp]
                     + (3 * x ** 2 - 2 * x) * db[pp])
        return phi, dphi

    def samples(self):
        out = []
        for c, (nodes, ids, pa, pb, _, _) in sorted(self.pieces.items()):
            for k, a, b in zip(ids, pa, pb):
                out.append({"comp": int(c), "s": float(nodes[k]), "phi": float(a)})
                out.append({"comp": int(c), "s": float(nodes[k + 1]), "phi": float(b)})
        return out


# ---------------------------------------------------------------------------
# grid


class BalanceGrid:
    """Finite-volume cells around nodes; cell boundaries at interval midpoints.

    ``extra`` maps a component to additional node positions, so that strut
    atoms sit at nodes rather than on a cell boundary.
    """

    def __init__(self, curve: Curve, n: int = 512, extra: dict | None = None):
        self.curve = curve
        self.n = n
        self.nodes, self.mids, self.iseg, self.offset = [], [], [], []
        off = 0
        for c, comp in enumerate(curve.components):
            nd = component_grid(comp, n)
            add = np.asarray((extra or {}).get(c, []), dtype=float)
            if comp.closed:
                add = np.mod(add, comp.length)
            add = add[(add > 0) & (add < comp.length)]
            if len(add):
                nd = np.union1d(nd, add)
            ext = np.concatenate([nd, [comp.length]]) if comp.closed else nd
            mids = 0.5 * (ext[:-1] + ext[1:])
            self.nodes.append(ext)
            self.mids.append(mids)
            self.iseg.append(comp.locate(mids))
            self.offset.append(off)
            off += len(mids) if comp.closed else len(mids) + 1
        self.ncells = off

    def ncomp_cells(self, c: int) -> int:
        comp = self.curve.components[c]
        return len(self.mids[c]) if comp.closed else len(self.mids[c]) + 1

    def cell_of(self, c: int, s) -> np.ndarray:
        comp = self.curve.components[c]
        s = np.asarray(s, dtype=float)
        if comp.closed:
            s = np.mod(s, comp.length)
        k = np.searchsorted(self.mids[c], s, side="right")
        if comp.closed:
            k = np.where(k == len(self.mids[c]), 0, k)
        return self.offset[c] + k

    def interval_of(self, c: int, s) -> np.ndarray:
        nd = self.nodes[c]
        return np.clip(np.searchsorted(nd, s, side="right") - 1, 0, len(nd) - 2)


# ---------------------------------------------------------------------------
# strut force


@dataclass
class StrutForce:
    """Omega as quadrature atoms: vectors ``vec`` at (comp, s)."""

    comp: np.ndarray
    s: np.ndarray
    vec: np.ndarray

    def pair(self, curve: Curve, xi: Callable) -> float:
        """Integral of <xi, dOmega> for a field xi acting on (n, 3) points."""
        total = 0.0
        for c in np.unique(self.comp):
            m = self.comp == c
            P = curve.frame(int(c), self.s[m])[0]
            total += float(np.sum(xi(P) * self.vec[m]))
        return total

    def cell_totals(self, grid: BalanceGrid) -> np.ndarray:
        out = np.zeros((grid.ncells, 3))
        for c in np.unique(self.comp):
            m = self.comp == c
            np.add.at(out, grid.cell_of(int(c), self.s[m]), self.vec[m])
        return out


def _points(curve, comp, s):
    return curve.frame(comp, s)[0]


def _family_pieces(curve: Curve, fam: StrutFamily, grid: BalanceGrid | None):
    """Subintervals of [s0, s1] on which x and partner stay in a single cell."""
    cuts = [fam.s0, fam.s1]
    cuts += [b for b in np.asarray(fam.breaks, float) if fam.s0 < b < fam.s1]
    comp = curve.components[fam.x_comp]
    cuts += [j for j in comp.offsets[1:-1] if fam.s0 < j < fam.s1]
    if grid is not None:
        mids = grid.mids[fam.x_comp]
        cuts += list(mids[(mids > fam.s0) & (mids < fam.s1)])
        if comp.closed:
            for shift in (-comp.length, comp.length):
                m = mids + shift
                cuts += list(m[(m > fam.s0) & (m < fam.s1)])
    if grid is None:
        cuts += list(np.linspace(fam.s0, fam.s1, FAMILY_PANELS + 1)[1:-1])
    cuts = np.unique(np.array(cuts))
    a, b = cuts[:-1], cuts[1:]
    if grid is None:
        return a, b
    out_a, out_b = [], []
    while len(a):
        ca = grid.cell_of(fam.y_comp, fam.partner(a))
        cb = grid.cell_of(fam.y_comp, fam.partner(b))
        same = ca == cb
        out_a.append(a[same])
        out_b.append(b[same])
        a, b, ca = a[~same], b[~same], ca[~same]
        if not len(a):
            break
        lo, hi = a.copy(), b.copy()
        for _ in range(60):
            mid = 0.5 * (lo + hi)
            left = grid.cell_of(fam.y_comp, fam.partner(mid)) == ca
            lo = np.where(left, mid, lo)
            hi = np.where(left, hi, mid)
        # hi already lies in the next cell; the sliver [lo, hi] is below rounding
        out_a.append(a)
        out_b.append(hi)
        a = hi
    return np.concatenate(out_a), np.concatenate(out_b)


def _family_nodes(curve, fam, grid):
    a, b = _family_pieces(curve, fam, grid)
    half = 0.5 * (b - a)
    s = (0.5 * (a + b))[:, None] + half[:, None] * GAUSS_X[None, :]
    w = half[:, None] * GAUSS_W[None, :]
    return s.ravel(), w.ravel()


def strut_force(curve: Curve, measure: StrutMeasure, grid: BalanceGrid | None = None) -> StrutForce:
    """Omega = 2 (x - y) mu projected to the first factor, as quadrature atoms."""
    comps, ss, vecs = [], [], []
    for at in measure.atoms:
        px = _points(curve, at.x[0], [at.x[1]])[0]
        py = _points(curve, at.y[0], [at.y[1]])[0]
        v = 2.0 * (px - py) * at.weight
        comps += [at.x[0], at.y[0]]
        ss += [at.x[1], at.y[1]]
        vecs += [v, -v]
    C = [np.array(comps, dtype=int)]
    S = [np.array(ss, dtype=float)]
    Vv = [np.array(vecs, dtype=float).reshape(-1, 3)]
    for fam in measure.families:
        s, w = _family_nodes(curve, fam, grid)
        t = fam.partner(s)
        px = _points(curve, fam.x_comp, s)
        py = _points(curve, fam.y_comp, t)
        v = 2.0 * (px - py) * (np.asarray(fam.density(s)) * w)[:, None]
        C += [np.full(len(s), fam.x_comp), np.full(len(s), fam.y_comp)]
        S += [s, t]
        Vv += [v, -v]
    return StrutForce(np.concatenate(C), np.concatenate(S), np.vstack(Vv))


# ---------------------------------------------------------------------------
# virtual tangent


def _frenet(curve, c, s):
    comp = curve.components[c]
    P, T, K = comp.frame(s)
    k = np.linalg.norm(K, axis=-1)
    with np.errstate(invalid="ignore", divide="ignore"):
        N = np.where(k[:, None] > 0, K / k[:, None], 0.0)
    B = np.cross(T, N)
    tau = comp.torsion(s)
    return T, N, B, k, tau


def _v_coeffs(curve, sigma, c, s):
    """V = T + phi a + phi' b on kinked arcs."""
    T, N, B, k, tau = _frenet(curve, c, s)
    a = (sigma * k - 2.0)[:, None] * T - sigma * tau[:, None] * B
    b = -sigma * N
    return T, a, b, k


def _check_support(k, phi, dphi, sigma, where):
    on = (phi > 0) | (dphi != 0)
    if np.any(on) and np.max(np.abs(sigma * k[on] - 1.0)) > KINK_REL_TOL:
        raise ValueError(f"kink tension is positive where |kappa| != 1/sigma ({where})")


def virtual_tangent_at(curve, phi: KinkTension, sigma, c, s):
    T, a, b, k = _v_coeffs(curve, sigma, c, s)
    p, dp = phi.values(c, s)
    _check_support(k, p, dp, sigma, f"component {c}")
    return T + p[:, None] * a + dp[:, None] * b


@dataclass
class VirtualTangent:
    comp: np.ndarray
    s: np.ndarray
    V: np.ndarray


def virtual_tangent(curve: Curve, phi: KinkTension, sigma: float, samples: int = 512,
                    step: float = 1e-5) -> VirtualTangent:
    """V = (1 - 2 phi) T - sigma (phi N)' with (phi N)' by central differences.

    Differences stay inside one segment (one-sided second order at its ends).
    """
    cs, ss, vs = [], [], []
    for c, comp in enumerate(curve.components):
        s = component_grid(comp, samples)
        g = comp.locate(s)
        lo, hi = comp.offsets[g], comp.offsets[g + 1]
        T, N, _, k, _ = _frenet(curve, c, s)
        p, dp = phi.values(c, s)
        _check_support(k, p, dp, sigma, f"component {c}")

        def phiN(x):
            ph = phi.values(c, x)[0]
            _, Nx, _, _, _ = _frenet(curve, c, np.clip(x, lo, hi))
            return ph[:, None] * Nx

        fwd = s + 2 * step <= hi
        bwd = s - 2 * step >= lo
        d = np.empty((len(s), 3))
        cen = fwd & bwd
        d[cen] = ((phiN(s + step) - phiN(s - step)) / (2 * step))[cen]
        f = fwd & ~bwd
        d[f] = ((-3 * phiN(s) + 4 * phiN(s + step) - phiN(s + 2 * step)) / (2 * step))[f]
        b = ~fwd
        d[b] = ((3 * phiN(s) - 4 * phiN(s - step) + phiN(s - 2 * step)) / (2 * step))[b]
        vs.append((1 - 2 * p)[:, None] * T - sigma * d)
        cs.append(np.full(len(s), c))
        ss.append(s)
    return VirtualTangent(np.concatenate(cs), np.concatenate(ss), np.vstack(vs))


# ---------------------------------------------------------------------------
# residual


@dataclass
class BalanceCertificate:
    feasible: bool
    residual: float
    endpoint_residuals: list
    cell_residuals: np.ndarray
    mu: StrutMeasure
    phi: KinkTension
    V: VirtualTangent
    grid: int
    tol: float
    total_mass: float

    def to_json(self) -> dict:
        fams = []
        for f in self.mu.families:
            s = np.linspace(f.s0, f.s1, 33)
            fams.append({"x_comp": f.x_comp, "y_comp": f.y_comp, "s0": f.s0, "s1": f.s1,
                         "samples": [{"s": float(a), "t": float(b), "density": float(d)}
                                     for a, b, d in zip(s, f.partner(s), f.density(s))]})
        phi = self.phi.samples() if isinstance(self.phi, HermiteTension) else [
            {"comp": int(c), "s": float(s), "phi": float(self.phi.values(int(c), np.array([s]))[0][0])}
            for c, s in zip(self.V.comp, self.V.s)]
        return {"feasible": self.feasible, "residual": self.residual,
                "mu": {"atoms": [{"x": {"comp": a.x[0], "s": a.x[1]}, "y": {"comp": a.y[0], "s": a.y[1]},
                                  "weight": a.weight} for a in self.mu.atoms],
                       "families": fams},
                "phi": phi, "endpoint_residuals": self.endpoint_residuals,
                "grid": self.grid, "tol": self.tol, "total_mass": self.total_mass}


def default_tolerance(curve: Curve) -> float:
    kb, _ = curvature_bound(curve)
    return 1e-8 * (1.0 + kb * curve.total_length())


def _end_projectors(curve, grid):
    out = []
    for c, comp in enumerate(curve.components):
        if comp.closed:
            continue
        first = grid.offset[c]
        last = first + grid.ncomp_cells(c) - 1
        for cell, ep in ((first, comp.endpoints[0]), (last, comp.endpoints[1])):
            out.append((cell, ep.basis.T @ ep.basis if ep.h0_dim else np.zeros((3, 3))))
    return out


def balance_residual(curve: Curve, mu: StrutMeasure, phi: KinkTension, sigma: float,
                     grid: int = 512, tol: float | None = None) -> BalanceCertificate:
    """Residual of Omega + V' = 0 per cell, with endpoint cells projected to H0."""
    extra = {}
    for at in mu.atoms:
        for c, s in (at.x, at.y):
            extra.setdefault(c, []).append(s)
    G = BalanceGrid(curve, grid, extra)
    R = strut_force(curve, mu, G).cell_totals(G)
    vc, vs, vv = [], [], []
    for c, comp in enumerate(curve.components):
        m = G.mids[c]
        V = virtual_tangent_at(curve, phi, sigma, c, m)
        k = np.arange(len(m))
        nxt = (k + 1) % len(m) if comp.closed else k + 1
        np.add.at(R, G.offset[c] + k, V)
        np.add.at(R, G.offset[c] + nxt, -V)
        vc.append(np.full(len(m), c))
        vs.append(m)
        vv.append(V)
    return _certificate(curve, G, R, mu, phi, VirtualTangent(np.concatenate(vc), np.concatenate(vs),
                                                             np.vstack(vv)), tol)


def _certificate(curve, G, R, mu, phi, V, tol):
    ends = _end_projectors(curve, G)
    end_cells = {cell for cell, _ in ends}
    ep = []
    for cell, P in ends:
        R[cell] = P @ R[cell]
        ep.append(float(np.linalg.norm(R[cell])))
    interior = np.array([i for i in range(G.ncells) if i not in end_cells], dtype=int)
    res = float(np.sum(np.linalg.norm(R[interior], axis=1))) if len(interior) else 0.0
    tol = default_tolerance(curve) if tol is None else tol
    mass = mu.total_mass()
    ok = res <= tol * (1 + mass) and all(e <= tol * (1 + mass) for e in ep) and mu.min_weight() >= -1e-12
    return BalanceCertificate(bool(ok), res, ep, R, mu, phi, V, G.n, tol, mass)


# ---------------------------------------------------------------------------
# synthesis


class _Bernstein:
    """Piecewise cubic density with Bernstein coefficients per node interval."""

    def __init__(self, nodes, coef):
        self.nodes = nodes
        self.coef = coef

    def __call__(self, s):
        s = np.asarray(s, dtype=float)
        k = np.clip(np.searchsorted(self.nodes, s, side="right") - 1, 0, len(self.nodes) - 2)
        u = (s - self.nodes[k]) / (self.nodes[k + 1] - self.nodes[k])
        B = _bern(u)
        return np.sum(B * self.coef[k], axis=-1)


def _bern(u):
    u = np.asarray(u, dtype=float)[..., None]
    v = 1 - u
    return np.concatenate([v ** 3, 3 * u * v ** 2, 3 * u ** 2 * v, u ** 3], axis=-1)


def _partner_newton(curve, c_y, L_y, closed_y, s_tab, t_tab, c_x):
    """Partner t(s) of x(s): root of <x - y(t), T(t)> = 0 near the tabulated guess."""
    comp_y = curve.components[c_y]

    def partner(s):
        s = np.atleast_1d(np.asarray(s, dtype=float))
        t = np.interp(s, s_tab, t_tab)
        X = _points(curve, c_x, s)
        lo, hi = (-np.inf, np.inf) if closed_y else (0.0, L_y)
        for _ in range(12):
            P, T, K = comp_y.frame(t)
            d = X - P
            g = np.sum(d * T, axis=1)
            dg = -1.0 + np.sum(d * K, axis=1)
            step = np.where(np.abs(dg) > 1e-12, g / dg, 0.0)
            t = np.clip(t - step, lo, hi)
            if np.max(np.abs(step), initial=0.0) < 1e-15 * (1 + L_y):
                break
        return t

    return partner


def _branches(curve: Curve, report: ThicknessReport, h: float):
    """Single-valued strut branches from the detected families, one per orbit."""
    out = []
    seen = set()
    junction_tol = 1e-7

    def seg_key(c, s):
        comp = curve.components[c]
        j = comp.offsets
        near = np.abs(j - s) <= junction_tol * max(1.0, comp.length)
        if np.any(near):
            return ("J", int(np.argmax(near)))
        return ("S", int(comp.locate(np.array([s]))[0]))

    for fid, fam in sorted(report.families.items()):
        members = [report.struts[k] for k in fam["members"]]
        xs = np.array([m.x[1] for m in members])
        ys = np.array([m.y[1] for m in members])
        cx, cy = fam["x_comp"], fam["y_comp"]
        if np.ptp(xs) < 3 * h:
            xs, ys, cx, cy = ys, xs, cy, cx
        groups: dict = {}
        for a, b in zip(xs, ys):
            groups.setdefault((seg_key(cx, a), seg_key(cy, b)), []).append((a, b))
        for (kx, ky), pts in sorted(groups.items()):
            if kx[0] == "J" or len(pts) < 4:
                continue
            pts = np.array(sorted(pts))
            comp_y = curve.components[cy]
            ty = np.unwrap(pts[:, 1], period=comp_y.length) if comp_y.closed else pts[:, 1]
            brk = np.nonzero((np.diff(pts[:, 0]) > 3 * h) | (np.abs(np.diff(ty)) > 20 * h))[0]
            for run in np.split(np.arange(len(pts)), brk + 1):
                if len(run) < 4:
                    continue
                key = (cx, kx, cy, ky)
                mirror = (cy, ky, cx, kx)
                lo, hi = float(pts[run[0], 0]), float(pts[run[-1], 0])
                rkey = (key, round(lo / h), round(hi / h))
                if rkey in seen:
                    continue
                comp_x = curve.components[cx]
                g = kx[1]
                a0, a1 = comp_x.offsets[g], comp_x.offsets[g + 1]
                if lo - a0 <= 2.5 * h:
                    lo = a0
                if a1 - hi <= 2.5 * h:
                    hi = a1
                seen.add(rkey)
                if ky[0] == "J":
                    t0 = comp_y.offsets[ky[1]]
                    partner = (lambda t0: lambda s: np.full(np.shape(np.atleast_1d(s)), t0))(t0)
                else:
                    partner = _partner_newton(curve, cy, comp_y.length, comp_y.closed,
                                              pts[run, 0], ty[run], cx)
                out.append({"key": key, "mirror": mirror, "x_comp": cx, "y_comp": cy,
                            "s0": lo, "s1": hi, "partner": partner})
    # one representative per orbit
    kept, keys = [], []
    for b in out:
        if b["mirror"] in keys and b["key"] != b["mirror"]:
            continue
        kept.append(b)
        keys.append(b["key"])
    return kept


def _kinked_segments(curve, sigma):
    out = {}
    for c, comp in enumerate(curve.components):
        for g, seg in enumerate(comp.segments):
            s = np.linspace(0.0, seg.length, 9)
            k = np.linalg.norm(seg.frame(s)[2], axis=1)
            out[(c, g)] = bool(np.all(np.abs(sigma * k - 1.0) <= KINK_REL_TOL))
    return out


def _bounded_lsq(A, b, free):
    """min |Az - b| with z >= 0 off ``free``.

    The minimum-norm least-squares point is tried first; if it violates a bound
    the problem goes to Lawson-Hanson NNLS with free variables split in two.
    """
    z = np.linalg.lstsq(A, b, rcond=None)[0]
    if np.all(z[~free] >= 0):
        return z
    A2 = np.hstack([A, -A[:, free]])
    y, _ = nnls(A2, b, maxiter=50 * A2.shape[1])
    z = y[: A.shape[1]].copy()
    z[free] -= y[A.shape[1]:]
    return z


def _snap(curve, where):
    """Move a strut endpoint onto a segment junction within the location tolerance."""
    c, s = where
    comp = curve.components[c]
    if comp.closed:
        s = s % comp.length
    k = int(np.argmin(np.abs(comp.offsets - s)))
    if abs(comp.offsets[k] - s) <= STRUT_SNAP:
        s = float(comp.offsets[k])
        if comp.closed and s >= comp.length:
            s = 0.0
    return (c, s)


def solve_balance(curve: Curve, sigma: float, report: ThicknessReport | None = None,
                  grid: int = 512, tol: float | None = None) -> BalanceCertificate:
    """Nonnegative least-squares synthesis of (mu, phi) balancing the curve.

    Unknowns are cubic Bernstein densities on the detected strut branches,
    weights of isolated struts, and a cubic Hermite kink tension on arcs of
    curvature 1/sigma. ``report=None`` means kink-only balance.
    """
    if report is not None and math.isfinite(report.ts) and abs(report.ts - 1.0) > 1e-6:
        raise ValueError(f"Ts = {report.ts:.9g}; rescale the curve to unit thickness first")
    isolated = [] if report is None else [
        (_snap(curve, st.x), _snap(curve, st.y)) for st in report.struts
        if st.family is None and (st.x[0], st.x[1]) <= (st.y[0], st.y[1])]
    # atoms sit at nodes where the tension slope may jump, like segment junctions
    extra = {}
    for pair in isolated:
        for c, s in pair:
            extra.setdefault(c, []).append(s)
    G = BalanceGrid(curve, grid, extra)
    h = max(float(np.max(np.diff(nd))) for nd in G.nodes)
    cols = []  # (kind, data)
    blocks = []  # sparse triplets (rows, col, vals)
    lb, ub = [], []

    def add_col(lo=0.0, hi=np.inf):
        lb.append(lo)
        ub.append(hi)
        return len(lb) - 1

    def add_vec(cell, col, vec):
        cell = np.atleast_1d(cell)
        vec = np.atleast_2d(vec)
        col = np.broadcast_to(col, cell.shape)
        for d in range(3):
            blocks.append((3 * cell + d, col, vec[:, d]))

    # isolated struts
    atoms = []
    for sx, sy in isolated:
        j = add_col()
        v = 2.0 * (_points(curve, sx[0], [sx[1]])[0] - _points(curve, sy[0], [sy[1]])[0])
        add_vec(G.cell_of(sx[0], [sx[1]]), j, v)
        add_vec(G.cell_of(sy[0], [sy[1]]), j, -v)
        atoms.append(((sx, sy), j))

    # strut branches
    fams = []
    if report is not None:
        for br in _branches(curve, report, h):
            nd = G.nodes[br["x_comp"]]
            inner = nd[(nd > br["s0"]) & (nd < br["s1"])]
            knots = np.concatenate([[br["s0"]], inner, [br["s1"]]])
            base = len(lb)
            for _ in range(4 * (len(knots) - 1)):
                add_col()
            fam = StrutFamily(br["x_comp"], br["y_comp"], br["s0"], br["s1"], br["partner"],
                              lambda s: np.zeros_like(s), knots)
            s, w = _family_nodes(curve, fam, G)
            t = fam.partner(s)
            k = np.clip(np.searchsorted(knots, s, side="right") - 1, 0, len(knots) - 2)
            u = (s - knots[k]) / (knots[k + 1] - knots[k])
            B = _bern(u)
            v = 2.0 * (_points(curve, fam.x_comp, s) - _points(curve, fam.y_comp, t)) * w[:, None]
            cxs = G.cell_of(fam.x_comp, s)
            cys = G.cell_of(fam.y_comp, t)
            for q in range(4):
                col = base + 4 * k + q
                add_vec(cxs, col, v * B[:, q:q + 1])
                add_vec(cys, col, -v * B[:, q:q + 1])
            fams.append((fam, knots, base))

    # kink tension
    kinked = _kinked_segments(curve, sigma)
    rhs = np.zeros(3 * G.ncells)
    tension_layout = {}
    for c, comp in enumerate(curve.components):
        nd, mids, iseg = G.nodes[c], G.mids[c], G.iseg[c]
        nint = len(mids)
        T, a, b, _ = _v_coeffs(curve, sigma, c, mids)
        k = np.arange(nint)
        cell_k = G.offset[c] + k
        cell_n = G.offset[c] + ((k + 1) % nint if comp.closed else k + 1)
        for d in range(3):
            np.add.at(rhs, 3 * cell_k + d, -T[:, d])
            np.add.at(rhs, 3 * cell_n + d, T[:, d])
        inU = np.array([kinked[(c, g)] for g in iseg])
        if not np.any(inU):
            continue
        is_junction = np.isin(nd, comp.offsets) | np.isin(nd, extra.get(c, []))
        nnode = len(nd)

        def node_id(i):
            return 0 if comp.closed and i == nnode - 1 else i

        def fixed_zero(i):
            i = node_id(i)
            left = inU[i - 1] if (i > 0 or comp.closed) else None
            right = inU[i] if i < nint else None
            if comp.closed and i == 0:
                left = inU[nint - 1]
            if left is None or right is None:
                ep = comp.endpoints[0 if right is not None else 1]
                return ep.free_tangent
            return not (left and right)

        val_col, slope_col = {}, {}
        for i in np.nonzero(inU)[0]:
            for j in (i, i + 1):
                nid = node_id(j)
                if nid not in val_col:
                    val_col[nid] = None if fixed_zero(j) else add_col()
            # slopes: side 'R' at node i, side 'L' at node i+1
            for nid, side in ((node_id(i), "R"), (node_id(i + 1), "L")):
                key = (nid, side if is_junction[nid] else "C")
                if key not in slope_col:
                    slope_col[key] = add_col(-np.inf, np.inf)
        ids = np.nonzero(inU)[0]
        tension_layout[c] = (ids, val_col, slope_col, is_junction)
        for i in ids:
            hh = nd[i + 1] - nd[i]
            na, nb = node_id(i), node_id(i + 1)
            ca, cb = val_col[na], val_col[nb]
            da = slope_col[(na, "R" if is_junction[na] else "C")]
            db = slope_col[(nb, "L" if is_junction[nb] else "C")]
            # phi(m) and phi'(m) at the interval midpoint
            terms = [(ca, 0.5 * a[i] - 1.5 / hh * b[i]), (cb, 0.5 * a[i] + 1.5 / hh * b[i]),
                     (da, hh / 8 * a[i] - 0.25 * b[i]), (db, -hh / 8 * a[i] - 0.25 * b[i])]
            ck = G.offset[c] + i
            cn = G.offset[c] + ((i + 1) % nint if comp.closed else i + 1)
            for col, vec in terms:
                if col is None:
                    continue
                add_vec([ck], col, vec)
                add_vec([cn], col, -vec)

    n = len(lb)
    A = np.zeros((3 * G.ncells, n))
    for r, cidx, vals in blocks:
        np.add.at(A, (r, cidx), vals)
    for cell, P in _end_projectors(curve, G):
        rows = slice(3 * cell, 3 * cell + 3)
        A[rows] = P @ A[rows]
        rhs[rows] = P @ rhs[rows]
    x = np.zeros(n)
    if n:
        used = np.any(A != 0, axis=1) | (rhs != 0)
        Au, bu = A[used], rhs[used]
        scale = np.linalg.norm(Au, axis=0)
        scale[scale == 0] = 1.0
        z = _bounded_lsq(Au / scale, bu, np.isinf(np.array(lb)))
        x = z / scale

    mu = StrutMeasure(
        [StrutAtom(sx, sy, float(x[j])) for (sx, sy), j in atoms],
        [StrutFamily(f.x_comp, f.y_comp, f.s0, f.s1, f.partner,
                     _Bernstein(knots, x[base: base + 4 * (len(knots) - 1)].reshape(-1, 4)), knots)
         for f, knots, base in fams])
    pieces = {}
    for c, (ids, val_col, slope_col, is_junction) in tension_layout.items():
        nd = G.nodes[c]
        nnode = len(nd)
        comp = curve.components[c]

        def nid(i):
            return 0 if comp.closed and i == nnode - 1 else i

        def val(i):
            col = val_col[nid(i)]
            return 0.0 if col is None else max(float(x[col]), 0.0)

        pa = np.array([val(i) for i in ids])
        pb = np.array([val(i + 1) for i in ids])
        da = np.array([x[slope_col[(nid(i), "R" if is_junction[nid(i)] else "C")]] for i in ids])
        db = np.array([x[slope_col[(nid(i + 1), "L" if is_junction[nid(i + 1)] else "C")]] for i in ids])
        pieces[c] = (nd, ids, pa, pb, da, db)
    return balance_residual(curve, mu, HermiteTension(pieces), sigma, grid, tol)


# ---------------------------------------------------------------------------
# Frenet form on kinked arcs


@dataclass
class FrenetCheck:
    s: np.ndarray
    normal: np.ndarray  # sigma^2 phi'' + (1 - sigma^2 tau^2) phi - 1 - sigma Omega_N
    binormal: np.ndarray  # sigma (phi^2 tau)' - phi Omega_B
    jumps: list  # per atom: dict with the mismatch of each jump condition and a flag


def frenet_torsion(curve: Curve, comp: int, s, step: float = 1e-4) -> np.ndarray:
    """Torsion -<B', N> by central differences of the Frenet binormal."""
    s = np.asarray(s, dtype=float)

    def frame(x):
        T, N, B, _, _ = _frenet(curve, comp, x)
        return N, B

    N, _ = frame(s)
    _, Bp = frame(s + step)
    _, Bm = frame(s - step)
    return -np.sum((Bp - Bm) / (2 * step) * N, axis=1)


def frenet_balance_check(curve: Curve, phi: KinkTension, omega_n: Callable, omega_b: Callable,
                         sigma: float, comp: int = 0, s=None, atoms=(), step: float = 1e-4,
                         jump_tol: float = 1e-6) -> FrenetCheck:
    """Pointwise residuals of the normal and binormal balance equations on a kinked arc.

    ``omega_n``/``omega_b`` give the absolutely continuous densities; ``atoms``
    lists (s, mass_N, mass_B). At an atom, the jump of sigma^2 phi' must equal
    sigma mass_N and the jump of sigma phi^2 tau must equal phi mass_B.
    """
    c = curve.components[comp]
    if s is None:
        s = np.linspace(0.0, c.length, 257)[1:-1]
    s = np.asarray(s, dtype=float)
    _, _, _, k, _ = _frenet(curve, comp, s)
    if np.any(k == 0):
        raise ValueError("Frenet frame undefined where the curvature vanishes")
    tau = frenet_torsion(curve, comp, s, step)
    p, dp = phi.values(comp, s)
    ddp = (phi.values(comp, s + step)[1] - phi.values(comp, s - step)[1]) / (2 * step)

    def q(x):
        return phi.values(comp, x)[0] ** 2 * frenet_torsion(curve, comp, x, step)

    dq = (q(s + step) - q(s - step)) / (2 * step)
    r1 = sigma ** 2 * ddp + (1 - sigma ** 2 * tau ** 2) * p - 1 - sigma * omega_n(s)
    r2 = sigma * dq - p * omega_b(s)
    jumps = []
    eps = 10 * step
    for sa, mn, mb in atoms:
        x = np.array([sa - eps, sa + eps])
        d_phi = phi.values(comp, x)[1]
        jn = sigma ** 2 * (d_phi[1] - d_phi[0]) - sigma * mn
        qq = q(x)
        ph = float(phi.values(comp, np.array([sa]))[0][0])
        jb = sigma * (qq[1] - qq[0]) - ph * mb
        jumps.append({"s": sa, "normal": float(jn), "binormal": float(jb),
                      "flag": bool(abs(jn) > jump_tol or abs(jb) > jump_tol)})
    return FrenetCheck(s, r1, r2, jumps)
