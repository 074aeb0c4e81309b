"""Penalized distance, reach, rho and sigma-thickness, with strut and kink detection."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .curves import Curve, sample_arrays

GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


@dataclass(frozen=True)
class Strut:
    x: tuple[int, float]
    y: tuple[int, float]
    length: float
    direction: np.ndarray  # (x - y) / |x - y|
    psi_x: float
    psi_y: float
    family: int | None = None


@dataclass(frozen=True)
class Kink:
    comp: int
    s: float
    T: np.ndarray
    n: np.ndarray
    R: float


@dataclass
class ThicknessReport:
    reach: float
    min_rho: float
    ts: float
    sigma: float
    struts: list[Strut] = field(default_factory=list)
    kinks: list[Kink] = field(default_factory=list)
    min_pd: float = math.inf
    realizing_pair: tuple | None = None
    realizing_circle: tuple | None = None
    samples: int = 0
    strut_tol: float = 1e-6
    kink_tol: float = 1e-6
    families: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        def num(v):
            return None if not math.isfinite(v) else v

        return {
            "reach": num(self.reach), "min_rho": num(self.min_rho), "ts": num(self.ts),
            "sigma": self.sigma,
            "struts": [{"x": {"comp": s.x[0], "s": s.x[1]}, "y": {"comp": s.y[0], "s": s.y[1]},
                        "len": s.length, "family": s.family} for s in self.struts],
            "kinks": [{"comp": k.comp, "s": k.s, "n": k.n.tolist(), "r": k.R} for k in self.kinks],
        }


# ---------------------------------------------------------------------------
# pointwise quantities


def _inward(curve: Curve, comp: int, s):
    """Inward tangent at open-component endpoints, zeros elsewhere."""
    c = curve.component(comp)
    s = np.atleast_1d(np.asarray(s, dtype=float))
    out = np.zeros(s.shape + (3,))
    if c.closed:
        return out
    tol = 1e-12 * max(1.0, c.length)
    at0 = s <= tol
    at1 = s >= c.length - tol
    if np.any(at0 | at1):
        T = c.frame(np.where(at0, 0.0, c.length)[at0 | at1])[1]
        sign = np.where(at0[at0 | at1], 1.0, -1.0)[:, None]
        out[at0 | at1] = sign * T
    return out


def _inward_many(curve: Curve, comp, s):
    out = np.zeros((len(s), 3))
    for c in np.unique(comp):
        m = comp == c
        out[m] = _inward(curve, int(c), s[m])
    return out


def _pd_core(Px, Tx, Nx, Py):
    """pd*, psi* and psi for arrays of ordered pairs.

    ``Nx`` is the inward tangent at endpoint rows and zero at interior rows.
    """
    d = Py - Px
    r = np.linalg.norm(d, axis=-1)
    with np.errstate(invalid="ignore", divide="ignore"):
        a = np.abs(np.sum(Tx * d, axis=-1)) / r
        a = np.minimum(a, 1.0)
        behind = np.sum(Nx * d, axis=-1) <= 0
        endpoint = np.any(Nx != 0, axis=-1)
        a_star = np.where(endpoint & behind, 0.0, a)
        c2 = (1.0 - a_star) * (1.0 + a_star)
        pd = np.where((r > 0) & (c2 > 0), r / c2, np.inf)
    return pd, np.arcsin(a_star), np.arcsin(a)


def chord_angles(curve: Curve, x, y) -> tuple[float, float]:
    """(psi, psi*) at x for the chord toward y; x, y are (component, arclength)."""
    Px, Tx, _ = curve.frame(x[0], [x[1]])
    Py, _, _ = curve.frame(y[0], [y[1]])
    if np.linalg.norm(Px - Py) == 0:
        raise ValueError("coincident points")
    _, ps, p = _pd_core(Px, Tx, _inward(curve, x[0], [x[1]]), Py)
    return float(p[0]), float(ps[0])


def penalized_distance(curve: Curve, x, y, endpoint_variant: bool = True) -> float:
    """|x - y| sec^2(psi) (psi* with ``endpoint_variant``); +inf for x = y."""
    Px, Tx, _ = curve.frame(x[0], [x[1]])
    Py, _, _ = curve.frame(y[0], [y[1]])
    Nx = _inward(curve, x[0], [x[1]]) if endpoint_variant else np.zeros((1, 3))
    pd, _, _ = _pd_core(Px, Tx, Nx, Py)
    return float(pd[0])


def chord_radius(curve: Curve, x, y, endpoint_variant: bool = True) -> float:
    """r(x, y) = |x - y| / (2 cos psi), the radius of the circle through y tangent at x."""
    if x[0] == y[0] and x[1] == y[1]:
        return math.inf
    psi, psi_s = chord_angles(curve, x, y)
    ang = psi_s if endpoint_variant else psi
    Px = curve.frame(x[0], [x[1]])[0][0]
    Py = curve.frame(y[0], [y[1]])[0][0]
    c = math.cos(ang)
    return math.inf if c == 0 else float(np.linalg.norm(Px - Py)) / (2 * c)


def curvature_bound(curve: Curve) -> tuple[float, tuple[int, int]]:
    """Max curvature over all segments and the (component, segment) attaining it."""
    best, where = 0.0, (0, 0)
    for ci, c in enumerate(curve.components):
        for gi, g in enumerate(c.segments):
            k = g.max_curvature()
            if k > best:
                best, where = k, (ci, gi)
    return best, where


def rho_profile(curve: Curve, n: int = 2048):
    """Per-sample rho = 1 / max one-sided |kappa| and the global minimum of rho."""
    S = sample_arrays(curve, n)
    with np.errstate(divide="ignore"):
        rho = 1.0 / S.kmax
    kb, _ = curvature_bound(curve)
    min_rho = min(float(np.min(rho)), math.inf if kb == 0 else 1.0 / kb)
    return S, rho, min_rho


# ---------------------------------------------------------------------------
# sweep helpers


def _cyc_sep(S, comps, i, j):
    ds = np.abs(S.s[i] - S.s[j])
    L = comps[S.comp[i]]
    closed = L > 0
    return np.where(closed, np.minimum(ds, np.abs(L) - ds), ds)


def _pair_values(S, Nin, i, j, chunk=2_000_000):
    out = np.empty(len(i))
    for a in range(0, len(i), chunk):
        b = a + chunk
        out[a:b] = _pd_core(S.P[i[a:b]], S.T[i[a:b]], Nin[i[a:b]], S.P[j[a:b]])[0]
    return out


class _Evaluator:
    """Vectorized pd* for pairs (row sample, component, parameter)."""

    def __init__(self, curve: Curve):
        self.curve = curve

    def points(self, comp, t):
        P = np.empty((len(t), 3))
        T = np.empty_like(P)
        for c in np.unique(comp):
            sel = comp == c
            P[sel], T[sel], _ = self.curve.frame(int(c), t[sel])
        return P, T

    def pd(self, Px, Tx, Nx, comp, t):
        Py, _ = self.points(comp, t)
        return _pd_core(Px, Tx, Nx, Py)[0]


def _golden(f, a, b, iters=64):
    """Vectorized golden-section minimization of f over [a, b] (arrays)."""
    a = a.astype(float).copy()
    b = b.astype(float).copy()
    c = b - GOLDEN * (b - a)
    d = a + GOLDEN * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(iters):
        left = fc <= fd
        b = np.where(left, d, b)
        a = np.where(left, a, c)
        nc = np.where(left, b - GOLDEN * (b - a), d)
        nd = np.where(left, c, a + GOLDEN * (b - a))
        fnew = f(np.where(left, nc, nd))
        fd_new = np.where(left, fc, fnew)
        fc_new = np.where(left, fnew, fd)
        c, d, fc, fd = nc, nd, fc_new, fd_new
    t = np.where(fc <= fd, c, d)
    return t, np.minimum(fc, fd)


def compute_thickness(curve: Curve, sigma: float = 0.5, samples: int = 2048,
                      refine_tol: float = 1e-10, strut_tol: float = 1e-6,
                      kink_tol: float = 1e-6, angle_tol: float = 1e-6) -> ThicknessReport:
    """sigma-thickness Ts = min(2 reach, min_rho / sigma) with struts and kinks.

    The pairwise sweep over ``samples`` points per component prunes pairs by
    chord length with a k-d tree and skips same-component pairs that are too
    close in arclength to beat the curvature term. Row minima are refined by
    golden-section search along the partner component, isolated minima by a
    2D search.
    """
    if sigma < 0.5:
        raise ValueError("sigma-thickness requires sigma >= 1/2")
    S, rho, min_rho = rho_profile(curve, samples)
    comps = np.array([c.length if c.closed else -c.length for c in curve.components])
    N = len(S)
    Nin = np.zeros((N, 3))
    for ci in range(len(curve.components)):
        sel = S.comp == ci
        Nin[sel] = _inward(curve, ci, S.s[sel])
    is_end = np.any(Nin != 0, axis=1)
    h_max = float(np.max(S.spacing))

    # upper bound on min pd* from a subsample
    step = max(1, N // 1500)
    sub = np.arange(0, N, step)
    I, J = np.meshgrid(sub, sub, indexing="ij")
    I, J = I.ravel(), J.ravel()
    keep = I != J
    I, J = I[keep], J[keep]
    same = S.comp[I] == S.comp[J]
    sep = _cyc_sep(S, comps, I, J)
    base_excl = 0.9 * math.pi * min_rho if math.isfinite(min_rho) else math.inf
    keep = ~same | (sep > np.where(is_end[I], 2 * S.spacing[I], np.maximum(2 * S.spacing[I], base_excl)))
    ub = np.min(_pair_values(S, Nin, I[keep], J[keep])) if np.any(keep) else math.inf
    U = min(2 * min_rho, ub)
    if not math.isfinite(U):
        return ThicknessReport(math.inf, min_rho, math.inf, sigma, samples=samples,
                               strut_tol=strut_tol, kink_tol=kink_tol)
    U *= 1 + 1e-3
    r_est = min(min_rho, U / 2)
    excl = 0.9 * math.pi * r_est

    tree = cKDTree(S.P)
    pairs = tree.query_pairs(U, output_type="ndarray")
    I = np.concatenate([pairs[:, 0], pairs[:, 1]])
    J = np.concatenate([pairs[:, 1], pairs[:, 0]])
    same = S.comp[I] == S.comp[J]
    sep = _cyc_sep(S, comps, I, J)
    lim = np.where(is_end[I], 2 * S.spacing[I], np.maximum(2 * S.spacing[I], excl))
    keep = ~same | (sep > lim)
    I, J = I[keep], J[keep]
    V = _pair_values(S, Nin, I, J)
    pd_coarse = float(np.min(V)) if len(V) else math.inf
    ts_coarse = min(pd_coarse, min_rho / sigma)
    slack = 1e-3 + 4 * (h_max / ts_coarse) ** 2
    thr = ts_coarse * (1 + slack)
    sel = V <= thr
    I, J, V = I[sel], J[sel], V[sel]

    # runs of contiguous partner samples per row
    order = np.lexsort((J, I))
    I, J, V = I[order], J[order], V[order]
    brk = np.ones(len(I), dtype=bool)
    if len(I):
        brk[1:] = (I[1:] != I[:-1]) | (J[1:] != J[:-1] + 1) | (S.comp[J[1:]] != S.comp[J[:-1]])
    run_id = np.cumsum(brk) - 1
    nrun = int(run_id[-1]) + 1 if len(I) else 0
    best = np.full(nrun, np.inf)
    np.minimum.at(best, run_id, V)
    is_best = V == best[run_id]
    first = np.zeros(nrun, dtype=bool)
    pick = []
    for k in np.nonzero(is_best)[0]:
        if not first[run_id[k]]:
            first[run_id[k]] = True
            pick.append(k)
    pick = np.array(pick, dtype=int)
    # merge closed-component wrap-around runs
    rows = I[pick]
    cols = J[pick]
    ev = _Evaluator(curve)

    cy = S.comp[cols]
    t0 = S.s[cols]
    lo = np.empty(len(cols))
    hi = np.empty(len(cols))
    for c in np.unique(cy):
        m = cy == c
        comp = curve.components[c]
        idx = np.nonzero(S.comp == c)[0]
        grid = S.s[idx]
        k = np.searchsorted(grid, t0[m])
        if comp.closed:
            ext = np.concatenate([[grid[-1] - comp.length], grid, [grid[0] + comp.length]])
            lo[m] = ext[k]
            hi[m] = ext[k + 2]
        else:
            lo[m] = grid[np.maximum(k - 1, 0)]
            hi[m] = grid[np.minimum(k + 1, len(grid) - 1)]
    Px, Tx, Nx = S.P[rows], S.T[rows], Nin[rows]

    def f(t):
        return ev.pd(Px, Tx, Nx, cy, t)

    t_ref, v_ref = _golden(f, lo, hi)
    better = v_ref < V[pick]
    t_ref = np.where(better, t_ref, t0)
    v_ref = np.where(better, v_ref, V[pick])
    for c in np.unique(cy):
        comp = curve.components[c]
        if comp.closed:
            m = cy == c
            t_ref[m] = np.mod(t_ref[m], comp.length)

    pd_min = float(np.min(v_ref)) if len(v_ref) else math.inf
    realizing = None
    if len(v_ref):
        k = int(np.argmin(v_ref))
        realizing = ((int(S.comp[rows[k]]), float(S.s[rows[k]])), (int(cy[k]), float(t_ref[k])))

    # 2D refinement at isolated local minima of the row profile
    row_min = np.full(N, np.inf)
    np.minimum.at(row_min, rows, v_ref)
    cand = []
    for k in range(len(rows)):
        i = rows[k]
        if v_ref[k] > pd_min * (1 + 10 * slack) or v_ref[k] > row_min[i]:
            continue
        nbv = [row_min[j] for j in (i - 1, i + 1) if 0 <= j < N and S.comp[j] == S.comp[i]]
        if any(v < v_ref[k] for v in nbv):
            continue
        # an edge of a flat run already carries the family value
        if any(abs(v - v_ref[k]) <= strut_tol * v_ref[k] for v in nbv):
            continue
        cand.append(k)
    extra = []
    if cand:
        cand = np.array(cand, dtype=int)
        cx = S.comp[rows[cand]]
        cyc = cy[cand]
        sx0 = S.s[rows[cand]]
        hx = S.spacing[rows[cand]]
        hy = S.spacing[cols[cand]]
        xlen = np.array([curve.components[c].length for c in cx])
        xclosed = np.array([curve.components[c].closed for c in cx])
        xa = np.where(xclosed, sx0 - hx, np.maximum(sx0 - hx, 0.0))
        xb = np.where(xclosed, sx0 + hx, np.minimum(sx0 + hx, xlen))
        ya, yb = t_ref[cand] - 2 * hy, t_ref[cand] + 2 * hy
        for c in np.unique(cyc):
            comp = curve.components[c]
            if not comp.closed:
                m = cyc == c
                ya[m], yb[m] = np.maximum(ya[m], 0.0), np.minimum(yb[m], comp.length)

        def outer(sx):
            Px2, Tx2 = ev.points(cx, sx)
            Nx2 = _inward_many(curve, cx, sx)
            return _golden(lambda t: ev.pd(Px2, Tx2, Nx2, cyc, t), ya, yb, iters=44)[1]

        sx_opt, v_opt = _golden(outer, xa, xb, iters=44)
        ty_opt = _golden(lambda t: ev.pd(*ev.points(cx, sx_opt), _inward_many(curve, cx, sx_opt), cyc, t),
                         ya, yb, iters=44)[0]
        for n, k in enumerate(cand):
            if v_opt[n] < v_ref[k]:
                compx, compy = curve.components[cx[n]], curve.components[cyc[n]]
                sxn = sx_opt[n] % compx.length if compx.closed else sx_opt[n]
                tyn = ty_opt[n] % compy.length if compy.closed else ty_opt[n]
                extra.append((int(cx[n]), float(sxn), int(cyc[n]), float(tyn), float(v_opt[n])))
    for e in extra:
        if e[4] < pd_min:
            pd_min = e[4]
            realizing = ((e[0], e[1]), (e[2], e[3]))

    reach = min(0.5 * pd_min, min_rho)
    ts = min(2 * reach, min_rho / sigma)
    if math.isfinite(reach) and h_max >= reach:
        raise ValueError(f"sampling too coarse: spacing {h_max:.3g} >= reach {reach:.3g}")

    # struts
    keep = v_ref <= ts * (1 + strut_tol)
    raw = [np.asarray(S.comp[rows[keep]]), S.s[rows[keep]], np.asarray(cy[keep]), t_ref[keep]]
    ex = [e for e in extra if e[4] <= ts * (1 + strut_tol)]
    if ex:
        ex = np.array(ex)
        raw = [np.concatenate([raw[0], ex[:, 0].astype(int)]), np.concatenate([raw[1], ex[:, 1]]),
               np.concatenate([raw[2], ex[:, 2].astype(int)]), np.concatenate([raw[3], ex[:, 3]])]
    dup_tol = 1e-3 * float(np.min(S.spacing))
    struts = _build_struts(curve, raw, angle_tol, dup_tol)

    # kinks
    kinks = []
    kthr = 1.0 / (sigma * ts * (1 + kink_tol)) if math.isfinite(ts) else math.inf
    kn = np.linalg.norm(S.K, axis=1)
    kbn = np.linalg.norm(S.K_before, axis=1)
    for i in np.nonzero(S.kmax >= kthr)[0]:
        K = S.K[i] if kn[i] >= kbn[i] else S.K_before[i]
        k = float(np.linalg.norm(K))
        kinks.append(Kink(int(S.comp[i]), float(S.s[i]), S.T[i].copy(), K / k, 1.0 / k))
    # closures of kinked segments: their one-sided end points
    seen = {(kk.comp, int(curve.components[kk.comp].locate(kk.s))) for kk in kinks}
    for ci, gi in sorted(seen):
        comp = curve.components[ci]
        g = comp.segments[gi]
        _, T, K = g.frame(np.array([0.0, g.length]))
        for j, loc in enumerate((0.0, g.length)):
            k = float(np.linalg.norm(K[j]))
            sk = float(comp.offsets[gi] + loc)
            if comp.closed and sk >= comp.length:
                sk = 0.0
            if k >= kthr and not any(kk.comp == ci and kk.s == sk for kk in kinks):
                kinks.append(Kink(ci, sk, T[j].copy(), K[j] / k, 1.0 / k))
    circ = None
    if math.isfinite(min_rho):
        i = int(np.argmin(rho))
        circ = (int(S.comp[i]), float(S.s[i]), float(rho[i]))
    rep = ThicknessReport(reach, min_rho, ts, sigma, struts, kinks, pd_min, realizing, circ,
                          samples, strut_tol, kink_tol)
    rep.families = _families(struts, 3.0 * h_max)
    return rep


def _build_struts(curve, raw, angle_tol, dup_tol):
    """Struts (both orientations) from candidate pairs whose chord is normal at both ends."""
    cx, sx, cy, ty = raw
    if len(sx) == 0:
        return []
    ev = _Evaluator(curve)
    Px, Tx = ev.points(cx, sx)
    Py, Ty = ev.points(cy, ty)
    psx = _pd_core(Px, Tx, _inward_many(curve, cx, sx), Py)[1]
    psy = _pd_core(Py, Ty, _inward_many(curve, cy, ty), Px)[1]
    ok = (psx <= angle_tol) & (psy <= angle_tol)
    d = (Px - Py)[ok]
    L = np.linalg.norm(d, axis=1)
    u = d / L[:, None]
    A = np.concatenate([cx[ok], cy[ok]])
    B = np.concatenate([cy[ok], cx[ok]])
    SA = np.concatenate([sx[ok], ty[ok]])
    SB = np.concatenate([ty[ok], sx[ok]])
    LL = np.concatenate([L, L])
    U = np.concatenate([u, -u])
    PA = np.concatenate([psx[ok], psy[ok]])
    PB = np.concatenate([psy[ok], psx[ok]])
    order = np.lexsort((SB, SA, B, A))
    out = []
    last = None
    for k in order:
        key = (int(A[k]), int(B[k]), float(SA[k]), float(SB[k]))
        if (last is not None and key[:2] == last[:2] and abs(key[2] - last[2]) <= dup_tol
                and abs(key[3] - last[3]) <= dup_tol):
            continue
        last = key
        out.append(Strut((key[0], key[2]), (key[1], key[3]), float(LL[k]), U[k].copy(),
                         float(PA[k]), float(PB[k])))
    return out


def _families(struts: list[Strut], link: float, min_run: int = 10) -> dict:
    """Group struts into families: connected sets in (x, y) arclength with >= min_run members.

    Two struts on the same component pair are linked when both endpoints move
    by at most ``link``; fans (fixed x, sliding y) stay connected this way.
    """
    from scipy.sparse import coo_matrix
    from scipy.sparse.csgraph import connected_components

    fam = {}
    groups: dict = {}
    for idx, st in enumerate(struts):
        groups.setdefault((st.x[0], st.y[0]), []).append(idx)
    new = list(struts)
    for (cx, cy), idxs in sorted(groups.items()):
        if len(idxs) < min_run:
            continue
        X = np.array([[struts[k].x[1], struts[k].y[1]] for k in idxs])
        pairs = cKDTree(X).query_pairs(link, p=np.inf, output_type="ndarray")
        n = len(idxs)
        g = coo_matrix((np.ones(len(pairs)), (pairs[:, 0], pairs[:, 1])), shape=(n, n))
        _, lab = connected_components(g, directed=False)
        comps = [np.nonzero(lab == c)[0] for c in np.unique(lab)]
        comps.sort(key=lambda m: (X[m, 0].min(), X[m, 1].min()))
        for m in comps:
            if len(m) < min_run:
                continue
            fid = len(fam)
            members = sorted((idxs[r] for r in m), key=lambda k: (struts[k].x[1], struts[k].y[1]))
            fam[fid] = {"x_comp": cx, "y_comp": cy, "members": members,
                        "x_range": (float(X[m, 0].min()), float(X[m, 0].max())),
                        "y_range": (float(X[m, 1].min()), float(X[m, 1].max()))}
            for k in members:
                st = new[k]
                new[k] = Strut(st.x, st.y, st.length, st.direction, st.psi_x, st.psi_y, fid)
    struts[:] = new
    return fam


def inter_component_distance(curve: Curve, a: int, b: int, samples: int = 2048) -> float:
    """Minimum distance between two components (sampled, then refined locally)."""
    S = sample_arrays(curve, samples)
    ia = np.nonzero(S.comp == a)[0]
    ib = np.nonzero(S.comp == b)[0]
    tree = cKDTree(S.P[ib])
    d, j = tree.query(S.P[ia])
    order = np.argsort(d)[: min(8, len(d))]
    ca, cb = curve.component(a), curve.component(b)
    sa0, sb0 = S.s[ia[order]], S.s[ib[j[order]]]
    ha, hb = S.spacing[ia[order]], S.spacing[ib[j[order]]]

    def window(c, s0, h):
        lo, hi = s0 - h, s0 + h
        if not c.closed:
            lo, hi = np.maximum(lo, 0.0), np.minimum(hi, c.length)
        return lo, hi

    la, ua = window(ca, sa0, ha)
    lb, ub = window(cb, sb0, hb)

    def outer(sa):
        Pa = ca.frame(sa)[0]
        return _golden(lambda sb: np.linalg.norm(cb.frame(sb)[0] - Pa, axis=1), lb, ub, iters=50)[1]

    _, v = _golden(outer, la, ua, iters=50)
    return float(min(np.min(d), np.min(v)))
