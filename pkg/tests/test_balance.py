import math

import numpy as np
import pytest

from ropecrit.balance import (BalanceGrid, FunctionTension, KinkTension, StrutAtom, StrutFamily,
                              StrutMeasure, balance_residual, frenet_balance_check, solve_balance,
                              strut_force, virtual_tangent, virtual_tangent_at)
from ropecrit.clasp import kinked_clasp_tension
from ropecrit.curves import Arc, Component, Curve, Line, circle
from ropecrit.strutfree import StrutFreeKind, build_strutfree
from ropecrit.thickness import compute_thickness

from _cache import clasp, clasp_balance, clasp_check, clasp_curve, helix_pair

GL_X, GL_W = np.polynomial.legendre.leggauss(10)


def segment_curve(L=1.0):
    return Curve([Component([Line((0, 0, 0), (L, 0, 0))])])


def antipodal_family(r=0.5, density=1.0):
    """Each unordered antipodal pair once: x over half the circle."""
    L = 2 * math.pi * r
    return StrutFamily(0, 0, 0.0, math.pi * r, lambda s: np.mod(s + math.pi * r, L),
                       lambda s: np.full(np.shape(s), density))


def delta_arc(theta=0.5, sigma=1.0):
    """Kinked arc of turning angle 2 theta between unit segments, and its mirror image.

    The mirror sits at unit distance across the arc midpoint so a single strut
    atom of weight sin(theta) joins the two midpoints along -N.
    """
    def chain(flip):
        ctr = (0.0, 1.0 - sigma, 0.0) if flip else (0.0, sigma, 0.0)
        e1 = (0.0, 1.0, 0.0) if flip else (0.0, -1.0, 0.0)
        arc = Arc(ctr, sigma, e1, (1, 0, 0), -theta, theta)
        p0, t0, _ = arc.start()
        p1, t1, _ = arc.end()
        return Component([Line(p0 - t0, p0), arc, Line(p1, p1 + t1)])

    curve = Curve([chain(False), chain(True)])
    mid = 1.0 + sigma * theta

    def fn(c, s):
        d = s - mid
        arg = theta - np.abs(d) / sigma
        on = arg > 0
        return (np.where(on, 1.0 - np.cos(arg), 0.0),
                np.where(on, -np.sign(d) * np.sin(arg) / sigma, 0.0))

    mu = StrutMeasure([StrutAtom((0, mid), (1, mid), math.sin(theta))], [])
    return curve, mu, FunctionTension(fn)


# ---------------------------------------------------------------------------
# strut force


def test_zero_measure_zero_force():
    f = strut_force(circle(0.5), StrutMeasure())
    assert f.vec.size == 0
    G = BalanceGrid(circle(0.5), 64)
    assert np.all(f.cell_totals(G) == 0)


def test_circle_antipodal_force_is_minus_curvature():
    c = circle(0.5)
    G = BalanceGrid(c, 256)
    tot = strut_force(c, StrutMeasure([], [antipodal_family()]), G).cell_totals(G)
    nodes = G.nodes[0][:-1]
    widths = np.diff(np.concatenate([[G.mids[0][-1] - c.components[0].length], G.mids[0]]))
    P, _, K = c.frame(0, nodes)
    dens = tot / widths[:, None]
    # density 4x = -kappa, to the order of the cell averaging
    assert np.max(np.abs(dens - 4 * P)) <= 1e-4
    assert np.max(np.abs(dens + K)) <= 1e-4
    assert np.allclose(np.sum(tot, axis=0), 0.0, atol=1e-12)


def test_kinked_clasp_tip_atom():
    sol = clasp(0.8, 1.1)
    curve, mu, _ = kinked_clasp_tension(sol)
    f = strut_force(curve, mu)
    assert len(f.vec) == 2
    assert np.linalg.norm(f.vec, axis=1) == pytest.approx([1.6, 1.6], abs=1e-12)
    P0 = curve.frame(0, [f.s[0]])[0][0]
    P1 = curve.frame(1, [f.s[1]])[0][0]
    d = (P0 - P1) / np.linalg.norm(P0 - P1)
    assert np.allclose(f.vec[0] / 1.6, d, atol=1e-12)
    assert np.allclose(f.vec[0], -f.vec[1])


# ---------------------------------------------------------------------------
# virtual tangent


def test_zero_tension_gives_tangent():
    c = clasp(0.8, 0.8).curve()
    vt = virtual_tangent(c, KinkTension.zero(), 0.8, 128)
    for comp in (0, 1):
        m = vt.comp == comp
        assert np.allclose(vt.V[m], c.frame(comp, vt.s[m])[1], atol=1e-15)


def test_unit_circle_full_tension_vanishes():
    c = circle(1.0)
    one = FunctionTension(lambda cc, s: (1.0, 0.0))
    assert np.max(np.abs(virtual_tangent(c, one, 1.0, 256).V)) <= 1e-9
    s = np.linspace(0, 2 * math.pi, 50, endpoint=False)
    assert np.max(np.abs(virtual_tangent_at(c, one, 1.0, 0, s))) <= 1e-15


@pytest.mark.parametrize("V0", [(0.3, 0.4, 0.0), (-0.9, 0.1, 0.0), (0.0, 0.0, 0.0)])
def test_circle_tension_reproduces_constant_v(V0):
    c = circle(1.0)
    V0 = np.array(V0)

    def fn(cc, s):
        _, T, K = c.frame(cc, s)
        return 1.0 - T @ V0, -(K @ V0)

    phi = FunctionTension(fn)
    assert np.max(np.abs(virtual_tangent(c, phi, 1.0, 256).V - V0)) <= 1e-9
    s = np.linspace(0, 2 * math.pi, 64, endpoint=False)
    assert np.max(np.abs(virtual_tangent_at(c, phi, 1.0, 0, s) - V0)) <= 1e-14


def test_tension_off_kinks_rejected():
    c = circle(2.0)
    with pytest.raises(ValueError):
        virtual_tangent(c, FunctionTension(lambda cc, s: (0.5, 0.0)), 1.0, 64)


# ---------------------------------------------------------------------------
# residual


def test_segment_residual_zero():
    cert = balance_residual(segment_curve(), StrutMeasure(), KinkTension.zero(), 0.5)
    assert cert.residual == 0.0 and cert.feasible


def test_delta_arc_residual():
    curve, mu, phi = delta_arc(0.5, 1.0)
    cert = balance_residual(curve, mu, phi, 1.0)
    assert cert.residual <= 1e-8
    assert cert.feasible
    f = strut_force(curve, mu)
    _, _, K = curve.frame(0, [f.s[0]])
    assert np.allclose(f.vec[0], -2 * math.sin(0.5) * K[0], atol=1e-12)


def test_delta_arc_wrong_mass_fails():
    curve, mu, phi = delta_arc(0.5, 1.0)
    at = mu.atoms[0]
    bad = StrutMeasure([StrutAtom(at.x, at.y, 1.1 * at.weight)], [])
    assert not balance_residual(curve, bad, phi, 1.0).feasible


def test_kinked_clasp_certificate():
    curve, mu, phi = kinked_clasp_tension(clasp(0.8, 1.1))
    cert = balance_residual(curve, mu, phi, 1.1)
    assert cert.residual <= 1e-8 and cert.feasible
    assert cert.total_mass == pytest.approx(1.6)  # weight tau on each orientation


def test_circle_strut_certificate():
    c = circle(0.5)
    cert = balance_residual(c, StrutMeasure([], [antipodal_family()]), KinkTension.zero(), 0.5)
    assert cert.feasible
    wrong = balance_residual(c, StrutMeasure([], [antipodal_family(density=0.5)]),
                             KinkTension.zero(), 0.5)
    assert not wrong.feasible


def test_certificate_json_shape():
    curve, mu, phi = kinked_clasp_tension(clasp(0.8, 1.1))
    d = balance_residual(curve, mu, phi, 1.1, grid=64).to_json()
    assert {"feasible", "residual", "mu", "phi", "endpoint_residuals"} <= set(d)
    assert d["mu"]["atoms"][0]["weight"] == pytest.approx(0.8)
    assert all(p["phi"] >= 0 for p in d["phi"])


# ---------------------------------------------------------------------------
# synthesis


def test_solve_circle_diameter_one():
    c = circle(0.5)
    rep = compute_thickness(c, 0.5, 2048)
    assert rep.ts == pytest.approx(1.0, abs=1e-12)
    cert = solve_balance(c, 0.5, rep)
    assert cert.feasible and cert.residual <= 1e-6
    kink_only = solve_balance(c, 0.5, None)
    assert kink_only.feasible


def test_solve_segment():
    c = segment_curve()
    cert = solve_balance(c, 0.5, compute_thickness(c, 0.5, 64))
    assert cert.feasible and cert.residual == 0.0
    assert cert.total_mass == 0.0


def test_solve_helix():
    c, rep = helix_pair(1.2)
    assert rep.ts == pytest.approx(1.0, abs=1e-6)
    cert = solve_balance(c, 0.5, rep)
    assert cert.feasible and cert.residual <= 1e-6
    assert cert.mu.families and cert.mu.min_weight() >= 0


def test_solve_generic_clasp():
    cert = clasp_balance(0.8, 0.8)
    assert cert.feasible and cert.residual <= 1e-6
    assert cert.mu.min_weight() >= -1e-12


def test_solve_kinked_clasp_snaps_tip_atom():
    # the tip struts are located to about 1e-8 off the junction at the tip
    cert = clasp_balance(0.8, 1.1)
    assert cert.feasible and cert.residual <= 1e-6
    assert cert.total_mass == pytest.approx(1.6, rel=1e-8)
    tips = [0.5 * comp.length for comp in clasp_curve(0.8, 1.1).components]
    for a in cert.mu.atoms:
        assert a.x[1] == tips[a.x[0]] and a.y[1] == tips[a.y[0]]


def test_solve_requires_unit_thickness():
    c = circle(1.0)
    with pytest.raises(ValueError):
        solve_balance(c, 0.5, compute_thickness(c, 0.5, 256))


def test_solver_is_deterministic():
    c = circle(0.5)
    rep = compute_thickness(c, 0.5, 512)
    a = solve_balance(c, 0.5, rep, grid=128)
    b = solve_balance(c, 0.5, rep, grid=128)
    assert a.residual == b.residual
    assert np.array_equal(a.cell_residuals, b.cell_residuals)
    assert a.to_json() == b.to_json()


# ---------------------------------------------------------------------------
# Frenet form


def test_frenet_planar_kinked_arc():
    c = Curve([Component([Arc((0, 0, 0), 1.0, (1, 0, 0), (0, 1, 0), 0.0, 2.0)])])
    A, s0 = 0.7, 0.4
    phi = FunctionTension(lambda cc, s: (1 - A * np.cos(s - s0), A * np.sin(s - s0)))
    zero = lambda s: np.zeros_like(s)
    chk = frenet_balance_check(c, phi, zero, zero, 1.0)
    assert np.max(np.abs(chk.normal)) <= 1e-7
    assert np.max(np.abs(chk.binormal)) <= 1e-7


@pytest.mark.parametrize("tau_h", [0.2, 0.6, 0.9])
def test_frenet_helix_constant_tension(tau_h):
    curve, phi = build_strutfree(StrutFreeKind.helix(tau_h))
    zero = lambda s: np.zeros_like(s)
    chk = frenet_balance_check(curve, phi, zero, zero, 1.0)
    assert np.max(np.abs(chk.normal)) <= 1e-7
    # nested central differences of the torsion
    assert np.max(np.abs(chk.binormal)) <= 1e-5


def test_frenet_binormal_atom_flagged():
    curve, phi = build_strutfree(StrutFreeKind.helix(0.6))
    zero = lambda s: np.zeros_like(s)
    chk = frenet_balance_check(curve, phi, zero, zero, 1.0, atoms=[(3.0, 0.0, 0.5), (5.0, 0.0, 0.0)])
    assert chk.jumps[0]["flag"] and not chk.jumps[1]["flag"]


def test_frenet_requires_curvature():
    zero = lambda s: np.zeros_like(s)
    with pytest.raises(ValueError):
        frenet_balance_check(segment_curve(), KinkTension.zero(), zero, zero, 1.0)


# ---------------------------------------------------------------------------
# properties


def bump_field(rng, curve, modes=3):
    """xi(c, s) = sin^2(pi s / L) times a random trigonometric polynomial of period L.

    Value and derivative vanish at both ends, so the field is compatible with
    pinned ends, fixed tangents and closed components alike.
    """
    coef = [rng.normal(size=(2, modes + 1, 3)) for _ in curve.components]

    def xi(c, s, order=0):
        L = curve.components[c].length
        s = np.asarray(s, dtype=float)
        w = 2 * math.pi / L
        f = [np.zeros((len(s), 3)) for _ in range(3)]
        for j in range(modes + 1):
            a, b = coef[c][0, j], coef[c][1, j]
            cj, sj = np.cos(j * w * s)[:, None], np.sin(j * w * s)[:, None]
            f[0] += cj * a + sj * b
            f[1] += j * w * (-sj * a + cj * b)
            f[2] -= (j * w) ** 2 * (cj * a + sj * b)
        c2, s2 = np.cos(w * s)[:, None], np.sin(w * s)[:, None]
        g = [(1 - c2) / 2, w / 2 * s2, w * w / 2 * c2]
        if order == 0:
            return g[0] * f[0]
        if order == 1:
            return g[1] * f[0] + g[0] * f[1]
        return g[2] * f[0] + 2 * g[1] * f[1] + g[0] * f[2]

    return xi


def segment_quadrature(curve, c, panels=64):
    comp = curve.components[c]
    S, W = [], []
    for a, b in zip(comp.offsets[:-1], comp.offsets[1:]):
        edges = np.linspace(a, b, panels + 1)
        h = 0.5 * np.diff(edges)
        S.append(((edges[:-1] + edges[1:]) / 2)[:, None] + h[:, None] * GL_X)
        W.append(h[:, None] * GL_W)
    return np.concatenate([x.ravel() for x in S]), np.concatenate([w.ravel() for w in W])


def pairing_direct(curve, mu, xi):
    """Integral of <x - y, xi_x - xi_y> over both orientations by independent quadrature."""
    tot = 0.0
    for at in mu.atoms:
        d = curve.frame(at.x[0], [at.x[1]])[0][0] - curve.frame(at.y[0], [at.y[1]])[0][0]
        dx = xi(at.x[0], [at.x[1]])[0] - xi(at.y[0], [at.y[1]])[0]
        tot += 2 * at.weight * float(d @ dx)
    for f in mu.families:
        edges = np.linspace(f.s0, f.s1, 401)
        inner = np.asarray(f.breaks, dtype=float)
        edges = np.union1d(edges, inner[(inner > f.s0) & (inner < f.s1)])
        h = 0.5 * np.diff(edges)
        s = (((edges[:-1] + edges[1:]) / 2)[:, None] + h[:, None] * GL_X).ravel()
        w = (h[:, None] * GL_W).ravel()
        t = f.partner(s)
        d = curve.frame(f.x_comp, s)[0] - curve.frame(f.y_comp, t)[0]
        dx = xi(f.x_comp, s) - xi(f.y_comp, t)
        tot += 2 * float(np.sum(w * f.density(s) * np.sum(d * dx, axis=1)))
    return tot


def pairing_force(curve, mu, xi, grid=None):
    f = strut_force(curve, mu, grid)
    tot = 0.0
    for c in np.unique(f.comp):
        m = f.comp == c
        tot += float(np.sum(xi(int(c), f.s[m]) * f.vec[m]))
    return tot


def helix_measure():
    return solve_balance(*helix_pair(1.2)[:1], 0.5, helix_pair(1.2)[1]).mu


def test_pairing_identity():
    rng = np.random.default_rng(11)
    cases = [(circle(0.5), StrutMeasure([], [antipodal_family()]))]
    curve, mu, _ = kinked_clasp_tension(clasp(0.8, 1.1))
    cases.append((curve, mu))
    hc = helix_pair(1.2)[0]
    cases.append((hc, helix_measure()))
    for curve, mu in cases:
        G = BalanceGrid(curve, 128)
        for _ in range(50):
            xi = bump_field(rng, curve)
            a = pairing_direct(curve, mu, xi)
            assert abs(a - pairing_force(curve, mu, xi)) <= 1e-9 * mu.total_mass()
            assert abs(a - pairing_force(curve, mu, xi, G)) <= 1e-9 * mu.total_mass()


def variational_defect(curve, mu, phi, sigma, xi):
    dl = kink = 0.0
    for c in range(len(curve.components)):
        s, w = segment_quadrature(curve, c)
        _, T, K = curve.frame(c, s)
        d1, d2 = xi(c, s, 1), xi(c, s, 2)
        dl += float(np.sum(w * np.sum(d1 * T, axis=1)))
        p = phi.values(c, s)[0]
        k = np.linalg.norm(K, axis=1)
        N = np.where(k[:, None] > 0, K / np.where(k > 0, k, 1)[:, None], 0.0)
        kink += float(np.sum(w * p * (2 * np.sum(d1 * T, axis=1) - sigma * np.sum(d2 * N, axis=1))))
    return dl - pairing_force(curve, mu, xi) - kink


def exact_certificates():
    out = [("circle", circle(0.5), StrutMeasure([], [antipodal_family()]), KinkTension.zero(), 0.5)]
    curve, mu, phi = kinked_clasp_tension(clasp(0.8, 1.1))
    out.append(("kinked_clasp", curve, mu, phi, 1.1))
    out.append(("delta_arc",) + delta_arc(0.7, 1.0) + (1.0,))
    for kind in (StrutFreeKind.circle((0.3, 0.4, 0.0)), StrutFreeKind.helix(0.6),
                 StrutFreeKind.wave(1.2)):
        curve, phi = build_strutfree(kind)
        out.append((kind.kind.value, curve, StrutMeasure(), phi, 1.0))
    return out


@pytest.mark.parametrize("name,curve,mu,phi,sigma", exact_certificates(),
                         ids=[e[0] for e in exact_certificates()])
def test_variational_identity(name, curve, mu, phi, sigma):
    assert balance_residual(curve, mu, phi, sigma).feasible
    rng = np.random.default_rng(5)
    worst = max(abs(variational_defect(curve, mu, phi, sigma, bump_field(rng, curve)))
                for _ in range(20))
    assert worst <= 1e-6


def synthesized_defect(curve, sigma, report, grid):
    cert = solve_balance(curve, sigma, report, grid=grid)
    assert cert.feasible
    rng = np.random.default_rng(9)
    return max(abs(variational_defect(curve, cert.mu, cert.phi, sigma, bump_field(rng, curve)))
               for _ in range(20))


def test_variational_identity_synthesized_converges():
    # a discrete certificate meets the identity only to its discretization order:
    # second order for the helix, first order where kinks and strut families meet
    c, rep = helix_pair(1.2)
    a, b = synthesized_defect(c, 0.5, rep, 256), synthesized_defect(c, 0.5, rep, 512)
    assert b <= 5e-5 and a / b >= 3.5
    curve = clasp(0.8, 0.8).curve(1.0)
    rep = clasp_check(0.8, 0.8).report
    a, b = synthesized_defect(curve, 0.8, rep, 256), synthesized_defect(curve, 0.8, rep, 512)
    assert b <= 5e-3 and a / b >= 1.8


def test_kink_free_arc_forces_minus_kappa():
    c, rep = helix_pair(1.2)
    cert = solve_balance(c, 0.5, rep)
    G = BalanceGrid(c, 512)
    tot = strut_force(c, cert.mu, G).cell_totals(G)
    for comp in (0, 1):
        nodes = G.nodes[comp]
        first = G.offset[comp]
        interior = np.arange(1, len(nodes) - 1)
        widths = G.mids[comp][interior] - G.mids[comp][interior - 1]
        K = c.frame(comp, nodes[interior])[2]
        dens = tot[first + interior] / widths[:, None]
        mid = slice(len(interior) // 10, -len(interior) // 10)
        assert np.max(np.abs(dens[mid] + K[mid])) <= 1e-3
