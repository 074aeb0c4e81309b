import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ropecrit.curves import (Arc, Component, Curve, EndpointConstraint, Line, circle, double_helix,
                             total_length)
from ropecrit.thickness import Kink, compute_thickness
from ropecrit.variation import (DeformationField, check_compatible, deform, delta_length,
                                delta_radius, delta_thickness, random_analytic_field)

from _cache import clasp_check, clasp_curve, unit_circle_report


def plane_end_curve():
    """Segment whose start slides in the plane z = 0 and whose end has a fixed tangent."""
    start = EndpointConstraint((0, 0, 0), [(1, 0, 0), (0, 1, 0)], None)
    end = EndpointConstraint((0, 0, 1), [], (0, 0, 1))
    return Curve([Component([Line((0, 0, 0), (0, 0, 1))], False, [start, end])])


def add_fields(f, g):
    return DeformationField.analytic(lambda P: f.xi(P) + g.xi(P), lambda P: f.jac(P) + g.jac(P),
                                     lambda P: f.hess(P) + g.hess(P))


def scale_field(f, a):
    return DeformationField.analytic(lambda P: a * f.xi(P), lambda P: a * f.jac(P),
                                     lambda P: a * f.hess(P))


def rigid_fields():
    return [DeformationField.translation((0.3, -1.2, 0.5)),
            DeformationField.rotation((0.2, 0.5, -1.0)),
            DeformationField.affine((1.0, 0.0, -0.4), DeformationField.rotation((1, 1, 0)).matrix)]


# ---------------------------------------------------------------------------
# compatibility


def test_zero_field_compatible():
    zero = DeformationField.translation((0, 0, 0))
    assert check_compatible(clasp_curve(0.8, 0.8), zero).ok
    assert check_compatible(plane_end_curve(), zero).ok


def test_translation_in_plane_with_fixed_tangent():
    c = plane_end_curve()
    # the fixed-tangent end is pinned, so only the start may move
    assert not check_compatible(c, DeformationField.translation((1, 2, 0))).ok
    pinned_end = Curve([Component([Line((0, 0, 0), (0, 0, 1))], False,
                                  [EndpointConstraint((0, 0, 0), [(1, 0, 0), (0, 1, 0)], None),
                                   EndpointConstraint((0, 0, 1), [(1, 0, 0), (0, 1, 0)],
                                                      (0, 0, 1))])])
    assert check_compatible(pinned_end, DeformationField.translation((1, 2, 0))).ok
    rep = check_compatible(pinned_end, DeformationField.translation((0, 0, 1)))
    assert not rep.ok and len(rep.violations) == 2


def test_rotation_breaks_fixed_tangent():
    c = Curve([Component([Line((0, 0, 0), (0, 0, 1))], False,
                         [EndpointConstraint((0, 0, 0), np.eye(3), (0, 0, 1)),
                          EndpointConstraint((0, 0, 1), np.eye(3), None)])])
    assert check_compatible(c, DeformationField.rotation((0, 0, 1))).ok
    rep = check_compatible(c, DeformationField.rotation((1, 0, 0)))
    assert not rep.ok and "H1" in rep.violations[0]


def test_euler_incompatible_on_clasp():
    rep = check_compatible(clasp_curve(0.8, 0.8), DeformationField.euler())
    assert not rep.ok
    assert len(rep.violations) == 4


def test_closed_curves_always_compatible():
    assert check_compatible(circle(1.0), DeformationField.euler()).ok


# ---------------------------------------------------------------------------
# length


def test_delta_length_examples():
    assert delta_length(circle(1.0), DeformationField.euler()) == pytest.approx(2 * math.pi,
                                                                               rel=1e-13)
    c = clasp_curve(0.8, 0.8)
    for f in rigid_fields():
        assert abs(delta_length(c, f)) <= 1e-10
    assert delta_length(c, DeformationField.euler()) == pytest.approx(total_length(c), rel=1e-12)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_delta_length_finite_difference(seed):
    c = clasp_curve(0.8, 0.8)
    f = random_analytic_field(np.random.default_rng(seed), scale=0.3)
    d = delta_length(c, f)
    L = total_length(c)
    errs = [abs((total_length(deform(c, f, t)) - L) / t - d) for t in (1e-3, 1e-4)]
    assert errs[1] <= 1e-3 * max(1.0, abs(d))
    # first-order convergence in t
    assert 5 < errs[0] / errs[1] < 20


def test_sampled_field_matches_analytic():
    c = double_helix(1.2, 1.0)
    f = random_analytic_field(np.random.default_rng(4), scale=0.5)
    table = {}
    for k, comp in enumerate(c.components):
        s = np.linspace(0, comp.length, 801)
        table[k] = (s,) + f.along(c, k, s)
    g = DeformationField.sampled(table)
    assert delta_length(c, g) == pytest.approx(delta_length(c, f), rel=1e-8, abs=1e-10)
    assert g.fd_consistency() <= 1e-3
    fine = {k: (np.linspace(0, cc.length, 3201),) + f.along(c, k, np.linspace(0, cc.length, 3201))
            for k, cc in enumerate(c.components)}
    # centered differences are second order in the sample spacing
    ratio = g.fd_consistency() / DeformationField.sampled(fine).fd_consistency()
    assert 12 < ratio < 20


def test_field_json():
    assert DeformationField.from_json({"type": "euler"}).matrix == pytest.approx(np.eye(3))
    f = DeformationField.from_json({"type": "rotation", "axis": [0, 0, 1]})
    assert f.at_points([[1.0, 0.0, 0.0]])[0] == pytest.approx([0, 1, 0])
    with pytest.raises(ValueError):
        DeformationField.from_json({"type": "shear"})


def test_affine_rejects_symmetric_generator():
    with pytest.raises(ValueError):
        DeformationField.affine(rotation=np.eye(3))


# ---------------------------------------------------------------------------
# radius


def arc_kink(R=0.7):
    c = Curve([Component([Arc((0.2, 0.1, -0.3), R, (1, 0, 0), (0, 0.6, 0.8), 0.0, 2.0)])])
    _, T, K = c.frame(0, [0.9])
    return c, Kink(0, 0.9, T[0], K[0] / np.linalg.norm(K[0]), R)


def test_delta_radius_examples():
    c, k = arc_kink()
    assert delta_radius(k, DeformationField.euler()) == pytest.approx(0.7, rel=1e-14)
    for f in rigid_fields():
        assert abs(delta_radius(k, f)) <= 1e-14


def test_delta_radius_finite_difference():
    c, k = arc_kink()
    f = random_analytic_field(np.random.default_rng(3), scale=0.4)
    d = delta_radius(k, f, c)
    t = 1e-6
    m = deform(c, f, t)
    K = m.frame(0, [0.9])[2][0]
    assert (1 / np.linalg.norm(K) - 0.7) / t == pytest.approx(d, rel=1e-4)


def test_delta_radius_needs_curve_for_analytic():
    _, k = arc_kink()
    with pytest.raises(ValueError):
        delta_radius(k, random_analytic_field(np.random.default_rng(0)))


# ---------------------------------------------------------------------------
# thickness


def test_euler_on_circle():
    r = unit_circle_report()
    d = delta_thickness(circle(1.0), 0.5, DeformationField.euler(), r, detail=True)
    assert d.value == pytest.approx(2.0, abs=1e-9)
    assert d.strut_min == pytest.approx(2.0, abs=1e-9)
    assert d.kink_min == pytest.approx(2.0, abs=1e-9)


def test_half_strut_variant_breaks_homogeneity():
    r = unit_circle_report()
    d = delta_thickness(circle(1.0), 0.5, DeformationField.euler(), r, half_strut=True, detail=True)
    assert d.half_factor and d.strut_min == pytest.approx(1.0, abs=1e-9)
    assert d.value == pytest.approx(1.0, abs=1e-9) and d.value != pytest.approx(r.ts)


@pytest.mark.parametrize("tau,sigma", [(0.8, 0.8), (0.8, 1.1)])
def test_euler_on_clasp_equals_thickness(tau, sigma):
    r = clasp_check(tau, sigma).report
    d = delta_thickness(clasp_curve(tau, sigma), sigma, DeformationField.euler(), r)
    assert d == pytest.approx(r.ts, abs=1e-9)


def test_rigid_motions_do_not_change_thickness():
    for c, sig, r in ((circle(1.0), 0.5, unit_circle_report()),
                      (clasp_curve(0.8, 0.8), 0.8, clasp_check(0.8, 0.8).report)):
        for f in rigid_fields():
            assert abs(delta_thickness(c, sig, f, r)) <= 1e-10


def test_finite_difference_on_generic_clasp():
    c = clasp_curve(0.8, 0.8)
    r = clasp_check(0.8, 0.8).report
    f = random_analytic_field(np.random.default_rng(1), scale=0.3)
    d = delta_thickness(c, 0.8, f, r)
    t = 1e-5
    fd = (compute_thickness(deform(c, f, t), 0.8, 4096).ts - r.ts) / t
    assert fd == pytest.approx(d, rel=1e-3)


def test_thickness_variation_errors():
    r = unit_circle_report()
    with pytest.raises(ValueError):
        delta_thickness(circle(1.0), 0.6, DeformationField.euler(), r)
    seg = Curve([Component([Line((0, 0, 0), (1, 0, 0))])])
    rs = compute_thickness(seg, 0.5, 32)
    assert delta_thickness(seg, 0.5, DeformationField.euler(), rs) == 0.0


def superlinear_pairs(n):
    rng = np.random.default_rng(2025)
    return [(random_analytic_field(rng, scale=0.3), random_analytic_field(rng, scale=0.3))
            for _ in range(n)]


def test_superlinearity():
    c = clasp_curve(0.8, 0.8)
    r = clasp_check(0.8, 0.8).report
    for f, g in superlinear_pairs(100):
        a, b = delta_thickness(c, 0.8, f, r), delta_thickness(c, 0.8, g, r)
        ab = delta_thickness(c, 0.8, add_fields(f, g), r)
        assert ab >= a + b - 1e-12
        assert delta_thickness(c, 0.8, scale_field(f, 2.5), r) == pytest.approx(2.5 * a,
                                                                                 rel=1e-13)


@settings(max_examples=20)
@given(st.floats(0.0, 10.0), st.integers(0, 10_000))
def test_positive_homogeneity(a, seed):
    c = circle(1.0)
    r = unit_circle_report()
    f = random_analytic_field(np.random.default_rng(seed), scale=0.5)
    base = delta_thickness(c, 0.5, f, r)
    assert delta_thickness(c, 0.5, scale_field(f, a), r) == pytest.approx(a * base, rel=1e-12,
                                                                          abs=1e-14)
