import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from roughslip.dataset import DatasetConfig, build_geometry, draw_geometry, random_boundary_data
from roughslip.errors import DegenerateFlowError, GeometryError
from roughslip.geometry import LineSegment, box_with_wall, circle, discretize_parametric
from roughslip.riesz import (
    RieszPair,
    alignment_toy,
    direct_slip,
    intermediate_representors,
    intermediate_representors_quadrature,
    micro_error,
    riesz_pair,
    slip_amount,
    solve_adjoint,
)
from roughslip.stokes_bie import assemble, line_average, project_zero_flux, solve_dirichlet, weighted_inner


def zero(x):
    return np.zeros_like(np.asarray(x, dtype=float))


def flat_box(c=0.25, J=256, width=1.0, height=1.0):
    box = box_with_wall(zero, zero, zero, width, height, 0.1)
    curve = box.discretize(J)
    seg = LineSegment(np.array([0.1, c]), np.array([width - 0.1, c]))
    return curve, seg


def random_domains(n, J=128, seed=3):
    cfg = DatasetConfig(seed=seed)
    out, i = [], 0
    while len(out) < n:
        try:
            out.append(build_geometry(cfg, draw_geometry(cfg, i), J))
        except GeometryError:
            pass
        i += 1
    return out


def ellipse_off_center(J):
    return discretize_parametric(lambda t: np.stack([0.3 + 1.2 * np.cos(t), 0.1 + 0.8 * np.sin(t)], axis=1), J)


# -- closed-form intermediate representors --------------------------------------


def test_closed_form_matches_quadrature_on_circle():
    c = circle(128)
    seg = LineSegment(np.array([-0.3, 0.0]), np.array([0.3, 0.0]))
    closed = intermediate_representors(c, seg)
    oracle = intermediate_representors_quadrature(c, seg, n=200, panels=50)
    for a, b in zip(closed, oracle):
        np.testing.assert_allclose(a, b, atol=1e-10)


def test_closed_form_matches_quadrature_on_box():
    curve, seg = random_domains(1)[0]
    for a, b in zip(intermediate_representors(curve, seg), intermediate_representors_quadrature(curve, seg)):
        assert np.max(np.abs(a - b)) <= 1e-10 * max(1.0, np.max(np.abs(b)))


def test_reflection_symmetry():
    J = 128
    base = ellipse_off_center(J)
    R = np.diag([-1.0, 1.0])
    # reflected curve traversed counter-clockwise: node j maps to node -j
    refl = discretize_parametric(lambda t: (np.stack([0.3 + 1.2 * np.cos(-t), 0.1 + 0.8 * np.sin(-t)], axis=1)) @ R, J)
    seg = LineSegment(np.array([0.0, 0.2]), np.array([0.7, 0.3]))
    seg_r = LineSegment(R @ seg.a, R @ seg.b)
    perm = (-np.arange(J)) % J
    (rt1, rt2), (rt1r, rt2r) = intermediate_representors(base, seg), intermediate_representors(refl, seg_r)
    np.testing.assert_allclose(rt1r[perm], rt1 @ R, atol=1e-12)
    # the segment normal (tangent turned clockwise) flips under the mirror map
    np.testing.assert_allclose(rt2r[perm], -rt2 @ R, atol=1e-12)
    pa, pb = riesz_pair(base, seg), riesz_pair(refl, seg_r)
    np.testing.assert_allclose(pb.r1[perm], pa.r1 @ R, atol=1e-9)


def test_far_field_decay_of_rt2():
    seg = LineSegment(np.array([-0.05, 0.0]), np.array([0.05, 0.0]))
    norms = []
    direction = np.array([np.cos(0.6), np.sin(0.6)])
    for d in (2.0, 4.0):
        c = circle(16, radius=0.01, center=d * direction)
        norms.append(np.linalg.norm(intermediate_representors(c, seg, min_gap=0.0)[1][5]))
    assert norms[0] / norms[1] == pytest.approx(4.0, rel=0.2)


def test_clearance_guard():
    c = circle(64)
    with pytest.raises(GeometryError):
        intermediate_representors(c, LineSegment(np.array([-0.999, 0.0]), np.array([0.0, 0.0])))


# -- adjoint solves and duality ----------------------------------------------------


def test_zero_rhs_gives_zero_representor():
    curve, _ = flat_box(J=128)
    assert np.all(solve_adjoint(assemble(curve), np.zeros((curve.J, 2))) == 0.0)


def test_duality_on_random_domains():
    rng = np.random.default_rng(0)
    for curve, seg in random_domains(4):
        sys = assemble(curve)
        pair = riesz_pair(curve, seg, sys)
        for _ in range(5):
            h = random_boundary_data(curve, rng)
            l1, l2 = line_average(curve, solve_dirichlet(sys, h), seg)
            m1, m2 = pair.functionals(h)
            assert abs(m1 - l1) <= 1e-8 * abs(l1)
            assert abs(m2 - l2) <= 1e-8 * abs(l2)


# -- slip amounts -------------------------------------------------------------------


def test_couette_slip_equals_line_offset():
    curve, seg = flat_box(c=0.25, J=256)
    h = np.stack([curve.x[:, 1], np.zeros(curve.J)], axis=1)
    assert slip_amount(riesz_pair(curve, seg), h) == pytest.approx(0.25, abs=1e-6)


@settings(max_examples=10, deadline=None)
@given(scale=st.floats(1e-3, 1e3), seed=st.integers(0, 1000))
def test_slip_is_scale_invariant(scale, seed):
    curve, seg = flat_box(J=128)
    pair = riesz_pair(curve, seg)
    h = random_boundary_data(curve, np.random.default_rng(seed))
    h[:, 0] += curve.x[:, 1]
    assert slip_amount(pair, scale * h) == pytest.approx(slip_amount(pair, h), rel=1e-12)


def test_slip_matches_direct_path_on_sine_wall():
    amp, lam = 0.03, 0.25
    f = lambda x: amp * np.sin(2 * np.pi * x / lam) ** 3  # noqa: E731
    df = lambda x: amp * 3 * np.sin(2 * np.pi * x / lam) ** 2 * np.cos(2 * np.pi * x / lam) * 2 * np.pi / lam  # noqa: E731
    ddf = lambda x: amp * (2 * np.pi / lam) ** 2 * (  # noqa: E731
        6 * np.sin(2 * np.pi * x / lam) * np.cos(2 * np.pi * x / lam) ** 2 - 3 * np.sin(2 * np.pi * x / lam) ** 3
    )
    box = box_with_wall(f, df, ddf, 1.0, 1.0, 0.1)
    curve = box.discretize(256)
    seg = LineSegment(np.array([0.1, 0.25]), np.array([0.9, 0.25]))
    sys = assemble(curve)
    h = np.stack([curve.x[:, 1], np.zeros(curve.J)], axis=1)
    h[curve.x[:, 1] < 0.05] = 0.0
    h = project_zero_flux(curve, h)
    a = slip_amount(riesz_pair(curve, seg, sys, tol=1e-12), h)
    b = direct_slip(sys, seg, h)
    assert a == pytest.approx(b, rel=1e-8)


def test_rigid_motion_invariance():
    curve, seg = random_domains(1, seed=5)[0]
    h = random_boundary_data(curve, np.random.default_rng(1))
    h[:, 0] += curve.x[:, 1]
    base = slip_amount(riesz_pair(curve, seg), h)
    th = 0.7
    R = np.array([[np.cos(th), -np.sin(th)], [np.sin(th), np.cos(th)]])
    shift = np.array([3.0, -1.5])
    moved = slip_amount(riesz_pair(curve.transformed(R, shift), seg.transformed(R, shift)), h @ R.T)
    assert moved == pytest.approx(base, rel=1e-9)


def test_degenerate_denominator():
    curve, seg = flat_box(J=128)
    pair = riesz_pair(curve, seg)
    # data orthogonal to r2 in the W inner product
    h = random_boundary_data(curve, np.random.default_rng(2))
    h = h - weighted_inner(curve, h, pair.r2) / weighted_inner(curve, pair.r2, pair.r2) * pair.r2
    with pytest.raises(DegenerateFlowError):
        slip_amount(pair, h)


# -- micro error ----------------------------------------------------------------------


def test_micro_error_examples():
    rng = np.random.default_rng(0)
    doms = random_domains(2)
    ref = [(c, rng.standard_normal((c.J, 2)), rng.standard_normal((c.J, 2))) for c, _ in doms]
    assert micro_error(ref, ref) == 0.0
    doubled = [ref[0], (ref[1][0], 2 * ref[1][1], 2 * ref[1][2])]
    assert micro_error(doubled, ref) == pytest.approx(2.0, abs=1e-14)
    rho = 0.037
    pert = []
    for c, r1, r2 in ref:
        out = [c]
        for r in (r1, r2):
            v = rng.standard_normal(r.shape)
            nv = np.sqrt(weighted_inner(c, v, v))
            out.append(r + rho * np.sqrt(weighted_inner(c, r, r)) * v / nv)
        pert.append(tuple(out))
    assert micro_error(pert, ref) == pytest.approx(2 * rho, abs=1e-12)


def test_micro_error_accepts_pairs():
    curve, seg = flat_box(J=128)
    p = riesz_pair(curve, seg)
    q = RieszPair(2 * p.r1, p.r2, p.rt1, p.rt2, curve, seg)
    assert micro_error([q], [p]) == pytest.approx(1.0, abs=1e-14)


# -- asymptotics ---------------------------------------------------------------------


def test_alignment_toy_problem():
    g1, g2 = 0.05, 1.0
    for aspect in (8, 16):
        m1, m2 = alignment_toy(g1, g2, aspect, J=2048)
        assert m1 == pytest.approx(g1 / g2, rel=0.1)
        assert m2 == pytest.approx(1 / g2, rel=0.1)


def test_flat_wall_slip_limit_is_line_height():
    # wall (eps / 2)(cos(2 pi x / lam) - 1) below the mean, line at gamma1
    g1, lam, W, H = 0.2, 0.125, 1.0, 1.0
    out = []
    for e in (0.02, 0.01, 0.005):
        eps = e * g1
        k = 2 * np.pi / lam
        f = lambda x, eps=eps: 0.5 * eps * (np.cos(k * x) - 1)  # noqa: E731
        df = lambda x, eps=eps: -0.5 * eps * k * np.sin(k * x)  # noqa: E731
        ddf = lambda x, eps=eps: -0.5 * eps * k * k * np.cos(k * x)  # noqa: E731
        box = box_with_wall(f, df, ddf, W, H, 0.05)
        curve = box.discretize(384)
        t0, t1 = box.piece_interval("wall")
        on_wall = (curve.t >= t0) & (curve.t <= t1)
        h = np.stack([np.where(on_wall, 0.0, curve.x[:, 1]), np.zeros(curve.J)], axis=1)
        seg = LineSegment(np.array([0.25, g1]), np.array([0.75, g1]))
        out.append(slip_amount(riesz_pair(curve, seg, tol=1e-12), project_zero_flux(curve, h)) - g1)
    out = np.abs(out)
    slopes = np.diff(np.log(out)) / np.diff(np.log([0.02, 0.01, 0.005]))
    assert np.all(np.abs(slopes - 1.0) < 0.2)
    assert out[0] < 0.02 * g1
