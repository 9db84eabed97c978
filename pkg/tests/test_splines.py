import numpy as np
import pytest

from knitmem import splines as sp


def test_clamped_knots_small_cases():
    assert np.allclose(sp.make_clamped_knots(4).knots, [0, 0, 0, 0, 1, 1, 1, 1])
    assert np.allclose(sp.make_clamped_knots(5).knots, [0, 0, 0, 0, 0.5, 1, 1, 1, 1])
    kv6 = sp.make_clamped_knots(6)
    assert np.allclose(kv6.knots[4:6], [1.0 / 3.0, 2.0 / 3.0])


def test_clamped_knots_rejects_too_few_ctrl():
    with pytest.raises(sp.SplineError):
        sp.make_clamped_knots(3)


def test_basis_at_clamped_end():
    kv = sp.make_clamped_knots(4)
    be = sp.eval_basis(kv, 0.0)
    assert np.allclose(be.values, [1, 0, 0, 0])
    be = sp.eval_basis(kv, 1.0)
    assert np.allclose(be.values, [0, 0, 0, 1])


def test_partition_of_unity_and_derivative_sums():
    kv = sp.make_clamped_knots(9)
    rng = np.random.default_rng(42)
    for u in rng.uniform(0.0, 1.0, size=10_000):
        be = sp.eval_basis(kv, float(u))
        assert abs(be.values.sum() - 1.0) < 1e-12
        assert np.all(be.values >= -1e-15)
        assert abs(be.d1.sum()) < 1e-10
        assert abs(be.d2.sum()) < 1e-9


def test_basis_derivatives_match_finite_differences():
    kv = sp.make_clamped_knots(7)
    h = 1e-6
    for u in (0.37, 0.11, 0.52, 0.83):
        be = sp.eval_basis(kv, u)
        plus = sp.eval_basis(kv, u + h)
        minus = sp.eval_basis(kv, u - h)
        fd1 = (plus.values - minus.values) / (2 * h)
        fd2 = (plus.d1 - minus.d1) / (2 * h)
        assert np.abs(fd1 - be.d1).max() / np.abs(be.d1).max() < 1e-5
        assert np.abs(fd2 - be.d2).max() / np.abs(be.d2).max() < 1e-5


def test_basis_outside_domain_raises():
    kv = sp.make_clamped_knots(5)
    with pytest.raises(sp.SplineError):
        sp.eval_basis(kv, 1.2)
    with pytest.raises(sp.SplineError):
        sp.eval_basis(kv, -0.1)


def greville_abscissae(kv):
    return np.array([kv.knots[i + 1 : i + 4].mean() for i in range(kv.n_ctrl)])


def test_curve_collinear_control_points_is_straight():
    kv = sp.make_clamped_knots(6)
    d = np.array([1.0, 2.0, -0.5])
    ctrl = np.linspace(0.0, 1.0, 6)[:, None] * d[None, :]
    for u in np.linspace(0, 1, 17):
        x, t, xpp = sp.eval_curve(ctrl, kv, float(u))
        # image is the straight segment: tangent and curvature direction stay on d
        assert np.linalg.norm(np.cross(t, d)) < 1e-12 * np.linalg.norm(d)
        assert np.linalg.norm(np.cross(xpp, d)) < 1e-11 * np.linalg.norm(d)


def test_curve_greville_spacing_has_linear_parametrisation():
    # linear precision: control points at Greville abscissae reproduce x(u) = u*d
    kv = sp.make_clamped_knots(6)
    d = np.array([1.0, 2.0, -0.5])
    ctrl = greville_abscissae(kv)[:, None] * d[None, :]
    for u in np.linspace(0, 1, 17):
        x, t, xpp = sp.eval_curve(ctrl, kv, float(u))
        assert np.allclose(x, u * d, atol=1e-13)
        assert np.linalg.norm(xpp) < 1e-11


def test_curve_degenerate_all_points_equal():
    kv = sp.make_clamped_knots(5)
    p = np.array([0.3, -1.0, 2.0])
    ctrl = np.tile(p, (5, 1))
    x, t, _ = sp.eval_curve(ctrl, kv, 0.4)
    assert np.allclose(x, p)
    assert np.linalg.norm(t) < 1e-13


def test_curve_ctrl_size_mismatch():
    kv = sp.make_clamped_knots(5)
    with pytest.raises(sp.SplineError):
        sp.eval_curve(np.zeros((4, 3)), kv, 0.5)


def helix_points(ts):
    return np.c_[10 * np.sin(2 * np.pi * ts), 10 * np.cos(2 * np.pi * ts), 20 * ts]


def test_helicoid_control_net_fit_reproduces_samples():
    ts = np.linspace(0.0, 1.0, 40)
    pts = helix_points(ts)
    ctrl, kv = sp.fit_interpolating_spline(pts)
    prm = sp.chord_length_params(pts)
    for ti, pi in zip(prm, pts):
        x, _, _ = sp.eval_curve(ctrl, kv, float(ti))
        assert np.linalg.norm(x - pi) < 1e-9


def test_fit_collinear_samples_zero_curvature():
    ts = np.linspace(0.0, 1.0, 4)
    pts = ts[:, None] * np.array([2.0, 1.0, 0.0])[None, :]
    ctrl, kv = sp.fit_interpolating_spline(pts)
    for u in np.linspace(0, 1, 21):
        _, _, xpp = sp.eval_curve(ctrl, kv, float(u))
        assert np.linalg.norm(xpp) < 1e-10


def test_fit_circle_arc_convergence_order():
    def max_radial_err(n):
        th = np.linspace(0.0, np.pi / 2, n)
        pts = np.c_[np.cos(th), np.sin(th)]
        ctrl, kv = sp.fit_interpolating_spline(pts)
        xs = sp.eval_curve_many(ctrl, kv, np.linspace(0, 1, 1500))
        return np.abs(np.linalg.norm(xs, axis=1) - 1.0).max()

    e_coarse = max_radial_err(8)
    e_fine = max_radial_err(16)
    order = np.log2(e_coarse / e_fine)
    assert order >= 3.0


def test_fit_rejects_coincident_samples():
    pts = np.array([[0.0, 0.0], [0.0, 0.0], [1.0, 0.0], [2.0, 0.0]])
    with pytest.raises(sp.SplineError):
        sp.fit_interpolating_spline(pts)


def test_knot_insertion_invariance():
    kv = sp.make_clamped_knots(8)
    rng = np.random.default_rng(3)
    ctrl = rng.normal(size=(8, 3))
    ctrl2, kv2 = sp.insert_knot(ctrl, kv, 0.437)
    for u in np.linspace(0, 1, 33):
        x0, t0, s0 = sp.eval_curve(ctrl, kv, float(u))
        x1, t1, s1 = sp.eval_curve(ctrl2, kv2, float(u))
        assert np.abs(x0 - x1).max() < 1e-12
        assert np.abs(t0 - t1).max() < 1e-11
