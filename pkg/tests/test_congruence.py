"""Congruence machinery against closed-form flat and horizon solutions.

Oracles: the Minkowski cone from a sphere of radius r has L = ∂_t + r̂,
Π = id/r, y(t) = (1 + t/r)^(n-1)·[outgoing] and (1 - t/r)^(n-1) with a
focal point at t = r [ingoing]; the Schwarzschild horizon congruence has
zero expansion and constant area 16πM².  All derived by hand from the
geodesic/Jacobi equations, which the integrator must reproduce.
"""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import nullflow as nf
from nullflow.congruence import Y_TOL, quadrature_nodes
from nullflow.geometry import GeometryError

from conftest import SPHERE, SPHERE_DOMAIN, ef_sphere_seed, sphere_seed


# ---------------------------------------------------------------------------
# quadrature


def test_gauss_quadrature_weights_sum():
    nodes, w = quadrature_nodes([(0, 2), (1, 4)], [6, 5], "gauss")
    assert nodes.shape == (30, 2)
    assert w.sum() == pytest.approx(2 * 3, rel=1e-14)


def test_uniform_quadrature():
    nodes, w = quadrature_nodes([(0, 1)], [4], "uniform")
    assert np.allclose(nodes[:, 0], [0.125, 0.375, 0.625, 0.875])
    assert np.allclose(w, 0.25)


def test_gauss_nodes_interior():
    nodes, _ = quadrature_nodes(SPHERE_DOMAIN, [8, 16], "gauss")
    assert nodes[:, 0].min() > 0 and nodes[:, 0].max() < np.pi


# ---------------------------------------------------------------------------
# null normals


def test_unit_sphere_null_normals(mink):
    seed = sphere_seed()
    theta = [1.0, 2.0]
    L, Lb = nf.null_normals(mink, seed, theta)
    p = seed.chart_points(np.array([theta]))[0]
    rhat = p.copy()
    rhat[0] = 0.0
    assert np.allclose(L, np.array([1.0, *rhat[1:]]), atol=1e-12)
    assert np.allclose(Lb, np.array([1.0, *(-rhat[1:])]), atol=1e-12)


def test_orientation_swap(mink):
    seed_in = sphere_seed(orientation="inner")
    seed_out = sphere_seed(orientation="outer")
    theta = [0.7, 4.0]
    L1, L1b = nf.null_normals(mink, seed_out, theta)
    L2, L2b = nf.null_normals(mink, seed_in, theta)
    assert np.allclose(L1, L2b) and np.allclose(L1b, L2)


def test_horizon_generator_normal(schw):
    seed = ef_sphere_seed(2.0)
    L, Lb = nf.null_normals(schw, seed, [1.2, 0.5])
    assert np.allclose(L, [2.0, 0.0, 0.0, 0.0], atol=1e-10)
    assert Lb[1] < 0  # ingoing branch falls in r


def test_normals_null_and_normalized(schw):
    seed = ef_sphere_seed(3.0)
    theta = [0.9, 1.7]
    p = seed.chart_points(np.array([theta]))[0]
    g = schw.metric_values(p[None, :])[0]
    tref = schw.tref_values(p[None, :])[0]
    for w in nf.null_normals(schw, seed, theta):
        assert abs(w @ g @ w) < 1e-12
        assert w @ g @ tref == pytest.approx(-1.0, abs=1e-12)


def test_degenerate_seed_rejected(mink):
    # tangent space contains the timelike chart direction
    seed = nf.SeedSurface.from_sources(["x0", "x1", "0.0", "0.0"],
                                       [(-1, 1), (-1, 1)], [3, 3])
    with pytest.raises(GeometryError, match="not spacelike"):
        nf.null_normals(mink, seed, [0.2, 0.3])


# ---------------------------------------------------------------------------
# geodesics


def test_flat_ray_is_straight(mink):
    ray = nf.integrate_ray(mink, np.zeros(4), [1.0, 1.0, 0.0, 0.0], 2.0)
    for t in (0.5, 1.0, 2.0):
        assert np.allclose(ray.position(t), [t, t, 0, 0], atol=1e-12)


def test_horizon_ray_stays_at_r2(schw):
    ray = nf.integrate_ray(schw, [0.0, 2.0, 1.2, 0.5], [2.0, 0.0, 0.0, 0.0],
                           5.0)
    for t in np.linspace(0, 5, 11):
        assert abs(ray.position(t)[1] - 2.0) < 1e-8


def test_ingoing_ray_hits_curvature_blowup(schw):
    ray = nf.integrate_ray(schw, [0.0, 3.0, 1.2, 0.5], [0.0, -1.0, 0.0, 0.0],
                           10.0)
    assert ray.exit_reason == "curvature_blowup"
    assert ray.t_alive < 10.0
    assert ray.position(ray.t_alive)[1] < 0.05


def test_non_null_initial_rejected(mink):
    with pytest.raises(GeometryError, match="not null"):
        nf.integrate_ray(mink, np.zeros(4), [1.0, 0.0, 0.0, 0.0], 1.0)


def test_past_directed_rejected(mink):
    with pytest.raises(GeometryError, match="past"):
        nf.integrate_ray(mink, np.zeros(4), [-1.0, 1.0, 0.0, 0.0], 1.0)


def test_null_constraint_along_rays(flat_cone, horizon_cong, flrw_cone):
    for cong in (flat_cone, horizon_cong, flrw_cone):
        ray = cong.rays[3]
        g = cong.metric
        for t in np.linspace(0, min(1.0, ray.t_alive), 7):
            x = ray.position(t)
            v = ray.velocity(t)
            s = g.inner(x, v, v)
            assert abs(s) <= 1e-8 * float(v @ v)


# ---------------------------------------------------------------------------
# screen frames


def test_flat_frame_orthonormal(flat_cone):
    ray = flat_cone.rays[10]
    for t in (0.0, 0.4, 1.0):
        E = ray.screen_frame(t, clean=False)
        g = flat_cone.metric.metric_values(ray.position(t)[None, :])[0]
        gram = E @ g @ E.T
        assert np.abs(gram - np.eye(2)).max() < 1e-10
        v = ray.velocity(t)
        assert np.abs(E @ g @ v).max() < 1e-10


def test_gram_drift_small(flat_cone, horizon_cong, flrw_cone):
    for cong, tmax in ((flat_cone, 1.0), (horizon_cong, 5.0),
                       (flrw_cone, 1.0)):
        drift = max(float(cong.rays[0].gram_defect(t))
                    for t in np.linspace(0, tmax, 9))
        assert drift < 1e-8


def test_horizon_frame_stays_angular(horizon_cong):
    ray = horizon_cong.rays[5]
    for t in (0.0, 2.5, 5.0):
        E = ray.screen_frame(t)
        # screen vectors have no v or r components on the horizon sphere
        assert np.abs(E[:, :2]).max() < 1e-7


def test_cleaned_frame_removes_drift(flat_cone):
    ray = flat_cone.rays[0]
    E = ray.screen_frame(0.8, clean=True)
    g = flat_cone.metric.metric_values(ray.position(0.8)[None, :])[0]
    v = ray.velocity(0.8)
    lb = ray.transverse_null(0.8)
    assert np.abs(E @ g @ v).max() < 1e-12
    assert np.abs(E @ g @ lb).max() < 1e-12


# ---------------------------------------------------------------------------
# Jacobi data: closed forms


def test_flat_cone_expansion(flat_cone):
    ray = flat_cone.rays[7]
    for t in (0.0, 0.3, 1.0):
        assert float(ray.y(t)) == pytest.approx((1 + t) ** 2, rel=1e-10)
        assert float(ray.trU(t)) == pytest.approx(2 / (1 + t), rel=1e-10)
    assert ray.focal_time is None


def test_flat_ingoing_focal(flat_ingoing):
    ray = flat_ingoing.rays[7]
    assert float(ray.y(0.5)) == pytest.approx(0.25, rel=1e-9)
    assert ray.focal_time == pytest.approx(1.0, abs=1e-8)


def test_horizon_jacobi_constant(horizon_cong):
    ray = horizon_cong.rays[2]
    for t in (0.0, 2.0, 5.0):
        assert abs(float(ray.y(t)) - 1.0) < 1e-7
        assert abs(float(ray.trU(t))) < 1e-7
    assert ray.focal_time is None


def test_jacobi_evolve_custom_initial_shape(mink):
    # sphere-like initial shape data on a single flat ray: U0 = -id gives
    # y = (1 - t)^2 focusing at t = 1
    ray = nf.integrate_ray(mink, np.zeros(4), [1.0, 0.0, 0.0, 1.0], 2.0)
    assert ray.focal_time is None            # parallel transport only
    shaped = nf.jacobi_evolve(mink, ray, -np.eye(2))
    assert float(shaped.y(0.5)) == pytest.approx(0.25, rel=1e-10)
    assert shaped.focal_time == pytest.approx(1.0, abs=1e-8)


def test_screen_frame_callable(mink, flat_cone):
    fn = nf.screen_frame(mink, flat_cone.rays[0])
    assert fn(0.5).shape == (2, 4)


# ---------------------------------------------------------------------------
# second fundamental form


def test_sphere_shape_operator(mink):
    seed = sphere_seed()
    theta = [1.3, 0.4]
    L, Lb = nf.null_normals(mink, seed, theta)
    pi, h = nf.second_fundamental_form(mink, seed, theta, L)
    assert np.allclose(pi, np.eye(2), atol=1e-9)
    assert h == pytest.approx(2.0, abs=1e-9)
    pi2, h2 = nf.second_fundamental_form(mink, seed, theta, Lb)
    assert h2 == pytest.approx(-2.0, abs=1e-9)


def test_plane_shape_operator_zero(mink):
    seed = nf.SeedSurface.from_sources(
        ["0.0", "x0", "x1", "0.0"], [(-1, 1), (-1, 1)], [3, 3],
        outward=["0", "0", "0", "1"])
    L, _ = nf.null_normals(mink, seed, [0.2, -0.3])
    pi, h = nf.second_fundamental_form(mink, seed, [0.2, -0.3], L)
    assert np.abs(pi).max() < 1e-12 and abs(h) < 1e-12


def test_shape_operator_rejects_tangent_vector(mink):
    seed = sphere_seed()
    with pytest.raises(GeometryError, match="not null"):
        nf.second_fundamental_form(mink, seed, [1.0, 1.0], [0, 0, 0, 1.0])


def test_shape_operator_rejects_non_normal(mink):
    seed = sphere_seed()
    with pytest.raises(GeometryError, match="not normal"):
        nf.second_fundamental_form(mink, seed, [1.57, 0.0], [1.0, 1.0, 0, 0])


@given(st.floats(0.5, 3.0), st.floats(0.3, 2.8), st.floats(0.1, 6.1))
@settings(max_examples=20, deadline=None)
def test_sphere_mean_curvature_scales(radius, th, ph):
    mink = nf.builtin_metric("minkowski")
    seed = sphere_seed(radius=radius)
    L, _ = nf.null_normals(mink, seed, [th, ph])
    _, h = nf.second_fundamental_form(mink, seed, [th, ph], L)
    assert h == pytest.approx(2.0 / radius, rel=1e-8)


# ---------------------------------------------------------------------------
# cross-section measures


def test_flat_cone_areas(flat_cone):
    assert nf.cross_section_measure(flat_cone, 0.0) \
        == pytest.approx(4 * np.pi, rel=1e-4)
    assert nf.cross_section_measure(flat_cone, 1.0) \
        == pytest.approx(16 * np.pi, rel=1e-4)


def test_horizon_area_constant(horizon_cong):
    a0 = nf.cross_section_measure(horizon_cong, 0.0)
    assert a0 == pytest.approx(16 * np.pi, rel=1e-6)
    for t in (1.0, 2.5, 5.0):
        at = nf.cross_section_measure(horizon_cong, t)
        assert abs(at - a0) / a0 < 1e-6


def test_subset_measure(flat_cone):
    half = [r.index for r in flat_cone.rays[:len(flat_cone.rays) // 2]]
    m = nf.cross_section_measure(flat_cone, 0.0, half)
    assert 0 < m < 4 * np.pi


def test_dead_ray_measure_rejected(trapped_cong):
    with pytest.raises(GeometryError, match="dead"):
        nf.cross_section_measure(trapped_cong, 5.0)


def test_sampling_after_focal_rejected(flat_ingoing):
    ray = flat_ingoing.rays[0]
    with pytest.raises(GeometryError):
        ray.y(1.5)


# ---------------------------------------------------------------------------
# optical-equation invariants


def _residual(ray, ts, h=5e-4):
    trup = (ray.trU(ts + h) - ray.trU(ts - h)) / (2 * h)
    U = ray.weingarten(ts)
    tru = np.trace(U, axis1=-2, axis2=-1)
    tru2 = np.trace(U @ U, axis1=-2, axis2=-1)
    ric = ray.ricci_vv(ts)
    return np.abs(trup + tru2 + ric), tru


@pytest.mark.parametrize("fixture,tspan", [
    ("flat_cone", (0.01, 0.99)),
    ("horizon_cong", (0.01, 4.9)),
    ("flrw_cone", (0.01, 0.99)),
])
def test_raychaudhuri_residual(request, fixture, tspan):
    cong = request.getfixturevalue(fixture)
    ts = np.linspace(*tspan, 15)
    for ray in cong.rays[::17]:
        res, tru = _residual(ray, ts)
        assert np.all(res < 1e-6 * (1.0 + np.abs(tru) ** 2))


def test_weingarten_self_adjoint(flat_cone, horizon_cong, flrw_cone):
    for cong in (flat_cone, horizon_cong, flrw_cone):
        ray = cong.rays[1]
        for t in np.linspace(0, 1, 5):
            U = ray.weingarten(t)
            assert np.abs(U - U.T).max() <= 1e-6 * np.abs(U).max() + 1e-8


def test_trace_cauchy_schwarz(flat_cone, flrw_cone, trapped_cong):
    for cong, tmax in ((flat_cone, 1.0), (flrw_cone, 1.0),
                       (trapped_cong, 4.0)):
        ray = cong.rays[0]
        for t in np.linspace(0, tmax, 7):
            U = ray.weingarten(t)
            tru = np.trace(U)
            tru2 = np.trace(U @ U)
            assert tru2 >= tru ** 2 / 2 - 1e-8


def test_log_det_derivative_is_trace(flat_cone, flrw_cone):
    h = 5e-4
    for cong in (flat_cone, flrw_cone):
        ray = cong.rays[4]
        ts = np.linspace(0.1, 0.9, 9)
        dlog = (np.log(ray.y(ts + h)) - np.log(ray.y(ts - h))) / (2 * h)
        tru = np.trace(ray.weingarten(ts), axis1=-2, axis2=-1)
        assert np.abs(dlog - tru).max() < 1e-6


def test_flat_concavity_equality(flat_cone, flat_ingoing):
    ts = np.linspace(0.0, 0.9, 10)
    for cong in (flat_cone, flat_ingoing):
        ray = cong.rays[0]
        w = np.array([float(ray.y(t)) for t in ts]) ** 0.5
        second = w[:-2] - 2 * w[1:-1] + w[2:]
        assert np.abs(second).max() < 1e-7


def test_generator_record(flat_cone):
    rec = flat_cone.generator_record
    assert rec["span"] == 1.0 and "t_ref" in rec["gauge"]
