import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hairsh import scenes
from hairsh import transmittance as tr
from hairsh.farfield import EnvironmentSH, shade_far
from hairsh.fiber import eval_phase
from hairsh.geometry import HairGeometry
from hairsh.render import (Camera, FrameBuffer, Light, RenderSettings, Scene, bench, bench_compare,
                           compare_images, composite, composite_back_to_front,
                           composite_front_to_back, kajiya_kay_shade, render, shade_direct,
                           shade_point, trace_visibility, tune_kajiya_kay)
from oracles import random_dirs, random_rotation, unit

SQRT_4PI = 2 * math.sqrt(math.pi)
BG = (0.2, 0.3, 0.4)
LIGHT = Light.directional([0.3, -1.0, 0.5], [1.0, 0.9, 0.8])


def front_cam(w=48, h=48, dist=4.0, fov=30.0):
    return Camera([0.0, -dist, 0.0], [0.0, 0.0, 0.0], fov_y=math.radians(fov), width=w, height=h)


@pytest.fixture(scope="module")
def small_curl(material, lut):
    g = scenes.curl(n_strands=24, n_vertices=10, seed=11)
    V = tr.bake_transmittance(g, res=8)
    return Scene(g, material.with_sigma_a((0.3, 0.5, 0.9)), lut, V, (LIGHT,))


# ---------------------------------------------------------------------------
# Types


def test_camera_fov_validation():
    for fov in (0.0, math.pi, -1.0):
        with pytest.raises(ValueError):
            Camera([0, -4, 0], [0, 0, 0], fov_y=fov)


def test_camera_centre_ray():
    cam = front_cam(5, 5)
    o, d, pix = cam.rays()
    assert np.allclose(d[12], [0.0, 1.0, 0.0])
    assert np.array_equal(pix, np.arange(25))
    _, d4, pix4 = cam.rays(2)
    assert len(d4) == 100 and np.all(np.bincount(pix4) == 4)


def test_scene_validation(material, lut):
    g = scenes.single_strand()
    with pytest.raises(ValueError):
        Scene(g, material, lut, tr.VertexTransmittanceSH.unoccluded(3))
    with pytest.raises(ValueError):
        Scene(g, material, lut, rotation=np.diag([1.0, 1.0, -1.0]))
    with pytest.raises(ValueError):
        Scene(g, material, lut, environment=EnvironmentSH.uniform())


def test_light_validation_and_falloff():
    with pytest.raises(ValueError):
        Light("spot", [0, 0, 1], [1, 1, 1])
    p = Light.point([0.0, 0.0, 2.0], [4.0, 4.0, 4.0])
    d, L, r = p.incident(np.zeros((1, 3)))
    assert np.allclose(d, [[0, 0, 1]]) and np.allclose(L, 1.0) and r[0] == 2.0


# ---------------------------------------------------------------------------
# Shading


def test_shade_direct_no_lights(material, lut, rng):
    scene = Scene(scenes.single_strand(), material, lut)
    wo, u = random_dirs(rng, 2)
    assert np.all(shade_direct(scene, np.zeros(3), wo, u, tr.VertexTransmittanceSH.unoccluded(1)[0].coeffs) == 0)


def test_shade_direct_unoccluded_equals_phase(colored_material, lut, rng):
    scene = Scene(scenes.single_strand(), colored_material, lut, lights=(LIGHT,))
    v = np.zeros(9)
    v[0] = SQRT_4PI
    for _ in range(10):
        wo, u = random_dirs(rng, 2)
        got = shade_direct(scene, np.zeros(3), wo, u, v, bias=0.0)
        ref = LIGHT.radiance * eval_phase(colored_material, lut, LIGHT.vector, wo, u)
        assert np.allclose(got, ref, rtol=1e-12)


def test_shade_direct_occluded_is_black(material, lut, rng):
    g = scenes.enclosure()
    vsh = tr.project_to_sh(tr.bake_vertex_cubemap(g, 1, res=8)).coeffs
    scene = Scene(g, material, lut, lights=(LIGHT, Light.point([0.2, 0.1, 0.3], [5, 5, 5])))
    wo, u = random_dirs(rng, 2)
    assert np.all(shade_direct(scene, g.positions[1], wo, u, vsh, bias=0.1) == 0.0)


def test_shade_point_split(material, lut, phase_lut, rng):
    env = scenes.band_limited_sky(2)
    g = scenes.single_strand()
    v = np.zeros(9)
    v[0] = SQRT_4PI
    x = np.zeros(3)
    both = Scene(g, material, lut, lights=(LIGHT,), environment=env, phase_lut=phase_lut)
    lights_only = both.replace(environment=None)
    env_only = both.replace(lights=())
    for _ in range(5):
        wo, u = random_dirs(rng, 2)
        d = shade_point(lights_only, x, wo, u, v)
        assert np.array_equal(d, shade_direct(lights_only, x, wo, u, v))
        f = shade_point(env_only, x, wo, u, v)
        assert np.allclose(f, shade_far(v, env, phase_lut, wo, u, material.sigma_a))
        assert np.allclose(shade_point(both, x, wo, u, v), d + f, rtol=1e-12)


def test_kajiya_kay_examples():
    u = np.array([1.0, 0.0, 0.0])
    wo = unit([0.0, -1.0, 0.2])
    perp = [Light.directional([0.0, 0.0, 1.0], [1.0, 1.0, 1.0])]
    par = [Light.directional([1.0, 0.0, 0.0], [1.0, 1.0, 1.0])]
    zero = (0.0, 0.0, 0.0)
    assert np.allclose(kajiya_kay_shade(np.zeros(3), wo, u, perp, zero, (1, 1, 1), zero), 1.0)
    assert np.allclose(kajiya_kay_shade(np.zeros(3), wo, u, par, zero, (1, 1, 1), zero), 0.0)
    a = (0.1, 0.2, 0.3)
    assert np.allclose(kajiya_kay_shade(np.zeros(3), wo, u, [], a), a)


def test_kajiya_kay_specular_peak():
    # specular peaks on the reflection cone: t.l = -t.e
    u = np.array([0.0, 0.0, 1.0])
    wl = unit([1.0, 0.0, 0.5])
    wo = unit([-1.0, 0.0, -0.5])
    c = kajiya_kay_shade(np.zeros(3), wo, u, [Light.directional(wl, [1, 1, 1])],
                         (0, 0, 0), (0, 0, 0), (1, 1, 1), 50.0)
    assert np.allclose(c, 1.0)


# ---------------------------------------------------------------------------
# Compositing


@given(st.lists(st.tuples(st.floats(0, 1), st.floats(0, 5), st.floats(0, 5), st.floats(0, 5)),
                max_size=12))
def test_front_to_back_equals_back_to_front(layers):
    alphas = [l[0] for l in layers]
    colors = [l[1:] for l in layers]
    f = composite_front_to_back(colors, alphas, BG)
    b = composite_back_to_front(colors, alphas, BG)
    assert np.allclose(f, b, atol=1e-6)


def test_render_matches_sorted_composite(small_curl):
    cam = front_cam(24, 24, dist=3.0, fov=45.0)
    s = RenderSettings(background=BG)
    hits = trace_visibility(small_curl, cam, s)
    colors = np.abs(np.sin(hits.x * 7.0))
    fb = composite(hits, colors, BG)
    alpha = small_curl.geometry.alpha[0]
    for ray in np.unique(hits.ray)[::7]:
        sel = hits.ray == ray
        n = int(sel.sum())
        ref = composite_back_to_front(colors[sel], [alpha] * n, BG)
        r, c = divmod(ray, 24)
        assert np.allclose(fb.rgb[r, c], ref, atol=1e-6)


# ---------------------------------------------------------------------------
# Render


def test_empty_scene_is_background(material, lut):
    scene = Scene(HairGeometry.empty(), material, lut, lights=(LIGHT,))
    fb = render(scene, front_cam(16, 16), RenderSettings(background=BG))
    assert np.all(fb.rgb == np.array(BG)) and np.all(fb.alpha == 0)


def test_transparent_strands_are_background(small_curl):
    scene = small_curl.replace(geometry=small_curl.geometry.with_alpha(0.0))
    fb = render(scene, front_cam(16, 16, dist=3.0), RenderSettings(background=BG))
    assert np.all(fb.rgb == np.array(BG))


def test_single_opaque_strand_pixel_membership(material, lut):
    g = scenes.single_strand(alpha=1.0)
    scene = Scene(g, material, lut, lights=(LIGHT,))
    cam = front_cam(64, 64)
    fb = render(scene, cam, RenderSettings(background=BG))
    _, d, _ = cam.rays()
    # ray-to-axis distance for rays from (0, -4, 0) against the x axis
    dist = (4.0 * np.abs(d[:, 2]) / np.hypot(d[:, 1], d[:, 2])).reshape(64, 64)
    x_at = (4.0 * d[:, 0] / d[:, 1]).reshape(64, 64)
    r = g.radii[0][0]
    inside = (dist < 0.98 * r) & (np.abs(x_at) < 0.95)
    outside = (dist > 1.02 * r) | (np.abs(x_at) > 1.1)
    assert inside.sum() > 20
    assert np.all(fb.alpha[inside] == 1.0) and np.all(fb.rgb[inside] > 0)
    assert np.all(fb.rgb[inside] != np.array(BG))
    assert np.all(fb.alpha[outside] == 0.0) and np.all(fb.rgb[outside] == np.array(BG))


def test_linear_in_lights(small_curl):
    cam = front_cam(24, 24, dist=3.0, fov=45.0)
    a = render(small_curl, cam)
    b = render(small_curl.replace(lights=tuple(l.scaled(2.0) for l in small_curl.lights)), cam)
    assert np.array_equal(b.rgb, 2.0 * a.rgb)


def test_render_deterministic(small_curl):
    cam = front_cam(24, 24, dist=3.0, fov=45.0)
    s = RenderSettings(supersample=2)
    assert np.array_equal(render(small_curl, cam, s).rgb, render(small_curl, cam, s).rgb)


def test_unoccluded_render_is_phase_times_light(colored_material, lut):
    g = scenes.curl(n_strands=24, n_vertices=10, seed=11)
    scene = Scene(g, colored_material, lut, lights=(LIGHT,))
    cam = front_cam(24, 24, dist=3.0, fov=45.0)
    s = RenderSettings(bias=0.0, background=BG)
    fb = render(scene, cam, s)
    hits = trace_visibility(scene, cam, s)
    colors = LIGHT.radiance * eval_phase(colored_material, lut, LIGHT.vector, hits.wo, hits.tangent)
    assert np.allclose(fb.rgb, composite(hits, colors, BG).rgb, rtol=1e-10, atol=1e-14)


def test_scene_transform_matches_pretransformed(small_curl, rng):
    R = random_rotation(rng)
    t = np.array([0.1, -0.2, 0.05])
    moved = small_curl.replace(rotation=R, translation=t)
    pre = small_curl.replace(geometry=small_curl.geometry.transformed(R, t),
                             transmittance=small_curl.transmittance.rotated(R))
    cam = front_cam(20, 20, dist=3.0, fov=45.0)
    assert np.allclose(render(moved, cam).rgb, render(pre, cam).rgb, atol=1e-12)


def test_bias_darkens_monotonically(small_curl):
    cam = front_cam(24, 24, dist=3.0, fov=45.0)
    imgs = [render(small_curl, cam, RenderSettings(bias=b)).rgb for b in (0.0, 0.1, 0.4)]
    assert np.all(imgs[1] <= imgs[0] + 1e-12) and np.all(imgs[2] <= imgs[1] + 1e-12)


def test_unknown_shader(small_curl):
    with pytest.raises(ValueError):
        render(small_curl, front_cam(8, 8), RenderSettings(shader="phong"))


# ---------------------------------------------------------------------------
# Metrics, tuning and timing


def test_compare_examples(rng):
    a = rng.uniform(size=(8, 8, 3))
    m = compare_images(a, a)
    assert m["rmse"] == 0.0 and m["mae"] == 0.0
    m = compare_images(a + 0.1, a)
    assert m["mae"] == pytest.approx(0.1)
    assert np.allclose(m["mae_per_channel"], 0.1)
    with pytest.raises(ValueError):
        compare_images(a, a[:4])


@given(st.integers(0, 2**32 - 1))
def test_compare_metric_inequality(seed):
    rng = np.random.default_rng(seed)
    a, b = rng.normal(size=(2, 6, 5, 3))
    m = compare_images(FrameBuffer(a, np.ones((6, 5))), b)
    assert m["rmse"] >= m["mae"] >= 0.0
    assert all(r >= e for r, e in zip(m["rmse_per_channel"], m["mae_per_channel"]))


def test_compare_mask(rng):
    a = rng.uniform(size=(4, 4, 3))
    b = a.copy()
    b[0, 0] += 1.0
    mask = np.ones((4, 4), bool)
    mask[0, 0] = False
    assert compare_images(a, b, mask)["rmse"] == 0.0


def test_tune_recovers_kajiya_target(small_curl):
    cam = front_cam(24, 24, dist=3.0, fov=45.0)
    truth = RenderSettings(shader="kajiya", kk_diffuse=(0.2, 0.1, 0.05), kk_specular=(0.3, 0.3, 0.3),
                           kk_exponent=16.0, kk_ambient=(0.02, 0.02, 0.03))
    target = render(small_curl, cam, truth)
    fitted, err = tune_kajiya_kay(small_curl, cam, target)
    assert err < 1e-8
    assert fitted.kk_exponent == 16.0
    assert np.allclose(fitted.kk_diffuse, truth.kk_diffuse, atol=1e-6)


def test_bench_single_repetition(small_curl):
    rep = bench(small_curl, front_cam(16, 16), "ours", repetitions=1)
    assert len(rep["total_samples_ms"]) == 1 and rep["total_ms"] == rep["total_samples_ms"][0]
    with pytest.raises(ValueError):
        bench(small_curl, front_cam(16, 16), repetitions=0)


def test_bench_larger_image_costs_more(small_curl):
    small = bench(small_curl, front_cam(32, 32, dist=3.0, fov=45.0), "ours", repetitions=5)
    big = bench(small_curl, front_cam(64, 64, dist=3.0, fov=45.0), "ours", repetitions=5)
    assert big["total_ms"] > small["total_ms"]


def test_bench_compare_reports_ratio(small_curl):
    rep = bench_compare(small_curl, front_cam(16, 16), repetitions=2)
    assert rep["shading_ratio"] > 0 and rep["total_ratio"] > 0
    assert rep["ours"]["hits"] == rep["kajiya"]["hits"]
