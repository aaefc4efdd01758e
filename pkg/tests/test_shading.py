import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hairsh import scenes, shading
from hairsh import transmittance as tr
from hairsh.farfield import bake_phase_sh_lut
from hairsh.render import (Camera, Light, RenderSettings, Scene, kajiya_kay_shade, render,
                           shade_hits, shade_point, trace_visibility)
from oracles import random_dirs, unit

LIGHTS = (Light.directional([0.3, -1.0, 0.5], [1.0, 0.9, 0.8]),
          Light.point([0.5, -1.5, 1.0], [2.0, 1.5, 1.0]))


def hits_like(rng, n, order=2):
    x = rng.normal(size=(n, 3)) * 0.3
    wo, u = random_dirs(rng, n), rng.normal(size=(n, 3)) * rng.uniform(0.5, 2.0, size=(n, 1))
    v = rng.normal(size=(n, (order + 1) ** 2)) * 0.4
    v[:, 0] += 2.5
    return x, wo, u, v


@pytest.fixture(scope="module")
def env_scene(colored_material, lut, phase_lut):
    return Scene(scenes.single_strand(), colored_material, lut, lights=LIGHTS,
                 environment=scenes.band_limited_sky(2), phase_lut=phase_lut)


@pytest.mark.parametrize("bias", [0.0, 0.1, 0.35])
def test_ours_kernel_matches_numpy(env_scene, rng, bias):
    x, wo, u, v = hits_like(rng, 400)
    got = shading.ours(env_scene, x, wo, u, v, bias)
    ref = shade_point(env_scene, x, wo, u, v, bias)
    assert np.allclose(got, ref, rtol=1e-10, atol=1e-13)


def test_ours_kernel_without_environment(env_scene, rng):
    scene = env_scene.replace(environment=None)
    x, wo, u, v = hits_like(rng, 200, order=1)
    assert np.allclose(shading.ours(scene, x, wo, u, v, 0.1), shade_point(scene, x, wo, u, v, 0.1),
                       rtol=1e-10, atol=1e-13)


def test_ours_kernel_order_zero_phase(env_scene, material, lut, rng):
    scene = env_scene.replace(phase_lut=bake_phase_sh_lut(material, lut, order=0, quadrature_resolution=32))
    x, wo, u, v = hits_like(rng, 200)
    assert np.allclose(shading.ours(scene, x, wo, u, v, 0.0), shade_point(scene, x, wo, u, v, 0.0),
                       rtol=1e-10, atol=1e-13)


@given(st.lists(st.floats(-1, 1), min_size=9, max_size=9),
       st.sampled_from(["free", "wi_tangent", "wo_tangent", "both_tangent", "grazing"]))
def test_ours_kernel_edge_directions(env_scene, comps, case):
    # directions along the tangent have no azimuth; theta_d beyond the Bravais clamp
    c = np.array(comps)
    u = unit(c[:3] + np.array([0.0, 0.0, 2.0]))
    wi, wo = unit(c[3:6] + 1e-3), unit(c[6:9] - 1e-3)
    if case in ("wi_tangent", "both_tangent"):
        wi = u.copy()
    if case in ("wo_tangent", "both_tangent"):
        wo = -u
    if case == "grazing":
        side = unit(np.cross(u, [1.0, 0.0, 0.0]))
        wi, wo = unit(-u + 1e-3 * side), unit(u + 2e-3 * side)
    scene = env_scene.replace(lights=(Light.directional(wi, [1.0, 1.0, 1.0]),))
    v = np.zeros((1, 9))
    v[0, 0] = 2 * math.sqrt(math.pi)
    got = shading.ours(scene, np.zeros((1, 3)), wo[None], u[None], v, 0.0)
    ref = shade_point(scene, np.zeros((1, 3)), wo[None], u[None], v, 0.0)
    assert np.allclose(got, ref, rtol=1e-9, atol=1e-12)


def test_kajiya_kay_kernel_matches_numpy(rng):
    x, wo, u, _ = hits_like(rng, 300)
    args = ((0.05, 0.04, 0.03), (0.3, 0.2, 0.1), (0.2, 0.2, 0.25), 24.0)
    assert np.allclose(shading.kajiya_kay(x, wo, u, LIGHTS, *args),
                       kajiya_kay_shade(x, wo, u, LIGHTS, *args), rtol=1e-12, atol=1e-15)
    assert np.allclose(shading.kajiya_kay(x, wo, u, (), *args), args[0])


def test_backends_render_alike(colored_material, lut, phase_lut):
    g = scenes.curl(n_strands=30, n_vertices=12, seed=4)
    scene = Scene(g, colored_material, lut, tr.bake_transmittance(g, res=8), LIGHTS,
                  scenes.band_limited_sky(2), phase_lut)
    cam = Camera([0.0, -3.5, 0.0], [0.0, 0.0, 0.0], fov_y=math.radians(40.0), width=20, height=20)
    for shader in ("ours", "kajiya"):
        s = RenderSettings(shader=shader)
        a, b = render(scene, cam, s), render(scene, cam, replace(s, backend="numpy"))
        assert np.allclose(a.rgb, b.rgb, rtol=1e-10, atol=1e-13)


def test_higher_phase_order_falls_back(env_scene, material, lut):
    scene = env_scene.replace(phase_lut=bake_phase_sh_lut(material, lut, order=2, quadrature_resolution=32))
    assert not shading.supports(scene)
    cam = Camera([0.0, -4.0, 0.0], [0.0, 0.0, 0.0], fov_y=math.radians(30.0), width=8, height=9)
    s = RenderSettings()
    hits = trace_visibility(scene, cam, s)
    assert np.array_equal(shade_hits(scene, hits, s), shade_hits(scene, hits, replace(s, backend="numpy")))


def test_unknown_backend(env_scene):
    cam = Camera([0.0, -4.0, 0.0], [0.0, 0.0, 0.0], width=4, height=4)
    with pytest.raises(ValueError, match="backend"):
        render(env_scene, cam, RenderSettings(backend="gpu"))


def test_kernel_rejects_bad_bias(env_scene, rng):
    x, wo, u, v = hits_like(rng, 3)
    with pytest.raises(ValueError):
        shading.ours(env_scene, x, wo, u, v, 1.0)
