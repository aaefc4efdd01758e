"""Ground-truth single-scattering oracles using the exact phase function.

``trace_reference`` is a Monte Carlo renderer with real shadow rays;
``quadrature_shade`` integrates one shading point deterministically over a
Gauss-Legendre sphere grid.
"""

from __future__ import annotations

import math

import numpy as np

from . import raycast, shmath
from .fiber import eval_phase
from .render import Camera, FrameBuffer, RenderSettings, Scene
from .transmittance import EXCLUSION_RADIUS_SCALE

PIXEL_CHUNK_PATHS = 1 << 16


def _light_arrays(scene: Scene):
    kind = np.array([0 if l.kind == "directional" else 1 for l in scene.lights], np.int64)
    vec = np.array([l.vector for l in scene.lights]).reshape(-1, 3)
    return kind, vec


def _exclusion_args(scene: Scene):
    r = scene.exclusion_radius
    return (float(r), 0.0) if r is not None else (0.0, EXCLUSION_RADIUS_SCALE)


def _shade_paths(scene: Scene, paths) -> np.ndarray:
    status, x, tan, wo, light_T, light_d, light_r2, env_d, env_T = paths
    hit = status == 1
    out = np.zeros((len(status), 3))
    if not np.any(hit):
        return out
    x, tan, wo = x[hit], tan[hit], wo[hit]
    col = np.zeros((len(x), 3))
    for li, light in enumerate(scene.lights):
        L = light.radiance / (light_r2[hit, li, None] if light.kind == "point" else 1.0)
        S = eval_phase(scene.material, scene.lut, light_d[hit, li], wo, tan)
        col += L * light_T[hit, li, None] * S
    if scene.environment is not None:
        d = env_d[hit]
        S = eval_phase(scene.material, scene.lut, d, wo, tan)
        col += 4.0 * math.pi * scene.environment.radiance(d) * env_T[hit, None] * S
    out[hit] = col
    return out


def trace_reference(scene: Scene, camera: Camera, spp: int, seed: int,
                    settings: RenderSettings | None = None) -> FrameBuffer:
    """Path-traced single scattering, ``spp`` stratified samples per pixel.

    Each path picks one fiber layer by Russian roulette on coverage alpha
    (so nearer fibers attenuate without scattering), shades it with one
    shadow ray per light and one uniformly sampled environment direction,
    and paths that pass every fiber return the background.
    """
    if spp < 1:
        raise ValueError("spp must be >= 1")
    settings = settings or RenderSettings()
    geom = scene.world_geometry
    kind, vec = _light_arrays(scene)
    excl_abs, excl_scale = _exclusion_args(scene)
    cam = camera.packed()
    n_pix = camera.width * camera.height
    bg = np.asarray(settings.background, dtype=np.float64)
    rgb = np.zeros((n_pix, 3))
    alpha = np.zeros(n_pix)
    px_chunk = max(1, PIXEL_CHUNK_PATHS // spp)
    s_chunk = min(spp, PIXEL_CHUNK_PATHS)
    for p0 in range(0, n_pix, px_chunk):
        p1 = min(n_pix, p0 + px_chunk)
        for s0 in range(0, spp, s_chunk):
            s1 = min(spp, s0 + s_chunk)
            paths = raycast.reference_paths(geom, cam, camera.width, camera.height, p0, p1, spp,
                                            s0, s1, seed, excl_abs, excl_scale, kind, vec)
            col = _shade_paths(scene, paths)
            hit = paths[0] == 1
            col[~hit] = bg
            n_s = s1 - s0
            rgb[p0:p1] += col.reshape(p1 - p0, n_s, 3).sum(axis=1)
            alpha[p0:p1] += hit.reshape(p1 - p0, n_s).sum(axis=1)
    h, w = camera.height, camera.width
    return FrameBuffer((rgb / spp).reshape(h, w, 3), (alpha / spp).reshape(h, w))


def _auto_exclusion(scene: Scene, x):
    """Own-strand exclusion window for a point lying inside a strand capsule."""
    geom = scene.world_geometry
    if geom.n_segments == 0:
        return -1, 0.0, 0.0
    p = geom.positions
    a, b = p[geom.segments[:, 0]], p[geom.segments[:, 1]]
    e = b - a
    s = np.clip(np.sum((x - a) * e, axis=1) / np.sum(e * e, axis=1), 0.0, 1.0)
    dist = np.linalg.norm(a + s[:, None] * e - x, axis=1)
    k = int(np.argmin(dist))
    if dist[k] > geom.segment_radius[k]:
        return -1, 0.0, 0.0
    s0, s1 = geom.arc_length[geom.segments[k]]
    arc = s0 + s[k] * (s1 - s0)
    r = scene.exclusion_radius
    r = EXCLUSION_RADIUS_SCALE * geom.segment_radius[k] if r is None else r
    return int(geom.segment_strand[k]), arc - r, arc + r


def quadrature_shade(x, w_o, u, scene: Scene, resolution: int = 64, *, radiance=None,
                     phase=None, visibility: bool = True, exclude=None,
                     include_lights: bool = False) -> np.ndarray:
    """Sphere quadrature of L_far * V_true * S at one shading point, RGB.

    ``radiance(dirs) -> (K, 3)`` defaults to the scene environment (zero
    when absent); ``phase(dirs) -> (K, 3)`` defaults to the exact phase
    function. V_true is ray-cast per node unless ``visibility`` is off;
    ``exclude`` = (strand, arc_lo, arc_hi) overrides the automatic
    own-strand window. ``include_lights`` adds the lights with shadow rays.
    """
    x = np.asarray(x, dtype=np.float64).reshape(3)
    w_o = np.asarray(w_o, dtype=np.float64).reshape(3)
    u = np.asarray(u, dtype=np.float64).reshape(3)
    geom = scene.world_geometry
    if visibility and exclude is None:
        exclude = _auto_exclusion(scene, x)

    def vis(dirs, tmax=None):
        if not visibility:
            return np.ones(len(dirs))
        n = len(dirs)
        return raycast.transmittance_rays(geom, np.broadcast_to(x, (n, 3)), dirs,
                                          np.full(n, exclude[0]), np.full(n, exclude[1]),
                                          np.full(n, exclude[2]), tmax)

    def S(dirs):
        if phase is not None:
            return phase(dirs)
        return eval_phase(scene.material, scene.lut, dirs, w_o, u)

    out = np.zeros(3)
    if radiance is None and scene.environment is not None:
        radiance = scene.environment.radiance
    if radiance is not None:
        dirs, w = shmath.sphere_quadrature(resolution)
        L = radiance(dirs)
        keep = np.any(L != 0, axis=1) & (w > 0)
        if np.any(keep):
            d = dirs[keep]
            out += np.sum((w[keep] * vis(d))[:, None] * L[keep] * S(d), axis=0)
    if include_lights:
        for light in scene.lights:
            wl, L, r = light.incident(x)
            tm = None if not np.isfinite(r) else np.array([r])
            out += L * vis(wl[None, :], tm)[0] * S(wl[None, :])[0]
    return out


__all__ = ["quadrature_shade", "trace_reference"]
