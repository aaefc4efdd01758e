"""Procedural test scenes: hand-built grooms and a smooth sky."""

from __future__ import annotations

import math

import numpy as np

from .geometry import HairGeometry


def _hoop(radius, colat, n=64, centre=(0.0, 0.0, 0.0)):
    """Closed latitude circle on a sphere (first vertex repeated at the end)."""
    ph = np.linspace(0.0, 2 * math.pi, n + 1)
    s, c = math.sin(colat), math.cos(colat)
    return np.stack([radius * s * np.cos(ph), radius * s * np.sin(ph),
                     np.full_like(ph, radius * c)], axis=1) + np.asarray(centre)


def probe_strand(length: float = 0.1, radius: float = 0.005, alpha: float = 0.5) -> HairGeometry:
    """Short strand along x through the origin; vertex 1 sits at the origin."""
    pts = np.array([[-length / 2, 0.0, 0.0], [0.0, 0.0, 0.0], [length / 2, 0.0, 0.0]])
    return HairGeometry((pts,), (np.full(3, radius),), np.array([alpha]))


def single_strand(length: float = 2.0, radius: float = 0.05, alpha: float = 1.0,
                  n_vertices: int = 16) -> HairGeometry:
    """One straight strand along x centred on the origin."""
    x = np.linspace(-length / 2, length / 2, n_vertices)
    pts = np.stack([x, np.zeros_like(x), np.zeros_like(x)], axis=1)
    return HairGeometry((pts,), (np.full(n_vertices, radius),), np.array([alpha]))


def enclosure(shell_radius: float = 1.0, strand_radius: float = 0.03,
              alpha: float = 1.0) -> HairGeometry:
    """Probe strand inside a closed shell of overlapping latitude hoops.

    Hoops are spaced by less than one strand diameter so no ray from the
    centre escapes; short strands plug the two poles.
    """
    step = 1.6 * strand_radius / shell_radius
    colats = np.arange(step, math.pi - step / 2, step)
    strands = [_hoop(shell_radius, c) for c in colats]
    for z in (shell_radius, -shell_radius):
        strands.append(np.array([[-2 * strand_radius, 0, z], [2 * strand_radius, 0, z]]))
    probe = probe_strand()
    return probe + HairGeometry(tuple(strands), tuple(np.full(len(s), strand_radius) for s in strands),
                                np.full(len(strands), alpha))


def occluding_mat(height: float = 0.3, extent: float = 30.0, strand_radius: float = 0.02,
                  alpha: float = 1.0) -> HairGeometry:
    """Probe strand under a wide opaque flat mat of parallel strands.

    The mat covers the upper hemisphere except a thin band near the horizon.
    """
    ys = np.arange(-extent, extent + 1e-9, 1.6 * strand_radius)
    xs = np.array([-extent, extent])
    strands = tuple(np.stack([xs, np.full(2, y), np.full(2, height)], axis=1) for y in ys)
    mat = HairGeometry(strands, tuple(np.full(2, strand_radius) for _ in strands),
                       np.full(len(strands), alpha))
    return probe_strand() + mat


def half_occlusion(shell_radius: float = 1.0, strand_radius: float = 0.03,
                   max_alpha: float = 0.9, power: float = 2.0) -> HairGeometry:
    """Probe strand under a dome of hoops whose alpha grows smoothly toward the zenith.

    A direction with height z > 0 crosses one hoop of alpha
    ``max_alpha * z**power``; the lower hemisphere is open.
    """
    step = 1.6 * strand_radius / shell_radius
    colats = np.arange(step, math.pi / 2, step)
    strands = [_hoop(shell_radius, c) for c in colats]
    alphas = [max_alpha * math.cos(c) ** power for c in colats]
    strands.append(np.array([[-2 * strand_radius, 0, shell_radius], [2 * strand_radius, 0, shell_radius]]))
    alphas.append(max_alpha)
    dome = HairGeometry(tuple(strands), tuple(np.full(len(s), strand_radius) for s in strands),
                        np.array(alphas))
    return probe_strand() + dome


def curl(n_strands: int = 200, n_vertices: int = 32, length: float = 2.0,
         strand_radius: float = 0.012, alpha: float = 0.6, seed: int = 7) -> HairGeometry:
    """A lock of helical strands hanging from a small patch, about 1.6 units tall."""
    rng = np.random.default_rng(seed)
    strands, radii = [], []
    s = np.linspace(0.0, 1.0, n_vertices)
    for _ in range(n_strands):
        r0 = 0.35 * math.sqrt(rng.uniform())
        a0 = rng.uniform(0, 2 * math.pi)
        root = np.array([r0 * math.cos(a0), r0 * math.sin(a0), 0.8])
        helix_r = rng.uniform(0.06, 0.14)
        turns = rng.uniform(2.0, 3.5)
        phase = rng.uniform(0, 2 * math.pi)
        ang = phase + 2 * math.pi * turns * s
        drop = length * 0.8 * s
        spread = 0.25 * s * np.array([math.cos(a0), math.sin(a0)])[:, None]
        pts = np.stack([root[0] + helix_r * (np.cos(ang) - math.cos(phase)) + spread[0],
                        root[1] + helix_r * (np.sin(ang) - math.sin(phase)) + spread[1],
                        root[2] - drop], axis=1)
        strands.append(pts)
        radii.append(np.full(n_vertices, strand_radius) * np.linspace(1.0, 0.6, n_vertices))
    return HairGeometry(tuple(strands), tuple(radii), np.full(n_strands, alpha))


def sky(height: int = 64, width: int = 128, sun_direction=(0.4, -0.5, 0.77),
        sun_power: float = 3.0) -> np.ndarray:
    """Smooth equirectangular sky: blue zenith, warm horizon, dark ground, broad sun."""
    th = (np.arange(height) + 0.5) / height * math.pi
    ph = (np.arange(width) + 0.5) / width * 2 * math.pi
    st = np.sin(th)[:, None]
    d = np.stack(np.broadcast_arrays(st * np.cos(ph)[None, :], st * np.sin(ph)[None, :],
                                     np.cos(th)[:, None]), axis=-1)
    z = d[..., 2:3]
    zenith = np.array([0.25, 0.45, 0.9])
    horizon = np.array([0.9, 0.75, 0.55])
    ground = np.array([0.12, 0.1, 0.08])
    up = np.clip(z, 0.0, 1.0)
    img = np.where(z >= 0, horizon * (1 - up) + zenith * up, ground + (horizon - ground) * np.exp(8 * z))
    sd = np.asarray(sun_direction, dtype=np.float64)
    sd = sd / np.linalg.norm(sd)
    c = np.clip(d @ sd, -1.0, 1.0)
    img = img + sun_power * np.exp(4.0 * (c - 1.0))[..., None] * np.array([1.0, 0.9, 0.75])
    return img


def band_limited_sky(order: int = 4, height: int = 64, width: int = 128):
    """SH projection of :func:`sky` with the source map dropped (strictly band-limited)."""
    from .farfield import EnvironmentSH, project_envmap

    return EnvironmentSH(project_envmap(sky(height, width), order).coeffs)


SCENES = {
    "single-strand": single_strand,
    "enclosure": enclosure,
    "mat": occluding_mat,
    "half-occlusion": half_occlusion,
    "curl": curl,
}
