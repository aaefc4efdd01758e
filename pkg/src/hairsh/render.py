"""Scene assembly and the single-pass shading path.

Primary rays are cast against strand capsules, every hit layer is shaded
(direct lights through the baked transmittance, environment through the SH
triple product) and the layers are composited front to back with their
coverage alpha. A Kajiya-Kay shader runs on the same hit lists as the
baseline.
"""

from __future__ import annotations

import math
import statistics
import time
from dataclasses import dataclass, field, replace
from functools import cached_property

import numpy as np
from scipy.optimize import nnls

from . import raycast, shading
from .farfield import EnvironmentSH, PhaseSHLUT, shade_far
from .fiber import AzimuthalLUT, FiberMaterial, eval_phase
from .geometry import HairGeometry
from .transmittance import EXCLUSION_RADIUS_SCALE, VertexTransmittanceSH, biased_V


@dataclass(frozen=True)
class Light:
    """Directional light (``vector`` points toward the light) or point light.

    ``radiance`` is the RGB radiance for directional lights and the RGB
    intensity for point lights (falls off with the squared distance).
    """

    kind: str
    vector: np.ndarray
    radiance: np.ndarray

    def __post_init__(self):
        if self.kind not in ("directional", "point"):
            raise ValueError(f"unknown light kind {self.kind!r}")
        v = np.asarray(self.vector, dtype=np.float64).reshape(3)
        if self.kind == "directional":
            n = np.linalg.norm(v)
            if n == 0:
                raise ValueError("light direction must be non-zero")
            if abs(n - 1.0) > 1e-12:  # idempotent, so scaled() keeps the exact direction
                v = v / n
        object.__setattr__(self, "vector", v)
        object.__setattr__(self, "radiance", np.asarray(self.radiance, dtype=np.float64).reshape(3))

    @classmethod
    def directional(cls, direction, radiance) -> "Light":
        return cls("directional", direction, radiance)

    @classmethod
    def point(cls, position, intensity) -> "Light":
        return cls("point", position, intensity)

    def incident(self, x):
        """(unit directions toward the light, RGB radiance arriving at x, distance)."""
        x = np.asarray(x, dtype=np.float64)
        if self.kind == "directional":
            d = np.broadcast_to(self.vector, x.shape)
            return d, np.broadcast_to(self.radiance, x.shape), np.full(x.shape[:-1], np.inf)
        v = self.vector - x
        r2 = np.sum(v * v, axis=-1)
        r = np.sqrt(r2)
        return v / r[..., None], self.radiance / r2[..., None], r

    def scaled(self, s: float) -> "Light":
        return Light(self.kind, self.vector, self.radiance * s)

    def to_dict(self) -> dict:
        key = "direction" if self.kind == "directional" else "position"
        return {"type": self.kind, key: self.vector.tolist(), "radiance": self.radiance.tolist()}


@dataclass(frozen=True, eq=False)
class Scene:
    """Groom, fiber model, baked data and lighting.

    ``geometry`` and ``transmittance`` are in model space; ``rotation`` and
    ``translation`` place the groom in the world.
    """

    geometry: HairGeometry
    material: FiberMaterial
    lut: AzimuthalLUT
    transmittance: VertexTransmittanceSH | None = None
    lights: tuple[Light, ...] = ()
    environment: EnvironmentSH | None = None
    phase_lut: PhaseSHLUT | None = None
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))
    exclusion_radius: float | None = None

    def __post_init__(self):
        if self.transmittance is None:
            object.__setattr__(self, "transmittance",
                               VertexTransmittanceSH.unoccluded(self.geometry.n_vertices))
        if self.transmittance.n_vertices != self.geometry.n_vertices:
            raise ValueError(f"transmittance has {self.transmittance.n_vertices} vertices, "
                             f"geometry has {self.geometry.n_vertices}")
        R = np.asarray(self.rotation, dtype=np.float64)
        if not (np.allclose(R @ R.T, np.eye(3), atol=1e-9) and abs(np.linalg.det(R) - 1) < 1e-9):
            raise ValueError("scene rotation must be a proper rotation")
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", np.asarray(self.translation, dtype=np.float64))
        object.__setattr__(self, "lights", tuple(self.lights))
        if self.environment is not None and self.phase_lut is None:
            raise ValueError("an environment needs a phase SH table")

    @cached_property
    def world_geometry(self) -> HairGeometry:
        if np.array_equal(self.rotation, np.eye(3)) and not np.any(self.translation):
            return self.geometry
        return self.geometry.transformed(self.rotation, self.translation)

    @cached_property
    def world_transmittance(self) -> np.ndarray:
        if np.array_equal(self.rotation, np.eye(3)):
            return self.transmittance.coeffs
        return self.transmittance.rotated(self.rotation).coeffs

    def replace(self, **kw) -> "Scene":
        return replace(self, **kw)


@dataclass(frozen=True)
class Camera:
    position: np.ndarray
    look_at: np.ndarray
    up: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 1.0]))
    fov_y: float = math.radians(40.0)
    width: int = 128
    height: int = 128

    def __post_init__(self):
        if not 0 < self.fov_y < math.pi:
            raise ValueError("field of view must be in (0, pi)")
        for name in ("position", "look_at", "up"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=np.float64))

    def packed(self) -> np.ndarray:
        """(origin, right * tan * aspect, up * tan, forward) as 12 floats."""
        f = self.look_at - self.position
        f = f / np.linalg.norm(f)
        r = np.cross(f, self.up)
        r = r / np.linalg.norm(r)
        u = np.cross(r, f)
        th = math.tan(self.fov_y / 2)
        return np.concatenate([self.position, r * th * self.width / self.height, u * th, f])

    def rays(self, supersample: int = 1):
        """Stratified ray grid: (origins, unit dirs, pixel index), row-major pixels."""
        c = self.packed()
        n = supersample
        off = (np.arange(n) + 0.5) / n
        rows, cols = np.meshgrid(np.arange(self.height), np.arange(self.width), indexing="ij")
        pix = (rows * self.width + cols).reshape(-1)
        fy, fx = np.meshgrid(off, off, indexing="ij")
        sx = 2.0 * (cols.reshape(-1, 1) + fx.reshape(1, -1)) / self.width - 1.0
        sy = 1.0 - 2.0 * (rows.reshape(-1, 1) + fy.reshape(1, -1)) / self.height
        d = c[9:12] + sx[..., None] * c[3:6] + sy[..., None] * c[6:9]
        d = d.reshape(-1, 3)
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        return np.broadcast_to(c[:3], d.shape).copy(), d, np.repeat(pix, n * n)


@dataclass(frozen=True)
class FrameBuffer:
    rgb: np.ndarray
    alpha: np.ndarray

    @property
    def shape(self):
        return self.rgb.shape[:2]


@dataclass(frozen=True)
class RenderSettings:
    bias: float = 0.1
    max_hits: int = 32
    background: tuple = (0.0, 0.0, 0.0)
    supersample: int = 1
    opacity_cut: float = 0.999
    shader: str = "ours"
    kk_diffuse: tuple = (0.3, 0.2, 0.12)
    kk_specular: tuple = (0.15, 0.15, 0.15)
    kk_exponent: float = 32.0
    kk_ambient: tuple = (0.05, 0.04, 0.03)
    backend: str = "compiled"

    def to_dict(self) -> dict:
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in self.__dict__.items()}


# ---------------------------------------------------------------------------
# Visibility


@dataclass
class Hits:
    """Shading points of all hit layers plus per-ray compositing data."""

    ray: np.ndarray
    weight: np.ndarray
    x: np.ndarray
    tangent: np.ndarray
    wo: np.ndarray
    vsh: np.ndarray
    ray_transmit: np.ndarray
    ray_pixel: np.ndarray
    n_pixels: int
    shape: tuple

    @property
    def count(self) -> int:
        return len(self.ray)


def trace_visibility(scene: Scene, camera: Camera, settings: RenderSettings) -> Hits:
    geom = scene.world_geometry
    origins, dirs, pix = camera.rays(settings.supersample)
    t, seg, cnt = raycast.primary_layers(geom, origins, dirs, settings.max_hits, settings.opacity_cut)
    layer = np.arange(t.shape[1])[None, :]
    valid = layer < cnt[:, None]
    ray_idx, lay = np.nonzero(valid)
    k = seg[ray_idx, lay]
    seg_alpha = geom.alpha[geom.segment_strand] if geom.n_segments else np.zeros(1)
    alpha = seg_alpha[seg.clip(0)] * valid
    # exclusive cumulative transmittance in front of each layer
    trans = np.cumprod(np.concatenate([np.ones((len(t), 1)), 1.0 - alpha], axis=1), axis=1)
    weight = (alpha * trans[:, :-1])[ray_idx, lay]
    ray_transmit = trans[np.arange(len(t)), cnt]

    a_idx, b_idx = geom.segments[k, 0], geom.segments[k, 1]
    pa, pb = geom.positions[a_idx], geom.positions[b_idx]
    e = pb - pa
    ee = np.sum(e * e, axis=1)
    hit = origins[ray_idx] + t[ray_idx, lay, None] * dirs[ray_idx]
    s = np.clip(np.sum((hit - pa) * e, axis=1) / ee, 0.0, 1.0)
    V = scene.world_transmittance
    return Hits(ray=ray_idx, weight=weight, x=pa + s[:, None] * e,
                tangent=e / np.sqrt(ee)[:, None], wo=-dirs[ray_idx],
                vsh=(1 - s)[:, None] * V[a_idx] + s[:, None] * V[b_idx],
                ray_transmit=ray_transmit, ray_pixel=pix,
                n_pixels=camera.width * camera.height, shape=(camera.height, camera.width))


def composite(hits: Hits, colors: np.ndarray, background) -> FrameBuffer:
    """Front-to-back compositing of shaded layers, averaged per pixel."""
    n_rays = len(hits.ray_transmit)
    ray_rgb = np.zeros((n_rays, 3))
    np.add.at(ray_rgb, hits.ray, hits.weight[:, None] * colors)
    ray_rgb += hits.ray_transmit[:, None] * np.asarray(background, dtype=np.float64)
    per = n_rays // hits.n_pixels
    rgb = np.zeros((hits.n_pixels, 3))
    np.add.at(rgb, hits.ray_pixel, ray_rgb)
    a = np.zeros(hits.n_pixels)
    np.add.at(a, hits.ray_pixel, 1.0 - hits.ray_transmit)
    h, w = hits.shape
    return FrameBuffer((rgb / per).reshape(h, w, 3), (a / per).reshape(h, w))


def composite_front_to_back(colors, alphas, background) -> np.ndarray:
    out = np.zeros(3)
    T = 1.0
    for c, a in zip(colors, alphas):
        out += T * a * np.asarray(c)
        T *= 1.0 - a
    return out + T * np.asarray(background, dtype=np.float64)


def composite_back_to_front(colors, alphas, background) -> np.ndarray:
    out = np.asarray(background, dtype=np.float64).copy()
    for c, a in zip(reversed(list(colors)), reversed(list(alphas))):
        out = a * np.asarray(c) + (1.0 - a) * out
    return out


# ---------------------------------------------------------------------------
# Shading


def shade_direct(scene: Scene, x, w_o, u, vsh, bias: float = 0.1) -> np.ndarray:
    """Sum over lights of radiance x biased baked transmittance x phase function."""
    x = np.asarray(x, dtype=np.float64)
    out = np.zeros(x.shape[:-1] + (3,))
    for light in scene.lights:
        wl, L, _ = light.incident(x)
        V = biased_V(vsh, wl, bias)
        out += L * V[..., None] * eval_phase(scene.material, scene.lut, wl, w_o, u)
    return out


def shade_point(scene: Scene, x, w_o, u, vsh, bias: float = 0.1) -> np.ndarray:
    out = shade_direct(scene, x, w_o, u, vsh, bias)
    if scene.environment is not None:
        out = out + shade_far(vsh, scene.environment, scene.phase_lut, w_o, u,
                              scene.material.sigma_a)
    return out


def kajiya_kay_shade(x, w_o, u, lights, ambient=(0.0, 0.0, 0.0), diffuse=(1.0, 1.0, 1.0),
                     specular=(1.0, 1.0, 1.0), exponent: float = 32.0) -> np.ndarray:
    """Kajiya-Kay: diffuse sin(t, l) plus a specular cone term, plus ambient."""
    x = np.asarray(x, dtype=np.float64)
    u = np.asarray(u, dtype=np.float64)
    w_o = np.asarray(w_o, dtype=np.float64)
    te = np.sum(u * w_o, axis=-1)
    se = np.sqrt(np.maximum(1.0 - te * te, 0.0))
    out = np.broadcast_to(np.asarray(ambient, dtype=np.float64), x.shape).copy()
    kd = np.asarray(diffuse, dtype=np.float64)
    ks = np.asarray(specular, dtype=np.float64)
    for light in lights:
        wl, L, _ = light.incident(x)
        tl = np.sum(u * wl, axis=-1)
        sl = np.sqrt(np.maximum(1.0 - tl * tl, 0.0))
        spec = np.maximum(sl * se - tl * te, 0.0) ** exponent
        out += L * (kd * sl[..., None] + ks * spec[..., None])
    return out


def shade_hits(scene: Scene, hits: Hits, settings: RenderSettings, shader: str | None = None):
    """Shade every hit layer with the compiled kernels, or numpy when asked or unsupported."""
    shader = shader or settings.shader
    if settings.backend not in ("compiled", "numpy"):
        raise ValueError(f"unknown backend {settings.backend!r}")
    compiled = settings.backend == "compiled"
    if shader == "ours":
        if compiled and shading.supports(scene):
            return shading.ours(scene, hits.x, hits.wo, hits.tangent, hits.vsh, settings.bias)
        return shade_point(scene, hits.x, hits.wo, hits.tangent, hits.vsh, settings.bias)
    if shader == "kajiya":
        kk = shading.kajiya_kay if compiled else kajiya_kay_shade
        return kk(hits.x, hits.wo, hits.tangent, scene.lights, settings.kk_ambient,
                  settings.kk_diffuse, settings.kk_specular, settings.kk_exponent)
    raise ValueError(f"unknown shader {shader!r}")


def render(scene: Scene, camera: Camera, settings: RenderSettings | None = None) -> FrameBuffer:
    settings = settings or RenderSettings()
    hits = trace_visibility(scene, camera, settings)
    return composite(hits, shade_hits(scene, hits, settings), settings.background)


# ---------------------------------------------------------------------------
# Comparison and timing


def compare_images(a: FrameBuffer | np.ndarray, b: FrameBuffer | np.ndarray, mask=None) -> dict:
    """RMSE and mean absolute error over all pixels, overall and per channel."""
    x = a.rgb if isinstance(a, FrameBuffer) else np.asarray(a, dtype=np.float64)
    y = b.rgb if isinstance(b, FrameBuffer) else np.asarray(b, dtype=np.float64)
    if x.shape != y.shape:
        raise ValueError(f"image shapes differ: {x.shape} vs {y.shape}")
    d = (x - y).reshape(-1, x.shape[-1])
    if mask is not None:
        d = d[np.asarray(mask).reshape(-1)]
    return {"rmse": float(np.sqrt(np.mean(d * d))), "mae": float(np.mean(np.abs(d))),
            "rmse_per_channel": np.sqrt(np.mean(d * d, axis=0)).tolist(),
            "mae_per_channel": np.mean(np.abs(d), axis=0).tolist()}


def tune_kajiya_kay(scene: Scene, camera: Camera, target: FrameBuffer,
                    settings: RenderSettings | None = None,
                    exponents=(4.0, 8.0, 16.0, 32.0, 64.0, 128.0)) -> tuple[RenderSettings, float]:
    """Least-squares (non-negative) fit of the Kajiya-Kay colours to a target image.

    The composite is linear in the diffuse, specular and ambient colours, so
    for every candidate exponent each channel is a small NNLS problem.
    Returns the best settings and their RMSE against ``target``.
    """
    settings = settings or RenderSettings()
    hits = trace_visibility(scene, camera, settings)
    zero = (0.0, 0.0, 0.0)
    one = (1.0, 1.0, 1.0)

    def image(**kw):
        c = kajiya_kay_shade(hits.x, hits.wo, hits.tangent, scene.lights,
                             kw.get("ambient", zero), kw.get("diffuse", zero),
                             kw.get("specular", zero), kw.get("exponent", 1.0))
        return composite(hits, c, zero).rgb

    base = composite(hits, np.zeros((hits.count, 3)), settings.background).rgb
    amb = image(ambient=one)
    dif = image(diffuse=one)
    best = None
    for p in exponents:
        spec = image(specular=one, exponent=p)
        params = []
        for ch in range(3):
            A = np.stack([dif[..., ch].ravel(), spec[..., ch].ravel(), amb[..., ch].ravel()], axis=1)
            coef, _ = nnls(A, (target.rgb[..., ch] - base[..., ch]).ravel())
            params.append(coef)
        params = np.array(params)
        fitted = replace(settings, shader="kajiya", kk_diffuse=tuple(params[:, 0]),
                         kk_specular=tuple(params[:, 1]), kk_ambient=tuple(params[:, 2]),
                         kk_exponent=float(p))
        img = composite(hits, shade_hits(scene, hits, fitted), settings.background)
        err = compare_images(img, target)["rmse"]
        if best is None or err < best[1]:
            best = (fitted, err)
    return best


def bench(scene: Scene, camera: Camera, shader: str = "ours", repetitions: int = 5,
          settings: RenderSettings | None = None, threads: int | None = None) -> dict:
    """Median wall-clock milliseconds per frame, total and shading-only."""
    if repetitions < 1:
        raise ValueError("repetitions must be >= 1")
    settings = replace(settings or RenderSettings(), shader=shader)
    raycast.set_threads(threads)
    total, shading, visibility = [], [], []
    for _ in range(repetitions):
        t0 = time.perf_counter()
        hits = trace_visibility(scene, camera, settings)
        t1 = time.perf_counter()
        colors = shade_hits(scene, hits, settings)
        t2 = time.perf_counter()
        composite(hits, colors, settings.background)
        t3 = time.perf_counter()
        visibility.append((t1 - t0) * 1e3)
        shading.append((t2 - t1) * 1e3)
        total.append((t3 - t0) * 1e3)
    return {"shader": shader, "backend": settings.backend, "repetitions": repetitions, "hits": hits.count,
            "pixels": camera.width * camera.height,
            "total_ms": statistics.median(total), "shading_ms": statistics.median(shading),
            "visibility_ms": statistics.median(visibility), "total_samples_ms": total,
            "shading_samples_ms": shading}


def bench_compare(scene: Scene, camera: Camera, repetitions: int = 5,
                  settings: RenderSettings | None = None, threads: int | None = None) -> dict:
    ours = bench(scene, camera, "ours", repetitions, settings, threads)
    kk = bench(scene, camera, "kajiya", repetitions, settings, threads)
    return {"ours": ours, "kajiya": kk,
            "shading_ratio": ours["shading_ms"] / kk["shading_ms"],
            "total_ratio": ours["total_ms"] / kk["total_ms"]}


__all__ = [
    "Camera", "FrameBuffer", "Hits", "Light", "RenderSettings", "Scene", "bench", "bench_compare",
    "compare_images", "composite", "composite_back_to_front", "composite_front_to_back",
    "kajiya_kay_shade", "render", "shade_direct", "shade_point", "trace_visibility",
    "tune_kajiya_kay", "EXCLUSION_RADIUS_SCALE",
]
