"""Environment lighting through SH triple products.

The phase function of a fiber is baked, per scattering mode and without
absorption, into SH vectors over the incident direction. They live in a
canonical frame (tangent = +z, outgoing direction in the xz-plane with
positive x) and are tabulated over ``x = (sin theta_r + 1) / 2``. At
shading time the modes are recombined with exponential absorption
weights, rotated to world space and integrated against transmittance and
environment SH.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import shmath
from .fiber import AzimuthalLUT, FiberMaterial, Mode, bravais_index, phase_modes

log = logging.getLogger(__name__)

TT_ABSORPTION = 4.0
TRT_ABSORPTION = 5.5
DEFAULT_PHASE_ORDER = 1
DEFAULT_PHASE_SAMPLES = 128
DEFAULT_BAKE_QUADRATURE = 128


# ---------------------------------------------------------------------------
# Environment


@dataclass(frozen=True)
class EnvironmentMap:
    """Equirectangular RGB radiance; row 0 looks toward +z, column 0 toward +x."""

    image: np.ndarray

    def __post_init__(self):
        img = np.asarray(self.image, dtype=np.float64)
        if img.ndim == 2:
            img = np.repeat(img[..., None], 3, axis=-1)
        if img.ndim != 3 or img.shape[2] != 3:
            raise ValueError("environment image must be (H, W, 3)")
        h, w = img.shape[:2]
        if h < 4 or w < 8:
            raise ValueError("environment image must be at least 8x4")
        object.__setattr__(self, "image", img)

    def pixel_directions(self):
        """Pixel-centre directions (H, W, 3) and per-pixel solid angles (H, W)."""
        h, w = self.image.shape[:2]
        th_edges = np.linspace(0.0, math.pi, h + 1)
        th = 0.5 * (th_edges[:-1] + th_edges[1:])
        ph = (np.arange(w) + 0.5) * (2 * math.pi / w)
        st = np.sin(th)[:, None]
        d = np.stack(np.broadcast_arrays(st * np.cos(ph)[None, :], st * np.sin(ph)[None, :],
                                         np.cos(th)[:, None]), axis=-1)
        sa = (np.cos(th_edges[:-1]) - np.cos(th_edges[1:])) * (2 * math.pi / w)
        return d, np.broadcast_to(sa[:, None], (h, w))

    def lookup(self, dirs) -> np.ndarray:
        """Bilinear radiance lookup, wrapping in longitude."""
        d = np.asarray(dirs, dtype=np.float64)
        d = d / np.linalg.norm(d, axis=-1, keepdims=True)
        h, w = self.image.shape[:2]
        th = np.arccos(np.clip(d[..., 2], -1.0, 1.0))
        ph = np.mod(np.arctan2(d[..., 1], d[..., 0]), 2 * math.pi)
        fy = np.clip(th / math.pi * h - 0.5, 0.0, h - 1.0)
        fx = ph / (2 * math.pi) * w - 0.5
        y0 = np.minimum(fy.astype(np.int64), h - 2) if h > 1 else np.zeros_like(fy, np.int64)
        x0 = np.floor(fx).astype(np.int64)
        a = (fy - y0)[..., None]
        b = (fx - x0)[..., None]
        x0m, x1m = np.mod(x0, w), np.mod(x0 + 1, w)
        img = self.image
        return ((1 - a) * ((1 - b) * img[y0, x0m] + b * img[y0, x1m])
                + a * ((1 - b) * img[y0 + 1, x0m] + b * img[y0 + 1, x1m]))


@dataclass(frozen=True, eq=False)
class EnvironmentSH:
    """RGB environment as SH, coefficients (3, n); optional source map."""

    coeffs: np.ndarray
    source: EnvironmentMap | None = None
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        c = np.array(self.coeffs, dtype=np.float64)
        if c.ndim != 2 or c.shape[0] != 3:
            raise ValueError("environment coefficients must be (3, n)")
        shmath.order_from_count(c.shape[1])
        if not np.all(np.isfinite(c)):
            raise ValueError("environment coefficients must be finite")
        c.flags.writeable = False
        object.__setattr__(self, "coeffs", c)

    @property
    def order(self) -> int:
        return shmath.order_from_count(self.coeffs.shape[1])

    def channel(self, k: int) -> shmath.SHVector:
        return shmath.SHVector(self.coeffs[k])

    def evaluate(self, dirs) -> np.ndarray:
        return shmath.sh_basis(self.order, dirs) @ self.coeffs.T

    def radiance(self, dirs) -> np.ndarray:
        """Source-map radiance when available, else the clamped SH reconstruction."""
        if self.source is not None:
            return self.source.lookup(dirs)
        return np.maximum(self.evaluate(dirs), 0.0)

    def scaled(self, s) -> "EnvironmentSH":
        return EnvironmentSH(self.coeffs * np.asarray(s, dtype=np.float64).reshape(-1, 1))

    def rotated(self, R) -> "EnvironmentSH":
        return EnvironmentSH(shmath.rotate(self.coeffs, R))

    def gaunt_contracted(self, order: int) -> np.ndarray:
        """T[k, a, c] = sum_b G[a, b, c] env_k[b] for every pair of orders up to ``order``."""
        key = ("gaunt", order)
        if key not in self._cache:
            G = shmath.real_gaunt(order)
            env = shmath.resize(self.coeffs, order)
            self._cache[key] = np.einsum("abc,kb->kac", G, env)
        return self._cache[key]

    @classmethod
    def uniform(cls, rgb=(1.0, 1.0, 1.0), order: int = 2) -> "EnvironmentSH":
        c = np.zeros((3, shmath.n_coeffs(order)))
        c[:, 0] = np.asarray(rgb, dtype=np.float64) * 2.0 * math.sqrt(math.pi)
        return cls(c)


def project_envmap(image, order: int = 2) -> EnvironmentSH:
    """Per-channel SH projection of an equirectangular map with exact row solid angles."""
    env = image if isinstance(image, EnvironmentMap) else EnvironmentMap(image)
    d, sa = env.pixel_directions()
    Y = shmath.sh_basis(order, d.reshape(-1, 3))
    c = (Y * sa.reshape(-1, 1)).T @ env.image.reshape(-1, 3)
    return EnvironmentSH(c.T, source=env)


# ---------------------------------------------------------------------------
# Phase-function SH table


@dataclass(frozen=True)
class PhaseSHLUT:
    """Canonical-frame SH of each scattering mode over (sin theta_r + 1) / 2.

    ``coeffs`` has shape (N, 3 modes, n); sample j sits at x = (j + 0.5) / N.
    """

    coeffs: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=np.float64)
        if c.ndim != 3 or c.shape[0] < 2 or c.shape[1] != 3:
            raise ValueError("phase SH table must be (N >= 2, 3, n)")
        shmath.order_from_count(c.shape[2])
        object.__setattr__(self, "coeffs", c)

    @property
    def samples(self) -> int:
        return self.coeffs.shape[0]

    @property
    def order(self) -> int:
        return shmath.order_from_count(self.coeffs.shape[2])

    def x_nodes(self) -> np.ndarray:
        return (np.arange(self.samples) + 0.5) / self.samples

    def fetch(self, sin_theta_r) -> np.ndarray:
        """Linearly interpolated per-mode coefficients, (..., 3, n)."""
        x = (np.asarray(sin_theta_r, dtype=np.float64) + 1.0) / 2.0
        f = np.clip(x * self.samples - 0.5, 0.0, self.samples - 1.0)
        i = np.minimum(f.astype(np.int64), self.samples - 2)
        t = (f - i)[..., None, None]
        return (1 - t) * self.coeffs[i] + t * self.coeffs[i + 1]

    def combine(self, sin_theta_r, sigma_a) -> np.ndarray:
        """Absorption-weighted sum of the modes per RGB channel, (..., 3, n)."""
        a = self.fetch(sin_theta_r)
        s = np.asarray(sigma_a, dtype=np.float64)
        w = np.stack(np.broadcast_arrays(np.ones_like(s), np.exp(-TT_ABSORPTION * s),
                                         np.exp(-TRT_ABSORPTION * s)), axis=-1)
        return np.matmul(w, a)


def _canonical_outgoing(sin_theta_r) -> np.ndarray:
    s = np.asarray(sin_theta_r, dtype=np.float64)
    return np.stack([np.sqrt(np.maximum(1.0 - s * s, 0.0)), np.zeros_like(s), s], axis=-1)


_CANONICAL_TANGENT = np.array([0.0, 0.0, 1.0])


def _mode_projection(material, lut, sin_theta_r, order, quadrature_resolution):
    dirs, w = shmath.sphere_quadrature(quadrature_resolution)
    Y = shmath.sh_basis(order, dirs) * w[:, None]
    wr = _canonical_outgoing(sin_theta_r)
    terms, td = phase_modes(material, lut, dirs, wr, _CANONICAL_TANGENT)
    return terms, td, Y


def bake_phase_sh_lut(material: FiberMaterial, lut: AzimuthalLUT,
                      order: int = DEFAULT_PHASE_ORDER, samples: int = DEFAULT_PHASE_SAMPLES,
                      quadrature_resolution: int = DEFAULT_BAKE_QUADRATURE) -> PhaseSHLUT:
    """Project each unit-absorption mode of the phase function at every sample."""
    if samples < 2:
        raise ValueError("phase SH table needs at least two samples")
    x = (np.arange(samples) + 0.5) / samples
    out = np.zeros((samples, 3, shmath.n_coeffs(order)))
    for j, xj in enumerate(x):
        terms, _, Y = _mode_projection(material, lut, 2 * xj - 1, order, quadrature_resolution)
        out[j] = terms.T @ Y
    meta = {"material": material.to_dict(), "order": order, "samples": samples,
            "quadrature_resolution": quadrature_resolution,
            "parametrization": "x = (sin(theta_r) + 1) / 2, sample j at (j + 0.5) / N"}
    return PhaseSHLUT(out, meta)


def trt_exact_factor(theta_d, sigma_a, eta):
    return np.exp(-8.0 * np.asarray(sigma_a) * (1.0 - 3.0 / (2.0 * bravais_index(theta_d, eta) ** 2)))


def trt_crossing_theta_d(eta: float) -> float:
    """theta_d >= 0 at which the exact and factorized TRT exponents coincide."""
    target = math.sqrt(3.0 / (2.0 * (1.0 - TRT_ABSORPTION / 8.0)))
    # sqrt(eta^2 - s^2) / sqrt(1 - s^2) = target  ->  solve for s^2
    s2 = (target * target - eta * eta) / (target * target - 1.0)
    if not 0.0 <= s2 < 1.0:
        raise ValueError(f"no crossing for eta={eta}")
    return math.asin(math.sqrt(s2))


def validate_trt_factorization(material: FiberMaterial, lut: AzimuthalLUT, sigma_a_samples,
                               order: int = DEFAULT_PHASE_ORDER, samples: int = 32,
                               quadrature_resolution: int = DEFAULT_BAKE_QUADRATURE) -> list[dict]:
    """Compare the exp(-5.5 sigma_a) TRT shortcut against direct projection.

    For every gray absorption value, the direct side projects the TRT term
    with its exact theta_d-dependent exponential. The reported error is the
    relative L2 norm of the coefficient difference over all samples.
    """
    x = (np.arange(samples) + 0.5) / samples
    pre = [_mode_projection(material, lut, 2 * xj - 1, order, quadrature_resolution) for xj in x]
    report = []
    for sigma in sigma_a_samples:
        sigma = float(sigma)
        fact, direct = [], []
        for terms, td, Y in pre:
            trt = terms[:, Mode.TRT]
            fact.append((trt @ Y) * math.exp(-TRT_ABSORPTION * sigma))
            direct.append((trt * trt_exact_factor(td, sigma, material.eta)) @ Y)
        fact, direct = np.array(fact), np.array(direct)
        diff = np.linalg.norm(fact - direct)
        norm = np.linalg.norm(direct)
        per_sample = np.linalg.norm(fact - direct, axis=1) / np.maximum(
            np.linalg.norm(direct, axis=1), 1e-300)
        report.append({"sigma_a": sigma, "relative_l2_error": float(diff / norm) if norm > 0 else 0.0,
                       "max_sample_error": float(per_sample.max()), "order": order,
                       "samples": samples})
    return report


# ---------------------------------------------------------------------------
# Shading


def canonical_rotation(w_r, u) -> np.ndarray:
    """Rotation taking the canonical frame (tangent +z, w_r in +x half of xz) to world."""
    return shmath.frame_from_z(u, x_hint=w_r)


def world_phase_sh(phase_lut: PhaseSHLUT, w_r, u, sigma_a) -> np.ndarray:
    """Combined, world-space phase SH per channel, (..., 3, n)."""
    w_r = np.asarray(w_r, dtype=np.float64)
    u = np.asarray(u, dtype=np.float64)
    un = u / np.linalg.norm(u, axis=-1, keepdims=True)
    sin_r = np.clip(np.sum(w_r * un, axis=-1), -1.0, 1.0)
    A = phase_lut.combine(sin_r, sigma_a)
    M = shmath.rotation_matrix(canonical_rotation(w_r, un), phase_lut.order)
    return np.matmul(A, np.swapaxes(M, -1, -2))


def shade_far(v_sh, env: EnvironmentSH, phase_lut: PhaseSHLUT, w_r, u, sigma_a) -> np.ndarray:
    """Environment contribution via the SH triple product, RGB (..., 3), clamped at 0."""
    v = v_sh.coeffs if isinstance(v_sh, shmath.SHVector) else np.asarray(v_sh, dtype=np.float64)
    S = world_phase_sh(phase_lut, w_r, u, sigma_a)
    order = max(shmath.order_from_count(v.shape[-1]), env.order, phase_lut.order)
    T = env.gaunt_contracted(order)
    nv, ns = v.shape[-1], S.shape[-1]
    # per channel: (v^T T_k) . S_k, as matmuls rather than one generic einsum
    T = T[:, :nv, :ns]
    out = np.stack([np.sum((v @ T[k]) * S[..., k, :], axis=-1) for k in range(3)], axis=-1)
    neg = out < 0
    if np.any(neg):
        log.debug("triple product: %d negative channel values clamped (min %.3e)",
                  int(neg.sum()), float(out.min()))
    return np.maximum(out, 0.0)
