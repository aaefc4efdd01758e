"""Single-fiber phase function.

Scattering geometry, Henyey-Greenstein longitudinal lobes, the lobe-width
fit, azimuthal look-up table baking, absorption factors and the full
three-mode phase function of a circular hair fiber.

Angle conventions: ``theta`` is the inclination from the fiber normal
plane (``sin theta = w . u``); azimuths are measured in the normal plane
from the first axis of :func:`hairsh.shmath.frame_from_z` applied to the
tangent. Only azimuth differences enter the phase function, so the choice
of reference axis is immaterial.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import IntEnum
from functools import lru_cache

import numpy as np
from scipy.optimize import minimize_scalar

from .shmath import frame_from_z

ETA_HAIR = 1.55
MAX_THETA_D = math.radians(89.0)
COS2_FLOOR = 1e-4
JACOBIAN_FLOOR = 0.05
ROOT_GRID = 1025
BISECT_STEPS = 60


class Mode(IntEnum):
    R = 0
    TT = 1
    TRT = 2


MODES = (Mode.R, Mode.TT, Mode.TRT)


class FitError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# Geometry


@dataclass(frozen=True)
class ScatteringAngles:
    """Fiber-frame angles of an (incident, outgoing) direction pair.

    Derived angles are properties so they always agree with the primary
    fields. ``phi_h`` is kept for completeness; nothing downstream uses it.
    """

    theta_i: np.ndarray
    theta_r: np.ndarray
    phi_i: np.ndarray
    phi_r: np.ndarray

    @property
    def theta_d(self):
        return (self.theta_r - self.theta_i) / 2

    @property
    def theta_h(self):
        return (self.theta_i + self.theta_r) / 2

    @property
    def phi(self):
        return wrap_angle(self.phi_r - self.phi_i)

    @property
    def phi_h(self):
        return (self.phi_i + self.phi_r) / 2


def wrap_angle(a):
    """Wrap to (-pi, pi]."""
    a = np.asarray(a, dtype=np.float64)
    w = np.mod(a + np.pi, 2 * np.pi) - np.pi
    return np.where(w == -np.pi, np.pi, w)


def _azimuth(w, frame):
    x = np.sum(w * frame[..., :, 0], axis=-1)
    y = np.sum(w * frame[..., :, 1], axis=-1)
    # directions along the tangent have no azimuth; 0 by convention
    return np.where(np.hypot(x, y) < 1e-12, 0.0, np.arctan2(y, x))


def angles_from_directions(w_i, w_r, u) -> ScatteringAngles:
    w_i = np.asarray(w_i, dtype=np.float64)
    w_r = np.asarray(w_r, dtype=np.float64)
    u = np.asarray(u, dtype=np.float64)
    frame = frame_from_z(u)
    u_n = frame[..., :, 2]
    s_i = np.clip(np.sum(w_i * u_n, axis=-1), -1.0, 1.0)
    s_r = np.clip(np.sum(w_r * u_n, axis=-1), -1.0, 1.0)
    return ScatteringAngles(np.arcsin(s_i), np.arcsin(s_r),
                            _azimuth(w_i, frame), _azimuth(w_r, frame))


# ---------------------------------------------------------------------------
# Longitudinal lobes


def hg_lobe(g, cos_angle):
    """Henyey-Greenstein lobe, unit integral over the sphere."""
    g = np.asarray(g, dtype=np.float64)
    return (1 - g * g) / (4 * np.pi * (1 + g * g - 2 * g * np.asarray(cos_angle)) ** 1.5)


_FIT_SAMPLES = 8001
# Gaussian standard deviation in units of the lobe width beta; reproduces
# the published g(5, 10, 20 deg) = 0.865 / 0.752 / 0.578 within 0.005.
GAUSSIAN_WIDTH_SCALE = math.sqrt(2.0)


@lru_cache(maxsize=64)
def fit_g(beta: float) -> float:
    """HG shape ``g`` closest in L2 to a Gaussian lobe of width ``beta``.

    Both lobes are treated as profiles over the longitudinal angle
    x in [-pi, pi], normalized to unit integral, and compared without
    weighting. The Gaussian has standard deviation ``sqrt(2) * beta``.
    """
    if not 0 < beta < math.pi / 4:
        raise ValueError(f"beta must be in (0, pi/4) radians, got {beta}")
    x = np.linspace(-math.pi, math.pi, _FIT_SAMPLES)
    dx = x[1] - x[0]
    cx = np.cos(x)
    sigma = GAUSSIAN_WIDTH_SCALE * beta
    target = np.exp(-x * x / (2 * sigma * sigma))
    target /= target.sum() * dx

    def objective(g):
        h = hg_lobe(g, cx)
        h = h / (h.sum() * dx)
        return float(np.sum((h - target) ** 2) * dx)

    res = minimize_scalar(objective, bounds=(0.0, 0.999), method="bounded",
                          options={"xatol": 1e-6})
    if not res.success or res.x > 0.998 or res.x < 1e-3:
        raise FitError(f"g fit for beta={beta:.6f} failed: x={res.x:.6f}, "
                       f"objective={res.fun:.3e}, message={res.message!r}")
    return float(res.x)


@dataclass(frozen=True)
class LobeParams:
    beta: float
    alpha: float
    g: float

    def __post_init__(self):
        if not self.beta > 0:
            raise ValueError("lobe width must be positive")
        if not 0 <= self.g < 1:
            raise ValueError("HG shape g must be in [0, 1)")

    @classmethod
    def fitted(cls, beta: float, alpha: float) -> "LobeParams":
        return cls(beta, alpha, fit_g(beta))


@dataclass(frozen=True)
class FiberMaterial:
    """Absorbing dielectric fiber with R/TT/TRT lobes tied to the R lobe.

    ``sigma_a`` is the RGB absorption for one pass across the fiber.
    Construct with :meth:`from_surface` to derive the TT and TRT lobes.
    """

    sigma_a: np.ndarray = field(default_factory=lambda: np.zeros(3))
    eta: float = ETA_HAIR
    lobes: tuple[LobeParams, LobeParams, LobeParams] = None

    def __post_init__(self):
        s = np.array(self.sigma_a, dtype=np.float64).reshape(-1)
        if s.size == 1:
            s = np.repeat(s, 3)
        if s.size != 3 or np.any(s < 0):
            raise ValueError("sigma_a must be three non-negative values")
        s.flags.writeable = False
        object.__setattr__(self, "sigma_a", s)
        if self.lobes is None:
            object.__setattr__(self, "lobes", _derived_lobes(math.radians(10.0), math.radians(-10.0)))
        if self.eta <= 1.0:
            raise ValueError("fiber index must exceed 1")

    @classmethod
    def from_surface(cls, beta_r=math.radians(10.0), alpha_r=math.radians(-10.0),
                     eta=ETA_HAIR, sigma_a=(0.0, 0.0, 0.0)) -> "FiberMaterial":
        return cls(sigma_a=sigma_a, eta=eta, lobes=_derived_lobes(beta_r, alpha_r))

    def with_sigma_a(self, sigma_a) -> "FiberMaterial":
        return FiberMaterial(sigma_a=sigma_a, eta=self.eta, lobes=self.lobes)

    @property
    def beta_r(self) -> float:
        return self.lobes[Mode.R].beta

    @property
    def alpha_r(self) -> float:
        return self.lobes[Mode.R].alpha

    @property
    def g(self) -> np.ndarray:
        return np.array([lobe.g for lobe in self.lobes])

    @property
    def alpha(self) -> np.ndarray:
        return np.array([lobe.alpha for lobe in self.lobes])

    def to_dict(self) -> dict:
        return {
            "sigma_a": [float(v) for v in self.sigma_a],
            "eta": float(self.eta),
            "beta": [float(lobe.beta) for lobe in self.lobes],
            "alpha": [float(lobe.alpha) for lobe in self.lobes],
            "g": [float(lobe.g) for lobe in self.lobes],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FiberMaterial":
        lobes = tuple(LobeParams(b, a, g) for b, a, g in zip(d["beta"], d["alpha"], d["g"]))
        return cls(sigma_a=d["sigma_a"], eta=d["eta"], lobes=lobes)


def _derived_lobes(beta_r, alpha_r):
    return (LobeParams.fitted(beta_r, alpha_r),
            LobeParams.fitted(beta_r / 2, -alpha_r / 2),
            LobeParams.fitted(2 * beta_r, -3 * alpha_r / 2))


def longitudinal_M(mode: Mode, theta_h, material: FiberMaterial):
    lobe = material.lobes[mode]
    return hg_lobe(lobe.g, np.cos(np.asarray(theta_h) - lobe.alpha))


# ---------------------------------------------------------------------------
# Azimuthal scattering


def bravais_index(theta_d, eta: float = ETA_HAIR):
    """Virtual index for the perpendicular polarization, sqrt(eta^2 - sin^2)/cos.

    ``theta_d`` is clamped to +-89 degrees.
    """
    t = np.clip(np.asarray(theta_d, dtype=np.float64), -MAX_THETA_D, MAX_THETA_D)
    s = np.sin(t)
    return np.sqrt(eta * eta - s * s) / np.cos(t)


def bravais_index_parallel(theta_d, eta: float = ETA_HAIR):
    t = np.clip(np.asarray(theta_d, dtype=np.float64), -MAX_THETA_D, MAX_THETA_D)
    s = np.sin(t)
    return eta * eta * np.cos(t) / np.sqrt(eta * eta - s * s)


def fresnel(n_perp, n_par, gamma):
    """Unpolarized Fresnel reflectance at incidence angle ``gamma``.

    ``n_perp`` and ``n_par`` are relative indices (transmitted over
    incident) for the two polarizations; total internal reflection gives 1.
    """
    ci = np.cos(gamma)
    si2 = np.sin(gamma) ** 2

    def one(n, parallel):
        ct2 = 1.0 - si2 / (n * n)
        ct = np.sqrt(np.maximum(ct2, 0.0))
        if parallel:
            r = (n * ci - ct) / (n * ci + ct)
        else:
            r = (ci - n * ct) / (ci + n * ct)
        return np.where(ct2 <= 0.0, 1.0, np.minimum(r * r, 1.0))

    return 0.5 * (one(n_perp, False) + one(n_par, True))


def exit_azimuth(p: int, h, eta_p):
    """Outgoing relative azimuth of a mode-``p`` path entering at offset ``h``."""
    gamma_i = np.arcsin(h)
    gamma_t = np.arcsin(h / eta_p)
    return 2 * p * gamma_t - 2 * gamma_i + p * np.pi


def exit_azimuth_derivative(p: int, h, eta_p):
    return 2 * p / np.sqrt(eta_p * eta_p - h * h) - 2 / np.sqrt(np.maximum(1 - h * h, 1e-300))


def surface_attenuation(p: int, h, eta_p, eta_pp):
    """Fresnel product of a mode's surface events with no internal absorption."""
    gamma_i = np.arcsin(h)
    f_in = fresnel(eta_p, eta_pp, gamma_i)
    if p == 0:
        return f_in
    gamma_t = np.arcsin(h / eta_p)
    f_inner = fresnel(1.0 / eta_p, 1.0 / eta_pp, gamma_t)
    return (1.0 - f_in) * (1.0 - f_inner) * f_inner ** (p - 1)


def azimuthal_values(material: FiberMaterial, mode: Mode, theta_d, phi,
                     jacobian_floor: float = JACOBIAN_FLOOR,
                     root_grid: int = ROOT_GRID) -> np.ndarray:
    """Unit-absorption azimuthal factor N_p at one ``theta_d`` for many ``phi``.

    Roots of the exit-azimuth equation are bracketed on a uniform grid of
    ``root_grid`` offsets over [-1, 1] and refined by bisection.
    """
    p = int(mode)
    phi = np.atleast_1d(np.asarray(phi, dtype=np.float64))
    eta_p = float(bravais_index(theta_d, material.eta))
    eta_pp = float(bravais_index_parallel(theta_d, material.eta))
    h = np.linspace(-1.0, 1.0, root_grid)
    phase = exit_azimuth(p, h, eta_p)
    d = wrap_angle(phase[None, :] - phi[:, None])
    d0, d1 = d[:, :-1], d[:, 1:]
    bracket = (((d0 < 0) & (d1 >= 0)) | ((d0 > 0) & (d1 <= 0))) & (np.abs(d1 - d0) < np.pi)
    rows, cols = np.nonzero(bracket)
    out = np.zeros(phi.shape)
    if rows.size == 0:
        return out
    lo, hi = h[cols].copy(), h[cols + 1].copy()
    target = phi[rows]
    f_lo = d0[rows, cols]
    for _ in range(BISECT_STEPS):
        mid = 0.5 * (lo + hi)
        f_mid = wrap_angle(exit_azimuth(p, mid, eta_p) - target)
        same = np.sign(f_mid) == np.sign(f_lo)
        lo = np.where(same, mid, lo)
        f_lo = np.where(same, f_mid, f_lo)
        hi = np.where(same, hi, mid)
    root = 0.5 * (lo + hi)
    jac = np.maximum(np.abs(exit_azimuth_derivative(p, root, eta_p)), jacobian_floor)
    contrib = surface_attenuation(p, root, eta_p, eta_pp) / (2.0 * jac)
    np.add.at(out, rows, contrib)
    return out


@dataclass(frozen=True)
class AzimuthalLUT:
    """Per-mode tables of N_p over (theta_d, phi), sampled on node grids.

    ``tables`` has shape (3, res_theta, res_phi); theta_d spans
    [-pi/2, pi/2] and phi spans [0, pi] (the factor is even in phi).
    """

    tables: np.ndarray
    theta_range: tuple[float, float] = (-math.pi / 2, math.pi / 2)
    phi_range: tuple[float, float] = (0.0, math.pi)
    meta: dict = field(default_factory=dict)

    @property
    def res_theta(self) -> int:
        return self.tables.shape[1]

    @property
    def res_phi(self) -> int:
        return self.tables.shape[2]

    def theta_nodes(self):
        return np.linspace(*self.theta_range, self.res_theta)

    def phi_nodes(self):
        return np.linspace(*self.phi_range, self.res_phi)

    def lookup(self, theta_d, phi) -> np.ndarray:
        """Bilinear lookup of all three modes; returns (..., 3)."""
        theta_d = np.asarray(theta_d, dtype=np.float64)
        phi = np.abs(wrap_angle(phi))
        t0, t1 = self.theta_range
        p0, p1 = self.phi_range
        ft = np.clip((theta_d - t0) / (t1 - t0), 0.0, 1.0) * (self.res_theta - 1)
        fp = np.clip((phi - p0) / (p1 - p0), 0.0, 1.0) * (self.res_phi - 1)
        i = np.minimum(ft.astype(np.int64), self.res_theta - 2)
        j = np.minimum(fp.astype(np.int64), self.res_phi - 2)
        a = (ft - i)[..., None]
        b = (fp - j)[..., None]
        T = self.tables.transpose(1, 2, 0)
        return ((1 - a) * ((1 - b) * T[i, j] + b * T[i, j + 1])
                + a * ((1 - b) * T[i + 1, j] + b * T[i + 1, j + 1]))


def bake_azimuthal_lut(material: FiberMaterial, res_theta: int = 64, res_phi: int = 128,
                       jacobian_floor: float = JACOBIAN_FLOOR) -> AzimuthalLUT:
    if res_theta < 16 or res_phi < 16:
        raise ValueError("azimuthal LUT resolutions must be >= 16")
    thetas = np.linspace(-math.pi / 2, math.pi / 2, res_theta)
    phis = np.linspace(0.0, math.pi, res_phi)
    tables = np.zeros((3, res_theta, res_phi))
    for mode in MODES:
        for k, td in enumerate(thetas):
            tables[mode, k] = azimuthal_values(material, mode, td, phis, jacobian_floor)
    meta = {"material": material.to_dict(), "jacobian_floor": jacobian_floor,
            "root_grid": ROOT_GRID}
    return AzimuthalLUT(tables, meta=meta)


# ---------------------------------------------------------------------------
# Full phase function


def absorption_factors(sigma_a, eta_prime) -> np.ndarray:
    """Per-mode RGB absorption factors, shape (..., 3 modes, 3 channels)."""
    s = np.asarray(sigma_a, dtype=np.float64)
    ep = np.asarray(eta_prime, dtype=np.float64)[..., None]
    a_r = np.ones(np.broadcast_shapes(ep.shape, s.shape))
    a_tt = np.broadcast_to(np.exp(-4.0 * s), a_r.shape)
    a_trt = np.exp(-8.0 * s * (1.0 - 3.0 / (2.0 * ep * ep)))
    return np.stack([a_r, a_tt, a_trt], axis=-2)


def phase_modes(material: FiberMaterial, lut: AzimuthalLUT, w_i, w_r, u):
    """Unit-absorption per-mode terms M_p N_p / cos^2(theta_d).

    Returns (terms (..., 3), theta_d (...)).
    """
    ang = angles_from_directions(w_i, w_r, u)
    td = ang.theta_d
    th = ang.theta_h[..., None]
    M = hg_lobe(material.g, np.cos(th - material.alpha))
    N = lut.lookup(td, ang.phi)
    cos2 = np.maximum(np.cos(td) ** 2, COS2_FLOOR)
    return M * N / cos2[..., None], td


def eval_phase(material: FiberMaterial, lut: AzimuthalLUT, w_i, w_r, u) -> np.ndarray:
    """RGB phase function S(w_i -> w_r) of a fiber with tangent ``u``.

    ``w_i`` points toward the light, ``w_r`` toward the viewer. Returns
    (..., 3).
    """
    terms, td = phase_modes(material, lut, w_i, w_r, u)
    A = absorption_factors(material.sigma_a, bravais_index(td, material.eta))
    return np.sum(terms[..., :, None] * A, axis=-2)
