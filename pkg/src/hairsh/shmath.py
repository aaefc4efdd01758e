"""Real spherical-harmonics algebra.

Basis convention: real, orthonormal, no Condon-Shortley phase, so that
band 1 is proportional to ``(y, z, x)``. Coefficients are flattened with
``l`` ascending and ``m`` running from ``-l`` to ``+l`` inside each band,
i.e. ``index(l, m) = l*l + l + m``.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from typing import Callable

import numpy as np

MAX_ORDER = 6
DEFAULT_QUADRATURE = 256


def n_coeffs(order: int) -> int:
    return (order + 1) ** 2


def index(l: int, m: int) -> int:
    return l * l + l + m


def order_from_count(count: int) -> int:
    order = int(round(math.sqrt(count))) - 1
    if n_coeffs(order) != count:
        raise ValueError(f"{count} is not a valid SH coefficient count")
    return order


def _check_order(order: int) -> None:
    if not 0 <= order <= MAX_ORDER:
        raise ValueError(f"SH order must be in [0, {MAX_ORDER}], got {order}")


@dataclass(frozen=True)
class SHVector:
    """Immutable coefficient vector of a real SH expansion."""

    coeffs: np.ndarray

    def __post_init__(self):
        c = np.array(self.coeffs, dtype=np.float64).reshape(-1)
        order_from_count(c.size)
        c.flags.writeable = False
        object.__setattr__(self, "coeffs", c)

    @property
    def order(self) -> int:
        return order_from_count(self.coeffs.size)

    @classmethod
    def zeros(cls, order: int) -> "SHVector":
        return cls(np.zeros(n_coeffs(order)))

    def __getitem__(self, lm: tuple[int, int]) -> float:
        l, m = lm
        return float(self.coeffs[index(l, m)])

    def band(self, l: int) -> np.ndarray:
        return self.coeffs[l * l:(l + 1) * (l + 1)]

    def band_norms(self) -> np.ndarray:
        return np.array([np.linalg.norm(self.band(l)) for l in range(self.order + 1)])

    def truncated(self, order: int) -> "SHVector":
        return SHVector(resize(self.coeffs, order))

    def __call__(self, dirs) -> np.ndarray:
        return evaluate(self, dirs)

    def __add__(self, other: "SHVector") -> "SHVector":
        order = max(self.order, other.order)
        return SHVector(resize(self.coeffs, order) + resize(other.coeffs, order))

    def __mul__(self, s: float) -> "SHVector":
        return SHVector(self.coeffs * s)

    __rmul__ = __mul__

    def to_bytes(self) -> bytes:
        return struct.pack("<I", self.order) + self.coeffs.astype("<f4").tobytes()

    @classmethod
    def from_bytes(cls, buf: bytes) -> "SHVector":
        (order,) = struct.unpack_from("<I", buf)
        n = n_coeffs(order)
        return cls(np.frombuffer(buf, dtype="<f4", count=n, offset=4).astype(np.float64))


def resize(coeffs: np.ndarray, order: int) -> np.ndarray:
    """Zero-pad or truncate the last axis of ``coeffs`` to ``order``."""
    coeffs = np.asarray(coeffs, dtype=np.float64)
    n = n_coeffs(order)
    have = coeffs.shape[-1]
    if have >= n:
        return coeffs[..., :n]
    out = np.zeros(coeffs.shape[:-1] + (n,))
    out[..., :have] = coeffs
    return out


# ---------------------------------------------------------------------------
# Basis evaluation


@lru_cache(maxsize=None)
def _norm_constants(order: int) -> np.ndarray:
    k = np.zeros((order + 1, order + 1))
    for l in range(order + 1):
        for m in range(l + 1):
            k[l, m] = math.sqrt((2 * l + 1) / (4 * math.pi)
                                * math.factorial(l - m) / math.factorial(l + m))
            if m > 0:
                k[l, m] *= math.sqrt(2.0)
    return k


def sh_basis(order: int, dirs) -> np.ndarray:
    """All real SH basis functions up to ``order`` at ``dirs`` (..., 3).

    Returns an array of shape (..., (order+1)**2). Directions are
    normalized internally.
    """
    _check_order(order)
    d = np.asarray(dirs, dtype=np.float64)
    d = d / np.linalg.norm(d, axis=-1, keepdims=True)
    x, y, z = d[..., 0], d[..., 1], d[..., 2]
    K = _norm_constants(order)
    out = np.empty(d.shape[:-1] + (n_coeffs(order),))

    # (x + iy)^m gives sin^m(theta) * (cos m phi, sin m phi)
    cm, sm = np.ones_like(x), np.zeros_like(x)
    pmm = np.ones_like(z)  # P_m^m / sin^m, no Condon-Shortley phase
    for m in range(order + 1):
        if m > 0:
            cm, sm = cm * x - sm * y, cm * y + sm * x
            pmm = pmm * (2 * m - 1)
        p_prev, p = np.zeros_like(z), pmm
        for l in range(m, order + 1):
            if l == m + 1:
                p_prev, p = p, z * (2 * m + 1) * pmm
            elif l > m + 1:
                p_prev, p = p, ((2 * l - 1) * z * p - (l + m - 1) * p_prev) / (l - m)
            if m == 0:
                out[..., index(l, 0)] = K[l, 0] * p
            else:
                out[..., index(l, m)] = K[l, m] * p * cm
                out[..., index(l, -m)] = K[l, m] * p * sm
    return out


def eval_basis(l: int, m: int, d) -> float:
    """Value of the real basis function Y_lm at the direction ``d``."""
    if l < 0 or abs(m) > l:
        raise ValueError(f"invalid SH index (l={l}, m={m})")
    return float(sh_basis(l, np.asarray(d, dtype=np.float64))[index(l, m)])


def evaluate(v, dirs) -> np.ndarray:
    """Reconstruct the band-limited function of ``v`` at ``dirs``.

    ``v`` may be an SHVector or a raw coefficient array whose last axis
    holds coefficients (broadcast against the directions' leading axes).
    """
    c = v.coeffs if isinstance(v, SHVector) else np.asarray(v, dtype=np.float64)
    order = order_from_count(c.shape[-1])
    return np.sum(sh_basis(order, dirs) * c, axis=-1)


# ---------------------------------------------------------------------------
# Quadrature and projection


@lru_cache(maxsize=8)
def sphere_quadrature(resolution: int = DEFAULT_QUADRATURE):
    """Gauss-Legendre (in cos theta) x uniform (in phi) product rule.

    ``resolution`` latitude nodes and ``2 * resolution`` longitude nodes.
    Exact for band-limited integrands up to degree ``2*resolution - 1``.
    Returns (dirs (N, 3), weights (N,)); weights sum to 4 pi.
    """
    if resolution < 8:
        raise ValueError("quadrature resolution must be >= 8")
    z, wz = np.polynomial.legendre.leggauss(resolution)
    n_phi = 2 * resolution
    phi = (np.arange(n_phi) + 0.5) * (2 * math.pi / n_phi)
    s = np.sqrt(1.0 - z * z)
    dirs = np.stack(np.broadcast_arrays(s[:, None] * np.cos(phi)[None, :],
                                        s[:, None] * np.sin(phi)[None, :],
                                        z[:, None]), axis=-1).reshape(-1, 3)
    w = np.repeat(wz * (2 * math.pi / n_phi), n_phi)
    dirs.flags.writeable = False
    w.flags.writeable = False
    return dirs, w


def integrate(f: Callable[[np.ndarray], np.ndarray],
              resolution: int = DEFAULT_QUADRATURE) -> np.ndarray:
    """Integral of ``f`` over the unit sphere; ``f`` maps (N, 3) -> (N, ...)."""
    dirs, w = sphere_quadrature(resolution)
    vals = np.asarray(f(dirs), dtype=np.float64)
    return np.tensordot(w, vals, axes=(0, 0))


def project(f: Callable[[np.ndarray], np.ndarray], order: int,
            quadrature_resolution: int = DEFAULT_QUADRATURE) -> SHVector:
    """Project a scalar spherical function onto the real SH basis.

    ``f`` is called once with an (N, 3) array of unit directions and must
    return N values.
    """
    _check_order(order)
    dirs, w = sphere_quadrature(quadrature_resolution)
    vals = np.asarray(f(dirs), dtype=np.float64).reshape(-1)
    return SHVector((sh_basis(order, dirs) * (w * vals)[:, None]).sum(axis=0))


def project_samples(dirs, weights, values, order: int) -> np.ndarray:
    """Weighted-sample projection; ``values`` may carry trailing channels."""
    Y = sh_basis(order, dirs)
    wv = np.asarray(weights)[:, None] * np.asarray(values).reshape(len(weights), -1)
    out = Y.T @ wv
    return out[:, 0] if np.ndim(values) == 1 else out


# ---------------------------------------------------------------------------
# Rotation


def _centered(r, i, j):
    off = (r.shape[-1] - 1) // 2
    return r[..., i + off, j + off]


def _P(i, a, b, l, bands):
    r1, rl = bands[1], bands[l - 1]
    if b == l:
        return _centered(r1, i, 1) * _centered(rl, a, l - 1) - _centered(r1, i, -1) * _centered(rl, a, -l + 1)
    if b == -l:
        return _centered(r1, i, 1) * _centered(rl, a, -l + 1) + _centered(r1, i, -1) * _centered(rl, a, l - 1)
    return _centered(r1, i, 0) * _centered(rl, a, b)


def _band_rotation(l, bands):
    batch = bands[1].shape[:-2]
    out = np.zeros(batch + (2 * l + 1, 2 * l + 1))
    for m in range(-l, l + 1):
        d = 1.0 if m == 0 else 0.0
        for n in range(-l, l + 1):
            denom = 2.0 * l * (2 * l - 1) if abs(n) == l else float((l + n) * (l - n))
            u = math.sqrt((l + m) * (l - m) / denom)
            v = 0.5 * math.sqrt((1 + d) * (l + abs(m) - 1) * (l + abs(m)) / denom) * (1 - 2 * d)
            w = -0.5 * math.sqrt((l - abs(m) - 1) * (l - abs(m)) / denom) * (1 - d)
            acc = 0.0
            if u != 0.0:
                acc = acc + u * _P(0, m, n, l, bands)
            if v != 0.0:
                if m == 0:
                    V = _P(1, 1, n, l, bands) + _P(-1, -1, n, l, bands)
                elif m > 0:
                    V = (_P(1, m - 1, n, l, bands) * math.sqrt(1 + (m == 1))
                         - _P(-1, -m + 1, n, l, bands) * (1 - (m == 1)))
                else:
                    V = (_P(1, m + 1, n, l, bands) * (1 - (m == -1))
                         + _P(-1, -m - 1, n, l, bands) * math.sqrt(1 + (m == -1)))
                acc = acc + v * V
            if w != 0.0:
                if m > 0:
                    W = _P(1, m + 1, n, l, bands) + _P(-1, -m - 1, n, l, bands)
                else:
                    W = _P(1, m - 1, n, l, bands) - _P(-1, -m + 1, n, l, bands)
                acc = acc + w * W
            out[..., m + l, n + l] = acc
    return out


_BAND1_AXES = (1, 2, 0)  # band-1 basis order is (y, z, x)


def band_rotations(R, order: int) -> list[np.ndarray]:
    """Per-band rotation blocks for rotation matrices ``R`` (..., 3, 3).

    Band 0 is the identity, band 1 is the permuted rotation matrix, and
    higher bands follow the Ivanic-Ruedenberg recurrence.
    """
    _check_order(order)
    R = np.asarray(R, dtype=np.float64)
    batch = R.shape[:-2]
    bands = [np.ones(batch + (1, 1))]
    if order >= 1:
        ax = np.array(_BAND1_AXES)
        bands.append(R[..., ax[:, None], ax[None, :]])
    for l in range(2, order + 1):
        bands.append(_band_rotation(l, bands))
    return bands


def rotation_matrix(R, order: int) -> np.ndarray:
    """Dense block-diagonal SH rotation matrix, shape (..., n, n).

    With ``M = rotation_matrix(R, L)``, the coefficients ``M @ c`` describe
    ``d -> f(R^T d)``: the function ``f`` carried along by ``R``.
    """
    bands = band_rotations(R, order)
    n = n_coeffs(order)
    M = np.zeros(bands[0].shape[:-2] + (n, n))
    for l, B in enumerate(bands):
        M[..., l * l:(l + 1) ** 2, l * l:(l + 1) ** 2] = B
    return M


def rotate(v, R):
    """Rotate an SH expansion so that rotate(v, R)(d) == v(R^-1 d).

    Accepts an SHVector (returns SHVector) or raw coefficients (..., n)
    with matching batches of rotations (..., 3, 3).
    """
    if isinstance(v, SHVector):
        M = rotation_matrix(R, v.order)
        return SHVector(M @ v.coeffs)
    c = np.asarray(v, dtype=np.float64)
    M = rotation_matrix(R, order_from_count(c.shape[-1]))
    return np.einsum("...ij,...j->...i", M, c)


def frame_from_z(z, x_hint=None) -> np.ndarray:
    """Rotation whose columns are an orthonormal frame with third axis ``z``.

    The first axis is ``x_hint`` orthogonalized against ``z`` when given and
    not parallel; otherwise it is derived from the least-aligned world axis.
    Works on batches (..., 3).
    """
    z = np.asarray(z, dtype=np.float64)
    z = z / np.linalg.norm(z, axis=-1, keepdims=True)
    fallback = np.where((np.abs(z[..., 0:1]) < 0.9), [1.0, 0.0, 0.0], [0.0, 1.0, 0.0])
    if x_hint is None:
        x = fallback
    else:
        x = np.broadcast_to(np.asarray(x_hint, dtype=np.float64), z.shape)
    x = x - np.sum(x * z, axis=-1, keepdims=True) * z
    nx = np.linalg.norm(x, axis=-1, keepdims=True)
    bad = nx < 1e-9
    if np.any(bad):
        alt = fallback - np.sum(fallback * z, axis=-1, keepdims=True) * z
        x = np.where(bad, alt, x)
        nx = np.linalg.norm(x, axis=-1, keepdims=True)
    x = x / nx
    y = np.cross(z, x)
    return np.stack([x, y, z], axis=-1)


# ---------------------------------------------------------------------------
# Wigner 3-j symbols and Gaunt coefficients


def _fact(n: int) -> int:
    return math.factorial(n)


@lru_cache(maxsize=None)
def wigner3j(l1: int, l2: int, l3: int, m1: int, m2: int, m3: int) -> float:
    """Wigner 3-j symbol via the Racah formula in exact rational arithmetic."""
    for l, m in ((l1, m1), (l2, m2), (l3, m3)):
        if l < 0 or abs(m) > l:
            raise ValueError(f"invalid angular momentum pair (l={l}, m={m})")
    if m1 + m2 + m3 != 0:
        return 0.0
    if l3 < abs(l1 - l2) or l3 > l1 + l2:
        return 0.0
    if m1 == m2 == m3 == 0 and (l1 + l2 + l3) % 2:
        return 0.0

    kmin = max(0, l2 - l3 - m1, l1 - l3 + m2)
    kmax = min(l1 + l2 - l3, l1 - m1, l2 + m2)
    total = Fraction(0)
    for k in range(kmin, kmax + 1):
        den = (_fact(k) * _fact(l3 - l2 + k + m1) * _fact(l3 - l1 + k - m2)
               * _fact(l1 + l2 - l3 - k) * _fact(l1 - k - m1) * _fact(l2 - k + m2))
        total += Fraction((-1) ** k, den)
    if total == 0:
        return 0.0
    triangle = Fraction(_fact(l1 + l2 - l3) * _fact(l1 - l2 + l3) * _fact(-l1 + l2 + l3),
                        _fact(l1 + l2 + l3 + 1))
    prod = (_fact(l1 + m1) * _fact(l1 - m1) * _fact(l2 + m2) * _fact(l2 - m2)
            * _fact(l3 + m3) * _fact(l3 - m3))
    sq = total * total * triangle * prod
    mag = math.sqrt(sq.numerator) / math.sqrt(sq.denominator)
    sign = (-1) ** (l1 - l2 - m3) * (1 if total > 0 else -1)
    return sign * mag


def complex_gaunt(l1, m1, l2, m2, l3, m3) -> float:
    """Integral over the sphere of three complex harmonics Y_l1^m1 Y_l2^m2 Y_l3^m3."""
    w0 = wigner3j(l1, l2, l3, 0, 0, 0)
    if w0 == 0.0:
        return 0.0
    return (math.sqrt((2 * l1 + 1) * (2 * l2 + 1) * (2 * l3 + 1) / (4 * math.pi))
            * w0 * wigner3j(l1, l2, l3, m1, m2, m3))


def real_from_complex(order: int) -> np.ndarray:
    """Matrix U with Y_real = U @ Y_complex (Condon-Shortley complex basis)."""
    n = n_coeffs(order)
    U = np.zeros((n, n), dtype=np.complex128)
    s = 1.0 / math.sqrt(2.0)
    for l in range(order + 1):
        U[index(l, 0), index(l, 0)] = 1.0
        for k in range(1, l + 1):
            U[index(l, k), index(l, -k)] = s
            U[index(l, k), index(l, k)] = (-1) ** k * s
            U[index(l, -k), index(l, -k)] = 1j * s
            U[index(l, -k), index(l, k)] = -1j * (-1) ** k * s
    return U


@lru_cache(maxsize=None)
def real_gaunt(order: int) -> np.ndarray:
    """Real-basis Gaunt tensor G[a, b, c] = integral of Y_a Y_b Y_c, up to ``order``."""
    _check_order(order)
    n = n_coeffs(order)
    lm = [(l, m) for l in range(order + 1) for m in range(-l, l + 1)]
    Gc = np.zeros((n, n, n))
    for i, (l1, m1) in enumerate(lm):
        for j, (l2, m2) in enumerate(lm):
            m3 = -m1 - m2
            for l3 in range(abs(l1 - l2), min(l1 + l2, order) + 1):
                if abs(m3) <= l3:
                    Gc[i, j, index(l3, m3)] = complex_gaunt(l1, m1, l2, m2, l3, m3)
    U = real_from_complex(order)
    G = np.einsum("ai,bj,ck,ijk->abc", U, U, U, Gc, optimize=True)
    if np.abs(G.imag).max() > 1e-10:
        raise ArithmeticError("real Gaunt tensor has an imaginary residue")
    G = np.where(np.abs(G.real) < 1e-14, 0.0, G.real)
    G.flags.writeable = False
    return G


def triple_product(a, b, c) -> float:
    """Integral over the sphere of the product of three SH expansions.

    Orders may differ; every expansion is zero-padded to the largest one.
    """
    ca, cb, cc = (x.coeffs if isinstance(x, SHVector) else np.asarray(x, dtype=np.float64)
                  for x in (a, b, c))
    order = max(order_from_count(x.shape[-1]) for x in (ca, cb, cc))
    G = real_gaunt(order)
    ca, cb, cc = (resize(x, order) for x in (ca, cb, cc))
    out = np.einsum("abc,...a,...b,...c->...", G, ca, cb, cc)
    return float(out) if out.ndim == 0 else out
