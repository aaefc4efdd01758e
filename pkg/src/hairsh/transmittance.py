"""Per-vertex near-field transmittance: cubemap bake, SH projection, lookup."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import raycast, shmath
from .geometry import HairGeometry
from .shmath import SHVector

log = logging.getLogger(__name__)

DEFAULT_CUBEMAP_RES = 16
TRANSMITTANCE_ORDER = 2
# default self-exclusion arc length, in multiples of the local strand radius
EXCLUSION_RADIUS_SCALE = 20.0


def _face_dirs(face: int, u, v):
    one = np.ones_like(u)
    return {
        0: (one, -v, -u),
        1: (-one, -v, u),
        2: (u, one, v),
        3: (u, -one, -v),
        4: (u, -v, one),
        5: (-u, -v, -one),
    }[face]


def _area(x, y):
    return np.arctan2(x * y, np.sqrt(x * x + y * y + 1.0))


def cube_texels(res: int):
    """Unit directions (6, res, res, 3) and solid angles (6, res, res).

    Faces follow the +X, -X, +Y, -Y, +Z, -Z order; texel (i, j) covers the
    face coordinates u in column j and v in row i.
    """
    edges = np.linspace(-1.0, 1.0, res + 1)
    c = 0.5 * (edges[:-1] + edges[1:])
    v, u = np.meshgrid(c, c, indexing="ij")
    e0, e1 = edges[:-1], edges[1:]
    sa = (_area(e0[None, :], e0[:, None]) - _area(e0[None, :], e1[:, None])
          - _area(e1[None, :], e0[:, None]) + _area(e1[None, :], e1[:, None]))
    dirs = np.empty((6, res, res, 3))
    for f in range(6):
        d = np.stack(_face_dirs(f, u, v), axis=-1)
        dirs[f] = d / np.linalg.norm(d, axis=-1, keepdims=True)
    return dirs, np.broadcast_to(np.abs(sa), (6, res, res)).copy()


@dataclass(frozen=True)
class TransmittanceCubemap:
    values: np.ndarray  # (6, res, res), 1 = unoccluded

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 3 or v.shape[0] != 6 or v.shape[1] != v.shape[2]:
            raise ValueError("cubemap must have shape (6, res, res)")
        object.__setattr__(self, "values", v)

    @property
    def res(self) -> int:
        return self.values.shape[1]

    def texels(self):
        return cube_texels(self.res)


@dataclass(frozen=True)
class VertexTransmittanceSH:
    """One order-2 SH transmittance vector per hair vertex.

    ``errors`` holds the mean absolute SH-vs-cubemap error per vertex when
    the data came from a bake.
    """

    coeffs: np.ndarray
    errors: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=np.float64)
        if c.ndim != 2 or c.shape[1] != shmath.n_coeffs(TRANSMITTANCE_ORDER):
            raise ValueError("vertex transmittance must be (n_vertices, 9)")
        object.__setattr__(self, "coeffs", c)

    @property
    def n_vertices(self) -> int:
        return self.coeffs.shape[0]

    def __getitem__(self, i) -> SHVector:
        return SHVector(self.coeffs[i])

    @classmethod
    def unoccluded(cls, n_vertices: int) -> "VertexTransmittanceSH":
        c = np.zeros((n_vertices, 9))
        c[:, 0] = 2.0 * np.sqrt(np.pi)
        return cls(c)

    def rotated(self, R) -> "VertexTransmittanceSH":
        return VertexTransmittanceSH(apply_orientation(self.coeffs, R), self.errors, self.meta)


def _exclusion(geom: HairGeometry, vertices, radius):
    vertices = np.asarray(vertices, dtype=np.int64)
    s = geom.arc_length[vertices]
    r = (EXCLUSION_RADIUS_SCALE * geom.vertex_radius[vertices] if radius is None
         else np.full(len(vertices), float(radius)))
    return geom.vertex_strand[vertices], s - r, s + r


def bake_vertex_cubemap(geometry: HairGeometry, vertex_index: int,
                        res: int = DEFAULT_CUBEMAP_RES,
                        self_exclusion_radius: float | None = None) -> TransmittanceCubemap:
    """Transmittance seen from one vertex in every cubemap texel direction.

    Segments of the vertex's own strand within ``self_exclusion_radius``
    of arc length are ignored (default: 20 local radii).
    """
    if res < 8:
        raise ValueError("cubemap resolution must be >= 8")
    if not 0 <= vertex_index < geometry.n_vertices:
        raise IndexError(f"vertex {vertex_index} out of range")
    dirs, _ = cube_texels(res)
    st, lo, hi = _exclusion(geometry, [vertex_index], self_exclusion_radius)
    T = raycast.transmittance_fan(geometry, geometry.positions[[vertex_index]],
                                  dirs.reshape(-1, 3), st, lo, hi)
    return TransmittanceCubemap(T.reshape(6, res, res))


def _projector(res: int, order: int = TRANSMITTANCE_ORDER):
    dirs, sa = cube_texels(res)
    Y = shmath.sh_basis(order, dirs.reshape(-1, 3))
    return dirs.reshape(-1, 3), Y, Y * sa.reshape(-1, 1)


def project_to_sh(cubemap: TransmittanceCubemap, order: int = TRANSMITTANCE_ORDER) -> SHVector:
    _, _, P = _projector(cubemap.res, order)
    return SHVector(cubemap.values.reshape(-1) @ P)


def reconstruction_error(cubemap: TransmittanceCubemap, v) -> float:
    """Mean absolute difference between the clamped SH reconstruction and the texels."""
    dirs, _ = cube_texels(cubemap.res)
    recon = eval_V(v, dirs.reshape(-1, 3))
    return float(np.mean(np.abs(recon - cubemap.values.reshape(-1))))


def bake_transmittance(geometry: HairGeometry, res: int = DEFAULT_CUBEMAP_RES,
                       self_exclusion_radius: float | None = None,
                       chunk: int = 2048) -> VertexTransmittanceSH:
    """Bake and project a cubemap for every vertex of ``geometry``."""
    if res < 8:
        raise ValueError("cubemap resolution must be >= 8")
    dirs, Y, P = _projector(res)
    n = geometry.n_vertices
    coeffs = np.zeros((n, 9))
    errors = np.zeros(n)
    for start in range(0, n, chunk):
        idx = np.arange(start, min(n, start + chunk))
        st, lo, hi = _exclusion(geometry, idx, self_exclusion_radius)
        T = raycast.transmittance_fan(geometry, geometry.positions[idx], dirs, st, lo, hi)
        c = T @ P
        coeffs[idx] = c
        recon = np.clip(c @ Y.T, 0.0, 1.0)
        errors[idx] = np.mean(np.abs(recon - T), axis=1)
    if n:
        q = np.percentile(errors, [50, 90, 100])
        log.info("transmittance SH error over %d vertices: median %.4f, p90 %.4f, max %.4f",
                 n, *q)
    meta = {"cubemap_res": res, "self_exclusion_radius": self_exclusion_radius,
            "exclusion_radius_scale": EXCLUSION_RADIUS_SCALE}
    return VertexTransmittanceSH(coeffs, errors, meta)


def eval_V(v, w) -> np.ndarray:
    """Transmittance reconstructed from SH, clamped to [0, 1]."""
    return np.clip(shmath.evaluate(v, w), 0.0, 1.0)


def biased_V(v, w, bias: float) -> np.ndarray:
    """Light-leak bias: max(0, (V - bias) / (1 - bias))."""
    if not 0.0 <= bias < 1.0:
        raise ValueError("bias must be in [0, 1)")
    V = eval_V(v, w)
    if bias == 0.0:
        return V
    return np.maximum(0.0, (V - bias) / (1.0 - bias))


def apply_orientation(v, R):
    """Carry baked transmittance along with a rotation of the groom."""
    return shmath.rotate(v, R)
