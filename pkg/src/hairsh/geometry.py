"""Strand polylines, their flattened segment tables and a capsule BVH."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

DEFAULT_ALPHA = 0.5
LEAF_SIZE = 4


@dataclass(frozen=True, eq=False)
class HairGeometry:
    """Hair strands as polylines with per-vertex radius and per-strand alpha.

    Vertices are numbered strand by strand in file order; every flat
    per-vertex array follows that numbering.
    """

    strands: tuple[np.ndarray, ...]
    radii: tuple[np.ndarray, ...]
    alpha: np.ndarray = field(default=None)

    def __post_init__(self):
        strands = tuple(np.array(s, dtype=np.float64).reshape(-1, 3) for s in self.strands)
        radii = tuple(np.array(r, dtype=np.float64).reshape(-1) for r in self.radii)
        if len(strands) != len(radii):
            raise ValueError("one radius array per strand required")
        for s, r in zip(strands, radii):
            if len(s) < 2:
                raise ValueError("each strand needs at least two vertices")
            if len(r) != len(s):
                raise ValueError("radius count must match vertex count")
            if np.any(r <= 0):
                raise ValueError("strand radii must be positive")
        alpha = self.alpha
        if alpha is None:
            alpha = np.full(len(strands), DEFAULT_ALPHA)
        alpha = np.array(alpha, dtype=np.float64).reshape(-1)
        if alpha.size == 1 and len(strands) != 1:
            alpha = np.repeat(alpha, len(strands))
        if alpha.size != len(strands) or np.any((alpha < 0) | (alpha > 1)):
            raise ValueError("need one coverage alpha in [0, 1] per strand")
        object.__setattr__(self, "strands", strands)
        object.__setattr__(self, "radii", radii)
        object.__setattr__(self, "alpha", alpha)

    @classmethod
    def empty(cls) -> "HairGeometry":
        return cls((), (), np.zeros(0))

    @property
    def n_strands(self) -> int:
        return len(self.strands)

    @property
    def n_vertices(self) -> int:
        return int(sum(len(s) for s in self.strands))

    @property
    def n_segments(self) -> int:
        return self.n_vertices - self.n_strands

    @cached_property
    def positions(self) -> np.ndarray:
        return np.concatenate(self.strands) if self.strands else np.zeros((0, 3))

    @cached_property
    def vertex_radius(self) -> np.ndarray:
        return np.concatenate(self.radii) if self.radii else np.zeros(0)

    @cached_property
    def vertex_strand(self) -> np.ndarray:
        return np.repeat(np.arange(self.n_strands), [len(s) for s in self.strands]).astype(np.int64)

    @cached_property
    def tangents(self) -> np.ndarray:
        """Unit tangents: central differences inside, one-sided at the ends."""
        out = []
        for s in self.strands:
            t = np.empty_like(s)
            t[1:-1] = s[2:] - s[:-2]
            t[0] = s[1] - s[0]
            t[-1] = s[-1] - s[-2]
            out.append(t / np.linalg.norm(t, axis=1, keepdims=True))
        return np.concatenate(out) if out else np.zeros((0, 3))

    @cached_property
    def arc_length(self) -> np.ndarray:
        out = []
        for s in self.strands:
            seg = np.linalg.norm(np.diff(s, axis=0), axis=1)
            out.append(np.concatenate([[0.0], np.cumsum(seg)]))
        return np.concatenate(out) if out else np.zeros(0)

    @cached_property
    def segments(self) -> np.ndarray:
        """(S, 2) vertex indices of every segment."""
        idx, start = [], 0
        for s in self.strands:
            n = len(s)
            a = np.arange(start, start + n - 1)
            idx.append(np.stack([a, a + 1], axis=1))
            start += n
        return np.concatenate(idx).astype(np.int64) if idx else np.zeros((0, 2), np.int64)

    @cached_property
    def segment_strand(self) -> np.ndarray:
        return self.vertex_strand[self.segments[:, 0]]

    @cached_property
    def segment_radius(self) -> np.ndarray:
        r = self.vertex_radius
        return 0.5 * (r[self.segments[:, 0]] + r[self.segments[:, 1]])

    @cached_property
    def bvh(self) -> "BVH":
        return build_bvh(self)

    def transformed(self, R, t) -> "HairGeometry":
        R = np.asarray(R, dtype=np.float64)
        t = np.asarray(t, dtype=np.float64)
        return HairGeometry(tuple(s @ R.T + t for s in self.strands), self.radii, self.alpha)

    def with_alpha(self, alpha) -> "HairGeometry":
        return HairGeometry(self.strands, self.radii, alpha)

    def __add__(self, other: "HairGeometry") -> "HairGeometry":
        return HairGeometry(self.strands + other.strands, self.radii + other.radii,
                            np.concatenate([self.alpha, other.alpha]))


@dataclass(frozen=True)
class BVH:
    """Flattened bounding volume hierarchy over segment capsules.

    Inner nodes have ``count == 0`` and children ``left``/``right``;
    leaves reference ``prims[start:start + count]``.
    """

    lo: np.ndarray
    hi: np.ndarray
    left: np.ndarray
    right: np.ndarray
    start: np.ndarray
    count: np.ndarray
    prims: np.ndarray


def build_bvh(geom: HairGeometry, leaf_size: int = LEAF_SIZE) -> BVH:
    seg = geom.segments
    if len(seg) == 0:
        z = np.zeros((1, 3))
        return BVH(z, z - 1.0, np.full(1, -1), np.full(1, -1), np.zeros(1, np.int64),
                   np.zeros(1, np.int64), np.zeros(0, np.int64))
    p = geom.positions
    r = geom.segment_radius[:, None]
    a, b = p[seg[:, 0]], p[seg[:, 1]]
    box_lo = np.minimum(a, b) - r
    box_hi = np.maximum(a, b) + r
    centre = 0.5 * (box_lo + box_hi)

    lo, hi, left, right, start, count = [], [], [], [], [], []
    order = np.arange(len(seg))
    prims = []
    stack = [(order, -1, False)]
    # iterative pre-order build; children patched into their parent
    while stack:
        ids, parent, is_right = stack.pop()
        node = len(lo)
        lo.append(box_lo[ids].min(axis=0))
        hi.append(box_hi[ids].max(axis=0))
        left.append(-1)
        right.append(-1)
        start.append(0)
        count.append(0)
        if parent >= 0:
            (right if is_right else left)[parent] = node
        if len(ids) <= leaf_size:
            start[node] = len(prims)
            count[node] = len(ids)
            prims.extend(ids.tolist())
            continue
        axis = int(np.argmax(hi[node] - lo[node]))
        key = centre[ids, axis]
        o = np.argsort(key, kind="stable")
        half = len(ids) // 2
        stack.append((ids[o[half:]], node, True))
        stack.append((ids[o[:half]], node, False))
    return BVH(np.array(lo), np.array(hi), np.array(left, np.int64), np.array(right, np.int64),
               np.array(start, np.int64), np.array(count, np.int64), np.array(prims, np.int64))
