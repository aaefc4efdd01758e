"""Ray casting against strand capsules (numba kernels + thin wrappers).

Every strand segment is a capsule of the segment's mean radius. Rays that
pass through several capsules of one strand count that strand once when
accumulating transmittance; primary-ray hit lists merge hits on adjacent
segments of the same strand.
"""

from __future__ import annotations

import math

import numba
import numpy as np
from numba import njit, prange

from .geometry import HairGeometry

RAW_HIT_CAP = 256
STRAND_CAP = 512
STACK_SIZE = 128
T_EPS = 1e-9

_JIT = dict(cache=True, error_model="numpy", nogil=True)

# the system TBB is too old for numba; avoid the probe and its warning
numba.config.THREADING_LAYER = "workqueue"


def set_threads(n: int | None) -> None:
    if n:
        numba.set_num_threads(max(1, min(int(n), numba.config.NUMBA_NUM_THREADS)))


class Packed:
    """Flat arrays handed to the kernels."""

    def __init__(self, geom: HairGeometry):
        self.geom = geom
        seg = geom.segments
        s = geom.arc_length
        b = geom.bvh
        self.pos = np.ascontiguousarray(geom.positions, dtype=np.float64)
        self.seg = np.ascontiguousarray(seg)
        self.seg_strand = np.ascontiguousarray(geom.segment_strand)
        self.seg_radius = np.ascontiguousarray(geom.segment_radius)
        self.seg_s0 = np.ascontiguousarray(s[seg[:, 0]] if len(seg) else np.zeros(0))
        self.seg_s1 = np.ascontiguousarray(s[seg[:, 1]] if len(seg) else np.zeros(0))
        self.alpha = np.ascontiguousarray(geom.alpha, dtype=np.float64)
        self.node_lo = np.ascontiguousarray(b.lo)
        self.node_hi = np.ascontiguousarray(b.hi)
        self.node_left = b.left
        self.node_right = b.right
        self.node_start = b.start
        self.node_count = b.count
        self.prims = b.prims

    def args(self):
        return (self.pos, self.seg, self.seg_strand, self.seg_radius, self.seg_s0, self.seg_s1,
                self.alpha, self.node_lo, self.node_hi, self.node_left, self.node_right,
                self.node_start, self.node_count, self.prims)


_PACK_CACHE: dict[int, Packed] = {}


def packed(geom: HairGeometry) -> Packed:
    key = id(geom)
    p = _PACK_CACHE.get(key)
    if p is None or p.geom is not geom:
        p = Packed(geom)
        if len(_PACK_CACHE) > 16:
            _PACK_CACHE.clear()
        _PACK_CACHE[key] = p
    return p


# ---------------------------------------------------------------------------
# Scalar kernels


@njit(**_JIT)
def _sphere_entry(ox, oy, oz, dx, dy, dz, cx, cy, cz, r):
    px, py, pz = ox - cx, oy - cy, oz - cz
    b = px * dx + py * dy + pz * dz
    c = px * px + py * py + pz * pz - r * r
    h = b * b - c
    if h < 0.0:
        return -1.0
    return -b - math.sqrt(h)


@njit(**_JIT)
def capsule_entry(ox, oy, oz, dx, dy, dz, ax, ay, az, bx, by, bz, r):
    """Entry distance of a unit ray into a capsule; 0 if the origin is inside, -1 on miss."""
    bax, bay, baz = bx - ax, by - ay, bz - az
    oax, oay, oaz = ox - ax, oy - ay, oz - az
    baba = bax * bax + bay * bay + baz * baz
    baoa = bax * oax + bay * oay + baz * oaz
    tt = 0.0
    if baba > 0.0:
        tt = min(max(baoa / baba, 0.0), 1.0)
    qx, qy, qz = oax - tt * bax, oay - tt * bay, oaz - tt * baz
    if qx * qx + qy * qy + qz * qz <= r * r:
        return 0.0
    best = 1e300
    bard = bax * dx + bay * dy + baz * dz
    rdoa = dx * oax + dy * oay + dz * oaz
    oaoa = oax * oax + oay * oay + oaz * oaz
    a = baba - bard * bard
    if a > 1e-12 * baba:
        b = baba * rdoa - baoa * bard
        c = baba * oaoa - baoa * baoa - r * r * baba
        h = b * b - a * c
        if h < 0.0:
            return -1.0
        t = (-b - math.sqrt(h)) / a
        y = baoa + t * bard
        if y > 0.0 and y < baba and t > 0.0:
            best = t
    t = _sphere_entry(ox, oy, oz, dx, dy, dz, ax, ay, az, r)
    if t > 0.0 and t < best:
        best = t
    t = _sphere_entry(ox, oy, oz, dx, dy, dz, bx, by, bz, r)
    if t > 0.0 and t < best:
        best = t
    if best == 1e300:
        return -1.0
    return best


@njit(**_JIT)
def _box_hit(lo, hi, k, ox, oy, oz, ix, iy, iz, tmax):
    t0x = (lo[k, 0] - ox) * ix
    t1x = (hi[k, 0] - ox) * ix
    t0y = (lo[k, 1] - oy) * iy
    t1y = (hi[k, 1] - oy) * iy
    t0z = (lo[k, 2] - oz) * iz
    t1z = (hi[k, 2] - oz) * iz
    tn = max(max(min(t0x, t1x), min(t0y, t1y)), max(min(t0z, t1z), 0.0))
    tf = min(min(max(t0x, t1x), max(t0y, t1y)), min(max(t0z, t1z), tmax))
    return tn <= tf


@njit(**_JIT)
def _excluded(k, seg_strand, seg_s0, seg_s1, ex_strand, ex_lo, ex_hi):
    return seg_strand[k] == ex_strand and seg_s1[k] > ex_lo and seg_s0[k] < ex_hi


@njit(**_JIT)
def collect_hits(ox, oy, oz, dx, dy, dz, tmax, ex_strand, ex_lo, ex_hi,
                 pos, seg, seg_strand, seg_radius, seg_s0, seg_s1, alpha,
                 node_lo, node_hi, node_left, node_right, node_start, node_count, prims,
                 out_t, out_seg):
    """All capsule entries with 0 <= t < tmax, unsorted; returns the count."""
    n = 0
    if prims.shape[0] == 0:
        return 0
    ix, iy, iz = 1.0 / dx, 1.0 / dy, 1.0 / dz
    stack = np.empty(STACK_SIZE, np.int64)
    sp = 0
    stack[sp] = 0
    sp += 1
    cap = out_t.shape[0]
    while sp > 0:
        sp -= 1
        node = stack[sp]
        if not _box_hit(node_lo, node_hi, node, ox, oy, oz, ix, iy, iz, tmax):
            continue
        cnt = node_count[node]
        if cnt > 0:
            for q in range(node_start[node], node_start[node] + cnt):
                k = prims[q]
                if _excluded(k, seg_strand, seg_s0, seg_s1, ex_strand, ex_lo, ex_hi):
                    continue
                a = seg[k, 0]
                b = seg[k, 1]
                t = capsule_entry(ox, oy, oz, dx, dy, dz, pos[a, 0], pos[a, 1], pos[a, 2],
                                  pos[b, 0], pos[b, 1], pos[b, 2], seg_radius[k])
                if t >= 0.0 and t < tmax and n < cap:
                    out_t[n] = t
                    out_seg[n] = k
                    n += 1
        else:
            if sp + 2 <= STACK_SIZE:
                stack[sp] = node_left[node]
                stack[sp + 1] = node_right[node]
                sp += 2
    return n


@njit(**_JIT)
def transmittance(ox, oy, oz, dx, dy, dz, tmax, ex_strand, ex_lo, ex_hi,
                  pos, seg, seg_strand, seg_radius, seg_s0, seg_s1, alpha,
                  node_lo, node_hi, node_left, node_right, node_start, node_count, prims):
    """Product of (1 - alpha) over distinct strands crossed by the ray."""
    if prims.shape[0] == 0:
        return 1.0
    ix, iy, iz = 1.0 / dx, 1.0 / dy, 1.0 / dz
    stack = np.empty(STACK_SIZE, np.int64)
    seen = np.empty(STRAND_CAP, np.int64)
    n_seen = 0
    T = 1.0
    sp = 0
    stack[sp] = 0
    sp += 1
    while sp > 0:
        sp -= 1
        node = stack[sp]
        if not _box_hit(node_lo, node_hi, node, ox, oy, oz, ix, iy, iz, tmax):
            continue
        cnt = node_count[node]
        if cnt > 0:
            for q in range(node_start[node], node_start[node] + cnt):
                k = prims[q]
                if _excluded(k, seg_strand, seg_s0, seg_s1, ex_strand, ex_lo, ex_hi):
                    continue
                st = seg_strand[k]
                dup = False
                for j in range(n_seen):
                    if seen[j] == st:
                        dup = True
                        break
                if dup:
                    continue
                a = seg[k, 0]
                b = seg[k, 1]
                t = capsule_entry(ox, oy, oz, dx, dy, dz, pos[a, 0], pos[a, 1], pos[a, 2],
                                  pos[b, 0], pos[b, 1], pos[b, 2], seg_radius[k])
                if t >= 0.0 and t < tmax:
                    T *= 1.0 - alpha[st]
                    if T <= 1e-12:
                        return 0.0
                    if n_seen < STRAND_CAP:
                        seen[n_seen] = st
                        n_seen += 1
        else:
            if sp + 2 <= STACK_SIZE:
                stack[sp] = node_left[node]
                stack[sp + 1] = node_right[node]
                sp += 2
    return T


@njit(**_JIT)
def _sorted_layers(ox, oy, oz, dx, dy, dz, max_hits, opacity_cut,
                   pos, seg, seg_strand, seg_radius, seg_s0, seg_s1, alpha,
                   node_lo, node_hi, node_left, node_right, node_start, node_count, prims,
                   raw_t, raw_seg, out_t, out_seg):
    """Front-to-back hit layers with adjacent same-strand duplicates merged."""
    n = collect_hits(ox, oy, oz, dx, dy, dz, 1e300, -1, 0.0, 0.0,
                     pos, seg, seg_strand, seg_radius, seg_s0, seg_s1, alpha,
                     node_lo, node_hi, node_left, node_right, node_start, node_count, prims,
                     raw_t, raw_seg)
    # insertion sort; ties broken by segment index for determinism
    for i in range(1, n):
        t = raw_t[i]
        s = raw_seg[i]
        j = i - 1
        while j >= 0 and (raw_t[j] > t or (raw_t[j] == t and raw_seg[j] > s)):
            raw_t[j + 1] = raw_t[j]
            raw_seg[j + 1] = raw_seg[j]
            j -= 1
        raw_t[j + 1] = t
        raw_seg[j + 1] = s
    m = 0
    trans = 1.0
    for i in range(n):
        k = raw_seg[i]
        dup = False
        for j in range(m):
            kj = out_seg[j]
            if seg_strand[kj] == seg_strand[k] and abs(kj - k) <= 1:
                dup = True
                break
        if dup:
            continue
        if m >= max_hits:
            break
        out_t[m] = raw_t[i]
        out_seg[m] = k
        m += 1
        trans *= 1.0 - alpha[seg_strand[k]]
        if 1.0 - trans >= opacity_cut:
            break
    return m


# ---------------------------------------------------------------------------
# Batched kernels


@njit(parallel=True, **_JIT)
def _transmittance_batch(origins, dirs, tmax, ex_strand, ex_lo, ex_hi,
                         pos, seg, seg_strand, seg_radius, seg_s0, seg_s1, alpha,
                         node_lo, node_hi, node_left, node_right, node_start, node_count, prims):
    n = origins.shape[0]
    k = dirs.shape[0]
    out = np.empty((n, k))
    for i in prange(n):
        for j in range(k):
            out[i, j] = transmittance(origins[i, 0], origins[i, 1], origins[i, 2],
                                      dirs[j, 0], dirs[j, 1], dirs[j, 2], tmax[i],
                                      ex_strand[i], ex_lo[i], ex_hi[i],
                                      pos, seg, seg_strand, seg_radius, seg_s0, seg_s1, alpha,
                                      node_lo, node_hi, node_left, node_right, node_start,
                                      node_count, prims)
    return out


@njit(parallel=True, **_JIT)
def _transmittance_pairs(origins, dirs, tmax, ex_strand, ex_lo, ex_hi,
                         pos, seg, seg_strand, seg_radius, seg_s0, seg_s1, alpha,
                         node_lo, node_hi, node_left, node_right, node_start, node_count, prims):
    n = origins.shape[0]
    out = np.empty(n)
    for i in prange(n):
        out[i] = transmittance(origins[i, 0], origins[i, 1], origins[i, 2],
                               dirs[i, 0], dirs[i, 1], dirs[i, 2], tmax[i],
                               ex_strand[i], ex_lo[i], ex_hi[i],
                               pos, seg, seg_strand, seg_radius, seg_s0, seg_s1, alpha,
                               node_lo, node_hi, node_left, node_right, node_start,
                               node_count, prims)
    return out


@njit(parallel=True, **_JIT)
def _primary_layers(origins, dirs, max_hits, opacity_cut,
                    pos, seg, seg_strand, seg_radius, seg_s0, seg_s1, alpha,
                    node_lo, node_hi, node_left, node_right, node_start, node_count, prims):
    n = origins.shape[0]
    out_t = np.full((n, max_hits), np.inf)
    out_seg = np.full((n, max_hits), -1, np.int64)
    counts = np.zeros(n, np.int64)
    for i in prange(n):
        raw_t = np.empty(RAW_HIT_CAP)
        raw_seg = np.empty(RAW_HIT_CAP, np.int64)
        counts[i] = _sorted_layers(origins[i, 0], origins[i, 1], origins[i, 2],
                                   dirs[i, 0], dirs[i, 1], dirs[i, 2], max_hits, opacity_cut,
                                   pos, seg, seg_strand, seg_radius, seg_s0, seg_s1, alpha,
                                   node_lo, node_hi, node_left, node_right, node_start,
                                   node_count, prims, raw_t, raw_seg, out_t[i], out_seg[i])
    return out_t, out_seg, counts


# ---------------------------------------------------------------------------
# Counter-based random numbers for reproducible per-pixel streams


@njit(**_JIT)
def _mix64(z):
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


@njit(**_JIT)
def random01(seed, stream, sample, dim):
    """Uniform [0, 1) value that depends only on its four integer keys."""
    z = _mix64(np.uint64(seed) * np.uint64(0x9E3779B97F4A7C15) + np.uint64(stream))
    z = _mix64(z + np.uint64(sample) * np.uint64(0xD1B54A32D192ED03))
    z = _mix64(z + np.uint64(dim) * np.uint64(0x8CB92BA72F3D8DD7))
    return float(z >> np.uint64(11)) * (1.0 / 9007199254740992.0)


DIM_JITTER = 0
DIM_ENV = 2
DIM_ROULETTE = 4


@njit(parallel=True, **_JIT)
def _reference_paths(cam, width, height, px0, px1, spp, s0, s1, seed, excl_abs, excl_scale,
                     light_kind, light_vec,
                     pos, seg, seg_strand, seg_radius, seg_s0, seg_s1, alpha,
                     node_lo, node_hi, node_left, node_right, node_start, node_count, prims):
    """Sample single-scattering paths for pixels [px0, px1) and samples [s0, s1).

    ``cam`` packs (origin, right*tan*aspect, up*tan, forward). Each path picks
    one fiber layer by Russian roulette on coverage alpha and records the
    shading frame, light transmittances and one uniform environment sample.
    """
    n_pix = px1 - px0
    n_s = s1 - s0
    n = n_pix * n_s
    n_l = light_kind.shape[0]
    status = np.zeros(n, np.int8)
    x = np.zeros((n, 3))
    tan = np.zeros((n, 3))
    wo = np.zeros((n, 3))
    light_T = np.ones((n, max(n_l, 1)))
    light_d = np.zeros((n, max(n_l, 1), 3))
    light_r2 = np.ones((n, max(n_l, 1)))
    env_d = np.zeros((n, 3))
    env_T = np.zeros(n)
    strat = int(math.sqrt(spp))
    for q in prange(n):
        raw_t = np.empty(RAW_HIT_CAP)
        raw_seg = np.empty(RAW_HIT_CAP, np.int64)
        lay_t = np.empty(RAW_HIT_CAP)
        lay_seg = np.empty(RAW_HIT_CAP, np.int64)
        pix = px0 + q // n_s
        smp = s0 + q % n_s
        row = pix // width
        col = pix % width
        u1 = random01(seed, pix, smp, DIM_JITTER)
        u2 = random01(seed, pix, smp, DIM_JITTER + 1)
        if smp < strat * strat:
            fx = ((smp % strat) + u1) / strat
            fy = ((smp // strat) + u2) / strat
        else:
            fx = u1
            fy = u2
        sx = 2.0 * (col + fx) / width - 1.0
        sy = 1.0 - 2.0 * (row + fy) / height
        dx = cam[9] + sx * cam[3] + sy * cam[6]
        dy = cam[10] + sx * cam[4] + sy * cam[7]
        dz = cam[11] + sx * cam[5] + sy * cam[8]
        nd = math.sqrt(dx * dx + dy * dy + dz * dz)
        dx /= nd
        dy /= nd
        dz /= nd
        m = _sorted_layers(cam[0], cam[1], cam[2], dx, dy, dz, RAW_HIT_CAP, 2.0,
                           pos, seg, seg_strand, seg_radius, seg_s0, seg_s1, alpha,
                           node_lo, node_hi, node_left, node_right, node_start, node_count,
                           prims, raw_t, raw_seg, lay_t, lay_seg)
        chosen = -1
        for j in range(m):
            k = lay_seg[j]
            if random01(seed, pix, smp, DIM_ROULETTE + j) < alpha[seg_strand[k]]:
                chosen = j
                break
        if chosen < 0:
            continue
        k = lay_seg[chosen]
        t = lay_t[chosen]
        a = seg[k, 0]
        b = seg[k, 1]
        hx = cam[0] + t * dx
        hy = cam[1] + t * dy
        hz = cam[2] + t * dz
        ex = pos[b, 0] - pos[a, 0]
        ey = pos[b, 1] - pos[a, 1]
        ez = pos[b, 2] - pos[a, 2]
        ee = ex * ex + ey * ey + ez * ez
        sp = ((hx - pos[a, 0]) * ex + (hy - pos[a, 1]) * ey + (hz - pos[a, 2]) * ez) / ee
        sp = min(max(sp, 0.0), 1.0)
        cx = pos[a, 0] + sp * ex
        cy = pos[a, 1] + sp * ey
        cz = pos[a, 2] + sp * ez
        le = math.sqrt(ee)
        status[q] = 1
        x[q, 0] = cx
        x[q, 1] = cy
        x[q, 2] = cz
        tan[q, 0] = ex / le
        tan[q, 1] = ey / le
        tan[q, 2] = ez / le
        wo[q, 0] = -dx
        wo[q, 1] = -dy
        wo[q, 2] = -dz
        st = seg_strand[k]
        arc = seg_s0[k] + sp * (seg_s1[k] - seg_s0[k])
        r_ex = excl_abs if excl_abs > 0.0 else excl_scale * seg_radius[k]
        for li in range(n_l):
            if light_kind[li] == 0:
                lx, ly, lz = light_vec[li, 0], light_vec[li, 1], light_vec[li, 2]
                tmax = 1e300
            else:
                lx = light_vec[li, 0] - cx
                ly = light_vec[li, 1] - cy
                lz = light_vec[li, 2] - cz
                d2 = lx * lx + ly * ly + lz * lz
                light_r2[q, li] = d2
                tmax = math.sqrt(d2)
                lx /= tmax
                ly /= tmax
                lz /= tmax
            light_d[q, li, 0] = lx
            light_d[q, li, 1] = ly
            light_d[q, li, 2] = lz
            light_T[q, li] = transmittance(cx, cy, cz, lx, ly, lz, tmax, st, arc - r_ex, arc + r_ex,
                                           pos, seg, seg_strand, seg_radius, seg_s0, seg_s1,
                                           alpha, node_lo, node_hi, node_left, node_right,
                                           node_start, node_count, prims)
        zz = 1.0 - 2.0 * random01(seed, pix, smp, DIM_ENV)
        ph = 2.0 * math.pi * random01(seed, pix, smp, DIM_ENV + 1)
        rr = math.sqrt(max(0.0, 1.0 - zz * zz))
        env_d[q, 0] = rr * math.cos(ph)
        env_d[q, 1] = rr * math.sin(ph)
        env_d[q, 2] = zz
        env_T[q] = transmittance(cx, cy, cz, env_d[q, 0], env_d[q, 1], env_d[q, 2], 1e300,
                                 st, arc - r_ex, arc + r_ex,
                                 pos, seg, seg_strand, seg_radius, seg_s0, seg_s1, alpha,
                                 node_lo, node_hi, node_left, node_right, node_start,
                                 node_count, prims)
    return status, x, tan, wo, light_T, light_d, light_r2, env_d, env_T


# ---------------------------------------------------------------------------
# Python-facing wrappers


def _unit(v):
    v = np.asarray(v, dtype=np.float64)
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


def transmittance_fan(geom: HairGeometry, origins, dirs, exclude_strand=None,
                      exclude_lo=None, exclude_hi=None, tmax=None) -> np.ndarray:
    """Transmittance from each origin along every direction, shape (N, K)."""
    origins = np.ascontiguousarray(np.atleast_2d(origins), dtype=np.float64)
    dirs = np.ascontiguousarray(_unit(np.atleast_2d(dirs)))
    n = len(origins)
    ex_s = np.full(n, -1, np.int64) if exclude_strand is None else np.asarray(exclude_strand, np.int64).reshape(n)
    ex_lo = np.zeros(n) if exclude_lo is None else np.asarray(exclude_lo, np.float64).reshape(n)
    ex_hi = np.zeros(n) if exclude_hi is None else np.asarray(exclude_hi, np.float64).reshape(n)
    tm = np.full(n, 1e300) if tmax is None else np.asarray(tmax, np.float64).reshape(n)
    return _transmittance_batch(origins, dirs, tm, ex_s, ex_lo, ex_hi, *packed(geom).args())


def transmittance_rays(geom: HairGeometry, origins, dirs, exclude_strand=None,
                       exclude_lo=None, exclude_hi=None, tmax=None) -> np.ndarray:
    """Transmittance of paired rays (origin i, direction i), shape (N,)."""
    origins = np.ascontiguousarray(np.atleast_2d(origins), dtype=np.float64)
    dirs = np.ascontiguousarray(_unit(np.atleast_2d(dirs)))
    n = len(origins)
    ex_s = np.full(n, -1, np.int64) if exclude_strand is None else np.asarray(exclude_strand, np.int64).reshape(n)
    ex_lo = np.zeros(n) if exclude_lo is None else np.asarray(exclude_lo, np.float64).reshape(n)
    ex_hi = np.zeros(n) if exclude_hi is None else np.asarray(exclude_hi, np.float64).reshape(n)
    tm = np.full(n, 1e300) if tmax is None else np.asarray(tmax, np.float64).reshape(n)
    return _transmittance_pairs(origins, dirs, tm, ex_s, ex_lo, ex_hi, *packed(geom).args())


def primary_layers(geom: HairGeometry, origins, dirs, max_hits: int = 32,
                   opacity_cut: float = 0.999):
    """Sorted, merged hit layers per ray: (t (N, H), segment (N, H), count (N,))."""
    origins = np.ascontiguousarray(np.atleast_2d(origins), dtype=np.float64)
    dirs = np.ascontiguousarray(_unit(np.atleast_2d(dirs)))
    return _primary_layers(origins, dirs, int(max_hits), float(opacity_cut), *packed(geom).args())


def reference_paths(geom: HairGeometry, cam, width, height, px0, px1, spp, s0, s1, seed,
                    excl_abs, excl_scale, light_kind, light_vec):
    return _reference_paths(np.ascontiguousarray(cam, dtype=np.float64), int(width), int(height),
                            int(px0), int(px1), int(spp), int(s0), int(s1), int(seed),
                            float(excl_abs), float(excl_scale), np.ascontiguousarray(light_kind, dtype=np.int64),
                            np.ascontiguousarray(light_vec, dtype=np.float64).reshape(-1, 3),
                            *packed(geom).args())
