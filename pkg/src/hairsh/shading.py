"""Compiled per-hit shading kernels for the render loop.

Each hit is shaded by one fused loop body, the way a fragment shader runs,
for both our shader and the Kajiya-Kay baseline. The numpy functions in
``fiber``, ``farfield`` and ``render`` stay the reference; the kernels
mirror them step for step and are tested against them.

Only the default far-field layout is compiled (phase SH of order <= 1);
other orders fall back to numpy.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit, prange

from . import shmath
from .farfield import TRT_ABSORPTION, TT_ABSORPTION
from .fiber import COS2_FLOOR, MAX_THETA_D
from .raycast import _JIT

MAX_KERNEL_PHASE_ORDER = 1
_FOUR_PI = 4.0 * math.pi
_COS_MAX_TD = math.cos(MAX_THETA_D)
_SIN_MAX_TD = math.sin(MAX_THETA_D)


def supports(scene) -> bool:
    if scene.environment is None:
        return True
    return scene.phase_lut.order <= MAX_KERNEL_PHASE_ORDER


def pack_lights(lights):
    """(kind, vector, radiance) arrays; kind 0 is directional, 1 is point."""
    kind = np.array([0 if l.kind == "directional" else 1 for l in lights], dtype=np.int64)
    vec = np.array([l.vector for l in lights], dtype=np.float64).reshape(-1, 3)
    rad = np.array([l.radiance for l in lights], dtype=np.float64).reshape(-1, 3)
    return kind, vec, rad


@njit(inline="always", **_JIT)
def _incident(kind, vec, rad, j, x):
    """(direction toward light j, radiance scale); radiance is rad[j] * scale."""
    if kind[j] == 0:
        return vec[j, 0], vec[j, 1], vec[j, 2], 1.0
    vx, vy, vz = vec[j, 0] - x[0], vec[j, 1] - x[1], vec[j, 2] - x[2]
    r2 = vx * vx + vy * vy + vz * vz
    r = math.sqrt(r2)
    return vx / r, vy / r, vz / r, 1.0 / r2


@njit(inline="always", **_JIT)
def _sh_eval(order, K, dx, dy, dz, c):
    """sum_lm c[lm] Y_lm(d) for a unit direction; same recursion as sh_basis."""
    if order == 2:
        # the recursion written out for the transmittance order
        return (c[0] * K[0, 0] + K[1, 1] * (c[1] * dy + c[3] * dx) + c[2] * K[1, 0] * dz
                + c[6] * K[2, 0] * ((3.0 * dz * dz - 1.0) / 2.0)
                + 3.0 * dz * K[2, 1] * (c[5] * dy + c[7] * dx)
                + 3.0 * K[2, 2] * (c[4] * 2.0 * dx * dy + c[8] * (dx * dx - dy * dy)))
    total = 0.0
    cm, sm, pmm = 1.0, 0.0, 1.0
    for m in range(order + 1):
        if m > 0:
            cm, sm = cm * dx - sm * dy, cm * dy + sm * dx
            pmm = pmm * (2 * m - 1)
        p_prev, p = 0.0, pmm
        for l in range(m, order + 1):
            if l == m + 1:
                p_prev, p = p, dz * (2 * m + 1) * pmm
            elif l > m + 1:
                p_prev, p = p, ((2 * l - 1) * dz * p - (l + m - 1) * p_prev) / (l - m)
            base = l * l + l
            if m == 0:
                total += c[base] * K[l, 0] * p
            else:
                total += c[base + m] * K[l, m] * p * cm + c[base - m] * K[l, m] * p * sm
    return total


@njit(inline="always", **_JIT)
def _frame(z0, z1, z2, hx, hy, hz, use_hint):
    """First two columns of shmath.frame_from_z(z, hint), z unit: (x0, x1, x2, y0, y1, y2)."""
    if abs(z0) < 0.9:
        ax, ay, az = 1.0, 0.0, 0.0
    else:
        ax, ay, az = 0.0, 1.0, 0.0
    if use_hint:
        x0, x1, x2 = hx, hy, hz
    else:
        x0, x1, x2 = ax, ay, az
    d = x0 * z0 + x1 * z1 + x2 * z2
    x0, x1, x2 = x0 - d * z0, x1 - d * z1, x2 - d * z2
    n = math.sqrt(x0 * x0 + x1 * x1 + x2 * x2)
    if n < 1e-9:
        d = ax * z0 + ay * z1 + az * z2
        x0, x1, x2 = ax - d * z0, ay - d * z1, az - d * z2
        n = math.sqrt(x0 * x0 + x1 * x1 + x2 * x2)
    x0, x1, x2 = x0 / n, x1 / n, x2 / n
    return x0, x1, x2, z1 * x2 - z2 * x1, z2 * x0 - z0 * x2, z0 * x1 - z1 * x0


@njit(inline="always", **_JIT)
def _clip1(s):
    return min(max(s, -1.0), 1.0)


@njit(inline="always", **_JIT)
def _half_angle(c, s):
    """(cos, sin) of a/2 from (cos a, sin a), a in [-pi, pi]; branches keep it well conditioned."""
    ch = math.sqrt(max((1.0 + c) / 2.0, 0.0))
    if ch > 0.5:
        return ch, s / (2.0 * ch)
    return ch, math.copysign(math.sqrt(max((1.0 - c) / 2.0, 0.0)), s)


@njit(inline="always", **_JIT)
def _phase(si, ix, iy, sr, cr, ox, oy, g, cos_a, sin_a, lut, t0, t1, p0, p1, eta, a_tt, sigma):
    """eval_phase for one pair, returning RGB.

    Inputs are the tangent sines of w_i and w_o, cos(theta_r), and both
    directions' coordinates in the tangent's normal plane. Half angles come
    from sum and difference identities, so only theta_d and phi need atan2.
    """
    ci = math.sqrt(max(1.0 - si * si, 0.0))
    c_diff, s_diff = cr * ci + sr * si, sr * ci - cr * si  # theta_r - theta_i
    c_sum, s_sum = cr * ci - sr * si, sr * ci + cr * si  # theta_r + theta_i
    td = math.atan2(s_diff, c_diff) / 2
    c_th, s_th = _half_angle(c_sum, s_sum)
    # relative azimuth; a direction along the tangent has azimuth 0, i.e. sits on (1, 0)
    if ix * ix + iy * iy < 1e-24:
        ix, iy = 1.0, 0.0
    if ox * ox + oy * oy < 1e-24:
        ox, oy = 1.0, 0.0
    phi = math.atan2(abs(ix * oy - iy * ox), ix * ox + iy * oy)
    # bilinear LUT lookup
    nt, n_phi = lut.shape[1], lut.shape[2]
    ft = min(max((td - t0) / (t1 - t0), 0.0), 1.0) * (nt - 1)
    fp = min(max((phi - p0) / (p1 - p0), 0.0), 1.0) * (n_phi - 1)
    i = min(int(ft), nt - 2)
    j = min(int(fp), n_phi - 2)
    a = ft - i
    b = fp - j
    inv_cos2 = 1.0 / max((1.0 + c_diff) / 2.0, COS2_FLOOR)
    t_r = t_tt = t_trt = 0.0
    for p in range(3):
        N = ((1 - a) * ((1 - b) * lut[p, i, j] + b * lut[p, i, j + 1])
             + a * ((1 - b) * lut[p, i + 1, j] + b * lut[p, i + 1, j + 1]))
        gp = g[p]
        ca = c_th * cos_a[p] + s_th * sin_a[p]
        den = 1 + gp * gp - 2 * gp * ca
        M = (1 - gp * gp) / (_FOUR_PI * den * math.sqrt(den))
        if p == 0:
            t_r = M * N * inv_cos2
        elif p == 1:
            t_tt = M * N * inv_cos2
        else:
            t_trt = M * N * inv_cos2
    # Bravais index at theta_d clamped to +-MAX_THETA_D
    if abs(td) > MAX_THETA_D:
        c_td, s_td = _COS_MAX_TD, math.copysign(_SIN_MAX_TD, td)
    else:
        c_td, s_td = _half_angle(c_diff, s_diff)
    ep = math.sqrt(eta * eta - s_td * s_td) / c_td
    k = -8.0 * (1.0 - 3.0 / (2.0 * ep * ep))
    return (t_r + t_tt * a_tt[0] + t_trt * math.exp(sigma[0] * k),
            t_r + t_tt * a_tt[1] + t_trt * math.exp(sigma[1] * k),
            t_r + t_tt * a_tt[2] + t_trt * math.exp(sigma[2] * k))


@njit(inline="always", **_JIT)
def _lerp_modes(coeffs, mode_w, k, i, t, c):
    a = 0.0
    for p in range(3):
        a += mode_w[k, p] * ((1 - t) * coeffs[i, p, c] + t * coeffs[i + 1, p, c])
    return a


@njit(inline="always", **_JIT)
def _far_channel(k, v, Tk, ns, coeffs, i, t, mode_w, x0, x1, x2, y0, y1, y2, z0, z1, z2):
    """(v^T T_k) . (M(R) A_k) for one channel, R = [x y z] the canonical frame."""
    if ns == 1:
        q0 = 0.0
        for r in range(v.shape[0]):
            q0 += v[r] * Tk[k, r, 0]
        return q0 * _lerp_modes(coeffs, mode_w, k, i, t, 0)
    q0 = q1 = q2 = q3 = 0.0
    for r in range(v.shape[0]):
        q0 += v[r] * Tk[k, r, 0]
        q1 += v[r] * Tk[k, r, 1]
        q2 += v[r] * Tk[k, r, 2]
        q3 += v[r] * Tk[k, r, 3]
    a1 = _lerp_modes(coeffs, mode_w, k, i, t, 1)
    a2 = _lerp_modes(coeffs, mode_w, k, i, t, 2)
    a3 = _lerp_modes(coeffs, mode_w, k, i, t, 3)
    # band 1 is stored (y, z, x), so it rotates by a permutation of R
    return (q0 * _lerp_modes(coeffs, mode_w, k, i, t, 0)
            + q1 * (x1 * a3 + y1 * a1 + z1 * a2)
            + q2 * (x2 * a3 + y2 * a1 + z2 * a2)
            + q3 * (x0 * a3 + y0 * a1 + z0 * a2))


@njit(parallel=True, **_JIT)
def shade_ours(x, wo, u, vsh, kind, vec, rad, bias, K, v_order,
               g, cos_a, sin_a, lut, t0, t1, p0, p1, eta, sigma, a_tt,
               has_env, coeffs, mode_w, Tk):
    """Per-hit RGB; the far-field term is clamped at 0 on its own, as in shade_far."""
    n = x.shape[0]
    out = np.zeros((n, 3))
    n_lights = kind.shape[0]
    ns = Tk.shape[2]
    n_samples = coeffs.shape[0]
    for h in prange(n):
        un = math.sqrt(u[h, 0] ** 2 + u[h, 1] ** 2 + u[h, 2] ** 2)
        z0, z1, z2 = u[h, 0] / un, u[h, 1] / un, u[h, 2] / un
        x0, x1, x2, y0, y1, y2 = _frame(z0, z1, z2, 0.0, 0.0, 0.0, False)
        o0, o1, o2 = wo[h, 0], wo[h, 1], wo[h, 2]
        sr = o0 * z0 + o1 * z1 + o2 * z2
        sr = _clip1(sr)
        cr = math.sqrt(max(1.0 - sr * sr, 0.0))
        ox = o0 * x0 + o1 * x1 + o2 * x2
        oy = o0 * y0 + o1 * y1 + o2 * y2
        v = vsh[h]
        r0 = r1 = r2 = 0.0
        for j in range(n_lights):
            l0, l1, l2, scale = _incident(kind, vec, rad, j, x[h])
            V = min(max(_sh_eval(v_order, K, l0, l1, l2, v), 0.0), 1.0)
            if bias != 0.0:
                V = max(0.0, (V - bias) / (1.0 - bias))
            if V == 0.0:
                continue
            s0, s1, s2 = _phase(_clip1(l0 * z0 + l1 * z1 + l2 * z2), l0 * x0 + l1 * x1 + l2 * x2,
                                l0 * y0 + l1 * y1 + l2 * y2, sr, cr, ox, oy,
                                g, cos_a, sin_a, lut, t0, t1, p0, p1, eta, a_tt, sigma)
            r0 += rad[j, 0] * scale * V * s0
            r1 += rad[j, 1] * scale * V * s1
            r2 += rad[j, 2] * scale * V * s2
        if has_env:
            f = min(max((_clip1(sr) + 1.0) / 2.0 * n_samples - 0.5, 0.0), n_samples - 1.0)
            i = min(int(f), n_samples - 2)
            t = f - i
            if ns == 4:
                x0, x1, x2, y0, y1, y2 = _frame(z0, z1, z2, o0, o1, o2, True)
            r0 += max(_far_channel(0, v, Tk, ns, coeffs, i, t, mode_w,
                                   x0, x1, x2, y0, y1, y2, z0, z1, z2), 0.0)
            r1 += max(_far_channel(1, v, Tk, ns, coeffs, i, t, mode_w,
                                   x0, x1, x2, y0, y1, y2, z0, z1, z2), 0.0)
            r2 += max(_far_channel(2, v, Tk, ns, coeffs, i, t, mode_w,
                                   x0, x1, x2, y0, y1, y2, z0, z1, z2), 0.0)
        out[h, 0], out[h, 1], out[h, 2] = r0, r1, r2
    return out


@njit(parallel=True, **_JIT)
def shade_kajiya_kay(x, wo, u, kind, vec, rad, ambient, kd, ks, exponent):
    n = x.shape[0]
    out = np.empty((n, 3))
    n_lights = kind.shape[0]
    for h in prange(n):
        te = u[h, 0] * wo[h, 0] + u[h, 1] * wo[h, 1] + u[h, 2] * wo[h, 2]
        se = math.sqrt(max(1.0 - te * te, 0.0))
        r0, r1, r2 = ambient[0], ambient[1], ambient[2]
        for j in range(n_lights):
            l0, l1, l2, scale = _incident(kind, vec, rad, j, x[h])
            tl = u[h, 0] * l0 + u[h, 1] * l1 + u[h, 2] * l2
            sl = math.sqrt(max(1.0 - tl * tl, 0.0))
            spec = max(sl * se - tl * te, 0.0) ** exponent
            r0 += rad[j, 0] * scale * (kd[0] * sl + ks[0] * spec)
            r1 += rad[j, 1] * scale * (kd[1] * sl + ks[1] * spec)
            r2 += rad[j, 2] * scale * (kd[2] * sl + ks[2] * spec)
        out[h, 0], out[h, 1], out[h, 2] = r0, r1, r2
    return out


def ours(scene, x, wo, u, vsh, bias: float):
    if not 0.0 <= bias < 1.0:
        raise ValueError("bias must be in [0, 1)")
    m, lut = scene.material, scene.lut
    kind, vec, rad = pack_lights(scene.lights)
    vsh = np.ascontiguousarray(vsh, dtype=np.float64)
    v_order = shmath.order_from_count(vsh.shape[-1])
    K = shmath._norm_constants(v_order)
    sigma = np.asarray(m.sigma_a, dtype=np.float64)
    env = scene.environment
    if env is not None:
        pl = scene.phase_lut
        order = max(v_order, env.order, pl.order)
        Tk = np.ascontiguousarray(env.gaunt_contracted(order)[:, :vsh.shape[-1], :pl.coeffs.shape[2]])
        coeffs = pl.coeffs
        mode_w = np.stack([np.ones(3), np.exp(-TT_ABSORPTION * sigma),
                           np.exp(-TRT_ABSORPTION * sigma)], axis=-1)
    else:
        Tk, coeffs, mode_w = np.zeros((3, 1, 1)), np.zeros((2, 3, 1)), np.zeros((3, 3))
    alpha = m.alpha
    return shade_ours(
        np.ascontiguousarray(x, dtype=np.float64), np.ascontiguousarray(wo, dtype=np.float64),
        np.ascontiguousarray(u, dtype=np.float64), vsh, kind, vec, rad, float(bias), K, v_order,
        m.g, np.cos(alpha), np.sin(alpha), lut.tables, lut.theta_range[0], lut.theta_range[1],
        lut.phi_range[0], lut.phi_range[1], float(m.eta), sigma, np.exp(-4.0 * sigma),
        env is not None, coeffs, mode_w, Tk)


def kajiya_kay(x, wo, u, lights, ambient, diffuse, specular, exponent):
    kind, vec, rad = pack_lights(lights)
    f = lambda a: np.ascontiguousarray(a, dtype=np.float64)  # noqa: E731
    return shade_kajiya_kay(f(x), f(wo), f(u), kind, vec, rad, f(ambient), f(diffuse),
                            f(specular), float(exponent))
