"""On-disk formats: baked tables, hair text files, images and scene files.

Every binary file starts with the same container header (see FORMATS.md):
an 8-byte magic, a uint32 format version, a uint32 metadata length and a
UTF-8 JSON metadata block holding the tool version and the full parameter
set. The typed payload follows. All numbers are little-endian.
"""

from __future__ import annotations

import json
import math
import struct
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .farfield import EnvironmentMap, PhaseSHLUT
from .fiber import AzimuthalLUT, FiberMaterial
from .geometry import HairGeometry
from .transmittance import VertexTransmittanceSH

FORMAT_VERSION = 1
MAGIC_LUT = b"HSHAZLUT"
MAGIC_VERTEX_SH = b"HSHVTXSH"
MAGIC_PHASE = b"HSHPHASE"
MAGIC_PHASE_Q8 = b"HSHPHSQ8"


class FormatError(ValueError):
    pass


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def _header(magic: bytes, meta: dict) -> bytes:
    meta = dict(meta)
    meta.setdefault("tool", "hairsh")
    meta.setdefault("tool_version", __version__)
    blob = json.dumps(_jsonable(meta), sort_keys=True, separators=(",", ":")).encode()
    return magic + struct.pack("<II", FORMAT_VERSION, len(blob)) + blob


def _read_header(buf: bytes, magic: bytes):
    if len(buf) < 16 or buf[:8] != magic:
        raise FormatError(f"not a {magic.decode()} file")
    version, n = struct.unpack_from("<II", buf, 8)
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported format version {version}")
    if 16 + n > len(buf):
        raise FormatError("truncated metadata block")
    return json.loads(buf[16:16 + n].decode()), 16 + n


def _take(buf, off, dtype, count):
    n = np.dtype(dtype).itemsize * count
    if off + n > len(buf):
        raise FormatError("truncated payload")
    return np.frombuffer(buf, dtype=dtype, count=count, offset=off), off + n


def read_meta(path) -> dict:
    buf = Path(path).read_bytes()
    for magic in (MAGIC_LUT, MAGIC_VERTEX_SH, MAGIC_PHASE, MAGIC_PHASE_Q8):
        if buf[:8] == magic:
            return _read_header(buf, magic)[0]
    raise FormatError(f"{path}: unknown file type")


# ---------------------------------------------------------------------------
# Azimuthal LUT


def lut_to_bytes(lut: AzimuthalLUT, params: dict | None = None) -> bytes:
    meta = {**lut.meta, **(params or {})}
    meta["g"] = meta.get("material", {}).get("g")
    head = struct.pack("<III4d", lut.tables.shape[0], lut.res_theta, lut.res_phi,
                       *lut.theta_range, *lut.phi_range)
    return _header(MAGIC_LUT, meta) + head + lut.tables.astype("<f4").tobytes()


def lut_from_bytes(buf: bytes) -> AzimuthalLUT:
    meta, off = _read_header(buf, MAGIC_LUT)
    modes, rt, rp, t0, t1, p0, p1 = struct.unpack_from("<III4d", buf, off)
    off += struct.calcsize("<III4d")
    data, _ = _take(buf, off, "<f4", modes * rt * rp)
    return AzimuthalLUT(data.reshape(modes, rt, rp).astype(np.float64), (t0, t1), (p0, p1), meta)


# ---------------------------------------------------------------------------
# Per-vertex transmittance sidecar


def vertex_sh_to_bytes(v: VertexTransmittanceSH, params: dict | None = None) -> bytes:
    meta = {**v.meta, **(params or {})}
    if v.errors is not None and len(v.errors):
        meta["sh_error"] = {"mean": float(np.mean(v.errors)),
                            "p50": float(np.percentile(v.errors, 50)),
                            "p90": float(np.percentile(v.errors, 90)),
                            "max": float(np.max(v.errors))}
    out = _header(MAGIC_VERTEX_SH, meta) + struct.pack("<I", v.n_vertices)
    return out + v.coeffs.astype("<f4").tobytes()


def vertex_sh_from_bytes(buf: bytes) -> VertexTransmittanceSH:
    meta, off = _read_header(buf, MAGIC_VERTEX_SH)
    (n,) = struct.unpack_from("<I", buf, off)
    data, _ = _take(buf, off + 4, "<f4", n * 9)
    return VertexTransmittanceSH(data.reshape(n, 9).astype(np.float64), meta=meta)


# ---------------------------------------------------------------------------
# Phase SH table, float and 8-bit


def phase_to_bytes(p: PhaseSHLUT, params: dict | None = None) -> bytes:
    meta = {**p.meta, **(params or {})}
    head = struct.pack("<III", p.samples, p.order, p.coeffs.shape[1])
    return _header(MAGIC_PHASE, meta) + head + p.coeffs.astype("<f4").tobytes()


def phase_from_bytes(buf: bytes) -> PhaseSHLUT:
    if buf[:8] == MAGIC_PHASE_Q8:
        return phase_q8_from_bytes(buf)
    meta, off = _read_header(buf, MAGIC_PHASE)
    n, order, modes = struct.unpack_from("<III", buf, off)
    nc = (order + 1) ** 2
    data, _ = _take(buf, off + 12, "<f4", n * modes * nc)
    return PhaseSHLUT(data.reshape(n, modes, nc).astype(np.float64), meta)


def quantize_phase(p: PhaseSHLUT):
    """8-bit normalized texels with a float scale/offset per (mode, coefficient)."""
    c = p.coeffs
    lo = c.min(axis=0)
    span = c.max(axis=0) - lo
    scale = np.where(span > 0, span / 255.0, 1.0)
    q = np.clip(np.rint((c - lo) / scale), 0, 255).astype(np.uint8)
    return q, scale.astype(np.float32), lo.astype(np.float32)


def dequantize_phase(q, scale, offset) -> np.ndarray:
    return q.astype(np.float64) * scale.astype(np.float64) + offset.astype(np.float64)


def phase_q8_to_bytes(p: PhaseSHLUT, params: dict | None = None) -> bytes:
    q, scale, offset = quantize_phase(p)
    err = np.abs(dequantize_phase(q, scale, offset) - p.coeffs)
    meta = {**p.meta, **(params or {}), "quantization_max_abs_error": float(err.max())}
    head = struct.pack("<III", p.samples, p.order, p.coeffs.shape[1])
    return (_header(MAGIC_PHASE_Q8, meta) + head + scale.astype("<f4").tobytes()
            + offset.astype("<f4").tobytes() + q.tobytes())


def phase_q8_from_bytes(buf: bytes) -> PhaseSHLUT:
    meta, off = _read_header(buf, MAGIC_PHASE_Q8)
    n, order, modes = struct.unpack_from("<III", buf, off)
    nc = (order + 1) ** 2
    off += 12
    scale, off = _take(buf, off, "<f4", modes * nc)
    offset, off = _take(buf, off, "<f4", modes * nc)
    q, _ = _take(buf, off, "u1", n * modes * nc)
    c = dequantize_phase(q.reshape(n, modes, nc), scale.reshape(modes, nc), offset.reshape(modes, nc))
    return PhaseSHLUT(c, meta)


def write_bytes(path, data: bytes) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_bytes(data)


def save_lut(path, lut, params=None):
    write_bytes(path, lut_to_bytes(lut, params))


def load_lut(path) -> AzimuthalLUT:
    return lut_from_bytes(Path(path).read_bytes())


def save_vertex_sh(path, v, params=None):
    write_bytes(path, vertex_sh_to_bytes(v, params))


def load_vertex_sh(path) -> VertexTransmittanceSH:
    return vertex_sh_from_bytes(Path(path).read_bytes())


def save_phase(path, p, params=None, quantized: bool = False):
    write_bytes(path, (phase_q8_to_bytes if quantized else phase_to_bytes)(p, params))


def load_phase(path) -> PhaseSHLUT:
    return phase_from_bytes(Path(path).read_bytes())


# ---------------------------------------------------------------------------
# Hair text format


def write_hair(path, geom: HairGeometry) -> None:
    """One block per strand: optional ``alpha a`` line, then ``x y z radius`` lines."""
    lines = ["# hairsh strands: x y z radius; blank line between strands"]
    for s, r, a in zip(geom.strands, geom.radii, geom.alpha):
        lines.append(f"alpha {float(a)!r}")
        lines.extend(f"{p[0]!r} {p[1]!r} {p[2]!r} {ri!r}" for p, ri in zip(s.tolist(), r.tolist()))
        lines.append("")
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text("\n".join(lines))


def read_hair(path, default_alpha: float | None = None) -> HairGeometry:
    strands, radii, alphas = [], [], []
    cur, alpha = [], None

    def flush():
        nonlocal cur, alpha
        if cur:
            arr = np.array(cur)
            strands.append(arr[:, :3])
            radii.append(arr[:, 3])
            alphas.append(alpha)
        cur, alpha = [], None

    text = Path(path).read_text()
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            if not raw.strip():
                flush()
            continue
        parts = line.split()
        if parts[0] == "alpha":
            if cur or len(parts) != 2:
                raise FormatError(f"{path}:{lineno}: 'alpha' must open a strand block")
            alpha = float(parts[1])
            continue
        if len(parts) != 4:
            raise FormatError(f"{path}:{lineno}: expected 'x y z radius'")
        try:
            cur.append([float(p) for p in parts])
        except ValueError as exc:
            raise FormatError(f"{path}:{lineno}: {exc}") from None
    flush()
    fallback = 0.5 if default_alpha is None else default_alpha
    alpha_arr = np.array([fallback if a is None else a for a in alphas])
    try:
        return HairGeometry(tuple(strands), tuple(radii), alpha_arr)
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from None


# ---------------------------------------------------------------------------
# Images


def write_pfm(path, image) -> None:
    """Little-endian colour PFM, rows stored bottom to top."""
    img = np.asarray(image, dtype="<f4")
    if img.ndim == 2:
        img = np.repeat(img[..., None], 3, axis=-1)
    h, w = img.shape[:2]
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(f"PF\n{w} {h}\n-1.0\n".encode())
        f.write(np.ascontiguousarray(img[::-1, :, :3]).tobytes())


def read_pfm(path) -> np.ndarray:
    with open(path, "rb") as f:
        kind = f.readline().strip()
        if kind not in (b"PF", b"Pf"):
            raise FormatError(f"{path}: not a PFM file")
        dims = f.readline().split()
        while not dims:
            dims = f.readline().split()
        w, h = int(dims[0]), int(dims[1])
        scale = float(f.readline().strip())
        ch = 3 if kind == b"PF" else 1
        data = np.frombuffer(f.read(), dtype="<f4" if scale < 0 else ">f4")
    if data.size != w * h * ch:
        raise FormatError(f"{path}: expected {w * h * ch} floats, found {data.size}")
    img = data.reshape(h, w, ch)[::-1].astype(np.float64)
    return img if ch == 3 else img[..., 0]


def write_ppm(path, image, gamma: float = 2.2) -> None:
    """8-bit binary PPM with a gamma encode of the clamped linear values."""
    img = np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0) ** (1.0 / gamma)
    q = np.rint(img * 255.0).astype(np.uint8)
    h, w = q.shape[:2]
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode())
        f.write(np.ascontiguousarray(q[..., :3]).tobytes())


def export_lut_pfm(lut: AzimuthalLUT, prefix) -> list[str]:
    """One grayscale-as-RGB PFM per mode (rows = theta_d, columns = phi) for inspection."""
    paths = []
    for name, table in zip(("R", "TT", "TRT"), lut.tables):
        p = f"{prefix}_{name}.pfm"
        write_pfm(p, table)
        paths.append(p)
    return paths


def write_image(path, image) -> None:
    suffix = Path(path).suffix.lower()
    if suffix == ".pfm":
        write_pfm(path, image)
    elif suffix == ".ppm":
        write_ppm(path, image)
    else:
        raise FormatError(f"{path}: unsupported image type (use .pfm or .ppm)")


def read_image(path) -> np.ndarray:
    suffix = Path(path).suffix.lower()
    if suffix == ".pfm":
        return read_pfm(path)
    if suffix == ".npy":
        return np.load(path)
    raise FormatError(f"{path}: unsupported image type (use .pfm or .npy)")


# ---------------------------------------------------------------------------
# Scene description

SCENE_KEYS = {"geometry", "alpha", "transmittance", "material", "lut", "phase_sh", "lights",
              "environment", "camera", "settings", "transform", "exclusion_radius"}


def load_scene_file(path) -> dict:
    """Parse a YAML scene file; relative paths resolve against its directory."""
    path = Path(path)
    try:
        doc = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise FormatError(f"{path}: {exc}") from None
    if not isinstance(doc, dict):
        raise FormatError(f"{path}: scene file must be a mapping")
    unknown = set(doc) - SCENE_KEYS
    if unknown:
        raise FormatError(f"{path}: unknown keys {sorted(unknown)}")
    base = path.parent
    for key in ("geometry", "transmittance", "lut", "phase_sh"):
        if isinstance(doc.get(key), str) and not (key == "transmittance" and doc[key] == "unoccluded"):
            doc[key] = str(base / doc[key])
    env = doc.get("environment")
    if isinstance(env, dict) and isinstance(env.get("path"), str):
        env["path"] = str(base / env["path"])
    elif isinstance(env, str):
        doc["environment"] = {"path": str(base / env)}
    return doc


def material_from_config(cfg: dict | None) -> FiberMaterial:
    cfg = dict(cfg or {})
    unknown = set(cfg) - {"beta_r_deg", "alpha_r_deg", "eta", "sigma_a"}
    if unknown:
        raise FormatError(f"unknown material keys {sorted(unknown)}")
    return FiberMaterial.from_surface(
        beta_r=math.radians(float(cfg.get("beta_r_deg", 10.0))),
        alpha_r=math.radians(float(cfg.get("alpha_r_deg", -10.0))),
        eta=float(cfg.get("eta", 1.55)), sigma_a=cfg.get("sigma_a", 0.0))


def material_config(m: FiberMaterial) -> dict:
    return {"beta_r_deg": math.degrees(m.beta_r), "alpha_r_deg": math.degrees(m.alpha_r),
            "eta": m.eta, "sigma_a": [float(v) for v in m.sigma_a]}


def load_environment_image(path) -> EnvironmentMap:
    return EnvironmentMap(read_image(path))
