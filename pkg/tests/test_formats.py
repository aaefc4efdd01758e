import json
import math
import struct

import numpy as np
import pytest

from hairsh import formats, scenes
from hairsh import transmittance as tr
from hairsh.farfield import PhaseSHLUT
from hairsh.formats import FormatError


def test_lut_round_trip(lut, tmp_path):
    p = tmp_path / "a.lut"
    formats.save_lut(p, lut, {"cli": {"res": 1}})
    back = formats.load_lut(p)
    assert back.tables.shape == lut.tables.shape
    assert np.allclose(back.tables, lut.tables, rtol=1e-6, atol=1e-30)
    assert back.theta_range == pytest.approx(lut.theta_range)
    meta = formats.read_meta(p)
    assert meta["tool"] == "hairsh" and "tool_version" in meta
    assert meta["g"] == pytest.approx([0.752, 0.865, 0.578], abs=0.02)
    assert meta["cli"] == {"res": 1}


def test_header_layout(lut):
    buf = formats.lut_to_bytes(lut)
    assert buf[:8] == formats.MAGIC_LUT
    version, n = struct.unpack_from("<II", buf, 8)
    assert version == formats.FORMAT_VERSION
    meta = json.loads(buf[16:16 + n])
    assert list(meta) == sorted(meta)
    modes, rt, rp = struct.unpack_from("<III", buf, 16 + n)
    assert (modes, rt, rp) == lut.tables.shape
    assert len(buf) == 16 + n + struct.calcsize("<III4d") + 4 * lut.tables.size


def test_serialization_is_deterministic(lut):
    assert formats.lut_to_bytes(lut) == formats.lut_to_bytes(lut)


def test_vertex_sh_round_trip(tmp_path, rng):
    v = tr.VertexTransmittanceSH(rng.normal(size=(7, 9)), errors=rng.uniform(size=7))
    p = tmp_path / "v.vsh"
    formats.save_vertex_sh(p, v)
    back = formats.load_vertex_sh(p)
    assert np.allclose(back.coeffs, v.coeffs, atol=1e-6)
    assert back.meta["sh_error"]["max"] == pytest.approx(v.errors.max())


def test_phase_round_trips(phase_lut, tmp_path):
    p = tmp_path / "p.psh"
    formats.save_phase(p, phase_lut)
    back = formats.load_phase(p)
    assert np.allclose(back.coeffs, phase_lut.coeffs, rtol=1e-6, atol=1e-30)
    assert back.order == 1 and back.samples == 128
    q = tmp_path / "p8.psh"
    formats.save_phase(q, phase_lut, quantized=True)
    back8 = formats.load_phase(q)
    err = np.abs(back8.coeffs - phase_lut.coeffs).max()
    assert formats.read_meta(q)["quantization_max_abs_error"] == pytest.approx(err, rel=1e-3, abs=1e-9)
    span = phase_lut.coeffs.max(axis=0) - phase_lut.coeffs.min(axis=0)
    assert np.all(np.abs(back8.coeffs - phase_lut.coeffs) <= span / 510 * 1.001 + 1e-7)
    assert q.stat().st_size < p.stat().st_size


def test_quantize_constant_channel():
    c = np.ones((4, 3, 4))
    q, scale, offset = formats.quantize_phase(PhaseSHLUT(c))
    assert np.array_equal(formats.dequantize_phase(q, scale, offset), c)


@pytest.mark.parametrize("cut", [4, 12, 40, -3])
def test_truncated_files_rejected(lut, cut):
    buf = formats.lut_to_bytes(lut)
    with pytest.raises(FormatError):
        formats.lut_from_bytes(buf[:cut])


def test_wrong_magic_and_version(lut):
    buf = bytearray(formats.lut_to_bytes(lut))
    with pytest.raises(FormatError):
        formats.vertex_sh_from_bytes(bytes(buf))
    struct.pack_into("<I", buf, 8, 99)
    with pytest.raises(FormatError, match="version"):
        formats.lut_from_bytes(bytes(buf))


def test_read_meta_unknown(tmp_path):
    p = tmp_path / "junk.bin"
    p.write_bytes(b"0123456789abcdef")
    with pytest.raises(FormatError):
        formats.read_meta(p)


# ---------------------------------------------------------------------------
# Hair text


def test_hair_round_trip(tmp_path):
    g = scenes.curl(n_strands=5, n_vertices=6)
    p = tmp_path / "c.hair"
    formats.write_hair(p, g)
    back = formats.read_hair(p)
    assert back.n_strands == 5
    assert all(np.array_equal(a, b) for a, b in zip(back.strands, g.strands))
    assert all(np.array_equal(a, b) for a, b in zip(back.radii, g.radii))
    assert np.array_equal(back.alpha, g.alpha)


def test_hair_default_alpha_and_comments(tmp_path):
    p = tmp_path / "h.hair"
    p.write_text("# two strands\n0 0 0 0.1\n1 0 0 0.1  # tip\n\n\nalpha 0.25\n0 1 0 0.1\n1 1 0 0.1\n")
    g = formats.read_hair(p)
    assert g.n_strands == 2 and g.alpha.tolist() == [0.5, 0.25]
    assert formats.read_hair(p, default_alpha=0.9).alpha.tolist() == [0.9, 0.25]


@pytest.mark.parametrize("text, line", [
    ("0 0 0\n1 0 0 0.1\n", 1),
    ("0 0 0 0.1\n1 0 x 0.1\n", 2),
    ("0 0 0 0.1\nalpha 0.3\n1 0 0 0.1\n", 2),
])
def test_hair_parse_errors_carry_line(tmp_path, text, line):
    p = tmp_path / "bad.hair"
    p.write_text(text)
    with pytest.raises(FormatError, match=f":{line}:"):
        formats.read_hair(p)


def test_hair_single_vertex_strand(tmp_path):
    p = tmp_path / "one.hair"
    p.write_text("0 0 0 0.1\n")
    with pytest.raises(FormatError):
        formats.read_hair(p)


# ---------------------------------------------------------------------------
# Images


def test_pfm_round_trip(tmp_path, rng):
    img = rng.uniform(size=(5, 7, 3)).astype(np.float32)
    p = tmp_path / "i.pfm"
    formats.write_pfm(p, img)
    assert np.array_equal(formats.read_pfm(p), img.astype(np.float64))
    head = p.read_bytes()[:12]
    assert head.startswith(b"PF\n7 5\n-1.0\n")


def test_pfm_size_mismatch(tmp_path):
    p = tmp_path / "b.pfm"
    p.write_bytes(b"PF\n2 2\n-1.0\n" + b"\0" * 8)
    with pytest.raises(FormatError):
        formats.read_pfm(p)


def test_ppm_gamma(tmp_path):
    img = np.array([[[0.0, 0.5, 1.0], [2.0, -1.0, 0.218]]])
    p = tmp_path / "i.ppm"
    formats.write_ppm(p, img)
    data = p.read_bytes()
    assert data.startswith(b"P6\n2 1\n255\n")
    px = list(data[-6:])
    assert px[0] == 0 and px[2] == 255 and px[3] == 255 and px[4] == 0
    assert px[1] == round(255 * 0.5 ** (1 / 2.2))
    assert px[5] == round(255 * 0.218 ** (1 / 2.2))


def test_image_suffixes(tmp_path):
    with pytest.raises(FormatError):
        formats.write_image(tmp_path / "x.png", np.zeros((2, 2, 3)))
    with pytest.raises(FormatError):
        formats.read_image(tmp_path / "x.png")
    np.save(tmp_path / "x.npy", np.ones((2, 2, 3)))
    assert formats.read_image(tmp_path / "x.npy").shape == (2, 2, 3)


def test_export_lut_pfm(lut, tmp_path):
    paths = formats.export_lut_pfm(lut, tmp_path / "lut")
    assert len(paths) == 3
    assert formats.read_pfm(paths[0]).shape == lut.tables.shape[1:] + (3,)


# ---------------------------------------------------------------------------
# Scene files


def test_scene_file_resolves_paths(tmp_path):
    p = tmp_path / "sub" / "s.yaml"
    p.parent.mkdir()
    p.write_text("geometry: c.hair\nenvironment: sky.pfm\nlights: []\n")
    doc = formats.load_scene_file(p)
    assert doc["geometry"] == str(p.parent / "c.hair")
    assert doc["environment"] == {"path": str(p.parent / "sky.pfm")}


def test_scene_file_rejects_unknown_keys(tmp_path):
    p = tmp_path / "s.yaml"
    p.write_text("geometry: a\ncolour: red\n")
    with pytest.raises(FormatError, match="colour"):
        formats.load_scene_file(p)
    p.write_text("- 1\n- 2\n")
    with pytest.raises(FormatError):
        formats.load_scene_file(p)


def test_material_config_round_trip():
    m = formats.material_from_config({"beta_r_deg": 8, "sigma_a": [0.1, 0.2, 0.3]})
    assert math.degrees(m.beta_r) == pytest.approx(8)
    again = formats.material_from_config(formats.material_config(m))
    assert again.beta_r == pytest.approx(m.beta_r) and again.alpha_r == pytest.approx(m.alpha_r)
    assert np.allclose(again.sigma_a, m.sigma_a) and again.eta == m.eta
    with pytest.raises(FormatError):
        formats.material_from_config({"ior": 1.5})
