import json
import math
import subprocess
import sys

import numpy as np
import pytest
import yaml

from hairsh import cli, formats, scenes

SQRT_4PI = 2 * math.sqrt(math.pi)


def run(*argv):
    return cli.main([str(a) for a in argv])


@pytest.fixture(scope="module")
def small_lut(tmp_path_factory):
    p = tmp_path_factory.mktemp("lut") / "small.lut"
    assert run("bake-lut", "--res-theta", 16, "--res-phi", 32, "--out", p) == 0
    return p


@pytest.fixture
def strand_scene(tmp_path, small_lut):
    """Single-strand scene file with a tiny camera and no environment."""
    assert run("make-scene", "single-strand", "--out-dir", tmp_path) == 0
    p = tmp_path / "single-strand.yaml"
    doc = yaml.safe_load(p.read_text())
    doc.pop("environment")
    doc["lut"] = str(small_lut)
    doc["camera"].update(width=16, height=15)  # odd height: a pixel row on the strand
    p.write_text(yaml.safe_dump(doc))
    return p


# ---------------------------------------------------------------------------
# bake-lut


def test_bake_lut_header_g_and_determinism(tmp_path, capsys):
    a, b = tmp_path / "a.lut", tmp_path / "b.lut"
    assert run("bake-lut", "--res-theta", 16, "--res-phi", 32, "--out", a) == 0
    assert "g = " in capsys.readouterr().out
    assert run("bake-lut", "--res-theta", 16, "--res-phi", 32, "--out", b) == 0
    assert a.read_bytes() == b.read_bytes()
    meta = formats.read_meta(a)
    assert meta["g"] == pytest.approx([0.752, 0.865, 0.578], abs=0.02)
    assert meta["material_config"]["beta_r_deg"] == 10.0
    assert meta["tool_version"]


def test_bake_lut_rejects_small_res(tmp_path, capsys):
    assert run("bake-lut", "--res-theta", 8, "--out", tmp_path / "x.lut") == 1
    assert ">= 16" in capsys.readouterr().err
    assert not (tmp_path / "x.lut").exists()


def test_bake_lut_pfm_export(tmp_path):
    assert run("bake-lut", "--res-theta", 16, "--res-phi", 16, "--out", tmp_path / "l.lut",
               "--pfm-prefix", tmp_path / "lut") == 0
    assert (tmp_path / "lut_TRT.pfm").is_file()


# ---------------------------------------------------------------------------
# bake-transmittance


def test_bake_transmittance_single_strand(tmp_path, strand_scene):
    out = tmp_path / "t.vsh"
    assert run("bake-transmittance", "--scene", strand_scene, "--res", 8, "--out", out) == 0
    V = formats.load_vertex_sh(out)
    assert np.allclose(V.coeffs[:, 0], SQRT_4PI, rtol=1e-6)
    assert np.allclose(V.coeffs[:, 1:], 0.0, atol=1e-6)
    assert formats.read_meta(out)["sh_error"]["max"] >= 0.0


def test_bake_transmittance_enclosure(tmp_path):
    hair = tmp_path / "e.hair"
    formats.write_hair(hair, scenes.enclosure())
    out = tmp_path / "e.vsh"
    assert run("bake-transmittance", "--geometry", hair, "--res", 8, "--out", out) == 0
    V = formats.load_vertex_sh(out)
    assert np.abs(V.coeffs[1]).max() < 1e-6


def test_bake_transmittance_missing_geometry(tmp_path, capsys):
    assert run("bake-transmittance", "--geometry", tmp_path / "nope.hair", "--out", tmp_path / "o") == 1
    assert "not found" in capsys.readouterr().err
    assert run("bake-transmittance", "--out", tmp_path / "o") == 1


# ---------------------------------------------------------------------------
# bake-phase-sh


def test_bake_phase_defaults_and_order(tmp_path, small_lut, capsys):
    p1, p2, q = tmp_path / "p1.psh", tmp_path / "p2.psh", tmp_path / "p1q.psh"
    assert run("bake-phase-sh", "--lut", small_lut, "--quadrature", 32, "--out", p1,
               "--quantized-out", q) == 0
    assert "round-trip error" in capsys.readouterr().out
    t = formats.load_phase(p1)
    assert t.samples == 128 and t.order == 1
    assert formats.read_meta(p1)["order"] == 1
    assert run("bake-phase-sh", "--lut", small_lut, "--quadrature", 32, "--order", 2, "--out", p2) == 0
    assert p2.stat().st_size > p1.stat().st_size
    assert formats.read_meta(p2)["order"] == 2
    back = formats.load_phase(q)
    assert np.abs(back.coeffs - t.coeffs).max() == pytest.approx(
        formats.read_meta(q)["quantization_max_abs_error"], rel=1e-3, abs=1e-9)


def test_bake_phase_validation(tmp_path, small_lut):
    assert run("bake-phase-sh", "--lut", small_lut, "--order", 9, "--out", tmp_path / "x") == 1


# ---------------------------------------------------------------------------
# render / reference / compare / bench


def test_render_missing_sidecar_is_actionable(strand_scene, tmp_path, capsys):
    assert run("render", "--scene", strand_scene, "--out", tmp_path / "o.pfm") == 1
    err = capsys.readouterr().err
    assert "transmittance sidecar not found" in err and "bake-transmittance" in err


def test_render_and_compare(strand_scene, tmp_path, capsys):
    vsh = tmp_path / "single-strand.vsh"
    assert run("bake-transmittance", "--scene", strand_scene, "--res", 8, "--out", vsh) == 0
    a, b = tmp_path / "a.pfm", tmp_path / "b.pfm"
    assert run("render", "--scene", strand_scene, "--out", a, "--out", tmp_path / "a.ppm") == 0
    assert run("render", "--scene", strand_scene, "--out", b) == 0
    assert a.read_bytes() == b.read_bytes()
    meta = json.loads((tmp_path / "a.pfm.json").read_text())
    assert meta["settings"]["bias"] == 0.1 and meta["tool_version"]
    img = formats.read_pfm(a)
    assert img.shape == (15, 16, 3) and img.max() > 0
    capsys.readouterr()
    assert run("compare", a, b, "--out", tmp_path / "m.json") == 0
    m = json.loads(capsys.readouterr().out)
    assert m["rmse"] == 0.0 and m["mae"] == 0.0
    k = tmp_path / "k.pfm"
    assert run("render", "--scene", strand_scene, "--shader", "kajiya", "--out", k) == 0
    capsys.readouterr()
    assert run("compare", a, k) == 0
    assert json.loads(capsys.readouterr().out)["rmse"] > 0


def test_compare_shape_mismatch(tmp_path):
    formats.write_pfm(tmp_path / "a.pfm", np.zeros((2, 2, 3)))
    formats.write_pfm(tmp_path / "b.pfm", np.zeros((3, 2, 3)))
    assert run("compare", tmp_path / "a.pfm", tmp_path / "b.pfm") == 1


def test_config_file_flags_win(strand_scene, tmp_path):
    doc = yaml.safe_load(strand_scene.read_text())
    doc["transmittance"] = "unoccluded"
    strand_scene.write_text(yaml.safe_dump(doc))
    cfg = tmp_path / "cfg.yaml"
    cfg.write_text("render:\n  width: 12\n  height: 10\n  bias: 0.3\n")
    out = tmp_path / "c.pfm"
    assert run("render", "--scene", strand_scene, "--config", cfg, "--out", out) == 0
    assert formats.read_pfm(out).shape == (10, 12, 3)
    assert json.loads((tmp_path / "c.pfm.json").read_text())["settings"]["bias"] == 0.3
    assert run("render", "--scene", strand_scene, "--config", cfg, "--width", 8, "--out", out) == 0
    assert formats.read_pfm(out).shape == (10, 8, 3)


def test_bad_config(strand_scene, tmp_path):
    cfg = tmp_path / "cfg.yaml"
    cfg.write_text("- not a mapping\n")
    assert run("render", "--scene", strand_scene, "--config", cfg, "--out", tmp_path / "x.pfm") == 1


def test_reference_needs_seed_and_is_deterministic(strand_scene, tmp_path):
    assert run("reference", "--scene", strand_scene, "--out", tmp_path / "r.pfm") == 1
    a, b = tmp_path / "a.pfm", tmp_path / "b.pfm"
    for p in (a, b):
        assert run("reference", "--scene", strand_scene, "--spp", 4, "--seed", 3, "--out", p) == 0
    assert a.read_bytes() == b.read_bytes()
    assert json.loads((tmp_path / "a.pfm.json").read_text())["seed"] == 3


def test_bench_emits_ratio(strand_scene, tmp_path, capsys):
    doc = yaml.safe_load(strand_scene.read_text())
    doc["transmittance"] = "unoccluded"
    strand_scene.write_text(yaml.safe_dump(doc))
    out = tmp_path / "bench.json"
    assert run("bench", "--scene", strand_scene, "--repetitions", 1, "--threads", 1, "--out", out) == 0
    assert "ours/kajiya" in capsys.readouterr().out
    rep = json.loads(out.read_text())
    assert rep["shading_ratio"] > 0 and rep["threads"] == 1


def test_trt_report(tmp_path, small_lut, capsys):
    out = tmp_path / "trt.json"
    assert run("trt-report", "--lut", small_lut, "--trt-sigma-a", "0,0.5", "--out", out) == 0
    rep = json.loads(out.read_text())["report"]
    assert [r["sigma_a"] for r in rep] == [0.0, 0.5]
    assert rep[0]["relative_l2_error"] == 0.0


def test_make_scene_unknown(tmp_path):
    assert run("make-scene", "teapot", "--out-dir", tmp_path) == 1


def test_unknown_command_and_version(capsys):
    assert run("frobnicate") == 1
    assert run("--version") == 0
    assert "hairsh" in capsys.readouterr().out


def test_runtime_error_exit_code(strand_scene, tmp_path, monkeypatch):
    def boom(*a, **k):
        raise RuntimeError("out of memory")

    monkeypatch.setattr(cli, "render", boom)
    doc = yaml.safe_load(strand_scene.read_text())
    doc["transmittance"] = "unoccluded"
    strand_scene.write_text(yaml.safe_dump(doc))
    assert run("render", "--scene", strand_scene, "--out", tmp_path / "x.pfm") == 2


def test_console_entry_point(tmp_path):
    r = subprocess.run([sys.executable, "-m", "hairsh", "make-scene", "mat", "--out-dir", str(tmp_path)],
                       capture_output=True, text=True)
    assert r.returncode == 0
    assert (tmp_path / "mat.hair").is_file() and (tmp_path / "sky.pfm").is_file()
