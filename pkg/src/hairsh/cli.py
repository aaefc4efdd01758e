"""Command-line entry point: ``hairsh <command> [options]``.

Options may also come from ``--config FILE`` (YAML). Top-level keys apply
to every command and a mapping under the command's name overrides them;
explicit flags win over both. Exit codes: 0 success, 1 invalid input,
2 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np
import yaml
from scipy.spatial.transform import Rotation

from . import __version__, formats, raycast, scenes
from .farfield import (DEFAULT_BAKE_QUADRATURE, DEFAULT_PHASE_ORDER, DEFAULT_PHASE_SAMPLES,
                       EnvironmentSH, bake_phase_sh_lut, project_envmap,
                       validate_trt_factorization)
from .fiber import bake_azimuthal_lut
from .formats import FormatError
from .reference import trace_reference
from .render import Camera, Light, RenderSettings, Scene, bench_compare, compare_images, render
from .transmittance import DEFAULT_CUBEMAP_RES, VertexTransmittanceSH, bake_transmittance

log = logging.getLogger("hairsh")

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2

DEFAULTS = {
    "beta_r_deg": 10.0, "alpha_r_deg": -10.0, "eta": 1.55, "sigma_a": [0.0],
    "res_theta": 64, "res_phi": 128, "res": DEFAULT_CUBEMAP_RES, "exclusion_radius": None,
    "order": DEFAULT_PHASE_ORDER, "samples": DEFAULT_PHASE_SAMPLES,
    "quadrature": DEFAULT_BAKE_QUADRATURE, "shader": "ours", "spp": 64, "repetitions": 5,
    "trt_sigma_a": [0.0, 0.1, 0.2, 0.5, 1.0],
}


class UsageError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Option resolution


def _opt(args, name):
    v = getattr(args, name, None)
    if v is not None:
        return v
    if name in args._config:
        return args._config[name]
    return DEFAULTS.get(name)


def _load_config(path, command):
    if path is None:
        return {}
    try:
        doc = yaml.safe_load(Path(path).read_text()) or {}
    except (OSError, yaml.YAMLError) as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from None
    if not isinstance(doc, dict):
        raise UsageError(f"config {path} must be a mapping")
    cfg = {k.replace("-", "_"): v for k, v in doc.items() if not isinstance(v, dict)}
    cfg.update({k.replace("-", "_"): v for k, v in (doc.get(command) or {}).items()})
    return cfg


def _material_cfg(args) -> dict:
    sig = _opt(args, "sigma_a")
    sig = [float(s) for s in (sig if isinstance(sig, (list, tuple)) else [sig])]
    return {"beta_r_deg": float(_opt(args, "beta_r_deg")), "alpha_r_deg": float(_opt(args, "alpha_r_deg")),
            "eta": float(_opt(args, "eta")), "sigma_a": sig[0] if len(sig) == 1 else sig}


def _write_json(path, obj):
    text = json.dumps(formats._jsonable(obj), indent=2, sort_keys=True)
    if path:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(text + "\n")
    return text


def _image_meta(path, meta):
    _write_json(str(path) + ".json", {"tool": "hairsh", "tool_version": __version__, **meta})


# ---------------------------------------------------------------------------
# Scene assembly from a scene file


def _require_file(path, what, hint=""):
    if path is None:
        raise UsageError(f"scene file does not name a {what}{hint}")
    if not Path(path).is_file():
        raise UsageError(f"{what} not found: {path}{hint}")
    return path


def _vec3(v, what):
    a = np.asarray(v, dtype=np.float64).reshape(-1)
    if a.size == 1:
        a = np.repeat(a, 3)
    if a.size != 3:
        raise UsageError(f"{what} needs 3 values")
    return a


def _lights(doc):
    out = []
    for i, l in enumerate(doc.get("lights") or []):
        kind = l.get("type", "directional")
        if kind == "directional":
            out.append(Light.directional(_vec3(l["direction"], f"light {i} direction"),
                                         _vec3(l.get("radiance", 1.0), f"light {i} radiance")))
        elif kind == "point":
            out.append(Light.point(_vec3(l["position"], f"light {i} position"),
                                   _vec3(l.get("intensity", l.get("radiance", 1.0)), f"light {i} intensity")))
        else:
            raise UsageError(f"light {i}: unknown type {kind!r}")
    return out


def _environment(doc):
    env = doc.get("environment")
    if not env:
        return None
    order = int(env.get("order", 2))
    if env.get("builtin") == "sky":
        image = scenes.sky()
    elif "path" in env:
        image = formats.read_image(_require_file(env["path"], "environment image"))
    else:
        raise UsageError("environment needs 'path' or 'builtin: sky'")
    e = project_envmap(image, order)
    scale = env.get("scale", 1.0)
    if scale != 1.0:
        e = EnvironmentSH(e.coeffs * float(scale), formats.EnvironmentMap(e.source.image * float(scale)))
    return e


def _transform(doc):
    tr = doc.get("transform") or {}
    R = np.eye(3)
    if "axis" in tr or "angle_deg" in tr:
        axis = _vec3(tr.get("axis", [0, 0, 1]), "transform axis")
        R = Rotation.from_rotvec(axis / np.linalg.norm(axis) * math.radians(float(tr.get("angle_deg", 0.0)))).as_matrix()
    t = _vec3(tr.get("translation", [0.0, 0.0, 0.0]), "transform translation")
    return R, t


def _camera(doc, args):
    c = doc.get("camera") or {}
    try:
        cam = Camera(position=_vec3(c.get("position", [0, -4.5, 0]), "camera position"),
                     look_at=_vec3(c.get("look_at", [0, 0, 0]), "camera look_at"),
                     up=_vec3(c.get("up", [0, 0, 1]), "camera up"),
                     fov_y=math.radians(float(c.get("fov_deg", 30.0))),
                     width=int(_opt(args, "width") or c.get("width", 128)),
                     height=int(_opt(args, "height") or c.get("height", 128)))
    except ValueError as exc:
        raise UsageError(f"camera: {exc}") from None
    if cam.width < 1 or cam.height < 1:
        raise UsageError("image size must be positive")
    return cam


def _settings(doc, args):
    s = dict(doc.get("settings") or {})
    for key in ("bias", "max_hits", "supersample", "backend"):
        v = _opt(args, key)
        if v is not None:
            s[key] = v
    s["shader"] = _opt(args, "shader")
    s = {k: (tuple(v) if isinstance(v, list) else v) for k, v in s.items()}
    try:
        settings = RenderSettings(**s)
    except TypeError as exc:
        raise UsageError(f"settings: {exc}") from None
    if not 0.0 <= settings.bias < 1.0:
        raise UsageError("bias must be in [0, 1)")
    if settings.max_hits < 1 or settings.supersample < 1:
        raise UsageError("max_hits and supersample must be >= 1")
    if settings.backend not in ("compiled", "numpy"):
        raise UsageError(f"unknown backend {settings.backend!r}")
    return settings


def _geometry(doc):
    path = _require_file(doc.get("geometry"), "hair geometry file")
    return formats.read_hair(path, doc.get("alpha"))


def load_scene(path, args, need_transmittance: bool = True):
    doc = formats.load_scene_file(_require_file(path, "scene file"))
    geom = _geometry(doc)
    material = formats.material_from_config(doc.get("material"))
    if doc.get("lut"):
        lut = formats.load_lut(_require_file(doc["lut"], "azimuthal LUT"))
    else:
        lut = bake_azimuthal_lut(material)
    env = _environment(doc)
    phase = None
    if env is not None:
        phase = (formats.load_phase(_require_file(doc["phase_sh"], "phase SH table"))
                 if doc.get("phase_sh") else bake_phase_sh_lut(material, lut))
    V = None
    tpath = doc.get("transmittance")
    if need_transmittance and tpath != "unoccluded":
        hint = f" (run: hairsh bake-transmittance --scene {path} --out <file>, then set 'transmittance')"
        V = formats.load_vertex_sh(_require_file(tpath, "transmittance sidecar", hint))
        if V.n_vertices != geom.n_vertices:
            raise UsageError(f"transmittance sidecar has {V.n_vertices} vertices but the geometry has "
                             f"{geom.n_vertices}; re-run bake-transmittance")
    R, t = _transform(doc)
    scene = Scene(geom, material, lut, V, _lights(doc), env, phase, R, t, doc.get("exclusion_radius"))
    return scene, doc


# ---------------------------------------------------------------------------
# Commands


def cmd_bake_lut(args):
    cfg = _material_cfg(args)
    material = formats.material_from_config(cfg)
    rt, rp = int(_opt(args, "res_theta")), int(_opt(args, "res_phi"))
    if rt < 16 or rp < 16:
        raise UsageError("LUT resolutions must be >= 16")
    lut = bake_azimuthal_lut(material, rt, rp)
    formats.save_lut(args.out, lut, {"command": "bake-lut", "material_config": cfg,
                                     "res_theta": rt, "res_phi": rp})
    if args.pfm_prefix:
        formats.export_lut_pfm(lut, args.pfm_prefix)
    print(f"wrote {args.out}: g = {', '.join(f'{g:.4f}' for g in material.g)} (R, TT, TRT)")


def cmd_bake_transmittance(args):
    if args.scene:
        doc = formats.load_scene_file(_require_file(args.scene, "scene file"))
        geom = _geometry(doc)
        excl = doc.get("exclusion_radius")
    elif args.geometry:
        geom = formats.read_hair(_require_file(args.geometry, "hair geometry file"))
        excl = None
    else:
        raise UsageError("give --scene or --geometry")
    if _opt(args, "exclusion_radius") is not None:
        excl = float(_opt(args, "exclusion_radius"))
    res = int(_opt(args, "res"))
    if res < 8:
        raise UsageError("cubemap resolution must be >= 8")
    V = bake_transmittance(geom, res, excl)
    formats.save_vertex_sh(args.out, V, {"command": "bake-transmittance", "source": args.scene or args.geometry})
    q = np.percentile(V.errors, [50, 90, 100]) if len(V.errors) else [0, 0, 0]
    print(f"wrote {args.out}: {V.n_vertices} vertices, SH error median {q[0]:.4f} "
          f"p90 {q[1]:.4f} max {q[2]:.4f}")


def cmd_bake_phase_sh(args):
    cfg = _material_cfg(args)
    material = formats.material_from_config(cfg)
    lut = formats.load_lut(_require_file(args.lut, "azimuthal LUT")) if args.lut else bake_azimuthal_lut(material)
    if args.lut and "material" in lut.meta:
        material = material.__class__.from_dict(lut.meta["material"])
    order, samples = int(_opt(args, "order")), int(_opt(args, "samples"))
    quad = int(_opt(args, "quadrature"))
    if not 0 <= order <= 6 or samples < 2 or quad < 8:
        raise UsageError("need 0 <= order <= 6, samples >= 2, quadrature >= 8")
    p = bake_phase_sh_lut(material, lut, order, samples, quad)
    params = {"command": "bake-phase-sh", "lut": args.lut}
    formats.save_phase(args.out, p, params)
    msg = f"wrote {args.out}: {samples} samples, order {order}"
    if args.quantized_out:
        formats.save_phase(args.quantized_out, p, params, quantized=True)
        back = formats.load_phase(args.quantized_out)
        err = float(np.abs(back.coeffs - p.coeffs).max())
        msg += f"; 8-bit copy {args.quantized_out} (max round-trip error {err:.3e})"
    print(msg)


def _render_common(args):
    scene, doc = load_scene(args.scene, args, need_transmittance=(_opt(args, "shader") == "ours"))
    return scene, _camera(doc, args), _settings(doc, args)


def cmd_render(args):
    scene, cam, settings = _render_common(args)
    fb = render(scene, cam, settings)
    for out in args.out:
        formats.write_image(out, fb.rgb)
        _image_meta(out, {"command": "render", "scene": args.scene, "settings": settings.to_dict(),
                          "material": scene.material.to_dict(), "width": cam.width, "height": cam.height})
    print(f"rendered {cam.width}x{cam.height} ({settings.shader}, bias {settings.bias}) -> {', '.join(args.out)}")


def cmd_reference(args):
    scene, doc = load_scene(args.scene, args, need_transmittance=False)
    cam = _camera(doc, args)
    settings = _settings(doc, args)
    spp = int(_opt(args, "spp"))
    if spp < 1:
        raise UsageError("spp must be >= 1")
    fb = trace_reference(scene, cam, spp, args.seed, settings)
    for out in args.out:
        formats.write_image(out, fb.rgb)
        _image_meta(out, {"command": "reference", "scene": args.scene, "spp": spp, "seed": args.seed,
                          "material": scene.material.to_dict(), "width": cam.width, "height": cam.height})
    print(f"reference {cam.width}x{cam.height}, {spp} spp, seed {args.seed} -> {', '.join(args.out)}")


def cmd_compare(args):
    a = formats.read_image(_require_file(args.a, "image"))
    b = formats.read_image(_require_file(args.b, "image"))
    if a.shape != b.shape:
        raise UsageError(f"image shapes differ: {a.shape} vs {b.shape}")
    m = compare_images(a, b)
    print(_write_json(args.out, {"tool_version": __version__, "a": args.a, "b": args.b, **m}))


def cmd_bench(args):
    scene, cam, settings = _render_common(args)
    reps = int(_opt(args, "repetitions"))
    if reps < 1:
        raise UsageError("repetitions must be >= 1")
    r = bench_compare(scene, cam, reps, settings, _opt(args, "threads"))
    rows = [("shader", "total ms", "shading ms", "visibility ms")]
    for k in ("kajiya", "ours"):
        rows.append((k, f"{r[k]['total_ms']:.2f}", f"{r[k]['shading_ms']:.2f}", f"{r[k]['visibility_ms']:.2f}"))
    rows.append(("ours/kajiya", f"{r['total_ratio']:.2f}", f"{r['shading_ratio']:.2f}", ""))
    print("\n".join(f"{a:<12} {b:>10} {c:>11} {d:>14}" for a, b, c, d in rows))
    if args.out:
        _write_json(args.out, {"tool_version": __version__, "scene": args.scene, "repetitions": reps,
                               "threads": _opt(args, "threads"), "settings": settings.to_dict(), **r})


def cmd_trt_report(args):
    cfg = _material_cfg(args)
    material = formats.material_from_config(cfg)
    lut = formats.load_lut(_require_file(args.lut, "azimuthal LUT")) if args.lut else bake_azimuthal_lut(material)
    sig = [float(s) for s in _opt(args, "trt_sigma_a")]
    rep = validate_trt_factorization(material, lut, sig, int(_opt(args, "order")))
    print(f"{'sigma_a':>8} {'rel L2 error':>13} {'max sample':>11}")
    for row in rep:
        print(f"{row['sigma_a']:>8.3f} {row['relative_l2_error']:>13.6f} {row['max_sample_error']:>11.6f}")
    if args.out:
        _write_json(args.out, {"tool_version": __version__, "material": material.to_dict(), "report": rep})


def cmd_make_scene(args):
    name = args.name
    if name not in scenes.SCENES:
        raise UsageError(f"unknown scene {name!r}; choose from {sorted(scenes.SCENES)}")
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    formats.write_hair(out / f"{name}.hair", scenes.SCENES[name]())
    formats.write_pfm(out / "sky.pfm", scenes.sky())
    doc = {
        "geometry": f"{name}.hair",
        "transmittance": f"{name}.vsh",
        "material": {"beta_r_deg": 10.0, "alpha_r_deg": -10.0, "eta": 1.55, "sigma_a": [0.3, 0.5, 0.9]},
        "lights": [{"type": "directional", "direction": [0.5, -0.8, 0.6], "radiance": [2.0, 2.0, 2.0]}],
        "environment": {"path": "sky.pfm", "order": 2},
        "camera": {"position": [0.0, -4.5, 0.0], "look_at": [0.0, 0.0, 0.0], "up": [0.0, 0.0, 1.0],
                   "fov_deg": 30.0, "width": 128, "height": 128},
        "settings": {"bias": 0.1, "max_hits": 32, "background": [0.0, 0.0, 0.0]},
    }
    (out / f"{name}.yaml").write_text(yaml.safe_dump(doc, sort_keys=False))
    print(f"wrote {out / (name + '.yaml')}")


# ---------------------------------------------------------------------------
# Parser


def _floats(s):
    return [float(v) for v in str(s).replace(",", " ").split()]


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hairsh", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"hairsh {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML file with option defaults")
    common.add_argument("--threads", type=int, help="cap on worker threads")
    common.add_argument("-v", "--verbose", action="store_true")
    material = argparse.ArgumentParser(add_help=False)
    material.add_argument("--beta-r-deg", type=float)
    material.add_argument("--alpha-r-deg", type=float)
    material.add_argument("--eta", type=float)
    material.add_argument("--sigma-a", type=_floats, help="one or three values")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("bake-lut", parents=[common, material], help="bake the azimuthal LUT")
    s.add_argument("--res-theta", type=int)
    s.add_argument("--res-phi", type=int)
    s.add_argument("--out", required=True)
    s.add_argument("--pfm-prefix", help="also write one PFM per mode")
    s.set_defaults(func=cmd_bake_lut)

    s = sub.add_parser("bake-transmittance", parents=[common], help="bake per-vertex SH transmittance")
    s.add_argument("--scene")
    s.add_argument("--geometry")
    s.add_argument("--res", type=int, help="cubemap face resolution")
    s.add_argument("--exclusion-radius", type=float, help="own-strand exclusion, scene units")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_bake_transmittance)

    s = sub.add_parser("bake-phase-sh", parents=[common, material], help="bake the phase SH table")
    s.add_argument("--lut")
    s.add_argument("--order", type=int)
    s.add_argument("--samples", type=int)
    s.add_argument("--quadrature", type=int)
    s.add_argument("--out", required=True)
    s.add_argument("--quantized-out", help="also write the 8-bit table here")
    s.set_defaults(func=cmd_bake_phase_sh)

    view = argparse.ArgumentParser(add_help=False)
    view.add_argument("--scene", required=True)
    view.add_argument("--width", type=int)
    view.add_argument("--height", type=int)
    view.add_argument("--bias", type=float)
    view.add_argument("--max-hits", type=int)
    view.add_argument("--supersample", type=int)
    view.add_argument("--backend", choices=("compiled", "numpy"),
                      help="shading kernels: compiled per-hit loops (default) or vectorized numpy")

    s = sub.add_parser("render", parents=[common, view], help="render with the SH shader or Kajiya-Kay")
    s.add_argument("--shader", choices=("ours", "kajiya"))
    s.add_argument("--out", required=True, action="append", help=".pfm or .ppm (repeatable)")
    s.set_defaults(func=cmd_render)

    s = sub.add_parser("reference", parents=[common, view], help="path-traced single-scattering reference")
    s.add_argument("--spp", type=int)
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--out", required=True, action="append")
    s.set_defaults(func=cmd_reference, shader="ours")

    s = sub.add_parser("compare", parents=[common], help="RMSE/MAE between two images")
    s.add_argument("a")
    s.add_argument("b")
    s.add_argument("--out", help="write metrics JSON here")
    s.set_defaults(func=cmd_compare)

    s = sub.add_parser("bench", parents=[common, view], help="time ours against Kajiya-Kay")
    s.add_argument("--repetitions", type=int)
    s.add_argument("--out", help="write the timing report JSON here")
    s.set_defaults(func=cmd_bench, shader="ours")

    s = sub.add_parser("trt-report", parents=[common, material], help="TRT absorption factorization errors")
    s.add_argument("--lut")
    s.add_argument("--order", type=int)
    s.add_argument("--trt-sigma-a", type=_floats, help="absorption values to test")
    s.add_argument("--out")
    s.set_defaults(func=cmd_trt_report)

    s = sub.add_parser("make-scene", parents=[common], help="write a procedural test scene")
    s.add_argument("name", help=", ".join(sorted(scenes.SCENES)))
    s.add_argument("--out-dir", required=True)
    s.set_defaults(func=cmd_make_scene)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_INVALID
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args._config = _load_config(args.config, args.command)
        raycast.set_threads(_opt(args, "threads"))
        args.func(args)
    except (UsageError, FormatError, ValueError, KeyError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"hairsh {args.command}: error: {msg}", file=sys.stderr)
        return EXIT_INVALID
    except Exception as exc:  # noqa: BLE001
        log.debug("runtime failure", exc_info=True)
        print(f"hairsh {args.command}: runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
