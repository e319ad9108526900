"""Command-line pipeline: scene generation, simulation, reconstruction,
rendering, and experiment sweeps.

Exit codes: 0 success, 1 runtime failure, 2 usage or validation error. Every
command writes byte-identical outputs when rerun with identical inputs and
flags; effective configurations are echoed into JSON sidecars next to the
outputs they describe.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import io
from .baselines import pixelwise_ml, reconstruct_no_scan
from .evaluate import ExperimentSpec, run_experiment
from .forward import ScanConfig, coarsen, load_cube, make_kernel, save_cube, simulate
from .scene import load_scene, load_scene_dir, make_resolution_chart, save_scene
from .solver import SolverConfig, extract_depth_reflectivity, save_volume, spiral_solve

USAGE_ERROR = 2
RUNTIME_ERROR = 1


class _UsageError(Exception):
    pass


def main(argv=None):
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except _UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return USAGE_ERROR
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return RUNTIME_ERROR


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="splidar",
        description="Sub-pixel-scanned single-photon lidar: simulate photon-"
        "count cubes and reconstruct super-resolved depth/reflectivity maps.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("make-scene", help="generate or ingest a ground-truth scene")
    kinds = p.add_subparsers(dest="kind", required=True)
    chart = kinds.add_parser("chart", help="120x128 three-bar resolution target")
    chart.add_argument("-o", "--out", required=True, help="output scene directory")
    chart.add_argument("--d-fg", type=float, default=3.0, help="bar depth (m)")
    chart.add_argument("--d-bg", type=float, default=5.4, help="background depth (m)")
    chart.add_argument("--r-bg", type=float, default=0.0, help="background reflectivity")
    chart.add_argument("--bin-width", type=float, default=0.4e-9)
    chart.add_argument("--t0", type=float, default=0.0)
    chart.set_defaults(func=_cmd_make_scene_chart)
    files = kinds.add_parser("from-files", help="build a scene from image files")
    files.add_argument("-o", "--out", required=True)
    files.add_argument("--reflectivity", required=True, help="graymap or float map")
    files.add_argument("--depth", required=True, help="graymap or float map")
    files.add_argument("--d-min", type=float, default=None)
    files.add_argument("--d-max", type=float, default=None)
    files.add_argument("--bin-width", type=float, default=0.4e-9)
    files.add_argument("--t0", type=float, default=0.0)
    files.set_defaults(func=_cmd_make_scene_files)

    p = sub.add_parser("simulate", help="sample a photon-count cube from a scene")
    p.add_argument("scene_dir")
    p.add_argument("-o", "--out", required=True, help="output cube file (.sph1)")
    p.add_argument("--n", type=int, default=4, help="sub-pixel half-width")
    p.add_argument("--ppp", type=float, default=10.0, help="mean signal photons per pixel")
    p.add_argument("--sbr", type=float, default=0.2, help="signal-to-background ratio")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--bins", type=int, default=None, help="time bins (default 256)")
    p.add_argument("--bin-width", type=float, default=None, help="seconds (default: scene meta)")
    p.add_argument("--jitter", type=float, default=1e-9, help="temporal FWHM (s)")
    p.add_argument("--sbr-window", type=float, default=100e-9)
    p.add_argument("--rep-period", type=float, default=1e-5)
    p.add_argument("--t0", type=float, default=None, help="seconds (default: scene meta)")
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("reconstruct", help="depth/reflectivity maps from a cube")
    p.add_argument("cube")
    p.add_argument("-o", "--out", required=True, help="output directory")
    p.add_argument("--method", required=True, choices=["deconv3d", "ml", "noscan"])
    p.add_argument("--beta", type=float, default=0.1, help="TV weight")
    p.add_argument("--max-iters", type=int, default=200)
    p.add_argument("--rel-tol", type=float, default=1e-4)
    p.add_argument("--tv-iters", type=int, default=20)
    p.add_argument("--window-half", type=int, default=None,
                   help="reflectivity window (bins, default kernel half-width)")
    p.add_argument("--factor", type=int, default=None,
                   help="noscan coarsening factor (default 2n)")
    p.add_argument("--threads", type=int, default=None, help="parallelism hint")
    p.set_defaults(func=_cmd_reconstruct)

    p = sub.add_parser("render", help="render an exported map to a color image")
    p.add_argument("map")
    p.add_argument("-o", "--out", required=True, help="output image (.ppm)")
    p.add_argument("--colormap", choices=["gray", "fire"], default="gray")
    p.add_argument("--depth-range", type=float, nargs=2, default=None,
                   metavar=("LO", "HI"), help="value range (default: valid min/max)")
    p.set_defaults(func=_cmd_render)

    p = sub.add_parser("experiment", help="run a sweep described by a JSON spec")
    p.add_argument("spec", help="experiment spec (JSON)")
    p.add_argument("-o", "--out", required=True, help="output directory")
    p.add_argument("--beta", type=float, default=None, help="override solver beta")
    p.add_argument("--max-iters", type=int, default=None)
    p.add_argument("--threads", type=int, default=None, help="parallelism hint")
    p.set_defaults(func=_cmd_experiment)
    return parser


def _cmd_make_scene_chart(args):
    scene = make_resolution_chart(d_fg=args.d_fg, d_bg=args.d_bg, r_bg=args.r_bg)
    save_scene(scene, args.out, bin_width=args.bin_width, t0=args.t0)
    print(f"wrote {scene.height}x{scene.width} scene to {args.out}")
    return 0


def _cmd_make_scene_files(args):
    scene = load_scene(args.reflectivity, args.depth, d_min=args.d_min, d_max=args.d_max)
    save_scene(scene, args.out, bin_width=args.bin_width, t0=args.t0)
    print(f"wrote {scene.height}x{scene.width} scene to {args.out}")
    return 0


def _cmd_simulate(args):
    scene, meta = load_scene_dir(args.scene_dir)
    bin_width = args.bin_width if args.bin_width is not None else meta["bin_width"]
    t0 = args.t0 if args.t0 is not None else meta.get("t0", 0.0)
    config = ScanConfig(
        n=args.n,
        jitter_fwhm=args.jitter,
        bin_width=bin_width,
        n_bins=args.bins if args.bins is not None else 256,
        rep_period=args.rep_period,
        sbr_window=args.sbr_window,
        t0=t0,
    )
    cube = simulate(scene, config, args.ppp, args.sbr, args.seed)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    save_cube(cube, args.out)
    print(f"wrote {cube.shape[0]}x{cube.shape[1]}x{cube.shape[2]} cube to {args.out}")
    return 0


def _cmd_reconstruct(args):
    cube = load_cube(args.cube)
    kernel = make_kernel(cube.config)
    window_half = (
        args.window_half if args.window_half is not None
        else kernel.temporal.size // 2
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    effective = {
        "method": args.method,
        "cube": Path(args.cube).name,
        "window_half": int(window_half),
    }
    if args.method == "ml":
        maps = pixelwise_ml(
            cube, kernel.temporal, cube.background_per_bin, window_half=window_half
        )
    elif args.method == "noscan":
        factor = args.factor if args.factor is not None else 2 * cube.config.n
        coarse = coarsen(cube, factor)
        maps = reconstruct_no_scan(coarse, factor, window_half=window_half)
        effective["factor"] = int(factor)
    else:
        solver_config = SolverConfig(
            beta=args.beta,
            max_iters=args.max_iters,
            rel_tol=args.rel_tol,
            tv_inner_iters=args.tv_iters,
        )
        volume, report = spiral_solve(
            cube, kernel, cube.background_per_bin, solver_config
        )
        maps = extract_depth_reflectivity(volume, window_half=window_half)
        save_volume(volume, out / "volume.spr1", extra_meta={"beta": args.beta})
        (out / "report.json").write_text(
            json.dumps(report.to_dict(), sort_keys=True, indent=2) + "\n",
            encoding="ascii",
        )
        effective["solver"] = solver_config.to_dict()
    io.write_map(out / "depth.pgm", np.nan_to_num(maps.depth), maps.valid,
                 kind="depth", units="m")
    io.write_map(out / "reflectivity.pgm", maps.reflectivity, maps.valid,
                 kind="reflectivity", units="relative")
    (out / "reconstruct.json").write_text(
        json.dumps(effective, sort_keys=True, indent=2) + "\n", encoding="ascii"
    )
    print(f"wrote maps to {out}")
    return 0


_SENTINEL_RGB = (255, 0, 255)  # invalid pixels render magenta


def _apply_colormap(norm, name):
    v = np.clip(norm, 0.0, 1.0)
    if name == "gray":
        g = np.rint(v * 255).astype(np.uint8)
        return np.stack([g, g, g], axis=2)
    # fire: black -> red -> yellow -> white
    r = np.clip(3.0 * v, 0, 1)
    g = np.clip(3.0 * v - 1.0, 0, 1)
    b = np.clip(3.0 * v - 2.0, 0, 1)
    return np.rint(np.stack([r, g, b], axis=2) * 255).astype(np.uint8)


def _cmd_render(args):
    values, valid, _meta = io.read_map(args.map)
    if args.depth_range is not None:
        lo, hi = args.depth_range
    elif valid.any():
        lo, hi = float(values[valid].min()), float(values[valid].max())
    else:
        lo, hi = 0.0, 1.0
    span = hi - lo
    norm = (values - lo) / span if span > 0 else np.zeros_like(values)
    rgb = _apply_colormap(norm, args.colormap)
    rgb[~valid] = _SENTINEL_RGB
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    io.write_ppm(args.out, rgb)
    print(f"wrote {args.out}")
    return 0


def _cmd_experiment(args):
    try:
        raw = json.loads(Path(args.spec).read_text(encoding="ascii"))
    except FileNotFoundError:
        raise _UsageError(f"spec file not found: {args.spec}")
    except json.JSONDecodeError as exc:
        raise _UsageError(f"spec is not valid JSON: {exc}")
    overrides = {}
    if args.beta is not None:
        overrides["beta"] = args.beta
    if args.max_iters is not None:
        overrides["max_iters"] = args.max_iters
    if overrides:
        raw.setdefault("solver", {}).update(overrides)
    try:
        spec = ExperimentSpec.from_dict(raw)
    except (KeyError, TypeError, ValueError) as exc:
        raise _UsageError(f"invalid experiment spec: {exc}")
    rows = run_experiment(spec, args.out, threads_hint=args.threads)
    failures = [r for r in rows if r["status"] != "ok"]
    print(f"wrote {len(rows)} result rows to {args.out} ({len(failures)} failed)")
    return 0 if not failures else RUNTIME_ERROR


if __name__ == "__main__":
    sys.exit(main())
