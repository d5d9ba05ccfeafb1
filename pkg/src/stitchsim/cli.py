"""Command-line entry point: parse, plan, perceive, simulate, bench, render."""

import argparse
import json
import logging
import math
import os
import sys
import tempfile
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__
from .digital_thread import DEFAULT_MAX_CHORD_ERROR, extract_thread, load_seam_spec, read_dxf
from .errors import DxfParseError, StitchSimError, ValidationError
from .geometry import transform_points
from .evaluation import (SimulationConfig, pool_results, render_run, results_csv, run_benchmark,
                         simulate)
from .perception import (CameraModel, GrayImage, detect_edges, dynamic_thresholds, estimate_pose,
                         needle_edge_distance, oracle_edge_distance, render_garment)
from .trajectory import MotionLimits, SyncParams, plan_seam
from .workcell import NO_SLIP, SlipModel

logger = logging.getLogger("stitchsim")

EXIT_OK, EXIT_VALIDATION, EXIT_RUNTIME = 0, 1, 2
SEAM_KEYS = {"seam_color_index", "seam_allowance_mm", "stitch_length_mm"}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_VALIDATION, f"{self.prog}: error: {message}\n")


def fixture_dir():
    env = os.environ.get("STITCHSIM_FIXTURES")
    if env:
        return Path(env)
    return Path(resources.files("stitchsim") / "fixtures")


def _resolve(path, *bases):
    p = Path(path)
    if p.is_absolute() or p.exists():
        return p
    for base in bases:
        if base is not None and (Path(base) / p).exists():
            return Path(base) / p
    raise ValidationError(f"file not found: {path}")


def _read_json(path):
    try:
        return json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ValidationError(f"file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: invalid JSON: {exc}") from None


def load_run_config(config_path):
    """Split a sidecar config into its seam part and its simulation part."""
    raw = _read_json(config_path) if config_path else {}
    seam = {k: v for k, v in raw.items() if k in SEAM_KEYS}
    sim = SimulationConfig.from_dict({k: v for k, v in raw.items() if k not in SEAM_KEYS})
    return seam, sim


def load_thread_from_args(dxf, config=None, max_chord_error=DEFAULT_MAX_CHORD_ERROR):
    path = _resolve(dxf, fixture_dir())
    seam_cfg, sim = load_run_config(config)
    entities = read_dxf(path)
    spec = load_seam_spec(seam_cfg, entities.header)
    return extract_thread(entities, spec, max_chord_error), entities, sim


def _write_atomic(path, data):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    mode = "wb" if isinstance(data, bytes) else "w"
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, mode) as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise


def _dumps(obj):
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def overhead_camera():
    return CameraModel(480, 480, 1.0, (-240.0, -240.0), (240.0, 240.0))


def _parse_pose(text):
    try:
        x, y, deg = (float(v) for v in text.split(","))
    except ValueError:
        raise ValidationError(f"--pose must be 'x,y,deg', got {text!r}") from None
    return x, y, math.radians(deg)


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_parse(args):
    thread, entities, _ = load_thread_from_args(args.file, args.config, args.max_chord_error)
    if args.emit_json:
        payload = thread.to_dict()
        payload["entity_count"] = len(entities)
        payload["skipped"] = dict(entities.skipped_kinds)
        sys.stdout.write(_dumps(payload))
    else:
        print(f"{len(entities)} entities ({entities.skipped} skipped); "
              f"contour {thread.contour_length:.3f} mm, seam {thread.seam_length:.3f} mm")
    return EXIT_OK


def _plan(thread, sim):
    sync = SyncParams(thread.spec.stitch_length, sim.stitch_rate, sim.needle_rate_max)
    return plan_seam(thread, sync, MotionLimits(sim.v_max, sim.a_max))


def cmd_plan(args):
    thread, _, sim = load_thread_from_args(args.file, args.config)
    traj = _plan(thread, sim)
    lines = ["t,x,y,theta"] + [f"{t:.6f},{x:.6f},{y:.6f},{th:.9f}"
                               for t, x, y, th in traj.to_rows()]
    text = "\n".join(lines) + "\n"
    if args.out:
        _write_atomic(args.out, text)
    if args.emit_csv or not args.out:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_perceive(args):
    thread, _, _ = load_thread_from_args(args.file, args.config)
    pose = _parse_pose(args.pose)
    if args.camera == "needle":
        camera = CameraModel.centered_on_needle()
    else:
        camera = overhead_camera()
    img = render_garment(thread, pose, camera, noise_sd=args.noise, seed=args.seed)
    if args.render:
        _write_atomic(args.render, img.to_pgm())
    out = {}
    if args.measure:
        needle_cam = camera if args.camera == "needle" else CameraModel.centered_on_needle()
        frame = img if args.camera == "needle" else render_garment(
            thread, pose, needle_cam, noise_sd=args.noise, seed=args.seed)
        low, high = dynamic_thresholds([frame])
        edges = detect_edges(frame, low, high) if low < high else []
        hint = transform_points([thread.centroid], pose)[0]
        out["measurement"] = needle_edge_distance(edges, needle_cam,
                                                  garment_interior_hint=hint).to_dict()
        out["oracle"] = oracle_edge_distance(thread, pose).to_dict()
    if args.estimate:
        cam = overhead_camera()
        frame = img if args.camera == "overhead" else render_garment(
            thread, pose, cam, noise_sd=args.noise, seed=args.seed)
        background = GrayImage(np.full((cam.height, cam.width), 60, dtype=np.uint8))
        out["pose_estimate"] = estimate_pose(frame, background, thread, cam).to_dict()
    if out:
        sys.stdout.write(_dumps(out))
    return EXIT_OK


def _load_slip(path):
    if not path:
        return NO_SLIP
    try:
        return SlipModel.from_dict(_read_json(path))
    except TypeError as exc:
        raise ValidationError(f"{path}: {exc}") from None


def cmd_simulate(args):
    thread, _, sim = load_thread_from_args(args.dxf, args.config)
    slip = _load_slip(args.slip)
    overrides = {}
    if args.sensor:
        overrides["sensor"] = args.sensor
    if args.tol is not None:
        overrides["tol"] = args.tol
    if overrides:
        sim = SimulationConfig.from_dict({**sim.__dict__, **overrides})
    run = simulate(thread, args.mode, slip, args.seed, sim)
    run["dxf"] = Path(args.dxf).name
    if args.out:
        _write_atomic(args.out, _dumps(run))
    else:
        sys.stdout.write(_dumps(run))
    if args.events:
        _write_atomic(args.events, "".join(json.dumps(e, sort_keys=True) + "\n"
                                           for e in run["events"]))
    logger.info("E = %.4f mm over %d stitches", run["E_mm"], len(run["stitches"]["points"]))
    return EXIT_OK


def load_bench_config(path):
    cfg = _read_json(path)
    base = Path(path).parent
    fixtures = {}
    for name, spec in cfg.get("fixtures", {}).items():
        dxf = _resolve(spec["dxf"], base, fixture_dir())
        conf = _resolve(spec["config"], base, fixture_dir()) if spec.get("config") else None
        fixtures[name] = (dxf, conf)
    if not fixtures:
        raise ValidationError(f"{path}: no fixtures listed")
    runs = int(cfg.get("runs_per_condition", 10))
    seeds = cfg.get("seeds", list(range(runs)))
    sim = SimulationConfig.from_dict(cfg.get("simulation", {}))
    slip = SlipModel.from_dict(cfg.get("slip", {"mode": "none"}))
    return fixtures, runs, seeds, sim, slip


def cmd_bench(args):
    path = args.config or (fixture_dir() / "bench.json")
    fixtures, runs, seeds, sim, slip = load_bench_config(path)
    threads = {}
    for name, (dxf, conf) in fixtures.items():
        thread, _, _ = load_thread_from_args(dxf, conf)
        threads[name] = thread
    if len(seeds) != runs:
        raise ValidationError(f"{path}: {runs} runs need {runs} seeds, got {len(seeds)}")
    results = run_benchmark(threads, slip, sim, runs, seeds, jobs=args.jobs)
    text = results_csv(results)
    if args.out:
        _write_atomic(args.out, text)
    else:
        sys.stdout.write(text)
    for r in pool_results(results):
        logger.info("%-6s loop, disturbance %-3s: mean E %.3f mm over %d runs",
                    r.loop, r.disturbance, r.mean_E, r.runs)
    if args.plots:
        for name, thread in threads.items():
            for loop in ("open", "closed"):
                run = simulate(thread, loop, slip, seeds[0], sim)
                _write_atomic(Path(args.plots) / f"{name}_{loop}_disturbed.svg",
                              render_run(run, thread))
    return EXIT_OK


def cmd_render(args):
    thread, _, _ = load_thread_from_args(args.dxf, args.config)
    run = _read_json(args.run) if args.run else {}
    svg = render_run(run, thread)
    if args.out:
        _write_atomic(args.out, svg)
    else:
        sys.stdout.write(svg)
    return EXIT_OK


def build_parser():
    p = _Parser(prog="stitchsim", description=__doc__)
    p.add_argument("--version", action="version", version=f"stitchsim {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS,
                        help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    sp = sub.add_parser("parse", parents=[common], help="parse a DXF drawing into contour and seam")
    sp.add_argument("file")
    sp.add_argument("--config")
    sp.add_argument("--emit-json", action="store_true")
    sp.add_argument("--max-chord-error", type=float, default=DEFAULT_MAX_CHORD_ERROR)
    sp.set_defaults(func=cmd_parse)

    sp = sub.add_parser("plan", parents=[common], help="plan the timed seam trajectory")
    sp.add_argument("file")
    sp.add_argument("--config")
    sp.add_argument("--emit-csv", action="store_true")
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_plan)

    sp = sub.add_parser("perceive", parents=[common], help="render a synthetic frame and run perception on it")
    sp.add_argument("file")
    sp.add_argument("--config")
    sp.add_argument("--pose", required=True, help="garment pose x,y,deg in world mm")
    sp.add_argument("--camera", choices=("overhead", "needle"), default="overhead")
    sp.add_argument("--render", help="write the frame as binary PGM")
    sp.add_argument("--measure", action="store_true", help="print the needle edge measurement")
    sp.add_argument("--estimate", action="store_true", help="print the overhead pose estimate")
    sp.add_argument("--noise", type=float, default=0.0)
    sp.add_argument("--seed", type=int, default=0)
    sp.set_defaults(func=cmd_perceive)

    sp = sub.add_parser("simulate", parents=[common], help="run one open- or closed-loop sewing simulation")
    sp.add_argument("--mode", choices=("open", "closed"), default="open")
    sp.add_argument("--dxf", default="straight_panel.dxf")
    sp.add_argument("--config")
    sp.add_argument("--slip")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--sensor", choices=("oracle", "raster"))
    sp.add_argument("--tol", type=float)
    sp.add_argument("--out")
    sp.add_argument("--events", help="write the controller event log as JSON lines")
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("bench", parents=[common], help="open/closed x disturbance benchmark")
    sp.add_argument("--config")
    sp.add_argument("--out")
    sp.add_argument("--plots")
    sp.add_argument("--jobs", type=int, default=1)
    sp.set_defaults(func=cmd_bench)

    sp = sub.add_parser("render", parents=[common], help="plot a run as SVG")
    sp.add_argument("run", nargs="?")
    sp.add_argument("--dxf", required=True)
    sp.add_argument("--config")
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_render)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except (ValidationError, DxfParseError) as exc:
        print(f"stitchsim: error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except FileNotFoundError as exc:
        print(f"stitchsim: error: file not found: {exc.filename}", file=sys.stderr)
        return EXIT_VALIDATION
    except StitchSimError as exc:
        print(f"stitchsim: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as exc:  # noqa: BLE001
        logger.debug("unexpected failure", exc_info=True)
        print(f"stitchsim: runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
