"""Command-line entry points: pair analysis, closed-loop simulation,
frame-directory replay and the waypoint-PID baseline.

Exit codes: 0 success, 1 usage/config error, 2 runtime failure.
"""

import argparse
import math
import os
import sys
from dataclasses import fields

from . import egomotion, features, flow, imgproc, obstacle, pipeline, \
    potential, scene, svgplot, trace, vehicle
from .errors import (AlignmentError, FlownavError, InsufficientFlowError,
                     DegenerateGeometryError, InvalidParameterError,
                     NoDirectionError)

USAGE_EXIT = 1
RUNTIME_EXIT = 2


class _Parser(argparse.ArgumentParser):
    """argparse exits with 2 on usage errors; the CLI contract says 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(USAGE_EXIT)


def _coerce(raw, current):
    if isinstance(current, bool):
        low = raw.strip().lower()
        if low in ("true", "1", "yes", "on"):
            return True
        if low in ("false", "0", "no", "off"):
            return False
        raise InvalidParameterError(f"expected a boolean, got {raw!r}")
    if isinstance(current, int):
        return int(raw, 0)
    if isinstance(current, float):
        return float(raw)
    return raw.strip()


def parse_config_text(text):
    """Flat `key = value` lines with `#` comments; returns {key: raw value}."""
    entries = {}
    for ln, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InvalidParameterError(f"config line {ln}: expected key = value")
        key, raw = (part.strip() for part in line.split("=", 1))
        if not key:
            raise InvalidParameterError(f"config line {ln}: empty key")
        entries[key] = raw
    return entries


def apply_config(config, entries):
    """Apply flat config entries onto a PipelineConfig.

    Dotted keys route by namespace: `vehicle.*` to the vehicle parameters,
    `road.*` to the road-field parameters; any other namespace prefix is
    cosmetic grouping and only the last segment matters (`lk.window` sets
    `window`).
    """
    vehicle_keys = {f.name for f in fields(vehicle.VehicleParams)}
    road_keys = {f.name for f in fields(potential.RoadFieldParams)}
    scalar_keys = set(pipeline.PipelineConfig.scalar_keys())
    for key, raw in entries.items():
        ns, _, leaf = key.rpartition(".")
        if ns == "vehicle":
            target, name = config.vehicle_params, leaf
            valid = vehicle_keys
        elif ns == "road":
            target, name = config.road_field, leaf
            valid = road_keys
        else:
            target, name = config, leaf
            valid = scalar_keys
        if name not in valid:
            raise InvalidParameterError(f"unknown config key {key!r}")
        setattr(target, name, _coerce(raw, getattr(target, name)))
    return config


def build_config(args):
    config = pipeline.PipelineConfig()
    if getattr(args, "config", None):
        with open(args.config) as fh:
            apply_config(config, parse_config_text(fh.read()))
    if getattr(args, "seed", None) is not None:
        config.seed = args.seed
    if getattr(args, "weather", None):
        config.weather = args.weather
    if getattr(args, "course", None):
        config.course = args.course
    if getattr(args, "ttc_raw", False):
        config.raw_ttc = True
    if getattr(args, "pure_sign", False):
        config.pure_sign = True
    config.validate()
    return config


def _outdir(args):
    out = getattr(args, "out", None) or "."
    os.makedirs(out, exist_ok=True)
    return out


def _write(path, text):
    with open(path, "w") as fh:
        fh.write(text)


def cmd_flow(args):
    config = build_config(args)
    prev = imgproc.read_pgm(args.prev)
    next_ = imgproc.read_pgm(args.next)
    pts = features.detect_corners(prev, max_corners=config.max_corners,
                                  quality_level=config.quality_level,
                                  min_distance=config.min_distance)
    ff = flow.track(prev, next_, pts, window=config.window,
                    epsilon=config.epsilon, max_iters=config.max_iters,
                    levels=config.levels)
    foe = None
    try:
        foe = egomotion.estimate_foe(ff, min_speed=config.min_flow_speed)
    except (InsufficientFlowError, DegenerateGeometryError):
        pass
    out = _outdir(args)
    lines = ["x,y,vx,vy,valid"]
    for v in ff.vectors:
        lines.append(f"{v.origin.x:.9g},{v.origin.y:.9g},"
                     f"{v.vx:.9g},{v.vy:.9g},{int(v.valid)}")
    _write(os.path.join(out, "flow.csv"), "\n".join(lines) + "\n")
    _write(os.path.join(out, "flow.svg"),
           svgplot.flow_svg(ff, prev.width, prev.height, foe=foe))
    n_valid = sum(1 for v in ff.vectors if v.valid)
    print(f"tracked {n_valid}/{len(ff.vectors)} points", end="")
    if foe is not None:
        print(f", FOE ({foe.x_foe:.1f}, {foe.y_foe:.1f})", end="")
    print()
    return 0


def _report_run(rows, summary, world, out):
    trace.write_trace(rows, os.path.join(out, "trace.csv"))
    _write(os.path.join(out, "path.svg"), svgplot.path_svg(rows, world))
    _write(os.path.join(out, "summary.txt"), trace.format_summary(summary))
    sys.stdout.write(trace.format_summary(summary))


def cmd_simulate(args):
    config = build_config(args)
    rows, summary, world = pipeline.run_simulation(config)
    _report_run(rows, summary, world, _outdir(args))
    return 0


def cmd_baseline(args):
    config = build_config(args)
    rows, summary, world = pipeline.run_baseline(config)
    _report_run(rows, summary, world, _outdir(args))
    return 0


def read_controls(path):
    """Recorded controls CSV with columns t,a,delta (header optional)."""
    rows = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split(",")
            if parts[0].strip().lower() == "t":
                continue
            if len(parts) != 3:
                raise AlignmentError(f"controls row needs t,a,delta: {line!r}")
            rows.append(tuple(float(p) for p in parts))
    return rows


def cmd_replay(args):
    config = build_config(args)
    frames = sorted(f for f in os.listdir(args.frames)
                    if f.lower().endswith(".pgm"))
    if len(frames) < 2:
        raise AlignmentError(f"need at least 2 frames, found {len(frames)}")
    controls = read_controls(args.controls)
    if len(controls) != len(frames):
        raise AlignmentError(f"{len(frames)} frames but {len(controls)} "
                             "control rows; counts must match")

    cam = scene.CameraModel()
    params = config.vehicle_params
    road_params = config.road_field
    vision = pipeline.VisionState(config, cam)
    dt = controls[1][0] - controls[0][0] if len(controls) > 1 else config.dt
    if dt <= 0:
        raise AlignmentError("control timestamps must increase")

    # teacher-forced vehicle history: heading and speed are dead-reckoned
    # from the recorded controls, so each prediction sees the same state the
    # recorded controller saw (up to the straight-lane-center assumption)
    psi = 0.0
    v = params.v_d
    preds = []
    prev_delta = controls[0][2]
    for i, fname in enumerate(frames):
        img = imgproc.read_pgm(os.path.join(args.frames, fname))
        dpsi = 0.0
        if i > 0:
            beta = vehicle.slip_angle(prev_delta, params)
            dpsi = v * math.cos(beta) * math.tan(prev_delta) / params.wheelbase * dt
        vision.update(img, pair_dt=dt, dpsi=dpsi)
        if i == 0:
            continue
        t_rec, a_rec, delta_rec = controls[i]
        psi = vehicle.wrap_angle(psi + dpsi)
        v = max(0.0, v + a_rec * dt)

        curvature = potential.classify_curvature(vision.foe, cam.width,
                                                 config.center_band)
        f_road = potential.road_force((config.lookahead,
                                       road_params.valley_offset),
                                      curvature, road_params)
        f_att = potential.ForceVector(math.cos(psi), math.sin(psi), "global")
        f_tot = potential.total_force(f_att, vision.obstacle_force, f_road,
                                      lambda_x=config.lambda_x,
                                      lambda_y=config.lambda_y,
                                      psi=psi, k_img=config.k_img)
        try:
            psi_d = vehicle.desired_heading(f_tot)
        except NoDirectionError:
            psi_d = psi
        beta = vehicle.slip_angle(delta_rec, params)
        psi_dot = v * math.cos(beta) * math.tan(delta_rec) / params.wheelbase
        s_r = vehicle.rotational_manifold(psi, psi_d, psi_dot, 0.0, params.c_r)
        u_pred = vehicle.steer_command(s_r, params)
        a_pred = vehicle.longitudinal_command(v, params.v_d, params)
        delta_pred = prev_delta + u_pred * dt
        preds.append((t_rec, a_pred, a_rec, delta_pred, delta_rec,
                      u_pred, (delta_rec - prev_delta) / dt))
        prev_delta = delta_rec

    out = _outdir(args)
    lines = ["t,a_pred,a_rec,delta_pred,delta_rec"]
    for t_rec, a_p, a_r, d_p, d_r, _, _ in preds:
        lines.append(f"{t_rec:.9g},{a_p:.9g},{a_r:.9g},{d_p:.9g},{d_r:.9g}")
    _write(os.path.join(out, "replay.csv"), "\n".join(lines) + "\n")

    eps = 1e-4
    agree = [1.0 if (abs(u) < eps and abs(r) < eps) or u * r > 0 else 0.0
             for *_rest, u, r in preds]
    steer_agree = 100.0 * sum(agree) / len(agree)
    mae_a = sum(abs(a_p - a_r) for _, a_p, a_r, *_ in preds) / len(preds)
    mae_d = sum(abs(d_p - d_r) for _, _, _, d_p, d_r, _, _ in preds) / len(preds)
    report = (f"pairs = {len(preds)}\n"
              f"steer_sign_agreement_pct = {steer_agree:.9g}\n"
              f"mae_accel = {mae_a:.9g}\n"
              f"mae_delta = {mae_d:.9g}\n")
    _write(os.path.join(out, "replay_summary.txt"), report)
    sys.stdout.write(report)
    return 0


def make_parser():
    parser = _Parser(prog="flownav",
                     description="monocular flow-based navigation toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="flat key = value config file")
        p.add_argument("--seed", type=int, help="texture / scenario seed")
        p.add_argument("--out", help="output directory (default: .)")
        p.add_argument("--weather", choices=("clear", "rain"))
        p.add_argument("--course", help="built-in course name")
        p.add_argument("--ttc-raw", action="store_true", dest="ttc_raw",
                       help="sum raw TTC instead of inverse TTC")
        p.add_argument("--pure-sign", action="store_true", dest="pure_sign",
                       help="discontinuous switching law (no boundary layer)")

    p = sub.add_parser("flow", help="track one frame pair")
    p.add_argument("prev")
    p.add_argument("next")
    common(p)
    p.set_defaults(func=cmd_flow)

    p = sub.add_parser("simulate", help="vision-in-the-loop run")
    common(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("baseline", help="waypoint pure-pursuit run")
    common(p)
    p.set_defaults(func=cmd_baseline)

    p = sub.add_parser("replay", help="predict controls over recorded frames")
    p.add_argument("frames", help="directory of PGM frames (lexicographic order)")
    p.add_argument("controls", help="recorded t,a,delta CSV")
    common(p)
    p.set_defaults(func=cmd_replay)

    return parser


def main(argv=None):
    parser = make_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if exc.code is not None else 0
    try:
        return args.func(args)
    except (InvalidParameterError,) as exc:
        print(f"flownav: {exc}", file=sys.stderr)
        return USAGE_EXIT
    except (FlownavError, OSError) as exc:
        print(f"flownav: {exc}", file=sys.stderr)
        return RUNTIME_EXIT


if __name__ == "__main__":
    sys.exit(main())
