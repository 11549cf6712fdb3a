"""Command-line interface: ``rectidic <subcommand> ...``.

Exit codes: 0 success, 2 invalid arguments or input, 3 estimation or DIC failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .dic import DisplacementField, RoiMask, SubsetParams
from .errors import ImageIOError, InvalidParameter, RectiDICError
from .error_model import (TARGETS, CameraGeometry, ObjectMotion, evaluate, parse_axis, sweep,
                          write_sweep_csv)
from .homography import Homography, RansacConfig
from .image import InterpolationKind, load_image, save_image
from .metrics import error_stats
from .pipeline import (REPORT_COLUMNS, PipelineConfig, build_roi, cmd_calibrate, cmd_report, cmd_run,
                       correlate_frame)
from .rectify import rectify_image
from .synthesis import (EulerAngles, RotationFieldParams, VirtualCamera, add_noise, generate_deformed,
                        rotation_displacement, simulate_camera_rotation, speckle_image)

log = logging.getLogger("rectidic")

EXIT_OK, EXIT_USAGE, EXIT_FAILURE = 0, 2, 3


def _point(text: str) -> tuple[int, int]:
    try:
        x, y = (int(v) for v in text.split(","))
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected x,y integers, got {text!r}") from exc
    return x, y


def _floats(text: str) -> list[float]:
    try:
        if ":" in text:
            a, b, s = (float(v) for v in text.split(":"))
            n = int(math.floor((b - a) / s + 1e-9)) + 1
            return [a + s * i for i in range(n)]
        return [float(v) for v in text.split(",")]
    except (ValueError, ZeroDivisionError) as exc:
        raise argparse.ArgumentTypeError(f"expected a list a,b,c or a range a:b:step, got {text!r}") from exc


def _interp(text: str) -> InterpolationKind:
    try:
        return InterpolationKind[text.upper()]
    except KeyError as exc:
        raise argparse.ArgumentTypeError("interpolation must be bilinear or bicubic") from exc


def _subset_args(p):
    p.add_argument("--subset", type=int, default=23, help="odd subset side length in pixels")
    p.add_argument("--spacing", type=int, default=5)
    p.add_argument("--search-radius", type=int, default=80, help="seed search window half-size")
    p.add_argument("--max-iterations", type=int, default=50)
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--min-zncc", type=float, default=0.5)
    p.add_argument("--dic-interp", type=_interp, default=InterpolationKind.BICUBIC)


def _ransac_args(p):
    p.add_argument("--delta", type=float, default=0.55, help="descriptor ratio-test threshold")
    p.add_argument("--epsilon", type=float, default=5.0, help="RANSAC inlier threshold in pixels")
    p.add_argument("--iterations", type=int, default=2000)
    p.add_argument("--seed", type=int, default=0, help="random seed")


def _subset_params(a) -> SubsetParams:
    return SubsetParams.from_size(a.subset, spacing=a.spacing, max_iterations=a.max_iterations,
                                  convergence_tol=a.tol, min_zncc=a.min_zncc,
                                  interpolation=a.dic_interp)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="rectidic", description="SIFT-aided rectified 2D-DIC")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    ap.add_argument("--config", type=Path, help="JSON file of option defaults; flags win")
    ap.add_argument("-v", "--verbose", action="count", default=0)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("calibrate", help="estimate the rectifying homography")
    p.add_argument("--calib", type=Path, nargs="+", required=True)
    p.add_argument("--ref", type=Path, required=True)
    p.add_argument("--out", type=Path, default=Path("h.json"))
    _ransac_args(p)

    p = sub.add_parser("rectify", help="warp an image with a homography")
    p.add_argument("--homography", type=Path, required=True)
    p.add_argument("--in", dest="inp", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--fill", type=float, default=0.0)
    p.add_argument("--interp", type=_interp, default=InterpolationKind.BILINEAR)
    p.add_argument("--bits", type=int, choices=(8, 16), default=16)

    p = sub.add_parser("dic", help="correlate one image pair")
    p.add_argument("--ref", type=Path, required=True)
    p.add_argument("--def", dest="deformed", type=Path, required=True)
    p.add_argument("--roi", type=Path, help="mask image, nonzero inside")
    p.add_argument("--seed", type=_point, help="seed point x,y")
    p.add_argument("--out", type=Path, default=Path("field.csv"))
    _subset_args(p)

    p = sub.add_parser("run", help="rectify and correlate a sequence")
    p.add_argument("--ref", type=Path, required=True)
    p.add_argument("--def", dest="deformed", type=Path, nargs="+", required=True)
    p.add_argument("--calib", type=Path, nargs="*", default=[],
                   help="calibrate first when given")
    p.add_argument("--homography", type=Path)
    p.add_argument("--no-rectify", action="store_true")
    p.add_argument("--roi", type=Path)
    p.add_argument("--seed-point", type=_point)
    p.add_argument("--out-dir", type=Path, default=Path("out"))
    p.add_argument("--threads", type=int)
    _subset_args(p)
    _ransac_args(p)

    p = sub.add_parser("synth", help="synthetic images")
    ss = p.add_subparsers(dest="synth_command", required=True)
    q = ss.add_parser("speckle")
    q.add_argument("--width", type=int, default=512)
    q.add_argument("--height", type=int, default=512)
    q.add_argument("--seed", type=int, default=0)
    q.add_argument("--density", type=float, default=0.05)
    q.add_argument("--out", type=Path, required=True)
    q.add_argument("--bits", type=int, choices=(8, 16), default=16)
    q = ss.add_parser("rotate-field")
    q.add_argument("--in", dest="inp", type=Path, required=True)
    q.add_argument("--theta-deg", type=float, required=True)
    q.add_argument("--x0", type=float, required=True)
    q.add_argument("--out", type=Path, required=True)
    q.add_argument("--noise", type=float, default=0.0, help="additive Gaussian noise std")
    q.add_argument("--seed", type=int, default=0)
    q.add_argument("--truth-csv", type=Path, help="also write the analytic field on a grid")
    q.add_argument("--spacing", type=int, default=5)
    q.add_argument("--bits", type=int, choices=(8, 16), default=16)
    q = ss.add_parser("camera")
    q.add_argument("--in", dest="inp", type=Path, required=True)
    q.add_argument("--alpha-deg", type=float, default=0.0)
    q.add_argument("--beta-deg", type=float, default=0.0)
    q.add_argument("--gamma-deg", type=float, default=0.0)
    q.add_argument("--focal", type=float, help="focal length in pixels (default: image width)")
    q.add_argument("--out", type=Path, required=True)
    q.add_argument("--h-out", type=Path, help="where to write H_sim (default: <out>.h.json)")
    q.add_argument("--bits", type=int, choices=(8, 16), default=16)

    p = sub.add_parser("error-model", help="closed-form camera error model")
    p.add_argument("action", nargs="?", choices=("eval", "sweep"), default="eval")
    p.add_argument("--f", type=float, default=50.0)
    p.add_argument("--S", type=float, default=1000.0)
    p.add_argument("--theta-deg", type=float, default=10.0)
    p.add_argument("--xA", type=float, default=0.0)
    p.add_argument("--yA", type=float, default=50.0)
    p.add_argument("--dx", type=float, default=1.0)
    p.add_argument("--dy", type=float, default=1.0)
    p.add_argument("--axis", action="append", default=[], help="name=start:stop:step, repeatable")
    p.add_argument("--fix", action="append", default=[], help="name=value, repeatable")
    p.add_argument("--target", choices=sorted(TARGETS), default="error_dx")
    p.add_argument("--out", type=Path, help="CSV path (default: stdout)")

    p = sub.add_parser("eval", help="MAE/SDAE of one field")
    p.add_argument("--measured", type=Path, required=True)
    p.add_argument("--truth", type=Path, help="truth field CSV")
    p.add_argument("--x0", type=float, help="analytic rotation field centre abscissa")
    p.add_argument("--theta-deg", type=float, help="analytic rotation field angle")

    p = sub.add_parser("report", help="per-frame metrics table")
    p.add_argument("--measured", type=Path, nargs="+", required=True)
    p.add_argument("--truth", type=Path, nargs="*", default=[])
    p.add_argument("--x0", type=float)
    p.add_argument("--theta-deg", type=_floats, help="one angle per measured field")
    p.add_argument("--out", type=Path)
    return ap


def _rotation_truth(x0: float, theta_deg: float):
    prm = RotationFieldParams(x0, math.radians(theta_deg))
    return lambda x, y: rotation_displacement(x, y, prm)


def _run_calibrate(a) -> int:
    cfg = PipelineConfig(reference=a.ref, calibration=a.calib, homography=a.out, ratio_delta=a.delta,
                         ransac=RansacConfig(epsilon=a.epsilon, iterations=a.iterations), seed=a.seed)
    rep = cmd_calibrate(cfg)
    print(json.dumps({"homography": str(rep.path), "images": rep.per_image}, indent=2))
    return EXIT_OK


def _run_rectify(a) -> int:
    out = rectify_image(load_image(a.inp), Homography.load(a.homography), fill=a.fill, kind=a.interp)
    save_image(out, a.out, bits=a.bits)
    return EXIT_OK


def _run_dic(a) -> int:
    params = _subset_params(a)
    ref, d = load_image(a.ref), load_image(a.deformed)
    cfg = PipelineConfig(reference=a.ref, subset=params, roi=a.roi, seed_point=a.seed,
                         search_radius=a.search_radius, rectify=False)
    roi = build_roi(cfg, ref.shape, None)
    fld = correlate_frame(ref, d, roi, params, a.search_radius)
    fld.meta.update(reference=str(a.ref), deformed=str(a.deformed), version=__version__)
    a.out.parent.mkdir(parents=True, exist_ok=True)
    fld.to_csv(a.out)
    print(json.dumps({"output": str(a.out), "valid": int(fld.valid.sum()),
                      "roi_points": int(roi.mask.sum())}))
    return EXIT_OK


def _run_run(a) -> int:
    if a.no_rectify and a.calib:
        raise InvalidParameter("--no-rectify and --calib are mutually exclusive")
    cfg = PipelineConfig(reference=a.ref, calibration=a.calib, deformed=a.deformed, out_dir=a.out_dir,
                         homography=a.homography, ratio_delta=a.delta,
                         ransac=RansacConfig(epsilon=a.epsilon, iterations=a.iterations),
                         subset=_subset_params(a), seed=a.seed, rectify=not a.no_rectify,
                         roi=a.roi, seed_point=a.seed_point, search_radius=a.search_radius,
                         threads=a.threads)
    if cfg.rectify:
        if cfg.calibration:
            cmd_calibrate(cfg)
        elif not cfg.homography_path().exists():
            raise InvalidParameter(f"homography {cfg.homography_path()} not found; "
                                   "pass --calib, --homography or --no-rectify")
    manifest = cmd_run(cfg)
    print(json.dumps({"manifest": str(cfg.out_dir / "manifest.json"), "failed": manifest["failed"]}))
    return EXIT_FAILURE if manifest["failed"] else EXIT_OK


def _run_synth(a) -> int:
    if a.synth_command == "speckle":
        save_image(speckle_image(a.width, a.height, seed=a.seed, density=a.density), a.out, bits=a.bits)
        return EXIT_OK
    img = load_image(a.inp)
    if a.synth_command == "rotate-field":
        prm = RotationFieldParams(a.x0, math.radians(a.theta_deg))
        out = generate_deformed(img, prm)
        if a.noise > 0:
            out = add_noise(out, a.noise, a.seed)
        save_image(out, a.out, bits=a.bits)
        if a.truth_csv is not None:
            roi = RoiMask(np.ones((len(range(0, img.height, a.spacing)),
                                   len(range(0, img.width, a.spacing))), dtype=bool),
                          (0, 0), (0, 0), a.spacing)
            fld = DisplacementField.empty(roi, {"x0": a.x0, "theta_deg": a.theta_deg})
            X, Y = fld.grid_xy()
            fld.u, fld.v = rotation_displacement(X, Y, prm)
            fld.zncc[:] = 1.0
            fld.valid[:] = True
            fld.status[:] = 0
            fld.to_csv(a.truth_csv)
        return EXIT_OK
    cam = VirtualCamera.for_image(img.width, img.height)
    if a.focal is not None:
        cam = VirtualCamera(a.focal, cam.cx, cam.cy)
    out, h = simulate_camera_rotation(img, EulerAngles.degrees(a.alpha_deg, a.beta_deg, a.gamma_deg), cam)
    save_image(out, a.out, bits=a.bits)
    h.save(a.h_out if a.h_out is not None else a.out.with_suffix(".h.json"))
    return EXIT_OK


def _run_error_model(a) -> int:
    if a.action == "eval":
        g = CameraGeometry(a.f, a.S, math.radians(a.theta_deg))
        m = ObjectMotion(a.xA, a.yA, a.dx, a.dy)
        print(json.dumps(evaluate(g, m), indent=2))
        return EXIT_OK
    if not a.axis:
        raise InvalidParameter("sweep needs at least one --axis")
    axes = dict(parse_axis(s) for s in a.axis)
    if any(len(v) < 2 for v in axes.values()):
        raise InvalidParameter("each swept axis needs at least two samples")
    fixed = {"f": a.f, "S": a.S, "theta": math.radians(a.theta_deg), "xA": a.xA, "yA": a.yA,
             "dx": a.dx, "dy": a.dy}
    for item in a.fix:
        name, _, val = item.partition("=")
        try:
            fixed[name] = math.radians(float(val)) if name == "theta" else float(val)
        except ValueError as exc:
            raise InvalidParameter(f"bad --fix {item!r}") from exc
    rows = sweep(axes, fixed, a.target)
    if a.out is not None:
        with open(a.out, "w", newline="") as fh:
            write_sweep_csv(rows, fh, a.target)
    else:
        write_sweep_csv(rows, sys.stdout, a.target)
    return EXIT_OK


def _truth_for(a, n: int) -> list:
    if a.truth:
        if len(a.truth) != n:
            raise InvalidParameter(f"{n} measured fields but {len(a.truth)} truth fields")
        return [DisplacementField.from_csv(t) for t in a.truth]
    if a.x0 is None or a.theta_deg is None:
        raise InvalidParameter("give --truth, or --x0 with --theta-deg")
    thetas = a.theta_deg if isinstance(a.theta_deg, list) else [a.theta_deg]
    if len(thetas) != n:
        raise InvalidParameter(f"{n} measured fields but {len(thetas)} angles")
    return [_rotation_truth(a.x0, t) for t in thetas]


def _run_eval(a) -> int:
    a.truth = [a.truth] if a.truth is not None else []
    truth = _truth_for(a, 1)[0]
    print(json.dumps(error_stats(DisplacementField.from_csv(a.measured), truth).as_dict(), indent=2))
    return EXIT_OK


def _run_report(a) -> int:
    rows = cmd_report(a.measured, _truth_for(a, len(a.measured)))
    fh = open(a.out, "w", newline="") if a.out is not None else sys.stdout
    try:
        wr = csv.DictWriter(fh, fieldnames=REPORT_COLUMNS, lineterminator="\n")
        wr.writeheader()
        for r in rows:
            wr.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})
    finally:
        if fh is not sys.stdout:
            fh.close()
    return EXIT_OK


_HANDLERS = {"calibrate": _run_calibrate, "rectify": _run_rectify, "dic": _run_dic, "run": _run_run,
             "synth": _run_synth, "error-model": _run_error_model, "eval": _run_eval,
             "report": _run_report}


def _subparser(ap: argparse.ArgumentParser, name: str) -> argparse.ArgumentParser:
    for act in ap._actions:
        if isinstance(act, argparse._SubParsersAction):
            return act.choices[name]
    raise KeyError(name)


def parse_args(argv=None) -> argparse.Namespace:
    """Parse flags; a ``--config`` JSON supplies defaults for the chosen subcommand."""
    ap = build_parser()
    args = ap.parse_args(argv)
    if args.config is None:
        return args
    try:
        cfg = json.loads(Path(args.config).read_text())
    except (OSError, ValueError) as exc:
        ap.error(f"cannot read config {args.config}: {exc}")
    if not isinstance(cfg, dict):
        ap.error("config must be a JSON object")
    sp = _subparser(ap, args.command)
    known = {act.dest: act for act in sp._actions}
    defaults = {}
    for key, val in cfg.items():
        dest = key.replace("-", "_")
        if dest not in known:
            ap.error(f"unknown config key {key!r} for {args.command}")
        act = known[dest]
        if act.type is not None and not isinstance(val, (list, dict)):
            val = act.type(str(val))
        elif act.type is not None and isinstance(val, list):
            val = [act.type(str(v)) for v in val]
        defaults[dest] = val
    sp.set_defaults(**defaults)
    for act in sp._actions:
        if act.dest in defaults:
            act.required = False
    return ap.parse_args(argv)


def main(argv=None) -> int:
    args = parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return _HANDLERS[args.command](args)
    except (InvalidParameter, ImageIOError) as exc:
        log.error("%s", exc)
        return EXIT_USAGE
    except RectiDICError as exc:
        log.error("%s: %s", type(exc).__name__, exc)
        return EXIT_FAILURE
    except (OSError, ValueError, KeyError) as exc:
        log.error("bad input: %s", exc)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
