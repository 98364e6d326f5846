"""Command-line surface.

Subcommands:

    psf synth     write impulse-grid calibration targets (one PNG per channel)
    psf extract   build a kernel bank from a tree of response frames
    render        filter one RGB+depth pair through a bank
    replicate     expand a manifest into |apertures| x |gains| replicas
    noise fit     fit the exponential gain-to-noise model from a CSV
    stats         fold mAP, weighted mean/std and pairwise Welch tests
    geometry      FOV / bbox-width / distance calculations

Exit codes: 0 success, 1 runtime failure (one "error: ..." line on stderr),
2 usage error. Configuration precedence: command-line flag, then the file
given by --config or APERTURESIM_CONFIG, then built-in defaults. Re-running
a command with identical inputs and seed reproduces its artifacts byte for
byte.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import __version__
from .bank_io import load_bank, save_bank
from .config import load_profile
from .dataset import (GROUPS, depth_to_meters, export_report, load_depth,
                      load_manifest, load_rgb, save_rgb)
from .noise import NoiseModel, fit_noise_model
from .optics import (bbox_width_px, distance_for_width, fit_power_law,
                     horizontal_fov)
from .psf import (CHANNELS, DepthPlanSpec, ImpulseGridSpec, extract_bank,
                  synthesize_impulse_grid)
from .render import POLICY_CLAMP, POLICY_PASSTHROUGH, RenderConfig, render
from .replicate import replicate_dataset
from .stats import (FoldMetric, filter_by_classes, filter_by_size,
                    load_coco_detections, load_coco_ground_truth,
                    map_iou_sweep, pairwise_tests, weighted_mean, weighted_std)

log = logging.getLogger("aperturesim")


class UsageError(ValueError):
    """Flag combination errors detected after parsing; exits with code 2."""


def _odd_int(text: str) -> int:
    value = int(text)
    if value <= 0 or value % 2 == 0:
        raise argparse.ArgumentTypeError(f"must be a positive odd integer, got {text}")
    return value


def _gain_list(text: str) -> list[float]:
    try:
        gains = [float(v) for v in text.split(",") if v.strip() != ""]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad gain list: {text!r}")
    if not gains or any(g < 0 for g in gains):
        raise argparse.ArgumentTypeError("gains must be a comma list of values >= 0")
    return gains


def _plan_spec(text: str) -> DepthPlanSpec:
    try:
        start, stop, step = (float(v) for v in text.split(":"))
        return DepthPlanSpec.from_range(start, stop, step)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad plan {text!r} (want start:stop:step): {exc}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="aperturesim",
        description="Aperture-shape optical effect simulation and evaluation toolkit")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0,
                        help="increase log verbosity (repeatable)")
    sub = parser.add_subparsers(dest="command", required=True)

    # psf synth / psf extract
    psf = sub.add_parser("psf", help="impulse grids and kernel banks")
    psf_sub = psf.add_subparsers(dest="psf_command", required=True)

    synth = psf_sub.add_parser("synth", help="write impulse-grid target PNGs")
    synth.add_argument("--height", type=int, default=1536)
    synth.add_argument("--width", type=int, default=2048)
    synth.add_argument("--block-size", type=_odd_int, default=51)
    synth.add_argument("--channels", default="RGB",
                       help="subset of RGB to generate (default all)")
    synth.add_argument("--out-dir", type=Path, required=True)
    synth.set_defaults(func=cmd_psf_synth)

    extract = psf_sub.add_parser("extract", help="extract a kernel bank from response frames")
    extract.add_argument("--frames-dir", type=Path, required=True,
                         help="directory laid out as <distance_m>/<channel>.png")
    extract.add_argument("--block-size", type=_odd_int, default=51)
    extract.add_argument("--plan", type=_plan_spec, default=DepthPlanSpec.default(),
                         help="depth plan as start:stop:step in meters (default 10:100:5)")
    extract.add_argument("--aperture-name", default="")
    extract.add_argument("--out", type=Path, required=True)
    extract.set_defaults(func=cmd_psf_extract)

    # render
    rend = sub.add_parser("render", help="filter one RGB+depth pair through a bank")
    rend.add_argument("--rgb", type=Path, required=True)
    rend.add_argument("--depth", type=Path, required=True)
    rend.add_argument("--depth-scale", type=float, default=0.01,
                      help="meters per depth unit (default 0.01)")
    rend.add_argument("--bank", type=Path, required=True)
    rend.add_argument("--gain-db", type=float, default=0.0)
    rend.add_argument("--noise-model", type=Path, default=None,
                      help="noise model JSON; omit for noise-free output")
    rend.add_argument("--seed", type=int, default=0)
    rend.add_argument("--image-id", default="")
    rend.add_argument("--policy", choices=[POLICY_CLAMP, POLICY_PASSTHROUGH],
                      default=POLICY_CLAMP)
    rend.add_argument("--apply-centroid-offset", action="store_true")
    rend.add_argument("--out", type=Path, required=True)
    rend.set_defaults(func=cmd_render)

    # replicate
    repl = sub.add_parser("replicate", help="expand a manifest into aperture x gain replicas")
    repl.add_argument("--manifest", type=Path, required=True)
    repl.add_argument("--bank", action="append", required=True, metavar="NAME=PATH",
                      help="aperture bank (repeatable)")
    repl.add_argument("--gains", type=_gain_list, default=[0.0, 30.0, 40.0, 48.0],
                      help="comma list of gains in dB (default 0,30,40,48)")
    repl.add_argument("--noise-model", type=Path, default=None)
    repl.add_argument("--seed", type=int, default=0)
    repl.add_argument("--workers", type=int, default=1)
    repl.add_argument("--policy", choices=[POLICY_CLAMP, POLICY_PASSTHROUGH],
                      default=POLICY_CLAMP)
    repl.add_argument("--apply-centroid-offset", action="store_true")
    repl.add_argument("--out-root", type=Path, required=True)
    repl.add_argument("--report", type=Path, default=None,
                      help="write the replication report JSON here")
    repl.set_defaults(func=cmd_replicate)

    # noise fit
    noise = sub.add_parser("noise", help="sensor noise model")
    noise_sub = noise.add_subparsers(dest="noise_command", required=True)
    fit = noise_sub.add_parser("fit", help="fit the exponential gain-to-noise curve")
    fit.add_argument("--measurements", type=Path, required=True,
                     help="CSV with header gain_db,std_r,std_g,std_b")
    fit.add_argument("--out", type=Path, required=True)
    fit.set_defaults(func=cmd_noise_fit)

    # stats
    stats = sub.add_parser("stats", help="fold mAP and pairwise Welch tests")
    stats.add_argument("--ground-truth", type=Path, required=True,
                       help="COCO-style annotation JSON")
    stats.add_argument("--group", action="append", required=True,
                       metavar="LABEL=FOLD1.json,FOLD2.json,...",
                       help="a test group: its per-fold COCO detection files (repeatable)")
    stats.add_argument("--confidence-threshold", type=float, required=True)
    stats.add_argument("--alpha", type=float, default=0.05)
    stats.add_argument("--class-group", choices=list(GROUPS) + ["all"], default="all")
    stats.add_argument("--size", choices=["tiny", "small", "medium", "large", "all"],
                       default="all")
    stats.add_argument("--config", type=Path, default=None)
    stats.add_argument("--out-dir", type=Path, required=True)
    stats.set_defaults(func=cmd_stats)

    # geometry
    geom = sub.add_parser("geometry", help="FOV / bbox width / distance printout")
    geom.add_argument("--config", type=Path, default=None)
    geom.add_argument("--object", default=None,
                      help="object class from the profile (e.g. speed_sign)")
    geom.add_argument("--width-m", type=float, default=None,
                      help="explicit object width, overrides --object")
    geom.add_argument("--distances", default=None,
                      help="comma list of distances in meters for bbox widths")
    geom.add_argument("--bbox-width", type=int, default=None,
                      help="invert: distance at which the bbox has this width")
    geom.set_defaults(func=cmd_geometry)

    return parser


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_psf_synth(args: argparse.Namespace) -> int:
    channels = [c.upper() for c in args.channels]
    for ch in channels:
        if ch not in CHANNELS:
            raise ValueError(f"unknown channel {ch!r} in --channels")
    args.out_dir.mkdir(parents=True, exist_ok=True)
    for ch in channels:
        spec = ImpulseGridSpec(height=args.height, width=args.width,
                               block_size=args.block_size, channel=ch)
        grid = synthesize_impulse_grid(spec)
        out = args.out_dir / f"impulse_{ch}.png"
        save_rgb(out, grid)
        log.info("wrote %s", out)
        print(out)
    return 0


def cmd_psf_extract(args: argparse.Namespace) -> int:
    plan = args.plan
    frames = {}
    for plane in range(len(plan)):
        for ch in CHANNELS:
            path = args.frames_dir / plan.label(plane) / f"{ch}.png"
            if not path.exists():
                raise FileNotFoundError(
                    f"missing response frame for plane {plan.label(plane)} m, "
                    f"channel {ch}: {path}")
            frames[(plane, ch)] = load_rgb(path)
    bank = extract_bank(frames, plan, args.block_size, aperture_name=args.aperture_name)
    save_bank(bank, args.out)
    for plane in range(len(plan)):
        supports = [bank.kernels[(plane, c, i, j)].support
                    for c in range(3)
                    for i in range(bank.grid.n_rows)
                    for j in range(bank.grid.n_cols)]
        max_side = max(max(s) for s in supports)
        print(f"plane {plan.label(plane)} m: {len(supports)} kernels, "
              f"max support {max_side} px")
    print(args.out)
    return 0


def _load_noise_model(path: Path | None) -> NoiseModel | None:
    if path is None:
        return None
    return NoiseModel.from_dict(json.loads(path.read_text(encoding="utf-8")))


def cmd_render(args: argparse.Namespace) -> int:
    bank = load_bank(args.bank)
    rgb = load_rgb(args.rgb)
    depth_m = depth_to_meters(load_depth(args.depth), args.depth_scale)
    config = RenderConfig(gain_db=args.gain_db, base_seed=args.seed,
                          out_of_range_policy=args.policy,
                          apply_centroid_offset=args.apply_centroid_offset)
    result = render(rgb, depth_m, bank, _load_noise_model(args.noise_model),
                    config, image_id=args.image_id)
    save_rgb(args.out, result)
    print(args.out)
    return 0


def cmd_replicate(args: argparse.Namespace) -> int:
    banks = {}
    for item in args.bank:
        name, _, path = item.partition("=")
        if not path:
            raise ValueError(f"--bank expects NAME=PATH, got {item!r}")
        banks[name] = load_bank(path)
    manifest = load_manifest(args.manifest, validate_files=False)
    report = replicate_dataset(manifest, banks, _load_noise_model(args.noise_model),
                               args.gains, args.out_root, base_seed=args.seed,
                               policy=args.policy,
                               apply_centroid_offset=args.apply_centroid_offset,
                               workers=args.workers)
    if args.report is not None:
        args.report.parent.mkdir(parents=True, exist_ok=True)
        args.report.write_text(json.dumps(report.to_dict(), indent=2), encoding="utf-8")
    print(report.summary())
    return 0


def cmd_noise_fit(args: argparse.Namespace) -> int:
    import csv as csv_mod
    measurements = {"R": [], "G": [], "B": []}
    with open(args.measurements, newline="", encoding="utf-8") as fh:
        reader = csv_mod.DictReader(fh)
        required = {"gain_db", "std_r", "std_g", "std_b"}
        if reader.fieldnames is None or not required.issubset(reader.fieldnames):
            raise ValueError(f"measurements CSV must have columns {sorted(required)}")
        for row in reader:
            gain = float(row["gain_db"])
            measurements["R"].append((gain, float(row["std_r"])))
            measurements["G"].append((gain, float(row["std_g"])))
            measurements["B"].append((gain, float(row["std_b"])))
    model = fit_noise_model(measurements)
    args.out.parent.mkdir(parents=True, exist_ok=True)
    args.out.write_text(json.dumps(model.to_dict(), indent=2), encoding="utf-8")
    print(args.out)
    return 0


def cmd_stats(args: argparse.Namespace) -> int:
    gts = load_coco_ground_truth(args.ground_truth)

    if args.class_group != "all":
        from .dataset import default_class_catalog
        class_ids = {c.class_id for c in default_class_catalog()
                     if c.group == args.class_group}
    else:
        class_ids = None

    groups: dict[str, list[Path]] = {}
    for item in args.group:
        label, _, paths = item.partition("=")
        if not paths:
            raise ValueError(f"--group expects LABEL=FILE[,FILE...], got {item!r}")
        groups[label] = [Path(p) for p in paths.split(",")]

    fold_rows = []
    samples: dict[str, list[float]] = {}
    summary: dict[str, dict] = {}
    for label in sorted(groups):
        folds = []
        for fold_index, det_path in enumerate(groups[label]):
            dets = load_coco_detections(det_path)
            fold_dets, fold_gts = dets, gts
            if class_ids is not None:
                fold_dets, fold_gts = filter_by_classes(fold_dets, fold_gts, class_ids)
            if args.size != "all":
                fold_dets, fold_gts = filter_by_size(fold_dets, fold_gts, args.size)
            classes = sorted({g.class_id for gs in fold_gts.values() for g in gs}
                             | {d.class_id for ds in fold_dets.values() for d in ds})
            if not classes:
                raise ValueError(f"group {label!r} fold {fold_index}: no classes left "
                                 f"after filtering")
            value = map_iou_sweep(fold_dets, fold_gts, classes, args.confidence_threshold)
            weight = sum(len(gs) for gs in fold_gts.values())
            folds.append(FoldMetric(fold_index=fold_index, map_value=value,
                                    weight_count=weight))
            fold_rows.append({"group": label, "fold": fold_index,
                              "map": f"{value:.6f}", "weight": weight})
        samples[label] = [f.map_value for f in folds]
        summary[label] = {
            "weighted_mean_map": weighted_mean(folds),
            "weighted_std_map": weighted_std(folds) if len(folds) >= 2 else None,
            "folds": len(folds),
            "total_weight": sum(f.weight_count for f in folds),
        }

    args.out_dir.mkdir(parents=True, exist_ok=True)
    export_report(fold_rows, ["group", "fold", "map", "weight"],
                  args.out_dir / "fold_map.csv")

    welch_rows = []
    for pair in pairwise_tests(samples, alpha=args.alpha):
        if pair.result is not None:
            welch_rows.append({
                "group_a": pair.label_a, "group_b": pair.label_b,
                "t": f"{pair.result.t:.4f}", "nu": f"{pair.result.nu:.4f}",
                "p_value": f"{pair.result.p_two_tailed:.4f}",
                "reject": "yes" if pair.result.reject else "no",
            })
        else:
            welch_rows.append({"group_a": pair.label_a, "group_b": pair.label_b,
                               "t": "", "nu": "", "p_value": "",
                               "reject": f"error: {pair.error}"})
    export_report(welch_rows, ["group_a", "group_b", "t", "nu", "p_value", "reject"],
                  args.out_dir / "welch_tests.csv")

    (args.out_dir / "summary.json").write_text(
        json.dumps({"class_group": args.class_group, "size": args.size,
                    "confidence_threshold": args.confidence_threshold,
                    "alpha": args.alpha, "groups": summary}, indent=2),
        encoding="utf-8")
    print(args.out_dir / "welch_tests.csv")
    print(args.out_dir / "fold_map.csv")
    print(args.out_dir / "summary.json")
    return 0


def cmd_geometry(args: argparse.Namespace) -> int:
    profile = load_profile(args.config)
    camera = profile.camera
    print(f"fov_deg={horizontal_fov(camera):.4f}")

    if args.width_m is not None:
        from .optics import ObjectClassGeometry
        obj = ObjectClassGeometry(class_name="custom", physical_width_m=args.width_m)
    elif args.object is not None:
        if args.object not in profile.objects:
            raise ValueError(f"unknown object {args.object!r}; profile has "
                             f"{sorted(profile.objects)}")
        obj = profile.objects[args.object]
    else:
        obj = None

    if args.distances is not None or args.bbox_width is not None:
        if obj is None:
            raise UsageError("--distances/--bbox-width need --object or --width-m")

    if obj is not None and args.distances is not None:
        for text in args.distances.split(","):
            distance = float(text)
            width = bbox_width_px(obj, distance, camera)
            print(f"bbox_width_px[{obj.class_name}@{distance:g}m]={width}")

    if obj is not None and args.bbox_width is not None:
        plan = profile.depth_plan
        samples = [(d, bbox_width_px(obj, d, camera)) for d in plan.distances]
        fit = fit_power_law(samples)
        distance = distance_for_width(fit, args.bbox_width)
        print(f"power_law_a={fit.scale_a:.4f}")
        print(f"power_law_b={fit.exponent_b:.6f}")
        print(f"distance_m[{obj.class_name}@width{args.bbox_width}px]={distance:.2f}")
    return 0


# ---------------------------------------------------------------------------

def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, OSError, KeyError) as exc:
        message = str(exc) or exc.__class__.__name__
        print(f"error: {message}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
