"""Batch command line: ``roofmetrics <command> ...``.

Every command that writes files also writes ``<first output>.config.json``
holding the effective configuration. Existing outputs are never
overwritten unless ``--force`` is given.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import warnings
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from . import formats
from .config import PipelineConfig
from .errors import ConfigError, RoofMetricsError
from .flightplan import PHANTOM4PRO, CameraModel, MissionParams, estimate_flight, generate_double_grid
from .geometry import BoundingRegion, build_index, crop, sample_mesh, subsample_min_distance
from .metrics import compare_clouds, metric_curve, rank_table
from .plots import curves_svg
from .registration import RigidTransform, apply_transform, icp_refine, rigid_from_point_pairs
from .synth import DegradeSpec, SceneSpec, default_scene, degrade, generate_scene, random_perturbation

log = logging.getLogger("roofmetrics")


class OutputExistsError(RoofMetricsError):
    module = "cli"


class Context:
    def __init__(self, args):
        self.args = args
        self.config = PipelineConfig.load(args.config) if args.config else PipelineConfig()
        if args.seed is not None:
            self.config.seed = args.seed
        threads = args.threads if args.threads is not None else os.environ.get("ROOFMETRICS_THREADS") or 1
        try:
            self.threads = int(threads)
        except ValueError:
            raise ConfigError(f"invalid thread count {threads!r}")
        if self.threads == 0 or self.threads < -1:
            raise ConfigError("thread count must be positive or -1 (all cores)")
        self.force = args.force

    def claim(self, *paths):
        """Refuse to clobber existing outputs unless --force was given."""
        out = [Path(p) for p in paths if p is not None]
        if not self.force:
            taken = [str(p) for p in out if p.exists()]
            if taken:
                raise OutputExistsError(f"output exists (use --force): {', '.join(taken)}")
        for p in out:
            if p.parent and not p.parent.exists():
                p.parent.mkdir(parents=True, exist_ok=True)
        return out

    def write_effective_config(self, primary):
        path = Path(str(primary) + ".config.json")
        with open(path, "w", newline="\n") as fh:
            fh.write(self.config.to_json())
        return path

    def outputs(self, *paths):
        """Claim outputs plus the effective-config file that accompanies the first one."""
        paths = [p for p in paths if p is not None]
        self.claim(*paths, str(paths[0]) + ".config.json")
        return paths


def _load_cloud_or_mesh(path, ctx):
    """Cloud from a cloud file, or a sampled cloud if the file holds a mesh."""
    if str(path).lower().endswith(".obj"):
        return sample_mesh(formats.read_mesh(path), ctx.config.density, ctx.config.seed)
    if formats.detect_format(path) != formats.XYZ:
        data = formats.read_ply(path)
        face = data.get("face")
        if face is not None and len(next(iter(face.values()), [])):
            return sample_mesh(formats.read_mesh(path), ctx.config.density, ctx.config.seed)
    return formats.read_cloud(path)


def _write_cloud(cloud, path, ctx):
    formats.write_cloud(cloud, path, precision=ctx.config.ply_precision)


def cmd_plan(ctx, args):
    with open(args.mission) as fh:
        doc = json.load(fh)
    try:
        cam = CameraModel(**doc["camera"]) if "camera" in doc else PHANTOM4PRO
        m = dict(doc["mission"])
        m["region"] = BoundingRegion.from_dict(m["region"])
        if m.get("elevation_range") is not None:
            m["elevation_range"] = tuple(m["elevation_range"])
        mission = MissionParams(**m)
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"invalid mission file: {exc}") from exc
    out, csv_out = ctx.outputs(args.output, args.csv)[0], args.csv
    plan = generate_double_grid(mission, cam)
    est = estimate_flight(plan, mission)
    with open(out, "w", newline="\n") as fh:
        fh.write(plan.to_json())
    if csv_out:
        with open(csv_out, "w", newline="\n") as fh:
            fh.write(plan.to_csv())
    ctx.write_effective_config(out)
    summary = {
        "passes_per_grid": list(plan.passes_per_grid),
        "pass_spacing_m": plan.pass_spacing,
        "trigger_spacing_m": plan.trigger_spacing,
        "flight_altitude_m": plan.flight_altitude,
        "speed_mps": plan.speed,
        "front_overlap_pct": plan.front_overlap,
        "gsd_range_cm": [g * 100.0 for g in plan.gsd_range],
        "duration_min": est.duration,
        "captures": est.capture_count,
        "path_length_m": est.path_length,
    }
    print(json.dumps(summary, indent=2, sort_keys=True))


def cmd_sample(ctx, args):
    out = ctx.outputs(args.output)[0]
    mesh = formats.read_mesh(args.mesh)
    density = args.density if args.density is not None else ctx.config.density
    cloud = sample_mesh(mesh, density, ctx.config.seed)
    _write_cloud(cloud, out, ctx)
    ctx.write_effective_config(out)
    log.info("sampled %d points from %.3f m^2", len(cloud), mesh.area)


def cmd_subsample(ctx, args):
    out = ctx.outputs(args.output)[0]
    cloud = formats.read_cloud(args.cloud)
    d_min = args.min_distance if args.min_distance is not None else ctx.config.subsample_min_distance
    sub = subsample_min_distance(cloud, d_min, seed=args.shuffle_seed)
    _write_cloud(sub, out, ctx)
    ctx.write_effective_config(out)
    log.info("kept %d of %d points", len(sub), len(cloud))


def cmd_synth(ctx, args):
    mesh_out, cloud_out = ctx.outputs(args.mesh_out, args.cloud_out)
    if args.scene:
        spec = SceneSpec.load(args.scene)
    else:
        spec = default_scene(seed=ctx.config.seed)
    if args.density is not None:
        spec.density = args.density
    mesh, cloud = generate_scene(spec)
    formats.write_mesh(mesh, mesh_out)
    _write_cloud(cloud, cloud_out, ctx)
    ctx.write_effective_config(mesh_out)


def cmd_degrade(ctx, args):
    out, t_out = args.output, args.transform_out
    ctx.outputs(out, t_out)
    cloud = formats.read_cloud(args.cloud)
    rng = np.random.default_rng(ctx.config.seed)
    pert = None
    if args.max_angle or args.max_translation:
        center = cloud.points.mean(axis=0) if len(cloud) else None
        pert = random_perturbation(rng, args.max_angle, args.max_translation, center=center)
    spec = DegradeSpec(args.noise, args.dropout, pert)
    res, transform = degrade(cloud, spec, seed=ctx.config.seed)
    _write_cloud(res, out, ctx)
    if t_out:
        formats.write_transform(t_out, transform)
    ctx.write_effective_config(out)


def cmd_align(ctx, args):
    out, t_out = ctx.outputs(args.output, args.transform_out)
    source = formats.read_cloud(args.source)
    target = formats.read_cloud(args.target)
    init = RigidTransform.identity()
    if args.pairs:
        src, dst = formats.read_pairs(args.pairs)
        init = rigid_from_point_pairs((src, dst))
    result = icp_refine(source, build_index(target, ctx.threads), init, ctx.config.icp)
    _write_cloud(apply_transform(source, result.transform), out, ctx)
    if t_out:
        formats.write_transform(t_out, result.transform)
    ctx.write_effective_config(out)
    print(json.dumps({"final_rmse_m": result.final_rmse, "iterations": result.iterations_used,
                      "converged": result.converged}, sort_keys=True))


def _compare_and_write(ctx, recon, gt, cloud_out, curve_out, gt_cloud_out=None):
    cfg = ctx.config
    result = compare_clouds(recon, gt, cfg.local_model, workers=ctx.threads)
    curve = metric_curve(result, cfg.thresholds)
    _write_cloud(recon.with_scalars(result.e_rg), cloud_out, ctx)
    if gt_cloud_out:
        _write_cloud(gt.with_scalars(result.e_gr), gt_cloud_out, ctx)
    formats.write_report(curve, curve_out)
    headline = None
    if any(abs(t - cfg.headline_threshold) < 1e-12 for t in cfg.thresholds):
        headline = dict(zip(("precision_pct", "recall_pct", "fscore_pct"), curve.at(cfg.headline_threshold)))
    return {"headline_threshold_cm": cfg.headline_threshold * 100.0, "headline": headline,
            "fallback_fraction": result.fallback_fraction}


def _section_paths(path, name):
    p = Path(path)
    return p.with_name(f"{p.stem}_{name}{p.suffix}")


def _compare_sections(ctx, recon, gt, cloud_out, curve_out, gt_cloud_out):
    summary = {}
    if not ctx.config.sections:
        summary["all"] = _compare_and_write(ctx, recon, gt, cloud_out, curve_out, gt_cloud_out)
        return summary
    for sec in ctx.config.sections:
        r, g = crop(recon, sec.region), crop(gt, sec.region)
        if len(r) == 0 or len(g) == 0:
            raise RoofMetricsError(f"section {sec.name!r} is empty in one of the clouds")
        summary[sec.name] = _compare_and_write(
            ctx, r, g, _section_paths(cloud_out, sec.name), _section_paths(curve_out, sec.name),
            None if gt_cloud_out is None else _section_paths(gt_cloud_out, sec.name))
    return summary


def _compare_outputs(ctx, cloud_out, curve_out, gt_cloud_out):
    if not ctx.config.sections:
        return ctx.outputs(curve_out, cloud_out, gt_cloud_out)
    paths = []
    for sec in ctx.config.sections:
        paths += [_section_paths(curve_out, sec.name), _section_paths(cloud_out, sec.name)]
        if gt_cloud_out:
            paths.append(_section_paths(gt_cloud_out, sec.name))
    ctx.claim(*paths, str(curve_out) + ".config.json")
    return paths


def cmd_compare(ctx, args):
    _compare_outputs(ctx, args.cloud_out, args.curve_out, args.gt_cloud_out)
    recon = formats.read_cloud(args.compared)
    gt = formats.read_cloud(args.reference)
    summary = _compare_sections(ctx, recon, gt, args.cloud_out, args.curve_out, args.gt_cloud_out)
    ctx.write_effective_config(args.curve_out)
    print(json.dumps(summary, indent=2, sort_keys=True))


def cmd_evaluate(ctx, args):
    """Mesh or cloud in; sampled, subsampled, aligned and compared against ground truth."""
    cfg = ctx.config
    out = Path(args.output_dir)
    aligned_out, t_out = out / "aligned.ply", out / "transform.json"
    cloud_out, curve_out, gt_cloud_out = out / "c2c.ply", out / "curve.csv", out / "c2c_gt.ply"
    ctx.claim(aligned_out, t_out)
    _compare_outputs(ctx, cloud_out, curve_out, gt_cloud_out)
    recon = _load_cloud_or_mesh(args.reconstruction, ctx)
    gt = formats.read_cloud(args.reference)
    recon = subsample_min_distance(recon, cfg.subsample_min_distance)
    if cfg.subsample_reference and not args.no_subsample_reference:
        gt = subsample_min_distance(gt, cfg.subsample_min_distance)
    init = RigidTransform.identity()
    if args.pairs:
        init = rigid_from_point_pairs(formats.read_pairs(args.pairs))
    reg = icp_refine(recon, build_index(gt, ctx.threads), init, cfg.icp)
    recon = apply_transform(recon, reg.transform)
    _write_cloud(recon, aligned_out, ctx)
    formats.write_transform(t_out, reg.transform)
    summary = _compare_sections(ctx, recon, gt, cloud_out, curve_out, gt_cloud_out)
    ctx.write_effective_config(curve_out)
    summary["registration"] = {"final_rmse_m": reg.final_rmse, "iterations": reg.iterations_used,
                               "converged": reg.converged}
    print(json.dumps(summary, indent=2, sort_keys=True))


def _parse_curve_arg(spec):
    label, sep, path = spec.partition("=")
    flight, sep2, section = label.partition(":")
    if not sep or not sep2 or not flight or not section:
        raise ConfigError(f"--curve expects FLIGHT:SECTION=PATH, got {spec!r}")
    return flight, section, path


def cmd_report(ctx, args):
    cells: Dict[tuple, float] = {}
    flights: List[str] = []
    sections: List[str] = []

    def add(fl, sec, score):
        if (fl, sec) in cells:
            raise ConfigError(f"duplicate score for flight {fl!r}, section {sec!r}")
        cells[(fl, sec)] = score
        if fl not in flights:
            flights.append(fl)
        if sec not in sections:
            sections.append(sec)

    for path in args.table or []:
        for fl, sec, score in formats.read_fscore_csv(path):
            add(fl, sec, score)
    curves: Dict[str, Dict[str, object]] = {}
    for spec in args.curve or []:
        fl, sec, path = _parse_curve_arg(spec)
        curve = formats.read_curve(path)
        curves.setdefault(sec, {})[fl] = curve
        add(fl, sec, curve.at(ctx.config.headline_threshold)[2])
    if not cells:
        raise ConfigError("report needs at least one --table or --curve input")
    missing = [(f, s) for f in flights for s in sections if (f, s) not in cells]
    if missing:
        raise ConfigError(f"incomplete score matrix, missing {missing[:5]}")

    out_table = Path(args.output)
    out_summary = out_table.with_name(out_table.stem + "_summary" + out_table.suffix)
    svg_paths = []
    if curves:
        svg_dir = Path(args.svg_dir) if args.svg_dir else out_table.parent
        for sec in curves:
            for metric in ("precision", "recall"):
                svg_paths.append((sec, metric, svg_dir / f"{metric}_{sec}.svg"))
    ctx.outputs(out_table, out_summary, *[p for _, _, p in svg_paths])

    table = rank_table(flights, sections, [[cells[(f, s)] for s in sections] for f in flights])
    formats.write_report(table, out_table)
    with open(out_summary, "w", newline="\n") as fh:
        fh.write(formats.table_summary_csv(table))
    for sec, metric, path in svg_paths:
        with open(path, "w", newline="\n") as fh:
            fh.write(curves_svg(curves[sec], metric, title=f"{metric.capitalize()}, section {sec}"))
    ctx.write_effective_config(out_table)
    print(json.dumps({"flights": flights, "mean_rank": table.mean_rank.tolist(),
                      "mean_fscore": table.mean_score.tolist()}, indent=2))


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="pipeline config JSON")
    common.add_argument("--seed", type=int, help="override config seed")
    common.add_argument("--json", action="store_true", help="machine-readable errors on stderr")
    common.add_argument("--force", action="store_true", help="overwrite existing outputs")
    common.add_argument("--threads", type=int, help="worker threads for neighbour search "
                                                     "(default: $ROOFMETRICS_THREADS or 1)")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="roofmetrics", description=__doc__.splitlines()[0], parents=[common])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("plan", parents=[common], help="double-grid survey plan and flight estimate")
    s.add_argument("mission", help="mission JSON (camera optional, mission required)")
    s.add_argument("-o", "--output", required=True, help="plan JSON")
    s.add_argument("--csv", help="also write waypoints as CSV")
    s.set_defaults(func=cmd_plan)

    s = sub.add_parser("sample", parents=[common], help="sample a mesh into a point cloud")
    s.add_argument("mesh")
    s.add_argument("-o", "--output", required=True)
    s.add_argument("--density", type=float, help="points per m^2 (default from config)")
    s.set_defaults(func=cmd_sample)

    s = sub.add_parser("subsample", parents=[common], help="minimum-distance subsampling")
    s.add_argument("cloud")
    s.add_argument("-o", "--output", required=True)
    s.add_argument("--min-distance", type=float, help="metres (default from config)")
    s.add_argument("--shuffle-seed", type=int, help="visit points in a seeded random order")
    s.set_defaults(func=cmd_subsample)

    s = sub.add_parser("synth", parents=[common], help="generate a synthetic rooftop scene")
    s.add_argument("--scene", help="scene spec JSON (default: built-in five-level roof)")
    s.add_argument("--mesh-out", required=True)
    s.add_argument("--cloud-out", required=True)
    s.add_argument("--density", type=float, help="ground-truth sampling density, points per m^2")
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("degrade", parents=[common], help="noise, dropout and a random rigid perturbation")
    s.add_argument("cloud")
    s.add_argument("-o", "--output", required=True)
    s.add_argument("--noise", type=float, default=0.0, help="gaussian sigma, metres")
    s.add_argument("--dropout", type=float, default=0.0, help="fraction of points removed")
    s.add_argument("--max-angle", type=float, default=0.0, help="degrees")
    s.add_argument("--max-translation", type=float, default=0.0, help="metres")
    s.add_argument("--transform-out", help="JSON file for the applied transform")
    s.set_defaults(func=cmd_degrade)

    s = sub.add_parser("align", parents=[common], help="coarse point-pair alignment then ICP")
    s.add_argument("source")
    s.add_argument("target")
    s.add_argument("--pairs", help="CSV sx,sy,sz,tx,ty,tz for the coarse alignment")
    s.add_argument("-o", "--output", required=True, help="aligned source cloud")
    s.add_argument("--transform-out", required=True)
    s.set_defaults(func=cmd_align)

    s = sub.add_parser("compare", parents=[common], help="cloud-to-cloud distances and metric curves")
    s.add_argument("compared")
    s.add_argument("reference")
    s.add_argument("--cloud-out", required=True, help="compared cloud with scalar_c2c distances")
    s.add_argument("--curve-out", required=True, help="precision/recall/F-score CSV")
    s.add_argument("--gt-cloud-out", help="reference cloud with its distances to the compared cloud")
    s.set_defaults(func=cmd_compare)

    s = sub.add_parser("evaluate", parents=[common], help="sample, subsample, align and compare in one go")
    s.add_argument("reconstruction", help="mesh (PLY/OBJ) or cloud")
    s.add_argument("reference", help="ground-truth cloud")
    s.add_argument("--pairs")
    s.add_argument("--no-subsample-reference", action="store_true")
    s.add_argument("-o", "--output-dir", required=True)
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("report", parents=[common], help="rank flights and plot threshold sweeps")
    s.add_argument("--table", action="append", help="flight,section,fscore CSV (repeatable)")
    s.add_argument("--curve", action="append", help="FLIGHT:SECTION=curve.csv (repeatable)")
    s.add_argument("-o", "--output", required=True, help="ranked table CSV")
    s.add_argument("--svg-dir", help="directory for precision/recall SVG plots")
    s.set_defaults(func=cmd_report)
    return p


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        ctx = Context(args)
        with warnings.catch_warnings():
            warnings.simplefilter("default")
            args.func(ctx, args)
    except (RoofMetricsError, OSError, json.JSONDecodeError) as exc:
        if args.json:
            payload = exc.to_dict() if isinstance(exc, RoofMetricsError) else {
                "module": "cli", "error": type(exc).__name__, "message": str(exc)}
            payload["command"] = args.command
            print(json.dumps(payload, sort_keys=True), file=sys.stderr)
        else:
            module = exc.module if isinstance(exc, RoofMetricsError) else "io"
            print(f"roofmetrics {args.command}: [{module}] {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
