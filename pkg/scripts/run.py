"""
Fuzzy Shape Registration - Command Line Runner
Registers point sets and camera rays, voxelizes meshes, evaluates transforms and
runs the rotation-sweep and benchmark-suite experiments
"""

import argparse
import logging
import sys
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np
import pandas as pd

from bench import (
    SweepReport,
    SweepSpec,
    fuzzy_registrar,
    icp_registrar,
    plot_reprojection_histogram,
    plot_sweep_curves,
    ray_trials,
    rigid_fixture,
    rotation_sweep,
    similarity_trials,
    voxelizer_check,
)
from camera import depth_image, mask_to_rays, reprojection_errors
from config import RESULTS_DIR, SCENARIO_PRESETS, RunConfig
from errors import OptimizationError, RegistrationError
from fileio import (
    read_intrinsics,
    read_mask,
    read_mesh,
    read_pointset,
    read_transform,
    write_depth,
    write_pointset,
    write_transform,
)
from geometry import SimilarityTransform
from metrics import cloud_to_mesh_distance, mean_vertex_distance
from registration import register, register_rays, register_two_start
from voxelizer import mesh_to_pointset

logger = logging.getLogger(__name__)

OUTPUT_DIR = Path(RESULTS_DIR)


def _banner(title: str) -> None:
    print(f"\n{'='*60}")
    print(title)
    print(f"{'='*60}")


def _config_from_args(args) -> RunConfig:
    overrides = {
        "mode": getattr(args, "mode", None),
        "sigma0": args.sigma0,
        "sigma_final": args.sigma_final,
        "sigma_factor": args.sigma_factor,
        "k": args.k,
        "alpha": args.alpha,
        "truncation": args.truncation,
        "max_iters": args.max_iters,
        "jacobian_mode": args.jacobian,
        "resolution_fractions": args.fractions,
        "seed": args.seed,
        "two_start": getattr(args, "two_start", None),
        "stride": getattr(args, "stride", None),
        "output_dir": getattr(args, "output_dir", None),
    }
    return RunConfig.build(args.config, overrides)


def _provenance(config: RunConfig, result) -> Dict:
    return {
        "converged": result.converged,
        "kept_initial": result.kept_initial,
        "config": config.as_dict(),
        "levels": result.levels_frame().to_dict(orient="records"),
    }


def _print_result(result, verbose: bool) -> None:
    if not verbose:
        return
    summary = result.summary()
    _banner(f"RESULTS - {summary['mode'].upper()}")
    print(f"Converged: {summary['converged']}")
    print(f"Levels: {summary['levels']}, LM iterations: {summary['iterations']}")
    print(f"Final energy: {summary['final_energy']:.6e}")
    print(f"Quaternion (w, x, y, z): {np.round(summary['quaternion'], 6).tolist()}")
    print(f"Translation: {np.round(summary['translation'], 6).tolist()}")
    print(f"Scale: {summary['scale']:.6f}")
    print(result.levels_frame().to_string(index=False))
    print(f"{'='*60}\n")


def cmd_register(args) -> int:
    config = _config_from_args(args)
    if config.mode == "rays":
        raise RegistrationError("use the register-rays subcommand for ray targets")
    D = read_pointset(args.source)
    S = read_pointset(args.target)
    theta0 = read_transform(args.init) if args.init else None
    if args.verbose:
        _banner(f"Registering {Path(args.source).name} -> {Path(args.target).name} ({config.mode})")
        print(f"Source points: {len(D)}, Target points: {len(S)}, Sigma ladder: {config.schedule().sigmas()}")

    run = register_two_start if config.two_start else register
    try:
        result = run(D, S, theta0, config.mode, config.schedule(), config.kernel_config(), config.lm_config())
    except OptimizationError as exc:
        if exc.theta is not None:
            write_transform(args.out, exc.theta, {"converged": False, "error": str(exc), "config": config.as_dict()})
        raise

    write_transform(args.out, result.theta, _provenance(config, result))
    if args.aligned_out:
        write_pointset(args.aligned_out, result.theta.apply(D))
    _print_result(result, args.verbose)
    print(f"transform written to {args.out}")
    return 0 if result.converged else 1


def cmd_register_rays(args) -> int:
    config = _config_from_args(args)
    D = read_pointset(args.points)
    K = read_intrinsics(args.intrinsics)
    rays = mask_to_rays(K, read_mask(args.mask), config.stride)
    theta0 = read_transform(args.init) if args.init else SimilarityTransform.identity()
    if args.verbose:
        _banner(f"Aligning {Path(args.points).name} to {len(rays)} camera rays")

    result = register_rays(D, rays, theta0, config.schedule(), config.kernel_config(), config.lm_config())
    write_transform(args.out, result.theta, _provenance(config, result))
    if args.depth_out:
        pgm, dump = write_depth(args.depth_out, depth_image(K, result.theta, D))
        print(f"depth image written to {pgm} and {dump}")
    if args.labels:
        report = reprojection_errors(K, result.theta, D, read_mask(args.labels))
        print(f"reprojection error: mean {report.mean:.3f} px, median {report.median:.3f} px, p95 {report.p95:.3f} px, "
              f"{report.out_of_image} points outside the image")
    _print_result(result, args.verbose)
    print(f"transform written to {args.out}")
    return 0 if result.converged else 1


def cmd_voxelize(args) -> int:
    config = RunConfig.build(args.config, {"voxel_resolution": args.resolution, "closing_radius": args.closing_radius})
    mesh = read_mesh(args.mesh)
    points = mesh_to_pointset(mesh, config.voxel_resolution, config.closing_radius)
    write_pointset(args.out, points)
    print(f"{len(points)} points written to {args.out}")
    return 0


def cmd_evaluate(args) -> int:
    if args.cloud or args.mesh:
        if not (args.cloud and args.mesh):
            raise RegistrationError("--cloud and --mesh must be given together")
        mean, worst = cloud_to_mesh_distance(read_pointset(args.cloud), read_mesh(args.mesh))
        print(f"cloud-to-mesh distance: mean {mean:.17g} max {worst:.17g}")
        return 0
    if not (args.est and args.gt and args.model):
        raise RegistrationError("evaluate needs --est, --gt and --model, or --cloud and --mesh")
    error = mean_vertex_distance(read_transform(args.est), read_transform(args.gt), read_pointset(args.model))
    print(f"mean vertex distance: {error:.17g}")
    if args.threshold is not None:
        return 0 if error < args.threshold else 1
    return 0


def _parse_range(text: str):
    try:
        lo, hi = (float(v) for v in text.split(":"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected MIN:MAX, got {text!r}") from None
    return lo, hi


def cmd_sweep(args) -> int:
    config = _config_from_args(args)
    model = read_pointset(args.model)
    scene = read_pointset(args.scene)
    theta_gt = read_transform(args.gt)
    if args.registrar == "icp":
        registrar = icp_registrar()
    else:
        registrar = fuzzy_registrar(config.mode, config.schedule(), config.kernel_config(), config.lm_config(),
                                    config.two_start)
    reports = []
    for axis in args.axis:
        spec = SweepSpec(axis=axis, step_degrees=args.step, range_degrees=args.range, trials=args.trials,
                         subset_fraction=args.subset, noise_fraction=args.noise,
                         outlier_fraction=args.outliers, seed=config.seed)
        reports.append(rotation_sweep(model, scene, theta_gt, spec, registrar, args.threshold))
    report = SweepReport.concat(reports)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    report.to_csv(args.out)
    print(f"{len(report.rows)} trials written to {args.out}, success rate {report.success_rate:.3f}")
    return 0


def export_to_csv(frame: pd.DataFrame, scenario_name: str, label: str, output_dir: Path) -> Path:
    """Export one scenario table to CSV"""
    output_dir.mkdir(parents=True, exist_ok=True)
    safe_scenario = scenario_name.lower().replace(" ", "_")
    path = output_dir / f"{label}_{safe_scenario}.csv"
    frame.to_csv(path, index=False)
    print(f"   Exported: {path.name}")
    return path


def run_scenario_analysis(output_dir: Optional[Path] = None, names: Optional[List[str]] = None,
                          quick: bool = False, config: Optional[RunConfig] = None) -> pd.DataFrame:
    """Run the benchmark scenarios of SCENARIO_PRESETS and write CSVs, figures and a summary"""
    config = config or RunConfig()
    output_dir = Path(output_dir or config.output_dir)
    schedule, kernel, lm = config.schedule(), config.kernel_config(), config.lm_config()
    summary_data = []

    _banner("SCENARIO ANALYSIS - FUZZY REGISTRATION BENCHMARKS")
    for name, preset in SCENARIO_PRESETS.items():
        if names and name not in names:
            continue
        preset = dict(preset)
        if quick:
            preset["trials"] = min(preset.get("trials", 1), 2)
            if "range_degrees" in preset:
                preset["range_degrees"] = (preset["range_degrees"][0], min(preset["range_degrees"][1], 20.0))
            if "points" in preset:
                preset["points"] = min(preset["points"], 400)
        _banner(f"Scenario: {name}")

        if preset["kind"] == "sweep":
            model, scene, theta_gt = rigid_fixture(preset["points"], preset["seed"])
            registrars = {
                "fuzzy": fuzzy_registrar("rigid", schedule, kernel, lm, config.two_start),
                "icp": icp_registrar(),
            }
            reports = {}
            for label in preset["registrars"]:
                per_axis = []
                for axis in preset["axes"]:
                    spec = SweepSpec(axis=axis, step_degrees=preset["step_degrees"],
                                     range_degrees=preset["range_degrees"], trials=preset["trials"],
                                     subset_fraction=preset["subset_fraction"],
                                     noise_fraction=preset["noise_fraction"],
                                     outlier_fraction=preset["outlier_fraction"], seed=preset["seed"])
                    per_axis.append(rotation_sweep(model, scene, theta_gt, spec, registrars[label]))
                reports[label] = SweepReport.concat(per_axis)
                export_to_csv(reports[label].rows, name, f"sweep_{label}", output_dir)
                summary_data.append({"Scenario": name, "Method": label.upper(), "Trials": len(reports[label].rows),
                                     "Success_Rate": f"{reports[label].success_rate:.3f}"})
            figure = plot_sweep_curves(reports, output_dir / f"{name.lower().replace(' ', '_')}.png", name)
            print(f"   Visualization saved to: {figure}")

        elif preset["kind"] == "similarity":
            frame = similarity_trials(preset, schedule, kernel, lm)
            export_to_csv(frame, name, "trials", output_dir)
            summary_data.append({"Scenario": name, "Method": "FUZZY", "Trials": len(frame),
                                 "Success_Rate": f"{frame['success'].mean():.3f}"})

        elif preset["kind"] == "rays":
            frame, report = ray_trials(preset, schedule, kernel, lm)
            export_to_csv(frame, name, "trials", output_dir)
            figure = plot_reprojection_histogram(report, output_dir / f"{name.lower().replace(' ', '_')}.png", name)
            print(f"   Visualization saved to: {figure}")
            summary_data.append({"Scenario": name, "Method": "FUZZY", "Trials": len(frame),
                                 "Success_Rate": f"{frame['success'].mean():.3f}"})

        elif preset["kind"] == "voxelize":
            frame = voxelizer_check(preset)
            export_to_csv(frame, name, "counts", output_dir)
            exact = (frame["cube_points"] == frame["cube_expected"]) & (frame["nested_inner_points"] == 0)
            summary_data.append({"Scenario": name, "Method": "VOXELIZER", "Trials": len(frame),
                                 "Success_Rate": f"{exact.mean():.3f}"})

    summary_df = pd.DataFrame(summary_data, columns=["Scenario", "Method", "Trials", "Success_Rate"])
    output_dir.mkdir(parents=True, exist_ok=True)
    summary_df.to_csv(output_dir / "summary_scenarios.csv", index=False)
    print("\n   Summary table exported to: summary_scenarios.csv")

    _banner("COMPREHENSIVE SCENARIO SUMMARY")
    print(f"{'Scenario':<22} {'Method':<12} {'Trials':<8} {'Success':<8}")
    print("-" * 52)
    for row in summary_data:
        print(f"{row['Scenario']:<22} {row['Method']:<12} {row['Trials']:<8} {row['Success_Rate']:<8}")
    return summary_df


def cmd_suite(args) -> int:
    config = _config_from_args(args)
    run_scenario_analysis(Path(config.output_dir), args.scenario, args.quick, config)
    return 0


def _add_solver_flags(parser: argparse.ArgumentParser, with_mode: bool = True) -> None:
    group = parser.add_argument_group("registration parameters")
    if with_mode:
        group.add_argument("--mode", choices=["rigid", "similarity"])
    group.add_argument("--sigma0", type=float)
    group.add_argument("--sigma-final", type=float)
    group.add_argument("--sigma-factor", type=float)
    group.add_argument("--k", type=float, help="sigmoid steepness")
    group.add_argument("--alpha", type=float, help="proximity weight in [0, 1]")
    group.add_argument("--truncation", choices=["exact", "cutoff"])
    group.add_argument("--jacobian", choices=["analytic", "finite-difference"])
    group.add_argument("--max-iters", type=int, help="LM iterations per level")
    group.add_argument("--fractions", help="resolution fractions, e.g. 0.1,0.25,0.5,1")
    group.add_argument("--seed", type=int)
    group.add_argument("--config", help="key = value parameter file; flags override it")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="run.py", description="Fuzzy-correspondence shape registration")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="-v for progress, -vv for solver detail")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("register", help="align a source point set to a target point set")
    p.add_argument("source")
    p.add_argument("target")
    p.add_argument("--out", default="transform.json")
    p.add_argument("--init", help="initial transform document (default: centroid alignment)")
    p.add_argument("--aligned-out", help="also write the transformed source points")
    p.add_argument("--two-start", action="store_true", default=None,
                   help="also start from a 180 degree flip about X and keep the better result")
    _add_solver_flags(p)
    p.set_defaults(handler=cmd_register)

    p = sub.add_parser("register-rays", help="align LiDAR points to camera rays from a mask")
    p.add_argument("points")
    p.add_argument("--intrinsics", required=True)
    p.add_argument("--mask", required=True, help="PGM whose set pixels become rays")
    p.add_argument("--stride", type=int)
    p.add_argument("--init", help="initial transform document (default: identity)")
    p.add_argument("--out", default="transform.json")
    p.add_argument("--depth-out", help="write the projected depth image (PGM) and a raw dump")
    p.add_argument("--labels", help="PGM of labelled pixels for a reprojection-error report")
    _add_solver_flags(p, with_mode=False)
    p.set_defaults(handler=cmd_register_rays)

    p = sub.add_parser("voxelize", help="convert a mesh to a surface point set")
    p.add_argument("mesh")
    p.add_argument("--resolution", type=int, help="cells along the longest axis (default 64)")
    p.add_argument("--closing-radius", type=int, help="closing radius in cells (default 1)")
    p.add_argument("--config", help="key = value parameter file; flags override it")
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_voxelize)

    p = sub.add_parser("evaluate", help="vertex error between transforms, or cloud-to-mesh distance")
    p.add_argument("--est")
    p.add_argument("--gt")
    p.add_argument("--model")
    p.add_argument("--threshold", type=float, help="exit 1 if the vertex error is not below this")
    p.add_argument("--cloud")
    p.add_argument("--mesh")
    p.set_defaults(handler=cmd_evaluate)

    p = sub.add_parser("sweep", help="rotation-sweep robustness protocol")
    p.add_argument("model")
    p.add_argument("scene")
    p.add_argument("--gt", required=True, help="transform document mapping model onto scene")
    p.add_argument("--axis", nargs="+", choices=["x", "y", "z"], default=["x"])
    p.add_argument("--step", type=float, default=5.0)
    p.add_argument("--range", type=_parse_range, default=(0.0, 90.0), help="MIN:MAX in degrees")
    p.add_argument("--trials", type=int, default=1)
    p.add_argument("--subset", type=float, default=1.0)
    p.add_argument("--noise", type=float, default=0.0, help="noise sigma as a fraction of the bbox diagonal")
    p.add_argument("--outliers", type=float, default=0.0)
    p.add_argument("--threshold", type=float, help="success threshold (default 1%% of the bbox diagonal)")
    p.add_argument("--registrar", choices=["fuzzy", "icp"], default="fuzzy")
    p.add_argument("--two-start", action="store_true", default=None)
    p.add_argument("--out", required=True)
    _add_solver_flags(p)
    p.set_defaults(handler=cmd_sweep)

    p = sub.add_parser("suite", help="run the synthetic benchmark scenarios")
    p.add_argument("--output-dir", help=f"where CSVs and figures go (default {OUTPUT_DIR})")
    p.add_argument("--scenario", nargs="+", choices=list(SCENARIO_PRESETS))
    p.add_argument("--quick", action="store_true", help="fewer trials, points and angles")
    _add_solver_flags(p, with_mode=False)
    p.set_defaults(handler=cmd_suite)
    return parser


def cli_main(argv: Optional[List[str]] = None) -> int:
    """Parse argv and run a subcommand; returns the process exit code"""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)

    level = {0: logging.WARNING, 1: logging.INFO}.get(args.verbose, logging.DEBUG)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.handler(args)
    except RegistrationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(cli_main())
