"""Command-line pipeline: simulate, estimate, slam, eval, run-all.

Exit codes: 0 success, 1 configuration error (bad flags, missing files),
2 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

from . import io as mio
from . import simulate
from .metrics import GospaParams, gospa_angles, slfd_metric, trajectory_stats
from .pipeline import (
    PipelineConfig,
    direct_measurements,
    estimate_position,
    measurements_from_estimates,
    run_trajectory,
    synthesize_map,
)
from .slam import SlamConfig

DEFAULT_POWER_RATIOS = (99.0, 99.9, 99.99)
SLFD_TAU_S = 0.3e-9


class ConfigError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        # usage problems are configuration errors (exit 1, not argparse's 2)
        raise ConfigError(message)


def _pos_tag(t: int) -> str:
    return f"pos_{t:03d}"


def _estimate_dir(out: Path, method: str, p: float) -> Path:
    return out / "estimates" / (f"svd_p{p:g}" if method == "svd" else "cfar")


def _solution_dir(out: Path, args) -> Path:
    tag = args.ablation + ("_knownbias" if args.known_bias else "")
    return out / "solutions" / tag


def _load_scene(args) -> simulate.Scene:
    out = Path(args.out_dir)
    scene_file = out / "scene.json"
    if not scene_file.exists():
        raise ConfigError(f"scene file not found: {scene_file} (run simulate first)")
    return mio.read_scene(scene_file)


def _config_from(args, method: str = "svd", power_ratio: float = 99.0) -> PipelineConfig:
    return PipelineConfig(
        method=method,
        power_ratio=power_ratio,
        threshold_scale=args.power_threshold_scale,
        noise_floor=args.noise_floor,
        cfar_pfa=args.cfar_pfa,
    )


def cmd_simulate(args) -> int:
    out = Path(args.out_dir)
    if args.scene is not None:
        scene_path = Path(args.scene)
        if not scene_path.exists():
            raise ConfigError(f"scene file not found: {scene_path}")
        scene = mio.read_scene(scene_path)
    else:
        scene = simulate.default_scene(seed=args.seed, n_positions=args.positions)
    for sub in ("maps", "truth", "measurements"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    mio.write_scene(scene, out / "scene.json")
    config = _config_from(args)
    cb = config.codebook()
    meas = direct_measurements(scene, config, outlier_rate=args.outlier_rate)
    for t in range(scene.n_positions):
        bmap, paths = synthesize_map(scene, t, config, cb)
        mio.write_map_csv(bmap, out / "maps" / f"{_pos_tag(t)}.csv")
        mio.write_map_binary(bmap, out / "maps" / f"{_pos_tag(t)}.bin")
        mio.write_truth_paths(paths, t, out / "truth" / f"{_pos_tag(t)}.csv")
        mio.write_measurements(meas[t], out / "measurements" / f"{_pos_tag(t)}.csv")
    mio.write_manifest(out / "manifest.json", command="simulate",
                       seed=args.seed, n_positions=scene.n_positions,
                       noise_floor=config.noise_floor,
                       outlier_rate=args.outlier_rate,
                       codebook=[config.l_tx, config.l_rx])
    print(f"simulate: wrote {scene.n_positions} positions to {out}")
    return 0


def cmd_estimate(args) -> int:
    out = Path(args.out_dir)
    scene = _load_scene(args)
    methods = ["svd", "cfar"] if args.method == "both" else [args.method]
    ratios = [float(p) for p in args.power_ratio.split(",")]
    for method in methods:
        for p in (ratios if method == "svd" else [ratios[0]]):
            config = _config_from(args, method, p)
            cb = config.codebook()
            dest = _estimate_dir(out, method, p)
            dest.mkdir(parents=True, exist_ok=True)
            counts = []
            for t in range(scene.n_positions):
                map_file = out / "maps" / f"{_pos_tag(t)}.bin"
                if not map_file.exists():
                    raise ConfigError(f"missing map {map_file} (run simulate first)")
                bmap = mio.read_map_binary(map_file, cb)
                ests = estimate_position(scene, t, config, cb, bmap=bmap)
                mio.write_estimates(ests, t, dest / f"{_pos_tag(t)}.csv")
                counts.append(len(ests))
            print(f"estimate[{method}, p={p:g}]: "
                  f"{sum(counts)} paths over {scene.n_positions} positions")
    return 0


def cmd_slam(args) -> int:
    out = Path(args.out_dir)
    scene = _load_scene(args)
    config = _config_from(args, power_ratio=float(args.power_ratio.split(",")[0]))
    slam_cfg = SlamConfig.for_ablation(args.ablation)
    cov = config.measurement_covariance()
    meas = []
    for t in range(scene.n_positions):
        if args.source == "direct":
            src = out / "measurements" / f"{_pos_tag(t)}.csv"
            if not src.exists():
                raise ConfigError(f"missing measurements {src}")
            meas.append(mio.read_measurements(src, cov))
        else:
            src = _estimate_dir(out, args.method, config.power_ratio) / f"{_pos_tag(t)}.csv"
            if not src.exists():
                raise ConfigError(f"missing estimates {src} (run estimate first)")
            ests = mio.read_estimates(src)
            meas.append(measurements_from_estimates(ests, config))
    known = scene.bias_trajectory if args.known_bias else None
    t0 = time.perf_counter()
    solutions, failures = run_trajectory(scene.bs, meas, slam_cfg, known)
    runtime = time.perf_counter() - t0
    dest = _solution_dir(out, args)
    dest.mkdir(parents=True, exist_ok=True)
    for t, sol in enumerate(solutions):
        mio.write_solution(sol, dest / f"{_pos_tag(t)}.json",
                           failure=failures.get(t))
    mio.write_manifest(dest / "run.json", command="slam", ablation=args.ablation,
                       known_bias=args.known_bias, source=args.source,
                       runtime_s=runtime, failures=failures)
    n_ok = sum(s is not None for s in solutions)
    print(f"slam[{args.ablation}]: {n_ok}/{len(solutions)} positions solved "
          f"in {runtime:.2f} s")
    return 0


def cmd_eval(args) -> int:
    out = Path(args.out_dir)
    scene = _load_scene(args)
    config = _config_from(args, power_ratio=float(args.power_ratio.split(",")[0]))
    dest = _solution_dir(out, args)
    solutions = []
    for t in range(scene.n_positions):
        sol_file = dest / f"{_pos_tag(t)}.json"
        if not sol_file.exists():
            raise ConfigError(f"missing solution {sol_file} (run slam first)")
        solutions.append(mio.read_solution(sol_file))
    run_meta = {}
    run_file = dest / "run.json"
    if run_file.exists():
        run_meta = json.loads(run_file.read_text())
    report = trajectory_stats(solutions, scene,
                              runtime_s=run_meta.get("runtime_s", 0.0))

    gparams = GospaParams()
    est_dir = _estimate_dir(out, args.method, config.power_ratio)
    for t in range(scene.n_positions):
        est_file = est_dir / f"{_pos_tag(t)}.csv"
        if not est_file.exists():
            continue
        ests = mio.read_estimates(est_file)
        truth = simulate.true_paths(scene, t)
        gospa, _, n_fd, n_md = gospa_angles(
            [(e.aod, e.aoa) for e in ests],
            [(p.aod, p.aoa) for p in truth], gparams)
        n_slfd, gamma_slfd = slfd_metric(ests, SLFD_TAU_S, gparams)
        report.gospa_per_position.append(
            {"position": t, "gospa_deg": gospa, "n_fd": n_fd, "n_md": n_md})
        report.slfd_per_position.append(
            {"position": t, "n_slfd": n_slfd, "gamma_slfd_deg": gamma_slfd})

    (out / "eval").mkdir(parents=True, exist_ok=True)
    tag = args.ablation + ("_knownbias" if args.known_bias else "")
    mio.write_report(report, out / "eval" / f"{tag}_report.json",
                     out / "eval" / f"{tag}_report.csv")
    print(f"eval[{tag}]: position RMSE {report.position_rmse:.3f} m, "
          f"heading RMSE {report.heading_rmse_deg:.2f} deg, "
          f"bias RMSE {report.bias_rmse:.3f} m "
          f"({report.n_failed} failed positions)")
    return 0


def cmd_run_all(args) -> int:
    cmd_simulate(args)
    cmd_estimate(args)
    cmd_slam(args)
    cmd_eval(args)
    return 0


def _add_common(p):
    p.add_argument("--out-dir", required=True, help="run directory")
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--scene", default=None, help="scene JSON (default: bundled scene)")
    p.add_argument("--positions", type=int, default=45)
    p.add_argument("--noise-floor", type=float, default=0.05)
    p.add_argument("--outlier-rate", type=float, default=0.0)
    p.add_argument("--method", choices=["svd", "cfar", "both"], default="svd")
    p.add_argument("--power-ratio", default="99",
                   help="comma-separated percent values, e.g. 99,99.9,99.99")
    p.add_argument("--power-threshold-scale", type=float, default=1.0)
    p.add_argument("--cfar-pfa", type=float, default=0.002)
    p.add_argument("--ablation", choices=["ofv0", "ofv1", "ofv2", "proposed"],
                   default="proposed")
    p.add_argument("--known-bias", action="store_true")
    p.add_argument("--source", choices=["estimates", "direct"], default="estimates")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="mmwslam", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in [("simulate", cmd_simulate), ("estimate", cmd_estimate),
                     ("slam", cmd_slam), ("eval", cmd_eval),
                     ("run-all", cmd_run_all)]:
        p = sub.add_parser(name)
        _add_common(p)
        p.set_defaults(handler=fn)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.handler(args)
    except ConfigError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    except Exception as err:  # noqa: BLE001 - CLI boundary
        print(f"runtime failure: {type(err).__name__}: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
