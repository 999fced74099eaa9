"""Command-line workbench: dataset generation, training, evaluation,
servo trials, and tolerance-grid fitting.

Every command is deterministic given its config; reports are written both
machine-readable (CSV/JSON) and human-readable from the same run.
Exit codes: 0 success, 1 validation error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from .geometry import Pose, compose, inverse, pose_error
from .sampler import (
    DatasetManifest,
    SamplingRanges,
    generate_dataset,
    insertion_pose_for,
    load_manifest,
    load_samples,
    make_default_pose,
    placement_scene,
    sample_pose,
    split_indices,
)
from .scene import default_connectors, render
from .servo import (
    INSERTION_GRID,
    fit_tolerance,
    insertion_success,
    iterative_servo,
    one_shot,
    write_episode_log,
)
from .tensornet import (
    TrainConfig,
    default_network_spec,
    evaluate_mean_errors,
    init_uniform,
    load_checkpoint,
    save_checkpoint,
    train,
)
from .tensornet.training import all_pairs

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_RUNTIME = 2


class ConfigError(ValueError):
    pass


def _load_config(defaults: dict, path, overrides: dict) -> dict:
    cfg = dict(defaults)
    if path:
        with open(path) as f:
            user = json.load(f)
        unknown = set(user) - set(defaults)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        cfg.update(user)
    for k, v in overrides.items():
        if v is not None:
            cfg[k] = v
    return cfg


def _write_text_atomic(path: str, text: str) -> None:
    tmp = path + ".tmp"
    with open(tmp, "w") as f:
        f.write(text)
    os.replace(tmp, path)


def _format_error_table(rows: dict) -> str:
    """Aligned text table of per-connector mean absolute errors."""
    header = f"{'connector':>9} {'e_x/mm':>8} {'e_y/mm':>8} {'e_z/mm':>8} " \
             f"{'e_roll/deg':>10} {'e_pitch/deg':>11} {'e_yaw/deg':>9}"
    lines = [header]
    for cid, e in rows.items():
        lines.append(
            f"{cid:>9} {e['e_x']:8.3f} {e['e_y']:8.3f} {e['e_z']:8.3f} "
            f"{e['e_roll']:10.3f} {e['e_pitch']:11.3f} {e['e_yaw']:9.3f}"
        )
    return "\n".join(lines) + "\n"


def _errors_csv(rows: dict) -> str:
    lines = ["connector,e_x_mm,e_y_mm,e_z_mm,e_roll_deg,e_pitch_deg,e_yaw_deg"]
    for cid, e in rows.items():
        lines.append(
            f"{cid},{e['e_x']:.6f},{e['e_y']:.6f},{e['e_z']:.6f},"
            f"{e['e_roll']:.6f},{e['e_pitch']:.6f},{e['e_yaw']:.6f}"
        )
    return "\n".join(lines) + "\n"


GENERATE_DEFAULTS = {
    "connectors": ["A1"],
    "samples_per_placement": 200,
    "val_size": 50,
    "test_size": 50,
    "seed": 0,
    "width": 64,
    "height": 64,
    "cylinder_radius": 0.005,
    "cylinder_height": 0.010,
    "roll_pitch_limit": 5.0,
    "yaw_limit": 10.0,
}


def cmd_generate(args) -> int:
    cfg = _load_config(GENERATE_DEFAULTS, args.config, {"seed": args.seed})
    manifest = DatasetManifest(
        connectors=list(cfg["connectors"]),
        samples_per_placement=int(cfg["samples_per_placement"]),
        val_size=int(cfg["val_size"]),
        test_size=int(cfg["test_size"]),
        seed=int(cfg["seed"]),
        ranges=SamplingRanges(
            cfg["cylinder_radius"], cfg["cylinder_height"],
            cfg["roll_pitch_limit"], cfg["yaw_limit"],
        ),
        width=int(cfg["width"]),
        height=int(cfg["height"]),
    )
    manifest.validate()
    out = args.out
    if not out:
        raise ConfigError("generate requires --out")
    parent = os.path.dirname(os.path.abspath(out))
    if not os.path.isdir(parent):
        raise ConfigError(f"parent directory does not exist: {parent}")
    generate_dataset(manifest, out)
    total = manifest.samples_per_connector * len(manifest.connectors)
    print(f"dataset written to {out}")
    print(f"connectors: {', '.join(manifest.connectors)}")
    print(f"samples per connector: {manifest.samples_per_connector} "
          f"({manifest.samples_per_placement} x {len(manifest.placements)} placements)")
    print(f"splits per connector: train {manifest.samples_per_connector - 100}, "
          f"val {manifest.val_size}, test {manifest.test_size}")
    print(f"total samples: {total}, seed: {manifest.seed}")
    return EXIT_OK


TRAIN_DEFAULTS = {
    "dataset": None,
    "connectors": None,  # default: all in the manifest
    "learning_rate": 1e-3,
    "halving_epochs": [4, 6, 8],
    "epochs": 10,
    "batch_size": 32,
    "loss_weight": 0.99,
    "pairs_per_epoch": 25600,
    "seed": 0,
    "resume": None,
}


def cmd_train(args) -> int:
    cfg = _load_config(TRAIN_DEFAULTS, args.config, {"seed": args.seed, "dataset": args.dataset})
    if not cfg["dataset"]:
        raise ConfigError("train requires a dataset (--dataset or config)")
    if not args.out:
        raise ConfigError("train requires --out")
    os.makedirs(args.out, exist_ok=True)

    manifest = load_manifest(cfg["dataset"])
    connectors = cfg["connectors"] or manifest.connectors
    train_sets, val_sets = [], []
    for cid in connectors:
        samples = load_samples(cfg["dataset"], cid)
        tr, va, _ = split_indices(manifest, cid)
        train_sets.append([samples[i] for i in tr])
        val_sets.append([samples[i] for i in va])

    config = TrainConfig(
        learning_rate=float(cfg["learning_rate"]),
        halving_epochs=tuple(cfg["halving_epochs"]),
        epochs=int(cfg["epochs"]),
        batch_size=int(cfg["batch_size"]),
        loss_weight=float(cfg["loss_weight"]),
        pairs_per_epoch=int(cfg["pairs_per_epoch"]),
        seed=int(cfg["seed"]),
    )

    start_epoch = 0
    if cfg["resume"]:
        model, header = load_checkpoint(cfg["resume"])
        start_epoch = int(header["epoch"])
        print(f"resumed from {cfg['resume']} at epoch {start_epoch}")
    else:
        model = init_uniform(default_network_spec(manifest.height, manifest.width),
                             config.seed)

    ckpt_path = os.path.join(args.out, "checkpoint.bin")

    def log(rec):
        print(f"epoch {rec['epoch']:3d}  lr {rec['lr']:.2e}  "
              f"loss {rec['train_loss']:.6f}  "
              f"val t {rec['val_e_x']:.3f}/{rec['val_e_y']:.3f}/{rec['val_e_z']:.3f} mm  "
              f"val r {rec['val_e_roll']:.3f}/{rec['val_e_pitch']:.3f}/"
              f"{rec['val_e_yaw']:.3f} deg")

    metrics = train(model, train_sets, val_sets, config,
                    checkpoint_path=ckpt_path, start_epoch=start_epoch, log=log)

    lines = ["epoch,lr,train_loss,val_e_x,val_e_y,val_e_z,val_e_roll,val_e_pitch,val_e_yaw"]
    for m in metrics:
        lines.append(
            f"{m['epoch']},{m['lr']:.8g},{m['train_loss']:.8g},"
            f"{m['val_e_x']:.6f},{m['val_e_y']:.6f},{m['val_e_z']:.6f},"
            f"{m['val_e_roll']:.6f},{m['val_e_pitch']:.6f},{m['val_e_yaw']:.6f}"
        )
    _write_text_atomic(os.path.join(args.out, "metrics.csv"), "\n".join(lines) + "\n")
    if not os.path.exists(ckpt_path):
        save_checkpoint(ckpt_path, model, epoch=metrics[-1]["epoch"],
                        metrics=metrics[-1], seed=config.seed)
    print(f"checkpoint: {ckpt_path}")
    return EXIT_OK


EVAL_DEFAULTS = {
    "dataset": None,
    "checkpoint": None,
    "connectors": None,
    "thresholds_mm": [round(0.1 * i, 1) for i in range(0, 51)],
    "thresholds_deg": [round(0.1 * i, 1) for i in range(0, 51)],
}


def cmd_eval(args) -> int:
    cfg = _load_config(EVAL_DEFAULTS, args.config,
                       {"dataset": args.dataset, "checkpoint": args.checkpoint})
    if not cfg["dataset"] or not cfg["checkpoint"]:
        raise ConfigError("eval requires a dataset and a checkpoint")
    if not args.out:
        raise ConfigError("eval requires --out")
    os.makedirs(args.out, exist_ok=True)

    manifest = load_manifest(cfg["dataset"])
    model, _ = load_checkpoint(cfg["checkpoint"])
    connectors = cfg["connectors"] or manifest.connectors
    if manifest.test_size <= 0:
        raise ConfigError("dataset has no test split")

    from .geometry import relative_label

    rows = {}
    curve_lines = ["connector,kind,threshold,fraction"]
    for cid in connectors:
        samples = load_samples(cfg["dataset"], cid)
        _, _, test = split_indices(manifest, cid)
        pairs = all_pairs(test)
        rows[cid] = evaluate_mean_errors(model, samples, pairs)

        # per-pair worst-axis errors for the pass-fraction curves
        t_err, r_err = [], []
        for start in range(0, len(pairs), 64):
            chunk = pairs[start : start + 64]
            a = np.stack([samples[i].image.pixels for i, _ in chunk])[:, None]
            b = np.stack([samples[j].image.pixels for _, j in chunk])[:, None]
            out = model.forward(a, b).data
            for row, (i, j) in zip(out, chunk):
                truth = relative_label(samples[i].t_d2e, samples[j].t_d2e)
                e = pose_error(truth, Pose.from_list(row))
                t_err.append(max(e.e_x, e.e_y, e.e_z))
                r_err.append(max(e.e_roll, e.e_pitch, e.e_yaw))
        t_err, r_err = np.array(t_err), np.array(r_err)
        for thr in cfg["thresholds_mm"]:
            curve_lines.append(f"{cid},translation_mm,{thr},{np.mean(t_err < thr):.6f}")
        for thr in cfg["thresholds_deg"]:
            curve_lines.append(f"{cid},rotation_deg,{thr},{np.mean(r_err < thr):.6f}")
        print(f"{cid}: {len(pairs)} test pairs")

    _write_text_atomic(os.path.join(args.out, "errors.csv"), _errors_csv(rows))
    _write_text_atomic(os.path.join(args.out, "pass_fraction.csv"),
                       "\n".join(curve_lines) + "\n")
    table = _format_error_table(rows)
    _write_text_atomic(os.path.join(args.out, "errors.txt"), table)
    print(table, end="")
    return EXIT_OK


SERVO_DEFAULTS = {
    "dataset": None,
    "checkpoint": None,
    "connector": "A1",
    "mode": "oneshot",  # or "iterative"
    "trials": 50,
    "seed": 0,
    "range_multiplier": 3.0,  # iterative start offsets vs training range
    "max_iter": 30,
    "visibility": [1.0, 0.5, 0.3],
    "dz_allowance_mm": 5.0,
}


def _servo_setup(cfg):
    connectors = default_connectors()
    spec = connectors[cfg["connector"]]
    if cfg["dataset"]:
        manifest = load_manifest(cfg["dataset"])
        ranges = manifest.ranges
        k = manifest.intrinsics()
        seed = manifest.seed
    else:
        manifest = None
        ranges = SamplingRanges()
        from .scene import CameraIntrinsics

        k = CameraIntrinsics.from_hfov()
        seed = 0
    placement = (0.0, 0.0, 0.0)
    scene = placement_scene(spec, placement, seed, 0, 0)
    default = make_default_pose(insertion_pose_for(spec, placement))
    return scene, default, ranges, k


def _run_one_shot_trial(model, scene, default, ranges, k, tol, seed, trial):
    from .scene import occlude  # imported for parity with iterative trials

    rng = np.random.default_rng([seed, 301, trial])
    t_ref_world = default
    image_ref = render(scene, t_ref_world, k)
    t_test_world = sample_pose(rng, default, ranges)
    image_test = render(scene, t_test_world, k)
    d2e_test = compose(inverse(default), t_test_world)
    t_est_d2e = one_shot(model, image_ref, image_test, d2e_test)
    t_est_world = compose(default, t_est_d2e)
    ok = insertion_success(t_est_world, t_ref_world, tol)
    err = pose_error(t_ref_world, t_est_world)
    return {
        "trial": trial,
        "success": bool(ok),
        "error_mm": [err.e_x, err.e_y, err.e_z],
        "error_deg": [err.e_roll, err.e_pitch, err.e_yaw],
    }


def _run_iterative_trial(model, scene, default, ranges, k, tol, seed, trial,
                         multiplier, max_iter, visible_fraction, log_path=None):
    from .scene import occlude

    rng = np.random.default_rng([seed, 302, trial])
    wide = SamplingRanges(
        ranges.cylinder_radius * multiplier,
        ranges.cylinder_height * multiplier,
        ranges.roll_pitch_limit * multiplier,
        ranges.yaw_limit * multiplier,
    )
    t_start_world = sample_pose(rng, default, wide)
    t_ref = Pose.identity()  # reference = default pose, in d2e coordinates
    t_start = compose(inverse(default), t_start_world)

    render_count = [0]

    def render_fn(pose):
        img = render(scene, compose(default, pose), k)
        render_count[0] += 1
        # render 1 is the clean reference, render 2 the first (possibly
        # occluded) test view; later views are clean again as the camera
        # recenters on the connector
        if render_count[0] == 2 and visible_fraction < 1.0:
            return occlude(img, visible_fraction)
        return img

    result = iterative_servo(model, render_fn, t_ref, t_start, max_iter=max_iter)
    t_final_world = compose(default, result.trajectory[-1])
    ok = insertion_success(t_final_world, default, tol)
    if log_path:
        write_episode_log(log_path, result, t_ref)
    e = result.final_error
    return {
        "trial": trial,
        "visible_fraction": visible_fraction,
        "converged": bool(result.converged),
        "iterations": result.iterations,
        "success": bool(ok),
        "error_mm": [e.e_x, e.e_y, e.e_z],
        "error_deg": [e.e_roll, e.e_pitch, e.e_yaw],
    }


def cmd_servo(args) -> int:
    cfg = _load_config(SERVO_DEFAULTS, args.config, {
        "dataset": args.dataset, "checkpoint": args.checkpoint, "seed": args.seed,
    })
    if not cfg["checkpoint"]:
        raise ConfigError("servo requires a checkpoint")
    if not args.out:
        raise ConfigError("servo requires --out")
    os.makedirs(args.out, exist_ok=True)

    model, _ = load_checkpoint(cfg["checkpoint"])
    scene, default, ranges, k = _servo_setup(cfg)
    tol = fit_tolerance(INSERTION_GRID, dz_allowance_mm=float(cfg["dz_allowance_mm"]))
    seed = int(cfg["seed"])
    trials = int(cfg["trials"])
    jobs = max(1, args.jobs or 1)

    results = []
    if cfg["mode"] == "oneshot":
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            futs = [pool.submit(_run_one_shot_trial, model, scene, default,
                                ranges, k, tol, seed, t) for t in range(trials)]
            results = [f.result() for f in futs]
        successes = sum(r["success"] for r in results)
        summary = {
            "mode": "oneshot",
            "connector": cfg["connector"],
            "seed": seed,
            "trials": trials,
            "successes": successes,
            "success_rate": successes / trials,
            "results": results,
        }
        print(f"one-shot: {successes}/{trials} insertions "
              f"({100.0 * successes / trials:.1f}%)")
    elif cfg["mode"] == "iterative":
        sweep = {}
        for vis in cfg["visibility"]:
            with ThreadPoolExecutor(max_workers=jobs) as pool:
                futs = [
                    pool.submit(
                        _run_iterative_trial, model, scene, default, ranges, k,
                        tol, seed, t, float(cfg["range_multiplier"]),
                        int(cfg["max_iter"]), float(vis),
                        os.path.join(args.out, f"episode_v{int(vis * 100)}_{t}.jsonl"),
                    )
                    for t in range(trials)
                ]
                rows = [f.result() for f in futs]
            results.extend(rows)
            conv = sum(r["converged"] for r in rows)
            iters = [r["iterations"] for r in rows if r["converged"]]
            sweep[f"{int(vis * 100)}%"] = {
                "converged": conv,
                "trials": trials,
                "mean_iterations": float(np.mean(iters)) if iters else None,
                "successes": sum(r["success"] for r in rows),
            }
            print(f"visibility {int(vis * 100):3d}%: {conv}/{trials} converged, "
                  f"{sweep[f'{int(vis * 100)}%']['successes']}/{trials} insertions")
        summary = {
            "mode": "iterative",
            "connector": cfg["connector"],
            "seed": seed,
            "trials": trials,
            "visibility_sweep": sweep,
            "results": results,
        }
    else:
        raise ConfigError(f"unknown servo mode: {cfg['mode']}")

    _write_text_atomic(os.path.join(args.out, "summary.json"),
                       json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return EXIT_OK


TOLERANCE_DEFAULTS = {
    "grid": None,  # {"mm": [...], "deg": [...], "passes": [[...], ...]}
    "dz_allowance_mm": 5.0,
}


def cmd_tolerance(args) -> int:
    cfg = _load_config(TOLERANCE_DEFAULTS, args.config, {})
    if cfg["grid"]:
        from .servo import ToleranceGrid

        g = cfg["grid"]
        grid = ToleranceGrid(tuple(g["mm"]), tuple(g["deg"]),
                             tuple(tuple(bool(v) for v in row) for row in g["passes"]))
    else:
        grid = INSERTION_GRID

    model = fit_tolerance(grid, dz_allowance_mm=float(cfg["dz_allowance_mm"]))
    correct = 0
    lines = []
    header = "deg\\mm " + " ".join(f"{t:5.2f}" for t in grid.mm)
    lines.append(header)
    for r, d in enumerate(grid.deg):
        cells = []
        for c, t in enumerate(grid.mm):
            truth = grid.passes[r][c]
            pred = t <= model.max_translation_mm(d)
            correct += truth == pred
            cells.append("  ok " if truth else " fail")
        lines.append(f"{d:6.2f} " + " ".join(cells))
    total = len(grid.mm) * len(grid.deg)

    degs = [k[0] for k in model.knots]
    mms = [k[1] for k in model.knots]
    monotone = all(b <= a for a, b in zip(mms, mms[1:]))

    lines.append("")
    lines.append("fitted frontier knots (deg -> mm): "
                 + ", ".join(f"{d:.2f} -> {m:.3f}" for d, m in model.knots))
    lines.append(f"reproduced cells: {correct}/{total}")
    lines.append(f"frontier monotone (non-increasing): {monotone}")
    text = "\n".join(lines) + "\n"
    print(text, end="")

    if args.out:
        os.makedirs(args.out, exist_ok=True)
        _write_text_atomic(os.path.join(args.out, "tolerance.txt"), text)
        _write_text_atomic(
            os.path.join(args.out, "tolerance.json"),
            json.dumps({
                "model": model.to_json(),
                "reproduced_cells": correct,
                "total_cells": total,
                "monotone": monotone,
            }, indent=2, sort_keys=True) + "\n",
        )
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="servobench",
        description="Siamese relative-pose visual-servoing workbench",
    )
    parser.add_argument("--config", help="JSON config file for the subcommand")
    parser.add_argument("--seed", type=int, help="override the config seed")
    parser.add_argument("--jobs", type=int, default=1, help="trial-level parallelism")
    parser.add_argument("--out", help="output directory")

    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("generate", help="render and persist a dataset")

    p_train = sub.add_parser("train", help="train the Siamese model")
    p_train.add_argument("--dataset", help="dataset directory")

    p_eval = sub.add_parser("eval", help="test-set error tables and curves")
    p_eval.add_argument("--dataset", help="dataset directory")
    p_eval.add_argument("--checkpoint", help="model checkpoint")

    p_servo = sub.add_parser("servo", help="one-shot or iterative servo trials")
    p_servo.add_argument("--dataset", help="dataset directory (for ranges/intrinsics)")
    p_servo.add_argument("--checkpoint", help="model checkpoint")

    sub.add_parser("tolerance", help="fit the insertion-tolerance frontier")

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    handlers = {
        "generate": cmd_generate,
        "train": cmd_train,
        "eval": cmd_eval,
        "servo": cmd_servo,
        "tolerance": cmd_tolerance,
    }
    try:
        return handlers[args.command](args)
    except (ConfigError, ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"runtime failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
