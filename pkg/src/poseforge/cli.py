"""Command-line harness.

Commands: synth (write scene directories), train (fit the regressor and save
a checkpoint), pipeline (run clip/dino/hybrid over scenes and report),
report (merge metrics CSVs into one table). Configs are JSON, validated
against a schema; validation failures name the offending JSON pointer and
exit with code 2. Runtime failures exit 1, success 0.

``POSE_FORGE_THREADS`` caps scene-level parallelism; results are reduced in
scene order, so outputs are bitwise identical at any thread count.
"""

import argparse
import csv
import io
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor

import jsonschema

from .exceptions import ConfigRejectedError, PoseForgeError
from .geometry import CameraIntrinsics
from .icp import IcpConfig
from .metrics import Report, parse_csv, render_csv, render_report
from .object_model import load_model
from .pipelines import (
    PipelineScene,
    evaluate_pipeline_scene,
    export_scene,
    load_scene_dir,
)
from .pnp import RansacConfig
from .regressor import TrainConfig, load_checkpoint, save_checkpoint, train
from .synth import SceneConfig, generate_regression_dataset, generate_scene, scene_configs


class ConfigError(Exception):
    """Invalid configuration; maps to exit code 2."""


_CAMERA_SCHEMA = {
    "type": "object",
    "required": ["fx", "fy", "cx", "cy", "width", "height"],
    "additionalProperties": False,
    "properties": {
        "fx": {"type": "number", "exclusiveMinimum": 0},
        "fy": {"type": "number", "exclusiveMinimum": 0},
        "cx": {"type": "number"},
        "cy": {"type": "number"},
        "width": {"type": "integer", "minimum": 1},
        "height": {"type": "integer", "minimum": 1},
    },
}

_SCENE_BLOCK = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "seed": {"type": "integer", "minimum": 0},
        "n_scenes": {"type": "integer", "minimum": 1},
        "camera": _CAMERA_SCHEMA,
        "n_keypoints": {"type": "integer", "minimum": 1},
        "pixel_noise_sigma": {"type": "number", "minimum": 0},
        "outlier_rate": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
        "occlusion_rate": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
        "depth_range_mm": {
            "type": "array",
            "items": {"type": "number", "exclusiveMinimum": 0},
            "minItems": 2,
            "maxItems": 2,
        },
        "cloud_noise_sigma": {"type": "number", "minimum": 0},
        "feature_dim": {"type": "integer", "minimum": 1},
        "feature_stride_px": {"type": "number", "exclusiveMinimum": 0},
        "descriptor_noise_sigma": {"type": "number", "minimum": 0},
        "clip_feature_dim": {"type": "integer", "minimum": 8},
    },
}

SYNTH_SCHEMA = {
    "type": "object",
    "required": ["n_scenes", "model_path"],
    "additionalProperties": False,
    "properties": {
        **_SCENE_BLOCK["properties"],
        "model_path": {"type": "string"},
        "model_symmetric": {"type": "boolean"},
        "out": {"type": "string"},
    },
}

_RANSAC_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "inlier_threshold_px": {"type": "number", "exclusiveMinimum": 0},
        "max_iterations": {"type": "integer", "minimum": 1},
        "confidence": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
        "seed": {"type": "integer", "minimum": 0},
    },
}

_ICP_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "max_iterations": {"type": "integer", "minimum": 1},
        "convergence_tol": {"type": "number", "exclusiveMinimum": 0},
        "max_corr_dist_mm": {"type": "number", "exclusiveMinimum": 0},
    },
}

PIPELINE_SCHEMA = {
    "type": "object",
    "required": ["pipeline", "model_path", "scenes"],
    "additionalProperties": False,
    "properties": {
        "pipeline": {"enum": ["clip", "dino", "hybrid"]},
        "method_name": {"type": "string"},
        "model_path": {"type": "string"},
        "model_symmetric": {"type": "boolean"},
        "scenes": {
            "type": "object",
            "additionalProperties": False,
            "minProperties": 1,
            "maxProperties": 1,
            "properties": {"dir": {"type": "string"}, "synthetic": _SCENE_BLOCK},
        },
        "ransac": _RANSAC_SCHEMA,
        "icp": _ICP_SCHEMA,
        "min_score": {"type": "number", "minimum": -1, "maximum": 1},
        "checkpoint": {"type": "string"},
        "seed": {"type": "integer", "minimum": 0},
        "out": {"type": "string"},
    },
}

TRAIN_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "seed": {"type": "integer", "minimum": 0},
        "n_samples": {"type": "integer", "minimum": 1},
        "feature_dim": {"type": "integer", "minimum": 8},
        "noise_sigma": {"type": "number", "minimum": 0},
        "epochs": {"type": "integer", "minimum": 0},
        "learning_rate": {"type": "number", "minimum": 0},
        "weight_decay": {"type": "number", "minimum": 0},
        "batch_size": {"type": "integer", "minimum": 1},
        "translation_weight": {"type": "number", "exclusiveMinimum": 0},
        "hidden_sizes": {
            "type": "array",
            "items": {"type": "integer", "minimum": 1},
            "minItems": 1,
        },
        "out": {"type": "string"},
    },
}


def load_config(path, schema):
    try:
        with open(path, "r", encoding="utf-8") as fh:
            config = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path} is not valid JSON: {exc}") from None
    validator = jsonschema.Draft202012Validator(schema)
    errors = sorted(validator.iter_errors(config), key=lambda e: list(e.absolute_path))
    if errors:
        err = errors[0]
        pointer = "/" + "/".join(str(p) for p in err.absolute_path)
        raise ConfigError(f"{path}: {pointer}: {err.message}")
    return config


def _camera_from(obj) -> CameraIntrinsics:
    if obj is None:
        return SceneConfig().camera
    return CameraIntrinsics(
        fx=float(obj["fx"]),
        fy=float(obj["fy"]),
        cx=float(obj["cx"]),
        cy=float(obj["cy"]),
        width=int(obj["width"]),
        height=int(obj["height"]),
    )


def _scene_config_from(block, seed_override=None) -> SceneConfig:
    kwargs = {}
    for key in (
        "seed",
        "n_keypoints",
        "pixel_noise_sigma",
        "outlier_rate",
        "occlusion_rate",
        "cloud_noise_sigma",
        "feature_dim",
        "feature_stride_px",
        "descriptor_noise_sigma",
        "clip_feature_dim",
    ):
        if key in block:
            kwargs[key] = block[key]
    if "camera" in block:
        kwargs["camera"] = _camera_from(block["camera"])
    if "depth_range_mm" in block:
        kwargs["depth_range_mm"] = tuple(block["depth_range_mm"])
    if seed_override is not None:
        kwargs["seed"] = seed_override
    try:
        return SceneConfig(**kwargs)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def _thread_count() -> int:
    raw = os.environ.get("POSE_FORGE_THREADS", "")
    if raw:
        try:
            n = int(raw)
        except ValueError:
            raise ConfigError(f"POSE_FORGE_THREADS must be an integer, got {raw!r}") from None
        if n < 1:
            raise ConfigError("POSE_FORGE_THREADS must be >= 1")
        return n
    return min(8, os.cpu_count() or 1)


def _parallel_map(fn, items):
    """Order-preserving map; parallel when the thread cap allows it."""
    n = _thread_count()
    if n == 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))


def _write_text(path, text):
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


# ---------------------------------------------------------------------------
# Commands


def cmd_synth(args) -> int:
    config = load_config(args.config, SYNTH_SCHEMA)
    if args.seed is not None:
        config["seed"] = args.seed
    out_dir = args.out or config.get("out")
    if not out_dir:
        raise ConfigError("no output directory: set 'out' in the config or pass --out")
    base = _scene_config_from(config)
    model = load_model(config["model_path"], symmetric=config.get("model_symmetric", False))
    n_scenes = config["n_scenes"]

    configs = scene_configs(base, n_scenes)
    os.makedirs(out_dir, exist_ok=True)
    entries = []
    scenes = _parallel_map(lambda cfg: generate_scene(cfg, model), configs)
    for i, (cfg, scene) in enumerate(zip(configs, scenes)):
        name = f"scene_{i:04d}"
        export_scene(scene, os.path.join(out_dir, name))
        entries.append({"dir": name, "seed": cfg.seed})
    manifest = {
        "format": "poseforge-scenes-v1",
        "n_scenes": n_scenes,
        "master_seed": base.seed,
        "model_path": os.path.abspath(config["model_path"]),
        "model_symmetric": config.get("model_symmetric", False),
        "camera": {
            "fx": base.camera.fx,
            "fy": base.camera.fy,
            "cx": base.camera.cx,
            "cy": base.camera.cy,
            "width": base.camera.width,
            "height": base.camera.height,
        },
        "scenes": entries,
    }
    _write_text(
        os.path.join(out_dir, "manifest.json"),
        json.dumps(manifest, indent=2, sort_keys=True) + "\n",
    )
    print(f"wrote {n_scenes} scenes to {out_dir}")
    return 0


def cmd_train(args) -> int:
    config = load_config(args.config, TRAIN_SCHEMA)
    if args.seed is not None:
        config["seed"] = args.seed
    out_dir = args.out or config.get("out")
    if not out_dir:
        raise ConfigError("no output directory: set 'out' in the config or pass --out")
    seed = config.get("seed", 0)
    dataset = generate_regression_dataset(
        seed=seed,
        n=config.get("n_samples", 500),
        dim=config.get("feature_dim", 32),
        noise_sigma=config.get("noise_sigma", 0.01),
    )
    train_cfg = TrainConfig(
        epochs=config.get("epochs", 100),
        learning_rate=config.get("learning_rate", 1e-4),
        weight_decay=config.get("weight_decay", 1e-2),
        batch_size=config.get("batch_size", 16),
        seed=seed,
        translation_weight=config.get("translation_weight", 1e-4),
        hidden_sizes=tuple(config.get("hidden_sizes", (256, 256))),
    )
    params, trace = train(train_cfg, dataset)
    save_checkpoint(params, out_dir)
    _write_text(
        os.path.join(out_dir, "loss_trace.csv"),
        "epoch,loss\n" + "".join(f"{e},{v!r}\n" for e, v in enumerate(trace)),
    )
    print(f"trained {train_cfg.epochs} epochs: epoch0={trace[0]:.6f} final={trace[-1]:.6f}")
    return 0


def _pipeline_scenes(config, seed_override):
    """Yield (scene_id, PipelineScene | None, load_error) plus the camera.

    Disk-load failures are isolated per scene so one corrupt directory never
    aborts a batch; synthetic-generation failures are configuration errors
    and propagate.
    """
    source = config["scenes"]
    if "dir" in source:
        manifest_path = os.path.join(source["dir"], "manifest.json")
        try:
            with open(manifest_path, "r", encoding="utf-8") as fh:
                manifest = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read scene manifest: {exc}") from None
        camera = _camera_from(manifest["camera"])
        ids = [entry["dir"] for entry in manifest["scenes"]]

        def _load(sid):
            try:
                return sid, load_scene_dir(os.path.join(source["dir"], sid)), None
            except (PoseForgeError, OSError, ValueError, KeyError) as exc:
                return sid, None, f"{type(exc).__name__}: {exc}"

        return _parallel_map(_load, ids), camera
    block = source["synthetic"]
    base = _scene_config_from(block, seed_override)
    n_scenes = block.get("n_scenes", 1)
    model = load_model(config["model_path"], symmetric=config.get("model_symmetric", False))
    configs = scene_configs(base, n_scenes)
    scenes = _parallel_map(lambda cfg: generate_scene(cfg, model), configs)
    return (
        [
            (f"scene_{i:04d}", PipelineScene.from_scene(s, f"scene_{i:04d}"), None)
            for i, s in enumerate(scenes)
        ],
        base.camera,
    )


def cmd_pipeline(args) -> int:
    config = load_config(args.config, PIPELINE_SCHEMA)
    seed_override = args.seed
    out_dir = args.out or config.get("out")
    if not out_dir:
        raise ConfigError("no output directory: set 'out' in the config or pass --out")
    kind = config["pipeline"]
    default_names = {"clip": "CLIP Based", "dino": "DINOv2 Based", "hybrid": "Hybrid"}
    method = config.get("method_name", default_names[kind])

    model = load_model(config["model_path"], symmetric=config.get("model_symmetric", False))
    entries, camera = _pipeline_scenes(config, seed_override)

    ransac_kwargs = dict(config.get("ransac", {}))
    if seed_override is not None:
        ransac_kwargs["seed"] = seed_override
    ransac_cfg = RansacConfig(**ransac_kwargs)
    icp_cfg = IcpConfig(**config.get("icp", {}))
    params = None
    if kind in ("clip", "hybrid"):
        if "checkpoint" not in config:
            raise ConfigError(f"/checkpoint: the {kind} pipeline requires a trained checkpoint")
        params = load_checkpoint(config["checkpoint"])

    def _run(entry):
        scene_id, scene, load_error = entry
        if load_error is not None:
            from .pipelines import SceneOutcome

            return SceneOutcome(scene_id, error=load_error)
        return evaluate_pipeline_scene(
            kind,
            scene,
            model,
            camera,
            ransac_cfg=ransac_cfg,
            icp_cfg=icp_cfg,
            params=params,
            min_score=config.get("min_score", 0.3),
            method_name=method,
        )

    outcomes = _parallel_map(_run, entries)

    by_method = {}
    failures = []
    for outcome in outcomes:
        if outcome.error:
            failures.append((outcome.scene_id, outcome.error))
            continue
        for label, record in outcome.records:
            by_method.setdefault(label, []).append(record)
    if not by_method:
        detail = "; ".join(f"{sid}: {err}" for sid, err in failures[:5])
        raise PoseForgeError(f"every scene failed ({detail})")

    measured = [Report(label, tuple(records)) for label, records in by_method.items()]
    injected = []
    if args.inject_reference:
        with open(args.inject_reference, "r", encoding="utf-8") as fh:
            injected = parse_csv(fh.read(), source=args.inject_reference, consistent=False)

    table = render_report(injected + measured, n_reference=len(injected))
    if failures:
        table += "\nfailed scenes:\n"
        table += "".join(f"  {sid}: {err}\n" for sid, err in failures)
    _write_text(os.path.join(out_dir, "report.txt"), table)
    # metrics.csv carries only this run's measurements, never injected rows
    _write_text(os.path.join(out_dir, "metrics.csv"), render_csv(measured))
    if failures:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["method", "scene_id", "reason"])
        for sid, err in failures:
            writer.writerow([method, sid, err])
        _write_text(os.path.join(out_dir, "failures.csv"), buf.getvalue())
    sys.stdout.write(table)
    return 0


def cmd_report(args) -> int:
    reports = []
    n_reference = 0
    if args.inject_reference:
        with open(args.inject_reference, "r", encoding="utf-8") as fh:
            injected = parse_csv(fh.read(), source=args.inject_reference, consistent=False)
        n_reference = len(injected)
        reports.extend(injected)
    for path in args.csvs:
        try:
            with open(path, "r", encoding="utf-8") as fh:
                reports.extend(parse_csv(fh.read(), source=path))
        except OSError as exc:
            raise PoseForgeError(f"cannot read {path}: {exc}") from None
        except ValueError as exc:
            raise PoseForgeError(str(exc)) from None
    if not reports:
        raise ConfigError("report needs at least one CSV (positional or --inject-reference)")
    table = render_report(reports, n_reference=n_reference)
    if args.out:
        _write_text(os.path.join(args.out, "report.txt"), table)
    sys.stdout.write(table)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="poseforge",
        description="6D pose estimation pipelines, metrics and synthetic scenes",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p, needs_config=True):
        if needs_config:
            p.add_argument("--config", required=True, help="JSON config path")
        p.add_argument("--out", default=None, help="output directory (overrides config)")
        p.add_argument("--seed", type=int, default=None, help="seed override")

    p_synth = sub.add_parser("synth", help="generate synthetic scene directories")
    add_common(p_synth)
    p_synth.set_defaults(fn=cmd_synth)

    p_train = sub.add_parser("train", help="train the pose regressor")
    add_common(p_train)
    p_train.set_defaults(fn=cmd_train)

    p_pipe = sub.add_parser("pipeline", help="run a pose pipeline over scenes")
    add_common(p_pipe)
    p_pipe.add_argument(
        "--inject-reference",
        default=None,
        metavar="CSV",
        help="metrics CSV whose rows are added as [reference] columns",
    )
    p_pipe.set_defaults(fn=cmd_pipeline)

    p_report = sub.add_parser("report", help="merge metrics CSVs into one table")
    p_report.add_argument("csvs", nargs="*", help="metrics CSV files")
    p_report.add_argument("--out", default=None)
    p_report.add_argument("--seed", type=int, default=None, help=argparse.SUPPRESS)
    p_report.add_argument("--inject-reference", default=None, metavar="CSV")
    p_report.set_defaults(fn=cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigError, ConfigRejectedError) as exc:
        print(f"error: invalid configuration: {exc}", file=sys.stderr)
        return 2
    except (PoseForgeError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
