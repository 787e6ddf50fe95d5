"""Command-line entry point: run, render, eval, gradcheck.

Exit codes: 0 ok, 2 configuration error, 3 runtime abort, 4 verification
failure.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import io
from .config import ConfigError, RunConfig, load_config
from .gradcheck import run_audit
from .objectives import capped_psnr, ssim
from .oracle import (
    FileExchangeOracle,
    OracleTimeoutError,
    SyntheticOracle,
    ground_truth_cloud,
    make_monocular_video,
    make_scene,
)
from .pipeline import CollapseError, MetricRow, PipelineAbort, RunDirectory, metrics_csv, run_full
from .rasterizer import render
from .scene import VideoSequence
from .views import EVAL_AZIMUTHS, reference_camera

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3
EXIT_VERIFY = 4

CONFIG_SNAPSHOT = "config.json"
LOCK_NAME = ".lock"

log = logging.getLogger("ar4d")


class LockHeldError(RuntimeError):
    pass


class RunLock:
    """Advisory lock file holding the owner's pid. A lock whose owner is gone
    is treated as stale and taken over."""

    def __init__(self, root: Path):
        self.path = root / LOCK_NAME

    def _stale(self) -> bool:
        try:
            pid = int(self.path.read_text().strip() or 0)
        except (OSError, ValueError):
            return True
        if pid <= 0:
            return True
        try:
            os.kill(pid, 0)
        except ProcessLookupError:
            return True
        except PermissionError:
            return False
        return False

    def __enter__(self):
        for _ in range(2):
            try:
                fd = os.open(self.path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
            except FileExistsError:
                if self._stale():
                    self.path.unlink(missing_ok=True)
                    continue
                raise LockHeldError(f"run directory {self.path.parent} is locked by another process ({self.path})")
            with os.fdopen(fd, "w") as fh:
                fh.write(str(os.getpid()))
            return self
        raise LockHeldError(f"could not acquire {self.path}")

    def __exit__(self, *exc):
        self.path.unlink(missing_ok=True)
        return False


def frame_png_name(k: int, azimuth: float) -> str:
    return f"frame_{k:04d}_az{azimuth:+04.0f}.png"


def build_scene(cfg: RunConfig):
    if cfg.scene is None:
        return None
    s = cfg.scene
    return make_scene(s.preset, s.n_splats, s.frame_count, s.seed, s.angular_velocity_deg, s.amplitude, s.phase)


def build_inputs(cfg: RunConfig):
    """(scene or None, video, oracle) described by a run config."""
    ref = reference_camera(*cfg.train_size)
    scene = build_scene(cfg)
    if scene is not None:
        video = make_monocular_video(scene, ref, cfg.background)
    else:
        frames = io.read_video_dir(cfg.video_dir)
        h, w = frames[0].shape[:2]
        video = VideoSequence(frames, reference_camera(w, h))
    if cfg.oracle.kind == "synthetic":
        oracle = SyntheticOracle(scene, cfg.noise, cfg.seed)
    else:
        oracle = FileExchangeOracle(cfg.oracle.exchange_dir, cfg.oracle.timeout_s, cfg.oracle.poll_s)
    return scene, video, oracle


def _error(msg: str, code: int) -> int:
    print(f"error: {msg}", file=sys.stderr)
    return code


def cmd_run(config_path, resume: bool = False) -> int:
    try:
        cfg = load_config(config_path)
    except ConfigError as exc:
        return _error(str(exc), EXIT_CONFIG)
    root = Path(cfg.output_dir)
    snapshot = root / CONFIG_SNAPSHOT
    if root.exists() and any(root.iterdir()):
        if not resume:
            return _error(f"refusing to overwrite existing run directory {root} (use --resume to continue it)",
                          EXIT_CONFIG)
        if not snapshot.exists() or load_config(snapshot).to_json() != cfg.to_json():
            return _error(f"config differs from the snapshot in {root}; resume needs the same config", EXIT_CONFIG)
    try:
        root.mkdir(parents=True, exist_ok=True)
        probe = root / ".write_probe"
        probe.write_bytes(b"")
        probe.unlink()
    except OSError as exc:
        return _error(f"output directory {root} is not writable: {exc}", EXIT_CONFIG)

    try:
        with RunLock(root):
            io.atomic_write_text(snapshot, cfg.to_json())
            scene, video, oracle = build_inputs(cfg)
            _, _, rows = run_full(video, oracle, cfg.stages, cfg.seed, root, resume=resume, scene=scene,
                                  eval_size=cfg.eval_size)
    except LockHeldError as exc:
        return _error(str(exc), EXIT_RUNTIME)
    except CollapseError as exc:
        return _error(f"collapse in stage {exc.stage}: {exc}", EXIT_RUNTIME)
    except (PipelineAbort, OracleTimeoutError, io.CheckpointError, FileNotFoundError, ValueError) as exc:
        return _error(f"run aborted: {exc}", EXIT_RUNTIME)
    ref_rows = [r for r in rows if r.azimuth == 0.0]
    if ref_rows:
        print(f"mean reference-view PSNR {np.mean([r.psnr_db for r in ref_rows]):.3f} dB")
    print(f"run written to {root}")
    return EXIT_OK


def _load_run(root: Path):
    if not (root / "state.json").exists():
        raise FileNotFoundError(f"no checkpoint state in {root}")
    cfg = load_config(root / CONFIG_SNAPSHOT) if (root / CONFIG_SNAPSHOT).exists() else RunConfig()
    rd = RunDirectory(root)
    return cfg, rd.load_state(cfg.stages, cfg.seed)


def cmd_render(checkpoint_dir, azimuths, out_dir) -> int:
    root = Path(checkpoint_dir)
    try:
        cfg, state = _load_run(root)
    except ConfigError as exc:
        return _error(str(exc), EXIT_CONFIG)
    except (io.CheckpointError, FileNotFoundError) as exc:
        return _error(f"cannot load checkpoint: {exc}", EXIT_RUNTIME)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cam = reference_camera(*cfg.eval_size)
    count = 0
    for k in range(1, len(state.frames) + 1):
        cloud = state.final_cloud(k)
        for az in azimuths:
            frame = render(cloud, cam.with_azimuth(cam.azimuth_deg + az), cfg.background)
            io.write_png(out / frame_png_name(k, az), frame.color)
            count += 1
    print(f"wrote {count} images to {out}")
    return EXIT_OK


def cmd_eval(run_dir, scene_config, out_path=None) -> int:
    try:
        cfg = load_config(scene_config)
    except ConfigError as exc:
        return _error(str(exc), EXIT_CONFIG)
    scene = build_scene(cfg)
    if scene is None:
        return _error("eval needs a config with a synthetic 'scene'", EXIT_CONFIG)
    renders = Path(run_dir) / "renders"
    cam = reference_camera(*cfg.eval_size)
    rows = []
    for k in range(1, scene.frame_count + 1):
        gt = ground_truth_cloud(scene, k)
        for az in EVAL_AZIMUTHS:
            path = renders / frame_png_name(k, az)
            if not path.exists():
                return _error(f"missing render {path}", EXIT_RUNTIME)
            pred = io.read_png(path)
            # compare at the precision the renders were stored in
            target = io.to_uint8(render(gt, cam.with_azimuth(cam.azimuth_deg + az), cfg.background).color) / 255.0
            if pred.shape != target.shape:
                return _error(f"{path} is {pred.shape[1]}x{pred.shape[0]}, expected "
                              f"{target.shape[1]}x{target.shape[0]}", EXIT_RUNTIME)
            rows.append(MetricRow(k, az, capped_psnr(pred, target), ssim(pred, target)))
    text = metrics_csv(rows)
    out = Path(out_path) if out_path else Path(run_dir) / "eval_metrics.csv"
    io.atomic_write_text(out, text)
    sys.stdout.write(text)
    return EXIT_OK


def cmd_gradcheck(seed: int = 0, size: int = 16, corrupt: bool = False, scenes: int = 100, fields: int = 20) -> int:
    report = run_audit(seed=seed, scenes=scenes, fields=fields, size=size, corrupt=corrupt)
    for line in report.lines():
        print(line)
    return EXIT_OK if report.passed else EXIT_VERIFY


def _azimuth_list(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad azimuth list {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ar4d", description="Autoregressive 4D Gaussian generation from video.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run all stages from a JSON config")
    p.add_argument("--config", required=True)
    p.add_argument("--resume", action="store_true", help="continue an interrupted run in place")

    p = sub.add_parser("render", help="render a finished run at given azimuths")
    p.add_argument("--checkpoint-dir", required=True)
    p.add_argument("--azimuths", type=_azimuth_list, default=list(EVAL_AZIMUTHS))
    p.add_argument("--out", required=True)

    p = sub.add_parser("eval", help="score a run's renders against ground truth")
    p.add_argument("--run", required=True)
    p.add_argument("--scene", required=True, help="config whose 'scene' describes the ground truth")
    p.add_argument("--out", default=None)

    p = sub.add_parser("gradcheck", help="finite-difference audit of every analytic gradient")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--size", type=int, default=16)
    p.add_argument("--scenes", type=int, default=100, help="number of random render instances")
    p.add_argument("--fields", type=int, default=20, help="number of random field and loss instances")
    p.add_argument("--corrupt-gradient", action="store_true", help=argparse.SUPPRESS)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    if args.command == "run":
        return cmd_run(args.config, args.resume)
    if args.command == "render":
        return cmd_render(args.checkpoint_dir, args.azimuths, args.out)
    if args.command == "eval":
        return cmd_eval(args.run, args.scene, args.out)
    return cmd_gradcheck(args.seed, args.size, args.corrupt_gradient, args.scenes, args.fields)


if __name__ == "__main__":
    sys.exit(main())
