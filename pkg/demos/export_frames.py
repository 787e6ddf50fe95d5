"""Write a synthetic scene as a folder of PNG frames, the layout `video_dir` reads.

    python3 demos/export_frames.py out/frames --preset walker --frames 6
"""

import argparse
from pathlib import Path

from ar4d.io import write_png
from ar4d.oracle import PRESETS, make_monocular_video, make_scene
from ar4d.views import reference_camera

parser = argparse.ArgumentParser()
parser.add_argument("out")
parser.add_argument("--preset", choices=PRESETS, default="walker")
parser.add_argument("--frames", type=int, default=6)
parser.add_argument("--size", type=int, default=64)
args = parser.parse_args()

out = Path(args.out)
out.mkdir(parents=True, exist_ok=True)
video = make_monocular_video(make_scene(args.preset, frame_count=args.frames), reference_camera(args.size, args.size))
for k in range(1, video.frame_count + 1):
    write_png(out / f"frame_{k:04d}.png", video[k])
print(f"{video.frame_count} frames -> {out}")
