"""Three-stage driver: first-frame fine-tune, autoregressive generation with
progressive pseudo-view supervision, and global-field refinement."""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import io
from .deformation import GlobalField, LocalField, apply_global, apply_local, deform_backward
from .field import (
    AdamState,
    LrSchedule,
    MlpParams,
    OptimizerDivergenceError,
    PositionalEncodingConfig,
    adam_step,
    lr_at,
)
from .objectives import LossReport, capped_psnr, pseudo_losses, reference_loss, refinement_losses, ssim
from .rasterizer import RenderGradients, render, render_backward
from .scene import CLOUD_FIELDS, GaussianCloud, OrbitCamera, VideoSequence, clone_cloud, validate_cloud
from .views import EVAL_AZIMUTHS, SamplingSchedule, orthogonal_views, sample_novel_view, sample_refinement_view

log = logging.getLogger(__name__)

DEFAULT_ATTRIBUTE_LRS = {
    "positions": 1.6e-4,
    "opacity_logits": 5e-2,
    "log_scales": 5e-3,
    "rotations": 1e-3,
    "colors": 2.5e-3,
}

# named RNG sub-streams
STREAM_FIELD_INIT = 11
STREAM_VIEWS = 12
STREAM_REFINE = 13


class CollapseError(RuntimeError):
    """Raised when a stage diverges; message names stage, frame and iteration."""

    def __init__(self, stage: str, frame: int | None, iteration: int, reason: str):
        self.stage, self.frame, self.iteration, self.reason = stage, frame, iteration, reason
        where = f"stage={stage}" + (f" frame={frame}" if frame is not None else "") + f" iteration={iteration}"
        super().__init__(f"{reason} ({where})")


class PipelineAbort(RuntimeError):
    pass


@dataclass
class InitConfig:
    enabled: bool = True
    lr: float = 1e-5
    iters: int = 1000


@dataclass
class GenerationConfig:
    iters_per_frame: int = 2000
    mlp_lr_initial: float = 5e-4
    mlp_lr_final: float = 1e-6
    mlp_depth: int = 4
    mlp_width: int = 64
    num_frequencies: int = 10
    include_input: bool = False
    attribute_lrs: dict = field(default_factory=lambda: dict(DEFAULT_ATTRIBUTE_LRS))
    optimize_base: bool = True
    lam: float = 0.8
    pseudo_views: bool = True
    w_rgb: float = 1.0
    w_depth: float = 1.0
    n_max: int = 180
    n_start: int = 1
    eta: int = 10
    pseudo_refresh_every: int = 0  # 0: once per frame


@dataclass
class RefinementConfig:
    enabled: bool = True
    iters: int = 30000
    mlp_lr_initial: float = 5e-4
    mlp_lr_final: float = 1e-6
    mlp_depth: int = 4
    mlp_width: int = 64
    num_frequencies: int = 10
    include_input: bool = False
    time_frequencies: int = 6
    attribute_lrs: dict = field(default_factory=lambda: dict(DEFAULT_ATTRIBUTE_LRS))
    full_batch: bool = False
    include_first_frame: bool = True  # frame 1 is the canonical cloud itself


@dataclass
class CollapseConfig:
    nan_check: bool = True
    plateau_window: int = 200
    plateau_ratio: float = 0.98
    plateau_windows: int = 3
    plateau_factor: float = 5.0
    max_restarts: int = 2


@dataclass
class StageConfig:
    init: InitConfig = field(default_factory=InitConfig)
    generation: GenerationConfig = field(default_factory=GenerationConfig)
    refinement: RefinementConfig = field(default_factory=RefinementConfig)
    collapse: CollapseConfig = field(default_factory=CollapseConfig)
    background: tuple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        for name, value in [("init.iters", self.init.iters), ("generation.iters_per_frame", self.generation.iters_per_frame),
                            ("refinement.iters", self.refinement.iters)]:
            if value < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.generation.w_rgb < 0 or self.generation.w_depth < 0:
            raise ValueError("pseudo-loss weights must be non-negative")


@dataclass
class PipelineState:
    seed: int = 0
    frames: list = field(default_factory=list)  # G_1 .. G_F after generation
    local_fields: list = field(default_factory=list)  # field i maps G_i -> G_{i+1}
    generation_bases: list = field(default_factory=list)  # working copy of G_i each field was applied to
    canonical: GaussianCloud | None = None
    global_field: GlobalField | None = None
    traces: dict = field(default_factory=dict)
    cursor: str = "init"  # init -> generation -> refinement -> done

    def final_cloud(self, k: int) -> GaussianCloud:
        """Cloud for frame k (1-based) of the finished 4D result."""
        if self.global_field is not None:
            if k == 1:
                return self.canonical
            return apply_global(self.global_field, self.canonical, k, len(self.frames))
        return self.frames[k - 1]


def _rng(seed: int, stream: int, *keys: int) -> np.random.Generator:
    return np.random.default_rng([seed, stream, *keys])


def round_f32(cloud: GaussianCloud) -> GaussianCloud:
    """Round-trip through checkpoint precision so a resumed run sees exactly
    what an uninterrupted one keeps in memory."""
    return io.cloud_from_bytes(io.cloud_to_bytes(cloud))


def _round_field(f):
    f.mlp = io.mlp_from_bytes(io.mlp_to_bytes(f.mlp))
    return f


def scene_extent(cloud: GaussianCloud) -> float:
    centered = cloud.positions - cloud.positions.mean(axis=0)
    return 1.1 * float(np.max(np.linalg.norm(centered, axis=1))) or 1.0


class CloudOptimizer:
    """Adam over the cloud's parameter arrays with a per-attribute rate.
    Attributes absent from ``lrs`` (or at rate 0) stay frozen."""

    def __init__(self, cloud: GaussianCloud, lrs: dict, position_scale: float = 1.0):
        self.names = [n for n in CLOUD_FIELDS if lrs.get(n, 0.0) > 0.0]
        self.lrs = [lrs[n] * (position_scale if n == "positions" else 1.0) for n in self.names]
        self.state = AdamState.for_params([getattr(cloud, n) for n in self.names])

    def step(self, cloud: GaussianCloud, grads: RenderGradients) -> GaussianCloud:
        if not self.names:
            return cloud
        g = grads.as_dict()
        new, _ = adam_step([getattr(cloud, n) for n in self.names], [g[n] for n in self.names], self.state, self.lrs)
        updated = dict(zip(self.names, new))
        if "colors" in updated:
            updated["colors"] = np.clip(updated["colors"], 0.0, 1.0)
        return cloud.replace(**updated)


class PlateauDetector:
    def __init__(self, cfg: CollapseConfig):
        self.cfg = cfg
        self.trace = []
        self.best = np.inf
        self.strikes = 0

    def update(self, value: float) -> bool:
        """Record one loss value; True means the run looks collapsed."""
        self.trace.append(value)
        self.best = min(self.best, value)
        w = self.cfg.plateau_window
        n = len(self.trace)
        if n % w or n < 2 * w:
            return False
        recent = float(np.median(self.trace[-w:]))
        previous = float(np.median(self.trace[-2 * w:-w]))
        self.strikes = self.strikes + 1 if recent > self.cfg.plateau_ratio * previous else 0
        return self.strikes >= self.cfg.plateau_windows and recent > self.cfg.plateau_factor * self.best


def _check_finite(cfg: CollapseConfig, report: LossReport, stage: str, frame, it: int):
    if cfg.nan_check and not report.is_finite():
        raise CollapseError(stage, frame, it, "non-finite loss")


# --------------------------------------------------------------------- stage 1

def stage_initialize(init_cloud: GaussianCloud, v1, camera: OrbitCamera, config: StageConfig):
    """Fine-tune positions and colors against the first frame (MSE); opacity,
    scale and rotation are left untouched. Returns (G_1, loss reports)."""
    cfg = config.init
    cloud = clone_cloud(init_cloud)
    opt = CloudOptimizer(cloud, {"positions": cfg.lr, "colors": cfg.lr})
    v1 = np.asarray(v1, dtype=np.float64)
    reports = []
    for it in range(cfg.iters):
        frame = render(cloud, camera, config.background)
        diff = frame.color - v1
        mse = float(np.mean(diff**2))
        rep = LossReport(step=it, total=mse, l_ref=mse)
        reports.append(rep)
        _check_finite(config.collapse, rep, "init", 1, it)
        grads = render_backward(cloud, camera, config.background, 2.0 * diff / diff.size)
        try:
            cloud = opt.step(cloud, grads)
        except OptimizerDivergenceError as exc:
            raise CollapseError("init", 1, it, str(exc)) from exc
    return cloud, reports


# --------------------------------------------------------------------- stage 2

def _pseudo_views(cloud: GaussianCloud, reference: OrbitCamera, background):
    return [(render(cloud, cam, background).color, cam) for cam in orthogonal_views(reference)]


def generate_frame(g_prev: GaussianCloud, target, frame_index: int, reference: OrbitCamera, oracle,
                   config: StageConfig, seed: int, restart: int = 0):
    """Fit one local field taking G_i (frame_index - 1) to G_{i+1} (frame_index).

    Returns (G_{i+1}, field, working base, loss reports).
    """
    cfg = config.generation
    bg = config.background
    enc = PositionalEncodingConfig(cfg.num_frequencies, cfg.include_input)
    fld = LocalField.create(cfg.mlp_depth, cfg.mlp_width, _rng(seed, STREAM_FIELD_INIT, frame_index, restart), enc)
    base = clone_cloud(g_prev)
    lrs = cfg.attribute_lrs if cfg.optimize_base else {}
    base_opt = CloudOptimizer(base, lrs, scene_extent(g_prev))
    field_state = AdamState.for_params(fld.mlp.arrays())
    schedule = LrSchedule(cfg.mlp_lr_initial, cfg.mlp_lr_final, cfg.iters_per_frame)
    sampling = SamplingSchedule(cfg.n_max, cfg.n_start, cfg.eta)
    view_rng = _rng(seed, STREAM_VIEWS, frame_index, restart)
    detector = PlateauDetector(config.collapse)

    pseudo = None
    if cfg.pseudo_views:
        pseudo = oracle.pseudo_reconstruct(_pseudo_views(apply_local(fld, base), reference, bg), frame_index, 0)
    reports = []
    for u in range(cfg.iters_per_frame):
        if pseudo is not None and cfg.pseudo_refresh_every and u and u % cfg.pseudo_refresh_every == 0:
            views = _pseudo_views(apply_local(fld, base), reference, bg)
            pseudo = oracle.pseudo_reconstruct(views, frame_index, u // cfg.pseudo_refresh_every)
        current = apply_local(fld, base)
        ref_frame = render(current, reference, bg)
        l_ref, d_color = reference_loss(ref_frame.color, target, cfg.lam)
        grads = render_backward(current, reference, bg, d_color)
        rep = LossReport(step=u, l_ref=l_ref)
        if pseudo is not None:
            cam = sample_novel_view(sampling, u, reference, view_rng)
            mine = render(current, cam, bg)
            theirs = render(pseudo, cam, bg)
            rep.l_rgb, rep.l_depth, d_c, d_d = pseudo_losses(mine, theirs)
            grads = grads + render_backward(current, cam, bg, cfg.w_rgb * d_c, cfg.w_depth * d_d)
        rep.total = rep.l_ref + cfg.w_rgb * rep.l_rgb + cfg.w_depth * rep.l_depth
        reports.append(rep)
        _check_finite(config.collapse, rep, "generation", frame_index, u)
        d_field, d_base = deform_backward(fld, base, grads)
        try:
            new_arrays, field_state = adam_step(fld.mlp.arrays(), d_field.arrays(), field_state, lr_at(schedule, u))
            base = base_opt.step(base, d_base)
        except OptimizerDivergenceError as exc:
            raise CollapseError("generation", frame_index, u, str(exc)) from exc
        fld.mlp = MlpParams.from_arrays(new_arrays)
        if detector.update(l_ref):
            raise CollapseError("generation", frame_index, u, "loss plateau far above its best value")

    base = round_f32(base)
    fld = _round_field(fld)
    g_next = round_f32(apply_local(fld, base))
    return g_next, fld, base, reports


def _with_restarts(fn, config: StageConfig, label: str):
    last = None
    for restart in range(config.collapse.max_restarts + 1):
        try:
            return fn(restart)
        except CollapseError as exc:
            last = exc
            log.warning("%s collapsed (%s); restart %d", label, exc, restart + 1)
    raise PipelineAbort(f"{label}: gave up after {config.collapse.max_restarts} restarts; last failure: {last}") from last


def stage_generate(g1: GaussianCloud, video: VideoSequence, oracle, config: StageConfig, seed: int = 0,
                   state: PipelineState | None = None, on_frame=None):
    """Autoregressively produce G_2..G_F. ``state`` may already hold a prefix
    of finished frames (resume); ``on_frame(state, k)`` runs after each frame."""
    state = state or PipelineState(seed=seed, frames=[g1])
    reference = video.reference_camera
    for k in range(len(state.frames) + 1, video.frame_count + 1):
        g_prev = state.frames[-1]
        g_next, fld, base, reports = _with_restarts(
            lambda r: generate_frame(g_prev, video[k], k, reference, oracle, config, seed, r),
            config, f"generation frame {k}",
        )
        state.frames.append(g_next)
        state.local_fields.append(fld)
        state.generation_bases.append(base)
        state.traces[f"frame_{k:04d}"] = reports
        log.info("frame %d done: l_ref %.4g", k, reports[-1].l_ref)
        if on_frame is not None:
            on_frame(state, k)
    return state


# --------------------------------------------------------------------- stage 3

def _refine_attempt(g1, stage2, reference, config: StageConfig, seed: int, restart: int):
    cfg = config.refinement
    bg = config.background
    frame_count = len(stage2)
    enc = PositionalEncodingConfig(cfg.num_frequencies, cfg.include_input)
    tenc = PositionalEncodingConfig(cfg.time_frequencies)
    fld = GlobalField.create(cfg.mlp_depth, cfg.mlp_width, _rng(seed, STREAM_FIELD_INIT, 0, restart), enc, tenc)
    canonical = clone_cloud(g1)
    opt = CloudOptimizer(canonical, cfg.attribute_lrs, scene_extent(g1))
    state = AdamState.for_params(fld.mlp.arrays())
    schedule = LrSchedule(cfg.mlp_lr_initial, cfg.mlp_lr_final, cfg.iters)
    rng = _rng(seed, STREAM_REFINE, restart)
    detector = PlateauDetector(config.collapse)
    reports = []
    for it in range(cfg.iters):
        first = 1 if cfg.include_first_frame else 2
        ks = list(range(first, frame_count + 1)) if cfg.full_batch else [int(rng.integers(first, frame_count + 1))]
        cam = sample_refinement_view(reference, rng)
        rep = LossReport(step=it)
        d_field = None
        d_can = RenderGradients.zeros(canonical.count)
        for k in ks:
            refined = canonical if k == 1 else apply_global(fld, canonical, k, frame_count)
            l_ref, l_depth, grads = refinement_losses(refined, stage2[k - 1], reference, cam, bg)
            grads = grads.scaled(1.0 / len(ks))
            rep.l_ref_re += l_ref / len(ks)
            rep.l_depth_re += l_depth / len(ks)
            if k == 1:
                d_can = d_can + grads
                continue
            df, dc = deform_backward(fld, canonical, grads, k, frame_count)
            d_field = df if d_field is None else MlpParams.from_arrays([a + b for a, b in zip(d_field.arrays(), df.arrays())])
            d_can = d_can + dc
        if d_field is None:
            d_field = MlpParams.from_arrays([np.zeros_like(a) for a in fld.mlp.arrays()])
        rep.total = rep.l_ref_re + rep.l_depth_re
        reports.append(rep)
        _check_finite(config.collapse, rep, "refinement", None, it)
        try:
            new_arrays, state = adam_step(fld.mlp.arrays(), d_field.arrays(), state, lr_at(schedule, it))
            canonical = opt.step(canonical, d_can)
        except OptimizerDivergenceError as exc:
            raise CollapseError("refinement", None, it, str(exc)) from exc
        fld.mlp = MlpParams.from_arrays(new_arrays)
        if detector.update(rep.l_ref_re):
            raise CollapseError("refinement", None, it, "loss plateau far above its best value")
    return round_f32(canonical), _round_field(fld), reports


def stage_refine(g1: GaussianCloud, stage2_clouds, reference: OrbitCamera, config: StageConfig, seed: int = 0):
    """Fit canonical G_1' and one time-conditioned field to the stage-2 frames.

    ``stage2_clouds`` lists G_1..G_F (index 0 is frame 1). Returns
    (canonical, global field, loss reports).
    """
    return _with_restarts(lambda r: _refine_attempt(g1, stage2_clouds, reference, config, seed, r),
                          config, "refinement")


# --------------------------------------------------------------------- evaluation

@dataclass
class MetricRow:
    frame: int
    azimuth: float
    psnr_db: float
    ssim: float


def evaluate_against(state: PipelineState, targets: dict, cameras: dict, background) -> list[MetricRow]:
    """PSNR/SSIM per frame per azimuth. ``targets[(k, az)]`` are reference
    images; ``cameras[az]`` the matching cameras."""
    rows = []
    for (k, az), target in sorted(targets.items()):
        pred = render(state.final_cloud(k), cameras[az], background).color
        rows.append(MetricRow(k, az, capped_psnr(pred, target), ssim(pred, target)))
    return rows


def metrics_csv(rows: list[MetricRow]) -> str:
    lines = ["frame,azimuth,psnr_db,ssim"]
    for r in rows:
        lines.append(f"{r.frame},{r.azimuth:g},{r.psnr_db:.6f},{r.ssim:.6f}")
    if rows:
        lines.append(f"mean,all,{np.mean([r.psnr_db for r in rows]):.6f},{np.mean([r.ssim for r in rows]):.6f}")
    return "\n".join(lines) + "\n"


# --------------------------------------------------------------------- full run

def _loss_csv(reports) -> str:
    return "\n".join([LossReport.csv_header()] + [r.csv_line() for r in reports]) + "\n"


class RunDirectory:
    """On-disk layout of one run; every write is atomic."""

    def __init__(self, root):
        self.root = Path(root)

    def path(self, name: str) -> Path:
        return self.root / name

    def write_cursor(self, state: PipelineState, frame_count: int):
        io.atomic_write_text(self.path("state.json"), json.dumps(
            {"cursor": state.cursor, "frames_done": len(state.frames), "frame_count": frame_count, "seed": state.seed},
            sort_keys=True))

    def read_cursor(self) -> dict | None:
        p = self.path("state.json")
        return json.loads(p.read_text()) if p.exists() else None

    def save_stage1(self, state: PipelineState):
        io.save_cloud(self.path("stage1.cloud"), state.frames[0])
        io.atomic_write_text(self.path("loss_init.csv"), _loss_csv(state.traces.get("init", [])))

    def save_frame(self, state: PipelineState, k: int):
        io.save_cloud(self.path(f"frame_{k:04d}.cloud"), state.frames[k - 1])
        io.save_cloud(self.path(f"frame_{k:04d}.base.cloud"), state.generation_bases[k - 2])
        io.save_mlp(self.path(f"frame_{k:04d}.mlp"), state.local_fields[k - 2].mlp)
        io.atomic_write_text(self.path(f"loss_frame_{k:04d}.csv"), _loss_csv(state.traces[f"frame_{k:04d}"]))

    def save_refine(self, state: PipelineState):
        io.save_cloud(self.path("refine.cloud"), state.canonical)
        io.save_mlp(self.path("refine.mlp"), state.global_field.mlp)
        io.atomic_write_text(self.path("loss_refine.csv"), _loss_csv(state.traces.get("refine", [])))

    def load_state(self, config: StageConfig, seed: int) -> PipelineState:
        cur = self.read_cursor()
        state = PipelineState(seed=seed, cursor=cur["cursor"])
        if cur["cursor"] == "init":
            return state
        state.frames.append(io.load_cloud(self.path("stage1.cloud")))
        gcfg = config.generation
        enc = PositionalEncodingConfig(gcfg.num_frequencies, gcfg.include_input)
        for k in range(2, cur["frames_done"] + 1):
            state.frames.append(io.load_cloud(self.path(f"frame_{k:04d}.cloud")))
            state.generation_bases.append(io.load_cloud(self.path(f"frame_{k:04d}.base.cloud")))
            state.local_fields.append(LocalField(io.load_mlp(self.path(f"frame_{k:04d}.mlp")), enc))
        if cur["cursor"] == "done" and config.refinement.enabled:
            state.canonical, state.global_field = load_refined(self.root, config)
        return state


def load_refined(root, config: StageConfig):
    rcfg = config.refinement
    enc = PositionalEncodingConfig(rcfg.num_frequencies, rcfg.include_input)
    tenc = PositionalEncodingConfig(rcfg.time_frequencies)
    root = Path(root)
    return io.load_cloud(root / "refine.cloud"), GlobalField(io.load_mlp(root / "refine.mlp"), enc, tenc)


def run_stages(video: VideoSequence, oracle, config: StageConfig, seed: int = 0, run_dir=None,
               resume: bool = False) -> PipelineState:
    """Run (or resume) all three stages, checkpointing at every boundary."""
    rd = RunDirectory(run_dir) if run_dir is not None else None
    if rd is not None:
        rd.root.mkdir(parents=True, exist_ok=True)
    reference = video.reference_camera
    frame_count = video.frame_count
    state = PipelineState(seed=seed)
    if resume and rd is not None and rd.read_cursor() is not None:
        state = rd.load_state(config, seed)
        log.info("resuming at %s with %d frames", state.cursor, len(state.frames))

    if state.cursor == "init":
        init = oracle.init_cloud([(video[1], reference)])
        if config.init.enabled:
            g1, reports = _with_restarts(lambda r: stage_initialize(init, video[1], reference, config), config, "init")
        else:
            g1, reports = init, []
        state.frames = [round_f32(g1)]
        state.traces["init"] = reports
        state.cursor = "generation"
        if rd:
            rd.save_stage1(state)
            rd.write_cursor(state, frame_count)

    if state.cursor == "generation":
        def checkpoint(st, k):
            if rd:
                rd.save_frame(st, k)
                rd.write_cursor(st, frame_count)
        stage_generate(state.frames[0], video, oracle, config, seed, state, checkpoint)
        state.cursor = "refinement"
        if rd:
            rd.write_cursor(state, frame_count)

    if state.cursor == "refinement":
        if config.refinement.enabled:
            state.canonical, state.global_field, reports = stage_refine(state.frames[0], state.frames, reference,
                                                                        config, seed)
            state.traces["refine"] = reports
            if rd:
                rd.save_refine(state)
        state.cursor = "done"
        if rd:
            rd.write_cursor(state, frame_count)

    for k, cloud in enumerate(state.frames, start=1):
        problems = validate_cloud(cloud)
        if problems:
            raise PipelineAbort(f"frame {k} failed validation: {problems[:3]}")
    return state


def evaluation_targets(scene, video: VideoSequence, eval_camera: OrbitCamera, background,
                       azimuths=EVAL_AZIMUTHS):
    """Ground-truth renders per (frame, azimuth) when a synthetic scene is
    known; otherwise the input video at the reference view only."""
    from .oracle import ground_truth_cloud

    cameras = {az: eval_camera.with_azimuth(eval_camera.azimuth_deg + az) for az in azimuths}
    targets = {}
    if scene is not None:
        for k in range(1, video.frame_count + 1):
            gt = ground_truth_cloud(scene, k)
            for az in azimuths:
                targets[(k, az)] = render(gt, cameras[az], background).color
    else:
        cameras = {0.0: video.reference_camera}
        for k in range(1, video.frame_count + 1):
            targets[(k, 0.0)] = video[k]
    return targets, cameras


def render_sequences(state: PipelineState, camera: OrbitCamera, background, azimuths=EVAL_AZIMUTHS):
    out = {}
    for k in range(1, len(state.frames) + 1):
        cloud = state.final_cloud(k)
        for az in azimuths:
            out[(k, az)] = render(cloud, camera.with_azimuth(camera.azimuth_deg + az), background)
    return out


def run_full(video: VideoSequence, oracle, config: StageConfig, seed: int = 0, run_dir=None, resume=False,
             scene=None, eval_size=None):
    """All stages, then evaluation renders at the standard azimuths and a
    per-frame/per-azimuth metric report. Returns (state, renders, rows)."""
    state = run_stages(video, oracle, config, seed, run_dir, resume)
    ref = video.reference_camera
    eval_cam = ref if eval_size is None else ref.with_size(*eval_size)
    renders = render_sequences(state, eval_cam, config.background)
    targets, cameras = evaluation_targets(scene, video, eval_cam, config.background)
    rows = evaluate_against(state, targets, cameras, config.background)
    if run_dir is not None:
        root = Path(run_dir)
        (root / "renders").mkdir(exist_ok=True)
        for (k, az), frame in renders.items():
            io.write_png(root / "renders" / f"frame_{k:04d}_az{az:+04.0f}.png", frame.color)
        io.atomic_write_text(root / "metrics.csv", metrics_csv(rows))
    return state, renders, rows


def config_to_dict(config: StageConfig) -> dict:
    return asdict(config)
