"""Deterministic synthetic benchmark generator.

Each scenario is a procedurally drawn driving-like scene: sky gradient,
roadside ground, a trapezoid road with a dashed centerline, and a few
moving colored objects that show up as instances in the mask channel.
Anomalous scenarios add one static high-contrast object on the road.

The "world model" outputs are simulated.  The reconstruction renders
the scene with the anomaly omitted (the model cannot represent it, so
the road surface shows through), stamps the model's systematic
rendering errors on top, and finally adds clamped Gaussian noise.
There are three systematic errors, and each one dominates a different
difference map while staying low in the others: white specular glints
on the roadside carry the largest raw color error (so a plain Euclidean
baseline chases them instead of the anomaly, and they top the squared
map); a near-field band where the dashed centerline is rendered half a
period out of phase tops the structural map (anti-correlated texture)
at a tiny color error; and a soft brightened patch of ground tops the
feature map (a low-amplitude but large-area change that deep layers
see) without registering anywhere else.  Past predictions add a
per-step brightness drift scaled by a fixed top-heavy row profile (the
model is least certain about distant content) and re-render the same
glints, so the temporal difference map is a deterministic gradient that
vanishes at the glints rather than amplified float rounding noise.
Every random draw comes from a SplitMix64 stream keyed by (seed,
scenario, frame, role), so regenerating with the same config yields
bit-identical files.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core_io import (
    BinaryLabelMap,
    DatasetManifest,
    ImageTensor,
    InstanceLabelMap,
    ScenarioEntry,
    _require,
    frame_name,
    load_manifest,
    read_binary_png,
    save_manifest,
    write_binary_png,
    write_f32_tensor,
    write_instance_png,
    write_rgb_png,
)
from .rng import SplitMix64, derive_stream

FRAME_STRIDE = 10

ROLE_LAYOUT = 0
ROLE_NOISE = 1

ANOMALY_COLORS = (
    (1.0, 0.0, 1.0),
    (0.0, 1.0, 1.0),
    (1.0, 1.0, 0.0),
)

# The simulated world model's systematic rendering errors.  Glints are
# white pixels on the roadside strips (never on the road, where the
# anomaly sits) in a band of rows near the camera; the dash-phase error
# flips the centerline pattern inside its own near-field row band; the
# ground patch is a soft disc of brightened roadside.
GLINT_BAND = (0.70, 0.88)
DASH_FLIP_BAND = (0.78, 0.90)
BLOB_BAND = (0.80, 0.92)
DASH_CONTRAST = 0.25
BLOB_AMP = 0.22


@dataclass(frozen=True)
class SynthConfig:
    seed: int = 42
    num_scenarios: int = 8
    frames_per_scenario: int = 20
    image_size: tuple[int, int] = (96, 128)
    anomaly_rate: float = 0.5
    recon_noise_sigma: float = 0.02
    prediction_drift: float = 0.01
    history_depth: int = 2

    def __post_init__(self) -> None:
        _require(self.seed >= 0, "seed must be non-negative")
        _require(self.num_scenarios >= 1, "num_scenarios must be >= 1")
        _require(self.frames_per_scenario >= 1, "frames_per_scenario must be >= 1")
        h, w = self.image_size
        _require(h >= 16 and w >= 16, "image_size must be at least 16x16")
        _require(0.0 <= self.anomaly_rate <= 1.0, "anomaly_rate must lie in [0, 1]")
        _require(self.recon_noise_sigma >= 0.0, "recon_noise_sigma must be >= 0")
        _require(self.prediction_drift >= 0.0, "prediction_drift must be >= 0")
        _require(self.history_depth >= 1, "history_depth must be >= 1")


def is_anomalous_scenario(index: int, rate: float) -> bool:
    """Spread anomalies evenly: scenario s is anomalous when the running
    count floor((s+1)*rate) increments at s."""
    return int(np.floor((index + 1) * rate)) - int(np.floor(index * rate)) >= 1


@dataclass(frozen=True)
class _ObjectSpec:
    cx: float
    cy: float
    half_w: int
    half_h: int
    color: tuple[float, float, float]
    speed: float
    is_rect: bool


@dataclass(frozen=True)
class _SceneLayout:
    sky_top: np.ndarray
    sky_bottom: np.ndarray
    ground: np.ndarray
    road_gray: float
    road_offset: float
    dash_phase: int
    objects: tuple[_ObjectSpec, ...]
    anomaly: _ObjectSpec | None
    speckles: np.ndarray  # (N, 2) row/col pixels the model renders white
    blob: tuple[int, int, int]  # row, col, radius of the brightened patch


def _scenario_layout(cfg: SynthConfig, scenario: int) -> _SceneLayout:
    h, w = cfg.image_size
    ls = SplitMix64(derive_stream(cfg.seed, scenario, 0, ROLE_LAYOUT))
    u = ls.uniforms(12)
    sky_top = 0.35 + 0.35 * u[0:3]
    sky_bottom = 0.55 + 0.30 * u[3:6]
    # Ground and road stay in a narrow dark band so the white glints keep
    # a roughly constant raw error, safely above the anomaly's.
    ground = np.array([
        0.30 + 0.03 * u[6],
        0.38 + 0.03 * u[7],
        0.28 + 0.03 * u[8],
    ])
    road_gray = 0.30 + 0.08 * float(u[9])
    road_offset = (float(u[10]) - 0.5) * 0.1 * w
    dash_phase = int(u[11] * 4)

    count = 3 + int(ls.next_uint64() % 6)
    horizon = int(0.45 * h)
    objects = []
    for _ in range(count):
        uo = ls.uniforms(8)
        shape_bit = ls.next_uint64() & 1
        half_w = 2 + int(uo[2] * 0.05 * w)
        half_h = 2 + int(uo[3] * 0.05 * h)
        cy = horizon + 2 + uo[1] * (h - horizon - 5)
        objects.append(_ObjectSpec(
            cx=float(4 + uo[0] * (w - 8)),
            cy=float(min(cy, h - 3)),
            half_w=half_w,
            half_h=half_h,
            color=(0.2 + 0.6 * float(uo[4]),
                   0.2 + 0.6 * float(uo[5]),
                   0.2 + 0.6 * float(uo[6])),
            speed=(float(uo[7]) - 0.5) * 4.0,
            is_rect=bool(shape_bit),
        ))

    anomaly = None
    if is_anomalous_scenario(scenario, cfg.anomaly_rate):
        ua = ls.uniforms(5)
        # Rows where the drift profile is still strong and the road is
        # wide enough to hold the object.
        y_a = 0.58 * h + ua[1] * 0.17 * h
        half = 5 + int(ua[2] * 0.03 * w)
        color = ANOMALY_COLORS[int(ua[4] * len(ANOMALY_COLORS)) % len(ANOMALY_COLORS)]
        anomaly = _ObjectSpec(
            cx=float(w / 2 + road_offset + (ua[0] - 0.5) * 0.2 * w),
            cy=float(min(y_a, h - half - 2)),
            half_w=half,
            half_h=max(4, int(half * (0.7 + 0.4 * ua[3]))),
            color=color,
            speed=0.0,
            is_rect=False,
        )

    def roadside_column(row: int, u_side: float, u_col: float) -> int:
        # A column on the roadside strip left or right of the road at this
        # row; tiny images may have no strip, then anywhere goes.
        depth = min(max((row - horizon) / max(h - 1 - horizon, 1), 0.0), 1.0)
        half_width = 0.06 * w + depth * (0.42 - 0.06) * w
        center = w / 2.0 + road_offset
        left_hi = int(center - half_width) - 3
        right_lo = int(center + half_width) + 3
        if u_side < 0.5 and left_hi >= 2:
            return 2 + int(u_col * (left_hi - 1))
        if right_lo <= w - 3:
            return right_lo + int(u_col * (w - 2 - right_lo))
        return int(u_col * w)

    ub = ls.uniforms(3)
    blob_lo = int(BLOB_BAND[0] * h)
    blob_hi = max(int(BLOB_BAND[1] * h), blob_lo + 1)
    blob_row = blob_lo + int(ub[0] * (blob_hi - blob_lo))
    blob_radius = max(6, int(0.10 * min(h, w)))
    blob_col = roadside_column(blob_row, float(ub[1]), float(ub[2]))
    blob = (blob_row, blob_col, blob_radius)

    band_lo = int(GLINT_BAND[0] * h)
    band_hi = max(int(GLINT_BAND[1] * h), band_lo + 1)
    n_speckles = max(12, (h * w) // 300)
    speckles = np.empty((n_speckles, 2), dtype=np.int64)
    keep_out = (blob_radius + 2) ** 2
    for i in range(n_speckles):
        row = col = 0
        for _ in range(20):
            us = ls.uniforms(3)
            row = band_lo + int(us[0] * (band_hi - band_lo))
            col = roadside_column(row, float(us[1]), float(us[2]))
            clear_of_blob = (row - blob_row) ** 2 + (col - blob_col) ** 2 > keep_out
            # Isolated glints only: clusters would act like small area
            # changes and register in the feature map.
            clear_of_rest = all(
                (row - speckles[j, 0]) ** 2 + (col - speckles[j, 1]) ** 2 >= 25
                for j in range(i)
            )
            if clear_of_blob and clear_of_rest:
                break
        speckles[i] = (row, col)

    return _SceneLayout(sky_top, sky_bottom, ground, road_gray,
                        road_offset, dash_phase, tuple(objects), anomaly,
                        speckles, blob)


def _bounce(value: float, lo: float, hi: float) -> float:
    if hi <= lo:
        return lo
    period = 2.0 * (hi - lo)
    m = (value - lo) % period
    return lo + (m if m <= hi - lo else period - m)


def _object_region(
    spec: _ObjectSpec, frame_ordinal: int, h: int, w: int
) -> np.ndarray:
    cx = _bounce(spec.cx + spec.speed * frame_ordinal,
                 spec.half_w + 1.0, w - spec.half_w - 2.0)
    cy = spec.cy
    ys = np.arange(h, dtype=np.float64)[:, None]
    xs = np.arange(w, dtype=np.float64)[None, :]
    if spec.is_rect:
        return (np.abs(ys - cy) <= spec.half_h) & (np.abs(xs - cx) <= spec.half_w)
    return ((ys - cy) / spec.half_h) ** 2 + ((xs - cx) / spec.half_w) ** 2 <= 1.0


def _paint(rgb: np.ndarray, region: np.ndarray, color) -> None:
    rgb[region] = np.asarray(color, dtype=np.float64)


def _apply_model_artifacts(rgb: np.ndarray, layout: _SceneLayout) -> None:
    """Stamp the model's systematic rendering errors onto its view."""
    h, w, _ = rgb.shape
    br, bc, radius = layout.blob
    ys = np.arange(h, dtype=np.float64)[:, None]
    xs = np.arange(w, dtype=np.float64)[None, :]
    d2 = ((ys - br) ** 2 + (xs - bc) ** 2) / float(radius * radius)
    soft = np.clip(1.5 * (1.0 - d2), 0.0, 1.0)  # flat core, gentle skirt
    rgb += BLOB_AMP * soft[:, :, None]
    np.clip(rgb, 0.0, 1.0, out=rgb)
    rows, cols = layout.speckles[:, 0], layout.speckles[:, 1]
    rgb[rows, cols] = 1.0


def _draw_scene(
    cfg: SynthConfig, layout: _SceneLayout, frame_ordinal: int, model_view: bool
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Render one frame as (rgb float64 HxWx3, masks int32, gt uint8).

    The model view is what the simulated world model renders: the anomaly
    is absent (whatever scene content lies behind it shows through) and
    the model's systematic rendering artifacts are stamped on top.
    """
    h, w = cfg.image_size
    horizon = int(0.45 * h)
    rgb = np.zeros((h, w, 3), dtype=np.float64)

    t = (np.arange(h, dtype=np.float64) / max(horizon, 1))[:, None]
    sky = (1.0 - t) * layout.sky_top[None, :] + t * layout.sky_bottom[None, :]
    rgb[:horizon] = sky[:horizon, None, :]
    rgb[horizon:] = layout.ground[None, None, :]

    ys = np.arange(h, dtype=np.float64)[:, None]
    xs = np.arange(w, dtype=np.float64)[None, :]
    center = w / 2.0 + layout.road_offset
    depth = np.clip((ys - horizon) / max(h - 1 - horizon, 1), 0.0, 1.0)
    half_width = 0.06 * w + depth * (0.42 - 0.06) * w
    road = (ys >= horizon) & (np.abs(xs - center) <= half_width)
    shade = layout.road_gray + 0.08 * depth
    for c in range(3):
        channel = rgb[:, :, c]
        channel[road] = np.broadcast_to(shade, (h, w))[road]

    dash_rows = (ys - horizon) + 3 * frame_ordinal + layout.dash_phase
    if model_view:
        # The model renders the centerline half a period out of phase in
        # its own near-field band.
        flip = (ys >= int(DASH_FLIP_BAND[0] * h)) & (ys < int(DASH_FLIP_BAND[1] * h))
        dash_rows = dash_rows + 2 * flip
    dash = road & (np.abs(xs - center) <= max(3.0, 0.025 * w)) & (
        (dash_rows // 2) % 2 == 0
    )
    _paint(rgb, dash, (layout.road_gray + DASH_CONTRAST,) * 3)

    masks = np.zeros((h, w), dtype=np.int32)
    for j, spec in enumerate(layout.objects, start=1):
        region = _object_region(spec, frame_ordinal, h, w)
        _paint(rgb, region, spec.color)
        masks[region] = j

    gt = np.zeros((h, w), dtype=np.uint8)
    if not model_view and layout.anomaly is not None:
        region = _object_region(layout.anomaly, frame_ordinal, h, w)
        _paint(rgb, region, layout.anomaly.color)
        masks[region] = len(layout.objects) + 1
        gt[region] = 1

    np.clip(rgb, 0.0, 1.0, out=rgb)
    if model_view:
        _apply_model_artifacts(rgb, layout)
    return rgb, masks, gt


def generate(cfg: SynthConfig, out_dir: Path) -> DatasetManifest:
    """Write a full dataset (images, model outputs, masks, gt, manifest)."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    h = cfg.image_size[0]
    # Prediction uncertainty grows toward the horizon; the profile has
    # mean exactly 1 so the expected drift per step stays cfg-valued.
    drift_profile = (1.5 - np.arange(h, dtype=np.float64) / max(h - 1, 1))
    drift_profile = drift_profile[:, None, None].astype(np.float32)
    entries = []
    for s in range(cfg.num_scenarios):
        sid = f"scenario_{s:03d}"
        sdir = out_dir / sid
        layout = _scenario_layout(cfg, s)
        for i in range(cfg.frames_per_scenario):
            stored = i * FRAME_STRIDE
            name = frame_name(stored)
            rgb, masks, gt = _draw_scene(cfg, layout, i, model_view=False)
            clean, _, _ = _draw_scene(cfg, layout, i, model_view=True)

            ns = SplitMix64(derive_stream(cfg.seed, s, stored, ROLE_NOISE))
            sigma = cfg.recon_noise_sigma
            noise = ns.normals(rgb.size).reshape(rgb.shape) * sigma
            noise = np.clip(noise, -3.0 * sigma, 3.0 * sigma)
            recon = np.clip(clean + noise, 0.0, 1.0).astype(np.float32)

            write_rgb_png(sdir / "rgb" / f"{name}.png",
                          ImageTensor(rgb.astype(np.float32)))
            write_f32_tensor(sdir / "recon" / f"{name}.f32t", recon)
            spk_r, spk_c = layout.speckles[:, 0], layout.speckles[:, 1]
            for k in range(1, cfg.history_depth + 1):
                step = np.float32(k * cfg.prediction_drift)
                pred = np.clip(recon + step * drift_profile,
                               np.float32(0.0), np.float32(1.0))
                # The prediction head re-renders the same glints it put in
                # the reconstruction, so they carry no temporal signal.
                pred[spk_r, spk_c] = recon[spk_r, spk_c]
                write_f32_tensor(sdir / "pred" / f"{name}_{k}.f32t", pred)
            write_instance_png(sdir / "masks" / f"{name}.png", InstanceLabelMap(masks))
            write_binary_png(sdir / "gt" / f"{name}.png", BinaryLabelMap(gt))
        entries.append(ScenarioEntry(
            sid, cfg.frames_per_scenario * FRAME_STRIDE, sdir.resolve()))

    manifest = DatasetManifest(entries, frame_stride=FRAME_STRIDE,
                               history_depth=cfg.history_depth)
    manifest_path = out_dir / "manifest.txt"
    save_manifest(manifest, manifest_path)
    return load_manifest(manifest_path)


@dataclass(frozen=True)
class ScenarioSummary:
    scenario_id: str
    frames: int
    positive_pixels: int
    labeled_pixels: int


@dataclass(frozen=True)
class DatasetSummary:
    scenarios: tuple[ScenarioSummary, ...]

    @property
    def total_positive(self) -> int:
        return sum(s.positive_pixels for s in self.scenarios)

    @property
    def total_labeled(self) -> int:
        return sum(s.labeled_pixels for s in self.scenarios)

    @property
    def prevalence(self) -> float:
        total = self.total_labeled
        return self.total_positive / total if total else 0.0

    @property
    def anomalous_scenarios(self) -> int:
        return sum(1 for s in self.scenarios if s.positive_pixels > 0)

    def to_text(self) -> str:
        lines = [
            f"{s.scenario_id}: frames={s.frames} positive_pixels={s.positive_pixels}"
            for s in self.scenarios
        ]
        lines.append(
            f"total: scenarios={len(self.scenarios)}"
            f" anomalous={self.anomalous_scenarios}"
            f" prevalence={self.prevalence:.6f}"
        )
        return "\n".join(lines) + "\n"


def describe(manifest: DatasetManifest) -> DatasetSummary:
    """Per-scenario frame counts and positive-pixel totals."""
    summaries = []
    for entry in manifest.scenarios:
        positives = 0
        labeled = 0
        frames = 0
        for idx in manifest.sampled_indices(entry):
            gt = read_binary_png(manifest.frame_paths(entry, idx).gt)
            positives += int(np.count_nonzero(gt.data == 1))
            labeled += int(np.count_nonzero(gt.data != 255))
            frames += 1
        summaries.append(ScenarioSummary(entry.scenario_id, frames, positives, labeled))
    return DatasetSummary(tuple(summaries))
