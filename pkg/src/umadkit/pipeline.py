"""Batch runs over a dataset: scoring, evaluation, baseline, weight sweeps.

Frames are independent work items; `UMADKIT_THREADS` caps the worker
count (outputs land at frame-unique paths, so the results do not depend
on scheduling).  A sweep computes each frame's normalized difference
maps once and reuses them for every weight row, which is what makes the
75-row default grid affordable; per-row results are identical to running
score + evaluate for that row on its own.
"""

from __future__ import annotations

import csv
import io
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Callable, Sequence, TypeVar

import numpy as np
from scipy import ndimage

from .core_io import (
    AnomalyMap,
    BinaryLabelMap,
    ContractError,
    DatasetManifest,
    DiffKind,
    FormatError,
    FramePaths,
    FusionWeights,
    ImageTensor,
    InstanceLabelMap,
    PredictionHistory,
    ScenarioEntry,
    UmadError,
    _require,
    frame_name,
    load_manifest,
    read_anomaly_map,
    read_binary_png,
    read_image_tensor,
    read_instance_png,
    read_rgb_png,
    write_f32_tensor,
)
from .diffs import SSIMConfig, abs_diff, l2_baseline, mse_diff, perceptual_diff, ssim_diff, temporal_diff
from .features import ExtractorConfig, extract_features, load_features
from .metrics import EvalReport, evaluate_pooled
from .scoring import MaskScoreTable, fuse, normalize_map, refine_max, refine_mean, refine_top1

T = TypeVar("T")
U = TypeVar("U")


class RefineStrategy(str, Enum):
    NONE = "none"
    MEAN = "mean"
    MAX = "max"
    TOP1 = "top1"


class MaskSource(str, Enum):
    PREDICTED = "predicted"
    GT = "gt"


@dataclass(frozen=True)
class RunConfig:
    """Everything one scoring run needs."""

    manifest_path: Path
    weights: FusionWeights
    out_dir: Path
    strategy: RefineStrategy = RefineStrategy.NONE
    mask_source: MaskSource = MaskSource.PREDICTED
    ssim: SSIMConfig = field(default_factory=SSIMConfig)
    extractor: ExtractorConfig = field(default_factory=ExtractorConfig)
    features_dir: Path | None = None
    history: int | None = None


def _worker_count() -> int:
    base = os.cpu_count() or 1
    env = os.environ.get("UMADKIT_THREADS")
    if env is None:
        return max(1, base)
    try:
        cap = int(env)
    except ValueError:
        raise ContractError(f"UMADKIT_THREADS must be an integer, got {env!r}") from None
    _require(cap >= 1, f"UMADKIT_THREADS must be >= 1, got {cap}")
    return max(1, min(base, cap))


def _map_frames(func: Callable[[T], U], tasks: Sequence[T]) -> list[U]:
    workers = _worker_count()
    if workers <= 1 or len(tasks) <= 1:
        return [func(t) for t in tasks]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(func, tasks))


def _read_input(role: str, sid: str, idx: int, loader: Callable[[], T]) -> T:
    try:
        return loader()
    except FormatError as exc:
        raise FormatError(f"scenario {sid!r} frame {idx} ({role}): {exc}") from exc


def _needed_kinds(weights: FusionWeights) -> set[DiffKind]:
    return {kind for kind in DiffKind if weights.weight_for(kind) > 0.0}


def _feature_paths(features_dir: Path, sid: str, idx: int) -> tuple[Path, Path]:
    name = frame_name(idx)
    return (
        Path(features_dir) / sid / f"{name}_rgb.umfs",
        Path(features_dir) / sid / f"{name}_recon.umfs",
    )


def _frame_maps(
    manifest: DatasetManifest,
    entry: ScenarioEntry,
    idx: int,
    kinds: set[DiffKind],
    ssim_cfg: SSIMConfig,
    extractor: ExtractorConfig,
    features_dir: Path | None,
    history: int | None,
) -> dict[DiffKind, AnomalyMap]:
    """Compute the requested difference maps for one frame, normalized."""
    sid = entry.scenario_id
    paths = manifest.frame_paths(entry, idx)
    rgb = _read_input("rgb", sid, idx, lambda: read_rgb_png(paths.rgb))
    recon = _read_input("recon", sid, idx, lambda: read_image_tensor(paths.recon))

    maps: dict[DiffKind, AnomalyMap] = {}
    if DiffKind.ABSOLUTE in kinds:
        maps[DiffKind.ABSOLUTE] = abs_diff(rgb, recon)
    if DiffKind.MSE in kinds:
        maps[DiffKind.MSE] = mse_diff(rgb, recon)
    if DiffKind.SSIM in kinds:
        maps[DiffKind.SSIM] = ssim_diff(rgb, recon, ssim_cfg)
    if DiffKind.PERCEPTUAL in kinds:
        if features_dir is not None:
            rgb_path, recon_path = _feature_paths(features_dir, sid, idx)
            f_rgb = _read_input("features rgb", sid, idx, lambda: load_features(rgb_path))
            f_recon = _read_input(
                "features recon", sid, idx, lambda: load_features(recon_path))
        else:
            f_rgb = extract_features(rgb, extractor)
            f_recon = extract_features(recon, extractor)
        maps[DiffKind.PERCEPTUAL] = perceptual_diff(
            f_rgb, f_recon, rgb.height, rgb.width)
    if DiffKind.TEMPORAL in kinds:
        depth = manifest.history_depth if history is None else history
        _require(1 <= depth <= manifest.history_depth,
                 f"history must lie in [1, {manifest.history_depth}], got {depth}")
        preds = [
            _read_input(f"pred_{k}", sid, idx,
                        lambda p=paths.preds[k - 1]: read_image_tensor(p))
            for k in range(1, depth + 1)
        ]
        hist = PredictionHistory(idx, preds, recon)
        maps[DiffKind.TEMPORAL] = temporal_diff(hist)

    return {kind: normalize_map(m) for kind, m in maps.items()}


def _instances_for(
    manifest: DatasetManifest, entry: ScenarioEntry, idx: int, source: MaskSource
) -> InstanceLabelMap:
    paths = manifest.frame_paths(entry, idx)
    sid = entry.scenario_id
    if source is MaskSource.PREDICTED:
        return _read_input("masks", sid, idx, lambda: read_instance_png(paths.masks))
    gt = _read_input("gt", sid, idx, lambda: read_binary_png(paths.gt))
    labeled, _ = ndimage.label(gt.data == 1)
    return InstanceLabelMap(labeled.astype(np.int32))


def _refine(
    fused: AnomalyMap, instances: InstanceLabelMap | None, strategy: RefineStrategy
) -> tuple[AnomalyMap, MaskScoreTable | None]:
    if strategy is RefineStrategy.NONE:
        return fused, None
    assert instances is not None
    if strategy is RefineStrategy.MEAN:
        return refine_mean(fused, instances)
    if strategy is RefineStrategy.MAX:
        return refine_max(fused, instances)
    return refine_top1(fused, instances)


def run_score(rc: RunConfig) -> list[Path]:
    """Score every sampled frame and write maps (and mask tables) to disk."""
    manifest = load_manifest(rc.manifest_path)
    kinds = _needed_kinds(rc.weights)
    out_dir = Path(rc.out_dir)
    tasks = [
        (entry, idx)
        for entry in manifest.scenarios
        for idx in manifest.sampled_indices(entry)
    ]

    def work(task: tuple[ScenarioEntry, int]) -> Path:
        entry, idx = task
        maps = _frame_maps(manifest, entry, idx, kinds, rc.ssim,
                           rc.extractor, rc.features_dir, rc.history)
        fused = fuse(maps, rc.weights)
        instances = None
        if rc.strategy is not RefineStrategy.NONE:
            instances = _instances_for(manifest, entry, idx, rc.mask_source)
        refined, table = _refine(fused, instances, rc.strategy)
        map_path = out_dir / entry.scenario_id / f"{frame_name(idx)}.f32t"
        write_f32_tensor(map_path, refined.data)
        if table is not None:
            table_path = out_dir / entry.scenario_id / f"{frame_name(idx)}.masks.txt"
            table_path.write_text(table.to_text())
        return map_path

    return _map_frames(work, tasks)


def run_baseline(manifest_path: Path, out_dir: Path) -> list[Path]:
    """Write raw per-pixel Euclidean distance maps for every frame."""
    manifest = load_manifest(manifest_path)
    out_dir = Path(out_dir)
    tasks = [
        (entry, idx)
        for entry in manifest.scenarios
        for idx in manifest.sampled_indices(entry)
    ]

    def work(task: tuple[ScenarioEntry, int]) -> Path:
        entry, idx = task
        sid = entry.scenario_id
        paths = manifest.frame_paths(entry, idx)
        rgb = _read_input("rgb", sid, idx, lambda: read_rgb_png(paths.rgb))
        recon = _read_input("recon", sid, idx, lambda: read_image_tensor(paths.recon))
        amap = l2_baseline(rgb, recon)
        map_path = out_dir / sid / f"{frame_name(idx)}.f32t"
        write_f32_tensor(map_path, amap.data)
        return map_path

    return _map_frames(work, tasks)


def run_evaluate(score_dir: Path, manifest_path: Path) -> EvalReport:
    """Pool every frame's scores against ground truth and compute metrics."""
    manifest = load_manifest(manifest_path)
    score_dir = Path(score_dir)
    score_chunks: list[np.ndarray] = []
    label_chunks: list[np.ndarray] = []
    num_ignored = 0
    for entry in manifest.scenarios:
        for idx in manifest.sampled_indices(entry):
            sid = entry.scenario_id
            map_path = score_dir / sid / f"{frame_name(idx)}.f32t"
            amap = _read_input("score map", sid, idx, lambda: read_anomaly_map(map_path))
            gt = _read_input(
                "gt", sid, idx,
                lambda: read_binary_png(manifest.frame_paths(entry, idx).gt))
            _require(amap.data.shape == gt.data.shape,
                     f"scenario {sid!r} frame {idx}: map shape {amap.data.shape}"
                     f" does not match gt {gt.data.shape}")
            keep = gt.data != 255
            num_ignored += int(keep.size - np.count_nonzero(keep))
            score_chunks.append(amap.data[keep])
            label_chunks.append(gt.data[keep])
    _require(bool(score_chunks), "manifest lists no frames to evaluate")
    scores = np.concatenate(score_chunks)
    labels = np.concatenate(label_chunks)
    return evaluate_pooled(scores, labels, num_ignored=num_ignored)


# ---------------------------------------------------------------------------
# Weight sweeps
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SweepRow:
    """One grid row: the axes that vary across the default sweep."""

    weights: FusionWeights
    strategy: RefineStrategy = RefineStrategy.NONE
    mask_source: MaskSource | None = None

    def __post_init__(self) -> None:
        if self.strategy is not RefineStrategy.NONE:
            _require(self.mask_source is not None,
                     f"strategy {self.strategy.value} requires a mask source")


@dataclass(frozen=True)
class SweepRowResult:
    index: int
    row: SweepRow
    report: EvalReport | None
    error: str | None


@dataclass(frozen=True)
class SweepResult:
    rows: tuple[SweepRowResult, ...]

    def to_text(self) -> str:
        header = (f"{'row':>3}  {'w_abs':>6} {'w_mse':>6} {'w_ssim':>6}"
                  f" {'w_per':>6} {'w_temp':>6}  {'masks':<9} {'strategy':<8}"
                  f"  {'AP':>7} {'FPR95':>7} {'AUROC':>7}")
        lines = [header]
        for r in self.rows:
            w = r.row.weights.as_tuple()
            masks = r.row.mask_source.value if r.row.mask_source else "-"
            cells = " ".join(f"{v:>6.3f}" for v in w)
            if r.report is not None:
                metrics = (f"{100 * r.report.ap:>7.2f} {100 * r.report.fpr95:>7.2f}"
                           f" {100 * r.report.auroc:>7.2f}")
            else:
                metrics = f"error: {r.error}"
            lines.append(f"{r.index:>3}  {cells}  {masks:<9} {r.row.strategy.value:<8}"
                         f"  {metrics}")
        return "\n".join(lines) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["row", "w_abs", "w_mse", "w_ssim", "w_per", "w_temp",
                         "mask_source", "strategy", "ap", "fpr95", "auroc", "error"])
        for r in self.rows:
            w = [format(v, "g") for v in r.row.weights.as_tuple()]
            masks = r.row.mask_source.value if r.row.mask_source else ""
            if r.report is not None:
                metrics = [f"{100 * r.report.ap:.2f}", f"{100 * r.report.fpr95:.2f}",
                           f"{100 * r.report.auroc:.2f}"]
                err = ""
            else:
                metrics = ["", "", ""]
                err = r.error or "error"
            writer.writerow([r.index, *w, masks, r.row.strategy.value, *metrics, err])
        return buf.getvalue()


TABLE_WEIGHT_ROWS: tuple[FusionWeights, ...] = (
    FusionWeights(1, 0, 0, 0, 0),
    FusionWeights(0, 1, 0, 0, 0),
    FusionWeights(0, 0, 1, 0, 0),
    FusionWeights(0, 0, 0, 1, 0),
    FusionWeights(0, 0, 0, 0, 1),
    FusionWeights(0, 1 / 3, 1 / 3, 1 / 3, 0),
    FusionWeights(1 / 3, 0, 1 / 3, 1 / 3, 0),
    FusionWeights(1 / 3, 1 / 3, 0, 1 / 3, 0),
    FusionWeights(1 / 3, 1 / 3, 1 / 3, 0, 0),
    FusionWeights(0, 1 / 4, 1 / 4, 1 / 4, 1 / 4),
    FusionWeights(1 / 4, 0, 1 / 4, 1 / 4, 1 / 4),
    FusionWeights(1 / 4, 1 / 4, 0, 1 / 4, 1 / 4),
    FusionWeights(1 / 4, 1 / 4, 1 / 4, 0, 1 / 4),
    FusionWeights(1 / 4, 1 / 4, 1 / 4, 1 / 4, 0),
    FusionWeights(1 / 5, 1 / 5, 1 / 5, 1 / 5, 1 / 5),
)

DEFAULT_SWEEP_SETTINGS: tuple[tuple[MaskSource | None, RefineStrategy], ...] = (
    (MaskSource.GT, RefineStrategy.MEAN),
    (MaskSource.PREDICTED, RefineStrategy.MEAN),
    (MaskSource.PREDICTED, RefineStrategy.MAX),
    (None, RefineStrategy.NONE),
    (MaskSource.PREDICTED, RefineStrategy.TOP1),
)


def default_sweep_grid() -> list[SweepRow]:
    """All 15 weight rows crossed with the five mask/strategy settings."""
    return [
        SweepRow(weights=w, strategy=strategy, mask_source=source)
        for source, strategy in DEFAULT_SWEEP_SETTINGS
        for w in TABLE_WEIGHT_ROWS
    ]


def run_sweep(
    manifest_path: Path,
    grid: Sequence[SweepRow],
    out_dir: Path,
    *,
    ssim: SSIMConfig | None = None,
    extractor: ExtractorConfig | None = None,
    features_dir: Path | None = None,
    history: int | None = None,
) -> SweepResult:
    """Evaluate every grid row; rows share per-frame difference maps.

    Row results match a standalone run_score + run_evaluate with the same
    settings.  A row that fails records its error and the sweep goes on.
    """
    _require(len(grid) > 0, "sweep grid must not be empty")
    ssim = ssim or SSIMConfig()
    extractor = extractor or ExtractorConfig()
    manifest = load_manifest(manifest_path)
    frames = [
        (entry, idx)
        for entry in manifest.scenarios
        for idx in manifest.sampled_indices(entry)
    ]
    all_kinds: set[DiffKind] = set()
    for row in grid:
        all_kinds |= _needed_kinds(row.weights)
    sources = {row.mask_source for row in grid if row.mask_source is not None}

    def precompute(task: tuple[ScenarioEntry, int]):
        entry, idx = task
        maps = _frame_maps(manifest, entry, idx, all_kinds, ssim,
                           extractor, features_dir, history)
        gt = _read_input(
            "gt", entry.scenario_id, idx,
            lambda: read_binary_png(manifest.frame_paths(entry, idx).gt))
        instances = {
            src: _instances_for(manifest, entry, idx, src) for src in sources
        }
        return maps, gt.data != 255, gt, instances

    prepared = _map_frames(precompute, frames)
    pooled_labels = np.concatenate(
        [gt.data[keep] for _, keep, gt, _ in prepared])
    num_ignored = int(sum(k.size - np.count_nonzero(k) for _, k, _, _ in prepared))

    results: list[SweepRowResult] = []
    for i, row in enumerate(grid):
        try:
            chunks: list[np.ndarray] = []
            for (maps, keep, _, instances) in prepared:
                fused = fuse(maps, row.weights)
                inst = instances[row.mask_source] if row.mask_source else None
                refined, _ = _refine(fused, inst, row.strategy)
                chunks.append(refined.data[keep])
            scores = np.concatenate(chunks)
            report = evaluate_pooled(scores, pooled_labels, num_ignored=num_ignored)
            results.append(SweepRowResult(i, row, report, None))
        except UmadError as exc:
            results.append(SweepRowResult(i, row, None, str(exc)))

    sweep = SweepResult(tuple(results))
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "sweep.txt").write_text(sweep.to_text())
    (out_dir / "sweep.csv").write_text(sweep.to_csv())
    return sweep
