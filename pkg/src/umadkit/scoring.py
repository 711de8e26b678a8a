"""Map normalization, weighted fusion, and mask-level refinement."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .core_io import (
    DIFF_KIND_ORDER,
    AnomalyMap,
    ContractError,
    DiffKind,
    FusionWeights,
    InstanceLabelMap,
    _require,
)


def normalize_map(m: AnomalyMap) -> AnomalyMap:
    """Min-max scale a map to [0, 1]; a constant map becomes all zeros."""
    lo = m.data.min()
    hi = m.data.max()
    if hi == lo:
        return AnomalyMap(np.zeros_like(m.data), normalized=True)
    return AnomalyMap((m.data - lo) / (hi - lo), normalized=True)


def fuse(maps: Mapping[DiffKind, AnomalyMap], weights: FusionWeights) -> AnomalyMap:
    """Weighted average of normalized maps; weights are sum-normalized.

    Maps whose weight is zero may be absent and are ignored when present.
    Accumulation runs in float64 so the convex-combination bound survives
    the cast back to float32.
    """
    total = float(sum(weights.as_tuple()))
    acc: np.ndarray | None = None
    for kind in DIFF_KIND_ORDER:
        w = weights.weight_for(kind)
        if w == 0.0:
            continue
        m = maps.get(kind)
        if m is None:
            raise ContractError(f"weight for {kind.value} is nonzero but its map is missing")
        _require(m.normalized, f"{kind.value} map must be normalized before fusion")
        if acc is None:
            acc = np.zeros(m.data.shape, dtype=np.float64)
        elif acc.shape != m.data.shape:
            raise ContractError(
                f"{kind.value} map shape {m.data.shape} does not match {acc.shape}")
        acc += w * m.data.astype(np.float64)
    assert acc is not None  # FusionWeights guarantees a positive weight
    return AnomalyMap((acc / total).astype(np.float32), normalized=True)


@dataclass(frozen=True)
class MaskScore:
    instance_id: int
    pixel_count: int
    score: float


@dataclass(frozen=True)
class MaskScoreTable:
    """Per-instance aggregated scores, ordered by ascending instance id."""

    entries: tuple[MaskScore, ...]

    def __post_init__(self) -> None:
        ids = [e.instance_id for e in self.entries]
        _require(all(i >= 1 for i in ids), "instance ids must be >= 1")
        _require(ids == sorted(set(ids)), "entries must be unique and ascending by id")
        _require(all(e.pixel_count >= 1 for e in self.entries),
                 "pixel counts must be >= 1")

    def to_text(self) -> str:
        lines = [f"{e.instance_id} {e.pixel_count} {e.score!r}" for e in self.entries]
        return "\n".join(lines) + ("\n" if lines else "")

    @classmethod
    def from_text(cls, text: str) -> "MaskScoreTable":
        entries = []
        for line in text.splitlines():
            if not line.strip():
                continue
            parts = line.split()
            _require(len(parts) == 3, f"bad mask score line {line!r}")
            entries.append(MaskScore(int(parts[0]), int(parts[1]), float(parts[2])))
        return cls(tuple(entries))


def _check_refine_inputs(m: AnomalyMap, masks: InstanceLabelMap) -> None:
    _require(m.data.shape == masks.data.shape,
             f"map shape {m.data.shape} does not match masks {masks.data.shape}")
    _require(m.normalized, "refinement expects a normalized map")


def _sorted_mean(values: np.ndarray) -> np.float32:
    # Sorting first makes the float64 sum independent of pixel order.
    ordered = np.sort(values, kind="stable")
    return np.float32(ordered.astype(np.float64).sum() / ordered.size)


def refine_mean(m: AnomalyMap, masks: InstanceLabelMap) -> tuple[AnomalyMap, MaskScoreTable]:
    """Replace each instance's pixels with the instance mean; background keeps
    its pixel-wise score."""
    _check_refine_inputs(m, masks)
    out = m.data.copy()
    entries = []
    for k in masks.instance_ids():
        sel = masks.data == k
        mean = _sorted_mean(m.data[sel])
        out[sel] = mean
        entries.append(MaskScore(int(k), int(sel.sum()), float(mean)))
    return AnomalyMap(out, normalized=m.normalized), MaskScoreTable(tuple(entries))


def refine_max(m: AnomalyMap, masks: InstanceLabelMap) -> tuple[AnomalyMap, MaskScoreTable]:
    """As refine_mean but aggregating with the per-instance maximum."""
    _check_refine_inputs(m, masks)
    out = m.data.copy()
    entries = []
    for k in masks.instance_ids():
        sel = masks.data == k
        peak = m.data[sel].max()
        out[sel] = peak
        entries.append(MaskScore(int(k), int(sel.sum()), float(peak)))
    return AnomalyMap(out, normalized=m.normalized), MaskScoreTable(tuple(entries))


def refine_top1(m: AnomalyMap, masks: InstanceLabelMap) -> tuple[AnomalyMap, MaskScoreTable]:
    """Keep only the instance with the highest mean score; zero the rest.

    Ties break toward the smallest instance id.  Background is zeroed as
    well: only the winning instance is left in the map.
    """
    _check_refine_inputs(m, masks)
    ids = masks.instance_ids()
    _require(ids.size >= 1, "top1 refinement needs at least one instance")
    entries = []
    best_id: int | None = None
    best_mean = -np.inf
    for k in ids:
        sel = masks.data == k
        mean = _sorted_mean(m.data[sel])
        entries.append(MaskScore(int(k), int(sel.sum()), float(mean)))
        if float(mean) > best_mean:
            best_mean = float(mean)
            best_id = int(k)
    out = np.zeros_like(m.data)
    out[masks.data == best_id] = np.float32(best_mean)
    return AnomalyMap(out, normalized=m.normalized), MaskScoreTable(tuple(entries))
