"""Shared fixtures: one small generated dataset reused across test modules."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import pytest

from umadkit import DatasetManifest, SynthConfig, generate


@dataclass(frozen=True)
class SmallDataset:
    cfg: SynthConfig
    root: Path
    manifest_path: Path
    manifest: DatasetManifest


@pytest.fixture(scope="session")
def small_dataset(tmp_path_factory: pytest.TempPathFactory) -> SmallDataset:
    """A 4-scenario, 3-frame, 48x64 dataset (2 anomalous scenarios)."""
    cfg = SynthConfig(
        seed=7,
        num_scenarios=4,
        frames_per_scenario=3,
        image_size=(48, 64),
    )
    root = tmp_path_factory.mktemp("small_dataset")
    manifest = generate(cfg, root)
    return SmallDataset(cfg, root, root / "manifest.txt", manifest)


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory: pytest.TempPathFactory) -> SmallDataset:
    """The smallest useful dataset (2 scenarios, 16x24) for CLI tests."""
    cfg = SynthConfig(
        seed=5,
        num_scenarios=2,
        frames_per_scenario=2,
        image_size=(16, 24),
    )
    root = tmp_path_factory.mktemp("tiny_dataset")
    manifest = generate(cfg, root)
    return SmallDataset(cfg, root, root / "manifest.txt", manifest)
