"""Release gate: six criteria, one test each.

Run ``pytest tests/test_acceptance.py -v``; the PASSED/FAILED line of each
``test_criterion_*`` test is the verdict for that criterion.  Every test
measures its own wall time and asserts its runtime budget.
"""

from __future__ import annotations

import hashlib
import struct
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pytest
from scipy import ndimage

from umadkit import (
    AnomalyMap,
    ContractError,
    DatasetManifest,
    DiffKind,
    ExtractorConfig,
    FeatureStack,
    FormatError,
    FusionWeights,
    ImageTensor,
    InstanceLabelMap,
    MaskSource,
    PredictionHistory,
    RefineStrategy,
    RunConfig,
    SSIMConfig,
    SynthConfig,
    abs_diff,
    auroc,
    average_precision,
    cli,
    describe,
    extract_features,
    fpr_at_95_tpr,
    fuse,
    generate,
    l2_baseline,
    load_features,
    load_manifest,
    mse_diff,
    normalize_map,
    oracle_ap,
    oracle_auroc,
    oracle_fpr95,
    perceptual_diff,
    pool,
    read_tensor,
    refine_max,
    refine_mean,
    refine_top1,
    run_baseline,
    run_evaluate,
    run_score,
    run_sweep,
    ssim_diff,
    temporal_diff,
    write_tensor,
)
from umadkit.core_io import (
    BinaryLabelMap,
    frame_name,
    read_anomaly_map,
    read_binary_png,
    read_image_tensor,
    read_instance_png,
    read_rgb_png,
    write_f32_tensor,
)
from umadkit.pipeline import SweepRow

TOL = 1e-6
METRIC_TOL = 1e-9


@dataclass(frozen=True)
class Bench:
    root: Path
    manifest_path: Path
    manifest: DatasetManifest
    gen_seconds: float


@pytest.fixture(scope="session")
def bench(tmp_path_factory: pytest.TempPathFactory) -> Bench:
    """Default benchmark (seed 42), built once.

    Generation time is charged to criterion 4's end-to-end budget, not to the
    criteria that merely scan the files.
    """
    root = tmp_path_factory.mktemp("bench_seed42")
    start = time.perf_counter()
    manifest = generate(SynthConfig(), root)
    gen_seconds = time.perf_counter() - start
    return Bench(root, root / "manifest.txt", manifest, gen_seconds)


def tree_digest(root: Path) -> dict[str, str]:
    return {
        str(p.relative_to(root)): hashlib.sha256(p.read_bytes()).hexdigest()
        for p in sorted(root.rglob("*"))
        if p.is_file()
    }


def image(h: int, w: int, rgb: tuple[float, float, float]) -> ImageTensor:
    data = np.empty((h, w, 3), dtype=np.float32)
    data[:] = rgb
    return ImageTensor(data)


def norm(values) -> AnomalyMap:
    return AnomalyMap(np.asarray(values, dtype=np.float32), normalized=True)


def touched_dataset(root: Path, scenarios: int, frames: int) -> Path:
    """A manifest whose referenced files all exist (as empty placeholders)."""
    lines = ["stride 1", "history 1"]
    for s in range(scenarios):
        sid = f"s{s:03d}"
        base = root / sid
        for sub in ("rgb", "recon", "pred", "masks", "gt"):
            (base / sub).mkdir(parents=True)
        for i in range(frames):
            name = frame_name(i)
            (base / "rgb" / f"{name}.png").touch()
            (base / "recon" / f"{name}.f32t").touch()
            (base / "pred" / f"{name}_1.f32t").touch()
            (base / "masks" / f"{name}.png").touch()
            (base / "gt" / f"{name}.png").touch()
        lines.append(f"{sid} {frames} {sid}")
    path = root / "manifest.txt"
    path.write_text("\n".join(lines) + "\n")
    return path


def random_tied_instance(rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    n = int(rng.integers(2, 1000))
    values = rng.random(int(rng.integers(1, 12)))  # few distinct values → ties
    scores = rng.choice(values, size=n)
    labels = (rng.random(n) < rng.uniform(0.05, 0.95)).astype(np.int64)
    labels[rng.integers(0, n)] = 1
    labels[rng.integers(0, n)] = 0
    if n == 2:
        labels[0], labels[1] = 1, 0
    return scores, labels


# ---------------------------------------------------------------------------
# criterion 1 — formula unit suite (every tagged worked example, < 5 s)
# ---------------------------------------------------------------------------


def test_criterion_1_formula_unit_suite(
    bench: Bench, tiny_dataset, tmp_path: Path
) -> None:
    start = time.perf_counter()

    # --- tensor container -------------------------------------------------
    quad = np.array([[[0.0], [0.5]], [[0.25], [1.0]]], dtype=np.float32)
    p = tmp_path / "quad.f32t"
    write_f32_tensor(p, quad)
    blob = p.read_bytes()
    assert len(blob) == 40  # 24 header bytes + 16 payload bytes
    assert np.array_equal(read_tensor(p).data, quad)
    with pytest.raises(ContractError):
        write_f32_tensor(tmp_path / "empty.f32t", np.zeros((0, 2, 1), np.float32))
    rgb1 = ImageTensor(np.array([[[0.1, 0.2, 0.3]]], dtype=np.float32))
    write_tensor(tmp_path / "px.f32t", rgb1)
    assert np.array_equal(read_tensor(tmp_path / "px.f32t").data, rgb1.data)
    bad = bytearray(blob)
    bad[:4] = b"XXXX"
    (tmp_path / "magic.f32t").write_bytes(bad)
    with pytest.raises(FormatError):
        read_tensor(tmp_path / "magic.f32t")
    (tmp_path / "short.f32t").write_bytes(blob[:-4])
    with pytest.raises(FormatError):
        read_tensor(tmp_path / "short.f32t")

    # --- feature-stack container ------------------------------------------
    stack = FeatureStack([
        np.arange(8, dtype=np.float32).reshape(2, 2, 2),
        np.arange(2, dtype=np.float32).reshape(1, 1, 2),
    ])
    write_tensor(tmp_path / "stack.umfs", stack)
    loaded = load_features(tmp_path / "stack.umfs")
    assert len(loaded.layers) == 2
    assert all(np.array_equal(a, b) for a, b in zip(loaded.layers, stack.layers))
    zero_c = struct.pack("<4sII", b"UMFS", 1, 1) + struct.pack("<3I", 2, 2, 0)
    (tmp_path / "zc.umfs").write_bytes(zero_c)
    with pytest.raises(FormatError):
        load_features(tmp_path / "zc.umfs")

    # --- manifest ----------------------------------------------------------
    mpath = touched_dataset(tmp_path / "flat", scenarios=2, frames=20)
    manifest = load_manifest(mpath)
    assert len(manifest.scenarios) == 2
    assert all(
        len(list(manifest.sampled_indices(e))) == 20 for e in manifest.scenarios
    )
    (tmp_path / "flat" / "s001" / "recon" / "0007.f32t").unlink()
    with pytest.raises(FormatError, match=r"s001.*frame 7"):
        load_manifest(mpath)

    # --- visual differences -------------------------------------------------
    a = ImageTensor(np.array([[[0.10, 0.20, 0.30]]], dtype=np.float32))
    b = ImageTensor(np.array([[[0.13, 0.26, 0.39]]], dtype=np.float32))
    assert abs_diff(a, b).data[0, 0] == pytest.approx(0.06, abs=TOL)
    assert mse_diff(a, b).data[0, 0] == pytest.approx(0.0042, abs=TOL)
    same = image(3, 4, (0.3, 0.5, 0.7))
    assert float(abs_diff(same, same).data.max()) == 0.0
    assert float(mse_diff(same, same).data.max()) == 0.0
    black, white = image(3, 4, (0, 0, 0)), image(3, 4, (1, 1, 1))
    assert np.allclose(abs_diff(black, white).data, 1.0, atol=TOL)
    assert np.allclose(mse_diff(black, white).data, 1.0, atol=TOL)

    big = image(12, 12, (0.3, 0.3, 0.3))
    assert float(ssim_diff(big, big).data.max()) == 0.0
    d01 = ssim_diff(image(12, 12, (0, 0, 0)), image(12, 12, (1, 1, 1))).data
    expected_ssim = 1e-4 / (1 + 1e-4)
    assert np.allclose(d01, (1 - expected_ssim) / 2, atol=TOL)  # ≈ 0.49995
    dq = ssim_diff(image(12, 12, (0.25,) * 3), image(12, 12, (0.75,) * 3)).data
    expected_ssim = (2 * 0.1875 + 1e-4) / (0.0625 + 0.5625 + 1e-4)
    assert np.allclose(dq, (1 - expected_ssim) / 2, atol=TOL)  # ≈ 0.19997

    f_a = FeatureStack([np.full((4, 5, 1), 0.25, dtype=np.float32)])
    f_b = FeatureStack([np.full((4, 5, 1), 0.75, dtype=np.float32)])
    assert float(perceptual_diff(f_a, f_a, 4, 5).data.max()) == 0.0
    assert np.allclose(perceptual_diff(f_a, f_b, 4, 5).data, 0.5, atol=TOL)
    two_a = FeatureStack([
        np.zeros((4, 4, 2), dtype=np.float32), np.zeros((2, 2, 2), dtype=np.float32)
    ])
    two_b = FeatureStack([
        np.full((4, 4, 2), 0.2, dtype=np.float32),
        np.full((2, 2, 2), 0.4, dtype=np.float32),
    ])
    assert np.allclose(perceptual_diff(two_a, two_b, 4, 4).data, 0.6, atol=TOL)

    recon = image(2, 2, (0.5, 0.5, 0.5))
    assert float(temporal_diff(PredictionHistory(0, [recon], recon)).data.max()) == 0.0
    hist = PredictionHistory(
        0, [image(2, 2, (0.7,) * 3), image(2, 2, (0.1,) * 3)], recon
    )
    assert np.allclose(temporal_diff(hist).data, 0.3, atol=TOL)
    with pytest.raises(ContractError):
        PredictionHistory(0, [], recon)

    assert float(l2_baseline(same, same).data.max()) == 0.0
    shifted = image(3, 4, (0.6, 0.5, 0.7))  # difference (0.3, 0, 0)
    assert np.allclose(l2_baseline(same, shifted).data, 0.3, atol=TOL)
    assert np.allclose(
        l2_baseline(black, white).data, np.sqrt(3.0), atol=TOL
    )  # ≈ 1.7320508

    # --- feature extractor ---------------------------------------------------
    cfg = ExtractorConfig()
    probe = ImageTensor(
        np.random.default_rng(0).random((16, 24, 3)).astype(np.float32)
    )
    once, twice = extract_features(probe, cfg), extract_features(probe, cfg)
    assert all(np.array_equal(x, y) for x, y in zip(once.layers, twice.layers))
    dark = extract_features(ImageTensor(np.zeros((8, 8, 3), np.float32)), cfg)
    assert all(float(np.abs(layer).max()) == 0.0 for layer in dark.layers)
    ladder = extract_features(ImageTensor(np.zeros((64, 64, 3), np.float32)), cfg)
    assert [layer.shape[:2] for layer in ladder.layers] == [
        (64, 64), (32, 32), (16, 16)
    ]

    # --- normalization / fusion / refinement --------------------------------
    out = normalize_map(AnomalyMap(np.array([[0.2, 0.4, 0.6]], np.float32)))
    assert np.allclose(out.data, [[0.0, 0.5, 1.0]], atol=TOL)
    assert float(
        normalize_map(AnomalyMap(np.full((2, 2), 0.7, np.float32))).data.max()
    ) == 0.0
    spanned = normalize_map(AnomalyMap(np.array([[0.0, 0.3, 1.0]], np.float32)))
    assert spanned.data[0, 0] == 0.0 and spanned.data[0, 2] == 1.0

    m = norm([[0.1, 0.8]])
    assert np.array_equal(
        fuse({DiffKind.ABSOLUTE: m}, FusionWeights(1, 0, 0, 0, 0)).data, m.data
    )
    assert np.array_equal(
        fuse(
            {DiffKind.ABSOLUTE: m, DiffKind.MSE: m}, FusionWeights(0.5, 0.5, 0, 0, 0)
        ).data,
        m.data,
    )
    pair = {DiffKind.ABSOLUTE: norm([[0.1, 0.9]]), DiffKind.MSE: norm([[0.5, 0.3]])}
    assert np.array_equal(
        fuse(pair, FusionWeights(2, 2, 0, 0, 0)).data,
        fuse(pair, FusionWeights(0.5, 0.5, 0, 0, 0)).data,
    )

    refined, _ = refine_mean(
        norm([[0.2, 0.4, 0.7]]), InstanceLabelMap(np.array([[1, 1, 0]]))
    )
    assert np.allclose(refined.data, [[0.3, 0.3, 0.7]], atol=TOL)
    refined, _ = refine_mean(
        norm([[0.1, 0.1], [0.8, 0.6]]), InstanceLabelMap(np.array([[1, 1], [2, 2]]))
    )
    assert np.allclose(refined.data, [[0.1, 0.1], [0.7, 0.7]], atol=TOL)
    refined, _ = refine_max(
        norm([[0.2, 0.4, 0.9]]), InstanceLabelMap(np.array([[1, 1, 0]]))
    )
    assert np.allclose(refined.data, [[0.4, 0.4, 0.9]], atol=TOL)
    solo, _ = refine_max(norm([[0.3, 0.5]]), InstanceLabelMap(np.array([[1, 0]])))
    assert solo.data[0, 0] == pytest.approx(0.3)
    top, _ = refine_top1(
        norm([[0.7, 0.7], [0.4, 0.4]]), InstanceLabelMap(np.array([[1, 1], [2, 2]]))
    )
    assert np.allclose(top.data, [[0.7, 0.7], [0.0, 0.0]], atol=TOL)
    tie, _ = refine_top1(
        norm([[0.5, 0.5]]), InstanceLabelMap(np.array([[2, 1]]))
    )
    assert np.allclose(tie.data, [[0.0, 0.5]], atol=TOL)  # smallest id wins
    single, _ = refine_top1(norm([[0.6, 0.2]]), InstanceLabelMap(np.array([[1, 0]])))
    assert np.allclose(single.data, [[0.6, 0.0]], atol=TOL)
    with pytest.raises(ContractError):
        refine_top1(norm([[0.5]]), InstanceLabelMap(np.array([[0]])))

    # --- metrics -------------------------------------------------------------
    frame_a = (norm([[0.1, 0.2], [0.3, 0.4]]),
               BinaryLabelMap(np.array([[0, 1], [255, 0]])))
    frame_b = (norm([[0.5, 0.6], [0.7, 0.8]]),
               BinaryLabelMap(np.array([[1, 1], [0, 0]])))
    scores, labels = pool([frame_a, frame_b])
    assert scores.size == 7 and labels.size == 7
    empty_scores, empty_labels = pool([])
    assert empty_scores.size == 0 and empty_labels.size == 0
    veiled, _ = pool([(norm([[0.5]]), BinaryLabelMap(np.array([[255]])))])
    assert veiled.size == 0
    with pytest.raises(ContractError):
        auroc(veiled, np.array([], dtype=np.int64))

    four = np.array([0.9, 0.8, 0.3, 0.1])
    assert auroc(four, np.array([1, 1, 0, 0])) == pytest.approx(1.0, abs=METRIC_TOL)
    assert auroc(np.full(6, 0.5), np.array([1, 0, 1, 0, 1, 0])) == pytest.approx(
        0.5, abs=METRIC_TOL
    )
    assert auroc(four, np.array([1, 0, 0, 1])) == pytest.approx(0.5, abs=METRIC_TOL)
    assert average_precision(four, np.array([1, 1, 0, 0])) == pytest.approx(
        1.0, abs=METRIC_TOL
    )
    assert average_precision(four, np.array([1, 0, 1, 0])) == pytest.approx(
        5.0 / 6.0, abs=METRIC_TOL
    )
    assert average_precision(four, np.ones(4, dtype=np.int64)) == pytest.approx(
        1.0, abs=METRIC_TOL
    )
    assert fpr_at_95_tpr(four, np.array([1, 1, 0, 0])) == pytest.approx(
        0.0, abs=METRIC_TOL
    )
    spread = np.concatenate([
        np.full(19, 0.9), [0.1], np.full(10, 0.95), np.full(10, 0.3)
    ])
    spread_labels = np.concatenate([np.ones(20), np.zeros(20)]).astype(np.int64)
    assert fpr_at_95_tpr(spread, spread_labels) == pytest.approx(
        0.5, abs=METRIC_TOL
    )
    assert fpr_at_95_tpr(four, np.array([0, 0, 1, 1])) == pytest.approx(
        1.0, abs=METRIC_TOL
    )
    assert oracle_auroc(four, np.array([1, 1, 0, 0])) == pytest.approx(
        1.0, abs=METRIC_TOL
    )
    assert oracle_ap(four, np.array([1, 1, 0, 0])) == pytest.approx(
        1.0, abs=METRIC_TOL
    )
    assert oracle_fpr95(four, np.array([1, 1, 0, 0])) == pytest.approx(
        0.0, abs=METRIC_TOL
    )
    assert oracle_auroc(np.full(4, 0.2), np.array([1, 0, 1, 0])) == pytest.approx(
        0.5, abs=METRIC_TOL
    )
    rng = np.random.default_rng(7)
    for _ in range(3):  # spot-check; criterion 2 runs the full 100
        s, l = random_tied_instance(rng)
        assert auroc(s, l) == pytest.approx(oracle_auroc(s, l), abs=METRIC_TOL)
        assert average_precision(s, l) == pytest.approx(
            oracle_ap(s, l), abs=METRIC_TOL
        )
        assert fpr_at_95_tpr(s, l) == pytest.approx(
            oracle_fpr95(s, l), abs=METRIC_TOL
        )

    # --- synthetic benchmark -------------------------------------------------
    twin_cfg = SynthConfig(
        seed=5, num_scenarios=2, frames_per_scenario=2, image_size=(16, 24)
    )
    generate(twin_cfg, tmp_path / "twin_a")
    generate(twin_cfg, tmp_path / "twin_b")
    assert tree_digest(tmp_path / "twin_a") == tree_digest(tmp_path / "twin_b")

    calm_cfg = SynthConfig(
        seed=3, num_scenarios=2, frames_per_scenario=1, image_size=(16, 16),
        anomaly_rate=0.0,
    )
    calm = generate(calm_cfg, tmp_path / "calm")
    for entry in calm.scenarios:
        for idx in calm.sampled_indices(entry):
            gt = read_binary_png(calm.frame_paths(entry, idx).gt)
            assert int(gt.data.sum()) == 0

    summary = describe(bench.manifest)
    assert len(summary.scenarios) == 8
    assert all(s.frames == 20 for s in summary.scenarios)
    assert summary.anomalous_scenarios == 4
    for entry, scen in zip(bench.manifest.scenarios, summary.scenarios):
        if scen.positive_pixels == 0:
            continue
        for idx in bench.manifest.sampled_indices(entry):
            paths = bench.manifest.frame_paths(entry, idx)
            gt = read_binary_png(paths.gt)
            masks = read_instance_png(paths.masks)
            positive = gt.data == 1
            assert positive.any()  # every anomalous frame is labeled
            ids = np.unique(masks.data[positive])
            assert ids.size == 1 and ids[0] >= 1  # anomaly is one instance
    hollow = describe(DatasetManifest([]))
    assert hollow.total_positive == 0 and hollow.prevalence == 0.0

    # --- batch orchestration --------------------------------------------------
    tiny_manifest = tiny_dataset.manifest
    run_score(RunConfig(
        manifest_path=tiny_dataset.manifest_path,
        weights=FusionWeights(0, 0, 0, 1, 0),
        out_dir=tmp_path / "perc",
    ))
    entry = tiny_manifest.scenarios[0]
    paths = tiny_manifest.frame_paths(entry, 0)
    expected = normalize_map(perceptual_diff(
        extract_features(read_rgb_png(paths.rgb), ExtractorConfig()),
        extract_features(read_image_tensor(paths.recon), ExtractorConfig()),
        16, 24,
    ))
    got = read_anomaly_map(tmp_path / "perc" / entry.scenario_id / "0000.f32t")
    assert np.array_equal(got.data, expected.data)

    run_score(RunConfig(
        manifest_path=tiny_dataset.manifest_path,
        weights=FusionWeights(1, 0, 0, 0, 0),
        out_dir=tmp_path / "meangt",
        strategy=RefineStrategy.MEAN,
        mask_source=MaskSource.GT,
    ))
    for entry in tiny_manifest.scenarios:
        for idx in tiny_manifest.sampled_indices(entry):
            gt = read_binary_png(tiny_manifest.frame_paths(entry, idx).gt)
            refined = read_anomaly_map(
                tmp_path / "meangt" / entry.scenario_id / f"{frame_name(idx)}.f32t"
            )
            labeled, count = ndimage.label(gt.data == 1)
            for k in range(1, count + 1):
                region = refined.data[labeled == k]
                assert float(region.max()) == float(region.min())

    with pytest.raises(ContractError):
        FusionWeights(0, 0, 0, 0, 0)

    calm_manifest_path = tmp_path / "calm" / "manifest.txt"
    run_baseline(calm_manifest_path, tmp_path / "calm_maps")
    with pytest.raises(ContractError, match="positive"):
        run_evaluate(tmp_path / "calm_maps", calm_manifest_path)

    h, w = 16, 24
    for entry in tiny_manifest.scenarios:
        for idx in tiny_manifest.sampled_indices(entry):
            gt = read_binary_png(tiny_manifest.frame_paths(entry, idx).gt)
            write_f32_tensor(
                tmp_path / "perfect" / entry.scenario_id / f"{frame_name(idx)}.f32t",
                (gt.data == 1).astype(np.float32),
            )
            write_f32_tensor(
                tmp_path / "flatline" / entry.scenario_id / f"{frame_name(idx)}.f32t",
                np.full((h, w), 0.5, dtype=np.float32),
            )
    perfect = run_evaluate(tmp_path / "perfect", tiny_dataset.manifest_path)
    assert (perfect.ap, perfect.auroc, perfect.fpr95) == (1.0, 1.0, 0.0)
    flat = run_evaluate(tmp_path / "flatline", tiny_dataset.manifest_path)
    assert flat.auroc == 0.5

    lone = run_sweep(
        tiny_dataset.manifest_path,
        [SweepRow(weights=FusionWeights(1, 0, 0, 0, 0), strategy=RefineStrategy.NONE)],
        tmp_path / "lone",
    )
    assert len(lone.rows) == 1
    twice_row = SweepRow(weights=FusionWeights(1, 0, 0, 0, 0),
                         strategy=RefineStrategy.NONE)
    doubled = run_sweep(
        tiny_dataset.manifest_path, [twice_row, twice_row], tmp_path / "doubled"
    )
    assert len(doubled.rows) == 2
    assert doubled.rows[0].report == doubled.rows[1].report

    elapsed = time.perf_counter() - start
    assert elapsed < 5.0, f"criterion 1 exceeded budget: {elapsed:.2f}s"
    print(f"\n[criterion 1] PASS — all tagged worked examples, {elapsed:.2f}s")


# ---------------------------------------------------------------------------
# criterion 2 — metric-oracle equivalence (100 instances, < 30 s)
# ---------------------------------------------------------------------------


def test_criterion_2_metric_oracle_equivalence() -> None:
    start = time.perf_counter()
    rng = np.random.default_rng(20240815)
    worst = 0.0
    for _ in range(100):
        scores, labels = random_tied_instance(rng)
        pairs = (
            (auroc, oracle_auroc),
            (average_precision, oracle_ap),
            (fpr_at_95_tpr, oracle_fpr95),
        )
        for fast, oracle in pairs:
            gap = abs(fast(scores, labels) - oracle(scores, labels))
            worst = max(worst, gap)
            assert gap <= METRIC_TOL
    elapsed = time.perf_counter() - start
    assert elapsed < 30.0, f"criterion 2 exceeded budget: {elapsed:.2f}s"
    print(
        f"\n[criterion 2] PASS — 100 instances, worst |fast − oracle| = "
        f"{worst:.3e}, {elapsed:.2f}s"
    )


# ---------------------------------------------------------------------------
# criterion 3 — invariant suite (≥ 100 random cases per family, < 60 s)
# ---------------------------------------------------------------------------


def test_criterion_3_invariant_suite() -> None:
    start = time.perf_counter()
    rng = np.random.default_rng(99)
    cases = 100

    # symmetry + bounds of the visual differences
    small_ssim = SSIMConfig(window=5)
    for _ in range(cases):
        h, w = int(rng.integers(3, 9)), int(rng.integers(3, 9))
        x = ImageTensor(rng.random((h, w, 3), dtype=np.float32))
        y = ImageTensor(rng.random((h, w, 3), dtype=np.float32))
        assert np.array_equal(abs_diff(x, y).data, abs_diff(y, x).data)
        assert np.array_equal(mse_diff(x, y).data, mse_diff(y, x).data)
        assert np.array_equal(l2_baseline(x, y).data, l2_baseline(y, x).data)
        s_xy, s_yx = ssim_diff(x, y, small_ssim), ssim_diff(y, x, small_ssim)
        assert np.allclose(s_xy.data, s_yx.data, atol=TOL)
        for produced, hi in ((abs_diff(x, y), 1.0), (mse_diff(x, y), 1.0),
                             (s_xy, 1.0), (l2_baseline(x, y), np.sqrt(3) + TOL)):
            assert float(produced.data.min()) >= 0.0
            assert float(produced.data.max()) <= hi

    # normalization degeneracy
    for _ in range(cases):
        level = float(rng.uniform(0, 5))
        h, w = int(rng.integers(1, 9)), int(rng.integers(1, 9))
        flat = normalize_map(AnomalyMap(np.full((h, w), level, np.float32)))
        assert float(np.abs(flat.data).max()) == 0.0
        varied = normalize_map(AnomalyMap(rng.random((h, w)).astype(np.float32) + 0.5))
        if varied.data.size > 1 and float(varied.data.max()) > 0:
            assert float(varied.data.min()) == 0.0
            assert float(varied.data.max()) == 1.0

    # fusion convexity + weight-scale invariance
    for _ in range(cases):
        h, w = int(rng.integers(1, 8)), int(rng.integers(1, 8))
        maps = {
            kind: norm(rng.random((h, w)).astype(np.float32))
            for kind in DiffKind
        }
        raw = rng.random(5) + 0.01
        lam = float(rng.uniform(0.1, 50))
        base_out = fuse(maps, FusionWeights(*raw))
        scaled_out = fuse(maps, FusionWeights(*np.minimum(raw * lam, 1e6)))
        assert float(base_out.data.min()) >= 0.0
        assert float(base_out.data.max()) <= 1.0
        assert np.allclose(base_out.data, scaled_out.data, atol=TOL)

    # refinement idempotence + within-mask permutation invariance
    for _ in range(cases):
        h, w = int(rng.integers(2, 10)), int(rng.integers(2, 10))
        m = norm(rng.random((h, w)).astype(np.float32))
        labels = InstanceLabelMap(rng.integers(0, 4, size=(h, w)))
        for refine in (refine_mean, refine_max):
            once, _ = refine(m, labels)
            again, _ = refine(once, labels)
            assert np.array_equal(once.data, again.data)
        target = int(rng.integers(1, 4))
        inside = labels.data == target
        if inside.sum() > 1:
            shuffled = m.data.copy()
            vals = shuffled[inside]
            shuffled[inside] = vals[rng.permutation(vals.size)]
            shuffled_map = AnomalyMap(shuffled, normalized=True)
            for refine in (refine_mean, refine_max):
                assert np.array_equal(
                    refine(m, labels)[0].data, refine(shuffled_map, labels)[0].data
                )

    # metric monotone invariance
    for _ in range(cases):
        scores, labels = random_tied_instance(rng)
        lifted = np.exp(2.0 * scores) + 1.0  # strictly increasing transform
        assert auroc(scores, labels) == auroc(lifted, labels)
        assert average_precision(scores, labels) == average_precision(lifted, labels)
        assert fpr_at_95_tpr(scores, labels) == fpr_at_95_tpr(lifted, labels)

    elapsed = time.perf_counter() - start
    assert elapsed < 60.0, f"criterion 3 exceeded budget: {elapsed:.2f}s"
    print(f"\n[criterion 3] PASS — 5 invariant families × {cases} cases, {elapsed:.2f}s")


# ---------------------------------------------------------------------------
# criterion 4 — end-to-end synthetic benchmark (seed 42, defaults, < 60 s)
# ---------------------------------------------------------------------------


def test_criterion_4_end_to_end_benchmark(bench: Bench, tmp_path: Path) -> None:
    start = time.perf_counter()
    weights = FusionWeights(0, 0.25, 0.25, 0.25, 0.25)

    run_score(RunConfig(
        manifest_path=bench.manifest_path, weights=weights,
        out_dir=tmp_path / "masked",
        strategy=RefineStrategy.MEAN, mask_source=MaskSource.GT,
    ))
    masked = run_evaluate(tmp_path / "masked", bench.manifest_path)

    run_score(RunConfig(
        manifest_path=bench.manifest_path, weights=weights,
        out_dir=tmp_path / "nomask",
    ))
    nomask = run_evaluate(tmp_path / "nomask", bench.manifest_path)

    run_baseline(bench.manifest_path, tmp_path / "l2")
    l2 = run_evaluate(tmp_path / "l2", bench.manifest_path)

    prevalence = describe(bench.manifest).prevalence
    elapsed = time.perf_counter() - start
    total = bench.gen_seconds + elapsed

    assert masked.ap >= 5.0 * prevalence, (
        f"(a) masked AP {masked.ap:.4f} < 5× prevalence {5 * prevalence:.4f}"
    )
    assert masked.ap > nomask.ap, (
        f"(b) masked AP {masked.ap:.4f} not above no-mask AP {nomask.ap:.4f}"
    )
    assert l2.ap < nomask.ap and l2.ap < masked.ap, (
        f"(c) L2 baseline AP {l2.ap:.4f} not below fused runs"
    )
    assert total < 60.0, f"criterion 4 exceeded budget: {total:.2f}s"
    print(
        f"\n[criterion 4] PASS — prevalence {prevalence:.4f}, "
        f"masked AP {masked.ap:.4f}, no-mask AP {nomask.ap:.4f}, "
        f"L2 AP {l2.ap:.4f}, {total:.2f}s (incl. {bench.gen_seconds:.2f}s generation)"
    )


# ---------------------------------------------------------------------------
# criterion 5 — top-1 refinement failure mode (deterministic, exact)
# ---------------------------------------------------------------------------


def test_criterion_5_top1_failure_mode() -> None:
    # A bright but normal instance outscores the true anomaly on mean score:
    # top-1 keeps the wrong object and zeroes the anomaly.
    score = np.zeros((20, 20), dtype=np.float32)
    labels = np.zeros((20, 20), dtype=np.int64)
    gt = np.zeros((20, 20), dtype=np.int64)
    score[2:6, 2:6] = 0.9   # instance 1: highest score, NOT anomalous
    labels[2:6, 2:6] = 1
    score[10:14, 10:14] = 0.6  # instance 2: the actual anomaly
    labels[10:14, 10:14] = 2
    gt[10:14, 10:14] = 1
    fused = AnomalyMap(score, normalized=True)
    instances = InstanceLabelMap(labels)
    truth = BinaryLabelMap(gt)

    top1_map, top1_table = refine_top1(fused, instances)
    mean_map, _ = refine_mean(fused, instances)
    best = max(top1_table.entries, key=lambda e: e.score)
    assert best.instance_id == 1  # the non-anomalous object wins top-1

    ap_top1 = average_precision(*pool([(top1_map, truth)]))
    ap_mean = average_precision(*pool([(mean_map, truth)]))
    assert ap_top1 == pytest.approx(16 / 400, abs=1e-12)  # anomaly tied with bg
    assert ap_mean == pytest.approx(0.5, abs=1e-12)       # anomaly ranked second
    assert ap_top1 < ap_mean
    print(
        f"\n[criterion 5] PASS — AP(top1) {ap_top1:.4f} < AP(mean) {ap_mean:.4f}"
    )


# ---------------------------------------------------------------------------
# criterion 6 — byte-identical generate + sweep (< 2 min)
# ---------------------------------------------------------------------------


def test_criterion_6_determinism(tmp_path: Path) -> None:
    start = time.perf_counter()
    digests = []
    for run in ("one", "two"):
        root = tmp_path / run
        data, table = root / "data", root / "table"
        assert cli.main([
            "generate", "--out", str(data), "--seed", "42",
            "--scenarios", "4", "--frames", "6", "--size", "64x96",
        ]) == 0
        assert cli.main([
            "sweep", "--manifest", str(data / "manifest.txt"),
            "--out", str(table), "--seed", "42",
        ]) == 0
        digests.append(tree_digest(root))
    elapsed = time.perf_counter() - start
    assert digests[0] == digests[1], "generate + sweep trees differ between runs"
    assert elapsed < 120.0, f"criterion 6 exceeded budget: {elapsed:.2f}s"
    print(
        f"\n[criterion 6] PASS — {len(digests[0])} files byte-identical "
        f"across runs, {elapsed:.2f}s"
    )
