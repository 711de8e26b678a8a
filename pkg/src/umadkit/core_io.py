"""Domain types and file formats.

Binary tensor files (.f32t) carry a little-endian header::

    magic  4 bytes  b"UMAD"
    u32    version  (1)
    u32    rank     (2 for score maps, 3 for image tensors)
    u32*r  dims     (H, W[, C])

followed by the row-major float32 payload.  Feature stacks (.umfs) use
magic b"UMFS", a u32 version, a u32 layer count, then (h, w, c) triples
for every layer and the concatenated payloads.

Images travel as 8-bit RGB PNG, instance label maps as 16-bit grayscale
PNG, and binary ground truth as 8-bit grayscale PNG restricted to the
values 0 (normal), 1 (anomalous) and 255 (ignored).
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Sequence

import numpy as np
from PIL import Image

F32T_MAGIC = b"UMAD"
UMFS_MAGIC = b"UMFS"
FORMAT_VERSION = 1

IGNORE_LABEL = 255


class UmadError(Exception):
    """Base class for all errors raised by this package."""


class ContractError(UmadError):
    """An argument or configuration violates a documented precondition."""


class FormatError(UmadError):
    """A file or manifest does not match its documented format."""


def _require(cond: bool, message: str) -> None:
    if not cond:
        raise ContractError(message)


# ---------------------------------------------------------------------------
# Domain types
# ---------------------------------------------------------------------------


class ImageTensor:
    """An H x W x C float32 image with C in {1, 3} and values in [0, 1]."""

    __slots__ = ("data",)

    def __init__(self, data: np.ndarray) -> None:
        arr = np.asarray(data, dtype=np.float32)
        _require(arr.ndim == 3, f"image tensor must be rank 3, got rank {arr.ndim}")
        h, w, c = arr.shape
        _require(h >= 1 and w >= 1, f"image tensor needs positive spatial dims, got {arr.shape}")
        _require(c in (1, 3), f"image tensor channel count must be 1 or 3, got {c}")
        _require(bool(np.isfinite(arr).all()), "image tensor contains non-finite values")
        _require(bool(arr.min() >= 0.0) and bool(arr.max() <= 1.0),
                 "image tensor values must lie in [0, 1]")
        self.data = arr

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ImageTensor):
            return NotImplemented
        return self.data.shape == other.data.shape and bool(
            np.array_equal(self.data, other.data)
        )

    def __repr__(self) -> str:
        return f"ImageTensor(shape={self.data.shape})"


class AnomalyMap:
    """An H x W float32 map of non-negative anomaly scores.

    ``normalized`` records that the producer min-max normalized the map;
    it is advisory and not part of equality or the on-disk format.
    """

    __slots__ = ("data", "normalized")

    def __init__(self, data: np.ndarray, normalized: bool = False) -> None:
        arr = np.asarray(data, dtype=np.float32)
        _require(arr.ndim == 2, f"anomaly map must be rank 2, got rank {arr.ndim}")
        _require(arr.shape[0] >= 1 and arr.shape[1] >= 1,
                 f"anomaly map needs positive dims, got {arr.shape}")
        _require(bool(np.isfinite(arr).all()), "anomaly map contains non-finite values")
        _require(bool(arr.min() >= 0.0), "anomaly map values must be non-negative")
        if normalized:
            _require(bool(arr.max() <= 1.0), "a normalized map must not exceed 1")
        self.data = arr
        self.normalized = normalized

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape  # type: ignore[return-value]

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, AnomalyMap):
            return NotImplemented
        return self.data.shape == other.data.shape and bool(
            np.array_equal(self.data, other.data)
        )

    def __repr__(self) -> str:
        return f"AnomalyMap(shape={self.data.shape}, normalized={self.normalized})"


class FeatureStack:
    """Ordered feature layers from one extractor pass, finest first.

    Every layer is an h x w x c float32 array; spatial sizes never
    increase from one layer to the next.
    """

    __slots__ = ("layers",)

    def __init__(self, layers: Sequence[np.ndarray]) -> None:
        _require(len(layers) >= 1, "feature stack needs at least one layer")
        checked: list[np.ndarray] = []
        prev_hw: tuple[int, int] | None = None
        for i, layer in enumerate(layers):
            arr = np.asarray(layer, dtype=np.float32)
            _require(arr.ndim == 3, f"feature layer {i} must be rank 3, got rank {arr.ndim}")
            h, w, c = arr.shape
            _require(h >= 1 and w >= 1 and c >= 1,
                     f"feature layer {i} has degenerate shape {arr.shape}")
            _require(bool(np.isfinite(arr).all()), f"feature layer {i} is not finite")
            if prev_hw is not None:
                _require(h <= prev_hw[0] and w <= prev_hw[1],
                         "feature layers must have non-increasing spatial size")
            prev_hw = (h, w)
            checked.append(arr)
        self.layers = tuple(checked)

    def __len__(self) -> int:
        return len(self.layers)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, FeatureStack):
            return NotImplemented
        if len(self.layers) != len(other.layers):
            return False
        return all(
            a.shape == b.shape and bool(np.array_equal(a, b))
            for a, b in zip(self.layers, other.layers)
        )

    def __repr__(self) -> str:
        return f"FeatureStack(shapes={[l.shape for l in self.layers]})"


class PredictionHistory:
    """A frame's reconstruction plus the past predictions of that same frame.

    ``predictions[i]`` was made i + 1 sampled steps before ``target_time``,
    so the list runs newest to oldest.  All tensors share one shape.
    """

    __slots__ = ("target_time", "predictions", "reconstruction")

    def __init__(
        self,
        target_time: int,
        predictions: Sequence[ImageTensor],
        reconstruction: ImageTensor,
    ) -> None:
        _require(len(predictions) >= 1, "prediction history needs at least one prediction")
        _require(isinstance(reconstruction, ImageTensor),
                 "reconstruction must be an ImageTensor")
        shape = reconstruction.data.shape
        for i, f in enumerate(predictions):
            _require(isinstance(f, ImageTensor), f"prediction {i} is not an ImageTensor")
            _require(f.data.shape == shape,
                     f"prediction {i} has shape {f.data.shape}, expected {shape}")
        self.target_time = int(target_time)
        self.predictions = tuple(predictions)
        self.reconstruction = reconstruction

    @property
    def depth(self) -> int:
        return len(self.predictions)


class InstanceLabelMap:
    """An H x W int32 map of instance ids; 0 marks background."""

    __slots__ = ("data",)

    def __init__(self, data: np.ndarray) -> None:
        arr = np.asarray(data)
        _require(arr.ndim == 2, f"instance map must be rank 2, got rank {arr.ndim}")
        _require(np.issubdtype(arr.dtype, np.integer), "instance map must hold integers")
        arr = arr.astype(np.int32, copy=False)
        _require(bool(arr.min() >= 0), "instance ids must be non-negative")
        self.data = arr

    def instance_ids(self) -> np.ndarray:
        """Sorted distinct ids present in the map, excluding background."""
        ids = np.unique(self.data)
        return ids[ids > 0]

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, InstanceLabelMap):
            return NotImplemented
        return self.data.shape == other.data.shape and bool(
            np.array_equal(self.data, other.data)
        )


class BinaryLabelMap:
    """An H x W uint8 map with values 0 (normal), 1 (anomalous), 255 (ignored)."""

    __slots__ = ("data",)

    def __init__(self, data: np.ndarray) -> None:
        arr = np.asarray(data)
        _require(arr.ndim == 2, f"label map must be rank 2, got rank {arr.ndim}")
        _require(np.issubdtype(arr.dtype, np.integer), "label map must hold integers")
        values = np.unique(arr)
        _require(bool(np.isin(values, (0, 1, IGNORE_LABEL)).all()),
                 f"label map may only contain 0, 1 and {IGNORE_LABEL}")
        self.data = arr.astype(np.uint8, copy=False)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, BinaryLabelMap):
            return NotImplemented
        return self.data.shape == other.data.shape and bool(
            np.array_equal(self.data, other.data)
        )


class DiffKind(str, Enum):
    """The five pixel-wise difference signals the toolkit can fuse."""

    ABSOLUTE = "abs"
    MSE = "mse"
    SSIM = "ssim"
    PERCEPTUAL = "perceptual"
    TEMPORAL = "temporal"


DIFF_KIND_ORDER: tuple[DiffKind, ...] = (
    DiffKind.ABSOLUTE,
    DiffKind.MSE,
    DiffKind.SSIM,
    DiffKind.PERCEPTUAL,
    DiffKind.TEMPORAL,
)


@dataclass(frozen=True)
class FusionWeights:
    """Per-signal weights for the fused map, in the order a, m, s, p, t.

    Weights must be finite and non-negative with a positive sum; fusion
    normalizes by the sum, so only ratios matter.
    """

    w_abs: float = 0.0
    w_mse: float = 0.0
    w_ssim: float = 0.0
    w_per: float = 0.0
    w_temp: float = 0.0

    def __post_init__(self) -> None:
        vals = self.as_tuple()
        _require(all(np.isfinite(v) for v in vals), "fusion weights must be finite")
        _require(all(v >= 0.0 for v in vals), "fusion weights must be non-negative")
        _require(sum(vals) > 0.0, "at least one fusion weight must be positive")

    def as_tuple(self) -> tuple[float, float, float, float, float]:
        return (self.w_abs, self.w_mse, self.w_ssim, self.w_per, self.w_temp)

    def weight_for(self, kind: DiffKind) -> float:
        return self.as_tuple()[DIFF_KIND_ORDER.index(kind)]

    @classmethod
    def from_string(cls, text: str) -> "FusionWeights":
        """Parse "a,m,s,p,t", e.g. "0,0.25,0.25,0.25,0.25"."""
        parts = text.split(",")
        if len(parts) != 5:
            raise ContractError(f"expected 5 comma-separated weights, got {len(parts)}")
        try:
            vals = [float(p) for p in parts]
        except ValueError as exc:
            raise ContractError(f"could not parse weights {text!r}: {exc}") from None
        return cls(*vals)

    def label(self) -> str:
        return ",".join(format(v, "g") for v in self.as_tuple())


# ---------------------------------------------------------------------------
# Dataset manifest
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ScenarioEntry:
    scenario_id: str
    frame_count: int
    directory: Path


@dataclass(frozen=True)
class FramePaths:
    rgb: Path
    recon: Path
    preds: tuple[Path, ...]
    masks: Path
    gt: Path

    def all_paths(self) -> tuple[Path, ...]:
        return (self.rgb, self.recon, *self.preds, self.masks, self.gt)


def frame_name(index: int) -> str:
    return f"{index:04d}"


def frame_paths(directory: Path, index: int, history_depth: int) -> FramePaths:
    name = frame_name(index)
    return FramePaths(
        rgb=directory / "rgb" / f"{name}.png",
        recon=directory / "recon" / f"{name}.f32t",
        preds=tuple(
            directory / "pred" / f"{name}_{k}.f32t" for k in range(1, history_depth + 1)
        ),
        masks=directory / "masks" / f"{name}.png",
        gt=directory / "gt" / f"{name}.png",
    )


@dataclass
class DatasetManifest:
    """Index of a dataset: scenarios plus the sampling stride and history depth.

    ``frame_count`` counts source frames; only indices 0, stride, 2*stride,
    ... are stored on disk and scored.
    """

    scenarios: list[ScenarioEntry] = field(default_factory=list)
    frame_stride: int = 10
    history_depth: int = 2

    def __post_init__(self) -> None:
        _require(self.frame_stride >= 1, "frame stride must be >= 1")
        _require(self.history_depth >= 1, "history depth must be >= 1")
        seen: set[str] = set()
        for entry in self.scenarios:
            _require(entry.frame_count >= 1,
                     f"scenario {entry.scenario_id!r} has no frames")
            _require(entry.scenario_id not in seen,
                     f"duplicate scenario id {entry.scenario_id!r}")
            seen.add(entry.scenario_id)

    def sampled_indices(self, entry: ScenarioEntry) -> range:
        return range(0, entry.frame_count, self.frame_stride)

    def frame_paths(self, entry: ScenarioEntry, index: int) -> FramePaths:
        return frame_paths(entry.directory, index, self.history_depth)


def save_manifest(manifest: DatasetManifest, path: Path) -> None:
    path = Path(path)
    base = path.parent.resolve()
    lines = [f"stride {manifest.frame_stride}", f"history {manifest.history_depth}"]
    for entry in manifest.scenarios:
        rel = os.path.relpath(Path(entry.directory).resolve(), base)
        lines.append(f"{entry.scenario_id} {entry.frame_count} {rel}")
    path.write_text("\n".join(lines) + "\n")


def load_manifest(path: Path, verify: bool = True) -> DatasetManifest:
    """Parse a manifest file; with ``verify`` also check every frame file exists."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise FormatError(f"cannot read manifest {path}: {exc}") from exc
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if len(lines) < 2:
        raise FormatError(f"manifest {path} is missing its stride/history header")

    def header_int(line: str, key: str) -> int:
        parts = line.split()
        if len(parts) != 2 or parts[0] != key:
            raise FormatError(f"manifest {path}: expected '{key} <int>', got {line!r}")
        try:
            return int(parts[1])
        except ValueError:
            raise FormatError(f"manifest {path}: bad {key} value {parts[1]!r}") from None

    stride = header_int(lines[0], "stride")
    history = header_int(lines[1], "history")
    base = path.parent
    entries: list[ScenarioEntry] = []
    for line in lines[2:]:
        parts = line.split()
        if len(parts) != 3:
            raise FormatError(f"manifest {path}: bad scenario line {line!r}")
        sid, count_text, rel = parts
        try:
            count = int(count_text)
        except ValueError:
            raise FormatError(f"manifest {path}: bad frame count in {line!r}") from None
        entries.append(ScenarioEntry(sid, count, (base / rel).resolve()))
    try:
        manifest = DatasetManifest(entries, frame_stride=stride, history_depth=history)
    except ContractError as exc:
        raise FormatError(f"manifest {path}: {exc}") from exc
    if verify:
        for entry in manifest.scenarios:
            if not entry.directory.is_dir():
                raise FormatError(
                    f"scenario {entry.scenario_id!r}: directory {entry.directory} is missing")
            for idx in manifest.sampled_indices(entry):
                for p in manifest.frame_paths(entry, idx).all_paths():
                    if not p.is_file():
                        raise FormatError(
                            f"scenario {entry.scenario_id!r} frame {idx}: missing file {p}")
    return manifest


# ---------------------------------------------------------------------------
# Binary tensor files
# ---------------------------------------------------------------------------


def write_f32_tensor(path: Path, data: np.ndarray) -> None:
    """Write a rank-2 or rank-3 float32 array with the UMAD header."""
    arr = np.ascontiguousarray(data, dtype=np.float32)
    _require(arr.ndim in (2, 3), f"tensor files hold rank 2 or 3, got rank {arr.ndim}")
    _require(all(d >= 1 for d in arr.shape),
             f"tensor dimensions must be positive, got {arr.shape}")
    header = struct.pack(
        f"<4sII{arr.ndim}I", F32T_MAGIC, FORMAT_VERSION, arr.ndim, *arr.shape
    )
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(arr.astype("<f4", copy=False).tobytes())


def read_f32_tensor(path: Path) -> np.ndarray:
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as exc:
        raise FormatError(f"cannot read tensor file {path}: {exc}") from exc
    if len(blob) < 12:
        raise FormatError(f"{path}: truncated header")
    magic, version, rank = struct.unpack_from("<4sII", blob, 0)
    if magic != F32T_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    if rank not in (2, 3):
        raise FormatError(f"{path}: unsupported rank {rank}")
    dims_end = 12 + 4 * rank
    if len(blob) < dims_end:
        raise FormatError(f"{path}: truncated dimension list")
    dims = struct.unpack_from(f"<{rank}I", blob, 12)
    if any(d < 1 for d in dims):
        raise FormatError(f"{path}: non-positive dimension in {dims}")
    count = int(np.prod(dims))
    expected = dims_end + 4 * count
    if len(blob) != expected:
        raise FormatError(
            f"{path}: payload size mismatch (expected {expected} bytes, got {len(blob)})")
    arr = np.frombuffer(blob, dtype="<f4", count=count, offset=dims_end)
    return arr.reshape(dims).astype(np.float32, copy=True)


def write_tensor(path: Path, tensor: "ImageTensor | AnomalyMap | FeatureStack") -> None:
    """Write any supported tensor; the header records which kind it was."""
    if isinstance(tensor, ImageTensor):
        write_f32_tensor(path, tensor.data)
    elif isinstance(tensor, AnomalyMap):
        write_f32_tensor(path, tensor.data)
    elif isinstance(tensor, FeatureStack):
        write_feature_stack(path, tensor)
    else:
        raise ContractError(f"cannot serialize {type(tensor).__name__}")


def read_tensor(path: Path) -> "ImageTensor | AnomalyMap | FeatureStack":
    """Read a tensor file back as the type it was written from.

    Rank-2 payloads become AnomalyMaps, rank-3 payloads ImageTensors, and
    feature files FeatureStacks.  Maps read from disk report
    ``normalized=False`` because the format does not store that flag.
    """
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            magic = fh.read(4)
    except OSError as exc:
        raise FormatError(f"cannot read tensor file {path}: {exc}") from exc
    if magic == UMFS_MAGIC:
        return read_feature_stack(path)
    arr = read_f32_tensor(path)
    try:
        if arr.ndim == 2:
            return AnomalyMap(arr)
        return ImageTensor(arr)
    except ContractError as exc:
        raise FormatError(f"{path}: {exc}") from exc


def write_anomaly_map(path: Path, amap: AnomalyMap) -> None:
    write_f32_tensor(path, amap.data)


def read_anomaly_map(path: Path) -> AnomalyMap:
    arr = read_f32_tensor(path)
    if arr.ndim != 2:
        raise FormatError(f"{path}: expected a rank-2 score map, got rank {arr.ndim}")
    try:
        return AnomalyMap(arr)
    except ContractError as exc:
        raise FormatError(f"{path}: {exc}") from exc


def write_image_tensor(path: Path, image: ImageTensor) -> None:
    write_f32_tensor(path, image.data)


def read_image_tensor(path: Path) -> ImageTensor:
    arr = read_f32_tensor(path)
    if arr.ndim != 3:
        raise FormatError(f"{path}: expected a rank-3 image tensor, got rank {arr.ndim}")
    try:
        return ImageTensor(arr)
    except ContractError as exc:
        raise FormatError(f"{path}: {exc}") from exc


def write_feature_stack(path: Path, stack: FeatureStack) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    parts = [struct.pack("<4sII", UMFS_MAGIC, FORMAT_VERSION, len(stack.layers))]
    for layer in stack.layers:
        parts.append(struct.pack("<3I", *layer.shape))
    for layer in stack.layers:
        parts.append(np.ascontiguousarray(layer, dtype="<f4").tobytes())
    path.write_bytes(b"".join(parts))


def read_feature_stack(path: Path) -> FeatureStack:
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as exc:
        raise FormatError(f"cannot read feature file {path}: {exc}") from exc
    if len(blob) < 12:
        raise FormatError(f"{path}: truncated header")
    magic, version, n_layers = struct.unpack_from("<4sII", blob, 0)
    if magic != UMFS_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    if n_layers < 1:
        raise FormatError(f"{path}: feature stack has no layers")
    dims_end = 12 + 12 * n_layers
    if len(blob) < dims_end:
        raise FormatError(f"{path}: truncated layer shape list")
    shapes = [struct.unpack_from("<3I", blob, 12 + 12 * i) for i in range(n_layers)]
    counts = [int(np.prod(s)) for s in shapes]
    expected = dims_end + 4 * sum(counts)
    if len(blob) != expected:
        raise FormatError(
            f"{path}: payload size mismatch (expected {expected} bytes, got {len(blob)})")
    layers = []
    offset = dims_end
    for shape, count in zip(shapes, counts):
        arr = np.frombuffer(blob, dtype="<f4", count=count, offset=offset)
        layers.append(arr.reshape(shape).astype(np.float32, copy=True))
        offset += 4 * count
    try:
        return FeatureStack(layers)
    except ContractError as exc:
        raise FormatError(f"{path}: {exc}") from exc


# ---------------------------------------------------------------------------
# PNG files
# ---------------------------------------------------------------------------


def write_rgb_png(path: Path, image: ImageTensor) -> None:
    _require(image.channels == 3, "RGB output needs a 3-channel image")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    quantized = (image.data * 255.0 + 0.5).astype(np.uint8)
    Image.fromarray(quantized, mode="RGB").save(path)


def read_rgb_png(path: Path) -> ImageTensor:
    path = Path(path)
    try:
        with Image.open(path) as img:
            arr = np.asarray(img.convert("RGB"))
    except (OSError, SyntaxError) as exc:
        raise FormatError(f"cannot read image {path}: {exc}") from exc
    return ImageTensor((arr / 255.0).astype(np.float32))


def write_instance_png(path: Path, labels: InstanceLabelMap) -> None:
    _require(bool(labels.data.max() < 65536),
             "instance ids above 65535 do not fit 16-bit PNG")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(labels.data.astype(np.uint16)).save(path)


def read_instance_png(path: Path) -> InstanceLabelMap:
    path = Path(path)
    try:
        with Image.open(path) as img:
            if img.mode not in ("I;16", "I", "L", "P"):
                raise FormatError(f"{path}: unsupported PNG mode {img.mode!r} for labels")
            arr = np.asarray(img)
    except (OSError, SyntaxError) as exc:
        raise FormatError(f"cannot read label image {path}: {exc}") from exc
    try:
        return InstanceLabelMap(arr.astype(np.int32))
    except ContractError as exc:
        raise FormatError(f"{path}: {exc}") from exc


def write_binary_png(path: Path, labels: BinaryLabelMap) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(labels.data, mode="L").save(path)


def read_binary_png(path: Path) -> BinaryLabelMap:
    path = Path(path)
    try:
        with Image.open(path) as img:
            if img.mode not in ("L", "P", "1"):
                raise FormatError(f"{path}: unsupported PNG mode {img.mode!r} for binary labels")
            arr = np.asarray(img.convert("L"))
    except (OSError, SyntaxError) as exc:
        raise FormatError(f"cannot read label image {path}: {exc}") from exc
    try:
        return BinaryLabelMap(arr)
    except ContractError as exc:
        raise FormatError(f"{path}: {exc}") from exc


def load_history(paths: FramePaths, target_time: int) -> PredictionHistory:
    """Read a frame's reconstruction and past predictions into a history."""
    recon = read_image_tensor(paths.recon)
    preds = [read_image_tensor(p) for p in paths.preds]
    try:
        return PredictionHistory(target_time, preds, recon)
    except ContractError as exc:
        raise FormatError(f"inconsistent prediction history: {exc}") from exc
