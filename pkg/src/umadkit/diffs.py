"""Per-pixel difference maps between observed and model-generated frames.

Five signals are available: mean absolute difference, mean squared
difference, windowed structural dissimilarity, multi-layer feature
("perceptual") difference, and the temporal spread among past
predictions.  A plain Euclidean per-pixel distance is included as the
reference baseline scorer.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core_io import (
    AnomalyMap,
    ContractError,
    FeatureStack,
    ImageTensor,
    PredictionHistory,
    _require,
)


@dataclass(frozen=True)
class SSIMConfig:
    """Window and stability constants for the structural dissimilarity map.

    ``kappa1`` and ``kappa2`` are the additive constants themselves; when
    left unset they default to (0.01 * L)^2 and (0.03 * L)^2 for dynamic
    range L.
    """

    window: int = 11
    gaussian_sigma: float = 1.5
    dynamic_range: float = 1.0
    kappa1: float | None = None
    kappa2: float | None = None

    def __post_init__(self) -> None:
        _require(self.window >= 3 and self.window % 2 == 1,
                 f"SSIM window must be odd and >= 3, got {self.window}")
        _require(self.gaussian_sigma > 0, "gaussian_sigma must be positive")
        _require(self.dynamic_range > 0, "dynamic_range must be positive")
        if self.kappa1 is None:
            object.__setattr__(self, "kappa1", (0.01 * self.dynamic_range) ** 2)
        if self.kappa2 is None:
            object.__setattr__(self, "kappa2", (0.03 * self.dynamic_range) ** 2)
        _require(self.kappa1 > 0 and self.kappa2 > 0, "kappa constants must be positive")


def _check_same_shape(a: ImageTensor, b: ImageTensor) -> None:
    _require(a.data.shape == b.data.shape,
             f"inputs must share a shape, got {a.data.shape} vs {b.data.shape}")


def abs_diff(gt: ImageTensor, pred: ImageTensor) -> AnomalyMap:
    """Mean over channels of per-pixel absolute differences, in [0, 1]."""
    _check_same_shape(gt, pred)
    _require(gt.channels == 3, "abs_diff expects 3-channel inputs")
    d = np.abs(gt.data - pred.data)
    return AnomalyMap(d.mean(axis=2, dtype=np.float32))


def mse_diff(gt: ImageTensor, pred: ImageTensor) -> AnomalyMap:
    """Mean over channels of squared per-pixel differences, in [0, 1]."""
    _check_same_shape(gt, pred)
    _require(gt.channels == 3, "mse_diff expects 3-channel inputs")
    d = gt.data - pred.data
    return AnomalyMap((d * d).mean(axis=2, dtype=np.float32))


def _gaussian_window(size: int, sigma: float) -> np.ndarray:
    offsets = np.arange(size, dtype=np.float64) - size // 2
    g = np.exp(-(offsets**2) / (2.0 * sigma * sigma))
    kernel = np.outer(g, g)
    return kernel / kernel.sum()


def ssim_diff(gt: ImageTensor, pred: ImageTensor, cfg: SSIMConfig | None = None) -> AnomalyMap:
    """Structural dissimilarity d = (1 - SSIM) / 2 per pixel, in [0, 1].

    SSIM is evaluated over a Gaussian-weighted window centered at each
    pixel with reflect padding, per channel, then averaged over channels.
    Window sums accumulate taps in row-major order so results do not
    depend on the platform's reduction strategy.
    """
    if cfg is None:
        cfg = SSIMConfig()
    _check_same_shape(gt, pred)
    h, w, channels = gt.data.shape
    k = cfg.window
    pad = k // 2
    kernel = _gaussian_window(k, cfg.gaussian_sigma)
    c1 = float(cfg.kappa1)
    c2 = float(cfg.kappa2)

    ssim_sum = np.zeros((h, w), dtype=np.float64)
    for c in range(channels):
        x = gt.data[:, :, c].astype(np.float64)
        y = pred.data[:, :, c].astype(np.float64)
        stats = np.stack([x, y, x * x, y * y, x * y])
        padded = np.pad(stats, ((0, 0), (pad, pad), (pad, pad)), mode="reflect")
        win = np.zeros_like(stats)
        for ky in range(k):
            for kx in range(k):
                win += kernel[ky, kx] * padded[:, ky : ky + h, kx : kx + w]
        mx, my, exx, eyy, exy = win
        var_x = exx - mx * mx
        var_y = eyy - my * my
        cov = exy - mx * my
        ssim = ((2.0 * mx * my + c1) * (2.0 * cov + c2)) / (
            (mx * mx + my * my + c1) * (var_x + var_y + c2)
        )
        ssim_sum += ssim

    d = (1.0 - ssim_sum / channels) / 2.0
    return AnomalyMap(np.clip(d, 0.0, 1.0).astype(np.float32))


def _bilinear_resize(arr: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Resize a rank-2 float64 array with half-pixel-aligned sampling."""
    h, w = arr.shape
    if h == out_h and w == out_w:
        return arr.copy()

    def axis_coords(n_in: int, n_out: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        src = (np.arange(n_out, dtype=np.float64) + 0.5) * (n_in / n_out) - 0.5
        src = np.clip(src, 0.0, n_in - 1.0)
        i0 = np.floor(src).astype(np.int64)
        i1 = np.minimum(i0 + 1, n_in - 1)
        return i0, i1, src - i0

    y0, y1, wy = axis_coords(h, out_h)
    x0, x1, wx = axis_coords(w, out_w)
    rows = arr[y0, :] * (1.0 - wy)[:, None] + arr[y1, :] * wy[:, None]
    return rows[:, x0] * (1.0 - wx)[None, :] + rows[:, x1] * wx[None, :]


def perceptual_diff(
    f_gt: FeatureStack, f_pred: FeatureStack, out_h: int, out_w: int
) -> AnomalyMap:
    """Summed multi-layer feature difference, resampled to out_h x out_w.

    Every layer contributes the per-pixel mean absolute channel
    difference, bilinearly upsampled to the output size; layer maps are
    then added.
    """
    _require(out_h >= 1 and out_w >= 1, "output size must be positive")
    _require(len(f_gt.layers) == len(f_pred.layers),
             f"stacks differ in depth: {len(f_gt.layers)} vs {len(f_pred.layers)}")
    acc = np.zeros((out_h, out_w), dtype=np.float64)
    for i, (a, b) in enumerate(zip(f_gt.layers, f_pred.layers)):
        _require(a.shape == b.shape,
                 f"layer {i} shapes differ: {a.shape} vs {b.shape}")
        layer_map = np.abs(a.astype(np.float64) - b.astype(np.float64)).mean(axis=2)
        acc += _bilinear_resize(layer_map, out_h, out_w)
    return AnomalyMap(acc.astype(np.float32))


def temporal_diff(hist: PredictionHistory) -> AnomalyMap:
    """Mean absolute difference between each past prediction and the reconstruction."""
    acc = np.zeros(hist.reconstruction.data.shape[:2], dtype=np.float32)
    for pred in hist.predictions:
        acc += abs_diff(pred, hist.reconstruction).data
    return AnomalyMap(acc / np.float32(hist.depth))


def l2_baseline(gt: ImageTensor, recon: ImageTensor) -> AnomalyMap:
    """Per-pixel Euclidean distance over channels, the reference baseline."""
    _check_same_shape(gt, recon)
    d = gt.data - recon.data
    return AnomalyMap(np.sqrt((d * d).sum(axis=2, dtype=np.float32)))
