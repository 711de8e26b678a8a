"""Feature stacks for the perceptual difference map.

The built-in extractor is a fixed-seed, bias-free linear convolutional
stack.  Every tap factors into a random channel mixing coefficient
times a fixed binomial spatial profile, so each layer low-passes before
it subsamples: deeper layers respond to structure at their own scale
instead of echoing lone pixels at full amplitude.  Layer gain doubles
with depth, giving coarse structure more weight than pixel detail in
the summed difference.  It is not a trained network; it exists so the
perceptual signal has a reproducible multi-layer feature source.
Features dumped from a real network can be loaded from UMFS files
instead.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core_io import FeatureStack, ImageTensor, _require, read_feature_stack
from .rng import SplitMix64


@dataclass(frozen=True)
class ExtractorConfig:
    seed: int = 42
    num_layers: int = 3
    channels_per_layer: int = 8
    kernel_size: int = 3

    def __post_init__(self) -> None:
        _require(self.seed >= 0, "seed must be non-negative")
        _require(self.num_layers >= 1, "num_layers must be >= 1")
        _require(self.channels_per_layer >= 1, "channels_per_layer must be >= 1")
        _require(self.kernel_size >= 1 and self.kernel_size % 2 == 1,
                 f"kernel_size must be odd and positive, got {self.kernel_size}")


def _conv_layer(x: np.ndarray, weights: np.ndarray, stride: int) -> np.ndarray:
    """Strided correlation with reflect padding and fixed accumulation order.

    Taps accumulate in row-major (ky, kx) order with input channels
    innermost, so the float32 result is reproducible bit for bit.
    """
    h, w, _ = x.shape
    out_c, in_c, k, _ = weights.shape
    pad = k // 2
    out_h = -(-h // stride)
    out_w = -(-w // stride)
    padded = np.pad(x, ((pad, pad), (pad, pad), (0, 0)), mode="reflect")
    out = np.zeros((out_h, out_w, out_c), dtype=np.float32)
    row_stop = stride * (out_h - 1) + 1
    col_stop = stride * (out_w - 1) + 1
    for ky in range(k):
        for kx in range(k):
            slab = padded[ky : ky + row_stop : stride, kx : kx + col_stop : stride, :]
            taps = weights[:, :, ky, kx]
            for ic in range(in_c):
                out += slab[:, :, ic : ic + 1] * taps[:, ic]
    return out


def _binomial_profile(k: int) -> np.ndarray:
    """The k x k outer product of a normalized Pascal row (sums to 1)."""
    row = np.array([1.0], dtype=np.float64)
    for _ in range(k - 1):
        row = np.convolve(row, [1.0, 1.0])
    row /= row.sum()
    return np.outer(row, row)


def extract_features(img: ImageTensor, cfg: ExtractorConfig) -> FeatureStack:
    """Run the deterministic extractor; layer i is 1/2^(i-1) scale.

    Channel-mixing coefficients come from one SplitMix64 stream seeded
    with cfg.seed, drawn layer by layer in (out_channel, in_channel)
    order and mapped to [-1, 1) via (word / 2^63) - 1; each tap is the
    coefficient times the binomial spatial profile, doubled once per
    layer of depth.
    """
    rng = SplitMix64(cfg.seed)
    k = cfg.kernel_size
    profile = _binomial_profile(k)
    x = img.data
    layers: list[np.ndarray] = []
    in_c = img.channels
    for i in range(cfg.num_layers):
        out_c = cfg.channels_per_layer
        mixes = rng.signed_units(out_c * in_c).reshape(out_c, in_c)
        gain = float(2**i)
        weights = (gain * mixes[:, :, None, None] * profile[None, None]).astype(
            np.float32)
        stride = 1 if i == 0 else 2
        x = _conv_layer(x, weights, stride)
        layers.append(x)
        in_c = out_c
    return FeatureStack(layers)


def load_features(path) -> FeatureStack:
    """Read a UMFS feature dump (e.g. exported from a real network)."""
    return read_feature_stack(path)
