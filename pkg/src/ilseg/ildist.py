"""Lesion intensity likelihood model.

Intensities inside ground-truth masks are pooled from diffused volumes and turned
into a Gaussian kernel density estimate (Scott bandwidth) that is rescaled so its
maximum is 1. The resulting function maps any intensity to a likelihood in [0, 1]
and is applied voxelwise to build soft likelihood volumes.

For speed, samples are compressed into a 1 HU histogram with linear binning.
Linear binning spreads each sample over its two neighbouring bins, which keeps the
first moment exact but adds on average w**2/6 of variance per sample (w = bin
width); the kernel width used on the compressed representation is reduced by
the same amount so the compressed density tracks the raw-sample density closely.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .diffusion import DiffusionParams, diffuse
from .volgrid import MaskVolume, SoftVolume, Volume

_SQRT_2PI = math.sqrt(2.0 * math.pi)
_EVAL_CHUNK = 4096


@dataclass(frozen=True)
class IntensitySample:
    values: np.ndarray
    source_count: int

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64).ravel()
        if not np.isfinite(values).all():
            raise ValueError("intensity sample contains non-finite values")
        object.__setattr__(self, "values", values)


@dataclass(frozen=True, eq=False)
class LikelihoodModel:
    """Rescaled Gaussian KDE over intensity.

    ``bin_width`` is 0 for an uncompressed model whose centres are the raw samples.
    """

    bin_centers: np.ndarray
    bin_weights: np.ndarray
    bandwidth: float
    norm_max: float
    shift: float = 0.0
    bin_width: float = 1.0
    bandwidth_rule: str = "scott"

    def __post_init__(self):
        centers = np.asarray(self.bin_centers, dtype=np.float64).ravel()
        weights = np.asarray(self.bin_weights, dtype=np.float64).ravel()
        if centers.shape != weights.shape or centers.size == 0:
            raise ValueError("bin_centers and bin_weights must be non-empty and equally long")
        if (weights < 0).any() or weights.sum() <= 0:
            raise ValueError("bin weights must be non-negative with a positive total")
        if not self.bandwidth > 0 or not self.norm_max > 0:
            raise ValueError("bandwidth and norm_max must be positive")
        if self.kernel_width <= 0:
            raise ValueError("bandwidth too small for the bin width")
        object.__setattr__(self, "bin_centers", centers)
        object.__setattr__(self, "bin_weights", weights)

    @property
    def kernel_width(self) -> float:
        var = self.bandwidth**2 - self.bin_width**2 / 6.0
        return math.sqrt(var) if var > 0 else 0.0

    def density(self, x) -> np.ndarray:
        """Un-normalized KDE value at ``x - shift`` (a probability density)."""
        x = np.asarray(x, dtype=np.float64)
        flat = x.ravel() - self.shift
        h = self.kernel_width
        norm = self.bin_weights.sum() * h * _SQRT_2PI
        out = np.empty(flat.shape, dtype=np.float64)
        # fixed chunking and row-wise reductions: a voxel's value never depends on its neighbours
        for start in range(0, flat.size, _EVAL_CHUNK):
            q = flat[start : start + _EVAL_CHUNK, None]
            z = (q - self.bin_centers) / h
            out[start : start + _EVAL_CHUNK] = (self.bin_weights * np.exp(-0.5 * z * z)).sum(axis=1)
        return (out / norm).reshape(x.shape)

    def __call__(self, x):
        return evaluate(self, x)

    def support_grid(self, spacing=0.5) -> np.ndarray:
        """Grid over [min - 3h, max + 3h] of the bin centres, shifted with the model."""
        h = self.bandwidth
        lo = self.bin_centers.min() - 3 * h
        hi = self.bin_centers.max() + 3 * h
        n = int(math.floor((hi - lo) / spacing)) + 1
        return lo + spacing * np.arange(n) + self.shift

    def to_dict(self) -> dict:
        return {
            "kind": "gaussian-kde",
            "bandwidth": self.bandwidth,
            "bin_centers": self.bin_centers.tolist(),
            "bin_weights": self.bin_weights.tolist(),
            "norm_max": self.norm_max,
            "shift": self.shift,
            "bandwidth_rule": self.bandwidth_rule,
            "bin_width": self.bin_width,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LikelihoodModel":
        if d.get("kind") != "gaussian-kde":
            raise ValueError(f"unsupported likelihood model kind {d.get('kind')!r}")
        return cls(
            bin_centers=d["bin_centers"],
            bin_weights=d["bin_weights"],
            bandwidth=float(d["bandwidth"]),
            norm_max=float(d["norm_max"]),
            shift=float(d.get("shift", 0.0)),
            bin_width=float(d.get("bin_width", 0.0)),
            bandwidth_rule=d.get("bandwidth_rule", "scott"),
        )

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1))

    @classmethod
    def load(cls, path) -> "LikelihoodModel":
        return cls.from_dict(json.loads(Path(path).read_text()))


def harvest_intensities(pairs, d: DiffusionParams = DiffusionParams()) -> IntensitySample:
    chunks = []
    for v, m in pairs:
        if v.shape != m.shape:
            raise ValueError(f"volume {v.shape} and mask {m.shape} shapes differ")
        if not m.data.any():
            continue
        smoothed = diffuse(v, d)
        chunks.append(smoothed.data[m.data.astype(bool)].astype(np.float64))
    if not chunks:
        raise ValueError("no foreground voxels in any mask")
    return IntensitySample(np.concatenate(chunks), len(chunks))


def scott_bandwidth(values) -> float:
    values = np.asarray(values, dtype=np.float64)
    return float(values.std() * values.size ** (-0.2))


def linear_bin(values, bin_width=1.0):
    """Linear binning onto a grid of integer multiples of `bin_width`."""
    t = np.asarray(values, dtype=np.float64) / bin_width
    base = math.floor(t.min())
    i0 = np.floor(t).astype(np.int64) - base
    frac = t - np.floor(t)
    n = int(i0.max()) + 2
    weights = np.bincount(i0, weights=1.0 - frac, minlength=n) + np.bincount(i0 + 1, weights=frac, minlength=n)
    centers = (base + np.arange(n)) * bin_width
    keep = weights > 0
    return centers[keep], weights[keep]


def fit_kde(s: IntensitySample, bin_width: float = 1.0) -> LikelihoodModel:
    """Fit the rescaled KDE; ``bin_width=0`` keeps raw samples (no compression)."""
    values = s.values
    if values.size < 2:
        raise ValueError("need at least two intensity samples")
    if values.std() == 0:
        raise ValueError("intensity sample has zero variance")
    h = scott_bandwidth(values)
    if bin_width and h * h > bin_width * bin_width / 6.0:
        centers, weights = linear_bin(values, bin_width)
    else:
        bin_width = 0.0
        centers, weights = np.sort(values), np.ones(values.size)
    provisional = LikelihoodModel(centers, weights, h, 1.0, 0.0, float(bin_width))
    grid = provisional.support_grid(0.5)
    norm_max = float(provisional.density(grid).max())
    return replace(provisional, norm_max=norm_max)


def evaluate(m: LikelihoodModel, x):
    """Likelihood in [0, 1]; scalar in, float out; array in, array out."""
    out = np.clip(m.density(x) / m.norm_max, 0.0, 1.0)
    return float(out) if out.ndim == 0 else out


def shifted(m: LikelihoodModel, delta: float) -> LikelihoodModel:
    return replace(m, shift=m.shift + delta)


def likelihood_volume(v: Volume, m: LikelihoodModel, d: DiffusionParams | None = DiffusionParams()) -> SoftVolume:
    """Apply the model voxelwise to the diffused volume (``d=None`` skips diffusion)."""
    smoothed = diffuse(v, d) if d is not None else v
    return SoftVolume(evaluate(m, smoothed.data), v.spacing_mm)


def fit_from_pairs(pairs, d: DiffusionParams = DiffusionParams(), bin_width: float = 1.0) -> LikelihoodModel:
    return fit_kde(harvest_intensities(pairs, d), bin_width)


def curve_table(m: LikelihoodModel, spacing: float = 1.0):
    """(intensity, likelihood) pairs over the model support, for plotting."""
    grid = m.support_grid(spacing)
    return grid, evaluate(m, grid)
