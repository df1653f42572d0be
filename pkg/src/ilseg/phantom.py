"""Deterministic synthetic CT-like phantoms with small lesions and intensity confusers."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage, stats

from .volgrid import MaskVolume, Volume, write_svol


@dataclass(frozen=True)
class PhantomSpec:
    shape: tuple = (48, 48, 48)
    spacing_mm: tuple = (1.0, 1.0, 1.0)
    lesion_count_range: tuple = (1, 3)
    lesion_radius_range_vox: tuple = (1.5, 5.0)
    lesion_intensity: tuple = (120.0, 15.0)
    background_texture_scale: float = 8.0
    background_range: tuple = (-50.0, 200.0)
    confuser_count: int = 2
    noise_std: float = 10.0
    seed: int = 0

    def __post_init__(self):
        for name in ("shape", "spacing_mm", "lesion_count_range", "lesion_radius_range_vox",
                     "lesion_intensity", "background_range"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        kmin, kmax = self.lesion_count_range
        rmin, rmax = self.lesion_radius_range_vox
        if not 1 <= kmin <= kmax:
            raise ValueError("lesion_count_range must satisfy 1 <= min <= max")
        if not 1.0 <= rmin <= rmax:
            raise ValueError("lesion radii must satisfy 1 <= min <= max")
        if self.background_range[0] > self.background_range[1]:
            raise ValueError("background_range must be ordered")
        if self.lesion_intensity[1] < 0 or self.noise_std < 0:
            raise ValueError("standard deviations must be non-negative")
        if self.confuser_count < 0 or self.background_texture_scale <= 0:
            raise ValueError("confuser_count must be >= 0 and texture scale > 0")

    def to_dict(self):
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass
class PhantomCase:
    volume: Volume
    mask: MaskVolume
    lesion_voxel_counts: list = field(default_factory=list)

    @property
    def lesion_volumes_mm3(self):
        vv = self.volume.voxel_volume_mm3
        return [c * vv for c in self.lesion_voxel_counts]


# Background intensity profile on [0, 1]: skewed towards the low end so its mode
# (a third of the range) sits well below the default lesion band.
BACKGROUND_PROFILE = (2.0, 3.0)


def _rank_to_profile(field_):
    """Monotone remap of a smooth field so its histogram follows BACKGROUND_PROFILE."""
    ranks = np.argsort(np.argsort(field_, axis=None, kind="stable"), kind="stable")
    u = (ranks + 0.5) / ranks.size
    return stats.beta.ppf(u, *BACKGROUND_PROFILE).reshape(field_.shape)


def _ellipsoid(shape, center, radii):
    zz, yy, xx = np.ogrid[: shape[0], : shape[1], : shape[2]]
    r = ((zz - center[0]) / radii[0]) ** 2 + ((yy - center[1]) / radii[1]) ** 2 + ((xx - center[2]) / radii[2]) ** 2
    return r <= 1.0


def _place(rng, shape, radii, placed, tries=200):
    """Pick a centre keeping the ellipsoid inside the volume and clear of earlier ones."""
    rmax = max(radii)
    for _ in range(tries):
        center = tuple(rng.uniform(r, n - 1 - r) for r, n in zip(radii, shape))
        # 2-voxel gap keeps lesions separate under 26-connectivity
        if all(math.dist(center, c) > rmax + r + 2.0 for c, r in placed):
            return center
    return None


def generate(spec: PhantomSpec) -> PhantomCase:
    shape = spec.shape
    rmin, rmax = spec.lesion_radius_range_vox
    if 2 * math.ceil(rmax) + 1 > min(shape):
        raise ValueError(f"lesion radius {rmax} does not fit in volume {shape}")
    rng = np.random.default_rng(spec.seed)

    lo, hi = spec.background_range
    field_ = ndimage.gaussian_filter(rng.standard_normal(shape), spec.background_texture_scale, mode="wrap")
    image = lo + (hi - lo) * _rank_to_profile(field_)

    mean, std = spec.lesion_intensity
    placed = []

    # confusers sit above the lesion band but overlap the upper background range
    band_hi = mean + 3.0 * std
    for _ in range(spec.confuser_count):
        radii = tuple(rng.uniform(rmin, rmax, size=3))
        center = _place(rng, shape, radii, placed)
        if center is None:
            continue
        placed.append((center, max(radii)))
        level = rng.uniform(band_hi, max(hi, band_hi + std))
        image[_ellipsoid(shape, center, radii)] = level

    mask = np.zeros(shape, dtype=bool)
    counts = []
    k = int(rng.integers(spec.lesion_count_range[0], spec.lesion_count_range[1] + 1))
    for _ in range(k):
        radii = tuple(rng.uniform(rmin, rmax, size=3))
        center = _place(rng, shape, radii, placed)
        if center is None:
            continue
        placed.append((center, max(radii)))
        blob = _ellipsoid(shape, center, radii)
        image[blob] = rng.normal(mean, std, size=int(blob.sum()))
        mask |= blob
        counts.append(int(blob.sum()))
    if not counts:
        raise RuntimeError("could not place any lesion; volume too crowded")

    if spec.noise_std > 0:
        image = image + rng.normal(0.0, spec.noise_std, size=shape)
    return PhantomCase(Volume(image.astype(np.float32), spec.spacing_mm), MaskVolume(mask, spec.spacing_mm), counts)


def generate_dataset(spec: PhantomSpec, n: int, out_dir) -> dict:
    if n < 1:
        raise ValueError("n must be >= 1")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    cases = []
    for i in range(n):
        seed = spec.seed + i
        case = generate(PhantomSpec(**{**asdict(spec), "seed": seed}))
        vol_name, mask_name = f"case{i:03d}_volume.svol", f"case{i:03d}_mask.svol"
        write_svol(case.volume, out_dir / vol_name)
        write_svol(case.mask, out_dir / mask_name)
        cases.append({
            "id": f"case{i:03d}",
            "volume": vol_name,
            "mask": mask_name,
            "seed": seed,
            "lesion_count": len(case.lesion_voxel_counts),
            "lesion_volumes_mm3": case.lesion_volumes_mm3,
        })
    manifest = {"cases": cases, "spec": spec.to_dict()}
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=1))
    return manifest


def load_manifest(path):
    """Read a dataset manifest; relative case paths are resolved against its directory."""
    path = Path(path)
    manifest = json.loads(path.read_text())
    for c in manifest["cases"]:
        for key in ("volume", "mask"):
            p = Path(c[key])
            c[key] = str(p if p.is_absolute() else path.parent / p)
    return manifest
