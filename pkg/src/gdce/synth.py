"""Synthetic label-separable dataset plus parameterized acquisition shifts.

Class identity is carried purely by spatial structure: class k gets more and
smaller elliptical texture blobs (count up, scale down), max-blended over a
smooth random background. Every image is then rank-equalized, which gives all
images the exact same (uniform) intensity histogram, so no global intensity
statistic can separate the classes; a mean-threshold classifier sits at
chance by construction.

Acquisition shifts are global monotone remaps: an endpoint-normalized
logistic sensor response (gain 0 degenerates to identity), gamma correction,
an additive window offset with clamping, and quantization to the output bit
depth. These are exactly the kind of maps an iterative global tone curve can
approximately invert.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .errors import DataError
from .image import (
    DatasetManifest,
    ManifestEntry,
    NUM_FOLDS,
    RawImage,
    UnitImage,
    Window,
    load_image,
    normalize_full_range,
    save_manifest,
    save_raw_image,
)

REFERENCE_SCANNER = "ref"
SHIFTED_SCANNER = "shifted"

REFERENCE_DOMAIN_CODE = 0
SHIFTED_DOMAIN_CODE = 1


@dataclass(frozen=True)
class ShiftProfile:
    gamma: float = 1.0
    sigmoid_gain: float = 0.0
    sigmoid_center: float = 0.5
    window_shift: float = 0.0
    out_bit_depth: int = 16
    noise: float = 0.0  # additive gaussian, outside the monotone guarantee
    seed: int = 0

    def __post_init__(self):
        if not self.gamma > 0:
            raise DataError(f"gamma must be positive, got {self.gamma}")
        if self.sigmoid_gain < 0:
            raise DataError(f"sigmoid gain must be >= 0, got {self.sigmoid_gain}")
        if not 0.0 <= self.sigmoid_center <= 1.0:
            raise DataError(f"sigmoid center must be in [0, 1], got {self.sigmoid_center}")
        if not 8 <= self.out_bit_depth <= 16:
            raise DataError(f"out_bit_depth must be in [8, 16], got {self.out_bit_depth}")
        if self.noise < 0:
            raise DataError(f"noise must be >= 0, got {self.noise}")

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ShiftProfile":
        doc = json.loads(text)
        if not isinstance(doc, dict):
            raise DataError("shift profile must be a JSON object")
        try:
            return cls(**doc)
        except TypeError as e:
            raise DataError(f"bad shift profile field: {e}") from e

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json() + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "ShiftProfile":
        path = Path(path)
        if not path.exists():
            raise DataError(f"shift profile not found: {path}")
        return cls.from_json(path.read_text())


def shift_curve(x: np.ndarray, profile: ShiftProfile) -> np.ndarray:
    """The continuous part of the shift: [0,1] -> [0,1], monotone."""
    y = np.asarray(x, dtype=np.float64)
    g, c = profile.sigmoid_gain, profile.sigmoid_center
    if g > 0:
        s = 1.0 / (1.0 + np.exp(-g * (y - c)))
        s0 = 1.0 / (1.0 + np.exp(g * c))
        s1 = 1.0 / (1.0 + np.exp(-g * (1.0 - c)))
        y = (s - s0) / (s1 - s0)
    y = y**profile.gamma
    return np.clip(y + profile.window_shift, 0.0, 1.0)


def apply_shift(img: UnitImage, profile: ShiftProfile,
                scanner_id: str = SHIFTED_SCANNER, label: int | None = None,
                rng: np.random.Generator | None = None) -> RawImage:
    """Push an ideal image through the simulated acquisition chain."""
    y = shift_curve(img.values, profile)
    if profile.noise > 0:
        if rng is None:
            rng = np.random.default_rng(profile.seed)
        y = np.clip(y + rng.normal(0.0, profile.noise, size=y.shape), 0.0, 1.0)
    maxval = (1 << profile.out_bit_depth) - 1
    pixels = np.rint(y * maxval).astype(np.uint16)
    window = Window(center=(0.5 + profile.window_shift) * maxval, width=float(maxval))
    return RawImage(pixels, profile.out_bit_depth, window=window,
                    scanner_id=scanner_id, label=label)


# ---------------------------------------------------------------------------
# Dataset generation


@dataclass(frozen=True)
class SynthSpec:
    num_classes: int = 4
    images_per_class: int = 100
    image_size: int = 64
    seed: int = 0

    def __post_init__(self):
        if not 2 <= self.num_classes <= 26:
            raise DataError(f"num_classes must be in [2, 26], got {self.num_classes}")
        if self.images_per_class < 1:
            raise DataError("images_per_class must be >= 1")
        if self.image_size < 16:
            raise DataError(f"image_size must be >= 16, got {self.image_size}")

    @property
    def class_names(self) -> list[str]:
        return [chr(ord("A") + k) for k in range(self.num_classes)]


def class_blob_params(spec: SynthSpec, cls: int) -> tuple[int, float]:
    """(blob count, blob scale in pixels) for one class; count up, scale down."""
    count = int(round(3 * 3.0**cls))
    sigma = 9.0 * 0.5**cls * (spec.image_size / 64.0)
    return count, sigma


def _smooth_field(rng: np.random.Generator, n: int, grid: int = 4) -> np.ndarray:
    """Low-frequency background: bilinear upsample of a coarse random grid."""
    coarse = rng.random((grid, grid))
    xs = np.linspace(0.0, grid - 1.0, n)
    i0 = np.floor(xs).astype(int)
    i1 = np.minimum(i0 + 1, grid - 1)
    f = xs - i0
    rows = coarse[i0, :] * (1.0 - f)[:, None] + coarse[i1, :] * f[:, None]
    return rows[:, i0] * (1.0 - f)[None, :] + rows[:, i1] * f[None, :]


def _equalize(field: np.ndarray) -> np.ndarray:
    """Rank remap to an exactly uniform histogram on [0, 1]."""
    flat = field.ravel()
    ranks = np.empty(flat.size, dtype=np.float64)
    ranks[np.argsort(flat, kind="stable")] = np.arange(flat.size)
    return (ranks / (flat.size - 1)).reshape(field.shape)


def generate_image(spec: SynthSpec, domain_code: int, cls: int, idx: int) -> UnitImage:
    """One synthetic image; deterministic in (seed, domain, class, index)."""
    if not 0 <= cls < spec.num_classes:
        raise DataError(f"class {cls} outside spec with {spec.num_classes} classes")
    ss = np.random.SeedSequence([spec.seed, domain_code, cls, idx])
    rng = np.random.default_rng(ss)
    n = spec.image_size
    field = 0.4 * _smooth_field(rng, n)
    count, sigma = class_blob_params(spec, cls)
    yy, xx = np.mgrid[0:n, 0:n].astype(np.float64)
    for _ in range(count):
        cy, cx = rng.uniform(0, n, size=2)
        amp = rng.uniform(0.5, 1.0)
        sy = sigma * rng.uniform(0.6, 1.4)
        sx = sigma * rng.uniform(0.6, 1.4)
        theta = rng.uniform(0, np.pi)
        ct, st = np.cos(theta), np.sin(theta)
        dy, dx = yy - cy, xx - cx
        u = (ct * dx + st * dy) / sx
        v = (-st * dx + ct * dy) / sy
        field = np.maximum(field, amp * np.exp(-0.5 * (u * u + v * v)))
    return UnitImage(_equalize(field))


def generate_dataset(spec: SynthSpec, out_dir: str | Path,
                     scanner_id: str = REFERENCE_SCANNER,
                     domain_code: int = REFERENCE_DOMAIN_CODE,
                     profile: ShiftProfile | None = None) -> DatasetManifest:
    """Write images, sidecars, and the manifest; returns the manifest.

    With a profile the images pass through apply_shift; otherwise they are
    stored as ideal 16-bit scans. Folds cycle through image index, so they
    are balanced per class.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for cls in range(spec.num_classes):
        name = spec.class_names[cls]
        for idx in range(spec.images_per_class):
            img = generate_image(spec, domain_code, cls, idx)
            if profile is None:
                maxval = (1 << 16) - 1
                raw = RawImage(np.rint(img.values * maxval).astype(np.uint16), 16,
                               window=Window(maxval / 2.0, float(maxval)),
                               scanner_id=scanner_id, label=cls)
            else:
                noise_rng = np.random.default_rng(
                    np.random.SeedSequence([profile.seed, domain_code, cls, idx]))
                raw = apply_shift(img, profile, scanner_id=scanner_id, label=cls,
                                  rng=noise_rng)
            fname = f"{name}_{idx:04d}.pgm"
            save_raw_image(raw, out_dir / fname)
            entries.append(ManifestEntry(fname, cls, scanner_id, idx % NUM_FOLDS))
    manifest = DatasetManifest(entries, spec.class_names, root=out_dir)
    save_manifest(manifest, out_dir / "manifest.json")
    if profile is not None:
        profile.save(out_dir / "profile.json")
    return manifest


def shift_dataset(manifest: DatasetManifest, profile: ShiftProfile,
                  out_dir: str | Path,
                  scanner_id: str = SHIFTED_SCANNER) -> DatasetManifest:
    """Re-render every image in a manifest through the shift profile.

    Paired counterpart to make_domain_pair: same scenes, different
    acquisition. Source pixels map back to [0, 1] by bit depth, so an ideal
    scan round-trips exactly before the shift is applied. Labels and fold
    assignments carry over.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for i, e in enumerate(manifest.entries):
        raw = load_image(manifest.image_path(e))
        unit = normalize_full_range(raw, mode="bitdepth")
        # stream tag 3: disjoint from the generator's domain codes 0/1
        rng = np.random.default_rng(np.random.SeedSequence([profile.seed, 3, e.label, i]))
        shifted = apply_shift(unit, profile, scanner_id=scanner_id, label=e.label,
                              rng=rng)
        dest = out_dir / e.path
        dest.parent.mkdir(parents=True, exist_ok=True)
        save_raw_image(shifted, dest)
        entries.append(ManifestEntry(e.path, e.label, scanner_id, e.fold))
    out = DatasetManifest(entries, list(manifest.class_names), root=out_dir)
    save_manifest(out, out_dir / "manifest.json")
    profile.save(out_dir / "profile.json")
    return out


def make_domain_pair(spec: SynthSpec, profile: ShiftProfile,
                     out_dir: str | Path) -> tuple[DatasetManifest, DatasetManifest]:
    """Reference and shifted datasets from disjoint sample draws (unpaired)."""
    out_dir = Path(out_dir)
    ref = generate_dataset(spec, out_dir / "ref", REFERENCE_SCANNER,
                           REFERENCE_DOMAIN_CODE)
    shifted = generate_dataset(spec, out_dir / "shifted", SHIFTED_SCANNER,
                               SHIFTED_DOMAIN_CODE, profile=profile)
    return ref, shifted
