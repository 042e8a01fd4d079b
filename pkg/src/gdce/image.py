"""Grayscale image containers, file I/O, dataset manifests, and normalization.

Images move through the pipeline in two forms: RawImage holds integer counts
as acquired (8..16 bit) plus display/acquisition metadata; UnitImage holds
intensities scaled to [0, 1], which is what the curve engine and the networks
consume. Supported containers are binary PGM (P5, big-endian 16-bit samples)
and single-channel PNG. Per-image metadata lives in a JSON sidecar next to
the image file.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import DataError

NUM_FOLDS = 5

SIDECAR_SUFFIX = ".json"


@dataclass(frozen=True)
class Window:
    """Display window in raw counts: the sub-range mapped to visible gray."""

    center: float
    width: float

    def __post_init__(self):
        if not self.width > 0:
            raise DataError(f"window width must be positive, got {self.width}")


@dataclass(frozen=True)
class RawImage:
    """Integer-count image with acquisition metadata.

    pixels is a row-major (height, width) integer array; every value must fit
    in bit_depth bits.
    """

    pixels: np.ndarray
    bit_depth: int
    window: Optional[Window] = None
    scanner_id: str = ""
    label: Optional[int] = None

    def __post_init__(self):
        px = self.pixels
        if px.ndim != 2:
            raise DataError(f"pixels must be 2-D (height, width), got shape {px.shape}")
        if not np.issubdtype(px.dtype, np.integer):
            raise DataError(f"pixels must be an integer array, got dtype {px.dtype}")
        if not 8 <= self.bit_depth <= 16:
            raise DataError(f"bit_depth must be in [8, 16], got {self.bit_depth}")
        if px.size == 0:
            raise DataError("image has no pixels")
        maxval = (1 << self.bit_depth) - 1
        lo, hi = int(px.min()), int(px.max())
        if lo < 0 or hi > maxval:
            raise DataError(
                f"pixel exceeds bit depth: values span [{lo}, {hi}] "
                f"but bit_depth {self.bit_depth} allows [0, {maxval}]"
            )
        px.setflags(write=False)

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def max_count(self) -> int:
        return (1 << self.bit_depth) - 1


@dataclass(frozen=True)
class UnitImage:
    """Float image with all values in [0, 1]."""

    values: np.ndarray

    def __post_init__(self):
        v = self.values
        if v.ndim != 2:
            raise DataError(f"values must be 2-D (height, width), got shape {v.shape}")
        if not np.issubdtype(v.dtype, np.floating):
            raise DataError(f"values must be a float array, got dtype {v.dtype}")
        if v.size == 0:
            raise DataError("image has no pixels")
        if not np.isfinite(v).all():
            raise DataError("image contains non-finite values")
        if v.min() < 0.0 or v.max() > 1.0:
            raise DataError(
                f"values out of [0, 1]: span [{v.min():.6g}, {v.max():.6g}]"
            )
        v.setflags(write=False)

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def height(self) -> int:
        return self.values.shape[0]


# ---------------------------------------------------------------------------
# Normalization


def normalize_full_range(img: RawImage, mode: str = "minmax") -> UnitImage:
    """Map raw counts to [0, 1].

    mode "minmax" stretches each image by its own min/max (constant images map
    to all-zeros); mode "bitdepth" divides by the bit-depth maximum instead.
    """
    p = img.pixels.astype(np.float64)
    if mode == "minmax":
        lo, hi = p.min(), p.max()
        if hi == lo:
            return UnitImage(np.zeros_like(p))
        return UnitImage((p - lo) / (hi - lo))
    if mode == "bitdepth":
        return UnitImage(p / img.max_count)
    raise ValueError(f"unknown full-range mode {mode!r}")


def normalize_window(img: RawImage) -> UnitImage:
    """Linear ramp across the display window, clamped outside it."""
    if img.window is None:
        raise DataError("image has no display window metadata")
    lo = img.window.center - img.window.width / 2.0
    hi = img.window.center + img.window.width / 2.0
    p = img.pixels.astype(np.float64)
    return UnitImage(np.clip((p - lo) / (hi - lo), 0.0, 1.0))


def normalize_zscore(img: RawImage) -> np.ndarray:
    """Standardize to mean 0 / population std 1. Unbounded output."""
    p = img.pixels.astype(np.float64)
    std = p.std()
    if std == 0.0:
        raise DataError("zero-variance image cannot be z-score normalized")
    return (p - p.mean()) / std


# ---------------------------------------------------------------------------
# Image file I/O

_PNM_TOKEN = re.compile(rb"^\s*(?:#.*\n\s*)*(\S+)")


def _read_pnm_tokens(data: bytes, count: int) -> tuple[list[int], int]:
    """Read `count` whitespace/comment-delimited integer tokens, return offset."""
    tokens = []
    pos = 0
    while len(tokens) < count:
        m = _PNM_TOKEN.match(data[pos:])
        if m is None:
            raise DataError("truncated PGM header")
        try:
            tokens.append(int(m.group(1)))
        except ValueError as e:
            raise DataError(f"malformed PGM header token {m.group(1)!r}") from e
        pos += m.end()
    return tokens, pos


def _load_pgm(path: Path) -> tuple[np.ndarray, int]:
    data = path.read_bytes()
    if not data.startswith(b"P5"):
        raise DataError(f"{path}: not a binary PGM (P5) file")
    (width, height, maxval), pos = _read_pnm_tokens(data[2:], 3)
    pos += 2
    if not 0 < maxval < 65536:
        raise DataError(f"{path}: invalid PGM maxval {maxval}")
    # exactly one whitespace byte separates header from raster
    pos += 1
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    n = width * height
    raster = data[pos : pos + n * dtype.itemsize]
    if len(raster) != n * dtype.itemsize:
        raise DataError(f"{path}: raster truncated")
    pixels = np.frombuffer(raster, dtype=dtype).reshape(height, width)
    if int(pixels.max(initial=0)) > maxval:
        raise DataError(f"{path}: sample exceeds declared maxval {maxval}")
    bit_depth = max(8, maxval.bit_length())
    return pixels.astype(np.uint16), bit_depth


def _save_pgm(path: Path, pixels: np.ndarray, bit_depth: int) -> None:
    maxval = (1 << bit_depth) - 1
    h, w = pixels.shape
    header = f"P5\n{w} {h}\n{maxval}\n".encode()
    if maxval > 255:
        body = pixels.astype(">u2").tobytes()
    else:
        body = pixels.astype("u1").tobytes()
    path.write_bytes(header + body)


def _load_png(path: Path) -> tuple[np.ndarray, int]:
    from PIL import Image as PILImage

    with PILImage.open(path) as im:
        arr = np.asarray(im)
    if arr.ndim != 2:
        raise DataError(f"{path}: grayscale required, got {arr.ndim}-D image data")
    if arr.dtype == np.uint8:
        return arr.astype(np.uint16), 8
    if arr.dtype in (np.uint16, np.int32):
        if arr.min() < 0 or arr.max() > 65535:
            raise DataError(f"{path}: sample values outside 16-bit range")
        return arr.astype(np.uint16), 16
    raise DataError(f"{path}: unsupported PNG sample format {arr.dtype}")


def _save_png(path: Path, pixels: np.ndarray, bit_depth: int) -> None:
    from PIL import Image as PILImage

    if bit_depth <= 8:
        PILImage.fromarray(pixels.astype(np.uint8), mode="L").save(path)
    else:
        PILImage.fromarray(pixels.astype("<u2")).save(path)


def sidecar_path(image_path: Path) -> Path:
    return Path(str(image_path) + SIDECAR_SUFFIX)


def save_sidecar(image_path: Path, meta: dict) -> None:
    sidecar_path(image_path).write_text(json.dumps(meta, indent=1) + "\n")


def _load_sidecar(image_path: Path) -> dict:
    sp = sidecar_path(image_path)
    if not sp.exists():
        return {}
    try:
        meta = json.loads(sp.read_text())
    except json.JSONDecodeError as e:
        raise DataError(f"{sp}: malformed sidecar: {e}") from e
    if not isinstance(meta, dict):
        raise DataError(f"{sp}: sidecar must be a JSON object")
    return meta


def load_image(path: str | Path) -> RawImage:
    """Load an 8/16-bit grayscale raster plus its optional JSON sidecar."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"image file not found: {path}")
    suffix = path.suffix.lower()
    if suffix == ".pgm":
        pixels, container_depth = _load_pgm(path)
    elif suffix == ".png":
        pixels, container_depth = _load_png(path)
    else:
        raise DataError(f"{path}: unsupported format {suffix!r} (use .pgm or .png)")

    meta = _load_sidecar(path)
    bit_depth = meta.get("bit_depth", container_depth)
    if not isinstance(bit_depth, int):
        raise DataError(f"{path}: sidecar bit_depth must be an integer")
    window = None
    if "window_center" in meta or "window_width" in meta:
        try:
            window = Window(float(meta["window_center"]), float(meta["window_width"]))
        except KeyError as e:
            raise DataError(f"{path}: sidecar window needs both center and width") from e
    label = meta.get("label")
    if label is not None and not isinstance(label, int):
        raise DataError(f"{path}: sidecar label must be an integer")
    return RawImage(
        pixels=pixels,
        bit_depth=bit_depth,
        window=window,
        scanner_id=str(meta.get("scanner_id", "")),
        label=label,
    )


def save_image(img: UnitImage, path: str | Path, bit_depth: int = 16) -> None:
    """Quantize unit intensities to bit_depth counts and write them out."""
    if not 8 <= bit_depth <= 16:
        raise DataError(f"bit_depth must be in [8, 16], got {bit_depth}")
    path = Path(path)
    maxval = (1 << bit_depth) - 1
    pixels = np.rint(img.values * maxval).astype(np.uint16)
    suffix = path.suffix.lower()
    if suffix == ".pgm":
        _save_pgm(path, pixels, bit_depth)
    elif suffix == ".png":
        _save_png(path, pixels, bit_depth)
    else:
        raise DataError(f"{path}: unsupported format {suffix!r} (use .pgm or .png)")


def save_raw_image(img: RawImage, path: str | Path) -> None:
    """Write a RawImage and a sidecar carrying its metadata."""
    path = Path(path)
    suffix = path.suffix.lower()
    if suffix == ".pgm":
        _save_pgm(path, img.pixels, img.bit_depth)
    elif suffix == ".png":
        _save_png(path, img.pixels, img.bit_depth)
    else:
        raise DataError(f"{path}: unsupported format {suffix!r} (use .pgm or .png)")
    meta: dict = {"bit_depth": img.bit_depth, "scanner_id": img.scanner_id}
    if img.window is not None:
        meta["window_center"] = img.window.center
        meta["window_width"] = img.window.width
    if img.label is not None:
        meta["label"] = img.label
    save_sidecar(path, meta)


# ---------------------------------------------------------------------------
# Dataset manifests


@dataclass(frozen=True)
class ManifestEntry:
    path: str  # relative to the manifest's directory
    label: int
    scanner_id: str
    fold: int


@dataclass
class DatasetManifest:
    entries: list[ManifestEntry]
    class_names: list[str]
    root: Path = field(default_factory=Path)

    def __post_init__(self):
        if not self.entries:
            raise DataError("manifest has no entries")
        if not self.class_names:
            raise DataError("manifest has no class names")
        c = len(self.class_names)
        for e in self.entries:
            if not 0 <= e.label < c:
                raise DataError(
                    f"label {e.label} out of range for {c} classes ({e.path})"
                )
            if not 0 <= e.fold < NUM_FOLDS:
                raise DataError(f"fold {e.fold} out of range [0, {NUM_FOLDS}) ({e.path})")

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    def image_path(self, entry: ManifestEntry) -> Path:
        return self.root / entry.path

    def subset(self, keep) -> "DatasetManifest":
        """New manifest with only the entries where keep(entry) is true."""
        kept = [e for e in self.entries if keep(e)]
        return DatasetManifest(kept, list(self.class_names), self.root)


def save_manifest(manifest: DatasetManifest, path: str | Path) -> None:
    path = Path(path)
    doc = {
        "class_names": manifest.class_names,
        "entries": [
            {"path": e.path, "label": e.label, "scanner_id": e.scanner_id, "fold": e.fold}
            for e in manifest.entries
        ],
    }
    path.write_text(json.dumps(doc, indent=1) + "\n")


def load_manifest(path: str | Path) -> DatasetManifest:
    path = Path(path)
    if not path.exists():
        raise DataError(f"manifest not found: {path}")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise DataError(f"{path}: malformed manifest: {e}") from e
    try:
        entries = [
            ManifestEntry(
                path=str(e["path"]),
                label=int(e["label"]),
                scanner_id=str(e.get("scanner_id", "")),
                fold=int(e["fold"]),
            )
            for e in doc["entries"]
        ]
        class_names = [str(c) for c in doc["class_names"]]
    except (KeyError, TypeError) as e:
        raise DataError(f"{path}: manifest missing required field: {e}") from e
    return DatasetManifest(entries, class_names, root=path.parent)
