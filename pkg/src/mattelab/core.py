"""Shared raster/clip data model, file codecs, manifest handling and RNG seeding.

Conventions used throughout the package:
  * images are float32 arrays of shape (H, W, 3) with values in [0, 1]
  * alpha mattes / uncertainty maps are float32 arrays of shape (H, W)
  * trimaps are uint8 arrays of shape (H, W) with labels {BG=0, UNKNOWN=1, FG=2};
    on disk the labels are stored as bytes {0, 128, 255}
All rasters are written as lossless 8-bit PNG files.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field

import cv2
import numpy as np

TRIMAP_BG = 0
TRIMAP_UNKNOWN = 1
TRIMAP_FG = 2

_TRIMAP_BYTES = {TRIMAP_BG: 0, TRIMAP_UNKNOWN: 128, TRIMAP_FG: 255}

MIN_SIDE = 8


class RasterError(ValueError):
    """Raised when a raster violates the data-model invariants."""


def as_image(arr) -> np.ndarray:
    """Validate and return an (H, W, 3) float32 image in [0, 1]."""
    arr = np.asarray(arr, dtype=np.float32)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise RasterError(f"image must be (H, W, 3), got {arr.shape}")
    if arr.shape[0] < MIN_SIDE or arr.shape[1] < MIN_SIDE:
        raise RasterError(f"image sides must be >= {MIN_SIDE}, got {arr.shape[:2]}")
    if not np.isfinite(arr).all():
        raise RasterError("image contains non-finite values")
    if arr.min() < 0.0 or arr.max() > 1.0:
        raise RasterError("image values must lie in [0, 1]")
    return arr


def as_alpha(arr) -> np.ndarray:
    """Validate and return an (H, W) float32 alpha matte in [0, 1]."""
    arr = np.asarray(arr, dtype=np.float32)
    if arr.ndim != 2:
        raise RasterError(f"alpha must be (H, W), got {arr.shape}")
    if not np.isfinite(arr).all():
        raise RasterError("alpha contains non-finite values")
    if arr.min() < 0.0 or arr.max() > 1.0:
        raise RasterError("alpha values must lie in [0, 1]")
    return arr


def as_trimap(arr) -> np.ndarray:
    """Validate and return an (H, W) uint8 trimap with labels in {0, 1, 2}."""
    arr = np.asarray(arr)
    if arr.ndim != 2:
        raise RasterError(f"trimap must be (H, W), got {arr.shape}")
    arr = arr.astype(np.uint8)
    if not np.isin(arr, (TRIMAP_BG, TRIMAP_UNKNOWN, TRIMAP_FG)).all():
        raise RasterError("trimap labels must be a subset of {0, 1, 2}")
    return arr


def encode_trimap(trimap: np.ndarray) -> np.ndarray:
    """Map trimap labels {0, 1, 2} to serialized bytes {0, 128, 255}."""
    trimap = as_trimap(trimap)
    lut = np.zeros(256, dtype=np.uint8)
    for label, byte in _TRIMAP_BYTES.items():
        lut[label] = byte
    return lut[trimap]


def decode_trimap(raw: np.ndarray) -> np.ndarray:
    """Inverse of :func:`encode_trimap`; rejects bytes outside {0, 128, 255}."""
    raw = np.asarray(raw, dtype=np.uint8)
    if not np.isin(raw, (0, 128, 255)).all():
        raise RasterError("serialized trimap bytes must be in {0, 128, 255}")
    out = np.empty_like(raw)
    out[raw == 0] = TRIMAP_BG
    out[raw == 128] = TRIMAP_UNKNOWN
    out[raw == 255] = TRIMAP_FG
    return out


@dataclass(frozen=True)
class OcclusionAsset:
    """An occluder layer: color image plus its alpha, tagged by source category."""

    color: np.ndarray
    alpha: np.ndarray
    source: str  # MATTE | HARD_MASK | RANDOM_SHAPE | TEXTURE

    SOURCES = ("MATTE", "HARD_MASK", "RANDOM_SHAPE", "TEXTURE")

    def __post_init__(self):
        as_image(self.color)
        alpha = as_alpha(self.alpha)
        if self.color.shape[:2] != alpha.shape:
            raise RasterError("asset color/alpha sizes differ")
        if self.source not in self.SOURCES:
            raise RasterError(f"unknown asset source {self.source!r}")
        if self.source == "HARD_MASK" and not np.isin(alpha, (0.0, 1.0)).all():
            raise RasterError("HARD_MASK alpha must be binary before blurring")


@dataclass(frozen=True)
class ClipSample:
    """A length-T synthetic motion clip with per-frame ground truth."""

    frames: tuple  # of (H, W, 3) images
    alphas: tuple  # of (H, W) alpha mattes
    trimaps: tuple  # of (H, W) trimaps
    meta: dict = field(default_factory=dict)


def validate_sample(sample: ClipSample) -> list:
    """Return a list of human-readable invariant violations (empty == valid)."""
    report = []
    n_f, n_a, n_t = len(sample.frames), len(sample.alphas), len(sample.trimaps)
    if not (n_f == n_a == n_t):
        report.append(f"sequence length mismatch: frames={n_f} alphas={n_a} trimaps={n_t}")
    if n_f == 0:
        report.append("clip must contain at least one frame")
        return report

    shape = np.asarray(sample.frames[0]).shape[:2]
    for i, frame in enumerate(sample.frames):
        try:
            f = as_image(frame)
        except RasterError as exc:
            report.append(f"frame[{i}]: {exc}")
            continue
        if f.shape[:2] != shape:
            report.append(f"frame[{i}]: spatial size {f.shape[:2]} != {shape}")
    for i, alpha in enumerate(sample.alphas):
        try:
            a = as_alpha(alpha)
        except RasterError as exc:
            report.append(f"alpha[{i}]: {exc}")
            continue
        if a.shape != shape:
            report.append(f"alpha[{i}]: spatial size {a.shape} != {shape}")
    for i, trimap in enumerate(sample.trimaps):
        try:
            t = as_trimap(trimap)
        except RasterError as exc:
            report.append(f"trimap[{i}]: {exc}")
            continue
        if t.shape != shape:
            report.append(f"trimap[{i}]: spatial size {t.shape} != {shape}")
    return report


# ---------------------------------------------------------------------------
# Raster file codecs (8-bit lossless PNG)
# ---------------------------------------------------------------------------

def save_image(path: str, image: np.ndarray) -> None:
    image = as_image(image)
    data = np.rint(image * 255.0).astype(np.uint8)
    _imwrite(path, data[:, :, ::-1])  # RGB -> BGR for OpenCV


def load_image(path: str) -> np.ndarray:
    data = _imread(path, cv2.IMREAD_COLOR)
    return (data[:, :, ::-1].astype(np.float32) / 255.0)


def save_alpha(path: str, alpha: np.ndarray) -> None:
    alpha = as_alpha(alpha)
    _imwrite(path, np.rint(alpha * 255.0).astype(np.uint8))


def load_alpha(path: str) -> np.ndarray:
    return _imread(path, cv2.IMREAD_GRAYSCALE).astype(np.float32) / 255.0


def save_trimap(path: str, trimap: np.ndarray) -> None:
    _imwrite(path, encode_trimap(trimap))


def load_trimap(path: str) -> np.ndarray:
    return decode_trimap(_imread(path, cv2.IMREAD_GRAYSCALE))


def _imwrite(path: str, data: np.ndarray) -> None:
    if not path.lower().endswith(".png"):
        raise ValueError(f"rasters are stored as PNG, got {path!r}")
    ok = cv2.imwrite(path, data)
    if not ok:
        raise IOError(f"failed to write raster {path!r}")


def _imread(path: str, flags: int) -> np.ndarray:
    data = cv2.imread(path, flags)
    if data is None:
        raise IOError(f"failed to read raster {path!r}")
    return data


# ---------------------------------------------------------------------------
# Dataset manifest (line-delimited JSON, one record per clip)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ManifestRecord:
    sample_id: str
    split: str  # train | test
    source: str  # occlusion source tag, or "NONE" for occlusion-free clips
    seed: int
    frames: tuple
    alphas: tuple
    trimaps: tuple

    def to_json(self) -> str:
        return json.dumps(
            {
                "sample_id": self.sample_id,
                "split": self.split,
                "source": self.source,
                "seed": self.seed,
                "frames": list(self.frames),
                "alphas": list(self.alphas),
                "trimaps": list(self.trimaps),
            },
            sort_keys=True,
        )

    @classmethod
    def from_json(cls, line: str) -> "ManifestRecord":
        d = json.loads(line)
        return cls(
            sample_id=d["sample_id"],
            split=d["split"],
            source=d["source"],
            seed=int(d["seed"]),
            frames=tuple(d["frames"]),
            alphas=tuple(d["alphas"]),
            trimaps=tuple(d["trimaps"]),
        )


def save_manifest(path: str, records) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(rec.to_json() + "\n")


def load_manifest(path: str) -> list:
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                records.append(ManifestRecord.from_json(line))
    return records


def validate_manifest(records, root: str = ".") -> list:
    """Check uniqueness of sample ids and existence of every referenced file.

    Order-independent: the report is sorted, and permuting the records yields
    the same report.
    """
    report = []
    seen = set()
    for rec in records:
        if rec.sample_id in seen:
            report.append(f"duplicate sample_id {rec.sample_id!r}")
        seen.add(rec.sample_id)
        for path in list(rec.frames) + list(rec.alphas) + list(rec.trimaps):
            full = os.path.join(root, path)
            if not os.path.exists(full):
                report.append(f"{rec.sample_id}: missing file {path!r}")
    return sorted(set(report))


# ---------------------------------------------------------------------------
# Deterministic RNG
# ---------------------------------------------------------------------------

def seeded_rng(seed: int) -> np.random.Generator:
    """Deterministic random stream for a nonnegative integer seed."""
    if seed < 0:
        raise ValueError("seed must be >= 0")
    return np.random.default_rng(np.random.SeedSequence(seed))


def substream(seed: int, *keys) -> np.random.Generator:
    """Independent per-sample stream derived from (seed, keys).

    The stream depends only on the seed and the key values, never on how many
    other streams were drawn before it, so record reordering cannot change it.
    """
    if seed < 0:
        raise ValueError("seed must be >= 0")
    digest = hashlib.sha256(repr(keys).encode("utf-8")).digest()
    entropy = [seed] + [int.from_bytes(digest[i : i + 8], "big") for i in range(0, 32, 8)]
    return np.random.default_rng(np.random.SeedSequence(entropy))
