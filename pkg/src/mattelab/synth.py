"""Synthetic occluded-face clip generation.

Composites procedural (or user-supplied) occluders onto procedural faces,
derives soft ground-truth face alphas and trimaps, and animates clips with
interpolated affine motion. Everything here is a pure function of
(config, seed, sample_id), so dataset generation is bit-reproducible.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field, asdict

import cv2
import numpy as np

from . import core
from .core import (
    ClipSample,
    ManifestRecord,
    OcclusionAsset,
    TRIMAP_BG,
    TRIMAP_FG,
    TRIMAP_UNKNOWN,
    as_alpha,
    as_image,
    substream,
)


class ClipRejected(RuntimeError):
    """Raised when a sampled clip configuration is unusable and must be resampled."""


@dataclass
class SynthConfig:
    """Knobs for dataset synthesis. Serialized as a flat key=value file."""

    occlusion_ratio: float = 0.25  # fraction of clips that carry an occluder
    ratio_schedule: tuple = ()  # optional stepped ratios, e.g. (0.1, 0.3, 0.5)
    sources: tuple = ("MATTE", "HARD_MASK", "RANDOM_SHAPE", "TEXTURE")
    clip_len: int = 8
    size: int = 256
    seed: int = 0
    test_seed: int = 1234  # test split configurations are fixed, independent of seed
    num_clips: int = 64
    num_test_clips: int = 16
    # occluder augmentation ranges
    scale_min: float = 0.3
    scale_max: float = 0.8
    rotation_max_deg: float = 30.0
    flip_prob: float = 0.5
    jitter: float = 0.15  # brightness/contrast jitter magnitude
    min_cover: float = 0.05
    max_cover: float = 0.5
    pause_prob: float = 0.1
    # trimap construction
    erode_r: int = 5
    dilate_r: int = 5
    # boundary blur for hard masks
    blur_sigma: float = 2.0
    # motion magnitude; scaled with clip length relative to the reference length
    motion_scale: float = 1.0
    motion_ref_len: int = 8

    def __post_init__(self):
        if not 0.0 <= self.occlusion_ratio <= 1.0:
            raise ValueError("occlusion_ratio must be in [0, 1]")
        if self.erode_r < 1 or self.dilate_r < 1:
            raise ValueError("trimap radii must be >= 1")
        if self.blur_sigma <= 0:
            raise ValueError("blur_sigma must be > 0")
        if self.clip_len < 1:
            raise ValueError("clip_len must be >= 1")
        for src in self.sources:
            if src not in OcclusionAsset.SOURCES:
                raise ValueError(f"unknown occlusion source {src!r}")

    def save(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for key, val in asdict(self).items():
                if isinstance(val, tuple):
                    val = ",".join(str(v) for v in val)
                fh.write(f"{key}={val}\n")

    @classmethod
    def load(cls, path: str) -> "SynthConfig":
        kwargs = {}
        with open(path, "r", encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line or line.startswith("#"):
                    continue
                key, _, val = line.partition("=")
                kwargs[key.strip()] = val.strip()
        return cls(**_coerce_fields(cls, kwargs))


def _coerce_fields(cls, kwargs: dict) -> dict:
    defaults = cls()
    out = {}
    for key, raw in kwargs.items():
        if not hasattr(defaults, key):
            raise ValueError(f"unknown config key {key!r}")
        ref = getattr(defaults, key)
        if isinstance(ref, bool):
            out[key] = raw.lower() in ("1", "true", "yes")
        elif isinstance(ref, int):
            out[key] = int(raw)
        elif isinstance(ref, float):
            out[key] = float(raw)
        elif isinstance(ref, tuple):
            items = [v for v in raw.split(",") if v]
            if key == "ratio_schedule":
                out[key] = tuple(float(v) for v in items)
            else:
                out[key] = tuple(items)
        else:
            out[key] = raw
    return out


# ---------------------------------------------------------------------------
# Compositing primitives
# ---------------------------------------------------------------------------

def composite_pixelwise(fg: np.ndarray, bg: np.ndarray, alpha: np.ndarray) -> np.ndarray:
    """Alpha-blend: out = alpha * fg + (1 - alpha) * bg, per pixel per channel."""
    fg, bg, alpha = as_image(fg), as_image(bg), as_alpha(alpha)
    if fg.shape != bg.shape or fg.shape[:2] != alpha.shape:
        raise ValueError("composite_pixelwise: size mismatch")
    a = alpha[:, :, None]
    return np.clip(a * fg + (1.0 - a) * bg, 0.0, 1.0).astype(np.float32)


def make_face_alpha(skin_mask: np.ndarray, occ_alpha: np.ndarray) -> np.ndarray:
    """Ground-truth face alpha: skin opacity attenuated by the occluder's opacity."""
    skin_mask, occ_alpha = as_alpha(skin_mask), as_alpha(occ_alpha)
    if skin_mask.shape != occ_alpha.shape:
        raise ValueError("make_face_alpha: size mismatch")
    return (skin_mask * (1.0 - occ_alpha)).astype(np.float32)


def blur_mask_boundary(mask: np.ndarray, sigma: float) -> np.ndarray:
    """Gaussian-blur a binary mask so its boundary becomes a soft transition.

    Uses a kernel truncated at 3*sigma, so pixels farther than that from any
    boundary keep their original value (up to roundoff).
    """
    mask = as_alpha(mask)
    if sigma <= 0:
        raise ValueError("sigma must be > 0")
    k = 2 * int(math.ceil(3.0 * sigma)) + 1
    out = cv2.GaussianBlur(mask, (k, k), sigmaX=sigma, sigmaY=sigma,
                           borderType=cv2.BORDER_REFLECT_101)
    return np.clip(out, 0.0, 1.0).astype(np.float32)


# ---------------------------------------------------------------------------
# Procedural content
# ---------------------------------------------------------------------------

def gen_random_shape(rng: np.random.Generator, size) -> np.ndarray:
    """Binary alpha of a filled region bounded by a smooth closed curve.

    4-10 random control points are joined by a periodic Catmull-Rom curve and
    the enclosed region is filled.
    """
    h, w = size
    if h < 16 or w < 16:
        raise ValueError("canvas must be at least 16x16")
    for _ in range(16):
        n = int(rng.integers(4, 11))
        cx = rng.uniform(0.3 * w, 0.7 * w)
        cy = rng.uniform(0.3 * h, 0.7 * h)
        angles = np.sort(rng.uniform(0.0, 2.0 * math.pi, size=n))
        radii = rng.uniform(0.15, 0.45, size=n) * min(h, w)
        pts = np.stack([cx + radii * np.cos(angles), cy + radii * np.sin(angles)], axis=1)
        curve = _catmull_rom_closed(pts, samples_per_seg=24)
        mask = np.zeros((h, w), dtype=np.uint8)
        cv2.fillPoly(mask, [np.round(curve).astype(np.int32)], 1)
        frac = mask.mean()
        if 0.0 < frac < 1.0:
            return mask.astype(np.float32)
    raise ClipRejected("failed to sample a usable random shape")


def _catmull_rom_closed(pts: np.ndarray, samples_per_seg: int) -> np.ndarray:
    n = len(pts)
    ts = np.linspace(0.0, 1.0, samples_per_seg, endpoint=False)
    out = []
    for i in range(n):
        p0, p1, p2, p3 = pts[(i - 1) % n], pts[i], pts[(i + 1) % n], pts[(i + 2) % n]
        for t in ts:
            t2, t3 = t * t, t * t * t
            out.append(
                0.5 * ((2 * p1) + (-p0 + p2) * t
                       + (2 * p0 - 5 * p1 + 4 * p2 - p3) * t2
                       + (-p0 + 3 * p1 - 3 * p2 + p3) * t3)
            )
    return np.asarray(out)


def gen_procedural_face(rng: np.random.Generator, size: int):
    """Render a face-like raster plus its exact binary skin mask.

    The face is a skin-tone ellipse with eye/nose/mouth features on a random
    background; a hair cap overlays the top of the ellipse and is excluded
    from the skin mask (the mask covers skin plus facial features only).
    Returns (image, skin_mask).
    """
    if size < 64:
        raise ValueError("face canvas must be at least 64 px")
    h = w = size

    # background: two-color vertical gradient with a little noise
    c0 = rng.uniform(0.1, 0.9, size=3)
    c1 = rng.uniform(0.1, 0.9, size=3)
    grad = np.linspace(0.0, 1.0, h, dtype=np.float32)[:, None, None]
    img = (1.0 - grad) * c0[None, None, :] + grad * c1[None, None, :]
    noise = rng.normal(0.0, 0.02, size=(h, w, 1)).astype(np.float32)
    img = np.clip(img + noise, 0.0, 1.0).astype(np.float32)

    # skin ellipse
    cx = int(w * rng.uniform(0.42, 0.58))
    cy = int(h * rng.uniform(0.45, 0.58))
    ax = int(w * rng.uniform(0.26, 0.34))
    ay = int(h * rng.uniform(0.32, 0.40))
    skin_tone = np.array([
        rng.uniform(0.55, 0.95),
        rng.uniform(0.40, 0.75),
        rng.uniform(0.30, 0.62),
    ], dtype=np.float32)
    face_mask = np.zeros((h, w), dtype=np.uint8)
    cv2.ellipse(face_mask, (cx, cy), (ax, ay), 0, 0, 360, 1, thickness=-1)
    img[face_mask == 1] = skin_tone

    # facial features (still part of the skin region)
    eye_dy = int(ay * 0.30)
    eye_dx = int(ax * 0.42)
    eye_r = max(2, int(min(ax, ay) * 0.12))
    eye_tone = tuple(float(v) for v in rng.uniform(0.02, 0.25, size=3))
    for sgn in (-1, 1):
        cv2.circle(img, (cx + sgn * eye_dx, cy - eye_dy), eye_r, eye_tone, thickness=-1)
    nose_tone = tuple(float(v) for v in np.clip(skin_tone * rng.uniform(0.7, 0.9), 0, 1))
    cv2.ellipse(img, (cx, cy + int(ay * 0.1)), (max(1, eye_r // 2), eye_r), 0, 0, 360,
                nose_tone, thickness=-1)
    mouth_tone = (float(rng.uniform(0.5, 0.85)), float(rng.uniform(0.1, 0.3)),
                  float(rng.uniform(0.1, 0.3)))
    cv2.ellipse(img, (cx, cy + int(ay * 0.55)), (int(ax * 0.4), max(2, eye_r // 2)),
                0, 0, 360, mouth_tone, thickness=-1)

    # hair cap over the top of the ellipse; excluded from the skin mask
    hair_mask = np.zeros((h, w), dtype=np.uint8)
    hair_drop = int(ay * rng.uniform(0.55, 0.8))
    cv2.ellipse(hair_mask, (cx, cy - hair_drop), (int(ax * 1.05), int(ay * 0.55)),
                0, 0, 360, 1, thickness=-1)
    hair_tone = tuple(float(v) for v in rng.uniform(0.02, 0.35, size=3))
    img[hair_mask == 1] = hair_tone

    skin = ((face_mask == 1) & (hair_mask == 0)).astype(np.float32)
    img = np.clip(img, 0.0, 1.0).astype(np.float32)
    return img, skin


def _texture_image(rng: np.random.Generator, size) -> np.ndarray:
    """Smooth colored noise texture (low-res noise upsampled)."""
    h, w = size
    low = rng.random((max(2, h // 16), max(2, w // 16), 3)).astype(np.float32)
    tex = cv2.resize(low, (w, h), interpolation=cv2.INTER_CUBIC)
    return np.clip(tex, 0.0, 1.0)


def gen_procedural_asset(rng: np.random.Generator, source: str, size=(128, 128)) -> OcclusionAsset:
    """Desk-scale stand-in for real occluder corpora, one generator per source tag."""
    h, w = size
    if source == "RANDOM_SHAPE":
        alpha = gen_random_shape(rng, size)
        color = np.clip(np.full((h, w, 3), rng.uniform(0.1, 0.9, size=3),
                                dtype=np.float32), 0, 1)
        return OcclusionAsset(color=color, alpha=alpha, source=source)
    if source == "TEXTURE":
        # textures are cut by a random shape rather than used full-frame
        alpha = gen_random_shape(rng, size)
        return OcclusionAsset(color=_texture_image(rng, size), alpha=alpha, source=source)
    if source == "HARD_MASK":
        # blocky hand-segmentation-like binary mask: union of a few ellipses
        alpha = np.zeros((h, w), dtype=np.uint8)
        for _ in range(int(rng.integers(2, 5))):
            c = (int(rng.uniform(0.3, 0.7) * w), int(rng.uniform(0.3, 0.7) * h))
            axes = (int(rng.uniform(0.1, 0.3) * w), int(rng.uniform(0.1, 0.3) * h))
            cv2.ellipse(alpha, c, axes, float(rng.uniform(0, 180)), 0, 360, 1, -1)
        color = np.clip(np.full((h, w, 3), rng.uniform(0.2, 0.8, size=3),
                                dtype=np.float32), 0, 1)
        return OcclusionAsset(color=color, alpha=alpha.astype(np.float32), source=source)
    if source == "MATTE":
        # soft-edged blob with fractional alpha, mimicking matting ground truth
        hard = gen_random_shape(rng, size)
        soft = blur_mask_boundary(hard, sigma=float(rng.uniform(1.5, 4.0)))
        return OcclusionAsset(color=_texture_image(rng, size), alpha=soft, source=source)
    raise ValueError(f"unknown occlusion source {source!r}")


def load_asset_dir(root: str) -> list:
    """Load occluder assets from ``root/<source>/<stem>_color.png`` +
    ``<stem>_alpha.png`` pairs; the source tag is the subdirectory name."""
    assets = []
    for source in sorted(os.listdir(root)):
        sub = os.path.join(root, source)
        if not os.path.isdir(sub) or source not in OcclusionAsset.SOURCES:
            continue
        for name in sorted(os.listdir(sub)):
            if not name.endswith("_color.png"):
                continue
            stem = name[: -len("_color.png")]
            color = core.load_image(os.path.join(sub, name))
            alpha = core.load_alpha(os.path.join(sub, stem + "_alpha.png"))
            assets.append(OcclusionAsset(color=color, alpha=alpha, source=source))
    return assets


# ---------------------------------------------------------------------------
# Affine motion
# ---------------------------------------------------------------------------

def identity_affine() -> np.ndarray:
    return np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]], dtype=np.float64)


def make_affine(angle_deg=0.0, scale=1.0, tx=0.0, ty=0.0, center=(0.0, 0.0)) -> np.ndarray:
    mat = cv2.getRotationMatrix2D(center, angle_deg, scale)
    mat[0, 2] += tx
    mat[1, 2] += ty
    return mat


def interp_affine(a0: np.ndarray, a1: np.ndarray, t: int, clip_len: int) -> np.ndarray:
    """Entrywise linear interpolation between two 2x3 affines at frame t of T."""
    if clip_len < 1 or not 0 <= t < clip_len:
        raise ValueError("need 0 <= t < clip_len, clip_len >= 1")
    weight = 0.0 if clip_len == 1 else t / (clip_len - 1)
    return (1.0 - weight) * np.asarray(a0, dtype=np.float64) + weight * np.asarray(a1, dtype=np.float64)


def sample_affine_pair(rng: np.random.Generator, size: int, cfg: SynthConfig):
    """Two random affine endpoints; motion magnitude scales with clip length."""
    mag = cfg.motion_scale * min(1.0, cfg.clip_len / cfg.motion_ref_len)
    center = (size / 2.0, size / 2.0)

    def one():
        return make_affine(
            angle_deg=float(rng.uniform(-15.0, 15.0)) * mag,
            scale=float(rng.uniform(1.0 - 0.1 * mag, 1.0 + 0.1 * mag)),
            tx=float(rng.uniform(-0.12, 0.12)) * size * mag,
            ty=float(rng.uniform(-0.12, 0.12)) * size * mag,
            center=center,
        )

    return one(), one()


def warp_color(img: np.ndarray, mat: np.ndarray, size) -> np.ndarray:
    h, w = size
    out = cv2.warpAffine(img, mat, (w, h), flags=cv2.INTER_LINEAR,
                         borderMode=cv2.BORDER_REPLICATE)
    return np.clip(out, 0.0, 1.0).astype(np.float32)


def warp_alpha(alpha: np.ndarray, mat: np.ndarray, size) -> np.ndarray:
    h, w = size
    out = cv2.warpAffine(alpha, mat, (w, h), flags=cv2.INTER_LINEAR,
                         borderMode=cv2.BORDER_CONSTANT, borderValue=0.0)
    return np.clip(out, 0.0, 1.0).astype(np.float32)


# ---------------------------------------------------------------------------
# Occluder placement
# ---------------------------------------------------------------------------

def place_occlusion(asset: OcclusionAsset, canvas_size, rng: np.random.Generator,
                    cfg: SynthConfig):
    """Augment an asset (scale/rotate/flip/jitter) and paste it at a random
    position onto a transparent canvas. Returns (color, alpha) layers.

    The placed alpha must cover between cfg.min_cover and cfg.max_cover of the
    canvas; retries with smaller scales, then rejects.
    """
    h, w = canvas_size
    color, alpha = asset.color, asset.alpha
    if asset.source == "HARD_MASK":
        alpha = blur_mask_boundary(alpha, cfg.blur_sigma)
    if rng.random() < cfg.flip_prob:
        color, alpha = color[:, ::-1].copy(), alpha[:, ::-1].copy()

    # brightness/contrast jitter
    gain = 1.0 + rng.uniform(-cfg.jitter, cfg.jitter)
    bias = rng.uniform(-cfg.jitter, cfg.jitter)
    color = np.clip(color * gain + bias, 0.0, 1.0).astype(np.float32)

    scale_hi = cfg.scale_max
    for attempt in range(20):
        scale = rng.uniform(cfg.scale_min, scale_hi) * min(h, w) / max(alpha.shape)
        angle = rng.uniform(-cfg.rotation_max_deg, cfg.rotation_max_deg)
        ah, aw = alpha.shape
        mat = cv2.getRotationMatrix2D((aw / 2.0, ah / 2.0), angle, scale)
        tx = rng.uniform(0.15, 0.85) * w - aw / 2.0
        ty = rng.uniform(0.15, 0.85) * h - ah / 2.0
        mat[0, 2] += tx
        mat[1, 2] += ty
        placed_alpha = warp_alpha(alpha, mat, (h, w))
        cover = float(placed_alpha.sum()) / (h * w)
        if cfg.min_cover <= cover <= cfg.max_cover:
            placed_color = cv2.warpAffine(color, mat, (w, h), flags=cv2.INTER_LINEAR,
                                          borderMode=cv2.BORDER_CONSTANT, borderValue=0.0)
            placed_color = np.clip(placed_color, 0.0, 1.0).astype(np.float32)
            return placed_color, placed_alpha
        if cover > cfg.max_cover:
            scale_hi = max(cfg.scale_min, scale_hi * 0.8)
    raise ClipRejected("occluder placement failed to satisfy coverage bounds")


# ---------------------------------------------------------------------------
# Trimap construction
# ---------------------------------------------------------------------------

def gen_trimap(alpha_gt: np.ndarray, erode_r: int, dilate_r: int) -> np.ndarray:
    """Trimap from ground-truth alpha: FG/BG only where the near-binary
    regions survive erosion; everything else is UNKNOWN.

    By construction every pixel with 0.01 < alpha < 0.99 is UNKNOWN, and the
    UNKNOWN band covers the dilation of the fractional region.
    """
    alpha_gt = as_alpha(alpha_gt)
    if erode_r < 1 or dilate_r < 1:
        raise ValueError("trimap radii must be >= 1")
    fg = (alpha_gt >= 0.99).astype(np.uint8)
    bg = (alpha_gt <= 0.01).astype(np.uint8)
    k_er = cv2.getStructuringElement(cv2.MORPH_ELLIPSE, (2 * erode_r + 1, 2 * erode_r + 1))
    fg = cv2.erode(fg, k_er)
    bg = cv2.erode(bg, k_er)
    # keep FG/BG clear of the dilated fractional band
    frac = ((alpha_gt > 0.01) & (alpha_gt < 0.99)).astype(np.uint8)
    if frac.any():
        k_dil = cv2.getStructuringElement(cv2.MORPH_ELLIPSE,
                                          (2 * dilate_r + 1, 2 * dilate_r + 1))
        band = cv2.dilate(frac, k_dil)
        fg = fg & (1 - band)
        bg = bg & (1 - band)
    trimap = np.full(alpha_gt.shape, TRIMAP_UNKNOWN, dtype=np.uint8)
    trimap[fg == 1] = TRIMAP_FG
    trimap[bg == 1] = TRIMAP_BG
    return trimap


# ---------------------------------------------------------------------------
# Clip animation and dataset synthesis
# ---------------------------------------------------------------------------

def animate_clip(face, skin_mask, occ_color, occ_alpha, a0, a1, clip_len,
                 target, rng, cfg: SynthConfig) -> ClipSample:
    """Animate one layer with interpolated affine motion and recomposite per frame.

    target is "FACE" or "OCCLUDER"; the selected layer is warped by the
    interpolated transform, with random pauses repeating the previous one.
    """
    if target not in ("FACE", "OCCLUDER"):
        raise ValueError("target must be FACE or OCCLUDER")
    size = skin_mask.shape
    frames, alphas, trimaps = [], [], []
    cur = interp_affine(a0, a1, 0, clip_len)
    for t in range(clip_len):
        if t > 0:
            if rng.random() >= cfg.pause_prob:  # pause keeps the previous transform
                cur = interp_affine(a0, a1, t, clip_len)
        if target == "FACE":
            face_t = warp_color(face, cur, size)
            skin_t = warp_alpha(skin_mask, cur, size)
            occ_c_t, occ_a_t = occ_color, occ_alpha
        else:
            face_t, skin_t = face, skin_mask
            occ_c_t = warp_alpha_stack(occ_color, cur, size)
            occ_a_t = warp_alpha(occ_alpha, cur, size)
        if float(skin_t.sum()) < 16.0:
            raise ClipRejected("face warped off canvas")
        frame = composite_pixelwise(occ_c_t, face_t, occ_a_t)
        alpha_gt = make_face_alpha(skin_t, occ_a_t)
        frames.append(frame)
        alphas.append(alpha_gt)
        trimaps.append(gen_trimap(alpha_gt, cfg.erode_r, cfg.dilate_r))
    return ClipSample(frames=tuple(frames), alphas=tuple(alphas),
                      trimaps=tuple(trimaps), meta={"target": target})


def warp_alpha_stack(img: np.ndarray, mat: np.ndarray, size) -> np.ndarray:
    """Warp an occluder color layer with zero padding (absent outside canvas)."""
    h, w = size
    out = cv2.warpAffine(img, mat, (w, h), flags=cv2.INTER_LINEAR,
                         borderMode=cv2.BORDER_CONSTANT, borderValue=0.0)
    return np.clip(out, 0.0, 1.0).astype(np.float32)


def synth_clip(cfg: SynthConfig, index: int, split: str, assets=None):
    """Generate one clip deterministically from (cfg, split, index).

    The face layer depends only on (seed, "face", index), and the occluder
    on (seed, "occ", index); whether the clip is occluded is decided by the
    caller, so ratio changes never alter a sample's face layer.
    Returns (ClipSample, source_tag, occluded_flag closure inputs).
    """
    base_seed = cfg.seed if split == "train" else cfg.test_seed
    face_rng = substream(base_seed, "face", split, index)
    occ_rng = substream(base_seed, "occ", split, index)
    motion_rng = substream(base_seed, "motion", split, index)

    face, skin = gen_procedural_face(face_rng, cfg.size)

    n_total = cfg.num_clips if split == "train" else cfg.num_test_clips
    occluded = index < round(cfg.occlusion_ratio * n_total)

    size = (cfg.size, cfg.size)
    if occluded:
        if not cfg.sources:
            raise ValueError("no occlusion sources enabled")
        source = cfg.sources[int(occ_rng.integers(0, len(cfg.sources)))]
        for _ in range(8):
            try:
                if assets:
                    pool = [a for a in assets if a.source == source]
                    if not pool:
                        raise ValueError(f"asset pool for enabled source {source!r} is empty")
                    asset = pool[int(occ_rng.integers(0, len(pool)))]
                else:
                    asset = gen_procedural_asset(occ_rng, source)
                occ_color, occ_alpha = place_occlusion(asset, size, occ_rng, cfg)
                break
            except ClipRejected:
                continue
        else:
            raise ClipRejected(f"could not place occluder for clip {index}")
    else:
        source = "NONE"
        occ_color = np.zeros((cfg.size, cfg.size, 3), dtype=np.float32)
        occ_alpha = np.zeros((cfg.size, cfg.size), dtype=np.float32)

    target = "OCCLUDER" if (occluded and motion_rng.random() < 0.5) else "FACE"
    for _ in range(8):
        a0, a1 = sample_affine_pair(motion_rng, cfg.size, cfg)
        try:
            clip = animate_clip(face, skin, occ_color, occ_alpha, a0, a1,
                                cfg.clip_len, target, motion_rng, cfg)
            break
        except ClipRejected:
            continue
    else:
        raise ClipRejected(f"could not animate clip {index}")
    clip.meta.update({"source": source, "index": index, "split": split,
                      "seed": base_seed, "ratio": cfg.occlusion_ratio})
    return clip, source


def synth_dataset(cfg: SynthConfig, out_dir: str, assets=None, workers: int = 1):
    """Write a full dataset (train + test clips) and return its manifest records.

    Layout: ``out_dir/<split>/<sample_id>/{frame,alpha,trimap}_###.png`` plus
    ``out_dir/manifest.jsonl``.
    """
    os.makedirs(out_dir, exist_ok=True)
    jobs = [("train", i) for i in range(cfg.num_clips)] + \
           [("test", i) for i in range(cfg.num_test_clips)]

    if workers > 1:
        import concurrent.futures as futures

        with futures.ProcessPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(_synth_one_job,
                                    [(cfg, split, i, out_dir, assets) for split, i in jobs]))
    else:
        records = [_synth_one_job((cfg, split, i, out_dir, assets)) for split, i in jobs]

    manifest_path = os.path.join(out_dir, "manifest.jsonl")
    core.save_manifest(manifest_path, records)
    cfg.save(os.path.join(out_dir, "synth_config.txt"))
    return records


def _synth_one_job(args):
    cfg, split, index, out_dir, assets = args
    clip, source = synth_clip(cfg, index, split, assets=assets)
    sample_id = f"{split}_{index:04d}"
    clip_dir = os.path.join(out_dir, split, sample_id)
    os.makedirs(clip_dir, exist_ok=True)
    frames, alphas, trimaps = [], [], []
    for t in range(len(clip.frames)):
        fp = os.path.join(split, sample_id, f"frame_{t:03d}.png")
        ap = os.path.join(split, sample_id, f"alpha_{t:03d}.png")
        tp = os.path.join(split, sample_id, f"trimap_{t:03d}.png")
        core.save_image(os.path.join(out_dir, fp), clip.frames[t])
        core.save_alpha(os.path.join(out_dir, ap), clip.alphas[t])
        core.save_trimap(os.path.join(out_dir, tp), clip.trimaps[t])
        frames.append(fp)
        alphas.append(ap)
        trimaps.append(tp)
    base_seed = cfg.seed if split == "train" else cfg.test_seed
    return ManifestRecord(sample_id=sample_id, split=split, source=source,
                          seed=base_seed, frames=tuple(frames),
                          alphas=tuple(alphas), trimaps=tuple(trimaps))
