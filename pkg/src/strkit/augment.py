"""Training-time image augmentations.

Three simple augmentations for supervised training (Gaussian blur,
high-ratio edge cropping, rotation) plus the two-view pipeline used by
the contrastive pretext task (resized crop, grayscale, color jitter,
horizontal flip). All functions operate on uint8 numpy rasters of shape
(H, W) or (H, W, C) and preserve the input dimensions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import cv2
import numpy as np

KIND_BLUR = "blur"
KIND_CROP = "crop"
KIND_ROT = "rot"


@dataclass(frozen=True)
class AugmentPolicy:
    """Maximum intensities; 0 disables blur/rot, 100 disables crop.

    Per view, blur radius is drawn uniformly in [0, blur_max_radius],
    the rotation angle uniformly in [-rot_max_deg, +rot_max_deg], and
    the crop keeps per-axis fractions drawn in [crop_min_pct, 100].
    """

    blur_max_radius: float = 0.0
    crop_min_pct: float = 100.0
    rot_max_deg: float = 0.0

    def __post_init__(self):
        if self.blur_max_radius < 0:
            raise ValueError("blur_max_radius must be >= 0")
        if not 0.0 < self.crop_min_pct <= 100.0:
            raise ValueError("crop_min_pct must be in (0, 100]")
        if self.rot_max_deg < 0:
            raise ValueError("rot_max_deg must be >= 0")


# Best single settings found for each architecture family.
PRESETS: dict[str, AugmentPolicy] = {
    "crnn-best": AugmentPolicy(blur_max_radius=0.0, crop_min_pct=90.0, rot_max_deg=15.0),
    "trba-best": AugmentPolicy(blur_max_radius=5.0, crop_min_pct=99.0, rot_max_deg=0.0),
    "none": AugmentPolicy(),
}


def _blur(image: np.ndarray, radius: float) -> np.ndarray:
    if radius == 0:
        return image.copy()
    ksize = 2 * int(math.ceil(3.0 * radius)) + 1
    return cv2.GaussianBlur(image, (ksize, ksize), sigmaX=radius, borderType=cv2.BORDER_REPLICATE)


def _crop(image: np.ndarray, min_pct: float, rng: np.random.Generator) -> np.ndarray:
    h, w = image.shape[:2]
    keep_w = rng.uniform(min_pct, 100.0) / 100.0
    keep_h = rng.uniform(min_pct, 100.0) / 100.0
    new_w = max(1, round(w * keep_w))
    new_h = max(1, round(h * keep_h))
    if new_w == w and new_h == h:
        return image.copy()
    x0 = int(rng.integers(0, w - new_w + 1))
    y0 = int(rng.integers(0, h - new_h + 1))
    window = image[y0 : y0 + new_h, x0 : x0 + new_w]
    return cv2.resize(window, (w, h), interpolation=cv2.INTER_LINEAR)


def _rotate(image: np.ndarray, angle: float) -> np.ndarray:
    if angle == 0:
        return image.copy()
    h, w = image.shape[:2]
    center = ((w - 1) / 2.0, (h - 1) / 2.0)
    matrix = cv2.getRotationMatrix2D(center, angle, 1.0)
    return cv2.warpAffine(
        image,
        matrix,
        (w, h),
        flags=cv2.INTER_LINEAR,
        borderMode=cv2.BORDER_REPLICATE,
    )


def apply_augmentation(
    image: np.ndarray,
    kind: str,
    strength: float,
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """Apply one augmentation at the given strength.

    blur: Gaussian blur with kernel radius ``strength`` pixels (0 is a
    bit-exact identity). crop: retain a randomly placed window of at
    least ``strength`` percent of each axis and resize back (100 is a
    bit-exact identity; needs ``rng``). rot: rotate by ``strength``
    degrees (signed) about the center with border replication.
    """
    if kind == KIND_BLUR:
        if strength < 0:
            raise ValueError(f"blur radius must be >= 0, got {strength}")
        return _blur(image, strength)
    if kind == KIND_CROP:
        if not 0.0 < strength <= 100.0:
            raise ValueError(f"crop percentage must be in (0, 100], got {strength}")
        if strength == 100.0:
            return image.copy()
        if rng is None:
            rng = np.random.default_rng()
        return _crop(image, strength, rng)
    if kind == KIND_ROT:
        if not -360.0 <= strength <= 360.0:
            raise ValueError(f"rotation angle must be within +/-360, got {strength}")
        return _rotate(image, strength)
    raise ValueError(f"unknown augmentation kind {kind!r}")


def sample_view(
    image: np.ndarray, policy: AugmentPolicy, rng: np.random.Generator | None = None
) -> np.ndarray:
    """One random view: rotation, then crop, then blur.

    Each enabled augmentation draws its own strength from ``rng``; two
    calls with independent draws realize the two views used by
    consistency training.
    """
    if rng is None:
        rng = np.random.default_rng()
    out = image
    if policy.rot_max_deg > 0:
        angle = rng.uniform(-policy.rot_max_deg, policy.rot_max_deg)
        out = _rotate(out, angle)
    if policy.crop_min_pct < 100.0:
        out = _crop(out, policy.crop_min_pct, rng)
    if policy.blur_max_radius > 0:
        radius = rng.uniform(0.0, policy.blur_max_radius)
        out = _blur(out, radius)
    if out is image:
        out = image.copy()
    return out


@dataclass(frozen=True)
class ContrastivePolicy:
    """Two-view pipeline for instance discrimination pretraining.

    Output views are always resized to (out_h, out_w). Jitter strengths
    follow the usual contrastive defaults; on grayscale inputs the
    saturation component is a no-op.
    """

    crop_scale: tuple[float, float] = (0.2, 1.0)
    grayscale_prob: float = 0.2
    brightness: float = 0.4
    contrast: float = 0.4
    flip_prob: float = 0.5
    out_h: int = 32
    out_w: int = 100

    def __post_init__(self):
        lo, hi = self.crop_scale
        if not 0.0 < lo <= hi <= 1.0:
            raise ValueError(f"invalid crop_scale {self.crop_scale}")
        for name in ("grayscale_prob", "flip_prob"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"{name} must be in [0, 1]")


def _resized_crop(image: np.ndarray, policy: ContrastivePolicy, rng: np.random.Generator):
    h, w = image.shape[:2]
    scale = rng.uniform(*policy.crop_scale)
    new_h = max(1, round(h * math.sqrt(scale)))
    new_w = max(1, round(w * math.sqrt(scale)))
    y0 = int(rng.integers(0, h - new_h + 1))
    x0 = int(rng.integers(0, w - new_w + 1))
    window = image[y0 : y0 + new_h, x0 : x0 + new_w]
    if window.shape[:2] == (policy.out_h, policy.out_w):
        return window.copy()
    return cv2.resize(window, (policy.out_w, policy.out_h), interpolation=cv2.INTER_LINEAR)


def _jitter(image: np.ndarray, policy: ContrastivePolicy, rng: np.random.Generator):
    out = image.astype(np.float32)
    if policy.brightness > 0:
        out *= rng.uniform(1.0 - policy.brightness, 1.0 + policy.brightness)
    if policy.contrast > 0:
        factor = rng.uniform(1.0 - policy.contrast, 1.0 + policy.contrast)
        out = (out - out.mean()) * factor + out.mean()
    return np.clip(out, 0, 255).astype(np.uint8)


def _to_gray(image: np.ndarray) -> np.ndarray:
    if image.ndim == 2:
        return image.copy()
    gray = cv2.cvtColor(image, cv2.COLOR_BGR2GRAY)
    return np.repeat(gray[:, :, None], image.shape[2], axis=2)


def _one_contrastive_view(image, policy, rng):
    out = _resized_crop(image, policy, rng)
    if policy.brightness > 0 or policy.contrast > 0:
        out = _jitter(out, policy, rng)
    if rng.random() < policy.grayscale_prob:
        out = _to_gray(out)
    if rng.random() < policy.flip_prob:
        out = out[:, ::-1].copy()
    return out


def contrastive_views(
    image: np.ndarray, policy: ContrastivePolicy, rng: np.random.Generator | None = None
) -> tuple[np.ndarray, np.ndarray]:
    """Two independent random views of one image, both (out_h, out_w)."""
    if rng is None:
        rng = np.random.default_rng()
    return _one_contrastive_view(image, policy, rng), _one_contrastive_view(image, policy, rng)
