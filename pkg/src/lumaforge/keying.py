"""Foreground/background separation for black-screen and green-screen frames.

Two modes share one result shape: luminance keying thresholds per-pixel
brightness (the black-screen path), chroma keying carves out a hue cone
around the key color in HSV space (the green-screen path). Both feed the
same refinement and frame-quality gate.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .imgcore import (
    BBox,
    BitMask,
    ImageRGB8,
    fill_holes,
    largest_component,
    luminance_image,
    mask_to_bbox,
)

__all__ = [
    "AUTO_THRESHOLD",
    "KeySpec",
    "SegmentationResult",
    "auto_threshold",
    "luminance_mask",
    "chroma_foreground_mask",
    "refine_mask",
    "segment_luminance",
    "segment_chroma",
    "accept_frame",
]

AUTO_THRESHOLD = "auto"

# Fallback documented for manual runs against a light-absorbing backdrop.
DEFAULT_MANUAL_THRESHOLD = 40


@dataclass(frozen=True)
class KeySpec:
    """Keying parameters for one recording setup.

    Luminance mode uses only `threshold` (an int in [0, 255] or "auto" for
    Otsu selection); chroma mode uses only the hue/saturation/value fields.
    """

    mode: str
    threshold: int | str = AUTO_THRESHOLD
    key_hue: float = 120.0
    hue_tolerance: float = 30.0
    min_saturation: float = 0.15
    min_value: float = 0.15

    def __post_init__(self) -> None:
        if self.mode not in ("luminance", "chroma"):
            raise ValueError(f"mode must be 'luminance' or 'chroma', got {self.mode!r}")
        if self.threshold != AUTO_THRESHOLD:
            if not isinstance(self.threshold, int) or not 0 <= self.threshold <= 255:
                raise ValueError(f"threshold must be 'auto' or an int in [0, 255], got {self.threshold!r}")
        if not 0.0 <= self.key_hue < 360.0:
            raise ValueError(f"key_hue must be in [0, 360), got {self.key_hue}")
        if not 0.0 < self.hue_tolerance <= 90.0:
            raise ValueError(f"hue_tolerance must be in (0, 90], got {self.hue_tolerance}")
        for name in ("min_saturation", "min_value"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {v}")


@dataclass(frozen=True)
class SegmentationResult:
    """Refined mask plus the facts the frame gate needs."""

    mask: BitMask
    bbox: BBox | None
    area: int
    touches_border: bool
    threshold_used: int | None


def auto_threshold(img: ImageRGB8) -> int:
    """Otsu's threshold over the 256-bin luma histogram.

    Returns the smallest t maximizing between-class variance for the split
    {luma < t} vs {luma >= t}. A constant image yields its value + 1, which
    makes the foreground empty. All comparisons run in exact integer
    arithmetic, so the argmax is identical on every platform.
    """
    luma = luminance_image(img)
    hist = np.bincount(luma.ravel(), minlength=256)
    total = int(hist.sum())
    csum = np.cumsum(hist)
    cmoment = np.cumsum(hist * np.arange(256, dtype=np.int64))
    grand = int(cmoment[255])

    best_t = None
    best_num = best_den = 1
    for t in range(1, 256):
        n0 = int(csum[t - 1])
        n1 = total - n0
        if n0 == 0 or n1 == 0:
            continue
        s0 = int(cmoment[t - 1])
        diff = s0 * n1 - (grand - s0) * n0
        num = diff * diff
        den = n0 * n1
        # between-class variance comparison as an exact cross-multiplication
        if best_t is None or num * best_den > best_num * den:
            best_t, best_num, best_den = t, num, den
    if best_t is None:
        return int(luma.flat[0]) + 1
    return best_t


def luminance_mask(img: ImageRGB8, threshold: int) -> BitMask:
    """Raw pre-refinement brightness mask: pixels with luma >= threshold."""
    return BitMask(luminance_image(img) >= threshold)


def _rgb_to_hsv(px: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vectorized RGB -> (hue degrees [0,360), saturation [0,1], value [0,1])."""
    f = px.astype(np.float64) / 255.0
    r, g, b = f[..., 0], f[..., 1], f[..., 2]
    mx = f.max(axis=-1)
    delta = mx - f.min(axis=-1)

    hue = np.zeros_like(mx)
    nz = delta > 0
    safe = np.where(nz, delta, 1.0)
    rmax = nz & (mx == r)
    gmax = nz & (mx == g) & ~rmax
    bmax = nz & ~rmax & ~gmax
    hue[rmax] = ((g - b)[rmax] / safe[rmax]) % 6.0
    hue[gmax] = (b - r)[gmax] / safe[gmax] + 2.0
    hue[bmax] = (r - g)[bmax] / safe[bmax] + 4.0
    hue *= 60.0

    sat = np.where(mx > 0, delta / np.where(mx > 0, mx, 1.0), 0.0)
    return hue, sat, mx


def chroma_foreground_mask(img: ImageRGB8, spec: KeySpec) -> BitMask:
    """Raw pre-refinement foreground: everything outside the key-color cone.

    A pixel belongs to the background when its hue lies within
    `hue_tolerance` of `key_hue` (circularly) and both saturation and value
    clear their floors; desaturated or dark pixels never match the key.
    """
    hue, sat, val = _rgb_to_hsv(img.pixels)
    d = np.abs(hue - spec.key_hue)
    d = np.minimum(d, 360.0 - d)
    background = (d <= spec.hue_tolerance) & (sat >= spec.min_saturation) & (val >= spec.min_value)
    return BitMask(~background)


def refine_mask(raw: BitMask, connectivity: int = 8) -> BitMask:
    """Keep the biggest blob and close its interior holes."""
    return fill_holes(largest_component(raw, connectivity))


def _touches_border(bits: np.ndarray, margin: int) -> bool:
    # A pixel "touches" when its distance to the nearest edge is < margin,
    # so margin 0 never triggers.
    if margin <= 0:
        return False
    return bool(
        bits[:margin, :].any()
        or bits[-margin:, :].any()
        or bits[:, :margin].any()
        or bits[:, -margin:].any()
    )


def _build_result(mask: BitMask, margin: int, threshold_used: int | None) -> SegmentationResult:
    return SegmentationResult(
        mask=mask,
        bbox=mask_to_bbox(mask),
        area=mask.area,
        touches_border=_touches_border(mask.bits, margin),
        threshold_used=threshold_used,
    )


def segment_luminance(img: ImageRGB8, spec: KeySpec, margin: int = 2) -> SegmentationResult:
    """Segment one black-screen frame.

    Thresholds luma at `spec.threshold` (Otsu-selected when "auto"), then
    refines. An empty mask is a valid result with area 0.
    """
    if spec.mode != "luminance":
        raise ValueError(f"segment_luminance needs a luminance KeySpec, got mode {spec.mode!r}")
    t = auto_threshold(img) if spec.threshold == AUTO_THRESHOLD else int(spec.threshold)
    refined = refine_mask(luminance_mask(img, t))
    return _build_result(refined, margin, t)


def segment_chroma(img: ImageRGB8, spec: KeySpec, margin: int = 2) -> SegmentationResult:
    """Segment one green-screen frame via the HSV hue-cone test."""
    if spec.mode != "chroma":
        raise ValueError(f"segment_chroma needs a chroma KeySpec, got mode {spec.mode!r}")
    refined = refine_mask(chroma_foreground_mask(img, spec))
    return _build_result(refined, margin, None)


def accept_frame(result: SegmentationResult, min_area: int) -> bool:
    """Frame-quality gate: big enough and clear of the image border."""
    return result.area >= min_area and not result.touches_border
