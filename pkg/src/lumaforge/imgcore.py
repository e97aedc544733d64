"""Core raster types and pixel-level algorithms.

Images are strictly 8-bit RGB; anything deeper is rejected at ingest. All
types are immutable after construction and every operation is a pure
function, so values can be shared freely across worker threads.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image
from scipy import ndimage

__all__ = [
    "ImageRGB8",
    "BitMask",
    "BBox",
    "AffineParams",
    "luminance",
    "luminance_image",
    "connected_components",
    "largest_component",
    "erode",
    "fill_holes",
    "mask_to_bbox",
    "mask_iou",
    "read_image",
    "write_png",
    "read_mask_png",
    "write_mask_png",
]

# Rec. 709 luma weights scaled by 10^4: keeps the rounding below in exact
# integer arithmetic, identical on every platform.
_WR, _WG, _WB = 2126, 7152, 722

_STRUCT_4 = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=bool)
_STRUCT_8 = np.ones((3, 3), dtype=bool)


@dataclass(frozen=True, eq=False)
class ImageRGB8:
    """Immutable row-major 8-bit RGB image, shape (height, width, 3)."""

    pixels: np.ndarray

    def __post_init__(self) -> None:
        px = np.asarray(self.pixels)
        if px.dtype != np.uint8:
            raise ValueError(f"pixel data must be uint8, got {px.dtype}")
        if px.ndim != 3 or px.shape[2] != 3:
            raise ValueError(f"expected an (h, w, 3) array, got shape {px.shape!r}")
        if px.shape[0] < 1 or px.shape[1] < 1:
            raise ValueError("image must be at least 1x1")
        px = px.copy()
        px.setflags(write=False)
        object.__setattr__(self, "pixels", px)

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ImageRGB8):
            return NotImplemented
        return np.array_equal(self.pixels, other.pixels)

    __hash__ = None


@dataclass(frozen=True, eq=False)
class BitMask:
    """Immutable row-major binary mask, shape (height, width)."""

    bits: np.ndarray

    def __post_init__(self) -> None:
        b = np.asarray(self.bits)
        if b.dtype != np.bool_:
            raise ValueError(f"mask bits must be boolean, got {b.dtype}")
        if b.ndim != 2:
            raise ValueError(f"expected an (h, w) array, got shape {b.shape!r}")
        if b.shape[0] < 1 or b.shape[1] < 1:
            raise ValueError("mask must be at least 1x1")
        b = b.copy()
        b.setflags(write=False)
        object.__setattr__(self, "bits", b)

    @property
    def width(self) -> int:
        return self.bits.shape[1]

    @property
    def height(self) -> int:
        return self.bits.shape[0]

    @property
    def area(self) -> int:
        return int(np.count_nonzero(self.bits))

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, BitMask):
            return NotImplemented
        return np.array_equal(self.bits, other.bits)

    __hash__ = None


@dataclass(frozen=True)
class BBox:
    """Integer axis-aligned box: top-left corner plus extent."""

    x: int
    y: int
    w: int
    h: int

    def __post_init__(self) -> None:
        if self.x < 0 or self.y < 0:
            raise ValueError(f"box origin must be non-negative, got ({self.x}, {self.y})")
        if self.w < 1 or self.h < 1:
            raise ValueError(f"box extent must be at least 1x1, got {self.w}x{self.h}")

    def as_xywh(self) -> tuple[int, int, int, int]:
        return (self.x, self.y, self.w, self.h)


@dataclass(frozen=True)
class AffineParams:
    """Scale + rotation + translation, applied about the patch center.

    Rotation is stored normalized to [0, 360) degrees.
    """

    scale: float
    rotation: float
    tx: int = 0
    ty: int = 0

    def __post_init__(self) -> None:
        if not self.scale > 0:
            raise ValueError(f"scale must be positive, got {self.scale}")
        object.__setattr__(self, "rotation", float(self.rotation) % 360.0)


def luminance(r: int, g: int, b: int) -> int:
    """Rec. 709 luma of one 8-bit pixel, rounded half-up."""
    return min(255, max(0, (_WR * r + _WG * g + _WB * b + 5000) // 10000))


def luminance_image(img: ImageRGB8) -> np.ndarray:
    """Per-pixel luma of an image as a (h, w) uint8 array."""
    px = img.pixels.astype(np.uint32)
    luma = (_WR * px[..., 0] + _WG * px[..., 1] + _WB * px[..., 2] + 5000) // 10000
    return luma.astype(np.uint8)


def _structure(connectivity: int) -> np.ndarray:
    if connectivity == 4:
        return _STRUCT_4
    if connectivity == 8:
        return _STRUCT_8
    raise ValueError(f"connectivity must be 4 or 8, got {connectivity}")


def connected_components(mask: BitMask, connectivity: int = 8) -> np.ndarray:
    """Label foreground components of a mask.

    Returns an int32 (h, w) map with 0 for background and labels 1..K
    numbered by first encounter in raster (row-major) order, so the
    labeling is deterministic across platforms.
    """
    labels, count = ndimage.label(mask.bits, structure=_structure(connectivity))
    labels = labels.astype(np.int32, copy=False)
    if count <= 1:
        return labels
    return _relabel_raster_order(labels, count)


def _relabel_raster_order(labels: np.ndarray, count: int) -> np.ndarray:
    values, first_index = np.unique(labels.ravel(), return_index=True)
    fg = values != 0
    order = np.argsort(first_index[fg], kind="stable")
    lut = np.zeros(count + 1, dtype=np.int32)
    lut[values[fg][order]] = np.arange(1, int(fg.sum()) + 1, dtype=np.int32)
    return lut[labels]


def largest_component(mask: BitMask, connectivity: int = 8) -> BitMask:
    """Mask of the biggest component; ties go to the first in raster order."""
    labels = connected_components(mask, connectivity)
    if labels.max() == 0:
        return BitMask(np.zeros_like(mask.bits))
    counts = np.bincount(labels.ravel())[1:]
    keep = int(np.argmax(counts)) + 1  # argmax returns the first maximum
    return BitMask(labels == keep)


def _shifted(bits: np.ndarray, d: int, axis: int) -> np.ndarray:
    """bits translated so result[p] = bits[p + d] along axis, False past the edge."""
    out = np.zeros_like(bits)
    if axis == 0:
        if d > 0:
            out[:-d, :] = bits[d:, :]
        else:
            out[-d:, :] = bits[:d, :]
    else:
        if d > 0:
            out[:, :-d] = bits[:, d:]
        else:
            out[:, -d:] = bits[:, :d]
    return out


def erode(mask: BitMask, radius: int) -> BitMask:
    """Binary erosion by a (2r+1)x(2r+1) square.

    Pixels beyond the image border count as unset; radius 0 is the identity.
    The square element is separable, so this runs as two 1-D passes.
    """
    if radius < 0:
        raise ValueError(f"radius must be non-negative, got {radius}")
    if radius == 0:
        return BitMask(mask.bits)
    out = mask.bits
    for axis in (0, 1):
        acc = out.copy()
        for d in range(1, radius + 1):
            acc &= _shifted(out, d, axis)
            acc &= _shifted(out, -d, axis)
        out = acc
    return BitMask(out)


def fill_holes(mask: BitMask) -> BitMask:
    """Turn enclosed background regions into foreground.

    A background region is enclosed when no 4-connected background path
    reaches the image border.
    """
    return BitMask(ndimage.binary_fill_holes(mask.bits))


def mask_to_bbox(mask: BitMask) -> BBox | None:
    """Tight box around the set pixels, or None for an empty mask."""
    rows = np.flatnonzero(mask.bits.any(axis=1))
    if rows.size == 0:
        return None
    cols = np.flatnonzero(mask.bits.any(axis=0))
    return BBox(
        int(cols[0]),
        int(rows[0]),
        int(cols[-1] - cols[0] + 1),
        int(rows[-1] - rows[0] + 1),
    )


def mask_iou(a: BitMask, b: BitMask) -> float:
    """Intersection over union of two same-sized masks; 1.0 when both empty."""
    if a.bits.shape != b.bits.shape:
        raise ValueError(f"mask shapes differ: {a.bits.shape} vs {b.bits.shape}")
    union = int(np.count_nonzero(a.bits | b.bits))
    if union == 0:
        return 1.0
    inter = int(np.count_nonzero(a.bits & b.bits))
    return inter / union


def read_image(path: str | Path) -> ImageRGB8:
    """Read a PNG or JPEG file as RGB8. Images deeper than 8 bits are rejected."""
    with Image.open(path) as im:
        if im.mode.startswith(("I", "F")):
            raise ValueError(f"{path}: only 8-bit images are supported (mode {im.mode})")
        arr = np.asarray(im.convert("RGB"), dtype=np.uint8)
    return ImageRGB8(arr)


def write_png(img: ImageRGB8, path: str | Path) -> None:
    """Write a lossless RGB8 PNG."""
    Image.fromarray(np.array(img.pixels), mode="RGB").save(Path(path), format="PNG")


def read_mask_png(path: str | Path) -> BitMask:
    """Read a 0/255 grayscale PNG as a binary mask (threshold at 128)."""
    with Image.open(path) as im:
        if im.mode.startswith(("I", "F")):
            raise ValueError(f"{path}: only 8-bit masks are supported (mode {im.mode})")
        arr = np.asarray(im.convert("L"))
    return BitMask(arr >= 128)


def write_mask_png(mask: BitMask, path: str | Path) -> None:
    """Write a binary mask as a 0/255 grayscale PNG."""
    arr = mask.bits.astype(np.uint8) * 255
    Image.fromarray(arr, mode="L").save(Path(path), format="PNG")
