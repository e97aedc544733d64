"""Harvest object crops from per-class frame directories.

Input is an image sequence (one directory per recorded object), not a video
container: decode clips externally first, e.g.
``ffmpeg -i clip.mp4 frames/%05d.png``. Frames are visited in lexicographic
name order so a harvest is byte-reproducible on any filesystem.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from .imgcore import (
    BBox,
    BitMask,
    ImageRGB8,
    read_image,
    read_mask_png,
    write_mask_png,
    write_png,
)
from .keying import KeySpec, accept_frame, segment_chroma, segment_luminance

__all__ = [
    "RASTER_EXTENSIONS",
    "MANIFEST_NAME",
    "HarvestConfig",
    "CropRecord",
    "HarvestReport",
    "EmptyHarvestError",
    "LibraryError",
    "harvest_directory",
    "save_library",
    "load_library",
]

RASTER_EXTENSIONS = (".png", ".jpg", ".jpeg")
MANIFEST_NAME = "library.json"
MANIFEST_VERSION = 1


@dataclass(frozen=True)
class HarvestConfig:
    """Knobs for one harvest run.

    min_area of None selects 0.1% of each frame's pixel count, which rejects
    noise frames without a hard-coded absolute number.
    """

    key: KeySpec
    frame_stride: int = 5
    margin: int = 2
    min_area: int | None = None
    crop_padding: int = 4

    def __post_init__(self) -> None:
        if self.frame_stride < 1:
            raise ValueError(f"frame_stride must be >= 1, got {self.frame_stride}")
        if self.margin < 0:
            raise ValueError(f"margin must be >= 0, got {self.margin}")
        if self.crop_padding < 0:
            raise ValueError(f"crop_padding must be >= 0, got {self.crop_padding}")
        if self.min_area is not None and self.min_area < 0:
            raise ValueError(f"min_area must be >= 0, got {self.min_area}")


@dataclass(frozen=True, eq=False)
class CropRecord:
    """One harvested object: color patch, mask, category, and provenance.

    source_bbox is the padded crop rectangle in frame coordinates, so
    pasting the mask back at that rectangle reproduces the frame mask.
    """

    category_id: int
    patch: ImageRGB8
    mask: BitMask
    source: str
    source_bbox: BBox

    def __post_init__(self) -> None:
        if self.category_id < 1:
            raise ValueError(f"category_id must be >= 1, got {self.category_id}")
        if (self.patch.height, self.patch.width) != (self.mask.height, self.mask.width):
            raise ValueError(
                f"patch {self.patch.width}x{self.patch.height} and "
                f"mask {self.mask.width}x{self.mask.height} dimensions differ"
            )
        if self.mask.area == 0:
            raise ValueError("crop mask is empty")

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, CropRecord):
            return NotImplemented
        return (
            self.category_id == other.category_id
            and self.patch == other.patch
            and self.mask == other.mask
            and self.source == other.source
            and self.source_bbox == other.source_bbox
        )

    __hash__ = None


@dataclass(frozen=True)
class HarvestReport:
    sampled: int
    accepted: int
    rejected_border: int
    rejected_area: int


class EmptyHarvestError(RuntimeError):
    """Raised when no frame survives the quality gate; carries the report."""

    def __init__(self, report: HarvestReport):
        super().__init__(
            f"no frame accepted ({report.sampled} sampled, "
            f"{report.rejected_area} too small, {report.rejected_border} on the border); "
            "check the recording or the keying threshold"
        )
        self.report = report


class LibraryError(ValueError):
    """A crop library on disk does not match its manifest."""


def _auto_min_area(width: int, height: int) -> int:
    return max(1, (width * height) // 1000)


def _segment(img: ImageRGB8, cfg: HarvestConfig):
    if cfg.key.mode == "luminance":
        return segment_luminance(img, cfg.key, cfg.margin)
    return segment_chroma(img, cfg.key, cfg.margin)


def _crop_record(img: ImageRGB8, result, category_id: int, source: str, padding: int) -> CropRecord:
    box = result.bbox
    x0 = max(0, box.x - padding)
    y0 = max(0, box.y - padding)
    x1 = min(img.width, box.x + box.w + padding)
    y1 = min(img.height, box.y + box.h + padding)
    return CropRecord(
        category_id=category_id,
        patch=ImageRGB8(img.pixels[y0:y1, x0:x1]),
        mask=BitMask(result.mask.bits[y0:y1, x0:x1]),
        source=source,
        source_bbox=BBox(x0, y0, x1 - x0, y1 - y0),
    )


def harvest_directory(
    directory: str | Path, category_id: int, cfg: HarvestConfig
) -> tuple[list[CropRecord], HarvestReport]:
    """Harvest every frame_stride-th frame of one object's directory.

    Frames failing the size gate count as rejected_area, frames touching
    the border as rejected_border. Raises FileNotFoundError when the
    directory is missing or holds no raster files, EmptyHarvestError when
    every sampled frame is rejected.
    """
    d = Path(directory)
    if not d.is_dir():
        raise FileNotFoundError(f"not a directory: {d}")
    frames = sorted(p.name for p in d.iterdir() if p.suffix.lower() in RASTER_EXTENSIONS)
    if not frames:
        raise FileNotFoundError(f"no raster files (png/jpg) in {d}")

    sampled = frames[:: cfg.frame_stride]
    crops: list[CropRecord] = []
    rejected_border = rejected_area = 0
    for name in sampled:
        img = read_image(d / name)
        min_area = cfg.min_area if cfg.min_area is not None else _auto_min_area(img.width, img.height)
        result = _segment(img, cfg)
        if result.area < min_area:
            rejected_area += 1
            continue
        if result.touches_border:
            rejected_border += 1
            continue
        assert accept_frame(result, min_area)
        crops.append(_crop_record(img, result, category_id, name, cfg.crop_padding))

    report = HarvestReport(len(sampled), len(crops), rejected_border, rejected_area)
    if not crops:
        raise EmptyHarvestError(report)
    return crops, report


def save_library(crops: list[CropRecord], directory: str | Path) -> None:
    """Store crops as paired lossless PNGs plus one JSON manifest."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    records = []
    for i, crop in enumerate(crops):
        patch_file = f"crop_{i:06d}.png"
        mask_file = f"mask_{i:06d}.png"
        write_png(crop.patch, d / patch_file)
        write_mask_png(crop.mask, d / mask_file)
        records.append(
            {
                "category_id": crop.category_id,
                "patch_file": patch_file,
                "mask_file": mask_file,
                "source": crop.source,
                "source_bbox": list(crop.source_bbox.as_xywh()),
            }
        )
    manifest = {"version": MANIFEST_VERSION, "records": records}
    (d / MANIFEST_NAME).write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")


def load_library(directory: str | Path) -> list[CropRecord]:
    """Load a saved crop library; save -> load round-trips bit-exactly."""
    d = Path(directory)
    manifest_path = d / MANIFEST_NAME
    if not manifest_path.is_file():
        raise LibraryError(f"missing manifest {manifest_path}")
    manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    if manifest.get("version") != MANIFEST_VERSION:
        raise LibraryError(f"unsupported library version {manifest.get('version')!r}")

    crops: list[CropRecord] = []
    for i, rec in enumerate(manifest.get("records", [])):
        for key in ("patch_file", "mask_file"):
            name = rec.get(key)
            if not name or not (d / name).is_file():
                raise LibraryError(f"record {i}: missing {key} {name!r}")
        try:
            crops.append(
                CropRecord(
                    category_id=rec["category_id"],
                    patch=read_image(d / rec["patch_file"]),
                    mask=read_mask_png(d / rec["mask_file"]),
                    source=rec["source"],
                    source_bbox=BBox(*rec["source_bbox"]),
                )
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise LibraryError(f"record {i}: {exc}") from exc
    return crops
