"""COCO dataset model: reader, writer, uncompressed RLE codec, validator.

The on-disk document is a single JSON object with exactly the keys
{images, annotations, categories}. Segmentations use uncompressed
integer-counts RLE over column-major pixel order, starting with a
(possibly zero-length) background run. Serialization is stable:
write(read(write(ds))) is byte-identical to write(ds).
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .imgcore import BitMask

__all__ = [
    "RleMask",
    "CocoImage",
    "CocoAnnotation",
    "CocoCategory",
    "CocoDataset",
    "ValidationReport",
    "CocoFormatError",
    "YCBV_CATEGORIES",
    "encode_rle",
    "decode_rle",
    "rle_area",
    "write_dataset",
    "read_dataset",
    "validate",
]


@dataclass(frozen=True)
class RleMask:
    """Uncompressed RLE: alternating background/foreground run lengths.

    Runs traverse pixels column-major (x outer, y inner); counts[0] is the
    leading background run and may be 0, every later run is >= 1; the run
    lengths sum to height * width.
    """

    size: tuple[int, int]  # (height, width)
    counts: tuple[int, ...]


@dataclass(frozen=True)
class CocoImage:
    id: int
    file_name: str
    width: int
    height: int


@dataclass(frozen=True)
class CocoAnnotation:
    id: int
    image_id: int
    category_id: int
    bbox: tuple[float, float, float, float]  # x, y, w, h
    area: float
    segmentation: RleMask
    iscrowd: int = 0


@dataclass(frozen=True)
class CocoCategory:
    id: int
    name: str


@dataclass(frozen=True)
class CocoDataset:
    images: tuple[CocoImage, ...]
    annotations: tuple[CocoAnnotation, ...]
    categories: tuple[CocoCategory, ...]


@dataclass(frozen=True)
class ValidationReport:
    violations: tuple[str, ...]

    @property
    def ok(self) -> bool:
        return not self.violations


class CocoFormatError(ValueError):
    """A COCO document failed structural or invariant checks."""

    def __init__(self, violations: list[str]):
        super().__init__("invalid COCO document:\n  " + "\n  ".join(violations))
        self.violations = tuple(violations)


# The 21-object YCB-V benchmark set, in its conventional id order.
YCBV_CATEGORIES: tuple[CocoCategory, ...] = tuple(
    CocoCategory(i + 1, name)
    for i, name in enumerate(
        [
            "002_master_chef_can",
            "003_cracker_box",
            "004_sugar_box",
            "005_tomato_soup_can",
            "006_mustard_bottle",
            "007_tuna_fish_can",
            "008_pudding_box",
            "009_gelatin_box",
            "010_potted_meat_can",
            "011_banana",
            "019_pitcher_base",
            "021_bleach_cleanser",
            "024_bowl",
            "025_mug",
            "035_power_drill",
            "036_wood_block",
            "037_scissors",
            "040_large_marker",
            "051_large_clamp",
            "052_extra_large_clamp",
            "061_foam_brick",
        ]
    )
)


def encode_rle(mask: BitMask) -> RleMask:
    """Run-length encode a mask over column-major pixel order."""
    flat = mask.bits.ravel(order="F")
    changes = np.flatnonzero(flat[1:] != flat[:-1]) + 1
    bounds = np.concatenate(([0], changes, [flat.size]))
    runs = np.diff(bounds).tolist()
    counts = [0] + runs if flat[0] else runs
    return RleMask(size=(mask.height, mask.width), counts=tuple(int(c) for c in counts))


def decode_rle(rle: RleMask) -> BitMask:
    """Exact inverse of encode_rle."""
    h, w = rle.size
    counts = rle.counts
    total = sum(counts)
    if total != h * w:
        raise ValueError(f"RLE counts sum to {total}, expected {h}x{w} = {h * w}")
    if any(c < 0 for c in counts):
        raise ValueError("RLE counts must be non-negative")
    values = np.zeros(len(counts), dtype=bool)
    values[1::2] = True
    flat = np.repeat(values, counts)
    return BitMask(flat.reshape((h, w), order="F"))


def rle_area(rle: RleMask) -> int:
    """Foreground pixel count: the sum of odd-position run lengths."""
    return int(sum(rle.counts[1::2]))


def _image_dict(im: CocoImage) -> dict:
    return {"id": im.id, "file_name": im.file_name, "width": im.width, "height": im.height}


def _annotation_dict(ann: CocoAnnotation) -> dict:
    return {
        "id": ann.id,
        "image_id": ann.image_id,
        "category_id": ann.category_id,
        "bbox": [float(v) for v in ann.bbox],
        "area": float(ann.area),
        "segmentation": {"size": [ann.segmentation.size[0], ann.segmentation.size[1]],
                         "counts": list(ann.segmentation.counts)},
        "iscrowd": ann.iscrowd,
    }


def write_dataset(ds: CocoDataset, path: str | Path) -> None:
    """Write the dataset as one JSON document with a stable field order."""
    doc = {
        "images": [_image_dict(im) for im in ds.images],
        "annotations": [_annotation_dict(a) for a in ds.annotations],
        "categories": [{"id": c.id, "name": c.name} for c in ds.categories],
    }
    with open(path, "w", encoding="utf-8") as fp:
        json.dump(doc, fp)
        fp.write("\n")


def _require(entry: dict, keys: tuple[str, ...], where: str, problems: list[str]) -> bool:
    ok = True
    for key in keys:
        if key not in entry:
            problems.append(f"{where}: missing key {key!r}")
            ok = False
    for key in entry:
        if key not in keys:
            problems.append(f"{where}: unknown key {key!r}")
            ok = False
    return ok


def _parse_doc(doc: object) -> tuple[CocoDataset | None, list[str]]:
    problems: list[str] = []
    if not isinstance(doc, dict):
        return None, ["top level must be a JSON object"]
    top_keys = ("images", "annotations", "categories")
    if not _require(doc, top_keys, "document", problems):
        return None, problems
    for key in top_keys:
        if not isinstance(doc[key], list):
            problems.append(f"document: {key!r} must be a list")
    if problems:
        return None, problems

    images: list[CocoImage] = []
    for i, entry in enumerate(doc["images"]):
        where = f"images[{i}]"
        if not isinstance(entry, dict) or not _require(
            entry, ("id", "file_name", "width", "height"), where, problems
        ):
            continue
        try:
            images.append(
                CocoImage(int(entry["id"]), str(entry["file_name"]), int(entry["width"]), int(entry["height"]))
            )
        except (TypeError, ValueError):
            problems.append(f"{where}: malformed field types")

    annotations: list[CocoAnnotation] = []
    ann_keys = ("id", "image_id", "category_id", "bbox", "area", "segmentation", "iscrowd")
    for i, entry in enumerate(doc["annotations"]):
        where = f"annotations[{i}]"
        if not isinstance(entry, dict) or not _require(entry, ann_keys, where, problems):
            continue
        seg = entry["segmentation"]
        if (
            not isinstance(seg, dict)
            or set(seg) != {"size", "counts"}
            or not isinstance(seg.get("size"), list)
            or len(seg["size"]) != 2
            or not isinstance(seg.get("counts"), list)
        ):
            problems.append(f"{where}: segmentation must be {{size: [h, w], counts: [...]}}")
            continue
        bbox = entry["bbox"]
        if not isinstance(bbox, list) or len(bbox) != 4:
            problems.append(f"{where}: bbox must be [x, y, w, h]")
            continue
        try:
            annotations.append(
                CocoAnnotation(
                    id=int(entry["id"]),
                    image_id=int(entry["image_id"]),
                    category_id=int(entry["category_id"]),
                    bbox=tuple(float(v) for v in bbox),
                    area=float(entry["area"]),
                    segmentation=RleMask(
                        size=(int(seg["size"][0]), int(seg["size"][1])),
                        counts=tuple(int(c) for c in seg["counts"]),
                    ),
                    iscrowd=int(entry["iscrowd"]),
                )
            )
        except (TypeError, ValueError):
            problems.append(f"{where}: malformed field types")

    categories: list[CocoCategory] = []
    for i, entry in enumerate(doc["categories"]):
        where = f"categories[{i}]"
        if not isinstance(entry, dict) or not _require(entry, ("id", "name"), where, problems):
            continue
        try:
            categories.append(CocoCategory(int(entry["id"]), str(entry["name"])))
        except (TypeError, ValueError):
            problems.append(f"{where}: malformed field types")

    if problems:
        return None, problems
    return CocoDataset(tuple(images), tuple(annotations), tuple(categories)), []


def _invariant_violations(ds: CocoDataset) -> list[str]:
    """Structural invariants that must hold for any dataset instance."""
    problems: list[str] = []
    images_by_id: dict[int, CocoImage] = {}
    for im in ds.images:
        if im.id in images_by_id:
            problems.append(f"duplicate id {im.id} in images")
        images_by_id[im.id] = im
    cat_ids: set[int] = set()
    for cat in ds.categories:
        if cat.id in cat_ids:
            problems.append(f"duplicate id {cat.id} in categories")
        cat_ids.add(cat.id)
    ann_ids: set[int] = set()
    for ann in ds.annotations:
        where = f"annotation {ann.id}"
        if ann.id in ann_ids:
            problems.append(f"duplicate id {ann.id} in annotations")
        ann_ids.add(ann.id)
        if ann.image_id not in images_by_id:
            problems.append(f"{where}: dangling image_id {ann.image_id}")
        if ann.category_id not in cat_ids:
            problems.append(f"{where}: dangling category_id {ann.category_id}")
        if ann.iscrowd != 0:
            problems.append(f"{where}: iscrowd must be 0, got {ann.iscrowd}")
        x, y, w, h = ann.bbox
        if w <= 0 or h <= 0:
            problems.append(f"{where}: bbox extent must be positive, got {w}x{h}")
        im = images_by_id.get(ann.image_id)
        if im is not None and (x < 0 or y < 0 or x + w > im.width or y + h > im.height):
            problems.append(f"{where}: bbox {ann.bbox} outside image bounds {im.width}x{im.height}")
        rh, rw = ann.segmentation.size
        counts = ann.segmentation.counts
        if im is not None and (rh, rw) != (im.height, im.width):
            problems.append(f"{where}: RLE size {(rh, rw)} does not match image {im.height}x{im.width}")
        if not counts or counts[0] < 0 or any(c < 1 for c in counts[1:]):
            problems.append(f"{where}: malformed RLE counts")
        elif sum(counts) != rh * rw:
            problems.append(f"{where}: RLE counts sum to {sum(counts)}, expected {rh * rw}")
        if float(ann.area) != float(rle_area(ann.segmentation)):
            problems.append(
                f"{where}: area mismatch, recorded {ann.area} vs RLE foreground {rle_area(ann.segmentation)}"
            )
    return problems


def read_dataset(path: str | Path) -> CocoDataset:
    """Read and strictly check a COCO JSON document.

    Structural problems and invariant violations are collected and raised
    together as one CocoFormatError, never one at a time.
    """
    try:
        with open(path, "r", encoding="utf-8") as fp:
            doc = json.load(fp)
    except json.JSONDecodeError as exc:
        raise CocoFormatError([f"not valid JSON: {exc}"]) from exc
    ds, problems = _parse_doc(doc)
    if ds is None:
        raise CocoFormatError(problems)
    problems = _invariant_violations(ds)
    if problems:
        raise CocoFormatError(problems)
    return ds


def validate(ds: CocoDataset) -> ValidationReport:
    """Full consistency check, including mask decoding.

    On top of the structural invariants this decodes every RLE and checks
    that the recorded area equals the decoded popcount and that the bbox is
    exactly the tight box of the decoded mask. All failures are collected.
    """
    problems = _invariant_violations(ds)
    for ann in ds.annotations:
        where = f"annotation {ann.id}"
        try:
            mask = decode_rle(ann.segmentation)
        except ValueError as exc:
            problems.append(f"{where}: undecodable RLE ({exc})")
            continue
        decoded_area = mask.area
        if float(ann.area) != float(decoded_area):
            problems.append(f"{where}: area mismatch, recorded {ann.area} vs decoded {decoded_area}")
        rows = np.flatnonzero(mask.bits.any(axis=1))
        if rows.size == 0:
            problems.append(f"{where}: segmentation decodes to an empty mask")
            continue
        cols = np.flatnonzero(mask.bits.any(axis=0))
        tight = (float(cols[0]), float(rows[0]), float(cols[-1] - cols[0] + 1), float(rows[-1] - rows[0] + 1))
        if tuple(float(v) for v in ann.bbox) != tight:
            problems.append(f"{where}: bbox {ann.bbox} is not the tight box {tight} of the decoded mask")
    return ValidationReport(tuple(problems))
