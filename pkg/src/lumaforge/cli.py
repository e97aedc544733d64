"""Command-line front door: harvest -> compose -> eval, plus inspect.

Configuration precedence is flags > config file > defaults, and the
effective configuration is printed at startup. Exit codes: 0 ok, 1 I/O or
config error, 2 empty result.
"""
from __future__ import annotations

import hashlib
import json
import os
import sys
from dataclasses import asdict
from pathlib import Path

import click
import numpy as np

from . import cocoio, compositor, evalkit, harvest
from .imgcore import ImageRGB8, read_image, write_png
from .keying import KeySpec

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_EMPTY = 2

_DEFAULT_KEY = KeySpec(mode="luminance")
_DEFAULT_HARVEST = harvest.HarvestConfig(key=_DEFAULT_KEY)
_DEFAULT_SCENE = compositor.SceneSpec()

_TINT_PALETTE = (
    (230, 25, 75),
    (60, 180, 75),
    (255, 225, 25),
    (0, 130, 200),
    (245, 130, 48),
    (145, 30, 180),
    (70, 240, 240),
    (240, 50, 230),
)


def _harvest_defaults() -> dict:
    d = asdict(_DEFAULT_HARVEST)
    d["key"] = asdict(_DEFAULT_KEY)
    return d


def _scene_defaults() -> dict:
    d = asdict(_DEFAULT_SCENE)
    for key in ("canvas", "objects_per_image", "scale_range", "rotation_range"):
        d[key] = list(d[key])
    return d


def _load_config_file(path: str | None, allowed: dict) -> dict:
    if path is None:
        return {}
    with open(path, "r", encoding="utf-8") as fp:
        doc = json.load(fp)
    if not isinstance(doc, dict):
        raise ValueError(f"{path}: config must be a JSON object")
    unknown = sorted(set(doc) - set(allowed))
    if unknown:
        raise ValueError(f"{path}: unknown config keys: {', '.join(unknown)}")
    if "key" in doc:
        if not isinstance(doc["key"], dict):
            raise ValueError(f"{path}: 'key' must be an object")
        bad = sorted(set(doc["key"]) - set(allowed["key"]))
        if bad:
            raise ValueError(f"{path}: unknown key-spec keys: {', '.join(bad)}")
    return doc


def _echo_config(command: str, effective: dict) -> None:
    click.echo(f"config[{command}]: {json.dumps(effective, sort_keys=True)}")


def _fail(message: str, code: int = EXIT_ERROR) -> None:
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


@click.group()
def main() -> None:
    """Build COCO detection datasets from keyed object recordings."""


@main.command(
    "harvest",
    help="Segment every sampled frame of one object's directory and write a "
    "crop library.\n\nConfig file defaults (JSON, flags win): "
    + json.dumps(_harvest_defaults(), sort_keys=True),
)
@click.option("--input", "input_dir", required=True, type=click.Path(), help="Directory of frames (png/jpg).")
@click.option("--category", "category_id", required=True, type=int, help="Category id for every crop (>= 1).")
@click.option("--out", "out_dir", required=True, type=click.Path(), help="Output library directory.")
@click.option("--config", "config_file", type=click.Path(), default=None, help="JSON config file.")
def cmd_harvest(input_dir: str, category_id: int, out_dir: str, config_file: str | None) -> None:
    try:
        doc = _load_config_file(config_file, _harvest_defaults())
        key_doc = {**_harvest_defaults()["key"], **doc.pop("key", {})}
        if key_doc["threshold"] != "auto":
            key_doc["threshold"] = int(key_doc["threshold"])
        cfg_doc = {**_harvest_defaults(), **doc}
        cfg = harvest.HarvestConfig(
            key=KeySpec(**key_doc),
            frame_stride=cfg_doc["frame_stride"],
            margin=cfg_doc["margin"],
            min_area=cfg_doc["min_area"],
            crop_padding=cfg_doc["crop_padding"],
        )
    except (OSError, ValueError, json.JSONDecodeError) as exc:
        _fail(str(exc))
    effective = {**{k: v for k, v in asdict(cfg).items() if k != "key"}, "key": asdict(cfg.key)}
    _echo_config("harvest", effective)

    try:
        crops, report = harvest.harvest_directory(input_dir, category_id, cfg)
    except harvest.EmptyHarvestError as exc:
        click.echo(json.dumps(asdict(exc.report)))
        _fail(str(exc), EXIT_EMPTY)
    except (OSError, ValueError) as exc:
        _fail(str(exc))
    try:
        harvest.save_library(crops, out_dir)
    except OSError as exc:
        _fail(str(exc))
    click.echo(json.dumps(asdict(report)))
    click.echo(f"wrote {len(crops)} crops to {out_dir}")


def _resolve_jobs(jobs: int | None) -> int:
    if jobs is not None:
        return jobs
    env = os.environ.get("LUMAFORGE_JOBS")
    if env:
        try:
            return int(env)
        except ValueError as exc:
            raise ValueError(f"LUMAFORGE_JOBS must be an integer, got {env!r}") from exc
    return 1


@main.command(
    "compose",
    help="Paste library crops onto random background crops and write images + "
    "annotations.json + scene_log.json.\n\nConfig file defaults (JSON, flags win): "
    + json.dumps(_scene_defaults(), sort_keys=True),
)
@click.option("--library", "library_dirs", required=True, multiple=True, type=click.Path(), help="Crop library directory (repeatable).")
@click.option("--backgrounds", "background_dir", required=True, type=click.Path(), help="Directory of background images.")
@click.option("--out", "out_dir", required=True, type=click.Path(), help="Output dataset directory.")
@click.option("--config", "config_file", type=click.Path(), default=None, help="JSON config file.")
@click.option("--seed", type=int, default=None, help=f"Master seed (default: {_DEFAULT_SCENE.seed}).")
@click.option("--count", required=True, type=int, help="Number of images to compose.")
@click.option("--jobs", type=int, default=None, help="Worker threads (default: $LUMAFORGE_JOBS or 1); output is identical for any value.")
def cmd_compose(
    library_dirs: tuple[str, ...],
    background_dir: str,
    out_dir: str,
    config_file: str | None,
    seed: int | None,
    count: int,
    jobs: int | None,
) -> None:
    try:
        doc = _load_config_file(config_file, _scene_defaults())
        merged = {**_scene_defaults(), **doc}
        if seed is not None:
            merged["seed"] = seed
        spec = compositor.SceneSpec(
            canvas=tuple(merged["canvas"]),
            objects_per_image=tuple(merged["objects_per_image"]),
            max_overlap=merged["max_overlap"],
            scale_range=tuple(merged["scale_range"]),
            rotation_range=tuple(merged["rotation_range"]),
            max_placement_attempts=merged["max_placement_attempts"],
            erosion_radius=merged["erosion_radius"],
            noise_sigma=merged["noise_sigma"],
            min_visible_fraction=merged["min_visible_fraction"],
            seed=merged["seed"],
        )
        n_jobs = _resolve_jobs(jobs)
        if count < 0:
            raise ValueError(f"--count must be >= 0, got {count}")
    except (OSError, ValueError, json.JSONDecodeError) as exc:
        _fail(str(exc))
    effective = {**_scene_defaults(), **asdict(spec)}
    for key in ("canvas", "objects_per_image", "scale_range", "rotation_range"):
        effective[key] = list(effective[key])
    effective["jobs"] = n_jobs
    _echo_config("compose", effective)

    try:
        library: list[harvest.CropRecord] = []
        for d in library_dirs:
            library.extend(harvest.load_library(d))
        pool = compositor.BackgroundPool(background_dir)
        result = compositor.compose_dataset(library, pool, spec, count, jobs=n_jobs)
    except (OSError, ValueError, compositor.PoolExhaustedError) as exc:
        _fail(str(exc))

    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    try:
        for i, img in enumerate(result.images):
            write_png(img, out / "images" / f"{i:06d}.png")
        cocoio.write_dataset(result.dataset, out / "annotations.json")
        with open(out / "scene_log.json", "w", encoding="utf-8") as fp:
            json.dump(result.scene_log, fp)
            fp.write("\n")
    except OSError as exc:
        _fail(str(exc))

    report = cocoio.validate(result.dataset)
    if not report.ok:
        for violation in report.violations:
            click.echo(f"validation: {violation}", err=True)
        _fail(f"{len(report.violations)} validation violations in {out / 'annotations.json'}")
    digest = hashlib.sha256((out / "annotations.json").read_bytes()).hexdigest()
    click.echo(
        f"wrote {len(result.images)} images, {len(result.dataset.annotations)} annotations "
        f"to {out} (annotations sha256 {digest})"
    )


@main.command("eval", help="Score a COCO results file against ground truth and print the AP/AR table.")
@click.option("--gt", "gt_file", required=True, type=click.Path(), help="Ground-truth annotations.json.")
@click.option("--dets", "dets_file", required=True, type=click.Path(), help="Detections JSON array.")
@click.option("--out", "out_file", type=click.Path(), default=None, help="Optional JSON report destination.")
def cmd_eval(gt_file: str, dets_file: str, out_file: str | None) -> None:
    try:
        ds = cocoio.read_dataset(gt_file)
        dets = evalkit.load_detections(dets_file)
    except (OSError, ValueError) as exc:
        _fail(str(exc))
    report = evalkit.evaluate(ds, dets)
    names = {c.id: c.name for c in ds.categories}
    click.echo(report.to_table(names))
    for line in report.excluded_detections:
        click.echo(f"excluded: {line}", err=True)
    if out_file is not None:
        try:
            with open(out_file, "w", encoding="utf-8") as fp:
                json.dump(report.to_json_dict(), fp, indent=2)
                fp.write("\n")
        except OSError as exc:
            _fail(str(exc))


@main.command("inspect", help="Write overlay PNGs with instance masks tinted over the composites.")
@click.option("--dataset", "dataset_dir", required=True, type=click.Path(), help="Dataset directory (images/ + annotations.json).")
@click.option("--n", "n_images", required=True, type=int, help="How many images to overlay (first K by id).")
@click.option("--out", "out_dir", type=click.Path(), default=None, help="Overlay directory (default: DATASET/inspect).")
def cmd_inspect(dataset_dir: str, n_images: int, out_dir: str | None) -> None:
    root = Path(dataset_dir)
    dest = Path(out_dir) if out_dir is not None else root / "inspect"
    try:
        if n_images < 0:
            raise ValueError(f"--n must be >= 0, got {n_images}")
        ds = cocoio.read_dataset(root / "annotations.json")
    except (OSError, ValueError) as exc:
        _fail(str(exc))
    if n_images == 0:
        click.echo("wrote 0 overlays")
        return

    by_image: dict[int, list[cocoio.CocoAnnotation]] = {}
    for ann in ds.annotations:
        by_image.setdefault(ann.image_id, []).append(ann)

    dest.mkdir(parents=True, exist_ok=True)
    written = 0
    try:
        for im in sorted(ds.images, key=lambda im: im.id)[:n_images]:
            img = read_image(root / "images" / im.file_name)
            overlay = np.array(img.pixels)
            for k, ann in enumerate(by_image.get(im.id, [])):
                mask = cocoio.decode_rle(ann.segmentation).bits
                color = np.array(_TINT_PALETTE[k % len(_TINT_PALETTE)], dtype=np.float64)
                blended = 0.55 * overlay[mask].astype(np.float64) + 0.45 * color
                overlay[mask] = np.clip(np.rint(blended), 0, 255).astype(np.uint8)
            write_png(ImageRGB8(overlay), dest / f"overlay_{im.id:06d}.png")
            written += 1
    except (OSError, ValueError) as exc:
        _fail(str(exc))
    click.echo(f"wrote {written} overlays to {dest}")


if __name__ == "__main__":
    main()
