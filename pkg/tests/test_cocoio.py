import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from lumaforge.cocoio import (
    CocoAnnotation,
    CocoCategory,
    CocoDataset,
    CocoFormatError,
    CocoImage,
    RleMask,
    YCBV_CATEGORIES,
    decode_rle,
    encode_rle,
    read_dataset,
    rle_area,
    validate,
    write_dataset,
)
from lumaforge.imgcore import BitMask


def mask_of(rows):
    return BitMask(np.array(rows, dtype=bool))


def small_dataset():
    bits = np.zeros((8, 8), bool)
    bits[2:5, 3:6] = True
    seg = encode_rle(BitMask(bits))
    return CocoDataset(
        images=(CocoImage(0, "000000.png", 8, 8),),
        annotations=(
            CocoAnnotation(
                id=1,
                image_id=0,
                category_id=1,
                bbox=(3.0, 2.0, 3.0, 3.0),
                area=9.0,
                segmentation=seg,
            ),
        ),
        categories=(CocoCategory(1, "002_master_chef_can"),),
    )


class TestEncode:
    def test_single_pixel_2x2(self):
        m = np.zeros((2, 2), bool)
        m[0, 0] = True
        assert encode_rle(BitMask(m)).counts == (0, 1, 3)

    def test_empty_mask(self):
        assert encode_rle(BitMask(np.zeros((3, 4), bool))).counts == (12,)

    def test_full_mask(self):
        assert encode_rle(BitMask(np.ones((3, 4), bool))).counts == (0, 12)

    def test_column_major_order(self):
        # set pixels (x=0,y=1) and (x=1,y=0): column-major order F,T,T,F
        m = np.zeros((2, 2), bool)
        m[1, 0] = True
        m[0, 1] = True
        assert encode_rle(BitMask(m)).counts == (1, 2, 1)

    def test_counts_invariants_hold(self):
        rng = np.random.default_rng(31)
        for _ in range(50):
            h, w = rng.integers(1, 20, size=2)
            bits = rng.random((h, w)) < 0.5
            rle = encode_rle(BitMask(bits))
            assert sum(rle.counts) == h * w
            assert rle.counts[0] >= 0
            assert all(c >= 1 for c in rle.counts[1:])
            assert rle_area(rle) == int(bits.sum())


class TestDecode:
    def test_all_background(self):
        out = decode_rle(RleMask(size=(2, 2), counts=(4,)))
        assert out.area == 0 and (out.height, out.width) == (2, 2)

    def test_enumerated_counts(self):
        out = decode_rle(RleMask(size=(2, 2), counts=(1, 2, 1)))
        expected = np.array([[False, True], [True, False]])
        assert np.array_equal(out.bits, expected)

    def test_sum_mismatch_rejected(self):
        with pytest.raises(ValueError, match="sum"):
            decode_rle(RleMask(size=(2, 2), counts=(1, 2)))

    @given(
        st.integers(1, 64),
        st.integers(1, 64),
        st.integers(0, 2**32 - 1),
    )
    def test_round_trip(self, h, w, seed):
        bits = np.random.default_rng(seed).random((h, w)) < 0.5
        mask = BitMask(bits)
        assert decode_rle(encode_rle(mask)) == mask

    @pytest.mark.parametrize("shape", [(1, 1), (1, 9), (9, 1)])
    def test_degenerate_shapes_round_trip(self, shape):
        rng = np.random.default_rng(32)
        for _ in range(10):
            mask = BitMask(rng.random(shape) < 0.5)
            assert decode_rle(encode_rle(mask)) == mask


class TestWriteRead:
    def test_empty_dataset_round_trip(self, tmp_path):
        ds = CocoDataset(images=(), annotations=(), categories=())
        path = tmp_path / "ann.json"
        write_dataset(ds, path)
        assert read_dataset(path) == ds

    def test_small_dataset_round_trip(self, tmp_path):
        ds = small_dataset()
        path = tmp_path / "ann.json"
        write_dataset(ds, path)
        assert read_dataset(path) == ds

    def test_serialization_is_stable(self, tmp_path):
        ds = small_dataset()
        first = tmp_path / "a.json"
        second = tmp_path / "b.json"
        write_dataset(ds, first)
        write_dataset(read_dataset(first), second)
        assert first.read_bytes() == second.read_bytes()

    def test_dangling_image_id_rejected(self, tmp_path):
        doc = json.loads(json.dumps({
            "images": [{"id": 1, "file_name": "a.png", "width": 4, "height": 4}],
            "annotations": [{
                "id": 1, "image_id": 99, "category_id": 1,
                "bbox": [0.0, 0.0, 1.0, 1.0], "area": 1.0,
                "segmentation": {"size": [4, 4], "counts": [0, 1, 15]},
                "iscrowd": 0,
            }],
            "categories": [{"id": 1, "name": "thing"}],
        }))
        path = tmp_path / "bad.json"
        path.write_text(json.dumps(doc))
        with pytest.raises(CocoFormatError, match="dangling image_id"):
            read_dataset(path)

    def test_missing_key_rejected(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text(json.dumps({"images": [], "annotations": []}))
        with pytest.raises(CocoFormatError, match="categories"):
            read_dataset(path)

    def test_unknown_top_level_key_rejected(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text(json.dumps({"images": [], "annotations": [], "categories": [], "info": {}}))
        with pytest.raises(CocoFormatError, match="info"):
            read_dataset(path)

    def test_not_json_rejected(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text("{nope")
        with pytest.raises(CocoFormatError, match="JSON"):
            read_dataset(path)

    def test_errors_are_collected_not_first_only(self, tmp_path):
        doc = {
            "images": [{"id": 1, "file_name": "a.png", "width": 4, "height": 4}],
            "annotations": [
                {
                    "id": 1, "image_id": 99, "category_id": 42,
                    "bbox": [0.0, 0.0, 1.0, 1.0], "area": 1.0,
                    "segmentation": {"size": [4, 4], "counts": [0, 1, 15]},
                    "iscrowd": 0,
                }
            ],
            "categories": [{"id": 1, "name": "thing"}],
        }
        path = tmp_path / "bad.json"
        path.write_text(json.dumps(doc))
        with pytest.raises(CocoFormatError) as excinfo:
            read_dataset(path)
        text = str(excinfo.value)
        assert "dangling image_id" in text and "dangling category_id" in text


class TestValidate:
    def test_clean_dataset_passes(self):
        assert validate(small_dataset()).ok

    def test_area_off_by_one_flagged(self):
        ds = small_dataset()
        ann = ds.annotations[0]
        bad = CocoDataset(
            images=ds.images,
            annotations=(CocoAnnotation(
                id=ann.id, image_id=ann.image_id, category_id=ann.category_id,
                bbox=ann.bbox, area=ann.area + 1.0, segmentation=ann.segmentation,
            ),),
            categories=ds.categories,
        )
        report = validate(bad)
        matches = [v for v in report.violations if "area mismatch" in v]
        assert len(matches) >= 1

    def test_duplicate_annotation_ids_flagged_per_duplicate(self):
        ds = small_dataset()
        ann = ds.annotations[0]
        bad = CocoDataset(
            images=ds.images,
            annotations=(ann, ann, ann),
            categories=ds.categories,
        )
        report = validate(bad)
        dupes = [v for v in report.violations if "duplicate id" in v and "annotations" in v]
        assert len(dupes) == 2

    def test_loose_bbox_flagged(self):
        ds = small_dataset()
        ann = ds.annotations[0]
        bad = CocoDataset(
            images=ds.images,
            annotations=(CocoAnnotation(
                id=ann.id, image_id=ann.image_id, category_id=ann.category_id,
                bbox=(2.0, 2.0, 4.0, 3.0), area=ann.area, segmentation=ann.segmentation,
            ),),
            categories=ds.categories,
        )
        report = validate(bad)
        assert any("tight box" in v for v in report.violations)

    def test_iscrowd_must_be_zero(self):
        ds = small_dataset()
        ann = ds.annotations[0]
        bad = CocoDataset(
            images=ds.images,
            annotations=(CocoAnnotation(
                id=ann.id, image_id=ann.image_id, category_id=ann.category_id,
                bbox=ann.bbox, area=ann.area, segmentation=ann.segmentation, iscrowd=1,
            ),),
            categories=ds.categories,
        )
        assert any("iscrowd" in v for v in validate(bad).violations)


class TestCategories:
    def test_ycbv_list_has_21_entries(self):
        assert len(YCBV_CATEGORIES) == 21
        assert YCBV_CATEGORIES[0] == CocoCategory(1, "002_master_chef_can")
        assert YCBV_CATEGORIES[-1] == CocoCategory(21, "061_foam_brick")
        assert [c.id for c in YCBV_CATEGORIES] == list(range(1, 22))
