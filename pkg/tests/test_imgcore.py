import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from PIL import Image

from lumaforge.imgcore import (
    BBox,
    BitMask,
    ImageRGB8,
    connected_components,
    erode,
    fill_holes,
    largest_component,
    luminance,
    luminance_image,
    mask_iou,
    mask_to_bbox,
    read_image,
    read_mask_png,
    write_mask_png,
    write_png,
)
from oracles import border_flood_fill_holes, erode_per_pixel, flood_fill_components


def random_bits(rng, h, w, p=0.4):
    return rng.random((h, w)) < p


class TestLuminance:
    def test_black_is_zero(self):
        assert luminance(0, 0, 0) == 0

    def test_white_is_full_scale(self):
        assert luminance(255, 255, 255) == 255

    def test_mixed_pixel(self):
        # 0.2126*100 + 0.7152*150 + 0.0722*50 = 132.15 -> 132
        assert luminance(100, 150, 50) == 132

    @given(
        st.integers(0, 255),
        st.integers(0, 255),
        st.integers(0, 255),
        st.sampled_from([0, 1, 2]),
        st.integers(1, 255),
    )
    def test_monotone_in_each_channel(self, r, g, b, channel, bump):
        base = [r, g, b]
        raised = list(base)
        raised[channel] = min(255, raised[channel] + bump)
        assert luminance(*raised) >= luminance(*base)

    def test_vectorized_matches_scalar(self):
        rng = np.random.default_rng(3)
        px = rng.integers(0, 256, size=(9, 7, 3)).astype(np.uint8)
        luma = luminance_image(ImageRGB8(px))
        for y in range(9):
            for x in range(7):
                assert luma[y, x] == luminance(*px[y, x].tolist())


class TestConnectedComponents:
    def test_empty_mask(self):
        labels = connected_components(BitMask(np.zeros((5, 5), bool)))
        assert labels.max() == 0

    def test_two_blocks_raster_order(self):
        bits = np.zeros((6, 8), bool)
        bits[0:2, 0:2] = True
        bits[4:6, 5:7] = True
        labels = connected_components(BitMask(bits), 4)
        assert labels.max() == 2
        assert labels[0, 0] == 1
        assert labels[4, 5] == 2

    def test_diagonal_pair_connectivity(self):
        bits = np.zeros((4, 4), bool)
        bits[1, 1] = bits[2, 2] = True
        assert connected_components(BitMask(bits), 4).max() == 2
        assert connected_components(BitMask(bits), 8).max() == 1

    @pytest.mark.parametrize("connectivity", [4, 8])
    def test_matches_flood_fill_oracle(self, connectivity):
        rng = np.random.default_rng(11)
        for _ in range(25):
            bits = random_bits(rng, 16, 20)
            got = connected_components(BitMask(bits), connectivity)
            expected = flood_fill_components(bits, connectivity)
            assert np.array_equal(got, expected)

    def test_rejects_bad_connectivity(self):
        with pytest.raises(ValueError):
            connected_components(BitMask(np.zeros((2, 2), bool)), 6)


class TestLargestComponent:
    def test_single_blob_identity(self):
        bits = np.zeros((7, 7), bool)
        bits[2:5, 2:5] = True
        assert largest_component(BitMask(bits)) == BitMask(bits)

    def test_keeps_bigger_blob(self):
        bits = np.zeros((8, 8), bool)
        bits[0:3, 0:3] = True  # area 9
        bits[5:7, 5:7] = True  # area 4
        expected = np.zeros_like(bits)
        expected[0:3, 0:3] = True
        assert largest_component(BitMask(bits)) == BitMask(expected)

    def test_equal_area_tie_goes_to_first_raster(self):
        bits = np.zeros((6, 6), bool)
        bits[0, 4:6] = True  # first raster encounter
        bits[3, 0:2] = True
        expected = np.zeros_like(bits)
        expected[0, 4:6] = True
        assert largest_component(BitMask(bits)) == BitMask(expected)

    def test_empty_in_empty_out(self):
        empty = BitMask(np.zeros((3, 3), bool))
        assert largest_component(empty) == empty

    def test_area_dominates_every_other_component(self):
        rng = np.random.default_rng(12)
        for _ in range(20):
            bits = random_bits(rng, 14, 14, p=0.35)
            kept = largest_component(BitMask(bits))
            labels = connected_components(BitMask(bits))
            if labels.max() == 0:
                assert kept.area == 0
                continue
            areas = np.bincount(labels.ravel())[1:]
            assert kept.area == areas.max()


class TestErode:
    def test_radius_zero_is_identity(self):
        rng = np.random.default_rng(13)
        bits = random_bits(rng, 10, 12)
        assert erode(BitMask(bits), 0) == BitMask(bits)

    def test_full_3x3_to_center(self):
        bits = np.ones((3, 3), bool)
        out = erode(BitMask(bits), 1)
        expected = np.zeros((3, 3), bool)
        expected[1, 1] = True
        assert out == BitMask(expected)

    def test_5x5_square_against_oracle(self):
        bits = np.zeros((9, 9), bool)
        bits[2:7, 2:7] = True
        out = erode(BitMask(bits), 1)
        assert np.array_equal(out.bits, erode_per_pixel(bits, 1))
        inner = np.zeros_like(bits)
        inner[3:6, 3:6] = True
        assert out == BitMask(inner)

    @pytest.mark.parametrize("radius", [0, 1, 2, 3])
    def test_matches_per_pixel_oracle(self, radius):
        rng = np.random.default_rng(14)
        bits = random_bits(rng, 15, 13, p=0.7)
        assert np.array_equal(erode(BitMask(bits), radius).bits, erode_per_pixel(bits, radius))

    def test_composition_of_radii(self):
        rng = np.random.default_rng(15)
        for r1 in range(4):
            for r2 in range(4):
                bits = random_bits(rng, 12, 12, p=0.8)
                twice = erode(erode(BitMask(bits), r1), r2)
                assert twice == erode(BitMask(bits), r1 + r2)

    def test_negative_radius_rejected(self):
        with pytest.raises(ValueError):
            erode(BitMask(np.ones((2, 2), bool)), -1)


class TestFillHoles:
    def test_solid_square_unchanged(self):
        bits = np.zeros((8, 8), bool)
        bits[2:6, 2:6] = True
        assert fill_holes(BitMask(bits)) == BitMask(bits)

    def test_annulus_becomes_disk(self):
        yy, xx = np.mgrid[0:15, 0:15]
        d2 = (xx - 7) ** 2 + (yy - 7) ** 2
        ring = (d2 <= 36) & (d2 >= 16)
        out = fill_holes(BitMask(ring))
        assert np.array_equal(out.bits, border_flood_fill_holes(ring))
        assert np.array_equal(out.bits, d2 <= 36)

    def test_border_touching_with_cavity(self):
        bits = np.ones((9, 9), bool)
        bits[3:6, 3:6] = False  # interior cavity
        out = fill_holes(BitMask(bits))
        assert np.array_equal(out.bits, border_flood_fill_holes(bits))
        assert out.bits.all()

    def test_open_bay_stays_open(self):
        bits = np.zeros((7, 7), bool)
        bits[1:6, 1:6] = True
        bits[0:4, 3] = False  # channel to the border
        out = fill_holes(BitMask(bits))
        assert np.array_equal(out.bits, border_flood_fill_holes(bits))


class TestMaskToBBox:
    def test_single_pixel(self):
        bits = np.zeros((10, 10), bool)
        bits[4, 3] = True
        assert mask_to_bbox(BitMask(bits)) == BBox(3, 4, 1, 1)

    def test_empty_is_none(self):
        assert mask_to_bbox(BitMask(np.zeros((4, 4), bool))) is None

    def test_two_corner_pixels(self):
        bits = np.zeros((10, 10), bool)
        bits[1, 1] = True
        bits[7, 4] = True
        assert mask_to_bbox(BitMask(bits)) == BBox(1, 1, 4, 7)

    def test_box_is_tight(self):
        rng = np.random.default_rng(16)
        for _ in range(25):
            bits = random_bits(rng, 11, 17, p=0.1)
            box = mask_to_bbox(BitMask(bits))
            if box is None:
                assert not bits.any()
                continue
            ys, xs = np.nonzero(bits)
            assert (xs >= box.x).all() and (xs < box.x + box.w).all()
            assert (ys >= box.y).all() and (ys < box.y + box.h).all()
            assert bits[:, box.x].any() and bits[:, box.x + box.w - 1].any()
            assert bits[box.y, :].any() and bits[box.y + box.h - 1, :].any()


class TestMaskIou:
    def test_identical_masks(self):
        bits = np.zeros((6, 6), bool)
        bits[1:4, 1:4] = True
        assert mask_iou(BitMask(bits), BitMask(bits)) == 1.0

    def test_disjoint_masks(self):
        a = np.zeros((6, 6), bool)
        b = np.zeros((6, 6), bool)
        a[0, 0] = True
        b[5, 5] = True
        assert mask_iou(BitMask(a), BitMask(b)) == 0.0

    def test_shifted_square(self):
        a = np.zeros((20, 20), bool)
        b = np.zeros((20, 20), bool)
        a[0:10, 0:10] = True
        b[0:10, 5:15] = True
        assert mask_iou(BitMask(a), BitMask(b)) == pytest.approx(50 / 150)

    def test_both_empty_is_one(self):
        empty = BitMask(np.zeros((3, 3), bool))
        assert mask_iou(empty, empty) == 1.0

    def test_symmetry(self):
        rng = np.random.default_rng(17)
        for _ in range(20):
            a = BitMask(random_bits(rng, 9, 9))
            b = BitMask(random_bits(rng, 9, 9))
            assert mask_iou(a, b) == mask_iou(b, a)

    def test_dimension_mismatch_rejected(self):
        with pytest.raises(ValueError):
            mask_iou(BitMask(np.zeros((2, 2), bool)), BitMask(np.zeros((2, 3), bool)))


class TestTypes:
    def test_image_rejects_wrong_dtype(self):
        with pytest.raises(ValueError):
            ImageRGB8(np.zeros((4, 4, 3), np.uint16))

    def test_image_rejects_wrong_shape(self):
        with pytest.raises(ValueError):
            ImageRGB8(np.zeros((4, 4), np.uint8))

    def test_mask_rejects_non_bool(self):
        with pytest.raises(ValueError):
            BitMask(np.zeros((4, 4), np.uint8))

    def test_pixels_are_readonly(self):
        img = ImageRGB8(np.zeros((2, 2, 3), np.uint8))
        with pytest.raises(ValueError):
            img.pixels[0, 0, 0] = 1

    def test_bbox_validation(self):
        with pytest.raises(ValueError):
            BBox(-1, 0, 2, 2)
        with pytest.raises(ValueError):
            BBox(0, 0, 0, 2)


class TestRasterIO:
    def test_png_round_trip(self, tmp_path):
        rng = np.random.default_rng(18)
        img = ImageRGB8(rng.integers(0, 256, size=(13, 9, 3)).astype(np.uint8))
        path = tmp_path / "img.png"
        write_png(img, path)
        assert read_image(path) == img

    def test_mask_png_round_trip(self, tmp_path):
        rng = np.random.default_rng(19)
        mask = BitMask(random_bits(rng, 13, 9))
        path = tmp_path / "mask.png"
        write_mask_png(mask, path)
        assert read_mask_png(path) == mask

    def test_jpeg_is_readable(self, tmp_path):
        arr = np.full((16, 16, 3), 90, np.uint8)
        path = tmp_path / "img.jpg"
        Image.fromarray(arr, mode="RGB").save(path, format="JPEG")
        img = read_image(path)
        assert (img.width, img.height) == (16, 16)

    def test_sixteen_bit_png_rejected(self, tmp_path):
        path = tmp_path / "deep.png"
        Image.fromarray(np.zeros((4, 4), np.uint16)).save(path, format="PNG")
        with pytest.raises(ValueError, match="8-bit"):
            read_image(path)
