import numpy as np
import pytest

from spinecascade.imaging import (
    GrayImage,
    PatchSpec,
    clahe,
    crop_patch,
    crop_window,
    hflip,
    read_pgm,
    resize_bilinear,
    resize_to_height,
    write_pgm,
)
from spinecascade.shapes import Shape, ShapeKind
from spinecascade.synth import SynthConfig, synth_generate


def ramp_image(h, w):
    y, x = np.mgrid[0:h, 0:w]
    return GrayImage((0.2 + 0.3 * x / max(w - 1, 1) + 0.4 * y / max(h - 1, 1)))


class TestGrayImage:
    def test_validation(self):
        with pytest.raises(ValueError):
            GrayImage(np.zeros((2, 2, 2)))
        with pytest.raises(ValueError):
            GrayImage(np.full((2, 2), 1.5))
        with pytest.raises(ValueError):
            GrayImage(np.full((2, 2), np.nan))

    def test_read_only(self):
        img = GrayImage(np.zeros((3, 4)))
        assert (img.height, img.width) == (3, 4)
        with pytest.raises(ValueError):
            img.pixels[0, 0] = 1.0


class TestClahe:
    def test_constant_image_stays_in_range(self):
        out = clahe(GrayImage(np.full((32, 32), 0.5)))
        assert out.pixels.min() >= 0.0 and out.pixels.max() <= 1.0

    def test_single_tile_unclipped_is_global_equalization(self):
        # with one tile and an effectively infinite clip limit, the mapping is
        # the global histogram-equalization CDF — computed here independently.
        rng = np.random.default_rng(0)
        pix = rng.beta(2, 5, size=(64, 64))
        img = GrayImage(pix)
        out = clahe(img, clip_limit=1e12, tiles=(1, 1), nbins=256)
        bins = np.minimum((pix * 256).astype(int), 255)
        hist = np.bincount(bins.reshape(-1), minlength=256)
        cdf = np.cumsum(hist) / pix.size
        assert np.allclose(out.pixels, cdf[bins], atol=1e-12)

    def test_low_clip_approaches_identity_histogram(self):
        # a perfectly flat histogram clipped at the uniform level keeps every
        # bin at n/nbins, so the CDF is linear: output == (bin index + 1) / nbins
        rng = np.random.default_rng(1)
        pix = np.repeat(np.arange(256), 9) / 256.0 + 0.5 / 256.0
        pix = rng.permutation(pix).reshape(48, 48)
        out = clahe(GrayImage(pix), clip_limit=1.0, tiles=(1, 1), nbins=256)
        bins = np.minimum((pix * 256).astype(int), 255)
        assert np.allclose(out.pixels, (bins + 1) / 256.0, atol=1e-12)

    def test_improves_contrast_of_low_contrast_image(self):
        rng = np.random.default_rng(2)
        pix = 0.45 + 0.05 * rng.uniform(0, 1, size=(128, 96))
        out = clahe(GrayImage(pix))
        assert out.pixels.std() > 2.0 * pix.std()

    def test_parameter_validation(self):
        img = GrayImage(np.zeros((8, 8)))
        with pytest.raises(ValueError):
            clahe(img, clip_limit=0.5)
        with pytest.raises(ValueError):
            clahe(img, tiles=(0, 4))

    def test_deterministic(self):
        rng = np.random.default_rng(3)
        img = GrayImage(rng.uniform(0, 1, size=(40, 40)))
        assert np.array_equal(clahe(img).pixels, clahe(img).pixels)


class TestResize:
    def test_identity_at_same_size(self):
        rng = np.random.default_rng(4)
        img = GrayImage(rng.uniform(0, 1, size=(13, 17)))
        out = resize_bilinear(img, 13, 17)
        assert np.array_equal(out.pixels, img.pixels)

    def test_affine_ramp_exact(self):
        img = ramp_image(21, 31)
        out = resize_bilinear(img, 11, 16)
        expected = ramp_image(11, 16)
        assert np.abs(out.pixels - expected.pixels).max() < 1e-12

    def test_corner_pixels_preserved(self):
        rng = np.random.default_rng(5)
        img = GrayImage(rng.uniform(0, 1, size=(9, 9)))
        out = resize_bilinear(img, 5, 7)
        for oy, iy in ((0, 0), (-1, -1)):
            for ox, ix in ((0, 0), (-1, -1)):
                assert np.isclose(out.pixels[oy, ox], img.pixels[iy, ix])

    def test_upscale_constant(self):
        out = resize_bilinear(GrayImage(np.full((4, 4), 0.3)), 10, 12)
        assert np.allclose(out.pixels, 0.3)

    def test_resize_to_height_aspect(self):
        img = GrayImage(np.zeros((1000, 500)))
        out = resize_to_height(img, 680)
        assert out.height == 680
        assert out.width == round(500 * 680 / 1000)

    def test_invalid_sizes(self):
        img = GrayImage(np.zeros((4, 4)))
        with pytest.raises(ValueError):
            resize_bilinear(img, 0, 4)
        with pytest.raises(ValueError):
            resize_to_height(img, 0)


class TestCrop:
    def test_interior_crop_copies_pixels(self):
        rng = np.random.default_rng(6)
        img = GrayImage(rng.uniform(0, 1, size=(50, 60)))
        block, (x0, y0) = crop_window(img, (30.0, 25.0), 8, 10)
        assert (x0, y0) == (30 - 5, 25 - 4)
        assert np.array_equal(block, img.pixels[21:29, 25:35])

    def test_center_rounding_half_up(self):
        img = GrayImage(np.zeros((50, 50)))
        _, (x0, _) = crop_window(img, (10.5, 10.0), 8, 8)
        assert x0 == 11 - 4
        _, (x1, _) = crop_window(img, (10.49, 10.0), 8, 8)
        assert x1 == 10 - 4

    def test_out_of_bounds_zero_padded(self):
        img = GrayImage(np.full((20, 20), 0.8))
        block, (x0, y0) = crop_window(img, (0.0, 0.0), 10, 10)
        assert (x0, y0) == (-5, -5)
        assert np.all(block[:5, :] == 0.0) and np.all(block[:, :5] == 0.0)
        assert np.all(block[5:, 5:] == 0.8)

    def test_fully_outside_is_all_zero(self):
        img = GrayImage(np.full((20, 20), 0.8))
        block, _ = crop_window(img, (-100.0, -100.0), 10, 10)
        assert np.all(block == 0.0)

    def test_crop_patch_resamples(self):
        img = ramp_image(100, 100)
        spec = PatchSpec(crop_h=80, crop_w=192, out_h=48, out_w=80)
        patch = crop_patch(img, (50.0, 50.0), spec)
        assert (patch.height, patch.width) == (48, 80)


class TestHflip:
    def test_pixels_mirrored(self):
        rng = np.random.default_rng(7)
        img = GrayImage(rng.uniform(0, 1, size=(10, 12)))
        shape = Shape(rng.uniform(0, 10, size=(17, 2)), ShapeKind.CENTERS17)
        flipped, _ = hflip(img, shape)
        assert np.array_equal(flipped.pixels, img.pixels[:, ::-1])

    def test_centers_coordinates(self):
        img = GrayImage(np.zeros((10, 12)))
        pts = np.zeros((17, 2))
        pts[0] = [3.0, 7.0]
        _, out = hflip(img, Shape(pts, ShapeKind.CENTERS17))
        assert np.allclose(out.points[0], [(12 - 1) - 3.0, 7.0])

    def test_involution_on_full68(self):
        rng = np.random.default_rng(8)
        img = GrayImage(rng.uniform(0, 1, size=(30, 40)))
        shape = Shape(rng.uniform(0, 30, size=(68, 2)), ShapeKind.FULL68)
        img2, shape2 = hflip(*hflip(img, shape))
        assert np.array_equal(img2.pixels, img.pixels)
        assert np.allclose(shape2.points, shape.points)

    def test_corner_roles_swap(self):
        img = GrayImage(np.zeros((10, 10)))
        pts = np.arange(136, dtype=float).reshape(68, 2)
        _, out = hflip(img, Shape(pts, ShapeKind.FULL68))
        # vertebra 0: TL/TR swap, BL/BR swap; y coordinates untouched
        assert out.points[0, 1] == pts[1, 1]
        assert out.points[1, 1] == pts[0, 1]
        assert out.points[2, 1] == pts[3, 1]
        assert out.points[3, 1] == pts[2, 1]

    def test_flip_preserves_cobb_angles(self):
        from spinecascade.metrics import cobb_angles

        sample = synth_generate(SynthConfig(count=1, amp_range=(15.0, 15.0)), seed=5)[0]
        _, flipped = hflip(sample.image, sample.corners)
        a = cobb_angles(sample.corners)
        b = cobb_angles(flipped)
        assert np.isclose(a.mt, b.mt, atol=1e-9)

    def test_corners4_rejected(self):
        img = GrayImage(np.zeros((10, 10)))
        shape = Shape(np.ones((4, 2)), ShapeKind.CORNERS4)
        with pytest.raises(ValueError):
            hflip(img, shape)


class TestPgm:
    def test_roundtrip_8bit(self, tmp_path):
        rng = np.random.default_rng(9)
        quant = rng.integers(0, 256, size=(15, 22))
        img = GrayImage(quant / 255.0)
        path = tmp_path / "img.pgm"
        write_pgm(path, img)
        back = read_pgm(path)
        assert np.abs(back.pixels - img.pixels).max() < 1e-12

    def test_roundtrip_16bit(self, tmp_path):
        rng = np.random.default_rng(10)
        img = GrayImage(rng.integers(0, 65536, size=(8, 8)) / 65535.0)
        path = tmp_path / "img16.pgm"
        write_pgm(path, img, maxval=65535)
        back = read_pgm(path)
        assert np.abs(back.pixels - img.pixels).max() < 1e-12

    def test_header_with_comment(self, tmp_path):
        path = tmp_path / "c.pgm"
        path.write_bytes(b"P5\n# a comment\n2 2\n255\n" + bytes([0, 64, 128, 255]))
        img = read_pgm(path)
        assert np.allclose(img.pixels.reshape(-1), np.array([0, 64, 128, 255]) / 255.0)

    def test_rejects_non_pgm(self, tmp_path):
        path = tmp_path / "bad.pgm"
        path.write_bytes(b"P6\n2 2\n255\n" + bytes(12))
        with pytest.raises(ValueError):
            read_pgm(path)

    def test_rejects_truncated(self, tmp_path):
        path = tmp_path / "trunc.pgm"
        path.write_bytes(b"P5\n4 4\n255\n" + bytes(3))
        with pytest.raises(ValueError):
            read_pgm(path)

    def test_invalid_maxval_on_write(self, tmp_path):
        with pytest.raises(ValueError):
            write_pgm(tmp_path / "x.pgm", GrayImage(np.zeros((2, 2))), maxval=1000)
