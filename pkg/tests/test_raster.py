import numpy as np
import pytest

from thermofuse.errors import BandCountMismatch, EmptyCrop
from thermofuse.raster import (
    Raster,
    YCbCrImage,
    center_crop,
    crop_dims,
    normalize_minmax,
    read_image,
    resample_bilinear,
    rgb_to_ycbcr,
    write_image,
    ycbcr_to_rgb,
)


def _rgb_pixel(r, g, b):
    return Raster(np.array([[[float(r)]], [[float(g)]], [[float(b)]]]))


class TestYCbCr:
    def test_white(self):
        out = rgb_to_ycbcr(_rgb_pixel(255, 255, 255))
        assert out.y[0, 0] == 255.0
        assert out.cb[0, 0] == 128.0
        assert out.cr[0, 0] == 128.0

    def test_black(self):
        out = rgb_to_ycbcr(_rgb_pixel(0, 0, 0))
        assert (out.y[0, 0], out.cb[0, 0], out.cr[0, 0]) == (0.0, 128.0, 128.0)

    def test_pure_red_against_stated_constants(self):
        # direct evaluation of the published coefficients:
        # Y = 0.299*255 = 76.245, Cb = -0.168736*255 + 128 = 84.97232,
        # Cr = 0.5*255 + 128 = 255.5 pre-clamp -> 255 stored
        out = rgb_to_ycbcr(_rgb_pixel(255, 0, 0))
        assert out.y[0, 0] == pytest.approx(76.245, abs=1e-3)
        assert out.cb[0, 0] == pytest.approx(84.972, abs=1e-3)
        assert out.cr[0, 0] == 255.0

    def test_achromatic_exact_for_all_levels(self):
        v = np.arange(256, dtype=np.float64)
        img = Raster(np.stack([v, v, v]).reshape(3, 16, 16))
        out = rgb_to_ycbcr(img)
        assert np.array_equal(out.y, img.data[0])
        assert np.all(out.cb == 128.0)
        assert np.all(out.cr == 128.0)

    def test_band_count_checked(self):
        with pytest.raises(BandCountMismatch):
            rgb_to_ycbcr(Raster(np.zeros((1, 4, 4))))

    def test_inverse_of_white(self):
        rgb = ycbcr_to_rgb(
            YCbCrImage(
                y=np.full((1, 1), 255.0),
                cb=np.full((1, 1), 128.0),
                cr=np.full((1, 1), 128.0),
            )
        )
        assert np.array_equal(rgb.data.ravel(), [255.0, 255.0, 255.0])

    def test_inverse_recovers_unclamped_red_exactly(self):
        # exact inverse of the pre-clamp forward output (Cr = 255.5)
        fwd_y, fwd_cb, fwd_cr = 76.245, 84.97232, 255.5
        ycbcr = YCbCrImage(
            y=np.full((1, 1), fwd_y),
            cb=np.full((1, 1), fwd_cb),
            cr=np.full((1, 1), fwd_cr),
        )
        rgb = ycbcr_to_rgb(ycbcr)
        assert rgb.data[0, 0, 0] == pytest.approx(255.0, abs=1e-2)
        assert rgb.data[1, 0, 0] == pytest.approx(0.0, abs=1e-2)
        assert rgb.data[2, 0, 0] == pytest.approx(0.0, abs=1e-2)

    def test_round_trip_within_one_level(self):
        rng = np.random.RandomState(41)
        rgb = Raster(rng.uniform(0, 255, size=(3, 100, 1000)))
        back = ycbcr_to_rgb(rgb_to_ycbcr(rgb))
        assert np.max(np.abs(back.data - rgb.data)) <= 1.0

    def test_round_trip_on_saturated_colors(self):
        # clamping the chroma of fully saturated pixels costs < 1 level
        corners = np.array(
            [[255, 0, 0], [0, 255, 0], [0, 0, 255], [255, 255, 0], [0, 255, 255],
             [255, 0, 255]],
            dtype=np.float64,
        ).T.reshape(3, 1, 6)
        rgb = Raster(corners)
        back = ycbcr_to_rgb(rgb_to_ycbcr(rgb))
        assert np.max(np.abs(back.data - rgb.data)) <= 1.0


class TestCenterCrop:
    def test_fraction_one_is_identity(self):
        img = Raster(np.arange(48, dtype=np.float64).reshape(3, 4, 4))
        out = center_crop(img, 1.0)
        assert np.array_equal(out.data, img.data)

    def test_sensor_dims_at_point_six(self):
        assert crop_dims(4056, 3040, 0.6) == (2433, 1824)

    def test_ten_to_five_window_offset(self):
        img = Raster(np.arange(100, dtype=np.float64).reshape(1, 10, 10))
        out = center_crop(img, 0.5)
        assert (out.width, out.height) == (5, 5)
        # centered window starts at floor((10-5)/2) = 2
        assert out.data[0, 0, 0] == img.data[0, 2, 2]

    def test_composition_dims(self):
        img = Raster(np.zeros((1, 200, 300)))
        once = center_crop(center_crop(img, 0.7), 0.5)
        direct = center_crop(img, 0.35)
        assert abs(once.width - direct.width) <= 1
        assert abs(once.height - direct.height) <= 1

    def test_empty_crop(self):
        with pytest.raises(EmptyCrop):
            center_crop(Raster(np.zeros((1, 3, 3))), 0.1)


class TestResample:
    def test_constant_stays_constant(self):
        img = Raster(np.full((2, 5, 7), 42.0))
        for w, h in ((3, 3), (14, 10), (1, 1)):
            out = resample_bilinear(img, w, h)
            assert np.all(out.data == 42.0)

    def test_identity_scale(self):
        rng = np.random.RandomState(2)
        img = Raster(rng.uniform(0, 255, (1, 6, 9)))
        out = resample_bilinear(img, 9, 6)
        assert np.allclose(out.data, img.data)

    def test_two_to_three_kernel_values(self):
        img = Raster(np.array([[[0.0, 255.0]]]))
        out = resample_bilinear(img, 3, 1)
        assert np.allclose(out.data[0, 0], [0.0, 127.5, 255.0])

    def test_respects_min_max(self):
        rng = np.random.RandomState(9)
        img = Raster(rng.uniform(-5, 5, (1, 8, 8)))
        out = resample_bilinear(img, 21, 13)
        assert out.data.min() >= img.data.min() - 1e-12
        assert out.data.max() <= img.data.max() + 1e-12


class TestNormalizeMinmax:
    def test_three_values(self):
        out = normalize_minmax(Raster(np.array([[[10.0, 20.0, 30.0]]])))
        assert np.allclose(out.data[0, 0], [0.0, 127.5, 255.0])

    def test_constant_band_maps_to_zero(self):
        out = normalize_minmax(Raster(np.full((1, 4, 4), 7.0)))
        assert np.all(out.data == 0.0)

    def test_full_range_unchanged(self):
        rng = np.random.RandomState(13)
        data = rng.uniform(0, 255, (1, 10, 10))
        data[0, 0, 0] = 0.0
        data[0, 0, 1] = 255.0
        out = normalize_minmax(Raster(data))
        assert np.allclose(out.data, data, atol=1e-9)

    def test_multiband_rejected(self):
        with pytest.raises(BandCountMismatch):
            normalize_minmax(Raster(np.zeros((3, 2, 2))))


class TestImageIO:
    def test_png_rgb_round_trip(self, tmp_path):
        rng = np.random.RandomState(3)
        img = Raster(rng.randint(0, 256, size=(3, 12, 9)).astype(np.float64))
        path = tmp_path / "img.png"
        write_image(img, path)
        back = read_image(path)
        assert back.data.shape == img.data.shape
        assert np.array_equal(back.data, img.data)

    def test_tiff_float_round_trip(self, tmp_path):
        rng = np.random.RandomState(4)
        img = Raster(rng.uniform(-3, 900, size=(1, 7, 5)).astype(np.float32).astype(np.float64))
        path = tmp_path / "band.tif"
        write_image(img, path)
        back = read_image(path)
        assert np.array_equal(back.data, img.data)

    def test_png_gray_round_trip(self, tmp_path):
        img = Raster(np.arange(64, dtype=np.float64).reshape(1, 8, 8))
        path = tmp_path / "gray.png"
        write_image(img, path)
        back = read_image(path)
        assert np.array_equal(back.data, img.data)

    def test_png_16bit_gray_ingest(self, tmp_path):
        from PIL import Image

        data = (np.arange(64, dtype=np.uint16) * 1000).reshape(8, 8)
        path = tmp_path / "deep.png"
        Image.fromarray(data).save(path)
        back = read_image(path)
        assert back.bands == 1
        assert np.array_equal(back.data[0], data.astype(np.float64))
