import numpy as np
import pytest
from PIL import Image

from srpgan import data, metrics
from srpgan.data import ImagePlane, cubic_kernel
from srpgan.tensor import RngStream


def plane(arr):
    return ImagePlane(np.asarray(arr, np.uint8))


class TestCubicKernel:
    def test_values(self):
        assert cubic_kernel(0.0) == 1.0
        assert cubic_kernel(1.0) == 0.0 and cubic_kernel(2.0) == 0.0 and cubic_kernel(-1.0) == 0.0
        assert cubic_kernel(0.5, -0.5) == pytest.approx(0.5625)
        assert cubic_kernel(3.0) == 0.0

    def test_partition_of_unity(self):
        for frac in np.linspace(0, 1, 11):
            taps = frac - np.arange(-1, 3)
            assert np.sum(cubic_kernel(taps)) == pytest.approx(1.0, abs=1e-12)


def direct_resample_1d(v, out_len, antialias=True):
    """Oracle: explicit kernel sum per output sample, clamping taps at the border."""
    n = len(v)
    scale = out_len / n
    st = scale if (antialias and scale < 1) else 1.0
    out = []
    for i in range(out_len):
        c = (i + 0.5) / scale - 0.5
        acc = wsum = 0.0
        for j in range(int(np.floor(c - 2 / st)) - 1, int(np.ceil(c + 2 / st)) + 2):
            wt = st * cubic_kernel(st * (c - j))
            acc += wt * v[min(max(j, 0), n - 1)]
            wsum += wt
        out.append(acc / wsum)
    return np.array(out)


class TestResample:
    @pytest.mark.parametrize("n_in,n_out", [(8, 16), (16, 4), (17, 5), (5, 15), (12, 12)])
    def test_rows_sum_to_one(self, n_in, n_out):
        w = data.resample_weights(n_in, n_out)
        assert np.allclose(w.sum(axis=1), 1.0, atol=1e-6)

    @pytest.mark.parametrize("n_in,n_out", [(10, 20), (24, 6), (9, 4), (7, 21)])
    def test_matches_direct_sum(self, rng, n_in, n_out):
        v = rng.random(n_in) * 255
        got = data.resample_weights(n_in, n_out) @ v
        assert np.allclose(got, direct_resample_1d(v, n_out), atol=1e-9)

    def test_constant_image(self):
        img = plane(np.full((13, 17, 3), 77))
        for w, h in [(34, 26), (5, 4), (17, 13), (40, 7)]:
            out = data.resample_bicubic(img, w, h)
            assert out.samples.shape == (h, w, 3) and np.all(out.samples == 77)

    def test_linear_ramp_preserved_by_upscale(self):
        x = np.arange(32, dtype=np.float64)
        ramp = np.repeat((20 + 6 * x)[None, :, None], 4, axis=0).repeat(3, axis=2)
        up = data.resample_array(ramp, 64, 8)
        i = np.arange(64)
        expected = 20 + 6 * ((i + 0.5) / 2 - 0.5)
        interior = slice(4, 60)
        assert np.all(np.abs(up[2, interior, 0] - expected[interior]) <= 1.0)
        assert np.allclose(up[2, interior, 0], expected[interior], atol=1e-9)

    def test_down_up_idempotent_on_constant(self):
        img = plane(np.full((32, 32, 3), 200))
        assert np.array_equal(data.bicubic_degrade(img, 4).samples, img.samples)

    def test_energy_contracts(self, natural_images):
        for img in natural_images:
            z, y = data.make_pair(img.crop(0, 0, 128, 128), 4)
            assert z.var() <= y.var() + 1e-6

    def test_close_to_pillow_reference(self, natural_images):
        """Pillow's BICUBIC (a = -0.5, antialiased) as an independent resampler."""
        for img in natural_images[:3]:
            hr = data.crop_to_multiple(img, 4)
            z, y = data.make_pair(hr, 4)
            pil = Image.fromarray(hr.samples)
            small = pil.resize((hr.width // 4, hr.height // 4), Image.BICUBIC)
            ref = np.asarray(small.resize((hr.width, hr.height), Image.BICUBIC)).astype(np.float64) / 255
            ours_db = metrics.psnr(z[0].transpose(1, 2, 0), y[0].transpose(1, 2, 0))
            ref_db = metrics.psnr(ref, hr.samples / 255.0)
            assert 15 < ours_db < 60
            assert abs(ours_db - ref_db) < 0.5


class TestMakePair:
    def test_shapes(self, natural_images):
        z, y = data.make_pair(natural_images[0].crop(0, 0, 128, 128), 4)
        assert z.shape == y.shape == (1, 3, 128, 128)
        assert z.dtype == np.float32 and 0 <= z.min() and z.max() <= 1

    def test_scale_one(self, natural_images):
        z, y = data.make_pair(natural_images[0].crop(0, 0, 32, 32), 1)
        assert np.array_equal(z, y)

    def test_crops_indivisible(self, rng):
        img = plane(rng.integers(0, 256, (37, 42, 3)))
        z, y = data.make_pair(img, 4)
        assert y.shape == (1, 3, 36, 40)

    def test_tensor_roundtrip(self, rng):
        img = plane(rng.integers(0, 256, (9, 7, 3)))
        assert np.array_equal(data.from_tensor(data.to_tensor(img)).samples, img.samples)
        assert data.to_tensor(img).max() <= 1.0


class TestPatches:
    def test_count_and_size(self, natural_images):
        p = data.sample_patches(natural_images, RngStream(0), 64, 128)
        assert len(p) == 64 and all(x.samples.shape == (128, 128, 3) for x in p)

    def test_too_large(self, natural_images):
        with pytest.raises(data.DataError):
            data.sample_patches(natural_images, RngStream(0), 4, 5000)

    def test_small_images_skipped(self, natural_images, caplog):
        tiny = plane(np.zeros((8, 8, 3)))
        p = data.sample_patches([tiny] + natural_images[:1], RngStream(0), 5, 64)
        assert len(p) == 5
        assert "skipping 1" in caplog.text

    def test_deterministic(self, natural_images):
        a = data.sample_patches(natural_images, RngStream(3), 10, 32)
        b = data.sample_patches(natural_images, RngStream(3), 10, 32)
        assert all(np.array_equal(x.samples, y.samples) for x, y in zip(a, b))


class TestAugment:
    def test_rotation_180_involution(self, rng):
        img = plane(rng.integers(0, 256, (16, 16, 3)))
        assert np.array_equal(data.rotate(data.rotate(img, 180), 180).samples, img.samples)

    def test_identity_factors(self, rng):
        img = plane(rng.integers(0, 256, (16, 16, 3)))
        assert np.array_equal(data.adjust_brightness(img, 1.0).samples, img.samples)
        assert np.array_equal(data.adjust_saturation(img, 1.0).samples, img.samples)

    def test_zero_saturation_is_gray(self, rng):
        img = plane(rng.integers(0, 256, (16, 16, 3)))
        out = data.adjust_saturation(img, 0.0).samples
        assert np.all(out[..., 0] == out[..., 1]) and np.all(out[..., 1] == out[..., 2])

    def test_brightness_clamps(self):
        out = data.adjust_brightness(plane(np.full((4, 4, 3), 250)), 1.2)
        assert np.all(out.samples == 255)

    def test_preserves_dims_and_range(self, natural_images):
        s = RngStream(11)
        for p in data.sample_patches(natural_images, s, 20, 48):
            out = data.augment(p, s)
            assert out.samples.shape == (48, 48, 3) and out.samples.dtype == np.uint8

    def test_fires_every_augmentation(self, natural_images):
        s = RngStream(2)
        p = natural_images[0].crop(100, 100, 32, 32)
        outs = [data.augment(p, s) for _ in range(40)]
        assert any(not np.array_equal(o.samples, p.samples) for o in outs)

    def test_deterministic(self, natural_images):
        p = natural_images[1].crop(0, 0, 32, 32)
        a = [data.augment(p, RngStream(4)).samples for _ in range(2)]
        assert np.array_equal(*a)


class TestManifest:
    def test_file_with_comments(self, tmp_path, rng):
        for name in ("a.png", "b.png"):
            data.save_image(plane(rng.integers(0, 256, (8, 8, 3))), tmp_path / name)
        m = tmp_path / "train.txt"
        m.write_text("# training set\na.png\n\nb.png  # second\n")
        paths = data.read_manifest(m)
        assert [p.name for p in paths] == ["a.png", "b.png"]

    def test_missing_file(self, tmp_path):
        m = tmp_path / "m.txt"
        m.write_text("nope.png\n")
        with pytest.raises(data.DataError, match="nope.png"):
            data.read_manifest(m)

    def test_directory(self, tmp_path, rng):
        data.save_image(plane(rng.integers(0, 256, (8, 8, 3))), tmp_path / "x.png")
        assert [p.name for p in data.read_manifest(tmp_path)] == ["x.png"]

    def test_alpha_stripped(self, tmp_path):
        Image.new("RGBA", (5, 4), (10, 20, 30, 40)).save(tmp_path / "a.png")
        img = data.load_image(tmp_path / "a.png")
        assert img.samples.shape == (4, 5, 3) and tuple(img.samples[0, 0]) == (10, 20, 30)

    def test_manifest_config(self):
        with pytest.raises(ValueError):
            data.DatasetManifest([], scale=4, patch_size=66)
