"""Feature channels checked against synthetic pop-out stimuli."""

import math

import numpy as np
import pytest

from salience import features as F
from salience.features import (
    ExternalMapSet,
    FeatureConfig,
    build_stack,
    center_map,
    color_features,
    covariance_saliency,
    graph_saliency,
    horizon_map,
    itti_channels,
    load_external_maps,
    torralba_saliency,
)
from salience.fmap import write_fmap
from salience.imgproc import ColorImage, resize_plane


def gray_img(plane):
    return ColorImage(red=plane, green=plane.copy(), blue=plane.copy())


def flat_img(h, w, v=0.5):
    return gray_img(np.full((h, w), v))


def argmax_yx(m):
    return np.unravel_index(np.argmax(m), m.shape)


def near_mask(mask, yx, radius):
    """True when yx is within `radius` pixels of any set pixel."""
    pts = np.argwhere(mask)
    d = np.hypot(pts[:, 0] - yx[0], pts[:, 1] - yx[1])
    return d.min() <= radius


class TestItti:
    def test_constant_image_all_zero(self):
        ci, cc, co = itti_channels(flat_img(96, 96))
        for m in (ci, cc, co):
            assert np.abs(m).max() < 1e-9

    def test_output_shapes(self):
        maps = itti_channels(flat_img(80, 112))
        assert all(m.shape == (80, 112) for m in maps)

    def test_red_disk_drives_color_channel(self):
        h = w = 128
        yy, xx = np.indices((h, w))
        disk = (yy - 40) ** 2 + (xx - 88) ** 2 <= 12 ** 2
        r = np.full((h, w), 0.5)
        g = np.full((h, w), 0.5)
        b = np.full((h, w), 0.5)
        r[disk], g[disk], b[disk] = 0.9, 0.1, 0.1
        _, cc, _ = itti_channels(ColorImage(red=r, green=g, blue=b))
        ay, ax = argmax_yx(cc)
        assert 28 <= ay <= 52 and 76 <= ax <= 100

    def test_oblique_bar_drives_orientation_channel(self):
        h = w = 128
        yy, xx = np.indices((h, w))
        i = 0.5 + 0.25 * np.sin(2 * np.pi * yy / 8)
        bar = (np.abs((yy - 70) - (xx - 30)) <= 3) \
            & (np.abs(yy - 70) <= 14) & (np.abs(xx - 30) <= 14)
        i2 = i.copy()
        i2[bar] = 0.5 + 0.25 * np.sin(2 * np.pi * (yy[bar] + xx[bar]) / 8)
        _, _, co = itti_channels(gray_img(i2))
        # conspicuity lives on a coarse grid, so allow a few pixels of slack
        assert near_mask(bar, argmax_yx(co), radius=6)

    def test_small_image_rejected(self):
        with pytest.raises(ValueError):
            itti_channels(flat_img(50, 128))


class TestColor:
    def test_eleven_planes(self):
        rng = np.random.default_rng(0)
        img = ColorImage(*(rng.random((64, 48)) for _ in range(3)))
        planes = color_features(img)
        assert len(planes) == 11
        assert all(p.shape == (64, 48) for p in planes)

    def test_single_color_probability_planes_constant(self):
        planes = color_features(flat_img(40, 40, v=0.62))
        for p in planes[3:]:
            assert p.max() - p.min() < 1e-12

    def test_rare_color_scores_low(self):
        h = w = 128
        plane = np.zeros((h, w))
        plane[:4, :40] = 1.0  # ~1% white
        joint = color_features(gray_img(plane))[3]
        assert joint[:4, :40].max() < joint[64:, :].min()


class TestHorizon:
    def test_split_image_band_at_midline(self):
        h = w = 128
        yy = np.indices((h, w))[0]
        split = np.where(yy < h // 2, 0.9, 0.1).astype(np.float64)
        hm = horizon_map(gray_img(split))
        assert abs(int(np.argmax(hm[:, 0])) - h // 2) <= 2
        assert np.all(hm == hm[:, :1])  # horizontally constant band

    def test_constant_image_centers_band(self):
        hm = horizon_map(flat_img(101, 60))
        assert int(np.argmax(hm[:, 0])) == 50
        hm = horizon_map(flat_img(100, 60))
        assert int(np.argmax(hm[:, 0])) == 49  # tie broken toward center

    def test_override_passthrough(self):
        rng = np.random.default_rng(3)
        raster = rng.random((10, 12))
        img = flat_img(64, 64)
        got = horizon_map(img, override=raster)
        want = F._zscore(resize_plane(raster, 64, 64))
        np.testing.assert_array_equal(got, want)


class TestTorralba:
    def test_constant_image_constant_plane(self):
        t = torralba_saliency(flat_img(80, 80, v=0.4))
        assert np.isfinite(t).all()
        assert t.max() - t.min() < 1e-9

    def test_gabor_patch_pops_out(self):
        rng = np.random.default_rng(0)
        h = w = 128
        yy, xx = np.indices((h, w))
        base = 0.5 + 0.05 * rng.standard_normal((h, w))
        patch = (np.abs(yy - 90) <= 10) & (np.abs(xx - 30) <= 10)
        tex = 0.5 + 0.4 * np.sin(2 * np.pi * xx / 6)
        base[patch] = tex[patch]
        t = torralba_saliency(gray_img(np.clip(base, 0, 1)))
        assert near_mask(patch, argmax_yx(t), radius=4)

    @pytest.mark.parametrize("seed", [0, 1])
    def test_finite_on_random_images(self, seed):
        rng = np.random.default_rng(seed)
        img = ColorImage(*(rng.random((70, 90)) for _ in range(3)))
        assert np.isfinite(torralba_saliency(img)).all()

    def test_small_image_rejected(self):
        with pytest.raises(ValueError):
            torralba_saliency(flat_img(40, 80))


class TestGraph:
    def test_stationary_sums_to_one(self):
        rng = np.random.default_rng(5)
        v = F._stationary(rng.random((24, 32)))
        assert abs(v.sum() - 1.0) < 1e-9
        assert np.all(v >= 0)

    def test_constant_image_near_uniform(self):
        g = graph_saliency(flat_img(96, 96))
        assert g.max() - g.min() < 1e-6

    def test_bright_square_pops_out(self):
        h = w = 128
        yy, xx = np.indices((h, w))
        sq = np.full((h, w), 0.1)
        box = (np.abs(yy - 50) <= 12) & (np.abs(xx - 80) <= 12)
        sq[box] = 0.9
        g = graph_saliency(gray_img(sq))
        assert near_mask(box, argmax_yx(g), radius=6)


class TestCovsal:
    def test_constant_image_near_constant(self):
        c = covariance_saliency(flat_img(96, 96))
        assert c.max() - c.min() < 1e-9

    def test_textured_box_pops_out(self):
        rng = np.random.default_rng(0)
        h = w = 128
        yy, xx = np.indices((h, w))
        plane = np.full((h, w), 0.5)
        box = (np.abs(yy - 60) <= 16) & (np.abs(xx - 40) <= 16)
        plane[box] = np.clip(0.5 + 0.3 * rng.standard_normal(box.sum()), 0, 1)
        c = covariance_saliency(gray_img(plane))
        assert near_mask(box, argmax_yx(c), radius=6)

    def test_override_passthrough(self):
        rng = np.random.default_rng(1)
        raster = rng.random((30, 30))
        got = covariance_saliency(flat_img(64, 64), override=raster)
        np.testing.assert_array_equal(got, F._zscore(resize_plane(raster, 64, 64)))

    def test_small_image_rejected(self):
        with pytest.raises(ValueError):
            covariance_saliency(flat_img(32, 80))


class TestCenter:
    def test_peak_at_center_odd(self):
        m = center_map(41, 31)
        assert argmax_yx(m) == (15, 20)
        assert m[15, 20] == 1.0

    def test_fourfold_symmetry_exact(self):
        m = center_map(42, 31)
        np.testing.assert_array_equal(m, m[:, ::-1])
        np.testing.assert_array_equal(m, m[::-1, :])

    def test_corner_value_closed_form(self):
        m = center_map(200, 200)
        want = math.exp(-(2.0 * 99.5 ** 2) / (2.0 * 50.0 ** 2))
        assert abs(m[0, 0] - want) < 1e-12
        assert abs(m[0, 0] - 0.0198) < 1e-3

    def test_bad_dims_rejected(self):
        with pytest.raises(ValueError):
            center_map(0, 10)


class TestExternal:
    def test_multichannel_file_native_size(self, tmp_path):
        rng = np.random.default_rng(0)
        stack = rng.standard_normal((3, 20, 30)).astype(np.float32)
        write_fmap(tmp_path / "img7.fmap", stack)
        ext = ExternalMapSet(root=tmp_path, channels=3)
        planes = load_external_maps(ext, "img7", size=(30, 20))
        assert len(planes) == 3
        for got, want in zip(planes, stack):
            np.testing.assert_array_equal(got, want.astype(np.float64))

    def test_per_channel_directory(self, tmp_path):
        d = tmp_path / "pic"
        d.mkdir()
        write_fmap(d / "0.fmap", np.zeros((4, 4), dtype=np.float32))
        write_fmap(d / "1.fmap", np.ones((4, 4), dtype=np.float32))
        planes = load_external_maps(ExternalMapSet(tmp_path, 2), "pic", size=(4, 4))
        assert len(planes) == 2
        assert planes[0].max() == 0.0 and planes[1].min() == 1.0

    def test_missing_image_rejected(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_external_maps(ExternalMapSet(tmp_path, 2), "ghost")

    def test_channel_count_mismatch(self, tmp_path):
        write_fmap(tmp_path / "a.fmap", np.zeros((2, 4, 4), dtype=np.float32))
        with pytest.raises(ValueError):
            load_external_maps(ExternalMapSet(tmp_path, 5), "a")

    def test_indicator_round_trip(self, tmp_path):
        ind = np.zeros((40, 40), dtype=np.float32)
        ind[10:20, 25:35] = 1.0
        write_fmap(tmp_path / "box.fmap", ind)
        plane = load_external_maps(ExternalMapSet(tmp_path, 1), "box")[0]
        assert plane.shape == (200, 200)
        # interior of the scaled box stays 1, far field stays 0
        assert np.abs(plane[60:90, 135:165] - 1.0).max() < 1e-9
        assert np.abs(plane[120:, :100]).max() < 1e-9

    def test_bad_channel_names_rejected(self, tmp_path):
        d = tmp_path / "pic"
        d.mkdir()
        write_fmap(d / "one.fmap", np.zeros((4, 4), dtype=np.float32))
        with pytest.raises(ValueError):
            load_external_maps(ExternalMapSet(tmp_path, 1), "pic")

    def test_gapped_indices_rejected(self, tmp_path):
        d = tmp_path / "pic"
        d.mkdir()
        write_fmap(d / "0.fmap", np.zeros((4, 4), dtype=np.float32))
        write_fmap(d / "2.fmap", np.zeros((4, 4), dtype=np.float32))
        with pytest.raises(ValueError):
            load_external_maps(ExternalMapSet(tmp_path, 2), "pic")

    def test_multichannel_per_index_file_rejected(self, tmp_path):
        d = tmp_path / "pic"
        d.mkdir()
        write_fmap(d / "0.fmap", np.zeros((2, 4, 4), dtype=np.float32))
        with pytest.raises(ValueError):
            load_external_maps(ExternalMapSet(tmp_path, 2), "pic")


def random_img(seed, h=100, w=120):
    rng = np.random.default_rng(seed)
    return ColorImage(*(np.clip(0.5 + 0.25 * rng.standard_normal((h, w)), 0, 1)
                        for _ in range(3)))


class TestStack:
    def test_full_low_mid_stack_is_32(self):
        st = build_stack(random_img(0))
        assert st.n_channels == 32
        assert st.groups == {
            "subbands": (0, 13), "itti": (13, 16), "color": (16, 27),
            "horizon": (27, 28), "torralba": (28, 29), "gbvs": (29, 30),
            "covsal": (30, 31), "center": (31, 32),
        }
        assert st.height == st.width == 200

    def test_with_885_external_is_917(self):
        rng = np.random.default_rng(2)
        ext = [rng.random((20, 20)) for _ in range(885)]
        st = build_stack(random_img(1), external=ext)
        assert st.n_channels == 917
        assert st.groups["external"] == (32, 917)

    def test_external_only_passthrough_count(self):
        rng = np.random.default_rng(3)
        off = FeatureConfig(**{n: False for n in F.GROUP_ORDER[:-1]})
        st = build_stack(random_img(2), config=off,
                         external=[rng.random((20, 20)) for _ in range(4)])
        assert st.n_channels == 4
        assert st.groups == {"external": (0, 4)}

    def test_empty_config_rejected(self):
        off = FeatureConfig(**{n: False for n in F.GROUP_ORDER[:-1]})
        with pytest.raises(ValueError):
            build_stack(random_img(0), config=off)

    def test_channels_z_scored(self):
        st = build_stack(random_img(4))
        flat = st.planes.reshape(st.n_channels, -1)
        means, var = flat.mean(axis=1), flat.var(axis=1)
        for m, v in zip(means, var):
            assert abs(m) < 1e-6
            assert abs(v - 1.0) < 1e-6 or v < 1e-12

    def test_disabling_group_removes_only_its_span(self):
        full = build_stack(random_img(5))
        part = build_stack(random_img(5), config=FeatureConfig(color=False))
        assert part.n_channels == 21
        names = list(part.groups)
        assert names == ["subbands", "itti", "horizon", "torralba",
                         "gbvs", "covsal", "center"]
        np.testing.assert_array_equal(part.planes[:16], full.planes[:16])
        np.testing.assert_array_equal(part.planes[16:], full.planes[27:])

    def test_deterministic(self):
        a = build_stack(random_img(6))
        b = build_stack(random_img(6))
        np.testing.assert_array_equal(a.planes, b.planes)

    def test_rows_lookup(self):
        st = build_stack(random_img(7), config=FeatureConfig(
            subbands=False, itti=False, color=True, horizon=True,
            torralba=False, gbvs=False, covsal=False, center=True))
        coords = np.array([[0, 0], [13, 27], [199, 199]])
        rows = st.rows(coords)
        assert rows.shape == (3, 13)
        assert rows[1, 0] == st.planes[0, 13, 27]

    def test_bad_group_span_rejected(self):
        with pytest.raises(ValueError):
            F.FeatureStack(planes=np.zeros((2, 4, 4)), groups={"a": (0, 3)})
