import math

import numpy as np
import pytest
from scipy.special import expit

from cvid.core.errors import ArityError, ConfigurationError
from cvid.core.imaging import ImageTensor, clamp
from cvid.core.rain import (
    RainParams,
    Streak,
    density_ground_truth,
    render_streaks,
    segment_coverage,
    synthesize_rain,
)
from cvid.core.scenes import procedural_scene


def _point_segment_distance(p, a, b):
    (pr, pc), (ar, ac), (br, bc) = p, a, b
    dr, dc = br - ar, bc - ac
    length2 = dr * dr + dc * dc
    t = 0.0 if length2 == 0 else max(0.0, min(1.0, ((pr - ar) * dr + (pc - ac) * dc) / length2))
    return math.hypot(pr - (ar + t * dr), pc - (ac + t * dc))


class TestSynthesizeRain:
    def test_no_streaks_leaves_image_untouched(self, random_image):
        clean = random_image(12, 12)
        rainy, layer = synthesize_rain(clean, RainParams(streak_count=0))
        assert np.array_equal(rainy.data, clean.data)
        assert np.all(layer.data == 0.0)

    def test_single_horizontal_streak_matches_brute_force(self):
        height, width = 12, 20
        streak = Streak(center_row=5.0, center_col=9.5, length=10.0, angle=90.0, intensity=(0.5, 0.0, 0.0))
        layer = render_streaks(height, width, [streak])
        rainy = clamp(ImageTensor(ImageTensor.zeros(height, width).data + layer.data))

        a, b = streak.endpoints()
        expected = np.zeros((height, width))
        for i in range(height):
            for j in range(width):
                cover = min(1.0, max(0.0, 1.0 - _point_segment_distance((i, j), a, b)))
                expected[i, j] = 0.5 * cover
        assert np.allclose(rainy.data[:, :, 0], expected, atol=1e-12)
        assert np.all(rainy.data[:, :, 1:] == 0.0)
        assert np.all(rainy.data[:, :, 0][5, 5:15] == 0.5)
        assert np.all(rainy.data[:, :, 0][:3] == 0.0)

    def test_same_seed_is_bit_identical(self):
        clean = procedural_scene(24, 24, seed=2)
        params = RainParams(streak_count=20, seed=99)
        first, first_layer = synthesize_rain(clean, params)
        second, second_layer = synthesize_rain(clean, params)
        assert np.array_equal(first.data, second.data)
        assert np.array_equal(first_layer.data, second_layer.data)

    def test_different_seed_differs(self):
        clean = procedural_scene(24, 24, seed=2)
        a, _ = synthesize_rain(clean, RainParams(streak_count=20, seed=1))
        b, _ = synthesize_rain(clean, RainParams(streak_count=20, seed=2))
        assert not np.array_equal(a.data, b.data)

    def test_additive_where_not_saturated(self):
        clean = procedural_scene(32, 32, seed=5)
        rainy, layer = synthesize_rain(clean, RainParams(streak_count=40, seed=3))
        assert np.all(layer.data >= 0.0)
        unsaturated = rainy.data < 1.0
        assert np.allclose((rainy.data - clean.data)[unsaturated], layer.data[unsaturated], atol=1e-12)

    def test_layer_differs_across_channels(self):
        rainy, layer = synthesize_rain(ImageTensor.zeros(24, 24), RainParams(streak_count=10, seed=4))
        assert not np.array_equal(layer.data[:, :, 0], layer.data[:, :, 1])
        assert not np.array_equal(layer.data[:, :, 1], layer.data[:, :, 2])

    def test_grayscale_rejected(self, random_image):
        with pytest.raises(ArityError):
            synthesize_rain(random_image(channels=1), RainParams())

    def test_blur_spreads_rain(self):
        streak = Streak(8.0, 8.0, 6.0, 0.0, (1.0, 1.0, 1.0))
        sharp = render_streaks(16, 16, [streak])
        blurred = render_streaks(16, 16, [streak], blur_radius=1.5)
        assert np.count_nonzero(blurred.data) > np.count_nonzero(sharp.data)

    def test_coverage_peaks_on_segment(self):
        cover = segment_coverage(9, 9, Streak(4.0, 4.0, 4.0, 0.0), thickness=1.0)
        assert cover[4, 4] == 1.0
        assert cover[4, 0] == 0.0


class TestRainParams:
    @pytest.mark.parametrize(
        "kwargs",
        [
            {"streak_count": -1},
            {"length_range": (10.0, 5.0)},
            {"angle_range": (30.0, -30.0)},
            {"intensity_ranges": ((0.1, 0.2), (0.1, 1.2), (0.0, 0.1))},
            {"intensity_ranges": ((0.1, 0.2), (0.1, 0.2))},
            {"thickness": 0.0},
            {"blur_radius": -1.0},
            {"seed": -1},
        ],
    )
    def test_invalid(self, kwargs):
        with pytest.raises(ConfigurationError):
            RainParams(**kwargs)

    def test_dict_round_trip(self):
        params = RainParams(streak_count=7, length_range=(2, 3), seed=5)
        assert RainParams.from_dict(params.to_dict()) == params


class TestDensityGroundTruth:
    def test_no_rain_gives_zero_maps(self, random_image):
        clean = random_image(8, 8)
        for plane in density_ground_truth(clean, clean):
            assert np.all(plane.data == 0.0)

    def test_unit_residual_is_sigmoid_one(self):
        rainy = np.zeros((2, 2, 3))
        rainy[0, 0, 1] = 1.0
        _, g, _ = density_ground_truth(ImageTensor.zeros(2, 2), ImageTensor(rainy))
        assert g.data[0, 0, 0] == pytest.approx(0.7310585786300049, abs=1e-15)
        assert g.data[1, 1, 0] == 0.0

    def test_rule_is_exact_on_crafted_residuals(self):
        residuals = np.array([0.0, 1.0, 0.5, 1 / 255, 0.0, 0.25, 1e-9, 0.75])
        clean = np.full((2, 4, 3), 0.125)
        rainy = clean + np.stack([residuals.reshape(2, 4)] * 3, axis=2)
        planes = density_ground_truth(ImageTensor(clean), ImageTensor(rainy))
        for c, plane in enumerate(planes):
            for (i, j), value in np.ndenumerate(plane.data[:, :, 0]):
                r = rainy[i, j, c] - clean[i, j, c]
                assert value == (0.0 if r == 0.0 else expit(r))

    def test_maps_distinct_across_channels_on_streaks(self):
        params = RainParams(
            streak_count=15,
            intensity_ranges=((0.7, 0.8), (0.4, 0.5), (0.1, 0.2)),
            seed=8,
        )
        clean = ImageTensor(np.full((24, 24, 3), 0.2))
        rainy, layer = synthesize_rain(clean, params)
        d_r, d_g, d_b = (p.data[:, :, 0] for p in density_ground_truth(clean, rainy))
        streak = layer.data[:, :, 0] > 0
        assert streak.any()
        assert np.all(d_r[streak] != d_g[streak])
        assert np.all(d_g[streak] != d_b[streak])
        assert np.all(d_r[streak] != d_b[streak])
        assert np.all(d_r[~streak] == 0.0)

    def test_values_in_unit_interval(self):
        clean = procedural_scene(16, 16, seed=1)
        rainy, _ = synthesize_rain(clean, RainParams(streak_count=30, seed=2))
        for plane in density_ground_truth(clean, rainy):
            assert plane.data.min() >= 0.0 and plane.data.max() <= 1.0

    def test_shape_mismatch(self, random_image):
        with pytest.raises(ArityError):
            density_ground_truth(random_image(4, 4), random_image(4, 5))


class TestScenes:
    def test_deterministic_and_on_grid(self):
        a = procedural_scene(20, 30, seed=4)
        assert np.array_equal(a.data, procedural_scene(20, 30, seed=4).data)
        assert a.shape == (20, 30, 3)
        assert np.array_equal(np.rint(a.data * 255) / 255, a.data)
        assert a.data.max() <= 0.75 + 1e-12
