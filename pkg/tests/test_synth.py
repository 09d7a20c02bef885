import numpy as np
import pytest

from spinecascade.metrics import cobb_angles
from spinecascade.shapes import ShapeKind
from spinecascade.synth import NUM_VERTEBRAE, SynthConfig, SyntheticSample, synth_generate


@pytest.fixture(scope="module")
def batch():
    return synth_generate(SynthConfig(count=6), seed=42)


class TestConfig:
    def test_defaults_valid(self):
        SynthConfig()

    @pytest.mark.parametrize(
        "kw",
        [
            {"count": 0},
            {"amp_range": (10.0, 5.0)},
            {"noise_sigma": -0.1},
            {"margin": 0.6},
        ],
    )
    def test_invalid_rejected(self, kw):
        with pytest.raises(ValueError):
            SynthConfig(**kw)


class TestGeneration:
    def test_count_and_types(self, batch):
        assert len(batch) == 6
        for s in batch:
            assert isinstance(s, SyntheticSample)
            assert s.corners.kind is ShapeKind.FULL68
            assert s.centers.kind is ShapeKind.CENTERS17

    def test_deterministic_per_seed(self):
        cfg = SynthConfig(count=2)
        a = synth_generate(cfg, seed=7)
        b = synth_generate(cfg, seed=7)
        for x, y in zip(a, b):
            assert np.array_equal(x.image.pixels, y.image.pixels)
            assert np.array_equal(x.corners.points, y.corners.points)
        c = synth_generate(cfg, seed=8)
        assert not np.array_equal(a[0].image.pixels, c[0].image.pixels)

    def test_image_size_ranges(self, batch):
        for s in batch:
            assert 620 <= s.image.height <= 680
            lo, hi = SynthConfig().aspect_range
            assert lo - 0.01 <= s.image.width / s.image.height <= hi + 0.01

    def test_centers_are_corner_means(self, batch):
        for s in batch:
            derived = s.corners.points.reshape(NUM_VERTEBRAE, 4, 2).mean(axis=1)
            assert np.allclose(s.centers.points, derived, atol=1e-12)

    def test_landmarks_inside_image(self, batch):
        for s in batch:
            pts = s.corners.points
            assert np.all(pts[:, 0] >= 0) and np.all(pts[:, 0] < s.image.width)
            assert np.all(pts[:, 1] >= 0) and np.all(pts[:, 1] < s.image.height)

    def test_vertebra_order_top_to_bottom(self, batch):
        for s in batch:
            ys = s.centers.points[:, 1]
            assert np.all(np.diff(ys) > 0)

    def test_vertebrae_brighter_than_background(self, batch):
        for s in batch:
            cx, cy = s.centers.points[8]
            inside = s.image.pixels[int(cy) - 2 : int(cy) + 3, int(cx) - 2 : int(cx) + 3]
            assert inside.mean() > s.image.pixels.mean() + 0.2

    def test_true_cobb_matches_landmark_cobb(self, batch):
        # corners are exact, so geometric Cobb from landmarks must agree with
        # the analytic angles recorded at generation time; arccos amplifies
        # rounding near zero angle to ~sqrt(eps), hence the 1e-5 deg tolerance
        for s in batch:
            geo = cobb_angles(s.corners)
            assert np.isclose(geo.mt, s.true_cobb.mt, atol=1e-5)
            assert np.isclose(geo.pt, s.true_cobb.pt, atol=1e-5)
            assert np.isclose(geo.tl, s.true_cobb.tl, atol=1e-5)

    def test_zero_amplitude_is_straight(self):
        s = synth_generate(SynthConfig(count=1, amp_range=(0.0, 0.0)), seed=0)[0]
        assert s.true_cobb.mt == 0.0
        xs = s.centers.points[:, 0]
        assert np.allclose(xs, xs[0], atol=1e-9)
