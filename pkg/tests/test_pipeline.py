import numpy as np
import pytest
import torch

from spinecascade.cascade import TrainConfig, predict
from spinecascade.imaging import GrayImage
from spinecascade.network import tiny_config
from spinecascade.pipeline import (
    CENTER_PATCH,
    CORNER_PATCH,
    ROI_H,
    ROI_W,
    FullTrainConfig,
    PreprocessConfig,
    RoI,
    centers_from_corners,
    extract_rois,
    full_inference,
    init_sensitivity_experiment,
    localize_corners,
    preprocess,
    run_pipeline,
    train_full,
)
from spinecascade.shapes import Shape, ShapeKind
from spinecascade.synth import SynthConfig, synth_generate

torch.set_num_threads(1)


@pytest.fixture(scope="module")
def synth_samples():
    return synth_generate(SynthConfig(count=4), seed=21)


@pytest.fixture(scope="module")
def tiny_model(synth_samples):
    data = [(s.image, s.corners) for s in synth_samples]
    cfg = FullTrainConfig(
        train=TrainConfig(epochs=1, encoder=tiny_config(), seed=0),
        n_stages=1,
        flip_augment=False,
    )
    return train_full(data[:3], data[3:], cfg)


class TestPreprocess:
    def test_scale_factors(self):
        raw = GrayImage(np.random.default_rng(0).uniform(0, 1, size=(1000, 480)))
        working, (sx, sy) = preprocess(raw, PreprocessConfig())
        assert working.height == 680
        assert sy == 680 / 1000
        assert sx == working.width / 480
        assert working.width == round(480 * 680 / 1000)

    def test_identity_height(self):
        raw = GrayImage(np.random.default_rng(1).uniform(0, 1, size=(680, 300)))
        working, scale = preprocess(raw, PreprocessConfig())
        assert (working.height, working.width) == (680, 300)
        assert scale == (1.0, 1.0)


class TestRoiGeometry:
    def test_patch_constants(self):
        assert (ROI_H, ROI_W) == (80, 96)
        assert (CENTER_PATCH.crop_h, CENTER_PATCH.crop_w) == (80, 192)
        assert (CENTER_PATCH.out_h, CENTER_PATCH.out_w) == (48, 80)
        assert (CORNER_PATCH.crop_h, CORNER_PATCH.crop_w) == (48, 48)

    def test_origin_formula(self):
        img = GrayImage(np.random.default_rng(2).uniform(0, 1, size=(680, 320)))
        centers = Shape(np.tile([160.4, 300.6], (17, 1)), ShapeKind.CENTERS17)
        rois = extract_rois(img, centers)
        assert len(rois) == 17
        # origin = round(center) - (ROI_W//2, ROI_H//2)
        assert rois[0].origin == (160 - 48, 301 - 40)
        assert (rois[0].image.height, rois[0].image.width) == (ROI_H, ROI_W)

    def test_interior_roi_matches_image(self):
        img = GrayImage(np.random.default_rng(3).uniform(0, 1, size=(680, 320)))
        centers = Shape(np.tile([160.0, 300.0], (17, 1)), ShapeKind.CENTERS17)
        roi = extract_rois(img, centers)[0]
        x0, y0 = roi.origin
        assert np.array_equal(roi.image.pixels, img.pixels[y0 : y0 + 80, x0 : x0 + 96])

    def test_off_image_roi_zero_padded(self):
        img = GrayImage(np.full((680, 320), 0.5))
        centers = Shape(np.tile([0.0, 0.0], (17, 1)), ShapeKind.CENTERS17)
        roi = extract_rois(img, centers)[0]
        assert roi.origin == (-48, -40)
        assert np.all(roi.image.pixels[:40, :] == 0.0)
        assert np.all(roi.image.pixels[:, :48] == 0.0)

    def test_roi_size_enforced(self):
        with pytest.raises(ValueError):
            RoI(origin=(0, 0), image=GrayImage(np.zeros((40, 96))))

    def test_requires_centers(self):
        img = GrayImage(np.zeros((680, 320)))
        with pytest.raises(ValueError):
            extract_rois(img, Shape(np.zeros((68, 2)), ShapeKind.FULL68))


class TestCentersFromCorners:
    def test_mean_of_four(self):
        pts = np.zeros((68, 2))
        pts[0:4] = [[0, 0], [2, 0], [0, 4], [2, 4]]
        centers = centers_from_corners(Shape(pts, ShapeKind.FULL68))
        assert np.allclose(centers.points[0], [1, 2])

    def test_kind_check(self):
        with pytest.raises(ValueError):
            centers_from_corners(Shape(np.zeros((17, 2)), ShapeKind.CENTERS17))


class TestInference:
    def test_always_68_points(self, tiny_model, synth_samples):
        out = full_inference(synth_samples[3].image, tiny_model)
        assert out.kind is ShapeKind.FULL68
        assert out.points.shape == (68, 2)

    def test_blank_image(self, tiny_model):
        out = full_inference(GrayImage(np.zeros((700, 300))), tiny_model)
        assert out.points.shape == (68, 2)
        assert np.all(np.isfinite(out.points))

    def test_noise_image(self, tiny_model):
        noise = GrayImage(np.random.default_rng(4).uniform(0, 1, size=(650, 310)))
        out = full_inference(noise, tiny_model)
        assert out.points.shape == (68, 2)

    def test_roi_independence_bit_exact(self, tiny_model, synth_samples):
        # corner localization in one RoI must not depend on the other RoIs
        result = run_pipeline(synth_samples[3].image, tiny_model)
        rois = extract_rois(result.working, result.center_stages[-1])
        for v in (0, 8, 16):
            alone = localize_corners(rois[v], tiny_model.corner_model)
            joint = result.corners_working.points[4 * v : 4 * v + 4]
            assert np.array_equal(alone.points, joint)

    def test_frame_roundtrip(self, tiny_model, synth_samples):
        # working -> raw -> working must cost well under half a pixel
        result = run_pipeline(synth_samples[3].image, tiny_model)
        back = result.corners_raw.points * np.array(result.scale)
        assert np.abs(back - result.corners_working.points).max() < 0.5

    def test_corner_points_near_their_roi(self, tiny_model, synth_samples):
        result = run_pipeline(synth_samples[3].image, tiny_model)
        rois = extract_rois(result.working, result.center_stages[-1])
        for v in range(17):
            pts = result.corners_working.points[4 * v : 4 * v + 4]
            x0, y0 = rois[v].origin
            # corner updates live inside (or marginally around) their RoI frame
            assert np.all(pts[:, 0] > x0 - ROI_W) and np.all(pts[:, 0] < x0 + 2 * ROI_W)
            assert np.all(pts[:, 1] > y0 - ROI_H) and np.all(pts[:, 1] < y0 + 2 * ROI_H)

    def test_center_init_override(self, tiny_model, synth_samples):
        img = synth_samples[3].image
        working, _ = preprocess(img, tiny_model.preprocess)
        init = Shape(
            np.tile([working.width / 2, working.height / 2], (17, 1)), ShapeKind.CENTERS17
        )
        result = run_pipeline(img, tiny_model, center_init=init)
        assert np.array_equal(result.center_stages[0].points, init.points)


class TestTrainFull:
    def test_history_recorded(self, tiny_model):
        assert "center_val_stage_mse" in tiny_model.history
        assert len(tiny_model.history["center_val_stage_mse"]) == 2  # S^0, S^1
        assert len(tiny_model.history["corner_val_stage_mse"]) == 2

    def test_empty_train_rejected(self):
        with pytest.raises(ValueError):
            train_full([], [], FullTrainConfig())

    def test_flip_augment_changes_mean(self, synth_samples):
        data = [(s.image, s.corners) for s in synth_samples[:2]]
        cfg = dict(train=TrainConfig(epochs=1, encoder=tiny_config()), n_stages=0)
        plain = train_full(data, [], FullTrainConfig(flip_augment=False, **cfg))
        flipped = train_full(data, [], FullTrainConfig(flip_augment=True, **cfg))
        # flip augmentation symmetrizes the mean shape about the vertical axis
        assert not np.allclose(plain.center_model.mean.points, flipped.center_model.mean.points)
        x = flipped.center_model.mean.points[:, 0]
        assert abs(x.mean() - 0.5) < abs(plain.center_model.mean.points[:, 0].mean() - 0.5) + 1e-9

    def test_corner_model_kind(self, tiny_model):
        assert tiny_model.corner_model.kind is ShapeKind.CORNERS4
        assert tiny_model.center_model.kind is ShapeKind.CENTERS17


class TestInitSensitivity:
    def test_rows_and_zero_sigma(self, tiny_model, synth_samples):
        data = [(s.image, s.corners) for s in synth_samples[3:]]
        rows = init_sensitivity_experiment(
            tiny_model, data, sigmas=[0.0, 0.05], draws=2, seed=0
        )
        assert [r["sigma"] for r in rows] == [0.0, 0.05]
        assert rows[0]["initial_mse"] <= rows[1]["initial_mse"]
        assert all(np.isfinite(r["final_mse"]) for r in rows)

    def test_deterministic(self, tiny_model, synth_samples):
        data = [(s.image, s.corners) for s in synth_samples[3:]]
        a = init_sensitivity_experiment(tiny_model, data, [0.02], draws=2, seed=5)
        b = init_sensitivity_experiment(tiny_model, data, [0.02], draws=2, seed=5)
        assert a == b
