import math

import numpy as np
import pytest

from stc_slr.augment import (
    AugmentConfig,
    AugmentParams,
    apply_spatial,
    apply_temporal,
    augment_clips,
    make_eval_view,
    make_views,
    resample,
    sample_params,
)
from stc_slr.exceptions import AugmentConfigError
from stc_slr.pose_data import NUM_JOINTS, ClipTriplet, PoseSequence, motion_of, to_joint_clips
from stc_slr.settings.config_schema import Modality


def _sequence(num_frames=20, seed=0):
    rng = np.random.default_rng(seed)
    frames = rng.uniform(20.0, 230.0, size=(num_frames, NUM_JOINTS, 2))
    return PoseSequence(frames=frames, confidence=np.ones((num_frames, NUM_JOINTS)), sample_id="s")


def _params(**changes):
    values = dict(rotation=0.0, scale=1.0, joint_mask=frozenset(), flip=False, crop_start=0, crop_len=20, target_len=8)
    values.update(changes)
    return AugmentParams(**values)


class TestSampleParams:
    def test_equal_seeds_give_equal_params(self):
        config = AugmentConfig(target_len=8)
        assert sample_params(30, [1, 2, 3], config) == sample_params(30, [1, 2, 3], config)
        assert sample_params(30, [1, 2, 3], config) != sample_params(30, [1, 2, 4], config)

    def test_ranges(self):
        config = AugmentConfig(max_rotation_deg=13.0, scale_range=0.2, crop_min_ratio=0.5, target_len=8)
        for seed in range(50):
            p = sample_params(21, seed, config)
            assert abs(p.rotation) <= math.radians(13.0)
            assert 0.8 <= p.scale <= 1.2
            assert 11 <= p.crop_len <= 21
            assert 0 <= p.crop_start <= 21 - p.crop_len
            assert p.joint_mask <= set(range(NUM_JOINTS))

    def test_identity_config(self):
        p = sample_params(12, 0, AugmentConfig.identity(target_len=12))
        assert (p.rotation, p.scale, p.flip, p.crop_start, p.crop_len) == (0.0, 1.0, False, 0, 12)
        assert p.joint_mask == frozenset()

    @pytest.mark.parametrize(
        "kwargs",
        [
            dict(max_rotation_deg=-1.0),
            dict(scale_range=1.0),
            dict(mask_prob=1.5),
            dict(flip_prob=-0.1),
            dict(crop_min_ratio=0.0),
            dict(target_len=1),
        ],
    )
    def test_invalid_config(self, kwargs):
        with pytest.raises(AugmentConfigError):
            AugmentConfig(**kwargs)

    def test_too_short_sequence(self):
        with pytest.raises(AugmentConfigError):
            sample_params(1, 0, AugmentConfig())


class TestSpatial:
    def test_rotation_preserves_norms_per_part(self):
        clips = to_joint_clips(_sequence())
        rotated = apply_spatial(clips, _params(rotation=0.4))
        for before, after in zip(clips, rotated):
            np.testing.assert_allclose(
                np.linalg.norm(after.data, axis=-1), np.linalg.norm(before.data, axis=-1), rtol=1e-5, atol=1e-6
            )

    def test_scale(self):
        clips = to_joint_clips(_sequence())
        scaled = apply_spatial(clips, _params(scale=1.1))
        np.testing.assert_allclose(scaled.trunk.data, clips.trunk.data * 1.1, rtol=1e-5)

    def test_mask_zeroes_the_same_joints_in_every_frame(self):
        clips = to_joint_clips(_sequence())
        # 0 is the nose, 7 the right wrist, 30 a left thumb joint
        masked = apply_spatial(clips, _params(joint_mask=frozenset({0, 7, 30})))
        assert np.all(masked.trunk.data[:, 0] == 0.0)
        assert np.all(masked.right_hand.data[:, 0] == 0.0)
        assert np.all(masked.left_hand.data[:, 2] == 0.0)
        np.testing.assert_array_equal(masked.trunk.data[:, 1:], clips.trunk.data[:, 1:])

    def test_flip_negates_x_and_swaps_hands(self):
        clips = to_joint_clips(_sequence())
        flipped = apply_spatial(clips, _params(flip=True))
        np.testing.assert_array_equal(flipped.right_hand.data[..., 0], -clips.left_hand.data[..., 0])
        np.testing.assert_array_equal(flipped.left_hand.data[..., 1], clips.right_hand.data[..., 1])
        np.testing.assert_array_equal(flipped.trunk.data[..., 0], -clips.trunk.data[..., 0])

    def test_motion_clips_refused(self):
        clips = to_joint_clips(_sequence())
        motion = ClipTriplet.from_arrays(
            clips.right_hand.data, clips.left_hand.data, clips.trunk.data, Modality.MOTION
        )
        with pytest.raises(AugmentConfigError):
            apply_spatial(motion, _params())


class TestTemporal:
    def test_resample_keeps_endpoints(self):
        data = np.arange(10.0)[:, None, None] * np.ones((1, 2, 2))
        out = resample(data, crop_start=2, crop_len=6, target_len=11)
        assert out.shape == (11, 2, 2)
        assert out[0, 0, 0] == 2.0
        assert out[-1, 0, 0] == 7.0
        np.testing.assert_allclose(out[:, 0, 0], np.linspace(2.0, 7.0, 11), rtol=1e-6)

    def test_crop_window_outside_sequence(self):
        clips = to_joint_clips(_sequence(num_frames=10))
        with pytest.raises(AugmentConfigError):
            apply_temporal(clips, _params(crop_start=5, crop_len=8))
        with pytest.raises(AugmentConfigError):
            apply_temporal(clips, _params(crop_len=1))


class TestViews:
    def test_views_have_target_length_and_consistent_motion(self):
        config = AugmentConfig(target_len=8)
        view = augment_clips(to_joint_clips(_sequence()), 3, config)
        for joint, motion in zip(view.joint, view.motion):
            assert joint.data.shape[0] == 8
            assert motion.modality == Modality.MOTION
            np.testing.assert_array_equal(motion.data, motion_of(joint.data))

    def test_query_and_key_views_differ(self):
        view_q, view_k = make_views(_sequence(), seed_q=11, seed_k=12, config=AugmentConfig(target_len=8))
        assert not np.array_equal(view_q.joint.trunk.data, view_k.joint.trunk.data)

    def test_equal_seeds_reproduce_views(self):
        seq = _sequence()
        a, _ = make_views(seq, seed_q=[0, 1], seed_k=2, config=AugmentConfig(target_len=8))
        b, _ = make_views(seq, seed_q=[0, 1], seed_k=3, config=AugmentConfig(target_len=8))
        for x, y in zip(a.joint, b.joint):
            np.testing.assert_array_equal(x.data, y.data)

    def test_eval_view_is_unaugmented(self):
        seq = _sequence(num_frames=8)
        view = make_eval_view(seq, target_len=8)
        for clip, original in zip(view.joint, to_joint_clips(seq)):
            np.testing.assert_allclose(clip.data, original.data, atol=1e-6)
