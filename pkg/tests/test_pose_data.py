import json
import logging

import numpy as np
import pytest

from stc_slr.exceptions import DatasetFormatError, PoseFormatError
from stc_slr.pose_data import (
    HAND_EDGES,
    NUM_JOINTS,
    SEQUENCE_MAGIC,
    ClipTriplet,
    PartClip,
    PoseSequence,
    crop_resize_hand,
    extract_motion,
    load_dataset,
    motion_of,
    normalize_trunk,
    read_manifest,
    read_sequence,
    separate_parts,
    subset_indices,
    to_joint_clips,
    write_sequence,
)
from stc_slr.settings.config_schema import Modality, Part


def _sequence(num_frames=5, seed=0, **kwargs):
    rng = np.random.default_rng(seed)
    frames = rng.uniform(10.0, 240.0, size=(num_frames, NUM_JOINTS, 2))
    return PoseSequence(frames=frames, confidence=np.ones((num_frames, NUM_JOINTS)), **kwargs)


class TestPoseSequence:
    def test_rejects_wrong_joint_count(self):
        with pytest.raises(PoseFormatError):
            PoseSequence(frames=np.zeros((4, 48, 2)), confidence=np.ones((4, 48)))

    def test_rejects_single_frame(self):
        with pytest.raises(PoseFormatError):
            PoseSequence(frames=np.zeros((1, NUM_JOINTS, 2)), confidence=np.ones((1, NUM_JOINTS)))

    def test_rejects_non_finite(self):
        frames = np.zeros((3, NUM_JOINTS, 2))
        frames[1, 4, 0] = np.nan
        with pytest.raises(PoseFormatError):
            PoseSequence(frames=frames, confidence=np.ones((3, NUM_JOINTS)))

    def test_hand_edges_form_a_tree(self):
        assert len(HAND_EDGES) == 20
        assert {j for edge in HAND_EDGES for j in edge} == set(range(21))


class TestPartSeparation:
    def test_separate_then_merge_is_identity(self):
        seq = _sequence()
        tracks = separate_parts(seq)
        assert tracks.right_hand.shape == (5, 21, 2)
        assert tracks.left_hand.shape == (5, 21, 2)
        assert tracks.trunk.shape == (5, 7, 2)
        np.testing.assert_array_equal(tracks.merge(), seq.frames)

    def test_trunk_keeps_both_wrists(self):
        seq = _sequence()
        np.testing.assert_array_equal(separate_parts(seq).trunk[:, 5:7], seq.frames[:, 5:7])

    def test_hand_crop_is_bounded_and_centered(self):
        hand = np.random.default_rng(1).uniform(50.0, 90.0, size=(4, 21, 2))
        cropped = crop_resize_hand(hand, out_res=256, margin=1.2)
        assert cropped.dtype == np.float32
        assert np.abs(cropped).max() <= 1.0 / 1.2 + 1e-6
        box_center = (cropped.min(axis=1) + cropped.max(axis=1)) / 2.0
        np.testing.assert_allclose(box_center, np.zeros((4, 2)), atol=1e-6)

    def test_hand_crop_of_collapsed_hand(self):
        hand = np.full((3, 21, 2), 42.0)
        np.testing.assert_array_equal(crop_resize_hand(hand), np.zeros((3, 21, 2), dtype=np.float32))

    def test_hand_crop_rejects_bad_shape(self):
        with pytest.raises(PoseFormatError):
            crop_resize_hand(np.zeros((3, 20, 2)))
        with pytest.raises(ValueError):
            crop_resize_hand(np.zeros((3, 21, 2)), out_res=0)

    def test_trunk_normalization_clips_to_unit_box(self):
        trunk = np.array([[[0.0, 0.0], [128.0, 64.0], [300.0, -20.0]] + [[10.0, 10.0]] * 4])
        out = normalize_trunk(trunk, (256, 128))
        np.testing.assert_allclose(out[0, 0], [-1.0, -1.0])
        np.testing.assert_allclose(out[0, 1], [0.0, 0.0])
        np.testing.assert_allclose(out[0, 2], [1.0, -1.0])

    def test_joint_clips(self):
        clips = to_joint_clips(_sequence(num_frames=6))
        assert clips.modality == Modality.JOINT
        assert [c.part for c in clips] == [Part.RIGHT_HAND, Part.LEFT_HAND, Part.TRUNK]
        assert clips.num_frames == 6


class TestMotion:
    def test_motion_first_frame_is_zero(self):
        data = np.arange(12.0).reshape(3, 2, 2)
        motion = motion_of(data)
        np.testing.assert_array_equal(motion[0], np.zeros((2, 2)))
        np.testing.assert_array_equal(motion[1:], np.full((2, 2, 2), 4.0))

    def test_motion_cumsum_recovers_displacement(self):
        clip = to_joint_clips(_sequence(num_frames=8)).trunk
        motion = extract_motion(clip)
        assert motion.modality == Modality.MOTION
        np.testing.assert_allclose(np.cumsum(motion.data, axis=0), clip.data - clip.data[0], atol=1e-5)

    def test_motion_of_motion_refused(self):
        clip = PartClip(Part.TRUNK, Modality.MOTION, np.zeros((3, 7, 2)))
        with pytest.raises(PoseFormatError):
            extract_motion(clip)

    def test_triplet_from_arrays_validates_shapes(self):
        with pytest.raises(PoseFormatError):
            ClipTriplet.from_arrays(np.zeros((3, 21, 2)), np.zeros((3, 21, 2)), np.zeros((3, 21, 2)), Modality.JOINT)


class TestSequenceFiles:
    def test_write_then_read(self, tmp_path):
        seq = _sequence(num_frames=4)
        path = str(tmp_path / "a.stsq")
        write_sequence(path, seq)
        coords, conf = read_sequence(path)
        np.testing.assert_array_equal(coords, seq.frames)
        np.testing.assert_array_equal(conf, seq.confidence)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.stsq"
        path.write_bytes(b"XXXXX" + b"\x00" * 16)
        with pytest.raises(DatasetFormatError) as excinfo:
            read_sequence(str(path))
        assert excinfo.value.offset == 0

    def test_wrong_joint_count_reports_offset(self, tmp_path):
        path = tmp_path / "joints.stsq"
        path.write_bytes(SEQUENCE_MAGIC + np.array([3, 48], dtype="<u4").tobytes())
        with pytest.raises(DatasetFormatError) as excinfo:
            read_sequence(str(path))
        assert excinfo.value.offset == len(SEQUENCE_MAGIC) + 4

    def test_truncated_payload(self, tmp_path):
        seq = _sequence(num_frames=3)
        path = str(tmp_path / "short.stsq")
        write_sequence(path, seq)
        with open(path, "rb") as f:
            blob = f.read()
        with open(path, "wb") as f:
            f.write(blob[:-8])
        with pytest.raises(DatasetFormatError, match="payload size"):
            read_sequence(path)

    def test_non_finite_coordinate_offset(self, tmp_path):
        seq = _sequence(num_frames=2)
        path = str(tmp_path / "nan.stsq")
        write_sequence(path, seq)
        header = len(SEQUENCE_MAGIC) + 8
        with open(path, "r+b") as f:
            f.seek(header + 4 * 10)
            f.write(np.array([np.nan], dtype="<f4").tobytes())
        with pytest.raises(DatasetFormatError) as excinfo:
            read_sequence(path)
        assert excinfo.value.offset == header + 40

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            read_sequence(str(tmp_path / "none.stsq"))


class TestManifest:
    def _write(self, tmp_path, doc):
        path = tmp_path / "manifest.json"
        path.write_text(json.dumps(doc) if isinstance(doc, dict) else doc)
        return str(path)

    def test_invalid_json_reports_offset(self, tmp_path):
        with pytest.raises(DatasetFormatError) as excinfo:
            read_manifest(self._write(tmp_path, '{"samples": [}'))
        assert excinfo.value.offset is not None

    def test_sparse_vocabulary(self, tmp_path):
        doc = {"samples": [], "vocabulary": {"0": "a", "2": "c"}}
        with pytest.raises(DatasetFormatError, match="dense"):
            read_manifest(self._write(tmp_path, doc))

    def test_label_out_of_range(self, tmp_path):
        doc = {"samples": [{"path": "x.stsq", "label": 3}], "vocabulary": {"0": "a", "1": "b"}}
        with pytest.raises(DatasetFormatError, match="label 3"):
            read_manifest(self._write(tmp_path, doc))

    def test_defaults(self, tmp_path):
        doc = {"samples": [{"path": "samples/x_01.stsq", "label": 1}], "vocabulary": {"0": "a", "1": "b"}}
        manifest = read_manifest(self._write(tmp_path, doc))
        entry = manifest.samples[0]
        assert entry.sample_id == "x_01"
        assert entry.split == "train"
        assert manifest.num_classes == 2
        assert manifest.resolution == (256, 256)

    def test_load_dataset_keeps_manifest_order(self, tiny_manifest):
        sequential = load_dataset(tiny_manifest)
        threaded = load_dataset(tiny_manifest, num_workers=4)
        assert sequential.sample_ids == threaded.sample_ids
        assert sequential.sample_ids == [e.sample_id for e in read_manifest(tiny_manifest).samples]
        for a, b in zip(sequential, threaded):
            np.testing.assert_array_equal(a.frames, b.frames)

    def test_splits(self, tiny_dataset):
        train, test = tiny_dataset.split("train"), tiny_dataset.split("test")
        assert len(train) == 18
        assert len(test) == 6
        assert set(train.sample_ids).isdisjoint(test.sample_ids)


class TestSubset:
    labels = np.repeat(np.arange(4), 10)

    def test_size_and_order(self):
        indices = subset_indices(self.labels, 0.25, seed=3)
        assert len(indices) == 10
        assert indices == sorted(indices)

    def test_stratified_keeps_class_shares(self):
        indices = subset_indices(self.labels, 0.5, seed=1)
        counts = np.bincount(self.labels[indices], minlength=4)
        np.testing.assert_array_equal(counts, [5, 5, 5, 5])

    def test_equal_seeds_give_nested_subsets(self):
        small = set(subset_indices(self.labels, 0.2, seed=5))
        medium = set(subset_indices(self.labels, 0.4, seed=5))
        large = set(subset_indices(self.labels, 0.6, seed=5))
        assert small <= medium <= large

    def test_seed_changes_subset(self):
        assert subset_indices(self.labels, 0.5, seed=0) != subset_indices(self.labels, 0.5, seed=1)

    def test_full_fraction_is_everything(self):
        assert subset_indices(self.labels, 1.0, seed=0) == list(range(40))

    @pytest.mark.parametrize("fraction", [0.0, -0.5, 1.5])
    def test_invalid_fraction(self, fraction):
        with pytest.raises(ValueError):
            subset_indices(self.labels, fraction, seed=0)

    def test_too_small_for_stratification_warns(self):
        logger = logging.getLogger("test_subset_fallback")
        with pytest.MonkeyPatch.context() as mp:
            calls = []
            mp.setattr(logger, "warning", lambda msg: calls.append(msg))
            indices = subset_indices(self.labels, 0.05, seed=0, logger=logger)
        assert len(indices) == 2
        assert calls and "unstratified" in calls[0]

    def test_dataset_subset(self, tiny_dataset):
        train = tiny_dataset.split("train")
        half = train.subset(0.5, seed=0)
        assert len(half) == 9
        assert set(half.sample_ids) <= set(train.sample_ids)
        np.testing.assert_array_equal(np.bincount(half.labels), [3, 3, 3])
