import numpy as np
import pytest

from stc_slr.exceptions import ScoreFileMismatchError
from stc_slr.metrics import (
    evaluate,
    fuse_score_arrays,
    fuse_scores,
    read_scores,
    topk_hits,
    write_scores,
)


class TestEvaluate:
    def test_per_instance_and_per_class_differ_on_imbalance(self):
        report = evaluate(np.array([[1.0, 0.0], [1.0, 0.0], [1.0, 0.0]]), [0, 0, 1], topk=(1,))
        assert report.per_instance[1] == pytest.approx(200.0 / 3.0)
        assert report.per_class[1] == pytest.approx(50.0)
        assert report.top1 == report.per_instance[1]
        assert report.num_samples == 3

    def test_k_is_clamped_to_class_count(self):
        report = evaluate(np.array([[0.2, 0.8], [0.9, 0.1]]), [0, 0], topk=(1, 5))
        assert report.per_instance[5] == 100.0
        assert report.per_instance[1] == 50.0

    def test_absent_classes_leave_the_class_mean(self):
        scores = np.eye(4)[[0, 1, 1]]
        report = evaluate(scores, [0, 1, 2], topk=(1,))
        assert report.per_class[1] == pytest.approx(200.0 / 3.0)
        assert set(report.per_class_breakdown) == {0, 1, 2}
        assert report.per_class_breakdown[2] == {"count": 1, "top1": 0.0}

    def test_confusion_counts_top1_predictions(self):
        report = evaluate(np.array([[0.9, 0.1], [0.3, 0.7], [0.6, 0.4]]), [0, 1, 1], topk=(1,))
        np.testing.assert_array_equal(report.confusion, [[1, 0], [1, 1]])
        assert report.to_dict()["confusion"] == [[1, 0], [1, 1]]
        assert report.to_dict()["per_instance"] == {"top1": pytest.approx(66.6667)}

    def test_ties_resolve_to_lower_class(self):
        hits = topk_hits(np.array([[0.5, 0.5, 0.1]]), np.array([1]), 1)
        assert not hits[0]
        assert topk_hits(np.array([[0.5, 0.5, 0.1]]), np.array([0]), 1)[0]

    @pytest.mark.parametrize(
        "scores,labels",
        [
            (np.zeros((0, 3)), []),
            (np.zeros(3), [0]),
            (np.zeros((2, 3)), [0]),
            (np.zeros((2, 3)), [0, 3]),
            (np.zeros((2, 3)), [-1, 0]),
        ],
    )
    def test_invalid_inputs(self, scores, labels):
        with pytest.raises(ValueError):
            evaluate(scores, labels)


class TestScoreFiles:
    def test_write_then_read(self, tmp_path):
        path = str(tmp_path / "out" / "scores.csv")
        scores = np.array([[0.1, 0.2, 0.7], [1.0 / 3.0, -2.5, 1e-9]])
        write_scores(path, ["a", "b"], scores)
        with open(path) as f:
            assert f.readline().strip() == "id,score_0,score_1,score_2"
        ids, read = read_scores(path)
        assert ids == ["a", "b"]
        np.testing.assert_array_equal(read, scores)

    def test_missing_header(self, tmp_path):
        path = tmp_path / "scores.csv"
        path.write_text("a,0.1,0.2\n")
        with pytest.raises(ScoreFileMismatchError, match="header"):
            read_scores(str(path))

    def test_ragged_row(self, tmp_path):
        path = tmp_path / "scores.csv"
        path.write_text("id,score_0,score_1\na,0.1,0.2\nb,0.3\n")
        with pytest.raises(ScoreFileMismatchError, match=":3:"):
            read_scores(str(path))

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            read_scores(str(tmp_path / "nope.csv"))


class TestFusion:
    def test_fusing_with_zeros_is_a_no_op(self):
        scores = np.array([[0.2, 0.8], [0.6, 0.4]])
        ids, fused = fuse_score_arrays(["a", "b"], scores, ["a", "b"], np.zeros((2, 2)))
        assert ids == ["a", "b"]
        np.testing.assert_array_equal(fused, scores)

    def test_fusing_with_itself_doubles(self):
        scores = np.array([[0.2, 0.8], [0.6, 0.4]])
        _, fused = fuse_score_arrays(["a", "b"], scores, ["a", "b"], scores)
        np.testing.assert_array_equal(fused, 2 * scores)

    def test_rows_are_aligned_by_id(self):
        a = np.array([[1.0, 0.0], [0.0, 1.0]])
        b = np.array([[0.0, 5.0], [5.0, 0.0]])
        ids, fused = fuse_score_arrays(["x", "y"], a, ["y", "x"], b)
        assert ids == ["x", "y"]
        np.testing.assert_array_equal(fused, [[6.0, 0.0], [0.0, 6.0]])

    def test_fusion_can_flip_a_prediction(self, tmp_path):
        joint, motion = str(tmp_path / "joint.csv"), str(tmp_path / "motion.csv")
        write_scores(joint, ["a", "b"], np.array([[0.6, 0.4], [0.1, 0.9]]))
        write_scores(motion, ["a", "b"], np.array([[0.0, 0.5], [0.2, 0.8]]))
        labels = {"a": 1, "b": 1}
        assert evaluate(read_scores(joint)[1], [1, 1], topk=(1,)).top1 == 50.0
        assert fuse_scores(joint, motion, labels, topk=(1,)).top1 == 100.0

    def test_mismatched_ids_are_listed(self):
        with pytest.raises(ScoreFileMismatchError) as exc_info:
            fuse_score_arrays(["a", "b", "c"], np.zeros((3, 2)), ["a", "b", "d"], np.zeros((3, 2)))
        assert exc_info.value.divergent_ids == ["c", "d"]
        assert "c, d" in str(exc_info.value)

    def test_mismatched_class_counts(self):
        with pytest.raises(ScoreFileMismatchError, match="class counts"):
            fuse_score_arrays(["a"], np.zeros((1, 2)), ["a"], np.zeros((1, 3)))

    def test_unknown_ids(self, tmp_path):
        path = str(tmp_path / "s.csv")
        write_scores(path, ["a"], np.array([[0.5, 0.5]]))
        with pytest.raises(ScoreFileMismatchError):
            fuse_scores(path, path, {"b": 0})

    def test_repeated_ids_are_rejected(self):
        ids = ["a", "a", "b"]
        with pytest.raises(ScoreFileMismatchError, match="first score file repeats") as exc_info:
            fuse_score_arrays(ids, np.zeros((3, 2)), ids, np.zeros((3, 2)))
        assert exc_info.value.divergent_ids == ["a"]

    def test_repeated_ids_in_the_second_file(self, tmp_path):
        first, second = str(tmp_path / "a.csv"), str(tmp_path / "b.csv")
        write_scores(first, ["a", "b"], np.zeros((2, 2)))
        write_scores(second, ["b", "b"], np.zeros((2, 2)))
        with pytest.raises(ScoreFileMismatchError, match="second score file repeats"):
            fuse_scores(first, second, {"a": 0, "b": 1})
