"""
Per-instance / per-class top-k accuracy, score files and late score fusion.
"""

import csv
import os

from collections import Counter
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Sequence, Tuple

import numpy as np

from stc_slr.exceptions import ScoreFileMismatchError


@dataclass
class EvalReport:
    """
    Accuracy report in percent.

    Attributes:
        per_instance (Dict[int, float]): k -> correct / total.
        per_class (Dict[int, float]): k -> unweighted mean of class accuracies over classes present.
        per_class_breakdown (Dict[int, Dict[str, float]]): class -> {"count", "top1"}.
        confusion (np.ndarray): (C, C) counts, rows are true labels, columns top-1 predictions.
        num_samples (int): Number of evaluated samples.
    """

    per_instance: Dict[int, float]
    per_class: Dict[int, float]
    per_class_breakdown: Dict[int, Dict[str, float]] = field(default_factory=dict)
    confusion: np.ndarray = None
    num_samples: int = 0

    @property
    def top1(self) -> float:
        return self.per_instance[1]

    def to_dict(self) -> dict:
        return {
            "per_instance": {f"top{k}": round(v, 4) for k, v in self.per_instance.items()},
            "per_class": {f"top{k}": round(v, 4) for k, v in self.per_class.items()},
            "per_class_breakdown": {str(c): v for c, v in self.per_class_breakdown.items()},
            "confusion": [] if self.confusion is None else self.confusion.astype(int).tolist(),
            "num_samples": self.num_samples,
        }


def topk_hits(scores: np.ndarray, labels: np.ndarray, k: int) -> np.ndarray:
    """Boolean per sample: label among the k highest scores (ties resolved toward lower class ids)."""
    order = np.argsort(-scores, axis=1, kind="stable")[:, :k]
    return (order == labels[:, None]).any(axis=1)


def evaluate(scores: np.ndarray, labels: Sequence[int], topk: Sequence[int] = (1, 5)) -> EvalReport:
    """
    Score a (N, C) matrix against integer labels.

    k larger than C is clamped to C. Classes absent from `labels` are left out of the per-class mean.

    Example:
        evaluate(np.array([[1, 0], [1, 0], [1, 0]]), [0, 0, 1], topk=(1,)).per_class[1]  # 50.0
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if scores.ndim != 2 or scores.shape[0] == 0:
        raise ValueError(f"evaluate needs a non-empty (N, C) score matrix, got {scores.shape}")
    if labels.shape != (scores.shape[0],):
        raise ValueError(f"{labels.shape[0]} labels for {scores.shape[0]} score rows")
    num_classes = scores.shape[1]
    if labels.min() < 0 or labels.max() >= num_classes:
        raise ValueError(f"labels must lie in 0..{num_classes - 1}")

    present = np.unique(labels)
    per_instance, per_class = {}, {}
    for k in topk:
        hits = topk_hits(scores, labels, min(k, num_classes))
        per_instance[k] = 100.0 * hits.mean()
        class_acc = [hits[labels == c].mean() for c in present]
        per_class[k] = 100.0 * float(np.mean(class_acc))

    top1 = topk_hits(scores, labels, 1)
    breakdown = {
        int(c): {"count": int((labels == c).sum()), "top1": 100.0 * float(top1[labels == c].mean())} for c in present
    }

    confusion = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(confusion, (labels, scores.argmax(axis=1)), 1)
    return EvalReport(per_instance, per_class, breakdown, confusion, int(labels.shape[0]))


def write_scores(path: str, ids: Sequence[str], scores: np.ndarray) -> None:
    """CSV with header `id,score_0..score_{C-1}`."""
    scores = np.asarray(scores)
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["id"] + [f"score_{c}" for c in range(scores.shape[1])])
        for sample_id, row in zip(ids, scores):
            writer.writerow([sample_id] + [repr(float(v)) for v in row])


def read_scores(path: str) -> Tuple[List[str], np.ndarray]:
    if not os.path.exists(path):
        raise FileNotFoundError(f"Score file not found: {path}")
    with open(path, newline="") as f:
        rows = list(csv.reader(f))
    if not rows or rows[0][:1] != ["id"]:
        raise ScoreFileMismatchError(f"{path}: missing `id,score_0,...` header")
    width = len(rows[0]) - 1
    ids, values = [], []
    for line, row in enumerate(rows[1:], start=2):
        if len(row) != width + 1:
            raise ScoreFileMismatchError(f"{path}:{line}: expected {width} scores, found {len(row) - 1}")
        ids.append(row[0])
        values.append([float(v) for v in row[1:]])
    return ids, np.array(values, dtype=np.float64).reshape(len(ids), width)


def fuse_score_arrays(
    ids_a: Sequence[str], scores_a: np.ndarray, ids_b: Sequence[str], scores_b: np.ndarray
) -> Tuple[List[str], np.ndarray]:
    """
    Element-wise sum of two score matrices aligned by sample id (order of `ids_a`).

    Raises:
        ScoreFileMismatchError: When either side repeats an id, or the id sets or class counts differ.
    """
    for side, ids in (("first", ids_a), ("second", ids_b)):
        repeated = {i for i, n in Counter(ids).items() if n > 1}
        if repeated:
            raise ScoreFileMismatchError(f"{side} score file repeats sample ids.", repeated)
    divergent = set(ids_a) ^ set(ids_b)
    if divergent or len(ids_a) != len(ids_b):
        raise ScoreFileMismatchError("score files cover different samples.", divergent)
    if scores_a.shape[1] != scores_b.shape[1]:
        raise ScoreFileMismatchError(f"class counts differ: {scores_a.shape[1]} vs {scores_b.shape[1]}")
    position = {sample_id: i for i, sample_id in enumerate(ids_b)}
    aligned_b = scores_b[[position[i] for i in ids_a]]
    return list(ids_a), scores_a + aligned_b


def fuse_scores(path_a: str, path_b: str, labels_by_id: Mapping[str, int], topk: Sequence[int] = (1, 5)) -> EvalReport:
    """
    Late fusion of two score files, evaluated against `labels_by_id`.
    """
    ids_a, scores_a = read_scores(path_a)
    ids_b, scores_b = read_scores(path_b)
    ids, fused = fuse_score_arrays(ids_a, scores_a, ids_b, scores_b)
    unknown = [i for i in ids if i not in labels_by_id]
    if unknown:
        raise ScoreFileMismatchError("score ids missing from the dataset.", unknown)
    return evaluate(fused, [labels_by_id[i] for i in ids], topk)
