"""
Bidirectional knowledge transfer between the joint and motion embedding spaces.

Anchors are the sums of aligned hand and trunk bank rows. A teacher key selects its
top-K anchors in its own space; the student query is scored against the anchors with
the SAME indices in the other space, and the two tempered distributions are aligned by KL.
"""

from dataclasses import dataclass
from typing import Tuple

import numpy as np

from stc_slr.contrastive import BankQuartet, kl_to_student, softmax_np
from stc_slr.encoder import BranchOutput
from stc_slr.exceptions import BankError, EmptyBankError
from stc_slr.settings.config_schema import Modality
from stc_slr.tensor_core import DiffTensor, add, log_softmax, matmul, reshape


@dataclass
class AnchorSet:
    modality: Modality
    vectors: np.ndarray

    def __len__(self) -> int:
        return self.vectors.shape[0]


@dataclass
class ModalSummary:
    """
    Per-modality sample summaries f = z_h + z_tr.

    Query summaries are graph tensors; key summaries are plain arrays.
    """

    joint: DiffTensor
    joint_key: np.ndarray
    motion: DiffTensor
    motion_key: np.ndarray

    @classmethod
    def from_outputs(
        cls, q_joint: BranchOutput, k_joint: BranchOutput, q_motion: BranchOutput, k_motion: BranchOutput
    ) -> "ModalSummary":
        return cls(
            joint=add(q_joint.z_h, q_joint.z_tr),
            joint_key=k_joint.z_h.data + k_joint.z_tr.data,
            motion=add(q_motion.z_h, q_motion.z_tr),
            motion_key=k_motion.z_h.data + k_motion.z_tr.data,
        )


def build_anchors(banks: BankQuartet) -> Tuple[AnchorSet, AnchorSet]:
    """
    s_i = hand_i + trunk_i for each modality.

    Raises:
        BankError: If a modality's hand and trunk banks differ in length.
        EmptyBankError: If the banks are empty.
    """
    anchors = []
    for modality in (Modality.JOINT, Modality.MOTION):
        hand, trunk = banks.pair(modality)
        if len(hand) != len(trunk):
            raise BankError(f"{modality.value} banks differ in length: {len(hand)} vs {len(trunk)}")
        if len(hand) == 0:
            raise EmptyBankError(f"{modality.value} banks are empty")
        anchors.append(AnchorSet(modality, hand.entries() + trunk.entries()))
    return anchors[0], anchors[1]


def topk_neighbors(anchors: AnchorSet, z: np.ndarray, k: int) -> np.ndarray:
    """
    Indices of the k anchors most similar to z, ties broken by the lower index.

    Accepts a single (d,) query or a (B, d) batch; returns (k,) or (B, k).
    """
    if not 1 <= k <= len(anchors):
        raise BankError(f"K={k} must lie in 1..{len(anchors)}")
    sims = np.asarray(z, dtype=np.float64) @ anchors.vectors.astype(np.float64).T
    return np.argsort(-sims, axis=-1, kind="stable")[..., :k]


def anchor_distribution(z: np.ndarray, tau: float, anchors: AnchorSet, indices: np.ndarray) -> np.ndarray:
    """softmax(z . s_i / tau) restricted to `indices`; batched like topk_neighbors."""
    if not tau > 0:
        raise ValueError(f"temperature must be positive, got {tau}")
    selected = anchors.vectors.astype(np.float64)[np.asarray(indices)]
    sims = np.einsum("...kd,...d->...k", selected, np.asarray(z, dtype=np.float64))
    return softmax_np(sims, tau)


def student_log_distribution(z: DiffTensor, tau: float, anchors: AnchorSet, indices: np.ndarray) -> DiffTensor:
    """Differentiable log of anchor_distribution for a (B, d) query batch."""
    batch = z.shape[0]
    selected = DiffTensor(anchors.vectors.astype(z.dtype)[indices])
    sims = reshape(matmul(selected, reshape(z, (batch, z.shape[1], 1))), (batch, indices.shape[1]))
    return log_softmax(sims, temperature=tau)


def kt_loss_one_way(
    teacher_key: np.ndarray,
    student_query: DiffTensor,
    teacher_anchors: AnchorSet,
    student_anchors: AnchorSet,
    k: int,
    tau_teacher: float,
    tau_student: float,
) -> DiffTensor:
    """
    KL(p(f~^A, tau_t, S^A; N^A) || p(f^B, tau_s, S^B; N^A)), batch mean.

    N^A holds the top-k anchors of the teacher key in space A; the same indices select
    the student's anchors in space B.
    """
    if len(teacher_anchors) != len(student_anchors):
        raise BankError(f"anchor sets differ in size: {len(teacher_anchors)} vs {len(student_anchors)}")
    teacher = np.asarray(teacher_key)
    if student_query.ndim == 1:
        student_query = reshape(student_query, (1, student_query.shape[0]))
    teacher = teacher.reshape(student_query.shape)

    indices = topk_neighbors(teacher_anchors, teacher, k)
    p_teacher = anchor_distribution(teacher, tau_teacher, teacher_anchors, indices)
    log_q = student_log_distribution(student_query, tau_student, student_anchors, indices)
    return kl_to_student(p_teacher, log_q)


def kt_loss(
    summaries: ModalSummary, anchors: Tuple[AnchorSet, AnchorSet], k: int, tau_teacher: float, tau_student: float
) -> DiffTensor:
    """Joint-to-motion plus motion-to-joint transfer."""
    joint_anchors, motion_anchors = anchors
    joint_to_motion = kt_loss_one_way(
        summaries.joint_key, summaries.motion, joint_anchors, motion_anchors, k, tau_teacher, tau_student
    )
    motion_to_joint = kt_loss_one_way(
        summaries.motion_key, summaries.joint, motion_anchors, joint_anchors, k, tau_teacher, tau_student
    )
    return add(joint_to_motion, motion_to_joint)
