"""
Memory banks, InfoNCE and the hand/trunk consistency objective of one modality branch.
"""

from typing import Dict, Sequence, Tuple, Union

import numpy as np

from stc_slr.encoder import BranchOutput
from stc_slr.exceptions import BankError, EmptyBankError
from stc_slr.settings.config_schema import Modality, Side
from stc_slr.tensor_core import (
    DiffTensor,
    add,
    concat,
    log_softmax,
    matmul,
    mul,
    neg,
    reduce_mean,
    reduce_sum,
    reshape,
    sub,
    take_slice,
)


UNIT_NORM_TOL = 1e-5
HAND, TRUNK = "hand", "trunk"


class MemoryBank:
    """
    Fixed-capacity FIFO of unit-norm key embeddings, stored as a ring buffer.

    Attributes:
        capacity (int): Maximum number of stored vectors N.
        dim (int): Embedding width.
    """

    def __init__(self, capacity: int, dim: int):
        if capacity < 1:
            raise BankError(f"bank capacity must be positive, got {capacity}")
        self.capacity = capacity
        self.dim = dim
        self._buffer = np.zeros((capacity, dim), dtype=np.float32)
        self._cursor = 0
        self._count = 0

    def __len__(self) -> int:
        return self._count

    @property
    def is_full(self) -> bool:
        return self._count == self.capacity

    def validate(self, batch: np.ndarray) -> np.ndarray:
        batch = np.asarray(batch.data if isinstance(batch, DiffTensor) else batch)
        if batch.ndim == 1:
            batch = batch[None, :]
        if batch.ndim != 2 or batch.shape[1] != self.dim:
            raise BankError(f"bank expects (B, {self.dim}) batches, got {batch.shape}")
        if batch.shape[0] > self.capacity:
            raise BankError(f"batch of {batch.shape[0]} exceeds bank capacity {self.capacity}")
        norms = np.linalg.norm(batch.astype(np.float64), axis=1)
        if np.any(np.abs(norms - 1.0) > UNIT_NORM_TOL):
            raise BankError(f"bank entries must be unit-norm; worst deviation {np.abs(norms - 1.0).max():.2e}")
        return batch

    def push(self, batch: Union[np.ndarray, DiffTensor]) -> None:
        """Append a batch; when full the oldest rows are overwritten."""
        batch = self.validate(batch)
        rows = (self._cursor + np.arange(batch.shape[0])) % self.capacity
        self._buffer[rows] = batch
        self._cursor = int((self._cursor + batch.shape[0]) % self.capacity)
        self._count = min(self.capacity, self._count + batch.shape[0])

    def entries(self) -> np.ndarray:
        """Stored vectors ordered oldest first."""
        if not self.is_full:
            return self._buffer[: self._count].copy()
        return np.roll(self._buffer, -self._cursor, axis=0)


def bank_push(bank: MemoryBank, batch: Union[np.ndarray, DiffTensor]) -> None:
    bank.push(batch)


class BankQuartet:
    """
    Hand and trunk banks for every pre-trained modality, pushed in lockstep so
    row i of every bank comes from the same sample.
    """

    def __init__(self, capacity: int, dim: int, modalities: Sequence[Modality] = (Modality.JOINT, Modality.MOTION)):
        self.capacity = capacity
        self.modalities = list(modalities)
        self.banks: Dict[Tuple[Modality, str], MemoryBank] = {
            (m, part): MemoryBank(capacity, dim) for m in self.modalities for part in (HAND, TRUNK)
        }

    def bank(self, modality: Modality, part: str) -> MemoryBank:
        return self.banks[(modality, part)]

    def pair(self, modality: Modality) -> Tuple[MemoryBank, MemoryBank]:
        return self.bank(modality, HAND), self.bank(modality, TRUNK)

    def lengths(self) -> Dict[str, int]:
        return {f"{m.value}_{part}": len(b) for (m, part), b in self.banks.items()}

    def __len__(self) -> int:
        sizes = set(len(b) for b in self.banks.values())
        if len(sizes) != 1:
            raise BankError(f"banks out of lockstep: {self.lengths()}")
        return sizes.pop()

    def push_all(self, keys: Dict[Modality, BranchOutput]) -> None:
        """
        Push z_h and z_tr of every modality's key output. Nothing is written unless every batch is valid.
        """
        if set(keys) != set(self.modalities):
            raise BankError(f"expected key outputs for {[m.value for m in self.modalities]}")
        staged = []
        for modality, out in keys.items():
            for part, z in ((HAND, out.z_h), (TRUNK, out.z_tr)):
                bank = self.bank(modality, part)
                staged.append((bank, bank.validate(z)))
        if len(set(batch.shape[0] for _, batch in staged)) != 1:
            raise BankError("key batches differ in size; lockstep push refused")
        for bank, batch in staged:
            bank.push(batch)


def _constant(array: np.ndarray, like: DiffTensor) -> DiffTensor:
    return DiffTensor(np.asarray(array, dtype=like.dtype))


def _as_batch(z: DiffTensor) -> DiffTensor:
    return reshape(z, (1, z.shape[0])) if z.ndim == 1 else z


def _values(x) -> np.ndarray:
    return x.data if isinstance(x, DiffTensor) else np.asarray(x)


def softmax_np(logits: np.ndarray, temperature: float, axis: int = -1) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64) / temperature
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def kl_to_student(teacher_probs: np.ndarray, student_log_probs: DiffTensor) -> DiffTensor:
    """
    Batch mean of KL(teacher || student) over the last axis; only the student carries gradient.
    """
    p = np.asarray(teacher_probs, dtype=np.float64)
    plogp = np.where(p > 0, p * np.log(np.where(p > 0, p, 1.0)), 0.0)
    entropy_term = plogp.sum(axis=-1).mean()
    cross = reduce_mean(reduce_sum(mul(_constant(p, student_log_probs), student_log_probs), axis=-1))
    return sub(_constant(entropy_term, cross), cross)


def info_nce(z: DiffTensor, z_key, bank: Union[MemoryBank, np.ndarray], tau: float) -> DiffTensor:
    """
    Batch mean of -log(exp(z.z~/tau) / (exp(z.z~/tau) + sum_i exp(z.n_i/tau))).

    The key embedding and the bank are constants; gradient flows into `z` only.

    Raises:
        EmptyBankError: If the bank holds no negatives.
    """
    negatives = bank.entries() if isinstance(bank, MemoryBank) else np.asarray(bank)
    if negatives.shape[0] == 0:
        raise EmptyBankError("InfoNCE needs at least one negative; warm the bank up first")
    z = _as_batch(z)
    key = np.asarray(_values(z_key)).reshape(z.shape)

    positive = reduce_sum(mul(z, _constant(key, z)), axis=-1, keepdims=True)
    negative = matmul(z, _constant(negatives.T, z))
    log_probs = log_softmax(concat([positive, negative], axis=1), temperature=tau)
    return neg(reduce_mean(take_slice(log_probs, (slice(None), slice(0, 1)))))


def branch_contrastive_loss(
    q: BranchOutput, k: BranchOutput, banks: Tuple[MemoryBank, MemoryBank], tau: float
) -> DiffTensor:
    """InfoNCE of the hand embedding against M_h plus InfoNCE of the trunk embedding against M_tr."""
    if q.side != Side.QUERY or k.side != Side.KEY:
        raise ValueError("branch_contrastive_loss takes (query output, key output)")
    hand_bank, trunk_bank = banks
    return add(info_nce(q.z_h, k.z_h, hand_bank, tau), info_nce(q.z_tr, k.z_tr, trunk_bank, tau))


def consistency_loss(q: BranchOutput, k: BranchOutput, tau: float) -> DiffTensor:
    """
    KL(p(z~_h) || p(z_tr)) + KL(p(z~_tr) || p(z_h)) with p = softmax(z / tau) over embedding dims.

    The key side is the teacher and receives no gradient.
    """
    if q.side != Side.QUERY or k.side != Side.KEY:
        raise ValueError("consistency_loss takes (query output, key output)")
    trunk_term = kl_to_student(softmax_np(_values(k.z_h), tau), log_softmax(_as_batch(q.z_tr), temperature=tau))
    hand_term = kl_to_student(softmax_np(_values(k.z_tr), tau), log_softmax(_as_batch(q.z_h), temperature=tau))
    return add(trunk_term, hand_term)
