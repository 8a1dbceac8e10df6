"""
GCN + Transformer part encoders, the query/key skeleton encoder and the classification head.
"""

from dataclasses import dataclass
from typing import List, Optional, Sequence, Union

import numpy as np

from stc_slr.exceptions import ConfigError, ShapeMismatchError
from stc_slr.layers import MLP, GraphConv, LayerNorm, Linear, Module, TransformerBlock
from stc_slr.pose_data import HAND_EDGES, HAND_JOINTS, TRUNK_EDGES, TRUNK_JOINTS, ClipTriplet
from stc_slr.settings.config_schema import Modality, Part, RunConfig, Side
from stc_slr.tensor_core import (
    DiffTensor,
    add,
    get_default_dtype,
    l2_normalize,
    parameter,
    reduce_mean,
    relu,
    reshape,
    take_slice,
)


class SkeletonGraph:
    """
    Joint adjacency of one part with self-loops and its symmetric-normalized propagation matrix.
    """

    def __init__(self, num_joints: int, edges: Sequence[tuple]):
        adjacency = np.eye(num_joints)
        for i, j in edges:
            adjacency[i, j] = adjacency[j, i] = 1.0
        inv_sqrt_degree = 1.0 / np.sqrt(adjacency.sum(axis=1))
        self.adjacency = adjacency
        self.propagation = adjacency * inv_sqrt_degree[:, None] * inv_sqrt_degree[None, :]

    @property
    def num_joints(self) -> int:
        return self.adjacency.shape[0]

    @classmethod
    def for_part(cls, part: Part) -> "SkeletonGraph":
        if part == Part.TRUNK:
            return cls(TRUNK_JOINTS, TRUNK_EDGES)
        return cls(HAND_JOINTS, HAND_EDGES)


@dataclass(frozen=True)
class EncoderSizes:
    seq_len: int = 64
    gcn_channels: tuple = (64, 128)
    model_dim: int = 128
    num_heads: int = 4
    num_layers: int = 2
    ff_dim: int = 256
    embed_dim: int = 512
    proj_hidden: int = 512
    proj_dim: int = 128

    @classmethod
    def from_run_config(cls, config: RunConfig) -> "EncoderSizes":
        return cls(
            seq_len=config.seq_len,
            gcn_channels=tuple(config.gcn_channels),
            model_dim=config.model_dim,
            num_heads=config.num_heads,
            num_layers=config.num_layers,
            ff_dim=config.ff_dim,
            embed_dim=config.embed_dim,
            proj_hidden=config.proj_hidden,
            proj_dim=config.proj_dim,
        )


class PartStream(Module):
    """
    (N, T', J, 2) clips -> (N, c) part embeddings.

    Per frame the joints pass through stacked graph convolutions, are flattened into
    one token, get a learned position embedding and run through the transformer;
    tokens are mean-pooled over time and mapped to c dims.
    """

    def __init__(self, graph: SkeletonGraph, sizes: EncoderSizes, rng: np.random.Generator):
        self.num_joints = graph.num_joints
        channels = (2,) + tuple(sizes.gcn_channels)
        self.gcn = [GraphConv(c_in, c_out, graph.propagation, rng) for c_in, c_out in zip(channels, channels[1:])]
        self.token = Linear(graph.num_joints * channels[-1], sizes.model_dim, rng)
        self.position = parameter(rng.normal(0.0, 0.02, size=(sizes.seq_len, sizes.model_dim)))
        self.blocks = [
            TransformerBlock(sizes.model_dim, sizes.num_heads, sizes.ff_dim, rng) for _ in range(sizes.num_layers)
        ]
        self.norm = LayerNorm(sizes.model_dim)
        self.head = Linear(sizes.model_dim, sizes.embed_dim, rng)

    def forward(self, x: DiffTensor) -> DiffTensor:
        if x.ndim != 4 or x.shape[2:] != (self.num_joints, 2):
            raise ShapeMismatchError(f"part stream expects (N, T, {self.num_joints}, 2)", x.shape)
        n, t = x.shape[:2]
        if t != self.position.shape[0]:
            raise ShapeMismatchError("clip length differs from the position embedding", x.shape, self.position.shape)
        h = reshape(x, (n * t, self.num_joints, 2))
        for layer in self.gcn:
            h = relu(layer(h))
        h = add(self.token(reshape(h, (n, t, h.shape[1] * h.shape[2]))), self.position)
        for block in self.blocks:
            h = block(h)
        pooled = reduce_mean(self.norm(h), axis=1)
        return self.head(pooled)


@dataclass
class TripletBatch:
    """Stacked (B, T', J, 2) arrays of one modality."""

    right_hand: np.ndarray
    left_hand: np.ndarray
    trunk: np.ndarray

    @classmethod
    def stack(cls, triplets: Sequence[ClipTriplet]) -> "TripletBatch":
        dtype = get_default_dtype()
        return cls(
            right_hand=np.stack([t.right_hand.data for t in triplets]).astype(dtype),
            left_hand=np.stack([t.left_hand.data for t in triplets]).astype(dtype),
            trunk=np.stack([t.trunk.data for t in triplets]).astype(dtype),
        )

    @property
    def batch_size(self) -> int:
        return self.trunk.shape[0]


@dataclass
class BranchOutput:
    """
    Embeddings of one modality branch for a minibatch.

    Attributes:
        f_h (DiffTensor): (B, c) hand embedding, sum of both hands.
        f_tr (DiffTensor): (B, c) trunk embedding.
        z_h (Optional[DiffTensor]): (B, proj) unit-norm projection of f_h.
        z_tr (Optional[DiffTensor]): (B, proj) unit-norm projection of f_tr.
        side (Side): Query or key encoder.
    """

    f_h: DiffTensor
    f_tr: DiffTensor
    z_h: Optional[DiffTensor]
    z_tr: Optional[DiffTensor]
    side: Side

    def feature(self, parts: str = "both") -> DiffTensor:
        if parts == "hand":
            return self.f_h
        if parts == "trunk":
            return self.f_tr
        return add(self.f_h, self.f_tr)


class SkeletonEncoder(Module):
    """
    One modality's encoder: a hand stream shared by both hands, a trunk stream and a
    projection MLP shared by the hand and trunk embeddings.
    """

    def __init__(self, sizes: EncoderSizes, seed: Union[int, Sequence[int]]):
        rng = np.random.default_rng(seed)
        self.sizes = sizes
        self.hand_stream = PartStream(SkeletonGraph.for_part(Part.RIGHT_HAND), sizes, rng)
        self.trunk_stream = PartStream(SkeletonGraph.for_part(Part.TRUNK), sizes, rng)
        self.projection = MLP(sizes.embed_dim, sizes.proj_hidden, sizes.proj_dim, rng)

    def forward(self, batch: TripletBatch, side: Side = Side.QUERY, project: bool = True) -> BranchOutput:
        return encode(batch, self, side, project)


def encode(batch: TripletBatch, params: SkeletonEncoder, side: Side = Side.QUERY, project: bool = True) -> BranchOutput:
    """
    Embed a batch of part triplets.

    Both hands run through the shared hand stream in one pass (stacked on the batch
    axis); f_h is the sum of their embeddings.
    """
    b = batch.batch_size
    if batch.right_hand.shape != batch.left_hand.shape or batch.right_hand.shape[0] != b:
        raise ShapeMismatchError(
            "hand batches differ", batch.right_hand.shape, batch.left_hand.shape, batch.trunk.shape
        )
    hands = DiffTensor(np.concatenate([batch.right_hand, batch.left_hand], axis=0))
    hand_out = params.hand_stream(hands)
    f_h = add(take_slice(hand_out, (slice(0, b),)), take_slice(hand_out, (slice(b, 2 * b),)))
    f_tr = params.trunk_stream(DiffTensor(batch.trunk))

    z_h = z_tr = None
    if project:
        z_h = l2_normalize(params.projection(f_h), axis=-1)
        z_tr = l2_normalize(params.projection(f_tr), axis=-1)
    return BranchOutput(f_h=f_h, f_tr=f_tr, z_h=z_h, z_tr=z_tr, side=side)


def momentum_update(query: Module, key: Module, m: float) -> None:
    """
    theta_k <- m * theta_k + (1 - m) * theta_q for every parameter, in place.

    Raises:
        ShapeMismatchError: If the two modules do not have identical parameter names and shapes.
    """
    if not 0.0 <= m <= 1.0:
        raise ConfigError(f"key momentum must lie in [0, 1], got {m}")
    q_params = list(query.named_parameters())
    k_params = list(key.named_parameters())
    if [n for n, _ in q_params] != [n for n, _ in k_params]:
        raise ShapeMismatchError("query and key encoders have different parameters")
    for (name, q), (_, k) in zip(q_params, k_params):
        if q.shape != k.shape:
            raise ShapeMismatchError(f"momentum update of {name}", q.shape, k.shape)
        k.data[...] = m * k.data.astype(np.float64) + (1.0 - m) * q.data.astype(np.float64)
        k.grad = None


class ClassificationHead(Module):
    """One fully-connected layer c -> C per modality."""

    def __init__(
        self, embed_dim: int, num_classes: int, modalities: Sequence[Modality], seed: Union[int, Sequence[int]]
    ):
        rng = np.random.default_rng(seed)
        self.num_classes = num_classes
        self.modalities = list(modalities)
        self.layers = [Linear(embed_dim, num_classes, rng) for _ in self.modalities]

    def layer(self, modality: Modality) -> Linear:
        return self.layers[self.modalities.index(modality)]


def classify(
    joint_out: Optional[BranchOutput],
    motion_out: Optional[BranchOutput],
    head: ClassificationHead,
    parts: str = "both",
) -> DiffTensor:
    """
    Sum of per-branch logits FC(f_h + f_tr); an absent branch contributes nothing.

    Raises:
        ShapeMismatchError: If the head has no layer for a present branch or the class counts differ.
    """
    logits: List[DiffTensor] = []
    for modality, out in ((Modality.JOINT, joint_out), (Modality.MOTION, motion_out)):
        if out is None:
            continue
        if modality not in head.modalities:
            raise ShapeMismatchError(f"classification head has no {modality.value} layer")
        logits.append(head.layer(modality)(out.feature(parts)))
    if not logits:
        raise ShapeMismatchError("classify needs at least one branch output")
    total = logits[0]
    for extra in logits[1:]:
        if extra.shape != total.shape:
            raise ShapeMismatchError("branch logits differ", total.shape, extra.shape)
        total = add(total, extra)
    if total.shape[-1] != head.num_classes:
        raise ShapeMismatchError("logit width differs from class count", total.shape, (head.num_classes,))
    return total


def stack_modality(views, modality: Modality) -> TripletBatch:
    return TripletBatch.stack([v.triplet(modality) for v in views])
