"""
Seeded spatio-temporal augmentation.

One `AugmentParams` draw is shared by all three parts of a view; the query and key
views of a sample use independent draws. Motion clips are always re-derived from the
augmented joint clips.
"""

import math

from dataclasses import dataclass
from typing import FrozenSet, Tuple

import numpy as np

from stc_slr.exceptions import AugmentConfigError
from stc_slr.pose_data import (
    NUM_JOINTS,
    PART_SLICES,
    ClipTriplet,
    PartClip,
    PoseSequence,
    extract_motion_triplet,
    to_joint_clips,
)
from stc_slr.settings.config_schema import Modality, RunConfig


@dataclass(frozen=True)
class AugmentConfig:
    """
    Augmentation ranges.

    Attributes:
        max_rotation_deg (float): Rotation drawn from U(-max, max) degrees.
        scale_range (float): Scale drawn from U(1 - s, 1 + s).
        mask_prob (float): Probability of masking each of the 49 joints.
        flip_prob (float): Probability of a horizontal flip.
        crop_min_ratio (float): Temporal crop length drawn from ceil(alpha * T)..T.
        target_len (int): Output length T'.
    """

    max_rotation_deg: float = 13.0
    scale_range: float = 0.2
    mask_prob: float = 0.1
    flip_prob: float = 0.5
    crop_min_ratio: float = 0.5
    target_len: int = 64

    def __post_init__(self):
        if self.max_rotation_deg < 0 or self.max_rotation_deg > 180:
            raise AugmentConfigError(f"max_rotation_deg must lie in [0, 180], got {self.max_rotation_deg}")
        if not 0 <= self.scale_range < 1:
            raise AugmentConfigError(f"scale_range must lie in [0, 1), got {self.scale_range}")
        if not 0 <= self.mask_prob <= 1:
            raise AugmentConfigError(f"mask_prob must lie in [0, 1], got {self.mask_prob}")
        if not 0 <= self.flip_prob <= 1:
            raise AugmentConfigError(f"flip_prob must lie in [0, 1], got {self.flip_prob}")
        if not 0 < self.crop_min_ratio <= 1:
            raise AugmentConfigError(f"crop_min_ratio must lie in (0, 1], got {self.crop_min_ratio}")
        if self.target_len < 2:
            raise AugmentConfigError(f"target_len must be at least 2, got {self.target_len}")

    @classmethod
    def from_run_config(cls, config: RunConfig) -> "AugmentConfig":
        return cls(
            max_rotation_deg=config.max_rotation_deg,
            scale_range=config.scale_range,
            mask_prob=config.mask_prob,
            flip_prob=config.flip_prob,
            crop_min_ratio=config.crop_min_ratio,
            target_len=config.seq_len,
        )

    @classmethod
    def identity(cls, target_len: int = 64) -> "AugmentConfig":
        return cls(0.0, 0.0, 0.0, 0.0, 1.0, target_len)


@dataclass(frozen=True)
class AugmentParams:
    rotation: float
    scale: float
    joint_mask: FrozenSet[int]
    flip: bool
    crop_start: int
    crop_len: int
    target_len: int

    @property
    def matrix(self) -> np.ndarray:
        """The 2x2 scaled rotation applied to every joint."""
        c, s = math.cos(self.rotation), math.sin(self.rotation)
        return self.scale * np.array([[c, -s], [s, c]])


@dataclass
class View:
    joint: ClipTriplet
    motion: ClipTriplet

    def triplet(self, modality: Modality) -> ClipTriplet:
        return self.joint if modality == Modality.JOINT else self.motion


def sample_params(num_frames: int, rng_seed, config: AugmentConfig) -> AugmentParams:
    """
    Draw one set of augmentation parameters; equal seeds give equal parameters.
    """
    if num_frames < 2:
        raise AugmentConfigError(f"need at least 2 frames to augment, got {num_frames}")
    rng = np.random.default_rng(rng_seed)
    theta = math.radians(config.max_rotation_deg)

    rotation = float(rng.uniform(-theta, theta))
    scale = float(rng.uniform(1.0 - config.scale_range, 1.0 + config.scale_range))
    mask = frozenset(int(j) for j in np.flatnonzero(rng.random(NUM_JOINTS) < config.mask_prob))
    flip = bool(rng.random() < config.flip_prob)
    min_len = min(num_frames, max(2, math.ceil(config.crop_min_ratio * num_frames)))
    crop_len = int(rng.integers(min_len, num_frames, endpoint=True))
    crop_start = int(rng.integers(0, num_frames - crop_len, endpoint=True))
    return AugmentParams(rotation, scale, mask, flip, crop_start, crop_len, config.target_len)


def _local_mask(clip: PartClip, mask: FrozenSet[int]) -> list[int]:
    part_slice = PART_SLICES[clip.part]
    return [j - part_slice.start for j in sorted(mask) if part_slice.start <= j < part_slice.stop]


def apply_spatial(clips: ClipTriplet, p: AugmentParams) -> ClipTriplet:
    """
    Rotate and scale every part about its own origin, zero masked joints, then flip.

    A flip negates x in all parts and swaps the hand clips.
    """
    if clips.modality != Modality.JOINT:
        raise AugmentConfigError("spatial augmentation applies to joint clips only")
    matrix = p.matrix
    out = {}
    for clip in clips:
        data = clip.data.astype(np.float64) @ matrix.T
        data[:, _local_mask(clip, p.joint_mask)] = 0.0
        if p.flip:
            data[..., 0] = -data[..., 0]
        out[clip.part] = data.astype(np.float32)

    right, left, trunk = out[clips.right_hand.part], out[clips.left_hand.part], out[clips.trunk.part]
    if p.flip:
        right, left = left, right
    return ClipTriplet.from_arrays(right, left, trunk, Modality.JOINT)


def resample(data: np.ndarray, crop_start: int, crop_len: int, target_len: int) -> np.ndarray:
    """Endpoint-aligned linear interpolation of frames [crop_start, crop_start + crop_len) to target_len frames."""
    positions = crop_start + np.arange(target_len) * ((crop_len - 1) / (target_len - 1))
    lower = np.floor(positions).astype(np.int64)
    upper = np.minimum(lower + 1, crop_start + crop_len - 1)
    weight = (positions - lower).reshape((-1,) + (1,) * (data.ndim - 1))
    source = data.astype(np.float64)
    return (source[lower] * (1.0 - weight) + source[upper] * weight).astype(np.float32)


def apply_temporal(clips: ClipTriplet, p: AugmentParams) -> ClipTriplet:
    if p.crop_len < 2:
        raise AugmentConfigError(f"crop_len must be at least 2, got {p.crop_len}")
    if p.crop_start < 0 or p.crop_start + p.crop_len > clips.num_frames:
        raise AugmentConfigError(
            f"crop window [{p.crop_start}, {p.crop_start + p.crop_len}) exceeds {clips.num_frames} frames"
        )
    return ClipTriplet(
        *(PartClip(c.part, c.modality, resample(c.data, p.crop_start, p.crop_len, p.target_len)) for c in clips)
    )


def augment_clips(clips: ClipTriplet, rng_seed, config: AugmentConfig) -> View:
    """One augmented view of already-normalized joint clips."""
    p = sample_params(clips.num_frames, rng_seed, config)
    joint = apply_temporal(apply_spatial(clips, p), p)
    return View(joint=joint, motion=extract_motion_triplet(joint))


def make_views(
    seq: PoseSequence,
    seed_q,
    seed_k,
    config: AugmentConfig = AugmentConfig(),
    out_res: int = 256,
    margin: float = 1.2,
) -> Tuple[View, View]:
    """
    Build the query and key views of one sequence.

    Example:
        view_q, view_k = make_views(seq, seed_q=11, seed_k=12)
    """
    clips = to_joint_clips(seq, out_res, margin)
    return augment_clips(clips, seed_q, config), augment_clips(clips, seed_k, config)


def eval_view_from_clips(clips: ClipTriplet, target_len: int) -> View:
    """No augmentation; the whole sequence resampled to target_len frames."""
    identity = AugmentParams(0.0, 1.0, frozenset(), False, 0, clips.num_frames, target_len)
    joint = apply_temporal(clips, identity)
    return View(joint=joint, motion=extract_motion_triplet(joint))


def make_eval_view(seq: PoseSequence, target_len: int = 64, out_res: int = 256, margin: float = 1.2) -> View:
    return eval_view_from_clips(to_joint_clips(seq, out_res, margin), target_len)
