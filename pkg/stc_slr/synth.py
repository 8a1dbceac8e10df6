"""
Synthetic sign dataset generator.

Every class is a smooth prototype: both wrists trace a class-specific Lissajous path,
the elbows follow, and the fingers curl at a class-specific frequency and phase.
Samples perturb their prototype with a per-signer offset and scale, a monotone
timing warp and Gaussian coordinate noise.
"""

import os

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from stc_slr.custom_logger import CustomLogger
from stc_slr.exceptions import ConfigError
from stc_slr.pose_data import (
    HAND_JOINTS,
    NUM_JOINTS,
    DatasetManifest,
    ManifestEntry,
    PoseSequence,
    write_manifest,
    write_sequence,
)


TEST_EVERY = 4
SEGMENT_LENGTHS = (9.0, 7.0, 6.0, 5.0)


@dataclass(frozen=True)
class ClassPrototype:
    label: int
    path_freq: Tuple[float, float]
    path_phase: float
    path_amplitude: Tuple[float, float]
    curl_freq: float
    curl_phase: float
    hand_angle: float


def make_prototypes(num_classes: int, seed: int) -> list[ClassPrototype]:
    """Distinct trajectory parameters per class; frequencies are spread on a grid so no two classes coincide."""
    prototypes = []
    for c in range(num_classes):
        rng = np.random.default_rng((seed, 0, c))
        prototypes.append(
            ClassPrototype(
                label=c,
                path_freq=(1.0 + c % 3, 1.0 + (c // 3) % 3),
                path_phase=2.0 * np.pi * c / num_classes,
                path_amplitude=(float(rng.uniform(0.08, 0.14)), float(rng.uniform(0.06, 0.12))),
                curl_freq=0.5 + 0.5 * c,
                curl_phase=float(rng.uniform(0.0, 2.0 * np.pi)),
                hand_angle=-np.pi / 2 + np.pi * c / num_classes,
            )
        )
    return prototypes


def _hand(wrist: np.ndarray, angle: np.ndarray, curl: np.ndarray, mirror: float) -> np.ndarray:
    """(T, 2) wrist, (T,) orientation and curl -> (T, 21, 2) hand joints."""
    num_frames = wrist.shape[0]
    hand = np.zeros((num_frames, HAND_JOINTS, 2))
    hand[:, 0] = wrist
    for finger in range(5):
        direction = angle + mirror * (finger - 2) * 0.35
        point = wrist.copy()
        for j, length in enumerate(SEGMENT_LENGTHS):
            direction = direction + mirror * curl * (0.2 + 0.1 * finger)
            point = point + length * np.stack([np.cos(direction), np.sin(direction)], axis=-1)
            hand[:, 1 + 4 * finger + j] = point
    return hand


def render_prototype(
    proto: ClassPrototype,
    t: np.ndarray,
    resolution: Tuple[int, int] = (256, 256),
    offset: Optional[np.ndarray] = None,
    scale: float = 1.0,
) -> np.ndarray:
    """
    Render (T, 49, 2) pixel coordinates of a prototype at normalized times `t` in [0, 1].
    """
    width, height = resolution
    size = np.array([width, height], dtype=np.float64)
    center = size / 2.0
    offset = np.zeros(2) if offset is None else offset

    def place(rel):
        return center + (np.asarray(rel) - np.array([0.5, 0.5])) * size * scale + offset

    fx, fy = proto.path_freq
    ax, ay = proto.path_amplitude
    phase = 2.0 * np.pi * t
    right_path = np.stack([ax * np.sin(fx * phase + proto.path_phase), ay * np.sin(fy * phase)], axis=-1)
    left_path = np.stack([-ax * np.sin(fx * phase + proto.path_phase + 0.5), ay * np.cos(fy * phase)], axis=-1)

    right_wrist = place(np.array([0.38, 0.62]) + right_path)
    left_wrist = place(np.array([0.62, 0.62]) + left_path)
    nose = np.broadcast_to(place([0.5, 0.25]), right_wrist.shape)
    left_shoulder = np.broadcast_to(place([0.65, 0.4]), right_wrist.shape)
    right_shoulder = np.broadcast_to(place([0.35, 0.4]), right_wrist.shape)
    left_elbow = (left_shoulder + left_wrist) / 2.0 + np.array([0.04 * width, 0.03 * height]) * scale
    right_elbow = (right_shoulder + right_wrist) / 2.0 + np.array([-0.04 * width, 0.03 * height]) * scale

    curl = 0.5 + 0.4 * np.sin(2.0 * np.pi * proto.curl_freq * t + proto.curl_phase)
    angle = np.full_like(t, proto.hand_angle)
    right_hand = _hand(right_wrist, angle, curl, 1.0)
    left_hand = _hand(left_wrist, np.pi - angle, curl, -1.0)
    right_hand = right_wrist[:, None] + (right_hand - right_wrist[:, None]) * scale
    left_hand = left_wrist[:, None] + (left_hand - left_wrist[:, None]) * scale

    trunk = np.stack([nose, left_shoulder, right_shoulder, left_elbow, right_elbow, left_wrist, right_wrist], axis=1)
    return np.concatenate([trunk, right_hand, left_hand], axis=1)


def synth_generate(
    out_dir: str,
    num_classes: int,
    samples_per_class: int,
    num_frames: int,
    seed: int,
    resolution: Tuple[int, int] = (256, 256),
    num_signers: int = 4,
    noise_frac: float = 0.02,
    noiseless: bool = False,
    logger=None,
) -> str:
    """
    Write a synthetic dataset (STSQ1 samples plus manifest.json) into `out_dir`.

    Every 4th sample of each class is placed in the test split.

    Args:
        out_dir (str): Output directory, created when missing.
        num_classes (int): Number of classes (>= 2).
        samples_per_class (int): Samples generated per class.
        num_frames (int): Frames per sample (>= 8).
        seed (int): Generator seed; equal seeds give bit-identical datasets.
        resolution (Tuple[int, int]): Source frame (width, height).
        num_signers (int): Distinct signer offsets cycled through the samples.
        noise_frac (float): Noise sigma as a fraction of the frame width.
        noiseless (bool): Emit exact prototypes (no signer offset, warp or noise).

    Returns:
        str: Path of the written manifest.
    """
    if num_classes < 2:
        raise ConfigError(f"num_classes must be at least 2, got {num_classes}")
    if num_frames < 8:
        raise ConfigError(f"num_frames must be at least 8, got {num_frames}")
    if samples_per_class < 1 or num_signers < 1:
        raise ConfigError("samples_per_class and num_signers must be positive")
    logger = logger or CustomLogger.get_logger(__name__, generate_log_files=False)

    os.makedirs(os.path.join(out_dir, "samples"), exist_ok=True)
    width = float(resolution[0])
    base_t = np.linspace(0.0, 1.0, num_frames)
    signer_rngs = [np.random.default_rng((seed, 2, s)) for s in range(num_signers)]
    signers = [(rng.normal(0.0, 0.03 * width, size=2), float(rng.uniform(0.92, 1.08))) for rng in signer_rngs]

    entries = []
    for proto in make_prototypes(num_classes, seed):
        for i in range(samples_per_class):
            signer = i % num_signers
            if noiseless:
                frames = render_prototype(proto, base_t, resolution)
            else:
                rng = np.random.default_rng((seed, 1, proto.label, i))
                warped_t = base_t ** rng.uniform(0.8, 1.25)
                offset, scale = signers[signer]
                frames = render_prototype(proto, warped_t, resolution, offset=offset, scale=scale)
                frames = frames + rng.normal(0.0, noise_frac * width, size=frames.shape)

            sample_id = f"c{proto.label:03d}_s{i:03d}"
            rel_path = os.path.join("samples", f"{sample_id}.stsq")
            seq = PoseSequence(
                frames=frames.astype(np.float32),
                confidence=np.ones((num_frames, NUM_JOINTS), dtype=np.float32),
                label=proto.label,
                signer_id=signer,
                source_resolution=resolution,
                sample_id=sample_id,
            )
            write_sequence(os.path.join(out_dir, rel_path), seq)
            split = "test" if i % TEST_EVERY == TEST_EVERY - 1 else "train"
            entries.append(ManifestEntry(rel_path, proto.label, signer, split, sample_id))

    manifest = DatasetManifest(
        path=os.path.join(out_dir, "manifest.json"),
        samples=entries,
        vocabulary={c: f"sign_{c:03d}" for c in range(num_classes)},
        resolution=(int(resolution[0]), int(resolution[1])),
    )
    write_manifest(manifest)
    logger.info(
        f"Wrote {len(entries)} synthetic samples ({num_classes} classes x {samples_per_class}) to {out_dir}"
    )
    return manifest.path
