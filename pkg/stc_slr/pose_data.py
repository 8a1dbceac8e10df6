"""
Pose sequences, part clips and the on-disk dataset format.

Joint layout of every 49-joint frame:
    0-6    trunk (nose, left/right shoulder, left/right elbow, left/right wrist)
    7-27   right hand (21 joints)
    28-48  left hand (21 joints)
Hand joints: 0 is the wrist, then four joints per finger from thumb to little finger.
"""

import json
import os

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, Iterator, List, Optional, Tuple

import numpy as np

from stc_slr.custom_logger import CustomLogger
from stc_slr.exceptions import DatasetFormatError, PoseFormatError
from stc_slr.settings.config_schema import Modality, Part


NUM_JOINTS = 49
HAND_JOINTS = 21
TRUNK_JOINTS = 7
TRUNK_SLICE = slice(0, 7)
RIGHT_HAND_SLICE = slice(7, 28)
LEFT_HAND_SLICE = slice(28, 49)
PART_SLICES = {Part.TRUNK: TRUNK_SLICE, Part.RIGHT_HAND: RIGHT_HAND_SLICE, Part.LEFT_HAND: LEFT_HAND_SLICE}
PART_JOINTS = {Part.RIGHT_HAND: HAND_JOINTS, Part.LEFT_HAND: HAND_JOINTS, Part.TRUNK: TRUNK_JOINTS}

TRUNK_JOINT_NAMES = (
    "nose",
    "left_shoulder",
    "right_shoulder",
    "left_elbow",
    "right_elbow",
    "left_wrist",
    "right_wrist",
)
TRUNK_EDGES = ((0, 1), (0, 2), (1, 3), (3, 5), (2, 4), (4, 6))
HAND_EDGES = tuple(
    (0 if j == 0 else 1 + 4 * finger + j - 1, 1 + 4 * finger + j) for finger in range(5) for j in range(4)
)

SEQUENCE_MAGIC = b"STSQ1"
DEFAULT_RESOLUTION = (256, 256)
_U32 = np.dtype("<u4")
_F32 = np.dtype("<f4")


@dataclass
class PoseSequence:
    """
    A raw T x 49 x 2 keypoint track in source-frame pixel coordinates.

    Attributes:
        frames (np.ndarray): (T, 49, 2) float32 pixel coordinates.
        confidence (np.ndarray): (T, 49) float32 detector confidences in [0, 1].
        label (Optional[int]): Class id, when known.
        signer_id (Optional[int]): Signer id, when known.
        source_resolution (Tuple[int, int]): (width, height) of the source frames.
        sample_id (str): Stable identifier used in score files and exports.
    """

    frames: np.ndarray
    confidence: np.ndarray
    label: Optional[int] = None
    signer_id: Optional[int] = None
    source_resolution: Tuple[int, int] = DEFAULT_RESOLUTION
    sample_id: str = ""

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float32)
        self.confidence = np.asarray(self.confidence, dtype=np.float32)
        if self.frames.ndim != 3 or self.frames.shape[1:] != (NUM_JOINTS, 2):
            raise PoseFormatError(f"{self.sample_id or 'sequence'}: frames must be T x 49 x 2, got {self.frames.shape}")
        if self.frames.shape[0] < 2:
            raise PoseFormatError(f"{self.sample_id or 'sequence'}: need at least 2 frames, got {self.frames.shape[0]}")
        if self.confidence.shape != self.frames.shape[:2]:
            raise PoseFormatError(
                f"{self.sample_id or 'sequence'}: confidence must be T x 49, got {self.confidence.shape}"
            )
        if not (np.isfinite(self.frames).all() and np.isfinite(self.confidence).all()):
            raise PoseFormatError(f"{self.sample_id or 'sequence'}: non-finite coordinates or confidences")
        self.source_resolution = (int(self.source_resolution[0]), int(self.source_resolution[1]))

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]


@dataclass
class PartTracks:
    """Per-part coordinate tracks, still in source-frame pixels."""

    right_hand: np.ndarray
    left_hand: np.ndarray
    trunk: np.ndarray

    def merge(self) -> np.ndarray:
        """Restore the (T, 49, 2) layout."""
        return np.concatenate([self.trunk, self.right_hand, self.left_hand], axis=1)


@dataclass
class PartClip:
    """
    One body part in one modality.

    Attributes:
        part (Part): Which part the joints belong to.
        modality (Modality): Joint coordinates or their first-order differences.
        data (np.ndarray): (T, J_part, 2) float32.
    """

    part: Part
    modality: Modality
    data: np.ndarray

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float32)
        expected = PART_JOINTS[self.part]
        if self.data.ndim != 3 or self.data.shape[1:] != (expected, 2):
            raise PoseFormatError(f"{self.part.value} clip must be T x {expected} x 2, got {self.data.shape}")

    @property
    def num_frames(self) -> int:
        return self.data.shape[0]


@dataclass
class ClipTriplet:
    """The right-hand, left-hand and trunk clips of one sample in one modality."""

    right_hand: PartClip
    left_hand: PartClip
    trunk: PartClip

    def __iter__(self) -> Iterator[PartClip]:
        return iter((self.right_hand, self.left_hand, self.trunk))

    @property
    def modality(self) -> Modality:
        return self.trunk.modality

    @property
    def num_frames(self) -> int:
        return self.trunk.num_frames

    @classmethod
    def from_arrays(cls, right: np.ndarray, left: np.ndarray, trunk: np.ndarray, modality: Modality) -> "ClipTriplet":
        return cls(
            PartClip(Part.RIGHT_HAND, modality, right),
            PartClip(Part.LEFT_HAND, modality, left),
            PartClip(Part.TRUNK, modality, trunk),
        )


def separate_parts(seq: PoseSequence) -> PartTracks:
    """
    Slice a sequence into right hand, left hand and trunk tracks.

    The trunk keeps both wrists, so global hand movement survives hand cropping.
    """
    if seq.frames.shape[0] < 2:
        raise PoseFormatError(f"{seq.sample_id or 'sequence'}: need at least 2 frames")
    return PartTracks(
        right_hand=seq.frames[:, RIGHT_HAND_SLICE].copy(),
        left_hand=seq.frames[:, LEFT_HAND_SLICE].copy(),
        trunk=seq.frames[:, TRUNK_SLICE].copy(),
    )


def crop_resize_hand(hand_track: np.ndarray, out_res: int = 256, margin: float = 1.2) -> np.ndarray:
    """
    Map each frame's hand into an `out_res` square crop and normalize to [-1, 1].

    The crop is the tight box of the 21 joints, squared on its longer side and grown
    by `margin`, centered on the joints. A zero-extent box falls back to a unit box.

    Args:
        hand_track (np.ndarray): (T, 21, 2) source-frame pixel coordinates.
        out_res (int): Side of the crop in pixels.
        margin (float): Growth factor of the tight box.

    Returns:
        np.ndarray: (T, 21, 2) float32 coordinates.
    """
    if out_res <= 0:
        raise ValueError(f"out_res must be positive, got {out_res}")
    track = np.asarray(hand_track, dtype=np.float64)
    if track.ndim != 3 or track.shape[1:] != (HAND_JOINTS, 2):
        raise PoseFormatError(f"hand track must be T x 21 x 2, got {track.shape}")
    if not np.isfinite(track).all():
        raise PoseFormatError("hand track holds non-finite coordinates")

    lo = track.min(axis=1, keepdims=True)
    hi = track.max(axis=1, keepdims=True)
    center = (lo + hi) / 2.0
    side = (hi - lo).max(axis=2, keepdims=True) * margin
    side = np.where(side > 0, side, 1.0)

    pixels = (track - center) / side * out_res + out_res / 2.0
    return (pixels / out_res * 2.0 - 1.0).astype(np.float32)


def normalize_trunk(trunk_track: np.ndarray, resolution: Tuple[int, int]) -> np.ndarray:
    """Scale source-frame pixels to [-1, 1] by the frame size; out-of-frame joints are clipped."""
    width, height = resolution
    track = np.asarray(trunk_track, dtype=np.float64)
    scaled = np.empty_like(track)
    scaled[..., 0] = 2.0 * track[..., 0] / width - 1.0
    scaled[..., 1] = 2.0 * track[..., 1] / height - 1.0
    return np.clip(scaled, -1.0, 1.0).astype(np.float32)


def to_joint_clips(seq: PoseSequence, out_res: int = 256, margin: float = 1.2) -> ClipTriplet:
    """Separate parts, crop both hands and normalize the trunk into a joint-modality triplet."""
    tracks = separate_parts(seq)
    return ClipTriplet.from_arrays(
        crop_resize_hand(tracks.right_hand, out_res, margin),
        crop_resize_hand(tracks.left_hand, out_res, margin),
        normalize_trunk(tracks.trunk, seq.source_resolution),
        Modality.JOINT,
    )


def motion_of(data: np.ndarray) -> np.ndarray:
    """First-order differences along time with an all-zero first frame."""
    motion = np.zeros_like(data)
    motion[1:] = data[1:] - data[:-1]
    return motion


def extract_motion(clip: PartClip) -> PartClip:
    if clip.modality != Modality.JOINT:
        raise PoseFormatError(f"motion is extracted from joint clips, got {clip.modality.value}")
    return PartClip(clip.part, Modality.MOTION, motion_of(clip.data))


def extract_motion_triplet(triplet: ClipTriplet) -> ClipTriplet:
    return ClipTriplet(*(extract_motion(clip) for clip in triplet))


# ---------------------------------------------------------------- STSQ1 sample files


def write_sequence(path: str, seq: PoseSequence) -> None:
    """Write frames and confidences in the STSQ1 binary format."""
    header = SEQUENCE_MAGIC + np.array([seq.num_frames, NUM_JOINTS], dtype=_U32).tobytes()
    with open(path, "wb") as f:
        f.write(header)
        f.write(np.ascontiguousarray(seq.frames, dtype=_F32).tobytes())
        f.write(np.ascontiguousarray(seq.confidence, dtype=_F32).tobytes())


def read_sequence(path: str) -> Tuple[np.ndarray, np.ndarray]:
    """
    Read an STSQ1 file.

    Returns:
        Tuple[np.ndarray, np.ndarray]: (T, 49, 2) coordinates and (T, 49) confidences.

    Raises:
        FileNotFoundError: If the file does not exist.
        DatasetFormatError: With the byte offset of the malformed field.
    """
    if not os.path.exists(path):
        raise FileNotFoundError(f"Sample file not found: {path}")
    with open(path, "rb") as f:
        blob = f.read()

    header_len = len(SEQUENCE_MAGIC) + 8
    if blob[: len(SEQUENCE_MAGIC)] != SEQUENCE_MAGIC:
        raise DatasetFormatError(path, "bad magic, expected STSQ1", offset=0)
    if len(blob) < header_len:
        raise DatasetFormatError(path, "truncated header", offset=len(blob))
    num_frames, num_joints = (int(v) for v in np.frombuffer(blob, dtype=_U32, count=2, offset=len(SEQUENCE_MAGIC)))
    if num_joints != NUM_JOINTS:
        raise DatasetFormatError(path, f"expected 49 joints, found {num_joints}", offset=len(SEQUENCE_MAGIC) + 4)
    if num_frames < 2:
        raise DatasetFormatError(path, f"need at least 2 frames, found {num_frames}", offset=len(SEQUENCE_MAGIC))

    coord_count = num_frames * NUM_JOINTS * 2
    conf_count = num_frames * NUM_JOINTS
    expected = header_len + 4 * (coord_count + conf_count)
    if len(blob) != expected:
        raise DatasetFormatError(
            path, f"payload size {len(blob)} differs from expected {expected}", offset=min(len(blob), expected)
        )

    coords = np.frombuffer(blob, dtype=_F32, count=coord_count, offset=header_len).reshape(num_frames, NUM_JOINTS, 2)
    conf_offset = header_len + 4 * coord_count
    conf = np.frombuffer(blob, dtype=_F32, count=conf_count, offset=conf_offset).reshape(num_frames, NUM_JOINTS)

    bad = np.flatnonzero(~np.isfinite(coords.reshape(-1)))
    if bad.size:
        raise DatasetFormatError(path, "non-finite coordinate", offset=header_len + 4 * int(bad[0]))
    bad = np.flatnonzero(~np.isfinite(conf.reshape(-1)))
    if bad.size:
        raise DatasetFormatError(path, "non-finite confidence", offset=conf_offset + 4 * int(bad[0]))
    return coords.astype(np.float32), conf.astype(np.float32)


# ---------------------------------------------------------------- manifest


@dataclass
class ManifestEntry:
    path: str
    label: int
    signer: Optional[int] = None
    split: str = "train"
    sample_id: str = ""

    def __post_init__(self):
        if not self.sample_id:
            self.sample_id = os.path.splitext(os.path.basename(self.path))[0]


@dataclass
class DatasetManifest:
    """
    The JSON index of a dataset.

    Attributes:
        path (str): Where the manifest lives; sample paths resolve relative to it.
        samples (List[ManifestEntry]): Samples in listed order.
        vocabulary (Dict[int, str]): Dense label -> gloss map.
        resolution (Tuple[int, int]): Source frame (width, height).
    """

    path: str
    samples: List[ManifestEntry]
    vocabulary: Dict[int, str]
    resolution: Tuple[int, int] = DEFAULT_RESOLUTION

    @property
    def num_classes(self) -> int:
        return len(self.vocabulary)

    def resolve(self, entry: ManifestEntry) -> str:
        if os.path.isabs(entry.path):
            return entry.path
        return os.path.join(os.path.dirname(os.path.abspath(self.path)), entry.path)

    def to_json(self) -> dict:
        return {
            "samples": [
                {"id": e.sample_id, "path": e.path, "label": e.label, "signer": e.signer, "split": e.split}
                for e in self.samples
            ],
            "vocabulary": {str(k): v for k, v in sorted(self.vocabulary.items())},
            "resolution": list(self.resolution),
        }


def write_manifest(manifest: DatasetManifest) -> None:
    with open(manifest.path, "w") as f:
        json.dump(manifest.to_json(), f, indent=2)


def read_manifest(path: str) -> DatasetManifest:
    """
    Parse and validate a manifest.

    Raises:
        FileNotFoundError: If the manifest does not exist.
        DatasetFormatError: On malformed JSON (with offset), sparse labels or labels out of range.
    """
    if not os.path.exists(path):
        raise FileNotFoundError(f"Manifest not found: {path}")
    with open(path, "rb") as f:
        raw = f.read()
    try:
        doc = json.loads(raw)
    except json.JSONDecodeError as e:
        raise DatasetFormatError(path, f"invalid JSON: {e.msg}", offset=e.pos) from None

    if not isinstance(doc, dict) or "samples" not in doc or "vocabulary" not in doc:
        raise DatasetFormatError(path, "manifest needs 'samples' and 'vocabulary'")
    try:
        vocabulary = {int(k): str(v) for k, v in doc["vocabulary"].items()}
    except (AttributeError, ValueError):
        raise DatasetFormatError(path, "vocabulary keys must be integer class ids") from None
    if sorted(vocabulary) != list(range(len(vocabulary))):
        raise DatasetFormatError(path, "vocabulary labels must be dense 0..C-1")

    samples = []
    for i, item in enumerate(doc["samples"]):
        try:
            entry = ManifestEntry(
                path=str(item["path"]),
                label=int(item["label"]),
                signer=None if item.get("signer") is None else int(item["signer"]),
                split=str(item.get("split", "train")),
                sample_id=str(item.get("id", "")),
            )
        except (KeyError, TypeError, ValueError):
            raise DatasetFormatError(path, f"sample {i} needs 'path' and an integer 'label'") from None
        if not 0 <= entry.label < len(vocabulary):
            raise DatasetFormatError(
                path, f"sample {entry.sample_id}: label {entry.label} outside 0..{len(vocabulary) - 1}"
            )
        if entry.split not in ("train", "test"):
            raise DatasetFormatError(path, f"sample {entry.sample_id}: split must be train or test, got {entry.split}")
        samples.append(entry)

    resolution = tuple(int(v) for v in doc.get("resolution", DEFAULT_RESOLUTION))
    return DatasetManifest(path=path, samples=samples, vocabulary=vocabulary, resolution=resolution)


@dataclass
class PoseDataset:
    """A manifest together with its loaded sequences, in manifest order."""

    manifest: DatasetManifest
    sequences: List[PoseSequence] = field(default_factory=list)

    def __iter__(self) -> Iterator[PoseSequence]:
        return iter(self.sequences)

    def __len__(self) -> int:
        return len(self.sequences)

    def __getitem__(self, index: int) -> PoseSequence:
        return self.sequences[index]

    @property
    def num_classes(self) -> int:
        return self.manifest.num_classes

    @property
    def labels(self) -> np.ndarray:
        return np.array([seq.label for seq in self.sequences], dtype=np.int64)

    @property
    def sample_ids(self) -> List[str]:
        return [seq.sample_id for seq in self.sequences]

    def select(self, indices) -> "PoseDataset":
        indices = [int(i) for i in indices]
        manifest = DatasetManifest(
            path=self.manifest.path,
            samples=[self.manifest.samples[i] for i in indices],
            vocabulary=self.manifest.vocabulary,
            resolution=self.manifest.resolution,
        )
        return PoseDataset(manifest, [self.sequences[i] for i in indices])

    def split(self, name: str) -> "PoseDataset":
        return self.select(i for i, e in enumerate(self.manifest.samples) if e.split == name)

    def subset(self, fraction: float, seed: int, stratify: bool = True, logger=None) -> "PoseDataset":
        return self.select(subset_indices(self.labels, fraction, seed, stratify, logger))


def subset_indices(labels, fraction: float, seed: int, stratify: bool = True, logger=None) -> List[int]:
    """
    Seeded random subset holding round(fraction * N) samples (at least one), in dataset order.

    Samples are ranked once per seed and the subset is a prefix of that ranking, so equal seeds
    give nested subsets (20% inside 40% inside 60%). With `stratify` each class enters the ranking
    at evenly spaced positions, which keeps per-class shares proportional.
    Falls back to unstratified sampling, with a warning, when the subset cannot hold one sample per class.
    """
    labels = np.asarray(labels, dtype=np.int64)
    if not 0.0 < fraction <= 1.0:
        raise ValueError(f"subset fraction must lie in (0, 1], got {fraction}")
    n = labels.shape[0]
    target = max(1, int(round(fraction * n)))
    rng = np.random.default_rng((seed, 7))
    shuffled = rng.permutation(n)
    classes = np.unique(labels)

    if stratify and target < len(classes):
        logger = logger or CustomLogger.get_logger(__name__, generate_log_files=False)
        logger.warning(
            f"Subset of {target} samples cannot hold one sample per class ({len(classes)} classes); "
            "sampling unstratified."
        )
        stratify = False

    if not stratify:
        return sorted(int(i) for i in shuffled[:target])

    position = np.empty(n)
    for c in classes:
        members = shuffled[labels[shuffled] == c]
        position[members] = (np.arange(members.shape[0]) + 0.5) / members.shape[0]
    tiebreak = np.empty(n)
    tiebreak[shuffled] = np.arange(n)
    order = np.lexsort((tiebreak, position))
    return sorted(int(i) for i in order[:target])


def _load_entry(manifest: DatasetManifest, entry: ManifestEntry) -> PoseSequence:
    path = manifest.resolve(entry)
    coords, conf = read_sequence(path)
    try:
        return PoseSequence(
            frames=coords,
            confidence=conf,
            label=entry.label,
            signer_id=entry.signer,
            source_resolution=manifest.resolution,
            sample_id=entry.sample_id,
        )
    except PoseFormatError as e:
        raise DatasetFormatError(path, str(e)) from None


def load_dataset(manifest_path: str, num_workers: int = 1) -> PoseDataset:
    """
    Load and validate every sample listed in a manifest.

    Files are read on `num_workers` threads; the result always follows manifest order.
    """
    manifest = read_manifest(manifest_path)
    if num_workers > 1:
        with ThreadPoolExecutor(max_workers=num_workers) as pool:
            sequences = list(pool.map(lambda e: _load_entry(manifest, e), manifest.samples))
    else:
        sequences = [_load_entry(manifest, e) for e in manifest.samples]
    return PoseDataset(manifest, sequences)
