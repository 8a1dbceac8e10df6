import argparse
import dataclasses

from dataclasses import dataclass
from enum import Enum
from typing import Optional

from stc_slr.exceptions import ConfigError
from stc_slr.settings.config_loader import get_settings, load_user_settings


class Part(str, Enum):
    """
    Body parts cut from a 49-joint pose sequence.

    Attributes:
        RIGHT_HAND: Joints 7-27.
        LEFT_HAND: Joints 28-48.
        TRUNK: Joints 0-6.
    """

    RIGHT_HAND = "right_hand"
    LEFT_HAND = "left_hand"
    TRUNK = "trunk"


class Modality(str, Enum):
    JOINT = "joint"
    MOTION = "motion"


class Side(str, Enum):
    QUERY = "query"
    KEY = "key"


class Protocol(str, Enum):
    PRETRAIN = "pretrain"
    FINETUNE = "finetune"
    LINEAR_PROBE = "linear_probe"
    EVAL = "eval"
    FUSION = "fusion"


MODALITY_CHOICES = ("joint", "motion", "both")
# Fields a checkpoint fixes; downstream runs take them from the checkpoint sidecar
ARCHITECTURE_FIELDS = (
    "seq_len",
    "embed_dim",
    "proj_dim",
    "proj_hidden",
    "gcn_channels",
    "model_dim",
    "num_heads",
    "num_layers",
    "ff_dim",
)
PART_CHOICES = ("hand", "trunk", "both")


def modalities_from_choice(choice: str) -> list[Modality]:
    if choice not in MODALITY_CHOICES:
        raise ConfigError(f"Unknown modality choice '{choice}'; expected one of {MODALITY_CHOICES}")
    if choice == "both":
        return [Modality.JOINT, Modality.MOTION]
    return [Modality(choice)]


@dataclass
class RunConfig:
    """
    Every knob of a pre-training / evaluation run.

    Attributes:
        seed (int): Seed for parameter init, augmentation and subset sampling.
        seq_len (int): Frames per augmented clip (T').
        embed_dim (int): Encoder output dimension c.
        proj_dim (int): Projection head output dimension.
        proj_hidden (int): Projection head hidden width.
        gcn_channels (list[int]): Output channels of the stacked graph convolutions.
        model_dim (int): Transformer width.
        num_heads (int): Attention heads per transformer block.
        num_layers (int): Transformer blocks per part stream.
        ff_dim (int): Transformer feed-forward width.
        key_momentum (float): Momentum m of the key encoder update.
        tau_contrast (float): InfoNCE temperature.
        tau_consistency (float): Hand/trunk consistency temperature.
        tau_teacher (float): Knowledge-transfer teacher temperature.
        tau_student (float): Knowledge-transfer student temperature.
        num_neighbors (int): Top-K anchors used by knowledge transfer.
        bank_size (int): Capacity N of each memory bank.
        lambda_joint (float): Weight of the joint branch objective.
        lambda_motion (float): Weight of the motion branch objective.
        lr (float): Pre-training base learning rate.
        momentum (float): SGD momentum.
        batch_size (int): Minibatch size B.
        pretrain_epochs (int): Pre-training epochs.
        finetune_epochs (int): Fine-tuning epochs.
        lr_decay_every (int): Pre-training decay interval in epochs.
        lr_decay_factor (float): Multiplicative decay applied at every interval.
        finetune_lr (float): Fine-tuning base learning rate.
        finetune_decay_every (int): Fine-tuning decay interval.
        probe_epochs (int): Linear probe epochs.
        probe_lr (float): Linear probe base learning rate.
        probe_decay_every (int): Linear probe decay interval.
        modalities (str): Branches pre-trained: joint, motion or both.
        finetune_modalities (str): Branches used downstream: joint, motion or both.
        parts (str): Parts feeding the classifier: hand, trunk or both.
        use_consistency (bool): Include the hand/trunk consistency term.
        use_kt (bool): Include bidirectional knowledge transfer.
        pretrain_fraction (float): Share of the training split used for pre-training; 0 skips pre-training.
        stratify (bool): Stratify labeled subsets by class.
        topk (list[int]): Top-k accuracies reported.
        hand_resolution (int): Hand crop resolution in pixels.
        crop_margin (float): Margin factor around the tight hand box.
        max_rotation_deg (float): Rotation range of the spatial augmentation.
        scale_range (float): Scale drawn from U(1 - s, 1 + s).
        mask_prob (float): Per-joint mask probability.
        flip_prob (float): Horizontal flip probability.
        crop_min_ratio (float): Minimum temporal crop ratio alpha.
        num_workers (int): Threads used to load and augment samples.
        checkpoint_every (int): Epochs between checkpoint writes.
    """

    seed: int
    seq_len: int
    embed_dim: int
    proj_dim: int
    proj_hidden: int
    gcn_channels: list[int]
    model_dim: int
    num_heads: int
    num_layers: int
    ff_dim: int
    key_momentum: float
    tau_contrast: float
    tau_consistency: float
    tau_teacher: float
    tau_student: float
    num_neighbors: int
    bank_size: int
    lambda_joint: float
    lambda_motion: float
    lr: float
    momentum: float
    batch_size: int
    pretrain_epochs: int
    finetune_epochs: int
    lr_decay_every: int
    lr_decay_factor: float
    finetune_lr: float
    finetune_decay_every: int
    probe_epochs: int
    probe_lr: float
    probe_decay_every: int
    modalities: str
    finetune_modalities: str
    parts: str
    use_consistency: bool
    use_kt: bool
    pretrain_fraction: float
    stratify: bool
    topk: list[int]
    hand_resolution: int
    crop_margin: float
    max_rotation_deg: float
    scale_range: float
    mask_prob: float
    flip_prob: float
    crop_min_ratio: float
    num_workers: int
    checkpoint_every: int

    @classmethod
    def field_names(cls) -> list[str]:
        return [f.name for f in dataclasses.fields(cls)]

    @classmethod
    def from_dict(cls, values: dict) -> "RunConfig":
        """
        Build a config from a complete mapping of field values.

        Raises:
            ConfigError: On unknown or missing keys, or when validation fails.
        """
        names = cls.field_names()
        unknown = sorted(set(values) - set(names))
        if unknown:
            raise ConfigError(f"Unknown config keys: {', '.join(unknown)}")
        missing = [n for n in names if n not in values]
        if missing:
            raise ConfigError(f"Missing config keys: {', '.join(missing)}")
        config = cls(**{n: _coerce(values[n]) for n in names})
        config.validate()
        return config

    @classmethod
    def from_defaults(cls, profile: Optional[str] = None) -> "RunConfig":
        """
        Create a config from the packaged `[run]` section, optionally overlaid with a profile section.

        Example:
            RunConfig.from_defaults("synthetic").bank_size  # 512
        """
        return cls.from_dict(_default_values(profile))

    @classmethod
    def from_file(cls, path: str, profile: Optional[str] = None) -> "RunConfig":
        """
        Overlay a flat key/value file on the defaults. Unknown keys are errors.
        """
        values = _default_values(profile)
        user = load_user_settings(path)
        unknown = sorted(set(user) - set(cls.field_names()))
        if unknown:
            raise ConfigError(f"Unknown config keys in {path}: {', '.join(unknown)}")
        values.update(user)
        return cls.from_dict(values)

    @classmethod
    def from_cli_args_with_defaults(cls, args: argparse.Namespace) -> "RunConfig":
        """
        Create a RunConfig from command-line arguments, merging them with the defaults (or `--config` file).

        Args:
            args (argparse.Namespace): Parsed command-line arguments.

        Returns:
            RunConfig: CLI arguments override file and default settings.
        """
        config_path = getattr(args, "config", None)
        profile = getattr(args, "profile", None)
        values = cls.from_file(config_path, profile).to_dict() if config_path else _default_values(profile)

        # CLI overrides default settings
        for k, v in vars(args).items():
            if v is not None and k in values:
                values[k] = v

        return cls.from_dict(values)

    def replace(self, **changes) -> "RunConfig":
        updated = dataclasses.replace(self, **changes)
        updated.validate()
        return updated

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @property
    def pretrain_modalities(self) -> list[Modality]:
        return modalities_from_choice(self.modalities)

    @property
    def downstream_modalities(self) -> list[Modality]:
        return modalities_from_choice(self.finetune_modalities)

    def validate(self) -> None:
        """
        Raises:
            ConfigError: Naming the first offending field.
        """
        checks = [
            (all(t > 0 for t in (self.tau_contrast, self.tau_consistency, self.tau_teacher, self.tau_student)),
             "all temperatures must be positive"),
            (0.0 <= self.key_momentum <= 1.0, "key_momentum must lie in [0, 1]"),
            (0.0 <= self.momentum < 1.0, "momentum must lie in [0, 1)"),
            (self.lr > 0 and self.finetune_lr > 0 and self.probe_lr > 0, "learning rates must be positive"),
            (min(self.lr_decay_every, self.finetune_decay_every, self.probe_decay_every) > 0,
             "decay intervals must be positive"),
            (self.batch_size >= 1, "batch_size must be at least 1"),
            (self.num_neighbors >= 1, "num_neighbors must be at least 1"),
            (self.bank_size >= self.batch_size, "bank_size must be at least batch_size"),
            (self.modalities in MODALITY_CHOICES, f"modalities must be one of {MODALITY_CHOICES}"),
            (self.finetune_modalities in MODALITY_CHOICES, f"finetune_modalities must be one of {MODALITY_CHOICES}"),
            (self.parts in PART_CHOICES, f"parts must be one of {PART_CHOICES}"),
            (0.0 <= self.pretrain_fraction <= 1.0, "pretrain_fraction must lie in [0, 1]"),
            (self.seq_len >= 2, "seq_len must be at least 2"),
            (self.model_dim % max(self.num_heads, 1) == 0 and self.num_heads >= 1,
             "model_dim must be divisible by num_heads"),
            (len(self.gcn_channels) >= 1, "gcn_channels must name at least one layer"),
            (len(self.topk) >= 1 and min(self.topk) >= 1, "topk entries must be positive"),
            (self.hand_resolution > 0 and self.crop_margin > 0, "hand_resolution and crop_margin must be positive"),
            (self.num_workers >= 1 and self.checkpoint_every >= 1, "num_workers and checkpoint_every must be >= 1"),
        ]
        for ok, message in checks:
            if not ok:
                raise ConfigError(message)


def _coerce(value):
    # Dynaconf hands back BoxList for arrays
    if isinstance(value, (list, tuple)):
        return [int(v) for v in value]
    return value


def _section(name: str) -> dict:
    section = get_settings().get(name) or {}
    return {str(k).lower(): _coerce(v) for k, v in dict(section).items()}


def _default_values(profile: Optional[str]) -> dict:
    values = _section("run")
    if profile:
        overlay = _section(profile)
        if not overlay:
            raise ConfigError(f"Unknown settings profile: {profile}")
        values.update(overlay)
    return values
