"""
Downstream protocols on a pre-trained checkpoint: fine-tuning (full or on a labeled
fraction) and the frozen-encoder linear probe.
"""

from collections import OrderedDict
from concurrent.futures import ThreadPoolExecutor
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from stc_slr.augment import AugmentConfig, View, augment_clips, make_eval_view
from stc_slr.checkpoint import load_checkpoint, load_sidecar, save_checkpoint
from stc_slr.custom_logger import CustomLogger
from stc_slr.encoder import (
    BranchOutput,
    ClassificationHead,
    EncoderSizes,
    SkeletonEncoder,
    classify,
    stack_modality,
)
from stc_slr.exceptions import ConfigError
from stc_slr.layers import Module
from stc_slr.metrics import EvalReport, evaluate
from stc_slr.optim import SgdState, lr_schedule, sgd_step
from stc_slr.pose_data import PoseDataset, to_joint_clips
from stc_slr.pretrainer import encoder_seed
from stc_slr.run_db import RunDB
from stc_slr.settings.config_schema import ARCHITECTURE_FIELDS, Modality, Protocol, RunConfig, Side
from stc_slr.tensor_core import (
    DiffTensor,
    backward,
    log_softmax,
    mul,
    neg,
    no_grad,
    reduce_mean,
    reduce_sum,
    zero_grad,
)

# Seed stream tags
_HEAD, _ORDER, _AUGMENT = 2, 4, 5
# Encoder streams the classification logits reach, per `parts`
_STREAMS = {"hand": ("hand_stream",), "trunk": ("trunk_stream",), "both": ("hand_stream", "trunk_stream")}


def load_encoders(checkpoint_path: str) -> Tuple[RunConfig, Dict[Modality, SkeletonEncoder]]:
    """
    Rebuild the encoders stored in a checkpoint, using the config from its sidecar.

    Parameters without a `joint.` / `motion.` prefix (a classifier head) are ignored.
    """
    state = load_checkpoint(checkpoint_path)
    config = RunConfig.from_dict(load_sidecar(checkpoint_path)["config"])
    sizes = EncoderSizes.from_run_config(config)
    encoders = {}
    for modality in (Modality.JOINT, Modality.MOTION):
        prefix = f"{modality.value}."
        own = {name[len(prefix) :]: value for name, value in state.items() if name.startswith(prefix)}
        if own:
            encoder = SkeletonEncoder(sizes, seed=encoder_seed(config, modality))
            encoder.load_state_dict(own)
            encoders[modality] = encoder
    if not encoders:
        raise ConfigError(f"{checkpoint_path} holds no encoder parameters")
    return config, encoders


def downstream_config(config: Optional[RunConfig], checkpoint_config: RunConfig, logger=None) -> RunConfig:
    """The caller's run knobs with the architecture the checkpoint was built with."""
    if config is None:
        return checkpoint_config
    fixed = {name: getattr(checkpoint_config, name) for name in ARCHITECTURE_FIELDS}
    changed = [name for name, value in fixed.items() if getattr(config, name) != value]
    if changed and logger is not None:
        logger.warning(f"Using the checkpoint's {', '.join(changed)} instead of the run config values.")
    return config.replace(**fixed)


def cross_entropy(logits: DiffTensor, labels: Sequence[int]) -> DiffTensor:
    """Mean negative log-likelihood of integer labels under softmax(logits)."""
    labels = np.asarray(labels, dtype=np.int64)
    one_hot = np.zeros(logits.shape, dtype=logits.dtype)
    one_hot[np.arange(labels.shape[0]), labels] = 1.0
    picked = reduce_sum(mul(log_softmax(logits), DiffTensor(one_hot)), axis=-1)
    return neg(reduce_mean(picked))


def eval_views(dataset: PoseDataset, config: RunConfig) -> List[View]:
    def view(seq):
        return make_eval_view(seq, config.seq_len, config.hand_resolution, config.crop_margin)

    if config.num_workers > 1:
        with ThreadPoolExecutor(max_workers=config.num_workers) as pool:
            return list(pool.map(view, dataset))
    return [view(seq) for seq in dataset]


def extract_features(
    encoders: Dict[Modality, SkeletonEncoder], views: List[View], batch_size: int
) -> Dict[Modality, Tuple[np.ndarray, np.ndarray]]:
    """(f_h, f_tr) arrays of shape (N, c) per modality, computed without a graph."""
    features = {}
    with no_grad():
        for modality, encoder in encoders.items():
            hands, trunks = [], []
            for start in range(0, len(views), batch_size):
                out = encoder(stack_modality(views[start : start + batch_size], modality), Side.QUERY, project=False)
                hands.append(out.f_h.data)
                trunks.append(out.f_tr.data)
            features[modality] = (np.concatenate(hands), np.concatenate(trunks))
    return features


class StcClassifier(Module):
    """
    Query encoders with a classification head in place of the projection heads.

    Logits are the sum over present modalities of FC(f_h + f_tr); `parts` restricts
    the feature to the hand or the trunk stream.
    """

    def __init__(self, encoders: Dict[Modality, SkeletonEncoder], head: ClassificationHead, parts: str = "both"):
        self.joint = encoders.get(Modality.JOINT)
        self.motion = encoders.get(Modality.MOTION)
        self.head = head
        self.parts = parts

    @property
    def modalities(self) -> List[Modality]:
        return list(self.head.modalities)

    def encoders(self) -> Dict[Modality, SkeletonEncoder]:
        return {m: getattr(self, m.value) for m in self.modalities}

    def trainable_parameters(self) -> List[DiffTensor]:
        """
        Parameters the logits reach: the head and the part streams `parts` selects.

        Projection MLPs sit outside the classification graph.
        """
        streams = _STREAMS[self.parts]
        params = self.head.parameters()
        for encoder in self.encoders().values():
            for stream in streams:
                params.extend(getattr(encoder, stream).parameters())
        return params

    def prepare_training(self) -> List[DiffTensor]:
        """Freeze everything off the classification graph; return the parameters left trainable."""
        self.set_requires_grad(False)
        params = self.trainable_parameters()
        for p in params:
            p.requires_grad = True
        return params

    def forward(self, views: List[View]) -> DiffTensor:
        outputs = {m: enc(stack_modality(views, m), Side.QUERY, project=False) for m, enc in self.encoders().items()}
        return classify(outputs.get(Modality.JOINT), outputs.get(Modality.MOTION), self.head, self.parts)

    def scores(self, views: List[View], batch_size: int) -> np.ndarray:
        with no_grad():
            return np.concatenate([self(views[i : i + batch_size]).data for i in range(0, len(views), batch_size)])

    def save(self, path: str, config: RunConfig, metadata: Optional[dict] = None) -> None:
        # joint.*, motion.*, head.*
        state = OrderedDict(self.named_parameters())
        meta = {"kind": "classifier", "modalities": [m.value for m in self.modalities], "parts": self.parts}
        meta["num_classes"] = self.head.num_classes
        meta.update(metadata or {})
        save_checkpoint(path, state, config.to_dict(), meta)

    @classmethod
    def load(cls, path: str) -> Tuple["StcClassifier", RunConfig]:
        config, encoders = load_encoders(path)
        metadata = load_sidecar(path).get("metadata", {})
        if metadata.get("kind") != "classifier":
            raise ConfigError(f"{path} is not a classifier checkpoint")
        modalities = [Modality(m) for m in metadata["modalities"]]
        head = ClassificationHead(config.embed_dim, metadata["num_classes"], modalities, seed=(config.seed, _HEAD))
        state = load_checkpoint(path)
        head.load_state_dict({k[len("head.") :]: v for k, v in state.items() if k.startswith("head.")})
        return cls({m: encoders[m] for m in modalities}, head, metadata.get("parts", "both")), config


def evaluate_model(model: StcClassifier, dataset: PoseDataset, config: RunConfig) -> Tuple[EvalReport, np.ndarray]:
    """
    Score every sample of `dataset` from its un-augmented view.

    Returns:
        Tuple[EvalReport, np.ndarray]: The report and the (N, C) score matrix in dataset order.
    """
    scores = model.scores(eval_views(dataset, config), config.batch_size)
    return evaluate(scores, dataset.labels, config.topk), scores


def _select_encoders(
    encoders: Dict[Modality, SkeletonEncoder], modalities: Sequence[Modality], checkpoint_path: str
) -> Dict[Modality, SkeletonEncoder]:
    missing = [m.value for m in modalities if m not in encoders]
    if missing:
        raise ConfigError(f"{checkpoint_path} has no {', '.join(missing)} encoder")
    return {m: encoders[m] for m in modalities}


class Finetuner:
    """
    Supervised fine-tuning of the pre-trained query encoders with a new classification head.

    With percent < 1 only a seeded, class-stratified fraction of the training split carries
    labels (the semi-supervised protocol).
    """

    def __init__(
        self,
        checkpoint_path: str,
        dataset: PoseDataset,
        percent: float = 1.0,
        config: Optional[RunConfig] = None,
        run_name: Optional[str] = None,
        generate_log_files: bool = True,
        logger: Optional[CustomLogger] = None,
        run_db: Optional[RunDB] = None,
    ):
        if not 0.0 < percent <= 1.0:
            raise ConfigError(f"percent must lie in (0, 1], got {percent}")
        self.generate_log_files = generate_log_files
        self.logger = logger or CustomLogger.get_logger(__name__, generate_log_files=self.generate_log_files)
        self.checkpoint_path = checkpoint_path
        checkpoint_config, encoders = load_encoders(checkpoint_path)
        self.config = downstream_config(config, checkpoint_config, self.logger)
        self.percent = percent
        self.run_name = run_name or f"finetune_seed{self.config.seed}"
        self.run_db = run_db

        self.dataset = dataset
        self.train = dataset.split("train").subset(percent, self.config.seed, self.config.stratify, self.logger)
        self.test = dataset.split("test")
        modalities = self.config.downstream_modalities
        head = ClassificationHead(
            self.config.embed_dim, dataset.num_classes, modalities, seed=(self.config.seed, _HEAD)
        )
        self.model = StcClassifier(_select_encoders(encoders, modalities, checkpoint_path), head, self.config.parts)
        self.lr_history: List[float] = []

    def train_model(self) -> None:
        config = self.config
        clips = [to_joint_clips(seq, config.hand_resolution, config.crop_margin) for seq in self.train]
        labels = self.train.labels
        augment_config = AugmentConfig.from_run_config(config)
        params = self.model.prepare_training()
        optimizer = SgdState.create(params, config.finetune_lr, config.momentum)
        self.logger.info(
            f"Fine-tuning {', '.join(m.value for m in self.model.modalities)} on {len(clips)} labeled samples "
            f"({self.percent:.0%} of the training split) for {config.finetune_epochs} epochs."
        )

        for epoch in range(config.finetune_epochs):
            optimizer.lr = lr_schedule(epoch, config.finetune_lr, config.finetune_decay_every, config.lr_decay_factor)
            self.lr_history.append(optimizer.lr)
            order = np.random.default_rng((config.seed, _ORDER, epoch)).permutation(len(clips))
            losses = []
            for step, start in enumerate(range(0, len(order), config.batch_size)):
                batch = order[start : start + config.batch_size]
                views = [
                    augment_clips(clips[i], (config.seed, _AUGMENT, epoch, step, int(i)), augment_config) for i in batch
                ]
                loss = cross_entropy(self.model(views), labels[batch])
                zero_grad(params)
                backward(loss)
                sgd_step(optimizer, params)
                losses.append(loss.item())
            self.logger.info(f"epoch {epoch} lr={optimizer.lr:g} loss={np.mean(losses):.4f}")

    def run(self) -> Tuple[StcClassifier, EvalReport, np.ndarray]:
        """
        Returns:
            Tuple: The fine-tuned model, its report on the test split and the test score matrix.
        """
        self.train_model()
        report, scores = evaluate_model(self.model, self.test, self.config)
        self.logger.info(
            f"Fine-tuned P-I top-1 {report.per_instance[1]:.2f}%, P-C top-1 {report.per_class[1]:.2f}% "
            f"on {report.num_samples} test samples."
        )
        if self.run_db is not None:
            self.run_db.insert_evaluation(
                self.run_name, Protocol.FINETUNE.value, report.to_dict(), self.percent, self.config.seed
            )
        return self.model, report, scores


class LinearProbe:
    """
    A linear classifier per modality trained on frozen f_h + f_tr features; logits are summed.
    """

    def __init__(
        self,
        checkpoint_path: str,
        dataset: PoseDataset,
        config: Optional[RunConfig] = None,
        run_name: Optional[str] = None,
        generate_log_files: bool = True,
        logger: Optional[CustomLogger] = None,
        run_db: Optional[RunDB] = None,
    ):
        self.generate_log_files = generate_log_files
        self.logger = logger or CustomLogger.get_logger(__name__, generate_log_files=self.generate_log_files)
        checkpoint_config, encoders = load_encoders(checkpoint_path)
        self.config = downstream_config(config, checkpoint_config, self.logger)
        self.run_name = run_name or f"linear_probe_seed{self.config.seed}"
        self.run_db = run_db

        self.train = dataset.split("train")
        self.test = dataset.split("test")
        modalities = self.config.downstream_modalities
        self.encoders = _select_encoders(encoders, modalities, checkpoint_path)
        for encoder in self.encoders.values():
            encoder.set_requires_grad(False)
        self.head = ClassificationHead(
            self.config.embed_dim, dataset.num_classes, modalities, seed=(self.config.seed, _HEAD)
        )
        self.lr_history: List[float] = []

    def _logits(self, features: Dict[Modality, Tuple[np.ndarray, np.ndarray]], rows) -> DiffTensor:
        outputs = {
            m: BranchOutput(DiffTensor(f_h[rows]), DiffTensor(f_tr[rows]), None, None, Side.QUERY)
            for m, (f_h, f_tr) in features.items()
        }
        return classify(outputs.get(Modality.JOINT), outputs.get(Modality.MOTION), self.head, self.config.parts)

    def run(self) -> Tuple[StcClassifier, EvalReport, np.ndarray]:
        config = self.config
        train_features = extract_features(self.encoders, eval_views(self.train, config), config.batch_size)
        labels = self.train.labels
        params = self.head.parameters()
        optimizer = SgdState.create(params, config.probe_lr, config.momentum)
        n = len(labels)

        for epoch in range(config.probe_epochs):
            optimizer.lr = lr_schedule(epoch, config.probe_lr, config.probe_decay_every, config.lr_decay_factor)
            self.lr_history.append(optimizer.lr)
            self.logger.info(f"linear probe epoch {epoch} lr={optimizer.lr:g}")
            order = np.random.default_rng((config.seed, _ORDER, epoch)).permutation(n)
            for start in range(0, n, config.batch_size):
                rows = order[start : start + config.batch_size]
                loss = cross_entropy(self._logits(train_features, rows), labels[rows])
                zero_grad(params)
                backward(loss)
                sgd_step(optimizer, params)

        test_features = extract_features(self.encoders, eval_views(self.test, config), config.batch_size)
        with no_grad():
            scores = self._logits(test_features, np.arange(len(self.test))).data
        report = evaluate(scores, self.test.labels, config.topk)
        self.logger.info(f"Linear probe P-I top-1 {report.per_instance[1]:.2f}%, P-C top-1 {report.per_class[1]:.2f}%.")
        if self.run_db is not None:
            self.run_db.insert_evaluation(
                self.run_name, Protocol.LINEAR_PROBE.value, report.to_dict(), 1.0, config.seed
            )
        return StcClassifier(self.encoders, self.head, config.parts), report, scores


def finetune(checkpoint_path: str, dataset: PoseDataset, percent: float = 1.0, **kwargs):
    return Finetuner(checkpoint_path, dataset, percent, **kwargs).run()


def linear_probe(checkpoint_path: str, dataset: PoseDataset, **kwargs):
    return LinearProbe(checkpoint_path, dataset, **kwargs).run()
