import datetime
import math
import os

from collections import OrderedDict
from concurrent.futures import ThreadPoolExecutor
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import wandb

from stc_slr.augment import AugmentConfig, View, augment_clips
from stc_slr.checkpoint import save_checkpoint
from stc_slr.contrastive import BankQuartet, branch_contrastive_loss, consistency_loss
from stc_slr.custom_logger import CustomLogger
from stc_slr.encoder import BranchOutput, EncoderSizes, SkeletonEncoder, momentum_update, stack_modality
from stc_slr.exceptions import ConfigError, NonFiniteError, TrainingDivergedError
from stc_slr.optim import SgdState, lr_schedule, sgd_step
from stc_slr.pose_data import PoseDataset, to_joint_clips
from stc_slr.run_db import RunDB
from stc_slr.settings.config_loader import get_settings
from stc_slr.settings.config_schema import Modality, Protocol, RunConfig, Side
from stc_slr.tensor_core import DiffTensor, add, backward, no_grad, scale, zero_grad
from stc_slr.transfer import ModalSummary, build_anchors, kt_loss

# Seed stream tags, so no two draws share a seed sequence
_WARMUP, _TRAIN, _ORDER = 0, 1, 3


def encoder_seed(config: RunConfig, modality: Modality) -> Tuple[int, int]:
    return (config.seed, 0 if modality == Modality.JOINT else 1)


def build_encoders(config: RunConfig, modalities: Sequence[Modality]) -> Dict[Modality, SkeletonEncoder]:
    sizes = EncoderSizes.from_run_config(config)
    return {m: SkeletonEncoder(sizes, seed=encoder_seed(config, m)) for m in modalities}


def encoder_state(encoders: Dict[Modality, SkeletonEncoder]) -> "OrderedDict[str, DiffTensor]":
    """Checkpoint names are `<modality>.<parameter path>`."""
    state = OrderedDict()
    for modality in (Modality.JOINT, Modality.MOTION):
        if modality in encoders:
            for name, p in encoders[modality].named_parameters():
                state[f"{modality.value}.{name}"] = p
    return state


class Pretrainer:
    """
    Momentum-contrast pre-training of the joint and motion encoders.

    Each step draws a query and a key view of every sample, runs the four encoders
    (modality x side), minimizes
        lambda_J (CL_J + con_J) + lambda_M (CL_M + con_M) + KT
    over the query encoders, moves the key encoders towards them and pushes the key
    embeddings into all banks in lockstep.
    """

    def __init__(
        self,
        config: RunConfig,
        dataset: PoseDataset,
        checkpoint_path: str,
        run_name: Optional[str] = None,
        generate_log_files: bool = True,
        logger: Optional[CustomLogger] = None,
        run_db: Optional[RunDB] = None,
    ):
        """
        Args:
            config (RunConfig): Run configuration.
            dataset (PoseDataset): Samples to pre-train on; labels are never read.
            checkpoint_path (str): Where the query encoders are written.
            run_name (Optional[str]): Name used in the run log. Defaults to `pretrain_seed<seed>`.
            generate_log_files (bool): Write the log file.
            logger (Optional[CustomLogger]): Defaults to a module logger.
            run_db (Optional[RunDB]): Receives one row per optimizer step when given.

        Raises:
            ConfigError: If the (fraction of the) dataset holds fewer than `batch_size` samples.
        """
        self.config = config
        self.checkpoint_path = checkpoint_path
        self.run_name = run_name or f"pretrain_seed{config.seed}"
        self.generate_log_files = generate_log_files
        self.logger = logger or CustomLogger.get_logger(__name__, generate_log_files=self.generate_log_files)
        self.run_db = run_db

        self.modalities = config.pretrain_modalities
        self.augment_config = AugmentConfig.from_run_config(config)
        self.query = build_encoders(config, self.modalities)
        self.key = {m: enc.clone(requires_grad=False) for m, enc in self.query.items()}
        self.params = [p for m in self.modalities for p in self.query[m].parameters()]
        self.optimizer = SgdState.create(self.params, config.lr, config.momentum)
        self.banks = BankQuartet(config.bank_size, config.proj_dim, self.modalities)
        self.weights = {Modality.JOINT: config.lambda_joint, Modality.MOTION: config.lambda_motion}

        self.dataset = dataset
        if config.pretrain_fraction > 0:
            self.dataset = dataset.subset(config.pretrain_fraction, config.seed, config.stratify, self.logger)
            if len(self.dataset) < config.batch_size:
                raise ConfigError(
                    f"pre-training needs at least batch_size={config.batch_size} samples, got {len(self.dataset)}"
                )
        self.clips = [to_joint_clips(seq, config.hand_resolution, config.crop_margin) for seq in self.dataset]

        self.global_step = 0
        self.history: List[Dict[str, Optional[float]]] = []
        self.use_wandb = False

    @property
    def steps_per_epoch(self) -> int:
        return len(self.clips) // self.config.batch_size

    def _views(self, indices: Sequence[int], tag: int, epoch: int, step: int) -> Tuple[List[View], List[View]]:
        def pair(i):
            base = [self.config.seed, tag, epoch, step, int(i)]
            return (
                augment_clips(self.clips[i], base + [0], self.augment_config),
                augment_clips(self.clips[i], base + [1], self.augment_config),
            )

        if self.config.num_workers > 1:
            with ThreadPoolExecutor(max_workers=self.config.num_workers) as pool:
                pairs = list(pool.map(pair, indices))
        else:
            pairs = [pair(i) for i in indices]
        return [q for q, _ in pairs], [k for _, k in pairs]

    def _batches(self, epoch: int) -> List[np.ndarray]:
        order = np.random.default_rng((self.config.seed, _ORDER, epoch)).permutation(len(self.clips))
        b = self.config.batch_size
        return [order[i * b : (i + 1) * b] for i in range(self.steps_per_epoch)]

    def _encode_keys(self, views: List[View]) -> Dict[Modality, BranchOutput]:
        with no_grad():
            return {m: self.key[m](stack_modality(views, m), Side.KEY) for m in self.modalities}

    def warm_up(self) -> int:
        """
        Fill the banks with key embeddings of ceil(N / B) batches, capped at one epoch. No loss, no update.

        Returns:
            int: Bank length afterwards.
        """
        batches = self._batches(0)[: math.ceil(self.config.bank_size / self.config.batch_size)]
        for step, indices in enumerate(batches):
            _, views_k = self._views(indices, _WARMUP, 0, step)
            self.banks.push_all(self._encode_keys(views_k))
        self.logger.info(f"Memory banks warmed up with {len(self.banks)} entries over {len(batches)} batches.")
        return len(self.banks)

    def compute_losses(
        self, views_q: List[View], views_k: List[View]
    ) -> Tuple[DiffTensor, Dict[str, Optional[float]], Dict[Modality, BranchOutput]]:
        """
        Forward pass of one step.

        Returns:
            Tuple: total loss, loss components (None for disabled terms), key outputs to push.
        """
        config = self.config
        components: Dict[str, Optional[float]] = {
            "cl_joint": None,
            "con_joint": None,
            "cl_motion": None,
            "con_motion": None,
            "kt": None,
            "total": None,
        }
        try:
            queries = {m: self.query[m](stack_modality(views_q, m), Side.QUERY) for m in self.modalities}
            keys = self._encode_keys(views_k)

            total = None
            for m in self.modalities:
                branch = branch_contrastive_loss(queries[m], keys[m], self.banks.pair(m), config.tau_contrast)
                components[f"cl_{m.value}"] = branch.item()
                if config.use_consistency:
                    con = consistency_loss(queries[m], keys[m], config.tau_consistency)
                    components[f"con_{m.value}"] = con.item()
                    branch = add(branch, con)
                weighted = scale(branch, self.weights[m])
                total = weighted if total is None else add(total, weighted)

            if config.use_kt and len(self.modalities) == 2:
                summaries = ModalSummary.from_outputs(
                    queries[Modality.JOINT], keys[Modality.JOINT], queries[Modality.MOTION], keys[Modality.MOTION]
                )
                k = min(config.num_neighbors, len(self.banks))
                kt = kt_loss(summaries, build_anchors(self.banks), k, config.tau_teacher, config.tau_student)
                components["kt"] = kt.item()
                total = add(total, kt)
        except NonFiniteError as e:
            seen = {k: v for k, v in components.items() if v is not None}
            raise TrainingDivergedError(self.global_step, seen, str(e)) from e

        components["total"] = total.item()
        if not all(math.isfinite(v) for v in components.values() if v is not None):
            raise TrainingDivergedError(self.global_step, components)
        return total, components, keys

    def train_step(self, indices: Sequence[int], epoch: int, step: int) -> Dict[str, Optional[float]]:
        views_q, views_k = self._views(indices, _TRAIN, epoch, step)
        total, components, keys = self.compute_losses(views_q, views_k)

        zero_grad(self.params)
        backward(total)
        sgd_step(self.optimizer, self.params)
        for m in self.modalities:
            momentum_update(self.query[m], self.key[m], self.config.key_momentum)
        self.banks.push_all(keys)
        self.global_step += 1
        return components

    def save(self, epochs_completed: int) -> None:
        metadata = {
            "kind": Protocol.PRETRAIN.value,
            "modalities": [m.value for m in self.modalities],
            "epochs_completed": epochs_completed,
            "steps": self.global_step,
            "num_samples": len(self.clips),
        }
        save_checkpoint(self.checkpoint_path, encoder_state(self.query), self.config.to_dict(), metadata)

    def _log_step(self, epoch: int, step: int, lr: float, components: Dict[str, Optional[float]]) -> None:
        self.logger.info(f"epoch {epoch} step {step} lr={lr:g} {CustomLogger.format_components(components)}")
        if self.run_db is not None:
            self.run_db.insert_step(self.run_name, Protocol.PRETRAIN.value, epoch, step, lr, components)
        if self.use_wandb:
            wandb.log({"lr": lr, **{k: v for k, v in components.items() if v is not None}}, step=self.global_step)

    def run(self) -> str:
        """
        Pre-train for `pretrain_epochs` epochs and return the checkpoint path.

        A pretrain_fraction of 0 skips training and writes the randomly initialized encoders.

        Raises:
            TrainingDivergedError: On a non-finite loss, naming the step and the loss components.
        """
        if self.config.pretrain_fraction == 0:
            self.logger.info("pretrain_fraction is 0; writing randomly initialized encoders.")
            self.save(epochs_completed=0)
            return self.checkpoint_path

        # Check if user has exported the WANDB_API_KEY environment variable
        if "WANDB_API_KEY" in os.environ:
            wandb.login(key=os.environ["WANDB_API_KEY"])
            time_and_date = datetime.datetime.now().strftime("%Y-%m-%d_%H-%M-%S")
            project = get_settings().get("default").get("wandb_project", "stc-slr")
            wandb.init(project=project, name=f"{self.run_name}_" + time_and_date)
            self.use_wandb = True

        self.logger.info(
            f"Pre-training {', '.join(m.value for m in self.modalities)} on {len(self.clips)} samples, "
            f"{self.steps_per_epoch} steps per epoch for {self.config.pretrain_epochs} epochs."
        )
        self.warm_up()
        epochs = self.config.pretrain_epochs
        for epoch in range(epochs):
            lr = lr_schedule(epoch, self.config.lr, self.config.lr_decay_every, self.config.lr_decay_factor)
            self.optimizer.lr = lr
            for step, indices in enumerate(self._batches(epoch + 1)):
                components = self.train_step(indices, epoch, step)
                self.history.append(components)
                self._log_step(epoch, step, lr, components)

            if (epoch + 1) % self.config.checkpoint_every == 0 or epoch + 1 == epochs:
                self.save(epochs_completed=epoch + 1)
                self.logger.info(f"Checkpoint written to {self.checkpoint_path} after epoch {epoch + 1}.")

        if epochs == 0:
            self.save(epochs_completed=0)
        if self.use_wandb:
            wandb.finish()
        return self.checkpoint_path


def pretrain(config: RunConfig, dataset: PoseDataset, checkpoint_path: str, **kwargs) -> str:
    return Pretrainer(config, dataset, checkpoint_path, **kwargs).run()
