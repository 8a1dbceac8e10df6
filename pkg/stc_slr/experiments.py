"""
Ablation presets: named lists of experiment variants, each pre-trained, evaluated
downstream and summarized over several seeds.
"""

import hashlib
import json
import os

from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from stc_slr.custom_logger import CustomLogger
from stc_slr.finetuner import finetune, linear_probe
from stc_slr.pose_data import PoseDataset
from stc_slr.pretrainer import pretrain
from stc_slr.run_db import RunDB
from stc_slr.settings.config_schema import Protocol, RunConfig


@dataclass(frozen=True)
class ExperimentSpec:
    """
    One row of an ablation table.

    Attributes:
        label (str): Row label.
        overrides (dict): RunConfig fields changed from the base config.
        protocol (Protocol): FINETUNE or LINEAR_PROBE.
        percent (float): Labeled fraction used by fine-tuning.
    """

    label: str
    overrides: dict = field(default_factory=dict)
    protocol: Protocol = Protocol.FINETUNE
    percent: float = 1.0


def _pretrain_modality(base: RunConfig) -> List[ExperimentSpec]:
    return [
        ExperimentSpec("Only Joint", {"modalities": "joint", "finetune_modalities": "joint"}),
        ExperimentSpec("Only Motion", {"modalities": "motion", "finetune_modalities": "motion"}),
        ExperimentSpec("Joint+Motion", {"modalities": "both", "finetune_modalities": "both"}),
    ]


def _knowledge_transfer(base: RunConfig) -> List[ExperimentSpec]:
    specs = []
    for modality in ("joint", "motion"):
        specs.append(ExperimentSpec(f"{modality} w/o KT", {"modalities": modality, "finetune_modalities": modality}))
        specs.append(
            ExperimentSpec(f"{modality} w KT", {"modalities": "both", "use_kt": True, "finetune_modalities": modality})
        )
    return specs


def _objectives(base: RunConfig) -> List[ExperimentSpec]:
    return [
        ExperimentSpec("L_CL", {"use_consistency": False, "use_kt": False}),
        ExperimentSpec("L_CL + L_con", {"use_consistency": True, "use_kt": False}),
        ExperimentSpec("L_CL + L_KT", {"use_consistency": False, "use_kt": True}),
        ExperimentSpec("L_CL + L_con + L_KT", {"use_consistency": True, "use_kt": True}),
    ]


def _granularity(base: RunConfig) -> List[ExperimentSpec]:
    return [
        ExperimentSpec("Hand", {"parts": "hand"}),
        ExperimentSpec("Trunk", {"parts": "trunk"}),
        ExperimentSpec("Hand+Trunk", {"parts": "both"}),
    ]


def _loss_weights(base: RunConfig) -> List[ExperimentSpec]:
    return [
        ExperimentSpec(f"lambda_J={w}", {"lambda_joint": w, "lambda_motion": round(1.0 - w, 2)})
        for w in (0.3, 0.4, 0.5, 0.6, 0.7)
    ]


def _neighbors(base: RunConfig) -> List[ExperimentSpec]:
    sizes = sorted({max(1, base.bank_size // d) for d in (16, 8, 4, 2, 1)})
    return [ExperimentSpec(f"K={k}", {"num_neighbors": k}) for k in sizes]


def _data_scale(base: RunConfig) -> List[ExperimentSpec]:
    return [ExperimentSpec(f"{int(f * 100)}%", {"pretrain_fraction": f}) for f in (0.0, 0.25, 0.5, 0.75, 1.0)]


def _semi_supervised(base: RunConfig) -> List[ExperimentSpec]:
    return [ExperimentSpec(f"{int(p * 100)}% labels", percent=p) for p in (0.2, 0.4, 0.6, 1.0)]


def _linear(base: RunConfig) -> List[ExperimentSpec]:
    return [
        ExperimentSpec("Random init", {"pretrain_fraction": 0.0}, Protocol.LINEAR_PROBE),
        ExperimentSpec("Pre-trained", {}, Protocol.LINEAR_PROBE),
    ]


PRESETS: Dict[str, Callable[[RunConfig], List[ExperimentSpec]]] = {
    "pretrain-modality": _pretrain_modality,
    "knowledge-transfer": _knowledge_transfer,
    "objectives": _objectives,
    "granularity": _granularity,
    "loss-weights": _loss_weights,
    "neighbors": _neighbors,
    "data-scale": _data_scale,
    "semi-supervised": _semi_supervised,
    "linear": _linear,
}

# Fields that only matter after pre-training; runs differing only here share a checkpoint
DOWNSTREAM_FIELDS = (
    "finetune_modalities",
    "parts",
    "finetune_epochs",
    "finetune_lr",
    "finetune_decay_every",
    "probe_epochs",
    "probe_lr",
    "probe_decay_every",
    "topk",
)


def preset_specs(name: str, base: RunConfig) -> List[ExperimentSpec]:
    if name not in PRESETS:
        raise KeyError(f"Unknown ablation '{name}'; expected one of {', '.join(PRESETS)}")
    return PRESETS[name](base)


def pretrain_key(config: RunConfig) -> str:
    values = {k: v for k, v in config.to_dict().items() if k not in DOWNSTREAM_FIELDS}
    return hashlib.sha1(json.dumps(values, sort_keys=True).encode("utf-8")).hexdigest()[:12]


class AblationRunner:
    """
    Runs every variant of a preset for every seed and reports mean and std of top-1 accuracy.

    Pre-training checkpoints are shared between variants whose pre-training settings match.
    """

    def __init__(
        self,
        name: str,
        dataset: PoseDataset,
        base_config: RunConfig,
        seeds: Sequence[int],
        out_dir: str,
        generate_log_files: bool = True,
        logger: Optional[CustomLogger] = None,
        run_db: Optional[RunDB] = None,
    ):
        self.name = name
        self.dataset = dataset
        self.base_config = base_config
        self.seeds = list(seeds)
        self.specs = preset_specs(name, base_config)
        self.out_dir = out_dir
        self.generate_log_files = generate_log_files
        self.logger = logger or CustomLogger.get_logger(__name__, generate_log_files=self.generate_log_files)
        self.run_db = run_db
        self.checkpoints: Dict[str, str] = {}

    def _checkpoint(self, config: RunConfig) -> str:
        key = pretrain_key(config)
        if key not in self.checkpoints:
            path = os.path.join(self.out_dir, f"pretrain_{key}.stck")
            self.checkpoints[key] = pretrain(
                config,
                self.dataset.split("train"),
                path,
                run_name=f"{self.name}_pretrain_{key}",
                generate_log_files=self.generate_log_files,
                logger=self.logger,
                run_db=self.run_db,
            )
        return self.checkpoints[key]

    def run_one(self, spec: ExperimentSpec, seed: int) -> dict:
        config = self.base_config.replace(seed=seed, **spec.overrides)
        checkpoint = self._checkpoint(config)
        run_name = f"{self.name}_{spec.label}_seed{seed}"
        kwargs = dict(
            config=config,
            run_name=run_name,
            generate_log_files=self.generate_log_files,
            logger=self.logger,
            run_db=self.run_db,
        )
        if spec.protocol == Protocol.LINEAR_PROBE:
            _, report, _ = linear_probe(checkpoint, self.dataset, **kwargs)
        else:
            _, report, _ = finetune(checkpoint, self.dataset, spec.percent, **kwargs)
        return report.to_dict()

    def run(self) -> dict:
        rows = []
        for spec in self.specs:
            reports = []
            for seed in self.seeds:
                self.logger.info(f"[{self.name}] {spec.label}, seed {seed}")
                reports.append(self.run_one(spec, seed))
            rows.append(summarize(spec, self.seeds, reports))
            self.logger.info(
                f"[{self.name}] {spec.label}: P-I top-1 "
                f"{rows[-1]['pi_top1_mean']:.2f} +/- {rows[-1]['pi_top1_std']:.2f}"
            )
        return {"ablation": self.name, "seeds": self.seeds, "rows": rows}


def summarize(spec: ExperimentSpec, seeds: Sequence[int], reports: List[dict]) -> dict:
    pi = np.array([r["per_instance"]["top1"] for r in reports], dtype=np.float64)
    pc = np.array([r["per_class"]["top1"] for r in reports], dtype=np.float64)
    return {
        "label": spec.label,
        "protocol": spec.protocol.value,
        "percent": spec.percent,
        "overrides": dict(spec.overrides),
        "seeds": list(seeds),
        "pi_top1": pi.tolist(),
        "pc_top1": pc.tolist(),
        "pi_top1_mean": float(pi.mean()),
        "pi_top1_std": float(pi.std()),
        "pc_top1_mean": float(pc.mean()),
        "pc_top1_std": float(pc.std()),
    }


def run_ablation(
    name: str, dataset: PoseDataset, base_config: RunConfig, seeds: Sequence[int], out_dir: str, **kwargs
) -> dict:
    return AblationRunner(name, dataset, base_config, seeds, out_dir, **kwargs).run()
