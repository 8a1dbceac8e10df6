import argparse
import datetime
import json
import os

from typing import Optional

from dynaconf import Dynaconf

from stc_slr.custom_logger import CustomLogger
from stc_slr.embeddings import export_embeddings
from stc_slr.experiments import PRESETS, run_ablation
from stc_slr.finetuner import Finetuner, LinearProbe, StcClassifier, evaluate_model
from stc_slr.metrics import fuse_scores, write_scores
from stc_slr.pose_data import load_dataset, read_manifest
from stc_slr.pretrainer import pretrain
from stc_slr.run_db import RunDB
from stc_slr.settings.config_loader import get_settings
from stc_slr.settings.config_schema import MODALITY_CHOICES, PART_CHOICES, Protocol, RunConfig
from stc_slr.synth import synth_generate
from stc_slr.version import __version__


def _common_definitions(settings: Dynaconf) -> list:
    # Accepts from environment variables first
    log_db_path = os.getenv("LOG_DB_PATH") or settings.get("log_db_path")
    return [
        ("--config", dict(type=str, default=None, help="Flat key/value run configuration file. Default: packaged.")),
        ("--profile", dict(type=str, default=None, help="Settings profile overlaid on the defaults, e.g. synthetic.")),
        (
            "--run-dir",
            dict(type=str, default=settings.get("run_dir"), help="Directory for run outputs. Default: %(default)s."),
        ),
        (
            "--log-db-path",
            dict(type=str, default=log_db_path, help="Path to the SQLite run log. Default: %(default)s."),
        ),
        (
            "--report-filepath",
            dict(
                type=str,
                default=settings.get("report_filepath"),
                help="Path to the HTML run report. Default: %(default)s.",
            ),
        ),
        (
            "--suppress-log-files",
            dict(action="store_true", help="Suppress all generated log files (log, DB and HTML report)."),
        ),
    ]


# Dest names equal RunConfig fields, so RunConfig.from_cli_args_with_defaults picks them up
_OVERRIDE_DEFINITIONS = [
    ("--seed", dict(type=int, default=None, help="Run seed.")),
    ("--batch-size", dict(type=int, default=None, help="Minibatch size B.")),
    ("--pretrain-epochs", dict(type=int, default=None, help="Pre-training epochs.")),
    ("--finetune-epochs", dict(type=int, default=None, help="Fine-tuning epochs.")),
    ("--probe-epochs", dict(type=int, default=None, help="Linear probe epochs.")),
    ("--bank-size", dict(type=int, default=None, help="Memory bank capacity N.")),
    ("--num-neighbors", dict(type=int, default=None, help="Knowledge-transfer neighbors K.")),
    ("--modalities", dict(type=str, default=None, choices=MODALITY_CHOICES, help="Branches to pre-train.")),
    (
        "--finetune-modalities",
        dict(type=str, default=None, choices=MODALITY_CHOICES, help="Branches used downstream."),
    ),
    ("--parts", dict(type=str, default=None, choices=PART_CHOICES, help="Parts feeding the classifier.")),
    ("--num-workers", dict(type=int, default=None, help="Loader and augmentation threads.")),
]

_COMMANDS = {
    "pretrain": [
        ("--data", dict(type=str, required=True, help="Dataset manifest.")),
        ("--out", dict(type=str, required=True, help="Checkpoint path to write.")),
    ],
    "finetune": [
        ("--ckpt", dict(type=str, required=True, help="Pre-trained checkpoint.")),
        ("--data", dict(type=str, required=True, help="Dataset manifest.")),
        ("--percent", dict(type=float, default=1.0, help="Labeled fraction of the training split. Default: 1.0.")),
        ("--out", dict(type=str, default=None, help="Classifier checkpoint path. Default: <run dir>/model.stck.")),
    ],
    "linear-probe": [
        ("--ckpt", dict(type=str, required=True, help="Pre-trained checkpoint.")),
        ("--data", dict(type=str, required=True, help="Dataset manifest.")),
        ("--out", dict(type=str, default=None, help="Classifier checkpoint path. Default: <run dir>/model.stck.")),
    ],
    "eval": [
        ("--model", dict(type=str, required=True, help="Classifier checkpoint from finetune or linear-probe.")),
        ("--data", dict(type=str, required=True, help="Dataset manifest; the test split is scored.")),
        ("--scores-out", dict(type=str, default=None, help="Score CSV path. Default: <run dir>/scores.csv.")),
    ],
    "fuse": [
        ("--a", dict(type=str, required=True, help="First score file.")),
        ("--b", dict(type=str, required=True, help="Second score file.")),
        ("--data", dict(type=str, required=True, help="Dataset manifest holding the labels.")),
    ],
    "synth": [
        ("--out", dict(type=str, required=True, help="Output directory.")),
        ("--classes", dict(type=int, default=8, help="Number of classes. Default: %(default)s.")),
        ("--per-class", dict(type=int, default=40, help="Samples per class. Default: %(default)s.")),
        ("--frames", dict(type=int, default=64, help="Frames per sample. Default: %(default)s.")),
        ("--signers", dict(type=int, default=4, help="Number of signers. Default: %(default)s.")),
        ("--resolution", dict(type=int, nargs=2, default=[256, 256], help="Source width and height.")),
        ("--noise", dict(type=float, default=0.02, help="Noise sigma as a fraction of the width.")),
        ("--noiseless", dict(action="store_true", help="Emit exact class prototypes.")),
    ],
    "export-embeddings": [
        ("--ckpt", dict(type=str, required=True, help="Checkpoint.")),
        ("--data", dict(type=str, required=True, help="Dataset manifest.")),
        ("--out", dict(type=str, required=True, help="CSV path.")),
    ],
    "ablation": [
        ("--name", dict(type=str, required=True, choices=sorted(PRESETS), help="Ablation preset.")),
        ("--data", dict(type=str, required=True, help="Dataset manifest.")),
        ("--seeds", dict(type=int, nargs="+", default=[0, 1, 2], help="Seeds. Default: %(default)s.")),
    ],
}


def parse_args(settings: Dynaconf, argv: Optional[list] = None) -> argparse.Namespace:
    """
    Parse command line arguments.
    """
    parser = argparse.ArgumentParser(description=f"STC sign language pre-training v{__version__}")
    subparsers = parser.add_subparsers(dest="command", required=True)

    for command, definitions in _COMMANDS.items():
        sub = subparsers.add_parser(command)
        arg_definitions = definitions + _common_definitions(settings)
        if command != "synth":
            arg_definitions = arg_definitions + _OVERRIDE_DEFINITIONS
        else:
            arg_definitions = arg_definitions + [("--seed", dict(type=int, default=0, help="Generator seed."))]
        for name, kwargs in arg_definitions:
            sub.add_argument(name, **kwargs)

    return parser.parse_args(argv)


class CommandRunner:
    """
    Executes one CLI command; results go to stdout as JSON and to `<run dir>/<run name>/`.
    """

    def __init__(self, args: argparse.Namespace, logger: Optional[CustomLogger] = None):
        self.args = args
        self.generate_log_files = not args.suppress_log_files
        time_and_date = datetime.datetime.now().strftime("%Y-%m-%d_%H-%M-%S")
        self.run_name = f"{args.command}_" + time_and_date
        self.run_path = os.path.join(args.run_dir, self.run_name)

        self.logger = logger or CustomLogger.get_logger(
            __name__, generate_log_files=self.generate_log_files, log_dir=self.run_path
        )
        if args.suppress_log_files:
            self.logger.info("Suppressed all generated log files.")
        self.run_db = RunDB(f"sqlite:///{args.log_db_path}") if self.generate_log_files else None

    def config(self) -> RunConfig:
        return RunConfig.from_cli_args_with_defaults(self.args)

    def _shared(self) -> dict:
        return dict(
            run_name=self.run_name, generate_log_files=self.generate_log_files, logger=self.logger, run_db=self.run_db
        )

    def _dataset(self, config: Optional[RunConfig] = None):
        return load_dataset(self.args.data, num_workers=config.num_workers if config else 1)

    def pretrain(self) -> dict:
        config = self.config()
        dataset = self._dataset(config).split("train")
        path = pretrain(config, dataset, self.args.out, **self._shared())
        return {"checkpoint": path, "samples": len(dataset), "seed": config.seed}

    def _downstream(self, protocol_cls, *extra) -> dict:
        config = self.config()
        dataset = self._dataset(config)
        runner = protocol_cls(self.args.ckpt, dataset, *extra, config=config, **self._shared())
        model, report, _ = runner.run()
        out = self.args.out or os.path.join(self.run_path, "model.stck")
        model.save(out, runner.config, {"source": self.args.ckpt})
        return {"model": out, "report": report.to_dict()}

    def finetune(self) -> dict:
        return self._downstream(Finetuner, self.args.percent)

    def linear_probe(self) -> dict:
        return self._downstream(LinearProbe)

    def eval(self) -> dict:
        model, model_config = StcClassifier.load(self.args.model)
        overrides = RunConfig.from_cli_args_with_defaults(self.args)
        config = model_config.replace(num_workers=overrides.num_workers, topk=overrides.topk)
        test = self._dataset(config).split("test")
        report, scores = evaluate_model(model, test, config)
        scores_path = self.args.scores_out or os.path.join(self.run_path, "scores.csv")
        write_scores(scores_path, test.sample_ids, scores)
        if self.run_db is not None:
            self.run_db.insert_evaluation(self.run_name, Protocol.EVAL.value, report.to_dict(), 1.0, config.seed)
        return {"scores": scores_path, "report": report.to_dict()}

    def fuse(self) -> dict:
        manifest = read_manifest(self.args.data)
        labels = {entry.sample_id: entry.label for entry in manifest.samples}
        topk = RunConfig.from_cli_args_with_defaults(self.args).topk
        report = fuse_scores(self.args.a, self.args.b, labels, topk)
        if self.run_db is not None:
            self.run_db.insert_evaluation(self.run_name, Protocol.FUSION.value, report.to_dict())
        return {"report": report.to_dict()}

    def synth(self) -> dict:
        manifest = synth_generate(
            self.args.out,
            num_classes=self.args.classes,
            samples_per_class=self.args.per_class,
            num_frames=self.args.frames,
            seed=self.args.seed,
            resolution=tuple(self.args.resolution),
            num_signers=self.args.signers,
            noise_frac=self.args.noise,
            noiseless=self.args.noiseless,
            logger=self.logger,
        )
        return {"manifest": manifest}

    def export_embeddings(self) -> dict:
        config = self.config()
        dataset = self._dataset(config)
        path = export_embeddings(self.args.ckpt, dataset, self.args.out, config=config, logger=self.logger)
        return {"embeddings": path, "rows": len(dataset)}

    def ablation(self) -> dict:
        config = self.config()
        dataset = self._dataset(config)
        return run_ablation(
            self.args.name,
            dataset,
            config,
            self.args.seeds,
            os.path.join(self.run_path, "checkpoints"),
            generate_log_files=self.generate_log_files,
            logger=self.logger,
            run_db=self.run_db,
        )

    def run(self) -> dict:
        handler = getattr(self, self.args.command.replace("-", "_"))
        result = handler()
        os.makedirs(self.run_path, exist_ok=True)
        with open(os.path.join(self.run_path, "report.json"), "w") as f:
            json.dump(result, f, indent=2, sort_keys=True)

        # Only generate report if file generation is enabled
        if self.generate_log_files:
            self.run_db.dump_to_report(self.args.report_filepath)
        return result


def main(argv: Optional[list] = None):
    settings = get_settings().get("default")
    args = parse_args(settings, argv)
    result = CommandRunner(args).run()
    print(json.dumps(result, indent=2, sort_keys=True))


if __name__ == "__main__":
    main()
