#!/usr/bin/env python
# coding=utf-8
""" Synthetic data generation, training, evaluation, ablation and prompt attention dumps for few-shot product title
generation with multimodal prompts."""
import argparse
import dataclasses
import faulthandler
import logging
import sys
from pathlib import Path
from typing import List, Optional, Tuple

import pandas as pd
import transformers
import yaml
from transformers import HfArgumentParser, set_seed

from arguments.data_arguments import DataArguments
from arguments.model_arguments import ModelArguments
from arguments.training_arguments import AblationSetting, Phase, TrainArguments, parse_settings
from data_synthesis.dataset_io import generate_dataset, load_dataset, save_dataset
from evaluation.metrics import format_eval_lines, read_eval_file, score_corpus
from prompts.cycle_alignment import cycle_align, dump_attention
from storage.checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from storage.reports import save_report
from training.ablation import ablate, save_ablation
from training.pipeline import run_mpl
from training.trainer import evaluate_split
from utils.exceptions import ContractError, DatasetFormatError, MplError, UsageError
from utils.reporting import args_to_dict, save_experiment_params, write_report_section

logger = logging.getLogger(__name__)

faulthandler.enable()

ARGUMENT_CLASSES = (ModelArguments, DataArguments, TrainArguments)

# command line flag -> argument field
FLAG_FIELDS = {
    "seed": "seed",
    "phase": "phase",
    "fewshot": "fewshot_fraction",
    "beam": "num_beams",
    "settings": "ablation_settings",
    "out": "output_dir",
    "data": "data_dir",
}

CHECKPOINT_FILE = "checkpoint.mpl"


def setup_logging():
    logging.basicConfig(
        format="%(asctime)s - %(levelname)s - %(name)s -   %(message)s",
        datefmt="%m/%d/%Y %H:%M:%S",
        handlers=[logging.StreamHandler(sys.stdout)],
    )
    logging.getLogger().setLevel(logging.INFO)
    transformers.utils.logging.set_verbosity_warning()


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML file with a flat mapping of argument names to values.")
    common.add_argument("--seed", type=int, help="Random seed of initialization, shuffling and dropout.")
    common.add_argument("--phase", choices=[phase.value for phase in Phase], help="Training phase to run.")
    common.add_argument("--fewshot", type=float, help="Fraction of the training split used for training.")
    common.add_argument("--beam", type=int, help="Beam size of the generation.")
    common.add_argument("--settings", help="Comma separated ablation settings, e.g. 'base,mpl'. "
                                           "A single setting also selects the variant trained by train.")
    common.add_argument("--init", help="Checkpoint to start from (train) or to evaluate (eval, dump-attention).")
    common.add_argument("--out", help="Output directory.")
    common.add_argument("--data", help="Dataset directory.")
    common.add_argument("--split", default="test", choices=["train", "validation", "test"],
                        help="Split to evaluate.")
    common.add_argument("--predictions", help="Score a 'candidate<TAB>references' file instead of a checkpoint.")
    common.add_argument("--assert-ordering", action="store_true",
                        help="Exit with 1 if the median CIDEr ordering of the ablation settings does not hold.")

    parser = argparse.ArgumentParser(prog="run_mpl.py", description=__doc__)
    subparsers = parser.add_subparsers(dest="command", required=True)
    subparsers.add_parser("gen-data", parents=[common], help="Generate the synthetic dataset files.")
    subparsers.add_parser("train", parents=[common], help="Train (UPT, MPT or both) and write a checkpoint.")
    subparsers.add_parser("eval", parents=[common], help="Generate titles for a split and score them.")
    subparsers.add_parser("ablate", parents=[common], help="Run the ablation settings over several seeds.")
    subparsers.add_parser("dump-attention", parents=[common],
                          help="Write the cycle alignment attention weights of a checkpoint.")
    return parser


def known_fields() -> set:
    return {f.name for cls in ARGUMENT_CLASSES for f in dataclasses.fields(cls)}


def load_run_config(config_path: Optional[str], flags: argparse.Namespace
                    ) -> Tuple[ModelArguments, DataArguments, TrainArguments]:
    """Config file values, overridden by command line flags, parsed into the three argument dataclasses."""
    values = {}
    if config_path:
        if not Path(config_path).exists():
            raise UsageError(f"config file {config_path} does not exist")
        with open(config_path, encoding="utf-8") as file:
            values = yaml.safe_load(file) or {}
        if not isinstance(values, dict):
            raise UsageError(f"{config_path} must hold a mapping of argument names to values")
    unknown = sorted(set(values) - known_fields())
    if unknown:
        raise UsageError(f"unknown configuration keys: {', '.join(unknown)}")
    for flag, name in FLAG_FIELDS.items():
        value = getattr(flags, flag, None)
        if value is not None:
            values[name] = value
    try:
        settings = parse_settings(values.get("ablation_settings", ""))
    except ValueError as error:
        raise UsageError(f"invalid --settings: {error}") from error
    if flags.settings is not None and len(settings) == 1:
        # a single setting also selects the model variant of train
        values["ablation_setting"] = settings[0].value
    try:
        return HfArgumentParser(ARGUMENT_CLASSES).parse_dict(values)
    except (ValueError, TypeError) as error:
        raise UsageError(f"invalid configuration: {error}") from error


def resolved_config(model_args, data_args, train_args) -> dict:
    return {"model_args": args_to_dict(model_args), "data_args": args_to_dict(data_args),
            "train_args": args_to_dict(train_args)}


def require_dataset(data_args: DataArguments):
    if not Path(data_args.data_dir).is_dir():
        raise UsageError(f"dataset directory {data_args.data_dir} does not exist, run gen-data first")
    try:
        return load_dataset(data_args.data_dir)
    except (DatasetFormatError, FileNotFoundError) as error:
        raise UsageError(str(error)) from error


def require_checkpoint(path: Optional[str], command: str) -> Checkpoint:
    if not path:
        raise UsageError(f"{command} needs a checkpoint, pass --init")
    if not Path(path).exists():
        raise UsageError(f"checkpoint {path} does not exist")
    return load_checkpoint(path)


def checkpoint_setting(checkpoint: Checkpoint, default: AblationSetting) -> AblationSetting:
    """The memory layout the checkpoint was validated on."""
    setting = AblationSetting(checkpoint.run_config.get("train_args", {}).get("ablation_setting", default))
    return setting.upt_layout if checkpoint.phase == Phase.UPT.value else setting


def cmd_gen_data(flags, model_args, data_args, train_args) -> int:
    dataset = generate_dataset(data_args)
    save_dataset(dataset, data_args.data_dir)
    return 0


def cmd_train(flags, model_args, data_args, train_args) -> int:
    dataset = require_dataset(data_args)
    config, init = None, None
    if flags.init:
        checkpoint = require_checkpoint(flags.init, "train --init")
        if checkpoint.vocabulary is not None and list(checkpoint.vocabulary) != list(dataset.vocabulary.tokens):
            raise ContractError(f"{flags.init} was trained with a different vocabulary than {data_args.data_dir}")
        config, init = checkpoint.config, (checkpoint.params, checkpoint.prompt_bank)
    run = run_mpl(train_args, model_args, dataset, init=init, max_eval_samples=data_args.max_eval_samples,
                  max_predict_samples=data_args.max_predict_samples, config=config)

    output_dir = Path(train_args.output_dir)
    resolved = resolved_config(model_args, data_args, train_args)
    save_experiment_params(output_dir, model_args=model_args, data_args=data_args, train_args=train_args)
    save_checkpoint(output_dir / CHECKPOINT_FILE, Checkpoint(
        config=run.config, params=run.params, prompt_bank=run.prompt_bank, optimizer_state=run.optimizer_state,
        phase=train_args.phase.value, seed=train_args.seed, best_validation_cider=run.report.best_validation_cider,
        vocabulary=list(dataset.vocabulary.tokens), run_config=resolved))
    save_report(output_dir / "train_report.yaml", {"config": resolved, **run.report.to_dict()})
    with open(output_dir / "train_report.txt", "w", encoding="utf-8") as writer:
        for phase in run.report.phases:
            epochs = pd.DataFrame([{"epoch": e.epoch, **{f"loss_{k}": v for k, v in e.losses.items()},
                                    **e.validation, "best": e.improved} for e in phase.epochs])
            write_report_section(writer, f"{phase.phase} ({phase.setting})", epochs.to_string(index=False))
        if run.report.test_metrics:
            write_report_section(writer, "Test", pd.Series(run.report.test_metrics).to_string())
    return 0


def cmd_eval(flags, model_args, data_args, train_args) -> int:
    output_dir = Path(train_args.output_dir)
    if flags.predictions:
        if not Path(flags.predictions).exists():
            raise UsageError(f"predictions file {flags.predictions} does not exist")
        metrics = score_corpus(read_eval_file(flags.predictions))
        report = {"predictions": flags.predictions, "metrics": metrics,
                  "config": resolved_config(model_args, data_args, train_args)}
    else:
        checkpoint = require_checkpoint(flags.init, "eval")
        dataset = require_dataset(data_args)
        records = getattr(dataset, flags.split)
        limit = data_args.max_eval_samples if flags.split == "validation" else data_args.max_predict_samples
        records = records if limit is None else records[:limit]
        setting = checkpoint_setting(checkpoint, train_args.ablation_setting)
        result = evaluate_split(records, checkpoint.params, checkpoint.prompt_bank, checkpoint.config, setting,
                                dataset.vocabulary, train_args.num_beams)
        metrics = result.metrics
        report = {"checkpoint": flags.init, "split": flags.split, "setting": setting.value,
                  "num_beams": train_args.num_beams, "metrics": metrics, "predictions": result.predictions,
                  "config": checkpoint.run_config}
        lines = format_eval_lines([p["generated"] for p in result.predictions],
                                  [[p["reference"]] for p in result.predictions])
        output_dir.mkdir(parents=True, exist_ok=True)
        (output_dir / f"predictions_{flags.split}.tsv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    save_report(output_dir / "eval_report.yaml", report)
    for name, value in metrics.items():
        print(f"{name}\t{value:.4f}")
    return 0


def cmd_ablate(flags, model_args, data_args, train_args) -> int:
    dataset = require_dataset(data_args)
    result = ablate(dataset, model_args, train_args, max_eval_samples=data_args.max_eval_samples,
                    max_predict_samples=data_args.max_predict_samples)
    save_ablation(result, train_args.output_dir, resolved_config(model_args, data_args, train_args))
    print(result.table.apply(lambda col: col.map(str)).to_string())
    if flags.assert_ordering:
        fraction = result.experiment.fractions[0]
        if not result.ordering_holds(fraction):
            logger.error(f"The median CIDEr ordering of the settings does not hold: {result.medians(fraction)}")
            return 1
        logger.info("The median CIDEr ordering of the settings holds")
    return 0


def cmd_dump_attention(flags, model_args, data_args, train_args) -> int:
    checkpoint = require_checkpoint(flags.init, "dump-attention")
    if checkpoint.prompt_bank is None:
        raise ContractError(f"{flags.init} holds no prompt banks")
    aligned = cycle_align(checkpoint.prompt_bank, checkpoint.config.alignment_scale)
    dump_attention(aligned, Path(train_args.output_dir) / "attention.yaml",
                   extra={"checkpoint": str(flags.init), "config": checkpoint.run_config})
    return 0


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
    "dump-attention": cmd_dump_attention,
}


def main(argv: Optional[List[str]] = None) -> int:
    setup_logging()
    flags = build_parser().parse_args(argv)
    try:
        model_args, data_args, train_args = load_run_config(flags.config, flags)
        # Set seed before initializing model.
        set_seed(train_args.seed)
        return COMMANDS[flags.command](flags, model_args, data_args, train_args)
    except UsageError as error:
        logger.error(f"usage error: {error}")
        return 2
    except MplError as error:
        logger.exception(f"{flags.command} failed: {error}")
        return 1
    except Exception:
        logger.exception(f"{flags.command} failed")
        return 1


if __name__ == "__main__":
    sys.exit(main())
