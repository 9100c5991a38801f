import logging
import time
from dataclasses import dataclass
from typing import List, Optional, Tuple

from arguments.model_arguments import ModelArguments
from arguments.training_arguments import Phase, TrainArguments
from data_synthesis.dataset_io import ProductDataset
from data_synthesis.splits import subsample_fewshot
from modeling.configuration_mpl import MplConfig
from modeling.modeling_mpl import ModelParams
from numeric.optim import AdamWState
from prompts.prompt_bank import PromptBank
from training.trainer import SOURCE_PHASE, MplTrainer, TrainReport, default_model_init, evaluate_split
from utils.decorators import timer
from utils.exceptions import ContractError

logger = logging.getLogger(__name__)


def build_model_config(model_args: ModelArguments, dataset: ProductDataset, num_beams: int = 3) -> MplConfig:
    """The preset architecture sized to the vocabulary and image features of the dataset."""
    if not dataset.train:
        raise ContractError("the dataset has no training products")
    image_seq_len, image_feature_dim = dataset.train[0].image_features.shape
    return MplConfig.from_preset(model_args.model_preset.value, vocab_size=len(dataset.vocabulary),
                                 image_seq_len=image_seq_len, image_feature_dim=image_feature_dim,
                                 num_beams=num_beams, **model_args.architecture_overrides())


def phases_to_run(args: TrainArguments) -> List[Phase]:
    if args.phase == Phase.UPT:
        return [Phase.UPT]
    if args.phase == Phase.MPT:
        return [Phase.MPT]
    # the base setting has no prompts, so it has nothing to learn in UPT
    return [Phase.UPT, Phase.MPT] if args.ablation_setting.uses_prompts else [Phase.MPT]


@dataclass
class MplRun:
    report: TrainReport
    config: MplConfig
    params: ModelParams
    prompt_bank: PromptBank
    optimizer_state: Optional[AdamWState] = None


def _truncate(records, max_samples: Optional[int]):
    return records if max_samples is None else records[:max_samples]


@timer
def run_mpl(train_args: TrainArguments, model_args: ModelArguments, dataset: ProductDataset,
            init: Optional[Tuple[ModelParams, PromptBank]] = None, max_eval_samples: Optional[int] = None,
            max_predict_samples: Optional[int] = None, config: Optional[MplConfig] = None) -> MplRun:
    """
    Few-shot protocol: subsample the novel-domain training split, optionally pretrain a plain encoder-decoder on the
    source domain, run UPT and then MPT on the subsample, and evaluate on the test split.
    """
    start = time.perf_counter()
    config = config or build_model_config(model_args, dataset, train_args.num_beams)
    fewshot = subsample_fewshot(dataset.train, train_args.fewshot_fraction, seed=train_args.seed)
    validation = _truncate(dataset.validation, max_eval_samples)
    logger.info(f"Training {train_args.ablation_setting.value} on {len(fewshot)} of {len(dataset.train)} "
                f"products (fraction {train_args.fewshot_fraction}), seed {train_args.seed}")
    report = TrainReport(setting=train_args.ablation_setting.value, seed=train_args.seed,
                         fewshot_fraction=train_args.fewshot_fraction, num_fewshot_examples=len(fewshot),
                         num_beams=train_args.num_beams, eval_num_beams=train_args.eval_num_beams)

    params, bank = init if init is not None else default_model_init(config, train_args.seed)()
    optimizer_state = None
    if init is None and train_args.pretrain_on_source:
        if not dataset.has_source_domain:
            raise ContractError("pretraining on the source domain needs a dataset generated with "
                                "generate_source_domain")
        source = MplTrainer(train_args, config, dataset.vocabulary, dataset.source_train,
                            _truncate(dataset.source_validation, max_eval_samples), params=params, bank=bank)
        report.phases.append(source.train(SOURCE_PHASE, train_args.source_num_train_epochs))
        params, bank = source.params, source.bank

    layout = train_args.ablation_setting
    for phase in phases_to_run(train_args):
        trainer = MplTrainer(train_args, config, dataset.vocabulary, fewshot, validation, params=params, bank=bank,
                             text_only_titles=dataset.text_only_titles if phase == Phase.UPT else ())
        report.phases.append(trainer.train(phase))
        params, bank = trainer.params, trainer.bank
        optimizer_state = trainer.optimizer.state
        layout = train_args.ablation_setting.upt_layout if phase == Phase.UPT else train_args.ablation_setting

    test = _truncate(dataset.test, max_predict_samples)
    if len(test) >= 2:
        result = evaluate_split(test, params, bank, config, layout, dataset.vocabulary, train_args.num_beams)
        report.test_metrics, report.test_predictions = result.metrics, result.predictions
        logger.info(f"Test metrics ({layout.value}, beam {train_args.num_beams}): "
                    + ", ".join(f"{k}={v:.4f}" for k, v in result.metrics.items()))
    report.wall_time = time.perf_counter() - start
    return MplRun(report, config, params, bank, optimizer_state)
