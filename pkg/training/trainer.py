"""
Two-phase training of the prompt-conditioned title generator.

Unimodal prompt training (UPT) runs one decoding pipeline per active prompt bank: visual prompts with the image
representations, attribute prompts with the attribute representations and language prompts with the title
representations (title auto-encoding). Multimodal prompt training (MPT) decodes the titles from the prompt prefix of
the ablation setting followed by the image and attribute representations, which is also the inference layout.
"""
import logging
import time
from collections import defaultdict
from dataclasses import asdict, dataclass, field
from typing import Callable, Dict, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np
from tqdm import tqdm

from arguments.training_arguments import AblationSetting, Modality, Phase, TrainArguments
from data_synthesis.generator import ProductRecord
from data_synthesis.vocabulary import Vocabulary
from evaluation.metrics import EvalCorpus, score_corpus
from modeling.configuration_mpl import MplConfig
from modeling.generation import beam_search, greedy_decode
from modeling.modeling_mpl import (ModelParams, check_params, decode_loss, encode_attributes, encode_image,
                                   encode_title, init_params, prefix_memory_mask, prompt_rows)
from numeric import functional as F
from numeric.optim import AdamW
from numeric.tensor import Tensor, get_default_dtype, no_grad
from prompts.cycle_alignment import cycle_align
from prompts.prompt_bank import PromptBank, bank_init, concat_prompt
from training.early_stopping import EarlyStopping
from utils.exceptions import ContractError

logger = logging.getLogger(__name__)

SOURCE_PHASE = "source"
# independent random streams per phase, so a phase run on its own matches the same phase inside a full run
PHASE_STREAMS = {SOURCE_PHASE: 0, Phase.UPT.value: 1, Phase.MPT.value: 2}

ModelInit = Callable[[], Tuple[ModelParams, PromptBank]]


# batches

@dataclass
class Batch:
    ids: List[str]
    image_features: np.ndarray  # [B, L_I, F]
    attribute_ids: np.ndarray  # [B, L_A], padded
    title_ids: np.ndarray  # [B, L_T], bos ... eos, padded
    text_only_ids: np.ndarray  # [E, L_T], titles without a product, used by title auto-encoding only
    references: List[str]

    def __len__(self):
        return len(self.ids)


def pad_sequences(rows: Sequence[Sequence[int]], pad_id: int, width: Optional[int] = None) -> np.ndarray:
    width = width if width is not None else max((len(row) for row in rows), default=0)
    out = np.full((len(rows), width), pad_id, dtype=np.int64)
    for i, row in enumerate(rows):
        out[i, :len(row)] = row
    return out


def encode_titles(titles: Sequence[str], vocabulary: Vocabulary, config: MplConfig) -> List[List[int]]:
    rows = [vocabulary.encode_title(title) for title in titles]
    for title, row in zip(titles, rows):
        if len(row) > config.max_title_len:
            raise ContractError(f"title '{title}' has {len(row)} tokens with bos/eos, "
                                f"max_title_len is {config.max_title_len}")
    return rows


def collate(records: Sequence[ProductRecord], vocabulary: Vocabulary, config: MplConfig,
            text_only_titles: Sequence[str] = ()) -> Batch:
    if not records:
        raise ContractError("cannot build an empty batch")
    attributes = [vocabulary.encode_attributes(record.attributes) for record in records]
    for record, row in zip(records, attributes):
        if len(row) > config.max_attribute_len:
            raise ContractError(f"product {record.id} has {len(row)} attributes, "
                                f"max_attribute_len is {config.max_attribute_len}")
    titles = encode_titles([record.title for record in records], vocabulary, config)
    text_only = encode_titles(list(text_only_titles), vocabulary, config)
    width = max(len(row) for row in titles + text_only)
    return Batch(ids=[record.id for record in records],
                 image_features=np.stack([record.image_features for record in records]).astype(get_default_dtype()),
                 attribute_ids=pad_sequences(attributes, config.pad_token_id),
                 title_ids=pad_sequences(titles, config.pad_token_id, width),
                 text_only_ids=pad_sequences(text_only, config.pad_token_id, width),
                 references=[record.title for record in records])


# memory layouts

def prompt_prefix(bank: PromptBank, setting: AblationSetting, config: MplConfig) -> Optional[Tensor]:
    """Prompt rows in front of [R_I; R_A]: none, one bank, all three banks, or the nine aligned blocks."""
    setting = AblationSetting(setting)
    if not setting.uses_prompts:
        return None
    if setting.uses_cycle_alignment:
        return cycle_align(bank, config.alignment_scale).fused
    banks = [bank[modality] for modality in setting.prompt_modalities]
    return banks[0] if len(banks) == 1 else F.concat(banks, axis=0)


def build_memory(prefix: Optional[Tensor], image_repr: Tensor, attribute_repr: Tensor, attribute_keep: np.ndarray,
                 num_prompts: Optional[int] = None) -> Tuple[Tensor, np.ndarray]:
    """
    Concatenate [prefix; R_I; R_A] per product with the matching additive key mask. The prefix rows share the
    attention prior of one bank of ``num_prompts`` rows, however many banks or aligned blocks they hold.
    """
    batch, image_len = image_repr.shape[0], image_repr.shape[1]
    memory = F.concat([image_repr, attribute_repr], axis=1)
    keep = np.concatenate([np.ones((batch, image_len), dtype=bool), attribute_keep], axis=1)
    if prefix is None:
        return memory, prefix_memory_mask(0, 1, keep)
    mask = prefix_memory_mask(prefix.shape[0], num_prompts or prefix.shape[0], keep)
    return concat_prompt(prefix, memory), mask


def batch_memory(batch: Batch, params: ModelParams, bank: PromptBank, config: MplConfig, setting: AblationSetting,
                 training: bool = False, rng: Optional[np.random.Generator] = None) -> Tuple[Tensor, np.ndarray]:
    image_repr = encode_image(batch.image_features, params, config, training=training, rng=rng)
    attribute_repr = encode_attributes(batch.attribute_ids, params, config, training=training, rng=rng)
    prefix = prompt_prefix(bank, setting, config)
    if prefix is not None:
        prefix = prompt_rows(prefix, params, config)
    return build_memory(prefix, image_repr, attribute_repr, batch.attribute_ids != config.pad_token_id,
                        config.num_prompts)


def _prompted(prompts: Tensor, representations: Tensor, keep: Optional[np.ndarray], params: ModelParams,
              config: MplConfig) -> Tuple[Tensor, np.ndarray]:
    batch, length = representations.shape[0], representations.shape[1]
    keep = np.ones((batch, length), dtype=bool) if keep is None else keep
    memory = concat_prompt(prompt_rows(prompts, params, config), representations)
    return memory, prefix_memory_mask(prompts.shape[0], config.num_prompts, keep)


# optimization steps

@dataclass
class UptLosses:
    image: Optional[float]
    attribute: Optional[float]
    title: Optional[float]
    full: float

    def __iter__(self) -> Iterator[Optional[float]]:
        return iter((self.image, self.attribute, self.title, self.full))


def upt_losses(batch: Batch, params: ModelParams, bank: PromptBank, config: MplConfig, setting: AblationSetting,
               lambdas: Dict[Modality, float], training: bool = False, rng: Optional[np.random.Generator] = None
               ) -> Tuple[Dict[Modality, Tensor], Tensor]:
    """The per-pipeline losses of the active prompt banks and their lambda-weighted sum."""
    active = AblationSetting(setting).prompt_modalities
    if not active:
        raise ContractError("the base setting has no prompt banks and skips unimodal prompt training")
    if len(batch) == 0:
        raise ContractError("unimodal prompt training needs a non-empty batch")
    kwargs = dict(training=training, rng=rng)
    losses = {}
    if Modality.IMAGE in active:
        memory, mask = _prompted(bank.image, encode_image(batch.image_features, params, config, **kwargs), None,
                                 params, config)
        losses[Modality.IMAGE] = decode_loss(memory, batch.title_ids, params, config, mask, **kwargs)
    if Modality.ATTRIBUTE in active:
        memory, mask = _prompted(bank.attribute, encode_attributes(batch.attribute_ids, params, config, **kwargs),
                                 batch.attribute_ids != config.pad_token_id, params, config)
        losses[Modality.ATTRIBUTE] = decode_loss(memory, batch.title_ids, params, config, mask, **kwargs)
    if Modality.TITLE in active:
        titles = np.concatenate([batch.title_ids, batch.text_only_ids], axis=0)
        memory, mask = _prompted(bank.title, encode_title(titles, params, config, **kwargs),
                                 titles != config.pad_token_id, params, config)
        losses[Modality.TITLE] = decode_loss(memory, titles, params, config, mask, **kwargs)

    full = None
    for modality, loss in losses.items():
        weighted = loss * lambdas[modality]
        full = weighted if full is None else full + weighted
    return losses, full


def upt_step(batch: Batch, params: ModelParams, bank: PromptBank, config: MplConfig, setting: AblationSetting,
             lambdas: Dict[Modality, float], optimizer: AdamW, rng: Optional[np.random.Generator] = None,
             training: bool = True) -> UptLosses:
    """One AdamW step on L_full; returns the pipeline losses before the update."""
    optimizer.zero_grad()
    losses, full = upt_losses(batch, params, bank, config, setting, lambdas, training, rng)
    full.backward()
    optimizer.step()
    value = {modality: losses[modality].item() if modality in losses else None for modality in Modality}
    return UptLosses(value[Modality.IMAGE], value[Modality.ATTRIBUTE], value[Modality.TITLE], full.item())


def mpt_loss(batch: Batch, params: ModelParams, bank: PromptBank, config: MplConfig, setting: AblationSetting,
             training: bool = False, rng: Optional[np.random.Generator] = None) -> Tensor:
    if len(batch) == 0:
        raise ContractError("multimodal prompt training needs a non-empty batch")
    memory, mask = batch_memory(batch, params, bank, config, setting, training, rng)
    return decode_loss(memory, batch.title_ids, params, config, mask, training=training, rng=rng)


def mpt_step(batch: Batch, params: ModelParams, bank: PromptBank, config: MplConfig, setting: AblationSetting,
             optimizer: AdamW, rng: Optional[np.random.Generator] = None, training: bool = True) -> float:
    optimizer.zero_grad()
    loss = mpt_loss(batch, params, bank, config, setting, training, rng)
    loss.backward()
    optimizer.step()
    return loss.item()


def prompt_parameters(bank: PromptBank, modalities: Sequence[Modality]) -> Dict[str, Tensor]:
    return {name: tensor for (name, tensor), modality in zip(bank.named_parameters(), Modality)
            if modality in modalities}


def make_optimizer(args: TrainArguments, params: ModelParams, prompts: Optional[Dict[str, Tensor]] = None) -> AdamW:
    return AdamW({**params, **(prompts or {})}, learning_rate=args.learning_rate,
                 betas=(args.adam_beta1, args.adam_beta2), epsilon=args.adam_epsilon, weight_decay=args.weight_decay)


# generation and evaluation

def generate_titles(records: Sequence[ProductRecord], params: ModelParams, bank: PromptBank, config: MplConfig,
                    setting: AblationSetting, vocabulary: Vocabulary, num_beams: Optional[int] = None,
                    batch_size: int = 32) -> List[str]:
    num_beams = config.num_beams if num_beams is None else num_beams
    titles = []
    with no_grad():
        for start in range(0, len(records), batch_size):
            batch = collate(records[start:start + batch_size], vocabulary, config)
            memory, mask = batch_memory(batch, params, bank, config, setting)
            if num_beams == 1:
                hypotheses = greedy_decode(memory, params, config, memory_mask=mask)
            else:
                hypotheses = [beam_search(memory[i], params, config, num_beams, memory_mask=mask[i])
                              for i in range(len(batch))]
            titles += [vocabulary.detokenize(hypothesis.tokens) for hypothesis in hypotheses]
    return titles


def generate_title(record: ProductRecord, params: ModelParams, bank: PromptBank, config: MplConfig,
                   setting: AblationSetting, vocabulary: Vocabulary, num_beams: Optional[int] = None) -> str:
    """Encode image and attributes, put the prompt prefix in front, beam-search and detokenize."""
    return generate_titles([record], params, bank, config, setting, vocabulary, num_beams)[0]


@dataclass
class EvalResult:
    metrics: Dict[str, float]
    predictions: List[Dict[str, str]]


def evaluate_split(records: Sequence[ProductRecord], params: ModelParams, bank: PromptBank, config: MplConfig,
                   setting: AblationSetting, vocabulary: Vocabulary, num_beams: Optional[int] = None,
                   batch_size: int = 32) -> EvalResult:
    generated = generate_titles(records, params, bank, config, setting, vocabulary, num_beams, batch_size)
    references = [record.title for record in records]
    metrics = score_corpus(EvalCorpus.from_strings(generated, [[reference] for reference in references]))
    predictions = [{"id": record.id, "generated": title, "reference": record.title}
                   for record, title in zip(records, generated)]
    return EvalResult(metrics, predictions)


# reports

@dataclass
class EpochLog:
    epoch: int
    losses: Dict[str, Optional[float]]
    validation: Dict[str, float]
    improved: bool
    seconds: float


@dataclass
class PhaseReport:
    phase: str
    setting: str
    num_train_examples: int
    num_trainable_parameters: int
    epochs: List[EpochLog] = field(default_factory=list)
    best_epoch: Optional[int] = None
    best_validation_cider: Optional[float] = None
    stopped_early: bool = False
    wall_time: float = 0.0

    @property
    def loss_trace(self) -> List[Dict[str, Optional[float]]]:
        return [epoch.losses for epoch in self.epochs]


@dataclass
class TrainReport:
    setting: str
    seed: int
    fewshot_fraction: float
    num_fewshot_examples: int
    phases: List[PhaseReport] = field(default_factory=list)
    test_metrics: Optional[Dict[str, float]] = None
    test_predictions: List[Dict[str, str]] = field(default_factory=list)
    num_beams: int = 3
    eval_num_beams: int = 1
    wall_time: float = 0.0

    def phase(self, name: str) -> PhaseReport:
        for report in self.phases:
            if report.phase == name:
                return report
        raise KeyError(f"no {name} phase in this report")

    @property
    def best_validation_cider(self) -> Optional[float]:
        return self.phases[-1].best_validation_cider if self.phases else None

    def to_dict(self) -> dict:
        return asdict(self)


# training loop

class MplTrainer:
    """
    Runs single training phases with per-epoch validation and early stopping on CIDEr. The model either comes from
    ``model_init`` (a callable returning fresh parameters and prompt banks) or is passed in directly.
    """

    def __init__(self, args: TrainArguments, config: MplConfig, vocabulary: Vocabulary,
                 train_records: Sequence[ProductRecord], eval_records: Sequence[ProductRecord],
                 setting: Optional[AblationSetting] = None, model_init: Optional[ModelInit] = None,
                 params: Optional[ModelParams] = None, bank: Optional[PromptBank] = None,
                 text_only_titles: Sequence[str] = ()):
        if not train_records:
            raise ContractError("training needs a non-empty training split")
        if len(eval_records) < 2:
            raise ContractError("early stopping on CIDEr needs a validation split of at least two products")
        if len(vocabulary) != config.vocab_size:
            raise ContractError(f"vocabulary has {len(vocabulary)} tokens, config expects {config.vocab_size}")
        self.args = args
        self.config = config
        self.vocabulary = vocabulary
        self.train_records = list(train_records)
        self.eval_records = list(eval_records)
        self.setting = AblationSetting(setting or args.ablation_setting)
        self.text_only_titles = list(text_only_titles)
        if params is None:
            if model_init is None:
                raise ContractError("pass either model parameters or a model_init callable")
            params, bank = model_init()
        check_params(params, config)
        self.params = params
        self.bank = bank if bank is not None else bank_init(config, args.seed + 1)
        self.optimizer: Optional[AdamW] = None

    def _layout(self, phase: str) -> AblationSetting:
        return AblationSetting.BASE if phase == SOURCE_PHASE else self.setting

    def _validation_layout(self, phase: str) -> AblationSetting:
        return self.setting.upt_layout if phase == Phase.UPT.value else self._layout(phase)

    def _trainable_prompts(self, phase: str) -> Dict[str, Tensor]:
        if phase == Phase.UPT.value:
            self.bank.requires_grad_(True)
            return prompt_parameters(self.bank, self.setting.prompt_modalities)
        if phase == Phase.MPT.value and self.setting.uses_prompts and not self.args.freeze_prompts_in_mpt:
            self.bank.requires_grad_(True)
            return prompt_parameters(self.bank, self.setting.prompt_modalities)
        self.bank.requires_grad_(False)
        return {}

    def _text_only_chunk(self, step: int) -> List[str]:
        if not self.args.use_text_only_titles or not self.text_only_titles:
            return []
        size = self.args.batch_size
        start = (step * size) % len(self.text_only_titles)
        chunk = self.text_only_titles[start:start + size]
        return chunk + self.text_only_titles[:size - len(chunk)] if len(chunk) < size else chunk

    def evaluate(self, records: Sequence[ProductRecord], num_beams: int, phase: str = Phase.MPT.value) -> EvalResult:
        return evaluate_split(records, self.params, self.bank, self.config, self._validation_layout(phase),
                              self.vocabulary, num_beams, batch_size=max(self.args.batch_size, 32))

    def train(self, phase: Union[Phase, str], num_epochs: Optional[int] = None) -> PhaseReport:
        phase = phase.value if isinstance(phase, Phase) else phase
        if phase not in PHASE_STREAMS:
            raise ContractError(f"cannot train phase '{phase}' on its own, expected one of {list(PHASE_STREAMS)}")
        if phase == Phase.UPT.value and not self.setting.uses_prompts:
            raise ContractError("the base setting has no prompt banks and skips unimodal prompt training")
        args, layout = self.args, self._layout(phase)
        num_epochs = num_epochs or args.num_train_epochs
        rng = np.random.default_rng([args.seed, PHASE_STREAMS[phase]])
        prompts = self._trainable_prompts(phase)
        self.params.requires_grad_(True)
        self.optimizer = make_optimizer(args, self.params, prompts)
        early_stopping = EarlyStopping(args.early_stopping_patience, args.early_stopping_threshold)
        report = PhaseReport(phase=phase, setting=layout.value, num_train_examples=len(self.train_records),
                             num_trainable_parameters=int(sum(t.size for t in self.optimizer.params.values())))
        logger.info(f"***** Running {phase} training ({layout.value}) *****")
        logger.info(f"  Num examples = {len(self.train_records)}, batch size = {args.batch_size}, "
                    f"max epochs = {num_epochs}, trainable parameters = {report.num_trainable_parameters}")

        best_state = (self.params.copy(), self.bank.copy())
        phase_start = time.perf_counter()
        for epoch in range(1, num_epochs + 1):
            epoch_start = time.perf_counter()
            order = rng.permutation(len(self.train_records))
            batches = [order[i:i + args.batch_size] for i in range(0, len(order), args.batch_size)]
            sums, counts = defaultdict(float), defaultdict(int)
            for step, indices in enumerate(tqdm(batches, desc=f"{phase} epoch {epoch}", disable=args.disable_tqdm)):
                records = [self.train_records[i] for i in indices]
                if phase == Phase.UPT.value:
                    batch = collate(records, self.vocabulary, self.config, self._text_only_chunk(step))
                    losses = upt_step(batch, self.params, self.bank, self.config, layout, args.lambdas,
                                      self.optimizer, rng)
                    named = {"image": losses.image, "attribute": losses.attribute, "title": losses.title,
                             "full": losses.full}
                else:
                    batch = collate(records, self.vocabulary, self.config)
                    named = {"mpt": mpt_step(batch, self.params, self.bank, self.config, layout, self.optimizer, rng)}
                for name, value in named.items():
                    if value is not None:
                        sums[name] += value
                        counts[name] += 1
            losses = {name: sums[name] / counts[name] for name in sums}

            validation = self.evaluate(self.eval_records, args.eval_num_beams, phase).metrics
            improved = early_stopping.update(validation["cider"], epoch)
            if improved:
                best_state = (self.params.copy(), self.bank.copy())
            report.epochs.append(EpochLog(epoch, losses, validation, improved, time.perf_counter() - epoch_start))
            logger.info(f"{phase} epoch {epoch}: " + ", ".join(f"loss_{k}={v:.4f}" for k, v in losses.items())
                        + f", validation bleu4={validation['bleu4']:.2f} rouge_l={validation['rouge_l']:.2f} "
                          f"cider={validation['cider']:.4f}" + (" (best)" if improved else ""))
            if early_stopping.should_stop:
                report.stopped_early = epoch < num_epochs
                logger.info(f"Early stopping after epoch {epoch}, best epoch was {early_stopping.best_epoch}")
                break

        self.params, self.bank = best_state
        report.best_epoch = early_stopping.best_epoch
        report.best_validation_cider = early_stopping.best_metric
        report.wall_time = time.perf_counter() - phase_start
        return report


def default_model_init(config: MplConfig, seed: int) -> ModelInit:
    def model_init():
        return init_params(config, seed), bank_init(config, seed + 1)

    return model_init


def train(args: TrainArguments, config: MplConfig, vocabulary: Vocabulary, train_records: Sequence[ProductRecord],
          eval_records: Sequence[ProductRecord], model_init: ModelInit, phase: Optional[Union[Phase, str]] = None,
          text_only_titles: Sequence[str] = ()) -> Tuple[ModelParams, PromptBank, PhaseReport]:
    """Run one phase (UPT or MPT) to early stopping and return the best-CIDEr snapshot."""
    trainer = MplTrainer(args, config, vocabulary, train_records, eval_records, model_init=model_init,
                         text_only_titles=text_only_titles)
    report = trainer.train(phase or Phase.MPT)
    return trainer.params, trainer.bank, report
