from transformers.utils import ExplicitEnum
from typing import FrozenSet, List, Tuple

from dataclasses import dataclass, field

from arguments.data_arguments import parse_floats
from root import OUTPUT_DIR
from utils.exceptions import ContractError


class Phase(ExplicitEnum):
    UPT = "upt"  # unimodal prompt training
    MPT = "mpt"  # multimodal prompt training
    MPL = "mpl"  # both, one after the other


class Modality(ExplicitEnum):
    IMAGE = "I"
    ATTRIBUTE = "A"
    TITLE = "T"


class AblationSetting(ExplicitEnum):
    """Rows of the ablation table, from the plain encoder-decoder to the full model."""
    BASE = "base"
    A = "a"  # visual prompts only
    B = "b"  # attribute prompts only
    C = "c"  # language prompts only
    D = "d"  # all prompts, no cycle alignment
    MPL = "mpl"

    @property
    def prompt_modalities(self) -> Tuple[Modality, ...]:
        return {
            AblationSetting.BASE: (),
            AblationSetting.A: (Modality.IMAGE,),
            AblationSetting.B: (Modality.ATTRIBUTE,),
            AblationSetting.C: (Modality.TITLE,),
            AblationSetting.D: (Modality.IMAGE, Modality.ATTRIBUTE, Modality.TITLE),
            AblationSetting.MPL: (Modality.IMAGE, Modality.ATTRIBUTE, Modality.TITLE),
        }[self]

    @property
    def uses_cycle_alignment(self) -> bool:
        return self == AblationSetting.MPL

    @property
    def uses_prompts(self) -> bool:
        return len(self.prompt_modalities) > 0

    @property
    def upt_layout(self) -> "AblationSetting":
        """Memory layout scored after unimodal prompt training, which never trains the aligned prefix."""
        return AblationSetting.D if self.uses_cycle_alignment else self


def parse_settings(value: str) -> List[AblationSetting]:
    return [AblationSetting(part.strip()) for part in str(value).split(",") if part.strip()]


@dataclass
class TrainArguments:
    """
    Arguments pertaining to the two training phases, early stopping, generation and the ablation harness.
    """
    output_dir: str = field(default=str(OUTPUT_DIR), metadata={"help": "Where checkpoints and reports are written."})
    phase: Phase = field(
        default=Phase.MPL,
        metadata={"help": "'upt' trains the prompt banks, 'mpt' trains on the aligned prompts, 'mpl' runs both."},
    )
    ablation_setting: AblationSetting = field(
        default=AblationSetting.MPL, metadata={"help": "Which model variant to train: base, a, b, c, d or mpl."},
    )
    lambda_image: float = field(default=1.0, metadata={"help": "Weight of the image pipeline loss in UPT."})
    lambda_attribute: float = field(default=1.0, metadata={"help": "Weight of the attribute pipeline loss in UPT."})
    lambda_title: float = field(default=1.0, metadata={"help": "Weight of the title auto-encoding loss in UPT."})
    batch_size: int = field(default=8, metadata={"help": "Number of products per optimization step."})
    learning_rate: float = field(default=1e-4, metadata={"help": "The initial learning rate for AdamW."})
    adam_beta1: float = field(default=0.9, metadata={"help": "Beta1 for AdamW."})
    adam_beta2: float = field(default=0.999, metadata={"help": "Beta2 for AdamW."})
    adam_epsilon: float = field(default=1e-8, metadata={"help": "Epsilon for AdamW."})
    weight_decay: float = field(default=0.01, metadata={"help": "Decoupled weight decay of AdamW."})
    num_train_epochs: int = field(default=20, metadata={"help": "Maximum number of epochs of every phase."})
    early_stopping_patience: int = field(
        default=3,
        metadata={"help": "Stop a phase after this many epochs without an improvement of the validation CIDEr."},
    )
    early_stopping_threshold: float = field(
        default=0.0,
        metadata={"help": "How much the validation CIDEr must improve to count as an improvement."},
    )
    seed: int = field(default=42, metadata={"help": "Random seed of initialization, shuffling and dropout."})
    fewshot_fraction: float = field(
        default=0.01, metadata={"help": "Fraction of the novel-domain training split used for training."},
    )
    freeze_prompts_in_mpt: bool = field(
        default=True, metadata={"help": "Whether the prompt banks stay fixed during multimodal prompt training."},
    )
    eval_num_beams: int = field(
        default=1, metadata={"help": "Beam size of the validation generation used for early stopping."},
    )
    num_beams: int = field(default=3, metadata={"help": "Beam size of the final test generation."})
    pretrain_on_source: bool = field(
        default=False,
        metadata={"help": "Whether to first train a plain encoder-decoder on the source-domain corpus."},
    )
    source_num_train_epochs: int = field(
        default=5, metadata={"help": "Maximum number of epochs of the source-domain pretraining."},
    )
    use_text_only_titles: bool = field(
        default=True,
        metadata={"help": "Whether unlabeled titles (if the dataset has them) feed the title auto-encoding loss."},
    )
    ablation_settings: str = field(
        default="base,a,b,c,d,mpl", metadata={"help": "Comma separated ablation settings to run."},
    )
    ablation_num_seeds: int = field(default=5, metadata={"help": "Number of random seeds per ablation setting."})
    ablation_fractions: str = field(
        default="0.01",
        metadata={"help": "Comma separated training fractions of the ablation, e.g. '0.01,1.0' for the few-shot "
                          "and the supervised setting."},
    )
    disable_tqdm: bool = field(default=False, metadata={"help": "Whether to hide the progress bars."})

    def __post_init__(self):
        self.phase = Phase(self.phase)
        self.ablation_setting = AblationSetting(self.ablation_setting)
        for name in ("lambda_image", "lambda_attribute", "lambda_title"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ContractError(f"{name} must lie in [0, 1], got {getattr(self, name)}")
        for fraction in (self.fewshot_fraction, *self.fractions):
            if not 0.0 < fraction <= 1.0:
                raise ContractError(f"training fractions must lie in (0, 1], got {fraction}")
        if self.early_stopping_patience < 1:
            raise ContractError("early_stopping_patience must be at least 1")
        if self.batch_size < 1 or self.num_beams < 1 or self.eval_num_beams < 1:
            raise ContractError("batch_size and beam sizes must be at least 1")
        parse_settings(self.ablation_settings)  # rejects unknown tags early

    @property
    def settings(self) -> List[AblationSetting]:
        return parse_settings(self.ablation_settings)

    @property
    def fractions(self) -> Tuple[float, ...]:
        return parse_floats(self.ablation_fractions)

    @property
    def lambdas(self) -> dict:
        return {Modality.IMAGE: self.lambda_image, Modality.ATTRIBUTE: self.lambda_attribute,
                Modality.TITLE: self.lambda_title}

    @property
    def active_modalities(self) -> FrozenSet[Modality]:
        return frozenset(self.ablation_setting.prompt_modalities)
