from transformers.utils import ExplicitEnum
from typing import Optional, Tuple

from dataclasses import dataclass, field

from root import DATA_DIR
from utils.exceptions import ContractError


class TemplateStyle(ExplicitEnum):
    BRAND_FIRST = "brand_first"
    CATEGORY_FIRST = "category_first"


class Domain(ExplicitEnum):
    """The source domain can be used for pretraining, the novel domain is the few-shot target."""
    SOURCE = "source"
    NOVEL = "novel"

    @property
    def default_template_style(self) -> TemplateStyle:
        return TemplateStyle.CATEGORY_FIRST if self == Domain.SOURCE else TemplateStyle.BRAND_FIRST


def parse_floats(value: str) -> Tuple[float, ...]:
    return tuple(float(part) for part in str(value).split(",") if part.strip())


@dataclass
class DataArguments:
    """
    Arguments pertaining to the synthetic product corpus and the dataset files.

    Using `HfArgumentParser` we can turn this class into argparse arguments
    to be able to specify them on the command line.
    """
    data_dir: str = field(
        default=str(DATA_DIR), metadata={"help": "Directory holding the dataset files and the manifest."},
    )
    num_products: int = field(
        default=2000, metadata={"help": "Number of novel-domain products to generate."},
    )
    num_categories: int = field(
        default=5, metadata={"help": "Number of novel-domain categories."},
    )
    num_brands: int = field(default=8, metadata={"help": "Size of the brand vocabulary."})
    num_colors: int = field(default=8, metadata={"help": "Size of the color vocabulary."})
    num_materials: int = field(default=6, metadata={"help": "Size of the material vocabulary."})
    num_sizes: int = field(default=4, metadata={"help": "Size of the size vocabulary."})
    template_style: Optional[TemplateStyle] = field(
        default=None,
        metadata={"help": "Title writing style of the novel domain. Defaults to brand-first "
                          "(the source domain writes category-first)."},
    )
    visual_noise: float = field(
        default=0.1, metadata={"help": "Standard deviation of the gaussian noise added to image features."},
    )
    attribute_exposure: float = field(
        default=0.6,
        metadata={"help": "Probability that a latent factor is exposed as an attribute (at least two always are)."},
    )
    image_seq_len: int = field(default=5, metadata={"help": "Number of image feature rows L_I per product."})
    image_feature_dim: int = field(default=32, metadata={"help": "Width of every image feature row."})
    feature_seed: int = field(
        default=17,
        metadata={"help": "Seed of the fixed factor embeddings shared by all corpora (the 'visual world')."},
    )
    corpus_seed: int = field(default=42, metadata={"help": "Seed of corpus generation and splitting."})
    split_ratios: str = field(
        default="0.7,0.2,0.1", metadata={"help": "Comma separated train/validation/test ratios."},
    )
    generate_source_domain: bool = field(
        default=False, metadata={"help": "Whether to also write a source-domain corpus for pretraining."},
    )
    source_num_products: int = field(default=2000, metadata={"help": "Number of source-domain products."})
    source_num_categories: int = field(default=10, metadata={"help": "Number of source-domain categories."})
    num_text_only_titles: int = field(
        default=0,
        metadata={"help": "Number of extra unlabeled novel-domain titles for the title auto-encoding pipeline."},
    )
    max_eval_samples: Optional[int] = field(
        default=100,
        metadata={
            "help": "For quicker training, truncate the number of validation examples used for early stopping "
                    "to this value if set."
        },
    )
    max_predict_samples: Optional[int] = field(
        default=None,
        metadata={
            "help": "For debugging purposes or quicker evaluation, truncate the number of test examples to this "
                    "value if set."
        },
    )

    def __post_init__(self):
        if self.template_style is not None:
            self.template_style = TemplateStyle(self.template_style)
        ratios = self.ratios
        if len(ratios) != 3 or abs(sum(ratios) - 1.0) > 1e-9:
            raise ContractError(f"split ratios {self.split_ratios} must be three numbers summing to 1")
        if self.visual_noise < 0:
            raise ContractError("visual_noise must be non-negative")

    @property
    def ratios(self) -> Tuple[float, ...]:
        return parse_floats(self.split_ratios)
