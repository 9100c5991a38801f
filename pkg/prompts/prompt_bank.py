import logging
from dataclasses import dataclass
from typing import Dict, Iterator, Tuple

import numpy as np

from arguments.training_arguments import Modality
from modeling.configuration_mpl import MplConfig
from numeric import functional as F
from numeric.tensor import Tensor, get_default_dtype
from utils.exceptions import DimensionError

logger = logging.getLogger(__name__)

PROMPT_INIT_STD = 0.02


@dataclass
class PromptBank:
    """One soft-prompt matrix [N_P, d] per modality: visual (P_I), attribute (P_A) and language (P_T)."""
    image: Tensor
    attribute: Tensor
    title: Tensor

    def __post_init__(self):
        shapes = {tensor.shape for tensor in (self.image, self.attribute, self.title)}
        if len(shapes) != 1:
            raise DimensionError(f"all prompt banks must share one shape, got {sorted(shapes)}")

    def __getitem__(self, modality: Modality) -> Tensor:
        return {Modality.IMAGE: self.image, Modality.ATTRIBUTE: self.attribute, Modality.TITLE: self.title}[
            Modality(modality)]

    @property
    def shape(self) -> Tuple[int, int]:
        return self.image.shape

    def named_parameters(self) -> Iterator[Tuple[str, Tensor]]:
        yield "prompt_bank.image", self.image
        yield "prompt_bank.attribute", self.attribute
        yield "prompt_bank.title", self.title

    def parameters_dict(self) -> Dict[str, Tensor]:
        return dict(self.named_parameters())

    def requires_grad_(self, requires_grad: bool = True) -> "PromptBank":
        for _, tensor in self.named_parameters():
            tensor.requires_grad = requires_grad
        return self

    @property
    def frozen(self) -> bool:
        return not any(tensor.requires_grad for _, tensor in self.named_parameters())

    def copy(self) -> "PromptBank":
        return PromptBank(self.image.copy(), self.attribute.copy(), self.title.copy())

    def distance_to(self, other: "PromptBank") -> Dict[str, float]:
        """L2 distance per bank, used to verify that training moved the prompts."""
        return {name: float(np.linalg.norm(tensor.data - other_tensor.data))
                for (name, tensor), (_, other_tensor) in zip(self.named_parameters(), other.named_parameters())}


def bank_init(config: MplConfig, seed: int) -> PromptBank:
    """Three independent N_P x d banks drawn from N(0, 0.02)."""
    rng = np.random.default_rng(seed)
    shape = (config.num_prompts, config.d_model)
    dtype = get_default_dtype()
    banks = [Tensor(rng.normal(0.0, PROMPT_INIT_STD, size=shape).astype(dtype), requires_grad=True)
             for _ in Modality]
    return PromptBank(*banks)


def concat_prompt(prompts: Tensor, representations: Tensor) -> Tensor:
    """
    [P; R]: prompts first, then the representation rows. A batched ``R`` ([B, L, d]) gets the same
    prompts in front of every sequence.
    """
    if prompts.shape[-1] != representations.shape[-1]:
        raise DimensionError(f"prompt width {prompts.shape[-1]} does not match "
                             f"representation width {representations.shape[-1]}")
    if representations.ndim == 3:
        prompts = F.expand(prompts, (representations.shape[0],) + prompts.shape)
    return F.concat([prompts, representations], axis=-2)
