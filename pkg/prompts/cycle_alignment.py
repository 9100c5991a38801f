"""
Cycle alignment of the three prompt banks: every bank queries every bank (itself included) with
parameter-free dot-product attention, and the nine retrieved blocks form the aligned prompt set.
"""
import logging
import os
import tempfile
from collections import OrderedDict
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Tuple, Union

import numpy as np
import yaml

from arguments.training_arguments import Modality
from numeric import functional as F
from numeric.tensor import Tensor
from prompts.prompt_bank import PromptBank
from utils.exceptions import DimensionError

logger = logging.getLogger(__name__)

# query-major order; fixed so that attention dumps of different runs line up
ALIGNMENT_ORDER: List[Tuple[Modality, Modality]] = [
    (Modality.IMAGE, Modality.IMAGE), (Modality.IMAGE, Modality.ATTRIBUTE), (Modality.IMAGE, Modality.TITLE),
    (Modality.ATTRIBUTE, Modality.ATTRIBUTE), (Modality.ATTRIBUTE, Modality.IMAGE),
    (Modality.ATTRIBUTE, Modality.TITLE),
    (Modality.TITLE, Modality.TITLE), (Modality.TITLE, Modality.IMAGE), (Modality.TITLE, Modality.ATTRIBUTE),
]


def block_label(query: Modality, key: Modality) -> str:
    return f"{query.value}->{key.value}"


@dataclass
class AlignedPromptSet:
    blocks: "OrderedDict[str, Tensor]"
    weights: "OrderedDict[str, np.ndarray]"
    fused: Tensor

    @property
    def labels(self) -> List[str]:
        return list(self.blocks)


def retrieve(query: Tensor, key: Tensor, scale: float = 1.0, return_weights: bool = False
             ) -> Union[Tensor, Tuple[Tensor, np.ndarray]]:
    """softmax_rows(scale * query @ key^T) @ key"""
    if query.shape != key.shape:
        raise DimensionError(f"retrieve needs equally shaped query and key banks, got {query.shape} and {key.shape}")
    scores = F.matmul(query, key.transpose(1, 0))
    if scale != 1.0:
        scores = scores * scale
    weights = F.softmax_rows(scores)
    out = F.matmul(weights, key)
    return (out, weights.data) if return_weights else out


def cycle_align(bank: PromptBank, scale: float = 1.0) -> AlignedPromptSet:
    blocks, weights = OrderedDict(), OrderedDict()
    for query, key in ALIGNMENT_ORDER:
        label = block_label(query, key)
        blocks[label], weights[label] = retrieve(bank[query], bank[key], scale, return_weights=True)
    return AlignedPromptSet(blocks, weights, F.concat(list(blocks.values()), axis=0))


def top_k_prompts(weights: np.ndarray, k: int = 3) -> np.ndarray:
    """Indices of the k most attended key prompts per query row, highest weight first (ties: lower index)."""
    k = min(k, weights.shape[1])
    return np.argsort(-weights, axis=1, kind="stable")[:, :k]


def attention_summary(aligned: AlignedPromptSet, top_k: int = 3) -> Dict[str, dict]:
    return {label: {"weights": matrix.astype(float).tolist(),
                    f"top_{top_k}": top_k_prompts(matrix, top_k).tolist()}
            for label, matrix in aligned.weights.items()}


def dump_attention(aligned: AlignedPromptSet, path: Union[str, Path], top_k: int = 3, extra: dict = None) -> Path:
    """Write the nine N_P x N_P weight matrices with their top-k indices to a YAML file."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    content = {"order": aligned.labels, "matrices": attention_summary(aligned, top_k)}
    if extra:
        content = {**extra, **content}
    with tempfile.NamedTemporaryFile("w", dir=path.parent, delete=False, suffix=".tmp", encoding="utf-8") as file:
        yaml.safe_dump(content, file, default_flow_style=None, sort_keys=False)
    os.replace(file.name, path)
    logger.info(f"Wrote attention weights of {len(aligned.weights)} alignment blocks to {path}")
    return path
