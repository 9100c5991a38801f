import logging
import math
from typing import List, Sequence, Tuple, TypeVar

import numpy as np

from utils.exceptions import ContractError

logger = logging.getLogger(__name__)

T = TypeVar("T")


def largest_remainder_sizes(total: int, ratios: Sequence[float]) -> List[int]:
    """Integer sizes proportional to ``ratios`` that sum to ``total``; leftovers go to the largest remainders."""
    raw = [ratio * total for ratio in ratios]
    sizes = [math.floor(value) for value in raw]
    leftover = total - sum(sizes)
    by_remainder = sorted(range(len(raw)), key=lambda i: (-(raw[i] - sizes[i]), i))
    for i in by_remainder[:leftover]:
        sizes[i] += 1
    return sizes


def split(records: Sequence[T], ratios: Sequence[float] = (0.7, 0.2, 0.1), seed: int = 42
          ) -> Tuple[List[T], List[T], List[T]]:
    """Seeded train/validation/test partition of ``records``; disjoint and exhaustive."""
    if len(ratios) != 3 or any(ratio < 0 for ratio in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise ContractError(f"split ratios must be three non-negative numbers summing to 1, got {tuple(ratios)}")
    order = np.random.default_rng(seed).permutation(len(records))
    train_size, validation_size, _ = largest_remainder_sizes(len(records), ratios)
    shuffled = [records[i] for i in order]
    train = shuffled[:train_size]
    validation = shuffled[train_size:train_size + validation_size]
    test = shuffled[train_size + validation_size:]
    logger.info(f"Split {len(records)} products into {len(train)}/{len(validation)}/{len(test)}")
    return train, validation, test


def fewshot_size(total: int, fraction: float) -> int:
    # rounding guards against 0.07 * 100 == 7.000000000000001
    return min(total, math.ceil(round(fraction * total, 9)))


def subsample_fewshot(train: Sequence[T], fraction: float, seed: int) -> List[T]:
    """A uniform sample of ``ceil(fraction * |train|)`` products in their original order."""
    if not 0.0 < fraction <= 1.0:
        raise ContractError(f"the few-shot fraction must lie in (0, 1], got {fraction}")
    if not train:
        raise ContractError("cannot subsample an empty training split")
    size = fewshot_size(len(train), fraction)
    chosen = np.sort(np.random.default_rng(seed).choice(len(train), size=size, replace=False))
    return [train[i] for i in chosen]
