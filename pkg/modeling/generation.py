"""
Title generation: beam search over the decoder with length-normalized hypothesis selection, and batched greedy
decoding used for validation.
"""
import logging
from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import log_softmax

from modeling.configuration_mpl import MplConfig
from modeling.modeling_mpl import ModelParams, decode_logits
from numeric.tensor import Tensor, no_grad
from utils.exceptions import ContractError

logger = logging.getLogger(__name__)

LogProbFn = Callable[[List[Tuple[int, ...]]], np.ndarray]


def length_normalized_score(log_prob: float, length: int) -> float:
    return log_prob / max(length, 1)


@dataclass(frozen=True)
class GenerationHypothesis:
    tokens: Tuple[int, ...]  # generated ids without bos; ends with eos when finished
    log_prob: float
    finished: bool
    finish_step: int

    @property
    def normalized_score(self) -> float:
        return length_normalized_score(self.log_prob, len(self.tokens))

    def sort_key(self):
        return -self.normalized_score, self.tokens, self.finish_step


def _top_tokens(row: np.ndarray, k: int) -> np.ndarray:
    # highest log-prob first, lower id on ties
    return np.lexsort((np.arange(row.shape[0]), -row))[:k]


def search(log_prob_fn: LogProbFn, beam_size: int, max_len: int, eos_id: int,
           extra_candidates: Sequence[GenerationHypothesis] = ()) -> GenerationHypothesis:
    """
    Beam search over any next-token distribution. ``log_prob_fn`` maps a list of prefixes to a [n, V] array of
    next-token log-probabilities. Each step keeps the ``beam_size`` best extensions by accumulated log-prob;
    extensions ending in eos leave the beam. The result is the hypothesis with the best length-normalized score
    among finished ones, those still alive after ``max_len`` steps and ``extra_candidates``.
    """
    if beam_size < 1:
        raise ContractError(f"beam size must be at least 1, got {beam_size}")
    if max_len < 1:
        raise ContractError(f"max_len must be at least 1, got {max_len}")

    alive = [GenerationHypothesis((), 0.0, False, 0)]
    finished: List[GenerationHypothesis] = []
    for step in range(1, max_len + 1):
        if not alive:
            break
        log_probs = np.asarray(log_prob_fn([hypothesis.tokens for hypothesis in alive]), dtype=np.float64)
        candidates = []
        for hypothesis, row in zip(alive, log_probs):
            for token in _top_tokens(row, beam_size):
                candidates.append((hypothesis.log_prob + float(row[token]), hypothesis.tokens + (int(token),)))
        candidates.sort(key=lambda candidate: (-candidate[0], candidate[1]))

        alive = []
        for log_prob, tokens in candidates[:beam_size]:
            is_finished = tokens[-1] == eos_id
            hypothesis = GenerationHypothesis(tokens, log_prob, is_finished, step)
            (finished if is_finished else alive).append(hypothesis)

    pool = finished + alive + list(extra_candidates)
    return min(pool, key=GenerationHypothesis.sort_key)


def _check_max_len(max_len: Optional[int], config: MplConfig) -> int:
    limit = config.max_title_len - 1
    if max_len is None:
        return limit
    if not 1 <= max_len <= limit:
        raise ContractError(f"max_len must lie in [1, {limit}], got {max_len}")
    return max_len


def model_log_prob_fn(memory: Tensor, params: ModelParams, config: MplConfig,
                      memory_mask: Optional[np.ndarray] = None) -> LogProbFn:
    """Next-token log-probabilities of the decoder for prefixes that follow bos."""
    def log_prob_fn(prefixes: List[Tuple[int, ...]]) -> np.ndarray:
        ids = np.array([(config.bos_token_id,) + tuple(prefix) for prefix in prefixes], dtype=np.int64)
        with no_grad():
            logits = decode_logits(memory, ids, params, config, memory_mask=memory_mask)
        return log_softmax(logits.data[:, -1, :].astype(np.float64), axis=-1)
    return log_prob_fn


def greedy_decode(memory: Tensor, params: ModelParams, config: MplConfig, max_len: Optional[int] = None,
                  memory_mask: Optional[np.ndarray] = None) -> List[GenerationHypothesis]:
    """Batched argmax decoding of one title per memory row ([B, M, d] memory, optional [B, M] mask)."""
    max_len = _check_max_len(max_len, config)
    batch_size = memory.shape[0] if memory.ndim == 3 else 1
    ids = np.full((batch_size, 1), config.bos_token_id, dtype=np.int64)
    log_probs = np.zeros(batch_size)
    finish_steps = np.zeros(batch_size, dtype=np.int64)
    done = np.zeros(batch_size, dtype=bool)
    for step in range(1, max_len + 1):
        with no_grad():
            logits = decode_logits(memory, ids, params, config, memory_mask=memory_mask)
        step_log_probs = log_softmax(logits.data.reshape(batch_size, ids.shape[1], -1)[:, -1, :].astype(np.float64),
                                     axis=-1)
        next_ids = np.argmax(step_log_probs, axis=-1)
        next_ids[done] = config.pad_token_id
        log_probs[~done] += step_log_probs[~done, next_ids[~done]]
        newly_done = ~done & (next_ids == config.eos_token_id)
        finish_steps[newly_done] = step
        done |= newly_done
        ids = np.concatenate([ids, next_ids[:, None]], axis=1)
        if done.all():
            break
    finish_steps[~done] = ids.shape[1] - 1

    hypotheses = []
    for row, log_prob, step, is_finished in zip(ids[:, 1:], log_probs, finish_steps, done):
        tokens = tuple(int(token) for token in row[:step])
        hypotheses.append(GenerationHypothesis(tokens, float(log_prob), bool(is_finished), int(step)))
    return hypotheses


def beam_search(memory: Tensor, params: ModelParams, config: MplConfig, beam_size: Optional[int] = None,
                max_len: Optional[int] = None, memory_mask: Optional[np.ndarray] = None) -> GenerationHypothesis:
    """
    Decode one title from a single memory sequence. The greedy hypothesis joins the final pool, so the result never
    scores below greedy decoding under the length-normalized criterion.
    """
    beam_size = config.num_beams if beam_size is None else beam_size
    max_len = _check_max_len(max_len, config)
    if memory.ndim == 3 and memory.shape[0] != 1:
        raise ContractError(f"beam search decodes one memory sequence at a time, got a batch of {memory.shape[0]}")
    greedy = greedy_decode(memory, params, config, max_len, memory_mask)[0]
    return search(model_log_prob_fn(memory, params, config, memory_mask), beam_size, max_len,
                  config.eos_token_id, extra_candidates=[greedy])
