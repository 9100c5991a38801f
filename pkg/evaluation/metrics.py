"""
Corpus-level generation metrics over tokenized titles: BLEU-4, ROUGE-L and CIDEr-D.

All three take an ``EvalCorpus`` (or a plain list of ``(candidate, references)`` token-sequence pairs) and are pure
functions of it, independent of entry order. BLEU-4 and ROUGE-L are reported on a 0-100 scale, CIDEr-D on the usual
x10 scale.
"""
import logging
import math
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, Iterator, List, Sequence, Tuple, Union

import numpy as np
from nltk.util import ngrams

from utils.exceptions import ContractError, DegenerateCorpusError
from utils.tokenization import tokenize

logger = logging.getLogger(__name__)

MAX_ORDER = 4
ROUGE_BETA2 = 1.2
CIDER_SIGMA = 6.0
REFERENCE_SEPARATOR = " ||| "

Tokens = Tuple[str, ...]


@dataclass(frozen=True)
class EvalEntry:
    candidate: Tokens
    references: Tuple[Tokens, ...]


@dataclass
class EvalCorpus:
    entries: List[EvalEntry] = field(default_factory=list)

    def __post_init__(self):
        self.entries = [EvalEntry(tuple(entry.candidate), tuple(tuple(ref) for ref in entry.references))
                        if isinstance(entry, EvalEntry) else EvalEntry(tuple(entry[0]), tuple(map(tuple, entry[1])))
                        for entry in self.entries]
        for index, entry in enumerate(self.entries):
            if not entry.references:
                raise ContractError(f"corpus entry {index} has no reference")

    @classmethod
    def from_strings(cls, candidates: Sequence[str], references: Sequence[Sequence[str]]) -> "EvalCorpus":
        """Tokenize raw titles with the training tokenizer."""
        if len(candidates) != len(references):
            raise ContractError(f"{len(candidates)} candidates but {len(references)} reference lists")
        return cls([EvalEntry(tuple(tokenize(candidate)), tuple(tuple(tokenize(ref)) for ref in refs))
                    for candidate, refs in zip(candidates, references)])

    def __len__(self):
        return len(self.entries)

    def __iter__(self) -> Iterator[EvalEntry]:
        return iter(self.entries)


CorpusLike = Union[EvalCorpus, Sequence[Tuple[Sequence[str], Sequence[Sequence[str]]]]]


def as_corpus(corpus: CorpusLike) -> EvalCorpus:
    corpus = corpus if isinstance(corpus, EvalCorpus) else EvalCorpus(list(corpus))
    if len(corpus) == 0:
        raise ContractError("cannot score an empty corpus")
    return corpus


def ngram_counts(tokens: Sequence[str], n: int) -> Counter:
    return Counter(ngrams(tokens, n)) if len(tokens) >= n else Counter()


# BLEU

@dataclass
class BleuStatistics:
    matches: List[int]
    totals: List[int]
    hypothesis_length: int
    reference_length: int

    @property
    def precisions(self) -> List[float]:
        return [m / t if t else 0.0 for m, t in zip(self.matches, self.totals)]

    @property
    def brevity_penalty(self) -> float:
        if self.hypothesis_length == 0:
            return 0.0
        if self.hypothesis_length > self.reference_length:
            return 1.0
        return math.exp(1.0 - self.reference_length / self.hypothesis_length)

    @property
    def score(self) -> float:
        if self.hypothesis_length == 0 or min(self.matches) == 0:
            return 0.0
        log_precision = sum(math.log(p) for p in self.precisions) / len(self.precisions)
        return 100.0 * self.brevity_penalty * math.exp(log_precision)


def _closest_reference_length(references: Sequence[Tokens], hypothesis_length: int) -> int:
    return min((len(ref) for ref in references), key=lambda length: (abs(length - hypothesis_length), length))


def bleu_statistics(corpus: CorpusLike, max_order: int = MAX_ORDER) -> BleuStatistics:
    corpus = as_corpus(corpus)
    matches, totals = [0] * max_order, [0] * max_order
    hypothesis_length = reference_length = 0
    for entry in corpus:
        hypothesis_length += len(entry.candidate)
        reference_length += _closest_reference_length(entry.references, len(entry.candidate))
        for n in range(1, max_order + 1):
            candidate_counts = ngram_counts(entry.candidate, n)
            max_reference_counts = Counter()
            for reference in entry.references:
                max_reference_counts |= ngram_counts(reference, n)
            matches[n - 1] += sum((candidate_counts & max_reference_counts).values())
            totals[n - 1] += sum(candidate_counts.values())
    return BleuStatistics(matches, totals, hypothesis_length, reference_length)


def bleu4(corpus: CorpusLike) -> float:
    """Corpus BLEU with uniform weights over n=1..4, brevity penalty and no smoothing."""
    return bleu_statistics(corpus).score


# ROUGE-L

def lcs_length(a: Sequence[str], b: Sequence[str]) -> int:
    if not a or not b:
        return 0
    previous = [0] * (len(b) + 1)
    for token in a:
        current = [0]
        for j, other in enumerate(b, start=1):
            current.append(previous[j - 1] + 1 if token == other else max(previous[j], current[j - 1]))
        previous = current
    return previous[-1]


def rouge_l_pair(candidate: Sequence[str], reference: Sequence[str], beta2: float = ROUGE_BETA2) -> float:
    lcs = lcs_length(candidate, reference)
    if lcs == 0:
        return 0.0
    precision, recall = lcs / len(candidate), lcs / len(reference)
    return (1 + beta2) * precision * recall / (recall + beta2 * precision)


def rouge_l(corpus: CorpusLike, beta2: float = ROUGE_BETA2) -> float:
    """LCS F-measure, best reference per entry, averaged over the corpus."""
    corpus = as_corpus(corpus)
    scores = [max(rouge_l_pair(entry.candidate, ref, beta2) for ref in entry.references) for entry in corpus]
    return 100.0 * float(np.mean(scores))


# CIDEr-D

def _all_ngrams(tokens: Sequence[str], max_order: int) -> Counter:
    counts = Counter()
    for n in range(1, max_order + 1):
        counts.update(ngram_counts(tokens, n))
    return counts


class _CiderVector:
    def __init__(self, counts: Counter, document_frequency: Dict[tuple, int], log_num_documents: float,
                 length: int, max_order: int):
        self.vec = [defaultdict(float) for _ in range(max_order)]
        self.norm = [0.0] * max_order
        self.length = length
        for gram, term_frequency in counts.items():
            n = len(gram) - 1
            df = math.log(max(1.0, document_frequency.get(gram, 0)))
            self.vec[n][gram] = float(term_frequency) * (log_num_documents - df)
            self.norm[n] += self.vec[n][gram] ** 2
        self.norm = [math.sqrt(value) for value in self.norm]


def _cider_similarity(hypothesis: _CiderVector, reference: _CiderVector, sigma: float) -> np.ndarray:
    delta = float(hypothesis.length - reference.length)
    values = np.zeros(len(hypothesis.vec))
    for n, hypothesis_vec in enumerate(hypothesis.vec):
        for gram, value in hypothesis_vec.items():
            # clipped counts
            values[n] += min(value, reference.vec[n].get(gram, 0.0)) * reference.vec[n].get(gram, 0.0)
        if hypothesis.norm[n] != 0 and reference.norm[n] != 0:
            values[n] /= hypothesis.norm[n] * reference.norm[n]
        values[n] *= math.e ** (-(delta ** 2) / (2 * sigma ** 2))
    return values


def cider_scores(corpus: CorpusLike, sigma: float = CIDER_SIGMA, max_order: int = MAX_ORDER) -> List[float]:
    """Per-entry CIDEr-D. Document frequencies come from the reference sets of this corpus."""
    corpus = as_corpus(corpus)
    if len(corpus) < 2:
        raise DegenerateCorpusError("CIDEr needs at least two corpus entries for its document frequencies; "
                                    "score the pooled validation or test corpus instead of a single example")
    reference_counts = [[_all_ngrams(ref, max_order) for ref in entry.references] for entry in corpus]
    document_frequency = Counter()
    for counts in reference_counts:
        document_frequency.update(set().union(*[set(c) for c in counts]))
    log_num_documents = math.log(float(len(corpus)))

    scores = []
    for entry, counts in zip(corpus, reference_counts):
        hypothesis = _CiderVector(_all_ngrams(entry.candidate, max_order), document_frequency, log_num_documents,
                                  len(entry.candidate), max_order)
        total = np.zeros(max_order)
        for reference, reference_count in zip(entry.references, counts):
            total += _cider_similarity(hypothesis, _CiderVector(reference_count, document_frequency,
                                                                log_num_documents, len(reference), max_order), sigma)
        scores.append(float(np.mean(total)) / len(entry.references) * 10.0)
    return scores


def cider(corpus: CorpusLike, sigma: float = CIDER_SIGMA) -> float:
    return float(np.mean(cider_scores(corpus, sigma)))


def score_corpus(corpus: CorpusLike) -> Dict[str, float]:
    corpus = as_corpus(corpus)
    return {"bleu4": bleu4(corpus), "rouge_l": rouge_l(corpus), "cider": cider(corpus)}


# two-column files

def read_eval_file(path: Union[str, Path]) -> EvalCorpus:
    """Lines of ``candidate<TAB>reference ||| reference ...``."""
    candidates, references = [], []
    with open(path, encoding="utf-8") as file:
        for line_number, line in enumerate(file, start=1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            if "\t" not in line:
                raise ContractError(f"{path}:{line_number}: expected 'candidate<TAB>references'")
            candidate, joined = line.split("\t", 1)
            candidates.append(candidate)
            references.append([ref for ref in joined.split(REFERENCE_SEPARATOR.strip()) if ref.strip()])
    return EvalCorpus.from_strings(candidates, references)


def format_eval_lines(candidates: Iterable[str], references: Iterable[Sequence[str]]) -> List[str]:
    return [f"{candidate}\t{REFERENCE_SEPARATOR.join(refs)}" for candidate, refs in zip(candidates, references)]
