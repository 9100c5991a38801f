from collections import Counter
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Sequence

from utils.exceptions import ContractError
from utils.tokenization import detokenize, tokenize

PAD_TOKEN, BOS_TOKEN, EOS_TOKEN, UNK_TOKEN = "<pad>", "<bos>", "<eos>", "<unk>"
RESERVED_TOKENS = (PAD_TOKEN, BOS_TOKEN, EOS_TOKEN, UNK_TOKEN)


@dataclass
class Vocabulary:
    """Token to id map with pad=0, bos=1, eos=2 and unk=3."""
    tokens: List[str]
    token_to_id: Dict[str, int] = field(init=False, repr=False)

    def __post_init__(self):
        if tuple(self.tokens[:len(RESERVED_TOKENS)]) != RESERVED_TOKENS:
            raise ContractError(f"a vocabulary must start with the reserved tokens {RESERVED_TOKENS}")
        self.token_to_id = {token: index for index, token in enumerate(self.tokens)}
        if len(self.token_to_id) != len(self.tokens):
            raise ContractError("vocabulary tokens must be unique")

    pad_id, bos_id, eos_id, unk_id = 0, 1, 2, 3

    def __len__(self):
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self.token_to_id

    def encode(self, tokens: Iterable[str]) -> List[int]:
        return [self.token_to_id.get(token, self.unk_id) for token in tokens]

    def encode_title(self, title: str) -> List[int]:
        return [self.bos_id] + self.encode(tokenize(title)) + [self.eos_id]

    def encode_attributes(self, attributes: Sequence[str]) -> List[int]:
        return self.encode(attributes)

    def decode(self, ids: Iterable[int], skip_special_tokens: bool = True) -> List[str]:
        tokens = []
        for index in ids:
            index = int(index)
            if index == self.eos_id and skip_special_tokens:
                break
            if skip_special_tokens and index < len(RESERVED_TOKENS):
                continue
            tokens.append(self.tokens[index])
        return tokens

    def detokenize(self, ids: Iterable[int]) -> str:
        return detokenize(self.decode(ids))


def build_vocab(records, extra_titles: Iterable[str] = ()) -> Vocabulary:
    """All attribute and title tokens after the reserved ones, by descending frequency, then lexicographically."""
    records = list(records)
    if not records:
        raise ContractError("cannot build a vocabulary from an empty corpus")
    counts = Counter()
    for record in records:
        counts.update(record.attributes)
        counts.update(tokenize(record.title))
    for title in extra_titles:
        counts.update(tokenize(title))
    ordered = sorted(counts.items(), key=lambda item: (-item[1], item[0]))
    return Vocabulary(list(RESERVED_TOKENS) + [token for token, _ in ordered if token not in RESERVED_TOKENS])
