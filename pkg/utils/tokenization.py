from typing import List

from nltk.tokenize import RegexpTokenizer

# lowercase word characters; punctuation is dropped
_word_tokenizer = RegexpTokenizer(r"[^\W_]+")


def tokenize(text: str) -> List[str]:
    """The one tokenizer used for training titles and for the metrics."""
    return _word_tokenizer.tokenize(text.lower())


def detokenize(tokens: List[str]) -> str:
    return " ".join(tokens)
