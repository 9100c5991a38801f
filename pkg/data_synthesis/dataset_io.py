"""
Dataset files: one JSON object per line after a format header, plus a YAML manifest with the split sizes, the
vocabulary and the configuration the corpus was generated with.
"""
import json
import logging
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Union

import yaml

from arguments.data_arguments import DataArguments, Domain
from data_synthesis.generator import CorpusSpec, ProductRecord, generate_corpus, generate_text_only_titles
from data_synthesis.splits import split
from data_synthesis.vocabulary import Vocabulary, build_vocab
from utils.exceptions import DatasetFormatError
from utils.reporting import args_to_dict

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1
HEADER = f"#mpl-dataset format={FORMAT_VERSION}"
SPLITS = ("train", "validation", "test")
SOURCE_SPLITS = ("source_train", "source_validation")
MANIFEST_FILE = "manifest.yaml"
TEXT_ONLY_FILE = "text_only_titles.txt"


def split_path(data_dir: Union[str, Path], split: str) -> Path:
    return Path(data_dir) / f"{split}.jsonl"


def atomic_write_text(path: Union[str, Path], text: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with tempfile.NamedTemporaryFile("w", dir=path.parent, delete=False, suffix=".tmp", encoding="utf-8",
                                     newline="\n") as file:
        file.write(text)
    os.replace(file.name, path)
    return path


def write_records(path: Union[str, Path], records: Iterable[ProductRecord]) -> Path:
    lines = [HEADER] + [json.dumps(record.to_json_dict(), ensure_ascii=False) for record in records]
    return atomic_write_text(path, "\n".join(lines) + "\n")


def read_records(path: Union[str, Path]) -> List[ProductRecord]:
    path = Path(path)
    with open(path, encoding="utf-8") as file:
        lines = file.read().splitlines()
    if not lines or lines[0].strip() != HEADER:
        raise DatasetFormatError(f"{path} does not start with the header '{HEADER}'")
    records = []
    for line_number, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        try:
            records.append(ProductRecord.from_json_dict(json.loads(line)))
        except (json.JSONDecodeError, KeyError, TypeError) as error:
            raise DatasetFormatError(f"{path}:{line_number}: malformed product record ({error})") from error
    return records


@dataclass
class ProductDataset:
    train: List[ProductRecord]
    validation: List[ProductRecord]
    test: List[ProductRecord]
    vocabulary: Vocabulary
    source_train: List[ProductRecord] = field(default_factory=list)
    source_validation: List[ProductRecord] = field(default_factory=list)
    text_only_titles: List[str] = field(default_factory=list)
    config: dict = field(default_factory=dict)

    @property
    def has_source_domain(self) -> bool:
        return bool(self.source_train)

    def counts(self) -> Dict[str, int]:
        counts = {split: len(getattr(self, split)) for split in SPLITS}
        if self.has_source_domain:
            counts.update({split: len(getattr(self, split)) for split in SOURCE_SPLITS})
        if self.text_only_titles:
            counts["text_only_titles"] = len(self.text_only_titles)
        return counts


def save_dataset(dataset: ProductDataset, data_dir: Union[str, Path]) -> List[Path]:
    data_dir = Path(data_dir)
    written = [write_records(split_path(data_dir, split), getattr(dataset, split)) for split in SPLITS]
    if dataset.has_source_domain:
        written += [write_records(split_path(data_dir, split), getattr(dataset, split)) for split in SOURCE_SPLITS]
    if dataset.text_only_titles:
        written.append(atomic_write_text(data_dir / TEXT_ONLY_FILE, "\n".join(dataset.text_only_titles) + "\n"))
    manifest = {"format": FORMAT_VERSION, "counts": dataset.counts(), "vocabulary": list(dataset.vocabulary.tokens),
                "config": dataset.config}
    written.append(atomic_write_text(data_dir / MANIFEST_FILE, yaml.safe_dump(manifest, sort_keys=False)))
    logger.info(f"Wrote {', '.join(f'{n} {s}' for s, n in dataset.counts().items())} to {data_dir}")
    return written


def read_manifest(data_dir: Union[str, Path]) -> dict:
    path = Path(data_dir) / MANIFEST_FILE
    if not path.exists():
        raise DatasetFormatError(f"no {MANIFEST_FILE} in {data_dir}, run gen-data first")
    with open(path, encoding="utf-8") as file:
        manifest = yaml.safe_load(file)
    if not isinstance(manifest, dict) or manifest.get("format") != FORMAT_VERSION:
        raise DatasetFormatError(f"{path} is not a format {FORMAT_VERSION} manifest")
    return manifest


def load_dataset(data_dir: Union[str, Path], splits: Optional[Iterable[str]] = None) -> ProductDataset:
    """Load the splits named in ``splits`` (all three by default) and the optional extras that exist on disk."""
    data_dir = Path(data_dir)
    manifest = read_manifest(data_dir)
    wanted = set(SPLITS if splits is None else splits)
    loaded = {split: read_records(split_path(data_dir, split)) if split in wanted else [] for split in SPLITS}
    for split in SOURCE_SPLITS:
        path = split_path(data_dir, split)
        loaded[split] = read_records(path) if path.exists() else []
    text_only_path = data_dir / TEXT_ONLY_FILE
    text_only = [line for line in text_only_path.read_text(encoding="utf-8").splitlines() if line.strip()] \
        if text_only_path.exists() else []
    return ProductDataset(vocabulary=Vocabulary(list(manifest["vocabulary"])), text_only_titles=text_only,
                          config=manifest.get("config", {}), **loaded)


def generate_dataset(data_args: DataArguments) -> ProductDataset:
    """Generate, split and index the corpora described by a ``DataArguments`` instance."""
    novel_spec = CorpusSpec.from_data_arguments(data_args, Domain.NOVEL)
    train, validation, test = split(generate_corpus(novel_spec), data_args.ratios, seed=data_args.corpus_seed)
    source_train, source_validation = [], []
    if data_args.generate_source_domain:
        source_spec = CorpusSpec.from_data_arguments(data_args, Domain.SOURCE)
        source_train, source_validation, _ = split(generate_corpus(source_spec), (0.8, 0.2, 0.0),
                                                   seed=source_spec.seed)
    text_only = generate_text_only_titles(novel_spec, data_args.num_text_only_titles)
    vocabulary = build_vocab(train + validation + test + source_train + source_validation, extra_titles=text_only)
    return ProductDataset(train, validation, test, vocabulary, source_train, source_validation, text_only,
                          config=args_to_dict(data_args))
