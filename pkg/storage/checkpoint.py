"""
Single-file binary checkpoints.

Layout (all integers little-endian):

    magic            8 bytes   b"MPLCKPT\\0"
    version          uint32
    header length    uint64
    header           UTF-8 JSON: config, array table (name, shape, kind), optimizer hyperparameters, phase, seed,
                     best validation CIDEr, vocabulary, resolved run configuration
    payloads         float32 little-endian, one per array table entry, in table order
"""
import json
import logging
import os
import struct
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Union

import numpy as np

from modeling.configuration_mpl import MplConfig
from modeling.modeling_mpl import ModelParams
from numeric.optim import AdamWState
from numeric.tensor import Tensor
from prompts.prompt_bank import PromptBank
from utils.exceptions import CheckpointCorruptionError, CheckpointFormatError

logger = logging.getLogger(__name__)

MAGIC = b"MPLCKPT\0"
FORMAT_VERSION = 1
PAYLOAD_DTYPE = np.dtype("<f4")
_PREAMBLE = struct.Struct("<IQ")

PARAM, PROMPT, EXP_AVG, EXP_AVG_SQ = "param", "prompt", "exp_avg", "exp_avg_sq"


@dataclass
class Checkpoint:
    config: MplConfig
    params: ModelParams
    prompt_bank: Optional[PromptBank] = None
    optimizer_state: Optional[AdamWState] = None
    phase: str = "mpl"
    seed: int = 0
    best_validation_cider: Optional[float] = None
    vocabulary: Optional[List[str]] = None
    run_config: dict = field(default_factory=dict)

    def arrays(self):
        for name, tensor in self.params.items():
            yield name, PARAM, tensor.data
        if self.prompt_bank is not None:
            for name, tensor in self.prompt_bank.named_parameters():
                yield name, PROMPT, tensor.data
        if self.optimizer_state is not None:
            for name, moment in self.optimizer_state.exp_avg.items():
                yield name, EXP_AVG, moment
            for name, moment in self.optimizer_state.exp_avg_sq.items():
                yield name, EXP_AVG_SQ, moment


def _header(checkpoint: Checkpoint) -> dict:
    return {
        "config": checkpoint.config.to_dict(),
        "arrays": [{"name": name, "shape": list(data.shape), "kind": kind}
                   for name, kind, data in checkpoint.arrays()],
        "optimizer": None if checkpoint.optimizer_state is None else checkpoint.optimizer_state.hyperparameters(),
        "phase": checkpoint.phase,
        "seed": checkpoint.seed,
        "best_validation_cider": checkpoint.best_validation_cider,
        "vocabulary": checkpoint.vocabulary,
        "run_config": checkpoint.run_config,
    }


def save_checkpoint(path: Union[str, Path], checkpoint: Checkpoint) -> Path:
    """Write the checkpoint to a temporary file next to ``path`` and move it into place."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    content = _header(checkpoint)
    header = json.dumps(content, sort_keys=True).encode("utf-8")
    with tempfile.NamedTemporaryFile("wb", dir=path.parent, delete=False, suffix=".tmp") as file:
        file.write(MAGIC)
        file.write(_PREAMBLE.pack(FORMAT_VERSION, len(header)))
        file.write(header)
        for _, _, data in checkpoint.arrays():
            file.write(np.ascontiguousarray(data, dtype=PAYLOAD_DTYPE).tobytes())
    os.replace(file.name, path)
    logger.info(f"Saved {checkpoint.phase} checkpoint with {len(content['arrays'])} arrays to {path}")
    return path


def load_checkpoint(path: Union[str, Path]) -> Checkpoint:
    path = Path(path)
    with open(path, "rb") as file:
        blob = file.read()

    if blob[:len(MAGIC)] != MAGIC:
        raise CheckpointFormatError(f"{path} is not a checkpoint file (bad magic bytes)")
    offset = len(MAGIC)
    if len(blob) < offset + _PREAMBLE.size:
        raise CheckpointCorruptionError(f"{path}: truncated preamble", offset)
    version, header_length = _PREAMBLE.unpack_from(blob, offset)
    if version != FORMAT_VERSION:
        raise CheckpointFormatError(f"{path} has checkpoint format version {version}, expected {FORMAT_VERSION}")
    offset += _PREAMBLE.size
    if len(blob) < offset + header_length:
        raise CheckpointCorruptionError(f"{path}: truncated header", offset)
    try:
        header = json.loads(blob[offset:offset + header_length].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as error:
        raise CheckpointCorruptionError(f"{path}: unreadable header ({error})", offset) from error
    offset += header_length

    arrays = []
    for entry in header["arrays"]:
        shape = tuple(entry["shape"])
        num_bytes = int(np.prod(shape, dtype=np.int64)) * PAYLOAD_DTYPE.itemsize
        if offset + num_bytes > len(blob):
            raise CheckpointCorruptionError(
                f"{path}: payload of '{entry['name']}' ({shape}) runs past the end of the file", offset)
        data = np.frombuffer(blob, dtype=PAYLOAD_DTYPE, count=num_bytes // PAYLOAD_DTYPE.itemsize, offset=offset)
        arrays.append((entry["name"], entry["kind"], data.reshape(shape).astype(np.float32)))
        offset += num_bytes
    if offset != len(blob):
        raise CheckpointCorruptionError(f"{path}: {len(blob) - offset} unexpected trailing bytes", offset)

    params = ModelParams((name, Tensor(data, requires_grad=True)) for name, kind, data in arrays if kind == PARAM)
    prompts = {name: Tensor(data, requires_grad=True) for name, kind, data in arrays if kind == PROMPT}
    prompt_bank = PromptBank(prompts["prompt_bank.image"], prompts["prompt_bank.attribute"],
                             prompts["prompt_bank.title"]) if prompts else None
    optimizer_state = None
    if header["optimizer"] is not None:
        optimizer_state = AdamWState(**header["optimizer"])
        optimizer_state.exp_avg = {name: data for name, kind, data in arrays if kind == EXP_AVG}
        optimizer_state.exp_avg_sq = {name: data for name, kind, data in arrays if kind == EXP_AVG_SQ}
    return Checkpoint(config=MplConfig.from_dict(header["config"]), params=params, prompt_bank=prompt_bank,
                      optimizer_state=optimizer_state, phase=header["phase"], seed=header["seed"],
                      best_validation_cider=header["best_validation_cider"], vocabulary=header["vocabulary"],
                      run_config=header["run_config"])
