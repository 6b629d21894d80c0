"""The full transceiver: every trainable part in one module, with
checkpoint save/load that refuses a mismatched vocabulary."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import torch
from torch import nn

from .additional_info import CtcHead
from .channel import ChannelDecoder, ChannelEncoder
from .decoder import CorrectorLM, SemanticDecoder
from .dims import ModelDims
from .encoder import SemanticEncoder
from .errors import VersionError
from .nn.checkpoint import load_checkpoint, save_module
from .nn.layers import init_fan_in_uniform
from .reconstructor import SpeechReconstructor, TtsConfig
from .tokenizer import Vocabulary

PARTS = ("encoder", "ctc", "semantic_decoder", "channel_encoder", "channel_decoder", "lm", "reconstructor")


class Transceiver(nn.Module):
    def __init__(self, dims: ModelDims, vocab_size: int, phonemes: Sequence[str]):
        super().__init__()
        self.dims = dims
        self.vocab_size = vocab_size
        self.encoder = SemanticEncoder(dims, vocab_size)
        self.ctc = CtcHead(dims, vocab_size)
        self.semantic_decoder = SemanticDecoder(dims, vocab_size)
        self.channel_encoder = ChannelEncoder(dims)
        self.channel_decoder = ChannelDecoder(dims)
        self.lm = CorrectorLM(dims, vocab_size)
        self.reconstructor = SpeechReconstructor(TtsConfig.from_dims(dims), phonemes)

    @property
    def special_id(self) -> int:
        return self.vocab_size - 1

    def named_part_parameters(self, *parts: str) -> dict:
        return {f"{part}.{n}": p for part in parts for n, p in getattr(self, part).named_parameters()}


def build_transceiver(dims: ModelDims, vocab: Vocabulary, phonemes: Sequence[str], seed: int = 0) -> Transceiver:
    model = Transceiver(dims, vocab.size, phonemes)
    init_fan_in_uniform(model, seed)
    return model


def save_transceiver(path, model: Transceiver, vocab: Vocabulary, extra: dict | None = None) -> None:
    meta = {"dims": model.dims.to_dict(), "vocab_size": vocab.size, "vocab_digest": vocab.digest(),
            "phonemes": model.reconstructor.phonemes, **(extra or {})}
    save_module(path, model, meta)


def load_transceiver(path, vocab: Vocabulary | None = None) -> tuple[Transceiver, dict]:
    tensors, meta = load_checkpoint(path)
    if vocab is not None and (meta.get("vocab_digest") != vocab.digest() or meta.get("vocab_size") != vocab.size):
        raise VersionError(f"{Path(path).name} was trained with a different vocabulary")
    model = Transceiver(ModelDims.from_dict(meta["dims"]), meta["vocab_size"], meta["phonemes"])
    current = model.state_dict()
    model.load_state_dict({k: torch.from_numpy(v).to(current[k].dtype) for k, v in tensors.items()})
    return model, meta
