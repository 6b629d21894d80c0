"""Learned channel codec, the flat-fading channel Y = h X + w, and the
lossless side channel carrying per-phoneme speech information."""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .additional_info import AdditionalSpeechInfo
from .dims import ModelDims
from .errors import DimensionError, InputError, ParseError
from .nn.layers import LayerSpec, make_layer

NOISELESS = math.inf


@dataclass(frozen=True)
class ChannelConfig:
    kind: str = "awgn"
    snr_db: float = 10.0
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("awgn", "rayleigh"):
            raise InputError(f"channel kind must be awgn or rayleigh, got {self.kind!r}")
        if math.isnan(self.snr_db) or self.snr_db == -math.inf:
            raise InputError(f"snr_db must be finite or +inf, got {self.snr_db}")

    @property
    def sigma2(self) -> float:
        return noise_variance(self.snr_db)


def noise_variance(snr_db: float) -> float:
    """Noise variance for unit transmit power."""
    return 0.0 if snr_db == math.inf else 10 ** (-snr_db / 10)


@dataclass
class ComplexSymbolFrame:
    symbols: torch.Tensor  # (c, symbols_per_token) complex
    power_scale: float = 1.0

    @property
    def count(self) -> int:
        return self.symbols.numel()


@dataclass
class ChannelDraw:
    h: complex
    sigma2: float
    noise: torch.Tensor


def normalize_power(X: torch.Tensor, mask: torch.Tensor | None = None):
    """Scale each utterance (leading batch axis when 3-d) to unit mean symbol power.

    Returns ``(normalized, scale)`` where ``scale`` is the applied multiplier.
    """
    if X.dim() == 2:
        if X.numel() == 0:
            return X, 1.0
        p = (X.real ** 2 + X.imag ** 2).mean()
        scale = torch.rsqrt(p.clamp_min(1e-30))
        return X * scale, float(scale.detach())
    power = X.real ** 2 + X.imag ** 2
    if mask is None:
        mask = torch.ones(X.shape[:2], dtype=torch.bool)
    m = mask[..., None].to(power.dtype)
    count = m.sum(dim=(1, 2)).clamp_min(1)
    p = (power * m).sum(dim=(1, 2)) / (count * X.shape[-1])
    scale = torch.rsqrt(p.clamp_min(1e-30))
    return X * scale[:, None, None] * m, scale


def mean_symbol_power(X: torch.Tensor) -> float:
    return float((X.real ** 2 + X.imag ** 2).double().mean())


class ChannelEncoder(nn.Module):
    """latent (c, d) -> FC+ReLU -> FC(64) -> 32 complex symbols per token."""

    def __init__(self, dims: ModelDims):
        super().__init__()
        self.fc1 = make_layer(LayerSpec("fc", {"in_features": dims.latent_width, "out_features": dims.chan_hidden}, "chan_enc1"))
        self.fc2 = make_layer(LayerSpec("fc", {"in_features": dims.chan_hidden, "out_features": dims.real_per_token}, "chan_enc2"))
        self.symbols_per_token = dims.symbols_per_token

    def forward(self, L: torch.Tensor) -> torch.Tensor:
        x = self.fc2(torch.relu(self.fc1(L)))
        pairs = x.reshape(*x.shape[:-1], self.symbols_per_token, 2)
        return torch.complex(pairs[..., 0].contiguous(), pairs[..., 1].contiguous())


class ChannelDecoder(nn.Module):
    """32 complex symbols per token -> 64 reals -> FC(256) -> FC(latent width)."""

    def __init__(self, dims: ModelDims):
        super().__init__()
        self.fc1 = make_layer(LayerSpec("fc", {"in_features": dims.real_per_token, "out_features": dims.chan_dec_hidden}, "chan_dec1"))
        self.fc2 = make_layer(LayerSpec("fc", {"in_features": dims.chan_dec_hidden, "out_features": dims.latent_width}, "chan_dec2"))
        self.lrelu = make_layer(LayerSpec("leaky_relu"))
        self.symbols_per_token = dims.symbols_per_token

    def forward(self, Y: torch.Tensor) -> torch.Tensor:
        if Y.shape[-1] != self.symbols_per_token:
            raise DimensionError(f"channel decoder: axis -1 has size {Y.shape[-1]}, expected {self.symbols_per_token}")
        x = torch.stack([Y.real, Y.imag], dim=-1).reshape(*Y.shape[:-1], 2 * self.symbols_per_token)
        x = x.to(self.fc1.op.weight.dtype)
        return self.lrelu(self.fc2(self.lrelu(self.fc1(x))))


def channel_encode(encoder: ChannelEncoder, L: torch.Tensor) -> ComplexSymbolFrame:
    if L.shape[0] == 0:
        return ComplexSymbolFrame(torch.zeros(0, encoder.symbols_per_token, dtype=torch.complex64), 1.0)
    X, scale = normalize_power(encoder(L))
    return ComplexSymbolFrame(X, scale)


def channel_decode(decoder: ChannelDecoder, Y: torch.Tensor) -> torch.Tensor:
    return decoder(Y)


def _complex_normal(shape, generator: torch.Generator) -> torch.Tensor:
    n = torch.randn((2, *shape), generator=generator, dtype=torch.float64)
    return torch.complex(n[0], n[1]) / math.sqrt(2.0)


def draw_fading(kind: str, generator: torch.Generator, count: int | None = None):
    """Flat-fading gain(s) with E|h|^2 = 1; exactly 1 for AWGN."""
    if kind == "awgn":
        return 1.0 + 0j if count is None else torch.ones(count, dtype=torch.complex128)
    h = _complex_normal((1,) if count is None else (count,), generator)
    return complex(h[0]) if count is None else h


def transmit(X, cfg: ChannelConfig, generator: torch.Generator | None = None):
    """Pass one utterance's symbols through the channel: ``(Y, ChannelDraw)``."""
    symbols = X.symbols if isinstance(X, ComplexSymbolFrame) else X
    gen = generator if generator is not None else torch.Generator().manual_seed(cfg.seed)
    h = draw_fading(cfg.kind, gen)
    sigma2 = cfg.sigma2
    x64 = symbols.to(torch.complex128)
    if sigma2 == 0.0:
        noise = torch.zeros_like(x64)
        Y = x64 if cfg.kind == "awgn" else h * x64
    else:
        noise = _complex_normal(tuple(symbols.shape), gen) * math.sqrt(sigma2)
        Y = h * x64 + noise
    return Y.to(symbols.dtype), ChannelDraw(h, sigma2, noise)


def apply_channel(X: torch.Tensor, kind: str, snr_db: float, generator: torch.Generator,
                  mask: torch.Tensor | None = None) -> torch.Tensor:
    """Differentiable batched channel for training; one fading gain per utterance."""
    B = X.shape[0]
    h = draw_fading(kind, generator, B).to(X.dtype)
    sigma2 = noise_variance(snr_db)
    Y = X * h.reshape(B, *([1] * (X.dim() - 1)))
    if sigma2 > 0:
        Y = Y + (_complex_normal(tuple(X.shape), generator) * math.sqrt(sigma2)).to(X.dtype)
    if mask is not None:
        Y = Y * mask[..., None]
    return Y


def measured_snr_db(X: torch.Tensor, Y: torch.Tensor, draw: ChannelDraw) -> float:
    """10 log10(transmit power / received noise power)."""
    x = X.to(torch.complex128)
    w = Y.to(torch.complex128) - draw.h * x
    return 10 * math.log10(mean_symbol_power(x) / mean_symbol_power(w))


# lossless side channel -------------------------------------------------------

_HEADER = struct.Struct("<I")
_ENTRY = struct.Struct("<Hff")
_SPEAKER = struct.Struct("<H")


def payload_size(num_phonemes: int) -> int:
    """Bytes on the wire: u32 count, per phoneme (u16, f32, f32), u16 speaker."""
    return _HEADER.size + num_phonemes * _ENTRY.size + _SPEAKER.size


def serialize_info(D: AdditionalSpeechInfo) -> bytes:
    parts = [_HEADER.pack(len(D))]
    for d, p, w in zip(D.durations.tolist(), D.pitch.tolist(), D.power.tolist()):
        parts.append(_ENTRY.pack(d, p, w))
    parts.append(_SPEAKER.pack(D.speaker_id))
    return b"".join(parts)


def deserialize_info(data: bytes) -> AdditionalSpeechInfo:
    if len(data) < _HEADER.size + _SPEAKER.size:
        raise ParseError("side-information payload truncated")
    (n,) = _HEADER.unpack_from(data, 0)
    if len(data) != payload_size(n):
        raise ParseError(f"payload of {len(data)} bytes does not match {n} phonemes")
    rows = np.frombuffer(data, dtype=np.dtype([("d", "<u2"), ("p", "<f4"), ("w", "<f4")]),
                         count=n, offset=_HEADER.size)
    (spk,) = _SPEAKER.unpack_from(data, _HEADER.size + n * _ENTRY.size)
    return AdditionalSpeechInfo(rows["d"].astype(np.uint16), rows["p"].astype(np.float32),
                                rows["w"].astype(np.float32), spk)


def lossless_side_channel(D: AdditionalSpeechInfo) -> AdditionalSpeechInfo:
    return deserialize_info(serialize_info(D))


def symbol_count(c: int, symbols_per_token: int = 32) -> int:
    return symbols_per_token * c
