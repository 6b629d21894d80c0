"""Layer inventory used by every network in the transceiver.

Each layer is built from a :class:`LayerSpec` and checks the shape of its
input before running, so a wiring mistake surfaces as a
:class:`~semspeech.errors.DimensionError` naming the layer and the axis
instead of an opaque matmul failure deep inside torch.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping

import torch
from torch import nn
import torch.nn.functional as F

from ..errors import ContractError, DimensionError

LEAKY_SLOPE = 0.01

_REQUIRED = {
    "conv2d": ("in_channels", "out_channels", "kernel"),
    "maxpool2d": ("window",),
    "conv1d": ("in_channels", "out_channels", "kernel"),
    "fc": ("in_features", "out_features"),
    "blstm": ("input_size", "hidden"),
    "lstm": ("input_size", "hidden"),
    "gru": ("input_size", "hidden"),
    "embedding": ("num_embeddings", "dim"),
    "transformer_block": ("d_model", "heads", "ff"),
    "softmax": (),
    "logsoftmax": (),
    "tanh": (),
    "leaky_relu": (),
}
KINDS = frozenset(_REQUIRED)


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    sizes: Mapping[str, int] = field(default_factory=dict)
    name: str = ""

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ContractError(f"unknown layer kind {self.kind!r}")
        missing = [k for k in _REQUIRED[self.kind] if k not in self.sizes]
        if missing:
            raise ContractError(f"{self.label}: missing size fields {missing}")
        for key, value in self.sizes.items():
            if key == "padding":
                if int(value) < 0:
                    raise ContractError(f"{self.label}: padding must be >= 0")
            elif int(value) <= 0:
                raise ContractError(f"{self.label}: size field {key}={value} must be positive")
        if self.kind == "transformer_block" and self.sizes["d_model"] % self.sizes["heads"]:
            raise ContractError(f"{self.label}: d_model not divisible by heads")

    @property
    def label(self) -> str:
        return f"{self.name or self.kind} ({self.kind})"

    def __getitem__(self, key):
        return self.sizes[key]

    def get(self, key, default=None):
        return self.sizes.get(key, default)


def _require(cond: bool, spec: LayerSpec, axis: int, got, expected) -> None:
    if not cond:
        raise DimensionError(f"{spec.label}: axis {axis} has size {got}, expected {expected}")


class Layer(nn.Module):
    """A single spec-driven layer with input shape validation."""

    def __init__(self, spec: LayerSpec):
        super().__init__()
        self.spec = spec
        s, kind = spec.sizes, spec.kind
        if kind == "conv2d":
            k = s["kernel"]
            self.op = nn.Conv2d(s["in_channels"], s["out_channels"], k, stride=1, padding=k // 2)
        elif kind == "maxpool2d":
            self.op = nn.MaxPool2d(s["window"], stride=s["window"])
        elif kind == "conv1d":
            k = s["kernel"]
            self.op = nn.Conv1d(s["in_channels"], s["out_channels"], k, padding=s.get("padding", k // 2))
        elif kind == "fc":
            self.op = nn.Linear(s["in_features"], s["out_features"])
        elif kind == "blstm":
            self.op = nn.LSTM(s["input_size"], s["hidden"], batch_first=True, bidirectional=True)
            self.proj = nn.Linear(2 * s["hidden"], s["hidden"])
        elif kind == "lstm":
            self.op = nn.LSTM(s["input_size"], s["hidden"], num_layers=s.get("num_layers", 1),
                              batch_first=True)
        elif kind == "gru":
            self.op = nn.GRU(s["input_size"], s["hidden"], num_layers=s.get("num_layers", 1),
                             batch_first=True)
        elif kind == "embedding":
            self.op = nn.Embedding(s["num_embeddings"], s["dim"])
        elif kind == "transformer_block":
            self.op = nn.TransformerEncoderLayer(s["d_model"], s["heads"], s["ff"], dropout=0.0,
                                                 batch_first=True)

    def extra_repr(self) -> str:
        return f"{self.spec.label}"

    def _check(self, x: torch.Tensor) -> None:
        spec, s = self.spec, self.spec.sizes
        kind = spec.kind
        if kind in ("conv2d", "maxpool2d"):
            _require(x.dim() == 4, spec, -1, tuple(x.shape), "a 4-d (batch, channel, time, freq) tensor")
            if kind == "conv2d":
                _require(x.shape[1] == s["in_channels"], spec, 1, x.shape[1], s["in_channels"])
            else:
                for axis in (2, 3):
                    _require(x.shape[axis] >= s["window"], spec, axis, x.shape[axis], f">= {s['window']}")
        elif kind == "conv1d":
            _require(x.dim() == 3, spec, -1, tuple(x.shape), "a 3-d (batch, channel, length) tensor")
            _require(x.shape[1] == s["in_channels"], spec, 1, x.shape[1], s["in_channels"])
        elif kind == "fc":
            _require(x.dim() >= 1 and x.shape[-1] == s["in_features"], spec, -1,
                     x.shape[-1] if x.dim() else None, s["in_features"])
        elif kind in ("blstm", "lstm", "gru"):
            _require(x.dim() == 3, spec, -1, tuple(x.shape), "a 3-d (batch, time, feature) tensor")
            _require(x.shape[2] == s["input_size"], spec, 2, x.shape[2], s["input_size"])
        elif kind == "embedding":
            if x.dtype not in (torch.int64, torch.int32):
                raise DimensionError(f"{spec.label}: expects integer token ids, got {x.dtype}")
            if x.numel() and (int(x.max()) >= s["num_embeddings"] or int(x.min()) < 0):
                raise DimensionError(f"{spec.label}: axis -1 holds id outside [0, {s['num_embeddings']})")
        elif kind == "transformer_block":
            _require(x.dim() == 3, spec, -1, tuple(x.shape), "a 3-d (batch, time, d_model) tensor")
            _require(x.shape[2] == s["d_model"], spec, 2, x.shape[2], s["d_model"])

    def forward(self, x, state=None, lengths=None, padding_mask=None):
        self._check(x)
        kind = self.spec.kind
        if kind in ("conv2d", "conv1d", "maxpool2d", "fc", "embedding"):
            return self.op(x)
        if kind == "blstm":
            if lengths is not None:
                packed = nn.utils.rnn.pack_padded_sequence(
                    x, torch.as_tensor(lengths, dtype=torch.int64).cpu(), batch_first=True,
                    enforce_sorted=False)
                out, _ = self.op(packed)
                out, _ = nn.utils.rnn.pad_packed_sequence(out, batch_first=True, total_length=x.shape[1])
            else:
                out, _ = self.op(x)
            return self.proj(out)
        if kind in ("lstm", "gru"):
            return self.op(x, state)
        if kind == "transformer_block":
            return self.op(x, src_key_padding_mask=padding_mask)
        if kind == "softmax":
            return torch.softmax(x, dim=-1)
        if kind == "logsoftmax":
            return torch.log_softmax(x, dim=-1)
        if kind == "tanh":
            return torch.tanh(x)
        if kind == "leaky_relu":
            return F.leaky_relu(x, LEAKY_SLOPE)
        raise ContractError(f"unhandled layer kind {kind}")


def make_layer(spec: LayerSpec, dtype: torch.dtype = torch.float32) -> Layer:
    return Layer(spec).to(dtype)


def forward(layer: Layer, x: torch.Tensor, **kwargs) -> torch.Tensor:
    return layer(x, **kwargs)


def backward(loss: torch.Tensor, params: Mapping[str, torch.Tensor] | nn.Module) -> dict[str, torch.Tensor]:
    """Reverse-mode gradients of a scalar loss.

    Parameters with ``requires_grad`` false are left out of the result
    entirely rather than reported as zeros.
    """
    if loss.dim() != 0 and loss.numel() != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {tuple(loss.shape)}")
    if isinstance(params, nn.Module):
        params = dict(params.named_parameters())
    live = {name: p for name, p in params.items() if p.requires_grad}
    if not live:
        return {}
    grads = torch.autograd.grad(loss.reshape(()), list(live.values()), allow_unused=True)
    return {name: (torch.zeros_like(p) if g is None else g) for (name, p), g in zip(live.items(), grads)}


def count_parameters(module: nn.Module, trainable_only: bool = False) -> int:
    return sum(p.numel() for p in module.parameters() if p.requires_grad or not trainable_only)


def init_fan_in_uniform(module: nn.Module, seed: int, gain: float = math.sqrt(6.0)) -> None:
    """Re-draw every parameter from U(-b, b) with b = 1/sqrt(fan_in).

    Convolution and fully connected weights use b = gain/sqrt(fan_in)
    instead, which keeps activation variance roughly constant through
    stacked rectifier layers. Layer norms keep their identity
    initialisation. Parameters are visited in name order so the draw
    depends only on ``seed`` and the architecture.
    """
    gen = torch.Generator().manual_seed(seed)
    skip, scaled = set(), set()
    for mod_name, mod in module.named_modules():
        prefix = f"{mod_name}." if mod_name else ""
        if isinstance(mod, nn.LayerNorm):
            skip.update(prefix + p for p, _ in mod.named_parameters(recurse=False))
        if isinstance(mod, Layer) and mod.spec.kind in ("conv2d", "conv1d", "fc"):
            scaled.add(prefix + "op.weight")
    params = dict(module.named_parameters())
    with torch.no_grad():
        for name in sorted(params):
            if name in skip:
                continue
            p = params[name]
            if p.device.type == "meta":
                continue
            fan_in = math.prod(p.shape[1:]) if p.dim() >= 2 else p.shape[0]
            bound = (gain if name in scaled else 1.0) / math.sqrt(max(fan_in, 1))
            draw = torch.rand(p.shape, generator=gen, dtype=torch.float64)
            p.copy_(((draw * 2 - 1) * bound).to(p.dtype))
