"""Semantic encoder: VGG/BLSTM/FC feature stack, location-aware soft
alignment producing one latent per token, and redundancy removal."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import torch
from torch import nn

from .dims import ModelDims
from .dsp import LOG_FLOOR
from .errors import ConfigError, ContractError
from .nn.layers import LayerSpec, make_layer


def fc(i: int, o: int, name: str = ""):
    return make_layer(LayerSpec("fc", {"in_features": i, "out_features": o}, name))


def act(kind: str):
    return make_layer(LayerSpec(kind))


def pad_spectra(spectra: Sequence[np.ndarray], multiple: int = 4) -> tuple[torch.Tensor, torch.Tensor]:
    """Stack (N_i, 40) arrays into (B, N_pad, 40), padding with log-floor frames.

    N_pad is the longest N_i rounded up to ``multiple``.
    """
    lengths = [len(s) for s in spectra]
    n_pad = multiple * math.ceil(max(lengths) / multiple)
    out = np.full((len(spectra), n_pad, spectra[0].shape[1]), math.log(LOG_FLOOR), dtype=np.float32)
    for i, s in enumerate(spectra):
        out[i, : len(s)] = s
    return torch.from_numpy(out), torch.tensor(lengths, dtype=torch.int64)


def reduced_lengths(lengths: torch.Tensor) -> torch.Tensor:
    return torch.div(lengths + 3, 4, rounding_mode="floor")


class FeatureStack(nn.Module):
    """Spectrum (B, N, 40) -> intermediate features H (B, N/4, fc_width)."""

    def __init__(self, dims: ModelDims):
        super().__init__()
        c1, c2 = dims.vgg_channels
        conv = lambda i, o, n: make_layer(LayerSpec("conv2d", {"in_channels": i, "out_channels": o, "kernel": 3}, n))
        self.vgg = nn.ModuleList([
            conv(1, c1, "vgg1a"), act("leaky_relu"), conv(c1, c1, "vgg1b"), act("leaky_relu"),
            make_layer(LayerSpec("maxpool2d", {"window": 2}, "pool1")),
            conv(c1, c2, "vgg2a"), act("leaky_relu"), conv(c2, c2, "vgg2b"), act("leaky_relu"),
            make_layer(LayerSpec("maxpool2d", {"window": 2}, "pool2")),
        ])
        width = c2 * dims.reduced_mels
        blstm = []
        for i in range(dims.blstm_layers):
            blstm.append(make_layer(LayerSpec("blstm", {"input_size": width, "hidden": dims.blstm_width}, f"blstm{i}")))
            width = dims.blstm_width
        self.blstm = nn.ModuleList(blstm)
        self.fc1 = fc(width, dims.fc_width, "enc_fc1")
        self.fc2 = fc(dims.fc_width, dims.fc_width, "enc_fc2")
        self.lrelu = act("leaky_relu")
        self.register_buffer("feat_mean", torch.zeros(dims.n_mels))
        self.register_buffer("feat_std", torch.ones(dims.n_mels))

    def calibrate(self, spectra: Sequence[np.ndarray]) -> None:
        allf = np.concatenate(spectra, axis=0)
        self.feat_mean.copy_(torch.from_numpy(allf.mean(0)).to(self.feat_mean.dtype))
        self.feat_std.copy_(torch.from_numpy(allf.std(0) + 1e-3).to(self.feat_std.dtype))

    def forward(self, S: torch.Tensor, lengths: torch.Tensor | None = None):
        B, N, _ = S.shape
        if lengths is None:
            lengths = torch.full((B,), N, dtype=torch.int64)
        valid = (torch.arange(N)[None, :] < lengths[:, None]).to(S.dtype)
        x = (S - self.feat_mean) / self.feat_std * valid[..., None]
        x = x.unsqueeze(1)
        for layer in self.vgg:
            x = layer(x)
        x = x.permute(0, 2, 1, 3).reshape(B, x.shape[2], -1)
        h_len = reduced_lengths(lengths)
        for layer in self.blstm:
            x = layer(x, lengths=h_len)
        H = self.lrelu(self.fc2(self.lrelu(self.fc1(x))))
        return H, h_len


@dataclass
class AlignState:
    keys: torch.Tensor
    mask: torch.Tensor
    rnn_state: object
    query_source: torch.Tensor


@dataclass
class AlignedLatent:
    """One utterance's aligner output: Z (q, d), A (q, T), log-posteriors (q, V)."""

    Z: torch.Tensor
    A: torch.Tensor
    step_posteriors: torch.Tensor

    @property
    def q(self) -> int:
        return self.Z.shape[0]

    def tokens(self) -> list[int]:
        return self.step_posteriors.argmax(-1).tolist()


@dataclass
class AlignmentBatch:
    Z: torch.Tensor  # (B, q, d)
    A: torch.Tensor  # (B, q, T)
    step_posteriors: torch.Tensor  # (B, q, V)
    lengths: list[int]

    def utterance(self, i: int) -> AlignedLatent:
        q = self.lengths[i]
        return AlignedLatent(self.Z[i, :q], self.A[i, :q], self.step_posteriors[i, :q])


@dataclass
class LatentSemantic:
    L: torch.Tensor  # (c, d)
    kept_token_ids: list[int]
    kept_indices: list[int] = field(default_factory=list)

    @property
    def c(self) -> int:
        return len(self.kept_token_ids)


class SoftAligner(nn.Module):
    """Location-aware additive attention driving a recurrent cell."""

    def __init__(self, dims: ModelDims, vocab_size: int):
        super().__init__()
        self.vocab_size = vocab_size
        self.special_id = vocab_size - 1
        self.energy_scale = dims.att_energy_scale
        d = dims
        self.key_fc = fc(d.fc_width, d.att_dim, "key_fc")
        self.query_fc = fc(d.latent_width, d.att_dim, "query_fc")
        self.loc_conv = make_layer(LayerSpec("conv1d", {"in_channels": 1, "out_channels": d.loc_filters,
                                                        "kernel": d.loc_kernel, "padding": d.loc_padding}, "loc_conv"))
        self.loc_fc = fc(d.loc_filters, d.att_dim, "loc_fc")
        self.score_fc = fc(d.att_dim, 1, "score_fc")
        if d.recurrent not in ("gru", "lstm"):
            raise ConfigError(f"aligner recurrent cell must be gru or lstm, got {d.recurrent!r}")
        self.rnn = make_layer(LayerSpec(d.recurrent, {"input_size": d.fc_width + d.token_emb,
                                                      "hidden": d.latent_width}, "align_rnn"))
        self.embed = make_layer(LayerSpec("embedding", {"num_embeddings": vocab_size, "dim": d.token_emb}, "token_emb"))
        self.out_fc = fc(d.latent_width, vocab_size, "redundancy_fc")
        self.tanh = act("tanh")
        self.softmax = act("softmax")
        self.logsoftmax = act("logsoftmax")
        self.latent_width = d.latent_width

    def begin_alignment(self, H: torch.Tensor, h_lengths: torch.Tensor):
        B, T, _ = H.shape
        mask = torch.arange(T)[None, :] < h_lengths[:, None]
        h0 = H.new_zeros(1, B, self.latent_width)
        rnn_state = (h0, h0.clone()) if self.rnn.spec.kind == "lstm" else h0
        prev_scores = mask.to(H.dtype) / h_lengths[:, None].to(H.dtype)
        state = AlignState(self.key_fc(H), mask, rnn_state, h0[-1])
        return state, prev_scores

    def step(self, H, state: AlignState | None, prev_token: torch.Tensor, prev_scores: torch.Tensor):
        if state is None:
            raise ContractError("alignment state not initialised; call begin_alignment first")
        query = self.query_fc(state.query_source)
        loc = self.loc_fc(self.loc_conv(prev_scores.unsqueeze(1)).transpose(1, 2))
        e = self.energy_scale * self.score_fc(self.tanh(state.keys + query[:, None, :] + loc)).squeeze(-1)
        e = e.masked_fill(~state.mask, float("-inf"))
        a = self.softmax(e)
        ctx = torch.bmm(a.unsqueeze(1), H).squeeze(1)
        inp = torch.cat([ctx, self.embed(prev_token)], dim=-1).unsqueeze(1)
        out, rnn_state = self.rnn(inp, state=state.rnn_state)
        z = out[:, 0]
        post = self.logsoftmax(self.out_fc(z))
        return z, a, post, AlignState(state.keys, state.mask, rnn_state, z)

    def run(self, H, h_lengths, targets: torch.Tensor | None = None, target_lengths=None,
            cap: int | None = None) -> AlignmentBatch:
        """Teacher-forced when ``targets`` is given, free-running otherwise.

        Free running stops an utterance after its first special token that
        is not at step 0, or after ``cap`` steps (default: its H length).
        """
        B = H.shape[0]
        state, scores = self.begin_alignment(H, h_lengths)
        prev = torch.full((B,), self.special_id, dtype=torch.int64)
        Zs, As, Ps = [], [], []
        if targets is not None:
            lengths = [int(n) for n in (target_lengths if target_lengths is not None
                                         else [targets.shape[1]] * B)]
            for t in range(targets.shape[1]):
                z, scores, post, state = self.step(H, state, prev, scores)
                Zs.append(z), As.append(scores), Ps.append(post)
                prev = targets[:, t]
        else:
            if cap is not None and cap < 1:
                raise ConfigError(f"free-running cap must be >= 1, got {cap}")
            caps = h_lengths.tolist() if cap is None else [cap] * B
            lengths = [0] * B
            done = [False] * B
            t = 0
            while not all(done):
                z, scores, post, state = self.step(H, state, prev, scores)
                Zs.append(z), As.append(scores), Ps.append(post)
                prev = post.argmax(-1)
                toks = prev.tolist()
                t += 1
                for i in range(B):
                    if done[i]:
                        continue
                    lengths[i] = t
                    if (toks[i] == self.special_id and t > 1) or t >= caps[i]:
                        done[i] = True
        if not Zs:
            return AlignmentBatch(H.new_zeros(B, 0, self.latent_width), H.new_zeros(B, 0, H.shape[1]),
                                  H.new_zeros(B, 0, self.vocab_size), [0] * B)
        return AlignmentBatch(torch.stack(Zs, 1), torch.stack(As, 1), torch.stack(Ps, 1), lengths)


class SemanticEncoder(nn.Module):
    def __init__(self, dims: ModelDims, vocab_size: int):
        super().__init__()
        self.features = FeatureStack(dims)
        self.aligner = SoftAligner(dims, vocab_size)

    @property
    def special_id(self) -> int:
        return self.aligner.special_id

    def forward(self, S, lengths=None, targets=None, target_lengths=None, cap=None):
        H, h_len = self.features(S, lengths)
        return H, h_len, self.aligner.run(H, h_len, targets, target_lengths, cap)

    def encode(self, S, lengths=None, cap=None):
        """Free-running transmitter path: ``(H, h_lengths, aligned batch, [LatentSemantic])``."""
        H, h_len, batch = self(S, lengths, cap=cap)
        latents = [remove_redundancy(batch.utterance(i), self.special_id) for i in range(S.shape[0])]
        return H, h_len, batch, latents


def redundancy_keep(tokens: Sequence[int], special_id: int) -> list[int]:
    """Indices that survive redundancy removal.

    A leading special token is dropped, everything from the next special
    token on is cut, and any special left over is dropped.
    """
    start = 1 if tokens and tokens[0] == special_id else 0
    keep = []
    for i in range(start, len(tokens)):
        if tokens[i] == special_id:
            break
        keep.append(i)
    return keep


def remove_redundancy(aligned: AlignedLatent, special_id: int) -> LatentSemantic:
    tokens = aligned.tokens()
    keep = redundancy_keep(tokens, special_id)
    L = aligned.Z[keep] if keep else aligned.Z.new_zeros(0, aligned.Z.shape[-1])
    return LatentSemantic(L, [tokens[i] for i in keep], keep)


def saving_ratio(q: int, c: int) -> float:
    """Fraction of aligned steps not transmitted."""
    return (q - c) / q if q else 0.0
