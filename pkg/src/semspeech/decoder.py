"""Receiver-side token prediction: per-step posteriors, a recurrent language
model used as semantic corrector, and beam search with shallow fusion."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Protocol, Sequence

import numpy as np
import torch
from torch import nn

from .dims import ModelDims
from .errors import ConfigError
from .nn.layers import LayerSpec, make_layer


class SemanticDecoder(nn.Module):
    def __init__(self, dims: ModelDims, vocab_size: int):
        super().__init__()
        self.fc = make_layer(LayerSpec("fc", {"in_features": dims.latent_width, "out_features": vocab_size}, "semdec_fc"))
        self.logsoftmax = make_layer(LayerSpec("logsoftmax"))

    def forward(self, L_hat: torch.Tensor) -> torch.Tensor:
        return self.logsoftmax(self.fc(L_hat))


def step_posteriors(decoder: SemanticDecoder, L_hat: torch.Tensor) -> torch.Tensor:
    return decoder(L_hat)


class CorrectorLM(nn.Module):
    """embedding -> stacked LSTM -> FC + LeakyReLU -> vocabulary log-probs."""

    def __init__(self, dims: ModelDims, vocab_size: int):
        super().__init__()
        self.vocab_size = vocab_size
        self.special_id = vocab_size - 1
        self.embed = make_layer(LayerSpec("embedding", {"num_embeddings": vocab_size, "dim": dims.lm_emb}, "lm_emb"))
        self.rnn = make_layer(LayerSpec("lstm", {"input_size": dims.lm_emb, "hidden": dims.lm_hidden,
                                                 "num_layers": dims.lm_layers}, "lm_lstm"))
        self.fc = make_layer(LayerSpec("fc", {"in_features": dims.lm_hidden, "out_features": dims.lm_fc}, "lm_fc"))
        self.lrelu = make_layer(LayerSpec("leaky_relu"))
        self.out = make_layer(LayerSpec("fc", {"in_features": dims.lm_fc, "out_features": vocab_size}, "lm_out"))
        self.logsoftmax = make_layer(LayerSpec("logsoftmax"))

    def forward(self, tokens: torch.Tensor, state=None):
        """tokens (B, T) -> next-token log-probs (B, T, V) and the final state."""
        out, state = self.rnn(self.embed(tokens), state=state)
        return self.logsoftmax(self.out(self.lrelu(self.fc(out)))), state

    def score(self, state, token: int):
        """Feed one token; returns (log-distribution over the next token, new state)."""
        with torch.no_grad():
            logp, new_state = self(torch.tensor([[token]], dtype=torch.int64), state)
        return logp[0, 0].double().numpy(), new_state


def corrector_score(lm: CorrectorLM, state, token: int):
    return lm.score(state, token)


class PrefixScorer(Protocol):
    special_id: int

    def score(self, state, token: int) -> tuple[np.ndarray, object]: ...


@dataclass
class Hypothesis:
    tokens: list[int]
    log_prob: float
    lm_state: object = None
    lm_dist: np.ndarray | None = field(default=None, repr=False)
    finished: bool = False


def _check_beam_args(k: int, lm_weight: float) -> None:
    if k < 1:
        raise ConfigError(f"beam width must be >= 1, got {k}")
    if not 0.0 <= lm_weight < 1.0:
        raise ConfigError(f"lm_weight must lie in [0, 1), got {lm_weight}")


def beam_search(posteriors, k: int, lm: PrefixScorer | None = None, lm_weight: float = 0.0,
                special_id: int | None = None, length_norm: bool = False) -> list[int]:
    """Best token sequence under decoder scores fused with an optional LM.

    Each step's score is ``(1 - lm_weight) * decoder + lm_weight * lm`` (pure
    decoder score without an LM). The top ``k`` extensions survive each step,
    ties broken by token sequence. A hypothesis that emits the special token
    finishes there. The special token is stripped from the result.
    """
    return beam_search_scored(posteriors, k, lm, lm_weight, special_id, length_norm)[0]


def beam_search_scored(posteriors, k, lm=None, lm_weight=0.0, special_id=None, length_norm=False):
    _check_beam_args(k, lm_weight)
    post = np.asarray(posteriors.detach().double().cpu().numpy() if isinstance(posteriors, torch.Tensor)
                      else posteriors, dtype=np.float64)
    if post.ndim != 2:
        raise ConfigError(f"posteriors must be (steps, vocab), got shape {post.shape}")
    steps, V = post.shape
    if special_id is None:
        special_id = lm.special_id if lm is not None else V - 1
    use_lm = lm is not None and lm_weight > 0.0
    w_dec = 1.0 - lm_weight if use_lm else 1.0

    root = Hypothesis([], 0.0)
    if use_lm:
        root.lm_dist, root.lm_state = lm.score(None, special_id)
    beam, finished = [root], []
    for t in range(steps):
        cands = []
        for hi, h in enumerate(beam):
            step = w_dec * post[t]
            if use_lm:
                step = step + lm_weight * h.lm_dist
            total = h.log_prob + step
            cands.extend((-float(total[v]), tuple(h.tokens) + (v,), hi) for v in range(V))
        cands.sort()
        beam_next = []
        for neg, toks, hi in cands[:k]:
            parent = beam[hi]
            if toks[-1] == special_id:
                finished.append(Hypothesis(list(toks[:-1]), -neg, finished=True))
                continue
            child = Hypothesis(list(toks), -neg)
            if use_lm:
                child.lm_dist, child.lm_state = lm.score(parent.lm_state, toks[-1])
            beam_next.append(child)
        beam = beam_next
        if not beam:
            break

    pool = finished + beam

    def rank(h: Hypothesis):
        s = h.log_prob / (len(h.tokens) + 1) if length_norm else h.log_prob
        return (-s, h.tokens)

    best = min(pool, key=rank)
    return [t for t in best.tokens if t != special_id], best.log_prob


def exhaustive_best(posteriors, lm: PrefixScorer | None = None, lm_weight: float = 0.0,
                    special_id: int | None = None) -> tuple[list[int], float]:
    """Reference maximiser over every token sequence (small lattices only)."""
    post = np.asarray(posteriors, dtype=np.float64)
    steps, V = post.shape
    if special_id is None:
        special_id = lm.special_id if lm is not None else V - 1
    use_lm = lm is not None and lm_weight > 0.0
    w_dec = 1.0 - lm_weight if use_lm else 1.0
    best = (-math.inf, [])

    def walk(t, prefix, score, lm_state, lm_dist):
        nonlocal best
        if t == steps:
            if score > best[0]:
                best = (score, list(prefix))
            return
        for v in range(V):
            s = score + w_dec * post[t, v] + (lm_weight * lm_dist[v] if use_lm else 0.0)
            if v == special_id:
                if s > best[0]:
                    best = (s, list(prefix))
                continue
            nd, ns = lm.score(lm_state, v) if use_lm else (None, None)
            walk(t + 1, prefix + [v], s, ns, nd)

    d0, s0 = lm.score(None, special_id) if use_lm else (None, None)
    walk(0, [], 0.0, s0, d0)
    return best[1], best[0]
