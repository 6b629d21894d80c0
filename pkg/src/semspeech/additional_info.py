"""Transmitter-side speech side information: CTC posteriors over H, Viterbi
token spans, and per-phoneme duration / pitch / power."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import torch
from torch import nn

from .dims import ModelDims
from .dsp import LOG_FLOOR
from .errors import AlignmentError
from .nn.layers import LayerSpec, make_layer
from .tokenizer import Lexicon, Vocabulary, to_phonemes

REDUCTION = 4


def ctc_layout(vocab_size: int) -> dict[str, int]:
    """Class ids of the CTC head for a token vocabulary of ``vocab_size``
    (subwords plus the special token): then blank, then a padding class."""
    return {"special": vocab_size - 1, "blank": vocab_size, "pad": vocab_size + 1, "classes": vocab_size + 2}


class CtcHead(nn.Module):
    def __init__(self, dims: ModelDims, vocab_size: int):
        super().__init__()
        layout = ctc_layout(vocab_size)
        self.blank = layout["blank"]
        self.fc = make_layer(LayerSpec("fc", {"in_features": dims.fc_width, "out_features": layout["classes"]}, "ctc_fc"))
        self.logsoftmax = make_layer(LayerSpec("logsoftmax"))

    def forward(self, H: torch.Tensor) -> torch.Tensor:
        return self.logsoftmax(self.fc(H))


def ctc_posteriors(head: CtcHead, H: torch.Tensor) -> torch.Tensor:
    return head(H)


def _expand(tokens: Sequence[int], blank: int) -> list[int]:
    ext = [blank]
    for t in tokens:
        ext += [t, blank]
    return ext


def min_ctc_frames(tokens: Sequence[int]) -> int:
    return len(tokens) + sum(1 for a, b in zip(tokens, tokens[1:]) if a == b)


def viterbi_align(log_probs, tokens: Sequence[int], blank: int) -> list[tuple[int, int]]:
    """Best CTC path for ``tokens``; returns inclusive ``(start, end)`` frame
    spans, one per token, in order."""
    lp = np.asarray(log_probs.detach().cpu().numpy() if isinstance(log_probs, torch.Tensor) else log_probs,
                    dtype=np.float64)
    T = lp.shape[0]
    tokens = list(tokens)
    if not tokens:
        raise AlignmentError("cannot align an empty token sequence")
    if min_ctc_frames(tokens) > T:
        raise AlignmentError(f"{len(tokens)} tokens need {min_ctc_frames(tokens)} frames, only {T} available")
    ext = _expand(tokens, blank)
    S = len(ext)
    score = np.full((T, S), -np.inf)
    back = np.zeros((T, S), dtype=np.int64)
    score[0, 0] = lp[0, ext[0]]
    score[0, 1] = lp[0, ext[1]]
    for t in range(1, T):
        for s in range(S):
            cands = [(score[t - 1, s], s)]
            if s >= 1:
                cands.append((score[t - 1, s - 1], s - 1))
            if s >= 2 and ext[s] != blank and ext[s] != ext[s - 2]:
                cands.append((score[t - 1, s - 2], s - 2))
            best, arg = max(cands, key=lambda c: (c[0], -c[1]))
            score[t, s] = best + lp[t, ext[s]]
            back[t, s] = arg
    s = S - 1 if score[T - 1, S - 1] >= score[T - 1, S - 2] else S - 2
    states = [s]
    for t in range(T - 1, 0, -1):
        s = back[t, s]
        states.append(s)
    states.reverse()
    spans: list[list[int]] = [[-1, -1] for _ in tokens]
    for t, s in enumerate(states):
        if s % 2 == 1:
            k = s // 2
            if spans[k][0] < 0:
                spans[k][0] = t
            spans[k][1] = t
    return [tuple(sp) for sp in spans]


def path_log_prob(log_probs, tokens, spans, blank) -> float:
    """Log probability of the frame labelling implied by ``spans``."""
    lp = np.asarray(log_probs, dtype=np.float64)
    labels = np.full(lp.shape[0], blank)
    for tok, (a, b) in zip(tokens, spans):
        labels[a:b + 1] = tok
    return float(lp[np.arange(lp.shape[0]), labels].sum())


def cover_frames(spans: Sequence[tuple[int, int]], num_frames: int) -> list[tuple[int, int]]:
    """Stretch spans so they tile ``0 .. num_frames-1``: leading blank frames
    go to the first token, every other gap to the token before it."""
    out = []
    for k, (a, b) in enumerate(spans):
        start = 0 if k == 0 else out[-1][1] + 1
        end = spans[k + 1][0] - 1 if k + 1 < len(spans) else num_frames - 1
        out.append((start, max(end, b)))
    return out


@dataclass
class AdditionalSpeechInfo:
    durations: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.uint16))
    pitch: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.float32))
    power: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.float32))
    speaker_id: int = 0

    def __post_init__(self):
        self.durations = np.asarray(self.durations, dtype=np.uint16)
        self.pitch = np.asarray(self.pitch, dtype=np.float32)
        self.power = np.asarray(self.power, dtype=np.float32)
        if not (len(self.durations) == len(self.pitch) == len(self.power)):
            raise ValueError("duration, pitch and power must have one entry per phoneme")

    def __len__(self):
        return len(self.durations)

    def __eq__(self, other):
        return (isinstance(other, AdditionalSpeechInfo) and self.speaker_id == other.speaker_id
                and np.array_equal(self.durations, other.durations)
                and self.pitch.tobytes() == other.pitch.tobytes()
                and self.power.tobytes() == other.power.tobytes())

    def as_matrix(self) -> np.ndarray:
        """(c', 3) matrix of (duration, pitch, power)."""
        return np.stack([self.durations.astype(np.float64), self.pitch, self.power], axis=1) \
            if len(self) else np.zeros((0, 3))


def build_additional_info(spans: Sequence[tuple[int, int]], f0: np.ndarray, log_power: np.ndarray,
                          lexicon: Lexicon, tokens: Sequence[int], vocab: Vocabulary, speaker_id: int = 0,
                          num_reduced_frames: int | None = None) -> AdditionalSpeechInfo:
    """Per-phoneme (duration, pitch, power) from reduced-frame token spans.

    With ``num_reduced_frames`` the spans are first stretched to tile the
    whole utterance (see :func:`cover_frames`). Each span is scaled by the
    encoder's 4x time reduction and split evenly over the token's phonemes,
    remainder to the last.
    """
    if num_reduced_frames is not None:
        spans = cover_frames(spans, num_reduced_frames)
    phon = to_phonemes(tokens, vocab, lexicon)
    n_frames = len(f0)
    floor = math.log(LOG_FLOOR)
    durs, pitch, power = [], [], []
    for (a, b), (p0, p1) in zip(spans, phon.boundaries):
        start = a * REDUCTION
        total = (b - a + 1) * REDUCTION
        n_ph = p1 - p0
        base, rem = divmod(total, n_ph)
        pos = start
        for j in range(n_ph):
            d = base + (rem if j == n_ph - 1 else 0)
            seg = slice(min(pos, n_frames), min(pos + d, n_frames))
            voiced = f0[seg][f0[seg] > 0]
            pitch.append(float(voiced.mean()) if len(voiced) else 0.0)
            pw = log_power[seg]
            power.append(float(pw.mean()) if len(pw) else floor)
            durs.append(d)
            pos += d
    return AdditionalSpeechInfo(np.array(durs, dtype=np.uint16), np.array(pitch, dtype=np.float32),
                                np.array(power, dtype=np.float32), speaker_id)
