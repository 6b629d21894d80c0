"""Evaluation metrics: WER, embedding cosine similarity, DTW-aligned MCD and
transmitted-symbol accounting."""

from __future__ import annotations

import math
import zlib
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, Protocol, Sequence

import numpy as np

from .errors import InputError, MetricError

# per-sentence symbol counts of the comparison systems, quoted as published
BASELINE_SYMBOLS = {"DeepSC-SR": 7143, "SE-DeepSC": 2225, "DeepSC-S": 655360}
SYMBOLS_PER_TOKEN = 32


@dataclass(frozen=True)
class EditCounts:
    substitutions: int
    deletions: int
    insertions: int
    reference_length: int

    @property
    def errors(self) -> int:
        return self.substitutions + self.deletions + self.insertions

    @property
    def wer(self) -> float:
        return self.errors / self.reference_length


def edit_counts(reference: Sequence[str], hypothesis: Sequence[str]) -> EditCounts:
    """Minimum-edit word alignment with unit costs.

    Among equal-cost alignments a substitution is preferred over a
    deletion+insertion pair.
    """
    n, m = len(reference), len(hypothesis)
    # cost, then (S, D, I) used only to break ties
    cost = np.zeros((n + 1, m + 1), dtype=np.int64)
    ops = np.zeros((n + 1, m + 1), dtype=np.int8)  # 0 match/sub, 1 deletion, 2 insertion
    cost[:, 0] = np.arange(n + 1)
    cost[0, :] = np.arange(m + 1)
    ops[1:, 0] = 1
    ops[0, 1:] = 2
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            diag = cost[i - 1, j - 1] + (reference[i - 1] != hypothesis[j - 1])
            dele = cost[i - 1, j] + 1
            ins = cost[i, j - 1] + 1
            best = min(diag, dele, ins)
            cost[i, j] = best
            ops[i, j] = 0 if diag == best else (1 if dele == best else 2)
    s = d = ins_ = 0
    i, j = n, m
    while i > 0 or j > 0:
        op = ops[i, j]
        if op == 0:
            s += reference[i - 1] != hypothesis[j - 1]
            i, j = i - 1, j - 1
        elif op == 1:
            d += 1
            i -= 1
        else:
            ins_ += 1
            j -= 1
    return EditCounts(int(s), d, ins_, n)


def wer(reference, hypothesis) -> float:
    """(S + D + I) / N over whitespace words; may exceed 1."""
    ref = reference.split() if isinstance(reference, str) else list(reference)
    hyp = hypothesis.split() if isinstance(hypothesis, str) else list(hypothesis)
    if not ref:
        raise InputError("WER needs a non-empty reference")
    return edit_counts(ref, hyp).wer


def corpus_wer(pairs: Sequence[tuple[str, str]]) -> float:
    """Total edits over total reference words."""
    errors = words = 0
    for ref, hyp in pairs:
        c = edit_counts(ref.split(), hyp.split())
        errors += c.errors
        words += c.reference_length
    if not words:
        raise InputError("WER needs a non-empty reference")
    return errors / words


class SentenceEmbedder(Protocol):
    def __call__(self, text: str) -> np.ndarray: ...


class BagOfTokensEmbedder:
    """Count vector over subword ids, or over hashed whitespace tokens when no
    vocabulary is given. Deterministic; a stand-in for a pretrained encoder."""

    def __init__(self, vocab=None, buckets: int = 1 << 16):
        self.vocab = vocab
        self.buckets = buckets

    def __call__(self, text: str) -> np.ndarray:
        if self.vocab is not None:
            from .tokenizer import encode
            v = np.zeros(self.vocab.size)
            for t in encode(text, self.vocab):
                v[t] += 1
            return v
        v = np.zeros(self.buckets)
        for tok, count in Counter(text.split()).items():
            v[zlib.crc32(tok.encode("utf-8")) % self.buckets] += count
        return v


def sentence_similarity(predicted: str, reference: str, embedder: SentenceEmbedder) -> float:
    if not predicted or not reference:
        raise InputError("sentence similarity needs two non-empty texts")
    a = np.asarray(embedder(predicted), dtype=np.float64)
    b = np.asarray(embedder(reference), dtype=np.float64)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise MetricError("embedder returned a zero-norm vector")
    return float(np.clip(a @ b / (na * nb), -1.0, 1.0))


def dtw(cost: np.ndarray) -> tuple[float, list[tuple[int, int]]]:
    """Minimum cumulative cost monotone path from (0, 0) to (n-1, m-1) with
    steps (1,0), (0,1), (1,1). Returns ``(total_cost, path)``."""
    n, m = cost.shape
    acc = np.full((n + 1, m + 1), np.inf)
    acc[0, 0] = 0.0
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            acc[i, j] = cost[i - 1, j - 1] + min(acc[i - 1, j - 1], acc[i - 1, j], acc[i, j - 1])
    path = [(n - 1, m - 1)]
    i, j = n, m
    while (i, j) != (1, 1):
        moves = [(acc[i - 1, j - 1], i - 1, j - 1), (acc[i - 1, j], i - 1, j), (acc[i, j - 1], i, j - 1)]
        _, i, j = min(moves, key=lambda x: x[0])
        path.append((i - 1, j - 1))
    path.reverse()
    return float(acc[n, m]), path


MCD_SCALE = 10.0 / math.log(10.0)


def dtw_mcd(S: np.ndarray, S_hat: np.ndarray, variant: str = "literal") -> float:
    """Spectral distance after DTW alignment.

    ``literal``: 10/ln10 * sqrt(2 * sum over aligned pairs of ||S_t - S^_t||).
    ``classical``: the usual per-frame 10/ln10 * sqrt(2 * ||S_t - S^_t||^2),
    averaged over the aligned pairs.
    """
    S = np.asarray(S, dtype=np.float64)
    S_hat = np.asarray(S_hat, dtype=np.float64)
    if S.ndim != 2 or S_hat.ndim != 2 or not len(S) or not len(S_hat):
        raise InputError("MCD needs two non-empty (frames, coefficients) sequences")
    if S.shape[1] != S_hat.shape[1]:
        raise InputError(f"coefficient count mismatch: {S.shape[1]} vs {S_hat.shape[1]}")
    dist = np.linalg.norm(S[:, None, :] - S_hat[None, :, :], axis=-1)
    _, path = dtw(dist)
    d = np.array([dist[i, j] for i, j in path])
    if variant == "literal":
        return MCD_SCALE * math.sqrt(2.0 * d.sum())
    if variant == "classical":
        return float(np.mean(MCD_SCALE * np.sqrt(2.0 * d ** 2)))
    raise InputError(f"unknown MCD variant {variant!r}")


@dataclass
class EfficiencyReport:
    symbols: list[int]
    side_payload_bytes: list[int] = field(default_factory=list)

    @property
    def mean_symbols(self) -> float:
        return float(np.mean(self.symbols)) if self.symbols else 0.0

    def ratio_to(self, baseline: str) -> float:
        return self.mean_symbols / BASELINE_SYMBOLS[baseline]

    def as_dict(self) -> dict:
        return {
            "utterances": len(self.symbols),
            "mean_symbols_per_sentence": self.mean_symbols,
            "side_payload_bytes_mean": float(np.mean(self.side_payload_bytes)) if self.side_payload_bytes else 0.0,
            "ratios": {name: self.ratio_to(name) for name in BASELINE_SYMBOLS},
        }


def efficiency_report(kept_counts: Sequence[int], side_payload_bytes: Sequence[int] = (),
                      symbols_per_token: int = SYMBOLS_PER_TOKEN) -> EfficiencyReport:
    return EfficiencyReport([symbols_per_token * int(c) for c in kept_counts], list(side_payload_bytes))
