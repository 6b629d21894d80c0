"""End-to-end inference: speech -> tokens over the noisy channel -> text,
and on to a synthesized spectrum with or without the side information."""

from __future__ import annotations

import hashlib
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import torch

from .additional_info import AdditionalSpeechInfo, build_additional_info, viterbi_align
from .channel import ChannelConfig, channel_decode, channel_encode, lossless_side_channel, payload_size, transmit
from .decoder import beam_search
from .encoder import pad_spectra
from .errors import AlignmentError, ConfigError, LexiconError
from .metrics import SYMBOLS_PER_TOKEN, BagOfTokensEmbedder, dtw_mcd, sentence_similarity, wer
from .model import Transceiver
from .reconstructor import synthesize
from .tokenizer import Lexicon, Vocabulary, decode


def utterance_seed(seed: int, *parts) -> int:
    """Per-utterance RNG seed that does not depend on processing order."""
    key = ":".join(str(p) for p in (seed, *parts)).encode("utf-8")
    return int.from_bytes(hashlib.sha256(key).digest()[:8], "little") & ((1 << 63) - 1)


@dataclass
class Transmission:
    utterance_id: str
    reference: str
    hypothesis: str
    tokens: list[int]
    kept_tokens: list[int]  # what the transmitter kept, c = len(kept_tokens)
    q: int
    wer: float
    similarity: float
    info: AdditionalSpeechInfo | None = None

    @property
    def symbols(self) -> int:
        return SYMBOLS_PER_TOKEN * len(self.kept_tokens)


@torch.no_grad()
def encode_batch(model: Transceiver, utts):
    S, lengths = pad_spectra([u.spectrum for u in utts])
    H, h_len, batch, latents = model.encoder.encode(S, lengths)
    return H, h_len, batch, latents


@torch.no_grad()
def transmitter_side_info(model: Transceiver, H_i: torch.Tensor, T: int, utt, kept: Sequence[int],
                          vocab: Vocabulary, lexicon: Lexicon) -> AdditionalSpeechInfo | None:
    """D from the transmitter's own kept tokens; ``None`` when they cannot be
    aligned or pronounced."""
    if not kept:
        return None
    try:
        spans = viterbi_align(model.ctc(H_i[:T]), kept, model.ctc.blank)
        return build_additional_info(spans, utt.f0, utt.log_power, lexicon, kept, vocab, utt.speaker_id, T)
    except (AlignmentError, LexiconError):
        return None


@torch.no_grad()
def _transmit_chunk(model: Transceiver, chunk, vocab: Vocabulary, channel: str, snr_db: float, seed: int,
                    beam: int, lm_weight: float, lexicon: Lexicon | None, embedder) -> list[Transmission]:
    lm = model.lm if lm_weight > 0 else None
    H, h_len, batch, latents = encode_batch(model, chunk)
    out = []
    for j, (u, lat) in enumerate(zip(chunk, latents)):
        if lat.c:
            frame = channel_encode(model.channel_encoder, lat.L)
            gen = torch.Generator().manual_seed(utterance_seed(seed, u.utterance_id, channel, snr_db))
            Y, _ = transmit(frame, ChannelConfig(channel, snr_db), gen)
            post = model.semantic_decoder(channel_decode(model.channel_decoder, Y))
            tokens = beam_search(post, beam, lm, lm_weight, special_id=model.special_id)
        else:
            tokens = []
        hyp = decode(tokens, vocab)
        info = None
        if lexicon is not None:
            info = transmitter_side_info(model, H[j], int(h_len[j]), u, lat.kept_token_ids, vocab, lexicon)
            info = lossless_side_channel(info) if info is not None else None
        sim = sentence_similarity(hyp, u.text, embedder) if hyp and u.text else 0.0
        out.append(Transmission(u.utterance_id, u.text, hyp, tokens, lat.kept_token_ids,
                                batch.lengths[j], wer(u.text, hyp), sim, info))
    return out


def transmit_utterances(model: Transceiver, utts, vocab: Vocabulary, channel: str, snr_db: float,
                        seed: int = 0, beam: int = 5, lm_weight: float = 0.0, lexicon: Lexicon | None = None,
                        batch_size: int = 16, embedder=None, jobs: int = 1) -> list[Transmission]:
    """Speech-to-text over the channel for each utterance, sorted by id.

    Utterances are encoded in fixed chunks of ``batch_size`` in id order and
    every noise draw is seeded per utterance, so ``jobs`` changes only speed.
    """
    model.eval()
    embedder = embedder or BagOfTokensEmbedder(vocab)
    ordered = sorted(utts, key=lambda u: u.utterance_id)
    chunks = [ordered[i:i + batch_size] for i in range(0, len(ordered), batch_size)]

    def run(chunk):
        return _transmit_chunk(model, chunk, vocab, channel, snr_db, seed, beam, lm_weight, lexicon, embedder)

    results = parallel_map(run, chunks, jobs)
    return sorted((t for part in results for t in part), key=lambda t: t.utterance_id)


def parallel_map(fn, items, jobs: int = 1) -> list:
    """``[fn(x) for x in items]`` on up to ``jobs`` threads, results in input order."""
    if jobs < 1:
        raise ConfigError(f"jobs must be >= 1, got {jobs}")
    if jobs == 1 or len(items) < 2:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


def pronounceable(tokens: Sequence[int], vocab: Vocabulary, lexicon: Lexicon, phonemes: set[str]) -> list[str]:
    """Phonemes for ``tokens``, skipping tokens the lexicon or the
    reconstructor's phoneme set cannot cover."""
    out = []
    for t in tokens:
        if t == vocab.special_id:
            continue
        try:
            phones, _ = lexicon.lookup(vocab.entries[t])
        except LexiconError:
            continue
        if all(p in phonemes for p in phones):
            out.extend(phones)
    return out


@dataclass
class Reconstruction:
    utterance_id: str
    spectrum_with_info: np.ndarray
    spectrum_without_info: np.ndarray
    original_frames: int
    frames_with_info: int
    frames_without_info: int
    duration_sum: int
    mcd_with_info: float
    mcd_without_info: float
    payload_bytes: int


@torch.no_grad()
def reconstruct(model: Transceiver, utt, tx: Transmission, vocab: Vocabulary, lexicon: Lexicon,
                mcd_variant: str = "literal") -> Reconstruction:
    tts = model.reconstructor
    phones = pronounceable(tx.tokens, vocab, lexicon, set(tts.phonemes))
    syn = synthesize(tts, phones, info=tx.info, utterance_id=utt.utterance_id)
    with_info = syn.spectrum.frames
    without = synthesize(tts, phones, utterance_id=utt.utterance_id).spectrum.frames
    nan = math.nan
    return Reconstruction(
        utt.utterance_id, with_info, without, utt.num_frames, len(with_info), len(without),
        int(syn.durations.sum()), dtw_mcd(utt.spectrum, with_info, mcd_variant) if len(with_info) else nan,
        dtw_mcd(utt.spectrum, without, mcd_variant) if len(without) else nan,
        payload_size(len(tx.info)) if tx.info is not None else 0)


def summarize(txs: Sequence[Transmission]) -> dict:
    return {
        "wer": float(np.mean([t.wer for t in txs])),
        "similarity": float(np.mean([t.similarity for t in txs])),
        "symbols_per_sentence": float(np.mean([t.symbols for t in txs])),
    }
