"""Losses and the training loops: joint CTC/cross-entropy on the encoder,
then channel codec and decoder under random-SNR noise with the encoder
frozen, plus the corrector LM and the speech reconstructor."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from .additional_info import AdditionalSpeechInfo, build_additional_info, min_ctc_frames, viterbi_align
from .channel import apply_channel, normalize_power
from .encoder import pad_spectra
from .errors import ConfigError, ContractError, LossError, TrainingError
from .model import Transceiver, save_transceiver
from .nn.layers import backward
from .nn.optim import Adadelta, AdadeltaConfig
from .tokenizer import Lexicon, Vocabulary, encode, to_phonemes

_NEG = -1e30  # stands in for log 0 so that empty sums keep finite gradients


# losses ---------------------------------------------------------------------

def ctc_loss_batch(log_probs: torch.Tensor, input_lengths, targets: Sequence[Sequence[int]], blank: int) -> torch.Tensor:
    """Per-utterance negative log of the summed probability of every CTC
    alignment of ``targets[b]`` to the first ``input_lengths[b]`` frames."""
    B, T, _ = log_probs.shape
    in_len = torch.as_tensor(input_lengths, dtype=torch.int64)
    for b, tgt in enumerate(targets):
        if min_ctc_frames(tgt) > int(in_len[b]):
            raise LossError(f"target of {len(tgt)} tokens cannot fit in {int(in_len[b])} frames")
    S = 2 * max((len(t) for t in targets), default=0) + 1
    ext = torch.full((B, S), blank, dtype=torch.int64)
    for b, tgt in enumerate(targets):
        if len(tgt):
            ext[b, 1:2 * len(tgt):2] = torch.as_tensor(list(tgt), dtype=torch.int64)
    ext_len = torch.tensor([2 * len(t) + 1 for t in targets])
    skip = torch.zeros(B, S, dtype=torch.bool)
    if S > 2:
        skip[:, 2:] = (ext[:, 2:] != blank) & (ext[:, 2:] != ext[:, :-2])
    lp = log_probs.gather(2, ext[:, None, :].expand(B, T, S))
    neg = lp.new_full((B, 1), _NEG)
    alpha = torch.cat([lp[:, 0, :1], lp[:, 0, 1:2], lp.new_full((B, max(S - 2, 0)), _NEG)], dim=1)[:, :S]
    for t in range(1, T):
        one = torch.cat([neg, alpha[:, :-1]], dim=1)
        two = torch.cat([neg, neg, alpha[:, :-2]], dim=1)[:, :S].masked_fill(~skip, _NEG)
        new = torch.logsumexp(torch.stack([alpha, one, two]), dim=0) + lp[:, t]
        alpha = torch.where((t < in_len)[:, None], new, alpha)
    last = alpha.gather(1, (ext_len - 1)[:, None]).squeeze(1)
    prev = alpha.gather(1, (ext_len - 2).clamp_min(0)[:, None]).squeeze(1)
    prev = torch.where(ext_len > 1, prev, torch.full_like(prev, _NEG))
    return -torch.logaddexp(last, prev)


def ctc_loss(log_probs: torch.Tensor, targets: Sequence[int], blank: int) -> torch.Tensor:
    """Single utterance: ``log_probs`` is (T, classes)."""
    return ctc_loss_batch(log_probs[None], [log_probs.shape[0]], [list(targets)], blank)[0]


def ce_loss(step_log_posteriors: torch.Tensor, targets, mask: torch.Tensor | None = None) -> torch.Tensor:
    """Mean over (unmasked) steps of -log p(target)."""
    targets = torch.as_tensor(targets, dtype=torch.int64)
    if step_log_posteriors.shape[:-1] != targets.shape:
        raise ContractError(f"{tuple(step_log_posteriors.shape[:-1])} posterior steps for targets of shape "
                            f"{tuple(targets.shape)}")
    nll = -step_log_posteriors.gather(-1, targets[..., None]).squeeze(-1)
    if mask is None:
        return nll.mean()
    m = mask.to(nll.dtype)
    return (nll * m).sum() / m.sum().clamp_min(1)


def combined_loss(ctc, ce, lam: float):
    if not 0.0 <= lam <= 1.0:
        raise ConfigError(f"CTC weight must lie in [0, 1], got {lam}")
    return lam * ctc + (1 - lam) * ce


def mse_loss(S: torch.Tensor, S_hat: torch.Tensor, mask: torch.Tensor | None = None) -> torch.Tensor:
    """Sum of squared differences (over unmasked frames when ``mask`` is given)."""
    if S.shape != S_hat.shape:
        raise ContractError(f"spectrum shapes differ: {tuple(S.shape)} vs {tuple(S_hat.shape)}")
    sq = (S_hat - S) ** 2
    if mask is not None:
        sq = sq * mask[..., None].to(sq.dtype)
    return sq.sum()


# configuration and logging ----------------------------------------------------

@dataclass(frozen=True)
class TrainingConfig:
    lambda_ctc: float = 0.2
    batch_size: int = 8  # stage 1
    stage2_batch_size: int = 8
    lm_batch_size: int = 64
    reconstructor_batch_size: int = 8
    stage1_epochs: int = 30
    stage2_epochs: int = 10
    lm_epochs: int = 10
    reconstructor_epochs: int = 40
    snr_low: float = 5.0
    snr_high: float = 10.0
    channel: str = "awgn"
    seed: int = 0
    rho: float = 0.95
    eps: float = 1e-6
    lr: float = 1.0
    teacher_forcing: bool = True
    sampling_decay: float = 0.0  # scheduled sampling, off unless set

    def __post_init__(self):
        if not 0.0 <= self.lambda_ctc <= 1.0:
            raise ConfigError(f"lambda_ctc must lie in [0, 1], got {self.lambda_ctc}")
        if self.snr_low > self.snr_high:
            raise ConfigError(f"snr_low {self.snr_low} exceeds snr_high {self.snr_high}")
        for name in ("batch_size", "stage2_batch_size", "lm_batch_size", "reconstructor_batch_size"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        for name in ("stage1_epochs", "stage2_epochs", "lm_epochs", "reconstructor_epochs"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        if self.channel not in ("awgn", "rayleigh"):
            raise ConfigError(f"channel must be awgn or rayleigh, got {self.channel!r}")

    @property
    def optimizer(self) -> AdadeltaConfig:
        return AdadeltaConfig(self.rho, self.eps, self.lr)


class TrainLog:
    """One JSON object per line. Holds no wall-clock values, so reruns
    produce identical files."""

    def __init__(self, path=None):
        self.path = Path(path) if path else None
        self.records: list[dict] = []
        if self.path:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self.path.write_text("")

    def write(self, **record) -> None:
        self.records.append(record)
        if self.path:
            with open(self.path, "a", encoding="utf-8") as fh:
                fh.write(json.dumps(record, sort_keys=True) + "\n")


def _batches(n: int, batch_size: int, lengths: Sequence[int], rng: np.random.Generator) -> list[list[int]]:
    order = sorted(range(n), key=lambda i: (lengths[i], i))
    chunks = [order[i:i + batch_size] for i in range(0, n, batch_size)]
    return [chunks[i] for i in rng.permutation(len(chunks))]


def _checkpoint(ckpt_dir, name, model, vocab, meta) -> Path | None:
    if ckpt_dir is None:
        return None
    path = Path(ckpt_dir) / name
    path.parent.mkdir(parents=True, exist_ok=True)
    save_transceiver(path, model, vocab, meta)
    return path


def _check_finite(loss: torch.Tensor, stage: str, last_ckpt) -> None:
    if not torch.isfinite(loss):
        raise TrainingError(f"{stage}: loss became non-finite; last good checkpoint {last_ckpt}", last_ckpt)


def _optimize(opt: Adadelta, loss: torch.Tensor, stage: str, last_ckpt) -> None:
    _check_finite(loss, stage, last_ckpt)
    try:
        opt.step(backward(loss, opt.params))
    except TrainingError as exc:
        raise TrainingError(f"{stage}: {exc}; last good checkpoint {last_ckpt}", last_ckpt) from exc


# stage 1 --------------------------------------------------------------------

STAGE1_PARTS = ("encoder", "ctc", "semantic_decoder")


def stage1_losses(model: Transceiver, utts, lam: float, sampling_prob: float = 0.0, generator=None):
    """``(total, ctc, ce_align, ce_decoder, step_posteriors, targets, mask)`` for one batch."""
    special = model.special_id
    S, lengths = pad_spectra([u.spectrum for u in utts])
    framed = [[special, *u.tokens, special] for u in utts]
    q = max(len(f) for f in framed)
    targets = torch.full((len(utts), q), special, dtype=torch.int64)
    mask = torch.zeros(len(utts), q, dtype=torch.bool)
    for i, f in enumerate(framed):
        targets[i, :len(f)] = torch.tensor(f)
        mask[i, :len(f)] = True
    H, h_len = model.encoder.features(S, lengths)
    batch = model.encoder.aligner.run(H, h_len, targets, [len(f) for f in framed])
    ce_align = ce_loss(batch.step_posteriors, targets, mask)
    # the semantic decoder sees only the latents of real tokens
    tok_mask = mask.clone()
    tok_mask[:, 0] = False
    for i, f in enumerate(framed):
        tok_mask[i, len(f) - 1] = False
    ce_dec = ce_loss(model.semantic_decoder(batch.Z), targets, tok_mask)
    ctc = ctc_loss_batch(model.ctc(H), h_len, [u.tokens for u in utts], model.ctc.blank).mean()
    total = combined_loss(ctc, 0.5 * (ce_align + ce_dec), lam)
    return total, ctc, ce_align, ce_dec, batch.step_posteriors, targets, mask


@torch.no_grad()
def teacher_forced_accuracy(model: Transceiver, utts, batch_size: int = 16) -> float:
    correct = total = 0
    for i in range(0, len(utts), batch_size):
        *_, post, targets, mask = stage1_losses(model, utts[i:i + batch_size], 0.0)
        hit = (post.argmax(-1) == targets) & mask
        correct += int(hit.sum())
        total += int(mask.sum())
    return correct / max(total, 1)


def train_stage1(model: Transceiver, utts, cfg: TrainingConfig, vocab: Vocabulary, ckpt_dir=None,
                 log: TrainLog | None = None) -> list[float]:
    """Joint CTC + cross-entropy training of encoder, CTC head and semantic
    decoder, channel left out. Returns the mean loss of each epoch."""
    log = log or TrainLog()
    rng = np.random.default_rng(cfg.seed)
    torch.manual_seed(cfg.seed)
    model.train()
    opt = Adadelta(model.named_part_parameters(*STAGE1_PARTS), cfg.optimizer)
    last = _checkpoint(ckpt_dir, "stage1_epoch000.ssck", model, vocab, {"stage": 1, "epoch": 0})
    history, step = [], 0
    for epoch in range(1, cfg.stage1_epochs + 1):
        losses = []
        for idx in _batches(len(utts), cfg.batch_size, [u.num_frames for u in utts], rng):
            total, ctc, ce_a, ce_d, *_ = stage1_losses(model, [utts[i] for i in idx], cfg.lambda_ctc)
            _optimize(opt, total, "stage 1", last)
            step += 1
            losses.append(total.item())
            log.write(step=step, stage=1, epoch=epoch, loss=total.item(), ctc=ctc.item(),
                      ce_align=ce_a.item(), ce_decoder=ce_d.item(), snr_db=None, seed=cfg.seed)
        history.append(float(np.mean(losses)))
        last = _checkpoint(ckpt_dir, f"stage1_epoch{epoch:03d}.ssck", model, vocab, {"stage": 1, "epoch": epoch}) or last
    model.eval()
    return history


# stage 2 --------------------------------------------------------------------

STAGE2_PARTS = ("channel_encoder", "channel_decoder", "semantic_decoder")


@torch.no_grad()
def teacher_latents(model: Transceiver, utts, batch_size: int = 16) -> list[torch.Tensor]:
    """Teacher-forced aligner latents with the framing special tokens removed."""
    out = []
    for i in range(0, len(utts), batch_size):
        chunk = utts[i:i + batch_size]
        S, lengths = pad_spectra([u.spectrum for u in chunk])
        framed = [[model.special_id, *u.tokens, model.special_id] for u in chunk]
        q = max(len(f) for f in framed)
        targets = torch.full((len(chunk), q), model.special_id, dtype=torch.int64)
        for j, f in enumerate(framed):
            targets[j, :len(f)] = torch.tensor(f)
        _, _, batch = model.encoder(S, lengths, targets, [len(f) for f in framed])
        out.extend(batch.Z[j, 1:1 + len(u.tokens)].clone() for j, u in enumerate(chunk))
    return out


def pad_latents(latents: Sequence[torch.Tensor]):
    c = max(max(len(L) for L in latents), 1)
    d = latents[0].shape[-1]
    out = torch.zeros(len(latents), c, d)
    mask = torch.zeros(len(latents), c, dtype=torch.bool)
    for i, L in enumerate(latents):
        out[i, :len(L)] = L
        mask[i, :len(L)] = True
    return out, mask


def codec_loss(model: Transceiver, latents, tokens, kind: str, snr_db: float, generator: torch.Generator):
    L, mask = pad_latents(latents)
    X, _ = normalize_power(model.channel_encoder(L), mask)
    Y = apply_channel(X, kind, snr_db, generator, mask)
    post = model.semantic_decoder(model.channel_decoder(Y))
    targets = torch.zeros(mask.shape, dtype=torch.int64)
    for i, t in enumerate(tokens):
        targets[i, :len(t)] = torch.tensor(t, dtype=torch.int64)
    return ce_loss(post, targets, mask)


def freeze(model: Transceiver, parts=("encoder", "ctc")) -> None:
    for part in parts:
        for p in getattr(model, part).parameters():
            p.requires_grad_(False)


def train_stage2(model: Transceiver, utts, cfg: TrainingConfig, vocab: Vocabulary, ckpt_dir=None,
                 log: TrainLog | None = None) -> list[dict]:
    """Channel encoder/decoder and semantic decoder under a fresh uniform
    random SNR each epoch; encoder and CTC head frozen."""
    log = log or TrainLog()
    rng = np.random.default_rng(cfg.seed + 1)
    gen = torch.Generator().manual_seed(cfg.seed + 1)
    freeze(model)
    model.eval()
    latents = teacher_latents(model, utts)
    tokens = [u.tokens for u in utts]
    opt = Adadelta(model.named_part_parameters(*STAGE2_PARTS), cfg.optimizer)
    last = _checkpoint(ckpt_dir, "stage2_epoch000.ssck", model, vocab, {"stage": 2, "epoch": 0})
    history, step = [], 0
    for epoch in range(1, cfg.stage2_epochs + 1):
        snr = float(rng.uniform(cfg.snr_low, cfg.snr_high))
        losses = []
        for idx in _batches(len(utts), cfg.stage2_batch_size, [len(t) for t in tokens], rng):
            loss = codec_loss(model, [latents[i] for i in idx], [tokens[i] for i in idx], cfg.channel, snr, gen)
            _optimize(opt, loss, "stage 2", last)
            step += 1
            losses.append(loss.item())
            log.write(step=step, stage=2, epoch=epoch, loss=loss.item(), snr_db=snr, seed=cfg.seed)
        history.append({"epoch": epoch, "snr_db": snr, "loss": float(np.mean(losses))})
        last = _checkpoint(ckpt_dir, f"stage2_epoch{epoch:03d}.ssck", model, vocab, {"stage": 2, "epoch": epoch}) or last
    return history


# corrector language model ---------------------------------------------------------

def lm_loss(model: Transceiver, sequences: Sequence[Sequence[int]]) -> torch.Tensor:
    special = model.special_id
    n = max(len(s) for s in sequences) + 1
    inp = torch.full((len(sequences), n), special, dtype=torch.int64)
    tgt = torch.full((len(sequences), n), special, dtype=torch.int64)
    mask = torch.zeros(len(sequences), n, dtype=torch.bool)
    for i, s in enumerate(sequences):
        inp[i, 1:len(s) + 1] = torch.tensor(s, dtype=torch.int64)
        tgt[i, :len(s)] = torch.tensor(s, dtype=torch.int64)
        mask[i, :len(s) + 1] = True
    logp, _ = model.lm(inp)
    return ce_loss(logp, tgt, mask)


def train_corrector_lm(model: Transceiver, texts: Sequence[str], vocab: Vocabulary, cfg: TrainingConfig,
                       log: TrainLog | None = None) -> list[float]:
    log = log or TrainLog()
    rng = np.random.default_rng(cfg.seed + 2)
    seqs = [encode(t, vocab) for t in texts if t.strip()]
    opt = Adadelta(model.named_part_parameters("lm"), cfg.optimizer)
    history, step = [], 0
    for epoch in range(1, cfg.lm_epochs + 1):
        losses = []
        for idx in _batches(len(seqs), cfg.lm_batch_size, [len(s) for s in seqs], rng):
            loss = lm_loss(model, [seqs[i] for i in idx])
            _optimize(opt, loss, "corrector LM", None)
            step += 1
            losses.append(loss.item())
            log.write(step=step, stage="lm", epoch=epoch, loss=loss.item(), snr_db=None, seed=cfg.seed)
        history.append(float(np.mean(losses)))
    return history


# speech reconstructor ------------------------------------------------------------

DURATION_SCALE = 8.0  # frames; keeps the duration term on the scale of the others


@dataclass
class TtsExample:
    utterance_id: str
    phonemes: list[str]
    info: AdditionalSpeechInfo
    spectrum: np.ndarray  # (N, 40) original frames


@torch.no_grad()
def side_info_for(model: Transceiver, utts, tokens_list, vocab: Vocabulary, lexicon: Lexicon,
                  batch_size: int = 16) -> list[AdditionalSpeechInfo]:
    """D for each utterance from the CTC head's best path over ``tokens_list``."""
    out = []
    for i in range(0, len(utts), batch_size):
        chunk = utts[i:i + batch_size]
        S, lengths = pad_spectra([u.spectrum for u in chunk])
        H, h_len = model.encoder.features(S, lengths)
        lp = model.ctc(H)
        for j, u in enumerate(chunk):
            toks = tokens_list[i + j]
            T = int(h_len[j])
            spans = viterbi_align(lp[j, :T], toks, model.ctc.blank)
            out.append(build_additional_info(spans, u.f0, u.log_power, lexicon, toks, vocab, u.speaker_id, T))
    return out


def tts_examples(model: Transceiver, utts, vocab: Vocabulary, lexicon: Lexicon) -> list[TtsExample]:
    infos = side_info_for(model, utts, [u.tokens for u in utts], vocab, lexicon)
    return [TtsExample(u.utterance_id, to_phonemes(u.tokens, vocab, lexicon).phonemes, D, u.spectrum)
            for u, D in zip(utts, infos)]


def reconstructor_loss(model: Transceiver, batch: Sequence[TtsExample]):
    """``(total, mse_sum, mse_mean, variance_loss)``; the spectrum loss covers
    the original frames only, the synthesized tail past them is ignored."""
    tts = model.reconstructor
    B = len(batch)
    P = max(len(e.phonemes) for e in batch)
    ids = torch.zeros(B, P, dtype=torch.int64)
    dur = torch.ones(B, P, dtype=torch.int64)
    pitch = torch.zeros(B, P)
    power = torch.zeros(B, P)
    for i, e in enumerate(batch):
        n = len(e.phonemes)
        ids[i, :n] = torch.tensor(tts.phoneme_ids(e.phonemes))
        dur[i, :n] = torch.from_numpy(e.info.durations.astype(np.int64))
        pitch[i, :n] = torch.from_numpy(e.info.pitch)
        power[i, :n] = torch.from_numpy(e.info.power)
    lengths = torch.tensor([len(e.phonemes) for e in batch])
    speakers = torch.tensor([e.info.speaker_id for e in batch])
    pred, fmask, enc = tts(ids, lengths, speakers, dur, pitch, power)
    target = torch.zeros_like(pred)
    smask = torch.zeros(fmask.shape, dtype=torch.bool)
    for i, e in enumerate(batch):
        n = min(len(e.spectrum), pred.shape[1])
        target[i, :n] = torch.from_numpy(e.spectrum[:n]).to(pred.dtype)
        smask[i, :n] = True
    mse = mse_loss(target, pred, smask)
    mse_mean = mse / (smask.sum() * pred.shape[-1])
    m = enc.mask.to(pred.dtype)
    cnt = m.sum()
    # durations are fit in frames, not log frames, so the head tracks the mean
    var = ((((enc.duration - dur.to(pred.dtype)) / DURATION_SCALE) ** 2 * m).sum()
           + ((enc.pitch - tts.normalize(pitch, "pitch")) ** 2 * m).sum()
           + ((enc.power - tts.normalize(power, "power")) ** 2 * m).sum()) / cnt
    return mse_mean + var, mse, mse_mean, var


def calibrate_reconstructor(model: Transceiver, examples: Sequence[TtsExample]) -> None:
    pitch = np.concatenate([e.info.pitch for e in examples])
    power = np.concatenate([e.info.power for e in examples])
    model.reconstructor.calibrate(pitch, power)


def train_reconstructor(model: Transceiver, examples: Sequence[TtsExample], cfg: TrainingConfig,
                        epochs: int | None = None, log: TrainLog | None = None) -> list[float]:
    log = log or TrainLog()
    rng = np.random.default_rng(cfg.seed + 3)
    epochs = cfg.reconstructor_epochs if epochs is None else epochs
    model.reconstructor.train()
    opt = Adadelta(model.named_part_parameters("reconstructor"), cfg.optimizer)
    history, step = [], 0
    for epoch in range(1, epochs + 1):
        losses = []
        for idx in _batches(len(examples), cfg.reconstructor_batch_size, [len(e.spectrum) for e in examples], rng):
            total, mse, mse_mean, var = reconstructor_loss(model, [examples[i] for i in idx])
            _optimize(opt, total, "reconstructor", None)
            step += 1
            losses.append(mse_mean.item())
            log.write(step=step, stage="reconstructor", epoch=epoch, loss=total.item(), mse=mse.item(),
                      mse_mean=mse_mean.item(), variance=var.item(), snr_db=None, seed=cfg.seed)
        history.append(float(np.mean(losses)))
    model.reconstructor.eval()
    return history
