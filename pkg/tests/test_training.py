import math

import numpy as np
import pytest
import torch

from semspeech.data import Utterance
from semspeech.dims import ModelDims
from semspeech.dsp import AudioClip, compute_fbank
from semspeech.errors import ConfigError, LossError
from semspeech.model import build_transceiver
from semspeech.tokenizer import build_vocab, encode
from semspeech.toy import WORDS, synthesize_text, toy_lexicon
from semspeech.training import (TrainingConfig, TrainLog, ce_loss, combined_loss, ctc_loss, ctc_loss_batch,
                                mse_loss, teacher_forced_accuracy, train_stage1, train_stage2)

from oracles import ctc_enumerate

TOY = ModelDims.toy()


# losses -------------------------------------------------------------------------------

def test_ctc_two_frame_example():
    lp = torch.log(torch.full((2, 2), 0.5, dtype=torch.float64))
    assert ctc_loss(lp, [0], 1).item() == pytest.approx(-math.log(0.75), abs=1e-12)


def test_ctc_certain_alignment_costs_nothing():
    lp = torch.log(torch.tensor([[1.0, 1e-300], [1.0, 1e-300], [1e-300, 1.0]], dtype=torch.float64))
    assert ctc_loss(lp, [0], 1).item() == pytest.approx(0.0, abs=1e-12)


def test_ctc_matches_enumeration():
    rng = np.random.default_rng(0)
    for _ in range(60):
        C = int(rng.integers(2, 4))
        T = int(rng.integers(1, 6))
        tgt = [int(t) for t in rng.integers(0, C - 1, size=int(rng.integers(0, 3)))]
        logits = rng.normal(size=(T, C)) * 2
        lp = logits - np.log(np.exp(logits).sum(1, keepdims=True))
        total, _ = ctc_enumerate(lp, tgt, C - 1)
        if total == 0.0:
            with pytest.raises(LossError):
                ctc_loss(torch.from_numpy(lp), tgt, C - 1)
            continue
        assert ctc_loss(torch.from_numpy(lp), tgt, C - 1).item() == pytest.approx(-math.log(total), abs=1e-9)


def test_ctc_batch_respects_lengths():
    rng = np.random.default_rng(1)
    lp = torch.log_softmax(torch.from_numpy(rng.normal(size=(2, 5, 3))), -1)
    both = ctc_loss_batch(lp, [5, 3], [[0, 1], [1]], 2)
    assert both[0].item() == pytest.approx(ctc_loss(lp[0], [0, 1], 2).item(), abs=1e-12)
    assert both[1].item() == pytest.approx(ctc_loss(lp[1, :3], [1], 2).item(), abs=1e-12)


def test_ce_examples():
    post = torch.log(torch.tensor([[1 / 1001, 1000 / 1001]], dtype=torch.float64))
    assert ce_loss(post, [0]).item() == pytest.approx(math.log(1001), abs=1e-12)
    post = torch.log(torch.tensor([[0.5, 0.5], [0.25, 0.75]], dtype=torch.float64))
    assert ce_loss(post, [1, 0]).item() == pytest.approx((math.log(2) + math.log(4)) / 2, abs=1e-12)


def test_ce_mask_ignores_padding():
    post = torch.log(torch.tensor([[[0.5, 0.5], [1e-9, 1 - 1e-9]]], dtype=torch.float64))
    mask = torch.tensor([[True, False]])
    assert ce_loss(post, [[0, 0]], mask).item() == pytest.approx(math.log(2), abs=1e-12)


def test_combined_loss_weights():
    assert combined_loss(2.0, 1.5, 0.0) == 1.5
    assert combined_loss(2.0, 1.5, 1.0) == 2.0
    assert combined_loss(3.0, 1.0, 0.4) == pytest.approx(1.8)
    with pytest.raises(ConfigError):
        combined_loss(1.0, 1.0, 1.5)


def test_mse_value_and_gradient():
    S = torch.zeros(1, 40, dtype=torch.float64)
    S_hat = torch.zeros(1, 40, dtype=torch.float64)
    S_hat[0, 0] = 3.0
    assert mse_loss(S, S_hat).item() == 9.0
    rng = np.random.default_rng(2)
    S = torch.from_numpy(rng.normal(size=(3, 4)))
    S_hat = torch.from_numpy(rng.normal(size=(3, 4))).requires_grad_(True)
    mse_loss(S, S_hat).backward()
    h = 1e-6
    for i, j in [(0, 0), (1, 2), (2, 3)]:
        plus, minus = S_hat.detach().clone(), S_hat.detach().clone()
        plus[i, j] += h
        minus[i, j] -= h
        fd = (mse_loss(S, plus) - mse_loss(S, minus)).item() / (2 * h)
        assert S_hat.grad[i, j].item() == pytest.approx(fd, abs=1e-6)
        assert S_hat.grad[i, j].item() == pytest.approx(2 * (S_hat[i, j] - S[i, j]).item(), abs=1e-12)


def test_bad_training_config():
    with pytest.raises(ConfigError):
        TrainingConfig(lambda_ctc=1.2)
    with pytest.raises(ConfigError):
        TrainingConfig(snr_low=12.0, snr_high=10.0)
    with pytest.raises(ConfigError):
        TrainingConfig(batch_size=0)


# training loops ----------------------------------------------------------------------

def toy_utterances(texts, seed=0):
    vocab = build_vocab(list(WORDS), 40)
    rng = np.random.default_rng(seed)
    utts = []
    for i, text in enumerate(texts):
        samples = synthesize_text(text, i % 4, rng)
        utts.append(Utterance(f"u{i}", text, i % 4, compute_fbank(AudioClip(samples)).frames, encode(text, vocab)))
    return utts, vocab


def fresh_model(vocab, seed=0):
    return build_transceiver(TOY, vocab, toy_lexicon().phoneme_set(), seed=seed)


def test_zero_epochs_write_only_initial_checkpoint(tmp_path):
    utts, vocab = toy_utterances(["red cat"])
    history = train_stage1(fresh_model(vocab), utts, TrainingConfig(stage1_epochs=0), vocab, tmp_path)
    assert history == []
    assert [p.name for p in tmp_path.iterdir()] == ["stage1_epoch000.ssck"]


@pytest.fixture(scope="module")
def overfit():
    utts, vocab = toy_utterances(["big dog runs"])
    model = fresh_model(vocab)
    history = train_stage1(model, utts, TrainingConfig(stage1_epochs=200, batch_size=1, lambda_ctc=0.3), vocab)
    return model, utts, vocab, history


def test_single_utterance_overfits(overfit):
    model, utts, _, history = overfit
    assert teacher_forced_accuracy(model, utts) == 1.0
    assert history[-1] <= 0.5 * history[0]


def test_stage1_is_reproducible(tmp_path):
    utts, vocab = toy_utterances(["red cat", "blue fish sits"])
    cfg = TrainingConfig(stage1_epochs=2, batch_size=2, seed=3)
    for d in ("a", "b"):
        train_stage1(fresh_model(vocab, seed=3), utts, cfg, vocab, tmp_path / d)
    for name in ("stage1_epoch001.ssck", "stage1_epoch002.ssck"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_stage2_freezes_encoder_and_logs_snr(overfit, tmp_path):
    model, utts, vocab, _ = overfit
    before = {k: v.detach().clone() for k, v in model.named_part_parameters("encoder", "ctc").items()}
    dec_before = {k: v.detach().clone() for k, v in model.named_part_parameters("channel_encoder").items()}
    log = TrainLog(tmp_path / "log.jsonl")
    history = train_stage2(model, utts, TrainingConfig(stage2_epochs=5), vocab, log=log)
    for k, v in model.named_part_parameters("encoder", "ctc").items():
        assert torch.equal(v, before[k]), k
    assert any(not torch.equal(v, dec_before[k]) for k, v in model.named_part_parameters("channel_encoder").items())
    assert len(history) == 5
    assert all(5.0 <= h["snr_db"] <= 10.0 for h in history)
    assert len({h["snr_db"] for h in history}) == 5
    lines = (tmp_path / "log.jsonl").read_text().splitlines()
    assert len(lines) == 5 and all(5.0 <= r["snr_db"] <= 10.0 for r in log.records)
