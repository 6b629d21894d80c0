import math

import numpy as np
import pytest
import torch

from semspeech.additional_info import (REDUCTION, CtcHead, build_additional_info, cover_frames, ctc_layout,
                                       ctc_posteriors, min_ctc_frames, path_log_prob, viterbi_align)
from semspeech.dims import ModelDims
from semspeech.dsp import LOG_FLOOR
from semspeech.errors import AlignmentError
from semspeech.tokenizer import Lexicon, Vocabulary

from oracles import collapse, ctc_enumerate


def test_layout():
    assert ctc_layout(10) == {"special": 9, "blank": 10, "pad": 11, "classes": 12}


def test_head_rows_normalize_and_keep_frame_count():
    torch.manual_seed(0)
    dims = ModelDims.toy()
    head = CtcHead(dims, 9)
    lp = ctc_posteriors(head, torch.randn(2, 7, dims.fc_width))
    assert lp.shape == (2, 7, 11)
    assert torch.allclose(lp.exp().sum(-1), torch.ones(2, 7), atol=1e-6)


def test_peaked_single_token_span():
    blank = 1
    probs = np.array([[0.05, 0.95], [0.9, 0.1], [0.9, 0.1]])
    spans = viterbi_align(np.log(probs), [0], blank)
    assert spans == [(1, 2)]
    assert spans[0][1] - spans[0][0] + 1 == 2


def test_one_frame_single_token():
    assert viterbi_align(np.log(np.array([[0.3, 0.7]])), [0], 1) == [(0, 0)]


def test_infeasible_and_empty_targets():
    lp = np.log(np.full((2, 3), 1 / 3))
    with pytest.raises(AlignmentError):
        viterbi_align(lp, [0, 0], 2)  # repeated token needs a blank between
    with pytest.raises(AlignmentError):
        viterbi_align(lp, [], 2)
    assert min_ctc_frames([0, 0, 1]) == 4


def random_instance(rng):
    C = int(rng.integers(2, 5))
    blank = C - 1
    T = int(rng.integers(1, 7))
    while True:
        tokens = [int(t) for t in rng.integers(0, C - 1, size=int(rng.integers(1, 4)))]
        if min_ctc_frames(tokens) <= T:
            break
        T += 1
    logits = rng.normal(size=(T, C)) * 2
    return logits - np.log(np.exp(logits).sum(1, keepdims=True)), tokens, blank


def test_viterbi_equals_enumerated_best():
    rng = np.random.default_rng(0)
    for _ in range(150):
        lp, tokens, blank = random_instance(rng)
        if lp.shape[0] > 6:
            continue
        spans = viterbi_align(lp, tokens, blank)
        _, best = ctc_enumerate(lp, tokens, blank)
        assert path_log_prob(lp, tokens, spans, blank) == pytest.approx(best, abs=1e-9)
        labels = [blank] * lp.shape[0]
        for tok, (a, b) in zip(tokens, spans):
            labels[a:b + 1] = [tok] * (b - a + 1)
        assert collapse(labels, blank) == tokens


def test_cover_frames_tiles_utterance():
    assert cover_frames([(1, 2), (5, 5)], 8) == [(0, 4), (5, 7)]
    assert cover_frames([(0, 0)], 1) == [(0, 0)]


VOCAB = Vocabulary(("ab", "c"))
LEX = Lexicon({"ab": ["AE", "B"], "c": ["K"]}, use_fallback=False)


def test_two_phoneme_split():
    f0 = np.full(40, 120.0)
    lp = np.zeros(40)
    D = build_additional_info([(0, 4)], f0, lp, LEX, [0], VOCAB)
    assert D.durations.tolist() == [10, 10]


def test_single_phoneme_duration_is_four_times_span():
    f0 = np.full(40, 120.0)
    D = build_additional_info([(2, 4)], f0, np.zeros(40), LEX, [1], VOCAB)
    assert D.durations.tolist() == [REDUCTION * 3]


def test_uneven_split_gives_remainder_to_last():
    D = build_additional_info([(0, 1)], np.zeros(8), np.zeros(8), Lexicon({"ab": ["A", "B", "C"]}), [0], VOCAB)
    assert D.durations.tolist() == [2, 2, 4]


def test_unvoiced_span_has_zero_pitch_and_floor_power():
    floor = math.log(LOG_FLOOR)
    D = build_additional_info([(0, 1)], np.zeros(8), np.full(8, floor), LEX, [1], VOCAB)
    assert D.pitch.tolist() == [0.0]
    assert D.power[0] == pytest.approx(floor)


def test_pitch_and_power_averaged_per_phoneme():
    f0 = np.array([0, 100, 100, 100, 200, 200, 0, 0], dtype=float)
    lp = np.arange(8, dtype=float)
    D = build_additional_info([(0, 1)], f0, lp, LEX, [0], VOCAB)
    assert D.pitch.tolist() == [100.0, 200.0]
    assert D.power.tolist() == [1.5, 5.5]


def test_covered_spans_sum_to_padded_frames():
    D = build_additional_info([(1, 1), (3, 3)], np.zeros(24), np.zeros(24), LEX, [0, 1], VOCAB, num_reduced_frames=6)
    assert int(D.durations.sum()) == 6 * REDUCTION
