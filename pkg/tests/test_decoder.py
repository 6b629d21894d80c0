import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from semspeech.decoder import (CorrectorLM, SemanticDecoder, beam_search, beam_search_scored, corrector_score,
                               step_posteriors)
from semspeech.dims import ModelDims
from semspeech.errors import ConfigError
from semspeech.model import build_transceiver
from semspeech.tokenizer import build_vocab, encode
from semspeech.training import TrainingConfig, train_corrector_lm

from oracles import BigramLM, random_lattice, sequence_scores

TOY = ModelDims.toy()


def test_step_posteriors_normalize():
    torch.manual_seed(0)
    dec = SemanticDecoder(TOY, 11)
    post = step_posteriors(dec, torch.randn(6, TOY.latent_width))
    assert torch.allclose(post.exp().sum(-1), torch.ones(6), atol=1e-6)
    assert step_posteriors(dec, torch.zeros(0, TOY.latent_width)).shape == (0, 11)


def greedy_chain(post: np.ndarray, special: int) -> list[int]:
    out = []
    for row in post:
        t = int(np.argmax(row))
        if t == special:
            break
        out.append(t)
    return out


@pytest.mark.parametrize("seed", range(20))
def test_width_one_is_greedy(seed):
    post = random_lattice(np.random.default_rng(seed), 6, 5)
    assert beam_search(post, 1) == greedy_chain(post, 4)


def test_full_width_equals_exhaustive_on_three_tokens():
    post = random_lattice(np.random.default_rng(7), 3, 3)
    scores = sequence_scores(post)
    best = max(scores, key=scores.get)
    toks, score = beam_search_scored(post, 27)
    assert toks == list(best) and score == pytest.approx(scores[best], abs=1e-12)


class TableLM:
    special_id = 2

    def __init__(self, rows):
        self.rows = {k: np.log(np.asarray(v, dtype=np.float64)) for k, v in rows.items()}

    def score(self, state, token):
        return self.rows[token], token


def test_wider_beam_recovers_path_greedy_misses():
    A, B, S = 0, 1, 2
    tiny = 1e-6
    post = np.log(np.array([[0.6, 0.4 - tiny, tiny], [0.5, 0.5 - tiny, tiny]]))
    lm = TableLM({S: [0.5, 0.5 - tiny, tiny], A: [0.02, 0.02, 0.96], B: [0.96, 0.02, 0.02]})
    assert beam_search(post, 1, lm, 0.5)[0] == A
    assert beam_search(post, 2, lm, 0.5) == [B, A]


def test_zero_weight_fusion_matches_no_lm():
    post = random_lattice(np.random.default_rng(3), 5, 4)
    lm = BigramLM(4, 0)
    assert beam_search_scored(post, 3, lm, 0.0) == beam_search_scored(post, 3)


def test_invalid_arguments():
    post = random_lattice(np.random.default_rng(0), 2, 3)
    with pytest.raises(ConfigError):
        beam_search(post, 0)
    with pytest.raises(ConfigError):
        beam_search(post, 2, BigramLM(3, 0), 1.0)
    with pytest.raises(ConfigError):
        beam_search(post[0], 2)


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 4), st.integers(2, 4), st.integers(0, 10_000), st.floats(0.0, 0.9))
def test_exhaustive_width_is_exact(L, V, seed, lam):
    rng = np.random.default_rng(seed)
    post = random_lattice(rng, L, V)
    lm = BigramLM(V, seed)
    scores = sequence_scores(post, lm, lam)
    best_score = max(scores.values())
    toks, score = beam_search_scored(post, V ** L, lm, lam)
    assert score == pytest.approx(best_score, abs=1e-9)
    assert scores[tuple(toks)] == pytest.approx(best_score, abs=1e-9)


# corrector LM -----------------------------------------------------------------------------

def test_lm_distribution_normalizes():
    torch.manual_seed(0)
    lm = CorrectorLM(TOY, 9)
    dist, state = corrector_score(lm, None, 8)
    assert math.isclose(np.exp(dist).sum(), 1.0, abs_tol=1e-6)
    dist2, _ = corrector_score(lm, state, 3)
    assert math.isclose(np.exp(dist2).sum(), 1.0, abs_tol=1e-6)


def test_lm_learns_alternation():
    texts = ["a b a b a b a b"] * 64
    vocab = build_vocab(texts, 50)
    model = build_transceiver(TOY, vocab, ["AE"], seed=0)
    train_corrector_lm(model, texts, vocab, TrainingConfig(lm_epochs=20, lm_batch_size=8))
    a, b = encode("a", vocab)[0], encode("b", vocab)[0]
    _, state = corrector_score(model.lm, None, vocab.special_id)
    dist, _ = corrector_score(model.lm, state, a)
    assert dist[b] > dist[a]
