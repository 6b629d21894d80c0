"""Independent reference implementations used as test oracles.

Everything here is brute force or a different formulation from the
package code, so agreement is meaningful.
"""

import itertools
import math
from functools import lru_cache

import numpy as np
import torch

from semspeech.nn import LayerSpec, init_fan_in_uniform, make_layer
from semspeech.nn.gradcheck import gradient_errors

D = torch.float64


# finite-difference gradient harness -------------------------------------------------

LAYER_CASES = {
    "conv2d": (LayerSpec("conv2d", {"in_channels": 2, "out_channels": 3, "kernel": 3}), (1, 2, 4, 5)),
    "maxpool2d": (LayerSpec("maxpool2d", {"window": 2}), (1, 2, 4, 4)),
    "conv1d": (LayerSpec("conv1d", {"in_channels": 1, "out_channels": 3, "kernel": 5, "padding": 2}), (2, 1, 6)),
    "fc": (LayerSpec("fc", {"in_features": 4, "out_features": 3}), (2, 4)),
    "blstm": (LayerSpec("blstm", {"input_size": 3, "hidden": 2}), (2, 3, 3)),
    "lstm": (LayerSpec("lstm", {"input_size": 3, "hidden": 2, "num_layers": 2}), (2, 3, 3)),
    "gru": (LayerSpec("gru", {"input_size": 3, "hidden": 2}), (2, 3, 3)),
    "embedding": (LayerSpec("embedding", {"num_embeddings": 5, "dim": 3}), None),
    "transformer_block": (LayerSpec("transformer_block", {"d_model": 4, "heads": 2, "ff": 6}), (2, 3, 4)),
    "softmax": (LayerSpec("softmax"), (2, 5)),
    "logsoftmax": (LayerSpec("logsoftmax"), (2, 5)),
    "tanh": (LayerSpec("tanh"), (2, 5)),
    "leaky_relu": (LayerSpec("leaky_relu"), (2, 5)),
}


def layer_gradient_error(kind: str, seed: int) -> float:
    """Worst relative error of autograd against central differences for one
    layer, over its parameters and (for real inputs) the input."""
    spec, shape = LAYER_CASES[kind]
    torch.manual_seed(seed)
    layer = make_layer(spec, D)
    g = torch.Generator().manual_seed(seed)
    if shape is None:
        x = torch.randint(0, spec["num_embeddings"], (2, 4), generator=g)
    else:
        x = torch.randn(shape, generator=g, dtype=D, requires_grad=True)
    out = layer(x)
    out = out[0] if isinstance(out, tuple) else out
    w = torch.randn(out.shape, generator=g, dtype=D)

    def loss():
        y = layer(x)
        return ((y[0] if isinstance(y, tuple) else y) * w).sum()

    params = dict(layer.named_parameters())
    if x.is_floating_point():
        params["input"] = x
    return max(gradient_errors(loss, params).values())


def encoder_toy_gradient_error(seed: int = 0) -> float:
    """End-to-end check through the feature stack, CTC head and the soft
    aligner on an 8-frame spectrum, which the stack reduces to 2 frames."""
    from semspeech.additional_info import CtcHead
    from semspeech.dims import ModelDims
    from semspeech.encoder import SemanticEncoder
    from semspeech.training import ce_loss, ctc_loss_batch

    dims = ModelDims(vgg_channels=(2, 2), blstm_layers=1, blstm_width=3, fc_width=3, att_dim=3, loc_filters=2,
                     loc_kernel=3, loc_padding=1, latent_width=3, token_emb=2)
    V = 3
    torch.manual_seed(seed)
    enc = SemanticEncoder(dims, V).to(D)
    head = CtcHead(dims, V).to(D)
    init_fan_in_uniform(enc, seed)
    init_fan_in_uniform(head, seed + 1)
    g = torch.Generator().manual_seed(seed)
    S = torch.randn(1, 8, 40, generator=g, dtype=D)
    targets = torch.tensor([[2, 0, 2]])

    def loss():
        H, h_len, batch = enc(S, None, targets, [3])
        assert H.shape[1] == 2
        ce = ce_loss(batch.step_posteriors, targets)
        ctc = ctc_loss_batch(head(H), h_len, [[0]], head.blank).mean()
        return ce + ctc

    params = {f"enc.{n}": p for n, p in enc.named_parameters()}
    params.update({f"ctc.{n}": p for n, p in head.named_parameters()})
    return max(gradient_errors(loss, params).values())


# CTC ---------------------------------------------------------------------------------

def collapse(path, blank):
    out, prev = [], None
    for p in path:
        if p != prev and p != blank:
            out.append(p)
        prev = p
    return out


def ctc_enumerate(log_probs: np.ndarray, target, blank: int):
    """Every frame labelling of length T: returns (total probability of the
    labellings collapsing to ``target``, best such log-probability)."""
    T, C = log_probs.shape
    total, best = 0.0, -math.inf
    for path in itertools.product(range(C), repeat=T):
        if collapse(path, blank) == list(target):
            lp = sum(log_probs[t, c] for t, c in enumerate(path))
            total += math.exp(lp)
            best = max(best, lp)
    return total, best


# DTW ---------------------------------------------------------------------------------

def monotone_paths(n: int, m: int):
    """All step sequences from (0, 0) to (n-1, m-1) using (1,0), (0,1), (1,1)."""
    def walk(i, j):
        if (i, j) == (n - 1, m - 1):
            yield [(i, j)]
            return
        for di, dj in ((1, 1), (1, 0), (0, 1)):
            a, b = i + di, j + dj
            if a < n and b < m:
                for rest in walk(a, b):
                    yield [(i, j)] + rest
    yield from walk(0, 0)


def dtw_enumerate(cost: np.ndarray) -> float:
    best = math.inf
    for path in monotone_paths(*cost.shape):
        s = 0.0
        for i, j in path:
            s += cost[i, j]
        best = min(best, s)
    return best


# word error rate ---------------------------------------------------------------------------

def levenshtein(ref, hyp) -> int:
    """Memoised recursion over suffixes, a different formulation from the
    package's tabular edit distance."""
    ref, hyp = tuple(ref), tuple(hyp)

    @lru_cache(maxsize=None)
    def d(i, j):
        if i == len(ref):
            return len(hyp) - j
        if j == len(hyp):
            return len(ref) - i
        return min(d(i + 1, j + 1) + (ref[i] != hyp[j]), d(i + 1, j) + 1, d(i, j + 1) + 1)

    return d(0, 0)


# beam search ---------------------------------------------------------------------------

class BigramLM:
    """Fixed random bigram table behind the prefix-scorer interface."""

    def __init__(self, V: int, seed: int, special_id: int | None = None):
        rng = np.random.default_rng(seed)
        logits = rng.normal(size=(V, V)) * 2
        self.table = logits - np.log(np.exp(logits).sum(1, keepdims=True))
        self.special_id = V - 1 if special_id is None else special_id

    def score(self, state, token):
        return self.table[token], token


def sequence_scores(post: np.ndarray, lm=None, lm_weight: float = 0.0, special_id=None):
    """Score of every complete hypothesis: token strings that stop at the
    special token at some step, or run all steps without it."""
    L, V = post.shape
    special_id = V - 1 if special_id is None else special_id
    use_lm = lm is not None and lm_weight > 0
    w = 1 - lm_weight if use_lm else 1.0
    out = {}
    for n in range(L + 1):
        for toks in itertools.product([v for v in range(V) if v != special_id], repeat=n):
            seq = list(toks) + ([special_id] if n < L else [])
            s, prev = 0.0, special_id
            for t, v in enumerate(seq):
                s += w * post[t, v]
                if use_lm:
                    s += lm_weight * lm.table[prev, v]
                prev = v
            out[toks] = s
    return out


def random_lattice(rng: np.random.Generator, L: int, V: int) -> np.ndarray:
    logits = rng.normal(size=(L, V)) * 2
    return logits - np.log(np.exp(logits).sum(1, keepdims=True))
