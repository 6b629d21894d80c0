"""Synthetic speech corpus: 16 words built from formant-shaped harmonic
"phonemes", spoken by a few fixed-pitch speakers.

Two of the words ("right" and "write") share one pronunciation. In the
speech corpus each homophone recording is transcribed both ways, so the
audio alone leaves the choice open. The language-model text adds a rule:
"sings" and "eats" are always followed by "write". The planted set exercises
exactly that rule and is never part of the speech corpus.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dsp import HOP, SAMPLE_RATE, AudioClip, ManifestEntry, write_manifest, write_wav
from .tokenizer import Lexicon

WORDS = ("red", "blue", "green", "gold", "cat", "dog", "bird", "fish",
         "runs", "sits", "sings", "eats", "big", "small", "right", "write")
HOMOPHONES = ("right", "write")
RULE_CONTEXT = ("sings", "eats")
RULE_WORD = "write"
HOMOPHONE_RATE = 0.04  # share of sentences holding a homophone outside the rule
GROUP_LABELS = ("right", "right", "right", "right", "write")  # spellings given to one homophone recording

# (F1, F2) centres in Hz; the last two are noise-excited
PHONEMES = {
    "AA": (750, 1200), "IY": (300, 2300), "UW": (320, 900), "EH": (550, 1800),
    "OW": (500, 950), "AE": (680, 1700), "ER": (480, 1400), "AY": (650, 1500),
    "M": (250, 1100), "N": (280, 1600), "S": (4500, 6500), "F": (3000, 5000),
}
UNVOICED = ("S", "F")

PRONUNCIATIONS = {
    "red": ["ER", "EH", "N"], "blue": ["M", "UW"], "green": ["IY", "N"], "gold": ["OW", "M"],
    "cat": ["AE", "S"], "dog": ["AA", "M", "OW"], "bird": ["ER", "M"], "fish": ["F", "IY", "S"],
    "runs": ["ER", "AA", "N"], "sits": ["S", "IY", "S"], "sings": ["S", "IY", "N"],
    "eats": ["IY", "S"], "big": ["M", "IY", "F"], "small": ["S", "AA", "M"],
    "right": ["AY", "F"], "write": ["AY", "F"],
}
SPEAKER_F0 = (105.0, 140.0, 185.0, 230.0)


@dataclass
class ToyUtterance:
    utterance_id: str
    text: str
    speaker_id: int
    samples: np.ndarray


def toy_lexicon() -> Lexicon:
    return Lexicon({w: list(p) for w, p in PRONUNCIATIONS.items()}, use_fallback=False)


def _phoneme_audio(ph: str, frames: int, f0: float, gain: float, rng: np.random.Generator) -> np.ndarray:
    n = frames * HOP
    t = np.arange(n) / SAMPLE_RATE
    f1, f2 = PHONEMES[ph]
    if ph in UNVOICED:
        spec = np.fft.rfft(rng.standard_normal(n))
        freqs = np.fft.rfftfreq(n, 1 / SAMPLE_RATE)
        shape = np.exp(-0.5 * ((freqs - f1) / 400) ** 2) + np.exp(-0.5 * ((freqs - f2) / 600) ** 2)
        x = np.fft.irfft(spec * shape, n=n)
        x *= 0.3 / (np.std(x) + 1e-12)
    else:
        x = np.zeros(n)
        k = 1
        while k * f0 < 7800:
            fk = k * f0
            amp = np.exp(-0.5 * ((fk - f1) / 120) ** 2) + 0.7 * np.exp(-0.5 * ((fk - f2) / 160) ** 2) + 0.02
            x += amp * np.sin(2 * np.pi * fk * t + rng.uniform(0, 2 * np.pi))
            k += 1
        x *= 0.3 / (np.std(x) + 1e-12)
    ramp = min(80, n // 4)
    env = np.ones(n)
    env[:ramp] = np.linspace(0, 1, ramp)
    env[-ramp:] = np.linspace(1, 0, ramp)
    return gain * x * env


def synthesize_text(text: str, speaker_id: int, rng: np.random.Generator) -> np.ndarray:
    f0 = SPEAKER_F0[speaker_id % len(SPEAKER_F0)]
    parts = [1e-3 * rng.standard_normal(5 * HOP)]
    for word in text.split():
        for ph in PRONUNCIATIONS[word]:
            parts.append(_phoneme_audio(ph, int(rng.integers(6, 13)), f0 * rng.uniform(0.97, 1.03),
                                        rng.uniform(0.5, 1.0), rng))
        parts.append(1e-3 * rng.standard_normal(int(rng.integers(3, 7)) * HOP))
    parts.append(1e-3 * rng.standard_normal(2 * HOP))
    return np.concatenate(parts)


_PLAIN = [w for w in WORDS if w not in HOMOPHONES]
_FREE_CONTEXT = [w for w in _PLAIN if w not in RULE_CONTEXT]


def _words(rng: np.random.Generator, n: int, pool: list[str]) -> list[str]:
    words = [str(rng.choice(pool)) for _ in range(n)]
    # homophones and rule contexts never meet except through the rule
    for i in range(n - 1):
        if words[i] in RULE_CONTEXT and words[i + 1] in RULE_CONTEXT:
            words[i + 1] = str(rng.choice(_FREE_CONTEXT))
    return words


def _insert_homophone(rng: np.random.Generator, words: list[str]) -> int:
    pos = int(rng.integers(1, len(words) + 1))
    if words[pos - 1] in RULE_CONTEXT:
        words[pos - 1] = str(rng.choice(_FREE_CONTEXT))
    words.insert(pos, HOMOPHONES[0])
    return pos


def _insert_rule(rng: np.random.Generator, words: list[str]) -> None:
    pos = int(rng.integers(1, len(words) + 1))
    words[pos - 1] = str(rng.choice(RULE_CONTEXT))
    words.insert(pos, RULE_WORD)


def speech_sentences(n: int, seed: int) -> list[list[str]]:
    """Groups of transcripts that share one recording.

    A sentence holding a homophone is recorded once and labelled
    ``GROUP_LABELS`` ways, so no recording pins down which spelling was meant
    and a well-fit decoder stays uncertain on it. Every other group has one
    transcript. The groups hold ``n`` transcripts in total.
    """
    rng = np.random.default_rng(seed)
    groups, total = [], 0
    while total < n:
        words = _words(rng, int(rng.integers(3, 6)), _PLAIN)
        if rng.random() < HOMOPHONE_RATE:
            pos = _insert_homophone(rng, words)
            group = []
            for label in GROUP_LABELS[:n - total]:
                words[pos] = label
                group.append(" ".join(words))
        else:
            group = [" ".join(words)]
        groups.append(group)
        total += len(group)
    return groups


def lm_sentences(n: int, seed: int, rule_rate: float = 0.25) -> list[str]:
    """Text-only sentences in which a rule-context word is always followed by
    ``RULE_WORD``; elsewhere the homophone split follows ``GROUP_LABELS``."""
    rng = np.random.default_rng(seed + 1)
    out = []
    for _ in range(n):
        words = _words(rng, int(rng.integers(3, 6)), _FREE_CONTEXT)
        r = rng.random()
        if r < rule_rate:
            _insert_rule(rng, words)
        elif r < rule_rate + HOMOPHONE_RATE:
            pos = _insert_homophone(rng, words)
            words[pos] = str(rng.choice(GROUP_LABELS))
        out.append(" ".join(words))
    return out


def planted_sentences(n: int, seed: int) -> list[str]:
    """Sentences where only the rule tells the homophones apart; same word
    count range as the speech corpus."""
    rng = np.random.default_rng(seed + 2)
    out = []
    for _ in range(n):
        words = _words(rng, int(rng.integers(2, 5)), _PLAIN)
        _insert_rule(rng, words)
        out.append(" ".join(words))
    return out


def make_utterances(groups: list[list[str]], prefix: str, seed: int) -> list[ToyUtterance]:
    """One recording per group, shared by every transcript in the group."""
    rng = np.random.default_rng(seed + 3)
    out = []
    for group in groups:
        spk = int(rng.integers(len(SPEAKER_F0)))
        samples = synthesize_text(group[0], spk, rng)
        for text in group:
            out.append(ToyUtterance(f"{prefix}{len(out):04d}", text, spk, samples))
    return out


def write_toy_corpus(out_dir, n_utterances: int = 200, n_planted: int = 20, n_lm: int = 4000,
                     seed: int = 0) -> dict[str, Path]:
    """Write WAVs, manifests, the lexicon and LM text under ``out_dir``."""
    out = Path(out_dir)
    paths = {"manifest": out / "manifest.tsv", "planted": out / "planted.tsv",
             "lexicon": out / "lexicon.txt", "lm_text": out / "lm_text.txt"}
    for name, utts in (("manifest", make_utterances(speech_sentences(n_utterances, seed), "utt", seed)),
                       ("planted", make_utterances([[t] for t in planted_sentences(n_planted, seed)], "planted", seed + 10))):
        entries = []
        for u in utts:
            rel = f"wav/{u.utterance_id}.wav"
            write_wav(out / rel, AudioClip(u.samples, SAMPLE_RATE, u.utterance_id, u.speaker_id))
            entries.append(ManifestEntry(u.utterance_id, rel, u.speaker_id, u.text))
        write_manifest(paths[name], entries)
    toy_lexicon().save(paths["lexicon"])
    paths["lm_text"].write_text("\n".join(lm_sentences(n_lm, seed)) + "\n", encoding="utf-8")
    return paths
