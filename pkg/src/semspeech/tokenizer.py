"""Subword vocabulary, greedy longest-match segmentation and phoneme lookup.

Word-initial subwords carry a leading ``BOUNDARY`` marker, so spaces are
recoverable on decode. Ids ``0 .. len(entries)-1`` are subwords; the single
special token (sentence start and end) takes the next id.
"""

from __future__ import annotations

import hashlib
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from .errors import ConfigError, InputError, LexiconError, TokenizationError

BOUNDARY = "▁"
SPECIAL_LITERAL = "<s/>"
DEFAULT_BUDGET = 1000


@dataclass(frozen=True)
class Vocabulary:
    entries: tuple[str, ...]

    def __post_init__(self):
        if len(set(self.entries)) != len(self.entries):
            raise ConfigError("vocabulary entries must be unique")
        if any(not e for e in self.entries):
            raise ConfigError("vocabulary entries must be non-empty")
        object.__setattr__(self, "_index", {e: i for i, e in enumerate(self.entries)})
        object.__setattr__(self, "_maxlen", max((len(e) for e in self.entries), default=0))

    @property
    def special_id(self) -> int:
        return len(self.entries)

    @property
    def size(self) -> int:
        """Number of token ids including the special token."""
        return len(self.entries) + 1

    def __len__(self):
        return self.size

    def id_of(self, piece: str) -> int:
        return self._index[piece]

    def piece(self, token_id: int) -> str:
        if token_id == self.special_id:
            return SPECIAL_LITERAL
        return self.entries[token_id]

    def digest(self) -> str:
        return hashlib.sha256("\n".join(self.entries).encode("utf-8")).hexdigest()[:16]

    def save(self, path) -> None:
        Path(path).write_text("\n".join(self.entries + (SPECIAL_LITERAL,)) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        lines = Path(path).read_text(encoding="utf-8").split("\n")
        if lines and lines[-1] == "":
            lines.pop()
        if not lines or lines[-1] != SPECIAL_LITERAL:
            raise ConfigError(f"{path}: last line must be the reserved {SPECIAL_LITERAL}")
        return cls(tuple(lines[:-1]))


def _words(text: str) -> list[str]:
    return [BOUNDARY + w for w in text.split(" ") if w]


def build_vocab(corpus_texts: Iterable[str], budget: int = DEFAULT_BUDGET) -> Vocabulary:
    """Byte-pair merges over marker-prefixed words.

    Starts from the character alphabet and repeatedly merges the most
    frequent adjacent pair (ties to the lexicographically smallest pair)
    until ``budget`` entries exist or nothing is left to merge.
    """
    word_counts = Counter()
    for text in corpus_texts:
        word_counts.update(_words(text))
    if not word_counts:
        raise InputError("cannot build a vocabulary from an empty corpus")
    alphabet = sorted({ch for w in word_counts for ch in w})
    if len(alphabet) > budget:
        raise ConfigError(f"alphabet of {len(alphabet)} characters exceeds the budget of {budget}")
    entries = list(alphabet)
    seen = set(entries)
    segs = {w: list(w) for w in word_counts}
    while len(entries) < budget:
        pairs = Counter()
        for w, parts in segs.items():
            for a, b in zip(parts, parts[1:]):
                pairs[a, b] += word_counts[w]
        if not pairs:
            break
        best = max(pairs.values())
        a, b = min(p for p, c in pairs.items() if c == best)
        merged = a + b
        for w, parts in segs.items():
            out, i = [], 0
            while i < len(parts):
                if i + 1 < len(parts) and parts[i] == a and parts[i + 1] == b:
                    out.append(merged)
                    i += 2
                else:
                    out.append(parts[i])
                    i += 1
            segs[w] = out
        if merged not in seen:
            entries.append(merged)
            seen.add(merged)
    return Vocabulary(tuple(entries))


def encode(text: str, vocab: Vocabulary) -> list[int]:
    """Greedy longest-match segmentation, left to right."""
    if not text:
        return []
    if BOUNDARY in text:
        raise TokenizationError(f"text contains the reserved boundary marker {BOUNDARY!r}")
    s = BOUNDARY + text.replace(" ", BOUNDARY)
    ids, i = [], 0
    index, maxlen = vocab._index, vocab._maxlen
    while i < len(s):
        for j in range(min(len(s), i + maxlen), i, -1):
            tid = index.get(s[i:j])
            if tid is not None:
                ids.append(tid)
                i = j
                break
        else:
            raise TokenizationError(f"character {s[i]!r} is not covered by the vocabulary")
    return ids


def decode(tokens: Sequence[int], vocab: Vocabulary) -> str:
    special = vocab.special_id
    s = "".join(vocab.entries[t] for t in tokens if t != special)
    if not s:
        return ""
    s = s.replace(BOUNDARY, " ")
    return s[1:] if s.startswith(" ") else s


def surface(piece: str) -> str:
    """A subword without its word-boundary marker."""
    return piece.lstrip(BOUNDARY)


# letter-to-sound fallback, one ARPAbet symbol per letter
_LETTER_SOUNDS = {
    "a": "AE", "b": "B", "c": "K", "d": "D", "e": "EH", "f": "F", "g": "G", "h": "HH", "i": "IH",
    "j": "JH", "k": "K", "l": "L", "m": "M", "n": "N", "o": "AA", "p": "P", "q": "K", "r": "R",
    "s": "S", "t": "T", "u": "AH", "v": "V", "w": "W", "x": "K", "y": "Y", "z": "Z", "'": None,
}
FALLBACK_PHONEMES = tuple(sorted({p for p in _LETTER_SOUNDS.values() if p}))


def letter_to_sound(piece: str) -> list[str] | None:
    out = []
    for ch in surface(piece).lower():
        if ch not in _LETTER_SOUNDS:
            return None
        if _LETTER_SOUNDS[ch]:
            out.append(_LETTER_SOUNDS[ch])
    return out or None


@dataclass
class Lexicon:
    entries: dict[str, list[str]] = field(default_factory=dict)
    use_fallback: bool = True

    def lookup(self, piece: str) -> tuple[list[str], bool]:
        """``(phonemes, used_fallback)`` for one subword."""
        for key in (piece, surface(piece)):
            if key in self.entries:
                return list(self.entries[key]), False
        if self.use_fallback:
            phones = letter_to_sound(piece)
            if phones:
                return phones, True
        raise LexiconError(f"no pronunciation for subword {piece!r}")

    def phoneme_set(self) -> list[str]:
        phones = {p for ps in self.entries.values() for p in ps}
        if self.use_fallback:
            phones.update(FALLBACK_PHONEMES)
        return sorted(phones)

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for key in sorted(self.entries):
                fh.write(f"{key}\t{' '.join(self.entries[key])}\n")

    @classmethod
    def load(cls, path, use_fallback: bool = True) -> "Lexicon":
        entries = {}
        for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
            if not line.strip():
                continue
            key, sep, phones = line.partition("\t")
            if not sep or not phones.split():
                raise LexiconError(f"{path}:{lineno}: expected 'subword<TAB>PH1 PH2 ...'")
            entries[key] = phones.split()
        return cls(entries, use_fallback)


@dataclass
class PhonemeSequence:
    phonemes: list[str]
    boundaries: list[tuple[int, int]]  # per token, [start, end) into phonemes
    fallback: list[bool]


def to_phonemes(tokens: Sequence[int], vocab: Vocabulary, lexicon: Lexicon) -> PhonemeSequence:
    phonemes, bounds, flags = [], [], []
    for t in tokens:
        if t == vocab.special_id:
            raise LexiconError("the special token has no pronunciation")
        phones, fell_back = lexicon.lookup(vocab.entries[t])
        bounds.append((len(phonemes), len(phonemes) + len(phones)))
        phonemes.extend(phones)
        flags.append(fell_back)
    return PhonemeSequence(phonemes, bounds, flags)


def frame_targets(tokens: Sequence[int], vocab: Vocabulary) -> list[int]:
    """Training target framing: special, tokens..., special."""
    return [vocab.special_id, *tokens, vocab.special_id]
