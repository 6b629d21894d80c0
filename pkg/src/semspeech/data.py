"""Prepared utterances (features, tokens, pitch/power tracks) and batching."""

from __future__ import annotations

import hashlib
import io
import math
import zipfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .dsp import ManifestEntry, compute_fbank, extract_pitch_power, read_wav
from .errors import ConfigError, InputError
from .nn.checkpoint import atomic_write_bytes
from .tokenizer import Vocabulary, encode


@dataclass
class Utterance:
    utterance_id: str
    text: str
    speaker_id: int
    spectrum: np.ndarray  # (N, 40)
    tokens: list[int]
    f0: np.ndarray = field(default_factory=lambda: np.zeros(0))
    log_power: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def num_frames(self) -> int:
        return len(self.spectrum)


def load_utterance(entry: ManifestEntry, root, vocab: Vocabulary) -> Utterance:
    clip = read_wav(Path(root) / entry.wav_path, entry.utterance_id, entry.speaker_id)
    f0, log_power = extract_pitch_power(clip)
    return Utterance(entry.utterance_id, entry.transcript, entry.speaker_id, compute_fbank(clip).frames,
                     encode(entry.transcript, vocab), f0, log_power)


def split_ids(ids: Sequence[str], train_ratio: float = 0.9) -> tuple[list[str], list[str]]:
    """Order ids by SHA-256 and give the first floor(ratio * n) to train."""
    if not ids:
        raise ConfigError("cannot split an empty manifest")
    ordered = sorted(ids, key=lambda u: hashlib.sha256(u.encode("utf-8")).hexdigest())
    n_train = math.floor(train_ratio * len(ordered))
    return sorted(ordered[:n_train]), sorted(ordered[n_train:])


def bucket_batches(utts: Sequence[Utterance], batch_size: int, rng: np.random.Generator) -> list[list[Utterance]]:
    """Length-sorted batches in a seeded random order."""
    if batch_size < 1:
        raise ConfigError(f"batch size must be >= 1, got {batch_size}")
    ordered = sorted(utts, key=lambda u: (u.num_frames, u.utterance_id))
    batches = [ordered[i:i + batch_size] for i in range(0, len(ordered), batch_size)]
    order = rng.permutation(len(batches))
    return [batches[i] for i in order]


def save_features(path, utts: Sequence[Utterance]) -> str:
    """Store utterances in one ``.npz``; returns the content checksum."""
    arrays = {}
    for u in utts:
        arrays[f"{u.utterance_id}/spectrum"] = u.spectrum.astype(np.float32)
        arrays[f"{u.utterance_id}/tokens"] = np.asarray(u.tokens, dtype=np.int64)
        arrays[f"{u.utterance_id}/f0"] = u.f0.astype(np.float32)
        arrays[f"{u.utterance_id}/log_power"] = u.log_power.astype(np.float32)
        arrays[f"{u.utterance_id}/meta"] = np.frombuffer(f"{u.speaker_id}\t{u.text}".encode("utf-8"), dtype=np.uint8)
    digest = hashlib.sha256()
    for key in sorted(arrays):
        digest.update(key.encode("utf-8"))
        digest.update(arrays[key].tobytes())
    # np.savez stamps the current time into the zip; write members ourselves for stable bytes
    buf = io.BytesIO()
    with zipfile.ZipFile(buf, "w", zipfile.ZIP_STORED) as zf:
        for key in sorted(arrays):
            member = io.BytesIO()
            np.save(member, arrays[key], allow_pickle=False)
            info = zipfile.ZipInfo(key + ".npy", date_time=(1980, 1, 1, 0, 0, 0))
            zf.writestr(info, member.getvalue())
    atomic_write_bytes(path, buf.getvalue())
    return digest.hexdigest()


def load_features(path) -> list[Utterance]:
    data = np.load(path, allow_pickle=False)
    uids = sorted({k.rsplit("/", 1)[0] for k in data.files})
    out = []
    for uid in uids:
        spk, _, text = bytes(data[f"{uid}/meta"]).decode("utf-8").partition("\t")
        out.append(Utterance(uid, text, int(spk), data[f"{uid}/spectrum"].astype(np.float64),
                             data[f"{uid}/tokens"].tolist(), data[f"{uid}/f0"].astype(np.float64),
                             data[f"{uid}/log_power"].astype(np.float64)))
    if not out:
        raise InputError(f"{path}: no utterances")
    return out
