"""Audio front end: log mel filterbanks, augmentation, pitch and power tracks."""

from __future__ import annotations

import csv
import math
import wave
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import InputError, ParseError

SAMPLE_RATE = 16000
WINDOW = 400  # 25 ms at 16 kHz
HOP = 160  # 10 ms
N_FFT = 512
N_MELS = 40
LOG_FLOOR = 1e-10
F0_MIN, F0_MAX = 60.0, 400.0


@dataclass
class AudioClip:
    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE
    utterance_id: str = ""
    speaker_id: int = 0

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.sample_rate <= 0:
            raise InputError("sample_rate must be positive")

    def __len__(self):
        return len(self.samples)


@dataclass
class SpectrumSequence:
    frames: np.ndarray  # (N, 40)
    utterance_id: str = ""
    frame_shift_ms: float = 10.0
    window_ms: float = 25.0

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        if self.frames.ndim != 2 or self.frames.shape[1] != N_MELS:
            raise InputError(f"spectrum must have {N_MELS} coefficients per frame, got {self.frames.shape}")
        if not np.all(np.isfinite(self.frames)):
            raise InputError("spectrum holds non-finite values")

    def __len__(self):
        return self.frames.shape[0]


def num_frames(num_samples: int) -> int:
    if num_samples < WINDOW:
        return 0
    return (num_samples - WINDOW) // HOP + 1


def hz_to_mel(hz):
    return 2595.0 * np.log10(1.0 + np.asarray(hz, dtype=np.float64) / 700.0)


def mel_to_hz(mel):
    return 700.0 * (10.0 ** (np.asarray(mel, dtype=np.float64) / 2595.0) - 1.0)


def mel_edges(n_mels: int = N_MELS, sample_rate: int = SAMPLE_RATE) -> np.ndarray:
    """The n_mels + 2 HTK-mel-spaced corner frequencies in Hz."""
    return mel_to_hz(np.linspace(0.0, hz_to_mel(sample_rate / 2), n_mels + 2))


def mel_filterbank(n_mels: int = N_MELS, n_fft: int = N_FFT, sample_rate: int = SAMPLE_RATE) -> np.ndarray:
    """Triangular filters of shape (n_mels, n_fft // 2 + 1) on the linear FFT axis."""
    edges = mel_edges(n_mels, sample_rate)
    freqs = np.arange(n_fft // 2 + 1) * sample_rate / n_fft
    lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    up = (freqs[None, :] - lo) / (mid - lo)
    down = (hi - freqs[None, :]) / (hi - mid)
    return np.clip(np.minimum(up, down), 0.0, None)


_FBANK = mel_filterbank()
_WINDOW = np.hamming(WINDOW)


def frame_signal(samples: np.ndarray) -> np.ndarray:
    n = num_frames(len(samples))
    idx = np.arange(WINDOW)[None, :] + HOP * np.arange(n)[:, None]
    return samples[idx]


def compute_fbank(clip: AudioClip, mean_norm: bool = False) -> SpectrumSequence:
    if clip.sample_rate != SAMPLE_RATE:
        raise InputError(f"expected {SAMPLE_RATE} Hz audio, got {clip.sample_rate}")
    if len(clip) < WINDOW:
        raise InputError(f"clip {clip.utterance_id!r} has {len(clip)} samples, shorter than one {WINDOW}-sample window")
    frames = frame_signal(clip.samples) * _WINDOW
    mag = np.abs(np.fft.rfft(frames, n=N_FFT, axis=1))
    feats = np.log(np.maximum(mag @ _FBANK.T, LOG_FLOOR))
    if mean_norm:
        feats = feats - feats.mean(axis=0, keepdims=True)
    return SpectrumSequence(feats, clip.utterance_id)


def augment_speed(clip: AudioClip, factor: float) -> AudioClip:
    """Resample by linear interpolation; pitch moves with speed."""
    if not factor > 0:
        raise InputError(f"speed factor must be positive, got {factor}")
    if factor == 1.0:
        return replace(clip, samples=clip.samples.copy())
    n_out = int(math.floor(len(clip) / factor))
    pos = np.arange(n_out) * factor
    out = np.interp(pos, np.arange(len(clip)), clip.samples)
    return replace(clip, samples=out)


def augment_noise(clip: AudioClip, snr_db: float, rng_seed) -> AudioClip:
    """Add white Gaussian noise at ``snr_db`` relative to the clip's own power."""
    if math.isinf(snr_db) and snr_db > 0:
        return replace(clip, samples=clip.samples.copy())
    if not math.isfinite(snr_db):
        raise InputError(f"snr_db must be finite or +inf, got {snr_db}")
    power = float(np.mean(clip.samples ** 2))
    if power == 0.0:
        raise InputError(f"clip {clip.utterance_id!r} is silent; SNR is undefined")
    rng = np.random.default_rng(rng_seed)
    noise = rng.standard_normal(len(clip)) * math.sqrt(power / 10 ** (snr_db / 10))
    return replace(clip, samples=clip.samples + noise)


def _frame_pitch(frame: np.ndarray, sample_rate: int, voicing: float) -> float:
    x = frame - frame.mean()
    n = len(x)
    lag_lo = int(math.floor(sample_rate / F0_MAX))
    lag_hi = min(int(math.ceil(sample_rate / F0_MIN)), n - 2)
    lags = np.arange(lag_lo - 1, lag_hi + 2)
    full = np.correlate(x, x, mode="full")[n - 1:]
    csum = np.concatenate([[0.0], np.cumsum(x * x)])
    head = csum[n - lags]  # energy of x[:-lag]
    tail = csum[n] - csum[lags]  # energy of x[lag:]
    denom = np.sqrt(head * tail)
    vals = np.divide(full[lags], denom, out=np.zeros(len(lags)), where=denom > 0)
    core = vals[1:-1]
    best = float(core.max())
    if best < voicing:
        return 0.0
    # smallest lag close to the global peak, so a sub-harmonic is not chosen
    i = int(np.flatnonzero(core >= 0.9 * best)[0])
    while i + 1 < len(core) and core[i + 1] > core[i]:
        i += 1
    y0, y1, y2 = vals[i], vals[i + 1], vals[i + 2]
    curv = y0 - 2 * y1 + y2
    shift = 0.5 * (y0 - y2) / curv if curv != 0 else 0.0
    return sample_rate / (lag_lo + i + float(np.clip(shift, -0.5, 0.5)))


def extract_pitch_power(clip: AudioClip, voicing: float = 0.5, silence_db: float = -60.0):
    """Per-frame ``(f0_hz, log_power)`` on the same framing as :func:`compute_fbank`.

    f0 is 0 for frames whose normalised autocorrelation peak in the
    60-400 Hz lag band is weaker than ``voicing`` or whose power is below
    ``silence_db``.
    """
    if len(clip) < WINDOW:
        raise InputError(f"clip {clip.utterance_id!r} shorter than one window")
    frames = frame_signal(clip.samples)
    ms = np.mean(frames ** 2, axis=1)
    log_power = np.log(np.maximum(ms, LOG_FLOOR))
    threshold = 10 ** (silence_db / 10)
    f0 = np.array([_frame_pitch(f, clip.sample_rate, voicing) if p > threshold else 0.0
                   for f, p in zip(frames, ms)])
    return f0, log_power


def read_wav(path, utterance_id: str = "", speaker_id: int = 0) -> AudioClip:
    with wave.open(str(path), "rb") as w:
        if w.getsampwidth() != 2 or w.getnchannels() != 1:
            raise InputError(f"{path}: expected 16-bit mono PCM")
        rate = w.getframerate()
        data = np.frombuffer(w.readframes(w.getnframes()), dtype="<i2")
    return AudioClip(data.astype(np.float64) / 32768.0, rate, utterance_id, speaker_id)


def write_wav(path, clip: AudioClip) -> None:
    pcm = np.clip(np.round(clip.samples * 32767.0), -32768, 32767).astype("<i2")
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with wave.open(str(path), "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(2)
        w.setframerate(clip.sample_rate)
        w.writeframes(pcm.tobytes())


@dataclass(frozen=True)
class ManifestEntry:
    utterance_id: str
    wav_path: str
    speaker_id: int
    transcript: str


def read_manifest(path) -> list[ManifestEntry]:
    entries = []
    with open(path, newline="", encoding="utf-8") as fh:
        for lineno, row in enumerate(csv.reader(fh, delimiter="\t", quoting=csv.QUOTE_NONE), 1):
            if not row:
                continue
            if len(row) != 4:
                raise ParseError(f"expected 4 tab-separated fields, got {len(row)}", lineno)
            uid, wav, spk, text = row
            try:
                entries.append(ManifestEntry(uid, wav, int(spk), text))
            except ValueError as exc:
                raise ParseError(f"bad speaker id {spk!r}", lineno) from exc
    return entries


def write_manifest(path, entries) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        for e in entries:
            fh.write(f"{e.utterance_id}\t{e.wav_path}\t{e.speaker_id}\t{e.transcript}\n")
