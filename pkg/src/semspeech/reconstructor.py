"""Phoneme-to-spectrum synthesis with duration/pitch/power conditioning, and a
Griffin-Lim fallback from spectrum to waveform."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .additional_info import AdditionalSpeechInfo
from .dims import ModelDims
from .dsp import HOP, LOG_FLOOR, N_FFT, N_MELS, SAMPLE_RATE, WINDOW, AudioClip, SpectrumSequence, mel_filterbank
from .errors import ConfigError, InputError
from .nn.layers import LayerSpec, make_layer


@dataclass(frozen=True)
class TtsConfig:
    width: int = 256
    heads: int = 2
    enc_layers: int = 4
    dec_layers: int = 6
    ff: int = 1024
    bins: int = 256
    predictor_hidden: int = 256
    n_speakers: int = 256
    n_mels: int = N_MELS

    def __post_init__(self):
        if self.width % self.heads:
            raise ConfigError(f"model width {self.width} is not divisible by {self.heads} heads")
        if self.bins < 2:
            raise ConfigError("need at least 2 quantization bins")

    @classmethod
    def from_dims(cls, dims: ModelDims) -> "TtsConfig":
        return cls(dims.tts_width, dims.tts_heads, dims.tts_enc_layers, dims.tts_dec_layers, dims.tts_ff,
                   dims.tts_bins, dims.tts_predictor_hidden, dims.n_speakers, dims.n_mels)


def sinusoid_positions(length: int, width: int) -> torch.Tensor:
    pos = torch.arange(length, dtype=torch.float64)[:, None]
    rate = torch.exp(-math.log(10000.0) * torch.arange(0, width, 2, dtype=torch.float64) / width)
    pe = torch.zeros(length, width, dtype=torch.float64)
    pe[:, 0::2] = torch.sin(pos * rate)
    pe[:, 1::2] = torch.cos(pos * rate)[:, : width // 2]
    return pe.float()


def length_regulate(latent: torch.Tensor, durations) -> torch.Tensor:
    """Repeat row ``i`` of ``latent`` ``durations[i]`` times."""
    d = torch.as_tensor(durations, dtype=torch.int64)
    if d.numel() != latent.shape[0]:
        raise InputError(f"{d.numel()} durations for {latent.shape[0]} phonemes")
    if d.numel() and int(d.min()) < 1:
        raise InputError("every duration must be at least 1 frame")
    return torch.repeat_interleave(latent, d, dim=0)


class VariancePredictor(nn.Module):
    """Two-layer feed-forward head producing one scalar per position."""

    def __init__(self, width: int, hidden: int, name: str):
        super().__init__()
        self.fc1 = make_layer(LayerSpec("fc", {"in_features": width, "out_features": hidden}, f"{name}_fc1"))
        self.fc2 = make_layer(LayerSpec("fc", {"in_features": hidden, "out_features": 1}, f"{name}_fc2"))

    def forward(self, x):
        return self.fc2(torch.relu(self.fc1(x))).squeeze(-1)


@dataclass
class EncodedPhonemes:
    latent: torch.Tensor  # (B, P, W)
    mask: torch.Tensor  # (B, P) true on real phonemes
    duration: torch.Tensor  # (B, P) frames, >= 0
    pitch: torch.Tensor  # (B, P) normalised units
    power: torch.Tensor  # (B, P) normalised units


class SpeechReconstructor(nn.Module):
    def __init__(self, cfg: TtsConfig, phonemes: Sequence[str]):
        super().__init__()
        self.cfg = cfg
        self.phonemes = list(phonemes)
        self._phone_index = {p: i for i, p in enumerate(self.phonemes)}
        W = cfg.width
        self.phone_embed = make_layer(LayerSpec("embedding", {"num_embeddings": len(self.phonemes), "dim": W}, "phone_emb"))
        self.speaker_embed = make_layer(LayerSpec("embedding", {"num_embeddings": cfg.n_speakers, "dim": W}, "speaker_emb"))
        block = lambda n: make_layer(LayerSpec("transformer_block", {"d_model": W, "heads": cfg.heads, "ff": cfg.ff}, n))
        self.encoder = nn.ModuleList([block(f"tts_enc{i}") for i in range(cfg.enc_layers)])
        self.decoder = nn.ModuleList([block(f"tts_dec{i}") for i in range(cfg.dec_layers)])
        self.duration_head = VariancePredictor(W, cfg.predictor_hidden, "duration")
        self.pitch_head = VariancePredictor(W, cfg.predictor_hidden, "pitch")
        self.power_head = VariancePredictor(W, cfg.predictor_hidden, "power")
        self.pitch_embed = make_layer(LayerSpec("embedding", {"num_embeddings": cfg.bins, "dim": W}, "pitch_emb"))
        self.power_embed = make_layer(LayerSpec("embedding", {"num_embeddings": cfg.bins, "dim": W}, "power_emb"))
        self.out = make_layer(LayerSpec("fc", {"in_features": W, "out_features": cfg.n_mels}, "tts_out"))
        # quantisation ranges and normalisation statistics, set by calibrate()
        self.register_buffer("pitch_range", torch.tensor([0.0, 400.0]))
        self.register_buffer("power_range", torch.tensor([math.log(LOG_FLOOR), 0.0]))
        self.register_buffer("pitch_stats", torch.tensor([0.0, 1.0]))
        self.register_buffer("power_stats", torch.tensor([0.0, 1.0]))
        self.use_positions = True

    # calibration -----------------------------------------------------------

    def calibrate(self, pitch_values: np.ndarray, power_values: np.ndarray) -> None:
        """Bin ranges from the 1st-99th percentile; statistics for the heads."""
        for vals, rng, stats in ((pitch_values, self.pitch_range, self.pitch_stats),
                                 (power_values, self.power_range, self.power_stats)):
            v = np.asarray(vals, dtype=np.float64)
            lo, hi = np.percentile(v, [1, 99])
            if hi <= lo:
                hi = lo + 1.0
            rng.copy_(torch.tensor([lo, hi]))
            stats.copy_(torch.tensor([v.mean(), v.std() + 1e-3]))

    def quantize(self, values: torch.Tensor, which: str) -> torch.Tensor:
        lo, hi = (self.pitch_range if which == "pitch" else self.power_range).tolist()
        scaled = (values.double() - lo) / (hi - lo) * (self.cfg.bins - 1)
        return torch.round(scaled).clamp(0, self.cfg.bins - 1).to(torch.int64)

    def normalize(self, values: torch.Tensor, which: str) -> torch.Tensor:
        mean, std = (self.pitch_stats if which == "pitch" else self.power_stats).tolist()
        return (values - mean) / std

    def denormalize(self, values: torch.Tensor, which: str) -> torch.Tensor:
        mean, std = (self.pitch_stats if which == "pitch" else self.power_stats).tolist()
        return values * std + mean

    # model -----------------------------------------------------------------

    def phoneme_ids(self, phonemes: Sequence[str]) -> list[int]:
        try:
            return [self._phone_index[p] for p in phonemes]
        except KeyError as e:
            raise InputError(f"unknown phoneme {e.args[0]!r}") from None

    def _positions(self, length: int) -> torch.Tensor:
        if not self.use_positions:
            return torch.zeros(length, self.cfg.width)
        return sinusoid_positions(length, self.cfg.width)

    def tts_encode(self, ids: torch.Tensor, lengths: torch.Tensor, speakers: torch.Tensor) -> EncodedPhonemes:
        B, P = ids.shape
        mask = torch.arange(P)[None, :] < lengths[:, None]
        x = self.phone_embed(ids) + self._positions(P)[None]
        for blk in self.encoder:
            x = blk(x, padding_mask=~mask)
        x = (x + self.speaker_embed(speakers)[:, None, :]) * mask[..., None]
        return EncodedPhonemes(x, mask, F.softplus(self.duration_head(x)), self.pitch_head(x), self.power_head(x))

    def tts_decode(self, frame_latent: torch.Tensor, frame_pitch: torch.Tensor, frame_power: torch.Tensor,
                   frame_mask: torch.Tensor) -> torch.Tensor:
        """(B, T, W) latents with real-valued per-frame pitch/power -> (B, T, 40)."""
        B, T, _ = frame_latent.shape
        if T == 0:
            return frame_latent.new_zeros(B, 0, self.cfg.n_mels)
        x = (frame_latent + self.pitch_embed(self.quantize(frame_pitch, "pitch"))
             + self.power_embed(self.quantize(frame_power, "power")) + self._positions(T)[None])
        for blk in self.decoder:
            x = blk(x, padding_mask=~frame_mask)
        return self.out(x)

    def regulate_batch(self, enc: EncodedPhonemes, durations: torch.Tensor, pitch: torch.Tensor,
                       power: torch.Tensor):
        """Expand phoneme-level latents and real-valued pitch/power to frames."""
        B = enc.latent.shape[0]
        lat, pit, pw = [], [], []
        for b in range(B):
            n = int(enc.mask[b].sum())
            d = durations[b, :n]
            lat.append(length_regulate(enc.latent[b, :n], d))
            pit.append(torch.repeat_interleave(pitch[b, :n], d.to(torch.int64)))
            pw.append(torch.repeat_interleave(power[b, :n], d.to(torch.int64)))
        T = max((len(x) for x in lat), default=0)
        frame_mask = torch.zeros(B, T, dtype=torch.bool)
        L = enc.latent.new_zeros(B, T, self.cfg.width)
        Pt = torch.zeros(B, T, dtype=pitch.dtype)
        Pw = torch.zeros(B, T, dtype=power.dtype)
        for b in range(B):
            n = len(lat[b])
            L[b, :n], Pt[b, :n], Pw[b, :n] = lat[b], pit[b], pw[b]
            frame_mask[b, :n] = True
        return L, Pt, Pw, frame_mask

    def forward(self, ids, lengths, speakers, durations, pitch, power):
        """Teacher-conditioned pass used in training: returns the spectrum
        (B, T, 40), its frame mask and the phoneme-level predictions."""
        enc = self.tts_encode(ids, lengths, speakers)
        L, Pt, Pw, fmask = self.regulate_batch(enc, durations, pitch, power)
        return self.tts_decode(L, Pt, Pw, fmask), fmask, enc


def predicted_durations(raw: torch.Tensor) -> torch.Tensor:
    """Whole-frame durations from the duration head: rounded up, at least 1."""
    return torch.ceil(raw.detach()).clamp_min(1).to(torch.int64)


@dataclass
class Synthesis:
    spectrum: SpectrumSequence
    durations: np.ndarray
    pitch: np.ndarray
    power: np.ndarray


@torch.no_grad()
def synthesize(model: SpeechReconstructor, phonemes: Sequence[str], speaker_id: int = 0,
               info: AdditionalSpeechInfo | None = None, use_pitch: bool = True, use_power: bool = True,
               utterance_id: str = "") -> Synthesis:
    """Spectrum for one phoneme string.

    With ``info`` the transmitted durations are used (and pitch/power when the
    matching flag is set); any phonemes beyond those ``info`` covers fall back
    to the model's own predictions.
    """
    if not phonemes:
        return Synthesis(SpectrumSequence(np.zeros((0, model.cfg.n_mels)), utterance_id),
                         np.zeros(0, np.int64), np.zeros(0), np.zeros(0))
    ids = torch.tensor([model.phoneme_ids(phonemes)])
    spk = info.speaker_id if info is not None else speaker_id
    enc = model.tts_encode(ids, torch.tensor([len(phonemes)]), torch.tensor([spk]))
    dur = predicted_durations(enc.duration[0])
    pitch = model.denormalize(enc.pitch[0], "pitch")
    power = model.denormalize(enc.power[0], "power")
    if info is not None:
        k = min(len(info), len(phonemes))
        dur[:k] = torch.from_numpy(info.durations[:k].astype(np.int64)).clamp_min(1)
        if use_pitch:
            pitch[:k] = torch.from_numpy(info.pitch[:k].astype(np.float32))
        if use_power:
            power[:k] = torch.from_numpy(info.power[:k].astype(np.float32))
    L, Pt, Pw, fmask = model.regulate_batch(enc, dur[None], pitch[None], power[None])
    spec = model.tts_decode(L, Pt, Pw, fmask)[0]
    return Synthesis(SpectrumSequence(spec.double().numpy(), utterance_id), dur.numpy(),
                     pitch.double().numpy(), power.double().numpy())


# phase reconstruction ---------------------------------------------------------

_WIN = np.hamming(WINDOW)


def _stft(x: np.ndarray, n_frames: int) -> np.ndarray:
    idx = np.arange(WINDOW)[None, :] + HOP * np.arange(n_frames)[:, None]
    return np.fft.rfft(x[idx] * _WIN, n=N_FFT, axis=1)


def _istft(spec: np.ndarray, n_samples: int) -> np.ndarray:
    frames = np.fft.irfft(spec, n=N_FFT, axis=1)[:, :WINDOW] * _WIN
    out = np.zeros(n_samples)
    norm = np.zeros(n_samples)
    for t, f in enumerate(frames):
        out[t * HOP: t * HOP + WINDOW] += f
        norm[t * HOP: t * HOP + WINDOW] += _WIN ** 2
    return out / np.maximum(norm, 1e-8)


def spectrum_to_audio(spectrum, iterations: int = 32, seed: int = 0, speaker_id: int = 0) -> AudioClip:
    """Invert log-mel frames: pseudo-inverse of the filterbank for the
    magnitude, then Griffin-Lim phase iterations from a seeded start."""
    S = spectrum.frames if isinstance(spectrum, SpectrumSequence) else np.asarray(spectrum, dtype=np.float64)
    uid = spectrum.utterance_id if isinstance(spectrum, SpectrumSequence) else ""
    if len(S) == 0:
        return AudioClip(np.zeros(0), SAMPLE_RATE, uid, speaker_id)
    fb = mel_filterbank(S.shape[1])
    mag = np.clip(np.exp(S) @ np.linalg.pinv(fb).T, 0.0, None)
    n_samples = (len(S) - 1) * HOP + WINDOW
    phase = np.exp(2j * np.pi * np.random.default_rng(seed).random(mag.shape))
    x = _istft(mag * phase, n_samples)
    for _ in range(iterations):
        est = _stft(x, len(S))
        x = _istft(mag * np.exp(1j * np.angle(est)), n_samples)
    return AudioClip(x, SAMPLE_RATE, uid, speaker_id)
