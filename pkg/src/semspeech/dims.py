"""Network sizes. Defaults reproduce the published layer table; ``toy()`` is
the scaled-down variant used for CPU-sized experiments."""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields


@dataclass(frozen=True)
class ModelDims:
    n_mels: int = 40
    vgg_channels: tuple[int, int] = (128, 256)
    blstm_layers: int = 4
    blstm_width: int = 1024
    fc_width: int = 1024
    att_dim: int = 300
    att_energy_scale: float = 2.0  # sharpens the attention softmax
    loc_filters: int = 10
    loc_kernel: int = 201
    loc_padding: int = 100
    recurrent: str = "gru"  # or "lstm"
    latent_width: int = 1024
    token_emb: int = 128
    chan_hidden: int = 256
    symbols_per_token: int = 32
    chan_dec_hidden: int = 256
    lm_emb: int = 128
    lm_hidden: int = 2048
    lm_layers: int = 2
    lm_fc: int = 512
    tts_width: int = 256
    tts_heads: int = 2
    tts_enc_layers: int = 4
    tts_dec_layers: int = 6
    tts_ff: int = 1024
    tts_bins: int = 256
    tts_predictor_hidden: int = 256
    n_speakers: int = 256

    @property
    def reduced_mels(self) -> int:
        return self.n_mels // 4

    @property
    def real_per_token(self) -> int:
        return 2 * self.symbols_per_token

    @classmethod
    def toy(cls) -> "ModelDims":
        return cls(vgg_channels=(8, 16), blstm_layers=1, blstm_width=96, fc_width=96, att_dim=48,
                   loc_filters=10, loc_kernel=201, loc_padding=100, latent_width=96, token_emb=32,
                   chan_hidden=128, chan_dec_hidden=128, lm_emb=32, lm_hidden=96, lm_layers=2, lm_fc=64,
                   tts_width=64, tts_heads=2, tts_enc_layers=2, tts_dec_layers=3, tts_ff=128,
                   tts_predictor_hidden=64, n_speakers=16)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["vgg_channels"] = list(self.vgg_channels)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelDims":
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            from .errors import ConfigError
            raise ConfigError(f"unknown model dimension keys: {sorted(unknown)}")
        d = dict(d)
        if "vgg_channels" in d:
            d["vgg_channels"] = tuple(d["vgg_channels"])
        return cls(**d)
