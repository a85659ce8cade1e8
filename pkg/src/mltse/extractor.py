"""Band-split recurrent mask estimator conditioned on speaker cues.

Signal path::

    mixture -> STFT -> [concat TF-Map per band] -> band encoder (N x D_x x T)
            -> [multiplicative gates from contextual / speaker embedding]
            -> n_blocks x (BiLSTM over time, BiLSTM over bands)
            -> per-band complex mask -> iSTFT
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np
import torch
import torch.nn as nn

from .dsp import StftConfig, istft, stft
from .encoder import EncoderConfig, ToySpeakerEncoder, align_frames, pool
from .features import (
    CrossAttention,
    tf_map,
    tile_speaker_embedding,
    weight_matrix_embedding,
    weight_matrix_spectral,
)

# (bandwidth Hz, upper edge Hz) for the 16 kHz scheme: 15 + 10 + 5 + 1 bands.
PAPER_BAND_LAYOUT = ((100, 1500), (200, 3500), (500, 6000), (2000, 8000))


@dataclass(frozen=True)
class BandSplitScheme:
    """Inclusive ``(start_bin, end_bin)`` ranges partitioning all STFT bins."""

    bands: tuple[tuple[int, int], ...]

    def __post_init__(self):
        expected = 0
        for start, end in self.bands:
            if start != expected or end < start:
                raise ValueError(f"bands must be contiguous and non-empty, got {self.bands}")
            expected = end + 1

    @property
    def n_bins(self) -> int:
        return self.bands[-1][1] + 1

    @property
    def widths(self) -> list[int]:
        return [end - start + 1 for start, end in self.bands]

    def __len__(self):
        return len(self.bands)


def build_band_scheme(sample_rate: int, cfg: StftConfig, nyquist_band: bool = True) -> BandSplitScheme:
    """The 100/200/500/2000 Hz band layout used for 16 kHz speech.

    Those widths give 31 bands below Nyquist; the Nyquist bin is its own 32nd
    band unless ``nyquist_band=False`` folds it into the last band.
    """
    if sample_rate != 2 * PAPER_BAND_LAYOUT[-1][1]:
        raise ValueError(f"band layout is defined for 16 kHz audio, got {sample_rate} Hz")
    bin_hz = sample_rate / cfg.n_fft
    bands = []
    lo = 0
    for width, upper in PAPER_BAND_LAYOUT:
        w = width / bin_hz
        if abs(w - round(w)) > 1e-9:
            compatible = [n for n in range(64, 4097, 32) if all(
                (bw * n / sample_rate).is_integer() for bw, _ in PAPER_BAND_LAYOUT)]
            raise ValueError(
                f"{width} Hz is not a whole number of {bin_hz:g} Hz bins; "
                f"use an n_fft such as {compatible[:4]}"
            )
        w = round(w)
        while lo < round(upper / bin_hz):
            bands.append((lo, lo + w - 1))
            lo += w
    nyq = cfg.n_fft // 2
    if nyquist_band:
        bands.append((nyq, nyq))
    else:
        bands[-1] = (bands[-1][0], nyq)
    return BandSplitScheme(tuple(bands))


def uniform_band_scheme(n_bins: int, n_bands: int) -> BandSplitScheme:
    edges = np.array_split(np.arange(n_bins), n_bands)
    return BandSplitScheme(tuple((int(e[0]), int(e[-1])) for e in edges))


@dataclass
class FeatureConfig:
    """Which speaker cues are active and how they are built and fused."""

    tf_map: str = "off"  # off | spec | emb
    contextual: bool = False
    spk_emb: bool = False
    softmax_axis: str = "enrollment"
    energy: str = "projection"
    fusion_site: str = "once"  # once | every_block
    context_query: str = "encoded"  # encoded | magnitude
    d_k: int | None = None  # defaults to d_x

    def __post_init__(self):
        if self.tf_map not in ("off", "spec", "emb"):
            raise ValueError(f"tf_map must be off/spec/emb, got {self.tf_map!r}")
        if self.fusion_site not in ("once", "every_block"):
            raise ValueError(f"unknown fusion site {self.fusion_site!r}")
        if self.context_query not in ("encoded", "magnitude"):
            raise ValueError(f"unknown context query {self.context_query!r}")

    @property
    def needs_encoder(self) -> bool:
        return self.tf_map == "emb" or self.contextual or self.spk_emb

    @property
    def any(self) -> bool:
        return self.tf_map != "off" or self.contextual or self.spk_emb


@dataclass
class ExtractorConfig:
    sample_rate: int = 16000
    stft: StftConfig = field(default_factory=StftConfig)
    band_scheme: str = "paper"  # paper | uniform
    n_bands: int = 32  # used by the uniform scheme
    nyquist_band: bool = True
    d_x: int = 128
    rnn_hidden: int = 192
    n_blocks: int = 6
    features: FeatureConfig = field(default_factory=FeatureConfig)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)

    def __post_init__(self):
        if self.n_blocks < 1:
            raise ValueError("n_blocks must be >= 1")

    def scheme(self) -> BandSplitScheme:
        if self.band_scheme == "paper":
            return build_band_scheme(self.sample_rate, self.stft, self.nyquist_band)
        if self.band_scheme == "uniform":
            return uniform_band_scheme(self.stft.n_bins, self.n_bands)
        raise ValueError(f"unknown band scheme {self.band_scheme!r}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ExtractorConfig":
        d = dict(d)
        d["stft"] = StftConfig(**d["stft"])
        d["features"] = FeatureConfig(**d["features"])
        d["encoder"] = EncoderConfig(**d["encoder"])
        return cls(**d)

    @classmethod
    def paper(cls, features: FeatureConfig | None = None) -> "ExtractorConfig":
        return cls(features=features or FeatureConfig())

    @classmethod
    def desk(cls, features: FeatureConfig | None = None) -> "ExtractorConfig":
        """8 kHz, 8 uniform bands, small widths: trains in minutes on a CPU."""
        return cls(
            sample_rate=8000,
            stft=StftConfig(n_fft=256, hop=64),
            band_scheme="uniform",
            n_bands=8,
            d_x=32,
            rnn_hidden=48,
            n_blocks=3,
            features=features or FeatureConfig(),
            encoder=EncoderConfig(d_e=64, channels=64, rnn_hidden=32),
        )


@dataclass
class FeatureBundle:
    """Speaker cues for one batch. Unused cues are ``None``."""

    tf_map: torch.Tensor | None = None  # (B, F, T_x)
    enroll_frames: torch.Tensor | None = None  # (B, D_e, T_e), for cross-attention
    spk_embedding: torch.Tensor | None = None  # (B, D_pooled)


class BandSplitEncoder(nn.Module):
    """Per-band norm + linear projection of real/imag bins to ``d_x`` features.

    The TF-Map, when enabled, is normalised separately and projected without
    bias, so an all-zero TF-Map contributes nothing.
    """

    def __init__(self, scheme: BandSplitScheme, d_x: int, with_tf_map: bool = False):
        super().__init__()
        self.scheme = scheme
        self.spec_norm = nn.ModuleList(nn.LayerNorm(2 * w) for w in scheme.widths)
        self.spec_proj = nn.ModuleList(nn.Linear(2 * w, d_x) for w in scheme.widths)
        self.tf_norm = self.tf_proj = None
        if with_tf_map:
            self.tf_norm = nn.ModuleList(nn.LayerNorm(w, bias=False) for w in scheme.widths)
            self.tf_proj = nn.ModuleList(nn.Linear(w, d_x, bias=False) for w in scheme.widths)

    def forward(self, spec: torch.Tensor, tf: torch.Tensor | None = None) -> torch.Tensor:
        """``(B, F, T)`` complex -> ``(B, N, d_x, T)``."""
        if spec.shape[-2] != self.scheme.n_bins:
            raise ValueError(f"spectrogram has {spec.shape[-2]} bins, scheme covers {self.scheme.n_bins}")
        if (tf is None) != (self.tf_proj is None):
            raise ValueError("TF-Map input must be given exactly when the TF-Map branch exists")
        if tf is not None and tf.shape[-1] != spec.shape[-1]:
            raise ValueError(f"TF-Map has {tf.shape[-1]} frames, mixture has {spec.shape[-1]}")
        out = []
        for b, (start, end) in enumerate(self.scheme.bands):
            sub = spec[:, start : end + 1].transpose(1, 2)
            h = self.spec_proj[b](self.spec_norm[b](torch.cat([sub.real, sub.imag], dim=-1)))
            if tf is not None:
                h = h + self.tf_proj[b](self.tf_norm[b](tf[:, start : end + 1].transpose(1, 2)))
            out.append(h.transpose(1, 2))
        return torch.stack(out, dim=1)


class FusionGate(nn.Module):
    """``x * (W f + b)`` applied to every band; ``b`` starts at one."""

    def __init__(self, in_dim: int, d_x: int, identity: bool = False):
        super().__init__()
        self.proj = nn.Linear(in_dim, d_x)
        nn.init.ones_(self.proj.bias)
        if identity:
            nn.init.zeros_(self.proj.weight)

    def forward(self, x: torch.Tensor, f: torch.Tensor) -> torch.Tensor:
        """``x``: ``(B, N, d_x, T)``; ``f``: ``(B, T, in_dim)``."""
        if f.shape[-2] != x.shape[-1]:
            raise ValueError(f"feature has {f.shape[-2]} frames, band features have {x.shape[-1]}")
        return x * self.proj(f).transpose(1, 2).unsqueeze(1)


class _AxisRNN(nn.Module):
    def __init__(self, d: int, hidden: int):
        super().__init__()
        self.norm = nn.LayerNorm(d)
        self.rnn = nn.LSTM(d, hidden, batch_first=True, bidirectional=True)
        self.proj = nn.Linear(2 * hidden, d)

    def forward(self, x):
        return x + self.proj(self.rnn(self.norm(x))[0])


class DualPathBlock(nn.Module):
    def __init__(self, d: int, hidden: int):
        super().__init__()
        self.time = _AxisRNN(d, hidden)
        self.band = _AxisRNN(d, hidden)

    def forward(self, x):
        b, n, d, t = x.shape
        x = self.time(x.permute(0, 1, 3, 2).reshape(b * n, t, d)).reshape(b, n, t, d)
        x = self.band(x.permute(0, 2, 1, 3).reshape(b * t, n, d)).reshape(b, t, n, d)
        return x.permute(0, 2, 3, 1)


class SequenceModel(nn.Module):
    def __init__(self, d: int, hidden: int, n_blocks: int):
        super().__init__()
        self.blocks = nn.ModuleList(DualPathBlock(d, hidden) for _ in range(n_blocks))

    def forward(self, x, gate_fn=None):
        for block in self.blocks:
            if gate_fn is not None:
                x = gate_fn(x)
            x = block(x)
        return x


class MaskDecoder(nn.Module):
    """Per-band MLP with GLU output giving real and imaginary mask values."""

    def __init__(self, scheme: BandSplitScheme, d_x: int):
        super().__init__()
        self.scheme = scheme
        self.mlps = nn.ModuleList(
            nn.Sequential(
                nn.LayerNorm(d_x),
                nn.Linear(d_x, 4 * d_x),
                nn.Tanh(),
                nn.Linear(4 * d_x, 4 * w),
                nn.GLU(dim=-1),
            )
            for w in scheme.widths
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        """``(B, N, d_x, T)`` -> complex mask ``(B, F, T)``."""
        parts = []
        for b, w in enumerate(self.scheme.widths):
            m = self.mlps[b](x[:, b].transpose(1, 2))  # (B, T, 2w)
            parts.append(torch.complex(m[..., :w], m[..., w:]).transpose(1, 2))
        return torch.cat(parts, dim=1)


def apply_mask(mask, spec, cfg: StftConfig, length: int) -> torch.Tensor:
    return istft(mask * spec, cfg, length=length)


class TargetSpeakerExtractor(nn.Module):
    """Full extractor including its speaker encoder and cue-fusion layers."""

    def __init__(self, cfg: ExtractorConfig):
        super().__init__()
        self.cfg = cfg
        fc = cfg.features
        self.scheme = cfg.scheme()
        # Shared modules are created first so that, for a given seed, every
        # feature configuration starts from the same separator weights.
        self.separator = SequenceModel(cfg.d_x, cfg.rnn_hidden, cfg.n_blocks)
        self.decoder = MaskDecoder(self.scheme, cfg.d_x)
        self.band_encoder = BandSplitEncoder(self.scheme, cfg.d_x, with_tf_map=fc.tf_map != "off")
        self.speaker_encoder = None
        if fc.needs_encoder and cfg.encoder.mode == "toy":
            self.speaker_encoder = ToySpeakerEncoder(cfg.encoder, cfg.stft, cfg.sample_rate)
        d_k = fc.d_k or cfg.d_x
        self.context_attention = self.context_gate = self.speaker_gate = None
        if fc.contextual:
            d_query = cfg.d_x if fc.context_query == "encoded" else cfg.stft.n_bins
            self.context_attention = CrossAttention(d_query, cfg.encoder.d_e, d_k)
            self.context_gate = FusionGate(d_k, cfg.d_x)
        if fc.spk_emb:
            self.speaker_gate = FusionGate(cfg.encoder.pooled_dim, cfg.d_x)

    @property
    def frame_hop(self) -> float:
        if self.speaker_encoder is not None:
            return self.speaker_encoder.frame_hop
        return self.cfg.encoder.stride * self.cfg.stft.hop / self.cfg.sample_rate

    def features(
        self,
        mixture: torch.Tensor,
        enrollment: torch.Tensor | None,
        enroll_frames: torch.Tensor | None = None,
        mix_frames: torch.Tensor | None = None,
        frame_hop: float | None = None,
    ) -> FeatureBundle:
        """Build the active speaker cues for a ``(B, L)`` mixture batch.

        With the toy encoder, frame embeddings are computed from the
        waveforms; in precomputed mode they must be passed in (along with
        their ``frame_hop``).
        """
        fc = self.cfg.features
        bundle = FeatureBundle()
        if not fc.any:
            return bundle
        if fc.needs_encoder and enroll_frames is None:
            if self.speaker_encoder is None:
                raise ValueError("precomputed encoder mode needs enrollment frame embeddings")
            enroll_frames = self.speaker_encoder(enrollment)
        hop = frame_hop or self.frame_hop
        if fc.tf_map != "off":
            mix_mag = stft(mixture, self.cfg.stft).abs()
            enroll_mag = stft(enrollment, self.cfg.stft).abs()
            if fc.tf_map == "spec":
                weights = weight_matrix_spectral(enroll_mag, mix_mag, fc.softmax_axis)
            else:
                if mix_frames is None:
                    if self.speaker_encoder is None:
                        raise ValueError("precomputed encoder mode needs mixture frame embeddings")
                    mix_frames = self.speaker_encoder(mixture)
                # Both embedding sequences move onto their STFT frame grids so
                # the weights pair enrollment columns with mixture columns.
                grid = dict(stft_cfg=self.cfg.stft, sample_rate=self.cfg.sample_rate)
                weights = weight_matrix_embedding(
                    align_frames(enroll_frames, hop, enroll_mag.shape[-1], **grid),
                    align_frames(mix_frames, hop, mix_mag.shape[-1], **grid),
                    fc.softmax_axis,
                )
            bundle.tf_map = tf_map(enroll_mag, weights, mix_mag, fc.energy)
        if fc.contextual:
            bundle.enroll_frames = enroll_frames
        if fc.spk_emb:
            bundle.spk_embedding = pool(enroll_frames, self.cfg.encoder.pooling)
        return bundle

    def separate(self, mixture: torch.Tensor, bundle: FeatureBundle) -> torch.Tensor:
        """Estimate the target waveform, same length as ``mixture``."""
        fc = self.cfg.features
        spec = stft(mixture, self.cfg.stft)
        x = self.band_encoder(spec, bundle.tf_map)
        gates = []
        if self.context_gate is not None:
            if fc.context_query == "encoded":
                query = x.mean(dim=1)
            else:
                query = spec.abs()
            ctx = self.context_attention(query, bundle.enroll_frames)
            gates.append((self.context_gate, ctx))
        if self.speaker_gate is not None:
            gates.append((self.speaker_gate, tile_speaker_embedding(bundle.spk_embedding, x.shape[-1])))

        def gate_fn(h):
            for gate, f in gates:
                h = gate(h, f)
            return h

        if gates and fc.fusion_site == "once":
            x = self.separator(gate_fn(x))
        else:
            x = self.separator(x, gate_fn if gates else None)
        return apply_mask(self.decoder(x), spec, self.cfg.stft, mixture.shape[-1])

    def forward(self, mixture, enrollment=None, **frames) -> torch.Tensor:
        return self.separate(mixture, self.features(mixture, enrollment, **frames))
