"""Speaker encoders producing frame-level and pooled utterance-level embeddings.

Two sources are supported: a small trainable convolutional/recurrent encoder
for desk-scale work, and an on-disk archive of embeddings exported from an
external pre-trained model.

Archive layout (``<root>/index.json`` plus one binary file per utterance)::

    {"version": 1,
     "utterances": {"<utt_id>": {"file": "<utt_id>.f32", "d_e": 192,
                                 "n_frames": 301, "frame_hop": 0.01}}}

Each ``.f32`` file holds little-endian float32 values in row-major
``d_e x n_frames`` order, with no header.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .dsp import StftConfig, stft

INDEX_NAME = "index.json"


@dataclass
class EncoderConfig:
    d_e: int = 64
    mode: str = "toy"  # toy | precomputed
    channels: int = 128
    rnn_hidden: int = 64
    stride: int = 2
    pooling: str = "mean"  # mean | mean_std
    freeze: bool = False
    archive: str | None = None

    def __post_init__(self):
        if self.d_e < 1:
            raise ValueError("d_e must be >= 1")
        if self.mode not in ("toy", "precomputed"):
            raise ValueError(f"unknown encoder mode {self.mode!r}")
        if self.pooling not in ("mean", "mean_std"):
            raise ValueError(f"unknown pooling {self.pooling!r}")

    @property
    def pooled_dim(self) -> int:
        return self.d_e * (2 if self.pooling == "mean_std" else 1)


@dataclass
class FrameEmbeddings:
    values: np.ndarray  # (d_e, n_frames)
    frame_hop: float  # seconds


class ToySpeakerEncoder(nn.Module):
    """Strided conv front-end over log-magnitude frames followed by a BiGRU.

    The waveform is padded by ``(n_fft - hop) / 2`` samples on each side so
    that an input of ``n`` samples gives ``ceil(n / hop)`` STFT frames; the
    strided convolution then divides the frame rate by ``stride``. At 16 kHz
    with a 10 ms hop and stride 2, 3 s of audio becomes 150 embedding frames.
    """

    def __init__(self, cfg: EncoderConfig, stft_cfg: StftConfig, sample_rate: int):
        super().__init__()
        self.cfg = cfg
        self.stft_cfg = stft_cfg
        self.sample_rate = sample_rate
        n_bins = stft_cfg.n_bins
        self.conv = nn.Sequential(
            nn.Conv1d(n_bins, cfg.channels, 3, stride=cfg.stride, padding=1),
            nn.ReLU(),
            nn.Conv1d(cfg.channels, cfg.channels, 3, padding=1),
            nn.ReLU(),
        )
        self.rnn = nn.GRU(cfg.channels, cfg.rnn_hidden, batch_first=True, bidirectional=True)
        self.head = nn.Linear(2 * cfg.rnn_hidden, cfg.d_e)
        if cfg.freeze:
            self.requires_grad_(False)

    @property
    def frame_hop(self) -> float:
        return self.cfg.stride * self.stft_cfg.hop / self.sample_rate

    def n_frames(self, n_samples: int) -> int:
        n_stft = -(-n_samples // self.stft_cfg.hop)
        return (n_stft - 1) // self.cfg.stride + 1

    def forward(self, wav: torch.Tensor) -> torch.Tensor:
        """``(B, n_samples)`` waveform -> ``(B, d_e, n_frames)`` embeddings."""
        c = self.stft_cfg
        left = (c.n_fft - c.hop) // 2
        n = wav.shape[-1]
        n_stft = -(-n // c.hop)
        right = c.frame_length(n_stft) - n - left
        padded = F.pad(wav, (left, right))
        feats = torch.log(stft(padded, c).abs() + 1e-5)
        feats = feats - feats.mean(dim=-1, keepdim=True)
        h = self.conv(feats).transpose(1, 2)
        h, _ = self.rnn(h)
        return self.head(h).transpose(1, 2)

    encode_frames = forward


def pool(frames: torch.Tensor, mode: str = "mean") -> torch.Tensor:
    """Temporal statistics pooling of ``(..., d_e, T)`` frames."""
    if frames.shape[-1] < 1:
        raise ValueError("cannot pool an empty frame sequence")
    mean = frames.mean(dim=-1)
    if mode == "mean":
        return mean
    if mode == "mean_std":
        return torch.cat([mean, frames.std(dim=-1, unbiased=False)], dim=-1)
    raise ValueError(f"unknown pooling mode {mode!r}")


def align_frames(
    frames: torch.Tensor,
    frame_hop: float,
    n_target: int,
    stft_cfg: StftConfig,
    sample_rate: int,
) -> torch.Tensor:
    """Resample embedding frames to the STFT frame grid by nearest frame.

    STFT frame ``t`` is centred at ``(t * hop + n_fft / 2) / sample_rate``
    seconds; embedding frame ``j`` covers ``[j, j + 1) * frame_hop``.
    """
    centres = (np.arange(n_target) * stft_cfg.hop + stft_cfg.n_fft / 2) / sample_rate
    idx = np.clip(np.floor(centres / frame_hop).astype(int), 0, frames.shape[-1] - 1)
    return frames[..., torch.as_tensor(idx, device=frames.device)]


def _file_name(utterance_id: str) -> str:
    return re.sub(r"[^A-Za-z0-9._-]", "_", utterance_id) + ".f32"


def _read_index(root: Path) -> dict:
    path = root / INDEX_NAME
    if not path.exists():
        return {"version": 1, "utterances": {}}
    return json.loads(path.read_text())


def store_precomputed(root, utterance_id: str, values, frame_hop: float) -> None:
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    values = np.asarray(values)
    if values.ndim != 2:
        raise ValueError("frame embeddings must be a 2-D (d_e, n_frames) array")
    index = _read_index(root)
    name = _file_name(utterance_id)
    values.astype("<f4").tofile(root / name)
    index["utterances"][utterance_id] = {
        "file": name,
        "d_e": int(values.shape[0]),
        "n_frames": int(values.shape[1]),
        "frame_hop": float(frame_hop),
    }
    (root / INDEX_NAME).write_text(json.dumps(index, indent=1, sort_keys=True))


def load_precomputed(root, utterance_id: str, d_e: int | None = None) -> FrameEmbeddings:
    root = Path(root)
    index = _read_index(root)["utterances"]
    if utterance_id not in index:
        raise KeyError(
            f"utterance {utterance_id!r} not in archive {root} ({len(index)} ids available)"
        )
    meta = index[utterance_id]
    if d_e is not None and meta["d_e"] != d_e:
        raise ValueError(
            f"archive embedding dimension {meta['d_e']} does not match configured d_e={d_e}"
        )
    path = root / meta["file"]
    if not path.exists():
        raise FileNotFoundError(f"embedding file missing: {path}")
    values = np.fromfile(path, dtype="<f4").reshape(meta["d_e"], meta["n_frames"])
    return FrameEmbeddings(values=values, frame_hop=meta["frame_hop"])


class PrecomputedEncoder:
    """Serves frame embeddings from an archive written by an external model."""

    def __init__(self, cfg: EncoderConfig):
        if cfg.archive is None:
            raise ValueError("precomputed encoder mode needs an archive directory")
        self.cfg = cfg
        self.root = Path(cfg.archive)

    def encode_frames(self, utterance_id: str) -> FrameEmbeddings:
        return load_precomputed(self.root, utterance_id, self.cfg.d_e)

    def batch(self, utterance_ids) -> tuple[torch.Tensor, float]:
        """Stack several utterances, right-padding by repeating the last frame."""
        embs = [self.encode_frames(u) for u in utterance_ids]
        hops = {e.frame_hop for e in embs}
        if len(hops) != 1:
            raise ValueError(f"mixed frame hops in batch: {sorted(hops)}")
        n = max(e.values.shape[1] for e in embs)
        out = np.stack([np.pad(e.values, ((0, 0), (0, n - e.values.shape[1])), mode="edge") for e in embs])
        return torch.from_numpy(out), hops.pop()
