"""Signal front-end: STFT analysis/synthesis, magnitudes, column normalisation, WAV I/O.

Framing convention: frames are taken without centre padding, so a signal of
``n`` samples yields ``1 + (n - n_fft) // hop`` frames and signals shorter than
one frame are rejected. Synthesis is weighted overlap-add normalised by the
summed squared window; samples whose window envelope falls below
``ENVELOPE_FLOOR`` (relative to its peak) are attenuated instead of amplified,
which only affects the first/last few samples of a signal.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F
from scipy.io import wavfile
from scipy.signal import check_COLA

ENVELOPE_FLOOR = 1e-4

_WINDOWS = {
    "hann": lambda n, dtype: torch.hann_window(n, periodic=True, dtype=dtype),
    "hamming": lambda n, dtype: torch.hamming_window(n, periodic=True, dtype=dtype),
}


@dataclass(frozen=True)
class StftConfig:
    """STFT parameters. Defaults are 40 ms / 10 ms at 16 kHz (25 Hz bins)."""

    n_fft: int = 640
    hop: int = 160
    window: str = "hann"

    def __post_init__(self):
        if not 0 < self.hop <= self.n_fft:
            raise ValueError(f"need 0 < hop <= n_fft, got hop={self.hop}, n_fft={self.n_fft}")
        if self.window not in _WINDOWS:
            raise ValueError(f"unknown window {self.window!r}; choose from {sorted(_WINDOWS)}")
        if not check_COLA(self.window, self.n_fft, self.n_fft - self.hop):
            raise ValueError(
                f"{self.window} window of {self.n_fft} samples is not COLA at hop {self.hop}"
            )

    @property
    def n_bins(self) -> int:
        return self.n_fft // 2 + 1

    def n_frames(self, n_samples: int) -> int:
        return 1 + (n_samples - self.n_fft) // self.hop

    def frame_length(self, n_frames: int) -> int:
        """Number of samples spanned by ``n_frames`` frames."""
        return self.n_fft + self.hop * (n_frames - 1)


def get_window(cfg: StftConfig, dtype=torch.float32, device=None) -> torch.Tensor:
    return _WINDOWS[cfg.window](cfg.n_fft, dtype).to(device)


def _as_tensor(x):
    if isinstance(x, torch.Tensor):
        return x, False
    return torch.as_tensor(np.asarray(x)), True


def stft(x, cfg: StftConfig):
    """Complex one-sided STFT of ``x`` with shape ``(..., n_samples)``.

    Returns an array of shape ``(..., n_fft // 2 + 1, n_frames)``; numpy input
    gives numpy output, tensors stay tensors (and differentiable).
    """
    t, to_numpy = _as_tensor(x)
    if not t.is_floating_point():
        t = t.to(torch.get_default_dtype())
    n = t.shape[-1]
    if n < cfg.n_fft:
        raise ValueError(f"signal has {n} samples, shorter than one frame ({cfg.n_fft})")
    lead = t.shape[:-1]
    spec = torch.stft(
        t.reshape(-1, n),
        cfg.n_fft,
        cfg.hop,
        window=get_window(cfg, t.dtype, t.device),
        center=False,
        return_complex=True,
    )
    spec = spec.reshape(*lead, *spec.shape[-2:])
    return spec.numpy() if to_numpy else spec


def istft(s, cfg: StftConfig, length: int | None = None):
    """Weighted overlap-add inverse of :func:`stft`.

    ``length`` pads with zeros or truncates the result; by default the output
    spans exactly the analysed frames.
    """
    t, to_numpy = _as_tensor(s)
    if not t.is_complex():
        raise TypeError("istft expects a complex spectrogram")
    if t.ndim < 2 or t.shape[-2] != cfg.n_bins:
        raise ValueError(
            f"spectrogram with shape {tuple(t.shape)} does not match n_fft={cfg.n_fft} "
            f"({cfg.n_bins} bins expected)"
        )
    lead = t.shape[:-2]
    n_frames = t.shape[-1]
    t = t.reshape(-1, cfg.n_bins, n_frames)
    win = get_window(cfg, t.real.dtype, t.device)
    frames = torch.fft.irfft(t, n=cfg.n_fft, dim=1) * win[:, None]
    out_len = cfg.frame_length(n_frames)
    fold = dict(output_size=(1, out_len), kernel_size=(1, cfg.n_fft), stride=(1, cfg.hop))
    y = F.fold(frames, **fold).reshape(t.shape[0], out_len)
    env = F.fold((win**2)[None, :, None].expand(1, -1, n_frames), **fold).reshape(out_len)
    y = y / env.clamp_min(ENVELOPE_FLOOR * env.max())
    if length is not None:
        y = y[:, :length] if length <= out_len else F.pad(y, (0, length - out_len))
    y = y.reshape(*lead, y.shape[-1])
    return y.numpy() if to_numpy else y


def magnitude(s):
    """Entrywise complex modulus."""
    if isinstance(s, torch.Tensor):
        return s.abs()
    return np.abs(s)


def length_normalize_columns(m, eps: float = 0.0):
    """Scale every column (axis -2 holds the features) to unit L2 norm.

    All-zero columns stay zero. Works on numpy arrays and (differentiably) on
    tensors.
    """
    if isinstance(m, torch.Tensor):
        sq = (m * m).sum(dim=-2, keepdim=True)
        nonzero = sq > eps
        safe = torch.where(nonzero, sq, torch.ones_like(sq))
        return torch.where(nonzero, m * torch.rsqrt(safe), torch.zeros_like(m))
    m = np.asarray(m, dtype=float)
    norm = np.linalg.norm(m, axis=-2, keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        out = m / norm
    return np.where(norm > 0, out, 0.0)


def read_wav(path, sample_rate: int = 16000) -> np.ndarray:
    """Read a mono 16-bit PCM or float32 WAV as float32 samples in [-1, 1].

    Files at any other rate are rejected; nothing is resampled.
    """
    rate, data = wavfile.read(path)
    if rate != sample_rate:
        raise ValueError(f"{path}: sample rate {rate} Hz, expected {sample_rate} Hz")
    if data.ndim != 1:
        raise ValueError(f"{path}: expected mono audio, got {data.shape[1]} channels")
    if data.dtype == np.int16:
        return data.astype(np.float32) / 32768.0
    if data.dtype == np.float32:
        return data
    raise ValueError(f"{path}: unsupported sample format {data.dtype}")


def write_wav(path, samples, sample_rate: int = 16000, pcm16: bool = False) -> None:
    samples = np.asarray(samples, dtype=np.float32)
    if samples.ndim != 1:
        raise ValueError("write_wav expects a mono 1-D signal")
    if pcm16:
        samples = (np.clip(samples, -1.0, 32767 / 32768) * 32768).astype(np.int16)
    wavfile.write(path, sample_rate, samples)
