"""Multi-level speaker cues built from an enrollment utterance.

Array layout follows the column convention used throughout: spectrograms and
frame embeddings are ``(..., dim, frames)``, weight matrices are
``(..., T_enroll, T_mix)``. Leading batch dimensions broadcast.

* TF-Map: each mixture frame gets a softmax distribution over enrollment
  frames (cosine similarity of magnitude spectra or of encoder embeddings);
  the enrollment magnitudes mixed by those weights are then rescaled to the
  mixture frame's energy.
* Contextual embedding: single-head cross-attention with the encoded mixture
  as queries and enrollment frame embeddings as keys/values.
* Speaker embedding: a pooled utterance vector repeated over mixture frames.
"""

from __future__ import annotations

import math

import torch
import torch.nn as nn

from .dsp import length_normalize_columns

SOFTMAX_AXES = ("enrollment", "mixture")
ENERGY_MODES = ("projection", "norm")


def _similarity_softmax(enroll, mix, axis: str) -> torch.Tensor:
    if enroll.shape[-2] != mix.shape[-2]:
        raise ValueError(
            f"feature dimension mismatch: enrollment {enroll.shape[-2]} vs mixture {mix.shape[-2]}"
        )
    if axis not in SOFTMAX_AXES:
        raise ValueError(f"softmax axis must be one of {SOFTMAX_AXES}, got {axis!r}")
    scores = length_normalize_columns(enroll).transpose(-1, -2) @ length_normalize_columns(mix)
    return torch.softmax(scores, dim=-2 if axis == "enrollment" else -1)


def weight_matrix_spectral(enroll_mag, mix_mag, axis: str = "enrollment") -> torch.Tensor:
    """Weights from cosine similarity between enrollment and mixture spectra.

    With the default ``axis="enrollment"`` every column (one per mixture
    frame) is a probability distribution over enrollment frames.
    """
    return _similarity_softmax(torch.as_tensor(enroll_mag), torch.as_tensor(mix_mag), axis)


def weight_matrix_embedding(enroll_frames, mix_frames, axis: str = "enrollment") -> torch.Tensor:
    """As :func:`weight_matrix_spectral`, on speaker-encoder frame embeddings.

    ``mix_frames`` must already be aligned to the mixture STFT frames.
    """
    return _similarity_softmax(torch.as_tensor(enroll_frames), torch.as_tensor(mix_frames), axis)


def tf_map(enroll_mag, weights, mix_mag, energy: str = "projection") -> torch.Tensor:
    """Similarity-weighted enrollment spectra with mixture energy restored.

    ``raw = enroll_mag @ weights``; each raw column is then replaced by the
    orthogonal projection of the matching mixture column onto its direction
    (``energy="projection"``) or rescaled to the mixture column's L2 norm
    (``energy="norm"``). All-zero raw columns stay zero.
    """
    enroll_mag, weights, mix_mag = map(torch.as_tensor, (enroll_mag, weights, mix_mag))
    if enroll_mag.shape[-1] != weights.shape[-2]:
        raise ValueError(
            f"{enroll_mag.shape[-1]} enrollment frames but weights have {weights.shape[-2]} rows"
        )
    if mix_mag.shape[-1] != weights.shape[-1] or mix_mag.shape[-2] != enroll_mag.shape[-2]:
        raise ValueError(
            f"mixture shape {tuple(mix_mag.shape[-2:])} incompatible with "
            f"({enroll_mag.shape[-2]}, {weights.shape[-1]})"
        )
    direction = length_normalize_columns(enroll_mag @ weights)
    if energy == "projection":
        scale = (mix_mag * direction).sum(dim=-2, keepdim=True)
    elif energy == "norm":
        scale = torch.linalg.vector_norm(mix_mag, dim=-2, keepdim=True)
    else:
        raise ValueError(f"energy mode must be one of {ENERGY_MODES}, got {energy!r}")
    return scale * direction


def contextual_embedding(mix_encoded, enroll_frames, w_q, w_k, w_v) -> torch.Tensor:
    """Cross-attention of mixture frames over enrollment frame embeddings.

    ``mix_encoded`` is ``(..., D_x, T_x)``, ``enroll_frames`` is
    ``(..., D_e, T_e)``; returns ``(..., T_x, d_k)``.
    """
    if w_q.shape[0] != mix_encoded.shape[-2]:
        raise ValueError(f"W_Q expects {w_q.shape[0]} input features, got {mix_encoded.shape[-2]}")
    if w_k.shape[0] != enroll_frames.shape[-2] or w_v.shape[0] != enroll_frames.shape[-2]:
        raise ValueError(
            f"W_K/W_V expect {w_k.shape[0]}/{w_v.shape[0]} input features, "
            f"got {enroll_frames.shape[-2]}"
        )
    if w_q.shape[1] != w_k.shape[1]:
        raise ValueError("W_Q and W_K must share the attention dimension")
    q = mix_encoded.transpose(-1, -2) @ w_q
    k = enroll_frames.transpose(-1, -2) @ w_k
    v = enroll_frames.transpose(-1, -2) @ w_v
    attn = torch.softmax(q @ k.transpose(-1, -2) / math.sqrt(w_q.shape[1]), dim=-1)
    return attn @ v


class CrossAttention(nn.Module):
    """Learnable query/key/value projections for :func:`contextual_embedding`."""

    def __init__(self, d_x: int, d_e: int, d_k: int):
        super().__init__()
        self.w_q = nn.Parameter(torch.empty(d_x, d_k))
        self.w_k = nn.Parameter(torch.empty(d_e, d_k))
        self.w_v = nn.Parameter(torch.empty(d_e, d_k))
        for w in (self.w_q, self.w_k, self.w_v):
            nn.init.xavier_uniform_(w)

    def forward(self, mix_encoded, enroll_frames):
        return contextual_embedding(mix_encoded, enroll_frames, self.w_q, self.w_k, self.w_v)


def tile_speaker_embedding(embedding, n_frames: int) -> torch.Tensor:
    """Repeat a ``(..., D_e)`` utterance embedding into ``(..., n_frames, D_e)``."""
    if n_frames < 1:
        raise ValueError("n_frames must be >= 1")
    embedding = torch.as_tensor(embedding)
    return embedding.unsqueeze(-2).expand(*embedding.shape[:-1], n_frames, embedding.shape[-1])
