"""SI-SDR, its improvement over the mixture, and extraction accuracy."""

from __future__ import annotations

import numpy as np
import torch

SI_SDR_CLAMP = 60.0
SUCCESS_THRESHOLD_DB = 1.0
_TINY = 1e-30


def si_sdr(est, ref, zero_mean: bool = False, clamp: float = SI_SDR_CLAMP):
    """Scale-invariant SDR in dB over the last axis.

    ``10 log10(|a r|^2 / |est - a r|^2)`` with ``a = <est, r> / |r|^2``. No mean
    removal unless ``zero_mean``. Perfect estimates saturate at ``clamp``.
    Tensors stay differentiable; numpy input returns numpy/float.
    """
    to_numpy = not isinstance(est, torch.Tensor)
    est = torch.as_tensor(np.asarray(est, dtype=np.float64) if to_numpy else est)
    ref = torch.as_tensor(np.asarray(ref, dtype=np.float64) if not isinstance(ref, torch.Tensor) else ref)
    if est.shape[-1] != ref.shape[-1]:
        raise ValueError(f"length mismatch: estimate {est.shape[-1]}, reference {ref.shape[-1]}")
    if zero_mean:
        est = est - est.mean(dim=-1, keepdim=True)
        ref = ref - ref.mean(dim=-1, keepdim=True)
    ref_energy = (ref * ref).sum(dim=-1, keepdim=True)
    if bool((ref_energy == 0).any()):
        raise ValueError("reference signal is all zeros")
    target = (est * ref).sum(dim=-1, keepdim=True) / ref_energy * ref
    noise = est - target
    t_e = (target * target).sum(dim=-1).clamp_min(_TINY)
    n_e = (noise * noise).sum(dim=-1).clamp_min(_TINY)
    val = (10 * (torch.log10(t_e) - torch.log10(n_e))).clamp(max=clamp)
    if to_numpy:
        val = val.numpy()
        return float(val) if val.ndim == 0 else val
    return val


def neg_si_sdr(est, ref, **kw):
    """Training loss: negative SI-SDR, averaged over the batch."""
    return -si_sdr(est, ref, **kw).mean()


def si_sdri(est, mixture, ref, **kw):
    return si_sdr(est, ref, **kw) - si_sdr(mixture, ref, **kw)


def accuracy(si_sdri_values) -> float:
    """Percentage of examples whose SI-SDRi is strictly above 1 dB."""
    v = np.asarray(list(si_sdri_values), dtype=float)
    if v.size == 0:
        raise ValueError("accuracy of an empty result set is undefined")
    return 100.0 * np.count_nonzero(v > SUCCESS_THRESHOLD_DB) / v.size
