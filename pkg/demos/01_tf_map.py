"""
TF-Map: an enrollment-derived spectrogram for the mixture
=========================================================

Two synthetic speakers are mixed at 0 dB. The TF-Map rebuilds each mixture
frame from the target's enrollment frames, weighted by cosine similarity,
then keeps only the part of the mixture energy that points the same way.
A good TF-Map should look more like the target than the interferer.
"""

# %%
import numpy as np
import torch

from mltse.data import make_mixture, make_speakers, synth_utterance
from mltse.dsp import StftConfig, magnitude, stft
from mltse.features import tf_map, weight_matrix_spectral

sr = 8000
cfg = StftConfig(n_fft=256, hop=64)
alice, bob = make_speakers(12, seed=0)[2], make_speakers(12, seed=0)[9]
print(f"target f0 {alice.f0:.0f} Hz, interferer f0 {bob.f0:.0f} Hz")

mix, target, interferer = make_mixture(
    synth_utterance(alice, 2.0, seed=1, sample_rate=sr),
    synth_utterance(bob, 2.0, seed=2, sample_rate=sr),
    sir_db=0.0,
)
enrollment = synth_utterance(alice, 3.0, seed=3, sample_rate=sr)

# %% magnitudes, (bins, frames)
B_x = torch.as_tensor(magnitude(stft(mix, cfg)), dtype=torch.float64)
B_e = torch.as_tensor(magnitude(stft(enrollment, cfg)), dtype=torch.float64)
B_t = magnitude(stft(target, cfg))
B_i = magnitude(stft(interferer, cfg))

# %% weight matrix: every column is a distribution over enrollment frames
H = weight_matrix_spectral(B_e, B_x)
print("H shape", tuple(H.shape), "column sums in", [round(float(v), 6) for v in (H.sum(0).min(), H.sum(0).max())])
print(f"largest weight {float(H.max()):.4f} vs uniform {1 / H.shape[0]:.4f}")

# %% TF-Map and how it lines up with each source
M = tf_map(B_e, H, B_x).numpy()


def cosine(a, b):
    return float((a * b).sum() / np.sqrt((a * a).sum() * (b * b).sum()))


print(f"cos(TF-Map, target)     {cosine(M, B_t):.3f}")
print(f"cos(TF-Map, interferer) {cosine(M, B_i):.3f}")
print(f"cos(mixture, target)    {cosine(B_x.numpy(), B_t):.3f}")

# %% optional picture
try:
    import matplotlib.pyplot as plt
except ImportError:
    plt = None
if plt is not None:
    fig, axes = plt.subplots(1, 3, figsize=(10, 3), sharey=True)
    for ax, (title, img) in zip(axes, [("mixture", B_x.numpy()), ("TF-Map", M), ("target", B_t)]):
        ax.imshow(np.log1p(img), origin="lower", aspect="auto")
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig("tf_map.png")
    print("wrote tf_map.png")
