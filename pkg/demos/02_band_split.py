"""
Band split
==========

The separator cuts the 321 STFT bins of a 16 kHz, 640-point analysis into
narrow low bands and wide high bands. Each band gets its own encoder.
"""

# %%
from mltse.dsp import StftConfig
from mltse.extractor import ExtractorConfig, build_band_scheme, uniform_band_scheme

cfg = StftConfig()
scheme = build_band_scheme(16000, cfg)
hz_per_bin = 16000 / cfg.n_fft
print(f"{len(scheme)} bands over {scheme.n_bins} bins ({hz_per_bin:.0f} Hz per bin)")

# %% widths in Hz, grouped
runs = []
for w in scheme.widths:
    hz = w * hz_per_bin
    if runs and runs[-1][0] == hz:
        runs[-1][1] += 1
    else:
        runs.append([hz, 1])
for hz, count in runs:
    print(f"  {count:2d} x {hz:6.0f} Hz")
print("last band holds only the Nyquist bin:", scheme.bands[-1])

# %% the desk preset uses a handful of uniform bands instead
desk = ExtractorConfig.desk()
print("desk:", desk.sample_rate, "Hz,", uniform_band_scheme(desk.stft.n_bins, desk.n_bands).widths)

# %% a 512-point FFT cannot honour 100 Hz boundaries
try:
    build_band_scheme(16000, StftConfig(n_fft=512, hop=128))
except ValueError as exc:
    print("n_fft=512:", exc)
