import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from mltse.dsp import (
    StftConfig,
    istft,
    length_normalize_columns,
    magnitude,
    read_wav,
    stft,
    write_wav,
)

CFG = StftConfig()


def interior_snr(x, y, margin=640):
    e = (y - x)[margin:-margin]
    return 10 * np.log10(np.sum(x[margin:-margin] ** 2) / np.sum(e**2))


class TestStftConfig:
    def test_defaults(self):
        assert (CFG.n_fft, CFG.hop, CFG.window) == (640, 160, "hann")
        assert CFG.n_bins == 321

    @pytest.mark.parametrize("hop", [0, 700])
    def test_bad_hop(self, hop):
        with pytest.raises(ValueError):
            StftConfig(hop=hop)

    def test_non_cola_rejected(self):
        with pytest.raises(ValueError, match="COLA"):
            StftConfig(n_fft=640, hop=480)


class TestStft:
    def test_zeros(self):
        s = stft(np.zeros(16000), CFG)
        assert s.shape == (321, 97)
        assert not np.any(s)

    def test_frame_count_formula(self):
        for n in (640, 641, 799, 800, 12345):
            assert stft(np.zeros(n), CFG).shape[1] == 1 + (n - 640) // 160

    def test_sine_peak_bin(self):
        # 16000 / 640 = 25 Hz per bin
        t = np.arange(16000) / 16000
        s = np.abs(stft(np.sin(2 * np.pi * 1000 * t), CFG))
        assert s.mean(axis=1).argmax() == round(1000 / 25)

    def test_too_short(self):
        with pytest.raises(ValueError, match="shorter than one frame"):
            stft(np.zeros(639), CFG)

    def test_tensor_in_tensor_out(self):
        x = torch.randn(2, 3, 1000, requires_grad=True)
        s = stft(x, CFG)
        assert isinstance(s, torch.Tensor) and s.shape == (2, 3, 321, 3)
        s.abs().sum().backward()
        assert x.grad is not None


class TestIstft:
    @pytest.mark.parametrize("seed", range(5))
    def test_round_trip(self, seed):
        x = np.random.default_rng(seed).standard_normal(16000)
        y = istft(stft(x, CFG), CFG, length=len(x))
        assert interior_snr(x, y) > 50

    def test_zeros(self):
        y = istft(np.zeros((321, 10), dtype=complex), CFG)
        assert y.shape == (640 + 9 * 160,) and not np.any(y)

    def test_impulse(self):
        x = np.zeros(4000)
        x[2000] = 1.0
        y = istft(stft(x, CFG), CFG, length=len(x))
        assert np.argmax(np.abs(y)) == 2000
        np.testing.assert_allclose(y, x, atol=1e-9)

    def test_linearity(self):
        s = stft(np.random.default_rng(1).standard_normal(3000), CFG)
        np.testing.assert_allclose(istft(2.5 * s, CFG), 2.5 * istft(s, CFG), atol=1e-10)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError, match="bins"):
            istft(np.zeros((320, 4), dtype=complex), CFG)

    def test_length_pad_and_truncate(self):
        s = stft(np.ones(1000), CFG)
        assert istft(s, CFG, length=1200).shape == (1200,)
        assert istft(s, CFG, length=700).shape == (700,)


class TestMagnitude:
    def test_pythagorean(self):
        assert magnitude(np.array([3 + 4j]))[0] == 5.0

    def test_zero(self):
        assert not np.any(magnitude(np.zeros((3, 3), dtype=complex)))

    def test_phase_invariance_and_norm(self):
        rng = np.random.default_rng(0)
        z = rng.standard_normal((5, 7)) + 1j * rng.standard_normal((5, 7))
        rot = np.exp(1j * rng.uniform(0, 2 * np.pi, z.shape))
        np.testing.assert_allclose(magnitude(z * rot), magnitude(z))
        assert np.all(magnitude(z) >= 0)
        np.testing.assert_allclose(np.linalg.norm(magnitude(z)), np.linalg.norm(z))


class TestLengthNormalize:
    def test_example(self):
        np.testing.assert_allclose(length_normalize_columns(np.array([[3.0], [4.0]])), [[0.6], [0.8]])

    def test_zero_column(self):
        out = length_normalize_columns(np.array([[0.0, 1.0], [0.0, 1.0]]))
        assert np.all(np.isfinite(out)) and np.all(out[:, 0] == 0)

    def test_tensor_zero_column_gradient_finite(self):
        m = torch.tensor([[0.0, 3.0], [0.0, 4.0]], requires_grad=True)
        length_normalize_columns(m).sum().backward()
        assert torch.all(torch.isfinite(m.grad))

    @settings(max_examples=100, deadline=None)
    @given(arrays(np.float64, st.tuples(st.integers(1, 6), st.integers(1, 6)),
                  elements=st.floats(-1e3, 1e3, allow_nan=False)))
    def test_idempotent_and_finite(self, m):
        once = length_normalize_columns(m)
        assert np.all(np.isfinite(once))
        np.testing.assert_allclose(length_normalize_columns(once), once, atol=1e-12)
        norms = np.linalg.norm(once, axis=0)
        assert np.all((np.abs(norms - 1) < 1e-9) | (norms == 0))


class TestWav:
    def test_float32_round_trip(self, tmp_path):
        x = np.random.default_rng(0).uniform(-1, 1, 800).astype(np.float32)
        write_wav(tmp_path / "a.wav", x)
        np.testing.assert_array_equal(read_wav(tmp_path / "a.wav"), x)

    def test_pcm16(self, tmp_path):
        x = np.linspace(-0.5, 0.5, 100, dtype=np.float32)
        write_wav(tmp_path / "a.wav", x, pcm16=True)
        np.testing.assert_allclose(read_wav(tmp_path / "a.wav"), x, atol=1 / 32768)

    def test_wrong_rate_rejected(self, tmp_path):
        write_wav(tmp_path / "a.wav", np.zeros(10), sample_rate=8000)
        with pytest.raises(ValueError, match="8000 Hz, expected 16000"):
            read_wav(tmp_path / "a.wav")

    def test_stereo_rejected(self, tmp_path):
        from scipy.io import wavfile

        wavfile.write(tmp_path / "s.wav", 16000, np.zeros((10, 2), dtype=np.float32))
        with pytest.raises(ValueError, match="mono"):
            read_wav(tmp_path / "s.wav")
