import json
from dataclasses import dataclass

import numpy as np
import pytest

from mltse.data import (
    ManifestEntry,
    MixtureDataset,
    SynthSpeakerSpec,
    build_synth_manifest,
    libri2mix_manifest,
    load_batch,
    make_mixture,
    make_speakers,
    read_manifest,
    synth_utterance,
)
from mltse.dsp import write_wav

SPEC = SynthSpeakerSpec("spkA", f0=150.0, seed=3)


def peak_hz(x, sr):
    spec = np.abs(np.fft.rfft(x * np.hanning(len(x))))
    return np.fft.rfftfreq(len(x), 1 / sr)[spec.argmax()]


class TestSynth:
    def test_deterministic(self):
        assert np.array_equal(synth_utterance(SPEC, 0.5, 1), synth_utterance(SPEC, 0.5, 1))

    def test_fundamental_dominates(self):
        x = synth_utterance(SPEC, 2.0, 1, 16000)
        assert abs(peak_hz(x, 16000) - 150) < 0.05 * 150

    def test_seeds_differ_same_pitch(self):
        a, b = synth_utterance(SPEC, 2.0, 1, 8000), synth_utterance(SPEC, 2.0, 2, 8000)
        assert not np.allclose(a, b)
        assert abs(peak_hz(a, 8000) - peak_hz(b, 8000)) < 0.05 * 150

    def test_peak_level(self):
        assert np.abs(synth_utterance(SPEC, 0.3, 0)).max() == pytest.approx(0.9, abs=1e-6)

    def test_invalid(self):
        with pytest.raises(ValueError):
            SynthSpeakerSpec("x", f0=50.0)
        with pytest.raises(ValueError):
            synth_utterance(SPEC, 0.0, 0)

    def test_speakers_pitch_range(self):
        f0 = [s.f0 for s in make_speakers(200, 0)]
        assert all(80 <= f <= 400 for f in f0)
        assert len(set(s.speaker_id for s in make_speakers(200, 0))) == 200
        with pytest.raises(ValueError):
            make_speakers(1, 0)

    def test_mixed_speakers_differ_in_pitch(self, tmp_path):
        paths = build_synth_manifest(20, 40, tmp_path, seed=3, duration=0.3)
        meta = json.loads((tmp_path / "speakers.json").read_text())
        f0 = {d["speaker_id"]: d["f0"] for split in meta["speakers"].values() for d in split}
        for split in ("train", "val", "test"):
            for entry in read_manifest(paths[split]):
                lo, hi = sorted(f0[s] for s in entry.speakers)
                assert hi / lo >= 1.1


class TestMixture:
    def test_equal_energy_zero_sir(self):
        rng = np.random.default_rng(0)
        a = rng.standard_normal(100).astype(np.float32)
        b = a[::-1].copy()
        _, _, scaled = make_mixture(a, b, 0.0)
        np.testing.assert_allclose(scaled, b, rtol=1e-6)

    def test_additivity(self):
        rng = np.random.default_rng(1)
        mix, t, i = make_mixture(rng.standard_normal(120), rng.standard_normal(100), 3.0)
        assert len(mix) == 100
        assert np.array_equal(mix, t + i)

    def test_sir_six_db(self):
        rng = np.random.default_rng(2)
        a, b = rng.standard_normal(1000), rng.standard_normal(1000)
        _, t, i = make_mixture(a, b, 6.0)
        ratio = np.dot(i.astype(float), i) / np.dot(t.astype(float), t)
        assert ratio == pytest.approx(10 ** (-0.6), rel=1e-5)

    def test_zero_energy(self):
        with pytest.raises(ValueError, match="zero-energy"):
            make_mixture(np.zeros(10), np.ones(10))


@pytest.fixture(scope="module")
def synth_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("synth")
    build_synth_manifest(12, 100, out, seed=7, duration=0.5)
    return out


class TestManifest:
    def test_speaker_splits(self, synth_dir):
        meta = json.loads((synth_dir / "speakers.json").read_text())["speakers"]
        ids = {s: {x["speaker_id"] for x in meta[s]} for s in meta}
        assert [len(ids[s]) for s in ("train", "val", "test")] == [8, 2, 2]
        assert not (ids["train"] & ids["val"] or ids["train"] & ids["test"] or ids["val"] & ids["test"])
        for split in ("train", "val", "test"):
            for e in read_manifest(synth_dir / f"{split}.jsonl"):
                assert set(e.speakers) <= ids[split]

    def test_counts(self, synth_dir):
        n = {s: len(read_manifest(synth_dir / f"{s}.jsonl")) for s in ("train", "val", "test")}
        assert n == {"train": 80, "val": 10, "test": 10}

    def test_entries_valid_and_additive(self, synth_dir):
        ds = MixtureDataset(synth_dir / "train.jsonl", 8000)
        for i in range(len(ds)):
            e = ds.entries[i]
            e.validate(synth_dir)
            assert all(e.enrollments[s] != src for s, src in zip(e.speakers, e.sources))
            ex = ds.example(i, 0)
            assert np.array_equal(ex.mixture, ex.target + ex.interferer)

    def test_regeneration_identical(self, synth_dir, tmp_path):
        build_synth_manifest(12, 100, tmp_path, seed=7, duration=0.5)
        for name in ("train.jsonl", "val.jsonl", "test.jsonl", "speakers.json", "mix/train00003.wav"):
            assert (tmp_path / name).read_bytes() == (synth_dir / name).read_bytes()

    def test_too_few_speakers(self, tmp_path):
        with pytest.raises(ValueError, match="too few"):
            build_synth_manifest(5, 10, tmp_path)

    def test_schema_version_enforced(self):
        with pytest.raises(ValueError, match="schema"):
            ManifestEntry.from_json(json.dumps({"schema_version": 99}))

    def test_enrollment_equal_to_source_rejected(self):
        e = ManifestEntry("m", "m.wav", ("a.wav", "b.wav"), ("A", "B"), {"A": "a.wav", "B": "c.wav"})
        with pytest.raises(ValueError, match="source utterance"):
            e.validate()


@dataclass
class BatchCfg:
    seed: int = 0
    batch_size: int = 4
    segment_seconds: float = 0.25
    enrollment_seconds: float = 0.3


class TestLoadBatch:
    def test_segment_length_paper_rate(self, tmp_path):
        spk = [SynthSpeakerSpec("a", 120.0), SynthSpeakerSpec("b", 200.0)]
        sig = [synth_utterance(s, 3.5, i, 16000) for i, s in enumerate(spk)]
        mix, s1, s2 = make_mixture(*sig)
        for name, x in (("m", mix), ("s1", s1), ("s2", s2), ("ea", sig[0][::-1]), ("eb", sig[1][::-1])):
            write_wav(tmp_path / f"{name}.wav", x)
        entry = ManifestEntry("m", "m.wav", ("s1.wav", "s2.wav"), ("a", "b"), {"a": "ea.wav", "b": "eb.wav"})
        (tmp_path / "x.jsonl").write_text(entry.to_json() + "\n")
        ds = MixtureDataset(tmp_path / "x.jsonl", 16000)
        b = load_batch(ds, BatchCfg(segment_seconds=3.0, enrollment_seconds=3.0, batch_size=2), 0)
        assert b["mixture"].shape == (2, 48000) and b["enrollment"].shape == (2, 48000)

    def test_deterministic(self, synth_dir):
        ds = MixtureDataset(synth_dir / "train.jsonl", 8000)
        a, b = load_batch(ds, BatchCfg(), 5), load_batch(ds, BatchCfg(), 5)
        assert all(np.array_equal(a[k], b[k]) for k in ("mixture", "target", "enrollment"))
        assert not np.array_equal(a["mixture"], load_batch(ds, BatchCfg(), 6)["mixture"])

    def test_both_directions_sampled(self, synth_dir):
        ds = MixtureDataset(synth_dir / "train.jsonl", 8000)
        pairs = set()
        for step in range(400):
            pairs.update(load_batch(ds, BatchCfg(), step)["pair"])
        assert len(pairs) == 2 * len(ds)

    def test_short_audio_zero_padded(self, synth_dir):
        ds = MixtureDataset(synth_dir / "train.jsonl", 8000)
        b = load_batch(ds, BatchCfg(segment_seconds=1.0), 0)
        assert b["mixture"].shape == (4, 8000)
        assert np.all(b["mixture"][:, 4000:] == 0)

    def test_empty(self, tmp_path):
        (tmp_path / "e.jsonl").write_text("")
        with pytest.raises(ValueError, match="empty"):
            load_batch(MixtureDataset(tmp_path / "e.jsonl"), BatchCfg(), 0)


def test_libri2mix_layout(tmp_path):
    split = tmp_path / "Libri2Mix" / "wav16k" / "min" / "test"
    for sub in ("mix_clean", "s1", "s2"):
        (split / sub).mkdir(parents=True)
    mid = "61-70968-0000_8455-210777-0012"
    for sub in ("mix_clean", "s1", "s2"):
        write_wav(split / sub / f"{mid}.wav", np.zeros(16))
    (tmp_path / "enroll").mkdir()
    for spk in ("61", "8455"):
        write_wav(tmp_path / "enroll" / f"{spk}.wav", np.zeros(16))
    (tmp_path / "enroll_map.json").write_text(json.dumps({mid: {"61": "enroll/61.wav", "8455": "enroll/8455.wav"}}))
    entries = libri2mix_manifest(split, tmp_path / "enroll_map.json", tmp_path / "test.jsonl")
    assert entries[0].speakers == ("61", "8455")
    back = read_manifest(tmp_path / "test.jsonl")
    assert back == entries
    assert back[0].mixture == f"Libri2Mix/wav16k/min/test/mix_clean/{mid}.wav"

    with pytest.raises(FileNotFoundError):
        libri2mix_manifest(tmp_path / "enroll", tmp_path / "enroll_map.json", tmp_path / "t.jsonl")
