"""Two-speaker mixture data: synthetic speakers, JSON-lines manifests, batching.

Manifest lines (paths relative to the manifest file's directory)::

    {"schema_version": 1, "mixture_id": "...", "mixture": "mix/x.wav",
     "sources": ["s1/x.wav", "s2/x.wav"], "speakers": ["spk03", "spk07"],
     "enrollments": {"spk03": "enroll/a.wav", "spk07": "enroll/b.wav"}}

``sources[i]`` is the (already gain-adjusted) signal of ``speakers[i]`` inside
the mixture, so ``mixture == sources[0] + sources[1]``.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .dsp import read_wav, write_wav

SCHEMA_VERSION = 1
SPLITS = ("train", "val", "test")


@dataclass
class ManifestEntry:
    mixture_id: str
    mixture: str
    sources: tuple[str, str]
    speakers: tuple[str, str]
    enrollments: dict[str, str]

    def validate(self, root: Path | None = None) -> None:
        if len(self.sources) != 2 or len(self.speakers) != 2:
            raise ValueError(f"{self.mixture_id}: expected two sources and two speakers")
        if self.speakers[0] == self.speakers[1]:
            raise ValueError(f"{self.mixture_id}: both sources belong to {self.speakers[0]}")
        for spk, src in zip(self.speakers, self.sources):
            if spk not in self.enrollments:
                raise ValueError(f"{self.mixture_id}: no enrollment for speaker {spk}")
            if Path(self.enrollments[spk]) == Path(src):
                raise ValueError(f"{self.mixture_id}: enrollment of {spk} is its source utterance")
        if root is not None:
            for p in (self.mixture, *self.sources, *self.enrollments.values()):
                if not (root / p).exists():
                    raise FileNotFoundError(f"{self.mixture_id}: missing {root / p}")

    def to_json(self) -> str:
        d = {"schema_version": SCHEMA_VERSION, **asdict(self)}
        d["sources"], d["speakers"] = list(self.sources), list(self.speakers)
        return json.dumps(d, sort_keys=True)

    @classmethod
    def from_json(cls, line: str) -> "ManifestEntry":
        d = json.loads(line)
        if d.pop("schema_version", None) != SCHEMA_VERSION:
            raise ValueError(f"unsupported manifest schema in line: {line[:80]}")
        d["sources"], d["speakers"] = tuple(d["sources"]), tuple(d["speakers"])
        return cls(**d)


def write_manifest(path, entries) -> None:
    Path(path).write_text("".join(e.to_json() + "\n" for e in entries))


def read_manifest(path, validate: bool = True) -> list[ManifestEntry]:
    path = Path(path)
    entries = [ManifestEntry.from_json(line) for line in path.read_text().splitlines() if line.strip()]
    if validate:
        for e in entries:
            e.validate(path.parent)
    return entries


# --------------------------------------------------------------------------
# synthetic speakers


@dataclass(frozen=True)
class SynthSpeakerSpec:
    """A harmonic "voice": mean pitch, spectral tilt and a small vowel inventory.

    Vowels are formant positions scattered around ``formant_hz``; an utterance
    switches vowel once per syllable, so timbre varies over time.
    """

    speaker_id: str
    f0: float
    tilt: float = 1.2
    formant_hz: float = 1000.0
    formant_bw: float = 300.0
    mod_rate: float = 4.0
    seed: int = 0
    n_vowels: int = 4

    def __post_init__(self):
        if not 80.0 <= self.f0 <= 400.0:
            raise ValueError(f"f0 must lie in [80, 400] Hz, got {self.f0}")
        if self.tilt < 1.0:
            raise ValueError("tilt below 1 would let an upper harmonic outweigh f0")
        if self.n_vowels < 1:
            raise ValueError("need at least one vowel")

    def vowels(self) -> np.ndarray:
        """Formant centre of each vowel, Hz."""
        rng = np.random.default_rng([self.seed, 99])
        return self.formant_hz * np.exp(rng.uniform(-0.6, 0.6, self.n_vowels))


def _smooth(x: np.ndarray, width: int) -> np.ndarray:
    if width < 2:
        return x
    pad = np.pad(x, (width // 2, width - 1 - width // 2), mode="edge")
    return np.convolve(pad, np.ones(width) / width, mode="valid")


def synth_utterance(spec: SynthSpeakerSpec, duration: float, seed: int, sample_rate: int = 16000) -> np.ndarray:
    """One "utterance": a harmonic complex with a wandering pitch contour,
    syllable-rate amplitude modulation and one vowel per syllable. Peak
    amplitude is 0.9."""
    if duration <= 0:
        raise ValueError("duration must be positive")
    rng = np.random.default_rng([spec.seed, seed])
    n = int(round(duration * sample_rate))
    t = np.arange(n) / sample_rate
    # slow pitch wander of a few percent
    contour = np.ones(n)
    for _ in range(3):
        contour += rng.uniform(0.005, 0.015) * np.sin(2 * np.pi * rng.uniform(0.3, 2.0) * t + rng.uniform(0, 2 * np.pi))
    phase = 2 * np.pi * spec.f0 * np.cumsum(contour) / sample_rate
    rate = spec.mod_rate * rng.uniform(0.8, 1.25)
    syllable = np.floor(t * rate + rng.uniform()).astype(int)
    choice = rng.integers(spec.n_vowels, size=syllable[-1] + 1)
    formant = _smooth(spec.vowels()[choice[syllable]], int(0.03 * sample_rate))
    y = np.zeros(n)
    for k in range(1, int(0.5 * sample_rate / (spec.f0 * 1.05))):
        bump = np.exp(-0.5 * ((k * spec.f0 * contour - formant) / spec.formant_bw) ** 2)
        # the fundamental keeps full weight so it stays the spectral peak
        amp = 1.0 if k == 1 else k ** (-spec.tilt) * (0.3 + 0.7 * bump)
        y += amp * np.sin(k * phase + rng.uniform(0, 2 * np.pi))
    envelope = 0.6 + 0.4 * np.sin(2 * np.pi * rate * t + rng.uniform(0, 2 * np.pi))
    y *= envelope
    return (0.9 * y / np.abs(y).max()).astype(np.float32)


MIN_PITCH_RATIO = 1.1


def make_speakers(n_speakers: int, seed: int) -> list[SynthSpeakerSpec]:
    """Speakers with stratified log-uniform mean pitch in [80, 400] Hz and random timbre."""
    if n_speakers < 2:
        raise ValueError("need at least two speakers")
    rng = np.random.default_rng(seed)
    strata = rng.permutation(n_speakers)
    specs = []
    for i in range(n_speakers):
        u = (strata[i] + rng.uniform()) / n_speakers
        specs.append(
            SynthSpeakerSpec(
                speaker_id=f"spk{i:03d}",
                f0=float(80.0 * 5.0**u),
                tilt=float(rng.uniform(1.0, 1.6)),
                formant_hz=float(rng.uniform(500, 3000)),
                formant_bw=float(rng.uniform(150, 600)),
                mod_rate=float(rng.uniform(2.5, 6.0)),
                seed=int(rng.integers(2**31)),
            )
        )
    return specs


def pitch_distinct(a: SynthSpeakerSpec, b: SynthSpeakerSpec) -> bool:
    """True when the two mean pitches differ by at least 10%."""
    lo, hi = sorted((a.f0, b.f0))
    return hi / lo >= MIN_PITCH_RATIO


def _draw_pair(rng, specs):
    pairs = [(i, j) for i in range(len(specs)) for j in range(len(specs)) if i != j and pitch_distinct(specs[i], specs[j])]
    if not pairs:
        raise ValueError("no speaker pair in this split differs in pitch by >= 10%")
    return pairs[rng.integers(len(pairs))]


def make_mixture(target, interferer, sir_db: float = 0.0):
    """Scale ``interferer`` to the requested target-to-interferer energy ratio
    and add it to ``target`` after truncating both to the shorter length.

    Returns ``(mixture, target, scaled_interferer)``.
    """
    n = min(len(target), len(interferer))
    target = np.asarray(target[:n], dtype=np.float32)
    interferer = np.asarray(interferer[:n], dtype=np.float32)
    e_t = float(np.dot(target, target))
    e_i = float(np.dot(interferer, interferer))
    if e_t == 0 or e_i == 0:
        raise ValueError("cannot mix a zero-energy source")
    interferer = (interferer * np.sqrt(e_t / (e_i * 10 ** (sir_db / 10)))).astype(np.float32)
    mixture = target + interferer
    return mixture, target, interferer


def split_speakers(speakers: list[SynthSpeakerSpec]) -> dict[str, list[SynthSpeakerSpec]]:
    """Disjoint train/val/test speakers; held-out speakers are spread over the pitch range."""
    n = len(speakers)
    n_held = max(2, round(n / 5))
    if n - 2 * n_held < 2:
        raise ValueError(f"{n} speakers are too few for disjoint train/val/test splits (need >= 6)")
    ranked = sorted(speakers, key=lambda s: s.f0)
    stride = n / n_held
    val = {int(stride * k + stride / 3) for k in range(n_held)}
    test = {int(stride * k + 2 * stride / 3) for k in range(n_held)}
    return {
        "train": [s for i, s in enumerate(ranked) if i not in val | test],
        "val": [ranked[i] for i in sorted(val)],
        "test": [ranked[i] for i in sorted(test)],
    }


def build_synth_manifest(
    n_speakers: int,
    n_mixtures: int,
    out_dir,
    seed: int = 0,
    sample_rate: int = 8000,
    duration: float = 2.0,
    sir_range: tuple[float, float] = (-5.0, 5.0),
    held_out_fraction: float = 0.1,
) -> dict[str, Path]:
    """Write WAVs and ``{train,val,test}.jsonl`` manifests with disjoint speakers.

    ``n_mixtures`` is the total; val and test each get ``held_out_fraction`` of
    it (at least one). Returns the manifest paths.
    """
    out_dir = Path(out_dir)
    specs = make_speakers(n_speakers, seed)
    split_specs = split_speakers(specs)
    n_held = max(1, int(round(held_out_fraction * n_mixtures)))
    counts = {"train": n_mixtures - 2 * n_held, "val": n_held, "test": n_held}
    if counts["train"] < 1:
        raise ValueError("too few mixtures for a non-empty training split")
    for sub in ("mix", "src", "enroll"):
        (out_dir / sub).mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng([seed, 7])
    paths = {}
    for split in SPLITS:
        entries = []
        for i in range(counts[split]):
            mid = f"{split}{i:05d}"
            a, b = _draw_pair(rng, split_specs[split])
            sa, sb = split_specs[split][a], split_specs[split][b]
            useeds = rng.integers(2**31, size=4)
            mix, s1, s2 = make_mixture(
                synth_utterance(sa, duration, int(useeds[0]), sample_rate),
                synth_utterance(sb, duration, int(useeds[1]), sample_rate),
                float(rng.uniform(*sir_range)),
            )
            rel = {
                "mix": f"mix/{mid}.wav",
                "s1": f"src/{mid}_s1.wav",
                "s2": f"src/{mid}_s2.wav",
                "e1": f"enroll/{mid}_{sa.speaker_id}.wav",
                "e2": f"enroll/{mid}_{sb.speaker_id}.wav",
            }
            for key, sig in (("mix", mix), ("s1", s1), ("s2", s2)):
                write_wav(out_dir / rel[key], sig, sample_rate)
            write_wav(out_dir / rel["e1"], synth_utterance(sa, duration, int(useeds[2]), sample_rate), sample_rate)
            write_wav(out_dir / rel["e2"], synth_utterance(sb, duration, int(useeds[3]), sample_rate), sample_rate)
            entries.append(
                ManifestEntry(
                    mixture_id=mid,
                    mixture=rel["mix"],
                    sources=(rel["s1"], rel["s2"]),
                    speakers=(sa.speaker_id, sb.speaker_id),
                    enrollments={sa.speaker_id: rel["e1"], sb.speaker_id: rel["e2"]},
                )
            )
        paths[split] = out_dir / f"{split}.jsonl"
        write_manifest(paths[split], entries)
    meta = {
        "seed": seed,
        "sample_rate": sample_rate,
        "duration": duration,
        "speakers": {s: [asdict(x) for x in split_specs[s]] for s in SPLITS},
    }
    (out_dir / "speakers.json").write_text(json.dumps(meta, indent=1, sort_keys=True))
    return paths


def libri2mix_manifest(split_dir, enrollment_map, out_path) -> list[ManifestEntry]:
    """Manifest for a Libri2Mix ``wav16k/min/<split>`` directory.

    Mixture ids are ``<spk>-<chapter>-<utt>_<spk>-<chapter>-<utt>`` with
    ``mix_clean/``, ``s1/`` and ``s2/`` subdirectories. ``enrollment_map`` is a
    JSON file ``{mixture_id: {speaker_id: wav_path}}``; relative wav paths are
    resolved against the map's directory. Enrollment choice is left to the
    user.
    """
    split_dir = Path(split_dir).resolve()
    map_path = Path(enrollment_map).resolve()
    out_path = Path(out_path).resolve()
    enroll = json.loads(map_path.read_text())
    mix_dir = split_dir / "mix_clean"
    if not mix_dir.is_dir() or not (split_dir / "s1").is_dir() or not (split_dir / "s2").is_dir():
        raise FileNotFoundError(f"{split_dir} is not a Libri2Mix split (mix_clean/, s1/, s2/ expected)")
    base = out_path.parent

    def rel(p: Path) -> str:
        return str(Path(p).resolve().relative_to(base)) if Path(p).resolve().is_relative_to(base) else str(Path(p).resolve())

    entries = []
    for wav in sorted(mix_dir.glob("*.wav")):
        mid = wav.stem
        parts = mid.split("_")
        if len(parts) != 2:
            raise ValueError(f"unexpected Libri2Mix mixture id {mid!r}")
        speakers = tuple(p.split("-")[0] for p in parts)
        if mid not in enroll:
            raise KeyError(f"enrollment map has no entry for mixture {mid}")
        enrollments = {spk: rel(map_path.parent / enroll[mid][spk]) for spk in speakers}
        entry = ManifestEntry(
            mixture_id=mid,
            mixture=rel(wav),
            sources=(rel(split_dir / "s1" / wav.name), rel(split_dir / "s2" / wav.name)),
            speakers=speakers,
            enrollments=enrollments,
        )
        entry.validate(base)
        entries.append(entry)
    write_manifest(out_path, entries)
    return entries


# --------------------------------------------------------------------------
# in-memory datasets and batching


@dataclass
class MixtureExample:
    mixture: np.ndarray
    target: np.ndarray
    interferer: np.ndarray
    enrollment: np.ndarray
    target_speaker: str
    mixture_id: str = ""
    enrollment_id: str = ""


class MixtureDataset:
    """All audio of a manifest held in memory; each mixture yields two examples."""

    def __init__(self, manifest, sample_rate: int = 16000, validate: bool = True):
        self.path = Path(manifest)
        self.root = self.path.parent
        self.sample_rate = sample_rate
        self.entries = read_manifest(self.path, validate=validate)
        self._cache: dict[str, np.ndarray] = {}

    def audio(self, rel: str) -> np.ndarray:
        if rel not in self._cache:
            self._cache[rel] = read_wav(self.root / rel, self.sample_rate)
        return self._cache[rel]

    def __len__(self):
        return len(self.entries)

    def example(self, index: int, direction: int) -> MixtureExample:
        """``direction`` selects which of the two speakers is the target."""
        e = self.entries[index]
        spk = e.speakers[direction]
        return MixtureExample(
            mixture=self.audio(e.mixture),
            target=self.audio(e.sources[direction]),
            interferer=self.audio(e.sources[1 - direction]),
            enrollment=self.audio(e.enrollments[spk]),
            target_speaker=spk,
            mixture_id=e.mixture_id,
            enrollment_id=Path(e.enrollments[spk]).stem,
        )

    def examples(self, both_directions: bool = True, limit: int | None = None):
        keys = [(i, d) for i in range(len(self)) for d in ((0, 1) if both_directions else (0,))]
        return [self.example(i, d) for i, d in keys[:limit]]


def _crop(x: np.ndarray, start: int, length: int) -> np.ndarray:
    seg = x[start : start + length]
    if len(seg) < length:
        seg = np.pad(seg, (0, length - len(seg)))
    return seg


def load_batch(dataset: MixtureDataset, cfg, step: int) -> dict[str, np.ndarray]:
    """A deterministic random batch for training step ``step``.

    Every (mixture, direction) pair is equally likely, so both speakers of a
    mixture serve as targets. Mixture and enrollment are cropped to
    ``cfg.segment_seconds`` / ``cfg.enrollment_seconds``; anything shorter is
    zero-padded at the end.
    """
    if len(dataset) == 0:
        raise ValueError("empty dataset")
    rng = np.random.default_rng([cfg.seed, step])
    seg = int(round(cfg.segment_seconds * dataset.sample_rate))
    seg_e = int(round(cfg.enrollment_seconds * dataset.sample_rate))
    picks = rng.integers(2 * len(dataset), size=cfg.batch_size)
    out = {"mixture": [], "target": [], "enrollment": [], "pair": []}
    for p in picks:
        ex = dataset.example(int(p) // 2, int(p) % 2)
        start = int(rng.integers(max(1, len(ex.mixture) - seg + 1)))
        start_e = int(rng.integers(max(1, len(ex.enrollment) - seg_e + 1)))
        out["mixture"].append(_crop(ex.mixture, start, seg))
        out["target"].append(_crop(ex.target, start, seg))
        out["enrollment"].append(_crop(ex.enrollment, start_e, seg_e))
        out["pair"].append((ex.mixture_id, ex.target_speaker))
    return {k: (np.stack(v) if k != "pair" else v) for k, v in out.items()}

