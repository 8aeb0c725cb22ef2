"""Procedural factorized pseudo-speech corpus with known ground-truth factors.

The generator bakes the attribute split into the signal by construction:

- upper mel bins [low_band, n_mels) are a function of (phonemes, speaker)
  only: a per-phoneme spectral template plus a per-speaker spectral envelope;
- low mel bins [0, low_band) render the prosody contour as a Gaussian bump at
  the row addressed by the contour value, with amplitude set by emotion
  intensity; the contour family (center row, slope sign, oscillation) is
  determined by the emotion id;
- seeded additive noise at <= 1% of the signal amplitude is the only leakage
  between bands.

That makes band-separation, probe, and swap claims exactly testable. Emotion
families differ in both their center row (so frame-marginal statistics carry
the class) and their slope sign (so temporal direction does too).

Ground-truth factors go to a ``factors.jsonl`` sidecar that training code
never reads; training consumes only ``manifest.jsonl`` and the assets.
"""

from __future__ import annotations

import json
import zlib
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterator

import numpy as np
from PIL import Image, ImageDraw

from .data_model import (
    DEFAULT_FRAME_HOP_S,
    DurationSequence,
    MelSpectrogram,
    PhonemeSequence,
    UtteranceRecord,
    serialize_mel,
    validate_record,
)
from .errors import ContractViolation, ManifestError

IMAGE_SIZE = 32

EMOTION_WORDS = [
    "neutral",
    "happy",
    "sad",
    "angry",
    "surprised",
    "fearful",
    "disgusted",
    "calm",
]

PROMPT_TEMPLATES = [
    "a voice full of {tone}",
    "someone speaking in a {tone} tone",
    "the speaker sounds {tone}",
    "an utterance carrying {tone} emotion",
    "a recording of {tone} speech",
]


@dataclass(frozen=True)
class FactorSpec:
    """Knobs of the synthetic corpus."""

    n_speakers: int
    n_emotions: int = 8
    phoneme_vocab: int = 16
    utterances_per_speaker: int = 10
    n_mels: int = 80
    low_band: int = 20
    seed: int = 0
    frame_hop_s: float = DEFAULT_FRAME_HOP_S

    def __post_init__(self):
        if self.n_emotions < 2:
            raise ContractViolation(f"n_emotions must be >= 2, got {self.n_emotions}")
        if not 0 < self.low_band < self.n_mels:
            raise ContractViolation(
                f"low_band {self.low_band} must lie in (0, n_mels={self.n_mels})"
            )
        if self.n_speakers < 1 or self.phoneme_vocab < 1 or self.utterances_per_speaker < 1:
            raise ContractViolation("speakers, vocabulary and utterance counts must be >= 1")

    def to_dict(self) -> dict:
        return {
            "n_speakers": self.n_speakers,
            "n_emotions": self.n_emotions,
            "phoneme_vocab": self.phoneme_vocab,
            "utterances_per_speaker": self.utterances_per_speaker,
            "n_mels": self.n_mels,
            "low_band": self.low_band,
            "seed": self.seed,
            "frame_hop_s": self.frame_hop_s,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FactorSpec":
        return cls(**{k: d[k] for k in cls.__dataclass_fields__ if k in d})


@dataclass(frozen=True)
class LatentFactors:
    """Ground-truth latent factors of one utterance."""

    speaker_id: int
    emotion_id: int
    intensity: float
    phonemes: PhonemeSequence
    durations: DurationSequence
    contour: np.ndarray = field(repr=False)

    def __post_init__(self):
        contour = np.asarray(self.contour, dtype=np.float32)
        contour.flags.writeable = False
        object.__setattr__(self, "contour", contour)
        if not 0.0 < self.intensity <= 1.0:
            raise ContractViolation(f"intensity {self.intensity} outside (0, 1]")
        if len(self.contour) != self.durations.total_frames:
            raise ContractViolation(
                f"contour length {len(self.contour)} != total frames "
                f"{self.durations.total_frames}"
            )


def emotion_contour_params(emotion_id: int, n_emotions: int) -> tuple[float, float, int, float]:
    """(center, slope, osc_frequency, osc_amplitude) of one contour family.

    Centers are spread across the low band so families are distinct by
    construction; slope sign alternates with emotion parity.
    """
    center = 0.2 + 0.6 * (emotion_id + 0.5) / n_emotions
    slope = 0.35 if emotion_id % 2 == 0 else -0.35
    freq = 1 + emotion_id % 3
    return center, slope, freq, 0.06


def emotion_word(emotion_id: int) -> str:
    if emotion_id < len(EMOTION_WORDS):
        return EMOTION_WORDS[emotion_id]
    return f"emotion{emotion_id}"


def sample_factors(
    spec: FactorSpec,
    rng: np.random.Generator,
    *,
    speaker_id: int | None = None,
    emotion_id: int | None = None,
) -> LatentFactors:
    """Draw one utterance's latent factors.

    ``speaker_id``/``emotion_id`` overrides let the corpus generator schedule
    balanced coverage while keeping every other draw on the same stream.
    """
    spk = int(rng.integers(spec.n_speakers)) if speaker_id is None else speaker_id
    emo = int(rng.integers(spec.n_emotions)) if emotion_id is None else emotion_id
    if not 0 <= emo < spec.n_emotions:
        raise ContractViolation(f"emotion_id {emo} outside [0, {spec.n_emotions})")

    n_phonemes = int(rng.integers(4, 11))
    phonemes = PhonemeSequence(
        tuple(int(p) for p in rng.integers(0, spec.phoneme_vocab, n_phonemes)),
        spec.phoneme_vocab,
    )
    # Emotion-dependent tempo multiplier; draws stay inside [1, 8] frames.
    tempo = 0.75 + 0.5 * emo / max(1, spec.n_emotions - 1)
    durations = DurationSequence(
        tuple(
            int(np.clip(np.round(rng.uniform(1.5, 6.5) * tempo), 1, 8))
            for _ in range(n_phonemes)
        )
    )
    intensity = float(rng.uniform(0.2, 1.0))

    total = durations.total_frames
    center, slope, freq, osc_amp = emotion_contour_params(emo, spec.n_emotions)
    phase = float(rng.uniform(0.0, 2.0 * np.pi))
    u = (np.arange(total) + 0.5) / total
    shape = center + slope * (u - 0.5) + osc_amp * np.sin(2 * np.pi * freq * u + phase)
    contour = np.clip(shape, 0.03, 0.97) * (spec.low_band - 1)

    return LatentFactors(
        speaker_id=spk,
        emotion_id=emo,
        intensity=intensity,
        phonemes=phonemes,
        durations=durations,
        contour=contour.astype(np.float32),
    )


def _phoneme_template(phoneme_id: int, n_upper: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng([seed, 101, phoneme_id])
    rows = np.arange(n_upper, dtype=np.float64)
    template = np.zeros(n_upper)
    for _ in range(2):
        pos = rng.uniform(0, n_upper - 1)
        width = rng.uniform(1.5, 3.5)
        amp = rng.uniform(0.5, 0.9)
        template += amp * np.exp(-((rows - pos) ** 2) / (2 * width**2))
    return template


def _speaker_envelope(speaker_id: int, n_upper: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng([seed, 202, speaker_id])
    x = np.linspace(0.0, 1.0, n_upper)
    tilt = rng.uniform(-1.0, 1.0)
    freq = rng.uniform(1.0, 3.0)
    phase = rng.uniform(0.0, 2.0 * np.pi)
    return 0.35 * tilt * (2 * x - 1) + 0.25 * np.sin(2 * np.pi * freq * x + phase)


def _factors_fingerprint(factors: LatentFactors) -> int:
    parts = [
        np.asarray([factors.speaker_id, factors.emotion_id], dtype=np.int64).tobytes(),
        np.asarray([int(factors.intensity * 1e6)], dtype=np.int64).tobytes(),
        np.asarray(factors.phonemes.ids, dtype=np.int64).tobytes(),
        np.asarray(factors.durations.frames, dtype=np.int64).tobytes(),
        (factors.contour * 4096).astype(np.int64).tobytes(),
    ]
    return zlib.crc32(b"".join(parts))


def render_utterance(factors: LatentFactors, spec: FactorSpec) -> MelSpectrogram:
    """Render one mel. Deterministic given (factors, spec)."""
    total = factors.durations.total_frames
    if len(factors.contour) != total:
        raise ContractViolation("contour/duration length mismatch")
    n_upper = spec.n_mels - spec.low_band

    # Upper band: per-phoneme template + per-speaker envelope, frame-constant
    # within each phoneme span. A function of (phonemes, speaker) only.
    phoneme_per_frame = np.repeat(
        np.asarray(factors.phonemes.ids), np.asarray(factors.durations.frames)
    )
    env = _speaker_envelope(factors.speaker_id, n_upper, spec.seed)
    templates = {
        p: _phoneme_template(p, n_upper, spec.seed) for p in set(factors.phonemes.ids)
    }
    upper = np.empty((n_upper, total))
    for t, p in enumerate(phoneme_per_frame):
        upper[:, t] = 0.6 + templates[int(p)] + env

    # Low band: Gaussian bump at the contour row, amplitude from intensity.
    rows = np.arange(spec.low_band, dtype=np.float64)[:, None]
    bump_amp = 0.4 + 0.6 * factors.intensity
    low = bump_amp * np.exp(-((rows - factors.contour[None, :]) ** 2) / (2 * 0.9**2))

    signal = np.concatenate([low, upper], axis=0)
    noise_rng = np.random.default_rng([spec.seed, 303, _factors_fingerprint(factors)])
    amplitude = float(np.max(np.abs(signal)))
    noise = noise_rng.uniform(-1.0, 1.0, signal.shape) * 0.01 * amplitude

    return MelSpectrogram(
        values=(signal + noise).astype(np.float32),
        n_mels=spec.n_mels,
        frame_hop_s=spec.frame_hop_s,
    )


def make_prompt_assets(
    emotion_id: int, intensity: float, spec: FactorSpec
) -> tuple[str, np.ndarray]:
    """Deterministic (text prompt, grayscale glyph image) pair.

    The glyph shape encodes the emotion (polygon vertex count / rotation);
    mean brightness encodes intensity.
    """
    if not 0 <= emotion_id < spec.n_emotions:
        raise ContractViolation(f"emotion_id {emotion_id} outside [0, {spec.n_emotions})")
    rng = np.random.default_rng([spec.seed, 7, emotion_id, int(round(intensity * 10000))])
    word = emotion_word(emotion_id)
    if intensity > 0.75:
        tone = f"intensely {word}"
    elif intensity > 0.45:
        tone = word
    else:
        tone = f"slightly {word}"
    text = PROMPT_TEMPLATES[int(rng.integers(len(PROMPT_TEMPLATES)))].format(tone=tone)

    img = Image.new("L", (IMAGE_SIZE, IMAGE_SIZE), color=10)
    draw = ImageDraw.Draw(img)
    n_vertices = 3 + emotion_id
    rotation = 0.35 * emotion_id
    cx = cy = IMAGE_SIZE / 2
    radius = IMAGE_SIZE * 0.38
    verts = [
        (
            cx + radius * np.cos(rotation + 2 * np.pi * k / n_vertices),
            cy + radius * np.sin(rotation + 2 * np.pi * k / n_vertices),
        )
        for k in range(n_vertices)
    ]
    draw.polygon(verts, fill=int(60 + 195 * intensity))
    return text, np.asarray(img, dtype=np.uint8)


def generate_corpus(spec: FactorSpec, out_dir: str | Path) -> Path:
    """Write mels, prompt images, manifest.jsonl and the factors sidecar.

    Pure function of (spec, seed): regeneration is byte-identical. Each
    utterance derives its own RNG stream from (seed, utterance index), so a
    parallel implementation would produce the same corpus.
    """
    out = Path(out_dir)
    (out / "mels").mkdir(parents=True, exist_ok=True)
    (out / "prompts").mkdir(parents=True, exist_ok=True)

    manifest_lines = []
    factor_lines = []
    utt_index = 0
    for speaker in range(spec.n_speakers):
        for j in range(spec.utterances_per_speaker):
            rng = np.random.default_rng([spec.seed, 404, utt_index])
            emotion = utt_index % spec.n_emotions
            factors = sample_factors(spec, rng, speaker_id=speaker, emotion_id=emotion)
            mel = render_utterance(factors, spec)
            text, image = make_prompt_assets(emotion, factors.intensity, spec)

            utt_id = f"s{speaker:02d}u{j:03d}"
            mel_rel = f"mels/{utt_id}.mel"
            img_rel = f"prompts/{utt_id}.png"
            (out / mel_rel).write_bytes(serialize_mel(mel))
            Image.fromarray(image, mode="L").save(out / img_rel)

            record = UtteranceRecord(
                utt_id=utt_id,
                speaker_id=speaker,
                emotion_id=emotion,
                phonemes=factors.phonemes,
                durations=factors.durations,
                mel_path=mel_rel,
                text_prompt=text,
                image_prompt_path=img_rel,
            )
            report = validate_record(record, out)
            if not report.ok:
                raise IOError(f"generated record {utt_id} failed validation: {report.issues}")
            manifest_lines.append(record.to_json())
            factor_lines.append(
                json.dumps(
                    {
                        "utt_id": utt_id,
                        "speaker_id": factors.speaker_id,
                        "emotion_id": factors.emotion_id,
                        "intensity": factors.intensity,
                        "phonemes": list(factors.phonemes.ids),
                        "durations": list(factors.durations.frames),
                        "contour": [float(c) for c in factors.contour],
                    },
                    sort_keys=True,
                )
            )
            utt_index += 1

    manifest_path = out / "manifest.jsonl"
    manifest_path.write_text("".join(line + "\n" for line in manifest_lines), encoding="utf-8")
    (out / "factors.jsonl").write_text(
        "".join(line + "\n" for line in factor_lines), encoding="utf-8"
    )
    (out / "corpus_spec.json").write_text(json.dumps(spec.to_dict(), indent=2, sort_keys=True))
    return manifest_path


class Dataset:
    """Order-stable view over a manifest; records parse lazily."""

    def __init__(self, manifest_path: str | Path):
        self.manifest_path = Path(manifest_path)
        self.root = self.manifest_path.parent
        text = self.manifest_path.read_text(encoding="utf-8")
        self._lines = [ln for ln in text.splitlines() if ln.strip()]
        self._records: list[UtteranceRecord] | None = None

    def __len__(self) -> int:
        return len(self._lines)

    def __iter__(self) -> Iterator[UtteranceRecord]:
        return iter(self.records())

    def records(self) -> list[UtteranceRecord]:
        if self._records is None:
            records = []
            for i, line in enumerate(self._lines, start=1):
                try:
                    records.append(UtteranceRecord.from_json(line))
                except (KeyError, ValueError) as exc:
                    raise ManifestError(f"unparseable record: {exc}", i) from exc
            self._records = records
        return self._records

    def spec(self) -> FactorSpec | None:
        spec_path = self.root / "corpus_spec.json"
        if spec_path.is_file():
            return FactorSpec.from_dict(json.loads(spec_path.read_text()))
        return None


def load_manifest(path: str | Path) -> Dataset:
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"manifest not found: {p}")
    return Dataset(p)


def load_factors(path: str | Path) -> list[dict]:
    """Ground-truth factor sidecar. Test/eval-only; training never calls this."""
    rows = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.strip():
            rows.append(json.loads(line))
    return rows


def split_records(
    records: list[UtteranceRecord], holdout_fraction: float, seed: int
) -> tuple[list[UtteranceRecord], list[UtteranceRecord]]:
    """Deterministic train/held-out split."""
    rng = np.random.default_rng([seed, 505])
    order = rng.permutation(len(records))
    n_hold = max(1, int(round(holdout_fraction * len(records)))) if records else 0
    hold_idx = set(int(i) for i in order[:n_hold])
    train = [r for i, r in enumerate(records) if i not in hold_idx]
    hold = [r for i, r in enumerate(records) if i in hold_idx]
    return train, hold


def replace_factors_emotion(
    factors: LatentFactors, spec: FactorSpec, emotion_id: int, rng: np.random.Generator
) -> LatentFactors:
    """Same content/timbre factors, new emotion family contour (test helper)."""
    center, slope, freq, osc_amp = emotion_contour_params(emotion_id, spec.n_emotions)
    total = factors.durations.total_frames
    phase = float(rng.uniform(0.0, 2.0 * np.pi))
    u = (np.arange(total) + 0.5) / total
    shape = center + slope * (u - 0.5) + osc_amp * np.sin(2 * np.pi * freq * u + phase)
    contour = (np.clip(shape, 0.03, 0.97) * (spec.low_band - 1)).astype(np.float32)
    return replace(factors, emotion_id=emotion_id, contour=contour)
