"""Core domain types, validation, and serialization.

Conventions shared by every module:

- A mel-spectrogram is an (n_mels, n_frames) float32 matrix of log-magnitude
  energies. Row 0 is the lowest band. The binary container is little-endian
  float32, row-major, behind a 16-byte header (8-byte magic + uint32 n_mels +
  uint32 n_frames). The same container stores any 2-D float32 array, which is
  how checkpoints persist parameter tensors.
- Manifests are JSON-Lines, one UtteranceRecord per line, UTF-8.
- All types are immutable values after construction (arrays are marked
  read-only); they can be shared freely across threads.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ContractViolation, ParseError

MEL_MAGIC = b"MELSPEC1"
HEADER_SIZE = 16
DEFAULT_FRAME_HOP_S = 0.0125


def _freeze(arr: np.ndarray) -> np.ndarray:
    out = np.array(arr, dtype=np.float32, copy=True)
    out.flags.writeable = False
    return out


@dataclass(frozen=True)
class MelSpectrogram:
    """Log-mel matrix (n_mels x n_frames) plus its frame hop in seconds."""

    values: np.ndarray
    n_mels: int
    frame_hop_s: float = DEFAULT_FRAME_HOP_S

    def __post_init__(self):
        vals = _freeze(self.values)
        object.__setattr__(self, "values", vals)
        if vals.ndim != 2:
            raise ContractViolation(f"mel values must be 2-D, got shape {vals.shape}")
        if self.n_mels <= 0 or vals.shape[0] != self.n_mels:
            raise ContractViolation(
                f"mel has {vals.shape[0]} rows but n_mels={self.n_mels}"
            )
        if vals.shape[1] < 1:
            raise ContractViolation("mel must have at least one frame")
        if self.frame_hop_s <= 0:
            raise ContractViolation(f"frame_hop_s must be positive, got {self.frame_hop_s}")
        if not np.isfinite(vals).all():
            raise ContractViolation("mel contains non-finite entries")

    @property
    def n_frames(self) -> int:
        return int(self.values.shape[1])


@dataclass(frozen=True)
class PhonemeSequence:
    """Integer phoneme ids in [0, vocab)."""

    ids: tuple[int, ...]
    vocab: int

    def __post_init__(self):
        object.__setattr__(self, "ids", tuple(int(i) for i in self.ids))
        if len(self.ids) < 1:
            raise ContractViolation("phoneme sequence must be non-empty")
        if self.vocab < 1:
            raise ContractViolation(f"phoneme vocab must be >= 1, got {self.vocab}")
        for i in self.ids:
            if not 0 <= i < self.vocab:
                raise ContractViolation(f"phoneme id {i} outside [0, {self.vocab})")

    def __len__(self) -> int:
        return len(self.ids)


@dataclass(frozen=True)
class DurationSequence:
    """Per-phoneme frame counts (non-negative integers)."""

    frames: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "frames", tuple(int(f) for f in self.frames))
        if len(self.frames) < 1:
            raise ContractViolation("duration sequence must be non-empty")
        for f in self.frames:
            if f < 0:
                raise ContractViolation(f"negative duration {f}")

    @property
    def total_frames(self) -> int:
        return sum(self.frames)

    def __len__(self) -> int:
        return len(self.frames)


@dataclass(frozen=True)
class EmotionCode:
    """Vector in the unified emotion latent space."""

    vector: np.ndarray

    def __post_init__(self):
        vec = _freeze(np.asarray(self.vector).reshape(-1))
        object.__setattr__(self, "vector", vec)
        if vec.size < 1:
            raise ContractViolation("emotion code must be non-empty")
        if not np.isfinite(vec).all():
            raise ContractViolation("emotion code contains non-finite entries")

    @property
    def dim(self) -> int:
        return int(self.vector.size)


@dataclass(frozen=True)
class TimbreVector:
    """Global per-utterance speaker embedding, unit L2 norm."""

    vector: np.ndarray

    def __post_init__(self):
        vec = np.asarray(self.vector, dtype=np.float32).reshape(-1)
        if vec.size < 1:
            raise ContractViolation("timbre vector must be non-empty")
        if not np.isfinite(vec).all():
            raise ContractViolation("timbre vector contains non-finite entries")
        norm = float(np.linalg.norm(vec))
        if norm == 0.0:
            raise ContractViolation("timbre vector has zero norm")
        object.__setattr__(self, "vector", _freeze(vec / norm))

    @property
    def dim(self) -> int:
        return int(self.vector.size)


@dataclass(frozen=True)
class ProsodyCodeSequence:
    """Indices into a learned prosody codebook, one per downsampled frame."""

    codes: tuple[int, ...]
    codebook_size: int

    def __post_init__(self):
        object.__setattr__(self, "codes", tuple(int(c) for c in self.codes))
        if self.codebook_size < 1:
            raise ContractViolation(f"codebook size must be >= 1, got {self.codebook_size}")
        for c in self.codes:
            if not 0 <= c < self.codebook_size:
                raise ContractViolation(f"code {c} outside [0, {self.codebook_size})")

    def __len__(self) -> int:
        return len(self.codes)


@dataclass(frozen=True)
class UtteranceRecord:
    """One manifest row: alignment, assets, and prompt references.

    ``embeds`` optionally maps a modality name ("speech" | "text" | "image")
    to a vector file holding a precomputed emotion embedding; when present,
    the emotion encoder ingests it instead of running its toy extractor.
    """

    utt_id: str
    speaker_id: int
    emotion_id: int
    phonemes: PhonemeSequence
    durations: DurationSequence
    mel_path: str
    text_prompt: str
    image_prompt_path: str
    embeds: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        if not self.utt_id:
            raise ContractViolation("utt_id must be non-empty")
        if self.speaker_id < 0:
            raise ContractViolation(f"speaker_id must be >= 0, got {self.speaker_id}")
        if self.emotion_id < 0:
            raise ContractViolation(f"emotion_id must be >= 0, got {self.emotion_id}")
        if len(self.phonemes) != len(self.durations):
            raise ContractViolation(
                f"{len(self.phonemes)} phonemes but {len(self.durations)} durations"
            )

    def to_json(self) -> str:
        payload = {
            "utt_id": self.utt_id,
            "speaker_id": self.speaker_id,
            "emotion_id": self.emotion_id,
            "phonemes": list(self.phonemes.ids),
            "phoneme_vocab": self.phonemes.vocab,
            "durations": list(self.durations.frames),
            "mel_path": self.mel_path,
            "text_prompt": self.text_prompt,
            "image_prompt_path": self.image_prompt_path,
        }
        if self.embeds:
            payload["embeds"] = dict(sorted(self.embeds.items()))
        return json.dumps(payload, sort_keys=True)

    @classmethod
    def from_json(cls, line: str) -> "UtteranceRecord":
        obj = json.loads(line)
        return cls(
            utt_id=obj["utt_id"],
            speaker_id=int(obj["speaker_id"]),
            emotion_id=int(obj["emotion_id"]),
            phonemes=PhonemeSequence(tuple(obj["phonemes"]), int(obj["phoneme_vocab"])),
            durations=DurationSequence(tuple(obj["durations"])),
            mel_path=obj["mel_path"],
            text_prompt=obj["text_prompt"],
            image_prompt_path=obj["image_prompt_path"],
            embeds=dict(obj.get("embeds", {})),
        )


@dataclass(frozen=True)
class ValidationIssue:
    kind: str  # "missing-asset" | "alignment"
    message: str


@dataclass(frozen=True)
class ValidationReport:
    utt_id: str
    issues: tuple[ValidationIssue, ...]

    @property
    def ok(self) -> bool:
        return not self.issues


# ---------------------------------------------------------------------------
# Binary matrix container (shared by mels and checkpoint arrays)
# ---------------------------------------------------------------------------


def serialize_matrix(values: np.ndarray) -> bytes:
    """Pack a 2-D float32 array into the binary container."""
    arr = np.ascontiguousarray(values, dtype=np.float32)
    if arr.ndim != 2:
        raise ContractViolation(f"container stores 2-D arrays, got shape {arr.shape}")
    n_rows, n_cols = arr.shape
    header = MEL_MAGIC + np.array([n_rows, n_cols], dtype="<u4").tobytes()
    return header + arr.astype("<f4").tobytes()


def parse_matrix(data: bytes) -> np.ndarray:
    """Inverse of :func:`serialize_matrix`. Raises ParseError on malformed input."""
    if len(data) < HEADER_SIZE:
        raise ParseError(
            f"header requires {HEADER_SIZE} bytes, payload has {len(data)}", len(data)
        )
    if data[:8] != MEL_MAGIC:
        raise ParseError(f"bad magic {data[:8]!r}", 0)
    n_rows, n_cols = np.frombuffer(data[8:HEADER_SIZE], dtype="<u4")
    expected = HEADER_SIZE + int(n_rows) * int(n_cols) * 4
    if len(data) != expected:
        raise ParseError(
            f"expected {expected} bytes for {n_rows}x{n_cols} matrix, got {len(data)}",
            min(len(data), expected),
        )
    flat = np.frombuffer(data[HEADER_SIZE:], dtype="<f4")
    return flat.reshape(int(n_rows), int(n_cols)).copy()


def serialize_mel(mel: MelSpectrogram) -> bytes:
    return serialize_matrix(mel.values)


def deserialize_mel(data: bytes, frame_hop_s: float = DEFAULT_FRAME_HOP_S) -> MelSpectrogram:
    values = parse_matrix(data)
    return MelSpectrogram(values=values, n_mels=values.shape[0], frame_hop_s=frame_hop_s)


def write_mel(path: str | Path, mel: MelSpectrogram) -> None:
    Path(path).write_bytes(serialize_mel(mel))


def read_mel(path: str | Path, frame_hop_s: float = DEFAULT_FRAME_HOP_S) -> MelSpectrogram:
    return deserialize_mel(Path(path).read_bytes(), frame_hop_s=frame_hop_s)


def read_mel_header(path: str | Path) -> tuple[int, int]:
    """Read (n_mels, n_frames) without loading the payload."""
    with open(path, "rb") as fh:
        head = fh.read(HEADER_SIZE)
    if len(head) < HEADER_SIZE:
        raise ParseError(f"header requires {HEADER_SIZE} bytes, file has {len(head)}", len(head))
    if head[:8] != MEL_MAGIC:
        raise ParseError(f"bad magic {head[:8]!r}", 0)
    n_rows, n_cols = np.frombuffer(head[8:], dtype="<u4")
    return int(n_rows), int(n_cols)


def serialize_vector(vec: np.ndarray) -> bytes:
    """Store a 1-D vector as a 1xN matrix in the shared container."""
    return serialize_matrix(np.asarray(vec, dtype=np.float32).reshape(1, -1))


def parse_vector(data: bytes) -> np.ndarray:
    mat = parse_matrix(data)
    if mat.shape[0] != 1:
        raise ParseError(f"expected a 1xN vector container, got {mat.shape[0]} rows", HEADER_SIZE)
    return mat.reshape(-1)


# ---------------------------------------------------------------------------
# Record validation
# ---------------------------------------------------------------------------


def validate_record(record: UtteranceRecord, corpus_root: str | Path) -> ValidationReport:
    """Check a record's on-disk invariants. Pure: never mutates inputs.

    Issue kinds: "missing-asset" for absent mel/image/embedding files,
    "alignment" when the duration sum disagrees with the mel frame count.
    """
    root = Path(corpus_root)
    issues: list[ValidationIssue] = []

    mel_path = root / record.mel_path
    if not mel_path.is_file():
        issues.append(ValidationIssue("missing-asset", f"mel file not found: {mel_path}"))
    else:
        try:
            _, n_frames = read_mel_header(mel_path)
        except ParseError as exc:
            issues.append(ValidationIssue("missing-asset", f"unreadable mel {mel_path}: {exc}"))
        else:
            if record.durations.total_frames != n_frames:
                issues.append(
                    ValidationIssue(
                        "alignment",
                        f"durations sum to {record.durations.total_frames} "
                        f"but mel has {n_frames} frames",
                    )
                )

    if record.image_prompt_path:
        image_path = root / record.image_prompt_path
        if not image_path.is_file():
            issues.append(
                ValidationIssue("missing-asset", f"image prompt not found: {image_path}")
            )

    for modality, rel in sorted(record.embeds.items()):
        p = root / rel
        if not p.is_file():
            issues.append(
                ValidationIssue("missing-asset", f"{modality} embedding not found: {p}")
            )

    return ValidationReport(utt_id=record.utt_id, issues=tuple(issues))


def low_band_view(mel: MelSpectrogram, cut: int) -> np.ndarray:
    """Rows [0, cut) of a mel matrix; shared slicing helper."""
    if not 0 < cut <= mel.n_mels:
        raise ContractViolation(f"low-band cut {cut} outside (0, {mel.n_mels}]")
    return mel.values[:cut, :]


def frames_per_phoneme(durations: DurationSequence) -> list[tuple[int, int]]:
    """Half-open frame spans [(start, end), ...] for each phoneme."""
    spans = []
    start = 0
    for d in durations.frames:
        spans.append((start, start + d))
        start += d
    return spans


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    na = float(np.linalg.norm(a))
    nb = float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(np.dot(a, b) / (na * nb))


def uniform_ce(vocab: int) -> float:
    """Cross entropy of a uniform distribution over ``vocab`` classes."""
    return math.log(vocab)
