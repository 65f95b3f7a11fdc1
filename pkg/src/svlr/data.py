"""Feature matrices, corpus indexing, context stacking, and synthetic corpora.

Feature files are binary: magic ``SVF1``, two little-endian u32 fields giving
the frame count L and feature dimension F, then L*F IEEE-754 float32 values in
row-major order.  A corpus index is a UTF-8 text file with one utterance per
line: ``<utterance_id> <speaker_id> <relative_path>``.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

FEATURE_MAGIC = b"SVF1"
INDEX_FILENAME = "index.txt"


class FeatureFileError(ValueError):
    """Malformed feature file: bad magic, bad header, or bad payload."""


@dataclass(frozen=True)
class FrameMatrix:
    """L x F matrix of acoustic feature vectors for one utterance."""

    frames: np.ndarray
    utterance_id: str = ""

    def __post_init__(self) -> None:
        frames = np.asarray(self.frames, dtype=np.float64)
        if frames.ndim != 2 or frames.shape[0] < 1 or frames.shape[1] < 1:
            raise ValueError(f"frames must be a nonempty 2-D matrix, got shape {frames.shape}")
        if not np.isfinite(frames).all():
            raise ValueError(f"non-finite feature value in utterance {self.utterance_id!r}")
        object.__setattr__(self, "frames", frames)

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def dim(self) -> int:
        return self.frames.shape[1]


def save_features(mat: FrameMatrix, path: str | Path) -> None:
    """Write one utterance to the binary feature format (float32 payload)."""
    with open(path, "wb") as fh:
        fh.write(FEATURE_MAGIC)
        fh.write(struct.pack("<II", mat.n_frames, mat.dim))
        fh.write(np.ascontiguousarray(mat.frames, dtype="<f4").tobytes())


def load_features(path: str | Path) -> FrameMatrix:
    """Read one utterance from the binary feature format.

    Raises FileNotFoundError for a missing file and FeatureFileError for a bad
    magic, a payload whose size disagrees with the header, or non-finite
    values.
    """
    path = Path(path)
    data = path.read_bytes()
    if len(data) < 12 or data[:4] != FEATURE_MAGIC:
        raise FeatureFileError(f"{path}: not a feature file (bad magic or truncated header)")
    n_frames, dim = struct.unpack("<II", data[4:12])
    payload = data[12:]
    expected = n_frames * dim * 4
    if len(payload) != expected:
        raise FeatureFileError(
            f"{path}: payload holds {len(payload) // 4} values, header declares {n_frames}x{dim}"
        )
    values = np.frombuffer(payload, dtype="<f4").astype(np.float64).reshape(n_frames, dim)
    if not np.isfinite(values).all():
        raise FeatureFileError(f"{path}: NaN or Inf in payload")
    return FrameMatrix(values, utterance_id=path.stem)


def stack_context(mat: FrameMatrix, half_window: int) -> FrameMatrix:
    """Concatenate each frame with its half_window neighbours on both sides.

    Row l of the output is [z_{l-W}; ...; z_l; ...; z_{l+W}].  Frames past the
    utterance boundaries are replaced by the nearest edge frame, so the frame
    count is preserved and the dimension grows to (2W+1)*F.
    """
    if half_window < 0:
        raise ValueError("half_window must be >= 0")
    if half_window == 0:
        return mat
    z = mat.frames
    padded = np.pad(z, ((half_window, half_window), (0, 0)), mode="edge")
    n = z.shape[0]
    cols = [padded[i : i + n] for i in range(2 * half_window + 1)]
    return FrameMatrix(np.hstack(cols), mat.utterance_id)


def split_segments(mat: FrameMatrix, seg_len: int) -> list[FrameMatrix]:
    """Cut an utterance into consecutive non-overlapping fixed-length segments.

    A trailing remainder shorter than seg_len is dropped.
    """
    if seg_len < 1:
        raise ValueError("seg_len must be >= 1")
    n_segments = mat.n_frames // seg_len
    return [
        FrameMatrix(mat.frames[k * seg_len : (k + 1) * seg_len], f"{mat.utterance_id}#{k:03d}")
        for k in range(n_segments)
    ]


@dataclass(frozen=True)
class CorpusIndex:
    """Speaker/utterance bookkeeping: utterance_id -> (speaker_id, relative path)."""

    speakers: tuple[str, ...]
    utterances: dict[str, tuple[str, str]]

    def __post_init__(self) -> None:
        object.__setattr__(self, "speakers", tuple(self.speakers))
        known = set(self.speakers)
        seen: set[str] = set()
        for utt_id, (speaker_id, _path) in self.utterances.items():
            if speaker_id not in known:
                raise ValueError(f"utterance {utt_id!r} maps to unindexed speaker {speaker_id!r}")
            seen.add(speaker_id)
        missing = known - seen
        if missing:
            raise ValueError(f"speakers without utterances: {sorted(missing)}")

    def utterances_of(self, speaker_id: str) -> list[str]:
        return [u for u, (s, _p) in self.utterances.items() if s == speaker_id]

    def counts(self) -> dict[str, int]:
        out = {s: 0 for s in self.speakers}
        for _u, (s, _p) in self.utterances.items():
            out[s] += 1
        return out


def save_index(index: CorpusIndex, path: str | Path) -> None:
    lines = [f"{utt} {spk} {rel}" for utt, (spk, rel) in index.utterances.items()]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_index(path: str | Path) -> CorpusIndex:
    utterances: dict[str, tuple[str, str]] = {}
    speakers: list[str] = []
    for line_no, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) != 3:
            raise ValueError(f"{path}:{line_no}: expected '<utt> <speaker> <path>', got {line!r}")
        utt, spk, rel = parts
        if utt in utterances:
            raise ValueError(f"{path}:{line_no}: duplicate utterance id {utt!r}")
        utterances[utt] = (spk, rel)
        if spk not in speakers:
            speakers.append(spk)
    return CorpusIndex(tuple(speakers), utterances)


@dataclass(frozen=True)
class SynthSpec:
    """Parameters of the synthetic speaker corpus generator.

    Each speaker draws a mean vector (scale speaker_spread); each utterance
    adds a per-utterance channel offset (channel_spread) and per-frame
    isotropic noise (frame_noise).  Generation is a pure function of the spec.
    """

    n_speakers: int
    utts_per_speaker: int
    frames_per_utt: int
    feature_dim: int
    speaker_spread: float = 1.0
    channel_spread: float = 0.3
    frame_noise: float = 0.5
    seed: int = 0

    def __post_init__(self) -> None:
        for name in ("n_speakers", "utts_per_speaker", "frames_per_utt", "feature_dim"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        for name in ("speaker_spread", "channel_spread", "frame_noise"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")


def generate_corpus(spec: SynthSpec) -> tuple[CorpusIndex, dict[str, FrameMatrix]]:
    """Generate the synthetic corpus in memory, deterministically from the seed."""
    rng = np.random.default_rng(spec.seed)
    utterances: dict[str, tuple[str, str]] = {}
    features: dict[str, FrameMatrix] = {}
    speakers = []
    for i in range(spec.n_speakers):
        spk = f"spk{i:03d}"
        speakers.append(spk)
        mean = spec.speaker_spread * rng.standard_normal(spec.feature_dim)
        for j in range(spec.utts_per_speaker):
            utt = f"{spk}_u{j:02d}"
            offset = spec.channel_spread * rng.standard_normal(spec.feature_dim)
            noise = spec.frame_noise * rng.standard_normal((spec.frames_per_utt, spec.feature_dim))
            features[utt] = FrameMatrix(mean + offset + noise, utt)
            utterances[utt] = (spk, f"{utt}.svf")
    return CorpusIndex(tuple(speakers), utterances), features


def synth_corpus(spec: SynthSpec, out_dir: str | Path) -> CorpusIndex:
    """Generate the synthetic corpus and write it to disk.

    Writes one feature file per utterance plus the corpus index; regenerating
    with the same spec yields byte-identical files.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    index, features = generate_corpus(spec)
    for utt, (_spk, rel) in index.utterances.items():
        save_features(features[utt], out_dir / rel)
    save_index(index, out_dir / INDEX_FILENAME)
    return index


def load_corpus(index_path: str | Path) -> tuple[CorpusIndex, dict[str, FrameMatrix]]:
    """Load a corpus index and every feature file it references."""
    index_path = Path(index_path)
    index = load_index(index_path)
    base = index_path.parent
    features = {}
    for utt, (_spk, rel) in index.utterances.items():
        mat = load_features(base / rel)
        features[utt] = FrameMatrix(mat.frames, utt)
    return index, features
