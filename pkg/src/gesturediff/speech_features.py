"""Audio, text, and speaker conditioning features, frame-aligned to 30 fps.

Audio columns (1133 total): MFCC 40 | log-mel 64 | pitch 2 | energy 2 |
pretrained embedding 1024 | onset 1. Analysis runs on a 25 ms window / 10 ms
hop grid after internal linear resampling to 16 kHz; every channel is then
linearly interpolated onto the motion frame grid.

The pretrained-embedding block is consumed from an optional GDF1 sidecar
(precomputed elsewhere); without one it is zero-filled so the pipeline stays
self-contained.

Text columns (302 total): 300-dim word embedding | laugh bit | constant 0.
Words outside the lexicon fall back to a hash-seeded unit-norm vector, so
extraction is deterministic end to end.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.fft
import scipy.io.wavfile

from .sidecars import read_gdf1

AUDIO_SAMPLE_RATE = 16_000
WINDOW_SECONDS = 0.025
HOP_SECONDS = 0.010
N_MFCC = 40
N_MELS = 64
EMBEDDING_DIM = 1024
AUDIO_DIM = N_MFCC + N_MELS + 2 + 2 + EMBEDDING_DIM + 1  # 1133

WORD_EMBEDDING_DIM = 300
TEXT_DIM = WORD_EMBEDDING_DIM + 2  # 302

N_SPEAKERS = 17

PITCH_FMIN = 60.0
PITCH_FMAX = 400.0
PITCH_NORM_HZ = 500.0
VOICING_THRESHOLD = 0.5

MOTION_FPS = 30


@dataclass(frozen=True)
class AudioFeatureSeq:
    frames: np.ndarray  # (N, 1133)

    def __post_init__(self):
        frames = np.asarray(self.frames, dtype=np.float64)
        object.__setattr__(self, "frames", frames)
        if frames.ndim != 2 or frames.shape[1] != AUDIO_DIM:
            raise ValueError(f"audio features must be (N, {AUDIO_DIM}), got {frames.shape}")

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]


@dataclass(frozen=True)
class TextFeatureSeq:
    frames: np.ndarray  # (N, 302)

    def __post_init__(self):
        frames = np.asarray(self.frames, dtype=np.float64)
        object.__setattr__(self, "frames", frames)
        if frames.ndim != 2 or frames.shape[1] != TEXT_DIM:
            raise ValueError(f"text features must be (N, {TEXT_DIM}), got {frames.shape}")

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]


@dataclass(frozen=True)
class WordSpan:
    start: float
    end: float
    word: str


@dataclass(frozen=True)
class Transcript:
    words: tuple[WordSpan, ...]

    def __post_init__(self):
        for span in self.words:
            if not (0.0 <= span.start <= span.end):
                raise ValueError(f"bad word interval [{span.start}, {span.end}] for {span.word!r}")
        starts = [w.start for w in self.words]
        if starts != sorted(starts):
            raise ValueError("transcript entries must be time-sorted")


def parse_transcript_tsv(text: str) -> Transcript:
    """Three tab-separated columns per line: start(s), end(s), word."""
    words = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise ValueError(f"transcript line {lineno}: expected 3 tab-separated fields")
        try:
            start, end = float(parts[0]), float(parts[1])
        except ValueError:
            raise ValueError(f"transcript line {lineno}: non-numeric time stamp") from None
        words.append(WordSpan(start=start, end=end, word=parts[2].strip()))
    return Transcript(words=tuple(sorted(words, key=lambda w: w.start)))


def speaker_onehot(speaker_id: int) -> np.ndarray:
    """One-hot 17-vector for a speaker index."""
    if not 0 <= speaker_id < N_SPEAKERS:
        raise ValueError(f"speaker id must be in [0, {N_SPEAKERS}), got {speaker_id}")
    onehot = np.zeros(N_SPEAKERS)
    onehot[speaker_id] = 1.0
    return onehot


def read_wav(path: str | Path) -> tuple[np.ndarray, int]:
    """Load RIFF PCM audio as mono float64 in [-1, 1]; stereo is averaged."""
    sample_rate, data = scipy.io.wavfile.read(path)
    if data.dtype == np.int16:
        signal = data.astype(np.float64) / 32768.0
    elif data.dtype == np.int32:
        signal = data.astype(np.float64) / 2147483648.0
    elif data.dtype == np.uint8:
        signal = (data.astype(np.float64) - 128.0) / 128.0
    else:
        signal = data.astype(np.float64)
    if signal.ndim == 2:
        signal = signal.mean(axis=1)
    return signal, int(sample_rate)


def align_to_frames(features: np.ndarray, n_frames: int) -> np.ndarray:
    """Per-column linear interpolation from M source rows to n_frames rows.

    Source and target grids span the same time extent; endpoints clamp.
    """
    features = np.asarray(features, dtype=np.float64)
    m = features.shape[0]
    if m < 2:
        raise ValueError(f"need at least 2 source rows to interpolate, got {m}")
    if n_frames < 1:
        raise ValueError(f"target frame count must be >= 1, got {n_frames}")
    if n_frames == 1:
        return features[:1].copy()
    idx = np.linspace(0.0, m - 1.0, n_frames)
    lo = np.floor(idx).astype(int)
    hi = np.minimum(lo + 1, m - 1)
    w = (idx - lo)[:, None]
    return (1.0 - w) * features[lo] + w * features[hi]


def _resample_linear(signal: np.ndarray, sr: int, target_sr: int) -> np.ndarray:
    if sr == target_sr:
        return signal
    n_out = max(int(round(len(signal) * target_sr / sr)), 1)
    t_out = np.arange(n_out) / target_sr
    t_in = np.arange(len(signal)) / sr
    return np.interp(t_out, t_in, signal)


def _hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f) / 700.0)


def _mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m) / 2595.0) - 1.0)


def _mel_filterbank(n_mels: int, n_fft: int, sr: int) -> np.ndarray:
    """Triangular mel filters over rfft bins, fmin 0 to fmax sr/2."""
    mel_points = np.linspace(_hz_to_mel(0.0), _hz_to_mel(sr / 2.0), n_mels + 2)
    hz_points = _mel_to_hz(mel_points)
    bins = hz_points / (sr / 2.0) * (n_fft // 2)
    fb = np.zeros((n_mels, n_fft // 2 + 1))
    for m in range(n_mels):
        left, center, right = bins[m], bins[m + 1], bins[m + 2]
        k = np.arange(n_fft // 2 + 1)
        up = (k - left) / max(center - left, 1e-9)
        down = (right - k) / max(right - center, 1e-9)
        fb[m] = np.clip(np.minimum(up, down), 0.0, None)
    return fb


def _frame_signal(signal: np.ndarray, win: int, hop: int) -> np.ndarray:
    if len(signal) < win + hop:
        signal = np.pad(signal, (0, win + hop - len(signal)))
    n_frames = 1 + (len(signal) - win) // hop
    idx = np.arange(win)[None, :] + hop * np.arange(n_frames)[:, None]
    return signal[idx]


def _pitch_track(frames: np.ndarray, sr: int) -> np.ndarray:
    """Normalized F0 and voicing flag per frame via autocorrelation."""
    n_frames, win = frames.shape
    lag_min = int(sr / PITCH_FMAX)
    lag_max = min(int(sr / PITCH_FMIN), win - 1)
    n_fft = int(2 ** np.ceil(np.log2(2 * win)))
    spectrum = np.fft.rfft(frames, n=n_fft, axis=1)
    ac = np.fft.irfft(np.abs(spectrum) ** 2, axis=1)[:, : lag_max + 1]

    out = np.zeros((n_frames, 2))
    power = ac[:, 0]
    active = power > 1e-12
    # Peak picking on the biased autocorrelation: its linear lag taper keeps
    # the fundamental above its sub-harmonic repeats. The unbiased value at
    # the chosen lag (near 1 for truly periodic frames) gates voicing.
    lags = np.arange(lag_min, lag_max + 1)
    biased = ac[:, lag_min:] / np.maximum(power, 1e-12)[:, None]
    best = np.argmax(biased, axis=1)
    best_val = biased[np.arange(n_frames), best] * (win / (win - lags[best]))
    voiced = active & (best_val > VOICING_THRESHOLD)

    for i in np.nonzero(voiced)[0]:
        lag = lag_min + best[i]
        # Parabolic refinement on the raw autocorrelation peak.
        if 1 <= lag < ac.shape[1] - 1:
            y0, y1, y2 = ac[i, lag - 1], ac[i, lag], ac[i, lag + 1]
            denom = y0 - 2 * y1 + y2
            if abs(denom) > 1e-12:
                lag = lag + 0.5 * (y0 - y2) / denom
        f0 = sr / lag
        out[i, 0] = f0 / PITCH_NORM_HZ
        out[i, 1] = 1.0
    return out


def extract_audio_features(
    signal: np.ndarray,
    sample_rate: int,
    target_frames: int,
    embedding_sidecar: str | Path | None = None,
) -> AudioFeatureSeq:
    """Compute the 1133-dim audio conditioning matrix, aligned to target_frames.

    The embedding block is read from a GDF1 sidecar when given (1024 columns
    required; rows interpolated onto the target grid) and zero-filled
    otherwise.
    """
    if sample_rate < 8000:
        raise ValueError(f"sample rate {sample_rate} below the 8 kHz minimum")
    if target_frames < 1:
        raise ValueError(f"target_frames must be >= 1, got {target_frames}")
    signal = np.asarray(signal, dtype=np.float64).reshape(-1)
    if signal.size == 0:
        raise ValueError("empty audio signal")

    signal = _resample_linear(signal, sample_rate, AUDIO_SAMPLE_RATE)
    sr = AUDIO_SAMPLE_RATE
    win = int(round(WINDOW_SECONDS * sr))
    hop = int(round(HOP_SECONDS * sr))
    frames = _frame_signal(signal, win, hop)
    n_frames = frames.shape[0]

    window = np.hanning(win)
    spectrum = np.abs(np.fft.rfft(frames * window, axis=1)) ** 2
    mel = np.log(spectrum @ _mel_filterbank(N_MELS, win, sr).T + 1e-10)
    mfcc = scipy.fft.dct(mel, type=2, norm="ortho", axis=1)[:, :N_MFCC]

    pitch = _pitch_track(frames, sr)

    rms = np.sqrt((frames**2).mean(axis=1))
    energy = np.zeros((n_frames, 2))
    energy[:, 0] = rms
    energy[1:, 1] = np.diff(rms)

    onset = np.zeros((n_frames, 1))
    flux = np.clip(mel[1:] - mel[:-1], 0.0, None).mean(axis=1)
    onset[1:, 0] = flux

    core = np.hstack([mfcc, mel, pitch, energy, onset])
    core = align_to_frames(core, target_frames)

    if embedding_sidecar is not None:
        emb = read_gdf1(embedding_sidecar)
        if emb.shape[1] != EMBEDDING_DIM:
            raise ValueError(
                f"embedding sidecar has {emb.shape[1]} columns, expected {EMBEDDING_DIM}"
            )
        if emb.shape[0] != target_frames:
            emb = align_to_frames(emb, target_frames)
        embedding = emb
    else:
        embedding = np.zeros((target_frames, EMBEDDING_DIM))

    stacked = np.hstack([core[:, : N_MFCC + N_MELS + 4], embedding, core[:, -1:]])
    return AudioFeatureSeq(frames=stacked)


class WordEmbeddingLexicon:
    """Word -> 300-dim vectors with a deterministic hash fallback for OOV.

    Text format: one "word v1 ... v300" line per entry.
    """

    def __init__(self, table: dict[str, np.ndarray] | None = None, dim: int = WORD_EMBEDDING_DIM):
        self.dim = dim
        self.table = {}
        for word, vec in (table or {}).items():
            vec = np.asarray(vec, dtype=np.float64)
            if vec.shape != (dim,):
                raise ValueError(f"embedding for {word!r} has shape {vec.shape}, expected ({dim},)")
            self.table[word] = vec

    @classmethod
    def from_text(cls, text: str, dim: int = WORD_EMBEDDING_DIM) -> "WordEmbeddingLexicon":
        table = {}
        for lineno, line in enumerate(text.splitlines(), start=1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != dim + 1:
                raise ValueError(f"lexicon line {lineno}: expected word + {dim} floats")
            table[parts[0]] = np.array([float(v) for v in parts[1:]])
        return cls(table, dim=dim)

    @classmethod
    def from_file(cls, path: str | Path, dim: int = WORD_EMBEDDING_DIM) -> "WordEmbeddingLexicon":
        return cls.from_text(Path(path).read_text(encoding="utf-8"), dim=dim)

    def vector(self, word: str) -> np.ndarray:
        vec = self.table.get(word)
        if vec is not None:
            return vec
        digest = hashlib.sha256(word.encode("utf-8")).digest()
        rng = np.random.default_rng(int.from_bytes(digest[:8], "little"))
        fallback = rng.standard_normal(self.dim)
        return fallback / np.linalg.norm(fallback)


def frame_align_text(
    transcript: Transcript,
    lexicon: WordEmbeddingLexicon,
    n_frames: int,
    fps: int = MOTION_FPS,
) -> TextFeatureSeq:
    """Frame-level aligned word vectors plus laugh bit and a constant-zero bit.

    Frame t (at time t/fps) takes the embedding of the word whose
    [start, end) interval covers it; frames with no word stay zero. The
    laugh token '#' sets the laugh bit instead of carrying semantics of its
    own (it still gets its lexicon/hash embedding).
    """
    if n_frames < 1:
        raise ValueError(f"n_frames must be >= 1, got {n_frames}")
    if lexicon.dim != TEXT_DIM - 2:
        raise ValueError(f"lexicon dim {lexicon.dim} incompatible with {TEXT_DIM}-wide features")

    for prev, cur in zip(transcript.words, transcript.words[1:]):
        if cur.start < prev.end:
            raise ValueError(
                f"overlapping word intervals: {prev.word!r} [{prev.start}, {prev.end}) and "
                f"{cur.word!r} [{cur.start}, {cur.end})"
            )

    out = np.zeros((n_frames, TEXT_DIM))
    for span in transcript.words:
        first = int(np.ceil(span.start * fps - 1e-9))
        last = int(np.ceil(span.end * fps - 1e-9)) - 1
        first = max(first, 0)
        last = min(last, n_frames - 1)
        if last < first:
            continue
        out[first : last + 1, :WORD_EMBEDDING_DIM] = lexicon.vector(span.word)
        if span.word == "#":
            out[first : last + 1, WORD_EMBEDDING_DIM] = 1.0
    return TextFeatureSeq(frames=out)
