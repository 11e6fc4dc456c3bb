"""Audio-to-feature preprocessing for both acoustic pipelines.

Spectrogram path (fixed-length clips): resample to 8 kHz, magnitude STFT with
n_fft=256 (129 bins), per-bin z-score against training-set statistics, then
64-frame clips at a 32-frame stride. Transcript path: cut participant turns
out of the waveform and compute a log-Mel spectrogram per turn.

All functions here are deterministic pure functions; callers may parallelize
across sessions as long as output ordering follows input ordering.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
import scipy.signal

STA_N_FFT = 256
STA_HOP = 128
STA_BINS = STA_N_FFT // 2 + 1  # 129
STA_CLIP_LEN = 64
STA_CLIP_STRIDE = 32
STA_SAMPLE_RATE = 8000

MEL_SAMPLE_RATE = 16000
MEL_N_MELS = 64
MEL_WIN_SECONDS = 0.025
MEL_HOP_SECONDS = 0.010


@dataclass(frozen=True)
class Spectrogram:
    """Frequency-by-frame matrix with the audio parameters that produced it."""

    data: np.ndarray  # F x T
    sample_rate: float
    hop: int

    def __post_init__(self):
        if self.data.ndim != 2 or self.data.shape[0] < 1 or self.data.shape[1] < 1:
            raise ValueError(f"spectrogram must be F x T with F,T >= 1, got {self.data.shape}")
        if not np.all(np.isfinite(self.data)):
            raise ValueError("spectrogram contains non-finite values")

    @property
    def n_bins(self) -> int:
        return self.data.shape[0]

    @property
    def n_frames(self) -> int:
        return self.data.shape[1]


@dataclass(frozen=True)
class ClipBatch:
    """Fixed-size F x L clips cut from one spectrogram."""

    clips: list[np.ndarray]
    length: int
    stride: int

    def __post_init__(self):
        for clip in self.clips:
            if clip.shape[1] != self.length:
                raise ValueError(f"clip width {clip.shape[1]} != {self.length}")


@dataclass(frozen=True)
class NormStats:
    """Per-frequency-bin mean/std, computed on the training split only."""

    mean: np.ndarray
    std: np.ndarray


def resample(audio: np.ndarray, src_rate: float, dst_rate: float) -> np.ndarray:
    """Band-limited resampling; output length is round(len * dst_rate / src_rate)."""
    audio = np.asarray(audio, dtype=np.float64)
    if audio.ndim != 1 or audio.size == 0:
        raise ValueError("audio must be a non-empty 1-d sample vector")
    if src_rate <= 0 or dst_rate <= 0:
        raise ValueError("sample rates must be positive")
    if src_rate == dst_rate:
        return audio.copy()
    n_out = int(round(audio.size * dst_rate / src_rate))
    return scipy.signal.resample(audio, n_out)


def _frame_offsets(n_samples: int, hop: int) -> int:
    # Centered framing: 1 + floor(len / hop) frames.
    return 1 + n_samples // hop


def stft_spectrogram(audio: np.ndarray, n_fft: int = STA_N_FFT, hop: int = STA_HOP,
                     sample_rate: float = STA_SAMPLE_RATE) -> Spectrogram:
    """Centered magnitude STFT with a Hann window; F = n_fft/2 + 1 bins."""
    audio = np.asarray(audio, dtype=np.float64)
    if audio.ndim != 1 or audio.size == 0:
        raise ValueError("audio must be a non-empty 1-d sample vector")
    n_frames = _frame_offsets(audio.size, hop)
    padded = np.pad(audio, n_fft // 2)
    window = np.hanning(n_fft)
    frames = np.stack([padded[t * hop: t * hop + n_fft] for t in range(n_frames)])
    mag = np.abs(np.fft.rfft(frames * window, n=n_fft, axis=1)).T
    return Spectrogram(data=mag, sample_rate=sample_rate, hop=hop)


def spectrogram_stats(specs: list[Spectrogram]) -> NormStats:
    """Pool all frames of the given (training) spectrograms into per-bin stats."""
    if not specs:
        raise ValueError("need at least one spectrogram to compute stats")
    frames = np.concatenate([s.data for s in specs], axis=1)
    return NormStats(mean=frames.mean(axis=1), std=frames.std(axis=1))


def normalize_spectrogram(spec: Spectrogram, stats: NormStats) -> Spectrogram:
    """Per-bin z-score using training-set statistics; std floored at 1e-8."""
    std = np.maximum(stats.std, 1e-8)
    data = (spec.data - stats.mean[:, None]) / std[:, None]
    return Spectrogram(data=data, sample_rate=spec.sample_rate, hop=spec.hop)


def segment_clips(spec: Spectrogram, length: int = STA_CLIP_LEN,
                  stride: int = STA_CLIP_STRIDE) -> ClipBatch:
    """Cut F x `length` clips at the given frame stride.

    Offsets run 0, stride, 2*stride, ... while offset + length <= T. A
    spectrogram shorter than one clip yields a single right-zero-padded clip
    so short sessions are kept rather than dropped.
    """
    if length < 1 or stride < 1:
        raise ValueError("length and stride must be >= 1")
    t = spec.n_frames
    if t < length:
        clip = np.zeros((spec.n_bins, length))
        clip[:, :t] = spec.data
        return ClipBatch(clips=[clip], length=length, stride=stride)
    clips = [spec.data[:, off: off + length].copy()
             for off in range(0, t - length + 1, stride)]
    return ClipBatch(clips=clips, length=length, stride=stride)


def expected_clip_count(n_frames: int, length: int = STA_CLIP_LEN,
                        stride: int = STA_CLIP_STRIDE) -> int:
    return max(1, 1 + (n_frames - length) // stride)


def segment_by_transcript(
    audio: np.ndarray,
    transcript: list[tuple[float, float, str]],
    sample_rate: float,
    participant: str = "participant",
) -> list[np.ndarray]:
    """One waveform clip per participant turn, in transcript order."""
    audio = np.asarray(audio, dtype=np.float64)
    duration = audio.size / sample_rate
    clips = []
    for i, (start, stop, speaker) in enumerate(transcript):
        if not (0 <= start < stop):
            raise ValueError(f"transcript row {i}: times not monotone ({start}, {stop})")
        if stop > duration + 1e-9:
            raise ValueError(f"transcript row {i}: stop {stop}s beyond audio duration {duration:.3f}s")
        if speaker.strip().lower() != participant:
            continue
        a = int(round(start * sample_rate))
        b = int(round(stop * sample_rate))
        clips.append(audio[a:b].copy())
    return clips


def read_transcript_csv(path: str | Path) -> list[tuple[float, float, str]]:
    """Read (start_time, stop_time, speaker) rows; comma or tab separated."""
    path = Path(path)
    text = path.read_text(encoding="utf-8-sig")
    delimiter = "\t" if "\t" in text.splitlines()[0] else ","
    rows = []
    reader = csv.DictReader(text.splitlines(), delimiter=delimiter)
    if reader.fieldnames is None:
        raise ValueError(f"{path}: empty transcript")
    cols = {c.strip().lower(): c for c in reader.fieldnames}
    try:
        start_col, stop_col, speaker_col = cols["start_time"], cols["stop_time"], cols["speaker"]
    except KeyError as exc:
        raise ValueError(f"{path}: transcript missing column {exc}") from exc
    for raw in reader:
        if not raw.get(start_col, "").strip():
            continue
        rows.append((float(raw[start_col]), float(raw[stop_col]), raw[speaker_col].strip()))
    return rows


def _mel_filterbank(n_mels: int, n_fft: int, sample_rate: float) -> np.ndarray:
    def hz_to_mel(f):
        return 2595.0 * np.log10(1.0 + np.asarray(f) / 700.0)

    def mel_to_hz(m):
        return 700.0 * (10.0 ** (np.asarray(m) / 2595.0) - 1.0)

    n_bins = n_fft // 2 + 1
    fft_freqs = np.linspace(0.0, sample_rate / 2.0, n_bins)
    mel_points = mel_to_hz(np.linspace(hz_to_mel(0.0), hz_to_mel(sample_rate / 2.0), n_mels + 2))
    fb = np.zeros((n_mels, n_bins))
    for m in range(n_mels):
        lo, center, hi = mel_points[m], mel_points[m + 1], mel_points[m + 2]
        up = (fft_freqs - lo) / max(center - lo, 1e-12)
        down = (hi - fft_freqs) / max(hi - center, 1e-12)
        fb[m] = np.maximum(0.0, np.minimum(up, down))
    return fb


def mel_spectrogram(
    audio: np.ndarray,
    n_mels: int = MEL_N_MELS,
    win_seconds: float = MEL_WIN_SECONDS,
    hop_seconds: float = MEL_HOP_SECONDS,
    sample_rate: float = MEL_SAMPLE_RATE,
    log_floor: float = 1e-10,
) -> Spectrogram:
    """Centered log-Mel magnitude spectrogram (n_mels x T); silence maps to log(log_floor)."""
    audio = np.asarray(audio, dtype=np.float64)
    if audio.ndim != 1 or audio.size == 0:
        raise ValueError("audio must be a non-empty 1-d sample vector")
    win = int(round(win_seconds * sample_rate))
    hop = int(round(hop_seconds * sample_rate))
    n_fft = 1 << (win - 1).bit_length()  # next power of two >= window
    n_frames = _frame_offsets(audio.size, hop)
    padded = np.pad(audio, win // 2)
    window = np.hanning(win)
    frames = np.stack([padded[t * hop: t * hop + win] for t in range(n_frames)])
    mag = np.abs(np.fft.rfft(frames * window, n=n_fft, axis=1)).T
    fb = _mel_filterbank(n_mels, n_fft, sample_rate)
    mel = np.log(fb @ mag + log_floor)
    return Spectrogram(data=mel, sample_rate=sample_rate, hop=hop)


def read_wav(path: str | Path) -> tuple[np.ndarray, float]:
    """Load a mono waveform as float64 in [-1, 1]."""
    import scipy.io.wavfile

    rate, data = scipy.io.wavfile.read(Path(path))
    data = np.asarray(data)
    if data.ndim == 2:
        data = data.mean(axis=1)
    if np.issubdtype(data.dtype, np.integer):
        data = data.astype(np.float64) / float(np.iinfo(data.dtype).max)
    return data.astype(np.float64), float(rate)


def sta_session_spectrogram(audio: np.ndarray, rate: float) -> Spectrogram:
    """Resample to 8 kHz and compute the 129-bin magnitude STFT."""
    resampled = resample(audio, rate, STA_SAMPLE_RATE)
    return stft_spectrogram(resampled)


def netvlad_session_mels(
    audio: np.ndarray,
    rate: float,
    transcript: list[tuple[float, float, str]],
) -> list[Spectrogram]:
    """Per participant turn: resample to 16 kHz and compute a log-Mel spectrogram."""
    clips = segment_by_transcript(audio, transcript, rate)
    mels = []
    for clip in clips:
        if clip.size == 0:
            continue
        resampled = resample(clip, rate, MEL_SAMPLE_RATE)
        mels.append(mel_spectrogram(resampled))
    return mels
