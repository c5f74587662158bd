"""Audio front end: PCM16 WAV decoding, log-Mel filterbanks and frame stacking.

Pipeline: periodic Hann window of 400 samples, hop 160, zero-padded 512-point
DFT, one-sided power spectrum (257 bins), 80 triangular filters on the HTK Mel
scale m = 2595·log10(1 + f/700) spanning 0–8000 Hz, natural log with a 1e-10
energy floor.
"""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Tuple

import numpy as np
import soundfile as sf

from rpq_lab.config import (
    HOP_LENGTH,
    LOG_FLOOR,
    MEL_DUMP_MAGIC,
    MEL_FMAX,
    N_FFT,
    N_MELS,
    SAMPLE_RATE,
    WIN_LENGTH,
)
from rpq_lab.errors import CorruptFile, EmptyInput, InvalidConfig, TooShort, UnsupportedFormat
from rpq_lab.utils import atomic_write_bytes

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class AudioBuffer:
    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    @property
    def duration_s(self) -> float:
        return len(self.samples) / self.sample_rate


@dataclass(frozen=True)
class MelSpectrogram:
    frames: np.ndarray  # (T, 80), natural-log Mel energies
    hop_ms: int = 10
    win_ms: int = 25

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]


@dataclass(frozen=True)
class StackedFeatures:
    frames: np.ndarray  # (T', 80·stack)
    stack: int = 4

    @property
    def stride(self) -> int:
        return self.stack

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def dim(self) -> int:
        return self.frames.shape[1]


# ---------------------------------------------------------------------------
# WAV I/O
# ---------------------------------------------------------------------------

def _check_riff_sizes(path: Path) -> None:
    """Reject files whose RIFF or data chunk claims more bytes than exist."""
    size = path.stat().st_size
    with open(path, "rb") as handle:
        header = handle.read(12)
        if len(header) < 12 or header[:4] != b"RIFF" or header[8:12] != b"WAVE":
            raise UnsupportedFormat(f"Not a RIFF/WAVE file: {path}")
        riff_size = struct.unpack("<I", header[4:8])[0]
        if riff_size + 8 > size:
            raise CorruptFile(
                f"Truncated file {path}: RIFF declares {riff_size + 8} bytes, found {size}"
            )
        offset = 12
        while offset + 8 <= size:
            handle.seek(offset)
            chunk_id, chunk_size = struct.unpack("<4sI", handle.read(8))
            if offset + 8 + chunk_size > size:
                raise CorruptFile(f"Truncated '{chunk_id.decode('latin-1')}' chunk in {path}")
            if chunk_id == b"data":
                return
            offset += 8 + chunk_size + (chunk_size & 1)
    raise CorruptFile(f"No data chunk in {path}")


def load_wav(path) -> AudioBuffer:
    """Decode a PCM16 mono 16 kHz WAV file into samples in [-1, 1).

    Raises:
        UnsupportedFormat: wrong container, encoding, channel count or rate
        CorruptFile: truncated chunks or an unreadable file
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Audio file not found: {path}")

    _check_riff_sizes(path)

    try:
        info = sf.info(str(path))
    except (RuntimeError, sf.SoundFileError) as e:
        raise CorruptFile(f"Could not read {path}: {e}")

    # WAVE_FORMAT_EXTENSIBLE headers carry the same PCM16 payload
    if info.format not in ("WAV", "WAVEX") or info.subtype != "PCM_16":
        raise UnsupportedFormat(f"{path}: expected WAV PCM_16, got {info.format} {info.subtype}")
    if info.channels != 1:
        raise UnsupportedFormat(f"{path}: expected mono, got {info.channels} channels")
    if info.samplerate != SAMPLE_RATE:
        raise UnsupportedFormat(f"{path}: expected {SAMPLE_RATE} Hz, got {info.samplerate} Hz")

    try:
        raw, _ = sf.read(str(path), dtype="int16", always_2d=False)
    except (RuntimeError, sf.SoundFileError) as e:
        raise CorruptFile(f"Could not decode {path}: {e}")
    if len(raw) != info.frames:
        raise CorruptFile(f"{path}: header declares {info.frames} frames, decoded {len(raw)}")

    return AudioBuffer(samples=raw.astype(np.float64) / 32768.0)


def pcm16_from_float(samples: np.ndarray) -> np.ndarray:
    """Quantize [-1, 1] floats to int16 (round half away, clipped)."""
    scaled = np.clip(np.asarray(samples, dtype=np.float64), -1.0, 1.0) * 32768.0
    return np.clip(np.round(scaled), -32768, 32767).astype(np.int16)


def write_wav(path, samples: np.ndarray, sample_rate: int = SAMPLE_RATE) -> Path:
    """Write PCM16 mono; float input is quantized, int16 written as-is."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    data = samples if samples.dtype == np.int16 else pcm16_from_float(samples)
    sf.write(str(path), data, sample_rate, subtype="PCM_16", format="WAV")
    return path


# ---------------------------------------------------------------------------
# Mel filterbank
# ---------------------------------------------------------------------------

def hz_to_mel(freq):
    return 2595.0 * np.log10(1.0 + np.asarray(freq, dtype=np.float64) / 700.0)


def mel_to_hz(mel):
    return 700.0 * (10.0 ** (np.asarray(mel, dtype=np.float64) / 2595.0) - 1.0)


@lru_cache(maxsize=1)
def _filterbank_and_centers() -> Tuple[np.ndarray, np.ndarray]:
    edges = mel_to_hz(np.linspace(hz_to_mel(0.0), hz_to_mel(MEL_FMAX), N_MELS + 2))
    bin_freqs = np.arange(N_FFT // 2 + 1) * (SAMPLE_RATE / N_FFT)
    bank = np.zeros((N_FFT // 2 + 1, N_MELS))
    for m in range(N_MELS):
        left, center, right = edges[m], edges[m + 1], edges[m + 2]
        rising = (bin_freqs - left) / (center - left)
        falling = (right - bin_freqs) / (right - center)
        bank[:, m] = np.maximum(0.0, np.minimum(rising, falling))
    bank.setflags(write=False)
    centers = edges[1:-1].copy()
    centers.setflags(write=False)
    return bank, centers


def mel_filterbank() -> np.ndarray:
    """(257, 80) triangular filter weights, peak 1 at each center."""
    return _filterbank_and_centers()[0]


def mel_center_frequencies() -> np.ndarray:
    """Center frequency in Hz of each of the 80 filters."""
    return _filterbank_and_centers()[1]


@lru_cache(maxsize=1)
def hann_window() -> np.ndarray:
    n = np.arange(WIN_LENGTH)
    window = 0.5 - 0.5 * np.cos(2.0 * np.pi * n / WIN_LENGTH)
    window.setflags(write=False)
    return window


# ---------------------------------------------------------------------------
# Features
# ---------------------------------------------------------------------------

def frame_count(n_samples: int) -> int:
    if n_samples < WIN_LENGTH:
        return 0
    return 1 + (n_samples - WIN_LENGTH) // HOP_LENGTH


def power_spectrum(samples: np.ndarray) -> np.ndarray:
    """(T, 257) one-sided power spectrum of Hann-windowed frames."""
    samples = np.asarray(samples, dtype=np.float64)
    n_frames = frame_count(len(samples))
    if n_frames == 0:
        raise TooShort(f"Need at least {WIN_LENGTH} samples, got {len(samples)}")
    starts = np.arange(n_frames)[:, None] * HOP_LENGTH
    frames = samples[starts + np.arange(WIN_LENGTH)[None, :]] * hann_window()
    spectrum = np.fft.rfft(frames, n=N_FFT, axis=1)
    return spectrum.real ** 2 + spectrum.imag ** 2


def log_mel_spectrogram(audio: AudioBuffer) -> MelSpectrogram:
    """80-dim natural-log Mel energies at a 10 ms hop."""
    if len(audio.samples) < WIN_LENGTH:
        raise TooShort(f"Need at least {WIN_LENGTH} samples, got {len(audio.samples)}")
    energies = power_spectrum(audio.samples) @ mel_filterbank()
    return MelSpectrogram(frames=np.log(np.maximum(energies, LOG_FLOOR)))


def stack_frames(mel: MelSpectrogram, stack: int = 4) -> StackedFeatures:
    """Concatenate groups of *stack* Mel rows; trailing T mod stack rows are dropped."""
    if stack < 1:
        raise InvalidConfig(f"stack must be >= 1, got {stack}")
    frames = np.asarray(mel.frames)
    n_groups = frames.shape[0] // stack
    if n_groups == 0:
        raise EmptyInput(f"{frames.shape[0]} Mel frames cannot fill one group of {stack}")
    stacked = frames[: n_groups * stack].reshape(n_groups, stack * frames.shape[1])
    return StackedFeatures(frames=stacked, stack=stack)


# ---------------------------------------------------------------------------
# Corpus-level input normalization
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FeatureNormalizer:
    """Frozen per-Mel-bin mean/std applied before masking and quantization."""

    mean: np.ndarray
    std: np.ndarray

    def apply(self, mel: MelSpectrogram) -> MelSpectrogram:
        return MelSpectrogram(frames=(mel.frames - self.mean) / self.std)

    @classmethod
    def identity(cls) -> "FeatureNormalizer":
        return cls(mean=np.zeros(N_MELS), std=np.ones(N_MELS))


def fit_normalizer(mels, min_std: float = 1e-3) -> FeatureNormalizer:
    """Per-bin mean/std over all frames of *mels*; std floored at *min_std*."""
    total = np.zeros(N_MELS)
    total_sq = np.zeros(N_MELS)
    count = 0
    for mel in mels:
        total += mel.frames.sum(axis=0)
        total_sq += (mel.frames ** 2).sum(axis=0)
        count += mel.n_frames
    if count == 0:
        raise EmptyInput("Cannot fit a normalizer on zero frames")
    mean = total / count
    var = np.maximum(total_sq / count - mean ** 2, 0.0)
    return FeatureNormalizer(mean=mean, std=np.maximum(np.sqrt(var), min_std))


# ---------------------------------------------------------------------------
# MEL80 binary dump
# ---------------------------------------------------------------------------

def write_mel_dump(path, mel: MelSpectrogram) -> Path:
    """Magic ``MEL80\\0\\0\\0``, uint32 LE (T, 80), then float32 LE row-major."""
    frames = np.ascontiguousarray(mel.frames, dtype="<f4")
    header = MEL_DUMP_MAGIC + struct.pack("<II", frames.shape[0], frames.shape[1])
    return atomic_write_bytes(Path(path), header + frames.tobytes())


def read_mel_dump(path) -> MelSpectrogram:
    data = Path(path).read_bytes()
    if len(data) < 16 or data[:8] != MEL_DUMP_MAGIC:
        raise CorruptFile(f"{path}: missing MEL80 magic")
    n_frames, n_mels = struct.unpack("<II", data[8:16])
    expected = 16 + 4 * n_frames * n_mels
    if len(data) != expected:
        raise CorruptFile(f"{path}: expected {expected} bytes, found {len(data)}")
    frames = np.frombuffer(data, dtype="<f4", offset=16).reshape(n_frames, n_mels)
    return MelSpectrogram(frames=frames.astype(np.float64))
