"""WAV I/O, speed perturbation, chunking, log-mel features and SpecAugment.

Framing policy: frame ``t`` covers samples ``[t*shift, t*shift + frame_len)``
and is zero-padded past the end of the signal, so a signal of ``N`` samples
yields ``N // shift`` raw frames (exactly 1000 for 10 s at a 10 ms shift).
Signals shorter than one frame are rejected.
"""
from __future__ import annotations

import math
import wave
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from amtl.autograd.checkpoint import write_tensors
from amtl.errors import AudioError, ConfigError

LOG_FLOOR = 1e-10


@dataclass
class Waveform:
    samples: np.ndarray
    sample_rate: int = 16000

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.sample_rate <= 0:
            raise AudioError(f"sample_rate must be positive, got {self.sample_rate}")
        if not np.isfinite(self.samples).all():
            raise AudioError("waveform contains non-finite samples")

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate

    def __len__(self) -> int:
        return len(self.samples)


@dataclass
class FeatureMatrix:
    frames: np.ndarray  # (T, F)
    frame_shift: float = 0.010
    stride: int = 1

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def dim(self) -> int:
        return self.frames.shape[1]


@dataclass
class FrontendConfig:
    num_mels: int = 80
    frame_len: float = 0.025
    frame_shift: float = 0.010
    stride: int = 1

    def __post_init__(self):
        if self.num_mels < 1:
            raise ConfigError("num_mels must be >= 1")
        if not self.frame_len >= self.frame_shift > 0:
            raise ConfigError("need frame_len >= frame_shift > 0")
        if self.stride < 1:
            raise ConfigError("stride must be >= 1")

    @property
    def feature_dim(self) -> int:
        return self.num_mels * self.stride


@dataclass
class AugmentSpec:
    """Training-time augmentation.

    Speed perturbation draws one factor from ``speed_rates`` with
    ``speed_probs``; the default set {0.9, 1.0, 1.1} is the conventional one
    and any positive rates may be configured instead.
    """

    speed_rates: tuple[float, ...] = (0.9, 1.0, 1.1)
    speed_probs: tuple[float, ...] = (0.25, 0.5, 0.25)
    chunk_seconds: float = 10.0
    num_freq_masks: int = 2
    max_freq_width: int = 10
    num_time_masks: int = 2
    max_time_width_ratio: float = 0.05

    def __post_init__(self):
        self.speed_rates = tuple(float(r) for r in self.speed_rates)
        self.speed_probs = tuple(float(p) for p in self.speed_probs)
        if len(self.speed_rates) != len(self.speed_probs) or not self.speed_rates:
            raise ConfigError("speed_rates and speed_probs must be non-empty and equally long")
        if any(r <= 0 for r in self.speed_rates):
            raise ConfigError("speed rates must be positive")
        if any(p < 0 for p in self.speed_probs) or abs(sum(self.speed_probs) - 1.0) > 1e-9:
            raise ConfigError("speed_probs must be non-negative and sum to 1")
        if self.chunk_seconds <= 0:
            raise ConfigError("chunk_seconds must be positive")
        if min(self.num_freq_masks, self.max_freq_width, self.num_time_masks) < 0 or self.max_time_width_ratio < 0:
            raise ConfigError("mask counts and widths must be >= 0")

    @classmethod
    def identity(cls) -> "AugmentSpec":
        return cls(speed_rates=(1.0,), speed_probs=(1.0,), num_freq_masks=0, num_time_masks=0)


def utterance_rng(seed: int, utt_id: str, *salt: int) -> np.random.Generator:
    """Per-utterance stream so results do not depend on processing order."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), zlib.crc32(utt_id.encode("utf-8")), *salt]))


def load_wav(path) -> Waveform:
    try:
        with wave.open(str(path), "rb") as wf:
            channels = wf.getnchannels()
            width = wf.getsampwidth()
            comp = wf.getcomptype()
            rate = wf.getframerate()
            nframes = wf.getnframes()
            raw = wf.readframes(nframes)
    except wave.Error as exc:
        raise AudioError(f"{path}: not a PCM RIFF/WAVE file ({exc})") from None
    except EOFError:
        raise AudioError(f"{path}: truncated WAV header") from None
    if comp != "NONE":
        raise AudioError(f"{path}: unsupported compression {comp}")
    if channels != 1:
        raise AudioError(f"unsupported channel count {channels}")
    if width != 2:
        raise AudioError(f"unsupported sample width {8 * width} bits (need 16-bit PCM)")
    if len(raw) != 2 * nframes:
        raise AudioError(f"{path}: truncated WAV data ({len(raw) // 2} of {nframes} frames)")
    samples = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    return Waveform(samples, rate)


def write_wav(path, w: Waveform) -> None:
    pcm = np.clip(np.round(w.samples * 32768.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as wf:
        wf.setnchannels(1)
        wf.setsampwidth(2)
        wf.setframerate(w.sample_rate)
        wf.writeframes(pcm.tobytes())


def speed_perturb(w: Waveform, rate: float) -> Waveform:
    """Resample by linear interpolation at the same sample rate.

    The output has ``round(N / rate)`` samples, so duration scales by 1/rate.
    """
    if not rate > 0:
        raise AudioError(f"speed rate must be positive, got {rate}")
    if rate == 1.0:
        return Waveform(w.samples.copy(), w.sample_rate)
    n = len(w.samples)
    n_out = int(math.floor(n / rate + 0.5))
    if n == 0 or n_out == 0:
        return Waveform(np.zeros(0), w.sample_rate)
    positions = np.arange(n_out) * rate
    return Waveform(np.interp(positions, np.arange(n), w.samples), w.sample_rate)


def chunk_utterance(w: Waveform, chunk_seconds: float = 10.0) -> list[Waveform]:
    if not chunk_seconds > 0:
        raise AudioError("chunk_seconds must be positive")
    size = int(round(chunk_seconds * w.sample_rate))
    return [Waveform(w.samples[i : i + size].copy(), w.sample_rate) for i in range(0, len(w.samples), size)]


def _hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f) / 700.0)


def _mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m) / 2595.0) - 1.0)


def mel_filterbank(num_mels: int, n_fft: int, sample_rate: int) -> tuple[np.ndarray, np.ndarray]:
    """Peak-normalized triangular filters from 0 Hz to Nyquist.

    Returns ``(weights, centers_hz)`` with weights of shape (num_mels, n_fft//2 + 1).
    """
    edges = _mel_to_hz(np.linspace(0.0, _hz_to_mel(sample_rate / 2.0), num_mels + 2))
    freqs = np.arange(n_fft // 2 + 1) * sample_rate / n_fft
    lo, center, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (freqs - lo) / (center - lo)
    falling = (hi - freqs) / (hi - center)
    weights = np.maximum(0.0, np.minimum(rising, falling))
    return weights, edges[1:-1]


def log_mel_spectrogram(
    w: Waveform,
    num_mels: int = 80,
    frame_len: float = 0.025,
    frame_shift: float = 0.010,
    stride: int = 1,
) -> FeatureMatrix:
    FrontendConfig(num_mels, frame_len, frame_shift, stride)
    sr = w.sample_rate
    win = int(round(frame_len * sr))
    hop = int(round(frame_shift * sr))
    n = len(w.samples)
    if n < win:
        raise AudioError(f"utterance too short: {n} samples < one frame of {win}")
    n_fft = 1 << (win - 1).bit_length()
    raw_frames = n // hop
    if raw_frames < stride:
        raise AudioError(f"utterance too short: {raw_frames} frames < stride {stride}")
    padded = np.zeros((raw_frames - 1) * hop + win)
    padded[:n] = w.samples
    frames = np.lib.stride_tricks.sliding_window_view(padded, win)[::hop][:raw_frames]
    window = 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(win) / win)
    power = np.abs(np.fft.rfft(frames * window, n=n_fft, axis=1)) ** 2
    weights, _ = mel_filterbank(num_mels, n_fft, sr)
    logmel = np.log(np.maximum(power @ weights.T, LOG_FLOOR))
    usable = (raw_frames // stride) * stride
    stacked = logmel[:usable].reshape(raw_frames // stride, stride * num_mels)
    return FeatureMatrix(stacked, frame_shift, stride)


def features(w: Waveform, cfg: FrontendConfig) -> FeatureMatrix:
    return log_mel_spectrogram(w, cfg.num_mels, cfg.frame_len, cfg.frame_shift, cfg.stride)


def spec_augment(feat: FeatureMatrix, spec: AugmentSpec, rng: np.random.Generator) -> FeatureMatrix:
    """Replace random full-height time bands and full-width frequency bands
    with the matrix mean."""
    x = feat.frames.copy()
    T, F = x.shape
    fill = feat.frames.mean()
    max_t = int(math.floor(spec.max_time_width_ratio * T))
    for _ in range(spec.num_time_masks):
        width = int(rng.integers(0, max_t + 1))
        start = int(rng.integers(0, T - width + 1))
        x[start : start + width, :] = fill
    max_f = min(spec.max_freq_width, F)
    for _ in range(spec.num_freq_masks):
        width = int(rng.integers(0, max_f + 1))
        start = int(rng.integers(0, F - width + 1))
        x[:, start : start + width] = fill
    return FeatureMatrix(x, feat.frame_shift, feat.stride)


def choose_speed(spec: AugmentSpec, rng: np.random.Generator) -> float:
    return float(spec.speed_rates[int(rng.choice(len(spec.speed_rates), p=spec.speed_probs))])


def dump_features(feats: Mapping[str, FeatureMatrix], path) -> None:
    write_tensors(path, {f"feat/{k}": v.frames for k, v in feats.items()})
