"""Waveform <-> spectrogram conversion, mono averaging and mixing."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import ops
from .tensor import Tensor

SAMPLE_RATE = 16000
CLIP_SAMPLES = 10080  # 0.63 s at 16 kHz


@dataclass(frozen=True)
class StftConfig:
    window_len: int = 512
    hop: int = 160
    window: str = "hann"
    center_pad: bool = True

    def __post_init__(self):
        if self.hop > self.window_len:
            raise ValueError(f"hop {self.hop} exceeds window length {self.window_len}")
        if self.window != "hann":
            raise ValueError(f"unsupported window {self.window!r}")

    @property
    def f_bins(self) -> int:
        return self.window_len // 2 + 1

    def n_frames(self, n_samples: int) -> int:
        if self.center_pad:
            return 1 + math.ceil(n_samples / self.hop)
        return 1 + max(0, math.ceil((n_samples - self.window_len) / self.hop))


def hann(n: int) -> np.ndarray:
    """Periodic Hann window."""
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


@dataclass
class AudioClip:
    """``samples`` is ``[channels, n]`` float32, channels 1 or 2."""

    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=np.float32)
        if s.ndim == 1:
            s = s[None]
        if s.ndim != 2 or s.shape[0] not in (1, 2):
            raise ValueError(f"audio must be [1|2, n], got {s.shape}")
        self.samples = s

    @property
    def channels(self) -> int:
        return self.samples.shape[0]

    def __len__(self) -> int:
        return self.samples.shape[1]

    def clipped(self) -> "AudioClip":
        return AudioClip(np.clip(self.samples, -1.0, 1.0), self.sample_rate)


@dataclass
class Spectrogram:
    """Complex ``[f_bins, t_frames]`` spectrogram as separate real/imag tensors."""

    real: Tensor
    imag: Tensor

    def __post_init__(self):
        if self.real.shape != self.imag.shape:
            raise ValueError(f"real/imag shape mismatch {self.real.shape} vs {self.imag.shape}")

    @property
    def shape(self) -> tuple[int, ...]:
        return self.real.shape

    @classmethod
    def from_complex(cls, z: np.ndarray, requires_grad: bool = False) -> "Spectrogram":
        return cls(Tensor(z.real, requires_grad=requires_grad), Tensor(z.imag, requires_grad=requires_grad))

    @classmethod
    def from_stacked(cls, x: Tensor) -> "Spectrogram":
        """Split a ``[2, F, T]`` tensor (real, imag) into a spectrogram."""
        return cls(ops.take(x, 0), ops.take(x, 1))

    def to_complex(self) -> np.ndarray:
        return self.real.data.astype(np.float64) + 1j * self.imag.data.astype(np.float64)

    def stacked(self) -> Tensor:
        return ops.concat([ops.reshape(self.real, (1, *self.shape)), ops.reshape(self.imag, (1, *self.shape))], 0)

    def energy(self) -> float:
        z = self.to_complex()
        return float(np.sum(z.real**2 + z.imag**2))

    def __add__(self, other: "Spectrogram") -> "Spectrogram":
        return Spectrogram(ops.add(self.real, other.real), ops.add(self.imag, other.imag))

    def __sub__(self, other: "Spectrogram") -> "Spectrogram":
        return Spectrogram(ops.sub(self.real, other.real), ops.sub(self.imag, other.imag))

    def scaled(self, c: float) -> "Spectrogram":
        return Spectrogram(ops.scale(self.real, c), ops.scale(self.imag, c))


def _frame_signal(x: np.ndarray, cfg: StftConfig) -> np.ndarray:
    n = len(x)
    half = cfg.window_len // 2
    if cfg.center_pad:
        mode = "reflect" if n > half else "constant"
        x = np.pad(x, half, mode=mode)
    t = cfg.n_frames(n)
    need = (t - 1) * cfg.hop + cfg.window_len
    if len(x) < need:
        x = np.pad(x, (0, need - len(x)))
    idx = np.arange(cfg.window_len)[None, :] + cfg.hop * np.arange(t)[:, None]
    return x[idx]


def stft_complex(x: np.ndarray, cfg: StftConfig = StftConfig()) -> np.ndarray:
    """Complex128 ``[f_bins, t_frames]`` STFT of a 1-D signal."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError("stft expects a single channel")
    if x.size == 0:
        raise ValueError("stft of an empty signal")
    frames = _frame_signal(x, cfg) * hann(cfg.window_len)
    return np.fft.rfft(frames, axis=1).T


def stft(x: np.ndarray, cfg: StftConfig = StftConfig()) -> Spectrogram:
    """Centered, Hann-windowed STFT; 10080 samples give a ``[257, 64]`` result."""
    return Spectrogram.from_complex(stft_complex(x, cfg))


def istft_complex(z: np.ndarray, cfg: StftConfig = StftConfig(), out_len: int | None = None) -> np.ndarray:
    """Weighted overlap-add inverse with squared-window normalization (float64)."""
    f, t = z.shape
    if f != cfg.f_bins:
        raise ValueError(f"spectrogram has {f} bins, config expects {cfg.f_bins}")
    win = hann(cfg.window_len)
    frames = np.fft.irfft(z.T, n=cfg.window_len, axis=1) * win
    total = (t - 1) * cfg.hop + cfg.window_len
    y = np.zeros(total)
    norm = np.zeros(total)
    for i in range(t):
        s = i * cfg.hop
        y[s : s + cfg.window_len] += frames[i]
        norm[s : s + cfg.window_len] += win * win
    start = cfg.window_len // 2 if cfg.center_pad else 0
    if out_len is None:
        out_len = (t - 1) * cfg.hop if cfg.center_pad else total
    stop = start + out_len
    if stop > total:
        raise ValueError(f"requested {out_len} samples, spectrogram covers {total - start}")
    norm = norm[start:stop]
    if np.min(norm) < 1e-8:
        raise ZeroDivisionError("window overlap sum vanishes; hop too large for window")
    return y[start:stop] / norm


def istft(s: Spectrogram, cfg: StftConfig = StftConfig(), out_len: int | None = None) -> np.ndarray:
    return istft_complex(s.to_complex(), cfg, out_len).astype(np.float32)


def _same_length(a: np.ndarray, b: np.ndarray) -> None:
    if np.shape(a) != np.shape(b):
        raise ValueError(f"length mismatch {np.shape(a)} vs {np.shape(b)}")


def mono_average(left: np.ndarray, right: np.ndarray) -> np.ndarray:
    """``(left + right) / 2``."""
    _same_length(left, right)
    return (np.asarray(left) + np.asarray(right)) / 2


def spec_average(s_left: Spectrogram, s_right: Spectrogram) -> Spectrogram:
    if s_left.shape != s_right.shape:
        raise ValueError(f"shape mismatch {s_left.shape} vs {s_right.shape}")
    return (s_left + s_right).scaled(0.5)


def mix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Mixture of two mono clips, ``(a + b) / 2``."""
    return mono_average(a, b)
