"""RIFF/WAVE reading and writing (PCM16 or IEEE float32, mono or stereo)."""
from __future__ import annotations

from pathlib import Path

import numpy as np
from scipy.io import wavfile

from .dsp import SAMPLE_RATE, AudioClip


class WavFormatError(ValueError):
    pass


def read_wav(path: str | Path, sample_rate: int = SAMPLE_RATE) -> AudioClip:
    """Load a WAV file as float32 ``[channels, n]``, hard-clipped to [-1, 1]."""
    try:
        sr, data = wavfile.read(str(path))
    except FileNotFoundError:
        raise
    except Exception as exc:  # scipy raises bare ValueError for most malformed headers
        raise WavFormatError(f"{path}: {exc}") from exc
    if sr != sample_rate:
        raise WavFormatError(f"{path}: sample rate {sr} Hz, expected {sample_rate} Hz")
    if data.dtype == np.int16:
        samples = data.astype(np.float32) / 32768.0
    elif data.dtype == np.float32:
        samples = data
    else:
        raise WavFormatError(f"{path}: unsupported sample format {data.dtype}")
    samples = samples.T if samples.ndim == 2 else samples[None]
    if samples.shape[0] not in (1, 2):
        raise WavFormatError(f"{path}: {samples.shape[0]} channels, expected 1 or 2")
    return AudioClip(samples, sr).clipped()


def write_wav(path: str | Path, clip: AudioClip | np.ndarray, sample_rate: int = SAMPLE_RATE,
              fmt: str = "float32") -> None:
    """Write ``[channels, n]`` (or 1-D) audio as PCM16 or float32."""
    if isinstance(clip, AudioClip):
        samples, sample_rate = clip.samples, clip.sample_rate
    else:
        samples = AudioClip(clip).samples
    samples = np.clip(samples, -1.0, 1.0)
    if fmt == "float32":
        data = samples.astype("<f4")
    elif fmt == "pcm16":
        data = np.round(samples * 32767.0).astype("<i2")
    else:
        raise ValueError(f"unknown wav format {fmt!r}")
    data = data[0] if data.shape[0] == 1 else data.T
    wavfile.write(str(path), sample_rate, np.ascontiguousarray(data))
