"""Visually guided mono-to-binaural generation and source separation on a numpy autodiff core."""
from .config import ConfigError, RunConfig
from .dsp import AudioClip, Spectrogram, StftConfig, istft, stft
from .masking import ComplexMask, apply_mask, difference_spectrum, reconstruct_lr
from .model import ModelConfig, SepStereoModel
from .rng import SplitMix64
from .tensor import Tensor

__version__ = "0.1.0"

__all__ = [
    "AudioClip", "ComplexMask", "ConfigError", "ModelConfig", "RunConfig", "SepStereoModel", "Spectrogram",
    "SplitMix64", "StftConfig", "Tensor", "apply_mask", "difference_spectrum", "istft", "reconstruct_lr", "stft",
]
