"""Complex masks and the mono / difference-spectrum algebra.

Channel convention: with ``S_D = (S_l - S_r) / 2`` and ``S_mono = (S_l + S_r) / 2``
the left channel is ``S_mono + S_D`` and the right channel ``S_mono - S_D``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ops
from .dsp import Spectrogram
from .tensor import Tensor


@dataclass
class ComplexMask:
    """``M = M_R + j M_I``; values are unbounded linear outputs."""

    real: Tensor
    imag: Tensor

    def __post_init__(self):
        if self.real.shape != self.imag.shape:
            raise ValueError(f"mask real/imag shape mismatch {self.real.shape} vs {self.imag.shape}")

    @property
    def shape(self) -> tuple[int, ...]:
        return self.real.shape

    @classmethod
    def from_stacked(cls, x: Tensor) -> "ComplexMask":
        return cls(ops.take(x, 0), ops.take(x, 1))

    @classmethod
    def constant(cls, shape: tuple[int, int], value: complex) -> "ComplexMask":
        return cls(Tensor(np.full(shape, value.real)), Tensor(np.full(shape, value.imag)))

    def __add__(self, other: "ComplexMask") -> "ComplexMask":
        return ComplexMask(ops.add(self.real, other.real), ops.add(self.imag, other.imag))

    def to_complex(self) -> np.ndarray:
        return self.real.data.astype(np.float64) + 1j * self.imag.data.astype(np.float64)


def _check(a, b, what: str) -> None:
    if a.shape != b.shape:
        raise ValueError(f"{what}: shape mismatch {a.shape} vs {b.shape}")


def apply_mask(s: Spectrogram, m: ComplexMask) -> Spectrogram:
    """Per-bin complex product ``s * m``; differentiable in both arguments."""
    _check(s, m, "apply_mask")
    real = ops.sub(ops.mul(s.real, m.real), ops.mul(s.imag, m.imag))
    imag = ops.add(ops.mul(s.real, m.imag), ops.mul(s.imag, m.real))
    return Spectrogram(real, imag)


def difference_spectrum(s_left: Spectrogram, s_right: Spectrogram) -> Spectrogram:
    """``(S_l - S_r) / 2``."""
    _check(s_left, s_right, "difference_spectrum")
    return (s_left - s_right).scaled(0.5)


def reconstruct_lr(s_mono: Spectrogram, s_diff: Spectrogram) -> tuple[Spectrogram, Spectrogram]:
    """Recover ``(left, right) = (S_mono + S_D, S_mono - S_D)``."""
    _check(s_mono, s_diff, "reconstruct_lr")
    return s_mono + s_diff, s_mono - s_diff
