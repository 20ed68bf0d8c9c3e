"""The full network: visual encoder, shared U-Net, and one APNet per task."""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .apnet import ApnetConfig, apnet_forward, init_apnet
from .backbone import BackboneConfig, Params, init_unet, init_visual, unet_forward, visual_encode
from .dsp import Spectrogram
from .masking import ComplexMask, apply_mask, reconstruct_lr
from .rng import SplitMix64
from .tensor import Tensor

STEREO_APNET = "apnet_stereo"
SEP_APNET = "apnet_sep"


@dataclass(frozen=True)
class ModelConfig:
    backbone: BackboneConfig = BackboneConfig()
    apnet: ApnetConfig = ApnetConfig()
    frame_height: int = 32
    frame_width: int = 64

    @property
    def visual_grid(self) -> tuple[int, int]:
        """``(h_v, w_v)`` of the visual feature map."""
        f = 8 * self.backbone.visual_pool
        return self.frame_height // f, self.frame_width // f

    @property
    def n_cells(self) -> int:
        h, w = self.visual_grid
        return h * w


@dataclass
class StereoOutput:
    mask_diff: ComplexMask
    mask_left: ComplexMask
    mask_right: ComplexMask
    s_diff: Spectrogram
    s_left: Spectrogram
    s_right: Spectrogram

    def unet_out(self, s_mono: Spectrogram) -> tuple[Spectrogram, Spectrogram]:
        """Left/right read from the difference branch instead of the APNet heads."""
        return reconstruct_lr(s_mono, self.s_diff)


@dataclass
class SeparationOutput:
    mask_a: ComplexMask
    mask_b: ComplexMask
    s_a: Spectrogram
    s_b: Spectrogram


def crop_nyquist(s: Spectrogram) -> Spectrogram:
    """Drop the top (Nyquist) bin so the bin count is a power of two."""
    return Spectrogram(Tensor(s.real.data[:-1]), Tensor(s.imag.data[:-1]))


def restore_nyquist(pred: np.ndarray, reference: np.ndarray, keep: bool = True) -> np.ndarray:
    """Append the reference's Nyquist row to a cropped complex prediction.

    ``keep=False`` appends zeros instead (used for the difference spectrum,
    which makes the Nyquist bin pass through as mono).
    """
    top = reference[-1:] if keep else np.zeros_like(reference[-1:])
    return np.concatenate([pred, top], axis=0)


class SepStereoModel:
    """Parameter store plus the forward passes for both learning modes."""

    def __init__(self, config: ModelConfig = ModelConfig(), seed: int = 0, dtype=np.float32,
                 params: Params | None = None):
        self.config = config
        if params is None:
            rng = SplitMix64(seed)
            params = {}
            params.update(init_visual(config.backbone, rng, dtype))
            params.update(init_unet(config.backbone, rng, dtype))
            for prefix in (STEREO_APNET, SEP_APNET):
                params.update(init_apnet(prefix, config.backbone, config.apnet, config.n_cells, rng, dtype))
        self.params: Params = params

    def with_params(self, params: Params) -> "SepStereoModel":
        return SepStereoModel(self.config, params=params)

    def cast(self, dtype) -> "SepStereoModel":
        return self.with_params({k: v.astype(dtype) for k, v in self.params.items()})

    def copy(self) -> "SepStereoModel":
        return self.with_params({k: Tensor(v.data, requires_grad=v.requires_grad, dtype=v.dtype)
                                 for k, v in self.params.items()})

    def num_parameters(self) -> int:
        return int(sum(v.data.size for v in self.params.values()))

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    # -------------------------------------------------------------- forwards

    def encode_visual(self, frames) -> Tensor:
        return visual_encode(self.params, frames, self.config.backbone)

    def stereo_forward(self, s_mono: Spectrogram, f_v: Tensor) -> StereoOutput:
        """Masks and predicted spectrograms for a cropped ``[F-1, T]`` mono input."""
        bcfg = self.config.backbone
        m_d, maps = unet_forward(self.params, s_mono.stacked(), f_v, bcfg)
        m_l, m_r = apnet_forward(self.params, STEREO_APNET, maps, f_v, bcfg, self.config.apnet)
        m_d, m_l, m_r = (ComplexMask.from_stacked(m) for m in (m_d, m_l, m_r))
        return StereoOutput(
            m_d, m_l, m_r, apply_mask(s_mono, m_d), apply_mask(s_mono, m_l), apply_mask(s_mono, m_r)
        )

    def separation_forward(self, s_mix: Spectrogram, f_v0: Tensor) -> SeparationOutput:
        """Masks for sources A and B given a rearranged visual map ``F_v^0``.

        Only the separation APNet produces outputs here; the difference mask
        of the U-Net is computed but unused.
        """
        bcfg = self.config.backbone
        _, maps = unet_forward(self.params, s_mix.stacked(), f_v0, bcfg)
        m_a, m_b = apnet_forward(self.params, SEP_APNET, maps, f_v0, bcfg, self.config.apnet)
        m_a, m_b = ComplexMask.from_stacked(m_a), ComplexMask.from_stacked(m_b)
        return SeparationOutput(m_a, m_b, apply_mask(s_mix, m_a), apply_mask(s_mix, m_b))


def identity_rig(model: SepStereoModel) -> SepStereoModel:
    """Copy of ``model`` whose heads all emit ``1 + 0j`` and whose difference mask is 0.

    Every prediction then reproduces its input spectrogram; used to check the
    inference plumbing end to end.
    """
    params = {k: Tensor(v.data, requires_grad=v.requires_grad, dtype=v.dtype) for k, v in model.params.items()}
    for prefix in (STEREO_APNET, SEP_APNET):
        for h in (1, 2):
            params[f"{prefix}.head{h}.weight"].data[...] = 0
            params[f"{prefix}.head{h}.bias"].data[...] = (1, 0)
    params["unet.mask.weight"].data[...] = 0
    params["unet.mask.bias"].data[...] = 0
    return model.with_params(params)


def with_backbone(config: ModelConfig, **changes) -> ModelConfig:
    return replace(config, backbone=replace(config.backbone, **changes))
