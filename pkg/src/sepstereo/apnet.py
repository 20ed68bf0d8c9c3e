"""Associative Pyramid Network.

A side network over the finest decoder stages of the U-Net. At every tap the
visual map is turned into 1x1 kernels (one per visual cell), applied to the
decoder feature map, and merged coarse-to-fine with the upsampled previous
tap. Two parallel convs emit the two complex masks.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ops
from .backbone import BackboneConfig, Params, conv_param
from .rng import SplitMix64, uniform_init
from .tensor import Tensor


@dataclass(frozen=True)
class ApnetConfig:
    n_taps: int = 4
    head_kernel: int = 3
    deconv_kernel: int = 4
    deconv_stride: int = 2
    deconv_pad: int = 1
    leaky_slope: float = 0.2

    def tap_indices(self, n_up: int) -> list[int]:
        """1-based decoder stages that feed Associative-Conv, coarse to fine."""
        if self.n_taps > n_up:
            raise ValueError(f"{self.n_taps} taps but only {n_up} decoder stages")
        return list(range(n_up - self.n_taps + 1, n_up + 1))


def init_apnet(prefix: str, bcfg: BackboneConfig, acfg: ApnetConfig, n_cells: int, rng: SplitMix64,
               dtype=np.float32) -> Params:
    p: Params = {}
    dec = bcfg.decoder_channels
    k = acfg.deconv_kernel
    for t, stage in enumerate(acfg.tap_indices(bcfg.n_up)):
        c_a = dec[stage - 1]
        p[f"{prefix}.transfer{t}"] = Tensor(
            uniform_init(rng, (bcfg.visual_channels, c_a), bcfg.visual_channels, dtype), requires_grad=True, dtype=dtype
        )
        if t > 0:
            cin = n_cells if t == 1 else 2 * n_cells
            conv_param(p, rng, f"{prefix}.up{t}", (cin, n_cells, k, k), n_cells, n_cells * k * k, dtype)
    hk = acfg.head_kernel
    width = n_cells if acfg.n_taps == 1 else 2 * n_cells
    for h in (1, 2):
        conv_param(p, rng, f"{prefix}.head{h}", (2, width, hk, hk), 2, width * hk * hk, dtype)
    return p


def kernel_transfer(f_v: Tensor, weight: Tensor) -> Tensor:
    """``[c_v, h_v, w_v]`` visual map times ``[c_v, C_a]`` weight -> ``[h_v * w_v, C_a]`` kernels.

    Row ``n = y * w_v + x`` belongs to visual cell (y, x).
    """
    c_v, h_v, w_v = f_v.shape
    if weight.shape[0] != c_v:
        raise ValueError(f"transfer weight expects {weight.shape[0]} visual channels, map has {c_v}")
    cells = ops.transpose(ops.reshape(f_v, (c_v, h_v * w_v)))
    return ops.matmul(cells, weight)


def associative_conv(f_a: Tensor, kernels: Tensor) -> Tensor:
    """Output channel ``n`` is the audio response tied to visual cell ``n``."""
    return ops.conv1x1_dynamic(f_a, kernels)


def pyramid_step(prev: Tensor | None, cur: Tensor, up_w: Tensor | None = None, up_b: Tensor | None = None,
                 acfg: ApnetConfig = ApnetConfig()) -> Tensor:
    """First tap passes ``cur`` through; later taps concat ``DeConv(prev)`` with ``cur``."""
    if prev is None:
        return cur
    up = ops.deconv2d(prev, up_w, up_b, acfg.deconv_stride, acfg.deconv_pad)
    up = ops.leaky_relu(up, acfg.leaky_slope)
    if up.shape[1:] != cur.shape[1:]:
        raise ValueError(f"pyramid: upsampled {up.shape[1:]} does not match tap {cur.shape[1:]}")
    return ops.concat([up, cur], axis=0)


def apnet_heads(params: Params, prefix: str, f_ap: Tensor, acfg: ApnetConfig = ApnetConfig()) -> tuple[Tensor, Tensor]:
    """Two independent convs, each emitting a ``[2, F, T]`` (real, imag) mask."""
    pad = acfg.head_kernel // 2
    return tuple(
        ops.conv2d(f_ap, params[f"{prefix}.head{h}.weight"], params[f"{prefix}.head{h}.bias"], 1, pad) for h in (1, 2)
    )


def apnet_forward(params: Params, prefix: str, decoder_maps: list[Tensor], f_v: Tensor, bcfg: BackboneConfig,
                  acfg: ApnetConfig = ApnetConfig(), return_taps: bool = False):
    """Masks ``(mask1, mask2)`` from the decoder maps and a visual map.

    With ``return_taps`` the per-tap Associative-Conv outputs are returned too.
    """
    f_ap = None
    taps = []
    for t, stage in enumerate(acfg.tap_indices(bcfg.n_up)):
        kernels = kernel_transfer(f_v, params[f"{prefix}.transfer{t}"])
        assoc = associative_conv(decoder_maps[stage - 1], kernels)
        taps.append(assoc)
        if t == 0:
            f_ap = pyramid_step(None, assoc)
        else:
            f_ap = pyramid_step(f_ap, assoc, params[f"{prefix}.up{t}.weight"], params[f"{prefix}.up{t}.bias"], acfg)
    masks = apnet_heads(params, prefix, f_ap, acfg)
    if return_taps:
        return masks, taps
    return masks
