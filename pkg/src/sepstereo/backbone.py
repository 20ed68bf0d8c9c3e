"""Conditional U-Net audio backbone and the visual encoder.

Parameters live in flat ``dict[str, Tensor]`` stores so that the same
functions run training, inference and finite-difference checks.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ops
from .rng import SplitMix64, uniform_init
from .tensor import Tensor

Params = dict[str, Tensor]


@dataclass(frozen=True)
class BackboneConfig:
    base_channels: int = 8
    n_down: int = 5
    n_up: int = 5
    n_skips: int = 4
    kernel: int = 4
    stride: int = 2
    pad: int = 1
    leaky_slope: float = 0.2
    visual_channels: int = 8
    visual_hidden: int = 8
    visual_pool: int = 2
    cond_channels: int = 8

    def __post_init__(self):
        if self.n_down != self.n_up:
            raise ValueError("n_down must equal n_up")
        if self.n_skips != self.n_down - 1:
            raise ValueError("n_skips must equal n_down - 1")

    @property
    def encoder_channels(self) -> list[int]:
        return [self.base_channels * 2 ** min(i, 3) for i in range(self.n_down)]

    @property
    def decoder_channels(self) -> list[int]:
        """Output channels of each deconv stage, coarse to fine."""
        enc = self.encoder_channels
        return [enc[self.n_down - 2 - i] for i in range(self.n_up - 1)] + [self.base_channels]

    def decoder_inputs(self) -> list[int]:
        enc, dec = self.encoder_channels, self.decoder_channels
        ins = [enc[-1] + self.cond_channels]
        for i in range(1, self.n_up):
            ins.append(dec[i - 1] + enc[self.n_down - 1 - i])
        return ins


def conv_param(params: Params, rng: SplitMix64, name: str, shape: tuple[int, ...], out_ch: int, fan_in: int,
               dtype=np.float32) -> None:
    params[f"{name}.weight"] = Tensor(uniform_init(rng, shape, fan_in, dtype), requires_grad=True, dtype=dtype)
    params[f"{name}.bias"] = Tensor(uniform_init(rng, (out_ch,), fan_in, dtype), requires_grad=True, dtype=dtype)


def init_visual(cfg: BackboneConfig, rng: SplitMix64, dtype=np.float32) -> Params:
    p: Params = {}
    chans = [3, cfg.visual_hidden, cfg.visual_hidden, cfg.visual_channels]
    for i in range(3):
        conv_param(p, rng, f"visual.conv{i}", (chans[i + 1], chans[i], 3, 3), chans[i + 1], chans[i] * 9, dtype)
    return p


def init_unet(cfg: BackboneConfig, rng: SplitMix64, dtype=np.float32) -> Params:
    p: Params = {}
    k = cfg.kernel
    enc = cfg.encoder_channels
    cin = 2
    for i, c in enumerate(enc):
        conv_param(p, rng, f"unet.down{i}", (c, cin, k, k), c, cin * k * k, dtype)
        cin = c
    p["unet.cond.weight"] = Tensor(
        uniform_init(rng, (cfg.cond_channels, cfg.visual_channels), cfg.visual_channels, dtype), requires_grad=True, dtype=dtype
    )
    p["unet.cond.bias"] = Tensor(
        uniform_init(rng, (cfg.cond_channels,), cfg.visual_channels, dtype), requires_grad=True, dtype=dtype
    )
    for i, (ci, co) in enumerate(zip(cfg.decoder_inputs(), cfg.decoder_channels)):
        conv_param(p, rng, f"unet.up{i}", (ci, co, k, k), co, co * k * k, dtype)
    conv_param(p, rng, "unet.mask", (2, cfg.base_channels, 1, 1), 2, cfg.base_channels, dtype)
    return p


def visual_encode(params: Params, frames, cfg: BackboneConfig) -> Tensor:
    """Encode ``[T, 3, H_v, W_v]`` frames into ``F_v`` of shape ``[c_v, h_v, w_v]``.

    Three stride-2 3x3 conv blocks and a final max pool per frame, then an
    elementwise max over time.
    """
    frames = frames if isinstance(frames, Tensor) else Tensor(frames)
    if frames.data.ndim != 4 or frames.shape[1] != 3:
        raise ValueError(f"frames must be [T, 3, H, W], got {frames.shape}")
    t, _, h, w = frames.shape
    if t < 1:
        raise ValueError("need at least one frame")
    if h % (8 * cfg.visual_pool) or w % (8 * cfg.visual_pool):
        raise ValueError(f"frame size {h}x{w} must be divisible by {8 * cfg.visual_pool}")
    feats = []
    for i in range(t):
        x = ops.take(frames, i, axis=0)
        for j in range(3):
            x = ops.leaky_relu(
                ops.conv2d(x, params[f"visual.conv{j}.weight"], params[f"visual.conv{j}.bias"], stride=2, pad=1),
                cfg.leaky_slope,
            )
        if cfg.visual_pool > 1:
            x = ops.max_pool2d(x, cfg.visual_pool, cfg.visual_pool)
        feats.append(ops.reshape(x, (1, *x.shape)))
    if t == 1:
        return ops.reshape(feats[0], feats[0].shape[1:])
    return ops.max_over_time(ops.concat(feats, axis=0))


def unet_forward(params: Params, s_in: Tensor, f_v: Tensor, cfg: BackboneConfig) -> tuple[Tensor, list[Tensor]]:
    """Run the conditional U-Net.

    ``s_in`` is the ``[2, F, T]`` real/imag input with F and T divisible by
    ``2**n_down``. Returns the 2-channel difference mask and the post-deconv
    feature map of every decoder stage (coarse to fine).
    """
    if s_in.data.ndim != 3 or s_in.shape[0] != 2:
        raise ValueError(f"unet input must be [2, F, T], got {s_in.shape}")
    div = cfg.stride ** cfg.n_down
    if s_in.shape[1] % div or s_in.shape[2] % div:
        raise ValueError(f"unet input spatial dims {s_in.shape[1:]} not divisible by {div}")
    x = s_in
    skips = []
    for i in range(cfg.n_down):
        x = ops.conv2d(x, params[f"unet.down{i}.weight"], params[f"unet.down{i}.bias"], cfg.stride, cfg.pad)
        x = ops.leaky_relu(x, cfg.leaky_slope)
        skips.append(x)
    pooled = ops.max_pool_spatial_full(f_v)
    cond = ops.linear(pooled, params["unet.cond.weight"], params["unet.cond.bias"])
    x = ops.concat([x, ops.tile_spatial(cond, x.shape[1], x.shape[2])], axis=0)
    maps = []
    for i in range(cfg.n_up):
        if i > 0:
            x = ops.concat([x, skips[cfg.n_down - 1 - i]], axis=0)
        x = ops.deconv2d(x, params[f"unet.up{i}.weight"], params[f"unet.up{i}.bias"], cfg.stride, cfg.pad)
        x = ops.relu(x)
        maps.append(x)
    mask = ops.conv2d(x, params["unet.mask.weight"], params["unet.mask.bias"])
    return mask, maps
