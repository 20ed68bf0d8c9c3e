"""Gradient-check suites over every differentiable op and the composed model."""
from __future__ import annotations

from typing import Callable

import numpy as np

from . import ops
from .apnet import ApnetConfig
from .backbone import BackboneConfig, init_unet, unet_forward
from .dsp import Spectrogram
from .gradcheck import directional_gradcheck, gradcheck
from .learning import loss_ab, loss_D, loss_rl, rearrange
from .model import ModelConfig, SepStereoModel
from .rng import SplitMix64
from .tensor import Tensor

OP_TOL = 1e-4
MODEL_TOL = 1e-3


def _away_from_zero(rng: np.random.Generator, shape, margin: float = 0.05) -> np.ndarray:
    x = rng.standard_normal(shape)
    return np.where(np.abs(x) < margin, np.sign(x + 1e-12) * margin + x, x)


def _distinct(rng: np.random.Generator, shape) -> np.ndarray:
    # a shuffled ramp keeps every pair of values at least 0.1 apart, so max is stable under eps
    n = int(np.prod(shape))
    return (rng.permutation(n) * 0.1 - 0.05 * n).reshape(shape) + 0.01 * rng.random(shape)


def op_cases(rng: np.random.Generator) -> dict[str, tuple[Callable, list[np.ndarray]]]:
    """Name -> (op, inputs) for one random instance of every differentiable op."""
    n = rng.standard_normal
    return {
        "conv2d": (lambda x, k, b: ops.conv2d(x, k, b, stride=2, pad=1), [n((2, 6, 5)), n((3, 2, 4, 4)), n(3)]),
        "conv2d_k3": (lambda x, k, b: ops.conv2d(x, k, b, stride=1, pad=1), [n((2, 4, 5)), n((2, 2, 3, 3)), n(2)]),
        "deconv2d": (lambda x, k, b: ops.deconv2d(x, k, b, stride=2, pad=1), [n((2, 3, 3)), n((2, 3, 4, 4)), n(3)]),
        "conv1x1_dynamic": (ops.conv1x1_dynamic, [n((3, 4, 4)), n((5, 3))]),
        "add": (ops.add, [n((3, 4)), n((3, 4))]),
        "sub": (ops.sub, [n((3, 4)), n((3, 4))]),
        "mul": (ops.mul, [n((3, 4)), n((3, 4))]),
        "scale": (lambda x: ops.scale(x, -1.7), [n((3, 4))]),
        "leaky_relu": (lambda x: ops.leaky_relu(x, 0.2), [_away_from_zero(rng, (4, 5))]),
        "relu": (ops.relu, [_away_from_zero(rng, (4, 5))]),
        "concat": (lambda a, b: ops.concat([a, b], axis=0), [n((2, 3, 3)), n((3, 3, 3))]),
        "take": (lambda x: ops.take(x, 1, axis=0), [n((2, 3, 4))]),
        "reshape": (lambda x: ops.reshape(x, (4, 3)), [n((2, 6))]),
        "transpose": (lambda x: ops.transpose(x), [n((3, 5))]),
        "matmul": (ops.matmul, [n((4, 3)), n((3, 5))]),
        "linear": (ops.linear, [n(4), n((3, 4)), n(3)]),
        "tile_spatial": (lambda v: ops.tile_spatial(v, 2, 3), [n(4)]),
        "embed_cells": (lambda a, b: ops.embed_cells([a, b], [(0, 0), (1, 3)], 2, 4), [n(3), n(3)]),
        "max_pool_spatial_full": (ops.max_pool_spatial_full, [_distinct(rng, (3, 2, 4))]),
        "max_over_time": (ops.max_over_time, [_distinct(rng, (3, 2, 4))]),
        "max_pool2d": (lambda x: ops.max_pool2d(x, 2, 2), [_distinct(rng, (2, 4, 4))]),
        "mse_sum": (ops.mse_sum, [n((3, 4)), n((3, 4))]),
        "complex_mul": (ops.complex_mul, [n((2, 3, 4)), n((2, 3, 4))]),
    }


def run_op_suite(trials: int = 1, seed: int = 0, eps: float = 1e-3) -> dict[str, float]:
    """Worst relative gradient error per op over ``trials`` seeded random instances."""
    worst: dict[str, float] = {}
    for t in range(trials):
        rng = np.random.default_rng(seed + t)
        for name, (op, inputs) in op_cases(rng).items():
            err = gradcheck(op, inputs, eps=eps, seed=seed + t).max_error
            worst[name] = max(worst.get(name, 0.0), err)
    return worst


def tiny_model_config() -> ModelConfig:
    """Toy widths with the full 5-stage / 4-tap topology."""
    return ModelConfig(BackboneConfig(base_channels=2, visual_channels=3, visual_hidden=2, cond_channels=2),
                       ApnetConfig(), frame_height=32, frame_width=64)


def _random_spec(rng: np.random.Generator, f: int, t: int) -> Spectrogram:
    return Spectrogram(Tensor(rng.standard_normal((f, t))), Tensor(rng.standard_normal((f, t))))


def backbone_check(seed: int = 0, shape: tuple[int, int] = (32, 32)) -> dict[str, float]:
    """Directional gradient check of U-Net + conditioning (``[2, *shape]`` input)."""
    rng = np.random.default_rng(seed)
    bcfg = tiny_model_config().backbone
    params = {k: v.data for k, v in init_unet(bcfg, SplitMix64(seed), np.float64).items()}
    params["input"] = rng.standard_normal((2, *shape))
    params["f_v"] = _distinct(rng, (bcfg.visual_channels, 2, 4))
    weights = rng.standard_normal((2, *shape))
    map_weights = None

    def loss(p):
        nonlocal map_weights
        mask, maps = unet_forward(p, p["input"], p["f_v"], bcfg)
        total = ops.sum_all(ops.mul(mask, Tensor(weights)))
        if map_weights is None:
            map_weights = [np.random.default_rng(seed + 1).standard_normal(m.shape) for m in maps]
        for m, w in zip(maps, map_weights):
            total = ops.add(total, ops.sum_all(ops.mul(m, Tensor(w))))
        return total

    return directional_gradcheck(loss, params, seed=seed)


def full_model_check(seed: int = 0, shape: tuple[int, int] = (32, 32)) -> dict[str, float]:
    """Directional gradient check of visual encoder + U-Net + both APNets + all losses."""
    rng = np.random.default_rng(seed)
    cfg = tiny_model_config()
    model = SepStereoModel(cfg, seed=seed, dtype=np.float64)
    params = {k: v.data for k, v in model.params.items()}
    frames = rng.random((1, 3, cfg.frame_height, cfg.frame_width))
    frames_b = rng.random((1, 3, cfg.frame_height, cfg.frame_width))
    f, t = shape
    s_in = _random_spec(rng, f, t)
    targets = [_random_spec(rng, f, t) for _ in range(5)]
    h_v, w_v = cfg.visual_grid

    def loss(p):
        m = model.with_params(p)
        f_v = m.encode_visual(frames)
        out = m.stereo_forward(s_in, f_v)
        total = ops.add(loss_D(out.s_diff, targets[0]), loss_rl(out.s_left, out.s_right, targets[1], targets[2]))
        f_a = ops.max_pool_spatial_full(f_v)
        f_b = ops.max_pool_spatial_full(m.encode_visual(frames_b))
        sep = m.separation_forward(s_in, rearrange(f_a, f_b, w_v, h_v))
        return ops.add(total, loss_ab(sep.s_a, sep.s_b, targets[3], targets[4]))

    return directional_gradcheck(loss, params, n_directions=2, seed=seed)


def run_full_suite(seed: int = 0) -> dict[str, float]:
    return {
        "backbone": max(backbone_check(seed).values()),
        "full_model": max(full_model_check(seed).values()),
    }
