"""Flat ``key=value`` run configuration."""
from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path

from .apnet import ApnetConfig
from .backbone import BackboneConfig
from .dsp import StftConfig
from .learning import LossWeights, TrainConfig
from .model import ModelConfig


class ConfigError(ValueError):
    pass


def _bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {s!r}")


# key -> (default, parser, help); architecture keys must match a checkpoint exactly
SCHEMA: dict[str, tuple[object, type | object, str]] = {
    "seed": (0, int, "master seed for parameter init and data sampling"),
    "stft.window_len": (512, int, "STFT window length in samples"),
    "stft.hop": (160, int, "STFT hop in samples"),
    "model.base_channels": (8, int, "U-Net base channel width (full scale: 64)"),
    "model.n_down": (5, int, "U-Net down/up stages"),
    "model.leaky_slope": (0.2, float, "leaky ReLU slope"),
    "model.visual_channels": (8, int, "channels of the visual feature map (full scale: 512)"),
    "model.visual_hidden": (8, int, "hidden width of the visual encoder"),
    "model.visual_pool": (2, int, "final max-pool factor of the visual encoder"),
    "model.cond_channels": (8, int, "bottleneck conditioning channels"),
    "model.frame_height": (32, int, "input frame height in pixels"),
    "model.frame_width": (64, int, "input frame width in pixels"),
    "apnet.n_taps": (4, int, "Associative-Conv taps on the finest decoder stages"),
    "apnet.head_kernel": (3, int, "kernel size of the two output heads"),
    "train.lr": (5e-4, float, "Adam learning rate"),
    "train.beta1": (0.9, float, "Adam beta1"),
    "train.beta2": (0.999, float, "Adam beta2"),
    "train.eps": (1e-8, float, "Adam epsilon"),
    "train.batch": (4, int, "examples accumulated per step (full scale: 144)"),
    "train.steps": (100, int, "optimizer steps"),
    "train.warmup_steps": (0, int, "separation-only steps before joint training"),
    "train.amp_aug_min": (0.5, float, "lower bound of separation amplitude augmentation"),
    "train.amp_aug_max": (1.5, float, "upper bound of separation amplitude augmentation"),
    "train.placement": ("horizontal", str, "rearrangement placement: horizontal or vertical"),
    "train.log": ("", str, "loss log path (empty: no log file)"),
    "loss.lambda1": (1.0, float, "weight of the left/right loss"),
    "loss.lambda2": (1.0, float, "weight of the separation loss"),
    "loss.use_LD": (True, _bool, "include the difference-spectrum loss"),
    "data.dir": ("", str, "dataset directory from `synth` (empty: synthesize in memory)"),
    "data.scenes": (32, int, "scenes synthesized in memory when data.dir is empty"),
    "data.duration": (1.0, float, "duration in seconds of in-memory scenes"),
    "infer.mode": ("apnet", str, "output branch for binauralize: apnet, unet or unsupervised"),
}

ARCHITECTURE_KEYS = {k for k in SCHEMA if k.startswith(("model.", "apnet.", "stft."))}


def _format(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


@dataclass
class RunConfig:
    values: dict

    @classmethod
    def defaults(cls) -> "RunConfig":
        return cls({k: d for k, (d, _, _) in SCHEMA.items()})

    @classmethod
    def parse(cls, text: str, base: "RunConfig | None" = None) -> "RunConfig":
        vals = dict((base or cls.defaults()).values)
        for n, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"line {n}: expected key=value, got {raw!r}")
            key, value = (s.strip() for s in line.split("=", 1))
            if key not in SCHEMA:
                raise ConfigError(f"line {n}: unknown key {key!r}")
            try:
                vals[key] = SCHEMA[key][1](value)
            except ValueError as exc:
                raise ConfigError(f"line {n}: bad value for {key}: {exc}") from exc
        return cls(vals)

    @classmethod
    def load(cls, path: str | Path | None) -> "RunConfig":
        cfg = cls.parse(Path(path).read_text()) if path else cls.defaults()
        env = os.environ.get("SEPSTEREO_SEED")
        if env is not None:
            cfg.values["seed"] = int(env)
        return cfg

    def to_text(self) -> str:
        return "".join(f"{k}={_format(self.values[k])}\n" for k in SCHEMA)

    def __getitem__(self, key):
        return self.values[key]

    def architecture(self) -> dict:
        return {k: self.values[k] for k in sorted(ARCHITECTURE_KEYS)}

    def stft_config(self) -> StftConfig:
        return StftConfig(self["stft.window_len"], self["stft.hop"])

    def model_config(self) -> ModelConfig:
        n = self["model.n_down"]
        bb = BackboneConfig(
            base_channels=self["model.base_channels"], n_down=n, n_up=n, n_skips=n - 1,
            leaky_slope=self["model.leaky_slope"], visual_channels=self["model.visual_channels"],
            visual_hidden=self["model.visual_hidden"], visual_pool=self["model.visual_pool"],
            cond_channels=self["model.cond_channels"],
        )
        ap = ApnetConfig(n_taps=self["apnet.n_taps"], head_kernel=self["apnet.head_kernel"],
                         leaky_slope=self["model.leaky_slope"])
        return ModelConfig(bb, ap, self["model.frame_height"], self["model.frame_width"])

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            lr=self["train.lr"], beta1=self["train.beta1"], beta2=self["train.beta2"], eps=self["train.eps"],
            batch=self["train.batch"], steps=self["train.steps"], seed=self["seed"],
            amp_aug_range=(self["train.amp_aug_min"], self["train.amp_aug_max"]),
            placement=self["train.placement"], warmup_steps=self["train.warmup_steps"],
        )

    def loss_weights(self) -> LossWeights:
        return LossWeights(self["loss.lambda1"], self["loss.lambda2"], self["loss.use_LD"])


def help_text() -> str:
    return "\n".join(f"  {k}={_format(d)}  {h}" for k, (d, _, h) in SCHEMA.items())
