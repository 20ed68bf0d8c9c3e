"""Checkpoint files: text header + manifest, then a raw little-endian float32 blob.

Layout::

    SEPSTEREO-CHECKPOINT 1
    [config]
    key=value ...
    [state]
    step=<n>
    adam_t=<n>
    rng_state=<uint64>
    [manifest]
    <name> <d0,d1,...> <byte offset>
    [blob] <byte count>
    <raw bytes>
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import ARCHITECTURE_KEYS, ConfigError, RunConfig

MAGIC = "SEPSTEREO-CHECKPOINT 1"


class CheckpointError(ValueError):
    """Unreadable or corrupt checkpoint file."""


class IncompatibleCheckpoint(CheckpointError):
    """Checkpoint does not fit the requested architecture."""


@dataclass
class Checkpoint:
    config: RunConfig
    tensors: dict[str, np.ndarray]
    state: dict[str, int] = field(default_factory=dict)

    def params(self) -> dict[str, np.ndarray]:
        return {k: v for k, v in self.tensors.items() if not k.startswith("adam.")}

    def moments(self) -> tuple[dict[str, np.ndarray], dict[str, np.ndarray]]:
        m = {k[len("adam.m."):]: v for k, v in self.tensors.items() if k.startswith("adam.m.")}
        v = {k[len("adam.v."):]: v for k, v in self.tensors.items() if k.startswith("adam.v.")}
        return m, v


def to_bytes(ckpt: Checkpoint) -> bytes:
    lines = [MAGIC, "[config]"]
    lines += ckpt.config.to_text().splitlines()
    lines.append("[state]")
    lines += [f"{k}={int(v)}" for k, v in sorted(ckpt.state.items())]
    lines.append("[manifest]")
    chunks = []
    offset = 0
    for name, arr in ckpt.tensors.items():
        if " " in name:
            raise CheckpointError(f"tensor name may not contain spaces: {name!r}")
        raw = np.ascontiguousarray(arr, dtype="<f4").tobytes()
        lines.append(f"{name} {','.join(str(d) for d in arr.shape)} {offset}")
        chunks.append(raw)
        offset += len(raw)
    lines.append(f"[blob] {offset}")
    return ("\n".join(lines) + "\n").encode("ascii") + b"".join(chunks)


def from_bytes(data: bytes) -> Checkpoint:
    marker = data.find(b"\n[blob] ")
    if not data.startswith(MAGIC.encode()) or marker < 0:
        raise CheckpointError("not a checkpoint file (bad magic or missing blob marker)")
    header_end = data.index(b"\n", marker + 1)
    blob_len = int(data[marker + len(b"\n[blob] "):header_end])
    blob = data[header_end + 1:]
    if len(blob) != blob_len:
        raise CheckpointError(f"corrupt checkpoint: blob has {len(blob)} bytes, manifest says {blob_len}")
    section = None
    cfg_lines, state, tensors = [], {}, {}
    expected = 0
    for line in data[:marker].decode("ascii").splitlines()[1:]:
        if line.startswith("["):
            section = line
            continue
        if section == "[config]":
            cfg_lines.append(line)
        elif section == "[state]":
            k, _, v = line.partition("=")
            try:
                state[k] = int(v)
            except ValueError as exc:
                raise CheckpointError(f"corrupt checkpoint: bad state line {line!r}") from exc
        elif section == "[manifest]":
            try:
                name, shape_s, off_s = line.split(" ")
                shape = tuple(int(s) for s in shape_s.split(",") if s)
                off, n = int(off_s), int(np.prod(shape)) * 4
            except ValueError as exc:
                raise CheckpointError(f"corrupt checkpoint: bad manifest line {line!r}") from exc
            if off != expected or off + n > blob_len:
                raise CheckpointError(f"corrupt checkpoint: tensor {name} at offset {off} does not fit the blob")
            if name in tensors:
                raise CheckpointError(f"corrupt checkpoint: duplicate tensor {name}")
            tensors[name] = np.frombuffer(blob, dtype="<f4", count=n // 4, offset=off).astype(np.float32).reshape(shape)
            expected = off + n
    if expected != blob_len:
        raise CheckpointError(f"corrupt checkpoint: manifest covers {expected} of {blob_len} blob bytes")
    try:
        config = RunConfig.parse("\n".join(cfg_lines))
    except ConfigError as exc:
        raise CheckpointError(f"corrupt checkpoint config: {exc}") from exc
    return Checkpoint(config, tensors, state)


def save(path: str | Path, ckpt: Checkpoint) -> None:
    Path(path).write_bytes(to_bytes(ckpt))


def load(path: str | Path) -> Checkpoint:
    return from_bytes(Path(path).read_bytes())


def check_compatible(ckpt_config: RunConfig, cli_config: RunConfig) -> list[str]:
    """Raise on architecture mismatch; return warnings for other differing keys."""
    bad = [k for k in sorted(ARCHITECTURE_KEYS) if ckpt_config[k] != cli_config[k]]
    if bad:
        raise IncompatibleCheckpoint("architecture mismatch with checkpoint on " + ", ".join(
            f"{k} ({ckpt_config[k]} != {cli_config[k]})" for k in bad))
    return [f"{k}: checkpoint {ckpt_config[k]!r}, config {cli_config[k]!r}"
            for k in ckpt_config.values if k not in ARCHITECTURE_KEYS and ckpt_config[k] != cli_config[k]]


def from_trainer(trainer, config: RunConfig) -> Checkpoint:
    """Snapshot a :class:`~sepstereo.learning.Trainer` (parameters, Adam moments, data RNG)."""
    tensors = {k: v.data for k, v in trainer.model.params.items()}
    opt = trainer.optimizer
    tensors.update({f"adam.m.{k}": v for k, v in opt.m.items()})
    tensors.update({f"adam.v.{k}": v for k, v in opt.v.items()})
    state = {"step": trainer.step, "adam_t": opt.t, "rng_state": trainer.rng.state}
    return Checkpoint(config, tensors, state)


def restore_model(ckpt: Checkpoint):
    from .model import SepStereoModel
    from .tensor import Tensor

    model = SepStereoModel(ckpt.config.model_config(), seed=0)
    params = ckpt.params()
    missing = set(model.params) ^ set(params)
    if missing:
        raise IncompatibleCheckpoint("checkpoint parameters do not match the architecture: " + ", ".join(sorted(missing)))
    for k, p in model.params.items():
        if p.shape != params[k].shape:
            raise IncompatibleCheckpoint(f"shape mismatch for {k}: checkpoint {params[k].shape}, model {p.shape}")
        model.params[k] = Tensor(params[k], requires_grad=True, dtype=np.float32)
    return model


def restore_trainer(ckpt: Checkpoint, **trainer_kw):
    """Rebuild a trainer that continues exactly where the checkpointed one stopped."""
    from .learning import Adam, Trainer
    from .rng import SplitMix64

    model = restore_model(ckpt)
    tcfg = ckpt.config.train_config()
    opt = Adam(model.params, tcfg.lr, tcfg.beta1, tcfg.beta2, tcfg.eps)
    m, v = ckpt.moments()
    for k in opt.m:
        if k in m:
            opt.m[k] = m[k].copy()
            opt.v[k] = v[k].copy()
    opt.t = ckpt.state.get("adam_t", 0)
    rng = SplitMix64(0)
    rng.state = ckpt.state.get("rng_state", tcfg.seed)
    return Trainer(model, tcfg, ckpt.config.loss_weights(), optimizer=opt, rng=rng, stft_cfg=ckpt.config.stft_config(),
                   step=ckpt.state.get("step", 0), **trainer_kw)
