"""Losses, visual rearrangement, optimizer and the joint training loop."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence, TextIO

import numpy as np

from . import ops
from .dsp import Spectrogram, StftConfig
from .model import SepStereoModel, StereoOutput, crop_nyquist
from .rng import SplitMix64
from .synth import RenderedExample, SeparationExample, StereoExample, sample_sep_pair, sample_stereo_batch
from .tensor import Tensor


class TrainingDiverged(FloatingPointError):
    pass


@dataclass(frozen=True)
class LossWeights:
    lambda1: float = 1.0
    lambda2: float = 1.0
    use_LD: bool = True

    def __post_init__(self):
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ValueError("loss weights must be non-negative")


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 5e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch: int = 4
    steps: int = 100
    seed: int = 0
    amp_aug_range: tuple[float, float] = (0.5, 1.5)
    placement: str = "horizontal"
    warmup_steps: int = 0

    def __post_init__(self):
        if self.lr < 0:
            raise ValueError("learning rate must be non-negative")
        lo, hi = self.amp_aug_range
        if not 0 < lo <= hi:
            raise ValueError(f"bad amplitude range {self.amp_aug_range}")
        if self.placement not in ("horizontal", "vertical"):
            raise ValueError(f"placement must be horizontal or vertical, got {self.placement!r}")
        if self.batch < 1:
            raise ValueError("batch must be >= 1")


# -------------------------------------------------------------------- losses

def _sq_dist(pred: Spectrogram, true: Spectrogram) -> Tensor:
    if pred.shape != true.shape:
        raise ValueError(f"loss: shape mismatch {pred.shape} vs {true.shape}")
    return ops.add(ops.mse_sum(pred.real, true.real), ops.mse_sum(pred.imag, true.imag))


def loss_D(s_diff_pred: Spectrogram, s_diff_true: Spectrogram) -> Tensor:
    """Squared L2 over real and imaginary planes."""
    return _sq_dist(s_diff_pred, s_diff_true)


def loss_rl(s_left_pred: Spectrogram, s_right_pred: Spectrogram,
            s_left_true: Spectrogram, s_right_true: Spectrogram) -> Tensor:
    return ops.add(_sq_dist(s_left_pred, s_left_true), _sq_dist(s_right_pred, s_right_true))


def loss_ab(s_a_pred: Spectrogram, s_b_pred: Spectrogram, s_a_true: Spectrogram, s_b_true: Spectrogram) -> Tensor:
    return loss_rl(s_a_pred, s_b_pred, s_a_true, s_b_true)


def loss_all(l_d, l_rl, l_ab, weights: LossWeights = LossWeights()):
    """Weighted total; absent terms are passed as ``None``. Works on floats or tensors."""
    terms = []
    if l_d is not None and weights.use_LD:
        terms.append(l_d)
    if l_rl is not None:
        terms.append(l_rl * weights.lambda1)
    if l_ab is not None:
        terms.append(l_ab * weights.lambda2)
    if not terms:
        return 0.0
    total = terms[0]
    for t in terms[1:]:
        total = total + t
    return total


# ------------------------------------------------------------- rearrangement

def placement_cells(h_v: int, w_v: int, placement: str = "horizontal") -> tuple[tuple[int, int], tuple[int, int]]:
    """0-based (row, col) cells receiving ``F_A`` and ``F_B``."""
    if placement == "horizontal":
        row = math.ceil(h_v / 2) - 1
        return (row, 0), (row, w_v - 1)
    if placement == "vertical":
        col = math.ceil(w_v / 2) - 1
        return (0, col), (h_v - 1, col)
    raise ValueError(f"unknown placement {placement!r}")


def rearrange(f_a: Tensor, f_b: Tensor, w_v: int, h_v: int, placement: str = "horizontal",
              c_v: int | None = None) -> Tensor:
    """All-zero ``[c_v, h_v, w_v]`` map with the two pooled vectors planted at the extremes.

    Horizontal: middle row (1-based ``ceil(h_v/2)``), first and last column.
    Vertical: middle column, first and last row.
    """
    c = c_v if c_v is not None else f_a.shape[0]
    if f_a.shape != (c,) or f_b.shape != (c,):
        raise ValueError(f"pooled vectors must have length {c}, got {f_a.shape} and {f_b.shape}")
    cell_a, cell_b = placement_cells(h_v, w_v, placement)
    return ops.embed_cells([f_a, f_b], [cell_a, cell_b], h_v, w_v)


# ----------------------------------------------------------------- optimizer

class Adam:
    def __init__(self, params: dict[str, Tensor], lr=5e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m = {k: np.zeros_like(v.data) for k, v in params.items()}
        self.v = {k: np.zeros_like(v.data) for k, v in params.items()}

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def step(self) -> None:
        """One update; parameters without a gradient are left untouched."""
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1**self.t
        c2 = 1.0 - b2**self.t
        for k, p in self.params.items():
            g = p.grad
            if g is None:
                continue
            dt = p.data.dtype.type
            m, v = self.m[k], self.v[k]
            m *= dt(b1)
            m += dt(1 - b1) * g
            v *= dt(b2)
            v += dt(1 - b2) * (g * g)
            upd = dt(self.lr) * (m / dt(c1)) / (np.sqrt(v / dt(c2)) + dt(self.eps))
            p.data -= upd


# ------------------------------------------------------------- forward/loss

def stereo_losses(model: SepStereoModel, ex: StereoExample) -> tuple[Tensor, Tensor, StereoOutput]:
    s_mono = crop_nyquist(ex.s_mono)
    f_v = model.encode_visual(ex.frames)
    out = model.stereo_forward(s_mono, f_v)
    l_d = loss_D(out.s_diff, crop_nyquist(ex.s_diff))
    l_rl = loss_rl(out.s_left, out.s_right, crop_nyquist(ex.s_left), crop_nyquist(ex.s_right))
    return l_d, l_rl, out


def separation_visual(model: SepStereoModel, frames_a, frames_b, placement: str = "horizontal") -> Tensor:
    f_a = ops.max_pool_spatial_full(model.encode_visual(frames_a))
    f_b = ops.max_pool_spatial_full(model.encode_visual(frames_b))
    h_v, w_v = model.config.visual_grid
    return rearrange(f_a, f_b, w_v, h_v, placement)


def separation_losses(model: SepStereoModel, ex: SeparationExample, placement: str = "horizontal"):
    f_v0 = separation_visual(model, ex.frames_a, ex.frames_b, placement)
    out = model.separation_forward(crop_nyquist(ex.s_mix), f_v0)
    return loss_ab(out.s_a, out.s_b, crop_nyquist(ex.s_a), crop_nyquist(ex.s_b)), out


@dataclass
class LossRecord:
    step: int
    mode: str
    L_D: float = 0.0
    L_rl: float = 0.0
    L_ab: float = 0.0
    L_all: float = 0.0

    def line(self) -> str:
        return (f"step {self.step} mode {self.mode} L_D {self.L_D:.9g} L_rl {self.L_rl:.9g} "
                f"L_ab {self.L_ab:.9g} L_all {self.L_all:.9g}")

    @classmethod
    def parse(cls, line: str) -> "LossRecord":
        tok = line.split()
        kv = dict(zip(tok[::2], tok[1::2]))
        return cls(int(kv["step"]), kv["mode"], float(kv["L_D"]), float(kv["L_rl"]), float(kv["L_ab"]),
                   float(kv["L_all"]))


def _backprop(loss: Tensor, weight: float) -> None:
    if not np.isfinite(loss.data).all():
        raise TrainingDiverged(f"non-finite loss {loss.data}")
    loss.backward(np.array([weight], dtype=loss.dtype))


def train_step(model: SepStereoModel, optimizer: Adam, batch, mode: str, cfg: TrainConfig,
               weights: LossWeights = LossWeights(), step: int = 0) -> LossRecord:
    """Forward, backward and one Adam update over a batch.

    ``batch`` is a list of :class:`StereoExample` (mode ``stereo``), a list
    of :class:`SeparationExample` (mode ``separation``), or a pair of such
    lists (mode ``joint``). Gradients are averaged over each list.
    """
    if mode == "stereo":
        stereo_batch, sep_batch = batch, []
    elif mode == "separation":
        stereo_batch, sep_batch = [], batch
    elif mode == "joint":
        stereo_batch, sep_batch = batch
    else:
        raise ValueError(f"unknown mode {mode!r}")
    optimizer.zero_grad()
    rec = LossRecord(step, mode)
    try:
        for ex in stereo_batch:
            l_d, l_rl, _ = stereo_losses(model, ex)
            total = loss_all(l_d, l_rl, None, weights)
            _backprop(total, 1.0 / len(stereo_batch))
            rec.L_D += l_d.item() / len(stereo_batch)
            rec.L_rl += l_rl.item() / len(stereo_batch)
        for ex in sep_batch:
            l_ab, _ = separation_losses(model, ex, cfg.placement)
            _backprop(loss_all(None, None, l_ab, weights), 1.0 / len(sep_batch))
            rec.L_ab += l_ab.item() / len(sep_batch)
    except FloatingPointError as exc:
        raise TrainingDiverged(f"step {step} ({mode}): {exc}") from exc
    rec.L_all = float(loss_all(rec.L_D if stereo_batch else None, rec.L_rl if stereo_batch else None,
                               rec.L_ab if sep_batch else None, weights))
    optimizer.step()
    return rec


# ------------------------------------------------------------------ schedule

@dataclass
class Trainer:
    """Stateful training run: model, optimizer, data RNG and loss history.

    The schedule runs ``warmup_steps`` separation-only steps, then each step
    uses one stereo batch and one separation batch. Missing streams reduce
    the schedule to single-task training.
    """

    model: SepStereoModel
    cfg: TrainConfig
    weights: LossWeights = LossWeights()
    stereo_data: Sequence[RenderedExample] = ()
    sep_data: Sequence[RenderedExample] = ()
    sep_pairs: list[tuple[int, int]] | None = None
    task: str = "joint"
    step: int = 0
    records: list[LossRecord] = field(default_factory=list)
    log: TextIO | None = None
    optimizer: Adam | None = None
    rng: SplitMix64 | None = None
    stft_cfg: StftConfig = StftConfig()

    def __post_init__(self):
        if self.optimizer is None:
            self.optimizer = Adam(self.model.params, self.cfg.lr, self.cfg.beta1, self.cfg.beta2, self.cfg.eps)
        if self.rng is None:
            self.rng = SplitMix64(self.cfg.seed)
        if self.task not in ("stereo", "sep", "joint"):
            raise ValueError(f"unknown task {self.task!r}")
        if self.task in ("stereo", "joint") and not self.stereo_data and not (self.task == "joint" and self.sep_data):
            raise ValueError("empty stereo stream")
        if self.task in ("sep",) and not self.sep_data:
            raise ValueError("empty separation stream")

    def mode_for(self, step: int) -> str:
        has_sep = bool(self.sep_data)
        has_stereo = bool(self.stereo_data)
        if self.task == "stereo":
            return "stereo"
        if self.task == "sep":
            return "separation"
        if has_sep and (step < self.cfg.warmup_steps or not has_stereo):
            return "separation"
        return "joint" if has_sep else "stereo"

    def _stereo_batch(self):
        return sample_stereo_batch(list(self.stereo_data), self.rng, self.cfg.batch, cfg=self.stft_cfg)

    def _sep_batch(self):
        return [sample_sep_pair(list(self.sep_data), self.rng, self.cfg.amp_aug_range, cfg=self.stft_cfg,
                                pairs=self.sep_pairs)
                for _ in range(self.cfg.batch)]

    def train(self, n_steps: int, callback: Callable[[LossRecord], None] | None = None) -> list[LossRecord]:
        out = []
        for _ in range(n_steps):
            mode = self.mode_for(self.step)
            if mode == "stereo":
                batch = self._stereo_batch()
            elif mode == "separation":
                batch = self._sep_batch()
            else:
                batch = (self._stereo_batch(), self._sep_batch())
            rec = train_step(self.model, self.optimizer, batch, mode, self.cfg, self.weights, self.step)
            self.step += 1
            self.records.append(rec)
            out.append(rec)
            if self.log is not None:
                self.log.write(rec.line() + "\n")
            if callback is not None:
                callback(rec)
        return out


def joint_schedule(model: SepStereoModel, stereo_stream: Sequence[RenderedExample],
                   sep_stream: Sequence[RenderedExample], cfg: TrainConfig,
                   weights: LossWeights = LossWeights()) -> Trainer:
    """Separation warmup followed by combined stereo+separation steps; ``cfg.steps`` in total."""
    if not stereo_stream and not sep_stream:
        raise ValueError("both streams are empty")
    trainer = Trainer(model, cfg, weights, stereo_stream, sep_stream, task="joint")
    trainer.train(cfg.steps)
    return trainer


# -------------------------------------------------------- unsupervised stereo

def adaptive_pool(x: np.ndarray, out_h: int, out_w: int, reduce=np.max) -> np.ndarray:
    """Adaptive pooling of ``[C, H, W]`` to ``[C, out_h, out_w]``."""
    c, h, w = x.shape
    out = np.empty((c, out_h, out_w), dtype=x.dtype)
    for i in range(out_h):
        r0, r1 = (i * h) // out_h, -((-(i + 1) * h) // out_h)
        for j in range(out_w):
            c0, c1 = (j * w) // out_w, -((-(j + 1) * w) // out_w)
            out[:, i, j] = reduce(x[:, r0:r1, c0:c1], axis=(1, 2))
    return out


def pseudo_stereo_vectors(f_v: np.ndarray, pool_grid: tuple[int, int] = (2, 2)) -> tuple[np.ndarray, np.ndarray]:
    """Max-pool ``F_v`` to ``pool_grid`` (rows, cols), average to one row of two cells, split left/right."""
    pooled = adaptive_pool(f_v, *pool_grid, reduce=np.max)
    halves = adaptive_pool(pooled, 1, 2, reduce=np.mean)
    return halves[:, 0, 0], halves[:, 0, 1]


def unsupervised_stereo_inference(model: SepStereoModel, f_v: Tensor, s_mono: Spectrogram,
                                  pool_grid: tuple[int, int] = (2, 2)) -> tuple[Spectrogram, Spectrogram]:
    """Left/right prediction from a separation-trained model.

    The visual map's left and right halves stand in for the two sources and
    the separation heads act as left/right heads. ``s_mono`` is the cropped
    ``[F-1, T]`` spectrogram.
    """
    c_v = model.config.backbone.visual_channels
    if f_v.shape[0] != c_v:
        raise ValueError(f"visual map has {f_v.shape[0]} channels, model expects {c_v}")
    left, right = pseudo_stereo_vectors(f_v.data, pool_grid)
    h_v, w_v = model.config.visual_grid
    f_v0 = rearrange(Tensor(left, dtype=f_v.dtype), Tensor(right, dtype=f_v.dtype), w_v, h_v)
    out = model.separation_forward(s_mono, f_v0)
    return out.s_a, out.s_b
