"""Sliding-window inference and the stereo / separation metrics."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.signal import hilbert

from .dsp import CLIP_SAMPLES, SAMPLE_RATE, StftConfig, istft_complex, stft, stft_complex
from .learning import separation_visual, unsupervised_stereo_inference
from .model import SepStereoModel, crop_nyquist, restore_nyquist
from .synth import FRAME_RATE

DB_CAP = 100.0
HOP_SAMPLES = 1600  # 0.1 s


def window_starts(n: int, window: int = CLIP_SAMPLES, hop: int = HOP_SAMPLES) -> list[int]:
    """``floor((n - window) / hop) + 1`` starts; the last one is moved to end at ``n``."""
    if n < window:
        raise ValueError(f"clip of {n} samples is shorter than the {window}-sample analysis window")
    count = (n - window) // hop + 1
    starts = [i * hop for i in range(count)]
    starts[-1] = n - window
    return starts


def _frames_for(frames: np.ndarray, start: int, window: int) -> np.ndarray:
    t = (start + window / 2) / SAMPLE_RATE
    return frames[min(len(frames) - 1, int(t * FRAME_RATE))][None]


def _crossfade(n: int, starts: list[int], window: int, predict: Callable[[int], np.ndarray], channels: int) -> np.ndarray:
    # strictly positive triangle, so single-coverage regions pass through unchanged
    tri = np.bartlett(window + 2)[1:-1]
    acc = np.zeros((channels, n))
    wsum = np.zeros(n)
    for s in starts:
        acc[:, s : s + window] += predict(s) * tri
        wsum[s : s + window] += tri
    return (acc / wsum).astype(np.float32)


def _predict_window(model: SepStereoModel, mono: np.ndarray, frames: np.ndarray, start: int, window: int,
                    cfg: StftConfig, mode: str) -> np.ndarray:
    seg = mono[start : start + window]
    z = stft_complex(seg, cfg)
    s_in = crop_nyquist(stft(seg, cfg))
    f_v = model.encode_visual(_frames_for(frames, start, window))
    if mode == "unsupervised":
        s_l, s_r = unsupervised_stereo_inference(model, f_v, s_in)
        zl, zr = s_l.to_complex(), s_r.to_complex()
    else:
        out = model.stereo_forward(s_in, f_v)
        if mode == "unet":
            zd = restore_nyquist(out.s_diff.to_complex(), z, keep=False)
            zl, zr = z + zd, z - zd
        elif mode == "apnet":
            zl, zr = out.s_left.to_complex(), out.s_right.to_complex()
        else:
            raise ValueError(f"unknown inference mode {mode!r}")
    if mode != "unet":
        zl, zr = restore_nyquist(zl, z), restore_nyquist(zr, z)
    return np.stack([istft_complex(zl, cfg, window), istft_complex(zr, cfg, window)])


def sliding_inference(model: SepStereoModel, mono: np.ndarray, frames: np.ndarray, window: int = CLIP_SAMPLES,
                      hop: int = HOP_SAMPLES, cfg: StftConfig = StftConfig(), mode: str = "apnet") -> np.ndarray:
    """Binauralize a mono clip of any length ``>= window``; returns ``[2, n]``.

    ``mode`` selects the output branch: ``apnet`` (two heads), ``unet``
    (difference mask of the backbone) or ``unsupervised`` (separation heads
    driven by the left/right halves of the visual map).
    """
    mono = np.asarray(mono, dtype=np.float64)
    starts = window_starts(len(mono), window, hop)
    return _crossfade(len(mono), starts, window,
                      lambda s: _predict_window(model, mono, frames, s, window, cfg, mode), 2)


def sliding_separation(model: SepStereoModel, mix: np.ndarray, frames_a: np.ndarray, frames_b: np.ndarray,
                       window: int = CLIP_SAMPLES, hop: int = HOP_SAMPLES, cfg: StftConfig = StftConfig(),
                       placement: str = "horizontal") -> np.ndarray:
    """Separate a mixture into ``[2, n]`` (source A, source B)."""
    mix = np.asarray(mix, dtype=np.float64)

    def predict(start):
        seg = mix[start : start + window]
        z = stft_complex(seg, cfg)
        f_v0 = separation_visual(model, _frames_for(frames_a, start, window), _frames_for(frames_b, start, window),
                                 placement)
        out = model.separation_forward(crop_nyquist(stft(seg, cfg)), f_v0)
        za, zb = restore_nyquist(out.s_a.to_complex(), z), restore_nyquist(out.s_b.to_complex(), z)
        return np.stack([istft_complex(za, cfg, window), istft_complex(zb, cfg, window)])

    return _crossfade(len(mix), window_starts(len(mix), window, hop), window, predict, 2)


# ------------------------------------------------------------ stereo metrics

def _check_pair(pred: np.ndarray, truth: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    pred, truth = np.asarray(pred, dtype=np.float64), np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape:
        raise ValueError(f"length mismatch {pred.shape} vs {truth.shape}")
    if pred.ndim != 2 or pred.shape[0] != 2:
        raise ValueError(f"expected stereo [2, n] audio, got {pred.shape}")
    return pred, truth


def _eval_windows(n: int, window: int) -> list[int]:
    if n < window:
        raise ValueError(f"clip of {n} samples is shorter than the {window}-sample window")
    return [i * window for i in range(n // window)]


def stft_distance(pred: np.ndarray, truth: np.ndarray, window: int = CLIP_SAMPLES, cfg: StftConfig = StftConfig()) -> float:
    """Mean over consecutive windows of ``||S_l^t - S_l^p|| + ||S_r^t - S_r^p||`` (Frobenius, not squared)."""
    pred, truth = _check_pair(pred, truth)
    vals = []
    for s in _eval_windows(pred.shape[1], window):
        d = 0.0
        for ch in range(2):
            diff = stft_complex(truth[ch, s : s + window], cfg) - stft_complex(pred[ch, s : s + window], cfg)
            d += float(np.sqrt(np.sum(np.abs(diff) ** 2)))
        vals.append(d)
    return float(np.mean(vals))


def envelope(x: np.ndarray) -> np.ndarray:
    """Magnitude of the analytic signal."""
    return np.abs(hilbert(np.asarray(x, dtype=np.float64)))


def envelope_distance(pred: np.ndarray, truth: np.ndarray, window: int = CLIP_SAMPLES) -> float:
    """Mean over windows of the channel-averaged L2 distance between envelopes."""
    pred, truth = _check_pair(pred, truth)
    vals = []
    for s in _eval_windows(pred.shape[1], window):
        per_ch = [np.linalg.norm(envelope(truth[ch, s : s + window]) - envelope(pred[ch, s : s + window]))
                  for ch in range(2)]
        vals.append(float(np.mean(per_ch)))
    return float(np.mean(vals))


@dataclass
class StereoReport:
    stft_d: list[float] = field(default_factory=list)
    env_d: list[float] = field(default_factory=list)

    def add(self, pred: np.ndarray, truth: np.ndarray, window: int = CLIP_SAMPLES) -> None:
        self.stft_d.append(stft_distance(pred, truth, window))
        self.env_d.append(envelope_distance(pred, truth, window))

    @property
    def mean_stft_d(self) -> float:
        return float(np.mean(self.stft_d)) if self.stft_d else float("nan")

    @property
    def mean_env_d(self) -> float:
        return float(np.mean(self.env_d)) if self.env_d else float("nan")

    def table(self) -> str:
        rows = ["clip     STFT_D        ENV_D"]
        rows += [f"{i:4d}  {s:10.5f}  {e:10.5f}" for i, (s, e) in enumerate(zip(self.stft_d, self.env_d))]
        rows.append(f"mean  {self.mean_stft_d:10.5f}  {self.mean_env_d:10.5f}")
        return "\n".join(rows)

    def keyvalues(self) -> str:
        return f"stft_d={self.mean_stft_d!r}\nenv_d={self.mean_env_d!r}\nclips={len(self.stft_d)}"


# -------------------------------------------------------- separation metrics

def _db(num: float, den: float) -> float:
    if num <= 0.0 and den <= 0.0:
        return 0.0
    if den <= 0.0:
        return DB_CAP
    if num <= 0.0:
        return -DB_CAP
    return float(np.clip(10.0 * np.log10(num / den), -DB_CAP, DB_CAP))


def bss_decompose(estimate: np.ndarray, references: np.ndarray, j: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """``(s_target, e_interf, e_artif)`` by least-squares projection onto the references."""
    r = references[j]
    s_target = (estimate @ r) / (r @ r) * r
    coef, *_ = np.linalg.lstsq(references.T, estimate, rcond=None)
    p_all = references.T @ coef
    return s_target, p_all - s_target, estimate - p_all


@dataclass
class SepReport:
    sdr: list[float] = field(default_factory=list)
    sir: list[float] = field(default_factory=list)
    sar: list[float] = field(default_factory=list)

    def extend(self, other: "SepReport") -> None:
        self.sdr += other.sdr
        self.sir += other.sir
        self.sar += other.sar

    @property
    def means(self) -> tuple[float, float, float]:
        return tuple(float(np.mean(v)) if v else float("nan") for v in (self.sdr, self.sir, self.sar))

    def table(self) -> str:
        rows = ["source      SDR       SIR       SAR"]
        rows += [f"{i:6d}  {a:8.3f}  {b:8.3f}  {c:8.3f}" for i, (a, b, c) in enumerate(zip(self.sdr, self.sir, self.sar))]
        rows.append("mean    {:8.3f}  {:8.3f}  {:8.3f}".format(*self.means))
        return "\n".join(rows)

    def keyvalues(self) -> str:
        sdr, sir, sar = self.means
        return f"sdr={sdr!r}\nsir={sir!r}\nsar={sar!r}\nsources={len(self.sdr)}"


def bss_eval(estimates: np.ndarray, references: np.ndarray) -> SepReport:
    """SDR / SIR / SAR in dB (scalar-projection variant, capped at +-100 dB)."""
    est = np.asarray(estimates, dtype=np.float64)
    ref = np.asarray(references, dtype=np.float64)
    if est.shape != ref.shape or est.ndim != 2:
        raise ValueError(f"estimates {est.shape} and references {ref.shape} must both be [n, length]")
    if est.shape[0] != 2:
        raise ValueError("bss_eval expects exactly two sources")
    if np.any(np.sum(ref * ref, axis=1) == 0.0):
        raise ValueError("zero-energy reference")
    rep = SepReport()
    for j in range(est.shape[0]):
        s, e_i, e_a = bss_decompose(est[j], ref, j)
        ss = float(s @ s)
        rep.sdr.append(_db(ss, float((e_i + e_a) @ (e_i + e_a))))
        rep.sir.append(_db(ss, float(e_i @ e_i)))
        rep.sar.append(_db(float((s + e_i) @ (s + e_i)), float(e_a @ e_a)))
    return rep
