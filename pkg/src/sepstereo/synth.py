"""Synthetic audio-visual scenes: static coloured sources, panned binaural audio.

Each source is drawn as a rectangle whose colour encodes its timbre and whose
brightness encodes its amplitude. Audio is spatialized with constant-power
panning plus an integer interaural delay on the far ear.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dsp import CLIP_SAMPLES, SAMPLE_RATE, AudioClip, Spectrogram, StftConfig, mix, stft
from .masking import difference_spectrum
from .rng import SplitMix64
from .wavio import read_wav, write_wav

TIMBRES = ("sine", "harmonic", "chirp", "bandnoise")
COLORS = {
    "sine": (1.0, 0.0, 0.0),
    "harmonic": (0.0, 1.0, 0.0),
    "chirp": (0.0, 0.0, 1.0),
    "bandnoise": (1.0, 1.0, 0.0),
}
MAX_ITD = 16  # samples, 1 ms at 16 kHz
FRAME_RATE = 10


@dataclass
class Source:
    x: float
    y: float
    timbre: str
    f0: float
    amplitude: float

    def __post_init__(self):
        if not (0.0 <= self.x <= 1.0 and 0.0 <= self.y <= 1.0):
            raise ValueError(f"source position ({self.x}, {self.y}) outside the unit square")
        if self.timbre not in TIMBRES:
            raise ValueError(f"unknown timbre {self.timbre!r}")
        if not 0.0 < self.amplitude <= 1.0:
            raise ValueError(f"amplitude {self.amplitude} outside (0, 1]")


@dataclass
class Scene:
    sources: list[Source]
    duration: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if len(self.sources) > 3:
            raise ValueError("at most 3 sources per scene")

    @property
    def n_samples(self) -> int:
        return int(round(self.duration * SAMPLE_RATE))


@dataclass
class RenderedExample:
    scene: Scene
    frames: np.ndarray  # [T, 3, H_v, W_v]
    stereo: AudioClip
    mono: AudioClip
    solos: np.ndarray = field(default_factory=lambda: np.zeros((0, 0), np.float32))  # [n_sources, n]


# ------------------------------------------------------------------- visuals

def render_visual(scene: Scene, height: int = 32, width: int = 64, n_frames: int = 1) -> np.ndarray:
    """``[n_frames, 3, height, width]`` frames, quantized to 8-bit levels."""
    img = np.zeros((3, height, width), dtype=np.float64)
    half_w, half_h = max(1, width // 16), max(1, height // 8)
    for s in scene.sources:
        cx, cy = s.x * width, s.y * height
        x0, x1 = max(0, int(math.floor(cx - half_w))), min(width, int(math.floor(cx + half_w)))
        y0, y1 = max(0, int(math.floor(cy - half_h))), min(height, int(math.floor(cy + half_h)))
        color = np.array(COLORS[s.timbre])[:, None, None] * s.amplitude
        img[:, y0:y1, x0:x1] = np.maximum(img[:, y0:y1, x0:x1], color)
    img = np.round(img * 255.0) / 255.0
    return np.repeat(img[None], n_frames, axis=0).astype(np.float32)


# --------------------------------------------------------------------- audio

def source_signal(src: Source, n: int, rng: SplitMix64, sample_rate: int = SAMPLE_RATE) -> np.ndarray:
    """Dry mono waveform of one source with peak ``src.amplitude``."""
    t = np.arange(n) / sample_rate
    phase = 2 * np.pi * rng.random()
    if src.timbre == "sine":
        y = np.sin(2 * np.pi * src.f0 * t + phase)
    elif src.timbre == "harmonic":
        y = sum(np.sin(2 * np.pi * k * src.f0 * t + k * phase) / k for k in (1, 2, 3))
    elif src.timbre == "chirp":
        dur = max(n / sample_rate, 1e-9)
        rate = 0.5 * src.f0 / dur
        y = np.sin(2 * np.pi * (src.f0 * t + 0.5 * rate * t * t) + phase)
    else:
        noise = rng.normal(n)
        spec = np.fft.rfft(noise)
        freqs = np.fft.rfftfreq(n, 1.0 / sample_rate)
        spec[(freqs < 0.8 * src.f0) | (freqs > 1.25 * src.f0)] = 0
        y = np.fft.irfft(spec, n)
    peak = np.max(np.abs(y))
    return (src.amplitude * y / peak) if peak > 0 else y


def pan_gains(x: float) -> tuple[float, float]:
    """Constant-power gains ``(cos(x pi/2), sin(x pi/2))``; x=0 is far left."""
    return math.cos(x * math.pi / 2), math.sin(x * math.pi / 2)


def itd_samples(x: float, max_delay: int = MAX_ITD) -> int:
    """Signed delay: negative puts the source left (right ear delayed)."""
    return int(round((x - 0.5) * 2 * max_delay))


def _delay(y: np.ndarray, d: int) -> np.ndarray:
    if d == 0:
        return y
    out = np.zeros_like(y)
    out[d:] = y[: len(y) - d]
    return out


def render_binaural(scene: Scene, normalize: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """``(stereo [2, n], solos [k, n])`` for a scene.

    Channel sums are jointly scaled down when their peak exceeds 1; solos
    (dry per-source signals) share the same scale.
    """
    n = scene.n_samples
    rng = SplitMix64(scene.seed)
    stereo = np.zeros((2, n))
    solos = np.zeros((len(scene.sources), n))
    for i, src in enumerate(scene.sources):
        y = source_signal(src, n, rng)
        g_l, g_r = pan_gains(src.x)
        d = itd_samples(src.x)
        stereo[0] += g_l * _delay(y, max(d, 0))
        stereo[1] += g_r * _delay(y, max(-d, 0))
        solos[i] = y
    if normalize:
        peak = np.max(np.abs(stereo)) if n else 0.0
        if peak > 1.0:
            stereo /= peak
            solos /= peak
    return stereo.astype(np.float32), solos.astype(np.float32)


def render_scene(scene: Scene, height: int = 32, width: int = 64) -> RenderedExample:
    stereo, solos = render_binaural(scene)
    mono = ((stereo[0] + stereo[1]) / 2).astype(np.float32)
    n_frames = max(1, int(math.ceil(scene.duration * FRAME_RATE)))
    return RenderedExample(scene, render_visual(scene, height, width, n_frames), AudioClip(stereo), AudioClip(mono), solos)


def random_source(rng: SplitMix64, x_range=(0.0, 1.0), f0_range=(200.0, 2000.0), timbre: str | None = None) -> Source:
    x, y, f, a = rng.uniform(4)
    if timbre is None:
        timbre = TIMBRES[rng.integers(len(TIMBRES))]
    return Source(
        x=float(x_range[0] + x * (x_range[1] - x_range[0])),
        y=float(0.2 + 0.6 * y),
        timbre=timbre,
        f0=float(f0_range[0] * (f0_range[1] / f0_range[0]) ** f),
        amplitude=float(0.5 + 0.5 * a),
    )


def random_scene(rng: SplitMix64, n_sources: int | None = None, duration: float = 1.0, **source_kw) -> Scene:
    if n_sources is None:
        n_sources = 1 + rng.integers(2)
    seed = int(rng.next_u64(1)[0] >> np.uint64(1))
    return Scene([random_source(rng, **source_kw) for _ in range(n_sources)], duration, seed)


def synth_dataset(n_scenes: int, seed: int, duration: float = 1.0, height: int = 32, width: int = 64,
                  **scene_kw) -> list[RenderedExample]:
    rng = SplitMix64(seed)
    return [render_scene(random_scene(rng, duration=duration, **scene_kw), height, width) for _ in range(n_scenes)]


LOW_BAND = (150.0, 300.0)
HIGH_BAND = (1200.0, 2400.0)


def disjoint_duet(rng: SplitMix64, duration: float = 1.0, height: int = 32, width: int = 64
                  ) -> tuple[RenderedExample, RenderedExample]:
    """Two solo scenes whose sources occupy non-overlapping frequency bands.

    Source A sits in 150-300 Hz (harmonics up to 900 Hz), source B in
    1200-2400 Hz; their timbres (and so their colours) always differ.
    """
    ta = rng.integers(len(TIMBRES))
    tb = (ta + 1 + rng.integers(len(TIMBRES) - 1)) % len(TIMBRES)
    a = random_scene(rng, 1, duration, f0_range=LOW_BAND, timbre=TIMBRES[ta])
    b = random_scene(rng, 1, duration, f0_range=HIGH_BAND, timbre=TIMBRES[tb])
    return render_scene(a, height, width), render_scene(b, height, width)


# ------------------------------------------------------------------ batches

@dataclass
class StereoExample:
    frames: np.ndarray
    mono: np.ndarray
    left: np.ndarray
    right: np.ndarray
    s_mono: Spectrogram
    s_left: Spectrogram
    s_right: Spectrogram
    s_diff: Spectrogram


@dataclass
class SeparationExample:
    frames_a: np.ndarray
    frames_b: np.ndarray
    a: np.ndarray
    b: np.ndarray
    mix: np.ndarray
    s_mix: Spectrogram
    s_a: Spectrogram
    s_b: Spectrogram


def _center_frame(frames: np.ndarray, start: int, length: int, sample_rate: int = SAMPLE_RATE) -> np.ndarray:
    t = (start + length / 2) / sample_rate
    idx = min(len(frames) - 1, int(t * FRAME_RATE))
    return frames[idx : idx + 1]


def _crop_start(rng: SplitMix64, n: int, crop: int) -> int:
    if n < crop:
        raise ValueError(f"clip of {n} samples shorter than the {crop}-sample crop")
    return rng.integers(n - crop + 1)


def stereo_example(ex: RenderedExample, start: int = 0, crop: int = CLIP_SAMPLES,
                   cfg: StftConfig = StftConfig()) -> StereoExample:
    left = ex.stereo.samples[0, start : start + crop]
    right = ex.stereo.samples[1, start : start + crop]
    mono = ex.mono.samples[0, start : start + crop]
    s_l, s_r = stft(left, cfg), stft(right, cfg)
    return StereoExample(_center_frame(ex.frames, start, crop), mono, left, right, stft(mono, cfg), s_l, s_r,
                         difference_spectrum(s_l, s_r))


def sample_stereo_batch(dataset: list[RenderedExample], rng: SplitMix64, batch_size: int = 1,
                        crop: int = CLIP_SAMPLES, cfg: StftConfig = StftConfig()) -> list[StereoExample]:
    """Random scenes, each with a random ``crop``-sample window."""
    if not dataset:
        raise ValueError("empty stereo dataset")
    batch = []
    for _ in range(batch_size):
        ex = dataset[rng.integers(len(dataset))]
        batch.append(stereo_example(ex, _crop_start(rng, len(ex.mono), crop), crop, cfg))
    return batch


def separation_example(ex_a: RenderedExample, ex_b: RenderedExample, start_a: int = 0, start_b: int = 0,
                       gain_a: float = 1.0, gain_b: float = 1.0, crop: int = CLIP_SAMPLES,
                       cfg: StftConfig = StftConfig()) -> SeparationExample:
    a = (gain_a * ex_a.mono.samples[0, start_a : start_a + crop]).astype(np.float32)
    b = (gain_b * ex_b.mono.samples[0, start_b : start_b + crop]).astype(np.float32)
    m = mix(a, b).astype(np.float32)
    return SeparationExample(_center_frame(ex_a.frames, start_a, crop), _center_frame(ex_b.frames, start_b, crop),
                             a, b, m, stft(m, cfg), stft(a, cfg), stft(b, cfg))


def sample_sep_pair(dataset: list[RenderedExample], rng: SplitMix64, amp_range=(0.5, 1.5),
                    crop: int = CLIP_SAMPLES, cfg: StftConfig = StftConfig(),
                    pairs: list[tuple[int, int]] | None = None) -> SeparationExample:
    """Mix two distinct solo clips after random amplitude scaling.

    With ``pairs`` the two clips come from one of the listed index pairs.
    """
    if pairs:
        i, j = pairs[rng.integers(len(pairs))]
    else:
        if len(dataset) < 2:
            raise ValueError("need at least two solo clips for a separation pair")
        i = rng.integers(len(dataset))
        j = rng.integers(len(dataset) - 1)
        j += j >= i
    ga, gb = rng.uniform(2, *amp_range)
    ex_a, ex_b = dataset[i], dataset[j]
    return separation_example(ex_a, ex_b, _crop_start(rng, len(ex_a.mono), crop), _crop_start(rng, len(ex_b.mono), crop),
                              float(ga), float(gb), crop, cfg)


# ------------------------------------------------------------------ on disk

def write_ppm(path: str | Path, frame: np.ndarray) -> None:
    """Binary P6, 8-bit. ``frame`` is ``[3, H, W]`` in [0, 1]."""
    rgb = np.clip(np.round(np.asarray(frame) * 255.0), 0, 255).astype(np.uint8).transpose(1, 2, 0)
    h, w = rgb.shape[:2]
    with open(path, "wb") as fh:
        fh.write(b"P6\n%d %d\n255\n" % (w, h))
        fh.write(rgb.tobytes())


def read_ppm(path: str | Path) -> np.ndarray:
    with open(path, "rb") as fh:
        raw = fh.read()
    tokens: list[bytes] = []
    pos = 0
    while len(tokens) < 4:
        while raw[pos : pos + 1].isspace():
            pos += 1
        if raw[pos : pos + 1] == b"#":
            pos = raw.index(b"\n", pos) + 1
            continue
        end = pos
        while not raw[end : end + 1].isspace():
            end += 1
        tokens.append(raw[pos:end])
        pos = end
    pos += 1  # single whitespace before the raster
    if tokens[0] != b"P6" or tokens[3] != b"255":
        raise ValueError(f"{path}: not an 8-bit binary PPM")
    w, h = int(tokens[1]), int(tokens[2])
    data = np.frombuffer(raw, dtype=np.uint8, count=w * h * 3, offset=pos)
    return (data.reshape(h, w, 3).transpose(2, 0, 1) / 255.0).astype(np.float32)


def read_frames(directory: str | Path) -> np.ndarray:
    paths = sorted(Path(directory).glob("frame_*.ppm"))
    if not paths:
        raise FileNotFoundError(f"no frame_*.ppm files in {directory}")
    return np.stack([read_ppm(p) for p in paths])


def _scene_to_text(scene: Scene) -> str:
    lines = [f"seed={scene.seed}", f"duration={scene.duration!r}", f"n_sources={len(scene.sources)}"]
    for i, s in enumerate(scene.sources):
        lines += [f"source{i}.x={s.x!r}", f"source{i}.y={s.y!r}", f"source{i}.timbre={s.timbre}",
                  f"source{i}.f0={s.f0!r}", f"source{i}.amplitude={s.amplitude!r}"]
    return "\n".join(lines) + "\n"


def _scene_from_text(text: str) -> Scene:
    kv = dict(line.split("=", 1) for line in text.splitlines() if line.strip())
    sources = [
        Source(float(kv[f"source{i}.x"]), float(kv[f"source{i}.y"]), kv[f"source{i}.timbre"],
               float(kv[f"source{i}.f0"]), float(kv[f"source{i}.amplitude"]))
        for i in range(int(kv["n_sources"]))
    ]
    return Scene(sources, float(kv["duration"]), int(kv["seed"]))


def save_dataset(directory: str | Path, examples: list[RenderedExample]) -> None:
    root = Path(directory)
    root.mkdir(parents=True, exist_ok=True)
    for n, ex in enumerate(examples):
        d = root / f"scene_{n:04d}"
        d.mkdir(exist_ok=True)
        write_wav(d / "mono.wav", ex.mono)
        write_wav(d / "stereo.wav", ex.stereo)
        for i, solo in enumerate(ex.solos):
            write_wav(d / f"solo_{i}.wav", solo)
        for i, frame in enumerate(ex.frames):
            write_ppm(d / f"frame_{i:03d}.ppm", frame)
        (d / "scene.txt").write_text(_scene_to_text(ex.scene))


def load_dataset(directory: str | Path) -> list[RenderedExample]:
    root = Path(directory)
    dirs = sorted(p for p in root.glob("scene_*") if p.is_dir())
    if not dirs:
        raise FileNotFoundError(f"no scene_* directories in {root}")
    out = []
    for d in dirs:
        scene = _scene_from_text((d / "scene.txt").read_text())
        solos = [read_wav(d / f"solo_{i}.wav").samples[0] for i in range(len(scene.sources))]
        out.append(RenderedExample(scene, read_frames(d), read_wav(d / "stereo.wav"), read_wav(d / "mono.wav"),
                                   np.stack(solos) if solos else np.zeros((0, 0), np.float32)))
    return out


def solo_subset(dataset: list[RenderedExample]) -> list[RenderedExample]:
    """Single-source scenes, the mono clips used for mix-and-separate."""
    return [ex for ex in dataset if len(ex.scene.sources) == 1]
