"""Walk through the STFT, complex masks and the left/right reconstruction."""
import numpy as np

from sepstereo.dsp import CLIP_SAMPLES, istft, stft
from sepstereo.masking import ComplexMask, apply_mask, difference_spectrum, reconstruct_lr
from sepstereo.synth import Scene, Source, render_scene

# one tone placed near the left edge, 0.63 s at 16 kHz
scene = Scene([Source(x=0.1, y=0.5, timbre="harmonic", f0=440.0, amplitude=0.8)], duration=0.63, seed=7)
ex = render_scene(scene)
left, right = ex.stereo.samples[:, :CLIP_SAMPLES]
mono = ex.mono.samples[0, :CLIP_SAMPLES]
print("left/right RMS", np.sqrt(np.mean(left ** 2)), np.sqrt(np.mean(right ** 2)))

s_l, s_r, s_m = stft(left), stft(right), stft(mono)
print("spectrogram shape", s_m.shape)  # [257, 64]

# the difference spectrum and the mono spectrum determine both channels
s_d = difference_spectrum(s_l, s_r)
rec_l, rec_r = reconstruct_lr(s_m, s_d)
print("max |left - rebuilt left|", np.abs(istft(rec_l, out_len=CLIP_SAMPLES) - left).max())

# a network predicts a complex mask for S_D; the ideal one here is S_D / S_mono
ideal = s_d.to_complex() / (s_m.to_complex() + 1e-8)
mask = ComplexMask.constant(s_m.shape, 0j)
mask.real.data[:], mask.imag.data[:] = ideal.real, ideal.imag
est = apply_mask(s_m, mask)
print("ideal mask error", np.abs(est.to_complex() - s_d.to_complex()).max())
