"""Overfit the toy model on a handful of synthetic scenes, then binauralize."""
import time

import numpy as np

from sepstereo.learning import Trainer, TrainConfig
from sepstereo.metrics import StereoReport, sliding_inference
from sepstereo.model import SepStereoModel
from sepstereo.synth import synth_dataset

data = synth_dataset(8, seed=11, duration=0.63)
for ex in data:
    print("scene", [(round(s.x, 2), s.timbre) for s in ex.scene.sources])

model = SepStereoModel(seed=0)
print("parameters", sum(p.data.size for p in model.params.values()))

trainer = Trainer(model, TrainConfig(lr=5e-4, batch=1, seed=1), stereo_data=data, task="stereo")
t0 = time.perf_counter()
trainer.train(400, lambda r: print(r.line()) if r.step % 100 == 0 else None)
print(f"{trainer.step} steps in {time.perf_counter() - t0:.0f}s")

# copy-mono is the mask == 1 baseline
base, ours = StereoReport(), StereoReport()
for ex in data:
    truth = ex.stereo.samples
    base.add(np.stack([ex.mono.samples[0]] * 2), truth)
    ours.add(sliding_inference(model, ex.mono.samples[0], ex.frames), truth)
print("copy-mono", base.keyvalues())
print("trained  ", ours.keyvalues())
