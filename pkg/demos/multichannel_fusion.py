"""
Score fusion across microphones
===============================

Four channels observe the same conversation with independent noise.
Averaging their PLDA score matrices before AHC averages the noise away.
"""

import numpy as np

from vbdiar import PipelineModels, SynthConfig, compute_der, diarize_multichannel, synth_multichannel
from vbdiar.synth import default_synth_plda

model = default_synth_plda(16)
models = PipelineModels(model)

print("seed  fused   per-channel")
fused_all, chan_all = [], []
for seed in range(8):
    channels, reference = synth_multichannel(SynthConfig(3, model, loop_p=0.98, n_subsegments=400, seed=seed), 4)
    fused = compute_der(reference, diarize_multichannel(channels, models)).der
    per = [compute_der(reference, diarize_multichannel([c], models)).der for c in channels]
    fused_all.append(fused)
    chan_all.append(np.mean(per))
    print(f"{seed:4d}  {100 * fused:5.2f}%  " + "  ".join(f"{100 * d:5.2f}%" for d in per))
print(f"mean  {100 * np.mean(fused_all):5.2f}%  {100 * np.mean(chan_all):5.2f}% (channel average)")
