"""
From AHC to VB-HMM resegmentation
=================================

A synthetic three-speaker conversation is clustered twice: once by plain
average-linkage AHC at the calibrated threshold, and once by the Bayesian
HMM initialised from a deliberately over-split AHC. The HMM prunes the
surplus speakers and smooths the boundaries.
"""

import numpy as np

from vbdiar import AhcConfig, SynthConfig, ahc_cluster, compute_der, pairwise_llr, synth_generate, vb_inference
from vbdiar.clustering import threshold_for_n_clusters
from vbdiar.synth import default_synth_plda
from vbdiar.types_io import labels_to_annotation
from vbdiar.vbhmm import VbhmmConfig

model = default_synth_plda(16)
data, reference = synth_generate(SynthConfig(3, model, loop_p=0.98, n_subsegments=400, seed=7))
scores = pairwise_llr(model, data)

# %%
# Plain AHC, stopping when the best average LLR drops below 0
ahc = ahc_cluster(scores, AhcConfig(threshold=0.0))
ahc_hyp = labels_to_annotation(data.segments, ahc, lambda k: f"c{k}")
print(f"AHC: {ahc.max() + 1} clusters, {compute_der(reference, ahc_hyp)}")

# %%
# Over-split to six clusters and let the VB-HMM decide how many survive
init = ahc_cluster(scores, AhcConfig(threshold_for_n_clusters(scores, 6)))
hyp, state = vb_inference(data, model, init, VbhmmConfig(loop_p=0.98))
print(f"VB-HMM: {init.max() + 1} initial clusters -> {state.n_speakers} speakers")
print(f"        {compute_der(reference, hyp)}")
print("ELBO trace:", np.round(state.elbo_trace, 2))
print("surviving initial clusters:", state.speaker_ids)
print("speaker priors:", np.round(state.speaker_priors, 3))

# %%
# fb trades off speaker count against fit: small values keep more speakers
for fb in (0.5, 2.0, 11.0, 50.0):
    _, st = vb_inference(data, model, init, VbhmmConfig(loop_p=0.98, fb=fb))
    print(f"fb={fb:5.1f}: {st.n_speakers} speakers")
