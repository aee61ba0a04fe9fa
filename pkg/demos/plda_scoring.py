"""
PLDA training and pairwise scoring
==================================

Train a two-covariance PLDA model on labelled embeddings, then look at how
well its log-likelihood ratios separate same-speaker from
different-speaker pairs.
"""

import numpy as np

from vbdiar import EmbeddingSet, TimedSegment, apply_transform, estimate_transform, pairwise_llr, train_plda_em
from vbdiar.synth import default_synth_plda

rng = np.random.default_rng(0)
truth = default_synth_plda(16)

# 300 training speakers with 8 embeddings each
n_spk, per = 300, 8
y = rng.multivariate_normal(truth.mean, truth.across_class, size=n_spk)
x = np.repeat(y, per, axis=0) + rng.multivariate_normal(np.zeros(16), truth.within_class, size=n_spk * per)
labels = np.repeat(np.arange(n_spk), per)
segments = tuple(TimedSegment("train", 0, 0.25 * i, 1.5) for i in range(len(x)))
train = EmbeddingSet(segments, x)

# center, whiten and length-normalise before PLDA
transform = estimate_transform(train)
train_t = apply_transform(transform, train)
model, loglik = train_plda_em(train_t, labels, iterations=10, return_loglik=True)
print("EM log-likelihood per iteration:")
print(np.round(loglik, 1))

# %%
# Score a held-out set of 20 speakers x 5 embeddings
test_y = rng.multivariate_normal(truth.mean, truth.across_class, size=20)
test_x = np.repeat(test_y, 5, axis=0) + rng.multivariate_normal(np.zeros(16), truth.within_class, size=100)
test = apply_transform(transform, EmbeddingSet(segments[:100], test_x))
scores = pairwise_llr(model, test)

spk = np.repeat(np.arange(20), 5)
upper = np.triu(np.ones_like(scores, dtype=bool), k=1)
same = scores[upper & (spk[:, None] == spk[None, :])]
diff = scores[upper & (spk[:, None] != spk[None, :])]
print(f"same-speaker LLR: mean {same.mean():6.2f}, min {same.min():6.2f}")
print(f"diff-speaker LLR: mean {diff.mean():6.2f}, max {diff.max():6.2f}")
print(f"pairs on the wrong side of 0: {np.sum(same < 0) + np.sum(diff > 0)} of {upper.sum()}")

try:
    import matplotlib.pyplot as plt
except ImportError:
    plt = None
if plt is not None:
    plt.hist(diff, bins=60, alpha=0.6, label="different speakers")
    plt.hist(same, bins=60, alpha=0.6, label="same speaker")
    plt.xlabel("PLDA log-likelihood ratio")
    plt.legend()
    plt.savefig("plda_scores.png", dpi=100)
    print("wrote plda_scores.png")
