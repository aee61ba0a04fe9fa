"""Bayesian HMM clustering of embeddings with variational Bayes inference.

Speakers are HMM states. Each speaker ``s`` has a latent vector
``y_s ~ N(0, I)`` and emits embeddings ``x_t ~ N(m + V y_s, W)``, where
``B = V V^T`` and ``W`` come from an (LDA-projected) PLDA model. The
variational posterior factorises as ``q(Z) prod_s q(y_s)``; ``q(Z)`` is a
Markov chain obtained by forward-backward.

The objective maximised by every iteration is::

    ELBO = fa * E[log p(X | Z, Y)] + E[log p(Z)] - E[log q(Z)]
           - fb * sum_s KL(q(y_s) || N(0, I))

``fa`` (acoustic scaling) tempers the emission likelihoods, ``fb`` (speaker
regularisation) controls how aggressively redundant speakers are dropped
and ``loop_p`` is the probability of staying with the current speaker.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np
from scipy.special import logsumexp, xlogy

from .errors import DiarizationError, DimensionMismatchError
from .plda import PldaModel
from .types_io import Annotation, EmbeddingSet, labels_to_annotation
from .clustering import relabel_by_first_appearance

LOG_2PI = np.log(2.0 * np.pi)


@dataclass(frozen=True)
class VbhmmConfig:
    fa: float = 0.4
    fb: float = 11.0
    loop_p: float = 0.99
    max_iters: int = 40
    elbo_rel_tol: float = 1e-6
    min_occupancy: float = 1.0
    init_smoothing: float = 0.0

    def __post_init__(self):
        if not self.fa > 0:
            raise DiarizationError(f"fa must be positive, got {self.fa}")
        if not self.fb > 0:
            raise DiarizationError(f"fb must be positive, got {self.fb}")
        if not 0.0 < self.loop_p < 1.0:
            raise DiarizationError(f"loop_p must lie in (0, 1), got {self.loop_p}")
        if self.max_iters < 1:
            raise DiarizationError("max_iters must be >= 1")
        if not self.elbo_rel_tol > 0:
            raise DiarizationError("elbo_rel_tol must be positive")
        if not self.min_occupancy > 0:
            raise DiarizationError("min_occupancy must be positive")
        if not 0.0 <= self.init_smoothing < 1.0:
            raise DiarizationError("init_smoothing must lie in [0, 1)")


@dataclass(frozen=True, eq=False)
class SpeakerPosterior:
    mean: np.ndarray
    covariance: np.ndarray

    def kl_to_prior(self) -> float:
        r = self.mean.shape[0]
        logdet = np.linalg.slogdet(self.covariance)[1]
        return 0.5 * float(np.trace(self.covariance) + self.mean @ self.mean - r - logdet)


@dataclass(frozen=True, eq=False)
class VbState:
    """Variational posterior after some number of iterations.

    ``pair_marginals[t, s, s']`` is ``q(z_t = s, z_{t+1} = s')``. When it is
    ``None`` the state describes a frame-wise factorised ``q(Z)`` (this is
    the case right after initialisation and after pruning).
    ``speaker_ids`` records which initial cluster each column came from.
    """

    responsibilities: np.ndarray
    speaker_posteriors: tuple
    speaker_priors: np.ndarray
    elbo_trace: tuple = ()
    pair_marginals: np.ndarray | None = None
    speaker_ids: tuple = ()

    @property
    def n_speakers(self) -> int:
        return self.responsibilities.shape[1]

    @property
    def occupancy(self) -> np.ndarray:
        return self.responsibilities.sum(axis=0)

    def hard_labels(self) -> np.ndarray:
        # argmax picks the lowest index on ties
        return np.argmax(self.responsibilities, axis=1)


class _Emission:
    """Precomputed quantities of the Gaussian emission model."""

    def __init__(self, model: PldaModel, data: EmbeddingSet):
        if data.dim != model.dim:
            raise DimensionMismatchError(f"model dim {model.dim}, data dim {data.dim}")
        evals, evecs = np.linalg.eigh(model.across_class)
        self.v = (evecs * np.sqrt(np.maximum(evals, 0.0))) @ evecs.T
        w_inv = np.linalg.inv(model.within_class)
        self.logdet_w = np.linalg.slogdet(model.within_class)[1]
        self.xc = data.vectors - model.mean
        self.d = model.dim
        self.gram = self.v.T @ w_inv @ self.v                 # V^T W^-1 V
        self.rho = self.xc @ w_inv @ self.v                   # rows V^T W^-1 (x_t - m)
        self.x_quad = np.einsum("ti,ij,tj->t", self.xc, w_inv, self.xc)

    def expected_loglik(self, posteriors) -> np.ndarray:
        """``E_q(y_s)[log N(x_t; m + V y_s, W)]`` as a T x S matrix."""
        cols = []
        for p in posteriors:
            quad = self.x_quad - 2 * self.rho @ p.mean + p.mean @ self.gram @ p.mean
            trace = np.sum(self.gram * p.covariance)
            cols.append(-0.5 * (self.d * LOG_2PI + self.logdet_w + quad + trace))
        return np.stack(cols, axis=1)


def init_from_labels(labels: Sequence[int], smoothing: float = 0.0, latent_dim: int = 1) -> VbState:
    """Smoothed one-hot responsibilities from hard cluster labels.

    Speaker posteriors start at the prior ``N(0, I_latent_dim)`` and the
    speaker priors are uniform.
    """
    labels = relabel_by_first_appearance(labels)
    t = len(labels)
    if t == 0:
        raise DiarizationError("cannot initialise from empty labels")
    if not 0.0 <= smoothing < 1.0:
        raise DiarizationError("smoothing must lie in [0, 1)")
    s = int(labels.max()) + 1
    if s == 1:
        gamma = np.ones((t, 1))
    else:
        gamma = np.full((t, s), smoothing / (s - 1))
        gamma[np.arange(t), labels] = 1.0 - smoothing
    prior = SpeakerPosterior(np.zeros(latent_dim), np.eye(latent_dim))
    return VbState(gamma, tuple([prior] * s), np.full(s, 1.0 / s), (), None, tuple(range(s)))


def update_speaker_posteriors(state: VbState, data: EmbeddingSet, model: PldaModel,
                              cfg: VbhmmConfig) -> VbState:
    """Optimal Gaussian ``q(y_s)`` given the current responsibilities.

    Precision ``I + (fa/fb) n_s V^T W^-1 V``; mean
    ``(fa/fb) cov V^T W^-1 sum_t gamma_ts (x_t - m)``.
    """
    em = _Emission(model, data)
    gamma = state.responsibilities
    if gamma.shape[0] != len(data):
        raise DimensionMismatchError(f"{gamma.shape[0]} responsibility rows, {len(data)} embeddings")
    ratio = cfg.fa / cfg.fb
    r = model.dim
    counts = gamma.sum(axis=0)
    stats = gamma.T @ em.rho
    posteriors = []
    for n_s, f_s in zip(counts, stats):
        cov = np.linalg.inv(np.eye(r) + ratio * n_s * em.gram)
        cov = 0.5 * (cov + cov.T)
        posteriors.append(SpeakerPosterior(ratio * cov @ f_s, cov))
    return replace(state, speaker_posteriors=tuple(posteriors))


def _log_transitions(loop_p: float, pi: np.ndarray) -> np.ndarray:
    s = len(pi)
    a = (1.0 - loop_p) * np.tile(pi, (s, 1)) + loop_p * np.eye(s)
    with np.errstate(divide="ignore"):
        return np.log(a)


def forward_backward(log_emissions: np.ndarray, loop_p: float, pi: np.ndarray):
    """Posterior marginals of an HMM with ``p(s -> s') = loop_p [s = s'] + (1 - loop_p) pi_s'``.

    Returns ``(gamma, xi, log_z)`` with ``gamma`` (T x S) the state
    posteriors, ``xi`` ((T-1) x S x S) the pairwise posteriors and ``log_z``
    the log normaliser.
    """
    le = np.asarray(log_emissions, dtype=np.float64)
    t_len, s = le.shape
    with np.errstate(divide="ignore"):
        log_pi = np.log(pi)
    log_loop = np.log(loop_p)
    log_jump = np.log1p(-loop_p) + log_pi
    la = np.empty_like(le)
    lb = np.zeros_like(le)
    la[0] = log_pi + le[0]
    for t in range(1, t_len):
        la[t] = le[t] + np.logaddexp(log_loop + la[t - 1], log_jump + logsumexp(la[t - 1]))
    for t in range(t_len - 2, -1, -1):
        nxt = le[t + 1] + lb[t + 1]
        lb[t] = np.logaddexp(log_loop + nxt, logsumexp(log_jump + nxt))
    log_z = float(logsumexp(la[-1]))
    gamma = np.exp(la + lb - log_z)
    gamma /= gamma.sum(axis=1, keepdims=True)
    log_a = _log_transitions(loop_p, pi)
    xi = np.exp(la[:-1, :, None] + log_a[None] + (le[1:] + lb[1:])[:, None, :] - log_z)
    if t_len > 1:
        xi /= xi.sum(axis=(1, 2), keepdims=True)
    return gamma, xi, log_z


def _reestimate_priors(gamma, xi, loop_p, pi):
    # expected number of entries into each state: initial state plus
    # "jump" transitions (a self-transition counts as a jump with
    # probability (1-l) pi_s / (l + (1-l) pi_s))
    entries = gamma[0].copy()
    if len(xi):
        into = xi.sum(axis=(0, 1))
        stay = np.einsum("tss->s", xi)
        jump_share = (1.0 - loop_p) * pi / (loop_p + (1.0 - loop_p) * pi)
        entries += into - stay + stay * jump_share
    return entries / entries.sum()


def update_assignments(state: VbState, data: EmbeddingSet, model: PldaModel,
                       cfg: VbhmmConfig) -> VbState:
    """Forward-backward for ``q(Z)`` followed by re-estimation of the priors."""
    em = _Emission(model, data)
    log_emis = cfg.fa * em.expected_loglik(state.speaker_posteriors)
    gamma, xi, _ = forward_backward(log_emis, cfg.loop_p, state.speaker_priors)
    pi = _reestimate_priors(gamma, xi, cfg.loop_p, state.speaker_priors)
    return replace(state, responsibilities=gamma, pair_marginals=xi, speaker_priors=pi)


def compute_elbo(state: VbState, data: EmbeddingSet, model: PldaModel, cfg: VbhmmConfig) -> float:
    em = _Emission(model, data)
    gamma = state.responsibilities
    pi = state.speaker_priors
    a = np.exp(_log_transitions(cfg.loop_p, pi))
    acoustic = float(np.sum(gamma * em.expected_loglik(state.speaker_posteriors)))
    log_pz = float(np.sum(xlogy(gamma[0], pi)))
    xi = state.pair_marginals
    if xi is None:
        pairs = gamma[:-1, :, None] * gamma[1:, None, :]
        log_pz += float(np.sum(xlogy(pairs, a)))
        entropy = -float(np.sum(xlogy(gamma, gamma)))
    else:
        log_pz += float(np.sum(xlogy(xi, a)))
        entropy = -float(np.sum(xlogy(gamma[0], gamma[0])))
        entropy -= float(np.sum(xlogy(xi, xi)) - np.sum(xlogy(gamma[:-1], gamma[:-1])))
    kl = sum(p.kl_to_prior() for p in state.speaker_posteriors)
    return cfg.fa * acoustic + log_pz + entropy - cfg.fb * kl


def prune_speakers(state: VbState, cfg: VbhmmConfig) -> VbState:
    """Drop speakers whose occupancy fell below ``cfg.min_occupancy``.

    At least one speaker (the most occupied) always survives.
    """
    occ = state.occupancy
    keep = occ >= cfg.min_occupancy
    if keep.all():
        return state
    if not keep.any():
        keep[np.argmax(occ)] = True
    idx = np.flatnonzero(keep)
    pi = state.speaker_priors[idx]
    pi = pi / pi.sum() if pi.sum() > 0 else np.full(len(idx), 1.0 / len(idx))
    gamma = state.responsibilities[:, idx]
    totals = gamma.sum(axis=1, keepdims=True)
    empty = totals[:, 0] <= 0
    gamma = np.where(empty[:, None], pi[None, :], gamma / np.where(totals > 0, totals, 1.0))
    return VbState(gamma, tuple(state.speaker_posteriors[i] for i in idx), pi,
                   state.elbo_trace, None, tuple(state.speaker_ids[i] for i in idx))


def vb_inference(data: EmbeddingSet, model: PldaModel, init_labels: Sequence[int],
                 cfg: VbhmmConfig = VbhmmConfig()) -> tuple[Annotation, VbState]:
    """Iterate posterior/assignment updates with ARD pruning until the
    relative ELBO change drops below ``cfg.elbo_rel_tol``.

    Returns the hard-label annotation (speakers ``spk0``, ``spk1``, ...
    numbered by first appearance) and the final state.
    """
    if len(init_labels) != len(data):
        raise DimensionMismatchError(f"{len(init_labels)} initial labels for {len(data)} embeddings")
    state = init_from_labels(init_labels, cfg.init_smoothing, model.dim)
    trace = []
    for _ in range(cfg.max_iters):
        state = update_speaker_posteriors(state, data, model, cfg)
        state = update_assignments(state, data, model, cfg)
        state = prune_speakers(state, cfg)
        trace.append(compute_elbo(state, data, model, cfg))
        state = replace(state, elbo_trace=tuple(trace))
        if len(trace) > 1 and abs(trace[-1] - trace[-2]) < cfg.elbo_rel_tol * abs(trace[-1]):
            break
    labels = relabel_by_first_appearance(state.hard_labels())
    annotation = labels_to_annotation(data.segments, labels, label_names=lambda k: f"spk{k}")
    return annotation, state
