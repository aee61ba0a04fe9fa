import itertools

import numpy as np
import pytest
from dataclasses import replace

from oracles import (
    chain_path_probs,
    elbo_by_enumeration,
    hmm_path_posteriors,
    posterior_by_quadrature,
)
from vbdiar.clustering import AhcConfig, ahc_cluster, threshold_for_n_clusters
from vbdiar.errors import DiarizationError, DimensionMismatchError
from vbdiar.metrics import compute_der
from vbdiar.plda import PldaModel, pairwise_llr
from vbdiar.synth import SynthConfig, synth_generate
from vbdiar.types_io import EmbeddingSet, TimedSegment
from vbdiar.vbhmm import (
    SpeakerPosterior,
    VbhmmConfig,
    compute_elbo,
    forward_backward,
    init_from_labels,
    prune_speakers,
    update_assignments,
    update_speaker_posteriors,
    _Emission,
    vb_inference,
)


def embeddings(x):
    x = np.asarray(x, dtype=float).reshape(len(x), -1)
    return EmbeddingSet(tuple(TimedSegment("r", 0, 0.25 * i, 1.5) for i in range(len(x))), x)


def one_d(across=1.0, within=1.0, mean=0.0):
    return PldaModel([mean], [[across]], [[within]])


def synth_model():
    return PldaModel(np.zeros(16), np.diag(np.linspace(3.0, 0.3, 16)), 2.0 * np.eye(16))


class TestInit:
    def test_one_hot(self):
        st = init_from_labels([0, 0, 1, 2])
        np.testing.assert_array_equal(st.responsibilities,
                                      [[1, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]])
        np.testing.assert_array_equal(st.speaker_priors, [1 / 3] * 3)

    def test_smoothing(self):
        st = init_from_labels([1, 0], smoothing=0.2)
        np.testing.assert_allclose(st.responsibilities, [[0.8, 0.2], [0.2, 0.8]])

    def test_rows_sum_to_one(self):
        st = init_from_labels(np.random.default_rng(0).integers(0, 5, 50), smoothing=0.1)
        np.testing.assert_allclose(st.responsibilities.sum(axis=1), 1.0)

    def test_priors_start_at_prior(self):
        st = init_from_labels([0, 1], latent_dim=3)
        assert all(np.array_equal(p.covariance, np.eye(3)) and not p.mean.any() for p in st.speaker_posteriors)
        assert st.speaker_posteriors[0].kl_to_prior() == 0.0

    def test_bad_smoothing(self):
        with pytest.raises(DiarizationError):
            init_from_labels([0, 1], smoothing=1.0)


class TestConfig:
    @pytest.mark.parametrize("kw", [dict(fa=0), dict(fb=-1), dict(loop_p=1.0), dict(loop_p=0.0),
                                    dict(max_iters=0), dict(min_occupancy=0)])
    def test_rejects(self, kw):
        with pytest.raises(DiarizationError):
            VbhmmConfig(**kw)


class TestSpeakerPosterior:
    def test_one_d_example(self):
        # fa = fb = 1, V = W = 1, one frame at x = 2: precision 2, mean 1
        st = init_from_labels([0])
        out = update_speaker_posteriors(st, embeddings([[2.0]]), one_d(), VbhmmConfig(fa=1.0, fb=1.0))
        p = out.speaker_posteriors[0]
        assert p.covariance[0, 0] == pytest.approx(0.5, abs=1e-15)
        assert p.mean[0] == pytest.approx(1.0, abs=1e-15)

    @pytest.mark.parametrize("fa,fb", [(1.0, 1.0), (0.4, 11.0), (2.0, 0.5)])
    def test_matches_quadrature(self, fa, fb):
        rng = np.random.default_rng(3)
        x = rng.normal(1.0, 1.5, 6)
        gamma = rng.uniform(0, 1, 6)
        model = one_d(across=2.25, within=0.8, mean=0.3)
        st = init_from_labels([0] * 6)
        st = replace(st, responsibilities=gamma[:, None])
        out = update_speaker_posteriors(st, embeddings(x), model, VbhmmConfig(fa=fa, fb=fb))
        mean, var = posterior_by_quadrature(x, gamma, 1.5, 0.8, 0.3, fa / fb)
        assert out.speaker_posteriors[0].mean[0] == pytest.approx(mean, abs=1e-7)
        assert out.speaker_posteriors[0].covariance[0, 0] == pytest.approx(var, abs=1e-7)

    def test_zero_occupancy_gives_prior(self):
        st = replace(init_from_labels([0, 0, 1]), responsibilities=np.array([[1.0, 0.0]] * 3))
        out = update_speaker_posteriors(st, embeddings([[1.0], [2.0], [3.0]]), one_d(), VbhmmConfig())
        p = out.speaker_posteriors[1]
        assert p.mean[0] == 0.0 and p.covariance[0, 0] == 1.0

    def test_kl_one_d(self):
        p = SpeakerPosterior(np.array([1.0]), np.array([[0.5]]))
        assert p.kl_to_prior() == pytest.approx(0.5 * (0.5 + 1.0 - 1.0 - np.log(0.5)))


class TestForwardBackward:
    @pytest.mark.parametrize("seed", range(30))
    def test_matches_enumeration(self, seed):
        rng = np.random.default_rng(seed)
        t_len, s = int(rng.integers(1, 9)), int(rng.integers(1, 4))
        le = rng.normal(0, 3, (t_len, s))
        pi = rng.dirichlet(np.ones(s))
        loop_p = float(rng.uniform(0.05, 0.99))
        gamma, xi, log_z = forward_backward(le, loop_p, pi)
        g_ref, xi_ref, z_ref = hmm_path_posteriors(le, loop_p, pi)
        assert np.abs(gamma - g_ref).max() < 1e-8
        assert xi.shape == xi_ref.shape and np.all(np.abs(xi - xi_ref) < 1e-8)
        assert abs(log_z - z_ref) < 1e-8

    def test_long_sequence_stable(self):
        rng = np.random.default_rng(0)
        le = rng.normal(-500, 50, (5000, 4))
        gamma, xi, log_z = forward_backward(le, 0.99, np.full(4, 0.25))
        assert np.all(np.isfinite(gamma)) and np.isfinite(log_z)
        np.testing.assert_allclose(gamma.sum(axis=1), 1.0)
        np.testing.assert_allclose(xi.sum(axis=2), gamma[:-1], atol=1e-10)

    def test_single_state_all_ones(self):
        gamma, _, _ = forward_backward(np.random.default_rng(0).normal(size=(7, 1)), 0.3, np.ones(1))
        np.testing.assert_array_equal(gamma, 1.0)

    def test_separated_blocks(self):
        x = np.r_[np.full(10, -5.0), np.full(10, 5.0)] + np.random.default_rng(1).normal(0, 0.3, 20)
        model = one_d(across=25.0, within=0.25)
        st = init_from_labels(np.arange(20) % 2)
        cfg = VbhmmConfig(fa=1.0, fb=1.0, loop_p=0.9)
        for _ in range(3):
            st = update_assignments(update_speaker_posteriors(st, embeddings(x), model, cfg), embeddings(x), model, cfg)
        labels = st.hard_labels()
        assert len(set(labels[:10])) == 1 and len(set(labels[10:])) == 1 and labels[0] != labels[10]

    def test_uniform_emissions_give_stationary_distribution(self):
        # pi is stationary for loop * I + (1 - loop) * 1 pi^T
        pi = np.array([0.2, 0.5, 0.3])
        gamma, _, _ = forward_backward(np.zeros((6, 3)), 0.7, pi)
        np.testing.assert_allclose(gamma, np.tile(pi, (6, 1)), atol=1e-12)

    def test_zero_prior_state_never_visited(self):
        gamma, _, _ = forward_backward(np.zeros((5, 2)), 0.9, np.array([1.0, 0.0]))
        np.testing.assert_array_equal(gamma[:, 1], 0.0)


class TestElbo:
    def setup_small(self, seed):
        rng = np.random.default_rng(seed)
        x = rng.normal(0, 2, 5)
        model = one_d(across=1.7, within=0.6, mean=0.2)
        cfg = VbhmmConfig(fa=0.7, fb=2.0, loop_p=0.8)
        st = init_from_labels([0, 0, 1, 1, 1])
        st = replace(st, speaker_priors=np.array([0.3, 0.7]))
        st = update_speaker_posteriors(st, embeddings(x), model, cfg)
        return x, model, cfg, st

    @pytest.mark.parametrize("seed", range(5))
    def test_matches_enumeration_after_fb(self, seed):
        x, model, cfg, st = self.setup_small(seed)
        st2 = update_assignments(st, embeddings(x), model, cfg)
        # score with the priors that produced q(Z)
        st2 = replace(st2, speaker_priors=st.speaker_priors)
        got = compute_elbo(st2, embeddings(x), model, cfg)
        v = np.sqrt(1.7)
        ref = elbo_by_enumeration(
            x, v, 0.6, 0.2, st.speaker_priors, cfg.loop_p, cfg.fa, cfg.fb,
            chain_path_probs(st2.responsibilities, st2.pair_marginals),
            [p.mean[0] for p in st2.speaker_posteriors], [p.covariance[0, 0] for p in st2.speaker_posteriors])
        assert got == pytest.approx(ref, abs=1e-8)

    @pytest.mark.parametrize("seed", range(3))
    def test_factorised_q_matches_enumeration(self, seed):
        x, model, cfg, st = self.setup_small(seed)
        rng = np.random.default_rng(seed + 100)
        gamma = rng.dirichlet(np.ones(2), size=5)
        st = replace(st, responsibilities=gamma)
        got = compute_elbo(st, embeddings(x), model, cfg)
        probs = {p: float(np.prod([gamma[t, k] for t, k in enumerate(p)]))
                 for p in itertools.product(range(2), repeat=5)}
        ref = elbo_by_enumeration(
            x, np.sqrt(1.7), 0.6, 0.2, st.speaker_priors, cfg.loop_p, cfg.fa, cfg.fb, probs,
            [p.mean[0] for p in st.speaker_posteriors], [p.covariance[0, 0] for p in st.speaker_posteriors])
        assert got == pytest.approx(ref, abs=1e-8)

    def test_equals_log_normaliser_minus_kl(self):
        rng = np.random.default_rng(4)
        x = embeddings(rng.standard_normal((30, 3)))
        model = PldaModel(np.zeros(3), np.diag([2.0, 1.0, 0.5]), np.eye(3))
        cfg = VbhmmConfig(fa=0.5, fb=3.0, loop_p=0.9)
        st = update_speaker_posteriors(init_from_labels(rng.integers(0, 3, 30), latent_dim=3), x, model, cfg)
        le = cfg.fa * _Emission(model, x).expected_loglik(st.speaker_posteriors)
        _, _, log_z = forward_backward(le, cfg.loop_p, st.speaker_priors)
        st2 = replace(update_assignments(st, x, model, cfg), speaker_priors=st.speaker_priors)
        kl = sum(p.kl_to_prior() for p in st.speaker_posteriors)
        assert compute_elbo(st2, x, model, cfg) == pytest.approx(log_z - cfg.fb * kl, rel=1e-10)

    @pytest.mark.parametrize("seed", range(10))
    def test_each_update_non_decreasing(self, seed):
        rng = np.random.default_rng(seed)
        x = embeddings(rng.standard_normal((60, 4)) * 2)
        model = PldaModel(np.zeros(4), np.diag([3.0, 2.0, 1.0, 0.5]), np.eye(4))
        cfg = VbhmmConfig(fa=0.5, fb=2.0, loop_p=0.9)
        st = init_from_labels(rng.integers(0, 4, 60), latent_dim=4)
        prev = compute_elbo(st, x, model, cfg)
        for _ in range(5):
            for step in (update_speaker_posteriors, update_assignments):
                st = step(st, x, model, cfg)
                cur = compute_elbo(st, x, model, cfg)
                assert cur >= prev - 1e-9 * abs(cur)
                prev = cur


class TestPrune:
    def test_drops_low_occupancy(self):
        gamma = np.array([[0.9, 0.1, 0.0], [0.9, 0.05, 0.05], [0.0, 0.1, 0.9], [0.0, 0.0, 1.0]])
        st = replace(init_from_labels([0, 1, 2, 2]), responsibilities=gamma)
        out = prune_speakers(st, VbhmmConfig(min_occupancy=1.0))
        assert out.n_speakers == 2
        assert out.speaker_ids == (0, 2)
        np.testing.assert_allclose(out.responsibilities.sum(axis=1), 1.0)
        np.testing.assert_allclose(out.speaker_priors.sum(), 1.0)
        assert out.pair_marginals is None

    def test_keeps_most_occupied(self):
        gamma = np.array([[0.6, 0.4], [0.7, 0.3]])
        st = replace(init_from_labels([0, 1]), responsibilities=gamma)
        out = prune_speakers(st, VbhmmConfig(min_occupancy=5.0))
        assert out.n_speakers == 1 and out.speaker_ids == (0,)

    def test_noop_when_all_occupied(self):
        st = init_from_labels([0, 0, 1, 1])
        assert prune_speakers(st, VbhmmConfig()) is st


@pytest.fixture(scope="module")
def synthetic_runs():
    model = synth_model()
    runs = []
    for seed in range(5):
        data, ref = synth_generate(SynthConfig(3, model, loop_p=0.98, n_subsegments=400, seed=seed))
        scores = pairwise_llr(model, data)
        init = ahc_cluster(scores, AhcConfig(threshold_for_n_clusters(scores, 6)))
        ann, state = vb_inference(data, model, init, VbhmmConfig(loop_p=0.98))
        runs.append((ref, ann, state, init))
    return runs


class TestInference:
    def test_elbo_trace_non_decreasing(self, synthetic_runs):
        for _, _, state, _ in synthetic_runs:
            trace = np.array(state.elbo_trace)
            assert np.all(np.diff(trace) >= -1e-8 * np.abs(trace[1:]))

    def test_recovers_three_speakers(self, synthetic_runs):
        for ref, ann, state, init in synthetic_runs:
            assert init.max() + 1 == 6
            assert state.n_speakers == 3
            assert compute_der(ref, ann).der < 0.05

    def test_label_length_mismatch(self):
        with pytest.raises(DimensionMismatchError):
            vb_inference(embeddings(np.zeros((3, 1))), one_d(), [0, 1])

    def test_speaker_count_never_increases(self):
        rng = np.random.default_rng(0)
        model = synth_model()
        data, _ = synth_generate(SynthConfig(2, model, loop_p=0.95, n_subsegments=150, seed=1))
        cfg = VbhmmConfig(loop_p=0.95, fb=20.0)
        st = init_from_labels(rng.integers(0, 8, 150), latent_dim=16)
        counts = [st.n_speakers]
        for _ in range(10):
            st = update_speaker_posteriors(st, data, model, cfg)
            st = prune_speakers(update_assignments(st, data, model, cfg), cfg)
            counts.append(st.n_speakers)
        assert counts == sorted(counts, reverse=True)
        assert counts[-1] < 8

    def test_single_speaker_from_three_clusters(self):
        model = synth_model()
        data, ref = synth_generate(SynthConfig(1, model, n_subsegments=120, seed=2))
        ann, state = vb_inference(data, model, np.arange(120) // 40)
        assert state.n_speakers == 1
        assert compute_der(ref, ann).der == 0.0

    def test_prior_posteriors_have_zero_kl(self):
        st = init_from_labels([0, 1, 1], latent_dim=2)
        assert sum(p.kl_to_prior() for p in st.speaker_posteriors) == 0.0

    def test_single_cluster_init(self):
        model = synth_model()
        data, _ = synth_generate(SynthConfig(1, model, n_subsegments=50, seed=0))
        ann, state = vb_inference(data, model, np.zeros(50, dtype=int))
        assert state.n_speakers == 1
        assert list(ann.speakers) == ["spk0"]

    def test_deterministic(self):
        model = synth_model()
        data, _ = synth_generate(SynthConfig(3, model, loop_p=0.98, n_subsegments=120, seed=9))
        init = np.arange(120) // 20
        a1, s1 = vb_inference(data, model, init)
        a2, s2 = vb_inference(data, model, init)
        assert a1 == a2 and s1.elbo_trace == s2.elbo_trace
