"""Brute-force reference computations used by the tests.

Nothing here imports the code under test; each oracle recomputes its
quantity from the definition (dense Gaussians, enumeration, quadrature).
"""

import itertools

import numpy as np
from scipy.integrate import trapezoid
from scipy.stats import multivariate_normal


def llr_by_density(mean, across, within, x1, x2):
    """log N([x1;x2]; same-speaker) - log N([x1;x2]; different speakers)."""
    d = len(mean)
    tot = across + within
    same = np.block([[tot, across], [across, tot]])
    diff = np.block([[tot, np.zeros((d, d))], [np.zeros((d, d)), tot]])
    z = np.concatenate([x1, x2])
    mu = np.concatenate([mean, mean])
    return multivariate_normal.logpdf(z, mu, same) - multivariate_normal.logpdf(z, mu, diff)


def plda_loglik_by_density(mean, across, within, groups):
    total = 0.0
    for x in groups:
        n, d = x.shape
        cov = np.kron(np.ones((n, n)), across) + np.kron(np.eye(n), within)
        total += multivariate_normal.logpdf(x.ravel(), np.tile(mean, n), cov)
    return total


def reference_ahc(scores, stop):
    """Average-linkage AHC computed from member lists at every step."""
    n = len(scores)
    clusters = [[i] for i in range(n)]
    while len(clusters) > 1:
        best = None
        for a in range(len(clusters)):
            for b in range(a + 1, len(clusters)):
                sim = np.mean([scores[i][j] for i in clusters[a] for j in clusters[b]])
                key = (min(clusters[a]), min(clusters[b]))
                if best is None or sim > best[0] or (sim == best[0] and key < best[1]):
                    best = (sim, key, a, b)
        sim, _, a, b = best
        if sim < stop:
            break
        clusters[a] = sorted(clusters[a] + clusters[b])
        del clusters[b]
    labels = np.empty(n, dtype=int)
    for c in clusters:
        labels[c] = min(c)
    return labels


def same_partition(a, b):
    a, b = np.asarray(a), np.asarray(b)
    return np.array_equal(a[:, None] == a[None, :], b[:, None] == b[None, :])


def hmm_path_posteriors(log_emis, loop_p, pi):
    """Exact state and pair posteriors by enumerating all S**T paths."""
    t_len, s = log_emis.shape
    trans = loop_p * np.eye(s) + (1 - loop_p) * np.tile(pi, (s, 1))
    gamma = np.zeros((t_len, s))
    xi = np.zeros((max(t_len - 1, 0), s, s))
    weights, paths = [], []
    for path in itertools.product(range(s), repeat=t_len):
        w = np.log(pi[path[0]]) + log_emis[0, path[0]]
        for t in range(1, t_len):
            w += np.log(trans[path[t - 1], path[t]]) + log_emis[t, path[t]]
        weights.append(w)
        paths.append(path)
    weights = np.array(weights)
    log_z = np.logaddexp.reduce(weights)
    probs = np.exp(weights - log_z)
    for p, path in zip(probs, paths):
        for t, k in enumerate(path):
            gamma[t, k] += p
        for t in range(t_len - 1):
            xi[t, path[t], path[t + 1]] += p
    return gamma, xi, log_z


def gauss_hermite_expectation(f, mean, var, order=80):
    """E[f(y)] for y ~ N(mean, var), 1-D."""
    nodes, weights = np.polynomial.hermite_e.hermegauss(order)
    y = mean + np.sqrt(var) * nodes
    return np.sum(weights * f(y)) / np.sqrt(2 * np.pi)


def posterior_by_quadrature(x, gamma, v, w, m, scale, grid=None):
    """Mean/variance of q(y) prop. to N(y; 0, 1) * prod_t N(x_t; m + v y, w)^(scale * gamma_t), 1-D."""
    if grid is None:
        grid = np.linspace(-30, 30, 600001)
    logp = -0.5 * grid ** 2
    for xt, gt in zip(x, gamma):
        logp = logp + scale * gt * (-0.5 * (xt - m - v * grid) ** 2 / w)
    p = np.exp(logp - logp.max())
    p /= trapezoid(p, grid)
    mean = trapezoid(grid * p, grid)
    var = trapezoid((grid - mean) ** 2 * p, grid)
    return mean, var


def elbo_by_enumeration(x, v, w, m, pi, loop_p, fa, fb, path_probs, post_means, post_vars):
    """ELBO for 1-D data, R=1, from explicit path probabilities and 1-D quadrature.

    ``path_probs`` maps each state path (tuple) to q(path).
    """
    s = len(pi)
    trans = loop_p * np.eye(s) + (1 - loop_p) * np.tile(pi, (s, 1))
    # per (t, s) expected emission log-density by quadrature
    ell = np.zeros((len(x), s))
    for k in range(s):
        for t, xt in enumerate(x):
            f = lambda y: -0.5 * np.log(2 * np.pi * w) - 0.5 * (xt - m - v * y) ** 2 / w
            ell[t, k] = gauss_hermite_expectation(f, post_means[k], post_vars[k])
    total = 0.0
    for path, q in path_probs.items():
        if q <= 0:
            continue
        log_pz = np.log(pi[path[0]]) + sum(np.log(trans[a, b]) for a, b in zip(path, path[1:]))
        total += q * (fa * sum(ell[t, k] for t, k in enumerate(path)) + log_pz - np.log(q))
    kl = 0.0
    for mu, var in zip(post_means, post_vars):
        f = lambda y: (-0.5 * np.log(2 * np.pi * var) - 0.5 * (y - mu) ** 2 / var) - (-0.5 * np.log(2 * np.pi) - 0.5 * y ** 2)
        kl += gauss_hermite_expectation(f, mu, var)
    return total - fb * kl


def chain_path_probs(gamma, xi):
    """q(path) of a first-order chain from its state and pair marginals."""
    t_len, s = gamma.shape
    out = {}
    for path in itertools.product(range(s), repeat=t_len):
        p = gamma[0, path[0]]
        for t in range(t_len - 1):
            if gamma[t, path[t]] == 0:
                p = 0.0
                break
            p *= xi[t, path[t], path[t + 1]] / gamma[t, path[t]]
        out[path] = p
    return out


def _partial_injections(keys, targets):
    if not keys:
        yield {}
        return
    head, rest = keys[0], keys[1:]
    for m in _partial_injections(rest, targets):
        yield {head: None, **m}
        used = set(m.values())
        for t in targets:
            if t not in used:
                yield {head: t, **m}


def der_by_enumeration(ref, hyp, grid):
    """DER by sampling a grid fine enough that every boundary is a grid
    point, minimised over every injective partial hyp->ref mapping.

    ``ref``/``hyp`` are lists of (onset, offset, speaker) for one recording.
    """
    cells = list(zip(grid[:-1], grid[1:]))
    ref_spk = sorted({s for _, _, s in ref})
    hyp_spk = sorted({s for _, _, s in hyp})
    frames = []
    for a, b in cells:
        mid = 0.5 * (a + b)
        r = {s for lo, hi, s in ref if lo <= mid < hi}
        h = {s for lo, hi, s in hyp if lo <= mid < hi}
        if r or h:
            frames.append((b - a, r, h))
    total = sum(d * len(r) for d, r, _ in frames)
    best = None
    for mapping in _partial_injections(hyp_spk, ref_spk):
        err = 0.0
        for d, r, h in frames:
            correct = sum(1 for s in h if mapping[s] in r)
            err += d * (max(len(r), len(h)) - correct)
        if best is None or err < best:
            best = err
    return best / total


def nearest_two_speakers(turns, t):
    """The two speakers closest in time to instant ``t`` (ties -> lower label)."""
    dist = {}
    for lo, hi, s in turns:
        d = 0.0 if lo <= t < hi else (lo - t if t < lo else t - hi)
        dist[s] = min(dist.get(s, np.inf), d)
    return sorted(dist, key=lambda s: (dist[s], s))[:2]
