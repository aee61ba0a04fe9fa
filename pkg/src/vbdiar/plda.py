"""Two-covariance PLDA: training, preprocessing, scoring and LDA projection.

The generative model is::

    y_s ~ N(mean, across_class)          speaker variable
    x   ~ N(y_s, within_class)           one embedding of speaker s
"""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.linalg import eigh, cho_factor, cho_solve

from .errors import (
    DimensionMismatchError,
    FormatError,
    NotPositiveDefiniteError,
    RankDeficientError,
    SingleClassError,
    DiarizationError,
)
from .types_io import EmbeddingSet

logger = logging.getLogger(__name__)

VARIANCE_FLOOR = 1e-6
LOG_2PI = np.log(2.0 * np.pi)


def _sym(a):
    return 0.5 * (a + a.T)


def _readonly(a):
    a = np.array(a, dtype=np.float64)
    a.setflags(write=False)
    return a


def _floor_eigenvalues(cov, floor):
    evals, evecs = np.linalg.eigh(_sym(cov))
    if np.any(evals < floor):
        evals = np.maximum(evals, floor)
        cov = (evecs * evals) @ evecs.T
    return _sym(cov)


@dataclass(frozen=True, eq=False)
class PldaModel:
    mean: np.ndarray
    across_class: np.ndarray
    within_class: np.ndarray

    def __post_init__(self):
        m = np.atleast_1d(np.asarray(self.mean, dtype=np.float64))
        b = np.atleast_2d(np.asarray(self.across_class, dtype=np.float64))
        w = np.atleast_2d(np.asarray(self.within_class, dtype=np.float64))
        d = m.shape[0]
        if m.ndim != 1 or b.shape != (d, d) or w.shape != (d, d):
            raise DimensionMismatchError(
                f"inconsistent PLDA shapes: mean {m.shape}, B {b.shape}, W {w.shape}")
        for name, a in (("mean", m), ("across_class", b), ("within_class", w)):
            if not np.all(np.isfinite(a)):
                raise DiarizationError(f"PLDA {name} is not finite")
        scale = max(1.0, np.abs(b).max(), np.abs(w).max())
        if not (np.allclose(b, b.T, atol=1e-10 * scale) and np.allclose(w, w.T, atol=1e-10 * scale)):
            raise DiarizationError("PLDA covariances must be symmetric")
        if np.linalg.eigvalsh(_sym(b)).min() < -1e-9 * scale:
            raise NotPositiveDefiniteError("across-class covariance is not positive semi-definite")
        if np.linalg.eigvalsh(_sym(w)).min() <= 0:
            raise NotPositiveDefiniteError("within-class covariance is not positive definite")
        object.__setattr__(self, "mean", _readonly(m))
        object.__setattr__(self, "across_class", _readonly(b))
        object.__setattr__(self, "within_class", _readonly(w))

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    def loglik(self, groups) -> float:
        """Marginal log-likelihood of a list of per-speaker data matrices."""
        return sum(_speaker_loglik(self, np.atleast_2d(x)) for x in groups)


@dataclass(frozen=True, eq=False)
class WhiteningTransform:
    center: np.ndarray
    whiten: np.ndarray
    apply_length_norm: bool = True
    length_norm_scale: float = 1.0

    def __post_init__(self):
        c = _readonly(np.atleast_1d(self.center))
        w = _readonly(np.atleast_2d(self.whiten))
        if w.shape[1] != c.shape[0]:
            raise DimensionMismatchError(f"whitening matrix {w.shape} vs center {c.shape}")
        if np.linalg.matrix_rank(w) < min(w.shape):
            raise RankDeficientError("whitening matrix is not full rank")
        if not self.length_norm_scale > 0:
            raise DiarizationError("length_norm_scale must be positive")
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "whiten", w)

    @property
    def dim(self) -> int:
        return self.center.shape[0]

    @property
    def out_dim(self) -> int:
        return self.whiten.shape[0]


@dataclass(frozen=True, eq=False)
class Projection:
    matrix: np.ndarray

    def __post_init__(self):
        p = _readonly(np.atleast_2d(self.matrix))
        if p.shape[0] > p.shape[1]:
            raise DimensionMismatchError(f"projection has more rows than columns: {p.shape}")
        if np.linalg.matrix_rank(p) < p.shape[0]:
            raise RankDeficientError("projection rows are linearly dependent")
        object.__setattr__(self, "matrix", p)

    @property
    def out_dim(self) -> int:
        return self.matrix.shape[0]

    @property
    def in_dim(self) -> int:
        return self.matrix.shape[1]

    def apply(self, data: EmbeddingSet) -> EmbeddingSet:
        if data.dim != self.in_dim:
            raise DimensionMismatchError(f"projection expects dim {self.in_dim}, data has {data.dim}")
        return data.with_vectors(data.vectors @ self.matrix.T)


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------

def _speaker_loglik(model: PldaModel, x: np.ndarray) -> float:
    # p(X) = N(xbar; m, B + W/n) * [within-speaker scatter term]
    n, d = x.shape
    w = model.within_class
    xbar = x.mean(axis=0)
    cov = model.across_class + w / n
    diff = xbar - model.mean
    c = cho_factor(cov)
    ll = -0.5 * (d * LOG_2PI + 2 * np.log(np.diag(c[0])).sum() + diff @ cho_solve(c, diff))
    if n > 1:
        cw = cho_factor(w)
        dev = x - xbar
        scatter = np.einsum("ij,ji->", dev, cho_solve(cw, dev.T))
        logdet_w = 2 * np.log(np.diag(cw[0])).sum()
        ll += -0.5 * ((n - 1) * d * LOG_2PI + (n - 1) * logdet_w + d * np.log(n) + scatter)
    return float(ll)


def _group(data: EmbeddingSet, speaker_labels):
    if len(speaker_labels) != len(data):
        raise DimensionMismatchError(f"{len(data)} embeddings but {len(speaker_labels)} labels")
    speakers = list(dict.fromkeys(speaker_labels))
    labels = np.asarray([speakers.index(s) for s in speaker_labels]) if speakers else np.zeros(0, int)
    return [data.vectors[labels == k] for k in range(len(speakers))]


def train_plda_em(data: EmbeddingSet, speaker_labels, iterations: int = 10,
                  return_loglik: bool = False):
    """Fit a two-covariance PLDA model by EM.

    Starts from ``B = W = total_cov / 2`` and the sample mean. If
    ``return_loglik`` is set, also returns the training log-likelihood
    before the first iteration and after each one.
    """
    if iterations < 1:
        raise DiarizationError("iterations must be >= 1")
    groups = _group(data, speaker_labels)
    if len(groups) < 2:
        raise SingleClassError("PLDA training needs at least 2 speakers")
    x = data.vectors
    n_total, d = x.shape
    mean = x.mean(axis=0)
    total = np.cov(x, rowvar=False, bias=True).reshape(d, d)
    floor = VARIANCE_FLOOR * max(np.trace(total), np.finfo(float).tiny) / d
    if n_total - len(groups) < d:
        logger.warning("only %d within-speaker degrees of freedom for dimension %d; "
                       "within-class covariance will be variance-floored", n_total - len(groups), d)
    b = w = _floor_eigenvalues(0.5 * total, floor)
    model = PldaModel(mean, b, w)

    counts = np.array([len(g) for g in groups], dtype=np.float64)
    sums = np.stack([g.sum(axis=0) for g in groups])
    scatter = sum(g.T @ g for g in groups)
    trace = [model.loglik(groups)]
    for _ in range(iterations):
        # both covariances are floored, so the inverses exist
        b_inv = np.linalg.inv(model.across_class)
        w_inv = np.linalg.inv(model.within_class)
        # E-step: posterior of every speaker variable
        post_cov = np.stack([np.linalg.inv(b_inv + n * w_inv) for n in counts])
        rhs = b_inv @ model.mean + sums @ w_inv
        post_mean = np.einsum("sij,sj->si", post_cov, rhs)
        # M-step
        new_mean = post_mean.mean(axis=0)
        dev = post_mean - new_mean
        new_b = (dev.T @ dev + post_cov.sum(axis=0)) / len(groups)
        cross = sums.T @ post_mean
        second = np.einsum("s,si,sj->ij", counts, post_mean, post_mean) + np.einsum("s,sij->ij", counts, post_cov)
        new_w = (scatter - cross - cross.T + second) / n_total
        model = PldaModel(new_mean, _floor_eigenvalues(new_b, floor), _floor_eigenvalues(new_w, floor))
        trace.append(model.loglik(groups))
    if return_loglik:
        return model, trace
    return model


# ---------------------------------------------------------------------------
# Centering / whitening / length normalization
# ---------------------------------------------------------------------------

def estimate_transform(data: EmbeddingSet, use_length_norm: bool = True) -> WhiteningTransform:
    """Centering + eigen-whitening estimated on ``data``.

    The whitening matrix is ``diag(evals)^-1/2 @ evecs.T`` of the (biased)
    sample covariance; eigenvalues below ``1e-6 * trace / D`` are floored.
    """
    x = data.vectors
    n, d = x.shape
    if n < 2:
        raise RankDeficientError(f"need at least 2 vectors to estimate a transform, got {n}")
    if n <= d:
        logger.warning("%d vectors for dimension %d: covariance is rank deficient, flooring", n, d)
    center = x.mean(axis=0)
    cov = np.cov(x, rowvar=False, bias=True).reshape(d, d)
    tr = np.trace(cov)
    if not tr > 0:
        raise RankDeficientError("all vectors are identical; covariance is zero")
    evals, evecs = np.linalg.eigh(_sym(cov))
    evals = np.maximum(evals, VARIANCE_FLOOR * tr / d)
    whiten = evecs.T / np.sqrt(evals)[:, None]
    return WhiteningTransform(center, whiten, use_length_norm, float(np.sqrt(d)))


def length_normalize(x: np.ndarray, scale: float) -> np.ndarray:
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    if np.any(norms == 0):
        raise DiarizationError("zero-norm vector cannot be length-normalized")
    return x * (scale / norms)


def apply_transform(t: WhiteningTransform, data: EmbeddingSet) -> EmbeddingSet:
    if data.dim != t.dim:
        raise DimensionMismatchError(f"transform expects dim {t.dim}, data has {data.dim}")
    y = (data.vectors - t.center) @ t.whiten.T
    if t.apply_length_norm:
        y = length_normalize(y, t.length_norm_scale)
    return data.with_vectors(y)


# ---------------------------------------------------------------------------
# Interpolation, scoring, LDA
# ---------------------------------------------------------------------------

def interpolate_plda(a: PldaModel, b: PldaModel, alpha: float = 0.5) -> PldaModel:
    """Convex combination ``alpha * a + (1 - alpha) * b`` of all parameters."""
    if a.dim != b.dim:
        raise DimensionMismatchError(f"cannot interpolate PLDA of dims {a.dim} and {b.dim}")
    if not 0.0 <= alpha <= 1.0:
        raise DiarizationError(f"alpha must lie in [0, 1], got {alpha}")
    if alpha == 1.0:
        return a
    if alpha == 0.0:
        return b
    # v + alpha (u - v) returns v bit-for-bit when u == v
    mix = lambda u, v: v + alpha * (u - v)
    return PldaModel(mix(a.mean, b.mean), mix(a.across_class, b.across_class),
                     mix(a.within_class, b.within_class))


def _llr_params(model: PldaModel):
    d = model.dim
    b, w = model.across_class, model.within_class
    try:
        np.linalg.cholesky(w)
    except np.linalg.LinAlgError:
        raise NotPositiveDefiniteError("within-class covariance is not positive definite") from None
    tot = b + w
    same = np.block([[tot, b], [b, tot]])
    same_inv = np.linalg.inv(same)
    tot_inv = np.linalg.inv(tot)
    diag_blk = same_inv[:d, :d]
    off_blk = same_inv[:d, d:]
    q = tot_inv - diag_blk
    p = -off_blk
    const = -0.5 * (np.linalg.slogdet(same)[1] - 2 * np.linalg.slogdet(tot)[1])
    return _sym(q), _sym(p), const


def pairwise_llr(model: PldaModel, data: EmbeddingSet) -> np.ndarray:
    """Same-vs-different speaker log-likelihood ratio for every pair.

    Returns an N x N symmetric matrix; the diagonal holds llr(x_i, x_i).
    """
    x = data.vectors if isinstance(data, EmbeddingSet) else np.atleast_2d(np.asarray(data, dtype=float))
    if x.shape[1] != model.dim:
        raise DimensionMismatchError(f"PLDA dim {model.dim}, data dim {x.shape[1]}")
    q, p, const = _llr_params(model)
    xc = x - model.mean
    half_q = 0.5 * np.einsum("ij,jk,ik->i", xc, q, xc)
    scores = xc @ p @ xc.T + half_q[:, None] + half_q[None, :] + const
    return _sym(scores)


def lda_from_plda(model: PldaModel, out_dim: int) -> Projection:
    """Top ``out_dim`` generalized eigenvectors of (B, W), W-normalized."""
    d = model.dim
    if not 1 <= out_dim <= d:
        raise DimensionMismatchError(f"out_dim must be in [1, {d}], got {out_dim}")
    try:
        evals, evecs = eigh(model.across_class, model.within_class)
    except np.linalg.LinAlgError:
        raise NotPositiveDefiniteError("within-class covariance is singular") from None
    order = np.argsort(-evals, kind="stable")[:out_dim]
    return Projection(evecs[:, order].T)


def lda_eigenvalues(model: PldaModel, p: Projection) -> np.ndarray:
    return np.diag(p.matrix @ model.across_class @ p.matrix.T).copy()


def project_model(model: PldaModel, p: Projection) -> PldaModel:
    if p.in_dim != model.dim:
        raise DimensionMismatchError(f"projection expects dim {p.in_dim}, model has {model.dim}")
    m = p.matrix
    return PldaModel(m @ model.mean, _sym(m @ model.across_class @ m.T),
                     _sym(m @ model.within_class @ m.T))


# ---------------------------------------------------------------------------
# Binary model files
# ---------------------------------------------------------------------------

def _f64(a):
    return np.ascontiguousarray(a, dtype="<f8").tobytes()


def _read_f64(data, offset, count, path):
    end = offset + 8 * count
    if len(data) < end:
        raise FormatError(f"{path}: truncated file")
    return np.frombuffer(data, dtype="<f8", offset=offset, count=count).astype(np.float64), end


def _check_magic(data, magic, path):
    if data[:4] != magic:
        raise FormatError(f"{path}: expected magic {magic!r}, found {data[:4]!r}")


def save_plda(model: PldaModel, path) -> None:
    d = model.dim
    with open(path, "wb") as f:
        f.write(b"PLD1" + struct.pack("<I", d))
        f.write(_f64(model.mean) + _f64(model.across_class) + _f64(model.within_class))


def load_plda(path) -> PldaModel:
    data = Path(path).read_bytes()
    _check_magic(data, b"PLD1", path)
    (d,) = struct.unpack("<I", data[4:8])
    m, off = _read_f64(data, 8, d, path)
    b, off = _read_f64(data, off, d * d, path)
    w, off = _read_f64(data, off, d * d, path)
    if off != len(data):
        raise FormatError(f"{path}: {len(data) - off} trailing bytes")
    return PldaModel(m, b.reshape(d, d), w.reshape(d, d))


def save_transform(t: WhiteningTransform, path) -> None:
    """``WHT1``, u32 out_dim, u32 D, u32 length-norm flag, f64 scale,
    then center (D) and whitening matrix (out_dim x D)."""
    r, d = t.whiten.shape
    with open(path, "wb") as f:
        f.write(b"WHT1" + struct.pack("<III", r, d, int(t.apply_length_norm)))
        f.write(_f64([t.length_norm_scale]) + _f64(t.center) + _f64(t.whiten))


def load_transform(path) -> WhiteningTransform:
    data = Path(path).read_bytes()
    _check_magic(data, b"WHT1", path)
    r, d, flag = struct.unpack("<III", data[4:16])
    scale, off = _read_f64(data, 16, 1, path)
    c, off = _read_f64(data, off, d, path)
    w, off = _read_f64(data, off, r * d, path)
    if off != len(data):
        raise FormatError(f"{path}: {len(data) - off} trailing bytes")
    return WhiteningTransform(c, w.reshape(r, d), bool(flag), float(scale[0]))


def save_projection(p: Projection, path) -> None:
    r, d = p.matrix.shape
    with open(path, "wb") as f:
        f.write(b"LDA1" + struct.pack("<II", r, d) + _f64(p.matrix))


def load_projection(path) -> Projection:
    data = Path(path).read_bytes()
    _check_magic(data, b"LDA1", path)
    r, d = struct.unpack("<II", data[4:12])
    m, off = _read_f64(data, 12, r * d, path)
    if off != len(data):
        raise FormatError(f"{path}: {len(data) - off} trailing bytes")
    return Projection(m.reshape(r, d))
