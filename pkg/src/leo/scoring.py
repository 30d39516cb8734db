"""Outlier scoring: cluster-conditioned Mahalanobis distance with a
validation-calibrated threshold, plus the max-softmax comparison score.

Training representations are clustered (raw, unnormalized), each cluster
gets a mean and a shrinkage-regularized inverse covariance, and a sample's
score is its smallest quadratic form over the clusters. A sample counts as
out-of-distribution exactly when its score exceeds the threshold.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .losses import minibatch_kmeans


@dataclass
class ClusterStatistics:
    """Per-cluster moments in scoring space.

    `inverses` holds full (k, dim, dim) inverse covariance matrices, or
    (k, dim) inverse variance rows when diagonal_covariance is set (used
    for the long concatenated representation, where a dense covariance
    would be unworkable).
    """
    means: np.ndarray
    inverses: np.ndarray
    counts: np.ndarray
    eps_used: np.ndarray
    diagonal_covariance: bool = False
    mode: str = "pooled-d"
    notes: list[str] = field(default_factory=list)

    @property
    def k(self) -> int:
        return self.means.shape[0]

    @property
    def dim(self) -> int:
        return self.means.shape[1]


@dataclass
class CalibratedDetector:
    stats: ClusterStatistics
    threshold: float
    quantile: float = 0.95


SCORING_MODES = ("pooled-d", "concat-diagonal")


def scoring_representation(masked_matrix: np.ndarray, true_length: int,
                           mode: str = "pooled-d") -> np.ndarray:
    """Collapse one gated (rows, dim) matrix to the scoring vector.

    pooled-d: mean of the first true_length rows (zero vector when empty).
    concat-diagonal: the full row-major flattened matrix.
    """
    m = np.asarray(masked_matrix, dtype=np.float64)
    if m.ndim != 2:
        raise ValueError("scoring_representation expects a (rows, dim) matrix")
    if mode == "concat-diagonal":
        return m.reshape(-1).copy()
    if mode != "pooled-d":
        raise ValueError(f"unknown scoring mode '{mode}'")
    if true_length <= 0:
        return np.zeros(m.shape[1])
    return m[:true_length].mean(axis=0)


def _invert_spd(cov: np.ndarray, eps: float) -> tuple[np.ndarray, float]:
    """Inverse of cov + eps*I via its triangular factor; on factorization
    failure the shrinkage grows tenfold, at most three times."""
    dim = cov.shape[0]
    attempt = eps
    for _ in range(4):
        try:
            lower = np.linalg.cholesky(cov + attempt * np.eye(dim))
        except np.linalg.LinAlgError:
            attempt *= 10.0
            continue
        lower_inv = np.linalg.inv(lower)
        return lower_inv.T @ lower_inv, attempt
    raise ValueError("covariance could not be regularized to positive definite")


def fit_cluster_statistics(representations: np.ndarray, k: int,
                           rng: np.random.Generator, *,
                           mode: str = "pooled-d",
                           eps_scale: float = 1e-3, eps_floor: float = 1e-6,
                           kmeans_iters: int = 10) -> ClusterStatistics:
    """Cluster the training representations and fit per-cluster moments.

    Covariance is the unbiased sample covariance (zero for singleton
    clusters); shrinkage per cluster is max(eps_scale*trace/dim, eps_floor).
    In concat-diagonal mode only the covariance diagonal is kept (the
    concatenated representation is too wide for a dense matrix).
    Requesting more clusters than points reduces k with a warning.
    """
    reps = np.asarray(representations, dtype=np.float64)
    if reps.ndim != 2 or len(reps) == 0:
        raise ValueError("need a non-empty (n, dim) representation matrix")
    if mode not in SCORING_MODES:
        raise ValueError(f"unknown scoring mode '{mode}'")
    diagonal = mode == "concat-diagonal"
    notes = []
    if k > len(reps):
        notes.append(f"cluster count reduced from {k} to {len(reps)}")
        warnings.warn(notes[-1])
    result = minibatch_kmeans(reps, k, rng, max_iters=kmeans_iters)
    dim = reps.shape[1]
    means = np.zeros((result.k_effective, dim))
    counts = np.zeros(result.k_effective, dtype=np.int64)
    eps_used = np.zeros(result.k_effective)
    inverses = np.zeros((result.k_effective, dim) if diagonal
                        else (result.k_effective, dim, dim))
    for c in range(result.k_effective):
        members = reps[result.labels == c]
        counts[c] = len(members)
        means[c] = members.mean(axis=0)
        if len(members) > 1:
            centered = members - means[c]
            if diagonal:
                var = (centered * centered).sum(axis=0) / (len(members) - 1)
            else:
                cov = centered.T @ centered / (len(members) - 1)
        else:
            var = np.zeros(dim)
            cov = np.zeros((dim, dim))
        if diagonal:
            eps = max(eps_scale * var.sum() / dim, eps_floor)
            inverses[c] = 1.0 / (var + eps)
            eps_used[c] = eps
        else:
            eps = max(eps_scale * np.trace(cov) / dim, eps_floor)
            inverses[c], eps_used[c] = _invert_spd(cov, eps)
    return ClusterStatistics(means=means, inverses=inverses, counts=counts,
                             eps_used=eps_used, diagonal_covariance=diagonal,
                             mode=mode, notes=notes)


def mahalanobis_score(rep: np.ndarray, stats: ClusterStatistics) -> float:
    """Smallest quadratic form (x - mu)' Sigma^-1 (x - mu) over clusters."""
    rep = np.asarray(rep, dtype=np.float64)
    if rep.shape != (stats.dim,):
        raise ValueError(
            f"representation has dimension {rep.shape}, expected ({stats.dim},)")
    return float(mahalanobis_scores(rep[None, :], stats)[0])


def mahalanobis_scores(reps: np.ndarray, stats: ClusterStatistics) -> np.ndarray:
    """Vectorized mahalanobis_score over an (n, dim) block."""
    reps = np.asarray(reps, dtype=np.float64)
    if reps.ndim != 2 or reps.shape[1] != stats.dim:
        raise ValueError(
            f"representations have shape {reps.shape}, expected (n, {stats.dim})")
    per_cluster = np.empty((stats.k, len(reps)))
    for c in range(stats.k):
        diff = reps - stats.means[c]
        if stats.diagonal_covariance:
            per_cluster[c] = (diff * diff * stats.inverses[c]).sum(axis=1)
        else:
            per_cluster[c] = np.einsum("ni,ij,nj->n", diff, stats.inverses[c], diff)
    return per_cluster.min(axis=0)


def calibrate_threshold(scores, quantile: float = 0.95) -> float:
    """Nearest-rank quantile of the validation scores: the ceil(q*n)-th
    smallest value."""
    scores = np.asarray(scores, dtype=np.float64)
    if scores.size == 0:
        raise ValueError("cannot calibrate a threshold from zero scores")
    if not 0.0 < quantile < 1.0:
        raise ValueError("quantile must lie strictly inside (0, 1)")
    if scores.size < 20:
        warnings.warn(f"calibrating on only {scores.size} scores")
    ordered = np.sort(scores)
    rank = int(np.ceil(quantile * scores.size))
    return float(ordered[max(rank, 1) - 1])


def decide(score: float, detector: CalibratedDetector) -> str:
    """"OOD" exactly when the score strictly exceeds the threshold."""
    return "OOD" if score > detector.threshold else "ID"


def msp_score(probs) -> float:
    """1 - max(class probabilities): larger means less confident."""
    return float(1.0 - np.max(np.asarray(probs, dtype=np.float64)))
