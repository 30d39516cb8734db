"""Independent reference implementations used as test oracles.

Everything here is deliberately written the dumb, obvious way (explicit
loops, scalar math) and shares no code with the package, so agreement is
meaningful.
"""
from __future__ import annotations

import math

import numpy as np


def adam_reference_trace(grads, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8, x0=0.0):
    """Scalar Adam run as plain float arithmetic; returns parameter values
    after each step."""
    m = 0.0
    v = 0.0
    x = x0
    out = []
    for t, g in enumerate(grads, start=1):
        m = beta1 * m + (1 - beta1) * g
        v = beta2 * v + (1 - beta2) * g * g
        m_hat = m / (1 - beta1 ** t)
        v_hat = v / (1 - beta2 ** t)
        x = x - lr * m_hat / (math.sqrt(v_hat) + eps)
        out.append(x)
    return out


def central_difference(f, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Plain two-point central differences of a scalar function of x."""
    x = x.astype(np.float64).copy()
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        up = f(x)
        flat[i] = orig - h
        down = f(x)
        flat[i] = orig
        gflat[i] = (up - down) / (2 * h)
    return grad


def brute_auroc(id_scores, ood_scores) -> float:
    """Pairwise count, ties worth one half; positives are the OOD scores."""
    wins = 0.0
    for o in ood_scores:
        for i in id_scores:
            if o > i:
                wins += 1.0
            elif o == i:
                wins += 0.5
    return wins / (len(id_scores) * len(ood_scores))


def brute_aupr(id_scores, ood_scores) -> float:
    """Average precision over the OOD-positive ranking, recomputing the
    confusion counts from scratch at every distinct threshold (descending),
    ties grouped into one step."""
    thresholds = sorted(set(list(id_scores) + list(ood_scores)), reverse=True)
    ap = 0.0
    prev_recall = 0.0
    n_pos = len(ood_scores)
    for t in thresholds:
        tp = sum(1 for s in ood_scores if s >= t)
        fp = sum(1 for s in id_scores if s >= t)
        precision = tp / (tp + fp)
        recall = tp / n_pos
        ap += (recall - prev_recall) * precision
        prev_recall = recall
    return ap


def brute_fpr_at_tpr(id_scores, ood_scores, tpr=0.95) -> float:
    """Nearest-rank threshold by explicit enumeration, then a literal count."""
    ordered = sorted(id_scores)
    rank = math.ceil(tpr * len(ordered))  # 1-indexed
    threshold = ordered[rank - 1]
    return sum(1 for s in ood_scores if s <= threshold) / len(ood_scores)


def hand_cosine(u, v) -> float:
    num = sum(a * b for a, b in zip(u, v))
    nu = math.sqrt(sum(a * a for a in u))
    nv = math.sqrt(sum(b * b for b in v))
    if nu < 1e-12 or nv < 1e-12:
        return 0.0
    return num / (nu * nv)


def direct_contrastive_loss(reps, labels, cluster_of, temperature) -> float:
    """Literal evaluation of the cluster-pulling loss: sum over vulnerable
    anchors with at least one same-cluster peer of the mean over peers of
    -log(exp(sim/t) / sum over all others of exp(sim/t)).

    reps: list of vectors, labels: 0/1 list, cluster_of: dict index->cluster
    for the vulnerable indices only.
    """
    m = len(reps)
    total = 0.0
    for i in range(m):
        if labels[i] != 1:
            continue
        peers = [c for c in range(m)
                 if c != i and labels[c] == 1 and cluster_of.get(c) == cluster_of.get(i)]
        if not peers:
            continue
        denom = 0.0
        for a in range(m):
            if a == i:
                continue
            denom += math.exp(hand_cosine(reps[i], reps[a]) / temperature)
        inner = 0.0
        for c in peers:
            inner += math.log(math.exp(hand_cosine(reps[i], reps[c]) / temperature) / denom)
        total += -inner / len(peers)
    return total


def lloyd_reference(points: np.ndarray, centroids: np.ndarray, iters: int = 100):
    """Plain Lloyd iteration from the given starting centroids."""
    centroids = centroids.astype(np.float64).copy()
    labels = np.zeros(len(points), dtype=int)
    for _ in range(iters):
        dists = ((points[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
        new_labels = dists.argmin(axis=1)
        if np.array_equal(new_labels, labels) and _ > 0:
            break
        labels = new_labels
        for k in range(len(centroids)):
            members = points[labels == k]
            if len(members):
                centroids[k] = members.mean(axis=0)
    inertia = sum(((points[i] - centroids[labels[i]]) ** 2).sum() for i in range(len(points)))
    return labels, centroids, float(inertia)


def dense_mahalanobis(x: np.ndarray, points: np.ndarray, labels: np.ndarray,
                      eps_rule=None) -> float:
    """Min-over-clusters quadratic form computed from raw points via
    np.linalg.solve; never touches stored inverses."""
    best = math.inf
    for k in sorted(set(labels.tolist())):
        members = points[labels == k]
        mu = members.mean(axis=0)
        if len(members) > 1:
            centered = members - mu
            cov = centered.T @ centered / (len(members) - 1)
        else:
            cov = np.zeros((points.shape[1], points.shape[1]))
        if eps_rule is None:
            eps = max(1e-3 * np.trace(cov) / cov.shape[0], 1e-6)
        else:
            eps = eps_rule
        diff = x - mu
        score = float(diff @ np.linalg.solve(cov + eps * np.eye(len(cov)), diff))
        best = min(best, score)
    return best


def sample_mean_cov(points: np.ndarray):
    """Unbiased moments from first principles (einsum, no np.cov/np.mean on
    the covariance path)."""
    n = len(points)
    mu = points.sum(axis=0) / n
    centered = points - mu
    cov = np.einsum("ni,nj->ij", centered, centered) / (n - 1)
    return mu, cov


def exhaustive_mask_expectation(ce_of_mask, n_statements: int) -> float:
    """Expectation of a loss over all 2^n hard on/off statement masks with
    independent fair coins."""
    total = 0.0
    for bits in range(2 ** n_statements):
        mask = [(bits >> i) & 1 for i in range(n_statements)]
        total += ce_of_mask(mask)
    return total / (2 ** n_statements)


def nearest_rank(scores, quantile) -> float:
    ordered = sorted(scores)
    rank = math.ceil(quantile * len(ordered))
    return ordered[max(rank, 1) - 1]
