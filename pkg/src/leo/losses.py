"""Loss terms for the two-step training scheme.

Step one trains the classifier (and encoder) against random statement
dropout: each statement survives with probability one half through a
relaxed Bernoulli mask that is a constant in the graph, so the selector
never receives gradient from it. Step two trains everything jointly:
cross-entropy through sampled selector gates plus a weighted contrastive
term that pulls vulnerable samples toward the members of their own
per-batch k-means cluster and away from everything else.

Cluster assignments are recomputed from the current masked representations
every batch and treated as constants by the gradient.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import GraphError, Tensor
from .optim import ParameterStore, init_mlp_params
from .selector import (
    SelectorParams,
    apply_mask,
    pad_gate,
    relax_bernoulli,
    relax_gates,
    sample_gumbel,
    selector_presigmoid,
)

_PROB_FLOOR = 1e-12
_NORM_GUARD = 1e-24


@dataclass
class ClassifierParams:
    """Two hidden layers on the flattened masked matrix, two-way softmax."""
    layers: list[tuple[Tensor, Tensor]]
    head: tuple[Tensor, Tensor]
    dropout_retain: float

    def tensors(self) -> dict[str, Tensor]:
        out = {}
        for i, (w, b) in enumerate(self.layers):
            out[f"classifier/w{i}"] = w
            out[f"classifier/b{i}"] = b
        out["classifier/head_w"], out["classifier/head_b"] = self.head
        return out


def init_classifier_params(store: ParameterStore, input_dim: int,
                           rng: np.random.Generator,
                           hidden_sizes=(300, 100),
                           dropout_retain: float = 0.8) -> ClassifierParams:
    if not 0.0 < dropout_retain <= 1.0:
        raise GraphError(f"dropout retain probability {dropout_retain} outside (0, 1]")
    layers, head = init_mlp_params(store, "classifier", "classifier",
                                   input_dim, hidden_sizes, 2, rng)
    return ClassifierParams(layers=layers, head=head, dropout_retain=dropout_retain)


def classifier_forward(x: Tensor, params: ClassifierParams,
                       train_flag: bool = False,
                       rng: np.random.Generator | None = None) -> Tensor:
    """Class probabilities: (n, features) -> (n, 2), or a single flattened
    sample (features,) -> (2,)."""
    single = x.data.ndim == 1
    h = ad.reshape(x, (1, x.data.shape[0])) if single else x
    for w, b in params.layers:
        h = ad.relu(ad.add(ad.matmul(h, w), b))
        if train_flag:
            if rng is None:
                raise GraphError("train-mode forward needs a dropout rng")
            h = ad.dropout(h, params.dropout_retain, rng, train=True)
    w, b = params.head
    probs = ad.softmax(ad.add(ad.matmul(h, w), b), axis=-1)
    return ad.reshape(probs, (2,)) if single else probs


# ---------------------------------------------------------------------------
# cross-entropy


def _check_labels(labels: np.ndarray) -> None:
    if labels.size and not np.isin(labels, (0, 1)).all():
        raise GraphError("labels must be 0 or 1")


def cross_entropy(probs: Tensor, label: int) -> Tensor:
    """-log p[label] with the probability clamped to [1e-12, 1]."""
    if label not in (0, 1):
        raise GraphError(f"label must be 0 or 1, got {label!r}")
    if probs.data.shape != (2,):
        raise GraphError("cross_entropy expects a 2-probability vector")
    onehot = np.zeros(2)
    onehot[label] = 1.0
    clamped = ad.minimum_const(ad.maximum_const(probs, _PROB_FLOOR), 1.0)
    picked = ad.reduce_sum(ad.mul(clamped, ad.constant(onehot)))
    return ad.neg(ad.log(picked))


def batch_cross_entropy(probs: Tensor, labels) -> Tensor:
    """Mean of per-sample cross-entropy over an (n, 2) probability block."""
    labels = np.asarray(labels, dtype=np.int64)
    _check_labels(labels)
    n = probs.data.shape[0]
    if probs.data.ndim != 2 or probs.data.shape[1] != 2 or labels.shape != (n,):
        raise GraphError("batch_cross_entropy expects (n, 2) probs and n labels")
    onehot = np.zeros((n, 2))
    onehot[np.arange(n), labels] = 1.0
    clamped = ad.minimum_const(ad.maximum_const(probs, _PROB_FLOOR), 1.0)
    picked = ad.sum_axis(ad.mul(clamped, ad.constant(onehot)), axis=1)
    return ad.reduce_mean(ad.neg(ad.log(picked)))


# ---------------------------------------------------------------------------
# step one: classifier under random statement dropout


def data_distribution_loss(x: Tensor, true_lengths, labels,
                           params: ClassifierParams, *, relax_temp: float,
                           rng: np.random.Generator | None,
                           train_flag: bool = False,
                           dropout_rng: np.random.Generator | None = None,
                           mask_override: np.ndarray | None = None) -> Tensor:
    """Mean cross-entropy of the classifier on randomly masked functions.

    Each real statement is kept through a soft coin flip (keep probability
    one half, relaxed at `relax_temp`); padded rows are forced to zero. The
    mask is a graph constant: gradient reaches the classifier and whatever
    produced x, never the selector. `mask_override` substitutes an explicit
    (batch, rows) mask for the random draw.
    """
    b, rows, _ = x.data.shape
    lengths = np.asarray(true_lengths, dtype=np.int64)
    if mask_override is None:
        if rng is None:
            raise GraphError("data_distribution_loss needs an rng for its mask")
        noise_a = sample_gumbel((b, rows), rng)
        noise_b = sample_gumbel((b, rows), rng)
        r = relax_bernoulli(np.full((b, rows), 0.5), noise_a, noise_b, relax_temp)
    else:
        r = np.asarray(mask_override, dtype=np.float64)
        if r.shape != (b, rows):
            raise GraphError("mask_override shape must be (batch, rows)")
    r = r * (np.arange(rows)[None, :] < lengths[:, None])
    masked = ad.mul(x, ad.constant(r[:, :, None], name="distribution_mask"))
    flat = ad.reshape(masked, (b, rows * x.data.shape[2]))
    probs = classifier_forward(flat, params, train_flag, dropout_rng)
    return batch_cross_entropy(probs, labels)


# ---------------------------------------------------------------------------
# per-batch k-means


@dataclass
class KMeansResult:
    labels: np.ndarray        # (n,) cluster index per point
    centroids: np.ndarray     # (k_effective, dim)
    inertia: float
    inertia_history: list[float]
    k_effective: int


def _nearest(points: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    d2 = ((points[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
    return d2.argmin(axis=1)


def _inertia(points: np.ndarray, centroids: np.ndarray, labels: np.ndarray) -> float:
    return float(((points - centroids[labels]) ** 2).sum())


def _seed_centroids(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """Greedy distance-squared seeding."""
    n = len(points)
    chosen = [int(rng.integers(n))]
    d2 = ((points - points[chosen[0]]) ** 2).sum(axis=1)
    for _ in range(1, k):
        total = d2.sum()
        if total > 0:
            idx = int(rng.choice(n, p=d2 / total))
        else:
            idx = int(rng.integers(n))
        chosen.append(idx)
        d2 = np.minimum(d2, ((points - points[idx]) ** 2).sum(axis=1))
    return points[chosen].astype(np.float64).copy()


def _refill_empty(points: np.ndarray, centroids: np.ndarray,
                  labels: np.ndarray, k: int) -> np.ndarray:
    """Give every empty cluster the farthest point whose own cluster keeps
    at least one member; ties break toward the lowest point index."""
    labels = labels.copy()
    while True:
        counts = np.bincount(labels, minlength=k)
        empty = np.flatnonzero(counts == 0)
        if empty.size == 0:
            return labels
        target = int(empty[0])
        d2 = ((points - centroids[labels]) ** 2).sum(axis=1)
        movable = counts[labels] >= 2
        far = int(np.argmax(np.where(movable, d2, -np.inf)))
        labels[far] = target
        centroids[target] = points[far]


def minibatch_kmeans(points: np.ndarray, k: int, rng: np.random.Generator,
                     max_iters: int = 10) -> KMeansResult:
    """Lloyd's algorithm with distance-squared seeding.

    The effective cluster count is min(k, len(points)); empty clusters are
    refilled so every retained cluster keeps at least one member. Stops
    after max_iters update rounds or when the assignment stabilizes.
    """
    if k < 1:
        raise GraphError("cluster count must be at least 1")
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2:
        raise GraphError("k-means expects an (n, dim) point matrix")
    n = len(points)
    if n == 0:
        return KMeansResult(np.zeros(0, dtype=np.int64),
                            np.zeros((0, points.shape[1])), 0.0, [], 0)
    k_eff = min(k, n)
    centroids = _seed_centroids(points, k_eff, rng)
    labels = _refill_empty(points, centroids, _nearest(points, centroids), k_eff)
    history = [_inertia(points, centroids, labels)]
    for _ in range(max_iters):
        centroids = np.stack([points[labels == c].mean(axis=0) for c in range(k_eff)])
        new_labels = _refill_empty(points, centroids, _nearest(points, centroids), k_eff)
        history.append(_inertia(points, centroids, new_labels))
        if np.array_equal(new_labels, labels):
            break
        labels = new_labels
    return KMeansResult(labels.astype(np.int64), centroids, history[-1],
                        history, k_eff)


# ---------------------------------------------------------------------------
# similarity helpers


def flatten_representation(masked: Tensor) -> Tensor:
    """Row-major flatten of one (rows, dim) masked matrix."""
    rows, dim = masked.data.shape
    return ad.reshape(masked, (rows * dim,))


def cosine_similarity(u, v) -> float:
    """Plain cosine; either vector with norm below 1e-12 gives 0."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    nu = float(np.sqrt((u * u).sum()))
    nv = float(np.sqrt((v * v).sum()))
    if nu < 1e-12 or nv < 1e-12:
        return 0.0
    return float(u @ v) / (nu * nv)


def unit_rows(x: np.ndarray) -> np.ndarray:
    """L2-normalize rows; all-zero rows stay zero."""
    norms = np.sqrt((x * x).sum(axis=1, keepdims=True))
    return np.divide(x, norms, out=np.zeros_like(x), where=norms > 1e-12)


# ---------------------------------------------------------------------------
# cluster assignment and the contrastive term


@dataclass
class ClusterAssignment:
    """Cluster index per batch element; -1 marks the non-vulnerable."""
    cluster_of: np.ndarray
    centroids: np.ndarray
    k_effective: int


def assign_clusters(flat_reps: np.ndarray, labels, k: int,
                    rng: np.random.Generator, variant: str = "cluster",
                    max_iters: int = 10) -> ClusterAssignment:
    """Cluster the vulnerable samples of a batch on their L2-normalized
    flattened representations. The "supervised-class" variant skips
    clustering and puts every vulnerable sample in one group.
    """
    labels = np.asarray(labels, dtype=np.int64)
    _check_labels(labels)
    flat_reps = np.asarray(flat_reps, dtype=np.float64)
    cluster_of = np.full(labels.shape[0], -1, dtype=np.int64)
    vulnerable = np.flatnonzero(labels == 1)
    if vulnerable.size == 0:
        return ClusterAssignment(cluster_of, np.zeros((0, flat_reps.shape[1])), 0)
    normalized = unit_rows(flat_reps[vulnerable])
    if variant == "supervised-class":
        cluster_of[vulnerable] = 0
        return ClusterAssignment(cluster_of, normalized.mean(axis=0, keepdims=True), 1)
    if variant != "cluster":
        raise GraphError(f"unknown contrastive variant '{variant}'")
    result = minibatch_kmeans(normalized, k, rng, max_iters)
    cluster_of[vulnerable] = result.labels
    return ClusterAssignment(cluster_of, result.centroids, result.k_effective)


def cluster_contrastive_loss(masked: Tensor, labels, cluster_of: np.ndarray,
                             temperature: float) -> Tensor:
    """Pull each vulnerable sample toward its same-cluster peers.

    For each anchor i (vulnerable, with at least one same-cluster
    vulnerable peer), average over peers c of
    -log( exp(sim(i,c)/t) / sum over all others a of exp(sim(i,a)/t) ),
    then sum over anchors. Similarity is cosine on the flattened masked
    matrices. Anchors without peers contribute zero; a batch of one has no
    pairs and scores zero.
    """
    if temperature <= 0:
        raise GraphError("contrastive temperature must be positive")
    labels = np.asarray(labels, dtype=np.int64)
    cluster_of = np.asarray(cluster_of, dtype=np.int64)
    n = masked.data.shape[0]
    if n < 2:
        return ad.constant(0.0, name="contrastive_empty")
    peer_weight = np.zeros((n, n))
    anchor = np.zeros(n)
    for i in range(n):
        if labels[i] != 1 or cluster_of[i] < 0:
            continue
        peers = np.flatnonzero((labels == 1) & (cluster_of == cluster_of[i]))
        peers = peers[peers != i]
        if peers.size == 0:
            continue
        anchor[i] = 1.0
        peer_weight[i, peers] = 1.0 / peers.size
    if not anchor.any():
        return ad.constant(0.0, name="contrastive_empty")

    flat = ad.reshape(masked, (n, int(np.prod(masked.data.shape[1:]))))
    sumsq = ad.sum_axis(ad.mul(flat, flat), axis=1, keepdims=True)
    norms = ad.sqrt(ad.add(sumsq, ad.constant(np.full((n, 1), _NORM_GUARD))))
    unit = ad.div(flat, norms)
    sims = ad.matmul(unit, ad.transpose(unit))
    scaled = ad.scale(sims, 1.0 / temperature)
    # per anchor: -(1/|C|) sum_c sim(i,c)/t + log sum_{a != i} exp(sim(i,a)/t)
    pull = ad.reduce_sum(ad.mul(ad.constant(peer_weight), ad.neg(scaled)))
    off_diag = ad.constant(1.0 - np.eye(n))
    denom = ad.sum_axis(ad.mul(ad.exp(scaled), off_diag), axis=1)
    push = ad.reduce_sum(ad.mul(ad.constant(anchor), ad.log(denom)))
    return ad.add(pull, push)


# ---------------------------------------------------------------------------
# step two: the joint objective


@dataclass
class JointLossParts:
    total: Tensor
    cross_entropy: Tensor
    contrastive: Tensor
    gates: Tensor
    probabilities: Tensor
    assignment: ClusterAssignment | None


def joint_loss(x: Tensor, true_lengths, labels, selector: SelectorParams,
               classifier: ClassifierParams, *, relax_temp: float,
               temperature: float, contrastive_weight: float, clusters: int,
               rng: np.random.Generator | None, variant: str = "cluster",
               kmeans_iters: int = 10, train_flag: bool = False,
               dropout_rng: np.random.Generator | None = None,
               noise_override=None, z_override: np.ndarray | None = None,
               assignment_override: ClusterAssignment | None = None) -> JointLossParts:
    """Gated cross-entropy plus the weighted contrastive term.

    One gate sample per function per call. `noise_override` fixes the
    Gumbel pair (for gradient checks), `z_override` replaces the gates with
    constants (cutting the selector out of the graph), and
    `assignment_override` freezes the clustering. A zero contrastive_weight
    skips clustering entirely.
    """
    b, rows, dim = x.data.shape
    labels = np.asarray(labels, dtype=np.int64)
    scores = selector_presigmoid(x, selector, train_flag, dropout_rng)
    if z_override is not None:
        z = ad.constant(np.asarray(z_override, dtype=np.float64), name="fixed_gates")
    else:
        if noise_override is not None:
            noise_a, noise_b = noise_override
        else:
            if rng is None:
                raise GraphError("joint_loss needs an rng to sample gates")
            noise_a = sample_gumbel((b, rows), rng)
            noise_b = sample_gumbel((b, rows), rng)
        z = relax_gates(scores, noise_a, noise_b, relax_temp)
    z = pad_gate(z, true_lengths, rows)
    masked = apply_mask(x, z)
    flat = ad.reshape(masked, (b, rows * dim))
    probs = classifier_forward(flat, classifier, train_flag, dropout_rng)
    ce = batch_cross_entropy(probs, labels)
    if contrastive_weight == 0.0:
        return JointLossParts(ce, ce, ad.constant(0.0), z, probs, None)
    if assignment_override is not None:
        assignment = assignment_override
    else:
        if rng is None:
            raise GraphError("joint_loss needs an rng to seed clustering")
        assignment = assign_clusters(flat.data, labels, clusters, rng,
                                     variant, kmeans_iters)
    ccl = cluster_contrastive_loss(masked, labels, assignment.cluster_of,
                                   temperature)
    total = ad.add(ce, ad.scale(ccl, contrastive_weight))
    return JointLossParts(total, ce, ccl, z, probs, assignment)
