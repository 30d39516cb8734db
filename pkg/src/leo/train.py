"""The two-step training loop, post-training calibration, and evaluation.

Each batch takes two updates. The first trains the classifier (and the
encoder feeding it) on randomly masked functions so it respects the data
distribution rather than the selector's current choices; the second trains
the selector, classifier, and encoder jointly on the gated cross-entropy
plus the weighted cluster-contrastive term. After the final epoch the
parameters are quantized to their stored 32-bit form, cluster statistics
are fit on the training split's masked representations, and the decision
threshold is calibrated on the validation split.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import NumericError, backward
from .config import TrainConfig
from .data import load_dataset, split_dataset
from .encoder import EncoderParams, encode_batch, init_encoder_params
from .losses import (
    ClassifierParams,
    classifier_forward,
    data_distribution_loss,
    init_classifier_params,
    joint_loss,
)
from .metrics import ScoreSet, build_report
from .model import ModelArtifact
from .normalize import NormalizeError, Vocabulary, build_vocabulary, encode_tokens, normalize_source
from .optim import Adam, ParameterStore, clip_store_gradients
from .scoring import (
    calibrate_threshold,
    fit_cluster_statistics,
    mahalanobis_scores,
    scoring_representation,
)
from .selector import (
    SelectorParams,
    deterministic_mask,
    init_selector_params,
    selector_forward,
)

log = logging.getLogger("leo")

STEP1_GROUPS = ("classifier", "encoder")
STEP2_GROUPS = ("selector", "classifier", "encoder")


class TrainingError(RuntimeError):
    pass


@dataclass
class PreparedSample:
    sample_id: str
    label: int
    cwe: str
    statements: list


@dataclass
class ModelParams:
    store: ParameterStore
    encoder: EncoderParams
    selector: SelectorParams
    classifier: ClassifierParams


def prepare_samples(records, vocab: Vocabulary, config: TrainConfig):
    """Normalize each record and map its statements to token id lists,
    capped at stmt_token_cap tokens per statement."""
    samples = []
    for r in records:
        try:
            fn = normalize_source(r.code)
        except NormalizeError as exc:
            raise TrainingError(f"sample '{r.sample_id}': {exc}") from exc
        statements = [
            encode_tokens(stmt[:config.stmt_token_cap], vocab)
            for stmt in fn.statements
        ]
        samples.append(PreparedSample(r.sample_id, r.label, r.cwe, statements))
    return samples


def build_training_vocabulary(train_records, config: TrainConfig) -> Vocabulary:
    """Vocabulary from the training split only."""
    normalized = []
    for r in train_records:
        try:
            normalized.append(normalize_source(r.code))
        except NormalizeError as exc:
            raise TrainingError(f"sample '{r.sample_id}': {exc}") from exc
    return build_vocabulary(normalized, config.vocab_max)


def init_model(config: TrainConfig, vocab_size: int,
               rng: np.random.Generator) -> ModelParams:
    store = ParameterStore()
    encoder = init_encoder_params(store, vocab_size, config.embed_dim, rng,
                                  kernel_size=config.kernel_size,
                                  dropout_retain=config.dropout_retain)
    selector = init_selector_params(store, config.embed_dim, rng,
                                    hidden_sizes=config.selector_hidden,
                                    dropout_retain=config.dropout_retain)
    classifier = init_classifier_params(
        store, config.max_statements * config.embed_dim, rng,
        hidden_sizes=config.classifier_hidden,
        dropout_retain=config.dropout_retain)
    return ModelParams(store, encoder, selector, classifier)


def model_from_artifact(artifact: ModelArtifact) -> ModelParams:
    """Rebuild live parameters from a loaded artifact (float32 storage
    widened back to the working precision)."""
    params = init_model(artifact.config, artifact.vocab.size,
                        np.random.default_rng(0))
    params.store.load_values(
        {name: np.asarray(arr, dtype=np.float64)
         for name, arr in artifact.tensors.items()})
    return params


def _quantize_store(store: ParameterStore) -> dict:
    """Round every parameter to float32 in place; returns the float32
    tensors for storage. Scoring statistics are fit after this so a loaded
    model reproduces them exactly."""
    stored = {}
    for name, t in store.items():
        narrow = t.data.astype(np.float32)
        t.data = narrow.astype(np.float64)
        stored[name] = narrow
    return stored


def masked_representations(params: ModelParams, samples, config: TrainConfig):
    """Deterministic-gate scoring representations plus the classifier's
    max-softmax complement, batched, no gradients kept."""
    n = len(samples)
    rep_dim = (config.embed_dim if config.scoring_mode == "pooled-d"
               else config.max_statements * config.embed_dim)
    reps = np.zeros((n, rep_dim))
    msp = np.zeros(n)
    for start in range(0, n, config.batch_size):
        chunk = samples[start:start + config.batch_size]
        x, lengths = encode_batch([s.statements for s in chunk],
                                  params.encoder, config.max_statements)
        probs = selector_forward(x, params.selector).data
        z = deterministic_mask(probs, config.gate_mode)
        z = z * (np.arange(config.max_statements)[None, :] < lengths[:, None])
        masked = x.data * z[:, :, None]
        b = len(chunk)
        flat = ad.constant(masked.reshape(b, -1))
        class_probs = classifier_forward(flat, params.classifier).data
        msp[start:start + b] = 1.0 - class_probs.max(axis=1)
        for i in range(b):
            reps[start + i] = scoring_representation(
                masked[i], int(lengths[i]), config.scoring_mode)
    return reps, msp


def _mean(values) -> float:
    return float(np.mean(values)) if values else 0.0


def train(config: TrainConfig, records) -> ModelArtifact:
    """Full training run on in-distribution records; returns the
    self-contained artifact."""
    train_recs, val_recs = split_dataset(list(records), config.seed,
                                         config.val_fraction)
    vocab = build_training_vocabulary(train_recs, config)
    train_samples = prepare_samples(train_recs, vocab, config)
    val_samples = prepare_samples(val_recs, vocab, config)

    streams = np.random.SeedSequence(config.seed).spawn(6)
    init_rng, order_rng, dd_rng, joint_rng, dropout_rng, stats_rng = (
        np.random.default_rng(s) for s in streams)

    params = init_model(config, vocab.size, init_rng)
    adam = Adam(lr=config.learning_rate)

    weight = 0.0 if config.ablate_cd else config.contrastive_weight
    if weight > 0 and not any(s.label == 1 for s in train_samples):
        warnings.warn("no vulnerable samples in the training split; "
                      "the contrastive term is permanently zero")
        weight = 0.0

    labels_all = np.array([s.label for s in train_samples], dtype=np.int64)
    n = len(train_samples)
    digest_lines = ["epoch,distribution_loss,gated_ce,contrastive"]
    for epoch in range(config.epochs):
        order = order_rng.permutation(n)
        dd_losses, ce_losses, ccl_losses = [], [], []
        for batch_no, start in enumerate(range(0, n, config.batch_size)):
            idx = order[start:start + config.batch_size]
            batch = [train_samples[i].statements for i in idx]
            labels = labels_all[idx]
            try:
                if not config.ablate_cd:
                    x1, lengths1 = encode_batch(batch, params.encoder,
                                                config.max_statements,
                                                train_flag=True, rng=dropout_rng)
                    loss1 = data_distribution_loss(
                        x1, lengths1, labels, params.classifier,
                        relax_temp=config.relax_temp, rng=dd_rng,
                        train_flag=True, dropout_rng=dropout_rng)
                    if not np.isfinite(loss1.data):
                        raise NumericError("distribution loss is not finite")
                    params.store.zero_grads()
                    backward(loss1)
                    params.store.ensure_grads(STEP1_GROUPS)
                    clip_store_gradients(params.store, STEP1_GROUPS,
                                         config.clip_norm)
                    adam.step(params.store, STEP1_GROUPS)
                    dd_losses.append(float(loss1.data))

                x2, lengths2 = encode_batch(batch, params.encoder,
                                            config.max_statements,
                                            train_flag=True, rng=dropout_rng)
                parts = joint_loss(
                    x2, lengths2, labels, params.selector, params.classifier,
                    relax_temp=config.relax_temp,
                    temperature=config.contrastive_temp,
                    contrastive_weight=weight, clusters=config.clusters,
                    rng=joint_rng, variant=config.contrastive_variant,
                    kmeans_iters=config.kmeans_iters, train_flag=True,
                    dropout_rng=dropout_rng)
                if not np.isfinite(parts.total.data):
                    raise NumericError("joint loss is not finite")
                params.store.zero_grads()
                backward(parts.total)
                params.store.ensure_grads(STEP2_GROUPS)
                clip_store_gradients(params.store, STEP2_GROUPS,
                                     config.clip_norm)
                adam.step(params.store, STEP2_GROUPS)
            except NumericError as exc:
                raise TrainingError(
                    f"aborting: epoch {epoch} batch {batch_no}: {exc}") from exc
            ce_losses.append(float(parts.cross_entropy.data))
            ccl_losses.append(float(parts.contrastive.data))
        digest_lines.append(
            f"{epoch},{_mean(dd_losses)!r},{_mean(ce_losses)!r},{_mean(ccl_losses)!r}")
        log.info("epoch %d: distribution %.4f, gated CE %.4f, contrastive %.4f",
                 epoch, _mean(dd_losses), _mean(ce_losses), _mean(ccl_losses))

    stored = _quantize_store(params.store)
    train_reps, _ = masked_representations(params, train_samples, config)
    stats = fit_cluster_statistics(train_reps, config.clusters, stats_rng,
                                   mode=config.scoring_mode,
                                   kmeans_iters=config.kmeans_iters)
    val_reps, _ = masked_representations(params, val_samples, config)
    val_scores = mahalanobis_scores(val_reps, stats)
    threshold = calibrate_threshold(val_scores)
    return ModelArtifact(vocab=vocab, tensors=stored, config=config,
                         stats=stats, threshold=threshold,
                         log_digest="\n".join(digest_lines) + "\n")


def score_records(artifact: ModelArtifact, records, *, use_msp: bool = False):
    """Outlier scores and ID/OOD decisions for a record list. The stored
    threshold only applies to the Mahalanobis score; max-softmax runs get
    decisions from their own 0.95 quantile and are meant for metric
    comparisons, not deployment."""
    params = model_from_artifact(artifact)
    samples = prepare_samples(records, artifact.vocab, artifact.config)
    reps, msp = masked_representations(params, samples, artifact.config)
    if use_msp:
        scores = msp
        threshold = calibrate_threshold(scores) if len(scores) else 0.0
    else:
        scores = mahalanobis_scores(reps, artifact.stats)
        threshold = artifact.threshold
    decisions = np.where(scores > threshold, "OOD", "ID")
    return scores, decisions


def evaluate(artifact: ModelArtifact, id_test_path: str, ood_test_path: str,
             *, fingerprint: str = "", dump_path: str = "",
             use_msp: bool = False):
    """Score both test populations and build the metrics report plus the
    per-sample dump rows."""
    id_records = load_dataset(id_test_path)
    ood_records = load_dataset(ood_test_path)
    if not id_records:
        raise ValueError(f"ID test file {id_test_path} is empty")
    if not ood_records:
        raise ValueError(f"OOD test file {ood_test_path} is empty")
    id_scores, id_decisions = score_records(artifact, id_records,
                                            use_msp=use_msp)
    ood_scores, ood_decisions = score_records(artifact, ood_records,
                                              use_msp=use_msp)
    report = build_report(ScoreSet(id_scores, ood_scores),
                          fingerprint=fingerprint or artifact.config.fingerprint(),
                          dump_path=dump_path)
    rows = [(r.sample_id, "id", float(s), str(d))
            for r, s, d in zip(id_records, id_scores, id_decisions)]
    rows += [(r.sample_id, "ood", float(s), str(d))
             for r, s, d in zip(ood_records, ood_scores, ood_decisions)]
    return report, rows
