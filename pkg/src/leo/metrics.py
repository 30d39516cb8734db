"""Detection metrics over two score populations (out-of-distribution samples
are the positive class): FPR at a fixed true-positive rate, ranking AUROC,
and average precision. Plus the plain-text report and score-dump formats.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class ScoreSet:
    """Outlier scores for the in-distribution and OOD test populations."""
    id_scores: np.ndarray
    ood_scores: np.ndarray

    def __post_init__(self):
        self.id_scores = np.asarray(self.id_scores, dtype=np.float64).ravel()
        self.ood_scores = np.asarray(self.ood_scores, dtype=np.float64).ravel()
        if self.id_scores.size == 0 or self.ood_scores.size == 0:
            raise ValueError("both score populations must be non-empty")
        if not (np.isfinite(self.id_scores).all()
                and np.isfinite(self.ood_scores).all()):
            raise ValueError("scores must be finite")


def fpr_at_tpr(scores: ScoreSet, tpr: float = 0.95) -> float:
    """Fraction of OOD scores at or below the nearest-rank tpr-quantile of
    the ID scores (the threshold that keeps tpr of ID samples accepted)."""
    if not 0.0 < tpr < 1.0:
        raise ValueError("tpr must lie strictly inside (0, 1)")
    ordered = np.sort(scores.id_scores)
    rank = int(np.ceil(tpr * ordered.size))
    threshold = ordered[max(rank, 1) - 1]
    return float(np.count_nonzero(scores.ood_scores <= threshold)
                 / scores.ood_scores.size)


def auroc(scores: ScoreSet) -> float:
    """Probability a random OOD score exceeds a random ID score, ties
    counted one half (the rank-sum statistic, normalized)."""
    id_sorted = np.sort(scores.id_scores)
    below = np.searchsorted(id_sorted, scores.ood_scores, side="left")
    below_or_equal = np.searchsorted(id_sorted, scores.ood_scores, side="right")
    wins = int(below.sum())
    ties = int((below_or_equal - below).sum())
    return (2 * wins + ties) / (2 * id_sorted.size * scores.ood_scores.size)


def aupr(scores: ScoreSet) -> float:
    """Average precision of the OOD-positive ranking. Thresholds descend
    over the distinct scores; tied scores enter as a single step."""
    id_sorted = np.sort(scores.id_scores)
    ood_sorted = np.sort(scores.ood_scores)
    thresholds = np.unique(np.concatenate([id_sorted, ood_sorted]))[::-1]
    tp = ood_sorted.size - np.searchsorted(ood_sorted, thresholds, side="left")
    fp = id_sorted.size - np.searchsorted(id_sorted, thresholds, side="left")
    precision = tp / (tp + fp)
    recall = tp / ood_sorted.size
    steps = np.diff(recall, prepend=0.0)
    return float((steps * precision).sum())


@dataclass
class EvalReport:
    """The three detection metrics plus run identification fields."""
    fpr_at_tpr95: float
    auroc: float
    aupr: float
    n_id: int
    n_ood: int
    fingerprint: str = ""
    dump_path: str = ""

    def __post_init__(self):
        for name in ("fpr_at_tpr95", "auroc", "aupr"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name}={v} outside [0, 1]")


def build_report(scores: ScoreSet, fingerprint: str = "",
                 dump_path: str = "") -> EvalReport:
    return EvalReport(
        fpr_at_tpr95=fpr_at_tpr(scores),
        auroc=auroc(scores),
        aupr=aupr(scores),
        n_id=int(scores.id_scores.size),
        n_ood=int(scores.ood_scores.size),
        fingerprint=fingerprint,
        dump_path=dump_path,
    )


def render_report(report: EvalReport) -> str:
    """Comma-separated table, one metric per row. Float values use the
    shortest round-tripping decimal form."""
    rows = [
        ("fpr_at_tpr95", repr(report.fpr_at_tpr95)),
        ("auroc", repr(report.auroc)),
        ("aupr", repr(report.aupr)),
        ("n_id", str(report.n_id)),
        ("n_ood", str(report.n_ood)),
        ("fingerprint", report.fingerprint),
        ("dump_path", report.dump_path),
    ]
    return "metric,value\n" + "\n".join(f"{k},{v}" for k, v in rows) + "\n"


def parse_report(text: str) -> EvalReport:
    lines = [ln for ln in text.splitlines() if ln]
    if not lines or lines[0] != "metric,value":
        raise ValueError("report must start with a 'metric,value' header")
    values = {}
    for ln in lines[1:]:
        key, _, value = ln.partition(",")
        values[key] = value
    return EvalReport(
        fpr_at_tpr95=float(values["fpr_at_tpr95"]),
        auroc=float(values["auroc"]),
        aupr=float(values["aupr"]),
        n_id=int(values["n_id"]),
        n_ood=int(values["n_ood"]),
        fingerprint=values.get("fingerprint", ""),
        dump_path=values.get("dump_path", ""),
    )


def render_score_dump(rows) -> str:
    """One record per scored sample: id, population (id|ood), score,
    decision (ID|OOD)."""
    out = ["id,population,score,decision"]
    for sample_id, population, score, decision in rows:
        if population not in ("id", "ood"):
            raise ValueError(f"population must be 'id' or 'ood', got {population!r}")
        out.append(f"{sample_id},{population},{float(score)!r},{decision}")
    return "\n".join(out) + "\n"


def parse_score_dump(text: str):
    lines = [ln for ln in text.splitlines() if ln]
    if not lines or lines[0] != "id,population,score,decision":
        raise ValueError("dump must start with its 'id,population,score,decision' header")
    rows = []
    for ln in lines[1:]:
        sample_id, population, score, decision = ln.split(",")
        rows.append((sample_id, population, float(score), decision))
    return rows
