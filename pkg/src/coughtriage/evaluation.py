"""Losses, classification metrics, ROC/AUROC, and grouped stratified
k-fold cross-validation."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

PROB_EPS = 1e-12


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


@dataclass(frozen=True)
class RocCurve:
    points: list[tuple[float, float]]  # (fpr, tpr), threshold descending
    auroc: float


@dataclass(frozen=True)
class FoldAssignment:
    fold_of: dict[str, int]  # example id -> fold
    group_of: dict[str, str]  # example id -> participant
    k: int

    def fold_ids(self, fold: int) -> list[str]:
        return [e for e, f in self.fold_of.items() if f == fold]


@dataclass
class EvalReport:
    """Per-evaluation bundle: loss, point metrics, ROC, and optional curves."""

    loss: float
    accuracy: float | None
    confusion: ConfusionMatrix
    tpr: float | None
    fpr: float | None
    roc: RocCurve | None
    auroc: float | None
    n_examples: int
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "loss": self.loss, "accuracy": self.accuracy,
            "confusion": {"tp": self.confusion.tp, "fp": self.confusion.fp,
                          "tn": self.confusion.tn, "fn": self.confusion.fn},
            "tpr": self.tpr, "fpr": self.fpr, "auroc": self.auroc,
            "n_examples": self.n_examples,
            "roc_points": self.roc.points if self.roc else None,
            "extra": self.extra,
        }


def bce_loss(y, p, positive_term_only: bool = False) -> float:
    """Binary cross-entropy with natural log and probability clamping.

    The default is the standard two-term form; positive_term_only computes
    -(1/m) * sum(y * log(p)) for literal fidelity with single-term write-ups
    (degenerate on negative examples).
    """
    y = np.asarray(y, dtype=np.float64)
    p = np.asarray(p, dtype=np.float64)
    if y.shape != p.shape:
        raise ValueError("label and probability vectors differ in length")
    p = np.clip(p, PROB_EPS, 1.0 - PROB_EPS)
    if positive_term_only:
        return float(-np.mean(y * np.log(p)))
    return float(-np.mean(y * np.log(p) + (1.0 - y) * np.log(1.0 - p)))


def classification_metrics(y, p, threshold: float = 0.5):
    """Threshold at p >= threshold; rates are None when their denominator is
    zero rather than silently reported as 0."""
    y = np.asarray(y, dtype=np.int64)
    p = np.asarray(p, dtype=np.float64)
    if y.shape != p.shape:
        raise ValueError("label and probability vectors differ in length")
    pred = (p >= threshold).astype(np.int64)
    tp = int(np.sum((pred == 1) & (y == 1)))
    fp = int(np.sum((pred == 1) & (y == 0)))
    tn = int(np.sum((pred == 0) & (y == 0)))
    fn = int(np.sum((pred == 0) & (y == 1)))
    cm = ConfusionMatrix(tp, fp, tn, fn)
    accuracy = (tp + tn) / cm.total if cm.total else None
    tpr = tp / (tp + fn) if (tp + fn) else None
    fpr = fp / (fp + tn) if (fp + tn) else None
    return cm, accuracy, tpr, fpr


def roc_curve(y, scores) -> RocCurve:
    """Threshold sweep over unique scores descending; AUROC by trapezoid."""
    y = np.asarray(y, dtype=np.int64)
    scores = np.asarray(scores, dtype=np.float64)
    n_pos = int(y.sum())
    n_neg = len(y) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("ROC needs both classes present")
    order = np.argsort(-scores, kind="stable")
    y_sorted = y[order]
    s_sorted = scores[order]
    # cumulative counts at each unique-threshold boundary
    distinct = np.nonzero(np.diff(s_sorted))[0]
    boundaries = np.concatenate([distinct, [len(y) - 1]])
    tp_cum = np.cumsum(y_sorted)[boundaries]
    fp_cum = np.cumsum(1 - y_sorted)[boundaries]
    tpr = np.concatenate([[0.0], tp_cum / n_pos, [1.0]])
    fpr = np.concatenate([[0.0], fp_cum / n_neg, [1.0]])
    auroc = float(np.trapezoid(tpr, fpr))
    points = list(zip(fpr.tolist(), tpr.tolist()))
    return RocCurve(points=points, auroc=auroc)


def auroc_oracle(y, scores) -> float:
    """Brute force over all positive-negative pairs, ties half-credited."""
    y = np.asarray(y, dtype=np.int64)
    scores = np.asarray(scores, dtype=np.float64)
    pos = scores[y == 1]
    neg = scores[y == 0]
    if len(pos) == 0 or len(neg) == 0:
        raise ValueError("AUROC needs both classes present")
    diff = pos[:, None] - neg[None, :]
    wins = np.count_nonzero(diff > 0)
    ties = np.count_nonzero(diff == 0)
    return (wins + 0.5 * ties) / (len(pos) * len(neg))


def stratified_kfold(labels: dict[str, int], groups: dict[str, str],
                     k: int = 5, seed: int = 0) -> FoldAssignment:
    """Participant-level stratified folds.

    Each participant's majority label defines its stratum; participants are
    shuffled per stratum and dealt round-robin, so per-fold participant-level
    positive counts differ by at most one and no participant straddles folds.
    """
    if k < 2:
        raise ValueError("k must be >= 2")
    by_participant: dict[str, list[int]] = {}
    for ex_id, label in labels.items():
        by_participant.setdefault(groups[ex_id], []).append(label)
    strata: dict[int, list[str]] = {0: [], 1: []}
    for pid in sorted(by_participant):
        majority = 1 if np.mean(by_participant[pid]) >= 0.5 else 0
        strata[majority].append(pid)
    for stratum, pids in strata.items():
        if pids and len(pids) < k:
            raise ValueError(
                f"stratum {stratum} has {len(pids)} participants, fewer than k={k}")

    rng = np.random.default_rng(seed)
    fold_of_participant: dict[str, int] = {}
    for stratum in (1, 0):
        pids = strata[stratum]
        order = rng.permutation(len(pids))
        for i, j in enumerate(order):
            fold_of_participant[pids[j]] = i % k
    fold_of = {ex_id: fold_of_participant[groups[ex_id]] for ex_id in labels}
    return FoldAssignment(fold_of=fold_of, group_of=dict(groups), k=k)


def evaluate_scores(y, p, threshold: float = 0.5) -> EvalReport:
    y = np.asarray(y, dtype=np.int64)
    p = np.asarray(p, dtype=np.float64)
    cm, accuracy, tpr, fpr = classification_metrics(y, p, threshold)
    roc = None
    auroc = None
    if 0 < y.sum() < len(y):
        roc = roc_curve(y, p)
        auroc = roc.auroc
    return EvalReport(loss=bce_loss(y, p), accuracy=accuracy, confusion=cm,
                      tpr=tpr, fpr=fpr, roc=roc, auroc=auroc, n_examples=len(y))


def cross_validate(fit_and_score: Callable[[list[str], list[str], int], np.ndarray],
                   labels: dict[str, int], groups: dict[str, str],
                   k: int = 5, seed: int = 0) -> tuple[list[EvalReport], dict]:
    """Grouped stratified k-fold harness.

    fit_and_score(train_ids, test_ids, fold_seed) must fit on the train ids
    only (scalers, augmentation, model) and return held-out probabilities in
    test_ids order; held-out labels never reach it. Single-class held-out
    folds are reported and skipped.
    """
    folds = stratified_kfold(labels, groups, k, seed)
    all_ids = list(labels)
    reports: list[EvalReport] = []
    aurocs = []
    skipped = []
    for fold in range(k):
        test_ids = [e for e in all_ids if folds.fold_of[e] == fold]
        train_ids = [e for e in all_ids if folds.fold_of[e] != fold]
        y_test = np.array([labels[e] for e in test_ids])
        if len(set(y_test.tolist())) < 2:
            skipped.append(fold)
            continue
        probs = np.asarray(fit_and_score(train_ids, test_ids, seed + fold))
        report = evaluate_scores(y_test, probs)
        report.extra["fold"] = fold
        reports.append(report)
        aurocs.append(report.auroc)
    summary = {
        "k": k, "seed": seed, "skipped_folds": skipped,
        "auroc_mean": float(np.mean(aurocs)) if aurocs else None,
        "auroc_std": float(np.std(aurocs)) if aurocs else None,
        "per_fold_auroc": aurocs,
    }
    return reports, summary


def ensemble_predict(probabilities: list[float]) -> float:
    """Unweighted mean of member probabilities."""
    if not probabilities:
        raise ValueError("empty model list")
    return float(np.mean(probabilities))


def aggregate_by_participant(ids: list[str], y: np.ndarray, p: np.ndarray,
                             groups: dict[str, str]):
    """Patient-level scores: mean clip probability per participant."""
    acc: dict[str, list[float]] = {}
    lab: dict[str, int] = {}
    for ex_id, yi, pi in zip(ids, y, p):
        pid = groups[ex_id]
        acc.setdefault(pid, []).append(float(pi))
        lab[pid] = max(lab.get(pid, 0), int(yi))
    pids = sorted(acc)
    return (np.array([lab[q] for q in pids]),
            np.array([float(np.mean(acc[q])) for q in pids]))
