"""Six-view majority vote, cross-validation splits, metrics and the elementary statistics."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
from scipy import special, stats

from .core import VIEWS, DegenerateVarianceError, ParameterError, SchemaError, TrialView

VOTE_THRESHOLD = 4


def majority_vote(sheet: Mapping[str, Mapping[TrialView, int]]) -> dict[str, int]:
    """1 (Improver) iff at least four of the six views vote positive.

    A 3-3 tie falls to NonImprover.
    """
    out = {}
    for subject, votes in sheet.items():
        if len(votes) != len(VIEWS) or set(TrialView(v) for v in votes) != set(VIEWS):
            raise SchemaError(f"subject {subject}: expected one vote per view, got {len(votes)}")
        positives = sum(1 for v in votes.values() if int(v) == 1)
        out[subject] = int(positives >= VOTE_THRESHOLD)
    return out


def vote_matrix(votes: np.ndarray) -> np.ndarray:
    """Array form of ``majority_vote``: rows are subjects, columns the six views."""
    votes = np.asarray(votes)
    if votes.ndim != 2 or votes.shape[1] != len(VIEWS):
        raise SchemaError(f"vote array must be n x {len(VIEWS)}, got {votes.shape}")
    return ((votes == 1).sum(axis=1) >= VOTE_THRESHOLD).astype(np.int64)


def kfold_split(subject_ids: Sequence, k: int, seed: int = 0, stratify_labels=None) -> list[list]:
    """Partition ids into k held-out sets whose sizes differ by at most one.

    With ``stratify_labels`` ids are shuffled within each class and dealt
    round-robin, so every fold's count of each class differs by at most one.
    """
    ids = list(subject_ids)
    n = len(ids)
    if k < 2 or k > n:
        raise ParameterError(f"cannot split {n} ids into {k} folds")
    rng = np.random.default_rng(seed)
    if stratify_labels is None:
        order = rng.permutation(n)
    else:
        labels = np.asarray(stratify_labels)
        if labels.shape != (n,):
            raise ParameterError("stratify_labels must align with subject_ids")
        order = np.concatenate([rng.permutation(np.flatnonzero(labels == c)) for c in np.unique(labels)])
    fold_of = np.empty(n, dtype=np.int64)
    fold_of[order] = np.arange(n) % k
    return [[ids[i] for i in range(n) if fold_of[i] == f] for f in range(k)]


@dataclass(frozen=True)
class Metrics:
    overall_accuracy: float
    improver_accuracy: float
    nonimprover_accuracy: float
    roc_auc: float
    f1: float
    tp: int
    fp: int
    tn: int
    fn: int

    NAMES = ("overall_accuracy", "improver_accuracy", "nonimprover_accuracy", "roc_auc", "f1")

    def values(self) -> dict[str, float]:
        return {k: getattr(self, k) for k in self.NAMES}


def roc_auc(scores, labels) -> float:
    """Probability a random positive outscores a random negative; ties count half."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    pos = labels == 1
    n1 = int(pos.sum())
    n0 = len(labels) - n1
    if n1 == 0 or n0 == 0:
        raise ParameterError("AUC needs both classes present")
    ranks = stats.rankdata(scores)  # midranks for ties
    u = ranks[pos].sum() - n1 * (n1 + 1) / 2.0
    return float(u / (n0 * n1))


def classification_metrics(predictions, scores, labels) -> Metrics:
    predictions = np.asarray(predictions, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    if predictions.shape != labels.shape or np.shape(scores) != labels.shape:
        raise ParameterError("predictions, scores and labels must align")
    if len(np.unique(labels)) < 2:
        raise ParameterError("per-class accuracy and AUC need both classes present")
    tp = int(np.sum((predictions == 1) & (labels == 1)))
    fn = int(np.sum((predictions == 0) & (labels == 1)))
    tn = int(np.sum((predictions == 0) & (labels == 0)))
    fp = int(np.sum((predictions == 1) & (labels == 0)))
    f1 = 2 * tp / (2 * tp + fp + fn) if tp else 0.0
    return Metrics(
        overall_accuracy=(tp + tn) / len(labels),
        improver_accuracy=tp / (tp + fn),
        nonimprover_accuracy=tn / (tn + fp),
        roc_auc=roc_auc(scores, labels),
        f1=f1, tp=tp, fp=fp, tn=tn, fn=fn,
    )


def sample_mean(samples) -> float:
    """Correctly rounded mean; exactly the common value when all samples agree."""
    x = np.asarray(samples, dtype=np.float64)
    if x.size and np.all(x == x[0]):
        return float(x[0])
    return math.fsum(x.tolist()) / x.size


def confidence_interval(samples, level: float = 0.95) -> tuple[float, float]:
    """Normal-approximation interval for the mean, clipped to [0, 1].

    The spread is the standard deviation of the samples themselves (ddof=0).
    """
    x = np.asarray(samples, dtype=np.float64)
    if x.size < 2:
        raise ParameterError("confidence interval needs at least 2 samples")
    z = 1.96 if level == 0.95 else float(stats.norm.ppf(0.5 + level / 2.0))
    mean = sample_mean(x)
    spread = math.sqrt(math.fsum(((x - mean) ** 2).tolist()) / x.size)
    half = z * spread / math.sqrt(x.size)
    return max(0.0, mean - half), min(1.0, mean + half)


@dataclass(frozen=True)
class Estimate:
    point: float
    lower: float
    upper: float

    def as_dict(self) -> dict:
        return {"point": self.point, "lower": self.lower, "upper": self.upper}


def summarize_runs(runs: Sequence[Metrics], level: float = 0.95) -> dict[str, Estimate]:
    """Mean over repeated runs with a confidence interval per metric."""
    out = {}
    for name in Metrics.NAMES:
        vals = np.array([getattr(r, name) for r in runs], dtype=float)
        lo, hi = confidence_interval(vals, level) if len(vals) >= 2 else (vals[0], vals[0])
        out[name] = Estimate(sample_mean(vals), lo, hi)
    return out


def t_sf_two_sided(t: float, df: int) -> float:
    """Two-sided tail probability of Student's t via the regularized incomplete beta."""
    p = float(special.betainc(df / 2.0, 0.5, df / (df + t * t)))
    return max(p, np.finfo(float).tiny)


def paired_t_test(pre, post) -> tuple[float, float]:
    pre = np.asarray(pre, dtype=np.float64)
    post = np.asarray(post, dtype=np.float64)
    if pre.shape != post.shape or pre.ndim != 1 or pre.size < 2:
        raise ParameterError("paired t-test needs two equal-length vectors of length >= 2")
    d = pre - post
    if np.all(d == d[0]):
        raise DegenerateVarianceError("paired differences have zero variance")
    n = d.size
    t = float(d.mean() / (d.std(ddof=1) / math.sqrt(n)))
    return t, t_sf_two_sided(t, n - 1)


def pearson_r(x, y) -> float:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1 or x.size < 2:
        raise ParameterError("pearson_r needs two equal-length vectors of length >= 2")
    if np.all(x == x[0]) or np.all(y == y[0]):
        raise DegenerateVarianceError("pearson_r is undefined for constant input")
    xc = x - x.mean()
    yc = y - y.mean()
    r = float(np.dot(xc, yc) / math.sqrt(np.dot(xc, xc) * np.dot(yc, yc)))
    return min(1.0, max(-1.0, r))
