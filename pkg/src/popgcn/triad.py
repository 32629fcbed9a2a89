"""Triangle-inequality violations over all ROI triads, before and after smoothing.

Two rules are supported. ``dominance``: a triad is satisfied when its largest
absolute correlation is at least the sum of the other two. ``metric``: the
ordinary triangle inequality on dissimilarities 1 - |c|, required in every
orientation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numba
import numpy as np

from .core import VIEWS, Cohort, DegenerateVarianceError, ParameterError, ShapeError, TrialView
from .ensemble import paired_t_test, pearson_r
from .gnn import row_normalized

RULES = ("dominance", "metric")


def n_triads(n: int) -> int:
    return n * (n - 1) * (n - 2) // 6


def pack_upper(C: np.ndarray, rule: str) -> np.ndarray:
    """Strict upper triangle, row by row, as |c| (dominance) or 1 - |c| (metric)."""
    iu = np.triu_indices(C.shape[0], 1)
    a = np.abs(np.asarray(C, dtype=np.float64)[iu])
    return np.ascontiguousarray(a if rule == "dominance" else 1.0 - a)


@numba.njit(parallel=True, cache=True)
def _violations_packed(packed, n, metric):
    per_row = np.zeros(n, dtype=np.int64)
    for a in numba.prange(n):
        off_a = a * n - a * (a + 1) // 2 - a - 1
        count = 0
        for b in range(a + 1, n):
            off_b = b * n - b * (b + 1) // 2 - b - 1
            x = packed[off_a + b]
            for c in range(b + 1, n):
                y = packed[off_a + c]
                z = packed[off_b + c]
                if metric:
                    ok = x <= y + z and y <= x + z and z <= x + y
                else:
                    ok = x >= y + z or y >= x + z or z >= x + y
                if not ok:
                    count += 1
        per_row[a] = count
    total = 0
    for a in range(n):
        total += per_row[a]
    return total


def violation_count(C: np.ndarray, rule: str = "dominance") -> int:
    if rule not in RULES:
        raise ParameterError(f"unknown triad rule {rule!r}")
    C = np.asarray(C)
    if C.ndim != 2 or C.shape[0] != C.shape[1]:
        raise ShapeError(f"expected square matrix, got {C.shape}")
    n = C.shape[0]
    if n < 3:
        raise ParameterError("triads need at least 3 ROIs")
    return int(_violations_packed(pack_upper(C, rule), n, rule == "metric"))


def triad_violation_rate(C: np.ndarray, rule: str = "dominance") -> float:
    return violation_count(C, rule) / n_triads(np.asarray(C).shape[0])


def smooth_correlations(matrices, W: np.ndarray, depth: int = 2, row_normalize: bool = True) -> list[np.ndarray]:
    """Propagate each subject's upper-triangular correlations over the population graph.

    With row normalization every output entry is a convex combination of
    input entries, so the results stay valid correlation matrices.
    """
    mats = [np.asarray(m, dtype=np.float64) for m in matrices]
    W = np.asarray(W, dtype=np.float64)
    if W.shape != (len(mats), len(mats)):
        raise ShapeError(f"graph {W.shape} does not match {len(mats)} subjects")
    n = mats[0].shape[0]
    iu = np.triu_indices(n, 1)
    X = np.vstack([m[iu] for m in mats])
    P = row_normalized(W) if row_normalize else W
    for _ in range(depth):
        X = P @ X
    if row_normalize:
        X = np.clip(X, 0.0, 1.0)
    out = []
    for row in X:
        M = np.zeros((n, n))
        M[iu] = row
        M = M + M.T
        np.fill_diagonal(M, 1.0)
        out.append(M)
    return out


@dataclass
class ViewAudit:
    view: str
    pre_rates: np.ndarray
    post_rates: np.ndarray
    feature_change: np.ndarray
    t_statistic: float | None
    p_value: float | None
    pearson_r: float | None
    notes: list[str] = field(default_factory=list)

    @property
    def pre_rate(self) -> float:
        return float(self.pre_rates.mean())

    @property
    def post_rate(self) -> float:
        return float(self.post_rates.mean())

    @property
    def pre_sd(self) -> float:
        return float(self.pre_rates.std(ddof=1)) if len(self.pre_rates) > 1 else 0.0

    @property
    def post_sd(self) -> float:
        return float(self.post_rates.std(ddof=1)) if len(self.post_rates) > 1 else 0.0

    def as_dict(self) -> dict:
        return {
            "view": self.view,
            "pre_rate": self.pre_rate, "post_rate": self.post_rate,
            "pre_sd": self.pre_sd, "post_sd": self.post_sd,
            "pre_rates": self.pre_rates.tolist(), "post_rates": self.post_rates.tolist(),
            "feature_change": self.feature_change.tolist(),
            "t_statistic": self.t_statistic, "p_value": self.p_value,
            "pearson_r": self.pearson_r, "notes": list(self.notes),
        }


@dataclass
class AuditReport:
    rule: str
    depth: int
    row_normalize: bool
    views: dict[str, ViewAudit]

    def as_dict(self) -> dict:
        return {"rule": self.rule, "depth": self.depth, "row_normalize": self.row_normalize,
                "views": {v: a.as_dict() for v, a in self.views.items()}}

    def table(self) -> str:
        """Plain-text table: views as columns, rate and SD rows (percent)."""
        names = list(self.views)
        rows = [
            ("Pre-propagation", [f"{100 * self.views[v].pre_rate:.2f}%" for v in names]),
            ("Post-propagation", [f"{100 * self.views[v].post_rate:.2f}%" for v in names]),
            ("SD (Pre)", [f"{100 * self.views[v].pre_sd:.3g}%" for v in names]),
            ("SD (Post)", [f"{100 * self.views[v].post_sd:.3g}%" for v in names]),
        ]
        width = max(12, *(len(n) for n in names))
        lines = [f"Triad violations ({self.rule} rule)",
                 " " * 18 + "".join(n.rjust(width) for n in names)]
        lines += [label.ljust(18) + "".join(c.rjust(width) for c in cells) for label, cells in rows]
        return "\n".join(lines) + "\n"


def set_workers(workers: int | None) -> None:
    if workers:
        numba.set_num_threads(max(1, min(int(workers), numba.config.NUMBA_NUM_THREADS)))


def audit_view(matrices, W: np.ndarray, rule: str = "dominance", depth: int = 2,
               row_normalize: bool = True, view: str = "") -> ViewAudit:
    mats = [np.asarray(m, dtype=np.float64) for m in matrices]
    post = smooth_correlations(mats, W, depth, row_normalize)
    pre_rates = np.array([triad_violation_rate(m, rule) for m in mats])
    post_rates = np.array([triad_violation_rate(m, rule) for m in post])
    iu = np.triu_indices(mats[0].shape[0], 1)
    change = np.array([float(np.linalg.norm(q[iu] - p[iu])) for p, q in zip(mats, post)])
    notes = []
    try:
        t, p = paired_t_test(pre_rates, post_rates)
    except DegenerateVarianceError:
        t = p = None
        notes.append("no change: paired differences have zero variance")
    try:
        r = pearson_r(pre_rates, change)
    except DegenerateVarianceError:
        r = None
        notes.append("pearson_r undefined: constant input")
    if t is not None and not math.isfinite(t):
        t = None
        notes.append("t statistic not finite")
    return ViewAudit(view, pre_rates, post_rates, change, t, p, r, notes)


def audit_cohort(cohort: Cohort, W: np.ndarray, rule: str = "dominance", depth: int = 2,
                 row_normalize: bool = True, views=VIEWS, workers: int | None = None) -> AuditReport:
    """Per-view violation rates before/after smoothing, paired t-test and Pearson r.

    The Pearson statistic pairs each subject's pre-smoothing violation rate
    with the Frobenius norm of the change in its propagated feature row (its
    upper-triangular correlations).
    """
    if rule not in RULES:
        raise ParameterError(f"unknown triad rule {rule!r}")
    set_workers(workers)
    out = {}
    for view in views:
        view = TrialView(view)
        out[view.value] = audit_view(cohort.matrices(view), W, rule, depth, row_normalize, view.value)
    return AuditReport(rule, depth, row_normalize, out)
