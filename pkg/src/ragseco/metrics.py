"""Six-metric evaluation: ACC, micro AUPR/AUC, macro precision/recall/F1."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.stats import rankdata

METRIC_KEYS = ("acc", "aupr", "auc", "precision", "recall", "f1")


@dataclass
class MetricsReport:
    acc: float
    aupr: float
    auc: float
    precision: float
    recall: float
    f1: float
    per_event_aupr: list[float] = field(default_factory=list)
    per_event_auc: list[float] = field(default_factory=list)
    per_event_support: list[int] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)

    def as_dict(self) -> dict[str, float]:
        return {k: getattr(self, k) for k in METRIC_KEYS}

    def to_text(self) -> str:
        lines = [f"{k} = {getattr(self, k)!r}" for k in METRIC_KEYS]
        for w in self.warnings:
            lines.append(f"# warning: {w}")
        lines.append("# per-event")
        lines.append("# event\tsupport\taupr\tauc")
        for r, (n, a, c) in enumerate(zip(self.per_event_support, self.per_event_aupr, self.per_event_auc)):
            lines.append(f"{r}\t{n}\t{a!r}\t{c!r}")
        return "\n".join(lines) + "\n"

    def summary(self) -> str:
        return " ".join(f"{k}={getattr(self, k):.4f}" for k in METRIC_KEYS)


def read_metrics(path: str | Path) -> dict[str, float]:
    out = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if "=" in line and not line.startswith("#"):
            k, _, v = (s.strip() for s in line.partition("="))
            out[k] = float(v)
    return out


def auc_score(y: np.ndarray, s: np.ndarray) -> float | None:
    """Mann-Whitney AUC with average ranks for ties; None if one class is absent."""
    y = np.asarray(y, dtype=bool)
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        return None
    ranks = rankdata(s)
    return float((ranks[y].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def aupr_score(y: np.ndarray, s: np.ndarray) -> float | None:
    """Step-wise area under the PR curve (sum of recall increments x precision)."""
    y = np.asarray(y, dtype=bool)
    s = np.asarray(s, dtype=np.float64)
    n_pos = int(y.sum())
    if n_pos == 0:
        return None
    order = np.argsort(-s, kind="mergesort")
    ys, ss = y[order], s[order]
    tp = np.cumsum(ys)
    fp = np.cumsum(~ys)
    # last index of each run of tied scores
    last = np.r_[np.nonzero(np.diff(ss))[0], ss.size - 1]
    tp, fp = tp[last], fp[last]
    precision = tp / (tp + fp)
    recall = tp / n_pos
    prev = np.r_[0.0, recall[:-1]]
    return float(np.sum((recall - prev) * precision))


def compute_metrics(probs: np.ndarray, labels: np.ndarray, n_relations: int | None = None) -> MetricsReport:
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    K, R = probs.shape
    if n_relations is not None and n_relations != R:
        raise ValueError(f"probability matrix has {R} columns, expected {n_relations}")
    warn: list[str] = []
    pred = probs.argmax(axis=1)
    acc = float((pred == labels).mean()) if K else 0.0

    onehot = np.zeros((K, R), dtype=bool)
    onehot[np.arange(K), labels] = True
    auc = auc_score(onehot.ravel(), probs.ravel())
    if auc is None:
        warn.append("micro AUC undefined (single-class label set); reported as 1.0")
        auc = 1.0
    aupr = aupr_score(onehot.ravel(), probs.ravel())
    if aupr is None:
        warn.append("micro AUPR undefined (no positives); reported as 0.0")
        aupr = 0.0

    precs, recs, f1s = [], [], []
    for c in np.unique(labels):
        tp = int(((pred == c) & (labels == c)).sum())
        n_pred = int((pred == c).sum())
        n_true = int((labels == c).sum())
        p = tp / n_pred if n_pred else 0.0
        r = tp / n_true if n_true else 0.0
        precs.append(p)
        recs.append(r)
        f1s.append(2 * p * r / (p + r) if p + r > 0 else 0.0)

    ev_aupr, ev_auc, support = [], [], []
    for r in range(R):
        support.append(int(onehot[:, r].sum()))
        a = auc_score(onehot[:, r], probs[:, r])
        if a is None:
            warn.append(f"event {r}: AUC undefined; reported as 1.0")
            a = 1.0
        p = aupr_score(onehot[:, r], probs[:, r])
        if p is None:
            warn.append(f"event {r}: AUPR undefined (no positives); reported as 0.0")
            p = 0.0
        ev_auc.append(a)
        ev_aupr.append(p)

    return MetricsReport(
        acc=acc,
        aupr=aupr,
        auc=auc,
        precision=float(np.mean(precs)) if precs else 0.0,
        recall=float(np.mean(recs)) if recs else 0.0,
        f1=float(np.mean(f1s)) if f1s else 0.0,
        per_event_aupr=ev_aupr,
        per_event_auc=ev_auc,
        per_event_support=support,
        warnings=warn,
    )
