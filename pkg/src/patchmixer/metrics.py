"""Evaluation scores: accuracy, mean IoU, clustering quality, transfer summaries.

Clustering scores delegate to scikit-learn. Two conventions are fixed on top:
the Fowlkes-Mallows score of two all-singleton labelings is 1 (they are the
same partition), and the intrinsic scores are ``None`` when the predicted
labels do not form between 2 and n-1 clusters.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np
from scipy.spatial.distance import cdist
from sklearn import metrics as skm


class ConfusionMatrix:
    """``C x C`` counts, rows ground truth, columns prediction."""

    def __init__(self, num_classes: int):
        if num_classes < 1:
            raise ValueError("num_classes must be >= 1")
        self.counts = np.zeros((num_classes, num_classes), dtype=np.int64)

    @classmethod
    def from_labels(cls, y_true, y_pred, num_classes: Optional[int] = None) -> "ConfusionMatrix":
        y_true = np.asarray(y_true, dtype=np.int64).ravel()
        y_pred = np.asarray(y_pred, dtype=np.int64).ravel()
        if num_classes is None:
            num_classes = int(max(y_true.max(initial=0), y_pred.max(initial=0))) + 1
        cm = cls(num_classes)
        cm.update(y_true, y_pred)
        return cm

    @property
    def num_classes(self) -> int:
        return len(self.counts)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def update(self, y_true, y_pred) -> None:
        y_true = np.asarray(y_true, dtype=np.int64).ravel()
        y_pred = np.asarray(y_pred, dtype=np.int64).ravel()
        if y_true.shape != y_pred.shape:
            raise ValueError("y_true and y_pred differ in length")
        c = self.num_classes
        if len(y_true) and (min(y_true.min(), y_pred.min()) < 0 or max(y_true.max(), y_pred.max()) >= c):
            raise ValueError(f"labels must lie in [0, {c})")
        self.counts += np.bincount(y_true * c + y_pred, minlength=c * c).reshape(c, c)


def _counts(cm) -> np.ndarray:
    return cm.counts if isinstance(cm, ConfusionMatrix) else np.asarray(cm, dtype=np.int64)


def overall_accuracy(cm) -> float:
    counts = _counts(cm)
    total = counts.sum()
    if total == 0:
        raise ValueError("empty confusion matrix")
    return float(np.trace(counts) / total)


def per_class_iou(cm) -> np.ndarray:
    """IoU per class; NaN for classes absent from both truth and prediction."""
    counts = _counts(cm).astype(np.float64)
    tp = np.diag(counts)
    union = counts.sum(0) + counts.sum(1) - tp
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(union > 0, tp / union, np.nan)


def mean_iou(cm) -> float:
    iou = per_class_iou(cm)
    present = ~np.isnan(iou)
    if not present.any():
        raise ValueError("empty confusion matrix")
    return float(iou[present].mean())


# -- clustering --------------------------------------------------------------------

def fowlkes_mallows(labels_true, labels_pred) -> float:
    t = np.asarray(labels_true)
    p = np.asarray(labels_pred)
    n = len(t)
    if len(np.unique(t)) == n and len(np.unique(p)) == n:
        return 1.0
    return float(skm.fowlkes_mallows_score(t, p))


def intrinsic_scores(embeddings, labels) -> tuple[Optional[float], Optional[float]]:
    """Silhouette (Euclidean) and Calinski-Harabasz; ``None`` if undefined."""
    x = np.asarray(embeddings, dtype=np.float64)
    labels = np.asarray(labels)
    k = len(np.unique(labels))
    if not 2 <= k <= len(labels) - 1:
        return None, None
    # direct differences; the Gram-matrix shortcut loses digits on close points
    s = float(skm.silhouette_score(cdist(x, x), labels, metric="precomputed"))
    ch = float(skm.calinski_harabasz_score(x, labels))
    return s, ch


def clustering_suite(labels_true, labels_pred, embeddings=None) -> dict:
    """ARI, AMI, H, C, V, FM from labels; S and CH from embeddings grouped by ``labels_pred``."""
    t = np.asarray(labels_true).ravel()
    p = np.asarray(labels_pred).ravel()
    if len(t) == 0:
        raise ValueError("clustering scores need at least one item")
    if len(t) != len(p):
        raise ValueError("labelings differ in length")
    h, c, v = skm.homogeneity_completeness_v_measure(t, p)
    out = {
        "ari": float(skm.adjusted_rand_score(t, p)),
        "ami": float(skm.adjusted_mutual_info_score(t, p, average_method="max")),
        "h": float(h),
        "c": float(c),
        "v": float(v),
        "fm": fowlkes_mallows(t, p),
        "s": None,
        "ch": None,
    }
    if embeddings is not None:
        emb = np.asarray(embeddings)
        if len(emb) != len(t):
            raise ValueError("embeddings and labels differ in length")
        out["s"], out["ch"] = intrinsic_scores(emb, p)
    return out


def normalized_view(rows: Sequence[Mapping[str, Optional[float]]], keys=("ari", "ami", "h", "c", "v", "fm", "s", "ch")):
    """Divide every score by its maximum over ``rows`` (None stays None)."""
    out = [dict(r) for r in rows]
    for k in keys:
        vals = [r.get(k) for r in rows if r.get(k) is not None]
        top = max(vals) if vals else None
        for r in out:
            if r.get(k) is not None and top:
                r[k] = r[k] / top
    return out


# -- reports -----------------------------------------------------------------------

REPORT_FIELDS = ("oa", "miou", "ari", "ami", "h", "c", "v", "fm", "s", "ch", "n_items")


@dataclass
class MetricsReport:
    oa: Optional[float] = None
    miou: Optional[float] = None
    ari: Optional[float] = None
    ami: Optional[float] = None
    h: Optional[float] = None
    c: Optional[float] = None
    v: Optional[float] = None
    fm: Optional[float] = None
    s: Optional[float] = None
    ch: Optional[float] = None
    n_items: int = 0
    confusion: list = field(default_factory=list)

    def to_json(self) -> str:
        d = asdict(self)
        return json.dumps({k: d[k] for k in (*REPORT_FIELDS, "confusion")}, sort_keys=False)

    @classmethod
    def from_json(cls, text: str) -> "MetricsReport":
        return cls(**json.loads(text))


# -- transfer tables ---------------------------------------------------------------

@dataclass
class TransferSummary:
    train_domain: str
    same_domain: Optional[float]
    off_domain: dict          # test domain -> score
    avg_tl: Optional[float]


def transfer_table(grid: Mapping[tuple, object], metric: str = "oa") -> list[TransferSummary]:
    """Summarise ``{(train_domain, test_domain): report-or-score}`` per training domain.

    AvgTL is the mean over cells whose test domain differs from the training
    domain; it is ``None`` when there are no such cells.
    """
    def score(cell):
        if isinstance(cell, (int, float)):
            return float(cell)
        if isinstance(cell, Mapping):
            return float(cell[metric])
        return float(getattr(cell, metric))

    train_domains = list(dict.fromkeys(tr for tr, _ in grid))
    rows = []
    for tr in train_domains:
        same = None
        off = {}
        for (a, b), cell in grid.items():
            if a != tr:
                continue
            if a == b:
                same = score(cell)
            else:
                off[b] = score(cell)
        avg = math.fsum(off.values()) / len(off) if off else None
        rows.append(TransferSummary(tr, same, off, avg))
    return rows
