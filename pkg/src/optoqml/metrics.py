"""Accuracy, confusion matrix, ROC/AUC, bootstrap intervals and permutation importance."""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)

DEFAULT_BOOTSTRAP = 1000


def _pair(preds, labels):
    preds = np.asarray(preds).ravel()
    labels = np.asarray(labels).ravel()
    if preds.size != labels.size:
        raise ValueError(f"length mismatch: {preds.size} predictions vs {labels.size} labels")
    if labels.size == 0:
        raise ValueError("need at least one sample")
    return preds, labels


def accuracy(preds, labels) -> float:
    preds, labels = _pair(preds, labels)
    return float(np.mean(preds == labels))


def confusion(preds, labels) -> np.ndarray:
    """[[TN, FP], [FN, TP]]: rows are true classes, columns predictions."""
    preds, labels = _pair(preds, labels)
    out = np.zeros((2, 2), dtype=int)
    np.add.at(out, (labels.astype(int), preds.astype(int)), 1)
    return out


def precision_recall(conf) -> dict:
    conf = np.asarray(conf)
    out = {}
    for c in (0, 1):
        predicted, actual = conf[:, c].sum(), conf[c, :].sum()
        out[str(c)] = {
            "precision": float(conf[c, c] / predicted) if predicted else 0.0,
            "recall": float(conf[c, c] / actual) if actual else 0.0,
        }
    return out


def roc_curve(scores, labels):
    """ROC vertices for thresholds at each distinct score, highest first; ties share a vertex."""
    scores, labels = _pair(scores, labels)
    scores = scores.astype(float)
    labels = labels.astype(int)
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("ROC needs both classes among the labels")
    order = np.argsort(-scores, kind="stable")
    s, y = scores[order], labels[order]
    last = np.r_[np.flatnonzero(np.diff(s) != 0), s.size - 1]
    tp = np.cumsum(y)[last]
    fp = (last + 1) - tp
    fpr = np.r_[0.0, fp / n_neg]
    tpr = np.r_[0.0, tp / n_pos]
    return fpr, tpr


def roc_auc(scores, labels):
    """(list of (fpr, tpr) points, trapezoidal AUC)."""
    fpr, tpr = roc_curve(scores, labels)
    auc = float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2.0))
    return list(zip(fpr.tolist(), tpr.tolist())), auc


@dataclass
class BootstrapCI:
    mean: float
    lower: float
    upper: float
    B: int
    seed: int
    estimate: float = float("nan")  # metric on the unresampled data
    skipped: int = 0

    def to_dict(self) -> dict:
        return asdict(self)


def _auc_metric(scores, labels) -> float:
    return roc_auc(scores, labels)[1]


METRICS = {"accuracy": accuracy, "auc": _auc_metric}


def bootstrap_ci(values, labels, metric="accuracy", B: int = DEFAULT_BOOTSTRAP, seed: int = 0,
                 level: float = 0.95) -> BootstrapCI:
    """Percentile interval over B resamples with replacement.

    ``values`` are predictions for accuracy or scores for AUC. Resamples
    holding a single class are redrawn (for every metric, so accuracy and
    AUC intervals use the same resample population) and counted in ``skipped``.
    """
    if B < 100:
        raise ValueError("B must be >= 100")
    fn = METRICS[metric] if isinstance(metric, str) else metric
    values, labels = _pair(values, labels)
    if np.unique(labels).size < 2:
        raise ValueError("bootstrap needs both classes in the labels")
    rng = np.random.default_rng(seed)
    n = labels.size
    stats = np.empty(B)
    skipped = 0
    k = 0
    while k < B:
        idx = rng.integers(0, n, n)
        if np.unique(labels[idx]).size < 2:
            skipped += 1
            continue
        stats[k] = fn(values[idx], labels[idx])
        k += 1
    if skipped:
        log.info("bootstrap redrew %d single-class resamples", skipped)
    tail = 100.0 * (1.0 - level) / 2.0
    lower, upper = np.percentile(stats, [tail, 100.0 - tail])
    mean = float(stats.mean())
    return BootstrapCI(mean, float(min(lower, mean)), float(max(upper, mean)), B, seed,
                       float(fn(values, labels)), skipped)


@dataclass
class PermImportance:
    features: list
    mean: list
    std: list
    baseline: float
    repeats: int
    seed: int

    def ranking(self) -> list:
        order = sorted(range(len(self.features)), key=lambda i: (-self.mean[i], i))
        return [self.features[i] for i in order]

    def to_dict(self) -> dict:
        return asdict(self)


def permutation_importance(model_predict, X, y, feature_names=None, R: int = 10, seed: int = 0,
                           metric="accuracy") -> PermImportance:
    """Mean and std over R shuffles of baseline score minus score with one column permuted.

    ``model_predict`` maps an (N, d) array to predictions (or scores when
    ``metric='auc'``). Each feature gets its own child generator, so results
    do not depend on the order features are visited.
    """
    if R < 1:
        raise ValueError("R must be >= 1")
    fn = METRICS[metric] if isinstance(metric, str) else metric
    X = np.asarray(X, dtype=float)
    y = np.asarray(y)
    names = list(feature_names) if feature_names is not None else [f"x{j}" for j in range(X.shape[1])]
    if len(names) != X.shape[1]:
        raise ValueError("feature_names must match the number of columns")
    base = float(fn(model_predict(X), y))
    children = np.random.SeedSequence(seed).spawn(X.shape[1])
    means, stds = [], []
    for j in range(X.shape[1]):
        rng = np.random.default_rng(children[j])
        drops = np.empty(R)
        for r in range(R):
            Xp = X.copy()
            Xp[:, j] = X[rng.permutation(X.shape[0]), j]
            drops[r] = base - fn(model_predict(Xp), y)
        means.append(float(drops.mean()))
        stds.append(float(drops.std()))
    return PermImportance(names, means, stds, base, R, seed)


@dataclass
class EvalReport:
    model: str
    accuracy: float
    confusion: list
    roc: list
    auc: float
    per_class: dict
    n: int
    accuracy_ci: dict | None = None
    auc_ci: dict | None = None
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if int(np.sum(self.confusion)) != self.n:
            raise ValueError("confusion matrix does not sum to N")

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def from_json(cls, path) -> "EvalReport":
        return cls(**json.loads(Path(path).read_text()))

    def roc_to_csv(self, path) -> None:
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["fpr", "tpr"])
            for f, t in self.roc:
                w.writerow([repr(float(f)), repr(float(t))])

    def confusion_to_csv(self, path) -> None:
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["true\\pred", "0", "1"])
            for c, row in enumerate(self.confusion):
                w.writerow([c] + [int(v) for v in row])


def evaluate(model: str, preds, scores, labels, B: int = DEFAULT_BOOTSTRAP, seed: int = 0,
             extra: dict | None = None) -> EvalReport:
    """Full report; ``scores`` rank class 1 higher (decision value or class-1 probability)."""
    preds, labels = _pair(preds, labels)
    conf = confusion(preds, labels)
    roc, auc = roc_auc(scores, labels)
    return EvalReport(
        model=model,
        accuracy=accuracy(preds, labels),
        confusion=conf.tolist(),
        roc=[list(p) for p in roc],
        auc=auc,
        per_class=precision_recall(conf),
        n=int(labels.size),
        accuracy_ci=bootstrap_ci(preds, labels, "accuracy", B, seed).to_dict(),
        auc_ci=bootstrap_ci(scores, labels, "auc", B, seed).to_dict(),
        extra=dict(extra or {}),
    )
