"""Box-Cox + standardization, linear-SVM feature ranking, top-k selection."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, OneToOneFeatureMixin, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .corpus import Dataset
from .svm import KernelSVC

LAMBDA_BOUNDS = (-5.0, 5.0)
LAMBDA_XTOL = 1e-5
SHIFT_EPS = 1e-12
_LOG_BRANCH = 1e-10
_INVPHI = (math.sqrt(5.0) - 1.0) / 2.0


def boxcox_apply(lmbda: float, z):
    """(z**lmbda - 1) / lmbda, or log(z) when |lmbda| < 1e-10."""
    z = np.asarray(z, dtype=float)
    if np.any(z <= 0):
        raise ValueError("Box-Cox transform requires positive data")
    if abs(lmbda) < _LOG_BRANCH:
        out = np.log(z)
    else:
        out = np.expm1(lmbda * np.log(z)) / lmbda
    return float(out) if out.ndim == 0 else out


def boxcox_llf(lmbda: float, z) -> float:
    """Profile log-likelihood -N/2 ln(var) + (lmbda - 1) sum(ln z)."""
    logz = np.log(np.asarray(z, dtype=float))
    n = logz.size
    if abs(lmbda) < _LOG_BRANCH:
        log_var = math.log(logz.var())
    else:
        # var((z^l - 1)/l) = var(z^l) / l^2, evaluated in log space
        u = lmbda * logz
        umax = u.max()
        w = np.exp(u - umax)
        log_var = 2.0 * umax + math.log(w.var()) - 2.0 * math.log(abs(lmbda))
    return -0.5 * n * log_var + (lmbda - 1.0) * logz.sum()


def boxcox_fit(column, bounds=LAMBDA_BOUNDS, xtol: float = LAMBDA_XTOL) -> float:
    """Maximum-likelihood lambda by golden-section search on ``bounds``."""
    z = np.asarray(column, dtype=float).ravel()
    if np.any(z <= 0):
        raise ValueError("Box-Cox fit requires positive data")
    if z.size < 10:
        raise ValueError(f"Box-Cox fit needs at least 10 samples, got {z.size}")
    if np.ptp(np.log(z)) == 0:
        raise ValueError("zero variance: lambda is undefined for a constant column")
    a, b = bounds
    c = b - _INVPHI * (b - a)
    d = a + _INVPHI * (b - a)
    fc, fd = boxcox_llf(c, z), boxcox_llf(d, z)
    while b - a > xtol:
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - _INVPHI * (b - a)
            fc = boxcox_llf(c, z)
        else:
            a, c, fc = c, d, fd
            d = a + _INVPHI * (b - a)
            fd = boxcox_llf(d, z)
    return 0.5 * (a + b)


def standardize_fit(X, names=None):
    X = np.atleast_2d(np.asarray(X, dtype=float))
    mean = X.mean(axis=0)
    std = X.std(axis=0)
    bad = np.nonzero(~(std > 0))[0]
    if bad.size:
        label = names[bad[0]] if names is not None else f"column {bad[0]}"
        raise ValueError(f"zero-variance feature {label!r} cannot be standardized")
    return mean, std


def standardize_apply(X, mean, std):
    return (np.asarray(X, dtype=float) - mean) / std


class BoxCoxScaler(OneToOneFeatureMixin, TransformerMixin, BaseEstimator):
    """Per-feature Box-Cox transform followed by standardization.

    Columns with a non-positive minimum are shifted by ``shift_eps - min``
    before the transform; the shift is stored and reused at transform time.
    """

    def __init__(self, standardize=True, shift_eps=SHIFT_EPS, bounds=LAMBDA_BOUNDS):
        self.standardize = standardize
        self.shift_eps = shift_eps
        self.bounds = bounds

    def fit(self, X, y=None):
        X = check_array(X)
        self.n_features_in_ = X.shape[1]
        self.shift_ = np.maximum(0.0, self.shift_eps - X.min(axis=0))
        Z = X + self.shift_
        self.lambdas_ = np.array([boxcox_fit(Z[:, j], self.bounds) for j in range(X.shape[1])])
        T = self._power(Z)
        if self.standardize:
            self.mean_, self.scale_ = standardize_fit(T, getattr(self, "feature_names_", None))
        else:
            self.mean_, self.scale_ = np.zeros(X.shape[1]), np.ones(X.shape[1])
        return self

    def _power(self, Z):
        return np.column_stack([boxcox_apply(l, Z[:, j]) for j, l in enumerate(self.lambdas_)])

    def transform(self, X):
        check_is_fitted(self, "lambdas_")
        X = check_array(X)
        Z = X + self.shift_
        if np.any(Z <= 0):
            j = int(np.nonzero((Z <= 0).any(axis=0))[0][0])
            raise ValueError(f"feature {j}: value below the fitted positive range")
        return (self._power(Z) - self.mean_) / self.scale_

    def to_dict(self) -> dict:
        check_is_fitted(self, "lambdas_")
        return {
            "lambda": self.lambdas_.tolist(),
            "shift": self.shift_.tolist(),
            "mean": self.mean_.tolist(),
            "std": self.scale_.tolist(),
            "order": ["boxcox", "standardize"] if self.standardize else ["boxcox"],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "BoxCoxScaler":
        est = cls(standardize="standardize" in d.get("order", ["standardize"]))
        est.lambdas_ = np.asarray(d["lambda"], dtype=float)
        est.shift_ = np.asarray(d["shift"], dtype=float)
        est.mean_ = np.asarray(d["mean"], dtype=float)
        est.scale_ = np.asarray(d["std"], dtype=float)
        est.n_features_in_ = est.lambdas_.size
        return est


@dataclass
class FeatureRanking:
    entries: list  # (name, |w|), descending

    @property
    def names(self) -> list:
        return [n for n, _ in self.entries]

    def to_dict(self) -> dict:
        return {"ranking": [{"feature": n, "weight": w} for n, w in self.entries]}

    @classmethod
    def from_dict(cls, d: dict) -> "FeatureRanking":
        return cls([(e["feature"], e["weight"]) for e in d["ranking"]])


def rank_features_linear_svm(train: Dataset, C: float = 1.0) -> FeatureRanking:
    """Rank features by |w_j| of a linear SVM fitted on ``train``."""
    if np.unique(train.y).size < 2:
        raise ValueError("both classes must be present to rank features")
    svc = KernelSVC(C=C, kernel="linear").fit(train.X, train.y)
    w = np.abs(svc.coef_[0])
    order = sorted(range(w.size), key=lambda j: (-w[j], j))
    return FeatureRanking([(train.feature_names[j], float(w[j])) for j in order])


def select_top_k(dataset: Dataset, ranking: FeatureRanking, k: int) -> Dataset:
    if k < 1:
        raise ValueError("k must be >= 1")
    if k > len(dataset.feature_names):
        raise ValueError(f"k={k} exceeds the {len(dataset.feature_names)} available features")
    return dataset.columns(ranking.names[:k])


class FeaturePipeline:
    """Box-Cox + standardize on training rows, rank, keep the top-k features."""

    def __init__(self, k: int = 3, C: float = 1.0, rank_on: str = "transformed"):
        if rank_on not in ("transformed", "raw_standardized"):
            raise ValueError("rank_on must be 'transformed' or 'raw_standardized'")
        self.k = k
        self.C = C
        self.rank_on = rank_on

    def fit(self, train: Dataset) -> "FeaturePipeline":
        self.feature_names = list(train.feature_names)
        self.scaler = BoxCoxScaler()
        self.scaler.feature_names_ = self.feature_names
        self.scaler.fit(train.X)
        if self.rank_on == "transformed":
            ranked = Dataset(self.feature_names, self.scaler.transform(train.X), train.y)
        else:
            mean, std = standardize_fit(train.X, self.feature_names)
            ranked = Dataset(self.feature_names, standardize_apply(train.X, mean, std), train.y)
        self.ranking = rank_features_linear_svm(ranked, self.C)
        self.selected = self.ranking.names[: self.k]
        return self

    def transform(self, dataset: Dataset) -> Dataset:
        if list(dataset.feature_names) != self.feature_names:
            raise ValueError(f"expected features {self.feature_names}, got {dataset.feature_names}")
        full = Dataset(self.feature_names, self.scaler.transform(dataset.X), dataset.y,
                       dataset.provenance, dataset.index)
        return full.columns(self.selected)

    def to_dict(self) -> dict:
        return {
            "features": self.feature_names,
            "scaler": self.scaler.to_dict(),
            "ranking": self.ranking.to_dict()["ranking"],
            "selected": self.selected,
            "k": self.k,
            "C": self.C,
            "rank_on": self.rank_on,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FeaturePipeline":
        pipe = cls(d["k"], d["C"], d["rank_on"])
        pipe.feature_names = list(d["features"])
        pipe.scaler = BoxCoxScaler.from_dict(d["scaler"])
        pipe.ranking = FeatureRanking.from_dict({"ranking": d["ranking"]})
        pipe.selected = list(d["selected"])
        return pipe

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def load(cls, path) -> "FeaturePipeline":
        return cls.from_dict(json.loads(Path(path).read_text()))
