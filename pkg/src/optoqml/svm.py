"""Binary kernel SVM trained by sequential minimal optimization on the dual.

Dual problem (labels y in {-1, +1}):

    min_a  1/2 sum_ij y_i y_j a_i a_j K_ij - sum_i a_i
    s.t.   sum_i y_i a_i = 0,  0 <= a_i <= C

Working pairs are chosen by maximal KKT violation (ties -> lowest index), so
training is bit-reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.multiclass import unique_labels
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

KERNELS = ("linear", "rbf", "precomputed")


class ConvergenceError(RuntimeError):
    """SMO hit ``max_iter``; ``model`` holds the last iterate."""

    def __init__(self, message, model=None):
        super().__init__(message)
        self.model = model


@dataclass
class KernelSpec:
    kind: str
    gamma: float | None = None
    matrix_ref: str | None = None

    def __post_init__(self):
        if self.kind not in KERNELS:
            raise ValueError(f"unknown kernel {self.kind!r}; expected one of {KERNELS}")
        if self.kind == "rbf" and not (self.gamma is not None and self.gamma > 0):
            raise ValueError("rbf kernel needs gamma > 0")

    def __call__(self, X, Y):
        if self.kind == "linear":
            return np.asarray(X, float) @ np.asarray(Y, float).T
        if self.kind == "rbf":
            return rbf_kernel(X, Y, self.gamma)
        raise ValueError("a precomputed kernel has no feature-space evaluation")

    def to_dict(self):
        return {"kind": self.kind, "gamma": self.gamma, "matrix_ref": self.matrix_ref}


def rbf(x, y, gamma: float) -> float:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape:
        raise ValueError(f"dimension mismatch: {x.shape} vs {y.shape}")
    if not gamma > 0:
        raise ValueError("gamma must be positive")
    return float(np.exp(-gamma * np.sum((x - y) ** 2)))


def rbf_kernel(X, Y, gamma: float) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    if X.shape[1] != Y.shape[1]:
        raise ValueError(f"dimension mismatch: {X.shape[1]} vs {Y.shape[1]} features")
    sq = (X ** 2).sum(1)[:, None] + (Y ** 2).sum(1)[None, :] - 2.0 * X @ Y.T
    return np.exp(-gamma * np.clip(sq, 0.0, None))


def gamma_scale(X) -> float:
    """1 / (n_features * Var(X)), variance over all entries."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    var = X.var()
    if not var > 0:
        raise ValueError("cannot scale gamma: input has zero variance")
    return 1.0 / (X.shape[1] * var)


def dual_objective(alphas, y, K) -> float:
    ya = np.asarray(y) * np.asarray(alphas)
    return float(0.5 * ya @ K @ ya - np.sum(alphas))


@dataclass
class SvmModel:
    alphas: np.ndarray
    y: np.ndarray
    b: float
    C: float
    kernel: KernelSpec
    support: np.ndarray
    X_train: np.ndarray | None = None
    n_iter: int = 0
    objective: float = float("nan")
    meta: dict = field(default_factory=dict)

    @property
    def dual_coef(self) -> np.ndarray:
        return (self.y * self.alphas)[self.support]

    def kernel_rows(self, X) -> np.ndarray:
        """K(x, x_sv) rows; for precomputed kernels X already holds K(x, x_train)."""
        if self.kernel.kind == "precomputed":
            K = np.atleast_2d(np.asarray(X, dtype=float))
            if K.shape[1] != self.alphas.size:
                raise ValueError(
                    f"precomputed kernel rows have {K.shape[1]} columns, model was trained on {self.alphas.size}"
                )
            return K[:, self.support]
        return self.kernel(X, self.X_train[self.support])

    def decision_function(self, X) -> np.ndarray:
        return self.kernel_rows(X) @ self.dual_coef + self.b


def _bias(alphas, y, grad_part, C):
    """Returns (b, used_fallback). ``grad_part`` is g_i = sum_j y_j a_j K_ji."""
    eps = 1e-10 * C
    interior = (alphas > eps) & (alphas < C - eps)
    if np.any(interior):
        return float(np.mean(y[interior] - grad_part[interior])), False
    if not np.any(alphas > eps):
        raise ValueError("no support vectors: bias undefined")
    # KKT interval for b when every multiplier sits at a bound
    at_zero = alphas <= eps
    r = y - grad_part  # value of b that puts point i exactly on its margin
    lower = np.r_[r[(y > 0) & at_zero], r[(y < 0) & ~at_zero]]
    upper = np.r_[r[(y > 0) & ~at_zero], r[(y < 0) & at_zero]]
    lo = lower.max() if lower.size else upper.min()
    hi = upper.min() if upper.size else lower.max()
    return float(0.5 * (lo + hi)), True


def bias(model: SvmModel, K) -> float:
    g = np.asarray(K) @ (model.y * model.alphas)
    return _bias(model.alphas, model.y, g, model.C)[0]


def kkt_violation(alphas, y, K, b, C) -> float:
    """Largest KKT violation of the margins y_i f(x_i)."""
    m = y * (K @ (y * alphas) + b)
    eps = 1e-10 * C
    lo = alphas <= eps
    hi = alphas >= C - eps
    mid = ~lo & ~hi
    v = np.zeros_like(m)
    v[lo] = np.clip(1.0 - m[lo], 0.0, None)
    v[hi] = np.clip(m[hi] - 1.0, 0.0, None)
    v[mid] = np.abs(m[mid] - 1.0)
    return float(v.max()) if v.size else 0.0


def smo_solve(K, y, C=1.0, eps=1e-6, max_iter=1_000_000, callback=None):
    """Run SMO on a full Gram matrix. Returns (alphas, g, n_iter, converged).

    ``g`` is sum_j y_j a_j K_ji at the returned iterate. ``callback(alphas)``
    is invoked after each accepted pair update.
    """
    K = np.asarray(K, dtype=float)
    y = np.asarray(y, dtype=float)
    n = y.size
    alphas = np.zeros(n)
    G = -np.ones(n)  # gradient of the dual objective, Q a - 1
    diag = np.diag(K).copy()
    pos = y > 0
    it = 0
    converged = False
    while it < max_iter:
        up = np.where(pos, alphas < C, alphas > 0)
        low = np.where(pos, alphas > 0, alphas < C)
        v = -y * G
        vu = np.where(up, v, -np.inf)
        vl = np.where(low, v, np.inf)
        i = int(np.argmax(vu))
        j = int(np.argmin(vl))
        gap = vu[i] - vl[j]
        if gap <= eps:
            converged = True
            break
        eta = diag[i] + diag[j] - 2.0 * K[i, j]
        t = gap / max(eta, 1e-12)
        t_i = C - alphas[i] if pos[i] else alphas[i]
        t_j = alphas[j] if pos[j] else C - alphas[j]
        t = min(t, t_i, t_j)
        alphas[i] += y[i] * t
        alphas[j] -= y[j] * t
        # snap multipliers that reached a bound
        for k, tk in ((i, t_i), (j, t_j)):
            if t == tk:
                alphas[k] = C if (alphas[k] > C / 2) else 0.0
        G += t * y * (K[:, i] - K[:, j])
        it += 1
        if callback is not None:
            callback(alphas)
    g = y * (G + 1.0)
    return alphas, g, it, converged


def smo_train(kernel: KernelSpec, X, y, C: float = 1.0, tol: float = 1e-3,
              max_iter: int = 1_000_000, eps: float | None = None) -> SvmModel:
    """Train on features ``X`` (or a square Gram matrix for precomputed kernels).

    ``tol`` is the KKT tolerance enforced on return; ``eps`` is the SMO stopping
    gap and defaults to ``min(tol / 10, 1e-6)``, tight enough that the dual
    objective sits within 1e-6 of the optimum on small problems.
    """
    y = np.asarray(y, dtype=float)
    if not set(np.unique(y)) <= {-1.0, 1.0}:
        raise ValueError("labels must be -1 or +1")
    if np.unique(y).size < 2:
        raise ValueError("both classes must be present")
    if not C > 0:
        raise ValueError("C must be positive")
    if kernel.kind == "precomputed":
        K = np.asarray(X, dtype=float)
        if K.ndim != 2 or K.shape[0] != K.shape[1] or K.shape[0] != y.size:
            raise ValueError("precomputed kernel must be square and match the labels")
        if np.abs(K - K.T).max() > 1e-9:
            raise ValueError("precomputed kernel is not symmetric")
        X_train = None
    else:
        X_train = np.asarray(X, dtype=float)
        K = kernel(X_train, X_train)
    eps = min(tol / 10, 1e-6) if eps is None else eps
    alphas, g, n_iter, converged = smo_solve(K, y, C, eps, max_iter)
    support = np.nonzero(alphas > 0)[0]
    b, fallback = _bias(alphas, y, g, C)
    model = SvmModel(alphas, y, b, float(C), kernel, support, X_train, n_iter,
                     dual_objective(alphas, y, K), {"bias_fallback": fallback})
    if not converged:
        raise ConvergenceError(f"SMO did not converge within {max_iter} pair updates", model)
    viol = kkt_violation(alphas, y, K, b, C)
    model.meta["kkt_violation"] = viol
    if viol > tol:
        raise ConvergenceError(f"KKT violation {viol:.3g} exceeds tol={tol} after {n_iter} updates", model)
    return model


def decision(model: SvmModel, x):
    """(score, label) for one sample, with sgn(0) = +1."""
    score = float(model.decision_function(np.atleast_2d(x))[0])
    return score, (1 if score >= 0 else -1)


class KernelSVC(ClassifierMixin, BaseEstimator):
    """Binary SVM classifier with linear, RBF or precomputed kernels.

    Parameters
    ----------
    C : float, default=1.0
        Box constraint on the dual coefficients.
    kernel : {'linear', 'rbf', 'precomputed'}, default='rbf'
    gamma : 'scale' or float, default='scale'
        RBF width; 'scale' uses 1 / (n_features * X.var()).
    tol : float, default=1e-3
        KKT tolerance checked after training.
    max_iter : int, default=1_000_000
        Maximum number of SMO pair updates.
    """

    def __init__(self, C=1.0, kernel="rbf", gamma="scale", tol=1e-3, max_iter=1_000_000):
        self.C = C
        self.kernel = kernel
        self.gamma = gamma
        self.tol = tol
        self.max_iter = max_iter

    def _spec(self, X):
        if self.kernel == "rbf":
            gamma = gamma_scale(X) if self.gamma == "scale" else float(self.gamma)
            return KernelSpec("rbf", gamma)
        return KernelSpec(self.kernel)

    def fit(self, X, y):
        X, y = check_X_y(X, y)
        self.classes_ = unique_labels(y)
        if self.classes_.size != 2:
            raise ValueError(f"binary classification only, got classes {self.classes_}")
        y_pm = np.where(y == self.classes_[1], 1.0, -1.0)
        self.n_features_in_ = X.shape[1]
        self.model_ = smo_train(self._spec(X), X, y_pm, self.C, self.tol, self.max_iter)
        self.support_ = self.model_.support
        self.dual_coef_ = self.model_.dual_coef[None, :]
        self.intercept_ = np.array([self.model_.b])
        if self.kernel != "precomputed":
            self.support_vectors_ = X[self.support_]
        return self

    @property
    def coef_(self):
        if self.kernel != "linear":
            raise AttributeError("coef_ is only defined for the linear kernel")
        check_is_fitted(self, "model_")
        return self.dual_coef_ @ self.support_vectors_

    def decision_function(self, X):
        check_is_fitted(self, "model_")
        X = check_array(X)
        return self.model_.decision_function(X)

    def predict(self, X):
        return self.classes_[(self.decision_function(X) >= 0).astype(int)]

    def to_dict(self) -> dict:
        check_is_fitted(self, "model_")
        m = self.model_
        out = {
            "params": self.get_params(),
            "classes": self.classes_.tolist(),
            "kernel": m.kernel.to_dict(),
            "C": m.C,
            "b": m.b,
            "n_train": int(m.alphas.size),
            "support": m.support.tolist(),
            "alphas": m.alphas[m.support].tolist(),
            "y": m.y[m.support].tolist(),
            "meta": m.meta,
        }
        if m.X_train is not None:
            out["support_vectors"] = m.X_train[m.support].tolist()
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "KernelSVC":
        est = cls(**d["params"])
        est.classes_ = np.asarray(d["classes"])
        n = d["n_train"]
        support = np.asarray(d["support"], dtype=int)
        alphas = np.zeros(n)
        alphas[support] = d["alphas"]
        y = np.zeros(n)
        y[support] = d["y"]
        X_train = None
        if "support_vectors" in d:
            sv = np.asarray(d["support_vectors"], dtype=float)
            X_train = np.zeros((n, sv.shape[1]))
            X_train[support] = sv
            est.support_vectors_ = sv
            est.n_features_in_ = sv.shape[1]
        else:
            est.n_features_in_ = n
        est.model_ = SvmModel(alphas, y, d["b"], d["C"], KernelSpec(**d["kernel"]), support,
                              X_train, meta=d.get("meta", {}))
        est.support_ = support
        est.dual_coef_ = est.model_.dual_coef[None, :]
        est.intercept_ = np.array([d["b"]])
        return est
