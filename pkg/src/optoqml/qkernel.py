"""ZZ feature map, fidelity kernel and Gram-matrix assembly.

The feature map for one repetition is

    H on every qubit
    exp(i x_j Z_j)                      realized as RZ(-2 x_j)
    exp(i (pi - x_j)(pi - x_k) Z_j Z_k) for every pair j < k

and the kernel is K(x, y) = |<0| U(x)^dagger U(y) |0>|^2.
"""

from __future__ import annotations

import csv
import itertools
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.multiclass import unique_labels
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from . import qsim
from .qsim import Circuit
from .svm import KernelSVC

DEFAULT_SHOTS = 1024
DEFAULT_P_NOISE = 0.05
_CHUNK = 2048


@dataclass(frozen=True)
class FeatureMapSpec:
    n_qubits: int = 3
    reps: int = 1
    pairs: tuple | None = None  # None -> all j < k

    def __post_init__(self):
        if self.n_qubits < 1 or self.n_qubits > qsim.MAX_QUBITS:
            raise ValueError(f"n_qubits must be in [1, {qsim.MAX_QUBITS}]")
        if self.reps < 1:
            raise ValueError("reps must be >= 1")
        pairs = self.pairs
        if pairs is None:
            pairs = tuple(itertools.combinations(range(self.n_qubits), 2))
        pairs = tuple((int(j), int(k)) for j, k in pairs)
        for j, k in pairs:
            if not 0 <= j < k < self.n_qubits:
                raise ValueError(f"invalid qubit pair ({j}, {k})")
        object.__setattr__(self, "pairs", pairs)

    def to_dict(self) -> dict:
        return {"n_qubits": self.n_qubits, "reps": self.reps, "pairs": [list(p) for p in self.pairs]}

    @classmethod
    def from_dict(cls, d: dict) -> "FeatureMapSpec":
        pairs = d.get("pairs")
        return cls(d["n_qubits"], d.get("reps", 1), None if pairs is None else tuple(map(tuple, pairs)))


def _check_rows(X, spec: FeatureMapSpec) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[1] != spec.n_qubits:
        raise ValueError(f"expected {spec.n_qubits} features per sample, got {X.shape[1]}")
    if not np.all(np.isfinite(X)):
        raise ValueError("feature values must be finite")
    return X


def feature_map_circuit(x, spec: FeatureMapSpec) -> Circuit:
    x = np.asarray(x, dtype=float).ravel()
    if x.size != spec.n_qubits:
        raise ValueError(f"expected {spec.n_qubits} features, got {x.size}")
    c = Circuit(spec.n_qubits)
    for _ in range(spec.reps):
        for q in range(spec.n_qubits):
            c.h(q)
        for q in range(spec.n_qubits):
            c.rz(q, -2.0 * x[q])
        for j, k in spec.pairs:
            c.zz(j, k, (np.pi - x[j]) * (np.pi - x[k]))
    return c


def feature_map_ops(X, spec: FeatureMapSpec) -> list:
    """Batched (matrix, qubits) ops of the feature map for every row of X."""
    X = _check_rows(X, spec)
    h = qsim.h_matrix()
    ops = []
    for _ in range(spec.reps):
        ops += [(h, (q,)) for q in range(spec.n_qubits)]
        ops += [(qsim.rz_matrix(-2.0 * X[:, q]), (q,)) for q in range(spec.n_qubits)]
        ops += [(qsim.zz_matrix((np.pi - X[:, j]) * (np.pi - X[:, k])), (j, k)) for j, k in spec.pairs]
    return ops


def adjoint_ops(ops) -> list:
    return [(np.swapaxes(m, -1, -2).conj(), q) for m, q in reversed(ops)]


def feature_states(X, spec: FeatureMapSpec) -> np.ndarray:
    """U(x)|0> for every row, shape (N, 2**n)."""
    X = _check_rows(X, spec)
    psi = qsim.zero_state(spec.n_qubits, batch=X.shape[0])
    return qsim.evolve_statevector(feature_map_ops(X, spec), spec.n_qubits, psi)


def kernel_circuit(x, y, spec: FeatureMapSpec) -> Circuit:
    """U(x)^dagger U(y): run the map for y, then the adjoint map for x."""
    return feature_map_circuit(y, spec).compose(feature_map_circuit(x, spec).adjoint())


def kernel_exact(x, y, spec: FeatureMapSpec) -> float:
    psi = qsim.run_statevector(kernel_circuit(x, y, spec))
    return float(abs(psi[0]) ** 2)


def kernel_shots(x, y, spec: FeatureMapSpec, shots: int = DEFAULT_SHOTS,
                 p_noise: float = 0.0, seed=None) -> float:
    rho = qsim.run_density(kernel_circuit(x, y, spec), p_noise)
    counts = qsim.sample(qsim.probabilities(rho), shots, seed)
    return counts.frequency(0)


def pair_distributions(Xa, Xb, spec: FeatureMapSpec, p_noise: float) -> np.ndarray:
    """Outcome distributions of the noisy U(a)^dagger U(b) for paired rows, (N, 2**n)."""
    Xa = _check_rows(Xa, spec)
    Xb = _check_rows(Xb, spec)
    if Xa.shape != Xb.shape:
        raise ValueError("paired row sets must have equal shape")
    if not 0.0 <= p_noise <= 1.0:
        raise ValueError(f"p_noise must lie in [0, 1], got {p_noise}")
    n = spec.n_qubits
    out = np.empty((Xa.shape[0], 2 ** n))
    for start in range(0, Xa.shape[0], _CHUNK):
        a, b = Xa[start:start + _CHUNK], Xb[start:start + _CHUNK]
        ops = feature_map_ops(b, spec) + adjoint_ops(feature_map_ops(a, spec))
        rho = np.zeros((a.shape[0], 2 ** n, 2 ** n), dtype=complex)
        rho[:, 0, 0] = 1.0
        rho = qsim.evolve_density(ops, n, rho, p_noise)
        out[start:start + a.shape[0]] = np.diagonal(rho, axis1=1, axis2=2).real
    out = np.clip(out, 0.0, None)
    return out / out.sum(axis=1, keepdims=True)


@dataclass
class GramMatrix:
    values: np.ndarray
    row_ids: list
    col_ids: list
    mode: dict = field(default_factory=lambda: {"mode": "exact"})

    @property
    def is_square(self) -> bool:
        return self.values.shape[0] == self.values.shape[1] and self.row_ids == self.col_ids

    def min_eigenvalue(self) -> float:
        if not self.is_square:
            raise ValueError("eigenvalues need a square train-vs-train Gram matrix")
        return float(np.linalg.eigvalsh(0.5 * (self.values + self.values.T)).min())

    def to_csv(self, path) -> None:
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["id"] + [str(c) for c in self.col_ids])
            for rid, row in zip(self.row_ids, self.values):
                w.writerow([str(rid)] + [repr(float(v)) for v in row])

    @classmethod
    def from_csv(cls, path, mode: dict | None = None) -> "GramMatrix":
        with Path(path).open(newline="") as fh:
            rows = list(csv.reader(fh))
        if not rows or rows[0][0] != "id":
            raise ValueError(f"{path}: missing 'id' header")
        cols = rows[0][1:]
        values = np.array([[float(v) for v in r[1:]] for r in rows[1:]], dtype=float).reshape(-1, len(cols))
        return cls(values, [r[0] for r in rows[1:]], cols, mode or {"mode": "unknown"})


def gram(X_rows, Y_rows=None, spec: FeatureMapSpec | None = None, mode: str = "exact",
         shots: int = DEFAULT_SHOTS, p_noise: float = DEFAULT_P_NOISE, seed: int = 0,
         row_ids=None, col_ids=None, stream: int = 0) -> GramMatrix:
    """K[i, j] = k(X_rows[i], Y_rows[j]); ``Y_rows=None`` means train-vs-train.

    Shot estimates use one generator per entry, seeded with
    (seed, stream, i, j), so any entry is reproducible on its own and equals
    ``kernel_shots(X_rows[i], Y_rows[j], ..., seed=[seed, stream, i, j])``.
    Square matrices estimate the upper triangle once and mirror it; the
    diagonal is fixed to 1 in both modes.
    """
    spec = spec or FeatureMapSpec()
    X = _check_rows(X_rows, spec)
    square = Y_rows is None
    Y = X if square else _check_rows(Y_rows, spec)
    if X.shape[0] == 0 or Y.shape[0] == 0:
        raise ValueError("Gram matrix needs non-empty row sets")
    row_ids = list(range(X.shape[0])) if row_ids is None else list(row_ids)
    col_ids = (row_ids if square else list(range(Y.shape[0]))) if col_ids is None else list(col_ids)

    if square:
        ii, jj = np.triu_indices(X.shape[0], k=1)
    else:
        ii, jj = (a.ravel() for a in np.indices((X.shape[0], Y.shape[0])))

    if mode == "exact":
        info = {"mode": "exact"}
        sx = feature_states(X, spec)
        sy = sx if square else feature_states(Y, spec)
        vals = np.abs(sx.conj() @ sy.T) ** 2
        K = np.clip(vals, 0.0, 1.0)
        if square:
            K = np.triu(K, 1)
            K = K + K.T
    elif mode == "shots":
        if shots < 1:
            raise ValueError("shots must be >= 1")
        info = {"mode": "shots", "shots": int(shots), "p_noise": float(p_noise), "seed": int(seed),
                "stream": int(stream)}
        dists = pair_distributions(X[ii], Y[jj], spec, p_noise)
        est = np.empty(ii.size)
        for t, (i, j) in enumerate(zip(ii.tolist(), jj.tolist())):
            rng = np.random.default_rng([seed, stream, i, j])
            est[t] = rng.multinomial(shots, dists[t])[0] / shots
        K = np.zeros((X.shape[0], Y.shape[0]))
        K[ii, jj] = est
        if square:
            K = K + K.T
    else:
        raise ValueError(f"mode must be 'exact' or 'shots', got {mode!r}")
    if square:
        np.fill_diagonal(K, 1.0)
    return GramMatrix(K, row_ids, col_ids, info)


class QuantumKernelSVC(ClassifierMixin, BaseEstimator):
    """SVM on a precomputed fidelity-kernel Gram matrix.

    Parameters
    ----------
    C : float, default=1.0
    reps : int, default=1
        Feature-map repetitions.
    mode : {'exact', 'shots'}, default='exact'
    shots : int, default=1024
    p_noise : float, default=0.05
        Depolarizing probability per gate in 'shots' mode.
    seed : int, default=0
    """

    def __init__(self, C=1.0, reps=1, mode="exact", shots=DEFAULT_SHOTS, p_noise=DEFAULT_P_NOISE,
                 seed=0, tol=1e-3):
        self.C = C
        self.reps = reps
        self.mode = mode
        self.shots = shots
        self.p_noise = p_noise
        self.seed = seed
        self.tol = tol

    def _spec(self):
        return FeatureMapSpec(self.n_features_in_, self.reps)

    def _gram(self, X, Y=None, stream=0):
        return gram(X, Y, self._spec(), self.mode, self.shots, self.p_noise, self.seed, stream=stream)

    def fit(self, X, y):
        X, y = check_X_y(X, y)
        self.classes_ = unique_labels(y)
        self.n_features_in_ = X.shape[1]
        self.X_train_ = X
        self.gram_train_ = self._gram(X)
        self.svc_ = KernelSVC(C=self.C, kernel="precomputed", tol=self.tol).fit(self.gram_train_.values, y)
        return self

    def kernel_rows(self, X) -> GramMatrix:
        """Kernel of X against the training rows (stream 1, disjoint from training seeds)."""
        check_is_fitted(self, "svc_")
        return self._gram(check_array(X), self.X_train_, stream=1)

    def decision_function(self, X):
        return self.svc_.decision_function(self.kernel_rows(X).values)

    def predict(self, X):
        return self.classes_[(self.decision_function(X) >= 0).astype(int)]

    def to_dict(self) -> dict:
        check_is_fitted(self, "svc_")
        return {"params": self.get_params(), "classes": self.classes_.tolist(),
                "X_train": self.X_train_.tolist(), "gram_mode": self.gram_train_.mode,
                "svc": self.svc_.to_dict()}

    @classmethod
    def from_dict(cls, d: dict) -> "QuantumKernelSVC":
        est = cls(**d["params"])
        est.classes_ = np.asarray(d["classes"])
        est.X_train_ = np.asarray(d["X_train"], dtype=float)
        est.n_features_in_ = est.X_train_.shape[1]
        est.svc_ = KernelSVC.from_dict(d["svc"])
        return est
