"""Hybrid variational classifier: ZZ feature map, TwoLocal ansatz, parity
readout and a 2x2 linear head, trained with parameter-shift gradients."""

from __future__ import annotations

import csv
import itertools
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.multiclass import unique_labels
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from . import qsim
from .qkernel import FeatureMapSpec, feature_map_circuit, feature_states
from .qsim import Circuit

SHIFT = np.pi / 2
HISTORY_HEADER = ("epoch", "train_loss", "val_loss", "train_acc", "val_acc", "lr")


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class AnsatzSpec:
    """L blocks of [RY on every qubit, RZ on every qubit, CX over all j < k].

    Parameters are laid out block by block; inside a block all RY angles
    (qubit 0..n-1) come first, then all RZ angles.
    """

    n_qubits: int = 3
    layers: int = 4
    final_rotation_layer: bool = False

    def __post_init__(self):
        if not 1 <= self.n_qubits <= qsim.MAX_QUBITS or self.layers < 1:
            raise ValueError("need 1 <= n_qubits <= 8 and layers >= 1")

    @property
    def n_params(self) -> int:
        return 2 * self.n_qubits * (self.layers + int(self.final_rotation_layer))

    @property
    def pairs(self) -> list:
        return list(itertools.combinations(range(self.n_qubits), 2))

    def layout(self) -> list:
        """(gate name, qubit) for each parameter index, plus entangler markers (None)."""
        n = self.n_qubits
        rot = [("RY", q) for q in range(n)] + [("RZ", q) for q in range(n)]
        out = []
        for _ in range(self.layers):
            out += rot + [None]
        if self.final_rotation_layer:
            out += rot
        return out


def ansatz_circuit(theta, spec: AnsatzSpec) -> Circuit:
    theta = _check_theta(theta, spec)
    c = Circuit(spec.n_qubits)
    k = 0
    for item in spec.layout():
        if item is None:
            for j, t in spec.pairs:
                c.cx(j, t)
        else:
            c.append(item[0], (item[1],), theta[k])
            k += 1
    return c


def _check_theta(theta, spec: AnsatzSpec) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    if theta.shape[-1] != spec.n_params:
        raise ValueError(f"expected {spec.n_params} ansatz parameters, got {theta.shape[-1]}")
    if not np.all(np.isfinite(theta)):
        raise ValueError("ansatz parameters must be finite")
    return theta


def ansatz_unitaries(thetas, spec: AnsatzSpec) -> np.ndarray:
    """Matrices M with M[v] = U(thetas[v]).T, so that a row state maps as psi @ M[v]."""
    thetas = np.atleast_2d(_check_theta(thetas, spec))
    d = 2 ** spec.n_qubits
    rows = np.broadcast_to(np.eye(d, dtype=complex), (thetas.shape[0], d, d)).copy()
    cx = qsim.cx_matrix()
    factory = {"RY": qsim.ry_matrix, "RZ": qsim.rz_matrix}
    k = 0
    for item in spec.layout():
        if item is None:
            for pair in spec.pairs:
                rows = qsim.apply_matrix(rows, cx, pair, spec.n_qubits)
        else:
            rows = qsim.apply_matrix(rows, factory[item[0]](thetas[:, k]), (item[1],), spec.n_qubits)
            k += 1
    return rows


def parity(index: int, n_qubits: int) -> int:
    if not 0 <= index < 2 ** n_qubits:
        raise ValueError(f"basis index {index} out of range for {n_qubits} qubits")
    return bin(index).count("1") % 2


def parity_classes(n_qubits: int) -> np.ndarray:
    return np.array([parity(i, n_qubits) for i in range(2 ** n_qubits)])


def class_probabilities(states, n_qubits: int) -> np.ndarray:
    """(..., 2**n) amplitudes -> (..., 2) parity-class probabilities."""
    probs = np.abs(states) ** 2
    odd = parity_classes(n_qubits).astype(bool)
    return np.stack([probs[..., ~odd].sum(-1), probs[..., odd].sum(-1)], axis=-1)


def qnn_forward(x, theta, spec: AnsatzSpec, fmap: FeatureMapSpec | None = None) -> tuple:
    fmap = fmap or FeatureMapSpec(spec.n_qubits)
    circuit = feature_map_circuit(x, fmap).compose(ansatz_circuit(theta, spec))
    p = class_probabilities(qsim.run_statevector(circuit), spec.n_qubits)
    return float(p[0]), float(p[1])


def head_forward(probs, W, b) -> np.ndarray:
    return np.asarray(probs, dtype=float) @ np.asarray(W, dtype=float).T + np.asarray(b, dtype=float)


def softmax(z) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def ce_loss(logits, labels) -> float:
    """Mean of -log softmax(z)[label] over the batch."""
    z = np.atleast_2d(np.asarray(logits, dtype=float))
    labels = np.atleast_1d(np.asarray(labels, dtype=int))
    if z.shape[0] == 0 or z.shape[0] != labels.size:
        raise ValueError("logits and labels must be non-empty and aligned")
    zmax = z.max(axis=1, keepdims=True)
    lse = zmax[:, 0] + np.log(np.exp(z - zmax).sum(axis=1))
    return float(np.mean(lse - z[np.arange(z.shape[0]), labels]))


# --- gradients -----------------------------------------------------------

def _shifted_thetas(theta: np.ndarray) -> np.ndarray:
    """Row 0 = theta, rows 1..P = +shift, rows P+1..2P = -shift."""
    p = theta.size
    eye = np.eye(p) * SHIFT
    return np.vstack([theta[None], theta + eye, theta - eye])


def _batch_grads(psi, labels, theta, W, b, spec: AnsatzSpec):
    """Loss and gradients of the mean CE w.r.t. theta, W, b for feature states psi."""
    M = ansatz_unitaries(_shifted_thetas(theta), spec)
    probs = class_probabilities(np.einsum("bi,vij->vbj", psi, M), spec.n_qubits)  # (2P+1, B, 2)
    p0 = probs[0]
    logits = head_forward(p0, W, b)
    loss = ce_loss(logits, labels)
    dz = softmax(logits)
    dz[np.arange(labels.size), labels] -= 1.0
    dz /= labels.size
    dp = dz @ np.asarray(W)  # dL/dp, (B, 2)
    n = theta.size
    dprob = 0.5 * (probs[1:n + 1] - probs[n + 1:])  # (P, B, 2)
    g_theta = np.einsum("pbc,bc->p", dprob, dp)
    g_W = dz.T @ p0
    g_b = dz.sum(axis=0)
    return loss, g_theta, g_W, g_b, p0


def grad_theta_parameter_shift(x, theta, loss_context) -> np.ndarray:
    """d(mean CE)/d(theta) by the +-pi/2 shift rule.

    ``loss_context`` is a dict with keys W, b, labels and optional spec / fmap.
    ``x`` may be one sample or a batch.
    """
    spec = loss_context.get("spec", AnsatzSpec())
    fmap = loss_context.get("fmap", FeatureMapSpec(spec.n_qubits))
    theta = _check_theta(theta, spec)
    psi = feature_states(np.atleast_2d(x), fmap)
    labels = np.atleast_1d(np.asarray(loss_context["labels"], dtype=int))
    return _batch_grads(psi, labels, theta, loss_context["W"], loss_context["b"], spec)[1]


# --- optimizer, scheduler, stopper ---------------------------------------

@dataclass
class OptimizerState:
    m: np.ndarray
    v: np.ndarray
    v_max: np.ndarray
    t: int = 0
    lr: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    amsgrad: bool = True

    @classmethod
    def zeros(cls, n: int, lr: float = 0.01, **kw) -> "OptimizerState":
        return cls(np.zeros(n), np.zeros(n), np.zeros(n), 0, lr, **kw)


def adam_step(state: OptimizerState, grads, params):
    """One Adam update with bias correction; AMSGrad caps with max(v_max, v_hat)."""
    g = np.asarray(grads, dtype=float)
    params = np.asarray(params, dtype=float)
    if g.shape != params.shape or g.shape != state.m.shape:
        raise ValueError("gradient, parameter and state dimensions differ")
    if not np.all(np.isfinite(g)):
        raise TrainingError("non-finite gradient")
    t = state.t + 1
    m = state.beta1 * state.m + (1 - state.beta1) * g
    v = state.beta2 * state.v + (1 - state.beta2) * g * g
    m_hat = m / (1 - state.beta1 ** t)
    v_hat = v / (1 - state.beta2 ** t)
    v_max = np.maximum(state.v_max, v_hat) if state.amsgrad else state.v_max
    denom = np.sqrt(v_max if state.amsgrad else v_hat) + state.eps
    new = OptimizerState(m, v, v_max, t, state.lr, state.beta1, state.beta2, state.eps, state.amsgrad)
    return new, params - state.lr * m_hat / denom


@dataclass
class TrainControl:
    lr: float = 0.01
    batch_size: int = 32
    lr_factor: float = 0.5
    lr_patience: int = 2
    es_patience: int = 10
    es_min_delta: float = 1e-4
    min_epochs: int = 15
    max_epochs: int = 50

    def __post_init__(self):
        if not 0 < self.lr_factor < 1:
            raise ValueError("lr_factor must lie in (0, 1)")
        if self.lr_patience < 1 or self.es_patience < 1:
            raise ValueError("patience values must be >= 1")
        if self.batch_size < 1 or self.max_epochs < 1 or self.lr <= 0:
            raise ValueError("batch_size, max_epochs and lr must be positive")

    def to_dict(self) -> dict:
        return asdict(self)


def _plateau_events(val_losses, control: TrainControl) -> list:
    """Epoch flags (True where a reduction fires) for a replay of the history."""
    best, bad, fired = math.inf, 0, []
    for loss in val_losses:
        if loss < best - control.es_min_delta:
            best, bad = loss, 0
        else:
            bad += 1
        fire = bad >= control.lr_patience
        if fire:
            bad = 0
        fired.append(fire)
    return fired


def lr_plateau(val_losses, control: TrainControl, lr: float) -> float:
    """Learning rate for the next epoch given the validation history so far."""
    if len(val_losses) == 0:
        raise ValueError("need at least one recorded epoch")
    return lr * control.lr_factor if _plateau_events(val_losses, control)[-1] else lr


def early_stop(val_losses, control: TrainControl, epoch: int) -> bool:
    """Stop when min over epochs e-P..e has not beaten the best before that window by delta."""
    if epoch < 1:
        raise ValueError("epoch must be >= 1")
    if epoch < control.min_epochs:
        return False
    start = epoch - control.es_patience  # 1-based first epoch of the window
    if start <= 1 or len(val_losses) < epoch:
        return False
    window = val_losses[start - 1:epoch]
    before = val_losses[:start - 1]
    return min(window) >= min(before) - control.es_min_delta


# --- model and training --------------------------------------------------

@dataclass
class QnnModel:
    theta: np.ndarray
    W: np.ndarray
    b: np.ndarray
    spec: AnsatzSpec = field(default_factory=AnsatzSpec)
    fmap: FeatureMapSpec | None = None
    seed: int = 0

    def __post_init__(self):
        self.theta = _check_theta(self.theta, self.spec)
        self.W = np.asarray(self.W, dtype=float).reshape(2, 2)
        self.b = np.asarray(self.b, dtype=float).reshape(2)
        if self.fmap is None:
            self.fmap = FeatureMapSpec(self.spec.n_qubits)
        if not (np.all(np.isfinite(self.W)) and np.all(np.isfinite(self.b))):
            raise ValueError("head parameters must be finite")

    @classmethod
    def init(cls, spec: AnsatzSpec | None = None, seed: int = 0, fmap: FeatureMapSpec | None = None) -> "QnnModel":
        spec = spec or AnsatzSpec()
        rng = np.random.default_rng(seed)
        theta = rng.uniform(-np.pi, np.pi, spec.n_params)
        bound = 1.0 / math.sqrt(2.0)
        W = rng.uniform(-bound, bound, (2, 2))
        return cls(theta, W, np.zeros(2), spec, fmap, seed)

    @property
    def params(self) -> np.ndarray:
        return np.concatenate([self.theta, self.W.ravel(), self.b])

    def with_params(self, flat) -> "QnnModel":
        p = self.spec.n_params
        return QnnModel(flat[:p], flat[p:p + 4], flat[p + 4:], self.spec, self.fmap, self.seed)

    def class_probs(self, X) -> np.ndarray:
        psi = feature_states(X, self.fmap)
        M = ansatz_unitaries(self.theta, self.spec)[0]
        return class_probabilities(psi @ M, self.spec.n_qubits)

    def logits(self, X) -> np.ndarray:
        return head_forward(self.class_probs(X), self.W, self.b)

    def predict_proba(self, X) -> np.ndarray:
        return softmax(self.logits(X))

    def to_dict(self) -> dict:
        return {
            "theta": self.theta.tolist(),
            "W": self.W.tolist(),
            "b": self.b.tolist(),
            "spec": asdict(self.spec),
            "fmap": self.fmap.to_dict(),
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "QnnModel":
        return cls(np.asarray(d["theta"]), np.asarray(d["W"]), np.asarray(d["b"]),
                   AnsatzSpec(**d["spec"]), FeatureMapSpec.from_dict(d["fmap"]), d.get("seed", 0))


@dataclass
class History:
    rows: list = field(default_factory=list)  # tuples in HISTORY_HEADER order

    def column(self, name: str) -> list:
        i = HISTORY_HEADER.index(name)
        return [r[i] for r in self.rows]

    @property
    def best_epoch(self) -> int:
        val = self.column("val_loss")
        return int(np.argmin(val)) + 1

    def to_csv(self, path) -> None:
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(HISTORY_HEADER)
            for r in self.rows:
                w.writerow([r[0]] + [repr(float(v)) for v in r[1:]])


def _evaluate(model: QnnModel, psi, y) -> tuple:
    M = ansatz_unitaries(model.theta, model.spec)[0]
    logits = head_forward(class_probabilities(psi @ M, model.spec.n_qubits), model.W, model.b)
    return ce_loss(logits, y), float(np.mean(np.argmax(logits, axis=1) == y))


def train(train_set, val_set, model: QnnModel | None = None, control: TrainControl | None = None,
          seed: int = 0, callback=None):
    """Mini-batch training; returns (checkpoint at best validation loss, History).

    ``train_set`` and ``val_set`` are (X, y) pairs with labels in {0, 1}.
    """
    control = control or TrainControl()
    Xtr, ytr = np.asarray(train_set[0], dtype=float), np.asarray(train_set[1], dtype=int)
    Xva, yva = np.asarray(val_set[0], dtype=float), np.asarray(val_set[1], dtype=int)
    if Xtr.shape[0] == 0 or Xva.shape[0] == 0:
        raise ValueError("training and validation sets must be non-empty")
    model = model or QnnModel.init(AnsatzSpec(Xtr.shape[1]), seed)
    psi_tr = feature_states(Xtr, model.fmap)
    psi_va = feature_states(Xva, model.fmap)
    rng = np.random.default_rng(seed)
    P = model.spec.n_params
    state = OptimizerState.zeros(model.params.size, control.lr)
    params = model.params
    lr = control.lr
    history = History()
    val_losses = []
    best = (math.inf, model)
    for epoch in range(1, control.max_epochs + 1):
        order = rng.permutation(Xtr.shape[0])
        state.lr = lr
        for bi, start in enumerate(range(0, order.size, control.batch_size)):
            idx = order[start:start + control.batch_size]
            loss, g_t, g_W, g_b, _ = _batch_grads(psi_tr[idx], ytr[idx], params[:P],
                                                  params[P:P + 4].reshape(2, 2), params[P + 4:], model.spec)
            if not math.isfinite(loss):
                raise TrainingError(f"non-finite loss at epoch {epoch}, batch {bi}")
            state, params = adam_step(state, np.concatenate([g_t, g_W.ravel(), g_b]), params)
        current = model.with_params(params)
        tr_loss, tr_acc = _evaluate(current, psi_tr, ytr)
        va_loss, va_acc = _evaluate(current, psi_va, yva)
        history.rows.append((epoch, tr_loss, va_loss, tr_acc, va_acc, lr))
        val_losses.append(va_loss)
        if va_loss < best[0]:
            best = (va_loss, current)
        if callback is not None:
            callback(epoch, history.rows[-1])
        if early_stop(val_losses, control, epoch):
            break
        lr = lr_plateau(val_losses, control, lr)
    return best[1], history


class QNNClassifier(ClassifierMixin, BaseEstimator):
    """Variational quantum classifier with a linear head.

    ``fit(X, y, X_val=None, y_val=None)``: without an explicit validation set
    a stratified ``validation_fraction`` of the training rows is held out.
    """

    def __init__(self, layers=4, reps=1, final_rotation_layer=False, lr=0.01, batch_size=32,
                 max_epochs=50, min_epochs=15, lr_factor=0.5, lr_patience=2, es_patience=10,
                 es_min_delta=1e-4, validation_fraction=0.2, seed=0):
        self.layers = layers
        self.reps = reps
        self.final_rotation_layer = final_rotation_layer
        self.lr = lr
        self.batch_size = batch_size
        self.max_epochs = max_epochs
        self.min_epochs = min_epochs
        self.lr_factor = lr_factor
        self.lr_patience = lr_patience
        self.es_patience = es_patience
        self.es_min_delta = es_min_delta
        self.validation_fraction = validation_fraction
        self.seed = seed

    def control(self) -> TrainControl:
        return TrainControl(self.lr, self.batch_size, self.lr_factor, self.lr_patience, self.es_patience,
                            self.es_min_delta, self.min_epochs, self.max_epochs)

    def fit(self, X, y, X_val=None, y_val=None):
        X, y = check_X_y(X, y)
        self.classes_ = unique_labels(y)
        if self.classes_.size != 2:
            raise ValueError("binary classification only")
        yi = (y == self.classes_[1]).astype(int)
        if X_val is None:
            rng = np.random.default_rng(self.seed)
            val = np.zeros(y.size, dtype=bool)
            for c in (0, 1):
                idx = np.flatnonzero(yi == c)
                val[rng.permutation(idx)[:max(1, int(round(self.validation_fraction * idx.size)))]] = True
            X, X_val, yi, yv = X[~val], X[val], yi[~val], yi[val]
        else:
            X_val = check_array(X_val)
            yv = (np.asarray(y_val) == self.classes_[1]).astype(int)
        self.n_features_in_ = X.shape[1]
        spec = AnsatzSpec(X.shape[1], self.layers, self.final_rotation_layer)
        init = QnnModel.init(spec, self.seed, FeatureMapSpec(X.shape[1], self.reps))
        self.model_, self.history_ = train((X, yi), (X_val, yv), init, self.control(), self.seed)
        return self

    def predict_proba(self, X):
        check_is_fitted(self, "model_")
        return self.model_.predict_proba(check_array(X))

    def decision_function(self, X):
        """Logit margin z1 - z0; positive favours ``classes_[1]``."""
        check_is_fitted(self, "model_")
        z = self.model_.logits(check_array(X))
        return z[:, 1] - z[:, 0]

    def predict(self, X):
        return self.classes_[(self.decision_function(X) > 0).astype(int)]

    def save(self, path) -> None:
        check_is_fitted(self, "model_")
        d = {"params": self.get_params(), "classes": self.classes_.tolist(), "model": self.model_.to_dict(),
             "control": self.control().to_dict(), "best_epoch": self.history_.best_epoch}
        Path(path).write_text(json.dumps(d, indent=2) + "\n")

    @classmethod
    def load(cls, path) -> "QNNClassifier":
        d = json.loads(Path(path).read_text())
        est = cls(**d["params"])
        est.classes_ = np.asarray(d["classes"])
        est.model_ = QnnModel.from_dict(d["model"])
        est.n_features_in_ = est.model_.spec.n_qubits
        return est
