"""Independent reference implementations used only by the tests."""

import itertools
from functools import reduce

import numpy as np


def project_box_hyperplane(v, y, C):
    """Euclidean projection onto {a : y.a = 0, 0 <= a <= C}.

    g(mu) = y.clip(v - mu*y, 0, C) is piecewise linear and non-increasing in
    mu; locate its root exactly from the breakpoints.
    """
    bps = np.unique(np.r_[v * y, (v - C) * y])  # y = +-1, so 1/y = y
    vals = (y[None, :] * np.clip(v[None, :] - bps[:, None] * y[None, :], 0.0, C)).sum(1)
    k = np.flatnonzero(vals <= 0)[0]
    if k == 0 or vals[k] == 0:
        mu = bps[k]
    else:
        m0, m1, g0, g1 = bps[k - 1], bps[k], vals[k - 1], vals[k]
        mu = m0 + (m1 - m0) * g0 / (g0 - g1)
    return np.clip(v - mu * y, 0.0, C)


def dual_qp(K, y, C, iters=200000, tol=1e-13):
    """Accelerated projected gradient (with adaptive restart) on the SVM dual.

    Returns (alphas, objective).
    """
    Q = (y[:, None] * y[None, :]) * K
    L = max(np.linalg.eigvalsh(Q).max(), 1e-12)

    def f(a):
        return 0.5 * a @ Q @ a - a.sum()

    a = np.zeros(y.size)
    z, t = a.copy(), 1.0
    for _ in range(iters):
        a_new = project_box_hyperplane(z - (Q @ z - 1.0) / L, y, C)
        if f(a_new) > f(a):  # restart momentum
            z, t = a.copy(), 1.0
            continue
        t_new = 0.5 * (1 + np.sqrt(1 + 4 * t * t))
        z = a_new + (t - 1) / t_new * (a_new - a)
        step = np.abs(a_new - a).max()
        a, t = a_new, t_new
        if step < tol:
            break
    return a, float(f(a))


# --- dense gate matrices, big-endian kron with explicit qubit placement ---

I2 = np.eye(2, dtype=complex)
X = np.array([[0, 1], [1, 0]], dtype=complex)
Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
Z = np.diag([1.0 + 0j, -1.0])
H = np.array([[1, 1], [1, -1]], dtype=complex) / np.sqrt(2)
P0 = np.diag([1.0 + 0j, 0])
P1 = np.diag([0j, 1.0])


def expm_herm(Hm, t):
    """exp(i t Hm) for Hermitian Hm via eigendecomposition."""
    w, V = np.linalg.eigh(Hm)
    return (V * np.exp(1j * t * w)) @ V.conj().T


def on(op, q, n):
    """Embed a one-qubit operator on qubit q (qubit 0 = least significant)."""
    factors = [op if k == q else I2 for k in reversed(range(n))]
    return reduce(np.kron, factors)


def cx(c, t, n):
    return on(P0, c, n) + on(P1, c, n) @ on(X, t, n)


def ry(theta, q, n):
    return expm_herm(on(Y, q, n), -theta / 2)


def rz(theta, q, n):
    return expm_herm(on(Z, q, n), -theta / 2)


def zz_feature_unitary(x, reps=1):
    n = len(x)
    U = np.eye(2 ** n, dtype=complex)
    for _ in range(reps):
        for q in range(n):
            U = on(H, q, n) @ U
        for q in range(n):
            U = expm_herm(on(Z, q, n), x[q]) @ U
        for j, k in itertools.combinations(range(n), 2):
            U = expm_herm(on(Z, j, n) @ on(Z, k, n), (np.pi - x[j]) * (np.pi - x[k])) @ U
    return U


def kernel_dense(x, y, reps=1):
    n = len(x)
    e0 = np.zeros(2 ** n)
    e0[0] = 1
    amp = e0 @ zz_feature_unitary(x, reps).conj().T @ zz_feature_unitary(y, reps) @ e0
    return float(abs(amp) ** 2)


def ansatz_dense(theta, n=3, layers=4):
    U = np.eye(2 ** n, dtype=complex)
    k = 0
    for _ in range(layers):
        for q in range(n):
            U = ry(theta[k], q, n) @ U
            k += 1
        for q in range(n):
            U = rz(theta[k], q, n) @ U
            k += 1
        for j, t in itertools.combinations(range(n), 2):
            U = cx(j, t, n) @ U
    return U


def parity_probs_dense(x, theta, n=3, layers=4):
    e0 = np.zeros(2 ** n)
    e0[0] = 1
    psi = ansatz_dense(theta, n, layers) @ zz_feature_unitary(x) @ e0
    p = np.abs(psi) ** 2
    odd = np.array([bin(i).count("1") % 2 for i in range(2 ** n)], dtype=bool)
    return p[~odd].sum(), p[odd].sum()


def mann_whitney_auc(scores, labels):
    pos = scores[labels == 1]
    neg = scores[labels == 0]
    diff = pos[:, None] - neg[None, :]
    return float(((diff > 0).sum() + 0.5 * (diff == 0).sum()) / (pos.size * neg.size))
