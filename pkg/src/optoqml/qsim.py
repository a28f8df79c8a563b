"""Small-register gate simulator: statevectors, density matrices, shot sampling.

Basis ordering is little-endian everywhere: qubit 0 is the least significant
bit of a basis index, so ``|q2 q1 q0> = |011>`` lives at index 3.

Multi-qubit gate matrices use the local ordering of the ``qubits`` tuple,
first listed qubit most significant (``CX(c, t)`` has local index ``2*c + t``).

All evolution routines accept a leading batch axis so that many circuits with
identical structure but different angles (kernel entries, shifted ansatz
parameters) run as one vectorized pass.
"""

from __future__ import annotations

import string
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

MAX_QUBITS = 8


class CircuitError(ValueError):
    pass


# --- gate matrices -------------------------------------------------------
# Angle arguments may be scalars or 1-D arrays; arrays give (B, d, d) stacks.

def h_matrix():
    return np.array([[1, 1], [1, -1]], dtype=complex) / np.sqrt(2.0)


def ry_matrix(theta):
    theta = np.asarray(theta, dtype=float)
    c, s = np.cos(theta / 2), np.sin(theta / 2)
    out = np.empty(theta.shape + (2, 2), dtype=complex)
    out[..., 0, 0] = c
    out[..., 0, 1] = -s
    out[..., 1, 0] = s
    out[..., 1, 1] = c
    return out


def rz_matrix(theta):
    theta = np.asarray(theta, dtype=float)
    out = np.zeros(theta.shape + (2, 2), dtype=complex)
    out[..., 0, 0] = np.exp(-0.5j * theta)
    out[..., 1, 1] = np.exp(0.5j * theta)
    return out


def phase_matrix(phi):
    phi = np.asarray(phi, dtype=float)
    out = np.zeros(phi.shape + (2, 2), dtype=complex)
    out[..., 0, 0] = 1.0
    out[..., 1, 1] = np.exp(1j * phi)
    return out


def cx_matrix():
    return np.array(
        [[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 0, 1], [0, 0, 1, 0]], dtype=complex
    )


def zz_matrix(phi):
    """exp(+i*phi * Z(x)Z), diagonal in the computational basis."""
    phi = np.asarray(phi, dtype=float)
    signs = np.array([1.0, -1.0, -1.0, 1.0])
    out = np.zeros(phi.shape + (4, 4), dtype=complex)
    idx = np.arange(4)
    out[..., idx, idx] = np.exp(1j * phi[..., None] * signs)
    return out


# name -> (arity, parametrized, matrix factory)
GATES = {
    "H": (1, False, lambda _: h_matrix()),
    "RY": (1, True, ry_matrix),
    "RZ": (1, True, rz_matrix),
    "P": (1, True, phase_matrix),
    "CX": (2, False, lambda _: cx_matrix()),
    "ZZ": (2, True, zz_matrix),
}


@dataclass(frozen=True)
class Gate:
    name: str
    qubits: tuple
    param: float | None = None

    def matrix(self) -> np.ndarray:
        return GATES[self.name][2](self.param)

    def inverse(self) -> "Gate":
        if GATES[self.name][1]:
            return Gate(self.name, self.qubits, -self.param)
        return self


@dataclass
class Circuit:
    n_qubits: int
    gates: list = field(default_factory=list)

    def __post_init__(self):
        if not 1 <= self.n_qubits <= MAX_QUBITS:
            raise CircuitError(f"n_qubits must be in [1, {MAX_QUBITS}], got {self.n_qubits}")
        gates, self.gates = list(self.gates), []
        for g in gates:
            self.append(g.name, g.qubits, g.param)

    def append(self, name: str, qubits: Sequence[int], param: float | None = None) -> "Circuit":
        if name not in GATES:
            raise CircuitError(f"unknown gate {name!r}")
        arity, parametrized, _ = GATES[name]
        qubits = tuple(int(q) for q in qubits)
        if len(qubits) != arity:
            raise CircuitError(f"{name} acts on {arity} qubit(s), got {qubits}")
        if any(q < 0 or q >= self.n_qubits for q in qubits):
            raise CircuitError(f"{name}{qubits}: qubit index out of range for n={self.n_qubits}")
        if len(set(qubits)) != len(qubits):
            raise CircuitError(f"{name}{qubits}: repeated qubit")
        if parametrized:
            if param is None or not np.isfinite(param):
                raise CircuitError(f"{name}{qubits}: angle must be finite, got {param}")
            param = float(param)
        else:
            param = None
        self.gates.append(Gate(name, qubits, param))
        return self

    def h(self, q):
        return self.append("H", (q,))

    def ry(self, q, theta):
        return self.append("RY", (q,), theta)

    def rz(self, q, theta):
        return self.append("RZ", (q,), theta)

    def p(self, q, phi):
        return self.append("P", (q,), phi)

    def cx(self, control, target):
        return self.append("CX", (control, target))

    def zz(self, q1, q2, phi):
        return self.append("ZZ", (q1, q2), phi)

    def adjoint(self) -> "Circuit":
        return Circuit(self.n_qubits, [g.inverse() for g in reversed(self.gates)])

    def compose(self, other: "Circuit") -> "Circuit":
        """Circuit running ``self`` first, then ``other``."""
        if other.n_qubits != self.n_qubits:
            raise CircuitError("cannot compose circuits of different width")
        return Circuit(self.n_qubits, self.gates + other.gates)

    def __len__(self):
        return len(self.gates)

    def __iter__(self):
        return iter(self.gates)

    def ops(self):
        return [(g.matrix(), g.qubits) for g in self.gates]

    def to_netlist(self) -> str:
        lines = [f"# n_qubits={self.n_qubits}"]
        for g in self.gates:
            parts = [g.name] + [f"q{q}" for q in g.qubits]
            if g.param is not None:
                parts.append(repr(g.param))
            lines.append(" ".join(parts))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_netlist(cls, text: str, n_qubits: int | None = None) -> "Circuit":
        rows = []
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.strip()
            if line.startswith("# n_qubits=") and n_qubits is None:
                n_qubits = int(line.split("=", 1)[1])
                continue
            if not line or line.startswith("#"):
                continue
            tok = line.split()
            name = tok[0].upper()
            if name not in GATES:
                raise CircuitError(f"line {lineno}: unknown gate {tok[0]!r}")
            arity = GATES[name][0]
            try:
                qubits = [int(t.lstrip("qQ")) for t in tok[1:1 + arity]]
                param = float(tok[1 + arity]) if GATES[name][1] else None
            except (ValueError, IndexError) as exc:
                raise CircuitError(f"line {lineno}: cannot parse {raw!r}") from exc
            rows.append((name, qubits, param))
        if n_qubits is None:
            n_qubits = 1 + max((q for _, qs, _ in rows for q in qs), default=0)
        circuit = cls(n_qubits)
        for name, qubits, param in rows:
            circuit.append(name, qubits, param)
        return circuit


# --- evolution kernels ---------------------------------------------------

def apply_matrix(states: np.ndarray, mat: np.ndarray, qubits: Sequence[int], n_qubits: int) -> np.ndarray:
    """Apply a k-qubit matrix to the last axis of ``states``.

    ``states`` has shape (B, ..., 2**n). ``mat`` is (d, d), or (B, d, d) for a
    different matrix per leading-batch entry.
    """
    states = np.asarray(states)
    k = len(qubits)
    d = 2 ** k
    batch = states.shape[0] if states.ndim > 1 else 1
    t = states.reshape((batch, -1) + (2,) * n_qubits)
    src = [2 + n_qubits - 1 - q for q in qubits]
    dst = list(range(2 + n_qubits - k, 2 + n_qubits))
    t = np.moveaxis(t, src, dst)
    moved_shape = t.shape
    t = t.reshape(batch, -1, d)
    if mat.ndim == 2:
        t = t @ mat.T
    else:
        t = t @ np.swapaxes(mat, -1, -2)
    t = np.moveaxis(t.reshape(moved_shape), dst, src)
    return t.reshape(states.shape)


def apply_unitary_density(rho: np.ndarray, mat: np.ndarray, qubits: Sequence[int], n_qubits: int) -> np.ndarray:
    """rho -> U rho U^dagger for rho of shape (D, D) or (B, D, D)."""
    a = apply_matrix(rho, mat.conj(), qubits, n_qubits)  # rho U^dagger
    a = apply_matrix(np.swapaxes(a, -1, -2), mat, qubits, n_qubits)
    return np.swapaxes(a, -1, -2)


def depolarize(rho: np.ndarray, qubits: Sequence[int], p: float, n_qubits: int) -> np.ndarray:
    """k-qubit depolarizing channel on ``qubits``.

    rho -> (1 - p) rho + p * (I / 2**k) (x) Tr_qubits(rho)
    """
    if p == 0.0:
        return rho
    single = rho.ndim == 2
    r = rho[None] if single else rho
    batch = r.shape[0]
    n = n_qubits
    t = r.reshape((batch,) + (2,) * (2 * n))
    letters = string.ascii_letters
    rows = list(letters[:n])  # axis i <-> qubit n-1-i
    cols = list(letters[n:2 * n])
    traced = {n - 1 - q for q in qubits}
    in_cols = [rows[i] if i in traced else cols[i] for i in range(n)]
    keep_rows = [rows[i] for i in range(n) if i not in traced]
    keep_cols = [cols[i] for i in range(n) if i not in traced]
    reduced_sub = "Z" + "".join(keep_rows) + "".join(keep_cols)
    reduced = np.einsum("Z" + "".join(rows) + "".join(in_cols) + "->" + reduced_sub, t)
    eye_terms = ",".join(rows[i] + cols[i] for i in sorted(traced))
    full_sub = "Z" + "".join(rows) + "".join(cols)
    eyes = [np.eye(2)] * len(traced)
    mixed = np.einsum(f"{reduced_sub},{eye_terms}->{full_sub}", reduced, *eyes)
    mixed = mixed.reshape(r.shape) / 2 ** len(traced)
    out = (1.0 - p) * r + p * mixed
    return out[0] if single else out


def zero_state(n_qubits: int, batch: int | None = None) -> np.ndarray:
    shape = (2 ** n_qubits,) if batch is None else (batch, 2 ** n_qubits)
    psi = np.zeros(shape, dtype=complex)
    psi[..., 0] = 1.0
    return psi


def evolve_statevector(ops: Iterable, n_qubits: int, psi: np.ndarray) -> np.ndarray:
    for mat, qubits in ops:
        psi = apply_matrix(psi, mat, qubits, n_qubits)
    return psi


def evolve_density(ops: Iterable, n_qubits: int, rho: np.ndarray, p_noise: float = 0.0) -> np.ndarray:
    for mat, qubits in ops:
        rho = apply_unitary_density(rho, mat, qubits, n_qubits)
        rho = depolarize(rho, qubits, p_noise, n_qubits)
    return rho


def run_statevector(circuit: Circuit) -> np.ndarray:
    """Final statevector of ``circuit`` applied to ``|0...0>``."""
    return evolve_statevector(circuit.ops(), circuit.n_qubits, zero_state(circuit.n_qubits))


def run_density(circuit: Circuit, p_noise: float = 0.0) -> np.ndarray:
    """Density matrix after ``circuit`` with depolarizing noise after each gate."""
    if not 0.0 <= p_noise <= 1.0:
        raise ValueError(f"p_noise must lie in [0, 1], got {p_noise}")
    psi0 = zero_state(circuit.n_qubits)
    rho = np.outer(psi0, psi0.conj())
    return evolve_density(circuit.ops(), circuit.n_qubits, rho, p_noise)


def probabilities(state: np.ndarray) -> np.ndarray:
    """Born-rule distribution of a statevector (1-D) or density matrix (2-D)."""
    state = np.asarray(state)
    if state.ndim == 1:
        return np.abs(state) ** 2
    return np.real(np.diagonal(state, axis1=-2, axis2=-1)).copy()


@dataclass
class ShotCounts:
    counts: dict
    shots: int

    def frequency(self, index: int) -> float:
        return self.counts.get(index, 0) / self.shots


def _clean_distribution(distribution) -> np.ndarray:
    p = np.asarray(distribution, dtype=float)
    if p.ndim != 1 or p.size == 0 or not np.all(np.isfinite(p)):
        raise ValueError("distribution must be a finite 1-D array")
    if p.min() < -1e-9 or abs(p.sum() - 1.0) > 1e-8:
        raise ValueError("distribution must be non-negative and sum to 1")
    p = np.clip(p, 0.0, None)
    return p / p.sum()


def sample(distribution, shots: int, seed=None) -> ShotCounts:
    """Multinomial shot sampling, deterministic for a fixed seed."""
    if shots < 1:
        raise ValueError("shots must be >= 1")
    p = _clean_distribution(distribution)
    draws = np.random.default_rng(seed).multinomial(int(shots), p)
    counts = {int(i): int(c) for i, c in enumerate(draws) if c}
    return ShotCounts(counts, int(shots))
