"""Two-class descriptor datasets: surrogate generation, CSV I/O, splitting.

Class 0 is pristine CaF2, class 1 is CaF2:Er. One sample is one energy-grid
point of one system.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import dawsn

from . import spectra
from .spectra import ExcitationSpectrum, OpticalRecord

FEATURES = ("E", "eps1", "eps2", "n", "kappa", "alpha")
CSV_COLUMN = {"E": "E_eV", "eps1": "eps1", "eps2": "eps2", "n": "n", "kappa": "kappa", "alpha": "alpha_cm1"}
FEATURE_OF_COLUMN = {v: k for k, v in CSV_COLUMN.items()}
LABEL_COLUMN = "label"
CLASS_NAMES = {0: "CaF2", 1: "CaF2:Er"}


class SchemaError(ValueError):
    pass


@dataclass
class Dataset:
    feature_names: list
    X: np.ndarray
    y: np.ndarray
    provenance: str = "ingested"
    index: np.ndarray | None = None

    def __post_init__(self):
        self.feature_names = list(self.feature_names)
        self.X = np.atleast_2d(np.asarray(self.X, dtype=float))
        self.y = np.asarray(self.y).astype(int)
        if self.X.shape[0] == 0:
            raise ValueError("dataset is empty")
        if self.X.shape != (self.y.size, len(self.feature_names)):
            raise ValueError(f"shape mismatch: X {self.X.shape}, y {self.y.shape}, names {self.feature_names}")
        if not np.all(np.isfinite(self.X)):
            raise ValueError("dataset contains non-finite values")
        if not set(np.unique(self.y)) <= {0, 1}:
            raise ValueError("labels must be 0 (pristine) or 1 (doped)")
        self.index = np.arange(self.y.size) if self.index is None else np.asarray(self.index, dtype=int)

    def __len__(self):
        return self.y.size

    def take(self, rows) -> "Dataset":
        rows = np.asarray(rows, dtype=int)
        return Dataset(self.feature_names, self.X[rows], self.y[rows], self.provenance, self.index[rows])

    def columns(self, names) -> "Dataset":
        cols = [self.feature_names.index(n) for n in names]
        return Dataset(list(names), self.X[:, cols], self.y, self.provenance, self.index)

    def column(self, name) -> np.ndarray:
        return self.X[:, self.feature_names.index(name)]


# --- surrogate spectra ---------------------------------------------------

@dataclass
class SurrogateParams:
    """Knobs of the surrogate CaF2 / CaF2:Er generator.

    Peaks are (center eV, strength, width eV); each peak expands into
    ``lines_per_peak`` transitions spread over +-width around the center, the
    central line carrying the full strength. Both systems share one kappa
    scale, so the doped system's larger total strength shows up as stronger
    extinction. ``n_coupling`` scales the dispersive (Kramers-Kronig) partner
    of the absorption profile added to the linear n background; 1 is the
    self-consistent value, 0 gives both systems the same n(E). ``alpha_floor`` is a flat absorption-coefficient background
    (cm^-1) per class (pristine, doped) that keeps every descriptor strictly
    positive.
    """

    pristine_peaks: list = field(default_factory=lambda: [
        (7.12, 0.300, 0.30), (8.45, 0.186, 0.35), (9.45, 0.144, 0.30),
        (5.60, 0.012, 0.40),
    ])
    doped_peaks: list = field(default_factory=lambda: [
        (6.14, 1.00, 0.35), (7.90, 0.50, 0.25), (8.90, 0.45, 0.25),
        (3.06, 0.36, 0.20), (5.15, 0.34, 0.40), (4.15, 0.30, 0.40),
        (2.35, 0.18, 0.25), (1.55, 0.05, 0.15), (0.80, 0.03, 0.10),
        # dense Er 5d manifold overlapping the host band
        (6.60, 0.30, 0.12), (6.90, 0.30, 0.12), (7.20, 0.30, 0.12),
        (7.50, 0.30, 0.12), (8.10, 0.30, 0.12), (8.40, 0.30, 0.12),
        (8.70, 0.30, 0.12), (9.30, 0.30, 0.12), (9.60, 0.30, 0.12),
        (9.90, 0.30, 0.12),
    ])
    background_n: tuple = (2.1206, -0.0594)
    n_coupling: float = 1.0
    alpha_floor: tuple = (0.2, 20.0)
    kappa_max: float = 3.92e-2
    noise_rel: float = 0.01
    lines_per_peak: int = 5
    grid_points: int = 1589
    grid_range: tuple = (0.0063, 9.96)

    def __post_init__(self):
        self.pristine_peaks = [tuple(map(float, p)) for p in self.pristine_peaks]
        self.doped_peaks = [tuple(map(float, p)) for p in self.doped_peaks]
        self.background_n = tuple(map(float, self.background_n))
        self.alpha_floor = tuple(map(float, self.alpha_floor))
        self.grid_range = tuple(map(float, self.grid_range))
        for c, s, w in self.pristine_peaks + self.doped_peaks:
            if not (0 < c <= spectra.DEFAULT_ENERGY_CAP and s >= 0 and w > 0):
                raise ValueError(f"invalid peak (center={c}, strength={s}, width={w})")
        if not 0 <= self.noise_rel <= 0.2:
            raise ValueError("noise_rel must lie in [0, 0.2]")
        if self.lines_per_peak < 1 or self.grid_points < 2:
            raise ValueError("lines_per_peak and grid_points must be positive")
        if self.n_coupling < 0:
            raise ValueError("n_coupling must be >= 0")
        if min(self.alpha_floor) < 0 or self.kappa_max <= 0:
            raise ValueError("alpha_floor must be >= 0 and kappa_max > 0")
        lo, hi = self.grid_range
        n_inf, slope = self.background_n
        if n_inf <= 0 or n_inf + slope * hi <= 0 or n_inf + slope * lo <= 0:
            raise ValueError("background refractive index must stay positive on the grid")

    def grid(self) -> np.ndarray:
        return spectra.default_grid(*self.grid_range, self.grid_points)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SurrogateParams":
        known = cls.__dataclass_fields__
        unknown = set(d) - set(known)
        if unknown:
            raise ValueError(f"unknown surrogate parameter(s): {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_file(cls, path) -> "SurrogateParams":
        return cls.from_dict(json.loads(Path(path).read_text()))


def synth_system(class_label: int, params: SurrogateParams, seed) -> ExcitationSpectrum:
    """Surrogate excitation list for one system; deterministic in ``seed``."""
    if class_label not in (0, 1):
        raise ValueError("class_label must be 0 or 1")
    peaks = params.doped_peaks if class_label else params.pristine_peaks
    rng = np.random.default_rng(seed)
    m = params.lines_per_peak
    # satellites at fixed offsets in (-1, 1) * width, strength tapering away from center
    offsets = np.linspace(-1.0, 1.0, m + 2)[1:-1] if m > 1 else np.zeros(1)
    offsets = offsets - offsets[np.argmin(np.abs(offsets))]
    taper = 0.35 * np.exp(-2.0 * offsets ** 2)
    taper[np.argmin(np.abs(offsets))] = 1.0
    omega, strength = [], []
    for center, s, width in peaks:
        for off, tap in zip(offsets, taper):
            w = center + off * width
            f = s * tap
            jitter = rng.uniform(-1.0, 1.0, size=2) * params.noise_rel
            omega.append(w * (1.0 + jitter[0]))
            strength.append(f * (1.0 + jitter[1]))
    omega = np.clip(np.array(omega), 1e-3, spectra.DEFAULT_ENERGY_CAP)
    order = np.argsort(omega, kind="stable")
    name = CLASS_NAMES[class_label]
    return ExcitationSpectrum(name, omega[order], np.array(strength)[order])


def _absorption(spectrum: ExcitationSpectrum, grid, sigma: float) -> np.ndarray:
    if len(spectrum):
        return spectra.broaden(spectrum, grid, sigma).values
    if not sigma > 0:
        raise spectra.SpectrumError("sigma must be positive")
    return np.zeros_like(grid)


def _dispersion(spectrum: ExcitationSpectrum, grid, sigma: float) -> np.ndarray:
    """Hilbert partner of the broadened profile, antisymmetric continuation included.

    A Gaussian line exp(-(E - w)^2 / 2 s^2) maps to
    (2 / sqrt(pi)) * [D((w - E) / (sqrt(2) s)) + D((w + E) / (sqrt(2) s))], D = Dawson.
    """
    if not len(spectrum):
        return np.zeros_like(grid)
    scale = np.sqrt(2.0) * sigma
    w, f = spectrum.omega[None, :], spectrum.strength
    g = grid[:, None]
    return (2.0 / np.sqrt(np.pi)) * ((dawsn((w - g) / scale) + dawsn((w + g) / scale)) @ f)


def kappa_scale(spectra_list, params: SurrogateParams, sigma: float) -> float:
    """Common c such that the largest broadened profile peaks at ``kappa_max``."""
    grid = params.grid()
    peak = max(_absorption(s, grid, sigma).max() for s in spectra_list)
    return params.kappa_max / peak if peak > 0 else 0.0


def build_records(spectrum: ExcitationSpectrum, params: SurrogateParams, sigma: float, label: int,
                  scale: float | None = None) -> list:
    """One self-consistent OpticalRecord per grid energy.

    kappa(E) = c * A(E) + alpha_floor * hc / (4 pi E). Without ``scale``, c
    makes this spectrum alone peak at ``kappa_max``;
    n(E) = n_inf + slope * E + n_coupling * c * H[A](E) with H the Hilbert transform.
    """
    grid = params.grid()
    values = _absorption(spectrum, grid, sigma)
    c = kappa_scale([spectrum], params, sigma) if scale is None else scale
    kappa = c * values
    if len(spectrum):
        kappa = kappa + params.alpha_floor[label] * spectra.HC_EV_CM / (4.0 * np.pi * grid)
    n_inf, slope = params.background_n
    n = n_inf + slope * grid + params.n_coupling * c * _dispersion(spectrum, grid, sigma)
    eps1, eps2 = spectra.dielectric_from_nk(n, kappa)
    alpha = spectra.absorption_coefficient(kappa, grid)
    records = [OpticalRecord(*row, label) for row in zip(grid.tolist(), eps1.tolist(), eps2.tolist(),
                                                         n.tolist(), kappa.tolist(), alpha.tolist())]
    for r in records:
        r.check()
    return records


def records_to_dataset(records, provenance: str = "ingested") -> Dataset:
    rows = np.array([r.as_row() for r in records], dtype=float)
    return Dataset(list(FEATURES), rows[:, :6], rows[:, 6].astype(int), provenance)


def synth_dataset(params: SurrogateParams, sigma: float, seed: int):
    """Both systems' spectra and the stacked descriptor dataset (pristine rows first)."""
    seeds = np.random.SeedSequence(seed).spawn(2)
    spectra_ = [synth_system(label, params, seeds[label]) for label in (0, 1)]
    c = kappa_scale(spectra_, params, sigma)
    records = build_records(spectra_[0], params, sigma, 0, c) + build_records(spectra_[1], params, sigma, 1, c)
    return spectra_, records_to_dataset(records, provenance=f"surrogate(seed={seed})")


# --- CSV -----------------------------------------------------------------

def export_csv(dataset: Dataset, path) -> None:
    header = [CSV_COLUMN.get(n, n) for n in dataset.feature_names] + [LABEL_COLUMN]
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row, label in zip(dataset.X.tolist(), dataset.y.tolist()):
            w.writerow([repr(v) for v in row] + [label])


def ingest_csv(path, provenance: str = "ingested") -> Dataset:
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = [h.strip() for h in next(reader, [])]
        if LABEL_COLUMN not in header:
            raise SchemaError(f"{path}: missing {LABEL_COLUMN!r} column")
        unknown = [h for h in header if h != LABEL_COLUMN and h not in FEATURE_OF_COLUMN]
        if unknown:
            raise SchemaError(f"{path}: unknown column(s) {unknown}")
        if len(set(header)) != len(header):
            raise SchemaError(f"{path}: duplicate columns in header")
        li = header.index(LABEL_COLUMN)
        names = [FEATURE_OF_COLUMN[h] for h in header if h != LABEL_COLUMN]
        X, y = [], []
        for lineno, row in enumerate(reader, 2):
            if not row:
                continue
            if len(row) != len(header):
                raise SchemaError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
            try:
                values = [float(v) for i, v in enumerate(row) if i != li]
                label = int(row[li])
            except ValueError as exc:
                raise SchemaError(f"{path}:{lineno}: malformed row {row}") from exc
            X.append(values)
            y.append(label)
    if not X:
        raise SchemaError(f"{path}: no data rows")
    return Dataset(names, np.array(X), np.array(y), provenance)


def write_indices(indices, path) -> None:
    Path(path).write_text("\n".join(str(int(i)) for i in indices) + "\n")


def read_indices(path) -> np.ndarray:
    text = Path(path).read_text().split()
    return np.array([int(t) for t in text], dtype=int)


# --- splitting -----------------------------------------------------------

def _allocate(n: int, fractions) -> list:
    """Largest-remainder allocation of n items to parts."""
    raw = np.asarray(fractions, dtype=float) * n
    sizes = np.floor(raw).astype(int)
    rem = n - sizes.sum()
    order = np.argsort(-(raw - sizes), kind="stable")
    sizes[order[:rem]] += 1
    return sizes.tolist()


def split(dataset: Dataset, fractions=(0.72, 0.19, 0.09), seed=0, stratified: bool = True):
    """Deterministic disjoint split into len(fractions) parts."""
    fractions = np.asarray(fractions, dtype=float)
    if np.any(fractions <= 0) or abs(fractions.sum() - 1.0) > 1e-9:
        raise ValueError(f"fractions must be positive and sum to 1, got {fractions.tolist()}")
    rng = np.random.default_rng(seed)
    parts = [[] for _ in fractions]
    groups = [np.nonzero(dataset.y == c)[0] for c in (0, 1)] if stratified else [np.arange(len(dataset))]
    for members in groups:
        members = rng.permutation(members)
        start = 0
        for k, size in enumerate(_allocate(members.size, fractions)):
            parts[k].extend(members[start:start + size].tolist())
            start += size
    out = []
    for k, rows in enumerate(parts):
        if not rows:
            raise ValueError(f"split part {k} is empty")
        out.append(np.sort(np.array(rows, dtype=int)))
    return out


def split_dataset(dataset: Dataset, fractions=(0.72, 0.19, 0.09), seed=0, stratified: bool = True):
    return tuple(dataset.take(rows) for rows in split(dataset, fractions, seed, stratified))


def subsample(dataset: Dataset, count: int, seed=0, stratified: bool = True) -> Dataset:
    if count < 1:
        raise ValueError("count must be >= 1")
    if count > len(dataset):
        raise ValueError(f"count={count} exceeds dataset size {len(dataset)}")
    rng = np.random.default_rng(seed)
    if not stratified:
        return dataset.take(rng.permutation(len(dataset))[:count])
    groups = [np.nonzero(dataset.y == c)[0] for c in (0, 1)]
    frac = np.array([g.size for g in groups], dtype=float) / len(dataset)
    sizes = _allocate(count, frac)
    rows = np.concatenate([rng.permutation(g)[:s] for g, s in zip(groups, sizes)])
    return dataset.take(rng.permutation(rows))
