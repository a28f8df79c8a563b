"""Discrete excitations -> broadened absorption -> optical constants."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

HC_EV_CM = 1.23984193e-4  # h*c in eV*cm
DEFAULT_ENERGY_CAP = 10.0
DEFAULT_GRID = (0.0063, 9.96, 1589)

EXCITATION_HEADER = ("omega_eV", "oscillator_strength")
RECORD_HEADER = ("E_eV", "eps1", "eps2", "n", "kappa", "alpha_cm1", "label")


class SpectrumError(ValueError):
    pass


@dataclass
class ExcitationSpectrum:
    """Transition energies (eV) and oscillator strengths of one system."""

    system_id: str
    omega: np.ndarray
    strength: np.ndarray
    energy_cap: float = DEFAULT_ENERGY_CAP

    def __post_init__(self):
        self.omega = np.atleast_1d(np.asarray(self.omega, dtype=float))
        self.strength = np.atleast_1d(np.asarray(self.strength, dtype=float))
        if self.omega.shape != self.strength.shape or self.omega.ndim != 1:
            raise SpectrumError("omega and strength must be 1-D and of equal length")
        if not (np.all(np.isfinite(self.omega)) and np.all(np.isfinite(self.strength))):
            raise SpectrumError(f"{self.system_id}: non-finite excitation entries")
        if np.any(self.omega <= 0) or np.any(self.omega > self.energy_cap):
            raise SpectrumError(
                f"{self.system_id}: transition energies must lie in (0, {self.energy_cap}] eV"
            )
        if np.any(self.strength < 0):
            raise SpectrumError(f"{self.system_id}: oscillator strengths must be >= 0")

    def __len__(self):
        return self.omega.size

    def strongest(self, k: int = 1) -> list[tuple[float, float]]:
        order = np.argsort(-self.strength, kind="stable")[:k]
        return [(float(self.omega[i]), float(self.strength[i])) for i in order]

    def window(self, lo: float, hi: float) -> "ExcitationSpectrum":
        keep = (self.omega >= lo) & (self.omega <= hi)
        return ExcitationSpectrum(self.system_id, self.omega[keep], self.strength[keep], self.energy_cap)


@dataclass
class AbsorptionProfile:
    grid: np.ndarray
    values: np.ndarray
    sigma: float

    def __post_init__(self):
        self.grid = np.asarray(self.grid, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if self.grid.shape != self.values.shape:
            raise SpectrumError("grid and values differ in length")
        if np.any(np.diff(self.grid) <= 0):
            raise SpectrumError("energy grid must be strictly increasing")
        if np.any(self.values < 0):
            raise SpectrumError("absorption values must be >= 0")


@dataclass(frozen=True)
class OpticalRecord:
    energy: float
    eps1: float
    eps2: float
    n: float
    kappa: float
    alpha: float
    label: int

    def as_row(self) -> tuple:
        return (self.energy, self.eps1, self.eps2, self.n, self.kappa, self.alpha, self.label)

    def check(self, rtol: float = 1e-9) -> None:
        """Raise if the stored optical constants are not mutually consistent."""
        checks = {
            "eps1": (self.eps1, self.n ** 2 - self.kappa ** 2),
            "eps2": (self.eps2, 2 * self.n * self.kappa),
            "alpha": (self.alpha, absorption_coefficient(self.kappa, self.energy)),
        }
        for name, (got, want) in checks.items():
            if abs(got - want) > rtol * max(abs(want), abs(got), 1e-300):
                raise SpectrumError(f"record at E={self.energy}: {name}={got} != {want}")
        if self.label not in (0, 1):
            raise SpectrumError(f"label must be 0 or 1, got {self.label}")


@dataclass
class SpectralDiff:
    pairs: list  # (delta_E, delta_f), strongest first

    @property
    def delta_e(self) -> np.ndarray:
        return np.array([p[0] for p in self.pairs])

    @property
    def delta_f(self) -> np.ndarray:
        return np.array([p[1] for p in self.pairs])


def default_grid(lo: float = DEFAULT_GRID[0], hi: float = DEFAULT_GRID[1], points: int = DEFAULT_GRID[2]) -> np.ndarray:
    return np.linspace(lo, hi, points)


def broaden(spectrum: ExcitationSpectrum, grid, sigma: float) -> AbsorptionProfile:
    """Gaussian-broadened absorption A(E) = sum_I f_I exp(-(E - w_I)^2 / 2 sigma^2).

    Every transition contributes at every grid point (no tail cutoff).
    """
    if len(spectrum) == 0:
        raise SpectrumError("no excitations")
    if not sigma > 0:
        raise SpectrumError(f"sigma must be positive, got {sigma}")
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or np.any(np.diff(grid) <= 0):
        raise SpectrumError("energy grid must be strictly increasing")
    values = np.zeros_like(grid)
    # chunked over transitions to bound the (grid x transitions) temporary
    for start in range(0, len(spectrum), 512):
        w = spectrum.omega[start:start + 512]
        f = spectrum.strength[start:start + 512]
        values += np.exp(-((grid[:, None] - w[None, :]) ** 2) / (2.0 * sigma ** 2)) @ f
    return AbsorptionProfile(grid, values, float(sigma))


def profile_integral(profile: AbsorptionProfile) -> float:
    if profile.grid.size < 2:
        raise SpectrumError("need at least 2 grid points to integrate")
    return float(np.trapezoid(profile.values, profile.grid))


def nk_from_dielectric(eps1, eps2):
    """Refractive index n and extinction coefficient kappa from eps1 + i*eps2.

    Uses the cancellation-free branch: the larger of n, kappa comes from the
    square-root formula, the smaller from eps2 = 2 n kappa.
    """
    eps1 = np.asarray(eps1, dtype=float)
    eps2 = np.asarray(eps2, dtype=float)
    if np.any(eps2 < 0):
        raise SpectrumError("eps2 must be >= 0")
    mod = np.hypot(eps1, eps2)
    big = np.sqrt((mod + np.abs(eps1)) / 2.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        small = np.where(big > 0, eps2 / (2.0 * big), 0.0)
    n = np.where(eps1 >= 0, big, small)
    kappa = np.where(eps1 >= 0, small, big)
    if n.ndim == 0:
        return float(n), float(kappa)
    return n, kappa


def dielectric_from_nk(n, kappa):
    n = np.asarray(n, dtype=float)
    kappa = np.asarray(kappa, dtype=float)
    if np.any(n <= 0):
        raise SpectrumError("refractive index must be positive")
    if np.any(kappa < 0):
        raise SpectrumError("extinction coefficient must be >= 0")
    eps1 = n ** 2 - kappa ** 2
    eps2 = 2.0 * n * kappa
    if eps1.ndim == 0:
        return float(eps1), float(eps2)
    return eps1, eps2


def absorption_coefficient(kappa, energy_ev):
    """alpha = 4 pi kappa E / (h c), in cm^-1 for E in eV."""
    kappa = np.asarray(kappa, dtype=float)
    energy_ev = np.asarray(energy_ev, dtype=float)
    if np.any(energy_ev <= 0):
        raise SpectrumError("photon energy must be positive")
    alpha = 4.0 * np.pi * kappa * energy_ev / HC_EV_CM
    return float(alpha) if alpha.ndim == 0 else alpha


def spectral_difference(doped: ExcitationSpectrum, pristine: ExcitationSpectrum, top_k: int) -> SpectralDiff:
    """Pair the top_k strongest transitions of each system by strength rank."""
    if top_k < 1:
        raise SpectrumError("top_k must be >= 1")
    if len(doped) == 0 or len(pristine) == 0:
        raise SpectrumError("no excitations")
    if top_k > min(len(doped), len(pristine)):
        raise SpectrumError(f"top_k={top_k} exceeds the smaller spectrum ({min(len(doped), len(pristine))})")
    d = doped.strongest(top_k)
    p = pristine.strongest(top_k)
    return SpectralDiff([(wd - wp, fd - fp) for (wd, fd), (wp, fp) in zip(d, p)])


def find_peaks(profile: AbsorptionProfile, min_height: float = 0.0) -> list[tuple[float, float]]:
    v = profile.values
    if v.size < 3:
        return []
    inner = (v[1:-1] > v[:-2]) & (v[1:-1] > v[2:]) & (v[1:-1] >= min_height)
    idx = np.nonzero(inner)[0] + 1
    idx = idx[np.argsort(-v[idx], kind="stable")]
    return [(float(profile.grid[i]), float(v[i])) for i in idx]


def read_excitations_csv(path, system_id: str | None = None, energy_cap: float = DEFAULT_ENERGY_CAP) -> ExcitationSpectrum:
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != EXCITATION_HEADER:
            raise SpectrumError(f"{path}: expected header {','.join(EXCITATION_HEADER)}, got {header}")
        omega, strength = [], []
        for lineno, row in enumerate(reader, 2):
            if not row:
                continue
            try:
                w, f = (float(x) for x in row)
            except ValueError as exc:
                raise SpectrumError(f"{path}:{lineno}: malformed row {row}") from exc
            omega.append(w)
            strength.append(f)
    return ExcitationSpectrum(system_id or path.stem, np.array(omega), np.array(strength), energy_cap)


def write_excitations_csv(spectrum: ExcitationSpectrum, path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(EXCITATION_HEADER)
        for omega, f in zip(spectrum.omega, spectrum.strength):
            w.writerow((repr(float(omega)), repr(float(f))))
