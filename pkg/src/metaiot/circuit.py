"""Equivalent-circuit model of a meta-material sensor.

Each sensing unit is a split-ring resonator approximated by a parallel RLC
tank whose gap resistance depends on a condition-sensitive material. The
units are combined in parallel (or in series) with a coupling term, and the aggregate
impedance is mapped to a power reflection coefficient against free space.

Array conventions: a condition argument ``c`` has shape ``(..., N_T)`` and a
frequency argument ``f`` has any shape; impedance outputs have shape
``c.shape[:-1] + f.shape``. Gap widths are in millimetres.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.interpolate import LinearNDInterpolator, RegularGridInterpolator
from scipy.spatial import QhullError

from .errors import ConfigError, DomainError, ExtrapolationError, RangeError, SingularityError

Z0_FREE_SPACE = 377.0
KELVIN_OFFSET = 273.15
MM = 1e-3

MATERIAL_KINDS = ("ntc", "exponential", "table")


@dataclass(frozen=True)
class MaterialModel:
    """Conductivity of a condition-sensitive material.

    ``kind`` selects the closed form driven by the primary condition
    ``c[index]``:

    * ``ntc``: ``sigma_ref * exp(coeff * (1/T_ref - 1/T))`` with temperatures
      in degrees Celsius converted to kelvin (``coeff`` is the Beta constant).
    * ``exponential``: ``sigma_ref * exp(coeff * (c - c_ref))``.
    * ``table``: piecewise-linear interpolation of ``table_sigma`` over
      ``table_c``.

    ``cross`` holds ``(dimension, coefficient, reference)`` triples that add
    ``coefficient * (c[dimension] - reference)`` to the log-conductivity.
    """

    kind: str
    sigma_ref: float = 1.0
    c_ref: float = 0.0
    coeff: float = 0.0
    index: int = 0
    c_range: tuple[float, float] = (-math.inf, math.inf)
    cross: tuple[tuple[int, float, float], ...] = ()
    table_c: tuple[float, ...] = ()
    table_sigma: tuple[float, ...] = ()

    def __post_init__(self):
        if self.kind not in MATERIAL_KINDS:
            raise ConfigError(f"unknown material kind {self.kind!r}; expected one of {MATERIAL_KINDS}")
        lo, hi = self.c_range
        if not lo < hi:
            raise ConfigError(f"material range must satisfy lo < hi, got {self.c_range}")
        if self.kind == "table":
            tc = np.asarray(self.table_c, dtype=float)
            ts = np.asarray(self.table_sigma, dtype=float)
            if tc.size < 2 or tc.shape != ts.shape:
                raise ConfigError("table material needs matching table_c/table_sigma with >= 2 entries")
            if np.any(np.diff(tc) <= 0):
                raise ConfigError("table_c must be strictly increasing")
            if np.any(ts <= 0) or not np.all(np.isfinite(ts)):
                raise ConfigError("table_sigma entries must be positive and finite")
        elif not (self.sigma_ref > 0 and math.isfinite(self.sigma_ref)):
            raise ConfigError("sigma_ref must be positive and finite")
        if self.kind == "ntc" and self.c_ref + KELVIN_OFFSET <= 0:
            raise ConfigError("NTC reference temperature must be above absolute zero")


def conductivity(material: MaterialModel, c) -> np.ndarray:
    """Conductivity (S/m) of ``material`` at conditions ``c``.

    Returns an array of shape ``c.shape[:-1]`` (a 0-d array for one vector).
    """
    c = np.asarray(c, dtype=float)
    if c.ndim == 0 or c.shape[-1] <= material.index:
        raise DomainError(f"condition vector has no dimension {material.index}")
    x = c[..., material.index]
    lo, hi = material.c_range
    if not np.all((x >= lo) & (x <= hi) & np.isfinite(x)):
        raise RangeError(f"condition {material.index} outside material range [{lo}, {hi}]")

    if material.kind == "ntc":
        t = x + KELVIN_OFFSET
        if np.any(t <= 0):
            raise RangeError("temperature below absolute zero")
        log_sigma = math.log(material.sigma_ref) + material.coeff * (1.0 / (material.c_ref + KELVIN_OFFSET) - 1.0 / t)
    elif material.kind == "exponential":
        log_sigma = math.log(material.sigma_ref) + material.coeff * (x - material.c_ref)
    else:
        tc = np.asarray(material.table_c)
        if np.any(x < tc[0]) or np.any(x > tc[-1]):
            raise RangeError("condition outside the tabulated conductivity range")
        log_sigma = np.log(np.interp(x, tc, np.asarray(material.table_sigma)))

    for dim, k, ref in material.cross:
        if dim >= c.shape[-1]:
            raise DomainError(f"cross-sensitivity refers to missing dimension {dim}")
        log_sigma = log_sigma + k * (c[..., dim] - ref)
    return np.exp(log_sigma)


@dataclass(frozen=True)
class UnitCircuitParams:
    l_para: float  # H
    c_para: float  # F
    c_gap_unit: float  # F*mm
    w_srr_mm: float
    h_srr_mm: float
    material: MaterialModel

    def __post_init__(self):
        for name in ("l_para", "c_para", "c_gap_unit", "w_srr_mm", "h_srr_mm"):
            v = getattr(self, name)
            if not (v > 0 and math.isfinite(v)):
                raise ConfigError(f"{name} must be positive and finite, got {v}")


TOPOLOGIES = ("parallel", "series")


@dataclass(frozen=True)
class SensorCircuitParams:
    units: tuple[UnitCircuitParams, ...]
    c_cp: float  # F
    z0: float = Z0_FREE_SPACE
    correction: CorrectionTable | None = field(default=None, compare=False)
    topology: str = "parallel"  # or "series"

    def __post_init__(self):
        object.__setattr__(self, "units", tuple(self.units))
        if self.topology not in TOPOLOGIES:
            raise ConfigError(f"unknown topology {self.topology!r}; expected one of {TOPOLOGIES}")
        if len(self.units) < 1:
            raise ConfigError("a sensor needs at least one unit")
        if not self.c_cp > 0:
            raise ConfigError("coupling capacitance must be positive")
        if not self.z0 > 0:
            raise ConfigError("Z0 must be positive")

    @property
    def n_units(self) -> int:
        return len(self.units)


def gap_resistance(c, d_n: float, p: UnitCircuitParams) -> np.ndarray:
    """R_gap = d / (sigma * W * H), SI units throughout."""
    sigma = conductivity(p.material, c)
    return (d_n * MM) / (sigma * (p.w_srr_mm * MM) * (p.h_srr_mm * MM))


def gap_capacitance(d_n: float, p: UnitCircuitParams) -> float:
    return p.c_gap_unit / d_n


def _check_positive(f, d) -> np.ndarray:
    f = np.asarray(f, dtype=float)
    if not np.all((f > 0) & np.isfinite(f)):
        raise DomainError("frequency must be positive and finite")
    if np.any(np.asarray(d, dtype=float) <= 0):
        raise DomainError("gap width must be positive")
    return f


def _unit_admittance(f: np.ndarray, c, d_n: float, p: UnitCircuitParams) -> np.ndarray:
    r = gap_resistance(c, d_n, p)
    r = r.reshape(r.shape + (1,) * f.ndim)
    w = 2 * np.pi * f
    return 1.0 / (1j * w * p.l_para) + 1j * w * p.c_para + 1j * w * gap_capacitance(d_n, p) + 1.0 / r


def unit_impedance(f, c, d_n: float, p: UnitCircuitParams) -> np.ndarray:
    """Impedance of one sensing unit (parallel L, C_para, C_gap, R_gap)."""
    f = _check_positive(f, d_n)
    return 1.0 / _unit_admittance(f, c, float(d_n), p)


def _check_structure(f, d, p: SensorCircuitParams):
    f = _check_positive(f, d)
    d = np.asarray(d, dtype=float)
    if d.shape != (p.n_units,):
        raise DomainError(f"structure vector must have {p.n_units} gap widths, got shape {d.shape}")
    return f, d


def sensor_admittance(f, c, d: Sequence[float], p: SensorCircuitParams) -> np.ndarray:
    """Input admittance of the array, honouring ``p.topology``."""
    if p.topology == "series":
        return 1.0 / sensor_impedance(f, c, d, p)
    f, d = _check_structure(f, d, p)
    y = sum(_unit_admittance(f, c, float(dn), unit) for dn, unit in zip(d, p.units))
    return y + (p.n_units - 1) / (1j * 2 * np.pi * f * p.c_cp)


def sensor_impedance(f, c, d: Sequence[float], p: SensorCircuitParams) -> np.ndarray:
    """Aggregate impedance of all units plus the inter-unit coupling term.

    ``parallel``: unit admittances and the coupling admittance add.
    ``series``: unit impedances and the coupling impedance add, so each
    unit's condition shapes its own resonance in the spectrum.
    """
    if p.topology == "parallel":
        return 1.0 / sensor_admittance(f, c, d, p)
    f, d = _check_structure(f, d, p)
    z = sum(1.0 / _unit_admittance(f, c, float(dn), unit) for dn, unit in zip(d, p.units))
    return z + (p.n_units - 1) / (1j * 2 * np.pi * f * p.c_cp)


def reflection_coefficient(z, z0: float = Z0_FREE_SPACE) -> np.ndarray:
    """Power reflection coefficient |(Z - Z0) / (Z + Z0)|^2.

    Evaluated as ``num / (num + 4 Re(Z) Z0)``, which stays inside [0, 1] in
    floating point for every passive load.
    """
    z = np.asarray(z, dtype=complex)
    r, x = z.real, z.imag
    num = (r - z0) ** 2 + x**2
    den = num + 4.0 * r * z0
    if np.any(den == 0):
        raise SingularityError("Z = -Z0: reflection coefficient is undefined")
    return num / den


class CorrectionTable:
    """Multiplicative correction to the analytic reflection coefficient.

    Factors are sampled at a set of frequencies and a set of structure
    vectors (the same set for every frequency). Interpolation is
    multilinear over a full tensor grid of structures, Delaunay-linear for
    scattered structures, and piecewise-linear in frequency.
    """

    def __init__(self, freqs_hz, structures_mm, factors):
        freqs = np.asarray(freqs_hz, dtype=float)
        pts = np.atleast_2d(np.asarray(structures_mm, dtype=float))
        fac = np.asarray(factors, dtype=float)
        if fac.shape != (freqs.size, pts.shape[0]):
            raise ConfigError(f"factors must have shape {(freqs.size, pts.shape[0])}, got {fac.shape}")
        if np.any(fac <= 0) or not np.all(np.isfinite(fac)):
            raise ConfigError("correction factors must be positive and finite")
        order = np.argsort(freqs)
        self.freqs = freqs[order]
        if np.any(np.diff(self.freqs) <= 0):
            raise ConfigError("correction table frequencies must be distinct")
        self.structures = pts
        self.factors = fac[order]
        self.n_units = pts.shape[1]
        self._interp = self._build()

    def _build(self):
        axes = [np.unique(self.structures[:, k]) for k in range(self.n_units)]
        full = int(np.prod([a.size for a in axes])) == self.structures.shape[0]
        if full and all(a.size >= 2 for a in axes):
            idx = tuple(np.searchsorted(a, self.structures[:, k]) for k, a in enumerate(axes))
            values = np.empty((self.freqs.size,) + tuple(a.size for a in axes))
            values[(slice(None),) + idx] = self.factors
            rgi = RegularGridInterpolator([self.freqs, *axes], values, method="linear", bounds_error=False,
                                          fill_value=np.nan)

            def interp(f, d):
                q = np.column_stack([f, np.broadcast_to(d, (f.size, self.n_units))])
                return rgi(q)

            return interp

        if self.n_units == 1:
            xs = self.structures[:, 0]
            order = np.argsort(xs)

            def per_freq(d):
                x = float(d[0])
                if x < xs[order[0]] or x > xs[order[-1]]:
                    return np.full(self.freqs.size, np.nan)
                return np.array([np.interp(x, xs[order], row[order]) for row in self.factors])
        else:
            try:
                lin = LinearNDInterpolator(self.structures, self.factors.T, fill_value=np.nan)
            except QhullError as exc:
                raise ConfigError(f"correction table structures do not span the design space: {exc}") from None

            def per_freq(d):
                return np.asarray(lin(np.asarray(d, dtype=float)[None, :]))[0]

        def interp(f, d):
            col = per_freq(d)
            if f.size and (f.min() < self.freqs[0] or f.max() > self.freqs[-1]):
                return np.full(f.size, np.nan)
            return np.interp(f, self.freqs, col)

        return interp

    def factor(self, f, d) -> np.ndarray:
        f = np.asarray(f, dtype=float)
        d = np.asarray(d, dtype=float)
        if d.shape != (self.n_units,):
            raise DomainError(f"table expects {self.n_units} gap widths")
        out = np.asarray(self._interp(f.ravel(), d), dtype=float)
        if np.any(np.isnan(out)):
            raise ExtrapolationError(f"structure {d.tolist()} or frequency outside the correction table hull")
        return out.reshape(f.shape)

    @classmethod
    def constant(cls, value: float, freqs_hz, structures_mm) -> "CorrectionTable":
        pts = np.atleast_2d(np.asarray(structures_mm, dtype=float))
        return cls(freqs_hz, pts, np.full((len(freqs_hz), pts.shape[0]), float(value)))

    @classmethod
    def from_csv(cls, path) -> "CorrectionTable":
        """Load ``freq_hz,d_1_mm,...,d_NT_mm,factor`` rows."""
        with open(path, newline="") as fh:
            rows = [r for r in csv.reader(line for line in fh if not line.startswith("#")) if r]
        header, body = rows[0], rows[1:]
        if header[0] != "freq_hz" or header[-1] != "factor" or len(header) < 3:
            raise ConfigError(f"{path}: bad correction table header {header}")
        data = np.array(body, dtype=float)
        freqs = np.unique(data[:, 0])
        structs = np.unique(data[:, 1:-1], axis=0)
        factors = np.full((freqs.size, structs.shape[0]), np.nan)
        for row in data:
            i = np.searchsorted(freqs, row[0])
            j = int(np.flatnonzero(np.all(structs == row[1:-1], axis=1))[0])
            factors[i, j] = row[-1]
        if np.any(np.isnan(factors)):
            raise ConfigError(f"{path}: every structure must be sampled at every frequency")
        return cls(freqs, structs, factors)

    def to_csv(self, path) -> None:
        n = self.n_units
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["freq_hz", *[f"d_{k + 1}_mm" for k in range(n)], "factor"])
            for i, f in enumerate(self.freqs):
                for j, d in enumerate(self.structures):
                    w.writerow([repr(float(f)), *[repr(float(x)) for x in d], repr(float(self.factors[i, j]))])


def fitted_gamma(f, c, d, p: SensorCircuitParams, tbl: CorrectionTable | None = None) -> np.ndarray:
    """Reflection coefficient with the optional multiplicative correction.

    ``tbl`` defaults to ``p.correction``. The result is clamped to [0, 1].
    """
    tbl = tbl if tbl is not None else p.correction
    gamma = reflection_coefficient(sensor_impedance(f, c, d, p), p.z0)
    if tbl is None:
        return gamma
    return np.clip(gamma * tbl.factor(f, d), 0.0, 1.0)


def load_correction_table(path: str | Path | None) -> CorrectionTable | None:
    return None if path is None else CorrectionTable.from_csv(path)
