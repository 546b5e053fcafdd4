"""How confusable the received spectra of neighbouring conditions are.

The pairwise error probability of a binary maximum-likelihood decision
between two conditions depends on the squared dB distance ``S`` between
their noise-free spectra. Two closed forms are offered:

* ``paper``: ``0.5 * erfc(S / (2*sqrt(2)))`` (no noise scaling)
* ``ml``:    ``0.5 * erfc(sqrt(S) / (2*sqrt(2)*sigma))``, the exact
  Gaussian result, checked by :func:`mc_error_oracle`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import erfc

from .channel import ChannelParams, FrequencyGrid, expected_rx_power_db
from .circuit import SensorCircuitParams
from .errors import ConfigError

MODES = ("paper", "ml")


@dataclass(frozen=True)
class ConditionGrid:
    """Ordered set of condition vectors, shape ``(N_C, N_T)``."""

    points: np.ndarray
    names: tuple[str, ...] = ()
    units: tuple[str, ...] = ()
    neighbors: tuple[tuple[int, ...], ...] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        pts = np.atleast_2d(np.asarray(self.points, dtype=float))
        if pts.size == 0:
            raise ConfigError("condition grid is empty")
        if len(np.unique(pts, axis=0)) != len(pts):
            raise ConfigError("condition grid contains duplicate vectors")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)
        n_t = pts.shape[1]
        if not self.names:
            object.__setattr__(self, "names", tuple(f"cond_{k + 1}" for k in range(n_t)))
        if not self.units:
            object.__setattr__(self, "units", ("",) * n_t)
        object.__setattr__(self, "neighbors", tuple(_neighbors(j, pts) for j in range(len(pts))))

    @classmethod
    def regular(cls, axes: Sequence[Sequence[float]], names=(), units=()) -> "ConditionGrid":
        """Cartesian product of per-dimension values; the first axis varies slowest."""
        mesh = np.meshgrid(*[np.asarray(a, dtype=float) for a in axes], indexing="ij")
        return cls(np.column_stack([m.ravel() for m in mesh]), tuple(names), tuple(units))

    @property
    def n_conditions(self) -> int:
        return self.points.shape[0]

    @property
    def n_targets(self) -> int:
        return self.points.shape[1]

    @property
    def steps(self) -> np.ndarray:
        """Smallest positive spacing along each dimension (0 for a single value)."""
        out = []
        for k in range(self.n_targets):
            diffs = np.diff(np.unique(self.points[:, k]))
            out.append(diffs.min() if diffs.size else 0.0)
        return np.array(out)

    @property
    def lower(self) -> np.ndarray:
        return self.points.min(axis=0)

    @property
    def upper(self) -> np.ndarray:
        return self.points.max(axis=0)


def _neighbors(j: int, pts: np.ndarray) -> tuple[int, ...]:
    cj = pts[j]
    found: list[int] = []
    for n in range(pts.shape[1]):
        delta = pts[:, n] - cj[n]
        others = np.abs(np.delete(pts - cj, n, axis=1)).sum(axis=1)
        for side in (delta > 0, delta < 0):
            if not side.any():
                continue
            gap = np.abs(delta[side]).min()
            closest = np.flatnonzero(side & (np.abs(delta) == gap))
            # argmin returns the first (lowest) index on ties
            pick = int(closest[np.argmin(others[closest])])
            if pick not in found:
                found.append(pick)
    return tuple(sorted(found))


def nearest_neighbor_set(j: int, grid: ConditionGrid) -> tuple[int, ...]:
    """Indices (0-based) of the closest conditions above and below ``j`` along every dimension."""
    if not 0 <= j < grid.n_conditions:
        raise IndexError(f"condition index {j} outside [0, {grid.n_conditions})")
    return grid.neighbors[j]


def error_probability(sq_dist: float, sigma_db: float, mode: str = "paper") -> float:
    """Pairwise ML error probability from the squared spectral distance."""
    if mode == "paper":
        return 0.5 * math.erfc(sq_dist / (2.0 * math.sqrt(2.0)))
    if mode == "ml":
        if not sigma_db > 0:
            raise ConfigError("mode 'ml' needs a positive noise std")
        return 0.5 * math.erfc(math.sqrt(sq_dist) / (2.0 * math.sqrt(2.0) * sigma_db))
    raise ConfigError(f"unknown error-probability mode {mode!r}; expected one of {MODES}")


def error_probability_array(sq_dist, sigma_db: float, mode: str = "paper") -> np.ndarray:
    sq_dist = np.asarray(sq_dist, dtype=float)
    if mode == "paper":
        return 0.5 * erfc(sq_dist / (2.0 * math.sqrt(2.0)))
    if mode == "ml":
        if not sigma_db > 0:
            raise ConfigError("mode 'ml' needs a positive noise std")
        return 0.5 * erfc(np.sqrt(sq_dist) / (2.0 * math.sqrt(2.0) * sigma_db))
    raise ConfigError(f"unknown error-probability mode {mode!r}; expected one of {MODES}")


def expected_spectra(d, grid: ConditionGrid, cp: ChannelParams, fgrid: FrequencyGrid,
                     circuit: SensorCircuitParams) -> np.ndarray:
    """Noise-free spectra for every grid condition, shape ``(N_C, N_F)``."""
    return expected_rx_power_db(fgrid.frequencies, grid.points, d, cp, circuit)


def pairwise_error_prob(c_j, c_jp, d, cp: ChannelParams, fgrid: FrequencyGrid, circuit: SensorCircuitParams,
                        mode: str = "paper") -> float:
    """Probability of deciding ``c_jp`` when ``c_j`` is true."""
    f = fgrid.frequencies
    tau_j = expected_rx_power_db(f, np.asarray(c_j, dtype=float), d, cp, circuit)
    tau_jp = expected_rx_power_db(f, np.asarray(c_jp, dtype=float), d, cp, circuit)
    return error_probability(float(np.sum((tau_jp - tau_j) ** 2)), cp.noise_db, mode)


def mc_error_oracle(c_j, c_jp, d, cp: ChannelParams, fgrid: FrequencyGrid, circuit: SensorCircuitParams,
                    trials: int, rng: np.random.Generator) -> float:
    """Empirical rate at which the likelihood of ``c_jp`` beats that of the true ``c_j``.

    Draws Gaussian noise around the true spectrum and compares the two
    Gaussian log-likelihoods directly. A tie (identical spectra) never
    counts as an error.
    """
    if trials < 10_000:
        raise ValueError("the oracle needs at least 1e4 trials")
    if not cp.noise_db > 0:
        raise ConfigError("the oracle needs a positive noise std")
    f = fgrid.frequencies
    tau_j = expected_rx_power_db(f, np.asarray(c_j, dtype=float), d, cp, circuit)
    tau_jp = expected_rx_power_db(f, np.asarray(c_jp, dtype=float), d, cp, circuit)
    p = tau_j + rng.normal(0.0, cp.noise_db, size=(trials, f.size))
    loglik_j = -np.sum((p - tau_j) ** 2, axis=1) / (2 * cp.noise_db**2)
    loglik_jp = -np.sum((p - tau_jp) ** 2, axis=1) / (2 * cp.noise_db**2)
    return float(np.mean(loglik_jp > loglik_j))


def indiscernibility_en(d, grid: ConditionGrid, cp: ChannelParams, fgrid: FrequencyGrid,
                        circuit: SensorCircuitParams, mode: str = "paper") -> float:
    """Sum of pairwise error probabilities over nearest-neighbour pairs only."""
    if mode not in MODES:
        raise ConfigError(f"unknown error-probability mode {mode!r}; expected one of {MODES}")
    tau = expected_spectra(d, grid, cp, fgrid, circuit)
    terms = []
    for j, nbrs in enumerate(grid.neighbors):
        for jp in nbrs:
            terms.append(error_probability(float(np.sum((tau[jp] - tau[j]) ** 2)), cp.noise_db, mode))
    return math.fsum(terms)


def indiscernibility_ed(d, grid: ConditionGrid, cp: ChannelParams, fgrid: FrequencyGrid,
                        circuit: SensorCircuitParams) -> float:
    """Negative mean squared spectral distance over all ordered condition pairs."""
    tau = expected_spectra(d, grid, cp, fgrid, circuit)
    sq = np.sum((tau[:, None, :] - tau[None, :, :]) ** 2, axis=2)
    return -math.fsum(sq.ravel()) / grid.n_conditions
