"""Backscatter transmission model.

Received power is pathloss times the beam power reflected by the wall and
by the sensor array, plus a constant receiver bias, expressed in dBm, with
additive Gaussian measurement noise in the dB domain.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .circuit import SensorCircuitParams, fitted_gamma
from .errors import ConfigError, DomainError, GeometryError

SPEED_OF_LIGHT = 299_792_458.0
DBM_REF_W = 1e-3


def to_dbm(power_w):
    """Linear power in watts to dBm."""
    return 10.0 * np.log10(np.asarray(power_w, dtype=float) / DBM_REF_W)


def from_dbm(p_dbm):
    return DBM_REF_W * 10.0 ** (np.asarray(p_dbm, dtype=float) / 10.0)


@dataclass(frozen=True)
class ChannelParams:
    power_w: float
    distance_m: float
    alpha: float = 2.0
    wall_reflection: float = 0.3
    bias_w: float = 1e-9
    noise_db: float = 1.0
    speed_m_per_s: float = SPEED_OF_LIGHT
    s0_m2: float = 1.0
    d0_m: float = 1.0
    n_x: int = 1
    n_y: int = 1
    side_m: float = 0.01
    n_units: int = 1
    wall_table: tuple[tuple[float, float], ...] = ()  # optional (freq_hz, R_w) pairs

    def __post_init__(self):
        if not self.power_w > 0:
            raise ConfigError("transmit power must be positive")
        if not self.distance_m > 0:
            raise ConfigError("distance must be positive")
        if not 0.0 <= self.wall_reflection <= 1.0:
            raise ConfigError("wall reflection must lie in [0, 1]")
        if any(not 0.0 <= r <= 1.0 for _, r in self.wall_table):
            raise ConfigError("wall reflection table entries must lie in [0, 1]")
        if not self.bias_w > 0:
            raise ConfigError("receiver bias must be positive")
        if not self.bias_w < 0.01 * self.power_w:
            raise ConfigError(f"receiver bias {self.bias_w} W must be below 1% of transmit power {self.power_w} W")
        if not self.noise_db >= 0:
            raise ConfigError("noise std must be non-negative")
        if min(self.speed_m_per_s, self.s0_m2, self.d0_m, self.side_m) <= 0:
            raise ConfigError("speed, S0, D0 and sensor side must be positive")
        if min(self.n_x, self.n_y, self.n_units) < 1:
            raise ConfigError("array dimensions must be >= 1")
        area_fractions(self)

    @property
    def array_area_m2(self) -> float:
        return self.n_units * self.side_m**2 * self.n_x * self.n_y

    def wall_reflection_at(self, f):
        if not self.wall_table:
            return self.wall_reflection
        fs, rs = zip(*sorted(self.wall_table))
        return np.interp(np.asarray(f, dtype=float), fs, rs)


@dataclass(frozen=True)
class FrequencyGrid:
    f_lb_hz: float
    f_ub_hz: float
    n_points: int

    def __post_init__(self):
        if self.n_points == 1 and 0 < self.f_lb_hz <= self.f_ub_hz:
            return
        if not 0 < self.f_lb_hz < self.f_ub_hz:
            raise ConfigError("frequency grid needs 0 < f_lb < f_ub")
        if self.n_points < 2:
            raise ConfigError("frequency grid needs at least 2 points")

    @property
    def frequencies(self) -> np.ndarray:
        if self.n_points == 1:
            return np.array([self.f_lb_hz])
        return np.linspace(self.f_lb_hz, self.f_ub_hz, self.n_points)


def pathloss(f, distance_m: float, alpha: float, v: float = SPEED_OF_LIGHT):
    """Free-space term times a distance power law over the round trip 2D."""
    f = np.asarray(f, dtype=float)
    if np.any(f <= 0) or distance_m <= 0 or v <= 0:
        raise DomainError("pathloss needs positive frequency, distance and speed")
    return (v / (4 * np.pi * f)) ** 2 * (1.0 / (2 * distance_m)) ** alpha


def area_fractions(cp: ChannelParams) -> tuple[float, float]:
    """(eta_ms, eta_env): beam-footprint fractions hitting the array and the wall."""
    footprint = cp.s0_m2 * (cp.distance_m / cp.d0_m) ** 2
    if not footprint > 0:
        raise GeometryError("antenna footprint must be positive")
    eta_ms = cp.array_area_m2 / footprint
    if eta_ms > 1.0:
        raise GeometryError(f"sensor array ({cp.array_area_m2:g} m^2) exceeds beam footprint ({footprint:g} m^2) "
                            f"at D = {cp.distance_m} m")
    return eta_ms, 1.0 - eta_ms


def rx_power_linear(f, gamma, cp: ChannelParams):
    """Noise-free received power in watts for given reflection coefficients."""
    eta_ms, eta_env = area_fractions(cp)
    pl = pathloss(f, cp.distance_m, cp.alpha, cp.speed_m_per_s)
    rw = cp.wall_reflection_at(f)
    return pl * (eta_env * cp.power_w * rw + eta_ms * cp.power_w * gamma) + cp.bias_w


def expected_rx_power_db(f, c, d, cp: ChannelParams, circuit: SensorCircuitParams):
    """Noise-free received power tau (dBm); shape ``c.shape[:-1] + f.shape``."""
    gamma = fitted_gamma(f, c, d, circuit)
    return to_dbm(rx_power_linear(f, gamma, cp))


def sample_rx_power_db(f, c, d, cp: ChannelParams, circuit: SensorCircuitParams, rng: np.random.Generator):
    tau = expected_rx_power_db(f, c, d, cp, circuit)
    if cp.noise_db == 0:
        return tau
    return tau + rng.normal(0.0, cp.noise_db, size=np.shape(tau))


def rx_power_vector(c, d, cp: ChannelParams, grid: FrequencyGrid, circuit: SensorCircuitParams,
                    rng: np.random.Generator) -> np.ndarray:
    """One measured spectrum: independent noisy samples at every grid frequency."""
    c = np.asarray(c, dtype=float)
    if c.ndim != 1:
        raise DomainError("rx_power_vector takes a single condition vector")
    return sample_rx_power_db(grid.frequencies, c, d, cp, circuit, rng)


def substream(seed: int, *key: int) -> np.random.Generator:
    """Independent generator for task ``key`` under master ``seed``."""
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key)))


def derive_seed(seed: int, *key: int) -> int:
    return int(np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key)).generate_state(1, np.uint64)[0])

