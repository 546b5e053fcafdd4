"""Global minimisation of a structure objective over the gap widths.

``surrogate_optimize`` is a stochastic RBF method: a Latin-hypercube start,
then one evaluation per iteration chosen among random candidates by a
weighted score of the cubic-RBF prediction and the distance to points
already evaluated. ``grid_search`` and ``grid_average`` are the exhaustive
baselines over the integer design grid.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.interpolate import RBFInterpolator
from scipy.stats import qmc

from .errors import ConfigError

Objective = Callable[[np.ndarray], float]


@dataclass(frozen=True)
class DesignSpace:
    lower: tuple[float, ...]
    upper: tuple[float, ...]
    eps: float = 0.05
    integer_step: float = 1.0

    def __post_init__(self):
        lo, hi = np.asarray(self.lower, float), np.asarray(self.upper, float)
        if lo.shape != hi.shape or lo.ndim != 1 or lo.size == 0:
            raise ConfigError("design bounds must be equal-length non-empty vectors")
        if np.any(lo >= hi):
            raise ConfigError("design bounds need lower < upper in every dimension")
        if not self.eps > 0:
            raise ConfigError("distinctness margin must be positive")
        object.__setattr__(self, "lower", tuple(float(x) for x in lo))
        object.__setattr__(self, "upper", tuple(float(x) for x in hi))
        if lo.size > 1 and not self._has_feasible_point():
            raise ConfigError(f"no structure in the bounds keeps every pair {self.eps} mm apart")

    @property
    def dim(self) -> int:
        return len(self.lower)

    def _has_feasible_point(self) -> bool:
        # Greedy: sorting dimensions by lower bound, place each as low as allowed.
        lo, hi = np.asarray(self.lower), np.asarray(self.upper)
        placed: list[float] = []
        for k in np.argsort(lo):
            x = lo[k]
            for p in sorted(placed):
                if abs(x - p) < self.eps:
                    x = p + self.eps
            if x > hi[k] or any(abs(x - p) < self.eps for p in placed):
                return False
            placed.append(x)
        return True

    def feasible(self, d) -> bool:
        d = np.asarray(d, dtype=float)
        if d.shape != (self.dim,):
            return False
        if np.any(d < np.asarray(self.lower)) or np.any(d > np.asarray(self.upper)):
            return False
        return all(abs(a - b) >= self.eps for a, b in itertools.combinations(d, 2))

    def integer_grid(self) -> list[np.ndarray]:
        """Feasible points on the ``integer_step`` lattice, in lexicographic order."""
        axes = []
        for lo, hi in zip(self.lower, self.upper):
            start = math.ceil(lo / self.integer_step - 1e-9) * self.integer_step
            axes.append(np.arange(start, hi + 1e-9 * self.integer_step, self.integer_step))
        pts = [np.array(p) for p in itertools.product(*axes)]
        return [p for p in pts if self.feasible(p)]

    def to_unit(self, x: np.ndarray) -> np.ndarray:
        lo, hi = np.asarray(self.lower), np.asarray(self.upper)
        return (x - lo) / (hi - lo)

    def from_unit(self, u: np.ndarray) -> np.ndarray:
        lo, hi = np.asarray(self.lower), np.asarray(self.upper)
        return lo + u * (hi - lo)


@dataclass(frozen=True)
class SurrogateConfig:
    budget: int = 80
    initial_points: int | None = None  # default 2 * (dim + 1)
    kernel: str = "cubic"
    n_candidates: int = 200
    radius_init: float = 0.2
    radius_min: float = 0.2 * 0.5**6
    fail_tolerance: int = 3
    success_tolerance: int = 3
    weights: tuple[float, ...] = (0.3, 0.5, 0.8, 0.95)
    seed_grid: bool = False
    ridge: float = 1e-8

    def n_initial(self, dim: int) -> int:
        return self.initial_points if self.initial_points is not None else 2 * (dim + 1)

    def validate(self, dim: int) -> None:
        if self.n_initial(dim) < dim + 1:
            raise ConfigError(f"initial design needs at least {dim + 1} points")
        if self.budget < self.n_initial(dim):
            raise ConfigError("budget must be at least the initial design size")
        if not self.weights or any(not 0 <= w <= 1 for w in self.weights):
            raise ConfigError("score weights must lie in [0, 1]")
        if self.n_candidates < 1:
            raise ConfigError("n_candidates must be positive")


@dataclass
class OptimizationTrace:
    indices: list[int] = field(default_factory=list)
    points: list[np.ndarray] = field(default_factory=list)
    values: list[float] = field(default_factory=list)

    def record(self, d: np.ndarray, value: float) -> None:
        self.indices.append(len(self.indices))
        self.points.append(np.array(d, dtype=float))
        self.values.append(float(value))

    def __len__(self) -> int:
        return len(self.values)

    @property
    def best_index(self) -> int:
        return int(np.argmin(self.values))  # first occurrence on ties

    @property
    def best(self) -> tuple[np.ndarray, float]:
        i = self.best_index
        return self.points[i], self.values[i]

    def incumbent_values(self) -> np.ndarray:
        return np.minimum.accumulate(np.asarray(self.values))

    def rows(self) -> Iterable[tuple]:
        for i, d, v in zip(self.indices, self.points, self.values):
            yield (i, *d.tolist(), v)


@dataclass
class SurrogateResult:
    x: np.ndarray
    value: float
    trace: OptimizationTrace


def _sample_feasible(space: DesignSpace, rng: np.random.Generator, n: int) -> np.ndarray:
    out = []
    while len(out) < n:
        batch = space.from_unit(rng.random((max(n, 16), space.dim)))
        out.extend(p for p in batch if space.feasible(p))
    return np.array(out[:n])


def _initial_design(space: DesignSpace, cfg: SurrogateConfig, rng: np.random.Generator) -> list[np.ndarray]:
    n0 = cfg.n_initial(space.dim)
    lhs = qmc.LatinHypercube(d=space.dim, seed=rng).random(n0)
    pts = []
    for u in lhs:
        p = space.from_unit(u)
        pts.append(p if space.feasible(p) else _sample_feasible(space, rng, 1)[0])
    if cfg.seed_grid:
        pts = [*space.integer_grid(), *pts]
    return pts


def surrogate_optimize(objective: Objective, space: DesignSpace, cfg: SurrogateConfig,
                       rng: np.random.Generator) -> SurrogateResult:
    """Minimise ``objective`` with exactly ``cfg.budget`` evaluations.

    With ``cfg.seed_grid`` the integer design grid is evaluated first, so the
    incumbent can never be worse than :func:`grid_search` on that grid.
    """
    cfg.validate(space.dim)
    initial = _initial_design(space, cfg, rng)
    if len(initial) > cfg.budget:
        raise ConfigError(f"budget {cfg.budget} is smaller than the seeded initial design ({len(initial)})")

    trace = OptimizationTrace()
    for p in initial:
        trace.record(p, _evaluate(objective, p))

    radius = cfg.radius_init
    fails = succ = 0
    it = 0
    while len(trace) < cfg.budget:
        best_x, best_v = trace.best
        x_unit = space.to_unit(np.array(trace.points))
        y = np.array(trace.values)
        x_fit, y_fit = _merge_duplicates(x_unit, y)
        rbf = RBFInterpolator(x_fit, y_fit, kernel=cfg.kernel, degree=1, smoothing=cfg.ridge)

        cand = _candidates(space, cfg, rng, space.to_unit(best_x), radius)
        dist = np.min(np.linalg.norm(cand[:, None, :] - x_unit[None, :, :], axis=2), axis=1)
        keep = dist > 1e-6
        if keep.any():
            cand, dist = cand[keep], dist[keep]
        pred = rbf(cand)
        w = cfg.weights[it % len(cfg.weights)]
        score = w * _unit_scale(pred) + (1 - w) * _unit_scale(-dist)
        x_new = space.from_unit(cand[int(np.argmin(score))])
        v_new = _evaluate(objective, x_new)
        trace.record(x_new, v_new)
        it += 1

        if v_new < best_v - 1e-3 * abs(best_v):
            succ, fails = succ + 1, 0
        else:
            succ, fails = 0, fails + 1
        if succ >= cfg.success_tolerance:
            radius, succ = min(2 * radius, cfg.radius_init), 0
        if fails >= cfg.fail_tolerance:
            radius, fails = max(radius / 2, cfg.radius_min), 0

    x, v = trace.best
    return SurrogateResult(x=x, value=v, trace=trace)


def _evaluate(objective: Objective, d: np.ndarray) -> float:
    v = float(objective(np.array(d, dtype=float)))
    if not math.isfinite(v):
        raise ValueError(f"objective is not finite at {d.tolist()}")
    return v


def _merge_duplicates(x: np.ndarray, y: np.ndarray, tol: float = 1e-9):
    keep_x, keep_y = [], []
    for xi, yi in zip(x, y):
        for k, xk in enumerate(keep_x):
            if np.max(np.abs(xk - xi)) <= tol:
                keep_y[k] = min(keep_y[k], yi)
                break
        else:
            keep_x.append(xi)
            keep_y.append(yi)
    return np.array(keep_x), np.array(keep_y)


def _candidates(space: DesignSpace, cfg: SurrogateConfig, rng: np.random.Generator, center: np.ndarray,
                radius: float) -> np.ndarray:
    n_local = cfg.n_candidates // 2
    local = np.clip(center + radius * rng.standard_normal((n_local, space.dim)), 0.0, 1.0)
    uniform = rng.random((cfg.n_candidates - n_local, space.dim))
    cand = np.vstack([local, uniform])
    ok = np.array([space.feasible(space.from_unit(u)) for u in cand])
    if not ok.any():
        return space.to_unit(_sample_feasible(space, rng, cfg.n_candidates))
    return cand[ok]


def _unit_scale(v: np.ndarray) -> np.ndarray:
    lo, hi = v.min(), v.max()
    return np.zeros_like(v) if hi - lo <= 0 else (v - lo) / (hi - lo)


def grid_search(objective: Objective, grid: Sequence) -> tuple[np.ndarray, float]:
    """Exact argmin over ``grid``; ties go to the lexicographically smallest point."""
    if len(grid) == 0:
        raise ValueError("grid_search needs a non-empty grid")
    pts = sorted((np.array(p, dtype=float) for p in grid), key=lambda p: tuple(p))
    values = [_evaluate(objective, p) for p in pts]
    i = int(np.argmin(values))
    return pts[i], values[i]


def grid_average(objective: Objective, grid: Sequence) -> float:
    if len(grid) == 0:
        raise ValueError("grid_average needs a non-empty grid")
    return math.fsum(_evaluate(objective, np.array(p, dtype=float)) for p in grid) / len(grid)
