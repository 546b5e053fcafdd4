import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from metaiot.discernibility import indiscernibility_en
from metaiot.errors import ConfigError
from metaiot.structopt import (DesignSpace, OptimizationTrace, SurrogateConfig, grid_average, grid_search,
                               surrogate_optimize)

SPACE = DesignSpace((1.0, 1.0), (5.0, 5.0))


def quadratic(d):
    return float(np.sum((np.asarray(d) - [2.0, 3.0]) ** 2))


class Counter:
    def __init__(self, fn):
        self.fn, self.calls = fn, []

    def __call__(self, d):
        self.calls.append(np.array(d))
        return self.fn(d)


class TestDesignSpace:
    def test_integer_grid_has_twenty_points(self):
        grid = SPACE.integer_grid()
        assert len(grid) == 20
        assert all(p[0] != p[1] for p in grid)
        assert [tuple(p) for p in grid] == sorted(tuple(p) for p in grid)

    def test_feasibility(self):
        assert SPACE.feasible([1.0, 1.05])
        assert not SPACE.feasible([1.0, 1.04])
        assert not SPACE.feasible([0.9, 3.0])
        assert not SPACE.feasible([1.0, 2.0, 3.0])

    def test_infeasible_bounds(self):
        with pytest.raises(ConfigError):
            DesignSpace((1.0, 1.0, 1.0), (1.04, 1.04, 1.04))

    @pytest.mark.parametrize("lo,hi,eps", [((1.0,), (1.0,), 0.05), ((1.0, 2.0), (5.0,), 0.05),
                                           ((1.0,), (5.0,), 0.0)])
    def test_invalid(self, lo, hi, eps):
        with pytest.raises(ConfigError):
            DesignSpace(lo, hi, eps)

    def test_unit_round_trip(self):
        x = np.array([1.7, 4.2])
        np.testing.assert_allclose(SPACE.from_unit(SPACE.to_unit(x)), x)


class TestSurrogate:
    def test_known_optimum(self):
        res = surrogate_optimize(quadratic, SPACE, SurrogateConfig(budget=60), np.random.default_rng(0))
        assert np.linalg.norm(res.x - [2.0, 3.0]) < 0.1

    def test_exact_budget(self):
        obj = Counter(quadratic)
        surrogate_optimize(obj, SPACE, SurrogateConfig(budget=37), np.random.default_rng(1))
        assert len(obj.calls) == 37

    def test_budget_equal_initial_design(self):
        obj = Counter(quadratic)
        cfg = SurrogateConfig(budget=6)
        res = surrogate_optimize(obj, SPACE, cfg, np.random.default_rng(2))
        assert len(obj.calls) == cfg.n_initial(2) == 6
        assert res.value == min(quadratic(p) for p in obj.calls)

    def test_deterministic(self):
        a = surrogate_optimize(quadratic, SPACE, SurrogateConfig(budget=30), np.random.default_rng(3))
        b = surrogate_optimize(quadratic, SPACE, SurrogateConfig(budget=30), np.random.default_rng(3))
        assert list(a.trace.rows()) == list(b.trace.rows())

    def test_value_is_min_of_trace(self):
        res = surrogate_optimize(quadratic, SPACE, SurrogateConfig(budget=25), np.random.default_rng(4))
        assert res.value == min(res.trace.values)
        assert res.value == quadratic(res.x)

    @given(st.integers(0, 2**32 - 1))
    def test_every_point_feasible_and_incumbent_monotone(self, seed):
        # optimum on the diagonal pushes evaluations against the distinctness margin
        obj = Counter(lambda d: float(np.sum((np.asarray(d) - 3.0) ** 2)))
        res = surrogate_optimize(obj, SPACE, SurrogateConfig(budget=20), np.random.default_rng(seed))
        assert all(SPACE.feasible(p) for p in obj.calls)
        inc = res.trace.incumbent_values()
        assert np.all(np.diff(inc) <= 0)

    def test_seeded_grid_dominates(self):
        cfg = SurrogateConfig(budget=40, seed_grid=True)
        obj = lambda d: float(np.sum(np.sin(3 * np.asarray(d))) + 0.1 * np.sum(np.asarray(d)))
        res = surrogate_optimize(obj, SPACE, cfg, np.random.default_rng(5))
        _, v_grid = grid_search(obj, SPACE.integer_grid())
        assert res.value <= v_grid

    def test_budget_too_small_for_seeded_grid(self):
        with pytest.raises(ConfigError):
            surrogate_optimize(quadratic, SPACE, SurrogateConfig(budget=20, seed_grid=True), np.random.default_rng(0))

    @pytest.mark.parametrize("kw", [{"initial_points": 2}, {"budget": 4}, {"weights": (1.5,)},
                                    {"n_candidates": 0}])
    def test_invalid_config(self, kw):
        with pytest.raises(ConfigError):
            SurrogateConfig(**kw).validate(2)

    def test_non_finite_objective(self):
        with pytest.raises(ValueError):
            surrogate_optimize(lambda d: math.nan, SPACE, SurrogateConfig(budget=6), np.random.default_rng(0))


class TestGridSearch:
    def test_singleton(self):
        assert grid_search(quadratic, [np.array([4.0, 1.0])])[0].tolist() == [4.0, 1.0]

    def test_counts_every_point(self):
        obj = Counter(quadratic)
        d, v = grid_search(obj, SPACE.integer_grid())
        assert len(obj.calls) == 20
        assert d.tolist() == [2.0, 3.0] and v == 0.0

    def test_tie_goes_to_lexicographic_minimum(self):
        grid = [np.array([3.0, 1.0]), np.array([1.0, 3.0]), np.array([2.0, 5.0])]
        assert grid_search(lambda d: 1.0, grid)[0].tolist() == [1.0, 3.0]

    def test_empty(self):
        with pytest.raises(ValueError):
            grid_search(quadratic, [])

    def test_toy_objective_matches_loop(self, toy):
        obj = lambda d: indiscernibility_en(d, toy.conditions, toy.channel, toy.frequency, toy.circuit)
        grid = SPACE.integer_grid()
        best_d, best_v = None, math.inf
        for p in grid:
            v = obj(p)
            if v < best_v:
                best_d, best_v = p, v
        d, v = grid_search(obj, grid)
        assert d.tolist() == best_d.tolist() and v == best_v


class TestGridAverage:
    def test_constant(self):
        assert grid_average(lambda d: 2.5, SPACE.integer_grid()) == 2.5

    def test_two_points(self):
        assert grid_average(lambda d: float(d[0]), [np.array([1.0]), np.array([4.0])]) == 2.5

    def test_empty(self):
        with pytest.raises(ValueError):
            grid_average(quadratic, [])

    def test_toy_objective_matches_mean(self, toy):
        obj = lambda d: indiscernibility_en(d, toy.conditions, toy.channel, toy.frequency, toy.circuit)
        grid = SPACE.integer_grid()
        assert grid_average(obj, grid) == pytest.approx(sum(obj(p) for p in grid) / len(grid), rel=1e-14)


def test_trace_rows():
    t = OptimizationTrace()
    t.record(np.array([1.0, 2.0]), 3.0)
    t.record(np.array([2.0, 1.0]), 1.0)
    assert list(t.rows()) == [(0, 1.0, 2.0, 3.0), (1, 2.0, 1.0, 1.0)]
    assert t.best_index == 1
