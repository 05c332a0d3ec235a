"""Reference oracles: sampling, dense grids, quadrature."""

import numpy as np
import pytest

from nlbab import (
    OracleConfig,
    evaluate,
    grid_min_1d,
    sampled_min,
    tightness_loss,
    trapezoid_loss,
)

from conftest import chain_1d, make_graph, make_spec, random_problem


class TestSampledMin:
    def test_linear_model_hits_corner(self):
        # min of 2x - y over the box is at a corner, which is enumerated
        g = make_graph({"input_dim": 2, "nodes": [
            {"id": "x", "op": "input"},
            {"id": "y", "op": "affine", "inputs": ["x"],
             "weight": [[2.0, -1.0]], "bias": [0.0]},
        ], "output": "y"})
        spec = make_spec([0.0, 0.0], 1.0, [[1.0]], [0.0])
        assert sampled_min(g, spec, samples=0) == -3.0

    def test_center_always_included(self):
        g = chain_1d(["square"], [1.0], [0.0])
        spec = make_spec([0.0], 1.0, [[-1.0]], [0.0])
        # -x^2 attains its max at the center; min is at the corners
        assert sampled_min(g, spec, samples=0) == -1.0

    def test_seed_determinism(self, rng):
        g, spec = random_problem(rng)
        a = sampled_min(g, spec, OracleConfig(samples=2000, seed=9))
        b = sampled_min(g, spec, OracleConfig(samples=2000, seed=9))
        assert a == b

    def test_more_samples_never_increase(self, rng):
        g, spec = random_problem(rng)
        coarse = sampled_min(g, spec, samples=100)
        fine = sampled_min(g, spec, samples=20000)
        assert fine <= coarse + 1e-15

    def test_upper_bounds_true_minimum(self):
        g = chain_1d(["sin"], [3.0], [0.0])
        spec = make_spec([0.0], 1.0, [[1.0]], [0.0])
        est = sampled_min(g, spec, samples=5000)
        assert est >= -1.0 - 1e-12
        assert est <= -1.0 + 1e-3

    def test_rejects_negative_samples(self, rng):
        g, spec = random_problem(rng)
        with pytest.raises(ValueError):
            sampled_min(g, spec, samples=-1)


class TestGridMin1d:
    def test_matches_closed_form_sine(self):
        # min of sin(3x) on |x| <= 1 is exactly -1 (at x = -pi/6 etc.)
        g = chain_1d(["sin"], [3.0], [0.0])
        spec = make_spec([0.0], 1.0, [[1.0]], [0.0])
        got = grid_min_1d(g, spec)
        assert abs(got - (-1.0)) < 1e-12

    def test_quadratic_vertex_refined_to_machine_precision(self):
        # (x - 0.123456)^2 has its min strictly between grid points
        g = chain_1d(["square"], [1.0], [-0.123456])
        spec = make_spec([0.0], 1.0, [[1.0]], [0.0])
        got = grid_min_1d(g, spec, config=OracleConfig(grid_resolution=1001))
        assert abs(got) < 1e-12

    def test_respects_custom_interval(self):
        g = chain_1d(["sin"], [1.0], [0.0])
        spec = make_spec([0.0], 3.0, [[1.0]], [0.0])
        got = grid_min_1d(g, spec, interval=(0.0, 1.0))
        assert abs(got - 0.0) < 1e-12

    def test_rejects_multidimensional_input(self):
        g = make_graph({"input_dim": 2, "nodes": [
            {"id": "x", "op": "input"},
            {"id": "y", "op": "affine", "inputs": ["x"],
             "weight": [[1.0, 1.0]], "bias": [0.0]},
        ], "output": "y"})
        spec = make_spec([0.0, 0.0], 1.0, [[1.0]], [0.0])
        with pytest.raises(ValueError):
            grid_min_1d(g, spec)

    def test_rejects_empty_interval(self):
        g = chain_1d(["sin"], [1.0], [0.0])
        spec = make_spec([0.0], 1.0, [[1.0]], [0.0])
        with pytest.raises(ValueError):
            grid_min_1d(g, spec, interval=(1.0, 1.0))

    def test_bound_below_every_grid_sample(self):
        g = chain_1d(["sin", "gelu"], [2.0, 1.5], [0.5, -0.2])
        spec = make_spec([0.0], 1.0, [[1.0]], [0.0])
        got = grid_min_1d(g, spec)
        xs = np.linspace(-1, 1, 4001)[:, None]
        assert got <= float(evaluate(g, xs).min()) + 1e-12


class TestTrapezoidLoss:
    def test_converges_quadratically(self):
        # error should shrink about 16x when panels quadruple
        exact = tightness_loss("sin", -2.0, 2.5, 0.3)
        e1 = abs(trapezoid_loss("sin", -2.0, 2.5, 0.3, panels=250) - exact)
        e2 = abs(trapezoid_loss("sin", -2.0, 2.5, 0.3, panels=1000) - exact)
        assert e2 < e1 / 8.0

    def test_composite_kind_sums_parts(self):
        both = trapezoid_loss("sigmoid+tanh", -1.0, 2.0, 0.5, panels=500)
        s = trapezoid_loss("sigmoid", -1.0, 2.0, 0.5, panels=500)
        t = trapezoid_loss("tanh", -1.0, 2.0, 0.5, panels=500)
        np.testing.assert_allclose(both, s + t, rtol=1e-12)

    def test_relu_split_at_kink_has_zero_loss(self):
        # splitting exactly at 0 makes both relu pieces exact
        assert trapezoid_loss("relu", -1.0, 2.0, 0.0, panels=100) == 0.0

    def test_mul_matches_hand_quadrature(self, rng):
        got = trapezoid_loss("mul", -1.0, 2.0, 0.5, panels=400)
        assert got > 0.0
        finer = trapezoid_loss("mul", -1.0, 2.0, 0.5, panels=800)
        assert abs(got - finer) < 1e-3 * (1.0 + abs(finer))

    def test_rejects_point_outside_interval(self):
        with pytest.raises(ValueError):
            trapezoid_loss("sin", 0.0, 1.0, 1.0)
        with pytest.raises(ValueError):
            trapezoid_loss("sin", 0.0, 1.0, 0.5, panels=0)


class TestOracleConfig:
    def test_validation(self):
        OracleConfig().validate()
        with pytest.raises(ValueError):
            OracleConfig(samples=-1).validate()
        with pytest.raises(ValueError):
            OracleConfig(grid_resolution=2).validate()
