"""Backward bound propagation over computation graphs."""

from types import SimpleNamespace

import numpy as np
import pytest

from nlbab import backward_bound, compute_intermediate_bounds, evaluate
from nlbab.boundprop import (
    Box,
    LinearForm,
    Split,
    backward_to_node,
    concretize,
    node_interval_forms,
)

from conftest import (
    chain_1d,
    forward_values,
    make_graph,
    make_spec,
    random_problem,
    sample_rows_min,
)


def root_box(g, spec):
    box, _ = compute_intermediate_bounds(g, spec)
    return box


class TestConcretize:
    def test_matches_hand_computation(self):
        lf = LinearForm(np.array([[2.0, -1.0]]), np.array([0.5]))
        x0 = np.array([1.0, 3.0])
        eps = np.array([0.5, 0.25])
        # min = 2*1 - 1*3 + 0.5 - (2*0.5 + 1*0.25)
        np.testing.assert_allclose(concretize(lf, x0, eps, lower=True), [-1.75])
        np.testing.assert_allclose(concretize(lf, x0, eps, lower=False), [0.75])

    def test_scalar_eps_broadcasts(self):
        lf = LinearForm(np.array([[1.0, 1.0]]), np.array([0.0]))
        out = concretize(lf, np.zeros(2), 0.1, lower=True)
        np.testing.assert_allclose(out, [-0.2])


class TestAffineExactness:
    def test_pure_affine_graph_is_exact(self, rng):
        W1 = rng.standard_normal((3, 2))
        b1 = rng.standard_normal(3)
        W2 = rng.standard_normal((1, 3))
        b2 = rng.standard_normal(1)
        g = make_graph({
            "input_dim": 2,
            "nodes": [
                {"id": "x", "op": "input"},
                {"id": "h", "op": "affine", "inputs": ["x"],
                 "weight": W1.tolist(), "bias": b1.tolist()},
                {"id": "out", "op": "affine", "inputs": ["h"],
                 "weight": W2.tolist(), "bias": b2.tolist()},
            ],
            "output": "out",
        })
        spec = make_spec([0.3, -0.2], 0.4, [[1.0]], [0.1])
        rows, form = backward_bound(g, spec, root_box(g, spec))
        C = W2 @ W1
        exact = (C @ spec.center + W2 @ b1 + b2 + 0.1
                 - np.abs(C) @ np.full(2, 0.4))
        np.testing.assert_allclose(rows, exact, rtol=1e-12)
        np.testing.assert_allclose(form.A, C, rtol=1e-12)

    def test_divert_at_input_withholds_every_coefficient(self, rng):
        g, spec = random_problem(rng)
        box = root_box(g, spec)
        rows, form = backward_bound(g, spec, box)
        M, rest = backward_to_node(g, spec, box, g.input_id)
        np.testing.assert_allclose(M, form.A, rtol=1e-12, atol=1e-12)
        np.testing.assert_allclose(rest.c, form.c, rtol=1e-12, atol=1e-12)
        np.testing.assert_array_equal(rest.A, np.zeros_like(rest.A))


class TestSoundness:
    def test_bound_below_sampled_min(self, rng):
        for _ in range(40):
            g, spec = random_problem(rng)
            rows, _ = backward_bound(g, spec, root_box(g, spec))
            emp = sample_rows_min(g, spec, 2000, rng)
            assert rows.min() <= emp + 1e-9

    def test_every_stored_interval_contains_node_values(self, rng):
        for _ in range(15):
            g, spec = random_problem(rng)
            box, _ = compute_intermediate_bounds(g, spec)
            xs = rng.uniform(spec.lower(), spec.upper(), size=(500, g.input_dim))
            vals = forward_values(g, xs)
            for node in g.nodes:
                if box.has(node.id):
                    l, u = box.interval(node.id)
                    v = vals[node.id]
                    assert np.all(v >= l - 1e-9), f"node {node.id} below interval"
                    assert np.all(v <= u + 1e-9), f"node {node.id} above interval"

    def test_multi_row_bounds_are_per_row(self, rng):
        g, _ = random_problem(rng, max_dim=2)
        ow = g.width(g.output)
        spec = make_spec([0.0] * g.input_dim, 0.3,
                         np.vstack([np.eye(ow), -np.eye(ow)]).tolist(),
                         [0.0] * (2 * ow))
        rows, _ = backward_bound(g, spec, root_box(g, spec))
        assert rows.shape == (2 * ow,)
        xs = rng.uniform(spec.lower(), spec.upper(), size=(3000, g.input_dim))
        vals = evaluate(g, xs) @ spec.S.T
        assert np.all(rows <= vals.min(axis=0) + 1e-9)


class TestSplitTerms:
    def make_sin_problem(self):
        g = chain_1d(["sin"], [3.0], [0.0])
        spec = make_spec([0.0], 1.0, [[1.0]], [0.0])
        return g, spec

    def sampled_min_on_side(self, g, spec, split, n, rng):
        xs = rng.uniform(spec.lower(), spec.upper(), size=(n, 1))
        z = 3.0 * xs[:, 0]
        keep = z >= split.point if split.upper_branch else z <= split.point
        vals = evaluate(g, xs[keep]) @ spec.S.T + spec.t
        return float(vals.min())

    @pytest.mark.parametrize("upper_branch", [False, True])
    def test_penalized_bound_sound_on_kept_side(self, upper_branch, rng):
        g, spec = self.make_sin_problem()
        box = root_box(g, spec)
        split = Split("a0", 0, upper_branch, 0.4)
        for beta in (0.0, 0.3, 1.7):
            domain = SimpleNamespace(alphas=None, splits=[split],
                                     betas=[np.full(1, beta)])
            rows, _ = backward_bound(g, spec, box, domain)
            emp = self.sampled_min_on_side(g, spec, split, 4000, rng)
            assert rows.min() <= emp + 1e-9

    def test_zero_beta_matches_plain_pass(self):
        g, spec = self.make_sin_problem()
        box = root_box(g, spec)
        split = Split("a0", 0, False, 0.4)
        domain = SimpleNamespace(alphas=None, splits=[split],
                                 betas=[np.zeros(1)])
        plain, _ = backward_bound(g, spec, box)
        penalized, _ = backward_bound(g, spec, box, domain)
        np.testing.assert_allclose(penalized, plain, rtol=1e-12)

    def test_trace_records_splits_and_nonlinearities(self):
        g, spec = self.make_sin_problem()
        box = root_box(g, spec)
        split = Split("a0", 0, True, -0.2)
        domain = SimpleNamespace(alphas=None, splits=[split],
                                 betas=[np.full(1, 0.5)])
        rows, _, trace = backward_bound(g, spec, box, domain, want_trace=True)
        assert "n0" in trace.nonlinear
        assert len(trace.splits) == 1
        assert trace.splits[0].split == split
        assert trace.input_form is not None


class TestIntermediateBounds:
    def test_overrides_intersect_stored_intervals(self, rng):
        g, spec = random_problem(rng)
        base, _ = compute_intermediate_bounds(g, spec)
        nid = g.branchable_nodes()[0]
        l, u = base.interval(nid)
        mid = 0.5 * (l[0] + u[0])
        narrowed = base.replaced(nid, 0, mid, u[0])
        domain = SimpleNamespace(overrides={n: narrowed.interval(n)
                                            for n in narrowed.lower})
        tight, _ = compute_intermediate_bounds(g, spec, domain)
        tl, tu = tight.interval(nid)
        assert tl[0] >= mid - 1e-12
        assert tu[0] <= u[0] + 1e-12
        for n in base.lower:
            bl, bu = base.interval(n)
            nl, nu = tight.interval(n)
            assert np.all(nl >= bl - 1e-9)
            assert np.all(nu <= bu + 1e-9)

    def test_branchable_nodes_feed_nonlinearities(self, rng):
        g, spec = random_problem(rng)
        box, shortcuts = compute_intermediate_bounds(g, spec)
        for nid in g.branchable_nodes():
            assert box.has(nid)
            assert nid in shortcuts.forms
            consumers = g.consumers.get(nid, ())
            from nlbab.graph import NONLINEAR_OPS
            assert any(g.node(c).op in NONLINEAR_OPS for c in consumers)

    def test_node_forms_bound_node_values(self, rng):
        g, spec = random_problem(rng)
        box, _ = compute_intermediate_bounds(g, spec)
        nid = g.branchable_nodes()[-1]
        forms = node_interval_forms(g, nid, box)
        xs = rng.uniform(spec.lower(), spec.upper(), size=(200, g.input_dim))
        target = forward_values(g, xs)[nid]
        lo = xs @ forms.lower.A.T + forms.lower.c
        up = xs @ forms.upper.A.T + forms.upper.c
        assert np.all(lo <= target + 1e-9)
        assert np.all(up >= target - 1e-9)


class TestBox:
    def test_replaced_changes_single_neuron(self):
        box = Box()
        box.set("a", np.array([0.0, 1.0]), np.array([2.0, 3.0]))
        box.set("b", np.array([-1.0]), np.array([1.0]))
        out = box.replaced("a", 1, 1.5, 2.0)
        np.testing.assert_array_equal(out.lower["a"], [0.0, 1.5])
        np.testing.assert_array_equal(out.upper["a"], [2.0, 2.0])
        np.testing.assert_array_equal(box.lower["a"], [0.0, 1.0])
        assert out.lower["b"] is box.lower["b"]

    def test_interval_missing_node_raises(self):
        with pytest.raises(KeyError):
            Box().interval("nope")
