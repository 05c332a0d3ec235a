"""Branch selection: split-point tables, candidate scoring, heuristics."""

import numpy as np
import pytest

from nlbab import (
    AlphaStore,
    BetaStore,
    BranchDecision,
    BranchPointTable,
    Domain,
    UnbranchableDomain,
    bbps_score,
    babsr_score,
    build_table,
    compute_intermediate_bounds,
    load_table,
    optimize_branch_point,
    optimize_parameters,
    query_table,
    save_table,
    select_branch,
    signature_of,
    tightness_loss,
    trapezoid_loss,
)
from nlbab.branching import ScoreContext, _candidates

from conftest import (
    chain_1d,
    forward_values,
    make_graph,
    make_spec,
    random_problem,
)

KINDS = ["relu", "sigmoid", "tanh", "sin", "gelu", "square", "mul"]


def make_domain(g, spec, iters=0):
    box, shortcuts = compute_intermediate_bounds(g, spec)
    dom = Domain(box=box, alphas=AlphaStore(), beta_store=BetaStore(),
                 bound_rows=np.full(spec.rows, -np.inf), bound=-np.inf)
    rows, _ = optimize_parameters(g, spec, dom, iters=iters)
    dom.bound_rows = rows
    dom.bound = float(rows.min())
    return dom, shortcuts


def two_sin_problem():
    g = make_graph({
        "input_dim": 1,
        "nodes": [
            {"id": "x", "op": "input"},
            {"id": "z", "op": "affine", "inputs": ["x"],
             "weight": [[3.0], [2.0]], "bias": [0.0, 1.0]},
            {"id": "s", "op": "sin", "inputs": ["z"]},
            {"id": "out", "op": "affine", "inputs": ["s"],
             "weight": [[1.0, 1.0]], "bias": [0.0]},
        ],
        "output": "out",
    })
    spec = make_spec([0.0], 1.0, [[1.0]], [1.9])
    return g, spec


class TestTightnessLoss:
    @pytest.mark.parametrize("kind", KINDS)
    def test_matches_quadrature(self, kind, rng):
        for _ in range(12):
            a, b = np.sort(rng.uniform(-4.0, 4.0, size=2))
            if b - a < 0.1:
                continue
            p = rng.uniform(a + 0.02, b - 0.02)
            fast = tightness_loss(kind, a, b, p)
            slow = trapezoid_loss(kind, a, b, p, panels=4000)
            assert abs(fast - slow) <= 1e-4 * (1.0 + abs(slow))

    def test_composite_kind_sums_parts(self, rng):
        a, b, p = -1.3, 2.1, 0.4
        combined = tightness_loss("sin+relu", a, b, p)
        parts = tightness_loss("sin", a, b, p) + tightness_loss("relu", a, b, p)
        np.testing.assert_allclose(combined, parts, rtol=1e-12)

    def test_vectorizes_over_points(self):
        pts = np.linspace(-0.9, 0.9, 7)
        vec = tightness_loss("tanh", -1.0, 1.0, pts)
        scalar = [tightness_loss("tanh", -1.0, 1.0, float(p)) for p in pts]
        np.testing.assert_allclose(vec, scalar, rtol=1e-12)

    def test_nonnegative(self, rng):
        for kind in KINDS:
            l, u = np.sort(rng.uniform(-5, 5, 2))
            p = rng.uniform(l, u)
            assert tightness_loss(kind, l, u, p) >= 0.0


class TestOptimizeBranchPoint:
    @pytest.mark.parametrize("kind", KINDS)
    def test_never_worse_than_midpoint(self, kind, rng):
        for _ in range(10):
            l, u = np.sort(rng.uniform(-4.0, 4.0, size=2))
            if u - l < 0.2:
                continue
            p = optimize_branch_point(kind, float(l), float(u))
            assert l < p < u
            lp = tightness_loss(kind, l, u, p)
            lm = tightness_loss(kind, l, u, 0.5 * (l + u))
            assert lp <= lm + 1e-12

    def test_beats_midpoint_on_lopsided_sine(self):
        # [0.2, 5.2] is mostly one arch plus part of the trough; the best
        # cut sits well off center
        p = optimize_branch_point("sin", 0.2, 5.2)
        gain = (tightness_loss("sin", 0.2, 5.2, 2.7)
                - tightness_loss("sin", 0.2, 5.2, p))
        assert abs(p - 2.7) > 0.05
        assert gain > 0.05

    def test_rejects_empty_interval(self):
        with pytest.raises(ValueError):
            optimize_branch_point("sin", 1.0, 1.0)


class TestTable:
    def small_table(self):
        return build_table(["sin", "relu+sin"], lu_range=(-2.0, 2.0), step=0.5)

    def test_signatures_are_sorted(self):
        table = self.small_table()
        assert set(table.entries) == {"sin", "relu+sin"}
        assert table.entries["relu+sin"].consumers == ["relu", "sin"]

    def test_cells_match_direct_optimization(self):
        table = self.small_table()
        e = table.entries["sin"]
        grid = e.grid
        p = e.points[0, len(grid) - 1]
        assert p == optimize_branch_point("sin", float(grid[0]), float(grid[-1]))

    def test_invalid_cells_are_nan(self):
        e = self.small_table().entries["sin"]
        i, j = np.tril_indices(e.points.shape[0])
        assert np.all(np.isnan(e.points[i, j]))
        assert not np.any(np.isnan(e.points[j, i][i < j]))

    def test_save_load_round_trip(self, tmp_path):
        table = self.small_table()
        path = tmp_path / "table.json"
        save_table(table, str(path))
        loaded = load_table(str(path))
        assert set(loaded.entries) == set(table.entries)
        for sig, e in table.entries.items():
            le = loaded.entries[sig]
            np.testing.assert_array_equal(le.points, e.points)
            assert le.lu_range == e.lu_range
            assert le.step == e.step

    def test_rebuild_is_byte_identical(self, tmp_path):
        p1, p2 = tmp_path / "a.json", tmp_path / "b.json"
        save_table(self.small_table(), str(p1))
        save_table(self.small_table(), str(p2))
        assert p1.read_bytes() == p2.read_bytes()

    def test_query_exact_cell(self):
        table = self.small_table()
        p = query_table(table, "sin", -2.0, 2.0)
        assert p == table.entries["sin"].points[0, 8]

    def test_query_falls_back_to_midpoint(self):
        table = self.small_table()
        assert query_table(table, "gelu", -1.0, 1.0) == 0.0
        assert query_table(table, "sin", -7.0, 9.0) == 1.0
        assert query_table(BranchPointTable(), "sin", 0.0, 1.0) == 0.5

    def test_rejects_bad_grid(self):
        with pytest.raises(ValueError):
            build_table(["sin"], lu_range=(1.0, -1.0))
        with pytest.raises(ValueError):
            build_table(["sin"], step=0.0)


class TestSignature:
    def test_multiple_consumers_sorted(self):
        g = make_graph({
            "input_dim": 1,
            "nodes": [
                {"id": "x", "op": "input"},
                {"id": "a", "op": "affine", "inputs": ["x"],
                 "weight": [[1.0]], "bias": [0.0]},
                {"id": "s", "op": "sin", "inputs": ["a"]},
                {"id": "r", "op": "relu", "inputs": ["a"]},
                {"id": "out", "op": "mul", "inputs": ["s", "r"]},
            ],
            "output": "out",
        })
        assert signature_of(g, "a") == "relu+sin"
        assert signature_of(g, "s") == "mul"


class TestScores:
    def score_is_sound(self, score_fn, rng, trials=25):
        for _ in range(trials):
            g, spec = random_problem(rng)
            dom, shortcuts = make_domain(g, spec)
            cands = _candidates(g, dom.box)
            if not cands:
                continue
            nid, j = cands[int(rng.integers(len(cands)))]
            l, u = dom.box.interval(nid)
            p = float(0.5 * (l[j] + u[j]))
            s1, s2 = score_fn(g, spec, dom, shortcuts, (nid, j), p)
            xs = rng.uniform(spec.lower(), spec.upper(),
                             size=(4000, g.input_dim))
            vals = forward_values(g, xs)
            z = vals[nid][:, j]
            out = vals[g.output] @ spec.S.T + spec.t
            worst = out.min(axis=1)
            low_side = worst[z <= p]
            high_side = worst[z >= p]
            if low_side.size:
                assert s1 <= low_side.min() + 1e-9
            if high_side.size:
                assert s2 <= high_side.min() + 1e-9

    def test_bbps_scores_are_sound_lower_bounds(self, rng):
        self.score_is_sound(bbps_score, rng)

    def test_babsr_scores_are_finite_and_ordered(self, rng):
        # the baseline score drops a signed term, so it only ranks
        # candidates; it carries no soundness promise of its own
        for _ in range(10):
            g, spec = random_problem(rng)
            dom, shortcuts = make_domain(g, spec)
            cands = _candidates(g, dom.box)
            if not cands:
                continue
            nid, j = cands[0]
            l, u = dom.box.interval(nid)
            p = float(0.5 * (l[j] + u[j]))
            s1, s2 = babsr_score(g, spec, dom, shortcuts, (nid, j), p)
            assert np.isfinite(s1) and np.isfinite(s2)

    def test_reference_decomposition_is_sound(self, rng):
        # interval substitution decouples the node from the rest of the
        # pass, so it can land on either side of the stored linear bound;
        # what it must never do is exceed the true row values
        for _ in range(10):
            g, spec = random_problem(rng)
            dom, shortcuts = make_domain(g, spec)
            ctx = ScoreContext(g, spec, dom, shortcuts)
            xs = rng.uniform(spec.lower(), spec.upper(),
                             size=(3000, g.input_dim))
            out = forward_values(g, xs)[g.output] @ spec.S.T + spec.t
            true_rows = out.min(axis=0)
            for nid in g.branchable_nodes():
                _, _, v_ref, _, _ = ctx._ref_data(nid)
                assert np.all(v_ref <= true_rows + 1e-9)

    def test_rejects_point_outside_interval(self, rng):
        g, spec = two_sin_problem()
        dom, shortcuts = make_domain(g, spec)
        with pytest.raises(ValueError):
            bbps_score(g, spec, dom, shortcuts, ("z", 0), 99.0)

    def test_scoring_prefers_informative_neuron(self):
        # z0 spans three periods of sin while z1 is narrower: cutting z0
        # must look better to the scorer than cutting z1
        g, spec = two_sin_problem()
        dom, shortcuts = make_domain(g, spec, iters=10)
        decision = select_branch(g, spec, dom, shortcuts, heuristic="bbps")
        assert decision.node_id == "z"
        assert decision.neuron == 0


class TestSelectBranch:
    def test_decision_point_is_interior(self, rng):
        for _ in range(10):
            g, spec = random_problem(rng)
            dom, shortcuts = make_domain(g, spec)
            try:
                d = select_branch(g, spec, dom, shortcuts)
            except UnbranchableDomain:
                continue
            l, u = dom.box.interval(d.node_id)
            assert l[d.neuron] < d.point < u[d.neuron]

    def test_deterministic_per_domain(self, rng):
        g, spec = random_problem(rng)
        dom, shortcuts = make_domain(g, spec)
        d1 = select_branch(g, spec, dom, shortcuts, heuristic="bbps")
        d2 = select_branch(g, spec, dom, shortcuts, heuristic="bbps")
        assert d1 == d2

    def test_random_heuristic_follows_rng(self, rng):
        g, spec = two_sin_problem()
        dom, shortcuts = make_domain(g, spec)
        d1 = select_branch(g, spec, dom, shortcuts, heuristic="random",
                           rng=np.random.default_rng(7))
        d2 = select_branch(g, spec, dom, shortcuts, heuristic="random",
                           rng=np.random.default_rng(7))
        assert d1 == d2

    def test_point_box_is_unbranchable(self):
        g, _ = two_sin_problem()
        spec = make_spec([0.25], 0.0, [[1.0]], [1.9])
        dom, shortcuts = make_domain(g, spec)
        with pytest.raises(UnbranchableDomain):
            select_branch(g, spec, dom, shortcuts)

    def test_unknown_heuristic_rejected(self):
        g, spec = two_sin_problem()
        dom, shortcuts = make_domain(g, spec)
        with pytest.raises(ValueError):
            select_branch(g, spec, dom, shortcuts, heuristic="widest")

    def test_table_moves_the_point(self):
        g, spec = two_sin_problem()
        dom, shortcuts = make_domain(g, spec)
        table = build_table(["sin"], lu_range=(-4.0, 4.0), step=0.25)
        d_mid = select_branch(g, spec, dom, shortcuts)
        d_tab = select_branch(g, spec, dom, shortcuts, branch_points=table)
        assert d_mid.node_id == d_tab.node_id
        l, u = dom.box.interval(d_tab.node_id)
        j = d_tab.neuron
        assert l[j] < d_tab.point < u[j]
        assert d_tab.point == query_table(table, "sin", float(l[j]), float(u[j]))
